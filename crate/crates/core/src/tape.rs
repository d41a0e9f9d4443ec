//! Reverse-mode automatic differentiation over row-major f64 matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value.
//! [`Graph::backward`] walks the nodes in reverse creation order, so the
//! recording order is already a topological order. Transformer-specific
//! kernels (attention, layer norm, log-softmax gather) are fused nodes with
//! hand-written adjoints.

use serde::{Deserialize, Serialize};

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "tensor data length");
        Tensor { rows, cols, data }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::from_vec(1, 1, vec![v])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Shape and masking for fused multi-head self-attention over a padded batch.
#[derive(Debug, Clone)]
pub struct AttentionSpec {
    pub batch: usize,
    pub seq: usize,
    pub heads: usize,
    pub causal: bool,
    /// `batch * seq` flags; `false` keys are never attended to.
    pub key_valid: Option<Vec<bool>>,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Attention {
        q: Var,
        k: Var,
        v: Var,
        spec: AttentionSpec,
        probs: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    RepeatRows {
        x: Var,
        times: usize,
    },
    ConcatCols(Vec<Var>),
    MaskedMeanPool {
        x: Var,
        seq: usize,
        valid: Vec<bool>,
        counts: Vec<usize>,
    },
    TokenLogProb {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Vec<f64>,
    },
    LogMeanExp {
        inputs: Vec<Var>,
        weights: Vec<f64>,
    },
    Sum(Var),
    GaussianKld {
        mu: Var,
        log_sigma: Var,
    },
}

fn slot(grads: &mut [Option<Vec<f64>>], len: usize, v: Var) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Computation record. Values are computed eagerly as nodes are added.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that required them.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    pub fn take(&mut self, v: Var) -> Option<Vec<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

/// `c = op(a) * op(b) + beta * c` where `op(a)` is `m x k` and
/// `op(b)` is `k x n`; transposed operands are read through strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: strides describe in-bounds row-major layouts checked above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Strided block product used inside attention heads.
#[allow(clippy::too_many_arguments)]
unsafe fn gemm_strided(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: *const f64,
    (rsa, csa): (isize, isize),
    b: *const f64,
    (rsb, csb): (isize, isize),
    beta: f64,
    c: *mut f64,
    (rsc, csc): (isize, isize),
) {
    matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const LN_EPS: f64 = 1e-5;

/// `tanh(u)` through a single `exp`.
fn tanh_fast(u: f64) -> f64 {
    2.0 / (1.0 + (-2.0 * u).exp()) - 1.0
}

fn gelu(x: f64) -> f64 {
    x / (1.0 + (-2.0 * GELU_C * (x + 0.044715 * x * x * x)).exp())
}

fn gelu_grad(x: f64) -> f64 {
    let t = tanh_fast(GELU_C * (x + 0.044715 * x * x * x));
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let t = self.value(v);
        assert_eq!(t.len(), 1, "scalar() on a non-scalar node");
        t.data[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows, t.cols)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.shape(a);
        let (k2, n) = self.shape(b);
        assert_eq!(k, k2, "matmul inner dims {m}x{k} * {k2}x{n}");
        let mut out = Tensor::zeros(m, n);
        gemm(
            m,
            k,
            n,
            &self.value(a).data,
            false,
            &self.value(b).data,
            false,
            &mut out.data,
            0.0,
        );
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::MatMul(a, b), ng)
    }

    /// `x[n x m] + b[1 x m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Var {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(b), (1, m), "bias shape");
        let bias = &self.value(b).data;
        let mut out = self.value(x).clone();
        for r in 0..n {
            for (o, bv) in out.data[r * m..(r + 1) * m].iter_mut().zip(bias) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push(out, Op::AddBias(x, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o += v;
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Add(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let mut out = self.value(a).clone();
        for (o, v) in out.data.iter_mut().zip(&self.value(b).data) {
            *o *= v;
        }
        let ng = self.ng(a) || self.ng(b);
        self.push(out, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v *= s);
        let ng = self.ng(x);
        self.push(out, Op::Scale(x, s), ng)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = v.exp());
        let ng = self.ng(x);
        self.push(out, Op::Exp(x), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        out.data.iter_mut().for_each(|v| *v = gelu(*v));
        let ng = self.ng(x);
        self.push(out, Op::Gelu(x), ng)
    }

    /// Row-wise layer normalization with learned gain and bias (`1 x cols`).
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let (n, m) = self.shape(x);
        assert_eq!(self.shape(gain), (1, m));
        assert_eq!(self.shape(bias), (1, m));
        let xv = &self.value(x).data;
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut out = Tensor::zeros(n, m);
        let mut xhat = vec![0.0; n * m];
        let mut rstd = vec![0.0; n];
        for r in 0..n {
            let row = &xv[r * m..(r + 1) * m];
            let mean = row.iter().sum::<f64>() / m as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..m {
                let h = (row[c] - mean) * rs;
                xhat[r * m + c] = h;
                out.data[r * m + c] = h * g[c] + b[c];
            }
        }
        let ng = self.ng(x) || self.ng(gain) || self.ng(bias);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            ng,
        )
    }

    /// Scaled dot-product attention. `q`, `k`, `v` are `(batch*seq) x d`
    /// with heads laid out as contiguous column blocks of width `d / heads`.
    pub fn attention(&mut self, q: Var, k: Var, v: Var, spec: AttentionSpec) -> Var {
        let (n, d) = self.shape(q);
        assert_eq!(self.shape(k), (n, d));
        assert_eq!(self.shape(v), (n, d));
        assert_eq!(n, spec.batch * spec.seq, "attention rows");
        assert_eq!(d % spec.heads, 0, "head split");
        let (t, h, dh) = (spec.seq, spec.heads, d / spec.heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut probs = vec![0.0; spec.batch * h * t * t];
        let mut out = Tensor::zeros(n, d);
        let qd = &self.value(q).data;
        let kd = &self.value(k).data;
        let vd = &self.value(v).data;
        let ds = d as isize;
        for b in 0..spec.batch {
            for hh in 0..h {
                let base = b * t * d + hh * dh;
                let p = &mut probs[(b * h + hh) * t * t..(b * h + hh + 1) * t * t];
                // S = Q K^T * scale
                unsafe {
                    gemm_strided(
                        t,
                        dh,
                        t,
                        scale,
                        qd.as_ptr().add(base),
                        (ds, 1),
                        kd.as_ptr().add(base),
                        (1, ds),
                        0.0,
                        p.as_mut_ptr(),
                        (t as isize, 1),
                    );
                }
                for i in 0..t {
                    let row = &mut p[i * t..(i + 1) * t];
                    let allowed = |j: usize| {
                        !(spec.causal && j > i)
                            && spec.key_valid.as_ref().is_none_or(|kv| kv[b * t + j])
                    };
                    let mut max = f64::NEG_INFINITY;
                    for (j, &s) in row.iter().enumerate() {
                        if allowed(j) && s > max {
                            max = s;
                        }
                    }
                    if max == f64::NEG_INFINITY {
                        row.iter_mut().for_each(|s| *s = 0.0);
                        continue;
                    }
                    let mut sum = 0.0;
                    for (j, s) in row.iter_mut().enumerate() {
                        if allowed(j) {
                            *s = (*s - max).exp();
                            sum += *s;
                        } else {
                            *s = 0.0;
                        }
                    }
                    row.iter_mut().for_each(|s| *s /= sum);
                }
                // O = P V
                unsafe {
                    gemm_strided(
                        t,
                        t,
                        dh,
                        1.0,
                        p.as_ptr(),
                        (t as isize, 1),
                        vd.as_ptr().add(base),
                        (ds, 1),
                        0.0,
                        out.data.as_mut_ptr().add(base),
                        (ds, 1),
                    );
                }
            }
        }
        let ng = self.ng(q) || self.ng(k) || self.ng(v);
        self.push(
            out,
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            },
            ng,
        )
    }

    /// Row lookup: output row `i` is `table[ids[i]]`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, m) = self.shape(table);
        let tv = &self.value(table).data;
        let mut out = Tensor::zeros(ids.len(), m);
        for (i, &id) in ids.iter().enumerate() {
            assert!(id < rows, "embedding id {id} out of range {rows}");
            out.data[i * m..(i + 1) * m].copy_from_slice(&tv[id * m..(id + 1) * m]);
        }
        let ng = self.ng(table);
        self.push(
            out,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            ng,
        )
    }

    /// Each input row repeated `times` times consecutively.
    pub fn repeat_rows(&mut self, x: Var, times: usize) -> Var {
        let (n, m) = self.shape(x);
        let xv = &self.value(x).data;
        let mut out = Tensor::zeros(n * times, m);
        for r in 0..n {
            for t in 0..times {
                let o = (r * times + t) * m;
                out.data[o..o + m].copy_from_slice(&xv[r * m..(r + 1) * m]);
            }
        }
        let ng = self.ng(x);
        self.push(out, Op::RepeatRows { x, times }, ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let n = self.shape(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.shape(p).0, n, "concat rows");
                self.shape(p).1
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(n, total);
        let mut off = 0;
        for (&p, &w) in parts.iter().zip(&widths) {
            let pv = &self.value(p).data;
            for r in 0..n {
                out.data[r * total + off..r * total + off + w]
                    .copy_from_slice(&pv[r * w..(r + 1) * w]);
            }
            off += w;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Mean over valid positions of each length-`seq` block of rows.
    pub fn masked_mean_pool(&mut self, x: Var, seq: usize, valid: &[bool]) -> Var {
        let (n, m) = self.shape(x);
        assert_eq!(n, valid.len());
        assert_eq!(n % seq, 0);
        let batch = n / seq;
        let xv = &self.value(x).data;
        let mut out = Tensor::zeros(batch, m);
        let mut counts = vec![0usize; batch];
        for b in 0..batch {
            for t in 0..seq {
                let r = b * seq + t;
                if valid[r] {
                    counts[b] += 1;
                    for c in 0..m {
                        out.data[b * m + c] += xv[r * m + c];
                    }
                }
            }
            let cnt = counts[b].max(1) as f64;
            out.data[b * m..(b + 1) * m]
                .iter_mut()
                .for_each(|v| *v /= cnt);
        }
        let ng = self.ng(x);
        self.push(
            out,
            Op::MaskedMeanPool {
                x,
                seq,
                valid: valid.to_vec(),
                counts,
            },
            ng,
        )
    }

    /// `log softmax(logits[i])[targets[i]]` as an `n x 1` column; rows with
    /// no target yield 0 and receive no gradient.
    pub fn token_log_prob(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let (n, m) = self.shape(logits);
        assert_eq!(n, targets.len(), "one target per logit row");
        let lv = &self.value(logits).data;
        let mut probs = vec![0.0; n * m];
        let mut out = Tensor::zeros(n, 1);
        for r in 0..n {
            let Some(tgt) = targets[r] else { continue };
            let row = &lv[r * m..(r + 1) * m];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let lse = max + sum.ln();
            for c in 0..m {
                probs[r * m + c] = (row[c] - lse).exp();
            }
            out.data[r] = row[tgt] - lse;
        }
        let ng = self.ng(logits);
        self.push(
            out,
            Op::TokenLogProb {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            ng,
        )
    }

    /// Element-wise `log((1/K) sum_k exp(x_k))` over equally shaped inputs.
    pub fn log_mean_exp(&mut self, inputs: &[Var]) -> Var {
        let kk = inputs.len();
        assert!(kk >= 1);
        let shape = self.shape(inputs[0]);
        let n = shape.0 * shape.1;
        let mut out = Tensor::zeros(shape.0, shape.1);
        let mut weights = vec![0.0; kk * n];
        let ln_k = (kk as f64).ln();
        for i in 0..n {
            let max = inputs
                .iter()
                .map(|&v| self.value(v).data[i])
                .fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (k, &v) in inputs.iter().enumerate() {
                let e = (self.value(v).data[i] - max).exp();
                weights[k * n + i] = e;
                sum += e;
            }
            for k in 0..kk {
                weights[k * n + i] /= sum;
            }
            out.data[i] = max + sum.ln() - ln_k;
        }
        let ng = inputs.iter().any(|&v| self.ng(v));
        self.push(
            out,
            Op::LogMeanExp {
                inputs: inputs.to_vec(),
                weights,
            },
            ng,
        )
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        let ng = self.ng(x);
        self.push(Tensor::scalar(s), Op::Sum(x), ng)
    }

    /// Batch mean of `KL(N(mu, sigma^2) || N(0, I))`, rows are examples.
    pub fn gaussian_kld(&mut self, mu: Var, log_sigma: Var) -> Var {
        let (b, _) = self.shape(mu);
        assert_eq!(self.shape(mu), self.shape(log_sigma));
        let total: f64 = self
            .value(mu)
            .data
            .iter()
            .zip(&self.value(log_sigma).data)
            .map(|(m, ls)| m * m + (2.0 * ls).exp() - 2.0 * ls - 1.0)
            .sum();
        let ng = self.ng(mu) || self.ng(log_sigma);
        self.push(
            Tensor::scalar(0.5 * total / b as f64),
            Op::GaussianKld { mu, log_sigma },
            ng,
        )
    }

    /// Gradients of the scalar `loss` with respect to every node that needs them.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a scalar");
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(node, &g, &mut grads);
        }
        Gradients { grads }
    }

    fn backprop_node(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let want = |v: Var| nodes[v.0].needs_grad;
        macro_rules! acc {
            ($v:expr) => {
                slot(grads, nodes[$v.0].value.len(), $v)
            };
        }
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = (nodes[a.0].value.rows, nodes[a.0].value.cols);
                let n = nodes[b.0].value.cols;
                if want(*a) {
                    let da = acc!(*a);
                    gemm(m, n, k, g, false, &nodes[b.0].value.data, true, da, 1.0);
                }
                if want(*b) {
                    let db = acc!(*b);
                    gemm(k, m, n, &nodes[a.0].value.data, true, g, false, db, 1.0);
                }
            }
            Op::AddBias(x, b) => {
                if want(*x) {
                    acc!(*x).iter_mut().zip(g).for_each(|(d, v)| *d += v);
                }
                if want(*b) {
                    let m = nodes[b.0].value.cols;
                    let db = acc!(*b);
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [a, b] {
                    if want(*v) {
                        acc!(*v).iter_mut().zip(g).for_each(|(d, gv)| *d += gv);
                    }
                }
            }
            Op::Mul(a, b) => {
                if want(*a) {
                    let bv = &nodes[b.0].value.data;
                    let da = acc!(*a);
                    for i in 0..g.len() {
                        da[i] += g[i] * bv[i];
                    }
                }
                if want(*b) {
                    let av = &nodes[a.0].value.data;
                    let db = acc!(*b);
                    for i in 0..g.len() {
                        db[i] += g[i] * av[i];
                    }
                }
            }
            Op::Scale(x, s) => {
                if want(*x) {
                    acc!(*x).iter_mut().zip(g).for_each(|(d, v)| *d += s * v);
                }
            }
            Op::Exp(x) => {
                if want(*x) {
                    let out = &node.value.data;
                    let dx = acc!(*x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * out[i];
                    }
                }
            }
            Op::Gelu(x) => {
                if want(*x) {
                    let xv = &nodes[x.0].value.data;
                    let dx = acc!(*x);
                    for i in 0..g.len() {
                        dx[i] += g[i] * gelu_grad(xv[i]);
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let m = nodes[x.0].value.cols;
                let gv = &nodes[gain.0].value.data;
                if want(*gain) {
                    let dg = acc!(*gain);
                    for (r, row) in g.chunks(m).enumerate() {
                        for c in 0..m {
                            dg[c] += row[c] * xhat[r * m + c];
                        }
                    }
                }
                if want(*bias) {
                    let db = acc!(*bias);
                    for row in g.chunks(m) {
                        db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                    }
                }
                if want(*x) {
                    let dx = acc!(*x);
                    let mut dxhat = vec![0.0; m];
                    for (r, row) in g.chunks(m).enumerate() {
                        let xh = &xhat[r * m..(r + 1) * m];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for c in 0..m {
                            dxhat[c] = row[c] * gv[c];
                            mean_d += dxhat[c];
                            mean_dx += dxhat[c] * xh[c];
                        }
                        mean_d /= m as f64;
                        mean_dx /= m as f64;
                        for c in 0..m {
                            dx[r * m + c] += rstd[r] * (dxhat[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                }
            }
            Op::Attention {
                q,
                k,
                v,
                spec,
                probs,
            } => self.attention_backward(*q, *k, *v, spec, probs, g, grads),
            Op::Embedding { table, ids } => {
                if want(*table) {
                    let m = nodes[table.0].value.cols;
                    let dt = acc!(*table);
                    for (i, &id) in ids.iter().enumerate() {
                        for c in 0..m {
                            dt[id * m + c] += g[i * m + c];
                        }
                    }
                }
            }
            Op::RepeatRows { x, times } => {
                if want(*x) {
                    let m = nodes[x.0].value.cols;
                    let dx = acc!(*x);
                    for (r, block) in g.chunks(m * times).enumerate() {
                        for row in block.chunks(m) {
                            for c in 0..m {
                                dx[r * m + c] += row[c];
                            }
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols;
                let mut off = 0;
                for p in parts {
                    let w = nodes[p.0].value.cols;
                    if want(*p) {
                        let dp = acc!(*p);
                        for (r, row) in g.chunks(total).enumerate() {
                            for c in 0..w {
                                dp[r * w + c] += row[off + c];
                            }
                        }
                    }
                    off += w;
                }
            }
            Op::MaskedMeanPool {
                x,
                seq,
                valid,
                counts,
            } => {
                if want(*x) {
                    let m = nodes[x.0].value.cols;
                    let dx = acc!(*x);
                    for (r, &ok) in valid.iter().enumerate() {
                        if !ok {
                            continue;
                        }
                        let b = r / seq;
                        let inv = 1.0 / counts[b].max(1) as f64;
                        for c in 0..m {
                            dx[r * m + c] += g[b * m + c] * inv;
                        }
                    }
                }
            }
            Op::TokenLogProb {
                logits,
                targets,
                probs,
            } => {
                if want(*logits) {
                    let m = nodes[logits.0].value.cols;
                    let dl = acc!(*logits);
                    for (r, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        for c in 0..m {
                            let ind = if c == t { 1.0 } else { 0.0 };
                            dl[r * m + c] += g[r] * (ind - probs[r * m + c]);
                        }
                    }
                }
            }
            Op::LogMeanExp { inputs, weights } => {
                let n = g.len();
                for (k, v) in inputs.iter().enumerate() {
                    if want(*v) {
                        let dv = acc!(*v);
                        for i in 0..n {
                            dv[i] += g[i] * weights[k * n + i];
                        }
                    }
                }
            }
            Op::Sum(x) => {
                if want(*x) {
                    acc!(*x).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::GaussianKld { mu, log_sigma } => {
                let b = nodes[mu.0].value.rows as f64;
                if want(*mu) {
                    let mv = &nodes[mu.0].value.data;
                    let dm = acc!(*mu);
                    for i in 0..mv.len() {
                        dm[i] += g[0] * mv[i] / b;
                    }
                }
                if want(*log_sigma) {
                    let lv = &nodes[log_sigma.0].value.data;
                    let dl = acc!(*log_sigma);
                    for i in 0..lv.len() {
                        dl[i] += g[0] * ((2.0 * lv[i]).exp() - 1.0) / b;
                    }
                }
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn attention_backward(
        &self,
        q: Var,
        k: Var,
        v: Var,
        spec: &AttentionSpec,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let nodes = &self.nodes;
        let (n, d) = (nodes[q.0].value.rows, nodes[q.0].value.cols);
        let (t, h) = (spec.seq, spec.heads);
        let dh = d / h;
        let scale = 1.0 / (dh as f64).sqrt();
        let ds = d as isize;
        let ts = t as isize;
        let mut dq = vec![0.0; n * d];
        let mut dk = vec![0.0; n * d];
        let mut dv = vec![0.0; n * d];
        let qd = &nodes[q.0].value.data;
        let kd = &nodes[k.0].value.data;
        let vd = &nodes[v.0].value.data;
        let mut dp = vec![0.0; t * t];
        for b in 0..spec.batch {
            for hh in 0..h {
                let base = b * t * d + hh * dh;
                let p = &probs[(b * h + hh) * t * t..(b * h + hh + 1) * t * t];
                unsafe {
                    // dP = dO V^T
                    gemm_strided(
                        t,
                        dh,
                        t,
                        1.0,
                        g.as_ptr().add(base),
                        (ds, 1),
                        vd.as_ptr().add(base),
                        (1, ds),
                        0.0,
                        dp.as_mut_ptr(),
                        (ts, 1),
                    );
                    // dV = P^T dO
                    gemm_strided(
                        t,
                        t,
                        dh,
                        1.0,
                        p.as_ptr(),
                        (1, ts),
                        g.as_ptr().add(base),
                        (ds, 1),
                        0.0,
                        dv.as_mut_ptr().add(base),
                        (ds, 1),
                    );
                }
                // dS = P * (dP - rowsum(dP * P))
                for i in 0..t {
                    let pr = &p[i * t..(i + 1) * t];
                    let dr = &mut dp[i * t..(i + 1) * t];
                    let dot: f64 = pr.iter().zip(dr.iter()).map(|(a, b)| a * b).sum();
                    for j in 0..t {
                        dr[j] = pr[j] * (dr[j] - dot);
                    }
                }
                unsafe {
                    // dQ = dS K * scale
                    gemm_strided(
                        t,
                        t,
                        dh,
                        scale,
                        dp.as_ptr(),
                        (ts, 1),
                        kd.as_ptr().add(base),
                        (ds, 1),
                        0.0,
                        dq.as_mut_ptr().add(base),
                        (ds, 1),
                    );
                    // dK = dS^T Q * scale
                    gemm_strided(
                        t,
                        t,
                        dh,
                        scale,
                        dp.as_ptr(),
                        (1, ts),
                        qd.as_ptr().add(base),
                        (ds, 1),
                        0.0,
                        dk.as_mut_ptr().add(base),
                        (ds, 1),
                    );
                }
            }
        }
        for (var, local) in [(q, dq), (k, dk), (v, dv)] {
            if nodes[var.0].needs_grad {
                match &mut grads[var.0] {
                    Some(acc) => acc.iter_mut().zip(&local).for_each(|(a, l)| *a += l),
                    slot @ None => *slot = Some(local),
                }
            }
        }
    }
}
