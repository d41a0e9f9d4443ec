//! Shared transformer encoder and `k` independent causal decoders.
//!
//! Every forward pass is recorded on a [`Graph`], so the same code serves
//! training (parameters bound as trainable leaves) and inference (bound as
//! constants). Conditions and latents are injected by concatenation with
//! the token embedding; the concatenated projection is stored as separate
//! per-input weight blocks, which is the same linear map.

mod config;
mod params;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use config::ModelConfig;
pub use params::ParamStore;

use crate::data::{ConditionStats, Record};
use crate::error::{Error, Result};
use crate::smiles::{pad_batch, TokenSeq, PAD};
use crate::tape::{AttentionSpec, Graph, Tensor, Var};
use params::{BlockIx, DecoderIx, EncoderIx, Layout};

/// How decoder slots receive latents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentMode {
    /// One reparameterized draw copied to every slot.
    Shared,
    /// An independent draw per slot.
    PerDecoder,
    /// `z = mu` everywhere.
    Deterministic,
}

/// Padded, framed token batch with its normalized conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// `size * width` ids, row-major.
    pub ids: Vec<usize>,
    pub size: usize,
    pub width: usize,
    pub cond: Vec<[f64; 3]>,
}

impl Batch {
    pub fn new(seqs: &[&TokenSeq], cond: Vec<[f64; 3]>) -> Result<Batch> {
        if seqs.is_empty() || seqs.len() != cond.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} sequences with {} conditions",
                seqs.len(),
                cond.len()
            )));
        }
        let (ids, width) = pad_batch(seqs);
        Ok(Batch {
            ids,
            size: seqs.len(),
            width,
            cond,
        })
    }

    /// Batch of corpus records with conditions normalized by `stats`.
    pub fn from_records(records: &[&Record], stats: &ConditionStats) -> Result<Batch> {
        let seqs: Vec<&TokenSeq> = records.iter().map(|r| &r.tokens).collect();
        let cond = records
            .iter()
            .map(|r| stats.normalize(&r.properties).0)
            .collect();
        Batch::new(&seqs, cond)
    }

    /// Tokens fed to the decoders: every row without its last position.
    pub fn decoder_inputs(&self) -> Vec<usize> {
        (0..self.size)
            .flat_map(|b| self.ids[b * self.width..(b + 1) * self.width - 1].iter().copied())
            .collect()
    }

    /// Next-token targets aligned with [`Batch::decoder_inputs`]; `None` at PAD.
    pub fn targets(&self) -> Vec<Option<usize>> {
        (0..self.size)
            .flat_map(|b| self.ids[b * self.width + 1..(b + 1) * self.width].iter())
            .map(|&t| (t != PAD).then_some(t))
            .collect()
    }

    pub fn cond_tensor(&self) -> Tensor {
        Tensor::from_vec(self.size, 3, self.cond.iter().flatten().copied().collect())
    }
}

/// Posterior parameters as graph nodes, `batch x d_z` each.
#[derive(Debug, Clone, Copy)]
pub struct EncoderVars {
    pub mu: Var,
    pub log_sigma: Var,
}

/// Posterior parameters as plain values.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub mu: Tensor,
    pub log_sigma: Tensor,
}

/// Model parameters bound into one graph, indexed like the store.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model::from_params(self.config.clone(), self.params.clone()).expect("consistent model")
    }
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("config", &self.config)
            .field("params", &self.params.scalar_count())
            .finish()
    }
}

fn sinusoid(rows: usize, seq: usize, d: usize) -> Tensor {
    let freq: Vec<f64> = (0..d)
        .map(|i| 10000f64.powf(-((i / 2 * 2) as f64) / d as f64))
        .collect();
    let mut block = Vec::with_capacity(seq * d);
    for p in 0..seq {
        for (i, f) in freq.iter().enumerate() {
            let a = p as f64 * f;
            block.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::from_vec(rows * seq, d, block.repeat(rows))
}

impl Model {
    /// Fresh parameters; the encoder and each decoder draw from their own
    /// substream of `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Model> {
        config.validate()?;
        let layout = params::layout(&config);
        let params = ParamStore::init(&layout.specs, seed);
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Model> {
        config.validate()?;
        let layout = params::layout(&config);
        params.check(&layout.specs)?;
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    /// Indices into the store of the parameters owned by decoder `k`.
    pub fn decoder_param_indices(&self, k: usize) -> Vec<usize> {
        (0..self.layout.specs.len())
            .filter(|&i| self.layout.specs[i].owner == k + 1)
            .collect()
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Binding {
        let vars = self
            .params
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Binding { vars }
    }

    fn block(&self, g: &mut Graph, p: &Binding, ix: &BlockIx, x: Var, spec: &AttentionSpec) -> Var {
        let v = &p.vars;
        let lin = |g: &mut Graph, x: Var, (w, b): (usize, usize)| {
            let h = g.matmul(x, v[w]);
            g.add_bias(h, v[b])
        };
        let h = g.layer_norm(x, v[ix.ln1.0], v[ix.ln1.1]);
        let q = lin(g, h, ix.wq);
        let k = lin(g, h, ix.wk);
        let vv = lin(g, h, ix.wv);
        let a = g.attention(q, k, vv, spec.clone());
        let o = lin(g, a, ix.wo);
        let x = g.add(x, o);
        let h = g.layer_norm(x, v[ix.ln2.0], v[ix.ln2.1]);
        let f = lin(g, h, ix.ff1);
        let f = g.gelu(f);
        let f = lin(g, f, ix.ff2);
        g.add(x, f)
    }

    /// Posterior `(mu, log_sigma)` for a batch, mean-pooled over non-PAD
    /// positions.
    pub fn encode(&self, g: &mut Graph, p: &Binding, batch: &Batch) -> EncoderVars {
        let ix: &EncoderIx = &self.layout.encoder;
        let v = &p.vars;
        let (b, t, e) = (batch.size, batch.width, self.config.d_model);
        let valid: Vec<bool> = batch.ids.iter().map(|&i| i != PAD).collect();
        let y = g.constant(batch.cond_tensor());
        let emb = g.embedding(v[ix.tok], &batch.ids);
        let h = g.matmul(emb, v[ix.in_tok]);
        let c = g.matmul(y, v[ix.in_cond]);
        let c = g.add_bias(c, v[ix.in_bias]);
        let c = g.repeat_rows(c, t);
        let h = g.add(h, c);
        let pos = g.constant(sinusoid(b, t, e));
        let mut x = g.add(h, pos);
        let spec = AttentionSpec {
            batch: b,
            seq: t,
            heads: self.config.n_heads,
            causal: false,
            key_valid: Some(valid.clone()),
        };
        for blk in &ix.blocks {
            x = self.block(g, p, blk, x, &spec);
        }
        let x = g.layer_norm(x, v[ix.ln.0], v[ix.ln.1]);
        let pooled = g.masked_mean_pool(x, t, &valid);
        let mu = g.matmul(pooled, v[ix.mu.0]);
        let mu = g.add_bias(mu, v[ix.mu.1]);
        let ls = g.matmul(pooled, v[ix.log_sigma.0]);
        let log_sigma = g.add_bias(ls, v[ix.log_sigma.1]);
        EncoderVars { mu, log_sigma }
    }

    /// Constant-bound encoder pass.
    pub fn encode_values(&self, batch: &Batch) -> EncoderOutput {
        let mut g = Graph::new();
        let p = self.bind(&mut g, false);
        let e = self.encode(&mut g, &p, batch);
        EncoderOutput {
            mu: g.value(e.mu).clone(),
            log_sigma: g.value(e.log_sigma).clone(),
        }
    }

    /// Next-token logits of decoder `k`, `(rows * seq) x vocab`, for the
    /// row-major `inputs` prefix. `z` and `y` have one row per sequence.
    #[allow(clippy::too_many_arguments)]
    pub fn decode_logits(
        &self,
        g: &mut Graph,
        p: &Binding,
        k: usize,
        z: Var,
        y: Var,
        inputs: &[usize],
        seq: usize,
    ) -> Result<Var> {
        if k >= self.config.k {
            return Err(Error::ShapeMismatch(format!(
                "decoder {k} of {}",
                self.config.k
            )));
        }
        let rows = g.shape(z).0;
        if seq == 0 || inputs.len() != rows * seq || g.shape(y).0 != rows {
            return Err(Error::ShapeMismatch(format!(
                "{} input ids for {rows} rows of length {seq}",
                inputs.len()
            )));
        }
        if g.shape(z).1 != self.config.d_z {
            return Err(Error::ShapeMismatch(format!(
                "latent width {} != {}",
                g.shape(z).1,
                self.config.d_z
            )));
        }
        let ix: &DecoderIx = &self.layout.decoders[k];
        let v = &p.vars;
        let d = self.config.dec_d_model;
        let emb = g.embedding(v[ix.tok], inputs);
        let h = g.matmul(emb, v[ix.in_tok]);
        let zc = g.matmul(z, v[ix.in_lat]);
        let yc = g.matmul(y, v[ix.in_cond]);
        let c = g.add(zc, yc);
        let c = g.add_bias(c, v[ix.in_bias]);
        let c = g.repeat_rows(c, seq);
        let h = g.add(h, c);
        let pos = g.constant(sinusoid(rows, seq, d));
        let mut x = g.add(h, pos);
        let spec = AttentionSpec {
            batch: rows,
            seq,
            heads: self.config.n_heads,
            causal: true,
            key_valid: None,
        };
        for blk in &ix.blocks {
            x = self.block(g, p, blk, x, &spec);
        }
        let x = g.layer_norm(x, v[ix.ln.0], v[ix.ln.1]);
        let l = g.matmul(x, v[ix.out.0]);
        Ok(g.add_bias(l, v[ix.out.1]))
    }
}

fn normal_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(rows, cols, data)
}

/// `k` latent slots `z = mu + exp(log_sigma) * eps`, differentiable in
/// `mu` and `log_sigma`. Noise is drawn row-major, one matrix per draw.
pub fn sample_latents<R: Rng>(
    g: &mut Graph,
    enc: EncoderVars,
    mode: LatentMode,
    k: usize,
    rng: &mut R,
) -> Vec<Var> {
    let (rows, d) = g.shape(enc.mu);
    let mut draw = |g: &mut Graph| {
        let eps = g.constant(normal_tensor(rows, d, rng));
        let sigma = g.exp(enc.log_sigma);
        let noise = g.mul(sigma, eps);
        g.add(enc.mu, noise)
    };
    match mode {
        LatentMode::Deterministic => vec![enc.mu; k],
        LatentMode::Shared => vec![draw(g); k],
        LatentMode::PerDecoder => (0..k).map(|_| draw(g)).collect(),
    }
}

/// `k` slots of prior noise `z ~ N(0, I)`, shared or independent per slot.
pub fn sample_prior<R: Rng>(rows: usize, d_z: usize, k: usize, independent: bool, rng: &mut R) -> Vec<Tensor> {
    if independent {
        (0..k).map(|_| normal_tensor(rows, d_z, rng)).collect()
    } else {
        vec![normal_tensor(rows, d_z, rng); k]
    }
}

#[cfg(test)]
mod tests;
