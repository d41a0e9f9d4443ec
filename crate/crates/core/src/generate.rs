//! Ensemble decoding from the prior and teacher-forced reconstruction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{sample_prior, Batch, Model};
use crate::smiles::{detokenize, TokenSeq, BOS, EOS, PAD};
use crate::tape::{Graph, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeRule {
    Greedy,
    Multinomial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleSpace {
    /// Softmax of the averaged logits.
    PreSoftmax,
    /// Average of the per-decoder softmaxes.
    PostSoftmax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Maximum emitted symbols, excluding BOS/EOS.
    pub max_len: usize,
    pub decode_rule: DecodeRule,
    pub temperature: f64,
    pub ensemble_space: EnsembleSpace,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            max_len: 100,
            decode_rule: DecodeRule::Multinomial,
            temperature: 1.0,
            ensemble_space: EnsembleSpace::PreSoftmax,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be positive".into()));
        }
        Ok(())
    }
}

fn softmax_into(row: &[f64], scale: f64, out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = ((v - max) * scale).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

/// Mean of equal-length rows as `r_0 + sum_k (r_k - r_0) / K`, which is
/// exact when every row is identical.
fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let k = rows.len() as f64;
    let mut out = rows[0].clone();
    for (i, o) in out.iter_mut().enumerate() {
        let base = rows[0][i];
        let spread: f64 = rows[1..].iter().map(|r| r[i] - base).sum();
        *o = base + spread / k;
    }
    out
}

/// Next-token distribution from `K` decoders' logits.
pub fn ensemble_step(logit_sets: &[&[f64]], space: EnsembleSpace, temperature: f64) -> Vec<f64> {
    assert!(!logit_sets.is_empty(), "at least one decoder");
    let v = logit_sets[0].len();
    let inv_t = 1.0 / temperature;
    let mut out = vec![0.0; v];
    match space {
        EnsembleSpace::PreSoftmax => {
            let rows: Vec<Vec<f64>> = logit_sets.iter().map(|l| l.to_vec()).collect();
            softmax_into(&mean_rows(&rows), inv_t, &mut out);
        }
        EnsembleSpace::PostSoftmax => {
            let rows: Vec<Vec<f64>> = logit_sets
                .iter()
                .map(|l| {
                    let mut p = vec![0.0; v];
                    softmax_into(l, inv_t, &mut p);
                    p
                })
                .collect();
            out = mean_rows(&rows);
        }
    }
    out
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

fn draw<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver of mass past the end
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

/// Picks a token from `p` under `rule`.
pub fn choose<R: Rng>(p: &[f64], rule: DecodeRule, rng: &mut R) -> usize {
    match rule {
        DecodeRule::Greedy => argmax(p),
        DecodeRule::Multinomial => draw(p, rng),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub smiles: String,
    pub tokens: TokenSeq,
    /// False when decoding stopped at `max_len` without emitting EOS.
    pub terminated: bool,
}

/// One generation per condition row. `cond` holds normalized conditions;
/// `independent` draws a separate prior latent per decoder slot. Latents
/// are drawn first, in row order, then tokens.
pub fn generate<R: Rng>(
    model: &Model,
    cond: &[[f64; 3]],
    cfg: &SamplerConfig,
    independent: bool,
    rng: &mut R,
) -> Result<Vec<Generated>> {
    cfg.validate()?;
    let mc = model.config();
    let n = cond.len();
    let zs = sample_prior(n, mc.d_z, mc.k, independent, rng);
    let mut seqs: Vec<Vec<usize>> = vec![vec![BOS]; n];
    let mut done = vec![false; n];
    let mut active: Vec<usize> = (0..n).collect();
    let vocab = mc.vocab_size;
    for _ in 0..=cfg.max_len {
        if active.is_empty() {
            break;
        }
        let t = seqs[active[0]].len();
        let mut g = Graph::new();
        let p = model.bind(&mut g, false);
        let y = g.constant(Tensor::from_vec(
            active.len(),
            3,
            active.iter().flat_map(|&r| cond[r]).collect(),
        ));
        let inputs: Vec<usize> = active.iter().flat_map(|&r| seqs[r].iter().copied()).collect();
        let mut last_rows: Vec<Vec<f64>> = Vec::with_capacity(mc.k);
        for (k, zk) in zs.iter().enumerate() {
            let z = g.constant(Tensor::from_vec(
                active.len(),
                mc.d_z,
                active.iter().flat_map(|&r| zk.row(r).iter().copied()).collect(),
            ));
            let l = model.decode_logits(&mut g, &p, k, z, y, &inputs, t)?;
            let lv = g.value(l);
            let mut rows = Vec::with_capacity(active.len() * vocab);
            for a in 0..active.len() {
                rows.extend_from_slice(lv.row(a * t + t - 1));
            }
            last_rows.push(rows);
        }
        let mut still = Vec::with_capacity(active.len());
        for (a, &r) in active.iter().enumerate() {
            let sets: Vec<&[f64]> = last_rows
                .iter()
                .map(|rows| &rows[a * vocab..(a + 1) * vocab])
                .collect();
            let dist = ensemble_step(&sets, cfg.ensemble_space, cfg.temperature);
            let tok = choose(&dist, cfg.decode_rule, rng);
            if tok == EOS {
                done[r] = true;
                continue;
            }
            if t > cfg.max_len {
                continue;
            }
            seqs[r].push(tok);
            still.push(r);
        }
        active = still;
    }
    Ok(seqs
        .into_iter()
        .zip(done)
        .map(|(ids, terminated)| {
            let body: Vec<usize> = ids[1..]
                .iter()
                .copied()
                .filter(|&t| t != BOS && t != PAD)
                .collect();
            let tokens = TokenSeq::unframed(body);
            Generated {
                smiles: detokenize(&tokens),
                tokens,
                terminated,
            }
        })
        .collect())
}

/// Outcome of teacher-forced reconstruction for one molecule.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    /// Predicted token per target position (including the final EOS).
    pub predicted: Vec<usize>,
    pub correct: usize,
    pub total: usize,
    pub exact_match: bool,
}

/// Per-decoder softmax at every target position, `z = mu`. Returns one
/// `(batch * (width - 1)) x vocab` tensor per decoder.
pub fn teacher_forced_distributions(model: &Model, batch: &Batch, temperature: f64) -> Result<Vec<Tensor>> {
    let logits = teacher_forced_logits(model, batch)?;
    Ok(logits
        .into_iter()
        .map(|l| {
            let mut out = Tensor::zeros(l.rows, l.cols);
            for r in 0..l.rows {
                softmax_into(l.row(r), 1.0 / temperature, &mut out.data[r * l.cols..(r + 1) * l.cols]);
            }
            out
        })
        .collect())
}

fn teacher_forced_logits(model: &Model, batch: &Batch) -> Result<Vec<Tensor>> {
    teacher_forced_logits_at(model, batch, None)
}

fn teacher_forced_logits_at(model: &Model, batch: &Batch, z: Option<&Tensor>) -> Result<Vec<Tensor>> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let z = match z {
        Some(z) => g.constant(z.clone()),
        None => model.encode(&mut g, &p, batch).mu,
    };
    let y = g.constant(batch.cond_tensor());
    let inputs = batch.decoder_inputs();
    let mut out = Vec::with_capacity(model.config().k);
    for k in 0..model.config().k {
        let l = model.decode_logits(&mut g, &p, k, z, y, &inputs, batch.width - 1)?;
        out.push(g.value(l).clone());
    }
    Ok(out)
}

/// Argmax of the ensemble distribution from the true prefix at every
/// position, with `z = mu` for all decoders.
pub fn reconstruct_teacher_forced(
    model: &Model,
    batch: &Batch,
    space: EnsembleSpace,
) -> Result<Vec<Reconstruction>> {
    reconstruct_at(model, batch, None, space)
}

/// [`reconstruct_teacher_forced`] with the latent fixed to `z` instead of
/// the posterior mean.
pub fn reconstruct_from_latent(
    model: &Model,
    batch: &Batch,
    z: &Tensor,
    space: EnsembleSpace,
) -> Result<Vec<Reconstruction>> {
    reconstruct_at(model, batch, Some(z), space)
}

fn reconstruct_at(
    model: &Model,
    batch: &Batch,
    z: Option<&Tensor>,
    space: EnsembleSpace,
) -> Result<Vec<Reconstruction>> {
    let logits = teacher_forced_logits_at(model, batch, z)?;
    let targets = batch.targets();
    let t = batch.width - 1;
    let mut out = Vec::with_capacity(batch.size);
    for b in 0..batch.size {
        let mut rec = Reconstruction {
            predicted: Vec::new(),
            correct: 0,
            total: 0,
            exact_match: true,
        };
        for pos in 0..t {
            let r = b * t + pos;
            let Some(want) = targets[r] else { continue };
            let sets: Vec<&[f64]> = logits.iter().map(|l| l.row(r)).collect();
            let got = argmax(&ensemble_step(&sets, space, 1.0));
            rec.predicted.push(got);
            rec.total += 1;
            if got == want {
                rec.correct += 1;
            } else {
                rec.exact_match = false;
            }
        }
        out.push(rec);
    }
    Ok(out)
}
