//! Variant dispatch, the optimization loop, metrics logging and resumable
//! checkpoints.

mod adam;
mod checkpoint;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{clip_global_norm, Adam};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};

use crate::data::{ConditionStats, Corpus, Record};
use crate::error::{Error, Result};
use crate::eval::inter_decoder_kld;
use crate::losses::{
    k_anneal, kld_regularizer, recon_loss_md, total_loss, BetaController, BetaSchedule, LossConfig,
};
use crate::model::{sample_latents, Batch, Binding, LatentMode, Model, ModelConfig};
use crate::rng;
use crate::tape::{Graph, Var};

/// The seven model variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Controlvae,
    SdDifCol,
    Md,
    MdCol,
    MdDif,
    MdDifCol,
}

/// Which reconstruction objective a variant optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Mean of the per-evaluation cross-entropies.
    Individual,
    /// `alpha * collaborative + (1 - alpha) * mean individual`.
    Interpolated,
}

/// Resolved training recipe of a variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariantSpec {
    /// Decoders in the model.
    pub decoders: usize,
    /// Decoder evaluations per example; each gets a latent slot.
    pub draws: usize,
    pub latent_mode: LatentMode,
    pub objective: Objective,
    pub schedule: BetaSchedule,
    /// Independent prior latents per decoder at generation time.
    pub independent_prior: bool,
}

/// Latent draws through the single decoder of `sd_dif_col`.
pub const SD_DRAWS: usize = 3;

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Base,
        Variant::Controlvae,
        Variant::SdDifCol,
        Variant::Md,
        Variant::MdCol,
        Variant::MdDif,
        Variant::MdDifCol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Controlvae => "controlvae",
            Variant::SdDifCol => "sd_dif_col",
            Variant::Md => "md",
            Variant::MdCol => "md_col",
            Variant::MdDif => "md_dif",
            Variant::MdDifCol => "md_dif_col",
        }
    }

    pub fn parse(s: &str) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Recipe with `k` decoders for the multi-decoder variants.
    pub fn spec(self, k: usize) -> VariantSpec {
        use LatentMode::*;
        use Objective::*;
        let (decoders, draws, latent_mode, objective) = match self {
            Variant::Base | Variant::Controlvae => (1, 1, Shared, Individual),
            Variant::SdDifCol => (1, SD_DRAWS, PerDecoder, Interpolated),
            Variant::Md => (k, k, Shared, Individual),
            Variant::MdCol => (k, k, Shared, Interpolated),
            Variant::MdDif => (k, k, PerDecoder, Individual),
            Variant::MdDifCol => (k, k, PerDecoder, Interpolated),
        };
        VariantSpec {
            decoders,
            draws,
            latent_mode,
            objective,
            schedule: if self == Variant::Base {
                BetaSchedule::KAnneal
            } else {
                BetaSchedule::Controller
            },
            independent_prior: latent_mode == PerDecoder && decoders > 1,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub variant: Variant,
    /// Decoder count for the multi-decoder variants.
    pub k: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip_norm: f64,
    pub seed: u64,
    /// Write a checkpoint every this many steps.
    pub checkpoint_every: Option<u64>,
    /// Stop early after this many optimizer steps.
    pub max_steps: Option<u64>,
    /// Training molecules used for the per-epoch inter-decoder KLD.
    pub inter_kld_sample: usize,
    /// Architecture of the single-decoder reference; decoders are narrowed
    /// from it to match its parameter count.
    pub model: ModelConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::MdDifCol,
            k: 3,
            epochs: 100,
            batch_size: 128,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            clip_norm: 5.0,
            seed: 0,
            checkpoint_every: None,
            max_steps: None,
            inter_kld_sample: 256,
            model: ModelConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn spec(&self) -> VariantSpec {
        self.variant.spec(self.k)
    }

    pub fn model_config(&self) -> ModelConfig {
        self.model.matched(self.spec().decoders)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be at least 1".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        self.loss.validate()?;
        self.model_config().validate()
    }

    pub fn steps_per_epoch(&self, n: usize) -> u64 {
        n.div_ceil(self.batch_size) as u64
    }

    pub fn total_steps(&self, n: usize) -> u64 {
        let full = self.epochs as u64 * self.steps_per_epoch(n);
        self.max_steps.map_or(full, |m| m.min(full))
    }
}

/// Losses and β of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub step: u64,
    pub epoch: usize,
    /// Ensemble (collaborative) reconstruction loss.
    pub l_recon: f64,
    pub l_reg: f64,
    pub beta: f64,
    /// Reconstruction objective actually optimized.
    pub objective: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub step: u64,
    pub epoch: usize,
    pub l_recon: f64,
    pub l_reg: f64,
    pub beta: f64,
    /// Controller's smoothed KLD at the end of the epoch.
    pub kld_ema: Option<f64>,
    pub inter_kld: Option<f64>,
}

/// Running sums for the epoch in progress.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochAccumulator {
    pub recon: f64,
    pub reg: f64,
    pub steps: u64,
}

/// Everything needed to continue a run exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub model: Model,
    pub adam: Adam,
    pub controller: BetaController,
    pub stats: ConditionStats,
    pub step: u64,
    pub epoch: usize,
    /// Position in `perm` of the next example.
    pub cursor: usize,
    pub perm: Vec<usize>,
    pub data_rng: ChaCha8Rng,
    pub latent_rng: ChaCha8Rng,
    pub acc: EpochAccumulator,
    pub history: Vec<EpochMetrics>,
}

impl TrainState {
    pub fn new(config: TrainConfig, stats: ConditionStats) -> Result<TrainState> {
        config.validate()?;
        stats.validate()?;
        let model = Model::init(config.model_config(), config.seed)?;
        let adam = Adam::new(model.params(), config.lr, config.beta1, config.beta2, config.eps);
        Ok(TrainState {
            controller: BetaController::new(&config.loss),
            data_rng: rng::substream(config.seed, rng::DATA),
            latent_rng: rng::substream(config.seed, rng::LATENT),
            model,
            adam,
            stats,
            step: 0,
            epoch: 0,
            cursor: 0,
            perm: Vec::new(),
            acc: EpochAccumulator::default(),
            history: Vec::new(),
            config,
        })
    }
}

/// Graph of one forward pass with its loss terms.
pub struct Forward {
    pub graph: Graph,
    pub binding: Binding,
    pub objective: Var,
    pub kld: Var,
    /// Collaborative loss over all evaluations.
    pub l_recon: f64,
}

/// Encoder, latent slots and every decoder evaluation of `spec` on `batch`.
pub fn forward(
    model: &Model,
    spec: VariantSpec,
    alpha: f64,
    batch: &Batch,
    latent_rng: &mut ChaCha8Rng,
    trainable: bool,
) -> Result<Forward> {
    let mut g = Graph::new();
    let p = model.bind(&mut g, trainable);
    let enc = model.encode(&mut g, &p, batch);
    let zs = sample_latents(&mut g, enc, spec.latent_mode, spec.draws, latent_rng);
    let y = g.constant(batch.cond_tensor());
    let inputs = batch.decoder_inputs();
    let targets = batch.targets();
    let mut logits = Vec::with_capacity(spec.draws);
    for (i, &z) in zs.iter().enumerate() {
        let k = if spec.decoders == 1 { 0 } else { i };
        logits.push(model.decode_logits(&mut g, &p, k, z, y, &inputs, batch.width - 1)?);
    }
    let a = match spec.objective {
        Objective::Individual => 0.0,
        Objective::Interpolated => alpha,
    };
    let md = recon_loss_md(&mut g, &logits, &targets, batch.size, a);
    let kld = kld_regularizer(&mut g, enc.mu, enc.log_sigma);
    let l_recon = g.scalar(md.collaborative);
    Ok(Forward {
        graph: g,
        binding: p,
        objective: md.objective,
        kld,
        l_recon,
    })
}

/// Mean `(L_recon, L_reg)` over `records` without updating anything, with
/// latents drawn from a stream of `seed`.
pub fn measure_losses(
    model: &Model,
    spec: VariantSpec,
    alpha: f64,
    records: &[Record],
    stats: &ConditionStats,
    batch_size: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    if records.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut latent = rng::substream(seed, "latent/measure");
    let (mut recon, mut reg) = (0.0, 0.0);
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&Record> = chunk.iter().collect();
        let batch = Batch::from_records(&refs, stats)?;
        let f = forward(model, spec, alpha, &batch, &mut latent, false)?;
        recon += f.l_recon * chunk.len() as f64;
        reg += f.graph.scalar(f.kld) * chunk.len() as f64;
    }
    let n = records.len() as f64;
    Ok((recon / n, reg / n))
}

/// Output locations of a run.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Result<RunFiles> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(RunFiles { dir })
    }

    pub fn log(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.bin")
    }
}

pub const LOG_HEADER: &str = "step,epoch,variant,l_recon,l_reg,beta,inter_kld";

fn append_log(path: &Path, variant: Variant, m: &EpochMetrics) -> Result<()> {
    let fresh = std::fs::metadata(path).map(|md| md.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = String::new();
    if fresh {
        line.push_str(LOG_HEADER);
        line.push('\n');
    }
    let ik = m.inter_kld.map(|v| v.to_string()).unwrap_or_default();
    line.push_str(&format!(
        "{},{},{},{},{},{},{}\n",
        m.step, m.epoch, variant, m.l_recon, m.l_reg, m.beta, ik
    ));
    f.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Batches sorted by length within pools of this many batches.
pub const BUCKET_POOL: usize = 8;

/// Shuffled example order for one epoch. Each pool of consecutive shuffled
/// examples is sorted by token length before being cut into batches, and
/// the full batches are shuffled again, which keeps padding low. A short
/// remainder batch always comes last.
pub fn epoch_order(corpus: &Corpus, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..corpus.len()).collect();
    perm.shuffle(rng);
    let len = |i: &usize| corpus.records[*i].tokens.len();
    let mut batches: Vec<Vec<usize>> = Vec::new();
    for pool in perm.chunks_mut(batch_size * BUCKET_POOL) {
        pool.sort_by_key(len);
        batches.extend(pool.chunks(batch_size).map(<[usize]>::to_vec));
    }
    let tail = batches.pop_if(|b| b.len() < batch_size);
    batches.shuffle(rng);
    batches.extend(tail);
    batches.concat()
}

/// A training run over one corpus.
pub struct Trainer {
    pub state: TrainState,
    corpus: Corpus,
    kld_sample: Corpus,
    files: Option<RunFiles>,
}

impl Trainer {
    /// New run; condition statistics are fitted on `corpus`.
    pub fn new(config: TrainConfig, corpus: Corpus) -> Result<Trainer> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let stats = ConditionStats::from_corpus(&corpus)?;
        let state = TrainState::new(config, stats)?;
        Ok(Trainer::from_state(state, corpus))
    }

    /// Continues `state` on the corpus it was started with.
    pub fn from_state(state: TrainState, corpus: Corpus) -> Trainer {
        let kld_sample = corpus.head(state.config.inter_kld_sample.max(1));
        Trainer {
            state,
            corpus,
            kld_sample,
            files: None,
        }
    }

    pub fn resume(path: &Path, corpus: Corpus) -> Result<Trainer> {
        let state = load_checkpoint(path)?;
        Ok(Trainer::from_state(state, corpus))
    }

    /// Log and checkpoint under `files` from now on.
    pub fn with_files(mut self, files: RunFiles) -> Self {
        self.files = Some(files);
        self
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn total_steps(&self) -> u64 {
        self.state.config.total_steps(self.corpus.len())
    }

    pub fn is_done(&self) -> bool {
        self.state.epoch >= self.state.config.epochs || self.state.step >= self.total_steps()
    }

    fn anneal_steps(&self) -> usize {
        let total = self.state.config.epochs as u64 * self.state.config.steps_per_epoch(self.corpus.len());
        self.state
            .config
            .loss
            .anneal_steps
            .unwrap_or((total as f64 * 0.1).round() as usize)
    }

    fn next_batch(&mut self) -> Result<Batch> {
        let n = self.corpus.len();
        let st = &mut self.state;
        if st.cursor == 0 {
            st.perm = epoch_order(&self.corpus, st.config.batch_size, &mut st.data_rng);
        }
        let end = (st.cursor + st.config.batch_size).min(n);
        let refs: Vec<&Record> = st.perm[st.cursor..end]
            .iter()
            .map(|&i| &self.corpus.records[i])
            .collect();
        st.cursor = end;
        Batch::from_records(&refs, &st.stats)
    }

    fn dump_nonfinite(&self, detail: &str) -> String {
        let Some(files) = &self.files else {
            return detail.to_string();
        };
        let path = files.dir.join(format!("nonfinite_step{}.json", self.state.step));
        let body = serde_json::json!({
            "step": self.state.step,
            "epoch": self.state.epoch,
            "detail": detail,
            "controller": self.state.controller,
        });
        match std::fs::write(&path, body.to_string()) {
            Ok(()) => format!("{detail} (dump: {})", path.display()),
            Err(_) => detail.to_string(),
        }
    }

    /// One optimizer update on the next batch of the shuffled epoch.
    pub fn train_step(&mut self) -> Result<StepStats> {
        let batch = self.next_batch()?;
        let spec = self.state.config.spec();
        let alpha = self.state.config.loss.alpha;
        let anneal = self.anneal_steps();
        let st = &mut self.state;
        let mut f = forward(&st.model, spec, alpha, &batch, &mut st.latent_rng, true)?;
        let l_reg = f.graph.scalar(f.kld);
        let objective = f.graph.scalar(f.objective);
        if !(objective.is_finite() && l_reg.is_finite()) {
            let detail = format!("objective={objective} l_reg={l_reg} l_recon={}", f.l_recon);
            let step = self.state.step;
            return Err(Error::NonFiniteLoss {
                step,
                detail: self.dump_nonfinite(&detail),
            });
        }
        let beta = match spec.schedule {
            BetaSchedule::KAnneal => k_anneal(st.step as usize, anneal),
            BetaSchedule::Controller => st.controller.step_beta(l_reg),
        };
        let total = total_loss(&mut f.graph, f.objective, f.kld, beta);
        let mut g = f.graph.backward(total);
        let mut grads: Vec<Vec<f64>> = f
            .binding
            .vars()
            .iter()
            .map(|&v| g.take(v).unwrap_or_default())
            .collect();
        let grad_norm = clip_global_norm(&mut grads, st.config.clip_norm);
        if !grad_norm.is_finite() {
            let detail = format!("gradient norm {grad_norm}");
            let step = self.state.step;
            return Err(Error::NonFiniteLoss {
                step,
                detail: self.dump_nonfinite(&detail),
            });
        }
        let st = &mut self.state;
        st.adam.update(st.model.params_mut(), &grads);
        st.step += 1;
        st.acc.recon += f.l_recon;
        st.acc.reg += l_reg;
        st.acc.steps += 1;
        let stats = StepStats {
            step: st.step,
            epoch: st.epoch,
            l_recon: f.l_recon,
            l_reg,
            beta,
            objective,
            grad_norm,
        };
        if st.cursor >= self.corpus.len() {
            self.close_epoch(beta)?;
        }
        if let (Some(every), Some(files)) = (self.state.config.checkpoint_every, &self.files) {
            if every > 0 && self.state.step.is_multiple_of(every) {
                save_checkpoint(&self.state, &files.checkpoint())?;
            }
        }
        Ok(stats)
    }

    fn close_epoch(&mut self, beta: f64) -> Result<()> {
        let st = &mut self.state;
        let n = st.acc.steps.max(1) as f64;
        let inter_kld = if st.model.config().k >= 2 {
            Some(inter_decoder_kld(
                &st.model,
                &self.kld_sample,
                &st.stats,
                st.config.batch_size,
            )?)
        } else {
            None
        };
        let m = EpochMetrics {
            step: st.step,
            epoch: st.epoch,
            l_recon: st.acc.recon / n,
            l_reg: st.acc.reg / n,
            beta,
            kld_ema: st.controller.ema,
            inter_kld,
        };
        log::info!(
            "epoch {} step {}: l_recon {:.4} l_reg {:.4} beta {:.5}",
            m.epoch,
            m.step,
            m.l_recon,
            m.l_reg,
            m.beta
        );
        st.acc = EpochAccumulator::default();
        st.epoch += 1;
        st.cursor = 0;
        if let Some(files) = &self.files {
            append_log(&files.log(), st.config.variant, &m)?;
        }
        st.history.push(m);
        Ok(())
    }

    /// Trains until the configured epochs or step cap are exhausted, then
    /// writes a final checkpoint when files are attached. A step cap that
    /// lands mid-epoch leaves the partial epoch to the checkpoint.
    pub fn fit(&mut self) -> Result<&[EpochMetrics]> {
        while !self.is_done() {
            self.train_step()?;
        }
        if let Some(files) = &self.files {
            save_checkpoint(&self.state, &files.checkpoint())?;
        }
        Ok(&self.state.history)
    }
}

/// Convenience wrapper: a fresh run of `config` on `corpus`.
pub fn fit(config: TrainConfig, corpus: Corpus, files: Option<RunFiles>) -> Result<TrainState> {
    let mut t = Trainer::new(config, corpus)?;
    if let Some(f) = files {
        t = t.with_files(f);
    }
    t.fit()?;
    Ok(t.state)
}
