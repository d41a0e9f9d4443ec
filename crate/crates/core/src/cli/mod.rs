//! `mdvae` command-line interface.
//!
//! Every subcommand accepts `--config PATH` (flat `key = value` file) and
//! `--<key> VALUE` overrides. The effective settings are written next to
//! the outputs as `effective_config.txt`, which can be fed back through
//! `--config` to repeat a run.

mod settings;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

pub use settings::{parse_config, Key, Settings};

use crate::data::{condition_grid, load_corpus, ConditionStats, Corpus, Property, Regime};
use crate::error::{Error, Result};
use crate::eval::{
    generative_efficiency, inter_decoder_kld, label_generations, read_generations,
    reconstruction_success_rate, top1_condition_mae, write_generations, ConditionMetrics,
    GenerationRow, MetricsReport, OracleSet,
};
use crate::generate::{generate, DecodeRule, EnsembleSpace, SamplerConfig};
use crate::losses::LossConfig;
use crate::model::ModelConfig;
use crate::rng;
use crate::smiles::{check_validity_with, molecular_weight, tokenize, Vocabulary};
use crate::train::{load_checkpoint, measure_losses, RunFiles, TrainConfig, TrainState, Trainer, Variant};
use settings::key;

const TRAIN_KEYS: &[Key] = &[
    key("corpus", "", "training corpus CSV (smiles,molwt,logp,qed)"),
    key("out", "runs/train", "output directory"),
    key("seed", "0", "master seed"),
    key("resume", "", "checkpoint to continue from"),
    key("variant", "md_dif_col", "base|controlvae|sd_dif_col|md|md_col|md_dif|md_dif_col"),
    key("k", "3", "decoder count for multi-decoder variants"),
    key("epochs", "100", "training epochs"),
    key("batch_size", "128", "examples per step"),
    key("lr", "0.001", "Adam learning rate"),
    key("beta1", "0.9", "Adam beta1"),
    key("beta2", "0.999", "Adam beta2"),
    key("eps", "0.000001", "Adam epsilon"),
    key("clip_norm", "5", "global gradient-norm clip"),
    key("checkpoint_every", "", "checkpoint period in steps"),
    key("max_steps", "", "stop after this many steps"),
    key("inter_kld_sample", "256", "molecules used for the per-epoch decoder KLD"),
    key("alpha", "0.5", "collaborative weight of the interpolated loss"),
    key("kld_target", "15", "controller setpoint"),
    key("kp", "0.01", "controller proportional gain"),
    key("ki", "0.0001", "controller integral gain"),
    key("smoothing", "0.99", "EMA factor of the observed KLD"),
    key("anneal_steps", "", "k-annealing ramp length (default 10% of steps)"),
    key("d_model", "128", "encoder width (and single-decoder width)"),
    key("n_layers", "3", "transformer layers per stack"),
    key("n_heads", "4", "attention heads"),
    key("d_ff", "512", "feed-forward width"),
    key("d_z", "100", "latent dimension"),
    key("max_len", "120", "maximum tokens per molecule"),
];

const SWEEP_EXTRA: &[Key] = &[
    key("ks", "1,2,3", "comma-separated decoder counts"),
    key("unseen", "", "held-out corpus for reconstruction"),
];

const GENERATE_KEYS: &[Key] = &[
    key("checkpoint", "", "trained checkpoint"),
    key("corpus", "", "training corpus for novelty"),
    key("out", "runs/generate", "output directory"),
    key("seed", "0", "master seed"),
    key("regime", "in_domain", "in_domain|ood"),
    key("n", "2000", "generations per anchor"),
    key("decode_rule", "multinomial", "greedy|multinomial"),
    key("temperature", "1", "softmax temperature"),
    key("ensemble_space", "pre_softmax", "pre_softmax|post_softmax"),
    key("max_len", "", "maximum emitted tokens (default: model max_len)"),
    key("chunk", "256", "generations decoded together"),
];

const EVALUATE_KEYS: &[Key] = &[
    key("checkpoint", "", "trained checkpoint"),
    key("seen", "", "training corpus"),
    key("unseen", "", "held-out corpus"),
    key("generations", "", "generation CSV"),
    key("out", "runs/evaluate", "output directory"),
    key("seed", "0", "seed for loss measurement"),
    key("batch_size", "128", "molecules per forward pass"),
    key("ensemble_space", "pre_softmax", "pre_softmax|post_softmax"),
];

const TOKENIZE_KEYS: &[Key] = &[
    key("smiles", "", "one SMILES string"),
    key("input", "", "file with one SMILES per line"),
];

const VALIDATE_KEYS: &[Key] = &[
    key("smiles", "", "one SMILES string"),
    key("input", "", "file with one SMILES per line"),
    key("strict", "true", "also check valences"),
];

fn keys_for(cmd: &str) -> Vec<Key> {
    match cmd {
        "train" => TRAIN_KEYS.to_vec(),
        "sweep-k" => {
            let mut k = TRAIN_KEYS.to_vec();
            k.retain(|k| k.name != "resume");
            k.extend_from_slice(SWEEP_EXTRA);
            for entry in &mut k {
                if entry.name == "out" {
                    entry.default = "runs/sweep";
                }
            }
            k
        }
        "generate" => GENERATE_KEYS.to_vec(),
        "evaluate" => EVALUATE_KEYS.to_vec(),
        "tokenize" => TOKENIZE_KEYS.to_vec(),
        "validate" => VALIDATE_KEYS.to_vec(),
        _ => Vec::new(),
    }
}

const COMMANDS: [(&str, &str); 6] = [
    ("train", "Train one variant on a corpus"),
    ("generate", "Sample molecules for every anchor of a condition grid"),
    ("evaluate", "Compute reconstruction, generation and diversity metrics"),
    ("sweep-k", "Train several decoder counts at matched size"),
    ("tokenize", "Print the token sequence of SMILES strings"),
    ("validate", "Check SMILES validity and molecular weight"),
];

pub fn command() -> Command {
    let mut root = Command::new("mdvae")
        .about("Multi-decoder conditional VAE for SMILES")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in COMMANDS {
        let mut sc = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("PATH")
                .overrides_with("config")
                .help("flat key = value settings file"),
        );
        for k in keys_for(name) {
            let help = if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            };
            sc = sc.arg(
                Arg::new(k.name)
                    .long(k.name.replace('_', "-").leak() as &'static str)
                    .overrides_with(k.name)
                    .value_name("VALUE")
                    .help(help),
            );
        }
        root = root.subcommand(sc);
    }
    root
}

fn settings_from(cmd: &str, m: &ArgMatches) -> Result<Settings> {
    let keys = keys_for(cmd);
    let file = match m.get_one::<String>("config") {
        Some(p) => {
            let path = Path::new(p);
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Some(parse_config(&text, path)?)
        }
        None => None,
    };
    let flags: BTreeMap<String, String> = keys
        .iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect();
    Settings::merge(&keys, file, flags)
}

/// Parses `args` (including the program name) and runs the subcommand;
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = settings_from(name, sub).and_then(|s| match name {
        "train" => cmd_train(&s),
        "generate" => cmd_generate(&s),
        "evaluate" => cmd_evaluate(&s),
        "sweep-k" => cmd_sweep_k(&s),
        "tokenize" => cmd_tokenize(&s),
        "validate" => cmd_validate(&s),
        other => Err(Error::Config(format!("unknown command {other}"))),
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("mdvae {name}: {e}");
            1
        }
    }
}

fn parse_enum<T>(s: &Settings, k: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    let raw = s.raw(k);
    f(raw).ok_or_else(|| Error::Config(format!("invalid {k} {raw:?}")))
}

/// Training configuration described by `s`.
pub fn train_config(s: &Settings) -> Result<TrainConfig> {
    let model = ModelConfig::single(
        s.get("d_model")?,
        s.get("n_layers")?,
        s.get("n_heads")?,
        s.get("d_ff")?,
        s.get("d_z")?,
        s.get("max_len")?,
    );
    let loss = LossConfig {
        alpha: s.get("alpha")?,
        kld_target: s.get("kld_target")?,
        kp: s.get("kp")?,
        ki: s.get("ki")?,
        smoothing: s.get("smoothing")?,
        anneal_steps: s.opt("anneal_steps")?,
        ..LossConfig::default()
    };
    let variant = parse_enum(s, "variant", Variant::parse)?;
    let loss = LossConfig {
        beta_schedule: variant.spec(1).schedule,
        ..loss
    };
    let cfg = TrainConfig {
        variant,
        k: s.get("k")?,
        epochs: s.get("epochs")?,
        batch_size: s.get("batch_size")?,
        lr: s.get("lr")?,
        beta1: s.get("beta1")?,
        beta2: s.get("beta2")?,
        eps: s.get("eps")?,
        clip_norm: s.get("clip_norm")?,
        seed: s.get("seed")?,
        checkpoint_every: s.opt("checkpoint_every")?,
        max_steps: s.opt("max_steps")?,
        inter_kld_sample: s.get("inter_kld_sample")?,
        model,
        loss,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn dump_settings(s: &Settings, dir: &Path) -> Result<()> {
    let path = dir.join("effective_config.txt");
    std::fs::write(&path, s.dump()).map_err(|e| Error::io(&path, e))
}

fn out_dir(s: &Settings) -> Result<PathBuf> {
    let dir = s.path("out")?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    Ok(dir)
}

fn cmd_train(s: &Settings) -> Result<()> {
    let cfg = train_config(s)?;
    let corpus = load_corpus(&s.path("corpus")?, cfg.model.max_len)?;
    let files = RunFiles::new(s.path("out")?)?;
    dump_settings(s, &files.dir)?;
    let mut trainer = if s.is_set("resume") {
        // the checkpoint's recipe wins; only the stopping point can move
        let mut t = Trainer::resume(&s.path("resume")?, corpus)?;
        if s.is_explicit("epochs") {
            t.state.config.epochs = cfg.epochs;
        }
        t.state.config.max_steps = cfg.max_steps;
        t
    } else {
        let log = files.log();
        if log.exists() {
            std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        Trainer::new(cfg, corpus)?
    }
    .with_files(files.clone());
    trainer.fit()?;
    if let Some(last) = trainer.state.history.last() {
        println!(
            "trained {} for {} steps: l_recon={:.4} l_reg={:.4} beta={:.4}",
            trainer.state.config.variant, last.step, last.l_recon, last.l_reg, last.beta
        );
    }
    println!("checkpoint: {}", files.checkpoint().display());
    Ok(())
}

fn sampler_config(s: &Settings, state: &TrainState) -> Result<SamplerConfig> {
    let cfg = SamplerConfig {
        max_len: s.opt("max_len")?.unwrap_or(state.model.config().max_len),
        decode_rule: parse_enum(s, "decode_rule", |v| match v {
            "greedy" => Some(DecodeRule::Greedy),
            "multinomial" => Some(DecodeRule::Multinomial),
            _ => None,
        })?,
        temperature: s.get("temperature")?,
        ensemble_space: parse_space(s)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn parse_space(s: &Settings) -> Result<EnsembleSpace> {
    parse_enum(s, "ensemble_space", |v| match v {
        "pre_softmax" => Some(EnsembleSpace::PreSoftmax),
        "post_softmax" => Some(EnsembleSpace::PostSoftmax),
        _ => None,
    })
}

fn cmd_generate(s: &Settings) -> Result<()> {
    let state = load_checkpoint(&s.path("checkpoint")?)?;
    let sampler = sampler_config(s, &state)?;
    let regime = parse_enum(s, "regime", Regime::parse)?;
    let n: usize = s.get("n")?;
    let chunk: usize = s.get::<usize>("chunk")?.max(1);
    let seed: u64 = s.get("seed")?;
    let training = match s.opt::<String>("corpus")? {
        Some(p) => load_corpus(Path::new(&p), usize::MAX)?,
        None => Corpus::default(),
    };
    let train_set = training.smiles_set();
    let dir = out_dir(s)?;
    dump_settings(s, &dir)?;
    let independent = state.config.spec().independent_prior;
    let oracles = OracleSet::default();
    let mut cond_rng = rng::substream(seed, "data/conditions");
    let mut decode_rng = rng::substream(seed, rng::DECODE);
    let mut rows = Vec::new();
    for anchor in condition_grid(&state.stats, regime) {
        let conds: Vec<_> = (0..n)
            .map(|_| state.stats.sample_condition(anchor.property, anchor.value, &mut cond_rng))
            .collect();
        let mut smiles = Vec::with_capacity(n);
        for part in conds.chunks(chunk) {
            let normed: Vec<[f64; 3]> = part.iter().map(|c| state.stats.normalize(c).0).collect();
            let out = generate(&state.model, &normed, &sampler, independent, &mut decode_rng)?;
            smiles.extend(out.into_iter().map(|g| g.smiles));
        }
        // condition recorded per row is the anchored target
        let mut target = state.stats.mean;
        target[anchor.property.index()] = anchor.value;
        let records = label_generations(
            &smiles,
            crate::data::ConditionVector(target),
            &train_set,
            &oracles,
        );
        rows.extend(
            records
                .iter()
                .map(|r| GenerationRow::from_record(r, anchor.property, anchor.value)),
        );
        log::info!(
            "{} {} = {:.4}: efficiency {:.3}",
            regime.name(),
            anchor.property,
            anchor.value,
            generative_efficiency(&records)
        );
    }
    let path = dir.join("generations.csv");
    write_generations(&path, &rows)?;
    println!("{} generations written to {}", rows.len(), path.display());
    Ok(())
}

fn regime_of(stats: Option<&ConditionStats>, p: Property, anchor: f64) -> String {
    let Some(stats) = stats else {
        return "anchor".into();
    };
    for regime in [Regime::InDomain, Regime::Ood] {
        let hit = condition_grid(stats, regime)
            .iter()
            .any(|a| a.property == p && (a.value - anchor).abs() <= 1e-9 * anchor.abs().max(1.0));
        if hit {
            return regime.name().into();
        }
    }
    "anchor".into()
}

fn cmd_evaluate(s: &Settings) -> Result<()> {
    if !(s.is_set("seen") || s.is_set("unseen") || s.is_set("generations")) {
        return Err(Error::Config(
            "nothing to evaluate: give seen, unseen and/or generations".into(),
        ));
    }
    let state = match s.opt::<String>("checkpoint")? {
        Some(p) => Some(load_checkpoint(Path::new(&p))?),
        None if s.is_set("seen") || s.is_set("unseen") => {
            return Err(Error::Config("reconstruction metrics need a checkpoint".into()))
        }
        None => None,
    };
    let batch: usize = s.get("batch_size")?;
    let space = parse_space(s)?;
    let mut report = MetricsReport::default();
    if let Some(st) = &state {
        let max_len = st.model.config().max_len;
        if s.is_set("seen") {
            let seen = load_corpus(&s.path("seen")?, max_len)?;
            report.recon_seen = Some(reconstruction_success_rate(&st.model, &seen, &st.stats, batch, space)?);
            let alpha = st.config.loss.alpha;
            let (r, g) = measure_losses(&st.model, st.config.spec(), alpha, &seen.records, &st.stats, batch, s.get("seed")?)?;
            report.l_recon = Some(r);
            report.l_reg = Some(g);
            if st.model.config().k >= 2 {
                let sample = seen.head(st.config.inter_kld_sample.max(1));
                report.inter_decoder_kld = Some(inter_decoder_kld(&st.model, &sample, &st.stats, batch)?);
            }
        }
        if s.is_set("unseen") {
            let unseen = load_corpus(&s.path("unseen")?, max_len)?;
            report.recon_unseen = Some(reconstruction_success_rate(&st.model, &unseen, &st.stats, batch, space)?);
        }
    }
    if s.is_set("generations") {
        let rows = read_generations(&s.path("generations")?)?;
        let mut groups: Vec<((Property, f64), Vec<GenerationRow>)> = Vec::new();
        for r in rows {
            let key = (r.anchored_property, r.anchor);
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some((_, g)) => g.push(r),
                None => groups.push((key, vec![r])),
            }
        }
        let oracles = OracleSet::default();
        let stats = state.as_ref().map(|st| &st.stats);
        for ((p, anchor), rows) in groups {
            let records: Vec<_> = rows.iter().map(GenerationRow::to_record).collect();
            report.conditions.push(ConditionMetrics {
                regime: regime_of(stats, p, anchor),
                property: p,
                anchor,
                efficiency: generative_efficiency(&records),
                top1: oracles
                    .supports(p)
                    .then(|| top1_condition_mae(&records, p, anchor)),
                attempts: records.len(),
            });
        }
    }
    let dir = out_dir(s)?;
    dump_settings(s, &dir)?;
    report.write(&dir, "metrics")?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_sweep_k(s: &Settings) -> Result<()> {
    let ks: Vec<usize> = s
        .raw("ks")
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::Config(format!("invalid decoder count {v:?}")))
        })
        .collect::<Result<_>>()?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("ks must list positive decoder counts".into()));
    }
    let base = train_config(s)?;
    let corpus = load_corpus(&s.path("corpus")?, base.model.max_len)?;
    let unseen = match s.opt::<String>("unseen")? {
        Some(p) => Some(load_corpus(Path::new(&p), base.model.max_len)?),
        None => None,
    };
    let dir = out_dir(s)?;
    dump_settings(s, &dir)?;
    let mut table = String::from("k,variant,params,l_recon,l_reg,recon_seen,recon_unseen\n");
    for &k in &ks {
        let variant = if k == 1 { Variant::Controlvae } else { base.variant };
        let cfg = TrainConfig {
            variant,
            k,
            loss: LossConfig {
                beta_schedule: variant.spec(k).schedule,
                ..base.loss.clone()
            },
            ..base.clone()
        };
        let files = RunFiles::new(dir.join(format!("k{k}")))?;
        let log = files.log();
        if log.exists() {
            std::fs::remove_file(&log).map_err(|e| Error::io(&log, e))?;
        }
        let mut t = Trainer::new(cfg, corpus.clone())?.with_files(files);
        t.fit()?;
        let st = &t.state;
        let (l_recon, l_reg) = measure_losses(
            &st.model,
            st.config.spec(),
            st.config.loss.alpha,
            &corpus.records,
            &st.stats,
            st.config.batch_size,
            st.config.seed,
        )?;
        let seen = reconstruction_success_rate(&st.model, &corpus, &st.stats, st.config.batch_size, EnsembleSpace::PreSoftmax)?;
        let unseen_rate = match &unseen {
            Some(u) => reconstruction_success_rate(&st.model, u, &st.stats, st.config.batch_size, EnsembleSpace::PreSoftmax)?
                .molecule_rate
                .to_string(),
            None => String::new(),
        };
        table.push_str(&format!(
            "{k},{variant},{},{l_recon},{l_reg},{},{unseen_rate}\n",
            st.model.param_count(),
            seen.molecule_rate
        ));
    }
    let path = dir.join("sweep.csv");
    std::fs::write(&path, &table).map_err(|e| Error::io(&path, e))?;
    print!("{table}");
    Ok(())
}

fn inputs(s: &Settings) -> Result<Vec<String>> {
    let mut out = Vec::new();
    if s.is_set("smiles") {
        out.push(s.raw("smiles").to_string());
    }
    if s.is_set("input") {
        let path = s.path("input")?;
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        out.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }
    if out.is_empty() {
        return Err(Error::Config("give --smiles or --input".into()));
    }
    Ok(out)
}

fn cmd_tokenize(s: &Settings) -> Result<()> {
    let vocab = Vocabulary::zinc();
    for smi in inputs(s)? {
        let seq = tokenize(&smi)?;
        let toks: Vec<&str> = seq.ids.iter().map(|&i| vocab.text(i).unwrap_or("?")).collect();
        println!("{}\t{}", seq.len(), toks.join(" "));
    }
    Ok(())
}

fn cmd_validate(s: &Settings) -> Result<()> {
    let strict: bool = s.get("strict")?;
    for smi in inputs(s)? {
        let r = check_validity_with(&smi, strict);
        let reasons: Vec<String> = r.reasons.iter().map(ToString::to_string).collect();
        let mw = match molecular_weight(&smi) {
            Ok(w) if r.valid => format!("{w:.3}"),
            _ => String::new(),
        };
        let status = if r.valid { "valid" } else { "invalid" };
        println!("{smi}\t{status}\t{}\t{mw}", reasons.join("|"));
    }
    Ok(())
}
