//! Reconstruction, generation, conditional-satisfaction and diversity metrics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::{surrogate_logp, surrogate_qed, ConditionStats, ConditionVector, Corpus, Property};
use crate::error::{Error, Result};
use crate::generate::{reconstruct_teacher_forced, teacher_forced_distributions, EnsembleSpace};
use crate::model::{Batch, Model};
use crate::smiles::{check_validity_with, molecular_weight};

/// Property estimator for generated strings.
pub trait PropertyOracle {
    fn property(&self) -> Property;
    fn evaluate(&self, smiles: &str) -> Option<f64>;
}

/// Exact average molecular weight.
#[derive(Debug, Clone, Copy, Default)]
pub struct MolWtOracle;

impl PropertyOracle for MolWtOracle {
    fn property(&self) -> Property {
        Property::MolWt
    }

    fn evaluate(&self, smiles: &str) -> Option<f64> {
        molecular_weight(smiles).ok()
    }
}

/// The toy corpus labelers for logP and QED.
#[derive(Debug, Clone, Copy)]
pub struct SurrogateOracle(pub Property);

impl PropertyOracle for SurrogateOracle {
    fn property(&self) -> Property {
        self.0
    }

    fn evaluate(&self, smiles: &str) -> Option<f64> {
        match self.0 {
            Property::MolWt => molecular_weight(smiles).ok(),
            Property::LogP => surrogate_logp(smiles),
            Property::Qed => surrogate_qed(smiles),
        }
    }
}

/// Oracles by property; molWt is always present.
pub struct OracleSet {
    oracles: Vec<Box<dyn PropertyOracle>>,
}

impl Default for OracleSet {
    fn default() -> Self {
        OracleSet {
            oracles: vec![Box::new(MolWtOracle)],
        }
    }
}

impl OracleSet {
    /// molWt plus the toy surrogates for logP and QED.
    pub fn with_surrogates() -> Self {
        let mut s = OracleSet::default();
        s.register(Box::new(SurrogateOracle(Property::LogP)));
        s.register(Box::new(SurrogateOracle(Property::Qed)));
        s
    }

    /// Adds or replaces the oracle for its property.
    pub fn register(&mut self, oracle: Box<dyn PropertyOracle>) {
        self.oracles.retain(|o| o.property() != oracle.property());
        self.oracles.push(oracle);
    }

    pub fn supports(&self, p: Property) -> bool {
        self.oracles.iter().any(|o| o.property() == p)
    }

    pub fn evaluate(&self, smiles: &str) -> [Option<f64>; 3] {
        let mut out = [None; 3];
        for o in &self.oracles {
            out[o.property().index()] = o.evaluate(smiles);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub smiles: String,
    /// Condition requested, in raw units.
    pub condition: ConditionVector,
    pub valid: bool,
    pub unique: bool,
    pub novel: bool,
    /// Computed properties, `None` where unsupported or invalid.
    pub properties: [Option<f64>; 3],
}

/// Labels one condition batch: strict validity, first-occurrence
/// uniqueness, and novelty against `training`.
pub fn label_generations(
    smiles: &[String],
    condition: ConditionVector,
    training: &HashSet<&str>,
    oracles: &OracleSet,
) -> Vec<GenerationRecord> {
    let mut seen = HashSet::new();
    smiles
        .iter()
        .map(|s| {
            let valid = !s.is_empty() && check_validity_with(s, true).valid;
            GenerationRecord {
                smiles: s.clone(),
                condition,
                valid,
                unique: seen.insert(s.as_str()),
                novel: !training.contains(s.as_str()),
                properties: if valid { oracles.evaluate(s) } else { [None; 3] },
            }
        })
        .collect()
}

/// One row of a generation CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub smiles: String,
    pub anchored_property: Property,
    pub anchor: f64,
    pub valid: bool,
    pub unique: bool,
    pub novel: bool,
    pub molwt: Option<f64>,
}

pub const GENERATION_HEADER: &str = "smiles,anchored_property,anchor,valid,unique,novel,molwt";

impl GenerationRow {
    pub fn from_record(r: &GenerationRecord, property: Property, anchor: f64) -> Self {
        GenerationRow {
            smiles: r.smiles.clone(),
            anchored_property: property,
            anchor,
            valid: r.valid,
            unique: r.unique,
            novel: r.novel,
            molwt: r.properties[Property::MolWt.index()],
        }
    }

    /// Record view carrying only the stored molWt.
    pub fn to_record(&self) -> GenerationRecord {
        let mut properties = [None; 3];
        properties[Property::MolWt.index()] = self.molwt;
        GenerationRecord {
            smiles: self.smiles.clone(),
            condition: ConditionVector([f64::NAN; 3]),
            valid: self.valid,
            unique: self.unique,
            novel: self.novel,
            properties,
        }
    }
}

pub fn write_generations(path: &Path, rows: &[GenerationRow]) -> Result<()> {
    let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    if rows.is_empty() {
        w.write_record(GENERATION_HEADER.split(',')).map_err(io)?;
    }
    for r in rows {
        w.serialize(r).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let header = rdr
        .headers()
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != GENERATION_HEADER {
        return Err(Error::MalformedRow {
            row: 1,
            reason: format!("expected header {GENERATION_HEADER:?}, got {header:?}"),
        });
    }
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::MalformedRow {
                row: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Fraction of records that are valid, unique and novel; 0 for no records.
pub fn generative_efficiency(records: &[GenerationRecord]) -> f64 {
    if records.is_empty() {
        return 0.0;
    }
    let ok = records.iter().filter(|r| r.valid && r.unique && r.novel).count();
    ok as f64 / records.len() as f64
}

/// Best absolute error to an anchor, or no valid candidate at all.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Top1 {
    Mae(f64),
    NoValidMolecule,
}

impl Top1 {
    pub const MARKER: &'static str = "NO_VALID_MOLECULE";

    pub fn value(self) -> Option<f64> {
        match self {
            Top1::Mae(v) => Some(v),
            Top1::NoValidMolecule => None,
        }
    }
}

impl fmt::Display for Top1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Top1::Mae(v) => write!(f, "{v}"),
            Top1::NoValidMolecule => f.write_str(Top1::MARKER),
        }
    }
}

/// Smallest `|property - anchor|` over valid records with a computed value.
pub fn top1_condition_mae(records: &[GenerationRecord], property: Property, anchor: f64) -> Top1 {
    records
        .iter()
        .filter(|r| r.valid)
        .filter_map(|r| r.properties[property.index()])
        .map(|v| (v - anchor).abs())
        .fold(None, |best: Option<f64>, e| Some(best.map_or(e, |b| b.min(e))))
        .map_or(Top1::NoValidMolecule, Top1::Mae)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSummary {
    /// Fraction of molecules whose every target token is recovered.
    pub molecule_rate: f64,
    /// Fraction of target tokens recovered.
    pub token_accuracy: f64,
    pub molecules: usize,
}

/// Teacher-forced reconstruction over a corpus with `z = mu`.
pub fn reconstruction_success_rate(
    model: &Model,
    corpus: &Corpus,
    stats: &ConditionStats,
    batch_size: usize,
    space: EnsembleSpace,
) -> Result<ReconstructionSummary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mut exact, mut correct, mut total) = (0usize, 0usize, 0usize);
    for chunk in corpus.records.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = Batch::from_records(&refs, stats)?;
        for r in reconstruct_teacher_forced(model, &batch, space)? {
            exact += usize::from(r.exact_match);
            correct += r.correct;
            total += r.total;
        }
    }
    Ok(ReconstructionSummary {
        molecule_rate: exact as f64 / corpus.len() as f64,
        token_accuracy: correct as f64 / total as f64,
        molecules: corpus.len(),
    })
}

/// `KL(p || q)` over a discrete support; zero-mass terms of `p` vanish.
pub fn discrete_kld(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.ln() - b.ln()))
        .sum()
}

/// `(KL(p||q) + KL(q||p)) / 2`.
pub fn symmetric_kld(p: &[f64], q: &[f64]) -> f64 {
    0.5 * (discrete_kld(p, q) + discrete_kld(q, p))
}

/// Mean symmetrized KL between decoder pairs' teacher-forced next-token
/// distributions, over pairs, non-PAD positions and molecules.
pub fn inter_decoder_kld(
    model: &Model,
    corpus: &Corpus,
    stats: &ConditionStats,
    batch_size: usize,
) -> Result<f64> {
    let k = model.config().k;
    if k < 2 {
        return Err(Error::SingleDecoder);
    }
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (mut sum, mut n) = (0.0, 0usize);
    for chunk in corpus.records.chunks(batch_size.max(1)) {
        let refs: Vec<_> = chunk.iter().collect();
        let batch = Batch::from_records(&refs, stats)?;
        let dists = teacher_forced_distributions(model, &batch, 1.0)?;
        for (r, t) in batch.targets().iter().enumerate() {
            if t.is_none() {
                continue;
            }
            for i in 0..k {
                for j in i + 1..k {
                    sum += symmetric_kld(dists[i].row(r), dists[j].row(r));
                    n += 1;
                }
            }
        }
    }
    Ok(sum / n as f64)
}

/// Metrics for one condition batch.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionMetrics {
    pub regime: String,
    pub property: Property,
    pub anchor: f64,
    pub efficiency: f64,
    pub top1: Option<Top1>,
    pub attempts: usize,
}

/// Everything `evaluate` can report; absent sections are omitted.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsReport {
    pub recon_seen: Option<ReconstructionSummary>,
    pub recon_unseen: Option<ReconstructionSummary>,
    pub conditions: Vec<ConditionMetrics>,
    pub inter_decoder_kld: Option<f64>,
    pub l_recon: Option<f64>,
    pub l_reg: Option<f64>,
}

fn fmt_anchor(v: f64) -> String {
    format!("{v:.4}")
}

impl MetricsReport {
    /// Flat, sorted `key -> value` view shared by both output formats.
    pub fn entries(&self) -> BTreeMap<String, Value> {
        let mut m = BTreeMap::new();
        for (tag, r) in [("seen", &self.recon_seen), ("unseen", &self.recon_unseen)] {
            if let Some(r) = r {
                m.insert(format!("recon_success_rate_{tag}"), json!(r.molecule_rate));
                m.insert(format!("recon_token_accuracy_{tag}"), json!(r.token_accuracy));
                m.insert(format!("recon_molecules_{tag}"), json!(r.molecules));
            }
        }
        for c in &self.conditions {
            let key = format!("{}.{}.{}", c.regime, c.property.name(), fmt_anchor(c.anchor));
            m.insert(format!("gen_efficiency.{key}"), json!(c.efficiency));
            m.insert(format!("gen_attempts.{key}"), json!(c.attempts));
            if let Some(t) = c.top1 {
                let v = match t {
                    Top1::Mae(v) => json!(v),
                    Top1::NoValidMolecule => json!(Top1::MARKER),
                };
                m.insert(format!("top1_mae.{key}"), v);
            }
        }
        if let Some(v) = self.inter_decoder_kld {
            m.insert("inter_decoder_kld".into(), json!(v));
        }
        if let Some(v) = self.l_recon {
            m.insert("l_recon".into(), json!(v));
        }
        if let Some(v) = self.l_reg {
            m.insert("l_reg".into(), json!(v));
        }
        m
    }

    /// `key = value` lines in key order.
    pub fn to_text(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| match v {
                Value::String(s) => format!("{k} = {s}\n"),
                other => format!("{k} = {other}\n"),
            })
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let map: serde_json::Map<String, Value> = self.entries().into_iter().collect();
        Ok(serde_json::to_string_pretty(&Value::Object(map))?)
    }

    /// Writes `<stem>.txt` and `<stem>.json` under `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        let txt = dir.join(format!("{stem}.txt"));
        std::fs::write(&txt, self.to_text()).map_err(|e| Error::io(&txt, e))?;
        let js = dir.join(format!("{stem}.json"));
        std::fs::write(&js, self.to_json()? + "\n").map_err(|e| Error::io(&js, e))?;
        Ok(())
    }
}
