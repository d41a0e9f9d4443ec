//! Corpora, condition statistics, and condition-anchor construction.

mod synthetic;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smiles::{tokenize, TokenSeq};

pub use synthetic::{generate_corpus, random_molecule, surrogate_logp, surrogate_qed};

pub const CSV_HEADER: [&str; 4] = ["smiles", "molwt", "logp", "qed"];

/// One of the three conditioning properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Property {
    MolWt,
    LogP,
    Qed,
}

impl Property {
    pub const ALL: [Property; 3] = [Property::MolWt, Property::LogP, Property::Qed];

    pub fn index(self) -> usize {
        match self {
            Property::MolWt => 0,
            Property::LogP => 1,
            Property::Qed => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Property::MolWt => "molwt",
            Property::LogP => "logp",
            Property::Qed => "qed",
        }
    }

    pub fn parse(s: &str) -> Option<Property> {
        Property::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// `(molWt, logP, QED)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionVector(pub [f64; 3]);

impl ConditionVector {
    pub fn new(molwt: f64, logp: f64, qed: f64) -> Self {
        ConditionVector([molwt, logp, qed])
    }

    pub fn get(&self, p: Property) -> f64 {
        self.0[p.index()]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub smiles: String,
    pub tokens: TokenSeq,
    pub properties: ConditionVector,
}

#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub name: String,
    pub records: Vec<Record>,
    /// Rows dropped as untokenizable or longer than `max_len`.
    pub dropped: usize,
    /// Exact-string repeats removed after the first occurrence.
    pub duplicates: usize,
}

impl Corpus {
    /// Builds a corpus from `(smiles, properties)` rows with the loader's
    /// drop and dedup rules.
    pub fn from_rows<I>(name: &str, rows: I, max_len: usize) -> Result<Corpus>
    where
        I: IntoIterator<Item = (String, ConditionVector)>,
    {
        let mut seen = HashSet::new();
        let mut corpus = Corpus {
            name: name.to_string(),
            ..Corpus::default()
        };
        for (smiles, properties) in rows {
            let tokens = match tokenize(&smiles) {
                Ok(t) if !t.is_empty() && t.len() <= max_len => t,
                _ => {
                    corpus.dropped += 1;
                    continue;
                }
            };
            if !seen.insert(smiles.clone()) {
                corpus.duplicates += 1;
                continue;
            }
            corpus.records.push(Record {
                smiles,
                tokens,
                properties,
            });
        }
        if corpus.records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn smiles_set(&self) -> HashSet<&str> {
        self.records.iter().map(|r| r.smiles.as_str()).collect()
    }

    /// Records absent from `other`, for a held-out set with no overlap.
    pub fn excluding(&self, other: &Corpus) -> Corpus {
        let known = other.smiles_set();
        let records: Vec<Record> = self
            .records
            .iter()
            .filter(|r| !known.contains(r.smiles.as_str()))
            .cloned()
            .collect();
        Corpus {
            name: format!("{}-minus-{}", self.name, other.name),
            duplicates: self.duplicates + (self.records.len() - records.len()),
            records,
            dropped: self.dropped,
        }
    }

    /// First `n` records.
    pub fn head(&self, n: usize) -> Corpus {
        Corpus {
            name: self.name.clone(),
            records: self.records.iter().take(n).cloned().collect(),
            dropped: self.dropped,
            duplicates: self.duplicates,
        }
    }

    pub fn max_tokens(&self) -> usize {
        self.records.iter().map(|r| r.tokens.len()).max().unwrap_or(0)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        let io = |e: csv::Error| Error::io(path, std::io::Error::other(e));
        w.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.records {
            let [m, l, q] = r.properties.0;
            w.write_record([r.smiles.clone(), m.to_string(), l.to_string(), q.to_string()])
                .map_err(io)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Reads a `smiles,molwt,logp,qed` CSV. Row numbers in errors are 1-based
/// file lines (the header is line 1).
pub fn load_corpus(path: &Path, max_len: usize) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 1,
            reason: e.to_string(),
        })?
        .clone();
    let cols: Vec<String> = header.iter().map(str::to_ascii_lowercase).collect();
    if cols != CSV_HEADER {
        return Err(Error::MalformedRow {
            row: 1,
            reason: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::MalformedRow {
            row: line,
            reason: e.to_string(),
        })?;
        if rec.len() != 4 {
            return Err(Error::MalformedRow {
                row: line,
                reason: format!("expected 4 fields, found {}", rec.len()),
            });
        }
        let mut vals = [0.0; 3];
        for (j, v) in vals.iter_mut().enumerate() {
            *v = rec[j + 1]
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| Error::MalformedRow {
                    row: line,
                    reason: format!("bad {} value {:?}", CSV_HEADER[j + 1], &rec[j + 1]),
                })?;
        }
        rows.push((rec[0].to_string(), ConditionVector(vals)));
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Corpus::from_rows(&name, rows, max_len)
}

/// Fitted 3-variate Gaussian over training-set properties.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub cov: [[f64; 3]; 3],
}

impl ConditionStats {
    /// Sample mean and (n-1)-normalized covariance.
    pub fn fit<'a>(ys: impl IntoIterator<Item = &'a ConditionVector>) -> Result<Self> {
        let ys: Vec<[f64; 3]> = ys.into_iter().map(|y| y.0).collect();
        if ys.len() < 2 {
            return Err(Error::EmptyCorpus);
        }
        let n = ys.len() as f64;
        let mut mean = [0.0; 3];
        for y in &ys {
            for i in 0..3 {
                mean[i] += y[i] / n;
            }
        }
        let mut cov = [[0.0; 3]; 3];
        for y in &ys {
            for i in 0..3 {
                for j in 0..3 {
                    cov[i][j] += (y[i] - mean[i]) * (y[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        let stats = ConditionStats {
            mean,
            std: [cov[0][0].sqrt(), cov[1][1].sqrt(), cov[2][2].sqrt()],
            cov,
        };
        stats.validate()?;
        Ok(stats)
    }

    pub fn from_corpus(corpus: &Corpus) -> Result<Self> {
        ConditionStats::fit(corpus.records.iter().map(|r| &r.properties))
    }

    /// Independent components with the given means and deviations.
    pub fn diagonal(mean: [f64; 3], std: [f64; 3]) -> Self {
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            cov[i][i] = std[i] * std[i];
        }
        ConditionStats { mean, std, cov }
    }

    pub fn validate(&self) -> Result<()> {
        if self.std.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::Config(format!(
                "condition std must be positive, got {:?}",
                self.std
            )));
        }
        Ok(())
    }

    pub fn normalize(&self, y: &ConditionVector) -> ConditionVector {
        ConditionVector(std::array::from_fn(|i| (y.0[i] - self.mean[i]) / self.std[i]))
    }

    pub fn denormalize(&self, y: &ConditionVector) -> ConditionVector {
        ConditionVector(std::array::from_fn(|i| y.0[i] * self.std[i] + self.mean[i]))
    }

    /// Mean and 2x2 covariance of the other two properties given
    /// `anchored = value`, in `Property::ALL` order.
    pub fn conditional(&self, anchored: Property, value: f64) -> ([f64; 2], [[f64; 2]; 2]) {
        let a = anchored.index();
        let o: Vec<usize> = (0..3).filter(|&i| i != a).collect();
        let saa = self.cov[a][a];
        let mean = [
            self.mean[o[0]] + self.cov[o[0]][a] / saa * (value - self.mean[a]),
            self.mean[o[1]] + self.cov[o[1]][a] / saa * (value - self.mean[a]),
        ];
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] = self.cov[o[i]][o[j]] - self.cov[o[i]][a] * self.cov[a][o[j]] / saa;
            }
        }
        (mean, c)
    }

    /// Full condition with `anchored` fixed and the others drawn from the
    /// conditional Gaussian.
    pub fn sample_condition<R: Rng + ?Sized>(
        &self,
        anchored: Property,
        value: f64,
        rng: &mut R,
    ) -> ConditionVector {
        let (mean, c) = self.conditional(anchored, value);
        // 2x2 Cholesky; clamp tiny negative pivots from round-off.
        let l00 = c[0][0].max(0.0).sqrt();
        let l10 = if l00 > 0.0 { c[1][0] / l00 } else { 0.0 };
        let l11 = (c[1][1] - l10 * l10).max(0.0).sqrt();
        let e0: f64 = rng.sample(StandardNormal);
        let e1: f64 = rng.sample(StandardNormal);
        let others = [mean[0] + l00 * e0, mean[1] + l10 * e0 + l11 * e1];
        let mut y = [0.0; 3];
        let mut k = 0;
        for (i, slot) in y.iter_mut().enumerate() {
            if i == anchored.index() {
                *slot = value;
            } else {
                *slot = others[k];
                k += 1;
            }
        }
        ConditionVector(y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    InDomain,
    Ood,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Regime> {
        match s.to_ascii_lowercase().as_str() {
            "in_domain" | "in-domain" | "indomain" => Some(Regime::InDomain),
            "ood" => Some(Regime::Ood),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::InDomain => "in_domain",
            Regime::Ood => "ood",
        }
    }
}

/// One property pinned to one target value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub property: Property,
    pub value: f64,
}

/// z-score multiple bounding a two-sided 90% normal interval.
pub const IN_DOMAIN_Z: f64 = 1.645;
/// z-score multiple for extrapolated targets.
pub const OOD_Z: f64 = 4.0;

/// In-domain: `{mu, mu + 1.645 sd, mu - 1.645 sd}`; OOD: `{mu + 4 sd, mu - 4 sd}`,
/// for each property in turn.
pub fn condition_grid(stats: &ConditionStats, regime: Regime) -> Vec<Anchor> {
    let offsets: &[f64] = match regime {
        Regime::InDomain => &[0.0, IN_DOMAIN_Z, -IN_DOMAIN_Z],
        Regime::Ood => &[OOD_Z, -OOD_Z],
    };
    Property::ALL
        .iter()
        .flat_map(|&p| {
            let (mu, sd) = (stats.mean[p.index()], stats.std[p.index()]);
            offsets.iter().map(move |&k| Anchor {
                property: p,
                value: mu + k * sd,
            })
        })
        .collect()
}
