//! Seeded generator of drug-like toy molecules.
//!
//! Strings are assembled from ring and chain fragments so that every output
//! passes the strict validity check. `molwt` is exact; `logp` and `qed` are
//! smooth surrogates (atom contributions and a desirability product), not
//! the reference estimators. They exist so toy corpora carry three
//! correlated conditioning properties.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ConditionVector, Corpus};
use crate::smiles::graph::{self, Element};
use crate::smiles::{molecular_weight, tokenize};

const AROMATIC: [&str; 6] = ["ccccc", "ccncc", "cccnc", "ccc(F)cc", "ccc(C)cc", "cc(Cl)ccc"];
const FIVE_RING: [&str; 3] = ["ccsc", "ccoc", "cnoc"];
const ALIPHATIC: [&str; 5] = ["CCCCC", "CCNCC", "CCOCC", "CCCC", "CCN(C)CC"];
const SUBSTITUENT: [&str; 10] = ["C", "F", "Cl", "Br", "O", "OC", "N", "C#N", "C(F)(F)F", "CC"];
const LINKER: [&str; 9] = ["C", "CC", "N", "O", "C(=O)", "C(=O)N", "NC(=O)", "S", "C(C)"];
const START: [&str; 7] = ["C", "F", "Cl", "O", "N", "OC", "CC"];
const TERMINAL: [&str; 8] = ["C", "F", "Cl", "O", "N", "C#N", "C(=O)O", "OC"];

struct Builder<'r> {
    rng: &'r mut ChaCha8Rng,
    out: String,
    rings: usize,
}

impl Builder<'_> {
    fn ring(&mut self) {
        self.rings += 1;
        let label = ((self.rings - 1) % 9 + 1).to_string();
        let roll: f64 = self.rng.random();
        let (head, body) = if roll < 0.55 {
            ("c", *AROMATIC.choose(self.rng).unwrap())
        } else if roll < 0.7 {
            ("c", *FIVE_RING.choose(self.rng).unwrap())
        } else {
            ("C", *ALIPHATIC.choose(self.rng).unwrap())
        };
        self.out.push_str(head);
        self.out.push_str(&label);
        // optional substituent on the second ring atom
        if body.len() > 3 && self.rng.random_bool(0.35) {
            let (first, rest) = body.split_at(1);
            self.out.push_str(first);
            self.out.push('(');
            self.out.push_str(SUBSTITUENT.choose(self.rng).unwrap());
            self.out.push(')');
            self.out.push_str(rest);
        } else {
            self.out.push_str(body);
        }
        self.out.push_str(&label);
    }

    fn linker(&mut self) {
        let l = *LINKER.choose(self.rng).unwrap();
        // keep heteroatoms from touching each other
        let ends_hetero = self.out.ends_with(['O', 'N', 'S']);
        if ends_hetero && matches!(l, "N" | "O" | "S" | "NC(=O)") {
            self.out.push('C');
        }
        self.out.push_str(l);
    }
}

/// One random molecule from the fragment grammar.
pub fn random_molecule(rng: &mut ChaCha8Rng) -> String {
    let mut b = Builder {
        rng,
        out: String::new(),
        rings: 0,
    };
    if b.rng.random_bool(0.5) {
        let t = *START.choose(b.rng).unwrap();
        b.out.push_str(t);
    }
    let units = b.rng.random_range(1..=3);
    for i in 0..units {
        if i > 0 || !b.out.is_empty() {
            b.linker();
        }
        b.ring();
    }
    if b.rng.random_bool(0.6) {
        let t = *TERMINAL.choose(b.rng).unwrap();
        if b.out.ends_with(['O', 'N']) && t.starts_with(['O', 'N']) {
            b.out.push('C');
        }
        b.out.push_str(t);
    }
    b.out
}

/// Crippen-flavoured atom-contribution estimate of logP.
pub fn surrogate_logp(smiles: &str) -> Option<f64> {
    let g = graph::parse(smiles).ok()?;
    let mut logp = 0.0;
    for (i, a) in g.atoms.iter().enumerate() {
        let h = f64::from(g.implicit_hydrogens(i) + a.hcount);
        logp += match (a.element?, a.aromatic) {
            (Element::C, true) => 0.29,
            (Element::C, false) => 0.14,
            (Element::N, true) => -0.49,
            (Element::N, false) => -0.74,
            (Element::O, true) => 0.03,
            (Element::O, false) => -0.42,
            (Element::S, _) => 0.61,
            (Element::F, _) => 0.41,
            (Element::Cl, _) => 0.66,
            (Element::Br, _) => 0.88,
            (Element::I, _) => 1.05,
            _ => 0.0,
        } + 0.12 * h;
    }
    Some(logp)
}

fn desirability(x: f64, center: f64, width: f64) -> f64 {
    (-0.5 * ((x - center) / width).powi(2)).exp()
}

/// Geometric mean of desirabilities over weight, logP, heteroatoms, and
/// aromatic atom fraction; lies in (0, 1].
pub fn surrogate_qed(smiles: &str) -> Option<f64> {
    let g = graph::parse(smiles).ok()?;
    let mw = molecular_weight(smiles).ok()?;
    let logp = surrogate_logp(smiles)?;
    let hetero = g
        .atoms
        .iter()
        .filter(|a| matches!(a.element, Some(Element::N | Element::O)))
        .count() as f64;
    let arom = g.atoms.iter().filter(|a| a.aromatic).count() as f64 / g.atoms.len() as f64;
    let ds = [
        desirability(mw, 300.0, 110.0),
        desirability(logp, 2.5, 1.8),
        desirability(hetero, 4.0, 2.5),
        desirability(arom, 0.4, 0.3),
    ];
    Some((ds.iter().map(|d| d.ln()).sum::<f64>() / ds.len() as f64).exp())
}

/// `n` distinct molecules with at most `max_len` tokens each.
pub fn generate_corpus(n: usize, seed: u64, max_len: usize) -> Corpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n);
    let mut seen = std::collections::HashSet::new();
    let mut attempts = 0usize;
    while rows.len() < n {
        attempts += 1;
        assert!(attempts < 200 * n + 1000, "fragment grammar exhausted");
        let s = random_molecule(&mut rng);
        let len = tokenize(&s).map(|t| t.len()).unwrap_or(usize::MAX);
        if len > max_len || !seen.insert(s.clone()) {
            continue;
        }
        let (Ok(mw), Some(lp), Some(q)) = (molecular_weight(&s), surrogate_logp(&s), surrogate_qed(&s))
        else {
            continue;
        };
        rows.push((s, ConditionVector::new(mw, lp, q)));
    }
    Corpus::from_rows(&format!("toy-{seed}"), rows, max_len).expect("non-empty toy corpus")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::smiles::check_validity_with;

    #[test]
    fn molecules_are_strictly_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let s = random_molecule(&mut rng);
            let r = check_validity_with(&s, true);
            assert!(r.valid, "{s}: {:?}", r.reasons);
        }
    }

    #[test]
    fn corpus_is_deterministic_and_distinct() {
        let a = generate_corpus(300, 5, 40);
        let b = generate_corpus(300, 5, 40);
        assert_eq!(a.records, b.records);
        assert_eq!(a.len(), 300);
        assert_eq!(a.duplicates, 0);
        assert!(a.max_tokens() <= 40);
        for r in &a.records {
            assert!(r.properties.is_finite());
            assert!(r.properties.0[2] > 0.0 && r.properties.0[2] <= 1.0);
        }
    }

    #[test]
    fn properties_vary() {
        let c = generate_corpus(500, 1, 40);
        let stats = crate::data::ConditionStats::from_corpus(&c).unwrap();
        assert!(stats.std[0] > 20.0, "{stats:?}");
        assert!(stats.std[1] > 0.3, "{stats:?}");
        assert!(stats.std[2] > 0.03, "{stats:?}");
    }
}
