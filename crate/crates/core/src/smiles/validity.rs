use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::graph;
use super::vocab::{tokenize, Vocabulary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ValidityCode {
    UnknownToken,
    UnbalancedParen,
    UnbalancedBracket,
    UnmatchedRingBond,
    Empty,
    ValenceViolation,
}

impl fmt::Display for ValidityCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ValidityCode::UnknownToken => "UNKNOWN_TOKEN",
            ValidityCode::UnbalancedParen => "UNBALANCED_PAREN",
            ValidityCode::UnbalancedBracket => "UNBALANCED_BRACKET",
            ValidityCode::UnmatchedRingBond => "UNMATCHED_RING_BOND",
            ValidityCode::Empty => "EMPTY",
            ValidityCode::ValenceViolation => "VALENCE_VIOLATION",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub reasons: Vec<ValidityCode>,
}

impl ValidityReport {
    fn from_reasons(reasons: Vec<ValidityCode>) -> Self {
        ValidityReport {
            valid: reasons.is_empty(),
            reasons,
        }
    }
}

/// Structural check with the lenient default (no valence table).
pub fn check_validity(s: &str) -> ValidityReport {
    check_validity_with(s, false)
}

/// Structural validity. With `strict`, the string must also parse to a graph
/// whose organic-subset atoms stay within their maximum valence and whose
/// aromatic atoms all lie on rings.
pub fn check_validity_with(s: &str, strict: bool) -> ValidityReport {
    let seq = match tokenize(s) {
        Ok(t) => t,
        Err(_) => return ValidityReport::from_reasons(vec![ValidityCode::UnknownToken]),
    };
    let vocab = Vocabulary::zinc();
    let toks: Vec<&str> = seq.ids.iter().map(|&i| vocab.text(i).unwrap()).collect();
    let mut reasons = Vec::new();

    let mut depth = 0i64;
    let mut paren_ok = true;
    let mut in_bracket = false;
    let mut bracket_ok = true;
    let mut ring_counts: HashMap<&str, usize> = HashMap::new();
    let mut atoms = 0usize;
    for &t in &toks {
        match t {
            "(" => depth += 1,
            ")" => {
                depth -= 1;
                if depth < 0 {
                    paren_ok = false;
                }
            }
            "[" => {
                if in_bracket {
                    bracket_ok = false;
                }
                in_bracket = true;
                atoms += 1;
            }
            "]" => {
                if !in_bracket {
                    bracket_ok = false;
                }
                in_bracket = false;
            }
            d if !in_bracket && d.chars().all(|c| c.is_ascii_digit()) => {
                *ring_counts.entry(d).or_default() += 1;
            }
            a if !in_bracket && graph::Element::from_symbol(a).is_some() => atoms += 1,
            _ => {}
        }
    }
    if !paren_ok || depth != 0 {
        reasons.push(ValidityCode::UnbalancedParen);
    }
    if !bracket_ok || in_bracket {
        reasons.push(ValidityCode::UnbalancedBracket);
    }
    if ring_counts.values().any(|c| c % 2 != 0) {
        reasons.push(ValidityCode::UnmatchedRingBond);
    }
    if atoms == 0 {
        reasons.push(ValidityCode::Empty);
    }
    if strict && reasons.is_empty() {
        let ok = graph::parse(s)
            .map(|g| g.valence_violations().is_empty() && g.aromaticity_violations().is_empty())
            .unwrap_or(false);
        if !ok {
            reasons.push(ValidityCode::ValenceViolation);
        }
    }
    ValidityReport::from_reasons(reasons)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zinc_example_is_valid() {
        let s = "COc1ccc(N2CC(C(=O)Oc3cc(C)ccc3C)CC2=O)cc1";
        assert!(check_validity(s).valid);
        assert!(check_validity_with(s, true).valid);
    }

    #[test]
    fn failure_codes() {
        use ValidityCode::*;
        let cases = [
            ("C(C", vec![UnbalancedParen]),
            ("C)C(", vec![UnbalancedParen]),
            ("c1ccccc", vec![UnmatchedRingBond]),
            ("[NH4+", vec![UnbalancedBracket]),
            ("C]", vec![UnbalancedBracket]),
            ("", vec![Empty]),
            ("()", vec![Empty]),
            ("CXC", vec![UnknownToken]),
            ("C1CC(", vec![UnbalancedParen, UnmatchedRingBond]),
        ];
        for (s, want) in cases {
            let r = check_validity(s);
            assert_eq!(r.reasons, want, "{s}");
            assert!(!r.valid);
        }
    }

    #[test]
    fn digits_inside_brackets_are_not_ring_labels() {
        assert!(check_validity("C[NH3+]").valid);
        assert!(check_validity("[13C]C").valid);
    }

    #[test]
    fn strict_mode_checks_valence() {
        assert!(check_validity("CO(C)C").valid);
        let r = check_validity_with("CO(C)C", true);
        assert_eq!(r.reasons, vec![ValidityCode::ValenceViolation]);
        assert!(check_validity_with("CC(=O)O", true).valid);
        assert!(!check_validity_with("C=", true).valid);
        for s in ["Nc", "CcC", "c1ccccc1n"] {
            assert!(check_validity(s).valid, "{s}");
            assert_eq!(check_validity_with(s, true).reasons, vec![ValidityCode::ValenceViolation], "{s}");
        }
        assert!(check_validity_with("c1ccc2ccccc2c1", true).valid);
    }

    #[test]
    fn valid_iff_no_reasons() {
        for s in ["C", "C(", "c1cc", "", "[C", "CC(C)(C)C"] {
            let r = check_validity(s);
            assert_eq!(r.valid, r.reasons.is_empty());
        }
    }
}
