use std::collections::HashMap;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// The 39 SMILES symbols of the ZINC vocabulary, in canonical order.
pub const SMILES_SYMBOLS: [&str; 39] = [
    "1", "2", "3", "4", "5", "6", "7", "8", "9", "+", "-", "=", "#", "(", ")", "[", "]", "H", "B",
    "C", "N", "O", "F", "Si", "P", "S", "Cl", "Br", "Sn", "I", "c", "n", "o", "p", "s", "\\", "/",
    "@", "@@",
];

pub const BOS: usize = 39;
pub const EOS: usize = 40;
pub const PAD: usize = 41;
pub const VOCAB_SIZE: usize = 42;

const SPECIAL_TEXT: [&str; 3] = ["<bos>", "<eos>", "<pad>"];

#[derive(Debug)]
pub struct Vocabulary {
    tokens: Vec<&'static str>,
    token_to_id: HashMap<&'static str, usize>,
}

impl Vocabulary {
    /// Shared instance; construction happens once per process.
    pub fn zinc() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| {
            let tokens: Vec<&'static str> = SMILES_SYMBOLS
                .iter()
                .chain(SPECIAL_TEXT.iter())
                .copied()
                .collect();
            let token_to_id = tokens.iter().enumerate().map(|(i, t)| (*t, i)).collect();
            Vocabulary {
                tokens,
                token_to_id,
            }
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn text(&self, id: usize) -> Option<&'static str> {
        self.tokens.get(id).copied()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.token_to_id.get(token).copied()
    }

    pub fn is_special(id: usize) -> bool {
        id == BOS || id == EOS || id == PAD
    }
}

/// A SMILES string as vocabulary ids, optionally framed by BOS/EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSeq {
    pub ids: Vec<usize>,
    pub framed: bool,
}

impl TokenSeq {
    pub fn unframed(ids: Vec<usize>) -> Self {
        TokenSeq { ids, framed: false }
    }

    /// Wraps the ids in BOS ... EOS.
    pub fn framed(&self) -> TokenSeq {
        if self.framed {
            return self.clone();
        }
        let mut ids = Vec::with_capacity(self.ids.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(&self.ids);
        ids.push(EOS);
        TokenSeq { ids, framed: true }
    }

    /// Symbol ids without BOS/EOS/PAD.
    pub fn symbols(&self) -> impl Iterator<Item = usize> + '_ {
        self.ids.iter().copied().filter(|&i| !Vocabulary::is_special(i))
    }

    /// Number of SMILES symbols, excluding special tokens.
    pub fn symbol_len(&self) -> usize {
        self.symbols().count()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Greedy longest-match tokenization. Two-character symbols win over their
/// one-character prefixes.
pub fn tokenize(s: &str) -> Result<TokenSeq> {
    let vocab = Vocabulary::zinc();
    let mut ids = Vec::with_capacity(s.len());
    let mut pos = 0;
    while pos < s.len() {
        let rest = &s[pos..];
        let two = rest.get(..2).and_then(|t| vocab.id(t).map(|id| (id, 2)));
        let hit = two.or_else(|| {
            let w = rest.chars().next().map_or(1, char::len_utf8);
            rest.get(..w)
                .and_then(|t| vocab.id(t))
                .filter(|&id| !Vocabulary::is_special(id))
                .map(|id| (id, w))
        });
        match hit {
            Some((id, w)) => {
                ids.push(id);
                pos += w;
            }
            None => {
                return Err(Error::UnknownToken {
                    text: s.to_string(),
                    position: pos,
                })
            }
        }
    }
    Ok(TokenSeq::unframed(ids))
}

/// Concatenates token texts, dropping BOS/EOS/PAD.
pub fn detokenize(t: &TokenSeq) -> String {
    let vocab = Vocabulary::zinc();
    t.symbols().filter_map(|id| vocab.text(id)).collect()
}

/// Frames a batch and right-pads it with PAD to the longest member.
pub fn pad_batch(seqs: &[&TokenSeq]) -> (Vec<usize>, usize) {
    let framed: Vec<TokenSeq> = seqs.iter().map(|s| s.framed()).collect();
    let width = framed.iter().map(TokenSeq::len).max().unwrap_or(0);
    let mut out = Vec::with_capacity(width * framed.len());
    for s in &framed {
        out.extend_from_slice(&s.ids);
        out.extend(std::iter::repeat_n(PAD, width - s.len()));
    }
    (out, width)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(t: &TokenSeq) -> Vec<&'static str> {
        let v = Vocabulary::zinc();
        t.ids.iter().map(|&i| v.text(i).unwrap()).collect()
    }

    #[test]
    fn vocabulary_is_dense() {
        let v = Vocabulary::zinc();
        assert_eq!(v.len(), VOCAB_SIZE);
        for id in 0..VOCAB_SIZE {
            assert_eq!(v.id(v.text(id).unwrap()), Some(id));
        }
        for multi in ["Cl", "Br", "Si", "Sn", "@@"] {
            assert!(v.id(multi).is_some(), "{multi}");
        }
    }

    #[test]
    fn longest_match_prefers_two_char_symbols() {
        let t = tokenize("Clc1ccccc1").unwrap();
        assert_eq!(texts(&t), ["Cl", "c", "1", "c", "c", "c", "c", "c", "1"]);
        let t = tokenize("[C@@H]").unwrap();
        assert_eq!(texts(&t), ["[", "C", "@@", "H", "]"]);
        let t = tokenize("[C@H]").unwrap();
        assert_eq!(texts(&t), ["[", "C", "@", "H", "]"]);
    }

    #[test]
    fn zinc_example_frames_to_43_tokens() {
        let s = "COc1ccc(N2CC(C(=O)Oc3cc(C)ccc3C)CC2=O)cc1";
        let hand = [
            "C", "O", "c", "1", "c", "c", "c", "(", "N", "2", "C", "C", "(", "C", "(", "=", "O",
            ")", "O", "c", "3", "c", "c", "(", "C", ")", "c", "c", "c", "3", "C", ")", "C", "C",
            "2", "=", "O", ")", "c", "c", "1",
        ];
        let t = tokenize(s).unwrap();
        assert_eq!(texts(&t), hand);
        assert_eq!(t.len(), 41);
        assert_eq!(t.framed().len(), 43);
    }

    #[test]
    fn unknown_token_reports_position() {
        match tokenize("CCXC") {
            Err(Error::UnknownToken { position, .. }) => assert_eq!(position, 2),
            other => panic!("{other:?}"),
        }
        assert!(tokenize("C<bos>").is_err());
        assert!(tokenize("Cé").is_err());
    }

    #[test]
    fn detokenize_strips_specials() {
        let t = tokenize("Clc1").unwrap();
        assert_eq!(detokenize(&t), "Clc1");
        assert_eq!(detokenize(&t.framed()), "Clc1");
        assert_eq!(detokenize(&TokenSeq::unframed(vec![])), "");
    }

    #[test]
    fn padding_frames_and_fills() {
        let a = tokenize("CC").unwrap();
        let b = tokenize("C").unwrap();
        let (ids, width) = pad_batch(&[&a, &b]);
        assert_eq!(width, 4);
        let c = Vocabulary::zinc().id("C").unwrap();
        assert_eq!(ids, vec![BOS, c, c, EOS, BOS, c, EOS, PAD]);
    }
}
