//! SMILES tokenization, structural validity, and molecular weight over the
//! ZINC vocabulary.

pub mod graph;
mod validity;
mod vocab;
mod weight;

pub use validity::{check_validity, check_validity_with, ValidityCode, ValidityReport};
pub use vocab::{
    detokenize, pad_batch, tokenize, TokenSeq, Vocabulary, BOS, EOS, PAD, SMILES_SYMBOLS,
    VOCAB_SIZE,
};
pub use weight::{atomic_weight, molecular_weight, molecular_weight_with};
