//! Tokenizes SMILES strings and reports structural validity.

use mdvae::smiles::{check_validity_with, detokenize, tokenize, Vocabulary};

fn main() {
    let inputs: Vec<String> = std::env::args().skip(1).collect();
    let inputs = if inputs.is_empty() {
        ["COc1ccc(N2CC(C(=O)Oc3cc(C)ccc3C)CC2=O)cc1", "C[NH3+]", "c1ccccc", "CO(C)C", "CXC"]
            .map(String::from)
            .to_vec()
    } else {
        inputs
    };
    let vocab = Vocabulary::zinc();
    for s in &inputs {
        match tokenize(s) {
            Ok(seq) => {
                let toks: Vec<_> = seq.ids.iter().map(|&i| vocab.text(i).unwrap()).collect();
                assert_eq!(&detokenize(&seq), s);
                println!("{s}\n  {} tokens: {}", seq.len(), toks.join(" "));
            }
            Err(e) => println!("{s}\n  {e}"),
        }
        let lenient = check_validity_with(s, false);
        let strict = check_validity_with(s, true);
        println!("  structural: {:?}  strict: {:?}", lenient.reasons, strict.reasons);
    }
}
