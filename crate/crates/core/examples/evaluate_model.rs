//! Reconstruction rates and decoder diversity of a checkpoint on fresh
//! synthetic molecules.
//!
//! cargo run --release --example evaluate_model -- runs/example/checkpoint.bin

use mdvae::data::generate_corpus;
use mdvae::eval::{inter_decoder_kld, reconstruction_success_rate};
use mdvae::generate::EnsembleSpace;
use mdvae::train::load_checkpoint;

fn main() -> mdvae::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "runs/example/checkpoint.bin".into());
    let state = load_checkpoint(path.as_ref())?;
    let max_len = state.model.config().max_len;
    let seen = generate_corpus(1000, 0, max_len).head(300);
    let unseen = generate_corpus(1200, 99, max_len).excluding(&generate_corpus(1000, 0, max_len));

    for (name, corpus) in [("seen", &seen), ("unseen", &unseen)] {
        let r = reconstruction_success_rate(&state.model, corpus, &state.stats, 128, EnsembleSpace::PreSoftmax)?;
        println!(
            "{name:<7} {} molecules: success {:.3}  token accuracy {:.3}",
            r.molecules, r.molecule_rate, r.token_accuracy
        );
    }
    if state.model.config().k > 1 {
        let d = inter_decoder_kld(&state.model, &seen, &state.stats, 128)?;
        println!("mean pairwise symmetric KLD between decoders {d:.4}");
    }
    Ok(())
}
