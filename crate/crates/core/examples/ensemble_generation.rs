//! Samples molecules from a checkpoint under one anchored condition and
//! contrasts pre- and post-softmax ensembling.
//!
//! cargo run --release --example ensemble_generation -- runs/example/checkpoint.bin

use mdvae::data::Property;
use mdvae::eval::{generative_efficiency, label_generations, OracleSet};
use mdvae::generate::{generate, EnsembleSpace, SamplerConfig};
use mdvae::rng;
use mdvae::train::load_checkpoint;

fn main() -> mdvae::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "runs/example/checkpoint.bin".into());
    let state = load_checkpoint(path.as_ref())?;
    let stats = &state.stats;
    let independent = state.config.spec().independent_prior;
    let target = stats.mean[0];

    let mut cond_rng = rng::substream(1, "example/conditions");
    let conds: Vec<_> = (0..200)
        .map(|_| stats.sample_condition(Property::MolWt, target, &mut cond_rng))
        .collect();
    let normed: Vec<[f64; 3]> = conds.iter().map(|c| stats.normalize(c).0).collect();

    for space in [EnsembleSpace::PreSoftmax, EnsembleSpace::PostSoftmax] {
        let cfg = SamplerConfig {
            ensemble_space: space,
            max_len: state.model.config().max_len,
            ..SamplerConfig::default()
        };
        let mut r = rng::substream(1, rng::DECODE);
        let out = generate(&state.model, &normed, &cfg, independent, &mut r)?;
        let smiles: Vec<String> = out.into_iter().map(|g| g.smiles).collect();
        let recs = label_generations(&smiles, conds[0], &Default::default(), &OracleSet::default());
        println!("{space:?}: efficiency {:.3}", generative_efficiency(&recs));
        for r in recs.iter().filter(|r| r.valid).take(5) {
            println!("  {}  molwt {:.1}", r.smiles, r.properties[0].unwrap_or(f64::NAN));
        }
    }
    Ok(())
}
