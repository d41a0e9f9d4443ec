//! Finite-difference check of the tape gradients on a tiny two-decoder model.

use mdvae::data::{generate_corpus, ConditionStats};
use mdvae::gradcheck::check_gradients;
use mdvae::model::{Batch, Model, ModelConfig};
use mdvae::train::{forward, Variant};

fn main() -> mdvae::Result<()> {
    let cfg = ModelConfig {
        k: 2,
        ..ModelConfig::single(8, 1, 2, 16, 4, 30)
    };
    let model = Model::init(cfg, 3)?;
    let corpus = generate_corpus(4, 1, 30);
    let stats = ConditionStats::from_corpus(&generate_corpus(50, 1, 30))?;
    let refs: Vec<_> = corpus.records.iter().collect();
    let batch = Batch::from_records(&refs, &stats)?;
    let spec = Variant::MdCol.spec(2);

    let f = forward(&model, spec, 0.5, &batch, &mut mdvae::rng::substream(0, "z"), true)?;
    let grads = f.graph.backward(f.objective);
    let analytic: Vec<Vec<f64>> = f
        .binding
        .vars()
        .iter()
        .map(|&v| grads.wrt(v).map(<[f64]>::to_vec).unwrap_or_default())
        .collect();
    let report = check_gradients(model.params(), &analytic, 6, 1e-5, |p| {
        let m = Model::from_params(model.config().clone(), p.clone()).unwrap();
        let f = forward(&m, spec, 0.5, &batch, &mut mdvae::rng::substream(0, "z"), false).unwrap();
        f.graph.scalar(f.objective)
    });
    println!(
        "{} coordinates checked, max relative error {:.2e} at {:?}",
        report.checked, report.max_rel_error, report.worst
    );
    Ok(())
}
