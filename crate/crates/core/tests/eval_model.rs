use mdvae::data::{generate_corpus, ConditionStats, Corpus};
use mdvae::eval::{inter_decoder_kld, reconstruction_success_rate};
use mdvae::generate::EnsembleSpace;
use mdvae::model::{Model, ModelConfig};
use mdvae::Error;

fn small(k: usize) -> ModelConfig {
    ModelConfig {
        k,
        ..ModelConfig::single(16, 1, 2, 32, 8, 40)
    }
}

fn data() -> (Corpus, ConditionStats) {
    let c = generate_corpus(40, 12, 40);
    let s = ConditionStats::from_corpus(&c).unwrap();
    (c, s)
}

#[test]
fn identical_decoders_have_zero_divergence() {
    let (c, s) = data();
    let mut m = Model::init(small(3), 1).unwrap();
    let src = m.decoder_param_indices(0);
    for k in 1..3 {
        let dst = m.decoder_param_indices(k);
        for (&i, &j) in src.iter().zip(&dst) {
            let t = m.params().tensors[i].clone();
            m.params_mut().tensors[j] = t;
        }
    }
    let d = inter_decoder_kld(&m, &c, &s, 16).unwrap();
    assert!(d.abs() < 1e-12, "{d}");

    let fresh = Model::init(small(3), 1).unwrap();
    assert!(inter_decoder_kld(&fresh, &c, &s, 16).unwrap() > 0.0);
}

#[test]
fn divergence_needs_two_decoders_and_data() {
    let (c, s) = data();
    let single = Model::init(small(1), 1).unwrap();
    assert!(matches!(inter_decoder_kld(&single, &c, &s, 16), Err(Error::SingleDecoder)));
    let two = Model::init(small(2), 1).unwrap();
    assert!(matches!(inter_decoder_kld(&two, &c.head(0), &s, 16), Err(Error::EmptyCorpus)));
}

#[test]
fn divergence_does_not_depend_on_batching() {
    let (c, s) = data();
    let m = Model::init(small(2), 4).unwrap();
    let a = inter_decoder_kld(&m, &c, &s, 7).unwrap();
    let b = inter_decoder_kld(&m, &c, &s, 40).unwrap();
    assert!((a - b).abs() < 1e-9 * a.max(1.0), "{a} vs {b}");
}

#[test]
fn untrained_model_rarely_reconstructs() {
    let (c, s) = data();
    for k in [1, 3] {
        let m = Model::init(small(k), 2).unwrap();
        for space in [EnsembleSpace::PreSoftmax, EnsembleSpace::PostSoftmax] {
            let r = reconstruction_success_rate(&m, &c, &s, 16, space).unwrap();
            assert_eq!(r.molecules, c.len());
            assert!(r.molecule_rate < 0.05, "{r:?}");
            assert!((0.0..=1.0).contains(&r.token_accuracy));
        }
    }
    let m = Model::init(small(1), 2).unwrap();
    assert!(matches!(
        reconstruction_success_rate(&m, &c.head(0), &s, 16, EnsembleSpace::PreSoftmax),
        Err(Error::EmptyCorpus)
    ));
}
