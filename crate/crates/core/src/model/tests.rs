use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::gradcheck::check_gradients;
use crate::smiles::tokenize;

fn tiny(k: usize) -> ModelConfig {
    ModelConfig {
        k,
        ..ModelConfig::single(8, 2, 2, 16, 4, 16)
    }
}

fn batch(smiles: &[&str]) -> Batch {
    let seqs: Vec<_> = smiles.iter().map(|s| tokenize(s).unwrap()).collect();
    let refs: Vec<_> = seqs.iter().collect();
    let cond = (0..smiles.len())
        .map(|i| [0.3 * i as f64, -0.5, 1.0])
        .collect();
    Batch::new(&refs, cond).unwrap()
}

fn logits_of(model: &Model, b: &Batch, k: usize, z: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let p = model.bind(&mut g, false);
    let zv = g.constant(z.clone());
    let y = g.constant(b.cond_tensor());
    let l = model
        .decode_logits(&mut g, &p, k, zv, y, &b.decoder_inputs(), b.width - 1)
        .unwrap();
    g.value(l).clone()
}

#[test]
fn batch_framing() {
    let b = batch(&["CC", "C"]);
    assert_eq!(b.width, 4);
    assert_eq!(b.decoder_inputs().len(), 2 * 3);
    let t = b.targets();
    assert_eq!(t.iter().filter(|t| t.is_some()).count(), 3 + 2);
    assert!(Batch::new(&[], vec![]).is_err());
}

#[test]
fn identical_rows_encode_identically() {
    let m = Model::init(tiny(1), 1).unwrap();
    let mut b = batch(&["c1ccccc1O", "c1ccccc1O"]);
    b.cond[1] = b.cond[0];
    let e = m.encode_values(&b);
    assert_eq!(e.mu.row(0), e.mu.row(1));
    assert_eq!(e.log_sigma.row(0), e.log_sigma.row(1));
    assert!(e.mu.data.iter().all(|v| v.is_finite()));
}

#[test]
fn zero_head_gives_standard_posterior() {
    let mut m = Model::init(tiny(1), 2).unwrap();
    for name in ["mu.w", "mu.b", "log_sigma.w", "log_sigma.b"] {
        let t = m.params_mut().get_mut(&format!("encoder.{name}")).unwrap();
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    let e = m.encode_values(&batch(&["CCO", "N"]));
    assert!(e.mu.data.iter().chain(&e.log_sigma.data).all(|&v| v == 0.0));
}

#[test]
fn padding_does_not_leak_into_the_posterior() {
    let m = Model::init(tiny(1), 3).unwrap();
    let alone = m.encode_values(&batch(&["CO"]));
    let mut padded = batch(&["CO", "CCCCCCO"]);
    padded.cond[0] = [0.0, -0.5, 1.0];
    let e = m.encode_values(&padded);
    for (a, b) in alone.mu.row(0).iter().zip(e.mu.row(0)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn latent_modes() {
    let mut g = Graph::new();
    let mu = g.param(Tensor::from_vec(2, 3, vec![0.5, -1.0, 2.0, 0.0, 0.1, 0.2]));
    let ls = g.param(Tensor::from_vec(2, 3, vec![-0.3; 6]));
    let enc = EncoderVars { mu, log_sigma: ls };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let det = sample_latents(&mut g, enc, LatentMode::Deterministic, 3, &mut rng);
    assert!(det.iter().all(|&z| g.value(z) == g.value(mu)));
    let sh = sample_latents(&mut g, enc, LatentMode::Shared, 3, &mut rng);
    assert!(sh.iter().all(|&z| g.value(z) == g.value(sh[0])));
    let pd = sample_latents(&mut g, enc, LatentMode::PerDecoder, 3, &mut rng);
    assert_ne!(g.value(pd[0]), g.value(pd[1]));
    // gradients reach both posterior parameters
    let s = g.sum(pd[1]);
    let grads = g.backward(s);
    assert!(grads.wrt(mu).unwrap().iter().all(|&v| v == 1.0));
    assert!(grads.wrt(ls).unwrap().iter().any(|&v| v != 0.0));

    let tight = g.constant(Tensor::from_vec(2, 3, vec![-1e3; 6]));
    let enc = EncoderVars {
        mu,
        log_sigma: tight,
    };
    let pd = sample_latents(&mut g, enc, LatentMode::PerDecoder, 4, &mut rng);
    assert!(pd.iter().all(|&z| g.value(z) == g.value(mu)));
}

#[test]
fn per_decoder_draws_center_on_mu() {
    let d = 100;
    let rows = 1000;
    let mu_row: Vec<f64> = (0..d).map(|i| (i as f64 * 0.37).sin()).collect();
    let ls_row: Vec<f64> = (0..d).map(|i| -1.0 + 0.01 * i as f64).collect();
    let tile = |r: &[f64]| Tensor::from_vec(rows, d, r.repeat(rows));
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut sum = vec![0.0; d];
    let mut n = 0usize;
    for _ in 0..50 {
        let mut g = Graph::new();
        let mu = g.constant(tile(&mu_row));
        let log_sigma = g.constant(tile(&ls_row));
        let zs = sample_latents(&mut g, EncoderVars { mu, log_sigma }, LatentMode::PerDecoder, 2, &mut rng);
        for z in zs {
            for r in 0..rows {
                for (s, v) in sum.iter_mut().zip(g.value(z).row(r)) {
                    *s += v;
                }
            }
            n += rows;
        }
    }
    assert_eq!(n, 100_000);
    for i in 0..d {
        let se = ls_row[i].exp() / (n as f64).sqrt();
        let mean = sum[i] / n as f64;
        assert!((mean - mu_row[i]).abs() < 4.0 * se, "dim {i}: {mean} vs {}", mu_row[i]);
    }
}

#[test]
fn decoder_is_causal() {
    let m = Model::init(tiny(2), 4).unwrap();
    let a = batch(&["CCOc1ccccc1"]);
    let mut b = a.clone();
    let cut = 5;
    for t in cut..b.width {
        b.ids[t] = crate::smiles::Vocabulary::zinc().id("N").unwrap();
    }
    let z = Tensor::from_vec(1, 4, vec![0.1, -0.2, 0.3, 0.0]);
    for k in 0..2 {
        let la = logits_of(&m, &a, k, &z);
        let lb = logits_of(&m, &b, k, &z);
        // input position t sees inputs <= t, all unchanged before `cut`
        for t in 0..cut {
            assert_eq!(la.row(t), lb.row(t), "position {t}");
        }
        assert_ne!(la.row(cut), lb.row(cut));
    }
}

#[test]
fn decoders_are_parameter_independent() {
    let mut m = Model::init(tiny(3), 5).unwrap();
    let b = batch(&["CC(=O)O", "c1ccncc1"]);
    let z = Tensor::from_vec(2, 4, vec![0.2; 8]);
    let before: Vec<_> = (0..3).map(|k| logits_of(&m, &b, k, &z)).collect();
    for i in m.decoder_param_indices(1) {
        m.params_mut().tensors[i].data.iter_mut().for_each(|v| *v += 0.05);
    }
    assert_eq!(logits_of(&m, &b, 0, &z), before[0]);
    assert_eq!(logits_of(&m, &b, 2, &z), before[2]);
    assert_ne!(logits_of(&m, &b, 1, &z), before[1]);
    // distinct decoders start distinct
    assert_ne!(before[0], before[2]);
}

#[test]
fn single_decoder_stream_is_independent_of_k() {
    let one = Model::init(tiny(1), 6).unwrap();
    let again = Model::init(tiny(1), 6).unwrap();
    assert_eq!(one.params(), again.params());
    let three = Model::init(tiny(3), 6).unwrap();
    for name in ["encoder.layer0.q.w", "decoder0.out.w", "decoder0.tok_emb"] {
        assert_eq!(one.params().get(name), three.params().get(name), "{name}");
    }
}

#[test]
fn shape_errors() {
    let m = Model::init(tiny(2), 7).unwrap();
    let b = batch(&["CC"]);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false);
    let z = g.constant(Tensor::zeros(1, 4));
    let y = g.constant(b.cond_tensor());
    let ids = b.decoder_inputs();
    assert!(m.decode_logits(&mut g, &p, 2, z, y, &ids, ids.len()).is_err());
    assert!(m.decode_logits(&mut g, &p, 0, z, y, &ids, ids.len() + 1).is_err());
    let bad_z = g.constant(Tensor::zeros(1, 5));
    assert!(m.decode_logits(&mut g, &p, 0, bad_z, y, &ids, ids.len()).is_err());
    assert!(Model::from_params(tiny(3), m.params().clone()).is_err());
}

fn encoder_probe(m: &Model, store: &ParamStore, b: &Batch, train: bool) -> (f64, Option<Vec<Vec<f64>>>) {
    let model = Model::from_params(m.config().clone(), store.clone()).unwrap();
    let mut g = Graph::new();
    let p = model.bind(&mut g, train);
    let e = model.encode(&mut g, &p, b);
    let w = g.constant(Tensor::from_vec(
        b.size,
        4,
        (0..b.size * 4).map(|i| (i as f64 * 0.7).cos()).collect(),
    ));
    let a = g.mul(e.mu, w);
    let s1 = g.sum(a);
    let s2 = g.sum(e.log_sigma);
    let s2 = g.scale(s2, 0.3);
    let loss = g.add(s1, s2);
    let value = g.scalar(loss);
    let grads = train.then(|| {
        let gr = g.backward(loss);
        p.vars()
            .iter()
            .map(|&v| gr.wrt(v).map(<[f64]>::to_vec).unwrap_or_default())
            .collect()
    });
    (value, grads)
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let m = Model::init(tiny(1), 8).unwrap();
    let b = batch(&["CC(=O)Nc1ccc(O)cc1", "CCN"]);
    let (_, grads) = encoder_probe(&m, m.params(), &b, true);
    let grads = grads.unwrap();
    let enc: Vec<Vec<f64>> = m
        .params()
        .names
        .iter()
        .zip(&grads)
        .map(|(n, g)| if n.starts_with("encoder") { g.clone() } else { vec![] })
        .collect();
    let r = check_gradients(m.params(), &enc, 6, 1e-5, |s| encoder_probe(&m, s, &b, false).0);
    assert!(r.checked > 100);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn decoder_gradients_match_finite_differences() {
    let m = Model::init(tiny(2), 9).unwrap();
    let b = batch(&["c1ccccc1Cl", "OCC#N"]);
    let z = Tensor::from_vec(2, 4, vec![0.3, -0.1, 0.5, 0.9, -0.4, 0.2, 0.0, 0.1]);
    let probe = |store: &ParamStore, train: bool| {
        let model = Model::from_params(m.config().clone(), store.clone()).unwrap();
        let mut g = Graph::new();
        let p = model.bind(&mut g, train);
        let zv = g.constant(z.clone());
        let y = g.constant(b.cond_tensor());
        let l = model
            .decode_logits(&mut g, &p, 1, zv, y, &b.decoder_inputs(), b.width - 1)
            .unwrap();
        let lp = g.token_log_prob(l, &b.targets());
        let s = g.sum(lp);
        let loss = g.scale(s, -1.0);
        let grads = train.then(|| {
            let gr = g.backward(loss);
            p.vars()
                .iter()
                .map(|&v| gr.wrt(v).map(<[f64]>::to_vec).unwrap_or_default())
                .collect::<Vec<_>>()
        });
        (g.scalar(loss), grads)
    };
    let grads = probe(m.params(), true).1.unwrap();
    let dec1 = m.decoder_param_indices(1);
    assert!(dec1.iter().all(|&i| !grads[i].is_empty()));
    assert!(m.decoder_param_indices(0).iter().all(|&i| grads[i].iter().all(|&v| v == 0.0) || grads[i].is_empty()));
    let r = check_gradients(m.params(), &grads, 6, 1e-5, |s| probe(s, false).0);
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}
