use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::tape::Tensor;

const V: usize = 42;

fn logits(rng: &mut ChaCha8Rng, rows: usize, scale: f64) -> Tensor {
    Tensor::from_vec(
        rows,
        V,
        (0..rows * V).map(|_| scale * rng.random::<f64>() - scale / 2.0).collect(),
    )
}

fn targets(rng: &mut ChaCha8Rng, batch: usize, len: usize, pad_from: &[usize]) -> Vec<Option<usize>> {
    (0..batch)
        .flat_map(|b| {
            let cut = pad_from[b];
            (0..len)
                .map(|t| (t < cut).then(|| rng.random_range(0..V)))
                .collect::<Vec<_>>()
        })
        .collect()
}

/// Per-row log-softmax written out directly.
fn log_softmax_row(row: &[f64], t: usize) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    row[t] - m - row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn value(f: impl FnOnce(&mut Graph) -> Var) -> f64 {
    let mut g = Graph::new();
    let v = f(&mut g);
    g.scalar(v)
}

#[test]
fn individual_limits_and_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (b, len) = (3, 7);
    let tg = targets(&mut rng, b, len, &[7, 4, 6]);
    // confident and correct
    let mut sure = Tensor::zeros(b * len, V);
    for (r, t) in tg.iter().enumerate() {
        if let Some(t) = t {
            sure.data[r * V + t] = 200.0;
        }
    }
    let l = value(|g| {
        let x = g.constant(sure.clone());
        recon_loss_individual(g, x, &tg, b)
    });
    assert!(l.abs() < 1e-12);
    // uniform: L ln V per sequence
    let full = targets(&mut rng, 2, len, &[len, len]);
    let l = value(|g| {
        let x = g.constant(Tensor::zeros(2 * len, V));
        recon_loss_individual(g, x, &full, 2)
    });
    assert!((l - len as f64 * (V as f64).ln()).abs() < 1e-12);
    // brute force
    let x = logits(&mut rng, b * len, 6.0);
    let want: f64 = -tg
        .iter()
        .enumerate()
        .filter_map(|(r, t)| t.map(|t| log_softmax_row(x.row(r), t)))
        .sum::<f64>()
        / b as f64;
    let got = value(|g| {
        let v = g.constant(x.clone());
        recon_loss_individual(g, v, &tg, b)
    });
    assert!((got - want).abs() < 1e-6);
}

#[test]
fn collaborative_degenerate_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (b, len) = (2, 5);
    let tg = targets(&mut rng, b, len, &[5, 3]);
    let x = logits(&mut rng, b * len, 4.0);
    let ind = value(|g| {
        let v = g.constant(x.clone());
        recon_loss_individual(g, v, &tg, b)
    });
    for k in [1, 3] {
        let col = value(|g| {
            let v = g.constant(x.clone());
            recon_loss_collaborative(g, &vec![v; k], &tg, b)
        });
        assert!((col - ind).abs() < 1e-9, "k={k}");
    }
}

#[test]
fn collaborative_matches_probability_space_and_jensen() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, len, k) = (2, 20, 3);
    for _ in 0..20 {
        let tg = targets(&mut rng, b, len, &[20, 13]);
        let xs: Vec<Tensor> = (0..k).map(|_| logits(&mut rng, b * len, 5.0)).collect();
        let (col, mean_ind) = {
            let mut g = Graph::new();
            let vs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let c = recon_loss_collaborative(&mut g, &vs, &tg, b);
            let inds: Vec<Var> = vs.iter().map(|&v| recon_loss_individual(&mut g, v, &tg, b)).collect();
            let m = mean_of(&mut g, &inds);
            (g.scalar(c), g.scalar(m))
        };
        let mut oracle = 0.0;
        for (r, t) in tg.iter().enumerate() {
            if let Some(t) = t {
                let p: f64 = xs.iter().map(|x| softmax_row(x.row(r))[*t]).sum::<f64>() / k as f64;
                oracle -= p.ln();
            }
        }
        oracle /= b as f64;
        assert!((col - oracle).abs() < 1e-6);
        assert!(col <= mean_ind + 1e-6);
        assert!(mean_ind - col > 1e-3, "disagreeing decoders give a strict gap");
    }
}

#[test]
fn md_interpolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (b, len) = (2, 6);
    let tg = targets(&mut rng, b, len, &[6, 2]);
    let xs: Vec<Tensor> = (0..2).map(|_| logits(&mut rng, b * len, 3.0)).collect();
    let eval = |alpha: f64| {
        let mut g = Graph::new();
        let vs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
        let md = recon_loss_md(&mut g, &vs, &tg, b, alpha);
        let inds: Vec<f64> = md.individual.iter().map(|&v| g.scalar(v)).collect();
        (g.scalar(md.objective), g.scalar(md.collaborative), inds)
    };
    let (o0, col, inds) = eval(0.0);
    let mean = (inds[0] + inds[1]) / 2.0;
    assert!((o0 - mean).abs() < 1e-12);
    let (o1, _, _) = eval(1.0);
    assert!((o1 - col).abs() < 1e-12);
    let (oh, _, _) = eval(0.5);
    assert!((oh - 0.5 * (mean + col)).abs() < 1e-9);
}

#[test]
fn collaborative_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let tg = targets(&mut rng, 1, 4, &[4]);
    let xs: Vec<Tensor> = (0..2).map(|_| logits(&mut rng, 4, 3.0)).collect();
    let f = |xs: &[Tensor]| {
        value(|g| {
            let vs: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
            recon_loss_md(g, &vs, &tg, 1, 0.3).objective
        })
    };
    let mut g = Graph::new();
    let vs: Vec<Var> = xs.iter().map(|x| g.param(x.clone())).collect();
    let l = recon_loss_md(&mut g, &vs, &tg, 1, 0.3).objective;
    let grads = g.backward(l);
    let h = 1e-6;
    for (k, &v) in vs.iter().enumerate() {
        for i in (0..4 * V).step_by(7) {
            let mut up = xs.clone();
            up[k].data[i] += h;
            let mut dn = xs.clone();
            dn[k].data[i] -= h;
            let num = (f(&up) - f(&dn)) / (2.0 * h);
            assert!((num - grads.wrt(v).unwrap()[i]).abs() < 1e-7);
        }
    }
}

fn kld(mu: &[f64], ls: &[f64]) -> f64 {
    value(|g| {
        let m = g.constant(Tensor::from_vec(1, mu.len(), mu.to_vec()));
        let s = g.constant(Tensor::from_vec(1, ls.len(), ls.to_vec()));
        kld_regularizer(g, m, s)
    })
}

#[test]
fn kld_closed_form_cases() {
    assert_eq!(kld(&[0.0; 5], &[0.0; 5]), 0.0);
    assert!((kld(&[1.0], &[0.0]) - 0.5).abs() < 1e-15);
    // batch mean
    let two = value(|g| {
        let m = g.constant(Tensor::from_vec(2, 1, vec![1.0, 0.0]));
        let s = g.constant(Tensor::zeros(2, 1));
        kld_regularizer(g, m, s)
    });
    assert!((two - 0.25).abs() < 1e-15);
}

#[test]
fn kld_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mu = [0.8, -1.2, 0.3];
    let ls: [f64; 3] = [-0.5, 0.4, 0.1];
    let n = 1_000_000;
    let mut acc = 0.0;
    for _ in 0..n {
        for d in 0..3 {
            let e: f64 = rng.sample(StandardNormal);
            let z = mu[d] + ls[d].exp() * e;
            // log q(z) - log p(z)
            acc += -0.5 * e * e - ls[d] + 0.5 * z * z;
        }
    }
    let mc = acc / n as f64;
    let exact = kld(&mu, &ls);
    assert!((mc - exact).abs() / exact < 0.01, "{mc} vs {exact}");
}

#[test]
fn controller_holds_at_setpoint() {
    let mut c = BetaController::with_beta(&LossConfig::default(), 0.4);
    let first = c.step_beta(15.0);
    for _ in 0..100 {
        assert_eq!(c.step_beta(15.0), first);
    }
}

#[test]
fn controller_direction() {
    let cfg = LossConfig::default();
    let mut up = BetaController::with_beta(&cfg, 0.5);
    let mut down = up.clone();
    let (mut bu, mut bd) = (0.5, 0.5);
    for _ in 0..50 {
        let nu = up.step_beta(40.0);
        let nd = down.step_beta(2.0);
        assert!(nu >= bu && nd <= bd);
        (bu, bd) = (nu, nd);
    }
    assert!(bu > 0.5 && bd < 0.5);
    for _ in 0..20_000 {
        up.step_beta(1e6);
        down.step_beta(0.0);
    }
    assert_eq!(up.beta, 1.0);
    assert!(down.beta < 1e-3 && down.beta >= 0.0);
}

#[test]
fn controller_settles_on_inverse_plant() {
    let mut c = BetaController::with_beta(&LossConfig::default(), 1.0);
    let run = simulate_plant(&mut c, 10.0, 2000);
    let last = run.last().unwrap();
    assert!((last.kld - 15.0).abs() < 0.5, "{last:?}");
    let gaps: Vec<f64> = run.iter().map(|s| (s.ema - 15.0).abs()).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0] + 1e-12));
}

#[test]
fn anneal_schedule() {
    assert_eq!(k_anneal(0, 10), 0.0);
    assert_eq!(k_anneal(5, 10), 0.5);
    assert_eq!(k_anneal(10, 10), 1.0);
    assert_eq!(k_anneal(500, 10), 1.0);
    assert_eq!(k_anneal(0, 0), 1.0);
}

#[test]
fn total_loss_arithmetic() {
    assert_eq!(total_loss_value(3.2, 9.0, 0.0), 3.2);
    assert!((total_loss_value(4.482, 15.068, 1.0) - 19.550).abs() < 1e-9);
    let (r, k) = (2.0, 6.0);
    let at = |b: f64| {
        value(|g| {
            let rv = g.constant(Tensor::scalar(r));
            let kv = g.constant(Tensor::scalar(k));
            total_loss(g, rv, kv, b)
        })
    };
    let (a, b, c) = (at(0.1), at(0.4), at(0.7));
    assert!(((b - a) - (c - b)).abs() < 1e-12);
    assert!((a - total_loss_value(r, k, 0.1)).abs() < 1e-15);
}

#[test]
fn config_validation() {
    assert!(LossConfig::default().validate().is_ok());
    let bad = LossConfig {
        alpha: 1.5,
        ..LossConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = LossConfig {
        kld_target: 0.0,
        ..LossConfig::default()
    };
    assert!(bad.validate().is_err());
}
