//! Closed loop between the KLD controller and a toy plant whose KLD is
//! proportional to 1/beta.

use mdvae::losses::{simulate_plant, BetaController, LossConfig};

fn main() {
    let cfg = LossConfig::default();
    let mut ctrl = BetaController::with_beta(&cfg, 1.0);
    let trace = simulate_plant(&mut ctrl, 10.0, 2000);
    for (i, s) in trace.iter().enumerate().filter(|(i, _)| i % 200 == 0 || *i == 1999) {
        println!("step {i:>5}  beta {:.4}  kld {:>8.3}  ema {:>8.3}", s.beta, s.kld, s.ema);
    }
    let last = trace.last().unwrap();
    println!("setpoint {}: final error {:.3}", cfg.kld_target, (last.kld - cfg.kld_target).abs());
}
