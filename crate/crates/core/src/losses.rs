//! Reconstruction objectives, the Gaussian KL regularizer, and β schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Graph, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSchedule {
    KAnneal,
    Controller,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub kld_target: f64,
    pub beta_schedule: BetaSchedule,
    pub kp: f64,
    pub ki: f64,
    /// EMA factor applied to the observed KLD before the controller.
    pub smoothing: f64,
    /// Ramp length for k-annealing; `None` means 10% of the run.
    pub anneal_steps: Option<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            alpha: 0.5,
            kld_target: 15.0,
            beta_schedule: BetaSchedule::Controller,
            kp: 0.01,
            ki: 0.0001,
            smoothing: 0.99,
            anneal_steps: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.kld_target > 0.0) {
            return Err(Error::Config("kld_target must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.smoothing) {
            return Err(Error::Config("smoothing must lie in [0, 1)".into()));
        }
        if self.kp < 0.0 || self.ki < 0.0 {
            return Err(Error::Config("controller gains must be non-negative".into()));
        }
        Ok(())
    }
}

/// Summed negative log-likelihood over non-PAD targets, averaged over `batch`.
pub fn recon_loss_individual(
    g: &mut Graph,
    logits: Var,
    targets: &[Option<usize>],
    batch: usize,
) -> Var {
    let lp = g.token_log_prob(logits, targets);
    let s = g.sum(lp);
    g.scale(s, -1.0 / batch as f64)
}

/// `-log mean_k p_k`, factorized per position as a log-mean-exp of the
/// decoders' token log-probabilities.
pub fn recon_loss_collaborative(
    g: &mut Graph,
    logit_sets: &[Var],
    targets: &[Option<usize>],
    batch: usize,
) -> Var {
    let lps: Vec<Var> = logit_sets
        .iter()
        .map(|&l| g.token_log_prob(l, targets))
        .collect();
    collaborative_from_log_probs(g, &lps, batch)
}

fn collaborative_from_log_probs(g: &mut Graph, lps: &[Var], batch: usize) -> Var {
    let mixed = g.log_mean_exp(lps);
    let s = g.sum(mixed);
    g.scale(s, -1.0 / batch as f64)
}

/// Terms of the interpolated objective.
#[derive(Debug, Clone)]
pub struct MdLoss {
    pub objective: Var,
    pub collaborative: Var,
    pub individual: Vec<Var>,
}

/// `alpha * collaborative + (1 - alpha) / K * sum_k individual_k`.
pub fn recon_loss_md(
    g: &mut Graph,
    logit_sets: &[Var],
    targets: &[Option<usize>],
    batch: usize,
    alpha: f64,
) -> MdLoss {
    let lps: Vec<Var> = logit_sets
        .iter()
        .map(|&l| g.token_log_prob(l, targets))
        .collect();
    let collaborative = collaborative_from_log_probs(g, &lps, batch);
    let individual: Vec<Var> = lps
        .iter()
        .map(|&lp| {
            let s = g.sum(lp);
            g.scale(s, -1.0 / batch as f64)
        })
        .collect();
    let mean = mean_of(g, &individual);
    let a = g.scale(collaborative, alpha);
    let b = g.scale(mean, 1.0 - alpha);
    let objective = g.add(a, b);
    MdLoss {
        objective,
        collaborative,
        individual,
    }
}

/// Arithmetic mean of scalar nodes.
pub fn mean_of(g: &mut Graph, xs: &[Var]) -> Var {
    let mut acc = xs[0];
    for &x in &xs[1..] {
        acc = g.add(acc, x);
    }
    if xs.len() == 1 {
        acc
    } else {
        g.scale(acc, 1.0 / xs.len() as f64)
    }
}

/// Batch mean of `0.5 * sum_d (mu^2 + sigma^2 - 2 log sigma - 1)`.
pub fn kld_regularizer(g: &mut Graph, mu: Var, log_sigma: Var) -> Var {
    g.gaussian_kld(mu, log_sigma)
}

/// `recon + beta * kld` on the graph.
pub fn total_loss(g: &mut Graph, recon: Var, kld: Var, beta: f64) -> Var {
    let r = g.scale(kld, beta);
    g.add(recon, r)
}

/// Scalar form of [`total_loss`].
pub fn total_loss_value(recon: f64, kld: f64, beta: f64) -> f64 {
    recon + beta * kld
}

/// Linear ramp from 0 to 1 over `anneal_steps`, then flat.
pub fn k_anneal(step: usize, anneal_steps: usize) -> f64 {
    if anneal_steps == 0 {
        1.0
    } else {
        (step as f64 / anneal_steps as f64).min(1.0)
    }
}

/// PI feedback on the smoothed KLD. The proportional term is a sigmoid of
/// the error, the integral term is clamped to `[0, 1]` against windup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaController {
    pub beta: f64,
    pub integral: f64,
    pub ema: Option<f64>,
    pub target: f64,
    pub kp: f64,
    pub ki: f64,
    pub smoothing: f64,
}

impl BetaController {
    pub fn new(cfg: &LossConfig) -> Self {
        BetaController {
            beta: 0.0,
            integral: 0.0,
            ema: None,
            target: cfg.kld_target,
            kp: cfg.kp,
            ki: cfg.ki,
            smoothing: cfg.smoothing,
        }
    }

    /// Controller whose integral term starts at `beta0`.
    pub fn with_beta(cfg: &LossConfig, beta0: f64) -> Self {
        let beta0 = beta0.clamp(0.0, 1.0);
        BetaController {
            beta: beta0,
            integral: beta0,
            ..BetaController::new(cfg)
        }
    }

    /// Feeds one observation and returns the new β.
    pub fn step_beta(&mut self, observed_kld: f64) -> f64 {
        let ema = match self.ema {
            None => observed_kld,
            Some(prev) => self.smoothing * prev + (1.0 - self.smoothing) * observed_kld,
        };
        self.ema = Some(ema);
        let e = self.target - ema;
        let p = self.kp / (1.0 + e.exp());
        self.integral = (self.integral - self.ki * e).clamp(0.0, 1.0);
        self.beta = (p + self.integral).clamp(0.0, 1.0);
        self.beta
    }

    pub fn gap(&self) -> Option<f64> {
        self.ema.map(|m| (m - self.target).abs())
    }
}

/// One step of a closed-loop run against a synthetic plant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantStep {
    pub beta: f64,
    pub kld: f64,
    pub ema: f64,
}

/// Runs `ctrl` against the plant `KLD = c / beta` for `steps` steps,
/// starting from the controller's current β.
pub fn simulate_plant(ctrl: &mut BetaController, c: f64, steps: usize) -> Vec<PlantStep> {
    let mut beta = ctrl.beta;
    (0..steps)
        .map(|_| {
            let kld = c / beta.max(1e-6);
            beta = ctrl.step_beta(kld);
            PlantStep {
                beta,
                kld,
                ema: ctrl.ema.unwrap_or(kld),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests;
