use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::smiles::VOCAB_SIZE;

/// Architecture hyperparameters. The encoder runs at `d_model`/`d_ff`; each
/// of the `k` decoders runs at `dec_d_model`/`dec_d_ff`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub d_z: usize,
    pub d_cond: usize,
    pub k: usize,
    pub max_len: usize,
    pub vocab_size: usize,
    pub dec_d_model: usize,
    pub dec_d_ff: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::single(128, 3, 4, 512, 100, 120)
    }
}

impl ModelConfig {
    /// One decoder as wide as the encoder.
    pub fn single(
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        d_ff: usize,
        d_z: usize,
        max_len: usize,
    ) -> Self {
        ModelConfig {
            d_model,
            n_layers,
            n_heads,
            d_ff,
            d_z,
            d_cond: 3,
            k: 1,
            max_len,
            vocab_size: VOCAB_SIZE,
            dec_d_model: d_model,
            dec_d_ff: d_ff,
        }
    }

    /// Small preset that trains in seconds on one core.
    pub fn toy() -> Self {
        ModelConfig::single(32, 2, 4, 64, 16, 48)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.k == 0 {
            return bad("k must be at least 1");
        }
        if self.d_z == 0 || self.n_layers == 0 || self.max_len == 0 {
            return bad("d_z, n_layers and max_len must be positive");
        }
        if self.n_heads == 0
            || !self.d_model.is_multiple_of(self.n_heads)
            || !self.dec_d_model.is_multiple_of(self.n_heads)
        {
            return bad("model widths must be divisible by n_heads");
        }
        if self.d_ff == 0 || self.dec_d_ff == 0 {
            return bad("feed-forward widths must be positive");
        }
        if self.d_cond != 3 {
            return bad("d_cond must be 3");
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must match the SMILES vocabulary");
        }
        Ok(())
    }

    /// Trainable scalar count implied by this configuration.
    pub fn param_count(&self) -> usize {
        super::params::layout(self)
            .specs
            .iter()
            .map(|s| s.rows * s.cols)
            .sum()
    }

    /// Same encoder, `k` decoders narrowed so the total parameter count
    /// stays close to the `k = 1` model built from `self`.
    pub fn matched(&self, k: usize) -> ModelConfig {
        let base = ModelConfig {
            k: 1,
            dec_d_model: self.d_model,
            dec_d_ff: self.d_ff,
            ..self.clone()
        };
        if k <= 1 {
            return base;
        }
        let target = base.param_count() as f64;
        let ratio = self.d_ff as f64 / self.d_model as f64;
        let with = |d: usize, ff: usize| ModelConfig {
            k,
            dec_d_model: d,
            dec_d_ff: ff,
            ..base.clone()
        };
        let mut best: Option<(f64, f64, ModelConfig)> = None;
        for d in (self.n_heads..=self.d_model).step_by(self.n_heads) {
            let a = with(d, 1).param_count() as f64;
            let b = with(d, 2).param_count() as f64 - a;
            let ff = (((target - a) / b).round() + 1.0).max(1.0) as usize;
            let cfg = with(d, ff);
            let err = (cfg.param_count() as f64 - target).abs() / target;
            let shape = (ff as f64 / d as f64 / ratio).ln().abs();
            // within 2% of the target, prefer the original ff/d ratio
            let key = if err <= 0.02 { (0.0, shape) } else { (err, shape) };
            if best.as_ref().is_none_or(|(e, s, _)| key < (*e, *s)) {
                best = Some((key.0, key.1, cfg));
            }
        }
        best.expect("at least one decoder width").2
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ModelConfig::default().validate().unwrap();
        ModelConfig::toy().validate().unwrap();
        let mut c = ModelConfig::toy();
        c.n_heads = 3;
        assert!(c.validate().is_err());
        c = ModelConfig::toy();
        c.k = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn matched_configs_stay_within_five_percent() {
        for base in [ModelConfig::toy(), ModelConfig::default()] {
            let p1 = base.param_count() as f64;
            assert_eq!(base.matched(1), base);
            for k in 2..=7 {
                let m = base.matched(k);
                m.validate().unwrap();
                let pk = m.param_count() as f64;
                assert!((pk - p1).abs() / p1 < 0.05, "k={k}: {pk} vs {p1}");
                assert!(m.dec_d_model < base.d_model);
            }
        }
    }
}
