//! Decoder widths that hold the total parameter count near the
//! single-decoder model as K grows.

use mdvae::model::ModelConfig;

fn main() {
    for (name, base) in [("default", ModelConfig::default()), ("toy", ModelConfig::toy())] {
        let target = base.param_count();
        println!("{name}: single decoder {target} parameters");
        for k in 1..=7 {
            let m = base.matched(k);
            let n = m.param_count();
            println!(
                "  K={k}  decoder d_model {:>4}  d_ff {:>5}  params {:>9}  ({:+.2}%)",
                m.dec_d_model,
                m.dec_d_ff,
                n,
                100.0 * (n as f64 - target as f64) / target as f64
            );
        }
    }
}
