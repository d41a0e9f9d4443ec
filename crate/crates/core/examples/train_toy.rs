//! Trains one variant on a synthetic corpus and prints the epoch log.
//!
//! cargo run --release --example train_toy -- md_dif_col 3 runs/example

use mdvae::data::generate_corpus;
use mdvae::model::ModelConfig;
use mdvae::train::{RunFiles, TrainConfig, Trainer, Variant};

fn main() -> mdvae::Result<()> {
    let mut args = std::env::args().skip(1);
    let variant = args
        .next()
        .map_or(Variant::MdDifCol, |s| Variant::parse(&s).expect("variant name"));
    let k: usize = args.next().map_or(3, |s| s.parse().expect("decoder count"));
    let dir = args.next().unwrap_or_else(|| "runs/example".into());

    let corpus = generate_corpus(1000, 0, 60);
    let mut cfg = TrainConfig {
        variant,
        k,
        epochs: 5,
        batch_size: 64,
        model: ModelConfig {
            max_len: 60,
            ..ModelConfig::toy()
        },
        ..TrainConfig::default()
    };
    cfg.loss.beta_schedule = variant.spec(k).schedule;

    let files = RunFiles::new(&dir)?;
    let mut trainer = Trainer::new(cfg, corpus)?.with_files(files.clone());
    println!("{} parameters, {} steps", trainer.state.model.param_count(), trainer.total_steps());
    for m in trainer.fit()? {
        let inter = m.inter_kld.map_or(String::from("-"), |v| format!("{v:.4}"));
        println!(
            "epoch {:>2}  l_recon {:>8.3}  l_reg {:>7.3}  beta {:.5}  inter_kld {inter}",
            m.epoch, m.l_recon, m.l_reg, m.beta
        );
    }
    println!("log {}  checkpoint {}", files.log().display(), files.checkpoint().display());
    Ok(())
}
