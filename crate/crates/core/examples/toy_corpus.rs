//! Writes a seeded synthetic corpus and a disjoint held-out split.
//!
//! cargo run --example toy_corpus -- data/toy 5000 0

use std::path::PathBuf;

use mdvae::data::generate_corpus;

fn main() -> mdvae::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "data/toy".into()));
    let n: usize = args.next().map_or(5000, |s| s.parse().expect("count"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    std::fs::create_dir_all(&dir).map_err(|e| mdvae::Error::io(&dir, e))?;

    let pool = generate_corpus(n + n / 10, seed, 60);
    let train = pool.head(n);
    let unseen = pool.excluding(&train);
    train.write_csv(&dir.join("train.csv"))?;
    unseen.write_csv(&dir.join("unseen.csv"))?;
    println!(
        "{} training and {} held-out molecules in {} (longest {} tokens)",
        train.len(),
        unseen.len(),
        dir.display(),
        pool.max_tokens()
    );
    Ok(())
}
