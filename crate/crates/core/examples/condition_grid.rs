//! Anchor grids and conditionally sampled property vectors.

use mdvae::data::{condition_grid, ConditionStats, ConditionVector, Regime};
use mdvae::rng;

fn main() -> mdvae::Result<()> {
    let mut stats = ConditionStats::diagonal([332.0, 2.5, 0.73], [62.0, 1.4, 0.14]);
    // molecular weight and logP move together in drug-like sets
    stats.cov[0][1] = 0.5 * 62.0 * 1.4;
    stats.cov[1][0] = stats.cov[0][1];
    stats.validate()?;

    let mut r = rng::substream(0, "example/conditions");
    for regime in [Regime::InDomain, Regime::Ood] {
        println!("{}", regime.name());
        for a in condition_grid(&stats, regime) {
            let y: ConditionVector = stats.sample_condition(a.property, a.value, &mut r);
            println!(
                "  {:<6} = {:>9.3}  sample molwt {:>8.2} logp {:>6.2} qed {:>5.3}",
                a.property.name(),
                a.value,
                y.0[0],
                y.0[1],
                y.0[2]
            );
        }
    }
    Ok(())
}
