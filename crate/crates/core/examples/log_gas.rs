//! Metropolis samples of the log gas compared with the semicircle law.
//!
//! `cargo run --release --example log_gas`

use eqmeasure::loggas::{histogram_compare, sample_gas, semicircle_density_normalized, GasConfig, KappaReading};

fn main() -> eqmeasure::Result<()> {
    let g = 2.0;
    for reading in [KappaReading::Calibrated, KappaReading::TimesN, KappaReading::OverG] {
        let mut cfg = GasConfig::new(64, g);
        cfg.kappa = reading;
        let s = sample_gas(&cfg)?;
        let ks = histogram_compare(&s, g)?;
        println!(
            "{reading:?}: kappa {:.2}, radius {:.3}, KS {:.4}, acceptance {:.2}",
            s.kappa,
            s.radius_estimate(),
            ks.ks,
            s.acceptance_rate
        );
    }

    let mut cfg = GasConfig::new(64, g);
    cfg.steps = 4000;
    let pooled = sample_gas(&cfg)?.pooled();
    let bins = 20;
    let r = cfg.target_radius();
    let width = 2.0 * r / bins as f64;
    println!("{:>8} {:>8} {:>8}", "x", "hist", "law");
    for b in 0..bins {
        let lo = -r + b as f64 * width;
        let count = pooled.iter().filter(|&&x| x >= lo && x < lo + width).count();
        let mid = lo + 0.5 * width;
        println!(
            "{mid:>8.3} {:>8.4} {:>8.4}",
            count as f64 / (pooled.len() as f64 * width),
            semicircle_density_normalized(mid, g)
        );
    }
    Ok(())
}
