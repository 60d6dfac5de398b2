//! Exact and entropic transport between two small point clouds, with the
//! Kantorovich potential and a cyclic-monotonicity check.
//!
//! `cargo run --release --example transport`

use eqmeasure::measure::DiscreteMeasure;
use eqmeasure::transport::{check_cyclic_monotonicity, kantorovich_potential, solve_entropic, solve_exact};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(rng: &mut ChaCha8Rng, n: usize, shift: f64) -> eqmeasure::Result<DiscreteMeasure> {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.gen::<f64>() + shift, rng.gen::<f64>()]).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.5..1.5)).collect();
    DiscreteMeasure::new(&pts, &w)
}

fn main() -> eqmeasure::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mu = cloud(&mut rng, 8, 0.0)?;
    let nu = cloud(&mut rng, 6, 1.5)?;

    let plan = solve_exact(&mu, &nu)?;
    println!("exact cost {:.6}, duality gap {:.1e}", plan.cost, plan.duality_gap().unwrap_or(f64::NAN));
    for &(i, j, m) in &plan.pairs {
        println!("  {i} -> {j}  mass {m:.4}");
    }
    for len in 2..=4 {
        let rep = check_cyclic_monotonicity(&plan, len, 1000, 0)?;
        println!("cycles of length {len}: {} violations", rep.violations);
    }

    let query: Vec<Vec<f64>> = mu.points().map(<[f64]>::to_vec).collect();
    let psi = kantorovich_potential(&plan, &query, &[0.0, 0.0])?;
    println!("potential at the source atoms: {:?}", psi.values.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    for eps in [0.5, 0.1] {
        let ent = solve_entropic(&mu, &nu, eps, 100_000)?;
        println!("entropic cost at eps = {eps}: {:.6}", ent.cost);
    }
    Ok(())
}
