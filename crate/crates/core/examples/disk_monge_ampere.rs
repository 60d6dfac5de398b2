//! Uniform reference measure on the unit disk. The grid is refined twice with
//! warm starts and the Monge–Ampère residuals are reported at each level.
//!
//! `cargo run --release --example disk_monge_ampere [finest cells per axis]`

use eqmeasure::diagnostics::monge_ampere_residual;
use eqmeasure::measure::{Ball, GridDensity, GridSpec};
use eqmeasure::solver::{minimize_from, EquilibriumResult, SolverConfig};

fn main() -> eqmeasure::Result<()> {
    let finest: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(128);
    let levels = [finest / 4, finest / 2, finest];
    let mut prev: Option<EquilibriumResult> = None;
    for n in levels {
        let spec = GridSpec::centered_cube(2, 2.4, n)?;
        let rho0 = GridDensity::uniform_ball(spec.clone(), &Ball::centered(2, 1.0)?)?;
        let mut cfg = SolverConfig::new(spec);
        cfg.window = Some(1);
        cfg.tol_gap = 1e-6;
        cfg.max_inner_iters = 3000;
        let t = std::time::Instant::now();
        let res = minimize_from(&rho0.to_discrete_refined(2)?, &cfg, prev.as_ref())?;
        let ma = monge_ampere_residual(&res, &rho0)?;
        println!(
            "{n:>4}²: J = {:.6}, residual median {:.3e} (ratio form {:.3e}, second form {:.3e}), {:.1?}",
            res.energy.total,
            ma.product.median,
            ma.ratio.median,
            ma.shifted.median,
            t.elapsed()
        );
        prev = Some(res);
    }
    // the minimizer is uniform with density 1/(4π) on the disk of radius 2
    let res = prev.unwrap();
    let h = res.spacing();
    for r in [0.0, 1.0, 1.9, 2.1] {
        let cell = res.grid.locate(&[r, 0.0]).unwrap();
        let w = res.cells.iter().position(|&c| c == cell).map_or(0.0, |i| res.weights()[i]);
        println!("density at r = {r}: {:.5}", w / (h * h));
    }
    println!("1/(4π) = {:.5}", 0.25 / std::f64::consts::PI);
    Ok(())
}
