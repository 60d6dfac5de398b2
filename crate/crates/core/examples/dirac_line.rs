//! The minimizer on a line for a Dirac reference measure: it satisfies
//! 2U + x²/2 = λ on its support. Writes the run directory to `runs/dirac_line`.
//!
//! `cargo run --release --example dirac_line`

use std::path::Path;

use eqmeasure::diagnostics::transport_map_residual;
use eqmeasure::loggas::one_d_relation_check;
use eqmeasure::measure::{DiscreteMeasure, GridSpec};
use eqmeasure::solver::{minimize, SolverConfig};

fn main() -> eqmeasure::Result<()> {
    let n = 401;
    let h = 4.0 / (n - 1) as f64;
    let grid = GridSpec::new(vec![-2.0 - 0.5 * h], vec![h], vec![n])?;
    let cfg = SolverConfig::new(grid);
    let res = minimize(&DiscreteMeasure::dirac(&[0.0])?, &cfg)?;

    let support = res.support();
    let (lo, hi) = (res.measure.point(support[0])[0], res.measure.point(*support.last().unwrap())[0]);
    println!("support [{lo:.3}, {hi:.3}] with {} cells", support.len());
    println!("energy {:?}", res.energy);
    let rel = one_d_relation_check(&res, cfg.tol_el)?;
    println!("lambda {:.6}, max deviation {:.2e}", rel.lambda, rel.max_deviation);
    println!("transport map residual {:.3e} (h = {h})", transport_map_residual(&res)?);
    res.write_run_dir(Path::new("runs/dirac_line"))?;
    Ok(())
}
