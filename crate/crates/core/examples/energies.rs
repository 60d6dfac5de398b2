//! Potentials and interaction energies of a uniform disk, three ways.
//!
//! `cargo run --release --example energies`

use eqmeasure::energy::{grid_interaction_energy, interaction_energy};
use eqmeasure::kernel::{fourier_energy, potential, KernelKind, KernelSpec};
use eqmeasure::measure::{Ball, DiscreteMeasure, GridDensity, GridSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> eqmeasure::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<Vec<f64>> = (0..4096)
        .map(|_| {
            let r = rng.gen::<f64>().sqrt();
            let t = rng.gen::<f64>() * std::f64::consts::TAU;
            vec![r * t.cos(), r * t.sin()]
        })
        .collect();
    let particles = DiscreteMeasure::uniform(&pts)?;
    let log = KernelSpec::log2d();

    // inside the unit disk U(x) = (1 − |x|²)/2
    for r in [0.0, 0.5, 2.0] {
        let u = potential(&particles, &[r, 0.0], &log)?.value;
        let exact = if r <= 1.0 { 0.5 * (1.0 - r * r) } else { -r.ln() };
        println!("U({r}) = {u:.4} (exact {exact:.4})");
    }

    let spec = GridSpec::centered_cube(2, 1.05, 128)?;
    let disk = GridDensity::uniform_ball(spec, &Ball::centered(2, 1.0)?)?;
    println!("I from particles     {:.5}", interaction_energy(&particles, &log)?);
    println!("I from grid cells    {:.5}", grid_interaction_energy(&disk, KernelKind::Log2D)?);
    println!("I from Fourier side  {:.5}", fourier_energy(&disk, 2.5)?);
    println!("exact                0.25");
    Ok(())
}
