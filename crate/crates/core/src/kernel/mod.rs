//! Interaction kernels, potentials U = ρ ∗ K and their gradients.

pub mod bessel;
pub mod cell;
pub(crate) mod fft;
pub(crate) mod fourier;
mod grid;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::DiscreteMeasure;

pub use fourier::{calibrate_c1, fourier_energy, fourier_energy_with, truncated_kernel_fourier, C1};
pub use grid::{potential_field_on_grid, GridKernel, PotentialField};

/// Relative size of the particle singularity guard.
pub const SING_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    /// log(1/r), also used for particles on a line.
    Log2D,
    /// r^(2−n), n ≥ 3.
    Riesz(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    pub truncation: Option<f64>,
}

impl KernelSpec {
    pub fn log2d() -> Self {
        KernelSpec { kind: KernelKind::Log2D, truncation: None }
    }

    pub fn riesz(n: u32) -> Result<Self> {
        if n < 3 {
            return Err(Error::InvalidKernel(format!("Riesz kernel needs n >= 3, got {n}")));
        }
        Ok(KernelSpec { kind: KernelKind::Riesz(n), truncation: None })
    }

    pub fn truncated(self, r0: f64) -> Result<Self> {
        if !(r0 > 0.0) {
            return Err(Error::InvalidRadius(r0));
        }
        Ok(KernelSpec { truncation: Some(r0), ..self })
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelKind::Riesz(n) = self.kind {
            if n < 3 {
                return Err(Error::InvalidKernel(format!("Riesz kernel needs n >= 3, got {n}")));
            }
        }
        if let Some(r0) = self.truncation {
            if !(r0 > 0.0) {
                return Err(Error::InvalidRadius(r0));
            }
        }
        Ok(())
    }

    fn cut(&self, r: f64) -> bool {
        self.truncation.is_some_and(|r0| r >= r0)
    }

    /// Kernel value for r > 0 without argument checks.
    #[inline]
    pub fn value(&self, r: f64) -> f64 {
        if self.cut(r) {
            return 0.0;
        }
        match self.kind {
            KernelKind::Log2D => -r.ln(),
            KernelKind::Riesz(3) => 1.0 / r,
            KernelKind::Riesz(n) => r.powi(2 - n as i32),
        }
    }

    /// Kernel as a function of r², which avoids a square root for the log kernel.
    #[inline]
    pub fn value_sq(&self, r2: f64) -> f64 {
        match (self.kind, self.truncation) {
            (KernelKind::Log2D, None) => -0.5 * r2.ln(),
            _ => self.value(r2.sqrt()),
        }
    }

    /// ∇ₓ K(x − y) given d = x − y and r² = |d|², added into `out` with weight `w`.
    #[inline]
    fn add_gradient(&self, d: &[f64], r2: f64, w: f64, out: &mut [f64]) {
        if self.cut(r2.sqrt()) {
            return;
        }
        let factor = match self.kind {
            KernelKind::Log2D => -1.0 / r2,
            KernelKind::Riesz(n) => (2.0 - n as f64) * r2.sqrt().powi(-(n as i32)),
        };
        for (o, di) in out.iter_mut().zip(d) {
            *o += w * factor * di;
        }
    }
}

/// K(r), with 0 beyond the truncation radius.
pub fn kernel_eval(spec: &KernelSpec, r: f64) -> Result<f64> {
    spec.validate()?;
    if !(r > 0.0) {
        return Err(Error::NonpositiveDistance(r));
    }
    Ok(spec.value(r))
}

/// A potential or gradient value together with the number of atoms skipped
/// because they coincide with the evaluation point.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated<T> {
    pub value: T,
    pub skipped: usize,
}

/// Singularity guard: `SING_REL` times the bounding-box diagonal of the atoms and `x`.
fn singular_radius(mu: &DiscreteMeasure, x: &[f64]) -> f64 {
    let d = mu.dim();
    let mut lo = x.to_vec();
    let mut hi = x.to_vec();
    for p in mu.points() {
        for k in 0..d {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let diag2: f64 = lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum();
    SING_REL * diag2.sqrt()
}

fn check_point(mu: &DiscreteMeasure, x: &[f64]) -> Result<()> {
    if x.len() != mu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), found: x.len() });
    }
    Ok(())
}

/// U(x) = Σ wᵢ K(x − xᵢ), skipping atoms closer than the singularity guard.
pub fn potential(mu: &DiscreteMeasure, x: &[f64], spec: &KernelSpec) -> Result<Evaluated<f64>> {
    check_point(mu, x)?;
    spec.validate()?;
    let guard = singular_radius(mu, x);
    let guard2 = guard * guard;
    let mut value = 0.0;
    let mut skipped = 0;
    for (p, &w) in mu.points().zip(mu.weights()) {
        let r2 = crate::measure::dist2(x, p);
        if r2 <= guard2 {
            skipped += 1;
            continue;
        }
        value += w * spec.value_sq(r2);
    }
    Ok(Evaluated { value, skipped })
}

/// ∇U(x) by analytic differentiation of each term.
pub fn grad_potential(mu: &DiscreteMeasure, x: &[f64], spec: &KernelSpec) -> Result<Evaluated<Vec<f64>>> {
    check_point(mu, x)?;
    spec.validate()?;
    let guard = singular_radius(mu, x);
    let guard2 = guard * guard;
    let mut value = vec![0.0; x.len()];
    let mut d = vec![0.0; x.len()];
    let mut skipped = 0;
    for (p, &w) in mu.points().zip(mu.weights()) {
        for k in 0..x.len() {
            d[k] = x[k] - p[k];
        }
        let r2: f64 = d.iter().map(|v| v * v).sum();
        if r2 <= guard2 {
            skipped += 1;
            continue;
        }
        spec.add_gradient(&d, r2, w, &mut value);
    }
    Ok(Evaluated { value, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn circle(n: usize, r: f64) -> DiscreteMeasure {
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / n as f64;
                vec![r * t.cos(), r * t.sin()]
            })
            .collect();
        DiscreteMeasure::uniform(&pts).unwrap()
    }

    #[test]
    fn kernel_values() {
        let log = KernelSpec::log2d();
        assert_eq!(kernel_eval(&log, 1.0).unwrap(), 0.0);
        assert!((kernel_eval(&log, (-1.0f64).exp()).unwrap() - 1.0).abs() < 1e-15);
        let r3 = KernelSpec::riesz(3).unwrap();
        assert_eq!(kernel_eval(&r3, 2.0).unwrap(), 0.5);
        assert!((kernel_eval(&KernelSpec::riesz(5).unwrap(), 2.0).unwrap() - 0.125).abs() < 1e-15);
        let cut = log.truncated(0.5).unwrap();
        assert_eq!(kernel_eval(&cut, 0.7).unwrap(), 0.0);
        assert!(matches!(kernel_eval(&log, 0.0), Err(Error::NonpositiveDistance(_))));
        assert!(matches!(kernel_eval(&log, -1.0), Err(Error::NonpositiveDistance(_))));
        assert!(KernelSpec::riesz(2).is_err());
    }

    #[test]
    fn potential_examples() {
        let log = KernelSpec::log2d();
        let mu = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert_eq!(potential(&mu, &[1.0, 0.0], &log).unwrap().value, 0.0);
        // −log r inside a uniform circle of radius r
        let c = circle(4096, 0.5);
        let u = potential(&c, &[0.0, 0.0], &log).unwrap();
        assert!((u.value - 2f64.ln()).abs() < 1e-3);
        assert_eq!(u.skipped, 0);
        let mu3 = DiscreteMeasure::dirac(&[0.0, 0.0, 0.0]).unwrap();
        let r3 = KernelSpec::riesz(3).unwrap();
        assert_eq!(potential(&mu3, &[2.0, 0.0, 0.0], &r3).unwrap().value, 0.5);
        // coincident atom is skipped and counted
        let u = potential(&mu, &[0.0, 0.0], &log).unwrap();
        assert_eq!((u.value, u.skipped), (0.0, 1));
    }

    #[test]
    fn circle_potential_matches_midpoint_quadrature() {
        // independent oracle: angular midpoint rule on the continuum integrand
        let m = 100_000;
        let x = [0.1, 0.05];
        let mut q = 0.0;
        for k in 0..m {
            let t = 2.0 * std::f64::consts::PI * (k as f64 + 0.5) / m as f64;
            let (dx, dy) = (x[0] - 0.5 * t.cos(), x[1] - 0.5 * t.sin());
            q -= 0.5 * (dx * dx + dy * dy).ln() / m as f64;
        }
        assert!((q - 2f64.ln()).abs() < 1e-9);
        let u = potential(&circle(4096, 0.5), &x, &KernelSpec::log2d()).unwrap().value;
        assert!((u - q).abs() < 1e-6);
    }

    #[test]
    fn gradient_examples() {
        let log = KernelSpec::log2d();
        let mu = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        let g = grad_potential(&mu, &[1.0, 0.0], &log).unwrap().value;
        assert_eq!(g, vec![-1.0, 0.0]);
        let pair = DiscreteMeasure::new(&[vec![1.0, 0.0], vec![-1.0, 0.0]], &[1.0, 1.0]).unwrap();
        let g = grad_potential(&pair, &[0.0, 1e-9], &log).unwrap().value;
        assert!(g[0].abs() < 1e-15 && g[1].abs() < 1e-8);
        let g = grad_potential(&circle(4096, 0.5), &[0.1, 0.0], &log).unwrap().value;
        assert!(g[0].abs() < 1e-3 && g[1].abs() < 1e-3);
    }

    #[test]
    fn riesz_gradient_matches_formula() {
        let r3 = KernelSpec::riesz(3).unwrap();
        let mu = DiscreteMeasure::dirac(&[0.0, 0.0, 0.0]).unwrap();
        let g = grad_potential(&mu, &[2.0, 0.0, 0.0], &r3).unwrap().value;
        // (2−n) r^{−n} x = −1/8 · 2
        assert!((g[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let mu = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(matches!(potential(&mu, &[1.0], &KernelSpec::log2d()), Err(Error::DimensionMismatch { .. })));
    }

    fn cloud() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (2usize..8).prop_flat_map(|n| {
            (prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), n), prop::collection::vec(0.1f64..1.0, n))
        })
    }

    proptest! {
        #[test]
        fn translation_invariance((pts, w) in cloud(), v in prop::collection::vec(-2.0f64..2.0, 2),
                                  x in prop::collection::vec(5.0f64..6.0, 2)) {
            let spec = KernelSpec::log2d();
            let mu = DiscreteMeasure::new(&pts, &w).unwrap();
            let shifted = mu.translated(&v).unwrap();
            let xs = [x[0] + v[0], x[1] + v[1]];
            let a = potential(&mu, &x, &spec).unwrap().value;
            let b = potential(&shifted, &xs, &spec).unwrap().value;
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn gradient_matches_finite_differences((pts, w) in cloud(),
                                               x in prop::collection::vec(4.0f64..5.0, 2)) {
            for spec in [KernelSpec::log2d(), KernelSpec::riesz(3).unwrap()] {
                let mu = DiscreteMeasure::new(&pts, &w).unwrap();
                let g = grad_potential(&mu, &x, &spec).unwrap().value;
                let h = 1e-5;
                for k in 0..2 {
                    let mut p = x.clone();
                    let mut m = x.clone();
                    p[k] += h;
                    m[k] -= h;
                    let fd = (potential(&mu, &p, &spec).unwrap().value
                        - potential(&mu, &m, &spec).unwrap().value) / (2.0 * h);
                    prop_assert!((g[k] - fd).abs() < 1e-7, "{} vs {}", g[k], fd);
                }
            }
        }
    }
}
