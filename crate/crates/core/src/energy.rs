//! Interaction, transport and confinement energies and the a-priori inequalities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GridKernel, KernelKind, KernelSpec, SING_REL};
use crate::measure::{dist2, norm2, Ball, DiscreteMeasure, GridDensity};
use crate::transport::wasserstein_d2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub interaction: f64,
    pub transport: f64,
    pub total: f64,
    pub confinement: Option<f64>,
}

impl EnergyBreakdown {
    pub fn new(interaction: f64, transport: f64) -> Self {
        EnergyBreakdown { interaction, transport, total: interaction + transport, confinement: None }
    }
}

/// Σ_{i≠j} wᵢwⱼK(xᵢ − xⱼ). Distinct atoms closer than the singularity guard
/// are treated like the diagonal.
pub fn interaction_energy(mu: &DiscreteMeasure, spec: &KernelSpec) -> Result<f64> {
    if mu.len() < 2 {
        return Err(Error::TooFewAtoms(mu.len()));
    }
    spec.validate()?;
    let guard = SING_REL * mu.diameter();
    let guard2 = guard * guard;
    // rows in parallel, summed in index order for reproducibility
    let rows: Vec<f64> = (0..mu.len())
        .into_par_iter()
        .map(|i| {
            let xi = mu.point(i);
            let mut s = 0.0;
            for j in 0..mu.len() {
                if j == i {
                    continue;
                }
                let r2 = dist2(xi, mu.point(j));
                if r2 > guard2 {
                    s += mu.weight(j) * spec.value_sq(r2);
                }
            }
            mu.weight(i) * s
        })
        .collect();
    Ok(rows.iter().sum())
}

/// Σᵢ mᵢU(xᵢ) on a grid with exact cell averages of the kernel.
pub fn grid_interaction_energy(rho: &GridDensity, kind: KernelKind) -> Result<f64> {
    let kernel = GridKernel::new(rho.spec(), kind)?;
    Ok(kernel.energy(&rho.cell_masses()))
}

/// J = I[μ] + d²(μ, ρ₀).
pub fn total_energy(mu: &DiscreteMeasure, rho0: &DiscreteMeasure, spec: &KernelSpec) -> Result<EnergyBreakdown> {
    let interaction = interaction_energy(mu, spec)?;
    let transport = wasserstein_d2(mu, rho0)?;
    Ok(EnergyBreakdown::new(interaction, transport))
}

/// ∬log|x − y| dμ dμ + g∫|x|² dμ, with the attractive sign of the log term.
pub fn confined_energy(mu: &DiscreteMeasure, g: f64) -> Result<f64> {
    if !(g >= 0.0) {
        return Err(Error::InvalidParameter(format!("confinement must be nonnegative, got {g}")));
    }
    Ok(-interaction_energy(mu, &KernelSpec::log2d())? + g * mu.second_moment())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentumReport {
    /// ∫|x|² dμ.
    pub second_moment: f64,
    /// 4d²(μ, ρ₀) + 14∫|y|² dρ₀.
    pub middle: f64,
    /// 14(d²(μ, ρ₀) + R₀²).
    pub bound: f64,
    pub pass: bool,
    /// middle − second_moment.
    pub slack: f64,
}

/// ∫|x|²dμ ≤ 4d²(μ, ρ₀) + 14∫|y|²dρ₀ ≤ 14(d²(μ, ρ₀) + R₀²).
pub fn momentum_bound_check(mu: &DiscreteMeasure, rho0: &DiscreteMeasure, r0: f64) -> Result<MomentumReport> {
    if !(r0 >= 0.0) {
        return Err(Error::InvalidRadius(r0));
    }
    for p in rho0.points() {
        let d = norm2(p).sqrt();
        if d > r0 * (1.0 + 1e-12) + 1e-15 {
            return Err(Error::SupportViolation { distance: d, radius: r0 });
        }
    }
    let d2 = wasserstein_d2(mu, rho0)?;
    let second_moment = mu.second_moment();
    let middle = 4.0 * d2 + 14.0 * rho0.second_moment();
    let bound = 14.0 * (d2 + r0 * r0);
    let tol = 1e-12 * (1.0 + bound);
    Ok(MomentumReport {
        second_moment,
        middle,
        bound,
        pass: second_moment <= middle + tol && middle <= bound + tol,
        slack: middle - second_moment,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestrictionReport {
    pub energy: f64,
    pub restricted_energy: f64,
    pub retained_mass: f64,
    pub improved: bool,
}

/// Compares J[μ] with J of the normalized restriction of μ to B_ε(0).
pub fn restriction_improvement_check(
    mu: &DiscreteMeasure,
    rho0: &DiscreteMeasure,
    eps: f64,
    spec: &KernelSpec,
) -> Result<RestrictionReport> {
    let ball = Ball::centered(mu.dim(), eps)?;
    let (restricted, retained_mass) = mu.restrict_normalize(&ball)?;
    let energy = total_energy(mu, rho0, spec)?.total;
    let restricted_energy =
        if retained_mass >= 1.0 - 1e-15 { energy } else { total_energy(&restricted, rho0, spec)?.total };
    Ok(RestrictionReport { energy, restricted_energy, retained_mass, improved: restricted_energy < energy })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::GridSpec;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pair(d: f64) -> DiscreteMeasure {
        DiscreteMeasure::new(&[vec![-0.5 * d, 0.0], vec![0.5 * d, 0.0]], &[1.0, 1.0]).unwrap()
    }

    #[test]
    fn interaction_examples() {
        let log = KernelSpec::log2d();
        assert_eq!(interaction_energy(&pair(1.0), &log).unwrap(), 0.0);
        let e = interaction_energy(&pair((-1.0f64).exp()), &log).unwrap();
        assert!((e - 0.5).abs() < 1e-15);
        let one = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        assert!(matches!(interaction_energy(&one, &log), Err(Error::TooFewAtoms(1))));
    }

    #[test]
    fn uniform_disk_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Vec<f64>> = (0..4096)
            .map(|_| {
                let r = rng.gen::<f64>().sqrt();
                let t = rng.gen::<f64>() * std::f64::consts::TAU;
                vec![r * t.cos(), r * t.sin()]
            })
            .collect();
        let mu = DiscreteMeasure::uniform(&pts).unwrap();
        let e = interaction_energy(&mu, &KernelSpec::log2d()).unwrap();
        assert!((e - 0.25).abs() < 0.02, "{e}");
    }

    #[test]
    fn grid_energy_of_uniform_disk() {
        let spec = GridSpec::centered_cube(2, 1.05, 128).unwrap();
        let rho = GridDensity::uniform_ball(spec, &Ball::centered(2, 1.0).unwrap()).unwrap();
        let e = grid_interaction_energy(&rho, KernelKind::Log2D).unwrap();
        assert!((e - 0.25).abs() < 2.5e-3, "{e}");
    }

    #[test]
    fn total_examples() {
        let log = KernelSpec::log2d();
        let mu = pair(1.0);
        let j = total_energy(&mu, &mu, &log).unwrap();
        assert_eq!((j.interaction, j.total), (0.0, 0.0));
        assert!(j.transport.abs() < 1e-15);
        let mu = pair((-1.0f64).exp());
        let j = total_energy(&mu, &mu, &log).unwrap();
        assert!((j.total - 0.5).abs() < 1e-15);
        assert_eq!(j.total, j.interaction + j.transport);
    }

    #[test]
    fn translated_reference() {
        let log = KernelSpec::log2d();
        let mu = DiscreteMeasure::new(
            &[vec![0.0, 0.0], vec![1.0, 0.5], vec![-0.3, 0.8], vec![0.4, -0.6]],
            &[0.1, 0.2, 0.3, 0.4],
        )
        .unwrap();
        let v = [0.7, -0.2];
        let rho0 = mu.translated(&v).unwrap();
        let j = total_energy(&mu, &rho0, &log).unwrap();
        let expected = interaction_energy(&mu, &log).unwrap() + 0.5 * norm2(&v);
        assert!((j.total - expected).abs() < 1e-12);
    }

    /// Quantile of the normalized semicircle on [−1, 1] by bisection on its CDF.
    fn semicircle_quantile(p: f64) -> f64 {
        let cdf = |x: f64| 0.5 + (x * (1.0 - x * x).sqrt() + x.asin()) / std::f64::consts::PI;
        let (mut lo, mut hi) = (-1.0, 1.0);
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn confined_examples() {
        let mu = pair(1.0);
        assert!((confined_energy(&mu, 3.0).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(confined_energy(&mu, 0.0).unwrap(), 0.0);

        // semicircle of radius 1 (g = 2) against a quadrature of the density
        let n = 2048;
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![semicircle_quantile((i as f64 + 0.5) / n as f64)]).collect();
        let cloud = DiscreteMeasure::uniform(&pts).unwrap();
        let f = confined_energy(&cloud, 2.0).unwrap();
        // y = sin θ maps the density to (2/π)cos²θ dθ
        let m = 4000;
        let theta =
            |k: usize, shift: f64| -std::f64::consts::FRAC_PI_2 + std::f64::consts::PI * (k as f64 + shift) / m as f64;
        let wt = |t: f64| 2.0 / std::f64::consts::PI * t.cos().powi(2) * std::f64::consts::PI / m as f64;
        let mut log_energy = 0.0;
        let mut m2 = 0.0;
        for a in 0..m {
            let ta = theta(a, 0.5);
            let x = ta.sin();
            m2 += wt(ta) * x * x;
            for b in 0..m {
                let tb = theta(b, 0.25);
                log_energy += wt(ta) * wt(tb) * (x - tb.sin()).abs().ln();
            }
        }
        let q = log_energy + 2.0 * m2;
        assert!(((f - q) / q).abs() < 0.02, "{f} vs {q}");
    }

    #[test]
    fn momentum_examples() {
        let o = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        let r = momentum_bound_check(&o, &o, 1.0).unwrap();
        assert!(r.pass && r.slack == 0.0);
        let x = DiscreteMeasure::dirac(&[3.0, 4.0]).unwrap();
        let r = momentum_bound_check(&x, &o, 0.0).unwrap();
        assert!(r.pass);
        assert!((r.second_moment - 25.0).abs() < 1e-12 && (r.middle - 50.0).abs() < 1e-12);
        assert!(matches!(momentum_bound_check(&o, &x, 1.0), Err(Error::SupportViolation { .. })));
    }

    #[test]
    fn restriction_examples() {
        let log = KernelSpec::log2d();
        let rho0 = DiscreteMeasure::new(&[vec![0.2, 0.0], vec![-0.2, 0.1], vec![0.0, -0.3]], &[1.0, 1.0, 1.0]).unwrap();
        let mu = DiscreteMeasure::new(&[vec![0.5, 0.0], vec![-0.5, 0.2], vec![0.1, -0.4]], &[1.0, 1.0, 1.0]).unwrap();
        let r = restriction_improvement_check(&mu, &rho0, 5.0, &log).unwrap();
        assert_eq!(r.energy, r.restricted_energy);
        assert!(!r.improved);

        let outlier = DiscreteMeasure::new(
            &[vec![0.5, 0.0], vec![-0.5, 0.2], vec![0.1, -0.4], vec![100.0, 0.0]],
            &[1.0, 1.0, 1.0, 0.1],
        )
        .unwrap();
        let r = restriction_improvement_check(&outlier, &rho0, 10.0, &log).unwrap();
        assert!(r.improved && r.restricted_energy < r.energy);

        let far = DiscreteMeasure::new(&[vec![50.0, 0.0], vec![60.0, 0.0]], &[1.0, 1.0]).unwrap();
        assert!(matches!(restriction_improvement_check(&far, &rho0, 10.0, &log), Err(Error::EmptyRestriction)));
    }

    fn cloud() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
        (2usize..10).prop_flat_map(|n| {
            (prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 2), n), prop::collection::vec(0.05f64..1.0, n))
        })
    }

    proptest! {
        #[test]
        fn invariant_under_translation_and_permutation((pts, w) in cloud(), v in prop::collection::vec(-5.0f64..5.0, 2)) {
            let log = KernelSpec::log2d();
            let mu = DiscreteMeasure::new(&pts, &w).unwrap();
            let e = interaction_energy(&mu, &log).unwrap();
            let t = interaction_energy(&mu.translated(&v).unwrap(), &log).unwrap();
            prop_assert!((e - t).abs() < 1e-10 * (1.0 + e.abs()));
            let mut rp = pts.clone();
            let mut rw = w.clone();
            rp.reverse();
            rw.reverse();
            let p = interaction_energy(&DiscreteMeasure::new(&rp, &rw).unwrap(), &log).unwrap();
            prop_assert!((e - p).abs() < 1e-12 * (1.0 + e.abs()));
        }

        #[test]
        fn momentum_bound_always_holds((pts, w) in cloud(), (qs, qw) in cloud()) {
            let mu = DiscreteMeasure::new(&pts, &w).unwrap();
            let rho0 = DiscreteMeasure::new(&qs, &qw).unwrap();
            let r0 = rho0.points().map(|p| norm2(p).sqrt()).fold(0.0, f64::max);
            prop_assert!(momentum_bound_check(&mu, &rho0, r0).unwrap().pass);
        }
    }
}
