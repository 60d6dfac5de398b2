//! Metropolis sampling of the one-dimensional log gas
//! W = −Σ_{i≠j} log|xᵢ − xⱼ| + κ Σ xᵢ², and the semicircle oracles.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::format_f64;
use crate::solver::EquilibriumResult;

/// Printed density (1/πg)√(2/g − x²) on |x| < √(2/g). Its mass is 1/g².
pub fn semicircle_density(x: f64, g: f64) -> f64 {
    let r2 = 2.0 / g;
    if x * x >= r2 {
        0.0
    } else {
        (r2 - x * x).sqrt() / (PI * g)
    }
}

/// Mass of the printed density by midpoint quadrature in x = R sin θ.
pub fn semicircle_printed_mass(g: f64) -> f64 {
    let r = (2.0 / g).sqrt();
    let n = 20_000;
    let dt = PI / n as f64;
    (0..n)
        .map(|k| {
            let t = -0.5 * PI + (k as f64 + 0.5) * dt;
            semicircle_density(r * t.sin(), g) * r * t.cos() * dt
        })
        .sum()
}

/// The printed density rescaled to unit mass.
pub fn semicircle_density_normalized(x: f64, g: f64) -> f64 {
    semicircle_density(x, g) * g * g
}

/// CDF of the normalized semicircle of radius √(2/g).
pub fn semicircle_cdf(x: f64, g: f64) -> f64 {
    let r = (2.0 / g).sqrt();
    if x <= -r {
        return 0.0;
    }
    if x >= r {
        return 1.0;
    }
    0.5 + (x * (r * r - x * x).sqrt() + r * r * (x / r).asin()) / (PI * r * r)
}

/// Which reading of the confinement constant to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KappaReading {
    /// κ = N·g.
    TimesN,
    /// κ = N/g.
    OverG,
    /// κ = N·g_eff with g_eff tuned by pilot runs so that the radius
    /// 2√(mean x²) matches √(2/g).
    Calibrated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasConfig {
    pub n: usize,
    pub g: f64,
    /// Retained sweeps.
    pub steps: usize,
    pub burn_in: usize,
    pub proposal_scale: f64,
    pub rng_seed: u64,
    pub kappa: KappaReading,
}

impl GasConfig {
    pub fn new(n: usize, g: f64) -> Self {
        GasConfig { n, g, steps: 2000, burn_in: 500, proposal_scale: 0.1, rng_seed: 0, kappa: KappaReading::Calibrated }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::TooFewAtoms(self.n));
        }
        if !(self.g > 0.0) || !(self.proposal_scale > 0.0) {
            return Err(Error::InvalidParameter("g and the proposal scale must be positive".into()));
        }
        Ok(())
    }

    pub fn target_radius(&self) -> f64 {
        (2.0 / self.g).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GasSamples {
    /// One row of N positions per retained sweep.
    pub positions: Vec<Vec<f64>>,
    pub acceptance_rate: f64,
    pub proposal_scale: f64,
    pub kappa: f64,
    pub g_eff: f64,
    /// Acceptance rate outside [0.1, 0.9].
    pub flagged: bool,
}

impl GasSamples {
    pub fn pooled(&self) -> Vec<f64> {
        self.positions.iter().flatten().copied().collect()
    }

    /// 2√(mean x²), the radius of a semicircle with the same second moment.
    pub fn radius_estimate(&self) -> f64 {
        let v = self.pooled();
        2.0 * (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let n = self.positions.first().map_or(0, |r| r.len());
        wtr.write_record((0..n).map(|i| format!("x{i}")))?;
        for row in &self.positions {
            wtr.write_record(row.iter().map(|&x| format_f64(x)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Metropolis acceptance probability for an energy change.
pub fn acceptance_probability(delta_w: f64) -> f64 {
    if delta_w <= 0.0 {
        1.0
    } else {
        (-delta_w).exp()
    }
}

struct Chain {
    x: Vec<f64>,
    kappa: f64,
    scale: f64,
    rng: ChaCha8Rng,
}

impl Chain {
    fn delta(&self, i: usize, new: f64) -> f64 {
        let old = self.x[i];
        let mut d = self.kappa * (new * new - old * old);
        for (j, &y) in self.x.iter().enumerate() {
            if j != i {
                d -= 2.0 * ((new - y).abs().ln() - (old - y).abs().ln());
            }
        }
        d
    }

    /// One sweep of single-site updates; returns the number accepted.
    fn sweep(&mut self) -> usize {
        let mut accepted = 0;
        for i in 0..self.x.len() {
            let z: f64 = self.rng.sample(StandardNormal);
            let new = self.x[i] + self.scale * z;
            let d = self.delta(i, new);
            // coincident positions give d = +∞ and are rejected
            let u: f64 = self.rng.gen();
            if d.is_finite() && u < acceptance_probability(d) {
                self.x[i] = new;
                accepted += 1;
            }
        }
        accepted
    }

    fn burn_in(&mut self, sweeps: usize) {
        let n = self.x.len();
        let block = 50;
        let mut done = 0;
        while done < sweeps {
            let len = block.min(sweeps - done);
            let acc: usize = (0..len).map(|_| self.sweep()).sum();
            let rate = acc as f64 / (len * n) as f64;
            self.scale *= (1.0 + (rate - 0.4)).clamp(0.5, 1.5);
            done += len;
        }
    }
}

fn run_chain(cfg: &GasConfig, kappa: f64, seed: u64, burn: usize, steps: usize) -> (Vec<Vec<f64>>, f64, f64) {
    let r = (cfg.n as f64 / kappa).sqrt();
    let x = (0..cfg.n).map(|i| 0.9 * r * (2.0 * (i as f64 + 0.5) / cfg.n as f64 - 1.0)).collect();
    let mut chain = Chain { x, kappa, scale: cfg.proposal_scale, rng: ChaCha8Rng::seed_from_u64(seed) };
    chain.burn_in(burn);
    let mut accepted = 0;
    let mut rows = Vec::with_capacity(steps);
    for _ in 0..steps {
        accepted += chain.sweep();
        rows.push(chain.x.clone());
    }
    let rate = accepted as f64 / (steps.max(1) * cfg.n) as f64;
    (rows, rate, chain.scale)
}

/// Samples the gas; reproducible for a fixed seed.
pub fn sample_gas(cfg: &GasConfig) -> Result<GasSamples> {
    cfg.validate()?;
    let n = cfg.n as f64;
    let (kappa, g_eff) = match cfg.kappa {
        KappaReading::TimesN => (n * cfg.g, cfg.g),
        KappaReading::OverG => (n / cfg.g, 1.0 / cfg.g),
        KappaReading::Calibrated => {
            let mut g_eff = cfg.g;
            let target = cfg.target_radius();
            for round in 0..3 {
                let (rows, _, _) = run_chain(cfg, n * g_eff, cfg.rng_seed ^ (0x9e37_79b9 + round), 200, 400);
                let pilot = GasSamples {
                    positions: rows,
                    acceptance_rate: 0.0,
                    proposal_scale: 0.0,
                    kappa: 0.0,
                    g_eff,
                    flagged: false,
                };
                let ratio = pilot.radius_estimate() / target;
                g_eff *= ratio * ratio;
                if (ratio - 1.0).abs() < 0.01 {
                    break;
                }
            }
            (n * g_eff, g_eff)
        }
    };
    let (positions, rate, scale) = run_chain(cfg, kappa, cfg.rng_seed, cfg.burn_in, cfg.steps);
    if positions.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteEnergy);
    }
    Ok(GasSamples {
        positions,
        acceptance_rate: rate,
        proposal_scale: scale,
        kappa,
        g_eff,
        flagged: !(0.1..=0.9).contains(&rate),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsReport {
    pub ks: f64,
    pub threshold: f64,
    pub pass: bool,
    pub count: usize,
}

pub const KS_THRESHOLD: f64 = 0.05;
pub const MIN_POOLED: usize = 10_000;

/// Kolmogorov–Smirnov distance between pooled values and the normalized semicircle.
pub fn ks_statistic(values: &[f64], g: f64) -> Result<f64> {
    if values.len() < MIN_POOLED {
        return Err(Error::TooFewSamples { required: MIN_POOLED, found: values.len() });
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = v.len() as f64;
    Ok(v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = semicircle_cdf(x, g);
            (f - i as f64 / m).abs().max((f - (i + 1) as f64 / m).abs())
        })
        .fold(0.0, f64::max))
}

pub fn histogram_compare(samples: &GasSamples, g: f64) -> Result<KsReport> {
    let pooled = samples.pooled();
    let ks = ks_statistic(&pooled, g)?;
    Ok(KsReport { ks, threshold: KS_THRESHOLD, pass: ks <= KS_THRESHOLD, count: pooled.len() })
}

impl KsReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationReport {
    pub lambda: f64,
    pub max_deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Checks 2U(x) + x²/2 = λ on the support of a 1D run with ρ₀ = δ₀.
pub fn one_d_relation_check(res: &EquilibriumResult, tol_el: f64) -> Result<RelationReport> {
    if res.grid.dim() != 1 {
        return Err(Error::WrongDimension);
    }
    let target = &res.plan.target;
    let positive: Vec<usize> = (0..target.len()).filter(|&j| target.weight(j) > 0.0).collect();
    if positive.len() != 1 || target.point(positive[0])[0] != 0.0 {
        return Err(Error::WrongTarget);
    }
    let s = res.interaction_scale;
    let mut values: Vec<f64> = res
        .support()
        .iter()
        .map(|&i| {
            let x = res.measure.point(i)[0];
            2.0 * s * res.potential[i] + 0.5 * x * x
        })
        .collect();
    if values.is_empty() {
        return Err(Error::NoSupport);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let k = values.len();
    let lambda = if k % 2 == 1 { values[k / 2] } else { 0.5 * (values[k / 2 - 1] + values[k / 2]) };
    let max_deviation = values.iter().map(|v| (v - lambda).abs()).fold(0.0, f64::max);
    let tolerance = 10.0 * tol_el;
    Ok(RelationReport { lambda, max_deviation, tolerance, pass: max_deviation <= tolerance })
}
