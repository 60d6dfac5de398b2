//! Explicit upwind finite volumes for ρ_t = τ·div(ρ∇U^ρ) with zero-flux walls.
//!
//! Mass moves with velocity v = −τ∇U across each face; U is recomputed from
//! the current density every step with the exact cell-averaged kernel.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{GridKernel, KernelKind};
use crate::measure::{format_f64, GridDensity};

pub const CFL: f64 = 0.4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub kernel: KernelKind,
    /// Fixed step; the CFL bound is used every step when absent.
    pub dt: Option<f64>,
    /// Multiplies the flux.
    pub tau: f64,
    pub steps: usize,
    /// Snapshot interval in steps; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { kernel: KernelKind::Log2D, dt: None, tau: 1.0, steps: 200, snapshot_every: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct FlowState {
    pub density: GridDensity,
    pub time: f64,
    pub dt: f64,
    pub step_count: usize,
    /// (t, I[ρ(t)]).
    pub energy_history: Vec<(f64, f64)>,
    /// Discrete dissipation 2Σ ρ_up v_f² h^d at the start of each step.
    pub dissipation_history: Vec<f64>,
}

/// Flow on one grid: the kernel table is built once.
pub struct Flow {
    kernel: GridKernel,
    cfg: FlowConfig,
}

struct Faces {
    /// Signed face velocities per axis, indexed by the lower cell.
    velocity: Vec<Vec<f64>>,
    /// Largest total outgoing face speed of a cell.
    max_speed: f64,
}

impl Flow {
    pub fn new(density: &GridDensity, cfg: FlowConfig) -> Result<Self> {
        if !(cfg.tau > 0.0) {
            return Err(Error::InvalidParameter(format!("time scale must be positive, got {}", cfg.tau)));
        }
        if let Some(dt) = cfg.dt {
            if !(dt > 0.0) {
                return Err(Error::InvalidParameter(format!("time step must be positive, got {dt}")));
            }
        }
        Ok(Flow { kernel: GridKernel::new(density.spec(), cfg.kernel)?, cfg })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.cfg
    }

    pub fn energy(&self, rho: &GridDensity) -> f64 {
        self.kernel.energy(&rho.cell_masses())
    }

    pub fn initial_state(&self, density: GridDensity) -> FlowState {
        let e = self.energy(&density);
        FlowState {
            density,
            time: 0.0,
            dt: 0.0,
            step_count: 0,
            energy_history: vec![(0.0, e)],
            dissipation_history: Vec::new(),
        }
    }

    fn faces(&self, u: &[f64]) -> Faces {
        let spec = self.kernel.spec();
        let strides = spec.strides();
        let mut outflow = vec![0.0; u.len()];
        let velocity: Vec<Vec<f64>> = (0..spec.dim())
            .map(|k| {
                let h = spec.spacing[k];
                let n = spec.shape[k];
                (0..u.len())
                    .map(|c| {
                        if (c / strides[k]) % n + 1 == n {
                            return 0.0;
                        }
                        let v = -self.cfg.tau * (u[c + strides[k]] - u[c]) / h;
                        if v > 0.0 {
                            outflow[c] += v;
                        } else {
                            outflow[c + strides[k]] -= v;
                        }
                        v
                    })
                    .collect()
            })
            .collect();
        let max_speed = outflow.iter().copied().fold(0.0, f64::max);
        Faces { velocity, max_speed }
    }

    /// Largest stable step for the current density.
    pub fn dt_max(&self, rho: &GridDensity) -> f64 {
        let u = self.kernel.apply(&rho.cell_masses());
        let faces = self.faces(&u);
        let h = self.kernel.spec().spacing.iter().copied().fold(f64::INFINITY, f64::min);
        CFL * h / (faces.max_speed + 1e-30)
    }

    pub fn step(&self, state: &FlowState) -> Result<FlowState> {
        let u = self.kernel.apply(&state.density.cell_masses());
        let (density, dt, dissipation) = self.advect(&state.density, &u)?;
        let time = state.time + dt;
        let mut energy_history = state.energy_history.clone();
        energy_history.push((time, self.energy(&density)));
        let mut dissipation_history = state.dissipation_history.clone();
        dissipation_history.push(dissipation);
        Ok(FlowState { density, time, dt, step_count: state.step_count + 1, energy_history, dissipation_history })
    }

    /// One upwind step of ρ_t = τ·div(ρ∇u) for a given potential u. Returns
    /// the new density, the step used and the discrete dissipation.
    pub fn advect(&self, density: &GridDensity, u: &[f64]) -> Result<(GridDensity, f64, f64)> {
        let spec = self.kernel.spec();
        let faces = self.faces(u);
        let h_min = spec.spacing.iter().copied().fold(f64::INFINITY, f64::min);
        let dt_max = CFL * h_min / (faces.max_speed + 1e-30);
        let dt = match self.cfg.dt {
            Some(dt) if dt > dt_max => return Err(Error::CflViolation { dt, dt_max }),
            Some(dt) => dt,
            None => dt_max,
        };
        let strides = spec.strides();
        let rho = density.cells();
        let vol = spec.cell_volume();
        let mut next = density.cell_masses();
        let mut dissipation = 0.0;
        for (k, vel) in faces.velocity.iter().enumerate() {
            let area = vol / spec.spacing[k];
            for (c, &v) in vel.iter().enumerate() {
                if v == 0.0 {
                    continue;
                }
                let up = if v > 0.0 { rho[c] } else { rho[c + strides[k]] };
                let moved = dt * up * v * area;
                next[c] -= moved;
                next[c + strides[k]] += moved;
                dissipation += 2.0 * up * v * v * vol / self.cfg.tau;
            }
        }
        if let Some((cell, &value)) = next.iter().enumerate().find(|(_, &m)| m < 0.0) {
            return Err(Error::NegativeDensity { cell, value: value / vol });
        }
        Ok((GridDensity::from_masses(spec.clone(), &next)?, dt, dissipation))
    }

    /// Runs `cfg.steps` steps, writing density snapshots and energy.csv when
    /// `out` is given.
    pub fn run(&self, initial: GridDensity, out: Option<&Path>) -> Result<FlowState> {
        let mut state = self.initial_state(initial);
        if let Some(dir) = out {
            fs::create_dir_all(dir)?;
            if self.cfg.snapshot_every > 0 {
                state.density.write(&dir.join("density_00000"))?;
            }
        }
        for _ in 0..self.cfg.steps {
            state = self.step(&state)?;
            if let Some(dir) = out {
                if self.cfg.snapshot_every > 0 && state.step_count.is_multiple_of(self.cfg.snapshot_every) {
                    state.density.write(&dir.join(format!("density_{:05}", state.step_count)))?;
                }
            }
        }
        if let Some(dir) = out {
            write_energy_csv(&state, &dir.join("energy.csv"))?;
        }
        Ok(state)
    }
}

pub fn write_energy_csv(state: &FlowState, path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["t", "I"])?;
    for (t, e) in &state.energy_history {
        wtr.write_record([format_f64(*t), format_f64(*e)])?;
    }
    wtr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DissipationReport {
    /// Per step: (ΔI/dt, −D).
    pub rates: Vec<(f64, f64)>,
    pub max_mismatch: f64,
    pub max_increase: f64,
    pub nonincreasing: bool,
}

/// Compares ΔI/dt with −2Σρ|∇U|² step by step.
pub fn dissipation_check(state: &FlowState) -> Result<DissipationReport> {
    let n = state.dissipation_history.len();
    if n < 2 {
        return Err(Error::TooFewSamples { required: 2, found: n });
    }
    let mut rates = Vec::with_capacity(n);
    let mut max_mismatch: f64 = 0.0;
    let mut max_increase = f64::NEG_INFINITY;
    for k in 0..n {
        let (t0, e0) = state.energy_history[k];
        let (t1, e1) = state.energy_history[k + 1];
        let d = state.dissipation_history[k];
        let rate = (e1 - e0) / (t1 - t0);
        rates.push((rate, -d));
        max_increase = max_increase.max(e1 - e0);
        if d > 0.0 {
            max_mismatch = max_mismatch.max((rate + d).abs() / d);
        } else if rate != 0.0 {
            max_mismatch = f64::INFINITY;
        }
    }
    Ok(DissipationReport { rates, max_mismatch, max_increase, nonincreasing: max_increase <= 1e-8 })
}

/// Point particles under ẋᵢ = τ Σⱼ mⱼ (xᵢ − xⱼ)/|xᵢ − xⱼ|² (the 2D log kernel),
/// advanced with classical Runge–Kutta.
pub fn particle_flow(points: &mut [Vec<f64>], masses: &[f64], tau: f64, dt: f64, steps: usize) {
    let velocity = |p: &[Vec<f64>]| -> Vec<Vec<f64>> {
        let d = p[0].len();
        (0..p.len())
            .map(|i| {
                let mut v = vec![0.0; d];
                for j in 0..p.len() {
                    if i == j {
                        continue;
                    }
                    let diff: Vec<f64> = (0..d).map(|k| p[i][k] - p[j][k]).collect();
                    let r2: f64 = diff.iter().map(|x| x * x).sum();
                    for k in 0..d {
                        v[k] += tau * masses[j] * diff[k] / r2;
                    }
                }
                v
            })
            .collect()
    };
    let shift = |p: &[Vec<f64>], v: &[Vec<f64>], a: f64| -> Vec<Vec<f64>> {
        p.iter().zip(v).map(|(x, w)| x.iter().zip(w).map(|(a0, b)| a0 + a * b).collect()).collect()
    };
    for _ in 0..steps {
        let k1 = velocity(points);
        let k2 = velocity(&shift(points, &k1, 0.5 * dt));
        let k3 = velocity(&shift(points, &k2, 0.5 * dt));
        let k4 = velocity(&shift(points, &k3, dt));
        for i in 0..points.len() {
            for k in 0..points[i].len() {
                points[i][k] += dt / 6.0 * (k1[i][k] + 2.0 * k2[i][k] + 2.0 * k3[i][k] + k4[i][k]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::GridSpec;

    fn blob(n: usize, half: f64, centers: &[[f64; 2]], sigma: f64) -> GridDensity {
        let spec = GridSpec::centered_cube(2, half, n).unwrap();
        GridDensity::from_fn(spec, |x| {
            centers
                .iter()
                .map(|c| (-((x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2)) / (2.0 * sigma * sigma)).exp())
                .sum()
        })
        .unwrap()
    }

    fn second_moment(rho: &GridDensity) -> f64 {
        let spec = rho.spec();
        rho.cell_masses()
            .iter()
            .enumerate()
            .map(|(c, m)| {
                let x = spec.cell_center(c);
                m * (x[0] * x[0] + x[1] * x[1])
            })
            .sum()
    }

    #[test]
    fn constant_potential_moves_nothing() {
        let spec = GridSpec::centered_cube(2, 1.0, 9).unwrap();
        let mut m = vec![0.0; spec.len()];
        m[spec.flat_index(&[4, 4])] = 1.0;
        let rho = GridDensity::from_masses(spec.clone(), &m).unwrap();
        let flow = Flow::new(&rho, FlowConfig { dt: Some(1e-3), ..FlowConfig::default() }).unwrap();
        let (next, _, d) = flow.advect(&rho, &vec![0.7; spec.len()]).unwrap();
        assert_eq!(next, rho);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn single_cell_spreads_evenly() {
        let spec = GridSpec::centered_cube(2, 1.0, 9).unwrap();
        let mut m = vec![0.0; spec.len()];
        let center = spec.flat_index(&[4, 4]);
        m[center] = 1.0;
        let rho = GridDensity::from_masses(spec.clone(), &m).unwrap();
        let flow = Flow::new(&rho, FlowConfig::default()).unwrap();
        let s = flow.step(&flow.initial_state(rho)).unwrap();
        let c = s.density.cell_masses();
        let nb = [[3, 4], [5, 4], [4, 3], [4, 5]].map(|i| c[spec.flat_index(&i)]);
        assert!(nb.iter().all(|&v| v > 0.0 && (v - nb[0]).abs() < 1e-15));
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mass_is_conserved_and_energy_decreases() {
        let rho = blob(48, 2.0, &[[0.0, 0.0]], 0.3);
        let flow = Flow::new(&rho, FlowConfig { steps: 40, ..FlowConfig::default() }).unwrap();
        let s = flow.run(rho, None).unwrap();
        assert!((s.density.mass() - 1.0).abs() < 1e-12);
        assert!(s.energy_history.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-8));
        let rep = dissipation_check(&s).unwrap();
        assert!(rep.nonincreasing);
        assert!(rep.max_mismatch < 0.1, "{}", rep.max_mismatch);
    }

    #[test]
    fn smaller_steps_shrink_the_dissipation_mismatch() {
        let rho = blob(40, 2.0, &[[0.0, 0.0]], 0.3);
        let probe = Flow::new(&rho, FlowConfig::default()).unwrap();
        let dt = probe.dt_max(&rho);
        let mismatch = |dt: f64| {
            let flow = Flow::new(&rho, FlowConfig { dt: Some(dt), steps: 3, ..FlowConfig::default() }).unwrap();
            dissipation_check(&flow.run(rho.clone(), None).unwrap()).unwrap().max_mismatch
        };
        let a = mismatch(0.8 * dt);
        let b = mismatch(0.4 * dt);
        assert!(b < 0.6 * a && b > 0.4 * a, "{a} {b}");
    }

    #[test]
    fn radial_symmetry_is_preserved() {
        let rho = blob(40, 2.0, &[[0.0, 0.0]], 0.35);
        let flow = Flow::new(&rho, FlowConfig { steps: 30, ..FlowConfig::default() }).unwrap();
        let s = flow.run(rho, None).unwrap();
        let spec = s.density.spec().clone();
        let c = s.density.cells();
        let n = 40;
        let mut asym: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let v = c[spec.flat_index(&[i, j])];
                for w in [
                    c[spec.flat_index(&[n - 1 - i, j])],
                    c[spec.flat_index(&[i, n - 1 - j])],
                    c[spec.flat_index(&[j, i])],
                ] {
                    asym = asym.max((v - w).abs());
                }
            }
        }
        assert!(asym < 1e-6, "{asym}");
    }

    #[test]
    fn second_moment_grows_at_the_kernel_rate() {
        // for the 2D log kernel d/dt ∫|x|²ρ = τ ∫∫ρρ = τ; upwinding adds an
        // O(h) excess
        let excess = |n: usize| {
            let rho = blob(n, 2.5, &[[0.0, 0.0]], 0.3);
            let flow = Flow::new(&rho, FlowConfig { dt: Some(2e-3), steps: 10, ..FlowConfig::default() }).unwrap();
            let m0 = second_moment(&rho);
            let s = flow.run(rho, None).unwrap();
            (second_moment(&s.density) - m0) / s.time - 1.0
        };
        let coarse = excess(48);
        let fine = excess(96);
        assert!(coarse.abs() < 0.3, "{coarse}");
        assert!(fine.abs() < 0.6 * coarse.abs() && fine.abs() > 0.4 * coarse.abs(), "{coarse} {fine}");
    }

    #[test]
    fn particle_second_moment_rate() {
        let n = 40;
        let mut pts: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let t = 2.399963 * k as f64;
                let r = 0.3 * ((k as f64 + 0.5) / n as f64).sqrt();
                vec![r * t.cos(), r * t.sin()]
            })
            .collect();
        let m = vec![1.0 / n as f64; n];
        let m2 = |p: &[Vec<f64>]| p.iter().map(|x| (x[0] * x[0] + x[1] * x[1]) / n as f64).sum::<f64>();
        let before = m2(&pts);
        particle_flow(&mut pts, &m, 1.0, 1e-4, 50);
        let rate = (m2(&pts) - before) / 5e-3;
        assert!((rate - (1.0 - 1.0 / n as f64)).abs() < 1e-6, "{rate}");
    }

    #[test]
    fn blobs_separate_like_particles() {
        let sigma = 0.15;
        let centers = [[-0.5, 0.0], [0.5, 0.0]];
        let rho = blob(80, 2.0, &centers, sigma);
        let cfg = FlowConfig { dt: Some(2e-4), steps: 100, ..FlowConfig::default() };
        let flow = Flow::new(&rho, cfg).unwrap();
        let s = flow.run(rho, None).unwrap();
        let spec = s.density.spec().clone();
        let (mut num, mut den) = (0.0, 0.0);
        for (c, m) in s.density.cell_masses().iter().enumerate() {
            let x = spec.cell_center(c);
            if x[0] > 0.0 {
                num += m * x[0];
                den += m;
            }
        }
        let grid_centroid = num / den;

        // 250 quasi-random particles per blob from the inverse Rayleigh CDF
        let per = 250;
        let mut pts = Vec::new();
        for c in centers {
            for k in 0..per {
                let r = sigma * (-2.0 * (1.0 - (k as f64 + 0.5) / per as f64).ln()).sqrt();
                let t = 2.399963229728653 * k as f64;
                pts.push(vec![c[0] + r * t.cos(), c[1] + r * t.sin()]);
            }
        }
        let m = vec![1.0 / pts.len() as f64; pts.len()];
        particle_flow(&mut pts, &m, 1.0, 2e-4, 100);
        let right: Vec<&Vec<f64>> = pts.iter().filter(|p| p[0] > 0.0).collect();
        let particle_centroid = right.iter().map(|p| p[0]).sum::<f64>() / right.len() as f64;
        assert!(grid_centroid > 0.5 && particle_centroid > 0.5);
        let moved_grid = grid_centroid - 0.5;
        let moved_part = particle_centroid - 0.5;
        assert!((moved_grid - moved_part).abs() < 0.1 * moved_part, "{moved_grid} vs {moved_part}");
    }

    #[test]
    fn cfl_is_enforced() {
        let rho = blob(32, 2.0, &[[0.0, 0.0]], 0.3);
        let flow = Flow::new(&rho, FlowConfig { dt: Some(10.0), ..FlowConfig::default() }).unwrap();
        assert!(matches!(flow.step(&flow.initial_state(rho)), Err(Error::CflViolation { .. })));
    }

    #[test]
    fn energy_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let rho = blob(16, 2.0, &[[0.0, 0.0]], 0.4);
        let flow = Flow::new(&rho, FlowConfig { steps: 4, snapshot_every: 2, ..FlowConfig::default() }).unwrap();
        flow.run(rho, Some(dir.path())).unwrap();
        let text = fs::read_to_string(dir.path().join("energy.csv")).unwrap();
        assert!(text.starts_with("t,I\n"));
        assert_eq!(text.lines().count(), 6);
        assert!(dir.path().join("density_00004.csv").exists() || dir.path().join("density_00004.json").exists());
    }
}
