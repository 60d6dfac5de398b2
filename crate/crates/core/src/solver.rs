//! Minimization of J[ρ] = I[ρ] + d²(ρ, ρ₀) over weights on grid cells.
//!
//! The unknown is the transport plan γ between candidate cells and the atoms
//! of ρ₀; the weights are its row sums. Each column of γ is a scaled simplex,
//! and J is a convex quadratic in γ, so accelerated projected gradient steps
//! reach the global minimum. Optimality is certified by the dual potentials
//! β_j = minᵢ (2U(xᵢ) + ½|xᵢ − y_j|²) computed over every candidate.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::energy::EnergyBreakdown;
use crate::envelope::{min_plus_quadratic, Lattice};
use crate::error::{Error, Result};
use crate::kernel::cell::box_average;
use crate::kernel::{GridKernel, KernelKind, PotentialField};
use crate::measure::{dist2, Ball, DiscreteMeasure, GridSpec};
use crate::transport::{solve, TransportPlan};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StepRule {
    Fixed(f64),
    Backtracking { armijo: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub grid: GridSpec,
    /// Flat indices of the candidate cells; all cells when absent.
    pub candidates: Option<Vec<usize>>,
    pub kernel: KernelKind,
    /// Multiplies the interaction term; 0 switches it off.
    pub interaction_scale: f64,
    pub max_outer_iters: usize,
    pub max_inner_iters: usize,
    pub step_rule: StepRule,
    pub tol_el: f64,
    /// Relative Frank–Wolfe gap at which the inner iteration stops.
    pub tol_gap: f64,
    /// Half-width in cells of the window each atom of ρ₀ may send mass to;
    /// every candidate when absent.
    pub window: Option<usize>,
    pub confinement_radius_schedule: Vec<f64>,
    pub rng_seed: u64,
    /// Allowed distance of support points from the convex hull of supp ρ₀.
    pub delta_supp: f64,
}

impl SolverConfig {
    pub fn new(grid: GridSpec) -> Self {
        let kernel = if grid.dim() == 3 { KernelKind::Riesz(3) } else { KernelKind::Log2D };
        SolverConfig {
            grid,
            candidates: None,
            kernel,
            interaction_scale: 1.0,
            max_outer_iters: 30,
            max_inner_iters: 20_000,
            step_rule: StepRule::Backtracking { armijo: 1e-4 },
            tol_el: 1e-6,
            tol_gap: 1e-12,
            window: None,
            confinement_radius_schedule: Vec::new(),
            rng_seed: 0,
            delta_supp: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.tol_el > 0.0) || !(self.tol_gap > 0.0) {
            return bad("tolerances must be positive");
        }
        if !(self.interaction_scale >= 0.0) {
            return bad("interaction scale must be nonnegative");
        }
        if self.confinement_radius_schedule.windows(2).any(|w| w[1] > w[0]) {
            return bad("confinement schedule must be nonincreasing");
        }
        if let StepRule::Fixed(t) = self.step_rule {
            if !(t > 0.0) {
                return bad("fixed step must be positive");
            }
        }
        if let Some(c) = &self.candidates {
            if let Some(&i) = c.iter().find(|&&i| i >= self.grid.len()) {
                return Err(Error::OutOfGrid { index: i });
            }
        }
        Ok(())
    }

    fn candidate_cells(&self) -> Vec<usize> {
        match &self.candidates {
            Some(c) => {
                let mut c = c.clone();
                c.sort_unstable();
                c.dedup();
                c
            }
            None => (0..self.grid.len()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElReport {
    pub lambda_hat: f64,
    /// max over support of |2U + ½|x − T(x)|² − λ̂| with barycentric T.
    pub support_max_dev: f64,
    pub support_std: f64,
    /// max over support of 2U(xᵢ) + φᵢ − λ̂ with φ the source potential.
    pub dual_support_max: f64,
    /// min over the other candidates of 2U(xᵢ) + φᵢ − λ̂.
    pub off_support_min: f64,
    /// Σ γ (C − φ − ψ).
    pub duality_gap: f64,
    pub support_size: usize,
}

#[derive(Debug, Clone)]
pub struct EquilibriumResult {
    /// Candidate cell centers with the optimal weights (zeros allowed).
    pub measure: DiscreteMeasure,
    pub grid: GridSpec,
    pub cells: Vec<usize>,
    pub kernel: KernelKind,
    pub interaction_scale: f64,
    pub energy: EnergyBreakdown,
    pub lambda_hat: f64,
    pub support_mask: Vec<bool>,
    /// U = K w at the candidates.
    pub potential: Vec<f64>,
    pub el_report: ElReport,
    pub plan: TransportPlan,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after every accepted step.
    pub energy_history: Vec<f64>,
    pub confinement_radius: Option<f64>,
}

impl EquilibriumResult {
    pub fn weights(&self) -> &[f64] {
        self.measure.weights()
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.cells.len()).filter(|&i| self.support_mask[i]).collect()
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing.iter().copied().fold(0.0, f64::max)
    }

    /// Per-cell masses on the full grid.
    pub fn grid_masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.len()];
        for (&c, &w) in self.cells.iter().zip(self.weights()) {
            m[c] = w;
        }
        m
    }

    /// U on every cell of the grid, with centered-difference gradient.
    pub fn grid_potential(&self) -> Result<PotentialField> {
        let kernel = GridKernel::new(&self.grid, self.kernel)?;
        let u = kernel.apply(&self.grid_masses());
        Ok(PotentialField::from_values(self.grid.clone(), u, "equilibrium potential"))
    }

    /// U(x) = Σ wᵢ · (average of K over cell i) at an arbitrary point.
    pub fn potential_at(&self, x: &[f64]) -> f64 {
        let mut off = vec![0.0; x.len()];
        let mut total = 0.0;
        for (i, &w) in self.weights().iter().enumerate() {
            if w == 0.0 {
                continue;
            }
            let p = self.measure.point(i);
            for k in 0..x.len() {
                off[k] = x[k] - p[k];
            }
            total += w * box_average(self.kernel, &off, &self.grid.spacing).unwrap_or(f64::NAN);
        }
        total
    }

    /// Barycentric image T(xᵢ) of every candidate with mass.
    pub fn barycentric_map(&self) -> Vec<Option<Vec<f64>>> {
        self.plan.barycentric_targets()
    }

    /// Writes weights.csv, energy.json, el_report.json and plan.csv.
    pub fn write_run_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        self.measure.write_csv(&dir.join("weights.csv"))?;
        fs::write(dir.join("energy.json"), serde_json::to_string_pretty(&self.energy)?)?;
        fs::write(dir.join("el_report.json"), serde_json::to_string_pretty(&self.el_report)?)?;
        self.plan.write_csv(&dir.join("plan.csv"))?;
        Ok(())
    }

    /// Largest distance from a support point to the convex hull of the
    /// target atoms (measured as distance to the nearest target atom when
    /// the hull test is not available in this dimension).
    pub fn support_excursion(&self) -> f64 {
        let target = &self.plan.target;
        self.support()
            .iter()
            .map(|&i| {
                let x = self.measure.point(i);
                hull_distance(target, x)
            })
            .fold(0.0, f64::max)
    }
}

/// Distance from x to the convex hull of the atoms, exact in 1D and
/// bounded above by the nearest-atom distance otherwise.
fn hull_distance(mu: &DiscreteMeasure, x: &[f64]) -> f64 {
    if mu.dim() == 1 {
        let lo = mu.points().map(|p| p[0]).fold(f64::INFINITY, f64::min);
        let hi = mu.points().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
        return (lo - x[0]).max(x[0] - hi).max(0.0);
    }
    mu.points().map(|p| dist2(p, x)).fold(f64::INFINITY, f64::min).sqrt()
}

/// Euclidean projection onto {z ≥ 0, Σz = b}, by Michelot's fixed-point
/// iteration on the threshold.
fn project_scaled_simplex(v: &mut [f64], b: f64) {
    if v.len() == 1 {
        v[0] = b;
        return;
    }
    let mut theta = (v.iter().sum::<f64>() - b) / v.len() as f64;
    loop {
        let (mut sum, mut count) = (0.0, 0usize);
        for &x in v.iter() {
            if x > theta {
                sum += x;
                count += 1;
            }
        }
        let next = (sum - b) / count as f64;
        if next <= theta {
            break;
        }
        theta = next;
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

struct Problem<'a> {
    grid: &'a GridSpec,
    kernel: GridKernel,
    scale: f64,
    cells: Vec<usize>,
    cand_of_cell: Vec<usize>,
    points: Vec<f64>,
    target: &'a DiscreteMeasure,
    window: Option<usize>,
    grid_lattice: Lattice,
    target_lattice: Option<(Lattice, Vec<usize>)>,
    // column-sparse plan layout
    col_start: Vec<usize>,
    rows: Vec<usize>,
    cost: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(rho0: &'a DiscreteMeasure, cfg: &'a SolverConfig) -> Result<Self> {
        cfg.validate()?;
        if rho0.dim() != cfg.grid.dim() {
            return Err(Error::DimensionMismatch { expected: cfg.grid.dim(), found: rho0.dim() });
        }
        let cells = cfg.candidate_cells();
        if cells.len() < 2 {
            return Err(Error::DegenerateCandidates);
        }
        let kernel = GridKernel::new(&cfg.grid, cfg.kernel)?;
        let mut cand_of_cell = vec![usize::MAX; cfg.grid.len()];
        let mut points = Vec::with_capacity(cells.len() * cfg.grid.dim());
        for (i, &c) in cells.iter().enumerate() {
            cand_of_cell[c] = i;
            points.extend(cfg.grid.cell_center(c));
        }
        Ok(Problem {
            grid: &cfg.grid,
            kernel,
            scale: cfg.interaction_scale,
            cells,
            cand_of_cell,
            points,
            target: rho0,
            window: cfg.window,
            grid_lattice: Lattice::from_grid(&cfg.grid),
            target_lattice: Lattice::detect(rho0),
            col_start: Vec::new(),
            rows: Vec::new(),
            cost: Vec::new(),
        })
    }

    fn n(&self) -> usize {
        self.cells.len()
    }

    fn m(&self) -> usize {
        self.target.len()
    }

    fn point(&self, i: usize) -> &[f64] {
        let d = self.grid.dim();
        &self.points[i * d..(i + 1) * d]
    }

    fn cost_of(&self, i: usize, j: usize) -> f64 {
        0.5 * dist2(self.point(i), self.target.point(j))
    }

    /// Candidates within the window around the candidate `center`.
    fn window_rows(&self, center: usize) -> Vec<usize> {
        match self.window {
            None => (0..self.n()).collect(),
            Some(r) => {
                let c = self.grid.multi_index(self.cells[center]);
                let d = c.len();
                let side = 2 * r + 1;
                let mut out = Vec::with_capacity(side.pow(d as u32));
                let mut idx = vec![0usize; d];
                'outer: for code in 0..side.pow(d as u32) {
                    let mut rem = code;
                    for k in 0..d {
                        let off = (rem % side) as isize - r as isize;
                        rem /= side;
                        let v = c[k] as isize + off;
                        if v < 0 || v >= self.grid.shape[k] as isize {
                            continue 'outer;
                        }
                        idx[k] = v as usize;
                    }
                    let cand = self.cand_of_cell[self.grid.flat_index(&idx)];
                    if cand != usize::MAX {
                        out.push(cand);
                    }
                }
                out.sort_unstable();
                out
            }
        }
    }

    /// Builds the column layout from sorted row sets, copying the plan
    /// entries of `old` (which must lie inside the sets).
    fn layout(&mut self, sets: &[Vec<usize>], old: &[Vec<(usize, f64)>]) -> Vec<f64> {
        self.col_start.clear();
        self.rows.clear();
        self.cost.clear();
        let mut gamma = Vec::new();
        for j in 0..self.m() {
            self.col_start.push(self.rows.len());
            let start = self.rows.len();
            for &i in &sets[j] {
                self.rows.push(i);
                self.cost.push(self.cost_of(i, j));
                gamma.push(0.0);
            }
            for &(i, g) in &old[j] {
                let pos = sets[j].binary_search(&i).expect("plan entry inside its column");
                gamma[start + pos] += g;
            }
        }
        self.col_start.push(self.rows.len());
        gamma
    }

    fn columns(&self, gamma: &[f64]) -> Vec<Vec<(usize, f64)>> {
        (0..self.m())
            .map(|j| {
                (self.col_start[j]..self.col_start[j + 1])
                    .filter(|&e| gamma[e] > 0.0)
                    .map(|e| (self.rows[e], gamma[e]))
                    .collect()
            })
            .collect()
    }

    fn weights(&self, gamma: &[f64]) -> Vec<f64> {
        let mut w = vec![0.0; self.n()];
        for (e, &g) in gamma.iter().enumerate() {
            w[self.rows[e]] += g;
        }
        w
    }

    /// U = K w at the candidates.
    fn potential(&self, w: &[f64]) -> Vec<f64> {
        let mut masses = vec![0.0; self.grid.len()];
        for (i, &c) in self.cells.iter().enumerate() {
            masses[c] = w[i];
        }
        let u = self.kernel.apply(&masses);
        self.cells.iter().map(|&c| u[c]).collect()
    }

    fn objective(&self, w: &[f64], u: &[f64], gamma: &[f64]) -> f64 {
        let quad: f64 = w.iter().zip(u).map(|(a, b)| a * b).sum();
        let lin: f64 = gamma.iter().zip(&self.cost).map(|(g, c)| g * c).sum();
        self.scale * quad + lin
    }

    /// Frank–Wolfe gap Σ γ_e (g_e − β_j) within the current windows.
    fn fw_gap(&self, u: &[f64], gamma: &[f64]) -> f64 {
        let mut gap = 0.0;
        for j in 0..self.m() {
            let range = self.col_start[j]..self.col_start[j + 1];
            let beta =
                range.clone().map(|e| 2.0 * self.scale * u[self.rows[e]] + self.cost[e]).fold(f64::INFINITY, f64::min);
            for e in range {
                gap += gamma[e] * (2.0 * self.scale * u[self.rows[e]] + self.cost[e] - beta);
            }
        }
        gap
    }

    /// Largest eigenvalue of K restricted to zero-sum vectors, by power iteration.
    fn curvature_estimate(&self, seed: u64) -> f64 {
        let n = self.n();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut lambda = 0.0;
        for _ in 0..30 {
            let mean = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|x| *x -= mean);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 1.0;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            let kv = self.potential(&v);
            lambda = v.iter().zip(&kv).map(|(a, b)| a * b).sum::<f64>();
            v = kv;
        }
        lambda.abs().max(1e-12)
    }

    /// Accelerated projected gradient with restart. Returns the number of
    /// accepted steps and whether the gap tolerance was met.
    fn fista(
        &self,
        gamma: &mut Vec<f64>,
        cfg: &SolverConfig,
        step: &mut f64,
        max_iters: usize,
        history: &mut Vec<f64>,
    ) -> (usize, bool) {
        let armijo = match cfg.step_rule {
            StepRule::Backtracking { armijo } => armijo,
            StepRule::Fixed(_) => 0.0,
        };
        let fixed = matches!(cfg.step_rule, StepRule::Fixed(_));
        let mut x = gamma.clone();
        let mut wx = self.weights(&x);
        let mut ux = self.potential(&wx);
        let mut fx = self.objective(&wx, &ux, &x);
        let mut y = x.clone();
        let mut wy = wx.clone();
        let mut uy = ux.clone();
        let mut t: f64 = 1.0;
        let mut z = vec![0.0; x.len()];
        let mut accepted = 0;
        let mut converged = false;
        for iter in 0..max_iters {
            if iter % 10 == 0 {
                let gap = self.fw_gap(&ux, &x);
                if gap <= cfg.tol_gap * (1.0 + fx.abs()) {
                    converged = true;
                    break;
                }
            }
            let (wz, uz) = loop {
                for e in 0..z.len() {
                    z[e] = y[e] - *step * (2.0 * self.scale * uy[self.rows[e]] + self.cost[e]);
                }
                for j in 0..self.m() {
                    let r = self.col_start[j]..self.col_start[j + 1];
                    project_scaled_simplex(&mut z[r], self.target.weight(j));
                }
                let wz = self.weights(&z);
                let uz = self.potential(&wz);
                if fixed || self.scale == 0.0 {
                    break (wz, uz);
                }
                let dist: f64 = z.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
                let quad: f64 = self.scale
                    * wz.iter().zip(&wy).zip(uz.iter().zip(&uy)).map(|((a, b), (c, d))| (a - b) * (c - d)).sum::<f64>();
                if quad <= dist / (2.0 * *step) * (1.0 + 1e-9) + 1e-300 {
                    break (wz, uz);
                }
                *step *= 0.5;
            };
            let fz = self.objective(&wz, &uz, &z);
            let moved: f64 = z.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum();
            let sufficient = fz <= fx - armijo / *step * moved + 1e-15 * (1.0 + fx.abs());
            if sufficient {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let beta = (t - 1.0) / t_next;
                for e in 0..y.len() {
                    y[e] = z[e] + beta * (z[e] - x[e]);
                }
                for i in 0..wy.len() {
                    wy[i] = wz[i] + beta * (wz[i] - wx[i]);
                    uy[i] = uz[i] + beta * (uz[i] - ux[i]);
                }
                std::mem::swap(&mut x, &mut z);
                wx = wz;
                ux = uz;
                fx = fz;
                t = t_next;
                accepted += 1;
                history.push(fx);
            } else {
                // restart from the last accepted iterate
                t = 1.0;
                y.copy_from_slice(&x);
                wy.copy_from_slice(&wx);
                uy.copy_from_slice(&ux);
                if moved == 0.0 {
                    converged = true;
                    break;
                }
            }
        }
        *gamma = x;
        (accepted, converged)
    }

    /// minᵢ over all candidates of 2sU(xᵢ) + ½|xᵢ − y_j|², with the minimizing candidate.
    fn global_beta(&self, u: &[f64]) -> Vec<(f64, usize)> {
        if let Some((lat, index)) = &self.target_lattice {
            let mut values = vec![f64::INFINITY; self.grid.len()];
            for (i, &c) in self.cells.iter().enumerate() {
                values[c] = 2.0 * self.scale * u[i];
            }
            let env = min_plus_quadratic(&self.grid_lattice, &values, lat);
            return index.iter().map(|&b| (env[b].0, self.cand_of_cell[env[b].1])).collect();
        }
        (0..self.m())
            .map(|j| {
                (0..self.n())
                    .map(|i| (2.0 * self.scale * u[i] + self.cost_of(i, j), i))
                    .fold((f64::INFINITY, usize::MAX), |a, b| if b.0 < a.0 { b } else { a })
            })
            .collect()
    }

    /// φᵢ = min_j [½|xᵢ − y_j|² − ψ_j] at every candidate.
    fn source_potential(&self, psi: &[f64]) -> Vec<f64> {
        if let Some((lat, index)) = &self.target_lattice {
            let mut values = vec![f64::INFINITY; lat.len()];
            for (j, &b) in index.iter().enumerate() {
                values[b] = values[b].min(-psi[j]);
            }
            let env = min_plus_quadratic(lat, &values, &self.grid_lattice);
            return self.cells.iter().map(|&c| env[c].0).collect();
        }
        (0..self.n())
            .map(|i| (0..self.m()).map(|j| self.cost_of(i, j) - psi[j]).fold(f64::INFINITY, f64::min))
            .collect()
    }

    /// Initial plan from a result on another grid or reference: every atom
    /// copies the column of the nearest earlier atom, shifted by the offset
    /// between the two and rescaled to its own mass.
    fn prolong(&self, res: &EquilibriumResult) -> Vec<Vec<(usize, f64)>> {
        let coarse = &res.plan.target;
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); coarse.len()];
        for &(i, j, g) in &res.plan.pairs {
            cols[j].push((i, g));
        }
        let d = self.grid.dim();
        (0..self.m())
            .map(|j| {
                let y = self.target.point(j);
                let (jc, _) = coarse
                    .points()
                    .enumerate()
                    .map(|(k, p)| (k, dist2(p, y)))
                    .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
                let yc = coarse.point(jc);
                let scale = self.target.weight(j) / coarse.weight(jc);
                let mut col: Vec<(usize, f64)> = Vec::new();
                let mut p = vec![0.0; d];
                for &(i, g) in &cols[jc] {
                    let x = res.measure.point(i);
                    for k in 0..d {
                        p[k] = x[k] + y[k] - yc[k];
                    }
                    let cand = self.grid.locate(&p).map(|c| self.cand_of_cell[c]).filter(|&c| c != usize::MAX);
                    let cand = match cand {
                        Some(c) => c,
                        None => (0..self.n())
                            .min_by(|&a, &b| dist2(self.point(a), &p).partial_cmp(&dist2(self.point(b), &p)).unwrap())
                            .unwrap(),
                    };
                    match col.iter_mut().find(|e| e.0 == cand) {
                        Some(e) => e.1 += g * scale,
                        None => col.push((cand, g * scale)),
                    }
                }
                col
            })
            .collect()
    }

    /// Exact active-set solution of the KKT system when ρ₀ is a single atom.
    fn polish_single_target(&self, w: &mut [f64], tol: f64) -> bool {
        if self.m() != 1 || self.scale == 0.0 {
            return false;
        }
        let n = self.n();
        let c: Vec<f64> = (0..n).map(|i| self.cost_of(i, 0)).collect();
        let cutoff = 1e-12 / n as f64;
        let mut active: Vec<usize> = (0..n).filter(|&i| w[i] > cutoff).collect();
        if active.is_empty() {
            return false;
        }
        for _ in 0..4 * n {
            let k = active.len();
            let mut a = DMatrix::<f64>::zeros(k + 1, k + 1);
            let mut rhs = DVector::<f64>::zeros(k + 1);
            for (r, &i) in active.iter().enumerate() {
                for (s, &j) in active.iter().enumerate() {
                    a[(r, s)] = 2.0 * self.scale * self.kernel.entry(self.cells[i], self.cells[j]);
                }
                a[(r, k)] = -1.0;
                a[(k, r)] = 1.0;
                rhs[r] = -c[i];
            }
            rhs[k] = 1.0;
            let Some(sol) = a.lu().solve(&rhs) else { return false };
            let lambda = sol[k];
            if let Some((pos, _)) =
                (0..k).map(|r| (r, sol[r])).filter(|&(_, v)| v < 0.0).min_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            {
                active.remove(pos);
                continue;
            }
            let mut trial = vec![0.0; n];
            for (r, &i) in active.iter().enumerate() {
                trial[i] = sol[r];
            }
            let u = self.potential(&trial);
            let worst = (0..n)
                .filter(|i| !active.contains(i))
                .map(|i| (i, 2.0 * self.scale * u[i] + c[i] - lambda))
                .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
            match worst {
                Some((i, v)) if v < -tol => {
                    active.push(i);
                    active.sort_unstable();
                }
                _ => {
                    w.copy_from_slice(&trial);
                    return true;
                }
            }
        }
        false
    }
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Minimizes J over weights on the candidate cells of `cfg.grid`.
pub fn minimize(rho0: &DiscreteMeasure, cfg: &SolverConfig) -> Result<EquilibriumResult> {
    minimize_from(rho0, cfg, None)
}

/// As [`minimize`], starting from the plan of an earlier result.
pub fn minimize_from(
    rho0: &DiscreteMeasure,
    cfg: &SolverConfig,
    start: Option<&EquilibriumResult>,
) -> Result<EquilibriumResult> {
    let mut prob = Problem::new(rho0, cfg)?;
    let n = prob.n();
    let m = prob.m();

    // initial plan: warm start, or every atom to its nearest candidate
    // initial plan: warm start, or every atom to its nearest candidate
    let old: Vec<Vec<(usize, f64)>> = match start {
        Some(res) if res.cells == prob.cells && res.plan.target.len() == m => {
            let mut cols = vec![Vec::new(); m];
            for &(i, j, g) in &res.plan.pairs {
                cols[j].push((i, g));
            }
            cols
        }
        Some(res) => prob.prolong(res),
        None => {
            let saved = prob.scale;
            prob.scale = 0.0;
            let nearest = prob.global_beta(&vec![0.0; n]);
            prob.scale = saved;
            nearest.iter().enumerate().map(|(j, b)| vec![(b.1, rho0.weight(j))]).collect()
        }
    };
    let mut sets: Vec<Vec<usize>> = old
        .iter()
        .map(|col| {
            let mut s: Vec<usize> = col.iter().flat_map(|&(i, _)| prob.window_rows(i)).collect();
            s.sort_unstable();
            s.dedup();
            s
        })
        .collect();
    let mut gamma = prob.layout(&sets, &old);

    let mut step = match cfg.step_rule {
        StepRule::Fixed(t) => t,
        StepRule::Backtracking { .. } if prob.scale == 0.0 => 1e3,
        StepRule::Backtracking { .. } => 1.0 / (2.0 * prob.scale * prob.curvature_estimate(cfg.rng_seed)),
    };
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut inner_converged = false;
    let mut certified = false;
    for _outer in 0..cfg.max_outer_iters.max(1) {
        let (acc, conv) = prob.fista(&mut gamma, cfg, &mut step, cfg.max_inner_iters, &mut history);
        iterations += acc;
        inner_converged = conv;
        if prob.window.is_none() {
            certified = true;
            break;
        }
        // windows around the current support and every column's global best
        let w = prob.weights(&gamma);
        let u = prob.potential(&w);
        let global = prob.global_beta(&u);
        let mut grew = false;
        for (j, set) in sets.iter_mut().enumerate() {
            let range = prob.col_start[j]..prob.col_start[j + 1];
            let local =
                range.clone().map(|e| 2.0 * prob.scale * u[prob.rows[e]] + prob.cost[e]).fold(f64::INFINITY, f64::min);
            if global[j].0 < local - 1e-12 * (1.0 + local.abs()) {
                let mut next: Vec<usize> = range
                    .filter(|&e| gamma[e] > 0.0)
                    .flat_map(|e| prob.window_rows(prob.rows[e]))
                    .chain(prob.window_rows(global[j].1))
                    .collect();
                next.sort_unstable();
                next.dedup();
                *set = next;
                grew = true;
            }
        }
        if !grew {
            certified = true;
            break;
        }
        let cols = prob.columns(&gamma);
        gamma = prob.layout(&sets, &cols);
    }

    let mut w = prob.weights(&gamma);
    let polished = prob.polish_single_target(&mut w, 1e-14);
    if polished {
        // single atom: the plan column is the weight vector
        for (e, g) in gamma.iter_mut().enumerate() {
            *g = w[prob.rows[e]];
        }
    }
    let u = prob.potential(&w);
    finalize(&prob, cfg, gamma, w, u, history, iterations, (inner_converged || polished) && certified)
}

#[allow(clippy::too_many_arguments)]
fn finalize(
    prob: &Problem,
    cfg: &SolverConfig,
    gamma: Vec<f64>,
    w: Vec<f64>,
    u: Vec<f64>,
    history: Vec<f64>,
    iterations: usize,
    converged: bool,
) -> Result<EquilibriumResult> {
    let n = prob.n();
    let m = prob.m();
    let s = prob.scale;
    let w_cut = 1e-8 / n as f64;
    let support_mask: Vec<bool> = w.iter().map(|&v| v > w_cut).collect();
    if !support_mask.iter().any(|&b| b) {
        return Err(Error::NoSupport);
    }

    let mut pairs = Vec::new();
    let mut cost = 0.0;
    for j in 0..m {
        for e in prob.col_start[j]..prob.col_start[j + 1] {
            if gamma[e] > 0.0 {
                pairs.push((prob.rows[e], j, gamma[e]));
                cost += gamma[e] * prob.cost[e];
            }
        }
    }
    pairs.sort_by_key(|a| (a.0, a.1));
    let measure = DiscreteMeasure::from_flat(prob.grid.dim(), prob.points.clone(), w.clone())?;
    let mut plan = TransportPlan {
        pairs,
        source: measure.clone(),
        target: prob.target.clone(),
        cost,
        dual_source: Vec::new(),
        dual_target: Vec::new(),
        approximate: false,
    };

    // λ̂ from the barycentric first variation
    let bary = plan.barycentric_targets();
    let first_variation: Vec<Option<f64>> = (0..n)
        .map(|i| bary[i].as_ref().filter(|_| support_mask[i]).map(|t| 2.0 * s * u[i] + 0.5 * dist2(prob.point(i), t)))
        .collect();
    let mut fv: Vec<f64> = first_variation.iter().flatten().copied().collect();
    let lambda_hat = median(&mut fv.clone());
    let support_max_dev = fv.iter().map(|v| (v - lambda_hat).abs()).fold(0.0, f64::max);
    let mean = fv.iter().sum::<f64>() / fv.len().max(1) as f64;
    let support_std = (fv.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / fv.len().max(1) as f64).sqrt();
    fv.clear();

    // dual potentials: ψ_j = β_j − λ̂, φᵢ = min_j (C_ij − ψ_j)
    let beta = prob.global_beta(&u);
    let psi: Vec<f64> = beta.iter().map(|b| b.0 - lambda_hat).collect();
    let phi = prob.source_potential(&psi);
    let residual: Vec<f64> = (0..n).map(|i| 2.0 * s * u[i] + phi[i] - lambda_hat).collect();
    let dual_support_max = (0..n).filter(|&i| support_mask[i]).map(|i| residual[i].abs()).fold(0.0, f64::max);
    let off_support_min = (0..n).filter(|&i| !support_mask[i]).map(|i| residual[i]).fold(f64::INFINITY, f64::min);
    let duality_gap: f64 = plan.pairs.iter().map(|&(i, j, g)| g * (prob.cost_of(i, j) - phi[i] - psi[j])).sum();
    plan.dual_source = phi;
    plan.dual_target = psi;
    plan.approximate = !plan.is_optimal();

    let interaction = s * w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>();
    let energy = EnergyBreakdown::new(interaction, plan.cost);
    let el_report = ElReport {
        lambda_hat,
        support_max_dev,
        support_std,
        dual_support_max,
        off_support_min,
        duality_gap,
        support_size: support_mask.iter().filter(|&&b| b).count(),
    };
    let converged = converged && support_max_dev.min(dual_support_max) <= cfg.tol_el;
    Ok(EquilibriumResult {
        measure,
        grid: prob.grid.clone(),
        cells: prob.cells.clone(),
        kernel: cfg.kernel,
        interaction_scale: s,
        energy,
        lambda_hat,
        support_mask,
        potential: u,
        el_report,
        plan,
        converged,
        iterations,
        energy_history: history,
        confinement_radius: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub pairs: usize,
    /// min of ½|x₀ − y*|² − ½|x* − y*|² + 2U(x₀) − 2U(x*).
    pub min_value: f64,
    pub lambda_hat: f64,
    pub support_max_dev: f64,
    pub support_std: f64,
}

/// Evaluates the first-variation inequality on `pairs` random combinations
/// of a plan-support pair (x*, y*) and a probe x₀.
pub fn el_residual(
    res: &EquilibriumResult,
    probes: &[Vec<f64>],
    pairs: usize,
    seed: u64,
) -> Result<MonotonicityReport> {
    if probes.is_empty() {
        return Err(Error::EmptyBall);
    }
    let support: Vec<&(usize, usize, f64)> = res.plan.pairs.iter().filter(|p| p.2 > 0.0).collect();
    if support.is_empty() {
        return Err(Error::NoSupport);
    }
    let s = res.interaction_scale;
    let probe_u: Vec<f64> = probes.iter().map(|p| res.potential_at(p)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_value = f64::INFINITY;
    for _ in 0..pairs {
        let &&(i, j, _) = &support[rng.gen_range(0..support.len())];
        let k = rng.gen_range(0..probes.len());
        let x_star = res.measure.point(i);
        let y_star = res.plan.target.point(j);
        let x0 = &probes[k];
        let v = 0.5 * dist2(x0, y_star) - 0.5 * dist2(x_star, y_star) + 2.0 * s * (probe_u[k] - res.potential[i]);
        min_value = min_value.min(v);
    }
    Ok(MonotonicityReport {
        pairs,
        min_value,
        lambda_hat: res.el_report.lambda_hat,
        support_max_dev: res.el_report.support_max_dev,
        support_std: res.el_report.support_std,
    })
}

/// J of the normalized restriction of a result's measure to B_ε(0), using the
/// solver's discrete interaction.
fn restricted_energy(res: &EquilibriumResult, eps: f64) -> Result<f64> {
    let ball = Ball::centered(res.grid.dim(), eps)?;
    let (restricted, mass) = res.measure.restrict_normalize(&ball)?;
    if mass >= 1.0 - 1e-15 {
        return Ok(res.energy.total);
    }
    let kernel = GridKernel::new(&res.grid, res.kernel)?;
    let mut masses = vec![0.0; res.grid.len()];
    for (i, &c) in res.cells.iter().enumerate() {
        if ball.contains(res.measure.point(i)) {
            masses[c] = res.weights()[i] / mass;
        }
    }
    let interaction = res.interaction_scale * kernel.energy(&masses);
    let nonzero: Vec<usize> = (0..restricted.len()).filter(|&i| restricted.weight(i) > 0.0).collect();
    let pts: Vec<Vec<f64>> = nonzero.iter().map(|&i| restricted.point(i).to_vec()).collect();
    let wts: Vec<f64> = nonzero.iter().map(|&i| restricted.weight(i)).collect();
    let compact = DiscreteMeasure::new(&pts, &wts)?;
    Ok(interaction + solve(&compact, &res.plan.target)?.cost)
}

/// Minimizes on candidates restricted to the shrinking balls of the schedule
/// while restriction does not increase the energy.
pub fn confinement_loop(rho0: &DiscreteMeasure, cfg: &SolverConfig) -> Result<EquilibriumResult> {
    if cfg.confinement_radius_schedule.is_empty() {
        return Err(Error::InvalidParameter("confinement schedule is empty".into()));
    }
    cfg.validate()?;
    let mut best = minimize(rho0, cfg)?;
    let all = cfg.candidate_cells();
    for &eps in &cfg.confinement_radius_schedule {
        let ball = Ball::centered(cfg.grid.dim(), eps)?;
        let inside: Vec<usize> = all.iter().copied().filter(|&c| ball.contains(&cfg.grid.cell_center(c))).collect();
        if inside.len() < 2 {
            break;
        }
        // restriction heuristic: skip radii that cut off mass at a cost
        match restricted_energy(&best, eps) {
            Ok(e) if e <= best.energy.total + cfg.tol_el => {}
            _ => break,
        }
        let mut sub = cfg.clone();
        sub.candidates = Some(inside);
        let res = minimize(rho0, &sub)?;
        if res.energy.total <= best.energy.total + cfg.tol_el {
            best = res;
            best.confinement_radius = Some(eps);
        } else {
            break;
        }
    }
    Ok(best)
}
