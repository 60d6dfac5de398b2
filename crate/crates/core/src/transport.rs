//! Optimal transport for the cost ½|x − y|².

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::measure::{dist2, format_f64, DiscreteMeasure};

/// Largest N·M solved exactly; bigger problems fall back to scaling iterations.
pub const EXACT_CAP: usize = 4_000_000;
/// Relative duality-gap tolerance for an exact plan.
pub const GAP_TOL: f64 = 1e-9;
/// Tolerance for cycle and potential inequalities.
pub const INEQ_TOL: f64 = 1e-9;

const FLOW_EPS: f64 = 1e-15;

/// Dense row-major matrix of ½|xᵢ − yⱼ|².
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CostMatrix {
    pub fn between(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Self> {
        if mu.dim() != nu.dim() {
            return Err(Error::DimensionMismatch { expected: mu.dim(), found: nu.dim() });
        }
        let mut data = Vec::with_capacity(mu.len() * nu.len());
        for x in mu.points() {
            for y in nu.points() {
                data.push(0.5 * dist2(x, y));
            }
        }
        Ok(CostMatrix { rows: mu.len(), cols: nu.len(), data })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// ½|xᵢ − yⱼ|² for explicit point lists.
pub fn cost_matrix(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> Result<CostMatrix> {
    let dim = xs.first().or(ys.first()).map_or(0, |p| p.len());
    let mut data = Vec::with_capacity(xs.len() * ys.len());
    for x in xs {
        if x.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: x.len() });
        }
        for y in ys {
            if y.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: y.len() });
            }
            data.push(0.5 * dist2(x, y));
        }
    }
    Ok(CostMatrix { rows: xs.len(), cols: ys.len(), data })
}

/// A coupling between two discrete measures with optional dual potentials.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    /// (source index, target index, mass).
    pub pairs: Vec<(usize, usize, f64)>,
    pub source: DiscreteMeasure,
    pub target: DiscreteMeasure,
    pub cost: f64,
    /// uᵢ with uᵢ + vⱼ ≤ ½|xᵢ − yⱼ|²; empty when unknown.
    pub dual_source: Vec<f64>,
    pub dual_target: Vec<f64>,
    /// Set when the plan comes from entropic scaling rather than an exact solve.
    pub approximate: bool,
}

impl TransportPlan {
    /// A plan from explicit pairs, without duals.
    pub fn from_pairs(
        source: DiscreteMeasure,
        target: DiscreteMeasure,
        pairs: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if source.dim() != target.dim() {
            return Err(Error::DimensionMismatch { expected: source.dim(), found: target.dim() });
        }
        for &(i, j, m) in &pairs {
            if i >= source.len() || j >= target.len() {
                return Err(Error::InvalidParameter(format!("pair ({i}, {j}) out of range")));
            }
            if m < 0.0 {
                return Err(Error::NegativeWeight { index: i, weight: m });
            }
        }
        let cost = pairs.iter().map(|&(i, j, m)| m * 0.5 * dist2(source.point(i), target.point(j))).sum();
        Ok(TransportPlan {
            pairs,
            source,
            target,
            cost,
            dual_source: Vec::new(),
            dual_target: Vec::new(),
            approximate: false,
        })
    }

    pub fn dual_objective(&self) -> Option<f64> {
        if self.dual_source.len() != self.source.len() || self.dual_target.len() != self.target.len() {
            return None;
        }
        let a: f64 = self.source.weights().iter().zip(&self.dual_source).map(|(w, u)| w * u).sum();
        let b: f64 = self.target.weights().iter().zip(&self.dual_target).map(|(w, v)| w * v).sum();
        Some(a + b)
    }

    /// cost − dual objective; `None` without duals.
    pub fn duality_gap(&self) -> Option<f64> {
        self.dual_objective().map(|d| self.cost - d)
    }

    /// Largest violation of uᵢ + vⱼ ≤ cᵢⱼ over all pairs.
    pub fn dual_infeasibility(&self) -> Option<f64> {
        self.dual_objective()?;
        let mut worst: f64 = 0.0;
        for (i, x) in self.source.points().enumerate() {
            for (j, y) in self.target.points().enumerate() {
                let slack = 0.5 * dist2(x, y) - self.dual_source[i] - self.dual_target[j];
                worst = worst.max(-slack);
            }
        }
        Some(worst)
    }

    pub fn is_optimal(&self) -> bool {
        match (self.duality_gap(), self.dual_infeasibility()) {
            (Some(gap), Some(infeas)) => {
                let tol = GAP_TOL * (1.0 + self.cost.abs());
                gap.abs() <= tol && infeas <= tol
            }
            _ => false,
        }
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.source.len()];
        for &(i, _, m) in &self.pairs {
            s[i] += m;
        }
        s
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.target.len()];
        for &(_, j, m) in &self.pairs {
            s[j] += m;
        }
        s
    }

    /// Largest deviation of either marginal from the prescribed weights.
    pub fn marginal_error(&self) -> f64 {
        let r = self.row_sums().iter().zip(self.source.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let c = self.col_sums().iter().zip(self.target.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        r.max(c)
    }

    /// Barycentric image Σⱼ γᵢⱼ yⱼ / Σⱼ γᵢⱼ of every source atom; `None` for atoms with no mass.
    pub fn barycentric_targets(&self) -> Vec<Option<Vec<f64>>> {
        let d = self.source.dim();
        let mut acc = vec![vec![0.0; d]; self.source.len()];
        let mut mass = vec![0.0; self.source.len()];
        for &(i, j, m) in &self.pairs {
            let y = self.target.point(j);
            for k in 0..d {
                acc[i][k] += m * y[k];
            }
            mass[i] += m;
        }
        acc.into_iter().zip(mass).map(|(a, m)| (m > 0.0).then(|| a.into_iter().map(|v| v / m).collect())).collect()
    }

    /// Rows `i,j,mass,cost`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "i,j,mass,cost")?;
        for &(i, j, m) in &self.pairs {
            let c = 0.5 * dist2(self.source.point(i), self.target.point(j));
            writeln!(w, "{i},{j},{},{}", format_f64(m), format_f64(c))?;
        }
        w.flush()?;
        Ok(())
    }

    /// Rows `index,value` for the source and target potentials.
    pub fn write_duals_csv(&self, source_path: &Path, target_path: &Path) -> Result<()> {
        for (path, values) in [(source_path, &self.dual_source), (target_path, &self.dual_target)] {
            let mut w = BufWriter::new(File::create(path)?);
            writeln!(w, "index,value")?;
            for (i, v) in values.iter().enumerate() {
                writeln!(w, "{i},{}", format_f64(*v))?;
            }
            w.flush()?;
        }
        Ok(())
    }
}

/// Exact plan by successive shortest augmenting paths with node potentials.
pub fn solve_exact(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    solve_exact_capped(mu, nu, EXACT_CAP)
}

pub fn solve_exact_capped(mu: &DiscreteMeasure, nu: &DiscreteMeasure, cap: usize) -> Result<TransportPlan> {
    let entries = mu.len() * nu.len();
    if entries > cap {
        return Err(Error::ProblemTooLarge { entries, cap });
    }
    let c = CostMatrix::between(mu, nu)?;
    let (n, m) = (mu.len(), nu.len());
    let mut flow = vec![0.0; n * m];
    let mut excess: Vec<f64> = mu.weights().to_vec();
    let mut deficit: Vec<f64> = nu.weights().to_vec();
    // potentials: sources 0..n, sinks n..n+m
    let mut pi = vec![0.0; n + m];
    let mut dist = vec![0.0; n + m];
    let mut prev = vec![usize::MAX; n + m];
    let mut done = vec![false; n + m];

    let max_rounds = 50 * (n + m) + 1000;
    let mut rounds = 0;
    loop {
        let active = excess.iter().any(|&e| e > FLOW_EPS) && deficit.iter().any(|&d| d > FLOW_EPS);
        if !active {
            break;
        }
        rounds += 1;
        if rounds > max_rounds {
            return Err(Error::Infeasible("augmenting path search did not terminate".into()));
        }
        dist.iter_mut().for_each(|d| *d = f64::INFINITY);
        prev.iter_mut().for_each(|p| *p = usize::MAX);
        done.iter_mut().for_each(|d| *d = false);
        for i in 0..n {
            if excess[i] > FLOW_EPS {
                dist[i] = 0.0;
            }
        }
        let mut target = None;
        loop {
            let mut best = usize::MAX;
            let mut best_d = f64::INFINITY;
            for v in 0..n + m {
                if !done[v] && dist[v] < best_d {
                    best_d = dist[v];
                    best = v;
                }
            }
            if best == usize::MAX {
                break;
            }
            done[best] = true;
            if best >= n && deficit[best - n] > FLOW_EPS {
                target = Some(best);
                break;
            }
            if best < n {
                let i = best;
                for j in 0..m {
                    let v = n + j;
                    if done[v] {
                        continue;
                    }
                    let rc = (c.get(i, j) + pi[i] - pi[v]).max(0.0);
                    if best_d + rc < dist[v] {
                        dist[v] = best_d + rc;
                        prev[v] = i;
                    }
                }
            } else {
                let j = best - n;
                for i in 0..n {
                    if done[i] || flow[i * m + j] <= FLOW_EPS {
                        continue;
                    }
                    let rc = (-c.get(i, j) + pi[best] - pi[i]).max(0.0);
                    if best_d + rc < dist[i] {
                        dist[i] = best_d + rc;
                        prev[i] = best;
                    }
                }
            }
        }
        let t = target.ok_or_else(|| Error::Infeasible("no augmenting path".into()))?;
        let dt = dist[t];
        for v in 0..n + m {
            pi[v] += if done[v] { dist[v].min(dt) } else { dt };
        }
        // bottleneck along the path
        let mut delta = deficit[t - n];
        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u >= n {
                // reverse edge sink u → source v
                delta = delta.min(flow[v * m + (u - n)]);
            }
            v = u;
        }
        delta = delta.min(excess[v]);
        let source = v;
        let mut v = t;
        while prev[v] != usize::MAX {
            let u = prev[v];
            if u < n {
                flow[u * m + (v - n)] += delta;
            } else {
                let f = &mut flow[v * m + (u - n)];
                *f -= delta;
                if *f < FLOW_EPS {
                    *f = 0.0;
                }
            }
            v = u;
        }
        excess[source] -= delta;
        deficit[t - n] -= delta;
    }

    let mut pairs = Vec::new();
    let mut cost = 0.0;
    for i in 0..n {
        for j in 0..m {
            let f = flow[i * m + j];
            if f > 0.0 {
                pairs.push((i, j, f));
                cost += f * c.get(i, j);
            }
        }
    }
    let dual_source: Vec<f64> = pi[..n].iter().map(|p| -p).collect();
    let dual_target: Vec<f64> = pi[n..].to_vec();
    let mut plan = TransportPlan {
        pairs,
        source: mu.clone(),
        target: nu.clone(),
        cost,
        dual_source,
        dual_target,
        approximate: false,
    };
    normalize_duals(&mut plan);
    Ok(plan)
}

/// Shift (u, v) → (u + s, v − s) so that min u = 0; the dual objective is unchanged.
fn normalize_duals(plan: &mut TransportPlan) {
    let s = plan.dual_source.iter().copied().fold(f64::INFINITY, f64::min);
    if s.is_finite() {
        plan.dual_source.iter_mut().for_each(|u| *u -= s);
        plan.dual_target.iter_mut().for_each(|v| *v += s);
    }
}

fn log_sum_exp(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Entropic plan by log-domain Sinkhorn scaling; stops when both marginals are within 1e-7.
pub fn solve_entropic(mu: &DiscreteMeasure, nu: &DiscreteMeasure, eps: f64, max_iters: usize) -> Result<TransportPlan> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("entropic regularization must be positive, got {eps}")));
    }
    let c = CostMatrix::between(mu, nu)?;
    let rows: Vec<usize> = (0..mu.len()).filter(|&i| mu.weight(i) > 0.0).collect();
    let cols: Vec<usize> = (0..nu.len()).filter(|&j| nu.weight(j) > 0.0).collect();
    let log_a: Vec<f64> = rows.iter().map(|&i| mu.weight(i).ln()).collect();
    let log_b: Vec<f64> = cols.iter().map(|&j| nu.weight(j).ln()).collect();
    let mut f = vec![0.0; rows.len()];
    let mut g = vec![0.0; cols.len()];
    let plan_entry = |f: &[f64], g: &[f64], r: usize, s: usize| ((f[r] + g[s] - c.get(rows[r], cols[s])) / eps).exp();
    let mut converged = false;
    for iter in 0..max_iters {
        for (r, &i) in rows.iter().enumerate() {
            f[r] =
                eps * log_a[r] - eps * log_sum_exp(cols.iter().enumerate().map(|(s, &j)| (g[s] - c.get(i, j)) / eps));
        }
        for (s, &j) in cols.iter().enumerate() {
            g[s] =
                eps * log_b[s] - eps * log_sum_exp(rows.iter().enumerate().map(|(r, &i)| (f[r] - c.get(i, j)) / eps));
        }
        if iter % 5 == 4 || iter + 1 == max_iters {
            // columns are exact after the g update; check rows
            let err = rows
                .iter()
                .enumerate()
                .map(|(r, &i)| {
                    let s: f64 = (0..cols.len()).map(|s| plan_entry(&f, &g, r, s)).sum();
                    (s - mu.weight(i)).abs()
                })
                .fold(0.0, f64::max);
            if err <= 1e-7 {
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::NotConverged(max_iters));
    }
    let mut pairs = Vec::new();
    let mut cost = 0.0;
    for (r, &i) in rows.iter().enumerate() {
        for (s, &j) in cols.iter().enumerate() {
            let p = plan_entry(&f, &g, r, s);
            if p > 0.0 {
                pairs.push((i, j, p));
                cost += p * c.get(i, j);
            }
        }
    }
    let mut dual_source = vec![0.0; mu.len()];
    let mut dual_target = vec![0.0; nu.len()];
    for (r, &i) in rows.iter().enumerate() {
        dual_source[i] = f[r];
    }
    for (s, &j) in cols.iter().enumerate() {
        dual_target[j] = g[s];
    }
    Ok(TransportPlan {
        pairs,
        source: mu.clone(),
        target: nu.clone(),
        cost,
        dual_source,
        dual_target,
        approximate: true,
    })
}

/// Exact plan when N·M ≤ [`EXACT_CAP`], otherwise an entropic plan flagged `approximate`.
pub fn solve(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    match solve_exact(mu, nu) {
        Err(Error::ProblemTooLarge { .. }) => {
            let eps = 1e-3 * CostMatrix::between(mu, nu)?.mean().max(f64::MIN_POSITIVE);
            solve_entropic(mu, nu, eps, 100_000)
        }
        other => other,
    }
}

/// d²(μ, ν) = inf ½∬|x − y|² dγ.
pub fn wasserstein_d2(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    Ok(solve(mu, nu)?.cost)
}

/// c-concave potential ψ on a query set with ψ(x₀) = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct KantorovichPotential {
    pub query: Vec<Vec<f64>>,
    pub values: Vec<f64>,
    pub base_point: Vec<f64>,
}

impl KantorovichPotential {
    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Unnormalized ψ(x) = max over support pairs of [−uᵢ + c(xᵢ, yⱼ) − c(x, yⱼ)].
fn psi_raw(plan: &TransportPlan, x: &[f64]) -> f64 {
    plan.pairs
        .iter()
        .map(|&(i, j, _)| {
            let y = plan.target.point(j);
            -plan.dual_source[i] + 0.5 * dist2(plan.source.point(i), y) - 0.5 * dist2(x, y)
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// One c-transform pass over the plan support seeded by the source duals,
/// shifted so that ψ(x₀) = 0. Every support pair (x′, y′) then satisfies
/// ψ(x) + ½|x − y′|² ≥ ψ(x′) + ½|x′ − y′|².
pub fn kantorovich_potential(plan: &TransportPlan, query: &[Vec<f64>], x0: &[f64]) -> Result<KantorovichPotential> {
    if !plan.is_optimal() {
        let gap = plan.duality_gap().unwrap_or(f64::INFINITY);
        return Err(Error::PlanNotOptimal { gap });
    }
    let dim = plan.source.dim();
    if x0.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, found: x0.len() });
    }
    if let Some(q) = query.iter().find(|q| q.len() != dim) {
        return Err(Error::DimensionMismatch { expected: dim, found: q.len() });
    }
    let shift = psi_raw(plan, x0);
    let values = query.iter().map(|q| psi_raw(plan, q) - shift).collect();
    Ok(KantorovichPotential { query: query.to_vec(), values, base_point: x0.to_vec() })
}

/// Worst violation of ψ(x) + ½|x − y′|² ≥ ψ(x′) + ½|x′ − y′|² with x ranging over
/// the query set and (x′, y′) over the plan support; `psi_source` gives ψ at
/// the source atoms.
pub fn support_inequality_violation(plan: &TransportPlan, psi: &KantorovichPotential, psi_source: &[f64]) -> f64 {
    let mut worst: f64 = 0.0;
    for &(i, j, _) in &plan.pairs {
        let y = plan.target.point(j);
        let rhs = psi_source[i] + 0.5 * dist2(plan.source.point(i), y);
        for (x, v) in psi.query.iter().zip(&psi.values) {
            worst = worst.max(rhs - (v + 0.5 * dist2(x, y)));
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct CycleReport {
    pub trials: usize,
    pub violations: usize,
    /// Largest Σ|xₖ − yₖ|² − Σ|xₖ₊₁ − yₖ|² seen (≤ 0 when no violation).
    pub worst_margin: f64,
}

/// Samples random cycles of length m from the plan support and counts
/// violations of Σ|xₖ − yₖ|² ≤ Σ|xₖ₊₁ − yₖ|² beyond [`INEQ_TOL`].
pub fn check_cyclic_monotonicity(plan: &TransportPlan, m: usize, trials: usize, seed: u64) -> Result<CycleReport> {
    if m < 2 {
        return Err(Error::InvalidParameter(format!("cycle length must be at least 2, got {m}")));
    }
    let support: Vec<(usize, usize)> = plan.pairs.iter().filter(|p| p.2 > 0.0).map(|p| (p.0, p.1)).collect();
    if support.is_empty() {
        return Err(Error::NoSupport);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    let mut worst = f64::NEG_INFINITY;
    let mut cycle = Vec::with_capacity(m);
    for _ in 0..trials {
        cycle.clear();
        if support.len() >= m {
            cycle.extend(support.choose_multiple(&mut rng, m).copied());
        } else {
            for _ in 0..m {
                cycle.push(*support.choose(&mut rng).unwrap());
            }
        }
        let mut diag = 0.0;
        let mut shifted = 0.0;
        for k in 0..m {
            let (i, j) = cycle[k];
            let (next, _) = cycle[(k + 1) % m];
            let y = plan.target.point(j);
            diag += dist2(plan.source.point(i), y);
            shifted += dist2(plan.source.point(next), y);
        }
        let margin = diag - shifted;
        worst = worst.max(margin);
        if margin > INEQ_TOL * (1.0 + diag.abs()) {
            violations += 1;
        }
    }
    Ok(CycleReport { trials, violations, worst_margin: worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(points: &[f64], weights: &[f64]) -> DiscreteMeasure {
        let pts: Vec<Vec<f64>> = points.iter().map(|&x| vec![x]).collect();
        DiscreteMeasure::new(&pts, weights).unwrap()
    }

    #[test]
    fn cost_matrix_examples() {
        assert_eq!(cost_matrix(&[vec![0.0, 0.0]], &[vec![3.0, 4.0]]).unwrap().get(0, 0), 12.5);
        assert_eq!(cost_matrix(&[vec![1.0, 2.0]], &[vec![1.0, 2.0]]).unwrap().get(0, 0), 0.0);
        assert_eq!(cost_matrix(&[vec![0.0]], &[vec![2.0]]).unwrap().get(0, 0), 2.0);
        assert!(matches!(cost_matrix(&[vec![0.0]], &[vec![2.0, 1.0]]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn exact_examples() {
        let mu = line(&[0.0, 1.0, 3.0], &[0.2, 0.5, 0.3]);
        let p = solve_exact(&mu, &mu).unwrap();
        assert!(p.cost.abs() < 1e-15);
        assert!(p.pairs.iter().all(|&(i, j, _)| i == j));

        let a = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[3.0, 4.0]).unwrap();
        assert!((solve_exact(&a, &b).unwrap().cost - 12.5).abs() < 1e-15);

        // one-parameter family γ = [[½−t, t], [t, ½−t]] has cost t; brute force its minimum
        let two = line(&[0.0, 1.0], &[0.5, 0.5]);
        let brute = (0..=100).map(|k| 0.005 * k as f64).fold(f64::INFINITY, f64::min);
        let exact = solve_exact(&two, &two).unwrap();
        assert!((exact.cost - brute).abs() < 1e-12);
        let crossed = TransportPlan::from_pairs(two.clone(), two.clone(), vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        assert!((crossed.cost - 0.5).abs() < 1e-15);
    }

    #[test]
    fn duality_gap_and_marginals() {
        let mu = line(&[0.0, 0.3, 1.1, 2.0], &[0.1, 0.4, 0.3, 0.2]);
        let nu = line(&[-0.5, 0.9, 1.7], &[0.5, 0.25, 0.25]);
        let p = solve_exact(&mu, &nu).unwrap();
        assert!(p.is_optimal());
        assert!(p.marginal_error() < 1e-12);
        // 1D optimal cost from the quantile coupling
        let q = quantile_cost(&[0.0, 0.3, 1.1, 2.0], &[0.1, 0.4, 0.3, 0.2], &[-0.5, 0.9, 1.7], &[0.5, 0.25, 0.25]);
        assert!((p.cost - q).abs() < 1e-12, "{} vs {q}", p.cost);
    }

    /// Monotone rearrangement cost for sorted 1D atoms.
    fn quantile_cost(x: &[f64], a: &[f64], y: &[f64], b: &[f64]) -> f64 {
        let (mut i, mut j) = (0, 0);
        let (mut ra, mut rb) = (a[0], b[0]);
        let mut cost = 0.0;
        while i < x.len() && j < y.len() {
            let m = ra.min(rb);
            cost += m * 0.5 * (x[i] - y[j]).powi(2);
            ra -= m;
            rb -= m;
            if ra <= 1e-15 {
                i += 1;
                if i < x.len() {
                    ra = a[i];
                }
            }
            if rb <= 1e-15 {
                j += 1;
                if j < y.len() {
                    rb = b[j];
                }
            }
        }
        cost
    }

    #[test]
    fn cap_is_enforced() {
        let mu = line(&[0.0, 1.0], &[1.0, 1.0]);
        assert!(matches!(solve_exact_capped(&mu, &mu, 3), Err(Error::ProblemTooLarge { entries: 4, cap: 3 })));
    }

    #[test]
    fn entropic_examples() {
        let mu = line(&[0.0, 1.0, 2.5], &[0.2, 0.5, 0.3]);
        let p = solve_entropic(&mu, &mu, 1e-3, 10_000).unwrap();
        assert!(p.marginal_error() <= 1e-7);
        assert!(p.cost < 1e-2);
        assert!(p.approximate);
        let two = line(&[0.0, 1.0], &[0.5, 0.5]);
        let e = solve_entropic(&two, &two, 1e-3, 10_000).unwrap();
        assert!((e.cost - solve_exact(&two, &two).unwrap().cost).abs() < 1e-2);
        assert!(matches!(solve_entropic(&two, &two, 0.0, 10), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn entropic_cost_brackets_exact_cost() {
        let mu = line(&[0.0, 0.4, 1.3, 2.2], &[0.3, 0.2, 0.3, 0.2]);
        let nu = line(&[0.1, 1.0, 2.9], &[0.3, 0.3, 0.4]);
        let exact = solve_exact(&mu, &nu).unwrap().cost;
        for eps in [0.5, 0.2, 0.1] {
            let e = solve_entropic(&mu, &nu, eps, 100_000).unwrap().cost;
            assert!(e >= exact - 1e-7 && e <= exact + 10.0 * eps * (4.0f64).ln() + 1e-7, "{eps}: {e} vs {exact}");
        }
    }

    #[test]
    fn distance_examples() {
        let mu = line(&[0.0, 2.0], &[0.3, 0.7]);
        assert!(wasserstein_d2(&mu, &mu).unwrap().abs() < 1e-15);
        let a = DiscreteMeasure::dirac(&[0.0, 0.0, 0.0]).unwrap();
        let b = DiscreteMeasure::dirac(&[0.0, 3.0, 0.0]).unwrap();
        assert!((wasserstein_d2(&a, &b).unwrap() - 4.5).abs() < 1e-15);
        let nu = line(&[-1.0, 0.5, 4.0], &[0.2, 0.2, 0.6]);
        let d1 = wasserstein_d2(&mu, &nu).unwrap();
        let d2 = wasserstein_d2(&nu, &mu).unwrap();
        assert!((d1 - d2).abs() < 1e-10);
    }

    #[test]
    fn potential_examples() {
        let mu = line(&[0.0, 1.0, 2.0], &[0.3, 0.3, 0.4]);
        let p = solve_exact(&mu, &mu).unwrap();
        let q: Vec<Vec<f64>> = (0..21).map(|k| vec![-1.0 + 0.2 * k as f64]).collect();
        let psi = kantorovich_potential(&p, &[vec![0.0], vec![1.0], vec![2.0]], &[0.0]).unwrap();
        assert!(psi.values.iter().all(|v| v.abs() < 1e-12));
        let psi = kantorovich_potential(&p, &q, &[0.7]).unwrap();
        let at_base = kantorovich_potential(&p, &[vec![0.7]], &[0.7]).unwrap();
        assert_eq!(at_base.values[0], 0.0);
        assert!(psi.values.len() == 21);

        // single pair: ψ(x) = const − ½|x − y*|²
        let a = DiscreteMeasure::dirac(&[0.0, 0.0]).unwrap();
        let y = [3.0, 4.0];
        let b = DiscreteMeasure::dirac(&y).unwrap();
        let p = solve_exact(&a, &b).unwrap();
        let q = vec![vec![1.0, 1.0], vec![-2.0, 0.5], vec![3.0, 4.0]];
        let psi = kantorovich_potential(&p, &q, &[0.0, 0.0]).unwrap();
        for (x, v) in q.iter().zip(&psi.values) {
            let expected = 12.5 - 0.5 * dist2(x, &y);
            assert!((v - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn potential_satisfies_support_inequality() {
        let mu = line(&[0.0, 0.3, 1.1, 2.0, 2.2], &[0.1, 0.4, 0.3, 0.1, 0.1]);
        let nu = line(&[-0.5, 0.9, 1.7], &[0.5, 0.25, 0.25]);
        let p = solve_exact(&mu, &nu).unwrap();
        let q: Vec<Vec<f64>> = (0..101).map(|k| vec![-3.0 + 0.07 * k as f64]).collect();
        let src: Vec<Vec<f64>> = mu.points().map(|p| p.to_vec()).collect();
        let psi = kantorovich_potential(&p, &q, &[0.0]).unwrap();
        let psi_src = kantorovich_potential(&p, &src, &[0.0]).unwrap();
        assert!(support_inequality_violation(&p, &psi, &psi_src.values) <= 1e-8);
    }

    #[test]
    fn approximate_plan_has_no_potential() {
        let mu = line(&[0.0, 1.0], &[0.5, 0.5]);
        let nu = line(&[0.2, 1.5], &[0.5, 0.5]);
        let p = solve_entropic(&mu, &nu, 0.5, 10_000).unwrap();
        assert!(matches!(kantorovich_potential(&p, &[vec![0.0]], &[0.0]), Err(Error::PlanNotOptimal { .. })));
    }

    #[test]
    fn cycle_checks() {
        let two = line(&[0.0, 1.0], &[0.5, 0.5]);
        let crossed = TransportPlan::from_pairs(two.clone(), two.clone(), vec![(0, 1, 0.5), (1, 0, 0.5)]).unwrap();
        let r = check_cyclic_monotonicity(&crossed, 2, 10, 1).unwrap();
        assert_eq!(r.violations, 10);
        assert!((r.worst_margin - 2.0).abs() < 1e-15);
        let p = solve_exact(&two, &two).unwrap();
        assert_eq!(check_cyclic_monotonicity(&p, 2, 10, 1).unwrap().violations, 0);
        assert!(matches!(check_cyclic_monotonicity(&p, 1, 10, 1), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn csv_export() {
        let dir = tempfile::tempdir().unwrap();
        let mu = line(&[0.0, 1.0], &[0.5, 0.5]);
        let nu = line(&[0.5], &[1.0]);
        let p = solve_exact(&mu, &nu).unwrap();
        let path = dir.path().join("plan.csv");
        p.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next(), Some("i,j,mass,cost"));
        assert_eq!(text.lines().count(), 3);
        p.write_duals_csv(&dir.path().join("u.csv"), &dir.path().join("v.csv")).unwrap();
        assert!(dir.path().join("v.csv").exists());
    }

    fn small_measure(dim: usize) -> impl Strategy<Value = DiscreteMeasure> {
        (1usize..7).prop_flat_map(move |n| {
            (prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim), n), prop::collection::vec(0.05f64..1.0, n))
                .prop_map(|(p, w)| DiscreteMeasure::new(&p, &w).unwrap())
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn exact_plans_are_optimal_and_cyclically_monotone(mu in small_measure(2), nu in small_measure(2)) {
            let p = solve_exact(&mu, &nu).unwrap();
            prop_assert!(p.is_optimal());
            prop_assert!(p.marginal_error() < 1e-12);
            for m in 2..=5 {
                prop_assert_eq!(check_cyclic_monotonicity(&p, m, 50, m as u64).unwrap().violations, 0);
            }
        }

        #[test]
        fn triangle_inequality(a in small_measure(2), b in small_measure(2), c in small_measure(2)) {
            let d = |x: &DiscreteMeasure, y: &DiscreteMeasure| wasserstein_d2(x, y).unwrap().sqrt();
            prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-9);
        }

        #[test]
        fn convexity_in_first_argument(
            pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 2..6),
            seed in 0u64..1000,
            nu in small_measure(2),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w1: Vec<f64> = (0..pts.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
            let w2: Vec<f64> = (0..pts.len()).map(|_| rng.gen_range(0.05..1.0)).collect();
            let m1 = DiscreteMeasure::new(&pts, &w1).unwrap();
            let m2 = DiscreteMeasure::new(&pts, &w2).unwrap();
            let d1 = wasserstein_d2(&m1, &nu).unwrap();
            let d2 = wasserstein_d2(&m2, &nu).unwrap();
            for t in [0.25, 0.5, 0.75] {
                let w: Vec<f64> = m1.weights().iter().zip(m2.weights()).map(|(a, b)| t * a + (1.0 - t) * b).collect();
                let mt = m1.with_weights(w).unwrap();
                prop_assert!(wasserstein_d2(&mt, &nu).unwrap() <= t * d1 + (1.0 - t) * d2 + 1e-9);
            }
        }
    }
}
