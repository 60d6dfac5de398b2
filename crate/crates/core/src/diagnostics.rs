//! Free-boundary checks on computed minimizers: complementarity with the
//! transport potential, the map identity T(x) = x + 2∇U, the nonlocal
//! Monge–Ampère residual and the slab-height statistic ω(R).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::cell::box_average_grad;
use crate::kernel::fourier::convex_hull;
use crate::kernel::KernelKind;
use crate::measure::{dist2, norm2, Ball, GridDensity};
use crate::solver::EquilibriumResult;
use crate::transport::KantorovichPotential;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flag {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Flag {
    pub fn new(name: &str, pass: bool, detail: String) -> Self {
        Flag { name: name.to_string(), pass, detail }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityReport {
    /// max over support of wᵢ|2U − ψ − c_shift|.
    pub max: f64,
    /// min over the other candidates of 2U − ψ − c_shift.
    pub off_support_min: Option<f64>,
    pub c_shift: f64,
}

fn median(v: &mut [f64]) -> f64 {
    quantile(v, 0.5)
}

fn quantile(v: &mut [f64], p: f64) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Compares 2sU with the Kantorovich potential evaluated at the candidates
/// (`psi.query` must list the candidate points in order).
pub fn complementarity_report(res: &EquilibriumResult, psi: &KantorovichPotential) -> Result<ComplementarityReport> {
    if psi.values.len() != res.cells.len() {
        return Err(Error::DimensionMismatch { expected: res.cells.len(), found: psi.values.len() });
    }
    let support = res.support();
    if support.is_empty() {
        return Err(Error::NoSupport);
    }
    let s = res.interaction_scale;
    let gap: Vec<f64> = (0..res.cells.len()).map(|i| 2.0 * s * res.potential[i] - psi.values[i]).collect();
    let mut on: Vec<f64> = support.iter().map(|&i| gap[i]).collect();
    let c_shift = median(&mut on);
    let max = support.iter().map(|&i| res.weights()[i] * (gap[i] - c_shift).abs()).fold(0.0, f64::max);
    let off_support_min =
        (0..res.cells.len()).filter(|&i| !res.support_mask[i]).map(|i| gap[i] - c_shift).reduce(f64::min);
    Ok(ComplementarityReport { max, off_support_min, c_shift })
}

/// ∇U at every candidate: exact derivative of the cell-averaged potential in
/// 1D, centered differences of the grid potential otherwise.
pub fn potential_gradient(res: &EquilibriumResult) -> Result<Vec<Vec<f64>>> {
    if res.grid.dim() == 1 && res.kernel == KernelKind::Log2D {
        let h = &res.grid.spacing;
        let w = res.weights();
        return Ok((0..res.cells.len())
            .map(|i| {
                let x = res.measure.point(i)[0];
                let g: f64 = (0..w.len())
                    .filter(|&k| w[k] > 0.0)
                    .map(|k| {
                        let off = [x - res.measure.point(k)[0]];
                        w[k] * box_average_grad(res.kernel, &off, h).map_or(0.0, |v| v[0])
                    })
                    .sum();
                vec![g]
            })
            .collect());
    }
    let field = res.grid_potential()?;
    Ok(res.cells.iter().map(|&c| field.gradient_at(c)).collect())
}

/// max over support of |T(xᵢ) − xᵢ − 2s∇U(xᵢ)| with the barycentric T.
pub fn transport_map_residual(res: &EquilibriumResult) -> Result<f64> {
    let support = res.support();
    if support.is_empty() {
        return Err(Error::NoSupport);
    }
    if support.len() == 1 {
        let i = support[0];
        let t = res.barycentric_map()[i].clone().ok_or(Error::NoSupport)?;
        return Ok(dist2(&t, res.measure.point(i)).sqrt());
    }
    let grad = potential_gradient(res)?;
    let bary = res.barycentric_map();
    let s = res.interaction_scale;
    let mut worst: f64 = 0.0;
    for &i in &support {
        let Some(t) = &bary[i] else { continue };
        let x = res.measure.point(i);
        let r: Vec<f64> = (0..x.len()).map(|k| t[k] - x[k] - 2.0 * s * grad[i][k]).collect();
        worst = worst.max(norm2(&r));
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualStats {
    pub median: f64,
    pub p90: f64,
    pub count: usize,
}

impl ResidualStats {
    fn from(mut v: Vec<f64>) -> Self {
        let count = v.len();
        let p90 = quantile(&mut v, 0.9);
        ResidualStats { median: median(&mut v), p90, count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaReport {
    /// |det(I + 2D²U)·ρ₀(x + 2∇U) − ρ(x)|.
    pub product: ResidualStats,
    /// |det(I + 2D²U) − ρ(x)/ρ₀(x + 2∇U)|.
    pub ratio: ResidualStats,
    /// |det(2D²U + cI) − (c² − 1)| with c = 1 + 1/(4πρ₀(x + 2∇U)).
    pub shifted: ResidualStats,
    /// |median(shifted) − median(ratio)| / median(ratio).
    pub agreement: f64,
    pub target_vanishes: usize,
    pub interior_cells: usize,
}

/// Monge–Ampère residuals at support cells whose (2·2+1)² neighborhood is
/// entirely in the support.
pub fn monge_ampere_residual(res: &EquilibriumResult, rho0: &GridDensity) -> Result<MaReport> {
    let spec = &res.grid;
    if spec.dim() != 2 || rho0.dim() != 2 {
        return Err(Error::NotTwoDimensional);
    }
    let s = res.interaction_scale;
    let field = res.grid_potential()?;
    let masses = res.grid_masses();
    let w_cut = 1e-8 / res.cells.len() as f64;
    let vol = spec.cell_volume();
    let (nx, ny) = (spec.shape[0], spec.shape[1]);
    let (hx, hy) = (spec.spacing[0], spec.spacing[1]);
    let u = |i: usize, j: usize| field.values[spec.flat_index(&[i, j])];
    let peak = rho0.cells().iter().copied().fold(0.0, f64::max);
    let mut product = Vec::new();
    let mut ratio = Vec::new();
    let mut shifted = Vec::new();
    let mut vanished = 0;
    let mut interior = 0;
    for i in 2..nx.saturating_sub(2) {
        'cell: for j in 2..ny.saturating_sub(2) {
            for a in i - 2..=i + 2 {
                for b in j - 2..=j + 2 {
                    if masses[spec.flat_index(&[a, b])] <= w_cut {
                        continue 'cell;
                    }
                }
            }
            interior += 1;
            let flat = spec.flat_index(&[i, j]);
            let uxx = (u(i + 1, j) - 2.0 * u(i, j) + u(i - 1, j)) / (hx * hx);
            let uyy = (u(i, j + 1) - 2.0 * u(i, j) + u(i, j - 1)) / (hy * hy);
            let uxy = (u(i + 1, j + 1) - u(i + 1, j - 1) - u(i - 1, j + 1) + u(i - 1, j - 1)) / (4.0 * hx * hy);
            let (a, b, c) = (2.0 * s * uxx, 2.0 * s * uxy, 2.0 * s * uyy);
            let det = (1.0 + a) * (1.0 + c) - b * b;
            let x = spec.cell_center(flat);
            let g = field.gradient_at(flat);
            let t = [x[0] + 2.0 * s * g[0], x[1] + 2.0 * s * g[1]];
            let r0 = rho0.value_at(&t);
            if r0 <= 1e-12 * peak {
                vanished += 1;
                continue;
            }
            let rho = masses[flat] / vol;
            product.push((det * r0 - rho).abs());
            ratio.push((det - rho / r0).abs());
            let cc = 1.0 + 1.0 / (4.0 * PI * r0);
            shifted.push(((a + cc) * (c + cc) - b * b - (cc * cc - 1.0)).abs());
        }
    }
    let product = ResidualStats::from(product);
    let ratio = ResidualStats::from(ratio);
    let shifted = ResidualStats::from(shifted);
    let agreement = (shifted.median - ratio.median).abs() / ratio.median;
    Ok(MaReport { product, ratio, shifted, agreement, target_vanishes: vanished, interior_cells: interior })
}

/// Unit directions: one in 1D, `count` over a half circle in 2D, a
/// Fibonacci set over the sphere in 3D and higher (first three axes).
fn directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    match dim {
        1 => vec![vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let t = PI * k as f64 / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        _ => {
            let golden = PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - (k as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = golden * k as f64;
                    let mut v = vec![0.0; dim];
                    v[0] = r * t.cos();
                    v[1] = r * t.sin();
                    v[2] = z;
                    v
                })
                .collect()
        }
    }
}

fn direction_count(dim: usize) -> usize {
    match dim {
        1 => 1,
        2 => 720,
        _ => 2000,
    }
}

/// Sampled directions, plus the hull edge normals in 2D (where the minimal
/// width is attained) and the coordinate axes in 3D.
fn min_width(pts: &[&[f64]], dirs: &[Vec<f64>]) -> f64 {
    let mut extra = Vec::new();
    match pts[0].len() {
        2 => {
            let mut xy: Vec<(f64, f64)> = pts.iter().map(|p| (p[0], p[1])).collect();
            let hull = convex_hull(&mut xy);
            for k in 0..hull.len() {
                let (a, b) = (hull[k], hull[(k + 1) % hull.len()]);
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let n = dx.hypot(dy);
                if n > 0.0 {
                    extra.push(vec![-dy / n, dx / n]);
                }
            }
        }
        d if d >= 3 => {
            for k in 0..d {
                let mut e = vec![0.0; d];
                e[k] = 1.0;
                extra.push(e);
            }
        }
        _ => {}
    }
    dirs.iter()
        .chain(&extra)
        .map(|u| {
            let (lo, hi) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
                let d: f64 = p.iter().zip(u).map(|(a, b)| a * b).sum();
                (lo.min(d), hi.max(d))
            });
            hi - lo
        })
        .fold(f64::INFINITY, f64::min)
}

/// Minimal width over sampled directions of the points inside `ball`.
pub fn slab_width(points: &[Vec<f64>], ball: &Ball) -> Result<f64> {
    let inside: Vec<&[f64]> = points.iter().filter(|p| ball.contains(p)).map(|p| p.as_slice()).collect();
    if inside.is_empty() {
        return Err(Error::EmptyBall);
    }
    let dim = ball.dim();
    Ok(min_width(&inside, &directions(dim, direction_count(dim))))
}

/// ω(R) for each R: the largest MD(points ∩ B_r(x))/r over centers x and
/// radii r ≤ R from the union of the ladders {R·2⁻ᵏ : k < 8}.
pub fn omega_of_r(points: &[Vec<f64>], centers: &[Vec<f64>], radii: &[f64]) -> Vec<(f64, f64)> {
    if points.is_empty() || centers.is_empty() {
        return radii.iter().map(|&r| (r, 0.0)).collect();
    }
    let dim = points[0].len();
    let dirs = directions(dim, direction_count(dim));
    let mut ladder: Vec<f64> =
        radii.iter().filter(|&&r| r > 0.0).flat_map(|&r| (0..8).map(move |k| r / f64::powi(2.0, k))).collect();
    ladder.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ladder.dedup();
    let ratio_at: Vec<f64> = ladder
        .iter()
        .map(|&r| {
            centers
                .iter()
                .map(|c| {
                    let inside: Vec<&[f64]> =
                        points.iter().filter(|p| dist2(p, c) <= r * r).map(|p| p.as_slice()).collect();
                    if inside.is_empty() {
                        0.0
                    } else {
                        min_width(&inside, &dirs) / r
                    }
                })
                .fold(0.0, f64::max)
        })
        .collect();
    radii
        .iter()
        .map(|&big| {
            let w = ladder.iter().zip(&ratio_at).filter(|(&r, _)| r <= big).map(|(_, &v)| v).fold(0.0, f64::max);
            (big, w.min(2.0))
        })
        .collect()
}

/// Support points with T(x) ≈ x, small gradient and low local density. The
/// thresholds are proxies; the labels are advisory.
pub fn singular_candidates(res: &EquilibriumResult) -> Result<Vec<Vec<f64>>> {
    let support = res.support();
    if support.is_empty() {
        return Err(Error::NoSupport);
    }
    let h = res.spacing();
    let grad = potential_gradient(res)?;
    let bary = res.barycentric_map();
    let w = res.weights();
    let global_mean = support.iter().map(|&i| w[i]).sum::<f64>() / support.len() as f64;
    let mut out = Vec::new();
    for &i in &support {
        let x = res.measure.point(i);
        let Some(t) = &bary[i] else { continue };
        if dist2(t, x).sqrt() > 3.0 * h || norm2(&grad[i]) > 3.0 * h {
            continue;
        }
        let near: Vec<f64> = (0..w.len())
            .filter(|&k| dist2(res.measure.point(k), x) <= 4.0 * h * h * (1.0 + 1e-9))
            .map(|k| w[k])
            .collect();
        let local = near.iter().sum::<f64>() / near.len() as f64;
        if local <= 0.05 * global_mean {
            out.push(x.to_vec());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    /// None when no Kantorovich potential was supplied.
    pub complementarity_max: Option<f64>,
    pub complementarity_off_support_min: Option<f64>,
    pub map_residual_max: f64,
    pub ma_residual_stats: Option<ResidualStats>,
    pub monge_ampere: Option<MaReport>,
    pub omega_table: Vec<(f64, f64)>,
    /// Advisory singular-point labels.
    pub singular_points: Vec<Vec<f64>>,
    pub flags: Vec<Flag>,
}

impl DiagnosticsReport {
    pub fn passed(&self) -> bool {
        self.flags.iter().all(|f| f.pass)
    }

    /// Writes diagnostics.json and omega.csv.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("diagnostics.json"), serde_json::to_string_pretty(self)?)?;
        let mut wtr = csv::Writer::from_path(dir.join("omega.csv"))?;
        wtr.write_record(["R", "omega"])?;
        for (r, w) in &self.omega_table {
            wtr.write_record([crate::measure::format_f64(*r), crate::measure::format_f64(*w)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsConfig {
    pub tol: f64,
    pub omega_radii: Vec<f64>,
    /// Number of support points used as ω centers.
    pub omega_centers: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig { tol: 1e-6, omega_radii: vec![0.25, 0.5, 1.0], omega_centers: 32 }
    }
}

/// Runs every applicable diagnostic on a result.
pub fn diagnose(
    res: &EquilibriumResult,
    psi: Option<&KantorovichPotential>,
    rho0_grid: Option<&GridDensity>,
    cfg: &DiagnosticsConfig,
) -> Result<DiagnosticsReport> {
    let mut flags = Vec::new();
    let (complementarity_max, off_min) = match psi {
        Some(psi) => {
            let c = complementarity_report(res, psi)?;
            flags.push(Flag::new(
                "complementarity_off_support",
                c.off_support_min.is_none_or(|v| v >= -cfg.tol),
                match c.off_support_min {
                    Some(v) => format!("min 2U - psi - c = {v:.3e}"),
                    None => "no cells off the support".to_string(),
                },
            ));
            (Some(c.max), c.off_support_min)
        }
        None => (None, None),
    };
    let h = res.spacing();
    let map_residual_max = transport_map_residual(res)?;
    flags.push(Flag::new(
        "map_residual_le_5h",
        map_residual_max <= 5.0 * h,
        format!("{map_residual_max:e} vs 5h = {:e}", 5.0 * h),
    ));
    let monge_ampere = match rho0_grid {
        Some(g) if res.grid.dim() == 2 => {
            let ma = monge_ampere_residual(res, g)?;
            flags.push(Flag::new(
                "ma_median_le_0.1",
                ma.product.median <= 0.1,
                format!("median {:e}", ma.product.median),
            ));
            flags.push(Flag::new(
                "shifted_form_agreement",
                ma.agreement <= 0.2,
                format!("relative {:e}", ma.agreement),
            ));
            Some(ma)
        }
        _ => None,
    };
    let support = res.support();
    let points: Vec<Vec<f64>> = support.iter().map(|&i| res.measure.point(i).to_vec()).collect();
    let stride = (support.len() / cfg.omega_centers.max(1)).max(1);
    let centers: Vec<Vec<f64>> = points.iter().step_by(stride).cloned().collect();
    let omega_table = omega_of_r(&points, &centers, &cfg.omega_radii);
    flags.push(Flag::new(
        "omega_monotone",
        omega_table.windows(2).all(|w| w[0].1 <= w[1].1),
        format!("{} radii", omega_table.len()),
    ));
    Ok(DiagnosticsReport {
        complementarity_max,
        complementarity_off_support_min: off_min,
        map_residual_max,
        ma_residual_stats: monge_ampere.as_ref().map(|m| m.product),
        monge_ampere,
        omega_table,
        singular_points: singular_candidates(res)?,
        flags,
    })
}
