//! Discrete and grid probability measures.
//!
//! A [`DiscreteMeasure`] is a weighted point cloud in any dimension; a
//! [`GridDensity`] is a piecewise-constant density on a uniform grid in one,
//! two or three dimensions. Both are immutable once built and always carry
//! unit mass.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on the unit-mass invariant of discrete measures.
pub const MASS_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[inline]
pub(crate) fn norm2(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

/// Weighted point cloud with weights summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    dim: usize,
    coords: Vec<f64>,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    /// Builds a measure from points and nonnegative weights, renormalizing the
    /// weights to sum to one.
    pub fn new(points: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyMeasure)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        let mut coords = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: p.len() });
            }
            coords.extend_from_slice(p);
        }
        Self::from_flat(dim, coords, weights.to_vec())
    }

    /// Same as [`DiscreteMeasure::new`] with coordinates stored row-major.
    pub fn from_flat(dim: usize, coords: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if dim == 0 || coords.len() != dim * weights.len() {
            return Err(Error::DimensionMismatch { expected: dim * weights.len(), found: coords.len() });
        }
        for (index, &weight) in weights.iter().enumerate() {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::NegativeWeight { index, weight });
            }
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidParameter("non-finite coordinate".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::ZeroMass(total));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { dim, coords, weights })
    }

    /// Equal weights on the given points.
    pub fn uniform(points: &[Vec<f64>]) -> Result<Self> {
        Self::new(points, &vec![1.0; points.len()])
    }

    /// Unit mass at a single point.
    pub fn dirac(point: &[f64]) -> Result<Self> {
        Self::from_flat(point.len(), point.to_vec(), vec![1.0])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    /// Σ wᵢ|xᵢ|², the second moment about the origin.
    pub fn second_moment(&self) -> f64 {
        self.points().zip(&self.weights).map(|(p, w)| w * norm2(p)).sum()
    }

    /// Mass of the closed ball `ball`.
    pub fn mass_in(&self, ball: &Ball) -> f64 {
        self.points().zip(&self.weights).filter(|(p, _)| ball.contains(p)).map(|(_, w)| *w).sum()
    }

    /// Normalized restriction to `ball` together with the retained mass.
    pub fn restrict_normalize(&self, ball: &Ball) -> Result<(DiscreteMeasure, f64)> {
        if ball.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: ball.dim() });
        }
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for (p, &w) in self.points().zip(&self.weights) {
            if ball.contains(p) && w > 0.0 {
                coords.extend_from_slice(p);
                weights.push(w);
            }
        }
        if weights.is_empty() {
            return Err(Error::EmptyRestriction);
        }
        let mass: f64 = weights.iter().sum();
        let restricted = Self::from_flat(self.dim, coords, weights)?;
        Ok((restricted, mass.min(1.0)))
    }

    /// Rigid translation by `shift`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        if shift.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: shift.len() });
        }
        let coords = self.coords.chunks_exact(self.dim).flat_map(|p| p.iter().zip(shift).map(|(a, b)| a + b)).collect();
        Ok(Self { dim: self.dim, coords, weights: self.weights.clone() })
    }

    /// Same points, new weights (renormalized).
    pub fn with_weights(&self, weights: Vec<f64>) -> Result<Self> {
        Self::from_flat(self.dim, self.coords.clone(), weights)
    }

    /// Atoms with weight above `cutoff`.
    pub fn support_indices(&self, cutoff: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.weights[i] > cutoff).collect()
    }

    /// Largest pairwise distance between atoms of positive weight.
    pub fn diameter(&self) -> f64 {
        let idx = self.support_indices(0.0);
        let mut best = 0.0f64;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                best = best.max(dist2(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }

    /// Writes one row per atom with columns `x1..xn,w`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut wtr = csv::Writer::from_path(path)?;
        let mut header: Vec<String> = (1..=self.dim).map(|k| format!("x{k}")).collect();
        header.push("w".into());
        wtr.write_record(&header)?;
        for (p, w) in self.points().zip(&self.weights) {
            let mut row: Vec<String> = p.iter().map(|v| format_f64(*v)).collect();
            row.push(format_f64(*w));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        if headers.len() < 2 || &headers[headers.len() - 1] != "w" {
            return Err(Error::ConfigParse {
                key: path.display().to_string(),
                message: "expected header x1..xn,w".into(),
            });
        }
        let dim = headers.len() - 1;
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        for record in rdr.records() {
            let record = record?;
            for k in 0..dim {
                coords.push(parse_f64(&record[k], path)?);
            }
            weights.push(parse_f64(&record[dim], path)?);
        }
        Self::from_flat(dim, coords, weights)
    }
}

/// Shortest round-trip decimal representation, so CSV output is bit-exact.
pub(crate) fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

fn parse_f64(s: &str, path: &Path) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|e| Error::ConfigParse { key: path.display().to_string(), message: format!("bad number `{s}`: {e}") })
}

/// Closed Euclidean ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    center: Vec<f64>,
    radius: f64,
}

impl Ball {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidRadius(radius));
        }
        Ok(Self { center, radius })
    }

    pub fn centered(dim: usize, radius: f64) -> Result<Self> {
        Self::new(vec![0.0; dim], radius)
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        dist2(p, &self.center) <= self.radius * self.radius
    }
}

/// Geometry of a uniform grid: `origin` is the lower corner of the box and
/// cell `i` along an axis spans `[origin + i h, origin + (i + 1) h]`.
/// Cells are stored with the last axis varying fastest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: Vec<f64>,
    pub spacing: Vec<f64>,
    pub shape: Vec<usize>,
}

impl GridSpec {
    pub fn new(origin: Vec<f64>, spacing: Vec<f64>, shape: Vec<usize>) -> Result<Self> {
        let dim = origin.len();
        if !(1..=3).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=3")));
        }
        if spacing.len() != dim || shape.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, found: spacing.len().min(shape.len()) });
        }
        if spacing.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidGrid("spacing must be positive".into()));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidGrid("shape must be positive".into()));
        }
        Ok(Self { origin, spacing, shape })
    }

    /// `n` cells per axis covering the cube `[-half_width, half_width]^dim`.
    pub fn centered_cube(dim: usize, half_width: f64, n: usize) -> Result<Self> {
        let h = 2.0 * half_width / n as f64;
        Self::new(vec![-half_width; dim], vec![h; dim], vec![n; dim])
    }

    pub fn dim(&self) -> usize {
        self.origin.len()
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// True when every axis has the same spacing.
    pub fn is_isotropic(&self) -> bool {
        self.spacing.iter().all(|h| (h - self.spacing[0]).abs() <= 1e-14 * self.spacing[0])
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.dim()];
        for k in (0..self.dim().saturating_sub(1)).rev() {
            strides[k] = strides[k + 1] * self.shape[k + 1];
        }
        strides
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(self.strides()).map(|(i, s)| i * s).sum()
    }

    pub fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim()];
        for k in (0..self.dim()).rev() {
            out[k] = flat % self.shape[k];
            flat /= self.shape[k];
        }
        out
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .enumerate()
            .map(|(k, &i)| self.origin[k] + (i as f64 + 0.5) * self.spacing[k])
            .collect()
    }

    /// All cell centers, row-major, flattened.
    pub fn centers_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len() * self.dim());
        for c in 0..self.len() {
            out.extend(self.cell_center(c));
        }
        out
    }

    /// Cell containing `p`; the upper boundary of the box belongs to the last cell.
    pub fn locate(&self, p: &[f64]) -> Option<usize> {
        if p.len() != self.dim() {
            return None;
        }
        let mut multi = Vec::with_capacity(self.dim());
        for k in 0..self.dim() {
            let t = (p[k] - self.origin[k]) / self.spacing[k];
            let n = self.shape[k];
            if !(t >= 0.0) || t > n as f64 {
                return None;
            }
            multi.push((t.floor() as usize).min(n - 1));
        }
        Some(self.flat_index(&multi))
    }

    pub fn upper(&self) -> Vec<f64> {
        (0..self.dim()).map(|k| self.origin[k] + self.shape[k] as f64 * self.spacing[k]).collect()
    }
}

/// Piecewise-constant density (mass per unit volume) on a uniform grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    spec: GridSpec,
    cells: Vec<f64>,
}

impl GridDensity {
    /// Wraps cell values without renormalizing.
    pub fn new(spec: GridSpec, cells: Vec<f64>) -> Result<Self> {
        if cells.len() != spec.len() {
            return Err(Error::DimensionMismatch { expected: spec.len(), found: cells.len() });
        }
        for (index, &weight) in cells.iter().enumerate() {
            if !(weight >= 0.0) || !weight.is_finite() {
                return Err(Error::NegativeWeight { index, weight });
            }
        }
        Ok(Self { spec, cells })
    }

    /// All-zero density; not a probability measure.
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.len();
        Self { spec, cells: vec![0.0; n] }
    }

    /// Samples `f` at cell centers and normalizes to unit mass.
    pub fn from_fn(spec: GridSpec, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let cells = (0..spec.len()).map(|c| f(&spec.cell_center(c)).max(0.0)).collect();
        Self::new(spec, cells)?.normalized()
    }

    /// Uniform density on the cells whose center lies in `ball`.
    pub fn uniform_ball(spec: GridSpec, ball: &Ball) -> Result<Self> {
        Self::from_fn(spec, |x| if ball.contains(x) { 1.0 } else { 0.0 })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    pub fn mass(&self) -> f64 {
        self.cells.iter().sum::<f64>() * self.spec.cell_volume()
    }

    /// Per-cell masses, i.e. density times cell volume.
    pub fn cell_masses(&self) -> Vec<f64> {
        let v = self.spec.cell_volume();
        self.cells.iter().map(|c| c * v).collect()
    }

    pub fn normalized(self) -> Result<Self> {
        let m = self.mass();
        if !(m > 0.0) {
            return Err(Error::ZeroMass(m));
        }
        let cells = self.cells.into_iter().map(|c| c / m).collect();
        Ok(Self { spec: self.spec, cells })
    }

    /// Builds a density from per-cell masses.
    pub fn from_masses(spec: GridSpec, masses: &[f64]) -> Result<Self> {
        let v = spec.cell_volume();
        Self::new(spec, masses.iter().map(|m| m / v).collect())
    }

    /// Atoms at the centers of the nonzero cells, weighted by cell mass.
    pub fn to_discrete(&self) -> Result<DiscreteMeasure> {
        self.to_discrete_refined(1)
    }

    /// Splits every nonzero cell into `q^dim` equal sub-atoms at the centers of
    /// a `q`-fold refined lattice.
    pub fn to_discrete_refined(&self, q: usize) -> Result<DiscreteMeasure> {
        let q = q.max(1);
        let dim = self.dim();
        let sub = q.pow(dim as u32);
        let mut coords = Vec::new();
        let mut weights = Vec::new();
        let vol = self.spec.cell_volume();
        for (c, &rho) in self.cells.iter().enumerate() {
            if rho <= 0.0 {
                continue;
            }
            let multi = self.spec.multi_index(c);
            for s in 0..sub {
                let mut rem = s;
                let mut p = vec![0.0; dim];
                for k in (0..dim).rev() {
                    let sk = rem % q;
                    rem /= q;
                    p[k] =
                        self.spec.origin[k] + (multi[k] as f64 + (sk as f64 + 0.5) / q as f64) * self.spec.spacing[k];
                }
                coords.extend(p);
                weights.push(rho * vol / sub as f64);
            }
        }
        DiscreteMeasure::from_flat(dim, coords, weights)
    }

    /// Density value of the cell containing `p`, zero outside the box.
    pub fn value_at(&self, p: &[f64]) -> f64 {
        self.spec.locate(p).map_or(0.0, |c| self.cells[c])
    }

    /// Mass-conserving nearest-cell deposition of a discrete measure.
    pub fn from_particles(mu: &DiscreteMeasure, spec: GridSpec) -> Result<Self> {
        if mu.dim() != spec.dim() {
            return Err(Error::DimensionMismatch { expected: spec.dim(), found: mu.dim() });
        }
        let mut masses = vec![0.0; spec.len()];
        for (index, (p, w)) in mu.points().zip(mu.weights()).enumerate() {
            let c = spec.locate(p).ok_or(Error::OutOfGrid { index })?;
            masses[c] += w;
        }
        Self::from_masses(spec, &masses)
    }

    /// Writes `<stem>.json` (origin, spacing, shape) and `<stem>.csv` (one
    /// value per line, row-major).
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_grid_values(stem, &self.spec, &self.cells)
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let (spec, cells) = read_grid_values(stem)?;
        Self::new(spec, cells)
    }
}

pub(crate) fn write_grid_values(stem: &Path, spec: &GridSpec, values: &[f64]) -> Result<()> {
    let header = stem.with_extension("json");
    serde_json::to_writer_pretty(BufWriter::new(File::create(header)?), spec)?;
    let mut out = BufWriter::new(File::create(stem.with_extension("csv"))?);
    for v in values {
        writeln!(out, "{}", format_f64(*v))?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn read_grid_values(stem: &Path) -> Result<(GridSpec, Vec<f64>)> {
    let header = stem.with_extension("json");
    if !header.exists() {
        return Err(Error::MissingInput(header));
    }
    let spec: GridSpec = serde_json::from_reader(BufReader::new(File::open(&header)?))?;
    let spec = GridSpec::new(spec.origin, spec.spacing, spec.shape)?;
    let data = stem.with_extension("csv");
    if !data.exists() {
        return Err(Error::MissingInput(data));
    }
    let mut values = Vec::with_capacity(spec.len());
    for line in BufReader::new(File::open(&data)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        values.push(parse_f64(&line, &data)?);
    }
    if values.len() != spec.len() {
        return Err(Error::DimensionMismatch { expected: spec.len(), found: values.len() });
    }
    Ok((spec, values))
}
