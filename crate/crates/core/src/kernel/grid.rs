use std::path::Path;

use rustfft::num_complex::Complex;

use super::cell::box_average;
use super::fft::NdFft;
use super::KernelKind;
use crate::error::{Error, Result};
use crate::measure::{write_grid_values, GridDensity, GridSpec};

/// Point-to-cell averaged kernel on a uniform grid.
///
/// Entry (i, j) is the average of K(xᵢ − y) over cell j, so a cell holding
/// mass m contributes m·entry(i, j) to the potential at the center of cell i.
pub struct GridKernel {
    spec: GridSpec,
    kind: KernelKind,
    table: Vec<f64>,
    table_shape: Vec<usize>,
    fft: NdFft,
    pad_shape: Vec<usize>,
    kernel_hat: Vec<Complex<f64>>,
}

impl std::fmt::Debug for GridKernel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GridKernel").field("spec", &self.spec).field("kind", &self.kind).finish_non_exhaustive()
    }
}

fn supported(kind: KernelKind, dim: usize) -> bool {
    matches!((kind, dim), (KernelKind::Log2D, 1) | (KernelKind::Log2D, 2) | (KernelKind::Riesz(3), 3))
}

impl GridKernel {
    pub fn new(spec: &GridSpec, kind: KernelKind) -> Result<Self> {
        let dim = spec.dim();
        if !supported(kind, dim) {
            let expected = match kind {
                KernelKind::Log2D => 2,
                KernelKind::Riesz(n) => n as usize,
            };
            return Err(Error::DimensionMismatch { expected, found: dim });
        }
        let table_shape: Vec<usize> = spec.shape.iter().map(|&n| 2 * n - 1).collect();
        let total: usize = table_shape.iter().product();
        let mut table = vec![0.0; total];
        let mut offset = vec![0.0; dim];
        for (flat, slot) in table.iter_mut().enumerate() {
            let mut rem = flat;
            for k in (0..dim).rev() {
                let idx = rem % table_shape[k];
                rem /= table_shape[k];
                offset[k] = (idx as f64 - (spec.shape[k] - 1) as f64).abs() * spec.spacing[k];
            }
            *slot = box_average(kind, &offset, &spec.spacing).expect("supported pair");
        }

        let pad_shape: Vec<usize> = table_shape.iter().map(|&n| n.next_power_of_two()).collect();
        let fft = NdFft::new(&pad_shape);
        let mut kernel_hat = vec![Complex::new(0.0, 0.0); fft.len()];
        for (flat, &v) in table.iter().enumerate() {
            let mut rem = flat;
            let mut pad_flat = 0;
            let mut stride = 1;
            for k in (0..dim).rev() {
                let idx = rem % table_shape[k];
                rem /= table_shape[k];
                let off = idx as isize - (spec.shape[k] - 1) as isize;
                let wrapped = off.rem_euclid(pad_shape[k] as isize) as usize;
                pad_flat += wrapped * stride;
                stride *= pad_shape[k];
            }
            kernel_hat[pad_flat] = Complex::new(v, 0.0);
        }
        fft.forward(&mut kernel_hat);

        Ok(GridKernel { spec: spec.clone(), kind, table, table_shape, fft, pad_shape, kernel_hat })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    /// Average of K over a cell centered at the evaluation point.
    pub fn self_value(&self) -> f64 {
        let center: Vec<usize> = self.spec.shape.iter().map(|&n| n - 1).collect();
        self.table[self.table_flat(&center)]
    }

    fn table_flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.table_shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    /// Kernel entry between target cell i and source cell j.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let a = self.spec.multi_index(i);
        let b = self.spec.multi_index(j);
        let idx: Vec<usize> = (0..a.len()).map(|k| (a[k] + self.spec.shape[k] - 1) - b[k]).collect();
        self.table[self.table_flat(&idx)]
    }

    /// Potential at every cell center from per-cell masses, by FFT convolution.
    pub fn apply(&self, masses: &[f64]) -> Vec<f64> {
        assert_eq!(masses.len(), self.spec.len());
        let dim = self.spec.dim();
        let mut work = vec![Complex::new(0.0, 0.0); self.fft.len()];
        let pad_strides = strides(&self.pad_shape);
        for (flat, &m) in masses.iter().enumerate() {
            if m == 0.0 {
                continue;
            }
            let idx = self.spec.multi_index(flat);
            let p: usize = (0..dim).map(|k| idx[k] * pad_strides[k]).sum();
            work[p] = Complex::new(m, 0.0);
        }
        self.fft.forward(&mut work);
        for (w, k) in work.iter_mut().zip(&self.kernel_hat) {
            *w *= k;
        }
        self.fft.inverse(&mut work);
        let scale = 1.0 / self.fft.len() as f64;
        (0..self.spec.len())
            .map(|flat| {
                let idx = self.spec.multi_index(flat);
                let p: usize = (0..dim).map(|k| idx[k] * pad_strides[k]).sum();
                work[p].re * scale
            })
            .collect()
    }

    /// Same as [`GridKernel::apply`] by explicit double summation.
    pub fn apply_direct(&self, masses: &[f64]) -> Vec<f64> {
        let n = self.spec.len();
        let sources: Vec<usize> = (0..n).filter(|&j| masses[j] != 0.0).collect();
        (0..n).map(|i| sources.iter().map(|&j| masses[j] * self.entry(i, j)).sum()).collect()
    }

    /// Σᵢ mᵢ U(xᵢ).
    pub fn energy(&self, masses: &[f64]) -> f64 {
        let u = self.apply(masses);
        masses.iter().zip(&u).map(|(m, u)| m * u).sum()
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

/// Potential values and gradient components at the cell centers of a grid.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub spec: GridSpec,
    pub values: Vec<f64>,
    /// One array per axis.
    pub gradient: Vec<Vec<f64>>,
    pub source: String,
}

impl PotentialField {
    pub fn from_values(spec: GridSpec, values: Vec<f64>, source: impl Into<String>) -> Self {
        let gradient = centered_gradient(&spec, &values);
        PotentialField { spec, values, gradient, source: source.into() }
    }

    pub fn gradient_at(&self, flat: usize) -> Vec<f64> {
        self.gradient.iter().map(|g| g[flat]).collect()
    }

    /// Five-point (or 2d+1 point) Laplacian at an interior cell.
    pub fn laplacian(&self, flat: usize) -> Option<f64> {
        let idx = self.spec.multi_index(flat);
        let strides = self.spec.strides();
        let mut total = 0.0;
        for k in 0..self.spec.dim() {
            if idx[k] == 0 || idx[k] + 1 == self.spec.shape[k] {
                return None;
            }
            let h = self.spec.spacing[k];
            total +=
                (self.values[flat + strides[k]] - 2.0 * self.values[flat] + self.values[flat - strides[k]]) / (h * h);
        }
        Some(total)
    }

    /// Writes `stem.json`/`stem.csv` for the values and `stem_d{k}` for each
    /// gradient component.
    pub fn write(&self, stem: &Path) -> Result<()> {
        write_grid_values(stem, &self.spec, &self.values)?;
        for (k, g) in self.gradient.iter().enumerate() {
            let name = format!("{}_d{}", stem.file_name().and_then(|s| s.to_str()).unwrap_or("field"), k + 1);
            write_grid_values(&stem.with_file_name(name), &self.spec, g)?;
        }
        Ok(())
    }
}

/// Centered differences in the interior, one-sided on the boundary.
pub(crate) fn centered_gradient(spec: &GridSpec, values: &[f64]) -> Vec<Vec<f64>> {
    let strides = spec.strides();
    (0..spec.dim())
        .map(|k| {
            let h = spec.spacing[k];
            let n = spec.shape[k];
            (0..values.len())
                .map(|flat| {
                    let i = (flat / strides[k]) % n;
                    if n == 1 {
                        0.0
                    } else if i == 0 {
                        (values[flat + strides[k]] - values[flat]) / h
                    } else if i + 1 == n {
                        (values[flat] - values[flat - strides[k]]) / h
                    } else {
                        (values[flat + strides[k]] - values[flat - strides[k]]) / (2.0 * h)
                    }
                })
                .collect()
        })
        .collect()
}

/// U at every cell center of ρ's grid, with exact cell averages of the kernel.
pub fn potential_field_on_grid(rho: &GridDensity, kind: KernelKind) -> Result<PotentialField> {
    let kernel = GridKernel::new(rho.spec(), kind)?;
    let values = kernel.apply(&rho.cell_masses());
    Ok(PotentialField::from_values(rho.spec().clone(), values, format!("{kind:?} potential")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::measure::Ball;

    #[test]
    fn fft_matches_direct_sum() {
        for spec in [
            GridSpec::new(vec![-1.0], vec![0.1], vec![20]).unwrap(),
            GridSpec::new(vec![-1.0, -0.5], vec![0.1, 0.1], vec![12, 9]).unwrap(),
            GridSpec::centered_cube(3, 1.0, 6).unwrap(),
        ] {
            let kind = if spec.dim() == 3 { KernelKind::Riesz(3) } else { KernelKind::Log2D };
            let k = GridKernel::new(&spec, kind).unwrap();
            let masses: Vec<f64> = (0..spec.len()).map(|i| ((i * 7919) % 13) as f64).collect();
            let a = k.apply(&masses);
            let b = k.apply_direct(&masses);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-10 * (1.0 + y.abs()), "{x} vs {y}");
            }
            // symmetric operator
            assert_eq!(k.entry(0, spec.len() - 1), k.entry(spec.len() - 1, 0));
        }
    }

    #[test]
    fn single_cell_source_matches_point_kernel_far_away() {
        let spec = GridSpec::centered_cube(2, 1.0, 256).unwrap();
        let src = spec.flat_index(&[128, 128]);
        let mut masses = vec![0.0; spec.len()];
        masses[src] = 1.0;
        let rho = GridDensity::from_masses(spec.clone(), &masses).unwrap();
        let field = potential_field_on_grid(&rho, KernelKind::Log2D).unwrap();
        let c = spec.cell_center(src);
        let h = spec.spacing[0];
        let mut checked = 0;
        for flat in 0..spec.len() {
            let p = spec.cell_center(flat);
            let r = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
            if r >= 100.0 * h {
                let k = KernelSpec::log2d().value(r);
                assert!((field.values[flat] - k).abs() < 1e-10, "{} vs {k}", field.values[flat]);
                checked += 1;
            }
        }
        assert!(checked > 1000);
    }

    #[test]
    fn uniform_disk_potential_at_center() {
        let spec = GridSpec::centered_cube(2, 1.2, 256).unwrap();
        let rho = GridDensity::uniform_ball(spec.clone(), &Ball::centered(2, 1.0).unwrap()).unwrap();
        let field = potential_field_on_grid(&rho, KernelKind::Log2D).unwrap();
        let center = spec.locate(&[1e-9, 1e-9]).unwrap();
        assert!((field.values[center] - 0.5).abs() < 2e-2, "{}", field.values[center]);
    }

    #[test]
    fn zero_density_gives_zero_field() {
        let spec = GridSpec::centered_cube(2, 1.0, 16).unwrap();
        let rho = GridDensity::zeros(spec);
        let field = potential_field_on_grid(&rho, KernelKind::Log2D).unwrap();
        assert!(field.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch() {
        let spec = GridSpec::centered_cube(2, 1.0, 8).unwrap();
        assert!(matches!(GridKernel::new(&spec, KernelKind::Riesz(3)), Err(Error::DimensionMismatch { .. })));
    }

    fn laplacian_error(n: usize) -> f64 {
        let spec = GridSpec::centered_cube(2, 2.0, n).unwrap();
        let sigma: f64 = 0.3;
        let rho = GridDensity::from_fn(spec.clone(), |p| (-(p[0] * p[0] + p[1] * p[1]) / (2.0 * sigma * sigma)).exp())
            .unwrap();
        let field = potential_field_on_grid(&rho, KernelKind::Log2D).unwrap();
        let mut worst: f64 = 0.0;
        for flat in 0..spec.len() {
            let p = spec.cell_center(flat);
            if p[0].abs() > 1.0 || p[1].abs() > 1.0 {
                continue;
            }
            let lap = field.laplacian(flat).unwrap();
            worst = worst.max((lap + 2.0 * std::f64::consts::PI * rho.cells()[flat]).abs());
        }
        worst
    }

    #[test]
    fn laplacian_identity_improves_with_resolution() {
        let coarse = laplacian_error(32);
        let fine = laplacian_error(64);
        // peak density is ~1.77, so 2πρ ~ 11
        assert!(fine < 0.1, "fine error {fine}");
        assert!(fine < 0.4 * coarse, "{coarse} -> {fine}");
    }

    #[test]
    fn riesz_grid_potential_of_ball() {
        // uniform unit ball in 3D: U(0) = ∫ ρ/r = (3/4π)·2π = 3/2
        let spec = GridSpec::centered_cube(3, 1.1, 44).unwrap();
        let rho = GridDensity::uniform_ball(spec.clone(), &Ball::centered(3, 1.0).unwrap()).unwrap();
        let field = potential_field_on_grid(&rho, KernelKind::Riesz(3)).unwrap();
        let c = spec.locate(&[1e-9, 1e-9, 1e-9]).unwrap();
        assert!((field.values[c] - 1.5).abs() < 3e-2, "{}", field.values[c]);
    }

    #[test]
    fn field_round_trips_through_files() {
        let dir = tempfile::tempdir().unwrap();
        let spec = GridSpec::centered_cube(2, 1.0, 6).unwrap();
        let rho = GridDensity::from_fn(spec, |p| 1.0 + p[0]).unwrap();
        let field = potential_field_on_grid(&rho, KernelKind::Log2D).unwrap();
        let stem = dir.path().join("u");
        field.write(&stem).unwrap();
        let (spec, values) = crate::measure::read_grid_values(&stem).unwrap();
        assert_eq!(spec, field.spec);
        assert_eq!(values, field.values);
        assert!(dir.path().join("u_d2.csv").exists());
    }
}
