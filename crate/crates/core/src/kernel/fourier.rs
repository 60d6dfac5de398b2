//! Fourier-side evaluation of the truncated logarithmic energy in 2D.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;

use super::bessel::{j1, one_minus_j0_over_t2};
use super::fft::NdFft;
use crate::error::{Error, Result};
use crate::measure::GridDensity;

/// Constant in front of the (1 − J₀) term; the exact transform of the
/// truncated log kernel has c₁ = 2, which [`calibrate_c1`] reproduces.
pub const C1: f64 = 2.0;

/// c₁/(4π|ξ|²) · (1 − J₀(2π r₀ |ξ|)).
pub fn truncated_kernel_fourier(xi: &[f64], r0: f64, c1: f64) -> Result<f64> {
    if !(r0 > 0.0) {
        return Err(Error::InvalidRadius(r0));
    }
    let rho = xi.iter().map(|v| v * v).sum::<f64>().sqrt();
    if rho == 0.0 {
        return Err(Error::ZeroFrequency);
    }
    Ok(bessel_part(rho, r0, c1))
}

/// Printed part with the removable singularity at 0 filled in.
fn bessel_part(rho: f64, r0: f64, c1: f64) -> f64 {
    let t = 2.0 * PI * r0 * rho;
    // c₁/(4πρ²)(1 − J₀(t)) = c₁ π r₀² · (1 − J₀(t))/t²
    c1 * PI * r0 * r0 * one_minus_j0_over_t2(t)
}

/// Transform of log(1/r₀)·1_{B_{r₀}}; vanishes at r₀ = 1.
fn indicator_part(rho: f64, r0: f64) -> f64 {
    let scale = -(r0.ln());
    if scale == 0.0 {
        return 0.0;
    }
    if rho == 0.0 {
        return scale * PI * r0 * r0;
    }
    scale * r0 * j1(2.0 * PI * r0 * rho) / rho
}

struct Spectrum {
    /// Σ |m̂|² S · (Bessel part with c₁ = 1) / area.
    bessel: f64,
    /// Σ |m̂|² S · (indicator part) / area.
    indicator: f64,
}

fn spectrum(rho: &GridDensity, r0: f64) -> Result<Spectrum> {
    if rho.dim() != 2 {
        return Err(Error::DimensionMismatch { expected: 2, found: rho.dim() });
    }
    if !(r0 > 0.0) {
        return Err(Error::InvalidRadius(r0));
    }
    let spec = rho.spec();
    let masses = rho.cell_masses();
    let diameter = support_diameter(rho);
    if diameter > r0 {
        return Err(Error::SupportTooLarge { diameter, radius: r0 });
    }
    // period ≥ grid extent + r₀ keeps periodic images outside the kernel support
    let pad: Vec<usize> = (0..2)
        .map(|k| {
            let extra = (r0 / spec.spacing[k]).ceil() as usize + 2;
            (spec.shape[k] + extra).next_power_of_two()
        })
        .collect();
    let fft = NdFft::new(&pad);
    let mut work = vec![Complex::new(0.0, 0.0); fft.len()];
    for (flat, &m) in masses.iter().enumerate() {
        let idx = spec.multi_index(flat);
        work[idx[0] * pad[1] + idx[1]] = Complex::new(m, 0.0);
    }
    fft.forward(&mut work);

    let period = [pad[0] as f64 * spec.spacing[0], pad[1] as f64 * spec.spacing[1]];
    let area = period[0] * period[1];
    let freq = |k: usize, n: usize, l: f64| {
        let signed = if k <= n / 2 { k as f64 } else { k as f64 - n as f64 };
        signed / l
    };
    let mut bessel = 0.0;
    let mut indicator = 0.0;
    for k0 in 0..pad[0] {
        let xi0 = freq(k0, pad[0], period[0]);
        let s0 = sinc(xi0 * spec.spacing[0]);
        for k1 in 0..pad[1] {
            let xi1 = freq(k1, pad[1], period[1]);
            let s = s0 * sinc(xi1 * spec.spacing[1]);
            let power = work[k0 * pad[1] + k1].norm_sqr() * s;
            let r = (xi0 * xi0 + xi1 * xi1).sqrt();
            bessel += power * bessel_part(r, r0, 1.0);
            indicator += power * indicator_part(r, r0);
        }
    }
    Ok(Spectrum { bessel: bessel / area, indicator: indicator / area })
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Diameter of the set of centers of cells with positive density.
fn support_diameter(rho: &GridDensity) -> f64 {
    let spec = rho.spec();
    let mut pts: Vec<(f64, f64)> = rho
        .cells()
        .iter()
        .enumerate()
        .filter(|(_, &v)| v > 0.0)
        .map(|(i, _)| {
            let c = spec.cell_center(i);
            (c[0], c[1])
        })
        .collect();
    let hull = convex_hull(&mut pts);
    let mut best: f64 = 0.0;
    for (i, a) in hull.iter().enumerate() {
        for b in &hull[i + 1..] {
            best = best.max(((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt());
        }
    }
    best
}

/// Andrew's monotone chain.
pub(crate) fn convex_hull(pts: &mut [(f64, f64)]) -> Vec<(f64, f64)> {
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    if pts.len() < 3 {
        return pts.to_vec();
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * pts.len());
    for &p in pts.iter() {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// ∫|ρ̂|²K̂_{r₀} over the frequency lattice of a zero-padded grid, with the
/// default constant [`C1`].
pub fn fourier_energy(rho: &GridDensity, r0: f64) -> Result<f64> {
    fourier_energy_with(rho, r0, C1)
}

pub fn fourier_energy_with(rho: &GridDensity, r0: f64, c1: f64) -> Result<f64> {
    let s = spectrum(rho, r0)?;
    Ok(c1 * s.bessel + s.indicator)
}

/// The c₁ for which [`fourier_energy_with`] reproduces `direct_energy` on ρ.
pub fn calibrate_c1(rho: &GridDensity, r0: f64, direct_energy: f64) -> Result<f64> {
    let s = spectrum(rho, r0)?;
    Ok((direct_energy - s.indicator) / s.bessel)
}
