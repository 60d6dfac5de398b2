//! Bessel functions of the first kind, orders 0 and 1.
//!
//! Power series below `SPLIT`, Hankel asymptotic expansion above it.

use std::f64::consts::PI;

const SPLIT: f64 = 12.0;

fn series(order: u32, t: f64) -> f64 {
    let half = 0.5 * t;
    let q = half * half;
    let mut term = half.powi(order as i32);
    for k in 1..=order {
        term /= k as f64;
    }
    let mut sum = term;
    let mut k = 1.0;
    loop {
        term *= -q / (k * (k + order as f64));
        sum += term;
        if term.abs() < 1e-18 * sum.abs().max(1e-300) && k > half {
            break;
        }
        k += 1.0;
        if k > 200.0 {
            break;
        }
    }
    sum
}

fn asymptotic(order: u32, t: f64) -> f64 {
    let mu = 4.0 * (order * order) as f64;
    let eight_t = 8.0 * t;
    let mut p = 1.0;
    let mut q = 0.0;
    let mut a = 1.0;
    let mut prev = f64::INFINITY;
    for k in 1..60u32 {
        let odd = (2 * k - 1) as f64;
        a *= (mu - odd * odd) / (k as f64 * eight_t);
        if a.abs() > prev || a == 0.0 {
            break;
        }
        prev = a.abs();
        // signs follow the pattern +Q, -P, -Q, +P, ...
        match k % 4 {
            1 => q += a,
            2 => p -= a,
            3 => q -= a,
            _ => p += a,
        }
        if a.abs() < 1e-17 {
            break;
        }
    }
    let chi = t - (0.5 * order as f64 + 0.25) * PI;
    (2.0 / (PI * t)).sqrt() * (p * chi.cos() - q * chi.sin())
}

/// J₀(t).
pub fn j0(t: f64) -> f64 {
    let t = t.abs();
    if t < SPLIT {
        series(0, t)
    } else {
        asymptotic(0, t)
    }
}

/// J₁(t).
pub fn j1(t: f64) -> f64 {
    let s = t.signum();
    let t = t.abs();
    s * if t < SPLIT { series(1, t) } else { asymptotic(1, t) }
}

/// (1 − J₀(t)) / t², accurate as t → 0.
pub fn one_minus_j0_over_t2(t: f64) -> f64 {
    let t = t.abs();
    if t > 0.5 {
        return (1.0 - j0(t)) / (t * t);
    }
    let q = 0.25 * t * t;
    // (1 − J₀)/t² = ¼ Σ_{k≥1} (−1)^{k+1} q^{k−1} / (k!)²
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 2..30 {
        let kf = k as f64;
        term *= -q / (kf * kf);
        sum += term;
        if term.abs() < 1e-18 {
            break;
        }
    }
    0.25 * sum
}
