//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use eqmeasure::measure::DiscreteMeasure;

/// min cᵀx subject to Ax = b, x ≥ 0 by a two-phase dense tableau simplex
/// with Bland's rule. Returns None when infeasible.
pub fn lp_min(c: &[f64], a: &[Vec<f64>], b: &[f64]) -> Option<f64> {
    let (m, n) = (a.len(), c.len());
    let width = n + m + 1;
    let rhs = n + m;
    let mut t = vec![vec![0.0; width]; m + 1];
    let mut basis = vec![0; m];
    for i in 0..m {
        let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = sign * a[i][j];
        }
        t[i][n + i] = 1.0;
        t[i][rhs] = sign * b[i];
        basis[i] = n + i;
    }
    // phase one: minimize the sum of artificials
    t[m][n..n + m].iter_mut().for_each(|v| *v = 1.0);
    for i in 0..m {
        let row = t[i].clone();
        for j in 0..width {
            t[m][j] -= row[j];
        }
    }
    simplex(&mut t, &mut basis, n + m);
    if -t[m][rhs] > 1e-9 {
        return None;
    }
    // pivot remaining artificials out where possible
    for i in 0..m {
        if basis[i] >= n {
            if let Some(j) = (0..n).find(|&j| t[i][j].abs() > 1e-9) {
                pivot(&mut t, &mut basis, i, j);
            }
        }
    }
    for j in 0..width {
        t[m][j] = if j < n { c[j] } else { 0.0 };
    }
    for i in 0..m {
        let cb = if basis[i] < n { c[basis[i]] } else { 0.0 };
        if cb != 0.0 {
            let row = t[i].clone();
            for j in 0..width {
                t[m][j] -= cb * row[j];
            }
        }
    }
    simplex(&mut t, &mut basis, n);
    Some(-t[m][rhs])
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], r: usize, col: usize) {
    let p = t[r][col];
    for v in t[r].iter_mut() {
        *v /= p;
    }
    let row = t[r].clone();
    for (i, line) in t.iter_mut().enumerate() {
        if i != r {
            let f = line[col];
            if f != 0.0 {
                for (v, w) in line.iter_mut().zip(&row) {
                    *v -= f * w;
                }
            }
        }
    }
    basis[r] = col;
}

fn simplex(t: &mut [Vec<f64>], basis: &mut [usize], allowed: usize) {
    let m = basis.len();
    let rhs = t[0].len() - 1;
    loop {
        let Some(col) = (0..allowed).find(|&j| t[m][j] < -1e-12) else { return };
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..m {
            if t[i][col] > 1e-12 {
                let ratio = t[i][rhs] / t[i][col];
                let better = match best {
                    None => true,
                    Some((r, _, b)) => ratio < r - 1e-15 || (ratio <= r + 1e-15 && basis[i] < b),
                };
                if better {
                    best = Some((ratio, i, basis[i]));
                }
            }
        }
        let Some((_, r, _)) = best else { return };
        pivot(t, basis, r, col);
    }
}

/// Optimal ½|x − y|² transport cost as a linear program over the full plan.
pub fn ot_cost_lp(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> f64 {
    let (n, m) = (mu.len(), nu.len());
    let mut c = Vec::with_capacity(n * m);
    for i in 0..n {
        for j in 0..m {
            c.push(half_dist2(mu.point(i), nu.point(j)));
        }
    }
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..n {
        let mut row = vec![0.0; n * m];
        row[i * m..(i + 1) * m].iter_mut().for_each(|v| *v = 1.0);
        a.push(row);
        b.push(mu.weight(i));
    }
    // the last column constraint is implied by the others
    for j in 0..m.saturating_sub(1) {
        let mut row = vec![0.0; n * m];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        a.push(row);
        b.push(nu.weight(j));
    }
    lp_min(&c, &a, &b).expect("transport LP is feasible")
}

/// Exhaustive minimum over permutations for equal uniform weights (subset DP).
pub fn assignment_cost(xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
    let n = xs.len();
    assert_eq!(n, ys.len());
    let mut dp = vec![f64::INFINITY; 1 << n];
    dp[0] = 0.0;
    for mask in 0usize..(1 << n) {
        if !dp[mask].is_finite() {
            continue;
        }
        let i = mask.count_ones() as usize;
        if i == n {
            continue;
        }
        for j in 0..n {
            if mask & (1 << j) == 0 {
                let v = dp[mask] + half_dist2(&xs[i], &ys[j]);
                let slot = &mut dp[mask | (1 << j)];
                if v < *slot {
                    *slot = v;
                }
            }
        }
    }
    dp[(1 << n) - 1] / n as f64
}

pub fn half_dist2(x: &[f64], y: &[f64]) -> f64 {
    0.5 * x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// ½-quadratic cost between sorted 1D measures via the quantile coupling.
pub fn quantile_d2(xs: &[f64], wx: &[f64], ys: &[f64], wy: &[f64]) -> f64 {
    let (mut i, mut j) = (0, 0);
    let (mut ri, mut rj) = (wx[0], wy[0]);
    let mut total = 0.0;
    loop {
        let m = ri.min(rj);
        total += m * 0.5 * (xs[i] - ys[j]).powi(2);
        ri -= m;
        rj -= m;
        if ri <= 0.0 {
            i += 1;
            while i < xs.len() && wx[i] <= 0.0 {
                i += 1;
            }
            if i == xs.len() {
                break;
            }
            ri = wx[i];
        }
        if rj <= 0.0 {
            j += 1;
            if j == ys.len() {
                break;
            }
            rj = wy[j];
        }
    }
    total
}

/// ∫₀ᶜ −ln t dt by Simpson's rule after t = s⁴, which removes the singularity.
fn neg_log_integral(c: f64) -> f64 {
    if c <= 0.0 {
        return 0.0;
    }
    let (n, top) = (4000, c.sqrt().sqrt());
    let ds = top / n as f64;
    let f = |s: f64| if s == 0.0 { 0.0 } else { -16.0 * s * s * s * s.ln() };
    let mut acc = f(0.0) + f(top);
    for k in 1..n {
        acc += if k % 2 == 1 { 4.0 } else { 2.0 } * f(k as f64 * ds);
    }
    acc * ds / 3.0
}

/// Average of log(1/|t|) over the interval of width h centered at d.
pub fn cell_log_average(d: f64, h: f64) -> f64 {
    let (a, b) = (d - 0.5 * h, d + 0.5 * h);
    let total = if a >= 0.0 {
        neg_log_integral(b) - neg_log_integral(a)
    } else if b <= 0.0 {
        neg_log_integral(-a) - neg_log_integral(-b)
    } else {
        neg_log_integral(b) + neg_log_integral(-a)
    };
    total / h
}

pub fn random_measure(rng: &mut ChaCha8Rng, n: usize, dim: usize, scale: f64) -> DiscreteMeasure {
    let pts: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.gen_range(-scale..scale)).collect()).collect();
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..1.0)).collect();
    DiscreteMeasure::new(&pts, &w).unwrap()
}
