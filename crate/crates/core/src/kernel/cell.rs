//! Exact averages of the interaction kernels over axis-aligned boxes.
//!
//! All integrals use closed-form antiderivatives combined by
//! inclusion–exclusion over the box corners.

use super::KernelKind;

/// ∫ −ln|t| dt.
fn anti_log_1d(t: f64) -> f64 {
    if t == 0.0 {
        0.0
    } else {
        t - t * t.abs().ln()
    }
}

/// x² atan(y/x), continuous through x = 0.
fn sq_atan(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x * (y / x).atan()
    }
}

/// G with ∂²G/∂x∂y = ln(x² + y²).
fn anti_log_2d(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    if r2 == 0.0 {
        return 0.0;
    }
    x * y * (r2.ln() - 3.0) + sq_atan(x, y) + sq_atan(y, x)
}

/// ∂G/∂x = y ln(x² + y²) − 2y + 2x atan(y/x).
fn anti_log_2d_dx(x: f64, y: f64) -> f64 {
    let r2 = x * x + y * y;
    let log_term = if y == 0.0 { 0.0 } else { y * r2.ln() };
    let atan_term = if x == 0.0 { 0.0 } else { 2.0 * x * (y / x).atan() };
    log_term - 2.0 * y + atan_term
}

/// ln(x + √(x²+y²+z²)) computed without cancellation for x < 0.
fn log_x_plus_r(x: f64, y: f64, z: f64) -> f64 {
    let r = (x * x + y * y + z * z).sqrt();
    if x >= 0.0 {
        (x + r).ln()
    } else {
        ((y * y + z * z) / (r - x)).ln()
    }
}

fn prod_log(a: f64, b: f64, x: f64, y: f64, z: f64) -> f64 {
    if a == 0.0 || b == 0.0 {
        0.0
    } else {
        a * b * log_x_plus_r(x, y, z)
    }
}

fn sq_atan3(a: f64, b: f64, c: f64, r: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        0.5 * a * a * (b * c / (a * r)).atan()
    }
}

/// H with ∂³H/∂x∂y∂z = 1/√(x²+y²+z²).
fn anti_inv_r_3d(x: f64, y: f64, z: f64) -> f64 {
    let r = (x * x + y * y + z * z).sqrt();
    if r == 0.0 {
        return 0.0;
    }
    prod_log(y, z, x, y, z) + prod_log(x, z, y, x, z) + prod_log(x, y, z, x, y)
        - sq_atan3(x, y, z, r)
        - sq_atan3(y, x, z, r)
        - sq_atan3(z, x, y, r)
}

/// Average of the kernel over the box centered at `offset` with side
/// lengths `h`. Returns `None` for kernel/dimension pairs without a closed form.
pub fn box_average(kind: KernelKind, offset: &[f64], h: &[f64]) -> Option<f64> {
    match (kind, offset.len()) {
        (KernelKind::Log2D, 1) => {
            let (a, b) = (offset[0] - 0.5 * h[0], offset[0] + 0.5 * h[0]);
            Some((anti_log_1d(b) - anti_log_1d(a)) / h[0])
        }
        (KernelKind::Log2D, 2) => {
            let (x0, x1) = (offset[0] - 0.5 * h[0], offset[0] + 0.5 * h[0]);
            let (y0, y1) = (offset[1] - 0.5 * h[1], offset[1] + 0.5 * h[1]);
            let g = anti_log_2d(x1, y1) - anti_log_2d(x0, y1) - anti_log_2d(x1, y0) + anti_log_2d(x0, y0);
            Some(-0.5 * g / (h[0] * h[1]))
        }
        (KernelKind::Riesz(3), 3) => {
            let lo: Vec<f64> = (0..3).map(|k| offset[k] - 0.5 * h[k]).collect();
            let hi: Vec<f64> = (0..3).map(|k| offset[k] + 0.5 * h[k]).collect();
            let mut total = 0.0;
            for corner in 0..8u32 {
                let pick = |k: usize| if corner >> k & 1 == 1 { hi[k] } else { lo[k] };
                let sign = if corner.count_ones() % 2 == 1 { -1.0 } else { 1.0 };
                total += sign * anti_inv_r_3d(pick(0), pick(1), pick(2));
            }
            // inclusion–exclusion sign: + at (hi,hi,hi)
            Some(-total / (h[0] * h[1] * h[2]))
        }
        _ => None,
    }
}

/// Gradient with respect to `offset` of [`box_average`], i.e. the gradient of
/// the potential of a uniform unit-mass box evaluated at displacement `offset`
/// from the box center.
pub fn box_average_grad(kind: KernelKind, offset: &[f64], h: &[f64]) -> Option<Vec<f64>> {
    match (kind, offset.len()) {
        (KernelKind::Log2D, 1) => {
            let (a, b) = (offset[0] - 0.5 * h[0], offset[0] + 0.5 * h[0]);
            // d/dx ∫_{x-b}^{x-a}... = −ln|b| + ln|a| after the change of variables
            let la = if a == 0.0 { 0.0 } else { a.abs().ln() };
            let lb = if b == 0.0 { 0.0 } else { b.abs().ln() };
            if a == 0.0 || b == 0.0 {
                return None;
            }
            Some(vec![(la - lb) / h[0]])
        }
        (KernelKind::Log2D, 2) => {
            let (x0, x1) = (offset[0] - 0.5 * h[0], offset[0] + 0.5 * h[0]);
            let (y0, y1) = (offset[1] - 0.5 * h[1], offset[1] + 0.5 * h[1]);
            let gx = anti_log_2d_dx(x1, y1) - anti_log_2d_dx(x0, y1) - anti_log_2d_dx(x1, y0) + anti_log_2d_dx(x0, y0);
            let gy = anti_log_2d_dx(y1, x1) - anti_log_2d_dx(y0, x1) - anti_log_2d_dx(y1, x0) + anti_log_2d_dx(y0, x0);
            // d/dx of ∬_{box} ln|s| over box shifted by x equals the x-antiderivative difference
            let area = h[0] * h[1];
            Some(vec![-0.5 * gx / area, -0.5 * gy / area])
        }
        _ => None,
    }
}
