//! Lower envelopes of quadratic cones: for lattices A and B,
//! f(b) = min_a [v(a) + ½|x_a − y_b|²], with the minimizing a.
//!
//! Separable passes along each axis, each a 1D envelope of parabolas.

use crate::measure::{DiscreteMeasure, GridSpec};

/// Axis coordinates of a tensor lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub axes: Vec<Vec<f64>>,
}

impl Lattice {
    pub fn from_grid(spec: &GridSpec) -> Self {
        Lattice {
            axes: (0..spec.dim())
                .map(|k| (0..spec.shape[k]).map(|i| spec.origin[k] + (i as f64 + 0.5) * spec.spacing[k]).collect())
                .collect(),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(|a| a.len()).collect()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut rem = flat;
        let mut p = vec![0.0; self.axes.len()];
        for k in (0..self.axes.len()).rev() {
            let n = self.axes[k].len();
            p[k] = self.axes[k][rem % n];
            rem /= n;
        }
        p
    }

    /// The lattice spanned by the distinct atom coordinates, with each atom's
    /// flat index, when the atoms sit on a tensor product of sorted axes.
    pub fn detect(mu: &DiscreteMeasure) -> Option<(Lattice, Vec<usize>)> {
        let d = mu.dim();
        let mut axes = Vec::with_capacity(d);
        for k in 0..d {
            let mut vals: Vec<f64> = mu.points().map(|p| p[k]).collect();
            vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
            vals.dedup();
            axes.push(vals);
        }
        let lattice = Lattice { axes };
        // a sparse subset of a huge product is not worth an envelope pass
        if lattice.len() > 16 * mu.len() + 1024 {
            return None;
        }
        let mut index = Vec::with_capacity(mu.len());
        for p in mu.points() {
            let mut flat = 0;
            for k in 0..d {
                let a = &lattice.axes[k];
                let i = a.binary_search_by(|v| v.partial_cmp(&p[k]).unwrap()).ok()?;
                flat = flat * a.len() + i;
            }
            index.push(flat);
        }
        Some((lattice, index))
    }
}

/// 1D envelope of parabolas v_k + ½(q − p_k)² with increasing centers p,
/// evaluated at increasing queries. Infinite values are ignored.
fn envelope_1d(centers: &[f64], values: &[f64], queries: &[f64], out: &mut [(f64, usize)]) {
    let mut hull: Vec<usize> = Vec::with_capacity(centers.len());
    let mut bounds: Vec<f64> = Vec::with_capacity(centers.len() + 1);
    let key = |k: usize| values[k] + 0.5 * centers[k] * centers[k];
    for k in 0..centers.len() {
        if !values[k].is_finite() {
            continue;
        }
        loop {
            match hull.last() {
                None => {
                    hull.push(k);
                    bounds.clear();
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&top) => {
                    let s = (key(k) - key(top)) / (centers[k] - centers[top]);
                    if s <= *bounds.last().unwrap() {
                        hull.pop();
                        bounds.pop();
                        if hull.is_empty() {
                            continue;
                        }
                    } else {
                        hull.push(k);
                        bounds.push(s);
                        break;
                    }
                }
            }
        }
    }
    if hull.is_empty() {
        out.iter_mut().for_each(|o| *o = (f64::INFINITY, usize::MAX));
        return;
    }
    let mut h = 0;
    for (q, o) in queries.iter().zip(out.iter_mut()) {
        while h + 1 < hull.len() && bounds[h + 1] < *q {
            h += 1;
        }
        let k = hull[h];
        *o = (values[k] + 0.5 * (q - centers[k]).powi(2), k);
    }
}

/// For every point of lattice `b`, the minimum over lattice `a` of
/// v(a) + ½|x_a − y_b|² and the flat index of a minimizer.
pub fn min_plus_quadratic(a: &Lattice, values: &[f64], b: &Lattice) -> Vec<(f64, usize)> {
    let d = a.axes.len();
    assert_eq!(values.len(), a.len());
    assert_eq!(b.axes.len(), d);
    // current array shape: a-axes for k < axis, b-axes for k ≥ axis (processed from the back)
    let mut shape = a.shape();
    let mut cur: Vec<f64> = values.to_vec();
    let mut stage_args: Vec<Vec<usize>> = vec![Vec::new(); d];
    let mut stage_shapes: Vec<Vec<usize>> = vec![Vec::new(); d];
    for axis in (0..d).rev() {
        let na = a.axes[axis].len();
        let nb = b.axes[axis].len();
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut next = vec![f64::INFINITY; outer * nb * inner];
        let mut args = vec![usize::MAX; outer * nb * inner];
        let mut line = vec![0.0; na];
        let mut res = vec![(0.0, 0usize); nb];
        for o in 0..outer {
            for i in 0..inner {
                for (k, l) in line.iter_mut().enumerate() {
                    *l = cur[(o * na + k) * inner + i];
                }
                envelope_1d(&a.axes[axis], &line, &b.axes[axis], &mut res);
                for (k, &(v, arg)) in res.iter().enumerate() {
                    next[(o * nb + k) * inner + i] = v;
                    args[(o * nb + k) * inner + i] = arg;
                }
            }
        }
        shape[axis] = nb;
        stage_args[axis] = args;
        stage_shapes[axis] = shape.clone();
        cur = next;
    }
    // backtrack: cur is indexed by b; recover the a index axis by axis from the front
    let b_shape = b.shape();
    let a_shape = a.shape();
    (0..cur.len())
        .map(|flat_b| {
            if !cur[flat_b].is_finite() {
                return (f64::INFINITY, usize::MAX);
            }
            let mut idx = vec![0usize; d];
            let mut rem = flat_b;
            for k in (0..d).rev() {
                idx[k] = rem % b_shape[k];
                rem /= b_shape[k];
            }
            // mixed index: a for axes < axis, b for axes ≥ axis, at stage `axis`
            for axis in 0..d {
                let sh = &stage_shapes[axis];
                let pos = idx.iter().zip(sh).fold(0, |acc, (&i, &n)| acc * n + i);
                idx[axis] = stage_args[axis][pos];
            }
            let flat_a = idx.iter().zip(&a_shape).fold(0, |acc, (&i, &n)| acc * n + i);
            (cur[flat_b], flat_a)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(a: &Lattice, values: &[f64], b: &Lattice) -> Vec<f64> {
        (0..b.len())
            .map(|j| {
                let y = b.point(j);
                (0..a.len())
                    .map(|i| {
                        let x = a.point(i);
                        values[i] + 0.5 * x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .collect()
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for dim in 1..=3 {
            let a = Lattice { axes: (0..dim).map(|k| (0..7 - k).map(|i| -1.0 + 0.3 * i as f64).collect()).collect() };
            let b = Lattice { axes: (0..dim).map(|_| (0..5).map(|i| -1.3 + 0.61 * i as f64).collect()).collect() };
            let values: Vec<f64> = (0..a.len())
                .map(|_| if rng.gen::<f64>() < 0.3 { f64::INFINITY } else { rng.gen_range(-1.0..1.0) })
                .collect();
            let fast = min_plus_quadratic(&a, &values, &b);
            let slow = brute(&a, &values, &b);
            for (j, ((v, arg), s)) in fast.iter().zip(&slow).enumerate() {
                assert!((v - s).abs() < 1e-12, "dim {dim}: {v} vs {s}");
                let x = a.point(*arg);
                let y = b.point(j);
                let direct = values[*arg] + 0.5 * x.iter().zip(&y).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
                assert!((direct - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn detects_refined_lattices() {
        let spec = GridSpec::centered_cube(2, 1.0, 8).unwrap();
        let rho =
            crate::measure::GridDensity::uniform_ball(spec, &crate::measure::Ball::centered(2, 0.7).unwrap()).unwrap();
        let mu = rho.to_discrete_refined(2).unwrap();
        let (lat, idx) = Lattice::detect(&mu).unwrap();
        for (j, &flat) in idx.iter().enumerate() {
            assert_eq!(lat.point(flat), mu.point(j).to_vec());
        }
    }
}
