use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse plans for every axis of an n-dimensional array
/// stored with the last axis varying fastest.
pub(crate) struct NdFft {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl NdFft {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        NdFft {
            shape: shape.to_vec(),
            forward: shape.iter().map(|&n| planner.plan_fft_forward(n)).collect(),
            inverse: shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn forward(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.forward);
    }

    /// Unnormalized inverse transform.
    pub fn inverse(&self, data: &mut [Complex<f64>]) {
        self.run(data, &self.inverse);
    }

    fn run(&self, data: &mut [Complex<f64>], plans: &[Arc<dyn Fft<f64>>]) {
        let total = self.len();
        debug_assert_eq!(data.len(), total);
        let mut stride = total;
        for (axis, plan) in plans.iter().enumerate() {
            let n = self.shape[axis];
            stride /= n;
            if stride == 1 {
                plan.process(data);
                continue;
            }
            let mut line = vec![Complex::new(0.0, 0.0); n];
            let block = n * stride;
            for start in (0..total).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (k, v) in line.iter_mut().enumerate() {
                        *v = data[base + k * stride];
                    }
                    plan.process(&mut line);
                    for (k, v) in line.iter().enumerate() {
                        data[base + k * stride] = *v;
                    }
                }
            }
        }
    }
}
