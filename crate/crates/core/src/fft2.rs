//! Unnormalised two-dimensional FFT on row-major complex arrays.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Forward and inverse plans for an `m x n` array.
#[derive(Clone)]
pub(crate) struct Fft2 {
    m: usize,
    n: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.m, self.n)
    }
}

impl Fft2 {
    pub(crate) fn new(m: usize, n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m,
            n,
            row_fwd: planner.plan_fft_forward(n),
            row_inv: planner.plan_fft_inverse(n),
            col_fwd: planner.plan_fft_forward(m),
            col_inv: planner.plan_fft_inverse(m),
        }
    }

    /// In-place transform with kernel `exp(-2 pi i ...)`, or its conjugate
    /// when `inverse`. No scaling is applied in either direction.
    pub(crate) fn transform(&self, a: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(a.dim(), (self.m, self.n));
        let (row, col) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let data = a.as_slice_mut().expect("standard layout");
        row.process(data);
        let mut buf = vec![Complex64::new(0.0, 0.0); self.m];
        for j in 0..self.n {
            for i in 0..self.m {
                buf[i] = data[i * self.n + j];
            }
            col.process(&mut buf);
            for i in 0..self.m {
                data[i * self.n + j] = buf[i];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_direct_dft() {
        let (m, n) = (4, 8);
        let a = Array2::from_shape_fn((m, n), |(i, j)| {
            Complex64::new((i * 3 + j) as f64 * 0.1, (i as f64 - j as f64) * 0.05)
        });
        let mut b = a.clone();
        Fft2::new(m, n).transform(&mut b, false);
        for k in 0..m {
            for l in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for i in 0..m {
                    for j in 0..n {
                        let ang = -2.0
                            * std::f64::consts::PI
                            * ((k * i) as f64 / m as f64 + (l * j) as f64 / n as f64);
                        s += a[[i, j]] * Complex64::from_polar(1.0, ang);
                    }
                }
                assert!((s - b[[k, l]]).norm() < 1e-12);
            }
        }
        Fft2::new(m, n).transform(&mut b, true);
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x * (m * n) as f64 - y).norm() < 1e-12);
        }
    }
}
