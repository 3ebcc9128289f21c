//! Affine maps and elementwise nonlinearities shared by both networks.

use serde::{Deserialize, Serialize};

use crate::numcore::{Matrix, RngStream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    /// max(0, x); derivative at 0 is taken as 0.
    Rectifier,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Rectifier => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y = f(x)`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Rectifier => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }

    pub fn apply_all(self, xs: &[f64]) -> Vec<f64> {
        xs.iter().map(|&x| self.apply(x)).collect()
    }
}

/// `y = W x + b` with `W` of shape (out × in) and `b` stored as an (out × 1) column.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub w: Matrix,
    pub b: Matrix,
}

impl Affine {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Affine {
            w: Matrix::zeros(out_dim, in_dim),
            b: Matrix::zeros(out_dim, 1),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.out_dim()];
        self.w.matvec_into(x, &mut y);
        for (yi, bi) in y.iter_mut().zip(self.b.data()) {
            *yi += bi;
        }
        y
    }

    /// Accumulates `∂L/∂W += gy xᵀ`, `∂L/∂b += gy` into `grad` and returns `∂L/∂x`.
    pub fn backward(&self, x: &[f64], gy: &[f64], grad: &mut Affine, want_input_grad: bool) -> Vec<f64> {
        grad.w.add_outer(1.0, gy, x);
        for (gb, g) in grad.b.data_mut().iter_mut().zip(gy) {
            *gb += g;
        }
        let mut gx = vec![0.0; if want_input_grad { self.in_dim() } else { 0 }];
        if want_input_grad {
            self.w.matvec_t_acc(gy, &mut gx);
        }
        gx
    }

    /// Weights ~ N(0, σ²), biases 0.
    pub fn init(&mut self, sigma: f64, stream: &mut RngStream) {
        for w in self.w.data_mut() {
            *w = sigma * stream.normal();
        }
        self.b.fill(0.0);
    }
}
