//! Gaussians with rank-one-plus-diagonal precision.
//!
//! The precision is `C⁻¹ = D + u uᵀ` with `D = diag(d)`, `d > 0`. With
//! `s = uᵀD⁻¹u` and `η = 1 / (1 + s)` the covariance, its log-determinant and
//! trace follow from the matrix inversion lemma:
//!
//! ```text
//! C      = D⁻¹ − η D⁻¹u uᵀD⁻¹
//! log|C| = log η − Σ log dᵢ
//! Tr C   = Σ 1/dᵢ − η Σ (uᵢ/dᵢ)²
//! ```
//!
//! A square-root factor is `R = D^{-1/2} (I − γ a aᵀ)` with `a = D^{-1/2} u`
//! and `γ = (1 − √η)/s`. We evaluate `γ` as `η / (1 + √η)`, which is the same
//! number but stays finite as `u → 0` (where it tends to ½ and the rank-one
//! term vanishes with `a`). Every operation here is O(K).

use crate::error::{check_dim, Error, Result};
use crate::numcore::{dot, Matrix, LN_2PI};

/// N(μ, (D + uuᵀ)⁻¹).
#[derive(Debug, Clone, PartialEq)]
pub struct RankOneGaussian {
    mu: Vec<f64>,
    d: Vec<f64>,
    u: Vec<f64>,
    /// uᵀD⁻¹u
    s: f64,
    eta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovStats {
    pub trace: f64,
    pub logdet: f64,
}

/// Gradients of [`RankOneGaussian::kl_std_normal`].
#[derive(Debug, Clone, PartialEq)]
pub struct KlGradients {
    pub d_mu: Vec<f64>,
    pub d_d: Vec<f64>,
    pub d_u: Vec<f64>,
}

impl RankOneGaussian {
    pub fn new(mu: Vec<f64>, d: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let k = mu.len();
        check_dim("RankOneGaussian d", k, d.len())?;
        check_dim("RankOneGaussian u", k, u.len())?;
        if let Some(bad) = d.iter().find(|&&x| !(x > 0.0) || !x.is_finite()) {
            return Err(Error::Domain(format!("precision diagonal entry {bad} must be > 0")));
        }
        if mu.iter().chain(&u).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("RankOneGaussian parameters".into()));
        }
        let s: f64 = u.iter().zip(&d).map(|(ui, di)| ui * ui / di).sum();
        let eta = 1.0 / (1.0 + s);
        Ok(RankOneGaussian { mu, d, u, s, eta })
    }

    /// Parameterization used by the recognition heads: `d = exp(log_d)`.
    pub fn from_log_d(mu: Vec<f64>, log_d: &[f64], u: Vec<f64>) -> Result<Self> {
        RankOneGaussian::new(mu, log_d.iter().map(|x| x.exp()).collect(), u)
    }

    /// Diagonal Gaussian with per-coordinate standard deviations.
    pub fn diagonal_from_std(mu: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        check_dim("RankOneGaussian sigma", mu.len(), sigma.len())?;
        let d = sigma.iter().map(|s| 1.0 / (s * s)).collect();
        let k = mu.len();
        RankOneGaussian::new(mu, d, vec![0.0; k])
    }

    pub fn standard(k: usize) -> Self {
        RankOneGaussian::new(vec![0.0; k], vec![1.0; k], vec![0.0; k]).expect("valid")
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn d(&self) -> &[f64] {
        &self.d
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    fn gamma(&self) -> f64 {
        self.eta / (1.0 + self.eta.sqrt())
    }

    pub fn cov_stats(&self) -> CovStats {
        let mut inv_sum = 0.0;
        let mut q = 0.0;
        let mut log_d = 0.0;
        for (&di, &ui) in self.d.iter().zip(&self.u) {
            inv_sum += 1.0 / di;
            let r = ui / di;
            q += r * r;
            log_d += di.ln();
        }
        CovStats {
            trace: inv_sum - self.eta * q,
            logdet: self.eta.ln() - log_d,
        }
    }

    /// `R · eps` without forming `R`.
    pub fn factor_apply(&self, eps: &[f64]) -> Result<Vec<f64>> {
        check_dim("factor_apply", self.dim(), eps.len())?;
        let mut out = vec![0.0; eps.len()];
        self.factor_apply_into(eps, &mut out);
        Ok(out)
    }

    pub(crate) fn factor_apply_into(&self, eps: &[f64], out: &mut [f64]) {
        let gamma = self.gamma();
        // t = aᵀ eps with aᵢ = uᵢ/√dᵢ
        let t: f64 = self
            .u
            .iter()
            .zip(&self.d)
            .zip(eps)
            .map(|((u, d), e)| u / d.sqrt() * e)
            .sum();
        let gt = gamma * t;
        for i in 0..eps.len() {
            let w = 1.0 / self.d[i].sqrt();
            out[i] = w * (eps[i] - gt * self.u[i] * w);
        }
    }

    /// `μ + R · eps`.
    pub fn sample(&self, eps: &[f64]) -> Result<Vec<f64>> {
        let mut x = self.factor_apply(eps)?;
        for (xi, m) in x.iter_mut().zip(&self.mu) {
            *xi += m;
        }
        Ok(x)
    }

    /// Pulls an upstream gradient `g = ∂L/∂(R·eps)` back onto `(d, u)`.
    ///
    /// Returns `(∂L/∂d, ∂L/∂u)` accumulated through the closed-form factor.
    pub fn factor_vjp(&self, eps: &[f64], upstream: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let k = self.dim();
        let w: Vec<f64> = self.d.iter().map(|d| 1.0 / d.sqrt()).collect();
        let a: Vec<f64> = self.u.iter().zip(&w).map(|(u, w)| u * w).collect();
        let gamma = self.gamma();
        let t = dot(&a, eps);
        let h: Vec<f64> = upstream.iter().zip(&w).map(|(g, w)| g * w).collect();
        let h_a = dot(&h, &a);

        let dl_dgamma = -t * h_a;
        let dl_dt = -gamma * h_a;
        let r = self.eta.sqrt();
        let dgamma_ds = -0.5 * r.powi(4) * (r + 2.0) / ((1.0 + r) * (1.0 + r));

        let mut grad_d = vec![0.0; k];
        let mut grad_u = vec![0.0; k];
        for i in 0..k {
            let z = eps[i] - gamma * a[i] * t;
            let dl_da = -gamma * t * h[i] + dl_dt * eps[i] + dl_dgamma * dgamma_ds * 2.0 * a[i];
            let dl_dw = upstream[i] * z + dl_da * self.u[i];
            grad_u[i] = dl_da * w[i];
            grad_d[i] = -0.5 * dl_dw * w[i] / self.d[i];
        }
        (grad_d, grad_u)
    }

    /// KL(N(μ, C) ‖ N(0, I)) = ½ [Tr C − log|C| + μᵀμ − K].
    pub fn kl_std_normal(&self) -> f64 {
        let st = self.cov_stats();
        0.5 * (st.trace - st.logdet + dot(&self.mu, &self.mu) - self.dim() as f64)
    }

    pub fn kl_gradients(&self) -> KlGradients {
        let eta = self.eta;
        let q: f64 = self.u.iter().zip(&self.d).map(|(u, d)| (u / d) * (u / d)).sum();
        let mut d_d = Vec::with_capacity(self.dim());
        let mut d_u = Vec::with_capacity(self.dim());
        for (&di, &ui) in self.d.iter().zip(&self.u) {
            let u2 = ui * ui;
            let d2 = di * di;
            d_u.push(eta * eta * q * ui / di - eta * ui / d2 + eta * ui / di);
            d_d.push(
                0.5 * (-1.0 / d2 - eta * eta * q * u2 / d2 + 2.0 * eta * u2 / (d2 * di) - eta * u2 / d2 + 1.0 / di),
            );
        }
        KlGradients {
            d_mu: self.mu.clone(),
            d_d,
            d_u,
        }
    }

    /// log N(x | μ, C), using the precision directly.
    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_dim("log_density", self.dim(), x.len())?;
        let mut quad = 0.0;
        let mut proj = 0.0;
        for i in 0..x.len() {
            let r = x[i] - self.mu[i];
            quad += self.d[i] * r * r;
            proj += self.u[i] * r;
        }
        quad += proj * proj;
        let logdet = self.cov_stats().logdet;
        Ok(-0.5 * (self.dim() as f64 * LN_2PI + logdet + quad))
    }

    /// Dense `C`, O(K²). For reporting and tests.
    pub fn dense_covariance(&self) -> Matrix {
        let k = self.dim();
        Matrix::from_fn(k, k, |i, j| {
            let diag = if i == j { 1.0 / self.d[i] } else { 0.0 };
            diag - self.eta * self.u[i] / self.d[i] * self.u[j] / self.d[j]
        })
    }

    /// Dense precision `D + uuᵀ`, O(K²).
    pub fn dense_precision(&self) -> Matrix {
        let k = self.dim();
        Matrix::from_fn(k, k, |i, j| {
            let diag = if i == j { self.d[i] } else { 0.0 };
            diag + self.u[i] * self.u[j]
        })
    }

    /// Weighted norm `uᵀD⁻¹u`.
    pub fn rank_one_weight(&self) -> f64 {
        self.s
    }
}
