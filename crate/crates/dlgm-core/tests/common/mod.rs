//! Small models with closed-form or enumerable answers, shared by the
//! integration tests.

#![allow(dead_code)]

use dlgm::generative::{GenLayer, ObservationLikelihood};
use dlgm::numcore::LN_2PI;
use dlgm::recognition::PosteriorSampler;
use dlgm::{
    Activation, CovarianceMode, Dlgm, GenerativeParams, LayerSpec, Matrix, ObservationFamily, RankOneGaussian,
    RecognitionParams, RngStream,
};

/// `v = w cᵀ ξ + N(0, noise·I)` with a 2-D standard normal ξ and 3 pixels.
pub struct LinearGaussian {
    pub w: [f64; 3],
    pub c: [f64; 2],
    pub noise: f64,
}

pub const LINEAR: LinearGaussian = LinearGaussian {
    w: [1.0, -0.5, 2.0],
    c: [0.8, 0.3],
    noise: 0.5,
};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LinearGaussian {
    pub fn generative(&self) -> GenerativeParams {
        let mut gen = GenerativeParams::new(
            vec![
                LayerSpec::stochastic(2),
                LayerSpec::deterministic(2, 3, Activation::Identity),
            ],
            ObservationFamily::GaussianDiagonal,
            1.0,
        )
        .unwrap();
        gen.layers[0] = GenLayer::Stochastic {
            g: Matrix::identity(2),
            diagonal: false,
        };
        if let GenLayer::Deterministic { affine, .. } = &mut gen.layers[1] {
            affine.w = Matrix::from_fn(3, 2, |i, j| self.w[i] * self.c[j]);
        }
        gen.obs = ObservationLikelihood::gaussian_from_variance(&[self.noise; 3]).unwrap();
        gen
    }

    /// Rank-one vector of the posterior precision `I + uuᵀ`.
    fn posterior_u(&self) -> Vec<f64> {
        let s = (dot(&self.w, &self.w) / self.noise).sqrt();
        self.c.iter().map(|c| c * s).collect()
    }

    /// Linear map from `v` to the posterior mean.
    fn mean_map(&self) -> Matrix {
        let u = self.posterior_u();
        let uu = dot(&u, &u);
        // (I − uuᵀ/(1 + uᵀu)) c, then scaled by wᵀv/σ².
        let uc = dot(&u, &self.c);
        let mc: Vec<f64> = self.c.iter().zip(&u).map(|(c, u)| c - u * uc / (1.0 + uu)).collect();
        Matrix::from_fn(2, 3, |i, j| mc[i] * self.w[j] / self.noise)
    }

    pub fn exact_posterior(&self, v: &[f64]) -> RankOneGaussian {
        let mu = self.mean_map().matvec(v).unwrap();
        RankOneGaussian::new(mu, vec![1.0, 1.0], self.posterior_u()).unwrap()
    }

    /// A full model whose recognition network outputs the exact posterior.
    pub fn exact_model(&self) -> Dlgm {
        let mut rec = RecognitionParams::new(3, &[], &[2], Activation::Identity, CovarianceMode::RankOne).unwrap();
        let head = &mut rec.heads[0];
        head.mu.w = self.mean_map();
        let u = head.u.as_mut().expect("rank-one head");
        u.b = Matrix::new(2, 1, self.posterior_u()).unwrap();
        Dlgm::from_parts(self.generative(), rec).unwrap()
    }

    /// `log N(v | 0, (cᵀc) w wᵀ + σ² I)` by the matrix determinant lemma.
    pub fn log_marginal(&self, v: &[f64]) -> f64 {
        let a = dot(&self.c, &self.c);
        let ww = dot(&self.w, &self.w);
        let wv = dot(&self.w, v);
        let s2 = self.noise;
        let n = v.len() as f64;
        let r = 1.0 + a * ww / s2;
        let logdet = n * s2.ln() + r.ln();
        let quad = dot(v, v) / s2 - a * wv * wv / (s2 * s2 * r);
        -0.5 * (n * LN_2PI + logdet + quad)
    }
}

/// Three Bernoulli pixels driven by one standard-normal latent through a
/// small tanh network; every quantity can be integrated on a fine grid.
pub struct ThreePixel {
    pub w1: [f64; 4],
    pub b1: [f64; 4],
    pub w2: [[f64; 4]; 3],
    pub b2: [f64; 3],
}

pub const THREE_PIXEL: ThreePixel = ThreePixel {
    w1: [1.5, -1.0, 0.7, 2.0],
    b1: [0.2, 0.5, -0.3, 0.0],
    w2: [[2.0, -1.0, 0.5, 1.0], [-1.5, 2.0, 1.0, -0.5], [0.5, 0.5, -2.0, 1.5]],
    b2: [0.1, -0.2, 0.3],
};

/// Integration range and resolution for the latent.
const GRID_LO: f64 = -12.0;
const GRID_HI: f64 = 12.0;
const GRID_N: usize = 24_001;

pub fn all_binary(n: usize) -> Vec<Vec<f64>> {
    (0..1usize << n)
        .map(|m| (0..n).map(|i| ((m >> i) & 1) as f64).collect())
        .collect()
}

fn code(v: &[f64]) -> usize {
    v.iter().enumerate().map(|(i, &x)| (x as usize) << i).sum()
}

impl ThreePixel {
    pub fn generative(&self) -> GenerativeParams {
        let mut gen = GenerativeParams::new(
            vec![
                LayerSpec::stochastic(1),
                LayerSpec::deterministic(1, 4, Activation::Identity),
                LayerSpec::deterministic(4, 3, Activation::Tanh),
            ],
            ObservationFamily::BernoulliLogits,
            1.0,
        )
        .unwrap();
        gen.layers[0] = GenLayer::Stochastic {
            g: Matrix::identity(1),
            diagonal: false,
        };
        if let GenLayer::Deterministic { affine, .. } = &mut gen.layers[1] {
            affine.w = Matrix::new(4, 1, self.w1.to_vec()).unwrap();
            affine.b = Matrix::new(4, 1, self.b1.to_vec()).unwrap();
        }
        if let GenLayer::Deterministic { affine, .. } = &mut gen.layers[2] {
            affine.w = Matrix::from_fn(3, 4, |i, j| self.w2[i][j]);
            affine.b = Matrix::new(3, 1, self.b2.to_vec()).unwrap();
        }
        gen
    }

    /// `log p(v | ξ)` computed directly from the weights.
    pub fn log_lik(&self, v: &[f64], xi: f64) -> f64 {
        let h: Vec<f64> = (0..4).map(|j| (self.w1[j] * xi + self.b1[j]).tanh()).collect();
        (0..3)
            .map(|i| {
                let a = self.b2[i] + dot(&self.w2[i], &h);
                // log σ(a) = −log(1 + e^{−a}); log(1 − σ(a)) = −log(1 + e^{a})
                let s = if v[i] == 1.0 { -a } else { a };
                -(s.max(0.0) + (-s.abs()).exp().ln_1p())
            })
            .sum()
    }

    fn grid_point(k: usize) -> f64 {
        GRID_LO + (GRID_HI - GRID_LO) * k as f64 / (GRID_N - 1) as f64
    }

    /// `log p(v | ξ) + log N(ξ)` at every grid point.
    fn log_joint_grid(&self, v: &[f64]) -> Vec<f64> {
        (0..GRID_N)
            .map(|k| {
                let x = Self::grid_point(k);
                self.log_lik(v, x) - 0.5 * (x * x + LN_2PI)
            })
            .collect()
    }

    /// `log p(v)` by Simpson's rule over the latent.
    pub fn log_marginal(&self, v: &[f64]) -> f64 {
        let lj = self.log_joint_grid(v);
        let peak = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let h = (GRID_HI - GRID_LO) / (GRID_N - 1) as f64;
        let s: f64 = lj
            .iter()
            .enumerate()
            .map(|(k, &l)| {
                let wt = if k == 0 || k == GRID_N - 1 {
                    1.0
                } else if k % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                wt * (l - peak).exp()
            })
            .sum();
        peak + (s * h / 3.0).ln()
    }

    /// Posterior mean and standard deviation of ξ given `v`.
    pub fn posterior_moments(&self, v: &[f64]) -> (f64, f64) {
        let lj = self.log_joint_grid(v);
        let peak = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
        for (k, &l) in lj.iter().enumerate() {
            let x = Self::grid_point(k);
            let p = (l - peak).exp();
            z += p;
            m1 += p * x;
            m2 += p * x * x;
        }
        let mean = m1 / z;
        (mean, (m2 / z - mean * mean).sqrt())
    }

    /// `p(v_missing | v_observed)` over all completions, indexed by the
    /// binary code of the missing pixels in increasing pixel order.
    pub fn conditional(&self, v: &[f64], observed: &[bool]) -> Vec<f64> {
        let missing: Vec<usize> = (0..3).filter(|&i| !observed[i]).collect();
        let logs: Vec<f64> = all_binary(missing.len())
            .iter()
            .map(|fill| {
                let mut full = v.to_vec();
                for (&i, &x) in missing.iter().zip(fill) {
                    full[i] = x;
                }
                self.log_marginal(&full)
            })
            .collect();
        let peak = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logs.iter().map(|l| (l - peak).exp()).sum();
        logs.iter().map(|l| (l - peak).exp() / z).collect()
    }

    /// Draws from the exact posterior by inverting its CDF on the grid.
    pub fn exact_sampler(&self) -> GridPosterior {
        let cdfs = all_binary(3)
            .iter()
            .map(|v| {
                let lj = self.log_joint_grid(v);
                let peak = lj.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut acc = 0.0;
                let mut cdf: Vec<f64> = lj
                    .iter()
                    .map(|l| {
                        acc += (l - peak).exp();
                        acc
                    })
                    .collect();
                cdf.iter_mut().for_each(|c| *c /= acc);
                cdf
            })
            .collect();
        GridPosterior { cdfs }
    }
}

pub struct GridPosterior {
    cdfs: Vec<Vec<f64>>,
}

impl PosteriorSampler for GridPosterior {
    fn sample_latents(&self, v: &[f64], stream: &mut RngStream) -> dlgm::Result<Vec<Vec<f64>>> {
        let cdf = &self.cdfs[code(v)];
        let u = stream.uniform();
        let k = cdf.partition_point(|&c| c < u).min(GRID_N - 1);
        let h = (GRID_HI - GRID_LO) / (GRID_N - 1) as f64;
        let x = ThreePixel::grid_point(k) + h * (stream.uniform() - 0.5);
        Ok(vec![vec![x]])
    }
}
