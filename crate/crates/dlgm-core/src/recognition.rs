//! The recognition network q(ξ | v).
//!
//! A stack of encoder layers `z = f(W z_prev + b)` feeds one set of linear
//! heads per stochastic layer, producing the mean, log-precision diagonal and
//! (in rank-one mode) the rank-one direction of that layer's Gaussian.

use serde::{Deserialize, Serialize};

use crate::covariance::{KlGradients, RankOneGaussian};
use crate::error::{check_dim, Error, Result};
use crate::layer::{Activation, Affine};
use crate::numcore::{Matrix, RngStream};
use crate::params::Parameterized;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceMode {
    Diagonal,
    RankOne,
}

impl std::fmt::Display for CovarianceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceMode::Diagonal => "diagonal",
            CovarianceMode::RankOne => "rank-one",
        })
    }
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diagonal" => Ok(CovarianceMode::Diagonal),
            "rank-one" | "rank1" => Ok(CovarianceMode::RankOne),
            _ => Err(Error::InvalidArgument(format!("unknown covariance mode {s:?}"))),
        }
    }
}

/// Heads for one stochastic layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Head {
    pub mu: Affine,
    pub log_d: Affine,
    /// Present only in rank-one mode.
    pub u: Option<Affine>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecognitionParams {
    pub encoder: Vec<Affine>,
    pub heads: Vec<Head>,
    pub activation: Activation,
    mode: CovarianceMode,
    input_dim: usize,
}

/// Intermediate values of one encoder pass, kept for reverse accumulation.
#[derive(Debug, Clone)]
pub struct EncoderTrace {
    /// Encoder layer inputs followed by the final feature vector `z`.
    z: Vec<Vec<f64>>,
    /// Pre-activations of each encoder layer.
    pre: Vec<Vec<f64>>,
    pub posteriors: Vec<RankOneGaussian>,
}

impl RecognitionParams {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        latent_dims: &[usize],
        activation: Activation,
        mode: CovarianceMode,
    ) -> Result<Self> {
        if input_dim == 0 || latent_dims.is_empty() || hidden.contains(&0) || latent_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "recognition model needs non-empty layers".into(),
            ));
        }
        let mut width = input_dim;
        let mut encoder = Vec::with_capacity(hidden.len());
        for &h in hidden {
            encoder.push(Affine::zeros(width, h));
            width = h;
        }
        let heads = latent_dims
            .iter()
            .map(|&k| Head {
                mu: Affine::zeros(width, k),
                log_d: Affine::zeros(width, k),
                u: (mode == CovarianceMode::RankOne).then(|| Affine::zeros(width, k)),
            })
            .collect();
        Ok(RecognitionParams {
            encoder,
            heads,
            activation,
            mode,
            input_dim,
        })
    }

    pub fn mode(&self) -> CovarianceMode {
        self.mode
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dims(&self) -> Vec<usize> {
        self.encoder.iter().map(Affine::out_dim).collect()
    }

    pub fn latent_dims(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.mu.out_dim()).collect()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_params_mut(&mut |_, m| m.fill(0.0));
        z
    }

    /// Weights ~ N(0, σ²), biases 0.
    pub fn init(&mut self, sigma: f64, stream: &mut RngStream) {
        for a in &mut self.encoder {
            a.init(sigma, stream);
        }
        for h in &mut self.heads {
            h.mu.init(sigma, stream);
            h.log_d.init(sigma, stream);
            if let Some(u) = &mut h.u {
                u.init(sigma, stream);
            }
        }
    }

    pub fn encode(&self, v: &[f64]) -> Result<Vec<RankOneGaussian>> {
        Ok(self.encode_traced(v)?.posteriors)
    }

    pub fn encode_traced(&self, v: &[f64]) -> Result<EncoderTrace> {
        check_dim("encode input", self.input_dim, v.len())?;
        let mut z = Vec::with_capacity(self.encoder.len() + 1);
        let mut pre = Vec::with_capacity(self.encoder.len());
        z.push(v.to_vec());
        for layer in &self.encoder {
            let a = layer.forward(z.last().expect("non-empty"));
            z.push(self.activation.apply_all(&a));
            pre.push(a);
        }
        let feat = z.last().expect("non-empty");
        let posteriors = self
            .heads
            .iter()
            .map(|h| {
                let mu = h.mu.forward(feat);
                let log_d = h.log_d.forward(feat);
                let u = match &h.u {
                    Some(u) => u.forward(feat),
                    None => vec![0.0; mu.len()],
                };
                RankOneGaussian::from_log_d(mu, &log_d, u)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EncoderTrace { z, pre, posteriors })
    }

    /// Pushes per-layer gradients w.r.t. (μ, d, u) back to the parameters,
    /// accumulating into `grad`. The u-gradient is ignored in diagonal mode.
    pub(crate) fn backward(&self, trace: &EncoderTrace, upstream: &[KlGradients], grad: &mut RecognitionParams) {
        let feat = trace.z.last().expect("non-empty");
        let mut g_feat = vec![0.0; feat.len()];
        for (l, ((head, ghead), up)) in self.heads.iter().zip(&mut grad.heads).zip(upstream).enumerate() {
            let d = trace.posteriors[l].d();
            let g_logd: Vec<f64> = up.d_d.iter().zip(d).map(|(g, di)| g * di).collect();
            let gf = head.mu.backward(feat, &up.d_mu, &mut ghead.mu, true);
            add_into(&mut g_feat, &gf);
            let gf = head.log_d.backward(feat, &g_logd, &mut ghead.log_d, true);
            add_into(&mut g_feat, &gf);
            if let (Some(u), Some(gu)) = (&head.u, &mut ghead.u) {
                let gf = u.backward(feat, &up.d_u, gu, true);
                add_into(&mut g_feat, &gf);
            }
        }
        let mut gy = g_feat;
        for i in (0..self.encoder.len()).rev() {
            let out = &trace.z[i + 1];
            let a = &trace.pre[i];
            for k in 0..gy.len() {
                gy[k] *= self.activation.derivative(a[k], out[k]);
            }
            gy = self.encoder[i].backward(&trace.z[i], &gy, &mut grad.encoder[i], i > 0);
        }
    }

    /// ξ_l = μ_l + R_l ε_l for every stochastic layer.
    pub fn sample_posterior(&self, v: &[f64], eps: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let q = self.encode(v)?;
        check_dim("sample_posterior layer count", q.len(), eps.len())?;
        q.iter().zip(eps).map(|(g, e)| g.sample(e)).collect()
    }
}

fn add_into(acc: &mut [f64], x: &[f64]) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b;
    }
}

impl Parameterized for RecognitionParams {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        for (i, a) in self.encoder.iter().enumerate() {
            f(format!("rec.enc.{i}.w"), &a.w);
            f(format!("rec.enc.{i}.b"), &a.b);
        }
        for (j, h) in self.heads.iter().enumerate() {
            f(format!("rec.head.{j}.mu.w"), &h.mu.w);
            f(format!("rec.head.{j}.mu.b"), &h.mu.b);
            f(format!("rec.head.{j}.logd.w"), &h.log_d.w);
            f(format!("rec.head.{j}.logd.b"), &h.log_d.b);
            if let Some(u) = &h.u {
                f(format!("rec.head.{j}.u.w"), &u.w);
                f(format!("rec.head.{j}.u.b"), &u.b);
            }
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, a) in self.encoder.iter_mut().enumerate() {
            f(format!("rec.enc.{i}.w"), &mut a.w);
            f(format!("rec.enc.{i}.b"), &mut a.b);
        }
        for (j, h) in self.heads.iter_mut().enumerate() {
            f(format!("rec.head.{j}.mu.w"), &mut h.mu.w);
            f(format!("rec.head.{j}.mu.b"), &mut h.mu.b);
            f(format!("rec.head.{j}.logd.w"), &mut h.log_d.w);
            f(format!("rec.head.{j}.logd.b"), &mut h.log_d.b);
            if let Some(u) = &mut h.u {
                f(format!("rec.head.{j}.u.w"), &mut u.w);
                f(format!("rec.head.{j}.u.b"), &mut u.b);
            }
        }
    }
}

/// Anything that can draw latent configurations given an observation.
pub trait PosteriorSampler {
    fn sample_latents(&self, v: &[f64], stream: &mut RngStream) -> Result<Vec<Vec<f64>>>;
}

impl PosteriorSampler for RecognitionParams {
    fn sample_latents(&self, v: &[f64], stream: &mut RngStream) -> Result<Vec<Vec<f64>>> {
        let eps: Vec<Vec<f64>> = self
            .latent_dims()
            .into_iter()
            .map(|k| stream.standard_normal(k))
            .collect();
        self.sample_posterior(v, &eps)
    }
}

/// Input corruption used to regularize the recognition model during training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Corruption {
    BitFlip { rate: f64 },
    Dropout { rate: f64 },
    GaussianJitter { sigma: f64 },
}

impl Corruption {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Corruption::BitFlip { rate } | Corruption::Dropout { rate } if !(0.0..=1.0).contains(&rate) => {
                Err(Error::InvalidArgument(format!("corruption rate {rate} outside [0, 1]")))
            }
            Corruption::GaussianJitter { sigma } if !(sigma >= 0.0) || !sigma.is_finite() => {
                Err(Error::InvalidArgument(format!("jitter sigma {sigma} must be ≥ 0")))
            }
            _ => Ok(()),
        }
    }
}

pub fn corrupt(spec: &Corruption, v: &[f64], stream: &mut RngStream) -> Result<Vec<f64>> {
    spec.validate()?;
    match *spec {
        Corruption::BitFlip { rate } => {
            if let Some(x) = v.iter().find(|&&x| x != 0.0 && x != 1.0) {
                return Err(Error::Data(format!(
                    "bit-flip corruption needs binary input, found {x}"
                )));
            }
            Ok(v.iter()
                .map(|&x| if stream.bernoulli(rate) { 1.0 - x } else { x })
                .collect())
        }
        Corruption::Dropout { rate } => Ok(v
            .iter()
            .map(|&x| if stream.bernoulli(rate) { 0.0 } else { x })
            .collect()),
        Corruption::GaussianJitter { sigma } => Ok(v.iter().map(|&x| x + sigma * stream.normal()).collect()),
    }
}
