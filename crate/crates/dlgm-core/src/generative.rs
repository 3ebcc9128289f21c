//! The generative network.
//!
//! Layers are listed top-down. A stochastic layer of width K draws
//! `ξ ~ N(0, I_K)` and adds `G ξ` to the incoming activation (the top layer
//! has no incoming activation, so `h = G ξ`). A deterministic layer maps its
//! incoming activation `x` to `W f(x) + b`. The output of the last layer
//! parameterizes the observation likelihood: Bernoulli logits or the mean of a
//! diagonal Gaussian with learned log-variances.
//!
//! With the last two layers `[stochastic(K₂), deterministic(K₂→K₁, f),
//! stochastic(K₁)]` this gives `h₁ = W₁ f(G₂ ξ₂) + G₁ ξ₁ + b₁`.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::layer::{Activation, Affine};
use crate::numcore::{log_std_normal, sigmoid, softplus, Matrix, RngStream, LN_2PI};
use crate::params::{GradientSet, Parameterized};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerKind {
    Deterministic,
    Stochastic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    /// Stochastic layers only: store `G` as a diagonal instead of a full square matrix.
    #[serde(default)]
    pub diagonal_noise: bool,
}

impl LayerSpec {
    pub fn stochastic(dim: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Stochastic,
            in_dim: dim,
            out_dim: dim,
            activation: Activation::Identity,
            diagonal_noise: false,
        }
    }

    pub fn stochastic_diagonal(dim: usize) -> Self {
        LayerSpec {
            diagonal_noise: true,
            ..LayerSpec::stochastic(dim)
        }
    }

    pub fn deterministic(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        LayerSpec {
            kind: LayerKind::Deterministic,
            in_dim,
            out_dim,
            activation,
            diagonal_noise: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObservationFamily {
    BernoulliLogits,
    GaussianDiagonal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ObservationLikelihood {
    BernoulliLogits,
    /// Per-coordinate log-variances, a learned (D × 1) parameter.
    GaussianDiagonal {
        log_var: Matrix,
    },
}

impl ObservationLikelihood {
    pub fn gaussian_from_variance(var: &[f64]) -> Result<Self> {
        if let Some(v) = var.iter().find(|&&v| !(v > 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("observation variance {v} must be > 0")));
        }
        Ok(ObservationLikelihood::GaussianDiagonal {
            log_var: Matrix::column(var.iter().map(|v| v.ln()).collect()),
        })
    }

    pub fn family(&self) -> ObservationFamily {
        match self {
            ObservationLikelihood::BernoulliLogits => ObservationFamily::BernoulliLogits,
            ObservationLikelihood::GaussianDiagonal { .. } => ObservationFamily::GaussianDiagonal,
        }
    }

    /// `−log π(v | params)`; fills `grad_params` with its gradient w.r.t. the
    /// observation parameters and, for the Gaussian, adds the log-variance
    /// gradient into `grad_log_var`.
    pub(crate) fn neg_log_lik_grad(
        &self,
        params: &[f64],
        v: &[f64],
        grad_params: &mut [f64],
        grad_log_var: Option<&mut [f64]>,
    ) -> f64 {
        match self {
            ObservationLikelihood::BernoulliLogits => {
                let mut nll = 0.0;
                for i in 0..v.len() {
                    let eta = params[i];
                    nll += softplus(eta) - v[i] * eta;
                    grad_params[i] = sigmoid(eta) - v[i];
                }
                nll
            }
            ObservationLikelihood::GaussianDiagonal { log_var } => {
                let lv = log_var.data();
                let mut nll = 0.0;
                let mut glv = grad_log_var;
                for i in 0..v.len() {
                    let r = v[i] - params[i];
                    let prec = (-lv[i]).exp();
                    nll += 0.5 * (LN_2PI + lv[i] + r * r * prec);
                    grad_params[i] = -r * prec;
                    if let Some(g) = glv.as_deref_mut() {
                        g[i] += 0.5 - 0.5 * r * r * prec;
                    }
                }
                nll
            }
        }
    }

    /// Mean of π(v | params): probabilities for Bernoulli, means for Gaussian.
    pub fn mean(&self, params: &[f64]) -> Vec<f64> {
        match self {
            ObservationLikelihood::BernoulliLogits => params.iter().map(|&x| sigmoid(x)).collect(),
            ObservationLikelihood::GaussianDiagonal { .. } => params.to_vec(),
        }
    }

    pub fn sample(&self, params: &[f64], stream: &mut RngStream) -> Vec<f64> {
        match self {
            ObservationLikelihood::BernoulliLogits => params
                .iter()
                .map(|&x| if stream.bernoulli(sigmoid(x)) { 1.0 } else { 0.0 })
                .collect(),
            ObservationLikelihood::GaussianDiagonal { log_var } => params
                .iter()
                .zip(log_var.data())
                .map(|(m, lv)| m + (0.5 * lv).exp() * stream.normal())
                .collect(),
        }
    }
}

/// log π(v | T₀(h₁)).
pub fn obs_log_lik(obs: &ObservationLikelihood, obs_params: &[f64], v: &[f64]) -> Result<f64> {
    check_dim("obs_log_lik", obs_params.len(), v.len())?;
    if let ObservationLikelihood::GaussianDiagonal { log_var } = obs {
        check_dim("obs_log_lik log-variance", log_var.len(), v.len())?;
    }
    let mut scratch = vec![0.0; v.len()];
    Ok(-obs.neg_log_lik_grad(obs_params, v, &mut scratch, None))
}

#[derive(Debug, Clone, PartialEq)]
pub enum GenLayer {
    Stochastic { g: Matrix, diagonal: bool },
    Deterministic { affine: Affine, activation: Activation },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeParams {
    specs: Vec<LayerSpec>,
    pub layers: Vec<GenLayer>,
    pub obs: ObservationLikelihood,
    /// Prior variance of every generative parameter.
    pub kappa: f64,
}

/// Activations recorded by [`GenerativeParams::top_down`].
#[derive(Debug, Clone, PartialEq)]
pub struct TopDown {
    /// Output of every layer, top to bottom.
    pub h: Vec<Vec<f64>>,
    /// `f(x)` for each deterministic layer (empty for stochastic layers).
    activated: Vec<Vec<f64>>,
}

impl TopDown {
    /// Parameters handed to the observation likelihood.
    pub fn obs_params(&self) -> &[f64] {
        self.h.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AncestralSample {
    pub xi: Vec<Vec<f64>>,
    pub h: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl GenerativeParams {
    /// Zero-initialized parameters for a validated layer stack.
    pub fn new(specs: Vec<LayerSpec>, family: ObservationFamily, kappa: f64) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "prior variance κ = {kappa} must be > 0"
            )));
        }
        let first = specs
            .first()
            .ok_or_else(|| Error::InvalidArgument("generative model needs at least one layer".into()))?;
        if first.kind != LayerKind::Stochastic {
            return Err(Error::InvalidArgument("top generative layer must be stochastic".into()));
        }
        let mut width = 0usize;
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            match spec.kind {
                LayerKind::Stochastic => {
                    if spec.in_dim != spec.out_dim || spec.out_dim == 0 {
                        return Err(Error::InvalidArgument(format!(
                            "stochastic layer {i} must be square and non-empty"
                        )));
                    }
                    if i > 0 && width != spec.out_dim {
                        check_dim("stochastic layer width", width, spec.out_dim)?;
                    }
                    let g = if spec.diagonal_noise {
                        Matrix::zeros(spec.out_dim, 1)
                    } else {
                        Matrix::zeros(spec.out_dim, spec.out_dim)
                    };
                    layers.push(GenLayer::Stochastic {
                        g,
                        diagonal: spec.diagonal_noise,
                    });
                }
                LayerKind::Deterministic => {
                    check_dim("deterministic layer input", width, spec.in_dim)?;
                    if spec.out_dim == 0 {
                        return Err(Error::InvalidArgument(format!("layer {i} has zero width")));
                    }
                    layers.push(GenLayer::Deterministic {
                        affine: Affine::zeros(spec.in_dim, spec.out_dim),
                        activation: spec.activation,
                    });
                }
            }
            width = spec.out_dim;
        }
        let obs = match family {
            ObservationFamily::BernoulliLogits => ObservationLikelihood::BernoulliLogits,
            ObservationFamily::GaussianDiagonal => ObservationLikelihood::GaussianDiagonal {
                log_var: Matrix::zeros(width, 1),
            },
        };
        Ok(GenerativeParams {
            specs,
            layers,
            obs,
            kappa,
        })
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn visible_dim(&self) -> usize {
        self.specs.last().map_or(0, |s| s.out_dim)
    }

    /// Width of each stochastic layer, top to bottom.
    pub fn latent_dims(&self) -> Vec<usize> {
        self.specs
            .iter()
            .filter(|s| s.kind == LayerKind::Stochastic)
            .map(|s| s.out_dim)
            .collect()
    }

    pub fn total_latent_dim(&self) -> usize {
        self.latent_dims().iter().sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_params_mut(&mut |_, m| m.fill(0.0));
        z
    }

    fn check_xi(&self, xi: &[Vec<f64>]) -> Result<()> {
        let dims = self.latent_dims();
        check_dim("top_down layer count", dims.len(), xi.len())?;
        for (k, x) in dims.iter().zip(xi) {
            check_dim("top_down noise width", *k, x.len())?;
        }
        Ok(())
    }

    /// Deterministic map from per-layer noise to every activation.
    pub fn top_down(&self, xi: &[Vec<f64>]) -> Result<TopDown> {
        self.check_xi(xi)?;
        Ok(self.top_down_unchecked(xi))
    }

    pub(crate) fn top_down_unchecked(&self, xi: &[Vec<f64>]) -> TopDown {
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut activated = Vec::with_capacity(self.layers.len());
        let mut noise = xi.iter();
        for layer in &self.layers {
            match layer {
                GenLayer::Stochastic { g, diagonal } => {
                    let x = noise.next().expect("checked");
                    let mut y = if *diagonal {
                        g.data().iter().zip(x).map(|(gi, xi)| gi * xi).collect()
                    } else {
                        let mut y = vec![0.0; g.rows()];
                        g.matvec_into(x, &mut y);
                        y
                    };
                    if let Some(prev) = h.last() {
                        for (yi, p) in y.iter_mut().zip(prev) {
                            *yi += p;
                        }
                    }
                    h.push(y);
                    activated.push(Vec::new());
                }
                GenLayer::Deterministic { affine, activation } => {
                    let a = activation.apply_all(h.last().expect("validated"));
                    h.push(affine.forward(&a));
                    activated.push(a);
                }
            }
        }
        TopDown { h, activated }
    }

    /// Reverse accumulation through the top-down pass.
    ///
    /// `g_out` is ∂L/∂(observation parameters). Parameter gradients are added
    /// into `grad`; the return value holds ∂L/∂ξ for every stochastic layer.
    pub(crate) fn backward(
        &self,
        td: &TopDown,
        xi: &[Vec<f64>],
        g_out: Vec<f64>,
        grad: &mut GenerativeParams,
    ) -> Vec<Vec<f64>> {
        let mut g_xi: Vec<Vec<f64>> = vec![Vec::new(); xi.len()];
        let mut noise_idx = xi.len();
        let mut gy = g_out;
        for i in (0..self.layers.len()).rev() {
            match (&self.layers[i], &mut grad.layers[i]) {
                (GenLayer::Stochastic { g, diagonal }, GenLayer::Stochastic { g: gg, .. }) => {
                    noise_idx -= 1;
                    let x = &xi[noise_idx];
                    if *diagonal {
                        for (k, gk) in gg.data_mut().iter_mut().enumerate() {
                            *gk += gy[k] * x[k];
                        }
                        g_xi[noise_idx] = g.data().iter().zip(&gy).map(|(a, b)| a * b).collect();
                    } else {
                        gg.add_outer(1.0, &gy, x);
                        let mut gx = vec![0.0; g.cols()];
                        g.matvec_t_acc(&gy, &mut gx);
                        g_xi[noise_idx] = gx;
                    }
                    // ∂L/∂(incoming activation) passes through unchanged.
                }
                (GenLayer::Deterministic { affine, activation }, GenLayer::Deterministic { affine: ga, .. }) => {
                    let a = &td.activated[i];
                    let mut g_a = affine.backward(a, &gy, ga, true);
                    let x = &td.h[i - 1];
                    for k in 0..g_a.len() {
                        g_a[k] *= activation.derivative(x[k], a[k]);
                    }
                    gy = g_a;
                }
                _ => unreachable!("gradient mirror has the same layout"),
            }
        }
        g_xi
    }

    /// `−log p(v | h(ξ))` with gradients accumulated into `grad` (scaled by
    /// `scale`); returns the value and ∂/∂ξ (also scaled).
    pub(crate) fn neg_log_lik_and_grad(
        &self,
        xi: &[Vec<f64>],
        v: &[f64],
        scale: f64,
        grad: &mut GenerativeParams,
    ) -> (f64, Vec<Vec<f64>>) {
        let td = self.top_down_unchecked(xi);
        let mut g_out = vec![0.0; v.len()];
        let mut g_lv = match &self.obs {
            ObservationLikelihood::GaussianDiagonal { .. } => Some(vec![0.0; v.len()]),
            ObservationLikelihood::BernoulliLogits => None,
        };
        let nll = self
            .obs
            .neg_log_lik_grad(td.obs_params(), v, &mut g_out, g_lv.as_deref_mut());
        if let (Some(glv), ObservationLikelihood::GaussianDiagonal { log_var }) = (g_lv, &mut grad.obs) {
            for (acc, g) in log_var.data_mut().iter_mut().zip(glv) {
                *acc += scale * g;
            }
        }
        g_out.iter_mut().for_each(|g| *g *= scale);
        let g_xi = self.backward(&td, xi, g_out, grad);
        (nll, g_xi)
    }

    /// log p(v | h(ξ)).
    pub fn log_lik(&self, xi: &[Vec<f64>], v: &[f64]) -> Result<f64> {
        self.check_xi(xi)?;
        check_dim("log_lik visible", self.visible_dim(), v.len())?;
        let td = self.top_down_unchecked(xi);
        obs_log_lik(&self.obs, td.obs_params(), v)
    }

    /// log p(v | h(ξ)) + Σ log N(ξ_l | 0, I).
    pub fn log_joint(&self, xi: &[Vec<f64>], v: &[f64]) -> Result<f64> {
        let prior: f64 = xi.iter().map(|x| log_std_normal(x)).sum();
        Ok(self.log_lik(xi, v)? + prior)
    }

    /// ‖θ^g‖² / 2κ.
    pub fn prior_penalty(&self) -> f64 {
        self.sum_sq_params() / (2.0 * self.kappa)
    }

    /// Adds θ/κ into `grad`.
    pub(crate) fn add_prior_grad(&self, grad: &mut GenerativeParams) {
        let inv_kappa = 1.0 / self.kappa;
        let mut flat = Vec::new();
        self.visit_params(&mut |_, m| flat.push(m.clone()));
        let mut it = flat.into_iter();
        grad.visit_params_mut(&mut |_, g| {
            let p = it.next().expect("same layout");
            g.axpy(inv_kappa, &p).expect("same shape");
        });
    }

    /// Draws ξ from the prior, runs the top-down pass and samples v.
    pub fn ancestral_sample(&self, stream: &mut RngStream) -> AncestralSample {
        let xi: Vec<Vec<f64>> = self
            .latent_dims()
            .into_iter()
            .map(|k| stream.standard_normal(k))
            .collect();
        let td = self.top_down_unchecked(&xi);
        let v = self.obs.sample(td.obs_params(), stream);
        AncestralSample { xi, h: td.h, v }
    }
}

/// Gradient of `−log p(v | h(ξ)) + ‖θ^g‖²/2κ` w.r.t. every generative parameter.
pub fn grad_generative(params: &GenerativeParams, xi: &[Vec<f64>], v: &[f64]) -> Result<GradientSet> {
    params.check_xi(xi)?;
    check_dim("grad_generative visible", params.visible_dim(), v.len())?;
    let mut grad = params.zeros_like();
    params.neg_log_lik_and_grad(xi, v, 1.0, &mut grad);
    params.add_prior_grad(&mut grad);
    Ok(GradientSet::collect(&grad))
}

impl Parameterized for GenerativeParams {
    fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                GenLayer::Stochastic { g, .. } => f(format!("gen.{i}.g"), g),
                GenLayer::Deterministic { affine, .. } => {
                    f(format!("gen.{i}.w"), &affine.w);
                    f(format!("gen.{i}.b"), &affine.b);
                }
            }
        }
        if let ObservationLikelihood::GaussianDiagonal { log_var } = &self.obs {
            f("gen.obs.log_var".into(), log_var);
        }
    }

    fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
        for (i, layer) in self.layers.iter_mut().enumerate() {
            match layer {
                GenLayer::Stochastic { g, .. } => f(format!("gen.{i}.g"), g),
                GenLayer::Deterministic { affine, .. } => {
                    f(format!("gen.{i}.w"), &mut affine.w);
                    f(format!("gen.{i}.b"), &mut affine.b);
                }
            }
        }
        if let ObservationLikelihood::GaussianDiagonal { log_var } = &mut self.obs {
            f("gen.obs.log_var".into(), log_var);
        }
    }
}
