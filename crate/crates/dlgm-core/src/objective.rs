//! The free-energy objective and its gradients.
//!
//! For a batch `V` with minibatch scale `λ`,
//!
//! ```text
//! F = λ·Σ_n ( −E_q[log p(v_n | h(ξ))] + KL(q(ξ|v_n) ‖ N(0, I)) ) + ‖θ^g‖²/2κ
//! ```
//!
//! The expectation is estimated with the noise supplied in an [`EpsBundle`];
//! the KL term is analytic. Gradients follow the same noise, so a value and
//! its gradient computed from one bundle are exactly consistent.

use crate::covariance::KlGradients;
use crate::error::{check_dim, Error, Result};
use crate::generative::GenerativeParams;
use crate::model::Dlgm;
use crate::numcore::{finite_diff_grad, Matrix, RngStream};
use crate::params::{GradientSet, Parameterized};

/// Noise for one posterior sample: per-layer ε and the additive jitter
/// applied to the resulting sample (empty when jitter is off).
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub eps: Vec<Vec<f64>>,
    pub jitter: Vec<Vec<f64>>,
}

/// One or more [`Draw`]s per datapoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsBundle {
    pub points: Vec<Vec<Draw>>,
}

impl EpsBundle {
    /// `samples` draws for each of `n` datapoints; jitter has standard
    /// deviation `jitter_sigma` (0 disables it).
    pub fn draw(latent_dims: &[usize], n: usize, samples: usize, jitter_sigma: f64, stream: &mut RngStream) -> Self {
        let points = (0..n)
            .map(|_| {
                (0..samples)
                    .map(|_| {
                        let eps = latent_dims.iter().map(|&k| stream.standard_normal(k)).collect();
                        let jitter = if jitter_sigma > 0.0 {
                            latent_dims
                                .iter()
                                .map(|&k| (0..k).map(|_| jitter_sigma * stream.normal()).collect())
                                .collect()
                        } else {
                            Vec::new()
                        };
                        Draw { eps, jitter }
                    })
                    .collect()
            })
            .collect();
        EpsBundle { points }
    }

    pub fn zeros(latent_dims: &[usize], n: usize) -> Self {
        EpsBundle {
            points: vec![
                vec![Draw {
                    eps: latent_dims.iter().map(|&k| vec![0.0; k]).collect(),
                    jitter: Vec::new(),
                }];
                n
            ],
        }
    }

    fn check(&self, latent_dims: &[usize], n: usize) -> Result<()> {
        check_dim("eps bundle datapoints", n, self.points.len())?;
        for draws in &self.points {
            if draws.is_empty() {
                return Err(Error::InvalidArgument(
                    "eps bundle has a datapoint with no draws".into(),
                ));
            }
            for d in draws {
                check_dim("eps bundle layers", latent_dims.len(), d.eps.len())?;
                for (k, e) in latent_dims.iter().zip(&d.eps) {
                    check_dim("eps bundle width", *k, e.len())?;
                }
                if !d.jitter.is_empty() {
                    check_dim("jitter layers", latent_dims.len(), d.jitter.len())?;
                    for (k, e) in latent_dims.iter().zip(&d.jitter) {
                        check_dim("jitter width", *k, e.len())?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeEnergyTerms {
    /// −Σ_n E_q log p(v_n | h(ξ)), Monte Carlo estimate.
    pub recon: f64,
    /// Σ_n Σ_l KL(q_l ‖ N(0, I)).
    pub latent_kl: f64,
    /// Parameter penalty; not scaled by λ.
    pub param_reg: f64,
    pub total: f64,
    pub lambda: f64,
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "minibatch scale λ = {lambda} must be > 0"
        )));
    }
    Ok(())
}

/// Data-dependent part of the objective: (recon, kl) summed over the batch,
/// plus λ-scaled gradients if `grad` is given. `inputs` feed the encoder;
/// `targets` are scored by the likelihood.
fn data_terms(
    model: &Dlgm,
    inputs: &Matrix,
    targets: &Matrix,
    eps: &EpsBundle,
    lambda: f64,
    mut grad: Option<&mut Dlgm>,
) -> Result<(f64, f64)> {
    check_lambda(lambda)?;
    let dims = model.latent_dims();
    check_dim("batch width", model.visible_dim(), targets.cols())?;
    check_dim("encoder input width", model.recognition.input_dim(), inputs.cols())?;
    check_dim("encoder input rows", targets.rows(), inputs.rows())?;
    eps.check(&dims, targets.rows())?;
    let gen = &model.generative;
    let mut recon = 0.0;
    let mut kl = 0.0;
    let mut xi: Vec<Vec<f64>> = dims.iter().map(|&k| vec![0.0; k]).collect();
    for n in 0..targets.rows() {
        let v = targets.row(n);
        let trace = model.recognition.encode_traced(inputs.row(n))?;
        let q = &trace.posteriors;
        let draws = &eps.points[n];
        let w = 1.0 / draws.len() as f64;
        let mut upstream: Vec<KlGradients> = Vec::new();
        if grad.is_some() {
            upstream = q
                .iter()
                .map(|g| {
                    let mut kg = g.kl_gradients();
                    kg.d_mu.iter_mut().for_each(|x| *x *= lambda);
                    kg.d_d.iter_mut().for_each(|x| *x *= lambda);
                    kg.d_u.iter_mut().for_each(|x| *x *= lambda);
                    kg
                })
                .collect();
        }
        for d in draws {
            for l in 0..dims.len() {
                q[l].factor_apply_into(&d.eps[l], &mut xi[l]);
                for (i, x) in xi[l].iter_mut().enumerate() {
                    *x += q[l].mu()[i];
                    if !d.jitter.is_empty() {
                        *x += d.jitter[l][i];
                    }
                }
            }
            match grad.as_deref_mut() {
                Some(acc) => {
                    let (nll, g_xi) = gen.neg_log_lik_and_grad(&xi, v, lambda * w, &mut acc.generative);
                    recon += w * nll;
                    for l in 0..dims.len() {
                        let (gd, gu) = q[l].factor_vjp(&d.eps[l], &g_xi[l]);
                        let up = &mut upstream[l];
                        for i in 0..dims[l] {
                            up.d_mu[i] += g_xi[l][i];
                            up.d_d[i] += gd[i];
                            up.d_u[i] += gu[i];
                        }
                    }
                }
                None => recon -= w * gen.log_lik(&xi, v)?,
            }
        }
        kl += q.iter().map(|g| g.kl_std_normal()).sum::<f64>();
        if let Some(acc) = grad.as_deref_mut() {
            model.recognition.backward(&trace, &upstream, &mut acc.recognition);
        }
    }
    Ok((recon, kl))
}

fn assemble(recon: f64, latent_kl: f64, param_reg: f64, lambda: f64) -> FreeEnergyTerms {
    FreeEnergyTerms {
        recon,
        latent_kl,
        param_reg,
        total: lambda * (recon + latent_kl) + param_reg,
        lambda,
    }
}

/// Free energy of a batch (one row per datapoint) under fixed noise.
pub fn free_energy(model: &Dlgm, batch: &Matrix, eps: &EpsBundle, lambda: f64) -> Result<FreeEnergyTerms> {
    free_energy_with_inputs(model, batch, batch, eps, lambda)
}

/// As [`free_energy`], with the encoder reading `inputs` (e.g. a corrupted
/// copy of the batch) while the likelihood scores `targets`.
pub fn free_energy_with_inputs(
    model: &Dlgm,
    inputs: &Matrix,
    targets: &Matrix,
    eps: &EpsBundle,
    lambda: f64,
) -> Result<FreeEnergyTerms> {
    let (recon, kl) = data_terms(model, inputs, targets, eps, lambda, None)?;
    Ok(assemble(recon, kl, model.generative.prior_penalty(), lambda))
}

/// Value and gradient of the free energy for every parameter of both networks.
pub fn free_energy_and_grad(
    model: &Dlgm,
    batch: &Matrix,
    eps: &EpsBundle,
    lambda: f64,
) -> Result<(FreeEnergyTerms, GradientSet)> {
    free_energy_and_grad_with_inputs(model, batch, batch, eps, lambda)
}

pub fn free_energy_and_grad_with_inputs(
    model: &Dlgm,
    inputs: &Matrix,
    targets: &Matrix,
    eps: &EpsBundle,
    lambda: f64,
) -> Result<(FreeEnergyTerms, GradientSet)> {
    let mut acc = model.zeros_like();
    let (recon, kl) = data_terms(model, inputs, targets, eps, lambda, Some(&mut acc))?;
    model.generative.add_prior_grad(&mut acc.generative);
    let terms = assemble(recon, kl, model.generative.prior_penalty(), lambda);
    Ok((terms, GradientSet::collect(&acc)))
}

pub fn grad_free_energy(model: &Dlgm, batch: &Matrix, eps: &EpsBundle, lambda: f64) -> Result<GradientSet> {
    Ok(free_energy_and_grad(model, batch, eps, lambda)?.1)
}

/// One coordinate of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

/// Relative error with magnitudes floored at `1e-3`, so coordinates whose
/// gradient is essentially zero are judged on absolute error.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Compares every coordinate of [`grad_free_energy`] with central finite
/// differences of [`free_energy`] under the same noise.
pub fn gradient_check(
    model: &Dlgm,
    batch: &Matrix,
    eps: &EpsBundle,
    lambda: f64,
    h: f64,
) -> Result<Vec<GradCheckEntry>> {
    let grads = grad_free_energy(model, batch, eps, lambda)?;
    let mut probe = model.clone();
    let numeric = finite_diff_grad(
        |t| {
            probe.set_from_flat(t).expect("same layout");
            free_energy(&probe, batch, eps, lambda).map_or(f64::NAN, |f| f.total)
        },
        &model.to_flat(),
        h,
    )?;
    let mut out = Vec::with_capacity(numeric.len());
    let mut it = numeric.into_iter();
    for (name, g) in grads.iter() {
        for (index, &analytic) in g.data().iter().enumerate() {
            let numeric = it.next().expect("same length");
            out.push(GradCheckEntry {
                name: name.to_string(),
                index,
                analytic,
                numeric,
                rel_err: relative_error(analytic, numeric),
            });
        }
    }
    Ok(out)
}

/// Factorized Gaussian posterior over the generative parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPosterior {
    pub m: Vec<f64>,
    pub tau: Vec<f64>,
}

impl ParamPosterior {
    /// Means taken from `gen`, variances all `tau`.
    pub fn around(gen: &GenerativeParams, tau: f64) -> Self {
        let m = gen.to_flat();
        let n = m.len();
        ParamPosterior { m, tau: vec![tau; n] }
    }

    fn check(&self, n: usize) -> Result<()> {
        check_dim("posterior means", n, self.m.len())?;
        check_dim("posterior variances", n, self.tau.len())?;
        if let Some(t) = self.tau.iter().find(|&&t| !(t > 0.0)) {
            return Err(Error::Domain(format!("posterior variance {t} must be > 0")));
        }
        Ok(())
    }

    /// θ = m + √τ ⊙ ε.
    pub fn draw(&self, eps_theta: &[f64]) -> Vec<f64> {
        self.m
            .iter()
            .zip(&self.tau)
            .zip(eps_theta)
            .map(|((m, t), e)| m + t.sqrt() * e)
            .collect()
    }

    /// ½ Σ_j [m_j²/κ + τ_j/κ + log κ − log τ_j − 1].
    pub fn regularizer(&self, kappa: f64) -> f64 {
        0.5 * self
            .m
            .iter()
            .zip(&self.tau)
            .map(|(m, t)| m * m / kappa + t / kappa + kappa.ln() - t.ln() - 1.0)
            .sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbGradients {
    pub m: Vec<f64>,
    pub tau: Vec<f64>,
    pub recognition: GradientSet,
}

/// Free energy with the generative parameters integrated against `post`;
/// `param_reg` holds the posterior-to-prior regularizer. The likelihood is
/// evaluated at θ = m + √τ ⊙ `eps_theta`. `shape` supplies the generative
/// layout, prior variance and the recognition network.
pub fn vb_free_energy(
    shape: &Dlgm,
    post: &ParamPosterior,
    batch: &Matrix,
    eps: &EpsBundle,
    eps_theta: &[f64],
    lambda: f64,
) -> Result<FreeEnergyTerms> {
    Ok(vb_inner(shape, post, batch, eps, eps_theta, lambda, false)?.0)
}

pub fn vb_free_energy_and_grad(
    shape: &Dlgm,
    post: &ParamPosterior,
    batch: &Matrix,
    eps: &EpsBundle,
    eps_theta: &[f64],
    lambda: f64,
) -> Result<(FreeEnergyTerms, VbGradients)> {
    let (terms, grads) = vb_inner(shape, post, batch, eps, eps_theta, lambda, true)?;
    Ok((terms, grads.expect("requested")))
}

fn vb_inner(
    shape: &Dlgm,
    post: &ParamPosterior,
    batch: &Matrix,
    eps: &EpsBundle,
    eps_theta: &[f64],
    lambda: f64,
    want_grad: bool,
) -> Result<(FreeEnergyTerms, Option<VbGradients>)> {
    let n = shape.generative.param_count();
    post.check(n)?;
    check_dim("parameter noise", n, eps_theta.len())?;
    let kappa = shape.generative.kappa;
    let mut model = shape.clone();
    model.generative.set_from_flat(&post.draw(eps_theta))?;
    let reg = post.regularizer(kappa);
    if !want_grad {
        let (recon, kl) = data_terms(&model, batch, batch, eps, lambda, None)?;
        return Ok((assemble(recon, kl, reg, lambda), None));
    }
    let mut acc = model.zeros_like();
    let (recon, kl) = data_terms(&model, batch, batch, eps, lambda, Some(&mut acc))?;
    let g_theta = acc.generative.to_flat();
    let mut gm = Vec::with_capacity(n);
    let mut gt = Vec::with_capacity(n);
    for j in 0..n {
        let (m, t) = (post.m[j], post.tau[j]);
        gm.push(g_theta[j] + m / kappa);
        gt.push(g_theta[j] * eps_theta[j] / (2.0 * t.sqrt()) + 0.5 / kappa - 0.5 / t);
    }
    Ok((
        assemble(recon, kl, reg, lambda),
        Some(VbGradients {
            m: gm,
            tau: gt,
            recognition: GradientSet::collect(&acc.recognition),
        }),
    ))
}
