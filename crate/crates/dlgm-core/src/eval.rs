//! Marginal likelihood estimation, missing-data imputation, posterior grids
//! and 2-D embeddings.

use crate::covariance::RankOneGaussian;
use crate::error::{check_dim, Error, Result};
use crate::generative::GenerativeParams;
use crate::model::Dlgm;
use crate::numcore::{log_std_normal, log_sum_exp, Matrix, RngStream};
use crate::recognition::{PosteriorSampler, RecognitionParams};

/// `log p(v|h(ξ)) + log p(ξ) − log q(ξ)` for `s` draws from `q`.
pub fn log_importance_weights(
    gen: &GenerativeParams,
    q: &[RankOneGaussian],
    v: &[f64],
    s: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    if s == 0 {
        return Err(Error::InvalidArgument("importance sample count must be ≥ 1".into()));
    }
    let dims = gen.latent_dims();
    check_dim("proposal layers", dims.len(), q.len())?;
    for (k, g) in dims.iter().zip(q) {
        check_dim("proposal width", *k, g.dim())?;
    }
    check_dim("observation width", gen.visible_dim(), v.len())?;
    let mut out = Vec::with_capacity(s);
    for _ in 0..s {
        let mut log_w = 0.0;
        let mut xi = Vec::with_capacity(q.len());
        for g in q {
            let x = g.sample(&stream.standard_normal(g.dim()))?;
            log_w += log_std_normal(&x) - g.log_density(&x)?;
            xi.push(x);
        }
        log_w += gen.log_lik(&xi, v)?;
        out.push(log_w);
    }
    Ok(out)
}

/// Importance-sampled `log p(v)` with the recognition model as proposal:
/// `logsumexp_s(log w_s) − log S`.
pub fn marginal_ll_is(model: &Dlgm, v: &[f64], s: usize, stream: &mut RngStream) -> Result<f64> {
    let q = model.recognition.encode(v)?;
    marginal_ll_with_proposal(&model.generative, &q, v, s, stream)
}

pub fn marginal_ll_with_proposal(
    gen: &GenerativeParams,
    q: &[RankOneGaussian],
    v: &[f64],
    s: usize,
    stream: &mut RngStream,
) -> Result<f64> {
    let w = log_importance_weights(gen, q, v, s, stream)?;
    Ok(log_sum_exp(&w) - (s as f64).ln())
}

/// Which coordinates of an observation are known.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub observed: Vec<bool>,
}

impl Mask {
    pub fn all_observed(n: usize) -> Self {
        Mask {
            observed: vec![true; n],
        }
    }

    pub fn missing_count(&self) -> usize {
        self.observed.iter().filter(|&&o| !o).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaskKind {
    /// Each pixel missing independently with probability `rate`.
    Mar { rate: f64 },
    /// A `size × size` block with top-left corner `(top, left)` is missing.
    Square { top: usize, left: usize, size: usize },
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    /// `mar:<rate>` or `square:<top>,<left>,<size>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("mask {s:?} is not mar:<rate> or square:<top>,<left>,<size>"));
        let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "mar" => Ok(MaskKind::Mar {
                rate: rest.parse().map_err(|_| bad())?,
            }),
            "square" => {
                let parts: Vec<usize> = rest
                    .split(',')
                    .map(|p| p.trim().parse())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                match parts[..] {
                    [top, left, size] => Ok(MaskKind::Square { top, left, size }),
                    _ => Err(bad()),
                }
            }
            _ => Err(bad()),
        }
    }
}

/// Builds a mask for row-major `height × width` images.
pub fn make_mask(kind: MaskKind, height: usize, width: usize, stream: &mut RngStream) -> Result<Mask> {
    let n = height * width;
    match kind {
        MaskKind::Mar { rate } => {
            if !(rate > 0.0 && rate < 1.0) {
                return Err(Error::InvalidArgument(format!("missing rate {rate} outside (0, 1)")));
            }
            Ok(Mask {
                observed: (0..n).map(|_| !stream.bernoulli(rate)).collect(),
            })
        }
        MaskKind::Square { top, left, size } => {
            if size == 0 || top + size > height || left + size > width {
                return Err(Error::InvalidArgument(format!(
                    "square ({top}, {left}, {size}) does not fit a {height}×{width} image"
                )));
            }
            let mut observed = vec![true; n];
            for r in top..top + size {
                for c in left..left + size {
                    observed[r * width + c] = false;
                }
            }
            Ok(Mask { observed })
        }
    }
}

/// Replaces missing coordinates with fair coin flips.
pub fn random_fill(v: &[f64], mask: &Mask, stream: &mut RngStream) -> Vec<f64> {
    v.iter()
        .zip(&mask.observed)
        .map(|(&x, &o)| {
            if o {
                x
            } else if stream.bernoulli(0.5) {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Trajectories of an imputation chain, both starting at the clamped initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct Imputation {
    /// States the chain actually visits (sampled reconstructions).
    pub sampled: Vec<Vec<f64>>,
    /// Expected reconstructions at each step, for display.
    pub means: Vec<Vec<f64>>,
}

/// Runs `iters` steps of: ξ ~ q(ξ|v), v' ~ p(v|h(ξ)), missing ← v'.
pub fn impute_chain<S: PosteriorSampler + ?Sized>(
    gen: &GenerativeParams,
    sampler: &S,
    v0: &[f64],
    mask: &Mask,
    iters: usize,
    stream: &mut RngStream,
) -> Result<Imputation> {
    check_dim("imputation start", gen.visible_dim(), v0.len())?;
    check_dim("imputation mask", v0.len(), mask.observed.len())?;
    let mut sampled = Vec::with_capacity(iters + 1);
    let mut means = Vec::with_capacity(iters + 1);
    sampled.push(v0.to_vec());
    means.push(v0.to_vec());
    if mask.missing_count() == 0 {
        for _ in 0..iters {
            sampled.push(v0.to_vec());
            means.push(v0.to_vec());
        }
        return Ok(Imputation { sampled, means });
    }
    let mut v = v0.to_vec();
    for _ in 0..iters {
        let xi = sampler.sample_latents(&v, stream)?;
        let td = gen.top_down(&xi)?;
        let draw = gen.obs.sample(td.obs_params(), stream);
        let mean = gen.obs.mean(td.obs_params());
        let mut shown = v0.to_vec();
        for i in 0..v.len() {
            if !mask.observed[i] {
                v[i] = draw[i];
                shown[i] = mean[i];
            }
        }
        sampled.push(v.clone());
        means.push(shown);
    }
    Ok(Imputation { sampled, means })
}

/// A square grid over a 2-D latent space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub resolution: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lo < self.hi) || self.resolution < 2 {
            return Err(Error::InvalidArgument(format!(
                "grid needs lo < hi and resolution ≥ 2, got ({}, {}, {})",
                self.lo, self.hi, self.resolution
            )));
        }
        Ok(())
    }

    /// Coordinate of grid index `i` along either axis.
    pub fn point(&self, i: usize) -> f64 {
        self.lo + (self.hi - self.lo) * i as f64 / (self.resolution - 1) as f64
    }
}

impl std::str::FromStr for GridSpec {
    type Err = Error;

    /// `lo,hi,res`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("grid {s:?} is not lo,hi,res"));
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        match parts[..] {
            [lo, hi, res] => {
                let g = GridSpec {
                    lo: lo.parse().map_err(|_| bad())?,
                    hi: hi.parse().map_err(|_| bad())?,
                    resolution: res.parse().map_err(|_| bad())?,
                };
                g.validate()?;
                Ok(g)
            }
            _ => Err(bad()),
        }
    }
}

fn require_two_latents(dims: &[usize]) -> Result<()> {
    if dims != [2] {
        return Err(Error::InvalidArgument(format!(
            "expected a single 2-dimensional latent layer, model has {dims:?}"
        )));
    }
    Ok(())
}

/// Normalized posterior weights `∝ p(v|h(ξ)) N(ξ|0,I)` at every grid point;
/// entry `(i, j)` is ξ = (point(i), point(j)).
pub fn posterior_grid(gen: &GenerativeParams, v: &[f64], grid: GridSpec) -> Result<Matrix> {
    grid.validate()?;
    require_two_latents(&gen.latent_dims())?;
    check_dim("observation width", gen.visible_dim(), v.len())?;
    let r = grid.resolution;
    let mut logw = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            let xi = [grid.point(i), grid.point(j)];
            logw.push(gen.log_lik(&[xi.to_vec()], v)? + log_std_normal(&xi));
        }
    }
    let z = log_sum_exp(&logw);
    Matrix::new(r, r, logw.into_iter().map(|w| (w - z).exp()).collect())
}

/// Posterior means of a batch under a 2-D recognition model.
pub fn embed(rec: &RecognitionParams, batch: &Matrix) -> Result<Matrix> {
    require_two_latents(&rec.latent_dims())?;
    let mut out = Matrix::zeros(batch.rows(), 2);
    for n in 0..batch.rows() {
        let q = rec.encode(batch.row(n))?;
        out.row_mut(n).copy_from_slice(q[0].mu());
    }
    Ok(out)
}
