//! Stochastic gradient estimators for Gaussian expectations and the
//! closed-form variances used to compare them.

use crate::covariance::RankOneGaussian;
use crate::error::{check_dim, Error, Result};
use crate::numcore::{finite_diff_grad, mean_and_variance, Matrix, RngStream, DEFAULT_FD_STEP};

type ScalarFn = Box<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type VectorFn = Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
type MatrixFn = Box<dyn Fn(&[f64]) -> Matrix + Send + Sync>;

/// A smooth scalar function with its gradient and, optionally, its Hessian.
pub struct ScalarTarget {
    dim: usize,
    f: ScalarFn,
    grad: VectorFn,
    hess: Option<MatrixFn>,
}

impl std::fmt::Debug for ScalarTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScalarTarget")
            .field("dim", &self.dim)
            .field("has_hessian", &self.hess.is_some())
            .finish()
    }
}

impl ScalarTarget {
    /// Registers a target after checking `grad` against central differences
    /// of `f` at a few standard-normal points.
    pub fn new(
        dim: usize,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        hess: Option<MatrixFn>,
    ) -> Result<Self> {
        let t = ScalarTarget {
            dim,
            f: Box::new(f),
            grad: Box::new(grad),
            hess,
        };
        let mut stream = RngStream::new(0x007a_26e7);
        for _ in 0..4 {
            let x = stream.standard_normal(dim);
            let analytic = t.grad(&x);
            check_dim("target gradient", dim, analytic.len())?;
            let fd = finite_diff_grad(|y| t.value(y), &x, DEFAULT_FD_STEP)?;
            for (i, (a, n)) in analytic.iter().zip(&fd).enumerate() {
                if (a - n).abs() > 1e-6 * a.abs().max(n.abs()).max(1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "registered gradient disagrees with finite differences at coordinate {i}: {a} vs {n}"
                    )));
                }
            }
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    pub fn grad(&self, x: &[f64]) -> Vec<f64> {
        (self.grad)(x)
    }

    pub fn hessian(&self, x: &[f64]) -> Option<Matrix> {
        self.hess.as_ref().map(|h| h(x))
    }
}

/// Separable quadratic `f(ξ) = Σ c ξ_i² / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadraticTarget {
    pub c: f64,
}

impl QuadraticTarget {
    pub fn target(&self, dim: usize) -> ScalarTarget {
        let c = self.c;
        ScalarTarget::new(
            dim,
            move |x| 0.5 * c * x.iter().map(|v| v * v).sum::<f64>(),
            move |x| x.iter().map(|v| c * v).collect(),
            Some(Box::new(move |x: &[f64]| {
                let mut h = Matrix::identity(x.len());
                h.scale(c);
                h
            })),
        )
        .expect("quadratic gradient is exact")
    }

    /// E[f] for one coordinate under N(μ, σ²).
    pub fn expectation(&self, mu: f64, sigma: f64) -> f64 {
        0.5 * self.c * (mu * mu + sigma * sigma)
    }

    /// ∂E[f]/∂μ for one coordinate.
    pub fn grad_mu(&self, mu: f64) -> f64 {
        self.c * mu
    }
}

fn check_n(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be ≥ 1".into()));
    }
    Ok(())
}

/// ∇_μ E[f] ≈ mean of ∇f(ξ), ξ ~ q.
pub fn bonnet_grad_mu(t: &ScalarTarget, q: &RankOneGaussian, n: usize, stream: &mut RngStream) -> Result<Vec<f64>> {
    check_n(n)?;
    check_dim("bonnet_grad_mu", t.dim(), q.dim())?;
    let mut acc = vec![0.0; q.dim()];
    let mut eps = vec![0.0; q.dim()];
    for _ in 0..n {
        stream.fill_normal(&mut eps);
        let xi = q.sample(&eps)?;
        for (a, g) in acc.iter_mut().zip(t.grad(&xi)) {
            *a += g;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// ∇_C E[f] ≈ mean of ½ ∇²f(ξ), ξ ~ q.
pub fn price_grad_cov(t: &ScalarTarget, q: &RankOneGaussian, n: usize, stream: &mut RngStream) -> Result<Matrix> {
    check_n(n)?;
    check_dim("price_grad_cov", t.dim(), q.dim())?;
    if t.hess.is_none() {
        return Err(Error::MissingHessian);
    }
    let k = q.dim();
    let mut acc = Matrix::zeros(k, k);
    let mut eps = vec![0.0; k];
    for _ in 0..n {
        stream.fill_normal(&mut eps);
        let xi = q.sample(&eps)?;
        let h = t.hessian(&xi).expect("checked");
        acc.axpy(0.5 / n as f64, &h)?;
    }
    Ok(acc)
}

/// ∂E[f]/∂R_ij ≈ mean of g_i ε_j with g = ∇f(μ + Rε).
pub fn reparam_grad_factor(
    t: &ScalarTarget,
    mu: &[f64],
    r: &Matrix,
    n: usize,
    stream: &mut RngStream,
) -> Result<Matrix> {
    check_n(n)?;
    check_dim("reparam_grad_factor mean", t.dim(), mu.len())?;
    check_dim("reparam_grad_factor rows", mu.len(), r.rows())?;
    let mut acc = Matrix::zeros(r.rows(), r.cols());
    let mut eps = vec![0.0; r.cols()];
    for _ in 0..n {
        stream.fill_normal(&mut eps);
        let mut xi = r.matvec(&eps)?;
        for (x, m) in xi.iter_mut().zip(mu) {
            *x += m;
        }
        acc.add_outer(1.0 / n as f64, &t.grad(&xi), &eps);
    }
    Ok(acc)
}

/// ∇_μ E[f] ≈ mean of (f(ξ) − b)(ξ − μ)/σ², ξ ~ N(μ, diag σ²).
pub fn reinforce_grad(
    t: &ScalarTarget,
    mu: &[f64],
    sigma: &[f64],
    baseline: f64,
    n: usize,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    check_n(n)?;
    check_dim("reinforce_grad mean", t.dim(), mu.len())?;
    check_dim("reinforce_grad scale", mu.len(), sigma.len())?;
    if sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Domain("REINFORCE scale must be > 0".into()));
    }
    let mut acc = vec![0.0; mu.len()];
    let mut eps = vec![0.0; mu.len()];
    let mut xi = vec![0.0; mu.len()];
    for _ in 0..n {
        stream.fill_normal(&mut eps);
        for i in 0..mu.len() {
            xi[i] = mu[i] + sigma[i] * eps[i];
        }
        let w = t.value(&xi) - baseline;
        for i in 0..mu.len() {
            // (ξ − μ)/σ² = ε/σ
            acc[i] += w * eps[i] / sigma[i];
        }
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// Closed-form variances of single-sample estimators for `f = c ξ²/2`,
/// `ξ ~ N(μ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateVariances {
    /// ∇_μ via the gradient identity.
    pub bonnet: f64,
    /// ∇_{σ²} via the Hessian identity.
    pub price: f64,
    /// ∇_σ via the location-scale transform.
    pub reparam: f64,
    /// ∇_μ via the score function with baseline E[f].
    pub reinforce: f64,
}

pub fn univariate_variance_oracle(c: f64, mu: f64, sigma: f64) -> Result<UnivariateVariances> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma {sigma} must be > 0")));
    }
    let (c2, m2, s2) = (c * c, mu * mu, sigma * sigma);
    Ok(UnivariateVariances {
        bonnet: c2 * s2,
        price: 0.0,
        reparam: 2.0 * c2 * s2 + c2 * m2,
        reinforce: 2.0 * c2 * m2 + 2.5 * c2 * s2,
    })
}

/// Unbiased sample variance of `trials` calls to a single-sample estimator.
pub fn empirical_variance(mut estimator: impl FnMut() -> f64, trials: usize) -> Result<f64> {
    if trials < 2 {
        return Err(Error::InvalidArgument("empirical variance needs ≥ 2 trials".into()));
    }
    Ok(mean_and_variance((0..trials).map(|_| estimator())).1)
}

/// Per-K variance of coordinate 0's single-sample gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingRow {
    pub k: usize,
    pub gbp: f64,
    pub reinforce: f64,
}

/// Empirical estimator variance for the separable target `Σ c ξ_i²/2` under
/// `N(μ 1, σ² I_K)` as K grows. REINFORCE uses the constant baseline E[f].
pub fn variance_scaling_sweep(
    ks: &[usize],
    trials: usize,
    target: QuadraticTarget,
    mu: f64,
    sigma: f64,
    stream: &mut RngStream,
) -> Result<Vec<ScalingRow>> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma {sigma} must be > 0")));
    }
    if trials < 2 {
        return Err(Error::InvalidArgument("empirical variance needs ≥ 2 trials".into()));
    }
    let c = target.c;
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 {
            return Err(Error::InvalidArgument("dimension must be ≥ 1".into()));
        }
        let mut s = stream.derive(k as u64);
        let baseline = k as f64 * target.expectation(mu, sigma);
        let mut xi = vec![0.0; k];
        let mut gbp = Vec::with_capacity(trials);
        let mut rf = Vec::with_capacity(trials);
        for _ in 0..trials {
            s.fill_normal(&mut xi);
            let e0 = xi[0];
            let mut f = 0.0;
            for x in xi.iter_mut() {
                *x = mu + sigma * *x;
                f += 0.5 * c * *x * *x;
            }
            gbp.push(c * xi[0]);
            rf.push((f - baseline) * e0 / sigma);
        }
        rows.push(ScalingRow {
            k,
            gbp: mean_and_variance(gbp).1,
            reinforce: mean_and_variance(rf).1,
        });
    }
    Ok(rows)
}

/// Ordinary least squares `y ≈ slope·x + intercept`; returns (slope, intercept, R²).
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    check_dim("linear_fit", x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::InvalidArgument("linear fit needs ≥ 2 points".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Singularity("linear fit over a constant abscissa".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// The function `B` of the product-rule identity
/// `∇_θ E[f] = −E[∂_x (B f)]` for a univariate Gaussian with θ = (μ, σ²).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProductRuleB {
    pub b_mu: f64,
    pub b_var: f64,
}

impl ProductRuleB {
    /// ∂B_var/∂x, needed to evaluate the identity.
    pub fn b_var_slope(x: f64, mu: f64, sigma: f64) -> f64 {
        let y = x - mu;
        -1.0 / (2.0 * sigma * sigma) - 1.0 / (2.0 * y * y)
    }
}

/// `B = ∂_θ log p / ∂_x log p`. For the variance this is
/// `−(x−μ−σ)(x−μ+σ) / (2σ²(x−μ))`.
pub fn product_rule_b_gaussian(x: f64, mu: f64, sigma: f64) -> Result<ProductRuleB> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma {sigma} must be > 0")));
    }
    let y = x - mu;
    if y.abs() < 1e-10 {
        return Err(Error::Singularity(format!(
            "B_var is singular at x = μ (|x − μ| = {})",
            y.abs()
        )));
    }
    Ok(ProductRuleB {
        b_mu: -1.0,
        b_var: -(y - sigma) * (y + sigma) / (2.0 * sigma * sigma * y),
    })
}

/// Distributions written as a smooth transform of a fixed base draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LocationScale {
    /// μ + R ε, ε ~ N(0, 1).
    Gaussian { mu: f64, scale: f64 },
    /// m X + b, X standard GEV.
    GevAffine { m: f64, b: f64 },
    /// λ X^{1/k}, X ~ Exp(1).
    Weibull { lambda: f64, k: f64 },
}

pub fn location_scale_sample(family: LocationScale, base: f64) -> Result<f64> {
    match family {
        LocationScale::Gaussian { mu, scale } => Ok(mu + scale * base),
        LocationScale::GevAffine { m, b } => Ok(m * base + b),
        LocationScale::Weibull { lambda, k } => {
            if !(lambda > 0.0) || !(k > 0.0) {
                return Err(Error::Domain(format!(
                    "Weibull needs λ > 0 and k > 0, got ({lambda}, {k})"
                )));
            }
            if base < 0.0 {
                return Err(Error::Domain(format!("exponential base draw {base} is negative")));
            }
            Ok(lambda * base.powf(1.0 / k))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss1(mu: f64, sigma: f64) -> RankOneGaussian {
        RankOneGaussian::diagonal_from_std(vec![mu], &[sigma]).unwrap()
    }

    /// |est − truth| ≤ 4 sd/√n.
    fn within_band(est: f64, truth: f64, var: f64, n: usize) -> bool {
        (est - truth).abs() <= 4.0 * (var / n as f64).sqrt()
    }

    #[test]
    fn bonnet_examples() {
        let mut s = RngStream::new(1);
        let n = 100_000;
        let t = QuadraticTarget { c: 1.0 }.target(1);
        let g = bonnet_grad_mu(&t, &gauss1(0.0, 1.0), n, &mut s).unwrap();
        assert!(within_band(g[0], 0.0, 1.0, n));
        let t2 = QuadraticTarget { c: 2.0 }.target(1);
        let g = bonnet_grad_mu(&t2, &gauss1(3.0, 1.0), n, &mut s).unwrap();
        assert!(within_band(g[0], 6.0, 4.0, n));
        let a = [0.5, -2.0, 3.0];
        let lin = ScalarTarget::new(
            3,
            move |x| a.iter().zip(x).map(|(p, q)| p * q).sum(),
            move |_| a.to_vec(),
            None,
        )
        .unwrap();
        let q = RankOneGaussian::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 0.5], vec![0.3, 0.1, -0.2]).unwrap();
        for n in [1, 7] {
            let g = bonnet_grad_mu(&lin, &q, n, &mut s).unwrap();
            for (x, y) in g.iter().zip(a) {
                assert!((x - y).abs() < 1e-15);
            }
        }
        assert!(bonnet_grad_mu(&lin, &q, 0, &mut s).is_err());
    }

    #[test]
    fn price_examples() {
        let mut s = RngStream::new(2);
        let t = QuadraticTarget { c: 2.0 }.target(1);
        for n in [1, 5] {
            let h = price_grad_cov(&t, &gauss1(0.3, 1.7), n, &mut s).unwrap();
            assert_eq!(h.data(), &[1.0]);
        }
        let lin = ScalarTarget::new(
            2,
            |x| x[0] - x[1],
            |_| vec![1.0, -1.0],
            Some(Box::new(|_: &[f64]| Matrix::zeros(2, 2))),
        )
        .unwrap();
        let h = price_grad_cov(&lin, &RankOneGaussian::standard(2), 3, &mut s).unwrap();
        assert!(h.data().iter().all(|&x| x == 0.0));
        let nohess = ScalarTarget::new(1, |x| x[0], |_| vec![1.0], None).unwrap();
        assert!(matches!(
            price_grad_cov(&nohess, &gauss1(0.0, 1.0), 1, &mut s),
            Err(Error::MissingHessian)
        ));

        // f = ξ⁴/12: ½ E[ξ²] = ½ at μ=0, σ=1; Var[ξ²/2] = ½.
        let quartic = ScalarTarget::new(
            1,
            |x| x[0].powi(4) / 12.0,
            |x| vec![x[0].powi(3) / 3.0],
            Some(Box::new(|x: &[f64]| Matrix::column(vec![x[0] * x[0]]))),
        )
        .unwrap();
        let n = 200_000;
        let h = price_grad_cov(&quartic, &gauss1(0.0, 1.0), n, &mut s).unwrap();
        assert!(within_band(h.get(0, 0), 0.5, 0.5, n));
    }

    #[test]
    fn reparam_examples() {
        let mut s = RngStream::new(3);
        let n = 200_000;
        let t = QuadraticTarget { c: 1.0 }.target(1);
        let r = Matrix::column(vec![2.0]);
        let g = reparam_grad_factor(&t, &[0.0], &r, n, &mut s).unwrap();
        // single-sample c R ε² has variance 2 c² R²
        assert!(within_band(g.get(0, 0), 2.0, 8.0, n));

        // chain rule through C = R²: ∂/∂R = 2R · ∂/∂C
        let t2 = QuadraticTarget { c: 1.5 }.target(1);
        let rr = 0.7;
        let price = price_grad_cov(&t2, &gauss1(0.4, rr), 1, &mut s).unwrap().get(0, 0);
        let g = reparam_grad_factor(&t2, &[0.4], &Matrix::column(vec![rr]), n, &mut s).unwrap();
        let var = univariate_variance_oracle(1.5, 0.4, rr).unwrap().reparam;
        assert!(within_band(g.get(0, 0), 2.0 * rr * price, var, n));

        let konst = ScalarTarget::new(2, |_| 4.0, |_| vec![0.0, 0.0], None).unwrap();
        let g = reparam_grad_factor(&konst, &[0.0, 1.0], &Matrix::identity(2), 10, &mut s).unwrap();
        assert!(g.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reparam_orientation_matches_finite_differences() {
        // Common random numbers make the MC average a smooth function of R,
        // so the orientation of the returned matrix can be checked exactly.
        let t = ScalarTarget::new(
            2,
            |x| x[0] * x[0] * 0.5 + 3.0 * x[1] + x[0] * x[1],
            |x| vec![x[0] + x[1], 3.0 + x[0]],
            None,
        )
        .unwrap();
        let mu = [0.2, -0.1];
        let r = Matrix::new(2, 2, vec![1.0, 0.3, -0.5, 2.0]).unwrap();
        let n = 50;
        let g = reparam_grad_factor(&t, &mu, &r, n, &mut RngStream::new(9)).unwrap();
        let objective = |flat: &[f64]| {
            let rm = Matrix::new(2, 2, flat.to_vec()).unwrap();
            let mut s = RngStream::new(9);
            let mut acc = 0.0;
            let mut eps = vec![0.0; 2];
            for _ in 0..n {
                s.fill_normal(&mut eps);
                let mut x = rm.matvec(&eps).unwrap();
                x[0] += mu[0];
                x[1] += mu[1];
                acc += t.value(&x);
            }
            acc / n as f64
        };
        let fd = finite_diff_grad(objective, r.data(), 1e-6).unwrap();
        for (a, b) in g.data().iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn reinforce_examples() {
        let mut s = RngStream::new(4);
        let n = 400_000;
        let q = QuadraticTarget { c: 2.0 };
        let t = q.target(1);
        // b = 0: Var[(f)(ξ−μ)/σ²] for c=2, μ=3, σ=1 (computed from Gaussian moments below)
        let g = reinforce_grad(&t, &[3.0], &[1.0], 0.0, n, &mut s).unwrap();
        let var0 = empirical_variance(
            || reinforce_grad(&t, &[3.0], &[1.0], 0.0, 1, &mut s).unwrap()[0],
            100_000,
        )
        .unwrap();
        assert!(within_band(g[0], 6.0, var0, n));
        let g = reinforce_grad(&t, &[3.0], &[1.0], 100.0, n, &mut s).unwrap();
        let var100 = empirical_variance(
            || reinforce_grad(&t, &[3.0], &[1.0], 100.0, 1, &mut s).unwrap()[0],
            100_000,
        )
        .unwrap();
        assert!(within_band(g[0], 6.0, var100, n));

        let t1 = QuadraticTarget { c: 1.0 }.target(1);
        let ef = QuadraticTarget { c: 1.0 }.expectation(2.0, 1.0);
        let with_b = empirical_variance(
            || reinforce_grad(&t1, &[2.0], &[1.0], ef, 1, &mut s).unwrap()[0],
            100_000,
        )
        .unwrap();
        let without = empirical_variance(
            || reinforce_grad(&t1, &[2.0], &[1.0], 0.0, 1, &mut s).unwrap()[0],
            100_000,
        )
        .unwrap();
        assert!(with_b < without);
    }

    #[test]
    fn oracle_examples() {
        let v = univariate_variance_oracle(1.0, 0.0, 1.0).unwrap();
        assert_eq!((v.bonnet, v.price, v.reparam, v.reinforce), (1.0, 0.0, 2.0, 2.5));
        let v = univariate_variance_oracle(2.0, 1.0, 1.0).unwrap();
        assert_eq!((v.bonnet, v.price, v.reparam, v.reinforce), (4.0, 0.0, 12.0, 18.0));
        assert!(univariate_variance_oracle(1.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn empirical_variance_examples() {
        assert_eq!(empirical_variance(|| 3.0, 10).unwrap(), 0.0);
        assert!(empirical_variance(|| 3.0, 1).is_err());
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [3.0, 5.0, 7.0, 9.0];
        let (m, b, r2) = linear_fit(&x, &y).unwrap();
        assert!((m - 2.0).abs() < 1e-12 && (b - 1.0).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
        assert!(linear_fit(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn product_rule_examples() {
        for (x, mu, s) in [(2.0, 0.0, 1.0), (-0.3, 1.0, 0.2), (5.0, 4.9, 3.0)] {
            let b = product_rule_b_gaussian(x, mu, s).unwrap();
            assert_eq!(b.b_mu, -1.0);
            // Oracle: ratio of the parameter score to the data score.
            let y: f64 = x - mu;
            let s2 = s * s;
            let d_theta_mu = y / s2;
            let d_theta_var = -0.5 / s2 + y * y / (2.0 * s2 * s2);
            let d_x = -y / s2;
            assert!((b.b_mu - d_theta_mu / d_x).abs() < 1e-14);
            assert!((b.b_var - d_theta_var / d_x).abs() < 1e-12 * (1.0 + b.b_var.abs()));
        }
        let b = product_rule_b_gaussian(2.0, 0.0, 1.0).unwrap();
        assert!((b.b_var + 0.75).abs() < 1e-15);
        assert!(matches!(
            product_rule_b_gaussian(1.0, 1.0, 1.0),
            Err(Error::Singularity(_))
        ));
    }

    #[test]
    fn product_rule_identity_on_quadratic() {
        // ∂/∂σ² E[c ξ²/2] = c/2 at μ = 0.
        let (c, sigma) = (3.0, 1.3);
        let n = 1_000_000;
        let mut s = RngStream::new(5);
        let draws: Vec<f64> = (0..n)
            .map(|_| {
                let x = sigma * s.normal();
                let f = 0.5 * c * x * x;
                let df = c * x;
                let b = product_rule_b_gaussian(x, 0.0, sigma).unwrap().b_var;
                let db = ProductRuleB::b_var_slope(x, 0.0, sigma);
                -(db * f + b * df)
            })
            .collect();
        let (m, var, _) = mean_and_variance(draws);
        assert!(within_band(m, c / 2.0, var, n), "{m}");

        // μ row reduces to the gradient identity
        let mu = 0.7;
        let draws: Vec<f64> = (0..200_000).map(|_| c * (mu + sigma * s.normal())).collect();
        let (m, var, n2) = mean_and_variance(draws);
        assert!(within_band(m, c * mu, var, n2));
    }

    #[test]
    fn location_scale_examples() {
        assert_eq!(
            location_scale_sample(LocationScale::Gaussian { mu: 1.5, scale: 2.0 }, 0.0).unwrap(),
            1.5
        );
        assert_eq!(
            location_scale_sample(LocationScale::GevAffine { m: 2.0, b: 1.0 }, 3.0).unwrap(),
            7.0
        );
        let mut s = RngStream::new(6);
        for _ in 0..100 {
            let x = s.exp1();
            assert_eq!(
                location_scale_sample(LocationScale::Weibull { lambda: 1.0, k: 1.0 }, x).unwrap(),
                x
            );
        }
        let w = LocationScale::Weibull { lambda: 2.0, k: 1.5 };
        let n = 1_000_000;
        let m = (0..n).map(|_| location_scale_sample(w, s.exp1()).unwrap()).sum::<f64>() / n as f64;
        // Γ(1 + 1/1.5) = Γ(5/3)
        let want = 2.0 * 0.902_745_292_950_933_6;
        assert!((m - want).abs() < 0.01 * want);
        assert!(location_scale_sample(LocationScale::Weibull { lambda: 0.0, k: 1.0 }, 1.0).is_err());
        assert!(location_scale_sample(LocationScale::Weibull { lambda: 1.0, k: -1.0 }, 1.0).is_err());
    }

    #[test]
    fn target_registration_rejects_wrong_gradient() {
        assert!(ScalarTarget::new(1, |x| x[0] * x[0], |x| vec![x[0]], None).is_err());
    }

    #[test]
    fn estimators_agree_on_mean_gradient() {
        let t = ScalarTarget::new(
            2,
            |x| (x[0] * x[1]).sin() + 0.5 * x[0] * x[0],
            |x| vec![x[1] * (x[0] * x[1]).cos() + x[0], x[0] * (x[0] * x[1]).cos()],
            None,
        )
        .unwrap();
        let mu = [0.3, -0.4];
        let sig = [0.8, 0.5];
        let q = RankOneGaussian::diagonal_from_std(mu.to_vec(), &sig).unwrap();
        let n = 200_000;
        let mut s = RngStream::new(7);
        let bon = bonnet_grad_mu(&t, &q, n, &mut s).unwrap();
        let mut sb = RngStream::new(8);
        let var_b: Vec<f64> = (0..2)
            .map(|i| empirical_variance(|| bonnet_grad_mu(&t, &q, 1, &mut sb).unwrap()[i], 20_000).unwrap())
            .collect();
        let rf = reinforce_grad(&t, &mu, &sig, 0.0, n, &mut s).unwrap();
        let var_r: Vec<f64> = (0..2)
            .map(|i| empirical_variance(|| reinforce_grad(&t, &mu, &sig, 0.0, 1, &mut sb).unwrap()[i], 20_000).unwrap())
            .collect();
        for i in 0..2 {
            let band = 4.0 * ((var_b[i] + var_r[i]) / n as f64).sqrt();
            assert!((bon[i] - rf[i]).abs() < band, "coordinate {i}: {} vs {}", bon[i], rf[i]);
        }
    }
}
