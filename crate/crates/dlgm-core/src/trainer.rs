//! Joint stochastic optimization of both networks with RMSprop.
//!
//! Every random quantity used at step `k` is drawn from a stream derived from
//! `(seed, k)`, and the data permutation for epoch `e` from `(seed, e)`, so a
//! run resumed from a checkpoint replays exactly the draws of an
//! uninterrupted run.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generative::ObservationFamily;
use crate::layer::Activation;
use crate::model::{Architecture, Dlgm};
use crate::numcore::{Matrix, RngStream};
use crate::objective::{free_energy_and_grad_with_inputs, EpsBundle, FreeEnergyTerms};
use crate::params::{GradientSet, Parameterized};
use crate::recognition::{corrupt, Corruption, CovarianceMode};

const EPOCH_TAG: u64 = 0x0e90c;
const STEP_TAG: u64 = 0x05e9;
const EARLY_STOP_WINDOW: usize = 100;
const EARLY_STOP_TOL: f64 = 1e-4;

/// RMSprop accumulators, one per parameter array.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    acc: GradientSet,
    pub rho: f64,
    pub alpha: f64,
    pub delta: f64,
}

impl OptimizerState {
    pub fn new(params: &dyn Parameterized, alpha: f64, rho: f64, delta: f64) -> Result<Self> {
        let mut acc = GradientSet::collect(params);
        acc.scale(0.0);
        Self::from_parts(acc, alpha, rho, delta)
    }

    pub fn from_parts(acc: GradientSet, alpha: f64, rho: f64, delta: f64) -> Result<Self> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "RMSprop decay ρ = {rho} must lie in (0, 1)"
            )));
        }
        if !(alpha > 0.0) || !(delta > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "RMSprop step α = {alpha} and floor δ = {delta} must be > 0"
            )));
        }
        if acc.iter().any(|(_, m)| m.data().iter().any(|&r| !(r >= 0.0))) {
            return Err(Error::InvalidArgument("RMSprop accumulators must be ≥ 0".into()));
        }
        Ok(OptimizerState { acc, rho, alpha, delta })
    }

    pub fn accumulators(&self) -> &GradientSet {
        &self.acc
    }
}

/// `r ← ρ r + (1−ρ) g²;  θ ← θ − α g / (√r + δ)`, elementwise.
pub fn rmsprop_step(state: &mut OptimizerState, params: &mut dyn Parameterized, grads: &GradientSet) -> Result<()> {
    if grads.len() != state.acc.len() {
        return Err(Error::InvalidArgument(format!(
            "gradient set has {} arrays, optimizer tracks {}",
            grads.len(),
            state.acc.len()
        )));
    }
    for ((name, g), (rname, r)) in grads.iter().zip(state.acc.iter()) {
        if name != rname || g.shape() != r.shape() {
            return Err(Error::InvalidArgument(format!(
                "gradient {name} does not align with optimizer slot {rname}"
            )));
        }
    }
    let (rho, alpha, delta) = (state.rho, state.alpha, state.delta);
    let mut failure = None;
    params.visit_params_mut(&mut |name, p| {
        let (Some(g), Some(r)) = (grads.get(&name), state.acc.get_mut(&name)) else {
            failure.get_or_insert(name);
            return;
        };
        if g.shape() != p.shape() {
            failure.get_or_insert(name);
            return;
        }
        for ((theta, &gi), ri) in p.data_mut().iter_mut().zip(g.data()).zip(r.data_mut()) {
            *ri = rho * *ri + (1.0 - rho) * gi * gi;
            *theta -= alpha * gi / (ri.sqrt() + delta);
        }
    });
    match failure {
        Some(name) => Err(Error::InvalidArgument(format!("no gradient for parameter {name}"))),
        None => Ok(()),
    }
}

/// Every weight ~ N(0, σ²); biases, log-variances and log-precision biases 0.
pub fn init_params(model: &mut Dlgm, sigma: f64, stream: &mut RngStream) -> Result<()> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "initialization σ = {sigma} must be > 0"
        )));
    }
    model.init(sigma, stream);
    Ok(())
}

fn default_minibatch() -> usize {
    200
}
fn default_steps() -> u64 {
    2000
}
fn default_alpha() -> f64 {
    1e-3
}
fn default_rho() -> f64 {
    0.9
}
fn default_delta() -> f64 {
    1e-6
}
fn default_kappa() -> f64 {
    1e6
}
fn default_init_sigma() -> f64 {
    0.01
}
fn default_jitter() -> f64 {
    0.01
}
fn default_latent() -> Vec<usize> {
    vec![20]
}
fn default_hidden() -> usize {
    64
}
fn default_activation() -> Activation {
    Activation::Rectifier
}
fn default_observation() -> ObservationFamily {
    ObservationFamily::BernoulliLogits
}
fn default_covariance() -> CovarianceMode {
    CovarianceMode::Diagonal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default = "default_init_sigma")]
    pub init_sigma: f64,
    /// Input corruption applied to the encoder input at train time.
    #[serde(default)]
    pub corruption: Option<Corruption>,
    /// Standard deviation of the Gaussian jitter added to posterior samples.
    #[serde(default = "default_jitter")]
    pub jitter_sigma: f64,
    #[serde(default = "default_covariance")]
    pub covariance: CovarianceMode,
    #[serde(default = "default_latent")]
    pub latent_dims: Vec<usize>,
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_observation")]
    pub observation: ObservationFamily,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub metric_log: Option<std::path::PathBuf>,
    /// Write a checkpoint every this many steps (0 disables).
    #[serde(default)]
    pub checkpoint_every: u64,
    #[serde(default)]
    pub early_stop: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    /// Parses and validates a JSON configuration; absent keys take defaults.
    pub fn from_json(json: &str) -> Result<Self> {
        let cfg: TrainConfig =
            serde_json::from_str(json).map_err(|e| Error::InvalidArgument(format!("configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.minibatch == 0 {
            return Err(Error::InvalidArgument("minibatch must be ≥ 1".into()));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("kappa", self.kappa),
            ("init_sigma", self.init_sigma),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidArgument(format!("{name} = {v} must be > 0")));
            }
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidArgument(format!("rho = {} must lie in (0, 1)", self.rho)));
        }
        if !(self.jitter_sigma >= 0.0) {
            return Err(Error::InvalidArgument("jitter_sigma must be ≥ 0".into()));
        }
        if self.latent_dims.is_empty() || self.latent_dims.contains(&0) || self.hidden == 0 {
            return Err(Error::InvalidArgument("layer widths must be ≥ 1".into()));
        }
        if let Some(c) = &self.corruption {
            c.validate()?;
        }
        Ok(())
    }

    pub fn architecture(&self, visible_dim: usize) -> Architecture {
        Architecture::standard(
            visible_dim,
            &self.latent_dims,
            self.hidden,
            self.activation,
            self.observation,
            self.covariance,
        )
    }
}

/// One line of the metric log. `recon` and `latent_kl` are minibatch sums.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub total: f64,
    pub recon: f64,
    pub latent_kl: f64,
    pub param_reg: f64,
    pub wall_ms: f64,
}

impl MetricRow {
    /// Everything except wall-clock time, for replay comparisons.
    pub fn key(&self) -> (u64, u64, u64, u64, u64) {
        (
            self.step,
            self.total.to_bits(),
            self.recon.to_bits(),
            self.latent_kl.to_bits(),
            self.param_reg.to_bits(),
        )
    }
}

/// Everything a checkpoint must hold to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: Dlgm,
    pub opt: OptimizerState,
    /// Number of completed steps.
    pub step: u64,
}

impl TrainState {
    /// Fresh, initialized state for `config` on data of width `visible_dim`.
    pub fn initial(config: &TrainConfig, visible_dim: usize) -> Result<Self> {
        config.validate()?;
        let mut model = Dlgm::new(&config.architecture(visible_dim), config.kappa)?;
        init_params(
            &mut model,
            config.init_sigma,
            &mut RngStream::new(config.seed).derive(0x1417),
        )?;
        let opt = OptimizerState::new(&model, config.alpha, config.rho, config.delta)?;
        Ok(TrainState { model, opt, step: 0 })
    }
}

pub struct Trainer<'a> {
    config: TrainConfig,
    data: &'a Matrix,
    pub state: TrainState,
    epoch_cache: Option<(u64, Vec<usize>)>,
    history: VecDeque<f64>,
    started: Instant,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, data: &'a Matrix, state: TrainState) -> Result<Self> {
        config.validate()?;
        if data.rows() == 0 {
            return Err(Error::Data("training set is empty".into()));
        }
        if config.minibatch > data.rows() {
            return Err(Error::InvalidArgument(format!(
                "minibatch {} exceeds the {} training points",
                config.minibatch,
                data.rows()
            )));
        }
        crate::error::check_dim("training data width", state.model.visible_dim(), data.cols())?;
        Ok(Trainer {
            config,
            data,
            state,
            epoch_cache: None,
            history: VecDeque::new(),
            started: Instant::now(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Dataset size over minibatch size.
    pub fn lambda(&self) -> f64 {
        self.data.rows() as f64 / self.config.minibatch as f64
    }

    fn batches_per_epoch(&self) -> u64 {
        (self.data.rows() / self.config.minibatch) as u64
    }

    /// Row indices of the minibatch used at `step` (sampling without
    /// replacement within an epoch; a trailing partial batch is skipped).
    pub fn batch_indices(&mut self, step: u64) -> Vec<usize> {
        let bpe = self.batches_per_epoch();
        let epoch = step / bpe;
        let slot = (step % bpe) as usize;
        if self.epoch_cache.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.data.rows()).collect();
            RngStream::new(self.config.seed)
                .derive(EPOCH_TAG)
                .derive(epoch)
                .shuffle(&mut perm);
            self.epoch_cache = Some((epoch, perm));
        }
        let perm = &self.epoch_cache.as_ref().expect("filled").1;
        let b = self.config.minibatch;
        perm[slot * b..(slot + 1) * b].to_vec()
    }

    /// The batch, encoder inputs and noise used at `step`.
    pub fn draws_for_step(&mut self, step: u64) -> Result<(Matrix, Matrix, EpsBundle)> {
        let idx = self.batch_indices(step);
        let d = self.data.cols();
        let mut batch = Matrix::zeros(idx.len(), d);
        for (r, &i) in idx.iter().enumerate() {
            batch.row_mut(r).copy_from_slice(self.data.row(i));
        }
        let mut s = RngStream::new(self.config.seed).derive(STEP_TAG).derive(step);
        let inputs = match &self.config.corruption {
            Some(c) => {
                let mut x = batch.clone();
                for r in 0..x.rows() {
                    let noisy = corrupt(c, batch.row(r), &mut s)?;
                    x.row_mut(r).copy_from_slice(&noisy);
                }
                x
            }
            None => batch.clone(),
        };
        let eps = EpsBundle::draw(
            &self.state.model.latent_dims(),
            idx.len(),
            1,
            self.config.jitter_sigma,
            &mut s,
        );
        Ok((batch, inputs, eps))
    }

    /// One joint update of both networks.
    pub fn step(&mut self) -> Result<MetricRow> {
        let k = self.state.step;
        let (batch, inputs, eps) = self.draws_for_step(k)?;
        let lambda = self.lambda();
        let (terms, grads) = free_energy_and_grad_with_inputs(&self.state.model, &inputs, &batch, &eps, lambda)?;
        check_terms(&terms, k)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite(format!("gradient at step {k}")));
        }
        rmsprop_step(&mut self.state.opt, &mut self.state.model, &grads)?;
        self.state.step += 1;
        Ok(MetricRow {
            step: self.state.step,
            total: terms.total,
            recon: terms.recon,
            latent_kl: terms.latent_kl,
            param_reg: terms.param_reg,
            wall_ms: self.started.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Runs until `config.steps` total steps (or early stop), calling
    /// `on_row` after every step.
    pub fn run(&mut self, mut on_row: impl FnMut(&MetricRow, &TrainState) -> Result<()>) -> Result<Vec<MetricRow>> {
        let mut trace = Vec::new();
        while self.state.step < self.config.steps {
            let row = self.step()?;
            on_row(&row, &self.state)?;
            trace.push(row);
            if self.config.early_stop && self.converged(row.total) {
                break;
            }
        }
        Ok(trace)
    }

    /// True once the moving average of the last window improved on the
    /// previous window by less than the relative tolerance.
    fn converged(&mut self, total: f64) -> bool {
        self.history.push_back(total);
        if self.history.len() > 2 * EARLY_STOP_WINDOW {
            self.history.pop_front();
        }
        if self.history.len() < 2 * EARLY_STOP_WINDOW {
            return false;
        }
        let prev: f64 = self.history.iter().take(EARLY_STOP_WINDOW).sum::<f64>() / EARLY_STOP_WINDOW as f64;
        let cur: f64 = self.history.iter().skip(EARLY_STOP_WINDOW).sum::<f64>() / EARLY_STOP_WINDOW as f64;
        (prev - cur) < EARLY_STOP_TOL * prev.abs()
    }
}

fn check_terms(t: &FreeEnergyTerms, step: u64) -> Result<()> {
    for (name, v) in [
        ("reconstruction", t.recon),
        ("latent KL", t.latent_kl),
        ("parameter penalty", t.param_reg),
        ("total", t.total),
    ] {
        if !v.is_finite() {
            return Err(Error::NonFinite(format!("{name} term is {v} at step {step}")));
        }
    }
    Ok(())
}

/// Trains a freshly initialized model for `config.steps` steps.
pub fn train(config: &TrainConfig, data: &Matrix) -> Result<(TrainState, Vec<MetricRow>)> {
    let state = TrainState::initial(config, data.cols())?;
    let mut t = Trainer::new(config.clone(), data, state)?;
    let trace = t.run(|_, _| Ok(()))?;
    Ok((t.state, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::mean_and_variance;

    struct Two {
        a: Matrix,
    }

    impl Parameterized for Two {
        fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Matrix)) {
            f("a".into(), &self.a);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Matrix)) {
            f("a".into(), &mut self.a);
        }
    }

    fn grads(v: Vec<f64>) -> GradientSet {
        let mut g = GradientSet::new();
        g.insert("a".into(), Matrix::column(v));
        g
    }

    #[test]
    fn hand_computed_step() {
        let mut p = Two {
            a: Matrix::column(vec![1.0, -2.0]),
        };
        let mut st = OptimizerState::new(&p, 0.1, 0.9, 1e-6).unwrap();
        st.acc.get_mut("a").unwrap().data_mut().copy_from_slice(&[0.5, 0.0]);
        rmsprop_step(&mut st, &mut p, &grads(vec![2.0, -1.0])).unwrap();
        // r = 0.9·0.5 + 0.1·4 = 0.85;  r = 0.1·1 = 0.1
        let r = st.accumulators().get("a").unwrap().data().to_vec();
        assert!((r[0] - 0.85).abs() < 1e-15 && (r[1] - 0.1).abs() < 1e-15);
        let want0 = 1.0 - 0.1 * 2.0 / (0.85f64.sqrt() + 1e-6);
        let want1 = -2.0 + 0.1 * 1.0 / (0.1f64.sqrt() + 1e-6);
        assert!((p.a.data()[0] - want0).abs() < 1e-12);
        assert!((p.a.data()[1] - want1).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_only_decays() {
        let mut p = Two {
            a: Matrix::column(vec![1.0, 3.0]),
        };
        let mut st = OptimizerState::new(&p, 0.1, 0.9, 1e-6).unwrap();
        st.acc.get_mut("a").unwrap().data_mut().copy_from_slice(&[2.0, 1.0]);
        rmsprop_step(&mut st, &mut p, &grads(vec![0.0, 0.0])).unwrap();
        assert_eq!(p.a.data(), &[1.0, 3.0]);
        assert_eq!(st.accumulators().get("a").unwrap().data(), &[1.8, 0.9]);
    }

    #[test]
    fn constant_gradient_step_is_scale_free() {
        for g in [1e-3, 1.0, 1e4] {
            let mut p = Two {
                a: Matrix::column(vec![0.0]),
            };
            let mut st = OptimizerState::new(&p, 0.01, 0.9, 1e-6).unwrap();
            let mut last = 0.0;
            for _ in 0..500 {
                let before = p.a.data()[0];
                rmsprop_step(&mut st, &mut p, &grads(vec![g])).unwrap();
                last = before - p.a.data()[0];
            }
            assert!((last - 0.01 * g / (g + 1e-6)).abs() < 1e-9);
        }
    }

    #[test]
    fn misaligned_gradients_rejected() {
        let mut p = Two {
            a: Matrix::column(vec![0.0, 0.0]),
        };
        let mut st = OptimizerState::new(&p, 0.01, 0.9, 1e-6).unwrap();
        assert!(rmsprop_step(&mut st, &mut p, &grads(vec![1.0])).is_err());
        let mut other = GradientSet::new();
        other.insert("b".into(), Matrix::column(vec![1.0, 1.0]));
        assert!(rmsprop_step(&mut st, &mut p, &other).is_err());
        assert!(OptimizerState::new(&p, 0.01, 1.0, 1e-6).is_err());
        assert!(OptimizerState::new(&p, 0.0, 0.9, 1e-6).is_err());
    }

    fn toy_config() -> TrainConfig {
        TrainConfig {
            minibatch: 20,
            steps: 60,
            alpha: 1e-2,
            latent_dims: vec![2],
            hidden: 6,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn toy_binary_data(n: usize, seed: u64) -> Matrix {
        let mut s = RngStream::new(seed);
        Matrix::from_fn(n, 8, |i, j| {
            let proto = (i % 2 == 0) == (j < 4);
            let p = if proto { 0.9 } else { 0.1 };
            if s.bernoulli(p) {
                1.0
            } else {
                0.0
            }
        })
    }

    #[test]
    fn initialization_statistics() {
        let arch = Architecture::standard(
            300,
            &[20],
            150,
            Activation::Rectifier,
            ObservationFamily::BernoulliLogits,
            CovarianceMode::RankOne,
        );
        let mut a = Dlgm::new(&arch, 1.0).unwrap();
        let mut b = a.clone();
        init_params(&mut a, 0.01, &mut RngStream::new(1)).unwrap();
        init_params(&mut b, 0.01, &mut RngStream::new(1)).unwrap();
        assert_eq!(a, b);
        let mut weights = Vec::new();
        a.visit_params(&mut |name, m| {
            if name.ends_with(".b") {
                assert!(m.data().iter().all(|&x| x == 0.0), "{name}");
            } else {
                weights.extend_from_slice(m.data());
            }
        });
        assert!(weights.len() >= 100_000);
        let (_, var, _) = mean_and_variance(weights);
        assert!((var.sqrt() - 0.01).abs() < 0.02 * 0.01);
        for g in a.recognition.encode(&vec![1.0; 300]).unwrap() {
            // log-d bias 0 and tiny weights: d ≈ 1
            assert!(g.d().iter().all(|&d| (d - 1.0).abs() < 0.5));
        }
        assert!(init_params(&mut a, 0.0, &mut RngStream::new(1)).is_err());
    }

    #[test]
    fn same_seed_same_trace() {
        let data = toy_binary_data(100, 1);
        let (_, t1) = train(&toy_config(), &data).unwrap();
        let (_, t2) = train(&toy_config(), &data).unwrap();
        assert_eq!(t1.len(), 60);
        assert!(t1.iter().map(MetricRow::key).eq(t2.iter().map(MetricRow::key)));
        let other = TrainConfig {
            seed: 6,
            ..toy_config()
        };
        let (_, t3) = train(&other, &data).unwrap();
        assert!(!t1.iter().map(MetricRow::key).eq(t3.iter().map(MetricRow::key)));
    }

    #[test]
    fn step_is_gradient_then_rmsprop() {
        let data = toy_binary_data(100, 2);
        let cfg = TrainConfig {
            corruption: Some(Corruption::BitFlip { rate: 0.1 }),
            ..toy_config()
        };
        let state = TrainState::initial(&cfg, 8).unwrap();
        let mut t = Trainer::new(cfg.clone(), &data, state.clone()).unwrap();
        // Manual composition with the same draws.
        let (batch, inputs, eps) = t.draws_for_step(0).unwrap();
        assert_ne!(batch, inputs);
        let (_, g) = free_energy_and_grad_with_inputs(&state.model, &inputs, &batch, &eps, t.lambda()).unwrap();
        let mut manual = state.clone();
        rmsprop_step(&mut manual.opt, &mut manual.model, &g).unwrap();
        t.step().unwrap();
        let a = t.state.model.to_flat();
        let b = manual.model.to_flat();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() <= 1e-12);
        }
        // Both networks moved.
        let moved = |x: &dyn Parameterized, y: &dyn Parameterized| x.to_flat() != y.to_flat();
        assert!(moved(&t.state.model.generative, &state.model.generative));
        assert!(moved(&t.state.model.recognition, &state.model.recognition));
    }

    #[test]
    fn epochs_sample_without_replacement() {
        let data = toy_binary_data(100, 3);
        let cfg = toy_config();
        let state = TrainState::initial(&cfg, 8).unwrap();
        let mut t = Trainer::new(cfg, &data, state).unwrap();
        let mut seen: Vec<usize> = (0..5).flat_map(|k| t.batch_indices(k)).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..100).collect::<Vec<_>>());
        let next: Vec<usize> = (5..10).flat_map(|k| t.batch_indices(k)).collect();
        let first: Vec<usize> = (0..5).flat_map(|k| t.batch_indices(k)).collect();
        assert_ne!(next, first);
    }

    #[test]
    fn resume_matches_uninterrupted() {
        let data = toy_binary_data(100, 4);
        let cfg = toy_config();
        let (_, full) = train(&cfg, &data).unwrap();

        let half = TrainConfig {
            steps: 25,
            ..cfg.clone()
        };
        let (mid, first) = train(&half, &data).unwrap();
        let mut t = Trainer::new(cfg, &data, mid).unwrap();
        let rest = t.run(|_, _| Ok(())).unwrap();
        let joined: Vec<_> = first.iter().chain(&rest).map(MetricRow::key).collect();
        assert_eq!(joined, full.iter().map(MetricRow::key).collect::<Vec<_>>());
    }

    #[test]
    fn linear_gaussian_free_energy_drops() {
        // v = w ξ + noise with ξ scalar.
        let mut s = RngStream::new(7);
        let w: Vec<f64> = (0..5).map(|_| 2.0 * s.normal()).collect();
        let data = Matrix::from_fn(400, 5, |_, _| 0.0);
        let mut data = data;
        for r in 0..400 {
            let z = s.normal();
            for j in 0..5 {
                data.set(r, j, w[j] * z + 0.1 * s.normal());
            }
        }
        let cfg = TrainConfig {
            minibatch: 20,
            steps: 500,
            alpha: 3e-2,
            latent_dims: vec![1],
            hidden: 8,
            observation: ObservationFamily::GaussianDiagonal,
            covariance: CovarianceMode::RankOne,
            seed: 8,
            ..TrainConfig::default()
        };
        let (_, trace) = train(&cfg, &data).unwrap();
        let per_point = |r: &MetricRow| (r.recon + r.latent_kl) / cfg.minibatch as f64;
        let early: f64 = trace[..10].iter().map(per_point).sum::<f64>() / 10.0;
        let late: f64 = trace[trace.len() - 10..].iter().map(per_point).sum::<f64>() / 10.0;
        assert!(late <= 0.7 * early, "early {early}, late {late}");
    }

    #[test]
    fn early_stop_halts_on_plateau() {
        let data = toy_binary_data(40, 9);
        let cfg = TrainConfig {
            steps: 100_000,
            alpha: 1e-9,
            early_stop: true,
            jitter_sigma: 0.0,
            ..toy_config()
        };
        let state = TrainState::initial(&cfg, 8).unwrap();
        let mut t = Trainer::new(cfg, &data, state).unwrap();
        let trace = t.run(|_, _| Ok(())).unwrap();
        assert!(trace.len() < 100_000);
        assert!(trace.len() >= 2 * EARLY_STOP_WINDOW);
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = TrainConfig::default();
        assert_eq!(c.minibatch, 200);
        assert_eq!(c.kappa, 1e6);
        assert_eq!((c.alpha, c.rho, c.delta), (1e-3, 0.9, 1e-6));
        assert_eq!(c.init_sigma, 0.01);
        assert!(TrainConfig {
            minibatch: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { rho: 1.0, ..c.clone() }.validate().is_err());
        assert!(serde_json::from_str::<TrainConfig>(r#"{"bogus": 1}"#).is_err());
        let parsed: TrainConfig =
            serde_json::from_str(r#"{"minibatch": 10, "corruption": {"kind": "bit-flip", "rate": 0.2}}"#).unwrap();
        assert_eq!(parsed.corruption, Some(Corruption::BitFlip { rate: 0.2 }));
        let data = toy_binary_data(10, 1);
        let state = TrainState::initial(&c, 8).unwrap();
        assert!(Trainer::new(c, &data, state).is_err());
    }
}
