//! The `dlgm` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, ErrorClass, Result};
use crate::estimators::{linear_fit, variance_scaling_sweep, QuadraticTarget};
use crate::eval::{embed, impute_chain, make_mask, marginal_ll_is, posterior_grid, random_fill, GridSpec, MaskKind};
use crate::io::{
    binarize, emit_pgm_grid, load_idx_labels, load_model, parse_idx, reproducibility_stanza, save_model, write_csv,
    Binarize, MetricLog, ModelFile,
};
use crate::model::{Architecture, Dlgm};
use crate::numcore::{Matrix, RngStream};
use crate::objective::{gradient_check, EpsBundle};
use crate::params::Parameterized;
use crate::recognition::CovarianceMode;
use crate::trainer::{TrainConfig, TrainState, Trainer};

const GRADCHECK_TOL: f64 = 1e-6;

#[derive(Debug, Parser)]
#[command(
    name = "dlgm",
    version,
    about = "Deep latent Gaussian models trained by stochastic backpropagation"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON training configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// IDX image file.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long = "model-in", global = true)]
    pub model_in: Option<PathBuf>,
    #[arg(long = "model-out", global = true)]
    pub model_out: Option<PathBuf>,
    #[arg(long = "out-dir", global = true, default_value = ".")]
    pub out_dir: PathBuf,
    /// Binarization threshold, or `pre` for data that is already 0/1.
    #[arg(long, global = true, default_value = "0.5")]
    pub binarize: String,
    /// Use only the first N records of the data file.
    #[arg(long, global = true)]
    pub limit: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model (or resume a checkpoint given with --model-in).
    Train {
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        minibatch: Option<usize>,
    },
    /// Draw ancestral samples and write them as a PGM grid and CSV.
    Sample {
        #[arg(long, default_value_t = 64)]
        count: usize,
    },
    /// Importance-sampled log-likelihood of every data record.
    EvalLl {
        #[arg(long = "S", default_value_t = 1000)]
        samples: usize,
    },
    /// Fill in missing pixels by iterating the imputation chain.
    Impute {
        #[arg(long, default_value = "mar:0.6")]
        mask: MaskKind,
        #[arg(long, default_value_t = 100)]
        iters: usize,
        /// First record to impute.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, default_value_t = 8)]
        count: usize,
    },
    /// Posterior means of a 2-D latent model.
    Embed {
        /// IDX label file written as a third column.
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Exact posterior weights over a grid in a 2-D latent space.
    PosteriorGrid {
        #[arg(long, default_value = "-3,3,41", allow_hyphen_values = true)]
        grid: GridSpec,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Check every gradient of the free energy against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 4)]
        visible: usize,
        #[arg(long, default_value_t = 3)]
        latent: usize,
        #[arg(long, default_value_t = 5)]
        hidden: usize,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
    },
    /// Estimator variance as the latent dimension grows.
    Varbench {
        /// Comma-separated dimensions.
        #[arg(long = "K-sweep", default_value = "1,2,4,8,16,32,64,128,256", value_delimiter = ',')]
        k_sweep: Vec<usize>,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
    },
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Usage => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numeric => 3,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    std::fs::create_dir_all(&c.out_dir)?;
    match &cli.command {
        Command::Train { steps, minibatch } => train(c, *steps, *minibatch),
        Command::Sample { count } => sample(c, *count),
        Command::EvalLl { samples } => eval_ll(c, *samples),
        Command::Impute {
            mask,
            iters,
            index,
            count,
        } => impute(c, *mask, *iters, *index, *count),
        Command::Embed { labels } => embed_cmd(c, labels.as_deref()),
        Command::PosteriorGrid { grid, index } => grid_cmd(c, *grid, *index),
        Command::Gradcheck {
            visible,
            latent,
            hidden,
            step,
        } => gradcheck(c, *visible, *latent, *hidden, *step),
        Command::Varbench { k_sweep, trials } => varbench(c, k_sweep, *trials),
    }
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required for this command")))
}

struct Dataset {
    x: Matrix,
    image_shape: Option<(usize, usize)>,
}

fn load_data(c: &Common) -> Result<Dataset> {
    let arr = parse_idx(&std::fs::read(required(&c.data, "data")?)?)?;
    let n = arr.dims[0].min(c.limit.unwrap_or(usize::MAX));
    let d: usize = arr.dims[1..].iter().product();
    if d == 0 {
        return Err(Error::Data("records have no pixels".into()));
    }
    let raw = Matrix::new(n, d, arr.data[..n * d].iter().map(|&b| b as f64 / 255.0).collect())?;
    let mode = match c.binarize.as_str() {
        "pre" => Binarize::PreBinarized,
        t => Binarize::Threshold(
            t.parse()
                .map_err(|_| Error::InvalidArgument(format!("--binarize {t:?} is neither a number nor `pre`")))?,
        ),
    };
    let image_shape = match arr.dims[1..] {
        [h, w] => Some((h, w)),
        _ => None,
    };
    Ok(Dataset {
        x: binarize(&raw, mode)?,
        image_shape,
    })
}

fn load_config(c: &Common) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &c.config {
        Some(p) => TrainConfig::from_json(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_model_file(c: &Common) -> Result<ModelFile> {
    load_model(required(&c.model_in, "model-in")?)
}

/// Loads the model, then data of matching width.
fn load_model_and_data(c: &Common) -> Result<(ModelFile, Dataset)> {
    let file = load_model_file(c)?;
    let data = load_data(c)?;
    if data.x.cols() != file.model.visible_dim() {
        return Err(Error::Data(format!(
            "records have {} values, the model expects {}",
            data.x.cols(),
            file.model.visible_dim()
        )));
    }
    Ok((file, data))
}

fn seed_stream(c: &Common, file: &ModelFile) -> RngStream {
    RngStream::new(c.seed.unwrap_or(file.seed))
}

/// `(height, width)` for display; falls back to a single row.
fn display_shape(file: &ModelFile) -> (usize, usize) {
    file.image_shape.unwrap_or((1, file.model.visible_dim()))
}

fn train(c: &Common, steps: Option<u64>, minibatch: Option<usize>) -> Result<()> {
    let mut cfg = load_config(c)?;
    if let Some(s) = steps {
        cfg.steps = s;
    }
    if let Some(b) = minibatch {
        cfg.minibatch = b;
    }
    cfg.validate()?;
    let config_json = serde_json::to_string(&cfg)?;
    let data = load_data(c)?;
    let state = match &c.model_in {
        Some(p) => {
            let f = load_model(p)?;
            if f.model.visible_dim() != data.x.cols() {
                return Err(Error::Data(format!(
                    "records have {} values, the checkpoint expects {}",
                    data.x.cols(),
                    f.model.visible_dim()
                )));
            }
            let opt = f
                .optimizer
                .ok_or_else(|| Error::ModelFormat("model file has no optimizer state and cannot be resumed".into()))?;
            TrainState {
                model: f.model,
                opt,
                step: f.step,
            }
        }
        None => TrainState::initial(&cfg, data.x.cols())?,
    };
    let metric_path = cfg.metric_log.clone().unwrap_or_else(|| c.out_dir.join("metrics.csv"));
    let mut log = MetricLog::create(&metric_path, &reproducibility_stanza(cfg.seed, &config_json))?;
    let checkpoint = |state: &TrainState, path: &Path| -> Result<()> {
        save_model(
            path,
            &ModelFile {
                model: state.model.clone(),
                seed: cfg.seed,
                step: state.step,
                image_shape: data.image_shape,
                optimizer: Some(state.opt.clone()),
            },
        )
    };
    let every = cfg.checkpoint_every;
    let mut trainer = Trainer::new(cfg.clone(), &data.x, state)?;
    let trace = trainer.run(|row, state| {
        log.append(row)?;
        if every > 0 && row.step % every == 0 {
            checkpoint(state, &c.out_dir.join(format!("checkpoint-{}.dlgm", row.step)))?;
        }
        Ok(())
    })?;
    let out = c.model_out.clone().unwrap_or_else(|| c.out_dir.join("model.dlgm"));
    checkpoint(&trainer.state, &out)?;
    if let Some(last) = trace.last() {
        println!(
            "step {}: free energy per point {:.4}",
            last.step,
            (last.recon + last.latent_kl) / cfg.minibatch as f64
        );
    }
    println!("model written to {}", out.display());
    Ok(())
}

fn grid_cols(n: usize) -> usize {
    (n as f64).sqrt().ceil().max(1.0) as usize
}

fn sample(c: &Common, count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidArgument("--count must be ≥ 1".into()));
    }
    let file = load_model_file(c)?;
    let mut s = seed_stream(c, &file);
    let gen = &file.model.generative;
    let images: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let xi = gen.ancestral_sample(&mut s).xi;
            gen.top_down(&xi).map(|td| gen.obs.mean(td.obs_params()))
        })
        .collect::<Result<_>>()?;
    let (h, w) = display_shape(&file);
    let cols = grid_cols(count);
    emit_pgm_grid(&images, h, w, count.div_ceil(cols), cols, c.out_dir.join("samples.pgm"))?;
    let header: Vec<String> = (0..gen.visible_dim()).map(|i| format!("p{i}")).collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_csv(
        c.out_dir.join("samples.csv"),
        &reproducibility_stanza(c.seed.unwrap_or(file.seed), ""),
        &header,
        &images,
    )?;
    println!("{count} samples written to {}", c.out_dir.display());
    Ok(())
}

fn eval_ll(c: &Common, samples: usize) -> Result<()> {
    let (file, data) = load_model_and_data(c)?;
    let s = seed_stream(c, &file);
    let mut rows = Vec::with_capacity(data.x.rows());
    for n in 0..data.x.rows() {
        let ll = marginal_ll_is(&file.model, data.x.row(n), samples, &mut s.derive(n as u64))?;
        rows.push(vec![n as f64, ll]);
    }
    let mean = rows.iter().map(|r| r[1]).sum::<f64>() / rows.len().max(1) as f64;
    write_csv(
        c.out_dir.join("log_likelihood.csv"),
        &reproducibility_stanza(c.seed.unwrap_or(file.seed), &format!("{{\"S\":{samples}}}")),
        &["index", "log_p"],
        &rows,
    )?;
    println!("mean log p(v) over {} records: {mean:.4} (S = {samples})", rows.len());
    Ok(())
}

fn check_index(index: usize, count: usize, available: usize) -> Result<()> {
    if count == 0 || index + count > available {
        return Err(Error::InvalidArgument(format!(
            "records {index}..{} requested, data has {available}",
            index + count
        )));
    }
    Ok(())
}

fn impute(c: &Common, mask: MaskKind, iters: usize, index: usize, count: usize) -> Result<()> {
    let (file, data) = load_model_and_data(c)?;
    check_index(index, count, data.x.rows())?;
    let (h, w) = display_shape(&file);
    let mut s = seed_stream(c, &file);
    let snapshots = 10.min(iters.max(1));
    let mut images = Vec::new();
    let mut rows = Vec::new();
    for n in index..index + count {
        let truth = data.x.row(n);
        let m = make_mask(mask, h, w, &mut s)?;
        let start = random_fill(truth, &m, &mut s);
        let run = impute_chain(
            &file.model.generative,
            &file.model.recognition,
            &start,
            &m,
            iters,
            &mut s,
        )?;
        images.push(truth.to_vec());
        images.push(start.clone());
        for k in 1..=snapshots {
            images.push(run.means[k * iters / snapshots].clone());
        }
        let missing = m.missing_count().max(1) as f64;
        for (t, v) in run.sampled.iter().enumerate() {
            let correct = (0..truth.len()).filter(|&i| !m.observed[i] && v[i] == truth[i]).count() as f64;
            rows.push(vec![n as f64, t as f64, correct / missing]);
        }
    }
    emit_pgm_grid(&images, h, w, count, snapshots + 2, c.out_dir.join("impute.pgm"))?;
    write_csv(
        c.out_dir.join("impute.csv"),
        &reproducibility_stanza(c.seed.unwrap_or(file.seed), ""),
        &["index", "iter", "missing_accuracy"],
        &rows,
    )?;
    println!("imputations written to {}", c.out_dir.display());
    Ok(())
}

fn embed_cmd(c: &Common, labels: Option<&Path>) -> Result<()> {
    let (file, data) = load_model_and_data(c)?;
    let e = embed(&file.model.recognition, &data.x)?;
    let labels = labels.map(load_idx_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() < e.rows() {
            return Err(Error::Data(format!("{} labels for {} records", l.len(), e.rows())));
        }
    }
    let rows: Vec<Vec<f64>> = (0..e.rows())
        .map(|n| {
            let mut r = e.row(n).to_vec();
            if let Some(l) = &labels {
                r.push(l[n] as f64);
            }
            r
        })
        .collect();
    let header: &[&str] = if labels.is_some() {
        &["z0", "z1", "label"]
    } else {
        &["z0", "z1"]
    };
    write_csv(
        c.out_dir.join("embedding.csv"),
        &reproducibility_stanza(file.seed, ""),
        header,
        &rows,
    )?;
    println!("{} embeddings written to {}", rows.len(), c.out_dir.display());
    Ok(())
}

fn grid_cmd(c: &Common, grid: GridSpec, index: usize) -> Result<()> {
    let (file, data) = load_model_and_data(c)?;
    check_index(index, 1, data.x.rows())?;
    let w = posterior_grid(&file.model.generative, data.x.row(index), grid)?;
    let r = grid.resolution;
    let rows: Vec<Vec<f64>> = (0..r * r)
        .map(|k| vec![grid.point(k / r), grid.point(k % r), w.data()[k]])
        .collect();
    write_csv(
        c.out_dir.join("posterior_grid.csv"),
        &reproducibility_stanza(file.seed, ""),
        &["xi0", "xi1", "weight"],
        &rows,
    )?;
    let peak = w.data().iter().cloned().fold(0.0, f64::max);
    let scaled: Vec<f64> = w.data().iter().map(|x| x / peak).collect();
    emit_pgm_grid(&[scaled], r, r, 1, 1, c.out_dir.join("posterior_grid.pgm"))?;
    println!("posterior grid for record {index} written to {}", c.out_dir.display());
    Ok(())
}

fn gradcheck(c: &Common, visible: usize, latent: usize, hidden: usize, step: f64) -> Result<()> {
    if visible == 0 || latent == 0 || hidden == 0 {
        return Err(Error::InvalidArgument("layer widths must be ≥ 1".into()));
    }
    let seed = c.seed.unwrap_or(0);
    let mut s = RngStream::new(seed);
    let batch = Matrix::from_fn(3, visible, |_, _| if s.bernoulli(0.5) { 1.0 } else { 0.0 });
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for (m, mode) in [CovarianceMode::Diagonal, CovarianceMode::RankOne]
        .into_iter()
        .enumerate()
    {
        let arch = Architecture::standard(
            visible,
            &[latent],
            hidden,
            crate::layer::Activation::Tanh,
            crate::generative::ObservationFamily::BernoulliLogits,
            mode,
        );
        let mut model = Dlgm::new(&arch, 4.0)?;
        model.visit_params_mut(&mut |_, p| p.data_mut().iter_mut().for_each(|x| *x = 0.5 * s.normal()));
        let eps = EpsBundle::draw(&model.latent_dims(), batch.rows(), 1, 0.0, &mut s);
        let report = gradient_check(&model, &batch, &eps, 1.0, step)?;
        let max = report.iter().map(|r| r.rel_err).fold(0.0, f64::max);
        println!("{mode}: {} coordinates, max relative error {max:.3e}", report.len());
        worst = worst.max(max);
        rows.extend(
            report
                .iter()
                .enumerate()
                .map(|(i, r)| vec![m as f64, i as f64, r.analytic, r.numeric, r.rel_err]),
        );
    }
    write_csv(
        c.out_dir.join("gradcheck.csv"),
        &reproducibility_stanza(seed, ""),
        &["mode", "coord", "analytic", "numeric", "rel_err"],
        &rows,
    )?;
    if !(worst <= GRADCHECK_TOL) {
        return Err(Error::GradientCheck(format!(
            "max relative error {worst:.3e} exceeds {GRADCHECK_TOL:e}"
        )));
    }
    Ok(())
}

fn varbench(c: &Common, ks: &[usize], trials: usize) -> Result<()> {
    let seed = c.seed.unwrap_or(0);
    let rows = variance_scaling_sweep(
        ks,
        trials,
        QuadraticTarget { c: 1.0 },
        0.0,
        1.0,
        &mut RngStream::new(seed),
    )?;
    let table: Vec<Vec<f64>> = rows.iter().map(|r| vec![r.k as f64, r.gbp, r.reinforce]).collect();
    write_csv(
        c.out_dir.join("varbench.csv"),
        &reproducibility_stanza(seed, &format!("{{\"trials\":{trials}}}")),
        &["k", "gbp_variance", "reinforce_variance"],
        &table,
    )?;
    for r in &rows {
        println!("K = {:4}: GBP {:.4}  REINFORCE {:.4}", r.k, r.gbp, r.reinforce);
    }
    if rows.len() >= 2 {
        let x: Vec<f64> = rows.iter().map(|r| r.k as f64).collect();
        let y: Vec<f64> = rows.iter().map(|r| r.reinforce).collect();
        let (slope, _, r2) = linear_fit(&x, &y)?;
        println!("REINFORCE variance vs K: slope {slope:.4}, R² {r2:.4}");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_class() {
        assert_eq!(exit_code(&Error::InvalidArgument("x".into())), 1);
        assert_eq!(exit_code(&Error::Checksum), 2);
        assert_eq!(exit_code(&Error::NonFinite("x".into())), 3);
    }

    #[test]
    fn parse_errors_are_usage_errors() {
        assert_eq!(run(["dlgm", "no-such-command"]), 1);
        assert_eq!(run(["dlgm", "impute", "--mask", "blob:3"]), 1);
        assert_eq!(run(["dlgm", "--help"]), 0);
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from([
            "dlgm",
            "varbench",
            "--K-sweep",
            "1,4,16",
            "--seed",
            "3",
            "--out-dir",
            "/tmp/x",
        ])
        .unwrap();
        assert_eq!(cli.common.seed, Some(3));
        match cli.command {
            Command::Varbench { k_sweep, .. } => assert_eq!(k_sweep, vec![1, 4, 16]),
            _ => panic!("wrong command"),
        }
        let cli = Cli::try_parse_from(["dlgm", "eval-ll", "--S", "50", "--model-in", "m"]).unwrap();
        assert!(matches!(cli.command, Command::EvalLl { samples: 50 }));
    }
}
