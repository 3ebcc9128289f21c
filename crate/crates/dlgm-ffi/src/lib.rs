//! C interface to the dlgm library.
//!
//! Every fallible function returns a [`DlgmStatus`]; on failure a message is
//! available from [`dlgm_last_error_message`] on the same thread. Models are
//! opaque [`DlgmModel`] handles released with [`dlgm_model_free`]. Output
//! buffers are caller-allocated and their capacity is always passed in.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use dlgm::eval::{embed, marginal_ll_is};
use dlgm::io::model_file::from_bytes;
use dlgm::io::{load_model, save_model, ModelFile};
use dlgm::{
    free_energy, Dlgm, EpsBundle, Error, ErrorClass, Matrix, RankOneGaussian, RngStream, TrainConfig, TrainState,
    Trainer,
};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DlgmStatus {
    Ok = 0,
    /// Bad argument, shape or buffer size.
    Usage = 1,
    /// Unreadable or malformed file or data.
    Data = 2,
    /// Numerical failure.
    Numeric = 3,
    /// A required pointer was null.
    NullPointer = 4,
    /// An internal panic was caught at the boundary.
    Panic = 5,
}

/// A model together with its training metadata.
pub struct DlgmModel {
    file: ModelFile,
}

enum Failure {
    Core(Error),
    Null(&'static str),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DlgmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DlgmStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            set_error(e.to_string());
            match e.class() {
                ErrorClass::Usage => DlgmStatus::Usage,
                ErrorClass::Data => DlgmStatus::Data,
                ErrorClass::Numeric => DlgmStatus::Numeric,
            }
        }
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer passed for {what}"));
            DlgmStatus::NullPointer
        }
        Ok(Err(Failure::Usage(msg))) => {
            set_error(msg);
            DlgmStatus::Usage
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            DlgmStatus::Panic
        }
    }
}

unsafe fn model_ref<'a>(m: *const DlgmModel) -> Result<&'a DlgmModel, Failure> {
    m.as_ref().ok_or(Failure::Null("model"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Usage(format!("{what} is not valid UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    capacity: usize,
    needed: usize,
    what: &'static str,
) -> Result<&'a mut [f64], Failure> {
    if capacity < needed {
        return Err(Failure::Usage(format!(
            "{what} holds {capacity} values, {needed} needed"
        )));
    }
    if needed == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn out_scalar<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn matrix_arg(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<Matrix, Failure> {
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Failure::Usage(format!("{what} size overflows")))?;
    Ok(Matrix::new(rows, cols, slice_arg(p, n, what)?.to_vec())?)
}

unsafe fn parse_config(json: *const c_char) -> Result<TrainConfig, Failure> {
    if json.is_null() {
        return Ok(TrainConfig::default());
    }
    Ok(TrainConfig::from_json(str_arg(json, "config_json")?)?)
}

fn boxed(file: ModelFile, out: *mut *mut DlgmModel) -> Result<(), Failure> {
    unsafe { *out_scalar(out, "out")? = Box::into_raw(Box::new(DlgmModel { file })) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dlgm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. The pointer
/// stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn dlgm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates an initialized model for data of width `visible` from a JSON
/// training configuration (NULL for defaults).
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_new(
    config_json: *const c_char,
    visible: usize,
    out: *mut *mut DlgmModel,
) -> DlgmStatus {
    guard(|| {
        let cfg = parse_config(config_json)?;
        let state = TrainState::initial(&cfg, visible)?;
        let file = ModelFile {
            model: state.model,
            seed: cfg.seed,
            step: 0,
            image_shape: None,
            optimizer: Some(state.opt),
        };
        boxed(file, out)
    })
}

/// Loads a model file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_load(path: *const c_char, out: *mut *mut DlgmModel) -> DlgmStatus {
    guard(|| {
        let file = load_model(str_arg(path, "path")?)?;
        boxed(file, out)
    })
}

/// Loads a model from an in-memory model file.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_load_bytes(bytes: *const u8, len: usize, out: *mut *mut DlgmModel) -> DlgmStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(Failure::Null("bytes"));
        }
        let file = from_bytes(std::slice::from_raw_parts(bytes, len))?;
        boxed(file, out)
    })
}

/// # Safety
/// `model` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_save(model: *const DlgmModel, path: *const c_char) -> DlgmStatus {
    guard(|| {
        let m = model_ref(model)?;
        save_model(str_arg(path, "path")?, &m.file)?;
        Ok(())
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_free(model: *mut DlgmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Visible width, total latent width, number of stochastic layers, and
/// whether the recognition model is rank-one (1) or diagonal (0).
///
/// # Safety
/// `model` must be a live handle; the outputs must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_dims(
    model: *const DlgmModel,
    visible: *mut usize,
    latent_total: *mut usize,
    stochastic_layers: *mut usize,
    rank_one: *mut i32,
) -> DlgmStatus {
    guard(|| {
        let m = &model_ref(model)?.file.model;
        let dims = m.latent_dims();
        *out_scalar(visible, "visible")? = m.visible_dim();
        *out_scalar(latent_total, "latent_total")? = dims.iter().sum();
        *out_scalar(stochastic_layers, "stochastic_layers")? = dims.len();
        *out_scalar(rank_one, "rank_one")? = (m.recognition.mode() == dlgm::CovarianceMode::RankOne) as i32;
        Ok(())
    })
}

/// Writes `count` ancestral samples (observation means, row-major
/// `count × visible`) to `out`.
///
/// # Safety
/// `model` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_sample(
    model: *const DlgmModel,
    seed: u64,
    count: usize,
    out: *mut f64,
    out_len: usize,
) -> DlgmStatus {
    guard(|| {
        let gen = &model_ref(model)?.file.model.generative;
        let d = gen.visible_dim();
        let needed = count
            .checked_mul(d)
            .ok_or_else(|| Failure::Usage("sample count overflows".into()))?;
        let dst = out_slice(out, out_len, needed, "out")?;
        let mut s = RngStream::new(seed);
        for row in dst.chunks_exact_mut(d.max(1)).take(count) {
            let xi = gen.ancestral_sample(&mut s).xi;
            let td = gen.top_down(&xi)?;
            row.copy_from_slice(&gen.obs.mean(td.obs_params()));
        }
        Ok(())
    })
}

/// Importance-sampled `log p(v)` with `samples` draws from the recognition model.
///
/// # Safety
/// `model` must be a live handle; `v` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_marginal_ll(
    model: *const DlgmModel,
    v: *const f64,
    len: usize,
    samples: usize,
    seed: u64,
    out: *mut f64,
) -> DlgmStatus {
    guard(|| {
        let m = &model_ref(model)?.file.model;
        let v = slice_arg(v, len, "v")?;
        *out_scalar(out, "out")? = marginal_ll_is(m, v, samples, &mut RngStream::new(seed))?;
        Ok(())
    })
}

/// Posterior means of a row-major `rows × cols` batch under a model with a
/// single 2-D latent layer; writes `rows × 2` values.
///
/// # Safety
/// `model` must be a live handle; `batch` must hold `rows·cols` doubles and
/// `out` `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_embed(
    model: *const DlgmModel,
    batch: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
    out_len: usize,
) -> DlgmStatus {
    guard(|| {
        let m = &model_ref(model)?.file.model;
        let x = matrix_arg(batch, rows, cols, "batch")?;
        let e = embed(&m.recognition, &x)?;
        out_slice(out, out_len, e.len(), "out")?.copy_from_slice(e.data());
        Ok(())
    })
}

/// Single-sample free energy of a batch (scale 1, no jitter).
///
/// # Safety
/// `model` must be a live handle; `batch` must hold `rows·cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_free_energy(
    model: *const DlgmModel,
    batch: *const f64,
    rows: usize,
    cols: usize,
    seed: u64,
    out: *mut f64,
) -> DlgmStatus {
    guard(|| {
        let m: &Dlgm = &model_ref(model)?.file.model;
        let x = matrix_arg(batch, rows, cols, "batch")?;
        let eps = EpsBundle::draw(&m.latent_dims(), rows, 1, 0.0, &mut RngStream::new(seed));
        *out_scalar(out, "out")? = free_energy(m, &x, &eps, 1.0)?.total;
        Ok(())
    })
}

/// Continues training on a row-major `rows × cols` data set until the
/// configuration's step count; writes the last minibatch free energy per
/// point to `out` (may be NULL).
///
/// # Safety
/// `model` must be a live handle; `config_json` NULL or a NUL-terminated
/// string; `data` must hold `rows·cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlgm_model_train(
    model: *mut DlgmModel,
    config_json: *const c_char,
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut f64,
) -> DlgmStatus {
    guard(|| {
        let handle = model.as_mut().ok_or(Failure::Null("model"))?;
        let cfg = parse_config(config_json)?;
        let x = matrix_arg(data, rows, cols, "data")?;
        let f = &handle.file;
        let opt = match &f.optimizer {
            Some(o) => o.clone(),
            None => dlgm::trainer::OptimizerState::new(&f.model, cfg.alpha, cfg.rho, cfg.delta)?,
        };
        let state = TrainState {
            model: f.model.clone(),
            opt,
            step: f.step,
        };
        let mut t = Trainer::new(cfg.clone(), &x, state)?;
        let trace = t.run(|_, _| Ok(()))?;
        handle.file.model = t.state.model;
        handle.file.optimizer = Some(t.state.opt);
        handle.file.step = t.state.step;
        handle.file.seed = cfg.seed;
        if let (Some(o), Some(last)) = (out.as_mut(), trace.last()) {
            *o = (last.recon + last.latent_kl) / cfg.minibatch as f64;
        }
        Ok(())
    })
}

unsafe fn rank_one(mu: *const f64, d: *const f64, u: *const f64, k: usize) -> Result<RankOneGaussian, Failure> {
    Ok(RankOneGaussian::new(
        slice_arg(mu, k, "mu")?.to_vec(),
        slice_arg(d, k, "d")?.to_vec(),
        slice_arg(u, k, "u")?.to_vec(),
    )?)
}

/// KL(N(mu, C) ‖ N(0, I)) for the Gaussian with precision `diag(d) + u uᵀ`.
///
/// # Safety
/// `mu`, `d` and `u` must each hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlgm_rank_one_kl(
    mu: *const f64,
    d: *const f64,
    u: *const f64,
    k: usize,
    out: *mut f64,
) -> DlgmStatus {
    guard(|| {
        *out_scalar(out, "out")? = rank_one(mu, d, u, k)?.kl_std_normal();
        Ok(())
    })
}

/// `mu + R eps` with `R Rᵀ = (diag(d) + u uᵀ)⁻¹`.
///
/// # Safety
/// `mu`, `d`, `u`, `eps` and `out` must each hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn dlgm_rank_one_sample(
    mu: *const f64,
    d: *const f64,
    u: *const f64,
    k: usize,
    eps: *const f64,
    out: *mut f64,
) -> DlgmStatus {
    guard(|| {
        let x = rank_one(mu, d, u, k)?.sample(slice_arg(eps, k, "eps")?)?;
        out_slice(out, k, k, "out")?.copy_from_slice(&x);
        Ok(())
    })
}
