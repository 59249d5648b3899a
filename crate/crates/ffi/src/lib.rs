//! C ABI for the invforge library.
//!
//! All functions return an [`InvforgeStatus`]; out-parameters are written
//! only on `Ok`. Handles are opaque and must be released with the
//! matching `_free` function. Functions never unwind across the boundary;
//! a panic is reported as `InternalError`. The most recent error message
//! is retrievable per thread via [`invforge_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use invforge::config::RunConfig;
use invforge::data::{gen_synthetic, Dataset, Manifest, SyntheticSpec};
use invforge::error::Error;
use invforge::eval::{embed_dataset, eval_invariance, ProbeConfig};
use invforge::model::{ModelGraph, ModelVariant};
use invforge::tensor::Tensor;
use invforge::trainer::{NullSink, Trainer};

/// Result of every FFI call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InvforgeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    DataError = 4,
    DimensionError = 5,
    IoError = 6,
    CorruptCheckpoint = 7,
    UnsupportedVersion = 8,
    TrainingDiverged = 9,
    InternalError = 10,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(err: &Error) -> InvforgeStatus {
    match err {
        Error::Dimension { .. } => InvforgeStatus::DimensionError,
        Error::Contract(_) => InvforgeStatus::InternalError,
        Error::Config(_) => InvforgeStatus::ConfigError,
        Error::Data(_) | Error::DegenerateData(_) => InvforgeStatus::DataError,
        Error::Diverged { .. } => InvforgeStatus::TrainingDiverged,
        Error::CorruptCheckpoint(_) => InvforgeStatus::CorruptCheckpoint,
        Error::UnsupportedVersion { .. } => InvforgeStatus::UnsupportedVersion,
        Error::Io(_) => InvforgeStatus::IoError,
    }
}

fn fail(err: Error) -> InvforgeStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Runs `f` with panics converted to `InternalError`.
fn guarded(f: impl FnOnce() -> InvforgeStatus) -> InvforgeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            InvforgeStatus::InternalError
        }
    }
}

unsafe fn cstr<'a>(ptr: *const c_char) -> Result<&'a str, InvforgeStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(InvforgeStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        InvforgeStatus::InvalidUtf8
    })
}

/// Copies the current thread's last error message into `buf` (NUL
/// terminated, truncated to `cap`). Returns the full message length.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes (or be null).
#[no_mangle]
pub unsafe extern "C" fn invforge_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

// ── Datasets ─────────────────────────────────────────────────────────

/// Opaque dataset handle.
pub struct InvforgeDataset {
    inner: Dataset,
}

/// Generates the synthetic two-factor dataset (`n` samples, uniform
/// independent labels).
///
/// # Safety
/// `out` must be a valid pointer; on `Ok` it receives an owned handle.
#[no_mangle]
pub unsafe extern "C" fn invforge_dataset_synthetic(
    y_classes: u32,
    z_classes: u32,
    n: u64,
    seed: u64,
    out: *mut *mut InvforgeDataset,
) -> InvforgeStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return InvforgeStatus::NullArgument;
        }
        let spec = SyntheticSpec::new(y_classes, z_classes, n as usize, seed);
        match gen_synthetic(&spec) {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(InvforgeDataset { inner: ds }));
                InvforgeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads one named set from a dataset manifest file.
///
/// # Safety
/// `manifest_path` and `set_name` must be valid NUL-terminated strings;
/// `out` as in [`invforge_dataset_synthetic`].
#[no_mangle]
pub unsafe extern "C" fn invforge_dataset_from_manifest(
    manifest_path: *const c_char,
    set_name: *const c_char,
    out: *mut *mut InvforgeDataset,
) -> InvforgeStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return InvforgeStatus::NullArgument;
        }
        let path = match cstr(manifest_path) {
            Ok(s) => Path::new(s).to_path_buf(),
            Err(st) => return st,
        };
        let name = match cstr(set_name) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let load = || -> Result<Dataset, Error> {
            let manifest = Manifest::load(&path)?;
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            manifest.load_set(base, name)
        };
        match load() {
            Ok(ds) => {
                *out = Box::into_raw(Box::new(InvforgeDataset { inner: ds }));
                InvforgeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Number of samples (0 for a null handle).
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn invforge_dataset_len(ds: *const InvforgeDataset) -> u64 {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.len() as u64
}

/// Feature width (0 for a null handle).
///
/// # Safety
/// `ds` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn invforge_dataset_feature_dim(ds: *const InvforgeDataset) -> u64 {
    if ds.is_null() {
        return 0;
    }
    (*ds).inner.feature_dim() as u64
}

/// Releases a dataset handle (null is a no-op).
///
/// # Safety
/// `ds` must be an owned handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn invforge_dataset_free(ds: *mut InvforgeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

// ── Models ───────────────────────────────────────────────────────────

/// Opaque trained-model handle.
pub struct InvforgeModel {
    trainer: Trainer,
}

/// Trains a model on `dataset`. `config_text` is the flat key=value run
/// configuration (empty string for all defaults); `variant` is "full",
/// "b0", or "b1".
///
/// # Safety
/// Pointer arguments must be valid; `out` receives an owned handle on `Ok`.
#[no_mangle]
pub unsafe extern "C" fn invforge_train(
    config_text: *const c_char,
    variant: *const c_char,
    dataset: *const InvforgeDataset,
    out: *mut *mut InvforgeModel,
) -> InvforgeStatus {
    guarded(|| {
        if out.is_null() || dataset.is_null() {
            set_error("null argument");
            return InvforgeStatus::NullArgument;
        }
        let config_text = match cstr(config_text) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let variant = match cstr(variant) {
            Ok(s) => s,
            Err(st) => return st,
        };
        let ds = &(*dataset).inner;
        let run = || -> Result<Trainer, Error> {
            let cfg = RunConfig::parse(config_text)?;
            let variant = ModelVariant::parse(variant)?;
            let arch = cfg.architecture(ds.feature_dim(), ds.num_classes() as usize);
            let model = ModelGraph::new(arch, variant, cfg.seed)?;
            let mut trainer = Trainer::new(model, cfg.train_config())?;
            trainer.run(ds, &mut NullSink, None)?;
            Ok(trainer)
        };
        match run() {
            Ok(trainer) => {
                *out = Box::into_raw(Box::new(InvforgeModel { trainer }));
                InvforgeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the model checkpoint to `path`.
///
/// # Safety
/// `model` must be a live handle; `path` a valid string.
#[no_mangle]
pub unsafe extern "C" fn invforge_model_save(
    model: *const InvforgeModel,
    path: *const c_char,
) -> InvforgeStatus {
    guarded(|| {
        if model.is_null() {
            set_error("null model");
            return InvforgeStatus::NullArgument;
        }
        let path = match cstr(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match invforge::checkpoint::save_checkpoint(&(*model).trainer, Path::new(path)) {
            Ok(()) => InvforgeStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Loads a checkpoint written by [`invforge_model_save`] (or the CLI).
///
/// # Safety
/// `path` must be a valid string; `out` receives an owned handle on `Ok`.
#[no_mangle]
pub unsafe extern "C" fn invforge_model_load(
    path: *const c_char,
    out: *mut *mut InvforgeModel,
) -> InvforgeStatus {
    guarded(|| {
        if out.is_null() {
            set_error("null out pointer");
            return InvforgeStatus::NullArgument;
        }
        let path = match cstr(path) {
            Ok(s) => s,
            Err(st) => return st,
        };
        match invforge::checkpoint::load_checkpoint(Path::new(path)) {
            Ok(trainer) => {
                *out = Box::into_raw(Box::new(InvforgeModel { trainer }));
                InvforgeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Width of the prediction embedding e1.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn invforge_model_dim_e1(model: *const InvforgeModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).trainer.model.arch.dim_e1 as u64
}

/// Width of the nuisance embedding e2.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn invforge_model_dim_e2(model: *const InvforgeModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).trainer.model.arch.dim_e2 as u64
}

/// Expected feature width of inputs.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn invforge_model_input_dim(model: *const InvforgeModel) -> u64 {
    if model.is_null() {
        return 0;
    }
    (*model).trainer.model.arch.input_dim() as u64
}

/// Encodes `n` rows of `d` features into the split embedding. `e1_out`
/// must hold `n * dim_e1` floats and `e2_out` `n * dim_e2` floats.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn invforge_model_embed(
    model: *const InvforgeModel,
    x: *const f32,
    n: u64,
    d: u64,
    e1_out: *mut f32,
    e2_out: *mut f32,
) -> InvforgeStatus {
    guarded(|| {
        if model.is_null() || x.is_null() || e1_out.is_null() || e2_out.is_null() {
            set_error("null argument");
            return InvforgeStatus::NullArgument;
        }
        let graph = &(*model).trainer.model;
        let (n, d) = (n as usize, d as usize);
        let data = std::slice::from_raw_parts(x, n * d).to_vec();
        let run = || -> Result<invforge::model::SplitEmbedding, Error> {
            let x = Tensor::new(vec![n, d], data)?;
            graph.encode(&x)
        };
        match run() {
            Ok(emb) => {
                std::ptr::copy_nonoverlapping(emb.e1.data().as_ptr(), e1_out, emb.e1.numel());
                std::ptr::copy_nonoverlapping(emb.e2.data().as_ptr(), e2_out, emb.e2.numel());
                InvforgeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Runs probe-based evaluation of the model on one dataset and writes the
/// flat key=value report into `buf` (NUL terminated, truncated to `cap`).
/// `written` (optional) receives the full report length.
///
/// # Safety
/// Handles must be live; `buf` must point to `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn invforge_eval(
    model: *const InvforgeModel,
    dataset: *const InvforgeDataset,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> InvforgeStatus {
    guarded(|| {
        if model.is_null() || dataset.is_null() || buf.is_null() {
            set_error("null argument");
            return InvforgeStatus::NullArgument;
        }
        let trainer = &(*model).trainer;
        let ds = &(*dataset).inner;
        let probe = ProbeConfig { seed: trainer.cfg.seed, ..ProbeConfig::default() };
        let sets = [("test".to_string(), ds)];
        match eval_invariance(&trainer.model, &sets, &probe) {
            Ok(report) => {
                let text = report.to_text();
                if cap > 0 {
                    let ncopy = text.len().min(cap - 1);
                    std::ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, ncopy);
                    *buf.add(ncopy) = 0;
                }
                if !written.is_null() {
                    *written = text.len();
                }
                InvforgeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Convenience: embeds a whole dataset handle. Buffer sizes as in
/// [`invforge_model_embed`] with `n = invforge_dataset_len(dataset)`.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn invforge_embed_dataset(
    model: *const InvforgeModel,
    dataset: *const InvforgeDataset,
    e1_out: *mut f32,
    e2_out: *mut f32,
) -> InvforgeStatus {
    guarded(|| {
        if model.is_null() || dataset.is_null() || e1_out.is_null() || e2_out.is_null() {
            set_error("null argument");
            return InvforgeStatus::NullArgument;
        }
        match embed_dataset(&(*model).trainer.model, &(*dataset).inner) {
            Ok(emb) => {
                std::ptr::copy_nonoverlapping(emb.e1.data().as_ptr(), e1_out, emb.e1.numel());
                std::ptr::copy_nonoverlapping(emb.e2.data().as_ptr(), e2_out, emb.e2.numel());
                InvforgeStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle (null is a no-op).
///
/// # Safety
/// `model` must be an owned handle from this library, released once.
#[no_mangle]
pub unsafe extern "C" fn invforge_model_free(model: *mut InvforgeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
