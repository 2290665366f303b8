//! C ABI over the `bibldr` library.
//!
//! Objects cross the boundary as opaque handles that the caller releases
//! with the matching `*_free` function. Every fallible function returns a
//! [`BibldrStatus`]; the message of the most recent failure on the calling
//! thread is available from [`bibldr_last_error`]. Panics never unwind into
//! C: they are caught and reported as [`BibldrStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use bibldr::data::{CellSplit, Dataset, DatasetPaths};
use bibldr::eval::{auprc, auroc, rank_candidates, ScoredSet};
use bibldr::numcore::Tensor;
use bibldr::seqmodel::Stage2Model;
use bibldr::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BibldrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Io = 4,
    Parse = 5,
    Validation = 6,
    Training = 7,
    MetricUndefined = 8,
    Checkpoint = 9,
    Panic = 99,
}

/// Loaded dataset.
pub struct BibldrDataset {
    inner: Dataset,
}

/// Trained sequence model with the split it was trained on.
pub struct BibldrModel {
    model: Stage2Model,
    split: CellSplit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> BibldrStatus {
    match e {
        Error::Dimension { .. } => BibldrStatus::Dimension,
        Error::Io { .. } => BibldrStatus::Io,
        Error::Load { .. } | Error::Parse { .. } => BibldrStatus::Parse,
        Error::Divergence(_) | Error::Masking { .. } | Error::BatchSize { .. } | Error::Degenerate(_) => {
            BibldrStatus::Training
        }
        Error::MetricUndefined(_) => BibldrStatus::MetricUndefined,
        Error::Checkpoint(_) => BibldrStatus::Checkpoint,
        Error::Range(_) | Error::Config { .. } => BibldrStatus::InvalidArgument,
        _ => BibldrStatus::Validation,
    }
}

struct Failure(BibldrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(name: &str) -> Failure {
    Failure(BibldrStatus::NullPointer, format!("`{name}` is null"))
}

/// Runs `body`, converting errors and panics into status codes.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> BibldrStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => BibldrStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {message}"));
            BibldrStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(BibldrStatus::InvalidArgument, format!("`{name}` is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(name))
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn bibldr_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn bibldr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a dataset from text matrices. `drug_ids` and `disease_ids` may be null.
///
/// # Safety
/// Path arguments must be null or NUL-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bibldr_dataset_load(
    association: *const c_char,
    drug_similarity: *const c_char,
    disease_similarity: *const c_char,
    drug_ids: *const c_char,
    disease_ids: *const c_char,
    out_dataset: *mut *mut BibldrDataset,
) -> BibldrStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        let optional = |p: *const c_char, name| {
            if p.is_null() {
                Ok(None)
            } else {
                path_arg(p, name).map(Some)
            }
        };
        let paths = DatasetPaths {
            association: path_arg(association, "association")?,
            drug_similarity: path_arg(drug_similarity, "drug_similarity")?,
            disease_similarity: path_arg(disease_similarity, "disease_similarity")?,
            drug_ids: optional(drug_ids, "drug_ids")?,
            disease_ids: optional(disease_ids, "disease_ids")?,
        };
        let (inner, _) = Dataset::load(&paths)?;
        *slot = Box::into_raw(Box::new(BibldrDataset { inner }));
        Ok(())
    })
}

/// Builds a dataset from row-major arrays: `association` holds
/// `n_drugs * n_diseases` values, the similarity arrays are square.
///
/// # Safety
/// Each array must hold the stated number of readable values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bibldr_dataset_from_arrays(
    n_drugs: usize,
    n_diseases: usize,
    association: *const f64,
    drug_similarity: *const f64,
    disease_similarity: *const f64,
    out_dataset: *mut *mut BibldrDataset,
) -> BibldrStatus {
    guard(|| {
        let slot = out(out_dataset, "out_dataset")?;
        if n_drugs == 0 || n_diseases == 0 {
            return Err(Failure(
                BibldrStatus::InvalidArgument,
                "dataset extents must be positive".into(),
            ));
        }
        let a = slice_arg(association, n_drugs * n_diseases, "association")?;
        let su = slice_arg(drug_similarity, n_drugs * n_drugs, "drug_similarity")?;
        let sv = slice_arg(disease_similarity, n_diseases * n_diseases, "disease_similarity")?;
        let inner = Dataset::new(
            &Tensor::matrix(n_drugs, n_diseases, a.to_vec())?,
            Tensor::matrix(n_drugs, n_drugs, su.to_vec())?,
            Tensor::matrix(n_diseases, n_diseases, sv.to_vec())?,
            None,
            None,
        )?;
        *slot = Box::into_raw(Box::new(BibldrDataset { inner }));
        Ok(())
    })
}

/// Writes the drug count, disease count and number of positives.
///
/// # Safety
/// `dataset` must be a live handle; output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bibldr_dataset_shape(
    dataset: *const BibldrDataset,
    out_drugs: *mut usize,
    out_diseases: *mut usize,
    out_positives: *mut usize,
) -> BibldrStatus {
    guard(|| {
        let ds = &handle(dataset, "dataset")?.inner;
        *out(out_drugs, "out_drugs")? = ds.n_drugs();
        *out(out_diseases, "out_diseases")? = ds.n_diseases();
        *out(out_positives, "out_positives")? = ds.positives();
        Ok(())
    })
}

/// Releases a dataset. Null is ignored.
///
/// # Safety
/// `dataset` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bibldr_dataset_free(dataset: *mut BibldrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

unsafe fn scored(scores: *const f64, labels: *const u8, len: usize) -> Result<ScoredSet, Failure> {
    let s = slice_arg(scores, len, "scores")?;
    let l = slice_arg(labels, len, "labels")?;
    Ok(ScoredSet::new(s.to_vec(), l.to_vec())?)
}

/// Area under the ROC curve, ties counting one half.
///
/// # Safety
/// `scores` and `labels` must hold `len` readable values; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn bibldr_auroc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out_value: *mut f64,
) -> BibldrStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        *slot = auroc(&scored(scores, labels, len)?)?;
        Ok(())
    })
}

/// Average precision with ties broken by ascending index.
///
/// # Safety
/// As for [`bibldr_auroc`].
#[no_mangle]
pub unsafe extern "C" fn bibldr_auprc(
    scores: *const f64,
    labels: *const u8,
    len: usize,
    out_value: *mut f64,
) -> BibldrStatus {
    guard(|| {
        let slot = out(out_value, "out_value")?;
        *slot = auprc(&scored(scores, labels, len)?)?;
        Ok(())
    })
}

/// Loads a model from a run directory written by the `train` command
/// (`model/` plus `split.txt`), checked against `dataset`.
///
/// # Safety
/// `run_dir` must be a NUL-terminated string, `dataset` a live handle and
/// `out_model` writable.
#[no_mangle]
pub unsafe extern "C" fn bibldr_model_load(
    run_dir: *const c_char,
    dataset: *const BibldrDataset,
    out_model: *mut *mut BibldrModel,
) -> BibldrStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let dir = path_arg(run_dir, "run_dir")?;
        let ds = &handle(dataset, "dataset")?.inner;
        let model = Stage2Model::load(&dir.join("model"), ds)?;
        let split = CellSplit::read_manifest(Path::new(&dir.join("split.txt")))?.split;
        split.check_bounds(ds)?;
        *slot = Box::into_raw(Box::new(BibldrModel { model, split }));
        Ok(())
    })
}

/// Ranks candidate drugs for `disease`. Writes up to `k` drug indices and
/// probabilities and the number written. When fewer than `k` candidates
/// exist all are written and `out_truncated` is set to 1.
///
/// # Safety
/// Handles must be live; `out_drugs` and `out_scores` must have room for `k`
/// values; the count and flag pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn bibldr_model_rank(
    model: *const BibldrModel,
    dataset: *const BibldrDataset,
    disease: usize,
    k: usize,
    out_drugs: *mut usize,
    out_scores: *mut f64,
    out_written: *mut usize,
    out_truncated: *mut u8,
) -> BibldrStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let ds = &handle(dataset, "dataset")?.inner;
        let written = out(out_written, "out_written")?;
        let truncated = out(out_truncated, "out_truncated")?;
        if k > 0 && (out_drugs.is_null() || out_scores.is_null()) {
            return Err(null("out_drugs/out_scores"));
        }
        let ranking = rank_candidates(&m.model, ds, &m.split, disease, k)?;
        for (i, e) in ranking.entries.iter().enumerate() {
            *out_drugs.add(i) = e.drug;
            *out_scores.add(i) = e.score;
        }
        *written = ranking.entries.len();
        *truncated = u8::from(ranking.truncated);
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn bibldr_model_free(model: *mut BibldrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
