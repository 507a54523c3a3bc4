//! C ABI over the `treefair` library.
//!
//! Every fallible function returns a [`TfStatus`] and writes its result
//! through an out-pointer. On failure a description of the error is kept per
//! thread and can be read with [`tf_last_error`]. Handles returned by the
//! library are owned by the caller and released with the matching `*_free`
//! function; strings are released with [`tf_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde_json::Value;
use treefair::cli::formula_document;
use treefair::evaluation::{score_d, score_dtilde};
use treefair::stability::DEFAULT_MAX_CLASSES;
use treefair::synthesis::DEFAULT_MAX_CANDIDATES;
use treefair::{
    analyze, synthesize_from_unstable, AnalysisConfig, Ensemble, Error, FormulaSet, InstanceSet, Provenance,
    SynthesisConfig, UnstableSet,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    /// A required pointer was null or a string was not valid UTF-8.
    NullOrInvalidArgument = 1,
    /// Malformed model, rectangle or formula document.
    ParseError = 2,
    /// Well-formed input that the operation rejects, such as an unknown
    /// feature name or a wrong instance width.
    InvalidInput = 3,
    /// The analysis exceeded its class or pair bound.
    ResourceLimit = 4,
    /// An internal error; the library caught a panic.
    Internal = 5,
}

/// A parsed tree ensemble.
pub struct TfModel {
    ensemble: Ensemble,
}

/// The unstable rectangles of a model for a fixed set of sensitive features.
pub struct TfUnstableSet {
    unstable: UnstableSet,
    num_features: usize,
}

/// The result of a synthesis run.
pub struct TfFormulas {
    formulas: FormulaSet,
}

/// Scores of an instance set: `d_count` instances lie in some unstable
/// rectangle, `dtilde_count` are not covered by any formula.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct TfScores {
    pub d_count: usize,
    pub dtilde_count: usize,
    pub total: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let message = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
}

fn status_of(err: &Error) -> TfStatus {
    match err {
        Error::Parse { .. } | Error::Json(_) | Error::Csv(_) => TfStatus::ParseError,
        Error::ResourceLimit(_) => TfStatus::ResourceLimit,
        _ => TfStatus::InvalidInput,
    }
}

struct Failure(TfStatus, String);

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        Failure(status_of(&err), err.to_string())
    }
}

fn invalid(message: &str) -> Failure {
    Failure(TfStatus::NullOrInvalidArgument, message.to_string())
}

/// Runs `body`, translating errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> TfStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {message}"));
            TfStatus::Internal
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| invalid(&format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(invalid("output pointer is null"));
    }
    out.write(value);
    Ok(())
}

fn c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failed call on this thread, or null if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a model document.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_from_json(json: *const c_char, out: *mut *mut TfModel) -> TfStatus {
    guard(|| {
        let ensemble = Ensemble::from_json_str(text(json, "json")?)?;
        write(out, Box::into_raw(Box::new(TfModel { ensemble })))
    })
}

/// # Safety
/// `model` must be null or a live handle from [`tf_model_from_json`].
#[no_mangle]
pub unsafe extern "C" fn tf_model_free(model: *mut TfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of features of the model, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_model_num_features(model: *const TfModel) -> usize {
    model.as_ref().map_or(0, |m| m.ensemble.num_features())
}

/// Predicted label id of one instance of `len` feature values.
///
/// # Safety
/// `model` must be a live handle, `x` must point to `len` doubles and
/// `out_label` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_predict(
    model: *const TfModel,
    x: *const f64,
    len: usize,
    out_label: *mut usize,
) -> TfStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let label = model.ensemble.try_predict(slice(x, len, "x")?)?;
        write(out_label, label)
    })
}

/// Name of a label id as a newly allocated string.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_model_label_name(model: *const TfModel, label: usize, out: *mut *mut c_char) -> TfStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let name = model
            .ensemble
            .labels()
            .get(label)
            .ok_or_else(|| Failure(TfStatus::InvalidInput, format!("no label with id {label}")))?;
        write(out, c_string(name.clone()))
    })
}

/// Computes the unstable rectangles for the sensitive features named in
/// `sensitive`, a comma-separated list of feature names, one-hot group names
/// or numeric ids. `max_classes` of 0 selects the default bound.
///
/// # Safety
/// `model` must be a live handle, `sensitive` a NUL-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_analyze(
    model: *const TfModel,
    sensitive: *const c_char,
    max_classes: usize,
    coarse: bool,
    out: *mut *mut TfUnstableSet,
) -> TfStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let names: Vec<&str> = text(sensitive, "sensitive")?
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .collect();
        let sensitive = model.ensemble.metadata().resolve_sensitive(&names)?;
        let config = AnalysisConfig {
            max_classes: if max_classes == 0 { DEFAULT_MAX_CLASSES } else { max_classes },
            coarse,
        };
        let unstable = analyze(&model.ensemble, &sensitive, config)?;
        let handle = TfUnstableSet {
            unstable,
            num_features: model.ensemble.num_features(),
        };
        write(out, Box::into_raw(Box::new(handle)))
    })
}

/// Reads a rectangle document for `model`.
///
/// # Safety
/// `model` must be a live handle, `json` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tf_unstable_from_json(
    model: *const TfModel,
    json: *const c_char,
    out: *mut *mut TfUnstableSet,
) -> TfStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let num_features = model.ensemble.num_features();
        let unstable = UnstableSet::from_json_str(text(json, "json")?, num_features)?;
        write(out, Box::into_raw(Box::new(TfUnstableSet { unstable, num_features })))
    })
}

/// # Safety
/// `unstable` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_unstable_free(unstable: *mut TfUnstableSet) {
    if !unstable.is_null() {
        drop(Box::from_raw(unstable));
    }
}

/// Number of rectangles, 0 for a null handle.
///
/// # Safety
/// `unstable` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_unstable_len(unstable: *const TfUnstableSet) -> usize {
    unstable.as_ref().map_or(0, |u| u.unstable.len())
}

/// The rectangles as a JSON document.
///
/// # Safety
/// `unstable` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_unstable_to_json(unstable: *const TfUnstableSet, out: *mut *mut c_char) -> TfStatus {
    guard(|| {
        let unstable = borrow(unstable, "unstable")?;
        write(out, c_string(unstable.unstable.to_json_string()))
    })
}

/// Synthesizes fair formulas from an unstable set. `max_iters` of 0 runs
/// until no candidates remain; `max_candidates` of 0 selects the default
/// bound. Hitting the candidate bound is not an error: the result keeps the
/// completed iterations and [`tf_formulas_converged`] reports false.
///
/// # Safety
/// `model` and `unstable` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_synthesize(
    model: *const TfModel,
    unstable: *const TfUnstableSet,
    max_iters: usize,
    max_candidates: usize,
    out: *mut *mut TfFormulas,
) -> TfStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let unstable = borrow(unstable, "unstable")?;
        if unstable.num_features != model.ensemble.num_features() {
            return Err(Failure(
                TfStatus::InvalidInput,
                "unstable set was built for a different model".into(),
            ));
        }
        let config = SynthesisConfig {
            max_iters: (max_iters > 0).then_some(max_iters),
            max_candidates: if max_candidates == 0 { DEFAULT_MAX_CANDIDATES } else { max_candidates },
            ..SynthesisConfig::default()
        };
        let formulas = synthesize_from_unstable(&unstable.unstable, model.ensemble.metadata(), config)?;
        write(out, Box::into_raw(Box::new(TfFormulas { formulas })))
    })
}

/// Reads the formulas of a synthesis output document for `model`.
///
/// # Safety
/// `model` must be a live handle, `json` a NUL-terminated string and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn tf_formulas_from_json(
    model: *const TfModel,
    json: *const c_char,
    out: *mut *mut TfFormulas,
) -> TfStatus {
    guard(|| {
        let model = borrow(model, "model")?;
        let value: Value = serde_json::from_str(text(json, "json")?).map_err(Error::from)?;
        let formulas = FormulaSet::from_json_value(&value, model.ensemble.metadata())?;
        write(out, Box::into_raw(Box::new(TfFormulas { formulas })))
    })
}

/// # Safety
/// `formulas` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_formulas_free(formulas: *mut TfFormulas) {
    if !formulas.is_null() {
        drop(Box::from_raw(formulas));
    }
}

/// Number of fair itemsets, 0 for a null handle.
///
/// # Safety
/// `formulas` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_formulas_len(formulas: *const TfFormulas) -> usize {
    formulas.as_ref().map_or(0, |f| f.formulas.len())
}

/// Whether the run ended because no candidates were left.
///
/// # Safety
/// `formulas` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tf_formulas_converged(formulas: *const TfFormulas) -> bool {
    formulas.as_ref().is_some_and(|f| f.formulas.converged)
}

/// The synthesis output document: itemsets, rendered formulas and
/// per-iteration counts.
///
/// # Safety
/// `formulas` and `model` must be live handles and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tf_formulas_to_json(
    formulas: *const TfFormulas,
    model: *const TfModel,
    out: *mut *mut c_char,
) -> TfStatus {
    guard(|| {
        let formulas = borrow(formulas, "formulas")?;
        let model = borrow(model, "model")?;
        let doc = Value::Object(formula_document(&formulas.formulas, &model.ensemble));
        write(out, c_string(doc.to_string()))
    })
}

/// Whether some formula holds at `x`.
///
/// # Safety
/// `formulas` must be a live handle, `x` must point to `len` doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_formulas_covers(
    formulas: *const TfFormulas,
    x: *const f64,
    len: usize,
    out: *mut bool,
) -> TfStatus {
    guard(|| {
        let formulas = borrow(formulas, "formulas")?;
        let x = slice(x, len, "x")?;
        if x.iter().any(|v| v.is_nan()) {
            return Err(Failure(TfStatus::InvalidInput, "x contains NaN".into()));
        }
        write(out, formulas.formulas.covers(x))
    })
}

/// Scores `rows` instances stored row-major in `data`, each of
/// `tf_model_num_features` values.
///
/// # Safety
/// `model`, `unstable` and `formulas` must be live handles, `data` must
/// point to `rows * num_features` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tf_score(
    model: *const TfModel,
    unstable: *const TfUnstableSet,
    formulas: *const TfFormulas,
    data: *const f64,
    rows: usize,
    out: *mut TfScores,
) -> TfStatus {
    guard(|| {
        let unstable = borrow(unstable, "unstable")?;
        let formulas = borrow(formulas, "formulas")?;
        let model = borrow(model, "model")?;
        let d = model.ensemble.num_features();
        if unstable.num_features != d {
            return Err(Failure(
                TfStatus::InvalidInput,
                "unstable set was built for a different model".into(),
            ));
        }
        let len = rows
            .checked_mul(d)
            .ok_or_else(|| Failure(TfStatus::InvalidInput, "data size overflows".into()))?;
        let values = slice(data, len, "data")?;
        let instances: Vec<Vec<f64>> = if d == 0 {
            vec![Vec::new(); rows]
        } else {
            values.chunks(d).map(<[f64]>::to_vec).collect()
        };
        let set = InstanceSet::new(instances, Provenance::Test);
        set.validate(model.ensemble.metadata())?;
        let d_score = score_d(&unstable.unstable, &set)?;
        let dtilde = score_dtilde(&formulas.formulas.itemsets, &set)?;
        write(
            out,
            TfScores {
                d_count: d_score.count,
                dtilde_count: dtilde.count,
                total: d_score.total,
            },
        )
    })
}
