//! C ABI over the `gapaudit` core.
//!
//! Every fallible call returns a [`GapStatus`]; on failure the message is
//! available from [`gap_last_error_message`] on the same thread. Matrices and
//! models are opaque handles owned by the caller and released with their
//! `*_free` function. Strings returned through out-parameters are released
//! with [`gap_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gapaudit::explain::ensemble_shap;
use gapaudit::features::elements::ElementTable;
use gapaudit::features::formula::parse_formula_with;
use gapaudit::features::{phase3_descriptors, FeatureConfig, TABLE3_FEATURES};
use gapaudit::integrity::ks_two_sample;
use gapaudit::learn::{fit_model, preset_or_err, FittedModel};
use gapaudit::matrix::FeatureMatrix;
use gapaudit::pipeline::{run_pipeline, PipelineConfig};
use gapaudit::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    IoError = 4,
    ConfigError = 5,
    NumericError = 6,
    ProtocolError = 7,
    StageFailed = 8,
    Panic = 99,
}

impl From<&Error> for GapStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Json(_) | Error::Csv(_) | Error::Formula(_) => GapStatus::ParseError,
            Error::Io(_) => GapStatus::IoError,
            Error::Config(_) => GapStatus::ConfigError,
            Error::DegenerateMatrix | Error::ZeroRawRange | Error::UndefinedR2 => GapStatus::NumericError,
            Error::Protocol(_) | Error::NotShapReady => GapStatus::ProtocolError,
            Error::Stage { .. } => GapStatus::StageFailed,
            _ => GapStatus::InvalidArgument,
        }
    }
}

/// Opaque feature matrix with target column.
pub struct GapMatrix(FeatureMatrix);

/// Opaque fitted model.
pub struct GapModel(FittedModel);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(GapStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(GapStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GapStatus::NullPointer, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(GapStatus::InvalidArgument, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> GapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            GapStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic".into());
            GapStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| invalid("string contains NUL"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn gap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn gap_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds a matrix from `rows x cols` row-major values and `rows` targets.
/// Columns are named `x0, x1, ...`.
///
/// # Safety
/// `data` must point to `rows * cols` doubles, `target` to `rows` doubles.
#[no_mangle]
pub unsafe extern "C" fn gap_matrix_new(
    rows: usize,
    cols: usize,
    data: *const f64,
    target: *const f64,
    out: *mut *mut GapMatrix,
) -> GapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let n = rows.checked_mul(cols).ok_or_else(|| invalid("rows * cols overflows"))?;
        let data = slice_arg(data, n, "data")?.to_vec();
        let target = slice_arg(target, rows, "target")?.to_vec();
        let names = (0..cols).map(|j| format!("x{j}")).collect();
        let ids = (0..rows).map(|i| i.to_string()).collect();
        let m = FeatureMatrix::from_flat(names, data, target, ids, None)?;
        *out = Box::into_raw(Box::new(GapMatrix(m)));
        Ok(())
    })
}

/// Reads a matrix CSV (features then target as the last column).
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gap_matrix_from_csv(path: *const c_char, out: *mut *mut GapMatrix) -> GapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(Error::from)?;
        let m = FeatureMatrix::read_csv(std::io::BufReader::new(file), None)?;
        *out = Box::into_raw(Box::new(GapMatrix(m)));
        Ok(())
    })
}

/// # Safety
/// `m` must be a live matrix handle.
#[no_mangle]
pub unsafe extern "C" fn gap_matrix_shape(m: *const GapMatrix, rows: *mut usize, cols: *mut usize) -> GapStatus {
    guard(|| {
        let m = &m.as_ref().ok_or_else(|| null("m"))?.0;
        *out_arg(rows, "rows")? = m.n_rows();
        *out_arg(cols, "cols")? = m.n_cols();
        Ok(())
    })
}

/// # Safety
/// `m` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn gap_matrix_free(m: *mut GapMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Fits a named preset on every row of `m`. `n_estimators = 0` keeps the
/// preset's tree count.
///
/// # Safety
/// `m` must be a live matrix handle, `preset` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn gap_model_fit_preset(
    m: *const GapMatrix,
    preset: *const c_char,
    seed: u64,
    n_estimators: usize,
    out: *mut *mut GapModel,
) -> GapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let m = &m.as_ref().ok_or_else(|| null("m"))?.0;
        let mut spec = preset_or_err(str_arg(preset, "preset")?)?.with_seed(seed);
        if n_estimators > 0 {
            spec = spec.with_estimators(n_estimators);
        }
        let model = fit_model(&spec, m)?;
        *out = Box::into_raw(Box::new(GapModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn gap_model_n_features(model: *const GapModel, out: *mut usize) -> GapStatus {
    guard(|| {
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        *out_arg(out, "out")? = model.feature_names.len();
        Ok(())
    })
}

unsafe fn model_and_row<'a>(
    model: *const GapModel,
    x: *const f64,
    n_features: usize,
) -> Result<(&'a FittedModel, &'a [f64]), Failure> {
    let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
    if n_features != model.feature_names.len() {
        return Err(invalid(format!(
            "model expects {} features, got {n_features}",
            model.feature_names.len()
        )));
    }
    let x = slice_arg(x, n_features, "x")?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite feature value"));
    }
    Ok((model, x))
}

/// Predicts one row of `n_features` values.
///
/// # Safety
/// `x` must point to `n_features` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gap_model_predict(
    model: *const GapModel,
    x: *const f64,
    n_features: usize,
    out: *mut f64,
) -> GapStatus {
    guard(|| {
        let (model, x) = model_and_row(model, x, n_features)?;
        *out_arg(out, "out")? = model.predict_row(x);
        Ok(())
    })
}

/// TreeSHAP values of one row: `phi` receives `n_features` values and
/// `base_value` the expected model output. Fails for linear models.
///
/// # Safety
/// `x` and `phi` must each hold `n_features` doubles.
#[no_mangle]
pub unsafe extern "C" fn gap_model_shap(
    model: *const GapModel,
    x: *const f64,
    n_features: usize,
    phi: *mut f64,
    base_value: *mut f64,
) -> GapStatus {
    guard(|| {
        let (model, x) = model_and_row(model, x, n_features)?;
        let ens = model
            .ensemble()
            .ok_or_else(|| invalid("SHAP applies to tree-based models"))?;
        let e = ensemble_shap(ens, x)?;
        if phi.is_null() {
            return Err(null("phi"));
        }
        std::slice::from_raw_parts_mut(phi, n_features).copy_from_slice(&e.phi);
        *out_arg(base_value, "base_value")? = e.base_value;
        Ok(())
    })
}

/// Serializes a model; free the string with [`gap_string_free`].
///
/// # Safety
/// `model` must be a live model handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gap_model_to_json(model: *const GapModel, out: *mut *mut c_char) -> GapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let model = &model.as_ref().ok_or_else(|| null("model"))?.0;
        let text = serde_json::to_string(&model.to_json()).map_err(Error::from)?;
        *out = into_c_string(text)?;
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gap_model_from_json(json: *const c_char, out: *mut *mut GapModel) -> GapStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let value: serde_json::Value = serde_json::from_str(str_arg(json, "json")?).map_err(Error::from)?;
        let model = FittedModel::from_json(value)?;
        *out = Box::into_raw(Box::new(GapModel(model)));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn gap_model_free(model: *mut GapModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
///
/// # Safety
/// `x` and `y` must hold `nx` and `ny` doubles.
#[no_mangle]
pub unsafe extern "C" fn gap_ks_two_sample(
    x: *const f64,
    nx: usize,
    y: *const f64,
    ny: usize,
    d: *mut f64,
    p_value: *mut f64,
) -> GapStatus {
    guard(|| {
        let r = ks_two_sample(slice_arg(x, nx, "x")?, slice_arg(y, ny, "y")?)?;
        *out_arg(d, "d")? = r.d_statistic;
        *out_arg(p_value, "p_value")? = r.p_value;
        Ok(())
    })
}

/// Number of compositional descriptors written by [`gap_phase3_descriptors`].
#[no_mangle]
pub extern "C" fn gap_descriptor_count() -> usize {
    TABLE3_FEATURES.len()
}

/// Static name of descriptor `i`, or NULL when out of range.
#[no_mangle]
pub extern "C" fn gap_descriptor_name(i: usize) -> *const c_char {
    const NAMES: [&str; 11] = [
        "bond_polarity_index\0",
        "atomic_size_homogeneity\0",
        "relative_electronegativity_range\0",
        "radius_mismatch\0",
        "atomic_size_uniformity\0",
        "radius_variance\0",
        "pauling_ionicity_proxy\0",
        "d_hybridization_tendency\0",
        "pd_orbital_interaction_index\0",
        "sp_promotion_index\0",
        "transition_metal_electron_index\0",
    ];
    NAMES.get(i).map_or(ptr::null(), |s| s.as_ptr().cast())
}

/// Compositional descriptors of `formula` with the embedded element table.
///
/// # Safety
/// `out` must hold `len` doubles; `len` must equal [`gap_descriptor_count`].
#[no_mangle]
pub unsafe extern "C" fn gap_phase3_descriptors(formula: *const c_char, out: *mut f64, len: usize) -> GapStatus {
    guard(|| {
        if len != TABLE3_FEATURES.len() {
            return Err(invalid(format!("expected len {}, got {len}", TABLE3_FEATURES.len())));
        }
        let table = ElementTable::embedded();
        let comp = parse_formula_with(str_arg(formula, "formula")?, table).map_err(Error::from)?;
        let values = phase3_descriptors(&comp, table, &FeatureConfig::default())?;
        if out.is_null() {
            return Err(null("out"));
        }
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, (_, v)) in dst.iter_mut().zip(values) {
            *d = v;
        }
        Ok(())
    })
}

/// Runs the whole pipeline from a TOML or JSON config into `out_dir`.
///
/// # Safety
/// Both arguments must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gap_pipeline_run(config_path: *const c_char, out_dir: *const c_char) -> GapStatus {
    guard(|| {
        let cfg = PipelineConfig::load(&PathBuf::from(str_arg(config_path, "config_path")?))?;
        run_pipeline(&cfg, &PathBuf::from(str_arg(out_dir, "out_dir")?))?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn descriptor_names_match_core() {
        for (i, name) in TABLE3_FEATURES.iter().enumerate() {
            let c = unsafe { CStr::from_ptr(gap_descriptor_name(i)) };
            assert_eq!(c.to_str().unwrap(), *name);
        }
        assert!(gap_descriptor_name(TABLE3_FEATURES.len()).is_null());
    }

    #[test]
    fn status_mapping() {
        assert_eq!(GapStatus::from(&Error::DegenerateMatrix), GapStatus::NumericError);
        assert_eq!(GapStatus::from(&Error::Config("x".into())), GapStatus::ConfigError);
    }
}
