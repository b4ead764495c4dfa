//! C ABI over the `neurocube` library.
//!
//! Models and stores are opaque handles created by `*_load` functions and
//! released with the matching `*_free`. Every fallible function returns an
//! [`NcStatus`]; on failure [`nc_last_error`] describes the error for the
//! calling thread. Strings returned through out-pointers are NUL-terminated
//! UTF-8 owned by the caller and must be released with [`nc_string_free`].
//! Selection states are passed in their JSON wire form, e.g.
//! `{"hour": {"lo": 6, "hi": 12}}`; omitted attributes are fully selected.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use neurocube::encoding::ManyHotQuery;
use neurocube::nn::Model;
use neurocube::oracle::ColumnStore;
use neurocube::schema::Schema;
use neurocube::service::{latent_space, predict_dashboard};
use neurocube::state::SelectionState;
use neurocube::Error;

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    Schema = 5,
    FingerprintMismatch = 6,
    InvalidState = 7,
    Shape = 8,
    Unsupported = 9,
    FeatureDisabled = 10,
    EmptyAggregate = 11,
    InvalidArgument = 12,
    Panic = 13,
    Other = 14,
}

/// A trained model.
pub struct NcModel {
    model: Model,
}

/// Binned records answering exact queries.
pub struct NcStore {
    store: ColumnStore,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior NUL");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> NcStatus {
    match e {
        Error::Io { .. } => NcStatus::Io,
        Error::Json(_) | Error::Csv(_) | Error::Format(_) | Error::Version { .. } => NcStatus::Format,
        Error::Schema { .. } | Error::MissingColumn(_) | Error::Config { .. } => NcStatus::Schema,
        Error::Fingerprint { .. } => NcStatus::FingerprintMismatch,
        Error::UnknownAttribute(_) | Error::InvalidState(_) | Error::MalformedQuery(_) => NcStatus::InvalidState,
        Error::Shape(_) => NcStatus::Shape,
        Error::Unsupported(_) => NcStatus::Unsupported,
        Error::FeatureDisabled(_) => NcStatus::FeatureDisabled,
        Error::EmptyAggregate => NcStatus::EmptyAggregate,
        Error::InvalidArgument(_) => NcStatus::InvalidArgument,
        _ => NcStatus::Other,
    }
}

enum Fail {
    Null(&'static str),
    Utf8(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail::Lib(Error::Json(e))
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> NcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => NcStatus::Ok,
        Ok(Err(Fail::Null(arg))) => {
            set_error(format!("`{arg}` is null"));
            NcStatus::NullArgument
        }
        Ok(Err(Fail::Utf8(arg))) => {
            set_error(format!("`{arg}` is not valid UTF-8"));
            NcStatus::InvalidUtf8
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            NcStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Utf8(name))
}

unsafe fn model<'a>(p: *const NcModel) -> Result<&'a Model, Fail> {
    p.as_ref().map(|m| &m.model).ok_or(Fail::Null("model"))
}

unsafe fn out_ptr<'a, T>(p: *mut T, name: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(name))
}

/// Parses an optional wire-form state; null means the all-full state.
unsafe fn state(schema: &Schema, p: *const c_char) -> Result<SelectionState, Fail> {
    if p.is_null() {
        return Ok(SelectionState::full(schema));
    }
    let v: serde_json::Value = serde_json::from_str(text(p, "state_json")?)?;
    Ok(SelectionState::from_wire(schema, &v)?)
}

fn owned_string(s: String) -> *mut c_char {
    CString::new(s).expect("JSON has no NUL").into_raw()
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn nc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a native checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_model_load(path: *const c_char, out: *mut *mut NcModel) -> NcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = Model::load(text(path, "path")?)?;
        *out = Box::into_raw(Box::new(NcModel { model }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `m` must come from [`nc_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nc_model_free(m: *mut NcModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Width of one many-hot query, or 0 for a null model.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn nc_model_input_width(m: *const NcModel) -> usize {
    m.as_ref().map_or(0, |m| m.model.schema().input_width())
}

/// Schema fingerprint, or 0 for a null model.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn nc_model_fingerprint(m: *const NcModel) -> u64 {
    m.as_ref().map_or(0, |m| m.model.fingerprint())
}

/// Predicts `n` queries given row-major as `n * input_width` values of 0.0 or 1.0.
/// Writes `n` predictions to `out`.
///
/// # Safety
/// `queries` must hold `n * input_width` doubles and `out` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn nc_model_predict(m: *const NcModel, queries: *const f64, n: usize, out: *mut f64) -> NcStatus {
    guard(|| {
        let model = model(m)?;
        if n == 0 {
            return Ok(());
        }
        if queries.is_null() {
            return Err(Fail::Null("queries"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let width = model.schema().input_width();
        let values = std::slice::from_raw_parts(queries, n * width);
        let qs = values
            .chunks(width)
            .map(ManyHotQuery::from_values)
            .collect::<neurocube::Result<Vec<_>>>()?;
        let preds = model.predict(&qs)?;
        std::slice::from_raw_parts_mut(out, n).copy_from_slice(&preds);
        Ok(())
    })
}

/// All group-by vectors for a state, as dashboard-response JSON. `store` may be
/// null unless `with_oracle` is set; `state_json` may be null for the full state.
///
/// # Safety
/// Pointers must be null or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_model_dashboard(
    m: *const NcModel,
    store: *const NcStore,
    state_json: *const c_char,
    with_oracle: bool,
    out: *mut *mut c_char,
) -> NcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = model(m)?;
        let st = state(model.schema(), state_json)?;
        let store = store.as_ref().map(|s| &s.store);
        let resp = predict_dashboard(model, store, &st, with_oracle)?;
        *out = owned_string(serde_json::to_string(&resp)?);
        Ok(())
    })
}

/// Latent points of a 1-D attribute under a context state, as a JSON array.
///
/// # Safety
/// Pointers must be null or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_model_latent(
    m: *const NcModel,
    attribute: *const c_char,
    context_json: *const c_char,
    out: *mut *mut c_char,
) -> NcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let model = model(m)?;
        let ctx = state(model.schema(), context_json)?;
        let points = latent_space(model, text(attribute, "attribute")?, &ctx)?;
        *out = owned_string(serde_json::to_string(&points)?);
        Ok(())
    })
}

/// The portable JSON export as a string.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_model_portable_json(m: *const NcModel, out: *mut *mut c_char) -> NcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let json = String::from_utf8(model(m)?.portable_json()).expect("JSON is UTF-8");
        *out = owned_string(json);
        Ok(())
    })
}

/// Writes the portable JSON export to `path`.
///
/// # Safety
/// `m` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn nc_model_export(m: *const NcModel, path: *const c_char) -> NcStatus {
    guard(|| {
        model(m)?.export_portable(text(path, "path")?)?;
        Ok(())
    })
}

/// Loads a store cache written by `neurocube ingest` under the schema at `schema_path`.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_store_load(
    schema_path: *const c_char,
    cache_path: *const c_char,
    out: *mut *mut NcStore,
) -> NcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let schema = Schema::load(text(schema_path, "schema_path")?)?;
        let store = ColumnStore::load_cache(&schema, text(cache_path, "cache_path")?)?;
        *out = Box::into_raw(Box::new(NcStore { store }));
        Ok(())
    })
}

/// Bins a CSV file under the schema at `schema_path`. Rejected rows are skipped;
/// their count is written to `rejected` when it is not null.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_store_ingest_csv(
    schema_path: *const c_char,
    csv_path: *const c_char,
    out: *mut *mut NcStore,
    rejected: *mut usize,
) -> NcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = ptr::null_mut();
        let schema = Schema::load(text(schema_path, "schema_path")?)?;
        let (store, report) = ColumnStore::ingest_csv(&schema, text(csv_path, "csv_path")?)?;
        if let Some(r) = rejected.as_mut() {
            *r = report.rejected;
        }
        *out = Box::into_raw(Box::new(NcStore { store }));
        Ok(())
    })
}

/// Releases a store. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn nc_store_free(s: *mut NcStore) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of records, or 0 for a null store.
///
/// # Safety
/// `s` must be null or a live store handle.
#[no_mangle]
pub unsafe extern "C" fn nc_store_len(s: *const NcStore) -> usize {
    s.as_ref().map_or(0, |s| s.store.len())
}

/// Exact aggregate of a state (null for the full state). An average over no
/// records returns [`NcStatus::EmptyAggregate`].
///
/// # Safety
/// Pointers must be null or valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nc_store_aggregate(s: *const NcStore, state_json: *const c_char, out: *mut f64) -> NcStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let store = &s.as_ref().ok_or(Fail::Null("store"))?.store;
        let st = state(store.schema(), state_json)?;
        *out = store.aggregate(&st)?;
        Ok(())
    })
}
