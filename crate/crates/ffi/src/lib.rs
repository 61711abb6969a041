//! C ABI over `sdrkit`.
//!
//! Conventions:
//! - Every fallible function returns an [`SdrStatus`]; outputs go through
//!   out-pointers that are written only on success.
//! - On failure a message is kept per thread; read it with
//!   [`sdr_last_error_message`] (borrowed, valid until the next failing call
//!   on the same thread).
//! - Objects are opaque handles released with their `*_free` function;
//!   strings returned through `char **` are released with [`sdr_string_free`].
//! - Panics never cross the boundary; they surface as `SDR_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sdrkit::assembly::{assemble_pool, AssemblyConfig};
use sdrkit::inventory::{load_inventory, load_item_pool, validate_inventory, write_inventory, Condition, Inventory, ItemPool};
use sdrkit::irt::FitArtifact;
use sdrkit::metrics::{self, RecoveryZone, SdrZone, ShiftTable};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Computation = 6,
    NotFound = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrCondition {
    Honest = 0,
    FakeGood = 1,
}

/// Zone of a direction-corrected |d̃_z|: ≤ 0.2, ≤ 0.5, above.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrSdrZone {
    Recommended = 0,
    Caution = 1,
    Avoid = 2,
}

/// Zone of a recovery correlation: ≥ 0.70, ≥ 0.50, below.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrRecoveryZone {
    Strong = 0,
    Acceptable = 1,
    Insufficient = 2,
}

/// Opaque item pool.
pub struct SdrItemPool(ItemPool);
/// Opaque forced-choice inventory.
pub struct SdrInventory(Inventory);
/// Opaque fit artifact.
pub struct SdrFit(FitArtifact);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(SdrStatus, String);

impl Failure {
    fn new(status: SdrStatus, message: impl std::fmt::Display) -> Self {
        Failure(status, message.to_string())
    }
}

fn set_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, mapping errors and panics to a status and the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdrStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(&format!("internal panic: {msg}"));
            SdrStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::new(SdrStatus::NullPointer, format!("{name} is NULL")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::new(SdrStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure::new(SdrStatus::NullPointer, format!("{name} is NULL")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(SdrStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

fn c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s).map(CString::into_raw).map_err(|e| Failure::new(SdrStatus::Computation, e))
}

fn open(path: &str) -> Result<File, Failure> {
    File::open(path).map_err(|e| Failure::new(SdrStatus::Io, format!("{path}: {e}")))
}

fn json<T: serde::Serialize>(v: &T) -> Result<*mut c_char, Failure> {
    c_string(serde_json::to_string(v).map_err(|e| Failure::new(SdrStatus::Computation, e))?)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failing call on this thread, or NULL if none.
#[no_mangle]
pub extern "C" fn sdr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned through a `char **` out-parameter. NULL is a no-op.
///
/// # Safety
/// `s` must come from this library and must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ----- item pool ------------------------------------------------------------

/// Loads a tab-separated item pool (`id, text, domain, keying[, desirability]`).
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_pool_load(path: *const c_char, out: *mut *mut SdrItemPool) -> SdrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let pool = load_item_pool(open(path)?, &[]).map_err(|e| Failure::new(SdrStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(SdrItemPool(pool)));
        Ok(())
    })
}

/// Number of items in the pool (0 for NULL).
///
/// # Safety
/// `pool` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdr_pool_len(pool: *const SdrItemPool) -> usize {
    pool.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `pool` must be NULL or a handle from [`sdr_pool_load`], not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdr_pool_free(pool: *mut SdrItemPool) {
    if !pool.is_null() {
        drop(Box::from_raw(pool));
    }
}

// ----- inventory ------------------------------------------------------------

/// Loads a forced-choice inventory (`block, left, right[, gap]`) against a pool.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_inventory_load(
    path: *const c_char,
    pool: *const SdrItemPool,
    out: *mut *mut SdrInventory,
) -> SdrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        let pool = ref_arg(pool, "pool")?;
        out_arg(out, "out")?;
        let inv = load_inventory(open(path)?, &pool.0).map_err(|e| Failure::new(SdrStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(SdrInventory(inv)));
        Ok(())
    })
}

/// Assembles a `blocks`-block inventory from a rated pool with the balanced
/// constraint set (or no constraints when `balanced` is false).
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_inventory_assemble(
    pool: *const SdrItemPool,
    blocks: usize,
    balanced: bool,
    out: *mut *mut SdrInventory,
) -> SdrStatus {
    guard(|| {
        let pool = ref_arg(pool, "pool")?;
        out_arg(out, "out")?;
        let cfg = if balanced {
            AssemblyConfig::balanced(blocks).map_err(|e| Failure::new(SdrStatus::InvalidArgument, e))?
        } else {
            AssemblyConfig::unconstrained(blocks)
        };
        let (sol, _) = assemble_pool(&pool.0, &cfg).map_err(|e| Failure::new(SdrStatus::Computation, e))?;
        *out = Box::into_raw(Box::new(SdrInventory(sol.inventory)));
        Ok(())
    })
}

/// Number of blocks (0 for NULL).
///
/// # Safety
/// `inv` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sdr_inventory_block_count(inv: *const SdrInventory) -> usize {
    inv.as_ref().map_or(0, |i| i.0.block_count())
}

/// Validates against the balanced constraint set for the inventory's block
/// count and returns the constraint report as JSON.
///
/// # Safety
/// Pointers must be valid; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_inventory_validate_json(
    inv: *const SdrInventory,
    pool: *const SdrItemPool,
    out_json: *mut *mut c_char,
) -> SdrStatus {
    guard(|| {
        let inv = ref_arg(inv, "inventory")?;
        let pool = ref_arg(pool, "pool")?;
        out_arg(out_json, "out_json")?;
        let cfg = AssemblyConfig::balanced(inv.0.block_count()).map_err(|e| Failure::new(SdrStatus::InvalidArgument, e))?;
        let report = validate_inventory(&inv.0, &pool.0, &cfg).map_err(|e| Failure::new(SdrStatus::Computation, e))?;
        *out_json = json(&report)?;
        Ok(())
    })
}

/// Writes the inventory as a tab-separated file.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdr_inventory_write(inv: *const SdrInventory, path: *const c_char) -> SdrStatus {
    guard(|| {
        let inv = ref_arg(inv, "inventory")?;
        let path = str_arg(path, "path")?;
        let f = File::create(path).map_err(|e| Failure::new(SdrStatus::Io, format!("{path}: {e}")))?;
        write_inventory(&inv.0, f).map_err(|e| Failure::new(SdrStatus::Io, e))
    })
}

/// # Safety
/// `inv` must be NULL or a handle from this library, not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdr_inventory_free(inv: *mut SdrInventory) {
    if !inv.is_null() {
        drop(Box::from_raw(inv));
    }
}

// ----- fits and metrics -----------------------------------------------------

/// Loads a JSON fit artifact.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_load(path: *const c_char, out: *mut *mut SdrFit) -> SdrStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        out_arg(out, "out")?;
        let fit = FitArtifact::read_json(std::path::Path::new(path)).map_err(|e| Failure::new(SdrStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(SdrFit(fit)));
        Ok(())
    })
}

/// Copies θ̂ (A, C, E, N, O) for one respondent, persona and condition into `out_theta[5]`.
///
/// # Safety
/// Pointers must be valid; `out_theta` must hold 5 doubles.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_theta(
    fit: *const SdrFit,
    respondent: *const c_char,
    persona: *const c_char,
    condition: SdrCondition,
    out_theta: *mut f64,
) -> SdrStatus {
    guard(|| {
        let fit = ref_arg(fit, "fit")?;
        let respondent = str_arg(respondent, "respondent")?;
        let persona = str_arg(persona, "persona")?;
        out_arg(out_theta, "out_theta")?;
        let cond = match condition {
            SdrCondition::Honest => Condition::Honest,
            SdrCondition::FakeGood => Condition::FakeGood,
        };
        let theta = fit
            .0
            .theta_for(respondent, persona, cond)
            .ok_or_else(|| Failure::new(SdrStatus::NotFound, format!("no θ̂ for {respondent}/{persona}/{cond}")))?;
        ptr::copy_nonoverlapping(theta.as_ptr(), out_theta, theta.len());
        Ok(())
    })
}

/// Paired fake-good − honest effect summary (d_z, d̃_z per trait, aggregate) as JSON.
///
/// # Safety
/// Pointers must be valid; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_effect_json(
    fit: *const SdrFit,
    respondent: *const c_char,
    out_json: *mut *mut c_char,
) -> SdrStatus {
    guard(|| {
        let fit = ref_arg(fit, "fit")?;
        let respondent = str_arg(respondent, "respondent")?;
        out_arg(out_json, "out_json")?;
        let table = ShiftTable::from_fit(&fit.0, respondent).map_err(|e| Failure::new(SdrStatus::Computation, e))?;
        *out_json = json(&metrics::effect_summary(&table, fit.0.format))?;
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle from [`sdr_fit_load`], not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sdr_fit_free(fit: *mut SdrFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Cohen's d_z of paired differences. Zero spread or n < 2 is an error.
///
/// # Safety
/// `deltas` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_cohens_dz(deltas: *const f64, n: usize, out: *mut f64) -> SdrStatus {
    guard(|| {
        if deltas.is_null() && n > 0 {
            return Err(Failure::new(SdrStatus::NullPointer, "deltas is NULL"));
        }
        out_arg(out, "out")?;
        let xs = if n == 0 { &[][..] } else { std::slice::from_raw_parts(deltas, n) };
        *out = metrics::cohens_dz(xs).map_err(|e| Failure::new(SdrStatus::Computation, e))?;
        Ok(())
    })
}

/// Zone of a direction-corrected d̃_z (uses |d̃_z|).
#[no_mangle]
pub extern "C" fn sdr_sdr_zone(d_tilde: f64) -> SdrSdrZone {
    match metrics::sdr_zone(d_tilde) {
        SdrZone::Recommended => SdrSdrZone::Recommended,
        SdrZone::Caution => SdrSdrZone::Caution,
        SdrZone::Avoid => SdrSdrZone::Avoid,
    }
}

/// Zone of a recovery correlation.
#[no_mangle]
pub extern "C" fn sdr_recovery_zone(r: f64) -> SdrRecoveryZone {
    match metrics::recovery_zone(r) {
        RecoveryZone::Strong => SdrRecoveryZone::Strong,
        RecoveryZone::Acceptable => SdrRecoveryZone::Acceptable,
        RecoveryZone::Insufficient => SdrRecoveryZone::Insufficient,
    }
}

/// Probabilities of the 7 ordered categories for linear predictor `eta` and
/// 6 increasing thresholds.
///
/// # Safety
/// `kappa` must hold 6 doubles and `out_probs` room for 7.
#[no_mangle]
pub unsafe extern "C" fn sdr_category_probs(eta: f64, kappa: *const f64, out_probs: *mut f64) -> SdrStatus {
    guard(|| {
        let kappa = ref_arg(kappa.cast::<[f64; 6]>(), "kappa")?;
        out_arg(out_probs, "out_probs")?;
        let p = sdrkit::ordinal::category_probs(eta, kappa).map_err(|e| Failure::new(SdrStatus::InvalidArgument, e))?;
        ptr::copy_nonoverlapping(p.as_ptr(), out_probs, p.len());
        Ok(())
    })
}

/// Samples `n` personas from the default trait covariance and returns the
/// persona set as JSON.
///
/// # Safety
/// `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_personas_sample_json(n: usize, seed: u64, out_json: *mut *mut c_char) -> SdrStatus {
    guard(|| {
        out_arg(out_json, "out_json")?;
        let set = sdrkit::persona::sample_personas(
            n,
            &sdrkit::persona::default_covariance(),
            seed,
            &sdrkit::persona::Lexicon::default(),
        )
        .map_err(|e| Failure::new(SdrStatus::InvalidArgument, e))?;
        *out_json = c_string(set.to_json().map_err(|e| Failure::new(SdrStatus::Computation, e))?)?;
        Ok(())
    })
}

/// Renders the Likert questionnaire prompt for one statement.
///
/// # Safety
/// String arguments must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sdr_render_likert_prompt(
    persona: *const c_char,
    condition: SdrCondition,
    statement: *const c_char,
    out: *mut *mut c_char,
) -> SdrStatus {
    guard(|| {
        let persona = str_arg(persona, "persona")?;
        let statement = str_arg(statement, "statement")?;
        out_arg(out, "out")?;
        let cond = if condition == SdrCondition::Honest { Condition::Honest } else { Condition::FakeGood };
        let p = sdrkit::admin::render_likert_prompt(persona, cond, statement)
            .map_err(|e| Failure::new(SdrStatus::InvalidArgument, e))?;
        *out = c_string(p)?;
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> CString {
        CString::new(format!("{}/../core/tests/fixtures/{name}", env!("CARGO_MANIFEST_DIR"))).unwrap()
    }

    fn last_error() -> String {
        unsafe { CStr::from_ptr(sdr_last_error_message()).to_string_lossy().into_owned() }
    }

    #[test]
    fn pool_and_inventory_round_trip() {
        unsafe {
            let mut pool = ptr::null_mut();
            assert_eq!(sdr_pool_load(fixture("reference_pool.tsv").as_ptr(), &mut pool), SdrStatus::Ok);
            assert_eq!(sdr_pool_len(pool), 60);
            let mut inv = ptr::null_mut();
            assert_eq!(sdr_inventory_load(fixture("reference_inventory.tsv").as_ptr(), pool, &mut inv), SdrStatus::Ok);
            assert_eq!(sdr_inventory_block_count(inv), 30);
            let mut js = ptr::null_mut();
            assert_eq!(sdr_inventory_validate_json(inv, pool, &mut js), SdrStatus::Ok);
            let text = CStr::from_ptr(js).to_str().unwrap().to_owned();
            sdr_string_free(js);
            assert!(text.contains("max_gap"), "{text}");
            sdr_inventory_free(inv);
            sdr_pool_free(pool);
        }
    }

    #[test]
    fn errors_set_status_and_message() {
        unsafe {
            let mut pool = ptr::null_mut();
            let missing = CString::new("/nonexistent/pool.tsv").unwrap();
            assert_eq!(sdr_pool_load(missing.as_ptr(), &mut pool), SdrStatus::Io);
            assert!(pool.is_null());
            assert!(last_error().contains("/nonexistent/pool.tsv"));
            assert_eq!(sdr_pool_load(ptr::null(), &mut pool), SdrStatus::NullPointer);
            assert_eq!(sdr_pool_len(ptr::null()), 0);
            sdr_pool_free(ptr::null_mut());
            sdr_string_free(ptr::null_mut());
        }
    }

    #[test]
    fn metric_helpers() {
        unsafe {
            let mut d = 0.0;
            let xs = [1.0, 2.0, 3.0];
            assert_eq!(sdr_cohens_dz(xs.as_ptr(), 3, &mut d), SdrStatus::Ok);
            assert!((d - 2.0).abs() < 1e-12);
            let flat = [0.5, 0.5, 0.5];
            assert_eq!(sdr_cohens_dz(flat.as_ptr(), 3, &mut d), SdrStatus::Computation);
            assert!(last_error().contains("variance"));
        }
        assert_eq!(sdr_sdr_zone(0.2), SdrSdrZone::Recommended);
        assert_eq!(sdr_sdr_zone(-0.5), SdrSdrZone::Caution);
        assert_eq!(sdr_sdr_zone(0.51), SdrSdrZone::Avoid);
        assert_eq!(sdr_recovery_zone(0.70), SdrRecoveryZone::Strong);
        assert_eq!(sdr_recovery_zone(0.5), SdrRecoveryZone::Acceptable);
        assert_eq!(sdr_recovery_zone(0.49), SdrRecoveryZone::Insufficient);
    }

    #[test]
    fn category_probs_sum_to_one() {
        let kappa = [-2.0, -1.0, -0.3, 0.3, 1.0, 2.0];
        let mut p = [0.0; 7];
        unsafe {
            assert_eq!(sdr_category_probs(0.4, kappa.as_ptr(), p.as_mut_ptr()), SdrStatus::Ok);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let bad = [0.0, -1.0, 0.0, 0.0, 0.0, 0.0];
        unsafe {
            assert_eq!(sdr_category_probs(0.0, bad.as_ptr(), p.as_mut_ptr()), SdrStatus::InvalidArgument);
        }
    }

    #[test]
    fn personas_and_prompts() {
        unsafe {
            let mut js = ptr::null_mut();
            assert_eq!(sdr_personas_sample_json(3, 7, &mut js), SdrStatus::Ok);
            let set: serde_json::Value = serde_json::from_str(CStr::from_ptr(js).to_str().unwrap()).unwrap();
            sdr_string_free(js);
            assert_eq!(set["personas"].as_array().unwrap().len(), 3);
            let persona = CString::new(set["personas"][0]["description"].as_str().unwrap()).unwrap();
            let stmt = CString::new("I am the life of the party.").unwrap();
            let mut prompt = ptr::null_mut();
            assert_eq!(sdr_render_likert_prompt(persona.as_ptr(), SdrCondition::FakeGood, stmt.as_ptr(), &mut prompt), SdrStatus::Ok);
            let p = CStr::from_ptr(prompt).to_str().unwrap().to_owned();
            sdr_string_free(prompt);
            assert!(p.contains("Return ONLY one integer (1-7).") && p.ends_with("++++"));
        }
    }

    #[test]
    fn version_is_a_c_string() {
        let v = unsafe { CStr::from_ptr(sdr_version()) };
        assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}
