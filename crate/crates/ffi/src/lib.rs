//! C ABI over `sncov`.
//!
//! Every function returns an [`SncovStatus`]. On failure the message is kept
//! per thread and can be read with [`sncov_last_error_message`].
//! Matrices cross the boundary column-major, one column per observation.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sncov::datagen::{gen_panel, GenModel, ModelKind, SigmaSpec};
use sncov::mp::{self, ComplexPoint};
use sncov::spectra::{snc_eigenvalues, ObservationMatrix, SpectralSummary};
use sncov::sphericity::{run_test, test_proportional_to, TargetSpec, TestKind, TestReport};
use sncov::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SncovStatus {
    Ok = 0,
    NullPointer = 1,
    Domain = 2,
    Unsupported = 3,
    UnsupportedRegime = 4,
    DegenerateSpectrum = 5,
    DegenerateTarget = 6,
    Numerical = 7,
    Config = 8,
    Io = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SncovModel {
    Iid = 0,
    Elliptical = 1,
    GarchT4 = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SncovTestKind {
    LrSn = 0,
    JhnSn = 1,
    /// Uses the `moment_order` argument.
    Moment = 2,
}

/// Flat result of a sphericity test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SncovReport {
    pub statistic: f64,
    pub z: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub p: usize,
    pub n: usize,
    pub y_n: f64,
}

/// Opaque p×n panel.
pub struct SncovObservations {
    inner: ObservationMatrix,
}

/// Opaque eigenvalue set of the self-normalized covariance matrix.
pub struct SncovSpectrum {
    inner: SpectralSummary,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> SncovStatus {
    match err {
        Error::Domain(_) => SncovStatus::Domain,
        Error::Unsupported(_) => SncovStatus::Unsupported,
        Error::UnsupportedRegime(_) => SncovStatus::UnsupportedRegime,
        Error::DegenerateSpectrum(_) => SncovStatus::DegenerateSpectrum,
        Error::DegenerateTarget(_) => SncovStatus::DegenerateTarget,
        Error::Numerical(_) => SncovStatus::Numerical,
        Error::Config(_) | Error::IncompleteReport(_) | Error::Json(_) => SncovStatus::Config,
        Error::Io { .. } | Error::Parse { .. } => SncovStatus::Io,
    }
}

struct Failure(SncovStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(SncovStatus::NullPointer, format!("{what} is null"))
}

fn guard<F>(body: F) -> SncovStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SncovStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(format!("internal panic: {msg}"));
            SncovStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

fn to_report(r: &TestReport) -> SncovReport {
    SncovReport {
        statistic: r.statistic,
        z: r.z,
        p_value: r.p_value,
        alpha: r.alpha,
        reject: r.reject,
        p: r.p,
        n: r.n,
        y_n: r.y_n,
    }
}

fn test_kind(kind: SncovTestKind, order: u32) -> TestKind {
    match kind {
        SncovTestKind::LrSn => TestKind::LrSn,
        SncovTestKind::JhnSn => TestKind::JhnSn,
        SncovTestKind::Moment => TestKind::MomentK(order),
    }
}

/// Message for the last failed call on this thread, or null.
///
/// The pointer stays valid until the next `sncov_*` call on the same thread.
#[no_mangle]
pub extern "C" fn sncov_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub unsafe extern "C" fn sncov_mp_moment(k: u32, y: f64, out: *mut f64) -> SncovStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = mp::mp_moment(k, y)?;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sncov_mp_density(x: f64, y: f64, out: *mut f64) -> SncovStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        mp::support_edges(y)?;
        *out = mp::density(x, y);
        Ok(())
    })
}

/// Companion Stieltjes transform at `re + i·im`.
#[no_mangle]
pub unsafe extern "C" fn sncov_mp_stieltjes(
    re: f64,
    im: f64,
    y: f64,
    out_re: *mut f64,
    out_im: *mut f64,
) -> SncovStatus {
    guard(|| {
        let out_re = out_ref(out_re, "out_re")?;
        let out_im = out_ref(out_im, "out_im")?;
        let m = mp::stieltjes_m_underline(ComplexPoint::new(re, im), y)?;
        *out_re = m.re;
        *out_im = m.im;
        Ok(())
    })
}

/// Copies `p * n` column-major values into a new panel.
#[no_mangle]
pub unsafe extern "C" fn sncov_observations_new(
    data: *const f64,
    p: usize,
    n: usize,
    out: *mut *mut SncovObservations,
) -> SncovStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        if data.is_null() {
            return Err(null("data"));
        }
        let len = p
            .checked_mul(n)
            .ok_or_else(|| Failure(SncovStatus::Domain, "p * n overflows".into()))?;
        let values = std::slice::from_raw_parts(data, len);
        let inner = ObservationMatrix::from_column_major(p, n, values)?;
        *out = Box::into_raw(Box::new(SncovObservations { inner }));
        Ok(())
    })
}

/// Simulates a panel; `rho` is ignored unless `toeplitz` is true.
#[no_mangle]
pub unsafe extern "C" fn sncov_observations_generate(
    model: SncovModel,
    toeplitz: bool,
    rho: f64,
    p: usize,
    n: usize,
    seed: u64,
    out: *mut *mut SncovObservations,
) -> SncovStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let kind = match model {
            SncovModel::Iid => ModelKind::Iid,
            SncovModel::Elliptical => ModelKind::Elliptical,
            SncovModel::GarchT4 => ModelKind::GarchT4,
        };
        let sigma = if toeplitz { SigmaSpec::Toeplitz(rho) } else { SigmaSpec::Identity };
        let inner = gen_panel(&GenModel { kind, sigma, p, n, seed })?;
        *out = Box::into_raw(Box::new(SncovObservations { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sncov_observations_free(obs: *mut SncovObservations) {
    if !obs.is_null() {
        drop(Box::from_raw(obs));
    }
}

#[no_mangle]
pub unsafe extern "C" fn sncov_observations_dims(
    obs: *const SncovObservations,
    p: *mut usize,
    n: *mut usize,
) -> SncovStatus {
    guard(|| {
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        *out_ref(p, "p")? = obs.inner.p();
        *out_ref(n, "n")? = obs.inner.n();
        Ok(())
    })
}

/// Copies the panel, column-major, into `buf` of length `p * n`.
#[no_mangle]
pub unsafe extern "C" fn sncov_observations_copy(
    obs: *const SncovObservations,
    buf: *mut f64,
    len: usize,
) -> SncovStatus {
    guard(|| {
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let src = obs.inner.data().as_slice();
        if len < src.len() {
            return Err(Failure(SncovStatus::Domain, format!("buffer holds {len}, need {}", src.len())));
        }
        std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sncov_spectrum_compute(
    obs: *const SncovObservations,
    out: *mut *mut SncovSpectrum,
) -> SncovStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        let inner = snc_eigenvalues(&obs.inner)?;
        *out = Box::into_raw(Box::new(SncovSpectrum { inner }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sncov_spectrum_free(spec: *mut SncovSpectrum) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Number of eigenvalues (`p`).
#[no_mangle]
pub unsafe extern "C" fn sncov_spectrum_len(spec: *const SncovSpectrum, len: *mut usize) -> SncovStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        *out_ref(len, "len")? = spec.inner.eigenvalues.len();
        Ok(())
    })
}

/// Copies the eigenvalues, nonincreasing, into `buf`.
#[no_mangle]
pub unsafe extern "C" fn sncov_spectrum_eigenvalues(
    spec: *const SncovSpectrum,
    buf: *mut f64,
    len: usize,
) -> SncovStatus {
    guard(|| {
        let spec = spec.as_ref().ok_or_else(|| null("spec"))?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let src = &spec.inner.eigenvalues;
        if len < src.len() {
            return Err(Failure(SncovStatus::Domain, format!("buffer holds {len}, need {}", src.len())));
        }
        std::slice::from_raw_parts_mut(buf, src.len()).copy_from_slice(src);
        Ok(())
    })
}

/// Tests `Σ ∝ I`.
#[no_mangle]
pub unsafe extern "C" fn sncov_test(
    obs: *const SncovObservations,
    kind: SncovTestKind,
    moment_order: u32,
    alpha: f64,
    out: *mut SncovReport,
) -> SncovStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        let report = run_test(&obs.inner, test_kind(kind, moment_order), alpha)?;
        *out = to_report(&report);
        Ok(())
    })
}

/// Tests `Σ ∝ diag(d)` with `d` of length `p`.
#[no_mangle]
pub unsafe extern "C" fn sncov_test_diagonal(
    obs: *const SncovObservations,
    diag: *const f64,
    kind: SncovTestKind,
    moment_order: u32,
    alpha: f64,
    out: *mut SncovReport,
) -> SncovStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let obs = obs.as_ref().ok_or_else(|| null("obs"))?;
        if diag.is_null() {
            return Err(null("diag"));
        }
        let d = std::slice::from_raw_parts(diag, obs.inner.p()).to_vec();
        let target = TargetSpec::Diagonal(d);
        let report = test_proportional_to(&obs.inner, &target, test_kind(kind, moment_order), alpha)?;
        *out = to_report(&report);
        Ok(())
    })
}
