//! C ABI for the NAG-MCMC detector.
//!
//! Complex arrays are interleaved `(re, im)` doubles. Matrices are row-major,
//! so `h[2 * (r * nt + c)]` is the real part of `H[r][c]`. Functions return a
//! [`NagStatus`]; the message of the last failure on the calling thread is
//! available from [`nag_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nagmcmc::detectors;
use nagmcmc::harness::complexity::{closed_form_mults, Algorithm, ClosedFormParams};
use nagmcmc::rng::StreamKey;
use nagmcmc::sampler::{self, InitMode, SamplerParams};
use nagmcmc::softout;
use nagmcmc::{ComplexMatrix, Constellation, Error};
use num_complex::Complex64;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NagStatus {
    NagOk = 0,
    NagNullPointer = 1,
    NagInvalidArgument = 2,
    NagUnsupportedOrder = 3,
    NagSingularChannel = 4,
    NagSearchTooLarge = 5,
    NagInternal = 6,
}

/// Detector variants for the closed-form multiplication count.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NagAlgorithm {
    NagAlgMmse = 0,
    NagAlgEp = 1,
    NagAlgMhgd = 2,
    NagAlgNagMcmc = 3,
    NagAlgNagMcmcSaEs = 4,
}

/// Detector configuration. Fill with [`nag_config_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NagConfig {
    pub nr: u32,
    pub nt: u32,
    /// QAM order: 4, 16 or 64.
    pub order: u32,
    pub samplers: u32,
    pub iterations: u32,
    pub gd_steps: u32,
    pub sample_augmentation: bool,
    pub early_stopping: bool,
    pub momentum: f64,
    pub es_threshold: f64,
    /// Step-size coefficient; zero or negative selects `(N_t/8)^(-1/3)`.
    pub beta: f64,
    pub seed: u64,
}

/// Per-detection statistics.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NagDetectInfo {
    /// Executed sampling iterations.
    pub iterations: u32,
    pub stopped_early: bool,
    /// `‖y − Hx̂‖²` of the decision.
    pub residual_sqnorm: f64,
    /// Complex multiplications charged to this detection.
    pub multiplications: f64,
}

/// Opaque detector handle.
pub struct NagDetector {
    nr: usize,
    nt: usize,
    constellation: Constellation,
    params: SamplerParams,
    seed: u64,
    calls: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> NagStatus {
    match err {
        Error::UnsupportedOrder(_) => NagStatus::NagUnsupportedOrder,
        Error::NotPositiveDefinite { .. } => NagStatus::NagSingularChannel,
        Error::SearchSpaceTooLarge(_) => NagStatus::NagSearchTooLarge,
        Error::NonConvergence(_) | Error::Io(_) | Error::EmptySampleList => NagStatus::NagInternal,
        _ => NagStatus::NagInvalidArgument,
    }
}

fn fail(err: Error) -> NagStatus {
    set_error(err.to_string());
    status_of(&err)
}

/// Runs `f`, turning a panic into `NagInternal`.
fn guard(f: impl FnOnce() -> NagStatus) -> NagStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            NagStatus::NagInternal
        }
    }
}

unsafe fn complex_slice(p: *const f64, len: usize) -> Option<Vec<Complex64>> {
    if p.is_null() {
        return None;
    }
    let raw = slice::from_raw_parts(p, 2 * len);
    Some(raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

fn sampler_params(cfg: &NagConfig) -> SamplerParams {
    SamplerParams {
        samplers: cfg.samplers as usize,
        iterations: cfg.iterations as usize,
        gd_steps: cfg.gd_steps as usize,
        momentum: cfg.momentum,
        step_coeff: (cfg.beta > 0.0).then_some(cfg.beta),
        es_threshold: cfg.es_threshold,
        sample_augmentation: cfg.sample_augmentation,
        early_stopping: cfg.early_stopping,
        init: InitMode::RandomConstellation,
        ..SamplerParams::default()
    }
}

/// Writes the default configuration: 8×8, 16-QAM, P = 16, S = 8, Ng = 8,
/// sample augmentation and early stopping on.
///
/// # Safety
/// `out` must be null or point to writable memory for one `NagConfig`.
#[no_mangle]
pub unsafe extern "C" fn nag_config_default(out: *mut NagConfig) -> NagStatus {
    if out.is_null() {
        set_error("config pointer is null");
        return NagStatus::NagNullPointer;
    }
    let p = SamplerParams::enhanced();
    *out = NagConfig {
        nr: 8,
        nt: 8,
        order: 16,
        samplers: p.samplers as u32,
        iterations: p.iterations as u32,
        gd_steps: p.gd_steps as u32,
        sample_augmentation: p.sample_augmentation,
        early_stopping: p.early_stopping,
        momentum: p.momentum,
        es_threshold: p.es_threshold,
        beta: 0.0,
        seed: 1,
    };
    NagStatus::NagOk
}

/// Creates a detector. Returns null on failure and sets `status` if it is
/// non-null.
///
/// # Safety
/// `config` must point to a valid `NagConfig`; `status` may be null.
#[no_mangle]
pub unsafe extern "C" fn nag_detector_new(config: *const NagConfig, status: *mut NagStatus) -> *mut NagDetector {
    let mut handle = ptr::null_mut();
    let s = guard(|| {
        let Some(cfg) = config.as_ref() else {
            set_error("config pointer is null");
            return NagStatus::NagNullPointer;
        };
        let constellation = match Constellation::new(cfg.order as usize) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let params = sampler_params(cfg);
        let mut problems = params.violations();
        if cfg.nr == 0 || cfg.nt == 0 {
            problems.push("nr and nt must be positive".into());
        }
        if !problems.is_empty() {
            return fail(Error::Config(problems));
        }
        handle = Box::into_raw(Box::new(NagDetector {
            nr: cfg.nr as usize,
            nt: cfg.nt as usize,
            constellation,
            params,
            seed: cfg.seed,
            calls: 0,
        }));
        NagStatus::NagOk
    });
    if let Some(out) = status.as_mut() {
        *out = s;
    }
    handle
}

/// Releases a detector. Null is ignored.
///
/// # Safety
/// `det` must be null or a handle from `nag_detector_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn nag_detector_free(det: *mut NagDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Detects one received vector.
///
/// `h` holds `nr·nt` and `y` holds `nr` interleaved complex values.
/// `symbols_out` receives `nt` constellation indices. `llr_out`, if non-null,
/// receives `nt·log2(order)` max-log LLRs (positive favours bit 1). `info`
/// may be null. Each call draws fresh sampler streams from the handle's seed
/// and call count, so a sequence of calls is reproducible.
///
/// # Safety
/// All non-null pointers must reference arrays of the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn nag_detector_detect(
    det: *mut NagDetector,
    h: *const f64,
    y: *const f64,
    sigma2: f64,
    symbols_out: *mut u8,
    llr_out: *mut f64,
    info: *mut NagDetectInfo,
) -> NagStatus {
    guard(|| {
        let Some(det) = det.as_mut() else {
            set_error("detector handle is null");
            return NagStatus::NagNullPointer;
        };
        let (Some(hv), Some(yv)) = (complex_slice(h, det.nr * det.nt), complex_slice(y, det.nr)) else {
            set_error("channel or observation pointer is null");
            return NagStatus::NagNullPointer;
        };
        if symbols_out.is_null() {
            set_error("symbol output pointer is null");
            return NagStatus::NagNullPointer;
        }
        if !sigma2.is_finite() || sigma2 < 0.0 {
            return fail(Error::Config(vec![format!("sigma2 must be finite and >= 0, got {sigma2}")]));
        }
        let hm = match ComplexMatrix::new(det.nr, det.nt, hv) {
            Ok(m) => m,
            Err(e) => return fail(e),
        };
        if let Some(i) = hm.as_slice().iter().chain(&yv).position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return fail(Error::NonFinite(i));
        }
        let ctx = match sampler::precompute(&hm, &yv, sigma2, &det.constellation) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let key = StreamKey::new(det.seed, 0, det.calls);
        det.calls += 1;
        let res = sampler::run_detector(&ctx, &det.params, &mut key.sampler_streams(det.params.samplers));
        slice::from_raw_parts_mut(symbols_out, det.nt).copy_from_slice(&res.symbols);
        if !llr_out.is_null() {
            let llr = match softout::compute_llrs(&res.samples, sigma2, None, &det.constellation) {
                Ok(l) => l,
                Err(e) => return fail(e),
            };
            slice::from_raw_parts_mut(llr_out, llr.values.len()).copy_from_slice(&llr.values);
        }
        if let Some(info) = info.as_mut() {
            *info = NagDetectInfo {
                iterations: res.iterations as u32,
                stopped_early: res.stopped_early,
                residual_sqnorm: res.sqnorm,
                multiplications: res.ops.total(),
            };
        }
        NagStatus::NagOk
    })
}

/// Exhaustive maximum-likelihood detection, capped at 2^24 candidates.
///
/// # Safety
/// `h` must hold `nr·nt` and `y` `nr` interleaved complex values;
/// `symbols_out` must hold `nt` bytes.
#[no_mangle]
pub unsafe extern "C" fn nag_ml_detect(
    nr: u32,
    nt: u32,
    order: u32,
    h: *const f64,
    y: *const f64,
    symbols_out: *mut u8,
    residual_sqnorm_out: *mut f64,
) -> NagStatus {
    guard(|| {
        let (nr, nt) = (nr as usize, nt as usize);
        let (Some(hv), Some(yv)) = (complex_slice(h, nr * nt), complex_slice(y, nr)) else {
            set_error("channel or observation pointer is null");
            return NagStatus::NagNullPointer;
        };
        if symbols_out.is_null() {
            set_error("symbol output pointer is null");
            return NagStatus::NagNullPointer;
        }
        let con = match Constellation::new(order as usize) {
            Ok(c) => c,
            Err(e) => return fail(e),
        };
        let res = ComplexMatrix::new(nr, nt, hv).and_then(|hm| detectors::detect_ml_exhaustive(&hm, &yv, &con));
        match res {
            Ok(ml) => {
                slice::from_raw_parts_mut(symbols_out, nt).copy_from_slice(&ml.symbols);
                if let Some(r) = residual_sqnorm_out.as_mut() {
                    *r = ml.sqnorm;
                }
                NagStatus::NagOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Closed-form complex multiplications per detected vector.
///
/// `iterations` is `S`, or the mean executed count `S_a` for the early
/// stopping variant. `ep_iterations` is only used by the EP formula.
///
/// # Safety
/// `out` must point to a writable `uint64_t`.
#[no_mangle]
pub unsafe extern "C" fn nag_closed_form_mults(
    algorithm: NagAlgorithm,
    n: u32,
    order: u32,
    samplers: u32,
    iterations: f64,
    gd_steps: u32,
    ep_iterations: u32,
    out: *mut u64,
) -> NagStatus {
    guard(|| {
        let Some(out) = out.as_mut() else {
            set_error("output pointer is null");
            return NagStatus::NagNullPointer;
        };
        if n == 0 || !iterations.is_finite() || iterations < 0.0 {
            return fail(Error::Config(vec!["n must be positive and iterations finite and >= 0".into()]));
        }
        let alg = match algorithm {
            NagAlgorithm::NagAlgMmse => Algorithm::Mmse,
            NagAlgorithm::NagAlgEp => Algorithm::Ep,
            NagAlgorithm::NagAlgMhgd => Algorithm::Mhgd,
            NagAlgorithm::NagAlgNagMcmc => Algorithm::NagMcmc,
            NagAlgorithm::NagAlgNagMcmcSaEs => Algorithm::NagMcmcSaEs,
        };
        let p = ClosedFormParams {
            n: n as usize,
            order: order as usize,
            samplers: samplers as usize,
            iterations,
            gd_steps: gd_steps as usize,
            ep_iterations: ep_iterations as usize,
        };
        *out = closed_form_mults(alg, &p);
        NagStatus::NagOk
    })
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn nag_status_message(status: NagStatus) -> *const c_char {
    let s: &'static CStr = match status {
        NagStatus::NagOk => c"ok",
        NagStatus::NagNullPointer => c"null pointer argument",
        NagStatus::NagInvalidArgument => c"invalid argument",
        NagStatus::NagUnsupportedOrder => c"unsupported QAM order",
        NagStatus::NagSingularChannel => c"channel Gram matrix is singular",
        NagStatus::NagSearchTooLarge => c"exhaustive search space too large",
        NagStatus::NagInternal => c"internal error",
    };
    s.as_ptr()
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn nag_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}
