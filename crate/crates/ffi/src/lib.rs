//! C ABI over the speechpanel scoring path.
//!
//! Handles are opaque pointers created by `*_load` functions and released
//! with the matching `*_free`. Every fallible call returns an [`SpStatus`];
//! on failure a description is available from [`sp_last_error`] on the same
//! thread until the next failing call.
//!
//! Handles are safe to share across threads for scoring. Functions that take
//! a `*mut` handle must not race with other calls on that handle.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use speechpanel::corpus::Tweet;
use speechpanel::panel::{validate_gamma, Expert, Panel, PanelManifest, SpeechLabel, Voter};
use speechpanel::Error;

/// Status codes. Values from 10 upward match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Panic = 3,
    Io = 10,
    Format = 11,
    Parse = 12,
    Duplicate = 13,
    Capacity = 14,
    Label = 15,
    Config = 16,
    Numeric = 17,
    Shape = 18,
    Unscorable = 19,
    UndefinedMetrics = 20,
    UndefinedCorrelation = 21,
    Structure = 22,
    EmptyResult = 23,
    Serialization = 24,
}

impl From<&Error> for SpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => SpStatus::Io,
            Error::Format { .. } => SpStatus::Format,
            Error::Parse { .. } => SpStatus::Parse,
            Error::Duplicate(_) => SpStatus::Duplicate,
            Error::Capacity { .. } => SpStatus::Capacity,
            Error::Label(_) => SpStatus::Label,
            Error::Config(_) => SpStatus::Config,
            Error::Numeric { .. } => SpStatus::Numeric,
            Error::Shape { .. } => SpStatus::Shape,
            Error::Unscorable(_) => SpStatus::Unscorable,
            Error::UndefinedMetrics(_) => SpStatus::UndefinedMetrics,
            Error::UndefinedCorrelation(_) => SpStatus::UndefinedCorrelation,
            Error::Structure { .. } => SpStatus::Structure,
            Error::EmptyResult(_) => SpStatus::EmptyResult,
            Error::Serialization(_) => SpStatus::Serialization,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SpLabel {
    Hate = 0,
    Counter = 1,
    Neutral = 2,
}

impl From<SpeechLabel> for SpLabel {
    fn from(l: SpeechLabel) -> Self {
        match l {
            SpeechLabel::Hate => SpLabel::Hate,
            SpeechLabel::Counter => SpLabel::Counter,
            SpeechLabel::Neutral => SpLabel::Neutral,
        }
    }
}

/// Panel output for one tweet. `s_hate + s_counter == 1`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpScore {
    pub s_hate: f64,
    pub s_counter: f64,
    /// Experts whose vote entered the average.
    pub voters: usize,
    /// Label at the handle's current gamma.
    pub label: SpLabel,
}

/// Leakage-guard counters accumulated by a panel handle.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpCounters {
    pub cast: u64,
    pub withheld: u64,
    pub violations: u64,
}

/// Opaque panel handle.
pub struct SpPanel {
    panel: Panel,
    gamma: f64,
}

/// Opaque expert handle.
pub struct SpExpert {
    expert: Expert,
    fingerprint: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

struct Failure(SpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(SpStatus::from(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SpStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SpStatus::NullArgument, format!("{name} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| Failure(SpStatus::InvalidUtf8, format!("{name}: {e}")))
}

fn null(name: &str) -> Failure {
    Failure(SpStatus::NullArgument, format!("{name} is null"))
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a panel manifest and every expert it references. Pass NaN as
/// `gamma` to keep the manifest's threshold.
///
/// # Safety
/// `manifest_path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_panel_load(manifest_path: *const c_char, gamma: f64, out: *mut *mut SpPanel) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = PathBuf::from(str_arg(manifest_path, "manifest_path")?);
        let manifest = PanelManifest::load(&path)?;
        let panel = manifest.load_panel(&path, (!gamma.is_nan()).then_some(gamma))?;
        let gamma = panel.gamma();
        *out = Box::into_raw(Box::new(SpPanel { panel, gamma }));
        Ok(())
    })
}

/// # Safety
/// `panel` must come from [`sp_panel_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_panel_free(panel: *mut SpPanel) {
    if !panel.is_null() {
        drop(Box::from_raw(panel));
    }
}

/// Number of experts in the panel, or 0 for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_panel_len(panel: *const SpPanel) -> usize {
    panel.as_ref().map_or(0, |p| p.panel.len())
}

/// Current threshold, or NaN for a null handle.
///
/// # Safety
/// `panel` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_panel_gamma(panel: *const SpPanel) -> f64 {
    panel.as_ref().map_or(f64::NAN, |p| p.gamma)
}

/// Change the threshold used for labels; must lie in [0.5, 1].
///
/// # Safety
/// `panel` must be a live handle not in use by another thread.
#[no_mangle]
pub unsafe extern "C" fn sp_panel_set_gamma(panel: *mut SpPanel, gamma: f64) -> SpStatus {
    guard(|| {
        let p = panel.as_mut().ok_or_else(|| null("panel"))?;
        validate_gamma(gamma)?;
        p.gamma = gamma;
        Ok(())
    })
}

/// Score one tweet. `tweet_id` may be null; experts trained on a tweet
/// with the same id withhold their vote.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_panel_score(
    panel: *const SpPanel,
    tweet_id: *const c_char,
    text: *const c_char,
    out: *mut SpScore,
) -> SpStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| null("panel"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let id = if tweet_id.is_null() { "" } else { str_arg(tweet_id, "tweet_id")? };
        let tweet = Tweet::unlabeled(id, str_arg(text, "text")?);
        let score = p.panel.score(&tweet)?;
        *out = SpScore {
            s_hate: score.s_hate,
            s_counter: score.s_counter,
            voters: score.voters,
            label: score.label(p.gamma).into(),
        };
        Ok(())
    })
}

/// # Safety
/// `panel` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_panel_counters(panel: *const SpPanel, out: *mut SpCounters) -> SpStatus {
    guard(|| {
        let p = panel.as_ref().ok_or_else(|| null("panel"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let (cast, withheld, violations) = p.panel.counters().snapshot();
        *out = SpCounters {
            cast,
            withheld,
            violations,
        };
        Ok(())
    })
}

/// Load one serialized expert.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_expert_load(path: *const c_char, out: *mut *mut SpExpert) -> SpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let expert = Expert::load(str_arg(path, "path")?)?;
        let fingerprint = CString::new(expert.fingerprint.clone())
            .map_err(|e| Failure(SpStatus::Serialization, e.to_string()))?;
        *out = Box::into_raw(Box::new(SpExpert { expert, fingerprint }));
        Ok(())
    })
}

/// Write the expert back to disk in its binary format.
///
/// # Safety
/// `expert` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sp_expert_save(expert: *const SpExpert, path: *const c_char) -> SpStatus {
    guard(|| {
        let e = expert.as_ref().ok_or_else(|| null("expert"))?;
        e.expert.save(str_arg(path, "path")?)?;
        Ok(())
    })
}

/// # Safety
/// `expert` must come from [`sp_expert_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sp_expert_free(expert: *mut SpExpert) {
    if !expert.is_null() {
        drop(Box::from_raw(expert));
    }
}

/// Fingerprint string owned by the handle, or null for a null handle.
///
/// # Safety
/// `expert` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_expert_fingerprint(expert: *const SpExpert) -> *const c_char {
    expert.as_ref().map_or(ptr::null(), |e| e.fingerprint.as_ptr())
}

/// p(Hate | text) from a single expert. `low_confidence` may be null; when
/// given it is set when no token of the text was in the vocabulary.
///
/// # Safety
/// Pointers must be valid; `text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_expert_prob_hate(
    expert: *const SpExpert,
    text: *const c_char,
    p_hate: *mut f64,
    low_confidence: *mut bool,
) -> SpStatus {
    guard(|| {
        let e = expert.as_ref().ok_or_else(|| null("expert"))?;
        let p_hate = p_hate.as_mut().ok_or_else(|| null("p_hate"))?;
        let prob = e.expert.prob_hate(&Tweet::unlabeled("", str_arg(text, "text")?))?;
        *p_hate = prob.p_hate;
        if let Some(lc) = low_confidence.as_mut() {
            *lc = prob.low_confidence;
        }
        Ok(())
    })
}
