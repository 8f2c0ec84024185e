//! C ABI over the gooseguard library.
//!
//! Objects are opaque handles created by `gg_*_new` and released with the
//! matching `gg_*_free`. Every fallible call returns a [`GgStatus`]; on
//! failure [`gg_last_error`] describes what went wrong on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;
use std::sync::OnceLock;

use gooseguard::codec::decode_frame;
use gooseguard::flags::{FlagEvent, RuleId};
use gooseguard::ids::IdsConfig;
use gooseguard::pipeline::{Pipeline, PipelineMode, ReceivedFrame, Stage};
use gooseguard::scenario::{render_report, run_matrix, Format, ScenarioConfig};
use gooseguard::secure_ext::{KeyId, KeyStore, SenderId, Signer};
use gooseguard::time::SimTime;
use gooseguard::transmission::TransmissionProfile;

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GgStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    /// Output buffer too small; the required size was still written.
    BufferTooSmall = 3,
    Decode = 4,
    Sign = 5,
    Config = 6,
    Io = 7,
    Internal = 8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GgMode {
    MacOnly = 0,
    IdsOnly = 1,
    Hybrid = 2,
}

impl From<GgMode> for PipelineMode {
    fn from(m: GgMode) -> Self {
        match m {
            GgMode::MacOnly => PipelineMode::MacOnly,
            GgMode::IdsOnly => PipelineMode::IdsOnly,
            GgMode::Hybrid => PipelineMode::Hybrid,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GgStage {
    None = 0,
    Mac = 1,
    Ids = 2,
}

/// Outcome of one frame. `flags` has bit `1 << n` set for every rule `n`
/// that fired; `gg_rule_name(n)` names it.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GgVerdict {
    pub delivered: bool,
    /// Stage that dropped the frame; `None` when delivered.
    pub stage: GgStage,
    pub flags: u32,
    pub alert: bool,
}

pub struct GgKeyStore {
    inner: KeyStore,
}

pub struct GgSigner {
    inner: Signer,
}

pub struct GgPipeline {
    inner: Pipeline,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: GgStatus, message: impl ToString) -> GgStatus {
    let text = message.to_string().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
    status
}

fn guard(f: impl FnOnce() -> GgStatus) -> GgStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(GgStatus::Internal, "internal panic"))
}

/// Message for the last failed call on this thread, or NULL. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static upper-case name of the rule at bit `bit`, or NULL if out of range.
#[no_mangle]
pub extern "C" fn gg_rule_name(bit: u32) -> *const c_char {
    static NAMES: OnceLock<Vec<CString>> = OnceLock::new();
    let names = NAMES.get_or_init(|| RuleId::ALL.iter().map(|r| CString::new(r.name()).expect("ASCII name")).collect());
    names.get(bit as usize).map_or(ptr::null(), |n| n.as_ptr())
}

unsafe fn bytes<'a>(data: *const u8, len: usize) -> Option<&'a [u8]> {
    if data.is_null() {
        (len == 0).then_some(&[])
    } else {
        Some(slice::from_raw_parts(data, len))
    }
}

/// Copies `src` into a caller buffer, reporting the size needed.
unsafe fn write_out(src: &[u8], out: *mut u8, cap: usize, out_len: *mut usize) -> GgStatus {
    *out_len = src.len();
    if src.len() > cap {
        return fail(GgStatus::BufferTooSmall, format!("need {} bytes, buffer holds {cap}", src.len()));
    }
    if !src.is_empty() {
        ptr::copy_nonoverlapping(src.as_ptr(), out, src.len());
    }
    GgStatus::Ok
}

#[no_mangle]
pub extern "C" fn gg_keystore_new() -> *mut GgKeyStore {
    Box::into_raw(Box::new(GgKeyStore { inner: KeyStore::new() }))
}

/// Loads a keystore file (`<key id hex> = <32 hex digits>` per line).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gg_keystore_load(path: *const c_char, out: *mut *mut GgKeyStore) -> GgStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(GgStatus::NullArgument, "path and out are required");
        }
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(GgStatus::InvalidArgument, "path is not UTF-8");
        };
        match KeyStore::load(Path::new(path)) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(GgKeyStore { inner }));
                GgStatus::Ok
            }
            Err(e) => fail(GgStatus::Io, e),
        }
    })
}

/// # Safety
/// `ks` must come from this library and `key` point at 16 bytes.
#[no_mangle]
pub unsafe extern "C" fn gg_keystore_insert(ks: *mut GgKeyStore, key_id: u32, key: *const u8) -> GgStatus {
    guard(|| {
        if ks.is_null() || key.is_null() {
            return fail(GgStatus::NullArgument, "keystore and key are required");
        }
        let key: [u8; 16] = slice::from_raw_parts(key, 16).try_into().expect("16 bytes");
        match (*ks).inner.insert(KeyId(key_id), key) {
            Ok(()) => GgStatus::Ok,
            Err(e) => fail(GgStatus::InvalidArgument, e),
        }
    })
}

/// Selects the key `sender_id` signs with.
///
/// # Safety
/// `ks` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gg_keystore_set_active(ks: *mut GgKeyStore, sender_id: u32, key_id: u32) -> GgStatus {
    guard(|| {
        if ks.is_null() {
            return fail(GgStatus::NullArgument, "keystore is required");
        }
        if !(*ks).inner.contains(KeyId(key_id)) {
            return fail(GgStatus::InvalidArgument, format!("no key {key_id:08x}"));
        }
        (*ks).inner.set_active(SenderId(sender_id), KeyId(key_id));
        GgStatus::Ok
    })
}

/// # Safety
/// `ks` must come from this library or be NULL, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gg_keystore_free(ks: *mut GgKeyStore) {
    if !ks.is_null() {
        drop(Box::from_raw(ks));
    }
}

#[no_mangle]
pub extern "C" fn gg_signer_new(sender_id: u32) -> *mut GgSigner {
    Box::into_raw(Box::new(GgSigner { inner: Signer::new(SenderId(sender_id)) }))
}

/// # Safety
/// `signer` must come from this library or be NULL, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gg_signer_free(signer: *mut GgSigner) {
    if !signer.is_null() {
        drop(Box::from_raw(signer));
    }
}

/// Signs an encoded GOOSE frame, replacing any existing extension. The
/// signed frame goes to `out`; `out_len` receives its length even when
/// the buffer is too small.
///
/// # Safety
/// Pointers must be valid for the given lengths; handles must come from
/// this library.
#[no_mangle]
pub unsafe extern "C" fn gg_sign_frame(
    signer: *mut GgSigner,
    ks: *const GgKeyStore,
    frame: *const u8,
    frame_len: usize,
    out: *mut u8,
    out_cap: usize,
    out_len: *mut usize,
) -> GgStatus {
    guard(|| {
        if signer.is_null() || ks.is_null() || out_len.is_null() || (out.is_null() && out_cap > 0) {
            return fail(GgStatus::NullArgument, "signer, keystore and out_len are required");
        }
        let Some(input) = bytes(frame, frame_len) else {
            return fail(GgStatus::NullArgument, "frame is NULL");
        };
        let mut decoded = match decode_frame(input) {
            Ok(f) => f,
            Err(e) => return fail(GgStatus::Decode, e),
        };
        match (*signer).inner.sign_frame(&mut decoded, &(*ks).inner) {
            Ok(signed) => write_out(&signed, out, out_cap, out_len),
            Err(e) => fail(GgStatus::Sign, e),
        }
    })
}

/// Creates a subscriber pipeline. The keystore is copied. `t0_ms`,
/// `t1_ms` and `ttl_multiplier` describe the publisher being watched.
///
/// # Safety
/// `ks` must come from this library and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn gg_pipeline_new(
    mode: GgMode,
    ks: *const GgKeyStore,
    t0_ms: u32,
    t1_ms: u32,
    ttl_multiplier: u32,
    out: *mut *mut GgPipeline,
) -> GgStatus {
    guard(|| {
        if ks.is_null() || out.is_null() {
            return fail(GgStatus::NullArgument, "keystore and out are required");
        }
        let profile = match TransmissionProfile::new(t0_ms, t1_ms, ttl_multiplier) {
            Ok(p) => p,
            Err(e) => return fail(GgStatus::InvalidArgument, e),
        };
        let inner = Pipeline::new(mode.into(), (*ks).inner.clone(), IdsConfig::new(profile));
        *out = Box::into_raw(Box::new(GgPipeline { inner }));
        GgStatus::Ok
    })
}

fn mask<'a>(flags: impl IntoIterator<Item = &'a FlagEvent>) -> u32 {
    flags.into_iter().fold(0, |m, f| m | f.rule.bit())
}

/// Runs one received frame through the pipeline at `now_us` (simulation
/// microseconds, non-decreasing).
///
/// # Safety
/// `p` must come from this library, `frame` be valid for `frame_len`
/// bytes and `verdict` writable.
#[no_mangle]
pub unsafe extern "C" fn gg_pipeline_process(
    p: *mut GgPipeline,
    frame: *const u8,
    frame_len: usize,
    now_us: u64,
    verdict: *mut GgVerdict,
) -> GgStatus {
    guard(|| {
        if p.is_null() || verdict.is_null() {
            return fail(GgStatus::NullArgument, "pipeline and verdict are required");
        }
        let Some(input) = bytes(frame, frame_len) else {
            return fail(GgStatus::NullArgument, "frame is NULL");
        };
        let rx = match ReceivedFrame::decode(input.to_vec()) {
            Ok(rx) => rx,
            Err(e) => return fail(GgStatus::Decode, e),
        };
        let v = (*p).inner.process(&rx, SimTime::from_micros(now_us));
        *verdict = GgVerdict {
            delivered: v.delivered(),
            stage: match v.stage {
                Stage::None => GgStage::None,
                Stage::Mac => GgStage::Mac,
                Stage::Ids => GgStage::Ids,
            },
            flags: mask(&v.flags),
            alert: v.has_alert(),
        };
        GgStatus::Ok
    })
}

/// Microsecond instant of the next TTL deadline, or `UINT64_MAX` if none.
/// A stream expires once the clock passes its deadline.
///
/// # Safety
/// `p` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn gg_pipeline_next_expiry(p: *const GgPipeline) -> u64 {
    if p.is_null() {
        return u64::MAX;
    }
    (*p).inner.next_expiry().map_or(u64::MAX, SimTime::as_micros)
}

/// Checks TTL expiry at `now_us`; `flags` receives the mask of rules raised.
///
/// # Safety
/// `p` must come from this library and `flags` be writable.
#[no_mangle]
pub unsafe extern "C" fn gg_pipeline_check_expiry(p: *mut GgPipeline, now_us: u64, flags: *mut u32) -> GgStatus {
    guard(|| {
        if p.is_null() || flags.is_null() {
            return fail(GgStatus::NullArgument, "pipeline and flags are required");
        }
        *flags = mask(&(*p).inner.check_expiry(SimTime::from_micros(now_us)));
        GgStatus::Ok
    })
}

/// # Safety
/// `p` must come from this library or be NULL, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gg_pipeline_free(p: *mut GgPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Retransmission intervals (ms) after an event. Writes up to `cap`
/// entries; `out_len` receives the full count.
///
/// # Safety
/// `out` must hold `cap` entries and `out_len` be writable.
#[no_mangle]
pub unsafe extern "C" fn gg_burst_schedule(t0_ms: u32, t1_ms: u32, out: *mut u32, cap: usize, out_len: *mut usize) -> GgStatus {
    guard(|| {
        if out_len.is_null() || (out.is_null() && cap > 0) {
            return fail(GgStatus::NullArgument, "out_len is required");
        }
        let profile = match TransmissionProfile::new(t0_ms, t1_ms, 2) {
            Ok(p) => p,
            Err(e) => return fail(GgStatus::InvalidArgument, e),
        };
        let schedule = profile.burst_schedule();
        *out_len = schedule.len();
        if schedule.len() > cap {
            return fail(GgStatus::BufferTooSmall, format!("need {} entries, buffer holds {cap}", schedule.len()));
        }
        ptr::copy_nonoverlapping(schedule.as_ptr(), out, schedule.len());
        GgStatus::Ok
    })
}

/// Runs the attack matrix and returns the structured report as JSON in
/// `*out`, to be released with `gg_string_free`. `config_path` may be NULL
/// for the built-in scenario; a nonzero `seed` overrides the scenario seed.
///
/// # Safety
/// `config_path` must be NULL or NUL-terminated, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gg_run_matrix_json(config_path: *const c_char, seed: u64, out: *mut *mut c_char) -> GgStatus {
    guard(|| {
        if out.is_null() {
            return fail(GgStatus::NullArgument, "out is required");
        }
        let config = if config_path.is_null() {
            ScenarioConfig::default()
        } else {
            let Ok(path) = CStr::from_ptr(config_path).to_str() else {
                return fail(GgStatus::InvalidArgument, "config path is not UTF-8");
            };
            match ScenarioConfig::load(Path::new(path)) {
                Ok(c) => c,
                Err(e) => return fail(GgStatus::Config, e),
            }
        };
        let config = if seed != 0 { config.with_seed(seed) } else { config };
        let report = match run_matrix(&config) {
            Ok(r) => r,
            Err(e) => return fail(GgStatus::Config, e),
        };
        let json = render_report(&report, Format::Json);
        *out = CString::new(json).expect("JSON has no NUL").into_raw();
        GgStatus::Ok
    })
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn gg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
