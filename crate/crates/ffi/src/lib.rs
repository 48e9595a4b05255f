//! C ABI over the neurolock closed loop.
//!
//! Every entry point returns an [`NlStatus`]; on failure a message is kept
//! per thread and can be copied out with [`nl_last_error`]. Handles are
//! opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

use neurolock::config::RunConfig;
use neurolock::connectivity::{FeatureKind, FeatureWindowRecord};
use neurolock::phase::{cordic_phase, LpeLuts, PhaseEstimate};
use neurolock::pipeline::Pipeline;
use neurolock::stimulator::{ElectrodeState, StimPulseParams, Stimulator};
use neurolock::trigger::{StimMode, TriggerEvent};
use neurolock::{Error, N_CHANNELS};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlStatus {
    Ok = 0,
    /// A queue had nothing to return.
    Empty = 1,
    NullPointer = 2,
    Config = 3,
    Data = 4,
    Panic = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn fail(e: Error) -> NlStatus {
    let status = if e.exit_code() == 2 { NlStatus::Config } else { NlStatus::Data };
    set_error(e.to_string());
    status
}

fn guard(f: impl FnOnce() -> NlStatus) -> NlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            NlStatus::Panic
        }
    }
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            set_error(concat!("null pointer: ", stringify!($p)));
            return NlStatus::NullPointer;
        })+
    };
}

/// Copy the calling thread's last error message into `buf` (NUL
/// terminated, truncated to `len`). Returns the full message length.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn nl_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn nl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, NlStatus> {
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("string is not valid UTF-8");
        NlStatus::Data
    })
}

/// One phase conversion.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NlPhase {
    /// Signed 10-bit code, -512..=511 covering [-π, π).
    pub code: i16,
    pub degenerate: bool,
}

impl From<PhaseEstimate> for NlPhase {
    fn from(e: PhaseEstimate) -> Self {
        NlPhase { code: e.code.code() as i16, degenerate: e.degenerate }
    }
}

/// Opaque LPE lookup tables.
pub struct NlLpe(LpeLuts);

#[no_mangle]
pub extern "C" fn nl_lpe_new() -> *mut NlLpe {
    catch_unwind(|| Box::into_raw(Box::new(NlLpe(LpeLuts::build())))).unwrap_or(std::ptr::null_mut())
}

/// # Safety
/// `lpe` must come from [`nl_lpe_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nl_lpe_free(lpe: *mut NlLpe) {
    if !lpe.is_null() {
        drop(Box::from_raw(lpe));
    }
}

/// # Safety
/// `lpe` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_lpe_phase(lpe: *const NlLpe, re: i16, im: i16, out: *mut NlPhase) -> NlStatus {
    non_null!(lpe, out);
    *out = (*lpe).0.phase(re, im).into();
    NlStatus::Ok
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_cordic_phase(re: i16, im: i16, out: *mut NlPhase) -> NlStatus {
    non_null!(out);
    *out = cordic_phase(re, im).into();
    NlStatus::Ok
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlMode {
    SamplePhase = 0,
    SampleEnv = 1,
    WindowFeature = 2,
    Combined = 3,
    RandomPhase = 4,
}

impl From<StimMode> for NlMode {
    fn from(m: StimMode) -> Self {
        match m {
            StimMode::SamplePhase => NlMode::SamplePhase,
            StimMode::SampleEnv => NlMode::SampleEnv,
            StimMode::WindowFeature => NlMode::WindowFeature,
            StimMode::Combined => NlMode::Combined,
            StimMode::RandomPhase => NlMode::RandomPhase,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NlFeatureKind {
    Plv = 0,
    Pac = 1,
    PacRaw = 2,
    Se = 3,
}

impl From<FeatureKind> for NlFeatureKind {
    fn from(k: FeatureKind) -> Self {
        match k {
            FeatureKind::Plv => NlFeatureKind::Plv,
            FeatureKind::Pac => NlFeatureKind::Pac,
            FeatureKind::PacRaw => NlFeatureKind::PacRaw,
            FeatureKind::Se => NlFeatureKind::Se,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NlTriggerEvent {
    /// Decimated-rate sample index.
    pub t_index: u64,
    pub mode: NlMode,
    pub stim_channel: u8,
    pub target_code: i16,
    pub effective_target_code: i16,
    pub has_window_value: bool,
    /// UQ15, 32768 = 1.0.
    pub window_value: u16,
    pub source: u8,
}

impl From<&TriggerEvent> for NlTriggerEvent {
    fn from(e: &TriggerEvent) -> Self {
        NlTriggerEvent {
            t_index: e.t_index,
            mode: e.mode.into(),
            stim_channel: e.stim_channel,
            target_code: e.target.code() as i16,
            effective_target_code: e.effective_target.code() as i16,
            has_window_value: e.window_value.is_some(),
            window_value: e.window_value.map_or(0, |v| v.0),
            source: e.source,
        }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NlFeature {
    pub window_index: u64,
    pub source: u8,
    pub kind: NlFeatureKind,
    /// UQ15, 32768 = 1.0.
    pub value: u16,
}

impl From<&FeatureWindowRecord> for NlFeature {
    fn from(r: &FeatureWindowRecord) -> Self {
        NlFeature { window_index: r.window_index, source: r.source, kind: r.kind.into(), value: r.value.0 }
    }
}

/// Input-rate interval the front end should blank.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct NlBlanking {
    pub start: u64,
    pub duration: u32,
}

/// Opaque streaming pipeline with its output queues.
pub struct NlPipeline {
    pipe: Pipeline,
    events: VecDeque<TriggerEvent>,
    features: VecDeque<FeatureWindowRecord>,
    blanking: VecDeque<(u64, u32)>,
}

/// Build a pipeline from a JSON run configuration.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_pipeline_new(config_json: *const c_char, out: *mut *mut NlPipeline) -> NlStatus {
    non_null!(config_json, out);
    guard(|| {
        let text = match read_str(config_json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_json(text).and_then(|c| Pipeline::new(&c)) {
            Ok(pipe) => {
                *out = Box::into_raw(Box::new(NlPipeline {
                    pipe,
                    events: VecDeque::new(),
                    features: VecDeque::new(),
                    blanking: VecDeque::new(),
                }));
                NlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `p` must come from [`nl_pipeline_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nl_pipeline_free(p: *mut NlPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Feed one 16-channel ADC frame. `produced` is set when the frame
/// yielded a decimated sample.
///
/// # Safety
/// `p` must be live, `codes` must point to 16 values, `produced` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_pipeline_step(
    p: *mut NlPipeline,
    codes: *const i16,
    blanked: bool,
    produced: *mut bool,
) -> NlStatus {
    non_null!(p, codes, produced);
    guard(|| {
        let h = &mut *p;
        let frame: [i16; N_CHANNELS] = std::ptr::read_unaligned(codes as *const [i16; N_CHANNELS]);
        match h.pipe.step(&frame, blanked) {
            Ok(t) => {
                *produced = t.is_some();
                h.events.extend(h.pipe.drain_events());
                h.features.extend(h.pipe.drain_features());
                h.blanking.extend(h.pipe.drain_blanking());
                NlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Latest phase code of every channel.
///
/// # Safety
/// `p` must be live and `out` must have room for 16 values.
#[no_mangle]
pub unsafe extern "C" fn nl_pipeline_phases(p: *const NlPipeline, out: *mut i16) -> NlStatus {
    non_null!(p, out);
    for (i, c) in (*p).pipe.phases().iter().enumerate() {
        *out.add(i) = c.code() as i16;
    }
    NlStatus::Ok
}

/// # Safety
/// `p` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_pipeline_next_event(p: *mut NlPipeline, out: *mut NlTriggerEvent) -> NlStatus {
    non_null!(p, out);
    match (*p).events.pop_front() {
        Some(e) => {
            *out = (&e).into();
            NlStatus::Ok
        }
        None => NlStatus::Empty,
    }
}

/// # Safety
/// `p` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_pipeline_next_feature(p: *mut NlPipeline, out: *mut NlFeature) -> NlStatus {
    non_null!(p, out);
    match (*p).features.pop_front() {
        Some(r) => {
            *out = (&r).into();
            NlStatus::Ok
        }
        None => NlStatus::Empty,
    }
}

/// # Safety
/// `p` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_pipeline_next_blanking(p: *mut NlPipeline, out: *mut NlBlanking) -> NlStatus {
    non_null!(p, out);
    match (*p).blanking.pop_front() {
        Some((start, duration)) => {
            *out = NlBlanking { start, duration };
            NlStatus::Ok
        }
        None => NlStatus::Empty,
    }
}

unsafe fn parse_or_default<T>(s: *const c_char) -> Result<T, NlStatus>
where
    T: Default + for<'de> neurolock::serde::Deserialize<'de>,
{
    if s.is_null() {
        return Ok(T::default());
    }
    neurolock::config::parse_json(read_str(s)?).map_err(fail)
}

/// Outcome of one delivered pulse.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NlPulse {
    pub residual_v: f64,
    pub i_anodic_ua: f64,
    pub clamped: bool,
}

/// Opaque charge-balanced stimulator.
pub struct NlStimulator(Stimulator);

/// Create a stimulator. Null JSON pointers select the defaults; otherwise
/// they hold pulse parameters and electrode state objects.
///
/// # Safety
/// Non-null strings must be NUL terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn nl_stimulator_new(
    pulse_json: *const c_char,
    electrode_json: *const c_char,
    charge_balance: bool,
    out: *mut *mut NlStimulator,
) -> NlStatus {
    non_null!(out);
    guard(|| {
        let params = match parse_or_default::<StimPulseParams>(pulse_json) {
            Ok(v) => v,
            Err(s) => return s,
        };
        let state = match parse_or_default::<ElectrodeState>(electrode_json) {
            Ok(v) => v,
            Err(s) => return s,
        };
        match Stimulator::new(params, state, charge_balance) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(NlStimulator(s)));
                NlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `s` must come from [`nl_stimulator_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn nl_stimulator_free(s: *mut NlStimulator) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Deliver one pulse starting at `t_us`.
///
/// # Safety
/// `s` must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn nl_stimulator_fire(s: *mut NlStimulator, t_us: f64, out: *mut NlPulse) -> NlStatus {
    non_null!(s, out);
    guard(|| {
        let st = &mut (*s).0;
        match st.fire(t_us) {
            Ok(r) => {
                *out = NlPulse {
                    residual_v: r.residual_v,
                    i_anodic_ua: st.params.i_anodic_ua,
                    clamped: r.trace.any_clamped(),
                };
                NlStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
