//! Multi-mode stimulation trigger engine.
//!
//! One engine drives one stimulation channel from the decimated stream of a
//! monitored recording channel. Phase crossings are detected in the domain
//! of `d = wrap(code - target)`: a crossing is an upward zero crossing of
//! `d` whose per-sample step is positive and below a quarter turn. A step of
//! a quarter turn or more can only come from a wrap or a phase jump, and is
//! ignored.

use serde::{Deserialize, Serialize};

use crate::connectivity::FeatureKind;
use crate::fir::FilterSet;
use crate::fixed::{Q15, UQ15};
use crate::phase::{PhaseCode, CODES_PER_TURN};
use crate::{Error, Result, DECIMATION, N_CHANNELS, N_STIM_CHANNELS};

/// Largest accepted per-sample phase advance, in codes (π/2).
pub const MAX_PHASE_STEP: i32 = CODES_PER_TURN / 4;
pub const DEFAULT_PRBS_SEED: u16 = 0xACE1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StimMode {
    SamplePhase,
    SampleEnv,
    WindowFeature,
    Combined,
    RandomPhase,
}

impl StimMode {
    pub fn as_str(self) -> &'static str {
        match self {
            StimMode::SamplePhase => "SamplePhase",
            StimMode::SampleEnv => "SampleEnv",
            StimMode::WindowFeature => "WindowFeature",
            StimMode::Combined => "Combined",
            StimMode::RandomPhase => "RandomPhase",
        }
    }

    pub fn parse(s: &str) -> Option<StimMode> {
        [StimMode::SamplePhase, StimMode::SampleEnv, StimMode::WindowFeature, StimMode::Combined, StimMode::RandomPhase]
            .into_iter()
            .find(|m| m.as_str() == s)
    }

    fn uses_phase(self) -> bool {
        matches!(self, StimMode::SamplePhase | StimMode::Combined | StimMode::RandomPhase)
    }
}

/// Which pipeline delay the phase advance compensates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Compensation {
    Off,
    /// Band-stage (bandpass/Hilbert) group delay only.
    Band,
    /// Band stage plus the decimation lowpass.
    BandAndLpf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimConfig {
    pub mode: StimMode,
    /// Stimulator output driven by this engine (0..4).
    pub stim_channel: u8,
    /// Recording channel whose phase / envelope is monitored.
    pub source_channel: u8,
    pub target_phase_deg: f64,
    /// Envelope threshold for `SampleEnv`, as a fraction of full scale.
    pub env_threshold: f64,
    pub th_win_l: f64,
    pub th_win_h: f64,
    pub window_kind: FeatureKind,
    /// Pair id for PLV/PAC, channel id for SE.
    pub window_source: u8,
    pub f_max_hz: f64,
    pub compensation: Compensation,
    /// Overrides the delay derived from the filter set.
    pub group_delay_s: Option<f64>,
    /// Overrides the band centre.
    pub f_center_hz: Option<f64>,
    /// Decimated-rate samples.
    pub blank_duration_samples: u32,
    pub prbs_seed: u16,
    /// Diagnostic switch: `false` replaces the wrap-aware comparator with a
    /// plain signed comparison of raw codes.
    pub wrap_guard: bool,
}

impl Default for StimConfig {
    fn default() -> Self {
        StimConfig {
            mode: StimMode::SamplePhase,
            stim_channel: 0,
            source_channel: 0,
            target_phase_deg: 180.0,
            env_threshold: 0.5,
            th_win_l: 0.5,
            th_win_h: 1.0,
            window_kind: FeatureKind::Plv,
            window_source: 0,
            f_max_hz: 6.0,
            compensation: Compensation::Band,
            group_delay_s: None,
            f_center_hz: None,
            blank_duration_samples: 10,
            prbs_seed: DEFAULT_PRBS_SEED,
            wrap_guard: true,
        }
    }
}

impl StimConfig {
    pub fn validate(&self, decimated_rate_hz: f64) -> Result<()> {
        if self.stim_channel as usize >= N_STIM_CHANNELS {
            return Err(Error::config(format!("stim_channel {} outside 0..4", self.stim_channel)));
        }
        if self.source_channel as usize >= N_CHANNELS {
            return Err(Error::config(format!("source_channel {} outside 0..16", self.source_channel)));
        }
        if !(self.f_max_hz > 0.0) {
            return Err(Error::config("f_max_hz must be positive"));
        }
        if !(0.0..=1.0).contains(&self.th_win_l)
            || !(0.0..=1.0).contains(&self.th_win_h)
            || self.th_win_l > self.th_win_h
        {
            return Err(Error::config("window thresholds must satisfy 0 <= th_win_l <= th_win_h <= 1"));
        }
        if !(0.0..1.0).contains(&self.env_threshold) {
            return Err(Error::config("env_threshold must lie in [0, 1)"));
        }
        if self.prbs_seed == 0 && self.mode == StimMode::RandomPhase {
            return Err(Error::config("PRBS seed must be nonzero"));
        }
        if (self.blank_duration_samples as u64) > refractory_samples(decimated_rate_hz, self.f_max_hz) {
            return Err(Error::config("blank duration exceeds the refractory interval"));
        }
        Ok(())
    }

    /// Delay the phase advance compensates, in seconds.
    pub fn compensated_delay_s(&self, set: &FilterSet) -> f64 {
        if let Some(d) = self.group_delay_s {
            return d;
        }
        match self.compensation {
            Compensation::Off => 0.0,
            Compensation::Band => set.band_delay_s(),
            Compensation::BandAndLpf => set.band_delay_s() + set.lpf_delay_s(),
        }
    }
}

/// `ceil(rate / f_max)`, so the trigger rate never exceeds `f_max`.
pub fn refractory_samples(rate_hz: f64, f_max_hz: f64) -> u64 {
    // guard against 1000/6·6 style rounding just above an integer
    let r = rate_hz / f_max_hz;
    let n = r.round();
    if (r - n).abs() < 1e-9 {
        n as u64
    } else {
        r.ceil() as u64
    }
}

/// Advance a target phase by the pipeline delay at the band centre.
pub fn advance_compensation(target: PhaseCode, group_delay_s: f64, f_center_hz: f64) -> Result<PhaseCode> {
    let cycles = group_delay_s * f_center_hz;
    if !(0.0..1.0).contains(&cycles) {
        return Err(Error::config(format!("compensated delay spans {cycles:.3} cycles; must be in [0, 1)")));
    }
    let offset = (CODES_PER_TURN as f64 * cycles).round() as i32;
    Ok(target.wrapping_add(-offset))
}

/// 16-bit Fibonacci LFSR, x^16 + x^14 + x^13 + x^11 + 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prbs {
    lfsr: u16,
}

pub const PRBS_STEPS_PER_DRAW: u32 = 10;

impl Prbs {
    pub fn new(seed: u16) -> Result<Prbs> {
        if seed == 0 {
            return Err(Error::config("PRBS seed must be nonzero"));
        }
        Ok(Prbs { lfsr: seed })
    }

    pub fn state(&self) -> u16 {
        self.lfsr
    }

    #[inline]
    pub fn step(&mut self) -> u16 {
        let l = self.lfsr;
        let bit = (l ^ (l >> 2) ^ (l >> 3) ^ (l >> 5)) & 1;
        self.lfsr = (l >> 1) | (bit << 15);
        self.lfsr
    }

    /// Ten steps, then the top ten bits as a signed phase code.
    pub fn next_code(&mut self) -> PhaseCode {
        for _ in 0..PRBS_STEPS_PER_DRAW {
            self.step();
        }
        PhaseCode::wrap((self.lfsr >> 6) as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerEvent {
    /// Decimated clock.
    pub t_index: u64,
    pub mode: StimMode,
    pub stim_channel: u8,
    pub target: PhaseCode,
    pub effective_target: PhaseCode,
    pub window_value: Option<UQ15>,
    /// Monitored channel, or the window source for `WindowFeature`.
    pub source: u8,
}

/// Input-rate blanking interval for an accepted trigger, or `None` when
/// blanking is disabled.
pub fn emit_blanking(event: &TriggerEvent, blank_duration_samples: u32) -> Option<(u64, u32)> {
    (blank_duration_samples > 0)
        .then(|| (event.t_index * DECIMATION as u64, blank_duration_samples * DECIMATION as u32))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineCounters {
    pub fired: u64,
    pub suppressed_refractory: u64,
    pub suppressed_blanking: u64,
    /// Combined-mode samples evaluated before any window had completed.
    pub gate_missing: u64,
    /// Crossings rejected by the step guard.
    pub rejected_jumps: u64,
}

#[derive(Clone, Debug)]
pub struct TriggerEngine {
    mode: StimMode,
    stim_channel: u8,
    source_channel: u8,
    window_kind: FeatureKind,
    window_source: u8,
    advance: i32,
    target: PhaseCode,
    effective: PhaseCode,
    env_threshold: i16,
    win_lo: UQ15,
    win_hi: UQ15,
    refractory: u64,
    wrap_guard: bool,
    prbs: Option<Prbs>,
    prev_code: Option<PhaseCode>,
    prev_env: Option<Q15>,
    window_value: Option<UQ15>,
    last_fire: Option<u64>,
    counters: EngineCounters,
}

impl TriggerEngine {
    /// Engine whose compensation is taken from a designed filter set.
    pub fn new(cfg: &StimConfig, set: &FilterSet) -> Result<TriggerEngine> {
        let delay = cfg.compensated_delay_s(set);
        let fc = cfg.f_center_hz.unwrap_or(set.band.center());
        Self::with_params(cfg, set.decimated_rate_hz, delay, fc)
    }

    pub fn with_params(cfg: &StimConfig, rate_hz: f64, delay_s: f64, f_center_hz: f64) -> Result<TriggerEngine> {
        cfg.validate(rate_hz)?;
        let target = PhaseCode::from_degrees(cfg.target_phase_deg);
        let effective = advance_compensation(target, delay_s, f_center_hz)?;
        let advance = target.wrapping_sub(effective).code();
        let mut prbs = None;
        let (target, effective) = if cfg.mode == StimMode::RandomPhase {
            let mut p = Prbs::new(cfg.prbs_seed)?;
            let t = p.next_code();
            prbs = Some(p);
            (t, t.wrapping_add(-advance))
        } else {
            (target, effective)
        };
        Ok(TriggerEngine {
            mode: cfg.mode,
            stim_channel: cfg.stim_channel,
            source_channel: cfg.source_channel,
            window_kind: cfg.window_kind,
            window_source: cfg.window_source,
            advance,
            target,
            effective,
            env_threshold: Q15::from_f64(cfg.env_threshold).raw(),
            win_lo: UQ15::from_f64(cfg.th_win_l),
            win_hi: UQ15::from_f64(cfg.th_win_h),
            refractory: refractory_samples(rate_hz, cfg.f_max_hz),
            wrap_guard: cfg.wrap_guard,
            prbs,
            prev_code: None,
            prev_env: None,
            window_value: None,
            last_fire: None,
            counters: EngineCounters::default(),
        })
    }

    pub fn mode(&self) -> StimMode {
        self.mode
    }

    pub fn source_channel(&self) -> u8 {
        self.source_channel
    }

    pub fn stim_channel(&self) -> u8 {
        self.stim_channel
    }

    /// Feature kind and source the engine gates on.
    pub fn window_gate(&self) -> (FeatureKind, u8) {
        (self.window_kind, self.window_source)
    }

    pub fn effective_target(&self) -> PhaseCode {
        self.effective
    }

    /// Advance applied to the target, in codes.
    pub fn advance_codes(&self) -> i32 {
        self.advance
    }

    pub fn refractory(&self) -> u64 {
        self.refractory
    }

    pub fn counters(&self) -> EngineCounters {
        self.counters
    }

    pub fn window_value(&self) -> Option<UQ15> {
        self.window_value
    }

    fn in_range(&self, v: UQ15) -> bool {
        self.win_lo <= v && v <= self.win_hi
    }

    fn in_refractory(&self, t: u64) -> bool {
        self.last_fire.is_some_and(|l| t < l + self.refractory)
    }

    fn phase_crossed(&mut self, prev: PhaseCode, cur: PhaseCode) -> bool {
        if !self.wrap_guard {
            let t = self.effective.code();
            return prev.code() < t && t <= cur.code();
        }
        let dp = prev.wrapping_sub(self.effective).code();
        let dc = cur.wrapping_sub(self.effective).code();
        if dp < 0 && dc >= 0 {
            if dc - dp < MAX_PHASE_STEP {
                return true;
            }
            self.counters.rejected_jumps += 1;
        }
        false
    }

    fn fire(&mut self, t_index: u64, blanked: bool, source: u8) -> Option<TriggerEvent> {
        if blanked {
            self.counters.suppressed_blanking += 1;
            return None;
        }
        if self.in_refractory(t_index) {
            self.counters.suppressed_refractory += 1;
            return None;
        }
        let ev = TriggerEvent {
            t_index,
            mode: self.mode,
            stim_channel: self.stim_channel,
            target: self.target,
            effective_target: self.effective,
            window_value: self.window_value,
            source,
        };
        self.last_fire = Some(t_index);
        self.counters.fired += 1;
        if let Some(p) = &mut self.prbs {
            self.target = p.next_code();
            self.effective = self.target.wrapping_add(-self.advance);
        }
        Some(ev)
    }

    /// Per-sample update from the monitored channel.
    pub fn on_sample(&mut self, t_index: u64, phase: PhaseCode, env: Q15, blanked: bool) -> Option<TriggerEvent> {
        let prev_code = self.prev_code.replace(phase);
        let prev_env = self.prev_env.replace(env);
        let hit = match self.mode {
            StimMode::WindowFeature => false,
            StimMode::SampleEnv => {
                prev_env.is_some_and(|p| p.raw() < self.env_threshold && env.raw() >= self.env_threshold)
            }
            m => {
                debug_assert!(m.uses_phase());
                let crossed = prev_code.is_some_and(|p| self.phase_crossed(p, phase));
                if crossed && m == StimMode::Combined {
                    match self.window_value {
                        None => {
                            self.counters.gate_missing += 1;
                            false
                        }
                        Some(v) => self.in_range(v),
                    }
                } else {
                    crossed
                }
            }
        };
        if hit {
            self.fire(t_index, blanked, self.source_channel)
        } else {
            None
        }
    }

    /// A completed window for the configured feature source. Held for
    /// gating; in `WindowFeature` mode an in-range value fires at the
    /// window boundary `t_index`.
    pub fn on_window(&mut self, t_index: u64, value: UQ15, blanked: bool) -> Option<TriggerEvent> {
        self.window_value = Some(value);
        if self.mode == StimMode::WindowFeature && self.in_range(value) {
            self.fire(t_index, blanked, self.window_source)
        } else {
            None
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensation_examples() {
        let t = PhaseCode::from_degrees(180.0);
        assert_eq!(t.code(), -512);
        let e = advance_compensation(t, 0.031, 6.0).unwrap();
        assert_eq!(t.wrapping_sub(e).code(), 190);
        assert!((190.0 * 360.0 / 1024.0 - 66.8f64).abs() < 0.05);
        assert_eq!(advance_compensation(t, 0.0, 6.0).unwrap(), t);
        assert!(advance_compensation(PhaseCode::ZERO, 1.0 / 6.0, 6.0).is_err());
    }

    #[test]
    fn refractory_rounding() {
        assert_eq!(refractory_samples(1000.0, 6.0), 167);
        assert_eq!(refractory_samples(1000.0, 5.0), 200);
        assert_eq!(refractory_samples(1000.0, 3.0), 334);
    }

    #[test]
    fn blanking_mapping() {
        let ev = TriggerEvent {
            t_index: 500,
            mode: StimMode::SamplePhase,
            stim_channel: 0,
            target: PhaseCode::ZERO,
            effective_target: PhaseCode::ZERO,
            window_value: None,
            source: 0,
        };
        assert_eq!(emit_blanking(&ev, 10), Some((2000, 40)));
        assert_eq!(emit_blanking(&ev, 0), None);
        let cfg = StimConfig { blank_duration_samples: 200, ..Default::default() };
        assert!(cfg.validate(1000.0).is_err());
    }

    #[test]
    fn prbs_rejects_zero() {
        assert!(Prbs::new(0).is_err());
        let cfg = StimConfig { mode: StimMode::RandomPhase, prbs_seed: 0, ..Default::default() };
        assert!(TriggerEngine::with_params(&cfg, 1000.0, 0.0, 6.0).is_err());
    }

    #[test]
    fn combined_closed_gate() {
        let cfg = StimConfig { mode: StimMode::Combined, th_win_l: 0.5, ..Default::default() };
        let mut e = TriggerEngine::with_params(&cfg, 1000.0, 0.0, 6.0).unwrap();
        let mut fired = 0;
        for t in 0..5000u64 {
            if t % 1024 == 0 {
                e.on_window(t, UQ15::from_f64(0.3), false);
            }
            let code = PhaseCode::wrap((t as f64 * 6.144).round() as i32);
            fired += e.on_sample(t, code, Q15::ZERO, false).is_some() as u32;
        }
        assert_eq!(fired, 0);
    }

    #[test]
    fn sample_env_upward_crossing() {
        let cfg = StimConfig { mode: StimMode::SampleEnv, env_threshold: 0.25, ..Default::default() };
        let mut e = TriggerEngine::with_params(&cfg, 1000.0, 0.0, 6.0).unwrap();
        let env = [0.1, 0.2, 0.3, 0.4, 0.2, 0.1];
        let hits: Vec<u64> = env
            .iter()
            .enumerate()
            .filter_map(|(t, &v)| e.on_sample(t as u64, PhaseCode::ZERO, Q15::from_f64(v), false))
            .map(|ev| ev.t_index)
            .collect();
        assert_eq!(hits, vec![2]);
    }
}
