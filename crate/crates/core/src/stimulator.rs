//! Biphasic current-pulse engine driving a series R + C electrode model,
//! with amplitude-stepping charge balancing and passive discharge.
//!
//! Currents are constant over each simulation tick, so the capacitor update
//! `Δv = i·dt/C` is exact and the trace conserves charge to rounding error.
//! Sign convention: cathodic current is negative.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StimPulseParams {
    pub i_cathodic_ua: f64,
    pub i_anodic_ua: f64,
    pub w_cathodic_us: u32,
    pub w_anodic_us: u32,
    pub gap_us: u32,
    pub v_safe_mv: f64,
    pub delta_i_ua: f64,
    pub compliance_v: f64,
    pub tick_us: u32,
}

impl Default for StimPulseParams {
    fn default() -> Self {
        StimPulseParams {
            i_cathodic_ua: 100.0,
            i_anodic_ua: 100.0,
            w_cathodic_us: 100,
            w_anodic_us: 100,
            gap_us: 10,
            v_safe_mv: 4.0,
            delta_i_ua: 2.0,
            compliance_v: 8.0,
            tick_us: 1,
        }
    }
}

impl StimPulseParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.i_cathodic_ua > 0.0 && self.i_anodic_ua > 0.0) {
            return Err(Error::config("pulse currents must be positive"));
        }
        if self.w_cathodic_us == 0 || self.w_anodic_us == 0 {
            return Err(Error::config("pulse widths must be positive"));
        }
        if !(self.v_safe_mv > 0.0 && self.compliance_v > 0.0) || self.delta_i_ua < 0.0 {
            return Err(Error::config("v_safe and compliance must be positive, delta_i non-negative"));
        }
        if self.tick_us == 0 {
            return Err(Error::Resolution("simulation tick must be positive".into()));
        }
        let min_w = self.w_cathodic_us.min(self.w_anodic_us);
        if self.tick_us as f64 > min_w as f64 / 10.0 {
            return Err(Error::Resolution(format!(
                "tick {} µs is coarser than a tenth of the shortest phase ({min_w} µs)",
                self.tick_us
            )));
        }
        if [self.w_cathodic_us, self.w_anodic_us, self.gap_us].iter().any(|w| w % self.tick_us != 0) {
            return Err(Error::Resolution("pulse timing must be a whole number of ticks".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ElectrodeState {
    pub v_cap: f64,
    pub r_s_ohm: f64,
    pub c_f: f64,
    pub r_dis_ohm: f64,
}

impl Default for ElectrodeState {
    fn default() -> Self {
        ElectrodeState { v_cap: 0.0, r_s_ohm: 5_000.0, c_f: 330e-9, r_dis_ohm: 10_000.0 }
    }
}

impl ElectrodeState {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_s_ohm > 0.0 && self.c_f > 0.0 && self.r_dis_ohm > 0.0) {
            return Err(Error::config("electrode parameters must be positive"));
        }
        if !self.v_cap.is_finite() {
            return Err(Error::config("capacitor voltage must be finite"));
        }
        Ok(())
    }

    pub fn tau_s(&self) -> f64 {
        self.r_dis_ohm * self.c_f
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PulsePhase {
    Cathodic,
    Gap,
    Anodic,
}

/// One tick: values at the start of the tick, current held over it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimTracePoint {
    pub t_us: f64,
    pub i_ua: f64,
    pub v_out_mv: f64,
    pub v_cap_mv: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StimTrace {
    pub tick_us: u32,
    pub points: Vec<StimTracePoint>,
    pub phases: Vec<PulsePhase>,
    /// Per-tick compliance clamp flags.
    pub clamped: Vec<bool>,
    pub residual_v: f64,
}

impl StimTrace {
    pub fn any_clamped(&self) -> bool {
        self.clamped.iter().any(|&c| c)
    }

    /// ∫i dt over the trace, in coulombs.
    pub fn charge_c(&self) -> f64 {
        self.points.iter().map(|p| p.i_ua * 1e-6).sum::<f64>() * self.tick_us as f64 * 1e-6
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PulseResult {
    pub trace: StimTrace,
    pub state: ElectrodeState,
    pub residual_v: f64,
}

/// Drive one cathodic-gap-anodic pulse starting at `t0_us`.
pub fn run_pulse_at(params: &StimPulseParams, state: &ElectrodeState, t0_us: f64) -> Result<PulseResult> {
    params.validate()?;
    state.validate()?;
    let tick = params.tick_us;
    let dt = tick as f64 * 1e-6;
    let segments = [
        (PulsePhase::Cathodic, params.w_cathodic_us, -params.i_cathodic_ua),
        (PulsePhase::Gap, params.gap_us, 0.0),
        (PulsePhase::Anodic, params.w_anodic_us, params.i_anodic_ua),
    ];
    let total = (params.w_cathodic_us + params.gap_us + params.w_anodic_us) / tick;
    let mut trace = StimTrace {
        tick_us: tick,
        points: Vec::with_capacity(total as usize),
        phases: Vec::with_capacity(total as usize),
        clamped: Vec::with_capacity(total as usize),
        residual_v: 0.0,
    };
    // Charge is accumulated in µA·tick so integer currents sum exactly.
    let q_scale = dt * 1e-6 / state.c_f;
    let mut q = 0.0f64;
    let mut v = state.v_cap;
    let mut t = t0_us;
    for (phase, width, i_set_ua) in segments {
        for _ in 0..width / tick {
            let demand = i_set_ua * 1e-6 * state.r_s_ohm + v;
            let clamp = demand.abs() > params.compliance_v;
            let i_ua = if clamp { (params.compliance_v.copysign(demand) - v) / state.r_s_ohm * 1e6 } else { i_set_ua };
            trace.points.push(StimTracePoint {
                t_us: t,
                i_ua,
                v_out_mv: (i_ua * 1e-6 * state.r_s_ohm + v) * 1e3,
                v_cap_mv: v * 1e3,
            });
            trace.phases.push(phase);
            trace.clamped.push(clamp);
            q += i_ua;
            v = state.v_cap + q * q_scale;
            t += tick as f64;
        }
    }
    trace.residual_v = v;
    Ok(PulseResult { trace, state: ElectrodeState { v_cap: v, ..*state }, residual_v: v })
}

pub fn run_pulse(params: &StimPulseParams, state: &ElectrodeState) -> Result<PulseResult> {
    run_pulse_at(params, state, 0.0)
}

/// One step of the amplitude-stepping balance loop.
pub fn cb_update(residual_v: f64, params: &StimPulseParams) -> StimPulseParams {
    let v_safe = params.v_safe_mv * 1e-3;
    let mut out = *params;
    if residual_v > v_safe {
        out.i_anodic_ua -= params.delta_i_ua;
    } else if residual_v < -v_safe {
        out.i_anodic_ua += params.delta_i_ua;
    } else {
        return out;
    }
    out.i_anodic_ua = out.i_anodic_ua.clamp(params.delta_i_ua, 2.0 * params.i_cathodic_ua);
    out
}

/// Exact exponential decay through the discharge resistor.
pub fn passive_discharge(state: &ElectrodeState, duration_us: f64) -> ElectrodeState {
    if duration_us <= 0.0 {
        return *state;
    }
    ElectrodeState { v_cap: state.v_cap * (-duration_us * 1e-6 / state.tau_s()).exp(), ..*state }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSummary {
    pub index: usize,
    pub i_anodic_ua: f64,
    pub residual_v: f64,
    pub clamped: bool,
}

/// A pulse train with passive discharge over `interval_us` between pulse
/// starts, optionally closing the balance loop after each pulse.
pub fn pulse_train(
    params: &StimPulseParams,
    state: &ElectrodeState,
    n_pulses: usize,
    interval_us: f64,
    charge_balance: bool,
) -> Result<Vec<PulseSummary>> {
    let mut p = *params;
    let mut s = *state;
    let busy = (p.w_cathodic_us + p.gap_us + p.w_anodic_us) as f64;
    let mut out = Vec::with_capacity(n_pulses);
    for index in 0..n_pulses {
        let r = run_pulse(&p, &s)?;
        out.push(PulseSummary {
            index,
            i_anodic_ua: p.i_anodic_ua,
            residual_v: r.residual_v,
            clamped: r.trace.any_clamped(),
        });
        if charge_balance {
            p = cb_update(r.residual_v, &p);
        }
        s = passive_discharge(&r.state, (interval_us - busy).max(0.0));
    }
    Ok(out)
}

/// One stimulator output: pulse parameters, electrode and balance loop.
#[derive(Clone, Debug)]
pub struct Stimulator {
    pub params: StimPulseParams,
    pub state: ElectrodeState,
    pub charge_balance: bool,
    last_t_us: Option<f64>,
    pulses: u64,
    clamped_pulses: u64,
    max_abs_residual_v: f64,
}

impl Stimulator {
    pub fn new(params: StimPulseParams, state: ElectrodeState, charge_balance: bool) -> Result<Self> {
        params.validate()?;
        state.validate()?;
        Ok(Stimulator {
            params,
            state,
            charge_balance,
            last_t_us: None,
            pulses: 0,
            clamped_pulses: 0,
            max_abs_residual_v: 0.0,
        })
    }

    /// Fire a pulse at absolute time `t_us`, discharging since the last one.
    pub fn fire(&mut self, t_us: f64) -> Result<PulseResult> {
        if let Some(last) = self.last_t_us {
            let busy = (self.params.w_cathodic_us + self.params.gap_us + self.params.w_anodic_us) as f64;
            self.state = passive_discharge(&self.state, (t_us - last - busy).max(0.0));
        }
        let r = run_pulse_at(&self.params, &self.state, t_us)?;
        self.state = r.state;
        self.last_t_us = Some(t_us);
        self.pulses += 1;
        self.clamped_pulses += r.trace.any_clamped() as u64;
        self.max_abs_residual_v = self.max_abs_residual_v.max(r.residual_v.abs());
        if self.charge_balance {
            self.params = cb_update(r.residual_v, &self.params);
        }
        Ok(r)
    }

    pub fn pulses(&self) -> u64 {
        self.pulses
    }

    pub fn clamped_pulses(&self) -> u64 {
        self.clamped_pulses
    }

    pub fn max_abs_residual_v(&self) -> f64 {
        self.max_abs_residual_v
    }
}
