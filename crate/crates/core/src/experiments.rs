//! Experiment drivers: phase-locking error, noise tolerance, feature
//! fidelity against the float reference, and the LPE/CORDIC comparison.

use std::hint::black_box;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SimulationSpec, SourceSpec};
use crate::connectivity::{ideal, FeatureKind, PairFeature, PairSpec};
use crate::fir::{design_filters, BandConfig, ChannelFilter, FilterSet, FirStage};
use crate::io::Recording;
use crate::oracle::oracle_ground_truth;
use crate::phase::{cordic_phase, op_count_model, oracle_codes_f64, LpeLuts, OpCounts, PhaseKernel, CODES_PER_TURN};
use crate::pipeline::{feature_value, run_closed_loop, synthesize, RunSummary};
use crate::signal::{gen_coupled_pair, CoupledKind, CoupledParams};
use crate::stats::{pearson, wrap_deg, CircularStats, Correlation};
use crate::trigger::{Compensation, StimConfig, StimMode};
use crate::{Error, Result, DECIMATION, N_CHANNELS};

/// Synthetic sine-plus-pink-noise phase-locking protocol on channel 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhaseProtocol {
    pub amp_pp_v: f64,
    pub freq_hz: f64,
    /// Pink-noise rms as a multiple of the sine rms.
    pub noise_factor: f64,
    pub duration_s: f64,
    pub target_deg: f64,
    pub compensation: Compensation,
    pub mode: StimMode,
    pub adc_fullscale_vpp: f64,
    pub seed: u64,
}

impl Default for PhaseProtocol {
    fn default() -> Self {
        PhaseProtocol {
            amp_pp_v: 2e-3,
            freq_hz: 6.0,
            noise_factor: 0.0,
            duration_s: 30.0,
            target_deg: 180.0,
            compensation: Compensation::BandAndLpf,
            mode: StimMode::SamplePhase,
            adc_fullscale_vpp: 1.2,
            seed: 1,
        }
    }
}

impl PhaseProtocol {
    pub fn sine_rms_v(&self) -> f64 {
        self.amp_pp_v / (2.0 * 2f64.sqrt())
    }

    pub fn to_config(&self) -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.frontend.adc_fullscale_vpp = self.adc_fullscale_vpp;
        cfg.frontend.seed = self.seed;
        cfg.seed = self.seed;
        cfg.stim = vec![StimConfig {
            mode: self.mode,
            target_phase_deg: self.target_deg,
            compensation: self.compensation,
            ..StimConfig::default()
        }];
        cfg.simulation = Some(SimulationSpec {
            duration_s: self.duration_s,
            sources: vec![SourceSpec::SinePink {
                channel: 0,
                amp_pp_v: self.amp_pp_v,
                freq_hz: self.freq_hz,
                pink_rms_v: self.noise_factor * self.sine_rms_v(),
            }],
        });
        cfg
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultStatus {
    Ok,
    NoTriggers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseErrorResult {
    pub status: ResultStatus,
    pub stats: Option<CircularStats>,
    pub triggers: usize,
    /// Triggers too close to either end of the trace for the zero-phase
    /// reference to be trusted.
    pub excluded_edge: usize,
    pub advance_codes: i32,
    pub saturated: bool,
    /// Per-trigger error, ground truth minus target, degrees.
    pub errors_deg: Vec<f64>,
}

/// Phase-locking error at every trigger of the first stimulation engine,
/// measured against the zero-phase float reference of its source channel.
pub fn phase_error_experiment(cfg: &RunConfig, rec: &Recording) -> Result<PhaseErrorResult> {
    let stim = cfg.stim.first().ok_or_else(|| Error::config("phase-error needs a stimulation engine"))?;
    if !matches!(stim.mode, StimMode::SamplePhase | StimMode::RandomPhase) {
        return Err(Error::config("phase-error needs SamplePhase or RandomPhase mode"));
    }
    let ch = stim.source_channel as usize;
    let trace = rec.channels.get(ch).ok_or_else(|| Error::input(format!("recording has no channel {ch}")))?;
    let band = cfg.band(ch);
    let truth = oracle_ground_truth(trace, &band, rec.rate_hz)?;
    let out = run_closed_loop(cfg, rec, |_, _| Ok(()))?;

    // filtfilt start-up and end transients last a few band cycles
    let edge = (2.0 * rec.rate_hz / band.f_lo_hz).ceil() as u64;
    let n = truth.len() as u64;
    let mut errors_deg = Vec::new();
    let mut excluded_edge = 0;
    for ev in out.events.iter().filter(|e| e.stim_channel == stim.stim_channel) {
        let idx = ev.t_index * DECIMATION as u64;
        if idx < edge || idx + edge >= n {
            excluded_edge += 1;
            continue;
        }
        errors_deg.push(wrap_deg(truth[idx as usize].to_degrees() - ev.target.degrees()));
    }
    let stats = CircularStats::from_degrees(&errors_deg);
    Ok(PhaseErrorResult {
        status: if stats.is_some() { ResultStatus::Ok } else { ResultStatus::NoTriggers },
        stats,
        triggers: out.events.len(),
        excluded_edge,
        advance_codes: out.summary.stim.first().map_or(0, |s| s.advance_codes),
        saturated: out.summary.saturated,
        errors_deg,
    })
}

/// Run the protocol end to end.
pub fn run_protocol(p: &PhaseProtocol) -> Result<PhaseErrorResult> {
    let cfg = p.to_config();
    phase_error_experiment(&cfg, &synthesize(&cfg)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub noise_factor: f64,
    pub result: PhaseErrorResult,
}

/// Repeat the protocol at each noise level with everything else fixed.
pub fn noise_sweep(base: &PhaseProtocol, factors: &[f64]) -> Result<Vec<NoisePoint>> {
    factors
        .iter()
        .map(|&f| {
            let p = PhaseProtocol { noise_factor: f, ..base.clone() };
            Ok(NoisePoint { noise_factor: f, result: run_protocol(&p)? })
        })
        .collect()
}

/// Sweep that ramps a coupling parameter across `levels` recordings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationSweep {
    pub levels: usize,
    pub windows_per_level: usize,
    pub low_band: BandConfig,
    pub high_band: BandConfig,
    pub params: CoupledParams,
    /// Largest lag-jitter standard deviation of the PLV sweep, radians.
    pub max_jitter: f64,
}

impl Default for CorrelationSweep {
    fn default() -> Self {
        CorrelationSweep {
            levels: 12,
            windows_per_level: 20,
            low_band: BandConfig::theta(),
            high_band: BandConfig::new(60.0, 100.0),
            params: CoupledParams { noise_rms_v: 5e-5, ..CoupledParams::default() },
            max_jitter: std::f64::consts::PI,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureCorrelation {
    pub feature: String,
    pub sweep: String,
    pub windows: usize,
    pub correlation: Correlation,
    pub fixed: Vec<f64>,
    pub ideal: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub results: Vec<FeatureCorrelation>,
}

impl CorrelationReport {
    pub fn get(&self, feature: &str) -> Option<&FeatureCorrelation> {
        self.results.iter().find(|r| r.feature == feature)
    }
}

/// Fixed-point and ideal per-window values of one pair feature on one
/// synthetic recording. The first window holds the filter warm-up and is
/// dropped.
fn feature_pairs(
    base: &RunConfig,
    sweep: &CorrelationSweep,
    kind: CoupledKind,
    feature: PairFeature,
    params: &CoupledParams,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = base.window.n_samples;
    let rate = base.input_rate_hz();
    let decimated = base.decimated_rate_hz();
    // one spare window for warm-up, one second of tail for the reference
    let duration_s = ((sweep.windows_per_level + 1) * n) as f64 / decimated + 1.0;
    let p = CoupledParams { rate_hz: rate, duration_s, ..*params };
    let [a, b] = gen_coupled_pair(kind, &p, seed)?;
    let band_b = match feature {
        PairFeature::Plv => sweep.low_band,
        PairFeature::Pac => sweep.high_band,
    };

    let mut cfg = base.clone();
    cfg.bands = (0..N_CHANNELS).map(|ch| if ch == 1 { band_b } else { sweep.low_band }).collect();
    cfg.pairs = vec![PairSpec { id: 0, ch_a: 0, ch_b: 1, feature }];
    cfg.stim.clear();
    cfg.simulation = None;
    let mut channels = vec![vec![0.0; a.len()]; N_CHANNELS];
    channels[0] = a.clone();
    channels[1] = b.clone();
    let out = run_closed_loop(&cfg, &Recording { rate_hz: rate, channels }, |_, _| Ok(()))?;
    let fixed = feature_value(&out.features, FeatureKind::from(feature), 0);

    let set = design_filters(&sweep.low_band, rate, &cfg.lpf, cfg.band_taps)?;
    let delay = (set.total_delay_s() * decimated).round() as usize;
    let za = ideal::aligned_analytic(&a, &sweep.low_band, rate, DECIMATION, delay)?;
    let zb = ideal::aligned_analytic(&b, &band_b, rate, DECIMATION, delay)?;
    let reference = ideal::pair_windows(feature, &za, &zb, n);

    let w = sweep.windows_per_level.min(fixed.len().saturating_sub(1)).min(reference.len().saturating_sub(1));
    Ok((fixed[1..=w].to_vec(), reference[1..=w].to_vec()))
}

/// Pearson correlation between the fixed-point l∞ features and the ideal
/// Euclidean ones across a PLV jitter sweep, a PAC depth sweep and an
/// independent-pair control.
pub fn correlation_experiment(base: &RunConfig, sweep: &CorrelationSweep) -> Result<CorrelationReport> {
    if sweep.levels < 2 || sweep.windows_per_level == 0 {
        return Err(Error::config("correlation sweep needs at least two levels and one window per level"));
    }
    let lsb = 1.0 / 32768.0;
    let ramp = |i: usize| i as f64 / (sweep.levels - 1) as f64;
    let mut results = Vec::new();

    let runs: [(&str, &str, CoupledKind, PairFeature); 3] = [
        ("PLV", "jitter", CoupledKind::PlvLocked, PairFeature::Plv),
        ("PAC", "depth", CoupledKind::PacCoupled, PairFeature::Pac),
        ("PLV", "independent", CoupledKind::Independent, PairFeature::Plv),
    ];
    for (name, sweep_name, kind, feature) in runs {
        let (mut fixed, mut reference) = (Vec::new(), Vec::new());
        let levels = if kind == CoupledKind::Independent { 1 } else { sweep.levels };
        for i in 0..levels {
            let mut params = sweep.params;
            match kind {
                CoupledKind::PlvLocked => params.jitter_rad = sweep.max_jitter * ramp(i),
                CoupledKind::PacCoupled => params.m = ramp(i),
                CoupledKind::Independent => {
                    params.noise_rms_v = params.amp_a_v;
                }
            }
            let seed = base.seed.wrapping_add(1000 * results.len() as u64 + i as u64);
            let (f, r) = feature_pairs(base, sweep, kind, feature, &params, seed)?;
            fixed.extend(f);
            reference.extend(r);
        }
        results.push(FeatureCorrelation {
            feature: if kind == CoupledKind::Independent { format!("{name}-control") } else { name.to_string() },
            sweep: sweep_name.to_string(),
            windows: fixed.len(),
            correlation: pearson(&fixed, &reference, lsb),
            fixed,
            ideal: reference,
        });
    }
    Ok(CorrelationReport { results })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelBench {
    pub kernel: PhaseKernel,
    /// Largest circular distance to the rounded arctangent, codes.
    pub max_error_codes: u32,
    /// Mean |code − exact arctangent|, codes.
    pub mean_abs_error_codes: f64,
    /// Share of inputs that hit the rounded arctangent exactly.
    pub exact_fraction: f64,
    pub ops: OpCounts,
    pub conversions_per_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub inputs: u64,
    pub kernels: Vec<KernelBench>,
}

fn circular_code_error(code: i32, exact: f64) -> f64 {
    let turn = CODES_PER_TURN as f64;
    (code as f64 - exact + turn / 2.0).rem_euclid(turn) - turn / 2.0
}

/// Exhaustive accuracy over all signed 10-bit (re, im) pairs plus timed
/// throughput for both phase kernels.
pub fn bench_compare(timing_passes: u32) -> BenchReport {
    let luts = LpeLuts::build();
    let inputs: Vec<(i16, i16)> =
        (-512i16..512).flat_map(|re| (-512i16..512).map(move |im| (re, im))).filter(|&p| p != (0, 0)).collect();
    let exact: Vec<f64> = inputs.iter().map(|&(re, im)| oracle_codes_f64(re as f64, im as f64)).collect();
    let run = |kind: PhaseKernel| -> KernelBench {
        let convert = |re: i16, im: i16| match kind {
            PhaseKernel::Lpe => luts.phase(re, im),
            PhaseKernel::Cordic => cordic_phase(re, im),
        };
        let (mut max_err, mut sum_abs, mut hits) = (0u32, 0.0, 0usize);
        for (&(re, im), &x) in inputs.iter().zip(&exact) {
            let code = convert(re, im).code;
            let rounded = crate::PhaseCode::wrap(x.round() as i32);
            let d = code.circular_distance(rounded);
            max_err = max_err.max(d);
            hits += (d == 0) as usize;
            sum_abs += circular_code_error(code.code(), x).abs();
        }
        let start = Instant::now();
        let mut sink = 0i32;
        for _ in 0..timing_passes.max(1) {
            for &(re, im) in &inputs {
                sink = sink.wrapping_add(convert(black_box(re), black_box(im)).code.code());
            }
        }
        black_box(sink);
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        KernelBench {
            kernel: kind,
            max_error_codes: max_err,
            mean_abs_error_codes: sum_abs / inputs.len() as f64,
            exact_fraction: hits as f64 / inputs.len() as f64,
            ops: op_count_model(kind),
            conversions_per_s: (inputs.len() as f64 * timing_passes.max(1) as f64) / secs,
        }
    };
    BenchReport { inputs: inputs.len() as u64, kernels: vec![run(PhaseKernel::Lpe), run(PhaseKernel::Cordic)] }
}

/// Delay of a tone through the fixed-point banks, in decimated samples.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasuredDelay {
    pub tone_hz: f64,
    /// Bandpass bank alone, driven at the decimated rate.
    pub band_samples: f64,
    /// Lowpass, decimator and bandpass, driven at the input rate.
    pub chain_samples: f64,
}

/// Lag, in samples, of `y` behind the tone `sin(ω n)` over whole cycles.
fn tone_lag(y: &[(f64, f64)], omega: f64) -> f64 {
    // y[n] ≈ G sin(ω (n - D)) ⇒ phase of the projection is -ωD
    let (mut s, mut c) = (0.0, 0.0);
    for &(n, v) in y {
        s += v * (omega * n).sin();
        c += v * (omega * n).cos();
    }
    -c.atan2(s) / omega
}

pub fn measure_group_delay(set: &FilterSet, tone_hz: f64) -> MeasuredDelay {
    let dec_rate = set.decimated_rate_hz;
    let omega_dec = 2.0 * std::f64::consts::PI * tone_hz / dec_rate;
    let amp = 8000.0;
    // whole cycles after a generous warm-up
    let warm = 4 * set.bpf_taps.len();
    let cycles = ((4000.0 / (dec_rate / tone_hz)).floor() as usize).max(1);
    let span = (cycles as f64 * dec_rate / tone_hz).round() as usize;

    let mut band = FirStage::new(set.bpf_taps.clone());
    let mut y = Vec::with_capacity(span);
    for n in 0..warm + span {
        let x = (amp * (omega_dec * n as f64).sin()).round() as i16;
        let (v, _) = band.push(x);
        if n >= warm {
            y.push((n as f64, v as f64));
        }
    }
    let band_samples = tone_lag(&y, omega_dec);

    let mut chain = ChannelFilter::new(set, 16);
    let omega_in = omega_dec / DECIMATION as f64;
    let mut y = Vec::with_capacity(span);
    for n in 0..(warm + span) * DECIMATION {
        let x = (amp * (omega_in * n as f64).sin()).round() as i16;
        if let Some(a) = chain.process_sample(x) {
            if a.t_index as usize >= warm {
                y.push((a.t_index as f64, a.re.raw() as f64));
            }
        }
    }
    MeasuredDelay { tone_hz, band_samples, chain_samples: tone_lag(&y, omega_dec) }
}

/// Aggregate input samples per second of the full closed loop.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub input_frames: u64,
    pub samples_per_s: f64,
    pub real_time_factor: f64,
    pub summary: RunSummary,
}

pub fn measure_throughput(cfg: &RunConfig, rec: &Recording) -> Result<Throughput> {
    let start = Instant::now();
    let out = run_closed_loop(cfg, rec, |_, _| Ok(()))?;
    let secs = start.elapsed().as_secs_f64().max(1e-9);
    let frames = rec.len() as u64;
    let samples = frames as f64 * N_CHANNELS as f64;
    Ok(Throughput {
        input_frames: frames,
        samples_per_s: samples / secs,
        real_time_factor: frames as f64 / rec.rate_hz / secs,
        summary: out.summary,
    })
}

/// Sixteen active channels, eight pair features and four engines: the
/// heaviest configuration the processor supports.
pub fn full_load_config(duration_s: f64, seed: u64) -> RunConfig {
    let mut cfg = RunConfig { seed, ..RunConfig::default() };
    cfg.frontend.seed = seed;
    cfg.pairs = (0..8u8)
        .map(|i| PairSpec {
            id: i,
            ch_a: 2 * i,
            ch_b: 2 * i + 1,
            feature: if i % 2 == 0 { PairFeature::Plv } else { PairFeature::Pac },
        })
        .collect();
    cfg.stim = vec![
        StimConfig { mode: StimMode::SamplePhase, stim_channel: 0, source_channel: 0, ..StimConfig::default() },
        StimConfig {
            mode: StimMode::Combined,
            stim_channel: 1,
            source_channel: 2,
            window_kind: FeatureKind::Plv,
            window_source: 2,
            ..StimConfig::default()
        },
        StimConfig { mode: StimMode::RandomPhase, stim_channel: 2, source_channel: 4, ..StimConfig::default() },
        StimConfig {
            mode: StimMode::WindowFeature,
            stim_channel: 3,
            window_kind: FeatureKind::Se,
            window_source: 6,
            th_win_l: 0.0,
            ..StimConfig::default()
        },
    ];
    cfg.simulation = Some(SimulationSpec {
        duration_s,
        sources: (0..8u8)
            .map(|i| SourceSpec::Coupled {
                channels: [2 * i, 2 * i + 1],
                kind: if i % 2 == 0 { CoupledKind::PlvLocked } else { CoupledKind::PacCoupled },
                params: CoupledParams { m: 0.5, noise_rms_v: 5e-5, jitter_rad: 0.5, ..CoupledParams::default() },
            })
            .collect(),
    });
    cfg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn code_error_wraps() {
        assert_eq!(circular_code_error(-512, 511.75), 0.25);
        assert_eq!(circular_code_error(511, -511.5), -1.5);
        assert_eq!(circular_code_error(3, 2.5), 0.5);
    }

    #[test]
    fn protocol_rejects_feature_modes() {
        let mut cfg = PhaseProtocol { duration_s: 2.0, ..PhaseProtocol::default() }.to_config();
        let rec = synthesize(&cfg).unwrap();
        cfg.stim[0].mode = StimMode::SampleEnv;
        assert!(matches!(phase_error_experiment(&cfg, &rec), Err(Error::Config(_))));
    }

    #[test]
    fn silent_input_is_an_explicit_empty_result() {
        let p = PhaseProtocol { amp_pp_v: 0.0, duration_s: 3.0, ..PhaseProtocol::default() };
        let mut cfg = p.to_config();
        cfg.frontend = crate::signal::FrontendConfig::ideal();
        let r = phase_error_experiment(&cfg, &synthesize(&cfg).unwrap()).unwrap();
        assert_eq!(r.status, ResultStatus::NoTriggers);
        assert!(r.stats.is_none());
    }
}
