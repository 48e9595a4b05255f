//! Closed-loop orchestration: front end, filters, phase and feature
//! extraction, trigger engines, stimulators and blanking feedback.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{RunConfig, SourceSpec};
use crate::connectivity::{
    envelope, FeatureKind, FeatureWindowRecord, PacAccumulator, PairFeature, PairSpec, PlvAccumulator, SeAccumulator,
    TrigLut,
};
use crate::fir::{design_filters, ChannelFilter, FilterSet};
use crate::fixed::{Q15, UQ15};
use crate::io::{self, EventRecord, PhaseWriter, Recording};
use crate::phase::{cordic_phase, LpeLuts, PhaseCode, PhaseKernel};
use crate::signal::{gen_coupled_pair, gen_sine_pink, Afe, BlankingSchedule, CoupledParams};
use crate::stimulator::{StimTracePoint, Stimulator};
use crate::trigger::{emit_blanking, EngineCounters, TriggerEngine, TriggerEvent};
use crate::{Error, Result, N_CHANNELS};

#[derive(Clone, Debug)]
enum PairAcc {
    Plv(PlvAccumulator),
    Pac(PacAccumulator),
}

/// Per-stimulation-channel results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StimSummary {
    pub stim_channel: u8,
    pub mode: String,
    pub advance_codes: i32,
    pub refractory_samples: u64,
    pub counters: EngineCounters,
    pub pulses: u64,
    pub clamped_pulses: u64,
    pub max_abs_residual_mv: f64,
    pub final_i_anodic_ua: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub lpe_lut_sha256: String,
    pub trig_lut_sha256: String,
    /// Distinct filter sets in channel order of first use.
    pub filter_sha256: Vec<String>,
    pub phase_kernel: String,
    pub input_samples: u64,
    pub decimated_samples: u64,
    pub windows: u64,
    pub feature_records: u64,
    pub triggers: u64,
    pub blanked_input_samples: u64,
    /// Windows that contain at least one blanked sample.
    pub blanked_windows: Vec<u64>,
    pub afe_clipped_samples: u64,
    pub fir_saturations: u64,
    pub saturated: bool,
    pub degenerate_phases: u64,
    pub degenerate_pac_windows: u64,
    pub stim: Vec<StimSummary>,
    /// sha256 of each written artifact, keyed by file name.
    pub artifacts: Vec<(String, String)>,
}

/// Streaming pipeline over ADC frames.
pub struct Pipeline {
    filters: Vec<ChannelFilter>,
    filter_sets: Vec<FilterSet>,
    luts: LpeLuts,
    trig: TrigLut,
    kernel: PhaseKernel,
    pairs: Vec<PairSpec>,
    pair_accs: Vec<PairAcc>,
    se_accs: Vec<SeAccumulator>,
    log2_n: u32,
    window_len: usize,
    window_fill: usize,
    window_index: u64,
    window_blanked: bool,
    engines: Vec<TriggerEngine>,
    blank_durations: Vec<u32>,
    stimulators: Vec<Stimulator>,
    phases: [PhaseCode; N_CHANNELS],
    phase_void: [bool; N_CHANNELS],
    envs: [Q15; N_CHANNELS],
    features: Vec<FeatureWindowRecord>,
    events: Vec<TriggerEvent>,
    pending_blanking: Vec<(u64, u32)>,
    stim_trace: Option<Vec<StimTracePoint>>,
    decimated_rate_hz: f64,
    decimated: u64,
    blanked_windows: Vec<u64>,
    degenerate_phases: u64,
    degenerate_pac: u64,
}

impl Pipeline {
    pub fn new(cfg: &RunConfig) -> Result<Pipeline> {
        cfg.validate()?;
        let mut filter_sets: Vec<FilterSet> = Vec::with_capacity(N_CHANNELS);
        for ch in 0..N_CHANNELS {
            let band = cfg.band(ch);
            match filter_sets.iter().find(|s| s.band == band) {
                Some(s) => filter_sets.push(s.clone()),
                None => filter_sets.push(design_filters(&band, cfg.input_rate_hz(), &cfg.lpf, cfg.band_taps)?),
            }
        }
        let filters = filter_sets.iter().map(|s| ChannelFilter::new(s, cfg.frontend.adc_bits)).collect();
        let pair_accs = cfg
            .pairs
            .iter()
            .map(|p| match p.feature {
                PairFeature::Plv => PairAcc::Plv(PlvAccumulator::default()),
                PairFeature::Pac => PairAcc::Pac(PacAccumulator::default()),
            })
            .collect();
        let mut engines = Vec::new();
        let mut stimulators = Vec::new();
        let mut blank_durations = Vec::new();
        for s in &cfg.stim {
            engines.push(TriggerEngine::new(s, &filter_sets[s.source_channel as usize])?);
            blank_durations.push(s.blank_duration_samples);
            stimulators.push(Stimulator::new(cfg.pulse, cfg.electrode, cfg.charge_balance)?);
        }
        Ok(Pipeline {
            filters,
            filter_sets,
            luts: LpeLuts::build(),
            trig: TrigLut::build(),
            kernel: cfg.phase_kernel,
            pairs: cfg.pairs.clone(),
            pair_accs,
            se_accs: vec![SeAccumulator::default(); N_CHANNELS],
            log2_n: cfg.window.log2(),
            window_len: cfg.window.n_samples,
            window_fill: 0,
            window_index: 0,
            window_blanked: false,
            engines,
            blank_durations,
            stimulators,
            phases: [PhaseCode::ZERO; N_CHANNELS],
            phase_void: [true; N_CHANNELS],
            envs: [Q15::ZERO; N_CHANNELS],
            features: Vec::new(),
            events: Vec::new(),
            pending_blanking: Vec::new(),
            stim_trace: cfg.emit_stim_trace.then(Vec::new),
            decimated_rate_hz: cfg.decimated_rate_hz(),
            decimated: 0,
            blanked_windows: Vec::new(),
            degenerate_phases: 0,
            degenerate_pac: 0,
        })
    }

    pub fn filter_sets(&self) -> &[FilterSet] {
        &self.filter_sets
    }

    pub fn luts(&self) -> &LpeLuts {
        &self.luts
    }

    pub fn trig_lut(&self) -> &TrigLut {
        &self.trig
    }

    pub fn phases(&self) -> &[PhaseCode; N_CHANNELS] {
        &self.phases
    }

    pub fn envelopes(&self) -> &[Q15; N_CHANNELS] {
        &self.envs
    }

    pub fn engines(&self) -> &[TriggerEngine] {
        &self.engines
    }

    pub fn decimated_samples(&self) -> u64 {
        self.decimated
    }

    /// Feed one ADC frame. Returns the decimated index when this frame
    /// produced analytic outputs.
    pub fn step(&mut self, codes: &[i16; N_CHANNELS], blanked: bool) -> Result<Option<u64>> {
        let mut t_index = None;
        let mut bps = [Q15::ZERO; N_CHANNELS];
        for ch in 0..N_CHANNELS {
            if let Some(a) = self.filters[ch].process_sample(codes[ch]) {
                let est = match self.kernel {
                    PhaseKernel::Lpe => self.luts.phase(a.re.raw(), a.im.raw()),
                    PhaseKernel::Cordic => cordic_phase(a.re.raw(), a.im.raw()),
                };
                self.degenerate_phases += est.degenerate as u64;
                self.phases[ch] = est.code;
                self.phase_void[ch] = est.degenerate;
                self.envs[ch] = envelope(a.re, a.im);
                bps[ch] = a.bp;
                t_index = Some(a.t_index);
            }
        }
        let Some(t) = t_index else {
            return Ok(None);
        };
        self.decimated += 1;

        for (p, acc) in self.pairs.iter().zip(&mut self.pair_accs) {
            let (a, b) = (p.ch_a as usize, p.ch_b as usize);
            match acc {
                PairAcc::Plv(acc) if self.phase_void[a] || self.phase_void[b] => acc.push_void(),
                PairAcc::Plv(acc) => acc.push(self.phases[a], self.phases[b], &self.trig),
                PairAcc::Pac(acc) => acc.push(self.phases[a], self.envs[b], &self.trig),
            }
        }
        for (acc, &bp) in self.se_accs.iter_mut().zip(&bps) {
            acc.push(bp);
        }
        self.window_blanked |= blanked;
        self.window_fill += 1;
        if self.window_fill == self.window_len {
            self.close_window(t, blanked)?;
        }

        for i in 0..self.engines.len() {
            let src = self.engines[i].source_channel() as usize;
            if let Some(ev) = self.engines[i].on_sample(t, self.phases[src], self.envs[src], blanked) {
                self.deliver(i, ev)?;
            }
        }
        Ok(Some(t))
    }

    fn close_window(&mut self, t: u64, blanked: bool) -> Result<()> {
        let w = self.window_index;
        let first = self.features.len();
        for (p, acc) in self.pairs.iter().zip(&mut self.pair_accs) {
            match acc {
                PairAcc::Plv(acc) => {
                    let (v, _) = acc.finish(self.log2_n);
                    self.features.push(FeatureWindowRecord {
                        window_index: w,
                        source: p.id,
                        kind: FeatureKind::Plv,
                        value: v,
                    });
                }
                PairAcc::Pac(acc) => {
                    let (v, _) = acc.finish(self.log2_n);
                    self.degenerate_pac += v.degenerate as u64;
                    for (kind, value) in [(FeatureKind::Pac, v.normalized), (FeatureKind::PacRaw, v.raw)] {
                        self.features.push(FeatureWindowRecord { window_index: w, source: p.id, kind, value });
                    }
                }
            }
        }
        for (ch, acc) in self.se_accs.iter_mut().enumerate() {
            self.features.push(FeatureWindowRecord {
                window_index: w,
                source: ch as u8,
                kind: FeatureKind::Se,
                value: acc.finish(self.log2_n),
            });
        }
        if self.window_blanked {
            self.blanked_windows.push(w);
        }
        self.window_blanked = false;
        self.window_fill = 0;
        self.window_index += 1;

        for i in 0..self.engines.len() {
            let (kind, source) = self.engines[i].window_gate();
            let value = self.features[first..].iter().find(|r| r.kind == kind && r.source == source).map(|r| r.value);
            if let Some(v) = value {
                if let Some(ev) = self.engines[i].on_window(t, v, blanked) {
                    self.deliver(i, ev)?;
                }
            }
        }
        Ok(())
    }

    fn deliver(&mut self, i: usize, ev: TriggerEvent) -> Result<()> {
        let t_us = ev.t_index as f64 * 1e6 / self.decimated_rate_hz;
        let pulse = self.stimulators[i].fire(t_us)?;
        if let Some(trace) = &mut self.stim_trace {
            trace.extend_from_slice(&pulse.trace.points);
        }
        if let Some(b) = emit_blanking(&ev, self.blank_durations[i]) {
            self.pending_blanking.push(b);
        }
        self.events.push(ev);
        Ok(())
    }

    /// Blanking intervals requested since the last call, input-rate clock.
    pub fn drain_blanking(&mut self) -> std::vec::Drain<'_, (u64, u32)> {
        self.pending_blanking.drain(..)
    }

    pub fn drain_events(&mut self) -> std::vec::Drain<'_, TriggerEvent> {
        self.events.drain(..)
    }

    pub fn drain_features(&mut self) -> std::vec::Drain<'_, FeatureWindowRecord> {
        self.features.drain(..)
    }

    fn summary(&self) -> RunSummary {
        let mut filter_sha256 = Vec::new();
        for s in &self.filter_sets {
            let h = s.sha256();
            if !filter_sha256.contains(&h) {
                filter_sha256.push(h);
            }
        }
        let fir_saturations: u64 = self.filters.iter().map(ChannelFilter::saturations).sum();
        RunSummary {
            lpe_lut_sha256: self.luts.sha256(),
            trig_lut_sha256: self.trig.sha256(),
            filter_sha256,
            phase_kernel: format!("{:?}", self.kernel).to_lowercase(),
            decimated_samples: self.decimated,
            windows: self.window_index,
            fir_saturations,
            blanked_windows: self.blanked_windows.clone(),
            degenerate_phases: self.degenerate_phases,
            degenerate_pac_windows: self.degenerate_pac,
            stim: self
                .engines
                .iter()
                .zip(&self.stimulators)
                .map(|(e, s)| StimSummary {
                    stim_channel: e.stim_channel(),
                    mode: e.mode().as_str().to_string(),
                    advance_codes: e.advance_codes(),
                    refractory_samples: e.refractory(),
                    counters: e.counters(),
                    pulses: s.pulses(),
                    clamped_pulses: s.clamped_pulses(),
                    max_abs_residual_mv: s.max_abs_residual_v() * 1e3,
                    final_i_anodic_ua: s.params.i_anodic_ua,
                })
                .collect(),
            ..RunSummary::default()
        }
    }
}

/// Everything a closed-loop run produced, held in memory.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub events: Vec<TriggerEvent>,
    pub features: Vec<FeatureWindowRecord>,
    pub stim_trace: Vec<StimTracePoint>,
    pub blanking: BlankingSchedule,
}

/// Run a recording through the closed loop. `on_phases` sees every
/// decimated time step.
pub fn run_closed_loop(
    cfg: &RunConfig,
    rec: &Recording,
    mut on_phases: impl FnMut(u64, &[PhaseCode; N_CHANNELS]) -> Result<()>,
) -> Result<RunOutput> {
    if rec.channels.len() > N_CHANNELS {
        return Err(Error::Input(format!("recording has {} channels, at most 16", rec.channels.len())));
    }
    let rate = cfg.input_rate_hz();
    if (rec.rate_hz - rate).abs() > 1e-6 * rate {
        return Err(Error::Input(format!("recording rate {} Hz does not match the configured {rate} Hz", rec.rate_hz)));
    }
    let mut afe = Afe::new(&cfg.frontend)?;
    let mut pipe = Pipeline::new(cfg)?;
    let mut sched = BlankingSchedule::new();
    let mut out = RunOutput::default();
    let mut volts = [0.0; N_CHANNELS];
    for n in 0..rec.len() {
        for (ch, c) in rec.channels.iter().enumerate() {
            volts[ch] = c[n];
        }
        let blanked = sched.contains(n as u64);
        let frame = afe.digitize(&volts, blanked);
        if let Some(t) = pipe.step(&frame.codes, blanked)? {
            on_phases(t, pipe.phases())?;
        }
        for (s, d) in pipe.drain_blanking() {
            if cfg.closed_loop_blanking {
                sched.add(s, d);
            }
        }
        out.events.extend(pipe.drain_events());
        out.features.extend(pipe.drain_features());
    }
    let mut summary = pipe.summary();
    summary.input_samples = rec.len() as u64;
    summary.feature_records = out.features.len() as u64;
    summary.triggers = out.events.len() as u64;
    summary.blanked_input_samples = sched.blanked_samples();
    summary.afe_clipped_samples = afe.clipped();
    summary.saturated = summary.afe_clipped_samples > 0 || summary.fir_saturations > 0;
    out.summary = summary;
    out.stim_trace = pipe.stim_trace.take().unwrap_or_default();
    out.blanking = sched;
    Ok(out)
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

/// Run and write `features.csv`, `phases.csv`, `triggers.csv` (and
/// `stim_trace.csv` when enabled) plus `summary.json` into `out_dir`.
pub fn run_offline(cfg: &RunConfig, rec: &Recording, out_dir: &Path) -> Result<RunOutput> {
    std::fs::create_dir_all(out_dir)?;
    let phases_path = out_dir.join("phases.csv");
    let mut pw = PhaseWriter::new(BufWriter::new(File::create(&phases_path)?), N_CHANNELS)?;
    let mut out = run_closed_loop(cfg, rec, |t, p| pw.write(t, p))?;
    pw.finish()?;

    io::write_features_file(&out_dir.join("features.csv"), &out.features)?;
    let events: Vec<EventRecord> = out.events.iter().map(EventRecord::from).collect();
    io::write_events_file(&out_dir.join("triggers.csv"), &events)?;
    let mut names = vec!["features.csv", "phases.csv", "triggers.csv"];
    if cfg.emit_stim_trace {
        io::write_stim_trace_file(&out_dir.join("stim_trace.csv"), &out.stim_trace)?;
        names.push("stim_trace.csv");
    }
    for name in names {
        out.summary.artifacts.push((name.to_string(), sha256_file(&out_dir.join(name))?));
    }
    let json = serde_json::to_string_pretty(&out.summary)?;
    std::fs::write(out_dir.join("summary.json"), json + "\n")?;
    Ok(out)
}

/// Build the synthetic recording described by `cfg.simulation`.
pub fn synthesize(cfg: &RunConfig) -> Result<Recording> {
    let sim =
        cfg.simulation.as_ref().ok_or_else(|| Error::Config("no simulation section in the configuration".into()))?;
    let rate = cfg.input_rate_hz();
    let n = (sim.duration_s * rate).round() as usize;
    let mut channels = vec![vec![0.0; n]; N_CHANNELS];
    for (i, src) in sim.sources.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(i as u64);
        match src {
            SourceSpec::SinePink { channel, amp_pp_v, freq_hz, pink_rms_v } => {
                let x = gen_sine_pink(*amp_pp_v, *freq_hz, *pink_rms_v, sim.duration_s, rate, seed)?;
                for (d, s) in channels[*channel as usize].iter_mut().zip(x) {
                    *d += s;
                }
            }
            SourceSpec::Coupled { channels: ch, kind, params } => {
                let p = CoupledParams { rate_hz: rate, duration_s: sim.duration_s, ..*params };
                let [a, b] = gen_coupled_pair(*kind, &p, seed)?;
                for (&c, x) in ch.iter().zip([a, b]) {
                    for (d, s) in channels[c as usize].iter_mut().zip(x) {
                        *d += s;
                    }
                }
            }
        }
    }
    Ok(Recording { rate_hz: rate, channels })
}

/// Feature value in force for a record kind, as a float.
pub fn feature_value(records: &[FeatureWindowRecord], kind: FeatureKind, source: u8) -> Vec<f64> {
    records.iter().filter(|r| r.kind == kind && r.source == source).map(|r| r.value.to_f64()).collect()
}

/// Raw UQ15 words for a record kind.
pub fn feature_words(records: &[FeatureWindowRecord], kind: FeatureKind, source: u8) -> Vec<UQ15> {
    records.iter().filter(|r| r.kind == kind && r.source == source).map(|r| r.value).collect()
}
