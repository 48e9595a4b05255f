//! Run configuration: a single JSON document, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::connectivity::{validate_pairs, FeatureKind, PairFeature, PairSpec, WindowConfig};
use crate::fir::{BandConfig, LpfSpec, DEFAULT_BAND_TAPS};
use crate::phase::PhaseKernel;
use crate::signal::{CoupledKind, CoupledParams, FrontendConfig};
use crate::stimulator::{ElectrodeState, StimPulseParams};
use crate::trigger::StimConfig;
use crate::{Error, Result, DECIMATION, N_CHANNELS, N_STIM_CHANNELS};

/// A synthetic source written onto one or two recording channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum SourceSpec {
    SinePink {
        channel: u8,
        amp_pp_v: f64,
        freq_hz: f64,
        #[serde(default)]
        pink_rms_v: f64,
    },
    Coupled {
        channels: [u8; 2],
        kind: CoupledKind,
        #[serde(default)]
        params: CoupledParams,
    },
}

/// Parse any configuration fragment, reporting failures as configuration
/// errors.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{e}")))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSpec {
    pub duration_s: f64,
    pub sources: Vec<SourceSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub frontend: FrontendConfig,
    /// One band for every channel, or one per channel.
    pub bands: Vec<BandConfig>,
    pub lpf: LpfSpec,
    pub band_taps: usize,
    pub phase_kernel: PhaseKernel,
    pub pairs: Vec<PairSpec>,
    pub window: WindowConfig,
    pub stim: Vec<StimConfig>,
    pub pulse: StimPulseParams,
    pub electrode: ElectrodeState,
    pub charge_balance: bool,
    /// Feed trigger blanking back to the front end.
    pub closed_loop_blanking: bool,
    /// Write every delivered pulse to `stim_trace.csv`.
    pub emit_stim_trace: bool,
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub simulation: Option<SimulationSpec>,
    /// Seeds the synthetic sources; the front end has its own seed.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            frontend: FrontendConfig::default(),
            bands: vec![BandConfig::theta()],
            lpf: LpfSpec::default(),
            band_taps: DEFAULT_BAND_TAPS,
            phase_kernel: PhaseKernel::Lpe,
            pairs: Vec::new(),
            window: WindowConfig::default(),
            stim: Vec::new(),
            pulse: StimPulseParams::default(),
            electrode: ElectrodeState::default(),
            charge_balance: true,
            closed_loop_blanking: true,
            emit_stim_trace: false,
            input: None,
            output_dir: None,
            simulation: None,
            seed: 0,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = parse_json(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_json(&text)?;
        // Relative paths inside the config resolve against its directory.
        if let Some(dir) = path.parent() {
            for p in [&mut cfg.input, &mut cfg.output_dir].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn input_rate_hz(&self) -> f64 {
        self.frontend.per_channel_rate_hz
    }

    pub fn decimated_rate_hz(&self) -> f64 {
        self.input_rate_hz() / DECIMATION as f64
    }

    /// Band of one recording channel.
    pub fn band(&self, ch: usize) -> BandConfig {
        if self.bands.len() == 1 {
            self.bands[0]
        } else {
            self.bands[ch]
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.frontend.validate()?;
        if self.bands.len() != 1 && self.bands.len() != N_CHANNELS {
            return Err(Error::config("bands must hold 1 or 16 entries"));
        }
        for b in &self.bands {
            b.validate(self.decimated_rate_hz())?;
        }
        self.window.validate()?;
        validate_pairs(&self.pairs)?;
        if self.stim.len() > N_STIM_CHANNELS {
            return Err(Error::config(format!("at most {N_STIM_CHANNELS} stimulation engines")));
        }
        for (i, s) in self.stim.iter().enumerate() {
            s.validate(self.decimated_rate_hz())?;
            if self.stim[..i].iter().any(|o| o.stim_channel == s.stim_channel) {
                return Err(Error::config(format!("stim_channel {} configured twice", s.stim_channel)));
            }
            let source_ok = match s.window_kind {
                FeatureKind::Se => (s.window_source as usize) < N_CHANNELS,
                k => self.pairs.iter().any(|p| p.id == s.window_source && FeatureKind::from(p.feature) == k),
            };
            let needs_window =
                matches!(s.mode, crate::trigger::StimMode::WindowFeature | crate::trigger::StimMode::Combined);
            if needs_window && !source_ok {
                return Err(Error::config(format!(
                    "stim engine {} gates on {} source {}, which is not configured",
                    s.stim_channel,
                    s.window_kind.as_str(),
                    s.window_source
                )));
            }
        }
        self.pulse.validate()?;
        self.electrode.validate()?;
        if let Some(sim) = &self.simulation {
            if !(sim.duration_s > 0.0) {
                return Err(Error::config("simulation duration must be positive"));
            }
            for s in &sim.sources {
                let chans: Vec<u8> = match s {
                    SourceSpec::SinePink { channel, .. } => vec![*channel],
                    SourceSpec::Coupled { channels, .. } => channels.to_vec(),
                };
                if chans.iter().any(|&c| c as usize >= N_CHANNELS) {
                    return Err(Error::config("simulation source references a channel outside 0..15"));
                }
            }
        }
        Ok(())
    }

    /// Pair kinds in configuration order, for reporting.
    pub fn pair_kinds(&self) -> Vec<(u8, PairFeature)> {
        self.pairs.iter().map(|p| (p.id, p.feature)).collect()
    }
}
