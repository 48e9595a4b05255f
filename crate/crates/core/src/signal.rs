//! Synthetic LFP sources, the 16-channel front-end/ADC model and stimulation
//! blanking.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, N_CHANNELS};

/// Pole and zero corner frequencies (Hz) of the pinking cascade. Poles and
/// zeros alternate a quarter decade apart from 0.3 Hz to 300 Hz, which holds
/// the magnitude response within a fraction of a dB of a -10 dB/decade line
/// across the LFP band. Each biquad takes two poles and two zeros; the
/// discrete coefficients are the matched-z images `exp(-2πf/fs)`.
pub const PINK_POLES_HZ: [f64; 6] = [0.3, 0.9487, 3.0, 9.487, 30.0, 94.87];
pub const PINK_ZEROS_HZ: [f64; 6] = [0.5335, 1.687, 5.335, 16.87, 53.35, 168.7];
/// Samples discarded so the slowest pole settles before output starts.
const PINK_WARMUP_S: f64 = 5.0;

const JITTER_COMPONENTS: usize = 8;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Real-pole section `(1 - z·q⁻¹)(1 - z'·q⁻¹) / (1 - p·q⁻¹)(1 - p'·q⁻¹)`.
#[derive(Clone, Copy, Debug)]
struct PinkSection {
    b: [f64; 3],
    a: [f64; 2],
    s: [f64; 2],
}

impl PinkSection {
    fn new(p: [f64; 2], z: [f64; 2], rate_hz: f64) -> Self {
        let m = |f: f64| (-2.0 * PI * f / rate_hz).exp();
        let (p0, p1, z0, z1) = (m(p[0]), m(p[1]), m(z[0]), m(z[1]));
        PinkSection { b: [1.0, -(z0 + z1), z0 * z1], a: [-(p0 + p1), p0 * p1], s: [0.0; 2] }
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        // transposed direct form II
        let y = self.b[0] * x + self.s[0];
        self.s[0] = self.b[1] * x - self.a[0] * y + self.s[1];
        self.s[1] = self.b[2] * x - self.a[1] * y;
        y
    }
}

/// White Gaussian noise shaped by the pinking cascade, scaled so the rms of
/// the returned block equals `rms_v`.
pub fn pink_noise(n: usize, rms_v: f64, rate_hz: f64, seed: u64) -> Vec<f64> {
    if n == 0 || rms_v == 0.0 {
        return vec![0.0; n];
    }
    let mut sections: Vec<PinkSection> = (0..3)
        .map(|k| {
            PinkSection::new(
                [PINK_POLES_HZ[2 * k], PINK_POLES_HZ[2 * k + 1]],
                [PINK_ZEROS_HZ[2 * k], PINK_ZEROS_HZ[2 * k + 1]],
                rate_hz,
            )
        })
        .collect();
    let mut rng = rng_for(seed, 1);
    let warmup = (PINK_WARMUP_S * rate_hz) as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..warmup + n {
        let mut x: f64 = rng.sample(StandardNormal);
        for s in &mut sections {
            x = s.step(x);
        }
        if i >= warmup {
            out.push(x);
        }
    }
    let mean = out.iter().sum::<f64>() / n as f64;
    let rms = (out.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let k = rms_v / rms;
    out.iter_mut().for_each(|x| *x = (*x - mean) * k);
    out
}

fn sample_count(duration_s: f64, rate_hz: f64) -> Result<usize> {
    if !(rate_hz > 0.0 && rate_hz.is_finite()) {
        return Err(Error::config(format!("sample rate {rate_hz} Hz must be positive")));
    }
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::config(format!("duration {duration_s} s must be positive")));
    }
    Ok((duration_s * rate_hz).round() as usize)
}

/// `amp_pp_v/2 · sin(2πft)` plus pink noise of the given rms.
pub fn gen_sine_pink(
    amp_pp_v: f64,
    freq_hz: f64,
    pink_rms_v: f64,
    duration_s: f64,
    rate_hz: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = sample_count(duration_s, rate_hz)?;
    if freq_hz < 0.0 || rate_hz < 4.0 * freq_hz {
        return Err(Error::config(format!("rate {rate_hz} Hz must be at least 4x the tone frequency {freq_hz} Hz")));
    }
    if pink_rms_v < 0.0 {
        return Err(Error::config("pink noise rms must be non-negative"));
    }
    let noise = pink_noise(n, pink_rms_v, rate_hz, seed);
    let a = amp_pp_v / 2.0;
    Ok(noise.into_iter().enumerate().map(|(i, w)| a * (2.0 * PI * freq_hz * i as f64 / rate_hz).sin() + w).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CoupledKind {
    PlvLocked,
    PacCoupled,
    Independent,
}

impl FromStr for CoupledKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plv-locked" => Ok(CoupledKind::PlvLocked),
            "pac-coupled" => Ok(CoupledKind::PacCoupled),
            "independent" => Ok(CoupledKind::Independent),
            other => Err(Error::config(format!("unknown coupled-signal kind '{other}'"))),
        }
    }
}

/// Parameters for [`gen_coupled_pair`].
///
/// `plv-locked`: both channels carry `amp_a_v·sin(φ)` at `f_low_hz`, the
/// second lagging by `lag_rad` plus a smooth random lag jitter with standard
/// deviation `jitter_rad`, band-limited to `jitter_bw_hz` so the jittered
/// channel stays inside the analysis band.
///
/// `pac-coupled`: channel a is the low-band carrier, channel b is
/// `amp_b_v·(1 + m·cos φ_low)·sin(2πf_high·t)`.
///
/// `independent`: two unrelated white Gaussian sequences of rms `noise_rms_v`.
///
/// `noise_rms_v` adds independent white noise to each channel for the two
/// coupled kinds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoupledParams {
    pub rate_hz: f64,
    pub duration_s: f64,
    pub f_low_hz: f64,
    pub f_high_hz: f64,
    pub amp_a_v: f64,
    pub amp_b_v: f64,
    pub lag_rad: f64,
    pub jitter_rad: f64,
    pub jitter_bw_hz: f64,
    pub m: f64,
    pub noise_rms_v: f64,
}

impl Default for CoupledParams {
    fn default() -> Self {
        CoupledParams {
            rate_hz: 4000.0,
            duration_s: 10.0,
            f_low_hz: 6.0,
            f_high_hz: 80.0,
            amp_a_v: 1e-3,
            amp_b_v: 2e-4,
            lag_rad: 0.0,
            jitter_rad: 0.0,
            jitter_bw_hz: 0.5,
            m: 0.0,
            noise_rms_v: 0.0,
        }
    }
}

pub fn gen_coupled_pair(kind: CoupledKind, p: &CoupledParams, seed: u64) -> Result<[Vec<f64>; 2]> {
    let n = sample_count(p.duration_s, p.rate_hz)?;
    let nyq = p.rate_hz / 2.0;
    if p.f_low_hz <= 0.0 || p.f_low_hz >= nyq || (kind == CoupledKind::PacCoupled && p.f_high_hz >= nyq) {
        return Err(Error::config("coupled-pair frequencies must lie below Nyquist"));
    }
    if !(p.jitter_rad >= 0.0 && p.jitter_bw_hz > 0.0) {
        return Err(Error::config("jitter must be non-negative with a positive bandwidth"));
    }
    if !(0.0..=1.0).contains(&p.m) {
        return Err(Error::config(format!("modulation depth {} outside [0, 1]", p.m)));
    }
    let dt = 1.0 / p.rate_hz;
    let mut rng = rng_for(seed, 2);
    let noise = |rng: &mut ChaCha8Rng, rms: f64| -> f64 {
        if rms == 0.0 {
            0.0
        } else {
            rms * rng.sample::<f64, _>(StandardNormal)
        }
    };
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    match kind {
        CoupledKind::PlvLocked => {
            // Random-phase sum of slow sinusoids: smooth, roughly Gaussian.
            let amp = p.jitter_rad * (2.0 / JITTER_COMPONENTS as f64).sqrt();
            let comps: Vec<(f64, f64)> = if p.jitter_rad > 0.0 {
                (0..JITTER_COMPONENTS)
                    .map(|_| (rng.random::<f64>() * p.jitter_bw_hz, rng.random::<f64>() * 2.0 * PI))
                    .collect()
            } else {
                Vec::new()
            };
            for i in 0..n {
                let t = i as f64 * dt;
                let phi = 2.0 * PI * p.f_low_hz * t;
                let drift: f64 = comps.iter().map(|&(f, ph)| amp * (2.0 * PI * f * t + ph).cos()).sum();
                a.push(p.amp_a_v * phi.sin() + noise(&mut rng, p.noise_rms_v));
                b.push(p.amp_a_v * (phi - p.lag_rad + drift).sin() + noise(&mut rng, p.noise_rms_v));
            }
        }
        CoupledKind::PacCoupled => {
            for i in 0..n {
                let t = i as f64 * dt;
                let phi = 2.0 * PI * p.f_low_hz * t;
                a.push(p.amp_a_v * phi.sin() + noise(&mut rng, p.noise_rms_v));
                // analytic phase of sin(φ) is φ - π/2
                let env = 1.0 + p.m * (phi - PI / 2.0).cos();
                b.push(p.amp_b_v * env * (2.0 * PI * p.f_high_hz * t).sin() + noise(&mut rng, p.noise_rms_v));
            }
        }
        CoupledKind::Independent => {
            for _ in 0..n {
                a.push(noise(&mut rng, p.noise_rms_v));
                b.push(noise(&mut rng, p.noise_rms_v));
            }
        }
    }
    Ok([a, b])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrontendConfig {
    pub gain_db: f64,
    pub mismatch_sigma_rel: f64,
    pub irn_uvrms: f64,
    pub adc_bits: u32,
    pub adc_fullscale_vpp: f64,
    pub per_channel_rate_hz: f64,
    pub scan_order: Vec<u8>,
    pub seed: u64,
}

impl Default for FrontendConfig {
    fn default() -> Self {
        FrontendConfig {
            gain_db: 53.0,
            mismatch_sigma_rel: 0.0,
            irn_uvrms: 0.88,
            adc_bits: 10,
            adc_fullscale_vpp: 1.2,
            per_channel_rate_hz: 4000.0,
            scan_order: (0..N_CHANNELS as u8).collect(),
            seed: 0,
        }
    }
}

impl FrontendConfig {
    /// A noiseless, mismatch-free front end.
    pub fn ideal() -> Self {
        FrontendConfig { irn_uvrms: 0.0, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.adc_bits) {
            return Err(Error::config(format!("adc_bits {} outside 2..=16", self.adc_bits)));
        }
        if !(self.per_channel_rate_hz > 0.0) {
            return Err(Error::config("per_channel_rate_hz must be positive"));
        }
        if !(self.adc_fullscale_vpp > 0.0) {
            return Err(Error::config("adc_fullscale_vpp must be positive"));
        }
        if self.mismatch_sigma_rel < 0.0 || self.irn_uvrms < 0.0 {
            return Err(Error::config("mismatch and noise levels must be non-negative"));
        }
        let mut seen = [false; N_CHANNELS];
        if self.scan_order.len() != N_CHANNELS {
            return Err(Error::config("scan_order must list all 16 channels"));
        }
        for &c in &self.scan_order {
            let c = c as usize;
            if c >= N_CHANNELS || seen[c] {
                return Err(Error::config("scan_order is not a permutation of 0..15"));
            }
            seen[c] = true;
        }
        Ok(())
    }

    pub fn gain_linear(&self) -> f64 {
        10f64.powf(self.gain_db / 20.0)
    }

    pub fn lsb_v(&self) -> f64 {
        self.adc_fullscale_vpp / (1u64 << self.adc_bits) as f64
    }

    pub fn code_range(&self) -> (i16, i16) {
        let half = 1i32 << (self.adc_bits - 1);
        (-half as i16, (half - 1) as i16)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSampleFrame {
    pub t_index: u64,
    pub codes: [i16; N_CHANNELS],
}

/// Sorted, non-overlapping `(start, duration)` intervals in per-channel
/// sample indices.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlankingSchedule {
    intervals: Vec<(u64, u32)>,
}

impl BlankingSchedule {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_intervals(intervals: Vec<(u64, u32)>) -> Result<Self> {
        for w in intervals.windows(2) {
            if w[0].0 + w[0].1 as u64 > w[1].0 {
                return Err(Error::config("blanking intervals must be sorted and non-overlapping"));
            }
        }
        Ok(BlankingSchedule { intervals })
    }

    /// Add an interval, merging it with any it overlaps or touches.
    pub fn add(&mut self, start: u64, duration: u32) {
        if duration == 0 {
            return;
        }
        let mut lo = start;
        let mut hi = start + duration as u64;
        let first = self.intervals.partition_point(|&(s, d)| s + (d as u64) < lo);
        let mut last = first;
        while last < self.intervals.len() && self.intervals[last].0 <= hi {
            let (s, d) = self.intervals[last];
            lo = lo.min(s);
            hi = hi.max(s + d as u64);
            last += 1;
        }
        let len = u32::try_from(hi - lo).unwrap_or(u32::MAX);
        self.intervals.splice(first..last, [(lo, len)]);
    }

    pub fn intervals(&self) -> &[(u64, u32)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn contains(&self, t: u64) -> bool {
        let i = self.intervals.partition_point(|&(s, _)| s <= t);
        i > 0 && {
            let (s, d) = self.intervals[i - 1];
            t < s + d as u64
        }
    }

    pub fn blanked_samples(&self) -> u64 {
        self.intervals.iter().map(|&(_, d)| d as u64).sum()
    }
}

/// Streaming front end. Channel gains are drawn once at construction.
#[derive(Clone, Debug)]
pub struct Afe {
    cfg: FrontendConfig,
    gains: [f64; N_CHANNELS],
    inv_lsb: f64,
    noise_v: f64,
    rng: ChaCha8Rng,
    t_index: u64,
    clipped: u64,
}

impl Afe {
    pub fn new(cfg: &FrontendConfig) -> Result<Self> {
        cfg.validate()?;
        let mut grng = rng_for(cfg.seed, 3);
        let g = cfg.gain_linear();
        let mut gains = [g; N_CHANNELS];
        if cfg.mismatch_sigma_rel > 0.0 {
            for x in &mut gains {
                *x = g * (1.0 + cfg.mismatch_sigma_rel * grng.sample::<f64, _>(StandardNormal));
            }
        }
        Ok(Afe {
            cfg: cfg.clone(),
            gains,
            inv_lsb: 1.0 / cfg.lsb_v(),
            noise_v: cfg.irn_uvrms * 1e-6,
            rng: rng_for(cfg.seed, 4),
            t_index: 0,
            clipped: 0,
        })
    }

    pub fn gains(&self) -> &[f64; N_CHANNELS] {
        &self.gains
    }

    pub fn config(&self) -> &FrontendConfig {
        &self.cfg
    }

    pub fn t_index(&self) -> u64 {
        self.t_index
    }

    /// Samples that hit the ADC rails so far.
    pub fn clipped(&self) -> u64 {
        self.clipped
    }

    /// Digitize one time step. Noise is drawn for every channel even when
    /// blanked so the noise sequence does not depend on the schedule.
    pub fn digitize(&mut self, volts: &[f64; N_CHANNELS], blanked: bool) -> RawSampleFrame {
        let (lo, hi) = self.cfg.code_range();
        let mut codes = [0i16; N_CHANNELS];
        for ch in 0..N_CHANNELS {
            let n = if self.noise_v > 0.0 { self.noise_v * self.rng.sample::<f64, _>(StandardNormal) } else { 0.0 };
            if blanked {
                continue;
            }
            let c = (self.gains[ch] * (volts[ch] + n) * self.inv_lsb).round();
            if c < lo as f64 || c > hi as f64 {
                self.clipped += 1;
            }
            codes[ch] = c.clamp(lo as f64, hi as f64) as i16;
        }
        let frame = RawSampleFrame { t_index: self.t_index, codes };
        self.t_index += 1;
        frame
    }

    /// Channel codes of a frame in multiplexer scan order.
    pub fn scan_sequence<'a>(&'a self, frame: &'a RawSampleFrame) -> impl Iterator<Item = (u8, i16)> + 'a {
        self.cfg.scan_order.iter().map(move |&c| (c, frame.codes[c as usize]))
    }
}

/// Digitize up to 16 equal-length traces; missing channels are grounded.
pub fn afe_digitize(
    traces: &[Vec<f64>],
    cfg: &FrontendConfig,
    blanking: &BlankingSchedule,
) -> Result<Vec<RawSampleFrame>> {
    if traces.len() > N_CHANNELS {
        return Err(Error::input(format!("{} traces supplied, at most {N_CHANNELS}", traces.len())));
    }
    let n = traces.first().map_or(0, Vec::len);
    if let Some((i, t)) = traces.iter().enumerate().find(|(_, t)| t.len() != n) {
        return Err(Error::input(format!(
            "trace length mismatch: channel {i} has {} samples, channel 0 has {n}",
            t.len()
        )));
    }
    let mut afe = Afe::new(cfg)?;
    let mut v = [0.0; N_CHANNELS];
    Ok((0..n)
        .map(|i| {
            for (ch, t) in traces.iter().enumerate() {
                v[ch] = t[i];
            }
            afe.digitize(&v, blanking.contains(i as u64))
        })
        .collect())
}

pub fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}
