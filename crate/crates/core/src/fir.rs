//! Threefold FIR: per-channel decimate-by-4 lowpass followed by a
//! bandpass / Hilbert analytic pair at the decimated rate.
//!
//! The lowpass delay line shifts at the input rate but is only evaluated on
//! every fourth sample; the two band banks shift at the decimated rate.
//! Arithmetic is Q1.15 x Q1.15 into a 40-bit accumulator, rounded half to
//! even and saturated back to Q1.15.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fixed::{round_shift_even, saturate_bits, saturate_i16, Q15};
use crate::{Error, Result, DECIMATION};

pub const ACC_BITS: u32 = 40;
pub const DEFAULT_LPF_TAPS: usize = 31;
pub const DEFAULT_BAND_TAPS: usize = 63;
/// Extra attenuation used when choosing the Kaiser β, so the Q1.15-rounded
/// taps still clear the target.
const KAISER_MARGIN_DB: f64 = 5.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandConfig {
    pub f_lo_hz: f64,
    pub f_hi_hz: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f_center_hz: Option<f64>,
}

impl BandConfig {
    pub fn new(f_lo_hz: f64, f_hi_hz: f64) -> Self {
        BandConfig { f_lo_hz, f_hi_hz, f_center_hz: None }
    }

    pub fn theta() -> Self {
        BandConfig::new(4.0, 8.0)
    }

    pub fn center(&self) -> f64 {
        self.f_center_hz.unwrap_or(0.5 * (self.f_lo_hz + self.f_hi_hz))
    }

    pub fn validate(&self, decimated_rate_hz: f64) -> Result<()> {
        let nyq = decimated_rate_hz / 2.0;
        if !(0.0 < self.f_lo_hz && self.f_lo_hz < self.f_hi_hz && self.f_hi_hz < nyq) {
            return Err(Error::config(format!(
                "band {}..{} Hz must satisfy 0 < f_lo < f_hi < {nyq} Hz",
                self.f_lo_hz, self.f_hi_hz
            )));
        }
        let c = self.center();
        if !(c > 0.0 && c < nyq) {
            return Err(Error::config(format!("band center {c} Hz out of range")));
        }
        Ok(())
    }
}

/// Anti-alias lowpass requirements for the decimate-by-4 stage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LpfSpec {
    pub taps: usize,
    pub passband_hz: f64,
    /// Attenuation must hold from here to the input Nyquist frequency.
    pub stopband_hz: f64,
    pub attenuation_db: f64,
}

impl Default for LpfSpec {
    fn default() -> Self {
        LpfSpec { taps: DEFAULT_LPF_TAPS, passband_hz: 60.0, stopband_hz: 500.0, attenuation_db: 50.0 }
    }
}

/// Quantized coefficients for one channel's three banks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterSet {
    pub input_rate_hz: f64,
    pub decimated_rate_hz: f64,
    pub band: BandConfig,
    pub lpf_taps: Vec<i16>,
    /// Re path, even-symmetric.
    pub bpf_taps: Vec<i16>,
    /// Im path, odd-symmetric.
    pub ht_taps: Vec<i16>,
    /// Samples at the input rate.
    pub group_delay_lpf: usize,
    /// Samples at the decimated rate.
    pub group_delay_band: usize,
    pub kaiser_beta: f64,
    pub lpf_attenuation_db: f64,
}

impl FilterSet {
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("filter set serializes");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("filter set serializes")
    }

    /// Total pipeline delay in seconds (lowpass plus band stage).
    pub fn total_delay_s(&self) -> f64 {
        self.group_delay_lpf as f64 / self.input_rate_hz + self.band_delay_s()
    }

    pub fn band_delay_s(&self) -> f64 {
        self.group_delay_band as f64 / self.decimated_rate_hz
    }

    pub fn lpf_delay_s(&self) -> f64 {
        self.group_delay_lpf as f64 / self.input_rate_hz
    }
}

pub fn kaiser_beta(attenuation_db: f64) -> f64 {
    let a = attenuation_db;
    if a > 50.0 {
        0.1102 * (a - 8.7)
    } else if a >= 21.0 {
        0.5842 * (a - 21.0).powf(0.4) + 0.07886 * (a - 21.0)
    } else {
        0.0
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

pub fn kaiser_window(len: usize, beta: f64) -> Vec<f64> {
    if len == 1 {
        return vec![1.0];
    }
    let m = (len - 1) as f64;
    let norm = bessel_i0(beta);
    (0..len)
        .map(|n| {
            let r = 2.0 * n as f64 / m - 1.0;
            bessel_i0(beta * (1.0 - r * r).max(0.0).sqrt()) / norm
        })
        .collect()
}

/// Frequency response of a tap vector (Q1.15 or float) at `f_hz`.
pub fn response_at(taps: &[f64], f_hz: f64, rate_hz: f64) -> num_complex::Complex64 {
    let w = 2.0 * PI * f_hz / rate_hz;
    taps.iter().enumerate().map(|(n, &h)| num_complex::Complex64::from_polar(h, -w * n as f64)).sum()
}

pub fn q15_to_f64(taps: &[i16]) -> Vec<f64> {
    taps.iter().map(|&t| t as f64 / 32768.0).collect()
}

fn quantize(x: f64) -> Result<i16> {
    let q = (x * 32768.0).round();
    if !(i16::MIN as f64..=i16::MAX as f64).contains(&q) {
        return Err(Error::config(format!("coefficient {x} exceeds Q1.15 range")));
    }
    Ok(q as i16)
}

fn design_lowpass(spec: &LpfSpec, rate_hz: f64, beta: f64) -> Result<Vec<i16>> {
    let len = spec.taps;
    let mid = (len / 2) as isize;
    let fc = 0.5 * (spec.passband_hz + spec.stopband_hz) / rate_hz;
    let w = kaiser_window(len, beta);
    let mut h: Vec<f64> = (0..len as isize)
        .map(|n| {
            let k = (n - mid) as f64;
            let sinc = if k == 0.0 { 2.0 * fc } else { (2.0 * PI * fc * k).sin() / (PI * k) };
            sinc * w[n as usize]
        })
        .collect();
    let sum: f64 = h.iter().sum();
    h.iter_mut().for_each(|v| *v /= sum);

    let half: Vec<i16> = h[..mid as usize].iter().map(|&v| quantize(v)).collect::<Result<_>>()?;
    let side: i32 = 2 * half.iter().map(|&v| v as i32).sum::<i32>();
    // Centre tap absorbs rounding so the DC gain is exactly 1.0.
    let centre = i16::try_from(32768 - side).map_err(|_| Error::config("lowpass centre tap exceeds Q1.15 range"))?;
    let mut taps = half.clone();
    taps.push(centre);
    taps.extend(half.iter().rev());
    Ok(taps)
}

fn design_band_pair(band: &BandConfig, rate_hz: f64, len: usize, beta: f64) -> Result<(Vec<i16>, Vec<i16>)> {
    let mid = len / 2;
    let wc = 2.0 * PI * band.center() / rate_hz;
    let half_bw = PI * (band.f_hi_hz - band.f_lo_hz) / rate_hz;
    let w = kaiser_window(len, beta);
    let proto = |k: f64| {
        if k == 0.0 {
            2.0 * half_bw / PI
        } else {
            2.0 * (half_bw * k).sin() / (PI * k)
        }
    };
    let mut re: Vec<f64> = (0..len)
        .map(|n| {
            let k = n as f64 - mid as f64;
            w[n] * proto(k) * (wc * k).cos()
        })
        .collect();
    let im: Vec<f64> = (0..len)
        .map(|n| {
            let k = n as f64 - mid as f64;
            w[n] * proto(k) * (wc * k).sin()
        })
        .collect();
    // Remove the DC leak of the truncated cosine, keeping the window shape.
    let leak = re.iter().sum::<f64>() / w.iter().sum::<f64>();
    re.iter_mut().zip(&w).for_each(|(v, wn)| *v -= leak * wn);

    // Equal gain on both paths at the band centre.
    let fc = band.center();
    let g_re = response_at(&re, fc, rate_hz).norm();
    let g_im = response_at(&im, fc, rate_hz).norm();
    if g_re < 1e-12 || g_im < 1e-12 {
        return Err(Error::config("band filter has no gain at its centre frequency"));
    }
    re.iter_mut().for_each(|v| *v /= g_re);
    let mut im = im;
    im.iter_mut().for_each(|v| *v /= g_im);
    let peak = re.iter().chain(&im).fold(0.0f64, |m, v| m.max(v.abs()));
    if peak >= 1.0 {
        let s = 0.999 / peak;
        re.iter_mut().chain(im.iter_mut()).for_each(|v| *v *= s);
    }

    let re_half: Vec<i16> = re[..mid].iter().map(|&v| quantize(v)).collect::<Result<_>>()?;
    let im_half: Vec<i16> = im[..mid].iter().map(|&v| quantize(v)).collect::<Result<_>>()?;
    let side: i32 = 2 * re_half.iter().map(|&v| v as i32).sum::<i32>();
    let centre = i16::try_from(-side).map_err(|_| Error::config("bandpass centre tap exceeds Q1.15 range"))?;

    let mut bpf = re_half.clone();
    bpf.push(centre);
    bpf.extend(re_half.iter().rev());
    let mut ht = im_half.clone();
    ht.push(0);
    ht.extend(im_half.iter().rev().map(|&v| -v));
    Ok((bpf, ht))
}

/// Worst-case gain from `from_hz` to the Nyquist frequency, in dB below DC.
pub fn stopband_attenuation_db(taps: &[i16], from_hz: f64, rate_hz: f64) -> f64 {
    let h = q15_to_f64(taps);
    let dc = h.iter().sum::<f64>().abs();
    let nyq = rate_hz / 2.0;
    let steps = 4096;
    let worst = (0..=steps)
        .map(|i| from_hz + (nyq - from_hz) * i as f64 / steps as f64)
        .map(|f| response_at(&h, f, rate_hz).norm())
        .fold(0.0f64, f64::max);
    20.0 * (dc / worst.max(1e-300)).log10()
}

/// Design the lowpass and analytic band pair for one channel.
pub fn design_filters(band: &BandConfig, input_rate_hz: f64, lpf: &LpfSpec, band_taps: usize) -> Result<FilterSet> {
    if input_rate_hz <= 0.0 {
        return Err(Error::config("input rate must be positive"));
    }
    let decimated = input_rate_hz / DECIMATION as f64;
    band.validate(decimated)?;
    if band_taps.is_multiple_of(2) || band_taps < 3 {
        return Err(Error::config(format!("band tap count {band_taps} must be odd and >= 3")));
    }
    if lpf.taps.is_multiple_of(2) || lpf.taps < 3 {
        return Err(Error::config(format!("lowpass tap count {} must be odd and >= 3", lpf.taps)));
    }
    if !(0.0 < lpf.passband_hz && lpf.passband_hz < lpf.stopband_hz && lpf.stopband_hz <= decimated / 2.0) {
        return Err(Error::config(format!(
            "lowpass edges {}..{} Hz inconsistent with decimate-by-{DECIMATION} to {decimated} Hz",
            lpf.passband_hz, lpf.stopband_hz
        )));
    }
    if band.f_hi_hz > lpf.passband_hz * 2.0 {
        // Upper band edge deep inside the anti-alias transition band.
        return Err(Error::config(format!(
            "band upper edge {} Hz too far beyond the lowpass passband {} Hz",
            band.f_hi_hz, lpf.passband_hz
        )));
    }

    let beta = kaiser_beta(lpf.attenuation_db + KAISER_MARGIN_DB);
    let lpf_taps = design_lowpass(lpf, input_rate_hz, beta)?;
    let achieved = stopband_attenuation_db(&lpf_taps, lpf.stopband_hz, input_rate_hz);
    if achieved < lpf.attenuation_db {
        return Err(Error::Design {
            msg: format!("{} lowpass taps cannot meet the stopband", lpf.taps),
            achieved_db: achieved,
            required_db: lpf.attenuation_db,
        });
    }
    let (bpf_taps, ht_taps) = design_band_pair(band, decimated, band_taps, beta)?;
    Ok(FilterSet {
        input_rate_hz,
        decimated_rate_hz: decimated,
        band: *band,
        group_delay_lpf: (lpf.taps - 1) / 2,
        group_delay_band: (band_taps - 1) / 2,
        lpf_taps,
        bpf_taps,
        ht_taps,
        kaiser_beta: beta,
        lpf_attenuation_db: achieved,
    })
}

/// Delay line with a fixed tap set. Storage is doubled so the most recent
/// `len` samples are always contiguous.
#[derive(Clone, Debug)]
pub struct DelayLine {
    buf: Vec<i16>,
    len: usize,
    pos: usize,
}

impl DelayLine {
    pub fn new(len: usize) -> Self {
        DelayLine { buf: vec![0; 2 * len], len, pos: 0 }
    }

    #[inline]
    pub fn push(&mut self, x: i16) {
        self.pos = if self.pos == 0 { self.len - 1 } else { self.pos - 1 };
        self.buf[self.pos] = x;
        self.buf[self.pos + self.len] = x;
    }

    /// Newest sample first.
    #[inline]
    pub fn window(&self) -> &[i16] {
        &self.buf[self.pos..self.pos + self.len]
    }

    /// Σ taps[k]·x[n-k] in Q2.30.
    #[inline]
    pub fn mac(&self, taps: &[i16]) -> i64 {
        debug_assert_eq!(taps.len(), self.len);
        self.window().iter().zip(taps).map(|(&x, &h)| x as i32 as i64 * h as i64).sum()
    }
}

/// Single FIR stage: push one Q1.15 sample, read one Q1.15 output.
#[derive(Clone, Debug)]
pub struct FirStage {
    taps: Vec<i16>,
    line: DelayLine,
}

impl FirStage {
    pub fn new(taps: Vec<i16>) -> Self {
        let line = DelayLine::new(taps.len());
        FirStage { taps, line }
    }

    /// Returns the output and whether the accumulator or output saturated.
    pub fn push(&mut self, x: i16) -> (i16, bool) {
        self.line.push(x);
        finish_mac(self.line.mac(&self.taps))
    }
}

#[inline]
fn finish_mac(acc: i64) -> (i16, bool) {
    let (acc, acc_sat) = saturate_bits(acc, ACC_BITS);
    let (y, out_sat) = saturate_i16(round_shift_even(acc, 15));
    (y, acc_sat || out_sat)
}

/// One analytic output of the band stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnalyticSample {
    /// Decimated sample counter; the input-clock time is `4 * t_index`.
    pub t_index: u64,
    /// Bandpass sample (the Re path).
    pub bp: Q15,
    pub re: Q15,
    pub im: Q15,
}

/// Per-channel filter state.
#[derive(Clone, Debug)]
pub struct ChannelFilter {
    lpf_taps: Vec<i16>,
    bpf_taps: Vec<i16>,
    ht_taps: Vec<i16>,
    lpf_line: DelayLine,
    band_line: DelayLine,
    adc_shift: u32,
    input_count: u64,
    saturations: u64,
}

impl ChannelFilter {
    /// `adc_bits` sets the left shift that maps ADC codes onto Q1.15.
    pub fn new(set: &FilterSet, adc_bits: u32) -> Self {
        ChannelFilter {
            lpf_line: DelayLine::new(set.lpf_taps.len()),
            band_line: DelayLine::new(set.bpf_taps.len()),
            lpf_taps: set.lpf_taps.clone(),
            bpf_taps: set.bpf_taps.clone(),
            ht_taps: set.ht_taps.clone(),
            adc_shift: 16u32.saturating_sub(adc_bits),
            input_count: 0,
            saturations: 0,
        }
    }

    /// Saturation events so far (accumulator or output clipping).
    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    pub fn input_count(&self) -> u64 {
        self.input_count
    }

    /// Feed one ADC code; every fourth call yields an analytic sample.
    #[inline]
    pub fn process_sample(&mut self, adc_code: i16) -> Option<AnalyticSample> {
        let (x, sat) = saturate_i16((adc_code as i64) << self.adc_shift);
        self.saturations += sat as u64;
        self.lpf_line.push(x);
        let n = self.input_count;
        self.input_count += 1;
        if !n.is_multiple_of(DECIMATION as u64) {
            return None;
        }
        let (lp, s0) = finish_mac(self.lpf_line.mac(&self.lpf_taps));
        self.band_line.push(lp);
        let (re, s1) = finish_mac(self.band_line.mac(&self.bpf_taps));
        let (im, s2) = finish_mac(self.band_line.mac(&self.ht_taps));
        self.saturations += s0 as u64 + s1 as u64 + s2 as u64;
        Some(AnalyticSample { t_index: n / DECIMATION as u64, bp: Q15(re), re: Q15(re), im: Q15(im) })
    }
}

/// Multiply-accumulate load of the shared chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacBudget {
    pub lpf_macs_per_s: f64,
    pub band_macs_per_s: f64,
    pub total_macs_per_s: f64,
    /// Register shift rate of the lowpass bank.
    pub lpf_shift_rate_hz: f64,
    /// Register shift rate of the bandpass and Hilbert banks.
    pub band_shift_rate_hz: f64,
}

pub fn mac_budget(set: &FilterSet, n_channels: usize) -> MacBudget {
    let ch = n_channels as f64;
    let out_rate = set.decimated_rate_hz;
    let lpf = ch * set.lpf_taps.len() as f64 * out_rate;
    let band = ch * (set.bpf_taps.len() + set.ht_taps.len()) as f64 * out_rate;
    MacBudget {
        lpf_macs_per_s: lpf,
        band_macs_per_s: band,
        total_macs_per_s: lpf + band,
        lpf_shift_rate_hz: set.input_rate_hz,
        band_shift_rate_hz: out_rate,
    }
}
