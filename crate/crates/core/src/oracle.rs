//! Double-precision reference path: radix-2 FFT, zero-phase Butterworth
//! bandpass and FFT-based analytic signal.
//!
//! Used offline as ground truth for phase-locking error and feature fidelity.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::fir::BandConfig;
use crate::{Error, Result};

/// In-place iterative radix-2 FFT. `inverse` applies the 1/N scale.
pub fn fft_in_place(buf: &mut [Complex64], inverse: bool) {
    let n = buf.len();
    assert!(n.is_power_of_two(), "FFT length must be a power of two");
    if n <= 1 {
        return;
    }
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if j > i {
            buf.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let step = sign * 2.0 * PI / len as f64;
        let half = len / 2;
        // Twiddles computed directly per index rather than by recurrence to
        // keep rounding error flat for long transforms.
        let twiddles: Vec<Complex64> = (0..half).map(|k| Complex64::from_polar(1.0, step * k as f64)).collect();
        for start in (0..n).step_by(len) {
            for k in 0..half {
                let a = buf[start + k];
                let b = buf[start + k + half] * twiddles[k];
                buf[start + k] = a + b;
                buf[start + k + half] = a - b;
            }
        }
        len <<= 1;
    }
    if inverse {
        let scale = 1.0 / n as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }
}

/// Direct-form-II-transposed second-order section, `a0` normalized to 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (self.a[0] + self.a[1] * z1 + self.a[2] * z2)
    }

    fn filter(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let y = self.b[0] * input + s1;
            s1 = self.b[1] * input - self.a[1] * y + s2;
            s2 = self.b[2] * input - self.a[2] * y;
            *v = y;
        }
    }
}

/// Butterworth bandpass built from a second-order lowpass prototype
/// (two sections, fourth order overall), band edges pre-warped so the
/// -3 dB points land on `f_lo` and `f_hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct ButterworthBandpass {
    pub sections: Vec<Biquad>,
    pub rate_hz: f64,
}

impl ButterworthBandpass {
    pub fn design(f_lo: f64, f_hi: f64, rate_hz: f64) -> Result<Self> {
        if !(0.0 < f_lo && f_lo < f_hi && f_hi < rate_hz / 2.0) {
            return Err(Error::config(format!("bandpass edges {f_lo}..{f_hi} Hz invalid at {rate_hz} Hz")));
        }
        let warp = |f: f64| 2.0 * rate_hz * (PI * f / rate_hz).tan();
        let (w1, w2) = (warp(f_lo), warp(f_hi));
        let bw = w2 - w1;
        let w0_sq = w1 * w2;

        // Second-order prototype poles; each maps to a pair of bandpass poles
        // from s^2 - p*bw*s + w0^2 = 0.
        let proto = [Complex64::from_polar(1.0, 3.0 * PI / 4.0), Complex64::from_polar(1.0, 5.0 * PI / 4.0)];
        let mut poles = Vec::with_capacity(4);
        for p in proto {
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            poles.push((pb + disc) / 2.0);
            poles.push((pb - disc) / 2.0);
        }
        let fs2 = 2.0 * rate_hz;
        let zpoles: Vec<Complex64> = poles.iter().map(|&s| (fs2 + s) / (fs2 - s)).collect();

        // Pair conjugates: the upper-half-plane poles, each with its conjugate.
        let mut upper: Vec<Complex64> = zpoles.into_iter().filter(|p| p.im > 0.0).collect();
        upper.sort_by(|a, b| a.arg().partial_cmp(&b.arg()).unwrap());
        if upper.len() != 2 {
            return Err(Error::config("bandpass design produced real poles"));
        }
        // Each section carries one zero at z = 1 and one at z = -1.
        let mut sections: Vec<Biquad> =
            upper.iter().map(|p| Biquad { b: [1.0, 0.0, -1.0], a: [1.0, -2.0 * p.re, p.norm_sqr()] }).collect();

        let center = 2.0 * (w0_sq.sqrt() / fs2).atan();
        let g: f64 = sections.iter().map(|s| s.response(center).norm()).product();
        let per_section = g.powf(-1.0 / sections.len() as f64);
        for s in &mut sections {
            for b in &mut s.b {
                *b *= per_section;
            }
        }
        Ok(ButterworthBandpass { sections, rate_hz })
    }

    /// Single-pass magnitude-squared response at `f_hz`.
    pub fn power_response(&self, f_hz: f64) -> f64 {
        let w = 2.0 * PI * f_hz / self.rate_hz;
        self.sections.iter().map(|s| s.response(w)).product::<Complex64>().norm_sqr()
    }

    pub fn filter(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.filter(x);
        }
    }

    /// Zero-phase filtering with odd-symmetric edge extension.
    ///
    /// The forward-backward and backward-forward passes differ only in their
    /// edge transients; averaging them makes the result exactly symmetric
    /// under time reversal.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let a = self.forward_backward(x);
        let mut rev: Vec<f64> = x.iter().rev().copied().collect();
        rev = self.forward_backward(&rev);
        rev.reverse();
        a.iter().zip(&rev).map(|(p, q)| 0.5 * (p + q)).collect()
    }

    fn forward_backward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n == 0 {
            return Vec::new();
        }
        let pad = (self.rate_hz as usize).min(n - 1);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        for i in (1..=pad).rev() {
            ext.push(2.0 * x[0] - x[i]);
        }
        ext.extend_from_slice(x);
        for i in 1..=pad {
            ext.push(2.0 * x[n - 1] - x[n - 1 - i]);
        }
        self.filter(&mut ext);
        ext.reverse();
        self.filter(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Analytic signal by FFT: zero-pad to a power of two, zero the negative
/// frequencies, double the positive ones.
pub fn analytic_signal(x: &[f64]) -> Vec<Complex64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let m = n.next_power_of_two();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    buf.resize(m, Complex64::new(0.0, 0.0));
    fft_in_place(&mut buf, false);
    if m > 1 {
        for v in &mut buf[1..m / 2] {
            *v *= 2.0;
        }
        for v in &mut buf[m / 2 + 1..] {
            *v = Complex64::new(0.0, 0.0);
        }
    }
    fft_in_place(&mut buf, true);
    buf.truncate(n);
    buf
}

/// Ground-truth analytic signal of a band: zero-phase Butterworth bandpass
/// followed by an ideal Hilbert transform.
pub fn band_analytic(trace: &[f64], band: &BandConfig, rate_hz: f64) -> Result<Vec<Complex64>> {
    let min_len = (8.0 * rate_hz / band.f_lo_hz).ceil() as usize;
    if trace.len() < min_len {
        return Err(Error::InsufficientData(format!(
            "{} samples is shorter than 8 cycles of {} Hz ({min_len} samples)",
            trace.len(),
            band.f_lo_hz
        )));
    }
    let bp = ButterworthBandpass::design(band.f_lo_hz, band.f_hi_hz, rate_hz)?;
    Ok(analytic_signal(&bp.filtfilt(trace)))
}

/// Per-sample ground-truth phase in radians, [-π, π).
pub fn oracle_ground_truth(trace: &[f64], band: &BandConfig, rate_hz: f64) -> Result<Vec<f64>> {
    Ok(band_analytic(trace, band, rate_hz)?.into_iter().map(|z| crate::phase::oracle_phase(z.re, z.im)).collect())
}

/// Unwrap a phase sequence in radians.
pub fn unwrap(phase: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(phase.len());
    let mut offset = 0.0;
    let mut prev = None;
    for &p in phase {
        if let Some(q) = prev {
            let d: f64 = p - q;
            if d > PI {
                offset -= 2.0 * PI;
            } else if d < -PI {
                offset += 2.0 * PI;
            }
        }
        out.push(p + offset);
        prev = Some(p);
    }
    out
}
