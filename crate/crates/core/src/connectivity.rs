//! Connectivity feature extraction: l∞ envelope, windowed PLV, PAC and
//! spectral energy, with double-precision counterparts in [`ideal`].
//!
//! Phasor components come from a quarter-wave sine table with 9-bit
//! amplitude (256 = 1.0). Window sums are held in 48-bit accumulators,
//! which is exact for windows up to 2^16 samples. Magnitudes of the summed
//! phasor use the l∞ norm, `max(|S_cos|, |S_sin|)`.

use serde::{Deserialize, Serialize};

use crate::fixed::{div_round_even, round_shift_even, saturate_bits, Q15, UQ15};
use crate::phase::PhaseCode;
use crate::{Error, Result, MAX_PAIRS, N_CHANNELS};

pub const TRIG_ENTRIES: usize = 256;
/// Table value representing 1.0.
pub const TRIG_ONE: i32 = 256;
pub const FEATURE_ACC_BITS: u32 = 48;
pub const MAX_WINDOW: usize = 1 << 16;
/// Smallest ΣA accepted by the PAC normalizer, in Q1.15 lsb.
pub const PAC_MIN_DIVISOR: i64 = 16;

/// Quarter-wave sine table over 10-bit phase codes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrigLut {
    quarter: Vec<u16>,
}

impl Default for TrigLut {
    fn default() -> Self {
        Self::build()
    }
}

impl TrigLut {
    pub fn build() -> TrigLut {
        let quarter = (0..TRIG_ENTRIES)
            .map(|i| (TRIG_ONE as f64 * (2.0 * std::f64::consts::PI * i as f64 / 1024.0).sin()).round() as u16)
            .collect();
        TrigLut { quarter }
    }

    pub fn table(&self) -> &[u16] {
        &self.quarter
    }

    /// sin of a code in [0, 256] (first quadrant, both ends inclusive).
    #[inline]
    fn quadrant(&self, j: usize) -> i32 {
        if j == TRIG_ENTRIES {
            TRIG_ONE
        } else {
            self.quarter[j] as i32
        }
    }

    #[inline]
    pub fn sin(&self, c: PhaseCode) -> i32 {
        let u = c.code().rem_euclid(1024) as usize;
        let (q, j) = (u >> 8, u & 0xff);
        match q {
            0 => self.quadrant(j),
            1 => self.quadrant(TRIG_ENTRIES - j),
            2 => -self.quadrant(j),
            _ => -self.quadrant(TRIG_ENTRIES - j),
        }
    }

    #[inline]
    pub fn cos(&self, c: PhaseCode) -> i32 {
        self.sin(c.wrapping_add(256))
    }

    pub fn sha256(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for v in &self.quarter {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// l∞ approximation of the envelope: `max(|re|, |im|)`.
#[inline]
pub fn envelope(re: Q15, im: Q15) -> Q15 {
    let m = re.unsigned_abs().max(im.unsigned_abs());
    Q15(m.min(i16::MAX as u16) as i16)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureKind {
    Plv,
    /// Amplitude-normalized PAC, the value thresholds act on.
    Pac,
    /// Un-normalized PAC mean-vector length, in envelope units.
    PacRaw,
    Se,
}

impl FeatureKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureKind::Plv => "PLV",
            FeatureKind::Pac => "PAC",
            FeatureKind::PacRaw => "PAC_RAW",
            FeatureKind::Se => "SE",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureKind> {
        match s {
            "PLV" => Some(FeatureKind::Plv),
            "PAC" => Some(FeatureKind::Pac),
            "PAC_RAW" => Some(FeatureKind::PacRaw),
            "SE" => Some(FeatureKind::Se),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PairFeature {
    Plv,
    Pac,
}

impl From<PairFeature> for FeatureKind {
    fn from(f: PairFeature) -> Self {
        match f {
            PairFeature::Plv => FeatureKind::Plv,
            PairFeature::Pac => FeatureKind::Pac,
        }
    }
}

/// One monitored channel pair. For PAC, `ch_a` supplies the low-band phase
/// and `ch_b` the high-band envelope.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub id: u8,
    pub ch_a: u8,
    pub ch_b: u8,
    pub feature: PairFeature,
}

pub fn validate_pairs(pairs: &[PairSpec]) -> Result<()> {
    if pairs.len() > MAX_PAIRS {
        return Err(Error::config(format!("{} pairs configured, at most {MAX_PAIRS}", pairs.len())));
    }
    for (i, p) in pairs.iter().enumerate() {
        if p.ch_a as usize >= N_CHANNELS || p.ch_b as usize >= N_CHANNELS {
            return Err(Error::config(format!("pair {} references a channel outside 0..15", p.id)));
        }
        if pairs[..i].iter().any(|q| q.id == p.id) {
            return Err(Error::config(format!("duplicate pair id {}", p.id)));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub n_samples: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig { n_samples: 1024 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.n_samples.is_power_of_two() || self.n_samples > MAX_WINDOW {
            return Err(Error::config(format!(
                "window length {} must be a power of two <= {MAX_WINDOW}",
                self.n_samples
            )));
        }
        Ok(())
    }

    pub fn log2(&self) -> u32 {
        self.n_samples.trailing_zeros()
    }
}

/// Raw phasor sums of one window.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PhasorSums {
    pub s_cos: i64,
    pub s_sin: i64,
    /// Number of samples (PLV) or ΣA (PAC) the sums are normalized by.
    pub weight: i64,
    pub saturated: bool,
}

impl PhasorSums {
    pub fn linf(&self) -> i64 {
        self.s_cos.abs().max(self.s_sin.abs())
    }

    pub fn euclidean(&self) -> f64 {
        (self.s_cos as f64).hypot(self.s_sin as f64)
    }
}

/// Streaming phase-difference accumulator for one PLV pair.
#[derive(Clone, Debug, Default)]
pub struct PlvAccumulator {
    sums: PhasorSums,
    count: usize,
}

impl PlvAccumulator {
    #[inline]
    pub fn push(&mut self, a: PhaseCode, b: PhaseCode, lut: &TrigLut) {
        let d = a.wrapping_sub(b);
        self.sums.s_cos += lut.cos(d) as i64;
        self.sums.s_sin += lut.sin(d) as i64;
        self.count += 1;
    }

    /// A sample where either phase is undefined contributes a zero phasor.
    #[inline]
    pub fn push_void(&mut self) {
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Close the window; `log2_n` must match the number of pushed samples.
    pub fn finish(&mut self, log2_n: u32) -> (UQ15, PhasorSums) {
        let mut s = std::mem::take(&mut self.sums);
        self.count = 0;
        s = clamp_sums(s);
        s.weight = 1 << log2_n;
        // value = linf / (N·256) in Q1.15: linf·128 / N
        let v = round_shift_even(s.linf() * (1 << 15) / TRIG_ONE as i64, log2_n);
        (UQ15::saturating_from(v), s)
    }
}

fn clamp_sums(mut s: PhasorSums) -> PhasorSums {
    let (c, sc) = saturate_bits(s.s_cos, FEATURE_ACC_BITS);
    let (n, sn) = saturate_bits(s.s_sin, FEATURE_ACC_BITS);
    s.s_cos = c;
    s.s_sin = n;
    s.saturated |= sc || sn;
    s
}

/// PAC window output.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PacValue {
    /// Mean-vector length in envelope units (Q1.15).
    pub raw: UQ15,
    /// Raw value divided by the mean envelope, in [0, 1].
    pub normalized: UQ15,
    /// Set when ΣA was too small to normalize.
    pub degenerate: bool,
}

#[derive(Clone, Debug, Default)]
pub struct PacAccumulator {
    sums: PhasorSums,
    amp_sum: i64,
    count: usize,
}

impl PacAccumulator {
    #[inline]
    pub fn push(&mut self, phase_low: PhaseCode, env_high: Q15, lut: &TrigLut) {
        let a = env_high.raw().max(0) as i64;
        self.sums.s_cos += a * lut.cos(phase_low) as i64;
        self.sums.s_sin += a * lut.sin(phase_low) as i64;
        self.amp_sum += a;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&mut self, log2_n: u32) -> (PacValue, PhasorSums) {
        let mut s = clamp_sums(std::mem::take(&mut self.sums));
        let amp_sum = std::mem::take(&mut self.amp_sum);
        self.count = 0;
        s.weight = amp_sum;
        let linf = s.linf();
        let raw = round_shift_even(linf, log2_n + 8);
        let (normalized, degenerate) = if amp_sum < PAC_MIN_DIVISOR {
            (UQ15::ZERO, true)
        } else {
            // linf / (256·ΣA) in Q1.15
            (UQ15::saturating_from(div_round_even(linf * 128, amp_sum)), false)
        };
        (PacValue { raw: UQ15::saturating_from(raw), normalized, degenerate }, s)
    }
}

/// Windowed mean square of the bandpass signal.
#[derive(Clone, Debug, Default)]
pub struct SeAccumulator {
    energy: i64,
    count: usize,
}

impl SeAccumulator {
    #[inline]
    pub fn push(&mut self, bp: Q15) {
        let x = bp.raw() as i64;
        self.energy += x * x;
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(&mut self, log2_n: u32) -> UQ15 {
        let e = std::mem::take(&mut self.energy);
        self.count = 0;
        let (e, _) = saturate_bits(e, FEATURE_ACC_BITS);
        // Σbp² is Q2.30 per sample; mean in Q1.15 is Σ / (N·2^15).
        UQ15::saturating_from(round_shift_even(e, log2_n + 15))
    }
}

fn window_log2(n: usize) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() || n > MAX_WINDOW {
        return Err(Error::input(format!("window length {n} must be a power of two <= {MAX_WINDOW}")));
    }
    Ok(n.trailing_zeros())
}

/// PLV of one window of phase codes.
pub fn plv_window(phases_a: &[PhaseCode], phases_b: &[PhaseCode], lut: &TrigLut) -> Result<UQ15> {
    plv_window_sums(phases_a, phases_b, lut).map(|(v, _)| v)
}

pub fn plv_window_sums(phases_a: &[PhaseCode], phases_b: &[PhaseCode], lut: &TrigLut) -> Result<(UQ15, PhasorSums)> {
    if phases_a.len() != phases_b.len() {
        return Err(Error::input(format!("PLV window length mismatch: {} vs {}", phases_a.len(), phases_b.len())));
    }
    let log2 = window_log2(phases_a.len())?;
    let mut acc = PlvAccumulator::default();
    for (&a, &b) in phases_a.iter().zip(phases_b) {
        acc.push(a, b, lut);
    }
    Ok(acc.finish(log2))
}

pub fn pac_window(phases_low: &[PhaseCode], envs_high: &[Q15], lut: &TrigLut) -> Result<PacValue> {
    pac_window_sums(phases_low, envs_high, lut).map(|(v, _)| v)
}

pub fn pac_window_sums(phases_low: &[PhaseCode], envs_high: &[Q15], lut: &TrigLut) -> Result<(PacValue, PhasorSums)> {
    if phases_low.len() != envs_high.len() {
        return Err(Error::input(format!("PAC window length mismatch: {} vs {}", phases_low.len(), envs_high.len())));
    }
    let log2 = window_log2(phases_low.len())?;
    let mut acc = PacAccumulator::default();
    for (&p, &a) in phases_low.iter().zip(envs_high) {
        acc.push(p, a, lut);
    }
    Ok(acc.finish(log2))
}

pub fn se_window(bp: &[Q15]) -> Result<UQ15> {
    let log2 = window_log2(bp.len())?;
    let mut acc = SeAccumulator::default();
    bp.iter().for_each(|&x| acc.push(x));
    Ok(acc.finish(log2))
}

/// Pair id for pair features, channel id for SE.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureWindowRecord {
    pub window_index: u64,
    pub source: u8,
    pub kind: FeatureKind,
    pub value: UQ15,
}

impl FeatureWindowRecord {
    pub fn value_f64(&self) -> f64 {
        self.value.to_f64()
    }
}

/// Double-precision feature definitions on analytic signals.
pub mod ideal {
    use num_complex::Complex64;

    use crate::fir::BandConfig;
    use crate::oracle::band_analytic;
    use crate::Result;

    /// |mean(e^{j(φa − φb)})|
    pub fn plv(phase_a: &[f64], phase_b: &[f64]) -> f64 {
        let n = phase_a.len().min(phase_b.len());
        if n == 0 {
            return 0.0;
        }
        let s: Complex64 = phase_a.iter().zip(phase_b).map(|(a, b)| Complex64::from_polar(1.0, a - b)).sum();
        s.norm() / n as f64
    }

    /// |ΣA·e^{jφ}| / ΣA
    pub fn pac(phase_low: &[f64], amp_high: &[f64]) -> f64 {
        let total: f64 = amp_high.iter().sum();
        if total <= 0.0 {
            return 0.0;
        }
        let s: Complex64 = phase_low.iter().zip(amp_high).map(|(p, a)| Complex64::from_polar(*a, *p)).sum();
        s.norm() / total
    }

    pub fn se(bp: &[f64]) -> f64 {
        if bp.is_empty() {
            return 0.0;
        }
        bp.iter().map(|x| x * x).sum::<f64>() / bp.len() as f64
    }

    /// Ground-truth analytic signal of a trace, decimated by `decimation`
    /// and delayed by `delay` output samples to line up with the fixed-point
    /// pipeline.
    pub fn aligned_analytic(
        trace: &[f64],
        band: &BandConfig,
        rate_hz: f64,
        decimation: usize,
        delay: usize,
    ) -> Result<Vec<Complex64>> {
        let z = band_analytic(trace, band, rate_hz)?;
        let dec: Vec<Complex64> = z.into_iter().step_by(decimation).collect();
        let mut out = vec![Complex64::new(0.0, 0.0); delay.min(dec.len())];
        out.extend_from_slice(&dec[..dec.len() - out.len()]);
        Ok(out)
    }

    /// Per-window ideal values for a pair feature (PLV or PAC) from two
    /// aligned analytic signals.
    pub fn pair_windows(kind: super::PairFeature, a: &[Complex64], b: &[Complex64], n: usize) -> Vec<f64> {
        let windows = a.len().min(b.len()) / n;
        (0..windows)
            .map(|w| {
                let (sa, sb) = (&a[w * n..(w + 1) * n], &b[w * n..(w + 1) * n]);
                let pa: Vec<f64> = sa.iter().map(|z| z.arg()).collect();
                match kind {
                    super::PairFeature::Plv => {
                        let pb: Vec<f64> = sb.iter().map(|z| z.arg()).collect();
                        plv(&pa, &pb)
                    }
                    super::PairFeature::Pac => {
                        let amp: Vec<f64> = sb.iter().map(|z| z.norm()).collect();
                        pac(&pa, &amp)
                    }
                }
            })
            .collect()
    }

    pub fn se_windows(a: &[Complex64], n: usize) -> Vec<f64> {
        a.chunks_exact(n).map(|w| se(&w.iter().map(|z| z.re).collect::<Vec<_>>())).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lut() -> TrigLut {
        TrigLut::build()
    }

    #[test]
    fn trig_table_exact() {
        let l = lut();
        assert_eq!(l.sin(PhaseCode::ZERO), 0);
        assert_eq!(l.sin(PhaseCode::wrap(256)), 256);
        assert_eq!(l.cos(PhaseCode::ZERO), 256);
        assert!(l.table().iter().all(|&v| v <= 256));
        for c in -512..512 {
            let p = PhaseCode::wrap(c);
            let s = (256.0 * (2.0 * PI * c as f64 / 1024.0).sin()).round() as i32;
            let k = (256.0 * (2.0 * PI * c as f64 / 1024.0).cos()).round() as i32;
            assert_eq!(l.sin(p), s, "sin {c}");
            assert_eq!(l.cos(p), k, "cos {c}");
        }
    }

    #[test]
    fn envelope_examples() {
        assert_eq!(envelope(Q15(-300), Q15(200)), Q15(300));
        assert_eq!(envelope(Q15(0), Q15(0)), Q15(0));
        assert_eq!(envelope(Q15(i16::MIN), Q15(0)), Q15(i16::MAX));
    }

    #[test]
    fn envelope_cycle_mean() {
        // Oracle: mean of max(|cos|,|sin|) over a cycle = (4/π)·sin(π/4).
        let n = 100_000;
        let amp = 20_000.0;
        let mean = (0..n)
            .map(|i| {
                let t = 2.0 * PI * i as f64 / n as f64;
                envelope(Q15((amp * t.cos()).round() as i16), Q15((amp * t.sin()).round() as i16)).to_f64()
            })
            .sum::<f64>()
            / n as f64;
        let ratio = mean / (amp / 32768.0);
        assert!((ratio - 4.0 / PI * (PI / 4.0).sin()).abs() < 1e-3, "{ratio}");
    }

    #[test]
    fn plv_examples() {
        let l = lut();
        let zeros = vec![PhaseCode::ZERO; 1024];
        let a: Vec<PhaseCode> = (0..1024).map(|i| PhaseCode::wrap(i * 5)).collect();
        assert_eq!(plv_window(&a, &a, &l).unwrap(), UQ15::ONE);

        let b: Vec<PhaseCode> = a.iter().map(|p| p.wrapping_add(-128)).collect();
        let v = plv_window(&a, &b, &l).unwrap().to_f64();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-3, "{v}");

        let uni: Vec<PhaseCode> = (0..1024).map(PhaseCode::wrap).collect();
        assert!(plv_window(&uni, &zeros, &l).unwrap().0 <= 2);

        assert!(plv_window(&a[..10], &a[..11], &l).is_err());
    }

    #[test]
    fn pac_examples() {
        let l = lut();
        let grid: Vec<PhaseCode> = (0..1024).map(PhaseCode::wrap).collect();
        let flat = vec![Q15(10_000); 1024];
        let v = pac_window(&grid, &flat, &l).unwrap();
        assert_eq!(v.raw, UQ15::ZERO);

        // Closed form on a uniform grid: |Σ(1+cosφ)e^{jφ}| / Σ(1+cosφ) = 1/2.
        let amp: Vec<Q15> = grid.iter().map(|p| Q15::from_f64(0.4 * (1.0 + p.radians().cos()))).collect();
        let v = pac_window(&grid, &amp, &l).unwrap();
        assert!((v.normalized.to_f64() - 0.5).abs() < 2e-3, "{:?}", v);
        assert!(!v.degenerate);

        let zero = vec![Q15::ZERO; 1024];
        let v = pac_window(&grid, &zero, &l).unwrap();
        assert!(v.degenerate);
        assert_eq!(v.normalized, UQ15::ZERO);
    }

    #[test]
    fn pac_half_wave_bursts_vs_brute_force() {
        let l = lut();
        let n = 1024;
        let phases: Vec<PhaseCode> = (0..n).map(|i| PhaseCode::wrap(i * 3 + 17)).collect();
        let amp_f: Vec<f64> = phases.iter().map(|p| 0.6 * p.radians().cos().max(0.0)).collect();
        let amp: Vec<Q15> = amp_f.iter().map(|&a| Q15::from_f64(a)).collect();
        // Brute-force window sum in double precision on the same phases.
        let rad: Vec<f64> = phases.iter().map(|p| p.radians()).collect();
        let ideal = ideal::pac(&rad, &amp_f);
        let (v, sums) = pac_window_sums(&phases, &amp, &l).unwrap();
        let hw = v.normalized.to_f64();
        let bias_floor = ideal / 2f64.sqrt();
        assert!(hw <= ideal * 1.02 + 1e-4 && hw >= bias_floor * 0.98, "hw {hw} ideal {ideal}");
        assert!(sums.linf() > 0);
    }

    #[test]
    fn se_examples() {
        assert_eq!(se_window(&vec![Q15::ZERO; 256]).unwrap(), UQ15::ZERO);
        let sq = vec![Q15::MIN; 1024];
        assert_eq!(se_window(&sq).unwrap(), UQ15::ONE);
        let sq: Vec<Q15> = (0..1024).map(|i| if i % 2 == 0 { Q15::MAX } else { Q15::MIN }).collect();
        assert!((se_window(&sq).unwrap().to_f64() - 1.0).abs() < 2.0 / 32768.0);
        let sine: Vec<Q15> =
            (0..1024).map(|i| Q15::from_f64(0.99997 * (2.0 * PI * 8.0 * i as f64 / 1024.0).sin())).collect();
        let v = se_window(&sine).unwrap().0 as i32;
        assert!((v - 16384).abs() <= 1, "{v}");
    }

    #[test]
    fn pair_validation() {
        let p = |id, a, b| PairSpec { id, ch_a: a, ch_b: b, feature: PairFeature::Plv };
        assert!(validate_pairs(&[p(0, 0, 1), p(1, 2, 3)]).is_ok());
        assert!(validate_pairs(&[p(0, 0, 16)]).is_err());
        assert!(validate_pairs(&[p(0, 0, 1), p(0, 2, 3)]).is_err());
        let many: Vec<PairSpec> = (0..9).map(|i| p(i, 0, 1)).collect();
        assert!(validate_pairs(&many).is_err());
        assert!(WindowConfig { n_samples: 1000 }.validate().is_err());
    }
}
