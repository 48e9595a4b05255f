//! Lightweight phase extraction.
//!
//! The extractor folds an analytic pair into the first octant, forms the
//! ratio `min/max` with a reciprocal table and one multiply, applies a linear
//! arctangent with a table-driven correction, and unfolds the result with
//! the trigonometric periodicity identities. A 12-stage vectoring CORDIC and a
//! double-precision arctangent serve as references.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::fixed::round_shift_even;

/// Phase resolution in bits.
pub const PHASE_BITS: u32 = 10;
/// Codes per full turn.
pub const CODES_PER_TURN: i32 = 1 << PHASE_BITS;
const HALF_TURN: i32 = CODES_PER_TURN / 2;

/// Fractional guard bits carried through the octant datapath.
const GUARD_BITS: u32 = 3;
/// Eighth-code units for π/2 and π.
const QUARTER_TURN_EIGHTHS: i32 = (CODES_PER_TURN / 4) << GUARD_BITS;
const HALF_TURN_EIGHTHS: i32 = HALF_TURN << GUARD_BITS;

pub const RECIP_ENTRIES: usize = 256;
pub const RECIP_BITS: u32 = 9;
pub const LIN_ENTRIES: usize = 256;
pub const LIN_BITS: u32 = 7;

/// 10-bit two's-complement phase, `code * 2π / 1024` radians, in [-π, π).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PhaseCode(i16);

impl PhaseCode {
    pub const ZERO: PhaseCode = PhaseCode(0);
    pub const MIN: PhaseCode = PhaseCode(-(HALF_TURN as i16));
    pub const MAX: PhaseCode = PhaseCode(HALF_TURN as i16 - 1);

    /// Reduce any integer modulo 1024 into [-512, 511].
    pub fn wrap(code: i32) -> PhaseCode {
        let c = (code + HALF_TURN).rem_euclid(CODES_PER_TURN) - HALF_TURN;
        PhaseCode(c as i16)
    }

    pub fn new(code: i32) -> Option<PhaseCode> {
        (-HALF_TURN..HALF_TURN).contains(&code).then_some(PhaseCode(code as i16))
    }

    pub fn code(self) -> i32 {
        self.0 as i32
    }

    /// Nearest code to an angle in radians.
    pub fn from_radians(rad: f64) -> PhaseCode {
        PhaseCode::wrap((rad * CODES_PER_TURN as f64 / (2.0 * PI)).round() as i32)
    }

    pub fn from_degrees(deg: f64) -> PhaseCode {
        PhaseCode::from_radians(deg.to_radians())
    }

    pub fn radians(self) -> f64 {
        self.0 as f64 * 2.0 * PI / CODES_PER_TURN as f64
    }

    pub fn degrees(self) -> f64 {
        self.0 as f64 * 360.0 / CODES_PER_TURN as f64
    }

    /// `self - other` on the circle, as a signed code.
    pub fn wrapping_sub(self, other: PhaseCode) -> PhaseCode {
        PhaseCode::wrap(self.code() - other.code())
    }

    pub fn wrapping_add(self, other: i32) -> PhaseCode {
        PhaseCode::wrap(self.code() + other)
    }

    /// Shortest distance around the circle, in codes (0..=512).
    pub fn circular_distance(self, other: PhaseCode) -> u32 {
        self.wrapping_sub(other).code().unsigned_abs()
    }
}

impl fmt::Display for PhaseCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Output of a phase kernel. `degenerate` is set for the (0, 0) input, whose
/// code is defined as 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PhaseEstimate {
    pub code: PhaseCode,
    pub degenerate: bool,
}

impl PhaseEstimate {
    const DEGENERATE: PhaseEstimate = PhaseEstimate { code: PhaseCode::ZERO, degenerate: true };

    fn valid(code: i32) -> PhaseEstimate {
        PhaseEstimate { code: PhaseCode::wrap(code), degenerate: false }
    }
}

/// Region of the complex plane an input pair falls in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OctantInfo {
    pub neg_re: bool,
    pub neg_im: bool,
    /// `|im| > |re|`
    pub swapped: bool,
}

impl OctantInfo {
    pub fn classify(re: i16, im: i16) -> OctantInfo {
        OctantInfo { neg_re: re < 0, neg_im: im < 0, swapped: im.unsigned_abs() > re.unsigned_abs() }
    }

    /// Map a first-octant angle (eighth-code units) back to the full circle.
    fn unfold(self, octant_eighths: i32) -> i32 {
        let mut t = octant_eighths;
        if self.swapped {
            t = QUARTER_TURN_EIGHTHS - t;
        }
        if self.neg_re {
            t = HALF_TURN_EIGHTHS - t;
        }
        let magnitude = round_shift_even(t as i64, GUARD_BITS) as i32;
        if self.neg_im {
            -magnitude
        } else {
            magnitude
        }
    }
}

/// Reciprocal and linearization tables.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LpeLuts {
    /// Reciprocal mantissa minus 256, 9 bits.
    pub recip: Vec<u16>,
    /// First-order arctangent correction in eighth-code units, 7 bits.
    pub lin: Vec<u8>,
}

/// Summary of a table build.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LutReport {
    pub recip_entries: usize,
    pub recip_bits: u32,
    pub lin_entries: usize,
    pub lin_bits: u32,
    pub lin_max: u8,
    pub lin_argmax: usize,
    /// Peak first-order error the correction table removes, in degrees.
    pub lin_peak_deg: f64,
    pub recip_monotone: bool,
}

impl LpeLuts {
    pub fn build() -> LpeLuts {
        let recip = (0..RECIP_ENTRIES).map(|d| ((131072.0 / (256 + d) as f64).round() as u16) - 256).collect();
        let codes_per_rad = CODES_PER_TURN as f64 / (2.0 * PI);
        let lin = (0..LIN_ENTRIES)
            .map(|x| {
                let r = x as f64 / 256.0;
                let err = r.atan() - PI / 4.0 * r;
                (err * codes_per_rad * (1 << GUARD_BITS) as f64).round() as u8
            })
            .collect();
        LpeLuts { recip, lin }
    }

    pub fn report(&self) -> LutReport {
        let (lin_argmax, &lin_max) =
            self.lin.iter().enumerate().max_by_key(|(i, v)| (**v, std::cmp::Reverse(*i))).expect("non-empty table");
        LutReport {
            recip_entries: self.recip.len(),
            recip_bits: bits_needed(self.recip.iter().map(|&v| v as u32).max().unwrap_or(0)),
            lin_entries: self.lin.len(),
            lin_bits: bits_needed(lin_max as u32),
            lin_max,
            lin_argmax,
            lin_peak_deg: lin_max as f64 / (1 << GUARD_BITS) as f64 * 360.0 / CODES_PER_TURN as f64,
            recip_monotone: self.recip.windows(2).all(|w| w[1] <= w[0]),
        }
    }

    /// Check table shapes and bit widths.
    pub fn validate(&self) -> crate::Result<()> {
        let r = self.report();
        if r.recip_entries != RECIP_ENTRIES || r.lin_entries != LIN_ENTRIES {
            return Err(crate::Error::config("LPE tables must hold 256 entries each"));
        }
        if r.recip_bits > RECIP_BITS || r.lin_bits > LIN_BITS {
            return Err(crate::Error::config(format!(
                "LPE table width exceeded: recip {} bits, lin {} bits",
                r.recip_bits, r.lin_bits
            )));
        }
        if !r.recip_monotone || self.lin[0] != 0 {
            return Err(crate::Error::config("LPE tables violate shape invariants"));
        }
        Ok(())
    }

    pub fn sha256(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.recip {
            h.update(v.to_le_bytes());
        }
        h.update(&self.lin);
        hex::encode(h.finalize())
    }

    /// Phase of `(re, im)`; see [`lpe_phase`].
    #[inline]
    pub fn phase(&self, re: i16, im: i16) -> PhaseEstimate {
        lpe_phase(re, im, self)
    }
}

fn bits_needed(v: u32) -> u32 {
    32 - v.leading_zeros()
}

/// Lightweight phase extraction of a Q1.15 analytic pair.
pub fn lpe_phase(re: i16, im: i16, luts: &LpeLuts) -> PhaseEstimate {
    if re == 0 && im == 0 {
        return PhaseEstimate::DEGENERATE;
    }
    let oct = OctantInfo::classify(re, im);
    let (a_re, a_im) = (re.unsigned_abs() as u32, im.unsigned_abs() as u32);
    let (num, den) = if oct.swapped { (a_re, a_im) } else { (a_im, a_re) };

    // Shared left shift puts the leading one of den at bit 15.
    let shift = den.leading_zeros() - 16;
    let den = den << shift;
    let num = num << shift;

    let d = ((den >> 7) & 0xff) as usize;
    let mantissa = luts.recip[d] as u32 + 256;
    let x = ((num * mantissa) >> 16).min(255) as usize;

    // x/2 codes of linear phase plus the correction, both in eighths.
    let octant = ((x as i32) << (GUARD_BITS - 1)) + luts.lin[x] as i32;
    PhaseEstimate::valid(oct.unfold(octant))
}

/// atan(2^-i) in eighth-code units, i = 0..12.
pub const CORDIC_ANGLES: [i32; CORDIC_ITERATIONS] = [1024, 605, 319, 162, 81, 41, 20, 10, 5, 3, 1, 1];
pub const CORDIC_ITERATIONS: usize = 12;
/// Inputs are scaled so the larger component's leading one sits at this bit,
/// which keeps the 1.647x CORDIC growth inside 16 signed bits.
const CORDIC_NORM_BIT: u32 = 12;

/// 12-stage unrolled vectoring CORDIC on the first-quadrant fold of `(re, im)`.
pub fn cordic_phase(re: i16, im: i16) -> PhaseEstimate {
    if re == 0 && im == 0 {
        return PhaseEstimate::DEGENERATE;
    }
    let fold = OctantInfo { neg_re: re < 0, neg_im: im < 0, swapped: false };
    let mut x = re.unsigned_abs() as i32;
    let mut y = im.unsigned_abs() as i32;
    let lead = 31 - (x.max(y) as u32).leading_zeros();
    if lead > CORDIC_NORM_BIT {
        x >>= lead - CORDIC_NORM_BIT;
        y >>= lead - CORDIC_NORM_BIT;
    } else {
        x <<= CORDIC_NORM_BIT - lead;
        y <<= CORDIC_NORM_BIT - lead;
    }

    let mut z = 0i32;
    for (i, &angle) in CORDIC_ANGLES.iter().enumerate() {
        let (dx, dy) = (y >> i, x >> i);
        if y >= 0 {
            x += dx;
            y -= dy;
            z += angle;
        } else {
            x -= dx;
            y += dy;
            z -= angle;
        }
        debug_assert!(i16::try_from(x).is_ok() && i16::try_from(y).is_ok());
    }
    PhaseEstimate::valid(fold.unfold(z))
}

/// Double-precision four-quadrant arctangent in [-π, π). `(0, 0)` maps to 0.
pub fn oracle_phase(re: f64, im: f64) -> f64 {
    if re == 0.0 && im == 0.0 {
        return 0.0;
    }
    let a = im.atan2(re);
    if a >= PI {
        -PI
    } else {
        a
    }
}

/// Oracle phase rounded to the nearest code.
pub fn oracle_code(re: f64, im: f64) -> PhaseCode {
    PhaseCode::from_radians(oracle_phase(re, im))
}

/// Oracle phase in (fractional) code units.
pub fn oracle_codes_f64(re: f64, im: f64) -> f64 {
    oracle_phase(re, im) * CODES_PER_TURN as f64 / (2.0 * PI)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseKernel {
    Lpe,
    Cordic,
}

/// Static per-conversion operation counts of a phase datapath.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub multiplies: u32,
    /// Adds with a shifted operand (CORDIC x/y updates).
    pub shift_adds: u32,
    /// Adds into the phase accumulator.
    pub angle_adds: u32,
    /// Remaining adds, subtracts and conditional negations.
    pub adds: u32,
    pub comparisons: u32,
    pub table_lookups: u32,
    pub output_bits: u32,
}

pub fn op_count_model(kind: PhaseKernel) -> OpCounts {
    match kind {
        // |re|, |im|; sign tests and |im| > |re|; x/2 + lin, swap and
        // half-plane identities; rounding and output sign.
        PhaseKernel::Lpe => OpCounts {
            multiplies: 1,
            shift_adds: 0,
            angle_adds: 3,
            adds: 4,
            comparisons: 3,
            table_lookups: 2,
            output_bits: PHASE_BITS,
        },
        PhaseKernel::Cordic => OpCounts {
            multiplies: 0,
            shift_adds: 2 * CORDIC_ITERATIONS as u32,
            angle_adds: CORDIC_ITERATIONS as u32,
            adds: 5,
            comparisons: 2 + CORDIC_ITERATIONS as u32,
            table_lookups: 0,
            output_bits: PHASE_BITS,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn luts() -> LpeLuts {
        LpeLuts::build()
    }

    #[test]
    fn table_anchor_values() {
        let l = luts();
        assert_eq!(l.recip[0], 256);
        assert_eq!(l.lin[0], 0);
        let r = l.report();
        assert_eq!(r.lin_max, 93);
        // Continuous peak at x = 256·sqrt(4/π - 1) ≈ 134.
        assert_eq!(l.lin[134], 93);
        assert!(r.lin_argmax <= 134);
        assert!((r.lin_peak_deg - 4.08).abs() < 0.01);
        assert!(r.recip_bits <= 9 && r.lin_bits <= 7);
        assert!(r.recip_monotone);
        l.validate().unwrap();
    }

    #[test]
    fn cordic_angle_table_matches_formula() {
        for (i, &a) in CORDIC_ANGLES.iter().enumerate() {
            let exact = (2f64.powi(-(i as i32))).atan() * 4096.0 / PI;
            assert_eq!(a, exact.round() as i32, "stage {i}");
        }
    }

    #[test]
    fn lpe_examples() {
        let l = luts();
        assert_eq!(lpe_phase(1000, 0, &l).code.code(), 0);
        assert_eq!(lpe_phase(300, 300, &l).code.code(), 128);
        assert_eq!(lpe_phase(400, 300, &l).code.code(), 105);
        assert_eq!(lpe_phase(-1000, 0, &l).code.code(), -512);
        assert_eq!(lpe_phase(0, 1000, &l).code.code(), 256);
        assert_eq!(lpe_phase(0, -1000, &l).code.code(), -256);
        let z = lpe_phase(0, 0, &l);
        assert!(z.degenerate);
        assert_eq!(z.code, PhaseCode::ZERO);
        assert_eq!(lpe_phase(i16::MIN, i16::MIN, &l).code.code(), -384);
    }

    #[test]
    fn cordic_examples() {
        assert_eq!(cordic_phase(0, 1000).code.code(), 256);
        assert_eq!(cordic_phase(300, 300).code.code(), 128);
        assert_eq!(cordic_phase(1000, 0).code.code(), 0);
        assert_eq!(cordic_phase(-1000, 0).code.code(), -512);
        assert_eq!(cordic_phase(400, 300).code.code(), 105);
        assert!(cordic_phase(0, 0).degenerate);
        assert_eq!(cordic_phase(i16::MIN, i16::MAX).code.code(), 384);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn oracle_examples() {
        assert!((oracle_phase(1.0, 1.0) - 0.785_398_2).abs() < 1e-7);
        assert_eq!(oracle_phase(-1.0, 0.0), -PI);
        assert!((oracle_phase(400.0, 300.0) - 0.643_501_1).abs() < 1e-7);
        assert_eq!(oracle_phase(0.0, 0.0), 0.0);
        assert!((oracle_codes_f64(400.0, 300.0) - 104.87).abs() < 0.01);
    }

    #[test]
    fn code_wrapping() {
        assert_eq!(PhaseCode::wrap(512).code(), -512);
        assert_eq!(PhaseCode::wrap(-513).code(), 511);
        assert_eq!(PhaseCode::wrap(1024 + 3).code(), 3);
        assert_eq!(PhaseCode::from_degrees(180.0).code(), -512);
        assert_eq!(PhaseCode::new(512), None);
        let a = PhaseCode::wrap(500);
        let b = PhaseCode::wrap(-500);
        assert_eq!(a.circular_distance(b), 24);
    }

    #[test]
    fn op_counts() {
        let l = op_count_model(PhaseKernel::Lpe);
        let c = op_count_model(PhaseKernel::Cordic);
        assert_eq!((l.multiplies, l.table_lookups), (1, 2));
        assert_eq!((c.multiplies, c.shift_adds, c.angle_adds), (0, 24, 12));
        assert_eq!(l.output_bits, 10);
        assert_eq!(c.output_bits, 10);
    }
}
