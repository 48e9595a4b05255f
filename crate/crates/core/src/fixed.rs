//! Q1.15 arithmetic helpers shared by the datapath.

use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of fractional bits in a Q1.15 word.
pub const Q15_FRAC_BITS: u32 = 15;
pub const Q15_ONE: i32 = 1 << Q15_FRAC_BITS;

/// Signed Q1.15 sample, value = raw / 32768.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Q15(pub i16);

impl Q15 {
    pub const ZERO: Q15 = Q15(0);
    pub const MAX: Q15 = Q15(i16::MAX);
    pub const MIN: Q15 = Q15(i16::MIN);

    /// Nearest Q1.15 value, saturating outside [-1, 1).
    pub fn from_f64(x: f64) -> Q15 {
        let scaled = (x * Q15_ONE as f64).round();
        Q15(scaled.clamp(i16::MIN as f64, i16::MAX as f64) as i16)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Q15_ONE as f64
    }

    pub fn raw(self) -> i16 {
        self.0
    }

    /// |x| without the i16::MIN overflow.
    pub fn unsigned_abs(self) -> u16 {
        self.0.unsigned_abs()
    }
}

impl fmt::Display for Q15 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.to_f64())
    }
}

/// Unsigned Q1.15 fraction in [0, 1], value = raw / 32768.
///
/// Feature outputs (PLV, PAC, SE) are non-negative and reach exactly 1.0, which
/// a signed Q1.15 word cannot hold; the unsigned word keeps the same scale.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UQ15(pub u16);

impl UQ15 {
    pub const ZERO: UQ15 = UQ15(0);
    pub const ONE: UQ15 = UQ15(1 << 15);

    pub fn from_f64(x: f64) -> UQ15 {
        let scaled = (x * Q15_ONE as f64).round();
        UQ15(scaled.clamp(0.0, Q15_ONE as f64) as u16)
    }

    pub fn to_f64(self) -> f64 {
        self.0 as f64 / Q15_ONE as f64
    }

    /// Clamp an integer result into [0, 1.0].
    pub fn saturating_from(raw: i64) -> UQ15 {
        UQ15(raw.clamp(0, Q15_ONE as i64) as u16)
    }
}

/// `x / 2^shift` rounded to nearest, ties to even.
pub fn round_shift_even(x: i64, shift: u32) -> i64 {
    if shift == 0 {
        return x;
    }
    let floor = x >> shift;
    let rem = x - (floor << shift);
    let half = 1i64 << (shift - 1);
    if rem > half || (rem == half && floor & 1 == 1) {
        floor + 1
    } else {
        floor
    }
}

/// `num / den` rounded to nearest, ties to even. `den` must be positive.
pub fn div_round_even(num: i64, den: i64) -> i64 {
    debug_assert!(den > 0);
    let q = num.div_euclid(den);
    let r = num.rem_euclid(den);
    match (2 * r).cmp(&den) {
        std::cmp::Ordering::Greater => q + 1,
        std::cmp::Ordering::Less => q,
        std::cmp::Ordering::Equal => q + (q & 1),
    }
}

/// Saturate to i16, reporting whether clipping happened.
pub fn saturate_i16(x: i64) -> (i16, bool) {
    if x > i16::MAX as i64 {
        (i16::MAX, true)
    } else if x < i16::MIN as i64 {
        (i16::MIN, true)
    } else {
        (x as i16, false)
    }
}

/// Saturate to a signed accumulator of `bits` width.
pub fn saturate_bits(x: i64, bits: u32) -> (i64, bool) {
    let max = (1i64 << (bits - 1)) - 1;
    let min = -(1i64 << (bits - 1));
    if x > max {
        (max, true)
    } else if x < min {
        (min, true)
    } else {
        (x, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_ties_to_even() {
        assert_eq!(round_shift_even(3, 1), 2); // 1.5 -> 2
        assert_eq!(round_shift_even(5, 1), 2); // 2.5 -> 2
        assert_eq!(round_shift_even(-3, 1), -2); // -1.5 -> -2
        assert_eq!(round_shift_even(-5, 1), -2); // -2.5 -> -2
        assert_eq!(round_shift_even(7, 2), 2); // 1.75 -> 2
        assert_eq!(round_shift_even(-7, 2), -2);
        assert_eq!(div_round_even(5, 2), 2);
        assert_eq!(div_round_even(7, 2), 4);
        assert_eq!(div_round_even(-5, 2), -2);
        assert_eq!(div_round_even(10, 3), 3);
    }

    #[test]
    fn saturation() {
        assert_eq!(saturate_i16(40000), (i16::MAX, true));
        assert_eq!(saturate_i16(-40000), (i16::MIN, true));
        assert_eq!(saturate_i16(-5), (-5, false));
        assert_eq!(saturate_bits(1 << 40, 40), ((1 << 39) - 1, true));
    }

    #[test]
    fn q15_conversions() {
        assert_eq!(Q15::from_f64(0.5), Q15(16384));
        assert_eq!(Q15::from_f64(1.5), Q15::MAX);
        assert_eq!(Q15::from_f64(-1.0), Q15::MIN);
        assert_eq!(UQ15::from_f64(1.0), UQ15::ONE);
        assert_eq!(UQ15::saturating_from(-3), UQ15::ZERO);
        assert_eq!(Q15::MIN.unsigned_abs(), 32768);
    }
}
