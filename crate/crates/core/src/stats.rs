//! Circular statistics for phase-locking errors and Pearson correlation for
//! feature fidelity.

use serde::{Deserialize, Serialize};

pub const HIST_BINS: usize = 36;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CircularStats {
    pub n: usize,
    pub circular_mean_deg: f64,
    pub circular_resultant_r: f64,
    /// 10° bins over [-180°, 180°).
    pub histogram: Vec<u64>,
}

/// Wrap an angle in degrees into [-180, 180).
pub fn wrap_deg(x: f64) -> f64 {
    (x + 180.0).rem_euclid(360.0) - 180.0
}

impl CircularStats {
    /// `None` for an empty sample.
    pub fn from_degrees(errors: &[f64]) -> Option<CircularStats> {
        if errors.is_empty() {
            return None;
        }
        let (mut c, mut s) = (0.0, 0.0);
        let mut histogram = vec![0u64; HIST_BINS];
        for &e in errors {
            let r = e.to_radians();
            c += r.cos();
            s += r.sin();
            let bin = ((wrap_deg(e) + 180.0) / 10.0).floor() as usize;
            histogram[bin.min(HIST_BINS - 1)] += 1;
        }
        let n = errors.len();
        Some(CircularStats {
            n,
            circular_mean_deg: wrap_deg(s.atan2(c).to_degrees()),
            circular_resultant_r: (c.hypot(s) / n as f64).clamp(0.0, 1.0),
            histogram,
        })
    }

    /// Text polar histogram, one row per bin.
    pub fn render(&self) -> String {
        let peak = self.histogram.iter().copied().max().unwrap_or(0).max(1);
        let mut out = String::new();
        for (i, &h) in self.histogram.iter().enumerate() {
            let lo = -180 + 10 * i as i32;
            let bar = "#".repeat(((h * 50) / peak) as usize);
            out.push_str(&format!("{lo:>5}..{:<5} {h:>6} {bar}\n", lo + 10));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub n: usize,
    /// `None` when either sequence is degenerate.
    pub r: Option<f64>,
    pub degenerate: bool,
}

/// Pearson correlation; a sequence whose variance is below `10·lsb²` is
/// reported as degenerate rather than producing a number.
pub fn pearson(x: &[f64], y: &[f64], lsb: f64) -> Correlation {
    let n = x.len().min(y.len());
    let degenerate = Correlation { n, r: None, degenerate: true };
    if n < 2 {
        return degenerate;
    }
    let (x, y) = (&x[..n], &y[..n]);
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let vx = x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() / n as f64;
    let vy = y.iter().map(|b| (b - my).powi(2)).sum::<f64>() / n as f64;
    let floor = 10.0 * lsb * lsb;
    if vx < floor || vy < floor {
        return degenerate;
    }
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / n as f64;
    Correlation { n, r: Some((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0)), degenerate: false }
}
