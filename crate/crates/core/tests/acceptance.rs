//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails.

use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use neurolock::config::RunConfig;
use neurolock::connectivity::{pac_window_sums, plv_window_sums, TrigLut};
use neurolock::experiments::*;
use neurolock::fir::{design_filters, BandConfig};
use neurolock::fixed::{Q15, UQ15};
use neurolock::phase::{cordic_phase, op_count_model, LpeLuts, PhaseCode, PhaseEstimate};
use neurolock::pipeline::synthesize;
use neurolock::stimulator::{pulse_train, ElectrodeState, StimPulseParams};
use neurolock::trigger::{Compensation, StimConfig, StimMode, TriggerEngine, MAX_PHASE_STEP};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

type Criterion = (&'static str, fn() -> Outcome);

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

/// Sweep every pair with magnitudes up to 10 bits plus sign. Returns the worst circular distance to
/// the correctly rounded arctangent code, the number of pairs more than one
/// code away from it, the worst distance to the unrounded angle, and whether
/// (0, 0) was flagged degenerate.
fn sweep(kernel: impl Fn(i16, i16) -> PhaseEstimate) -> (u32, usize, f64, bool) {
    let mut worst = 0u32;
    let mut worst_real = 0.0f64;
    let mut over = 0;
    let mut zero_flagged = false;
    for re in -1024i16..1024 {
        for im in -1024i16..1024 {
            let est = kernel(re, im);
            if (re, im) == (0, 0) {
                zero_flagged = est.degenerate;
                continue;
            }
            let exact = (im as f64).atan2(re as f64) * 512.0 / PI;
            let d = (est.code.code() as f64 - exact).rem_euclid(1024.0);
            worst_real = worst_real.max(d.min(1024.0 - d));
            let d = (est.code.code() - exact.round() as i32).rem_euclid(1024) as u32;
            let d = d.min(1024 - d);
            worst = worst.max(d);
            over += (d > 1) as usize;
        }
    }
    (worst, over, worst_real, zero_flagged)
}

fn c1_lpe() -> Outcome {
    let luts = LpeLuts::build();
    let t = Instant::now();
    let (worst, over, real, zero) = sweep(|re, im| luts.phase(re, im));
    outcome(
        over == 0 && zero,
        format!(
            "LPE worst {worst} code(s) from the rounded arctangent ({real:.3} unrounded), {over} of 4194303 pairs over 1, (0,0) flagged {zero}, {:.2}s",
            t.elapsed().as_secs_f64()
        ),
    )
}

fn c2_cordic() -> Outcome {
    let (worst, over, real, zero) = sweep(cordic_phase);
    let bench = bench_compare(3);
    println!("    kernel  mul  shift-add  angle-add  add  cmp  lut  max|err|  mean|err|  conv/s");
    for k in &bench.kernels {
        let o = op_count_model(k.kernel);
        assert_eq!(o, k.ops);
        println!(
            "    {:<6}  {:>3}  {:>9}  {:>9}  {:>3}  {:>3}  {:>3}  {:>8}  {:>9.3}  {:.3e}",
            format!("{:?}", k.kernel),
            o.multiplies,
            o.shift_adds,
            o.angle_adds,
            o.adds,
            o.comparisons,
            o.table_lookups,
            k.max_error_codes,
            k.mean_abs_error_codes,
            k.conversions_per_s
        );
    }
    outcome(
        over == 0 && zero,
        format!("CORDIC worst {worst} code(s) from the rounded arctangent ({real:.3} unrounded), {over} pairs over 1"),
    )
}

fn c3_delay() -> Outcome {
    let set = design_filters(&BandConfig::theta(), 4000.0, &RunConfig::default().lpf, 63).unwrap();
    let d = measure_group_delay(&set, 6.0);
    outcome(
        set.group_delay_band == 31 && (d.band_samples - 31.0).abs() <= 1.0,
        format!(
            "designed {} samples, measured {:.3} at 6 Hz (lowpass and decimator add {:.3})",
            set.group_delay_band,
            d.band_samples,
            d.chain_samples - d.band_samples
        ),
    )
}

fn phase_stats(comp: Compensation) -> (f64, f64, usize, f64) {
    let t = Instant::now();
    let r = run_protocol(&PhaseProtocol { compensation: comp, ..PhaseProtocol::default() }).unwrap();
    let s = r.stats.expect("triggers");
    (s.circular_mean_deg, s.circular_resultant_r, s.n, t.elapsed().as_secs_f64())
}

fn c4a_compensated() -> Outcome {
    let (mean, r, n, secs) = phase_stats(Compensation::BandAndLpf);
    outcome(mean.abs() <= 5.0 && r >= 0.95 && secs <= 60.0, format!("mean {mean:+.2} deg, r {r:.4}, n {n}, {secs:.1}s"))
}

fn c4b_uncompensated() -> Outcome {
    let (mean, r, n, _) = phase_stats(Compensation::Off);
    outcome((mean - -67.0).abs() <= 3.0, format!("mean {mean:+.2} deg (want -67 +- 3), r {r:.4}, n {n}"))
}

fn c5_noise() -> Outcome {
    let base = PhaseProtocol { adc_fullscale_vpp: 12.0, duration_s: 40.0, ..PhaseProtocol::default() };
    let pts = noise_sweep(&base, &[0.0, 1.0, 2.0, 3.0]).unwrap();
    let rs: Vec<f64> = pts.iter().map(|p| p.result.stats.as_ref().map_or(0.0, |s| s.circular_resultant_r)).collect();
    let monotone = rs.windows(2).all(|w| w[1] < w[0]);
    let clean = pts.iter().all(|p| p.result.status == ResultStatus::Ok && !p.result.saturated);
    let shown: Vec<String> = rs.iter().map(|r| format!("{r:.3}")).collect();
    outcome(monotone && clean, format!("r at 0/1/2/3x = [{}], saturation-free {clean}", shown.join(", ")))
}

fn c6_features() -> Outcome {
    let t = Instant::now();
    let rep = correlation_experiment(&RunConfig::default(), &CorrelationSweep::default()).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let mut pass = secs <= 120.0;
    let mut parts = Vec::new();
    for name in ["PLV", "PAC"] {
        let f = rep.get(name).unwrap();
        let r = f.correlation.r.unwrap_or(f64::NAN);
        pass &= f.windows >= 200 && r >= 0.95;
        parts.push(format!("{name} r {r:.4} over {}", f.windows));
    }
    outcome(pass, format!("{}, {secs:.1}s", parts.join("; ")))
}

fn c7_charge() -> Outcome {
    let params = StimPulseParams { w_anodic_us: 150, ..Default::default() };
    let e = ElectrodeState::default();
    let interval = 1e6 / 6.0;
    let open = pulse_train(&params, &e, 40, interval, false).unwrap();
    let closed_form = params.i_cathodic_ua * 1e-6 * (params.w_anodic_us - params.w_cathodic_us) as f64 * 1e-6 / e.c_f;
    let open_mv = open.last().unwrap().residual_v * 1e3;
    let ok_open = (open_mv - 15.15).abs() <= 0.2 && (open_mv - closed_form * 1e3).abs() < 1e-6;

    let cb = pulse_train(&params, &e, 400, interval, true).unwrap();
    let first = cb.iter().position(|p| p.residual_v.abs() < 4e-3);
    let held = first.is_some_and(|k| cb[k..].iter().all(|p| p.residual_v.abs() < 4e-3));
    let ok_cb = first.is_some_and(|k| k < 20) && held;
    outcome(
        ok_open && ok_cb && e.r_s_ohm == 5e3 && e.c_f == 330e-9,
        format!(
            "open-loop residual {open_mv:.3} mV; balanced inside 4 mV from pulse {:?}, held {held}, final {:.3} mV at {} uA",
            first,
            cb.last().unwrap().residual_v * 1e3,
            cb.last().unwrap().i_anodic_ua
        ),
    )
}

fn adversarial(rng: &mut ChaCha8Rng, n: usize) -> Vec<PhaseCode> {
    let mut c: i32 = rng.random_range(-512..512);
    (0..n)
        .map(|_| {
            c += match rng.random_range(0..10) {
                // half-turn jumps straddle the ±π seam
                0 => 512 + rng.random_range(-40..40),
                1 => -rng.random_range(0..20),
                _ => rng.random_range(0..60),
            };
            PhaseCode::wrap(c)
        })
        .collect()
}

fn c8_rate_and_wrap() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let phases = adversarial(&mut rng, 1_000_000);
    let mut total = 0;
    let mut short = 0;
    let mut wrap = 0;
    for mode in [StimMode::SamplePhase, StimMode::RandomPhase] {
        for target in [-512, -300, 0, 256, 511] {
            let cfg = StimConfig {
                mode,
                target_phase_deg: target as f64 * 360.0 / 1024.0,
                blank_duration_samples: 0,
                ..StimConfig::default()
            };
            let mut eng = TriggerEngine::with_params(&cfg, 1000.0, 0.0, 6.0).unwrap();
            let mut last: Option<u64> = None;
            for (t, &p) in phases.iter().enumerate() {
                if eng.on_sample(t as u64, p, Q15::ZERO, false).is_some() {
                    total += 1;
                    if last.is_some_and(|l| (t as u64) - l < 167) {
                        short += 1;
                    }
                    last = Some(t as u64);
                    let step = p.wrapping_sub(phases[t - 1]).code();
                    if step <= 0 || step >= MAX_PHASE_STEP {
                        wrap += 1;
                    }
                }
            }
        }
    }
    outcome(
        short == 0 && wrap == 0 && total > 0,
        format!("{total} triggers over 10 configs x 1e6 samples, {short} intervals < 167, {wrap} on wrap jumps"),
    )
}

fn c9_linf() -> Outcome {
    let lut = TrigLut::build();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut violations = 0;
    let mut value_mismatch = 0;
    for w in 0..10_000 {
        let log2 = rng.random_range(4..=10u32);
        let n = 1usize << log2;
        // a random lock strength so the windows span the whole [0, 1] range
        let spread: f64 = rng.random_range(0.0..PI);
        let base: f64 = rng.random_range(-PI..PI);
        let a: Vec<PhaseCode> = (0..n).map(|_| PhaseCode::from_radians(rng.random_range(-PI..PI))).collect();
        let sums = if w % 2 == 0 {
            let b: Vec<PhaseCode> = a
                .iter()
                .map(|p| PhaseCode::from_radians(p.radians() + base + rng.random_range(-spread..=spread)))
                .collect();
            let (v, s) = plv_window_sums(&a, &b, &lut).unwrap();
            let expect = ((s.linf() as f64) * 128.0 / n as f64).round_ties_even() as i64;
            value_mismatch += (v.0 as i64 != expect.min(UQ15::ONE.0 as i64)) as usize;
            s
        } else {
            let env: Vec<Q15> = a
                .iter()
                .map(|p| {
                    let m = 1.0 + (spread / PI) * (p.radians() - base).cos();
                    Q15((m * rng.random_range(2000.0..15000.0)) as i16)
                })
                .collect();
            pac_window_sums(&a, &env, &lut).unwrap().1
        };
        let linf = sums.linf() as i128;
        let e2 = (sums.s_cos as i128).pow(2) + (sums.s_sin as i128).pow(2);
        // euclid/√2 ≤ linf ≤ euclid, squared and exact
        if !(linf * linf <= e2 && e2 <= 2 * linf * linf) {
            violations += 1;
        }
    }
    outcome(
        violations == 0 && value_mismatch == 0,
        format!("10000 windows, {violations} bound violations, {value_mismatch} PLV words off the l-inf value"),
    )
}

fn run_cli(cfg_path: &Path, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_neurolock"))
        .args(["run", "--config"])
        .arg(cfg_path)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn c10_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = full_load_config(3.0, 10);
    cfg.emit_stim_trace = true;
    let cfg_path = dir.path().join("run.json");
    std::fs::write(&cfg_path, cfg.to_json()).unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    if !(run_cli(&cfg_path, &a) && run_cli(&cfg_path, &b)) {
        return outcome(false, "neurolock run exited with an error");
    }
    let names = ["features.csv", "phases.csv", "triggers.csv", "stim_trace.csv", "summary.json"];
    let differing: Vec<&str> = names
        .iter()
        .copied()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok() || !a.join(n).exists())
        .collect();
    outcome(differing.is_empty(), format!("{} artifacts compared, differing or missing: {differing:?}", names.len()))
}

fn c11_throughput() -> Outcome {
    let cfg = full_load_config(20.0, 11);
    let rec = synthesize(&cfg).unwrap();
    let t = measure_throughput(&cfg, &rec).unwrap();
    outcome(
        t.samples_per_s >= 400_000.0 && t.real_time_factor >= 100.0,
        format!(
            "{:.3e} samples/s aggregate, {:.0}x real time, {} triggers, {} feature windows",
            t.samples_per_s, t.real_time_factor, t.summary.triggers, t.summary.feature_records
        ),
    )
}

fn main() {
    let criteria: [Criterion; 12] = [
        ("1  LPE last-bit accuracy", c1_lpe),
        ("2  CORDIC parity", c2_cordic),
        ("3  group delay", c3_delay),
        ("4a phase lock, compensated", c4a_compensated),
        ("4b phase lock, uncompensated", c4b_uncompensated),
        ("5  noise tolerance", c5_noise),
        ("6  feature fidelity", c6_features),
        ("7  charge balancing", c7_charge),
        ("8  rate limit and wrap rejection", c8_rate_and_wrap),
        ("9  l-inf bias bound", c9_linf),
        ("10 determinism", c10_determinism),
        ("11 throughput", c11_throughput),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let o = f();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
