use neurolock::config::{RunConfig, SimulationSpec, SourceSpec};
use neurolock::connectivity::{FeatureKind, FeatureWindowRecord, PairFeature, PairSpec};
use neurolock::fixed::UQ15;
use neurolock::io::{self, EventRecord, PhaseRow, PhaseWriter, Recording};
use neurolock::pipeline::{feature_value, run_closed_loop, run_offline, synthesize};
use neurolock::signal::{CoupledKind, CoupledParams, FrontendConfig};
use neurolock::stimulator::StimTracePoint;
use neurolock::trigger::{StimConfig, StimMode};
use neurolock::{PhaseCode, N_CHANNELS};
use proptest::prelude::*;

fn coupled_config(kind: CoupledKind, f_low: f64, duration_s: f64) -> RunConfig {
    RunConfig {
        pairs: vec![
            PairSpec { id: 0, ch_a: 0, ch_b: 1, feature: PairFeature::Plv },
            PairSpec { id: 1, ch_a: 0, ch_b: 2, feature: PairFeature::Pac },
        ],
        simulation: Some(SimulationSpec {
            duration_s,
            sources: vec![SourceSpec::Coupled {
                channels: [0, 1],
                kind,
                params: CoupledParams { f_low_hz: f_low, noise_rms_v: 5e-5, ..CoupledParams::default() },
            }],
        }),
        seed: 11,
        ..RunConfig::default()
    }
}

fn no_phases(_: u64, _: &[PhaseCode; N_CHANNELS]) -> neurolock::Result<()> {
    Ok(())
}

#[test]
fn zero_input_gives_zero_features_and_no_triggers() {
    let cfg = RunConfig {
        frontend: FrontendConfig::ideal(),
        pairs: vec![
            PairSpec { id: 0, ch_a: 0, ch_b: 1, feature: PairFeature::Plv },
            PairSpec { id: 1, ch_a: 2, ch_b: 3, feature: PairFeature::Pac },
        ],
        stim: vec![
            StimConfig::default(),
            StimConfig { mode: StimMode::SampleEnv, stim_channel: 1, env_threshold: 0.01, ..StimConfig::default() },
            StimConfig { mode: StimMode::RandomPhase, stim_channel: 2, ..StimConfig::default() },
        ],
        ..RunConfig::default()
    };
    let rec = Recording { rate_hz: 4000.0, channels: vec![vec![0.0; 4 * 4096]; N_CHANNELS] };
    let out = run_closed_loop(&cfg, &rec, no_phases).unwrap();
    assert!(out.events.is_empty());
    assert_eq!(out.summary.windows, 4);
    // PLV + PAC + PAC_RAW + 16 SE per window
    assert_eq!(out.features.len(), 4 * 19);
    assert!(out.features.iter().all(|r| r.value == UQ15::ZERO), "{:?}", out.features);
    assert_eq!(out.summary.degenerate_pac_windows, 4);
    assert!(!out.summary.saturated);
}

#[test]
fn offline_artifacts_are_byte_identical() {
    let mut cfg = coupled_config(CoupledKind::PlvLocked, 6.0, 6.0);
    cfg.emit_stim_trace = true;
    cfg.stim = vec![StimConfig::default()];
    let rec = synthesize(&cfg).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run_offline(&cfg, &synthesize(&cfg).unwrap(), d.path()).unwrap();
    }
    assert_eq!(rec.channels, synthesize(&cfg).unwrap().channels);
    for name in ["features.csv", "phases.csv", "triggers.csv", "stim_trace.csv", "summary.json"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs");
    }
    let feats = io::read_features_file(&dirs[0].path().join("features.csv")).unwrap();
    assert_eq!(feats.len() as u64, 5 * 19);
    let summary: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dirs[0].path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["artifacts"].as_array().unwrap().len(), 4);
    assert_eq!(summary["lpe_lut_sha256"].as_str().unwrap().len(), 64);

    // A different front-end seed changes the noise and therefore the phases.
    let mut other = cfg.clone();
    other.frontend.seed ^= 1;
    let d = tempfile::tempdir().unwrap();
    run_offline(&other, &rec, d.path()).unwrap();
    assert_ne!(
        std::fs::read(d.path().join("phases.csv")).unwrap(),
        std::fs::read(dirs[0].path().join("phases.csv")).unwrap()
    );
}

#[test]
fn closed_loop_is_causal() {
    let mut cfg = coupled_config(CoupledKind::PlvLocked, 6.0, 4.0);
    cfg.window.n_samples = 256;
    cfg.stim = vec![StimConfig::default()];
    let rec = synthesize(&cfg).unwrap();
    let cut = 9001usize;
    let mut alt = rec.clone();
    for c in &mut alt.channels {
        for v in &mut c[cut..] {
            *v = -*v * 3.0 + 1e-4;
        }
    }
    let mut pa = Vec::new();
    let a = run_closed_loop(&cfg, &rec, |t, p| {
        pa.push((t, *p));
        Ok(())
    })
    .unwrap();
    let mut pb = Vec::new();
    let b = run_closed_loop(&cfg, &alt, |t, p| {
        pb.push((t, *p));
        Ok(())
    })
    .unwrap();

    let safe = |t: u64| 4 * t < cut as u64;
    let n_safe = pa.iter().filter(|(t, _)| safe(*t)).count();
    assert_eq!(pa[..n_safe], pb[..n_safe]);
    assert_ne!(pa[n_safe..], pb[n_safe..]);

    let early =
        |evs: &[neurolock::trigger::TriggerEvent]| evs.iter().filter(|e| safe(e.t_index)).cloned().collect::<Vec<_>>();
    assert!(!early(&a.events).is_empty());
    assert_eq!(early(&a.events), early(&b.events));

    let n = cfg.window.n_samples as u64;
    let early_feats = |f: &[FeatureWindowRecord]| {
        f.iter().filter(|r| safe((r.window_index + 1) * n - 1)).copied().collect::<Vec<_>>()
    };
    assert_eq!(early_feats(&a.features), early_feats(&b.features));

    // Blanking requested at decimated t never reaches back before input 4t.
    for (ev, &(start, dur)) in a.events.iter().zip(a.blanking.intervals()) {
        assert_eq!(start, 4 * ev.t_index);
        assert_eq!(dur, 4 * 10);
    }
}

/// The documented crossing rule, applied to the phases the pipeline saw.
fn expected_fires(phases: &[(u64, PhaseCode)], effective: PhaseCode, gate_from: u64, refractory: u64) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::new();
    for w in phases.windows(2) {
        let (t, cur) = w[1];
        let dp = w[0].1.wrapping_sub(effective).code();
        let dc = cur.wrapping_sub(effective).code();
        let crossed = dp < 0 && dc >= 0 && dc - dp < 256;
        if crossed && t >= gate_from && out.last().is_none_or(|&l| t >= l + refractory) {
            out.push(t);
        }
    }
    out
}

#[test]
fn combined_mode_on_locked_pair_follows_crossings() {
    for f_low in [4.5, 5.5, 6.0, 7.5] {
        let mut cfg = coupled_config(CoupledKind::PlvLocked, f_low, 12.0);
        cfg.stim = vec![StimConfig {
            mode: StimMode::Combined,
            window_kind: FeatureKind::Plv,
            window_source: 0,
            th_win_l: 0.5,
            ..StimConfig::default()
        }];
        let rec = synthesize(&cfg).unwrap();
        let mut phases = Vec::new();
        let out = run_closed_loop(&cfg, &rec, |t, p| {
            phases.push((t, p[0]));
            Ok(())
        })
        .unwrap();
        let plv = feature_value(&out.features, FeatureKind::Plv, 0);
        assert!(plv.iter().all(|&v| v > 0.9), "{plv:?}");
        let eff = out.events[0].effective_target;
        let n = cfg.window.n_samples as u64;
        let want = expected_fires(&phases, eff, n - 1, 167);
        let got: Vec<u64> = out.events.iter().map(|e| e.t_index).collect();
        assert_eq!(got, want, "f_low {f_low}");

        // Every k-th crossing survives the refractory interval, k = ceil(f·T).
        // At 6 Hz the crossing period straddles 167 samples, so k jitters.
        let span_s = (phases.len() as u64 - n) as f64 / 1000.0;
        let rate = got.len() as f64 / span_s;
        assert!(rate <= 6.0 + 1e-9);
        if f_low != 6.0 {
            let expect = f_low / (f_low * 0.167).ceil();
            assert!((rate - expect).abs() < 0.3, "f_low {f_low}: rate {rate} vs {expect}");
        }
        assert!(got.windows(2).all(|w| w[1] - w[0] >= 167));
        assert_eq!(out.summary.stim[0].counters.fired, got.len() as u64);
    }
}

#[test]
fn combined_mode_gate_blocks_independent_pair() {
    let mut cfg = coupled_config(CoupledKind::Independent, 6.0, 8.0);
    cfg.simulation.as_mut().unwrap().sources.push(SourceSpec::SinePink {
        channel: 0,
        amp_pp_v: 2e-3,
        freq_hz: 6.0,
        pink_rms_v: 0.0,
    });
    cfg.stim = vec![StimConfig {
        mode: StimMode::Combined,
        window_kind: FeatureKind::Plv,
        th_win_l: 0.5,
        ..StimConfig::default()
    }];
    let out = run_closed_loop(&cfg, &synthesize(&cfg).unwrap(), no_phases).unwrap();
    assert!(feature_value(&out.features, FeatureKind::Plv, 0).iter().all(|&v| v < 0.5));
    assert!(out.events.is_empty());
}

#[test]
fn window_feature_mode_fires_on_pac() {
    let mut cfg = coupled_config(CoupledKind::PacCoupled, 6.0, 6.0);
    cfg.bands =
        (0..16)
            .map(|ch| {
                if ch == 1 {
                    neurolock::fir::BandConfig::new(60.0, 100.0)
                } else {
                    neurolock::fir::BandConfig::theta()
                }
            })
            .collect();
    cfg.pairs = vec![PairSpec { id: 4, ch_a: 0, ch_b: 1, feature: PairFeature::Pac }];
    if let Some(SourceSpec::Coupled { params, .. }) = cfg.simulation.as_mut().unwrap().sources.first_mut() {
        params.m = 1.0;
    }
    cfg.stim = vec![StimConfig {
        mode: StimMode::WindowFeature,
        window_kind: FeatureKind::Pac,
        window_source: 4,
        th_win_l: 0.1,
        ..StimConfig::default()
    }];
    let out = run_closed_loop(&cfg, &synthesize(&cfg).unwrap(), no_phases).unwrap();
    let pac = feature_value(&out.features, FeatureKind::Pac, 4);
    let n = cfg.window.n_samples as u64;
    let want: Vec<u64> = (0..pac.len() as u64).filter(|&w| pac[w as usize] >= 0.1).map(|w| (w + 1) * n - 1).collect();
    assert!(!want.is_empty(), "{pac:?}");
    assert_eq!(out.events.iter().map(|e| e.t_index).collect::<Vec<_>>(), want);
    assert!(out.events.iter().all(|e| e.source == 4));
}

#[test]
fn blanked_windows_are_flagged() {
    let mut cfg = coupled_config(CoupledKind::PlvLocked, 6.0, 6.0);
    cfg.window.n_samples = 512;
    cfg.stim = vec![StimConfig::default()];
    let out = run_closed_loop(&cfg, &synthesize(&cfg).unwrap(), no_phases).unwrap();
    let n = cfg.window.n_samples as u64;
    let mut want: Vec<u64> = out
        .events
        .iter()
        .flat_map(|e| [e.t_index / n, (e.t_index + 9) / n])
        .filter(|&w| w < out.summary.windows)
        .collect();
    want.dedup();
    assert!(!want.is_empty());
    assert_eq!(out.summary.blanked_windows, want);
    assert_eq!(out.summary.blanked_input_samples, 40 * out.events.len() as u64);

    cfg.closed_loop_blanking = false;
    let open = run_closed_loop(&cfg, &synthesize(&cfg).unwrap(), no_phases).unwrap();
    assert!(open.summary.blanked_windows.is_empty());
    assert_eq!(open.summary.blanked_input_samples, 0);
}

#[test]
fn rate_mismatch_is_a_data_error() {
    let cfg = RunConfig::default();
    let rec = Recording { rate_hz: 1000.0, channels: vec![vec![0.0; 100]] };
    let e = run_closed_loop(&cfg, &rec, no_phases).unwrap_err();
    assert_eq!(e.exit_code(), 3);
}

fn kind_strategy() -> impl Strategy<Value = FeatureKind> {
    prop_oneof![Just(FeatureKind::Plv), Just(FeatureKind::Pac), Just(FeatureKind::PacRaw), Just(FeatureKind::Se)]
}

fn mode_strategy() -> impl Strategy<Value = StimMode> {
    prop_oneof![
        Just(StimMode::SamplePhase),
        Just(StimMode::SampleEnv),
        Just(StimMode::WindowFeature),
        Just(StimMode::Combined),
        Just(StimMode::RandomPhase)
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn features_roundtrip(recs in prop::collection::vec((any::<u64>(), any::<u8>(), kind_strategy(), 0u16..=32768), 0..40)) {
        let recs: Vec<FeatureWindowRecord> = recs
            .into_iter()
            .map(|(w, s, kind, v)| FeatureWindowRecord { window_index: w, source: s, kind, value: UQ15(v) })
            .collect();
        let mut buf = Vec::new();
        io::write_features(&mut buf, &recs).unwrap();
        prop_assert_eq!(io::read_features(&buf[..]).unwrap(), recs);
    }

    #[test]
    fn events_roundtrip(evs in prop::collection::vec((any::<u64>(), mode_strategy(), -512i32..512, prop::option::of(0u16..=32768), any::<u8>()), 0..40)) {
        let evs: Vec<EventRecord> = evs
            .into_iter()
            .map(|(t, mode, c, w, s)| EventRecord {
                t_index: t,
                mode,
                effective_target: PhaseCode::wrap(c),
                window_value: w.map(UQ15),
                source: s,
            })
            .collect();
        let mut buf = Vec::new();
        io::write_events(&mut buf, &evs).unwrap();
        prop_assert_eq!(io::read_events(&buf[..]).unwrap(), evs);
    }

    #[test]
    fn phases_roundtrip(rows in prop::collection::vec((any::<u64>(), prop::collection::vec(-512i32..512, 16)), 0..20)) {
        let rows: Vec<PhaseRow> = rows
            .into_iter()
            .map(|(t, c)| PhaseRow { t_index: t, codes: c.into_iter().map(PhaseCode::wrap).collect() })
            .collect();
        let mut buf = Vec::new();
        let mut w = PhaseWriter::new(&mut buf, 16).unwrap();
        for r in &rows {
            w.write(r.t_index, &r.codes).unwrap();
        }
        w.finish().unwrap();
        prop_assert_eq!(io::read_phases(&buf[..]).unwrap(), rows);
    }

    #[test]
    fn stim_trace_roundtrip(pts in prop::collection::vec((-1e9f64..1e9, -1e4f64..1e4, -1e5f64..1e5, -1e5f64..1e5), 0..40)) {
        let pts: Vec<StimTracePoint> = pts
            .into_iter()
            .map(|(t, i, v, c)| StimTracePoint { t_us: t, i_ua: i, v_out_mv: v, v_cap_mv: c })
            .collect();
        let mut buf = Vec::new();
        io::write_stim_trace(&mut buf, &pts).unwrap();
        prop_assert_eq!(io::read_stim_trace(&buf[..]).unwrap(), pts);
    }

    #[test]
    fn recording_roundtrip(ch in 1usize..5, samples in prop::collection::vec(-1.0f64..1.0, 2..64)) {
        let rec = Recording { rate_hz: 4000.0, channels: vec![samples.clone(); ch] };
        let mut buf = Vec::new();
        io::write_csv_recording(&mut buf, &rec).unwrap();
        prop_assert_eq!(io::read_csv_recording(&buf[..]).unwrap(), rec);
    }
}
