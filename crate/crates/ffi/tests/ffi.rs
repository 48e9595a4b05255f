use std::ffi::{CStr, CString};
use std::ptr;

use neurolock::experiments::full_load_config;
use neurolock::pipeline::{run_closed_loop, synthesize};
use neurolock::signal::{Afe, BlankingSchedule};
use neurolock::N_CHANNELS;
use neurolock_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as std::ffi::c_char; 256];
    let n = unsafe { nl_last_error(buf.as_mut_ptr(), buf.len()) };
    assert!(n > 0);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

fn code_distance(a: i16, b: i16) -> i32 {
    let d = (a as i32 - b as i32).rem_euclid(1024);
    d.min(1024 - d)
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(nl_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn kernels_agree_with_atan2() {
    let lpe = nl_lpe_new();
    assert!(!lpe.is_null());
    let mut a = NlPhase::default();
    let mut b = NlPhase::default();
    for re in (-32768i32..32768).step_by(997) {
        for im in (-32768i32..32768).step_by(1009) {
            let (re, im) = (re as i16, im as i16);
            unsafe {
                assert_eq!(nl_lpe_phase(lpe, re, im, &mut a), NlStatus::Ok);
                assert_eq!(nl_cordic_phase(re, im, &mut b), NlStatus::Ok);
            }
            let exact = ((im as f64).atan2(re as f64) / std::f64::consts::PI * 512.0).round() as i16;
            assert!(code_distance(a.code, exact) <= 1, "lpe ({re},{im})");
            assert!(code_distance(b.code, exact) <= 1, "cordic ({re},{im})");
        }
    }
    unsafe {
        assert_eq!(nl_lpe_phase(lpe, 0, 0, &mut a), NlStatus::Ok);
        assert!(a.degenerate);
        nl_lpe_free(lpe);
    }
}

#[test]
fn null_pointers_are_rejected() {
    let mut ph = NlPhase::default();
    let mut p: *mut NlPipeline = ptr::null_mut();
    unsafe {
        assert_eq!(nl_lpe_phase(ptr::null(), 1, 1, &mut ph), NlStatus::NullPointer);
        assert_eq!(nl_cordic_phase(1, 1, ptr::null_mut()), NlStatus::NullPointer);
        assert_eq!(nl_pipeline_new(ptr::null(), &mut p), NlStatus::NullPointer);
        let mut produced = false;
        assert_eq!(nl_pipeline_step(ptr::null_mut(), [0i16; 16].as_ptr(), false, &mut produced), NlStatus::NullPointer);
        assert_eq!(nl_stimulator_fire(ptr::null_mut(), 0.0, ptr::null_mut()), NlStatus::NullPointer);
        nl_pipeline_free(ptr::null_mut());
        nl_stimulator_free(ptr::null_mut());
    }
    assert!(p.is_null());
}

#[test]
fn bad_config_reports_a_message() {
    let json = CString::new(r#"{"no_such_key": 1}"#).unwrap();
    let mut p: *mut NlPipeline = ptr::null_mut();
    assert_eq!(unsafe { nl_pipeline_new(json.as_ptr(), &mut p) }, NlStatus::Config);
    assert!(p.is_null());
    assert!(!last_error().is_empty());

    let broken = CString::new("{").unwrap();
    assert_eq!(unsafe { nl_pipeline_new(broken.as_ptr(), &mut p) }, NlStatus::Config);
}

#[test]
fn streaming_matches_the_rust_closed_loop() {
    let cfg = full_load_config(3.0, 7);
    let rec = synthesize(&cfg).unwrap();
    let want = run_closed_loop(&cfg, &rec, |_, _| Ok(())).unwrap();
    assert!(!want.events.is_empty() && !want.features.is_empty());

    let json = CString::new(cfg.to_json()).unwrap();
    let mut p: *mut NlPipeline = ptr::null_mut();
    assert_eq!(unsafe { nl_pipeline_new(json.as_ptr(), &mut p) }, NlStatus::Ok);

    let mut afe = Afe::new(&cfg.frontend).unwrap();
    let mut sched = BlankingSchedule::new();
    let mut events = Vec::new();
    let mut features = Vec::new();
    let mut decimated = 0;
    let mut volts = [0.0; N_CHANNELS];
    for n in 0..rec.len() {
        for (ch, c) in rec.channels.iter().enumerate() {
            volts[ch] = c[n];
        }
        let blanked = sched.contains(n as u64);
        let frame = afe.digitize(&volts, blanked);
        let mut produced = false;
        assert_eq!(unsafe { nl_pipeline_step(p, frame.codes.as_ptr(), blanked, &mut produced) }, NlStatus::Ok);
        decimated += produced as usize;

        let mut b = NlBlanking::default();
        while unsafe { nl_pipeline_next_blanking(p, &mut b) } == NlStatus::Ok {
            sched.add(b.start, b.duration);
        }
        let mut e = std::mem::MaybeUninit::<NlTriggerEvent>::uninit();
        while unsafe { nl_pipeline_next_event(p, e.as_mut_ptr()) } == NlStatus::Ok {
            events.push(unsafe { e.assume_init() });
        }
        let mut f = std::mem::MaybeUninit::<NlFeature>::uninit();
        while unsafe { nl_pipeline_next_feature(p, f.as_mut_ptr()) } == NlStatus::Ok {
            features.push(unsafe { f.assume_init() });
        }
    }
    assert_eq!(decimated, rec.len() / 4);

    let mut phases = [0i16; 16];
    assert_eq!(unsafe { nl_pipeline_phases(p, phases.as_mut_ptr()) }, NlStatus::Ok);
    unsafe { nl_pipeline_free(p) };

    let want_events: Vec<NlTriggerEvent> = want.events.iter().map(NlTriggerEvent::from).collect();
    let want_features: Vec<NlFeature> = want.features.iter().map(NlFeature::from).collect();
    assert_eq!(events, want_events);
    assert_eq!(features, want_features);
    assert_eq!(sched.intervals(), want.blanking.intervals());
}

#[test]
fn stimulator_balances_charge() {
    let pulse = CString::new(r#"{"w_anodic_us": 150}"#).unwrap();
    let interval_us = 1e6 / 6.0;
    let run = |cb: bool| {
        let mut s: *mut NlStimulator = ptr::null_mut();
        assert_eq!(unsafe { nl_stimulator_new(pulse.as_ptr(), ptr::null(), cb, &mut s) }, NlStatus::Ok);
        let out: Vec<NlPulse> = (0..60)
            .map(|k| {
                let mut r = NlPulse::default();
                assert_eq!(unsafe { nl_stimulator_fire(s, k as f64 * interval_us, &mut r) }, NlStatus::Ok);
                r
            })
            .collect();
        unsafe { nl_stimulator_free(s) };
        out
    };
    let open = run(false);
    // 100 µA over the 50 µs excess anodic width into 330 nF
    assert!(open.iter().all(|r| (r.residual_v - 100e-6 * 50e-6 / 330e-9).abs() < 1e-9));
    let balanced = run(true);
    let first = balanced.iter().position(|r| r.residual_v.abs() < 4e-3).unwrap();
    assert!(first < 20);
    assert!(balanced[first..].iter().all(|r| r.residual_v.abs() < 4e-3));
    assert!(balanced.last().unwrap().i_anodic_ua < 100.0);
}

#[test]
fn bad_stimulator_json_is_a_config_error() {
    let bad = CString::new(r#"{"w_anodic_us": "wide"}"#).unwrap();
    let mut s: *mut NlStimulator = ptr::null_mut();
    assert_eq!(unsafe { nl_stimulator_new(bad.as_ptr(), ptr::null(), true, &mut s) }, NlStatus::Config);
    assert!(s.is_null());
    assert!(!last_error().is_empty());
}
