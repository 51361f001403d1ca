use std::f64::consts::PI;

use proptest::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use snswf::signals::*;

fn correlation(a: &[f64], b: &[f64]) -> f64 {
    let a = demean_series(a);
    let b = demean_series(b);
    let ab: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    let aa: f64 = a.iter().map(|x| x * x).sum();
    let bb: f64 = b.iter().map(|x| x * x).sum();
    ab / (aa * bb).sqrt()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

#[test]
fn csv_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("rec.csv");
    let rec = synth_simulation(&SimulationConfig {
        duration_s: 10.0,
        seed: 4,
        ..Default::default()
    })
    .unwrap();
    save_csv(&rec, &path).unwrap();
    let back = load_csv(&path).unwrap();
    assert_eq!(back.data(), rec.data());
    assert_eq!(back.sample_rate_hz(), 20.0);
    let names: Vec<_> = back.channels().iter().map(|c| c.name.clone()).collect();
    assert_eq!(names[0], "sg");
    assert_eq!(names[8], "R8");

    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.lines().nth(1).unwrap().starts_with("time,sg,R1"));
}

#[test]
fn missing_file_is_io_error() {
    assert!(matches!(
        load_csv("/nonexistent/rec.csv"),
        Err(snswf::Error::Io(_))
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_bit_exact(values in proptest::collection::vec(-1e12f64..1e12, 4..40), rate in 0.5f64..2000.0) {
        let half = values.len() / 2;
        let rec = MultichannelRecord::new(
            rate,
            vec![ChannelMeta::derived("a"), ChannelMeta::derived("b")],
            vec![values[..half].to_vec(), values[half..2 * half].to_vec()],
        );
        prop_assume!(rec.is_ok());
        let rec = rec.unwrap();
        let back = parse_csv(&to_csv_string(&rec), None).unwrap();
        prop_assert_eq!(back.data(), rec.data());
    }

    #[test]
    fn demean_is_idempotent(values in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
        let rec = MultichannelRecord::new(1.0, vec![ChannelMeta::derived("x")], vec![values.clone()]).unwrap();
        let once = demean(&rec);
        let twice = demean(&once);
        let peak = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(mean(&once.data()[0]).abs() <= 1e-12 * peak.max(1.0));
        for (a, b) in once.data()[0].iter().zip(&twice.data()[0]) {
            prop_assert!((a - b).abs() <= 1e-12 * peak.max(1.0));
        }
    }
}

#[test]
fn decimate_matches_direct_synthesis() {
    // 60 s of a 0.05 Hz sinusoid at 1 kHz, decimated to 20 Hz
    let f = 0.05;
    let fast: Vec<f64> = (0..60_000)
        .map(|i| (2.0 * PI * f * i as f64 / 1000.0).sin())
        .collect();
    let rec = MultichannelRecord::new(1000.0, vec![ChannelMeta::derived("x")], vec![fast]).unwrap();
    let out = decimate(&rec, 50).unwrap();
    assert_eq!(out.sample_rate_hz(), 20.0);
    assert_eq!(out.n_samples(), 1200);
    let direct: Vec<f64> = (0..1200)
        .map(|i| (2.0 * PI * f * i as f64 / 20.0).sin())
        .collect();
    assert!(correlation(&out.data()[0], &direct) >= 0.999);
}

#[test]
fn decimate_rejects_tones_above_new_nyquist() {
    // 15 Hz is far above the 10 Hz Nyquist of a 20 Hz output
    let fast: Vec<f64> = (0..20_000)
        .map(|i| (2.0 * PI * 15.0 * i as f64 / 1000.0).sin())
        .collect();
    let rec = MultichannelRecord::new(1000.0, vec![ChannelMeta::derived("x")], vec![fast]).unwrap();
    let out = decimate(&rec, 50).unwrap();
    assert!(rms(&out.data()[0][20..380]) < 0.01);
}

/// Least-squares slope of log periodogram against log frequency over
/// `[lo, hi]` Hz.
fn periodogram_slope(x: &[f64], rate: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let pts: Vec<(f64, f64)> = (1..n / 2)
        .map(|k| (k as f64 * rate / n as f64, buf[k].norm_sqr()))
        .filter(|(f, _)| *f >= lo && *f <= hi)
        .map(|(f, p)| (f.ln(), p.ln()))
        .collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[test]
fn pink_background_has_unit_slope() {
    let level = NoiseLevel {
        white_std: 0.0,
        pink_std: 1.0,
    };
    for seed in 0..3 {
        let x = synth_background(level, 1.0, 16_384, 20.0, seed, 0);
        let slope = periodogram_slope(&x, 20.0, 0.2, 2.0);
        assert!((-1.4..=-0.6).contains(&slope), "seed {seed}: slope {slope}");
        assert!((rms(&x) - 1.0).abs() < 1e-9);
    }
}

#[test]
fn white_background_is_flat() {
    let level = NoiseLevel {
        white_std: 2.0,
        pink_std: 0.0,
    };
    let x = synth_background(level, 1.0, 16_384, 20.0, 1, 0);
    assert!(periodogram_slope(&x, 20.0, 0.2, 2.0).abs() < 0.2);
    assert!((rms(&x) - 2.0).abs() < 0.05);
}

#[test]
fn magnetometer_references_are_ten_times_gradiometers() {
    let mut cfg = SimulationConfig::default();
    let pink = |std: f64| NoiseLevel {
        white_std: 0.0,
        pink_std: std,
    };
    cfg.background.signal_gradiometer = NoiseLevel::ZERO;
    cfg.background.magnetometer = pink(0.5);
    cfg.background.tensor_gradiometer = pink(0.05);
    let rec = synth_simulation(&cfg).unwrap();
    let mags: f64 = REFERENCE_CHANNELS[..3]
        .iter()
        .map(|c| rms(rec.channel(c).unwrap()))
        .sum::<f64>()
        / 3.0;
    let grads: f64 = REFERENCE_CHANNELS[3..]
        .iter()
        .map(|c| rms(rec.channel(c).unwrap()))
        .sum::<f64>()
        / 5.0;
    let ratio = mags / grads;
    assert!((ratio - 10.0).abs() <= 2.0, "ratio {ratio}");
}

#[test]
fn simulation_is_seeded_and_tones_are_seed_independent() {
    let a = synth_simulation(&SimulationConfig {
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let b = synth_simulation(&SimulationConfig {
        seed: 1,
        ..Default::default()
    })
    .unwrap();
    let c = synth_simulation(&SimulationConfig {
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);

    // the difference of two seeds is exactly the difference of backgrounds
    let cfg = SimulationConfig::default();
    let n = cfg.n_samples();
    for (stream, ch) in a.channels().iter().enumerate() {
        let level = cfg.background.level(ch.kind);
        let bg1 = synth_background(level, 1.0, n, 20.0, 1, stream as u64);
        let bg2 = synth_background(level, 1.0, n, 20.0, 2, stream as u64);
        let da = a.channel(&ch.name).unwrap();
        let dc = c.channel(&ch.name).unwrap();
        for i in 0..n {
            assert!(((da[i] - dc[i]) - (bg1[i] - bg2[i])).abs() < 1e-12);
        }
    }
}

#[test]
fn simulation_layout() {
    let rec = synth_simulation(&SimulationConfig::default()).unwrap();
    let kinds: Vec<_> = rec.channels().iter().map(|c| c.kind).collect();
    assert_eq!(kinds[0], ChannelKind::SignalGradiometer);
    assert!(kinds[1..4].iter().all(|k| *k == ChannelKind::Magnetometer));
    assert!(kinds[4..]
        .iter()
        .all(|k| *k == ChannelKind::TensorGradiometer));
    assert_eq!(rec.duration_s(), 120.0);
}
