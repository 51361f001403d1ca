use std::f64::consts::PI;

use nalgebra::DMatrix;
use snswf::pipeline::*;
use snswf::signals::{synth_background, ChannelMeta, MultichannelRecord, NoiseLevel};
use snswf::spectral::SpectralConfig;

mod common;
use common::oracles::*;

const FS: f64 = 20.0;

fn tone(f_cpm: f64, n: usize, phase: f64) -> Vec<f64> {
    (0..n)
        .map(|i| (2.0 * PI * f_cpm / 60.0 * i as f64 / FS + phase).cos())
        .collect()
}

fn white(std: f64, n: usize, seed: u64, stream: u64) -> Vec<f64> {
    synth_background(
        NoiseLevel {
            white_std: std,
            pink_std: 0.0,
        },
        1.0,
        n,
        FS,
        seed,
        stream,
    )
}

fn add(a: &[f64], b: &[f64], k: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + k * y).collect()
}

/// Primary `sg` followed by references `R1..`.
fn record(d: Vec<f64>, refs: Vec<Vec<f64>>) -> MultichannelRecord {
    let mut channels = vec![ChannelMeta::derived("sg")];
    channels.extend((1..=refs.len()).map(|i| ChannelMeta::derived(format!("R{i}"))));
    let mut data = vec![d];
    data.extend(refs);
    MultichannelRecord::new(FS, channels, data).unwrap()
}

fn ref_names(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("R{i}")).collect()
}

fn run(rec: &MultichannelRecord, method: Method) -> DenoiseOutcome {
    let names = ref_names(rec.n_channels() - 1);
    let refs: Vec<&str> = names.iter().map(String::as_str).collect();
    run_denoise(
        rec,
        "sg",
        &refs,
        &PipelineConfig::for_sample_rate(FS),
        method,
    )
    .unwrap()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Four components: a 10 cpm tone (lowest SNR), a 62 cpm tone with a weak
/// 3 cpm trace (SNR below 0 dB), a clean 3 cpm tone, and a balanced mix.
fn component_fixture(n: usize) -> DMatrix<f64> {
    let rows = [
        add(
            &add(&tone(10.0, n, 0.2), &tone(3.0, n, 0.0), 0.001),
            &white(0.01, n, 1, 0),
            1.0,
        ),
        add(
            &add(&tone(62.0, n, 0.5), &tone(3.0, n, 0.0), 0.02),
            &white(0.01, n, 1, 1),
            1.0,
        ),
        add(&tone(3.0, n, 0.9), &white(0.01, n, 1, 2), 1.0),
        add(
            &add(&tone(3.0, n, 0.1), &tone(20.0, n, 0.0), 0.9),
            &white(0.01, n, 1, 3),
            1.0,
        ),
    ];
    DMatrix::from_fn(rows.len(), n, |i, t| rows[i][t])
}

#[test]
fn selection_follows_the_rule() {
    let policy = SelectionPolicy::for_sample_rate(FS);
    let analysis = assess_sources(
        &component_fixture(2400),
        FS,
        &policy,
        &SpectralConfig::default(),
    )
    .unwrap();
    let a = &analysis.assessments;
    assert_eq!(analysis.selected(), vec![0, 1]);
    assert_eq!(a[0].selection_reason, SelectionReason::LowestSnr);
    assert_eq!(a[1].selection_reason, SelectionReason::HighFrequencyNoise);
    assert!((a[1].main_noise_peak_cpm.unwrap() - 62.0).abs() <= 0.2);
    assert!(a[1].snr_db.unwrap() <= 0.0);
    assert!(a[2].snr_db.unwrap() > 20.0);
    assert!(!a[2].selected);
    assert_eq!(a[2].selection_reason, SelectionReason::NotSelected);
}

#[test]
fn selection_ignores_component_scale() {
    let policy = SelectionPolicy::for_sample_rate(FS);
    let spectral = SpectralConfig::default();
    let base = component_fixture(2400);
    let want = assess_sources(&base, FS, &policy, &spectral)
        .unwrap()
        .selected();
    for row in 0..base.nrows() {
        let mut scaled = base.clone();
        scaled.row_mut(row).scale_mut(10.0);
        assert_eq!(
            assess_sources(&scaled, FS, &policy, &spectral)
                .unwrap()
                .selected(),
            want
        );
    }
}

#[test]
fn selection_follows_component_permutation() {
    let policy = SelectionPolicy::for_sample_rate(FS);
    let spectral = SpectralConfig::default();
    let base = component_fixture(2400);
    let want = assess_sources(&base, FS, &policy, &spectral)
        .unwrap()
        .selected();
    let perm = [2, 3, 1, 0]; // new row i holds old row perm[i]
    let permuted = DMatrix::from_fn(4, base.ncols(), |i, t| base[(perm[i], t)]);
    let mut got: Vec<usize> = assess_sources(&permuted, FS, &policy, &spectral)
        .unwrap()
        .selected()
        .into_iter()
        .map(|i| perm[i])
        .collect();
    got.sort();
    let mut want = want;
    want.sort();
    assert_eq!(got, want);
}

/// References carry the noise tone but no signal: both methods should land
/// at about the same output SNR.
#[test]
fn uncontaminated_references_give_no_improvement() {
    let n = 12_000;
    let s = tone(3.0, n, 0.0);
    let noise = tone(0.3, n, 0.4);
    let d = add(&add(&s, &noise, 1.0), &white(0.02, n, 3, 0), 1.0);
    let refs: Vec<Vec<f64>> = (0..4)
        .map(|i| add(&white(0.05, n, 3, i + 1), &noise, 0.5 + 0.2 * i as f64))
        .collect();
    let out = run(&record(d, refs), Method::Both);
    let r = &out.report;
    let improvement = r.improvement_db.unwrap();
    assert!(
        improvement.abs() <= 3.0,
        "improvement {improvement} dB, report {r:?}"
    );
    assert!(r.classic_snr_db.unwrap() > r.raw_snr_db);
}

#[test]
fn noise_free_primary_passes_through() {
    // the references keep independent backgrounds so separation is defined;
    // the long record keeps chance correlations with them small
    let n = 12_000;
    let s = tone(3.0, n, 0.0);
    let refs: Vec<Vec<f64>> = (0..2).map(|i| white(0.1, n, 5, i)).collect();
    let out = run(&record(s.clone(), refs), Method::Both);
    for y in [
        &out.classic.as_ref().unwrap().denoised,
        &out.snswf.as_ref().unwrap().denoised,
    ] {
        let c = corr(y, &s);
        assert!(c >= 0.99, "correlation {c}");
    }
}

#[test]
fn null_references_leave_the_primary_alone() {
    let n = 12_000;
    let d = add(&tone(3.0, n, 0.0), &white(0.5, n, 7, 0), 1.0);
    let refs: Vec<Vec<f64>> = (0..2).map(|i| white(1.0, n, 7, i + 1)).collect();
    let out = run(&record(d.clone(), refs), Method::Classic);
    let y = &out.classic.unwrap().denoised;
    let ratio = rms(y) / rms(&demeaned(&d));
    assert!((ratio - 1.0).abs() <= 0.01, "rms ratio {ratio}");
}

#[test]
fn pure_noise_reference_cancels_the_noise_tone() {
    let n = 2400;
    let noise = tone(12.0, n, 0.3);
    let d = add(
        &add(&tone(3.0, n, 0.0), &noise, 2.0),
        &white(0.01, n, 8, 0),
        1.0,
    );
    let refs = vec![
        add(&noise, &white(0.01, n, 8, 1), 1.0),
        add(&noise, &white(0.01, n, 8, 2), 0.7),
    ];
    let out = run(&record(d.clone(), refs), Method::Classic);
    let y = out.classic.unwrap().denoised;
    let f = 12.0 / 60.0 / FS;
    let drop = 10.0 * (tone_power(&d[40..], f) / tone_power(&y[40..], f)).log10();
    assert!(drop >= 20.0, "suppression {drop} dB");
}

#[test]
fn report_arithmetic_and_determinism() {
    let n = 2400;
    let s = tone(3.0, n, 0.0);
    let noise = tone(0.3, n, 0.4);
    let d = add(&add(&s, &noise, 1.0), &white(0.02, n, 9, 0), 1.0);
    let refs: Vec<Vec<f64>> = (0..3)
        .map(|i| add(&add(&white(0.05, n, 9, i + 1), &noise, 1.0), &s, 0.1))
        .collect();
    let rec = record(d, refs);
    let a = run(&rec, Method::Both).report;
    let b = run(&rec, Method::Both).report;
    assert_eq!(format!("{a:?}"), format!("{b:?}"));
    assert_eq!(
        a.improvement_db.unwrap(),
        a.snswf_snr_db.unwrap() - a.classic_snr_db.unwrap()
    );
    assert_eq!(a.schema_version, REPORT_SCHEMA_VERSION);

    let classic_only = run(&rec, Method::Classic).report;
    assert!(classic_only.snswf_snr_db.is_none() && classic_only.improvement_db.is_none());
    assert_eq!(classic_only.classic_snr_db, a.classic_snr_db);
}

/// Signal and noise enter the references along different spatial patterns,
/// so separation can isolate the noise and avoid cancelling the signal.
#[test]
fn separable_contamination_favours_the_separated_filter() {
    let n = 2400;
    let s = tone(3.0, n, 0.0);
    let noise = tone(40.0, n, 0.6);
    let d = add(&add(&s, &noise, 2.0), &white(0.02, n, 10, 0), 1.0);
    let sig_pattern = [1.0, -0.5, 0.3, 0.8, -0.2, 0.6];
    let noise_pattern = [0.2, 0.9, -0.7, 0.1, 1.0, -0.4];
    let refs: Vec<Vec<f64>> = (0..6)
        .map(|i| {
            let r = add(&white(0.05, n, 10, i as u64 + 1), &s, sig_pattern[i]);
            add(&r, &noise, noise_pattern[i])
        })
        .collect();
    let r = run(&record(d, refs), Method::Both).report;
    assert!(r.improvement_db.unwrap() >= 10.0, "{r:?}");
}
