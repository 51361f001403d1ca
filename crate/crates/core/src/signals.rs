//! Multichannel time series container, CSV I/O, preprocessing and the
//! synthetic gastric-recording scenario generator.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::units::cpm_to_hz;

/// Relative tolerance on sample spacing when reading a time column.
const GRID_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelKind {
    SignalGradiometer,
    Magnetometer,
    TensorGradiometer,
    Derived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMeta {
    pub name: String,
    pub kind: ChannelKind,
    pub units: String,
}

impl ChannelMeta {
    pub fn new(name: impl Into<String>, kind: ChannelKind, units: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind,
            units: units.into(),
        }
    }

    pub fn derived(name: impl Into<String>) -> Self {
        Self::new(name, ChannelKind::Derived, "arb")
    }
}

/// Uniformly sampled multichannel recording, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelRecord {
    sample_rate_hz: f64,
    channels: Vec<ChannelMeta>,
    data: Vec<Vec<f64>>,
}

impl MultichannelRecord {
    pub fn new(
        sample_rate_hz: f64,
        channels: Vec<ChannelMeta>,
        data: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return invalid(format!(
                "sample rate must be positive, got {sample_rate_hz}"
            ));
        }
        if channels.is_empty() {
            return invalid("record needs at least one channel");
        }
        if channels.len() != data.len() {
            return invalid(format!(
                "{} channel descriptors for {} data rows",
                channels.len(),
                data.len()
            ));
        }
        let mut names = HashSet::new();
        for ch in &channels {
            if ch.name.is_empty() {
                return invalid("channel names must be nonempty");
            }
            if !names.insert(ch.name.as_str()) {
                return invalid(format!("duplicate channel name '{}'", ch.name));
            }
        }
        let n = data[0].len();
        if n < 2 {
            return invalid(format!("record needs at least 2 samples, got {n}"));
        }
        for (ch, row) in channels.iter().zip(&data) {
            if row.len() != n {
                return invalid(format!(
                    "channel '{}' has {} samples, expected {n}",
                    ch.name,
                    row.len()
                ));
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return invalid(format!(
                    "channel '{}' has a non-finite sample at index {i}",
                    ch.name
                ));
            }
        }
        Ok(Self {
            sample_rate_hz,
            channels,
            data,
        })
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn channels(&self) -> &[ChannelMeta] {
        &self.channels
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn n_samples(&self) -> usize {
        self.data[0].len()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sample_rate_hz
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        self.channel_index(name).map(|i| self.data[i].as_slice())
    }

    /// Sample times in seconds, starting at zero.
    pub fn times(&self) -> Vec<f64> {
        (0..self.n_samples())
            .map(|i| i as f64 / self.sample_rate_hz)
            .collect()
    }

    /// Copy of the named channels, in the order given.
    pub fn select(&self, names: &[&str]) -> Result<Self> {
        let mut channels = Vec::with_capacity(names.len());
        let mut data = Vec::with_capacity(names.len());
        for name in names {
            let i = self
                .channel_index(name)
                .ok_or_else(|| Error::InvalidArgument(format!("no channel named '{name}'")))?;
            channels.push(self.channels[i].clone());
            data.push(self.data[i].clone());
        }
        Self::new(self.sample_rate_hz, channels, data)
    }

    pub fn into_data(self) -> Vec<Vec<f64>> {
        self.data
    }
}

/// Reads a record whose first column is `time` (seconds).
pub fn load_csv(path: impl AsRef<Path>) -> Result<MultichannelRecord> {
    load_csv_with_rate(path, None)
}

/// Reads a record, optionally supplying the sample rate for files without a
/// time column. A `# sample_rate_hz=<v>` comment line is honored and
/// cross-checked against the time column when both are present.
pub fn load_csv_with_rate(
    path: impl AsRef<Path>,
    sample_rate_hz: Option<f64>,
) -> Result<MultichannelRecord> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text, sample_rate_hz)
}

pub fn parse_csv(text: &str, sample_rate_hz: Option<f64>) -> Result<MultichannelRecord> {
    let mut declared_rate = sample_rate_hz;
    let mut header: Option<Vec<String>> = None;
    let mut rows: Vec<Vec<f64>> = Vec::new();

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(v) = comment.trim().strip_prefix("sample_rate_hz=") {
                let rate: f64 = v.trim().parse().map_err(|_| Error::Parse {
                    line: line_no,
                    column: 1,
                    message: format!("bad sample rate '{}'", v.trim()),
                })?;
                if declared_rate.is_none() {
                    declared_rate = Some(rate);
                }
            }
            continue;
        }
        match &header {
            None => {
                let names: Vec<String> = line.split(',').map(|s| s.trim().to_string()).collect();
                header = Some(names);
            }
            Some(names) => {
                let cells: Vec<&str> = line.split(',').collect();
                if cells.len() != names.len() {
                    return Err(Error::Parse {
                        line: line_no,
                        column: cells.len().min(names.len()) + 1,
                        message: format!("expected {} fields, found {}", names.len(), cells.len()),
                    });
                }
                let mut row = Vec::with_capacity(cells.len());
                for (col, cell) in cells.iter().enumerate() {
                    let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                        line: line_no,
                        column: col + 1,
                        message: format!(
                            "'{}' is not a number (column '{}')",
                            cell.trim(),
                            names[col]
                        ),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            line: line_no,
                            column: col + 1,
                            message: format!(
                                "non-finite value '{}' in column '{}'",
                                cell.trim(),
                                names[col]
                            ),
                        });
                    }
                    row.push(v);
                }
                rows.push(row);
            }
        }
    }

    let names = header.ok_or_else(|| Error::Format("missing header row".into()))?;
    let has_time = names
        .first()
        .map(|n| n.eq_ignore_ascii_case("time") || n.eq_ignore_ascii_case("t"))
        .unwrap_or(false);
    let first_data = usize::from(has_time);
    if names.len() <= first_data {
        return Err(Error::Format("no data columns".into()));
    }
    if rows.len() < 2 {
        return Err(Error::Format(format!(
            "need at least 2 data rows, found {}",
            rows.len()
        )));
    }

    let rate = if has_time {
        let inferred = rate_from_times(&rows.iter().map(|r| r[0]).collect::<Vec<_>>())?;
        match declared_rate {
            Some(r) if ((r - inferred) / r).abs() > GRID_TOLERANCE => {
                return Err(Error::Format(format!(
                    "declared sample rate {r} Hz disagrees with time column ({inferred} Hz)"
                )))
            }
            Some(r) => r,
            None => inferred,
        }
    } else {
        declared_rate
            .ok_or_else(|| Error::Format("no time column and no sample rate supplied".into()))?
    };

    let channels = names[first_data..]
        .iter()
        .map(|n| ChannelMeta::derived(n.clone()))
        .collect();
    let data = (first_data..names.len())
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    MultichannelRecord::new(rate, channels, data)
}

fn rate_from_times(times: &[f64]) -> Result<f64> {
    let mut dts: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted = dts.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    if !(median > 0.0) {
        return Err(Error::Format("time column is not increasing".into()));
    }
    for (i, dt) in dts.drain(..).enumerate() {
        if ((dt - median) / median).abs() > GRID_TOLERANCE {
            return Err(Error::Format(format!(
                "non-uniform time grid between rows {} and {} (dt {dt}, median {median})",
                i + 1,
                i + 2
            )));
        }
    }
    Ok(1.0 / median)
}

/// Writes `time,<names...>` with 17 significant digits per value.
pub fn save_csv(rec: &MultichannelRecord, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_csv_string(rec))?;
    Ok(())
}

pub fn to_csv_string(rec: &MultichannelRecord) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# sample_rate_hz={}", rec.sample_rate_hz);
    out.push_str("time");
    for ch in &rec.channels {
        out.push(',');
        out.push_str(&ch.name);
    }
    out.push('\n');
    for (i, t) in rec.times().into_iter().enumerate() {
        let _ = write!(out, "{}", fmt_f64(t));
        for row in &rec.data {
            let _ = write!(out, ",{}", fmt_f64(row[i]));
        }
        out.push('\n');
    }
    out
}

/// Decimal scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().sum::<f64>() / x.len() as f64
}

pub fn demean_series(x: &[f64]) -> Vec<f64> {
    let m = mean(x);
    x.iter().map(|v| v - m).collect()
}

pub fn demean(rec: &MultichannelRecord) -> MultichannelRecord {
    let data = rec.data.iter().map(|row| demean_series(row)).collect();
    MultichannelRecord {
        sample_rate_hz: rec.sample_rate_hz,
        channels: rec.channels.clone(),
        data,
    }
}

/// Hamming-windowed sinc low-pass with `8·factor + 1` taps and cutoff at
/// 0.8 of the decimated Nyquist frequency; unity gain at DC.
pub fn anti_alias_taps(factor: usize) -> Vec<f64> {
    let len = 8 * factor + 1;
    let centre = (len / 2) as f64;
    // cycles per input sample
    let cutoff = 0.8 / (2.0 * factor as f64);
    let mut taps: Vec<f64> = (0..len)
        .map(|n| {
            let m = n as f64 - centre;
            let sinc = if m == 0.0 {
                2.0 * cutoff
            } else {
                (2.0 * PI * cutoff * m).sin() / (PI * m)
            };
            let window = 0.54 - 0.46 * (2.0 * PI * n as f64 / (len - 1) as f64).cos();
            sinc * window
        })
        .collect();
    let gain: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= gain);
    taps
}

pub fn decimate(rec: &MultichannelRecord, factor: usize) -> Result<MultichannelRecord> {
    if factor == 0 {
        return invalid("decimation factor must be at least 1");
    }
    if factor == 1 {
        return Ok(rec.clone());
    }
    let n = rec.n_samples();
    if n < 8 * factor {
        return invalid(format!(
            "decimation by {factor} needs at least {} samples, got {n}",
            8 * factor
        ));
    }
    let taps = anti_alias_taps(factor);
    let data = rec
        .data
        .iter()
        .map(|row| {
            let smooth = filter_zero_phase_reflect(&taps, row);
            smooth
                .into_iter()
                .step_by(factor)
                .take(n / factor)
                .collect()
        })
        .collect();
    MultichannelRecord::new(
        rec.sample_rate_hz / factor as f64,
        rec.channels.clone(),
        data,
    )
}

/// Centred convolution with an odd-length symmetric FIR, padding both ends by
/// mirror reflection about the end samples.
fn filter_zero_phase_reflect(taps: &[f64], x: &[f64]) -> Vec<f64> {
    let half = taps.len() / 2;
    let n = x.len() as isize;
    let at = |i: isize| -> f64 {
        let mut j = i;
        // reflect until inside; series are always longer than the half-width
        while j < 0 || j >= n {
            if j < 0 {
                j = -j;
            }
            if j >= n {
                j = 2 * (n - 1) - j;
            }
        }
        x[j as usize]
    };
    (0..n)
        .map(|i| {
            taps.iter()
                .enumerate()
                .map(|(k, h)| h * at(i + half as isize - k as isize))
                .sum()
        })
        .collect()
}

/// Per-kind white and 1/f amplitudes for the synthetic environmental noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub white_std: f64,
    pub pink_std: f64,
}

impl NoiseLevel {
    pub const ZERO: NoiseLevel = NoiseLevel {
        white_std: 0.0,
        pink_std: 0.0,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundModel {
    pub signal_gradiometer: NoiseLevel,
    pub magnetometer: NoiseLevel,
    pub tensor_gradiometer: NoiseLevel,
    pub pink_exponent: f64,
}

impl Default for BackgroundModel {
    fn default() -> Self {
        // Gradiometer backgrounds of roughly ±0.2 pT peak; magnetometers an
        // order of magnitude higher.
        let gradiometer = NoiseLevel {
            white_std: 0.02,
            pink_std: 0.05,
        };
        Self {
            signal_gradiometer: gradiometer,
            magnetometer: NoiseLevel {
                white_std: 0.2,
                pink_std: 0.5,
            },
            tensor_gradiometer: gradiometer,
            pink_exponent: 1.0,
        }
    }
}

impl BackgroundModel {
    pub fn silent() -> Self {
        Self {
            signal_gradiometer: NoiseLevel::ZERO,
            magnetometer: NoiseLevel::ZERO,
            tensor_gradiometer: NoiseLevel::ZERO,
            pink_exponent: 1.0,
        }
    }

    pub fn level(&self, kind: ChannelKind) -> NoiseLevel {
        match kind {
            ChannelKind::SignalGradiometer => self.signal_gradiometer,
            ChannelKind::Magnetometer => self.magnetometer,
            ChannelKind::TensorGradiometer => self.tensor_gradiometer,
            ChannelKind::Derived => NoiseLevel::ZERO,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, l) in [
            ("signal_gradiometer", self.signal_gradiometer),
            ("magnetometer", self.magnetometer),
            ("tensor_gradiometer", self.tensor_gradiometer),
        ] {
            if !(l.white_std >= 0.0 && l.pink_std >= 0.0) {
                return invalid(format!("{name} noise levels must be nonnegative"));
            }
        }
        if !self.pink_exponent.is_finite() {
            return invalid("pink_exponent must be finite");
        }
        Ok(())
    }
}

/// Seeded white + spectrally shaped 1/f^exponent noise. `stream` selects an
/// independent ChaCha stream so channels sharing a seed stay uncorrelated.
pub fn synth_background(
    level: NoiseLevel,
    pink_exponent: f64,
    n_samples: usize,
    sample_rate_hz: f64,
    seed: u64,
    stream: u64,
) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let white: Vec<f64> = (0..n_samples)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let pink_source: Vec<f64> = (0..n_samples)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let pink = shape_spectrum(&pink_source, pink_exponent, sample_rate_hz);
    white
        .iter()
        .zip(&pink)
        .map(|(w, p)| level.white_std * w + level.pink_std * p)
        .collect()
}

/// Scales Fourier magnitudes by f^(−exponent/2) (DC removed) and normalizes
/// the result to unit variance.
fn shape_spectrum(white: &[f64], exponent: f64, sample_rate_hz: f64) -> Vec<f64> {
    let n = white.len();
    if n < 2 {
        return vec![0.0; n];
    }
    let mut planner = FftPlanner::<f64>::new();
    let forward = planner.plan_fft_forward(n);
    let inverse = planner.plan_fft_inverse(n);
    let mut buf: Vec<Complex64> = white.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    forward.process(&mut buf);
    let df = sample_rate_hz / n as f64;
    buf[0] = Complex64::new(0.0, 0.0);
    for (k, c) in buf.iter_mut().enumerate().skip(1) {
        let bin = k.min(n - k) as f64;
        *c *= (bin * df).powf(-exponent / 2.0);
    }
    inverse.process(&mut buf);
    let out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let out = demean_series(&out);
    let var = out.iter().map(|v| v * v).sum::<f64>() / n as f64;
    if var <= 0.0 {
        return vec![0.0; n];
    }
    let scale = var.sqrt().recip();
    out.into_iter().map(|v| v * scale).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub f_signal_cpm: f64,
    pub f_noise_cpm: f64,
    pub signal_coupling: f64,
    pub magnetometer_coupling: f64,
    pub gradiometer_coupling: f64,
    pub duration_s: f64,
    pub sample_rate_hz: f64,
    pub background: BackgroundModel,
    pub seed: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            f_signal_cpm: 3.0,
            f_noise_cpm: 0.3,
            signal_coupling: 0.1,
            magnetometer_coupling: 1.0,
            gradiometer_coupling: 0.1,
            duration_s: 120.0,
            sample_rate_hz: 20.0,
            background: BackgroundModel::default(),
            seed: 0,
        }
    }
}

/// Channel layout of the simulated scenario: one signal gradiometer followed
/// by three magnetometer and five tensor-gradiometer references.
pub const SIGNAL_CHANNEL: &str = "sg";
pub const REFERENCE_CHANNELS: [&str; 8] = ["R1", "R2", "R3", "R4", "R5", "R6", "R7", "R8"];

impl SimulationConfig {
    pub fn n_samples(&self) -> usize {
        (self.duration_s * self.sample_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate_hz.is_finite() && self.sample_rate_hz > 0.0) {
            return invalid("sample_rate_hz must be positive");
        }
        if !(self.duration_s.is_finite() && self.duration_s * self.sample_rate_hz >= 2.0) {
            return invalid("duration_s × sample_rate_hz must be at least 2");
        }
        for (name, c) in [
            ("signal_coupling", self.signal_coupling),
            ("magnetometer_coupling", self.magnetometer_coupling),
            ("gradiometer_coupling", self.gradiometer_coupling),
        ] {
            if !(c.is_finite() && c >= 0.0) {
                return invalid(format!("{name} must be nonnegative"));
            }
        }
        let nyquist_cpm = self.sample_rate_hz * 30.0;
        for (name, f) in [
            ("f_signal_cpm", self.f_signal_cpm),
            ("f_noise_cpm", self.f_noise_cpm),
        ] {
            if !(f.is_finite() && f >= 0.0 && f < nyquist_cpm) {
                return invalid(format!("{name} must lie in [0, {nyquist_cpm}) cpm"));
            }
        }
        self.background.validate()
    }

    /// The common tone pair cos(2πf_s t) + cos(2πf_n t).
    pub fn tones(&self) -> Vec<f64> {
        let fs = cpm_to_hz(self.f_signal_cpm);
        let fnz = cpm_to_hz(self.f_noise_cpm);
        (0..self.n_samples())
            .map(|i| {
                let t = i as f64 / self.sample_rate_hz;
                (2.0 * PI * fs * t).cos() + (2.0 * PI * fnz * t).cos()
            })
            .collect()
    }
}

pub fn synth_simulation(cfg: &SimulationConfig) -> Result<MultichannelRecord> {
    cfg.validate()?;
    let n = cfg.n_samples();
    let tones = cfg.tones();

    let mut channels = vec![ChannelMeta::new(
        SIGNAL_CHANNEL,
        ChannelKind::SignalGradiometer,
        "pT",
    )];
    let mut couplings = vec![cfg.signal_coupling];
    for (i, name) in REFERENCE_CHANNELS.iter().enumerate() {
        if i < 3 {
            channels.push(ChannelMeta::new(*name, ChannelKind::Magnetometer, "pT"));
            couplings.push(cfg.magnetometer_coupling);
        } else {
            channels.push(ChannelMeta::new(
                *name,
                ChannelKind::TensorGradiometer,
                "pT",
            ));
            couplings.push(cfg.gradiometer_coupling);
        }
    }

    let data = channels
        .iter()
        .zip(&couplings)
        .enumerate()
        .map(|(stream, (ch, &gain))| {
            let bg = synth_background(
                cfg.background.level(ch.kind),
                cfg.background.pink_exponent,
                n,
                cfg.sample_rate_hz,
                cfg.seed,
                stream as u64,
            );
            bg.iter().zip(&tones).map(|(b, x)| b + gain * x).collect()
        })
        .collect();
    MultichannelRecord::new(cfg.sample_rate_hz, channels, data)
}
