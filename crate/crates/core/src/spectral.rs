//! Burg autoregressive spectra, peak picking and the peak-ratio SNR in dB.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signals::demean_series;
use crate::units::{cpm_to_hz, nyquist_cpm};

pub const DEFAULT_AR_ORDER: usize = 30;
pub const MAX_AR_ORDER: usize = 200;

/// AR(p) model in prediction-error form: `e(n) = x(n) + Σ_k a_k·x(n−k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArModel {
    pub order: usize,
    pub coeffs: Vec<f64>,
    pub reflection: Vec<f64>,
    pub noise_variance: f64,
    pub sample_rate_hz: f64,
}

impl ArModel {
    /// White-noise model with no coefficients.
    pub fn white(noise_variance: f64, sample_rate_hz: f64) -> Self {
        Self {
            order: 0,
            coeffs: Vec::new(),
            reflection: Vec::new(),
            noise_variance,
            sample_rate_hz,
        }
    }

    /// Prediction-error filter response `1 + Σ a_k e^{−iωk}` at `f_hz`.
    pub fn error_filter_response(&self, f_hz: f64) -> Complex64 {
        let w = -2.0 * PI * f_hz / self.sample_rate_hz;
        let mut acc = Complex64::new(1.0, 0.0);
        for (k, a) in self.coeffs.iter().enumerate() {
            acc += Complex64::from_polar(*a, w * (k + 1) as f64);
        }
        acc
    }

    pub fn psd_at_hz(&self, f_hz: f64) -> f64 {
        self.noise_variance / (self.sample_rate_hz * self.error_filter_response(f_hz).norm_sqr())
    }
}

/// Burg estimate of an AR(order) model; the input is demeaned first.
pub fn burg_fit(x: &[f64], order: usize, sample_rate_hz: f64) -> Result<ArModel> {
    if order == 0 {
        return invalid("AR order must be at least 1");
    }
    if x.len() < 2 * order + 1 {
        return invalid(format!(
            "AR order {order} needs at least {} samples, got {}",
            2 * order + 1,
            x.len()
        ));
    }
    if !(sample_rate_hz > 0.0) {
        return invalid("sample rate must be positive");
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut f = demean_series(x);
    let n = f.len();
    let energy: f64 = f.iter().map(|v| v * v).sum();
    if energy <= (1e-12 * peak).powi(2) * n as f64 || energy == 0.0 {
        return Err(Error::DegenerateInput("series has zero variance".into()));
    }
    let mut b = f.clone();
    let mut a = vec![1.0];
    let mut reflection = Vec::with_capacity(order);
    let mut err = energy / n as f64;

    for m in 1..=order {
        let mut num = 0.0;
        let mut den = 0.0;
        for i in m..n {
            num += f[i] * b[i - 1];
            den += f[i] * f[i] + b[i - 1] * b[i - 1];
        }
        let k = if den > 0.0 { -2.0 * num / den } else { 0.0 };
        for i in (m..n).rev() {
            let fi = f[i];
            f[i] = fi + k * b[i - 1];
            b[i] = b[i - 1] + k * fi;
        }
        let mut next = a.clone();
        next.push(0.0);
        for (i, v) in next.iter_mut().enumerate().skip(1) {
            *v += k * a.get(m - i).copied().unwrap_or(0.0);
        }
        a = next;
        err *= 1.0 - k * k;
        reflection.push(k);
    }

    Ok(ArModel {
        order,
        coeffs: a[1..].to_vec(),
        reflection,
        noise_variance: err.max(0.0),
        sample_rate_hz,
    })
}

/// Evenly spaced frequency grid in cycles per minute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    pub lo_cpm: f64,
    pub hi_cpm: f64,
    pub step_cpm: f64,
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self {
            lo_cpm: 0.0,
            hi_cpm: 70.0,
            step_cpm: 0.1,
        }
    }
}

impl FrequencyGrid {
    pub fn points(&self) -> Result<Vec<f64>> {
        if !(self.step_cpm > 0.0 && self.hi_cpm > self.lo_cpm && self.lo_cpm >= 0.0) {
            return invalid(format!(
                "bad frequency grid {}..{} step {}",
                self.lo_cpm, self.hi_cpm, self.step_cpm
            ));
        }
        let n = ((self.hi_cpm - self.lo_cpm) / self.step_cpm + 1e-9).floor() as usize + 1;
        Ok((0..n)
            .map(|i| self.lo_cpm + i as f64 * self.step_cpm)
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralConfig {
    pub ar_order: usize,
    pub grid: FrequencyGrid,
}

impl Default for SpectralConfig {
    fn default() -> Self {
        Self {
            ar_order: DEFAULT_AR_ORDER,
            grid: FrequencyGrid::default(),
        }
    }
}

impl SpectralConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_AR_ORDER).contains(&self.ar_order) {
            return invalid(format!(
                "AR order must be in 1..={MAX_AR_ORDER}, got {}",
                self.ar_order
            ));
        }
        self.grid.points().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsdEstimate {
    pub freqs_cpm: Vec<f64>,
    /// (input units)² / Hz
    pub psd: Vec<f64>,
    pub model: ArModel,
}

pub fn ar_psd(model: &ArModel, freqs_cpm: &[f64]) -> Result<PsdEstimate> {
    let nyq = nyquist_cpm(model.sample_rate_hz);
    for (i, &f) in freqs_cpm.iter().enumerate() {
        if !(f >= 0.0 && f <= nyq * (1.0 + 1e-12)) {
            return invalid(format!("frequency {f} cpm outside [0, {nyq}] cpm"));
        }
        if i > 0 && !(f > freqs_cpm[i - 1]) {
            return invalid("frequency grid must be strictly ascending");
        }
    }
    let psd = freqs_cpm
        .iter()
        .map(|&f| model.psd_at_hz(cpm_to_hz(f)))
        .collect();
    Ok(PsdEstimate {
        freqs_cpm: freqs_cpm.to_vec(),
        psd,
        model: model.clone(),
    })
}

/// Burg fit followed by evaluation on the configured grid.
pub fn series_psd(x: &[f64], sample_rate_hz: f64, cfg: &SpectralConfig) -> Result<PsdEstimate> {
    let model = burg_fit(x, cfg.ar_order, sample_rate_hz)?;
    let grid: Vec<f64> = cfg
        .grid
        .points()?
        .into_iter()
        .filter(|&f| f <= nyquist_cpm(sample_rate_hz))
        .collect();
    ar_psd(&model, &grid)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralPeak {
    pub freq_cpm: f64,
    pub psd_value: f64,
}

/// Closed frequency interval in cpm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lo_cpm: f64,
    pub hi_cpm: f64,
}

impl Band {
    pub const fn new(lo_cpm: f64, hi_cpm: f64) -> Self {
        Self { lo_cpm, hi_cpm }
    }

    /// Inclusive, with a 1e-9 cpm allowance for grid round-off.
    pub fn contains(&self, f_cpm: f64) -> bool {
        const SLACK: f64 = 1e-9;
        f_cpm >= self.lo_cpm - SLACK && f_cpm <= self.hi_cpm + SLACK
    }

    fn check(&self) -> Result<()> {
        if !(self.lo_cpm < self.hi_cpm) {
            return invalid(format!(
                "band [{}, {}] has lo ≥ hi",
                self.lo_cpm, self.hi_cpm
            ));
        }
        Ok(())
    }
}

fn band_indices(psd: &PsdEstimate, band: Band) -> Vec<usize> {
    psd.freqs_cpm
        .iter()
        .enumerate()
        .filter(|(_, &f)| band.contains(f))
        .map(|(i, _)| i)
        .collect()
}

fn is_local_max(psd: &[f64], i: usize) -> bool {
    let left = i == 0 || psd[i] > psd[i - 1];
    let right = i + 1 == psd.len() || psd[i] > psd[i + 1];
    let has_neighbor = psd.len() > 1;
    has_neighbor && left && right
}

/// Strict local maxima of the full grid that fall inside `band`, tallest first.
pub fn find_peaks(psd: &PsdEstimate, band: Band) -> Result<Vec<SpectralPeak>> {
    band.check()?;
    let idx = band_indices(psd, band);
    if idx.is_empty() {
        return invalid(format!(
            "band [{}, {}] cpm contains no grid points",
            band.lo_cpm, band.hi_cpm
        ));
    }
    let mut peaks: Vec<SpectralPeak> = idx
        .into_iter()
        .filter(|&i| is_local_max(&psd.psd, i) && psd.psd[i] > 0.0)
        .map(|i| SpectralPeak {
            freq_cpm: psd.freqs_cpm[i],
            psd_value: psd.psd[i],
        })
        .collect();
    peaks.sort_by(|a, b| b.psd_value.total_cmp(&a.psd_value));
    Ok(peaks)
}

/// Tallest peak over several bands. A band without a strict local maximum
/// contributes its largest grid value instead.
pub fn dominant_peak(psd: &PsdEstimate, bands: &[Band]) -> Result<SpectralPeak> {
    if bands.is_empty() {
        return invalid("at least one band is required");
    }
    let mut best: Option<SpectralPeak> = None;
    for &band in bands {
        band.check()?;
        let idx = band_indices(psd, band);
        if idx.is_empty() {
            continue;
        }
        let candidate = match find_peaks(psd, band)?.first() {
            Some(p) => *p,
            None => {
                let i = idx.into_iter().fold(usize::MAX, |b, i| {
                    if b == usize::MAX || psd.psd[i] > psd.psd[b] {
                        i
                    } else {
                        b
                    }
                });
                SpectralPeak {
                    freq_cpm: psd.freqs_cpm[i],
                    psd_value: psd.psd[i],
                }
            }
        };
        if best.is_none_or(|b| candidate.psd_value > b.psd_value) {
            best = Some(candidate);
        }
    }
    best.ok_or_else(|| Error::InvalidArgument("no band intersects the frequency grid".into()))
}

/// `20·log10(signal / noise)` on peak spectral density values. The factor 20
/// is applied to a power-density ratio on purpose; all reported figures use
/// this convention.
pub fn snr_from_peaks(signal: f64, noise: f64) -> Result<f64> {
    if !(noise > 0.0) {
        return Err(Error::UndefinedSnr(format!("noise peak value is {noise}")));
    }
    if !(signal > 0.0) {
        return Err(Error::UndefinedSnr(format!(
            "signal peak value is {signal}"
        )));
    }
    Ok(20.0 * (signal / noise).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrMeasurement {
    pub snr_db: f64,
    pub signal_peak: SpectralPeak,
    pub noise_peak: SpectralPeak,
}

pub fn snr_db(
    psd: &PsdEstimate,
    signal_band: Band,
    noise_bands: &[Band],
) -> Result<SnrMeasurement> {
    let signal_peak = dominant_peak(psd, &[signal_band])?;
    let noise_peak = dominant_peak(psd, noise_bands)?;
    Ok(SnrMeasurement {
        snr_db: snr_from_peaks(signal_peak.psd_value, noise_peak.psd_value)?,
        signal_peak,
        noise_peak,
    })
}
