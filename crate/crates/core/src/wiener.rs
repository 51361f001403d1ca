//! FIR Wiener filtering for reference-based noise cancellation.
//!
//! The design solves the (block-)Toeplitz normal equations
//! `(R_xx + λI)·H = R_xd` jointly over every reference channel; the canceller
//! output is `e(n) = d(n) − Σ_i (h_i * x_i)(n)`. The `theory_*` functions
//! evaluate the frequency-domain Wiener solution on the unit circle.

use nalgebra::{Cholesky, DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::signals::demean_series;

pub const DEFAULT_TAPS: usize = 40;
pub const DEFAULT_RELATIVE_LAMBDA: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirFilter {
    pub taps: Vec<f64>,
    pub sample_rate_hz: f64,
}

impl FirFilter {
    pub fn new(taps: Vec<f64>, sample_rate_hz: f64) -> Result<Self> {
        if taps.is_empty() {
            return invalid("a filter needs at least one tap");
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return invalid("filter taps must be finite");
        }
        Ok(Self {
            taps,
            sample_rate_hz,
        })
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Biased cross-correlation `r(k) = 1/T Σ_{n=k}^{T−1} x(n)·y(n−k)` of the
/// demeaned series, for `k = 0..=max_lag`.
pub fn correlate(x: &[f64], y: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return invalid(format!(
            "series lengths differ ({} vs {})",
            x.len(),
            y.len()
        ));
    }
    let t = x.len();
    if max_lag >= t {
        return invalid(format!("max lag {max_lag} must be below the length {t}"));
    }
    Ok(correlate_demeaned(
        &demean_series(x),
        &demean_series(y),
        max_lag,
    ))
}

/// The same biased estimator without mean removal.
pub fn biased_correlation(x: &[f64], y: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if x.len() != y.len() {
        return invalid(format!(
            "series lengths differ ({} vs {})",
            x.len(),
            y.len()
        ));
    }
    if max_lag >= x.len() {
        return invalid(format!(
            "max lag {max_lag} must be below the length {}",
            x.len()
        ));
    }
    Ok(correlate_demeaned(x, y, max_lag))
}

fn correlate_demeaned(x: &[f64], y: &[f64], max_lag: usize) -> Vec<f64> {
    let t = x.len();
    (0..=max_lag)
        .map(|k| {
            x[k..]
                .iter()
                .zip(&y[..t - k])
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / t as f64
        })
        .collect()
}

/// Correlation estimates needed for an `M`-reference, `N`-tap design.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationSet {
    n_taps: usize,
    /// `auto[i][j][k + N − 1] = r_{x_i x_j}(k)`, `k = −(N−1)..=(N−1)`.
    auto: Vec<Vec<Vec<f64>>>,
    /// `cross[i][k] = E[d(n)·x_i(n−k)]`, `k = 0..N`.
    cross: Vec<Vec<f64>>,
}

impl CorrelationSet {
    pub fn estimate(refs: &[&[f64]], d: &[f64], n_taps: usize) -> Result<Self> {
        if refs.is_empty() {
            return invalid("at least one reference channel is required");
        }
        if n_taps == 0 {
            return invalid("filter length must be at least 1");
        }
        let t = d.len();
        if let Some(r) = refs.iter().find(|r| r.len() != t) {
            return invalid(format!(
                "reference length {} differs from primary length {t}",
                r.len()
            ));
        }
        if n_taps > t {
            return invalid(format!("filter length {n_taps} exceeds series length {t}"));
        }
        let xs: Vec<Vec<f64>> = refs.iter().map(|r| demean_series(r)).collect();
        let dc = demean_series(d);
        let m = xs.len();
        let lag = n_taps - 1;

        let mut auto = vec![vec![Vec::new(); m]; m];
        for i in 0..m {
            for j in i..m {
                let pos = correlate_demeaned(&xs[i], &xs[j], lag);
                let neg = correlate_demeaned(&xs[j], &xs[i], lag);
                let mut ij = Vec::with_capacity(2 * n_taps - 1);
                ij.extend(neg.iter().skip(1).rev());
                ij.extend(&pos);
                let mut ji = Vec::with_capacity(2 * n_taps - 1);
                ji.extend(pos.iter().skip(1).rev());
                ji.extend(&neg);
                auto[i][j] = ij;
                if i != j {
                    auto[j][i] = ji;
                }
            }
        }
        let cross = xs.iter().map(|x| correlate_demeaned(&dc, x, lag)).collect();
        Ok(Self {
            n_taps,
            auto,
            cross,
        })
    }

    pub fn n_taps(&self) -> usize {
        self.n_taps
    }

    pub fn n_refs(&self) -> usize {
        self.cross.len()
    }

    /// `r_{x_i x_j}(k)` for `|k| < N`.
    pub fn auto(&self, i: usize, j: usize, k: isize) -> f64 {
        self.auto[i][j][(k + self.n_taps as isize - 1) as usize]
    }

    /// `E[d(n)·x_i(n−k)]`.
    pub fn cross(&self, i: usize, k: usize) -> f64 {
        self.cross[i][k]
    }

    pub fn max_zero_lag_power(&self) -> f64 {
        (0..self.n_refs())
            .map(|i| self.auto(i, i, 0))
            .fold(0.0, f64::max)
    }

    /// Block-Toeplitz `R_xx` (row `(i,l)`, column `(j,m)` holds
    /// `r_{x_j x_i}(l − m)`) and right-hand side `R_xd`.
    pub fn normal_equations(&self) -> (DMatrix<f64>, DVector<f64>) {
        let m = self.n_refs();
        let n = self.n_taps;
        let dim = m * n;
        let r = DMatrix::from_fn(dim, dim, |row, col| {
            let (i, l) = (row / n, row % n);
            let (j, mm) = (col / n, col % n);
            self.auto(j, i, l as isize - mm as isize)
        });
        let rhs = DVector::from_fn(dim, |row, _| self.cross(row / n, row % n));
        (r, rhs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WienerDesign {
    pub filters: Vec<FirFilter>,
    pub regularization: f64,
    /// `(max L_ii / min L_ii)²` from the Cholesky factor.
    pub condition_estimate: f64,
}

impl WienerDesign {
    pub fn n_taps(&self) -> usize {
        self.filters[0].len()
    }

    /// Euclidean norm of all stacked taps.
    pub fn norm(&self) -> f64 {
        self.filters
            .iter()
            .flat_map(|f| f.taps.iter())
            .map(|t| t * t)
            .sum::<f64>()
            .sqrt()
    }
}

pub fn solve_wiener(
    corr: &CorrelationSet,
    lambda: f64,
    sample_rate_hz: f64,
) -> Result<WienerDesign> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid(format!("regularization must be nonnegative, got {lambda}"));
    }
    let (mut r, rhs) = corr.normal_equations();
    if r.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
        return invalid("correlation estimates are not finite");
    }
    for i in 0..r.nrows() {
        r[(i, i)] += lambda;
    }
    let chol = Cholesky::new(r).ok_or_else(|| {
        Error::SingularSystem(format!(
            "normal equations are not positive definite at λ = {lambda:e}"
        ))
    })?;
    let l = chol.l_dirty();
    let (lo, hi) = (0..l.nrows()).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
        let v = l[(i, i)].abs();
        (lo.min(v), hi.max(v))
    });
    if !(lo > 0.0) {
        return Err(Error::SingularSystem("zero pivot in factorization".into()));
    }
    let condition_estimate = (hi / lo).powi(2);
    let h = chol.solve(&rhs);
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("solution is not finite".into()));
    }
    let n = corr.n_taps();
    let filters = (0..corr.n_refs())
        .map(|i| FirFilter::new(h.rows(i * n, n).iter().copied().collect(), sample_rate_hz))
        .collect::<Result<Vec<_>>>()?;
    Ok(WienerDesign {
        filters,
        regularization: lambda,
        condition_estimate,
    })
}

/// Design and configuration knobs shared by the classic and separated paths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienerConfig {
    pub n_taps: usize,
    /// λ as a multiple of the largest zero-lag reference power.
    pub relative_lambda: f64,
}

impl Default for WienerConfig {
    fn default() -> Self {
        Self {
            n_taps: DEFAULT_TAPS,
            relative_lambda: DEFAULT_RELATIVE_LAMBDA,
        }
    }
}

impl WienerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_taps == 0 {
            return invalid("n_taps must be at least 1");
        }
        if !(self.relative_lambda >= 0.0 && self.relative_lambda.is_finite()) {
            return invalid("relative_lambda must be nonnegative");
        }
        Ok(())
    }

    pub fn design(&self, refs: &[&[f64]], d: &[f64], sample_rate_hz: f64) -> Result<WienerDesign> {
        self.validate()?;
        let corr = CorrelationSet::estimate(refs, d, self.n_taps)?;
        let lambda = self.relative_lambda * corr.max_zero_lag_power();
        solve_wiener(&corr, lambda, sample_rate_hz)
    }
}

/// Causal convolution with zero initial conditions, truncated to the input length.
pub fn apply_fir(f: &FirFilter, x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            f.taps
                .iter()
                .take(n + 1)
                .enumerate()
                .map(|(m, h)| h * x[n - m])
                .sum()
        })
        .collect()
}

/// `e(n) = d(n) − Σ_i (h_i * x_i)(n)`.
pub fn cancel(design: &WienerDesign, refs: &[&[f64]], d: &[f64]) -> Result<Vec<f64>> {
    if refs.len() != design.filters.len() {
        return invalid(format!(
            "{} references for {} filters",
            refs.len(),
            design.filters.len()
        ));
    }
    if let Some(r) = refs.iter().find(|r| r.len() != d.len()) {
        return invalid(format!(
            "reference length {} differs from primary length {}",
            r.len(),
            d.len()
        ));
    }
    let mut e = d.to_vec();
    for (f, x) in design.filters.iter().zip(refs) {
        for (out, y) in e.iter_mut().zip(apply_fir(f, x)) {
            *out -= y;
        }
    }
    Ok(e)
}

/// Unit-circle quantities of the two-source noise-cancelling model: primary
/// `d = s + n`, reference `x = J·s + R·n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferSpec {
    pub freqs_hz: Vec<f64>,
    pub signal_path: Vec<Complex64>,
    pub noise_path: Vec<Complex64>,
    pub signal_spectrum: Vec<f64>,
    pub noise_spectrum: Vec<f64>,
}

impl TransferSpec {
    fn check(&self) -> Result<()> {
        let n = self.freqs_hz.len();
        if self.signal_path.len() != n
            || self.noise_path.len() != n
            || self.signal_spectrum.len() != n
            || self.noise_spectrum.len() != n
        {
            return invalid("transfer spec arrays must share one grid");
        }
        if self
            .signal_spectrum
            .iter()
            .chain(&self.noise_spectrum)
            .any(|v| !(*v >= 0.0))
        {
            return invalid("spectra must be nonnegative");
        }
        Ok(())
    }
}

/// `h = (r_ss·J* + r_nn·R*) / (r_ss|J|² + r_nn|R|²)` pointwise.
pub fn theory_transfer(spec: &TransferSpec) -> Result<Vec<Complex64>> {
    spec.check()?;
    (0..spec.freqs_hz.len())
        .map(|i| {
            let (j, r) = (spec.signal_path[i], spec.noise_path[i]);
            let (ss, nn) = (spec.signal_spectrum[i], spec.noise_spectrum[i]);
            let den = ss * j.norm_sqr() + nn * r.norm_sqr();
            if !(den > 0.0) {
                return Err(Error::SingularSpectrum(i));
            }
            Ok((j.conj() * ss + r.conj() * nn) / den)
        })
        .collect()
}

/// Signal and noise spectra at the canceller output:
/// `r_ss|1 − J·h|²` and `r_nn|1 − R·h|²`.
pub fn theory_output_spectra(spec: &TransferSpec) -> Result<(Vec<f64>, Vec<f64>)> {
    let h = theory_transfer(spec)?;
    let one = Complex64::new(1.0, 0.0);
    let sig = (0..h.len())
        .map(|i| spec.signal_spectrum[i] * (one - spec.signal_path[i] * h[i]).norm_sqr())
        .collect();
    let noise = (0..h.len())
        .map(|i| spec.noise_spectrum[i] * (one - spec.noise_path[i] * h[i]).norm_sqr())
        .collect();
    Ok((sig, noise))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnrDensities {
    /// Output signal-to-noise density `r_nn|R|² / (r_ss|J|²)`.
    pub delta_out: Vec<f64>,
    /// Reference signal-to-noise density `r_ss|J|² / (r_nn|R|²)`.
    pub delta_ref: Vec<f64>,
}

pub fn theory_snr_densities(spec: &TransferSpec) -> Result<SnrDensities> {
    spec.check()?;
    let mut delta_out = Vec::with_capacity(spec.freqs_hz.len());
    let mut delta_ref = Vec::with_capacity(spec.freqs_hz.len());
    for i in 0..spec.freqs_hz.len() {
        let sig = spec.signal_spectrum[i] * spec.signal_path[i].norm_sqr();
        let noise = spec.noise_spectrum[i] * spec.noise_path[i].norm_sqr();
        if !(sig > 0.0 && noise > 0.0) {
            return Err(Error::SingularSpectrum(i));
        }
        delta_ref.push(sig / noise);
        delta_out.push(noise / sig);
    }
    Ok(SnrDensities {
        delta_out,
        delta_ref,
    })
}
