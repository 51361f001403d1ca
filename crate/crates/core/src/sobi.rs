//! Second-order blind identification.
//!
//! The observations are whitened from the zero-lag covariance, a set of
//! lagged covariances of the whitened data is jointly diagonalized by Jacobi
//! sweeps of Givens rotations, and sources are read off as `Uᵀ·Λ·x(t)`.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{invalid, Error, Result};

pub const DEFAULT_LAG_COUNT: usize = 10;
pub const DEFAULT_MAX_LAG_S: f64 = 1.0;
pub const DEFAULT_TOL: f64 = 1e-8;
pub const DEFAULT_MAX_SWEEPS: usize = 100;

/// Rotations with |sin θ| below this change nothing representable.
const MIN_ROTATION: f64 = 1e-15;

/// Subtracts each row's mean.
pub fn demean_rows(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = x.clone();
    let t = x.ncols() as f64;
    for mut row in out.row_iter_mut() {
        let m = row.sum() / t;
        row.add_scalar_mut(-m);
    }
    out
}

/// Symmetrized lagged covariance `(C + Cᵀ)/2` with
/// `C = 1/(T−τ) Σ_t x(t+τ)·x(t)ᵀ` on row-demeaned data.
pub fn sample_covariance(x: &DMatrix<f64>, lag: usize) -> Result<DMatrix<f64>> {
    let t = x.ncols();
    if lag >= t {
        return invalid(format!("lag {lag} must be below the sample count {t}"));
    }
    Ok(lagged_covariance(&demean_rows(x), lag))
}

fn lagged_covariance(xc: &DMatrix<f64>, lag: usize) -> DMatrix<f64> {
    let t = xc.ncols();
    let span = t - lag;
    let ahead = xc.columns(lag, span);
    let behind = xc.columns(0, span);
    let c = (ahead * behind.transpose()) / span as f64;
    (&c + c.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct Whitening {
    /// Whitened data, `n_sources × n_samples`.
    pub z: DMatrix<f64>,
    /// `n_sources × n_channels`; rows are `(λ_i − σ²)^(−1/2)·p_iᵀ`.
    pub whitener: DMatrix<f64>,
    pub noise_variance: f64,
    /// All eigenvalues of C(0), descending.
    pub eigenvalues: Vec<f64>,
    /// Leading eigenvectors as columns, `n_channels × n_sources`.
    pub eigenvectors: DMatrix<f64>,
}

pub fn whiten(x: &DMatrix<f64>, n_sources: usize) -> Result<Whitening> {
    let n_channels = x.nrows();
    if n_sources == 0 || n_sources > n_channels {
        return invalid(format!(
            "n_sources must be in 1..={n_channels}, got {n_sources}"
        ));
    }
    if x.ncols() < 2 {
        return invalid("whitening needs at least 2 samples");
    }
    let xc = demean_rows(x);
    let c0 = lagged_covariance(&xc, 0);
    let eig = SymmetricEigen::new(c0);

    let mut order: Vec<usize> = (0..n_channels).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let noise_variance = if n_sources == n_channels {
        0.0
    } else {
        let tail = &eigenvalues[n_sources..];
        (tail.iter().sum::<f64>() / tail.len() as f64).max(0.0)
    };

    let floor = 1e-12 * eigenvalues[0].abs().max(f64::MIN_POSITIVE);
    let mut whitener = DMatrix::zeros(n_sources, n_channels);
    let mut eigenvectors = DMatrix::zeros(n_channels, n_sources);
    for (row, &i) in order.iter().take(n_sources).enumerate() {
        let excess = eig.eigenvalues[i] - noise_variance;
        if !(excess > floor) {
            return Err(Error::DegenerateWhitening { index: row, excess });
        }
        let p = eig.eigenvectors.column(i);
        eigenvectors.set_column(row, &p);
        whitener.set_row(row, &(p.transpose() / excess.sqrt()));
    }
    let z = &whitener * &xc;
    Ok(Whitening {
        z,
        whitener,
        noise_variance,
        eigenvalues,
        eigenvectors,
    })
}

#[derive(Debug, Clone)]
pub struct JointDiagonalization {
    /// Orthogonal `U` such that every `Uᵀ·M_k·U` is near-diagonal.
    pub rotation: DMatrix<f64>,
    pub sweeps: usize,
    /// False when `max_sweeps` ran out before a quiet sweep.
    pub converged: bool,
}

/// `Σ_k Σ_{i≠j} (Uᵀ M_k U)²_ij`.
pub fn off_diagonal(ms: &[DMatrix<f64>], u: &DMatrix<f64>) -> f64 {
    ms.iter()
        .map(|m| {
            let r = u.transpose() * m * u;
            let mut s = 0.0;
            for i in 0..r.nrows() {
                for j in 0..r.ncols() {
                    if i != j {
                        s += r[(i, j)] * r[(i, j)];
                    }
                }
            }
            s
        })
        .sum()
}

/// Cyclic Jacobi joint diagonalization of symmetric matrices.
///
/// Pairs `(p, q)`, `p < q`, are visited in lexicographic order. For each pair
/// the closed-form angle maximizing `Σ_k (M'_pp − M'_qq)²` is applied when
/// the resulting drop in the off-diagonal criterion exceeds
/// `tol · Σ_k ‖M_k‖²_F`. A sweep without any applied rotation ends the loop.
pub fn joint_diagonalize(
    ms: &[DMatrix<f64>],
    tol: f64,
    max_sweeps: usize,
) -> Result<JointDiagonalization> {
    let Some(first) = ms.first() else {
        return invalid("joint diagonalization needs at least one matrix");
    };
    let n = first.nrows();
    for (k, m) in ms.iter().enumerate() {
        if m.nrows() != m.ncols() {
            return invalid(format!(
                "matrix {k} is {}×{}, not square",
                m.nrows(),
                m.ncols()
            ));
        }
        if m.nrows() != n {
            return invalid(format!(
                "matrix {k} is {0}×{0}, expected {n}×{n}",
                m.nrows()
            ));
        }
    }
    if !(tol > 0.0) {
        return invalid("tol must be positive");
    }

    let mut work: Vec<DMatrix<f64>> = ms.iter().map(|m| (m + m.transpose()) * 0.5).collect();
    let total: f64 = work.iter().map(|m| m.norm_squared()).sum();
    let threshold = tol * total;
    let mut u = DMatrix::<f64>::identity(n, n);

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < max_sweeps {
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut g11, mut g12, mut g22) = (0.0, 0.0, 0.0);
                for m in &work {
                    let diff = m[(p, p)] - m[(q, q)];
                    let cross = m[(p, q)] + m[(q, p)];
                    g11 += diff * diff;
                    g12 += diff * cross;
                    g22 += cross * cross;
                }
                let ton = g11 - g22;
                let toff = 2.0 * g12;
                let root = ton.hypot(toff);
                let lambda_max = 0.5 * (g11 + g22) + 0.5 * root;
                let gain = 0.5 * (lambda_max - g11);
                if gain <= threshold {
                    continue;
                }
                let theta = 0.5 * toff.atan2(ton + root);
                let (s, c) = theta.sin_cos();
                if s.abs() < MIN_ROTATION {
                    continue;
                }
                rotated = true;
                for m in work.iter_mut() {
                    rotate_pair(m, p, q, c, s);
                }
                rotate_columns(&mut u, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }

    Ok(JointDiagonalization {
        rotation: u,
        sweeps,
        converged,
    })
}

/// `M ← Gᵀ M G` for the Givens rotation acting on columns p and q.
fn rotate_pair(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    rotate_columns(m, p, q, c, s);
    let n = m.ncols();
    for j in 0..n {
        let a = m[(p, j)];
        let b = m[(q, j)];
        m[(p, j)] = c * a + s * b;
        m[(q, j)] = c * b - s * a;
    }
}

fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    for i in 0..m.nrows() {
        let a = m[(i, p)];
        let b = m[(i, q)];
        m[(i, p)] = c * a + s * b;
        m[(i, q)] = c * b - s * a;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SobiConfig {
    /// Explicit lag set in seconds; when empty the default grid is used.
    pub lags_s: Vec<f64>,
    pub n_lags: usize,
    pub max_lag_s: f64,
    /// Number of retained sources; `None` keeps one per channel.
    pub n_sources: Option<usize>,
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SobiConfig {
    fn default() -> Self {
        Self {
            lags_s: Vec::new(),
            n_lags: DEFAULT_LAG_COUNT,
            max_lag_s: DEFAULT_MAX_LAG_S,
            n_sources: None,
            tol: DEFAULT_TOL,
            max_sweeps: DEFAULT_MAX_SWEEPS,
        }
    }
}

impl SobiConfig {
    pub fn resolved_lags_s(&self) -> Vec<f64> {
        if self.lags_s.is_empty() {
            default_lags(self.n_lags, self.max_lag_s)
        } else {
            self.lags_s.clone()
        }
    }
}

/// `K` equally spaced lags `k·τ_max/K`, `k = 1..=K`.
pub fn default_lags(n_lags: usize, max_lag_s: f64) -> Vec<f64> {
    (1..=n_lags)
        .map(|k| k as f64 * max_lag_s / n_lags as f64)
        .collect()
}

/// Rounds lags to whole samples and drops duplicates, keeping first-seen order.
pub fn lags_to_samples(
    lags_s: &[f64],
    sample_rate_hz: f64,
    n_samples: usize,
) -> Result<Vec<usize>> {
    if lags_s.is_empty() {
        return invalid("at least one lag is required");
    }
    let mut out: Vec<usize> = Vec::with_capacity(lags_s.len());
    for &lag in lags_s {
        let samples = (lag * sample_rate_hz).round();
        if !(samples >= 1.0) {
            return invalid(format!("lag {lag} s rounds to fewer than 1 sample"));
        }
        if samples * 4.0 >= n_samples as f64 {
            return invalid(format!(
                "lag {lag} s ({samples} samples) must be below a quarter of the {n_samples} samples"
            ));
        }
        let samples = samples as usize;
        if !out.contains(&samples) {
            out.push(samples);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct SeparationResult {
    /// `n_sources × n_samples`, one separated component per row.
    pub sources: DMatrix<f64>,
    /// Estimated mixing matrix `A = pinv(Λ)·U`, `n_channels × n_sources`.
    pub mixing: DMatrix<f64>,
    /// `W = Uᵀ·Λ`, `n_sources × n_channels`.
    pub unmixing: DMatrix<f64>,
    /// `Λ`, `n_sources × n_channels`.
    pub whitener: DMatrix<f64>,
    pub noise_variance: f64,
    /// Lags actually used, after rounding and deduplication.
    pub lags_s: Vec<f64>,
    pub lags_samples: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

impl SeparationResult {
    pub fn n_sources(&self) -> usize {
        self.sources.nrows()
    }

    pub fn source(&self, i: usize) -> Vec<f64> {
        self.sources.row(i).iter().copied().collect()
    }
}

/// SOBI on `x` (`n_channels × n_samples`). Sources are computed from the
/// row-demeaned data, are ordered by descending mixing-column energy, and
/// each mixing column has its largest-magnitude entry positive.
pub fn sobi(
    x: &DMatrix<f64>,
    sample_rate_hz: f64,
    lags_s: &[f64],
    n_sources: usize,
) -> Result<SeparationResult> {
    sobi_with(
        x,
        sample_rate_hz,
        &SobiConfig {
            lags_s: lags_s.to_vec(),
            n_sources: Some(n_sources),
            ..SobiConfig::default()
        },
    )
}

pub fn sobi_with(
    x: &DMatrix<f64>,
    sample_rate_hz: f64,
    cfg: &SobiConfig,
) -> Result<SeparationResult> {
    if !(sample_rate_hz > 0.0) {
        return invalid("sample rate must be positive");
    }
    let n_sources = cfg.n_sources.unwrap_or(x.nrows());
    let lags_samples = lags_to_samples(&cfg.resolved_lags_s(), sample_rate_hz, x.ncols())?;

    let w = whiten(x, n_sources)?;
    let covs: Vec<DMatrix<f64>> = lags_samples
        .iter()
        .map(|&lag| lagged_covariance(&w.z, lag))
        .collect();
    let jd = joint_diagonalize(&covs, cfg.tol, cfg.max_sweeps)?;
    let u = &jd.rotation;

    let mut unmixing = u.transpose() * &w.whitener;
    // pinv(Λ) = P·diag(sqrt(λ_i − σ²)) since Λ has orthogonal rows.
    let mut pinv_whitener = w.eigenvectors.clone();
    for (j, mut col) in pinv_whitener.column_iter_mut().enumerate() {
        col *= (w.eigenvalues[j] - w.noise_variance).sqrt();
    }
    let mut mixing = pinv_whitener * u;

    let energy: Vec<f64> = mixing.column_iter().map(|c| c.norm_squared()).collect();
    let mut order: Vec<usize> = (0..n_sources).collect();
    order.sort_by(|&a, &b| energy[b].total_cmp(&energy[a]).then(a.cmp(&b)));
    mixing = DMatrix::from_columns(
        &order
            .iter()
            .map(|&i| mixing.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    unmixing = DMatrix::from_rows(
        &order
            .iter()
            .map(|&i| unmixing.row(i).into_owned())
            .collect::<Vec<_>>(),
    );

    for j in 0..n_sources {
        let col = mixing.column(j);
        let (imax, _) = col
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |(bi, bv), (i, v)| {
                if v.abs() > bv {
                    (i, v.abs())
                } else {
                    (bi, bv)
                }
            });
        if col[imax] < 0.0 {
            mixing.column_mut(j).neg_mut();
            unmixing.row_mut(j).neg_mut();
        }
    }

    let sources = &unmixing * demean_rows(x);
    Ok(SeparationResult {
        sources,
        mixing,
        unmixing,
        whitener: w.whitener,
        noise_variance: w.noise_variance,
        lags_s: lags_samples
            .iter()
            .map(|&l| l as f64 / sample_rate_hz)
            .collect(),
        lags_samples,
        eigenvalues: w.eigenvalues,
        sweeps: jd.sweeps,
        converged: jd.converged,
    })
}
