//! Independent reference computations shared by the integration tests and
//! the acceptance suite.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn gaussian(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub fn demeaned(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

pub fn random_orthogonal(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q()
}

pub fn corr(a: &[f64], b: &[f64]) -> f64 {
    let ma = a.iter().sum::<f64>() / a.len() as f64;
    let mb = b.iter().sum::<f64>() / b.len() as f64;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        ab += (x - ma) * (y - mb);
        aa += (x - ma) * (x - ma);
        bb += (y - mb) * (y - mb);
    }
    ab / (aa * bb).sqrt()
}

/// Greedy matching on |corr|: repeatedly takes the best remaining pair.
/// Returns `(estimate_row, truth_row, |corr|)` triples.
pub fn greedy_match(est: &DMatrix<f64>, truth: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    };
    let (e, t) = (rows(est), rows(truth));
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for (i, ei) in e.iter().enumerate() {
        for (j, tj) in t.iter().enumerate() {
            pairs.push((i, j, corr(ei, tj).abs()));
        }
    }
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2));
    let (mut used_e, mut used_t) = (vec![false; e.len()], vec![false; t.len()]);
    let mut out = Vec::new();
    for (i, j, c) in pairs {
        if !used_e[i] && !used_t[j] {
            used_e[i] = true;
            used_t[j] = true;
            out.push((i, j, c));
        }
    }
    out
}

/// True when `m` is a signed permutation matrix within `tol`.
pub fn is_signed_permutation(m: &DMatrix<f64>, tol: f64) -> bool {
    let n = m.nrows();
    let mut seen = vec![false; n];
    for i in 0..n {
        let (j, v) =
            (0..n)
                .map(|j| (j, m[(i, j)].abs()))
                .fold((0, 0.0), |b, c| if c.1 > b.1 { c } else { b });
        if (v - 1.0).abs() > tol || seen[j] {
            return false;
        }
        seen[j] = true;
        for k in 0..n {
            if k != j && m[(i, k)].abs() > tol {
                return false;
            }
        }
    }
    true
}

/// Dense convolution matrix over the full support: row `n` (0..T+N−1),
/// column `(i, l)` holds `x_i(n − l)` of the demeaned reference, zero outside.
pub fn convolution_design(refs: &[&[f64]], n_taps: usize) -> DMatrix<f64> {
    let t = refs[0].len();
    let xs: Vec<Vec<f64>> = refs.iter().map(|r| demeaned(r)).collect();
    DMatrix::from_fn(t + n_taps - 1, refs.len() * n_taps, |n, col| {
        let (i, l) = (col / n_taps, col % n_taps);
        if n >= l && n - l < t {
            xs[i][n - l]
        } else {
            0.0
        }
    })
}

/// Least-squares taps minimizing the full-support residual energy, solved by SVD.
pub fn least_squares_taps(refs: &[&[f64]], d: &[f64], n_taps: usize) -> DVector<f64> {
    let a = convolution_design(refs, n_taps);
    let dc = demeaned(d);
    let target = DVector::from_fn(a.nrows(), |n, _| if n < dc.len() { dc[n] } else { 0.0 });
    a.svd(true, true).solve(&target, 1e-14).unwrap()
}

/// `e = d − Σ_i h_i * x_i` over the full convolution support, demeaned inputs.
pub fn full_support_residual(refs: &[&[f64]], d: &[f64], taps: &DVector<f64>) -> Vec<f64> {
    let n_taps = taps.len() / refs.len();
    let a = convolution_design(refs, n_taps);
    let dc = demeaned(d);
    let fitted = a * taps;
    (0..fitted.len())
        .map(|n| if n < dc.len() { dc[n] } else { 0.0 } - fitted[n])
        .collect()
}

/// `1/T Σ_n e(n)·x(n − k)` for the demeaned reference `x` of length `T`.
pub fn cross_with_residual(x: &[f64], e: &[f64], k: usize) -> f64 {
    let xc = demeaned(x);
    let t = xc.len();
    (k..e.len())
        .filter(|n| n - k < t)
        .map(|n| e[n] * xc[n - k])
        .sum::<f64>()
        / t as f64
}

/// Narrowband Gaussian process from a two-pole resonator at `f0` (cycles per
/// sample) with pole radius `r`.
pub fn resonator(n: usize, f0: f64, r: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a1 = 2.0 * r * (2.0 * std::f64::consts::PI * f0).cos();
    let a2 = -r * r;
    let w = gaussian(n + 2000, rng);
    let mut y = vec![0.0; w.len()];
    for i in 0..w.len() {
        y[i] = w[i]
            + if i > 0 { a1 * y[i - 1] } else { 0.0 }
            + if i > 1 { a2 * y[i - 2] } else { 0.0 };
    }
    y.split_off(2000)
}

/// Power of `x` at frequency `f` (cycles per sample) from a single DFT bin.
pub fn tone_power(x: &[f64], f: f64) -> f64 {
    let (mut re, mut im) = (0.0, 0.0);
    for (n, v) in x.iter().enumerate() {
        let ph = 2.0 * std::f64::consts::PI * f * n as f64;
        re += v * ph.cos();
        im -= v * ph.sin();
    }
    (re * re + im * im) / (x.len() as f64).powi(2)
}

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random instance: colored references and a primary built from them
/// through random FIRs plus independent noise.
pub fn wiener_instance(seed: u64) -> (Vec<Vec<f64>>, Vec<f64>, usize) {
    let mut rng = seeded(seed);
    let m = rng.random_range(1..=3);
    let n = rng.random_range(1..=8);
    let t = rng.random_range((4 * m * n).max(16)..=512);
    let refs: Vec<Vec<f64>> = (0..m)
        .map(|_| {
            let w = gaussian(t, &mut rng);
            let a: f64 = rng.random_range(-0.9..0.9);
            let mut x = vec![0.0; t];
            for i in 0..t {
                x[i] = w[i] + if i > 0 { a * x[i - 1] } else { 0.0 };
            }
            x
        })
        .collect();
    let noise = gaussian(t, &mut rng);
    let mut d: Vec<f64> = noise.iter().map(|v| 0.3 * v).collect();
    for x in &refs {
        let taps: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        for i in 0..t {
            for (k, h) in taps.iter().enumerate() {
                if i >= k {
                    d[i] += h * x[i - k];
                }
            }
        }
    }
    (refs, d, n)
}
