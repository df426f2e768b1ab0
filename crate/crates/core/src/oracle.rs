//! Independent verification paths: Monte Carlo replication of the error
//! formulas, a pivoted normal-equations least-squares solver that shares no
//! routine with the SVD pseudo-inverse, the per-level Haar coefficient
//! scheme, and exact growth tables for range workloads.
//!
//! Trials are partitioned over a fixed number of seed streams, so results
//! are bit-identical whether they run serially or in parallel.

use nalgebra::{Cholesky, DMatrix, DVector};
use rayon::prelude::*;

use crate::analysis::{error_profile, total_error};
use crate::error::{Error, Result};
use crate::matrix::{CountVector, QueryMatrix};
use crate::mechanism::{matrix_mechanism, PrivacyParams};
use crate::rng::{laplace_unit, rng_from, stream_seed};
use crate::strategy::{hierarchical_strategy, wavelet_strategy, Strategy};

/// Number of independent seed streams a Monte Carlo run is split into;
/// fixed so thread count never changes the result.
pub const MC_STREAMS: usize = 256;

/// Empirical vs predicted per-query mean squared errors.
#[derive(Clone, Debug)]
pub struct McReport {
    pub trials: usize,
    pub empirical_mse: Vec<f64>,
    pub predicted_mse: Vec<f64>,
    pub max_rel_err: f64,
}

fn finish_report(trials: usize, sums: Vec<f64>, predicted: Vec<f64>) -> McReport {
    let empirical: Vec<f64> = sums.iter().map(|s| s / trials as f64).collect();
    let max_rel_err = empirical
        .iter()
        .zip(predicted.iter())
        .map(|(&e, &p)| {
            if p > 1e-300 {
                (e - p).abs() / p
            } else {
                e.abs()
            }
        })
        .fold(0.0_f64, f64::max);
    McReport {
        trials,
        empirical_mse: empirical,
        predicted_mse: predicted,
        max_rel_err,
    }
}

fn stream_ranges(trials: usize) -> Vec<(u64, u64)> {
    let streams = MC_STREAMS.min(trials).max(1);
    let base = trials / streams;
    let extra = trials % streams;
    let mut out = Vec::with_capacity(streams);
    let mut start = 0u64;
    for s in 0..streams {
        let count = base + usize::from(s < extra);
        out.push((start, start + count as u64));
        start += count as u64;
    }
    out
}

/// Estimate the per-query mean squared error of the matrix mechanism by
/// simulation and compare against the closed-form predictions.
pub fn monte_carlo_error(
    w: &QueryMatrix,
    a: &Strategy,
    x: &CountVector,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<McReport> {
    let p = PrivacyParams::pure(epsilon)?;
    let predicted = total_error(a, w, epsilon)?.per_query;
    let exact = w.as_inner() * x.as_vector();
    // run once up front so dimension errors surface before the hot loop
    matrix_mechanism(w, a, x, &p, seed)?;

    let partial: Vec<Vec<f64>> = stream_ranges(trials)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut sums = vec![0.0_f64; w.rows()];
            for t in lo..hi {
                let ans = matrix_mechanism(w, a, x, &p, stream_seed(seed, t))
                    .expect("dimensions validated");
                for (s, (got, want)) in sums.iter_mut().zip(ans.values().iter().zip(exact.iter())) {
                    let d = got - want;
                    *s += d * d;
                }
            }
            sums
        })
        .collect();

    let mut sums = vec![0.0_f64; w.rows()];
    for part in partial {
        for (acc, v) in sums.iter_mut().zip(part.iter()) {
            *acc += v;
        }
    }
    Ok(finish_report(trials, sums, predicted))
}

/// Least squares by normal equations and Gaussian elimination with full
/// pivoting. Shares no routine with the pseudo-inverse path it
/// cross-checks. Reliable for condition numbers up to about 1e6.
#[allow(clippy::needless_range_loop)]
pub fn least_squares_oracle(a: &QueryMatrix, y: &DVector<f64>) -> Result<CountVector> {
    let (m, n) = (a.rows(), a.cols());
    if y.len() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            got: y.len(),
        });
    }
    // normal equations G x = b with G = A^t A, b = A^t y
    let mut g = vec![vec![0.0_f64; n]; n];
    let mut b = vec![0.0_f64; n];
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for r in 0..m {
                s += a.entry(r, i) * a.entry(r, j);
            }
            g[i][j] = s;
        }
        let mut s = 0.0;
        for r in 0..m {
            s += a.entry(r, i) * y[r];
        }
        b[i] = s;
    }

    let scale = g
        .iter()
        .flat_map(|row| row.iter())
        .fold(0.0_f64, |acc, &v| acc.max(v.abs()));
    let floor = 1e-13 * scale;

    // full pivoting: track the column permutation
    let mut col_of = (0..n).collect::<Vec<usize>>();
    for k in 0..n {
        let (mut pi, mut pj, mut pv) = (k, k, 0.0_f64);
        for i in k..n {
            for j in k..n {
                if g[i][j].abs() > pv {
                    pv = g[i][j].abs();
                    pi = i;
                    pj = j;
                }
            }
        }
        if pv <= floor {
            return Err(Error::IllConditioned { pivot: pv });
        }
        g.swap(k, pi);
        b.swap(k, pi);
        if pj != k {
            for row in g.iter_mut() {
                row.swap(k, pj);
            }
            col_of.swap(k, pj);
        }
        for i in k + 1..n {
            let factor = g[i][k] / g[k][k];
            for j in k..n {
                g[i][j] -= factor * g[k][j];
            }
            b[i] -= factor * b[k];
        }
    }
    let mut permuted = vec![0.0_f64; n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= g[k][j] * permuted[j];
        }
        permuted[k] = s / g[k][k];
    }
    let mut x = vec![0.0_f64; n];
    for k in 0..n {
        x[col_of[k]] = permuted[k];
    }
    CountVector::new(x)
}

/// The averaged per-level Haar coefficient matrix and its per-row weights
/// (subtree leaf counts). Scaling row `i` by `weights[i]` reproduces the
/// wavelet strategy exactly: all weights are powers of two, so the products
/// are exact in binary floating point.
pub fn haar_coefficient_scheme(n: usize) -> Result<(QueryMatrix, Vec<f64>)> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo { n });
    }
    let k = n.trailing_zeros() as usize;
    let mut a = DMatrix::zeros(n, n);
    let mut weights = Vec::with_capacity(n);
    for j in 0..n {
        a[(0, j)] = 1.0 / n as f64;
    }
    weights.push(n as f64);
    let mut r = 1;
    for level in 1..=k {
        let seg = n >> (level - 1);
        for start in (0..n).step_by(seg) {
            for j in start..start + seg / 2 {
                a[(r, j)] = 1.0 / seg as f64;
            }
            for j in start + seg / 2..start + seg {
                a[(r, j)] = -1.0 / seg as f64;
            }
            weights.push(seg as f64);
            r += 1;
        }
    }
    Ok((
        QueryMatrix::new(a)?.with_label(format!("haar-coefficients({n})")),
        weights,
    ))
}

/// Simulate the per-level Haar scheme (row `i` answered with Laplace scale
/// `(1 + log2 n) / (epsilon * weight_i)`), reconstruct the counts, and
/// compare the empirical reconstruction variance against the equal-noise
/// wavelet strategy's predicted covariance diagonal.
pub fn haar_equivalence_check(
    n: usize,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<McReport> {
    PrivacyParams::pure(epsilon)?;
    let (a_haar, weights) = haar_coefficient_scheme(n)?;
    let y = wavelet_strategy(n)?;

    // structural identity: diag(weights) * A_haar == Y_n, bit for bit
    let scaled = a_haar.scale_rows(&weights)?;
    assert_eq!(
        scaled.as_inner(),
        y.as_inner(),
        "Haar coefficient scheme must rescale to the wavelet strategy"
    );
    // Y^t inverts the coefficient matrix (rows of Y are orthogonal with
    // squared norms equal to the weights)
    let yt = y.as_inner().transpose();
    assert!(
        (a_haar.as_inner() * &yt - DMatrix::identity(n, n))
            .abs()
            .max()
            < 1e-12,
        "wavelet transpose must invert the coefficient matrix"
    );

    let sens = (n as f64).log2() + 1.0;
    let strategy = Strategy::new(y)?;
    let profile = error_profile(&strategy)?;
    let unit = 2.0 * sens * sens / (epsilon * epsilon);
    let predicted: Vec<f64> = (0..n).map(|i| unit * profile.matrix()[(i, i)]).collect();

    let scales: Vec<f64> = weights.iter().map(|w| sens / (epsilon * w)).collect();
    let partial: Vec<Vec<f64>> = stream_ranges(trials)
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut sums = vec![0.0_f64; n];
            let mut noise = DVector::zeros(n);
            for t in lo..hi {
                let mut rng = rng_from(stream_seed(seed, t));
                for (e, s) in noise.iter_mut().zip(scales.iter()) {
                    *e = s * laplace_unit(&mut rng);
                }
                // x_hat - x = Y^t * E
                let err = &yt * &noise;
                for (acc, v) in sums.iter_mut().zip(err.iter()) {
                    *acc += v * v;
                }
            }
            sums
        })
        .collect();

    let mut sums = vec![0.0_f64; n];
    for part in partial {
        for (acc, v) in sums.iter_mut().zip(part.iter()) {
            *acc += v;
        }
    }
    Ok(finish_report(trials, sums, predicted))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GrowthKind {
    Hier,
    Wavelet,
    Identity,
}

impl GrowthKind {
    pub fn name(&self) -> &'static str {
        match self {
            GrowthKind::Hier => "hier",
            GrowthKind::Wavelet => "wavelet",
            GrowthKind::Identity => "identity",
        }
    }
}

/// One grid point of a growth table (epsilon = 1).
#[derive(Clone, Debug)]
pub struct GrowthRow {
    pub n: usize,
    pub max_error: f64,
    pub total_error: f64,
    /// `max_error / log2(n)^3` for the tree strategies, `max_error / (2n)`
    /// for the identity (which should be exactly 1).
    pub normalized: f64,
}

#[derive(Clone, Debug)]
pub struct GrowthTable {
    pub kind: GrowthKind,
    pub rows: Vec<GrowthRow>,
    /// max/min of the normalized column across the grid.
    pub band_ratio: f64,
    /// largest normalized-value ratio between consecutive grid points.
    pub max_consecutive_ratio: f64,
}

/// Exact max and total error over all range queries, evaluated in O(1) per
/// range from two-dimensional prefix sums of the error profile.
pub fn range_sweep_errors(profile: &DMatrix<f64>, sensitivity: f64, epsilon: f64) -> (f64, f64) {
    let n = profile.nrows();
    let scale = 2.0 * sensitivity * sensitivity / (epsilon * epsilon);
    // inclusive 2-D prefix sums, one-based
    let mut pre: DMatrix<f64> = DMatrix::zeros(n + 1, n + 1);
    for i in 1..=n {
        for j in 1..=n {
            pre[(i, j)] =
                profile[(i - 1, j - 1)] + pre[(i - 1, j)] + pre[(i, j - 1)] - pre[(i - 1, j - 1)];
        }
    }
    let mut max = 0.0_f64;
    let mut total = 0.0_f64;
    for a in 1..=n {
        for b in a..=n {
            let term = pre[(b, b)] - pre[(a - 1, b)] - pre[(b, a - 1)] + pre[(a - 1, a - 1)];
            let err = scale * term;
            total += err;
            if err > max {
                max = err;
            }
        }
    }
    (max, total)
}

/// Exact error growth of a strategy family on the all-ranges workload over
/// a grid of domain sizes, with the growth-normalized column used to judge
/// Theta-stability. Epsilon is fixed at 1.
pub fn thm10_growth_check(kind: GrowthKind, n_list: &[usize]) -> Result<GrowthTable> {
    if n_list.is_empty() {
        return Err(Error::InvalidOptions("empty n list".into()));
    }
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        if n < 2 || !n.is_power_of_two() {
            return Err(Error::NotPowerOfTwo { n });
        }
        let (profile, sens) = match kind {
            GrowthKind::Identity => (DMatrix::identity(n, n), 1.0),
            GrowthKind::Hier => {
                let a = hierarchical_strategy(n)?;
                (gram_inverse(a.as_inner())?, (n as f64).log2() + 1.0)
            }
            GrowthKind::Wavelet => {
                let a = wavelet_strategy(n)?;
                (gram_inverse(a.as_inner())?, (n as f64).log2() + 1.0)
            }
        };
        let (max_error, total) = range_sweep_errors(&profile, sens, 1.0);
        let normalized = match kind {
            GrowthKind::Identity => max_error / (2.0 * n as f64),
            _ => max_error / (n as f64).log2().powi(3),
        };
        rows.push(GrowthRow {
            n,
            max_error,
            total_error: total,
            normalized,
        });
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for r in &rows {
        lo = lo.min(r.normalized);
        hi = hi.max(r.normalized);
    }
    let mut consecutive = 1.0_f64;
    for pair in rows.windows(2) {
        let r = pair[1].normalized / pair[0].normalized;
        consecutive = consecutive.max(r.max(1.0 / r));
    }
    Ok(GrowthTable {
        kind,
        rows,
        band_ratio: hi / lo,
        max_consecutive_ratio: consecutive,
    })
}

fn gram_inverse(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = a.transpose() * a;
    let chol = Cholesky::new(g).ok_or(Error::RankDeficient {
        rank: 0,
        cols: a.ncols(),
    })?;
    Ok(chol.inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::max_error;
    use crate::strategy::identity_strategy;
    use crate::workload::all_range_queries;
    use approx::assert_relative_eq;

    #[test]
    fn lsq_oracle_exact_on_consistent_systems() {
        let h4 = hierarchical_strategy(4).unwrap();
        let x = DVector::from_vec(vec![1.0, -2.0, 3.5, 4.0]);
        let y = h4.as_inner() * &x;
        let got = least_squares_oracle(&h4, &y).unwrap();
        for (g, w) in got.iter().zip(x.iter()) {
            assert_relative_eq!(g, w, max_relative = 1e-10);
        }
    }

    #[test]
    fn lsq_oracle_agrees_with_estimate_counts() {
        let h4 = hierarchical_strategy(4).unwrap();
        let a = Strategy::new(h4.clone()).unwrap();
        let mut rng = rng_from(3);
        for _ in 0..20 {
            let y = DVector::from_fn(7, |_, _| laplace_unit(&mut rng));
            let via_oracle = least_squares_oracle(&h4, &y).unwrap();
            let via_pinv = a.pseudo_inverse() * &y;
            for (g, w) in via_oracle.iter().zip(via_pinv.iter()) {
                assert!((g - w).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn lsq_oracle_residual_is_orthogonal() {
        let h4 = hierarchical_strategy(4).unwrap();
        let mut rng = rng_from(8);
        let y = DVector::from_fn(7, |_, _| laplace_unit(&mut rng));
        let xhat = least_squares_oracle(&h4, &y).unwrap();
        let residual = &y - h4.as_inner() * xhat.as_vector();
        let normal = h4.as_inner().transpose() * residual;
        assert!(normal.abs().max() < 1e-8);
    }

    #[test]
    fn lsq_oracle_rejects_singular_systems() {
        let bad = QueryMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let y = DVector::from_vec(vec![1.0, 2.0]);
        assert!(matches!(
            least_squares_oracle(&bad, &y),
            Err(Error::IllConditioned { .. })
        ));
    }

    #[test]
    fn monte_carlo_tracks_predictions_at_small_scale() {
        let i4 = Strategy::new(identity_strategy(4).unwrap()).unwrap();
        let w = identity_strategy(4).unwrap();
        let x = CountVector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let report = monte_carlo_error(&w, &i4, &x, 1.0, 100_000, 1).unwrap();
        for p in &report.predicted_mse {
            assert_relative_eq!(*p, 2.0, max_relative = 1e-12);
        }
        assert!(report.max_rel_err < 0.05, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let i2 = Strategy::new(identity_strategy(2).unwrap()).unwrap();
        let w = identity_strategy(2).unwrap();
        let x = CountVector::zeros(2).unwrap();
        let a = monte_carlo_error(&w, &i2, &x, 1.0, 50_000, 9).unwrap();
        let b = monte_carlo_error(&w, &i2, &x, 1.0, 50_000, 9).unwrap();
        assert_eq!(a.empirical_mse, b.empirical_mse);
    }

    #[test]
    fn haar_structure_is_exact() {
        for n in [2usize, 4, 8, 16] {
            let (a, weights) = haar_coefficient_scheme(n).unwrap();
            let scaled = a.scale_rows(&weights).unwrap();
            let y = wavelet_strategy(n).unwrap();
            assert_eq!(scaled.as_inner(), y.as_inner(), "n = {n}");
        }
    }

    #[test]
    fn haar_covariance_small_scale() {
        // n = 2: both schemes give per-count variance 2 * (1+1)^2 * (1/2) = 4
        let report = haar_equivalence_check(2, 1.0, 200_000, 5).unwrap();
        for p in &report.predicted_mse {
            assert_relative_eq!(*p, 4.0, max_relative = 1e-12);
        }
        assert!(report.max_rel_err < 0.05, "rel err {}", report.max_rel_err);
    }

    #[test]
    fn growth_identity_is_exactly_linear() {
        let table = thm10_growth_check(GrowthKind::Identity, &[16, 32, 64, 128]).unwrap();
        for row in &table.rows {
            assert_eq!(row.normalized, 1.0, "n = {}", row.n);
        }
        assert_eq!(table.band_ratio, 1.0);
    }

    #[test]
    fn range_sweep_matches_generic_path() {
        for n in [4usize, 8, 16] {
            let h = Strategy::new(hierarchical_strategy(n).unwrap()).unwrap();
            let w = all_range_queries(n).unwrap();
            let generic_max = max_error(&h, &w, 1.0).unwrap();
            let generic_total = total_error(&h, &w, 1.0).unwrap().total;
            let profile = error_profile(&h).unwrap();
            let (max, total) = range_sweep_errors(profile.matrix(), h.sensitivity(), 1.0);
            assert_relative_eq!(max, generic_max, max_relative = 1e-9);
            assert_relative_eq!(total, generic_total, max_relative = 1e-9);
        }
    }

    #[test]
    fn growth_band_holds_at_desk_scale() {
        let ns = [16usize, 32, 64, 128];
        for kind in [GrowthKind::Hier, GrowthKind::Wavelet] {
            let table = thm10_growth_check(kind, &ns).unwrap();
            assert!(table.band_ratio < 2.0, "{:?}: {}", kind, table.band_ratio);
            assert!(table.max_consecutive_ratio < 2.0);
        }
        // wavelet vs hier totals stay within a factor-4 band
        let h = thm10_growth_check(GrowthKind::Hier, &ns).unwrap();
        let y = thm10_growth_check(GrowthKind::Wavelet, &ns).unwrap();
        for (hr, yr) in h.rows.iter().zip(y.rows.iter()) {
            let r = yr.total_error / hr.total_error;
            assert!((0.25..=4.0).contains(&r), "total ratio {r}");
        }
    }

    #[test]
    fn growth_rejects_bad_grids() {
        assert!(matches!(
            thm10_growth_check(GrowthKind::Hier, &[12]),
            Err(Error::NotPowerOfTwo { n: 12 })
        ));
        assert!(matches!(
            thm10_growth_check(GrowthKind::Hier, &[]),
            Err(Error::InvalidOptions(_))
        ));
    }
}
