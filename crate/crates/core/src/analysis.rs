//! Closed-form error accounting for the matrix mechanism.
//!
//! The mean squared error of answering query `w` through strategy `A` at
//! budget `epsilon` is `(2/eps^2) * sens(A)^2 * w (A^t A)^{-1} w^t`. The
//! matrix `(A^t A)^{-1}` is the strategy's error profile; its quadratic form
//! is the only place the query enters, so everything here reduces to careful
//! handling of that one matrix.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrix::{spectral, QueryMatrix, SpectralDecomposition};
use crate::strategy::Strategy;

/// Symmetric positive-definite `(A^t A)^{-1}` together with its spectral
/// factorization.
#[derive(Clone, Debug)]
pub struct ErrorProfile {
    matrix: DMatrix<f64>,
    spectral: SpectralDecomposition,
}

impl ErrorProfile {
    /// Validate symmetry and positive definiteness of a candidate profile.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        let dec = spectral(&matrix)?;
        let min = dec.eigvals()[dec.eigvals().len() - 1];
        if min <= 0.0 {
            return Err(Error::NotPositiveDefinite { eigenvalue: min });
        }
        Ok(Self {
            matrix,
            spectral: dec,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn spectral(&self) -> &SpectralDecomposition {
        &self.spectral
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Quadratic form `w M w^t`.
    pub fn profile_term(&self, w: &DVector<f64>) -> Result<f64> {
        if w.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: w.len(),
            });
        }
        Ok((w.transpose() * &self.matrix * w)[(0, 0)])
    }

    /// Mean squared error of `w` under a strategy with this profile and the
    /// given sensitivity.
    pub fn query_error(&self, w: &DVector<f64>, sensitivity: f64, epsilon: f64) -> Result<f64> {
        Ok(2.0 / (epsilon * epsilon) * sensitivity * sensitivity * self.profile_term(w)?)
    }
}

/// Exact per-query and aggregate errors for a workload.
#[derive(Clone, Debug)]
pub struct ErrorReport {
    pub per_query: Vec<f64>,
    pub total: f64,
    pub max: f64,
    pub epsilon: f64,
    pub strategy_id: String,
    pub workload_id: String,
}

/// The error profile `(A^t A)^{-1}`, computed by a symmetric (Cholesky)
/// solve of `A^t A` against the identity rather than explicit inversion.
pub fn error_profile(a: &Strategy) -> Result<ErrorProfile> {
    let n = a.cols();
    let chol = Cholesky::new(a.gram().clone()).ok_or(Error::RankDeficient { rank: 0, cols: n })?;
    let mut inv = DMatrix::identity(n, n);
    chol.solve_mut(&mut inv);
    // enforce exact symmetry lost to rounding
    let inv = (&inv + inv.transpose()) * 0.5;
    ErrorProfile::new(inv)
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(Error::InvalidEpsilon(epsilon));
    }
    Ok(())
}

/// Mean squared error of a single linear query answered through `a`.
pub fn query_error(a: &Strategy, w: &DVector<f64>, epsilon: f64) -> Result<f64> {
    check_epsilon(epsilon)?;
    error_profile(a)?.query_error(w, a.sensitivity(), epsilon)
}

/// Per-query errors for every row of `w`, plus their sum and max.
pub fn total_error(a: &Strategy, w: &QueryMatrix, epsilon: f64) -> Result<ErrorReport> {
    check_epsilon(epsilon)?;
    if w.cols() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            got: w.cols(),
        });
    }
    let profile = error_profile(a)?;
    let scale = 2.0 / (epsilon * epsilon) * a.sensitivity() * a.sensitivity();
    // diag(W M W^t) without forming the full product
    let wm = w.as_inner() * profile.matrix();
    let mut per_query = Vec::with_capacity(w.rows());
    for i in 0..w.rows() {
        let term: f64 = (0..w.cols()).map(|j| wm[(i, j)] * w.entry(i, j)).sum();
        per_query.push(scale * term);
    }
    let total = per_query.iter().sum();
    let max = per_query.iter().fold(0.0_f64, |a, &b| a.max(b));
    Ok(ErrorReport {
        per_query,
        total,
        max,
        epsilon,
        strategy_id: a.id().to_string(),
        workload_id: w.label().to_string(),
    })
}

/// Largest per-query error over the workload rows.
pub fn max_error(a: &Strategy, w: &QueryMatrix, epsilon: f64) -> Result<f64> {
    Ok(total_error(a, w, epsilon)?.max)
}

/// Whether two strategies have the same error profile within `tol` (max-abs
/// entry difference).
pub fn profile_equivalent(a: &Strategy, b: &Strategy, tol: f64) -> Result<bool> {
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            got: b.cols(),
        });
    }
    let pa = error_profile(a)?;
    let pb = error_profile(b)?;
    Ok((pa.matrix() - pb.matrix()).abs().max() <= tol)
}

/// Build an `m x n` strategy achieving profile `M`: rows are
/// `diag(1/sqrt(lambda_i)) * P_M^t` padded with zero rows (the rotation is
/// fixed to the identity; sensitivity-reducing rotations live in the
/// optimizer).
pub fn strategy_from_profile(m: &ErrorProfile, rows: usize) -> Result<Strategy> {
    let n = m.dim();
    if rows < n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: rows,
        });
    }
    let dec = m.spectral();
    let mut a = DMatrix::zeros(rows, n);
    for i in 0..n {
        let scale = 1.0 / dec.eigvals()[i].sqrt();
        for j in 0..n {
            a[(i, j)] = scale * dec.eigvecs()[(j, i)];
        }
    }
    Strategy::new(QueryMatrix::new(a)?.with_label(format!("from-profile({n})")))
}

/// Singular value bound: `sqrt(sum delta_i^2)` over the strategy's singular
/// values; the radius of the smallest L1 ball covering the column ellipsoid
/// over all rotations. Satisfies `value <= sqrt(n) * l1_sensitivity(A)`.
pub fn svb_sensitivity(a: &Strategy) -> f64 {
    a.svd().values().iter().map(|s| s * s).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{hierarchical_strategy, identity_strategy, wavelet_strategy, Strategy};
    use crate::workload::all_range_queries;
    use approx::assert_relative_eq;

    fn strat(q: QueryMatrix) -> Strategy {
        Strategy::new(q).unwrap()
    }

    fn h4() -> Strategy {
        strat(hierarchical_strategy(4).unwrap())
    }

    fn y4() -> Strategy {
        strat(wavelet_strategy(4).unwrap())
    }

    fn i4() -> Strategy {
        strat(identity_strategy(4).unwrap())
    }

    #[test]
    fn profiles_match_fixtures() {
        let pi = error_profile(&i4()).unwrap();
        assert!((pi.matrix() - DMatrix::identity(4, 4)).abs().max() < 1e-12);

        let ph = error_profile(&h4()).unwrap();
        let expect_h = DMatrix::from_row_slice(
            4,
            4,
            &[
                13.0, -8.0, -1.0, -1.0, -8.0, 13.0, -1.0, -1.0, -1.0, -1.0, 13.0, -8.0, -1.0, -1.0,
                -8.0, 13.0,
            ],
        ) / 21.0;
        assert!((ph.matrix() - expect_h).abs().max() < 1e-12);

        let py = error_profile(&y4()).unwrap();
        let expect_y = DMatrix::from_row_slice(
            4,
            4,
            &[
                3.0, -1.0, 0.0, 0.0, -1.0, 3.0, 0.0, 0.0, 0.0, 0.0, 3.0, -1.0, 0.0, 0.0, -1.0, 3.0,
            ],
        ) / 8.0;
        assert!((py.matrix() - expect_y).abs().max() < 1e-12);
    }

    #[test]
    fn query_error_examples() {
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0]);
        assert_relative_eq!(
            query_error(&i4(), &e1, 1.0).unwrap(),
            2.0,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            query_error(&h4(), &e1, 1.0).unwrap(),
            78.0 / 7.0,
            max_relative = 1e-12
        );
        // all-ones on Y_4: the profile term sums all entries of the profile,
        // (4 + 4) / 8 = 1, so the error is 2 * 9 * 1 = 18
        let ones = DVector::from_element(4, 1.0);
        assert_relative_eq!(
            query_error(&y4(), &ones, 1.0).unwrap(),
            18.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn total_error_examples() {
        // identity strategy: (2/eps^2) trace(W^t W)
        let w = all_range_queries(4).unwrap();
        let trace = (w.as_inner().transpose() * w.as_inner()).trace();
        let rep = total_error(&i4(), &w, 1.0).unwrap();
        assert_relative_eq!(rep.total, 2.0 * trace, max_relative = 1e-12);

        // full-rank square workload as its own strategy: (2/eps^2) sens^2 n
        let y = wavelet_strategy(4).unwrap();
        let rep = total_error(&y4(), &y, 2.0).unwrap();
        assert_relative_eq!(rep.total, 2.0 / 4.0 * 9.0 * 4.0, max_relative = 1e-12);

        // H_4 answering the identity workload
        let id = identity_strategy(4).unwrap();
        let rep = total_error(&h4(), &id, 1.0).unwrap();
        assert_relative_eq!(rep.total, 18.0 * 52.0 / 21.0, max_relative = 1e-12);
        assert_relative_eq!(
            rep.per_query.iter().sum::<f64>(),
            rep.total,
            max_relative = 1e-9
        );
        assert_relative_eq!(rep.max, 18.0 * 13.0 / 21.0, max_relative = 1e-12);
    }

    #[test]
    fn total_matches_trace_identity() {
        // total = (2/eps^2) sens^2 trace((A^t A)^{-1} W^t W)
        let w = all_range_queries(4).unwrap();
        for a in [h4(), y4(), i4()] {
            let rep = total_error(&a, &w, 1.5).unwrap();
            let profile = error_profile(&a).unwrap();
            let tr = (profile.matrix() * (w.as_inner().transpose() * w.as_inner())).trace();
            let expect = 2.0 / (1.5 * 1.5) * a.sensitivity() * a.sensitivity() * tr;
            assert_relative_eq!(rep.total, expect, max_relative = 1e-9);
        }
    }

    #[test]
    fn max_error_examples() {
        // identity on ranges: the full-domain range dominates, w w^t = n
        for n in [2usize, 4, 8] {
            let w = all_range_queries(n).unwrap();
            let a = strat(identity_strategy(n).unwrap());
            assert_relative_eq!(
                max_error(&a, &w, 1.0).unwrap(),
                2.0 * n as f64,
                max_relative = 1e-12
            );
        }
        let w = all_range_queries(4).unwrap();
        let m = max_error(&h4(), &w, 1.0).unwrap();
        let single = query_error(&h4(), &DVector::from_vec(vec![0.0, 1.0, 1.0, 0.0]), 1.0).unwrap();
        assert!(m >= single);
    }

    #[test]
    fn profile_equivalence_examples() {
        let neg = strat(QueryMatrix::new(-h4().matrix().as_inner().clone()).unwrap());
        assert!(profile_equivalent(&h4(), &neg, 1e-10).unwrap());
        assert!(!profile_equivalent(&i4(), &h4(), 1e-2).unwrap());

        // the printed 2 d.p. profile-equivalent variant of Y_4
        let yprime = strat(
            QueryMatrix::from_rows(&[
                vec![1.73, 0.58, 0.0, 0.0],
                vec![0.0, 1.63, 0.0, 0.0],
                vec![0.0, 0.0, 1.73, 0.58],
                vec![0.0, 0.0, 0.0, 1.63],
            ])
            .unwrap(),
        );
        assert!(profile_equivalent(&y4(), &yprime, 1e-2).unwrap());
    }

    #[test]
    fn strategy_from_profile_roundtrips() {
        let pi = ErrorProfile::new(DMatrix::identity(3, 3)).unwrap();
        let a = strategy_from_profile(&pi, 3).unwrap();
        assert!(
            (a.matrix().as_inner() - DMatrix::identity(3, 3))
                .abs()
                .max()
                < 1e-12
        );

        let py = error_profile(&y4()).unwrap();
        let a = strategy_from_profile(&py, 4).unwrap();
        assert!(profile_equivalent(&a, &y4(), 1e-8).unwrap());

        let ph = error_profile(&h4()).unwrap();
        let a = strategy_from_profile(&ph, 7).unwrap();
        assert_eq!(a.rows(), 7);
        for i in 4..7 {
            for j in 0..4 {
                assert_eq!(a.matrix().entry(i, j), 0.0);
            }
        }
        assert!(profile_equivalent(&a, &h4(), 1e-8).unwrap());
    }

    #[test]
    fn svb_sensitivity_examples() {
        for n in [2usize, 4, 8] {
            let a = strat(identity_strategy(n).unwrap());
            assert_relative_eq!(svb_sensitivity(&a), (n as f64).sqrt(), max_relative = 1e-12);
        }
        let v = svb_sensitivity(&y4());
        assert_relative_eq!(v, 12.0_f64.sqrt(), max_relative = 1e-12);
        // never exceeds sqrt(n) times the L1 sensitivity
        assert!(v <= 2.0 * y4().sensitivity());
    }

    #[test]
    fn scalar_invariance_of_query_error() {
        let w = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let base = query_error(&h4(), &w, 1.0).unwrap();
        for k in [-3.0, 0.5, 10.0] {
            let scaled = strat(QueryMatrix::new(h4().matrix().as_inner() * k).unwrap());
            let got = query_error(&scaled, &w, 1.0).unwrap();
            assert_relative_eq!(got, base, max_relative = 1e-9);
        }
    }

    #[test]
    fn rejects_bad_epsilon_and_dims() {
        assert!(matches!(
            query_error(&i4(), &DVector::zeros(4), 0.0),
            Err(Error::InvalidEpsilon(_))
        ));
        assert!(matches!(
            total_error(&i4(), &all_range_queries(3).unwrap(), 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            ErrorProfile::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0])),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }
}
