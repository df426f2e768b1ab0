//! The randomized answering algorithms: Laplace mechanism, Gaussian
//! mechanism, matrix mechanism, and least-squares count estimation.
//!
//! Everything is deterministic given a seed; `NoisyAnswer` carries the seed
//! and noise scale so runs can be audited and replayed.

use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::{CountVector, QueryMatrix};
use crate::rng::{laplace_unit, rng_from};
use crate::strategy::Strategy;

/// Privacy budget. `epsilon` alone gives pure differential privacy; adding
/// `delta` enables the Gaussian mechanism, which requires
/// `epsilon <= 8 ln(2/delta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrivacyParams {
    epsilon: f64,
    delta: Option<f64>,
}

impl PrivacyParams {
    pub fn pure(epsilon: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(Self {
            epsilon,
            delta: None,
        })
    }

    pub fn approximate(epsilon: f64, delta: f64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon <= 0.0 {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(Error::InvalidDelta(delta));
        }
        let bound = 8.0 * (2.0 / delta).ln();
        if epsilon > bound {
            return Err(Error::EpsilonTooLarge { epsilon, bound });
        }
        Ok(Self {
            epsilon,
            delta: Some(delta),
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> Option<f64> {
        self.delta
    }
}

/// Output of a mechanism run: the noisy answers plus provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct NoisyAnswer {
    values: DVector<f64>,
    strategy_id: String,
    noise_scale: f64,
    seed: u64,
}

impl NoisyAnswer {
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.len() == 0
    }

    pub fn strategy_id(&self) -> &str {
        &self.strategy_id
    }

    /// Per-draw scale of the noise distribution (Laplace scale, or the
    /// per-entry standard deviation for the Gaussian mechanism).
    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
}

/// `W x + (sensitivity/epsilon) * b` with `b` i.i.d. Laplace(1) from the
/// seeded generator. Epsilon-differentially private.
pub fn laplace_mechanism(
    w: &QueryMatrix,
    x: &CountVector,
    p: &PrivacyParams,
    seed: u64,
) -> Result<NoisyAnswer> {
    if w.cols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.cols(),
            got: x.len(),
        });
    }
    let scale = w.l1_sensitivity() / p.epsilon();
    let mut values = w.as_inner() * x.as_vector();
    let mut rng = rng_from(seed);
    for v in values.iter_mut() {
        *v += scale * laplace_unit(&mut rng);
    }
    Ok(NoisyAnswer {
        values,
        strategy_id: w.label().to_string(),
        noise_scale: scale,
        seed,
    })
}

/// `W x + (l2_column_bound/epsilon) * b` with `b` i.i.d. N(0, 8 ln(2/delta)).
/// (epsilon, delta)-differentially private; requires `delta` and
/// `epsilon <= 8 ln(2/delta)`.
pub fn gaussian_mechanism(
    w: &QueryMatrix,
    x: &CountVector,
    p: &PrivacyParams,
    seed: u64,
) -> Result<NoisyAnswer> {
    let delta = p.delta().ok_or(Error::MissingDelta)?;
    let bound = 8.0 * (2.0 / delta).ln();
    if p.epsilon() > bound {
        return Err(Error::EpsilonTooLarge {
            epsilon: p.epsilon(),
            bound,
        });
    }
    if w.cols() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: w.cols(),
            got: x.len(),
        });
    }
    // per-entry standard deviation: sqrt(8 ln(2/delta)) * ||W||_2 / epsilon
    let sigma = bound.sqrt() * w.l2_column_bound() / p.epsilon();
    let mut values = w.as_inner() * x.as_vector();
    let mut rng = rng_from(seed);
    for v in values.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v += sigma * z;
    }
    Ok(NoisyAnswer {
        values,
        strategy_id: w.label().to_string(),
        noise_scale: sigma,
        seed,
    })
}

/// Answer workload `W` through strategy `A`: run the Laplace mechanism on
/// `A`, reconstruct the counts by least squares, and return `W x_hat`.
/// Identical bits to `W * estimate_counts(A, laplace_mechanism(A, x))` for
/// the same seed.
pub fn matrix_mechanism(
    w: &QueryMatrix,
    a: &Strategy,
    x: &CountVector,
    p: &PrivacyParams,
    seed: u64,
) -> Result<NoisyAnswer> {
    if w.cols() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            got: w.cols(),
        });
    }
    let noisy = laplace_mechanism(a.matrix(), x, p, seed)?;
    let xhat = a.pseudo_inverse() * noisy.values();
    Ok(NoisyAnswer {
        values: w.as_inner() * xhat,
        strategy_id: a.id().to_string(),
        noise_scale: noisy.noise_scale(),
        seed,
    })
}

/// Least-squares estimate of the counts from noisy strategy answers:
/// `x_hat = A^+ y`. Exact when `y = A x`.
pub fn estimate_counts(a: &Strategy, y: &NoisyAnswer) -> Result<CountVector> {
    if y.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            expected: a.rows(),
            got: y.len(),
        });
    }
    CountVector::from_vector(a.pseudo_inverse() * y.values())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_seed;
    use crate::strategy::{hierarchical_strategy, identity_strategy, wavelet_strategy};
    use approx::assert_relative_eq;

    fn params(eps: f64) -> PrivacyParams {
        PrivacyParams::pure(eps).unwrap()
    }

    #[test]
    fn zero_matrix_answers_exactly() {
        let w = QueryMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 0.0]]).unwrap();
        let x = CountVector::new(vec![5.0, 7.0]).unwrap();
        let ans = laplace_mechanism(&w, &x, &params(1.0), 3).unwrap();
        assert_eq!(ans.noise_scale(), 0.0);
        assert!(ans.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn laplace_noise_scale_is_sensitivity_over_epsilon() {
        let h4 = hierarchical_strategy(4).unwrap();
        let x = CountVector::zeros(4).unwrap();
        let ans = laplace_mechanism(&h4, &x, &params(1.0), 0).unwrap();
        assert_eq!(ans.noise_scale(), 3.0);
        assert!(matches!(
            laplace_mechanism(&h4, &CountVector::zeros(3).unwrap(), &params(1.0), 0),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn same_seed_same_bits() {
        let h4 = hierarchical_strategy(4).unwrap();
        let x = CountVector::new(vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = laplace_mechanism(&h4, &x, &params(0.5), 99).unwrap();
        let b = laplace_mechanism(&h4, &x, &params(0.5), 99).unwrap();
        assert_eq!(a, b);
        let c = laplace_mechanism(&h4, &x, &params(0.5), 100).unwrap();
        assert_ne!(a.values(), c.values());
    }

    #[test]
    fn laplace_identity_variance_is_two() {
        // Var(Laplace(1)) = 2; I_4 at eps = 1 keeps the unit scale
        let i4 = identity_strategy(4).unwrap();
        let x = CountVector::zeros(4).unwrap();
        let trials = 200_000;
        let mut sumsq = vec![0.0; 4];
        for t in 0..trials {
            let ans = laplace_mechanism(&i4, &x, &params(1.0), stream_seed(11, t)).unwrap();
            for (s, v) in sumsq.iter_mut().zip(ans.values().iter()) {
                *s += v * v;
            }
        }
        for s in sumsq {
            let var = s / trials as f64;
            assert!((var - 2.0).abs() / 2.0 < 0.05, "var {var}");
        }
    }

    #[test]
    fn gaussian_requires_delta_and_small_epsilon() {
        let h4 = hierarchical_strategy(4).unwrap();
        let x = CountVector::zeros(4).unwrap();
        assert!(matches!(
            gaussian_mechanism(&h4, &x, &params(1.0), 0),
            Err(Error::MissingDelta)
        ));
        // 8 ln 4 ~ 11.09 < 100
        assert!(matches!(
            PrivacyParams::approximate(100.0, 0.5),
            Err(Error::EpsilonTooLarge { .. })
        ));
    }

    #[test]
    fn gaussian_variance_matches_formula() {
        let i2 = identity_strategy(2).unwrap();
        let x = CountVector::zeros(2).unwrap();
        let delta = 1e-5;
        let p = PrivacyParams::approximate(1.0, delta).unwrap();
        let predicted = 8.0 * (2.0 / delta).ln();
        let trials = 200_000;
        let mut sumsq = 0.0;
        for t in 0..trials {
            let ans = gaussian_mechanism(&i2, &x, &p, stream_seed(5, t)).unwrap();
            sumsq += ans.values()[0] * ans.values()[0];
        }
        let var = sumsq / trials as f64;
        assert!(
            (var - predicted).abs() / predicted < 0.05,
            "var {var} vs {predicted}"
        );
    }

    #[test]
    fn matrix_mechanism_matches_post_processing_exactly() {
        let ranges = crate::workload::all_range_queries(4).unwrap();
        let a = Strategy::new(hierarchical_strategy(4).unwrap()).unwrap();
        let x = CountVector::new(vec![3.0, 1.0, 4.0, 1.0]).unwrap();
        let p = params(2.0);
        let mm = matrix_mechanism(&ranges, &a, &x, &p, 42).unwrap();
        let y = laplace_mechanism(a.matrix(), &x, &p, 42).unwrap();
        let xhat = estimate_counts(&a, &y).unwrap();
        let direct = ranges.as_inner() * xhat.as_vector();
        assert_eq!(mm.values(), &direct);
    }

    #[test]
    fn square_strategy_equals_laplace_on_itself() {
        let y4m = wavelet_strategy(4).unwrap();
        let a = Strategy::new(y4m.clone()).unwrap();
        let x = CountVector::new(vec![1.0, 0.0, 2.0, 5.0]).unwrap();
        let p = params(1.0);
        let mm = matrix_mechanism(&y4m, &a, &x, &p, 7).unwrap();
        let lap = laplace_mechanism(&y4m, &x, &p, 7).unwrap();
        for (got, want) in mm.values().iter().zip(lap.values().iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn estimate_is_exact_without_noise() {
        let a = Strategy::new(hierarchical_strategy(4).unwrap()).unwrap();
        let x = DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let y = NoisyAnswer {
            values: a.matrix().as_inner() * &x,
            strategy_id: "test".into(),
            noise_scale: 0.0,
            seed: 0,
        };
        let xhat = estimate_counts(&a, &y).unwrap();
        for (got, want) in xhat.iter().zip(x.iter()) {
            assert_relative_eq!(got, want, max_relative = 1e-12);
        }
    }

    #[test]
    fn estimate_first_count_uses_reconstruction_coefficients() {
        // x1_hat = (3 y1 + 5 y2 - 2 y3 + 13 y4 - 8 y5 - y6 - y7) / 21
        let a = Strategy::new(hierarchical_strategy(4).unwrap()).unwrap();
        let y_raw = DVector::from_vec(vec![10.0, 6.0, 4.0, 1.0, 5.0, 1.0, 3.0]);
        let y = NoisyAnswer {
            values: y_raw.clone(),
            strategy_id: "test".into(),
            noise_scale: 0.0,
            seed: 0,
        };
        let xhat = estimate_counts(&a, &y).unwrap();
        let coeffs = [3.0, 5.0, -2.0, 13.0, -8.0, -1.0, -1.0];
        let direct: f64 = coeffs
            .iter()
            .zip(y_raw.iter())
            .map(|(c, v)| c * v / 21.0)
            .sum();
        assert_relative_eq!(xhat.as_vector()[0], direct, max_relative = 1e-12);
    }

    #[test]
    fn unbiased_and_gauss_markov_spot_check() {
        let a = Strategy::new(hierarchical_strategy(4).unwrap()).unwrap();
        let x = CountVector::new(vec![2.0, 5.0, 1.0, 3.0]).unwrap();
        let p = params(1.0);
        let trials = 100_000u64;

        let mut mean = [0.0_f64; 4];
        // alternative unbiased reconstructions of x1: y4, y2 - y5, y1 - y3 - y5
        let (mut v_lsq, mut v_a1, mut v_a2, mut v_a3) = (0.0, 0.0, 0.0, 0.0);
        for t in 0..trials {
            let y = laplace_mechanism(a.matrix(), &x, &p, stream_seed(123, t)).unwrap();
            let xhat = estimate_counts(&a, &y).unwrap();
            for (m, v) in mean.iter_mut().zip(xhat.iter()) {
                *m += v;
            }
            let yv = y.values();
            let e_lsq = xhat.as_vector()[0] - 2.0;
            let e1 = yv[3] - 2.0;
            let e2 = (yv[1] - yv[4]) - 2.0;
            let e3 = (yv[0] - yv[2] - yv[4]) - 2.0;
            v_lsq += e_lsq * e_lsq;
            v_a1 += e1 * e1;
            v_a2 += e2 * e2;
            v_a3 += e3 * e3;
        }
        // unbiasedness: each coordinate within 4 standard errors
        let expect = [2.0, 5.0, 1.0, 3.0];
        // per-coordinate variance is 18 * 13/21; se = sqrt(var/trials)
        let se = (18.0 * 13.0 / 21.0 / trials as f64).sqrt();
        for (m, e) in mean.iter().zip(expect.iter()) {
            let avg = m / trials as f64;
            assert!((avg - e).abs() < 4.0 * se, "mean {avg} vs {e}");
        }
        // least squares beats each hand-picked alternative
        let t = trials as f64;
        assert!(v_lsq / t < v_a1 / t);
        assert!(v_lsq / t < v_a2 / t);
        assert!(v_lsq / t < v_a3 / t);
        // and matches its predicted variance loosely
        assert!((v_lsq / t - 18.0 * 13.0 / 21.0).abs() / (18.0 * 13.0 / 21.0) < 0.05);
    }
}
