//! Strategy selection for a given workload.
//!
//! The exact problem (minimize total error over all strategies) is a
//! rank-constrained semidefinite program; this crate ships checkable
//! surrogates instead:
//!
//! * [`svb_optimal_strategy`] — the singular-value-bound closed form;
//! * [`l2_optimal_profile`] — projected gradient descent on the profile
//!   under the L2 (max column norm) relaxation of sensitivity;
//! * [`min_error_descent`] — multi-restart gradient descent on the true
//!   objective with the column-L1 max smoothed for differentiability;
//! * [`min_sensitivity`] — profile-preserving search for a lower-sensitivity
//!   factor (closed-form candidates plus pairwise plane rotations);
//! * [`augment`] / [`auto_augment`] — row augmentation, which never hurts
//!   the profile and, restricted to deficient columns, is free.
//!
//! Every surrogate is validated in tests against closed forms, brute-force
//! grid searches, or finite differences.

use nalgebra::{Cholesky, DMatrix};
use rand_distr::{Distribution, StandardNormal};

use crate::analysis::total_error;
use crate::error::{Error, Result};
use crate::matrix::{spectral, QueryMatrix};
use crate::rng::{rng_from, stream_seed};
use crate::strategy::Strategy;

/// Knobs for the iterative optimizers. `smoothing` is the softmax
/// temperature for the column-L1 max, relative to the current max.
#[derive(Clone, Copy, Debug)]
pub struct OptimizerOptions {
    pub max_iters: usize,
    pub step: f64,
    pub smoothing: f64,
    pub restarts: usize,
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            max_iters: 2000,
            step: 0.1,
            smoothing: 1e-2,
            restarts: 4,
            seed: 0,
            tolerance: 1e-8,
        }
    }
}

impl OptimizerOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidOptions("max_iters must be positive".into()));
        }
        if [self.step, self.smoothing, self.tolerance]
            .iter()
            .any(|v| v.is_nan() || *v <= 0.0)
        {
            return Err(Error::InvalidOptions(
                "step, smoothing and tolerance must be positive".into(),
            ));
        }
        if self.restarts == 0 {
            return Err(Error::InvalidOptions("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

/// A chosen strategy plus its epsilon-normalized total error (the Eq.-(2)
/// value at epsilon = 1) and the iteration history that produced it.
#[derive(Clone, Debug)]
pub struct OptimizeResult {
    pub strategy: Strategy,
    pub objective: f64,
    pub trace_log: Vec<f64>,
    pub method: String,
    pub converged: bool,
}

fn build_result(
    matrix: DMatrix<f64>,
    label: String,
    w: &QueryMatrix,
    trace_log: Vec<f64>,
    method: &str,
    converged: bool,
) -> Result<OptimizeResult> {
    let strategy = Strategy::new(QueryMatrix::new(matrix)?.with_label(label))?;
    let objective = total_error(&strategy, w, 1.0)?.total;
    Ok(OptimizeResult {
        strategy,
        objective,
        trace_log,
        method: method.to_string(),
        converged,
    })
}

/// The closed-form singular value bound strategy `diag(sqrt(s_i)) * P_W^t`,
/// where `s_i` are the workload's singular values. Its surrogate objective
/// `svb_sensitivity^2 * trace((A^t A)^{-1} W^t W)` collapses to
/// `(sum_i s_i)^2`; the reported objective is the true total error.
pub fn svb_optimal_strategy(w: &QueryMatrix) -> Result<OptimizeResult> {
    let matrix = svb_matrix(w)?;
    build_result(
        matrix,
        format!("svb({})", w.label()),
        w,
        Vec::new(),
        "svb",
        true,
    )
}

fn svb_matrix(w: &QueryMatrix) -> Result<DMatrix<f64>> {
    let n = w.cols();
    let svd = w.svd();
    if svd.rank() < n {
        return Err(Error::RankDeficient {
            rank: svd.rank(),
            cols: n,
        });
    }
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let scale = svd.values()[i].sqrt();
        for j in 0..n {
            a[(i, j)] = scale * svd.right()[(j, i)];
        }
    }
    Ok(a)
}

/// Log-sum-exp smoothing of the max with temperature `rel_temp * max`;
/// returns the smoothed value and the softmax weights.
fn smooth_max(values: &[f64], rel_temp: f64) -> (f64, Vec<f64>) {
    let m = values.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if m.is_nan() || m <= 0.0 {
        return (0.0, vec![1.0 / values.len() as f64; values.len()]);
    }
    let mu = rel_temp * m;
    let exps: Vec<f64> = values.iter().map(|&v| ((v - m) / mu).exp()).collect();
    let sum: f64 = exps.iter().sum();
    (m + mu * sum.ln(), exps.iter().map(|e| e / sum).collect())
}

fn column_l1_norms(a: &DMatrix<f64>) -> Vec<f64> {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|v| v.abs()).sum())
        .collect()
}

/// Analytic gradient of `trace(W (A^t A)^{-1} W^t)` with respect to `A`:
/// `-2 A G^{-1} W^t W G^{-1}` with `G = A^t A`.
pub fn trace_objective_gradient(a: &DMatrix<f64>, wtw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = a.transpose() * a;
    let chol = Cholesky::new(g).ok_or(Error::RankDeficient {
        rank: 0,
        cols: a.ncols(),
    })?;
    let ginv = chol.inverse();
    Ok(-2.0 * a * (&ginv * wtw * &ginv))
}

/// One descent state evaluation: smoothed objective, true objective, and
/// gradient of the smoothed objective. None when A^t A is not invertible.
fn eval_state(
    a: &DMatrix<f64>,
    wtw: &DMatrix<f64>,
    rel_temp: f64,
) -> Option<(f64, f64, DMatrix<f64>)> {
    let g = a.transpose() * a;
    let chol = Cholesky::new(g)?;
    let ginv = chol.inverse();
    let trace = (&ginv * wtw).trace();
    if !trace.is_finite() || trace <= 0.0 {
        return None;
    }
    let cols = column_l1_norms(a);
    let exact = cols.iter().fold(0.0_f64, |x, &y| x.max(y));
    let (sm, weights) = smooth_max(&cols, rel_temp);
    let true_obj = 2.0 * exact * exact * trace;

    // d/dA [sm^2 * trace] = 2 sm trace * d(sm) + sm^2 * d(trace)
    let mut grad = -2.0 * sm * sm * (a * (&ginv * wtw * &ginv));
    for j in 0..a.ncols() {
        let wj = 2.0 * sm * trace * weights[j];
        for i in 0..a.nrows() {
            let s = a[(i, j)].signum();
            if a[(i, j)] != 0.0 {
                grad[(i, j)] += wj * s;
            }
        }
    }
    let smoothed = sm * sm * trace;
    Some((smoothed, true_obj, grad))
}

/// Smoothed descent objective; exposed for the scale-invariance test.
#[cfg(test)]
fn smoothed_objective(a: &DMatrix<f64>, wtw: &DMatrix<f64>, rel_temp: f64) -> Option<f64> {
    eval_state(a, wtw, rel_temp).map(|(s, _, _)| s)
}

struct DescentOutcome {
    best: DMatrix<f64>,
    best_true: f64,
    log: Vec<f64>,
    converged: bool,
}

fn descent_from(
    start: DMatrix<f64>,
    wtw: &DMatrix<f64>,
    opts: &OptimizerOptions,
) -> Option<DescentOutcome> {
    let (mut smoothed, mut true_obj, mut grad) = eval_state(&start, wtw, opts.smoothing)?;
    let mut a = start;
    let mut best = a.clone();
    let mut best_true = true_obj;
    let mut log = vec![true_obj];
    let mut converged = false;

    for _ in 0..opts.max_iters {
        let gnorm = grad.norm();
        if gnorm == 0.0 {
            converged = true;
            break;
        }
        let mut eta = opts.step * a.norm() / gnorm;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &a - &grad * eta;
            if let Some((s, t, g)) = eval_state(&cand, wtw, opts.smoothing) {
                if s < smoothed {
                    accepted = Some((cand, s, t, g));
                    break;
                }
            }
            eta *= 0.5;
        }
        let Some((cand, s, t, g)) = accepted else {
            converged = true;
            break;
        };
        let improvement = (smoothed - s) / smoothed;
        a = cand;
        smoothed = s;
        true_obj = t;
        grad = g;
        log.push(true_obj);
        if true_obj < best_true {
            best_true = true_obj;
            best = a.clone();
        }
        if improvement < opts.tolerance {
            converged = true;
            break;
        }
    }
    Some(DescentOutcome {
        best,
        best_true,
        log,
        converged,
    })
}

/// Multi-restart gradient descent on
/// `softmax(column L1 norms)^2 * trace(W (A^t A)^{-1} W^t)` over square
/// strategies. Restarts from the identity, the singular value bound
/// strategy, both square roots of `W^t W`, and seeded random perturbations;
/// the returned strategy is never worse (in true objective) than any
/// restart point.
pub fn min_error_descent(w: &QueryMatrix, opts: &OptimizerOptions) -> Result<OptimizeResult> {
    opts.validate()?;
    let n = w.cols();
    let wtw = w.as_inner().transpose() * w.as_inner();

    let mut starts: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n), svb_matrix(w)?];
    let dec = spectral(&wtw)?;
    if dec.eigvals()[n - 1] <= 0.0 {
        return Err(Error::RankDeficient { rank: 0, cols: n });
    }
    let mut reduced = DMatrix::zeros(n, n);
    for i in 0..n {
        let s = dec.eigvals()[i].sqrt();
        for j in 0..n {
            reduced[(i, j)] = s * dec.eigvecs()[(j, i)];
        }
    }
    // P sqrt(L) P^t: the symmetric square root
    starts.push(dec.eigvecs() * &reduced);
    starts.push(reduced);
    for r in 0..opts.restarts {
        let mut rng = rng_from(stream_seed(opts.seed, r as u64));
        let mut m = DMatrix::identity(n, n);
        let jitter = 0.3 / (n as f64).sqrt();
        for e in m.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e += jitter * z;
        }
        starts.push(m);
    }

    let mut best: Option<DescentOutcome> = None;
    for start in starts {
        if let Some(out) = descent_from(start, &wtw, opts) {
            let replace = match &best {
                Some(b) => out.best_true < b.best_true,
                None => true,
            };
            if replace {
                best = Some(out);
            }
        }
    }
    let out = best.ok_or(Error::RankDeficient { rank: 0, cols: n })?;
    build_result(
        out.best,
        format!("descent({})", w.label()),
        w,
        out.log,
        "descent",
        out.converged,
    )
}

fn max_diag(x: &DMatrix<f64>) -> f64 {
    (0..x.nrows()).map(|i| x[(i, i)]).fold(f64::MIN, f64::max)
}

/// Projected gradient descent over the positive-definite Gram matrix
/// `X = A^t A`, normalized each step so the largest diagonal entry (the
/// squared max column L2 norm) is one; this minimizes the L2 relaxation
/// `||A||_2^2 trace(W X^{-1} W^t)`. The final strategy is the symmetric
/// square root of X. Soft failure: when the tolerance is not met within
/// `max_iters` the best iterate is returned with `converged = false`.
pub fn l2_optimal_profile(w: &QueryMatrix, opts: &OptimizerOptions) -> Result<OptimizeResult> {
    opts.validate()?;
    let n = w.cols();
    let wtw = w.as_inner().transpose() * w.as_inner();

    let svb = svb_matrix(w)?;
    let normalize = |x: &DMatrix<f64>| {
        let d = max_diag(x);
        x / d
    };
    let starts = vec![
        DMatrix::identity(n, n),
        normalize(&(svb.transpose() * &svb)),
        normalize(&wtw),
    ];

    let surrogate = |x: &DMatrix<f64>| -> Option<f64> {
        let chol = Cholesky::new(x.clone())?;
        let xinv = chol.inverse();
        let v = (&xinv * &wtw).trace();
        v.is_finite().then_some(v)
    };

    let mut best_x: Option<DMatrix<f64>> = None;
    let mut best_f = f64::INFINITY;
    let mut best_log = Vec::new();
    let mut converged_any = false;
    for start in starts {
        let mut x = start;
        let Some(mut f) = surrogate(&x) else { continue };
        let mut log = vec![f];
        let mut converged = false;
        for _ in 0..opts.max_iters {
            let chol = match Cholesky::new(x.clone()) {
                Some(c) => c,
                None => break,
            };
            let xinv = chol.inverse();
            // gradient of trace(X^{-1} W^t W) is -X^{-1} W^t W X^{-1}
            let descent_dir = &xinv * &wtw * &xinv;
            let mut eta = opts.step * x.norm() / descent_dir.norm().max(1e-300);
            let mut accepted = None;
            for _ in 0..40 {
                let mut cand = &x + &descent_dir * eta;
                cand = (&cand + cand.transpose()) * 0.5;
                let cand = normalize(&cand);
                if let Some(fc) = surrogate(&cand) {
                    if fc < f {
                        accepted = Some((cand, fc));
                        break;
                    }
                }
                eta *= 0.5;
            }
            let Some((cand, fc)) = accepted else {
                converged = true;
                break;
            };
            let improvement = (f - fc) / f;
            x = cand;
            f = fc;
            log.push(f);
            if improvement < opts.tolerance {
                converged = true;
                break;
            }
        }
        if f < best_f {
            best_f = f;
            best_x = Some(x);
            best_log = log;
            converged_any = converged;
        }
    }
    let x = best_x.ok_or(Error::RankDeficient { rank: 0, cols: n })?;

    // symmetric square root of the winning Gram matrix
    let dec = spectral(&x)?;
    let mut half = DMatrix::zeros(n, n);
    for i in 0..n {
        let s = dec.eigvals()[i].max(0.0).sqrt();
        for j in 0..n {
            half[(i, j)] = s * dec.eigvecs()[(j, i)];
        }
    }
    let a = dec.eigvecs() * half;
    build_result(
        a,
        format!("l2({})", w.label()),
        w,
        best_log,
        "l2",
        converged_any,
    )
}

/// Find a strategy profile equivalent to `a` with lower (never higher) L1
/// sensitivity. Candidates: `a` itself, the eigen square-root factor
/// `sqrt(D) P^t` of `A^t A`, its upper Cholesky factor, and the best of
/// these refined by pairwise plane rotations (round-robin sweeps, golden
/// section per pair on the smoothed column max).
pub fn min_sensitivity(a: &Strategy, opts: &OptimizerOptions) -> Result<Strategy> {
    opts.validate()?;
    let gram = a.gram().clone();
    let n = a.cols();

    let mut candidates: Vec<DMatrix<f64>> = vec![a.matrix().as_inner().clone()];
    let dec = spectral(&gram)?;
    let mut eigen_factor = DMatrix::zeros(n, n);
    for i in 0..n {
        let s = dec.eigvals()[i].max(0.0).sqrt();
        for j in 0..n {
            eigen_factor[(i, j)] = s * dec.eigvecs()[(j, i)];
        }
    }
    candidates.push(eigen_factor);
    if let Some(chol) = Cholesky::new(gram) {
        candidates.push(chol.l().transpose());
    }

    let sens_of = |m: &DMatrix<f64>| column_l1_norms(m).into_iter().fold(0.0_f64, f64::max);
    let mut best = candidates
        .into_iter()
        .min_by(|x, y| sens_of(x).partial_cmp(&sens_of(y)).unwrap())
        .expect("nonempty candidate list");

    plane_rotation_search(&mut best, opts);

    let improved = QueryMatrix::new(best)?.with_label(format!("minsens({})", a.id()));
    Strategy::new(improved)
}

/// In-place sensitivity reduction by rotations `G(i, j, theta)` applied on
/// the left (these preserve `B^t B`). Pairs are swept round-robin; each pair
/// gets a coarse scan plus golden-section refinement of the smoothed column
/// max, and a rotation is kept only if the exact sensitivity improves.
fn plane_rotation_search(b: &mut DMatrix<f64>, opts: &OptimizerOptions) {
    let m = b.nrows();
    let n = b.ncols();
    if m < 2 {
        return;
    }
    let max_sweeps = 40;
    let mut best_sens = column_l1_norms(b).into_iter().fold(0.0_f64, f64::max);

    for _ in 0..max_sweeps {
        let sweep_start = best_sens;
        for i in 0..m - 1 {
            for j in i + 1..m {
                // column contributions from rows other than i and j
                let mut base = vec![0.0_f64; n];
                for (c, item) in base.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for r in 0..m {
                        if r != i && r != j {
                            s += b[(r, c)].abs();
                        }
                    }
                    *item = s;
                }
                let bi: Vec<f64> = (0..n).map(|c| b[(i, c)]).collect();
                let bj: Vec<f64> = (0..n).map(|c| b[(j, c)]).collect();

                let smooth_sens = |theta: f64| -> f64 {
                    let (ct, st) = (theta.cos(), theta.sin());
                    let cols: Vec<f64> = (0..n)
                        .map(|c| {
                            base[c]
                                + (ct * bi[c] - st * bj[c]).abs()
                                + (st * bi[c] + ct * bj[c]).abs()
                        })
                        .collect();
                    smooth_max(&cols, opts.smoothing).0
                };
                let exact_sens = |theta: f64| -> f64 {
                    let (ct, st) = (theta.cos(), theta.sin());
                    (0..n)
                        .map(|c| {
                            base[c]
                                + (ct * bi[c] - st * bj[c]).abs()
                                + (st * bi[c] + ct * bj[c]).abs()
                        })
                        .fold(0.0_f64, f64::max)
                };

                // coarse scan, then golden section inside the best bracket
                let samples = 64;
                let half = std::f64::consts::FRAC_PI_2;
                let spacing = 2.0 * half / samples as f64;
                let mut theta0 = 0.0;
                let mut best_val = smooth_sens(0.0);
                for s in 0..=samples {
                    let t = -half + s as f64 * spacing;
                    let v = smooth_sens(t);
                    if v < best_val {
                        best_val = v;
                        theta0 = t;
                    }
                }
                let theta = golden_section(smooth_sens, theta0 - spacing, theta0 + spacing, 60);

                let cand = exact_sens(theta);
                if cand < best_sens * (1.0 - 1e-12) {
                    let (ct, st) = (theta.cos(), theta.sin());
                    for c in 0..n {
                        b[(i, c)] = ct * bi[c] - st * bj[c];
                        b[(j, c)] = st * bi[c] + ct * bj[c];
                    }
                    best_sens = cand;
                }
            }
        }
        let improvement = (sweep_start - best_sens) / sweep_start.max(1e-300);
        if improvement < opts.tolerance {
            break;
        }
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, iters: usize) -> f64 {
    let inv_phi = 0.618_033_988_749_894_9;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 < f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 < f2 {
        x1
    } else {
        x2
    }
}

/// Stack the rows of `b` under strategy `a`. The profile term of every query
/// is non-increasing under augmentation.
pub fn augment(a: &Strategy, b: &QueryMatrix) -> Result<Strategy> {
    if b.cols() != a.cols() {
        return Err(Error::DimensionMismatch {
            expected: a.cols(),
            got: b.cols(),
        });
    }
    let m = a.rows() + b.rows();
    let n = a.cols();
    let mut stacked = DMatrix::zeros(m, n);
    stacked
        .view_mut((0, 0), (a.rows(), n))
        .copy_from(a.matrix().as_inner());
    stacked
        .view_mut((a.rows(), 0), (b.rows(), n))
        .copy_from(b.as_inner());
    Strategy::new(QueryMatrix::new(stacked)?.with_label(format!("augment({})", a.id())))
}

/// Complete deficient columns: add one row carrying `sens - colsum_j` in
/// every column whose absolute column sum falls short of the sensitivity.
/// Leaves the sensitivity unchanged; returns the input unchanged when no
/// column is deficient.
pub fn auto_augment(a: &Strategy) -> Result<Strategy> {
    let sens = a.sensitivity();
    let cols = column_l1_norms(a.matrix().as_inner());
    let slack: Vec<f64> = cols.iter().map(|c| sens - c).collect();
    let tol = 1e-12 * sens.max(1.0);
    if slack.iter().all(|&s| s <= tol) {
        return Ok(a.clone());
    }
    let row: Vec<f64> = slack
        .iter()
        .map(|&s| if s > tol { s } else { 0.0 })
        .collect();
    let b = QueryMatrix::from_rows(&[row])?;
    augment(a, &b)
}
