//! Dense matrix primitives the rest of the crate is defined against:
//! query matrices, sensitivity norms, numerical rank, pseudo-inverse, and
//! the singular/spectral decompositions.
//!
//! Decompositions are deterministic: values are ordered nonincreasing with
//! ties broken by first occurrence, each vector's first significant entry is
//! made nonnegative, and repeated eigenvalues get a canonical basis (see
//! [`spectral`]). That keeps fixtures testable and lets downstream factor
//! candidates hit their closed-form sensitivities.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Singular values below `RANK_REL_TOL * sigma_max` count as zero.
pub const RANK_REL_TOL: f64 = 1e-10;

/// Entries with absolute value above this are "significant" when picking the
/// sign-convention pivot of a basis vector.
const SIGN_PIVOT_TOL: f64 = 1e-12;

/// A collection of linear counting queries, one per row. Entries are the
/// query coefficients over the length-`cols` count vector.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryMatrix {
    inner: DMatrix<f64>,
    label: Option<String>,
}

impl QueryMatrix {
    /// Wrap a dense matrix, rejecting empty shapes and non-finite entries.
    pub fn new(inner: DMatrix<f64>) -> Result<Self> {
        if inner.nrows() == 0 || inner.ncols() == 0 {
            return Err(Error::EmptyMatrix);
        }
        for j in 0..inner.ncols() {
            for i in 0..inner.nrows() {
                if !inner[(i, j)].is_finite() {
                    return Err(Error::NonFiniteEntry { row: i, col: j });
                }
            }
        }
        Ok(Self { inner, label: None })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(Error::EmptyMatrix);
        }
        let n = rows[0].len();
        for r in rows {
            if r.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: r.len(),
                });
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Self::new(DMatrix::from_row_slice(rows.len(), n, &flat))
    }

    pub fn identity(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::EmptyMatrix);
        }
        Ok(Self {
            inner: DMatrix::identity(n, n),
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or("unlabeled")
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.inner[(i, j)]
    }

    pub fn as_inner(&self) -> &DMatrix<f64> {
        &self.inner
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.inner
    }

    /// L1 sensitivity: the maximum L1 norm over columns. A single tuple
    /// change moves the exact answer vector by at most this much in L1.
    pub fn l1_sensitivity(&self) -> f64 {
        (0..self.cols())
            .map(|j| self.inner.column(j).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// Maximum Euclidean column norm; always at most the L1 sensitivity.
    pub fn l2_column_bound(&self) -> f64 {
        (0..self.cols())
            .map(|j| self.inner.column(j).norm())
            .fold(0.0, f64::max)
    }

    /// Numerical rank: singular values above `RANK_REL_TOL * sigma_max`.
    pub fn rank(&self) -> usize {
        self.svd().rank()
    }

    /// Moore-Penrose pseudo-inverse of a full-column-rank matrix, computed
    /// from the SVD by inverting the singular values. Satisfies
    /// `pinv * A = I_n`; for square input this is the inverse.
    pub fn pseudo_inverse(&self) -> Result<DMatrix<f64>> {
        let svd = self.svd();
        svd.pseudo_inverse()
    }

    /// Full singular value decomposition `A = left * diag * right^t` with the
    /// crate's deterministic ordering and sign conventions.
    ///
    /// Factors come from the bidiagonalization backend; when its
    /// reconstruction residual is not small (it degrades on some wide or
    /// badly scaled inputs) the decomposition is recomputed with one-sided
    /// Jacobi rotations, which converge to working accuracy.
    pub fn svd(&self) -> SingularDecomposition {
        let dec = self.svd_backend();
        let scale = self.inner.abs().max().max(1.0);
        if (dec.reconstruct() - &self.inner).abs().max() <= 1e-11 * scale {
            return dec;
        }
        self.svd_jacobi()
    }

    fn svd_backend(&self) -> SingularDecomposition {
        let (m, n) = (self.rows(), self.cols());
        let p = m.min(n);
        let svd = self.inner.clone().svd(true, true);
        let u = svd.u.expect("svd requested u");
        let v_t = svd.v_t.expect("svd requested v_t");
        let sv = svd.singular_values;

        // nonincreasing, stable in the original order on ties
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&a, &b| sv[b].partial_cmp(&sv[a]).expect("finite singular values"));

        let sigma: Vec<f64> = order.iter().map(|&k| sv[k]).collect();
        let left: Vec<DVector<f64>> = order.iter().map(|&k| u.column(k).into_owned()).collect();
        let right: Vec<DVector<f64>> = order.iter().map(|&k| v_t.row(k).transpose()).collect();
        assemble_svd(m, n, sigma, left, right)
    }

    /// One-sided Jacobi on the tall orientation: rotate column pairs until
    /// they are mutually orthogonal; column norms are the singular values.
    fn svd_jacobi(&self) -> SingularDecomposition {
        let (m, n) = (self.rows(), self.cols());
        let wide = m < n;
        let mut work = if wide {
            self.inner.transpose()
        } else {
            self.inner.clone()
        };
        let cols = work.ncols();
        let mut accum = DMatrix::<f64>::identity(cols, cols);

        for _ in 0..60 {
            let mut rotated = false;
            for i in 0..cols - 1 {
                for j in i + 1..cols {
                    let ci = work.column(i);
                    let cj = work.column(j);
                    let aa = ci.dot(&ci);
                    let bb = ci.dot(&cj);
                    let cc = cj.dot(&cj);
                    if bb.abs() <= 1e-15 * (aa * cc).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let tau = (cc - aa) / (2.0 * bb);
                    let t = tau.signum() / (tau.abs() + (1.0 + tau * tau).sqrt());
                    let cs = 1.0 / (1.0 + t * t).sqrt();
                    let sn = t * cs;
                    for r in 0..work.nrows() {
                        let wi = work[(r, i)];
                        let wj = work[(r, j)];
                        work[(r, i)] = cs * wi - sn * wj;
                        work[(r, j)] = sn * wi + cs * wj;
                    }
                    for r in 0..cols {
                        let vi = accum[(r, i)];
                        let vj = accum[(r, j)];
                        accum[(r, i)] = cs * vi - sn * vj;
                        accum[(r, j)] = sn * vi + cs * vj;
                    }
                }
            }
            if !rotated {
                break;
            }
        }

        let mut order: Vec<usize> = (0..cols).collect();
        let norms: Vec<f64> = (0..cols).map(|k| work.column(k).norm()).collect();
        order.sort_by(|&a, &b| norms[b].partial_cmp(&norms[a]).expect("finite norms"));

        let mut sigma = Vec::with_capacity(cols);
        let mut thin = Vec::new();
        let mut full = Vec::with_capacity(cols);
        for &k in &order {
            sigma.push(norms[k]);
            full.push(accum.column(k).into_owned());
            if norms[k] > 0.0 {
                thin.push(work.column(k).into_owned() / norms[k]);
            }
        }
        if wide {
            // A = (work)^t: the accumulated factor is the left basis
            assemble_svd(m, n, sigma, full, thin)
        } else {
            assemble_svd(m, n, sigma, thin, full)
        }
    }

    /// Multiply row `i` by `scales[i]`. Simulating per-row noise scales on a
    /// strategy is equivalent to running the equal-noise mechanism on the
    /// scaled matrix.
    pub fn scale_rows(&self, scales: &[f64]) -> Result<QueryMatrix> {
        if scales.len() != self.rows() {
            return Err(Error::DimensionMismatch {
                expected: self.rows(),
                got: scales.len(),
            });
        }
        for (i, &s) in scales.iter().enumerate() {
            if !s.is_finite() || s <= 0.0 {
                return Err(Error::NonPositiveScale { index: i, value: s });
            }
        }
        let mut out = self.inner.clone();
        for (i, &s) in scales.iter().enumerate() {
            for j in 0..out.ncols() {
                out[(i, j)] *= s;
            }
        }
        Ok(QueryMatrix {
            inner: out,
            label: self.label.clone(),
        })
    }
}

/// A length-`n` frequency vector: entry `i` counts the tuples equal to the
/// i-th domain element.
#[derive(Clone, Debug, PartialEq)]
pub struct CountVector(DVector<f64>);

impl CountVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyMatrix);
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteEntry { row: i, col: 0 });
            }
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(vec![0.0; n])
    }

    pub fn from_vector(v: DVector<f64>) -> Result<Self> {
        Self::new(v.iter().copied().collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.len() == 0
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.0.iter()
    }
}

/// `A = left * diag(values) * right^t` with `left` (m×m) and `right` (n×n)
/// orthogonal and `values` nonincreasing.
#[derive(Clone, Debug)]
pub struct SingularDecomposition {
    left: DMatrix<f64>,
    values: DVector<f64>,
    right: DMatrix<f64>,
}

impl SingularDecomposition {
    pub fn left(&self) -> &DMatrix<f64> {
        &self.left
    }

    /// Singular values, nonincreasing, length `min(m, n)`.
    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn right(&self) -> &DMatrix<f64> {
        &self.right
    }

    /// The m×n rectangular diagonal factor.
    pub fn diag_matrix(&self) -> DMatrix<f64> {
        let (m, n) = (self.left.nrows(), self.right.nrows());
        let mut d = DMatrix::zeros(m, n);
        for (i, &s) in self.values.iter().enumerate() {
            d[(i, i)] = s;
        }
        d
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.left * self.diag_matrix() * self.right.transpose()
    }

    /// Count of singular values above the relative rank cutoff.
    pub fn rank(&self) -> usize {
        let max = self.values.iter().fold(0.0_f64, |a, &b| a.max(b));
        if max <= 0.0 {
            return 0;
        }
        self.values
            .iter()
            .filter(|&&s| s > RANK_REL_TOL * max)
            .count()
    }

    /// `right * diag(1/sigma) * left^t` restricted to the leading n triples;
    /// requires full column rank.
    pub fn pseudo_inverse(&self) -> Result<DMatrix<f64>> {
        let n = self.right.nrows();
        if self.rank() < n {
            return Err(Error::RankDeficient {
                rank: self.rank(),
                cols: n,
            });
        }
        let m = self.left.nrows();
        let mut out = DMatrix::zeros(n, m);
        for k in 0..n {
            let scale = 1.0 / self.values[k];
            let rc = self.right.column(k);
            let lc = self.left.column(k);
            for i in 0..n {
                let ri = rc[i] * scale;
                for j in 0..m {
                    out[(i, j)] += ri * lc[j];
                }
            }
        }
        Ok(out)
    }
}

/// `M = eigvecs * diag(eigvals) * eigvecs^t` for symmetric `M`, eigenvalues
/// nonincreasing.
#[derive(Clone, Debug)]
pub struct SpectralDecomposition {
    eigvecs: DMatrix<f64>,
    eigvals: DVector<f64>,
}

impl SpectralDecomposition {
    /// Orthogonal matrix whose columns are the eigenvectors.
    pub fn eigvecs(&self) -> &DMatrix<f64> {
        &self.eigvecs
    }

    pub fn eigvals(&self) -> &DVector<f64> {
        &self.eigvals
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        let n = self.eigvals.len();
        let mut d = DMatrix::zeros(n, n);
        for i in 0..n {
            d[(i, i)] = self.eigvals[i];
        }
        &self.eigvecs * d * self.eigvecs.transpose()
    }
}

/// Spectral decomposition of a symmetric matrix (asymmetry above 1e-10 is
/// rejected). Within groups of numerically equal eigenvalues the basis is
/// canonicalized by Gram-Schmidt over the eigenprojector's columns in index
/// order, so repeated eigenvalues still yield a reproducible factorization.
pub fn spectral(m: &DMatrix<f64>) -> Result<SpectralDecomposition> {
    let n = m.nrows();
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    if m.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: m.ncols(),
        });
    }
    let mut max_asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    if max_asym > 1e-10 {
        return Err(Error::NotSymmetric {
            max_asymmetry: max_asym,
        });
    }

    let sym = (m + m.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
    });
    let mut eigvals = DVector::zeros(n);
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for (slot, &k) in order.iter().enumerate() {
        eigvals[slot] = eig.eigenvalues[k];
        cols.push(eig.eigenvectors.column(k).into_owned());
    }

    canonicalize_degenerate_groups(&eigvals, &mut cols);
    for c in cols.iter_mut() {
        if first_significant_is_negative(c) {
            c.neg_mut();
        }
    }

    Ok(SpectralDecomposition {
        eigvecs: DMatrix::from_columns(&cols),
        eigvals,
    })
}

fn first_significant_is_negative(v: &DVector<f64>) -> bool {
    for &e in v.iter() {
        if e.abs() > SIGN_PIVOT_TOL {
            return e < 0.0;
        }
    }
    false
}

/// Shared tail of both SVD paths: `sigma` is nonincreasing with singular
/// vectors in matching order (the column lists may stop early where sigma
/// hits zero). Applies the sign convention pairwise and completes both
/// orthonormal bases.
fn assemble_svd(
    m: usize,
    n: usize,
    sigma: Vec<f64>,
    mut left_cols: Vec<DVector<f64>>,
    mut right_cols: Vec<DVector<f64>>,
) -> SingularDecomposition {
    let p = m.min(n);
    debug_assert_eq!(sigma.len(), p);
    let paired = left_cols.len().min(right_cols.len());
    for k in 0..paired {
        if first_significant_is_negative(&right_cols[k]) {
            right_cols[k].neg_mut();
            left_cols[k].neg_mut();
        }
    }
    for rc in right_cols.iter_mut().skip(paired) {
        if first_significant_is_negative(rc) {
            rc.neg_mut();
        }
    }
    for lc in left_cols.iter_mut().skip(paired) {
        if first_significant_is_negative(lc) {
            lc.neg_mut();
        }
    }
    complete_orthonormal_basis(&mut left_cols, m);
    complete_orthonormal_basis(&mut right_cols, n);
    SingularDecomposition {
        left: DMatrix::from_columns(&left_cols),
        values: DVector::from_vec(sigma),
        right: DMatrix::from_columns(&right_cols),
    }
}

/// Rebuild the basis of each group of equal eigenvalues from the group's
/// orthogonal projector. The projector is basis-independent, so the output
/// no longer depends on which basis the eigensolver happened to return.
fn canonicalize_degenerate_groups(eigvals: &DVector<f64>, cols: &mut [DVector<f64>]) {
    let n = eigvals.len();
    let scale = eigvals.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    let group_tol = 1e-11 * scale;

    let mut start = 0;
    while start < n {
        let mut end = start + 1;
        while end < n && (eigvals[end] - eigvals[start]).abs() <= group_tol {
            end += 1;
        }
        if end - start > 1 {
            if let Some(basis) = projector_basis(&cols[start..end]) {
                for (off, b) in basis.into_iter().enumerate() {
                    cols[start + off] = b;
                }
            }
        }
        start = end;
    }
}

/// Column-pivoted modified Gram-Schmidt over the columns of `V V^t`
/// (V = group vectors). Pivoting on the largest residual keeps every
/// normalization well conditioned: a rank-g projector deflated by k basis
/// vectors always retains a column of norm at least sqrt((g-k)/n). Returns
/// None if that floor is ever violated; callers then keep the numeric
/// eigenvector basis.
fn projector_basis(group: &[DVector<f64>]) -> Option<Vec<DVector<f64>>> {
    let g = group.len();
    let n = group[0].len();
    let mut cols: Vec<DVector<f64>> = (0..n)
        .map(|c| {
            let mut v = DVector::zeros(n);
            for gv in group {
                v.axpy(gv[c], gv, 1.0);
            }
            v
        })
        .collect();

    let floor = 0.1 / (n as f64).sqrt();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(g);
    while basis.len() < g {
        let mut pick = usize::MAX;
        let mut best = floor;
        for (idx, c) in cols.iter().enumerate() {
            let norm = c.norm();
            if norm > best {
                best = norm;
                pick = idx;
            }
        }
        if pick == usize::MAX {
            return None;
        }
        let mut v = cols[pick].clone() / best;
        // second orthogonalization pass against drift in long groups
        for b in &basis {
            let d = b.dot(&v);
            v.axpy(-d, b, 1.0);
        }
        v /= v.norm();
        for c in cols.iter_mut() {
            let d = v.dot(c);
            c.axpy(-d, &v, 1.0);
        }
        basis.push(v);
    }
    Some(basis)
}

/// Extend orthonormal columns to a full orthonormal basis of R^dim, drawing
/// candidates from the standard basis in index order.
fn complete_orthonormal_basis(cols: &mut Vec<DVector<f64>>, dim: usize) {
    let mut candidate = 0;
    while cols.len() < dim && candidate < dim {
        let mut v: DVector<f64> = DVector::zeros(dim);
        v[candidate] = 1.0;
        candidate += 1;
        for b in cols.iter() {
            let d = b.dot(&v);
            v.axpy(-d, b, 1.0);
        }
        let norm = v.norm();
        if norm > 1e-6 {
            v /= norm;
            for b in cols.iter() {
                let d = b.dot(&v);
                v.axpy(-d, b, 1.0);
            }
            v /= v.norm();
            if first_significant_is_negative(&v) {
                v.neg_mut();
            }
            cols.push(v);
        }
    }
    assert_eq!(cols.len(), dim, "orthonormal completion fell short");
}
