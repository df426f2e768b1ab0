//! Named query strategies (identity, binary hierarchy, Haar wavelet), their
//! closed-form eigenstructure, and the [`Strategy`] wrapper that caches the
//! quantities the mechanism and error analysis keep asking for.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{QueryMatrix, SingularDecomposition};

/// The two tree-structured strategy families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StrategyFamily {
    Hier,
    Wavelet,
}

/// A full-column-rank query matrix ready to be used as a strategy, with its
/// sensitivity, L2 column bound, SVD and pseudo-inverse computed once.
#[derive(Clone, Debug)]
pub struct Strategy {
    matrix: QueryMatrix,
    sensitivity: f64,
    l2_bound: f64,
    svd: SingularDecomposition,
    pinv: DMatrix<f64>,
    gram: DMatrix<f64>,
}

impl Strategy {
    /// Validates full column rank (via the SVD rank rule) and caches the
    /// derived pieces.
    pub fn new(matrix: QueryMatrix) -> Result<Self> {
        let svd = matrix.svd();
        let rank = svd.rank();
        if rank < matrix.cols() {
            return Err(Error::RankDeficient {
                rank,
                cols: matrix.cols(),
            });
        }
        let pinv = svd.pseudo_inverse()?;
        let gram = matrix.as_inner().transpose() * matrix.as_inner();
        Ok(Self {
            sensitivity: matrix.l1_sensitivity(),
            l2_bound: matrix.l2_column_bound(),
            svd,
            pinv,
            gram,
            matrix,
        })
    }

    pub fn matrix(&self) -> &QueryMatrix {
        &self.matrix
    }

    pub fn id(&self) -> &str {
        self.matrix.label()
    }

    pub fn rows(&self) -> usize {
        self.matrix.rows()
    }

    pub fn cols(&self) -> usize {
        self.matrix.cols()
    }

    /// L1 sensitivity of the strategy matrix.
    pub fn sensitivity(&self) -> f64 {
        self.sensitivity
    }

    pub fn l2_bound(&self) -> f64 {
        self.l2_bound
    }

    pub fn svd(&self) -> &SingularDecomposition {
        &self.svd
    }

    /// Cached pseudo-inverse; the least-squares reconstruction matrix.
    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// Cached Gram matrix `A^t A`.
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }
}

/// The identity strategy: asks each count directly. Sensitivity 1 for all n.
pub fn identity_strategy(n: usize) -> Result<QueryMatrix> {
    Ok(QueryMatrix::identity(n)?.with_label(format!("identity({n})")))
}

fn require_power_of_two(n: usize) -> Result<usize> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo { n });
    }
    Ok(n.trailing_zeros() as usize)
}

/// Binary hierarchy of interval sums: (2n-1)×n, breadth first, root (the
/// total query) first and the unit counts last. Sensitivity log2(n) + 1.
pub fn hierarchical_strategy(n: usize) -> Result<QueryMatrix> {
    require_power_of_two(n)?;
    let mut m = DMatrix::zeros(2 * n - 1, n);
    let mut r = 0;
    let mut size = n;
    while size >= 1 {
        for start in (0..n).step_by(size) {
            for j in start..start + size {
                m[(r, j)] = 1.0;
            }
            r += 1;
        }
        size /= 2;
    }
    Ok(QueryMatrix::new(m)?.with_label(format!("hier({n})")))
}

/// Haar wavelet strategy: n×n with entries in {-1, 0, 1}; the total query
/// first, then difference rows coarse to fine, left to right. Sensitivity
/// log2(n) + 1.
pub fn wavelet_strategy(n: usize) -> Result<QueryMatrix> {
    let k = require_power_of_two(n)?;
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        m[(0, j)] = 1.0;
    }
    let mut r = 1;
    for level in 1..=k {
        let seg = n >> (level - 1);
        for start in (0..n).step_by(seg) {
            for j in start..start + seg / 2 {
                m[(r, j)] = 1.0;
            }
            for j in start + seg / 2..start + seg {
                m[(r, j)] = -1.0;
            }
            r += 1;
        }
    }
    Ok(QueryMatrix::new(m)?.with_label(format!("wavelet({n})")))
}

/// Closed-form eigenvalues of `A^t A` for the tree strategies, as
/// (eigenvalue, multiplicity) pairs in ascending eigenvalue order.
#[derive(Clone, Debug, PartialEq)]
pub struct EigenSummary {
    pairs: Vec<(f64, usize)>,
}

impl EigenSummary {
    pub fn pairs(&self) -> &[(f64, usize)] {
        &self.pairs
    }

    pub fn total_multiplicity(&self) -> usize {
        self.pairs.iter().map(|&(_, m)| m).sum()
    }

    /// Eigenvalues repeated by multiplicity, ascending.
    pub fn expanded(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_multiplicity());
        for &(v, m) in &self.pairs {
            out.extend(std::iter::repeat_n(v, m));
        }
        out
    }
}

/// Eigenvalue table for `H_n^t H_n` and `Y_n^t Y_n` with n = 2^k:
/// hier has eigenvalue 2^j - 1 with multiplicity 2^(k-j) for j = 1..k plus
/// 2^(k+1) - 1 once; wavelet has 2^j with multiplicity 2^(k-j) for j < k
/// plus 2^k twice.
pub fn eigen_summary(family: StrategyFamily, n: usize) -> Result<EigenSummary> {
    let k = require_power_of_two(n)?;
    let mut pairs = Vec::new();
    match family {
        StrategyFamily::Hier => {
            for j in 1..=k {
                pairs.push(((1u64 << j) as f64 - 1.0, 1usize << (k - j)));
            }
            pairs.push(((1u64 << (k + 1)) as f64 - 1.0, 1));
        }
        StrategyFamily::Wavelet => {
            for j in 1..k {
                pairs.push(((1u64 << j) as f64, 1usize << (k - j)));
            }
            pairs.push(((1u64 << k) as f64, 2.min(n)));
        }
    }
    Ok(EigenSummary { pairs })
}

/// Square strategy built from the explicit eigen decomposition of the tree
/// strategy's Gram matrix: profile equivalent to `H_n`/`Y_n` but with lower
/// sensitivity. For hier the column L1 norm is
/// `sum_{j=1..k} sqrt(1 - 2^-j) + sqrt(2 - 2^-k)`; for wavelet it is
/// `k + sqrt(2) - 1`.
///
/// Rows are the scaled eigenvectors, fine differences first, ending in the
/// all-ones vector (hier) or the two half-domain indicators (wavelet).
pub fn decomposed_strategy(family: StrategyFamily, n: usize) -> Result<QueryMatrix> {
    let k = require_power_of_two(n)?;
    if k == 0 {
        return Err(Error::NotPowerOfTwo { n });
    }
    let mut m = DMatrix::zeros(n, n);
    let mut r = 0;

    // Haar difference vectors: level j has blocks of width 2^j, entries
    // +-1/sqrt(2^j), scaled by sqrt(eigenvalue).
    let top_level = match family {
        StrategyFamily::Hier => k,
        StrategyFamily::Wavelet => k - 1,
    };
    for j in 1..=top_level {
        let width = 1usize << j;
        let eig = match family {
            StrategyFamily::Hier => (width as f64) - 1.0,
            StrategyFamily::Wavelet => width as f64,
        };
        let entry = (eig / width as f64).sqrt();
        for start in (0..n).step_by(width) {
            for c in start..start + width / 2 {
                m[(r, c)] = entry;
            }
            for c in start + width / 2..start + width {
                m[(r, c)] = -entry;
            }
            r += 1;
        }
    }
    match family {
        StrategyFamily::Hier => {
            // all-ones eigenvector with eigenvalue 2^(k+1) - 1
            let entry = (((1u64 << (k + 1)) as f64 - 1.0) / n as f64).sqrt();
            for c in 0..n {
                m[(r, c)] = entry;
            }
            r += 1;
        }
        StrategyFamily::Wavelet => {
            // the eigenvalue-2^k plane, spanned by the two half indicators
            let entry = ((1u64 << k) as f64 / (n / 2) as f64).sqrt();
            for c in 0..n / 2 {
                m[(r, c)] = entry;
            }
            r += 1;
            for c in n / 2..n {
                m[(r, c)] = entry;
            }
            r += 1;
        }
    }
    debug_assert_eq!(r, n);
    let tag = match family {
        StrategyFamily::Hier => "hier-decomposed",
        StrategyFamily::Wavelet => "wavelet-decomposed",
    };
    Ok(QueryMatrix::new(m)?.with_label(format!("{tag}({n})")))
}

/// Closed-form sensitivity of [`decomposed_strategy`].
pub fn decomposed_sensitivity(family: StrategyFamily, n: usize) -> Result<f64> {
    let k = require_power_of_two(n)?;
    if k == 0 {
        return Err(Error::NotPowerOfTwo { n });
    }
    Ok(match family {
        StrategyFamily::Hier => {
            (1..=k)
                .map(|j| (1.0 - 0.5_f64.powi(j as i32)).sqrt())
                .sum::<f64>()
                + (2.0 - 0.5_f64.powi(k as i32)).sqrt()
        }
        StrategyFamily::Wavelet => k as f64 + 2.0_f64.sqrt() - 1.0,
    })
}
