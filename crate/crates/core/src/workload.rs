//! Benchmark workload generators and the spectral workload reduction.

use std::path::PathBuf;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::matrix::{spectral, QueryMatrix, RANK_REL_TOL};

/// Largest domain for the all-predicates workload (2^16 - 1 rows).
pub const PREDICATE_DOMAIN_CAP: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WorkloadKind {
    AllRanges,
    AllPredicates,
    Identity,
    File(PathBuf),
}

/// CLI-facing description of a workload to build.
#[derive(Clone, Debug)]
pub struct WorkloadSpec {
    pub kind: WorkloadKind,
    pub n: usize,
}

impl WorkloadSpec {
    pub fn build(&self) -> Result<QueryMatrix> {
        match &self.kind {
            WorkloadKind::AllRanges => all_range_queries(self.n),
            WorkloadKind::AllPredicates => all_predicate_queries(self.n),
            WorkloadKind::Identity => {
                Ok(QueryMatrix::identity(self.n)?.with_label(format!("identity({})", self.n)))
            }
            WorkloadKind::File(path) => crate::io::load_matrix(path),
        }
    }
}

/// All one-dimensional interval queries over a domain of size `n`:
/// n(n+1)/2 rows, ordered lexicographically by (start, end).
pub fn all_range_queries(n: usize) -> Result<QueryMatrix> {
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    let rows = n * (n + 1) / 2;
    let mut m = DMatrix::zeros(rows, n);
    let mut r = 0;
    for a in 0..n {
        for b in a..n {
            for j in a..=b {
                m[(r, j)] = 1.0;
            }
            r += 1;
        }
    }
    Ok(QueryMatrix::new(m)?.with_label(format!("ranges({n})")))
}

/// All 0-1 queries over nonempty subsets of the domain: 2^n - 1 rows in
/// ascending subset-bitmask order. Capped at n = 16 to bound memory.
pub fn all_predicate_queries(n: usize) -> Result<QueryMatrix> {
    if n == 0 {
        return Err(Error::EmptyMatrix);
    }
    if n > PREDICATE_DOMAIN_CAP {
        return Err(Error::DomainTooLarge {
            n,
            max: PREDICATE_DOMAIN_CAP,
        });
    }
    let rows = (1usize << n) - 1;
    let mut m = DMatrix::zeros(rows, n);
    for mask in 1..=rows {
        for j in 0..n {
            if mask & (1 << j) != 0 {
                m[(mask - 1, j)] = 1.0;
            }
        }
    }
    Ok(QueryMatrix::new(m)?.with_label(format!("predicates({n})")))
}

/// Replace an m×n workload (m >= n, full column rank) with an equivalent
/// n×n one: `V = diag(sqrt(lambda)) * P^t` from the spectral factorization
/// of `W^t W`, so `V^t V = W^t W` and every strategy's total error is
/// unchanged.
pub fn workload_reduce(w: &QueryMatrix) -> Result<QueryMatrix> {
    let n = w.cols();
    if w.rows() < n {
        return Err(Error::RankDeficient {
            rank: w.rows(),
            cols: n,
        });
    }
    let gram = w.as_inner().transpose() * w.as_inner();
    let dec = spectral(&gram)?;
    let max = dec.eigvals()[0].max(0.0);
    let min = dec.eigvals()[n - 1];
    if min <= RANK_REL_TOL * max {
        let rank = dec
            .eigvals()
            .iter()
            .filter(|&&l| l > RANK_REL_TOL * max)
            .count();
        return Err(Error::RankDeficient { rank, cols: n });
    }
    let mut v = dec.eigvecs().transpose();
    for i in 0..n {
        let s = dec.eigvals()[i].sqrt();
        for j in 0..n {
            v[(i, j)] *= s;
        }
    }
    Ok(QueryMatrix::new(v)?.with_label(format!("reduced({})", w.label())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::strategy::{hierarchical_strategy, Strategy};

    #[test]
    fn ranges_n2_enumeration() {
        let w = all_range_queries(2).unwrap();
        let expect = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
        assert_eq!(w.rows(), 3);
        for (i, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert_eq!(w.entry(i, j), e);
            }
        }
    }

    #[test]
    fn ranges_row_count_and_sensitivity() {
        let w = all_range_queries(4).unwrap();
        assert_eq!(w.rows(), 10);
        // column j (1-based) lies in j*(n-j+1) intervals
        assert_eq!(w.l1_sensitivity(), 6.0);
        for n in [1usize, 2, 3, 5, 8, 16] {
            let w = all_range_queries(n).unwrap();
            assert_eq!(w.rows(), n * (n + 1) / 2);
            let predicted = (1..=n)
                .map(|j| (j * (n - j + 1)) as f64)
                .fold(0.0, f64::max);
            assert_eq!(w.l1_sensitivity(), predicted);
        }
    }

    #[test]
    fn predicates_n2_enumeration() {
        let w = all_predicate_queries(2).unwrap();
        let expect = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        for (i, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                assert_eq!(w.entry(i, j), e);
            }
        }
    }

    #[test]
    fn predicates_counts_and_cap() {
        let w = all_predicate_queries(4).unwrap();
        assert_eq!(w.rows(), 15);
        // every column is set in 2^(n-1) subsets
        assert_eq!(w.l1_sensitivity(), 8.0);
        assert!(matches!(
            all_predicate_queries(17),
            Err(Error::DomainTooLarge { n: 17, max: 16 })
        ));
    }

    #[test]
    fn reduce_identity_is_identity() {
        let w = QueryMatrix::identity(5).unwrap();
        let v = workload_reduce(&w).unwrap();
        assert!((v.as_inner() - w.as_inner()).abs().max() < 1e-12);
    }

    #[test]
    fn reduce_ranges2_matches_gram() {
        let w = all_range_queries(2).unwrap();
        let v = workload_reduce(&w).unwrap();
        let vtv = v.as_inner().transpose() * v.as_inner();
        let expect = nalgebra::DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!((vtv - expect).abs().max() < 1e-8);
    }

    #[test]
    fn reduce_preserves_total_error() {
        let w = hierarchical_strategy(4).unwrap();
        let v = workload_reduce(&w).unwrap();
        let vtv = v.as_inner().transpose() * v.as_inner();
        let wtw = w.as_inner().transpose() * w.as_inner();
        assert!((&vtv - &wtw).abs().max() < 1e-8);

        let a = Strategy::new(crate::strategy::wavelet_strategy(4).unwrap()).unwrap();
        let on_w = crate::analysis::total_error(&a, &w, 1.0).unwrap().total;
        let on_v = crate::analysis::total_error(&a, &v, 1.0).unwrap().total;
        assert!((on_w - on_v).abs() / on_w < 1e-8);
    }

    #[test]
    fn reduce_rejects_rank_deficient() {
        let w = QueryMatrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            workload_reduce(&w),
            Err(Error::RankDeficient { .. })
        ));
    }
}
