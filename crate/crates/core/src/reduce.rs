//! Order-independent reductions across individuals.
//!
//! Terms are sorted under the IEEE total order and then combined by a
//! balanced pairwise tree, so the result depends only on the multiset of
//! terms: any permutation of individuals and any worker count produce
//! bit-identical sums.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

const LEAF: usize = 8;

fn pairwise(xs: &[f64]) -> f64 {
    if xs.len() <= LEAF {
        let mut acc = 0.0;
        for &x in xs {
            acc += x;
        }
        return acc;
    }
    let mid = xs.len() / 2;
    pairwise(&xs[..mid]) + pairwise(&xs[mid..])
}

/// Sum of a set of per-individual terms, independent of their order.
pub fn det_sum(terms: &[f64]) -> f64 {
    let mut sorted = terms.to_vec();
    sorted.sort_by(f64::total_cmp);
    pairwise(&sorted)
}

/// Pairwise sum in the given order (used for within-trajectory sums where
/// the time order is canonical).
pub fn ordered_sum(terms: &[f64]) -> f64 {
    pairwise(terms)
}

/// Component-wise order-independent sum of equally sized vectors.
pub fn det_sum_vectors(terms: &[DVector<f64>], dim: usize) -> DVector<f64> {
    let mut out = DVector::zeros(dim);
    let mut column = Vec::with_capacity(terms.len());
    for k in 0..dim {
        column.clear();
        column.extend(terms.iter().map(|v| v[k]));
        out[k] = det_sum(&column);
    }
    out
}

/// Entry-wise order-independent sum of equally shaped matrices.
pub fn det_sum_matrices(terms: &[DMatrix<f64>], rows: usize, cols: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows, cols);
    let mut column = Vec::with_capacity(terms.len());
    for r in 0..rows {
        for c in 0..cols {
            column.clear();
            column.extend(terms.iter().map(|m| m[(r, c)]));
            out[(r, c)] = det_sum(&column);
        }
    }
    out
}

/// Evaluate `f(i)` for `i in 0..count`, optionally on the rayon pool.
/// Output order always follows `i`.
pub fn map_individuals<T, F>(count: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..count).into_par_iter().map(f).collect()
    } else {
        (0..count).map(f).collect()
    }
}
