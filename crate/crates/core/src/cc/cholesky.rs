//! Pivoted Cholesky decomposition of positive-semidefinite matrices and the
//! antisymmetrized two-body reconstruction built from the factors.

use ndarray::{Array2, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Low-rank factor from a pivoted Cholesky run: `m ~= cols * cols^T`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    /// `dim x rank`, one column per accepted pivot.
    pub cols: Array2<f64>,
    pub rank: usize,
    /// Largest residual diagonal entry at termination.
    pub residual: f64,
    /// Pivot order.
    pub pivots: Vec<usize>,
    /// Largest residual diagonal after each accepted pivot.
    pub residual_history: Vec<f64>,
}

impl CholeskyFactor {
    /// Dense reconstruction `cols * cols^T`.
    pub fn reconstruct(&self) -> Array2<f64> {
        let dim = self.cols.nrows();
        let mut out = Array2::zeros((dim, dim));
        for r in 0..dim {
            for c in 0..dim {
                let mut sum = 0.0;
                for l in 0..self.rank {
                    sum += self.cols[[r, l]] * self.cols[[c, l]];
                }
                out[[r, c]] = sum;
            }
        }
        out
    }
}

/// Diagonally pivoted Cholesky: pick the largest remaining diagonal, append
/// the corresponding column, and stop once the residual diagonal falls to
/// `tol`. A pivot below `-tol` means the input is not positive semidefinite.
pub fn pivoted_cholesky(m: &Array2<f64>, tol: f64) -> Result<CholeskyFactor> {
    assert!(m.nrows() == m.ncols(), "matrix must be square");
    assert!(tol > 0.0, "tolerance must be positive");
    let dim = m.nrows();
    let mut diag: Vec<f64> = (0..dim).map(|i| m[[i, i]]).collect();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut pivots = Vec::new();
    let mut residual_history = Vec::new();

    loop {
        let (pivot, &pivot_val) = diag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .expect("non-empty diagonal");
        if pivot_val <= tol {
            // a PSD residual stays above -tol everywhere
            let min_diag = diag.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            if min_diag < -tol {
                return Err(Error::NotPositiveSemidefinite {
                    pivot: min_diag,
                    step: cols.len(),
                });
            }
            break;
        }
        let root = pivot_val.sqrt();
        let mut col = vec![0.0; dim];
        for r in 0..dim {
            let mut s = m[[r, pivot]];
            for prev in &cols {
                s -= prev[r] * prev[pivot];
            }
            col[r] = s / root;
        }
        for r in 0..dim {
            diag[r] -= col[r] * col[r];
        }
        pivots.push(pivot);
        cols.push(col);
        let max_residual = diag.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        residual_history.push(max_residual);
        if cols.len() == dim {
            break;
        }
    }

    let rank = cols.len();
    let residual = residual_history.last().copied().unwrap_or_else(|| {
        diag.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    });
    let mut out = Array2::zeros((dim, rank));
    for (l, col) in cols.iter().enumerate() {
        for r in 0..dim {
            out[[r, l]] = col[r];
        }
    }
    Ok(CholeskyFactor {
        cols: out,
        rank,
        residual,
        pivots,
        residual_history,
    })
}

/// Random rank-`rank` PSD matrix `g * g^T` of size `dim`.
pub fn synth_low_rank_psd(dim: usize, rank: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Array2::zeros((dim, rank));
    for slot in g.iter_mut() {
        *slot = rng.random_range(-1.0..1.0);
    }
    let mut out = Array2::zeros((dim, dim));
    for r in 0..dim {
        for c in 0..dim {
            let mut sum = 0.0;
            for l in 0..rank {
                sum += g[[r, l]] * g[[c, l]];
            }
            out[[r, c]] = sum;
        }
    }
    out
}

/// Assemble the antisymmetrized two-body tensor from factor columns over the
/// composite pair index: with `B[p,r,l] = cols[[p*n + r, l]]`,
/// `v[p,q,r,s] = sum_l B[p,r,l] B[q,s,l] - B[p,s,l] B[q,r,l]`.
/// The result is exactly antisymmetric in `(p,q)` and `(r,s)`.
pub fn reconstruct_two_body(cols: &Array2<f64>, n: usize) -> Array4<f64> {
    assert_eq!(cols.nrows(), n * n, "factor rows must be a pair index");
    let rank = cols.ncols();
    let b = |p: usize, r: usize, l: usize| cols[[p * n + r, l]];
    let mut v = Array4::zeros((n, n, n, n));
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    let mut sum = 0.0;
                    for l in 0..rank {
                        sum += b(p, r, l) * b(q, s, l) - b(p, s, l) * b(q, r, l);
                    }
                    v[[p, q, r, s]] = sum;
                }
            }
        }
    }
    v
}

/// The same antisymmetrized assembly straight from a dense pair matrix
/// `w[(p,r), (q,s)]`; the exact target the factored form approximates.
pub fn two_body_from_pair_matrix(w: &Array2<f64>, n: usize) -> Array4<f64> {
    assert_eq!(w.nrows(), n * n);
    let mut v = Array4::zeros((n, n, n, n));
    for p in 0..n {
        for q in 0..n {
            for r in 0..n {
                for s in 0..n {
                    v[[p, q, r, s]] = w[[p * n + r, q * n + s]] - w[[p * n + s, q * n + r]];
                }
            }
        }
    }
    v
}
