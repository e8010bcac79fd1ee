//! Coupled-cluster demo kernels: synthetic one-/two-body tensors and
//! amplitudes, an occupied-pair intermediate that factorizes a doubles term,
//! pivoted-Cholesky reconstruction of the two-body tensor, and the
//! perturbative-triples assembly and energy.
//!
//! Index conventions: spin orbitals run over `0..n_o + n_u` with the occupied
//! block first. `v[[p,q,r,s]]` is antisymmetric in `(p,q)` and `(r,s)`;
//! `t2[[i,j,a,b]]` (virtuals relative) is antisymmetric in `(i,j)` and
//! `(a,b)`.

pub mod cholesky;
pub mod demo;
pub mod reference;

use ndarray::{Array2, Array4};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use cholesky::{pivoted_cholesky, reconstruct_two_body, synth_low_rank_psd, CholeskyFactor};
pub use demo::{run_cc_demo, CcDemoConfig, CcDemoReport, KernelCheck};

/// Occupied/virtual orbital counts and orbital energies. Occupied energies
/// sit in (-2, -1) and virtual in (+1, +2), both strictly increasing, so
/// every triples denominator is nonzero.
#[derive(Clone, Debug)]
pub struct MOSpace {
    pub n_o: usize,
    pub n_u: usize,
    /// One energy per spin orbital, occupied first.
    pub eps: Vec<f64>,
}

impl MOSpace {
    pub fn total(&self) -> usize {
        self.n_o + self.n_u
    }

    /// `eps_i + eps_j + eps_k - eps_a - eps_b - eps_c` with virtuals relative.
    pub fn denominator(&self, occ: [usize; 3], virt: [usize; 3]) -> f64 {
        let e = |p: usize| self.eps[p];
        occ.iter().map(|&i| e(i)).sum::<f64>()
            - virt.iter().map(|&a| e(self.n_o + a)).sum::<f64>()
    }
}

/// Synthetic stand-ins for the interaction tensors and amplitudes.
#[derive(Clone, Debug)]
pub struct CcTensors {
    /// One-body tensor, symmetric, over the full orbital range.
    pub h: Array2<f64>,
    /// Antisymmetrized two-body tensor over the full orbital range.
    pub v: Array4<f64>,
    /// Singles amplitudes `t1[[i, a]]`.
    pub t1: Array2<f64>,
    /// Doubles amplitudes `t2[[i, j, a, b]]`.
    pub t2: Array4<f64>,
}

/// Antisymmetrize an order-4 array in its first and last index pairs. The
/// canonical (ordered-index) value is computed once and copied with sign
/// flips, so the antisymmetries hold bit-exactly.
fn antisymmetrize4(x: &Array4<f64>) -> Array4<f64> {
    let (d0, _, d2, _) = x.dim();
    let mut out = Array4::zeros(x.dim());
    for p in 0..d0 {
        for q in p + 1..d0 {
            for r in 0..d2 {
                for s in r + 1..d2 {
                    let val = 0.25
                        * (x[[p, q, r, s]] - x[[q, p, r, s]] - x[[p, q, s, r]]
                            + x[[q, p, s, r]]);
                    out[[p, q, r, s]] = val;
                    out[[q, p, r, s]] = -val;
                    out[[p, q, s, r]] = -val;
                    out[[q, p, s, r]] = val;
                }
            }
        }
    }
    out
}

/// Seeded pseudo-random tensors with the required antisymmetries and a
/// gapped, strictly increasing orbital-energy ladder.
pub fn synthesize(n_o: usize, n_u: usize, seed: u64) -> Result<(MOSpace, CcTensors)> {
    if n_o < 2 || n_u < 2 {
        return Err(Error::BadSystemSize {
            need: "n_o >= 2 and n_u >= 2",
            n_o,
            n_u,
        });
    }
    let n = n_o + n_u;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |lo: f64, hi: f64| rng.random_range(lo..hi);

    let mut h = Array2::zeros((n, n));
    for p in 0..n {
        for q in 0..=p {
            let x = uniform(-1.0, 1.0);
            h[[p, q]] = x;
            h[[q, p]] = x;
        }
    }

    let mut v_raw = Array4::zeros((n, n, n, n));
    for slot in v_raw.iter_mut() {
        *slot = uniform(-1.0, 1.0);
    }
    let v = antisymmetrize4(&v_raw);

    let mut t1 = Array2::zeros((n_o, n_u));
    for slot in t1.iter_mut() {
        *slot = 0.1 * uniform(-1.0, 1.0);
    }

    let mut t2_raw = Array4::zeros((n_o, n_o, n_u, n_u));
    for slot in t2_raw.iter_mut() {
        *slot = 0.1 * uniform(-1.0, 1.0);
    }
    let t2 = antisymmetrize4(&t2_raw);

    let mut eps = Vec::with_capacity(n);
    for i in 0..n_o {
        eps.push(-2.0 + (i as f64 + uniform(0.1, 0.9)) / n_o as f64);
    }
    for a in 0..n_u {
        eps.push(1.0 + (a as f64 + uniform(0.1, 0.9)) / n_u as f64);
    }

    Ok((MOSpace { n_o, n_u, eps }, CcTensors { h, v, t1, t2 }))
}

/// `max |a - b| / max(1, |a|_inf, |b|_inf)`.
pub fn relative_max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(1.0_f64, |m, v| m.max(v.abs()));
    a.iter()
        .zip(b)
        .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
