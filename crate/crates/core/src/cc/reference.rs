//! Plain-loop reference kernels for the demo terms. These are the raw-array
//! twins of the operation-layer programs in [`super::demo`]; tests and demo
//! reports cross-check the two paths against each other.

use ndarray::{Array2, Array4};

use crate::error::{Error, Result};

use super::MOSpace;

/// Occupied-pair intermediate `I[[i,j,m,n]] = sum_{e,f} v[[e,f,m,n]] t2[[i,j,e,f]]`
/// (virtual sums over the full unrestricted range).
pub fn pair_intermediate(v: &Array4<f64>, t2: &Array4<f64>, n_o: usize, n_u: usize) -> Array4<f64> {
    let mut out = Array4::zeros((n_o, n_o, n_o, n_o));
    for i in 0..n_o {
        for j in 0..n_o {
            for m in 0..n_o {
                for n in 0..n_o {
                    let mut sum = 0.0;
                    for e in 0..n_u {
                        for f in 0..n_u {
                            sum += v[[n_o + e, n_o + f, m, n]] * t2[[i, j, e, f]];
                        }
                    }
                    out[[i, j, m, n]] = sum;
                }
            }
        }
    }
    out
}

/// The doubles contribution evaluated in one shot:
/// `r[[i,j,a,b]] = 1/4 sum_{m,n,e,f} v[[e,f,m,n]] t2[[i,j,e,f]] t2[[m,n,a,b]]`.
pub fn doubles_term_direct(
    v: &Array4<f64>,
    t2: &Array4<f64>,
    n_o: usize,
    n_u: usize,
) -> Array4<f64> {
    let mut out = Array4::zeros((n_o, n_o, n_u, n_u));
    for i in 0..n_o {
        for j in 0..n_o {
            for a in 0..n_u {
                for b in 0..n_u {
                    let mut sum = 0.0;
                    for m in 0..n_o {
                        for n in 0..n_o {
                            for e in 0..n_u {
                                for f in 0..n_u {
                                    sum += v[[n_o + e, n_o + f, m, n]]
                                        * t2[[i, j, e, f]]
                                        * t2[[m, n, a, b]];
                                }
                            }
                        }
                    }
                    out[[i, j, a, b]] = 0.25 * sum;
                }
            }
        }
    }
    out
}

/// The same contribution through the intermediate:
/// `r[[i,j,a,b]] = 1/4 sum_{m,n} I[[i,j,m,n]] t2[[m,n,a,b]]`.
pub fn doubles_term_factored(
    intermediate: &Array4<f64>,
    t2: &Array4<f64>,
    n_o: usize,
    n_u: usize,
) -> Array4<f64> {
    let mut out = Array4::zeros((n_o, n_o, n_u, n_u));
    for i in 0..n_o {
        for j in 0..n_o {
            for a in 0..n_u {
                for b in 0..n_u {
                    let mut sum = 0.0;
                    for m in 0..n_o {
                        for n in 0..n_o {
                            sum += intermediate[[i, j, m, n]] * t2[[m, n, a, b]];
                        }
                    }
                    out[[i, j, a, b]] = 0.25 * sum;
                }
            }
        }
    }
    out
}

/// Signed partitions used by the triples assembly: for `(x, y, z)` drawn from
/// an ordered triple, the parity of moving the chosen element(s) out front.
const PAIR_SPLITS: [([usize; 2], usize, f64); 3] = [
    ([0, 1], 2, 1.0),
    ([0, 2], 1, -1.0),
    ([1, 2], 0, 1.0),
];
const SINGLE_SPLITS: [(usize, [usize; 2], f64); 3] = [
    (0, [1, 2], 1.0),
    (1, [0, 2], -1.0),
    (2, [0, 1], 1.0),
];

/// The eighteen-term doubles contraction entering one triples matrix element,
/// split into the nine occupied-sum terms and the nine virtual-sum terms.
/// Returns `(occupied part, virtual part, total)` for `i<j<k`, `a<b<c`
/// (virtual indices relative).
pub fn triples_doubles_element(
    v: &Array4<f64>,
    t2: &Array4<f64>,
    n_o: usize,
    n_u: usize,
    occ: [usize; 3],
    virt: [usize; 3],
) -> Result<(f64, f64, f64)> {
    if !(occ[0] < occ[1] && occ[1] < occ[2] && virt[0] < virt[1] && virt[1] < virt[2]) {
        return Err(Error::UnorderedTriple);
    }
    let (a_part, b_part) = triples_doubles_unrestricted(v, t2, n_o, n_u, occ, virt);
    Ok((a_part, b_part, a_part + b_part))
}

/// Same assembly without the ordering precondition; used by symmetry scans.
pub fn triples_doubles_unrestricted(
    v: &Array4<f64>,
    t2: &Array4<f64>,
    n_o: usize,
    n_u: usize,
    occ: [usize; 3],
    virt: [usize; 3],
) -> (f64, f64) {
    let g = |r: usize| n_o + virt[r];

    let mut a_part = 0.0;
    for &([x, y], z, so) in &PAIR_SPLITS {
        for &(alpha, [beta, gamma], sv) in &SINGLE_SPLITS {
            let mut term = 0.0;
            for m in 0..n_o {
                term += v[[occ[x], occ[y], m, g(alpha)]]
                    * t2[[m, occ[z], virt[beta], virt[gamma]]];
            }
            a_part += so * sv * term;
        }
    }

    let mut b_part = 0.0;
    for &(x, [y, z], so) in &SINGLE_SPLITS {
        for &([alpha, beta], gamma, sv) in &PAIR_SPLITS {
            let mut term = 0.0;
            for e in 0..n_u {
                term += v[[n_o + e, occ[x], g(alpha), g(beta)]]
                    * t2[[occ[y], occ[z], e, virt[gamma]]];
            }
            b_part -= so * sv * term;
        }
    }

    (a_part, b_part)
}

/// The nine-term singles contraction entering one triples matrix element,
/// for `i<j<k`, `a<b<c`.
pub fn triples_singles_element(
    v: &Array4<f64>,
    t1: &Array2<f64>,
    n_o: usize,
    occ: [usize; 3],
    virt: [usize; 3],
) -> Result<f64> {
    if !(occ[0] < occ[1] && occ[1] < occ[2] && virt[0] < virt[1] && virt[1] < virt[2]) {
        return Err(Error::UnorderedTriple);
    }
    Ok(triples_singles_unrestricted(v, t1, n_o, occ, virt))
}

pub fn triples_singles_unrestricted(
    v: &Array4<f64>,
    t1: &Array2<f64>,
    n_o: usize,
    occ: [usize; 3],
    virt: [usize; 3],
) -> f64 {
    let g = |r: usize| n_o + virt[r];
    let mut sum = 0.0;
    for &([x, y], z, so) in &PAIR_SPLITS {
        for &([alpha, beta], gamma, sv) in &PAIR_SPLITS {
            sum += so * sv * v[[occ[x], occ[y], g(alpha), g(beta)]] * t1[[occ[z], virt[gamma]]];
        }
    }
    sum
}

/// Perturbative triples energy: over ordered index triples, the squared
/// doubles element plus the singles-doubles cross term, divided by the
/// orbital-energy denominator. Real orbitals, so the bra factor reuses the
/// same amplitudes.
pub fn triples_energy(
    v: &Array4<f64>,
    t1: &Array2<f64>,
    t2: &Array4<f64>,
    mo: &MOSpace,
) -> Result<f64> {
    let (n_o, n_u) = (mo.n_o, mo.n_u);
    let mut energy = 0.0;
    for i in 0..n_o {
        for j in i + 1..n_o {
            for k in j + 1..n_o {
                for a in 0..n_u {
                    for b in a + 1..n_u {
                        for c in b + 1..n_u {
                            let d = mo.denominator([i, j, k], [a, b, c]);
                            if d == 0.0 {
                                return Err(Error::ZeroDenominator);
                            }
                            let (_, _, y) =
                                triples_doubles_element(v, t2, n_o, n_u, [i, j, k], [a, b, c])?;
                            let s =
                                triples_singles_element(v, t1, n_o, [i, j, k], [a, b, c])?;
                            energy += (y * y + s * y) / d;
                        }
                    }
                }
            }
        }
    }
    Ok(energy)
}
