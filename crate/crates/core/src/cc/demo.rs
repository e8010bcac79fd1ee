//! The coupled-cluster demo driven through the operation layer: the doubles
//! term evaluated both directly (one-shot, order-8 intermediate product) and
//! through the occupied-pair intermediate, the triples assembly as a chain of
//! accumulating contractions, and a pivoted-Cholesky check - all cross-checked
//! against the plain-loop kernels in [`super::reference`].

use ndarray::{Array2, Array4};
use serde::Serialize;

use crate::distribution::{ProcessGroup, Scheme};
use crate::error::Result;
use crate::index_space::{IndexSpace, TiledIndexLabel, TiledIndexSpace};
use crate::ops;
use crate::scheduler::{ExecutionContext, Scheduler};
use crate::tensor::Tensor;

use super::cholesky::{pivoted_cholesky, reconstruct_two_body, synth_low_rank_psd, two_body_from_pair_matrix};
use super::reference;
use super::{relative_max_diff, synthesize, CcTensors, MOSpace};

#[derive(Clone, Debug, Serialize)]
pub struct CcDemoConfig {
    pub n_o: usize,
    pub n_u: usize,
    pub seed: u64,
    pub nranks: usize,
    pub scheme: Scheme,
    pub tol: f64,
}

impl Default for CcDemoConfig {
    fn default() -> Self {
        CcDemoConfig {
            n_o: 3,
            n_u: 4,
            seed: 1,
            nranks: 4,
            scheme: Scheme::RoundRobinDense,
            tol: 1e-10,
        }
    }
}

/// One named agreement check of the demo report.
#[derive(Clone, Debug, Serialize)]
pub struct KernelCheck {
    pub name: String,
    pub max_rel_diff: f64,
    pub tol: f64,
    pub pass: bool,
}

impl KernelCheck {
    fn new(name: &str, diff: f64, tol: f64) -> KernelCheck {
        KernelCheck {
            name: name.to_string(),
            max_rel_diff: diff,
            tol,
            pass: diff <= tol,
        }
    }

    fn exact(name: &str, got: u64, want: u64) -> KernelCheck {
        KernelCheck {
            name: format!("{name} (got {got}, want {want})"),
            max_rel_diff: if got == want { 0.0 } else { 1.0 },
            tol: 0.0,
            pass: got == want,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct CcDemoReport {
    pub config: CcDemoConfig,
    pub checks: Vec<KernelCheck>,
    /// Measured contraction flops of the one-shot doubles program.
    pub flops_direct: u64,
    /// Measured contraction flops of the factorized doubles program.
    pub flops_factored: u64,
    pub predicted_flops_direct: u64,
    pub predicted_flops_factored: u64,
    /// Level counts per executed program phase.
    pub levels_factored: usize,
    pub levels_direct: usize,
    pub levels_triples: usize,
    pub total_syncs: u64,
    pub triples_energy: Option<f64>,
    pub triples_skipped: bool,
    pub cholesky_rank: usize,
    pub cholesky_residual: f64,
    pub passed: bool,
}

/// Predicted contraction flops (2*m*n*k per pass) of the one-shot doubles
/// evaluation: an order-8 pair product followed by a full contraction.
pub fn predicted_flops_direct(n_o: usize, n_u: usize) -> u64 {
    let o = n_o as u64;
    let u = n_u as u64;
    4 * o.pow(4) * u.pow(4)
}

/// Predicted contraction flops of the factorized evaluation: two passes of
/// cost `2 * n_o^4 * n_u^2` each.
pub fn predicted_flops_factored(n_o: usize, n_u: usize) -> u64 {
    let o = n_o as u64;
    let u = n_u as u64;
    4 * o.pow(4) * u.pow(2)
}

/// The molecular-orbital tiled space for the demo: one index space with
/// occupied and virtual named subranges, tiled so that no tile straddles the
/// occupied/virtual boundary, plus the two sub-tiled-spaces.
pub fn mo_tiled_space(
    n_o: usize,
    n_u: usize,
) -> Result<(TiledIndexSpace, TiledIndexSpace, TiledIndexSpace)> {
    let n = n_o + n_u;
    let space = IndexSpace::builder(n)
        .subspace("occ", [0..n_o])
        .subspace("virt", [n_o..n])
        .build()?;
    let mut sizes = Vec::new();
    for extent in [n_o, n_u] {
        if extent >= 2 {
            sizes.push(extent.div_ceil(2));
            sizes.push(extent / 2);
        } else {
            sizes.push(extent);
        }
    }
    let tiled = TiledIndexSpace::custom(&space, &sizes)?;
    let occ = tiled.subspace("occ")?;
    let virt = tiled.subspace("virt")?;
    Ok((tiled, occ, virt))
}

struct DslInputs {
    ec: ExecutionContext,
    v: Tensor,
    t2: Tensor,
    occ: TiledIndexSpace,
    virt: TiledIndexSpace,
}

fn stage_inputs(cfg: &CcDemoConfig, cc: &CcTensors) -> Result<DslInputs> {
    let n_o = cfg.n_o;
    let (mo, occ, virt) = mo_tiled_space(cfg.n_o, cfg.n_u)?;
    let ec = ExecutionContext::new(ProcessGroup::new(cfg.nranks)?, cfg.scheme);

    let v = Tensor::named("v", vec![mo.clone(), mo.clone(), mo.clone(), mo.clone()]);
    ec.allocate(&v)?;
    let vv = cc.v.clone();
    ec.fill_with(&v, move |g| vv[[g[0], g[1], g[2], g[3]]])?;

    let t2 = Tensor::named("t2", vec![occ.clone(), occ.clone(), virt.clone(), virt.clone()]);
    ec.allocate(&t2)?;
    let tt = cc.t2.clone();
    ec.fill_with(&t2, move |g| {
        tt[[g[0], g[1], g[2] - n_o, g[3] - n_o]]
    })?;

    Ok(DslInputs {
        ec,
        v,
        t2,
        occ,
        virt,
    })
}

fn occ_labels(occ: &TiledIndexSpace, names: &[&str]) -> Vec<TiledIndexLabel> {
    occ.labels_named(names)
}

/// Factorized doubles program: build the occupied-pair intermediate, then
/// contract it with the amplitudes. Returns the materialized result (by
/// positions `i,j,a,b`), measured flops, and level count.
fn run_factored(inputs: &DslInputs) -> Result<(Array4<f64>, u64, usize)> {
    let DslInputs {
        ec, v, t2, occ, virt, ..
    } = inputs;
    let ol = occ_labels(occ, &["i", "j", "m", "n"]);
    let (i, j, m, n) = (&ol[0], &ol[1], &ol[2], &ol[3]);
    let vl = virt.labels_named(&["e", "f", "a", "b"]);
    let (e, f, a, b) = (&vl[0], &vl[1], &vl[2], &vl[3]);

    let inter = Tensor::named("I", vec![occ.clone(), occ.clone(), occ.clone(), occ.clone()]);
    let rf = Tensor::named("Rf", vec![occ.clone(), occ.clone(), virt.clone(), virt.clone()]);

    let mut sch = Scheduler::new(ec);
    sch.allocate([&inter, &rf])?;
    sch.enqueue(ops::mult(
        inter.at(&[i, j, m, n])?,
        1.0,
        v.at(&[e, f, m, n])?,
        t2.at(&[i, j, e, f])?,
    )?)?;
    sch.enqueue(ops::mult(
        rf.at(&[i, j, a, b])?,
        0.25,
        inter.at(&[i, j, m, n])?,
        t2.at(&[m, n, a, b])?,
    )?)?;
    let levels = sch.levelize().num_levels();
    let stats = sch.execute()?;
    let dense = ec.materialize(&rf)?;
    let n_o = occ.extent();
    let n_u = virt.extent();
    let arr = Array4::from_shape_vec((n_o, n_o, n_u, n_u), dense.data)
        .expect("materialized shape matches");
    ec.deallocate(&inter)?;
    ec.deallocate(&rf)?;
    Ok((arr, stats.flops, levels))
}

/// One-shot doubles program: the unfactorized amplitude pair product as an
/// order-8 tensor, then one full contraction with the two-body slice.
fn run_direct(inputs: &DslInputs) -> Result<(Array4<f64>, u64, usize)> {
    let DslInputs {
        ec, v, t2, occ, virt, ..
    } = inputs;
    let ol = occ_labels(occ, &["i", "j", "m", "n"]);
    let (i, j, m, n) = (&ol[0], &ol[1], &ol[2], &ol[3]);
    let vl = virt.labels_named(&["e", "f", "a", "b"]);
    let (e, f, a, b) = (&vl[0], &vl[1], &vl[2], &vl[3]);

    let pair = Tensor::named(
        "X",
        vec![
            occ.clone(),
            occ.clone(),
            virt.clone(),
            virt.clone(),
            occ.clone(),
            occ.clone(),
            virt.clone(),
            virt.clone(),
        ],
    );
    let rd = Tensor::named("Rd", vec![occ.clone(), occ.clone(), virt.clone(), virt.clone()]);

    let mut sch = Scheduler::new(ec);
    sch.allocate([&pair, &rd])?;
    sch.enqueue(ops::mult(
        pair.at(&[i, j, e, f, m, n, a, b])?,
        1.0,
        t2.at(&[i, j, e, f])?,
        t2.at(&[m, n, a, b])?,
    )?)?;
    sch.enqueue(ops::mult(
        rd.at(&[i, j, a, b])?,
        0.25,
        pair.at(&[i, j, e, f, m, n, a, b])?,
        v.at(&[e, f, m, n])?,
    )?)?;
    let levels = sch.levelize().num_levels();
    let stats = sch.execute()?;
    let dense = ec.materialize(&rd)?;
    let n_o = occ.extent();
    let n_u = virt.extent();
    let arr = Array4::from_shape_vec((n_o, n_o, n_u, n_u), dense.data)
        .expect("materialized shape matches");
    ec.deallocate(&pair)?;
    ec.deallocate(&rd)?;
    Ok((arr, stats.flops, levels))
}

/// Result of the triples assembly program: dense occupied/virtual images of
/// the doubles (18-term) and singles (9-term) contractions.
struct TriplesDsl {
    doubles: Vec<f64>,
    singles: Vec<f64>,
    levels: usize,
    syncs: u64,
}

/// Signed splits mirroring the reference assembly; `(pair, single, sign)`
/// over an ordered triple.
const PAIR_SPLITS: [([usize; 2], usize, f64); 3] =
    [([0, 1], 2, 1.0), ([0, 2], 1, -1.0), ([1, 2], 0, 1.0)];
const SINGLE_SPLITS: [(usize, [usize; 2], f64); 3] =
    [(0, [1, 2], 1.0), (1, [0, 2], -1.0), (2, [0, 1], 1.0)];

fn run_triples_dsl(inputs: &DslInputs, t1_arr: &Array2<f64>) -> Result<TriplesDsl> {
    let DslInputs {
        ec, v, t2, occ, virt, ..
    } = inputs;
    let n_o = occ.extent();

    let ol = occ.labels_named(&["i", "j", "k", "m"]);
    let (i, j, k, m) = (&ol[0], &ol[1], &ol[2], &ol[3]);
    let vl = virt.labels_named(&["a", "b", "c", "e"]);
    let (a, b, c, e) = (&vl[0], &vl[1], &vl[2], &vl[3]);
    let occ3 = [i, j, k];
    let virt3 = [a, b, c];

    let t1 = Tensor::named("t1", vec![occ.clone(), virt.clone()]);
    ec.allocate(&t1)?;
    let t1c = t1_arr.clone();
    ec.fill_with(&t1, move |g| t1c[[g[0], g[1] - n_o]])?;

    let w = Tensor::named(
        "W",
        vec![
            occ.clone(),
            occ.clone(),
            occ.clone(),
            virt.clone(),
            virt.clone(),
            virt.clone(),
        ],
    );
    let s = Tensor::named(
        "S",
        vec![
            occ.clone(),
            occ.clone(),
            occ.clone(),
            virt.clone(),
            virt.clone(),
            virt.clone(),
        ],
    );

    let mut sch = Scheduler::new(ec);
    sch.allocate([&w, &s])?;
    let w_lhs = || w.at(&[i, j, k, a, b, c]);
    let s_lhs = || s.at(&[i, j, k, a, b, c]);
    sch.enqueue(ops::set(w_lhs()?, 0.0)?)?;
    sch.enqueue(ops::set(s_lhs()?, 0.0)?)?;

    // occupied-sum terms of the doubles assembly
    for ([x, y], z, so) in PAIR_SPLITS {
        for (alpha, [beta, gamma], sv) in SINGLE_SPLITS {
            sch.enqueue(ops::mult_accumulate(
                w_lhs()?,
                so * sv,
                v.at(&[occ3[x], occ3[y], m, virt3[alpha]])?,
                t2.at(&[m, occ3[z], virt3[beta], virt3[gamma]])?,
            )?)?;
        }
    }
    // virtual-sum terms
    for (x, [y, z], so) in SINGLE_SPLITS {
        for ([alpha, beta], gamma, sv) in PAIR_SPLITS {
            sch.enqueue(ops::mult_accumulate(
                w_lhs()?,
                -(so * sv),
                v.at(&[e, occ3[x], virt3[alpha], virt3[beta]])?,
                t2.at(&[occ3[y], occ3[z], e, virt3[gamma]])?,
            )?)?;
        }
    }
    // singles assembly
    for ([x, y], z, so) in PAIR_SPLITS {
        for ([alpha, beta], gamma, sv) in PAIR_SPLITS {
            sch.enqueue(ops::mult_accumulate(
                s_lhs()?,
                so * sv,
                v.at(&[occ3[x], occ3[y], virt3[alpha], virt3[beta]])?,
                t1.at(&[occ3[z], virt3[gamma]])?,
            )?)?;
        }
    }

    let levels = sch.levelize().num_levels();
    let stats = sch.execute()?;
    let doubles = ec.materialize(&w)?.data;
    let singles = ec.materialize(&s)?.data;
    ec.deallocate(&w)?;
    ec.deallocate(&s)?;
    ec.deallocate(&t1)?;
    Ok(TriplesDsl {
        doubles,
        singles,
        levels,
        syncs: stats.global_syncs,
    })
}

/// Run the full demo: factorized-vs-direct doubles with flop accounting,
/// the triples assembly and energy, and the Cholesky reconstruction check.
pub fn run_cc_demo(cfg: &CcDemoConfig) -> Result<CcDemoReport> {
    let (mo, cc) = synthesize(cfg.n_o, cfg.n_u, cfg.seed)?;
    let (n_o, n_u) = (cfg.n_o, cfg.n_u);
    let inputs = stage_inputs(cfg, &cc)?;
    let mut checks = Vec::new();
    let mut total_syncs = 0u64;

    // doubles term: factorized and direct, against the loop kernels
    let (rf, flops_factored, levels_factored) = run_factored(&inputs)?;
    let (rd, flops_direct, levels_direct) = run_direct(&inputs)?;
    total_syncs += (levels_factored + levels_direct) as u64;

    let inter_loops = reference::pair_intermediate(&cc.v, &cc.t2, n_o, n_u);
    let fact_loops = reference::doubles_term_factored(&inter_loops, &cc.t2, n_o, n_u);
    let direct_loops = reference::doubles_term_direct(&cc.v, &cc.t2, n_o, n_u);

    checks.push(KernelCheck::new(
        "doubles factorized vs loop kernel",
        relative_max_diff(rf.as_slice().unwrap(), fact_loops.as_slice().unwrap()),
        cfg.tol,
    ));
    checks.push(KernelCheck::new(
        "doubles direct vs loop kernel",
        relative_max_diff(rd.as_slice().unwrap(), direct_loops.as_slice().unwrap()),
        cfg.tol,
    ));
    checks.push(KernelCheck::new(
        "doubles factorized vs direct",
        relative_max_diff(rf.as_slice().unwrap(), rd.as_slice().unwrap()),
        cfg.tol,
    ));

    let predicted_direct = predicted_flops_direct(n_o, n_u);
    let predicted_factored = predicted_flops_factored(n_o, n_u);
    checks.push(KernelCheck::exact(
        "direct flop counter",
        flops_direct,
        predicted_direct,
    ));
    checks.push(KernelCheck::exact(
        "factorized flop counter",
        flops_factored,
        predicted_factored,
    ));

    // triples assembly and energy (needs ordered triples on both sides)
    let triples_skipped = n_o < 3 || n_u < 3;
    let mut triples_energy = None;
    let mut levels_triples = 0;
    if !triples_skipped {
        let tri = run_triples_dsl(&inputs, &cc.t1)?;
        levels_triples = tri.levels;
        total_syncs += tri.syncs;

        let at6 = |data: &[f64], i: usize, j: usize, k: usize, a: usize, b: usize, c: usize| {
            data[((((i * n_o + j) * n_o + k) * n_u + a) * n_u + b) * n_u + c]
        };
        let mut w_diff = 0.0_f64;
        let mut s_diff = 0.0_f64;
        let mut energy_dsl = 0.0;
        for i in 0..n_o {
            for j in i + 1..n_o {
                for k in j + 1..n_o {
                    for a in 0..n_u {
                        for b in a + 1..n_u {
                            for c in b + 1..n_u {
                                let (_, _, y_ref) = reference::triples_doubles_element(
                                    &cc.v, &cc.t2, n_o, n_u, [i, j, k], [a, b, c],
                                )?;
                                let s_ref = reference::triples_singles_element(
                                    &cc.v, &cc.t1, n_o, [i, j, k], [a, b, c],
                                )?;
                                let y_dsl = at6(&tri.doubles, i, j, k, a, b, c);
                                let s_dsl = at6(&tri.singles, i, j, k, a, b, c);
                                w_diff = w_diff.max((y_dsl - y_ref).abs());
                                s_diff = s_diff.max((s_dsl - s_ref).abs());
                                let d = mo.denominator([i, j, k], [a, b, c]);
                                energy_dsl += (y_dsl * y_dsl + s_dsl * y_dsl) / d;
                            }
                        }
                    }
                }
            }
        }
        checks.push(KernelCheck::new(
            "triples doubles assembly vs loop kernel",
            w_diff,
            cfg.tol,
        ));
        checks.push(KernelCheck::new(
            "triples singles assembly vs loop kernel",
            s_diff,
            cfg.tol,
        ));
        let e_ref = reference::triples_energy(&cc.v, &cc.t1, &cc.t2, &mo)?;
        checks.push(KernelCheck::new(
            "triples energy vs loop kernel",
            (energy_dsl - e_ref).abs() / e_ref.abs().max(1.0),
            cfg.tol,
        ));
        triples_energy = Some(energy_dsl);
    }

    // Cholesky: synthesize a rank-n pair matrix, factor it, rebuild the
    // antisymmetrized two-body tensor
    let n = n_o + n_u;
    let w_pair = synth_low_rank_psd(n * n, n, cfg.seed.wrapping_add(17));
    let factor = pivoted_cholesky(&w_pair, 1e-12)?;
    let v_truth = two_body_from_pair_matrix(&w_pair, n);
    let v_rec = reconstruct_two_body(&factor.cols, n);
    let chol_diff = v_truth
        .iter()
        .zip(v_rec.iter())
        .fold(0.0_f64, |mx, (x, y)| mx.max((x - y).abs()));
    checks.push(KernelCheck::new(
        "cholesky two-body reconstruction",
        chol_diff,
        cfg.tol.max(1e-10),
    ));
    checks.push(KernelCheck::exact(
        "cholesky recovered rank",
        factor.rank as u64,
        n as u64,
    ));

    let passed = checks.iter().all(|c| c.pass);
    Ok(CcDemoReport {
        config: cfg.clone(),
        checks,
        flops_direct,
        flops_factored,
        predicted_flops_direct: predicted_direct,
        predicted_flops_factored: predicted_factored,
        levels_factored,
        levels_direct,
        levels_triples,
        total_syncs,
        triples_energy,
        triples_skipped,
        cholesky_rank: factor.rank,
        cholesky_residual: factor.residual,
        passed,
    })
}
