//! Declared tensor operations: set, add (with transpose), binary contraction,
//! scan, and map, plus allocate/deallocate.
//!
//! Constructors validate label structure up front and touch no data; the
//! scheduler decides when and where an operation runs. Read/write sets drive
//! conflict analysis: two operations conflict when they share a tensor and at
//! least one of them writes it.

use std::borrow::Borrow;
use std::collections::BTreeSet;
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::index_space::TiledIndexLabel;
use crate::tensor::{LabeledTensor, Tensor, TensorId};

/// Element function used by scan and map operations.
pub type ElementFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Shared cell a scan reduction writes its result into.
#[derive(Clone, Default)]
pub struct ScanResult(Arc<Mutex<f64>>);

impl ScanResult {
    pub fn get(&self) -> f64 {
        *self.0.lock().unwrap()
    }

    pub(crate) fn set(&self, v: f64) {
        *self.0.lock().unwrap() = v;
    }
}

/// How a contraction maps labels to operand axes.
#[derive(Clone, Debug)]
pub struct ContractionPlan {
    /// For each lhs axis: which operand carries the label (0 or 1) and the
    /// axis within that operand.
    pub lhs_sources: Vec<(usize, usize)>,
    /// For each contracted label: its axis in rhs1 and in rhs2.
    pub contracted: Vec<(usize, usize)>,
}

/// A validated tensor operation.
#[derive(Clone)]
pub enum TensorOp {
    Allocate(Vec<Tensor>),
    Deallocate(Vec<Tensor>),
    /// `lhs = alpha` or `lhs += alpha` on every element of the slice.
    Set {
        lhs: LabeledTensor,
        alpha: f64,
        accumulate: bool,
    },
    /// `lhs (+)= alpha * rhs` up to a label permutation.
    Add {
        lhs: LabeledTensor,
        alpha: f64,
        rhs: LabeledTensor,
        accumulate: bool,
        /// For each lhs axis, the rhs axis carrying the same label.
        permutation: Vec<usize>,
    },
    /// `lhs (+)= alpha * rhs1 * rhs2` contracting over shared labels.
    Mult {
        lhs: LabeledTensor,
        alpha: f64,
        rhs1: LabeledTensor,
        rhs2: LabeledTensor,
        accumulate: bool,
        plan: ContractionPlan,
    },
    /// Read-only fold of `f` over the slice; the sum lands in `sink`.
    Scan {
        src: LabeledTensor,
        f: ElementFn,
        sink: ScanResult,
    },
    /// `lhs = f(rhs)` elementwise, up to a label permutation.
    Map {
        lhs: LabeledTensor,
        f: ElementFn,
        rhs: LabeledTensor,
        permutation: Vec<usize>,
    },
}

impl fmt::Debug for TensorOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_text())
    }
}

/// `lhs = alpha`
pub fn set(lhs: LabeledTensor, alpha: f64) -> Result<TensorOp> {
    Ok(TensorOp::Set {
        lhs,
        alpha,
        accumulate: false,
    })
}

/// `lhs += alpha`
pub fn set_accumulate(lhs: LabeledTensor, alpha: f64) -> Result<TensorOp> {
    Ok(TensorOp::Set {
        lhs,
        alpha,
        accumulate: true,
    })
}

/// `lhs = alpha * rhs`
pub fn add(lhs: LabeledTensor, alpha: f64, rhs: LabeledTensor) -> Result<TensorOp> {
    build_add(lhs, alpha, rhs, false)
}

/// `lhs += alpha * rhs`
pub fn add_accumulate(lhs: LabeledTensor, alpha: f64, rhs: LabeledTensor) -> Result<TensorOp> {
    build_add(lhs, alpha, rhs, true)
}

/// `lhs = alpha * rhs1 * rhs2`
pub fn mult(
    lhs: LabeledTensor,
    alpha: f64,
    rhs1: LabeledTensor,
    rhs2: LabeledTensor,
) -> Result<TensorOp> {
    build_mult(lhs, alpha, rhs1, rhs2, false)
}

/// `lhs += alpha * rhs1 * rhs2`
pub fn mult_accumulate(
    lhs: LabeledTensor,
    alpha: f64,
    rhs1: LabeledTensor,
    rhs2: LabeledTensor,
) -> Result<TensorOp> {
    build_mult(lhs, alpha, rhs1, rhs2, true)
}

/// Fold `f` over every element of the slice; returns the op and the cell the
/// sum will be written into on execution.
pub fn scan(src: LabeledTensor, f: ElementFn) -> (TensorOp, ScanResult) {
    let sink = ScanResult::default();
    (
        TensorOp::Scan {
            src,
            f,
            sink: sink.clone(),
        },
        sink,
    )
}

/// Sum of all elements of the slice.
pub fn scan_sum(src: LabeledTensor) -> (TensorOp, ScanResult) {
    scan(src, Arc::new(|x| x))
}

/// `lhs = f(rhs)` elementwise.
pub fn map(lhs: LabeledTensor, f: ElementFn, rhs: LabeledTensor) -> Result<TensorOp> {
    let permutation = match_labels(&lhs, &rhs)?;
    reject_alias(&lhs, [&rhs])?;
    Ok(TensorOp::Map {
        lhs,
        f,
        rhs,
        permutation,
    })
}

pub fn allocate<I>(tensors: I) -> TensorOp
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Tensor>,
{
    TensorOp::Allocate(
        tensors
            .into_iter()
            .map(|t| t.borrow().clone())
            .collect(),
    )
}

pub fn deallocate<I>(tensors: I) -> TensorOp
where
    I: IntoIterator,
    I::Item: std::borrow::Borrow<Tensor>,
{
    TensorOp::Deallocate(
        tensors
            .into_iter()
            .map(|t| t.borrow().clone())
            .collect(),
    )
}

fn build_add(lhs: LabeledTensor, alpha: f64, rhs: LabeledTensor, accumulate: bool) -> Result<TensorOp> {
    let permutation = match_labels(&lhs, &rhs)?;
    reject_alias(&lhs, [&rhs])?;
    Ok(TensorOp::Add {
        lhs,
        alpha,
        rhs,
        accumulate,
        permutation,
    })
}

fn build_mult(
    lhs: LabeledTensor,
    alpha: f64,
    rhs1: LabeledTensor,
    rhs2: LabeledTensor,
    accumulate: bool,
) -> Result<TensorOp> {
    reject_alias(&lhs, [&rhs1, &rhs2])?;
    let find = |labels: &[TiledIndexLabel], l: &TiledIndexLabel| {
        labels.iter().position(|x| x == l)
    };
    let mut lhs_sources = Vec::with_capacity(lhs.order());
    for l in lhs.labels() {
        let in1 = find(rhs1.labels(), l);
        let in2 = find(rhs2.labels(), l);
        match (in1, in2) {
            (Some(_), Some(_)) => {
                return Err(Error::AmbiguousLabel {
                    label: l.name().to_string(),
                })
            }
            (Some(p), None) => lhs_sources.push((0, p)),
            (None, Some(p)) => lhs_sources.push((1, p)),
            (None, None) => {
                return Err(Error::DanglingLabel {
                    label: l.name().to_string(),
                })
            }
        }
    }
    let mut contracted = Vec::new();
    for (p1, l) in rhs1.labels().iter().enumerate() {
        if find(lhs.labels(), l).is_some() {
            continue;
        }
        match find(rhs2.labels(), l) {
            Some(p2) => contracted.push((p1, p2)),
            None => {
                return Err(Error::DanglingLabel {
                    label: l.name().to_string(),
                })
            }
        }
    }
    for l in rhs2.labels() {
        if find(lhs.labels(), l).is_none() && find(rhs1.labels(), l).is_none() {
            return Err(Error::DanglingLabel {
                label: l.name().to_string(),
            });
        }
    }
    Ok(TensorOp::Mult {
        lhs,
        alpha,
        rhs1,
        rhs2,
        accumulate,
        plan: ContractionPlan {
            lhs_sources,
            contracted,
        },
    })
}

/// lhs and rhs labels must be the same set; returns, per lhs axis, the rhs
/// axis carrying that label.
fn match_labels(lhs: &LabeledTensor, rhs: &LabeledTensor) -> Result<Vec<usize>> {
    let mismatch = || Error::LabelMismatch {
        lhs: lhs.display(),
        rhs: rhs.display(),
    };
    if lhs.order() != rhs.order() {
        return Err(mismatch());
    }
    let mut permutation = Vec::with_capacity(lhs.order());
    for l in lhs.labels() {
        match rhs.labels().iter().position(|x| x == l) {
            Some(p) => permutation.push(p),
            None => return Err(mismatch()),
        }
    }
    Ok(permutation)
}

/// Reading and writing the same tensor inside one operation is rejected: the
/// owner-computes execution would race on its own input blocks.
fn reject_alias<'a, I>(lhs: &LabeledTensor, operands: I) -> Result<()>
where
    I: IntoIterator<Item = &'a LabeledTensor>,
{
    for rhs in operands {
        if rhs.tensor() == lhs.tensor() {
            return Err(Error::AliasedOperand {
                tensor: lhs.tensor().name().to_string(),
            });
        }
    }
    Ok(())
}

impl TensorOp {
    /// Tensor-identity read and write sets. Accumulating (`+=`) operations
    /// count the output among the reads.
    pub fn read_write_sets(&self) -> (BTreeSet<TensorId>, BTreeSet<TensorId>) {
        let mut reads = BTreeSet::new();
        let mut writes = BTreeSet::new();
        match self {
            TensorOp::Allocate(ts) | TensorOp::Deallocate(ts) => {
                for t in ts {
                    writes.insert(t.id());
                }
            }
            TensorOp::Set {
                lhs, accumulate, ..
            } => {
                writes.insert(lhs.tensor().id());
                if *accumulate {
                    reads.insert(lhs.tensor().id());
                }
            }
            TensorOp::Add {
                lhs,
                rhs,
                accumulate,
                ..
            } => {
                writes.insert(lhs.tensor().id());
                reads.insert(rhs.tensor().id());
                if *accumulate {
                    reads.insert(lhs.tensor().id());
                }
            }
            TensorOp::Mult {
                lhs,
                rhs1,
                rhs2,
                accumulate,
                ..
            } => {
                writes.insert(lhs.tensor().id());
                reads.insert(rhs1.tensor().id());
                reads.insert(rhs2.tensor().id());
                if *accumulate {
                    reads.insert(lhs.tensor().id());
                }
            }
            TensorOp::Scan { src, .. } => {
                reads.insert(src.tensor().id());
            }
            TensorOp::Map { lhs, rhs, .. } => {
                writes.insert(lhs.tensor().id());
                reads.insert(rhs.tensor().id());
            }
        }
        (reads, writes)
    }

    /// Two operations conflict when they share a tensor and at least one
    /// writes it; conflicting operations never run in the same batch.
    pub fn conflicts_with(&self, other: &TensorOp) -> bool {
        let (ra, wa) = self.read_write_sets();
        let (rb, wb) = other.read_write_sets();
        wa.iter().any(|t| rb.contains(t) || wb.contains(t))
            || wb.iter().any(|t| ra.contains(t))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            TensorOp::Allocate(_) => "allocate",
            TensorOp::Deallocate(_) => "deallocate",
            TensorOp::Set { .. } => "set",
            TensorOp::Add { .. } => "add",
            TensorOp::Mult { .. } => "mult",
            TensorOp::Scan { .. } => "scan",
            TensorOp::Map { .. } => "map",
        }
    }

    /// Canonical one-line text form.
    pub fn to_text(&self) -> String {
        let eq = |acc: bool| if acc { "+=" } else { "=" };
        match self {
            TensorOp::Allocate(ts) => format!(
                "allocate {}",
                ts.iter().map(Tensor::name).collect::<Vec<_>>().join(", ")
            ),
            TensorOp::Deallocate(ts) => format!(
                "deallocate {}",
                ts.iter().map(Tensor::name).collect::<Vec<_>>().join(", ")
            ),
            TensorOp::Set {
                lhs,
                alpha,
                accumulate,
            } => format!("{} {} {}", lhs.display(), eq(*accumulate), alpha),
            TensorOp::Add {
                lhs,
                alpha,
                rhs,
                accumulate,
                ..
            } => format!(
                "{} {} {} * {}",
                lhs.display(),
                eq(*accumulate),
                alpha,
                rhs.display()
            ),
            TensorOp::Mult {
                lhs,
                alpha,
                rhs1,
                rhs2,
                accumulate,
                ..
            } => format!(
                "{} {} {} * {} * {}",
                lhs.display(),
                eq(*accumulate),
                alpha,
                rhs1.display(),
                rhs2.display()
            ),
            TensorOp::Scan { src, .. } => format!("scan {}", src.display()),
            TensorOp::Map { lhs, rhs, .. } => {
                format!("{} = map {}", lhs.display(), rhs.display())
            }
        }
    }

    /// Structured form for schedule dumps.
    pub fn to_json(&self) -> OpJson {
        let (reads, writes) = self.read_write_sets();
        let name_of = |lt: &LabeledTensor| lt.display();
        let (lhs, rhs) = match self {
            TensorOp::Allocate(ts) | TensorOp::Deallocate(ts) => (
                None,
                ts.iter().map(|t| t.name().to_string()).collect(),
            ),
            TensorOp::Set { lhs, .. } => (Some(name_of(lhs)), Vec::new()),
            TensorOp::Add { lhs, rhs, .. } => (Some(name_of(lhs)), vec![name_of(rhs)]),
            TensorOp::Mult {
                lhs, rhs1, rhs2, ..
            } => (Some(name_of(lhs)), vec![name_of(rhs1), name_of(rhs2)]),
            TensorOp::Scan { src, .. } => (None, vec![name_of(src)]),
            TensorOp::Map { lhs, rhs, .. } => (Some(name_of(lhs)), vec![name_of(rhs)]),
        };
        OpJson {
            kind: self.kind().to_string(),
            text: self.to_text(),
            lhs,
            rhs,
            alpha: match self {
                TensorOp::Set { alpha, .. }
                | TensorOp::Add { alpha, .. }
                | TensorOp::Mult { alpha, .. } => Some(*alpha),
                _ => None,
            },
            accumulate: match self {
                TensorOp::Set { accumulate, .. }
                | TensorOp::Add { accumulate, .. }
                | TensorOp::Mult { accumulate, .. } => Some(*accumulate),
                _ => None,
            },
            reads: reads.into_iter().collect(),
            writes: writes.into_iter().collect(),
        }
    }
}

/// Serialized operation record.
#[derive(Clone, Debug, Serialize)]
pub struct OpJson {
    pub kind: String,
    pub text: String,
    pub lhs: Option<String>,
    pub rhs: Vec<String>,
    pub alpha: Option<f64>,
    pub accumulate: Option<bool>,
    pub reads: Vec<TensorId>,
    pub writes: Vec<TensorId>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index_space::{IndexSpace, TiledIndexSpace};

    struct Fixture {
        tm: TiledIndexSpace,
        tk: TiledIndexSpace,
        tn: TiledIndexSpace,
    }

    fn fixture() -> Fixture {
        let n = IndexSpace::new(100).unwrap();
        let m = IndexSpace::new(30).unwrap();
        let k = IndexSpace::builder(20)
            .subspace("first", [0..10])
            .subspace("second", [10..20])
            .build()
            .unwrap();
        Fixture {
            tm: TiledIndexSpace::custom(&m, &[10, 20]).unwrap(),
            tk: TiledIndexSpace::fixed(&k, 5).unwrap(),
            tn: TiledIndexSpace::fixed(&n, 10).unwrap(),
        }
    }

    #[test]
    fn set_op_reads_nothing() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let (i, l) = (f.tm.label("i"), f.tk.label("l"));
        let op = set(a.at(&[&i, &l]).unwrap(), 1.0).unwrap();
        let (reads, writes) = op.read_write_sets();
        assert!(reads.is_empty());
        assert_eq!(writes.into_iter().collect::<Vec<_>>(), vec![a.id()]);
        assert_eq!(op.to_text(), "A(i,l) = 1");
    }

    #[test]
    fn add_accumulate_reads_lhs() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let b = Tensor::named("B", [f.tm.clone(), f.tk.clone()]);
        let (i, l) = (f.tm.label("i"), f.tk.label("l"));
        let op = add_accumulate(
            b.at(&[&i, &l]).unwrap(),
            -1.0,
            a.at(&[&i, &l]).unwrap(),
        )
        .unwrap();
        let (reads, writes) = op.read_write_sets();
        assert!(reads.contains(&a.id()) && reads.contains(&b.id()));
        assert!(writes.contains(&b.id()));
        assert_eq!(op.to_text(), "B(i,l) += -1 * A(i,l)");
    }

    #[test]
    fn transpose_add_records_permutation() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let d = Tensor::named("D", [f.tk.clone(), f.tm.clone()]);
        let (i, l) = (f.tm.label("i"), f.tk.label("l"));
        let op = add_accumulate(
            a.at(&[&i, &l]).unwrap(),
            2.0,
            d.at(&[&l, &i]).unwrap(),
        )
        .unwrap();
        match op {
            TensorOp::Add { permutation, .. } => assert_eq!(permutation, vec![1, 0]),
            _ => panic!("expected add"),
        }
    }

    #[test]
    fn add_label_mismatch_rejected() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let b = Tensor::named("B", [f.tm.clone(), f.tk.clone()]);
        let (i, l, m) = (f.tm.label("i"), f.tk.label("l"), f.tk.label("m"));
        let err = add(
            b.at(&[&i, &l]).unwrap(),
            1.0,
            a.at(&[&i, &m]).unwrap(),
        );
        assert!(matches!(err, Err(Error::LabelMismatch { .. })));
    }

    #[test]
    fn contraction_records_summed_labels() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let b = Tensor::named("B", [f.tk.clone(), f.tn.clone()]);
        let c = Tensor::named("C", [f.tm.clone(), f.tn.clone()]);
        let (i, l, x) = (f.tm.label("i"), f.tk.label("l"), f.tn.label("a"));
        let op = mult(
            c.at(&[&i, &x]).unwrap(),
            0.5,
            a.at(&[&i, &l]).unwrap(),
            b.at(&[&l, &x]).unwrap(),
        )
        .unwrap();
        match &op {
            TensorOp::Mult { plan, .. } => {
                assert_eq!(plan.lhs_sources, vec![(0, 0), (1, 1)]);
                assert_eq!(plan.contracted, vec![(1, 0)]);
            }
            _ => panic!("expected mult"),
        }
        assert_eq!(op.to_text(), "C(i,a) = 0.5 * A(i,l) * B(l,a)");
        let (reads, writes) = op.read_write_sets();
        assert_eq!(reads.len(), 2);
        assert_eq!(writes.len(), 1);
    }

    #[test]
    fn full_reduction_to_scalar() {
        let f = fixture();
        let v = Tensor::named("v", [f.tm.clone(), f.tn.clone()]);
        let t = Tensor::named("t", [f.tm.clone(), f.tn.clone()]);
        let e = Tensor::named("E", Vec::<TiledIndexSpace>::new());
        let (i, a) = (f.tm.label("i"), f.tn.label("a"));
        let op = mult_accumulate(
            e.scalar_view().unwrap(),
            1.0,
            v.at(&[&i, &a]).unwrap(),
            t.at(&[&i, &a]).unwrap(),
        )
        .unwrap();
        match &op {
            TensorOp::Mult { plan, .. } => {
                assert!(plan.lhs_sources.is_empty());
                assert_eq!(plan.contracted, vec![(0, 0), (1, 1)]);
            }
            _ => panic!("expected mult"),
        }
    }

    #[test]
    fn dangling_label_rejected() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let b = Tensor::named("B", [f.tk.clone(), f.tn.clone()]);
        let c = Tensor::named("C", [f.tm.clone(), f.tn.clone()]);
        let (i, l, m, x) = (
            f.tm.label("i"),
            f.tk.label("l"),
            f.tk.label("m"),
            f.tn.label("a"),
        );
        let err = mult(
            c.at(&[&i, &x]).unwrap(),
            1.0,
            a.at(&[&i, &l]).unwrap(),
            b.at(&[&m, &x]).unwrap(),
        );
        assert!(matches!(err, Err(Error::DanglingLabel { .. })));
    }

    #[test]
    fn label_on_all_three_rejected() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let b = Tensor::named("B", [f.tk.clone(), f.tn.clone()]);
        let c = Tensor::named("C", [f.tk.clone(), f.tn.clone()]);
        let (l, x, i) = (f.tk.label("l"), f.tn.label("a"), f.tm.label("i"));
        let err = mult(
            c.at(&[&l, &x]).unwrap(),
            1.0,
            a.at(&[&i, &l]).unwrap(),
            b.at(&[&l, &x]).unwrap(),
        );
        assert!(matches!(err, Err(Error::AmbiguousLabel { .. })));
    }

    #[test]
    fn aliased_operand_rejected() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tm.clone()]);
        let (i, j) = (f.tm.label("i"), f.tm.label("j"));
        let err = add_accumulate(
            a.at(&[&i, &j]).unwrap(),
            1.0,
            a.at(&[&j, &i]).unwrap(),
        );
        assert!(matches!(err, Err(Error::AliasedOperand { .. })));
    }

    #[test]
    fn conflicts_are_symmetric_and_write_driven() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let b = Tensor::named("B", [f.tm.clone(), f.tk.clone()]);
        let c = Tensor::named("C", [f.tm.clone(), f.tk.clone()]);
        let (i, l) = (f.tm.label("i"), f.tk.label("l"));
        let set_a = set(a.at(&[&i, &l]).unwrap(), 1.0).unwrap();
        let set_b = set(b.at(&[&i, &l]).unwrap(), 2.0).unwrap();
        let add_ba = add_accumulate(
            b.at(&[&i, &l]).unwrap(),
            -1.0,
            a.at(&[&i, &l]).unwrap(),
        )
        .unwrap();
        let (scan_a, _) = scan_sum(a.at(&[&i, &l]).unwrap());
        let (scan_c, _) = scan_sum(c.at(&[&i, &l]).unwrap());

        assert!(!set_a.conflicts_with(&set_b));
        assert!(set_a.conflicts_with(&add_ba));
        assert!(add_ba.conflicts_with(&set_a));
        assert!(set_a.conflicts_with(&scan_a));
        assert!(!set_a.conflicts_with(&scan_c));
        assert!(!scan_a.conflicts_with(&scan_c));
    }

    /// Tiny recursive-descent parser for the canonical text form, used to
    /// check that serialized operations stay inside the operation grammar.
    mod grammar {
        pub struct Parsed {
            pub lhs: (String, Vec<String>),
            pub accumulate: bool,
            pub alpha: f64,
            pub operands: Vec<(String, Vec<String>)>,
        }

        fn labeled(s: &str) -> Option<((String, Vec<String>), &str)> {
            let open = s.find('(')?;
            let name = s[..open].trim();
            if name.is_empty() || !name.chars().all(|c| c.is_alphanumeric() || c == '_') {
                return None;
            }
            let close = s[open..].find(')')? + open;
            let inner = &s[open + 1..close];
            let labels: Vec<String> = if inner.trim().is_empty() {
                Vec::new()
            } else {
                inner.split(',').map(|l| l.trim().to_string()).collect()
            };
            if labels.iter().any(|l| l.is_empty()) {
                return None;
            }
            Some(((name.to_string(), labels), s[close + 1..].trim_start()))
        }

        pub fn parse(line: &str) -> Option<Parsed> {
            let (lhs, rest) = labeled(line)?;
            let (accumulate, rest) = if let Some(r) = rest.strip_prefix("+=") {
                (true, r.trim_start())
            } else if let Some(r) = rest.strip_prefix('=') {
                (false, r.trim_start())
            } else {
                return None;
            };
            let mut parts = rest.split('*').map(str::trim);
            let alpha: f64 = parts.next()?.parse().ok()?;
            let mut operands = Vec::new();
            for p in parts {
                let (lt, tail) = labeled(p)?;
                if !tail.is_empty() {
                    return None;
                }
                operands.push(lt);
            }
            if operands.len() > 2 {
                return None;
            }
            Some(Parsed {
                lhs,
                accumulate,
                alpha,
                operands,
            })
        }
    }

    #[test]
    fn text_round_trips_through_grammar() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let b = Tensor::named("B", [f.tk.clone(), f.tn.clone()]);
        let c = Tensor::named("C", [f.tm.clone(), f.tn.clone()]);
        let (i, l, x) = (f.tm.label("i"), f.tk.label("l"), f.tn.label("a"));

        let ops = vec![
            set(a.at(&[&i, &l]).unwrap(), 1.0).unwrap(),
            set(a.at(&[&i, &l]).unwrap(), 0.0).unwrap(),
            add_accumulate(
                b.at(&[&l, &x]).unwrap(),
                -1.0,
                Tensor::named("D", [f.tk.clone(), f.tn.clone()])
                    .at(&[&l, &x])
                    .unwrap(),
            )
            .unwrap(),
            mult(
                c.at(&[&i, &x]).unwrap(),
                0.5,
                a.at(&[&i, &l]).unwrap(),
                b.at(&[&l, &x]).unwrap(),
            )
            .unwrap(),
        ];
        for op in &ops {
            let text = op.to_text();
            let parsed = grammar::parse(&text)
                .unwrap_or_else(|| panic!("'{text}' does not parse"));
            let expected_operands = match op {
                TensorOp::Set { .. } => 0,
                TensorOp::Add { .. } => 1,
                TensorOp::Mult { .. } => 2,
                _ => unreachable!(),
            };
            assert_eq!(parsed.operands.len(), expected_operands);
            match op {
                TensorOp::Set { alpha, accumulate, lhs } => {
                    assert_eq!(parsed.alpha, *alpha);
                    assert_eq!(parsed.accumulate, *accumulate);
                    assert_eq!(parsed.lhs.1.len(), lhs.order());
                }
                TensorOp::Add { alpha, .. } | TensorOp::Mult { alpha, .. } => {
                    assert_eq!(parsed.alpha, *alpha);
                }
                _ => {}
            }
        }
    }

    #[test]
    fn json_form_carries_read_write_sets() {
        let f = fixture();
        let a = Tensor::named("A", [f.tm.clone(), f.tk.clone()]);
        let (i, l) = (f.tm.label("i"), f.tk.label("l"));
        let op = set(a.at(&[&i, &l]).unwrap(), 1.0).unwrap();
        let j = op.to_json();
        assert_eq!(j.kind, "set");
        assert_eq!(j.writes, vec![a.id()]);
        assert!(j.reads.is_empty());
        serde_json::to_string(&j).unwrap();
    }
}
