//! A straight-line interpreter for operation queues: dense global arrays and
//! nested loops, no tiles, no placement, no schedule.
//!
//! Scheduled execution is checked against this path; keep it free of any
//! shared machinery beyond the operation descriptions themselves.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::ops::TensorOp;
use crate::tensor::{LabeledTensor, Tensor, TensorId};

/// A dense array indexed by within-dimension positions, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    pub extents: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseTensor {
    pub fn zeros(extents: Vec<usize>) -> DenseTensor {
        let len = extents.iter().product();
        DenseTensor {
            extents,
            data: vec![0.0; len],
        }
    }

    pub fn offset(&self, coords: &[usize]) -> usize {
        let mut off = 0;
        for (c, e) in coords.iter().zip(&self.extents) {
            off = off * e + c;
        }
        off
    }

    /// Largest absolute element.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest absolute difference against `other`.
    pub fn max_abs_diff(&self, other: &DenseTensor) -> f64 {
        assert_eq!(self.extents, other.extents);
        self.data
            .iter()
            .zip(&other.data)
            .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// Per-axis position lists of a labeled view: for axis `d`, the positions of
/// the label's indices within the tensor's dimension space, in label order.
fn axis_positions(view: &LabeledTensor) -> Vec<Vec<usize>> {
    view.labels()
        .iter()
        .zip(view.tensor().dims())
        .map(|(label, dim)| {
            let dim_space = dim.space();
            label
                .space()
                .tiles()
                .iter()
                .flat_map(|t| t.range())
                .map(|g| {
                    dim_space
                        .position_of(g)
                        .expect("label indices lie inside the dimension")
                })
                .collect()
        })
        .collect()
}

fn odometer(shape: &[usize], mut f: impl FnMut(&[usize])) {
    let mut idx = vec![0usize; shape.len()];
    if shape.iter().any(|&n| n == 0) {
        return;
    }
    loop {
        f(&idx);
        let mut d = shape.len();
        loop {
            if d == 0 {
                return;
            }
            d -= 1;
            idx[d] += 1;
            if idx[d] < shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
}

/// Dense reference interpreter over a queue of validated operations.
#[derive(Default)]
pub struct Interpreter {
    values: HashMap<TensorId, DenseTensor>,
    scan_results: Vec<f64>,
}

impl Interpreter {
    pub fn new() -> Interpreter {
        Interpreter::default()
    }

    pub fn tensor(&self, t: &Tensor) -> Option<&DenseTensor> {
        self.values.get(&t.id())
    }

    /// Scan results in queue order, one per scan operation seen so far.
    pub fn scan_results(&self) -> &[f64] {
        &self.scan_results
    }

    pub fn run(&mut self, ops: &[TensorOp]) -> Result<()> {
        for op in ops {
            self.step(op)?;
        }
        Ok(())
    }

    fn dims_of(t: &Tensor) -> Vec<usize> {
        t.dims().iter().map(|d| d.extent()).collect()
    }

    fn fetch(&self, t: &Tensor) -> Result<&DenseTensor> {
        self.values.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })
    }

    fn step(&mut self, op: &TensorOp) -> Result<()> {
        match op {
            TensorOp::Allocate(ts) => {
                for t in ts {
                    if self.values.contains_key(&t.id()) {
                        return Err(Error::AlreadyAllocated {
                            tensor: t.name().to_string(),
                        });
                    }
                    self.values
                        .insert(t.id(), DenseTensor::zeros(Self::dims_of(t)));
                }
            }
            TensorOp::Deallocate(ts) => {
                for t in ts {
                    self.values.remove(&t.id()).ok_or_else(|| Error::Unallocated {
                        tensor: t.name().to_string(),
                    })?;
                }
            }
            TensorOp::Set {
                lhs,
                alpha,
                accumulate,
            } => {
                self.fetch(lhs.tensor())?;
                let pos = axis_positions(lhs);
                let shape: Vec<usize> = pos.iter().map(Vec::len).collect();
                let dst = self.values.get_mut(&lhs.tensor().id()).unwrap();
                odometer(&shape, |idx| {
                    let coords: Vec<usize> =
                        idx.iter().zip(&pos).map(|(&k, p)| p[k]).collect();
                    let off = dst.offset(&coords);
                    if *accumulate {
                        dst.data[off] += alpha;
                    } else {
                        dst.data[off] = *alpha;
                    }
                });
            }
            TensorOp::Add {
                lhs,
                alpha,
                rhs,
                accumulate,
                permutation,
            } => {
                let lhs_pos = axis_positions(lhs);
                let rhs_pos = axis_positions(rhs);
                let src = self.fetch(rhs.tensor())?.clone();
                self.fetch(lhs.tensor())?;
                let dst = self.values.get_mut(&lhs.tensor().id()).unwrap();
                let shape: Vec<usize> = lhs_pos.iter().map(Vec::len).collect();
                odometer(&shape, |idx| {
                    let lc: Vec<usize> =
                        idx.iter().zip(&lhs_pos).map(|(&k, p)| p[k]).collect();
                    // rhs axis permutation[d] carries the label of lhs axis d
                    let mut rc = vec![0usize; idx.len()];
                    for (d, &k) in idx.iter().enumerate() {
                        rc[permutation[d]] = rhs_pos[permutation[d]][k];
                    }
                    let v = alpha * src.data[src.offset(&rc)];
                    let off = dst.offset(&lc);
                    if *accumulate {
                        dst.data[off] += v;
                    } else {
                        dst.data[off] = v;
                    }
                });
            }
            TensorOp::Mult {
                lhs,
                alpha,
                rhs1,
                rhs2,
                accumulate,
                plan,
            } => {
                let lhs_pos = axis_positions(lhs);
                let r1_pos = axis_positions(rhs1);
                let r2_pos = axis_positions(rhs2);
                let a1 = self.fetch(rhs1.tensor())?.clone();
                let a2 = self.fetch(rhs2.tensor())?.clone();
                self.fetch(lhs.tensor())?;
                let dst = self.values.get_mut(&lhs.tensor().id()).unwrap();

                let free_shape: Vec<usize> = lhs_pos.iter().map(Vec::len).collect();
                let con_shape: Vec<usize> = plan
                    .contracted
                    .iter()
                    .map(|&(p1, _)| r1_pos[p1].len())
                    .collect();

                odometer(&free_shape, |fidx| {
                    let lc: Vec<usize> =
                        fidx.iter().zip(&lhs_pos).map(|(&k, p)| p[k]).collect();
                    let mut sum = 0.0;
                    odometer(&con_shape, |cidx| {
                        let mut c1 = vec![0usize; rhs1.order()];
                        let mut c2 = vec![0usize; rhs2.order()];
                        for (d, &k) in fidx.iter().enumerate() {
                            let (operand, axis) = plan.lhs_sources[d];
                            if operand == 0 {
                                c1[axis] = r1_pos[axis][k];
                            } else {
                                c2[axis] = r2_pos[axis][k];
                            }
                        }
                        for (c, &k) in cidx.iter().enumerate() {
                            let (p1, p2) = plan.contracted[c];
                            c1[p1] = r1_pos[p1][k];
                            c2[p2] = r2_pos[p2][k];
                        }
                        sum += a1.data[a1.offset(&c1)] * a2.data[a2.offset(&c2)];
                    });
                    let off = dst.offset(&lc);
                    if *accumulate {
                        dst.data[off] += alpha * sum;
                    } else {
                        dst.data[off] = alpha * sum;
                    }
                });
            }
            TensorOp::Scan { src, f, .. } => {
                let pos = axis_positions(src);
                let arr = self.fetch(src.tensor())?;
                let shape: Vec<usize> = pos.iter().map(Vec::len).collect();
                let mut total = 0.0;
                odometer(&shape, |idx| {
                    let coords: Vec<usize> =
                        idx.iter().zip(&pos).map(|(&k, p)| p[k]).collect();
                    total += f(arr.data[arr.offset(&coords)]);
                });
                self.scan_results.push(total);
            }
            TensorOp::Map {
                lhs,
                f,
                rhs,
                permutation,
            } => {
                let lhs_pos = axis_positions(lhs);
                let rhs_pos = axis_positions(rhs);
                let src = self.fetch(rhs.tensor())?.clone();
                self.fetch(lhs.tensor())?;
                let dst = self.values.get_mut(&lhs.tensor().id()).unwrap();
                let shape: Vec<usize> = lhs_pos.iter().map(Vec::len).collect();
                odometer(&shape, |idx| {
                    let lc: Vec<usize> =
                        idx.iter().zip(&lhs_pos).map(|(&k, p)| p[k]).collect();
                    let mut rc = vec![0usize; idx.len()];
                    for (d, &k) in idx.iter().enumerate() {
                        rc[permutation[d]] = rhs_pos[permutation[d]][k];
                    }
                    let off = dst.offset(&lc);
                    dst.data[off] = f(src.data[src.offset(&rc)]);
                });
            }
        }
        Ok(())
    }
}
