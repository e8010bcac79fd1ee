//! Tiled, block-sparse tensor algebra with an Einstein-notation operation
//! layer, pluggable block distributions over a simulated process group, and a
//! conflict-analyzing levelized scheduler.
//!
//! The crate is organized around a small pipeline:
//!
//! * [`index_space`] — index ranges, named subranges, spin attributes,
//!   tilings, and the labels operations are written with.
//! * [`tensor`] — tensor handles with blocked storage addressed by tile
//!   coordinates, plus labeled views.
//! * [`distribution`] — block-to-rank maps (processor grid, round-robin,
//!   sparsity-aware round-robin) and memory reports.
//! * [`ops`] — declared tensor operations (set, add, contract, scan, map)
//!   with validation and read/write-set extraction.
//! * [`scheduler`] — conflict analysis, levelized batches, and execution over
//!   the simulated ranks with sync/communication/flop accounting.
//! * [`naive`] — a straight-line dense interpreter used as an independent
//!   cross-check for scheduled execution.
//! * [`cc`] — coupled-cluster demo kernels (intermediate factorization,
//!   pivoted Cholesky reconstruction, perturbative triples) driven both by
//!   plain loops and by the operation layer.
//! * [`cli`] — the `tiletensor` command-line front end.

pub mod cc;
pub mod cli;
pub mod distribution;
pub mod error;
pub mod index_space;
pub mod naive;
pub mod ops;
pub mod scheduler;
pub mod tensor;

pub use distribution::{ProcessGroup, Scheme};
pub use error::{Error, Result};
pub use index_space::{IndexSpace, Spin, TiledIndexLabel, TiledIndexSpace};
pub use ops::TensorOp;
pub use scheduler::{ExecutionContext, ExecutionStats, Scheduler};
pub use tensor::{BlockId, DenseBlock, LabeledTensor, Tensor};
