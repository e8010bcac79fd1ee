//! Block-to-rank distribution over a simulated process group.
//!
//! Three schemes are built in: a processor-grid mapping for dense tensors, a
//! round-robin over equal-sized slots (largest block in the tensor, sparsity
//! ignored), and a sparsity-aware round-robin that allocates nonzero blocks
//! only. New schemes plug in through [`DistributionScheme`].

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{BlockId, Tensor};

/// The set of simulated ranks taking part in allocation and execution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ProcessGroup {
    nranks: usize,
}

impl ProcessGroup {
    pub fn new(nranks: usize) -> Result<ProcessGroup> {
        if nranks == 0 {
            return Err(Error::EmptyProcessGroup);
        }
        Ok(ProcessGroup { nranks })
    }

    pub fn nranks(&self) -> usize {
        self.nranks
    }

    pub fn ranks(&self) -> impl Iterator<Item = usize> {
        0..self.nranks
    }
}

/// Built-in scheme selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Grid,
    RoundRobinDense,
    RoundRobinSparse,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Grid => "grid",
            Scheme::RoundRobinDense => "rr-dense",
            Scheme::RoundRobinSparse => "rr-sparse",
        }
    }

    pub const ALL: [Scheme; 3] = [Scheme::Grid, Scheme::RoundRobinDense, Scheme::RoundRobinSparse];
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Scheme, String> {
        match s {
            "grid" => Ok(Scheme::Grid),
            "rr-dense" => Ok(Scheme::RoundRobinDense),
            "rr-sparse" => Ok(Scheme::RoundRobinSparse),
            other => Err(format!(
                "unknown scheme '{other}' (expected grid, rr-dense or rr-sparse)"
            )),
        }
    }
}

/// Extension point for user-defined distributions.
pub trait DistributionScheme: Send + Sync {
    fn name(&self) -> &str;
    fn place(&self, tensor: &Tensor, pg: &ProcessGroup) -> Placement;
}

struct GridScheme;
struct RoundRobinDenseScheme;
struct RoundRobinSparseScheme;

impl DistributionScheme for GridScheme {
    fn name(&self) -> &str {
        "grid"
    }
    fn place(&self, tensor: &Tensor, pg: &ProcessGroup) -> Placement {
        place_grid(tensor, pg)
    }
}

impl DistributionScheme for RoundRobinDenseScheme {
    fn name(&self) -> &str {
        "rr-dense"
    }
    fn place(&self, tensor: &Tensor, pg: &ProcessGroup) -> Placement {
        place_round_robin_dense(tensor, pg)
    }
}

impl DistributionScheme for RoundRobinSparseScheme {
    fn name(&self) -> &str {
        "rr-sparse"
    }
    fn place(&self, tensor: &Tensor, pg: &ProcessGroup) -> Placement {
        place_round_robin_sparse(tensor, pg)
    }
}

impl From<Scheme> for Arc<dyn DistributionScheme> {
    fn from(s: Scheme) -> Arc<dyn DistributionScheme> {
        match s {
            Scheme::Grid => Arc::new(GridScheme),
            Scheme::RoundRobinDense => Arc::new(RoundRobinDenseScheme),
            Scheme::RoundRobinSparse => Arc::new(RoundRobinSparseScheme),
        }
    }
}

/// A block-to-rank map for one tensor under one scheme.
#[derive(Clone, Debug)]
pub struct Placement {
    scheme: String,
    nranks: usize,
    owner: BTreeMap<BlockId, usize>,
    slot: BTreeMap<BlockId, usize>,
    /// Elements per slot; set only by the equal-slot round-robin scheme.
    slot_size: Option<usize>,
}

impl Placement {
    pub fn scheme(&self) -> &str {
        &self.scheme
    }

    pub fn nranks(&self) -> usize {
        self.nranks
    }

    /// Owning rank of a mapped block.
    pub fn owner_of(&self, b: &BlockId) -> Option<usize> {
        self.owner.get(b).copied()
    }

    pub fn slot_of(&self, b: &BlockId) -> Option<usize> {
        self.slot.get(b).copied()
    }

    pub fn slot_size(&self) -> Option<usize> {
        self.slot_size
    }

    pub fn mapped_blocks(&self) -> impl Iterator<Item = (&BlockId, usize)> {
        self.owner.iter().map(|(b, &r)| (b, r))
    }

    pub fn per_rank_block_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.nranks];
        for &r in self.owner.values() {
            counts[r] += 1;
        }
        counts
    }
}

/// Memory footprint of a placement: exact per-rank element counts under the
/// scheme's slot rules.
#[derive(Clone, Debug, Serialize)]
pub struct MemoryReport {
    pub scheme: String,
    pub nranks: usize,
    pub per_rank_blocks: Vec<usize>,
    pub per_rank_elements: Vec<usize>,
    pub total_elements: usize,
    pub nonzero_elements: usize,
    pub overallocation_ratio: f64,
}

/// `order` factors with product `nranks`, as balanced as possible (smallest
/// max/min ratio), sorted descending; ties break to the lexicographically
/// smallest descending tuple.
pub fn effective_grid(nranks: usize, order: usize) -> Vec<usize> {
    assert!(nranks >= 1 && order >= 1);
    let mut best: Option<Vec<usize>> = None;
    let mut stack = vec![(Vec::new(), nranks, nranks)];
    while let Some((partial, remaining, max_factor)) = stack.pop() {
        if partial.len() == order {
            if remaining != 1 {
                continue;
            }
            let ratio = partial[0] as f64 / partial[partial.len() - 1] as f64;
            let better = match &best {
                None => true,
                Some(b) => {
                    let best_ratio = b[0] as f64 / b[b.len() - 1] as f64;
                    ratio < best_ratio || (ratio == best_ratio && partial < *b)
                }
            };
            if better {
                best = Some(partial);
            }
            continue;
        }
        for f in (1..=max_factor.min(remaining)).rev() {
            if remaining % f == 0 {
                let mut next = partial.clone();
                next.push(f);
                stack.push((next, remaining / f, f));
            }
        }
    }
    best.expect("every nranks factors as (nranks, 1, ..., 1)")
}

fn linearize(coords: &[usize], grid: &[usize]) -> usize {
    let mut r = 0;
    for (c, g) in coords.iter().zip(grid) {
        r = r * g + c;
    }
    r
}

/// Map every grid block cyclically onto an effective processor grid; block
/// `(b1..bk)` goes to the rank at grid coordinate `(b1 mod g1, ..., bk mod gk)`.
/// Sparsity is ignored: this is the dense-tensor mapping.
pub fn place_grid(tensor: &Tensor, pg: &ProcessGroup) -> Placement {
    let order = tensor.order();
    let grid = if order == 0 {
        Vec::new()
    } else {
        effective_grid(pg.nranks(), order)
    };
    let mut owner = BTreeMap::new();
    let mut slot = BTreeMap::new();
    let mut per_rank_next = vec![0usize; pg.nranks()];
    for b in tensor.iter_blocks() {
        let coords: Vec<usize> = b.0.iter().zip(&grid).map(|(&o, &g)| o % g).collect();
        let r = linearize(&coords, &grid);
        owner.insert(b.clone(), r);
        slot.insert(b, per_rank_next[r]);
        per_rank_next[r] += 1;
    }
    Placement {
        scheme: "grid".into(),
        nranks: pg.nranks(),
        owner,
        slot,
        slot_size: None,
    }
}

/// Block `j` in row-major grid order goes to rank `j mod nranks`; every slot
/// is sized by the largest block in the tensor, zero blocks included.
pub fn place_round_robin_dense(tensor: &Tensor, pg: &ProcessGroup) -> Placement {
    let n = pg.nranks();
    let mut owner = BTreeMap::new();
    let mut slot = BTreeMap::new();
    for (j, b) in tensor.iter_blocks().enumerate() {
        owner.insert(b.clone(), j % n);
        slot.insert(b, j / n);
    }
    Placement {
        scheme: "rr-dense".into(),
        nranks: n,
        owner,
        slot,
        slot_size: Some(tensor.max_block_volume()),
    }
}

/// The `k`-th nonzero block in row-major grid order goes to rank
/// `k mod nranks`; slots are sized per actual block, so only nonzero data is
/// ever allocated.
pub fn place_round_robin_sparse(tensor: &Tensor, pg: &ProcessGroup) -> Placement {
    let n = pg.nranks();
    let mut owner = BTreeMap::new();
    let mut slot = BTreeMap::new();
    for (k, b) in tensor.iter_nonzero_blocks().enumerate() {
        owner.insert(b.clone(), k % n);
        slot.insert(b, k / n);
    }
    Placement {
        scheme: "rr-sparse".into(),
        nranks: n,
        owner,
        slot,
        slot_size: None,
    }
}

/// Exact per-rank element counts for a placement of `tensor`.
pub fn memory_footprint(placement: &Placement, tensor: &Tensor) -> MemoryReport {
    let n = placement.nranks;
    let mut per_rank_blocks = vec![0usize; n];
    let mut per_rank_elements = vec![0usize; n];
    for (b, r) in placement.mapped_blocks() {
        per_rank_blocks[r] += 1;
        per_rank_elements[r] += match placement.slot_size {
            Some(s) => s,
            None => tensor.block_volume_unchecked(b),
        };
    }
    let total_elements = per_rank_elements.iter().sum();
    let nonzero_elements = tensor.nonzero_elements();
    let overallocation_ratio = if nonzero_elements == 0 {
        0.0
    } else {
        total_elements as f64 / nonzero_elements as f64
    };
    MemoryReport {
        scheme: placement.scheme.clone(),
        nranks: n,
        per_rank_blocks,
        per_rank_elements,
        total_elements,
        nonzero_elements,
        overallocation_ratio,
    }
}
