//! Execution context over simulated ranks, conflict-levelized scheduling, and
//! SPMD-style execution with sync / communication / flop accounting.
//!
//! Operations are queued, analyzed for conflicts (shared tensor, at least one
//! writer), and grouped into levels of mutually conflict-free batches. Each
//! level runs owner-computes: the rank owning an output block produces it,
//! fetching remote inputs, and a barrier (one global sync) separates levels.
//! Allocations are hoisted into a setup phase ahead of the first level.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::Serialize;

use crate::distribution::{
    memory_footprint, DistributionScheme, MemoryReport, Placement, ProcessGroup, Scheme,
};
use crate::error::{Error, Result};
use crate::naive::DenseTensor;
use crate::ops::{OpJson, TensorOp};
use crate::tensor::{BlockId, DenseBlock, LabeledTensor, Tensor, TensorId};

/// Measured execution counters for one `execute` call.
#[derive(Clone, Debug, Default, Serialize)]
pub struct ExecutionStats {
    /// One per executed level (the barrier count).
    pub global_syncs: u64,
    pub remote_gets: u64,
    pub remote_puts: u64,
    pub remote_accumulates: u64,
    /// 2*m*n*k per executed block contraction.
    pub flops: u64,
    pub per_rank_task_counts: Vec<u64>,
}

#[derive(Default)]
struct StatsCell {
    global_syncs: AtomicU64,
    remote_gets: AtomicU64,
    remote_puts: AtomicU64,
    remote_accumulates: AtomicU64,
    flops: AtomicU64,
    per_rank_tasks: Vec<AtomicU64>,
}

impl StatsCell {
    fn with_ranks(nranks: usize) -> StatsCell {
        StatsCell {
            per_rank_tasks: (0..nranks).map(|_| AtomicU64::new(0)).collect(),
            ..Default::default()
        }
    }

    fn reset(&self) {
        self.global_syncs.store(0, Ordering::Relaxed);
        self.remote_gets.store(0, Ordering::Relaxed);
        self.remote_puts.store(0, Ordering::Relaxed);
        self.remote_accumulates.store(0, Ordering::Relaxed);
        self.flops.store(0, Ordering::Relaxed);
        for t in &self.per_rank_tasks {
            t.store(0, Ordering::Relaxed);
        }
    }

    fn snapshot(&self) -> ExecutionStats {
        ExecutionStats {
            global_syncs: self.global_syncs.load(Ordering::Relaxed),
            remote_gets: self.remote_gets.load(Ordering::Relaxed),
            remote_puts: self.remote_puts.load(Ordering::Relaxed),
            remote_accumulates: self.remote_accumulates.load(Ordering::Relaxed),
            flops: self.flops.load(Ordering::Relaxed),
            per_rank_task_counts: self
                .per_rank_tasks
                .iter()
                .map(|t| t.load(Ordering::Relaxed))
                .collect(),
        }
    }
}

struct TensorStorage {
    placement: Placement,
    blocks: HashMap<BlockId, Mutex<Vec<f64>>>,
}

struct EcInner {
    pg: ProcessGroup,
    scheme: Arc<dyn DistributionScheme>,
    store: RwLock<HashMap<TensorId, TensorStorage>>,
    stats: StatsCell,
    workers: usize,
}

/// Simulated process group plus distribution scheme plus block store; the
/// target every scheduler executes against. Cloning shares the context.
#[derive(Clone)]
pub struct ExecutionContext {
    inner: Arc<EcInner>,
}

fn worker_cap() -> usize {
    let avail = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    match std::env::var("TILETENSOR_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        Some(n) if n >= 1 => avail.min(n),
        _ => avail,
    }
}

impl ExecutionContext {
    pub fn new(pg: ProcessGroup, scheme: Scheme) -> ExecutionContext {
        Self::with_scheme(pg, scheme.into())
    }

    /// Build against a user-provided distribution scheme.
    pub fn with_scheme(pg: ProcessGroup, scheme: Arc<dyn DistributionScheme>) -> ExecutionContext {
        ExecutionContext {
            inner: Arc::new(EcInner {
                stats: StatsCell::with_ranks(pg.nranks()),
                pg,
                scheme,
                store: RwLock::new(HashMap::new()),
                workers: worker_cap(),
            }),
        }
    }

    pub fn process_group(&self) -> ProcessGroup {
        self.inner.pg
    }

    pub fn nranks(&self) -> usize {
        self.inner.pg.nranks()
    }

    pub fn scheme_name(&self) -> String {
        self.inner.scheme.name().to_string()
    }

    pub fn stats_snapshot(&self) -> ExecutionStats {
        self.inner.stats.snapshot()
    }

    pub fn reset_stats(&self) {
        self.inner.stats.reset();
    }

    /// Collectively allocate a tensor: build its placement under the context's
    /// scheme and zero-initialize every nonzero block.
    pub fn allocate(&self, t: &Tensor) -> Result<()> {
        let mut store = self.inner.store.write().unwrap();
        if store.contains_key(&t.id()) {
            return Err(Error::AlreadyAllocated {
                tensor: t.name().to_string(),
            });
        }
        let placement = self.inner.scheme.place(t, &self.inner.pg);
        let mut blocks = HashMap::new();
        for b in t.iter_nonzero_blocks() {
            let vol = t.block_volume_unchecked(&b);
            blocks.insert(b, Mutex::new(vec![0.0; vol]));
        }
        store.insert(t.id(), TensorStorage { placement, blocks });
        Ok(())
    }

    pub fn deallocate(&self, t: &Tensor) -> Result<()> {
        let mut store = self.inner.store.write().unwrap();
        store.remove(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        Ok(())
    }

    pub fn is_allocated(&self, t: &Tensor) -> bool {
        self.inner.store.read().unwrap().contains_key(&t.id())
    }

    fn check_rank(&self, rank: usize) -> Result<()> {
        if rank >= self.nranks() {
            return Err(Error::RankOutOfRange {
                rank,
                nranks: self.nranks(),
            });
        }
        Ok(())
    }

    /// Owning rank of a block, `None` for predicate-zero blocks that the
    /// scheme never maps.
    pub fn owner_of(&self, t: &Tensor, b: &BlockId) -> Result<Option<usize>> {
        t.block_extents(b)?;
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        Ok(storage.placement.owner_of(b))
    }

    /// Copy of a block as seen from rank 0.
    pub fn get_block(&self, t: &Tensor, b: &BlockId) -> Result<DenseBlock> {
        self.get_block_from(0, t, b)
    }

    /// Copy of a block as seen from `rank`; predicate-zero blocks read as
    /// zeros without communication, remote reads bump `remote_gets`.
    pub fn get_block_from(&self, rank: usize, t: &Tensor, b: &BlockId) -> Result<DenseBlock> {
        self.check_rank(rank)?;
        let extents = t.block_extents(b)?;
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        if !t.is_nonzero_unchecked(b) {
            return Ok(DenseBlock::zeros(b.clone(), extents));
        }
        let owner = storage
            .placement
            .owner_of(b)
            .expect("nonzero blocks are always mapped");
        if owner != rank {
            self.inner.stats.remote_gets.fetch_add(1, Ordering::Relaxed);
        }
        let data = storage.blocks[b].lock().unwrap().clone();
        Ok(DenseBlock {
            block_id: b.clone(),
            extents,
            data,
        })
    }

    pub fn put_block(&self, t: &Tensor, b: &BlockId, values: &[f64]) -> Result<()> {
        self.put_block_from(0, t, b, values)
    }

    /// Overwrite a block from `rank`. Writing a predicate-zero block is a
    /// program bug and is rejected rather than silently dropped.
    pub fn put_block_from(&self, rank: usize, t: &Tensor, b: &BlockId, values: &[f64]) -> Result<()> {
        self.check_rank(rank)?;
        let vol = t.block_volume(b)?;
        if values.len() != vol {
            return Err(Error::BlockExtentMismatch {
                expected: vol,
                got: values.len(),
            });
        }
        if !t.is_nonzero_unchecked(b) {
            return Err(Error::ZeroBlockWrite {
                tensor: t.name().to_string(),
                block: b.0.clone(),
            });
        }
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        let owner = storage.placement.owner_of(b).unwrap();
        if owner != rank {
            self.inner.stats.remote_puts.fetch_add(1, Ordering::Relaxed);
        }
        storage.blocks[b].lock().unwrap().copy_from_slice(values);
        Ok(())
    }

    pub fn accumulate_block(&self, t: &Tensor, b: &BlockId, values: &[f64]) -> Result<()> {
        self.accumulate_block_from(0, t, b, values)
    }

    /// Element-wise add into a block from `rank`; atomic per block.
    pub fn accumulate_block_from(
        &self,
        rank: usize,
        t: &Tensor,
        b: &BlockId,
        values: &[f64],
    ) -> Result<()> {
        self.check_rank(rank)?;
        let vol = t.block_volume(b)?;
        if values.len() != vol {
            return Err(Error::BlockExtentMismatch {
                expected: vol,
                got: values.len(),
            });
        }
        if !t.is_nonzero_unchecked(b) {
            return Err(Error::ZeroBlockWrite {
                tensor: t.name().to_string(),
                block: b.0.clone(),
            });
        }
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        let owner = storage.placement.owner_of(b).unwrap();
        if owner != rank {
            self.inner
                .stats
                .remote_accumulates
                .fetch_add(1, Ordering::Relaxed);
        }
        let mut guard = storage.blocks[b].lock().unwrap();
        for (d, v) in guard.iter_mut().zip(values) {
            *d += v;
        }
        Ok(())
    }

    /// Memory footprint of an allocated tensor under its placement.
    pub fn memory_report(&self, t: &Tensor) -> Result<MemoryReport> {
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        Ok(memory_footprint(&storage.placement, t))
    }

    /// Load every nonzero block from a function of global indices. Used to
    /// stage input data; performs local writes only.
    pub fn fill_with<F>(&self, t: &Tensor, f: F) -> Result<()>
    where
        F: Fn(&[usize]) -> f64,
    {
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        for b in t.iter_nonzero_blocks() {
            let extents = t.block_extents(&b)?;
            let starts: Vec<usize> = t
                .dims()
                .iter()
                .zip(&b.0)
                .map(|(d, &o)| d.tile(o).start)
                .collect();
            let mut guard = storage.blocks[&b].lock().unwrap();
            let mut coords = vec![0usize; extents.len()];
            for slot in guard.iter_mut() {
                let globals: Vec<usize> = coords
                    .iter()
                    .zip(&starts)
                    .map(|(&c, &s)| s + c)
                    .collect();
                *slot = f(&globals);
                let mut d = extents.len();
                while d > 0 {
                    d -= 1;
                    coords[d] += 1;
                    if coords[d] < extents[d] {
                        break;
                    }
                    coords[d] = 0;
                }
            }
        }
        Ok(())
    }

    /// Assemble the dense position-indexed image of a tensor (zero blocks
    /// read as zeros).
    pub fn materialize(&self, t: &Tensor) -> Result<DenseTensor> {
        let extents: Vec<usize> = t.dims().iter().map(|d| d.extent()).collect();
        let mut out = DenseTensor::zeros(extents);
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        for b in t.iter_nonzero_blocks() {
            let block_extents = t.block_extents(&b)?;
            let pos_starts: Vec<usize> = t
                .dims()
                .iter()
                .zip(&b.0)
                .map(|(d, &o)| {
                    d.space()
                        .position_of(d.tile(o).start)
                        .expect("tile start lies in the dimension space")
                })
                .collect();
            let guard = storage.blocks[&b].lock().unwrap();
            let mut coords = vec![0usize; block_extents.len()];
            for &v in guard.iter() {
                let poss: Vec<usize> = coords
                    .iter()
                    .zip(&pos_starts)
                    .map(|(&c, &s)| s + c)
                    .collect();
                let off = out.offset(&poss);
                out.data[off] = v;
                let mut d = block_extents.len();
                while d > 0 {
                    d -= 1;
                    coords[d] += 1;
                    if coords[d] < block_extents[d] {
                        break;
                    }
                    coords[d] = 0;
                }
            }
        }
        Ok(out)
    }

    /// Debug dump of a tensor: dims, tiling, nonzero block list, per-block
    /// values.
    pub fn dump_tensor_json(&self, t: &Tensor) -> Result<serde_json::Value> {
        let store = self.inner.store.read().unwrap();
        let storage = store.get(&t.id()).ok_or_else(|| Error::Unallocated {
            tensor: t.name().to_string(),
        })?;
        let dims: Vec<serde_json::Value> = t
            .dims()
            .iter()
            .map(|d| {
                serde_json::json!({
                    "extent": d.extent(),
                    "tiles": d.tiles().iter().map(|tl| {
                        serde_json::json!({"start": tl.start, "extent": tl.extent})
                    }).collect::<Vec<_>>(),
                })
            })
            .collect();
        let mut nonzero = Vec::new();
        let mut blocks = serde_json::Map::new();
        for b in t.iter_nonzero_blocks() {
            nonzero.push(b.0.clone());
            let key = b
                .0
                .iter()
                .map(|o| o.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let data = storage.blocks[&b].lock().unwrap().clone();
            blocks.insert(key, serde_json::json!(data));
        }
        Ok(serde_json::json!({
            "name": t.name(),
            "order": t.order(),
            "dims": dims,
            "nonzero_blocks": nonzero,
            "blocks": blocks,
        }))
    }
}

/// A levelized schedule over a queue: allocation setup, then batches of
/// mutually conflict-free operations.
#[derive(Clone, Debug)]
pub struct Schedule {
    setup: Vec<usize>,
    levels: Vec<Vec<usize>>,
    conflicts: Vec<(usize, usize)>,
}

impl Schedule {
    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn setup_indices(&self) -> &[usize] {
        &self.setup
    }

    pub fn level_indices(&self) -> &[Vec<usize>] {
        &self.levels
    }

    /// Conflicting queue-index pairs `(i, j)` with `i < j`.
    pub fn conflict_edges(&self) -> &[(usize, usize)] {
        &self.conflicts
    }
}

/// Serializable schedule dump.
#[derive(Clone, Debug, Serialize)]
pub struct ScheduleDump {
    pub num_levels: usize,
    pub setup: Vec<OpJson>,
    pub levels: Vec<LevelDump>,
    pub conflict_edges: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelDump {
    pub level: usize,
    pub ops: Vec<OpJson>,
}

impl ScheduleDump {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if !self.setup.is_empty() {
            out.push_str("level 0 (setup):\n");
            for op in &self.setup {
                out.push_str(&format!("  {}\n", op.text));
            }
        }
        for lvl in &self.levels {
            out.push_str(&format!("level {}:\n", lvl.level));
            for op in &lvl.ops {
                out.push_str(&format!("  {}\n", op.text));
            }
        }
        out.push_str(&format!("conflict edges: {:?}\n", self.conflict_edges));
        out
    }
}

#[derive(Clone, Copy, PartialEq)]
enum AllocState {
    Live,
    Dead,
}

/// Queues validated operations, levelizes them, and executes level by level
/// against an execution context.
pub struct Scheduler {
    ec: ExecutionContext,
    queue: Vec<TensorOp>,
    state: HashMap<TensorId, (String, AllocState)>,
}

impl Scheduler {
    pub fn new(ec: &ExecutionContext) -> Scheduler {
        Scheduler {
            ec: ec.clone(),
            queue: Vec::new(),
            state: HashMap::new(),
        }
    }

    pub fn context(&self) -> &ExecutionContext {
        &self.ec
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    fn view_state(&self, t: &Tensor) -> Option<AllocState> {
        match self.state.get(&t.id()) {
            Some((_, s)) => Some(*s),
            None if self.ec.is_allocated(t) => Some(AllocState::Live),
            None => None,
        }
    }

    /// Append an operation, preserving program order. Referenced tensors must
    /// be allocated already or by an earlier queued allocation.
    pub fn enqueue(&mut self, op: TensorOp) -> Result<()> {
        match &op {
            TensorOp::Allocate(ts) => {
                for t in ts {
                    match self.view_state(t) {
                        Some(AllocState::Live) => {
                            return Err(Error::AlreadyAllocated {
                                tensor: t.name().to_string(),
                            })
                        }
                        Some(AllocState::Dead) => {
                            return Err(Error::UseAfterDeallocate {
                                tensor: t.name().to_string(),
                            })
                        }
                        None => {
                            self.state
                                .insert(t.id(), (t.name().to_string(), AllocState::Live));
                        }
                    }
                }
            }
            TensorOp::Deallocate(ts) => {
                for t in ts {
                    match self.view_state(t) {
                        Some(AllocState::Live) => {
                            self.state
                                .insert(t.id(), (t.name().to_string(), AllocState::Dead));
                        }
                        Some(AllocState::Dead) => {
                            return Err(Error::UseAfterDeallocate {
                                tensor: t.name().to_string(),
                            })
                        }
                        None => {
                            return Err(Error::Unallocated {
                                tensor: t.name().to_string(),
                            })
                        }
                    }
                }
            }
            other => {
                let (reads, writes) = other.read_write_sets();
                for id in reads.union(&writes) {
                    let name = op_tensor_by_id(other, *id)
                        .map(|t| t.name().to_string())
                        .unwrap_or_else(|| format!("t{id}"));
                    match self.state.get(id).map(|(_, s)| *s) {
                        Some(AllocState::Live) => {}
                        Some(AllocState::Dead) => {
                            return Err(Error::UseAfterDeallocate { tensor: name })
                        }
                        None => {
                            let t_live = op_tensor_by_id(other, *id)
                                .map(|t| self.ec.is_allocated(&t))
                                .unwrap_or(false);
                            if !t_live {
                                return Err(Error::Unallocated { tensor: name });
                            }
                        }
                    }
                }
            }
        }
        self.queue.push(op);
        Ok(())
    }

    /// Queue a collective allocation.
    pub fn allocate<'a, I>(&mut self, tensors: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Tensor>,
    {
        self.enqueue(crate::ops::allocate(tensors))
    }

    /// Queue a collective deallocation.
    pub fn deallocate<'a, I>(&mut self, tensors: I) -> Result<()>
    where
        I: IntoIterator<Item = &'a Tensor>,
    {
        self.enqueue(crate::ops::deallocate(tensors))
    }

    /// Greedy list scheduling: an operation's level is one past the highest
    /// level among earlier conflicting operations. Allocations form the setup
    /// phase executed ahead of level 1.
    pub fn levelize(&self) -> Schedule {
        let sets: Vec<_> = self.queue.iter().map(TensorOp::read_write_sets).collect();
        let conflict = |i: usize, j: usize| {
            let (ri, wi) = &sets[i];
            let (rj, wj) = &sets[j];
            wi.iter().any(|t| rj.contains(t) || wj.contains(t))
                || wj.iter().any(|t| ri.contains(t))
        };
        let mut setup = Vec::new();
        let mut levels: Vec<Vec<usize>> = Vec::new();
        let mut level_of: HashMap<usize, usize> = HashMap::new();
        let mut conflicts = Vec::new();
        for (idx, op) in self.queue.iter().enumerate() {
            for jdx in 0..idx {
                if conflict(jdx, idx) {
                    conflicts.push((jdx, idx));
                }
            }
            if matches!(op, TensorOp::Allocate(_)) {
                setup.push(idx);
                continue;
            }
            let mut level = 0usize;
            for (jdx, other) in self.queue.iter().enumerate().take(idx) {
                if matches!(other, TensorOp::Allocate(_)) {
                    continue;
                }
                if conflict(jdx, idx) {
                    level = level.max(level_of[&jdx] + 1);
                }
            }
            level_of.insert(idx, level);
            if levels.len() <= level {
                levels.resize_with(level + 1, Vec::new);
            }
            levels[level].push(idx);
        }
        Schedule {
            setup,
            levels,
            conflicts,
        }
    }

    /// Serializable dump of the current queue's schedule.
    pub fn dump_schedule(&self) -> ScheduleDump {
        let schedule = self.levelize();
        ScheduleDump {
            num_levels: schedule.levels.len(),
            setup: schedule
                .setup
                .iter()
                .map(|&i| self.queue[i].to_json())
                .collect(),
            levels: schedule
                .levels
                .iter()
                .enumerate()
                .map(|(l, idxs)| LevelDump {
                    level: l + 1,
                    ops: idxs.iter().map(|&i| self.queue[i].to_json()).collect(),
                })
                .collect(),
            conflict_edges: schedule.conflicts.clone(),
        }
    }

    /// Execute all queued operations level by level; clears the queue and
    /// returns the counters for this run.
    pub fn execute(&mut self) -> Result<ExecutionStats> {
        self.ec.reset_stats();
        if self.queue.is_empty() {
            return Ok(self.ec.stats_snapshot());
        }
        let schedule = self.levelize();
        let ops = std::mem::take(&mut self.queue);
        self.state.clear();
        for &idx in &schedule.setup {
            if let TensorOp::Allocate(ts) = &ops[idx] {
                for t in ts {
                    self.ec.allocate(t)?;
                }
            }
        }
        for level in &schedule.levels {
            run_level(&self.ec, &ops, level)?;
        }
        Ok(self.ec.stats_snapshot())
    }
}

fn op_tensor_by_id(op: &TensorOp, id: TensorId) -> Option<Tensor> {
    let views: Vec<&LabeledTensor> = match op {
        TensorOp::Set { lhs, .. } => vec![lhs],
        TensorOp::Add { lhs, rhs, .. } => vec![lhs, rhs],
        TensorOp::Mult {
            lhs, rhs1, rhs2, ..
        } => vec![lhs, rhs1, rhs2],
        TensorOp::Scan { src, .. } => vec![src],
        TensorOp::Map { lhs, rhs, .. } => vec![lhs, rhs],
        _ => Vec::new(),
    };
    views
        .into_iter()
        .map(LabeledTensor::tensor)
        .find(|t| t.id() == id)
        .cloned()
}

// ---------------------------------------------------------------------------
// Level execution
// ---------------------------------------------------------------------------

/// One unit of owner-computes work: produce (or fold) a single block.
enum Work {
    Set {
        op: usize,
        block: BlockId,
    },
    /// `rhs_block` may be predicate-zero; it then reads as zeros.
    Add {
        op: usize,
        block: BlockId,
        rhs_block: BlockId,
    },
    /// Contributions hold only pairs where both operand blocks are nonzero.
    Mult {
        op: usize,
        block: BlockId,
        contribs: Vec<(BlockId, BlockId)>,
    },
    Map {
        op: usize,
        block: BlockId,
        rhs_block: BlockId,
    },
    Scan {
        op: usize,
        block: BlockId,
    },
}

struct Task {
    rank: usize,
    work: Work,
}

fn storage_of<'a>(
    store: &'a HashMap<TensorId, TensorStorage>,
    t: &Tensor,
) -> Result<&'a TensorStorage> {
    store.get(&t.id()).ok_or_else(|| Error::Unallocated {
        tensor: t.name().to_string(),
    })
}

/// Copy one operand block as seen from `rank`, counting remote fetches.
/// Predicate-zero blocks read as zeros without communication.
fn fetch_block(
    store: &HashMap<TensorId, TensorStorage>,
    stats: &StatsCell,
    rank: usize,
    t: &Tensor,
    b: &BlockId,
) -> Result<Vec<f64>> {
    let storage = storage_of(store, t)?;
    if !t.is_nonzero_unchecked(b) {
        return Ok(vec![0.0; t.block_volume_unchecked(b)]);
    }
    let owner = storage.placement.owner_of(b).unwrap();
    if owner != rank {
        stats.remote_gets.fetch_add(1, Ordering::Relaxed);
    }
    Ok(storage.blocks[b].lock().unwrap().clone())
}

fn row_major_strides(extents: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; extents.len()];
    for d in (0..extents.len().saturating_sub(1)).rev() {
        strides[d] = strides[d + 1] * extents[d + 1];
    }
    strides
}

/// Flat offsets of a coordinate group: entry `f` is the dot product of the
/// `f`-th row-major coordinate tuple with `strides`.
fn group_offsets(extents: &[usize], strides: &[usize]) -> Vec<usize> {
    let total: usize = extents.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut coords = vec![0usize; extents.len()];
    for _ in 0..total {
        out.push(coords.iter().zip(strides).map(|(&c, &s)| c * s).sum());
        let mut d = extents.len();
        while d > 0 {
            d -= 1;
            coords[d] += 1;
            if coords[d] < extents[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    out
}

/// Tile-tuple iteration over per-axis ordinal lists.
fn tuple_iter(lens: &[usize]) -> crate::tensor::RowMajor {
    crate::tensor::RowMajor::new(lens.to_vec())
}

fn run_level(ec: &ExecutionContext, ops: &[TensorOp], level: &[usize]) -> Result<()> {
    let inner = &ec.inner;
    let mut deallocs: Vec<usize> = Vec::new();
    {
        let store = inner.store.read().unwrap();
        let mut by_rank: Vec<Vec<Task>> = (0..inner.pg.nranks()).map(|_| Vec::new()).collect();
        for &idx in level {
            match &ops[idx] {
                TensorOp::Deallocate(_) => deallocs.push(idx),
                op => {
                    for task in build_tasks(&store, idx, op)? {
                        by_rank[task.rank].push(task);
                    }
                }
            }
        }

        let workers = inner.workers.min(inner.pg.nranks()).max(1);
        let mut scan_partials: Vec<(usize, usize, f64)> = Vec::new();
        if workers <= 1 {
            for tasks in &by_rank {
                let partials = run_tasks(&store, inner, ops, tasks)?;
                scan_partials.extend(partials);
            }
        } else {
            let chunks: Vec<&[Vec<Task>]> = by_rank.chunks(by_rank.len().div_ceil(workers)).collect();
            let store_ref = &*store;
            let results: Vec<Result<Vec<(usize, usize, f64)>>> = std::thread::scope(|scope| {
                let handles: Vec<_> = chunks
                    .into_iter()
                    .map(|chunk| {
                        scope.spawn(move || {
                            let mut acc = Vec::new();
                            for tasks in chunk {
                                acc.extend(run_tasks(store_ref, inner, ops, tasks)?);
                            }
                            Ok(acc)
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().unwrap()).collect()
            });
            for r in results {
                scan_partials.extend(r?);
            }
        }

        // combine scan partials in rank order, one sink write per scan op
        scan_partials.sort_by_key(|&(op, rank, _)| (op, rank));
        let mut totals: HashMap<usize, f64> = HashMap::new();
        for (op, _, partial) in &scan_partials {
            *totals.entry(*op).or_insert(0.0) += partial;
        }
        for &idx in level {
            if let TensorOp::Scan { sink, .. } = &ops[idx] {
                sink.set(totals.get(&idx).copied().unwrap_or(0.0));
            }
        }
    }

    for idx in deallocs {
        if let TensorOp::Deallocate(ts) = &ops[idx] {
            for t in ts {
                ec.deallocate(t)?;
            }
        }
    }

    inner.stats.global_syncs.fetch_add(1, Ordering::Relaxed);
    Ok(())
}

/// Enumerate the owner-computes work of one operation: one task per nonzero
/// output block (for contractions, accumulate form skips blocks whose
/// contributing block pairs are all predicate-zero).
fn build_tasks(
    store: &HashMap<TensorId, TensorStorage>,
    idx: usize,
    op: &TensorOp,
) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    match op {
        TensorOp::Set { lhs, .. } => {
            let storage = storage_of(store, lhs.tensor())?;
            for block in slice_blocks(lhs) {
                if !lhs.tensor().is_nonzero_unchecked(&block) {
                    continue;
                }
                let rank = storage.placement.owner_of(&block).unwrap();
                tasks.push(Task {
                    rank,
                    work: Work::Set { op: idx, block },
                });
            }
        }
        TensorOp::Add {
            lhs,
            rhs,
            permutation,
            ..
        } => {
            let storage = storage_of(store, lhs.tensor())?;
            storage_of(store, rhs.tensor())?;
            let lhs_ords = lhs.slice_ordinals();
            let rhs_ords = rhs.slice_ordinals();
            let lens: Vec<usize> = lhs_ords.iter().map(Vec::len).collect();
            for tup in tuple_iter(&lens) {
                let block = BlockId(
                    tup.iter()
                        .zip(&lhs_ords)
                        .map(|(&k, ords)| ords[k])
                        .collect(),
                );
                if !lhs.tensor().is_nonzero_unchecked(&block) {
                    continue;
                }
                let mut rhs_tuple = vec![0usize; rhs.order()];
                for (d, &k) in tup.iter().enumerate() {
                    rhs_tuple[permutation[d]] = rhs_ords[permutation[d]][k];
                }
                let rank = storage.placement.owner_of(&block).unwrap();
                tasks.push(Task {
                    rank,
                    work: Work::Add {
                        op: idx,
                        block,
                        rhs_block: BlockId(rhs_tuple),
                    },
                });
            }
        }
        TensorOp::Map {
            lhs,
            rhs,
            permutation,
            ..
        } => {
            let storage = storage_of(store, lhs.tensor())?;
            storage_of(store, rhs.tensor())?;
            let lhs_ords = lhs.slice_ordinals();
            let rhs_ords = rhs.slice_ordinals();
            let lens: Vec<usize> = lhs_ords.iter().map(Vec::len).collect();
            for tup in tuple_iter(&lens) {
                let block = BlockId(
                    tup.iter()
                        .zip(&lhs_ords)
                        .map(|(&k, ords)| ords[k])
                        .collect(),
                );
                if !lhs.tensor().is_nonzero_unchecked(&block) {
                    continue;
                }
                let mut rhs_tuple = vec![0usize; rhs.order()];
                for (d, &k) in tup.iter().enumerate() {
                    rhs_tuple[permutation[d]] = rhs_ords[permutation[d]][k];
                }
                let rank = storage.placement.owner_of(&block).unwrap();
                tasks.push(Task {
                    rank,
                    work: Work::Map {
                        op: idx,
                        block,
                        rhs_block: BlockId(rhs_tuple),
                    },
                });
            }
        }
        TensorOp::Mult {
            lhs,
            rhs1,
            rhs2,
            accumulate,
            plan,
            ..
        } => {
            let storage = storage_of(store, lhs.tensor())?;
            storage_of(store, rhs1.tensor())?;
            storage_of(store, rhs2.tensor())?;
            let lhs_ords = lhs.slice_ordinals();
            let r1_ords = rhs1.slice_ordinals();
            let r2_ords = rhs2.slice_ordinals();
            let free_lens: Vec<usize> = lhs_ords.iter().map(Vec::len).collect();
            let con_lens: Vec<usize> = plan
                .contracted
                .iter()
                .map(|&(p1, _)| r1_ords[p1].len())
                .collect();
            for tup in tuple_iter(&free_lens) {
                let block = BlockId(
                    tup.iter()
                        .zip(&lhs_ords)
                        .map(|(&k, ords)| ords[k])
                        .collect(),
                );
                if !lhs.tensor().is_nonzero_unchecked(&block) {
                    continue;
                }
                let mut contribs = Vec::new();
                for ctup in tuple_iter(&con_lens) {
                    let mut b1 = vec![0usize; rhs1.order()];
                    let mut b2 = vec![0usize; rhs2.order()];
                    for (d, &k) in tup.iter().enumerate() {
                        let (operand, axis) = plan.lhs_sources[d];
                        if operand == 0 {
                            b1[axis] = r1_ords[axis][k];
                        } else {
                            b2[axis] = r2_ords[axis][k];
                        }
                    }
                    for (c, &k) in ctup.iter().enumerate() {
                        let (p1, p2) = plan.contracted[c];
                        b1[p1] = r1_ords[p1][k];
                        b2[p2] = r2_ords[p2][k];
                    }
                    let b1 = BlockId(b1);
                    let b2 = BlockId(b2);
                    if rhs1.tensor().is_nonzero_unchecked(&b1)
                        && rhs2.tensor().is_nonzero_unchecked(&b2)
                    {
                        contribs.push((b1, b2));
                    }
                }
                if contribs.is_empty() && *accumulate {
                    continue;
                }
                let rank = storage.placement.owner_of(&block).unwrap();
                tasks.push(Task {
                    rank,
                    work: Work::Mult {
                        op: idx,
                        block,
                        contribs,
                    },
                });
            }
        }
        TensorOp::Scan { src, .. } => {
            let storage = storage_of(store, src.tensor())?;
            for block in slice_blocks(src) {
                if !src.tensor().is_nonzero_unchecked(&block) {
                    continue;
                }
                let rank = storage.placement.owner_of(&block).unwrap();
                tasks.push(Task {
                    rank,
                    work: Work::Scan { op: idx, block },
                });
            }
        }
        TensorOp::Allocate(_) | TensorOp::Deallocate(_) => {}
    }
    Ok(tasks)
}

/// Blocks of the slice a labeled view addresses, in row-major slice order.
fn slice_blocks(view: &LabeledTensor) -> Vec<BlockId> {
    let ords = view.slice_ordinals();
    let lens: Vec<usize> = ords.iter().map(Vec::len).collect();
    tuple_iter(&lens)
        .map(|tup| {
            BlockId(
                tup.iter()
                    .zip(&ords)
                    .map(|(&k, per_axis)| per_axis[k])
                    .collect(),
            )
        })
        .collect()
}

/// Run one rank's tasks; returns `(scan op index, rank, partial)` per scan
/// task group.
fn run_tasks(
    store: &HashMap<TensorId, TensorStorage>,
    inner: &EcInner,
    ops: &[TensorOp],
    tasks: &[Task],
) -> Result<Vec<(usize, usize, f64)>> {
    let mut scan_acc: HashMap<usize, f64> = HashMap::new();
    let mut scan_rank = 0usize;
    for task in tasks {
        inner.stats.per_rank_tasks[task.rank].fetch_add(1, Ordering::Relaxed);
        match &task.work {
            Work::Set { op, block } => {
                let (lhs, alpha, accumulate) = match &ops[*op] {
                    TensorOp::Set {
                        lhs,
                        alpha,
                        accumulate,
                    } => (lhs, *alpha, *accumulate),
                    _ => unreachable!(),
                };
                let storage = storage_of(store, lhs.tensor())?;
                let mut guard = storage.blocks[block].lock().unwrap();
                for v in guard.iter_mut() {
                    *v = if accumulate { *v + alpha } else { alpha };
                }
            }
            Work::Add { op, block, rhs_block } => {
                let (lhs, alpha, rhs, accumulate, permutation) = match &ops[*op] {
                    TensorOp::Add {
                        lhs,
                        alpha,
                        rhs,
                        accumulate,
                        permutation,
                    } => (lhs, *alpha, rhs, *accumulate, permutation),
                    _ => unreachable!(),
                };
                let src = fetch_block(store, &inner.stats, task.rank, rhs.tensor(), rhs_block)?;
                apply_permuted(
                    store, lhs, block, rhs, rhs_block, permutation, &src,
                    |dst, s| {
                        if accumulate {
                            *dst += alpha * s;
                        } else {
                            *dst = alpha * s;
                        }
                    },
                )?;
            }
            Work::Map { op, block, rhs_block } => {
                let (lhs, f, rhs, permutation) = match &ops[*op] {
                    TensorOp::Map {
                        lhs,
                        f,
                        rhs,
                        permutation,
                    } => (lhs, f, rhs, permutation),
                    _ => unreachable!(),
                };
                let src = fetch_block(store, &inner.stats, task.rank, rhs.tensor(), rhs_block)?;
                apply_permuted(
                    store, lhs, block, rhs, rhs_block, permutation, &src,
                    |dst, s| *dst = f(s),
                )?;
            }
            Work::Mult { op, block, contribs } => {
                let (lhs, alpha, rhs1, rhs2, accumulate, plan) = match &ops[*op] {
                    TensorOp::Mult {
                        lhs,
                        alpha,
                        rhs1,
                        rhs2,
                        accumulate,
                        plan,
                    } => (lhs, *alpha, rhs1, rhs2, *accumulate, plan),
                    _ => unreachable!(),
                };
                let storage = storage_of(store, lhs.tensor())?;
                let lhs_extents = lhs.tensor().block_extents(block)?;
                let lhs_strides = row_major_strides(&lhs_extents);
                let mut guard = storage.blocks[block].lock().unwrap();
                if !accumulate {
                    guard.fill(0.0);
                }
                for (b1, b2) in contribs {
                    let d1 = fetch_block(store, &inner.stats, task.rank, rhs1.tensor(), b1)?;
                    let d2 = fetch_block(store, &inner.stats, task.rank, rhs2.tensor(), b2)?;
                    let e1 = rhs1.tensor().block_extents(b1)?;
                    let e2 = rhs2.tensor().block_extents(b2)?;
                    let s1 = row_major_strides(&e1);
                    let s2 = row_major_strides(&e2);

                    // classify lhs axes by source operand, in lhs order
                    let mut m_ext = Vec::new();
                    let mut m_lstr = Vec::new();
                    let mut m_1str = Vec::new();
                    let mut n_ext = Vec::new();
                    let mut n_lstr = Vec::new();
                    let mut n_2str = Vec::new();
                    for (d, &(operand, axis)) in plan.lhs_sources.iter().enumerate() {
                        if operand == 0 {
                            m_ext.push(lhs_extents[d]);
                            m_lstr.push(lhs_strides[d]);
                            m_1str.push(s1[axis]);
                        } else {
                            n_ext.push(lhs_extents[d]);
                            n_lstr.push(lhs_strides[d]);
                            n_2str.push(s2[axis]);
                        }
                    }
                    let mut k_ext = Vec::new();
                    let mut k_1str = Vec::new();
                    let mut k_2str = Vec::new();
                    for &(p1, p2) in &plan.contracted {
                        k_ext.push(e1[p1]);
                        k_1str.push(s1[p1]);
                        k_2str.push(s2[p2]);
                    }

                    let m_l = group_offsets(&m_ext, &m_lstr);
                    let m_1 = group_offsets(&m_ext, &m_1str);
                    let n_l = group_offsets(&n_ext, &n_lstr);
                    let n_2 = group_offsets(&n_ext, &n_2str);
                    let k_1 = group_offsets(&k_ext, &k_1str);
                    let k_2 = group_offsets(&k_ext, &k_2str);

                    for (mi, &mo) in m_l.iter().enumerate() {
                        let r1_base = m_1[mi];
                        for (ki, &k1o) in k_1.iter().enumerate() {
                            let a = alpha * d1[r1_base + k1o];
                            let k2o = k_2[ki];
                            for (ni, &no) in n_l.iter().enumerate() {
                                guard[mo + no] += a * d2[k2o + n_2[ni]];
                            }
                        }
                    }
                    inner.stats.flops.fetch_add(
                        2 * (m_l.len() * n_l.len() * k_1.len()) as u64,
                        Ordering::Relaxed,
                    );
                }
            }
            Work::Scan { op, block } => {
                let (src, f) = match &ops[*op] {
                    TensorOp::Scan { src, f, .. } => (src, f),
                    _ => unreachable!(),
                };
                let storage = storage_of(store, src.tensor())?;
                let guard = storage.blocks[block].lock().unwrap();
                let partial: f64 = guard.iter().map(|&x| f(x)).sum();
                *scan_acc.entry(*op).or_insert(0.0) += partial;
                scan_rank = task.rank;
            }
        }
    }
    Ok(scan_acc
        .into_iter()
        .map(|(op, partial)| (op, scan_rank, partial))
        .collect())
}

/// Write `combine(dst, src)` over one lhs block, walking the rhs block
/// through the label permutation.
#[allow(clippy::too_many_arguments)]
fn apply_permuted(
    store: &HashMap<TensorId, TensorStorage>,
    lhs: &LabeledTensor,
    block: &BlockId,
    rhs: &LabeledTensor,
    rhs_block: &BlockId,
    permutation: &[usize],
    src: &[f64],
    combine: impl Fn(&mut f64, f64),
) -> Result<()> {
    let storage = storage_of(store, lhs.tensor())?;
    let lhs_extents = lhs.tensor().block_extents(block)?;
    let rhs_extents = rhs.tensor().block_extents(rhs_block)?;
    let rhs_strides = row_major_strides(&rhs_extents);
    // stride of the rhs axis carrying the label of lhs axis d
    let rhs_stride_for: Vec<usize> = (0..lhs_extents.len())
        .map(|d| rhs_strides[permutation[d]])
        .collect();
    let mut guard = storage.blocks[block].lock().unwrap();
    let mut coords = vec![0usize; lhs_extents.len()];
    for dst in guard.iter_mut() {
        let r_off: usize = coords
            .iter()
            .zip(&rhs_stride_for)
            .map(|(&c, &s)| c * s)
            .sum();
        combine(dst, src[r_off]);
        let mut d = lhs_extents.len();
        while d > 0 {
            d -= 1;
            coords[d] += 1;
            if coords[d] < lhs_extents[d] {
                break;
            }
            coords[d] = 0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index_space::{IndexSpace, Spin, TiledIndexSpace};
    use crate::naive::Interpreter;
    use crate::ops;
    use std::sync::Arc as StdArc;

    struct Demo {
        a: Tensor,
        b: Tensor,
        c: Tensor,
        queue: Vec<TensorOp>,
    }

    /// set A; transpose-add B += -A; contract C = 0.5 * A * B over the
    /// 20-index dimension, so C is constantly -10.
    fn demo_program() -> Demo {
        let m = IndexSpace::new(30).unwrap();
        let k = IndexSpace::new(20).unwrap();
        let tm = TiledIndexSpace::custom(&m, &[10, 20]).unwrap();
        let tk = TiledIndexSpace::fixed(&k, 5).unwrap();
        let a = Tensor::named("A", [tm.clone(), tk.clone()]);
        let b = Tensor::named("B", [tk.clone(), tm.clone()]);
        let c = Tensor::named("C", [tm.clone(), tm.clone()]);
        let (i, j) = {
            let ls = tm.labels_named(&["i", "j"]);
            (ls[0].clone(), ls[1].clone())
        };
        let l = tk.label("l");
        let queue = vec![
            ops::allocate([&a, &b, &c]),
            ops::set(a.at(&[&i, &l]).unwrap(), 1.0).unwrap(),
            ops::add_accumulate(b.at(&[&l, &i]).unwrap(), -1.0, a.at(&[&i, &l]).unwrap())
                .unwrap(),
            ops::mult(
                c.at(&[&i, &j]).unwrap(),
                0.5,
                a.at(&[&i, &l]).unwrap(),
                b.at(&[&l, &j]).unwrap(),
            )
            .unwrap(),
        ];
        Demo { a, b, c, queue }
    }

    fn run_demo(nranks: usize) -> (Demo, ExecutionContext, ExecutionStats) {
        let demo = demo_program();
        let ec = ExecutionContext::new(
            ProcessGroup::new(nranks).unwrap(),
            Scheme::RoundRobinDense,
        );
        let mut sch = Scheduler::new(&ec);
        for op in demo.queue.clone() {
            sch.enqueue(op).unwrap();
        }
        let stats = sch.execute().unwrap();
        (demo, ec, stats)
    }

    #[test]
    fn demo_program_levelizes_into_three_batches() {
        let demo = demo_program();
        let ec = ExecutionContext::new(ProcessGroup::new(2).unwrap(), Scheme::RoundRobinDense);
        let mut sch = Scheduler::new(&ec);
        for op in demo.queue {
            sch.enqueue(op).unwrap();
        }
        let schedule = sch.levelize();
        assert_eq!(schedule.setup_indices(), &[0]);
        assert_eq!(schedule.num_levels(), 3);
        assert_eq!(schedule.level_indices(), &[vec![1], vec![2], vec![3]]);
    }

    #[test]
    fn demo_program_executes_to_constant() {
        let (demo, ec, stats) = run_demo(1);
        let c = ec.materialize(&demo.c).unwrap();
        assert!(c.data.iter().all(|&v| (v - (-10.0)).abs() < 1e-12));
        assert_eq!(stats.global_syncs, 3);
        // one task per output block of each op: A has 8, B has 8, C has 4
        assert_eq!(stats.per_rank_task_counts.iter().sum::<u64>(), 20);
        // contraction flops: 2 * 30*30*20
        assert_eq!(stats.flops, 2 * 30 * 30 * 20);
    }

    #[test]
    fn demo_program_matches_interpreter() {
        let (demo, ec, _) = run_demo(3);
        let mut interp = Interpreter::new();
        interp.run(&demo_program().queue).unwrap();
        // rebuild with the same tensors to compare against this run
        let mut interp2 = Interpreter::new();
        interp2.run(&demo.queue).unwrap();
        for t in [&demo.a, &demo.b, &demo.c] {
            let got = ec.materialize(t).unwrap();
            let want = interp2.tensor(t).unwrap();
            assert!(got.max_abs_diff(want) < 1e-12);
        }
    }

    #[test]
    fn results_are_rank_invariant() {
        let (d1, e1, s1) = run_demo(1);
        let c1 = e1.materialize(&d1.c).unwrap();
        for nranks in [2, 3, 8] {
            let (d, e, s) = run_demo(nranks);
            let c = e.materialize(&d.c).unwrap();
            assert_eq!(c1.extents, c.extents);
            assert!(c1.max_abs_diff(&c) < 1e-12);
            assert_eq!(s.global_syncs, s1.global_syncs);
            assert_eq!(s.per_rank_task_counts.iter().sum::<u64>(), 20);
        }
    }

    #[test]
    fn disjoint_sets_share_a_level() {
        let s = IndexSpace::new(6).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 3).unwrap();
        let a = Tensor::named("A", [ts.clone()]);
        let b = Tensor::named("B", [ts.clone()]);
        let p = ts.label("p");
        let q = ts.label("q");
        let ec = ExecutionContext::new(ProcessGroup::new(1).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        sch.allocate([&a, &b]).unwrap();
        sch.enqueue(ops::set(a.at(&[&p]).unwrap(), 1.0).unwrap()).unwrap();
        sch.enqueue(ops::set(b.at(&[&q]).unwrap(), 2.0).unwrap()).unwrap();
        assert_eq!(sch.levelize().num_levels(), 1);
        let stats = sch.execute().unwrap();
        assert_eq!(stats.global_syncs, 1);
    }

    #[test]
    fn accumulates_into_same_tensor_serialize() {
        let s = IndexSpace::new(6).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 3).unwrap();
        let a = Tensor::named("A", [ts.clone()]);
        let p = ts.label("p");
        let q = ts.label("q");
        let ec = ExecutionContext::new(ProcessGroup::new(1).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        sch.allocate([&a]).unwrap();
        sch.enqueue(ops::set_accumulate(a.at(&[&p]).unwrap(), 1.0).unwrap())
            .unwrap();
        sch.enqueue(ops::set_accumulate(a.at(&[&q]).unwrap(), 1.0).unwrap())
            .unwrap();
        assert_eq!(sch.levelize().num_levels(), 2);
        sch.execute().unwrap();
        let vals = ec.materialize(&a).unwrap();
        assert!(vals.data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn empty_queue_executes_to_zero_stats() {
        let ec = ExecutionContext::new(ProcessGroup::new(2).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        let stats = sch.execute().unwrap();
        assert_eq!(stats.global_syncs, 0);
        assert_eq!(stats.flops, 0);
    }

    #[test]
    fn unallocated_use_is_rejected_at_enqueue() {
        let s = IndexSpace::new(4).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 2).unwrap();
        let a = Tensor::named("A", [ts.clone()]);
        let p = ts.label("p");
        let ec = ExecutionContext::new(ProcessGroup::new(1).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        let err = sch.enqueue(ops::set(a.at(&[&p]).unwrap(), 1.0).unwrap());
        assert!(matches!(err, Err(Error::Unallocated { .. })));
    }

    #[test]
    fn use_after_deallocate_is_rejected() {
        let s = IndexSpace::new(4).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 2).unwrap();
        let a = Tensor::named("A", [ts.clone()]);
        let p = ts.label("p");
        let ec = ExecutionContext::new(ProcessGroup::new(1).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        sch.allocate([&a]).unwrap();
        sch.deallocate([&a]).unwrap();
        let err = sch.enqueue(ops::set(a.at(&[&p]).unwrap(), 1.0).unwrap());
        assert!(matches!(err, Err(Error::UseAfterDeallocate { .. })));
    }

    #[test]
    fn deallocate_levelizes_after_users_and_frees() {
        let s = IndexSpace::new(4).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 2).unwrap();
        let a = Tensor::named("A", [ts.clone()]);
        let p = ts.label("p");
        let ec = ExecutionContext::new(ProcessGroup::new(1).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        sch.allocate([&a]).unwrap();
        sch.enqueue(ops::set(a.at(&[&p]).unwrap(), 1.0).unwrap()).unwrap();
        sch.deallocate([&a]).unwrap();
        let schedule = sch.levelize();
        assert_eq!(schedule.num_levels(), 2);
        sch.execute().unwrap();
        assert!(!ec.is_allocated(&a));
    }

    #[test]
    fn new_epoch_after_execute() {
        let s = IndexSpace::new(4).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 2).unwrap();
        let a = Tensor::named("A", [ts.clone()]);
        let p = ts.label("p");
        let ec = ExecutionContext::new(ProcessGroup::new(1).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        sch.allocate([&a]).unwrap();
        sch.enqueue(ops::set(a.at(&[&p]).unwrap(), 1.0).unwrap()).unwrap();
        sch.execute().unwrap();
        assert_eq!(sch.queue_len(), 0);
        // the tensor stays allocated in the context; new ops can use it
        sch.enqueue(ops::set_accumulate(a.at(&[&p]).unwrap(), 1.0).unwrap())
            .unwrap();
        let stats = sch.execute().unwrap();
        assert_eq!(stats.global_syncs, 1);
        let vals = ec.materialize(&a).unwrap();
        assert!(vals.data.iter().all(|&v| v == 2.0));
    }

    #[test]
    fn block_round_trip_and_accumulate() {
        let s = IndexSpace::new(4).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 2).unwrap();
        let a = Tensor::named("A", [ts.clone(), ts.clone()]);
        let ec = ExecutionContext::new(ProcessGroup::new(2).unwrap(), Scheme::RoundRobinDense);
        ec.allocate(&a).unwrap();
        let b = BlockId(vec![0, 1]);
        let v = vec![1.0, 2.0, 3.0, 4.0];
        ec.put_block_from(ec.owner_of(&a, &b).unwrap().unwrap(), &a, &b, &v)
            .unwrap();
        let got = ec.get_block_from(ec.owner_of(&a, &b).unwrap().unwrap(), &a, &b).unwrap();
        assert_eq!(got.data, v);
        ec.accumulate_block_from(ec.owner_of(&a, &b).unwrap().unwrap(), &a, &b, &v)
            .unwrap();
        let doubled = ec.get_block_from(ec.owner_of(&a, &b).unwrap().unwrap(), &a, &b).unwrap();
        assert_eq!(doubled.data, vec![2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn remote_access_is_counted() {
        let s = IndexSpace::new(4).unwrap();
        let ts = TiledIndexSpace::fixed(&s, 2).unwrap();
        let a = Tensor::named("A", [ts.clone(), ts.clone()]);
        let ec = ExecutionContext::new(ProcessGroup::new(2).unwrap(), Scheme::RoundRobinDense);
        ec.allocate(&a).unwrap();
        ec.reset_stats();
        let b = BlockId(vec![0, 0]);
        let owner = ec.owner_of(&a, &b).unwrap().unwrap();
        let other = (owner + 1) % 2;
        ec.get_block_from(other, &a, &b).unwrap();
        assert_eq!(ec.stats_snapshot().remote_gets, 1);
        ec.get_block_from(owner, &a, &b).unwrap();
        assert_eq!(ec.stats_snapshot().remote_gets, 1);
        ec.accumulate_block_from(other, &a, &b, &[1.0; 4]).unwrap();
        assert_eq!(ec.stats_snapshot().remote_accumulates, 1);
    }

    #[test]
    fn zero_block_reads_as_zeros_and_rejects_writes() {
        let s = IndexSpace::builder(4)
            .spin(0..2, Spin::Alpha)
            .spin(2..4, Spin::Beta)
            .build()
            .unwrap();
        let ts = TiledIndexSpace::fixed(&s, 2).unwrap();
        let t = Tensor::spin_conserving("S", [ts.clone(), ts.clone()]).unwrap();
        let ec = ExecutionContext::new(ProcessGroup::new(1).unwrap(), Scheme::RoundRobinSparse);
        ec.allocate(&t).unwrap();
        let dead = BlockId(vec![0, 1]);
        let got = ec.get_block(&t, &dead).unwrap();
        assert!(got.data.iter().all(|&v| v == 0.0));
        assert!(matches!(
            ec.put_block(&t, &dead, &[1.0; 4]),
            Err(Error::ZeroBlockWrite { .. })
        ));
    }

    #[test]
    fn scan_and_map_execute_like_interpreter() {
        let s = IndexSpace::new(6).unwrap();
        let ts = TiledIndexSpace::custom(&s, &[2, 4]).unwrap();
        let a = Tensor::named("A", [ts.clone(), ts.clone()]);
        let b = Tensor::named("B", [ts.clone(), ts.clone()]);
        let (p, q) = {
            let ls = ts.labels_named(&["p", "q"]);
            (ls[0].clone(), ls[1].clone())
        };
        let (scan_op, sink) = ops::scan_sum(a.at(&[&p, &q]).unwrap());
        let queue = vec![
            ops::allocate([&a, &b]),
            ops::set(a.at(&[&p, &q]).unwrap(), 1.0).unwrap(),
            ops::map(
                b.at(&[&p, &q]).unwrap(),
                StdArc::new(|x| 2.0 * x),
                a.at(&[&p, &q]).unwrap(),
            )
            .unwrap(),
            scan_op,
        ];
        let ec = ExecutionContext::new(ProcessGroup::new(3).unwrap(), Scheme::Grid);
        let mut sch = Scheduler::new(&ec);
        for op in queue.clone() {
            sch.enqueue(op).unwrap();
        }
        sch.execute().unwrap();
        assert_eq!(sink.get(), 36.0);
        let b_vals = ec.materialize(&b).unwrap();
        assert!(b_vals.data.iter().all(|&v| v == 2.0));

        let mut interp = Interpreter::new();
        interp.run(&queue).unwrap();
        assert_eq!(interp.scan_results(), &[36.0]);
        assert!(interp
            .tensor(&b)
            .unwrap()
            .data
            .iter()
            .all(|&v| v == 2.0));
    }

    #[test]
    fn sliced_ops_touch_only_the_slice() {
        let k = IndexSpace::builder(20)
            .subspace("first", [0..10])
            .subspace("second", [10..20])
            .build()
            .unwrap();
        let tk = TiledIndexSpace::fixed(&k, 5).unwrap();
        let first = tk.subspace("first").unwrap();
        let a = Tensor::named("A", [tk.clone()]);
        let full = tk.label("l");
        let x = first.label("x");
        let ec = ExecutionContext::new(ProcessGroup::new(2).unwrap(), Scheme::RoundRobinDense);
        let mut sch = Scheduler::new(&ec);
        sch.allocate([&a]).unwrap();
        sch.enqueue(ops::set(a.at(&[&full]).unwrap(), 5.0).unwrap()).unwrap();
        sch.enqueue(ops::set(a.at(&[&x]).unwrap(), 1.0).unwrap()).unwrap();
        sch.execute().unwrap();
        let vals = ec.materialize(&a).unwrap();
        for (g, &v) in vals.data.iter().enumerate() {
            let want = if g < 10 { 1.0 } else { 5.0 };
            assert_eq!(v, want, "index {g}");
        }
    }

    #[test]
    fn schedule_dump_lists_levels() {
        let demo = demo_program();
        let ec = ExecutionContext::new(ProcessGroup::new(2).unwrap(), Scheme::RoundRobinDense);
        let mut sch = Scheduler::new(&ec);
        for op in demo.queue {
            sch.enqueue(op).unwrap();
        }
        let dump = sch.dump_schedule();
        assert_eq!(dump.num_levels, 3);
        assert_eq!(dump.setup.len(), 1);
        let text = dump.to_text();
        assert!(text.contains("A(i,l) = 1"));
        assert!(text.contains("C(i,j) = 0.5 * A(i,l) * B(l,j)"));
        serde_json::to_string(&dump).unwrap();
    }
}
