//! Tensor handles with blocked, optionally block-sparse storage addressed by
//! tile coordinates, and labeled views for the operation syntax.
//!
//! A [`Tensor`] is a handle: cloning shares identity, and all data lives in an
//! execution context, so assignment is always a shallow copy. Blocks are
//! addressed by a [`BlockId`] (one tile ordinal per dimension) and carry
//! row-major `f64` data.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::index_space::{Spin, TiledIndexLabel, TiledIndexSpace};

static NEXT_TENSOR_ID: AtomicU64 = AtomicU64::new(0);

pub type TensorId = u64;

/// Cartesian block address: one tile ordinal per dimension.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(pub Vec<usize>);

impl fmt::Debug for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl BlockId {
    pub fn order(&self) -> usize {
        self.0.len()
    }

    pub fn ordinals(&self) -> &[usize] {
        &self.0
    }
}

/// Predicate deciding which blocks of a tensor can hold nonzero data.
pub type BlockPredicate = Arc<dyn Fn(&BlockId) -> bool + Send + Sync>;

struct TensorInner {
    id: TensorId,
    name: String,
    dims: Vec<TiledIndexSpace>,
    predicate: Option<BlockPredicate>,
}

/// A tensor handle. Equality is identity equality; data access goes through an
/// execution context once the tensor is allocated there.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<TensorInner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("name", &self.inner.name)
            .field("order", &self.order())
            .finish()
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.inner.id == other.inner.id
    }
}
impl Eq for Tensor {}

impl std::hash::Hash for Tensor {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.inner.id.hash(state);
    }
}

impl Tensor {
    /// A dense tensor over the given tiled dimensions. An empty dimension list
    /// gives an order-0 scalar with a single block.
    pub fn new<D>(dims: D) -> Tensor
    where
        D: Into<Vec<TiledIndexSpace>>,
    {
        Self::build(None, dims.into(), None)
    }

    pub fn named<D>(name: &str, dims: D) -> Tensor
    where
        D: Into<Vec<TiledIndexSpace>>,
    {
        Self::build(Some(name.to_string()), dims.into(), None)
    }

    /// A block-sparse tensor: only blocks where `predicate` holds may carry
    /// nonzero data.
    pub fn with_predicate<D>(name: &str, dims: D, predicate: BlockPredicate) -> Tensor
    where
        D: Into<Vec<TiledIndexSpace>>,
    {
        Self::build(Some(name.to_string()), dims.into(), Some(predicate))
    }

    /// A block-sparse tensor keeping only blocks whose total spin over the
    /// first half of the dimensions equals the total over the second half.
    pub fn spin_conserving<D>(name: &str, dims: D) -> Result<Tensor>
    where
        D: Into<Vec<TiledIndexSpace>>,
    {
        let dims: Vec<TiledIndexSpace> = dims.into();
        if dims.len() % 2 != 0 {
            return Err(Error::OddSpinOrder { order: dims.len() });
        }
        let mut tile_spins = Vec::with_capacity(dims.len());
        for (d, dim) in dims.iter().enumerate() {
            let spins: Option<Vec<i32>> = dim.tiles().iter().map(|t| t.spin.map(Spin::value)).collect();
            match spins {
                Some(s) => tile_spins.push(s),
                None => return Err(Error::MissingSpin { dim: d }),
            }
        }
        let half = dims.len() / 2;
        let predicate: BlockPredicate = Arc::new(move |b: &BlockId| {
            let upper: i32 = (0..half).map(|d| tile_spins[d][b.0[d]]).sum();
            let lower: i32 = (half..tile_spins.len())
                .map(|d| tile_spins[d][b.0[d]])
                .sum();
            upper == lower
        });
        Ok(Self::build(
            Some(name.to_string()),
            dims,
            Some(predicate),
        ))
    }

    fn build(name: Option<String>, dims: Vec<TiledIndexSpace>, predicate: Option<BlockPredicate>) -> Tensor {
        let id = NEXT_TENSOR_ID.fetch_add(1, Ordering::Relaxed);
        let name = name.unwrap_or_else(|| format!("t{id}"));
        Tensor {
            inner: Arc::new(TensorInner {
                id,
                name,
                dims,
                predicate,
            }),
        }
    }

    pub fn id(&self) -> TensorId {
        self.inner.id
    }

    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn order(&self) -> usize {
        self.inner.dims.len()
    }

    pub fn dims(&self) -> &[TiledIndexSpace] {
        &self.inner.dims
    }

    pub fn has_predicate(&self) -> bool {
        self.inner.predicate.is_some()
    }

    /// Tile counts per dimension.
    pub fn block_grid(&self) -> Vec<usize> {
        self.inner.dims.iter().map(|d| d.num_tiles()).collect()
    }

    pub fn num_blocks(&self) -> usize {
        self.block_grid().iter().product()
    }

    pub fn total_elements(&self) -> usize {
        self.inner.dims.iter().map(|d| d.extent()).product()
    }

    pub fn nonzero_elements(&self) -> usize {
        self.iter_blocks()
            .filter(|b| self.is_nonzero_unchecked(b))
            .map(|b| self.block_volume_unchecked(&b))
            .sum()
    }

    fn check_block(&self, b: &BlockId) -> Result<()> {
        let grid = self.block_grid();
        if b.0.len() != grid.len() || b.0.iter().zip(&grid).any(|(&o, &n)| o >= n) {
            return Err(Error::BlockOutOfRange {
                tensor: self.inner.name.clone(),
                block: b.0.clone(),
            });
        }
        Ok(())
    }

    /// Whether a block may hold nonzero data; always true without a predicate.
    pub fn is_nonzero(&self, b: &BlockId) -> Result<bool> {
        self.check_block(b)?;
        Ok(self.is_nonzero_unchecked(b))
    }

    pub(crate) fn is_nonzero_unchecked(&self, b: &BlockId) -> bool {
        match &self.inner.predicate {
            Some(p) => p(b),
            None => true,
        }
    }

    /// Per-dimension tile sizes of a block.
    pub fn block_extents(&self, b: &BlockId) -> Result<Vec<usize>> {
        self.check_block(b)?;
        Ok(self
            .inner
            .dims
            .iter()
            .zip(&b.0)
            .map(|(d, &o)| d.tile(o).extent)
            .collect())
    }

    pub fn block_volume(&self, b: &BlockId) -> Result<usize> {
        Ok(self.block_extents(b)?.iter().product())
    }

    pub(crate) fn block_volume_unchecked(&self, b: &BlockId) -> usize {
        self.inner
            .dims
            .iter()
            .zip(&b.0)
            .map(|(d, &o)| d.tile(o).extent)
            .product()
    }

    /// Volume of the largest block in the full grid.
    pub fn max_block_volume(&self) -> usize {
        self.inner
            .dims
            .iter()
            .map(|d| d.tiles().iter().map(|t| t.extent).max().unwrap_or(0))
            .product()
    }

    /// All block ids in row-major grid order.
    pub fn iter_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        RowMajor::new(self.block_grid()).map(BlockId)
    }

    pub fn iter_nonzero_blocks(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.iter_blocks().filter(|b| self.is_nonzero_unchecked(b))
    }

    /// A labeled view of the tensor; checks arity and label compatibility but
    /// touches no data.
    pub fn at(&self, labels: &[&TiledIndexLabel]) -> Result<LabeledTensor> {
        let labels: Vec<TiledIndexLabel> = labels.iter().map(|&l| l.clone()).collect();
        LabeledTensor::new(self.clone(), labels)
    }

    /// Labeled view of an order-0 tensor.
    pub fn scalar_view(&self) -> Result<LabeledTensor> {
        LabeledTensor::new(self.clone(), Vec::new())
    }
}

/// One dense block of a tensor: row-major contiguous values.
#[derive(Clone, Debug)]
pub struct DenseBlock {
    pub block_id: BlockId,
    pub extents: Vec<usize>,
    pub data: Vec<f64>,
}

impl DenseBlock {
    pub fn zeros(block_id: BlockId, extents: Vec<usize>) -> DenseBlock {
        let len = extents.iter().product();
        DenseBlock {
            block_id,
            extents,
            data: vec![0.0; len],
        }
    }

    pub fn volume(&self) -> usize {
        self.extents.iter().product()
    }

    /// Row-major offset of a within-block coordinate tuple.
    pub fn offset(&self, coords: &[usize]) -> usize {
        let mut off = 0;
        for (c, e) in coords.iter().zip(&self.extents) {
            off = off * e + c;
        }
        off
    }
}

/// A tensor together with one label per dimension; the unit the operation
/// grammar is built from.
#[derive(Clone)]
pub struct LabeledTensor {
    tensor: Tensor,
    labels: Vec<TiledIndexLabel>,
}

impl fmt::Debug for LabeledTensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.display())
    }
}

impl LabeledTensor {
    pub fn new(tensor: Tensor, labels: Vec<TiledIndexLabel>) -> Result<LabeledTensor> {
        if labels.len() != tensor.order() {
            return Err(Error::LabelArity {
                tensor: tensor.name().to_string(),
                dims: tensor.order(),
                labels: labels.len(),
            });
        }
        for (d, (label, dim)) in labels.iter().zip(tensor.dims()).enumerate() {
            if !label.is_sub_label_of(dim) {
                return Err(Error::IncompatibleLabel {
                    tensor: tensor.name().to_string(),
                    label: label.name().to_string(),
                    dim: d,
                });
            }
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[i + 1..].contains(a) {
                return Err(Error::RepeatedLabel {
                    tensor: tensor.name().to_string(),
                    label: a.name().to_string(),
                });
            }
        }
        Ok(LabeledTensor { tensor, labels })
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    pub fn labels(&self) -> &[TiledIndexLabel] {
        &self.labels
    }

    pub fn order(&self) -> usize {
        self.labels.len()
    }

    /// `name(l1,l2,...)` rendering used by schedules and dumps.
    pub fn display(&self) -> String {
        let names: Vec<&str> = self.labels.iter().map(|l| l.name()).collect();
        format!("{}({})", self.tensor.name(), names.join(","))
    }

    /// For each axis, the tile ordinals of the underlying tensor dimension
    /// covered by this view's label (in label-space tile order).
    pub fn slice_ordinals(&self) -> Vec<Vec<usize>> {
        self.labels
            .iter()
            .zip(self.tensor.dims())
            .map(|(label, dim)| {
                label
                    .space()
                    .root_ordinals()
                    .iter()
                    .map(|&r| {
                        dim.local_of_root(r)
                            .expect("sub-label tiles map into the dimension")
                    })
                    .collect()
            })
            .collect()
    }
}

/// Row-major odometer over a multi-dimensional grid. Yields one empty tuple
/// for an empty grid shape (the order-0 case).
pub(crate) struct RowMajor {
    shape: Vec<usize>,
    current: Vec<usize>,
    done: bool,
}

impl RowMajor {
    pub(crate) fn new(shape: Vec<usize>) -> RowMajor {
        let done = shape.iter().any(|&n| n == 0);
        RowMajor {
            current: vec![0; shape.len()],
            shape,
            done,
        }
    }
}

impl Iterator for RowMajor {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.current.clone();
        let mut d = self.shape.len();
        loop {
            if d == 0 {
                self.done = true;
                break;
            }
            d -= 1;
            self.current[d] += 1;
            if self.current[d] < self.shape[d] {
                break;
            }
            self.current[d] = 0;
        }
        Some(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index_space::{IndexSpace, Spin, TiledIndexSpace};

    fn fig_spaces() -> (TiledIndexSpace, TiledIndexSpace, TiledIndexSpace) {
        let n = IndexSpace::new(100).unwrap();
        let m = IndexSpace::new(30).unwrap();
        let k = IndexSpace::builder(20)
            .subspace("first", [0..10])
            .subspace("second", [10..20])
            .build()
            .unwrap();
        (
            TiledIndexSpace::fixed(&n, 10).unwrap(),
            TiledIndexSpace::custom(&m, &[10, 20]).unwrap(),
            TiledIndexSpace::fixed(&k, 5).unwrap(),
        )
    }

    #[test]
    fn block_grid_is_tile_product() {
        let (tn, tm, tk) = fig_spaces();
        let a = Tensor::named("A", [tm.clone(), tk.clone()]);
        assert_eq!(a.num_blocks(), 8);
        assert_eq!(a.total_elements(), 600);
        let b = Tensor::named("B", [tk, tn]);
        assert_eq!(b.num_blocks(), 40);
    }

    #[test]
    fn handle_equality_is_identity() {
        let (_, tm, tk) = fig_spaces();
        let a = Tensor::named("A", [tm.clone(), tk.clone()]);
        let copy = a.clone();
        let other = Tensor::named("A", [tm, tk]);
        assert_eq!(a, copy);
        assert_ne!(a, other);
    }

    #[test]
    fn block_extents_follow_tilings() {
        let (tn, tm, tk) = fig_spaces();
        let a = Tensor::named("A", [tm, tk]);
        assert_eq!(a.block_extents(&BlockId(vec![1, 0])).unwrap(), vec![20, 5]);
        assert_eq!(a.block_extents(&BlockId(vec![0, 3])).unwrap(), vec![10, 5]);
        let v = Tensor::named("v", [tn]);
        assert_eq!(v.block_extents(&BlockId(vec![9])).unwrap(), vec![10]);
        assert!(matches!(
            a.block_extents(&BlockId(vec![2, 0])),
            Err(Error::BlockOutOfRange { .. })
        ));
    }

    #[test]
    fn dense_default_is_all_nonzero() {
        let (_, tm, tk) = fig_spaces();
        let a = Tensor::new([tm, tk]);
        assert!(a.iter_blocks().all(|b| a.is_nonzero(&b).unwrap()));
    }

    fn spin_space(extent: usize) -> TiledIndexSpace {
        let half = extent / 2;
        let s = IndexSpace::builder(extent)
            .subspace("up", [0..half])
            .subspace("down", [half..extent])
            .spin(0..half, Spin::Alpha)
            .spin(half..extent, Spin::Beta)
            .build()
            .unwrap();
        TiledIndexSpace::fixed(&s, half).unwrap()
    }

    #[test]
    fn spin_conservation_keeps_diagonal_blocks() {
        let ts = spin_space(8);
        let t = Tensor::spin_conserving("S", [ts.clone(), ts]).unwrap();
        let nonzero: Vec<BlockId> = t.iter_nonzero_blocks().collect();
        assert_eq!(nonzero, vec![BlockId(vec![0, 0]), BlockId(vec![1, 1])]);
        assert_eq!(t.nonzero_elements(), 32);
        assert_eq!(t.total_elements(), 64);
    }

    #[test]
    fn spin_predicate_needs_even_order_and_spin() {
        let ts = spin_space(8);
        assert!(matches!(
            Tensor::spin_conserving("S", [ts]),
            Err(Error::OddSpinOrder { order: 1 })
        ));
        let plain = TiledIndexSpace::fixed(&IndexSpace::new(8).unwrap(), 4).unwrap();
        assert!(matches!(
            Tensor::spin_conserving("S", [plain.clone(), plain]),
            Err(Error::MissingSpin { dim: 0 })
        ));
    }

    #[test]
    fn labeled_views_check_spaces() {
        let (tn, tm, tk) = fig_spaces();
        let a = Tensor::named("A", [tm.clone(), tk.clone()]);
        let i = tm.label("i");
        let l = tk.label("l");
        let view = a.at(&[&i, &l]).unwrap();
        assert_eq!(view.display(), "A(i,l)");

        // wrong-space label
        let x = tk.subspace("first").unwrap().label("x");
        assert!(matches!(
            a.at(&[&x, &l]),
            Err(Error::IncompatibleLabel { dim: 0, .. })
        ));

        // sliced label on the right dimension is fine
        let sliced = a.at(&[&i, &x]).unwrap();
        assert_eq!(sliced.slice_ordinals(), vec![vec![0, 1], vec![0, 1]]);

        // arity
        assert!(matches!(a.at(&[&i]), Err(Error::LabelArity { .. })));

        // repeated label
        let c = Tensor::named("C", [tn.clone(), tn.clone()]);
        let p = tn.label("p");
        assert!(matches!(
            c.at(&[&p, &p]),
            Err(Error::RepeatedLabel { .. })
        ));
    }

    #[test]
    fn order_zero_scalar() {
        let e = Tensor::named("E", Vec::<TiledIndexSpace>::new());
        assert_eq!(e.num_blocks(), 1);
        assert_eq!(e.total_elements(), 1);
        let view = e.scalar_view().unwrap();
        assert_eq!(view.display(), "E()");
        let blocks: Vec<BlockId> = e.iter_blocks().collect();
        assert_eq!(blocks, vec![BlockId(vec![])]);
    }
}
