//! Index ranges with named subranges and spin attributes, tilings over them,
//! and the labels used to write Einstein-notation operations.
//!
//! An [`IndexSpace`] is a set of integer indices (contiguous for root spaces,
//! a union of disjoint ascending ranges for derived subspaces). A
//! [`TiledIndexSpace`] partitions a space into contiguous tiles; tensors store
//! one dense block per Cartesian tuple of tiles. A [`TiledIndexLabel`] binds a
//! name to a tiled space and is the unit of the operation syntax: equal labels
//! contract, sub-space labels slice.
//!
//! All three types are immutable after construction and compare by identity,
//! so they can be shared freely across threads.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

static NEXT_SPACE_ID: AtomicU64 = AtomicU64::new(0);
static NEXT_TILED_ID: AtomicU64 = AtomicU64::new(0);
static NEXT_LABEL_ID: AtomicU64 = AtomicU64::new(0);

fn fresh_id(counter: &AtomicU64) -> u64 {
    counter.fetch_add(1, Ordering::Relaxed)
}

/// Per-index spin attribute, assigned by subrange.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum Spin {
    Alpha,
    Beta,
}

impl Spin {
    /// Signed value used by spin-conservation predicates: alpha = +1, beta = -1.
    pub fn value(self) -> i32 {
        match self {
            Spin::Alpha => 1,
            Spin::Beta => -1,
        }
    }
}

struct SpaceInner {
    id: u64,
    /// Disjoint ascending global index ranges. Root spaces have exactly one.
    segments: Vec<Range<usize>>,
    extent: usize,
    named: BTreeMap<String, Vec<Range<usize>>>,
    /// Sorted, disjoint; either empty or covering every index exactly once.
    spin: Vec<(Range<usize>, Spin)>,
    #[allow(dead_code)]
    parent: Option<(IndexSpace, String)>,
}

/// A range of integer indices, optionally with named subranges and spin
/// attributes. Cheap to clone; clones share identity.
#[derive(Clone)]
pub struct IndexSpace {
    inner: Arc<SpaceInner>,
}

impl fmt::Debug for IndexSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IndexSpace")
            .field("id", &self.inner.id)
            .field("segments", &self.inner.segments)
            .finish()
    }
}

impl PartialEq for IndexSpace {
    fn eq(&self, other: &Self) -> bool {
        self.inner.id == other.inner.id
    }
}
impl Eq for IndexSpace {}

impl IndexSpace {
    /// A contiguous space of `extent` indices starting at 0.
    pub fn new(extent: usize) -> Result<Self> {
        Self::builder(extent).build()
    }

    pub fn builder(extent: usize) -> IndexSpaceBuilder {
        IndexSpaceBuilder {
            extent,
            offset: 0,
            named: BTreeMap::new(),
            spin: Vec::new(),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn extent(&self) -> usize {
        self.inner.extent
    }

    /// First global index of the space.
    pub fn offset(&self) -> usize {
        self.inner.segments[0].start
    }

    pub fn is_contiguous(&self) -> bool {
        self.inner.segments.len() == 1
    }

    pub fn segments(&self) -> &[Range<usize>] {
        &self.inner.segments
    }

    pub fn has_spin(&self) -> bool {
        !self.inner.spin.is_empty()
    }

    pub fn subspace_names(&self) -> impl Iterator<Item = &str> {
        self.inner.named.keys().map(|s| s.as_str())
    }

    pub fn subspace_ranges(&self, name: &str) -> Result<&[Range<usize>]> {
        self.inner
            .named
            .get(name)
            .map(|v| v.as_slice())
            .ok_or_else(|| Error::UnknownSubspace { name: name.into() })
    }

    /// The derived space covering exactly the subranges registered under `name`.
    pub fn subspace(&self, name: &str) -> Result<IndexSpace> {
        let ranges = self.subspace_ranges(name)?.to_vec();
        let extent = ranges.iter().map(|r| r.len()).sum();
        let spin = if self.inner.spin.is_empty() {
            Vec::new()
        } else {
            let mut clipped = Vec::new();
            for seg in &ranges {
                for (sr, sp) in &self.inner.spin {
                    let lo = seg.start.max(sr.start);
                    let hi = seg.end.min(sr.end);
                    if lo < hi {
                        clipped.push((lo..hi, *sp));
                    }
                }
            }
            clipped.sort_by_key(|(r, _)| r.start);
            clipped
        };
        Ok(IndexSpace {
            inner: Arc::new(SpaceInner {
                id: fresh_id(&NEXT_SPACE_ID),
                segments: ranges,
                extent,
                named: BTreeMap::new(),
                spin,
                parent: Some((self.clone(), name.to_string())),
            }),
        })
    }

    pub fn contains_global(&self, g: usize) -> bool {
        self.inner.segments.iter().any(|r| r.contains(&g))
    }

    /// Position of global index `g` within this space (0-based, in segment order).
    pub fn position_of(&self, g: usize) -> Option<usize> {
        let mut pos = 0;
        for seg in &self.inner.segments {
            if seg.contains(&g) {
                return Some(pos + (g - seg.start));
            }
            pos += seg.len();
        }
        None
    }

    /// Global index at position `pos`.
    pub fn global_at(&self, pos: usize) -> usize {
        let mut rem = pos;
        for seg in &self.inner.segments {
            if rem < seg.len() {
                return seg.start + rem;
            }
            rem -= seg.len();
        }
        panic!("position {pos} out of bounds for extent {}", self.inner.extent);
    }

    pub fn spin_of(&self, g: usize) -> Option<Spin> {
        self.inner
            .spin
            .iter()
            .find(|(r, _)| r.contains(&g))
            .map(|(_, s)| *s)
    }

    /// Single spin value covering `range`, if the range does not straddle a
    /// spin boundary. `Ok(None)` when the space carries no spin attributes.
    fn range_spin(&self, range: &Range<usize>) -> Result<Option<Spin>> {
        if self.inner.spin.is_empty() {
            return Ok(None);
        }
        for (sr, sp) in &self.inner.spin {
            if sr.start <= range.start && range.end <= sr.end {
                return Ok(Some(*sp));
            }
        }
        Err(Error::TileStraddlesSpin {
            start: range.start,
            end: range.end,
        })
    }
}

/// Builder for [`IndexSpace`]; validates subranges and spin cover.
pub struct IndexSpaceBuilder {
    extent: usize,
    offset: usize,
    named: BTreeMap<String, Vec<Range<usize>>>,
    spin: Vec<(Range<usize>, Spin)>,
}

impl IndexSpaceBuilder {
    pub fn offset(mut self, offset: usize) -> Self {
        self.offset = offset;
        self
    }

    /// Register disjoint subranges (global indices) under `name`.
    pub fn subspace<I>(mut self, name: &str, ranges: I) -> Self
    where
        I: IntoIterator<Item = Range<usize>>,
    {
        self.named
            .insert(name.to_string(), ranges.into_iter().collect());
        self
    }

    /// Assign `spin` to every index in `range`.
    pub fn spin(mut self, range: Range<usize>, spin: Spin) -> Self {
        self.spin.push((range, spin));
        self
    }

    pub fn build(self) -> Result<IndexSpace> {
        if self.extent == 0 {
            return Err(Error::EmptySpace);
        }
        let lo = self.offset;
        let hi = self.offset + self.extent;
        let mut named = BTreeMap::new();
        for (name, mut ranges) in self.named {
            ranges.sort_by_key(|r| r.start);
            let mut prev_end = None;
            for r in &ranges {
                if r.start >= r.end || prev_end.is_some_and(|e| r.start < e) {
                    return Err(Error::BadSubranges { name });
                }
                if r.start < lo || r.end > hi {
                    return Err(Error::SubrangeOutOfBounds {
                        name,
                        start: r.start,
                        end: r.end,
                        lo,
                        hi,
                    });
                }
                prev_end = Some(r.end);
            }
            named.insert(name, ranges);
        }
        let mut spin = self.spin;
        if !spin.is_empty() {
            spin.sort_by_key(|(r, _)| r.start);
            let mut cursor = lo;
            for (r, _) in &spin {
                if r.start != cursor || r.end > hi || r.start >= r.end {
                    return Err(Error::IncompleteSpinCover);
                }
                cursor = r.end;
            }
            if cursor != hi {
                return Err(Error::IncompleteSpinCover);
            }
        }
        Ok(IndexSpace {
            inner: Arc::new(SpaceInner {
                id: fresh_id(&NEXT_SPACE_ID),
                segments: vec![lo..hi],
                extent: self.extent,
                named,
                spin,
                parent: None,
            }),
        })
    }
}

/// One contiguous tile of a tiled index space.
#[derive(Clone, Debug, Serialize)]
pub struct Tile {
    pub start: usize,
    pub extent: usize,
    pub spin: Option<Spin>,
}

impl Tile {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.extent
    }
}

struct TiledInner {
    id: u64,
    space: IndexSpace,
    tiles: Vec<Tile>,
    /// Tile ordinals relative to the root tiled space; `0..n` for a root.
    root_ordinals: Vec<usize>,
    parent: Option<(TiledIndexSpace, String)>,
}

/// An index space partitioned into tiles. Derived (named) sub-spaces keep the
/// parent's tile boundaries so that sliced operations address parent blocks
/// directly.
#[derive(Clone)]
pub struct TiledIndexSpace {
    inner: Arc<TiledInner>,
}

impl fmt::Debug for TiledIndexSpace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TiledIndexSpace")
            .field("id", &self.inner.id)
            .field("tiles", &self.inner.tiles.len())
            .field("extent", &self.extent())
            .finish()
    }
}

impl PartialEq for TiledIndexSpace {
    fn eq(&self, other: &Self) -> bool {
        self.inner.id == other.inner.id
    }
}
impl Eq for TiledIndexSpace {}

impl std::hash::Hash for TiledIndexSpace {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.inner.id.hash(state);
    }
}

impl TiledIndexSpace {
    /// Tiles of `tile_size`; the last tile holds the remainder.
    pub fn fixed(space: &IndexSpace, tile_size: usize) -> Result<Self> {
        if tile_size == 0 {
            return Err(Error::InvalidTileSize);
        }
        if !space.is_contiguous() {
            return Err(Error::NonContiguousSpace);
        }
        let lo = space.offset();
        let hi = lo + space.extent();
        let mut sizes = Vec::new();
        let mut cursor = lo;
        while cursor < hi {
            let len = tile_size.min(hi - cursor);
            sizes.push(len);
            cursor += len;
        }
        Self::from_sizes(space, &sizes)
    }

    /// Tile boundaries at the cumulative sums of `sizes`, which must cover the
    /// space exactly.
    pub fn custom(space: &IndexSpace, sizes: &[usize]) -> Result<Self> {
        if sizes.iter().any(|&s| s == 0) {
            return Err(Error::InvalidTileSize);
        }
        let total: usize = sizes.iter().sum();
        if total != space.extent() {
            return Err(Error::TileCoverage {
                expected: space.extent(),
                got: total,
            });
        }
        if !space.is_contiguous() {
            return Err(Error::NonContiguousSpace);
        }
        Self::from_sizes(space, sizes)
    }

    fn from_sizes(space: &IndexSpace, sizes: &[usize]) -> Result<Self> {
        let mut tiles = Vec::with_capacity(sizes.len());
        let mut cursor = space.offset();
        for &len in sizes {
            let range = cursor..cursor + len;
            let spin = space.range_spin(&range)?;
            tiles.push(Tile {
                start: cursor,
                extent: len,
                spin,
            });
            cursor += len;
        }
        let n = tiles.len();
        Ok(TiledIndexSpace {
            inner: Arc::new(TiledInner {
                id: fresh_id(&NEXT_TILED_ID),
                space: space.clone(),
                tiles,
                root_ordinals: (0..n).collect(),
                parent: None,
            }),
        })
    }

    /// The sub-tiled space holding exactly the tiles that lie inside the named
    /// subranges of the underlying index space. A tile that partially overlaps
    /// the subspace is an error: sub-tiles must address parent blocks exactly.
    pub fn subspace(&self, name: &str) -> Result<TiledIndexSpace> {
        let ranges = self.inner.space.subspace_ranges(name)?.to_vec();
        let inside = |t: &Tile| {
            ranges
                .iter()
                .any(|r| r.start <= t.start && t.start + t.extent <= r.end)
        };
        let overlaps = |t: &Tile| {
            ranges
                .iter()
                .any(|r| t.start < r.end && r.start < t.start + t.extent)
        };
        let mut tiles = Vec::new();
        let mut root_ordinals = Vec::new();
        for (k, t) in self.inner.tiles.iter().enumerate() {
            if inside(t) {
                tiles.push(t.clone());
                root_ordinals.push(self.inner.root_ordinals[k]);
            } else if overlaps(t) {
                return Err(Error::TileStraddlesSubspace {
                    name: name.to_string(),
                    start: t.start,
                    end: t.start + t.extent,
                });
            }
        }
        let space = self.inner.space.subspace(name)?;
        Ok(TiledIndexSpace {
            inner: Arc::new(TiledInner {
                id: fresh_id(&NEXT_TILED_ID),
                space,
                tiles,
                root_ordinals,
                parent: Some((self.clone(), name.to_string())),
            }),
        })
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn space(&self) -> &IndexSpace {
        &self.inner.space
    }

    pub fn extent(&self) -> usize {
        self.inner.space.extent()
    }

    pub fn num_tiles(&self) -> usize {
        self.inner.tiles.len()
    }

    pub fn tile(&self, ordinal: usize) -> &Tile {
        &self.inner.tiles[ordinal]
    }

    pub fn tiles(&self) -> &[Tile] {
        &self.inner.tiles
    }

    pub fn tile_sizes(&self) -> Vec<usize> {
        self.inner.tiles.iter().map(|t| t.extent).collect()
    }

    /// Ordinal of tile `ordinal` within the root tiled space.
    pub fn root_ordinal(&self, ordinal: usize) -> usize {
        self.inner.root_ordinals[ordinal]
    }

    pub fn root_ordinals(&self) -> &[usize] {
        &self.inner.root_ordinals
    }

    /// Local ordinal of the tile whose root ordinal is `root_ord`, if present.
    pub fn local_of_root(&self, root_ord: usize) -> Option<usize> {
        self.inner.root_ordinals.binary_search(&root_ord).ok()
    }

    /// The root of the derivation chain (`self` if underived).
    pub fn root(&self) -> TiledIndexSpace {
        let mut cur = self.clone();
        while let Some((p, _)) = cur.inner.parent.clone() {
            cur = p;
        }
        cur
    }

    /// True when `self` equals `other` or was derived from it through named
    /// subspaces (transitively).
    pub fn is_derived_from(&self, other: &TiledIndexSpace) -> bool {
        let mut cur = self.clone();
        loop {
            if cur.inner.id == other.inner.id {
                return true;
            }
            match cur.inner.parent.clone() {
                Some((p, _)) => cur = p,
                None => return false,
            }
        }
    }

    /// `n` distinct labels bound to this space, auto-named.
    pub fn labels(&self, n: usize) -> Vec<TiledIndexLabel> {
        (0..n).map(|_| self.label_auto()).collect()
    }

    /// Distinct labels with the given display names.
    pub fn labels_named(&self, names: &[&str]) -> Vec<TiledIndexLabel> {
        names.iter().map(|name| self.label(name)).collect()
    }

    /// One label with a display name.
    pub fn label(&self, name: &str) -> TiledIndexLabel {
        TiledIndexLabel {
            space: self.clone(),
            id: fresh_id(&NEXT_LABEL_ID),
            name: Arc::from(name),
        }
    }

    fn label_auto(&self) -> TiledIndexLabel {
        let id = fresh_id(&NEXT_LABEL_ID);
        TiledIndexLabel {
            space: self.clone(),
            id,
            name: Arc::from(format!("x{id}").as_str()),
        }
    }
}

/// A named handle to a tiled index space, used to spell out operations.
/// Two labels are equal only if they come from the same space identity and
/// the same construction call.
#[derive(Clone)]
pub struct TiledIndexLabel {
    space: TiledIndexSpace,
    id: u64,
    name: Arc<str>,
}

impl PartialEq for TiledIndexLabel {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id && self.space.id() == other.space.id()
    }
}
impl Eq for TiledIndexLabel {}

impl std::hash::Hash for TiledIndexLabel {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.space.id().hash(state);
        self.id.hash(state);
    }
}

impl fmt::Debug for TiledIndexLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

impl fmt::Display for TiledIndexLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.name)
    }
}

impl TiledIndexLabel {
    pub fn space(&self) -> &TiledIndexSpace {
        &self.space
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// True when the label's space equals `tis` or was derived from it.
    pub fn is_sub_label_of(&self, tis: &TiledIndexSpace) -> bool {
        self.space.is_derived_from(tis)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn space_k() -> IndexSpace {
        IndexSpace::builder(20)
            .subspace("first", [0..10])
            .subspace("second", [10..20])
            .build()
            .unwrap()
    }

    #[test]
    fn plain_space() {
        let n = IndexSpace::new(100).unwrap();
        assert_eq!(n.extent(), 100);
        assert_eq!(n.offset(), 0);
        assert!(n.is_contiguous());
    }

    #[test]
    fn singleton_space() {
        let s = IndexSpace::new(1).unwrap();
        assert_eq!(s.extent(), 1);
    }

    #[test]
    fn zero_extent_rejected() {
        assert!(matches!(IndexSpace::new(0), Err(Error::EmptySpace)));
    }

    #[test]
    fn named_subspaces_resolve() {
        let k = space_k();
        assert_eq!(k.subspace_ranges("first").unwrap(), &[0..10]);
        assert_eq!(k.subspace_ranges("second").unwrap(), &[10..20]);
        let first = k.subspace("first").unwrap();
        assert_eq!(first.extent(), 10);
        assert_eq!(first.offset(), 0);
        let second = k.subspace("second").unwrap();
        assert_eq!(second.extent(), 10);
        assert_eq!(second.offset(), 10);
    }

    #[test]
    fn subspace_covering_full_range() {
        let k = IndexSpace::builder(20)
            .subspace("all", [0..20])
            .build()
            .unwrap();
        let all = k.subspace("all").unwrap();
        assert_eq!(all.extent(), k.extent());
        assert_eq!(all.offset(), k.offset());
        assert_ne!(all, k);
    }

    #[test]
    fn unknown_subspace_errors() {
        let k = space_k();
        assert!(matches!(
            k.subspace("third"),
            Err(Error::UnknownSubspace { .. })
        ));
    }

    #[test]
    fn out_of_bounds_subrange_rejected() {
        let err = IndexSpace::builder(10).subspace("bad", [5..12]).build();
        assert!(matches!(err, Err(Error::SubrangeOutOfBounds { .. })));
    }

    #[test]
    fn overlapping_subranges_rejected() {
        let err = IndexSpace::builder(10)
            .subspace("bad", [0..6, 4..10])
            .build();
        assert!(matches!(err, Err(Error::BadSubranges { .. })));
    }

    #[test]
    fn spin_cover_must_be_total() {
        let err = IndexSpace::builder(10).spin(0..5, Spin::Alpha).build();
        assert!(matches!(err, Err(Error::IncompleteSpinCover)));
        let ok = IndexSpace::builder(10)
            .spin(0..5, Spin::Alpha)
            .spin(5..10, Spin::Beta)
            .build()
            .unwrap();
        assert_eq!(ok.spin_of(3), Some(Spin::Alpha));
        assert_eq!(ok.spin_of(7), Some(Spin::Beta));
    }

    #[test]
    fn fixed_tiling_counts() {
        let n = IndexSpace::new(100).unwrap();
        let tn = TiledIndexSpace::fixed(&n, 10).unwrap();
        assert_eq!(tn.num_tiles(), 10);
        assert!(tn.tiles().iter().all(|t| t.extent == 10));

        let k = space_k();
        let tk = TiledIndexSpace::fixed(&k, 5).unwrap();
        assert_eq!(tk.num_tiles(), 4);
        assert!(tk.tiles().iter().all(|t| t.extent == 5));
    }

    #[test]
    fn fixed_tiling_remainder_in_last_tile() {
        let s = IndexSpace::new(7).unwrap();
        let t = TiledIndexSpace::fixed(&s, 3).unwrap();
        assert_eq!(t.tile_sizes(), vec![3, 3, 1]);
    }

    #[test]
    fn custom_tiling() {
        let m = IndexSpace::new(30).unwrap();
        let tm = TiledIndexSpace::custom(&m, &[10, 20]).unwrap();
        assert_eq!(tm.num_tiles(), 2);
        assert_eq!(tm.tile(1).range(), 10..30);

        let s = IndexSpace::new(20).unwrap();
        let whole = TiledIndexSpace::custom(&s, &[20]).unwrap();
        assert_eq!(whole.num_tiles(), 1);

        assert!(matches!(
            TiledIndexSpace::custom(&s, &[10, 5]),
            Err(Error::TileCoverage {
                expected: 20,
                got: 15
            })
        ));
    }

    #[test]
    fn zero_tile_size_rejected() {
        let s = IndexSpace::new(10).unwrap();
        assert!(matches!(
            TiledIndexSpace::fixed(&s, 0),
            Err(Error::InvalidTileSize)
        ));
        assert!(matches!(
            TiledIndexSpace::custom(&s, &[10, 0]),
            Err(Error::InvalidTileSize)
        ));
    }

    #[test]
    fn spin_boundary_must_align_with_tiles() {
        let s = IndexSpace::builder(8)
            .spin(0..4, Spin::Alpha)
            .spin(4..8, Spin::Beta)
            .build()
            .unwrap();
        let ok = TiledIndexSpace::fixed(&s, 4).unwrap();
        assert_eq!(ok.tile(0).spin, Some(Spin::Alpha));
        assert_eq!(ok.tile(1).spin, Some(Spin::Beta));
        assert!(matches!(
            TiledIndexSpace::fixed(&s, 3),
            Err(Error::TileStraddlesSpin { .. })
        ));
    }

    #[test]
    fn tiled_subspace_keeps_parent_tiles() {
        let k = space_k();
        let tk = TiledIndexSpace::fixed(&k, 5).unwrap();
        let first = tk.subspace("first").unwrap();
        assert_eq!(first.num_tiles(), 2);
        assert_eq!(first.root_ordinals(), &[0, 1]);
        assert_eq!(first.extent(), 10);
        // every sub tile is exactly one parent tile
        for (local, tile) in first.tiles().iter().enumerate() {
            let parent_tile = tk.tile(first.root_ordinal(local));
            assert_eq!(tile.range(), parent_tile.range());
        }
    }

    #[test]
    fn tiled_subspace_rejects_straddling_tiles() {
        let k = space_k();
        let tk = TiledIndexSpace::custom(&k, &[8, 12]).unwrap();
        assert!(matches!(
            tk.subspace("first"),
            Err(Error::TileStraddlesSubspace { .. })
        ));
    }

    #[test]
    fn labels_are_distinct() {
        let n = IndexSpace::new(100).unwrap();
        let tn = TiledIndexSpace::fixed(&n, 10).unwrap();
        let ls = tn.labels(3);
        assert_eq!(ls.len(), 3);
        assert_ne!(ls[0], ls[1]);
        assert_ne!(ls[1], ls[2]);
        let one = tn.labels(1);
        let two = tn.labels(1);
        assert_ne!(one[0], two[0]);
    }

    #[test]
    fn sub_label_relation() {
        let k = space_k();
        let tk = TiledIndexSpace::fixed(&k, 5).unwrap();
        let first = tk.subspace("first").unwrap();
        let l_first = first.label("x");
        let l_full = tk.label("l");
        assert!(l_first.is_sub_label_of(&tk));
        assert!(l_full.is_sub_label_of(&tk));
        assert!(!l_full.is_sub_label_of(&first));

        let n = IndexSpace::new(100).unwrap();
        let tn = TiledIndexSpace::fixed(&n, 10).unwrap();
        let m = IndexSpace::new(30).unwrap();
        let tm = TiledIndexSpace::custom(&m, &[10, 20]).unwrap();
        assert!(!tn.label("a").is_sub_label_of(&tm));
    }

    #[test]
    fn positions_round_trip() {
        let k = space_k();
        let second = k.subspace("second").unwrap();
        assert_eq!(second.position_of(10), Some(0));
        assert_eq!(second.position_of(19), Some(9));
        assert_eq!(second.global_at(9), 19);
        assert_eq!(second.position_of(5), None);
    }

    proptest! {
        /// Concatenating the tile ranges of any tiling reproduces the parent range.
        #[test]
        fn tiling_covers_space(extent in 1usize..200, tile in 1usize..40) {
            let s = IndexSpace::new(extent).unwrap();
            let t = TiledIndexSpace::fixed(&s, tile).unwrap();
            let mut covered = Vec::new();
            for tl in t.tiles() {
                covered.extend(tl.range());
            }
            prop_assert_eq!(covered, (0..extent).collect::<Vec<_>>());
        }

        /// Sub-space tiles each sit inside exactly one parent tile.
        #[test]
        fn subspace_tiles_nest(half in 1usize..20, tiles_per_half in 1usize..4) {
            let extent = 2 * half;
            let s = IndexSpace::builder(extent)
                .subspace("lo", [0..half])
                .subspace("hi", [half..extent])
                .build().unwrap();
            // tile each half separately so boundaries align
            let mut sizes = Vec::new();
            for _ in 0..2 {
                let base = half / tiles_per_half;
                let mut left = half;
                while left > 0 {
                    let take = if base == 0 { left } else { base.min(left) };
                    sizes.push(take.max(1).min(left));
                    left -= take.max(1).min(left);
                }
            }
            let t = TiledIndexSpace::custom(&s, &sizes).unwrap();
            for name in ["lo", "hi"] {
                let sub = t.subspace(name).unwrap();
                for (local, tl) in sub.tiles().iter().enumerate() {
                    let parent = t.tile(sub.root_ordinal(local));
                    prop_assert_eq!(tl.range(), parent.range());
                }
            }
        }
    }
}
