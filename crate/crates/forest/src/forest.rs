//! The distributed mesh: per-rank sorted leaf arrays across trees, adaptation
//! with marking precedence, and space-filling-curve repartitioning with
//! family preservation.
//!
//! All ranks' leaves live in one `Forest` value, but collective operations
//! only let each rank read its own slice plus whatever arrives through the
//! transport, so the protocols stay honest to the distributed model.

use crate::connectivity::Connectivity;
use crate::ghost::{self, GhostLayer};
use crate::quadrant::{is_family, max_level, num_children, Quadrant};
use crate::transport::World;
use std::cmp::Ordering;
use std::sync::Arc;

/// One leaf element: a quadrant within a tree, with its cached Morton
/// position for cheap comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Leaf<const D: usize> {
    pub tree: u32,
    pub quad: Quadrant<D>,
    pos: u128,
}

impl<const D: usize> Leaf<D> {
    pub fn new(tree: u32, quad: Quadrant<D>) -> Self {
        Leaf {
            tree,
            quad,
            pos: quad.position(),
        }
    }

    /// Cached Morton position of the quadrant anchor.
    #[inline]
    pub fn pos(&self) -> u128 {
        self.pos
    }

    /// Global comparison key: tree-major, then Morton position, then level.
    #[inline]
    pub fn key(&self) -> (u32, u128, u8) {
        (self.tree, self.pos, self.quad.level)
    }

    pub fn global_cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Per-leaf adaptation flags in `{-1, 0, +1}`: coarsen, keep, refine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Marking {
    pub ranks: Vec<Vec<i8>>,
}

impl Marking {
    pub fn zeros<const D: usize>(forest: &Forest<D>) -> Self {
        Marking {
            ranks: forest.ranks.iter().map(|r| vec![0; r.len()]).collect(),
        }
    }

    pub fn uniform<const D: usize>(forest: &Forest<D>, m: i8) -> Self {
        Marking {
            ranks: forest.ranks.iter().map(|r| vec![m; r.len()]).collect(),
        }
    }

    fn check_aligned<const D: usize>(&self, forest: &Forest<D>) -> Result<(), AdaptError> {
        if self.ranks.len() != forest.ranks.len()
            || self
                .ranks
                .iter()
                .zip(forest.ranks.iter())
                .any(|(m, l)| m.len() != l.len())
            || self
                .ranks
                .iter()
                .any(|m| m.iter().any(|&v| !(-1..=1).contains(&v)))
        {
            return Err(AdaptError::MisalignedMarking);
        }
        Ok(())
    }
}

/// Structured diagnostics from [`Forest::validate`].
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ForestIssue {
    #[error("rank {rank} leaf {index}: invalid quadrant")]
    InvalidLeaf { rank: usize, index: usize },
    #[error("rank {rank} leaf {index}: tree out of range")]
    TreeOutOfRange { rank: usize, index: usize },
    #[error("rank {rank} leaf {index}: unsorted or overlapping with its successor")]
    UnsortedOrOverlapping { rank: usize, index: usize },
    #[error("rank {rank}: first leaf not after the previous rank's last leaf")]
    RankOrder { rank: usize },
    #[error("rank {rank}: partition offset does not match the leaf count")]
    OffsetMismatch { rank: usize },
    #[error("rank {rank}: partition marker does not match the first leaf")]
    MarkerMismatch { rank: usize },
}

/// Errors from [`adapt`].
#[derive(Debug, Clone, thiserror::Error)]
pub enum AdaptError {
    #[error("marking is not index-aligned with the forest or has values outside -1..=1")]
    MisalignedMarking,
    #[error("refinement of rank {rank} leaf {index} would exceed the maximum level")]
    LevelOverflow { rank: usize, index: usize },
    #[error(
        "marking would break 2:1 balance at {0} face pair(s), e.g. {1}; run balanced marking first"
    )]
    WouldUnbalance(usize, String),
    #[error("ghost layer is stale (forest has changed since it was built)")]
    StaleGhost,
    #[error("ghost exchange failed: {0}")]
    Ghost(#[from] ghost::GhostError),
}

/// Callback handle invoked by [`adapt`] with parent/children pairs, so
/// attached per-leaf data can be transferred. Indices refer to positions in
/// the rank-local leaf array before (`old`) and after (`new`) adaptation;
/// children occupy `2^d` consecutive slots in Morton order.
pub trait AdaptData<const D: usize> {
    fn kept(&mut self, _old: usize, _new: usize, _leaf: &Leaf<D>) {}
    fn refined(&mut self, _old: usize, _new_first: usize, _parent: &Leaf<D>) {}
    fn coarsened(&mut self, _old_first: usize, _new: usize, _parent: &Leaf<D>) {}
}

/// No-op adaptation callback.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoData;
impl<const D: usize> AdaptData<D> for NoData {}

/// One entry of a migration record: `count` leaves moved from rank `src` to
/// rank `dst` (self-to-self retention is not listed).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Migration {
    pub src: usize,
    pub dst: usize,
    pub count: u64,
}

/// The distributed mesh over a fixed connectivity.
#[derive(Debug, Clone)]
pub struct Forest<const D: usize> {
    pub(crate) conn: Arc<Connectivity<D>>,
    pub(crate) ranks: Vec<Vec<Leaf<D>>>,
    /// `offsets[p]` is the global index of rank p's first leaf; `offsets[P]`
    /// the global leaf count.
    pub(crate) offsets: Vec<u64>,
    /// `markers[p]` is the (tree, position) key of the first leaf owned by
    /// rank p or any later rank; `markers[P]` is a sentinel beyond all trees.
    pub(crate) markers: Vec<(u32, u128)>,
    /// Bumped on every mutation; ghost layers are stamped against it.
    pub(crate) version: u64,
}

impl<const D: usize> Forest<D> {
    /// Every tree refined uniformly to `level`, partitioned over `ranks`
    /// following the optimal cut formula.
    pub fn new_uniform(conn: Arc<Connectivity<D>>, level: u8, ranks: usize) -> Self {
        assert!(level <= max_level(D));
        assert!(ranks > 0);
        let per_tree = 1u64 << (D as u32 * level as u32);
        let total = conn.num_trees() as u64 * per_tree;
        let offsets = eq1_offsets(total, ranks);
        let mut rank_leaves = Vec::with_capacity(ranks);
        for p in 0..ranks {
            let mut leaves = Vec::with_capacity((offsets[p + 1] - offsets[p]) as usize);
            for g in offsets[p]..offsets[p + 1] {
                let tree = (g / per_tree) as u32;
                let idx = g % per_tree;
                leaves.push(Leaf::new(tree, Quadrant::from_morton_index(level, idx)));
            }
            rank_leaves.push(leaves);
        }
        let mut forest = Forest {
            conn,
            ranks: rank_leaves,
            offsets,
            markers: Vec::new(),
            version: 0,
        };
        forest.rebuild_markers_local();
        forest
    }

    pub fn connectivity(&self) -> &Arc<Connectivity<D>> {
        &self.conn
    }

    pub fn num_ranks(&self) -> usize {
        self.ranks.len()
    }

    pub fn num_global(&self) -> u64 {
        *self.offsets.last().unwrap()
    }

    pub fn rank_leaves(&self, p: usize) -> &[Leaf<D>] {
        &self.ranks[p]
    }

    pub fn offsets(&self) -> &[u64] {
        &self.offsets
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Global leaf index of a rank-local leaf.
    pub fn global_index(&self, rank: usize, index: usize) -> u64 {
        self.offsets[rank] + index as u64
    }

    /// All leaves in global order (gathered view for tests and output).
    pub fn global_leaf_vec(&self) -> Vec<Leaf<D>> {
        let mut out = Vec::with_capacity(self.num_global() as usize);
        for r in &self.ranks {
            out.extend_from_slice(r);
        }
        out
    }

    /// The rank owning the leaf that covers the given (tree, position) point.
    pub fn owner_of_point(&self, tree: u32, pos: u128) -> usize {
        let key = (tree, pos);
        // Last p with markers[p] <= key.
        let mut lo = 0usize;
        let mut hi = self.num_ranks();
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if mid == 0 || self.markers[mid] <= key {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo.min(self.num_ranks() - 1)
    }

    /// Check all structural invariants, returning every violation found.
    pub fn validate(&self) -> Result<(), Vec<ForestIssue>> {
        let mut issues = Vec::new();
        let num_trees = self.conn.num_trees() as u32;
        let mut prev_last: Option<Leaf<D>> = None;
        for (p, leaves) in self.ranks.iter().enumerate() {
            for (i, leaf) in leaves.iter().enumerate() {
                if !leaf.quad.is_valid() || leaf.pos != leaf.quad.position() {
                    issues.push(ForestIssue::InvalidLeaf { rank: p, index: i });
                }
                if leaf.tree >= num_trees {
                    issues.push(ForestIssue::TreeOutOfRange { rank: p, index: i });
                }
                if i + 1 < leaves.len() {
                    let next = &leaves[i + 1];
                    let ordered = leaf.key() < next.key()
                        && !(leaf.tree == next.tree && leaf.quad.overlaps(&next.quad));
                    if !ordered {
                        issues.push(ForestIssue::UnsortedOrOverlapping { rank: p, index: i });
                    }
                }
            }
            if let (Some(prev), Some(first)) = (&prev_last, leaves.first()) {
                let ordered = prev.key() < first.key()
                    && !(prev.tree == first.tree && prev.quad.overlaps(&first.quad));
                if !ordered {
                    issues.push(ForestIssue::RankOrder { rank: p });
                }
            }
            if self.offsets[p + 1] - self.offsets[p] != leaves.len() as u64 {
                issues.push(ForestIssue::OffsetMismatch { rank: p });
            }
            if let Some(last) = leaves.last() {
                prev_last = Some(*last);
            }
        }
        // Markers: recompute and compare.
        let mut expect = self.markers.clone();
        let current = std::mem::take(&mut expect);
        let mut fresh = vec![(u32::MAX, 0u128); self.num_ranks() + 1];
        for p in (0..self.num_ranks()).rev() {
            fresh[p] = match self.ranks[p].first() {
                Some(l) => (l.tree, l.pos),
                None => fresh[p + 1],
            };
        }
        if current != fresh {
            issues.push(ForestIssue::MarkerMismatch { rank: 0 });
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    fn rebuild_markers_local(&mut self) {
        let p = self.num_ranks();
        self.markers = vec![(u32::MAX, 0u128); p + 1];
        for r in (0..p).rev() {
            self.markers[r] = match self.ranks[r].first() {
                Some(l) => (l.tree, l.pos),
                None => self.markers[r + 1],
            };
        }
    }

    /// Collective refresh of offsets and partition markers after a mutation.
    pub(crate) fn refresh_partition(&mut self, world: &mut World) {
        let contributions: Vec<(u64, Option<(u32, u128)>)> = self
            .ranks
            .iter()
            .map(|l| (l.len() as u64, l.first().map(|f| (f.tree, f.pos))))
            .collect();
        let gathered = world.allgather(contributions);
        let p = self.num_ranks();
        self.offsets = vec![0; p + 1];
        for (i, (count, _)) in gathered.iter().enumerate() {
            self.offsets[i + 1] = self.offsets[i] + count;
        }
        self.markers = vec![(u32::MAX, 0u128); p + 1];
        for r in (0..p).rev() {
            self.markers[r] = match gathered[r].1 {
                Some(k) => k,
                None => self.markers[r + 1],
            };
        }
        self.version += 1;
    }
}

/// The optimal (within one) partition offsets: `offsets[p] = floor(p*n/ranks)`.
pub fn eq1_offsets(n: u64, ranks: usize) -> Vec<u64> {
    (0..=ranks as u64)
        .map(|p| p * n / ranks as u64)
        .collect()
}

/// Effective per-leaf level change under adapt semantics: `+1` for refine
/// marks, `-1` for members of complete same-rank leaf families marked `-1`
/// throughout, `0` otherwise.
fn effective_deltas<const D: usize>(leaves: &[Leaf<D>], marks: &[i8]) -> Vec<i8> {
    let nc = num_children(D);
    let mut eff = vec![0i8; leaves.len()];
    let mut i = 0;
    while i < leaves.len() {
        let leaf = &leaves[i];
        if marks[i] == 1 {
            eff[i] = 1;
            i += 1;
            continue;
        }
        if marks[i] == -1 && leaf.quad.level > 0 && leaf.quad.sibling_index() == 0 {
            let end = i + nc;
            if end <= leaves.len()
                && leaves[i..end].iter().all(|l| l.tree == leaf.tree)
                && marks[i..end].iter().all(|&m| m == -1)
            {
                let quads: Vec<Quadrant<D>> = leaves[i..end].iter().map(|l| l.quad).collect();
                if is_family(&quads) {
                    for e in eff[i..end].iter_mut() {
                        *e = -1;
                    }
                    i = end;
                    continue;
                }
            }
        }
        i += 1;
    }
    eff
}

/// Apply a 2:1-consistent marking: refine-marked leaves are replaced by their
/// children (one level), complete same-rank families marked `-1` throughout
/// by their parent, everything else kept. The callback is invoked per leaf
/// transition for data transfer. Markings that would break the face-2:1
/// balance of the result are rejected.
pub fn adapt<const D: usize, H>(
    forest: &mut Forest<D>,
    layers: &[GhostLayer<D>],
    marking: &Marking,
    handlers: &mut [H],
    world: &mut World,
) -> Result<(), AdaptError>
where
    H: AdaptData<D> + Send,
{
    adapt_impl(forest, Some(layers), marking, handlers, world, true)
}

/// [`adapt`] without the 2:1 consistency validation. Used by the monolithic
/// balance path, which repairs the mesh afterwards.
pub fn adapt_raw<const D: usize, H>(
    forest: &mut Forest<D>,
    marking: &Marking,
    handlers: &mut [H],
    world: &mut World,
) -> Result<(), AdaptError>
where
    H: AdaptData<D> + Send,
{
    adapt_impl(forest, None, marking, handlers, world, false)
}

fn adapt_impl<const D: usize, H>(
    forest: &mut Forest<D>,
    layers: Option<&[GhostLayer<D>]>,
    marking: &Marking,
    handlers: &mut [H],
    world: &mut World,
    validate: bool,
) -> Result<(), AdaptError>
where
    H: AdaptData<D> + Send,
{
    marking.check_aligned(forest)?;
    assert_eq!(handlers.len(), forest.num_ranks());

    // Refine marks at the maximum level cannot be applied.
    for (p, (leaves, marks)) in forest.ranks.iter().zip(marking.ranks.iter()).enumerate() {
        for (i, (leaf, &m)) in leaves.iter().zip(marks.iter()).enumerate() {
            if m == 1 && leaf.quad.level >= max_level(D) {
                return Err(AdaptError::LevelOverflow { rank: p, index: i });
            }
        }
    }

    let eff: Vec<Vec<i8>> = forest
        .ranks
        .iter()
        .zip(marking.ranks.iter())
        .map(|(leaves, marks)| effective_deltas(leaves, marks))
        .collect();

    if validate {
        let layers = layers.ok_or(AdaptError::StaleGhost)?;
        let violations = crate::meshiter::post_adapt_violations(forest, layers, &eff, world)?;
        if !violations.is_empty() {
            let example = violations[0].clone();
            return Err(AdaptError::WouldUnbalance(violations.len(), example));
        }
    }

    // Per-rank rewrite; handlers are borrowed into the per-rank slots.
    let mut slots: Vec<(Vec<Leaf<D>>, Vec<i8>, &mut H)> = forest
        .ranks
        .iter_mut()
        .zip(eff)
        .zip(handlers.iter_mut())
        .map(|((leaves, eff), h)| (std::mem::take(leaves), eff, h))
        .collect();
    let nc = num_children(D);
    let results: Vec<Vec<Leaf<D>>> = world.par_ranks(&mut slots, |_p, (leaves, eff, handler)| {
        let mut out: Vec<Leaf<D>> = Vec::with_capacity(leaves.len() + leaves.len() / 2);
        let mut i = 0;
        while i < leaves.len() {
            let leaf = &leaves[i];
            match eff[i] {
                1 => {
                    let new_first = out.len();
                    for c in leaf.quad.children() {
                        out.push(Leaf::new(leaf.tree, c));
                    }
                    handler.refined(i, new_first, leaf);
                    i += 1;
                }
                -1 => {
                    let parent = leaf.quad.parent().expect("family below root");
                    let new_index = out.len();
                    let parent_leaf = Leaf::new(leaf.tree, parent);
                    out.push(parent_leaf);
                    handler.coarsened(i, new_index, &parent_leaf);
                    i += nc;
                }
                _ => {
                    handler.kept(i, out.len(), leaf);
                    out.push(*leaf);
                    i += 1;
                }
            }
        }
        out
    });
    for (leaves, result) in forest.ranks.iter_mut().zip(results) {
        *leaves = result;
    }

    forest.refresh_partition(world);
    Ok(())
}

/// Repartition the forest. Unweighted, the new counts follow the optimal cut
/// formula; weighted, cuts fall at ideal weight fractions (a leaf goes to the
/// rank whose interval contains its weight-prefix midpoint). In both cases a
/// family-preservation correction is applied before any leaf moves, so no
/// complete leaf family ends up straddling a rank boundary. The global leaf
/// sequence is unchanged. Returns the migration record.
pub fn partition<const D: usize>(
    forest: &mut Forest<D>,
    weights: Option<&[Vec<u64>]>,
    world: &mut World,
) -> Vec<Migration> {
    partition_with::<D, ()>(forest, weights, None, world)
}

/// [`partition`] that also migrates one per-leaf payload vector per rank.
pub fn partition_with<const D: usize, T: Clone + Send>(
    forest: &mut Forest<D>,
    weights: Option<&[Vec<u64>]>,
    payloads: Option<&mut Vec<Vec<T>>>,
    world: &mut World,
) -> Vec<Migration> {
    let n = forest.num_global();
    let p = forest.num_ranks();
    let targets = match weights {
        None => eq1_offsets(n, p),
        Some(w) => weighted_offsets(forest, w, world),
    };
    let targets = adjust_for_families(forest, targets, world);
    migrate(forest, &targets, payloads, world)
}

/// Move whole sibling families to one side of each rank boundary: the rank
/// owning the family's first sibling receives the rest. A no-op on forests
/// where no complete leaf family straddles a boundary.
pub fn fix_family_splits<const D: usize>(forest: &mut Forest<D>, world: &mut World) -> Vec<Migration> {
    let targets = forest.offsets.clone();
    let targets = adjust_for_families(forest, targets, world);
    migrate::<D, ()>(forest, &targets, None, world)
}

/// Weighted cut computation: allgather per-rank weight totals, then assign
/// each leaf to the rank whose ideal interval contains its prefix midpoint.
/// Returns the resulting global boundary offsets.
fn weighted_offsets<const D: usize>(
    forest: &Forest<D>,
    weights: &[Vec<u64>],
    world: &mut World,
) -> Vec<u64> {
    let p = forest.num_ranks();
    assert_eq!(weights.len(), p);
    for (r, w) in weights.iter().enumerate() {
        assert_eq!(w.len(), forest.ranks[r].len(), "weights misaligned on rank {r}");
    }
    let totals: Vec<u64> = weights.iter().map(|w| w.iter().sum()).collect();
    let totals = world.allgather(totals);
    let grand: u128 = totals.iter().map(|&t| t as u128).sum();
    if grand == 0 {
        return eq1_offsets(forest.num_global(), p);
    }

    // Each rank scans its own leaves; boundaries are where the destination
    // rank changes. dest(i) = floor((2*prefix_i + w_i) * P / (2*W)).
    let mut before: u128 = 0;
    let mut dest_runs: Vec<Vec<(usize, u64)>> = Vec::with_capacity(p);
    for r in 0..p {
        let mut runs: Vec<(usize, u64)> = Vec::new();
        let mut prefix = before;
        for &w in &weights[r] {
            let mid = 2 * prefix + w as u128;
            let dest = ((mid * p as u128) / (2 * grand)).min(p as u128 - 1) as usize;
            match runs.last_mut() {
                Some((d, c)) if *d == dest => *c += 1,
                _ => runs.push((dest, 1)),
            }
            prefix += w as u128;
        }
        before = prefix;
        dest_runs.push(runs);
    }
    let all_runs = world.allgather(dest_runs);
    let mut counts = vec![0u64; p];
    for runs in &all_runs {
        for &(d, c) in runs {
            counts[d] += c;
        }
    }
    let mut offsets = vec![0u64; p + 1];
    for r in 0..p {
        offsets[r + 1] = offsets[r] + counts[r];
    }
    offsets
}

/// Window record sent to a boundary's deciding rank: the sender's leaves that
/// fall inside the window, with their global start index.
#[derive(Clone)]
struct WindowSegment<const D: usize> {
    start: u64,
    leaves: Vec<Leaf<D>>,
}

/// Shift tentative boundaries off complete leaf families. For each tentative
/// boundary, the surrounding `2^(d+1) - 2` leaves are gathered at the
/// deciding rank; if the boundary falls strictly inside a complete sibling
/// family of leaves, it moves to the family end (the rank owning the first
/// sibling receives the rest). Adjusted boundaries are then allgathered.
fn adjust_for_families<const D: usize>(
    forest: &Forest<D>,
    targets: Vec<u64>,
    world: &mut World,
) -> Vec<u64> {
    let p = forest.num_ranks();
    let n = forest.num_global();
    let nc = num_children(D) as u64;
    if p == 1 {
        return targets;
    }

    // Send window segments to each boundary's decider (rank q decides
    // boundary q); a rank's own contribution stays local.
    let mut outgoing: Vec<Vec<(usize, Vec<WindowSegment<D>>)>> = Vec::with_capacity(p);
    let mut own_segments: Vec<Vec<WindowSegment<D>>> = vec![Vec::new(); p];
    for r in 0..p {
        let lo = forest.offsets[r];
        let hi = forest.offsets[r + 1];
        let mut msgs: Vec<(usize, Vec<WindowSegment<D>>)> = Vec::new();
        for (q, &b) in targets.iter().enumerate().take(p).skip(1) {
            if b == 0 || b >= n {
                continue;
            }
            let w_lo = b.saturating_sub(nc - 1);
            let w_hi = (b + nc - 1).min(n);
            let s = w_lo.max(lo);
            let e = w_hi.min(hi);
            if s < e {
                let seg = WindowSegment {
                    start: s,
                    leaves: forest.ranks[r][(s - lo) as usize..(e - lo) as usize].to_vec(),
                };
                if q == r {
                    own_segments[r].push(seg);
                } else {
                    msgs.push((q, vec![seg]));
                }
            }
        }
        outgoing.push(msgs);
    }
    let inboxes = world.exchange(outgoing);

    // Each rank decides its own boundary from the window it received.
    let mut adjusted_local = vec![0u64; p];
    for (q, inbox) in inboxes.into_iter().enumerate() {
        let b = targets[q];
        adjusted_local[q] = b;
        if q == 0 || b == 0 || b >= n {
            continue;
        }
        let mut window: Vec<(u64, Leaf<D>)> = Vec::new();
        for seg in &own_segments[q] {
            for (k, leaf) in seg.leaves.iter().enumerate() {
                window.push((seg.start + k as u64, *leaf));
            }
        }
        for (_src, segs) in inbox {
            for seg in segs {
                for (k, leaf) in seg.leaves.iter().enumerate() {
                    window.push((seg.start + k as u64, *leaf));
                }
            }
        }
        window.sort_by_key(|(g, _)| *g);
        window.dedup_by_key(|(g, _)| *g);
        let leaf_at = |g: u64| window.iter().find(|(gi, _)| *gi == g).map(|(_, l)| *l);
        let Some(first) = leaf_at(b) else { continue };
        if first.quad.level == 0 {
            continue;
        }
        let k = first.quad.sibling_index() as u64;
        if k == 0 {
            continue; // boundary at the family start does not split it
        }
        let fam_start = b - k;
        let fam_end = fam_start + nc;
        if fam_end > n {
            continue;
        }
        let members: Option<Vec<Leaf<D>>> =
            (fam_start..fam_end).map(leaf_at).collect();
        let Some(members) = members else { continue };
        if members.iter().any(|l| l.tree != first.tree) {
            continue;
        }
        let quads: Vec<Quadrant<D>> = members.iter().map(|l| l.quad).collect();
        if is_family(&quads) {
            adjusted_local[q] = fam_end;
        }
    }
    let mut adjusted = world.allgather(adjusted_local);
    adjusted.push(n);
    debug_assert!(adjusted.windows(2).all(|w| w[0] <= w[1]));
    adjusted
}

/// Move leaves (and one optional payload) so rank r owns global indices
/// `[targets[r], targets[r+1])`. The global sequence is unchanged.
fn migrate<const D: usize, T: Clone + Send>(
    forest: &mut Forest<D>,
    targets: &[u64],
    payloads: Option<&mut Vec<Vec<T>>>,
    world: &mut World,
) -> Vec<Migration> {
    let p = forest.num_ranks();
    let mut record = Vec::new();

    struct Item<const D: usize, T> {
        leaf: Leaf<D>,
        payload: Option<T>,
    }
    impl<const D: usize, T: Clone> Clone for Item<D, T> {
        fn clone(&self) -> Self {
            Item {
                leaf: self.leaf,
                payload: self.payload.clone(),
            }
        }
    }

    let payload_slices: Vec<Option<Vec<T>>> = match payloads {
        Some(ref pl) => pl.iter().map(|v| Some(v.clone())).collect(),
        None => (0..p).map(|_| None).collect(),
    };
    let mut outgoing: Vec<Vec<(usize, Vec<Item<D, T>>)>> = Vec::with_capacity(p);
    let mut retained: Vec<Vec<Item<D, T>>> = Vec::with_capacity(p);
    for r in 0..p {
        let lo = forest.offsets[r];
        let hi = forest.offsets[r + 1];
        let leaves = std::mem::take(&mut forest.ranks[r]);
        let mut msgs = Vec::new();
        let mut keep = Vec::new();
        for dst in 0..p {
            let s = lo.max(targets[dst]);
            let e = hi.min(targets[dst + 1]);
            if s >= e {
                continue;
            }
            let items: Vec<Item<D, T>> = ((s - lo) as usize..(e - lo) as usize)
                .map(|i| Item {
                    leaf: leaves[i],
                    payload: payload_slices[r].as_ref().map(|v| v[i].clone()),
                })
                .collect();
            if dst == r {
                keep = items;
            } else {
                record.push(Migration {
                    src: r,
                    dst,
                    count: e - s,
                });
                msgs.push((dst, items));
            }
        }
        outgoing.push(msgs);
        retained.push(keep);
    }
    let inboxes = world.exchange(outgoing);
    let mut new_payloads: Vec<Vec<T>> = Vec::with_capacity(p);
    for (r, (inbox, keep)) in inboxes.into_iter().zip(retained).enumerate() {
        // Own retained slice merges at its position in source-rank order.
        let mut parts: Vec<(usize, Vec<Item<D, T>>)> = inbox;
        if !keep.is_empty() {
            parts.push((r, keep));
            parts.sort_by_key(|(src, _)| *src);
        }
        let mut leaves = Vec::new();
        let mut pay = Vec::new();
        for (_src, items) in parts {
            for item in items {
                leaves.push(item.leaf);
                if let Some(v) = item.payload {
                    pay.push(v);
                }
            }
        }
        forest.ranks[r] = leaves;
        new_payloads.push(pay);
    }
    if let Some(pl) = payloads {
        *pl = new_payloads;
    }
    forest.refresh_partition(world);
    record
}
