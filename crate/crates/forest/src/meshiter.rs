//! Balanced-mesh face iteration visiting each face exactly once with both
//! sides resolved, per-element fixed-size intersection arrays, and the
//! neighbor-search machinery shared by the ghost and balance layers.
//!
//! Neighbor finding constructs the hypothetical same-level neighbor across a
//! face, transforms it across tree boundaries, and binary-searches the sorted
//! local and ghost leaf arrays for the actual occupants: an equal leaf, a
//! leaf ancestor, or the leaf descendants touching the shared face.

use crate::connectivity::{Connectivity, FaceConnection};
use crate::forest::{Forest, Leaf};
use crate::ghost::{ghost_exchange, GhostError, GhostLayer, GhostLeaf};
use crate::quadrant::{
    face_axis, face_sign, num_children, num_faces, opposite_face, Quadrant,
};
use crate::transport::World;

/// Reference to one side of a face within a rank's view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum SideRef {
    /// Index into the rank-local leaf array.
    Local(u32),
    /// Index into the rank's ghost array.
    Ghost(u32),
}

/// Errors from face iteration and intersection-table construction.
#[derive(Debug, Clone, thiserror::Error)]
pub enum IterError {
    #[error("forest is not 2:1 balanced at rank {rank} leaf {index} face {face}")]
    Unbalanced { rank: usize, index: usize, face: usize },
    #[error(
        "face region of rank {rank} leaf {index} face {face} is unoccupied; \
         the ghost layer is stale or the forest is invalid"
    )]
    MissingNeighbor { rank: usize, index: usize, face: usize },
    #[error("ghost exchange failed: {0}")]
    Ghost(#[from] GhostError),
}

/// What occupies the region of a hypothetical same-level face neighbor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaceOccupants {
    /// Nothing in the local or ghost arrays covers the region.
    Empty,
    /// A leaf of exactly the same size.
    Same(SideRef),
    /// A strictly coarser leaf contains the region.
    Coarser(SideRef),
    /// Strictly finer leaves touch the shared face, in Morton order.
    Finer(Vec<SideRef>),
}

/// A fully resolved face query.
#[derive(Debug, Clone)]
pub struct ResolvedFace<const D: usize> {
    /// Tree holding the neighbor region (may equal the query tree).
    pub nbr_tree: u32,
    /// Local face number of the neighbor side.
    pub nbr_face: u8,
    /// Inter-tree orientation code; 0 within a tree.
    pub orientation: u8,
    /// The hypothetical same-level neighbor, in `nbr_tree` coordinates.
    pub hyp: Quadrant<D>,
    pub occupants: FaceOccupants,
}

/// Anything holding a [`Leaf`], for the shared binary searches.
trait AsLeaf<const D: usize> {
    fn as_leaf(&self) -> &Leaf<D>;
}
impl<const D: usize> AsLeaf<D> for Leaf<D> {
    fn as_leaf(&self) -> &Leaf<D> {
        self
    }
}
impl<const D: usize> AsLeaf<D> for GhostLeaf<D> {
    fn as_leaf(&self) -> &Leaf<D> {
        &self.leaf
    }
}

/// One rank's read-only view of the mesh: its own leaves plus its ghosts.
#[derive(Clone, Copy)]
pub struct RankView<'a, const D: usize> {
    pub conn: &'a Connectivity<D>,
    pub leaves: &'a [Leaf<D>],
    pub ghosts: &'a [GhostLeaf<D>],
}

impl<'a, const D: usize> RankView<'a, D> {
    pub fn new(forest: &'a Forest<D>, rank: usize, layer: &'a GhostLayer<D>) -> Self {
        RankView {
            conn: forest.connectivity(),
            leaves: forest.rank_leaves(rank),
            ghosts: &layer.ghosts,
        }
    }

    /// View without any ghosts (single-rank or receiver-side matching).
    pub fn local_only(conn: &'a Connectivity<D>, leaves: &'a [Leaf<D>]) -> Self {
        RankView {
            conn,
            leaves,
            ghosts: &[],
        }
    }

    pub fn quad_of(&self, side: SideRef) -> &Quadrant<D> {
        match side {
            SideRef::Local(i) => &self.leaves[i as usize].quad,
            SideRef::Ghost(g) => &self.ghosts[g as usize].leaf.quad,
        }
    }

    pub fn leaf_of(&self, side: SideRef) -> &Leaf<D> {
        match side {
            SideRef::Local(i) => &self.leaves[i as usize],
            SideRef::Ghost(g) => &self.ghosts[g as usize].leaf,
        }
    }

    /// The same-level neighbor region across `face`, expressed in its own
    /// tree's coordinates. `None` on the physical boundary.
    pub fn hypothetical_neighbor(
        &self,
        tree: u32,
        quad: &Quadrant<D>,
        face: usize,
    ) -> Option<(u32, Quadrant<D>, u8, u8)> {
        let n = quad.face_neighbor(face);
        if n.is_inside_root() {
            return Some((tree, n, opposite_face(face) as u8, 0));
        }
        match self.conn.connection(tree as usize, face) {
            FaceConnection::Boundary => None,
            FaceConnection::Neighbor {
                tree: nbr,
                face: g,
                orientation,
            } => {
                let (_, t) = self.conn.transform(tree as usize, face).expect("connected");
                Some((nbr as u32, t.apply_quadrant(&n), g as u8, orientation))
            }
        }
    }

    fn search_exact<L: AsLeaf<D>>(slice: &[L], tree: u32, quad: &Quadrant<D>) -> Option<usize> {
        let pos = quad.position();
        let idx = slice.partition_point(|l| {
            let l = l.as_leaf();
            (l.tree, l.pos()) < (tree, pos)
        });
        let l = slice.get(idx)?.as_leaf();
        (l.tree == tree && l.pos() == pos && l.quad.level == quad.level).then_some(idx)
    }

    /// Find the leaf strictly containing `quad`, if any. One search: the
    /// candidate is the predecessor (or the exact-position slot) in order.
    fn search_ancestor<L: AsLeaf<D>>(slice: &[L], tree: u32, quad: &Quadrant<D>) -> Option<usize> {
        let pos = quad.position();
        let idx = slice.partition_point(|l| {
            let l = l.as_leaf();
            (l.tree, l.pos()) < (tree, pos)
        });
        for cand in [idx, idx.wrapping_sub(1)] {
            if let Some(l) = slice.get(cand) {
                let l = l.as_leaf();
                if l.tree == tree && l.quad.is_ancestor(quad) {
                    return Some(cand);
                }
            }
        }
        None
    }

    /// Indices of leaf descendants of `quad` (strictly finer, contained).
    fn search_descendants<L: AsLeaf<D>>(
        slice: &[L],
        tree: u32,
        quad: &Quadrant<D>,
    ) -> std::ops::Range<usize> {
        let lo = quad.position();
        let hi = quad.last_position();
        let a = slice.partition_point(|l| {
            let l = l.as_leaf();
            (l.tree, l.pos()) < (tree, lo)
        });
        let b = slice.partition_point(|l| {
            let l = l.as_leaf();
            (l.tree, l.pos()) <= (tree, hi)
        });
        a..b
    }

    /// Resolve what occupies the face region of `leaf` across `face`.
    /// `None` means the physical domain boundary.
    pub fn resolve_face(&self, leaf: &Leaf<D>, face: usize) -> Option<ResolvedFace<D>> {
        let (nbr_tree, hyp, nbr_face, orientation) =
            self.hypothetical_neighbor(leaf.tree, &leaf.quad, face)?;
        let occupants = self.occupants(nbr_tree, &hyp, nbr_face as usize);
        Some(ResolvedFace {
            nbr_tree,
            nbr_face,
            orientation,
            hyp,
            occupants,
        })
    }

    /// Search local and ghost arrays for the occupants of region `hyp`,
    /// keeping only descendants that touch face `back_face` of the region.
    pub fn occupants(&self, tree: u32, hyp: &Quadrant<D>, back_face: usize) -> FaceOccupants {
        if let Some(i) = Self::search_exact(self.leaves, tree, hyp) {
            return FaceOccupants::Same(SideRef::Local(i as u32));
        }
        if let Some(g) = Self::search_exact(self.ghosts, tree, hyp) {
            return FaceOccupants::Same(SideRef::Ghost(g as u32));
        }
        if let Some(i) = Self::search_ancestor(self.leaves, tree, hyp) {
            return FaceOccupants::Coarser(SideRef::Local(i as u32));
        }
        if let Some(g) = Self::search_ancestor(self.ghosts, tree, hyp) {
            return FaceOccupants::Coarser(SideRef::Ghost(g as u32));
        }
        let touches = |q: &Quadrant<D>| -> bool {
            let a = face_axis(back_face);
            if face_sign(back_face) == 1 {
                q.coords[a] as i64 + q.len() as i64 == hyp.coords[a] as i64 + hyp.len() as i64
            } else {
                q.coords[a] == hyp.coords[a]
            }
        };
        let mut finer: Vec<SideRef> = Vec::new();
        let lr = Self::search_descendants(self.leaves, tree, hyp);
        let gr = Self::search_descendants(self.ghosts, tree, hyp);
        let mut li = lr.start;
        let mut gi = gr.start;
        // Merge the two sorted runs by (tree, position).
        while li < lr.end || gi < gr.end {
            let take_local = match (li < lr.end, gi < gr.end) {
                (true, true) => {
                    let l = &self.leaves[li];
                    let g = &self.ghosts[gi].leaf;
                    (l.tree, l.pos()) <= (g.tree, g.pos())
                }
                (true, false) => true,
                (false, true) => false,
                _ => unreachable!(),
            };
            if take_local {
                if touches(&self.leaves[li].quad) {
                    finer.push(SideRef::Local(li as u32));
                }
                li += 1;
            } else {
                if touches(&self.ghosts[gi].leaf.quad) {
                    finer.push(SideRef::Ghost(gi as u32));
                }
                gi += 1;
            }
        }
        if finer.is_empty() {
            FaceOccupants::Empty
        } else {
            FaceOccupants::Finer(finer)
        }
    }
}

/// One visited face with both sides resolved.
#[derive(Debug, Clone)]
pub struct FaceRecord<const D: usize> {
    /// Local leaf index of the inside element.
    pub inside: u32,
    /// Local face number of the inside element.
    pub inside_face: u8,
    /// Inter-tree orientation code (0 within a tree).
    pub orientation: u8,
    /// Local face number on the outside (undefined for boundary records).
    pub outside_face: u8,
    pub config: FaceConfig,
}

/// Side configuration of a face record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FaceConfig {
    /// Physical domain boundary; the inside element owns the face.
    Boundary,
    /// Both sides the same size.
    Same(SideRef),
    /// The inside element is the finer side of a hanging face; the outside
    /// is one level coarser. The record covers one fine sub-face. Emitted
    /// only when the coarse side is a ghost.
    OutsideCoarser(SideRef),
    /// The inside element is the coarse side; the outside holds the
    /// `2^(d-1)` hanging children in Morton order.
    InsideCoarser(Vec<SideRef>),
}

/// Iterate every process-local face exactly once, invoking the visitor with
/// a complete record. Hanging faces are reported once from the coarse side
/// when that side is local, and per fine sub-face otherwise. Faces wholly
/// between two ghosts are not visited. Requires a 2:1 balanced forest.
pub fn iterate_faces<const D: usize, F>(
    view: &RankView<'_, D>,
    rank: usize,
    mut visitor: F,
) -> Result<(), IterError>
where
    F: FnMut(&FaceRecord<D>),
{
    let nf = num_faces(D);
    let hanging = num_children(D) / 2;
    for (i, leaf) in view.leaves.iter().enumerate() {
        for face in 0..nf {
            let resolved = match view.resolve_face(leaf, face) {
                None => {
                    visitor(&FaceRecord {
                        inside: i as u32,
                        inside_face: face as u8,
                        orientation: 0,
                        outside_face: face as u8,
                        config: FaceConfig::Boundary,
                    });
                    continue;
                }
                Some(r) => r,
            };
            match resolved.occupants {
                FaceOccupants::Empty => {
                    return Err(IterError::MissingNeighbor {
                        rank,
                        index: i,
                        face,
                    });
                }
                FaceOccupants::Same(side) => {
                    let emit = match side {
                        SideRef::Ghost(_) => true,
                        SideRef::Local(j) => {
                            let other = &view.leaves[j as usize];
                            (leaf.key(), face as u8) < (other.key(), resolved.nbr_face)
                        }
                    };
                    if emit {
                        visitor(&FaceRecord {
                            inside: i as u32,
                            inside_face: face as u8,
                            orientation: resolved.orientation,
                            outside_face: resolved.nbr_face,
                            config: FaceConfig::Same(side),
                        });
                    }
                }
                FaceOccupants::Coarser(side) => {
                    let coarse = view.leaf_of(side);
                    if coarse.quad.level + 1 != leaf.quad.level {
                        return Err(IterError::Unbalanced {
                            rank,
                            index: i,
                            face,
                        });
                    }
                    // The coarse side owns the hanging record when local.
                    if matches!(side, SideRef::Ghost(_)) {
                        visitor(&FaceRecord {
                            inside: i as u32,
                            inside_face: face as u8,
                            orientation: resolved.orientation,
                            outside_face: resolved.nbr_face,
                            config: FaceConfig::OutsideCoarser(side),
                        });
                    }
                }
                FaceOccupants::Finer(children) => {
                    if children.len() != hanging
                        || children
                            .iter()
                            .any(|&s| view.quad_of(s).level != leaf.quad.level + 1)
                    {
                        return Err(IterError::Unbalanced {
                            rank,
                            index: i,
                            face,
                        });
                    }
                    visitor(&FaceRecord {
                        inside: i as u32,
                        inside_face: face as u8,
                        orientation: resolved.orientation,
                        outside_face: resolved.nbr_face,
                        config: FaceConfig::InsideCoarser(children),
                    });
                }
            }
        }
    }
    Ok(())
}

/// One neighbor entry of a leaf: the neighbor (or boundary) behind one
/// (sub-)face, with both local face numbers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IntersectionEntry {
    /// Local face of the owning leaf.
    pub face: u8,
    /// The neighbor's local face number (the leaf's own face for boundary).
    pub nbr_face: u8,
    /// Neighbor reference; `None` marks the physical boundary.
    pub side: Option<SideRef>,
}

/// Per-leaf fixed-bound neighbor arrays: every leaf holds at most `d * 2^d`
/// entries covering all of its face neighbors (one per same-or-coarser
/// neighbor, `2^(d-1)` per hanging face).
#[derive(Debug, Clone)]
pub struct IntersectionTable {
    offsets: Vec<u32>,
    entries: Vec<IntersectionEntry>,
}

impl IntersectionTable {
    pub fn entries_of(&self, leaf: usize) -> &[IntersectionEntry] {
        &self.entries[self.offsets[leaf] as usize..self.offsets[leaf + 1] as usize]
    }

    pub fn num_leaves(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn max_entries_per_leaf(&self) -> usize {
        (0..self.num_leaves())
            .map(|i| self.entries_of(i).len())
            .max()
            .unwrap_or(0)
    }
}

/// Build the per-leaf neighbor table of one rank. Requires 2:1 balance.
pub fn build_intersections<const D: usize>(
    view: &RankView<'_, D>,
    rank: usize,
) -> Result<IntersectionTable, IterError> {
    let nf = num_faces(D);
    let hanging = num_children(D) / 2;
    let mut offsets = Vec::with_capacity(view.leaves.len() + 1);
    let mut entries = Vec::with_capacity(view.leaves.len() * nf);
    offsets.push(0u32);
    for (i, leaf) in view.leaves.iter().enumerate() {
        for face in 0..nf {
            match view.resolve_face(leaf, face) {
                None => entries.push(IntersectionEntry {
                    face: face as u8,
                    nbr_face: face as u8,
                    side: None,
                }),
                Some(r) => match r.occupants {
                    FaceOccupants::Empty => {
                        return Err(IterError::MissingNeighbor {
                            rank,
                            index: i,
                            face,
                        })
                    }
                    FaceOccupants::Same(side) => entries.push(IntersectionEntry {
                        face: face as u8,
                        nbr_face: r.nbr_face,
                        side: Some(side),
                    }),
                    FaceOccupants::Coarser(side) => {
                        if view.quad_of(side).level + 1 != leaf.quad.level {
                            return Err(IterError::Unbalanced {
                                rank,
                                index: i,
                                face,
                            });
                        }
                        entries.push(IntersectionEntry {
                            face: face as u8,
                            nbr_face: r.nbr_face,
                            side: Some(side),
                        });
                    }
                    FaceOccupants::Finer(children) => {
                        if children.len() != hanging
                            || children
                                .iter()
                                .any(|&s| view.quad_of(s).level != leaf.quad.level + 1)
                        {
                            return Err(IterError::Unbalanced {
                                rank,
                                index: i,
                                face,
                            });
                        }
                        for side in children {
                            entries.push(IntersectionEntry {
                                face: face as u8,
                                nbr_face: r.nbr_face,
                                side: Some(side),
                            });
                        }
                    }
                },
            }
        }
        offsets.push(entries.len() as u32);
    }
    Ok(IntersectionTable { offsets, entries })
}

/// Face pairs whose post-adapt levels would differ by two or more, given the
/// effective per-leaf level deltas. Used by `adapt` to reject inconsistent
/// markings. Collective (exchanges the deltas to ghosts).
pub(crate) fn post_adapt_violations<const D: usize>(
    forest: &Forest<D>,
    layers: &[GhostLayer<D>],
    eff: &[Vec<i8>],
    world: &mut World,
) -> Result<Vec<String>, GhostError> {
    let ghost_eff = ghost_exchange(forest, layers, eff, world)?;
    let mut violations = Vec::new();
    for p in 0..forest.num_ranks() {
        let view = RankView::new(forest, p, &layers[p]);
        for (i, leaf) in view.leaves.iter().enumerate() {
            let post = leaf.quad.level as i32 + eff[p][i] as i32;
            for face in 0..num_faces(D) {
                let Some(resolved) = view.resolve_face(leaf, face) else {
                    continue;
                };
                let mut check = |side: SideRef| {
                    let (other_level, other_eff) = match side {
                        SideRef::Local(j) => {
                            (view.leaves[j as usize].quad.level, eff[p][j as usize])
                        }
                        SideRef::Ghost(g) => (
                            view.ghosts[g as usize].leaf.quad.level,
                            ghost_eff[p][g as usize],
                        ),
                    };
                    let other_post = other_level as i32 + other_eff as i32;
                    if (post - other_post).abs() >= 2 {
                        violations.push(format!(
                            "rank {p} leaf {i} face {face}: post levels {post} vs {other_post}"
                        ));
                    }
                };
                match resolved.occupants {
                    FaceOccupants::Empty => {}
                    FaceOccupants::Same(s) | FaceOccupants::Coarser(s) => check(s),
                    FaceOccupants::Finer(children) => children.into_iter().for_each(&mut check),
                }
            }
        }
    }
    Ok(violations)
}
