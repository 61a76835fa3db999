//! Face-only ghost layer construction and handshake-free ghost data
//! exchange.
//!
//! Construction is one symmetric superstep: every rank determines, from the
//! partition markers alone, which remote ranks might own leaves across each
//! of its faces, and sends those leaves as mirror candidates. Receivers match
//! the candidates against their own leaves, so the resulting layer is exact:
//! every ghost shares a face with at least one local leaf. Data exchange then
//! needs no handshake: mirror data flows as one aggregated message per pair
//! of adjacent ranks per direction, and the per-owner ghost ordering on the
//! receiver matches the sender's mirror ordering by construction.

use crate::forest::{Forest, Leaf};
use crate::meshiter::{FaceOccupants, RankView, SideRef};
use crate::quadrant::{num_faces, Quadrant};
use crate::transport::World;
use std::collections::BTreeSet;

/// An off-rank leaf adjacent to some local leaf through a face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GhostLeaf<const D: usize> {
    pub leaf: Leaf<D>,
    /// Owning rank.
    pub owner: u32,
    /// Index of the leaf in the owner's local array.
    pub owner_index: u32,
}

/// One rank's ghost layer.
#[derive(Debug, Clone, Default)]
pub struct GhostLayer<const D: usize> {
    /// Ghosts sorted by (owner rank, tree, Morton position); this coincides
    /// with global (tree, Morton) order because rank ranges are contiguous.
    pub ghosts: Vec<GhostLeaf<D>>,
    /// Ghosts of owner r occupy `proc_offsets[r]..proc_offsets[r+1]`.
    pub proc_offsets: Vec<u32>,
    /// Local leaf indices mirrored to at least one remote rank, ascending.
    pub mirrors: Vec<u32>,
    /// Per remote rank: local leaf indices mirrored there, ascending.
    pub mirror_ranks: Vec<Vec<u32>>,
    /// Forest version this layer was built against.
    pub version: u64,
}

impl<const D: usize> GhostLayer<D> {
    /// Ranks adjacent to this one (nonempty mirror lists).
    pub fn adjacent_ranks(&self) -> impl Iterator<Item = usize> + '_ {
        self.mirror_ranks
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(r, _)| r)
    }
}

/// Errors from ghost exchange.
#[derive(Debug, Clone, thiserror::Error)]
pub enum GhostError {
    #[error("rank {rank}: payload has {got} records for {want} local leaves")]
    PayloadLength { rank: usize, got: usize, want: usize },
    #[error("rank {rank}: message from rank {owner} has {got} records, expected {want}")]
    SectionMismatch {
        rank: usize,
        owner: usize,
        got: usize,
        want: usize,
    },
    #[error("ghost layer is stale (forest version {forest} vs layer version {layer})")]
    Stale { forest: u64, layer: u64 },
}

#[derive(Clone)]
struct MirrorCandidate<const D: usize> {
    tree: u32,
    quad: Quadrant<D>,
    owner_index: u32,
}

/// Build all ranks' ghost layers in one symmetric round of communication.
/// Works on balanced and unbalanced forests.
pub fn build_ghost<const D: usize>(forest: &Forest<D>, world: &mut World) -> Vec<GhostLayer<D>> {
    let p = forest.num_ranks();
    let nf = num_faces(D);

    // Phase A: each rank nominates mirror candidates for the ranks whose
    // position ranges intersect its hypothetical face-neighbor regions.
    let mut rank_ids: Vec<usize> = (0..p).collect();
    let outgoing: Vec<Vec<(usize, Vec<MirrorCandidate<D>>)>> =
        world.par_ranks(&mut rank_ids, |rank, _| {
            let leaves = forest.rank_leaves(rank);
            let view = RankView::local_only(forest.connectivity(), leaves);
            let mut per_target: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); p];
            for (i, leaf) in leaves.iter().enumerate() {
                for face in 0..nf {
                    let Some((ntree, hyp, _, _)) =
                        view.hypothetical_neighbor(leaf.tree, &leaf.quad, face)
                    else {
                        continue;
                    };
                    let r_lo = forest.owner_of_point(ntree, hyp.position());
                    let r_hi = forest.owner_of_point(ntree, hyp.last_position());
                    for r in r_lo..=r_hi {
                        if r != rank {
                            per_target[r].insert(i as u32);
                        }
                    }
                }
            }
            per_target
                .into_iter()
                .enumerate()
                .filter(|(r, set)| *r != rank && !set.is_empty())
                .map(|(r, set)| {
                    let msg: Vec<MirrorCandidate<D>> = set
                        .into_iter()
                        .map(|i| MirrorCandidate {
                            tree: leaves[i as usize].tree,
                            quad: leaves[i as usize].quad,
                            owner_index: i,
                        })
                        .collect();
                    (r, msg)
                })
                .collect()
        });
    let inboxes = world.exchange(outgoing);

    // Phase B: match received candidates against local leaves; matched
    // candidates become ghosts, matching local leaves become mirrors.
    let mut recv: Vec<Vec<(usize, Vec<MirrorCandidate<D>>)>> = inboxes;
    world.par_ranks(&mut recv, |rank, inbox| {
        let leaves = forest.rank_leaves(rank);
        let view = RankView::local_only(forest.connectivity(), leaves);
        let mut ghosts: Vec<GhostLeaf<D>> = Vec::new();
        let mut proc_offsets = vec![0u32; p + 1];
        let mut mirror_ranks: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); p];
        let mut counts = vec![0u32; p];
        for (owner, candidates) in inbox.iter() {
            for cand in candidates {
                let mut matched = false;
                for face in 0..nf {
                    let Some((ntree, hyp, nbr_face, _)) =
                        view.hypothetical_neighbor(cand.tree, &cand.quad, face)
                    else {
                        continue;
                    };
                    match view.occupants(ntree, &hyp, nbr_face as usize) {
                        FaceOccupants::Empty => {}
                        FaceOccupants::Same(SideRef::Local(i))
                        | FaceOccupants::Coarser(SideRef::Local(i)) => {
                            matched = true;
                            mirror_ranks[*owner].insert(i);
                        }
                        FaceOccupants::Finer(children) => {
                            for side in children {
                                if let SideRef::Local(i) = side {
                                    matched = true;
                                    mirror_ranks[*owner].insert(i);
                                }
                            }
                        }
                        _ => unreachable!("local-only view yields local refs"),
                    }
                }
                if matched {
                    ghosts.push(GhostLeaf {
                        leaf: Leaf::new(cand.tree, cand.quad),
                        owner: *owner as u32,
                        owner_index: cand.owner_index,
                    });
                    counts[*owner] += 1;
                }
            }
        }
        for q in 0..p {
            proc_offsets[q + 1] = proc_offsets[q] + counts[q];
        }
        let mut mirrors: BTreeSet<u32> = BTreeSet::new();
        for set in &mirror_ranks {
            mirrors.extend(set.iter().copied());
        }
        GhostLayer {
            ghosts,
            proc_offsets,
            mirrors: mirrors.into_iter().collect(),
            mirror_ranks: mirror_ranks
                .into_iter()
                .map(|s| s.into_iter().collect())
                .collect(),
            version: forest.version(),
        }
    })
}

/// Exchange one fixed-size record per local leaf: every rank receives, for
/// each of its ghosts, the owner's record for that leaf at call time. One
/// aggregated message per adjacent rank pair per direction.
pub fn ghost_exchange<const D: usize, T: Clone>(
    forest: &Forest<D>,
    layers: &[GhostLayer<D>],
    payloads: &[Vec<T>],
    world: &mut World,
) -> Result<Vec<Vec<T>>, GhostError> {
    let p = forest.num_ranks();
    assert_eq!(layers.len(), p);
    assert_eq!(payloads.len(), p);
    for (rank, layer) in layers.iter().enumerate() {
        if layer.version != forest.version() {
            return Err(GhostError::Stale {
                forest: forest.version(),
                layer: layer.version,
            });
        }
        let want = forest.rank_leaves(rank).len();
        if payloads[rank].len() != want {
            return Err(GhostError::PayloadLength {
                rank,
                got: payloads[rank].len(),
                want,
            });
        }
    }

    let mut outgoing: Vec<Vec<(usize, Vec<T>)>> = Vec::with_capacity(p);
    for rank in 0..p {
        let mut msgs = Vec::new();
        for (q, mirror_list) in layers[rank].mirror_ranks.iter().enumerate() {
            if mirror_list.is_empty() {
                continue;
            }
            let msg: Vec<T> = mirror_list
                .iter()
                .map(|&i| payloads[rank][i as usize].clone())
                .collect();
            msgs.push((q, msg));
        }
        outgoing.push(msgs);
    }
    let mut inboxes = world.exchange(outgoing);

    let mut result = Vec::with_capacity(p);
    for (rank, inbox) in inboxes.drain(..).enumerate() {
        let layer = &layers[rank];
        let mut records: Vec<T> = Vec::with_capacity(layer.ghosts.len());
        let mut by_owner: Vec<Option<Vec<T>>> = vec![None; p];
        for (owner, msg) in inbox {
            by_owner[owner] = Some(msg);
        }
        for owner in 0..p {
            let want = (layer.proc_offsets[owner + 1] - layer.proc_offsets[owner]) as usize;
            let got = by_owner[owner].take();
            match (want, got) {
                (0, None) => {}
                (w, Some(msg)) if msg.len() == w => records.extend(msg),
                (w, got) => {
                    return Err(GhostError::SectionMismatch {
                        rank,
                        owner,
                        got: got.map_or(0, |m| m.len()),
                        want: w,
                    });
                }
            }
        }
        debug_assert_eq!(records.len(), layer.ghosts.len());
        result.push(records);
    }
    Ok(result)
}
