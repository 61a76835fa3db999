//! 2:1 face balance: the iterative balanced-marking ripple and a monolithic
//! fallback balance, plus a balance validator.
//!
//! Balanced marking adjusts a user marking so that applying it keeps the mesh
//! face-2:1 balanced, without touching the mesh itself. Each round exchanges
//! markings to ghosts, sweeps the local leaves to a fixed point of the
//! marking rules, and agrees globally whether anything changed. Marks only
//! ever increase under the order -1 < 0 < +1, so the sweep is a monotone
//! closure with a unique, traversal-order-independent fixed point.

use crate::forest::{adapt_raw, Forest, Marking, NoData};
use crate::ghost::{build_ghost, ghost_exchange, GhostError, GhostLayer};
use crate::meshiter::{
    build_intersections, FaceOccupants, IntersectionTable, IterError, RankView, SideRef,
};
use crate::quadrant::num_faces;
use crate::transport::World;
use std::collections::VecDeque;

/// Outcome of a balanced-marking run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BalanceReport {
    /// Outer rounds executed (each: ghost exchange, local sweep, allreduce).
    pub sweeps_used: u32,
    /// True if the round cap was exceeded and the uncapped fallback ran.
    pub fell_back: bool,
    /// Number of mark upgrades per round.
    pub sweep_changes: Vec<u64>,
    /// Neighbor entries inspected across all sweeps (operation-count proxy).
    pub face_visits: u64,
}

/// Outcome of a monolithic balance run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonolithicReport {
    /// Mark-and-adapt iterations until no forced refinement remained.
    pub iterations: u32,
    /// Neighbor entries inspected across all marking sweeps.
    pub face_visits: u64,
    /// Leaves refined in total.
    pub refined: u64,
}

/// One face-2:1 violation: a face-adjacent leaf pair differing by two or
/// more levels.
#[derive(Debug, Clone)]
pub struct BalanceViolation<const D: usize> {
    pub rank: usize,
    pub index: usize,
    pub face: usize,
    pub inside_level: u8,
    pub outside_level: u8,
}

#[derive(Debug, Clone, thiserror::Error)]
pub enum BalanceError {
    #[error("input forest is not 2:1 balanced: {0}")]
    Rejected(IterError),
    #[error("marking is not index-aligned with the forest")]
    MisalignedMarking,
    #[error("ghost exchange failed: {0}")]
    Ghost(#[from] GhostError),
    #[error("adaptation failed during balance: {0}")]
    Adapt(#[from] crate::forest::AdaptError),
}

/// Number of rounds after which the capped iteration gives up and the
/// uncapped fallback takes over.
pub const MAX_SWEEPS: u32 = 3;

struct SweepState<'a, const D: usize> {
    table: &'a IntersectionTable,
    view: RankView<'a, D>,
    marks: Vec<i8>,
    gmarks: Vec<i8>,
    /// Local leaves adjacent to each ghost, for re-seeding after exchanges.
    ghost_adjacency: Vec<Vec<u32>>,
    seeds: Vec<u32>,
    visits: u64,
    changes: u64,
}

/// Adjust `marking` so that adapting with it preserves face-2:1 balance.
///
/// Runs up to [`MAX_SWEEPS`] rounds of (ghost exchange, local fixed-point
/// sweep, allreduce). If the cap is exceeded, the iteration continues
/// uncapped until globally resolved - the result is then still the unique
/// fixed point, but the report flags the fallback. Marks are only upgraded,
/// never lowered.
pub fn balanced_marking<const D: usize>(
    forest: &Forest<D>,
    layers: &[GhostLayer<D>],
    marking: &mut Marking,
    world: &mut World,
) -> Result<BalanceReport, BalanceError> {
    let p = forest.num_ranks();
    if marking.ranks.len() != p
        || marking
            .ranks
            .iter()
            .zip(0..p)
            .any(|(m, r)| m.len() != forest.rank_leaves(r).len())
    {
        return Err(BalanceError::MisalignedMarking);
    }

    // Intersection tables; their construction rejects unbalanced forests.
    let mut tables = Vec::with_capacity(p);
    for rank in 0..p {
        let view = RankView::new(forest, rank, &layers[rank]);
        tables.push(build_intersections(&view, rank).map_err(BalanceError::Rejected)?);
    }

    let mut states: Vec<SweepState<'_, D>> = (0..p)
        .map(|rank| {
            let view = RankView::new(forest, rank, &layers[rank]);
            let table = &tables[rank];
            let mut ghost_adjacency: Vec<Vec<u32>> = vec![Vec::new(); view.ghosts.len()];
            for i in 0..view.leaves.len() {
                for e in table.entries_of(i) {
                    if let Some(SideRef::Ghost(g)) = e.side {
                        ghost_adjacency[g as usize].push(i as u32);
                    }
                }
            }
            SweepState {
                table,
                view,
                marks: std::mem::take(&mut marking.ranks[rank]),
                gmarks: vec![0; view.ghosts.len()],
                ghost_adjacency,
                seeds: (0..view.leaves.len() as u32).collect(),
                visits: 0,
                changes: 0,
            }
        })
        .collect();

    let mut sweeps_used = 0u32;
    let mut sweep_changes = Vec::new();
    let mut fell_back = false;
    loop {
        sweeps_used += 1;
        if sweeps_used > MAX_SWEEPS {
            fell_back = true;
        }

        // Communicate marking from local process boundaries to ghosts.
        let mark_payload: Vec<Vec<i8>> = states.iter().map(|s| s.marks.clone()).collect();
        let fresh = ghost_exchange(forest, layers, &mark_payload, world)?;
        for (s, new_gmarks) in states.iter_mut().zip(fresh) {
            for (g, (&new, old)) in new_gmarks.iter().zip(s.gmarks.iter()).enumerate() {
                if new != *old {
                    s.seeds.extend(s.ghost_adjacency[g].iter().copied());
                }
            }
            s.gmarks = new_gmarks;
        }

        // Local sweep to a fixed point on every rank.
        let resolved: Vec<u8> = world.par_ranks(&mut states, |_rank, s| {
            let changed = sweep_to_fixed_point(s);
            u8::from(!changed)
        });
        sweep_changes.push(states.iter().map(|s| s.changes).sum());
        for s in states.iter_mut() {
            s.changes = 0;
        }

        // Allreduce the resolved flags over all ranks.
        if world.allreduce_min(resolved) == 1 {
            break;
        }
    }

    let face_visits = states.iter().map(|s| s.visits).sum();
    for (rank, s) in states.into_iter().enumerate() {
        marking.ranks[rank] = s.marks;
    }
    Ok(BalanceReport {
        sweeps_used,
        fell_back,
        sweep_changes,
        face_visits,
    })
}

/// Process the seed worklist until no rule fires. Returns whether anything
/// changed. Rules, for a local leaf E with mark m and face neighbor K:
///
/// * E refine-marked, K strictly coarser and not refine-marked: K is marked
///   for refinement (applied directly when K is local; K's owner applies the
///   mirror rules when K is a ghost).
/// * K strictly finer and refine-marked: E becomes refine-marked.
/// * E coarsen-marked and K strictly finer: E keeps (coarsening would
///   unbalance even if K itself coarsens, since K may not).
/// * E coarsen-marked and K refine-marked at the same level: E keeps.
fn sweep_to_fixed_point<const D: usize>(s: &mut SweepState<'_, D>) -> bool {
    let table = s.table;
    let view = s.view;
    let mut queue: VecDeque<u32> = VecDeque::new();
    let mut queued = vec![false; view.leaves.len()];
    for &i in &s.seeds {
        if !queued[i as usize] {
            queued[i as usize] = true;
            queue.push_back(i);
        }
    }
    s.seeds.clear();
    let mut changed_any = false;

    fn push_neighbors(
        table: &IntersectionTable,
        idx: usize,
        queue: &mut VecDeque<u32>,
        queued: &mut [bool],
    ) {
        for e in table.entries_of(idx) {
            if let Some(SideRef::Local(j)) = e.side {
                if !queued[j as usize] {
                    queued[j as usize] = true;
                    queue.push_back(j);
                }
            }
        }
    }

    while let Some(i) = queue.pop_front() {
        let i = i as usize;
        queued[i] = false;
        let level = view.leaves[i].quad.level;
        let m = s.marks[i];
        let mut cand = m;
        let mut raise_local: Vec<u32> = Vec::new();
        for e in table.entries_of(i) {
            let Some(side) = e.side else { continue };
            s.visits += 1;
            let (k_level, k_mark) = match side {
                SideRef::Local(j) => (view.leaves[j as usize].quad.level, s.marks[j as usize]),
                SideRef::Ghost(g) => {
                    (view.ghosts[g as usize].leaf.quad.level, s.gmarks[g as usize])
                }
            };
            if m == 1 && k_level < level && k_mark < 1 {
                if let SideRef::Local(j) = side {
                    raise_local.push(j);
                }
                // A coarser ghost neighbor is raised by its own rank, which
                // sees this refine mark after the next exchange.
            }
            if k_level > level && k_mark == 1 {
                cand = cand.max(1);
            }
            if m == -1 && k_level > level {
                cand = cand.max(0);
            }
            if m == -1 && k_level == level && k_mark == 1 {
                cand = cand.max(0);
            }
        }
        for j in raise_local {
            let j = j as usize;
            if s.marks[j] < 1 {
                s.marks[j] = 1;
                s.changes += 1;
                changed_any = true;
                if !queued[j] {
                    queued[j] = true;
                    queue.push_back(j as u32);
                }
                push_neighbors(table, j, &mut queue, &mut queued);
            }
        }
        if cand != m {
            s.marks[i] = cand;
            s.changes += 1;
            changed_any = true;
            push_neighbors(table, i, &mut queue, &mut queued);
        }
    }
    changed_any
}

/// Refine the forest to the coarsest face-2:1-balanced refinement of the
/// input (never coarsens). Works on arbitrarily unbalanced forests by
/// iterating forced-refinement sweeps to a global fixed point.
pub fn monolithic_balance<const D: usize>(
    forest: &mut Forest<D>,
    world: &mut World,
) -> Result<MonolithicReport, BalanceError> {
    let p = forest.num_ranks();
    let mut report = MonolithicReport {
        iterations: 0,
        face_visits: 0,
        refined: 0,
    };
    loop {
        report.iterations += 1;
        let layers = build_ghost(forest, world);
        let mut rank_ids: Vec<usize> = (0..p).collect();
        let swept: Vec<(Vec<i8>, u64)> = world.par_ranks(&mut rank_ids, |rank, _| {
            let view = RankView::new(forest, rank, &layers[rank]);
            let mut marks = vec![0i8; view.leaves.len()];
            let mut visits = 0u64;
            for (i, leaf) in view.leaves.iter().enumerate() {
                for face in 0..num_faces(D) {
                    let Some(resolved) = view.resolve_face(leaf, face) else {
                        continue;
                    };
                    match resolved.occupants {
                        FaceOccupants::Empty => {}
                        FaceOccupants::Same(_) | FaceOccupants::Coarser(_) => {
                            visits += 1;
                        }
                        FaceOccupants::Finer(children) => {
                            visits += children.len() as u64;
                            if children
                                .iter()
                                .any(|&s| view.quad_of(s).level >= leaf.quad.level + 2)
                            {
                                marks[i] = 1;
                            }
                        }
                    }
                }
            }
            (marks, visits)
        });
        let mut marking = Marking::zeros(forest);
        let mut forced = Vec::with_capacity(p);
        for (rank, (marks, visits)) in swept.into_iter().enumerate() {
            forced.push(marks.iter().filter(|&&v| v == 1).count() as u64);
            report.face_visits += visits;
            marking.ranks[rank] = marks;
        }
        let total = world.allreduce_sum(forced);
        if total == 0 {
            break;
        }
        report.refined += total;
        let mut handlers = vec![NoData; p];
        adapt_raw(forest, &marking, &mut handlers, world)?;
    }
    Ok(report)
}

/// Report every face-adjacent leaf pair (including across ranks and trees)
/// whose levels differ by two or more. Each unordered pair is reported once,
/// from the side with the smaller global key.
pub fn check_balanced<const D: usize>(
    forest: &Forest<D>,
    layers: &[GhostLayer<D>],
) -> Vec<BalanceViolation<D>> {
    let mut violations = Vec::new();
    for rank in 0..forest.num_ranks() {
        let view = RankView::new(forest, rank, &layers[rank]);
        for (i, leaf) in view.leaves.iter().enumerate() {
            for face in 0..num_faces(D) {
                let Some(resolved) = view.resolve_face(leaf, face) else {
                    continue;
                };
                let mut check = |side: SideRef| {
                    let other = view.leaf_of(side);
                    let diff = (leaf.quad.level as i32 - other.quad.level as i32).abs();
                    if diff >= 2 && leaf.key() < other.key() {
                        violations.push(BalanceViolation {
                            rank,
                            index: i,
                            face,
                            inside_level: leaf.quad.level,
                            outside_level: other.quad.level,
                        });
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
    violations
}
