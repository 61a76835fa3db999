//! Globally unique entity ids across ranks and codimensions, persistent
//! per-rank indices surviving adaptation, and consecutive leaf index sets.
//!
//! An entity id is a tuple of `d + 1` 32-bit integers: the tree-local
//! midpoint coordinates of the entity, canonicalized across tree boundaries,
//! plus a tag `tree * (d + 1) + codim`. Elements (codimension 0) instead
//! carry their globally unique leaf number, split across the coordinate
//! slots under a sentinel tag.

use crate::connectivity::Connectivity;
use crate::forest::{Forest, Leaf};
use crate::quadrant::{EntityCoordError, Quadrant};
use std::collections::hash_map::Entry;
use std::collections::{BinaryHeap, HashMap};

/// Globally unique entity identifier: `d` coordinate slots plus a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EntityId<const D: usize> {
    pub coords: [i32; D],
    pub tag: i32,
}

impl<const D: usize> EntityId<D> {
    /// Codimension encoded in the tag.
    pub fn codim(&self) -> usize {
        (self.tag as i64).rem_euclid(D as i64 + 1) as usize
    }

    /// Tree id encoded in the tag (`-1` for the element sentinel).
    pub fn tree(&self) -> i64 {
        (self.tag as i64).div_euclid(D as i64 + 1)
    }

    /// True for element (codimension 0) ids, which carry a global number.
    pub fn is_element(&self) -> bool {
        self.tag < 0
    }

    /// The global element number of a codimension-0 id.
    pub fn element_number(&self) -> Option<u64> {
        if !self.is_element() {
            return None;
        }
        let lo = self.coords[0] as u32 as u64;
        let hi = self.coords[1] as u32 as u64;
        Some(hi << 32 | lo)
    }
}

/// Compute the globally unique id of a sub-entity of a local leaf.
///
/// For codimension 0 the id encodes `offsets[rank] + index`, the global leaf
/// number. Higher codimensions use the entity midpoint, canonicalized into
/// the smallest owning tree.
pub fn entity_id<const D: usize>(
    forest: &Forest<D>,
    rank: usize,
    index: usize,
    codim: usize,
    sub: usize,
) -> Result<EntityId<D>, EntityCoordError> {
    let leaf = &forest.rank_leaves(rank)[index];
    if codim == 0 {
        if sub != 0 {
            return Err(EntityCoordError::BadSubEntity { codim, index: sub });
        }
        let number = forest.global_index(rank, index);
        return Ok(element_id(number));
    }
    leaf_entity_id(forest.connectivity(), leaf, codim, sub)
}

/// Codimension-0 id from a global element number.
pub fn element_id<const D: usize>(number: u64) -> EntityId<D> {
    let mut coords = [0i32; D];
    coords[0] = (number & 0xffff_ffff) as u32 as i32;
    coords[1] = (number >> 32) as u32 as i32;
    EntityId {
        coords,
        // Sentinel tree -1 with codimension 0.
        tag: -(D as i32 + 1),
    }
}

/// Id of a higher-codimension sub-entity of a leaf (rank-independent).
pub fn leaf_entity_id<const D: usize>(
    conn: &Connectivity<D>,
    leaf: &Leaf<D>,
    codim: usize,
    sub: usize,
) -> Result<EntityId<D>, EntityCoordError> {
    let mid = leaf.quad.entity_coordinates(codim, sub)?;
    let (tree, coords) = conn.canonicalize(leaf.tree as usize, mid);
    Ok(EntityId {
        coords,
        tag: tree as i32 * (D as i32 + 1) + codim as i32,
    })
}

/// Errors from persistent index lookups.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("entity id not present in the current index set")]
    Vanished,
}

/// Rank-local persistent indices per codimension: an entity keeps its index
/// as long as it exists; vanished indices are recycled lowest-first.
#[derive(Debug, Default, Clone)]
pub struct PersistentIndexSet<const D: usize> {
    maps: Vec<HashMap<EntityId<D>, u32>>,
    free: Vec<BinaryHeap<std::cmp::Reverse<u32>>>,
    next: Vec<u32>,
}

impl<const D: usize> PersistentIndexSet<D> {
    pub fn new() -> Self {
        PersistentIndexSet {
            maps: (0..=D).map(|_| HashMap::new()).collect(),
            free: (0..=D).map(|_| BinaryHeap::new()).collect(),
            next: vec![0; D + 1],
        }
    }

    /// Look up the persistent index of a current entity.
    pub fn index(&self, id: &EntityId<D>) -> Result<u32, IndexError> {
        self.maps[id.codim()]
            .get(id)
            .copied()
            .ok_or(IndexError::Vanished)
    }

    pub fn len(&self, codim: usize) -> usize {
        self.maps[codim].len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.iter().all(|m| m.is_empty())
    }

    /// Rebuild against the current leaves of one rank: surviving entities
    /// keep their indices, vanished ones are recycled, new entities get the
    /// lowest free index (or a fresh one).
    pub fn rebuild(&mut self, forest: &Forest<D>, rank: usize) {
        let conn = forest.connectivity();
        for codim in 1..=D {
            let mut seen: HashMap<EntityId<D>, ()> = HashMap::new();
            for leaf in forest.rank_leaves(rank) {
                for sub in 0..Quadrant::<D>::num_entities(codim) {
                    let id = leaf_entity_id(conn, leaf, codim, sub).expect("valid sub-entity");
                    seen.insert(id, ());
                }
            }
            // Drop vanished entities, recycling their indices.
            let map = &mut self.maps[codim];
            let free = &mut self.free[codim];
            let mut gone: Vec<EntityId<D>> = map
                .keys()
                .filter(|id| !seen.contains_key(id))
                .copied()
                .collect();
            gone.sort_unstable();
            for id in gone {
                let idx = map.remove(&id).expect("present");
                free.push(std::cmp::Reverse(idx));
            }
            // Assign new entities in deterministic (leaf, sub) order.
            for leaf in forest.rank_leaves(rank) {
                for sub in 0..Quadrant::<D>::num_entities(codim) {
                    let id = leaf_entity_id(conn, leaf, codim, sub).expect("valid sub-entity");
                    if let Entry::Vacant(e) = map.entry(id) {
                        let idx = match free.pop() {
                            Some(std::cmp::Reverse(i)) => i,
                            None => {
                                let i = self.next[codim];
                                self.next[codim] += 1;
                                i
                            }
                        };
                        e.insert(idx);
                    }
                }
            }
        }
    }
}

/// Consecutive `0..count` numbering of the current entities of one rank,
/// rebuilt (not preserved) after adaptation or repartitioning. Entities
/// shared by multiple elements receive the same index.
#[derive(Debug, Clone)]
pub struct LeafIndexSet {
    /// Per codim: per (leaf, sub) slot, the entity index.
    slots: Vec<Vec<u32>>,
    counts: Vec<u32>,
    subs: Vec<usize>,
}

impl LeafIndexSet {
    pub fn build<const D: usize>(forest: &Forest<D>, rank: usize) -> Self {
        let conn = forest.connectivity();
        let leaves = forest.rank_leaves(rank);
        let mut slots = Vec::with_capacity(D + 1);
        let mut counts = Vec::with_capacity(D + 1);
        let mut subs = Vec::with_capacity(D + 1);
        for codim in 0..=D {
            let per = Quadrant::<D>::num_entities(codim);
            subs.push(per);
            if codim == 0 {
                slots.push((0..leaves.len() as u32).collect());
                counts.push(leaves.len() as u32);
                continue;
            }
            let mut numbering: HashMap<EntityId<D>, u32> = HashMap::new();
            let mut table = Vec::with_capacity(leaves.len() * per);
            for leaf in leaves {
                for sub in 0..per {
                    let id = leaf_entity_id(conn, leaf, codim, sub).expect("valid sub-entity");
                    let next = numbering.len() as u32;
                    let idx = *numbering.entry(id).or_insert(next);
                    table.push(idx);
                }
            }
            counts.push(numbering.len() as u32);
            slots.push(table);
        }
        LeafIndexSet {
            slots,
            counts,
            subs,
        }
    }

    /// Number of distinct entities of a codimension.
    pub fn count(&self, codim: usize) -> usize {
        self.counts[codim] as usize
    }

    /// Consecutive index of sub-entity `sub` of leaf `leaf`.
    pub fn index(&self, codim: usize, leaf: usize, sub: usize) -> u32 {
        self.slots[codim][leaf * self.subs[codim] + sub]
    }
}
