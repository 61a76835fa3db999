//! Fixed-point quadrant/octant arithmetic and Morton (z-order) comparisons
//! inside a single tree.
//!
//! A tree spans the coordinate cube `[0, 2^30]^d`. A quadrant at refinement
//! level `l` has edge length `2^(30 - l)` and an anchor (minimum corner) whose
//! coordinates are multiples of that length. Coordinates are signed so that
//! hypothetical out-of-tree neighbors, one quadrant length beyond the cube on
//! any axis, stay representable.

use std::cmp::Ordering;

/// Edge length of the tree root, `2^30`.
pub const ROOT_LEN: i32 = 1 << 30;

/// Number of coordinate bits of the root length.
pub const ROOT_BITS: u32 = 30;

/// Deepest admissible refinement level for dimension `d`.
///
/// Chosen so that [`Quadrant::linear_id`] fits a 64-bit key: `2 * 30` bits in
/// 2D and `3 * 19` bits in 3D, plus a 5-bit level tag.
pub const fn max_level(d: usize) -> u8 {
    if d == 2 {
        29
    } else {
        19
    }
}

/// Quadrant length at refinement level `level`.
#[inline]
pub const fn level_len(level: u8) -> i32 {
    ROOT_LEN >> level
}

/// Number of children / corners of a `d`-cube.
#[inline]
pub const fn num_children(d: usize) -> usize {
    1 << d
}

/// Number of faces of a `d`-cube, ordered `-x, +x, -y, +y (, -z, +z)`.
#[inline]
pub const fn num_faces(d: usize) -> usize {
    2 * d
}

/// Axis a face index belongs to.
#[inline]
pub const fn face_axis(face: usize) -> usize {
    face / 2
}

/// 0 for the low (negative) face of its axis, 1 for the high face.
#[inline]
pub const fn face_sign(face: usize) -> usize {
    face & 1
}

/// The face opposite to `face` on the same axis.
#[inline]
pub const fn opposite_face(face: usize) -> usize {
    face ^ 1
}

/// A square (2D) or cubic (3D) element within one tree, identified by its
/// anchor coordinates and refinement level.
///
/// Child and corner numbering follow z-order: bit `k` of the index selects the
/// offset along axis `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Quadrant<const D: usize> {
    /// Anchor (minimum corner), tree-local fixed-point coordinates.
    pub coords: [i32; D],
    /// Refinement depth; 0 is the tree root.
    pub level: u8,
}

/// Errors from sub-entity coordinate queries.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EntityCoordError {
    #[error("codimension {0} out of range for dimension {1}")]
    BadCodim(usize, usize),
    #[error("sub-entity index {index} invalid for codimension {codim}")]
    BadSubEntity { codim: usize, index: usize },
}

impl<const D: usize> Quadrant<D> {
    /// The root quadrant covering the whole tree.
    pub const fn root() -> Self {
        Quadrant {
            coords: [0; D],
            level: 0,
        }
    }

    /// Construct from anchor and level. Debug-asserts alignment.
    pub fn new(coords: [i32; D], level: u8) -> Self {
        let q = Quadrant { coords, level };
        debug_assert!(q.is_aligned(), "anchor {coords:?} unaligned for level {level}");
        q
    }

    /// Edge length of this quadrant.
    #[inline]
    #[allow(clippy::len_without_is_empty)]
    pub const fn len(&self) -> i32 {
        level_len(self.level)
    }

    /// True if every coordinate is a multiple of the quadrant length.
    pub fn is_aligned(&self) -> bool {
        if self.level > max_level(D) {
            return false;
        }
        let mask = (self.len() - 1) as u32;
        self.coords.iter().all(|&c| c as u32 & mask == 0)
    }

    /// True if the quadrant lies inside the root cube `[0, 2^30)^d`.
    pub fn is_inside_root(&self) -> bool {
        self.coords
            .iter()
            .all(|&c| c >= 0 && c <= ROOT_LEN - self.len())
    }

    /// True for a well-formed leaf of a tree: aligned, in range, level ok.
    pub fn is_valid(&self) -> bool {
        self.level <= max_level(D) && self.is_aligned() && self.is_inside_root()
    }

    /// Child `i` (z-order), or `None` if the level limit is reached.
    pub fn child(&self, i: usize) -> Option<Self> {
        if self.level >= max_level(D) {
            return None;
        }
        debug_assert!(i < num_children(D));
        let half = self.len() >> 1;
        let mut coords = self.coords;
        for (axis, c) in coords.iter_mut().enumerate() {
            if i >> axis & 1 == 1 {
                *c += half;
            }
        }
        Some(Quadrant {
            coords,
            level: self.level + 1,
        })
    }

    /// All `2^d` children in ascending Morton order.
    pub fn children(&self) -> impl Iterator<Item = Self> + '_ {
        (0..num_children(D)).map(|i| self.child(i).expect("level overflow"))
    }

    /// The parent quadrant, or `None` for the root.
    pub fn parent(&self) -> Option<Self> {
        if self.level == 0 {
            return None;
        }
        let parent_len = level_len(self.level - 1);
        let mask = !(parent_len - 1);
        let mut coords = self.coords;
        for c in coords.iter_mut() {
            *c &= mask;
        }
        Some(Quadrant {
            coords,
            level: self.level - 1,
        })
    }

    /// Index of this quadrant among its siblings (z-order).
    pub fn sibling_index(&self) -> usize {
        debug_assert!(self.level > 0);
        let len = self.len();
        let mut idx = 0;
        for (axis, &c) in self.coords.iter().enumerate() {
            if c & len != 0 {
                idx |= 1 << axis;
            }
        }
        idx
    }

    /// The `2^d` quadrants sharing this quadrant's parent, in Morton order.
    pub fn siblings(&self) -> Option<impl Iterator<Item = Self> + '_> {
        self.parent().map(|p| {
            (0..num_children(D)).map(move |i| p.child(i).expect("level overflow"))
        })
    }

    /// Ancestor at the given coarser level (identity at own level).
    pub fn ancestor_at(&self, level: u8) -> Self {
        debug_assert!(level <= self.level);
        let mask = !(level_len(level) - 1);
        let mut coords = self.coords;
        for c in coords.iter_mut() {
            *c &= mask;
        }
        Quadrant { coords, level }
    }

    /// True if `self` strictly contains `other` (proper ancestor).
    pub fn is_ancestor(&self, other: &Self) -> bool {
        self.level < other.level && self.contains(other)
    }

    /// True if `other` lies inside `self` (including equality).
    pub fn contains(&self, other: &Self) -> bool {
        if self.level > other.level {
            return false;
        }
        let len = self.len() as i64;
        self.coords.iter().zip(other.coords.iter()).all(|(&a, &b)| {
            let (a, b) = (a as i64, b as i64);
            b >= a && b < a + len
        })
    }

    /// True if the two quadrants overlap (one contains the other).
    pub fn overlaps(&self, other: &Self) -> bool {
        self.contains(other) || other.contains(self)
    }

    /// The same-level neighbor across `face`. The result may lie outside the
    /// root cube, which signals a tree boundary to the caller.
    pub fn face_neighbor(&self, face: usize) -> Self {
        debug_assert!(face < num_faces(D));
        let mut coords = self.coords;
        let step = if face_sign(face) == 1 {
            self.len()
        } else {
            -self.len()
        };
        coords[face_axis(face)] += step;
        Quadrant {
            coords,
            level: self.level,
        }
    }

    /// Morton position of the anchor: coordinate bits interleaved, axis 0 in
    /// the lowest bit. Total order key for disjoint quadrants.
    #[inline]
    pub fn position(&self) -> u128 {
        debug_assert!(self.coords.iter().all(|&c| (0..ROOT_LEN).contains(&c)));
        interleave::<D>(self.coords)
    }

    /// Position of the last unit cell covered by this quadrant.
    pub fn last_position(&self) -> u128 {
        let mut coords = self.coords;
        for c in coords.iter_mut() {
            *c += self.len() - 1;
        }
        interleave::<D>(coords)
    }

    /// Depth-first pre-order: an ancestor sorts before its descendants,
    /// disjoint quadrants sort by interleaved-bit (z) order.
    pub fn morton_cmp(&self, other: &Self) -> Ordering {
        self.position()
            .cmp(&other.position())
            .then(self.level.cmp(&other.level))
    }

    /// 64-bit space-filling-curve key: the Morton index of the quadrant among
    /// all quadrants of its level, tagged with the level in the low 5 bits.
    /// Injective over all valid quadrants; consistent with [`Self::morton_cmp`]
    /// at equal level.
    pub fn linear_id(&self) -> u64 {
        let shift = D as u32 * (ROOT_BITS - self.level as u32);
        let idx = self.position() >> shift;
        ((idx as u64) << 5) | self.level as u64
    }

    /// The `idx`-th quadrant of a uniformly refined tree at `level`, counted
    /// in Morton order. Inverse of the index part of [`Self::linear_id`].
    pub fn from_morton_index(level: u8, idx: u64) -> Self {
        debug_assert!(level <= max_level(D));
        debug_assert!(idx < 1u64 << (D as u32 * level as u32));
        let mut coords = [0i32; D];
        for bit in 0..level as u32 {
            for (axis, c) in coords.iter_mut().enumerate() {
                let src = bit * D as u32 + axis as u32;
                *c |= ((idx >> src & 1) as i32) << bit;
            }
        }
        for c in coords.iter_mut() {
            *c <<= ROOT_BITS - level as u32;
        }
        Quadrant { coords, level }
    }

    /// Tree-local midpoint coordinates of a sub-entity of this quadrant.
    ///
    /// `codim` 0 is the volume (one sub-entity), `codim == d` the corners
    /// (`2^d`, z-order), `codim` 1 the faces (`2d`, `-x,+x,-y,+y(,-z,+z)`). In
    /// 3D, `codim` 2 addresses the 12 edges, grouped by axis (edges 0..4 run
    /// along x, 4..8 along y, 8..12 along z) with the two transverse offsets
    /// in z-order of the lower axis first.
    pub fn entity_coordinates(
        &self,
        codim: usize,
        sub: usize,
    ) -> Result<[i32; D], EntityCoordError> {
        if codim > D {
            return Err(EntityCoordError::BadCodim(codim, D));
        }
        let len = self.len();
        let half = len >> 1;
        let bad = || EntityCoordError::BadSubEntity { codim, index: sub };
        let mut out = self.coords;
        match (D, codim) {
            (_, 0) => {
                if sub != 0 {
                    return Err(bad());
                }
                for c in out.iter_mut() {
                    *c += half;
                }
            }
            (d, c) if c == d => {
                // Corners.
                if sub >= num_children(D) {
                    return Err(bad());
                }
                for (axis, c) in out.iter_mut().enumerate() {
                    if sub >> axis & 1 == 1 {
                        *c += len;
                    }
                }
            }
            (_, 1) => {
                // Faces (2D: the edges).
                if sub >= num_faces(D) {
                    return Err(bad());
                }
                for c in out.iter_mut() {
                    *c += half;
                }
                let axis = face_axis(sub);
                out[axis] = self.coords[axis] + if face_sign(sub) == 1 { len } else { 0 };
            }
            (3, 2) => {
                // 3D edges.
                if sub >= 12 {
                    return Err(bad());
                }
                let axis = sub / 4;
                let offs = sub % 4;
                let t: [usize; 2] = match axis {
                    0 => [1, 2],
                    1 => [0, 2],
                    _ => [0, 1],
                };
                out[axis] = self.coords[axis] + half;
                for (bit, &ta) in t.iter().enumerate() {
                    out[ta] = self.coords[ta] + if offs >> bit & 1 == 1 { len } else { 0 };
                }
            }
            _ => return Err(EntityCoordError::BadCodim(codim, D)),
        }
        Ok(out)
    }

    /// Number of sub-entities this quadrant has of the given codimension.
    pub fn num_entities(codim: usize) -> usize {
        match (D, codim) {
            (_, 0) => 1,
            (d, c) if c == d => num_children(D),
            (_, 1) => num_faces(D),
            (3, 2) => 12,
            _ => 0,
        }
    }
}

/// Interleave the low 30 bits of each coordinate, axis 0 lowest.
#[inline]
fn interleave<const D: usize>(coords: [i32; D]) -> u128 {
    if D == 2 {
        spread2(coords[0] as u32) | spread2(coords[1] as u32) << 1
    } else {
        let mut key = 0u128;
        for bit in (0..ROOT_BITS).rev() {
            for axis in (0..D).rev() {
                key = key << 1 | (coords[axis] as u128 >> bit & 1);
            }
        }
        key
    }
}

/// Spread the low 32 bits of `x` into the even bits of a `u128`.
#[inline]
fn spread2(x: u32) -> u128 {
    let mut v = x as u64;
    v = (v | v << 16) & 0x0000_ffff_0000_ffff;
    v = (v | v << 8) & 0x00ff_00ff_00ff_00ff;
    v = (v | v << 4) & 0x0f0f_0f0f_0f0f_0f0f;
    v = (v | v << 2) & 0x3333_3333_3333_3333;
    v = (v | v << 1) & 0x5555_5555_5555_5555;
    v as u128
}

/// True if the `2^d` quadrants are exactly the Morton-ordered children of one
/// parent.
pub fn is_family<const D: usize>(quads: &[Quadrant<D>]) -> bool {
    if quads.len() != num_children(D) {
        return false;
    }
    if quads[0].level == 0 {
        return false;
    }
    let parent = match quads[0].parent() {
        Some(p) => p,
        None => return false,
    };
    quads
        .iter()
        .enumerate()
        .all(|(i, q)| parent.child(i) == Some(*q))
}
