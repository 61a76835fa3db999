//! Immutable inter-tree topology: per-tree face neighbors with orientations,
//! builders from primitive shapes and from a coarse-mesh description, and
//! cross-tree coordinate canonicalization.
//!
//! Trees are topological squares/cubes glued along whole faces. The gluing of
//! two faces is stored as a single code combining the neighbor's face index
//! and an orientation, from which an affine signed-permutation transform
//! between the two tree coordinate systems is derived on demand. Boundary
//! faces map to the owning tree itself with the identity code.

use crate::quadrant::{face_axis, face_sign, num_children, num_faces, Quadrant, ROOT_LEN};
use std::collections::BTreeSet;

/// Errors from coarse-mesh construction and validation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MeshError {
    #[error("extent must be positive on every axis")]
    ZeroExtent,
    #[error("cube {0} lists vertex {1} outside the vertex array")]
    VertexOutOfRange(usize, usize),
    #[error("cube {0} has repeated vertices")]
    RepeatedVertex(usize),
    #[error("cube {0} is degenerate")]
    DegenerateCube(usize),
    #[error("cube {0} has negative orientation")]
    InvertedCube(usize),
    #[error("face shared by more than two cubes (cubes {0} and {1} among them)")]
    NonManifoldFace(usize, usize),
    #[error("cubes {0} and {1} share a non-conforming (partially overlapping) face")]
    NonConformingFace(usize, usize),
    #[error("corner matching between cubes {0} and {1} is not a face isometry")]
    TwistedFace(usize, usize),
    #[error("mesh input: {0}")]
    BadInput(String),
    #[error("connectivity invariant violated: {0}")]
    Invalid(String),
}

/// What lies on the other side of a tree face.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaceConnection {
    /// Physical boundary of the domain.
    Boundary,
    /// Another tree (possibly the same tree across a periodic identification).
    Neighbor {
        tree: usize,
        face: usize,
        orientation: u8,
    },
}

/// Affine signed-permutation map between two tree coordinate systems:
/// `y[j] = offset[j] - x[src_axis[j]] or y[j] = offset[j] + x[src_axis[j]]`.
///
/// Arithmetic is in `i64` because intermediate values reach `2 * 2^30`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FaceTransform<const D: usize> {
    pub src_axis: [usize; D],
    pub negate: [bool; D],
    pub offset: [i64; D],
}

impl<const D: usize> FaceTransform<D> {
    pub fn apply(&self, x: [i64; D]) -> [i64; D] {
        let mut y = [0i64; D];
        for j in 0..D {
            let v = x[self.src_axis[j]];
            y[j] = self.offset[j] + if self.negate[j] { -v } else { v };
        }
        y
    }

    pub fn apply_point(&self, x: [i32; D]) -> [i32; D] {
        let mut x64 = [0i64; D];
        for (a, b) in x64.iter_mut().zip(x.iter()) {
            *a = *b as i64;
        }
        let y = self.apply(x64);
        let mut out = [0i32; D];
        for (a, b) in out.iter_mut().zip(y.iter()) {
            *a = i32::try_from(*b).expect("transformed coordinate out of range");
        }
        out
    }

    /// Transform a quadrant-shaped box: both extreme corners are mapped and
    /// the new anchor is their componentwise minimum. The level is unchanged.
    pub fn apply_quadrant(&self, q: &Quadrant<D>) -> Quadrant<D> {
        let len = q.len() as i64;
        let mut lo = [0i64; D];
        let mut hi = [0i64; D];
        for a in 0..D {
            lo[a] = q.coords[a] as i64;
            hi[a] = q.coords[a] as i64 + len;
        }
        let a = self.apply(lo);
        let b = self.apply(hi);
        let mut coords = [0i32; D];
        for j in 0..D {
            coords[j] = i32::try_from(a[j].min(b[j])).expect("coordinate out of range");
        }
        Quadrant {
            coords,
            level: q.level,
        }
    }

    pub fn inverse(&self) -> Self {
        let mut inv = FaceTransform {
            src_axis: [0; D],
            negate: [false; D],
            offset: [0; D],
        };
        for j in 0..D {
            let i = self.src_axis[j];
            inv.src_axis[i] = j;
            inv.negate[i] = self.negate[j];
            inv.offset[i] = if self.negate[j] {
                self.offset[j]
            } else {
                -self.offset[j]
            };
        }
        inv
    }
}

/// Tangent axes of a face, in increasing order.
fn tangent_axes<const D: usize>(axis: usize) -> ([usize; 2], usize) {
    let mut t = [0usize; 2];
    let mut n = 0;
    for a in 0..D {
        if a != axis {
            t[n] = a;
            n += 1;
        }
    }
    (t, n)
}

/// Number of distinct orientation codes per face pairing.
pub const fn orientation_count(d: usize) -> u8 {
    if d == 2 {
        2
    } else {
        8
    }
}

/// Build the coordinate transform for crossing from a tree through `face`
/// into a neighbor through `nbr_face` with the given orientation code.
///
/// Orientation encodes an isometry of the shared face: in 2D one flip bit; in
/// 3D `swap * 4 + flips`, where `swap` exchanges the two tangent axes and bit
/// `k` of `flips` mirrors the k-th tangent axis of the source face.
pub fn face_transform<const D: usize>(
    face: usize,
    nbr_face: usize,
    orientation: u8,
) -> FaceTransform<D> {
    let a = face_axis(face);
    let s = face_sign(face);
    let b = face_axis(nbr_face);
    let sp = face_sign(nbr_face);
    let l = ROOT_LEN as i64;

    let mut t = FaceTransform {
        src_axis: [0; D],
        negate: [false; D],
        offset: [0; D],
    };
    // Normal direction: penetration depth beyond `face` becomes depth inside
    // the neighbor on the `nbr_face` side.
    t.src_axis[b] = a;
    match (s, sp) {
        (1, 0) => {
            t.negate[b] = false;
            t.offset[b] = -l;
        }
        (0, 0) => {
            t.negate[b] = true;
            t.offset[b] = 0;
        }
        (1, 1) => {
            t.negate[b] = true;
            t.offset[b] = 2 * l;
        }
        _ => {
            t.negate[b] = false;
            t.offset[b] = l;
        }
    }
    // Tangential directions per the orientation code.
    let (tf, nt) = tangent_axes::<D>(a);
    let (tg, _) = tangent_axes::<D>(b);
    let swap = D == 3 && orientation >= 4;
    let flips = orientation as usize & ((1 << nt) - 1);
    for k in 0..nt {
        let sigma = if swap { nt - 1 - k } else { k };
        let j = tg[sigma];
        t.src_axis[j] = tf[k];
        if flips >> k & 1 == 1 {
            t.negate[j] = true;
            t.offset[j] = l;
        }
    }
    t
}

/// Recover the orientation code of a transform that crosses `face` into
/// `nbr_face` (the inverse operation of [`face_transform`]).
fn orientation_of_transform<const D: usize>(
    face: usize,
    nbr_face: usize,
    t: &FaceTransform<D>,
) -> u8 {
    let (tf, nt) = tangent_axes::<D>(face_axis(face));
    let (tg, _) = tangent_axes::<D>(face_axis(nbr_face));
    let mut flips = 0u8;
    let mut sigma0 = 0;
    for k in 0..nt {
        let j = tg
            .iter()
            .take(nt)
            .copied()
            .find(|&j| t.src_axis[j] == tf[k])
            .expect("transform does not map the face tangents");
        let sigma = tg.iter().position(|&g| g == j).expect("tangent mismatch");
        if k == 0 {
            sigma0 = sigma;
        }
        if t.negate[j] {
            flips |= 1 << k;
        }
    }
    if D == 3 && sigma0 != 0 {
        4 + flips
    } else {
        flips
    }
}

/// Immutable inter-tree topology with vertex geometry.
///
/// `tree_vertices` lists, per tree, the `2^d` global vertex indices of the
/// tree corners in z-order; the multilinear span of their coordinates is the
/// tree's geometric image.
#[derive(Debug, Clone)]
pub struct Connectivity<const D: usize> {
    num_trees: usize,
    vertices: Vec<[f64; D]>,
    tree_vertices: Vec<u32>,
    tree_neighbors: Vec<u32>,
    tree_faces: Vec<u8>,
}

impl<const D: usize> Connectivity<D> {
    pub fn num_trees(&self) -> usize {
        self.num_trees
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex(&self, v: usize) -> [f64; D] {
        self.vertices[v]
    }

    /// Global vertex indices of a tree's corners, z-order.
    pub fn tree_corners(&self, tree: usize) -> &[u32] {
        let n = num_children(D);
        &self.tree_vertices[tree * n..(tree + 1) * n]
    }

    pub fn connection(&self, tree: usize, face: usize) -> FaceConnection {
        let idx = tree * num_faces(D) + face;
        let nbr = self.tree_neighbors[idx] as usize;
        let code = self.tree_faces[idx] as usize;
        if nbr == tree && code == face {
            FaceConnection::Boundary
        } else {
            FaceConnection::Neighbor {
                tree: nbr,
                face: code % num_faces(D),
                orientation: (code / num_faces(D)) as u8,
            }
        }
    }

    /// The transform crossing `face` of `tree`, or `None` on the boundary.
    pub fn transform(&self, tree: usize, face: usize) -> Option<(usize, FaceTransform<D>)> {
        match self.connection(tree, face) {
            FaceConnection::Boundary => None,
            FaceConnection::Neighbor {
                tree: nbr,
                face: g,
                orientation,
            } => Some((nbr, face_transform::<D>(face, g, orientation))),
        }
    }

    /// Express a quadrant that touches or crosses `face` of `tree` in the
    /// neighbor tree's coordinates. `None` signals the physical boundary.
    pub fn transform_quadrant(
        &self,
        tree: usize,
        face: usize,
        q: &Quadrant<D>,
    ) -> Option<(usize, Quadrant<D>)> {
        self.transform(tree, face)
            .map(|(nbr, t)| (nbr, t.apply_quadrant(q)))
    }

    /// Express a point on or beyond `face` of `tree` in the neighbor tree's
    /// coordinates. `None` signals the physical boundary.
    pub fn transform_point(
        &self,
        tree: usize,
        face: usize,
        p: [i32; D],
    ) -> Option<(usize, [i32; D])> {
        self.transform(tree, face)
            .map(|(nbr, t)| (nbr, t.apply_point(p)))
    }

    /// Canonical representative of a point given in tree-local coordinates:
    /// the smallest owning tree index, ties broken by lexicographically
    /// smallest local coordinates. Interior points are returned unchanged.
    pub fn canonicalize(&self, tree: usize, coords: [i32; D]) -> (usize, [i32; D]) {
        debug_assert!(coords.iter().all(|&c| (0..=ROOT_LEN).contains(&c)));
        let mut seen = BTreeSet::new();
        let mut queue = vec![(tree, coords)];
        seen.insert((tree, coords));
        while let Some((t, x)) = queue.pop() {
            for face in 0..num_faces(D) {
                let axis = face_axis(face);
                let wall = if face_sign(face) == 1 { ROOT_LEN } else { 0 };
                if x[axis] != wall {
                    continue;
                }
                if let Some((nt, nx)) = self.transform_point(t, face, x) {
                    if seen.insert((nt, nx)) {
                        queue.push((nt, nx));
                    }
                }
            }
        }
        *seen.iter().next().expect("orbit contains the seed")
    }

    /// Multilinear map from the tree reference cube `[0,1]^d` to geometry.
    pub fn map_reference(&self, tree: usize, xi: [f64; D]) -> [f64; D] {
        let corners = self.tree_corners(tree);
        let mut out = [0.0; D];
        for (c, &v) in corners.iter().enumerate() {
            let mut w = 1.0;
            for (axis, &x) in xi.iter().enumerate() {
                w *= if c >> axis & 1 == 1 { x } else { 1.0 - x };
            }
            let p = self.vertices[v as usize];
            for a in 0..D {
                out[a] += w * p[a];
            }
        }
        out
    }

    /// Geometric position of a tree-local fixed-point coordinate.
    pub fn map_coordinate(&self, tree: usize, coords: [i32; D]) -> [f64; D] {
        let mut xi = [0.0; D];
        for a in 0..D {
            xi[a] = coords[a] as f64 / ROOT_LEN as f64;
        }
        self.map_reference(tree, xi)
    }

    /// Geometric barycenter of a quadrant of a tree.
    pub fn quadrant_center(&self, tree: usize, q: &Quadrant<D>) -> [f64; D] {
        let mut xi = [0.0; D];
        let scale = 1.0 / ROOT_LEN as f64;
        for a in 0..D {
            xi[a] = (q.coords[a] as f64 + 0.5 * q.len() as f64) * scale;
        }
        self.map_reference(tree, xi)
    }

    /// Unit square / unit cube: a single tree, all faces boundary.
    pub fn unit_cube() -> Self {
        Self::brick([1; D], [false; D])
    }

    /// `dims[0] * dims[1] (* dims[2])` trees on a Cartesian lattice filling
    /// the unit square/cube, with optional periodic identification per axis.
    pub fn brick(dims: [usize; D], periodic: [bool; D]) -> Self {
        let mut upper = [0.0; D];
        for v in upper.iter_mut() {
            *v = 1.0;
        }
        Self::brick_in(dims, [0.0; D], upper, periodic).expect("brick extents are positive")
    }

    /// Brick filling the box `[lower, upper]`, tree (i, j, k) at index
    /// `i + dims[0] * (j + dims[1] * k)`. Interior and periodic faces connect
    /// with identity orientation.
    pub fn brick_in(
        dims: [usize; D],
        lower: [f64; D],
        upper: [f64; D],
        periodic: [bool; D],
    ) -> Result<Self, MeshError> {
        if dims.contains(&0) {
            return Err(MeshError::ZeroExtent);
        }
        let num_trees: usize = dims.iter().product();
        let nf = num_faces(D);
        let nc = num_children(D);

        // Vertex lattice.
        let mut vdims = [0usize; D];
        for a in 0..D {
            vdims[a] = dims[a] + 1;
        }
        let num_verts: usize = vdims.iter().product();
        let mut vertices = Vec::with_capacity(num_verts);
        for flat in 0..num_verts {
            let mut rem = flat;
            let mut p = [0.0; D];
            for a in 0..D {
                let i = rem % vdims[a];
                rem /= vdims[a];
                p[a] = lower[a] + (upper[a] - lower[a]) * i as f64 / dims[a] as f64;
            }
            vertices.push(p);
        }
        let vert_index = |idx: [usize; D]| -> usize {
            let mut flat = 0;
            for a in (0..D).rev() {
                flat = flat * vdims[a] + idx[a];
            }
            flat
        };
        let tree_index = |idx: [usize; D]| -> usize {
            let mut flat = 0;
            for a in (0..D).rev() {
                flat = flat * dims[a] + idx[a];
            }
            flat
        };

        let mut tree_vertices = Vec::with_capacity(num_trees * nc);
        let mut tree_neighbors = vec![0u32; num_trees * nf];
        let mut tree_faces = vec![0u8; num_trees * nf];

        let mut idx = [0usize; D];
        for t in 0..num_trees {
            let mut rem = t;
            for a in 0..D {
                idx[a] = rem % dims[a];
                rem /= dims[a];
            }
            for c in 0..nc {
                let mut vi = idx;
                for (a, v) in vi.iter_mut().enumerate() {
                    *v += c >> a & 1;
                }
                tree_vertices.push(vert_index(vi) as u32);
            }
            for face in 0..nf {
                let a = face_axis(face);
                let fwd = face_sign(face) == 1;
                let at_edge = if fwd { idx[a] + 1 == dims[a] } else { idx[a] == 0 };
                let slot = t * nf + face;
                if at_edge && !periodic[a] {
                    tree_neighbors[slot] = t as u32;
                    tree_faces[slot] = face as u8;
                    continue;
                }
                let mut nidx = idx;
                nidx[a] = if fwd {
                    (idx[a] + 1) % dims[a]
                } else {
                    (idx[a] + dims[a] - 1) % dims[a]
                };
                tree_neighbors[slot] = tree_index(nidx) as u32;
                // Identity orientation, neighbor face is the opposite one.
                tree_faces[slot] = (face ^ 1) as u8;
            }
        }

        let conn = Connectivity {
            num_trees,
            vertices,
            tree_vertices,
            tree_neighbors,
            tree_faces,
        };
        conn.validate().map(|_| conn)
    }

    /// Build connectivity from a coarse-mesh description: vertex coordinates
    /// plus one `2^d`-tuple of vertex indices per cube, corners in z-order.
    /// Any two cubes sharing a full face are connected with the orientation
    /// derived from their corner matching; all other faces are boundary.
    pub fn from_mesh(vertices: &[[f64; D]], cubes: &[Vec<usize>]) -> Result<Self, MeshError> {
        let nf = num_faces(D);
        let nc = num_children(D);
        if cubes.is_empty() || vertices.is_empty() {
            return Err(MeshError::ZeroExtent);
        }
        for (ci, cube) in cubes.iter().enumerate() {
            if cube.len() != nc {
                return Err(MeshError::BadInput(format!(
                    "cube {ci} lists {} vertices, expected {nc}",
                    cube.len()
                )));
            }
            for &v in cube {
                if v >= vertices.len() {
                    return Err(MeshError::VertexOutOfRange(ci, v));
                }
            }
            let mut sorted = cube.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != nc {
                return Err(MeshError::RepeatedVertex(ci));
            }
            // Orientation at corner 0: edge vectors along each axis.
            let p0 = vertices[cube[0]];
            let mut edges = [[0.0; 3]; 3];
            for a in 0..D {
                let pa = vertices[cube[1 << a]];
                for (x, e) in edges[a].iter_mut().enumerate().take(D) {
                    *e = pa[x] - p0[x];
                }
            }
            let det = if D == 2 {
                edges[0][0] * edges[1][1] - edges[0][1] * edges[1][0]
            } else {
                edges[0][0] * (edges[1][1] * edges[2][2] - edges[1][2] * edges[2][1])
                    - edges[0][1] * (edges[1][0] * edges[2][2] - edges[1][2] * edges[2][0])
                    + edges[0][2] * (edges[1][0] * edges[2][1] - edges[1][1] * edges[2][0])
            };
            if det.abs() < 1e-14 {
                return Err(MeshError::DegenerateCube(ci));
            }
            if det < 0.0 {
                return Err(MeshError::InvertedCube(ci));
            }
        }

        // Face corners of a cube through a face, in face-corner z-order.
        let face_corner_vertices = |cube: &[usize], face: usize| -> Vec<usize> {
            let a = face_axis(face);
            let s = face_sign(face);
            let (tang, nt) = tangent_axes::<D>(a);
            (0..1usize << nt)
                .map(|fc| {
                    let mut corner = s << a;
                    for k in 0..nt {
                        corner |= (fc >> k & 1) << tang[k];
                    }
                    cube[corner]
                })
                .collect()
        };

        // Group faces by their sorted vertex set.
        use std::collections::HashMap;
        let mut by_key: HashMap<Vec<usize>, Vec<(usize, usize)>> = HashMap::new();
        for (ci, cube) in cubes.iter().enumerate() {
            for f in 0..nf {
                let mut key = face_corner_vertices(cube, f);
                key.sort_unstable();
                by_key.entry(key).or_default().push((ci, f));
            }
        }

        let num_trees = cubes.len();
        let mut tree_neighbors: Vec<u32> = (0..num_trees as u32)
            .flat_map(|t| std::iter::repeat_n(t, nf))
            .collect();
        let mut tree_faces: Vec<u8> = (0..num_trees)
            .flat_map(|_| (0..nf as u8).collect::<Vec<_>>())
            .collect();

        for shares in by_key.values() {
            if shares.len() > 2 {
                return Err(MeshError::NonManifoldFace(shares[0].0, shares[1].0));
            }
            if shares.len() < 2 {
                continue;
            }
            let (ca, fa) = shares[0];
            let (cb, fb) = shares[1];
            let va = face_corner_vertices(&cubes[ca], fa);
            let vb = face_corner_vertices(&cubes[cb], fb);
            // Corner matching by vertex identity.
            let matching: Vec<usize> = va
                .iter()
                .map(|v| vb.iter().position(|w| w == v).expect("shared face"))
                .collect();
            let orient_ab =
                orientation_from_matching::<D>(&matching).ok_or(MeshError::TwistedFace(ca, cb))?;
            let t_ab = face_transform::<D>(fa, fb, orient_ab);
            let orient_ba = orientation_of_transform::<D>(fb, fa, &t_ab.inverse());

            tree_neighbors[ca * nf + fa] = cb as u32;
            tree_faces[ca * nf + fa] = (orient_ab as usize * nf + fb) as u8;
            tree_neighbors[cb * nf + fb] = ca as u32;
            tree_faces[cb * nf + fb] = (orient_ba as usize * nf + fa) as u8;
        }

        // Best-effort detection of partially overlapping (hanging) faces
        // among the remaining boundary faces.
        let boundary: Vec<(usize, usize)> = (0..num_trees)
            .flat_map(|t| (0..nf).map(move |f| (t, f)))
            .filter(|&(t, f)| {
                tree_neighbors[t * nf + f] as usize == t && tree_faces[t * nf + f] as usize == f
            })
            .collect();
        for (i, &(ta, fa)) in boundary.iter().enumerate() {
            for &(tb, fb) in boundary[i + 1..].iter() {
                if ta == tb {
                    continue;
                }
                let va = face_corner_vertices(&cubes[ta], fa);
                let vb = face_corner_vertices(&cubes[tb], fb);
                if faces_partially_overlap::<D>(vertices, &va, &vb) {
                    return Err(MeshError::NonConformingFace(ta, tb));
                }
            }
        }

        let mut tree_vertices = Vec::with_capacity(num_trees * nc);
        for cube in cubes {
            for &v in cube {
                tree_vertices.push(v as u32);
            }
        }
        let conn = Connectivity {
            num_trees,
            vertices: vertices.to_vec(),
            tree_vertices,
            tree_neighbors,
            tree_faces,
        };
        conn.validate().map(|_| conn)
    }

    /// Read a coarse-mesh dictionary file (see [`Self::from_mesh_text`]).
    pub fn from_mesh_file(path: &std::path::Path) -> Result<Self, MeshError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| MeshError::BadInput(format!("{}: {e}", path.display())))?;
        Self::from_mesh_text(&text)
    }

    /// Parse the coarse-mesh dictionary text format: an object with keys
    /// `"vertices"` (list of d-dimensional points) and `"cubes"` (list of
    /// `2^d`-tuples of vertex indices). Whitespace-insensitive.
    pub fn from_mesh_text(text: &str) -> Result<Self, MeshError> {
        let value: serde_json::Value = serde_json::from_str(text)
            .map_err(|e| MeshError::BadInput(format!("not a valid mesh dictionary: {e}")))?;
        let obj = value
            .as_object()
            .ok_or_else(|| MeshError::BadInput("expected an object".into()))?;
        let verts = obj
            .get("vertices")
            .and_then(|v| v.as_array())
            .ok_or_else(|| MeshError::BadInput("missing \"vertices\" list".into()))?;
        let cubes = obj
            .get("cubes")
            .and_then(|v| v.as_array())
            .ok_or_else(|| MeshError::BadInput("missing \"cubes\" list".into()))?;
        let mut vertices = Vec::with_capacity(verts.len());
        for (i, v) in verts.iter().enumerate() {
            let coords = v
                .as_array()
                .ok_or_else(|| MeshError::BadInput(format!("vertex {i} is not a list")))?;
            if coords.len() != D {
                return Err(MeshError::BadInput(format!(
                    "vertex {i} has {} coordinates, expected {D}",
                    coords.len()
                )));
            }
            let mut p = [0.0; D];
            for (a, c) in coords.iter().enumerate() {
                p[a] = c
                    .as_f64()
                    .ok_or_else(|| MeshError::BadInput(format!("vertex {i} coordinate {a}")))?;
            }
            vertices.push(p);
        }
        let mut cube_list = Vec::with_capacity(cubes.len());
        for (i, c) in cubes.iter().enumerate() {
            let tuple = c
                .as_array()
                .ok_or_else(|| MeshError::BadInput(format!("cube {i} is not a list")))?;
            let mut ids = Vec::with_capacity(tuple.len());
            for v in tuple {
                let id = v
                    .as_u64()
                    .ok_or_else(|| MeshError::BadInput(format!("cube {i} vertex index")))?;
                ids.push(id as usize);
            }
            cube_list.push(ids);
        }
        Self::from_mesh(&vertices, &cube_list)
    }

    /// Check structural invariants: index ranges and mutual-inverse face
    /// connections with mutually inverse orientation actions.
    pub fn validate(&self) -> Result<(), MeshError> {
        let nf = num_faces(D);
        for t in 0..self.num_trees {
            for &v in self.tree_corners(t) {
                if v as usize >= self.vertices.len() {
                    return Err(MeshError::Invalid(format!(
                        "tree {t} references vertex {v} out of range"
                    )));
                }
            }
            for f in 0..nf {
                match self.connection(t, f) {
                    FaceConnection::Boundary => {}
                    FaceConnection::Neighbor {
                        tree: nbr,
                        face: g,
                        orientation,
                    } => {
                        if nbr >= self.num_trees {
                            return Err(MeshError::Invalid(format!(
                                "tree {t} face {f} references tree {nbr} out of range"
                            )));
                        }
                        let back = self.connection(nbr, g);
                        let ok = match back {
                            FaceConnection::Neighbor {
                                tree: bt,
                                face: bf,
                                orientation: bo,
                            } => {
                                bt == t
                                    && bf == f
                                    && face_transform::<D>(g, f, bo)
                                        == face_transform::<D>(f, g, orientation).inverse()
                            }
                            FaceConnection::Boundary => false,
                        };
                        if !ok {
                            return Err(MeshError::Invalid(format!(
                                "face connection tree {t} face {f} -> tree {nbr} face {g} \
                                 is not mutually inverse"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Derive the orientation code from a face-corner matching, or `None` if the
/// matching is not an isometry of the reference face.
fn orientation_from_matching<const D: usize>(matching: &[usize]) -> Option<u8> {
    let nt = D - 1;
    let swaps: &[bool] = if D == 3 { &[false, true] } else { &[false] };
    for &swap in swaps {
        let sigma = |k: usize| if swap { nt - 1 - k } else { k };
        // Flips follow from the image of face corner 0.
        let mut flips = 0usize;
        for k in 0..nt {
            if matching[0] >> sigma(k) & 1 == 1 {
                flips |= 1 << k;
            }
        }
        let ok = (0..1usize << nt).all(|c| {
            let mut image = 0usize;
            for k in 0..nt {
                let bit = (c >> k & 1) ^ (flips >> k & 1);
                image |= bit << sigma(k);
            }
            matching[c] == image
        });
        if ok {
            return Some(if swap { 4 + flips as u8 } else { flips as u8 });
        }
    }
    None
}

/// Best-effort geometric test of whether two boundary faces of different
/// cubes overlap without matching exactly (a non-conforming T junction). In
/// 2D the exact segment test is used; in 3D an axis-aligned coplanarity and
/// box-overlap heuristic.
fn faces_partially_overlap<const D: usize>(
    vertices: &[[f64; D]],
    va: &[usize],
    vb: &[usize],
) -> bool {
    const EPS: f64 = 1e-12;
    if D == 2 {
        let (p, q) = (vertices[va[0]], vertices[va[1]]);
        let (r, s) = (vertices[vb[0]], vertices[vb[1]]);
        let cross = |o: [f64; D], a: [f64; D], b: [f64; D]| -> f64 {
            (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
        };
        if cross(p, q, r).abs() > EPS || cross(p, q, s).abs() > EPS {
            return false;
        }
        // 1D overlap of positive length along the dominant axis.
        let axis = if (q[0] - p[0]).abs() >= (q[1] - p[1]).abs() {
            0
        } else {
            1
        };
        let (a0, a1) = (p[axis].min(q[axis]), p[axis].max(q[axis]));
        let (b0, b1) = (r[axis].min(s[axis]), r[axis].max(s[axis]));
        a0.max(b0) + EPS < a1.min(b1)
    } else {
        // Coplanar axis-aligned faces with positively overlapping boxes.
        let mut lo_a = [f64::INFINITY; D];
        let mut hi_a = [f64::NEG_INFINITY; D];
        let mut lo_b = lo_a;
        let mut hi_b = hi_a;
        for &v in va {
            for a in 0..D {
                lo_a[a] = lo_a[a].min(vertices[v][a]);
                hi_a[a] = hi_a[a].max(vertices[v][a]);
            }
        }
        for &v in vb {
            for a in 0..D {
                lo_b[a] = lo_b[a].min(vertices[v][a]);
                hi_b[a] = hi_b[a].max(vertices[v][a]);
            }
        }
        let flat_a = (0..D).find(|&a| hi_a[a] - lo_a[a] < EPS);
        let flat_b = (0..D).find(|&a| hi_b[a] - lo_b[a] < EPS);
        match (flat_a, flat_b) {
            (Some(na), Some(nb)) if na == nb && (lo_a[na] - lo_b[nb]).abs() < EPS => (0..D)
                .filter(|&a| a != na)
                .all(|a| lo_a[a].max(lo_b[a]) + EPS < hi_a[a].min(hi_b[a])),
            _ => false,
        }
    }
}
