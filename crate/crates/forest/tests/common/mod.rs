//! Shared brute-force oracles and generators for the integration tests.
//!
//! Everything here is deliberately independent of the library's search
//! machinery: adjacency is decided by box overlap over all leaf pairs, the
//! balance oracle rewrites a flat global leaf array, and the Riemann
//! solution is the textbook iterative exact solver.

#![allow(dead_code)]

use forest_amr::connectivity::{face_transform, Connectivity, FaceConnection};
use forest_amr::forest::{Forest, Leaf, Marking};
use forest_amr::quadrant::{
    face_axis, face_sign, is_family, num_children, num_faces, opposite_face, Quadrant, ROOT_LEN,
};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::sync::Arc;

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// Volumetric overlap with positive measure on every axis.
pub fn boxes_overlap<const D: usize>(a: &Quadrant<D>, b: &Quadrant<D>) -> bool {
    (0..D).all(|axis| {
        let (a0, a1) = (a.coords[axis] as i64, a.coords[axis] as i64 + a.len() as i64);
        let (b0, b1) = (b.coords[axis] as i64, b.coords[axis] as i64 + b.len() as i64);
        a0.max(b0) < a1.min(b1)
    })
}

/// The same-size neighbor region across `face`, in its own tree coordinates,
/// or `None` on the physical boundary.
pub fn neighbor_region<const D: usize>(
    conn: &Connectivity<D>,
    tree: u32,
    quad: &Quadrant<D>,
    face: usize,
) -> Option<(u32, Quadrant<D>, usize)> {
    let n = quad.face_neighbor(face);
    if n.is_inside_root() {
        return Some((tree, n, opposite_face(face)));
    }
    match conn.connection(tree as usize, face) {
        FaceConnection::Boundary => None,
        FaceConnection::Neighbor { tree: nbr, face: g, .. } => {
            let (_, t) = conn.transform(tree as usize, face).unwrap();
            Some((nbr as u32, t.apply_quadrant(&n), g))
        }
    }
}

/// All (face_of_a, face_of_b) pairs through which leaves `a` and `b` share a
/// face, decided by box overlap against the neighbor region.
pub fn shared_faces<const D: usize>(
    conn: &Connectivity<D>,
    a: &Leaf<D>,
    b: &Leaf<D>,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for fa in 0..num_faces(D) {
        let Some((nt, hyp, g)) = neighbor_region(conn, a.tree, &a.quad, fa) else {
            continue;
        };
        if nt != b.tree || !boxes_overlap(&hyp, &b.quad) {
            continue;
        }
        // b must sit on the shared plane: its g-side coordinate equals the
        // region's g-side coordinate.
        let axis = face_axis(g);
        let touches = if face_sign(g) == 1 {
            b.quad.coords[axis] as i64 + b.quad.len() as i64
                == hyp.coords[axis] as i64 + hyp.len() as i64
        } else {
            b.quad.coords[axis] == hyp.coords[axis]
        };
        if touches {
            out.push((fa, g));
        }
    }
    out
}

/// True if any face is shared.
pub fn face_adjacent<const D: usize>(conn: &Connectivity<D>, a: &Leaf<D>, b: &Leaf<D>) -> bool {
    !shared_faces(conn, a, b).is_empty()
}

/// Definition-based balance check over all leaf pairs.
pub fn is_balanced_by_definition<const D: usize>(conn: &Connectivity<D>, leaves: &[Leaf<D>]) -> bool {
    for (i, a) in leaves.iter().enumerate() {
        for b in leaves.iter().skip(i + 1) {
            if (a.quad.level as i32 - b.quad.level as i32).abs() >= 2 && face_adjacent(conn, a, b)
            {
                return false;
            }
        }
    }
    true
}

/// Unbounded refinement ripple: split any leaf with a face neighbor two or
/// more levels finer, until none remains. Works on arbitrary forests; never
/// coarsens. Returns the sorted leaf array.
pub fn oracle_ripple_balance<const D: usize>(
    conn: &Connectivity<D>,
    leaves: &[Leaf<D>],
) -> Vec<Leaf<D>> {
    let mut work: Vec<Leaf<D>> = leaves.to_vec();
    loop {
        let mut split_at = None;
        'outer: for (i, a) in work.iter().enumerate() {
            for b in work.iter() {
                if b.quad.level >= a.quad.level + 2 && face_adjacent(conn, a, b) {
                    split_at = Some(i);
                    break 'outer;
                }
            }
        }
        match split_at {
            None => break,
            Some(i) => {
                let leaf = work.remove(i);
                for c in leaf.quad.children() {
                    work.push(Leaf::new(leaf.tree, c));
                }
            }
        }
    }
    work.sort_by(|a, b| a.global_cmp(b));
    work
}

/// Expected result of balanced-marking adaptation on a balanced forest:
/// refine the closure of the refine marks under the 2:1 ripple, and coarsen
/// exactly the complete leaf families whose members are all marked -1, are
/// not in the closure, have no strictly finer input neighbor, and have no
/// same-level input neighbor in the closure.
///
/// The oracle works on the global leaf array and therefore assumes no
/// complete family straddles a rank boundary, which the family-preserving
/// partition guarantees for every forest the generators produce; that is
/// also exactly the condition that makes the adaptation outcome partition
/// independent.
pub fn oracle_marked_adapt<const D: usize>(
    conn: &Connectivity<D>,
    leaves: &[Leaf<D>],
    marks: &[i8],
) -> Vec<Leaf<D>> {
    let n = leaves.len();
    assert_eq!(marks.len(), n);

    // Precompute the input adjacency with level relations.
    let mut finer_nbrs: Vec<Vec<usize>> = vec![Vec::new(); n]; // strictly finer
    let mut same_nbrs: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i == j || !face_adjacent(conn, &leaves[i], &leaves[j]) {
                continue;
            }
            if leaves[j].quad.level > leaves[i].quad.level {
                finer_nbrs[i].push(j);
            } else if leaves[j].quad.level == leaves[i].quad.level {
                same_nbrs[i].push(j);
            }
        }
    }

    // Refine closure: marked leaves split; a leaf with a one-level-finer
    // neighbor that splits must split too.
    let mut split: Vec<bool> = marks.iter().map(|&m| m == 1).collect();
    loop {
        let mut changed = false;
        for i in 0..n {
            if split[i] {
                continue;
            }
            if finer_nbrs[i].iter().any(|&j| split[j]) {
                split[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Coarsening decisions on complete sibling families of the input.
    let nc = num_children(D);
    let mut coarsen = vec![false; n];
    let mut i = 0;
    while i < n {
        let leaf = &leaves[i];
        if leaf.quad.level > 0 && leaf.quad.sibling_index() == 0 && i + nc <= n {
            let members = &leaves[i..i + nc];
            let quads: Vec<Quadrant<D>> = members.iter().map(|l| l.quad).collect();
            if members.iter().all(|l| l.tree == leaf.tree) && is_family(&quads) {
                let eligible = (i..i + nc).all(|k| {
                    marks[k] == -1
                        && !split[k]
                        && finer_nbrs[k].is_empty()
                        && !same_nbrs[k].iter().any(|&j| split[j])
                });
                if eligible {
                    for slot in coarsen.iter_mut().skip(i).take(nc) {
                        *slot = true;
                    }
                    i += nc;
                    continue;
                }
            }
        }
        i += 1;
    }

    let mut out = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        if coarsen[i] {
            out.push(Leaf::new(leaves[i].tree, leaves[i].quad.parent().unwrap()));
            i += nc;
        } else if split[i] {
            for c in leaves[i].quad.children() {
                out.push(Leaf::new(leaves[i].tree, c));
            }
            i += 1;
        } else {
            out.push(leaves[i]);
            i += 1;
        }
    }
    out.sort_by(|a, b| a.global_cmp(b));
    out
}

/// A small pool of connectivities exercising multiple trees, periodicity and
/// non-identity gluings.
pub fn connectivity_pool_2d() -> Vec<Arc<Connectivity<2>>> {
    let mut pool: Vec<Arc<Connectivity<2>>> = vec![
        Arc::new(Connectivity::<2>::unit_cube()),
        Arc::new(Connectivity::<2>::brick([2, 1], [false, false])),
        Arc::new(Connectivity::<2>::brick([2, 2], [false, false])),
        Arc::new(Connectivity::<2>::brick([3, 3], [false, false])),
        Arc::new(Connectivity::<2>::brick([1, 1], [true, true])),
        Arc::new(Connectivity::<2>::brick([3, 2], [true, false])),
    ];
    // The three-quad tiling of the unit square (skewed trees, used only for
    // topology; solvers never see it).
    let text = r#"{ "vertices": [[0,0],[0.5,0],[1,0],[0.5,0.5],[1,1],[1,0.5],[0,1]],
                    "cubes": [[0,1,6,3],[1,2,3,5],[3,5,6,4]] }"#;
    pool.push(Arc::new(Connectivity::<2>::from_mesh_text(text).unwrap()));
    // A rotated two-tree gluing for non-identity orientation coverage.
    if let Some(conn) = two_tree_gluing_2d(1, 3) {
        pool.push(Arc::new(conn));
    }
    pool
}

/// Build a two-tree connectivity where face `f0` of tree 0 is glued to face
/// `f1` of tree 1, with the flip determined by orientation consistency.
/// Returns `None` if no positively-oriented embedding exists (it always
/// does in 2D: one of the two flips works).
pub fn two_tree_gluing_2d(f0: usize, f1: usize) -> Option<Connectivity<2>> {
    for flip in 0..2u8 {
        let t = face_transform::<2>(f0, f1, flip);
        let inv = t.inverse();
        // Tree 1's geometric corners: map its local corners back into tree
        // 0's frame (unit square = reference).
        let l = ROOT_LEN as i64;
        let mut verts: Vec<[f64; 2]> = vec![[0., 0.], [1., 0.], [0., 1.], [1., 1.]];
        let mut cubes = vec![vec![0usize, 1, 2, 3], Vec::new()];
        for c in 0..4 {
            let local = [(c & 1) as i64 * l, (c >> 1 & 1) as i64 * l];
            let frame = inv.apply(local);
            let p = [frame[0] as f64 / l as f64, frame[1] as f64 / l as f64];
            let id = verts
                .iter()
                .position(|v| (v[0] - p[0]).abs() < 1e-9 && (v[1] - p[1]).abs() < 1e-9)
                .unwrap_or_else(|| {
                    verts.push(p);
                    verts.len() - 1
                });
            cubes[1].push(id);
        }
        if let Ok(conn) = Connectivity::<2>::from_mesh(&verts, &cubes) {
            return Some(conn);
        }
    }
    None
}

/// Same in 3D: glue face `f0` of tree 0 to face `f1` of tree 1 with
/// orientation code `code` if a positively-oriented embedding exists.
pub fn two_tree_gluing_3d(f0: usize, f1: usize, code: u8) -> Option<Connectivity<3>> {
    let t = face_transform::<3>(f0, f1, code);
    let inv = t.inverse();
    let l = ROOT_LEN as i64;
    let mut verts: Vec<[f64; 3]> = (0..8)
        .map(|c: usize| [(c & 1) as f64, (c >> 1 & 1) as f64, (c >> 2 & 1) as f64])
        .collect();
    let mut cubes = vec![(0..8usize).collect::<Vec<_>>(), Vec::new()];
    for c in 0..8 {
        let local = [
            (c & 1) as i64 * l,
            (c >> 1 & 1) as i64 * l,
            (c >> 2 & 1) as i64 * l,
        ];
        let frame = inv.apply(local);
        let p = [
            frame[0] as f64 / l as f64,
            frame[1] as f64 / l as f64,
            frame[2] as f64 / l as f64,
        ];
        let id = verts
            .iter()
            .position(|v| v.iter().zip(p.iter()).all(|(a, b)| (a - b).abs() < 1e-9))
            .unwrap_or_else(|| {
                verts.push(p);
                verts.len() - 1
            });
        cubes[1].push(id);
    }
    Connectivity::<3>::from_mesh(&verts, &cubes).ok()
}

/// Random marking: refine with probability `p_refine`, coarsen with
/// `p_coarsen`, keep otherwise, respecting the level bounds.
pub fn random_marking<const D: usize>(
    forest: &Forest<D>,
    rng: &mut StdRng,
    p_refine: f64,
    p_coarsen: f64,
    coarse: u8,
    fine: u8,
) -> Marking {
    let mut marking = Marking::zeros(forest);
    for (rank, marks) in marking.ranks.iter_mut().enumerate() {
        for (leaf, m) in forest.rank_leaves(rank).iter().zip(marks.iter_mut()) {
            let x: f64 = rng.gen();
            *m = if x < p_refine && leaf.quad.level < fine {
                1
            } else if x < p_refine + p_coarsen && leaf.quad.level > coarse {
                -1
            } else {
                0
            };
        }
    }
    marking
}

/// Grow a random balanced forest by a few rounds of random marking,
/// balanced marking and adaptation, repartitioning each round.
pub fn random_balanced_forest<const D: usize>(
    conn: Arc<Connectivity<D>>,
    ranks: usize,
    rounds: usize,
    max_level: u8,
    rng: &mut StdRng,
) -> (Forest<D>, forest_amr::World) {
    use forest_amr::balance::balanced_marking;
    use forest_amr::forest::{adapt, partition, NoData};
    use forest_amr::ghost::build_ghost;

    let mut world = forest_amr::World::new(ranks);
    let mut forest = Forest::new_uniform(conn, if max_level > 0 { 1 } else { 0 }, ranks);
    for _ in 0..rounds {
        let layers = build_ghost(&forest, &mut world);
        let mut marking = random_marking(&forest, rng, 0.3, 0.3, 0, max_level);
        balanced_marking(&forest, &layers, &mut marking, &mut world).unwrap();
        let mut handlers = vec![NoData; forest.num_ranks()];
        adapt(&mut forest, &layers, &marking, &mut handlers, &mut world).unwrap();
        partition(&mut forest, None, &mut world);
    }
    (forest, world)
}

/// Exact solution of the 1D Riemann problem for the Euler equations
/// (iterative pressure solve plus wave-pattern sampling).
pub struct ExactRiemann {
    pub gamma: f64,
    pub rho_l: f64,
    pub u_l: f64,
    pub p_l: f64,
    pub rho_r: f64,
    pub u_r: f64,
    pub p_r: f64,
    pub p_star: f64,
    pub u_star: f64,
}

impl ExactRiemann {
    pub fn solve(
        gamma: f64,
        (rho_l, u_l, p_l): (f64, f64, f64),
        (rho_r, u_r, p_r): (f64, f64, f64),
    ) -> Self {
        let a_l = (gamma * p_l / rho_l).sqrt();
        let a_r = (gamma * p_r / rho_r).sqrt();
        let f = |p: f64, rho_k: f64, p_k: f64, a_k: f64| -> (f64, f64) {
            if p > p_k {
                // Shock branch.
                let big_a = 2.0 / ((gamma + 1.0) * rho_k);
                let big_b = (gamma - 1.0) / (gamma + 1.0) * p_k;
                let sq = (big_a / (p + big_b)).sqrt();
                let val = (p - p_k) * sq;
                let deriv = sq * (1.0 - (p - p_k) / (2.0 * (big_b + p)));
                (val, deriv)
            } else {
                // Rarefaction branch.
                let val = 2.0 * a_k / (gamma - 1.0)
                    * ((p / p_k).powf((gamma - 1.0) / (2.0 * gamma)) - 1.0);
                let deriv = (p / p_k).powf(-(gamma + 1.0) / (2.0 * gamma)) / (rho_k * a_k);
                (val, deriv)
            }
        };
        // Start from the primitive-variable estimate and iterate.
        let mut p = 0.5 * (p_l + p_r) - 0.125 * (u_r - u_l) * (rho_l + rho_r) * (a_l + a_r) / 2.0;
        p = p.max(1e-10);
        for _ in 0..200 {
            let (fl, dl) = f(p, rho_l, p_l, a_l);
            let (fr, dr) = f(p, rho_r, p_r, a_r);
            let g = fl + fr + (u_r - u_l);
            let step = g / (dl + dr);
            let next = (p - step).max(1e-12);
            if (next - p).abs() <= 1e-14 * p {
                p = next;
                break;
            }
            p = next;
        }
        let (fl, _) = f(p, rho_l, p_l, a_l);
        let (fr, _) = f(p, rho_r, p_r, a_r);
        let u_star = 0.5 * (u_l + u_r) + 0.5 * (fr - fl);
        ExactRiemann {
            gamma,
            rho_l,
            u_l,
            p_l,
            rho_r,
            u_r,
            p_r,
            p_star: p,
            u_star,
        }
    }

    /// Sample density at similarity coordinate `xi = x / t`.
    pub fn density(&self, xi: f64) -> f64 {
        let g = self.gamma;
        let (rho_k, u_k, p_k, sign) = if xi <= self.u_star {
            (self.rho_l, self.u_l, self.p_l, 1.0)
        } else {
            (self.rho_r, self.u_r, self.p_r, -1.0)
        };
        let a_k = (g * p_k / rho_k).sqrt();
        let pr = self.p_star / p_k;
        if self.p_star > p_k {
            // Shock on this side.
            let shock_speed =
                u_k - sign * a_k * ((g + 1.0) / (2.0 * g) * pr + (g - 1.0) / (2.0 * g)).sqrt();
            let ahead = if sign > 0.0 {
                xi < shock_speed
            } else {
                xi > shock_speed
            };
            if ahead {
                rho_k
            } else {
                rho_k * (pr + (g - 1.0) / (g + 1.0)) / ((g - 1.0) / (g + 1.0) * pr + 1.0)
            }
        } else {
            // Rarefaction on this side.
            let a_star = a_k * pr.powf((g - 1.0) / (2.0 * g));
            let head = u_k - sign * a_k;
            let tail = self.u_star - sign * a_star;
            let ahead = if sign > 0.0 { xi < head } else { xi > head };
            let behind = if sign > 0.0 { xi > tail } else { xi < tail };
            if ahead {
                rho_k
            } else if behind {
                rho_k * pr.powf(1.0 / g)
            } else {
                // Inside the fan.
                let a_local = sign * (2.0 / (g + 1.0)) * (sign * a_k + (g - 1.0) / 2.0 * (u_k - xi));
                rho_k * (a_local / a_k).powf(2.0 / (g - 1.0))
            }
        }
    }
}
