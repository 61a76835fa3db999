//! Explicit first-order finite volume solver for the compressible Euler
//! equations on the adaptive forest: HLLC numerical flux, density-jump
//! refinement indicator, and the benchmark problem setups.
//!
//! The update is a per-cell gather over the intersection table: every cell
//! accumulates its face fluxes in a fixed order, so results are bitwise
//! independent of the partition. Hanging faces contribute one flux per fine
//! sub-face, weighted by the sub-face area, which keeps the scheme exactly
//! conservative.

use crate::connectivity::{Connectivity, MeshError};
use crate::forest::{Forest, Marking};
use crate::ghost::{ghost_exchange, GhostError, GhostLayer};
use crate::meshiter::{IntersectionTable, RankView, SideRef};
use crate::quadrant::{face_axis, face_sign, num_children, Quadrant, ROOT_LEN};
use crate::transport::World;

/// Conserved variables of one cell: density, momentum, total energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EulerState<const D: usize> {
    pub rho: f64,
    pub mom: [f64; D],
    pub energy: f64,
}

impl<const D: usize> EulerState<D> {
    pub fn from_primitive(rho: f64, velocity: [f64; D], pressure: f64, gamma: f64) -> Self {
        let mut mom = [0.0; D];
        let mut kinetic = 0.0;
        for a in 0..D {
            mom[a] = rho * velocity[a];
            kinetic += 0.5 * rho * velocity[a] * velocity[a];
        }
        EulerState {
            rho,
            mom,
            energy: pressure / (gamma - 1.0) + kinetic,
        }
    }

    pub fn velocity(&self) -> [f64; D] {
        let mut v = [0.0; D];
        for a in 0..D {
            v[a] = self.mom[a] / self.rho;
        }
        v
    }

    pub fn pressure(&self, gamma: f64) -> f64 {
        let mut kinetic = 0.0;
        for a in 0..D {
            kinetic += 0.5 * self.mom[a] * self.mom[a] / self.rho;
        }
        (gamma - 1.0) * (self.energy - kinetic)
    }

    pub fn sound_speed(&self, gamma: f64) -> f64 {
        (gamma * self.pressure(gamma) / self.rho).sqrt()
    }

    pub fn is_physical(&self, gamma: f64) -> bool {
        self.rho > 0.0 && self.pressure(gamma) > 0.0 && self.energy.is_finite()
    }

    /// State mirrored across a wall with normal along `axis`.
    pub fn reflected(&self, axis: usize) -> Self {
        let mut s = *self;
        s.mom[axis] = -s.mom[axis];
        s
    }

    fn zero() -> Self {
        EulerState {
            rho: 0.0,
            mom: [0.0; D],
            energy: 0.0,
        }
    }

    fn add_scaled(&mut self, other: &Self, factor: f64) {
        self.rho += factor * other.rho;
        for a in 0..D {
            self.mom[a] += factor * other.mom[a];
        }
        self.energy += factor * other.energy;
    }
}

/// Exact Euler flux along `axis`.
pub fn euler_flux<const D: usize>(u: &EulerState<D>, axis: usize, gamma: f64) -> EulerState<D> {
    let v = u.mom[axis] / u.rho;
    let p = u.pressure(gamma);
    let mut f = EulerState {
        rho: u.mom[axis],
        mom: [0.0; D],
        energy: v * (u.energy + p),
    };
    for a in 0..D {
        f.mom[a] = u.mom[a] * v;
    }
    f.mom[axis] += p;
    f
}

/// Errors from the solver.
#[derive(Debug, Clone, thiserror::Error)]
pub enum FvError {
    #[error("unphysical state {context} at rank {rank}, tree {tree}, anchor {anchor:?}")]
    Unphysical {
        rank: usize,
        tree: u32,
        anchor: Vec<i32>,
        context: String,
    },
    #[error("unphysical input state to the Riemann solver")]
    UnphysicalInput,
    #[error("time step underflow (dt = {0})")]
    DtUnderflow(f64),
    #[error("tree geometry is not an axis-aligned box (tree {0})")]
    Geometry(usize),
    #[error("ghost exchange failed: {0}")]
    Ghost(#[from] GhostError),
    #[error("mesh setup failed: {0}")]
    Mesh(#[from] MeshError),
    #[error("bad configuration: {0}")]
    Config(String),
}

/// HLLC approximate Riemann flux along `axis`, from the lower-side state
/// `left` to the upper-side state `right`. Wave speeds use the primitive
/// variable (PVRS) pressure estimate.
pub fn hllc_flux<const D: usize>(
    left: &EulerState<D>,
    right: &EulerState<D>,
    axis: usize,
    gamma: f64,
) -> Result<EulerState<D>, FvError> {
    if !left.is_physical(gamma) || !right.is_physical(gamma) {
        return Err(FvError::UnphysicalInput);
    }
    let (rl, rr) = (left.rho, right.rho);
    let (ul, ur) = (left.mom[axis] / rl, right.mom[axis] / rr);
    let (pl, pr) = (left.pressure(gamma), right.pressure(gamma));
    let (al, ar) = ((gamma * pl / rl).sqrt(), (gamma * pr / rr).sqrt());

    let rho_bar = 0.5 * (rl + rr);
    let a_bar = 0.5 * (al + ar);
    let p_star = (0.5 * (pl + pr) - 0.5 * (ur - ul) * rho_bar * a_bar).max(0.0);
    let q = |p_k: f64| -> f64 {
        if p_star <= p_k {
            1.0
        } else {
            (1.0 + (gamma + 1.0) / (2.0 * gamma) * (p_star / p_k - 1.0)).sqrt()
        }
    };
    let sl = ul - al * q(pl);
    let sr = ur + ar * q(pr);
    let s_star = (pr - pl + rl * ul * (sl - ul) - rr * ur * (sr - ur))
        / (rl * (sl - ul) - rr * (sr - ur));

    if sl >= 0.0 {
        return Ok(euler_flux(left, axis, gamma));
    }
    if sr <= 0.0 {
        return Ok(euler_flux(right, axis, gamma));
    }
    let star_state = |u: &EulerState<D>, s_k: f64, u_k: f64, p_k: f64| -> EulerState<D> {
        let factor = u.rho * (s_k - u_k) / (s_k - s_star);
        let mut star = EulerState {
            rho: factor,
            mom: [0.0; D],
            energy: factor
                * (u.energy / u.rho + (s_star - u_k) * (s_star + p_k / (u.rho * (s_k - u_k)))),
        };
        for a in 0..D {
            star.mom[a] = factor * (u.mom[a] / u.rho);
        }
        star.mom[axis] = factor * s_star;
        star
    };
    if s_star >= 0.0 {
        let mut f = euler_flux(left, axis, gamma);
        let star = star_state(left, sl, ul, pl);
        let mut diff = star;
        diff.add_scaled(left, -1.0);
        f.add_scaled(&diff, sl);
        Ok(f)
    } else {
        let mut f = euler_flux(right, axis, gamma);
        let star = star_state(right, sr, ur, pr);
        let mut diff = star;
        diff.add_scaled(right, -1.0);
        f.add_scaled(&diff, sr);
        Ok(f)
    }
}

/// Axis-aligned bounding box of a cell in physical space.
#[derive(Debug, Clone, Copy)]
pub struct CellBox<const D: usize> {
    pub lo: [f64; D],
    pub hi: [f64; D],
}

impl<const D: usize> CellBox<D> {
    pub fn volume(&self) -> f64 {
        (0..D).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn face_area(&self, axis: usize) -> f64 {
        (0..D)
            .filter(|&a| a != axis)
            .map(|a| self.hi[a] - self.lo[a])
            .product()
    }

    pub fn min_width(&self) -> f64 {
        (0..D)
            .map(|a| self.hi[a] - self.lo[a])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn center(&self) -> [f64; D] {
        let mut c = [0.0; D];
        for a in 0..D {
            c[a] = 0.5 * (self.lo[a] + self.hi[a]);
        }
        c
    }

    /// Center of the face on the given side.
    pub fn face_center(&self, face: usize) -> [f64; D] {
        let mut c = self.center();
        let a = face_axis(face);
        c[a] = if face_sign(face) == 1 {
            self.hi[a]
        } else {
            self.lo[a]
        };
        c
    }
}

/// Verify the solver's geometric restriction: every tree maps to an
/// axis-aligned box under its multilinear vertex map.
pub fn check_axis_aligned<const D: usize>(conn: &Connectivity<D>) -> Result<(), FvError> {
    for t in 0..conn.num_trees() {
        let lo = conn.map_reference(t, [0.0; D]);
        let hi = conn.map_reference(t, {
            let mut one = [0.0; D];
            for v in one.iter_mut() {
                *v = 1.0;
            }
            one
        });
        for c in 0..num_children(D) {
            let mut xi = [0.0; D];
            for (a, v) in xi.iter_mut().enumerate() {
                *v = if c >> a & 1 == 1 { 1.0 } else { 0.0 };
            }
            let p = conn.map_reference(t, xi);
            for a in 0..D {
                let want = if c >> a & 1 == 1 { hi[a] } else { lo[a] };
                if (p[a] - want).abs() > 1e-12 * (1.0 + want.abs()) {
                    return Err(FvError::Geometry(t));
                }
            }
        }
    }
    Ok(())
}

/// Physical bounding box of a quadrant of a tree (axis-aligned trees only).
pub fn cell_box<const D: usize>(
    conn: &Connectivity<D>,
    tree: u32,
    quad: &Quadrant<D>,
) -> CellBox<D> {
    let scale = 1.0 / ROOT_LEN as f64;
    let mut xi_lo = [0.0; D];
    let mut xi_hi = [0.0; D];
    for a in 0..D {
        xi_lo[a] = quad.coords[a] as f64 * scale;
        xi_hi[a] = (quad.coords[a] as f64 + quad.len() as f64) * scale;
    }
    CellBox {
        lo: conn.map_reference(tree as usize, xi_lo),
        hi: conn.map_reference(tree as usize, xi_hi),
    }
}

/// A benchmark problem: domain construction, initial data and boundary data.
pub trait EulerProblem<const D: usize>: Sync {
    fn name(&self) -> &'static str;
    fn gamma(&self) -> f64;
    fn end_time(&self) -> f64;
    /// Macro mesh; `base` scales the number of trees per unit length.
    fn connectivity(&self, base: usize) -> Result<Connectivity<D>, MeshError>;
    fn initial(&self, x: [f64; D]) -> EulerState<D>;
    /// Ghost state just outside a boundary face.
    fn boundary(&self, x: [f64; D], face: usize, inside: &EulerState<D>) -> EulerState<D>;
}

/// All tunable constants of the solver and benchmark problems, readable from
/// a plain `key=value` config file. Field defaults are the versioned values
/// shipped in `configs/`.
#[derive(Debug, Clone, PartialEq)]
pub struct EulerConfig {
    pub gamma: f64,
    pub cfl: f64,
    pub refine_jump: f64,
    pub coarsen_jump: f64,
    pub sod_interface: f64,
    pub sod_end_time: f64,
    pub shock_mach: f64,
    pub shock_position: f64,
    pub bubble_radius: f64,
    pub bubble_rho: f64,
    pub bubble_center: [f64; 3],
    pub ambient_rho: f64,
    pub ambient_p: f64,
    pub shock_bubble_end_time: f64,
    pub step_inflow_rho: f64,
    pub step_inflow_mach: f64,
    pub step_inflow_p: f64,
    pub step_end_time: f64,
}

impl Default for EulerConfig {
    fn default() -> Self {
        EulerConfig {
            gamma: 1.4,
            cfl: 0.4,
            refine_jump: 0.06,
            coarsen_jump: 0.02,
            sod_interface: 0.5,
            sod_end_time: 0.2,
            shock_mach: 2.95,
            shock_position: 0.2,
            bubble_radius: 0.2,
            bubble_rho: 0.1,
            bubble_center: [0.5, 0.5, 0.5],
            ambient_rho: 1.0,
            ambient_p: 1.0,
            shock_bubble_end_time: 0.3,
            step_inflow_rho: 1.4,
            step_inflow_mach: 3.0,
            step_inflow_p: 1.0,
            step_end_time: 4.0,
        }
    }
}

impl EulerConfig {
    /// Parse `key = value` lines ('#' starts a comment) over the defaults.
    pub fn parse(text: &str) -> Result<Self, FvError> {
        let mut cfg = EulerConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| FvError::Config(format!("line {}: expected key=value", lineno + 1)))?;
            let key = key.trim();
            let num = |field: &mut f64| -> Result<(), FvError> {
                *field = value.trim().parse::<f64>().map_err(|e| {
                    FvError::Config(format!("line {}: {key}: {e}", lineno + 1))
                })?;
                Ok(())
            };
            match key {
                "gamma" => num(&mut cfg.gamma)?,
                "cfl" => num(&mut cfg.cfl)?,
                "refine_jump" => num(&mut cfg.refine_jump)?,
                "coarsen_jump" => num(&mut cfg.coarsen_jump)?,
                "sod_interface" => num(&mut cfg.sod_interface)?,
                "sod_end_time" => num(&mut cfg.sod_end_time)?,
                "shock_mach" => num(&mut cfg.shock_mach)?,
                "shock_position" => num(&mut cfg.shock_position)?,
                "bubble_radius" => num(&mut cfg.bubble_radius)?,
                "bubble_rho" => num(&mut cfg.bubble_rho)?,
                "bubble_center_x" => num(&mut cfg.bubble_center[0])?,
                "bubble_center_y" => num(&mut cfg.bubble_center[1])?,
                "bubble_center_z" => num(&mut cfg.bubble_center[2])?,
                "ambient_rho" => num(&mut cfg.ambient_rho)?,
                "ambient_p" => num(&mut cfg.ambient_p)?,
                "shock_bubble_end_time" => num(&mut cfg.shock_bubble_end_time)?,
                "step_inflow_rho" => num(&mut cfg.step_inflow_rho)?,
                "step_inflow_mach" => num(&mut cfg.step_inflow_mach)?,
                "step_inflow_p" => num(&mut cfg.step_inflow_p)?,
                "step_end_time" => num(&mut cfg.step_end_time)?,
                other => {
                    return Err(FvError::Config(format!(
                        "line {}: unknown key {other:?}",
                        lineno + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    /// Post-shock state of a normal shock moving at Mach `mach` into the
    /// ambient state, from the Rankine-Hugoniot relations.
    pub fn post_shock<const D: usize>(&self) -> EulerState<D> {
        let g = self.gamma;
        let m2 = self.shock_mach * self.shock_mach;
        let p2 = self.ambient_p * (1.0 + 2.0 * g / (g + 1.0) * (m2 - 1.0));
        let rho2 = self.ambient_rho * ((g + 1.0) * m2) / ((g - 1.0) * m2 + 2.0);
        let shock_speed = self.shock_mach * (g * self.ambient_p / self.ambient_rho).sqrt();
        let u2 = shock_speed * (1.0 - self.ambient_rho / rho2);
        let mut v = [0.0; D];
        v[0] = u2;
        EulerState::from_primitive(rho2, v, p2, g)
    }
}

/// Sod tube along x on a thin strip/slab of square trees.
pub struct SodTube<const D: usize> {
    pub cfg: EulerConfig,
}

impl<const D: usize> EulerProblem<D> for SodTube<D> {
    fn name(&self) -> &'static str {
        "sod"
    }
    fn gamma(&self) -> f64 {
        self.cfg.gamma
    }
    fn end_time(&self) -> f64 {
        self.cfg.sod_end_time
    }
    fn connectivity(&self, base: usize) -> Result<Connectivity<D>, MeshError> {
        let mut dims = [1usize; D];
        dims[0] = base.max(1);
        let mut upper = [1.0 / base.max(1) as f64; D];
        upper[0] = 1.0;
        Connectivity::brick_in(dims, [0.0; D], upper, [false; D])
    }
    fn initial(&self, x: [f64; D]) -> EulerState<D> {
        if x[0] < self.cfg.sod_interface {
            EulerState::from_primitive(1.0, [0.0; D], 1.0, self.cfg.gamma)
        } else {
            EulerState::from_primitive(0.125, [0.0; D], 0.1, self.cfg.gamma)
        }
    }
    fn boundary(&self, _x: [f64; D], face: usize, inside: &EulerState<D>) -> EulerState<D> {
        if face_axis(face) == 0 {
            *inside
        } else {
            inside.reflected(face_axis(face))
        }
    }
}

/// A planar shock running into a low-density bubble.
pub struct ShockBubble<const D: usize> {
    pub cfg: EulerConfig,
}

impl<const D: usize> EulerProblem<D> for ShockBubble<D> {
    fn name(&self) -> &'static str {
        "shock-bubble"
    }
    fn gamma(&self) -> f64 {
        self.cfg.gamma
    }
    fn end_time(&self) -> f64 {
        self.cfg.shock_bubble_end_time
    }
    fn connectivity(&self, base: usize) -> Result<Connectivity<D>, MeshError> {
        // Domain [0,2] x [0,1] (x [0,1]): square trees of size 1/base.
        let base = base.max(1);
        let mut dims = [base; D];
        dims[0] = 2 * base;
        let mut upper = [1.0; D];
        upper[0] = 2.0;
        Connectivity::brick_in(dims, [0.0; D], upper, [false; D])
    }
    fn initial(&self, x: [f64; D]) -> EulerState<D> {
        if x[0] < self.cfg.shock_position {
            return self.cfg.post_shock();
        }
        let mut r2 = 0.0;
        for a in 0..D {
            let d = x[a] - self.cfg.bubble_center[a];
            r2 += d * d;
        }
        let rho = if r2.sqrt() < self.cfg.bubble_radius {
            self.cfg.bubble_rho
        } else {
            self.cfg.ambient_rho
        };
        EulerState::from_primitive(rho, [0.0; D], self.cfg.ambient_p, self.cfg.gamma)
    }
    fn boundary(&self, _x: [f64; D], face: usize, inside: &EulerState<D>) -> EulerState<D> {
        match (face_axis(face), face_sign(face)) {
            (0, 0) => self.cfg.post_shock(),
            (0, 1) => *inside,
            (a, _) => inside.reflected(a),
        }
    }
}

/// Supersonic wind tunnel with a step: an L-shaped macro mesh built from the
/// coarse-mesh description path.
pub struct ForwardStep<const D: usize> {
    pub cfg: EulerConfig,
}

impl<const D: usize> ForwardStep<D> {
    fn inflow(&self) -> EulerState<D> {
        let g = self.cfg.gamma;
        let c = (g * self.cfg.step_inflow_p / self.cfg.step_inflow_rho).sqrt();
        let mut v = [0.0; D];
        v[0] = self.cfg.step_inflow_mach * c;
        EulerState::from_primitive(self.cfg.step_inflow_rho, v, self.cfg.step_inflow_p, g)
    }
}

impl<const D: usize> EulerProblem<D> for ForwardStep<D> {
    fn name(&self) -> &'static str {
        "forward-step"
    }
    fn gamma(&self) -> f64 {
        self.cfg.gamma
    }
    fn end_time(&self) -> f64 {
        self.cfg.step_end_time
    }
    fn connectivity(&self, base: usize) -> Result<Connectivity<D>, MeshError> {
        // Domain [0,3] x [0,1] (x [0,1]) minus the step x > 0.6, y < 0.2,
        // tiled by cubes of size 0.2 * (1/base... base scales tree density).
        let base = base.max(1);
        let h = 0.2 / base as f64;
        let nx = 15 * base;
        let ny = 5 * base;
        let nz = if D == 3 { 5 * base } else { 1 };
        let step_i = 3 * base; // first column over the step
        let step_j = base; // rows occupied by the step
        let mut vertices: Vec<[f64; D]> = Vec::new();
        let mut vertex_ids: std::collections::HashMap<(usize, usize, usize), usize> =
            std::collections::HashMap::new();
        let mut cubes: Vec<Vec<usize>> = Vec::new();
        let nzc = if D == 3 { nz } else { 1 };
        for k in 0..nzc {
            for j in 0..ny {
                for i in 0..nx {
                    if i >= step_i && j < step_j {
                        continue;
                    }
                    let mut cube = Vec::with_capacity(num_children(D));
                    for c in 0..num_children(D) {
                        let vi = (
                            i + (c & 1),
                            j + (c >> 1 & 1),
                            if D == 3 { k + (c >> 2 & 1) } else { 0 },
                        );
                        let next = vertices.len();
                        let id = *vertex_ids.entry(vi).or_insert_with(|| {
                            let mut p = [0.0; D];
                            p[0] = vi.0 as f64 * h;
                            p[1] = vi.1 as f64 * h;
                            if D == 3 {
                                p[2] = vi.2 as f64 * h;
                            }
                            vertices.push(p);
                            next
                        });
                        cube.push(id);
                    }
                    cubes.push(cube);
                }
            }
        }
        Connectivity::from_mesh(&vertices, &cubes)
    }
    fn initial(&self, _x: [f64; D]) -> EulerState<D> {
        self.inflow()
    }
    fn boundary(&self, _x: [f64; D], face: usize, inside: &EulerState<D>) -> EulerState<D> {
        match (face_axis(face), face_sign(face)) {
            (0, 0) => self.inflow(),
            (0, 1) => *inside,
            (a, _) => inside.reflected(a),
        }
    }
}

/// Initial cell averages: the problem's initial data sampled at barycenters.
pub fn init_states<const D: usize>(
    forest: &Forest<D>,
    problem: &dyn EulerProblem<D>,
) -> Result<Vec<Vec<EulerState<D>>>, FvError> {
    check_axis_aligned(forest.connectivity())?;
    let gamma = problem.gamma();
    let mut states = Vec::with_capacity(forest.num_ranks());
    for rank in 0..forest.num_ranks() {
        let mut row = Vec::with_capacity(forest.rank_leaves(rank).len());
        for leaf in forest.rank_leaves(rank) {
            let center = forest.connectivity().quadrant_center(leaf.tree as usize, &leaf.quad);
            let u = problem.initial(center);
            if !u.is_physical(gamma) {
                return Err(FvError::Unphysical {
                    rank,
                    tree: leaf.tree,
                    anchor: leaf.quad.coords.to_vec(),
                    context: "initial data".into(),
                });
            }
            row.push(u);
        }
        states.push(row);
    }
    Ok(states)
}

/// One explicit Euler step: exchange ghost states, agree on the global CFL
/// time step, assemble HLLC fluxes per cell, and update. Returns `dt`.
pub fn timestep<const D: usize>(
    forest: &Forest<D>,
    layers: &[GhostLayer<D>],
    tables: &[IntersectionTable],
    states: &mut [Vec<EulerState<D>>],
    problem: &dyn EulerProblem<D>,
    cfl: f64,
    world: &mut World,
) -> Result<f64, FvError> {
    let gamma = problem.gamma();
    let p = forest.num_ranks();
    let ghost_states = ghost_exchange(forest, layers, states, world)?;

    // Global time step from the per-cell signal speeds.
    let mut rank_ids: Vec<usize> = (0..p).collect();
    let local_dt: Vec<f64> = world.par_ranks(&mut rank_ids, |rank, _| {
        let conn = forest.connectivity();
        let mut dt = f64::INFINITY;
        for (leaf, u) in forest.rank_leaves(rank).iter().zip(states[rank].iter()) {
            let geo = cell_box(conn, leaf.tree, &leaf.quad);
            let v = u.velocity();
            let speed = v.iter().fold(0.0f64, |m, c| m.max(c.abs())) + u.sound_speed(gamma);
            dt = dt.min(geo.min_width() / speed);
        }
        dt
    });
    let dt = cfl * world.allreduce(local_dt, f64::min);
    if !dt.is_finite() || dt <= 0.0 {
        return Err(FvError::DtUnderflow(dt));
    }

    // Per-cell flux gather in fixed face order; bitwise partition-invariant.
    struct RankOut<const D: usize> {
        new: Vec<EulerState<D>>,
        error: Option<FvError>,
    }
    let mut rank_ids: Vec<usize> = (0..p).collect();
    let outs: Vec<RankOut<D>> = world.par_ranks(&mut rank_ids, |rank, _| {
        let conn = forest.connectivity();
        let view = RankView::new(forest, rank, &layers[rank]);
        let leaves = forest.rank_leaves(rank);
        let my = &states[rank];
        let gh = &ghost_states[rank];
        let mut new = Vec::with_capacity(leaves.len());
        for (i, leaf) in leaves.iter().enumerate() {
            let geo = cell_box(conn, leaf.tree, &leaf.quad);
            let vol = geo.volume();
            let mut du = EulerState::<D>::zero();
            for e in tables[rank].entries_of(i) {
                let axis = face_axis(e.face as usize);
                let sign = face_sign(e.face as usize);
                let (other, area) = match e.side {
                    None => {
                        let x = geo.face_center(e.face as usize);
                        (
                            problem.boundary(x, e.face as usize, &my[i]),
                            geo.face_area(axis),
                        )
                    }
                    Some(side) => {
                        let (other_leaf, state) = match side {
                            SideRef::Local(j) => (&leaves[j as usize], my[j as usize]),
                            SideRef::Ghost(g) => {
                                (&view.ghosts[g as usize].leaf, gh[g as usize])
                            }
                        };
                        // The finer side fixes the (sub-)face area.
                        let area = if other_leaf.quad.level > leaf.quad.level {
                            cell_box(conn, other_leaf.tree, &other_leaf.quad).face_area(axis)
                        } else {
                            geo.face_area(axis)
                        };
                        (state, area)
                    }
                };
                let flux = if sign == 1 {
                    hllc_flux(&my[i], &other, axis, gamma)
                } else {
                    hllc_flux(&other, &my[i], axis, gamma)
                };
                let flux = match flux {
                    Ok(f) => f,
                    Err(_) => {
                        return RankOut {
                            new,
                            error: Some(FvError::Unphysical {
                                rank,
                                tree: leaf.tree,
                                anchor: leaf.quad.coords.to_vec(),
                                context: "flux input".into(),
                            }),
                        }
                    }
                };
                let orient = if sign == 1 { -1.0 } else { 1.0 };
                du.add_scaled(&flux, orient * area);
            }
            let mut u = my[i];
            u.add_scaled(&du, dt / vol);
            if !u.is_physical(gamma) {
                return RankOut {
                    new,
                    error: Some(FvError::Unphysical {
                        rank,
                        tree: leaf.tree,
                        anchor: leaf.quad.coords.to_vec(),
                        context: "updated state".into(),
                    }),
                };
            }
            new.push(u);
        }
        RankOut { new, error: None }
    });
    for (rank, out) in outs.into_iter().enumerate() {
        if let Some(e) = out.error {
            return Err(e);
        }
        states[rank] = out.new;
    }
    Ok(dt)
}

/// Marking thresholds and level bounds for the density-jump indicator.
#[derive(Debug, Clone, Copy)]
pub struct IndicatorParams {
    pub coarse_level: u8,
    pub fine_level: u8,
    pub refine_jump: f64,
    pub coarsen_jump: f64,
}

/// Relative density-jump indicator: refine where the largest face jump
/// exceeds the refine threshold (below the finest level), coarsen where all
/// jumps fall under the coarsen threshold (above the coarsest level).
pub fn density_jump_indicator<const D: usize>(
    forest: &Forest<D>,
    layers: &[GhostLayer<D>],
    tables: &[IntersectionTable],
    states: &[Vec<EulerState<D>>],
    params: IndicatorParams,
    world: &mut World,
) -> Result<Marking, FvError> {
    let p = forest.num_ranks();
    let ghost_states = ghost_exchange(forest, layers, states, world)?;
    let mut rank_ids: Vec<usize> = (0..p).collect();
    let marked: Vec<Vec<i8>> = world.par_ranks(&mut rank_ids, |rank, _| {
        let leaves = forest.rank_leaves(rank);
        let my = &states[rank];
        let gh = &ghost_states[rank];
        let mut marks = vec![0i8; leaves.len()];
        for (i, leaf) in leaves.iter().enumerate() {
            let mut jump: f64 = 0.0;
            for e in tables[rank].entries_of(i) {
                let other = match e.side {
                    None => continue,
                    Some(SideRef::Local(j)) => my[j as usize].rho,
                    Some(SideRef::Ghost(g)) => gh[g as usize].rho,
                };
                jump = jump.max((my[i].rho - other).abs() / my[i].rho.min(other));
            }
            marks[i] = if jump > params.refine_jump && leaf.quad.level < params.fine_level {
                1
            } else if jump < params.coarsen_jump && leaf.quad.level > params.coarse_level {
                -1
            } else {
                0
            };
        }
        marks
    });
    Ok(Marking { ranks: marked })
}

/// Volume-weighted totals of the conserved quantities (mass, momentum,
/// energy) over the whole forest.
pub fn total_conserved<const D: usize>(
    forest: &Forest<D>,
    states: &[Vec<EulerState<D>>],
) -> (f64, [f64; D], f64) {
    let conn = forest.connectivity();
    let mut mass = 0.0;
    let mut momentum = [0.0; D];
    let mut energy = 0.0;
    for rank in 0..forest.num_ranks() {
        for (leaf, u) in forest.rank_leaves(rank).iter().zip(states[rank].iter()) {
            let vol = cell_box(conn, leaf.tree, &leaf.quad).volume();
            mass += u.rho * vol;
            energy += u.energy * vol;
            for a in 0..D {
                momentum[a] += u.mom[a] * vol;
            }
        }
    }
    (mass, momentum, energy)
}

/// Adaptation callback that restricts and prolongs cell averages: children
/// copy the parent value; a coarsened parent takes the mean of its children
/// (exactly conservative for equal child volumes).
pub struct StateTransfer<const D: usize> {
    pub old: Vec<EulerState<D>>,
    pub new: Vec<EulerState<D>>,
}

impl<const D: usize> StateTransfer<D> {
    pub fn new(old: Vec<EulerState<D>>) -> Self {
        StateTransfer {
            old,
            new: Vec::new(),
        }
    }
}

impl<const D: usize> crate::forest::AdaptData<D> for StateTransfer<D> {
    fn kept(&mut self, old: usize, new: usize, _leaf: &crate::forest::Leaf<D>) {
        debug_assert_eq!(self.new.len(), new);
        self.new.push(self.old[old]);
    }
    fn refined(&mut self, old: usize, new_first: usize, _parent: &crate::forest::Leaf<D>) {
        debug_assert_eq!(self.new.len(), new_first);
        for _ in 0..num_children(D) {
            self.new.push(self.old[old]);
        }
    }
    fn coarsened(&mut self, old_first: usize, new: usize, _parent: &crate::forest::Leaf<D>) {
        debug_assert_eq!(self.new.len(), new);
        let nc = num_children(D);
        let mut mean = EulerState::<D>::zero();
        for k in 0..nc {
            mean.add_scaled(&self.old[old_first + k], 1.0 / nc as f64);
        }
        self.new.push(mean);
    }
}
