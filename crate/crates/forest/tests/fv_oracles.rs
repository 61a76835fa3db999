//! Finite volume solver checks: steady states, conservation to round-off,
//! Sod convergence against the exact Riemann solution, and partition
//! independence of init and indicator.

#![allow(clippy::needless_range_loop, clippy::type_complexity)]

mod common;

use forest_amr::bench::{run_euler, BenchConfig, Workload};
use forest_amr::forest::Forest;
use forest_amr::fvsolver::{
    cell_box, density_jump_indicator, init_states, timestep, total_conserved, EulerConfig,
    EulerProblem, EulerState, IndicatorParams, SodTube,
};
use forest_amr::ghost::build_ghost;
use forest_amr::meshiter::{build_intersections, RankView};
use forest_amr::{Connectivity, World};
use std::sync::Arc;

/// Uniform-state problem on a periodic box: any wall behavior is unused.
struct UniformBox;
impl EulerProblem<2> for UniformBox {
    fn name(&self) -> &'static str {
        "uniform"
    }
    fn gamma(&self) -> f64 {
        1.4
    }
    fn end_time(&self) -> f64 {
        1.0
    }
    fn connectivity(&self, base: usize) -> Result<Connectivity<2>, forest_amr::connectivity::MeshError> {
        Ok(Connectivity::brick([base.max(1); 2], [true; 2]))
    }
    fn initial(&self, _x: [f64; 2]) -> EulerState<2> {
        EulerState::from_primitive(1.0, [0.3, -0.2], 0.7, 1.4)
    }
    fn boundary(&self, _x: [f64; 2], _face: usize, inside: &EulerState<2>) -> EulerState<2> {
        *inside
    }
}

/// A smooth density bump advected around a periodic box.
struct PeriodicBump;
impl EulerProblem<2> for PeriodicBump {
    fn name(&self) -> &'static str {
        "bump"
    }
    fn gamma(&self) -> f64 {
        1.4
    }
    fn end_time(&self) -> f64 {
        1.0
    }
    fn connectivity(&self, base: usize) -> Result<Connectivity<2>, forest_amr::connectivity::MeshError> {
        Ok(Connectivity::brick([base.max(1); 2], [true; 2]))
    }
    fn initial(&self, x: [f64; 2]) -> EulerState<2> {
        let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
        let rho = 1.0 + 0.5 * (-40.0 * r2).exp();
        EulerState::from_primitive(rho, [1.0, 0.5], 1.0, 1.4)
    }
    fn boundary(&self, _x: [f64; 2], _face: usize, inside: &EulerState<2>) -> EulerState<2> {
        *inside
    }
}

fn build_tables(
    forest: &Forest<2>,
    layers: &[forest_amr::GhostLayer<2>],
) -> Vec<forest_amr::meshiter::IntersectionTable> {
    (0..forest.num_ranks())
        .map(|rank| {
            let view = RankView::new(forest, rank, &layers[rank]);
            build_intersections(&view, rank).unwrap()
        })
        .collect()
}

#[test]
fn uniform_state_is_steady() {
    let problem = UniformBox;
    let conn = Arc::new(EulerProblem::<2>::connectivity(&problem, 4).unwrap());
    let forest = Forest::new_uniform(conn, 1, 2);
    let mut world = World::new(2);
    let layers = build_ghost(&forest, &mut world);
    let tables = build_tables(&forest, &layers);
    let mut states = init_states(&forest, &problem).unwrap();
    let before = states.clone();
    for _ in 0..5 {
        let dt = timestep(&forest, &layers, &tables, &mut states, &problem, 0.4, &mut world)
            .unwrap();
        assert!(dt > 0.0);
    }
    for (a, b) in states.iter().flatten().zip(before.iter().flatten()) {
        assert!((a.rho - b.rho).abs() < 1e-13);
        assert!((a.energy - b.energy).abs() < 1e-12);
        assert!((a.mom[0] - b.mom[0]).abs() < 1e-13);
    }
}

#[test]
fn mass_and_energy_conserved_on_periodic_domain() {
    let problem = PeriodicBump;
    let conn = Arc::new(EulerProblem::<2>::connectivity(&problem, 8).unwrap());
    // A non-uniform balanced mesh: refine the bump region once.
    let mut forest = Forest::new_uniform(conn, 1, 4);
    let mut world = World::new(4);
    let layers = build_ghost(&forest, &mut world);
    let tables = build_tables(&forest, &layers);
    let mut states = init_states(&forest, &problem).unwrap();
    let params = IndicatorParams {
        coarse_level: 0,
        fine_level: 2,
        refine_jump: 0.01,
        coarsen_jump: 0.001,
    };
    let marking =
        density_jump_indicator(&forest, &layers, &tables, &states, params, &mut world).unwrap();
    let mut marking = marking;
    forest_amr::balance::balanced_marking(&forest, &layers, &mut marking, &mut world).unwrap();
    let mut handlers: Vec<forest_amr::fvsolver::StateTransfer<2>> = states
        .iter_mut()
        .map(|s| forest_amr::fvsolver::StateTransfer::new(std::mem::take(s)))
        .collect();
    forest_amr::forest::adapt(&mut forest, &layers, &marking, &mut handlers, &mut world).unwrap();
    let mut states: Vec<Vec<EulerState<2>>> = handlers.into_iter().map(|h| h.new).collect();
    let layers = build_ghost(&forest, &mut world);
    let tables = build_tables(&forest, &layers);

    let (mass0, mom0, energy0) = total_conserved(&forest, &states);
    for _ in 0..50 {
        timestep(&forest, &layers, &tables, &mut states, &problem, 0.4, &mut world).unwrap();
    }
    let (mass, mom, energy) = total_conserved(&forest, &states);
    assert!((mass - mass0).abs() / mass0.abs() < 1e-12, "{mass0} vs {mass}");
    assert!(
        (energy - energy0).abs() / energy0.abs() < 1e-12,
        "{energy0} vs {energy}"
    );
    for a in 0..2 {
        assert!((mom[a] - mom0[a]).abs() / mom0[a].abs().max(1.0) < 1e-12);
    }
}

#[test]
fn conservation_holds_across_adaptation() {
    // The restrict/prolong callbacks preserve the conserved totals exactly.
    let problem = PeriodicBump;
    let conn = Arc::new(EulerProblem::<2>::connectivity(&problem, 4).unwrap());
    let mut forest = Forest::new_uniform(conn, 1, 2);
    let mut world = World::new(2);
    let mut states = init_states(&forest, &problem).unwrap();
    let mut rng = common::rng(41);
    for _ in 0..4 {
        let (mass0, _, energy0) = total_conserved(&forest, &states);
        let layers = build_ghost(&forest, &mut world);
        let mut marking = common::random_marking(&forest, &mut rng, 0.3, 0.3, 0, 3);
        forest_amr::balance::balanced_marking(&forest, &layers, &mut marking, &mut world)
            .unwrap();
        let mut handlers: Vec<forest_amr::fvsolver::StateTransfer<2>> = states
            .iter_mut()
            .map(|s| forest_amr::fvsolver::StateTransfer::new(std::mem::take(s)))
            .collect();
        forest_amr::forest::adapt(&mut forest, &layers, &marking, &mut handlers, &mut world)
            .unwrap();
        states = handlers.into_iter().map(|h| h.new).collect();
        forest_amr::forest::partition_with(&mut forest, None, Some(&mut states), &mut world);
        let (mass, _, energy) = total_conserved(&forest, &states);
        assert!((mass - mass0).abs() / mass0 < 1e-14);
        assert!((energy - energy0).abs() / energy0 < 1e-14);
    }
}

#[test]
fn sod_density_converges_to_the_exact_solution() {
    // Three uniform refinements of the strip: 128, 256, 512 cells along the
    // tube; the L1 density error must decrease monotonically and end below
    // 0.02.
    let cfg = EulerConfig::default();
    let mut errors = Vec::new();
    for level in [1u8, 2, 3] {
        let problem = SodTube::<2> { cfg: cfg.clone() };
        let conn = Arc::new(EulerProblem::<2>::connectivity(&problem, 64).unwrap());
        let forest = Forest::new_uniform(conn, level, 2);
        let mut world = World::new(2);
        let layers = build_ghost(&forest, &mut world);
        let tables = build_tables(&forest, &layers);
        let mut states = init_states(&forest, &problem).unwrap();
        let mut t = 0.0;
        while t < cfg.sod_end_time {
            let dt = timestep(
                &forest,
                &layers,
                &tables,
                &mut states,
                &problem,
                cfg.cfl,
                &mut world,
            )
            .unwrap();
            // Land exactly on the end time by clipping the final step.
            if t + dt > cfg.sod_end_time {
                // A slightly smaller dt is not applied retroactively; the
                // overshoot is below dt and is handled by sampling at t.
                t += dt;
                break;
            }
            t += dt;
        }
        let exact = common::ExactRiemann::solve(
            cfg.gamma,
            (1.0, 0.0, 1.0),
            (0.125, 0.0, 0.1),
        );
        let mut l1 = 0.0;
        for rank in 0..forest.num_ranks() {
            for (leaf, u) in forest.rank_leaves(rank).iter().zip(states[rank].iter()) {
                let geo = cell_box(forest.connectivity(), leaf.tree, &leaf.quad);
                let c = geo.center();
                let xi = (c[0] - cfg.sod_interface) / t;
                let width = geo.hi[0] - geo.lo[0];
                let height = geo.hi[1] - geo.lo[1];
                // Integrate |error| over the strip and normalize by height.
                l1 += (u.rho - exact.density(xi)).abs() * width * height;
            }
        }
        let strip_height = 1.0 / 64.0;
        l1 /= strip_height;
        errors.push(l1);
    }
    assert!(
        errors[0] > errors[1] && errors[1] > errors[2],
        "not monotone: {errors:?}"
    );
    assert!(errors[2] < 0.02, "final error {}", errors[2]);
}

#[test]
fn open_boundary_mass_change_equals_the_boundary_flux_integral() {
    // On the Sod strip the interior fluxes telescope exactly, so the mass
    // change over one step must equal dt times the net boundary mass flux,
    // recomputed independently from the boundary-face states.
    let cfg = EulerConfig::default();
    let problem = SodTube::<2> { cfg: cfg.clone() };
    let conn = Arc::new(EulerProblem::<2>::connectivity(&problem, 32).unwrap());
    let forest = Forest::new_uniform(conn, 1, 2);
    let mut world = World::new(2);
    let layers = build_ghost(&forest, &mut world);
    let tables = build_tables(&forest, &layers);
    let mut states = init_states(&forest, &problem).unwrap();
    for _ in 0..10 {
        // Pre-state boundary flux integral (mass component): outflow ghosts
        // copy the inside state, reflective walls carry zero mass flux.
        let mut boundary_mass_flux = 0.0;
        for rank in 0..forest.num_ranks() {
            for (i, leaf) in forest.rank_leaves(rank).iter().enumerate() {
                let geo = cell_box(forest.connectivity(), leaf.tree, &leaf.quad);
                for e in tables[rank].entries_of(i) {
                    if e.side.is_some() {
                        continue;
                    }
                    let face = e.face as usize;
                    let axis = forest_amr::quadrant::face_axis(face);
                    let sign = forest_amr::quadrant::face_sign(face);
                    let inside = states[rank][i];
                    let ghost = problem.boundary(geo.face_center(face), face, &inside);
                    let flux = if sign == 1 {
                        forest_amr::fvsolver::hllc_flux(&inside, &ghost, axis, cfg.gamma)
                    } else {
                        forest_amr::fvsolver::hllc_flux(&ghost, &inside, axis, cfg.gamma)
                    }
                    .unwrap();
                    let orient = if sign == 1 { 1.0 } else { -1.0 };
                    boundary_mass_flux += orient * flux.rho * geo.face_area(axis);
                }
            }
        }
        let (mass_before, _, _) = total_conserved(&forest, &states);
        let dt = timestep(
            &forest,
            &layers,
            &tables,
            &mut states,
            &problem,
            cfg.cfl,
            &mut world,
        )
        .unwrap();
        let (mass_after, _, _) = total_conserved(&forest, &states);
        let expected = mass_before - dt * boundary_mass_flux;
        assert!(
            (mass_after - expected).abs() / mass_before < 1e-12,
            "mass {mass_after} vs boundary-flux prediction {expected}"
        );
    }
}

#[test]
fn init_and_indicator_are_partition_independent() {
    let mut reference: Option<(Vec<EulerState<2>>, Vec<i8>)> = None;
    for ranks in [1usize, 2, 4] {
        let mut cfg = BenchConfig::new(Workload::Euler(2), 0, 2);
        cfg.ranks = ranks;
        cfg.brick = 4;
        cfg.steps = Some(0);
        let _ = run_euler::<2>(&cfg).unwrap();

        // Direct check at the solver level.
        let problem = forest_amr::fvsolver::ShockBubble::<2> {
            cfg: EulerConfig::default(),
        };
        let conn = Arc::new(EulerProblem::<2>::connectivity(&problem, 4).unwrap());
        let forest = Forest::new_uniform(conn, 1, ranks);
        let mut world = World::new(ranks);
        let layers = build_ghost(&forest, &mut world);
        let tables = build_tables(&forest, &layers);
        let states = init_states(&forest, &problem).unwrap();
        let params = IndicatorParams {
            coarse_level: 0,
            fine_level: 2,
            refine_jump: 0.06,
            coarsen_jump: 0.02,
        };
        let marking =
            density_jump_indicator(&forest, &layers, &tables, &states, params, &mut world)
                .unwrap();
        let flat_states: Vec<EulerState<2>> = states.into_iter().flatten().collect();
        let flat_marks: Vec<i8> = marking.ranks.into_iter().flatten().collect();
        match &reference {
            None => reference = Some((flat_states, flat_marks)),
            Some((s, m)) => {
                assert_eq!(s, &flat_states, "{ranks} ranks");
                assert_eq!(m, &flat_marks, "{ranks} ranks");
            }
        }
    }
}
