//! Benchmark driver: the rotating-ball adaptation stress test, Euler runs,
//! per-phase timers, performance measures and CSV/VTK output.
//!
//! Each step runs indicator, balanced marking, adaptation, repartitioning
//! and (for Euler) one explicit time step as collective supersteps, with
//! wall-clock timers per phase. Everything except the timers is
//! deterministic: the per-step mesh and states are identical for any rank
//! count and for the serial and threaded executors.

use crate::balance::{balanced_marking, monolithic_balance, BalanceError, BalanceReport};
use crate::connectivity::{Connectivity, MeshError};
use crate::forest::{
    adapt, adapt_raw, partition, partition_with, AdaptError, Forest, Leaf, Marking, NoData,
};
use crate::fvsolver::{
    density_jump_indicator, init_states, timestep, EulerConfig, EulerProblem, EulerState,
    ForwardStep, FvError, IndicatorParams, ShockBubble, SodTube,
};
use crate::ghost::{build_ghost, GhostLayer};
use crate::meshiter::{build_intersections, IntersectionTable, IterError};
use crate::quadrant::max_level;
use crate::transport::{CollectiveKind, Executor, World};
use crate::vtk::{level_colors, rank_colors, write_forest_file, CellScalars};
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

/// The rotating-ball indicator band and center path.
#[derive(Debug, Clone, Copy)]
pub struct BallParams {
    pub inner: f64,
    pub outer: f64,
}

impl Default for BallParams {
    fn default() -> Self {
        BallParams {
            inner: 0.15,
            outer: 0.25,
        }
    }
}

/// Center of the rotating ball at phase `t` (period 1).
pub fn ball_center(t: f64) -> [f64; 3] {
    let angle = 2.0 * std::f64::consts::PI * t;
    [
        0.5 + angle.cos() / 3.0,
        0.5 + angle.sin() / 3.0,
        0.5,
    ]
}

/// Mark for refinement every leaf whose barycenter falls inside the spherical
/// band around the rotating center, for coarsening every leaf outside it,
/// within the `[coarse, fine]` level bounds. In 2D the z component of the
/// path is dropped.
pub fn ball_indicator<const D: usize>(
    forest: &Forest<D>,
    params: BallParams,
    t: f64,
    coarse: u8,
    fine: u8,
) -> Marking {
    let center = ball_center(t);
    let conn = forest.connectivity();
    let mut marking = Marking::zeros(forest);
    for (rank, marks) in marking.ranks.iter_mut().enumerate() {
        for (leaf, m) in forest.rank_leaves(rank).iter().zip(marks.iter_mut()) {
            let x = conn.quadrant_center(leaf.tree as usize, &leaf.quad);
            let mut r2 = 0.0;
            for a in 0..D {
                let d = x[a] - center[a];
                r2 += d * d;
            }
            let r = r2.sqrt();
            let inside = params.inner < r && r < params.outer;
            *m = if inside && leaf.quad.level < fine {
                1
            } else if !inside && leaf.quad.level > coarse {
                -1
            } else {
                0
            };
        }
    }
    marking
}

/// Timings and size of one benchmark step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerfRecord {
    pub step: usize,
    pub t: f64,
    pub dt: f64,
    /// Interior (global) element count at this step.
    pub leaves: u64,
    pub comm: f64,
    pub solve: f64,
    pub adapt: f64,
    pub lb: f64,
    pub ts: f64,
}

/// Average per-element run times: one value per phase
/// {COMM, SOLVE, ADAPT, LB, TS}.
pub type PhaseEta = [f64; 5];

/// Per-phase average run time per leaf element over all steps.
pub fn eta_measures(records: &[PerfRecord]) -> PhaseEta {
    assert!(!records.is_empty(), "need at least one record");
    let n = records.len() as f64;
    let mut eta = [0.0; 5];
    for r in records {
        let g = r.leaves as f64;
        eta[0] += r.comm / g;
        eta[1] += r.solve / g;
        eta[2] += r.adapt / g;
        eta[3] += r.lb / g;
        eta[4] += r.ts / g;
    }
    for e in eta.iter_mut() {
        *e /= n;
    }
    eta
}

/// Speedup from `eta_l` (on L ranks) to `eta_k` (on K ranks); optimal is K/L.
pub fn speedup(eta_l: f64, eta_k: f64) -> f64 {
    eta_l / eta_k
}

/// Efficiency of the speedup `s` from L to K ranks; optimal is 1.
pub fn efficiency(l: usize, k: usize, s: f64) -> f64 {
    l as f64 / k as f64 * s
}

/// Write performance records as CSV (`step,t,dt,leaves,comm,solve,adapt,lb,ts`).
pub fn write_csv<W: Write>(out: &mut W, records: &[PerfRecord]) -> std::io::Result<()> {
    writeln!(out, "step,t,dt,leaves,comm,solve,adapt,lb,ts")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.step, r.t, r.dt, r.leaves, r.comm, r.solve, r.adapt, r.lb, r.ts
        )?;
    }
    Ok(())
}

/// Parse CSV written by [`write_csv`]; exact round trip of every value.
pub fn read_csv<R: BufRead>(input: R) -> std::io::Result<Vec<PerfRecord>> {
    let bad = |msg: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string());
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line != "step,t,dt,leaves,comm,solve,adapt,lb,ts" {
                return Err(bad("unexpected CSV header"));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 9 {
            return Err(bad("expected 9 fields"));
        }
        let f = |s: &str| s.parse::<f64>().map_err(|_| bad("bad float"));
        records.push(PerfRecord {
            step: fields[0].parse().map_err(|_| bad("bad step"))?,
            t: f(fields[1])?,
            dt: f(fields[2])?,
            leaves: fields[3].parse().map_err(|_| bad("bad leaves"))?,
            comm: f(fields[4])?,
            solve: f(fields[5])?,
            adapt: f(fields[6])?,
            lb: f(fields[7])?,
            ts: f(fields[8])?,
        });
    }
    Ok(records)
}

/// How 2:1 balance is enforced each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BalanceStrategy {
    /// Iterative balanced marking before adaptation.
    Ripple,
    /// Raw adaptation followed by the monolithic balance.
    Monolithic,
}

/// Which benchmark to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// Rotating-ball adaptation stress test (no PDE).
    Ball,
    /// Euler problems: 1 forward step, 2 shock bubble, 3 Sod tube.
    Euler(u32),
}

/// Benchmark configuration (one run).
#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub workload: Workload,
    pub coarse: u8,
    pub fine: u8,
    pub ranks: usize,
    /// Step count; ball default 100 (one rotation), Euler default unlimited
    /// (run to the problem end time).
    pub steps: Option<usize>,
    pub cfl: Option<f64>,
    pub balance: BalanceStrategy,
    /// Macro brick extent per unit length (ball: trees per side).
    pub brick: usize,
    pub out_dir: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    pub threads: bool,
    pub seed: Option<u64>,
    pub euler: EulerConfig,
    /// Keep per-step mesh (and state) snapshots for comparisons.
    pub record_series: bool,
}

impl BenchConfig {
    pub fn new(workload: Workload, coarse: u8, fine: u8) -> Self {
        BenchConfig {
            workload,
            coarse,
            fine,
            ranks: 1,
            steps: None,
            cfl: None,
            balance: BalanceStrategy::Ripple,
            brick: 16,
            out_dir: None,
            csv: None,
            threads: false,
            seed: None,
            euler: EulerConfig::default(),
            record_series: false,
        }
    }
}

/// Errors from benchmark runs.
#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error("mesh setup failed: {0}")]
    Mesh(#[from] MeshError),
    #[error("balance failed: {0}")]
    Balance(#[from] BalanceError),
    #[error("adaptation failed: {0}")]
    Adapt(#[from] AdaptError),
    #[error("face iteration failed: {0}")]
    Iter(#[from] IterError),
    #[error("solver failed: {0}")]
    Solver(#[from] FvError),
    #[error("i/o failed: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything a run produces besides files.
pub struct RunOutput<const D: usize> {
    pub records: Vec<PerfRecord>,
    /// Balanced-marking report per step (ripple strategy only).
    pub balance_reports: Vec<BalanceReport>,
    /// Marking-sweep face visits per step (ripple) or forced-refinement
    /// face visits per step (monolithic).
    pub marking_visits: Vec<u64>,
    /// Allreduce collectives per step, from the transcript.
    pub allreduces_per_step: Vec<usize>,
    /// Global leaf count per step.
    pub leaf_series: Vec<u64>,
    /// Per-step global leaf snapshots (when `record_series`).
    pub mesh_series: Vec<Vec<Leaf<D>>>,
    /// Per-step global state snapshots (Euler runs with `record_series`).
    pub state_series: Vec<Vec<EulerState<D>>>,
    pub final_forest: Forest<D>,
    pub world: World,
}

fn executor(cfg: &BenchConfig) -> Executor {
    if cfg.threads {
        Executor::Threads
    } else {
        Executor::Serial
    }
}

/// Enforce balance per the strategy and apply the marking. Returns the
/// balanced-marking report (ripple) and the face-visit count of the step.
fn balance_and_adapt<const D: usize>(
    forest: &mut Forest<D>,
    layers: &[GhostLayer<D>],
    mut marking: Marking,
    strategy: BalanceStrategy,
    handlers: &mut [crate::fvsolver::StateTransfer<D>],
    use_states: bool,
    world: &mut World,
) -> Result<(Option<BalanceReport>, u64), BenchError> {
    match strategy {
        BalanceStrategy::Ripple => {
            let report = balanced_marking(forest, layers, &mut marking, world)?;
            let visits = report.face_visits;
            if use_states {
                adapt(forest, layers, &marking, handlers, world)?;
            } else {
                let mut nodata = vec![NoData; forest.num_ranks()];
                adapt(forest, layers, &marking, &mut nodata, world)?;
            }
            Ok((Some(report), visits))
        }
        BalanceStrategy::Monolithic => {
            if use_states {
                adapt_raw(forest, &marking, handlers, world)?;
            } else {
                let mut nodata = vec![NoData; forest.num_ranks()];
                adapt_raw(forest, &marking, &mut nodata, world)?;
            }
            // The raw adaptation may leave the mesh unbalanced; repair it.
            // State restriction/prolongation across the repair reuses the
            // same transfer handlers.
            let report = if use_states {
                monolithic_balance_with_states(forest, handlers, world)?
            } else {
                monolithic_balance(forest, world)?
            };
            Ok((None, report.face_visits))
        }
    }
}

/// Monolithic balance that drags per-leaf Euler states through each forced
/// refinement round.
fn monolithic_balance_with_states<const D: usize>(
    forest: &mut Forest<D>,
    handlers: &mut [crate::fvsolver::StateTransfer<D>],
    world: &mut World,
) -> Result<crate::balance::MonolithicReport, BenchError> {
    use crate::balance::MonolithicReport;
    use crate::meshiter::{FaceOccupants, RankView};
    use crate::quadrant::num_faces;
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
                        FaceOccupants::Same(_) | FaceOccupants::Coarser(_) => visits += 1,
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
        // The handlers arrive with the current states in `new` (from the
        // raw adaptation that preceded the repair); make them the source
        // for this round's transfer.
        for h in handlers.iter_mut() {
            h.old = std::mem::take(&mut h.new);
        }
        adapt_raw(forest, &marking, handlers, world)?;
    }
    Ok(report)
}

/// Run the rotating-ball adaptation benchmark.
pub fn run_ball<const D: usize>(cfg: &BenchConfig) -> Result<RunOutput<D>, BenchError> {
    if cfg.fine > max_level(D) || cfg.coarse > cfg.fine {
        return Err(BenchError::Config(format!(
            "need coarse <= fine <= {}",
            max_level(D)
        )));
    }
    let steps = cfg.steps.unwrap_or(100);
    let conn = Arc::new(Connectivity::<D>::brick([cfg.brick; D], [false; D]));
    let mut world = World::with_executor(cfg.ranks, executor(cfg));
    let mut forest = Forest::new_uniform(conn, cfg.coarse, cfg.ranks);
    let mut layers = build_ghost(&forest, &mut world);
    let params = BallParams::default();

    let mut out = RunOutput {
        records: Vec::new(),
        balance_reports: Vec::new(),
        marking_visits: Vec::new(),
        allreduces_per_step: Vec::new(),
        leaf_series: Vec::new(),
        mesh_series: Vec::new(),
        state_series: Vec::new(),
        final_forest: forest.clone(),
        world: World::new(1),
    };

    let dt = 1.0 / steps as f64;
    for step in 0..steps {
        let t = step as f64 * dt;
        let mark = world.transcript.mark();
        let step_start = Instant::now();

        let marking = ball_indicator(&forest, params, t, cfg.coarse, cfg.fine);

        let adapt_start = Instant::now();
        let mut no_states: Vec<crate::fvsolver::StateTransfer<D>> = Vec::new();
        for _ in 0..cfg.ranks {
            no_states.push(crate::fvsolver::StateTransfer::new(Vec::new()));
        }
        let (report, visits) = balance_and_adapt(
            &mut forest,
            &layers,
            marking,
            cfg.balance,
            &mut no_states,
            false,
            &mut world,
        )?;
        let adapt_time = adapt_start.elapsed().as_secs_f64();

        let lb_start = Instant::now();
        partition(&mut forest, None, &mut world);
        let lb_time = lb_start.elapsed().as_secs_f64();

        let comm_start = Instant::now();
        layers = build_ghost(&forest, &mut world);
        let comm_time = comm_start.elapsed().as_secs_f64();

        let ts_time = step_start.elapsed().as_secs_f64();
        out.allreduces_per_step
            .push(world.transcript.count_since(mark, CollectiveKind::Allreduce));
        if let Some(r) = report {
            out.balance_reports.push(r);
        }
        out.marking_visits.push(visits);
        out.leaf_series.push(forest.num_global());
        if cfg.record_series {
            out.mesh_series.push(forest.global_leaf_vec());
        }
        out.records.push(PerfRecord {
            step,
            t,
            dt,
            leaves: forest.num_global(),
            comm: comm_time,
            solve: 0.0,
            adapt: adapt_time,
            lb: lb_time,
            ts: ts_time,
        });
        if let Some(dir) = &cfg.out_dir {
            let path = dir.join(format!("ball_{step:04}.vtk"));
            write_forest_file(
                &path,
                &forest,
                &[
                    CellScalars::Int("rank", rank_colors(&forest)),
                    CellScalars::Int("level", level_colors(&forest)),
                ],
            )?;
        }
    }

    if let Some(path) = &cfg.csv {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_csv(&mut file, &out.records)?;
    }
    out.final_forest = forest;
    out.world = world;
    Ok(out)
}

fn euler_problem<const D: usize>(
    id: u32,
    cfg: &EulerConfig,
) -> Result<Box<dyn EulerProblem<D>>, BenchError> {
    match id {
        1 => Ok(Box::new(ForwardStep::<D> { cfg: cfg.clone() })),
        2 => Ok(Box::new(ShockBubble::<D> { cfg: cfg.clone() })),
        3 => Ok(Box::new(SodTube::<D> { cfg: cfg.clone() })),
        other => Err(BenchError::Config(format!(
            "unknown Euler problem id {other} (1 = forward-step, 2 = shock-bubble, 3 = sod)"
        ))),
    }
}

/// Run an adaptive Euler benchmark.
pub fn run_euler<const D: usize>(cfg: &BenchConfig) -> Result<RunOutput<D>, BenchError> {
    let Workload::Euler(problem_id) = cfg.workload else {
        return Err(BenchError::Config("not an Euler workload".into()));
    };
    if cfg.fine > max_level(D) || cfg.coarse > cfg.fine {
        return Err(BenchError::Config(format!(
            "need coarse <= fine <= {}",
            max_level(D)
        )));
    }
    let problem = euler_problem::<D>(problem_id, &cfg.euler)?;
    let cfl = cfg.cfl.unwrap_or(cfg.euler.cfl);
    let params = IndicatorParams {
        coarse_level: cfg.coarse,
        fine_level: cfg.fine,
        refine_jump: cfg.euler.refine_jump,
        coarsen_jump: cfg.euler.coarsen_jump,
    };

    let conn = Arc::new(problem.connectivity(cfg.brick)?);
    let mut world = World::with_executor(cfg.ranks, executor(cfg));
    let mut forest = Forest::new_uniform(conn, cfg.coarse, cfg.ranks);
    let mut layers = build_ghost(&forest, &mut world);
    let mut tables = build_tables(&forest, &layers)?;
    let mut states = init_states(&forest, problem.as_ref())?;

    // Resolve the initial data: adapt to the indicator before time stepping,
    // re-sampling the initial condition on each refined mesh.
    for _ in cfg.coarse..cfg.fine {
        let marking =
            density_jump_indicator(&forest, &layers, &tables, &states, params, &mut world)?;
        let mut handlers: Vec<crate::fvsolver::StateTransfer<D>> = states
            .iter_mut()
            .map(|s| crate::fvsolver::StateTransfer::new(std::mem::take(s)))
            .collect();
        let (_, _) = balance_and_adapt(
            &mut forest,
            &layers,
            marking,
            cfg.balance,
            &mut handlers,
            true,
            &mut world,
        )?;
        states = handlers.into_iter().map(|h| h.new).collect();
        partition_with(&mut forest, None, Some(&mut states), &mut world);
        layers = build_ghost(&forest, &mut world);
        tables = build_tables(&forest, &layers)?;
        states = init_states(&forest, problem.as_ref())?;
    }

    let mut out = RunOutput {
        records: Vec::new(),
        balance_reports: Vec::new(),
        marking_visits: Vec::new(),
        allreduces_per_step: Vec::new(),
        leaf_series: Vec::new(),
        mesh_series: Vec::new(),
        state_series: Vec::new(),
        final_forest: forest.clone(),
        world: World::new(1),
    };

    let end_time = problem.end_time();
    let max_steps = cfg.steps.unwrap_or(usize::MAX);
    let mut t = 0.0;
    let mut step = 0;
    while t < end_time && step < max_steps {
        let mark = world.transcript.mark();
        let step_start = Instant::now();

        // Evolve.
        let solve_start = Instant::now();
        let dt = timestep(
            &forest,
            &layers,
            &tables,
            &mut states,
            problem.as_ref(),
            cfl,
            &mut world,
        )?;
        let solve_time = solve_start.elapsed().as_secs_f64();
        t += dt;

        // Adapt to the new solution.
        let adapt_start = Instant::now();
        let marking =
            density_jump_indicator(&forest, &layers, &tables, &states, params, &mut world)?;
        let mut handlers: Vec<crate::fvsolver::StateTransfer<D>> = states
            .iter_mut()
            .map(|s| crate::fvsolver::StateTransfer::new(std::mem::take(s)))
            .collect();
        let (report, visits) = balance_and_adapt(
            &mut forest,
            &layers,
            marking,
            cfg.balance,
            &mut handlers,
            true,
            &mut world,
        )?;
        states = handlers.into_iter().map(|h| h.new).collect();
        let adapt_time = adapt_start.elapsed().as_secs_f64();

        // Load balance.
        let lb_start = Instant::now();
        partition_with(&mut forest, None, Some(&mut states), &mut world);
        let lb_time = lb_start.elapsed().as_secs_f64();

        // Rebuild communication structures.
        let comm_start = Instant::now();
        layers = build_ghost(&forest, &mut world);
        tables = build_tables(&forest, &layers)?;
        let comm_time = comm_start.elapsed().as_secs_f64();

        let ts_time = step_start.elapsed().as_secs_f64();
        out.allreduces_per_step
            .push(world.transcript.count_since(mark, CollectiveKind::Allreduce));
        if let Some(r) = report {
            out.balance_reports.push(r);
        }
        out.marking_visits.push(visits);
        out.leaf_series.push(forest.num_global());
        if cfg.record_series {
            out.mesh_series.push(forest.global_leaf_vec());
            out.state_series
                .push(states.iter().flat_map(|s| s.iter().copied()).collect());
        }
        out.records.push(PerfRecord {
            step,
            t,
            dt,
            leaves: forest.num_global(),
            comm: comm_time,
            solve: solve_time,
            adapt: adapt_time,
            lb: lb_time,
            ts: ts_time,
        });
        if let Some(dir) = &cfg.out_dir {
            let rho: Vec<f64> = states
                .iter()
                .flat_map(|s| s.iter().map(|u| u.rho))
                .collect();
            let path = dir.join(format!("euler_{step:04}.vtk"));
            write_forest_file(
                &path,
                &forest,
                &[
                    CellScalars::Int("rank", rank_colors(&forest)),
                    CellScalars::Int("level", level_colors(&forest)),
                    CellScalars::Float("density", rho),
                ],
            )?;
        }
        step += 1;
    }

    if let Some(path) = &cfg.csv {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        write_csv(&mut file, &out.records)?;
    }
    out.final_forest = forest;
    out.world = world;
    Ok(out)
}

fn build_tables<const D: usize>(
    forest: &Forest<D>,
    layers: &[GhostLayer<D>],
) -> Result<Vec<IntersectionTable>, IterError> {
    let mut tables = Vec::with_capacity(forest.num_ranks());
    for rank in 0..forest.num_ranks() {
        let view = crate::meshiter::RankView::new(forest, rank, &layers[rank]);
        tables.push(build_intersections(&view, rank)?);
    }
    Ok(tables)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ball_center_period() {
        let a = ball_center(0.0);
        let b = ball_center(1.0);
        assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        assert!((a[0] - (0.5 + 1.0 / 3.0)).abs() < 1e-12);
        assert_eq!(a[2], 0.5);
    }

    #[test]
    fn eta_direct_evaluation() {
        let records: Vec<PerfRecord> = (0..5)
            .map(|step| PerfRecord {
                step,
                t: step as f64,
                dt: 1.0,
                leaves: 10,
                comm: 0.0,
                solve: 0.0,
                adapt: 0.0,
                lb: 0.0,
                ts: 2.0,
            })
            .collect();
        let eta = eta_measures(&records);
        assert!((eta[4] - 0.2).abs() < 1e-15);
        // Per-element time halving from 1 to 2 ranks is optimal.
        assert_eq!(speedup(0.2, 0.1), 2.0);
        assert_eq!(efficiency(1, 2, 2.0), 1.0);
        // Equal per-element times: speedup 1, efficiency L/K.
        assert_eq!(speedup(0.2, 0.2), 1.0);
        assert_eq!(efficiency(1, 2, 1.0), 0.5);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let records = vec![PerfRecord {
            step: 3,
            t: 0.1 + 0.2,
            dt: 1.0 / 3.0,
            leaves: 12345,
            comm: 1e-9,
            solve: 0.123_456_789_123_456_78,
            adapt: f64::MIN_POSITIVE,
            lb: 1e300,
            ts: 2.5e-7,
        }];
        let mut buf = Vec::new();
        write_csv(&mut buf, &records).unwrap();
        let back = read_csv(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back, records);
    }

    #[test]
    fn ball_run_constant_when_no_headroom() {
        // coarse == fine: the mesh can never change.
        let mut cfg = BenchConfig::new(Workload::Ball, 1, 1);
        cfg.brick = 4;
        cfg.steps = Some(5);
        cfg.ranks = 2;
        let out = run_ball::<2>(&cfg).unwrap();
        assert!(out.leaf_series.iter().all(|&n| n == 64));
        assert!(out
            .balance_reports
            .iter()
            .all(|r| !r.fell_back && r.sweeps_used <= 3));
    }
}
