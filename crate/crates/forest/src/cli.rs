//! Command-line driver shared by the benchmark binaries.
//!
//! Invocation shape: `<binary> p c f <outdir|none> [flags]` where `p` is the
//! problem number, `c` the coarsest and `f` the finest refinement level, and
//! the fourth argument an output directory for VTK snapshots (or `none`).

use crate::bench::{
    eta_measures, run_ball, run_euler, BalanceStrategy, BenchConfig, RunOutput, Workload,
};
use crate::fvsolver::EulerConfig;
use std::path::PathBuf;

/// Which binary front-end is running.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Ball2d,
    Ball3d,
    Euler2d,
    Euler3d,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Ball2d => "ball2d",
            Mode::Ball3d => "ball3d",
            Mode::Euler2d => "euler2d",
            Mode::Euler3d => "euler3d",
        }
    }

    fn is_ball(self) -> bool {
        matches!(self, Mode::Ball2d | Mode::Ball3d)
    }
}

/// Environment variable providing the default rank count.
pub const RANKS_ENV: &str = "AMR_RANKS";

fn usage(mode: Mode) -> String {
    let problems = if mode.is_ball() {
        "problem number (2 = rotating ball)"
    } else {
        "problem number (1 = forward step, 2 = shock bubble, 3 = Sod tube)"
    };
    format!(
        "usage: {} p c f <outdir|none> [flags]\n\
         \n\
         positional arguments:\n\
         \x20 p            {problems}\n\
         \x20 c            coarsest refinement level\n\
         \x20 f            finest refinement level (f >= c)\n\
         \x20 outdir       directory for VTK snapshots, or \"none\"\n\
         \n\
         flags:\n\
         \x20 --ranks P    simulated rank count (default: ${RANKS_ENV} or 1)\n\
         \x20 --balance S  balance strategy: ripple | monolithic (default ripple)\n\
         \x20 --steps N    step cap (ball default: 100, one full rotation)\n\
         \x20 --cfl X      CFL number (Euler runs)\n\
         \x20 --csv PATH   write per-step timings as CSV\n\
         \x20 --brick N    macro trees per unit length (default 16)\n\
         \x20 --config F   key=value file with solver constants\n\
         \x20 --threads    run ranks on OS threads instead of round-robin\n\
         \x20 --seed S     reserved for randomized workloads (accepted, unused)\n",
        mode.name()
    )
}

fn parse_args(mode: Mode, args: &[String]) -> Result<BenchConfig, String> {
    if args.len() < 4 {
        return Err("expected 4 positional arguments".into());
    }
    let problem: u32 = args[0].parse().map_err(|_| "p must be an integer")?;
    let coarse: u8 = args[1].parse().map_err(|_| "c must be a level")?;
    let fine: u8 = args[2].parse().map_err(|_| "f must be a level")?;
    if fine < coarse {
        return Err("need f >= c".into());
    }
    let workload = if mode.is_ball() {
        if problem != 2 {
            return Err(format!("unknown ball problem {problem} (only 2)"));
        }
        Workload::Ball
    } else {
        Workload::Euler(problem)
    };
    let mut cfg = BenchConfig::new(workload, coarse, fine);
    if args[3] != "none" {
        cfg.out_dir = Some(PathBuf::from(&args[3]));
    }
    if let Ok(ranks) = std::env::var(RANKS_ENV) {
        cfg.ranks = ranks
            .parse()
            .map_err(|_| format!("bad {RANKS_ENV} value {ranks:?}"))?;
    }

    let mut it = args[4..].iter();
    while let Some(flag) = it.next() {
        let mut value = |name: &str| {
            it.next()
                .cloned()
                .ok_or_else(|| format!("{name} needs a value"))
        };
        match flag.as_str() {
            "--ranks" => {
                cfg.ranks = value("--ranks")?
                    .parse()
                    .map_err(|_| "--ranks needs a positive integer")?;
                if cfg.ranks == 0 {
                    return Err("--ranks needs a positive integer".into());
                }
            }
            "--balance" => {
                cfg.balance = match value("--balance")?.as_str() {
                    "ripple" => BalanceStrategy::Ripple,
                    "monolithic" => BalanceStrategy::Monolithic,
                    other => return Err(format!("unknown balance strategy {other:?}")),
                };
            }
            "--steps" => {
                cfg.steps = Some(
                    value("--steps")?
                        .parse()
                        .map_err(|_| "--steps needs an integer")?,
                );
            }
            "--cfl" => {
                cfg.cfl = Some(
                    value("--cfl")?
                        .parse()
                        .map_err(|_| "--cfl needs a number")?,
                );
            }
            "--csv" => cfg.csv = Some(PathBuf::from(value("--csv")?)),
            "--brick" => {
                cfg.brick = value("--brick")?
                    .parse()
                    .map_err(|_| "--brick needs a positive integer")?;
                if cfg.brick == 0 {
                    return Err("--brick needs a positive integer".into());
                }
            }
            "--config" => {
                let path = value("--config")?;
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| format!("cannot read {path}: {e}"))?;
                cfg.euler = EulerConfig::parse(&text).map_err(|e| e.to_string())?;
            }
            "--threads" => cfg.threads = true,
            "--seed" => {
                cfg.seed = Some(
                    value("--seed")?
                        .parse()
                        .map_err(|_| "--seed needs an integer")?,
                );
            }
            other => return Err(format!("unknown flag {other:?}")),
        }
    }
    Ok(cfg)
}

fn print_eta_table<const D: usize>(cfg: &BenchConfig, out: &RunOutput<D>) {
    let eta = eta_measures(&out.records);
    println!(
        "run: {} steps, {} ranks, final leaves {}",
        out.records.len(),
        cfg.ranks,
        out.final_forest.num_global()
    );
    println!("average run time per element and step (seconds):");
    for (name, value) in ["COMM", "SOLVE", "ADAPT", "LB", "TS"].iter().zip(eta.iter()) {
        println!("  {name:<6} {value:.6e}");
    }
    if !out.balance_reports.is_empty() {
        let max_sweeps = out.balance_reports.iter().map(|r| r.sweeps_used).max().unwrap();
        let fallbacks = out.balance_reports.iter().filter(|r| r.fell_back).count();
        println!("balanced marking: max sweeps {max_sweeps}, fallbacks {fallbacks}");
    }
}

/// Entry point of the benchmark binaries. Returns the process exit status.
pub fn cli_main(mode: Mode, args: &[String]) -> i32 {
    let cfg = match parse_args(mode, args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}\n");
            eprintln!("{}", usage(mode));
            return 2;
        }
    };
    if let Some(dir) = &cfg.out_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("error: cannot create {}: {e}", dir.display());
            return 1;
        }
    }
    let result = match mode {
        Mode::Ball2d => run_ball::<2>(&cfg).map(|out| print_eta_table(&cfg, &out)),
        Mode::Ball3d => run_ball::<3>(&cfg).map(|out| print_eta_table(&cfg, &out)),
        Mode::Euler2d => run_euler::<2>(&cfg).map(|out| print_eta_table(&cfg, &out)),
        Mode::Euler3d => run_euler::<3>(&cfg).map(|out| print_eta_table(&cfg, &out)),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
