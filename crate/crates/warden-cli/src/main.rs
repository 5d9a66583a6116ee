//! Command-line front end: scenario validation, offline artifact builds,
//! Monte Carlo experiments, and report files.
//!
//! Exit codes: 0 on success, 2 when a scenario fails validation, 3 when
//! `--check` finds the closed loop outside its guarantee band, 1 otherwise.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use warden::harness::{
    cache_dir_from_env, load_or_assemble, load_or_build_abstraction, run_monte_carlo, run_sweep,
    trace_run, violation_tolerance, write_report, write_sweep_csv, CACHE_DIR_ENV,
};
use warden::runtime::Supervision;
use warden::scenario::ControllerKind;
use warden::{Error, Scenario};

#[derive(Parser)]
#[command(
    name = "warden",
    version,
    about = "Finite-abstraction safety advisors and runtime supervisors",
    after_help = format!("Offline artifacts are cached in ${CACHE_DIR_ENV} when it is set.")
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load a scenario file and check every cross-block invariant.
    Validate { scenario: PathBuf },
    /// Build the transition kernel and print its size figures.
    Abstract { scenario: PathBuf },
    /// Build the kernel and value tables; print the offline bound.
    Synthesize { scenario: PathBuf },
    /// Run a Monte Carlo batch and write the report files.
    Simulate(SimulateArgs),
    /// Rebuild the scenario at each sweep level and tabulate size and latency.
    Sweep(SweepArgs),
    /// Full report: the simulation batch plus the resolution sweep.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct SimulateArgs {
    scenario: PathBuf,
    /// Run count override (the DC-motor scenario defaults to its desk-scale
    /// 1000; pass 100000 for the full-scale batch).
    #[arg(long)]
    runs: Option<usize>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Controller override; `tracking` needs gains in the scenario file.
    #[arg(long, value_enum)]
    controller: Option<ControllerChoice>,
    /// Let proposals through unsupervised (baseline measurement).
    #[arg(long, conflicts_with = "advisor_only", conflicts_with = "check")]
    no_supervisor: bool,
    /// Ignore the external controller; the advisor drives every step.
    #[arg(long)]
    advisor_only: bool,
    /// Directory for the report files.
    #[arg(long, default_value = "report")]
    out: PathBuf,
    /// Assert the empirical violation stays inside the Monte Carlo band
    /// around the threshold; exit 3 when it does not.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SweepArgs {
    scenario: PathBuf,
    /// Sandboxed runs per level; latency means come from these.
    #[arg(long, default_value_t = 10)]
    runs: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "report")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    simulate: SimulateArgs,
    /// Sandboxed runs per sweep level.
    #[arg(long, default_value_t = 10)]
    sweep_runs: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerChoice {
    Random,
    Tracking,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Validation { .. } | Error::Dimension { .. } => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run(command: Command) -> warden::Result<ExitCode> {
    let cache = cache_dir_from_env();
    let cache = cache.as_deref();
    match command {
        Command::Validate { scenario } => {
            let scn = Scenario::from_path(&scenario)?;
            println!(
                "ok: {} ({:016x}), {} grid cells + sink, {} inputs, {} automaton states, horizon {}",
                scn.name,
                scn.hash,
                scn.state_grid.ncells(),
                scn.input_subset.len(),
                scn.dfa.nstates(),
                scn.run.horizon,
            );
        }
        Command::Abstract { scenario } => {
            let scn = Scenario::from_path(&scenario)?;
            let abs = load_or_build_abstraction(&scn, cache)?;
            println!(
                "{}: {} states, kernel {} bytes ({} dense-equivalent)",
                scn.name,
                abs.nstates(),
                abs.kernel_bytes(),
                warden::abstraction::memory_estimate(abs.nstates(), abs.uprime.len()),
            );
        }
        Command::Synthesize { scenario } => {
            let scn = Scenario::from_path(&scenario)?;
            let art = load_or_assemble(&scn, cache)?;
            let bound =
                art.synthesis.values.value(scn.run.horizon, scn.initial_cell(), scn.initial_dfa_state());
            println!(
                "{}: offline {} bound {:.6} at the initial cell, {} stored slices",
                scn.name,
                match scn.run.mode {
                    warden::scenario::Mode::Robust => "satisfaction",
                    warden::scenario::Mode::WorstCase => "violation",
                },
                bound,
                art.synthesis.values.stored(),
            );
        }
        Command::Simulate(args) => return simulate(args, cache),
        Command::Sweep(args) => {
            let mut scn = Scenario::from_path(&args.scenario)?;
            if let Some(seed) = args.seed {
                scn.run.seed = seed;
            }
            if scn.sweep.is_empty() {
                return Err(Error::validation("sweep", "the scenario declares no sweep levels"));
            }
            let rows = run_sweep(&scn, args.runs, cache)?;
            std::fs::create_dir_all(&args.out)?;
            let path = args.out.join("sweep.csv");
            write_sweep_csv(&path, &rows)?;
            for r in &rows {
                println!(
                    "{} states, eps {:.4}: mean latency {:.0} ns, bound {:.6}",
                    r.states, r.epsilon, r.mean_latency_ns, r.x0_bound,
                );
            }
            println!("wrote {}", path.display());
        }
        Command::Report(args) => {
            let code = simulate(args.simulate.clone(), cache)?;
            let scn = Scenario::from_path(&args.simulate.scenario)?;
            if scn.sweep.is_empty() {
                println!("no sweep levels declared; skipping sweep.csv");
            } else {
                let rows = run_sweep(&scn, args.sweep_runs, cache)?;
                let path = args.simulate.out.join("sweep.csv");
                write_sweep_csv(&path, &rows)?;
                println!("wrote {}", path.display());
            }
            return Ok(code);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn simulate(args: SimulateArgs, cache: Option<&std::path::Path>) -> warden::Result<ExitCode> {
    let mut scn = Scenario::from_path(&args.scenario)?;
    if let Some(runs) = args.runs {
        scn.run.runs = runs;
    }
    if let Some(seed) = args.seed {
        scn.run.seed = seed;
    }
    match args.controller {
        Some(ControllerChoice::Random) => scn.run.controller = ControllerKind::Random,
        Some(ControllerChoice::Tracking) => {
            if !matches!(scn.run.controller, ControllerKind::Tracking { .. }) {
                return Err(Error::validation(
                    "run.controller",
                    "the scenario file defines no tracking gains to use",
                ));
            }
        }
        None => {}
    }
    let supervision = if args.no_supervisor {
        Supervision::Unsupervised
    } else if args.advisor_only {
        Supervision::AdvisorOnly
    } else {
        Supervision::Sandboxed
    };

    let art = load_or_assemble(&scn, cache)?;
    let metrics = run_monte_carlo(&scn, &art, supervision, scn.run.runs)?;
    let decisions = if scn.run.runs > 0 {
        trace_run(&scn, &art, supervision, 0)?
    } else {
        Vec::new()
    };
    let paths = write_report(&args.out, &scn, &art, &metrics, &decisions)?;

    println!(
        "{}: {:?} mode, {} supervision, {} runs over horizon {}",
        metrics.scenario, metrics.mode, metrics.supervision, metrics.runs, metrics.horizon,
    );
    println!(
        "satisfaction {:.4}, violation {:.4}, acceptance {:.4}, offline bound {:.6}",
        metrics.satisfaction, metrics.violation, metrics.acceptance_rate, metrics.offline_bound,
    );
    println!(
        "latency mean {:.0} ns, p50 {:.0} ns, p95 {:.0} ns, max {:.0} ns",
        metrics.mean_latency_ns, metrics.latency_p50_ns, metrics.latency_p95_ns, metrics.latency_max_ns,
    );
    for p in &paths {
        println!("wrote {}", p.display());
    }

    if args.check {
        let band = violation_tolerance(scn.run.eta, metrics.runs);
        if metrics.violation > band {
            eprintln!(
                "guarantee check failed: violation {:.4} above the tolerance {:.4}",
                metrics.violation, band,
            );
            return Ok(ExitCode::from(3));
        }
        println!("guarantee check passed: violation {:.4} within {:.4}", metrics.violation, band);
    }
    Ok(ExitCode::SUCCESS)
}
