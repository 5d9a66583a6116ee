//! Batched closed-loop experiments: unverified-controller stand-ins, Monte
//! Carlo runs over the sandboxed plant, report files, and on-disk caching of
//! the offline artifacts.

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use crate::abstraction::{memory_estimate, FiniteAbstraction};
use crate::error::{Error, Result};
use crate::model::{NoiseStream, SystemModel};
use crate::runtime::{Artifacts, Sandbox, StepRecord, Supervision};
use crate::scenario::{reference_value, ControllerKind, Mode, ReferenceSegment, Scenario};
use crate::synthesis::{guarantee_grid, Synthesis};

/// Environment variable naming the directory for kernel and table caches.
pub const CACHE_DIR_ENV: &str = "WARDEN_CACHE_DIR";

/// Cache directory from the environment, if one is configured.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from)
}

/// An unverified controller proposing inputs to the supervisor. Both variants
/// are deterministic in (seed, run, step, state), so runs replay exactly.
pub enum Controller {
    /// Uniform i.i.d. proposals over the model's input box, drawn from a
    /// counter-addressed stream separate from the plant noise.
    Random { stream: NoiseStream, lo: DVector<f64>, hi: DVector<f64> },
    /// Proportional-integral tracking of a piecewise-constant reference on
    /// the first state coordinate, saturated to the input box. A behavioral
    /// stand-in for a trained controller: good nominal performance, no
    /// safety certificate.
    Tracking {
        kp: f64,
        ki: f64,
        bias: f64,
        reference: Vec<ReferenceSegment>,
        integral: f64,
        lo: f64,
        hi: f64,
    },
}

impl Controller {
    /// Instantiates the controller configured for one run.
    pub fn from_kind(
        kind: &ControllerKind,
        model: &SystemModel,
        seed: u64,
        run: u64,
    ) -> Result<Controller> {
        match kind {
            ControllerKind::Random => Ok(Controller::Random {
                stream: NoiseStream::controller(seed, run, model.input_dim()),
                lo: model.input_lo.clone(),
                hi: model.input_hi.clone(),
            }),
            ControllerKind::Tracking { kp, ki, bias, reference } => {
                if model.input_dim() != 1 {
                    return Err(Error::Contract(
                        "the tracking controller drives scalar-input models only".into(),
                    ));
                }
                Ok(Controller::Tracking {
                    kp: *kp,
                    ki: *ki,
                    bias: *bias,
                    reference: reference.clone(),
                    integral: 0.0,
                    lo: model.input_lo[0],
                    hi: model.input_hi[0],
                })
            }
        }
    }

    /// Proposal for step `k` at plant state `x`.
    pub fn propose(&mut self, k: usize, x: &DVector<f64>) -> DVector<f64> {
        match self {
            Controller::Random { stream, lo, hi } => {
                let m = lo.len();
                DVector::from_fn(m, |i, _| stream.uniform((k * m + i) as u64, lo[i], hi[i]))
            }
            Controller::Tracking { kp, ki, bias, reference, integral, lo, hi } => {
                let err = reference_value(reference, k) - x[0];
                *integral += err;
                let u = (*kp * err + *ki * *integral + *bias).clamp(*lo, *hi);
                DVector::from_element(1, u)
            }
        }
    }
}

/// Outcome of one closed-loop run.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub run: usize,
    /// Whether the output trace satisfies the property: reached an accepting
    /// automaton state in robust mode, avoided them all in worst-case mode.
    pub satisfied: bool,
    /// Automaton state name after the final output.
    pub final_state: String,
    /// Supervised decisions that accepted the external proposal.
    pub accepted: usize,
    /// Supervised decisions that rejected it on the risk estimate.
    pub rejected_risk: usize,
    /// Supervised decisions with no compatible abstract input at all.
    pub rejected_infeasible: usize,
    pub mean_latency_ns: f64,
}

/// Aggregates over a batch of runs. Latency percentiles are taken over the
/// per-run mean latencies.
#[derive(Debug, Clone, Serialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub mode: Mode,
    pub supervision: String,
    pub runs: usize,
    pub horizon: usize,
    pub eta: f64,
    /// Fraction of runs whose output trace satisfies the property.
    pub satisfaction: f64,
    /// Complement of `satisfaction`.
    pub violation: f64,
    /// Accepted proposals over all supervised decisions (runs x horizon);
    /// zero outside sandboxed supervision, where no decisions are made.
    pub acceptance_rate: f64,
    /// Offline value-table bound at the initial abstract state.
    pub offline_bound: f64,
    pub mean_latency_ns: f64,
    pub latency_p50_ns: f64,
    pub latency_p95_ns: f64,
    pub latency_max_ns: f64,
    pub outcomes: Vec<RunOutcome>,
}

fn supervision_label(supervision: Supervision) -> &'static str {
    match supervision {
        Supervision::Sandboxed => "sandboxed",
        Supervision::AdvisorOnly => "advisor_only",
        Supervision::Unsupervised => "unsupervised",
    }
}

/// Nearest-rank percentile of an ascending slice; zero when empty.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Monte Carlo violation tolerance at threshold `eta`: three standard errors
/// of the binomial above the threshold itself, floored at the one-hit rate.
pub fn violation_tolerance(eta: f64, runs: usize) -> f64 {
    let n = runs.max(1) as f64;
    eta + 3.0 * (eta.max(1.0 / n) / n).sqrt()
}

/// Plays out one run and tallies it. Satisfaction is judged by running the
/// automaton over the recorded output trace, independently of the sandbox's
/// own memory state; debug builds assert the two agree.
fn play_run(
    scn: &Scenario,
    art: &Artifacts,
    supervision: Supervision,
    run: usize,
    mut log: Option<&mut Vec<StepRecord>>,
) -> Result<RunOutcome> {
    let horizon = scn.run.horizon;
    let mut sandbox = Sandbox::new(scn, art, supervision);
    let mut plant = NoiseStream::plant(scn.run.seed, run as u64, scn.model.noise_dim());
    let mut controller = match supervision {
        Supervision::AdvisorOnly => None,
        _ => Some(Controller::from_kind(&scn.run.controller, &scn.model, scn.run.seed, run as u64)?),
    };

    let mut outputs = Vec::with_capacity(horizon + 1);
    outputs.push(scn.model.output(sandbox.state()));
    let (mut accepted, mut rejected_risk, mut rejected_infeasible) = (0usize, 0usize, 0usize);
    let mut latency_total = 0u128;
    for k in 0..horizon {
        let proposal = controller.as_mut().map(|c| c.propose(k, sandbox.state()));
        let record = sandbox.step(proposal.as_ref(), &plant.sample(k as u64))?;
        outputs.push(scn.model.output(sandbox.state()));
        if supervision == Supervision::Sandboxed {
            if record.accepted {
                accepted += 1;
            } else if record.risk.is_some() {
                rejected_risk += 1;
            } else {
                rejected_infeasible += 1;
            }
        }
        latency_total += record.latency_ns as u128;
        if let Some(log) = log.as_deref_mut() {
            log.push(record);
        }
    }

    let reached = scn.dfa.accepts(&scn.labels, outputs.iter().map(|y| y.as_slice()));
    debug_assert_eq!(reached, scn.dfa.is_accepting(sandbox.automaton_state()));
    let satisfied = match scn.run.mode {
        Mode::Robust => reached,
        Mode::WorstCase => !reached,
    };
    Ok(RunOutcome {
        run,
        satisfied,
        final_state: scn.dfa.states[sandbox.automaton_state()].clone(),
        accepted,
        rejected_risk,
        rejected_infeasible,
        mean_latency_ns: latency_total as f64 / horizon.max(1) as f64,
    })
}

/// Runs the closed loop `runs` times and aggregates the outcomes. Runs are
/// indexed from zero; each draws its own plant and controller streams, so
/// results are independent of execution order.
pub fn run_monte_carlo(
    scn: &Scenario,
    art: &Artifacts,
    supervision: Supervision,
    runs: usize,
) -> Result<RunMetrics> {
    let horizon = scn.run.horizon;
    let mut outcomes = Vec::with_capacity(runs);
    let mut satisfied = 0usize;
    let mut accepted_total = 0usize;
    for run in 0..runs {
        let outcome = play_run(scn, art, supervision, run, None)?;
        satisfied += outcome.satisfied as usize;
        accepted_total += outcome.accepted;
        outcomes.push(outcome);
    }

    let mut latencies: Vec<f64> = outcomes.iter().map(|o| o.mean_latency_ns).collect();
    latencies.sort_by(|a, b| a.total_cmp(b));
    let n = runs.max(1) as f64;
    let satisfaction = satisfied as f64 / n;
    Ok(RunMetrics {
        scenario: scn.name.clone(),
        mode: scn.run.mode,
        supervision: supervision_label(supervision).to_string(),
        runs,
        horizon,
        eta: scn.run.eta,
        satisfaction,
        violation: 1.0 - satisfaction,
        acceptance_rate: accepted_total as f64 / (n * horizon.max(1) as f64),
        offline_bound: art.synthesis.values.value(
            horizon,
            scn.initial_cell(),
            scn.initial_dfa_state(),
        ),
        mean_latency_ns: latencies.iter().sum::<f64>() / n,
        latency_p50_ns: percentile(&latencies, 0.50),
        latency_p95_ns: percentile(&latencies, 0.95),
        latency_max_ns: latencies.last().copied().unwrap_or(0.0),
        outcomes,
    })
}

/// Replays run `run` alone and returns its full decision log.
pub fn trace_run(
    scn: &Scenario,
    art: &Artifacts,
    supervision: Supervision,
    run: usize,
) -> Result<Vec<StepRecord>> {
    let mut log = Vec::with_capacity(scn.run.horizon);
    play_run(scn, art, supervision, run, Some(&mut log))?;
    Ok(log)
}

/// One resolution level's summary: offline sizes and the closed-loop
/// latency observed at that resolution.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub cells: Vec<usize>,
    pub states: usize,
    pub epsilon: f64,
    /// Dense-kernel size in bytes, the conventional reporting figure.
    pub memory_estimate_bytes: u128,
    /// Actual bytes held by the truncated sparse kernel.
    pub kernel_bytes: u64,
    pub mean_latency_ns: f64,
    /// Offline bound at the initial cell: satisfaction in robust mode,
    /// violation in worst-case mode.
    pub x0_bound: f64,
}

// The sweep benchmarks decision cost, so every step proposes the advisor's
// own recommendation: that keeps step-one feasibility alive at every
// resolution (a raw external stream starves it at fine grids, where the
// budget drops below the input-grid pitch) and times the full estimate
// pipeline under identical conditions per level.
fn advisor_echo_latency(scn: &Scenario, art: &Artifacts, runs: usize) -> Result<f64> {
    let mut total = 0u128;
    let mut steps = 0u128;
    for run in 0..runs {
        let mut sandbox = Sandbox::new(scn, art, Supervision::Sandboxed);
        let mut plant = NoiseStream::plant(scn.run.seed, run as u64, scn.model.noise_dim());
        for k in 0..scn.run.horizon {
            let uidx = art.synthesis.policy.input(
                scn.run.horizon - k,
                sandbox.abstract_cell(),
                sandbox.automaton_state(),
            );
            let proposal = DVector::from_vec(art.abs.inputs.center(uidx));
            let record = sandbox.step(Some(&proposal), &plant.sample(k as u64))?;
            total += record.latency_ns as u128;
            steps += 1;
        }
    }
    Ok(total as f64 / steps.max(1) as f64)
}

/// Rebuilds the scenario at every configured sweep level and measures the
/// supervisor's per-decision cost at each, alongside the offline size and
/// guarantee figures. Closed-loop behavior under the scenario's own
/// controller is `run_monte_carlo`'s job, not the sweep's.
pub fn run_sweep(scn: &Scenario, runs: usize, cache_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    scn.sweep
        .iter()
        .map(|level| {
            let sub = scn.sweep_scenario(level)?;
            let art = load_or_assemble(&sub, cache_dir)?;
            Ok(SweepRow {
                cells: level.cells.clone(),
                states: art.abs.nstates(),
                epsilon: level.epsilon,
                memory_estimate_bytes: memory_estimate(art.abs.nstates(), art.abs.uprime.len()),
                kernel_bytes: art.abs.kernel_bytes(),
                mean_latency_ns: advisor_echo_latency(&sub, &art, runs)?,
                x0_bound: art.synthesis.values.value(
                    sub.run.horizon,
                    sub.initial_cell(),
                    sub.initial_dfa_state(),
                ),
            })
        })
        .collect()
}

/// Kernel for the scenario, read from `cache_dir` when a matching cache is
/// present, rebuilt (and recached) otherwise. Stale or unreadable caches are
/// rebuilt silently; only structural errors propagate.
pub fn load_or_build_abstraction(
    scn: &Scenario,
    cache_dir: Option<&Path>,
) -> Result<FiniteAbstraction> {
    let Some(dir) = cache_dir else {
        return scn.build_abstraction();
    };
    let path = dir.join(format!("{}-{:016x}.kernel", scn.name, scn.hash));
    if path.exists() {
        match FiniteAbstraction::read_cache(
            &path,
            scn.hash,
            scn.reduced.clone(),
            scn.p.clone(),
            scn.state_grid.clone(),
            scn.input_grid.clone(),
            scn.input_subset.clone(),
        ) {
            Ok(abs) => return Ok(abs),
            Err(Error::CacheMismatch(_)) | Err(Error::Io(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let abs = scn.build_abstraction()?;
    std::fs::create_dir_all(dir)?;
    abs.write_cache(&path, scn.hash)?;
    Ok(abs)
}

/// Full offline artifacts with both kernel and value-table caching.
pub fn load_or_assemble(scn: &Scenario, cache_dir: Option<&Path>) -> Result<Artifacts> {
    let abs = load_or_build_abstraction(scn, cache_dir)?;
    let Some(dir) = cache_dir else {
        return Artifacts::assemble(scn, abs);
    };
    let path = dir.join(format!("{}-{:016x}.tables", scn.name, scn.hash));
    if path.exists() {
        match Synthesis::read_cache(
            &path,
            scn.hash,
            scn.run.mode,
            abs.nstates(),
            scn.dfa.nstates(),
            scn.run.horizon,
        ) {
            Ok(tables) => return Artifacts::assemble_with_synthesis(scn, abs, tables),
            Err(Error::CacheMismatch(_)) | Err(Error::Io(_)) => {}
            Err(e) => return Err(e),
        }
    }
    let art = Artifacts::assemble(scn, abs)?;
    std::fs::create_dir_all(dir)?;
    art.synthesis.write_cache(&path, scn.hash, scn.run.mode)?;
    Ok(art)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes the metrics as pretty JSON.
pub fn write_metrics_json(path: &Path, metrics: &RunMetrics) -> Result<()> {
    let mut text = serde_json::to_string_pretty(metrics)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Per-run CSV. The latency column comes last so determinism checks can
/// compare everything before it byte for byte.
pub fn write_runs_csv(path: &Path, outcomes: &[RunOutcome]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "run",
        "satisfied",
        "final_state",
        "accepted",
        "rejected_risk",
        "rejected_infeasible",
        "mean_latency_ns",
    ])?;
    for o in outcomes {
        w.write_record([
            o.run.to_string(),
            o.satisfied.to_string(),
            o.final_state.clone(),
            o.accepted.to_string(),
            o.rejected_risk.to_string(),
            o.rejected_infeasible.to_string(),
            o.mean_latency_ns.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-step decision log for a single run, latency last as in the runs CSV.
pub fn write_decisions_csv(path: &Path, scn: &Scenario, records: &[StepRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["k".to_string(), "accepted".to_string(), "risk".to_string()];
    header.extend((0..scn.model.state_dim()).map(|i| format!("x_{i}")));
    header.push("abstract_cell".to_string());
    header.push("automaton_state".to_string());
    header.extend((0..scn.model.input_dim()).map(|i| format!("u_{i}")));
    header.push("latency_ns".to_string());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![r.k.to_string(), r.accepted.to_string(), fmt_opt(r.risk)];
        row.extend(r.state.iter().map(f64::to_string));
        row.push(r.xhat.to_string());
        row.push(scn.dfa.states[r.q].clone());
        row.extend(r.input.iter().map(f64::to_string));
        row.push(r.latency_ns.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Offline bound per grid cell with the cell's center coordinates.
pub fn write_guarantee_csv(path: &Path, scn: &Scenario, art: &Artifacts) -> Result<()> {
    let bounds = guarantee_grid(&art.abs, &scn.dfa, &scn.labels, &art.synthesis.values);
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string()];
    header.extend((0..art.abs.grid.lo.len()).map(|i| format!("center_{i}")));
    header.push("bound".to_string());
    w.write_record(&header)?;
    for (cell, bound) in bounds.iter().enumerate() {
        let mut row = vec![cell.to_string()];
        row.extend(art.abs.grid.center(cell).iter().map(|c| c.to_string()));
        row.push(bound.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Resolution-sweep summary CSV.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "cells",
        "states",
        "epsilon",
        "memory_estimate_bytes",
        "kernel_bytes",
        "mean_latency_ns",
        "x0_bound",
    ])?;
    for r in rows {
        let cells = r.cells.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        w.write_record([
            cells,
            r.states.to_string(),
            r.epsilon.to_string(),
            r.memory_estimate_bytes.to_string(),
            r.kernel_bytes.to_string(),
            r.mean_latency_ns.to_string(),
            r.x0_bound.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the standard report set into `out_dir` and returns the paths:
/// metrics.json, runs.csv, decisions.csv (the logged run), guarantee.csv.
/// Empty inputs still produce valid files with headers.
pub fn write_report(
    out_dir: &Path,
    scn: &Scenario,
    art: &Artifacts,
    metrics: &RunMetrics,
    decisions: &[StepRecord],
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let paths = [
        out_dir.join("metrics.json"),
        out_dir.join("runs.csv"),
        out_dir.join("decisions.csv"),
        out_dir.join("guarantee.csv"),
    ];
    write_metrics_json(&paths[0], metrics)?;
    write_runs_csv(&paths[1], &metrics.outcomes)?;
    write_decisions_csv(&paths[2], scn, decisions)?;
    write_guarantee_csv(&paths[3], scn, art)?;
    Ok(paths.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bundled(name: &str) -> Scenario {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join(format!("../../scenarios/{name}.json"));
        Scenario::from_path(&path).unwrap()
    }

    fn assembled(scn: &Scenario) -> Artifacts {
        Artifacts::assemble(scn, scn.build_abstraction().unwrap()).unwrap()
    }

    #[test]
    fn random_proposals_fill_the_input_box_uniformly() {
        let scn = bundled("two_car");
        let mut ctl =
            Controller::from_kind(&ControllerKind::Random, &scn.model, 7, 0).unwrap();
        let x = scn.model.x0.clone();
        let (lo, hi) = (scn.model.input_lo[0], scn.model.input_hi[0]);
        let n = 100_000;
        let mut sum = 0.0;
        for k in 0..n {
            let u = ctl.propose(k, &x)[0];
            assert!(u >= lo && u <= hi);
            sum += u;
        }
        // Mean of U[-8, 8] is 0 with standard error 4.62/sqrt(n).
        let mid = 0.5 * (lo + hi);
        let se = (hi - lo) / 12f64.sqrt() / (n as f64).sqrt();
        assert!((sum / n as f64 - mid).abs() < 4.0 * se);
    }

    #[test]
    fn random_proposals_replay_per_run_and_differ_across_runs() {
        let scn = bundled("two_car");
        let x = scn.model.x0.clone();
        let mut a = Controller::from_kind(&ControllerKind::Random, &scn.model, 7, 3).unwrap();
        let mut b = Controller::from_kind(&ControllerKind::Random, &scn.model, 7, 3).unwrap();
        let mut c = Controller::from_kind(&ControllerKind::Random, &scn.model, 7, 4).unwrap();
        for k in 0..32 {
            assert_eq!(a.propose(k, &x), b.propose(k, &x));
        }
        assert_ne!(a.propose(0, &x), c.propose(0, &x));
    }

    #[test]
    fn degenerate_input_box_yields_a_constant_proposal() {
        let lo = DVector::from_element(1, 2.5);
        let mut ctl = Controller::Random {
            stream: NoiseStream::controller(9, 0, 1),
            lo: lo.clone(),
            hi: lo,
        };
        for k in 0..100 {
            assert_eq!(ctl.propose(k, &DVector::zeros(1))[0], 2.5);
        }
    }

    #[test]
    fn tracking_controller_outputs_its_bias_at_zero_error() {
        let scn = bundled("dc_motor");
        let ControllerKind::Tracking { bias, reference, .. } = &scn.run.controller else {
            panic!("bundled motor scenario tracks a reference");
        };
        let mut ctl =
            Controller::from_kind(&scn.run.controller, &scn.model, 1, 0).unwrap();
        let mut x = DVector::zeros(scn.model.state_dim());
        x[0] = reference_value(reference, 0);
        assert_abs_diff_eq!(ctl.propose(0, &x)[0], *bias, epsilon = 1e-12);
    }

    #[test]
    fn tracking_controller_saturates_at_the_input_box() {
        let scn = bundled("dc_motor");
        let mut ctl =
            Controller::from_kind(&scn.run.controller, &scn.model, 1, 0).unwrap();
        let mut low = DVector::zeros(scn.model.state_dim());
        low[0] = -1e6;
        assert_eq!(ctl.propose(0, &low)[0], scn.model.input_hi[0]);
        let mut ctl =
            Controller::from_kind(&scn.run.controller, &scn.model, 1, 0).unwrap();
        let mut high = DVector::zeros(scn.model.state_dim());
        high[0] = 1e6;
        assert_eq!(ctl.propose(0, &high)[0], scn.model.input_lo[0]);
    }

    #[test]
    fn tracking_controller_settles_the_noise_free_motor() {
        use crate::model::NoiseSample;
        let scn = bundled("dc_motor");
        let ControllerKind::Tracking { reference, .. } = &scn.run.controller else {
            panic!("bundled motor scenario tracks a reference");
        };
        let mut ctl =
            Controller::from_kind(&scn.run.controller, &scn.model, 1, 0).unwrap();
        let mut x = scn.model.x0.clone();
        let quiet = NoiseSample::zero(scn.model.noise_dim());
        for k in 0..10_000 {
            let u = ctl.propose(k, &x);
            x = scn.model.step(&x, &u, &quiet).unwrap();
        }
        // Settled within 5% of the first reference segment by its end.
        let target = reference_value(reference, 0);
        assert!((x[0] - target).abs() <= 0.05 * target.abs());
    }

    #[test]
    fn tracking_controller_requires_a_scalar_input() {
        let scn = bundled("dc_motor");
        let mut model = scn.model.clone();
        model.b = nalgebra::DMatrix::zeros(model.state_dim(), 2);
        model.input_lo = DVector::from_vec(vec![0.0, 0.0]);
        model.input_hi = DVector::from_vec(vec![1.0, 1.0]);
        assert!(Controller::from_kind(&scn.run.controller, &model, 1, 0).is_err());
    }

    #[test]
    fn monte_carlo_batches_replay_identically() {
        let scn = bundled("two_car");
        let art = assembled(&scn);
        let a = run_monte_carlo(&scn, &art, Supervision::Sandboxed, 20).unwrap();
        let b = run_monte_carlo(&scn, &art, Supervision::Sandboxed, 20).unwrap();
        assert_eq!(a.satisfaction, b.satisfaction);
        assert_eq!(a.acceptance_rate, b.acceptance_rate);
        for (oa, ob) in a.outcomes.iter().zip(&b.outcomes) {
            assert_eq!(oa.satisfied, ob.satisfied);
            assert_eq!(oa.final_state, ob.final_state);
            assert_eq!(oa.accepted, ob.accepted);
            assert_eq!(oa.rejected_risk, ob.rejected_risk);
            assert_eq!(oa.rejected_infeasible, ob.rejected_infeasible);
        }
    }

    #[test]
    fn supervised_violations_stay_inside_the_monte_carlo_tolerance() {
        let scn = bundled("two_car");
        let art = assembled(&scn);
        let runs = 200;
        let metrics = run_monte_carlo(&scn, &art, Supervision::Sandboxed, runs).unwrap();
        assert!(metrics.violation <= violation_tolerance(scn.run.eta, runs));
        assert!(metrics.mean_latency_ns > 0.0);
    }

    #[test]
    fn advisor_only_batches_never_accept_anything() {
        let scn = bundled("two_car");
        let art = assembled(&scn);
        let metrics = run_monte_carlo(&scn, &art, Supervision::AdvisorOnly, 50).unwrap();
        assert_eq!(metrics.acceptance_rate, 0.0);
        for o in &metrics.outcomes {
            assert_eq!(o.accepted + o.rejected_risk + o.rejected_infeasible, 0);
        }
        // The advisor alone satisfies the property at least as often as the
        // offline bound predicts, within the batch tolerance.
        assert!(metrics.satisfaction >= metrics.offline_bound - 0.15);
    }

    #[test]
    fn a_unit_threshold_accepts_every_feasible_proposal() {
        let mut scn = bundled("two_car");
        scn.run.eta = 1.0;
        let art = assembled(&scn);
        for run in 0..5 {
            for r in trace_run(&scn, &art, Supervision::Sandboxed, run).unwrap() {
                assert_eq!(r.accepted, r.feasible > 0);
            }
        }
    }

    #[test]
    fn accepted_steps_respect_the_threshold_and_rejections_exceed_it() {
        let scn = bundled("two_car");
        let art = assembled(&scn);
        for run in 0..10 {
            for r in trace_run(&scn, &art, Supervision::Sandboxed, run).unwrap() {
                match (r.accepted, r.risk) {
                    (true, Some(risk)) => {
                        assert!(risk <= scn.run.eta);
                        assert!(r.feasible > 0);
                    }
                    (false, Some(risk)) => assert!(risk > scn.run.eta),
                    (false, None) => assert_eq!(r.feasible, 0),
                    (true, None) => panic!("accepted a proposal without a risk estimate"),
                }
            }
        }
    }

    // Tightening eta is only monotone pointwise: once a rejection swaps in
    // the advisor input the trajectories diverge and per-run accepted counts
    // can go either way. The test pins the pointwise property on the shared
    // prefix and the batch-level rate.
    #[test]
    fn tightening_the_threshold_only_flips_decisions_toward_rejection() {
        let scn = bundled("two_car");
        let art = assembled(&scn);
        let mut tight_scn = bundled("two_car");
        tight_scn.run.eta = scn.run.eta / 2.0;
        let tight_art = assembled(&tight_scn);
        let (mut loose_total, mut tight_total) = (0usize, 0usize);
        for run in 0..30 {
            let loose = trace_run(&scn, &art, Supervision::Sandboxed, run).unwrap();
            let tight = trace_run(&tight_scn, &tight_art, Supervision::Sandboxed, run).unwrap();
            loose_total += loose.iter().filter(|r| r.accepted).count();
            tight_total += tight.iter().filter(|r| r.accepted).count();
            for (l, t) in loose.iter().zip(&tight) {
                if l.state != t.state {
                    break;
                }
                assert_eq!(l.risk, t.risk);
                if l.accepted != t.accepted {
                    assert!(l.accepted && !t.accepted);
                    break;
                }
            }
        }
        assert!(tight_total <= loose_total);
    }

    #[test]
    fn reports_keep_their_headers_when_there_is_nothing_to_report() {
        let scn = bundled("two_car");
        let art = assembled(&scn);
        let metrics = run_monte_carlo(&scn, &art, Supervision::Sandboxed, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_report(dir.path(), &scn, &art, &metrics, &[]).unwrap();
        for p in &paths {
            assert!(p.exists(), "{} missing", p.display());
        }
        let runs = std::fs::read_to_string(&paths[1]).unwrap();
        assert_eq!(runs.lines().count(), 1);
        assert!(runs.starts_with("run,satisfied,"));
        let decisions = std::fs::read_to_string(&paths[2]).unwrap();
        assert_eq!(decisions.lines().count(), 1);
        assert!(decisions.contains("x_0") && decisions.contains("u_0"));
        // The guarantee grid is independent of the batch and never empty.
        let guarantee = std::fs::read_to_string(&paths[3]).unwrap();
        assert_eq!(guarantee.lines().count(), 1 + art.abs.grid.ncells());
    }

    #[test]
    fn run_reports_are_byte_identical_up_to_the_latency_column() {
        let scn = bundled("two_car");
        let art = assembled(&scn);
        let dir = tempfile::tempdir().unwrap();
        let strip_latency = |text: &str| {
            text.lines()
                .map(|l| l.rsplit_once(',').unwrap().0.to_string())
                .collect::<Vec<_>>()
        };
        let mut passes = Vec::new();
        for pass in 0..2 {
            let metrics = run_monte_carlo(&scn, &art, Supervision::Sandboxed, 20).unwrap();
            let decisions = trace_run(&scn, &art, Supervision::Sandboxed, 0).unwrap();
            let out = dir.path().join(format!("pass{pass}"));
            let paths = write_report(&out, &scn, &art, &metrics, &decisions).unwrap();
            let runs = std::fs::read_to_string(&paths[1]).unwrap();
            let dec = std::fs::read_to_string(&paths[2]).unwrap();
            passes.push((strip_latency(&runs), strip_latency(&dec)));
        }
        assert_eq!(passes[0], passes[1]);
    }

    #[test]
    fn artifact_caches_roundtrip_and_stale_caches_rebuild() {
        let scn = bundled("two_car");
        let dir = tempfile::tempdir().unwrap();
        let fresh = load_or_assemble(&scn, Some(dir.path())).unwrap();
        let kernel = dir.path().join(format!("{}-{:016x}.kernel", scn.name, scn.hash));
        let tables = dir.path().join(format!("{}-{:016x}.tables", scn.name, scn.hash));
        assert!(kernel.exists() && tables.exists());

        let cached = load_or_assemble(&scn, Some(dir.path())).unwrap();
        assert_eq!(
            fresh.synthesis.values.value(scn.run.horizon, scn.initial_cell(), scn.initial_dfa_state()),
            cached.synthesis.values.value(scn.run.horizon, scn.initial_cell(), scn.initial_dfa_state()),
        );
        assert_eq!(fresh.synthesis.values.stored(), cached.synthesis.values.stored());

        // A truncated cache is treated as stale and rebuilt in place.
        std::fs::write(&tables, b"WARDTAB1garbage").unwrap();
        let rebuilt = load_or_assemble(&scn, Some(dir.path())).unwrap();
        assert_eq!(fresh.synthesis.values.stored(), rebuilt.synthesis.values.stored());
        assert!(std::fs::metadata(&tables).unwrap().len() > 64);
    }

    #[test]
    fn sweep_reports_one_row_per_level_with_growing_state_counts() {
        let mut scn = bundled("two_car");
        scn.sweep = vec![
            crate::scenario::SweepLevel { cells: vec![20], epsilon: 1.6 },
            crate::scenario::SweepLevel { cells: vec![40], epsilon: 1.1 },
        ];
        let rows = run_sweep(&scn, 3, None).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].states, 21);
        assert_eq!(rows[1].states, 41);
        assert!(rows[0].memory_estimate_bytes < rows[1].memory_estimate_bytes);
        assert!(rows.iter().all(|r| r.mean_latency_ns > 0.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sweep.csv");
        write_sweep_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().starts_with("20,21,"));
    }
}
