//! Online sandboxing: the history-based supervisor and the fallback advisor.
//!
//! Each step an unverified external controller proposes an input. The
//! supervisor
//!
//! 1. collects the abstract inputs compatible with the proposal under the
//!    interface refinement, rejecting outright when there are none;
//! 2. estimates, at the worst compatible abstract input, the end-to-end
//!    probability that the run violates the specification if the proposal is
//!    applied now and the synthesized advisor takes over afterwards;
//! 3. accepts the proposal while that estimate stays within the tolerance η,
//!    and otherwise applies the advisor's own input through the interface.
//!
//! The estimate is incremental. A running product accumulates the masked
//! transition mass of the abstract history, so a decision touches one kernel
//! row per candidate input instead of replaying the run; the replay oracle
//! [`replay_accumulators`] recomputes the same quantities from scratch for
//! cross-checking.

use std::time::Instant;

use nalgebra::DVector;

use crate::abstraction::FiniteAbstraction;
use crate::error::{Error, Result};
use crate::model::NoiseSample;
use crate::relation::{compute_gamma, feasible_inputs, EpsGeometry};
use crate::scenario::{Mode, Scenario};
use crate::synthesis::{
    row_contraction, synthesize_robust, synthesize_worst, ProductGeometry, Synthesis,
};

/// Who drives the plant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Supervision {
    /// The supervisor arbitrates between the external controller and the
    /// advisor; the default.
    Sandboxed,
    /// The advisor drives every step; external proposals are ignored.
    AdvisorOnly,
    /// The external controller drives raw; nothing is checked.
    Unsupervised,
}

/// Offline products a sandbox needs online, assembled once per scenario.
pub struct Artifacts {
    pub abs: FiniteAbstraction,
    pub geom: EpsGeometry,
    pub product: ProductGeometry,
    pub synthesis: Synthesis,
    /// Feasibility margin consumed by noise mismatch and quantization.
    pub gamma: f64,
    /// Pseudoinverse of the plant noise matrix, for recovering the shared
    /// noise realization from consecutive states.
    noise_pinv: nalgebra::DMatrix<f64>,
    /// Per automaton state, the abstract states counted by the running
    /// product (X̂′_ε in robust mode, X̂′₋ε in worst-case mode) as 0/1
    /// weights, so the accumulator shares the row contraction with the
    /// estimate.
    masks: Vec<Vec<f64>>,
}

impl Artifacts {
    /// Runs the offline pipeline: letter geometry, product successors, value
    /// and policy synthesis in the scenario's mode, the feasibility margin,
    /// and the noise recovery operator.
    pub fn assemble(scn: &Scenario, abs: FiniteAbstraction) -> Result<Artifacts> {
        Artifacts::assemble_inner(scn, abs, None)
    }

    /// Like [`Artifacts::assemble`] but reuses a previously synthesized
    /// table (from the table cache) instead of re-running the recursion.
    pub fn assemble_with_synthesis(
        scn: &Scenario,
        abs: FiniteAbstraction,
        synthesis: Synthesis,
    ) -> Result<Artifacts> {
        Artifacts::assemble_inner(scn, abs, Some(synthesis))
    }

    fn assemble_inner(
        scn: &Scenario,
        abs: FiniteAbstraction,
        synthesis: Option<Synthesis>,
    ) -> Result<Artifacts> {
        let geom = EpsGeometry::new(&abs, &scn.labels, scn.relation.eps)?;
        let product = ProductGeometry::new(&abs, &scn.dfa, &geom);
        let synthesis = match synthesis {
            Some(tables) => tables,
            None => match scn.run.mode {
                Mode::Robust => synthesize_robust(
                    &abs,
                    &scn.dfa,
                    &product,
                    scn.relation.delta,
                    scn.run.horizon,
                )?,
                Mode::WorstCase => synthesize_worst(
                    &abs,
                    &scn.dfa,
                    &product,
                    scn.relation.delta,
                    scn.run.horizon,
                )?,
            },
        };
        let gamma = compute_gamma(&scn.relation, &scn.model, &abs)?;
        let svd = scn.model.r.clone().svd(true, true);
        let max_sv = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-9 * max_sv {
            return Err(Error::Contract(
                "plant noise matrix is column-rank deficient; the abstract memory \
                 cannot recover the shared noise from the state trajectory"
                    .into(),
            ));
        }
        let noise_pinv = svd
            .pseudo_inverse(1e-12 * max_sv)
            .map_err(|m| Error::Contract(format!("noise matrix pseudoinverse failed: {m}")))?;
        let masks = (0..scn.dfa.nstates())
            .map(|q| {
                let mask = match scn.run.mode {
                    Mode::Robust => geom.x_eps_set(&scn.dfa, q),
                    Mode::WorstCase => geom.x_neg_eps_set(&scn.dfa, q),
                };
                mask.into_iter().map(|b| if b { 1.0 } else { 0.0 }).collect()
            })
            .collect();
        Ok(Artifacts { abs, geom, product, synthesis, gamma, noise_pinv, masks })
    }
}

/// One step of the coupled history: the abstract and automaton memory before
/// the step and the abstract input fed to the coupled run (None while
/// unsupervised, where nothing is coupled).
#[derive(Debug, Clone, Copy)]
pub struct HistoryEntry {
    pub xhat: usize,
    pub q: usize,
    pub uhat: Option<usize>,
}

/// Supervisor verdict on one external proposal.
#[derive(Debug, Clone)]
pub struct Decision {
    /// Abstract inputs compatible with the proposal, ascending.
    pub feasible: Vec<usize>,
    /// Risk estimate at the worst compatible input; None when infeasible.
    pub risk: Option<f64>,
    /// The worst compatible input itself, fed to the abstract memory on
    /// acceptance.
    pub uhat: Option<usize>,
    pub accept: bool,
}

/// Outcome of one sandbox step. The state triple is the decision context,
/// captured before the step moved anything.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub k: usize,
    /// Plant state the decision was taken at.
    pub state: DVector<f64>,
    /// Abstract memory at decision time.
    pub xhat: usize,
    /// Automaton memory at decision time.
    pub q: usize,
    /// The external proposal drove the plant this step.
    pub accepted: bool,
    /// Number of abstract inputs compatible with the proposal.
    pub feasible: usize,
    /// Risk estimate behind the verdict; None when the proposal had no
    /// compatible abstract input or no supervisor ran.
    pub risk: Option<f64>,
    /// Abstract input the estimate was taken at.
    pub risk_uhat: Option<usize>,
    /// Abstract input fed to the coupled memory (the worst compatible input
    /// on acceptance, the advisor's input on rejection).
    pub uhat_applied: Option<usize>,
    /// Input applied to the plant.
    pub input: DVector<f64>,
    /// Wall clock spent inside the supervisor decision alone.
    pub latency_ns: u64,
}

/// A single run's live state: the plant state, the coupled abstract and
/// automaton memory, and the incremental risk accumulators.
pub struct Sandbox<'a> {
    scn: &'a Scenario,
    art: &'a Artifacts,
    supervision: Supervision,
    x: DVector<f64>,
    xhat: usize,
    q: usize,
    k: usize,
    /// Running product of δ-discounted masked one-step masses over the
    /// history (P_k in the estimate).
    survival: f64,
    /// Σ_j δ·P_j, the violation mass already conceded by the coupling;
    /// stays 0 in worst-case mode where δ = 0 pins it.
    conceded: f64,
    history: Vec<HistoryEntry>,
    /// Hedged weight row memo keyed by (effective value slice, q); with the
    /// stationary tail compressed this hits on almost every step.
    weight_key: (usize, usize),
    weights: Vec<f64>,
}

impl<'a> Sandbox<'a> {
    pub fn new(scn: &'a Scenario, art: &'a Artifacts, supervision: Supervision) -> Sandbox<'a> {
        Sandbox {
            scn,
            art,
            supervision,
            x: scn.model.x0.clone(),
            xhat: scn.initial_cell(),
            q: scn.initial_dfa_state(),
            k: 0,
            survival: 1.0,
            conceded: 0.0,
            history: Vec::with_capacity(scn.run.horizon),
            weight_key: (usize::MAX, usize::MAX),
            weights: vec![0.0; art.abs.nstates()],
        }
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.x
    }

    pub fn abstract_cell(&self) -> usize {
        self.xhat
    }

    pub fn automaton_state(&self) -> usize {
        self.q
    }

    pub fn step_index(&self) -> usize {
        self.k
    }

    pub fn history(&self) -> &[HistoryEntry] {
        &self.history
    }

    /// Incremental accumulators (running product, conceded sum).
    pub fn accumulators(&self) -> (f64, f64) {
        (self.survival, self.conceded)
    }

    fn refresh_weights(&mut self, n: usize, q: usize) {
        let effective = n.min(self.art.synthesis.values.stored() - 1);
        if self.weight_key != (effective, q) {
            self.art.product.weight_row(
                self.art.synthesis.values.slice(n),
                q,
                self.scn.run.mode,
                &mut self.weights,
            );
            self.weight_key = (effective, q);
        }
    }

    // The weight slice is a per-decision quantity: it is shared across the
    // input candidates of one supervision step, never across steps, so the
    // online cost stays proportional to the abstraction size.
    fn invalidate_weights(&mut self) {
        self.weight_key = (usize::MAX, usize::MAX);
    }

    /// End-to-end risk estimate for one candidate abstract input at the
    /// current history: the closed contribution of the past plus the value
    /// bound over the remaining time-to-go.
    pub fn risk_estimate(&mut self, uhat: usize) -> f64 {
        assert!(self.k < self.scn.run.horizon, "no decisions remain past the horizon");
        let n = self.scn.run.horizon - self.k - 1;
        self.refresh_weights(n, self.q);
        let row = self.art.abs.kernel_row(self.xhat, uhat);
        let s = row_contraction(row, &self.weights, self.art.abs.grid.sink());
        let delta = self.scn.relation.delta;
        match self.scn.run.mode {
            Mode::Robust => {
                self.survival * (1.0 - delta) * (1.0 - s) + delta + self.conceded
            }
            Mode::WorstCase => 1.0 - self.survival * (1.0 - delta) * (1.0 - s),
        }
    }

    /// Supervisor verdict for an external proposal at the current step.
    pub fn supervise(&mut self, u_uc: &DVector<f64>) -> Decision {
        self.invalidate_weights();
        let feasible = feasible_inputs(
            &self.scn.relation,
            &self.scn.model,
            &self.art.abs,
            self.art.gamma,
            &self.x,
            self.xhat,
            u_uc,
        );
        if feasible.is_empty() {
            return Decision { feasible, risk: None, uhat: None, accept: false };
        }
        let mut worst = f64::NEG_INFINITY;
        let mut worst_uhat = feasible[0];
        for &ui in &feasible {
            let risk = self.risk_estimate(ui);
            // Strict comparison keeps the first optimum: lowest-index ties.
            if risk > worst {
                worst = risk;
                worst_uhat = ui;
            }
        }
        assert!(
            (-1e-9..=1.0 + 1e-9).contains(&worst),
            "risk estimate {worst} left [0, 1]"
        );
        let accept = worst <= self.scn.run.eta;
        Decision { feasible, risk: Some(worst), uhat: Some(worst_uhat), accept }
    }

    /// Recovers the shared noise realization from consecutive plant states;
    /// exact up to rounding because the noise matrix has full column rank.
    fn recover_noise(&self, u: &DVector<f64>, x_next: &DVector<f64>) -> DVector<f64> {
        let residual = x_next - self.scn.model.step_mean(&self.x, u);
        &self.art.noise_pinv * residual
    }

    /// Advances one step: decides who drives, applies the chosen input to
    /// the plant with the given noise, and updates the coupled abstract and
    /// automaton memory plus the risk accumulators.
    ///
    /// `u_uc` is the external proposal; required unless the sandbox runs
    /// advisor-only.
    pub fn step(&mut self, u_uc: Option<&DVector<f64>>, noise: &NoiseSample) -> Result<StepRecord> {
        let horizon = self.scn.run.horizon;
        if self.k >= horizon {
            return Err(Error::Contract(format!(
                "step {} past the {horizon}-step horizon",
                self.k
            )));
        }
        let k = self.k;
        if u_uc.is_none() && self.supervision != Supervision::AdvisorOnly {
            return Err(Error::Contract(
                "this supervision mode needs an external proposal".into(),
            ));
        }

        let advisor_input = self.art.synthesis.policy.input(horizon - k, self.xhat, self.q);
        let (accepted, nfeasible, risk, risk_uhat, uhat_applied, latency_ns) =
            match self.supervision {
                Supervision::Unsupervised => (true, 0, None, None, None, 0),
                Supervision::AdvisorOnly => (false, 0, None, None, Some(advisor_input), 0),
                Supervision::Sandboxed => {
                    let u_uc = u_uc.expect("checked above");
                    let started = Instant::now();
                    let decision = self.supervise(u_uc);
                    let latency = started.elapsed().as_nanos() as u64;
                    let applied = if decision.accept { decision.uhat } else { Some(advisor_input) };
                    (
                        decision.accept,
                        decision.feasible.len(),
                        decision.risk,
                        decision.uhat,
                        applied,
                        latency,
                    )
                }
            };

        let input = if accepted {
            u_uc.expect("accepted steps carry a proposal").clone()
        } else {
            let uhat = uhat_applied.expect("rejected steps fall back to the advisor");
            let xhat_c = DVector::from_vec(self.art.abs.grid.center(self.xhat));
            let uhat_c = DVector::from_vec(self.art.abs.inputs.center(uhat));
            self.scn.relation.refine_input(&self.scn.model, &self.x, &xhat_c, &uhat_c)?
        };

        let x_next = self.scn.model.step(&self.x, &input, noise)?;
        let state_before = self.x.clone();
        let xhat_before = self.xhat;
        let q_before = self.q;
        self.history.push(HistoryEntry { xhat: self.xhat, q: self.q, uhat: uhat_applied });

        if let Some(uhat) = uhat_applied {
            // Accumulators first: the mask belongs to q before the move, the
            // kernel row to the abstract state and input before the move.
            let row = self.art.abs.kernel_row(self.xhat, uhat);
            let mass = row_contraction(row, &self.art.masks[self.q], self.art.abs.grid.sink());
            let delta = self.scn.relation.delta;
            self.survival *= (1.0 - delta) * mass;
            if self.scn.run.mode == Mode::Robust {
                self.conceded += delta * self.survival;
            }
            // Abstract memory: reduced-model step at the cell center, driven
            // by the recovered shared noise, quantized back onto the grid.
            let recovered = self.recover_noise(&input, &x_next);
            let red = &self.art.abs.reduced;
            let xhat_c = DVector::from_vec(self.art.abs.grid.center(self.xhat));
            let uhat_c = DVector::from_vec(self.art.abs.inputs.center(uhat));
            let mut next_point = &red.a * &xhat_c + &red.b * &uhat_c + &red.r * &recovered;
            next_point.axpy((&red.f * &xhat_c)[0].exp(), &red.e, 1.0);
            self.xhat = self.art.abs.grid.locate(next_point.as_slice());
        }

        let y = self.scn.model.output(&x_next);
        self.q = self.scn.dfa.step(self.q, self.scn.labels.label(y.as_slice()));
        self.x = x_next;
        self.k += 1;

        Ok(StepRecord {
            k,
            state: state_before,
            xhat: xhat_before,
            q: q_before,
            accepted,
            feasible: nfeasible,
            risk,
            risk_uhat,
            uhat_applied,
            input,
            latency_ns,
        })
    }
}

/// Recomputes the running product and conceded sum from scratch over a
/// recorded history, with plain summation and masks taken straight from the
/// letter geometry. The sandbox's incremental accumulators must agree with
/// this to rounding.
pub fn replay_accumulators(
    scn: &Scenario,
    art: &Artifacts,
    history: &[HistoryEntry],
) -> (f64, f64) {
    let masks: Vec<Vec<bool>> = (0..scn.dfa.nstates())
        .map(|q| match scn.run.mode {
            Mode::Robust => art.geom.x_eps_set(&scn.dfa, q),
            Mode::WorstCase => art.geom.x_neg_eps_set(&scn.dfa, q),
        })
        .collect();
    let sink = art.abs.grid.sink();
    let delta = scn.relation.delta;
    let mut survival = 1.0;
    let mut conceded = 0.0;
    for entry in history {
        let Some(uhat) = entry.uhat else { continue };
        let mask = &masks[entry.q];
        let row = art.abs.kernel_row(entry.xhat, uhat);
        let mut mass = 0.0;
        for (cell, p) in row.cells() {
            if mask[cell] {
                mass += p;
            }
        }
        if mask[sink] {
            mass += row.sink;
        }
        survival *= (1.0 - delta) * mass;
        if scn.run.mode == Mode::Robust {
            conceded += delta * survival;
        }
    }
    (survival, conceded)
}
