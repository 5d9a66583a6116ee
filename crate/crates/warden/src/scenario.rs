//! Scenario files: one JSON artifact freezes a complete case study.
//!
//! A scenario has five blocks. `model` is the plant, `spec` the labelled
//! output regions plus a DFA over them, `abstraction` the reduced model and
//! grids, `relation` the closeness parameters and interface function, and
//! `run` the experiment parameters. Loading validates each block, then the
//! cross-block invariants, and computes a content hash over the canonical
//! re-serialization so kernel and value-table caches are bound to the exact
//! numbers that produced them.

use std::path::Path;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::abstraction::{FiniteAbstraction, ReducedModel};
use crate::automata::{BoxRegion, Dfa, Interval, LabelMap};
use crate::error::{Error, Result};
use crate::grid::{GridPartition, InputGrid};
use crate::model::SystemModel;
use crate::relation::{InterfaceForm, ProbRelation};

/// Objective of the offline synthesis and the runtime estimate: maximize the
/// probability of reaching the accepting set (the DFA recognises good
/// prefixes) or minimize the probability of reaching it (bad prefixes).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Robust,
    WorstCase,
}

/// Piecewise-constant reference: `value` applies to steps `k < until` not
/// claimed by an earlier segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSegment {
    pub until: usize,
    pub value: f64,
}

/// Value of a reference schedule at step k; steps beyond the last segment
/// hold its value.
pub fn reference_value(schedule: &[ReferenceSegment], k: usize) -> f64 {
    for seg in schedule {
        if k < seg.until {
            return seg.value;
        }
    }
    schedule.last().map_or(0.0, |seg| seg.value)
}

/// The unverified controller bundled with a scenario.
#[derive(Debug, Clone, PartialEq)]
pub enum ControllerKind {
    /// Uniform i.i.d. input over the model input box.
    Random,
    /// Proportional-integral tracking of a reference on the first output
    /// coordinate, saturated to the input box.
    Tracking { kp: f64, ki: f64, bias: f64, reference: Vec<ReferenceSegment> },
}

/// Experiment parameters.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Number of supervised decisions per run; the output trace has
    /// `horizon + 1` entries.
    pub horizon: usize,
    /// Tolerated probability of violating the specification.
    pub eta: f64,
    pub seed: u64,
    pub runs: usize,
    pub mode: Mode,
    pub controller: ControllerKind,
    /// Initial abstract state, given as coordinates and snapped to the
    /// containing grid cell.
    pub xhat0: DVector<f64>,
}

/// One resolution level of the grid-refinement sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepLevel {
    pub cells: Vec<usize>,
    pub epsilon: f64,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: SystemModel,
    pub labels: LabelMap,
    pub dfa: Dfa,
    pub reduced: ReducedModel,
    /// Lifts abstract states into the plant state space (x ≈ P x̂).
    pub p: DMatrix<f64>,
    pub state_grid: GridPartition,
    pub input_grid: InputGrid,
    /// Restricted abstract input set Û′, as strictly increasing indices into
    /// the input grid.
    pub input_subset: Vec<usize>,
    /// Abort threshold for the sparse kernel, in bytes.
    pub memory_cap_bytes: u64,
    pub relation: ProbRelation,
    pub run: RunConfig,
    pub sweep: Vec<SweepLevel>,
    /// Content hash of the canonical scenario; caches carry it in their
    /// headers.
    pub hash: u64,
}

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Scenario> {
        let raw: RawScenario = serde_json::from_str(text)?;
        Scenario::from_raw(raw)
    }

    fn from_raw(raw: RawScenario) -> Result<Scenario> {
        // Canonical form: the parsed struct re-serialized, so formatting and
        // key order in the file do not disturb the hash.
        let canonical = serde_json::to_vec(&raw).expect("parsed scenario re-serializes");
        let hash = fnv1a64(&canonical);

        if raw.name.is_empty() {
            return Err(Error::validation("name", "scenario name is empty"));
        }
        let model = model_from_raw(&raw.model)?;
        let labels = labels_from_raw(&raw.spec.labels)?;
        if labels.dim() != model.c.nrows() {
            return Err(Error::dimension(
                "spec.labels",
                format!(
                    "label regions have dimension {}, model outputs have dimension {}",
                    labels.dim(),
                    model.c.nrows()
                ),
            ));
        }
        let dfa = dfa_from_raw(&raw.spec.dfa, &labels)?;

        let reduced = reduced_from_raw(&raw.abstraction.reduced)?;
        if reduced.c.nrows() != model.c.nrows() {
            return Err(Error::dimension(
                "abstraction.reduced.C",
                "abstract outputs must share the model output dimension",
            ));
        }
        let p = shaped("abstraction.P", &raw.abstraction.p, model.state_dim(), reduced.state_dim())?;
        let state_grid = GridPartition::new(
            raw.abstraction.state_grid.lo.clone(),
            raw.abstraction.state_grid.hi.clone(),
            raw.abstraction.state_grid.cells.clone(),
            "abstraction.state_grid",
        )?;
        if state_grid.dim() != reduced.state_dim() {
            return Err(Error::dimension(
                "abstraction.state_grid",
                "grid dimension must match the reduced state dimension",
            ));
        }
        let input_grid = InputGrid::new(
            raw.abstraction.input_grid.lo.clone(),
            raw.abstraction.input_grid.hi.clone(),
            raw.abstraction.input_grid.cells.clone(),
            "abstraction.input_grid",
        )?;
        if input_grid.dim() != reduced.input_dim() {
            return Err(Error::dimension(
                "abstraction.input_grid",
                "input grid dimension must match the reduced input dimension",
            ));
        }
        let input_subset = if raw.abstraction.input_subset.is_empty() {
            (0..input_grid.len()).collect()
        } else {
            let subset = raw.abstraction.input_subset.clone();
            if subset.windows(2).any(|w| w[0] >= w[1]) || subset[subset.len() - 1] >= input_grid.len() {
                return Err(Error::validation(
                    "abstraction.input_subset",
                    "must be strictly increasing indices into the input grid",
                ));
            }
            subset
        };
        let cap_gb = raw.abstraction.memory_cap_gb.unwrap_or(4.0);
        if !(cap_gb > 0.0) {
            return Err(Error::validation("abstraction.memory_cap_gb", "must be positive"));
        }
        let memory_cap_bytes = (cap_gb * (1u64 << 30) as f64) as u64;

        let n = model.state_dim();
        let m_raw = shaped("relation.M", &raw.relation.m, n, n)?;
        let interface = interface_from_raw(&raw.relation.interface, &model, &reduced, &p)?;
        let relation =
            ProbRelation::new(m_raw, p.clone(), raw.relation.epsilon, raw.relation.delta, interface)?;

        let run = run_from_raw(&raw.run, &state_grid)?;
        let mut sweep = Vec::with_capacity(raw.sweep.len());
        for (i, level) in raw.sweep.iter().enumerate() {
            if level.cells.len() != state_grid.dim() || level.cells.iter().any(|&c| c == 0) {
                return Err(Error::validation(
                    format!("sweep[{i}]"),
                    "cell counts must be positive and match the grid dimension",
                ));
            }
            if !(level.epsilon > 0.0) {
                return Err(Error::validation(format!("sweep[{i}]"), "epsilon must be positive"));
            }
            sweep.push(SweepLevel { cells: level.cells.clone(), epsilon: level.epsilon });
        }

        let scenario = Scenario {
            name: raw.name,
            model,
            labels,
            dfa,
            reduced,
            p,
            state_grid,
            input_grid,
            input_subset,
            memory_cap_bytes,
            relation,
            run,
            sweep,
            hash,
        };
        scenario.check_initial_invariants()?;
        Ok(scenario)
    }

    /// Initial-state invariants shared by loading and sweep derivation:
    /// x̂₀ grid membership, the relation between x₀ and the snapped x̂₀, and
    /// a non-degenerate initial automaton state on both sides.
    fn check_initial_invariants(&self) -> Result<()> {
        // The coupled run feeds one noise realization to both models, so
        // their noise dimensions must agree.
        if self.reduced.r.ncols() != self.model.r.ncols() {
            return Err(Error::validation(
                "abstraction.reduced.R",
                format!(
                    "reduced noise has {} columns, the plant noise has {}; \
                     the coupled runs share one noise vector",
                    self.reduced.r.ncols(),
                    self.model.r.ncols()
                ),
            ));
        }
        let cell = self.state_grid.locate(self.run.xhat0.as_slice());
        if cell == self.state_grid.sink() {
            return Err(Error::validation(
                "run.xhat0",
                "initial abstract state lies outside the grid",
            ));
        }
        let center = DVector::from_vec(self.state_grid.center(cell));
        let value = self.relation.membership_value(&self.model.x0, &center);
        let eps2 = self.relation.eps * self.relation.eps;
        if value > eps2 {
            return Err(Error::validation(
                "run.xhat0",
                format!(
                    "x0 is not in relation with the initial abstract state: \
                     membership value {value:.6} exceeds eps^2 = {eps2:.6}"
                ),
            ));
        }
        let y0 = self.model.output(&self.model.x0);
        if self.dfa.is_accepting(self.dfa.initial(self.labels.label(y0.as_slice()))) {
            return Err(Error::validation(
                "spec.dfa",
                "the first concrete output lands in an accepting state; \
                 the run outcome would be fixed before any decision",
            ));
        }
        let yhat0 = self.reduced.output(&center);
        if self.dfa.is_accepting(self.dfa.initial(self.labels.label(yhat0.as_slice()))) {
            return Err(Error::validation(
                "spec.dfa",
                "the first abstract output lands in an accepting state; \
                 the run outcome would be fixed before any decision",
            ));
        }
        Ok(())
    }

    /// Grid cell holding x̂₀.
    pub fn initial_cell(&self) -> usize {
        self.state_grid.locate(self.run.xhat0.as_slice())
    }

    /// Automaton state after the first concrete output, q̄₀ = τ(q₀, L(h(x₀))).
    pub fn initial_dfa_state(&self) -> usize {
        let y0 = self.model.output(&self.model.x0);
        self.dfa.initial(self.labels.label(y0.as_slice()))
    }

    /// Automaton state after the first abstract output; the offline guarantee
    /// is evaluated at this product state.
    pub fn abstract_initial_dfa_state(&self) -> usize {
        let center = DVector::from_vec(self.state_grid.center(self.initial_cell()));
        let yhat0 = self.reduced.output(&center);
        self.dfa.initial(self.labels.label(yhat0.as_slice()))
    }

    /// Builds the transition kernel for this scenario's grids.
    pub fn build_abstraction(&self) -> Result<FiniteAbstraction> {
        FiniteAbstraction::build(
            self.reduced.clone(),
            self.p.clone(),
            self.state_grid.clone(),
            self.input_grid.clone(),
            self.input_subset.clone(),
            self.memory_cap_bytes,
        )
    }

    /// Derives the scenario at one sweep level: same plant, specification and
    /// interface, different grid resolution and epsilon. The derived hash
    /// mixes the level into the base hash so caches stay distinct.
    pub fn sweep_scenario(&self, level: &SweepLevel) -> Result<Scenario> {
        let state_grid = GridPartition::new(
            self.state_grid.lo.clone(),
            self.state_grid.hi.clone(),
            level.cells.clone(),
            "sweep",
        )?;
        if !(level.epsilon > 0.0) {
            return Err(Error::validation("sweep", "epsilon must be positive"));
        }
        let mut relation = self.relation.clone();
        relation.eps = level.epsilon;
        let mut bytes = self.hash.to_le_bytes().to_vec();
        for &c in &level.cells {
            bytes.extend_from_slice(&(c as u64).to_le_bytes());
        }
        bytes.extend_from_slice(&level.epsilon.to_le_bytes());
        let cells_tag =
            level.cells.iter().map(usize::to_string).collect::<Vec<_>>().join("x");
        let derived = Scenario {
            name: format!("{}_{}", self.name, cells_tag),
            state_grid,
            relation,
            sweep: Vec::new(),
            hash: fnv1a64(&bytes),
            ..self.clone()
        };
        derived.check_initial_invariants()?;
        Ok(derived)
    }
}

/// FNV-1a, the 64-bit variant; stable across platforms and releases, which a
/// cache-binding hash needs and the standard hasher does not promise.
fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn matrix(loc: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(Error::dimension(loc, "matrix must be nonempty"));
    }
    let ncols = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols {
            return Err(Error::dimension(
                loc,
                format!("row {i} has {} entries, row 0 has {ncols}", row.len()),
            ));
        }
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

fn shaped(loc: &str, rows: &[Vec<f64>], nrows: usize, ncols: usize) -> Result<DMatrix<f64>> {
    let m = matrix(loc, rows)?;
    if m.nrows() != nrows || m.ncols() != ncols {
        return Err(Error::dimension(
            loc,
            format!("expected {nrows}x{ncols}, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m)
}

fn model_from_raw(raw: &RawModel) -> Result<SystemModel> {
    let a = matrix("model.A", &raw.a)?;
    let n = a.nrows();
    let model = SystemModel {
        a,
        b: matrix("model.B", &raw.b)?,
        c: matrix("model.C", &raw.c)?,
        e: if raw.e.is_empty() { DVector::zeros(n) } else { DVector::from_vec(raw.e.clone()) },
        f: if raw.f.is_empty() {
            RowDVector::zeros(n)
        } else {
            RowDVector::from_vec(raw.f.clone())
        },
        r: matrix("model.R", &raw.r)?,
        input_lo: DVector::from_vec(raw.input_lo.clone()),
        input_hi: DVector::from_vec(raw.input_hi.clone()),
        x0: DVector::from_vec(raw.x0.clone()),
    };
    model.validate("model")?;
    Ok(model)
}

fn reduced_from_raw(raw: &RawReduced) -> Result<ReducedModel> {
    let a = matrix("abstraction.reduced.A", &raw.a)?;
    let n = a.nrows();
    let reduced = ReducedModel {
        a,
        b: matrix("abstraction.reduced.B", &raw.b)?,
        c: matrix("abstraction.reduced.C", &raw.c)?,
        e: if raw.e.is_empty() { DVector::zeros(n) } else { DVector::from_vec(raw.e.clone()) },
        f: if raw.f.is_empty() {
            RowDVector::zeros(n)
        } else {
            RowDVector::from_vec(raw.f.clone())
        },
        r: matrix("abstraction.reduced.R", &raw.r)?,
    };
    reduced.validate("abstraction.reduced")?;
    Ok(reduced)
}

fn labels_from_raw(raw: &RawLabels) -> Result<LabelMap> {
    let letter_id = |name: &str, loc: &str| -> Result<usize> {
        raw.letters
            .iter()
            .position(|l| l == name)
            .ok_or_else(|| Error::validation(loc, format!("unknown letter {name:?}")))
    };
    let default_letter = letter_id(&raw.default, "spec.labels.default")?;
    let mut regions = Vec::with_capacity(raw.regions.len());
    for (i, region) in raw.regions.iter().enumerate() {
        let loc = format!("spec.labels.regions[{i}]");
        let id = letter_id(&region.letter, &loc)?;
        let dims: Vec<Interval> = region
            .intervals
            .iter()
            .map(|iv| Interval {
                lo: iv.lo,
                hi: iv.hi,
                lo_closed: iv.lo_closed,
                hi_closed: iv.hi_closed,
            })
            .collect();
        regions.push((id, BoxRegion::new(dims)));
    }
    let labels = LabelMap { letters: raw.letters.clone(), regions, default_letter };
    labels.validate("spec.labels")?;
    Ok(labels)
}

fn dfa_from_raw(raw: &RawDfa, labels: &LabelMap) -> Result<Dfa> {
    let state_id = |name: &str, loc: &str| -> Result<usize> {
        raw.states
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::validation(loc, format!("unknown state {name:?}")))
    };
    let q0 = state_id(&raw.initial, "spec.dfa.initial")?;
    let mut accepting = vec![false; raw.states.len()];
    for name in &raw.accepting {
        accepting[state_id(name, "spec.dfa.accepting")?] = true;
    }
    let mut transitions = Vec::with_capacity(raw.transitions.len());
    for (i, (from, letter, to)) in raw.transitions.iter().enumerate() {
        let loc = format!("spec.dfa.transitions[{i}]");
        let letter_id = labels
            .letters
            .iter()
            .position(|l| l == letter)
            .ok_or_else(|| Error::validation(&loc, format!("unknown letter {letter:?}")))?;
        transitions.push((state_id(from, &loc)?, letter_id, state_id(to, &loc)?));
    }
    Dfa::new(raw.states.clone(), q0, accepting, labels.letters.len(), &transitions, "spec.dfa")
}

fn interface_from_raw(
    raw: &RawInterface,
    model: &SystemModel,
    reduced: &ReducedModel,
    p: &DMatrix<f64>,
) -> Result<InterfaceForm> {
    let m = model.input_dim();
    let n = model.state_dim();
    match raw {
        RawInterface::Linear { k, d, r_tilde } => Ok(InterfaceForm::Linear {
            k: shaped("relation.interface.K", k, m, n)?,
            d: shaped("relation.interface.D", d, m, reduced.state_dim())?,
            r_tilde: shaped("relation.interface.R_tilde", r_tilde, m, reduced.input_dim())?,
        }),
        RawInterface::Slope { k, l, g } => {
            let identity_p =
                reduced.state_dim() == n && (p - DMatrix::identity(n, n)).amax() == 0.0;
            if !identity_p {
                return Err(Error::validation(
                    "relation.interface",
                    "the slope interface compares states directly and needs a \
                     full-order abstraction with identity P",
                ));
            }
            if g.len() != m {
                return Err(Error::dimension(
                    "relation.interface.G",
                    format!("expected length {m}, got {}", g.len()),
                ));
            }
            Ok(InterfaceForm::Slope {
                k: shaped("relation.interface.K", k, m, n)?,
                l: shaped("relation.interface.L", l, m, n)?,
                g: DVector::from_vec(g.clone()),
            })
        }
    }
}

fn run_from_raw(raw: &RawRun, grid: &GridPartition) -> Result<RunConfig> {
    if raw.horizon == 0 {
        return Err(Error::validation("run.horizon", "horizon must be at least 1"));
    }
    if !(0.0..=1.0).contains(&raw.eta) {
        return Err(Error::validation(
            "run.eta",
            format!("tolerance must lie in [0, 1], got {}", raw.eta),
        ));
    }
    if raw.runs == 0 {
        return Err(Error::validation("run.runs", "need at least one run"));
    }
    if raw.xhat0.len() != grid.dim() {
        return Err(Error::dimension(
            "run.xhat0",
            format!("expected length {}, got {}", grid.dim(), raw.xhat0.len()),
        ));
    }
    let controller = match &raw.controller {
        RawController::Random => ControllerKind::Random,
        RawController::Tracking { kp, ki, bias, reference } => {
            if reference.is_empty() {
                return Err(Error::validation(
                    "run.controller.reference",
                    "tracking controller needs at least one reference segment",
                ));
            }
            if reference.windows(2).any(|w| w[0].until >= w[1].until) {
                return Err(Error::validation(
                    "run.controller.reference",
                    "segment ends must be strictly increasing",
                ));
            }
            ControllerKind::Tracking {
                kp: *kp,
                ki: *ki,
                bias: *bias,
                reference: reference
                    .iter()
                    .map(|seg| ReferenceSegment { until: seg.until, value: seg.value })
                    .collect(),
            }
        }
    };
    Ok(RunConfig {
        horizon: raw.horizon,
        eta: raw.eta,
        seed: raw.seed,
        runs: raw.runs,
        mode: raw.mode,
        controller,
        xhat0: DVector::from_vec(raw.xhat0.clone()),
    })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    #[serde(default)]
    description: String,
    model: RawModel,
    spec: RawSpec,
    abstraction: RawAbstraction,
    relation: RawRelation,
    run: RawRun,
    #[serde(default)]
    sweep: Vec<RawSweepLevel>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "E", default)]
    e: Vec<f64>,
    #[serde(rename = "F", default)]
    f: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    input_lo: Vec<f64>,
    input_hi: Vec<f64>,
    x0: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    labels: RawLabels,
    dfa: RawDfa,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLabels {
    letters: Vec<String>,
    default: String,
    regions: Vec<RawRegion>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegion {
    letter: String,
    intervals: Vec<RawInterval>,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInterval {
    lo: f64,
    hi: f64,
    #[serde(default = "default_true")]
    lo_closed: bool,
    #[serde(default = "default_true")]
    hi_closed: bool,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDfa {
    states: Vec<String>,
    initial: String,
    accepting: Vec<String>,
    transitions: Vec<(String, String, String)>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAbstraction {
    reduced: RawReduced,
    #[serde(rename = "P")]
    p: Vec<Vec<f64>>,
    state_grid: RawGrid,
    input_grid: RawGrid,
    #[serde(default)]
    input_subset: Vec<usize>,
    #[serde(default)]
    memory_cap_gb: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReduced {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "E", default)]
    e: Vec<f64>,
    #[serde(rename = "F", default)]
    f: Vec<f64>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    cells: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRelation {
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    epsilon: f64,
    delta: f64,
    interface: RawInterface,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RawInterface {
    Linear {
        #[serde(rename = "K")]
        k: Vec<Vec<f64>>,
        #[serde(rename = "D")]
        d: Vec<Vec<f64>>,
        #[serde(rename = "R_tilde")]
        r_tilde: Vec<Vec<f64>>,
    },
    Slope {
        #[serde(rename = "K")]
        k: Vec<Vec<f64>>,
        #[serde(rename = "L")]
        l: Vec<Vec<f64>>,
        #[serde(rename = "G")]
        g: Vec<f64>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    horizon: usize,
    eta: f64,
    seed: u64,
    runs: usize,
    mode: Mode,
    controller: RawController,
    xhat0: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum RawController {
    Random,
    Tracking { kp: f64, ki: f64, bias: f64, reference: Vec<RawSegment> },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSegment {
    until: usize,
    value: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweepLevel {
    cells: Vec<usize>,
    epsilon: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn bundled(name: &str) -> String {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../scenarios")
            .join(name);
        std::fs::read_to_string(path).unwrap()
    }

    fn patched(text: &str, edit: impl FnOnce(&mut serde_json::Value)) -> String {
        let mut value: serde_json::Value = serde_json::from_str(text).unwrap();
        edit(&mut value);
        serde_json::to_string(&value).unwrap()
    }

    #[test]
    fn bundled_headway_scenario_loads_and_relates_x0_to_xhat0() {
        let scn = Scenario::from_json(&bundled("two_car.json")).unwrap();
        assert_eq!(scn.run.mode, Mode::Robust);
        assert_eq!(scn.run.horizon, 11);
        assert_eq!(scn.state_grid.nstates(), 101);
        assert_eq!(scn.input_subset.len(), 20);

        let cell = scn.initial_cell();
        let center = DVector::from_vec(scn.state_grid.center(cell));
        let value = scn.relation.membership_value(&scn.model.x0, &center);
        assert_abs_diff_eq!(value, 0.0213, epsilon = 5e-4);
        assert!(value <= scn.relation.eps * scn.relation.eps);
    }

    #[test]
    fn bundled_headway_scenario_starts_one_step_into_the_hold() {
        let scn = Scenario::from_json(&bundled("two_car.json")).unwrap();
        // y(0) = 2.5 sits in the hold band, so both the concrete and the
        // abstract product start at streak 1.
        assert_eq!(scn.dfa.states[scn.initial_dfa_state()], "hold1");
        assert_eq!(scn.abstract_initial_dfa_state(), scn.initial_dfa_state());
        assert!(!scn.dfa.is_accepting(scn.initial_dfa_state()));
    }

    #[test]
    fn bundled_motor_scenario_loads_with_the_slope_interface() {
        let scn = Scenario::from_json(&bundled("dc_motor.json")).unwrap();
        assert_eq!(scn.run.mode, Mode::WorstCase);
        assert_eq!(scn.state_grid.nstates(), 1601);
        assert_eq!(scn.relation.delta, 0.0);
        assert!(matches!(scn.relation.interface, InterfaceForm::Slope { .. }));
        assert!(matches!(scn.run.controller, ControllerKind::Tracking { .. }));
        assert_eq!(scn.dfa.states[scn.initial_dfa_state()], "locked");

        let cell = scn.initial_cell();
        let center = DVector::from_vec(scn.state_grid.center(cell));
        let value = scn.relation.membership_value(&scn.model.x0, &center);
        assert!(value <= scn.relation.eps * scn.relation.eps);
    }

    #[test]
    fn motor_sweep_levels_match_the_published_state_counts() {
        let scn = Scenario::from_json(&bundled("dc_motor.json")).unwrap();
        let counts: Vec<usize> = scn
            .sweep
            .iter()
            .map(|level| scn.sweep_scenario(level).unwrap().state_grid.nstates())
            .collect();
        assert_eq!(counts, vec![101, 401, 901, 1601, 2501, 3601]);
    }

    #[test]
    fn sweep_scenarios_get_distinct_hashes_and_keep_the_initial_state() {
        let scn = Scenario::from_json(&bundled("dc_motor.json")).unwrap();
        let mut hashes = vec![scn.hash];
        for level in &scn.sweep {
            let derived = scn.sweep_scenario(level).unwrap();
            assert_eq!(derived.relation.eps, level.epsilon);
            assert_ne!(derived.state_grid.sink(), derived.initial_cell());
            hashes.push(derived.hash);
        }
        hashes.sort_unstable();
        hashes.dedup();
        assert_eq!(hashes.len(), scn.sweep.len() + 1);
    }

    #[test]
    fn negative_eta_is_rejected_naming_the_field() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["run"]["eta"] = serde_json::json!(-0.1);
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Validation { location, .. } => assert_eq!(location, "run.eta"),
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn misshapen_state_matrix_is_rejected_naming_the_field() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["model"]["A"] = serde_json::json!([[1.0, -0.15], [0.0, 0.6], [0.0, 0.0]]);
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Dimension { location, .. } => assert_eq!(location, "model.A"),
            other => panic!("expected a dimension error, got {other}"),
        }
    }

    #[test]
    fn hash_ignores_formatting_but_not_values() {
        let text = bundled("two_car.json");
        let base = Scenario::from_json(&text).unwrap().hash;

        let reformatted = patched(&text, |_| ());
        assert_eq!(Scenario::from_json(&reformatted).unwrap().hash, base);

        let nudged = patched(&text, |v| {
            v["relation"]["epsilon"] = serde_json::json!(0.7985);
        });
        assert_ne!(Scenario::from_json(&nudged).unwrap().hash, base);
    }

    #[test]
    fn xhat0_outside_the_grid_is_rejected() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["run"]["xhat0"] = serde_json::json!([12.0]);
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Validation { location, .. } => assert_eq!(location, "run.xhat0"),
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn xhat0_unrelated_to_x0_is_rejected() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["run"]["xhat0"] = serde_json::json!([9.95]);
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Validation { location, message } => {
                assert_eq!(location, "run.xhat0");
                assert!(message.contains("membership"), "unexpected message: {message}");
            }
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn unknown_letter_in_a_transition_is_rejected() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["spec"]["dfa"]["transitions"][0][1] = serde_json::json!("nonsense");
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Validation { location, .. } => {
                assert_eq!(location, "spec.dfa.transitions[0]");
            }
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn accepting_initial_product_state_is_rejected() {
        // Starting at "hold3", the first in-band output resolves the run.
        let text = patched(&bundled("two_car.json"), |v| {
            v["spec"]["dfa"]["initial"] = serde_json::json!("hold3");
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Validation { location, .. } => assert_eq!(location, "spec.dfa"),
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn decreasing_reference_schedule_is_rejected() {
        let text = patched(&bundled("dc_motor.json"), |v| {
            v["run"]["controller"]["reference"][1]["until"] = serde_json::json!(5000);
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Validation { location, .. } => assert_eq!(location, "run.controller.reference"),
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn unordered_input_subset_is_rejected() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["abstraction"]["input_subset"] = serde_json::json!([3, 3, 5]);
        });
        let err = Scenario::from_json(&text).unwrap_err();
        match err {
            Error::Validation { location, .. } => assert_eq!(location, "abstraction.input_subset"),
            other => panic!("expected a validation error, got {other}"),
        }
    }

    #[test]
    fn explicit_input_subset_restricts_the_built_abstraction() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["abstraction"]["input_subset"] = serde_json::json!([0, 5, 19]);
        });
        let scn = Scenario::from_json(&text).unwrap();
        assert_eq!(scn.input_subset, vec![0, 5, 19]);
        let abs = scn.build_abstraction().unwrap();
        assert_eq!(abs.uprime, vec![0, 5, 19]);
        // The full input grid is still built; only synthesis is restricted.
        assert_eq!(abs.ninputs(), 20);
    }

    #[test]
    fn reference_schedule_lookup_is_piecewise_and_clamps_past_the_end() {
        let schedule = [
            ReferenceSegment { until: 3, value: 1.0 },
            ReferenceSegment { until: 6, value: 2.0 },
        ];
        let values: Vec<f64> = (0..8).map(|k| reference_value(&schedule, k)).collect();
        assert_eq!(values, vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0, 2.0]);
    }

    #[test]
    fn unknown_top_level_keys_are_parse_errors() {
        let text = patched(&bundled("two_car.json"), |v| {
            v["extra_block"] = serde_json::json!({});
        });
        assert!(matches!(Scenario::from_json(&text).unwrap_err(), Error::Json(_)));
    }
}
