//! Offline synthesis: finite-horizon dynamic programming over the product of
//! the abstraction and the specification automaton.
//!
//! Robust mode maximizes the probability of reaching the accepting set (the
//! automaton recognises good prefixes); worst-case mode minimizes the
//! probability of reaching it (bad prefixes). Both hedge the automaton move
//! over every letter realizable within ε of the successor's output, so the
//! computed value bounds the coupled concrete run, not just the abstract one.
//!
//! Accepting rows are pinned to 1 at every iteration. The sink state's
//! absorbing kernel row is an artifact of the construction, so its value is
//! pinned to the conservative verdict instead of trusted to the recursion:
//! 0 in robust mode (an off-grid run never counts as satisfying), 1 in
//! worst-case mode (it always counts as violating).

use crate::abstraction::{FiniteAbstraction, KernelRow};
use crate::automata::{Dfa, LabelMap};
use crate::error::{Error, Result};
use crate::relation::EpsGeometry;
use crate::scenario::Mode;

/// Sup-norm threshold below which two consecutive slices count as equal and
/// the tail of the horizon reads through to the last stored slice. An order
/// tighter than the 1e-12 the recursion identities are checked at, so the
/// read-through error never eats that budget.
const STATIONARY_TOL: f64 = 1e-13;

/// Per-(state, automaton state) successor sets of the product, precomputed
/// from the ε-ball letter geometry. Shared by the offline recursion and the
/// runtime estimate so both hedge identically.
#[derive(Debug, Clone)]
pub struct ProductGeometry {
    nstates: usize,
    nq: usize,
    /// `succ[q * nstates + xhat]`: automaton states reachable from q by a
    /// letter realizable within ε of x̂'s output; sorted, deduplicated,
    /// nonempty.
    succ: Vec<Vec<usize>>,
}

impl ProductGeometry {
    pub fn new(abs: &FiniteAbstraction, dfa: &Dfa, geom: &EpsGeometry) -> ProductGeometry {
        let nstates = abs.nstates();
        let nq = dfa.nstates();
        let mut succ = Vec::with_capacity(nq * nstates);
        for q in 0..nq {
            for xhat in 0..nstates {
                let set = geom.q_eps_set(dfa, xhat, q);
                debug_assert!(!set.is_empty());
                succ.push(set);
            }
        }
        ProductGeometry { nstates, nq, succ }
    }

    pub fn nstates(&self) -> usize {
        self.nstates
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn successors(&self, xhat: usize, q: usize) -> &[usize] {
        &self.succ[q * self.nstates + xhat]
    }

    /// Fills `w[x̂′]` with the hedged value of the slice at x̂′ seen from
    /// automaton state q: the minimum over realizable successors in robust
    /// mode (the ε-ball resolves against satisfaction), the maximum in
    /// worst-case mode (against safety).
    pub fn weight_row(&self, slice: &[f64], q: usize, mode: Mode, w: &mut [f64]) {
        debug_assert_eq!(w.len(), self.nstates);
        debug_assert_eq!(slice.len(), self.nq * self.nstates);
        for (xhat, out) in w.iter_mut().enumerate() {
            let succ = &self.succ[q * self.nstates + xhat];
            let mut best = slice[succ[0] * self.nstates + xhat];
            for &q2 in &succ[1..] {
                let v = slice[q2 * self.nstates + xhat];
                best = match mode {
                    Mode::Robust => best.min(v),
                    Mode::WorstCase => best.max(v),
                };
            }
            *out = best;
        }
    }
}

/// Kahan dot product of a sparse kernel row against a dense weight vector,
/// sink mass included. The offline recursion and the runtime estimate both
/// contract through this function, so their arithmetic agrees bitwise.
pub fn row_contraction(row: &KernelRow, w: &[f64], sink: usize) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for (cell, p) in row.cells() {
        let term = p * w[cell];
        let y = term - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum + row.sink * w[sink]
}

/// Value slices indexed by time-to-go n; slice 0 is the indicator of the
/// accepting set. Once the iteration goes stationary the remaining horizon
/// reads through to the last stored slice.
#[derive(Debug, Clone)]
pub struct ValueTable {
    nstates: usize,
    nq: usize,
    horizon: usize,
    slices: Vec<Vec<f64>>,
}

impl ValueTable {
    pub fn nstates(&self) -> usize {
        self.nstates
    }

    pub fn nq(&self) -> usize {
        self.nq
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Number of explicitly stored slices (time-to-go 0 included).
    pub fn stored(&self) -> usize {
        self.slices.len()
    }

    /// Slice at time-to-go n, laid out as `slice[q * nstates + xhat]`.
    pub fn slice(&self, n: usize) -> &[f64] {
        assert!(n <= self.horizon, "time-to-go {n} exceeds horizon {}", self.horizon);
        &self.slices[n.min(self.slices.len() - 1)]
    }

    pub fn value(&self, n: usize, xhat: usize, q: usize) -> f64 {
        self.slice(n)[q * self.nstates + xhat]
    }
}

/// Optimal abstract input per (time-to-go, state, automaton state), stored as
/// indices into the scenario's input grid. Reads through past the stationary
/// point like the value table it was synthesized with.
#[derive(Debug, Clone)]
pub struct PolicyTable {
    nstates: usize,
    nq: usize,
    horizon: usize,
    /// `slices[n - 1][q * nstates + xhat]` for time-to-go n ≥ 1.
    slices: Vec<Vec<u32>>,
}

impl PolicyTable {
    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Input grid index prescribed at time-to-go n ≥ 1. Accepting rows and
    /// the sink carry a placeholder (the first admissible input).
    pub fn input(&self, n: usize, xhat: usize, q: usize) -> usize {
        assert!(
            n >= 1 && n <= self.horizon,
            "time-to-go {n} outside 1..={}",
            self.horizon
        );
        debug_assert!(xhat < self.nstates && q < self.nq);
        let slice = &self.slices[(n - 1).min(self.slices.len() - 1)];
        slice[q * self.nstates + xhat] as usize
    }
}

/// A synthesized advisor: the optimal value table and the policy realizing it.
#[derive(Debug, Clone)]
pub struct Synthesis {
    pub values: ValueTable,
    pub policy: PolicyTable,
}

const TABLE_MAGIC: &[u8; 8] = b"WARDTAB1";

fn mode_tag(mode: Mode) -> u8 {
    match mode {
        Mode::Robust => 0,
        Mode::WorstCase => 1,
    }
}

impl Synthesis {
    /// Writes the stored slices to a binary cache bound to the scenario hash
    /// and synthesis mode.
    pub fn write_cache(&self, path: &std::path::Path, scenario_hash: u64, mode: Mode) -> Result<()> {
        use std::io::Write;
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&scenario_hash.to_le_bytes())?;
        w.write_all(&[mode_tag(mode)])?;
        w.write_all(&(self.values.horizon as u64).to_le_bytes())?;
        w.write_all(&(self.values.nstates as u64).to_le_bytes())?;
        w.write_all(&(self.values.nq as u64).to_le_bytes())?;
        w.write_all(&(self.values.slices.len() as u64).to_le_bytes())?;
        for slice in &self.values.slices {
            for &v in slice {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        for slice in &self.policy.slices {
            for &u in slice {
                w.write_all(&u.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table cache back, insisting that hash, mode and dimensions
    /// match the scenario that is asking.
    pub fn read_cache(
        path: &std::path::Path,
        scenario_hash: u64,
        mode: Mode,
        nstates: usize,
        nq: usize,
        horizon: usize,
    ) -> Result<Synthesis> {
        use std::io::Read;
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::CacheMismatch(format!("{} is not a table cache", path.display())));
        }
        let mut u64buf = [0u8; 8];
        let mut read_u64 = |r: &mut dyn Read| -> Result<u64> {
            r.read_exact(&mut u64buf)?;
            Ok(u64::from_le_bytes(u64buf))
        };
        let hash = read_u64(&mut r)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let file_horizon = read_u64(&mut r)? as usize;
        let file_nstates = read_u64(&mut r)? as usize;
        let file_nq = read_u64(&mut r)? as usize;
        let stored = read_u64(&mut r)? as usize;
        if hash != scenario_hash
            || tag[0] != mode_tag(mode)
            || file_horizon != horizon
            || file_nstates != nstates
            || file_nq != nq
        {
            return Err(Error::CacheMismatch(format!(
                "table cache {} was built for a different scenario or mode",
                path.display()
            )));
        }
        if stored == 0 || stored > horizon + 1 {
            return Err(Error::CacheMismatch(format!(
                "table cache {} stores {stored} slices for horizon {horizon}",
                path.display()
            )));
        }
        let len = nq * nstates;
        let mut values = Vec::with_capacity(stored);
        let mut f64buf = [0u8; 8];
        for _ in 0..stored {
            let mut slice = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut f64buf)?;
                slice.push(f64::from_le_bytes(f64buf));
            }
            values.push(slice);
        }
        let mut policies = Vec::with_capacity(stored - 1);
        let mut u32buf = [0u8; 4];
        for _ in 0..stored - 1 {
            let mut slice = Vec::with_capacity(len);
            for _ in 0..len {
                r.read_exact(&mut u32buf)?;
                slice.push(u32::from_le_bytes(u32buf));
            }
            policies.push(slice);
        }
        Ok(Synthesis {
            values: ValueTable { nstates, nq, horizon, slices: values },
            policy: PolicyTable { nstates, nq, horizon, slices: policies },
        })
    }
}

/// Maximal probability of reaching the accepting set within `horizon` steps,
/// hedged over the ε-ball letters; the advisor for satisfaction objectives.
pub fn synthesize_robust(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    pg: &ProductGeometry,
    delta: f64,
    horizon: usize,
) -> Result<Synthesis> {
    synthesize(abs, dfa, pg, delta, horizon, Mode::Robust)
}

/// Minimal probability of reaching the accepting set within `horizon` steps;
/// the advisor for safety objectives where accepting means violating.
pub fn synthesize_worst(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    pg: &ProductGeometry,
    delta: f64,
    horizon: usize,
) -> Result<Synthesis> {
    synthesize(abs, dfa, pg, delta, horizon, Mode::WorstCase)
}

fn check_setup(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    pg: &ProductGeometry,
    delta: f64,
    horizon: usize,
) -> Result<()> {
    if pg.nstates != abs.nstates() || pg.nq != dfa.nstates() {
        return Err(Error::Contract(format!(
            "product geometry is {}x{}, abstraction and automaton are {}x{}",
            pg.nstates,
            pg.nq,
            abs.nstates(),
            dfa.nstates()
        )));
    }
    if !(0.0..1.0).contains(&delta) {
        return Err(Error::Contract(format!("delta {delta} outside [0, 1)")));
    }
    if horizon == 0 {
        return Err(Error::Contract("horizon must be at least 1".into()));
    }
    Ok(())
}

fn base_slice(dfa: &Dfa, nstates: usize) -> Vec<f64> {
    let mut base = vec![0.0; dfa.nstates() * nstates];
    for q in 0..dfa.nstates() {
        if dfa.is_accepting(q) {
            base[q * nstates..(q + 1) * nstates].fill(1.0);
        }
    }
    base
}

fn sup_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn synthesize(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    pg: &ProductGeometry,
    delta: f64,
    horizon: usize,
    mode: Mode,
) -> Result<Synthesis> {
    check_setup(abs, dfa, pg, delta, horizon)?;
    let nstates = abs.nstates();
    let ncells = abs.grid.ncells();
    let sink = abs.grid.sink();
    let nq = dfa.nstates();
    let sink_value = match mode {
        Mode::Robust => 0.0,
        Mode::WorstCase => 1.0,
    };
    let placeholder = abs.uprime[0] as u32;

    let mut slices = vec![base_slice(dfa, nstates)];
    let mut policies: Vec<Vec<u32>> = Vec::new();
    let mut w = vec![0.0; nstates];

    for _ in 1..=horizon {
        let prev = slices.last().expect("base slice present");
        let mut next = vec![0.0; nq * nstates];
        let mut pol = vec![placeholder; nq * nstates];
        for q in 0..nq {
            if dfa.is_accepting(q) {
                next[q * nstates..(q + 1) * nstates].fill(1.0);
                continue;
            }
            pg.weight_row(prev, q, mode, &mut w);
            for cell in 0..ncells {
                let mut best = f64::NAN;
                let mut best_u = placeholder;
                for &ui in &abs.uprime {
                    let contraction = row_contraction(abs.kernel_row(cell, ui), &w, sink);
                    let value = match mode {
                        Mode::Robust => (1.0 - delta) * contraction,
                        Mode::WorstCase => (1.0 - delta) * contraction + delta,
                    };
                    // Strict comparison keeps the first optimum, so ties
                    // resolve to the lowest input index.
                    let better = best.is_nan()
                        || match mode {
                            Mode::Robust => value > best,
                            Mode::WorstCase => value < best,
                        };
                    if better {
                        best = value;
                        best_u = ui as u32;
                    }
                }
                debug_assert!(
                    (-1e-9..=1.0 + 1e-9).contains(&best),
                    "value {best} left [0, 1] at cell {cell}, q {q}"
                );
                next[q * nstates + cell] = best.clamp(0.0, 1.0);
                pol[q * nstates + cell] = best_u;
            }
            next[q * nstates + sink] = sink_value;
        }
        let stationary = sup_diff(&next, slices.last().expect("nonempty")) <= STATIONARY_TOL;
        slices.push(next);
        policies.push(pol);
        if stationary {
            break;
        }
    }

    Ok(Synthesis {
        values: ValueTable { nstates, nq, horizon, slices },
        policy: PolicyTable { nstates, nq, horizon, slices: policies },
    })
}

/// Value of a fixed policy under the same hedged recursion; the optimal
/// policy reproduces the synthesized table exactly, any other policy is
/// dominated by it.
pub fn evaluate_policy(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    pg: &ProductGeometry,
    delta: f64,
    mode: Mode,
    policy: &PolicyTable,
    horizon: usize,
) -> Result<ValueTable> {
    check_setup(abs, dfa, pg, delta, horizon)?;
    if horizon > policy.horizon {
        return Err(Error::Contract(format!(
            "policy covers horizon {}, evaluation wants {horizon}",
            policy.horizon
        )));
    }
    let nstates = abs.nstates();
    let ncells = abs.grid.ncells();
    let sink = abs.grid.sink();
    let nq = dfa.nstates();
    let sink_value = match mode {
        Mode::Robust => 0.0,
        Mode::WorstCase => 1.0,
    };

    let mut slices = vec![base_slice(dfa, nstates)];
    let mut w = vec![0.0; nstates];
    for n in 1..=horizon {
        let prev = slices.last().expect("base slice present");
        let mut next = vec![0.0; nq * nstates];
        for q in 0..nq {
            if dfa.is_accepting(q) {
                next[q * nstates..(q + 1) * nstates].fill(1.0);
                continue;
            }
            pg.weight_row(prev, q, mode, &mut w);
            for cell in 0..ncells {
                let ui = policy.input(n, cell, q);
                let contraction = row_contraction(abs.kernel_row(cell, ui), &w, sink);
                let value = match mode {
                    Mode::Robust => (1.0 - delta) * contraction,
                    Mode::WorstCase => (1.0 - delta) * contraction + delta,
                };
                next[q * nstates + cell] = value.clamp(0.0, 1.0);
            }
            next[q * nstates + sink] = sink_value;
        }
        let stationary = sup_diff(&next, slices.last().expect("nonempty")) <= STATIONARY_TOL;
        slices.push(next);
        if stationary {
            break;
        }
    }
    Ok(ValueTable { nstates, nq, horizon, slices })
}

/// Direct dense recursion for tiny instances, written as an independent
/// oracle: no shared weight rows, no compensated summation, no stationary
/// compression, successor sets recomputed at every use. Returns every slice.
pub fn brute_force_values(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    geom: &EpsGeometry,
    delta: f64,
    horizon: usize,
    mode: Mode,
) -> Result<Vec<Vec<f64>>> {
    let nstates = abs.nstates();
    let nq = dfa.nstates();
    let work = (nstates as u128)
        * (nstates as u128)
        * (nq as u128)
        * (abs.uprime.len() as u128)
        * (horizon as u128);
    if work > 1_000_000 {
        return Err(Error::TooLarge(format!(
            "brute-force recursion needs {work} kernel reads; the oracle is for toy instances"
        )));
    }
    let sink = abs.grid.sink();
    let sink_value = match mode {
        Mode::Robust => 0.0,
        Mode::WorstCase => 1.0,
    };

    let mut slices = vec![base_slice(dfa, nstates)];
    for _ in 1..=horizon {
        let prev = slices.last().expect("base slice present").clone();
        let mut next = vec![0.0; nq * nstates];
        for q in 0..nq {
            if dfa.is_accepting(q) {
                for xhat in 0..nstates {
                    next[q * nstates + xhat] = 1.0;
                }
                continue;
            }
            for cell in 0..abs.grid.ncells() {
                let mut best: Option<f64> = None;
                for &ui in &abs.uprime {
                    let row = abs.kernel_row(cell, ui);
                    let mut contraction = 0.0;
                    for succ_state in 0..nstates {
                        let mass = if succ_state == sink {
                            row.sink
                        } else {
                            row.mass_at(succ_state)
                        };
                        if mass == 0.0 {
                            continue;
                        }
                        let mut hedged: Option<f64> = None;
                        for q2 in geom.q_eps_set(dfa, succ_state, q) {
                            let v = prev[q2 * nstates + succ_state];
                            hedged = Some(match (hedged, mode) {
                                (None, _) => v,
                                (Some(h), Mode::Robust) => h.min(v),
                                (Some(h), Mode::WorstCase) => h.max(v),
                            });
                        }
                        contraction += mass * hedged.expect("nonempty letter set");
                    }
                    let value = match mode {
                        Mode::Robust => (1.0 - delta) * contraction,
                        Mode::WorstCase => (1.0 - delta) * contraction + delta,
                    };
                    best = Some(match (best, mode) {
                        (None, _) => value,
                        (Some(b), Mode::Robust) => b.max(value),
                        (Some(b), Mode::WorstCase) => b.min(value),
                    });
                }
                next[q * nstates + cell] = best.expect("nonempty input set");
            }
            next[q * nstates + sink] = sink_value;
        }
        slices.push(next);
    }
    Ok(slices)
}

/// Largest absolute residual of the complement-form recursion identity over
/// all grid cells, non-accepting q, and time-to-go 1..=max_n:
///
/// robust:     1 − V(n) = (1−δ)·Σ_{x̂′ ∈ X̂′_ε(q)} (1 − V(n−1) hedged)·T̂ + δ
/// worst-case: 1 − V(n) = (1−δ)·Σ_{x̂′ ∈ X̂′₋ε(q)} (1 − V(n−1) hedged)·T̂
///
/// evaluated at the synthesized policy's input. The sink is excluded as a
/// source state because its value is pinned, not computed.
pub fn identity_residual(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    geom: &EpsGeometry,
    pg: &ProductGeometry,
    delta: f64,
    mode: Mode,
    syn: &Synthesis,
    max_n: usize,
) -> f64 {
    let nstates = abs.nstates();
    let sink = abs.grid.sink();
    let mut w = vec![0.0; nstates];
    let mut worst: f64 = 0.0;
    for q in 0..dfa.nstates() {
        if dfa.is_accepting(q) {
            continue;
        }
        let mask = match mode {
            Mode::Robust => geom.x_eps_set(dfa, q),
            Mode::WorstCase => geom.x_neg_eps_set(dfa, q),
        };
        for n in 1..=max_n.min(syn.values.horizon()) {
            pg.weight_row(syn.values.slice(n - 1), q, mode, &mut w);
            for cell in 0..abs.grid.ncells() {
                let lhs = 1.0 - syn.values.value(n, cell, q);
                let ui = syn.policy.input(n, cell, q);
                let row = abs.kernel_row(cell, ui);
                let mut sum = 0.0;
                for (succ_state, mass) in row.cells() {
                    if mask[succ_state] {
                        sum += (1.0 - w[succ_state]) * mass;
                    }
                }
                if mask[sink] {
                    sum += (1.0 - w[sink]) * row.sink;
                }
                let rhs = match mode {
                    Mode::Robust => (1.0 - delta) * sum + delta,
                    Mode::WorstCase => (1.0 - delta) * sum,
                };
                worst = worst.max((lhs - rhs).abs());
            }
        }
    }
    worst
}

/// Offline bound per grid cell, read at the cell's own initial product state
/// τ(q₀, L(ĥ(x̂))): the satisfaction bound in robust mode, the violation
/// bound in worst-case mode. One entry per cell, the sink excluded.
pub fn guarantee_grid(
    abs: &FiniteAbstraction,
    dfa: &Dfa,
    labels: &LabelMap,
    values: &ValueTable,
) -> Vec<f64> {
    (0..abs.grid.ncells())
        .map(|cell| {
            let y = abs.output_of(cell).expect("grid state has an output");
            let q = dfa.initial(labels.label(y.as_slice()));
            values.value(values.horizon(), cell, q)
        })
        .collect()
}
