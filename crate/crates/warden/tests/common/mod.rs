//! Shared fixtures for the integration suites: randomized toy instances
//! small enough for the dense value-recursion oracle.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use warden::abstraction::{FiniteAbstraction, ReducedModel};
use warden::automata::{BoxRegion, Dfa, Interval, LabelMap};
use warden::grid::{GridPartition, InputGrid};
use warden::relation::EpsGeometry;

pub struct ToyInstance {
    pub abs: FiniteAbstraction,
    pub dfa: Dfa,
    pub geom: EpsGeometry,
    pub delta: f64,
    pub horizon: usize,
}

/// Deterministic 1-D toy: at most four grid cells plus the sink, at most
/// three inputs, at most four automaton states, horizon at most four. Small
/// enough that the dense oracle stays under its work guard.
pub fn toy_instance(seed: u64) -> ToyInstance {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    let a = rng.gen_range(-0.9..0.9);
    let b = rng.gen_range(0.2..1.0);
    let r = rng.gen_range(0.3..1.5);
    let reduced = ReducedModel {
        a: DMatrix::from_element(1, 1, a),
        b: DMatrix::from_element(1, 1, b),
        c: DMatrix::from_element(1, 1, 1.0),
        e: DVector::zeros(1),
        f: RowDVector::zeros(1),
        r: DMatrix::from_element(1, 1, r),
    };

    let span = rng.gen_range(1.0..3.0);
    let cells = rng.gen_range(2..=4usize);
    let grid = GridPartition::new(vec![-span], vec![span], vec![cells], "toy").unwrap();
    let ninputs = rng.gen_range(1..=3usize);
    let inputs = InputGrid::new(vec![-1.0], vec![1.0], vec![ninputs], "toy").unwrap();
    let uprime: Vec<usize> = (0..ninputs).collect();
    let abs = FiniteAbstraction::build(reduced, DMatrix::identity(1, 1), grid, inputs, uprime, 1 << 20)
        .unwrap();

    // Two interior letters split at a random threshold; everything outside
    // the grid image carries the default letter.
    let split = rng.gen_range(-0.5 * span..0.5 * span);
    let labels = LabelMap {
        letters: vec!["lo".into(), "hi".into(), "out".into()],
        regions: vec![
            (0, BoxRegion::new(vec![Interval::closed(-span, split)])),
            (1, BoxRegion::new(vec![Interval::closed(split, span)])),
        ],
        default_letter: 2,
    };

    let nq = rng.gen_range(2..=4usize);
    let accepting_id = rng.gen_range(1..nq);
    let accepting: Vec<bool> = (0..nq).map(|q| q == accepting_id).collect();
    let mut transitions = Vec::new();
    for q in 0..nq {
        if accepting[q] {
            continue;
        }
        for letter in 0..3 {
            transitions.push((q, letter, rng.gen_range(0..nq)));
        }
    }
    let dfa = Dfa::new(
        (0..nq).map(|q| format!("q{q}")).collect(),
        0,
        accepting,
        3,
        &transitions,
        "toy",
    )
    .unwrap();

    let eps = if rng.gen_bool(0.5) { 0.0 } else { rng.gen_range(0.1..0.4) * span };
    let delta = *[0.0, 0.07, 0.25].choose(&mut rng).unwrap();
    let horizon = rng.gen_range(1..=4usize);
    let geom = EpsGeometry::new(&abs, &labels, eps).unwrap();
    ToyInstance { abs, dfa, geom, delta, horizon }
}
