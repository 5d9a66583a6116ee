//! Finite-word safety specifications: labelled output regions plus a DFA.
//!
//! Outputs are mapped to letters by a `LabelMap`: an ordered list of
//! axis-aligned boxes with explicit endpoint inclusivity, pairwise disjoint
//! as sets, plus one default letter for everything not covered. The DFA runs
//! over the letter sequence of an output trace; accepting states are made
//! absorbing at construction time, so acceptance is prefix-monotone and a
//! trace is classified by the state reached after its last output.
//!
//! The module also owns the exact set geometry the interface layer needs:
//! distance from a point to a letter's region (closure distance, so an
//! excluded edge never pushes a letter out of reach), including the default
//! letter's region, which is the complement of the union of the listed
//! boxes. Complement distances are computed by exposed-face enumeration:
//! exact for box tilings, never overestimated otherwise.

use crate::error::{Error, Result};

/// One-dimensional interval with explicit endpoint inclusivity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    /// Closed interval [lo, hi].
    pub fn closed(lo: f64, hi: f64) -> Self {
        Interval { lo, hi, lo_closed: true, hi_closed: true }
    }

    /// True iff the interval contains no point.
    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    /// Set membership, inclusivity-aware.
    pub fn contains(&self, v: f64) -> bool {
        let above = if self.lo_closed { v >= self.lo } else { v > self.lo };
        let below = if self.hi_closed { v <= self.hi } else { v < self.hi };
        above && below
    }

    /// Distance from v to the closure of the interval.
    pub fn closure_distance(&self, v: f64) -> f64 {
        (self.lo - v).max(v - self.hi).max(0.0)
    }

    /// Set intersection test, inclusivity-aware.
    pub fn intersects(&self, other: &Interval) -> bool {
        let (lo, lo_closed) = if self.lo > other.lo {
            (self.lo, self.lo_closed)
        } else if other.lo > self.lo {
            (other.lo, other.lo_closed)
        } else {
            (self.lo, self.lo_closed && other.lo_closed)
        };
        let (hi, hi_closed) = if self.hi < other.hi {
            (self.hi, self.hi_closed)
        } else if other.hi < self.hi {
            (other.hi, other.hi_closed)
        } else {
            (self.hi, self.hi_closed && other.hi_closed)
        };
        lo < hi || (lo == hi && lo_closed && hi_closed)
    }
}

/// Axis-aligned box in output space.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxRegion {
    pub dims: Vec<Interval>,
}

impl BoxRegion {
    pub fn new(dims: Vec<Interval>) -> Self {
        BoxRegion { dims }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        self.dims.len() == y.len() && self.dims.iter().zip(y).all(|(i, &v)| i.contains(v))
    }

    /// Euclidean distance from y to the closure of the box.
    pub fn closure_distance(&self, y: &[f64]) -> f64 {
        self.dims
            .iter()
            .zip(y)
            .map(|(i, &v)| {
                let d = i.closure_distance(v);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Set intersection test, inclusivity-aware.
    pub fn intersects(&self, other: &BoxRegion) -> bool {
        self.dims.len() == other.dims.len()
            && self.dims.iter().zip(&other.dims).all(|(a, b)| a.intersects(b))
    }

    /// True iff the box (as a set) lies inside the closure of `outer`.
    pub fn inside(&self, outer: &BoxRegion) -> bool {
        self.dims
            .iter()
            .zip(&outer.dims)
            .all(|(a, b)| a.lo >= b.lo && a.hi <= b.hi && !a.is_empty())
    }

    /// Distance from the box to the complement of `outer`, i.e. how deep the
    /// box sits inside `outer`. Zero when the box touches or leaves `outer`.
    pub fn depth_within(&self, outer: &BoxRegion) -> f64 {
        if !self.inside(outer) {
            return 0.0;
        }
        self.dims
            .iter()
            .zip(&outer.dims)
            .map(|(a, b)| (a.lo - b.lo).min(b.hi - a.hi))
            .fold(f64::INFINITY, f64::min)
            .max(0.0)
    }
}

/// Closed box used internally by the exposed-face enumeration.
#[derive(Debug, Clone)]
struct ClosedBox {
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl ClosedBox {
    fn distance(&self, y: &[f64]) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .zip(y)
            .map(|((&lo, &hi), &v)| {
                let d = (lo - v).max(v - hi).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }
}

/// Removes the open box (given by closure corners, `skip` ignored) from a
/// closed piece. Remainders keep their boundary points.
fn subtract_open(piece: &ClosedBox, open_lo: &[f64], open_hi: &[f64], skip: usize) -> Vec<ClosedBox> {
    let d = piece.lo.len();
    for i in 0..d {
        if i == skip {
            continue;
        }
        // Open (a,b) misses closed [c,d] unless a < d and b > c.
        if !(open_lo[i] < piece.hi[i] && open_hi[i] > piece.lo[i]) {
            return vec![piece.clone()];
        }
    }
    let mut out = Vec::new();
    let mut core = piece.clone();
    for i in 0..d {
        if i == skip {
            continue;
        }
        if open_lo[i] > core.lo[i] {
            let mut left = core.clone();
            left.hi[i] = open_lo[i];
            out.push(left);
            core.lo[i] = open_lo[i];
        }
        if open_hi[i] < core.hi[i] {
            let mut right = core.clone();
            right.lo[i] = open_hi[i];
            out.push(right);
            core.hi[i] = open_hi[i];
        }
    }
    out
}

/// Distance from y to the complement of the union of `boxes`. Zero when y is
/// outside the union (inclusivity-aware); otherwise the minimum over exposed
/// face pieces, where a face of one box is covered wherever another box
/// continues past it.
fn distance_to_complement(boxes: &[&BoxRegion], y: &[f64]) -> f64 {
    if !boxes.iter().any(|b| b.contains(y)) {
        return 0.0;
    }
    let d = y.len();
    let mut best = f64::INFINITY;
    for (bi, b) in boxes.iter().enumerate() {
        for axis in 0..d {
            for hi_side in [false, true] {
                let v = if hi_side { b.dims[axis].hi } else { b.dims[axis].lo };
                let face = ClosedBox {
                    lo: b.dims.iter().enumerate().map(|(i, iv)| if i == axis { v } else { iv.lo }).collect(),
                    hi: b.dims.iter().enumerate().map(|(i, iv)| if i == axis { v } else { iv.hi }).collect(),
                };
                let mut pieces = vec![face];
                for (ci, c) in boxes.iter().enumerate() {
                    if ci == bi || pieces.is_empty() {
                        continue;
                    }
                    // c covers the outward side of the face iff it contains
                    // [v, v + dv) (hi face) resp. (v - dv, v] (lo face).
                    let covers = if hi_side {
                        c.dims[axis].lo <= v && v < c.dims[axis].hi
                    } else {
                        c.dims[axis].lo < v && v <= c.dims[axis].hi
                    };
                    if !covers {
                        continue;
                    }
                    let open_lo: Vec<f64> = c.dims.iter().map(|iv| iv.lo).collect();
                    let open_hi: Vec<f64> = c.dims.iter().map(|iv| iv.hi).collect();
                    pieces = pieces
                        .iter()
                        .flat_map(|p| subtract_open(p, &open_lo, &open_hi, axis))
                        .collect();
                }
                for p in &pieces {
                    best = best.min(p.distance(y));
                }
            }
        }
    }
    best
}

/// Ordered letter regions plus a default letter.
#[derive(Debug, Clone)]
pub struct LabelMap {
    /// Alphabet; index is the letter id used by the DFA.
    pub letters: Vec<String>,
    /// Listed regions as (letter id, box); a letter may own several boxes.
    pub regions: Vec<(usize, BoxRegion)>,
    /// Letter emitted outside every listed region.
    pub default_letter: usize,
}

impl LabelMap {
    /// Validates letter names, region ids, box dimensions, emptiness and
    /// pairwise set-disjointness. `location` prefixes error messages.
    pub fn validate(&self, location: &str) -> Result<()> {
        if self.letters.is_empty() {
            return Err(Error::validation(format!("{location}.letters"), "alphabet is empty"));
        }
        for (i, name) in self.letters.iter().enumerate() {
            if name.is_empty() {
                return Err(Error::validation(format!("{location}.letters[{i}]"), "empty letter name"));
            }
            if self.letters[..i].contains(name) {
                return Err(Error::validation(
                    format!("{location}.letters[{i}]"),
                    format!("duplicate letter name {name:?}"),
                ));
            }
        }
        if self.default_letter >= self.letters.len() {
            return Err(Error::validation(
                format!("{location}.default_letter"),
                format!("letter id {} out of range", self.default_letter),
            ));
        }
        let dim = match self.regions.first() {
            Some((_, b)) => b.dim(),
            None => {
                return Err(Error::validation(format!("{location}.regions"), "no listed regions"));
            }
        };
        for (i, (letter, b)) in self.regions.iter().enumerate() {
            if *letter >= self.letters.len() {
                return Err(Error::validation(
                    format!("{location}.regions[{i}]"),
                    format!("letter id {letter} out of range"),
                ));
            }
            if *letter == self.default_letter {
                return Err(Error::validation(
                    format!("{location}.regions[{i}]"),
                    "default letter must not own a listed region",
                ));
            }
            if b.dim() != dim {
                return Err(Error::validation(
                    format!("{location}.regions[{i}]"),
                    format!("box dimension {} differs from {}", b.dim(), dim),
                ));
            }
            if b.dims.iter().any(Interval::is_empty) {
                return Err(Error::validation(format!("{location}.regions[{i}]"), "empty box"));
            }
            for (j, (_, other)) in self.regions.iter().enumerate().take(i) {
                if b.intersects(other) {
                    return Err(Error::validation(
                        format!("{location}.regions[{i}]"),
                        format!("overlaps region {j}; listed regions must be disjoint"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Output dimension of the letter regions.
    pub fn dim(&self) -> usize {
        self.regions.first().map_or(0, |(_, b)| b.dim())
    }

    /// Letter of an output point.
    pub fn label(&self, y: &[f64]) -> usize {
        for (letter, b) in &self.regions {
            if b.contains(y) {
                return *letter;
            }
        }
        self.default_letter
    }

    /// Distance from y to the closure of a letter's region. For the default
    /// letter this is the distance to the complement of all listed boxes.
    pub fn letter_distance(&self, letter: usize, y: &[f64]) -> f64 {
        if letter == self.default_letter {
            let boxes: Vec<&BoxRegion> = self.regions.iter().map(|(_, b)| b).collect();
            distance_to_complement(&boxes, y)
        } else {
            self.regions
                .iter()
                .filter(|(l, _)| *l == letter)
                .map(|(_, b)| b.closure_distance(y))
                .fold(f64::INFINITY, f64::min)
        }
    }

    /// Letters whose region comes within `eps` of y, in letter-id order.
    /// Closure distances make this a superset of the letters realized in the
    /// closed eps-ball, which is the conservative direction for both the
    /// satisfaction and the violation problem.
    pub fn letters_within(&self, y: &[f64], eps: f64) -> Vec<usize> {
        (0..self.letters.len())
            .filter(|&l| self.letter_distance(l, y) <= eps)
            .collect()
    }

    /// Letters realizable within `eps` of some point outside `outer` (the
    /// image of the quantized region). These are the letters the off-grid
    /// pseudo-state can produce. Requires every listed region to sit inside
    /// `outer`, which also puts the complement of `outer` in the default
    /// letter, so the default is always included.
    pub fn letters_near_complement(&self, outer: &BoxRegion, eps: f64) -> Result<Vec<usize>> {
        for (i, (_, b)) in self.regions.iter().enumerate() {
            if !b.inside(outer) {
                return Err(Error::validation(
                    format!("labels.regions[{i}]"),
                    "listed region leaves the quantized output range",
                ));
            }
        }
        Ok((0..self.letters.len())
            .filter(|&l| {
                l == self.default_letter
                    || self
                        .regions
                        .iter()
                        .filter(|(id, _)| *id == l)
                        .any(|(_, b)| b.depth_within(outer) <= eps)
            })
            .collect())
    }
}

/// Deterministic finite automaton over letter ids. Accepting states are
/// absorbing by construction.
#[derive(Debug, Clone)]
pub struct Dfa {
    /// State names; index is the state id.
    pub states: Vec<String>,
    /// Initial state before any output is consumed.
    pub q0: usize,
    /// Accepting-state mask.
    pub accepting: Vec<bool>,
    /// Dense table, `table[q * nletters + letter]`.
    table: Vec<usize>,
    nletters: usize,
}

impl Dfa {
    /// Builds a DFA from explicit transitions and rewrites accepting rows to
    /// self-loops. Errors on partial transition tables, bad ids, an empty or
    /// full accepting set. `location` prefixes error messages.
    pub fn new(
        states: Vec<String>,
        q0: usize,
        accepting: Vec<bool>,
        nletters: usize,
        transitions: &[(usize, usize, usize)],
        location: &str,
    ) -> Result<Dfa> {
        let n = states.len();
        if n == 0 {
            return Err(Error::validation(format!("{location}.states"), "no states"));
        }
        for (i, name) in states.iter().enumerate() {
            if name.is_empty() || states[..i].contains(name) {
                return Err(Error::validation(
                    format!("{location}.states[{i}]"),
                    format!("empty or duplicate state name {name:?}"),
                ));
            }
        }
        if q0 >= n {
            return Err(Error::validation(format!("{location}.q0"), format!("state id {q0} out of range")));
        }
        if accepting.len() != n {
            return Err(Error::validation(
                format!("{location}.accepting"),
                format!("mask length {} does not match {n} states", accepting.len()),
            ));
        }
        if !accepting.iter().any(|&a| a) {
            return Err(Error::validation(format!("{location}.accepting"), "no accepting state"));
        }
        if accepting.iter().all(|&a| a) {
            return Err(Error::validation(format!("{location}.accepting"), "every state accepts"));
        }
        let mut table = vec![usize::MAX; n * nletters];
        for &(q, letter, q2) in transitions {
            if q >= n || q2 >= n {
                return Err(Error::validation(
                    format!("{location}.transitions"),
                    format!("state id out of range in ({q}, {letter}, {q2})"),
                ));
            }
            if letter >= nletters {
                return Err(Error::validation(
                    format!("{location}.transitions"),
                    format!("letter id {letter} out of range in ({q}, {letter}, {q2})"),
                ));
            }
            if table[q * nletters + letter] != usize::MAX {
                return Err(Error::validation(
                    format!("{location}.transitions"),
                    format!("duplicate transition for state {q}, letter {letter}"),
                ));
            }
            table[q * nletters + letter] = q2;
        }
        for q in 0..n {
            for letter in 0..nletters {
                let cell = &mut table[q * nletters + letter];
                if accepting[q] {
                    // Safety verdicts are prefix-monotone; accepting rows
                    // become self-loops no matter what was declared.
                    *cell = q;
                } else if *cell == usize::MAX {
                    return Err(Error::validation(
                        format!("{location}.transitions"),
                        format!("missing transition for state {q}, letter {letter}"),
                    ));
                }
            }
        }
        Ok(Dfa { states, q0, accepting, table, nletters })
    }

    pub fn nstates(&self) -> usize {
        self.states.len()
    }

    pub fn nletters(&self) -> usize {
        self.nletters
    }

    pub fn is_accepting(&self, q: usize) -> bool {
        self.accepting[q]
    }

    /// One transition.
    pub fn step(&self, q: usize, letter: usize) -> usize {
        self.table[q * self.nletters + letter]
    }

    /// Automaton state after consuming the very first output.
    pub fn initial(&self, first_letter: usize) -> usize {
        self.step(self.q0, first_letter)
    }

    /// Runs the whole output trace through `labels` and reports acceptance
    /// of the state reached after the last output.
    pub fn accepts<'a>(&self, labels: &LabelMap, outputs: impl IntoIterator<Item = &'a [f64]>) -> bool {
        let mut q = self.q0;
        for y in outputs {
            q = self.step(q, labels.label(y));
        }
        self.accepting[q]
    }
}
