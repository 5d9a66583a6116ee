//! Concrete plant dynamics and reproducible noise streams.
//!
//! The plant class is affine dynamics plus one scalar exponential channel:
//!
//! ```text
//! x(k+1) = A x(k) + B u(k) + E exp(F x(k)) + R w(k),    y(k) = C x(k)
//! ```
//!
//! with `w` a vector of i.i.d. standard Gaussians. Both bundled case studies
//! are instances (the linear one sets `E = 0`). The class is fixed so that
//! the relation margins stay analytic; arbitrary nonlinearities are out of
//! scope.
//!
//! Noise is generated from counter-based streams: a draw is addressed by
//! (seed, stream, step), never by call order, so any trajectory is a pure
//! function of the scenario, the seed, and the run index regardless of how
//! callers interleave sampling.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::distributions::Open01;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::special::normal_quantile;

/// Plant model, immutable after validation.
#[derive(Debug, Clone)]
pub struct SystemModel {
    /// State matrix, s x s.
    pub a: DMatrix<f64>,
    /// Input matrix, s x m.
    pub b: DMatrix<f64>,
    /// Output matrix, q x s.
    pub c: DMatrix<f64>,
    /// Gain of the exponential channel, length s (may be zero).
    pub e: DVector<f64>,
    /// Row vector inside the exponential, length s.
    pub f: RowDVector<f64>,
    /// Noise matrix, s x p with p >= 1.
    pub r: DMatrix<f64>,
    /// Componentwise input box, lower corner.
    pub input_lo: DVector<f64>,
    /// Componentwise input box, upper corner.
    pub input_hi: DVector<f64>,
    /// Initial state.
    pub x0: DVector<f64>,
}

impl SystemModel {
    /// Checks mutual dimension consistency and bound sanity. `location` is
    /// the scenario-block prefix used in error messages, e.g. "model".
    pub fn validate(&self, location: &str) -> Result<()> {
        let s = self.a.nrows();
        if self.a.ncols() != s || s == 0 {
            return Err(Error::dimension(
                format!("{location}.A"),
                format!("state matrix must be square and nonempty, got {}x{}", s, self.a.ncols()),
            ));
        }
        if self.b.nrows() != s {
            return Err(Error::dimension(
                format!("{location}.B"),
                format!("expected {s} rows to match A, got {}", self.b.nrows()),
            ));
        }
        if self.c.ncols() != s || self.c.nrows() == 0 {
            return Err(Error::dimension(
                format!("{location}.C"),
                format!("expected {s} columns to match A, got {}", self.c.ncols()),
            ));
        }
        if self.e.len() != s {
            return Err(Error::dimension(
                format!("{location}.E"),
                format!("expected length {s}, got {}", self.e.len()),
            ));
        }
        if self.f.len() != s {
            return Err(Error::dimension(
                format!("{location}.F"),
                format!("expected length {s}, got {}", self.f.len()),
            ));
        }
        if self.r.nrows() != s || self.r.ncols() == 0 {
            return Err(Error::dimension(
                format!("{location}.R"),
                format!("expected {s} rows and at least one noise column, got {}x{}", self.r.nrows(), self.r.ncols()),
            ));
        }
        let m = self.b.ncols();
        if self.input_lo.len() != m || self.input_hi.len() != m {
            return Err(Error::dimension(
                format!("{location}.input_bounds"),
                format!("expected length {m} to match B columns"),
            ));
        }
        for i in 0..m {
            if !(self.input_lo[i] < self.input_hi[i]) {
                return Err(Error::validation(
                    format!("{location}.input_bounds"),
                    format!("empty input box in coordinate {i}: [{}, {}]", self.input_lo[i], self.input_hi[i]),
                ));
            }
        }
        if self.x0.len() != s {
            return Err(Error::dimension(
                format!("{location}.x0"),
                format!("expected length {s}, got {}", self.x0.len()),
            ));
        }
        Ok(())
    }

    /// State dimension s.
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension m.
    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Noise dimension p.
    pub fn noise_dim(&self) -> usize {
        self.r.ncols()
    }

    /// True iff u lies in the input box (closed).
    pub fn input_in_bounds(&self, u: &DVector<f64>) -> bool {
        u.len() == self.input_lo.len()
            && (0..u.len()).all(|i| self.input_lo[i] <= u[i] && u[i] <= self.input_hi[i])
    }

    /// Clamps u into the input box componentwise.
    pub fn clamp_input(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.input_lo[i], self.input_hi[i]))
    }

    /// Noise-free drift A x + B u + E exp(F x).
    pub fn step_mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let mut next = &self.a * x + &self.b * u;
        let arg = (&self.f * x)[0];
        next.axpy(arg.exp(), &self.e, 1.0);
        next
    }

    /// One exact transition. Errors on dimension mismatch or u outside the
    /// input box (an out-of-box u means an upstream refinement bug, not a
    /// recoverable condition).
    pub fn step(&self, x: &DVector<f64>, u: &DVector<f64>, noise: &NoiseSample) -> Result<DVector<f64>> {
        if x.len() != self.state_dim() || u.len() != self.input_dim() || noise.values.len() != self.noise_dim() {
            return Err(Error::dimension(
                "model.step",
                format!(
                    "got x:{} u:{} w:{}, expected x:{} u:{} w:{}",
                    x.len(),
                    u.len(),
                    noise.values.len(),
                    self.state_dim(),
                    self.input_dim(),
                    self.noise_dim()
                ),
            ));
        }
        if !self.input_in_bounds(u) {
            return Err(Error::Contract(format!(
                "input {u:?} outside the input box at step {}",
                noise.step
            )));
        }
        let mut next = self.step_mean(x, u);
        next.gemv(1.0, &self.r, &noise.values, 1.0);
        Ok(next)
    }

    /// Output map y = C x.
    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }
}

/// One noise vector plus the address it was drawn from.
#[derive(Debug, Clone)]
pub struct NoiseSample {
    /// i.i.d. standard Gaussian entries, length p.
    pub values: DVector<f64>,
    /// Stream id the sample came from.
    pub stream: u64,
    /// Step index within the stream.
    pub step: u64,
}

impl NoiseSample {
    /// A zero sample, for noise-free stepping in tests and tuning.
    pub fn zero(p: usize) -> Self {
        NoiseSample { values: DVector::zeros(p), stream: 0, step: 0 }
    }
}

/// Counter-based Gaussian stream.
///
/// Streams are derived from one scenario seed: run r uses stream 2r for
/// plant noise and stream 2r+1 for controller randomness, so runs never
/// share draws. Within a stream, step k consumes exactly 2p generator words
/// starting at word 2kp (each open-interval f64 uses two 32-bit words),
/// which makes draws addressable rather than order-dependent.
#[derive(Debug, Clone)]
pub struct NoiseStream {
    rng: ChaCha12Rng,
    stream: u64,
    dim: usize,
}

impl NoiseStream {
    /// Plant-noise stream for the given run.
    pub fn plant(seed: u64, run: u64, dim: usize) -> Self {
        Self::with_stream(seed, 2 * run, dim)
    }

    /// Controller-randomness stream for the given run.
    pub fn controller(seed: u64, run: u64, dim: usize) -> Self {
        Self::with_stream(seed, 2 * run + 1, dim)
    }

    fn with_stream(seed: u64, stream: u64, dim: usize) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        NoiseStream { rng, stream, dim }
    }

    /// Standard Gaussian vector for step k. Same (seed, stream, k) always
    /// yields the same sample.
    pub fn sample(&mut self, k: u64) -> NoiseSample {
        self.rng.set_word_pos(2 * k as u128 * self.dim as u128);
        let values = DVector::from_fn(self.dim, |_, _| {
            let u: f64 = self.rng.sample(Open01);
            normal_quantile(u)
        });
        NoiseSample { values, stream: self.stream, step: k }
    }

    /// Uniform draw in [lo, hi] for step k (used by the random controller;
    /// one f64 per step, addressed like `sample`).
    pub fn uniform(&mut self, k: u64, lo: f64, hi: f64) -> f64 {
        self.rng.set_word_pos(2 * k as u128 * self.dim.max(1) as u128);
        let u: f64 = self.rng.sample(Open01);
        lo + (hi - lo) * u
    }
}
