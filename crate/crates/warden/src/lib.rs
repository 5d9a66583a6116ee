//! Safety advisors and runtime supervisors for stochastic systems.
//!
//! The toolkit takes a discrete-time stochastic system
//!
//! ```text
//! x(k+1) = A x(k) + B u(k) + E exp(F x(k)) + R ς(k),      y(k) = C x(k)
//! ```
//!
//! a safety specification given as a DFA over labelled output regions, and a
//! finite abstraction related to the plant through an (ε,δ)-approximate
//! probabilistic relation. Offline it synthesizes an optimal fallback policy
//! over the abstraction by finite-horizon dynamic programming; online it
//! sandboxes an arbitrary unverified controller: a history-based supervisor
//! accepts the external input only while the estimated end-to-end probability
//! of violating the specification stays below a tolerance η, and falls back to
//! the synthesized advisor otherwise.
//!
//! Everything is driven by a single scenario file (JSON) holding the model,
//! the specification, the abstraction grids, the relation parameters and the
//! experiment configuration; see [`scenario`] for the format and
//! [`harness`] for the Monte Carlo experiment driver.

pub mod abstraction;
pub mod automata;
pub mod error;
pub mod grid;
pub mod harness;
pub mod model;
pub mod relation;
pub mod runtime;
pub mod scenario;
pub mod special;
pub mod synthesis;

pub use error::{Error, Result};
pub use scenario::Scenario;
