//! The (ε,δ)-approximate probabilistic relation between a plant and its
//! finite abstraction: membership tests, controller refinement through the
//! interface function, the noise-plus-quantization margin γ, runtime input
//! feasibility, and the ε-ball geometry over letters and abstract states.

use nalgebra::{DMatrix, DVector};

use crate::abstraction::FiniteAbstraction;
use crate::automata::{BoxRegion, Dfa, Interval, LabelMap};
use crate::error::{Error, Result};
use crate::model::SystemModel;
use crate::special::chi2_quantile_1df;

/// Interface function ν mapping (x, x̂, û) to a concrete input.
#[derive(Debug, Clone, PartialEq)]
pub enum InterfaceForm {
    /// ν = K(x − Px̂) + Dx̂ + R̃û, for reduced-order abstractions.
    Linear { k: DMatrix<f64>, d: DMatrix<f64>, r_tilde: DMatrix<f64> },
    /// ν = (K + bL)(x − x̂) + û + G·exp(Fx̂) with b the divided difference of
    /// exp along F, for full-order abstractions of models with the scalar
    /// exponential nonlinearity.
    Slope { k: DMatrix<f64>, l: DMatrix<f64>, g: DVector<f64> },
}

/// An (ε,δ)-approximate probabilistic relation
/// 𝒮R = {(x, x̂) : (x − Px̂)ᵀ M (x − Px̂) ≤ ε²}.
///
/// The relation parameters are scenario inputs; this type validates and
/// applies them, it does not derive them.
#[derive(Debug, Clone)]
pub struct ProbRelation {
    /// Weight matrix of the relation ellipsoid. Symmetric positive
    /// semidefinite; reduced-order relations are typically rank-deficient
    /// because unobserved directions carry no weight.
    pub m: DMatrix<f64>,
    /// Reduction matrix lifting abstract states into the plant state space.
    pub p: DMatrix<f64>,
    pub eps: f64,
    pub delta: f64,
    pub interface: InterfaceForm,
}

impl ProbRelation {
    pub fn new(
        m: DMatrix<f64>,
        p: DMatrix<f64>,
        eps: f64,
        delta: f64,
        interface: InterfaceForm,
    ) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::dimension("relation.M", "weight matrix must be square"));
        }
        if p.nrows() != m.nrows() {
            return Err(Error::dimension(
                "relation.P",
                "reduction matrix rows must match the weight matrix",
            ));
        }
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::validation(
                "relation.M",
                format!("weight matrix asymmetric by {asym:.3e}"),
            ));
        }
        let min_eig = m
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < -1e-12 {
            return Err(Error::validation(
                "relation.M",
                format!("weight matrix has negative eigenvalue {min_eig:.3e}"),
            ));
        }
        if !(eps > 0.0) {
            return Err(Error::validation("relation.epsilon", "must be positive"));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::validation("relation.delta", "must lie in [0, 1)"));
        }
        Ok(ProbRelation { m, p, eps, delta, interface })
    }

    /// ‖v‖_M, clamped against tiny negative quadratic forms from rounding.
    pub fn m_norm(&self, v: &DVector<f64>) -> f64 {
        (v.dot(&(&self.m * v))).max(0.0).sqrt()
    }

    /// Quadratic form (x − Px̂)ᵀ M (x − Px̂); membership compares it to ε².
    pub fn membership_value(&self, x: &DVector<f64>, xhat: &DVector<f64>) -> f64 {
        let v = x - &self.p * xhat;
        v.dot(&(&self.m * &v)).max(0.0)
    }

    pub fn in_relation(&self, x: &DVector<f64>, xhat: &DVector<f64>) -> bool {
        self.membership_value(x, xhat) <= self.eps * self.eps
    }

    /// Radius of the noise ball covering a 1 − δ slice of each standard
    /// normal coordinate; infinite when δ = 0.
    pub fn noise_ball_radius(&self) -> f64 {
        if self.delta == 0.0 {
            f64::INFINITY
        } else {
            chi2_quantile_1df(1.0 - self.delta).sqrt()
        }
    }

    /// Applies the interface function. `model` supplies the input bounds and,
    /// for the slope form, the exponent row F.
    pub fn refine_input(
        &self,
        model: &SystemModel,
        x: &DVector<f64>,
        xhat: &DVector<f64>,
        uhat: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let u = match &self.interface {
            InterfaceForm::Linear { k, d, r_tilde } => {
                k * (x - &self.p * xhat) + d * xhat + r_tilde * uhat
            }
            InterfaceForm::Slope { k, l, g } => {
                let fx = (&model.f * x)[0];
                let fxhat = (&model.f * xhat)[0];
                // Divided difference of exp along F; the limit at coincident
                // arguments keeps the interface continuous.
                let b = if (fx - fxhat).abs() < 1e-12 {
                    fxhat.exp()
                } else {
                    (fx.exp() - fxhat.exp()) / (fx - fxhat)
                };
                (k + l.scale(b)) * (x - xhat) + uhat + g.scale(fxhat.exp())
            }
        };
        if !model.input_in_bounds(&u) {
            return Err(Error::Contract(format!(
                "interface produced input {u:.4} outside the model input bounds; \
                 the restricted abstract input set is too large for this relation"
            )));
        }
        Ok(u)
    }
}

/// Margin γ consumed by noise mismatch and state quantization in the
/// feasibility test ‖φ − PB̂û‖_M ≤ ε − γ.
///
/// The maximand ‖(R − PR̂)ς + Pβ‖_M is convex, so the maximum over the noise
/// box and the quantization box sits at a vertex; both boxes are enumerated
/// exactly. Taking per-coordinate noise extremes covers (and for scalar noise
/// equals) the Euclidean noise ball.
pub fn compute_gamma(
    rel: &ProbRelation,
    model: &SystemModel,
    abs: &FiniteAbstraction,
) -> Result<f64> {
    let mismatch = &model.r - &rel.p * &abs.reduced.r;
    gamma_from_parts(rel, &mismatch, rel.noise_ball_radius(), &abs.grid.half_widths())
}

fn gamma_from_parts(
    rel: &ProbRelation,
    mismatch: &DMatrix<f64>,
    radius: f64,
    half_widths: &[f64],
) -> Result<f64> {
    let zero_mismatch = mismatch.amax() <= 1e-12;
    if radius.is_infinite() && !zero_mismatch {
        return Err(Error::Contract(
            "delta = 0 requires the plant and lifted abstraction noise to coincide \
             (R = P R̂); a nonzero mismatch cannot be bounded with probability one"
                .into(),
        ));
    }
    let p_noise = mismatch.ncols();
    let p_quant = half_widths.len();
    let mut gamma = 0.0f64;
    for noise_bits in 0..1u32 << p_noise {
        for quant_bits in 0..1u32 << p_quant {
            let mut v = DVector::zeros(rel.m.nrows());
            if !zero_mismatch {
                let sigma = DVector::from_fn(p_noise, |i, _| {
                    if noise_bits >> i & 1 == 1 {
                        radius
                    } else {
                        -radius
                    }
                });
                v += mismatch * sigma;
            }
            let beta = DVector::from_fn(p_quant, |i, _| {
                if quant_bits >> i & 1 == 1 {
                    half_widths[i]
                } else {
                    -half_widths[i]
                }
            });
            v += &rel.p * beta;
            gamma = gamma.max(rel.m_norm(&v));
        }
    }
    Ok(gamma)
}

/// All û ∈ Û′ compatible with u_uc: the lifted abstract successor mean must
/// stay within ε − γ of the plant successor mean in the M norm. An empty
/// result is the supervisor's step-one rejection.
pub fn feasible_inputs(
    rel: &ProbRelation,
    model: &SystemModel,
    abs: &FiniteAbstraction,
    gamma: f64,
    x: &DVector<f64>,
    xhat_state: usize,
    u_uc: &DVector<f64>,
) -> Vec<usize> {
    if xhat_state == abs.grid.sink() || gamma >= rel.eps {
        return Vec::new();
    }
    let xhat = DVector::from_vec(abs.grid.center(xhat_state));
    // Successor-mean deviation excluding the abstract input contribution.
    let fxhat = (&abs.reduced.f * &xhat)[0];
    let drift =
        &abs.reduced.a * &xhat + DVector::from_fn(abs.reduced.state_dim(), |i, _| {
            abs.reduced.e[i] * fxhat.exp()
        });
    let phi = model.step_mean(x, u_uc) - &rel.p * drift;
    let budget = rel.eps - gamma;
    abs.uprime
        .iter()
        .copied()
        .filter(|&ui| {
            let uhat = DVector::from_vec(abs.inputs.center(ui));
            let dev = &phi - &rel.p * (&abs.reduced.b * uhat);
            rel.m_norm(&dev) <= budget
        })
        .collect()
}

/// Precomputed ε-ball letter geometry: for each abstract state, the letters
/// realizable by some plant output within ε of that state's output.
///
/// Grid states use closest-point distance to each label region; the sink uses
/// the letters realizable on or within ε of the complement of the grid's
/// output image. Both are conservative supersets, the safe direction for the
/// ∃ sets and (via their complements) for the ∀ sets.
#[derive(Debug, Clone)]
pub struct EpsGeometry {
    /// Letter ids per abstract state, sink included, each sorted.
    pub letter_sets: Vec<Vec<usize>>,
    pub eps: f64,
}

impl EpsGeometry {
    pub fn new(abs: &FiniteAbstraction, labels: &LabelMap, eps: f64) -> Result<Self> {
        let mut letter_sets = Vec::with_capacity(abs.nstates());
        for cell in 0..abs.grid.ncells() {
            let y = abs.output_of(cell).expect("grid state has an output");
            letter_sets.push(labels.letters_within(y.as_slice(), eps));
        }
        letter_sets.push(sink_letters(abs, labels, eps)?);
        Ok(EpsGeometry { letter_sets, eps })
    }

    /// DFA states reachable from q by letters realizable near `state`'s
    /// output (the successor set the advisor must hedge over).
    pub fn q_eps_set(&self, dfa: &Dfa, state: usize, q: usize) -> Vec<usize> {
        let mut succ: Vec<usize> =
            self.letter_sets[state].iter().map(|&s| dfa.step(q, s)).collect();
        succ.sort_unstable();
        succ.dedup();
        succ
    }

    /// X̂′_ε(q): abstract states from which *some* realizable letter avoids
    /// the accepting set.
    pub fn x_eps_set(&self, dfa: &Dfa, q: usize) -> Vec<bool> {
        self.letter_sets
            .iter()
            .map(|set| set.iter().any(|&s| !dfa.is_accepting(dfa.step(q, s))))
            .collect()
    }

    /// X̂′₋ε(q): abstract states from which *every* realizable letter avoids
    /// the accepting set.
    pub fn x_neg_eps_set(&self, dfa: &Dfa, q: usize) -> Vec<bool> {
        self.letter_sets
            .iter()
            .map(|set| set.iter().all(|&s| !dfa.is_accepting(dfa.step(q, s))))
            .collect()
    }
}

/// Letters the sink can realize: anything on, or within ε of, the complement
/// of the grid's output image.
///
/// The grid box maps to an output box only when the abstract output map is
/// the identity (true for both bundled scenarios); for any other Ĉ the sink
/// conservatively realizes every letter.
fn sink_letters(abs: &FiniteAbstraction, labels: &LabelMap, eps: f64) -> Result<Vec<usize>> {
    let c = &abs.reduced.c;
    let identity = c.is_square() && (c - DMatrix::identity(c.nrows(), c.ncols())).amax() == 0.0;
    if !identity {
        return Ok((0..labels.letters.len()).collect());
    }
    let outer = BoxRegion::new(
        (0..abs.grid.dim())
            .map(|d| Interval::closed(abs.grid.lo[d], abs.grid.hi[d]))
            .collect(),
    );
    labels.letters_near_complement(&outer, eps)
}
