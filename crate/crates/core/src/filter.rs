//! The minimally interfering CVaR-safe control filter.
//!
//! Given a state, a legacy control, and a barrier, the filter solves
//!
//! ```text
//! minimize  |u - u_legacy|^2
//! s.t.      u_lower <= u <= u_upper
//!           CVaR_beta( h(A(w)x + B(w)u + G(w)) ) >= alpha h(x)
//! ```
//!
//! two ways. [`FilterMethod::EpigraphExact`] expands the lower-tail CVaR
//! constraint through its variational form into auxiliary variables
//! `(zeta, s_1..s_|W|)`, giving an exact convex QP: feasibility of
//! `s_i >= zeta - h_i(u)`, `s_i >= 0`,
//! `zeta - (1/beta) sum_i p_i s_i >= alpha h(x)` is equivalent to the
//! CVaR constraint because the epigraph variables realize
//! `sup_z { z - E[(z - h)_+]/beta }`.
//!
//! [`FilterMethod::PaperDccp`] runs the convex-concave procedure on the
//! literal variational constraint `q3 - q4(zeta, u) <= 0` with
//! `q4(zeta, u) = zeta + (1/beta) sum_i p_i (h_i(u) - zeta)_+`: at each
//! iterate `q4` is replaced by its supporting affine minorant (subgradient
//! of the piecewise-linear terms, zero slope chosen at kinks) and the
//! resulting QP is solved until the control stops moving. The two methods
//! enforce different tail conventions; the authoritative safety margin
//! reported in [`FilterResult::margin`] is always the lower-tail one,
//! re-checked through the barrier module rather than trusted from the QP.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::barrier::{one_step_cvar_margin, BarrierCertificate, BarrierError, BarrierExpr, LinearBarrier};
use crate::qp::{solve_qp, QpError, QpOptions, QpProblem, QpStatus};
use crate::system::{ControlVector, LinearStochasticSystem, StateVector, SystemError};

/// Margin slack below which a returned control is still reported `Safe`.
pub const SAFE_MARGIN_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("barrier tree not supported by the filter: {reason}")]
    UnsupportedBarrier { reason: String },
    #[error("legacy control has length {got}, expected {expected}")]
    LegacyDimension { got: usize, expected: usize },
    #[error(transparent)]
    Barrier(#[from] BarrierError),
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Qp(#[from] QpError),
    #[error("filter failed at step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<FilterError>,
    },
}

/// Which synthesis route to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterMethod {
    /// Exact epigraph QP for the lower-tail CVaR constraint.
    EpigraphExact,
    /// Convex-concave iteration on the literal variational form.
    PaperDccp,
}

/// Where the convex-concave iteration starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialPointRule {
    /// `u_0 = clip(u_legacy)`, `zeta_0 = VaR_beta` of the successor values.
    LegacyClipped,
    /// `u_0 = 0` (clipped to bounds), same `zeta_0` rule.
    Zero,
}

#[derive(Debug, Clone)]
pub struct DccpOptions {
    pub max_iters: usize,
    /// Stop once `|u_{k+1} - u_k| <= stationarity_tol`.
    pub stationarity_tol: f64,
    pub initial_point_rule: InitialPointRule,
}

impl Default for DccpOptions {
    fn default() -> Self {
        Self {
            max_iters: 100,
            stationarity_tol: 1e-8,
            initial_point_rule: InitialPointRule::LegacyClipped,
        }
    }
}

/// A filtering query: project `u_legacy` onto the CVaR-safe control set.
#[derive(Debug, Clone)]
pub struct FilterRequest {
    pub x: StateVector,
    pub u_legacy: ControlVector,
    pub barrier: BarrierExpr,
    pub cert: BarrierCertificate,
    pub method: FilterMethod,
    pub dccp: DccpOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterStatus {
    /// Bounds hold and the post-hoc lower-tail margin is >= -1e-7.
    Safe,
    /// The safe control set was empty; `u_star` minimizes the squared
    /// constraint violation (phase-1 objective), clipped to bounds.
    InfeasibleFallback,
    /// The solver could not certify a safe control; `u_star` is the best
    /// iterate and `margin` its honest (possibly negative) margin.
    SolverFailure,
}

/// Trace of one convex-concave run.
#[derive(Debug, Clone)]
pub struct DccpDiagnostics {
    /// Optimal objective of each solved subproblem, in order.
    pub subproblem_objectives: Vec<f64>,
    /// Violation of the last linearized constraint at the final point.
    pub final_linearized_violation: f64,
    /// `q4(zeta*, u*) - alpha h(x)`: the margin of the literal variational
    /// constraint the iteration actually enforces.
    pub literal_margin: f64,
}

#[derive(Debug, Clone)]
pub struct FilterResult {
    pub u_star: ControlVector,
    /// The auxiliary CVaR level variable at the solution.
    pub zeta_star: f64,
    pub status: FilterStatus,
    /// `|u_star - u_legacy|^2`.
    pub objective: f64,
    /// Post-hoc lower-tail one-step margin at `(x, u_star)`, computed by
    /// the barrier module independently of the QP construction.
    pub margin: f64,
    pub iterations: usize,
    /// True when a max composition was enforced through a single selected
    /// branch (a conservative surrogate).
    pub conservative: bool,
    pub dccp: Option<DccpDiagnostics>,
}

/// Step status recorded in rollout traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Safe,
    InfeasibleFallback,
    SolverFailure,
    /// The filter was not applied; the legacy control ran as-is.
    Unfiltered,
}

impl From<FilterStatus> for StepStatus {
    fn from(status: FilterStatus) -> Self {
        match status {
            FilterStatus::Safe => StepStatus::Safe,
            FilterStatus::InfeasibleFallback => StepStatus::InfeasibleFallback,
            FilterStatus::SolverFailure => StepStatus::SolverFailure,
        }
    }
}

impl std::fmt::Display for StepStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            StepStatus::Safe => "safe",
            StepStatus::InfeasibleFallback => "infeasible_fallback",
            StepStatus::SolverFailure => "solver_failure",
            StepStatus::Unfiltered => "unfiltered",
        };
        f.write_str(s)
    }
}

/// One simulated step.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub t: usize,
    /// State at time `t`, before stepping.
    pub x: StateVector,
    pub u_legacy: ControlVector,
    /// The applied control.
    pub u: ControlVector,
    /// Barrier value `h(x)` at the pre-step state.
    pub h_value: f64,
    /// One-step lower-tail CVaR margin at `(x, u)`.
    pub margin: f64,
    pub status: StepStatus,
}

// ---------------------------------------------------------------------------
// Barrier lowering
// ---------------------------------------------------------------------------

/// Normalized barrier shapes the synthesis routes accept. Negations are
/// pushed to the leaves and nested same-operator nodes flattened first.
enum LoweredBarrier {
    Atom(LinearBarrier),
    MinOfAtoms(Vec<LinearBarrier>),
    /// Each branch is an atom or a min of atoms; max is enforced through
    /// one selected branch.
    MaxBranches(Vec<MaxBranch>),
}

enum MaxBranch {
    Atom(LinearBarrier),
    MinOfAtoms(Vec<LinearBarrier>),
}

enum Norm {
    Leaf(LinearBarrier),
    Min(Vec<Norm>),
    Max(Vec<Norm>),
}

fn normalize(expr: &BarrierExpr, negated: bool) -> Norm {
    match expr {
        BarrierExpr::Leaf(b) => Norm::Leaf(if negated { b.negated() } else { b.clone() }),
        BarrierExpr::Neg(child) => normalize(child, !negated),
        BarrierExpr::Min(children) => {
            let kids: Vec<Norm> = children.iter().map(|c| normalize(c, negated)).collect();
            if negated {
                flatten(Norm::Max(kids))
            } else {
                flatten(Norm::Min(kids))
            }
        }
        BarrierExpr::Max(children) => {
            let kids: Vec<Norm> = children.iter().map(|c| normalize(c, negated)).collect();
            if negated {
                flatten(Norm::Min(kids))
            } else {
                flatten(Norm::Max(kids))
            }
        }
    }
}

fn flatten(norm: Norm) -> Norm {
    match norm {
        Norm::Min(kids) => {
            let mut flat = Vec::with_capacity(kids.len());
            for kid in kids {
                match kid {
                    Norm::Min(inner) => flat.extend(inner),
                    other => flat.push(other),
                }
            }
            if flat.len() == 1 {
                flat.pop().expect("nonempty")
            } else {
                Norm::Min(flat)
            }
        }
        Norm::Max(kids) => {
            let mut flat = Vec::with_capacity(kids.len());
            for kid in kids {
                match kid {
                    Norm::Max(inner) => flat.extend(inner),
                    other => flat.push(other),
                }
            }
            if flat.len() == 1 {
                flat.pop().expect("nonempty")
            } else {
                Norm::Max(flat)
            }
        }
        leaf => leaf,
    }
}

fn lower(expr: &BarrierExpr) -> Result<LoweredBarrier, FilterError> {
    match normalize(expr, false) {
        Norm::Leaf(atom) => Ok(LoweredBarrier::Atom(atom)),
        Norm::Min(kids) => {
            let mut atoms = Vec::with_capacity(kids.len());
            for kid in kids {
                match kid {
                    Norm::Leaf(atom) => atoms.push(atom),
                    _ => {
                        return Err(FilterError::UnsupportedBarrier {
                            reason: "min over a max composition is not QP-representable".into(),
                        })
                    }
                }
            }
            Ok(LoweredBarrier::MinOfAtoms(atoms))
        }
        Norm::Max(kids) => {
            let mut branches = Vec::with_capacity(kids.len());
            for kid in kids {
                match kid {
                    Norm::Leaf(atom) => branches.push(MaxBranch::Atom(atom)),
                    Norm::Min(inner) => {
                        let mut atoms = Vec::with_capacity(inner.len());
                        for node in inner {
                            match node {
                                Norm::Leaf(atom) => atoms.push(atom),
                                _ => {
                                    return Err(FilterError::UnsupportedBarrier {
                                        reason: "nested max below min inside a max branch".into(),
                                    })
                                }
                            }
                        }
                        branches.push(MaxBranch::MinOfAtoms(atoms));
                    }
                    Norm::Max(_) => unreachable!("max nodes are flattened"),
                }
            }
            Ok(LoweredBarrier::MaxBranches(branches))
        }
    }
}

// ---------------------------------------------------------------------------
// Epigraph construction
// ---------------------------------------------------------------------------

/// Per-outcome affine data of one atom: `h_j(x_i') = rhs + coeff . u`.
struct AtomOutcome {
    /// `H_j B_i` as a length-m vector.
    coeff: DVector<f64>,
    /// `H_j (A_i x + G_i) + l_j`.
    constant: f64,
}

fn atom_outcomes(
    atom: &LinearBarrier,
    sys: &LinearStochasticSystem,
    x: &StateVector,
) -> Vec<AtomOutcome> {
    sys.outcomes()
        .iter()
        .map(|outcome| {
            let base = &outcome.a * x + &outcome.g;
            AtomOutcome {
                coeff: outcome.b.transpose() * atom.row(),
                constant: atom.row().dot(&base) + atom.offset(),
            }
        })
        .collect()
}

struct Epigraph {
    problem: QpProblem,
    conservative: bool,
}

fn build_epigraph(
    atoms: &[LinearBarrier],
    rhs_value: f64,
    sys: &LinearStochasticSystem,
    x: &StateVector,
    u_legacy: &ControlVector,
    cert: &BarrierCertificate,
    conservative: bool,
) -> Result<Epigraph, FilterError> {
    let m = sys.control_dim();
    let w = sys.num_outcomes();
    let k = atoms.len();
    let beta = cert.beta().beta();
    let composite = k > 1;

    // Single atom: z = (u, zeta, s_1..s_W).
    // Composite min: z = (u, zeta, s_1..s_W, v_1..v_W) with v_i the
    // per-outcome minimum over the atoms.
    let d = if composite { m + 1 + 2 * w } else { m + 1 + w };
    let c = if composite {
        2 * m + 2 * w + w * k + 1
    } else {
        2 * m + 2 * w + 1
    };
    let zeta_col = m;
    let s_col = m + 1;
    let v_col = m + 1 + w;

    let mut p = DMatrix::<f64>::zeros(d, d);
    let mut q = DVector::<f64>::zeros(d);
    for j in 0..m {
        p[(j, j)] = 2.0;
        q[j] = -2.0 * u_legacy[j];
    }

    let mut a = DMatrix::<f64>::zeros(c, d);
    let mut b = DVector::<f64>::zeros(c);
    let mut row = 0;

    // Control bounds.
    for j in 0..m {
        a[(row, j)] = 1.0;
        b[row] = sys.u_upper()[j];
        row += 1;
        a[(row, j)] = -1.0;
        b[row] = -sys.u_lower()[j];
        row += 1;
    }
    // s_i >= 0.
    for i in 0..w {
        a[(row, s_col + i)] = -1.0;
        b[row] = 0.0;
        row += 1;
    }

    if composite {
        // s_i >= zeta - v_i.
        for i in 0..w {
            a[(row, zeta_col)] = 1.0;
            a[(row, v_col + i)] = -1.0;
            a[(row, s_col + i)] = -1.0;
            b[row] = 0.0;
            row += 1;
        }
        // v_i <= h_j(x_i') for every atom j.
        for atom in atoms {
            let outcomes = atom_outcomes(atom, sys, x);
            for (i, data) in outcomes.iter().enumerate() {
                a[(row, v_col + i)] = 1.0;
                for j in 0..m {
                    a[(row, j)] = -data.coeff[j];
                }
                b[row] = data.constant;
                row += 1;
            }
        }
    } else {
        // s_i >= zeta - h(x_i').
        let outcomes = atom_outcomes(&atoms[0], sys, x);
        for (i, data) in outcomes.iter().enumerate() {
            a[(row, zeta_col)] = 1.0;
            for j in 0..m {
                a[(row, j)] = -data.coeff[j];
            }
            a[(row, s_col + i)] = -1.0;
            b[row] = data.constant;
            row += 1;
        }
    }

    // zeta - (1/beta) sum_i p_i s_i >= alpha h(x).
    a[(row, zeta_col)] = -1.0;
    for i in 0..w {
        a[(row, s_col + i)] = sys.probs()[i] / beta;
    }
    b[row] = -cert.alpha() * rhs_value;
    row += 1;
    debug_assert_eq!(row, c);

    Ok(Epigraph {
        problem: QpProblem::new(p, q, a, b)?,
        conservative,
    })
}

fn build_lowered(
    req: &FilterRequest,
    sys: &LinearStochasticSystem,
) -> Result<Epigraph, FilterError> {
    match lower(&req.barrier)? {
        LoweredBarrier::Atom(atom) => {
            let rhs = atom.value(&req.x);
            build_epigraph(&[atom], rhs, sys, &req.x, &req.u_legacy, &req.cert, false)
        }
        LoweredBarrier::MinOfAtoms(atoms) => {
            let rhs = atoms
                .iter()
                .map(|a| a.value(&req.x))
                .fold(f64::INFINITY, f64::min);
            build_epigraph(&atoms, rhs, sys, &req.x, &req.u_legacy, &req.cert, false)
        }
        LoweredBarrier::MaxBranches(branches) => {
            // Enforce the condition on the branch with the largest value
            // at x; this implies the max condition but restricts the
            // control set, so the result is flagged conservative.
            let values: Vec<f64> = branches
                .iter()
                .map(|branch| match branch {
                    MaxBranch::Atom(atom) => atom.value(&req.x),
                    MaxBranch::MinOfAtoms(atoms) => atoms
                        .iter()
                        .map(|a| a.value(&req.x))
                        .fold(f64::INFINITY, f64::min),
                })
                .collect();
            let best = values
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite"))
                .map(|(i, _)| i)
                .expect("max has at least one branch");
            let rhs = values[best];
            match &branches[best] {
                MaxBranch::Atom(atom) => build_epigraph(
                    &[atom.clone()],
                    rhs,
                    sys,
                    &req.x,
                    &req.u_legacy,
                    &req.cert,
                    true,
                ),
                MaxBranch::MinOfAtoms(atoms) => {
                    build_epigraph(atoms, rhs, sys, &req.x, &req.u_legacy, &req.cert, true)
                }
            }
        }
    }
}

/// Build the epigraph QP for a filter request.
///
/// For a single affine barrier the decision vector is `(u, zeta, s_1..s_W)`
/// (`m + 1 + |W|` variables, `2m + 2|W| + 1` rows); min compositions add a
/// per-outcome minimum variable, and max compositions are lowered through
/// the branch maximizing `h` at the current state.
pub fn build_epigraph_qp(
    req: &FilterRequest,
    sys: &LinearStochasticSystem,
) -> Result<QpProblem, FilterError> {
    validate_request(req, sys)?;
    Ok(build_lowered(req, sys)?.problem)
}

fn validate_request(req: &FilterRequest, sys: &LinearStochasticSystem) -> Result<(), FilterError> {
    if req.barrier.dim() != sys.state_dim() {
        return Err(BarrierError::DimensionMismatch {
            barrier: req.barrier.dim(),
            state: sys.state_dim(),
        }
        .into());
    }
    if req.x.len() != sys.state_dim() {
        return Err(SystemError::StateDimension {
            got: req.x.len(),
            expected: sys.state_dim(),
        }
        .into());
    }
    if req.u_legacy.len() != sys.control_dim() {
        return Err(FilterError::LegacyDimension {
            got: req.u_legacy.len(),
            expected: sys.control_dim(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Solving
// ---------------------------------------------------------------------------

fn control_objective(u: &ControlVector, u_legacy: &ControlVector) -> f64 {
    (u - u_legacy).norm_squared()
}

fn finish(
    req: &FilterRequest,
    sys: &LinearStochasticSystem,
    u: ControlVector,
    zeta: f64,
    raw_status: QpStatus,
    iterations: usize,
    conservative: bool,
    dccp: Option<DccpDiagnostics>,
) -> Result<FilterResult, FilterError> {
    let u_star = sys.clip_control(&u);
    let margin = one_step_cvar_margin(&req.barrier, sys, &req.x, &u_star, &req.cert)?;
    let status = match raw_status {
        QpStatus::Optimal if margin >= -SAFE_MARGIN_TOL => FilterStatus::Safe,
        QpStatus::Optimal => FilterStatus::SolverFailure,
        QpStatus::Infeasible => FilterStatus::InfeasibleFallback,
        QpStatus::IterLimit => FilterStatus::SolverFailure,
    };
    let objective = control_objective(&u_star, &req.u_legacy);
    Ok(FilterResult {
        u_star,
        zeta_star: zeta,
        status,
        objective,
        margin,
        iterations,
        conservative,
        dccp,
    })
}

fn solve_epigraph(
    req: &FilterRequest,
    sys: &LinearStochasticSystem,
) -> Result<FilterResult, FilterError> {
    let m = sys.control_dim();
    let epigraph = build_lowered(req, sys)?;
    let solution = solve_qp(&epigraph.problem, &QpOptions::default())?;
    let (u, zeta) = match solution.status {
        QpStatus::Infeasible => {
            let witness = &solution
                .infeasibility
                .as_ref()
                .expect("infeasible solutions carry a certificate")
                .witness;
            (
                DVector::from_fn(m, |i, _| witness[i]),
                witness[m],
            )
        }
        _ => (
            DVector::from_fn(m, |i, _| solution.z[i]),
            solution.z[m],
        ),
    };
    finish(
        req,
        sys,
        u,
        zeta,
        solution.status,
        solution.iterations,
        epigraph.conservative,
        None,
    )
}

fn solve_dccp(
    req: &FilterRequest,
    sys: &LinearStochasticSystem,
) -> Result<FilterResult, FilterError> {
    let atom = match lower(&req.barrier)? {
        LoweredBarrier::Atom(atom) => atom,
        _ => {
            return Err(FilterError::UnsupportedBarrier {
                reason: "the convex-concave route handles a single affine barrier".into(),
            })
        }
    };
    let m = sys.control_dim();
    let beta = req.cert.beta().beta();
    let q3 = req.cert.alpha() * atom.value(&req.x);
    let outcomes = atom_outcomes(&atom, sys, &req.x);
    let probs = sys.probs();

    let h_values = |u: &ControlVector| -> Vec<f64> {
        outcomes
            .iter()
            .map(|o| o.constant + o.coeff.dot(u))
            .collect()
    };
    let q4 = |zeta: f64, u: &ControlVector| -> f64 {
        let mut total = zeta;
        for (i, h) in h_values(u).iter().enumerate() {
            let excess = h - zeta;
            if excess > 0.0 {
                total += probs[i] * excess / beta;
            }
        }
        total
    };

    let mut u = match req.dccp.initial_point_rule {
        InitialPointRule::LegacyClipped => sys.clip_control(&req.u_legacy),
        InitialPointRule::Zero => sys.clip_control(&DVector::zeros(m)),
    };
    let mut zeta = sys
        .successor_value_distribution(&req.x, &u, |s| atom.value(s))?
        .var(req.cert.beta());

    let mut objectives = Vec::new();
    let mut final_linearized_violation = 0.0;
    let mut iterations = 0;

    for iter in 0..req.dccp.max_iters {
        iterations = iter + 1;

        // Supporting affine minorant of q4 at (zeta_k, u_k). Active pieces
        // are the outcomes with h_i - zeta strictly positive; the kink
        // takes the zero side.
        let hs = h_values(&u);
        let mut grad_zeta = 1.0;
        let mut grad_u = DVector::<f64>::zeros(m);
        for (i, &h) in hs.iter().enumerate() {
            if h - zeta > 0.0 {
                grad_zeta -= probs[i] / beta;
                grad_u += &outcomes[i].coeff * (probs[i] / beta);
            }
        }
        let q4_k = q4(zeta, &u);

        // Subproblem: min |u - u_legacy|^2 over (u, zeta) subject to the
        // bounds and q3 - [q4_k + grad . (delta zeta, delta u)] <= 0.
        let d = m + 1;
        let c = 2 * m + 1;
        let mut p_mat = DMatrix::<f64>::zeros(d, d);
        let mut q_vec = DVector::<f64>::zeros(d);
        for j in 0..m {
            p_mat[(j, j)] = 2.0;
            q_vec[j] = -2.0 * req.u_legacy[j];
        }
        let mut a_mat = DMatrix::<f64>::zeros(c, d);
        let mut b_vec = DVector::<f64>::zeros(c);
        let mut row = 0;
        for j in 0..m {
            a_mat[(row, j)] = 1.0;
            b_vec[row] = sys.u_upper()[j];
            row += 1;
            a_mat[(row, j)] = -1.0;
            b_vec[row] = -sys.u_lower()[j];
            row += 1;
        }
        for j in 0..m {
            a_mat[(row, j)] = -grad_u[j];
        }
        a_mat[(row, m)] = -grad_zeta;
        b_vec[row] = q4_k - grad_zeta * zeta - grad_u.dot(&u) - q3;

        let subproblem = QpProblem::new(p_mat, q_vec, a_mat, b_vec)?;
        let solution = solve_qp(&subproblem, &QpOptions::default())?;
        match solution.status {
            QpStatus::Optimal => {}
            QpStatus::Infeasible => {
                let witness = &solution
                    .infeasibility
                    .as_ref()
                    .expect("infeasible solutions carry a certificate")
                    .witness;
                let u_fb = DVector::from_fn(m, |i, _| witness[i]);
                let zeta_fb = witness[m];
                let literal = q4(zeta_fb, &u_fb) - q3;
                return finish(
                    req,
                    sys,
                    u_fb,
                    zeta_fb,
                    QpStatus::Infeasible,
                    iterations,
                    false,
                    Some(DccpDiagnostics {
                        subproblem_objectives: objectives,
                        final_linearized_violation: 0.0,
                        literal_margin: literal,
                    }),
                );
            }
            QpStatus::IterLimit => {
                let literal = q4(zeta, &u) - q3;
                return finish(
                    req,
                    sys,
                    u,
                    zeta,
                    QpStatus::IterLimit,
                    iterations,
                    false,
                    Some(DccpDiagnostics {
                        subproblem_objectives: objectives,
                        final_linearized_violation,
                        literal_margin: literal,
                    }),
                );
            }
        }

        let u_next = DVector::from_fn(m, |i, _| solution.z[i]);
        let zeta_next = solution.z[m];
        objectives.push(control_objective(&u_next, &req.u_legacy));
        final_linearized_violation = (q3
            - (q4_k + grad_zeta * (zeta_next - zeta) + grad_u.dot(&(&u_next - &u))))
        .max(0.0);

        let step = (&u_next - &u).norm();
        u = u_next;
        zeta = zeta_next;
        if step <= req.dccp.stationarity_tol {
            break;
        }
    }

    let literal = q4(zeta, &u) - q3;
    finish(
        req,
        sys,
        u,
        zeta,
        QpStatus::Optimal,
        iterations,
        false,
        Some(DccpDiagnostics {
            subproblem_objectives: objectives,
            final_linearized_violation,
            literal_margin: literal,
        }),
    )
}

/// Solve a filter request. The returned control is always clipped to the
/// control bounds, and the reported margin is re-checked post hoc through
/// the barrier module; a result is never `Safe` with a margin below
/// `-`[`SAFE_MARGIN_TOL`].
pub fn solve_filter(
    req: &FilterRequest,
    sys: &LinearStochasticSystem,
) -> Result<FilterResult, FilterError> {
    validate_request(req, sys)?;
    match req.method {
        FilterMethod::EpigraphExact => solve_epigraph(req, sys),
        FilterMethod::PaperDccp => solve_dccp(req, sys),
    }
}

/// Closed-loop rollout of the filtered system.
///
/// At each step the legacy law proposes a control, the filter projects it,
/// a disturbance outcome is sampled, and the system steps. Hard solver
/// errors abort with the step index attached; non-`Safe` statuses are
/// recorded in the trace and the rollout continues with the returned
/// fallback control.
#[allow(clippy::too_many_arguments)]
pub fn filter_rollout<L, R>(
    sys: &LinearStochasticSystem,
    barrier: &BarrierExpr,
    cert: &BarrierCertificate,
    mut legacy_law: L,
    x0: &StateVector,
    steps: usize,
    rng: &mut R,
    method: FilterMethod,
    dccp: &DccpOptions,
) -> Result<Vec<TraceRecord>, FilterError>
where
    L: FnMut(&StateVector, usize) -> ControlVector,
    R: Rng + ?Sized,
{
    let mut records = Vec::with_capacity(steps);
    let mut x = x0.clone();
    for t in 0..steps {
        let u_legacy = legacy_law(&x, t);
        let req = FilterRequest {
            x: x.clone(),
            u_legacy: u_legacy.clone(),
            barrier: barrier.clone(),
            cert: *cert,
            method,
            dccp: dccp.clone(),
        };
        let result = solve_filter(&req, sys).map_err(|e| FilterError::AtStep {
            step: t,
            source: Box::new(e),
        })?;
        let h_value = barrier.evaluate(&x)?;
        records.push(TraceRecord {
            t,
            x: x.clone(),
            u_legacy,
            u: result.u_star.clone(),
            h_value,
            margin: result.margin,
            status: result.status.into(),
        });
        let outcome = sys.sample_outcome(rng);
        x = sys.step(&x, &result.u_star, outcome).map_err(|e| {
            FilterError::AtStep {
                step: t,
                source: Box::new(e.into()),
            }
        })?;
    }
    Ok(records)
}
