//! Barrier functions, Boolean compositions, and the CVaR safety condition.
//!
//! A [`LinearBarrier`] is the affine safety value `h(x) = H x + l`; the
//! safe set is `{x | h(x) >= 0}`. Barriers compose under min (conjunction
//! of safe sets), max (disjunction), and negation, forming a
//! [`BarrierExpr`] tree.
//!
//! The one-step condition checked here is
//! `CVaR_beta(h(x')) >= alpha * h(x)` with the lower-tail convention;
//! a control satisfying it at every reachable state keeps the t-fold
//! nested CVaR of `h` above `alpha^t h(x0)`, hence nonnegative from any
//! safe start. [`nested_cvar_verify`] checks that bound exactly by
//! recursing over the full disturbance scenario tree.

use nalgebra::DVector;
use thiserror::Error;

use crate::risk::{FiniteDistribution, RiskError, RiskLevel, TailConvention};
use crate::system::{ControlVector, LinearStochasticSystem, StateVector, SystemError};

/// Hard cap on scenario-tree size for exhaustive verification.
pub const MAX_TREE_NODES: u128 = 1_000_000;

/// Absolute slack applied when flagging the nested bound.
pub const NESTED_FLAG_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BarrierError {
    #[error("barrier row H must not be all zero")]
    ZeroRow,
    #[error("barrier dimension {barrier} does not match state dimension {state}")]
    DimensionMismatch { barrier: usize, state: usize },
    #[error("composite barrier requires at least one child")]
    EmptyComposite,
    #[error("composite children have mixed dimensions: {first} vs {other}")]
    MixedDimensions { first: usize, other: usize },
    #[error("barrier certificate requires 0 < alpha < 1, got {alpha}")]
    InvalidAlpha { alpha: f64 },
    #[error(
        "scenario tree needs {required} leaf nodes (|W|^horizon), budget is {budget}"
    )]
    TreeBudget { required: u128, budget: u128 },
    #[error(transparent)]
    System(#[from] SystemError),
    #[error(transparent)]
    Risk(#[from] RiskError),
}

/// Affine barrier atom `h(x) = H x + l`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearBarrier {
    row: DVector<f64>,
    offset: f64,
}

impl LinearBarrier {
    pub fn new(row: DVector<f64>, offset: f64) -> Result<Self, BarrierError> {
        if row.iter().all(|&c| c == 0.0) {
            return Err(BarrierError::ZeroRow);
        }
        Ok(Self { row, offset })
    }

    pub fn row(&self) -> &DVector<f64> {
        &self.row
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn dim(&self) -> usize {
        self.row.len()
    }

    pub fn value(&self, x: &StateVector) -> f64 {
        self.row.dot(x) + self.offset
    }

    /// The barrier for `-h`, i.e. the complement's boundary.
    pub fn negated(&self) -> Self {
        Self {
            row: -&self.row,
            offset: -self.offset,
        }
    }
}

/// A barrier expression: linear atoms under min/max/negation.
#[derive(Debug, Clone, PartialEq)]
pub enum BarrierExpr {
    Leaf(LinearBarrier),
    Min(Vec<BarrierExpr>),
    Max(Vec<BarrierExpr>),
    Neg(Box<BarrierExpr>),
}

impl BarrierExpr {
    pub fn leaf(barrier: LinearBarrier) -> Self {
        BarrierExpr::Leaf(barrier)
    }

    pub fn min(children: Vec<BarrierExpr>) -> Result<Self, BarrierError> {
        Self::check_children(&children)?;
        Ok(BarrierExpr::Min(children))
    }

    pub fn max(children: Vec<BarrierExpr>) -> Result<Self, BarrierError> {
        Self::check_children(&children)?;
        Ok(BarrierExpr::Max(children))
    }

    pub fn neg(child: BarrierExpr) -> Self {
        BarrierExpr::Neg(Box::new(child))
    }

    fn check_children(children: &[BarrierExpr]) -> Result<(), BarrierError> {
        let first = children.first().ok_or(BarrierError::EmptyComposite)?;
        let dim = first.dim();
        for child in children {
            if child.dim() != dim {
                return Err(BarrierError::MixedDimensions {
                    first: dim,
                    other: child.dim(),
                });
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            BarrierExpr::Leaf(b) => b.dim(),
            BarrierExpr::Min(cs) | BarrierExpr::Max(cs) => cs[0].dim(),
            BarrierExpr::Neg(c) => c.dim(),
        }
    }

    /// Barrier value at `x`; `x` is in the composed safe set iff the
    /// result is nonnegative.
    pub fn evaluate(&self, x: &StateVector) -> Result<f64, BarrierError> {
        if x.len() != self.dim() {
            return Err(BarrierError::DimensionMismatch {
                barrier: self.dim(),
                state: x.len(),
            });
        }
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: &StateVector) -> f64 {
        match self {
            BarrierExpr::Leaf(b) => b.value(x),
            BarrierExpr::Min(cs) => cs
                .iter()
                .map(|c| c.eval_unchecked(x))
                .fold(f64::INFINITY, f64::min),
            BarrierExpr::Max(cs) => cs
                .iter()
                .map(|c| c.eval_unchecked(x))
                .fold(f64::NEG_INFINITY, f64::max),
            BarrierExpr::Neg(c) => -c.eval_unchecked(x),
        }
    }
}

/// Certificate parameters for the barrier condition: decay rate `alpha`
/// and confidence level `beta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierCertificate {
    alpha: f64,
    beta: RiskLevel,
}

impl BarrierCertificate {
    pub fn new(alpha: f64, beta: RiskLevel) -> Result<Self, BarrierError> {
        if !alpha.is_finite() || alpha <= 0.0 || alpha >= 1.0 {
            return Err(BarrierError::InvalidAlpha { alpha });
        }
        Ok(Self { alpha, beta })
    }

    pub fn alpha(self) -> f64 {
        self.alpha
    }

    pub fn beta(self) -> RiskLevel {
        self.beta
    }
}

fn check_dims(
    barrier: &BarrierExpr,
    sys: &LinearStochasticSystem,
    x: &StateVector,
) -> Result<(), BarrierError> {
    if barrier.dim() != sys.state_dim() {
        return Err(BarrierError::DimensionMismatch {
            barrier: barrier.dim(),
            state: sys.state_dim(),
        });
    }
    if x.len() != sys.state_dim() {
        return Err(BarrierError::DimensionMismatch {
            barrier: barrier.dim(),
            state: x.len(),
        });
    }
    Ok(())
}

/// Margin of the one-step barrier condition at `(x, u)`:
/// `CVaR_beta(h(x')) - alpha * h(x)` under the lower-tail convention.
/// Nonnegative iff the condition holds. `u` is not required to satisfy
/// the control bounds; the filter probes infeasible controls too.
pub fn one_step_cvar_margin(
    barrier: &BarrierExpr,
    sys: &LinearStochasticSystem,
    x: &StateVector,
    u: &ControlVector,
    cert: &BarrierCertificate,
) -> Result<f64, BarrierError> {
    check_dims(barrier, sys, x)?;
    let successor = sys.successor_value_distribution(x, u, |s| barrier.eval_unchecked(s))?;
    let cvar = successor.cvar(cert.beta(), TailConvention::LowerTailGains);
    Ok(cvar - cert.alpha() * barrier.eval_unchecked(x))
}

/// Margin of the composed barrier condition over a list of atoms:
/// min composition for conjunction of safe sets, max for disjunction.
pub fn composite_condition_check(
    barriers: &[LinearBarrier],
    mode: CompositionMode,
    sys: &LinearStochasticSystem,
    x: &StateVector,
    u: &ControlVector,
    cert: &BarrierCertificate,
) -> Result<f64, BarrierError> {
    let children: Vec<BarrierExpr> = barriers
        .iter()
        .cloned()
        .map(BarrierExpr::Leaf)
        .collect();
    let expr = match mode {
        CompositionMode::Conjunction => BarrierExpr::min(children)?,
        CompositionMode::Disjunction => BarrierExpr::max(children)?,
    };
    one_step_cvar_margin(&expr, sys, x, u, cert)
}

/// Boolean composition mode for [`composite_condition_check`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompositionMode {
    Conjunction,
    Disjunction,
}

/// One row of the nested-CVaR verification report.
#[derive(Debug, Clone, Copy)]
pub struct NestedCvarRecord {
    pub t: usize,
    /// The t-fold nested CVaR of `h(x^t)`, computed exactly over the
    /// scenario tree.
    pub nested_value: f64,
    /// The induction bound `alpha^t * h(x0)`.
    pub bound: f64,
    /// `nested_value >= bound - NESTED_FLAG_TOL`.
    pub satisfied: bool,
}

/// Exact nested-CVaR verification over the full disturbance tree.
///
/// For each `t <= horizon` computes `CVaR_beta( ... CVaR_beta(h(x^t)))`
/// (t compositions) by recursing over all `|W|^t` disturbance sequences,
/// with the control at each node supplied by `policy(x, depth)`. The
/// policy is invoked once per tree node.
pub fn nested_cvar_verify<F>(
    barrier: &BarrierExpr,
    sys: &LinearStochasticSystem,
    mut policy: F,
    x0: &StateVector,
    cert: &BarrierCertificate,
    horizon: usize,
) -> Result<Vec<NestedCvarRecord>, BarrierError>
where
    F: FnMut(&StateVector, usize) -> ControlVector,
{
    check_dims(barrier, sys, x0)?;
    let w = sys.num_outcomes() as u128;
    let required = w
        .checked_pow(horizon as u32)
        .unwrap_or(u128::MAX);
    if required > MAX_TREE_NODES {
        return Err(BarrierError::TreeBudget {
            required,
            budget: MAX_TREE_NODES,
        });
    }

    // Expand the tree level by level; level d holds |W|^d states.
    let mut levels: Vec<Vec<StateVector>> = vec![vec![x0.clone()]];
    for depth in 0..horizon {
        let mut next = Vec::with_capacity(levels[depth].len() * sys.num_outcomes());
        for x in &levels[depth] {
            let u = policy(x, depth);
            for i in 0..sys.num_outcomes() {
                next.push(sys.step(x, &u, i)?);
            }
        }
        levels.push(next);
    }

    let probs = sys.probs().to_vec();
    let h0 = barrier.eval_unchecked(x0);
    let mut records = Vec::with_capacity(horizon + 1);
    for t in 0..=horizon {
        let mut values: Vec<f64> = levels[t]
            .iter()
            .map(|x| barrier.eval_unchecked(x))
            .collect();
        // Fold one composition of CVaR per level, leaves up to the root.
        for _ in 0..t {
            values = values
                .chunks(sys.num_outcomes())
                .map(|chunk| {
                    FiniteDistribution::new(chunk.to_vec(), probs.clone())
                        .expect("system probs are valid")
                        .cvar(cert.beta(), TailConvention::LowerTailGains)
                })
                .collect();
        }
        debug_assert_eq!(values.len(), 1);
        let nested_value = values[0];
        let bound = cert.alpha().powi(t as i32) * h0;
        records.push(NestedCvarRecord {
            t,
            nested_value,
            bound,
            satisfied: nested_value >= bound - NESTED_FLAG_TOL,
        });
    }
    Ok(records)
}
