//! Risk-averse safety filtering for discrete-time stochastic linear systems.
//!
//! The toolkit evaluates conditional value-at-risk (CVaR) over finite
//! disturbance distributions, checks and verifies CVaR barrier-function
//! safety conditions (including Boolean min/max/negation compositions),
//! and synthesizes minimally interfering safe controls — both as an exact
//! convex quadratic program via the epigraph reformulation of the CVaR
//! constraint and via a convex-concave iteration on the variational form.
//!
//! Module map:
//! * [`risk`] — VaR/CVaR/expectation for finite distributions.
//! * [`system`] — stochastic linear dynamics with a finite outcome set.
//! * [`barrier`] — barrier expressions, the one-step CVaR condition, and
//!   the exhaustive nested-CVaR verifier.
//! * [`qp`] — a dense convex QP solver with KKT certification.
//! * [`filter`] — the minimally interfering safety filter.
//! * [`scenario`] — packaged obstacle-avoidance scenarios and Monte Carlo
//!   violation statistics.

pub mod barrier;
pub mod filter;
pub mod qp;
pub mod risk;
pub mod scenario;
pub mod system;

pub use barrier::{
    BarrierCertificate, BarrierError, BarrierExpr, CompositionMode, LinearBarrier,
    NestedCvarRecord,
};
pub use filter::{
    DccpOptions, FilterError, FilterMethod, FilterRequest, FilterResult, FilterStatus,
    StepStatus, TraceRecord,
};
pub use qp::{KktResiduals, QpError, QpOptions, QpProblem, QpSolution, QpStatus};
pub use risk::{CvarLimitsReport, FiniteDistribution, RiskError, RiskLevel, TailConvention};
pub use scenario::{
    builtin_scenario, run_monte_carlo, sweep_beta, BuiltinCase, ConfigError, ScenarioConfig,
    ScenarioError, ScenarioOverrides, ViolationReport,
};
pub use system::{ControlVector, LinearStochasticSystem, Outcome, StateVector, SystemError};
