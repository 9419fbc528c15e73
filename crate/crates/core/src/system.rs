//! Disturbance-dependent linear dynamics over a finite outcome set.
//!
//! Models `x' = A(w) x + B(w) u + G(w)` where the disturbance `w` is
//! drawn i.i.d. from a finite set with a fixed probability vector,
//! independent of the state-control pair. The per-outcome matrices may
//! differ, which covers both multiplicative model uncertainty and the
//! purely additive case `G(w) = w`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::risk::{FiniteDistribution, PROB_SUM_TOL};

pub type StateVector = DVector<f64>;
pub type ControlVector = DVector<f64>;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("system must have at least one disturbance outcome")]
    NoOutcomes,
    #[error("outcome {index}: {matrix} has shape {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    MatrixShape {
        index: usize,
        matrix: &'static str,
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("outcome probabilities invalid: {reason}")]
    InvalidProbs { reason: String },
    #[error("control bounds must satisfy lower <= upper componentwise (component {index}: {lower} > {upper})")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },
    #[error("control bounds must have length {expected}, got {got}")]
    BoundsLength { expected: usize, got: usize },
    #[error("outcome index {index} out of range (|W| = {count})")]
    OutcomeIndex { index: usize, count: usize },
    #[error("state vector has length {got}, expected {expected}")]
    StateDimension { got: usize, expected: usize },
    #[error("control vector has length {got}, expected {expected}")]
    ControlDimension { got: usize, expected: usize },
}

/// One disturbance outcome: the matrices realized when `w = w_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub g: DVector<f64>,
}

impl Outcome {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, g: DVector<f64>) -> Self {
        Self { a, b, g }
    }
}

/// A discrete-time stochastic linear system with a finite disturbance set.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStochasticSystem {
    state_dim: usize,
    control_dim: usize,
    outcomes: Vec<Outcome>,
    probs: Vec<f64>,
    u_lower: DVector<f64>,
    u_upper: DVector<f64>,
}

impl LinearStochasticSystem {
    pub fn new(
        outcomes: Vec<Outcome>,
        probs: Vec<f64>,
        u_lower: DVector<f64>,
        u_upper: DVector<f64>,
    ) -> Result<Self, SystemError> {
        let first = outcomes.first().ok_or(SystemError::NoOutcomes)?;
        let state_dim = first.a.nrows();
        let control_dim = first.b.ncols();
        for (index, outcome) in outcomes.iter().enumerate() {
            let check = |matrix: &'static str, rows: usize, cols: usize, er: usize, ec: usize| {
                if rows != er || cols != ec {
                    Err(SystemError::MatrixShape {
                        index,
                        matrix,
                        rows,
                        cols,
                        expected_rows: er,
                        expected_cols: ec,
                    })
                } else {
                    Ok(())
                }
            };
            check("A", outcome.a.nrows(), outcome.a.ncols(), state_dim, state_dim)?;
            check("B", outcome.b.nrows(), outcome.b.ncols(), state_dim, control_dim)?;
            check("G", outcome.g.len(), 1, state_dim, 1)?;
        }
        if probs.len() != outcomes.len() {
            return Err(SystemError::InvalidProbs {
                reason: format!("{} probs for {} outcomes", probs.len(), outcomes.len()),
            });
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(SystemError::InvalidProbs {
                    reason: format!("prob {p} at index {i}"),
                });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(SystemError::InvalidProbs {
                reason: format!("probs sum to {sum}"),
            });
        }
        if u_lower.len() != control_dim {
            return Err(SystemError::BoundsLength {
                expected: control_dim,
                got: u_lower.len(),
            });
        }
        if u_upper.len() != control_dim {
            return Err(SystemError::BoundsLength {
                expected: control_dim,
                got: u_upper.len(),
            });
        }
        for i in 0..control_dim {
            if u_lower[i] > u_upper[i] {
                return Err(SystemError::InvalidBounds {
                    index: i,
                    lower: u_lower[i],
                    upper: u_upper[i],
                });
            }
        }
        Ok(Self {
            state_dim,
            control_dim,
            outcomes,
            probs,
            u_lower,
            u_upper,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn control_dim(&self) -> usize {
        self.control_dim
    }

    pub fn num_outcomes(&self) -> usize {
        self.outcomes.len()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn u_lower(&self) -> &DVector<f64> {
        &self.u_lower
    }

    pub fn u_upper(&self) -> &DVector<f64> {
        &self.u_upper
    }

    /// Clamp a control to the box `[u_lower, u_upper]`.
    pub fn clip_control(&self, u: &ControlVector) -> ControlVector {
        DVector::from_fn(self.control_dim, |i, _| {
            u[i].clamp(self.u_lower[i], self.u_upper[i])
        })
    }

    fn check_state(&self, x: &StateVector) -> Result<(), SystemError> {
        if x.len() != self.state_dim {
            return Err(SystemError::StateDimension {
                got: x.len(),
                expected: self.state_dim,
            });
        }
        Ok(())
    }

    fn check_control(&self, u: &ControlVector) -> Result<(), SystemError> {
        if u.len() != self.control_dim {
            return Err(SystemError::ControlDimension {
                got: u.len(),
                expected: self.control_dim,
            });
        }
        Ok(())
    }

    /// Successor state `A_i x + B_i u + G_i` under outcome `i`.
    pub fn step(
        &self,
        x: &StateVector,
        u: &ControlVector,
        outcome_index: usize,
    ) -> Result<StateVector, SystemError> {
        self.check_state(x)?;
        self.check_control(u)?;
        let outcome = self
            .outcomes
            .get(outcome_index)
            .ok_or(SystemError::OutcomeIndex {
                index: outcome_index,
                count: self.outcomes.len(),
            })?;
        Ok(&outcome.a * x + &outcome.b * u + &outcome.g)
    }

    /// Draw an outcome index with probability `probs[i]`.
    ///
    /// Deterministic given the generator state; rollout streams are
    /// derived from a master seed, see [`crate::scenario::rollout_seed`].
    pub fn sample_outcome<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let draw: f64 = rng.random();
        let mut cumulative = 0.0;
        for (i, &p) in self.probs.iter().enumerate() {
            cumulative += p;
            if draw < cumulative {
                return i;
            }
        }
        // draw landed in the rounding slack past the final cumulative sum
        self.probs.len() - 1
    }

    /// Distribution of `value_fn(x')` over the disturbance outcomes.
    ///
    /// The probability vector always equals the system's outcome
    /// probabilities; equal values are merged downstream, not here.
    pub fn successor_value_distribution<F>(
        &self,
        x: &StateVector,
        u: &ControlVector,
        mut value_fn: F,
    ) -> Result<FiniteDistribution, SystemError>
    where
        F: FnMut(&StateVector) -> f64,
    {
        self.check_state(x)?;
        self.check_control(u)?;
        let values: Vec<f64> = (0..self.outcomes.len())
            .map(|i| {
                let successor = self.step(x, u, i).expect("validated dims and index");
                value_fn(&successor)
            })
            .collect();
        Ok(FiniteDistribution::new(values, self.probs.clone())
            .expect("system probs are a valid distribution"))
    }
}
