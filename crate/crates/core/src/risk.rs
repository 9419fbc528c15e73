//! Exact VaR, CVaR, and expectation for finite discrete distributions.
//!
//! The central object is [`FiniteDistribution`]: a real-valued random
//! variable with finitely many atoms. Throughout this crate the variable
//! is a safety value `h` for which *higher is better*, so the interesting
//! tail is the lower one. CVaR is evaluated two ways:
//!
//! * [`TailConvention::LowerTailGains`] — the average of the worst `beta`
//!   probability mass, equivalently `sup_z { z - E[(z - h)_+] / beta }`.
//!   Computed in closed form by sorting the atoms and splitting the
//!   boundary atom fractionally. This is the convention used by all the
//!   safety machinery in this crate.
//! * [`TailConvention::PaperLiteral`] — the variational form
//!   `inf_z E[z + (h - z)_+ / beta]`, which averages the *largest* `beta`
//!   mass. Retained for fidelity checks of the difference-convex
//!   synthesis route.
//!
//! Both agree with expectation as `beta -> 1` and collapse to the
//! worst/best atom as `beta -> 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Probabilities must sum to one within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Confidence level used to probe the risk-neutral limit `beta -> 1`.
pub const LIMIT_BETA_HIGH: f64 = 1.0 - 1e-9;

/// Confidence level used to probe the worst-case limit `beta -> 0`.
pub const LIMIT_BETA_LOW: f64 = 1e-9;

/// Errors raised when constructing or evaluating distributions.
#[derive(Debug, Error)]
pub enum RiskError {
    #[error("distribution must contain at least one atom")]
    Empty,
    #[error("values/probs length mismatch: {values} values vs {probs} probs")]
    LengthMismatch { values: usize, probs: usize },
    #[error("probs must be nonnegative, got {prob} at index {index}")]
    NegativeProb { index: usize, prob: f64 },
    #[error("probs must sum to 1 within {PROB_SUM_TOL}, got {sum}")]
    ProbSum { sum: f64 },
    #[error("values must be finite, got {value} at index {index}")]
    NonFiniteValue { index: usize, value: f64 },
    #[error("risk level must satisfy 0 < beta < 1 strictly, got {beta}")]
    InvalidRiskLevel { beta: f64 },
}

/// Confidence level `beta` in the open interval (0, 1).
///
/// Construction rejects the endpoints: `beta = 1` is the risk-neutral
/// expectation and `beta = 0` the essential infimum, both of which are
/// reachable only as limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskLevel {
    beta: f64,
}

impl RiskLevel {
    pub fn new(beta: f64) -> Result<Self, RiskError> {
        if !beta.is_finite() || beta <= 0.0 || beta >= 1.0 {
            return Err(RiskError::InvalidRiskLevel { beta });
        }
        Ok(Self { beta })
    }

    pub fn beta(self) -> f64 {
        self.beta
    }
}

/// Selects which tail of the distribution CVaR averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailConvention {
    /// Average of the worst (smallest) `beta` mass of a gains variable.
    LowerTailGains,
    /// The literal variational form `inf_z E[z + (h - z)_+ / beta]`,
    /// which averages the largest `beta` mass.
    PaperLiteral,
}

/// A real-valued random variable with finitely many atoms.
///
/// Invariants enforced at construction: at least one atom, equal-length
/// value/probability lists, nonnegative probabilities summing to one
/// within [`PROB_SUM_TOL`], and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDistribution {
    values: Vec<f64>,
    probs: Vec<f64>,
}

impl FiniteDistribution {
    pub fn new(values: Vec<f64>, probs: Vec<f64>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::Empty);
        }
        if values.len() != probs.len() {
            return Err(RiskError::LengthMismatch {
                values: values.len(),
                probs: probs.len(),
            });
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(RiskError::NonFiniteValue { index, value });
            }
        }
        let mut sum = 0.0;
        for (index, &prob) in probs.iter().enumerate() {
            if !prob.is_finite() || prob < 0.0 {
                return Err(RiskError::NegativeProb { index, prob });
            }
            sum += prob;
        }
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(RiskError::ProbSum { sum });
        }
        Ok(Self { values, probs })
    }

    /// Uniform distribution over the given values.
    pub fn uniform(values: Vec<f64>) -> Result<Self, RiskError> {
        if values.is_empty() {
            return Err(RiskError::Empty);
        }
        let p = 1.0 / values.len() as f64;
        let probs = vec![p; values.len()];
        Self::new(values, probs)
    }

    /// A point mass at `value`.
    pub fn point_mass(value: f64) -> Result<Self, RiskError> {
        Self::new(vec![value], vec![1.0])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false // at least one atom by construction
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `E[h] = sum_i p_i h_i`.
    pub fn expectation(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.probs)
            .map(|(v, p)| v * p)
            .sum()
    }

    /// Atoms sorted ascending with exactly-equal values merged.
    ///
    /// Merging before any quantile search makes tie handling deterministic
    /// and convention-free.
    fn sorted_merged_atoms(&self) -> Vec<(f64, f64)> {
        let mut atoms: Vec<(f64, f64)> = self
            .values
            .iter()
            .copied()
            .zip(self.probs.iter().copied())
            .collect();
        atoms.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite values"));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
        for (v, p) in atoms {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += p,
                _ => merged.push((v, p)),
            }
        }
        merged
    }

    /// Lower `beta`-quantile: the smallest atom value `v` with
    /// `P(h <= v) >= beta`.
    pub fn var(&self, beta: RiskLevel) -> f64 {
        let atoms = self.sorted_merged_atoms();
        let mut cumulative = 0.0;
        for &(v, p) in &atoms {
            cumulative += p;
            if cumulative >= beta.beta() {
                return v;
            }
        }
        // Guard against the cumulative sum rounding just below beta.
        atoms.last().expect("nonempty").0
    }

    /// Conditional value-at-risk at confidence `beta` under `tail`.
    ///
    /// `LowerTailGains` averages the worst `beta` probability mass with
    /// the boundary atom split fractionally: with atoms sorted ascending
    /// and cumulative probabilities `P_(j)`, find the smallest `k` with
    /// `P_(k) >= beta` and return
    /// `(1/beta) * (sum_{j<k} p_(j) h_(j) + (beta - P_(k-1)) h_(k))`.
    ///
    /// `PaperLiteral` evaluates `E[z + (h - z)_+ / beta]` at every atom
    /// value and takes the minimum; the infimum of this piecewise-linear
    /// convex function is attained at an atom.
    pub fn cvar(&self, beta: RiskLevel, tail: TailConvention) -> f64 {
        match tail {
            TailConvention::LowerTailGains => self.cvar_lower_tail(beta.beta()),
            TailConvention::PaperLiteral => self.cvar_paper_literal(beta.beta()),
        }
    }

    fn cvar_lower_tail(&self, beta: f64) -> f64 {
        let atoms = self.sorted_merged_atoms();
        let mut cumulative = 0.0;
        let mut weighted = 0.0;
        for &(v, p) in &atoms {
            let prev = cumulative;
            cumulative += p;
            if cumulative >= beta {
                weighted += (beta - prev) * v;
                return weighted / beta;
            }
            weighted += p * v;
        }
        // beta exceeded the total mass by rounding; the tail is everything.
        weighted / cumulative
    }

    fn cvar_paper_literal(&self, beta: f64) -> f64 {
        let atoms = self.sorted_merged_atoms();
        let mut best = f64::INFINITY;
        for &(zeta, _) in &atoms {
            let mut objective = zeta;
            for &(v, p) in &atoms {
                let excess = v - zeta;
                if excess > 0.0 {
                    objective += p * excess / beta;
                }
            }
            best = best.min(objective);
        }
        best
    }

    /// Checks the limit identities `CVaR_{beta->1} = E[h]` and
    /// `CVaR_{beta->0} = min h` for the lower-tail convention.
    pub fn cvar_limits_check(&self) -> CvarLimitsReport {
        let expectation = self.expectation();
        let high = RiskLevel::new(LIMIT_BETA_HIGH).expect("valid limit level");
        let low = RiskLevel::new(LIMIT_BETA_LOW).expect("valid limit level");
        let risk_neutral_residual =
            (self.cvar(high, TailConvention::LowerTailGains) - expectation).abs();
        let risk_averse_residual =
            (self.cvar(low, TailConvention::LowerTailGains) - self.min_value()).abs();
        let tolerance = 1e-6 * (1.0 + expectation.abs());
        CvarLimitsReport {
            risk_neutral_residual,
            risk_averse_residual,
            tolerance,
            pass: risk_neutral_residual <= tolerance && risk_averse_residual <= tolerance,
        }
    }
}

/// Result of [`FiniteDistribution::cvar_limits_check`].
#[derive(Debug, Clone, Copy)]
pub struct CvarLimitsReport {
    /// `|CVaR_{1 - 1e-9}(h) - E[h]|`.
    pub risk_neutral_residual: f64,
    /// `|CVaR_{1e-9}(h) - min h|`.
    pub risk_averse_residual: f64,
    /// `1e-6 * (1 + |E[h]|)`.
    pub tolerance: f64,
    pub pass: bool,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn level(beta: f64) -> RiskLevel {
        RiskLevel::new(beta).unwrap()
    }

    fn uniform(values: &[f64]) -> FiniteDistribution {
        FiniteDistribution::uniform(values.to_vec()).unwrap()
    }

    #[test]
    fn construction_rejects_bad_inputs() {
        assert!(matches!(
            FiniteDistribution::new(vec![], vec![]),
            Err(RiskError::Empty)
        ));
        assert!(matches!(
            FiniteDistribution::new(vec![1.0], vec![0.5, 0.5]),
            Err(RiskError::LengthMismatch { .. })
        ));
        assert!(matches!(
            FiniteDistribution::new(vec![1.0, 2.0], vec![1.5, -0.5]),
            Err(RiskError::NegativeProb { .. })
        ));
        assert!(matches!(
            FiniteDistribution::new(vec![1.0, 2.0], vec![0.5, 0.4]),
            Err(RiskError::ProbSum { .. })
        ));
        assert!(matches!(
            FiniteDistribution::new(vec![f64::NAN], vec![1.0]),
            Err(RiskError::NonFiniteValue { .. })
        ));
    }

    #[test]
    fn risk_level_rejects_endpoints() {
        assert!(RiskLevel::new(0.0).is_err());
        assert!(RiskLevel::new(1.0).is_err());
        assert!(RiskLevel::new(-0.1).is_err());
        assert!(RiskLevel::new(f64::NAN).is_err());
        assert!(RiskLevel::new(0.5).is_ok());
    }

    #[test]
    fn expectation_examples() {
        let single = FiniteDistribution::point_mass(5.0).unwrap();
        assert_eq!(single.expectation(), 5.0);

        assert_abs_diff_eq!(
            uniform(&[1.0, 2.0, 3.0, 4.0]).expectation(),
            2.5,
            epsilon = 1e-15
        );

        let skew = FiniteDistribution::new(vec![0.4, -0.6], vec![0.9, 0.1]).unwrap();
        assert_abs_diff_eq!(skew.expectation(), 0.3, epsilon = 1e-15);
    }

    #[test]
    fn var_examples() {
        let d = uniform(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(d.var(level(0.5)), 2.0);
        assert_eq!(d.var(level(0.2)), 1.0);

        let single = FiniteDistribution::point_mass(7.0).unwrap();
        assert_eq!(single.var(level(0.01)), 7.0);
        assert_eq!(single.var(level(0.99)), 7.0);
    }

    #[test]
    fn var_merges_ties_before_quantile_search() {
        // 1 appears twice: merged mass 0.5 covers beta = 0.4 at value 1.
        let d = FiniteDistribution::new(vec![1.0, 2.0, 1.0], vec![0.25, 0.5, 0.25]).unwrap();
        assert_eq!(d.var(level(0.4)), 1.0);
        assert_eq!(d.var(level(0.6)), 2.0);
    }

    #[test]
    fn cvar_lower_tail_examples() {
        let d = uniform(&[1.0, 2.0, 3.0, 4.0]);
        assert_abs_diff_eq!(
            d.cvar(level(0.5), TailConvention::LowerTailGains),
            1.5,
            epsilon = 1e-12
        );
        // Fractional boundary atom: (0.25*1 + 0.05*2) / 0.3.
        assert_abs_diff_eq!(
            d.cvar(level(0.3), TailConvention::LowerTailGains),
            0.35 / 0.3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cvar_point_mass_is_the_constant() {
        let c = FiniteDistribution::point_mass(-2.5).unwrap();
        for beta in [0.01, 0.3, 0.9] {
            assert_eq!(c.cvar(level(beta), TailConvention::LowerTailGains), -2.5);
            assert_eq!(c.cvar(level(beta), TailConvention::PaperLiteral), -2.5);
        }
    }

    #[test]
    fn paper_literal_averages_the_upper_tail() {
        let d = uniform(&[1.0, 2.0, 3.0, 4.0]);
        // Worst beta = 0.5 mass of the literal form is the top half.
        assert_abs_diff_eq!(
            d.cvar(level(0.5), TailConvention::PaperLiteral),
            3.5,
            epsilon = 1e-12
        );
        // beta = 0.25 keeps only the top atom.
        assert_abs_diff_eq!(
            d.cvar(level(0.25), TailConvention::PaperLiteral),
            4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn cvar_lies_within_value_range() {
        let d = FiniteDistribution::new(vec![-3.0, 5.0, 0.5], vec![0.2, 0.5, 0.3]).unwrap();
        for beta in [0.05, 0.35, 0.99] {
            for tail in [TailConvention::LowerTailGains, TailConvention::PaperLiteral] {
                let c = d.cvar(level(beta), tail);
                assert!(c >= d.min_value() - 1e-12 && c <= d.max_value() + 1e-12);
            }
        }
    }

    #[test]
    fn cvar_limits_examples() {
        let report = uniform(&[1.0, 2.0, 3.0, 4.0]).cvar_limits_check();
        assert!(report.pass, "residuals: {report:?}");

        let zero = FiniteDistribution::point_mass(0.0).unwrap();
        let report = zero.cvar_limits_check();
        assert_eq!(report.risk_neutral_residual, 0.0);
        assert_eq!(report.risk_averse_residual, 0.0);

        let two = FiniteDistribution::new(vec![-3.0, 5.0], vec![0.5, 0.5]).unwrap();
        let high = two.cvar(level(LIMIT_BETA_HIGH), TailConvention::LowerTailGains);
        let low = two.cvar(level(LIMIT_BETA_LOW), TailConvention::LowerTailGains);
        assert_abs_diff_eq!(low, -3.0, epsilon = 1e-6);
        assert_abs_diff_eq!(high, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn cvar_continuous_at_cumulative_breakpoints() {
        let d = uniform(&[1.0, 2.0, 3.0, 4.0]);
        let range = d.max_value() - d.min_value();
        for breakpoint in [0.25, 0.5, 0.75] {
            let below = d.cvar(level(breakpoint - 1e-9), TailConvention::LowerTailGains);
            let above = d.cvar(level(breakpoint + 1e-9), TailConvention::LowerTailGains);
            assert!(
                (below - above).abs() <= 1e-6 * range,
                "jump at beta = {breakpoint}: {below} vs {above}"
            );
        }
    }

    #[test]
    fn cvar_never_exceeds_var() {
        let d = FiniteDistribution::new(
            vec![-4.0, -1.0, 0.0, 2.0, 9.0],
            vec![0.1, 0.2, 0.3, 0.25, 0.15],
        )
        .unwrap();
        for beta in [0.05, 0.1, 0.31, 0.62, 0.99] {
            let b = level(beta);
            assert!(
                d.cvar(b, TailConvention::LowerTailGains) <= d.var(b) + 1e-12,
                "beta = {beta}"
            );
        }
    }
}
