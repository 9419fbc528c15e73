//! Packaged obstacle-avoidance scenarios and Monte Carlo statistics.
//!
//! A [`ScenarioConfig`] is a complete, serializable description of one
//! experiment: the step-to-step linear model (a per-axis position/velocity
//! template or explicit matrices), the additive disturbance sample set,
//! the barrier, the certificate, the legacy law, and the run parameters.
//! Configs are plain JSON with a versioned schema so runs diff cleanly.
//!
//! Reproducibility: every stream is derived from `master_seed` with the
//! SplitMix64 finalizer in [`rollout_seed`] — rollout `i` uses
//! `rollout_seed(master_seed, i)` and the disturbance-set draw uses the
//! reserved index `u64::MAX`. Extending `num_rollouts` therefore never
//! changes existing rollouts.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barrier::{
    one_step_cvar_margin, BarrierCertificate, BarrierExpr, LinearBarrier,
};
use crate::filter::{
    filter_rollout, DccpOptions, FilterError, FilterMethod, StepStatus, TraceRecord,
};
use crate::risk::RiskLevel;
use crate::system::{ControlVector, LinearStochasticSystem, Outcome, StateVector};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Reserved stream index for the disturbance-set draw.
const DISTURBANCE_STREAM: u64 = u64::MAX;

/// Derives the per-stream seed from the master seed: the SplitMix64
/// finalizer applied to `master_seed + (index + 1) * 0x9E3779B97F4A7C15`.
pub fn rollout_seed(master_seed: u64, rollout_index: u64) -> u64 {
    let mut z = master_seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15u64.wrapping_mul(rollout_index.wrapping_add(1)));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("unknown builtin case `{0}` (expected case1, case2, or case3)")]
    UnknownCase(String),
    #[error("config parse error: {0}")]
    Parse(String),
}

fn field_err(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Field {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

// ---------------------------------------------------------------------------
// Config schema
// ---------------------------------------------------------------------------

/// Step-to-step surrogate model: per axis, position integrates velocity
/// and the step-size input, `c' = c + dt v + input_pos_gain u + w_c`,
/// `v' = vel_decay v + input_vel_gain u + w_v`. The full state stacks the
/// axes as `(c_1, v_1, c_2, v_2, ...)` with one control per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateSpec {
    pub axes: usize,
    pub dt: f64,
    pub vel_decay: f64,
    pub input_pos_gain: f64,
    pub input_vel_gain: f64,
    /// Control bounds, one entry per axis.
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
}

/// Explicit matrices `A` (n x n) and `B` (n x m), row-major, with the
/// disturbance entering additively through the sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplicitSpec {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Template(TemplateSpec),
    Explicit(ExplicitSpec),
}

/// The finite disturbance set: literal `w` vectors (serialized so runs
/// reproduce exactly) with uniform or explicit probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub samples: Vec<Vec<f64>>,
    pub uniform: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probs: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionSpec {
    Single,
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierAtomSpec {
    /// Row vector `H` of the affine barrier `h(x) = H x + offset`.
    pub h: Vec<f64>,
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierSpec {
    pub atoms: Vec<BarrierAtomSpec>,
    pub composition: CompositionSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertSpec {
    pub alpha: f64,
    pub beta: f64,
}

/// Constant-velocity reference tracking with gain:
/// `u_j = gain * (v_ref_j(t) - x[velocity_indices[j]])`, optionally with a
/// sinusoidal reference `v_ref_j(t) = velocity_ref_j +
/// sin_amplitude_j * sin(2 pi t / sin_period)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegacySpec {
    pub velocity_ref: Vec<f64>,
    pub gain: f64,
    pub velocity_indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sin_amplitude: Vec<f64>,
    #[serde(default)]
    pub sin_period: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodSpec {
    Epigraph,
    Dccp,
}

impl MethodSpec {
    pub fn to_filter_method(self) -> FilterMethod {
        match self {
            MethodSpec::Epigraph => FilterMethod::EpigraphExact,
            MethodSpec::Dccp => FilterMethod::PaperDccp,
        }
    }
}

impl std::str::FromStr for MethodSpec {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "epigraph" => Ok(MethodSpec::Epigraph),
            "dccp" => Ok(MethodSpec::Dccp),
            other => Err(field_err(
                "method",
                format!("unknown method `{other}` (expected epigraph or dccp)"),
            )),
        }
    }
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub name: String,
    pub system: SystemSpec,
    pub disturbance: DisturbanceSpec,
    pub barrier: BarrierSpec,
    pub cert: CertSpec,
    pub legacy: LegacySpec,
    pub x0: Vec<f64>,
    pub steps: usize,
    pub num_rollouts: usize,
    pub master_seed: u64,
    pub method: MethodSpec,
    #[serde(default = "default_true")]
    pub filter_enabled: bool,
}

impl ScenarioConfig {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Compact canonical serialization (fixed field order); the basis for
    /// the manifest's config hash.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn state_dim(&self) -> usize {
        match &self.system {
            SystemSpec::Template(t) => 2 * t.axes,
            SystemSpec::Explicit(e) => e.a.len(),
        }
    }

    pub fn control_dim(&self) -> usize {
        match &self.system {
            SystemSpec::Template(t) => t.axes,
            SystemSpec::Explicit(e) => e.b.first().map_or(0, |row| row.len()),
        }
    }

    /// Validation of everything the type system cannot express; errors
    /// carry the offending field path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(field_err(
                "schema_version",
                format!(
                    "unsupported version {} (expected {CONFIG_SCHEMA_VERSION})",
                    self.schema_version
                ),
            ));
        }
        let n = self.state_dim();
        let m = self.control_dim();
        match &self.system {
            SystemSpec::Template(t) => {
                if t.axes == 0 {
                    return Err(field_err("system.axes", "must be at least 1"));
                }
                if t.u_lower.len() != t.axes || t.u_upper.len() != t.axes {
                    return Err(field_err(
                        "system.u_lower",
                        format!("bounds must have one entry per axis ({})", t.axes),
                    ));
                }
                for i in 0..t.axes {
                    if t.u_lower[i] > t.u_upper[i] {
                        return Err(field_err(
                            "system.u_lower",
                            format!("component {i} exceeds u_upper"),
                        ));
                    }
                }
            }
            SystemSpec::Explicit(e) => {
                if e.a.is_empty() || e.a.iter().any(|row| row.len() != n) {
                    return Err(field_err("system.a", format!("must be {n}x{n}")));
                }
                if e.b.len() != n || e.b.iter().any(|row| row.len() != m) {
                    return Err(field_err("system.b", format!("must be {n}x{m}")));
                }
                if e.u_lower.len() != m || e.u_upper.len() != m {
                    return Err(field_err("system.u_lower", format!("must have length {m}")));
                }
                for i in 0..m {
                    if e.u_lower[i] > e.u_upper[i] {
                        return Err(field_err(
                            "system.u_lower",
                            format!("component {i} exceeds u_upper"),
                        ));
                    }
                }
            }
        }
        if self.disturbance.samples.is_empty() {
            return Err(field_err("disturbance.samples", "need at least one sample"));
        }
        if self.disturbance.samples.iter().any(|w| w.len() != n) {
            return Err(field_err(
                "disturbance.samples",
                format!("every sample must have length {n}"),
            ));
        }
        match (&self.disturbance.probs, self.disturbance.uniform) {
            (None, false) => {
                return Err(field_err(
                    "disturbance.probs",
                    "required when uniform is false",
                ));
            }
            (Some(probs), _) => {
                if probs.len() != self.disturbance.samples.len() {
                    return Err(field_err(
                        "disturbance.probs",
                        "length must match samples",
                    ));
                }
                let sum: f64 = probs.iter().sum();
                if probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
                    return Err(field_err(
                        "disturbance.probs",
                        format!("must be nonnegative and sum to 1, got sum {sum}"),
                    ));
                }
            }
            (None, true) => {}
        }
        if self.barrier.atoms.is_empty() {
            return Err(field_err("barrier.atoms", "need at least one atom"));
        }
        if self.barrier.atoms.iter().any(|a| a.h.len() != n) {
            return Err(field_err(
                "barrier.atoms",
                format!("every atom row must have length {n}"),
            ));
        }
        if self.barrier.composition == CompositionSpec::Single && self.barrier.atoms.len() != 1 {
            return Err(field_err(
                "barrier.composition",
                "single composition requires exactly one atom",
            ));
        }
        if !(self.cert.alpha > 0.0 && self.cert.alpha < 1.0) {
            return Err(field_err("cert.alpha", "must lie strictly in (0, 1)"));
        }
        if !(self.cert.beta > 0.0 && self.cert.beta < 1.0) {
            return Err(field_err("cert.beta", "must lie strictly in (0, 1)"));
        }
        if self.legacy.velocity_ref.len() != m {
            return Err(field_err(
                "legacy.velocity_ref",
                format!("must have length {m}"),
            ));
        }
        if self.legacy.velocity_indices.len() != m {
            return Err(field_err(
                "legacy.velocity_indices",
                format!("must have length {m}"),
            ));
        }
        if self.legacy.velocity_indices.iter().any(|&i| i >= n) {
            return Err(field_err(
                "legacy.velocity_indices",
                format!("indices must be below the state dimension {n}"),
            ));
        }
        if !self.legacy.sin_amplitude.is_empty() && self.legacy.sin_amplitude.len() != m {
            return Err(field_err(
                "legacy.sin_amplitude",
                format!("must be empty or have length {m}"),
            ));
        }
        if !self.legacy.sin_amplitude.is_empty() && self.legacy.sin_period <= 0.0 {
            return Err(field_err(
                "legacy.sin_period",
                "must be positive when sin_amplitude is set",
            ));
        }
        if self.x0.len() != n {
            return Err(field_err("x0", format!("must have length {n}")));
        }
        if self.steps == 0 {
            return Err(field_err("steps", "must be at least 1"));
        }
        if self.num_rollouts == 0 {
            return Err(field_err("num_rollouts", "must be at least 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

/// The executable pieces assembled from a validated config.
pub struct BuiltScenario {
    pub system: LinearStochasticSystem,
    pub barrier: BarrierExpr,
    pub cert: BarrierCertificate,
    pub legacy: LegacySpec,
    pub x0: StateVector,
}

/// Evaluate the legacy law at `(x, t)`.
pub fn legacy_control(spec: &LegacySpec, x: &StateVector, t: usize) -> ControlVector {
    DVector::from_fn(spec.velocity_ref.len(), |j, _| {
        let mut reference = spec.velocity_ref[j];
        if !spec.sin_amplitude.is_empty() && spec.sin_period > 0.0 {
            reference += spec.sin_amplitude[j]
                * (2.0 * std::f64::consts::PI * t as f64 / spec.sin_period).sin();
        }
        spec.gain * (reference - x[spec.velocity_indices[j]])
    })
}

pub fn build_scenario(cfg: &ScenarioConfig) -> Result<BuiltScenario, ConfigError> {
    cfg.validate()?;
    let n = cfg.state_dim();
    let m = cfg.control_dim();

    let (a, b, u_lower, u_upper) = match &cfg.system {
        SystemSpec::Template(t) => {
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut b = DMatrix::<f64>::zeros(n, m);
            for axis in 0..t.axes {
                let c = 2 * axis;
                let v = 2 * axis + 1;
                a[(c, c)] = 1.0;
                a[(c, v)] = t.dt;
                a[(v, v)] = t.vel_decay;
                b[(c, axis)] = t.input_pos_gain;
                b[(v, axis)] = t.input_vel_gain;
            }
            (
                a,
                b,
                DVector::from_vec(t.u_lower.clone()),
                DVector::from_vec(t.u_upper.clone()),
            )
        }
        SystemSpec::Explicit(e) => {
            let a = DMatrix::from_fn(n, n, |i, j| e.a[i][j]);
            let b = DMatrix::from_fn(n, m, |i, j| e.b[i][j]);
            (
                a,
                b,
                DVector::from_vec(e.u_lower.clone()),
                DVector::from_vec(e.u_upper.clone()),
            )
        }
    };

    let outcomes: Vec<Outcome> = cfg
        .disturbance
        .samples
        .iter()
        .map(|w| Outcome::new(a.clone(), b.clone(), DVector::from_vec(w.clone())))
        .collect();
    let probs = match &cfg.disturbance.probs {
        Some(p) => p.clone(),
        None => vec![1.0 / outcomes.len() as f64; outcomes.len()],
    };
    let system = LinearStochasticSystem::new(outcomes, probs, u_lower, u_upper)
        .map_err(|e| field_err("system", e.to_string()))?;

    let atoms: Vec<BarrierExpr> = cfg
        .barrier
        .atoms
        .iter()
        .map(|atom| {
            LinearBarrier::new(DVector::from_vec(atom.h.clone()), atom.offset)
                .map(BarrierExpr::leaf)
                .map_err(|e| field_err("barrier.atoms", e.to_string()))
        })
        .collect::<Result<_, _>>()?;
    let barrier = match cfg.barrier.composition {
        CompositionSpec::Single => atoms.into_iter().next().expect("validated"),
        CompositionSpec::Min => {
            BarrierExpr::min(atoms).map_err(|e| field_err("barrier", e.to_string()))?
        }
        CompositionSpec::Max => {
            BarrierExpr::max(atoms).map_err(|e| field_err("barrier", e.to_string()))?
        }
    };

    let beta = RiskLevel::new(cfg.cert.beta).map_err(|e| field_err("cert.beta", e.to_string()))?;
    let cert = BarrierCertificate::new(cfg.cert.alpha, beta)
        .map_err(|e| field_err("cert.alpha", e.to_string()))?;

    Ok(BuiltScenario {
        system,
        barrier,
        cert,
        legacy: cfg.legacy.clone(),
        x0: DVector::from_vec(cfg.x0.clone()),
    })
}

// ---------------------------------------------------------------------------
// Builtin cases
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuiltinCase {
    /// Straight path toward a wall at forward position 1: `h = 1 - c_x`.
    Case1,
    /// Angled wall: `h = c_y + k (c_x - p)` with `k = -0.5`, `p = 2`.
    Case2,
    /// Lateral corridor `min(c_y + 2, -c_y)` with a sinusoidal reference.
    Case3,
}

impl std::str::FromStr for BuiltinCase {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "case1" | "1" => Ok(BuiltinCase::Case1),
            "case2" | "2" => Ok(BuiltinCase::Case2),
            "case3" | "3" => Ok(BuiltinCase::Case3),
            other => Err(ConfigError::UnknownCase(other.to_string())),
        }
    }
}

/// Optional overrides applied on top of a builtin case's defaults.
#[derive(Debug, Clone, Default)]
pub struct ScenarioOverrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub steps: Option<usize>,
    pub num_rollouts: Option<usize>,
    pub master_seed: Option<u64>,
    pub method: Option<MethodSpec>,
    pub filter_enabled: Option<bool>,
    /// Number of disturbance samples |W|.
    pub num_disturbances: Option<usize>,
    /// Per-state-dimension half-width of the disturbance sampling box.
    pub disturbance_half_width: Option<Vec<f64>>,
    /// Scale factor on the dynamics template's barrier offset; Case 2's
    /// wall angle parameter `k` when overriding Case 2.
    pub case2_wall_slope: Option<f64>,
}

fn sample_disturbances(
    master_seed: u64,
    count: usize,
    half_widths: &[f64],
) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(master_seed, DISTURBANCE_STREAM));
    (0..count)
        .map(|_| {
            half_widths
                .iter()
                .map(|&hw| rng.random_range(-1.0..1.0) * hw)
                .collect()
        })
        .collect()
}

/// Build one of the packaged scenarios with documented defaults.
///
/// The disturbance set is drawn once here (seeded from the master seed)
/// and serialized into the config, so the returned document reproduces the
/// run exactly.
pub fn builtin_scenario(
    case: BuiltinCase,
    overrides: &ScenarioOverrides,
) -> Result<ScenarioConfig, ConfigError> {
    let axes = match case {
        BuiltinCase::Case1 => 1,
        BuiltinCase::Case2 | BuiltinCase::Case3 => 2,
    };
    let n = 2 * axes;
    let master_seed = overrides.master_seed.unwrap_or(42);

    let default_hw: Vec<f64> = (0..n)
        .map(|i| if i % 2 == 0 { 0.15 } else { 0.05 })
        .collect();
    let half_widths = overrides
        .disturbance_half_width
        .clone()
        .unwrap_or(default_hw);
    if half_widths.len() != n {
        return Err(field_err(
            "disturbance_half_width",
            format!("must have length {n}"),
        ));
    }
    let num_samples = overrides.num_disturbances.unwrap_or(16);
    if num_samples == 0 {
        return Err(field_err("num_disturbances", "must be at least 1"));
    }
    let samples = sample_disturbances(master_seed, num_samples, &half_widths);

    let template = TemplateSpec {
        axes,
        dt: 0.25,
        vel_decay: 0.2,
        input_pos_gain: 0.35,
        input_vel_gain: 1.0,
        u_lower: vec![-1.0; axes],
        u_upper: vec![1.0; axes],
    };

    let (name, barrier, legacy, x0) = match case {
        BuiltinCase::Case1 => {
            let mut h = vec![0.0; n];
            h[0] = -1.0;
            (
                "case1_forward_obstacle",
                BarrierSpec {
                    atoms: vec![BarrierAtomSpec { h, offset: 1.0 }],
                    composition: CompositionSpec::Single,
                },
                LegacySpec {
                    velocity_ref: vec![0.35],
                    gain: 1.0,
                    velocity_indices: vec![1],
                    sin_amplitude: vec![],
                    sin_period: 0.0,
                },
                vec![0.0, 0.0],
            )
        }
        BuiltinCase::Case2 => {
            let k = overrides.case2_wall_slope.unwrap_or(-0.5);
            let p = 2.0;
            // h(c_x, c_y) = c_y + k (c_x - p) = [k, 0, 1, 0] x + (-k p).
            (
                "case2_angled_wall",
                BarrierSpec {
                    atoms: vec![BarrierAtomSpec {
                        h: vec![k, 0.0, 1.0, 0.0],
                        offset: -k * p,
                    }],
                    composition: CompositionSpec::Single,
                },
                LegacySpec {
                    velocity_ref: vec![0.35, 0.0],
                    gain: 1.0,
                    velocity_indices: vec![1, 3],
                    sin_amplitude: vec![],
                    sin_period: 0.0,
                },
                vec![0.0, 0.0, 0.0, 0.0],
            )
        }
        BuiltinCase::Case3 => (
            "case3_corridor",
            BarrierSpec {
                atoms: vec![
                    BarrierAtomSpec {
                        h: vec![0.0, 0.0, 1.0, 0.0],
                        offset: 2.0,
                    },
                    BarrierAtomSpec {
                        h: vec![0.0, 0.0, -1.0, 0.0],
                        offset: 0.0,
                    },
                ],
                composition: CompositionSpec::Min,
            },
            LegacySpec {
                velocity_ref: vec![0.35, 0.0],
                gain: 1.0,
                velocity_indices: vec![1, 3],
                sin_amplitude: vec![0.0, 0.3],
                sin_period: 16.0,
            },
            vec![0.0, 0.0, -1.0, 0.0],
        ),
    };

    let cfg = ScenarioConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        name: name.to_string(),
        system: SystemSpec::Template(template),
        disturbance: DisturbanceSpec {
            samples,
            uniform: true,
            probs: None,
        },
        barrier,
        cert: CertSpec {
            alpha: overrides.alpha.unwrap_or(0.95),
            beta: overrides.beta.unwrap_or(0.1),
        },
        legacy,
        x0,
        steps: overrides.steps.unwrap_or(40),
        num_rollouts: overrides.num_rollouts.unwrap_or(100),
        master_seed,
        method: overrides.method.unwrap_or(MethodSpec::Epigraph),
        filter_enabled: overrides.filter_enabled.unwrap_or(true),
    };
    cfg.validate()?;
    Ok(cfg)
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FailedRollout {
    pub rollout: usize,
    pub error: String,
}

/// Aggregate violation statistics over a batch of rollouts.
///
/// The minimum barrier value is taken over the recorded trace states
/// (`t = 0..steps-1`). Wall-clock runtime is reported but excluded from
/// determinism comparisons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViolationReport {
    pub schema_version: u32,
    pub num_rollouts: usize,
    pub per_rollout_min_h: Vec<f64>,
    /// Rollouts whose minimum barrier value dipped below zero.
    pub violation_count: usize,
    pub violation_rate: f64,
    /// Index of the rollout with the smallest minimum barrier value.
    pub worst_rollout: usize,
    /// Mean of `|u - u_legacy|^2` over all recorded steps.
    pub mean_interference: f64,
    /// Mean one-step CVaR margin over all recorded steps.
    pub mean_margin: f64,
    /// Steps whose filter status was not `Safe` (fallbacks + failures).
    pub unsafe_status_steps: usize,
    /// Steps that ended in a solver failure.
    pub solver_failure_steps: usize,
    pub failed_rollouts: Vec<FailedRollout>,
    pub runtime_seconds: f64,
}

impl ViolationReport {
    /// Equality ignoring wall-clock runtime.
    pub fn same_results(&self, other: &Self) -> bool {
        self.schema_version == other.schema_version
            && self.num_rollouts == other.num_rollouts
            && self.per_rollout_min_h == other.per_rollout_min_h
            && self.violation_count == other.violation_count
            && self.violation_rate == other.violation_rate
            && self.worst_rollout == other.worst_rollout
            && self.mean_interference == other.mean_interference
            && self.mean_margin == other.mean_margin
            && self.unsafe_status_steps == other.unsafe_status_steps
            && self.solver_failure_steps == other.solver_failure_steps
            && self.failed_rollouts.len() == other.failed_rollouts.len()
    }
}

/// Report plus the raw traces, for writers that need both.
pub struct MonteCarloOutput {
    pub report: ViolationReport,
    /// One entry per rollout; `Err` holds the failure message.
    pub traces: Vec<Result<Vec<TraceRecord>, String>>,
}

/// Run one rollout of a built scenario at the given rollout index.
pub fn run_rollout(
    cfg: &ScenarioConfig,
    built: &BuiltScenario,
    rollout_index: usize,
) -> Result<Vec<TraceRecord>, FilterError> {
    let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(cfg.master_seed, rollout_index as u64));
    let legacy_spec = built.legacy.clone();
    if cfg.filter_enabled {
        filter_rollout(
            &built.system,
            &built.barrier,
            &built.cert,
            |x, t| legacy_control(&legacy_spec, x, t),
            &built.x0,
            cfg.steps,
            &mut rng,
            cfg.method.to_filter_method(),
            &DccpOptions::default(),
        )
    } else {
        legacy_rollout(built, cfg.steps, &mut rng)
    }
}

/// Legacy-only rollout: the law runs unfiltered (clipped to the actuator
/// bounds), with the margin still recorded for diagnosis.
fn legacy_rollout<R: Rng + ?Sized>(
    built: &BuiltScenario,
    steps: usize,
    rng: &mut R,
) -> Result<Vec<TraceRecord>, FilterError> {
    let mut records = Vec::with_capacity(steps);
    let mut x = built.x0.clone();
    for t in 0..steps {
        let u_legacy = legacy_control(&built.legacy, &x, t);
        let u = built.system.clip_control(&u_legacy);
        let h_value = built.barrier.evaluate(&x)?;
        let margin = one_step_cvar_margin(&built.barrier, &built.system, &x, &u, &built.cert)?;
        records.push(TraceRecord {
            t,
            x: x.clone(),
            u_legacy,
            u: u.clone(),
            h_value,
            margin,
            status: StepStatus::Unfiltered,
        });
        let outcome = built.system.sample_outcome(rng);
        x = built.system.step(&x, &u, outcome).map_err(|e| {
            FilterError::AtStep {
                step: t,
                source: Box::new(e.into()),
            }
        })?;
    }
    Ok(records)
}

/// Run the full batch, keeping traces.
pub fn run_monte_carlo_with_traces(cfg: &ScenarioConfig) -> Result<MonteCarloOutput, ScenarioError> {
    let start = Instant::now();
    let built = build_scenario(cfg)?;
    let mut traces: Vec<Result<Vec<TraceRecord>, String>> = Vec::with_capacity(cfg.num_rollouts);
    for rollout in 0..cfg.num_rollouts {
        traces.push(run_rollout(cfg, &built, rollout).map_err(|e| e.to_string()));
    }

    let mut per_rollout_min_h = Vec::with_capacity(cfg.num_rollouts);
    let mut violation_count = 0;
    let mut worst_rollout = 0;
    let mut worst_value = f64::INFINITY;
    let mut interference_sum = 0.0;
    let mut margin_sum = 0.0;
    let mut step_count = 0usize;
    let mut unsafe_status_steps = 0;
    let mut solver_failure_steps = 0;
    let mut failed_rollouts = Vec::new();

    for (index, trace) in traces.iter().enumerate() {
        match trace {
            Ok(records) => {
                let min_h = records
                    .iter()
                    .map(|r| r.h_value)
                    .fold(f64::INFINITY, f64::min);
                per_rollout_min_h.push(min_h);
                if min_h < 0.0 {
                    violation_count += 1;
                }
                if min_h < worst_value {
                    worst_value = min_h;
                    worst_rollout = index;
                }
                for record in records {
                    interference_sum += (&record.u - &record.u_legacy).norm_squared();
                    margin_sum += record.margin;
                    step_count += 1;
                    match record.status {
                        StepStatus::Safe | StepStatus::Unfiltered => {}
                        StepStatus::InfeasibleFallback => unsafe_status_steps += 1,
                        StepStatus::SolverFailure => {
                            unsafe_status_steps += 1;
                            solver_failure_steps += 1;
                        }
                    }
                }
            }
            Err(message) => {
                per_rollout_min_h.push(f64::NAN);
                failed_rollouts.push(FailedRollout {
                    rollout: index,
                    error: message.clone(),
                });
            }
        }
    }

    let completed = cfg.num_rollouts - failed_rollouts.len();
    let report = ViolationReport {
        schema_version: REPORT_SCHEMA_VERSION,
        num_rollouts: cfg.num_rollouts,
        per_rollout_min_h,
        violation_count,
        violation_rate: if completed > 0 {
            violation_count as f64 / completed as f64
        } else {
            0.0
        },
        worst_rollout,
        mean_interference: if step_count > 0 {
            interference_sum / step_count as f64
        } else {
            0.0
        },
        mean_margin: if step_count > 0 {
            margin_sum / step_count as f64
        } else {
            0.0
        },
        unsafe_status_steps,
        solver_failure_steps,
        failed_rollouts,
        runtime_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(MonteCarloOutput { report, traces })
}

/// Run the batch and aggregate violation statistics.
pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<ViolationReport, ScenarioError> {
    Ok(run_monte_carlo_with_traces(cfg)?.report)
}

/// One row of a beta sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BetaSweepRow {
    pub beta: f64,
    pub report: ViolationReport,
}

/// Re-run the scenario at each confidence level with identical seeds.
pub fn sweep_beta(
    cfg: &ScenarioConfig,
    betas: &[f64],
) -> Result<Vec<BetaSweepRow>, ScenarioError> {
    if betas.is_empty() {
        return Err(field_err("betas", "need at least one beta").into());
    }
    for &beta in betas {
        if !(beta > 0.0 && beta < 1.0) {
            return Err(field_err("betas", format!("beta {beta} outside (0, 1)")).into());
        }
    }
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut run_cfg = cfg.clone();
        run_cfg.cert.beta = beta;
        let report = run_monte_carlo(&run_cfg)?;
        rows.push(BetaSweepRow { beta, report });
    }
    Ok(rows)
}
