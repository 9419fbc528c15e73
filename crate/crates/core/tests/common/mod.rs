//! Shared oracles and instance generators for the integration suites.
//!
//! Everything in here is deliberately independent of the implementation
//! paths it is used to check: CVaR is evaluated by enumerating the
//! variational objective over atom values, quadratic programs by
//! enumerating active-set candidates, and filter instances by exact
//! minimization over a fixed control lattice.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use cvarshield::barrier::{BarrierCertificate, BarrierExpr, LinearBarrier};
use cvarshield::risk::RiskLevel;
use cvarshield::system::{ControlVector, LinearStochasticSystem, Outcome, StateVector};

// ---------------------------------------------------------------------------
// CVaR oracles
// ---------------------------------------------------------------------------

/// Lower-tail CVaR by enumerating `z - E[(z - h)_+] / beta` over the atom
/// values and taking the maximum (the supremum of this concave
/// piecewise-linear function is attained at an atom).
pub fn cvar_lower_variational(values: &[f64], probs: &[f64], beta: f64) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for &zeta in values {
        let mut objective = zeta;
        for (&v, &p) in values.iter().zip(probs) {
            let shortfall = zeta - v;
            if shortfall > 0.0 {
                objective -= p * shortfall / beta;
            }
        }
        best = best.max(objective);
    }
    best
}

/// The literal variational CVaR by sorting: the average of the largest
/// `beta` probability mass with the boundary atom split fractionally.
pub fn cvar_upper_sorted(values: &[f64], probs: &[f64], beta: f64) -> f64 {
    let mut atoms: Vec<(f64, f64)> = values.iter().copied().zip(probs.iter().copied()).collect();
    atoms.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
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
    weighted / cumulative
}

// ---------------------------------------------------------------------------
// Random generators
// ---------------------------------------------------------------------------

/// Random probability simplex of the given size.
pub fn random_simplex(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    let mut probs: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= sum;
    }
    // Remove the normalization rounding from the final component.
    let head: f64 = probs[..len - 1].iter().sum();
    probs[len - 1] = 1.0 - head;
    probs
}

/// Random atom list: up to `max_atoms` values in [-10, 10].
pub fn random_distribution(rng: &mut ChaCha8Rng, max_atoms: usize) -> (Vec<f64>, Vec<f64>) {
    let len = rng.random_range(1..=max_atoms);
    let values: Vec<f64> = (0..len).map(|_| rng.random_range(-10.0..10.0)).collect();
    let probs = random_simplex(rng, len);
    (values, probs)
}

/// A random filter instance with a guaranteed strictly feasible interior
/// control, suitable for lattice-oracle comparison.
pub struct FilterInstance {
    pub sys: LinearStochasticSystem,
    pub barrier: BarrierExpr,
    pub atom: LinearBarrier,
    pub cert: BarrierCertificate,
    pub x: StateVector,
    pub u_legacy: ControlVector,
    /// A control with one-step margin at least 0.3.
    pub u_interior: ControlVector,
}

/// Margin of the one-step condition computed from raw instance data with
/// the variational CVaR oracle (no barrier-module code).
pub fn oracle_margin(inst: &FilterInstance, u: &ControlVector) -> f64 {
    let values: Vec<f64> = inst
        .sys
        .outcomes()
        .iter()
        .map(|o| {
            let successor = &o.a * &inst.x + &o.b * u + &o.g;
            inst.atom.row().dot(&successor) + inst.atom.offset()
        })
        .collect();
    let cvar = cvar_lower_variational(&values, inst.sys.probs(), inst.cert.beta().beta());
    cvar - inst.cert.alpha() * (inst.atom.row().dot(&inst.x) + inst.atom.offset())
}

pub fn random_filter_instance(rng: &mut ChaCha8Rng) -> FilterInstance {
    let n = rng.random_range(1..=4);
    let m = rng.random_range(1..=2);
    let w = rng.random_range(1..=5);

    let outcomes: Vec<Outcome> = (0..w)
        .map(|_| {
            Outcome::new(
                DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.8..0.8)),
                DMatrix::from_fn(n, m, |_, _| rng.random_range(-0.4..0.4)),
                DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3)),
            )
        })
        .collect();
    let probs = random_simplex(rng, w);
    let sys = LinearStochasticSystem::new(
        outcomes,
        probs,
        DVector::from_element(m, -1.0),
        DVector::from_element(m, 1.0),
    )
    .unwrap();

    // Unit-norm barrier row, offset fixed below.
    let mut row = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0f64));
    if row.norm() < 1e-3 {
        row[0] = 1.0;
    }
    row /= row.norm();

    let alpha = rng.random_range(0.5..0.95);
    let beta = rng.random_range(0.2..0.95);
    let cert = BarrierCertificate::new(alpha, RiskLevel::new(beta).unwrap()).unwrap();
    let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let u_interior = DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));

    // Shift the offset so the interior control has margin exactly 0.3:
    // the margin is affine in the offset with slope (1 - alpha).
    let probe = LinearBarrier::new(row.clone(), 0.0).unwrap();
    let mut inst = FilterInstance {
        sys,
        barrier: BarrierExpr::leaf(probe.clone()),
        atom: probe,
        cert,
        x,
        u_legacy: DVector::zeros(m),
        u_interior,
    };
    let margin0 = oracle_margin(&inst, &inst.u_interior.clone());
    let offset = (0.3 - margin0) / (1.0 - alpha);
    let atom = LinearBarrier::new(row, offset).unwrap();
    inst.atom = atom.clone();
    inst.barrier = BarrierExpr::leaf(atom);

    let u_legacy = DVector::from_fn(m, |j, _| {
        (inst.u_interior[j] + rng.random_range(-0.6..0.6f64)).clamp(-1.0, 1.0)
    });
    inst.u_legacy = u_legacy;
    inst
}

// ---------------------------------------------------------------------------
// QP brute-force oracle
// ---------------------------------------------------------------------------

/// Exact optimum of a strictly convex QP by enumerating every active-set
/// candidate: for each subset S of constraints, solve the equality KKT
/// system, keep primal-feasible candidates, and take the best objective.
/// Returns `None` when no candidate is feasible (the problem is
/// infeasible). Valid because the true optimum solves the KKT system of
/// some linearly independent subset of its active constraints.
pub fn qp_bruteforce(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Option<f64> {
    let d = q.len();
    let c = b.len();
    assert!(c <= 16, "subset enumeration is exponential in c");
    let feas_tol = 1e-7;
    let mut best: Option<f64> = None;

    for mask in 0u32..(1 << c) {
        let rows: Vec<usize> = (0..c).filter(|&i| mask & (1 << i) != 0).collect();
        if rows.len() > d {
            continue;
        }
        let k = rows.len();
        let size = d + k;
        let mut kkt = DMatrix::<f64>::zeros(size, size);
        kkt.view_mut((0, 0), (d, d)).copy_from(p);
        for (r, &ci) in rows.iter().enumerate() {
            for col in 0..d {
                kkt[(d + r, col)] = a[(ci, col)];
                kkt[(col, d + r)] = a[(ci, col)];
            }
        }
        let mut rhs = DVector::<f64>::zeros(size);
        for i in 0..d {
            rhs[i] = -q[i];
        }
        for (r, &ci) in rows.iter().enumerate() {
            rhs[d + r] = b[ci];
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let z = DVector::from_fn(d, |i, _| sol[i]);
        let violation = (a * &z - b).iter().fold(0.0f64, |acc, &v| acc.max(v));
        if violation > feas_tol {
            continue;
        }
        let objective = 0.5 * (p * &z).dot(&z) + q.dot(&z);
        best = Some(match best {
            Some(prev) => prev.min(objective),
            None => objective,
        });
    }
    best
}

// ---------------------------------------------------------------------------
// Control-lattice oracle for the filter
// ---------------------------------------------------------------------------

pub const GRID_STEP: f64 = 1e-4;

/// Minimum of `|u - u_legacy|^2` over the 1e-4 control lattice restricted
/// to lattice points whose oracle margin is nonnegative. Exact lattice
/// semantics; the two-dimensional case exploits concavity of the margin
/// along each column to avoid enumerating the full plane.
pub fn lattice_filter_objective(inst: &FilterInstance) -> Option<f64> {
    let m = inst.sys.control_dim();
    match m {
        1 => lattice_1d(inst),
        2 => lattice_2d(inst),
        _ => panic!("lattice oracle supports m <= 2"),
    }
}

fn axis_points(lo: f64, hi: f64) -> Vec<f64> {
    let count = ((hi - lo) / GRID_STEP).round() as usize;
    (0..=count).map(|i| lo + i as f64 * GRID_STEP).collect()
}

fn lattice_1d(inst: &FilterInstance) -> Option<f64> {
    let lo = inst.sys.u_lower()[0];
    let hi = inst.sys.u_upper()[0];
    let mut best: Option<f64> = None;
    for u0 in axis_points(lo, hi) {
        let u = DVector::from_element(1, u0);
        if oracle_margin(inst, &u) >= 0.0 {
            let objective = (u0 - inst.u_legacy[0]).powi(2);
            best = Some(best.map_or(objective, |b: f64| b.min(objective)));
        }
    }
    best
}

fn lattice_2d(inst: &FilterInstance) -> Option<f64> {
    let lo0 = inst.sys.u_lower()[0];
    let hi0 = inst.sys.u_upper()[0];
    let lo1 = inst.sys.u_lower()[1];
    let hi1 = inst.sys.u_upper()[1];
    let col = axis_points(lo1, hi1);
    let n1 = col.len();
    let mut best: Option<f64> = None;

    for u0 in axis_points(lo0, hi0) {
        let margin_at = |idx: usize| -> f64 {
            let u = DVector::from_vec(vec![u0, col[idx]]);
            oracle_margin(inst, &u)
        };

        // The margin is concave along the column: locate its lattice
        // maximum by binary search on the ascent predicate.
        let mut lo = 0usize;
        let mut hi = n1 - 1;
        while lo < hi {
            let mid = (lo + hi) / 2;
            if margin_at(mid) < margin_at(mid + 1) {
                lo = mid + 1;
            } else {
                hi = mid;
            }
        }
        let peak = lo;
        if margin_at(peak) < 0.0 {
            continue;
        }

        // Feasible indices form a contiguous interval around the peak.
        let first = {
            let (mut a, mut b) = (0usize, peak);
            while a < b {
                let mid = (a + b) / 2;
                if margin_at(mid) >= 0.0 {
                    b = mid;
                } else {
                    a = mid + 1;
                }
            }
            a
        };
        let last = {
            let (mut a, mut b) = (peak, n1 - 1);
            while a < b {
                let mid = (a + b).div_ceil(2);
                if margin_at(mid) >= 0.0 {
                    a = mid;
                } else {
                    b = mid - 1;
                }
            }
            a
        };

        // Best lattice u1 inside [first, last] for the quadratic objective.
        let target = ((inst.u_legacy[1] - lo1) / GRID_STEP).round();
        let idx = (target.max(first as f64).min(last as f64)) as usize;
        let objective =
            (u0 - inst.u_legacy[0]).powi(2) + (col[idx] - inst.u_legacy[1]).powi(2);
        best = Some(best.map_or(objective, |b: f64| b.min(objective)));
    }
    best
}

// ---------------------------------------------------------------------------
// Scenario-tree margin walk
// ---------------------------------------------------------------------------

/// Minimum one-step margin over every node of the exhaustive disturbance
/// tree up to `depth`, with controls supplied by `policy`. Also reports
/// whether every filter invocation would have been needed (the walk itself
/// uses the provided margins).
pub fn tree_min_margin<F>(
    sys: &LinearStochasticSystem,
    barrier: &BarrierExpr,
    cert: &BarrierCertificate,
    mut policy: F,
    x0: &StateVector,
    depth: usize,
) -> f64
where
    F: FnMut(&StateVector, usize) -> ControlVector,
{
    let mut level = vec![x0.clone()];
    let mut min_margin = f64::INFINITY;
    for d in 0..depth {
        let mut next = Vec::with_capacity(level.len() * sys.num_outcomes());
        for x in &level {
            let u = policy(x, d);
            let margin =
                cvarshield::barrier::one_step_cvar_margin(barrier, sys, x, &u, cert).unwrap();
            min_margin = min_margin.min(margin);
            for i in 0..sys.num_outcomes() {
                next.push(sys.step(x, &u, i).unwrap());
            }
        }
        level = next;
    }
    min_margin
}
