//! Dense convex quadratic programming with certified optimality.
//!
//! Solves `minimize 0.5 z' P z + q' z  subject to  A z <= b` for small
//! dense problems via operator splitting (ADMM on the constraint split,
//! with over-relaxation and residual-balancing step adaptation), followed
//! by an active-set polish solve that drives the KKT residuals to machine
//! precision. Infeasibility is decided deterministically: a Farkas-style
//! certificate is monitored during the iteration, and a phase-1 problem
//! (least-squares constraint violation) confirms the verdict and yields
//! the violation-minimizing point.
//!
//! `P` must be positive semidefinite; strict convexity is not required,
//! which matters because the CVaR epigraph programs penalize only the
//! control block of the decision vector.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Decision-vector size cap; these are desk-scale problems.
pub const MAX_VARIABLES: usize = 64;

/// Constraint-row cap.
pub const MAX_CONSTRAINTS: usize = 256;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("P must be square, got {rows}x{cols}")]
    PNotSquare { rows: usize, cols: usize },
    #[error("P must be symmetric within 1e-10, max asymmetry {asymmetry}")]
    NotSymmetric { asymmetry: f64 },
    #[error("P must be positive semidefinite, min eigenvalue {min_eigenvalue}")]
    NotPsd { min_eigenvalue: f64 },
    #[error("dimension mismatch: {what}")]
    Dimension { what: String },
    #[error("problem too large: {vars} variables / {constraints} constraints (caps {MAX_VARIABLES}/{MAX_CONSTRAINTS})")]
    TooLarge { vars: usize, constraints: usize },
    #[error("entries must be finite ({what})")]
    NonFinite { what: String },
}

/// `minimize 0.5 z' P z + q' z  subject to  A z <= b`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    p: DMatrix<f64>,
    q: DVector<f64>,
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        p: DMatrix<f64>,
        q: DVector<f64>,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, QpError> {
        if p.nrows() != p.ncols() {
            return Err(QpError::PNotSquare {
                rows: p.nrows(),
                cols: p.ncols(),
            });
        }
        let d = p.nrows();
        if q.len() != d {
            return Err(QpError::Dimension {
                what: format!("q has length {}, expected {d}", q.len()),
            });
        }
        if a.ncols() != d && a.nrows() != 0 {
            return Err(QpError::Dimension {
                what: format!("A has {} columns, expected {d}", a.ncols()),
            });
        }
        if a.nrows() != b.len() {
            return Err(QpError::Dimension {
                what: format!("A has {} rows but b has length {}", a.nrows(), b.len()),
            });
        }
        if d > MAX_VARIABLES || a.nrows() > MAX_CONSTRAINTS {
            return Err(QpError::TooLarge {
                vars: d,
                constraints: a.nrows(),
            });
        }
        let mut asymmetry = 0.0f64;
        for i in 0..d {
            for j in (i + 1)..d {
                asymmetry = asymmetry.max((p[(i, j)] - p[(j, i)]).abs());
            }
        }
        if asymmetry > 1e-10 {
            return Err(QpError::NotSymmetric { asymmetry });
        }
        for (name, ok) in [
            ("P", p.iter().all(|v| v.is_finite())),
            ("q", q.iter().all(|v| v.is_finite())),
            ("A", a.iter().all(|v| v.is_finite())),
            ("b", b.iter().all(|v| v.is_finite())),
        ] {
            if !ok {
                return Err(QpError::NonFinite { what: name.into() });
            }
        }
        Ok(Self { p, q, a, b })
    }

    pub fn num_variables(&self) -> usize {
        self.p.nrows()
    }

    pub fn num_constraints(&self) -> usize {
        self.a.nrows()
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn q(&self) -> &DVector<f64> {
        &self.q
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    /// `0.5 z' P z + q' z`.
    pub fn objective(&self, z: &DVector<f64>) -> f64 {
        0.5 * (&self.p * z).dot(z) + self.q.dot(z)
    }
}

/// Solver knobs; the defaults certify KKT residuals well below the
/// `1e-6 * (1 + |q|)` contract.
#[derive(Debug, Clone)]
pub struct QpOptions {
    pub max_iters: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Initial ADMM step; adapted by residual balancing.
    pub rho: f64,
    /// Proximal regularization on the decision block.
    pub sigma: f64,
    pub over_relaxation: f64,
    pub polish: bool,
    /// Absolute feasibility slack required to report `Optimal`.
    pub feasibility_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_iters: 10_000,
            eps_abs: 1e-7,
            eps_rel: 1e-7,
            rho: 0.1,
            sigma: 1e-6,
            over_relaxation: 1.6,
            polish: true,
            feasibility_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

/// `(stationarity, primal, complementarity)` residuals at the returned
/// point: `|Pz + q + A'y|_inf`, `max_i (A_i z - b_i)_+`, and
/// `max_i |y_i (A_i z - b_i)|`.
#[derive(Debug, Clone, Copy)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.complementarity)
    }
}

/// Why the feasible set is empty: the least-squares violation minimizer
/// and the residual violation it cannot remove.
#[derive(Debug, Clone)]
pub struct InfeasibilityCertificate {
    /// `max_i (A_i z - b_i)_+` at the violation-minimizing point.
    pub max_violation: f64,
    /// The violation-minimizing point from the phase-1 solve.
    pub witness: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub z: DVector<f64>,
    pub duals: DVector<f64>,
    pub status: QpStatus,
    pub kkt: KktResiduals,
    pub iterations: usize,
    pub infeasibility: Option<InfeasibilityCertificate>,
}

fn kkt_residuals(problem: &QpProblem, z: &DVector<f64>, y: &DVector<f64>) -> KktResiduals {
    let stationarity = (&problem.p * z + &problem.q + problem.a.transpose() * y)
        .amax_checked()
        .unwrap_or(0.0);
    let slack = &problem.a * z - &problem.b;
    let mut primal = 0.0f64;
    let mut complementarity = 0.0f64;
    for i in 0..slack.len() {
        primal = primal.max(slack[i]);
        complementarity = complementarity.max((y[i] * slack[i]).abs());
    }
    KktResiduals {
        stationarity,
        primal: primal.max(0.0),
        complementarity,
    }
}

trait AmaxChecked {
    fn amax_checked(&self) -> Option<f64>;
}

impl AmaxChecked for DVector<f64> {
    fn amax_checked(&self) -> Option<f64> {
        if self.is_empty() {
            None
        } else {
            Some(self.amax())
        }
    }
}

struct AdmmOutcome {
    x: DVector<f64>,
    y: DVector<f64>,
    iterations: usize,
    converged: bool,
    primal_infeasible: Option<DVector<f64>>,
}

/// Core ADMM loop on `min 0.5 x'Px + q'x  s.t.  Ax <= b`.
///
/// Splitting: `Ax = s`, `s <= b`; the x-update solves the cached
/// Cholesky factor of `P + sigma I + rho A'A`.
fn admm(
    p: &DMatrix<f64>,
    q: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    options: &QpOptions,
    eps_abs: f64,
    eps_rel: f64,
    max_iters: usize,
) -> AdmmOutcome {
    let d = q.len();
    let c = b.len();
    let at = a.transpose();
    let ata = &at * a;
    let alpha = options.over_relaxation;

    let mut sigma = options.sigma;
    let mut rho = options.rho;
    let factorize = |rho: f64, sigma: f64| {
        let mut k = p.clone();
        for i in 0..d {
            k[(i, i)] += sigma;
        }
        k += &ata * rho;
        k.cholesky()
    };
    let mut chol = loop {
        match factorize(rho, sigma) {
            Some(f) => break f,
            None => {
                sigma *= 10.0;
                assert!(sigma < 1.0, "regularized KKT matrix must factor");
            }
        }
    };

    let mut x = DVector::<f64>::zeros(d);
    let mut s = {
        let ax = a * &x;
        DVector::from_fn(c, |i, _| ax[i].min(b[i]))
    };
    let mut y = DVector::<f64>::zeros(c);

    let check_interval = 25;
    let mut iterations = 0;
    let mut converged = false;
    let mut primal_infeasible = None;

    for iter in 0..max_iters {
        iterations = iter + 1;
        let y_prev = y.clone();

        // x-update: (P + sigma I + rho A'A) x~ = sigma x - q + A'(rho s - y)
        let rhs = &x * sigma - q + &at * (&s * rho - &y);
        let x_tilde = chol.solve(&rhs);
        let ax_tilde = a * &x_tilde;

        // over-relaxed updates
        x = &x_tilde * alpha + &x * (1.0 - alpha);
        let w = &ax_tilde * alpha + &s * (1.0 - alpha);
        for i in 0..c {
            let v = w[i] + y[i] / rho;
            let proj = v.min(b[i]);
            y[i] = rho * (v - proj);
            s[i] = proj;
        }

        if iterations % check_interval == 0 || iterations == max_iters {
            let ax = a * &x;
            let r_prim = (&ax - &s).amax_checked().unwrap_or(0.0);
            let r_dual = (p * &x + q + &at * &y).amax_checked().unwrap_or(0.0);
            let scale_prim = ax
                .amax_checked()
                .unwrap_or(0.0)
                .max(s.amax_checked().unwrap_or(0.0));
            let scale_dual = (p * &x)
                .amax_checked()
                .unwrap_or(0.0)
                .max((&at * &y).amax_checked().unwrap_or(0.0))
                .max(q.amax_checked().unwrap_or(0.0));
            let eps_prim = eps_abs + eps_rel * scale_prim;
            let eps_dual = eps_abs + eps_rel * scale_dual;
            if r_prim <= eps_prim && r_dual <= eps_dual {
                converged = true;
                break;
            }

            // Farkas-style primal infeasibility certificate from the dual
            // increment: delta_y >= 0 with A' delta_y ~ 0 and b' delta_y < 0.
            if c > 0 {
                let delta: DVector<f64> = DVector::from_fn(c, |i, _| (y[i] - y_prev[i]).max(0.0));
                let norm = delta.amax_checked().unwrap_or(0.0);
                if norm > 1e-12 {
                    let scaled = &delta / norm;
                    let atd = (&at * &scaled).amax_checked().unwrap_or(0.0);
                    let btd = b.dot(&scaled);
                    if atd <= 1e-10 && btd < -1e-10 {
                        primal_infeasible = Some(scaled);
                        break;
                    }
                }
            }

            // Residual balancing.
            if iterations % (check_interval * 8) == 0 {
                let ratio = ((r_prim / eps_prim.max(1e-300))
                    / (r_dual / eps_dual.max(1e-300)))
                .sqrt();
                if ratio > 5.0 || ratio < 0.2 {
                    rho = (rho * ratio).clamp(1e-6, 1e6);
                    if let Some(f) = factorize(rho, sigma) {
                        chol = f;
                    }
                }
            }
        }
    }

    AdmmOutcome {
        x,
        y,
        iterations,
        converged,
        primal_infeasible,
    }
}

/// Active-set polish: re-solve the equality-constrained problem on the
/// constraints the ADMM duals mark active, with dual-sign refinement.
fn polish(
    problem: &QpProblem,
    y: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let d = problem.num_variables();
    let c = problem.num_constraints();
    let mut active: Vec<usize> = (0..c).filter(|&i| y[i] > 0.0).collect();

    for _ in 0..8 {
        let k = active.len();
        let size = d + k;
        let mut m = DMatrix::<f64>::zeros(size, size);
        m.view_mut((0, 0), (d, d)).copy_from(&problem.p);
        for (row, &ci) in active.iter().enumerate() {
            for col in 0..d {
                m[(d + row, col)] = problem.a[(ci, col)];
                m[(col, d + row)] = problem.a[(ci, col)];
            }
        }
        let mut rhs = DVector::<f64>::zeros(size);
        for i in 0..d {
            rhs[i] = -problem.q[i];
        }
        for (row, &ci) in active.iter().enumerate() {
            rhs[d + row] = problem.b[ci];
        }

        // Regularized factorization plus iterative refinement against the
        // unregularized KKT system.
        let delta = 1e-9;
        let mut m_reg = m.clone();
        for i in 0..d {
            m_reg[(i, i)] += delta;
        }
        for i in d..size {
            m_reg[(i, i)] -= delta;
        }
        let lu = m_reg.lu();
        let mut sol = lu.solve(&rhs)?;
        for _ in 0..3 {
            let residual = &rhs - &m * &sol;
            let correction = lu.solve(&residual)?;
            sol += correction;
        }

        let z = DVector::from_fn(d, |i, _| sol[i]);
        let nu: Vec<f64> = (0..active.len()).map(|i| sol[d + i]).collect();

        // Drop constraints whose multiplier came out negative and retry.
        let keep: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|&(i, _)| nu[i] > -1e-9)
            .map(|(_, &ci)| ci)
            .collect();
        if keep.len() == active.len() {
            let mut duals = DVector::<f64>::zeros(c);
            for (i, &ci) in active.iter().enumerate() {
                duals[ci] = nu[i].max(0.0);
            }
            return Some((z, duals));
        }
        active = keep;
    }
    None
}

/// Phase-1: `min 0.5 |t|^2  s.t.  A z - t <= b, t >= 0`, returning the
/// violation-minimizing `z` and its residual violation.
fn phase1(problem: &QpProblem, options: &QpOptions) -> (DVector<f64>, f64) {
    let d = problem.num_variables();
    let c = problem.num_constraints();
    let vars = d + c;
    let mut p1 = DMatrix::<f64>::zeros(vars, vars);
    for i in 0..c {
        p1[(d + i, d + i)] = 1.0;
    }
    let q1 = DVector::<f64>::zeros(vars);
    let mut a1 = DMatrix::<f64>::zeros(2 * c, vars);
    let mut b1 = DVector::<f64>::zeros(2 * c);
    for i in 0..c {
        for j in 0..d {
            a1[(i, j)] = problem.a[(i, j)];
        }
        a1[(i, d + i)] = -1.0;
        b1[i] = problem.b[i];
        a1[(c + i, d + i)] = -1.0;
        b1[c + i] = 0.0;
    }
    let outcome = admm(
        &p1,
        &q1,
        &a1,
        &b1,
        options,
        options.eps_abs.max(1e-9),
        options.eps_rel.max(1e-9),
        options.max_iters.max(20_000),
    );
    let z = DVector::from_fn(d, |i, _| outcome.x[i]);
    let violation = (&problem.a * &z - &problem.b)
        .iter()
        .fold(0.0f64, |acc, &v| acc.max(v));
    (z, violation.max(0.0))
}

/// Solve the program with default options.
pub fn solve_qp_default(problem: &QpProblem) -> Result<QpSolution, QpError> {
    solve_qp(problem, &QpOptions::default())
}

/// Solve `min 0.5 z'Pz + q'z  s.t.  Az <= b`.
///
/// `Optimal` guarantees the returned point is feasible within
/// `feasibility_tol` and all three KKT residuals are below
/// `1e-6 * (1 + |q|)`. `Infeasible` carries the violation-minimizing
/// witness. `IterLimit` returns the best iterate with honest residuals.
pub fn solve_qp(problem: &QpProblem, options: &QpOptions) -> Result<QpSolution, QpError> {
    let c = problem.num_constraints();

    // PSD gate.
    let sym = (problem.p.clone() + problem.p.transpose()) * 0.5;
    let eigen = sym.symmetric_eigen();
    let min_eigenvalue = eigen.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min_eigenvalue < -1e-8 {
        return Err(QpError::NotPsd { min_eigenvalue });
    }

    let certify_tol = 1e-6 * (1.0 + problem.q.norm());

    // Unconstrained: solve the normal equations directly.
    if c == 0 {
        let z = solve_psd_least_squares(&problem.p, &-&problem.q);
        let duals = DVector::zeros(0);
        let kkt = kkt_residuals(problem, &z, &duals);
        let status = if kkt.max() <= certify_tol {
            QpStatus::Optimal
        } else {
            QpStatus::IterLimit
        };
        return Ok(QpSolution {
            z,
            duals,
            status,
            kkt,
            iterations: 0,
            infeasibility: None,
        });
    }

    let mut total_iterations = 0;
    let mut best: Option<(DVector<f64>, DVector<f64>, KktResiduals)> = None;
    let mut infeasibility_hint = false;

    for (eps_abs, eps_rel, budget_frac) in [
        (options.eps_abs, options.eps_rel, 0.5),
        (options.eps_abs * 1e-2, options.eps_rel * 1e-2, 1.0),
    ] {
        let budget = ((options.max_iters as f64 * budget_frac) as usize)
            .saturating_sub(total_iterations)
            .max(100);
        let outcome = admm(
            &problem.p,
            &problem.q,
            &problem.a,
            &problem.b,
            options,
            eps_abs,
            eps_rel,
            budget,
        );
        total_iterations += outcome.iterations;

        if outcome.primal_infeasible.is_some() {
            infeasibility_hint = true;
            break;
        }

        let mut z = outcome.x;
        let mut y = outcome.y;
        if options.polish {
            if let Some((pz, py)) = polish(problem, &y) {
                let polished = kkt_residuals(problem, &pz, &py);
                let raw = kkt_residuals(problem, &z, &y);
                if polished.max() <= raw.max() {
                    z = pz;
                    y = py;
                }
            }
        }
        let kkt = kkt_residuals(problem, &z, &y);
        let better = match &best {
            Some((_, _, prev)) => kkt.max() < prev.max(),
            None => true,
        };
        if better {
            best = Some((z, y, kkt));
        }
        let current = &best.as_ref().expect("just set").2;
        if current.stationarity <= certify_tol
            && current.complementarity <= certify_tol
            && current.primal <= options.feasibility_tol
        {
            let (z, y, kkt) = best.expect("just set");
            return Ok(QpSolution {
                z,
                duals: y,
                status: QpStatus::Optimal,
                kkt,
                iterations: total_iterations,
                infeasibility: None,
            });
        }
        if !outcome.converged {
            break;
        }
    }

    // Not certified: decide feasibility deterministically via phase-1.
    let (witness, violation) = phase1(problem, options);
    let infeasible_tol = 1e-7 * (1.0 + problem.b.amax_checked().unwrap_or(0.0));
    if violation > infeasible_tol {
        let duals = DVector::zeros(c);
        let kkt = kkt_residuals(problem, &witness, &duals);
        return Ok(QpSolution {
            z: witness.clone(),
            duals,
            status: QpStatus::Infeasible,
            kkt,
            iterations: total_iterations,
            infeasibility: Some(InfeasibilityCertificate {
                max_violation: violation,
                witness,
            }),
        });
    }

    // Feasible but not certified within the budget.
    let (z, y, kkt) = best.unwrap_or_else(|| {
        let duals = DVector::zeros(c);
        let kkt = kkt_residuals(problem, &witness, &duals);
        (witness.clone(), duals, kkt)
    });
    let status = if !infeasibility_hint
        && kkt.stationarity <= certify_tol
        && kkt.complementarity <= certify_tol
        && kkt.primal <= options.feasibility_tol
    {
        QpStatus::Optimal
    } else {
        QpStatus::IterLimit
    };
    Ok(QpSolution {
        z,
        duals: y,
        status,
        kkt,
        iterations: total_iterations,
        infeasibility: None,
    })
}

/// Minimum-norm solution of `P z = rhs` for symmetric PSD `P`.
fn solve_psd_least_squares(p: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    if p.nrows() == 0 {
        return DVector::zeros(0);
    }
    let eigen = p.clone().symmetric_eigen();
    let scale = eigen.eigenvalues.amax().max(1.0);
    let mut coeffs = eigen.eigenvectors.transpose() * rhs;
    for i in 0..coeffs.len() {
        let lambda = eigen.eigenvalues[i];
        coeffs[i] = if lambda.abs() > 1e-12 * scale {
            coeffs[i] / lambda
        } else {
            0.0
        };
    }
    &eigen.eigenvectors * coeffs
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scalar_problem(p: f64, q: f64, rows: &[(f64, f64)]) -> QpProblem {
        let c = rows.len();
        let a = DMatrix::from_fn(c, 1, |i, _| rows[i].0);
        let b = DVector::from_fn(c, |i, _| rows[i].1);
        QpProblem::new(
            DMatrix::from_element(1, 1, p),
            DVector::from_element(1, q),
            a,
            b,
        )
        .unwrap()
    }

    #[test]
    fn unconstrained_minimum_is_zero() {
        let problem = QpProblem::new(
            DMatrix::identity(3, 3) * 2.0,
            DVector::zeros(3),
            DMatrix::zeros(0, 3),
            DVector::zeros(0),
        )
        .unwrap();
        let sol = solve_qp_default(&problem).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!(sol.z.amax() < 1e-10);
    }

    #[test]
    fn scalar_projection_instance() {
        // minimize (z - 0.6)^2 s.t. z <= -0.05, -1 <= z <= 1.
        let problem = scalar_problem(
            2.0,
            -1.2,
            &[(1.0, -0.05), (1.0, 1.0), (-1.0, 1.0)],
        );
        let sol = solve_qp_default(&problem).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], -0.05, epsilon = 1e-8);
        assert!(sol.kkt.max() <= 1e-6 * (1.0 + problem.q().norm()));
    }

    #[test]
    fn empty_feasible_set_is_flagged() {
        // z <= -1 and z >= 0.
        let problem = scalar_problem(2.0, 0.0, &[(1.0, -1.0), (-1.0, 0.0)]);
        let sol = solve_qp_default(&problem).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        let cert = sol.infeasibility.expect("certificate");
        assert!(cert.max_violation > 0.4, "violation {}", cert.max_violation);
    }

    #[test]
    fn duals_certify_active_constraint() {
        // minimize z^2 s.t. z >= 1 (as -z <= -1): z* = 1, dual = 2.
        let problem = scalar_problem(2.0, 0.0, &[(-1.0, -1.0)]);
        let sol = solve_qp_default(&problem).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(sol.duals[0], 2.0, epsilon = 1e-6);
        assert!(sol.duals[0] >= 0.0);
    }

    #[test]
    fn scaling_p_and_q_preserves_minimizer() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, -1.0, 0.0]);
        let b = DVector::from_vec(vec![1.0, 0.0]);
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.4, 0.4, 1.0]);
        let q = DVector::from_vec(vec![-1.0, -2.0]);
        let base = QpProblem::new(p.clone(), q.clone(), a.clone(), b.clone()).unwrap();
        let scaled = QpProblem::new(p * 7.5, q * 7.5, a, b).unwrap();
        let z0 = solve_qp_default(&base).unwrap().z;
        let z1 = solve_qp_default(&scaled).unwrap().z;
        assert!((z0 - z1).amax() < 1e-8);
    }

    #[test]
    fn non_psd_p_is_an_input_error() {
        let problem = QpProblem::new(
            DMatrix::from_element(1, 1, -1.0),
            DVector::zeros(1),
            DMatrix::zeros(0, 1),
            DVector::zeros(0),
        )
        .unwrap();
        assert!(matches!(
            solve_qp_default(&problem),
            Err(QpError::NotPsd { .. })
        ));
    }

    #[test]
    fn constructor_rejects_asymmetric_p() {
        let p = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            QpProblem::new(p, DVector::zeros(2), DMatrix::zeros(0, 2), DVector::zeros(0)),
            Err(QpError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn constructor_rejects_size_caps() {
        let d = MAX_VARIABLES + 1;
        assert!(matches!(
            QpProblem::new(
                DMatrix::identity(d, d),
                DVector::zeros(d),
                DMatrix::zeros(0, d),
                DVector::zeros(0)
            ),
            Err(QpError::TooLarge { .. })
        ));
    }

    #[test]
    fn psd_with_null_space_objective_only_on_some_coordinates() {
        // Objective touches z0 only; z1 constrained to [2, 3].
        let p = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
        let q = DVector::from_vec(vec![-2.0, 0.0]);
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, -1.0]);
        let b = DVector::from_vec(vec![3.0, -2.0]);
        let problem = QpProblem::new(p, q, a, b).unwrap();
        let sol = solve_qp_default(&problem).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_abs_diff_eq!(sol.z[0], 1.0, epsilon = 1e-7);
        assert!(sol.z[1] >= 2.0 - 1e-8 && sol.z[1] <= 3.0 + 1e-8);
    }
}
