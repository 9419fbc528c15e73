//! Randomized invariants of the safety filter beyond the acceptance gate.

mod common;

use common::*;
use cvarshield::filter::{
    solve_filter, DccpOptions, FilterMethod, FilterRequest, FilterStatus, SAFE_MARGIN_TOL,
};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn request(inst: &FilterInstance, method: FilterMethod) -> FilterRequest {
    FilterRequest {
        x: inst.x.clone(),
        u_legacy: inst.u_legacy.clone(),
        barrier: inst.barrier.clone(),
        cert: inst.cert,
        method,
        dccp: DccpOptions::default(),
    }
}

#[test]
fn safe_status_is_backed_by_an_independent_margin_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x61);
    for _ in 0..200 {
        let inst = random_filter_instance(&mut rng);
        let result = solve_filter(&request(&inst, FilterMethod::EpigraphExact), &inst.sys)
            .unwrap();
        // Oracle margin at the returned control, computed from raw data.
        let margin = oracle_margin(&inst, &result.u_star);
        match result.status {
            FilterStatus::Safe => {
                assert!(margin >= -SAFE_MARGIN_TOL - 1e-9, "margin {margin:.3e}");
                for j in 0..inst.sys.control_dim() {
                    assert!(result.u_star[j] >= inst.sys.u_lower()[j] - 1e-12);
                    assert!(result.u_star[j] <= inst.sys.u_upper()[j] + 1e-12);
                }
            }
            FilterStatus::InfeasibleFallback => {
                assert!(result.margin < 0.0, "fallback must report a negative margin");
            }
            FilterStatus::SolverFailure => {}
        }
        assert!(result.objective >= 0.0);
    }
}

#[test]
fn constrained_instances_pay_at_least_the_lattice_objective() {
    // One-sided check on plain random instances (no interior-ball
    // construction): any lattice-feasible point bounds the exact optimum
    // from above.
    let mut rng = ChaCha8Rng::seed_from_u64(0x62);
    let mut active = 0;
    for _ in 0..100 {
        let inst = random_filter_instance(&mut rng);
        let result = solve_filter(&request(&inst, FilterMethod::EpigraphExact), &inst.sys)
            .unwrap();
        if result.status != FilterStatus::Safe {
            continue;
        }
        if result.objective > 1e-9 {
            active += 1;
        }
        if let Some(lattice) = lattice_filter_objective(&inst) {
            assert!(result.objective <= lattice + 1e-9);
        }
    }
    assert!(active >= 10, "generator produced too few binding instances");
}

#[test]
fn dccp_matches_exact_method_when_it_lands_in_the_safe_set() {
    // The two routes enforce different tail conventions; whenever the
    // convex-concave result happens to satisfy the lower-tail condition,
    // it cannot beat the exact projection.
    let mut rng = ChaCha8Rng::seed_from_u64(0x63);
    let mut comparable = 0;
    for _ in 0..100 {
        let inst = random_filter_instance(&mut rng);
        let exact = solve_filter(&request(&inst, FilterMethod::EpigraphExact), &inst.sys)
            .unwrap();
        let dccp = solve_filter(&request(&inst, FilterMethod::PaperDccp), &inst.sys).unwrap();
        if exact.status != FilterStatus::Safe {
            continue;
        }
        if dccp.margin >= -1e-6 {
            comparable += 1;
            assert!(
                dccp.objective >= exact.objective - 1e-6,
                "dccp {} beat exact {} with margin {}",
                dccp.objective,
                exact.objective,
                dccp.margin
            );
        }
    }
    assert!(comparable >= 20, "too few comparable instances: {comparable}");
}

#[test]
fn feasible_set_is_nested_in_beta() {
    // Smaller beta averages a thinner, worse tail: any control feasible
    // at beta1 stays feasible at beta2 >= beta1, so the projection
    // objective is non-increasing in beta.
    let mut rng = ChaCha8Rng::seed_from_u64(0x64);
    for _ in 0..50 {
        let inst = random_filter_instance(&mut rng);
        let mut last = f64::INFINITY;
        for beta in [0.05, 0.1, 0.3, 0.7, 0.999] {
            let cert = cvarshield::barrier::BarrierCertificate::new(
                inst.cert.alpha(),
                cvarshield::risk::RiskLevel::new(beta).unwrap(),
            )
            .unwrap();
            let req = FilterRequest {
                cert,
                ..request(&inst, FilterMethod::EpigraphExact)
            };
            let result = solve_filter(&req, &inst.sys).unwrap();
            if result.status == FilterStatus::Safe {
                assert!(
                    result.objective <= last + 1e-6,
                    "objective grew from {last} to {} at beta {beta}",
                    result.objective
                );
                last = result.objective;
            }
        }
    }
}

#[test]
fn fallback_control_minimizes_violation_on_the_scalar_instance() {
    // Tight bounds force infeasibility; the fallback is the violation
    // minimizer clipped to bounds, which lands on the lower bound here.
    let mut rng = ChaCha8Rng::seed_from_u64(0x65);
    for _ in 0..25 {
        let lo = rng.random_range(0.0..0.05);
        let sys = cvarshield::system::LinearStochasticSystem::new(
            [-0.1, 0.0, 0.1]
                .iter()
                .map(|&g| {
                    cvarshield::system::Outcome::new(
                        nalgebra::DMatrix::from_element(1, 1, 1.0),
                        nalgebra::DMatrix::from_element(1, 1, 1.0),
                        DVector::from_element(1, g),
                    )
                })
                .collect(),
            vec![1.0 / 3.0; 3],
            DVector::from_element(1, lo),
            DVector::from_element(1, lo + 0.1),
        )
        .unwrap();
        let req = FilterRequest {
            x: DVector::from_element(1, 0.5),
            u_legacy: DVector::from_element(1, 0.6),
            barrier: cvarshield::barrier::BarrierExpr::leaf(
                cvarshield::barrier::LinearBarrier::new(DVector::from_element(1, -1.0), 1.0)
                    .unwrap(),
            ),
            cert: cvarshield::barrier::BarrierCertificate::new(
                0.9,
                cvarshield::risk::RiskLevel::new(1.0 / 3.0).unwrap(),
            )
            .unwrap(),
            method: FilterMethod::EpigraphExact,
            dccp: DccpOptions::default(),
        };
        let result = solve_filter(&req, &sys).unwrap();
        assert_eq!(result.status, FilterStatus::InfeasibleFallback);
        assert!(
            (result.u_star[0] - lo).abs() <= 1e-4,
            "fallback {} should sit at the lower bound {lo}",
            result.u_star[0]
        );
        assert!(result.margin < 0.0);
    }
}
