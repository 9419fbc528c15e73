//! Command implementations and the exit-code taxonomy.
//!
//! Exit codes: 0 success; 1 verification found a violated bound;
//! 2 config/validation error; 3 solver failure inside a rollout;
//! 4 output I/O error; 5 scenario-tree budget exceeded.

use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use cvarshield::barrier::{nested_cvar_verify, BarrierError};
use cvarshield::filter::{solve_filter, DccpOptions, FilterRequest};
use cvarshield::scenario::{
    build_scenario, legacy_control, run_monte_carlo_with_traces, sweep_beta, MethodSpec,
    ScenarioConfig,
};
use cvarshield::system::ControlVector;

use crate::output;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VERIFY_FAILED: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_SOLVER_FAILURE: u8 = 3;
pub const EXIT_IO: u8 = 4;
pub const EXIT_BUDGET: u8 = 5;

fn fail(code: u8, message: impl std::fmt::Display) -> u8 {
    eprintln!("error: {message}");
    code
}

/// Load, validate, and apply the CLI overrides to a config file.
fn load_config(
    path: &Path,
    seed: Option<u64>,
    method: Option<&str>,
) -> Result<ScenarioConfig, (u8, String)> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        (
            EXIT_VALIDATION,
            format!("config file `{}`: {e}", path.display()),
        )
    })?;
    let mut cfg = ScenarioConfig::from_json_str(&text)
        .map_err(|e| (EXIT_VALIDATION, e.to_string()))?;
    if let Some(seed) = seed {
        cfg.master_seed = seed;
    }
    if let Some(method) = method {
        cfg.method =
            MethodSpec::from_str(method).map_err(|e| (EXIT_VALIDATION, e.to_string()))?;
    }
    Ok(cfg)
}

pub fn cmd_simulate(
    config_path: &Path,
    out_dir: &Path,
    seed: Option<u64>,
    method: Option<&str>,
) -> u8 {
    let started = Instant::now();
    let cfg = match load_config(config_path, seed, method) {
        Ok(cfg) => cfg,
        Err((code, message)) => return fail(code, message),
    };
    let outcome = match run_monte_carlo_with_traces(&cfg) {
        Ok(outcome) => outcome,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let outputs = match output::write_simulation(out_dir, &cfg, &outcome) {
        Ok(outputs) => outputs,
        Err(e) => return fail(EXIT_IO, e),
    };
    if let Err(e) = output::write_manifest(
        out_dir,
        &cfg,
        "simulate",
        started.elapsed().as_secs_f64(),
        &outputs,
    ) {
        return fail(EXIT_IO, e);
    }

    let report = &outcome.report;
    println!(
        "{} rollouts, violation rate {:.4} ({} violations), worst rollout {}",
        report.num_rollouts, report.violation_rate, report.violation_count, report.worst_rollout
    );
    if !report.failed_rollouts.is_empty() || report.solver_failure_steps > 0 {
        eprintln!(
            "solver failures: {} steps, {} aborted rollouts",
            report.solver_failure_steps,
            report.failed_rollouts.len()
        );
        return EXIT_SOLVER_FAILURE;
    }
    EXIT_OK
}

pub fn cmd_verify(
    config_path: &Path,
    horizon: usize,
    seed: Option<u64>,
    method: Option<&str>,
) -> u8 {
    let cfg = match load_config(config_path, seed, method) {
        Ok(cfg) => cfg,
        Err((code, message)) => return fail(code, message),
    };
    let built = match build_scenario(&cfg) {
        Ok(built) => built,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };

    let method = cfg.method.to_filter_method();
    let filter_enabled = cfg.filter_enabled;
    let system = &built.system;
    let barrier = built.barrier.clone();
    let cert = built.cert;
    let legacy = built.legacy.clone();
    let policy = |x: &cvarshield::StateVector, t: usize| -> ControlVector {
        let u_legacy = legacy_control(&legacy, x, t);
        if !filter_enabled {
            return system.clip_control(&u_legacy);
        }
        let req = FilterRequest {
            x: x.clone(),
            u_legacy,
            barrier: barrier.clone(),
            cert,
            method,
            dccp: DccpOptions::default(),
        };
        match solve_filter(&req, system) {
            Ok(result) => result.u_star,
            // Hard errors surface through the margin table; run the
            // clipped legacy control so the tree stays well defined.
            Err(_) => system.clip_control(&legacy_control(&legacy, x, t)),
        }
    };

    let records = match nested_cvar_verify(&built.barrier, system, policy, &built.x0, &cert, horizon)
    {
        Ok(records) => records,
        Err(BarrierError::TreeBudget { required, budget }) => {
            return fail(
                EXIT_BUDGET,
                format!("scenario tree needs {required} nodes, budget is {budget}"),
            )
        }
        Err(e) => return fail(EXIT_VALIDATION, e),
    };

    println!("{:>4}  {:>18}  {:>18}  {}", "t", "nested_cvar", "bound", "ok");
    let mut all_ok = true;
    for record in &records {
        println!(
            "{:>4}  {:>18.12}  {:>18.12}  {}",
            record.t,
            record.nested_value,
            record.bound,
            if record.satisfied { "yes" } else { "NO" }
        );
        all_ok &= record.satisfied;
    }
    if all_ok {
        EXIT_OK
    } else {
        EXIT_VERIFY_FAILED
    }
}

pub fn cmd_sweep(
    config_path: &Path,
    betas_arg: &str,
    out_dir: &Path,
    seed: Option<u64>,
    method: Option<&str>,
) -> u8 {
    let started = Instant::now();
    let cfg = match load_config(config_path, seed, method) {
        Ok(cfg) => cfg,
        Err((code, message)) => return fail(code, message),
    };
    let betas: Vec<f64> = match betas_arg
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
    {
        Ok(betas) => betas,
        Err(e) => return fail(EXIT_VALIDATION, format!("invalid --betas list: {e}")),
    };
    if betas.is_empty() {
        return fail(EXIT_VALIDATION, "empty --betas list");
    }
    if let Some(bad) = betas.iter().find(|&&b| !(b > 0.0 && b < 1.0)) {
        return fail(
            EXIT_VALIDATION,
            format!("beta {bad} outside the open interval (0, 1)"),
        );
    }

    let rows = match sweep_beta(&cfg, &betas) {
        Ok(rows) => rows,
        Err(e) => return fail(EXIT_VALIDATION, e),
    };
    let outputs = match output::write_sweep(out_dir, &rows) {
        Ok(outputs) => outputs,
        Err(e) => return fail(EXIT_IO, e),
    };
    if let Err(e) = output::write_manifest(
        out_dir,
        &cfg,
        "sweep",
        started.elapsed().as_secs_f64(),
        &outputs,
    ) {
        return fail(EXIT_IO, e);
    }
    for row in &rows {
        println!(
            "beta {:>7}: rate {:.4}, mean interference {:.6}, mean margin {:.6}",
            row.beta,
            row.report.violation_rate,
            row.report.mean_interference,
            row.report.mean_margin
        );
    }
    EXIT_OK
}
