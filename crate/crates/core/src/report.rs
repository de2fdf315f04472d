//! Plain-text summaries and CSV tables of solver and stability runs.
//!
//! Numbers are written with the shortest representation that parses back to
//! the same `f64`, so the tables are lossless and byte-identical across runs
//! with identical inputs.

use std::fmt::Write as _;

use crate::solvers::SolverReport;
use crate::stability::{DecayFit, Positivity, StabilityRun};

pub const SOLVER_HEADER: &str = "stage,iter,lambda,residual,contraction";
pub const STABILITY_HEADER: &str = "step,t,l2,weighted_sup,mass,min_f,mass_fix,deviation";

/// One row per solver record.
pub fn solver_csv(report: &SolverReport) -> String {
    let mut out = String::from(SOLVER_HEADER);
    out.push('\n');
    for r in &report.records {
        let _ = writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            r.stage, r.iteration, r.lambda, r.residual, r.contraction
        );
    }
    out
}

/// One row per marched time slice.
pub fn stability_csv(run: &StabilityRun) -> String {
    let mut out = String::from(STABILITY_HEADER);
    out.push('\n');
    for r in &run.records {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            r.step, r.t, r.l2, r.weighted_sup, r.mass, r.min_f, r.mass_fix, r.deviation
        );
    }
    out
}

pub fn solver_summary(report: &SolverReport) -> String {
    let mut out = String::new();
    let outer = report.records.iter().filter(|r| r.stage == "outer").count();
    let matvecs: usize = report
        .records
        .iter()
        .filter(|r| r.stage == "gmres")
        .map(|r| r.iteration)
        .sum();
    let _ = writeln!(out, "outer iterations    {outer}");
    let _ = writeln!(out, "linear matvecs      {matvecs}");
    let _ = writeln!(out, "|f|_L2              {:.6e}", report.norm_l2);
    let _ = writeln!(out, "|w f|_inf           {:.6e}", report.norm_weighted_sup);
    let _ = writeln!(out, "|f|_L2(gamma+)      {:.6e}", report.norm_boundary);
    let _ = writeln!(out, "C_hat = |w f|/delta {:.6e}", report.c_hat);
    let _ = writeln!(out, "max slice mass      {:.3e}", report.max_slice_mass);
    let _ = writeln!(out, "max mass fix        {:.3e}", report.max_mass_fix);
    for f in &report.flags {
        let _ = writeln!(out, "flag: {f}");
    }
    out
}

pub fn stability_summary(
    run: &StabilityRun,
    fit: Option<&DecayFit>,
    positivity: Option<&Positivity>,
) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "periods             {}", run.periods);
    let _ = writeln!(out, "|w f0|_inf          {:.6e}", run.initial_weighted_sup);
    if let Some(last) = run.records.last() {
        let _ = writeln!(out, "|w f(T_end)|_inf    {:.6e}", last.weighted_sup);
    }
    let _ = writeln!(out, "max |mass|          {:.3e}", run.max_abs_mass());
    match fit {
        Some(f) => {
            let _ = writeln!(out, "lambda_1            {:.6e}", f.lambda1);
            let _ = writeln!(out, "fit R^2             {:.6}", f.r2);
            let _ = writeln!(out, "fit C               {:.4}", f.c);
        }
        None => {
            let _ = writeln!(out, "lambda_1            (no fit)");
        }
    }
    if let Some(p) = positivity {
        let _ = writeln!(
            out,
            "min F_per           {:.6e} at slice {}, x {}, node {} (|v| = {:.3}) -> {}",
            p.min,
            p.location.0,
            p.location.1,
            p.location.2,
            p.speed_at_min,
            if p.pass { "pass" } else { "FAIL" }
        );
    }
    out
}
