//! The time march, the decay fit and the positivity and mass diagnostics.

use kinetics_core::error::KineticsError;
use kinetics_core::grid::{DistributionField, Symmetry, WeightFunction};
use kinetics_core::solvers::{nonlinear_periodic_solve, GridSpec, SolverContext, SolverSettings};
use kinetics_core::stability::{
    decay_rate_fit, fit_exponential, ibvp_march, initial_perturbation, mass_conservation_check,
    mass_drift, positivity_check, MarchMode, StabilityRun, StabilitySettings, StepRecord,
};
use kinetics_core::wall::WallMotion;

fn context(delta: f64) -> SolverContext {
    let grid = GridSpec {
        v_max: 4.8,
        n_v: 8,
        n_x: 8,
        n_t: 8,
        symmetry: Symmetry::Mirror,
    };
    let wall = WallMotion::sine(delta, 1.0).unwrap();
    SolverContext::new(
        &wall,
        &grid,
        WeightFunction::new(3.5, 0.5).unwrap(),
        SolverSettings::default(),
    )
    .unwrap()
}

fn synthetic_run(periods: usize, n_t: usize, norm: impl Fn(f64) -> f64) -> StabilityRun {
    let dt = 0.1;
    let records: Vec<StepRecord> = (0..=periods * n_t)
        .map(|step| {
            let t = step as f64 * dt;
            StepRecord {
                step,
                t,
                l2: norm(t),
                weighted_sup: norm(t),
                mass: 0.0,
                min_f: 0.0,
                mass_fix: 0.0,
                deviation: norm(t),
            }
        })
        .collect();
    StabilityRun {
        initial_weighted_sup: records[0].weighted_sup,
        records,
        n_t,
        periods,
        final_slice: Vec::new(),
    }
}

#[test]
fn exponential_fit_recovers_rate() {
    let t: Vec<f64> = (0..40).map(|i| 0.25 * i as f64).collect();
    let y: Vec<f64> = t.iter().map(|t| 3.0 * (-1.7 * t).exp()).collect();
    let (lam, a, r2) = fit_exponential(&t, &y).unwrap();
    assert!((lam - 1.7).abs() < 1e-12 && (a - 3f64.ln()).abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    assert!(fit_exponential(&t[..2], &y[..2]).is_err());
    let mut bad = y.clone();
    bad[3] = 0.0;
    assert!(matches!(
        fit_exponential(&t, &bad),
        Err(KineticsError::FitRejected(_))
    ));
}

#[test]
fn decay_fit_uses_the_tail_and_rejects_short_runs() {
    let run = synthetic_run(10, 8, |t| 0.4 * (-0.8 * t).exp());
    let fit = decay_rate_fit(&run).unwrap();
    assert!((fit.lambda1 - 0.8).abs() < 1e-10 && (fit.r2 - 1.0).abs() < 1e-10);
    assert!((fit.c - 1.0).abs() < 1e-10);
    assert!((fit.tail_start - 4.0).abs() < 1e-12);

    let short = synthetic_run(4, 8, |t| (-t).exp());
    assert!(matches!(
        decay_rate_fit(&short),
        Err(KineticsError::FitRejected(_))
    ));
    let flat = synthetic_run(10, 8, |t| 1.0 + 0.1 * (6.0 * t).sin());
    assert!(matches!(
        decay_rate_fit(&flat),
        Err(KineticsError::FitRejected(_))
    ));
}

#[test]
fn zero_perturbation_stays_zero() {
    let ctx = context(0.0);
    let (sol, _) = nonlinear_periodic_solve(&ctx).unwrap();
    let f0 = vec![0.0; ctx.st.n_x() * ctx.space.len()];
    let mode = MarchMode::Perturbation {
        periodic: &sol,
        zero_mass: true,
    };
    let run = ibvp_march(&ctx, mode, &f0, 2, &StabilitySettings::default()).unwrap();
    assert_eq!(run.records.len(), 2 * ctx.st.n_t() + 1);
    assert!(run.max_weighted_sup() <= 1e-7);
    assert!(matches!(
        ibvp_march(&ctx, mode, &f0[1..], 1, &StabilitySettings::default()),
        Err(KineticsError::GridMismatch(_))
    ));
}

#[test]
fn initial_perturbation_is_scaled_massless_and_seeded() {
    let ctx = context(0.02);
    let a = initial_perturbation(&ctx, 0.3, 5);
    let b = initial_perturbation(&ctx, 0.3, 5);
    let c = initial_perturbation(&ctx, 0.3, 6);
    assert_eq!(a, b);
    assert_ne!(a, c);
    let nv = ctx.space.len();
    let sup = a
        .chunks(nv)
        .flat_map(|row| row.iter().zip(ctx.weight()).map(|(x, w)| (x * w).abs()))
        .fold(0.0, f64::max);
    assert!((sup - 0.3).abs() < 1e-12);
    let sm = ctx.space.sqrt_mu();
    for row in a.chunks(nv) {
        let m: f64 = row
            .iter()
            .zip(sm)
            .zip(ctx.space.weights())
            .map(|((x, s), w)| x * s * w)
            .sum();
        assert!(m.abs() < 1e-12, "row mass {m:e}");
    }
}

#[test]
fn perturbation_decays_without_mass() {
    let ctx = context(0.02);
    let (sol, report) = nonlinear_periodic_solve(&ctx).unwrap();
    let f0 = initial_perturbation(&ctx, 0.1 * report.norm_weighted_sup, 3);
    let mode = MarchMode::Perturbation {
        periodic: &sol,
        zero_mass: true,
    };
    let run = ibvp_march(&ctx, mode, &f0, 3, &StabilitySettings::default()).unwrap();
    assert!(run.max_abs_mass() <= 1e-6, "mass {:e}", run.max_abs_mass());
    let dev = run.period_deviation();
    assert_eq!(dev.len(), 4);
    assert!(dev.windows(2).all(|w| w[1] < w[0]), "{dev:?}");
    assert!(run.records.iter().all(|r| r.min_f >= 0.0));
}

#[test]
fn resting_wall_keeps_the_maxwellian() {
    let ctx = context(0.0);
    let drift = mass_conservation_check(&ctx, 2, &StabilitySettings::default()).unwrap();
    assert_eq!(drift.masses.len(), 3);
    assert!(drift.max_drift <= 1e-12, "{drift:?}");
    let moving = context(0.02);
    let d = mass_conservation_check(&moving, 1, &StabilitySettings::default()).unwrap();
    assert!(d.max_drift > 0.0 && d.max_drift <= 5e-3, "{d:?}");
}

#[test]
fn mass_drift_is_relative_per_period() {
    let mut run = synthetic_run(2, 4, |_| 1.0);
    for (i, r) in run.records.iter_mut().enumerate() {
        r.mass = 2.0 + 0.01 * (i / 4) as f64;
    }
    let d = mass_drift(&run);
    assert_eq!(d.masses, vec![2.0, 2.01, 2.02]);
    assert!(d.drift.iter().all(|x| (x - 0.005).abs() < 1e-12));
}

#[test]
fn positivity_flags_negative_values() {
    let ctx = context(0.0);
    let full = ctx.full_distribution(&ctx.zero_field());
    let p = positivity_check(&ctx, &full);
    assert!(p.pass && p.min > 0.0);
    let (n_t, n_x, nv) = full.dims();
    let bent = DistributionField::from_fn(n_t, n_x, nv, |n, i, k| {
        if (n, i, k) == (2, 3, 5) {
            -1e-3
        } else {
            full.at(n, i)[k]
        }
    });
    let q = positivity_check(&ctx, &bent);
    assert!(!q.pass);
    assert_eq!(q.location, (2, 3, 5));
    assert_eq!(q.min, -1e-3);
}
