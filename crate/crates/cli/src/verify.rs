//! Property checks run by `kinetics verify`. The trivial suite finishes in
//! seconds; the derived suite compares against independent closed forms.

use kinetics_core::boundary::{flux_of_mu, p_gamma};
use kinetics_core::characteristics::{
    backward_exit, backward_exit_constant, periodicity_check, ConstantForce, PhasePoint, WallForce,
    TOL_ODE,
};
use kinetics_core::collision::{k1_ratio, nu, GammaOperator, K1_CONSTANT};
use kinetics_core::config::RunConfig;
use kinetics_core::frame::{equivalence_residual, jacobian_det, to_fixed, to_moving};
use kinetics_core::grid::{Symmetry, WeightFunction};
use kinetics_core::report::{solver_csv, SOLVER_HEADER};
use kinetics_core::solvers::{
    boundary_fixed_point, iteration_lemma_check, nonlinear_periodic_solve, periodic_residual,
    GridSpec, LinearProblemData, SolverContext, SolverReport, SolverSettings,
};
use kinetics_core::stability::{fit_exponential, mass_conservation_check, StabilitySettings};
use kinetics_core::wall::{FrameClock, WallMotion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Suite;

pub struct Check {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

fn check(name: &'static str, value: f64, tol: f64) -> Check {
    Check {
        name,
        pass: value.abs() <= tol,
        detail: format!("{value:.3e} (tol {tol:.0e})"),
    }
}

fn small_grid() -> GridSpec {
    GridSpec {
        v_max: 4.8,
        n_v: 8,
        n_x: 8,
        n_t: 8,
        symmetry: Symmetry::Mirror,
    }
}

pub fn run_suite(suite: Suite) -> anyhow::Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Trivial | Suite::All) {
        trivial(&mut out)?;
    }
    if matches!(suite, Suite::Derived | Suite::All) {
        derived(&mut out)?;
    }
    Ok(out)
}

fn trivial(out: &mut Vec<Check>) -> anyhow::Result<()> {
    let wf = WeightFunction::new(3.5, 0.5)?;
    let v = [1.0, -2.0, 0.5];
    let r2 = 5.25f64;
    let expect = (1.0 + r2).powf(1.75) * (0.125 * r2).exp();
    out.push(check(
        "weight at a sample velocity",
        wf.eval(v) / expect - 1.0,
        1e-14,
    ));

    let stationary = FrameClock::new(&WallMotion::stationary());
    let mut id = 0.0f64;
    for p in [
        PhasePoint::new(0.3, 0.25, [1.5, 0.2, -0.1]),
        PhasePoint::new(0.9, 0.75, [-0.7, 0.0, 0.4]),
    ] {
        let q = to_fixed(&stationary, p)?;
        id = id
            .max((q.x - p.x).abs())
            .max((q.v[0] - p.v[0]).abs())
            .max((q.t - p.t).abs());
    }
    out.push(check("stationary wall gives the identity frame", id, 1e-14));

    let ctx = SolverContext::new(
        &WallMotion::stationary(),
        &small_grid(),
        wf,
        SolverSettings::default(),
    )?;
    let sm = ctx.space.sqrt_mu().to_vec();
    let pg = p_gamma(&ctx.space, 0, &sm);
    let dev = ctx
        .space
        .nodes()
        .iter()
        .zip(pg.iter().zip(&sm))
        .filter(|(v, _)| v[0] > 0.0)
        .fold(0.0f64, |m, (_, (a, b))| m.max((a - b).abs()));
    out.push(check("P_gamma fixes sqrt(mu)", dev, 1e-12));
    out.push(Check {
        name: "discrete flux of mu is positive",
        pass: flux_of_mu(&ctx.space) > 0.0,
        detail: format!("{:.6e}", flux_of_mu(&ctx.space)),
    });

    let gam = GammaOperator::new(&ctx.space, 12)?;
    let zero = vec![0.0; sm.len()];
    let g0 = gam.gamma(&zero, &sm);
    out.push(check(
        "Gamma(0, g) = 0",
        g0.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        0.0,
    ));
    let gmu = gam.gamma(&sm, &sm);
    out.push(check(
        "Gamma(sqrt mu, sqrt mu) = 0",
        gmu.iter().fold(0.0f64, |m, x| m.max(x.abs())),
        1e-10,
    ));

    let t: Vec<f64> = (0..20).map(|i| i as f64 * 0.5).collect();
    let y: Vec<f64> = t.iter().map(|t| 2.0 * (-0.3 * t).exp()).collect();
    let (lam, _, r2) = fit_exponential(&t, &y)?;
    out.push(check("synthetic decay fit recovers 0.3", lam - 0.3, 1e-12));
    out.push(check("synthetic decay fit R^2 = 1", r2 - 1.0, 1e-12));

    let geo: Vec<f64> = (0..30).map(|i| 0.5f64.powi(i)).collect();
    let lemma = iteration_lemma_check(&geo, 3, 0.0);
    out.push(Check {
        name: "iteration lemma on a geometric sequence",
        pass: lemma.hypothesis_holds && lemma.conclusion_holds,
        detail: format!("{} bounds", lemma.bounds.len()),
    });

    out.push(Check {
        name: "empty report is header only",
        pass: solver_csv(&SolverReport::default()) == format!("{SOLVER_HEADER}\n"),
        detail: String::new(),
    });

    let (sol, _) = nonlinear_periodic_solve(&ctx)?;
    out.push(check(
        "delta = 0 periodic state vanishes",
        ctx.weighted_sup(&sol.f),
        1e-8,
    ));
    let (field, trace) = ctx.transport(0.0, &ctx.zero_field(), &ctx.zero_trace());
    let zt = field
        .data()
        .iter()
        .chain(trace.data())
        .fold(0.0f64, |m, x| m.max(x.abs()));
    out.push(check("transport of zero data is zero", zt, 0.0));
    let bfp = boundary_fixed_point(&ctx, &LinearProblemData::zeros(&ctx, ctx.lambda0()), None)?;
    out.push(Check {
        name: "boundary iteration on zero data stops at once",
        pass: bfp.iterations <= 1,
        detail: format!("{} iterations", bfp.iterations),
    });
    let res = periodic_residual(&ctx.zero_field(), &ctx.space, &ctx.st);
    out.push(check("periodic residual of zero", res.sup, 0.0));
    let mu_min = sm.iter().fold(f64::INFINITY, |m, s| m.min(s * s));
    out.push(Check {
        name: "mu is positive on the grid",
        pass: mu_min > 0.0,
        detail: format!("min {mu_min:.3e}"),
    });

    let cfg = RunConfig::default();
    let back = RunConfig::from_json(&cfg.to_json())?;
    out.push(Check {
        name: "config JSON round trip",
        pass: back == cfg,
        detail: String::new(),
    });

    let drift = mass_conservation_check(&ctx, 1, &StabilitySettings::default())?;
    out.push(check(
        "F = mu keeps its mass on a fixed wall",
        drift.max_drift,
        1e-12,
    ));
    Ok(())
}

fn derived(out: &mut Vec<Check>) -> anyhow::Result<()> {
    let wall = WallMotion::sine(0.02, 1.0)?;
    let clock = FrameClock::new(&wall);
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    let mut rt = 0.0f64;
    let mut jac = 0.0f64;
    for _ in 0..1000 {
        let t = rng.gen_range(0.0..3.0);
        let x = rng.gen_range(0.0..1.0) * wall.state(t).position;
        let v = [
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
            rng.gen_range(-4.0..4.0),
        ];
        let p = PhasePoint::new(t, x, v);
        let q = to_moving(&clock, to_fixed(&clock, p)?)?;
        rt = rt
            .max((q.t - p.t).abs())
            .max((q.x - p.x).abs())
            .max((q.v[0] - p.v[0]).abs());
        jac = jac.max((jacobian_det(&clock, p) - 1.0).abs());
    }
    out.push(check("frame round trip", rt, 1e-9));
    out.push(check("frame Jacobian determinant is 1", jac, 1e-6));

    let eq = equivalence_residual(&clock, 100, 3, 0.0);
    out.push(check(
        "moving and fixed characteristics agree",
        eq.max_deviation,
        10.0 * TOL_ODE,
    ));

    let t = 0.737;
    let forward = clock.forward(t);
    let oracle = simpson(|s| 1.0 / wall.state(s).position.powi(2), 0.0, t, 4000);
    out.push(check("frame clock vs quadrature", forward - oracle, 1e-10));

    // nu = 2 pi int |v - u| mu(u) du by radial quadrature of the spherical mean.
    let mut nu_err = 0.0f64;
    for r in [0.0, 0.5, 1.7, 3.2] {
        let oracle = simpson(
            |s| {
                let mu = (-0.5 * s * s).exp() / (2.0 * std::f64::consts::PI).powf(1.5);
                let mean = if r == 0.0 {
                    s
                } else {
                    ((r + s).powi(3) - (r - s).abs().powi(3)) / (6.0 * r * s)
                };
                8.0 * std::f64::consts::PI.powi(2) * s * s * mu * mean
            },
            0.0,
            12.0,
            4000,
        );
        nu_err = nu_err.max((nu([r, 0.0, 0.0]) - oracle).abs());
    }
    out.push(check("collision frequency vs quadrature", nu_err, 1e-6));

    let mut k1 = 0.0f64;
    for _ in 0..10_000 {
        let v = [
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        ];
        let u = [
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        ];
        if let Ok(r) = k1_ratio(v, u) {
            k1 = k1.max(r);
        }
    }
    out.push(Check {
        name: "pointwise kernel bound",
        pass: k1 <= K1_CONSTANT * (1.0 + 1e-12),
        detail: format!("{k1:.4e} <= {K1_CONSTANT:.4e}"),
    });

    // Constant force: the exit solves a quadratic.
    let g0 = -0.4;
    let mut exit_err = 0.0f64;
    for _ in 0..200 {
        let p = PhasePoint::new(
            0.0,
            rng.gen_range(0.05..0.95),
            [rng.gen_range(-3.0..3.0), 0.0, 0.0],
        );
        let num = backward_exit(p, &ConstantForce(g0), 1e3);
        let exact = backward_exit_constant(p, g0, 1e3);
        if num.wall == exact.wall {
            exit_err = exit_err.max((num.t_b - exact.t_b).abs());
        } else {
            exit_err = f64::INFINITY;
        }
    }
    out.push(check("backward exit vs quadratic", exit_err, 1e-9));

    let per = periodicity_check(&WallForce { clock: &clock }, 100, 5);
    out.push(Check {
        name: "characteristics commute with the period shift",
        pass: per.max_state_deviation <= 1e-9 && per.wall_mismatches == 0,
        detail: format!(
            "{:.3e}, {} wall mismatches",
            per.max_state_deviation, per.wall_mismatches
        ),
    });
    Ok(())
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}
