//! Acceptance report: one PASS/FAIL line per criterion at desk scale
//! (12 velocity nodes per axis, 32 cells, 64 time slices).
//!
//! Runs as a plain binary under `cargo test`. Failing criteria are reported
//! but do not fail the target unless `KINETICS_ACCEPTANCE_STRICT=1`.
//! `KINETICS_ACCEPTANCE_ONLY=1,5,7` restricts the run to some criteria.

mod common;

use std::cell::OnceCell;
use std::f64::consts::TAU;
use std::time::Instant;

use common::{
    adaptive_simpson, add, dot, k_by_collision_integral, k_by_kernel, nu_oracle, quadratic_exit, V3,
};
use kinetics_core::characteristics::{
    backward_exit, backward_exit_constant, cycle_measure_estimates, periodicity_check,
    ConstantForce, CycleSettings, PhasePoint, WallForce, EVENT_TOL, MC_STEPS_PER_PERIOD, TOL_ODE,
};
use kinetics_core::collision::{
    coercivity_floor, gamma_bound_constant, k1_ratio, nu, verify_k2_bound, GammaMethod,
    GammaOperator, K1_CONSTANT,
};
use kinetics_core::frame::{equivalence_residual, to_fixed, to_moving};
use kinetics_core::grid::{DistributionField, WeightFunction};
use kinetics_core::solvers::{
    boundary_factor, boundary_fixed_point, k_fixed_point, nonlinear_periodic_solve, GridSpec,
    LinearProblemData, PeriodicSolution, SolverContext, SolverReport, SolverSettings,
};
use kinetics_core::stability::{
    decay_rate_fit, ibvp_march, initial_perturbation, mass_conservation_check, positivity_check,
    MarchMode, StabilityRun, StabilitySettings,
};
use kinetics_core::wall::{FrameClock, Shape, WallMotion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Tolerance of the collision-invariant defects of Γ.
const TOL_CONS: f64 = 1e-5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn desk() -> GridSpec {
    GridSpec::default()
}

fn weight() -> WeightFunction {
    WeightFunction::new(3.5, 0.5).unwrap()
}

fn context(delta: f64, grid: &GridSpec) -> SolverContext {
    let wall = WallMotion::sine(delta, 1.0).unwrap();
    SolverContext::new(&wall, grid, weight(), SolverSettings::default()).unwrap()
}

struct Solve {
    ctx: SolverContext,
    sol: PeriodicSolution,
    report: SolverReport,
    seconds: f64,
}

fn solve(delta: f64) -> Solve {
    let start = Instant::now();
    let ctx = context(delta, &desk());
    let (sol, report) = nonlinear_periodic_solve(&ctx).unwrap();
    Solve {
        ctx,
        sol,
        report,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Desk-grid solves and the stability march, shared between criteria.
#[derive(Default)]
struct Shared {
    solves: [OnceCell<Solve>; 3],
    march: OnceCell<(StabilityRun, f64)>,
}

const DELTAS: [f64; 3] = [0.005, 0.01, 0.02];

impl Shared {
    fn solve(&self, i: usize) -> &Solve {
        self.solves[i].get_or_init(|| solve(DELTAS[i]))
    }

    /// Ten periods at δ = 0.02 from the default perturbation.
    fn march(&self) -> &(StabilityRun, f64) {
        self.march.get_or_init(|| {
            let s = self.solve(2);
            let start = Instant::now();
            let settings = StabilitySettings::default();
            let amp = settings.f0_amplitude * s.report.norm_weighted_sup;
            let f0 = initial_perturbation(&s.ctx, amp, settings.seed);
            let mode = MarchMode::Perturbation {
                periodic: &s.sol,
                zero_mass: true,
            };
            let run = ibvp_march(&s.ctx, mode, &f0, settings.periods, &settings).unwrap();
            (run, start.elapsed().as_secs_f64())
        })
    }
}

fn null_case(_: &Shared) -> Outcome {
    let start = Instant::now();
    let ctx = context(0.0, &desk());
    let (sol, report) = nonlinear_periodic_solve(&ctx).unwrap();
    let f0 = vec![0.0; ctx.st.n_x() * ctx.space.len()];
    let mode = MarchMode::Perturbation {
        periodic: &sol,
        zero_mass: true,
    };
    let run = ibvp_march(&ctx, mode, &f0, 5, &StabilitySettings::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let (per, marched) = (report.norm_weighted_sup, run.max_weighted_sup());
    outcome(
        per <= 1e-8 && marched <= 1e-7 && secs < 120.0,
        format!("|w f_per| = {per:.2e} (<= 1e-8), march max {marched:.2e} (<= 1e-7), {secs:.0} s (< 120 s)"),
    )
}

fn linear_response(sh: &Shared) -> Outcome {
    let c: Vec<f64> = (0..3).map(|i| sh.solve(i).report.c_hat).collect();
    let secs: f64 = (0..3).map(|i| sh.solve(i).seconds).sum();
    // Reported for context: the tail-weighted norm carries the nonlinear
    // wall-Maxwellian response, the L2 norm much less so.
    let l2: Vec<String> = (0..3)
        .map(|i| format!("{:.4}", sh.solve(i).report.norm_l2 / DELTAS[i]))
        .collect();
    let (lo, hi) = c
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(l, h), x| (l.min(*x), h.max(*x)));
    outcome(
        lo > 0.0 && hi / lo <= 1.2 && secs < 1800.0,
        format!(
            "|w f_per|/delta = {:.4}, {:.4}, {:.4}; max/min = {:.4} (<= 1.2); L2/delta {}; {secs:.0} s",
            c[0],
            c[1],
            c[2],
            hi / lo,
            l2.join(", ")
        ),
    )
}

fn contraction(sh: &Shared) -> Outcome {
    let start = Instant::now();
    let ctx = &sh.solve(2).ctx;
    let data = LinearProblemData {
        g: ctx.force_source().clone(),
        r: ctx.zero_trace(),
        lambda: ctx.lambda0(),
    };
    let k_it = k_fixed_point(ctx, &data).unwrap();
    let k_ratio = k_it.max_ratio();
    let n = 50.0;
    // At λ0 the inflow barely reaches the outgoing trace and the force
    // source carries no wall flux; either way the boundary iteration stops
    // before yielding ratios. λ = 1 and a mass-carrying source exercise it.
    let sm = ctx.space.sqrt_mu();
    let g = DistributionField::from_fn(ctx.st.n_t(), ctx.st.n_x(), ctx.space.len(), |n, i, k| {
        let v = ctx.space.nodes()[k];
        let t = n as f64 / ctx.st.n_t() as f64;
        (1.0 + 0.4 * v[0] + 0.1 * v[1] * v[1]) * sm[k] * (0.1 + ctx.st.x(i) + (TAU * t).cos())
    });
    let b_data = LinearProblemData {
        g,
        lambda: 1.0,
        ..data
    };
    let b_it = boundary_fixed_point(ctx, &b_data, Some(n)).unwrap();
    let (b_ratio, bound) = (b_it.max_ratio(), boundary_factor(n) + 0.05);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        k_ratio <= 0.55 && b_ratio <= bound && secs < 600.0,
        format!(
            "K energy ratio {k_ratio:.4} (<= 0.55, {} its), boundary ratio {b_ratio:.3e} (<= {bound:.4}, {} its), {secs:.0} s",
            k_it.iterations, b_it.iterations
        ),
    )
}

fn zero_mass(sh: &Shared) -> Outcome {
    let solve_mass = (0..3)
        .map(|i| sh.solve(i).report.max_slice_mass)
        .fold(0.0, f64::max);
    let march_mass = sh.march().0.max_abs_mass();
    outcome(
        solve_mass <= 1e-6 && march_mass <= 1e-6,
        format!("periodic solves {solve_mass:.2e}, march {march_mass:.2e} (<= 1e-6)"),
    )
}

fn stability(sh: &Shared) -> Outcome {
    let (run, march_secs) = sh.march();
    let secs = march_secs + sh.solve(2).seconds;
    let dev = run.period_deviation();
    let monotone = dev.windows(2).all(|w| w[1] < w[0]);
    match decay_rate_fit(run) {
        Ok(fit) => outcome(
            fit.lambda1 > 0.0 && fit.r2 >= 0.98 && monotone && secs < 1200.0,
            format!(
                "lambda_1 = {:.4} (> 0), R^2 = {:.4} (>= 0.98), deviation monotone: {monotone}, {secs:.0} s",
                fit.lambda1, fit.r2
            ),
        ),
        Err(e) => outcome(false, format!("fit rejected: {e}; deviation monotone: {monotone}")),
    }
}

fn positivity(sh: &Shared) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for i in [1, 2] {
        let s = sh.solve(i);
        let p = positivity_check(&s.ctx, &s.ctx.full_distribution(&s.sol.f));
        pass &= p.pass;
        parts.push(format!(
            "delta {}: min {:.2e} / max {:.2e}",
            DELTAS[i], p.min, p.max
        ));
    }
    outcome(pass, format!("{} (>= -1e-10 max)", parts.join(", ")))
}

fn mass_drift(_: &Shared) -> Outcome {
    let settings = StabilitySettings::default();
    let delta = 0.01;
    let coarse = mass_conservation_check(&context(delta, &desk()), 3, &settings).unwrap();
    let fine_grid = GridSpec {
        n_x: 2 * desk().n_x,
        n_t: 2 * desk().n_t,
        ..desk()
    };
    let fine = mass_conservation_check(&context(delta, &fine_grid), 3, &settings).unwrap();
    let ratio = coarse.max_drift / fine.max_drift;
    outcome(
        coarse.max_drift <= 1e-3 && ratio >= 1.6,
        format!(
            "desk drift {:.3e}/period (<= 1e-3), doubled n_x, n_t {:.3e}; improvement {ratio:.3} (>= 1.6)",
            coarse.max_drift, fine.max_drift
        ),
    )
}

fn operators(_: &Shared) -> Outcome {
    let start = Instant::now();
    let wf = weight();
    let ctx = context(0.01, &desk());
    let symmetry = ctx.table().symmetry_defect();

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut k1 = 0.0f64;
    for _ in 0..10_000 {
        let v: V3 = [
            rng.gen_range(-6.0..6.0),
            rng.gen_range(-6.0..6.0),
            rng.gen_range(-6.0..6.0),
        ];
        let u = add(
            v,
            [
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
                rng.gen_range(-4.0..4.0),
            ],
            1.0,
        );
        k1 = k1.max(k1_ratio(v, u).unwrap());
    }

    let fine = GridSpec { n_v: 16, ..desk() }.velocity_space().unwrap();
    let (k2_desk, k2_fine) = (
        verify_k2_bound(&ctx.space, &wf).max_ratio,
        verify_k2_bound(&fine, &wf).max_ratio,
    );
    let k2_change = (k2_fine / k2_desk - 1.0).abs();

    let c0 = coercivity_floor(ctx.table(), &ctx.space);

    let lin: Vec<f64> = ctx
        .space
        .nodes()
        .iter()
        .zip(ctx.space.sqrt_mu())
        .map(|(v, s)| (0.3 + 0.5 * v[0]) * s)
        .collect();
    let defect = |m: usize| {
        let op = GammaOperator::with_method(&ctx.space, m, GammaMethod::Grid).unwrap();
        op.conservation_defects(&op.gamma(&lin, &lin))
            .iter()
            .fold(0.0f64, |a, d| a.max(d.abs()))
    };
    let (d12, d32) = (defect(12), defect(32));

    let g_desk = gamma_bound_constant(ctx.gamma(), &wf, 50, 3);
    let g_fine = gamma_bound_constant(&GammaOperator::new(&fine, 12).unwrap(), &wf, 50, 3);
    let g_change = (g_fine / g_desk - 1.0).abs();
    let secs = start.elapsed().as_secs_f64();

    let pass = symmetry <= 1e-10
        && k1 <= K1_CONSTANT
        && k2_change <= 0.1
        && c0 > 0.0
        && d12 <= TOL_CONS
        && d32 <= TOL_CONS
        && d32 <= d12
        && g_change <= 0.1
        && secs < 600.0;
    outcome(
        pass,
        format!(
            "symmetry {symmetry:.1e}; k1 {k1:.4} (<= {K1_CONSTANT:.4}); k2 {k2_desk:.2} -> {k2_fine:.2} ({:.1}%); \
             c0' {c0:.4}; Gamma defects {d12:.2e} -> {d32:.2e} (<= {TOL_CONS:.0e}); \
             g constant {g_desk:.3e} -> {g_fine:.3e} ({:.1}%); {secs:.0} s",
            100.0 * k2_change,
            100.0 * g_change
        ),
    )
}

fn geometry(_: &Shared) -> Outcome {
    let wall = WallMotion::sine(0.02, 1.0).unwrap();
    let clock = FrameClock::new(&wall);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut rt = 0.0f64;
    for _ in 0..1000 {
        let t = rng.gen_range(0.0..3.0);
        let x = rng.gen_range(0.0..1.0) * wall.state(t).position;
        let v = [
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
            rng.gen_range(-5.0..5.0),
        ];
        let p = PhasePoint::new(t, x, v);
        let q = to_moving(&clock, to_fixed(&clock, p).unwrap()).unwrap();
        rt = rt
            .max((q.t - t).abs())
            .max((q.x - x).abs())
            .max((q.v[0] - v[0]).abs());
    }
    let eq = equivalence_residual(&clock, 100, 4, 0.0).max_deviation;
    let per = periodicity_check(&WallForce { clock: &clock }, 100, 9);
    let shift = per
        .max_state_deviation
        .max(per.max_exit_time_deviation)
        .max(per.max_exit_velocity_deviation);
    outcome(
        rt <= 1e-9 && eq <= 10.0 * TOL_ODE && shift <= EVENT_TOL && per.wall_mismatches == 0,
        format!(
            "round trip {rt:.1e} (<= 1e-9), equivalence {eq:.1e} (<= {:.0e}), shift identities {shift:.1e} (<= {EVENT_TOL:.0e}), {} wall mismatches",
            10.0 * TOL_ODE,
            per.wall_mismatches
        ),
    )
}

fn cycles(_: &Shared) -> Outcome {
    let start = Instant::now();
    let clock = FrameClock::new(&WallMotion::sine(0.01, 1.0).unwrap());
    let force = WallForce { clock: &clock };
    let st = CycleSettings {
        weight: weight(),
        steps_per_period: MC_STEPS_PER_PERIOD,
        ..CycleSettings::default()
    };
    let est = cycle_measure_estimates(&force, 20.0, &[5, 10, 20], 1_000_000, 1, &st);
    let secs = start.elapsed().as_secs_f64();
    let e: Vec<f64> = est.iter().map(|e| e.estimate).collect();
    let non_increasing = e.windows(2).all(|w| w[1] <= w[0]);
    let decays = e.windows(2).all(|w| w[1] * 2.0 <= w[0]);
    outcome(
        non_increasing && decays && secs < 300.0,
        format!(
            "k = 5, 10, 20: {:.3e}, {:.3e}, {:.3e} (stderr {:.1e}, {:.1e}, {:.1e}); halves per doubling: {decays}; {secs:.0} s",
            e[0], e[1], e[2], est[0].stderr, est[1].stderr, est[2].stderr
        ),
    )
}

fn oracles(_: &Shared) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut kernel = 0.0f64;
    for _ in 0..20 {
        let v = [
            rng.gen_range(-2.5..2.5),
            rng.gen_range(-2.5..2.5),
            rng.gen_range(-2.5..2.5),
        ];
        let a = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let width = rng.gen_range(0.8..1.6);
        let f = move |u: V3| {
            let d = add(u, a, -1.0);
            (1.0 + 0.5 * u[0]) * (-dot(d, d) / (2.0 * width * width)).exp()
        };
        let direct = k_by_collision_integral(v, &f);
        kernel = kernel.max((direct - k_by_kernel(v, &f)).abs() / direct.abs().max(1e-2));
    }

    let nu_err = [0.0, 0.4, 1.3, 2.7, 5.0]
        .iter()
        .map(|r| (nu([r * 0.6, -r * 0.8, 0.0]) - nu_oracle(*r)).abs())
        .fold(0.0, f64::max);

    let mut exit = 0.0f64;
    for g in [-0.7, -0.05, 0.0, 0.3, 1.1] {
        for _ in 0..200 {
            let (x, v) = (rng.gen_range(0.02..0.98), rng.gen_range(-4.0..4.0));
            let p = PhasePoint::new(0.0, x, [v, 0.2, -0.1]);
            let (tau, wall) = quadratic_exit(x, v, g);
            for e in [
                backward_exit(p, &ConstantForce(g), 1e4),
                backward_exit_constant(p, g, 1e4),
            ] {
                exit = exit.max(if e.wall == Some(wall) {
                    (e.t_b - tau).abs()
                } else {
                    f64::INFINITY
                });
            }
        }
    }

    let mut clock_err = 0.0f64;
    for wall in [
        WallMotion::sine(0.02, 1.0).unwrap(),
        WallMotion::new(0.3, 2.5, Shape::Cosine).unwrap(),
    ] {
        let clock = FrameClock::new(&wall);
        let rate = |s: f64| wall.state(s).position.powi(-2);
        for t in [0.123, 0.5, 0.999, 1.7, 3.21] {
            clock_err =
                clock_err.max((clock.forward(t) - adaptive_simpson(&rate, 0.0, t, 1e-14)).abs());
        }
    }
    outcome(
        kernel <= 1e-3 && nu_err <= 1e-6 && exit <= 1e-9 && clock_err <= 1e-10,
        format!(
            "kernel {kernel:.1e} (<= 1e-3), nu {nu_err:.1e} (<= 1e-6), exit {exit:.1e} (<= 1e-9), clock {clock_err:.1e} (<= 1e-10)"
        ),
    )
}

type Criterion = (u8, &'static str, fn(&Shared) -> Outcome);

const CRITERIA: [Criterion; 11] = [
    (1, "null case", null_case),
    (2, "linear response", linear_response),
    (3, "contraction certificates", contraction),
    (4, "zero mass", zero_mass),
    (5, "exponential stability", stability),
    (6, "positivity", positivity),
    (7, "mass conservation", mass_drift),
    (8, "operator certificates", operators),
    (9, "geometry certificates", geometry),
    (10, "cycle-measure decay", cycles),
    (11, "oracle equivalences", oracles),
];

fn main() {
    // `cargo test` passes harness flags such as `--nocapture`; none apply.
    let only: Option<Vec<u8>> = std::env::var("KINETICS_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let strict = std::env::var("KINETICS_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let shared = Shared::default();
    let mut failed = Vec::new();
    let mut ran = 0;
    for (id, name, run) in CRITERIA {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let out = run(&shared);
        ran += 1;
        println!(
            "{} {id:>2}. {name:<26} {} [{:.0} s]",
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            start.elapsed().as_secs_f64()
        );
        if !out.pass {
            failed.push(id);
        }
    }
    println!(
        "acceptance: {} of {ran} criteria pass; failing: {failed:?}",
        ran - failed.len()
    );
    if strict && !failed.is_empty() {
        std::process::exit(1);
    }
}
