//! Transport along characteristics against closed forms, its convergence
//! under time refinement, and the wall reflection identities.

use kinetics_core::boundary::{
    diffuse_reflect_f, flux_functionals, flux_of_mu, incoming_mass_flux, mu_trace, outgoing_flux,
    p_gamma, WallReflector,
};
use kinetics_core::collision::nu;
use kinetics_core::grid::{
    on_side, DistributionField, Side, Symmetry, VelocityGrid, VelocitySpace, WeightFunction,
};
use kinetics_core::solvers::{GridSpec, SolverContext, SolverSettings};
use kinetics_core::wall::WallMotion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n_v: usize, n_x: usize, n_t: usize) -> GridSpec {
    GridSpec {
        v_max: 4.8,
        n_v,
        n_x,
        n_t,
        symmetry: Symmetry::Mirror,
    }
}

fn context(wall: &WallMotion, g: &GridSpec) -> SolverContext {
    SolverContext::new(
        wall,
        g,
        WeightFunction::new(3.5, 0.5).unwrap(),
        SolverSettings::default(),
    )
    .unwrap()
}

/// Time to the wall behind a straight line from `x` at speed `v1`.
fn flight_time(x: f64, v1: f64) -> f64 {
    if v1 > 0.0 {
        x / v1
    } else {
        (1.0 - x) / -v1
    }
}

#[test]
fn constant_source_matches_straight_line_solution() {
    let ctx = context(&WallMotion::stationary(), &grid(8, 10, 8));
    let (n_t, n_x, nv) = (ctx.st.n_t(), ctx.st.n_x(), ctx.space.len());
    let source = DistributionField::from_fn(n_t, n_x, nv, |_, _, _| 1.0);
    let (f, _) = ctx.transport(0.0, &source, &ctx.zero_trace());
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (n, i, k) = (
            rng.gen_range(0..n_t),
            rng.gen_range(0..n_x),
            rng.gen_range(0..nv),
        );
        let v = ctx.space.nodes()[k];
        let tau = flight_time(ctx.st.x(i), v[0]);
        let exact = (1.0 - (-nu(v) * tau).exp()) / nu(v);
        let got = f.at(n, i)[k];
        assert!(
            (got - exact).abs() <= 1e-6 * exact,
            "node {k} x {}: {got} vs {exact}",
            ctx.st.x(i)
        );
    }
}

#[test]
fn inflow_decays_along_straight_lines() {
    let ctx = context(&WallMotion::stationary(), &grid(8, 10, 8));
    let (n_x, nv) = (ctx.st.n_x(), ctx.space.len());
    let mut inflow = ctx.zero_trace();
    for n in 0..ctx.st.n_t() {
        for wall in 0..2 {
            for (k, v) in ctx.space.nodes().iter().enumerate() {
                if on_side(v[0], wall, Side::Incoming) {
                    inflow.at_mut(n, wall)[k] = 1.0 + 0.1 * v[1] * v[1];
                }
            }
        }
    }
    let (f, _) = ctx.transport(0.3, &ctx.zero_field(), &inflow);
    for i in [0, n_x / 2, n_x - 1] {
        for k in (0..nv).step_by(7) {
            let v = ctx.space.nodes()[k];
            let tau = flight_time(ctx.st.x(i), v[0]);
            let exact = (1.0 + 0.1 * v[1] * v[1]) * (-(nu(v) + 0.3) * tau).exp();
            let got = f.at(3, i)[k];
            // ν along traces comes from a table with O(1e-6) interpolation
            // error, which enters through the exponent.
            assert!((got - exact).abs() <= 1e-5 * exact, "{got} vs {exact}");
        }
    }
}

#[test]
fn zero_data_gives_zero() {
    let ctx = context(&WallMotion::sine(0.1, 1.0).unwrap(), &grid(8, 6, 8));
    let (f, w) = ctx.transport(0.0, &ctx.zero_field(), &ctx.zero_trace());
    assert!(f.data().iter().chain(w.data()).all(|x| *x == 0.0));
}

/// A source bilinear in `(x̄, v̄₁)` is interpolated exactly, so the only
/// discretization error left is the time quadrature.
fn smooth_source(ctx: &SolverContext) -> DistributionField {
    let (n_t, n_x, nv) = (ctx.st.n_t(), ctx.st.n_x(), ctx.space.len());
    let tb = ctx.st.period_bar();
    DistributionField::from_fn(n_t, n_x, nv, |n, i, k| {
        let t = ctx.st.t(n);
        let v = ctx.space.nodes()[k];
        (1.0 + 0.5 * ctx.st.x(i) + 0.2 * v[0]) * (1.2 + (2.0 * std::f64::consts::PI * t / tb).sin())
    })
}

#[test]
fn time_refinement_converges() {
    let wall = WallMotion::sine(0.2, 1.0).unwrap();
    let levels = [8usize, 16, 32];
    let fields: Vec<(SolverContext, DistributionField)> = levels
        .iter()
        .map(|&n_t| {
            let ctx = context(&wall, &grid(8, 8, n_t));
            let (f, _) = ctx.transport(0.0, &smooth_source(&ctx), &ctx.zero_trace());
            (ctx, f)
        })
        .collect();
    // Compare on the slices of the coarsest level.
    let diff = |a: usize, b: usize| {
        let (ra, rb) = (levels[a] / levels[0], levels[b] / levels[0]);
        let mut d = 0.0f64;
        for n in 0..levels[0] {
            let (x, y) = (fields[a].1.slice(n * ra), fields[b].1.slice(n * rb));
            d = x.iter().zip(y).fold(d, |m, (p, q)| m.max((p - q).abs()));
        }
        d
    };
    let (e1, e2) = (diff(0, 1), diff(1, 2));
    let order = (e1 / e2).log2();
    assert!(
        order >= 0.9,
        "observed order {order:.3} ({e1:.3e}, {e2:.3e})"
    );
}

fn space() -> VelocitySpace {
    VelocitySpace::new(VelocityGrid::new(5.4, 10).unwrap(), Symmetry::Mirror)
}

fn random_outgoing(space: &VelocitySpace, wall: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    space
        .nodes()
        .iter()
        .map(|v| {
            if on_side(v[0], wall, Side::Outgoing) {
                rng.gen_range(-1.0..1.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[test]
fn p_gamma_is_a_flux_preserving_projection() {
    let s = space();
    let sm = s.sqrt_mu();
    for wall in 0..2 {
        let f = random_outgoing(&s, wall, 4 + wall as u64);
        let pf = p_gamma(&s, wall, &f);
        // The incoming half carries the outgoing mass flux of √μ f.
        let out: Vec<f64> = f.iter().zip(sm).map(|(a, b)| a * b).collect();
        assert!((incoming_mass_flux(&s, wall, &pf) - outgoing_flux(&s, wall, &out)).abs() < 1e-14);
        // Reflecting the incoming half back onto the outgoing side and
        // projecting again changes nothing.
        let mirrored: Vec<f64> = (0..s.len())
            .map(|k| {
                let v = s.nodes()[k];
                let partner = s
                    .nodes()
                    .iter()
                    .position(|u| (u[0] + v[0]).abs() < 1e-12 && u[1] == v[1] && u[2] == v[2])
                    .unwrap();
                if on_side(v[0], wall, Side::Outgoing) {
                    pf[partner]
                } else {
                    0.0
                }
            })
            .collect();
        let again = p_gamma(&s, wall, &mirrored);
        let d = again
            .iter()
            .zip(&pf)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(d < 1e-14, "not idempotent: {d:e}");
    }
}

#[test]
fn diffuse_reflection_has_zero_net_mass_flux() {
    let s = space();
    for (wall, x_w) in [(0, 1.0), (1, 1.03), (1, 0.97)] {
        let mut f: Vec<f64> = mu_trace(&s)
            .iter()
            .zip(s.nodes())
            .map(|(m, v)| m * (1.0 + 0.2 * v[0] + 0.05 * v[1] * v[1]))
            .collect();
        let (incoming, negative) = diffuse_reflect_f(&s, x_w, wall, &f);
        assert!(!negative);
        for (k, v) in s.nodes().iter().enumerate() {
            if on_side(v[0], wall, Side::Incoming) {
                f[k] = incoming[k];
            }
        }
        let flux = flux_functionals(&s, wall, &f);
        assert!(flux.mass.abs() < 1e-15, "wall {wall}: {flux:?}");
    }
}

#[test]
fn linear_reflection_splits_into_projection_and_massless_source() {
    let s = space();
    let sm = s.sqrt_mu();
    let refl = WallReflector::new(&s, 1.02);
    for wall in 0..2 {
        let f = random_outgoing(&s, wall, 11 + wall as u64);
        let full = refl.reflect(&s, wall, &f);
        let r = refl.source(&s, wall, &f);
        let pg = p_gamma(&s, wall, &f);
        assert!(incoming_mass_flux(&s, wall, &r).abs() < 1e-15);
        assert!(incoming_mass_flux(&s, wall, refl.offset(wall)).abs() < 1e-15);
        // f_in + offset = P_γ f + r on the incoming half.
        for (k, v) in s.nodes().iter().enumerate() {
            if on_side(v[0], wall, Side::Incoming) {
                let lhs = full[k] + refl.offset(wall)[k];
                assert!((lhs - pg[k] - r[k]).abs() < 1e-12 * (1.0 + lhs.abs()));
            }
        }
        // F = μ reflects into itself up to the wall-Maxwellian change.
        let zero = vec![0.0; s.len()];
        let back = refl.reflect(&s, wall, &zero);
        assert!(back.iter().all(|x| *x == 0.0));
        assert!(flux_of_mu(&s) > 0.0 && sm.iter().all(|x| *x > 0.0));
    }
    // A resting wall at unit position reflects μ into μ.
    let rest = WallReflector::new(&s, 1.0);
    assert!(rest.offset(0).iter().all(|x| x.abs() < 1e-14));
}
