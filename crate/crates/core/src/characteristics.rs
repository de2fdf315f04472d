//! Forced characteristics `dX/ds = V₁`, `dV₁/ds = G(s, X)` in the fixed slab,
//! backward exit times, diffuse back-time cycles and the cycle-measure
//! estimator.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::collision::nu;
use crate::grid::WeightFunction;
use crate::wall::FrameClock;

/// Tolerance expected from the fixed-step RK4 traces.
pub const TOL_ODE: f64 = 1e-9;
/// Position tolerance of the exit event locator.
pub const EVENT_TOL: f64 = 1e-12;
/// Steps per transformed period.
pub const STEPS_PER_PERIOD: usize = 2048;
/// RK4 steps per period for Monte-Carlo cycle estimates. The leg damping
/// integral is trapezoidal, so the bias against `STEPS_PER_PERIOD` is
/// O(h²), below one percent here and far under the sampling error.
pub const MC_STEPS_PER_PERIOD: usize = 32;

/// A point `(t, x, v)` of phase space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint {
    pub t: f64,
    pub x: f64,
    pub v: [f64; 3],
}

impl PhasePoint {
    pub fn new(t: f64, x: f64, v: [f64; 3]) -> Self {
        Self { t, x, v }
    }
}

/// Acceleration field acting on `v₁`.
pub trait Force: Sync {
    fn accel(&self, s: f64, x: f64) -> f64;

    /// Time period, if the field is periodic.
    fn period(&self) -> Option<f64> {
        None
    }

    /// `Some(g)` when the field is the constant `g` everywhere.
    fn constant(&self) -> Option<f64> {
        None
    }

    fn sup(&self) -> f64;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroForce;

impl Force for ZeroForce {
    fn accel(&self, _s: f64, _x: f64) -> f64 {
        0.0
    }
    fn constant(&self) -> Option<f64> {
        Some(0.0)
    }
    fn sup(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ConstantForce(pub f64);

impl Force for ConstantForce {
    fn accel(&self, _s: f64, _x: f64) -> f64 {
        self.0
    }
    fn constant(&self) -> Option<f64> {
        Some(self.0)
    }
    fn sup(&self) -> f64 {
        self.0.abs()
    }
}

/// The effective force of the oscillating wall in the fixed slab.
#[derive(Debug, Clone, Copy)]
pub struct WallForce<'a> {
    pub clock: &'a FrameClock,
}

impl Force for WallForce<'_> {
    fn accel(&self, s: f64, x: f64) -> f64 {
        self.clock.force(s, x)
    }
    fn period(&self) -> Option<f64> {
        Some(self.clock.period_bar())
    }
    fn constant(&self) -> Option<f64> {
        (self.clock.wall().delta() == 0.0).then_some(0.0)
    }
    fn sup(&self) -> f64 {
        self.clock.force_sup()
    }
}

/// Step size used for a force: `T̄/2048` for periodic fields, `1/2048` otherwise.
pub fn default_step(force: &dyn Force) -> f64 {
    force.period().unwrap_or(1.0) / STEPS_PER_PERIOD as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Termination {
    ExitedAt0,
    ExitedAt1,
    Capped,
    /// Integration reached the requested time without leaving the slab.
    Reached,
}

/// Sampled state along a characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSample {
    pub s: f64,
    pub x: f64,
    pub v1: f64,
    pub g: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub start: PhasePoint,
    pub samples: Vec<TraceSample>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn end(&self) -> PhasePoint {
        let s = self.samples.last().unwrap();
        PhasePoint::new(s.s, s.x, [s.v1, self.start.v[1], self.start.v[2]])
    }
}

/// Exit data of the backward characteristic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitData {
    pub t_b: f64,
    /// Wall index `0` or `1`, `None` when capped.
    pub wall: Option<usize>,
    pub x_b: f64,
    pub v_b: [f64; 3],
    pub capped: bool,
}

#[inline]
fn rk4(force: &dyn Force, s: f64, x: f64, v: f64, h: f64) -> (f64, f64) {
    let k1x = v;
    let k1v = force.accel(s, x);
    let k2x = v + 0.5 * h * k1v;
    let k2v = force.accel(s + 0.5 * h, x + 0.5 * h * k1x);
    let k3x = v + 0.5 * h * k2v;
    let k3v = force.accel(s + 0.5 * h, x + 0.5 * h * k2x);
    let k4x = v + h * k3v;
    let k4v = force.accel(s + h, x + h * k3x);
    (
        x + h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        v + h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )
}

/// Cubic Hermite interpolation on one step.
#[derive(Clone, Copy)]
struct Dense {
    s0: f64,
    h: f64,
    x0: f64,
    x1: f64,
    v0: f64,
    v1: f64,
    g0: f64,
    g1: f64,
}

impl Dense {
    fn eval(&self, s: f64) -> (f64, f64) {
        let th = (s - self.s0) / self.h;
        let h00 = (1.0 + 2.0 * th) * (1.0 - th) * (1.0 - th);
        let h10 = th * (1.0 - th) * (1.0 - th);
        let h01 = th * th * (3.0 - 2.0 * th);
        let h11 = th * th * (th - 1.0);
        let x = h00 * self.x0 + h10 * self.h * self.v0 + h01 * self.x1 + h11 * self.h * self.v1;
        let v = h00 * self.v0 + h10 * self.h * self.g0 + h01 * self.v1 + h11 * self.h * self.g1;
        (x, v)
    }
}

/// Integrates from `p` to time `s_target` (either direction) without wall
/// checks, sampling every step.
pub fn integrate(p: PhasePoint, s_target: f64, force: &dyn Force, h: f64) -> Trajectory {
    let n = ((s_target - p.t).abs() / h).ceil().max(1.0) as usize;
    let step = (s_target - p.t) / n as f64;
    let (mut x, mut v) = (p.x, p.v[0]);
    let mut samples = Vec::with_capacity(n + 1);
    samples.push(TraceSample {
        s: p.t,
        x,
        v1: v,
        g: force.accel(p.t, x),
    });
    for k in 0..n {
        let s = p.t + k as f64 * step;
        let (nx, nv) = rk4(force, s, x, v, step);
        x = nx;
        v = nv;
        let s1 = if k + 1 == n { s_target } else { s + step };
        samples.push(TraceSample {
            s: s1,
            x,
            v1: v,
            g: force.accel(s1, x),
        });
    }
    Trajectory {
        start: p,
        samples,
        termination: Termination::Reached,
    }
}

/// Backward trace with exit detection. `sample_dt`, when given, records the
/// state at `s = t - k·sample_dt` for every `k` before the exit, plus the exit.
pub fn trace_backward(
    p: PhasePoint,
    force: &dyn Force,
    h: f64,
    t_cap: f64,
    sample_dt: Option<f64>,
) -> (ExitData, Vec<TraceSample>) {
    let mut samples = Vec::new();
    let v_perp = [p.v[1], p.v[2]];
    // Points already on a wall whose backward path leaves immediately.
    if (p.x <= 0.0 && p.v[0] >= 0.0) || (p.x >= 1.0 && p.v[0] <= 0.0) {
        let wall = if p.x <= 0.0 { 0 } else { 1 };
        let g = force.accel(p.t, p.x);
        if sample_dt.is_some() {
            samples.push(TraceSample {
                s: p.t,
                x: p.x,
                v1: p.v[0],
                g,
            });
        }
        return (
            ExitData {
                t_b: 0.0,
                wall: Some(wall),
                x_b: p.x,
                v_b: p.v,
                capped: false,
            },
            samples,
        );
    }
    let (mut s, mut x, mut v) = (p.t, p.x, p.v[0]);
    let mut g = force.accel(s, x);
    let mut next_sample = 0usize;
    let record = |samples: &mut Vec<TraceSample>, next: &mut usize, d: &Dense, s_lo: f64| {
        if let Some(dt) = sample_dt {
            loop {
                let ss = p.t - *next as f64 * dt;
                if ss < s_lo - 1e-15 {
                    break;
                }
                let (xx, vv) = if *next == 0 { (d.x0, d.v0) } else { d.eval(ss) };
                samples.push(TraceSample {
                    s: ss,
                    x: xx,
                    v1: vv,
                    g: force.accel(ss, xx),
                });
                *next += 1;
            }
        }
    };
    // Step times are indexed from p.t so rounding does not accumulate in s.
    let mut k = 0usize;
    loop {
        k += 1;
        let ns = if k as f64 * h < t_cap {
            p.t - k as f64 * h
        } else {
            p.t - t_cap
        };
        let step = ns - s;
        let (nx, nv) = rk4(force, s, x, v, step);
        let ng = force.accel(ns, nx);
        let d = Dense {
            s0: s,
            h: step,
            x0: x,
            x1: nx,
            v0: v,
            v1: nv,
            g0: g,
            g1: ng,
        };
        if nx <= 0.0 || nx >= 1.0 {
            let target = if nx <= 0.0 { 0.0 } else { 1.0 };
            let wall = target as usize;
            // Bisection for the first crossing, measured from s backward.
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            let inside = |th: f64| {
                let (xx, _) = d.eval(s + th * step);
                if wall == 0 {
                    xx > 0.0
                } else {
                    xx < 1.0
                }
            };
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if inside(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                let (xx, _) = d.eval(s + hi * step);
                if (xx - target).abs() <= EVENT_TOL && (hi - lo) * h < 1e-13 {
                    break;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            let se = s + hi * step;
            let (_, ve) = d.eval(se);
            record(&mut samples, &mut next_sample, &d, se);
            if sample_dt.is_some() {
                samples.push(TraceSample {
                    s: se,
                    x: target,
                    v1: ve,
                    g: force.accel(se, target),
                });
            }
            return (
                ExitData {
                    t_b: p.t - se,
                    wall: Some(wall),
                    x_b: target,
                    v_b: [ve, v_perp[0], v_perp[1]],
                    capped: false,
                },
                samples,
            );
        }
        record(&mut samples, &mut next_sample, &d, ns);
        s = ns;
        x = nx;
        v = nv;
        g = ng;
        if p.t - s >= t_cap - 1e-14 {
            if sample_dt.is_some() && samples.last().map_or(true, |l| l.s > s) {
                samples.push(TraceSample { s, x, v1: v, g });
            }
            return (
                ExitData {
                    t_b: t_cap,
                    wall: None,
                    x_b: x,
                    v_b: [v, v_perp[0], v_perp[1]],
                    capped: true,
                },
                samples,
            );
        }
    }
}

/// Backward exit time, position and velocity.
pub fn backward_exit(p: PhasePoint, force: &dyn Force, t_cap: f64) -> ExitData {
    trace_backward(p, force, default_step(force), t_cap, None).0
}

/// Closed-form exit for a spatially constant force (including zero).
pub fn backward_exit_constant(p: PhasePoint, g0: f64, t_cap: f64) -> ExitData {
    // X(τ) = x - v₁τ + g₀τ²/2 for backward time τ ≥ 0.
    let mut best: Option<(f64, usize)> = None;
    for (wall, target) in [(0usize, 0.0f64), (1, 1.0)] {
        for tau in quad_roots(0.5 * g0, -p.v[0], p.x - target) {
            if tau > 0.0 && best.map_or(true, |(b, _)| tau < b) {
                best = Some((tau, wall));
            }
        }
    }
    match best {
        Some((tau, wall)) if tau <= t_cap => ExitData {
            t_b: tau,
            wall: Some(wall),
            x_b: wall as f64,
            v_b: [p.v[0] - g0 * tau, p.v[1], p.v[2]],
            capped: false,
        },
        _ => ExitData {
            t_b: t_cap,
            wall: None,
            x_b: p.x - p.v[0] * t_cap + 0.5 * g0 * t_cap * t_cap,
            v_b: [p.v[0] - g0 * t_cap, p.v[1], p.v[2]],
            capped: true,
        },
    }
}

fn quad_roots(a: f64, b: f64, c: f64) -> Vec<f64> {
    if a == 0.0 {
        return if b == 0.0 { vec![] } else { vec![-c / b] };
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return vec![];
    }
    let sq = disc.sqrt();
    let q = -0.5 * (b + b.signum() * sq);
    let mut r = vec![q / a];
    if q != 0.0 {
        r.push(c / q);
    }
    r
}

/// Result of the period-shift identities on random points.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PeriodicityReport {
    pub max_state_deviation: f64,
    pub max_exit_time_deviation: f64,
    pub max_exit_velocity_deviation: f64,
    pub wall_mismatches: usize,
}

/// Compares characteristics from `(t, x, v)` and `(t + T̄, x, v)`.
pub fn periodicity_check(force: &dyn Force, n_samples: usize, seed: u64) -> PeriodicityReport {
    let period = force.period().unwrap_or(1.0);
    let h = default_step(force);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rep = PeriodicityReport {
        max_state_deviation: 0.0,
        max_exit_time_deviation: 0.0,
        max_exit_velocity_deviation: 0.0,
        wall_mismatches: 0,
    };
    for _ in 0..n_samples {
        let t = rng.gen::<f64>() * period;
        let x = rng.gen_range(0.05..0.95);
        let v = [
            rng.gen_range(-3.0..3.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        let tau = rng.gen_range(0.0..0.3);
        let a = integrate(PhasePoint::new(t, x, v), t - tau, force, h).end();
        let b = integrate(
            PhasePoint::new(t + period, x, v),
            t + period - tau,
            force,
            h,
        )
        .end();
        rep.max_state_deviation = rep
            .max_state_deviation
            .max((a.x - b.x).abs())
            .max((a.v[0] - b.v[0]).abs());
        let ea = backward_exit(PhasePoint::new(t, x, v), force, 40.0);
        let eb = backward_exit(PhasePoint::new(t + period, x, v), force, 40.0);
        rep.max_exit_time_deviation = rep.max_exit_time_deviation.max((ea.t_b - eb.t_b).abs());
        rep.max_exit_velocity_deviation = rep
            .max_exit_velocity_deviation
            .max((ea.v_b[0] - eb.v_b[0]).abs());
        if ea.wall != eb.wall {
            rep.wall_mismatches += 1;
        }
    }
    rep
}

/// Draws a velocity from `dσ = √(2π) μ |n·v| dv` on the half-space of
/// velocities leaving through `wall` (the set swept by backward traces).
pub fn sample_wall_velocity<R: Rng>(wall: usize, rng: &mut R) -> [f64; 3] {
    let mut speed;
    loop {
        let u: f64 = rng.gen();
        speed = (-2.0 * (1.0 - u).ln()).sqrt();
        if speed >= 1e-8 {
            break;
        }
    }
    let v1 = if wall == 0 { -speed } else { speed };
    [v1, rng.sample(StandardNormal), rng.sample(StandardNormal)]
}

/// CDF of `|v₁|` under `dσ`.
pub fn wall_speed_cdf(s: f64) -> f64 {
    1.0 - (-0.5 * s * s).exp()
}

/// A back-time cycle.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cycle {
    /// `(t_l, x_l, v_l)`, `l = 0..=k`. The last velocity is the arrival
    /// velocity `V_cl(t_k)`.
    pub points: Vec<PhasePoint>,
    /// `e^{-∫(ν̃+λ)}` per leg.
    pub damping: Vec<f64>,
    /// `w̃(v_l) / w̃(V_cl(t_{l+1}))` per leg.
    pub weight_ratio: Vec<f64>,
    pub capped: bool,
}

/// Settings shared by cycle sampling and the cycle-measure estimator.
#[derive(Debug, Clone, Copy)]
pub struct CycleSettings {
    pub lambda: f64,
    pub weight: WeightFunction,
    /// Include the per-leg damping and weight-ratio factors of `dΣ`.
    pub with_factors: bool,
    pub t_cap: f64,
    /// RK4 steps per period of the force along each leg.
    pub steps_per_period: usize,
}

impl Default for CycleSettings {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            weight: WeightFunction::raw(3.5, 0.5),
            with_factors: true,
            t_cap: 1e3,
            steps_per_period: STEPS_PER_PERIOD,
        }
    }
}

/// `w̃ = 1/(w√μ)` up to a constant factor (only ratios are used).
fn w_tilde(wf: &WeightFunction, v: [f64; 3]) -> f64 {
    let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    (0.25 * r2).exp() / wf.eval_sq(r2)
}

/// One leg: exit data plus `∫ν̃` along it.
fn leg(p: PhasePoint, force: &dyn Force, st: &CycleSettings, t_cap: f64) -> (ExitData, f64) {
    if let Some(g0) = force.constant() {
        let e = backward_exit_constant(p, g0, t_cap);
        let integral = if st.with_factors {
            leg_damping_constant(p, g0, e.t_b, &st.weight)
        } else {
            0.0
        };
        return (e, integral);
    }
    let h = force.period().unwrap_or(1.0) / st.steps_per_period as f64;
    let (e, samples) = trace_backward(p, force, h, t_cap, Some(h));
    let mut integral = 0.0;
    if st.with_factors {
        let f = |s: &TraceSample| {
            let v = [s.v1, p.v[1], p.v[2]];
            nu(v) - s.g * s.v1 / 2.0 - s.g * st.weight.log_derivative_v1(v)
        };
        for w in samples.windows(2) {
            integral += 0.5 * (w[0].s - w[1].s) * (f(&w[0]) + f(&w[1]));
        }
    }
    (e, integral)
}

fn leg_damping_constant(p: PhasePoint, g0: f64, t_b: f64, wf: &WeightFunction) -> f64 {
    // Simpson in 16 panels; exact enough for a smooth, short leg.
    let n = 16;
    let f = |tau: f64| {
        let v = [p.v[0] - g0 * tau, p.v[1], p.v[2]];
        nu(v) - g0 * v[0] / 2.0 - g0 * wf.log_derivative_v1(v)
    };
    if g0 == 0.0 {
        return nu(p.v) * t_b;
    }
    let h = t_b / n as f64;
    let mut s = f(0.0) + f(t_b);
    for i in 1..n {
        s += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

/// Samples a back-time cycle of `k` legs starting from `p`.
pub fn sample_cycle<R: Rng>(
    p: PhasePoint,
    force: &dyn Force,
    k: usize,
    rng: &mut R,
    st: &CycleSettings,
) -> Cycle {
    let mut points = vec![p];
    let mut damping = Vec::with_capacity(k);
    let mut weight_ratio = Vec::with_capacity(k);
    let mut cur = p;
    let mut capped = false;
    for l in 0..k {
        let (e, integral) = leg(cur, force, st, st.t_cap);
        damping.push((-(integral + st.lambda * e.t_b)).exp());
        weight_ratio.push(w_tilde(&st.weight, cur.v) / w_tilde(&st.weight, e.v_b));
        if e.capped {
            points.push(PhasePoint::new(cur.t - e.t_b, e.x_b, e.v_b));
            capped = true;
            break;
        }
        let wall = e.wall.unwrap();
        if l + 1 == k {
            points.push(PhasePoint::new(cur.t - e.t_b, e.x_b, e.v_b));
        } else {
            let v = sample_wall_velocity(wall, rng);
            cur = PhasePoint::new(cur.t - e.t_b, e.x_b, v);
            points.push(cur);
        }
    }
    Cycle {
        points,
        damping,
        weight_ratio,
        capped,
    }
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CycleEstimate {
    pub k: usize,
    pub estimate: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Estimates `∫ 1_{t_k > s} dΣ_{k-1}` with `s = t - T₀`.
///
/// Each sample starts on wall 1 at `t = 0` with a velocity drawn from `dσ`,
/// so that every leg, the first included, is a sampled wall-to-wall leg.
/// The factor of a sample is the product over legs of the damping and
/// weight-ratio terms (when enabled), times the survival indicator.
pub fn cycle_measure_estimate(
    force: &dyn Force,
    t0: f64,
    k: usize,
    n_mc: usize,
    seed: u64,
    st: &CycleSettings,
) -> CycleEstimate {
    cycle_measure_estimates(force, t0, &[k], n_mc, seed, st)[0]
}

/// [`cycle_measure_estimate`] for several `k` at once. Every sample walks
/// `max k` legs and contributes its prefix values, so the estimates share
/// their random numbers and cost one walk.
pub fn cycle_measure_estimates(
    force: &dyn Force,
    t0: f64,
    ks: &[usize],
    n_mc: usize,
    seed: u64,
    st: &CycleSettings,
) -> Vec<CycleEstimate> {
    const CHUNK: usize = 4096;
    let k_max = ks.iter().copied().max().unwrap_or(0);
    let chunks = n_mc.div_ceil(CHUNK);
    let sums: Vec<(Vec<f64>, Vec<f64>, usize)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(c as u64));
            let count = CHUNK.min(n_mc - c * CHUNK);
            let (mut s1, mut s2) = (vec![0.0; ks.len()], vec![0.0; ks.len()]);
            let mut values = vec![0.0; k_max];
            for _ in 0..count {
                let v = sample_wall_velocity(1, &mut rng);
                cycle_values(
                    PhasePoint::new(0.0, 1.0, v),
                    force,
                    t0,
                    &mut rng,
                    st,
                    &mut values,
                );
                for (j, &k) in ks.iter().enumerate() {
                    let x = if k == 0 { 1.0 } else { values[k - 1] };
                    s1[j] += x;
                    s2[j] += x * x;
                }
            }
            (s1, s2, count)
        })
        .collect();
    let n: usize = sums.iter().map(|c| c.2).sum();
    ks.iter()
        .enumerate()
        .map(|(j, &k)| {
            let s1: f64 = sums.iter().map(|c| c.0[j]).sum();
            let s2: f64 = sums.iter().map(|c| c.1[j]).sum();
            let mean = s1 / n as f64;
            let var = (s2 / n as f64 - mean * mean).max(0.0);
            CycleEstimate {
                k,
                estimate: mean,
                stderr: (var / n as f64).sqrt(),
                samples: n,
            }
        })
        .collect()
}

/// Fills `out[l]` with the value of the cycle truncated after `l + 1` legs.
fn cycle_values<R: Rng>(
    p: PhasePoint,
    force: &dyn Force,
    t0: f64,
    rng: &mut R,
    st: &CycleSettings,
    out: &mut [f64],
) {
    out.iter_mut().for_each(|x| *x = 0.0);
    let s_lim = p.t - t0;
    let mut cur = p;
    let mut factor = 1.0;
    for l in 0..out.len() {
        // A leg longer than the time left cannot survive; stop it there.
        let remaining = cur.t - s_lim;
        let (e, integral) = leg(cur, force, st, st.t_cap.min(remaining));
        if e.capped {
            return;
        }
        let t_next = cur.t - e.t_b;
        if t_next <= s_lim {
            return;
        }
        if st.with_factors {
            factor *= (-(integral + st.lambda * e.t_b)).exp() * w_tilde(&st.weight, cur.v)
                / w_tilde(&st.weight, e.v_b);
        }
        out[l] = factor;
        if l + 1 < out.len() {
            let v = sample_wall_velocity(e.wall.unwrap(), rng);
            cur = PhasePoint::new(t_next, e.x_b, v);
        }
    }
}
