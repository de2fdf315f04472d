//! The change of variables between the moving domain `0 ≤ x ≤ X_w(t)` and the
//! fixed slab `0 ≤ x̄ ≤ 1`, and its check along characteristics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::characteristics::{default_step, integrate, PhasePoint, WallForce};
use crate::error::{KineticsError, Result};
use crate::wall::FrameClock;

/// Moving-frame point to fixed-frame point.
pub fn to_fixed(c: &FrameClock, p: PhasePoint) -> Result<PhasePoint> {
    let st = c.wall().state(p.t);
    if !(0.0..=st.position).contains(&p.x) || !p.x.is_finite() {
        return Err(KineticsError::Domain(format!(
            "x = {} outside [0, {}] at t = {}",
            p.x, st.position, p.t
        )));
    }
    Ok(to_fixed_unchecked(c, p))
}

fn to_fixed_unchecked(c: &FrameClock, p: PhasePoint) -> PhasePoint {
    let st = c.wall().state(p.t);
    // x = X_w exactly must give x̄ = 1 exactly.
    let x_bar = if p.x == st.position {
        1.0
    } else {
        p.x / st.position
    };
    PhasePoint {
        t: c.forward(p.t),
        x: x_bar,
        v: [p.v[0] * st.position - p.x * st.velocity, p.v[1], p.v[2]],
    }
}

/// Fixed-frame point to moving-frame point.
pub fn to_moving(c: &FrameClock, p: PhasePoint) -> Result<PhasePoint> {
    if !(0.0..=1.0).contains(&p.x) || !p.x.is_finite() {
        return Err(KineticsError::Domain(format!("x̄ = {} outside [0, 1]", p.x)));
    }
    let t = c.inverse(p.t);
    let st = c.wall().state(t);
    let x = p.x * st.position;
    Ok(PhasePoint {
        t,
        x,
        v: [(p.v[0] + x * st.velocity) / st.position, p.v[1], p.v[2]],
    })
}

/// Determinant of the numerical Jacobian of `(x, v₁) ↦ (x̄, v̄₁)` at fixed `t`.
pub fn jacobian_det(c: &FrameClock, p: PhasePoint) -> f64 {
    let h = 1e-6;
    let f = |x: f64, v1: f64| {
        let q = to_fixed_unchecked(c, PhasePoint::new(p.t, x, [v1, p.v[1], p.v[2]]));
        (q.x, q.v[0])
    };
    let (xp, vp) = f(p.x + h, p.v[0]);
    let (xm, vm) = f(p.x - h, p.v[0]);
    let (xq, vq) = f(p.x, p.v[0] + h);
    let (xr, vr) = f(p.x, p.v[0] - h);
    let j = [
        [(xp - xm) / (2.0 * h), (xq - xr) / (2.0 * h)],
        [(vp - vm) / (2.0 * h), (vq - vr) / (2.0 * h)],
    ];
    j[0][0] * j[1][1] - j[0][1] * j[1][0]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EquivalenceStats {
    pub max_deviation: f64,
    pub mean_deviation: f64,
    pub samples: usize,
}

/// Traces free moving-frame characteristics `x(s) = x − v₁(t − s)` backward
/// over a random duration, maps both ends to the fixed frame and compares the
/// mapped end with the forced fixed-frame characteristic started from the
/// mapped start. `time_shift` is added to every start time.
pub fn equivalence_residual(
    c: &FrameClock,
    n_samples: usize,
    seed: u64,
    time_shift: f64,
) -> EquivalenceStats {
    let force = WallForce { clock: c };
    let h = default_step(&force);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let period = c.wall().period();
    let (mut max_dev, mut sum_dev) = (0.0f64, 0.0);
    let mut count = 0;
    while count < n_samples {
        let t = rng.gen::<f64>() * period + time_shift;
        let x_w = c.wall().state(t).position;
        let x = rng.gen_range(0.1..0.9) * x_w;
        let v = [
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
        ];
        let tau = rng.gen_range(0.0..0.25);
        let end = PhasePoint::new(t - tau, x - v[0] * tau, v);
        // Keep only paths that stay inside the moving domain.
        if !(0.0..=c.wall().state(end.t).position).contains(&end.x) {
            continue;
        }
        let start_bar = to_fixed_unchecked(c, PhasePoint::new(t, x, v));
        let end_bar = to_fixed_unchecked(c, end);
        let traced = integrate(start_bar, end_bar.t, &force, h).end();
        let dev = (traced.x - end_bar.x)
            .abs()
            .max((traced.v[0] - end_bar.v[0]).abs());
        max_dev = max_dev.max(dev);
        sum_dev += dev;
        count += 1;
    }
    EquivalenceStats {
        max_deviation: max_dev,
        mean_deviation: sum_dev / n_samples.max(1) as f64,
        samples: n_samples,
    }
}
