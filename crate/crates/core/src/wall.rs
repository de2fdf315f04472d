//! Oscillating wall trajectory, the moving-to-fixed time change and the
//! Maxwellian reference states.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// Construction guard on the amplitude. Keeps `X_w` well away from zero.
pub const DELTA_MAX: f64 = 0.5;

/// `(2π)^{-3/2}`
pub const MAXWELL_NORM: f64 = 0.063_493_635_934_240_97;

/// One-periodic wall profile `s(θ)` evaluated on `θ ∈ [0, 1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    Sine,
    Cosine,
    /// Equispaced samples over one period, interpolated by the trigonometric
    /// polynomial through them so that `s`, `s'`, `s''` are smooth.
    CustomTable {
        samples: Vec<f64>,
    },
}

impl Shape {
    /// Returns `(s, s', s'')` with derivatives taken in `θ`.
    fn eval(&self, theta: f64) -> (f64, f64, f64) {
        let w = 2.0 * PI;
        match self {
            Shape::Sine => {
                let (s, c) = (w * theta).sin_cos();
                (s, w * c, -w * w * s)
            }
            Shape::Cosine => {
                let (s, c) = (w * theta).sin_cos();
                (c, -w * s, -w * w * c)
            }
            Shape::CustomTable { samples } => trig_interp(samples, theta),
        }
    }
}

/// Trigonometric interpolant through equispaced periodic samples.
fn trig_interp(samples: &[f64], theta: f64) -> (f64, f64, f64) {
    let n = samples.len();
    let nf = n as f64;
    let half = n / 2;
    let mut out = (0.0, 0.0, 0.0);
    for k in 0..=half {
        let (mut a, mut b) = (0.0, 0.0);
        for (j, &s) in samples.iter().enumerate() {
            let ang = 2.0 * PI * (k * j) as f64 / nf;
            a += s * ang.cos();
            b += s * ang.sin();
        }
        let mut scale = 2.0 / nf;
        if k == 0 || (n % 2 == 0 && k == half) {
            scale = 1.0 / nf;
        }
        let (a, b) = (a * scale, b * scale);
        let kw = 2.0 * PI * k as f64;
        let (sn, cs) = (kw * theta).sin_cos();
        out.0 += a * cs + b * sn;
        out.1 += kw * (-a * sn + b * cs);
        out.2 += -kw * kw * (a * cs + b * sn);
    }
    out
}

/// Wall trajectory `X_w(t) = 1 + δ s(t/T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WallMotion {
    delta: f64,
    period: f64,
    shape: Shape,
}

/// Sampled wall state at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallState {
    pub position: f64,
    pub velocity: f64,
    pub acceleration: f64,
}

impl WallMotion {
    pub fn new(delta: f64, period: f64, shape: Shape) -> Result<Self> {
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(config_err("wall.delta", "must be finite and non-negative"));
        }
        if delta > DELTA_MAX {
            return Err(config_err(
                "wall.delta",
                format!("{delta} exceeds the guard {DELTA_MAX}"),
            ));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(config_err("wall.period", "must be positive"));
        }
        if let Shape::CustomTable { samples } = &shape {
            if samples.len() < 3 || samples.iter().any(|s| !s.is_finite()) {
                return Err(config_err(
                    "wall.shape",
                    "custom table needs at least 3 finite samples",
                ));
            }
        }
        let m = Self {
            delta,
            period,
            shape,
        };
        let min_x = (0..4096)
            .map(|j| m.state(period * j as f64 / 4096.0).position)
            .fold(f64::INFINITY, f64::min);
        if min_x <= 0.0 {
            return Err(config_err("wall.delta", "wall position reaches zero"));
        }
        Ok(m)
    }

    pub fn sine(delta: f64, period: f64) -> Result<Self> {
        Self::new(delta, period, Shape::Sine)
    }

    pub fn stationary() -> Self {
        Self {
            delta: 0.0,
            period: 1.0,
            shape: Shape::Sine,
        }
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    /// `(X_w, V_w, A_w)` at time `t`. The profile is evaluated on `t mod T`.
    pub fn state(&self, t: f64) -> WallState {
        if self.delta == 0.0 {
            return WallState {
                position: 1.0,
                velocity: 0.0,
                acceleration: 0.0,
            };
        }
        let tau = t.rem_euclid(self.period);
        let (s, ds, dds) = self.shape.eval(tau / self.period);
        WallState {
            position: 1.0 + self.delta * s,
            velocity: self.delta * ds / self.period,
            acceleration: self.delta * dds / (self.period * self.period),
        }
    }

    /// `sup|X_w-1| + sup|V_w| + sup|A_w|` sampled over one period.
    pub fn c2_norm(&self) -> f64 {
        let (mut a, mut b, mut c) = (0.0f64, 0.0f64, 0.0f64);
        for j in 0..4096 {
            let st = self.state(self.period * j as f64 / 4096.0);
            a = a.max((st.position - 1.0).abs());
            b = b.max(st.velocity.abs());
            c = c.max(st.acceleration.abs());
        }
        a + b + c
    }
}

/// Wall state as a free function.
pub fn wall_state(m: &WallMotion, t: f64) -> (f64, f64, f64) {
    let s = m.state(t);
    (s.position, s.velocity, s.acceleration)
}

const GL8_NODES: [f64; 8] = [
    -0.960_289_856_497_536_2,
    -0.796_666_477_413_626_7,
    -0.525_532_409_916_329_0,
    -0.183_434_642_495_649_8,
    0.183_434_642_495_649_8,
    0.525_532_409_916_329_0,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL8_WEIGHTS: [f64; 8] = [
    0.101_228_536_290_376_26,
    0.222_381_034_453_374_47,
    0.313_706_645_877_887_3,
    0.362_683_783_378_362_0,
    0.362_683_783_378_362_0,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_47,
    0.101_228_536_290_376_26,
];

/// Monotone table for `t̄(t) = ∫₀ᵗ X_w⁻²`.
#[derive(Debug, Clone)]
pub struct FrameClock {
    wall: WallMotion,
    /// Panel edges in `t` over one period.
    edges: Vec<f64>,
    /// `t̄` at the panel edges.
    cumulative: Vec<f64>,
    period_bar: f64,
    /// Periodic table of `a(t̄) = -X_w³ A_w` used by the force sampler.
    accel_table: Vec<f64>,
}

const CLOCK_PANELS: usize = 512;
const ACCEL_TABLE: usize = 16384;

impl FrameClock {
    pub fn new(wall: &WallMotion) -> Self {
        let period = wall.period();
        let edges: Vec<f64> = (0..=CLOCK_PANELS)
            .map(|k| period * k as f64 / CLOCK_PANELS as f64)
            .collect();
        let mut cumulative = Vec::with_capacity(CLOCK_PANELS + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 0..CLOCK_PANELS {
            acc += gl_integral(wall, edges[k], edges[k + 1]);
            cumulative.push(acc);
        }
        let period_bar = acc;
        let mut clock = Self {
            wall: wall.clone(),
            edges,
            cumulative,
            period_bar,
            accel_table: Vec::new(),
        };
        clock.accel_table = (0..ACCEL_TABLE)
            .map(|j| clock.accel_exact(period_bar * j as f64 / ACCEL_TABLE as f64))
            .collect();
        clock
    }

    pub fn wall(&self) -> &WallMotion {
        &self.wall
    }

    /// Transformed period `T̄`.
    pub fn period_bar(&self) -> f64 {
        self.period_bar
    }

    /// Table entries `(t, t̄)` over one period.
    pub fn table(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.edges
            .iter()
            .copied()
            .zip(self.cumulative.iter().copied())
    }

    pub fn forward(&self, t: f64) -> f64 {
        if self.wall.delta() == 0.0 {
            return t;
        }
        let period = self.wall.period();
        let k = (t / period).floor();
        let mut tau = t - k * period;
        if tau >= period {
            tau -= period;
        }
        let panel = ((tau / period * CLOCK_PANELS as f64) as usize).min(CLOCK_PANELS - 1);
        k * self.period_bar
            + self.cumulative[panel]
            + gl_integral(&self.wall, self.edges[panel], tau)
    }

    pub fn inverse(&self, t_bar: f64) -> f64 {
        if self.wall.delta() == 0.0 {
            return t_bar;
        }
        let period = self.wall.period();
        let k = (t_bar / self.period_bar).floor();
        let mut target = t_bar - k * self.period_bar;
        if target >= self.period_bar {
            target -= self.period_bar;
        }
        let panel = match self
            .cumulative
            .binary_search_by(|c| c.partial_cmp(&target).unwrap())
        {
            Ok(i) => i.min(CLOCK_PANELS - 1),
            Err(i) => (i - 1).min(CLOCK_PANELS - 1),
        };
        let (c0, c1) = (self.cumulative[panel], self.cumulative[panel + 1]);
        let (e0, e1) = (self.edges[panel], self.edges[panel + 1]);
        let mut tau = e0 + (target - c0) / (c1 - c0) * (e1 - e0);
        for _ in 0..8 {
            let x = self.wall.state(tau).position;
            let resid = c0 + gl_integral(&self.wall, e0, tau) - target;
            let step = resid * x * x;
            tau -= step;
            if step.abs() < 1e-15 * period {
                break;
            }
        }
        k * period + tau
    }

    /// `G(t̄, x̄) = -x̄ X_w³ A_w` with the wall evaluated at `t(t̄)`.
    pub fn force_exact(&self, t_bar: f64, x_bar: f64) -> f64 {
        x_bar * self.accel_exact(t_bar)
    }

    fn accel_exact(&self, t_bar: f64) -> f64 {
        let st = self.wall.state(self.inverse(t_bar));
        -st.position.powi(3) * st.acceleration
    }

    /// Table-interpolated `-X_w³ A_w` at `t̄` (periodic cubic Lagrange).
    pub fn accel_coefficient(&self, t_bar: f64) -> f64 {
        if self.wall.delta() == 0.0 {
            return 0.0;
        }
        let n = ACCEL_TABLE;
        let u = (t_bar / self.period_bar).rem_euclid(1.0) * n as f64;
        let i = u.floor() as isize;
        let s = u - i as f64;
        let at = |j: isize| self.accel_table[j.rem_euclid(n as isize) as usize];
        let (p0, p1, p2, p3) = (at(i - 1), at(i), at(i + 1), at(i + 2));
        let w0 = -s * (s - 1.0) * (s - 2.0) / 6.0;
        let w1 = (s + 1.0) * (s - 1.0) * (s - 2.0) / 2.0;
        let w2 = -(s + 1.0) * s * (s - 2.0) / 2.0;
        let w3 = (s + 1.0) * s * (s - 1.0) / 6.0;
        w0 * p0 + w1 * p1 + w2 * p2 + w3 * p3
    }

    /// Force used along characteristics.
    pub fn force(&self, t_bar: f64, x_bar: f64) -> f64 {
        x_bar * self.accel_coefficient(t_bar)
    }

    /// Sampled `sup |G|` over the period and `x̄ ∈ [0, 1]`.
    pub fn force_sup(&self) -> f64 {
        self.accel_table.iter().fold(0.0f64, |m, a| m.max(a.abs()))
    }

    /// Wall position at transformed time.
    pub fn wall_position(&self, t_bar: f64) -> f64 {
        self.wall.state(self.inverse(t_bar)).position
    }
}

fn gl_integral(m: &WallMotion, a: f64, b: f64) -> f64 {
    let (mid, half) = ((a + b) / 2.0, (b - a) / 2.0);
    let mut s = 0.0;
    for (x, w) in GL8_NODES.iter().zip(GL8_WEIGHTS.iter()) {
        let p = m.state(mid + half * x).position;
        s += w / (p * p);
    }
    s * half
}

pub fn time_forward(c: &FrameClock, t: f64) -> f64 {
    c.forward(t)
}

pub fn time_inverse(c: &FrameClock, t_bar: f64) -> f64 {
    c.inverse(t_bar)
}

pub fn force(c: &FrameClock, t_bar: f64, x_bar: f64) -> f64 {
    c.force_exact(t_bar, x_bar)
}

/// Global Maxwellian `μ(v)`.
pub fn maxwellian(v: [f64; 3]) -> f64 {
    MAXWELL_NORM * (-0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2])).exp()
}

/// Wall Maxwellian in the moving frame, shifted by the wall velocity.
pub fn wall_maxwellian_moving(m: &WallMotion, t: f64, v: [f64; 3]) -> f64 {
    let vw = m.state(t).velocity;
    maxwellian([v[0] - vw, v[1], v[2]])
}

/// Wall Maxwellian in the fixed frame, given the wall position.
pub fn wall_maxwellian_at(x_w: f64, v: [f64; 3]) -> f64 {
    let a = v[0] / x_w;
    MAXWELL_NORM / (x_w * x_w) * (-0.5 * (a * a + v[1] * v[1] + v[2] * v[2])).exp()
}

/// Wall Maxwellian `μ̄_w(t̄, v̄)` in the fixed frame.
pub fn wall_maxwellian_fixed(c: &FrameClock, t_bar: f64, v: [f64; 3]) -> f64 {
    wall_maxwellian_at(c.wall_position(t_bar), v)
}

/// Local Maxwellian `M(t, x, v)` adapted to the moving frame.
pub fn local_maxwellian(m: &WallMotion, t: f64, x: f64, v: [f64; 3]) -> f64 {
    let st = m.state(t);
    let a = v[0] * st.position - x * st.velocity;
    MAXWELL_NORM * (-0.5 * (a * a + v[1] * v[1] + v[2] * v[2])).exp()
}
