//! Independent quadrature oracles shared by the integration tests and the
//! acceptance report.
#![allow(dead_code)]

use std::f64::consts::PI;

use kinetics_core::collision::{gauss_legendre, grad_kernel};
use kinetics_core::wall::maxwellian;

pub type V3 = [f64; 3];

pub fn add(a: V3, b: V3, s: f64) -> V3 {
    [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]]
}

pub fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn sqrt_mu(v: V3) -> f64 {
    maxwellian(v).sqrt()
}

/// Gauss–Legendre on `[a, b]`.
pub fn gl(n: usize, a: f64, b: f64) -> Vec<(f64, f64)> {
    let (x, w) = gauss_legendre(n);
    x.iter()
        .zip(&w)
        .map(|(x, w)| (0.5 * (a + b) + 0.5 * (b - a) * x, 0.5 * (b - a) * w))
        .collect()
}

/// Product rule on the unit sphere with the pole along `axis`:
/// Gauss–Legendre in `cos θ` on `[c0, c1]`, trapezoid in `φ`.
pub fn sphere_rule(axis: V3, n_cos: usize, n_phi: usize, c0: f64, c1: f64) -> Vec<(V3, f64)> {
    let a = {
        let n = dot(axis, axis).sqrt();
        [axis[0] / n, axis[1] / n, axis[2] / n]
    };
    let helper = if a[0].abs() < 0.9 {
        [1.0, 0.0, 0.0]
    } else {
        [0.0, 1.0, 0.0]
    };
    let e1 = {
        let p = add(helper, a, -dot(helper, a));
        let n = dot(p, p).sqrt();
        [p[0] / n, p[1] / n, p[2] / n]
    };
    let e2 = [
        a[1] * e1[2] - a[2] * e1[1],
        a[2] * e1[0] - a[0] * e1[2],
        a[0] * e1[1] - a[1] * e1[0],
    ];
    let mut out = Vec::with_capacity(n_cos * n_phi);
    for (c, wc) in gl(n_cos, c0, c1) {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for j in 0..n_phi {
            let phi = 2.0 * PI * j as f64 / n_phi as f64;
            let d = add(add(scale(a, c), e1, s * phi.cos()), e2, s * phi.sin());
            out.push((d, wc * 2.0 * PI / n_phi as f64));
        }
    }
    out
}

pub fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// `∫ h(v + r e) r² dr de` over the ball of radius `r_max` around `v`.
pub fn ball_integral(v: V3, r_max: f64, h: &dyn Fn(V3, f64, V3) -> f64) -> f64 {
    let radial: Vec<(f64, f64)> = gl(24, 0.0, 3.0)
        .into_iter()
        .chain(gl(24, 3.0, r_max))
        .collect();
    let dirs = sphere_rule([0.0, 0.0, 1.0], 16, 32, -1.0, 1.0);
    let mut s = 0.0;
    for (r, wr) in &radial {
        for (e, we) in &dirs {
            s += wr * we * r * r * h(add(v, *e, *r), *r, *e);
        }
    }
    s
}

/// `(Kf)(v)` straight from the collision integrals with `B = |(u−v)·ω|`:
/// gain `∫∫ B √μ(u)[√μ(u')f(v') + √μ(v')f(u')]` minus loss
/// `∫∫ B √μ(v)√μ(u) f(u)`.
pub fn k_by_collision_integral(v: V3, f: &dyn Fn(V3) -> f64) -> f64 {
    ball_integral(v, 10.0, &|u, r, e| {
        // Split the ω sphere at the plane ⊥ (u − v), where B has its kink.
        let mut acc = 0.0;
        for (c0, c1) in [(-1.0, 0.0), (0.0, 1.0)] {
            for (w, ww) in sphere_rule(e, 10, 20, c0, c1) {
                let proj = r * dot(e, w);
                let b = proj.abs();
                let u_p = add(u, w, -proj);
                let v_p = add(v, w, proj);
                let gain = sqrt_mu(u) * (sqrt_mu(u_p) * f(v_p) + sqrt_mu(v_p) * f(u_p));
                let loss = sqrt_mu(v) * sqrt_mu(u) * f(u);
                acc += ww * b * (gain - loss);
            }
        }
        acc
    })
}

pub fn k_by_kernel(v: V3, f: &dyn Fn(V3) -> f64) -> f64 {
    ball_integral(v, 10.0, &|u, _, _| grad_kernel(v, u).unwrap_or(0.0) * f(u))
}

/// Composite Gauss–Legendre on `[a, b]` with `panels` panels of 16 nodes.
pub fn composite(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|p| {
            gl(16, a + p as f64 * h, a + (p + 1) as f64 * h)
                .iter()
                .map(|(x, w)| w * f(*x))
                .sum::<f64>()
        })
        .sum()
}

/// `ν(v)` for `|v| = r` by radial quadrature: `ν = 2π ∫ |v−u| μ(u) du`,
/// and with `|u| = s` the spherical mean of `|v−u|` is
/// `((r+s)³ − |r−s|³)/(6rs)`.
pub fn nu_oracle(r: f64) -> f64 {
    let radial = |s: f64| {
        let mean = if r == 0.0 {
            s
        } else {
            ((r + s).powi(3) - (r - s).abs().powi(3)) / (6.0 * r * s)
        };
        2.0 * PI * 4.0 * PI * s * s * maxwellian([s, 0.0, 0.0]) * mean
    };
    // Panel edges land on s = r, where the mean has a kink.
    if r > 0.0 {
        composite(&radial, 0.0, r, 8) + composite(&radial, r, 14.0, 32)
    } else {
        composite(&radial, 0.0, 14.0, 32)
    }
}

/// `Γ(f, f)(v) = μ^{−1/2}(v) ∫∫ |(u−v)·ω| [F(u')F(v') − F(u)F(v)]` with
/// `F = √μ f`, by direct quadrature.
pub fn gamma_by_collision_integral(v: V3, big_f: &dyn Fn(V3) -> f64) -> f64 {
    ball_integral(v, 8.0, &|u, r, e| {
        let mut acc = 0.0;
        for (c0, c1) in [(-1.0, 0.0), (0.0, 1.0)] {
            for (w, ww) in sphere_rule(e, 6, 12, c0, c1) {
                let proj = r * dot(e, w);
                let u_p = add(u, w, -proj);
                let v_p = add(v, w, proj);
                acc += ww * proj.abs() * (big_f(u_p) * big_f(v_p) - big_f(u) * big_f(v));
            }
        }
        acc
    }) / sqrt_mu(v)
}

/// Adaptive Simpson with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb) = (f(a), f(b));
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 40)
}

/// Backward exit under a constant force from the roots of
/// `x − vτ + gτ²/2 ∈ {0, 1}`.
pub fn quadratic_exit(x: f64, v: f64, g: f64) -> (f64, usize) {
    let mut best = (f64::INFINITY, 0);
    for (wall, target) in [(0usize, 0.0), (1, 1.0)] {
        // (g/2) τ² − v τ + (x − target) = 0
        let (a, b, c) = (0.5 * g, -v, x - target);
        let roots: Vec<f64> = if a.abs() < 1e-300 {
            vec![-c / b]
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc < 0.0 {
                vec![]
            } else {
                let q = -0.5 * (b + b.signum() * disc.sqrt());
                vec![q / a, c / q]
            }
        };
        for r in roots {
            if r > 0.0 && r < best.0 {
                best = (r, wall);
            }
        }
    }
    best
}
