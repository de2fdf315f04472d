//! Diffuse reflection at both walls, at the level of `F` and of the
//! perturbation `f` (`F = μ + √μ f`), plus wall flux diagnostics.
//!
//! Half-space integrals reuse the velocity-grid weights. Every flux-matching
//! constant is normalized by the same discrete sum, so projection and flux
//! balance hold to rounding on the grid.

use serde::Serialize;

use crate::grid::{on_side, outward_normal, BoundaryTrace, Side, VelocitySpace};
use crate::wall::{maxwellian, wall_maxwellian_at};

/// `Σ_{out} w(v) g(v) |v₁|` over the outgoing half at `wall`.
pub fn outgoing_flux(space: &VelocitySpace, wall: usize, g: &[f64]) -> f64 {
    half_sum(space, wall, Side::Outgoing, g)
}

fn half_sum(space: &VelocitySpace, wall: usize, side: Side, g: &[f64]) -> f64 {
    space
        .nodes()
        .iter()
        .zip(space.weights())
        .zip(g)
        .filter(|((v, _), _)| on_side(v[0], wall, side))
        .map(|((v, w), x)| w * x * v[0].abs())
        .sum()
}

/// Discrete `∫_{n·v>0} μ |v₁| dv`, the grid value of `1/√(2π)`.
pub fn flux_of_mu(space: &VelocitySpace) -> f64 {
    let mu: Vec<f64> = space.sqrt_mu().iter().map(|s| s * s).collect();
    outgoing_flux(space, 0, &mu)
}

/// `P_γ` at one wall: the incoming half is `√μ · Φ(f√μ)/Φ(μ)` where `Φ` is the
/// outgoing flux sum; the outgoing half of the result is zero.
pub fn p_gamma(space: &VelocitySpace, wall: usize, f_out: &[f64]) -> Vec<f64> {
    let sm = space.sqrt_mu();
    let weighted: Vec<f64> = f_out.iter().zip(sm).map(|(f, s)| f * s).collect();
    let c = outgoing_flux(space, wall, &weighted) / flux_of_mu(space);
    space
        .nodes()
        .iter()
        .zip(sm)
        .map(|(v, s)| {
            if on_side(v[0], wall, Side::Incoming) {
                c * s
            } else {
                0.0
            }
        })
        .collect()
}

/// `P_γ` applied slice by slice to an outgoing trace.
pub fn p_gamma_trace(space: &VelocitySpace, out: &BoundaryTrace) -> BoundaryTrace {
    let mut res = BoundaryTrace::zeros(out.n_t(), out.n_v());
    for n in 0..out.n_t() {
        for wall in 0..2 {
            res.at_mut(n, wall)
                .copy_from_slice(&p_gamma(space, wall, out.at(n, wall)));
        }
    }
    res
}

/// Wall Maxwellian at wall position `x_w`, normalized so that its incoming
/// flux sum is one.
pub fn normalized_wall_maxwellian(space: &VelocitySpace, x_w: f64) -> Vec<f64> {
    let m: Vec<f64> = space
        .nodes()
        .iter()
        .map(|v| wall_maxwellian_at(x_w, *v))
        .collect();
    let s = half_sum(space, 0, Side::Incoming, &m);
    m.iter().map(|x| x / s).collect()
}

/// Diffuse reflection of an `F` trace at wall position `x_w`: incoming values
/// are the wall Maxwellian carrying exactly the outgoing mass flux. Both walls
/// use the fixed-frame wall Maxwellian. Returns the incoming half (outgoing
/// half zero) and whether the input had negative entries.
pub fn diffuse_reflect_f(
    space: &VelocitySpace,
    x_w: f64,
    wall: usize,
    f_out: &[f64],
) -> (Vec<f64>, bool) {
    let negative = space
        .nodes()
        .iter()
        .zip(f_out)
        .any(|(v, x)| on_side(v[0], wall, Side::Outgoing) && *x < 0.0);
    let flux = outgoing_flux(space, wall, f_out);
    let m = normalized_wall_maxwellian(space, x_w);
    let out = space
        .nodes()
        .iter()
        .zip(m)
        .map(|(v, m)| {
            if on_side(v[0], wall, Side::Incoming) {
                flux * m
            } else {
                0.0
            }
        })
        .collect();
    (out, negative)
}

/// Per-wall data of the linearized reflection `f_in = M̂_w Φ(√μ f)/√μ`.
#[derive(Debug, Clone)]
pub struct WallReflector {
    /// `M̂_w/√μ` on incoming nodes, zero elsewhere, per wall.
    pub(crate) gain: [Vec<f64>; 2],
    /// `(M̂_w Φ_μ − μ)/√μ` on incoming nodes, per wall.
    pub(crate) source: [Vec<f64>; 2],
    pub(crate) flux_mu: f64,
}

impl WallReflector {
    pub fn new(space: &VelocitySpace, x_w: f64) -> Self {
        let m = normalized_wall_maxwellian(space, x_w);
        let flux_mu = flux_of_mu(space);
        let sm = space.sqrt_mu();
        let make = |wall: usize, src: bool| -> Vec<f64> {
            space
                .nodes()
                .iter()
                .enumerate()
                .map(|(k, v)| {
                    if !on_side(v[0], wall, Side::Incoming) {
                        0.0
                    } else if src {
                        (m[k] * flux_mu - sm[k] * sm[k]) / sm[k]
                    } else {
                        m[k] / sm[k]
                    }
                })
                .collect()
        };
        Self {
            gain: [make(0, false), make(1, false)],
            source: [make(0, true), make(1, true)],
            flux_mu,
        }
    }

    /// Full linearized reflection of the outgoing `f` trace.
    pub fn reflect(&self, space: &VelocitySpace, wall: usize, f_out: &[f64]) -> Vec<f64> {
        let phi = weighted_out_flux(space, wall, f_out);
        self.gain[wall].iter().map(|g| g * phi).collect()
    }

    /// `(M̂_w Φ_μ − μ)/√μ` at `wall`: the reflection of `F = μ` minus `μ`.
    pub fn offset(&self, wall: usize) -> &[f64] {
        &self.source[wall]
    }

    /// The inhomogeneous part `r` of `f_in = P_γ f + r`.
    pub fn source(&self, space: &VelocitySpace, wall: usize, f_out: &[f64]) -> Vec<f64> {
        let phi = weighted_out_flux(space, wall, f_out);
        let c = 1.0 + phi / self.flux_mu;
        self.source[wall].iter().map(|s| s * c).collect()
    }
}

fn weighted_out_flux(space: &VelocitySpace, wall: usize, f_out: &[f64]) -> f64 {
    let sm = space.sqrt_mu();
    space
        .nodes()
        .iter()
        .zip(space.weights())
        .enumerate()
        .filter(|(_, (v, _))| on_side(v[0], wall, Side::Outgoing))
        .map(|(k, (v, w))| w * f_out[k] * sm[k] * v[0].abs())
        .sum()
}

/// `r = (M̂_w Φ_μ − μ)/√μ · (1 + Φ(√μ f)/Φ_μ)` on the incoming half at one
/// wall, for wall position `x_w`.
pub fn nonlinear_boundary_source(
    space: &VelocitySpace,
    x_w: f64,
    wall: usize,
    f_out: &[f64],
) -> Vec<f64> {
    WallReflector::new(space, x_w).source(space, wall, f_out)
}

/// `⟨r, √μ⟩` over the incoming half at one wall.
pub fn incoming_mass_flux(space: &VelocitySpace, wall: usize, r: &[f64]) -> f64 {
    let g: Vec<f64> = r.iter().zip(space.sqrt_mu()).map(|(a, b)| a * b).collect();
    half_sum(space, wall, Side::Incoming, &g)
}

/// Wall-normal fluxes of an `F` trace (both halves filled), positive outward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Fluxes {
    pub mass: f64,
    pub momentum: f64,
    pub energy: f64,
}

pub fn flux_functionals(space: &VelocitySpace, wall: usize, f: &[f64]) -> Fluxes {
    let n = outward_normal(wall);
    let mut out = Fluxes {
        mass: 0.0,
        momentum: 0.0,
        energy: 0.0,
    };
    for ((v, w), x) in space.nodes().iter().zip(space.weights()).zip(f) {
        let vn = n * v[0];
        let e = 0.5 * (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        out.mass += w * x * vn;
        out.momentum += w * x * vn * v[0];
        out.energy += w * x * vn * e;
    }
    out
}

/// `μ` sampled on the nodes.
pub fn mu_trace(space: &VelocitySpace) -> Vec<f64> {
    space.nodes().iter().map(|v| maxwellian(*v)).collect()
}
