//! Hard-sphere collision machinery in the `√μ`-normalized setting:
//! the frequency `ν`, the Grad kernel of `K`, `L = ν − K`, the projection onto
//! collision invariants and the quadratic form `Γ`.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KineticsError, Result};
use crate::grid::{VelocitySpace, WeightFunction};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `ν(|v|)` for hard spheres: `2π E|v − Z|` with `Z` standard normal in 3D.
pub fn nu_speed(r: f64) -> f64 {
    let c = (2.0 / PI).sqrt();
    let mean = if r < 1e-4 {
        2.0 * c * (1.0 + r * r / 6.0)
    } else {
        c * (-0.5 * r * r).exp() + (r + 1.0 / r) * libm::erf(r / SQRT_2)
    };
    2.0 * PI * mean
}

pub fn nu(v: [f64; 3]) -> f64 {
    nu_speed((v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
}

/// `ν(0) = 4√(2π)`, the minimum of `ν`.
pub fn nu_min() -> f64 {
    4.0 * (2.0 * PI).sqrt()
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm_sq(a: [f64; 3]) -> f64 {
    a[0] * a[0] + a[1] * a[1] + a[2] * a[2]
}

/// Kernel of the loss-type part `∫∫ B √(μ(v)μ(u)) f(u)`.
pub fn kernel_loss(v: [f64; 3], u: [f64; 3]) -> f64 {
    INV_SQRT_2PI * norm_sq(sub(v, u)).sqrt() * (-0.25 * (norm_sq(v) + norm_sq(u))).exp()
}

/// Kernel of the gain-type part (both `ω`-integrals together).
pub fn kernel_gain(v: [f64; 3], u: [f64; 3]) -> Result<f64> {
    let d2 = norm_sq(sub(v, u));
    if d2 == 0.0 {
        return Err(KineticsError::SingularKernel);
    }
    let e = norm_sq(v) - norm_sq(u);
    Ok(4.0 * INV_SQRT_2PI / d2.sqrt() * (-d2 / 8.0 - e * e / (8.0 * d2)).exp())
}

/// `k(v, u)` with `Kf = ∫ k(v,u) f(u) du` and `L = ν − K`.
pub fn grad_kernel(v: [f64; 3], u: [f64; 3]) -> Result<f64> {
    Ok(kernel_gain(v, u)? - kernel_loss(v, u))
}

/// Integral of the leading singularity `(4/√(2π)) e^{-(v·n)²/2}/|v−u|` of the
/// gain kernel over the velocity cell centered at `v`.
pub fn diagonal_correction(v: [f64; 3], spacing: f64) -> f64 {
    let h = 0.5 * spacing;
    let (xs, ws) = gauss_legendre(16);
    let mut total = 0.0;
    // Six pyramids with apex at the cell center; one per face.
    for axis in 0..3 {
        for sign in [-1.0, 1.0] {
            let mut face = 0.0;
            for (a, wa) in xs.iter().zip(&ws) {
                for (b, wb) in xs.iter().zip(&ws) {
                    let mut y = [0.0; 3];
                    y[axis] = sign * h;
                    y[(axis + 1) % 3] = a * h;
                    y[(axis + 2) % 3] = b * h;
                    let r = norm_sq(y).sqrt();
                    let vn = (v[0] * y[0] + v[1] * y[1] + v[2] * y[2]) / r;
                    face += wa * wb * h * h * h * (-0.5 * vn * vn).exp() / (2.0 * r);
                }
            }
            total += face;
        }
    }
    4.0 * INV_SQRT_2PI * total
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                let (mut p0, mut p1) = (1.0, z);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

/// Grid-orthonormal basis of the collision invariants present in a space.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: Vec<Vec<f64>>,
    weights: Vec<f64>,
}

impl Projector {
    pub fn new(space: &VelocitySpace) -> Self {
        let weights = space.weights().to_vec();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for (_, mut c) in space.invariants() {
            for b in &basis {
                let d = space.dot(&c, b);
                c.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
            }
            let n = space.dot(&c, &c).sqrt();
            c.iter_mut().for_each(|x| *x /= n);
            basis.push(c);
        }
        Self { basis, weights }
    }

    pub fn basis(&self) -> &[Vec<f64>] {
        &self.basis
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    pub fn coefficients(&self, f: &[f64]) -> Vec<f64> {
        self.basis.iter().map(|b| self.dot(f, b)).collect()
    }

    /// `Pf`
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        for b in &self.basis {
            let c = self.dot(f, b);
            out.iter_mut().zip(b).for_each(|(o, x)| *o += c * x);
        }
        out
    }

    /// `(I − P)f` in place.
    pub fn remove(&self, f: &mut [f64]) {
        for b in &self.basis {
            let c = self.dot(f, b);
            f.iter_mut().zip(b).for_each(|(o, x)| *o -= c * x);
        }
    }
}

pub fn project_p(proj: &Projector, f: &[f64]) -> Vec<f64> {
    proj.project(f)
}

pub fn complement_p(proj: &Projector, f: &[f64]) -> Vec<f64> {
    let mut g = f.to_vec();
    proj.remove(&mut g);
    g
}

/// Dense kernel table on the stored velocity nodes.
///
/// `raw[a][b]` already carries quadrature weights (and the folded
/// multiplicities of the mirror storage), so `(Kf)_a = Σ_b raw[a][b] f_b`.
/// `conservative` is the table of `ν − (I−P)(ν−K)(I−P)`, whose `L` annihilates
/// the grid invariants exactly; solvers use it.
#[derive(Debug, Clone)]
pub struct CollisionKernelTable {
    n: usize,
    nu: Vec<f64>,
    diag_correction: Vec<f64>,
    raw: Vec<f64>,
    conservative: Vec<f64>,
    projector: Projector,
    weights: Vec<f64>,
}

impl CollisionKernelTable {
    pub fn build(space: &VelocitySpace) -> Self {
        let n = space.len();
        let grid = space.grid();
        let dv3 = grid.cell_volume();
        let n_full = grid.n_full();
        let nodes = space.nodes();
        let nu: Vec<f64> = nodes.iter().map(|v| nu(*v)).collect();
        let diag_correction: Vec<f64> = nodes
            .iter()
            .map(|v| diagonal_correction(*v, grid.spacing()))
            .collect();
        let mut raw = vec![0.0; n * n];
        raw.par_chunks_mut(n).enumerate().for_each(|(a, row)| {
            let v = nodes[a];
            let self_full = space.full_of_node(a);
            for j in 0..n_full {
                let u = grid.full_point(j);
                let b = space.node_of_full(j);
                if j == self_full {
                    row[b] += diag_correction[a];
                } else {
                    row[b] += grad_kernel(v, u).unwrap() * dv3;
                }
            }
        });
        let projector = Projector::new(space);
        let weights = space.weights().to_vec();
        let conservative = conservative_table(&raw, &nu, &projector, &weights);
        Self {
            n,
            nu,
            diag_correction,
            raw,
            conservative,
            projector,
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn nu(&self) -> &[f64] {
        &self.nu
    }

    pub fn diag_correction(&self) -> &[f64] {
        &self.diag_correction
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn projector(&self) -> &Projector {
        &self.projector
    }

    /// Raw quadrature of `Kf`.
    pub fn apply_k(&self, f: &[f64]) -> Vec<f64> {
        matvec(&self.raw, f, self.n)
    }

    /// `νf − Kf` with the raw table.
    pub fn apply_l(&self, f: &[f64]) -> Vec<f64> {
        let k = self.apply_k(f);
        f.iter()
            .zip(&self.nu)
            .zip(k)
            .map(|((x, nu), k)| nu * x - k)
            .collect()
    }

    /// `Kf` from the conservative table.
    pub fn apply_k_conservative(&self, f: &[f64]) -> Vec<f64> {
        matvec(&self.conservative, f, self.n)
    }

    pub fn apply_l_conservative(&self, f: &[f64]) -> Vec<f64> {
        let k = self.apply_k_conservative(f);
        f.iter()
            .zip(&self.nu)
            .zip(k)
            .map(|((x, nu), k)| nu * x - k)
            .collect()
    }

    /// Applies the conservative `K` to every row of `input` (rows of length
    /// `n`), writing `out = input · Kᵀ`.
    pub fn apply_k_rows(&self, input: &[f64], out: &mut [f64]) {
        let n = self.n;
        assert_eq!(input.len() % n, 0);
        assert_eq!(input.len(), out.len());
        let rows = input.len() / n;
        // SAFETY: the slices have the lengths implied by the strides.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                n,
                n,
                1.0,
                input.as_ptr(),
                n as isize,
                1,
                self.conservative.as_ptr(),
                1,
                n as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }

    /// Largest `|eigenvalue|` of the conservative `K` in the weighted
    /// inner product, by power iteration.
    pub fn operator_norm(&self, iterations: usize) -> f64 {
        let mut x: Vec<f64> = (0..self.n)
            .map(|i| 1.0 + 0.37 * ((i * 7919) % 13) as f64)
            .collect();
        let mut est = 0.0;
        for _ in 0..iterations {
            let y = self.apply_k_conservative(&x);
            let num = weighted_norm(&y, &self.weights);
            let den = weighted_norm(&x, &self.weights);
            est = num / den;
            x = y.iter().map(|v| v / num).collect();
        }
        est
    }

    /// Max `|L χ₀|` over the grid with the raw table.
    pub fn null_defect(&self, space: &VelocitySpace) -> f64 {
        self.apply_l(&space.chi(0))
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Max asymmetry of `W·raw` (the quadrature self-adjointness).
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.n;
        let mut d = 0.0f64;
        let mut scale = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let x = self.weights[a] * self.raw[a * n + b];
                let y = self.weights[b] * self.raw[b * n + a];
                d = d.max((x - y).abs());
                scale = scale.max(x.abs());
            }
        }
        d / scale
    }
}

fn weighted_norm(x: &[f64], w: &[f64]) -> f64 {
    x.iter().zip(w).map(|(a, w)| w * a * a).sum::<f64>().sqrt()
}

fn matvec(m: &[f64], f: &[f64], n: usize) -> Vec<f64> {
    m.chunks(n)
        .map(|row| row.iter().zip(f).map(|(a, b)| a * b).sum())
        .collect()
}

fn conservative_table(raw: &[f64], nu: &[f64], proj: &Projector, w: &[f64]) -> Vec<f64> {
    let n = nu.len();
    // L = diag(ν) − K, then L' = (I−Π) L (I−Π) with Π f = Σ e_i ⟨e_i, f⟩_w.
    let mut l = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            l[a * n + b] = -raw[a * n + b];
        }
        l[a * n + a] += nu[a];
    }
    let basis = proj.basis();
    // Right: L (I−Π): subtract (L e_i)(w e_i)ᵀ.
    for e in basis {
        let le = matvec(&l, e, n);
        for a in 0..n {
            for b in 0..n {
                l[a * n + b] -= le[a] * w[b] * e[b];
            }
        }
    }
    // Left: (I−Π) L: subtract e_i (w e_i)ᵀ L.
    for e in basis {
        let mut row = vec![0.0; n];
        for a in 0..n {
            let c = w[a] * e[a];
            if c != 0.0 {
                for b in 0..n {
                    row[b] += c * l[a * n + b];
                }
            }
        }
        for a in 0..n {
            for b in 0..n {
                l[a * n + b] -= e[a] * row[b];
            }
        }
    }
    // K' = ν − L'
    let mut k = vec![0.0; n * n];
    for a in 0..n {
        for b in 0..n {
            k[a * n + b] = -l[a * n + b];
        }
        k[a * n + a] += nu[a];
    }
    k
}

pub fn apply_k(table: &CollisionKernelTable, f: &[f64]) -> Vec<f64> {
    table.apply_k(f)
}

pub fn apply_l(table: &CollisionKernelTable, f: &[f64]) -> Vec<f64> {
    table.apply_l(f)
}

/// Symmetric spherical design used for the `ω` integral of `Γ`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SphericalDesign {
    /// One direction per antipodal pair.
    pub directions: Vec<[f64; 3]>,
    /// Weight of each pair (both members), summing to `4π`.
    pub weights: Vec<f64>,
}

impl SphericalDesign {
    /// `12` (icosahedron) or `32` (icosahedron plus dodecahedron) nodes.
    pub fn new(m_omega: usize) -> Result<Self> {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut pts: Vec<([f64; 3], f64)> = Vec::new();
        let (w_ico, w_dod) = match m_omega {
            12 => (4.0 * PI / 12.0, 0.0),
            32 => (4.0 * PI * 5.0 / 168.0, 4.0 * PI * 9.0 / 280.0),
            _ => {
                return Err(crate::error::config_err(
                    "collision.m_omega",
                    "supported designs have 12 or 32 nodes",
                ))
            }
        };
        for a in [-1.0, 1.0] {
            for b in [-phi, phi] {
                for p in [[0.0, a, b], [a, b, 0.0], [b, 0.0, a]] {
                    pts.push((p, w_ico));
                }
            }
        }
        if m_omega == 32 {
            for a in [-1.0, 1.0] {
                for b in [-1.0, 1.0] {
                    for c in [-1.0, 1.0] {
                        pts.push(([a, b, c], w_dod));
                    }
                }
            }
            for a in [-1.0 / phi, 1.0 / phi] {
                for b in [-phi, phi] {
                    for p in [[0.0, a, b], [a, b, 0.0], [b, 0.0, a]] {
                        pts.push((p, w_dod));
                    }
                }
            }
        }
        let mut directions = Vec::new();
        let mut weights = Vec::new();
        for (p, w) in pts {
            let n = norm_sq(p).sqrt();
            let d = [p[0] / n, p[1] / n, p[2] / n];
            // Keep the member of each antipodal pair with a positive leading
            // nonzero coordinate.
            let lead = d.iter().copied().find(|x| x.abs() > 1e-12).unwrap();
            if lead > 0.0 {
                directions.push(d);
                weights.push(2.0 * w);
            }
        }
        Ok(Self {
            directions,
            weights,
        })
    }

    pub fn len(&self) -> usize {
        2 * self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

/// How the gain part of `Γ` is integrated over `u`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaMethod {
    /// Sum over all grid nodes `u` for every design direction.
    Grid,
    /// For each direction `ω`, write `u = sω + p` with `p ⊥ ω`. The hard-sphere
    /// gain integrand then factors into a line integral in `s` times a plane
    /// integral in `p`, each done by Gauss rules.
    Split,
}

const LINE_HALF_WIDTH: f64 = 8.0;
const LINE_NODES: usize = 16;
const PLANE_NODES: usize = 10;

/// Quadrature of `Γ(f, g)` on the velocity grid.
///
/// The gain term is evaluated as `√μ(v) Σ_{u,ω} W |(v−u)·ω| μ(u) a(u') b(v')`
/// with `a = f/√μ`, `b = g/√μ` trilinearly interpolated between nodes
/// (clamped at the cube faces). The loss term is the grid sum with the same
/// `ω` design. With [`GammaMethod::Split`] each `(v, ω)` gain contribution is
/// rescaled so that its `a = b = 1` value equals the grid sum, which keeps
/// `Γ(√μ, √μ) = 0` exact.
#[derive(Debug, Clone)]
pub struct GammaOperator {
    space: VelocitySpace,
    design: SphericalDesign,
    method: GammaMethod,
    /// Folded loss matrix: `(Γ₋)(v) = g(v) Σ_b loss[v][b] f_b`.
    loss: Vec<f64>,
    mu_full: Vec<f64>,
    inv_sqrt_mu_full: Vec<f64>,
    /// Per `(v, ω)`: `Σ_u Δ³ |(v−u)·ω| μ(u)` divided by its split-quadrature value.
    split_scale: Vec<f64>,
    /// Per direction: orthonormal `(e₁, e₂)` spanning the plane `⊥ ω`.
    frames: Vec<([f64; 3], [f64; 3])>,
    plane: Vec<(f64, f64, f64)>,
    line: (Vec<f64>, Vec<f64>),
}

impl GammaOperator {
    pub fn new(space: &VelocitySpace, m_omega: usize) -> Result<Self> {
        Self::with_method(space, m_omega, GammaMethod::Split)
    }

    pub fn with_method(space: &VelocitySpace, m_omega: usize, method: GammaMethod) -> Result<Self> {
        let design = SphericalDesign::new(m_omega)?;
        let grid = space.grid();
        let n = space.len();
        let n_full = grid.n_full();
        let dv3 = grid.cell_volume();
        let mu_full: Vec<f64> = (0..n_full)
            .map(|j| crate::wall::maxwellian(grid.full_point(j)))
            .collect();
        let inv_sqrt_mu_full = mu_full.iter().map(|m| 1.0 / m.sqrt()).collect();
        let n_dir = design.directions.len();
        let mut loss = vec![0.0; n * n];
        let mut grid_sums = vec![0.0; n * n_dir];
        loss.par_chunks_mut(n)
            .zip(grid_sums.par_chunks_mut(n_dir))
            .enumerate()
            .for_each(|(a, (row, gs))| {
                let v = space.nodes()[a];
                for j in 0..n_full {
                    let u = grid.full_point(j);
                    let d = sub(v, u);
                    let mut s = 0.0;
                    for (k, (w, om)) in design.weights.iter().zip(&design.directions).enumerate() {
                        let b = (d[0] * om[0] + d[1] * om[1] + d[2] * om[2]).abs();
                        s += w * b;
                        gs[k] += b * mu_full[j] * dv3;
                    }
                    row[space.node_of_full(j)] += s * mu_full[j].sqrt() * dv3;
                }
            });
        let frames = design
            .directions
            .iter()
            .map(|om| {
                let t = if om[0].abs() < 0.9 {
                    [1.0, 0.0, 0.0]
                } else {
                    [0.0, 1.0, 0.0]
                };
                let d = t[0] * om[0] + t[1] * om[1] + t[2] * om[2];
                let mut e1 = [t[0] - d * om[0], t[1] - d * om[1], t[2] - d * om[2]];
                let n1 = norm_sq(e1).sqrt();
                e1.iter_mut().for_each(|x| *x /= n1);
                let e2 = [
                    om[1] * e1[2] - om[2] * e1[1],
                    om[2] * e1[0] - om[0] * e1[2],
                    om[0] * e1[1] - om[1] * e1[0],
                ];
                (e1, e2)
            })
            .collect();
        let (gx, gw) = gauss_hermite_prob(PLANE_NODES);
        let mut plane = Vec::new();
        for (x, wx) in gx.iter().zip(&gw) {
            for (y, wy) in gx.iter().zip(&gw) {
                plane.push((*x, *y, wx * wy));
            }
        }
        let line = gauss_legendre(LINE_NODES);
        let mut op = Self {
            space: space.clone(),
            design,
            method,
            loss,
            mu_full,
            inv_sqrt_mu_full,
            split_scale: Vec::new(),
            frames,
            plane,
            line,
        };
        let plane_total: f64 = op.plane.iter().map(|p| p.2).sum();
        op.split_scale = (0..n * n_dir)
            .map(|i| {
                let (a, k) = (i / n_dir, i % n_dir);
                let v = space.nodes()[a];
                let om = op.design.directions[k];
                let v_om = v[0] * om[0] + v[1] * om[1] + v[2] * om[2];
                let q: f64 = op
                    .line_nodes(v_om)
                    .iter()
                    .map(|(s, w)| w * (v_om - s).abs() * gauss1(*s))
                    .sum();
                grid_sums[i] / (q * plane_total)
            })
            .collect();
        Ok(op)
    }

    pub fn design(&self) -> &SphericalDesign {
        &self.design
    }

    pub fn method(&self) -> GammaMethod {
        self.method
    }

    /// Gauss–Legendre nodes on `[-S, S]` split at the kink `s = v·ω`.
    fn line_nodes(&self, v_om: f64) -> Vec<(f64, f64)> {
        let c = v_om.clamp(-LINE_HALF_WIDTH, LINE_HALF_WIDTH);
        let mut out = Vec::with_capacity(2 * LINE_NODES);
        for (lo, hi) in [(-LINE_HALF_WIDTH, c), (c, LINE_HALF_WIDTH)] {
            if hi - lo <= 0.0 {
                continue;
            }
            let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
            for (x, w) in self.line.0.iter().zip(&self.line.1) {
                out.push((mid + half * x, half * w));
            }
        }
        out
    }

    /// `Γ(f, g)` for a single pair of velocity vectors.
    pub fn gamma(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.gamma_rows(&[(f, g, 1.0)], 1, &mut out);
        out
    }

    /// Sum over `terms` of `c · Γ(fᵢ, gᵢ)` for `rows` stacked vectors.
    pub fn gamma_rows(&self, terms: &[(&[f64], &[f64], f64)], rows: usize, out: &mut [f64]) {
        let n = self.space.len();
        let n_full = self.space.grid().n_full();
        // Ratio fields a = f/√μ on the full grid, laid out [full][row].
        let ratio = |f: &[f64]| {
            let mut a = vec![0.0; n_full * rows];
            for j in 0..n_full {
                let node = self.space.node_of_full(j);
                let s = self.inv_sqrt_mu_full[j];
                for r in 0..rows {
                    a[j * rows + r] = f[r * n + node] * s;
                }
            }
            a
        };
        let ratios: Vec<(Vec<f64>, Vec<f64>, f64)> = terms
            .iter()
            .map(|(f, g, c)| (ratio(f), ratio(g), *c))
            .collect();
        let gain: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|a| match self.method {
                GammaMethod::Grid => self.gain_grid(a, &ratios, rows),
                GammaMethod::Split => self.gain_split(a, &ratios, rows),
            })
            .collect();
        out.iter_mut().for_each(|x| *x = 0.0);
        for (a, g) in gain.iter().enumerate() {
            for r in 0..rows {
                out[r * n + a] += g[r];
            }
        }
        // Loss: g(v) · (loss · f)(v).
        for (f, g, c) in terms {
            for r in 0..rows {
                let fr = &f[r * n..(r + 1) * n];
                let gr = &g[r * n..(r + 1) * n];
                for a in 0..n {
                    let row = &self.loss[a * n..(a + 1) * n];
                    let lf: f64 = row.iter().zip(fr).map(|(x, y)| x * y).sum();
                    out[r * n + a] -= c * gr[a] * lf;
                }
            }
        }
    }

    fn gain_grid(&self, a: usize, ratios: &[(Vec<f64>, Vec<f64>, f64)], rows: usize) -> Vec<f64> {
        let grid = self.space.grid();
        let nf = grid.n_per_axis();
        let dv3 = grid.cell_volume();
        let v = self.space.nodes()[a];
        let mut acc = vec![0.0; rows];
        let mut ia = vec![0.0; rows];
        let mut ib = vec![0.0; rows];
        for j in 0..grid.n_full() {
            let mu_u = self.mu_full[j];
            let u = grid.full_point(j);
            let d = sub(v, u);
            for (w, om) in self.design.weights.iter().zip(&self.design.directions) {
                let dot = d[0] * om[0] + d[1] * om[1] + d[2] * om[2];
                let c = w * dot.abs() * mu_u * dv3;
                if c == 0.0 {
                    continue;
                }
                let vp = [v[0] - dot * om[0], v[1] - dot * om[1], v[2] - dot * om[2]];
                let up = [u[0] + dot * om[0], u[1] + dot * om[1], u[2] + dot * om[2]];
                let sv = Stencil::new(grid, nf, vp);
                let su = Stencil::new(grid, nf, up);
                for (fa, gb, coef) in ratios {
                    su.interpolate(fa, rows, &mut ia);
                    sv.interpolate(gb, rows, &mut ib);
                    let cc = c * coef;
                    for r in 0..rows {
                        acc[r] += cc * ia[r] * ib[r];
                    }
                }
            }
        }
        let sm = self.space.sqrt_mu()[a];
        acc.iter_mut().for_each(|x| *x *= sm);
        acc
    }

    fn gain_split(&self, a: usize, ratios: &[(Vec<f64>, Vec<f64>, f64)], rows: usize) -> Vec<f64> {
        let grid = self.space.grid();
        let nf = grid.n_per_axis();
        let v = self.space.nodes()[a];
        let n_dir = self.design.directions.len();
        let mut acc = vec![0.0; rows];
        let mut tmp = vec![0.0; rows];
        let mut line = vec![vec![0.0; rows]; ratios.len()];
        let mut plane = vec![vec![0.0; rows]; ratios.len()];
        for k in 0..n_dir {
            let om = self.design.directions[k];
            let (e1, e2) = self.frames[k];
            let v_om = v[0] * om[0] + v[1] * om[1] + v[2] * om[2];
            let v_perp = [
                v[0] - v_om * om[0],
                v[1] - v_om * om[1],
                v[2] - v_om * om[2],
            ];
            line.iter_mut()
                .for_each(|l| l.iter_mut().for_each(|x| *x = 0.0));
            plane
                .iter_mut()
                .for_each(|l| l.iter_mut().for_each(|x| *x = 0.0));
            // Line factor: ∫ |v·ω − s| μ₁(s) b(v⊥ + sω) ds, the post-collision v'.
            for (s, w) in self.line_nodes(v_om) {
                let c = w * (v_om - s).abs() * gauss1(s);
                if c < 1e-300 {
                    continue;
                }
                let p = [
                    v_perp[0] + s * om[0],
                    v_perp[1] + s * om[1],
                    v_perp[2] + s * om[2],
                ];
                let st = Stencil::new(grid, nf, p);
                for (t, (_, gb, _)) in ratios.iter().enumerate() {
                    st.interpolate(gb, rows, &mut tmp);
                    line[t].iter_mut().zip(&tmp).for_each(|(l, x)| *l += c * x);
                }
            }
            // Plane factor: ∫ μ₂(p) a(p + (v·ω)ω) dp, the post-collision u'.
            for &(x, y, w) in &self.plane {
                let p = [
                    x * e1[0] + y * e2[0] + v_om * om[0],
                    x * e1[1] + y * e2[1] + v_om * om[1],
                    x * e1[2] + y * e2[2] + v_om * om[2],
                ];
                let st = Stencil::new(grid, nf, p);
                for (t, (fa, _, _)) in ratios.iter().enumerate() {
                    st.interpolate(fa, rows, &mut tmp);
                    plane[t].iter_mut().zip(&tmp).for_each(|(l, x)| *l += w * x);
                }
            }
            let scale = self.design.weights[k] * self.split_scale[a * n_dir + k];
            for (t, (_, _, coef)) in ratios.iter().enumerate() {
                let c = scale * coef;
                for r in 0..rows {
                    acc[r] += c * line[t][r] * plane[t][r];
                }
            }
        }
        let sm = self.space.sqrt_mu()[a];
        acc.iter_mut().for_each(|x| *x *= sm);
        acc
    }

    /// Moments `∫ Γ √μ (1, v, |v|²)` of a velocity vector. Momentum components
    /// that vanish by the storage symmetry are reported as zero.
    pub fn conservation_defects(&self, gam: &[f64]) -> [f64; 5] {
        let s = &self.space;
        let mut out = [0.0; 5];
        for (k, (v, w)) in s.nodes().iter().zip(s.weights()).enumerate() {
            let base = w * gam[k] * s.sqrt_mu()[k];
            out[0] += base;
            out[1] += base * v[0];
            out[2] += base * v[1];
            out[3] += base * v[2];
            out[4] += base * norm_sq(*v);
        }
        if s.symmetry() == crate::grid::Symmetry::Mirror {
            out[2] = 0.0;
            out[3] = 0.0;
        }
        out
    }
}

/// Standard normal density in one dimension.
fn gauss1(s: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * s * s).exp()
}

/// Gauss–Hermite rule for the standard normal weight (weights sum to 1).
pub fn gauss_hermite_prob(n: usize) -> (Vec<f64>, Vec<f64>) {
    use nalgebra::DMatrix;
    // Golub–Welsch on the probabilists' Hermite recurrence.
    let mut j = DMatrix::<f64>::zeros(n, n);
    for i in 1..n {
        let b = (i as f64).sqrt();
        j[(i, i - 1)] = b;
        j[(i - 1, i)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let x = eig.eigenvalues[i];
            let w = eig.eigenvectors[(0, i)].powi(2);
            (x, w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    (
        pairs.iter().map(|p| p.0).collect(),
        pairs.iter().map(|p| p.1).collect(),
    )
}

/// Trilinear stencil on the full grid, clamped to the node hull.
struct Stencil {
    base: usize,
    strides: [usize; 3],
    frac: [f64; 3],
    step: [usize; 3],
}

impl Stencil {
    #[inline]
    fn new(grid: &crate::grid::VelocityGrid, nf: usize, p: [f64; 3]) -> Self {
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        let mut step = [1usize; 3];
        for ax in 0..3 {
            let c = grid.axis_coordinate(p[ax]).clamp(0.0, (nf - 1) as f64);
            let mut i = c.floor() as usize;
            if i >= nf - 1 {
                i = nf - 2;
            }
            idx[ax] = i;
            frac[ax] = c - i as f64;
            step[ax] = 1;
        }
        let strides = [nf * nf, nf, 1];
        Self {
            base: idx[0] * strides[0] + idx[1] * strides[1] + idx[2],
            strides,
            frac,
            step,
        }
    }

    #[inline]
    fn interpolate(&self, field: &[f64], rows: usize, out: &mut [f64]) {
        let [fx, fy, fz] = self.frac;
        let w = [
            (1.0 - fx) * (1.0 - fy) * (1.0 - fz),
            (1.0 - fx) * (1.0 - fy) * fz,
            (1.0 - fx) * fy * (1.0 - fz),
            (1.0 - fx) * fy * fz,
            fx * (1.0 - fy) * (1.0 - fz),
            fx * (1.0 - fy) * fz,
            fx * fy * (1.0 - fz),
            fx * fy * fz,
        ];
        let sx = self.strides[0] * self.step[0];
        let sy = self.strides[1] * self.step[1];
        let sz = self.strides[2] * self.step[2];
        let offs = [0, sz, sy, sy + sz, sx, sx + sz, sx + sy, sx + sy + sz];
        out[..rows].iter_mut().for_each(|x| *x = 0.0);
        for (wk, off) in w.iter().zip(offs) {
            if *wk == 0.0 {
                continue;
            }
            let s = (self.base + off) * rows;
            let src = &field[s..s + rows];
            for (o, x) in out[..rows].iter_mut().zip(src) {
                *o += wk * x;
            }
        }
    }
}

/// `ν̃ = ν − G v₁/2 − G ∂_{v₁}w / w`.
pub fn modified_multiplier(v: [f64; 3], g: f64, wf: &WeightFunction) -> f64 {
    nu(v) - 0.5 * g * v[0] - g * wf.log_derivative_v1(v)
}

/// Minimum of `ν̃` over grid nodes and `|G| ≤ g_sup`.
pub fn modified_multiplier_min(space: &VelocitySpace, g_sup: f64, wf: &WeightFunction) -> f64 {
    let mut m = f64::INFINITY;
    for v in space.nodes() {
        for g in [-g_sup, g_sup] {
            m = m.min(modified_multiplier(*v, g, wf));
        }
    }
    m
}

/// Fitted constant of bound (g): the largest
/// `‖ν⁻¹Γ(f,g)‖_∞ / (‖wf‖_∞ ‖wg‖_∞)` over `pairs` random field pairs.
/// Each field is `√μ` times a random quadratic in `v`, the shape of
/// near-equilibrium perturbations, so the same functions are resolved on
/// every grid.
pub fn gamma_bound_constant(
    op: &GammaOperator,
    wf: &WeightFunction,
    pairs: usize,
    seed: u64,
) -> f64 {
    let space = &op.space;
    let w = wf.sample(space);
    let nus: Vec<f64> = space.nodes().iter().map(|v| nu(*v)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let field = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        let c: [f64; 10] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
        space
            .nodes()
            .iter()
            .zip(space.sqrt_mu())
            .map(|(v, m)| {
                let lin = c[0] + c[1] * v[0] + c[2] * v[1] + c[3] * v[2];
                let quad = 0.5
                    * (c[4] * v[0] * v[0]
                        + c[5] * v[1] * v[1]
                        + c[6] * v[2] * v[2]
                        + c[7] * v[0] * v[1]
                        + c[8] * v[0] * v[2]
                        + c[9] * v[1] * v[2]);
                (lin + quad) * m
            })
            .collect()
    };
    let sup_w = |f: &[f64]| {
        f.iter()
            .zip(&w)
            .fold(0.0f64, |m, (x, w)| m.max((x * w).abs()))
    };
    let mut c = 0.0f64;
    for _ in 0..pairs {
        let f = field(&mut rng);
        let g = field(&mut rng);
        let gam = op.gamma(&f, &g);
        let lhs = gam
            .iter()
            .zip(&nus)
            .fold(0.0f64, |m, (x, n)| m.max((x / n).abs()));
        c = c.max(lhs / (sup_w(&f) * sup_w(&g)));
    }
    c
}

/// Constant of bound (k1) implied by the kernel prefactors: both parts are
/// at most `4/√(2π)` times `(d + 1/d) e^{−d²/8 − e²/(8d²)}`.
pub const K1_CONSTANT: f64 = 4.0 * INV_SQRT_2PI;

/// Fitted constant of bound (k1): max of `|k| / ((d + 1/d) e^{-d²/8 - e²/(8d²)})`.
pub fn k1_ratio(v: [f64; 3], u: [f64; 3]) -> Result<f64> {
    let d2 = norm_sq(sub(v, u));
    let d = d2.sqrt();
    let e = norm_sq(v) - norm_sq(u);
    let bound = (d + 1.0 / d) * (-d2 / 8.0 - e * e / (8.0 * d2)).exp();
    Ok(grad_kernel(v, u)?.abs() / bound)
}

/// Result of the (k2) sweep.
#[derive(Debug, Clone, Serialize)]
pub struct K2Report {
    pub max_ratio: f64,
    /// `(|v|, ratio)` for every stored node.
    pub profile: Vec<(f64, f64)>,
}

impl K2Report {
    /// Max over min of the ratio among nodes with `|v| ≥ r_min`.
    pub fn shell_spread(&self, r_min: f64) -> f64 {
        let shell: Vec<f64> = self
            .profile
            .iter()
            .filter(|(r, _)| *r >= r_min)
            .map(|p| p.1)
            .collect();
        let hi = shell.iter().cloned().fold(0.0, f64::max);
        let lo = shell.iter().cloned().fold(f64::INFINITY, f64::min);
        hi / lo
    }
}

/// Grid quadrature of `∫ |k(v,u)| e^{q(|v|²−|u|²)/4} (1+|u|)^{-β} du`,
/// multiplied by `(1+|v|)^{1+β}`.
pub fn verify_k2_bound(space: &VelocitySpace, wf: &WeightFunction) -> K2Report {
    let grid = space.grid();
    let dv3 = grid.cell_volume();
    let (beta, q) = (wf.beta, wf.q);
    let profile: Vec<(f64, f64)> = space
        .nodes()
        .par_iter()
        .map(|v| {
            let rv = norm_sq(*v).sqrt();
            let mut s = 0.0;
            for j in 0..grid.n_full() {
                let u = grid.full_point(j);
                let ru2 = norm_sq(u);
                let factor = (0.25 * q * (rv * rv - ru2)).exp() * (1.0 + ru2.sqrt()).powf(-beta);
                let k = match grad_kernel(*v, u) {
                    Ok(k) => k.abs() * dv3,
                    Err(_) => diagonal_correction(*v, grid.spacing()),
                };
                s += k * factor;
            }
            (rv, s * (1.0 + rv).powf(1.0 + beta))
        })
        .collect();
    let max_ratio = profile.iter().map(|p| p.1).fold(0.0, f64::max);
    K2Report { max_ratio, profile }
}

/// Smallest generalized Rayleigh quotient `⟨Lf,f⟩/⟨νf,f⟩` of the raw grid
/// operator over the grid complement of the invariants (dense eigensolve).
pub fn coercivity_floor(table: &CollisionKernelTable, space: &VelocitySpace) -> f64 {
    use nalgebra::{DMatrix, DVector};
    let n = space.len();
    let w = space.weights();
    let nu = table.nu();
    // A = (Wν)^{-1/2} W L (Wν)^{-1/2}, symmetric.
    let s: Vec<f64> = (0..n).map(|a| 1.0 / (w[a] * nu[a]).sqrt()).collect();
    let raw = table.raw();
    let mut a_mat = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let l = if i == j { nu[i] } else { 0.0 } - raw[i * n + j];
            a_mat[(i, j)] = s[i] * w[i] * l * s[j];
        }
    }
    let a_mat = 0.5 * (&a_mat + a_mat.transpose());
    // Constraint vectors c_i = (Wν)^{-1/2} W χ_i, orthonormalized.
    let mut cons: Vec<DVector<f64>> = Vec::new();
    for e in table.projector().basis() {
        let mut c = DVector::from_iterator(n, (0..n).map(|a| s[a] * w[a] * e[a]));
        for b in &cons {
            let d = c.dot(b);
            c -= b * d;
        }
        let nn = c.norm();
        cons.push(c / nn);
    }
    // Deflate the constraint directions with a large shift so they never
    // appear as the smallest eigenvalues.
    let mut m = a_mat;
    let shift = 1e3;
    for c in &cons {
        m += shift * (c * c.transpose());
    }
    let eig = nalgebra::SymmetricEigen::new(m);
    eig.eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Symmetry, VelocityGrid};

    #[test]
    fn nu_at_zero_and_large_speed() {
        assert!((nu([0.0; 3]) - 4.0 * (2.0 * PI).sqrt()).abs() < 1e-12);
        assert!((nu_speed(1e-4 * 0.999) - nu_speed(1e-4 * 1.001)).abs() < 1e-9);
        let r = nu_speed(8.0) / (2.0 * PI * 8.0);
        assert!((r - 1.0).abs() < 0.02);
        assert_eq!(nu([0.3, -1.0, 2.0]), nu([-0.3, 1.0, -2.0]));
    }

    #[test]
    fn kernel_is_symmetric_and_singular_on_diagonal() {
        let v = [0.3, -1.1, 0.7];
        let u = [1.2, 0.4, -0.5];
        assert!((grad_kernel(v, u).unwrap() - grad_kernel(u, v).unwrap()).abs() < 1e-15);
        assert!(grad_kernel(v, v).is_err());
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert!((s - 2.0 / 15.0).abs() < 1e-14);
    }

    #[test]
    fn designs_integrate_low_harmonics() {
        for m in [12, 32] {
            let d = SphericalDesign::new(m).unwrap();
            assert_eq!(d.len(), m);
            let tot: f64 = d.weights.iter().sum();
            assert!((tot - 4.0 * PI).abs() < 1e-12);
            let x4: f64 = d
                .weights
                .iter()
                .zip(&d.directions)
                .map(|(w, o)| w * o[0].powi(4))
                .sum();
            assert!((x4 - 4.0 * PI / 5.0).abs() < 1e-12);
        }
        assert!(SphericalDesign::new(20).is_err());
    }

    #[test]
    fn conservative_table_annihilates_invariants() {
        let space = VelocitySpace::new(VelocityGrid::new(5.0, 8).unwrap(), Symmetry::Full);
        let t = CollisionKernelTable::build(&space);
        for (_, c) in space.invariants() {
            let l = t.apply_l_conservative(&c);
            assert!(l.iter().all(|x| x.abs() < 1e-12));
        }
        assert!(t.symmetry_defect() < 1e-12);
    }

    #[test]
    fn gamma_of_equilibrium_vanishes() {
        let space = VelocitySpace::new(VelocityGrid::new(5.0, 8).unwrap(), Symmetry::Mirror);
        let g = GammaOperator::new(&space, 12).unwrap();
        let chi0 = space.chi(0);
        let out = g.gamma(&chi0, &chi0);
        assert!(out.iter().all(|x| x.abs() < 1e-12));
        let zero = vec![0.0; space.len()];
        assert!(g.gamma(&zero, &chi0).iter().all(|x| *x == 0.0));
    }
}
