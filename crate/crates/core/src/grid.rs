//! Phase-space discretization: velocity nodes, the periodic space-time grid,
//! distribution fields, boundary traces and the norms used throughout.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{config_err, KineticsError, Result};
use crate::wall::maxwellian;

/// Uniform midpoint grid on `[-v_max, v_max]` per axis.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    v_max: f64,
    n: usize,
    spacing: f64,
    centers: Vec<f64>,
}

impl VelocityGrid {
    pub fn new(v_max: f64, n_per_axis: usize) -> Result<Self> {
        if !(v_max.is_finite() && v_max > 0.0) {
            return Err(config_err("grid.v_max", "must be positive"));
        }
        if n_per_axis < 2 || n_per_axis % 2 != 0 {
            return Err(config_err("grid.n_per_axis", "must be even and at least 2"));
        }
        let spacing = 2.0 * v_max / n_per_axis as f64;
        let centers = (0..n_per_axis)
            .map(|i| -v_max + (i as f64 + 0.5) * spacing)
            .collect();
        Ok(Self {
            v_max,
            n: n_per_axis,
            spacing,
            centers,
        })
    }

    pub fn v_max(&self) -> f64 {
        self.v_max
    }

    pub fn n_per_axis(&self) -> usize {
        self.n
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(3)
    }

    pub fn n_full(&self) -> usize {
        self.n * self.n * self.n
    }

    pub fn full_index(&self, i: [usize; 3]) -> usize {
        (i[0] * self.n + i[1]) * self.n + i[2]
    }

    pub fn full_point(&self, idx: usize) -> [f64; 3] {
        let n = self.n;
        [
            self.centers[idx / (n * n)],
            self.centers[(idx / n) % n],
            self.centers[idx % n],
        ]
    }

    /// Continuous index coordinate of `x` along an axis (node `i` sits at `i`).
    pub fn axis_coordinate(&self, x: f64) -> f64 {
        (x + self.v_max) / self.spacing - 0.5
    }

    /// Reflected index `i -> n-1-i` (the node at `-v`).
    pub fn mirror(&self, i: usize) -> usize {
        self.n - 1 - i
    }
}

/// Which symmetry the stored velocity nodes exploit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Symmetry {
    /// Every grid node is stored.
    Full,
    /// Fields are even in `v₂` and in `v₃`; only the positive quadrant is stored.
    Mirror,
}

/// Stored velocity nodes with quadrature weights.
///
/// Nodes are ordered `v₁`-major: node `a * n_perp + p` has `v₁ = centers[a]`.
#[derive(Debug, Clone)]
pub struct VelocitySpace {
    grid: VelocityGrid,
    symmetry: Symmetry,
    n_perp: usize,
    nodes: Vec<[f64; 3]>,
    weights: Vec<f64>,
    multiplicity: Vec<f64>,
    full_to_node: Vec<u32>,
    representative: Vec<u32>,
    sqrt_mu: Vec<f64>,
}

impl VelocitySpace {
    pub fn new(grid: VelocityGrid, symmetry: Symmetry) -> Self {
        let n = grid.n_per_axis();
        let (lo, side) = match symmetry {
            Symmetry::Full => (0, n),
            Symmetry::Mirror => (n / 2, n / 2),
        };
        let n_perp = side * side;
        let dv3 = grid.cell_volume();
        let mut nodes = Vec::with_capacity(n * n_perp);
        let mut weights = Vec::with_capacity(n * n_perp);
        let mut multiplicity = Vec::with_capacity(n * n_perp);
        let mut representative = Vec::with_capacity(n * n_perp);
        for a in 0..n {
            for j in lo..n {
                for k in lo..n {
                    let idx = grid.full_index([a, j, k]);
                    let m = if symmetry == Symmetry::Mirror {
                        4.0
                    } else {
                        1.0
                    };
                    nodes.push(grid.full_point(idx));
                    weights.push(dv3 * m);
                    multiplicity.push(m);
                    representative.push(idx as u32);
                }
            }
        }
        let mut full_to_node = vec![0u32; grid.n_full()];
        for a in 0..n {
            for j in 0..n {
                for k in 0..n {
                    let (jj, kk) = match symmetry {
                        Symmetry::Full => (j, k),
                        Symmetry::Mirror => (j.max(n - 1 - j) - lo, k.max(n - 1 - k) - lo),
                    };
                    full_to_node[grid.full_index([a, j, k])] = (a * n_perp + jj * side + kk) as u32;
                }
            }
        }
        let sqrt_mu = nodes.iter().map(|v| maxwellian(*v).sqrt()).collect();
        Self {
            grid,
            symmetry,
            n_perp,
            nodes,
            weights,
            multiplicity,
            full_to_node,
            representative,
            sqrt_mu,
        }
    }

    pub fn grid(&self) -> &VelocityGrid {
        &self.grid
    }

    pub fn symmetry(&self) -> Symmetry {
        self.symmetry
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn n_perp(&self) -> usize {
        self.n_perp
    }

    pub fn n_v1(&self) -> usize {
        self.grid.n_per_axis()
    }

    pub fn nodes(&self) -> &[[f64; 3]] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn multiplicity(&self) -> &[f64] {
        &self.multiplicity
    }

    pub fn sqrt_mu(&self) -> &[f64] {
        &self.sqrt_mu
    }

    /// Stored node holding the value at full-grid index `idx`.
    pub fn node_of_full(&self, idx: usize) -> usize {
        self.full_to_node[idx] as usize
    }

    pub fn full_to_node(&self) -> &[u32] {
        &self.full_to_node
    }

    /// Full-grid index of a stored node.
    pub fn full_of_node(&self, node: usize) -> usize {
        self.representative[node] as usize
    }

    pub fn v1_index(&self, node: usize) -> usize {
        node / self.n_perp
    }

    /// `|v⊥|²` of the perpendicular index `p`.
    pub fn perp_speed_sq(&self, p: usize) -> f64 {
        let v = self.nodes[p];
        v[1] * v[1] + v[2] * v[2]
    }

    /// Quadrature `Σ w f g`.
    pub fn dot(&self, f: &[f64], g: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(f.iter().zip(g))
            .map(|(w, (a, b))| w * a * b)
            .sum()
    }

    /// Values of `f` on every full-grid node.
    pub fn expand(&self, f: &[f64]) -> Vec<f64> {
        self.full_to_node.iter().map(|&n| f[n as usize]).collect()
    }

    /// The collision invariants representable in this space, normalized
    /// analytically (`χ₀ = √μ`, `χᵢ = vᵢ√μ`, `χ₄ = (|v|²-3)/√6 √μ`).
    pub fn invariants(&self) -> Vec<(usize, Vec<f64>)> {
        let ids: &[usize] = match self.symmetry {
            Symmetry::Full => &[0, 1, 2, 3, 4],
            Symmetry::Mirror => &[0, 1, 4],
        };
        ids.iter().map(|&i| (i, self.chi(i))).collect()
    }

    pub fn chi(&self, i: usize) -> Vec<f64> {
        self.nodes
            .iter()
            .zip(&self.sqrt_mu)
            .map(|(v, s)| {
                let f = match i {
                    0 => 1.0,
                    1..=3 => v[i - 1],
                    _ => (v[0] * v[0] + v[1] * v[1] + v[2] * v[2] - 3.0) / 6f64.sqrt(),
                };
                f * s
            })
            .collect()
    }

    /// `(mass, momentum, energy)` moments of a velocity vector.
    pub fn moments(&self, f: &[f64]) -> Moments {
        let m = |i| self.dot(f, &self.chi(i));
        Moments {
            mass: m(0),
            momentum: [m(1), m(2), m(3)],
            energy: m(4),
        }
    }

    /// Gram matrix of the invariants under grid quadrature.
    pub fn gram(&self) -> Vec<Vec<f64>> {
        let chis = self.invariants();
        chis.iter()
            .map(|(_, a)| chis.iter().map(|(_, b)| self.dot(a, b)).collect())
            .collect()
    }

    /// Max deviation of the Gram matrix from the identity.
    pub fn gram_defect(&self) -> f64 {
        let g = self.gram();
        let mut d = 0.0f64;
        for (i, row) in g.iter().enumerate() {
            for (j, x) in row.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                d = d.max((x - target).abs());
            }
        }
        d
    }

    /// Analytic bound on the Gaussian mass outside the velocity cube.
    pub fn tail_mass_bound(&self) -> f64 {
        let v = self.grid.v_max();
        let one_axis = libm::erfc(v / std::f64::consts::SQRT_2);
        (3.0 * one_axis).min(1.0)
    }
}

/// Moments against the collision invariants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mass: f64,
    pub momentum: [f64; 3],
    pub energy: f64,
}

/// Cell-centered space grid on `[0, 1]` times periodic slices on `[0, T̄)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeGrid {
    n_x: usize,
    n_t: usize,
    period_bar: f64,
}

impl SpaceTimeGrid {
    pub fn new(n_x: usize, n_t: usize, period_bar: f64) -> Result<Self> {
        if n_x < 2 {
            return Err(config_err("grid.n_x", "need at least 2 cells"));
        }
        if n_t < 2 {
            return Err(config_err("grid.n_t", "need at least 2 slices"));
        }
        if !(period_bar > 0.0) {
            return Err(config_err(
                "wall.period",
                "transformed period must be positive",
            ));
        }
        Ok(Self {
            n_x,
            n_t,
            period_bar,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn period_bar(&self) -> f64 {
        self.period_bar
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_x as f64
    }

    pub fn dt(&self) -> f64 {
        self.period_bar / self.n_t as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        (i as f64 + 0.5) / self.n_x as f64
    }

    pub fn t(&self, n: usize) -> f64 {
        n as f64 * self.dt()
    }

    /// Periodic slice index.
    pub fn wrap(&self, n: isize) -> usize {
        n.rem_euclid(self.n_t as isize) as usize
    }
}

/// Velocity weight `w(v) = (1+|v|²)^{β/2} e^{q|v|²/4}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightFunction {
    pub beta: f64,
    pub q: f64,
}

impl WeightFunction {
    pub fn new(beta: f64, q: f64) -> Result<Self> {
        if !(beta > 3.0 && beta.is_finite()) {
            return Err(config_err("weight.beta", "must exceed 3"));
        }
        if !(0.0..1.0).contains(&q) {
            return Err(config_err("weight.q", "must lie in [0, 1)"));
        }
        Ok(Self { beta, q })
    }

    /// Unchecked constructor, used for special cases such as `β = 0`.
    pub fn raw(beta: f64, q: f64) -> Self {
        Self { beta, q }
    }

    pub fn eval(&self, v: [f64; 3]) -> f64 {
        let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        self.eval_sq(r2)
    }

    pub fn eval_sq(&self, r2: f64) -> f64 {
        (1.0 + r2).powf(0.5 * self.beta) * (0.25 * self.q * r2).exp()
    }

    /// `∂_{v₁} w / w`
    pub fn log_derivative_v1(&self, v: [f64; 3]) -> f64 {
        let r2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
        v[0] * (self.beta / (1.0 + r2) + 0.5 * self.q)
    }

    pub fn sample(&self, space: &VelocitySpace) -> Vec<f64> {
        space.nodes().iter().map(|v| self.eval(*v)).collect()
    }
}

pub fn weight(wf: &WeightFunction, v: [f64; 3]) -> f64 {
    wf.eval(v)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    Fixed,
    Moving,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// Perturbation `f` with `F = μ + √μ f`.
    F,
    /// Weighted perturbation `h = w f`.
    H,
    /// Raw distribution `F`.
    Raw,
}

/// Values `f[t][x][v]` over one period.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionField {
    n_t: usize,
    n_x: usize,
    n_v: usize,
    data: Vec<f64>,
    pub frame: Frame,
    pub normalization: Normalization,
}

impl DistributionField {
    pub fn zeros(n_t: usize, n_x: usize, n_v: usize) -> Self {
        Self {
            n_t,
            n_x,
            n_v,
            data: vec![0.0; n_t * n_x * n_v],
            frame: Frame::Fixed,
            normalization: Normalization::F,
        }
    }

    pub fn for_grid(st: &SpaceTimeGrid, space: &VelocitySpace) -> Self {
        Self::zeros(st.n_t(), st.n_x(), space.len())
    }

    /// Field built by evaluating `f(n_t, i_x, node)` everywhere.
    pub fn from_fn(
        n_t: usize,
        n_x: usize,
        n_v: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut out = Self::zeros(n_t, n_x, n_v);
        for n in 0..n_t {
            for i in 0..n_x {
                for v in 0..n_v {
                    out.data[(n * n_x + i) * n_v + v] = f(n, i, v);
                }
            }
        }
        out
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.n_t, self.n_x, self.n_v)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn slice(&self, n: usize) -> &[f64] {
        let len = self.n_x * self.n_v;
        &self.data[n * len..(n + 1) * len]
    }

    pub fn slice_mut(&mut self, n: usize) -> &mut [f64] {
        let len = self.n_x * self.n_v;
        &mut self.data[n * len..(n + 1) * len]
    }

    pub fn at(&self, n: usize, i: usize) -> &[f64] {
        let s = (n * self.n_x + i) * self.n_v;
        &self.data[s..s + self.n_v]
    }

    pub fn at_mut(&mut self, n: usize, i: usize) -> &mut [f64] {
        let s = (n * self.n_x + i) * self.n_v;
        &mut self.data[s..s + self.n_v]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn check_shape(&self, other: &Self) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(KineticsError::GridMismatch(format!(
                "{:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(())
    }
}

/// Which half of a wall trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// `γ₊`: velocities leaving the domain through the wall.
    Outgoing,
    /// `γ₋`: velocities entering the domain.
    Incoming,
}

/// Outward normal component sign at wall 0 (`x̄ = 0`) and wall 1 (`x̄ = 1`).
pub fn outward_normal(wall: usize) -> f64 {
    if wall == 0 {
        -1.0
    } else {
        1.0
    }
}

/// Wall values `f[t][wall][v]` on all velocity nodes. Which half is
/// meaningful depends on the wall and [`Side`].
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    n_t: usize,
    n_v: usize,
    data: Vec<f64>,
}

impl BoundaryTrace {
    pub fn zeros(n_t: usize, n_v: usize) -> Self {
        Self {
            n_t,
            n_v,
            data: vec![0.0; n_t * 2 * n_v],
        }
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_v(&self) -> usize {
        self.n_v
    }

    pub fn at(&self, n: usize, wall: usize) -> &[f64] {
        let s = (n * 2 + wall) * self.n_v;
        &self.data[s..s + self.n_v]
    }

    pub fn at_mut(&mut self, n: usize, wall: usize) -> &mut [f64] {
        let s = (n * 2 + wall) * self.n_v;
        &mut self.data[s..s + self.n_v]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

/// True when node `v` belongs to `side` at `wall`.
pub fn on_side(v1: f64, wall: usize, side: Side) -> bool {
    let out = v1 * outward_normal(wall) > 0.0;
    match side {
        Side::Outgoing => out,
        Side::Incoming => !out,
    }
}

/// Time-averaged `L²(x, v)` norm, so that a time-independent field gives its
/// spatial `L²` norm.
pub fn norm_l2(f: &DistributionField, space: &VelocitySpace, st: &SpaceTimeGrid) -> Result<f64> {
    check_field(f, space, st)?;
    Ok(norm_l2_unchecked(f.data(), space, st))
}

pub(crate) fn norm_l2_unchecked(data: &[f64], space: &VelocitySpace, st: &SpaceTimeGrid) -> f64 {
    let w = space.weights();
    let nv = space.len();
    let mut s = 0.0;
    for chunk in data.chunks(nv) {
        s += chunk.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>();
    }
    (s * st.dx() / st.n_t() as f64).sqrt()
}

/// Per-slice `L²(x, v)` norms.
pub fn slice_l2(f: &DistributionField, space: &VelocitySpace, st: &SpaceTimeGrid) -> Vec<f64> {
    let w = space.weights();
    (0..f.dims().0)
        .map(|n| {
            let s: f64 = f
                .slice(n)
                .chunks(space.len())
                .map(|c| c.iter().zip(w).map(|(x, w)| w * x * x).sum::<f64>())
                .sum();
            (s * st.dx()).sqrt()
        })
        .collect()
}

pub fn norm_weighted_sup(f: &DistributionField, space: &VelocitySpace, wf: &WeightFunction) -> f64 {
    let w = wf.sample(space);
    sup_weighted(f.data(), &w)
}

pub(crate) fn sup_weighted(data: &[f64], w: &[f64]) -> f64 {
    let nv = w.len();
    let mut m = 0.0f64;
    for chunk in data.chunks(nv) {
        for (x, w) in chunk.iter().zip(w) {
            m = m.max((w * x).abs());
        }
    }
    m
}

/// `|f|_{L²_±}` with measure `|v₁| dv`, time-averaged over the period.
pub fn norm_boundary_l2pm(trace: &BoundaryTrace, space: &VelocitySpace, side: Side) -> f64 {
    let mut s = 0.0;
    for n in 0..trace.n_t() {
        for wall in 0..2 {
            s += half_flux_sq(trace.at(n, wall), space, wall, side);
        }
    }
    (s / trace.n_t() as f64).sqrt()
}

pub(crate) fn half_flux_sq(f: &[f64], space: &VelocitySpace, wall: usize, side: Side) -> f64 {
    let mut s = 0.0;
    for (k, (v, w)) in space.nodes().iter().zip(space.weights()).enumerate() {
        if on_side(v[0], wall, side) {
            s += w * v[0].abs() * f[k] * f[k];
        }
    }
    s
}

pub fn norm_boundary_suppm(
    trace: &BoundaryTrace,
    space: &VelocitySpace,
    wf: &WeightFunction,
    side: Side,
) -> f64 {
    let w = wf.sample(space);
    let mut m = 0.0f64;
    for n in 0..trace.n_t() {
        for wall in 0..2 {
            for (k, v) in space.nodes().iter().enumerate() {
                if on_side(v[0], wall, side) {
                    m = m.max((w[k] * trace.at(n, wall)[k]).abs());
                }
            }
        }
    }
    m
}

/// `∫∫ f √μ dv dx̄` on slice `n`.
pub fn slice_mass(
    f: &DistributionField,
    space: &VelocitySpace,
    st: &SpaceTimeGrid,
    n: usize,
) -> f64 {
    mass_of_slice(f.slice(n), space, st)
}

pub(crate) fn mass_of_slice(slice: &[f64], space: &VelocitySpace, st: &SpaceTimeGrid) -> f64 {
    let sm = space.sqrt_mu();
    let wts = space.weights();
    let mut s = 0.0;
    for chunk in slice.chunks(space.len()) {
        for ((x, m), w) in chunk.iter().zip(sm).zip(wts) {
            s += w * x * m;
        }
    }
    s * st.dx()
}

fn check_field(f: &DistributionField, space: &VelocitySpace, st: &SpaceTimeGrid) -> Result<()> {
    if f.dims() != (st.n_t(), st.n_x(), space.len()) {
        return Err(KineticsError::GridMismatch(format!(
            "field {:?} vs grid ({}, {}, {})",
            f.dims(),
            st.n_t(),
            st.n_x(),
            space.len()
        )));
    }
    Ok(())
}

/// Snapshot header, written as one JSON line before the raw data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub dims: [usize; 3],
    pub v_max: f64,
    pub beta: f64,
    pub q: f64,
    pub frame: Frame,
    pub normalization: Normalization,
}

/// Writes a field in the snapshot format. Reduced velocity storage is
/// expanded to the full grid so readers never need to know about it.
pub fn write_snapshot<W: Write>(
    mut out: W,
    f: &DistributionField,
    space: &VelocitySpace,
    wf: &WeightFunction,
) -> Result<()> {
    let (n_t, n_x, _) = f.dims();
    let n_full = space.grid().n_full();
    let header = SnapshotHeader {
        dims: [n_t, n_x, n_full],
        v_max: space.grid().v_max(),
        beta: wf.beta,
        q: wf.q,
        frame: f.frame,
        normalization: f.normalization,
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(n_full * 8);
    for n in 0..n_t {
        for i in 0..n_x {
            buf.clear();
            for x in space.expand(f.at(n, i)) {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
    }
    Ok(())
}

/// Reads a snapshot written by [`write_snapshot`] (always full-grid data).
pub fn read_snapshot<R: BufRead>(mut input: R) -> Result<(SnapshotHeader, Vec<f64>)> {
    let mut line = String::new();
    input.read_line(&mut line)?;
    let header: SnapshotHeader = serde_json::from_str(line.trim_end())
        .map_err(|e| KineticsError::Snapshot(format!("bad header: {e}")))?;
    let count = header.dims.iter().product::<usize>();
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    if bytes.len() != count * 8 {
        return Err(KineticsError::Snapshot(format!(
            "expected {} values, found {} bytes",
            count,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header, data))
}
