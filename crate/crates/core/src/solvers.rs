//! Time-periodic solvers in the fixed frame: transport solves with prescribed
//! inflow, the boundary iteration, the penalized `K` iteration, the descent
//! of the penalty to zero and the outer nonlinear iteration.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::boundary::{p_gamma_trace, WallReflector};
use crate::characteristics::WallForce;
use crate::collision::{CollisionKernelTable, GammaMethod, GammaOperator, SphericalDesign};
use crate::error::{config_err, KineticsError, Result};
use crate::grid::{
    mass_of_slice, norm_boundary_l2pm, norm_l2_unchecked, on_side, sup_weighted, BoundaryTrace,
    DistributionField, Normalization, Side, SpaceTimeGrid, Symmetry, VelocityGrid, VelocitySpace,
    WeightFunction,
};
use crate::transport::{Parts, TransportPlan};
use crate::wall::{FrameClock, WallMotion};

/// Discretization of phase space and time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub v_max: f64,
    pub n_v: usize,
    pub n_x: usize,
    pub n_t: usize,
    pub symmetry: Symmetry,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            v_max: 5.4,
            n_v: 12,
            n_x: 32,
            n_t: 64,
            symmetry: Symmetry::Mirror,
        }
    }
}

impl GridSpec {
    pub fn velocity_space(&self) -> Result<VelocitySpace> {
        Ok(VelocitySpace::new(
            VelocityGrid::new(self.v_max, self.n_v)?,
            self.symmetry,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverSettings {
    /// Relative `L²` change that ends a linear fixed-point iteration.
    pub tol_fix: f64,
    /// Weighted-sup change that ends the outer nonlinear iteration.
    pub tol_outer: f64,
    pub max_iter: usize,
    /// Penalty for the `K` iteration; `None` uses `‖K‖ + 2`.
    pub lambda0: Option<f64>,
    pub m_omega: usize,
    pub gamma_method: GammaMethod,
    pub gmres_restart: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol_fix: 1e-8,
            tol_outer: 1e-7,
            max_iter: 200,
            lambda0: None,
            m_omega: 12,
            gamma_method: GammaMethod::Split,
            gmres_restart: 40,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_fix > 0.0 && self.tol_fix < 1.0) {
            return Err(config_err("solver.tol_fix", "must lie in (0, 1)"));
        }
        if !(self.tol_outer > 0.0 && self.tol_outer < 1.0) {
            return Err(config_err("solver.tol_outer", "must lie in (0, 1)"));
        }
        if self.max_iter == 0 {
            return Err(config_err("solver.max_iter", "must be positive"));
        }
        if let Some(l) = self.lambda0 {
            if !(l > 0.0 && l.is_finite()) {
                return Err(config_err("solver.lambda0", "must be positive"));
            }
        }
        if self.gmres_restart < 2 {
            return Err(config_err("solver.gmres_restart", "must be at least 2"));
        }
        SphericalDesign::new(self.m_omega)
            .map_err(|_| config_err("solver.m_omega", "must be 12 or 32"))?;
        Ok(())
    }
}

/// Everything the solvers share for one wall motion and one grid.
pub struct SolverContext {
    pub space: VelocitySpace,
    pub st: SpaceTimeGrid,
    pub clock: FrameClock,
    pub wf: WeightFunction,
    pub settings: SolverSettings,
    table: CollisionKernelTable,
    plan: TransportPlan,
    reflectors: Vec<WallReflector>,
    force_source: DistributionField,
    weight: Vec<f64>,
    gamma: OnceLock<GammaOperator>,
    k_norm: OnceLock<f64>,
}

impl SolverContext {
    pub fn new(
        wall: &WallMotion,
        grid: &GridSpec,
        wf: WeightFunction,
        settings: SolverSettings,
    ) -> Result<Self> {
        settings.validate()?;
        let space = grid.velocity_space()?;
        let clock = FrameClock::new(wall);
        let st = SpaceTimeGrid::new(grid.n_x, grid.n_t, clock.period_bar())?;
        let plan = TransportPlan::build(&space, &st, &WallForce { clock: &clock });
        let reflectors = (0..st.n_t())
            .map(|n| WallReflector::new(&space, clock.wall_position(st.t(n))))
            .collect();
        let force_source =
            DistributionField::from_fn(st.n_t(), st.n_x(), space.len(), |n, i, k| {
                clock.force(st.t(n), st.x(i)) * space.nodes()[k][0] * space.sqrt_mu()[k]
            });
        let weight = wf.sample(&space);
        Ok(Self {
            table: CollisionKernelTable::build(&space),
            space,
            st,
            clock,
            wf,
            settings,
            plan,
            reflectors,
            force_source,
            weight,
            gamma: OnceLock::new(),
            k_norm: OnceLock::new(),
        })
    }

    pub fn table(&self) -> &CollisionKernelTable {
        &self.table
    }

    pub fn plan(&self) -> &TransportPlan {
        &self.plan
    }

    pub fn reflector(&self, n: usize) -> &WallReflector {
        &self.reflectors[n]
    }

    /// `G v₁ √μ` on every node.
    pub fn force_source(&self) -> &DistributionField {
        &self.force_source
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    /// Replaces the weight used by the weighted norms.
    pub fn set_weight(&mut self, wf: WeightFunction) {
        self.weight = wf.sample(&self.space);
        self.wf = wf;
    }

    pub fn delta(&self) -> f64 {
        self.clock.wall().delta()
    }

    pub fn gamma(&self) -> &GammaOperator {
        self.gamma.get_or_init(|| {
            GammaOperator::with_method(
                &self.space,
                self.settings.m_omega,
                self.settings.gamma_method,
            )
            .expect("design validated with the settings")
        })
    }

    /// Power-iteration estimate of the `L²` bound of `K`.
    pub fn k_norm(&self) -> f64 {
        *self.k_norm.get_or_init(|| self.table.operator_norm(80))
    }

    pub fn lambda0(&self) -> f64 {
        self.settings.lambda0.unwrap_or_else(|| self.k_norm() + 2.0)
    }

    pub fn zero_field(&self) -> DistributionField {
        DistributionField::for_grid(&self.st, &self.space)
    }

    pub fn zero_trace(&self) -> BoundaryTrace {
        BoundaryTrace::zeros(self.st.n_t(), self.space.len())
    }

    pub fn apply_k(&self, f: &DistributionField) -> DistributionField {
        let mut out = self.zero_field();
        self.table.apply_k_rows(f.data(), out.data_mut());
        out
    }

    /// `(I − P)Γ(f, f)` slice by slice.
    pub fn gamma_projected(&self, f: &DistributionField) -> DistributionField {
        let mut out = self.zero_field();
        let nv = self.space.len();
        for n in 0..self.st.n_t() {
            let s = f.slice(n);
            let o = out.slice_mut(n);
            self.gamma().gamma_rows(&[(s, s, 1.0)], self.st.n_x(), o);
            for row in o.chunks_mut(nv) {
                self.table.projector().remove(row);
            }
        }
        out
    }

    /// Transport solve with everything prescribed.
    pub fn transport(
        &self,
        lambda: f64,
        source: &DistributionField,
        inflow: &BoundaryTrace,
    ) -> (DistributionField, BoundaryTrace) {
        let mut out = self.zero_field();
        let mut wall = self.zero_trace();
        self.plan
            .apply_periodic(lambda, source, inflow, Parts::ALL, &mut out, &mut wall);
        (out, wall)
    }

    /// Slice masses `∫∫ f √μ`.
    pub fn mass_profile(&self, f: &DistributionField) -> Vec<f64> {
        (0..f.dims().0)
            .map(|n| mass_of_slice(f.slice(n), &self.space, &self.st))
            .collect()
    }

    /// Subtracts `c(t)√μ` so that every slice has zero mass; the outgoing
    /// halves of `wall` get the same shift. Returns `max |c|`.
    pub fn remove_mass(&self, f: &mut DistributionField, wall: Option<&mut BoundaryTrace>) -> f64 {
        let sm = self.space.sqrt_mu();
        let mu_sum: f64 = self
            .space
            .weights()
            .iter()
            .zip(sm)
            .map(|(w, s)| w * s * s)
            .sum();
        let nv = self.space.len();
        let cs: Vec<f64> = self.mass_profile(f).iter().map(|m| m / mu_sum).collect();
        for (n, c) in cs.iter().enumerate() {
            for row in f.slice_mut(n).chunks_mut(nv) {
                row.iter_mut().zip(sm).for_each(|(x, s)| *x -= c * s);
            }
        }
        if let Some(w) = wall {
            for (n, c) in cs.iter().enumerate() {
                for wall_i in 0..2 {
                    for (k, x) in w.at_mut(n, wall_i).iter_mut().enumerate() {
                        if on_side(self.space.nodes()[k][0], wall_i, Side::Outgoing) {
                            *x -= c * sm[k];
                        }
                    }
                }
            }
        }
        cs.iter().fold(0.0f64, |m, c| m.max(c.abs()))
    }

    pub fn l2(&self, f: &DistributionField) -> f64 {
        norm_l2_unchecked(f.data(), &self.space, &self.st)
    }

    pub fn weighted_sup(&self, f: &DistributionField) -> f64 {
        sup_weighted(f.data(), &self.weight)
    }

    /// `F = μ + √μ f` on every node.
    pub fn full_distribution(&self, f: &DistributionField) -> DistributionField {
        let sm = self.space.sqrt_mu();
        let nv = self.space.len();
        let mut out = f.clone();
        for row in out.data_mut().chunks_mut(nv) {
            row.iter_mut()
                .zip(sm)
                .for_each(|(x, s)| *x = s * s + s * *x);
        }
        out.normalization = Normalization::Raw;
        out
    }
}

/// Data of the linear periodic problem.
#[derive(Debug, Clone)]
pub struct LinearProblemData {
    pub g: DistributionField,
    /// Boundary source on the incoming halves.
    pub r: BoundaryTrace,
    pub lambda: f64,
}

impl LinearProblemData {
    pub fn zeros(ctx: &SolverContext, lambda: f64) -> Self {
        Self {
            g: ctx.zero_field(),
            r: ctx.zero_trace(),
            lambda,
        }
    }

    /// Largest slice mass of `g` and largest incoming mass flux of `r`.
    pub fn zero_mass_defect(&self, ctx: &SolverContext) -> (f64, f64) {
        let g = ctx
            .mass_profile(&self.g)
            .iter()
            .fold(0.0f64, |m, x| m.max(x.abs()));
        let mut r = 0.0f64;
        for n in 0..self.r.n_t() {
            for wall in 0..2 {
                r = r.max(
                    crate::boundary::incoming_mass_flux(&ctx.space, wall, self.r.at(n, wall)).abs(),
                );
            }
        }
        (g, r)
    }
}

/// One row of the solver log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RungRecord {
    pub stage: String,
    pub iteration: usize,
    pub lambda: f64,
    pub residual: f64,
    pub contraction: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolverReport {
    pub records: Vec<RungRecord>,
    pub flags: Vec<String>,
    pub norm_l2: f64,
    pub norm_weighted_sup: f64,
    pub norm_boundary: f64,
    /// `‖w f_per‖_∞ / δ`.
    pub c_hat: f64,
    pub max_mass_fix: f64,
    pub max_slice_mass: f64,
}

impl SolverReport {
    fn push(
        &mut self,
        stage: &str,
        iteration: usize,
        lambda: f64,
        residual: f64,
        contraction: f64,
    ) {
        self.records.push(RungRecord {
            stage: stage.to_string(),
            iteration,
            lambda,
            residual,
            contraction,
        });
    }

    /// Flags a stage whose residual rises after the first `burn_in` records.
    pub fn check_monotone(&mut self, stage: &str, burn_in: usize) {
        let res: Vec<f64> = self
            .records
            .iter()
            .filter(|r| r.stage == stage)
            .map(|r| r.residual)
            .collect();
        if res
            .iter()
            .skip(burn_in)
            .zip(res.iter().skip(burn_in + 1))
            .any(|(a, b)| b > a)
        {
            self.flags
                .push(format!("{stage}: residual not monotone past burn-in"));
        }
    }
}

/// Transport solve with the full incoming trace `data.r` prescribed.
pub fn inflow_periodic_solve(
    ctx: &SolverContext,
    data: &LinearProblemData,
) -> (DistributionField, BoundaryTrace) {
    ctx.transport(data.lambda, &data.g, &data.r)
}

/// The per-step `L²₊` factor `(1 − 2/n + 3/(2n²))^{1/2}` of the damped
/// boundary iteration.
pub fn boundary_factor(n: f64) -> f64 {
    (1.0 - 2.0 / n + 1.5 / (n * n)).sqrt()
}

#[derive(Debug, Clone)]
pub struct BoundaryIteration {
    pub field: DistributionField,
    pub wall_out: BoundaryTrace,
    pub inflow: BoundaryTrace,
    pub iterations: usize,
    /// Damping parameter `n` actually used (`None` for the full `P_γ`).
    pub damping: Option<f64>,
    /// `|h^{i+1} − h^i|_{L²₊} / |h^i − h^{i−1}|_{L²₊}` per iteration.
    pub ratios: Vec<f64>,
    /// `|h^{i+1} − h^i|_{L²₊}` per iteration, `h` the outgoing trace.
    pub differences: Vec<f64>,
}

impl BoundaryIteration {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().copied().fold(0.0, f64::max)
    }

    /// Geometric mean of the last few ratios.
    pub fn spectral_radius(&self) -> f64 {
        let tail: Vec<f64> = self
            .ratios
            .iter()
            .rev()
            .take(5)
            .copied()
            .filter(|r| *r > 0.0)
            .collect();
        if tail.is_empty() {
            return 0.0;
        }
        (tail.iter().map(|r| r.ln()).sum::<f64>() / tail.len() as f64).exp()
    }
}

/// Damping used when the full-`P_γ` iteration stalls.
pub const FALLBACK_DAMPING: f64 = 50.0;

/// Iterates `f^{i+1}|_{γ₋} = (1 − 1/n) P_γ f^i + r` over transport solves.
/// With `damping = None` the full `P_γ` is tried first and the damped
/// scheme with `n = 50` is used if its measured spectral radius reaches
/// 0.995.
pub fn boundary_fixed_point(
    ctx: &SolverContext,
    data: &LinearProblemData,
    damping: Option<f64>,
) -> Result<BoundaryIteration> {
    match damping {
        Some(n) => boundary_iterate(ctx, data, Some(n)),
        None => match boundary_iterate(ctx, data, None) {
            Ok(it) if it.spectral_radius() < 0.995 => Ok(it),
            _ => boundary_iterate(ctx, data, Some(FALLBACK_DAMPING)),
        },
    }
}

fn boundary_iterate(
    ctx: &SolverContext,
    data: &LinearProblemData,
    damping: Option<f64>,
) -> Result<BoundaryIteration> {
    let rho = damping.map_or(1.0, |n| 1.0 - 1.0 / n);
    let space = &ctx.space;
    let mut from_source = ctx.zero_trace();
    ctx.plan.apply_periodic_walls(
        data.lambda,
        &data.g,
        &data.r,
        Parts::SOURCE,
        &mut from_source,
    );
    let mut inflow = data.r.clone();
    let mut prev_out: Option<BoundaryTrace> = None;
    let mut ratios = Vec::new();
    let mut differences = Vec::new();
    let mut iterations = 0;
    let mut change = f64::INFINITY;
    while iterations < ctx.settings.max_iter {
        iterations += 1;
        let mut out = from_source.clone();
        let mut part = ctx.zero_trace();
        ctx.plan
            .apply_periodic_walls(data.lambda, &data.g, &inflow, Parts::INFLOW, &mut part);
        out.data_mut()
            .iter_mut()
            .zip(part.data())
            .for_each(|(o, p)| *o += p);
        if let Some(prev) = &prev_out {
            let d = norm_boundary_l2pm(&diff_trace(&out, prev), space, Side::Outgoing);
            if let Some(last) = differences.last() {
                ratios.push(if *last > 0.0 { d / last } else { 0.0 });
            }
            differences.push(d);
        }
        let mut next = p_gamma_trace(space, &out);
        next.data_mut()
            .iter_mut()
            .zip(data.r.data())
            .for_each(|(x, r)| *x = rho * *x + r);
        let dn = norm_boundary_l2pm(&diff_trace(&next, &inflow), space, Side::Incoming);
        let nn = norm_boundary_l2pm(&next, space, Side::Incoming);
        change = if nn > 0.0 { dn / nn } else { dn };
        inflow = next;
        prev_out = Some(out);
        if change <= ctx.settings.tol_fix {
            let (field, wall_out) = ctx.transport(data.lambda, &data.g, &inflow);
            return Ok(BoundaryIteration {
                field,
                wall_out,
                inflow,
                iterations,
                damping,
                ratios,
                differences,
            });
        }
    }
    Err(KineticsError::NonConvergence {
        solver: "boundary_fixed_point",
        iterations,
        last_change: change,
    })
}

fn diff_trace(a: &BoundaryTrace, b: &BoundaryTrace) -> BoundaryTrace {
    let mut d = a.clone();
    d.data_mut()
        .iter_mut()
        .zip(b.data())
        .for_each(|(x, y)| *x -= y);
    d
}

fn diff_field(a: &DistributionField, b: &DistributionField) -> DistributionField {
    let mut d = a.clone();
    d.axpy(-1.0, b);
    d
}

#[derive(Debug, Clone)]
pub struct KIteration {
    pub field: DistributionField,
    pub wall_out: BoundaryTrace,
    pub inflow: BoundaryTrace,
    pub iterations: usize,
    /// `∫‖z^{m+1}‖² / ∫‖z^m‖²` with `z^m = f^{m+1} − f^m`.
    pub energy_ratios: Vec<f64>,
    pub boundary_iterations: usize,
}

impl KIteration {
    pub fn max_ratio(&self) -> f64 {
        self.energy_ratios.iter().copied().fold(0.0, f64::max)
    }
}

/// `f^{m+1}` solves the boundary problem with source `K f^m + g`, for
/// `λ ≥ λ₀`.
pub fn k_fixed_point(ctx: &SolverContext, data: &LinearProblemData) -> Result<KIteration> {
    let lambda0 = ctx.lambda0();
    if data.lambda < lambda0 {
        return Err(config_err(
            "lambda",
            format!(
                "the K iteration needs lambda >= {lambda0:.4}, got {}",
                data.lambda
            ),
        ));
    }
    let mut f = ctx.zero_field();
    let mut energy_ratios = Vec::new();
    let mut prev_energy: Option<f64> = None;
    let mut boundary_iterations = 0;
    let mut change = f64::INFINITY;
    for m in 0..ctx.settings.max_iter {
        let mut src = ctx.apply_k(&f);
        src.axpy(1.0, &data.g);
        let step = LinearProblemData {
            g: src,
            r: data.r.clone(),
            lambda: data.lambda,
        };
        let it = boundary_fixed_point(ctx, &step, None)?;
        boundary_iterations += it.iterations;
        let z = diff_field(&it.field, &f);
        let e = ctx.l2(&z).powi(2);
        if let Some(p) = prev_energy {
            energy_ratios.push(if p > 0.0 { e / p } else { 0.0 });
        }
        prev_energy = Some(e);
        let norm = ctx.l2(&it.field);
        change = if norm > 0.0 {
            e.sqrt() / norm
        } else {
            e.sqrt()
        };
        if change <= ctx.settings.tol_fix {
            return Ok(KIteration {
                field: it.field,
                wall_out: it.wall_out,
                inflow: it.inflow,
                iterations: m + 1,
                energy_ratios,
                boundary_iterations,
            });
        }
        f = it.field;
    }
    Err(KineticsError::NonConvergence {
        solver: "k_fixed_point",
        iterations: ctx.settings.max_iter,
        last_change: change,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmresOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Final `‖b − Ax‖ / ‖b‖`.
    pub residual: f64,
    pub converged: bool,
}

/// Restarted GMRES with modified Gram–Schmidt and Givens rotations.
pub fn gmres(
    mut op: impl FnMut(&[f64]) -> Vec<f64>,
    b: &[f64],
    x0: Vec<f64>,
    restart: usize,
    tol: f64,
    max_iter: usize,
) -> GmresOutcome {
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return GmresOutcome {
            x: vec![0.0; b.len()],
            iterations: 0,
            residual: 0.0,
            converged: true,
        };
    }
    let mut x = x0;
    let mut total = 0;
    loop {
        let ax = op(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let beta = dot(&r, &r).sqrt();
        if beta / bnorm <= tol || total >= max_iter {
            return GmresOutcome {
                x,
                iterations: total,
                residual: beta / bnorm,
                converged: beta / bnorm <= tol,
            };
        }
        let mut basis = vec![r.iter().map(|v| v / beta).collect::<Vec<f64>>()];
        let mut h = vec![vec![0.0; restart]; restart + 1];
        let (mut cs, mut sn) = (vec![0.0; restart], vec![0.0; restart]);
        let mut g = vec![0.0; restart + 1];
        g[0] = beta;
        let mut k = 0;
        for j in 0..restart {
            let mut w = op(&basis[j]);
            total += 1;
            for (i, v) in basis.iter().enumerate() {
                h[i][j] = dot(&w, v);
                w.iter_mut().zip(v).for_each(|(a, b)| *a -= h[i][j] * b);
            }
            h[j + 1][j] = dot(&w, &w).sqrt();
            for i in 0..j {
                let t = cs[i] * h[i][j] + sn[i] * h[i + 1][j];
                h[i + 1][j] = -sn[i] * h[i][j] + cs[i] * h[i + 1][j];
                h[i][j] = t;
            }
            let den = h[j][j].hypot(h[j + 1][j]);
            let hj1 = h[j + 1][j];
            (cs[j], sn[j]) = if den == 0.0 {
                (1.0, 0.0)
            } else {
                (h[j][j] / den, hj1 / den)
            };
            h[j][j] = den;
            h[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            k = j + 1;
            if hj1 == 0.0 || g[j + 1].abs() / bnorm <= tol || total >= max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hj1).collect());
        }
        let mut y = vec![0.0; k];
        for i in (0..k).rev() {
            let s: f64 = ((i + 1)..k).map(|l| h[i][l] * y[l]).sum();
            y[i] = (g[i] - s) / h[i][i];
        }
        for (yi, v) in y.iter().zip(&basis) {
            x.iter_mut().zip(v).for_each(|(a, b)| *a += yi * b);
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub field: DistributionField,
    pub wall_out: BoundaryTrace,
    pub inflow: BoundaryTrace,
    pub iterations: usize,
    pub residual: f64,
    /// Largest per-slice mass removed from the final transport output.
    pub mass_fix: f64,
}

/// Solves the linear periodic problem `f = A_λ(K f + g, P_γ f + r)` by GMRES
/// on the interior field and outgoing wall trace. With `zero_mass` each
/// transport output is projected onto zero slice mass.
pub fn linear_solve(
    ctx: &SolverContext,
    data: &LinearProblemData,
    zero_mass: bool,
    warm: Option<(&DistributionField, &BoundaryTrace)>,
) -> Result<LinearSolution> {
    linear_solve_to(ctx, data, zero_mass, warm, 0.1 * ctx.settings.tol_fix)
}

fn linear_solve_to(
    ctx: &SolverContext,
    data: &LinearProblemData,
    zero_mass: bool,
    warm: Option<(&DistributionField, &BoundaryTrace)>,
    tol: f64,
) -> Result<LinearSolution> {
    let n_field = ctx.zero_field().data().len();
    let unpack = |u: &[f64]| {
        let mut f = ctx.zero_field();
        f.data_mut().copy_from_slice(&u[..n_field]);
        let mut w = ctx.zero_trace();
        w.data_mut().copy_from_slice(&u[n_field..]);
        (f, w)
    };
    let pack = |f: &DistributionField, w: &BoundaryTrace| {
        let mut u = f.data().to_vec();
        u.extend_from_slice(w.data());
        u
    };
    // One sweep of the fixed-point map, with or without the data.
    let sweep = |f: &DistributionField, w: &BoundaryTrace, with_data: bool| {
        let mut src = ctx.apply_k(f);
        let mut inflow = p_gamma_trace(&ctx.space, w);
        if with_data {
            src.axpy(1.0, &data.g);
            inflow
                .data_mut()
                .iter_mut()
                .zip(data.r.data())
                .for_each(|(x, r)| *x += r);
        }
        let (mut out, mut wo) = ctx.transport(data.lambda, &src, &inflow);
        let fix = if zero_mass {
            ctx.remove_mass(&mut out, Some(&mut wo))
        } else {
            0.0
        };
        (out, wo, inflow, fix)
    };
    let (b_f, b_w, _, _) = sweep(&ctx.zero_field(), &ctx.zero_trace(), true);
    let b = pack(&b_f, &b_w);
    let x0 = match warm {
        Some((f, w)) => pack(f, w),
        None => b.clone(),
    };
    let op = |u: &[f64]| {
        let (f, w) = unpack(u);
        let (mf, mw, _, _) = sweep(&f, &w, false);
        let mu = pack(&mf, &mw);
        u.iter().zip(&mu).map(|(a, m)| a - m).collect()
    };
    let out = gmres(
        op,
        &b,
        x0,
        ctx.settings.gmres_restart,
        tol,
        ctx.settings.max_iter,
    );
    if !out.converged {
        return Err(KineticsError::NonConvergence {
            solver: "linear_solve",
            iterations: out.iterations,
            last_change: out.residual,
        });
    }
    // One more sweep so that field, wall trace and inflow are consistent.
    let (f, w) = unpack(&out.x);
    let (field, wall_out, inflow, mass_fix) = sweep(&f, &w, true);
    Ok(LinearSolution {
        field,
        wall_out,
        inflow,
        iterations: out.iterations,
        residual: out.residual,
        mass_fix,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapRung {
    pub lambda: f64,
    pub step: f64,
    pub iterations: usize,
    pub contraction: f64,
    pub measured_c: f64,
}

#[derive(Debug, Clone)]
pub struct BootstrapResult {
    pub field: DistributionField,
    pub wall_out: BoundaryTrace,
    pub rungs: Vec<BootstrapRung>,
    /// Solution at each rung, in the order of `rungs`.
    pub rung_fields: Vec<DistributionField>,
}

const MIN_BOOTSTRAP_STEP: f64 = 1e-6;

/// Lowers the penalty from `λ₀` to zero. On each rung `λ = λ' − Δλ` the
/// map `T f = S_{λ'}⁻¹[(λ' − λ) f + g]` is iterated to a fixed point; `Δλ`
/// starts at `1/(2C)` with `C` the measured norm of `S_{λ'}⁻¹` and is halved
/// while the measured contraction exceeds one half.
pub fn lambda_bootstrap(ctx: &SolverContext, data: &LinearProblemData) -> Result<BootstrapResult> {
    let lambda0 = ctx.lambda0();
    let top = LinearProblemData {
        lambda: lambda0,
        ..data.clone()
    };
    let first = linear_solve(ctx, &top, true, None)?;
    let mut f = first.field;
    let mut wall_out = first.wall_out;
    let mut lambda_prev = lambda0;
    let mut c = resolvent_norm(ctx, lambda_prev, &data.g)?;
    let mut rungs = Vec::new();
    let mut rung_fields = Vec::new();
    while lambda_prev > 0.0 {
        let mut step = if c > 0.0 {
            (0.5 / c).min(lambda_prev)
        } else {
            lambda_prev
        };
        loop {
            let lambda = if step >= lambda_prev {
                0.0
            } else {
                lambda_prev - step
            };
            match bootstrap_rung(ctx, data, lambda_prev, lambda, &f) {
                Ok((nf, nw, iterations, contraction)) if contraction <= 0.5 => {
                    let dl = lambda_prev - lambda;
                    if contraction > 0.0 {
                        c = c.max(contraction / dl);
                    }
                    rungs.push(BootstrapRung {
                        lambda,
                        step: dl,
                        iterations,
                        contraction,
                        measured_c: c,
                    });
                    rung_fields.push(nf.clone());
                    f = nf;
                    wall_out = nw;
                    lambda_prev = lambda;
                    break;
                }
                Ok((_, _, _, contraction)) => {
                    c = c.max(contraction / step);
                    step *= 0.5;
                }
                Err(KineticsError::NonConvergence { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
            if step < MIN_BOOTSTRAP_STEP {
                return Err(KineticsError::StepUnderflow {
                    lambda: lambda_prev,
                    measured_c: c,
                });
            }
        }
    }
    Ok(BootstrapResult {
        field: f,
        wall_out,
        rungs,
        rung_fields,
    })
}

/// Estimate of `‖S_λ⁻¹‖` on zero-mass fields: a few power steps started
/// from `g` (or a fixed zero-mass probe when `g = 0`).
fn resolvent_norm(ctx: &SolverContext, lambda: f64, g: &DistributionField) -> Result<f64> {
    let mut z = if ctx.l2(g) > 0.0 {
        g.clone()
    } else {
        DistributionField::from_fn(ctx.st.n_t(), ctx.st.n_x(), ctx.space.len(), |n, i, k| {
            let v = ctx.space.nodes()[k];
            ((n + 3 * i) as f64).sin() * v[0] * ctx.space.sqrt_mu()[k]
        })
    };
    ctx.remove_mass(&mut z, None);
    let mut est = 0.0;
    for _ in 0..3 {
        let nz = ctx.l2(&z);
        let data = LinearProblemData {
            g: z.clone(),
            r: ctx.zero_trace(),
            lambda,
        };
        let s = linear_solve(ctx, &data, true, None)?;
        est = ctx.l2(&s.field) / nz;
        z = s.field;
    }
    Ok(est)
}

fn bootstrap_rung(
    ctx: &SolverContext,
    data: &LinearProblemData,
    lambda_prev: f64,
    lambda: f64,
    start: &DistributionField,
) -> Result<(DistributionField, BoundaryTrace, usize, f64)> {
    let dl = lambda_prev - lambda;
    let mut f = start.clone();
    let mut prev_diff: Option<f64> = None;
    let mut contraction = 0.0f64;
    for m in 0..ctx.settings.max_iter {
        let mut g = data.g.clone();
        g.axpy(dl, &f);
        let step = LinearProblemData {
            g,
            r: data.r.clone(),
            lambda: lambda_prev,
        };
        let s = linear_solve(ctx, &step, true, None)?;
        let d = ctx.l2(&diff_field(&s.field, &f));
        if let Some(p) = prev_diff {
            if p > 0.0 {
                contraction = contraction.max(d / p);
            }
        }
        // A map that expands cannot reach its fixed point; report early.
        if contraction > 0.5 && m >= 2 {
            return Ok((s.field, s.wall_out, m + 1, contraction));
        }
        prev_diff = Some(d);
        let norm = ctx.l2(&s.field);
        let rel = if norm > 0.0 { d / norm } else { d };
        f = s.field;
        if rel <= ctx.settings.tol_fix {
            return Ok((f, s.wall_out, m + 1, contraction));
        }
    }
    Err(KineticsError::NonConvergence {
        solver: "lambda_bootstrap",
        iterations: ctx.settings.max_iter,
        last_change: prev_diff.unwrap_or(f64::NAN),
    })
}

/// The periodic state in the perturbation normalization.
#[derive(Debug, Clone)]
pub struct PeriodicSolution {
    pub f: DistributionField,
    pub wall_out: BoundaryTrace,
    pub inflow: BoundaryTrace,
}

/// Boundary source `r(f)` slice by slice from the outgoing trace.
pub fn boundary_source(ctx: &SolverContext, wall_out: &BoundaryTrace) -> BoundaryTrace {
    let mut r = ctx.zero_trace();
    for n in 0..ctx.st.n_t() {
        for wall in 0..2 {
            let s = ctx.reflectors[n].source(&ctx.space, wall, wall_out.at(n, wall));
            r.at_mut(n, wall).copy_from_slice(&s);
        }
    }
    r
}

const DIVERGENCE_STREAK: usize = 3;

/// Outer iteration `f^{j+1} = L⁻¹(Γ(f^j, f^j) + G v₁ √μ, r(f^j))` with the
/// zero-penalty linear solve.
pub fn nonlinear_periodic_solve(ctx: &SolverContext) -> Result<(PeriodicSolution, SolverReport)> {
    let mut report = SolverReport::default();
    let mut f = ctx.zero_field();
    let mut wall = ctx.zero_trace();
    let mut sol: Option<LinearSolution> = None;
    let mut norms = Vec::new();
    let mut prev_change = f64::INFINITY;
    let mut growth = 0;
    let floor = 0.1 * ctx.settings.tol_fix;
    let mut tol = 1e-4;
    for j in 0..ctx.settings.max_iter {
        let mut g = if j == 0 {
            ctx.zero_field()
        } else {
            ctx.gamma_projected(&f)
        };
        g.axpy(1.0, &ctx.force_source);
        let data = LinearProblemData {
            g,
            r: boundary_source(ctx, &wall),
            lambda: 0.0,
        };
        let warm = sol.as_ref().map(|s| (&s.field, &s.wall_out));
        let s = linear_solve_to(ctx, &data, true, warm, tol)?;
        let change = ctx.weighted_sup(&diff_field(&s.field, &f));
        let contraction = if prev_change.is_finite() && prev_change > 0.0 {
            change / prev_change
        } else {
            0.0
        };
        report.push("outer", j + 1, 0.0, change, contraction);
        report.push("gmres", s.iterations, 0.0, s.residual, 0.0);
        report.max_mass_fix = report.max_mass_fix.max(s.mass_fix);
        f = s.field.clone();
        wall = s.wall_out.clone();
        norms.push(ctx.weighted_sup(&f));
        if !change.is_finite() {
            return Err(KineticsError::OuterDivergence { iteration: j + 1 });
        }
        growth = if change > prev_change { growth + 1 } else { 0 };
        if growth >= DIVERGENCE_STREAK {
            return Err(KineticsError::OuterDivergence { iteration: j + 1 });
        }
        prev_change = change;
        sol = Some(s);
        // Inexact early solves; the last one always runs to the floor.
        if change <= ctx.settings.tol_outer && tol <= floor {
            break;
        }
        tol = if change <= ctx.settings.tol_outer {
            floor
        } else {
            (1e-2 * change / norms[j].max(f64::MIN_POSITIVE)).clamp(floor, 1e-4)
        };
        if j + 1 == ctx.settings.max_iter {
            return Err(KineticsError::NonConvergence {
                solver: "nonlinear_periodic_solve",
                iterations: j + 1,
                last_change: change,
            });
        }
    }
    let s = sol.expect("at least one outer iteration");
    report.norm_l2 = ctx.l2(&f);
    report.norm_weighted_sup = ctx.weighted_sup(&f);
    report.norm_boundary = norm_boundary_l2pm(&s.wall_out, &ctx.space, Side::Outgoing);
    report.max_slice_mass = ctx
        .mass_profile(&f)
        .iter()
        .fold(0.0f64, |m, x| m.max(x.abs()));
    let delta = ctx.delta();
    report.c_hat = if delta > 0.0 {
        report.norm_weighted_sup / delta
    } else {
        0.0
    };
    if delta > 0.0 && norms.iter().any(|n| *n > 2.0 * report.c_hat * delta) {
        report
            .flags
            .push("outer iterate left the ball |wf| <= 2 C delta".to_string());
    }
    report.check_monotone("outer", 2);
    Ok((
        PeriodicSolution {
            f,
            wall_out: s.wall_out,
            inflow: s.inflow,
        },
        report,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualNorms {
    /// Largest slice `L²(x, v)` norm of `f(t + T̄) − f(t)`.
    pub l2: f64,
    /// Largest pointwise difference.
    pub sup: f64,
}

/// Differences between slices one period apart. A field holding exactly
/// one period is compared with its own periodic extension.
pub fn periodic_residual(
    f: &DistributionField,
    space: &VelocitySpace,
    st: &SpaceTimeGrid,
) -> ResidualNorms {
    let (len, _, _) = f.dims();
    let nt = st.n_t();
    let pairs: Vec<(usize, usize)> = if len <= nt {
        (0..len).map(|n| (n, (n + nt) % len)).collect()
    } else {
        (0..len - nt).map(|n| (n, n + nt)).collect()
    };
    let mut out = ResidualNorms { l2: 0.0, sup: 0.0 };
    for (a, b) in pairs {
        let d: Vec<f64> = f
            .slice(b)
            .iter()
            .zip(f.slice(a))
            .map(|(x, y)| x - y)
            .collect();
        let mut s = 0.0;
        for row in d.chunks(space.len()) {
            s += row
                .iter()
                .zip(space.weights())
                .map(|(x, w)| w * x * x)
                .sum::<f64>();
        }
        out.l2 = out.l2.max((s * st.dx()).sqrt());
        out.sup = d.iter().fold(out.sup, |m, x| m.max(x.abs()));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaCheck {
    pub hypothesis_holds: bool,
    pub conclusion_holds: bool,
    /// Right-hand side of the bound for `i = k+1, k+2, …`.
    pub bounds: Vec<f64>,
    /// `A_i^k` for the same indices.
    pub window_max: Vec<f64>,
}

/// Checks `a_{i+1+k} ≤ A_i^k/8 + D` on the data and then the resulting bound
/// `A_i^k ≤ 8^{−⌊i/(k+1)⌋} max_{j≤k} A_j^k + (8+k)/7 · D` for `i ≥ k+1`.
pub fn iteration_lemma_check(a: &[f64], k: usize, d: f64) -> LemmaCheck {
    let slack = |x: f64| x * (1.0 + 1e-12) + 1e-300;
    let window = |i: usize| a[i..=i + k].iter().copied().fold(0.0, f64::max);
    let hypothesis_holds = a.iter().all(|x| *x >= 0.0)
        && (0..a.len().saturating_sub(k + 1)).all(|i| a[i + 1 + k] <= slack(window(i) / 8.0 + d));
    let mut bounds = Vec::new();
    let mut window_max = Vec::new();
    let mut conclusion_holds = true;
    if a.len() > 2 * k + 1 {
        let head = (0..=k).map(window).fold(0.0, f64::max);
        for i in (k + 1)..(a.len() - k) {
            let b = 0.125f64.powi((i / (k + 1)) as i32) * head + (8 + k) as f64 / 7.0 * d;
            let w = window(i);
            conclusion_holds &= w <= slack(b);
            bounds.push(b);
            window_max.push(w);
        }
    }
    LemmaCheck {
        hypothesis_holds,
        conclusion_holds,
        bounds,
        window_max,
    }
}

/// Smallest window `k` for which a sequence contracting by `ratio` per step
/// meets the lemma's hypothesis.
pub fn lemma_window(ratio: f64) -> usize {
    if ratio <= 0.0 {
        return 1;
    }
    if ratio >= 1.0 {
        return usize::MAX;
    }
    let k = (8f64.ln() / (1.0 / ratio).ln()).ceil() as usize;
    k.saturating_sub(1).max(1)
}
