//! Time march of the initial-boundary value problem around the periodic
//! state, decay-rate fitting, positivity and mass diagnostics.
//!
//! The march uses the same backward characteristics as the periodic
//! solvers, so the periodic state is a fixed orbit of the discrete scheme.
//! Each step solves for the new slice by a short fixed-point iteration on
//! the collision source and the reflected inflow.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KineticsError, Result};
use crate::grid::{mass_of_slice, on_side, sup_weighted, DistributionField, Side};
use crate::solvers::{PeriodicSolution, SolverContext};
use crate::transport::{History, Parts};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySettings {
    pub periods: usize,
    /// `‖w f₀‖_∞` as a multiple of `Ĉδ`.
    pub f0_amplitude: f64,
    pub seed: u64,
    /// Relative change that ends the per-step iteration.
    pub step_tol: f64,
    /// Number of per-step iterations that refresh the collision term.
    pub gamma_updates: usize,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            periods: 10,
            f0_amplitude: 0.1,
            seed: 7,
            step_tol: 1e-12,
            gamma_updates: 3,
        }
    }
}

/// Diagnostics of one time slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub l2: f64,
    pub weighted_sup: f64,
    /// `∫∫ f √μ` (perturbation runs) or `∫∫ F` (full runs).
    pub mass: f64,
    pub min_f: f64,
    /// Mass removed by the zero-mass projection on this step.
    pub mass_fix: f64,
    /// `‖√μ f‖_{L²}`, the distance of `F` to the periodic state.
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRun {
    pub records: Vec<StepRecord>,
    pub n_t: usize,
    pub periods: usize,
    pub initial_weighted_sup: f64,
    /// Final perturbation slice, `[x][node]`.
    #[serde(skip)]
    pub final_slice: Vec<f64>,
}

impl StabilityRun {
    /// `deviation` at `t = kT̄` for `k = 0..=periods`.
    pub fn period_deviation(&self) -> Vec<f64> {
        self.records
            .iter()
            .step_by(self.n_t)
            .map(|r| r.deviation)
            .collect()
    }

    pub fn max_abs_mass(&self) -> f64 {
        self.records.iter().fold(0.0f64, |m, r| m.max(r.mass.abs()))
    }

    pub fn max_weighted_sup(&self) -> f64 {
        self.records
            .iter()
            .fold(0.0f64, |m, r| m.max(r.weighted_sup))
    }
}

/// What the march evolves.
#[derive(Debug, Clone, Copy)]
pub enum MarchMode<'a> {
    /// Perturbation `f` of the periodic state, optionally projected onto
    /// zero mass after each step.
    Perturbation {
        periodic: &'a PeriodicSolution,
        zero_mass: bool,
    },
    /// The whole deviation from `μ`, `F = μ + √μ f`.
    Full,
}

struct MarchHistory<'a> {
    n: usize,
    nv: usize,
    source: &'a [Vec<f64>],
    inflow: &'a [Vec<f64>],
    initial: &'a [f64],
}

impl History for MarchHistory<'_> {
    fn source(&self, k: usize) -> &[f64] {
        &self.source[self.n - k]
    }
    fn inflow(&self, m: usize, wall: usize) -> &[f64] {
        &self.inflow[self.n - m][wall * self.nv..(wall + 1) * self.nv]
    }
    fn initial(&self) -> Option<(usize, &[f64])> {
        Some((self.n, self.initial))
    }
}

const MAX_STEP_ITERATIONS: usize = 80;
const BLOW_UP_FACTOR: f64 = 10.0;
const STEP_SCALE_FLOOR: f64 = 1e-3;
const STALL_LEVEL: f64 = 1e-9;

struct Marcher<'a> {
    ctx: &'a SolverContext,
    mode: MarchMode<'a>,
    /// `(I − P)Γ(f_per, f_per)` per slice, perturbation mode only.
    gamma_pp: Option<DistributionField>,
}

impl<'a> Marcher<'a> {
    fn new(ctx: &'a SolverContext, mode: MarchMode<'a>) -> Self {
        let gamma_pp = match mode {
            MarchMode::Perturbation { periodic, .. } => Some(ctx.gamma_projected(&periodic.f)),
            MarchMode::Full => None,
        };
        Self {
            ctx,
            mode,
            gamma_pp,
        }
    }

    /// Collision part of the source other than `K f` on slice `sl`.
    fn nonlinear_source(&self, sl: usize, f: &[f64]) -> Vec<f64> {
        let ctx = self.ctx;
        let nv = ctx.space.len();
        let rows = ctx.st.n_x();
        let mut out = vec![0.0; f.len()];
        match self.mode {
            MarchMode::Perturbation { periodic, .. } => {
                // Γ(p+f, f) + Γ(f, p) = Γ(p+f, p+f) − Γ(p, p).
                let total: Vec<f64> = periodic
                    .f
                    .slice(sl)
                    .iter()
                    .zip(f)
                    .map(|(p, x)| p + x)
                    .collect();
                ctx.gamma()
                    .gamma_rows(&[(&total, &total, 1.0)], rows, &mut out);
                for row in out.chunks_mut(nv) {
                    ctx.table().projector().remove(row);
                }
                let pp = self.gamma_pp.as_ref().expect("perturbation mode").slice(sl);
                out.iter_mut().zip(pp).for_each(|(o, p)| *o -= p);
            }
            MarchMode::Full => {
                ctx.gamma().gamma_rows(&[(f, f, 1.0)], rows, &mut out);
                for row in out.chunks_mut(nv) {
                    ctx.table().projector().remove(row);
                }
                out.iter_mut()
                    .zip(ctx.force_source().slice(sl))
                    .for_each(|(o, g)| *o += g);
            }
        }
        out
    }

    fn inflow(&self, sl: usize, wall_out: &[f64]) -> Vec<f64> {
        let ctx = self.ctx;
        let nv = ctx.space.len();
        let refl = ctx.reflector(sl);
        let mut out = vec![0.0; 2 * nv];
        for wall in 0..2 {
            let r = refl.reflect(&ctx.space, wall, &wall_out[wall * nv..(wall + 1) * nv]);
            let dst = &mut out[wall * nv..(wall + 1) * nv];
            dst.copy_from_slice(&r);
            if matches!(self.mode, MarchMode::Full) {
                dst.iter_mut()
                    .zip(refl.offset(wall))
                    .for_each(|(d, o)| *d += o);
            }
        }
        out
    }

    fn k_source(&self, f: &[f64], extra: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; f.len()];
        self.ctx.table().apply_k_rows(f, &mut out);
        out.iter_mut().zip(extra).for_each(|(o, e)| *o += e);
        out
    }

    /// Removes the slice mass from `f` and the outgoing halves of
    /// `wall_out`; returns the coefficient removed.
    fn remove_mass(&self, f: &mut [f64], wall_out: &mut [f64]) -> f64 {
        let ctx = self.ctx;
        let sm = ctx.space.sqrt_mu();
        let nv = ctx.space.len();
        let mu_sum: f64 = ctx
            .space
            .weights()
            .iter()
            .zip(sm)
            .map(|(w, s)| w * s * s)
            .sum();
        let c = mass_of_slice(f, &ctx.space, &ctx.st) / mu_sum;
        for row in f.chunks_mut(nv) {
            row.iter_mut().zip(sm).for_each(|(x, s)| *x -= c * s);
        }
        for wall in 0..2 {
            for (k, v) in ctx.space.nodes().iter().enumerate() {
                if on_side(v[0], wall, Side::Outgoing) {
                    wall_out[wall * nv + k] -= c * sm[k];
                }
            }
        }
        c
    }

    fn record(&self, step: usize, sl: usize, f: &[f64], mass_fix: f64) -> StepRecord {
        let ctx = self.ctx;
        let nv = ctx.space.len();
        let sm = ctx.space.sqrt_mu();
        let w = ctx.space.weights();
        let (mut l2, mut dev, mut min_f) = (0.0, 0.0, f64::INFINITY);
        let per = match self.mode {
            MarchMode::Perturbation { periodic, .. } => Some(periodic.f.slice(sl)),
            MarchMode::Full => None,
        };
        for (i, row) in f.chunks(nv).enumerate() {
            for k in 0..nv {
                l2 += w[k] * row[k] * row[k];
                dev += w[k] * sm[k] * sm[k] * row[k] * row[k];
                let p = per.map_or(0.0, |p| p[i * nv + k]);
                min_f = min_f.min(sm[k] * sm[k] + sm[k] * (p + row[k]));
            }
        }
        let dx = ctx.st.dx();
        let mut mass = mass_of_slice(f, &ctx.space, &ctx.st);
        if matches!(self.mode, MarchMode::Full) {
            mass += w.iter().zip(sm).map(|(w, s)| w * s * s).sum::<f64>();
        }
        StepRecord {
            step,
            t: step as f64 * ctx.st.dt(),
            l2: (l2 * dx).sqrt(),
            weighted_sup: sup_weighted(f, ctx.weight()),
            mass,
            min_f,
            mass_fix,
            deviation: (dev * dx).sqrt(),
        }
    }
}

/// Outgoing wall values at `t = 0` from the nearest interior rows.
fn initial_wall_trace(ctx: &SolverContext, f0: &[f64]) -> Vec<f64> {
    let nv = ctx.space.len();
    let last = ctx.st.n_x() - 1;
    let mut out = vec![0.0; 2 * nv];
    for wall in 0..2 {
        let row = if wall == 0 {
            &f0[..nv]
        } else {
            &f0[last * nv..]
        };
        for (k, v) in ctx.space.nodes().iter().enumerate() {
            if on_side(v[0], wall, Side::Outgoing) {
                out[wall * nv + k] = row[k];
            }
        }
    }
    out
}

/// Marches `n_periods` periods from `f0` (`[x][node]`, placed at `t̄ = 0`).
pub fn ibvp_march(
    ctx: &SolverContext,
    mode: MarchMode<'_>,
    f0: &[f64],
    n_periods: usize,
    settings: &StabilitySettings,
) -> Result<StabilityRun> {
    let nv = ctx.space.len();
    let n_t = ctx.st.n_t();
    let slice_len = ctx.st.n_x() * nv;
    if f0.len() != slice_len {
        return Err(KineticsError::GridMismatch(format!(
            "initial slice has {} values, expected {slice_len}",
            f0.len()
        )));
    }
    let marcher = Marcher::new(ctx, mode);
    let zero_mass = matches!(
        mode,
        MarchMode::Perturbation {
            zero_mass: true,
            ..
        }
    );
    let keep = (ctx.plan().t_cap() / ctx.st.dt()).ceil() as usize + 4;
    let steps = n_periods * n_t;

    let mut sources: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut inflows: Vec<Vec<f64>> = Vec::with_capacity(steps + 1);
    let mut gam = marcher.nonlinear_source(0, f0);
    sources.push(marcher.k_source(f0, &gam));
    inflows.push(marcher.inflow(0, &initial_wall_trace(ctx, f0)));
    let first = marcher.record(0, 0, f0, 0.0);
    let initial = first.weighted_sup;
    let mut records = vec![first];

    let mut f = vec![0.0; slice_len];
    let mut wall_out = vec![0.0; 2 * nv];
    for n in 1..=steps {
        let sl = n % n_t;
        sources.push(sources[n - 1].clone());
        inflows.push(inflows[n - 1].clone());
        let mut prev: Option<Vec<f64>> = None;
        let mut fix = 0.0;
        let mut converged = false;
        let mut change = f64::INFINITY;
        for it in 0..MAX_STEP_ITERATIONS {
            let hist = MarchHistory {
                n,
                nv,
                source: &sources,
                inflow: &inflows,
                initial: f0,
            };
            wall_out.iter_mut().for_each(|x| *x = 0.0);
            ctx.plan()
                .eval_slice(sl, 0.0, &hist, Parts::ALL, &mut f, &mut wall_out);
            if zero_mass {
                fix = marcher.remove_mass(&mut f, &mut wall_out);
            }
            if it < settings.gamma_updates {
                gam = marcher.nonlinear_source(sl, &f);
            }
            let new_src = marcher.k_source(&f, &gam);
            let new_in = marcher.inflow(sl, &wall_out);
            sources[n] = new_src;
            inflows[n] = new_in;
            if let Some(p) = &prev {
                // Relative change, with an absolute floor so that fields at
                // rounding level do not chase noise.
                let scale = f.iter().fold(STEP_SCALE_FLOOR, |m, x| m.max(x.abs()));
                let d = f
                    .iter()
                    .zip(p)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
                let last = change;
                change = d / scale;
                // Below STALL_LEVEL a change that no longer contracts is
                // rounding noise.
                if change <= settings.step_tol || (change <= STALL_LEVEL && change >= 0.5 * last) {
                    converged = true;
                    break;
                }
            }
            prev = Some(f.clone());
        }
        if !converged {
            return Err(KineticsError::NonConvergence {
                solver: "ibvp_march step",
                iterations: MAX_STEP_ITERATIONS,
                last_change: change,
            });
        }
        let rec = marcher.record(n, sl, &f, fix);
        if initial > 0.0 && rec.weighted_sup > BLOW_UP_FACTOR * initial {
            return Err(KineticsError::BlowUp {
                step: n,
                norm: rec.weighted_sup,
                initial,
            });
        }
        if !rec.weighted_sup.is_finite() {
            return Err(KineticsError::BlowUp {
                step: n,
                norm: rec.weighted_sup,
                initial,
            });
        }
        records.push(rec);
        if n >= keep {
            sources[n - keep] = Vec::new();
            inflows[n - keep] = Vec::new();
        }
    }
    Ok(StabilityRun {
        records,
        n_t,
        periods: n_periods,
        initial_weighted_sup: initial,
        final_slice: f,
    })
}

/// `κ (I − P)` of a Gaussian bump in `(x̄, v̄)`, scaled so that
/// `‖w f₀‖_∞ = amplitude`. Center and width depend on `seed`.
pub fn initial_perturbation(ctx: &SolverContext, amplitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xc = rng.gen_range(0.3..0.7);
    let vc = rng.gen_range(-1.0..1.0);
    let width = rng.gen_range(0.08..0.15);
    let nv = ctx.space.len();
    let mut f = vec![0.0; ctx.st.n_x() * nv];
    for (i, row) in f.chunks_mut(nv).enumerate() {
        let gx = (-(ctx.st.x(i) - xc).powi(2) / (2.0 * width * width)).exp();
        for (k, v) in ctx.space.nodes().iter().enumerate() {
            let r2 = (v[0] - vc).powi(2) + v[1] * v[1] + v[2] * v[2];
            row[k] = gx * (-0.5 * r2).exp();
        }
        ctx.table().projector().remove(row);
    }
    let s = sup_weighted(&f, ctx.weight());
    if s > 0.0 {
        f.iter_mut().for_each(|x| *x *= amplitude / s);
    }
    f
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub lambda1: f64,
    pub r2: f64,
    /// Smallest `C` with `‖w f(t)‖_∞ ≤ C e^{−λ₁ t} ‖w f₀‖_∞` on the run.
    pub c: f64,
    pub tail_start: f64,
}

/// Least-squares fit `ln y = a − λ t`; returns `(λ, a, R²)`.
pub fn fit_exponential(t: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if t.len() != y.len() || t.len() < 3 {
        return Err(KineticsError::FitRejected(
            "need at least three points".into(),
        ));
    }
    if y.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(KineticsError::FitRejected(
            "non-positive norm in history".into(),
        ));
    }
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = t.len() as f64;
    let (mt, my) = (t.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = t.iter().zip(&ly).map(|(a, b)| (a - mt) * (b - my)).sum();
    let sxx: f64 = t.iter().map(|a| (a - mt) * (a - mt)).sum();
    let slope = sxy / sxx;
    let a = my - slope * mt;
    let ss_tot: f64 = ly.iter().map(|b| (b - my) * (b - my)).sum();
    let ss_res: f64 = t
        .iter()
        .zip(&ly)
        .map(|(x, b)| (b - a - slope * x).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok((-slope, a, r2))
}

/// Fits the decay rate of `‖w f‖_∞` over the second half of the run.
pub fn decay_rate_fit(run: &StabilityRun) -> Result<DecayFit> {
    if run.periods < 5 {
        return Err(KineticsError::FitRejected(format!(
            "need at least 5 periods, got {}",
            run.periods
        )));
    }
    let t_end = run.records.last().map_or(0.0, |r| r.t);
    let tail_start = 0.5 * t_end;
    let tail: Vec<&StepRecord> = run.records.iter().filter(|r| r.t >= tail_start).collect();
    // Per-period maxima over the tail must decrease.
    let maxima: Vec<f64> = tail
        .chunks(run.n_t)
        .filter(|c| c.len() == run.n_t)
        .map(|c| c.iter().fold(0.0f64, |m, r| m.max(r.weighted_sup)))
        .collect();
    if maxima.windows(2).any(|w| w[1] >= w[0]) {
        return Err(KineticsError::FitRejected("tail is not monotone".into()));
    }
    let t: Vec<f64> = tail.iter().map(|r| r.t).collect();
    let y: Vec<f64> = tail.iter().map(|r| r.weighted_sup).collect();
    let (lambda1, _, r2) = fit_exponential(&t, &y)?;
    let c = run
        .records
        .iter()
        .map(|r| r.weighted_sup * (lambda1 * r.t).exp() / run.initial_weighted_sup)
        .fold(0.0, f64::max);
    Ok(DecayFit {
        lambda1,
        r2,
        c,
        tail_start,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Positivity {
    pub min: f64,
    pub max: f64,
    /// `(slice, x index, node)` of the minimum.
    pub location: (usize, usize, usize),
    pub speed_at_min: f64,
    pub pass: bool,
}

/// Minimum of a raw distribution `F` over every node; passes when it is
/// at least `−1e−10 · max F`.
pub fn positivity_check(ctx: &SolverContext, full: &DistributionField) -> Positivity {
    let (n_t, n_x, nv) = full.dims();
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut location = (0, 0, 0);
    for n in 0..n_t {
        for i in 0..n_x {
            for (k, v) in full.at(n, i).iter().enumerate() {
                if *v < min {
                    min = *v;
                    location = (n, i, k);
                }
                max = max.max(*v);
            }
        }
    }
    let v = ctx.space.nodes()[location.2.min(nv.saturating_sub(1))];
    Positivity {
        min,
        max,
        location,
        speed_at_min: (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt(),
        pass: min >= -1e-10 * max,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MassDrift {
    /// `∫∫ F` at `t = kT̄`.
    pub masses: Vec<f64>,
    /// `|M_k − M_{k−1}| / M_0` per period.
    pub drift: Vec<f64>,
    pub max_drift: f64,
}

/// Marches `F` itself from `F = μ` without any mass correction and reports
/// the change of `∫∫ F` per period.
pub fn mass_conservation_check(
    ctx: &SolverContext,
    n_periods: usize,
    settings: &StabilitySettings,
) -> Result<MassDrift> {
    let f0 = vec![0.0; ctx.st.n_x() * ctx.space.len()];
    let run = ibvp_march(ctx, MarchMode::Full, &f0, n_periods, settings)?;
    Ok(mass_drift(&run))
}

pub fn mass_drift(run: &StabilityRun) -> MassDrift {
    let masses: Vec<f64> = run
        .records
        .iter()
        .step_by(run.n_t)
        .map(|r| r.mass)
        .collect();
    let m0 = masses.first().copied().unwrap_or(1.0);
    let drift: Vec<f64> = masses
        .windows(2)
        .map(|w| (w[1] - w[0]).abs() / m0)
        .collect();
    let max_drift = drift.iter().copied().fold(0.0, f64::max);
    MassDrift {
        masses,
        drift,
        max_drift,
    }
}
