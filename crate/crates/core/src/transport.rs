//! Long-characteristic evaluation of the damped transport problem
//!
//! ```text
//! ∂ₜf + v₁∂ₓf + G ∂_{v₁}f + (ν − G v₁/2 + λ) f = S,   f|γ₋ = f_in
//! ```
//!
//! by the mild formula. Every node `(tₙ, xᵢ, v)` and every outgoing wall node
//! is traced backward once. The trace records its state at the earlier slice
//! times `tₙ − k·Δt` until it reaches a wall (or the cap). The source integral
//! uses an exponentially fitted trapezoid rule on those samples, exact for
//! piecewise-linear `S` under piecewise-constant damping. `S` is bilinear in
//! `(x̄, v̄₁)` on each slice, with `x̄` clamped to the cell centers. Boundary
//! values are linear in time between slices and linear in `v̄₁` on the
//! incoming half.
//!
//! The force depends on `(t̄, x̄)` only, so one trace serves every
//! perpendicular velocity `(v₂, v₃)`; only the damping differs between them.

use rayon::prelude::*;

use crate::characteristics::{
    backward_exit_constant, default_step, trace_backward, Force, PhasePoint, TraceSample,
};
use crate::collision::{nu_min, nu_speed};
use crate::grid::{BoundaryTrace, DistributionField, SpaceTimeGrid, VelocitySpace};

/// Cap on backward traces in units of `1/ν(0)`.
pub const CAP_FACTOR: f64 = 40.0;

#[derive(Debug, Clone, Copy)]
struct Sample {
    x: f64,
    v1: f64,
    /// `−G v₁/2` at the sample.
    gpart: f64,
}

#[derive(Debug, Clone, Copy)]
enum End {
    Exit {
        wall: usize,
        t_b: f64,
        v1: f64,
        gpart: f64,
    },
    Capped,
}

#[derive(Debug, Clone, Copy)]
struct Trace {
    start: usize,
    len: usize,
    end: End,
}

/// `ν` on a fine `v₁` grid for each perpendicular node.
#[derive(Debug, Clone)]
struct NuTable {
    lo: f64,
    inv_h: f64,
    n: usize,
    data: Vec<f64>,
}

impl NuTable {
    fn new(space: &VelocitySpace, half_width: f64) -> Self {
        let per = 256.0;
        let n = (2.0 * half_width * per).ceil() as usize + 1;
        let lo = -half_width;
        let mut data = Vec::with_capacity(space.n_perp() * n);
        for p in 0..space.n_perp() {
            let r2 = space.perp_speed_sq(p);
            for j in 0..n {
                let v1 = lo + j as f64 / per;
                data.push(nu_speed((v1 * v1 + r2).sqrt()));
            }
        }
        Self {
            lo,
            inv_h: per,
            n,
            data,
        }
    }

    #[inline]
    fn locate(&self, v1: f64) -> (usize, f64) {
        let u = ((v1 - self.lo) * self.inv_h).clamp(0.0, (self.n - 1) as f64 - 1e-9);
        let j = u as usize;
        (j, u - j as f64)
    }

    #[inline]
    fn at(&self, p: usize, j: usize, t: f64) -> f64 {
        let row = &self.data[p * self.n..];
        row[j] + t * (row[j + 1] - row[j])
    }
}

/// Sources and boundary values seen from the slice being evaluated.
pub trait History: Sync {
    /// Source slice `k` steps back, laid out `[x][node]`.
    fn source(&self, k: usize) -> &[f64];
    /// Incoming trace at `wall`, `m` steps back.
    fn inflow(&self, m: usize, wall: usize) -> &[f64];
    /// Number of steps back to the initial time, with the initial slice.
    fn initial(&self) -> Option<(usize, &[f64])> {
        None
    }
}

/// Periodic history read from one stored period.
pub struct PeriodicHistory<'a> {
    pub n: usize,
    pub source: &'a DistributionField,
    pub inflow: &'a BoundaryTrace,
}

impl History for PeriodicHistory<'_> {
    fn source(&self, k: usize) -> &[f64] {
        let nt = self.source.dims().0;
        self.source.slice((self.n + nt * (k / nt + 1) - k) % nt)
    }
    fn inflow(&self, m: usize, wall: usize) -> &[f64] {
        let nt = self.inflow.n_t();
        self.inflow.at((self.n + nt * (m / nt + 1) - m) % nt, wall)
    }
}

/// What to include when evaluating traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parts {
    pub source: bool,
    pub inflow: bool,
}

impl Parts {
    pub const ALL: Parts = Parts {
        source: true,
        inflow: true,
    };
    pub const SOURCE: Parts = Parts {
        source: true,
        inflow: false,
    };
    pub const INFLOW: Parts = Parts {
        source: false,
        inflow: true,
    };
}

/// Backward traces of every node over one period.
#[derive(Debug, Clone)]
pub struct TransportPlan {
    space: VelocitySpace,
    st: SpaceTimeGrid,
    centers: Vec<f64>,
    samples: Vec<Sample>,
    /// Interior traces, index `(n·n_x + i)·n_v1 + a`.
    interior: Vec<Trace>,
    /// Wall traces, index `(n·2 + wall)·(n_v1/2) + j` over outgoing `v₁`.
    wall: Vec<Trace>,
    nu: NuTable,
    t_cap: f64,
}

impl TransportPlan {
    pub fn build(space: &VelocitySpace, st: &SpaceTimeGrid, force: &dyn Force) -> Self {
        let dt = st.dt();
        let t_cap = (CAP_FACTOR / nu_min() / dt).ceil() * dt;
        let centers = space.grid().centers().to_vec();
        let n_v1 = space.n_v1();
        let half = n_v1 / 2;
        let h = default_step(force);
        let mut starts: Vec<(f64, f64, f64, bool)> = Vec::new();
        for n in 0..st.n_t() {
            for i in 0..st.n_x() {
                for &c in &centers {
                    starts.push((st.t(n), st.x(i), c, false));
                }
            }
        }
        for n in 0..st.n_t() {
            for wall in 0..2 {
                for j in 0..half {
                    // Outgoing: v₁ < 0 at wall 0, v₁ > 0 at wall 1.
                    let c = if wall == 0 {
                        centers[j]
                    } else {
                        centers[half + j]
                    };
                    starts.push((st.t(n), wall as f64, c, true));
                }
            }
        }
        let traced: Vec<(Vec<Sample>, End)> = starts
            .par_iter()
            .map(|&(t, x, v1, _)| {
                trace_one(force, PhasePoint::new(t, x, [v1, 0.0, 0.0]), h, dt, t_cap)
            })
            .collect();
        let mut samples = Vec::new();
        let mut traces = Vec::with_capacity(traced.len());
        for (s, end) in traced {
            traces.push(Trace {
                start: samples.len(),
                len: s.len(),
                end,
            });
            samples.extend(s);
        }
        let n_interior = st.n_t() * st.n_x() * n_v1;
        let wall = traces.split_off(n_interior);
        let v1_reach = samples
            .iter()
            .map(|s| s.v1.abs())
            .fold(space.grid().v_max(), f64::max);
        Self {
            space: space.clone(),
            st: st.clone(),
            centers,
            samples,
            interior: traces,
            wall,
            nu: NuTable::new(space, v1_reach + 1.0),
            t_cap,
        }
    }

    pub fn space(&self) -> &VelocitySpace {
        &self.space
    }

    pub fn grid(&self) -> &SpaceTimeGrid {
        &self.st
    }

    pub fn t_cap(&self) -> f64 {
        self.t_cap
    }

    pub fn sample_count(&self) -> usize {
        self.samples.len()
    }

    /// Fraction of interior traces that hit the cap.
    pub fn capped_fraction(&self) -> f64 {
        let c = self
            .interior
            .iter()
            .filter(|t| matches!(t.end, End::Capped))
            .count();
        c as f64 / self.interior.len() as f64
    }

    /// Evaluates slice `n`: interior values into `out` (`[x][node]`) and the
    /// outgoing wall values into `wall_out` (`[wall][node]`, incoming half
    /// untouched).
    pub fn eval_slice<H: History>(
        &self,
        n: usize,
        lambda: f64,
        hist: &H,
        parts: Parts,
        out: &mut [f64],
        wall_out: &mut [f64],
    ) {
        let np = self.space.n_perp();
        let n_v1 = self.space.n_v1();
        let nv = self.space.len();
        let n_x = self.st.n_x();
        let base = n * n_x * n_v1;
        out.par_chunks_mut(nv).enumerate().for_each(|(i, row)| {
            let mut scratch = Scratch::new(np);
            for a in 0..n_v1 {
                let tr = &self.interior[base + i * n_v1 + a];
                self.eval_trace(
                    tr,
                    lambda,
                    hist,
                    parts,
                    &mut scratch,
                    &mut row[a * np..(a + 1) * np],
                );
            }
        });
        let half = n_v1 / 2;
        let mut scratch = Scratch::new(np);
        for wall in 0..2 {
            for j in 0..half {
                let tr = &self.wall[(n * 2 + wall) * half + j];
                let a = if wall == 0 { j } else { half + j };
                let dst = &mut wall_out[wall * nv + a * np..wall * nv + (a + 1) * np];
                self.eval_trace(tr, lambda, hist, parts, &mut scratch, dst);
            }
        }
    }

    /// Evaluates every slice against one stored period of sources and
    /// inflow.
    pub fn apply_periodic(
        &self,
        lambda: f64,
        source: &DistributionField,
        inflow: &BoundaryTrace,
        parts: Parts,
        out: &mut DistributionField,
        wall_out: &mut BoundaryTrace,
    ) {
        let nv = self.space.len();
        for n in 0..self.st.n_t() {
            let hist = PeriodicHistory { n, source, inflow };
            let mut w = vec![0.0; 2 * nv];
            self.eval_slice(n, lambda, &hist, parts, out.slice_mut(n), &mut w);
            wall_out.at_mut(n, 0).copy_from_slice(&w[..nv]);
            wall_out.at_mut(n, 1).copy_from_slice(&w[nv..]);
        }
    }

    /// Outgoing wall values only, for every slice.
    pub fn apply_periodic_walls(
        &self,
        lambda: f64,
        source: &DistributionField,
        inflow: &BoundaryTrace,
        parts: Parts,
        wall_out: &mut BoundaryTrace,
    ) {
        let np = self.space.n_perp();
        let half = self.space.n_v1() / 2;
        let mut scratch = Scratch::new(np);
        for n in 0..self.st.n_t() {
            let hist = PeriodicHistory { n, source, inflow };
            for wall in 0..2 {
                let dst = wall_out.at_mut(n, wall);
                for j in 0..half {
                    let tr = &self.wall[(n * 2 + wall) * half + j];
                    let a = if wall == 0 { j } else { half + j };
                    self.eval_trace(
                        tr,
                        lambda,
                        &hist,
                        parts,
                        &mut scratch,
                        &mut dst[a * np..(a + 1) * np],
                    );
                }
            }
        }
    }

    #[inline]
    fn rates(&self, s: &Sample, lambda: f64, out: &mut [f64]) {
        let (j, t) = self.nu.locate(s.v1);
        let c = s.gpart + lambda;
        for (p, o) in out.iter_mut().enumerate() {
            *o = self.nu.at(p, j, t) + c;
        }
    }

    /// Bilinear interpolation of a `[x][node]` slice at `(x, v₁)`.
    #[inline]
    fn interp_slice(&self, slice: &[f64], x: f64, v1: f64, out: &mut [f64]) {
        let np = self.space.n_perp();
        let n_v1 = self.space.n_v1();
        let nv = self.space.len();
        let (i0, tx, i1) = locate_x(&self.st, x);
        let (a0, ta, a1) = locate_centers(&self.centers, 0, n_v1, v1);
        let r00 = &slice[i0 * nv + a0 * np..][..np];
        let r01 = &slice[i0 * nv + a1 * np..][..np];
        let r10 = &slice[i1 * nv + a0 * np..][..np];
        let r11 = &slice[i1 * nv + a1 * np..][..np];
        let (w00, w01, w10, w11) = (
            (1.0 - tx) * (1.0 - ta),
            (1.0 - tx) * ta,
            tx * (1.0 - ta),
            tx * ta,
        );
        for p in 0..np {
            out[p] = w00 * r00[p] + w01 * r01[p] + w10 * r10[p] + w11 * r11[p];
        }
    }

    /// Linear interpolation in `v₁` of an incoming wall trace.
    #[inline]
    fn interp_inflow(&self, f: &[f64], wall: usize, v1: f64, out: &mut [f64], weight: f64) {
        let np = self.space.n_perp();
        let n_v1 = self.space.n_v1();
        let half = n_v1 / 2;
        let (lo, hi) = if wall == 0 { (half, n_v1) } else { (0, half) };
        let (a0, ta, a1) = locate_centers(&self.centers, lo, hi, v1);
        let r0 = &f[a0 * np..][..np];
        let r1 = &f[a1 * np..][..np];
        for p in 0..np {
            out[p] += weight * ((1.0 - ta) * r0[p] + ta * r1[p]);
        }
    }

    fn eval_trace<H: History>(
        &self,
        tr: &Trace,
        lambda: f64,
        hist: &H,
        parts: Parts,
        sc: &mut Scratch,
        out: &mut [f64],
    ) {
        let dt = self.st.dt();
        let samples = &self.samples[tr.start..tr.start + tr.len];
        let init = hist.initial();
        // A trace that is still inside at the initial time is cut there.
        let (last, truncated) = match init {
            Some((k0, _)) if k0 < samples.len() => (k0, true),
            _ => (samples.len() - 1, false),
        };
        out.iter_mut().for_each(|x| *x = 0.0);
        let Scratch {
            e,
            pend,
            prev,
            cur,
            s_cur,
        } = sc;
        e.iter_mut().for_each(|x| *x = 1.0);
        pend.iter_mut().for_each(|x| *x = 0.0);
        self.rates(&samples[0], lambda, prev);
        if !parts.source {
            s_cur.iter_mut().for_each(|x| *x = 0.0);
        } else {
            self.interp_slice(hist.source(0), samples[0].x, samples[0].v1, s_cur);
        }
        for k in 1..=last {
            let s = &samples[k];
            self.rates(s, lambda, cur);
            for p in 0..out.len() {
                let z = 0.5 * (prev[p] + cur[p]) * dt;
                let ez = (-z).exp();
                let (p0, p1) = phi(z, ez);
                out[p] += (pend[p] + e[p] * dt * p0) * s_cur[p];
                pend[p] = e[p] * dt * p1;
                e[p] *= ez;
                prev[p] = cur[p];
            }
            if parts.source {
                self.interp_slice(hist.source(k), s.x, s.v1, s_cur);
            }
        }
        if truncated {
            let (_, f0) = init.unwrap();
            for p in 0..out.len() {
                out[p] += pend[p] * s_cur[p];
            }
            if parts.inflow {
                // The initial slice plays the role of boundary data.
                let s = &samples[last];
                self.interp_slice(f0, s.x, s.v1, cur);
                for p in 0..out.len() {
                    out[p] += e[p] * cur[p];
                }
            }
            return;
        }
        match tr.end {
            End::Capped => {
                for p in 0..out.len() {
                    out[p] += pend[p] * s_cur[p];
                }
            }
            End::Exit {
                wall,
                t_b,
                v1,
                gpart,
            } => {
                let hp = (t_b - last as f64 * dt).max(0.0);
                let sb = Sample {
                    x: wall as f64,
                    v1,
                    gpart,
                };
                self.rates(&sb, lambda, cur);
                for p in 0..out.len() {
                    let z = 0.5 * (prev[p] + cur[p]) * hp;
                    let ez = (-z).exp();
                    let w = if z > 1e-8 {
                        (1.0 - ez) / z
                    } else {
                        1.0 - 0.5 * z
                    };
                    out[p] += (pend[p] + e[p] * hp * w) * s_cur[p];
                    e[p] *= ez;
                }
                if parts.inflow {
                    // Exits within rounding of a slice time use that slice.
                    let u = t_b / dt;
                    let u = if (u - u.round()).abs() < 1e-9 {
                        u.round()
                    } else {
                        u
                    };
                    let m = u.floor() as usize;
                    let th = u - m as f64;
                    // Reuse `cur` as accumulator for the boundary value.
                    cur.iter_mut().for_each(|x| *x = 0.0);
                    self.interp_inflow(hist.inflow(m, wall), wall, v1, cur, 1.0 - th);
                    if th > 0.0 {
                        self.interp_inflow(hist.inflow(m + 1, wall), wall, v1, cur, th);
                    }
                    for p in 0..out.len() {
                        out[p] += e[p] * cur[p];
                    }
                }
            }
        }
    }
}

struct Scratch {
    e: Vec<f64>,
    pend: Vec<f64>,
    prev: Vec<f64>,
    cur: Vec<f64>,
    s_cur: Vec<f64>,
}

impl Scratch {
    fn new(np: usize) -> Self {
        Self {
            e: vec![0.0; np],
            pend: vec![0.0; np],
            prev: vec![0.0; np],
            cur: vec![0.0; np],
            s_cur: vec![0.0; np],
        }
    }
}

/// Weights of the exponentially fitted trapezoid rule on one interval:
/// `∫₀¹ e^{−zτ}(1−τ) dτ` and `∫₀¹ e^{−zτ} τ dτ`.
#[inline]
fn phi(z: f64, ez: f64) -> (f64, f64) {
    if z < 1e-4 {
        (0.5 - z / 6.0 + z * z / 24.0, 0.5 - z / 3.0 + z * z / 8.0)
    } else {
        let z2 = z * z;
        ((z - 1.0 + ez) / z2, (1.0 - ez - z * ez) / z2)
    }
}

#[inline]
fn locate_x(st: &SpaceTimeGrid, x: f64) -> (usize, f64, usize) {
    let n = st.n_x();
    if n == 1 {
        return (0, 0.0, 0);
    }
    let u = (x * n as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i = (u as usize).min(n - 2);
    (i, u - i as f64, i + 1)
}

#[inline]
fn locate_centers(c: &[f64], lo: usize, hi: usize, v: f64) -> (usize, f64, usize) {
    if hi - lo == 1 {
        return (lo, 0.0, lo);
    }
    let h = c[1] - c[0];
    let u = ((v - c[lo]) / h).clamp(0.0, (hi - lo - 1) as f64);
    let i = (u as usize).min(hi - lo - 2);
    (lo + i, u - i as f64, lo + i + 1)
}

fn trace_one(force: &dyn Force, p: PhasePoint, h: f64, dt: f64, t_cap: f64) -> (Vec<Sample>, End) {
    let to_sample = |s: &TraceSample| Sample {
        x: s.x,
        v1: s.v1,
        gpart: -0.5 * s.g * s.v1,
    };
    if let Some(g0) = force.constant() {
        let ex = backward_exit_constant(p, g0, t_cap);
        let k_max = if ex.capped {
            (t_cap / dt).round() as usize
        } else {
            (ex.t_b / dt - 1e-12).floor().max(0.0) as usize
        };
        let samples = (0..=k_max)
            .map(|k| {
                let tau = k as f64 * dt;
                let v1 = p.v[0] - g0 * tau;
                Sample {
                    x: (p.x - p.v[0] * tau + 0.5 * g0 * tau * tau).clamp(0.0, 1.0),
                    v1,
                    gpart: -0.5 * g0 * v1,
                }
            })
            .collect();
        let end = if ex.capped || ex.wall.is_none() {
            End::Capped
        } else {
            End::Exit {
                wall: ex.wall.unwrap(),
                t_b: ex.t_b,
                v1: ex.v_b[0],
                gpart: -0.5 * g0 * ex.v_b[0],
            }
        };
        return (samples, end);
    }
    let (ex, raw) = trace_backward(p, force, h, t_cap, Some(dt));
    let mut samples: Vec<Sample> = Vec::with_capacity(raw.len());
    for (k, s) in raw.iter().enumerate() {
        // Slice samples sit at t − k·Δt; the exit state is appended last.
        let on_slice = ((p.t - s.s) / dt - k as f64).abs() < 1e-6;
        if on_slice {
            samples.push(to_sample(s));
        }
    }
    if samples.is_empty() {
        samples.push(Sample {
            x: p.x,
            v1: p.v[0],
            gpart: -0.5 * force.accel(p.t, p.x) * p.v[0],
        });
    }
    let end = match ex.wall {
        Some(wall) if !ex.capped => {
            // Drop a slice sample that coincides with the exit itself.
            let k_last = samples.len() - 1;
            if k_last > 0 && (k_last as f64 * dt - ex.t_b).abs() < 1e-12 {
                samples.pop();
            }
            End::Exit {
                wall,
                t_b: ex.t_b,
                v1: ex.v_b[0],
                gpart: -0.5 * force.accel(p.t - ex.t_b, wall as f64) * ex.v_b[0],
            }
        }
        _ => End::Capped,
    };
    (samples, end)
}
