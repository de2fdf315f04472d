//! Run configuration: a flat JSON object with dotted keys. Every key is
//! optional; missing keys take the defaults printed by `print-config`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::collision::GammaMethod;
use crate::error::{config_err, Result};
use crate::grid::{Symmetry, WeightFunction};
use crate::solvers::{GridSpec, SolverSettings};
use crate::stability::StabilitySettings;
use crate::wall::{Shape, WallMotion, DELTA_MAX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "wall.delta")]
    pub delta: f64,
    #[serde(rename = "wall.period")]
    pub period: f64,
    #[serde(rename = "wall.shape")]
    pub shape: Shape,
    /// Admissible amplitude for the nonlinear solve.
    #[serde(rename = "wall.delta0")]
    pub delta0: f64,

    #[serde(rename = "grid.v_max")]
    pub v_max: f64,
    #[serde(rename = "grid.n_v")]
    pub n_v: usize,
    #[serde(rename = "grid.n_x")]
    pub n_x: usize,
    #[serde(rename = "grid.n_t")]
    pub n_t: usize,
    #[serde(rename = "grid.symmetry")]
    pub symmetry: Symmetry,

    #[serde(rename = "weight.beta")]
    pub beta: f64,
    #[serde(rename = "weight.q")]
    pub q: f64,

    #[serde(rename = "solver.tol_fix")]
    pub tol_fix: f64,
    #[serde(rename = "solver.tol_outer")]
    pub tol_outer: f64,
    #[serde(rename = "solver.max_iter")]
    pub max_iter: usize,
    #[serde(rename = "solver.lambda0")]
    pub lambda0: Option<f64>,
    #[serde(rename = "solver.m_omega")]
    pub m_omega: usize,
    #[serde(rename = "solver.gamma_method")]
    pub gamma_method: GammaMethod,
    #[serde(rename = "solver.gmres_restart")]
    pub gmres_restart: usize,

    #[serde(rename = "stability.periods")]
    pub periods: usize,
    #[serde(rename = "stability.f0_amplitude")]
    pub f0_amplitude: f64,
    #[serde(rename = "stability.seed")]
    pub stability_seed: u64,
    #[serde(rename = "stability.step_tol")]
    pub step_tol: f64,

    #[serde(rename = "cycles.t0")]
    pub cycles_t0: f64,
    #[serde(rename = "cycles.k")]
    pub cycles_k: Vec<usize>,
    #[serde(rename = "cycles.samples")]
    pub cycles_samples: usize,
    #[serde(rename = "cycles.seed")]
    pub cycles_seed: u64,

    #[serde(rename = "run.threads")]
    pub threads: usize,
    #[serde(rename = "run.out")]
    pub out: Option<PathBuf>,
    #[serde(rename = "run.report")]
    pub report: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let grid = GridSpec::default();
        let solver = SolverSettings::default();
        let stab = StabilitySettings::default();
        Self {
            delta: 0.01,
            period: 1.0,
            shape: Shape::Sine,
            delta0: 0.05,
            v_max: grid.v_max,
            n_v: grid.n_v,
            n_x: grid.n_x,
            n_t: grid.n_t,
            symmetry: grid.symmetry,
            beta: 3.5,
            q: 0.5,
            tol_fix: solver.tol_fix,
            tol_outer: solver.tol_outer,
            max_iter: solver.max_iter,
            lambda0: solver.lambda0,
            m_omega: solver.m_omega,
            gamma_method: solver.gamma_method,
            gmres_restart: solver.gmres_restart,
            periods: stab.periods,
            f0_amplitude: stab.f0_amplitude,
            stability_seed: stab.seed,
            step_tol: stab.step_tol,
            cycles_t0: 20.0,
            cycles_k: vec![1, 2, 4, 8],
            cycles_samples: 1_000_000,
            cycles_seed: 1,
            threads: 1,
            out: None,
            report: None,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=DELTA_MAX).contains(&self.delta) {
            return Err(config_err(
                "wall.delta",
                format!("must lie in [0, {DELTA_MAX}]"),
            ));
        }
        if self.delta > self.delta0 {
            return Err(config_err(
                "wall.delta",
                format!(
                    "exceeds the admissible amplitude wall.delta0 = {}",
                    self.delta0
                ),
            ));
        }
        if !(0.0..=DELTA_MAX).contains(&self.delta0) {
            return Err(config_err(
                "wall.delta0",
                format!("must lie in [0, {DELTA_MAX}]"),
            ));
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(config_err("wall.period", "must be positive"));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(config_err("grid.v_max", "must be positive"));
        }
        if self.n_v < 2 || self.n_v % 2 != 0 {
            return Err(config_err("grid.n_v", "must be even and at least 2"));
        }
        if self.n_x < 2 {
            return Err(config_err("grid.n_x", "must be at least 2"));
        }
        if self.n_t < 2 {
            return Err(config_err("grid.n_t", "must be at least 2"));
        }
        if self.beta <= 3.0 || !self.beta.is_finite() {
            return Err(config_err("weight.beta", "must exceed 3"));
        }
        if !(0.0..1.0).contains(&self.q) {
            return Err(config_err("weight.q", "must lie in [0, 1)"));
        }
        self.solver_settings().validate()?;
        if self.periods == 0 {
            return Err(config_err("stability.periods", "must be positive"));
        }
        if !(self.f0_amplitude >= 0.0 && self.f0_amplitude.is_finite()) {
            return Err(config_err("stability.f0_amplitude", "must be non-negative"));
        }
        if !(self.step_tol > 0.0 && self.step_tol < 1.0) {
            return Err(config_err("stability.step_tol", "must lie in (0, 1)"));
        }
        if !(self.cycles_t0 > 0.0 && self.cycles_t0.is_finite()) {
            return Err(config_err("cycles.t0", "must be positive"));
        }
        if self.cycles_k.is_empty() || self.cycles_k.contains(&0) {
            return Err(config_err(
                "cycles.k",
                "must be a non-empty list of positive integers",
            ));
        }
        if self.cycles_samples == 0 {
            return Err(config_err("cycles.samples", "must be positive"));
        }
        if self.threads == 0 {
            return Err(config_err("run.threads", "must be positive"));
        }
        Ok(())
    }

    pub fn wall(&self) -> Result<WallMotion> {
        WallMotion::new(self.delta, self.period, self.shape.clone())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec {
            v_max: self.v_max,
            n_v: self.n_v,
            n_x: self.n_x,
            n_t: self.n_t,
            symmetry: self.symmetry,
        }
    }

    pub fn weight(&self) -> Result<WeightFunction> {
        WeightFunction::new(self.beta, self.q)
    }

    pub fn solver_settings(&self) -> SolverSettings {
        SolverSettings {
            tol_fix: self.tol_fix,
            tol_outer: self.tol_outer,
            max_iter: self.max_iter,
            lambda0: self.lambda0,
            m_omega: self.m_omega,
            gamma_method: self.gamma_method,
            gmres_restart: self.gmres_restart,
        }
    }

    pub fn stability_settings(&self) -> StabilitySettings {
        StabilitySettings {
            periods: self.periods,
            f0_amplitude: self.f0_amplitude,
            seed: self.stability_seed,
            step_tol: self.step_tol,
            ..StabilitySettings::default()
        }
    }
}
