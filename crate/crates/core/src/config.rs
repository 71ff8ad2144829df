//! Serializable description of a simulation and its resolution into a
//! ready-to-run model.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{Method, TimeGrid, DEFAULT_CFL_SAFETY, DEFAULT_FP_MAX_ITER, DEFAULT_FP_TOL};
use crate::interaction::Assembly;
use crate::kernels::{KernelSet, DEFAULT_QUADRATURE_ORDER};
use crate::mesh::Mesh1D;
use crate::scheme::Model;
use crate::state::{InitialProfile, State};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub a: f64,
    pub b: f64,
}

/// Exactly one of `cells`, `dx` or `widths`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<usize>,
    /// Uniform width; must divide the domain length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    /// Relative widths of a graded mesh.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub widths: Option<Vec<f64>>,
}

impl MeshSpec {
    pub fn cells(n: usize) -> Self {
        Self {
            cells: Some(n),
            ..Self::default()
        }
    }

    pub fn dx(dx: f64) -> Self {
        Self {
            dx: Some(dx),
            ..Self::default()
        }
    }

    pub fn build(&self, domain: Domain) -> Result<Mesh1D> {
        match (self.cells, self.dx, &self.widths) {
            (Some(n), None, None) => Mesh1D::uniform(domain.a, domain.b, n),
            (None, Some(dx), None) => Mesh1D::uniform(domain.a, domain.b, cells_for(domain, dx)?),
            (None, None, Some(w)) => Mesh1D::graded(domain.a, domain.b, w),
            _ => Err(Error::InvalidMesh(
                "mesh needs exactly one of cells, dx, widths".into(),
            )),
        }
    }
}

/// Number of uniform cells of width `dx` on the domain.
pub fn cells_for(domain: Domain, dx: f64) -> Result<usize> {
    if !(dx > 0.0) {
        return Err(Error::InvalidMesh(format!("dx must be > 0, got {dx}")));
    }
    let ratio = (domain.b - domain.a) / dx;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-9 * ratio || n < 2.0 {
        return Err(Error::InvalidMesh(format!(
            "dx = {dx} does not divide [{}, {}] into at least 2 cells",
            domain.a, domain.b
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialData {
    pub rho: InitialProfile,
    pub eta: InitialProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorKind {
    #[default]
    Rk4,
    ImplicitEuler,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_final: f64,
    /// Reporting interval.
    pub dt_report: f64,
    #[serde(default)]
    pub integrator: IntegratorKind,
    #[serde(default = "default_safety")]
    pub cfl_safety: f64,
    #[serde(default = "default_fp_tol")]
    pub fp_tol: f64,
    #[serde(default = "default_fp_max_iter")]
    pub fp_max_iter: usize,
    /// Implicit step; defaults to a tenth of the reporting interval.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub implicit_dt: Option<f64>,
}

fn default_safety() -> f64 {
    DEFAULT_CFL_SAFETY
}

fn default_fp_tol() -> f64 {
    DEFAULT_FP_TOL
}

fn default_fp_max_iter() -> usize {
    DEFAULT_FP_MAX_ITER
}

fn default_true() -> bool {
    true
}

fn default_quadrature() -> usize {
    DEFAULT_QUADRATURE_ORDER
}

impl TimeConfig {
    pub fn new(t_final: f64, dt_report: f64) -> Self {
        Self {
            t_final,
            dt_report,
            integrator: IntegratorKind::Rk4,
            cfl_safety: DEFAULT_CFL_SAFETY,
            fp_tol: DEFAULT_FP_TOL,
            fp_max_iter: DEFAULT_FP_MAX_ITER,
            implicit_dt: None,
        }
    }

    pub fn method(&self) -> Method {
        match self.integrator {
            IntegratorKind::Rk4 => Method::Rk4 {
                cfl_safety: self.cfl_safety,
            },
            IntegratorKind::ImplicitEuler => Method::ImplicitEuler {
                dt: self.implicit_dt.unwrap_or(0.1 * self.dt_report),
                fp_tol: self.fp_tol,
                fp_max_iter: self.fp_max_iter,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPlan {
    /// Write a snapshot CSV at every reporting time.
    #[serde(default = "default_true")]
    pub snapshots: bool,
    #[serde(default = "default_true")]
    pub plots: bool,
}

impl Default for OutputPlan {
    fn default() -> Self {
        Self {
            snapshots: true,
            plots: true,
        }
    }
}

/// Grid ladder of a convergence study, as uniform widths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub study_dx: Vec<f64>,
    pub benchmark_dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteadyConfig {
    pub tol: f64,
    pub t_max: f64,
    /// Cells at or above this value count as support.
    #[serde(default = "default_support_threshold")]
    pub support_threshold: f64,
    #[serde(default)]
    pub march: March,
}

fn default_support_threshold() -> f64 {
    1e-6
}

/// How a run is driven towards a stationary state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum March {
    /// Backward Euler steps solved by Newton's method, with adaptive steps
    /// capped at `dt_max`. Larger caps converge in fewer steps, but the
    /// lagged interaction term can then lock into a two-step cycle.
    Newton { dt_max: f64 },
    /// The time integrator of the run, checking at every report.
    Integrator,
}

impl Default for March {
    fn default() -> Self {
        March::Newton { dt_max: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub domain: Domain,
    pub mesh: MeshSpec,
    pub eps: f64,
    pub nu: f64,
    pub kernels: KernelSet,
    pub initial: InitialData,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputPlan,
    #[serde(default = "default_quadrature")]
    pub quadrature_order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady: Option<SteadyConfig>,
}

/// A resolved configuration.
#[derive(Debug)]
pub struct Simulation {
    pub model: Model,
    pub initial: State,
    pub grid: TimeGrid,
    pub method: Method,
    /// Normalizing constants of parabola profiles, `[rho, eta]`.
    pub normalization: [Option<f64>; 2],
}

impl SimulationConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        let d = self.domain;
        check(
            d.a.is_finite() && d.b.is_finite() && d.a < d.b,
            format!("domain: need finite a < b, got [{}, {}]", d.a, d.b),
        );
        check(self.eps >= 0.0 && self.eps.is_finite(), format!("eps: must be ≥ 0, got {}", self.eps));
        check(self.nu >= 0.0 && self.nu.is_finite(), format!("nu: must be ≥ 0, got {}", self.nu));
        let given = [self.mesh.cells.is_some(), self.mesh.dx.is_some(), self.mesh.widths.is_some()];
        check(
            given.iter().filter(|&&g| g).count() == 1,
            "mesh: need exactly one of cells, dx, widths".into(),
        );
        if d.a < d.b {
            if let Err(e) = self.mesh.build(d) {
                if given.iter().filter(|&&g| g).count() == 1 {
                    out.push(format!("mesh: {e}"));
                }
            }
        }
        for (slot, k) in ["w11", "w12", "w21", "w22"].iter().zip(self.kernels.iter()) {
            if let Err(e) = k.validate() {
                out.push(format!("kernels.{slot}: {e}"));
            }
        }
        for (name, p) in [("rho", &self.initial.rho), ("eta", &self.initial.eta)] {
            if let Err(e) = p.validate() {
                out.push(format!("initial.{name}: {e}"));
            }
        }
        let t = &self.time;
        let mut check = |ok: bool, msg: String| {
            if !ok {
                out.push(msg);
            }
        };
        check(t.t_final > 0.0 && t.t_final.is_finite(), format!("time.t_final: must be > 0, got {}", t.t_final));
        check(t.dt_report > 0.0 && t.dt_report.is_finite(), format!("time.dt_report: must be > 0, got {}", t.dt_report));
        check(
            t.cfl_safety > 0.0 && t.cfl_safety <= 1.0,
            format!("time.cfl_safety: must lie in (0, 1], got {}", t.cfl_safety),
        );
        check(t.fp_tol > 0.0, format!("time.fp_tol: must be > 0, got {}", t.fp_tol));
        check(t.fp_max_iter >= 1, "time.fp_max_iter: must be ≥ 1".into());
        if let Some(dt) = t.implicit_dt {
            check(dt > 0.0 && dt.is_finite(), format!("time.implicit_dt: must be > 0, got {dt}"));
        }
        check(
            (1..=64).contains(&self.quadrature_order),
            format!("quadrature_order: must lie in 1..=64, got {}", self.quadrature_order),
        );
        if let Some(c) = &self.convergence {
            check(!c.study_dx.is_empty(), "convergence.study_dx: must not be empty".into());
            check(
                c.study_dx.windows(2).all(|w| w[1] < w[0]),
                "convergence.study_dx: must be strictly decreasing".into(),
            );
            check(
                c.study_dx.iter().all(|&dx| dx > c.benchmark_dx),
                "convergence.benchmark_dx: must be finer than every study grid".into(),
            );
            for &dx in c.study_dx.iter().chain([&c.benchmark_dx]) {
                if d.a < d.b {
                    if let Err(e) = cells_for(d, dx) {
                        out.push(format!("convergence: {e}"));
                    }
                }
            }
        }
        if let Some(s) = &self.steady {
            let mut check = |ok: bool, msg: String| {
                if !ok {
                    out.push(msg);
                }
            };
            check(s.tol > 0.0, format!("steady.tol: must be > 0, got {}", s.tol));
            check(s.t_max > 0.0, format!("steady.t_max: must be > 0, got {}", s.t_max));
            if let March::Newton { dt_max } = s.march {
                check(
                    dt_max > 0.0 && dt_max.is_finite(),
                    format!("steady.march.dt_max: must be finite and > 0, got {dt_max}"),
                );
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(v.join("; ")))
        }
    }

    /// Same configuration on a different uniform mesh.
    pub fn with_mesh(&self, mesh: MeshSpec) -> Self {
        Self {
            mesh,
            ..self.clone()
        }
    }

    pub fn build(&self) -> Result<Simulation> {
        self.validate()?;
        let mesh = Arc::new(self.mesh.build(self.domain)?);
        let order = self.quadrature_order;
        let rho = self.initial.rho.project(&mesh, order)?;
        let eta = self.initial.eta.project(&mesh, order)?;
        let normalization = [rho.normalization, eta.normalization];
        let initial = crate::state::checked_state(&mesh, rho.values, eta.values)?;
        let model = Model::new(mesh, self.eps, self.nu, &self.kernels, order, Assembly::Auto)?;
        Ok(Simulation {
            model,
            initial,
            grid: TimeGrid::new(self.time.dt_report, self.time.t_final)?,
            method: self.time.method(),
            normalization,
        })
    }
}
