//! Named experiment presets, benchmark-based convergence studies and
//! long-time runs towards stationary states.

use std::ops::ControlFlow;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    ConvergenceConfig, Domain, InitialData, MeshSpec, OutputPlan, March, SimulationConfig, SteadyConfig, TimeConfig,
};
use crate::error::{Error, Result};
use crate::integrators::{check_cfl, integrate, integrate_until, Method, NewtonStepper, RunStats, TimeGrid};
use crate::scheme::Model;
use crate::kernels::{KernelSet, KernelSpec, DEFAULT_QUADRATURE_ORDER};
use crate::mesh::Mesh1D;
use crate::state::{overlap, InitialProfile, State};

/// Names accepted by [`preset`]. Each also has a `_full` variant with a
/// finer resolution and the long horizon of a full study.
pub const PRESETS: [&str; 6] = [
    "diffusive_symmetric",
    "diffusive_asymmetric",
    "gaussian_eps01",
    "gaussian_eps05",
    "newtonian_attrep",
    "newtonian_attratt",
];

/// Step safety used by the presets. The stability estimate counts the
/// diffusivity twice over, so 0.9 still sits well inside the RK4 region.
pub const PRESET_CFL_SAFETY: f64 = 0.9;

/// `2^-k`.
pub fn dyadic(k: i32) -> f64 {
    2f64.powi(-k)
}

fn ladder(coarsest: i32, finest: i32, benchmark: i32) -> ConvergenceConfig {
    ConvergenceConfig {
        study_dx: (coarsest..=finest).map(dyadic).collect(),
        benchmark_dx: dyadic(benchmark),
    }
}

fn base(domain: Domain, dx: f64, eps: f64, nu: f64, kernels: KernelSet, initial: InitialData, time: TimeConfig) -> SimulationConfig {
    SimulationConfig {
        preset: None,
        domain,
        mesh: MeshSpec::dx(dx),
        eps,
        nu,
        kernels,
        initial,
        time: TimeConfig {
            cfl_safety: PRESET_CFL_SAFETY,
            ..time
        },
        output: OutputPlan::default(),
        quadrature_order: DEFAULT_QUADRATURE_ORDER,
        convergence: None,
        steady: None,
    }
}

fn indicator(lo: f64, hi: f64) -> InitialProfile {
    InitialProfile::Indicator { lo, hi, height: 1.0 }
}

fn parabola(lo: f64, hi: f64, mass: f64) -> InitialProfile {
    InitialProfile::Parabola {
        lo,
        hi,
        mass,
        floor: 0.0,
    }
}

/// Gaussian kernels: quartic-exponent self-attraction and quadratic-exponent
/// cross-interaction, attractive for ρ and repulsive for η.
pub fn gaussian_kernels() -> KernelSet {
    KernelSet {
        w11: KernelSpec::gaussian(1.0, 4.0, 0.1),
        w12: KernelSpec::gaussian(1.0, 2.0, 0.1),
        w21: KernelSpec::gaussian(-1.0, 2.0, 0.1),
        w22: KernelSpec::gaussian(1.0, 4.0, 0.1),
    }
}

/// Quadratic self-attraction with `W₁₂ = |x|` and `W₂₁ = sign·|x|`.
pub fn newtonian_kernels(cross_sign: i8) -> KernelSet {
    KernelSet {
        w11: KernelSpec::Quadratic,
        w12: KernelSpec::absolute(1),
        w21: KernelSpec::absolute(cross_sign),
        w22: KernelSpec::Quadratic,
    }
}

/// Configuration of a named experiment.
pub fn preset(name: &str) -> Result<SimulationConfig> {
    let (stem, full) = match name.strip_suffix("_full") {
        Some(stem) => (stem, true),
        None => (name, false),
    };
    let mut config = match stem {
        "diffusive_symmetric" | "diffusive_asymmetric" => {
            let initial = if stem == "diffusive_symmetric" {
                InitialData {
                    rho: indicator(7.0, 10.0),
                    eta: indicator(7.0, 10.0),
                }
            } else {
                InitialData {
                    rho: indicator(5.0, 7.0),
                    eta: indicator(10.0, 12.0),
                }
            };
            let t_final = if full { 10.0 } else { 2.0 };
            let mut c = base(
                Domain { a: 0.0, b: 17.0 },
                dyadic(7),
                0.1,
                0.5,
                KernelSet::zero(),
                initial,
                TimeConfig::new(t_final, 0.05),
            );
            c.convergence = Some(if full { ladder(4, 8, 10) } else { ladder(4, 7, 9) });
            c
        }
        "gaussian_eps01" | "gaussian_eps05" => {
            let eps = if stem == "gaussian_eps01" { 0.1 } else { 0.5 };
            let t_final = if full { 10.0 } else { 0.5 };
            let mut c = base(
                Domain { a: 0.0, b: 9.0 },
                dyadic(7),
                eps,
                0.4,
                gaussian_kernels(),
                InitialData {
                    rho: parabola(6.5, 9.5, 1.0),
                    eta: parabola(6.5, 9.5, 1.0),
                },
                TimeConfig::new(t_final, 0.05),
            );
            c.convergence = Some(if full { ladder(4, 8, 10) } else { ladder(4, 7, 9) });
            c
        }
        "newtonian_attrep" | "newtonian_attratt" => {
            let (sign, m1, m2) = if stem == "newtonian_attrep" {
                (-1, 1.0, 1.0)
            } else {
                (1, 0.6, 0.1)
            };
            // The pair first travels as a pulse until it meets a wall and
            // only then settles, which takes about 1e4 time units.
            let t_max = 5e4;
            let mut c = base(
                Domain { a: 0.0, b: 5.0 },
                dyadic(if full { 10 } else { 8 }),
                0.0,
                0.05,
                newtonian_kernels(sign),
                InitialData {
                    rho: parabola(3.0, 5.0, m1),
                    eta: parabola(3.0, 5.0, m2),
                },
                TimeConfig::new(10.0, 0.5),
            );
            c.steady = Some(SteadyConfig {
                tol: 1e-8,
                t_max,
                support_threshold: 1e-6,
                march: March::default(),
            });
            c
        }
        _ => {
            return Err(Error::InvalidParameter(format!(
                "unknown preset {name:?}; known: {}",
                PRESETS.join(", ")
            )))
        }
    };
    config.preset = Some(name.to_string());
    Ok(config)
}

/// Reported states of one run together with their mesh.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub mesh: Arc<Mesh1D>,
    pub states: Vec<State>,
}

/// Indices of the fine cells containing each coarse center.
fn sample_map(fine: &Mesh1D, coarse: &Mesh1D) -> Result<Vec<usize>> {
    let tol = 1e-12 * fine.length();
    if (fine.a() - coarse.a()).abs() > tol || (fine.b() - coarse.b()).abs() > tol {
        return Err(Error::DomainMismatch {
            fine: [fine.a(), fine.b()],
            coarse: [coarse.a(), coarse.b()],
        });
    }
    coarse
        .centers()
        .iter()
        .map(|&x| fine.locate(x.clamp(fine.a(), fine.b())).ok_or(Error::MeshMismatch))
        .collect()
}

fn nearest_snapshot(states: &[State], t: f64) -> Option<&State> {
    states.iter().min_by(|a, b| (a.time - t).abs().total_cmp(&(b.time - t).abs()))
}

fn sample(state: &State, map: &[usize], coarse: &Mesh1D, time: f64) -> State {
    State {
        rho: map.iter().map(|&j| state.rho[j]).collect(),
        eta: map.iter().map(|&j| state.eta[j]).collect(),
        time,
        mesh_id: coarse.id(),
    }
}

/// Benchmark values at the centers of `coarse` for each time in `times`:
/// the piecewise constant fine solution evaluated at each coarse center,
/// taken from the stored snapshot nearest in time.
pub fn restrict_benchmark(fine: &Trajectory, coarse: &Mesh1D, times: &[f64]) -> Result<Vec<State>> {
    let map = sample_map(&fine.mesh, coarse)?;
    times
        .iter()
        .map(|&t| {
            nearest_snapshot(&fine.states, t)
                .map(|s| sample(s, &map, coarse, t))
                .ok_or_else(|| Error::InvalidParameter("benchmark trajectory is empty".into()))
        })
        .collect()
}

/// Parameters of the reference run of a convergence study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkDescriptor {
    pub dx: f64,
    pub cells: usize,
    pub t_final: f64,
    pub dt_report: f64,
    pub reports: usize,
    pub method: Method,
    pub steps: usize,
}

/// Health of a single run inside a study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub dx: f64,
    pub cells: usize,
    pub steps: usize,
    /// Smallest cell value seen at any reporting time.
    pub min_value: f64,
    /// Largest relative mass change of either species over the run.
    pub mass_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Study grid widths, coarsest first.
    pub grid_sizes: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `ln e` against `ln Δx`; absent when an error
    /// vanishes or fewer than two grids were run.
    pub fitted_order: Option<f64>,
    pub benchmark: BenchmarkDescriptor,
    /// Study runs followed by the benchmark run.
    pub runs: Vec<RunSummary>,
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn fit_order(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 || x.iter().chain(y).any(|&v| !(v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Tracks the extremes a study needs while a run streams its reports.
struct Monitor {
    m0: (f64, f64),
    min_value: f64,
    mass_drift: f64,
}

impl Monitor {
    fn new(state: &State, mesh: &Mesh1D) -> Self {
        Self {
            m0: state.masses(mesh),
            min_value: f64::INFINITY,
            mass_drift: 0.0,
        }
    }

    fn observe(&mut self, state: &State, mesh: &Mesh1D) {
        let (r, e) = state.min_values();
        self.min_value = self.min_value.min(r).min(e);
        let (m1, m2) = state.masses(mesh);
        for (m, m0) in [(m1, self.m0.0), (m2, self.m0.1)] {
            let drift = if m0 > 0.0 { (m - m0).abs() / m0 } else { m.abs() };
            self.mass_drift = self.mass_drift.max(drift);
        }
    }

    fn summary(&self, mesh: &Mesh1D, dx: f64, stats: &RunStats) -> RunSummary {
        RunSummary {
            dx,
            cells: mesh.len(),
            steps: stats.steps,
            min_value: self.min_value,
            mass_drift: self.mass_drift,
        }
    }
}

fn run_benchmark(config: &SimulationConfig, dx: f64) -> Result<(Trajectory, BenchmarkDescriptor, RunSummary)> {
    let sim = config.with_mesh(MeshSpec::dx(dx)).build()?;
    let mesh = sim.model.shared_mesh();
    let mut state = sim.initial.clone();
    let mut monitor = Monitor::new(&state, &mesh);
    let mut states = Vec::with_capacity(sim.grid.reports() + 1);
    let stats = integrate(&sim.model, &mut state, &sim.grid, &sim.method, |_, s, _| {
        monitor.observe(s, &mesh);
        states.push(s.clone());
        Ok(())
    })?;
    let descriptor = BenchmarkDescriptor {
        dx,
        cells: mesh.len(),
        t_final: sim.grid.t_final(),
        dt_report: sim.grid.dt(),
        reports: sim.grid.reports(),
        method: sim.method,
        steps: stats.steps,
    };
    let summary = monitor.summary(&mesh, dx, &stats);
    Ok((Trajectory { mesh, states }, descriptor, summary))
}

/// Error of one study grid against the benchmark,
///
/// ```text
/// e = ( Δt Σ_{k=1..M} Σ_i Δx_i (|ρ_ex - ρ|² + |η_ex - η|²) )^{1/2}
/// ```
fn study_error(config: &SimulationConfig, dx: f64, benchmark: &Trajectory) -> Result<(f64, RunSummary)> {
    let sim = config.with_mesh(MeshSpec::dx(dx)).build()?;
    let mesh = sim.model.shared_mesh();
    let map = sample_map(&benchmark.mesh, &mesh)?;
    let mut state = sim.initial.clone();
    let mut monitor = Monitor::new(&state, &mesh);
    let mut sum = 0.0;
    let widths = mesh.widths();
    let stats = integrate(&sim.model, &mut state, &sim.grid, &sim.method, |k, s, _| {
        monitor.observe(s, &mesh);
        if k == 0 {
            return Ok(());
        }
        let reference = nearest_snapshot(&benchmark.states, s.time)
            .ok_or_else(|| Error::InvalidParameter("benchmark trajectory is empty".into()))?;
        sum += widths
            .iter()
            .zip(&map)
            .zip(s.rho.iter().zip(&s.eta))
            .map(|((w, &j), (r, e))| w * ((reference.rho[j] - r).powi(2) + (reference.eta[j] - e).powi(2)))
            .sum::<f64>();
        Ok(())
    })?;
    Ok(((sim.grid.dt() * sum).sqrt(), monitor.summary(&mesh, dx, &stats)))
}

/// Runs the benchmark on `benchmark_dx` once and every study grid once,
/// all with the time settings of `config`, and measures each study grid
/// against the benchmark at the reporting times. Study runs are spread
/// over the current rayon pool.
pub fn convergence_study(config: &SimulationConfig, study_dx: &[f64], benchmark_dx: f64) -> Result<ErrorReport> {
    let ladder = ConvergenceConfig {
        study_dx: study_dx.to_vec(),
        benchmark_dx,
    };
    SimulationConfig {
        convergence: Some(ladder),
        ..config.clone()
    }
    .validate()?;
    let (trajectory, descriptor, bench_summary) = run_benchmark(config, benchmark_dx)?;
    let results: Vec<(f64, RunSummary)> = study_dx
        .par_iter()
        .map(|&dx| study_error(config, dx, &trajectory))
        .collect::<Result<_>>()?;
    let errors: Vec<f64> = results.iter().map(|r| r.0).collect();
    let mut runs: Vec<RunSummary> = results.into_iter().map(|r| r.1).collect();
    runs.push(bench_summary);
    Ok(ErrorReport {
        grid_sizes: study_dx.to_vec(),
        fitted_order: fit_order(study_dx, &errors),
        errors,
        benchmark: descriptor,
        runs,
    })
}

/// [`convergence_study`] on the grid ladder stored in the configuration.
pub fn convergence_study_from(config: &SimulationConfig) -> Result<ErrorReport> {
    let ladder = config
        .convergence
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("convergence: section missing".into()))?;
    convergence_study(config, &ladder.study_dx, ladder.benchmark_dx)
}

/// `Σ_i Δx_i ρ_i η_i`, zero exactly when the supports are disjoint at cell
/// resolution.
pub fn segregation_overlap(state: &State, mesh: &Mesh1D) -> f64 {
    overlap(state, mesh)
}

/// Maximal runs of cells with `u ≥ threshold`, as `[left edge, right edge]`.
pub fn support_intervals(u: &[f64], mesh: &Mesh1D, threshold: f64) -> Vec<[f64; 2]> {
    let edges = mesh.edges();
    let mut out = Vec::new();
    let mut start = None;
    for (i, &v) in u.iter().enumerate() {
        match (v >= threshold, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                out.push([edges[s], edges[i]]);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push([edges[s], edges[u.len()]]);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryReport {
    #[serde(skip)]
    pub state: Option<State>,
    /// `‖dρ/dt‖_∞ + ‖dη/dt‖_∞` at the final time.
    pub residual: f64,
    pub time: f64,
    pub stationary: bool,
    pub overlap: f64,
    /// `Σ Δx ρ²`, the scale the overlap is compared against.
    pub self_overlap: f64,
    pub support_rho: Vec<[f64; 2]>,
    pub support_eta: Vec<[f64; 2]>,
    /// `(t, residual)` at every reporting time.
    pub residual_history: Vec<(f64, f64)>,
    pub stats: RunStats,
}

impl StationaryReport {
    /// Overlap relative to `Σ Δx ρ²`.
    pub fn overlap_ratio(&self) -> f64 {
        self.overlap / self.self_overlap
    }
}

/// Newton tolerance of each backward Euler step during a march.
const MARCH_NEWTON_TOL: f64 = 1e-12;
const MARCH_NEWTON_ITER: usize = 30;
/// First step of a Newton march; it grows geometrically up to the cap.
const MARCH_DT_START: f64 = 1e-4;

/// Marches `state` by backward Euler steps solved with Newton's method
/// until the stationarity residual drops below `tol` or `t_max` is
/// reached. The step grows by half after easy solves and shrinks fourfold
/// after a failed one. `history` gets `(t, residual)` at times spaced by
/// at least `every` and by at least 5% of the current time.
fn newton_march(
    model: &Model,
    state: &mut State,
    tol: f64,
    t_max: f64,
    dt_max: f64,
    every: f64,
    history: &mut Vec<(f64, f64)>,
) -> Result<(f64, RunStats)> {
    let mesh = model.mesh();
    let mut stepper = NewtonStepper::new(model);
    let (r0, e0) = state.min_values();
    let mut stats = RunStats {
        min_value: r0.min(e0),
        smallest_dt: f64::INFINITY,
        ..RunStats::default()
    };
    let mut residual = model.stationarity_residual(state)?;
    history.push((state.time, residual));
    let mut next_record = state.time + every;
    let mut dt = MARCH_DT_START.min(dt_max);
    let mut backup = state.clone();
    while residual >= tol && state.time < t_max {
        let h = dt.min(t_max - state.time);
        backup.rho.copy_from_slice(&state.rho);
        backup.eta.copy_from_slice(&state.eta);
        backup.time = state.time;
        match stepper.step(model, state, h, MARCH_NEWTON_TOL, MARCH_NEWTON_ITER) {
            Ok(report) => {
                if t_max - state.time < 1e-9 * t_max {
                    state.time = t_max;
                }
                let (m1, m2) = backup.masses(mesh);
                stats.cfl_history.push(check_cfl(h, m1 + m2, mesh.xi(), mesh.h()));
                stats.steps += 1;
                stats.smallest_dt = stats.smallest_dt.min(h);
                stats.largest_dt = stats.largest_dt.max(h);
                stats.max_fp_iterations = stats.max_fp_iterations.max(report.iterations);
                stats.max_fp_residual = stats.max_fp_residual.max(report.update);
                let (r, e) = state.min_values();
                stats.min_value = stats.min_value.min(r).min(e);
                if report.iterations <= 6 {
                    dt = (dt * 1.5).min(dt_max);
                }
                residual = model.stationarity_residual(state)?;
                if state.time >= next_record || residual < tol || state.time >= t_max {
                    history.push((state.time, residual));
                    next_record = (state.time + every).max(1.05 * state.time);
                }
            }
            Err(Error::FixedPointDiverged(_) | Error::BlowUp { .. } | Error::SingularSystem { .. }) => {
                std::mem::swap(state, &mut backup);
                backup = state.clone();
                stats.rejected_steps += 1;
                dt *= 0.25;
                if dt < 1e-12 {
                    return Err(Error::BlowUp { time: state.time });
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok((residual, stats))
}

/// Drives `config` towards a stationary state until the residual drops
/// below `tol` or time `t_max` passes. The march is chosen by the `steady`
/// section and defaults to Newton continuation. Running out of time is
/// reported through `stationary = false`, not as an error.
pub fn run_to_stationary(config: &SimulationConfig, tol: f64, t_max: f64) -> Result<StationaryReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter(format!("stationarity tolerance must be > 0, got {tol}")));
    }
    if !(t_max >= 0.0) {
        return Err(Error::InvalidParameter(format!("t_max must be >= 0, got {t_max}")));
    }
    let (threshold, march) = config
        .steady
        .as_ref()
        .map_or((1e-6, March::default()), |s| (s.support_threshold, s.march));
    let sim = config.build()?;
    let mut state = sim.initial.clone();
    let mut history = Vec::new();
    let (last, stats) = match march {
        March::Newton { dt_max } => newton_march(
            &sim.model,
            &mut state,
            tol,
            t_max,
            dt_max,
            config.time.dt_report,
            &mut history,
        )?,
        March::Integrator => {
            let grid = TimeGrid::new(config.time.dt_report.min(t_max), t_max)?;
            let mut last = f64::INFINITY;
            let stats = integrate_until(&sim.model, &mut state, &grid, &sim.method, |_, s, _| {
                last = sim.model.stationarity_residual(s)?;
                history.push((s.time, last));
                log::debug!("t = {:.3}: residual {last:.3e}", s.time);
                Ok(if last < tol {
                    ControlFlow::Break(())
                } else {
                    ControlFlow::Continue(())
                })
            })?;
            (last, stats)
        }
    };
    let mesh = sim.model.mesh();
    Ok(StationaryReport {
        residual: last,
        time: state.time,
        stationary: last < tol,
        overlap: overlap(&state, mesh),
        self_overlap: mesh.widths().iter().zip(&state.rho).map(|(w, r)| w * r * r).sum(),
        support_rho: support_intervals(&state.rho, mesh, threshold),
        support_eta: support_intervals(&state.eta, mesh, threshold),
        residual_history: history,
        stats,
        state: Some(state),
    })
}

/// [`run_to_stationary`] with the tolerances stored in the configuration.
pub fn run_to_stationary_from(config: &SimulationConfig) -> Result<StationaryReport> {
    let steady = config
        .steady
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("steady: section missing".into()))?;
    run_to_stationary(config, steady.tol, steady.t_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(n: usize) -> Mesh1D {
        Mesh1D::uniform(0.0, 1.0, n).unwrap()
    }

    fn state(mesh: &Mesh1D, rho: Vec<f64>, eta: Vec<f64>, time: f64) -> State {
        State {
            time,
            ..State::new(mesh, rho, eta).unwrap()
        }
    }

    #[test]
    fn every_preset_validates() {
        for name in PRESETS {
            for full in [false, true] {
                let name = if full { format!("{name}_full") } else { name.to_string() };
                let c = preset(&name).unwrap();
                assert!(c.violations().is_empty(), "{name}: {:?}", c.violations());
            }
        }
        assert!(preset("nope").is_err());
    }

    #[test]
    fn newtonian_preset_parameters() {
        let c = preset("newtonian_attrep").unwrap();
        assert_eq!(c.domain, Domain { a: 0.0, b: 5.0 });
        assert_eq!(c.mesh.build(c.domain).unwrap().len(), 1280);
        assert_eq!(c.nu, 0.05);
        assert_eq!(c.kernels.w11, KernelSpec::Quadratic);
        assert_eq!(c.kernels.w12, KernelSpec::absolute(1));
        assert_eq!(c.kernels.w21, KernelSpec::absolute(-1));
    }

    #[test]
    fn restriction_onto_the_same_mesh_is_identity() {
        let mesh = Arc::new(uniform(8));
        let s = state(&mesh, (0..8).map(f64::from).collect(), (0..8).map(|i| f64::from(i * i)).collect(), 0.5);
        let fine = Trajectory {
            mesh: Arc::clone(&mesh),
            states: vec![s.clone()],
        };
        let out = restrict_benchmark(&fine, &mesh, &[0.5]).unwrap();
        assert_eq!(out[0], s);
    }

    #[test]
    fn restriction_picks_the_cell_containing_each_center() {
        let fine_mesh = Arc::new(uniform(16));
        let coarse = uniform(8);
        let rho: Vec<f64> = fine_mesh.centers().iter().map(|x| 3.0 * x - 1.0).collect();
        let fine = Trajectory {
            mesh: Arc::clone(&fine_mesh),
            states: vec![state(&fine_mesh, rho.clone(), rho.clone(), 0.0)],
        };
        let out = restrict_benchmark(&fine, &coarse, &[0.0]).unwrap();
        for (i, &x) in coarse.centers().iter().enumerate() {
            // Direct lookup: the fine cell with left edge ≤ x < right edge.
            let j = (x * 16.0).floor() as usize;
            assert_eq!(out[0].rho[i], rho[j]);
        }
    }

    #[test]
    fn restriction_uses_nearest_snapshot() {
        let mesh = Arc::new(uniform(4));
        let states: Vec<State> = [0.0, 1.0, 2.0]
            .iter()
            .map(|&t| state(&mesh, vec![t; 4], vec![0.0; 4], t))
            .collect();
        let fine = Trajectory { mesh: Arc::clone(&mesh), states };
        let out = restrict_benchmark(&fine, &uniform(2), &[0.4, 1.6]).unwrap();
        assert_eq!(out[0].rho, vec![0.0; 2]);
        assert_eq!(out[1].rho, vec![2.0; 2]);
    }

    #[test]
    fn restriction_rejects_other_domains() {
        let fine = Trajectory {
            mesh: Arc::new(uniform(4)),
            states: vec![],
        };
        let other = Mesh1D::uniform(0.0, 2.0, 2).unwrap();
        assert!(matches!(
            restrict_benchmark(&fine, &other, &[0.0]),
            Err(Error::DomainMismatch { .. })
        ));
    }

    #[test]
    fn overlap_examples() {
        let mesh = Mesh1D::uniform(0.0, 4.0, 4).unwrap();
        let disjoint = state(&mesh, vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 2.0, 2.0], 0.0);
        assert_eq!(segregation_overlap(&disjoint, &mesh), 0.0);
        let same = state(&mesh, vec![1.0, 2.0, 3.0, 0.0], vec![1.0, 2.0, 3.0, 0.0], 0.0);
        assert_eq!(segregation_overlap(&same, &mesh), 14.0);
        // Unit blocks on [0, 3) and [1, 4) share a width of 2.
        let shifted = state(&mesh, vec![1.0, 1.0, 1.0, 0.0], vec![0.0, 1.0, 1.0, 1.0], 0.0);
        assert_eq!(segregation_overlap(&shifted, &mesh), 2.0);
    }

    #[test]
    fn fitted_order_of_exact_power_law() {
        let x = [0.5, 0.25, 0.125];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(1.5)).collect();
        assert!((fit_order(&x, &y).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(fit_order(&x, &[1.0, 0.0, 1.0]), None);
        assert_eq!(fit_order(&x[..1], &y[..1]), None);
    }

    #[test]
    fn supports_are_maximal_runs() {
        let mesh = Mesh1D::uniform(0.0, 6.0, 6).unwrap();
        let u = [0.0, 1.0, 1.0, 0.0, 2.0, 2.0];
        assert_eq!(support_intervals(&u, &mesh, 0.5), vec![[1.0, 3.0], [4.0, 6.0]]);
    }

    fn small_diffusive() -> SimulationConfig {
        let mut c = preset("diffusive_symmetric").unwrap();
        c.domain = Domain { a: 0.0, b: 4.0 };
        c.initial = InitialData {
            rho: indicator(1.5, 2.5),
            eta: indicator(1.0, 2.0),
        };
        c.time = TimeConfig::new(0.1, 0.05);
        c
    }

    #[test]
    fn benchmark_against_itself_has_zero_error() {
        let c = small_diffusive();
        let report = convergence_study(&c, &[dyadic(4)], dyadic(4) * 0.999_999).err();
        assert!(report.is_some(), "dx must divide the domain");
        let (trajectory, _, _) = run_benchmark(&c, dyadic(4)).unwrap();
        let (e, _) = study_error(&c, dyadic(4), &trajectory).unwrap();
        assert_eq!(e, 0.0);
    }

    #[test]
    fn errors_shrink_under_refinement() {
        let c = small_diffusive();
        let report = convergence_study(&c, &[dyadic(3), dyadic(4)], dyadic(6)).unwrap();
        assert!(report.errors[1] < report.errors[0]);
        assert!(report.fitted_order.unwrap() > 0.5);
        assert_eq!(report.benchmark.cells, 256);
        assert!(report.runs.iter().all(|r| r.mass_drift < 1e-12 && r.min_value >= 0.0));
    }

    #[test]
    fn uniform_state_is_stationary_at_once() {
        let mut c = small_diffusive();
        c.initial = InitialData {
            rho: InitialProfile::Constant { value: 1.0 },
            eta: InitialProfile::Constant { value: 0.5 },
        };
        let r = run_to_stationary(&c, 1e-12, 1.0).unwrap();
        assert!(r.stationary);
        assert_eq!(r.time, 0.0);
        assert_eq!(r.stats.steps, 0);
    }

    #[test]
    fn nonstationary_run_is_flagged_not_failed() {
        let c = small_diffusive();
        let r = run_to_stationary(&c, 1e-12, 0.1).unwrap();
        assert!(!r.stationary);
        assert!((r.time - 0.1).abs() < 1e-12);
    }
}
