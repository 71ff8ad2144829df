//! The four subcommands. Each writes into its own output directory and
//! returns the in-memory result as well.

use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use crossdiff::experiments::{convergence_study_from, run_to_stationary_from, ErrorReport, StationaryReport};
use crossdiff::state::{compute_diagnostics, dissipation, energy_bound_constant, entropy_rate, DiagnosticsRecord};
use crossdiff::{integrate_until, Mesh1D, RunStats, SimulationConfig, State};
use serde::{Deserialize, Serialize};

use crate::config::config_hash;
use crate::error::{io, CliError, Result};
use crate::output::{
    create_dir, diagnostics_row, read_json, read_snapshot, real, snapshot_name, write_json, write_snapshot, CsvSink,
    DIAGNOSTIC_COLUMNS,
};
use crate::plot::{Plot, Series};

pub const METADATA: &str = "metadata.json";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshInfo {
    pub cells: usize,
    pub h: f64,
    pub xi: f64,
    pub uniform: bool,
}

impl MeshInfo {
    fn of(mesh: &Mesh1D) -> Self {
        Self {
            cells: mesh.len(),
            h: mesh.h(),
            xi: mesh.xi(),
            uniform: mesh.is_uniform(),
        }
    }
}

/// Contents of `metadata.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub version: String,
    pub command: String,
    pub config_hash: String,
    pub config: SimulationConfig,
    pub mesh: MeshInfo,
    /// Normalizing constants of parabola profiles, `[rho, eta]`.
    pub normalization: [Option<f64>; 2],
    /// `C_ε` at the initial masses; absent without self-diffusion.
    pub energy_bound: Option<f64>,
    pub snapshots: Vec<String>,
    /// Counters of the time integration, including the CFL ratio of every
    /// implicit step.
    pub stats: Option<RunStats>,
    /// `completed`, or the error that stopped the run.
    pub status: String,
}

fn metadata(command: &str, config: &SimulationConfig, sim: &crossdiff::Simulation) -> RunMetadata {
    let mesh = sim.model.mesh();
    let (m1, m2) = sim.initial.masses(mesh);
    let ctx = sim.model.diagnostics_context();
    RunMetadata {
        version: env!("CARGO_PKG_VERSION").to_string(),
        command: command.to_string(),
        config_hash: config_hash(config),
        config: config.clone(),
        mesh: MeshInfo::of(mesh),
        normalization: sim.normalization,
        energy_bound: energy_bound_constant(ctx.eps, m1, m2, ctx.kernel_norms, mesh.length()),
        snapshots: Vec::new(),
        stats: None,
        status: "completed".into(),
    }
}

fn profile_plot(state: &State, mesh: &Mesh1D, title: String, hash: &str) -> Plot {
    let series = |label: &str, u: &[f64]| Series {
        label: label.into(),
        points: mesh.centers().iter().copied().zip(u.iter().copied()).collect(),
        markers: false,
    };
    Plot {
        title,
        x_label: "x".into(),
        y_label: "density".into(),
        log_log: false,
        series: vec![series("rho", &state.rho), series("eta", &state.eta)],
        notes: Vec::new(),
        config_hash: hash.to_string(),
    }
}

fn write_plot(path: &Path, plot: &Plot) -> Result<()> {
    io(path, fs::write(path, plot.to_svg()))
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metadata: RunMetadata,
    pub diagnostics: Vec<DiagnosticsRecord>,
    pub final_state: State,
}

/// Integrates `config` over its horizon, writing snapshots, diagnostics,
/// metadata and a profile plot into `out`. On a solver failure the
/// diagnostics written so far stay on disk and the metadata records the
/// error.
pub fn run(config: &SimulationConfig, out: &Path) -> Result<RunOutcome> {
    let sim = config.build()?;
    let mesh = sim.model.mesh();
    let mut meta = metadata("run", config, &sim);
    let hash = meta.config_hash.clone();
    create_dir(out)?;
    let snap_dir = out.join(SNAPSHOT_DIR);
    if config.output.snapshots {
        create_dir(&snap_dir)?;
    }
    let hash_comment = [("config_hash", hash.clone())];
    let mut sink = CsvSink::create(&out.join("diagnostics.csv"), &hash_comment, &DIAGNOSTIC_COLUMNS)?;
    let ctx = sim.model.diagnostics_context();
    let mut records: Vec<DiagnosticsRecord> = Vec::new();
    let mut output_error: Option<CliError> = None;
    let mut state = sim.initial.clone();
    let mut report = |k: usize, s: &State| -> Result<()> {
        if config.output.snapshots {
            let name = snapshot_name(k);
            write_snapshot(&snap_dir.join(&name), s, mesh, &hash)?;
            meta.snapshots.push(format!("{SNAPSHOT_DIR}/{name}"));
        }
        let d = compute_diagnostics(s, mesh, &ctx, records.last());
        sink.row(diagnostics_row(&d))?;
        log::info!("t = {:.4}: masses {:.6e} {:.6e}, min {:.3e}", d.time, d.mass_rho, d.mass_eta, d.min_rho.min(d.min_eta));
        records.push(d);
        Ok(())
    };
    let result = integrate_until(&sim.model, &mut state, &sim.grid, &sim.method, |k, s, _| {
        Ok(match report(k, s) {
            Ok(()) => ControlFlow::Continue(()),
            Err(e) => {
                output_error = Some(e);
                ControlFlow::Break(())
            }
        })
    });
    if let Some(e) = output_error {
        return Err(e);
    }
    match result {
        Ok(stats) => meta.stats = Some(stats),
        Err(e) => {
            meta.status = format!("failed: {e}");
            write_json(&out.join(METADATA), &meta)?;
            return Err(e.into());
        }
    }
    write_json(&out.join(METADATA), &meta)?;
    if config.output.plots {
        let title = format!("profiles at t = {:.4}", state.time);
        write_plot(&out.join("profiles.svg"), &profile_plot(&state, mesh, title, &hash))?;
    }
    Ok(RunOutcome {
        metadata: meta,
        diagnostics: records,
        final_state: state,
    })
}

#[derive(Debug, Clone, Serialize)]
struct Tagged<'a, T> {
    config_hash: &'a str,
    #[serde(flatten)]
    report: &'a T,
}

/// Convergence study of `config` against its benchmark grid, writing
/// `errors.csv`, `convergence.json` and a log-log plot with the fitted
/// slope.
pub fn converge(config: &SimulationConfig, out: &Path) -> Result<ErrorReport> {
    let sim = config.build()?;
    let meta = metadata("converge", config, &sim);
    let hash = meta.config_hash.clone();
    create_dir(out)?;
    let report = convergence_study_from(config)?;
    let order = report.fitted_order.map_or_else(|| "none".to_string(), |p| format!("{p:.6}"));
    let comments = [("config_hash", hash.clone()), ("fitted_order", order)];
    let mut sink = CsvSink::create(&out.join("errors.csv"), &comments, &["dx", "cells", "error"])?;
    for (run, e) in report.runs.iter().zip(&report.errors) {
        sink.row([real(run.dx), run.cells.to_string(), real(*e)])?;
    }
    write_json(&out.join("convergence.json"), &Tagged { config_hash: &hash, report: &report })?;
    write_json(&out.join(METADATA), &meta)?;
    if config.output.plots {
        let points: Vec<(f64, f64)> = report.grid_sizes.iter().copied().zip(report.errors.iter().copied()).collect();
        let mut series = vec![Series {
            label: "error".into(),
            points: points.clone(),
            markers: true,
        }];
        let mut notes = Vec::new();
        if let (Some(p), Some(&(dx0, e0))) = (report.fitted_order, points.first()) {
            notes.push(format!("fitted slope {p:.3}"));
            series.push(Series {
                label: "slope 1 reference".into(),
                points: points.iter().map(|&(dx, _)| (dx, e0 * dx / dx0)).collect(),
                markers: false,
            });
        }
        let plot = Plot {
            title: format!("error against benchmark dx = {:.3e}", report.benchmark.dx),
            x_label: "dx".into(),
            y_label: "e".into(),
            log_log: true,
            series,
            notes,
            config_hash: hash,
        };
        write_plot(&out.join("errors.svg"), &plot)?;
    }
    Ok(report)
}

/// Drives `config` to a stationary state per its `steady` section, writing
/// `stationary.json`, the final state, the residual history and a plot.
pub fn steady(config: &SimulationConfig, out: &Path) -> Result<StationaryReport> {
    let sim = config.build()?;
    let mesh = sim.model.mesh();
    let mut meta = metadata("steady", config, &sim);
    let hash = meta.config_hash.clone();
    create_dir(out)?;
    let report = run_to_stationary_from(config)?;
    let state = report.state.as_ref().expect("the report carries its final state");
    write_snapshot(&out.join("final_state.csv"), state, mesh, &hash)?;
    meta.snapshots.push("final_state.csv".into());
    meta.stats = Some(report.stats.clone());
    if !report.stationary {
        meta.status = format!("not stationary by t = {}", report.time);
    }
    let mut sink = CsvSink::create(&out.join("residuals.csv"), &[("config_hash", hash.clone())], &["time", "residual"])?;
    for &(t, r) in &report.residual_history {
        sink.row([real(t), real(r)])?;
    }
    write_json(&out.join("stationary.json"), &Tagged { config_hash: &hash, report: &report })?;
    write_json(&out.join(METADATA), &meta)?;
    if config.output.plots {
        let title = format!(
            "t = {:.1}, residual {:.2e}, overlap ratio {:.2e}",
            report.time,
            report.residual,
            report.overlap_ratio()
        );
        write_plot(&out.join("profiles.svg"), &profile_plot(state, mesh, title, &hash))?;
    }
    Ok(report)
}

/// One audited snapshot.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditRow {
    pub snapshot: String,
    pub time: f64,
    /// `Σ Δx [(1 + log ρ) dρ/dt + (1 + log η) dη/dt]` with the exact rhs;
    /// absent unless every cell is positive.
    pub entropy_rate: Option<f64>,
    pub dissipation: f64,
    pub bound: Option<f64>,
    /// `entropy_rate + dissipation ≤ (1 + rel_tol) bound`; absent when
    /// either side is undefined.
    pub holds: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub config_hash: String,
    pub rel_tol: f64,
    pub rows: Vec<AuditRow>,
    pub checked: usize,
    /// Snapshots where the inequality could not be evaluated.
    pub skipped: usize,
    pub violations: usize,
    /// Largest `(entropy_rate + dissipation) / bound` over checked rows.
    pub worst_ratio: Option<f64>,
}

impl AuditReport {
    /// Every snapshot was checked and none violates the inequality.
    pub fn passed(&self) -> bool {
        self.checked > 0 && self.skipped == 0 && self.violations == 0
    }
}

fn malformed(path: &Path, message: String) -> CliError {
    CliError::Malformed {
        path: path.to_path_buf(),
        message,
    }
}

/// Replays the snapshots of a `run` directory through the exact right-hand
/// side and checks the discrete entropy inequality at each of them. Writes
/// `audit.csv` and `audit.json` into the directory.
pub fn audit(dir: &Path, rel_tol: f64) -> Result<AuditReport> {
    let meta_path = dir.join(METADATA);
    let meta: RunMetadata = read_json(&meta_path)?;
    let hash = config_hash(&meta.config);
    if hash != meta.config_hash {
        return Err(malformed(&meta_path, "config_hash does not match the stored configuration".into()));
    }
    if meta.snapshots.is_empty() {
        return Err(malformed(&meta_path, "no snapshots to audit".into()));
    }
    let sim = meta.config.build()?;
    let model = &sim.model;
    let mesh = model.mesh();
    let ctx = model.diagnostics_context();
    let mut rows = Vec::new();
    for name in &meta.snapshots {
        let path: PathBuf = dir.join(name);
        let snap = read_snapshot(&path)?;
        if snap.config_hash.as_deref() != Some(hash.as_str()) {
            return Err(malformed(&path, "snapshot belongs to a different configuration".into()));
        }
        let aligned = snap.x.len() == mesh.len()
            && snap.x.iter().zip(mesh.centers()).all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        if !aligned {
            return Err(malformed(&path, "cell centers do not match the configured mesh".into()));
        }
        let mut state = State::new(mesh, snap.rho, snap.eta)?;
        state.time = snap.time.ok_or_else(|| malformed(&path, "missing time header".into()))?;
        let (drho, deta) = model.rhs(&state)?;
        let rate = entropy_rate(&state, mesh, &drho, &deta);
        let diss = dissipation(&state, mesh, ctx.eps, ctx.nu);
        let (m1, m2) = state.masses(mesh);
        let bound = energy_bound_constant(ctx.eps, m1, m2, ctx.kernel_norms, mesh.length());
        let holds = match (rate, bound) {
            (Some(r), Some(c)) => Some(r + diss <= c + rel_tol * c.abs()),
            _ => None,
        };
        rows.push(AuditRow {
            snapshot: name.clone(),
            time: state.time,
            entropy_rate: rate,
            dissipation: diss,
            bound,
            holds,
        });
    }
    let checked = rows.iter().filter(|r| r.holds.is_some()).count();
    let worst_ratio = rows
        .iter()
        .filter_map(|r| Some((r.entropy_rate? + r.dissipation) / r.bound?))
        .reduce(f64::max);
    let report = AuditReport {
        config_hash: hash.clone(),
        rel_tol,
        checked,
        skipped: rows.len() - checked,
        violations: rows.iter().filter(|r| r.holds == Some(false)).count(),
        worst_ratio,
        rows,
    };
    let opt = |v: Option<f64>| v.map(real).unwrap_or_default();
    let mut sink = CsvSink::create(
        &dir.join("audit.csv"),
        &[("config_hash", hash)],
        &["time", "entropy_rate", "dissipation", "bound", "holds"],
    )?;
    for r in &report.rows {
        let holds = r.holds.map(|h| h.to_string()).unwrap_or_default();
        sink.row([real(r.time), opt(r.entropy_rate), real(r.dissipation), opt(r.bound), holds])?;
    }
    write_json(&dir.join("audit.json"), &report)?;
    Ok(report)
}
