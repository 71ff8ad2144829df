use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use crossdiff_cli::{
    audit, converge, init_threads, parse_config_with, preset_config, run, steady, CliError, Overrides, Result,
};

/// Finite volume solver for two species with cross-diffusion and nonlocal
/// interactions.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    /// Worker threads for convergence sweeps.
    #[arg(long, global = true, env = "CROSSDIFF_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate over the time horizon, writing snapshots and diagnostics.
    Run(Setup),
    /// Measure the spatial convergence order against a fine benchmark.
    Converge(Setup),
    /// March to a stationary state and report segregation.
    Steady(Setup),
    /// Re-check the discrete energy inequality on the snapshots of a run.
    Audit {
        /// Directory written by `run`.
        dir: PathBuf,
        /// Relative slack on the energy bound.
        #[arg(long, default_value_t = 1e-6)]
        rel_tol: f64,
    },
}

#[derive(Args)]
struct Setup {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset; file keys and flags override it.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "crossdiff-out")]
    out: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    eps: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    nu: Option<f64>,
    /// Uniform cell count, replacing the mesh section.
    #[arg(long)]
    cells: Option<usize>,
    #[arg(long)]
    t_final: Option<f64>,
    #[arg(long)]
    dt_report: Option<f64>,
    /// `rk4` or `implicit_euler`.
    #[arg(long)]
    integrator: Option<String>,
}

impl Setup {
    fn resolve(&self) -> Result<crossdiff::SimulationConfig> {
        let overrides = Overrides {
            preset: self.preset.clone(),
            eps: self.eps,
            nu: self.nu,
            cells: self.cells,
            t_final: self.t_final,
            dt_report: self.dt_report,
            integrator: self.integrator.clone(),
        };
        match (&self.config, &self.preset) {
            (Some(path), _) => {
                let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
                    path: path.clone(),
                    source,
                })?;
                parse_config_with(&text, &overrides)
            }
            (None, Some(name)) => preset_config(name, &overrides),
            (None, None) => Err(CliError::Config(vec!["one of --config or --preset is required".into()])),
        }
    }
}

fn execute(cli: Cli) -> Result<bool> {
    init_threads(cli.threads);
    match cli.command {
        Command::Run(setup) => {
            let outcome = run(&setup.resolve()?, &setup.out)?;
            let last = outcome.diagnostics.last().expect("a run reports its initial state");
            println!(
                "t = {}: masses {:.12e} {:.12e}, min {:.3e}; wrote {}",
                last.time,
                last.mass_rho,
                last.mass_eta,
                last.min_rho.min(last.min_eta),
                setup.out.display()
            );
        }
        Command::Converge(setup) => {
            let report = converge(&setup.resolve()?, &setup.out)?;
            for (dx, e) in report.grid_sizes.iter().zip(&report.errors) {
                println!("dx = {dx:.6e}  e = {e:.6e}");
            }
            match report.fitted_order {
                Some(p) => println!("fitted order {p:.4}"),
                None => println!("fitted order undefined"),
            }
        }
        Command::Steady(setup) => {
            let r = steady(&setup.resolve()?, &setup.out)?;
            println!(
                "{} at t = {:.4}: residual {:.3e}, overlap {:.4e} ({:.3e} of the rho self-overlap)",
                if r.stationary { "stationary" } else { "not stationary" },
                r.time,
                r.residual,
                r.overlap,
                r.overlap_ratio()
            );
            return Ok(r.stationary);
        }
        Command::Audit { dir, rel_tol } => {
            let r = audit(&dir, rel_tol)?;
            println!(
                "{}: {} checked, {} skipped, {} violations, worst ratio {}",
                if r.passed() { "PASS" } else { "FAIL" },
                r.checked,
                r.skipped,
                r.violations,
                r.worst_ratio.map_or("n/a".into(), |w| format!("{w:.6e}"))
            );
            return Ok(r.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
