use clap::{Parser, Subcommand};
use mflab_cli::config::Config;
use mflab_cli::report::{write_outputs, ManifestInfo, Report};
use mflab_cli::{experiments, CliError};
use std::path::PathBuf;
use std::process::ExitCode;

/// Numerical laboratory for coupled transport / label-switching population
/// dynamics: particle runs, macroscopic density runs, and the experiment
/// harness (convergence, stability, consistency, assumption validation).
#[derive(Parser)]
#[command(name = "mflab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Experiment configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory (default: `experiment.out` from the config, or `out`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the base seed (`sim.seed` in the config).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the data-parallel loops (default: all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the N-agent system and export snapshots and monitors.
    Simulate,
    /// Solve the macroscopic density system and export snapshots.
    Pde,
    /// Empirical mean-field convergence over a list of agent counts.
    Converge,
    /// Perturbation growth against the theoretical envelope.
    Stability,
    /// Particle marginals against the macroscopic solution under refinement.
    Consistency,
    /// Monte-Carlo check of the structural assumptions (report-only).
    Validate,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> mflab_cli::Result<bool> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let cfg = Config::load(&config_path)?;
    let seed = match cli.seed {
        Some(s) => s,
        None => cfg.u64_or("sim.seed", 0)?,
    };

    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("--jobs: {e}")))?;
    }

    let (name, report): (&str, Report) = match cli.command {
        Command::Simulate => ("simulate", experiments::run_simulate(&cfg, seed)?.report),
        Command::Pde => ("pde", experiments::run_pde(&cfg)?.report),
        Command::Converge => ("converge", experiments::run_converge(&cfg, seed)?.report),
        Command::Stability => ("stability", experiments::run_stability(&cfg, seed)?.report),
        Command::Consistency => (
            "consistency",
            experiments::run_consistency(&cfg, seed)?.report,
        ),
        Command::Validate => ("validate", experiments::run_validate(&cfg, seed)?.report),
    };

    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(cfg.str_or("experiment.out", "out")));

    let constants = analytic_constants(&cfg);
    write_outputs(
        &out_dir,
        &report,
        &ManifestInfo {
            command: name,
            config_path: &config_path.display().to_string(),
            config_raw: cfg.raw(),
            seed,
            jobs: cli.jobs,
            constants,
            notes: model_notes(&cfg),
        },
    )?;

    for line in &report.summary {
        println!("{line}");
    }
    println!(
        "{}: {} (outputs in {})",
        name,
        if report.ok { "ok" } else { "FAILED" },
        out_dir.display()
    );
    Ok(report.ok)
}

/// The analytic constants a finite-label model exposes; empty for game
/// models (their constants are not in closed form).
fn analytic_constants(cfg: &Config) -> Vec<(String, f64)> {
    use mflab_cli::config::{build_model, model_kind, ModelKind};
    match model_kind(cfg) {
        Ok(ModelKind::Finite) => match build_model(cfg) {
            Ok(spec) => {
                let m = spec.sublinearity_constant();
                let t = cfg.f64_or("sim.t_final", 1.0).unwrap_or(1.0);
                let radius = mflab::engine::support_bound(2.0, m, t);
                vec![
                    ("sublinearity_M".to_string(), m),
                    ("uniformization_delta".to_string(), spec.uniformization_bound()),
                    (format!("lipschitz_L_at_R={radius:.3}"), spec.lipschitz_constant(radius)),
                ]
            }
            Err(_) => Vec::new(),
        },
        _ => Vec::new(),
    }
}

fn model_notes(cfg: &Config) -> Vec<String> {
    use mflab_cli::config::{build_model, model_kind, render_model, ModelKind};
    match model_kind(cfg) {
        Ok(ModelKind::Finite) => match build_model(cfg) {
            Ok(spec) => {
                let mut notes = vec!["canonical model section:".to_string()];
                notes.extend(render_model(&spec).into_iter().map(|l| format!("  {l}")));
                notes
            }
            Err(_) => Vec::new(),
        },
        _ => Vec::new(),
    }
}
