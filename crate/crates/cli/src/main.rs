use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ridgegrok::commands::{Plan, plan_bounds, plan_run, plan_sweep};
use ridgegrok::config::{ExperimentConfig, Overrides, Source};
use ridgegrok::error::CliError;
use ridgegrok::plot::{PlotStyle, plot};
use ridgegrok_core::ridge::Engine;

#[derive(Parser)]
#[command(
    name = "ridgegrok",
    version,
    about = "Grokking experiments for ridge regression and small ReLU networks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train `runs` seeded runs of one experiment.
    Run(ExperimentArgs),
    /// Train every cell of a parameter grid.
    Sweep(ExperimentArgs),
    /// Evaluate the theoretical time bounds for an experiment.
    Bounds(ExperimentArgs),
    /// Render trajectory or aggregate CSVs as SVG.
    Plot(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Naive,
    Spectral,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment document.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Name of a shipped preset, e.g. fig2-lambda.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, value_enum)]
    engine: Option<EngineArg>,
    /// Output directory; defaults to out/<name>.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    /// Trajectory CSVs (one per run) or aggregate CSVs.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
    /// Plot the y axis on a linear scale.
    #[arg(long)]
    linear_y: bool,
    #[arg(long)]
    title: Option<String>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig, CliError> {
        let overrides = Overrides {
            seed: self.seed,
            runs: self.runs,
            engine: self.engine.map(|e| match e {
                EngineArg::Naive => Engine::Naive,
                EngineArg::Spectral => Engine::Spectral,
            }),
            out: self.out.clone(),
        };
        let source = match (&self.config, &self.preset) {
            (Some(path), _) => Source::File(path),
            (None, Some(name)) => Source::Preset(name),
            (None, None) => return Err(CliError::Config("either --config or --preset is required".into())),
        };
        ExperimentConfig::load(source, &overrides)
    }
}

fn execute(
    cfg: &ExperimentConfig,
    plan: fn(&ExperimentConfig) -> Result<Plan, CliError>,
) -> Result<Plan, CliError> {
    let out = cfg.out_dir();
    log::info!("writing to {}", out.display());
    let plan = plan(cfg)?;
    plan.write(&out)?;
    match plan.divergence_error() {
        Some(e) => Err(e),
        None => Ok(plan),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run(args) => execute(&args.load()?, plan_run).map(drop),
        Command::Sweep(args) => execute(&args.load()?, plan_sweep).map(drop),
        Command::Bounds(args) => {
            let plan = execute(&args.load()?, plan_bounds)?;
            for a in &plan.artifacts {
                print!("{}", a.contents);
            }
            Ok(())
        }
        Command::Plot(args) => {
            let inputs: Vec<&std::path::Path> = args.inputs.iter().map(PathBuf::as_path).collect();
            let style = PlotStyle {
                log_y: !args.linear_y,
                title: args.title,
            };
            let svg = plot(&inputs, &style)?;
            if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
                std::fs::create_dir_all(parent)
                    .map_err(|e| CliError::Io(format!("cannot create {}: {e}", parent.display())))?;
            }
            std::fs::write(&args.out, svg)
                .map_err(|e| CliError::Io(format!("cannot write {}: {e}", args.out.display())))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
