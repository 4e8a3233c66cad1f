use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mesde::io::commands::{cli_fit, cli_mc, cli_simulate};
use mesde::io::config::{load_config, FitConfig, McConfig, McScale, RunConfig, SimulateConfig};
use mesde::io::report::{render_fit, report};
use mesde::mc::Cell;
use mesde::{Error, Preset, Result, Stage2Method};

#[derive(Parser)]
#[command(name = "mesde", version, about = "Simulate and fit mixed-effects SDE panels")]
struct Cli {
    /// TOML run configuration (or a metadata.json from an earlier run).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, env = "MESDE_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true, env = "MESDE_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a panel from a preset model.
    Simulate(SimulateArgs),
    /// Fit both estimation stages to a panel file.
    Fit(FitArgs),
    /// Run a Monte Carlo study.
    Mc(McArgs),
    /// Print a fit report or Monte Carlo summary.
    Report { path: PathBuf },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long = "individuals", short = 'N')]
    n_individuals: Option<usize>,
    #[arg(long, short = 'T')]
    horizon: Option<f64>,
    #[arg(long = "steps", short = 'n')]
    n_obs: Option<usize>,
    #[arg(long)]
    fine_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    initial_state: Option<f64>,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Observation step of a wide panel.
    #[arg(long)]
    step: Option<f64>,
    /// Multiply every observation by this factor before fitting.
    #[arg(long)]
    scale: Option<f64>,
    /// full or one_step.
    #[arg(long)]
    method: Option<String>,
    /// Number of trajectories to simulate from the fitted model.
    #[arg(long)]
    predictive: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct McArgs {
    #[arg(long)]
    model: Option<String>,
    /// desk (h = 0.005, R = 100) or full (h ∈ {0.005, 0.001}, R = 500; hours).
    #[arg(long)]
    scale: Option<String>,
    /// Cells as NxTxn, comma separated, e.g. 200x5x1000,500x5x1000.
    #[arg(long)]
    cells: Option<String>,
    #[arg(long, short = 'R')]
    replications: Option<usize>,
    #[arg(long)]
    fine_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    method: Option<String>,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

fn parse_cells(text: &str) -> Result<Vec<Cell>> {
    text.split(',')
        .map(|c| {
            let parts: Vec<&str> = c.trim().split('x').collect();
            let bad = || Error::Config(format!("cell '{c}' is not of the form NxTxn"));
            if parts.len() != 3 {
                return Err(bad());
            }
            Ok(Cell::new(
                parts[0].parse().map_err(|_| bad())?,
                parts[1].parse().map_err(|_| bad())?,
                parts[2].parse().map_err(|_| bad())?,
            ))
        })
        .collect()
}

fn missing(what: &str) -> Error {
    Error::Config(format!("missing {what} (flag or config file)"))
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    let out_dir = cli.output_dir.or(file.output_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let workers = cli.workers.or(file.workers).unwrap_or(1).max(1);
    // a second initialization (e.g. in tests) is harmless
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();
    match cli.command {
        Command::Simulate(a) => {
            let mut cfg = file.simulate.unwrap_or_default();
            if let Some(m) = a.model {
                cfg.model = Preset::from_name(&m)?;
            }
            cfg.n_individuals = a.n_individuals.unwrap_or(cfg.n_individuals);
            cfg.horizon = a.horizon.unwrap_or(cfg.horizon);
            cfg.n_obs = a.n_obs.unwrap_or(cfg.n_obs);
            cfg.fine_step = a.fine_step.unwrap_or(cfg.fine_step);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            cfg.initial_state = a.initial_state.or(cfg.initial_state);
            let cfg: SimulateConfig = cfg;
            for p in cli_simulate(&cfg, &out_dir)? {
                println!("{}", p.display());
            }
        }
        Command::Fit(a) => {
            let base = file.fit;
            let model = match (a.model, &base) {
                (Some(m), _) => Preset::from_name(&m)?,
                (None, Some(b)) => b.model,
                (None, None) => return Err(missing("--model")),
            };
            let panel = a.panel.or(base.as_ref().map(|b| b.panel.clone())).ok_or_else(|| missing("--panel"))?;
            let mut cfg = base.unwrap_or_else(|| FitConfig::new(model, panel.clone()));
            cfg.model = model;
            cfg.panel = panel;
            cfg.step = a.step.or(cfg.step);
            cfg.scale = a.scale.unwrap_or(cfg.scale);
            if let Some(m) = a.method {
                cfg.method = Stage2Method::from_name(&m)?;
            }
            cfg.predictive = a.predictive.unwrap_or(cfg.predictive);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            let (report, paths) = cli_fit(&cfg, &out_dir)?;
            print!("{}", render_fit(&report));
            for p in paths {
                println!("wrote {}", p.display());
            }
        }
        Command::Mc(a) => {
            let base = file.mc;
            let model = match (a.model, &base) {
                (Some(m), _) => Preset::from_name(&m)?,
                (None, Some(b)) => b.model,
                (None, None) => return Err(missing("--model")),
            };
            let mut cfg = base.unwrap_or_else(|| McConfig::new(model));
            cfg.model = model;
            if let Some(s) = a.scale {
                cfg.scale = match s.as_str() {
                    "desk" => McScale::Desk,
                    "full" => McScale::Full,
                    other => return Err(Error::Config(format!("unknown scale '{other}' (desk or full)"))),
                };
            }
            if let Some(c) = a.cells {
                cfg.cells = Some(parse_cells(&c)?);
            }
            cfg.replications = a.replications.or(cfg.replications);
            cfg.fine_step = a.fine_step.or(cfg.fine_step);
            cfg.seed = a.seed.unwrap_or(cfg.seed);
            if let Some(m) = a.method {
                cfg.method = Stage2Method::from_name(&m)?;
            }
            for p in cli_mc(&cfg, &out_dir, workers, a.force)? {
                println!("{}", p.display());
            }
        }
        Command::Report { path } => print!("{}", report(&path)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
