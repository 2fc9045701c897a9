use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use psyphy_core::io::PlotOptions;
use psyphy_core::{Error, Result};

use crate::commands;
use crate::config::{ConfigLayer, RunConfig};

#[derive(Debug, Parser)]
#[command(
    name = "psyphy",
    version,
    about = "Herd identities and measure item-response curves of image matchers"
)]
pub struct Cli {
    /// TOML file with run settings; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (default: all cores). Outputs do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Pick the sheep threshold and write herd.json.
    Herd(RunFlags),
    /// Measure an item-response curve for a herd.
    Curve {
        #[arg(long, value_name = "HERD_JSON")]
        herd: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Repeat the curve under matcher or stimulus randomness.
    Ensemble {
        #[arg(long, value_name = "HERD_JSON")]
        herd: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Render curve or ensemble files (JSON or CSV) as SVG.
    Plot {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, short, default_value = "plot.svg")]
        output: PathBuf,
        /// Plot chance-normalized rates.
        #[arg(long)]
        normalized: bool,
        #[arg(long)]
        title: Option<String>,
    },
    /// Herd, curve, optional weight ensemble and plot in one go.
    Run(RunFlags),
    /// Answer the external shepherd protocol with a built-in matcher.
    ShepherdServe {
        /// Listen on this TCP address instead of stdin/stdout.
        #[arg(long, value_name = "ADDR")]
        listen: Option<String>,
        #[command(flatten)]
        flags: RunFlags,
    },
}

/// Command-line overrides of the run configuration.
#[derive(Debug, Clone, Default, Args)]
pub struct RunFlags {
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// pixels, lbp, random-projection or external.
    #[arg(long)]
    pub matcher: Option<String>,
    #[arg(long)]
    pub side: Option<usize>,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub projection_seed: Option<u64>,
    /// Command line that starts an external shepherd.
    #[arg(long, value_name = "COMMAND")]
    pub external: Option<String>,
    #[arg(long, value_name = "ADDR")]
    pub external_address: Option<String>,
    /// Seconds to wait on an external shepherd.
    #[arg(long)]
    pub timeout: Option<f64>,
    /// tpe or grid.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub perturbation: Option<String>,
    #[arg(long, allow_negative_numbers = true)]
    pub lower: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub upper: Option<f64>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub frames: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub weight_fraction: Option<f64>,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub rank_one: bool,
}

impl From<RunFlags> for ConfigLayer {
    fn from(f: RunFlags) -> Self {
        ConfigLayer {
            dataset: f.dataset,
            matcher: f.matcher,
            side: f.side,
            grid: f.grid,
            dim: f.dim,
            projection_seed: f.projection_seed,
            external: f.external,
            external_address: f.external_address,
            timeout: f.timeout,
            optimizer: f.optimizer,
            iterations: f.iterations,
            perturbation: f.perturbation,
            lower: f.lower,
            upper: f.upper,
            levels: f.levels,
            frames: f.frames,
            seed: f.seed,
            output: f.output,
            runs: f.runs,
            weight_fraction: f.weight_fraction,
            sample: f.sample,
            rank_one: f.rank_one.then_some(true),
        }
    }
}

impl Cli {
    /// Runs the command on a pool of `workers` threads. Returns the lines to
    /// print on success.
    pub fn execute(self) -> Result<Vec<String>> {
        let mut pool = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.workers {
            if n == 0 {
                return Err(Error::Config("workers must be at least 1".into()));
            }
            pool = pool.num_threads(n);
        }
        let pool = pool
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        let file = self.config;
        pool.install(move || dispatch(self.command, file))
    }
}

fn resolve(file: &Option<PathBuf>, flags: RunFlags) -> Result<RunConfig> {
    RunConfig::resolve(file.as_deref(), flags.into())
}

fn dispatch(command: Command, file: Option<PathBuf>) -> Result<Vec<String>> {
    match command {
        Command::Herd(flags) => {
            let config = resolve(&file, flags)?;
            let record = commands::herd_command(&config)?;
            Ok(vec![format!(
                "{} sheep at t_h = {} (loss {})",
                record.sheep.len(),
                record.threshold,
                record.loss
            )])
        }
        Command::Curve { herd, flags } => {
            let config = resolve(&file, flags)?;
            let curve = commands::curve_command(&config, &herd)?;
            Ok(vec![format!(
                "{} levels written to {}",
                curve.points.len(),
                config.output.join(commands::CURVE_CSV).display()
            )])
        }
        Command::Ensemble { herd, flags } => {
            let config = resolve(&file, flags)?;
            let e = commands::ensemble_command(&config, &herd)?;
            Ok(vec![format!(
                "{} runs, mean between-run variance {}",
                e.runs.len(),
                e.mean_variance()
            )])
        }
        Command::Plot {
            inputs,
            output,
            normalized,
            title,
        } => {
            let options = PlotOptions {
                normalized,
                title,
                ..PlotOptions::default()
            };
            commands::plot_command(&inputs, &output, &options)?;
            Ok(vec![format!("wrote {}", output.display())])
        }
        Command::Run(flags) => {
            let config = resolve(&file, flags)?;
            let out = commands::run_command(&config)?;
            let mut lines = vec![format!(
                "{} sheep at t_h = {}",
                out.herd.sheep.len(),
                out.herd.threshold
            )];
            if out.curve.is_some() {
                lines.push(format!("outputs in {}", config.output.display()));
            }
            Ok(lines)
        }
        Command::ShepherdServe { listen, flags } => {
            let config = resolve(&file, flags)?;
            commands::serve_command(&config, listen.as_deref())?;
            Ok(Vec::new())
        }
    }
}
