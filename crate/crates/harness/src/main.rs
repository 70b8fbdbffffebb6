use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use diamond_core::models::train_mlp_velocity;
use diamond_core::{MixtureSpec, ModelSpec};
use diamond_harness::config::read_json;
use diamond_harness::presets::{preset_config, scenario_specs};
use diamond_harness::{emit_plot_data, filter_seed_set, run_experiment, ExperimentConfig, HarnessError};
use log::{error, info};

/// Artifact-aware trajectory correction on toy generative benchmarks.
#[derive(Parser, Debug)]
#[command(name = "diamond", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Find seeds whose unguided output shows an artifact
    FilterSeeds(ConfigArgs),
    /// Run paired baseline and guided trajectories over a seed set
    Run(ConfigArgs),
    /// Turn a report into per-step series and endpoint CSVs
    EmitPlots {
        /// report.json written by `run`
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit an MLP velocity field to a mixture by flow matching
    TrainField {
        /// Mixture JSON (weights, means, stds)
        #[arg(long, conflicts_with = "preset")]
        model: Option<PathBuf>,
        /// Take the mixture of a named preset
        #[arg(long)]
        preset: Option<String>,
        #[arg(long, value_delimiter = ',', default_value = "32,32")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 3000)]
        steps: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Experiment JSON
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Start from a named preset (two-mode-2d, two-mode-2d-diff, grid-16)
    #[arg(long)]
    preset: Option<String>,
    /// Override a config field, e.g. --set guidance.lambda_start=0.5
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, HarnessError> {
        let cfg = match (&self.config, &self.preset) {
            (Some(path), _) => ExperimentConfig::from_file(path)?,
            (None, Some(name)) => {
                preset_config(name).ok_or_else(|| HarnessError::Config(format!("unknown preset `{name}`")))?
            }
            (None, None) => return Err(HarnessError::Config("pass --config FILE or --preset NAME".into())),
        };
        let mut cfg = cfg.with_overrides(&self.overrides)?;
        cfg.out = Some(self.out.clone());
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let json = serde_json::to_string_pretty(value).map_err(|e| HarnessError::Report(e.to_string()))?;
    fs::write(path, json).map_err(|e| HarnessError::io(path, e))
}

fn create_dir(dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

fn run(cli: Cli) -> Result<ExitCode, HarnessError> {
    match cli.command {
        Command::FilterSeeds(args) => {
            let cfg = args.load()?;
            let scenario = cfg.resolve()?;
            let records = filter_seed_set(&scenario, cfg.seeds.start(), cfg.seeds.len(), cfg.max_attempts)?;
            create_dir(&args.out)?;
            write_json(&args.out.join("seeds.json"), &records)?;
            info!("accepted {} seeds", records.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => {
            let cfg = args.load()?;
            let report = run_experiment(&cfg, &args.out)?;
            for v in &report.variants {
                if let Some(p) = v.pooled {
                    println!("{:<20} MAF {:7.3}  APR {:7.3}", v.name, p.maf, p.apr_mean);
                }
            }
            if report.all_completed() {
                Ok(ExitCode::SUCCESS)
            } else {
                error!("{} seed(s) did not complete", report.failed.len());
                Ok(ExitCode::from(1))
            }
        }
        Command::EmitPlots { report, out } => {
            for path in emit_plot_data(&report, &out)? {
                println!("{}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainField {
            model,
            preset,
            hidden,
            steps,
            lr,
            seed,
            out,
        } => {
            let spec: MixtureSpec = match (model, preset) {
                (Some(path), _) => read_json(&path)?,
                (None, Some(name)) => match scenario_specs(&name).map(|s| s.model) {
                    Some(ModelSpec::Mixture(m)) => m,
                    _ => return Err(HarnessError::Config(format!("preset `{name}` has no mixture"))),
                },
                (None, None) => return Err(HarnessError::Config("pass --model FILE or --preset NAME".into())),
            };
            let trained = train_mlp_velocity(&spec, &hidden, steps, lr, seed)?;
            create_dir(&out)?;
            write_json(&out.join("field.json"), &ModelSpec::Mlp(trained.field.clone()))?;
            let path = out.join("losses.csv");
            let mut w = csv::Writer::from_path(&path).map_err(|e| HarnessError::Report(e.to_string()))?;
            w.write_record(["step", "loss"]).map_err(|e| HarnessError::Report(e.to_string()))?;
            for (k, l) in trained.losses.iter().enumerate() {
                w.write_record([k.to_string(), l.to_string()]).map_err(|e| HarnessError::Report(e.to_string()))?;
            }
            w.flush().map_err(|e| HarnessError::io(&path, e))?;
            println!("final loss {:.6}", trained.final_loss());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::from(2)
        }
    }
}
