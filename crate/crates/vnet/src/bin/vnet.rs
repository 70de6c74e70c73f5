use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;
use serde_json::{json, Value};
use vnet::config::{parse_override, PipelineConfig};
use vnet::pipeline;
use vnet_core::Level;

/// Mobile phone flow networks as poverty proxies.
#[derive(Parser)]
#[command(name = "vnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct Common {
    /// JSON config file; relative paths in it resolve against its directory.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Gravity normalization exponent.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    damping: Option<f64>,
    /// Seed of the synthetic world.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Stored model file to predict with instead of fitting.
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Rescale finer-level scores by N_fine / N_fit before predicting.
    #[arg(long, global = true)]
    rescale: bool,
    /// Leave predictions outside [0, 100] unclamped.
    #[arg(long, global = true)]
    no_clamp: bool,
    /// Override any config field by dotted name, e.g. `pagerank.tol=1e-12`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world with planted ground truth.
    Synth,
    /// Aggregate flow records into raw matrices at every level.
    BuildMatrices,
    /// Gravity-normalize the raw matrices.
    Normalize {
        #[arg(long, value_parser = parse_level)]
        level: Option<Level>,
    },
    /// Network measures per unit.
    Metrics {
        #[arg(long, value_parser = parse_level)]
        level: Option<Level>,
        #[arg(long)]
        measure: Option<String>,
    },
    /// Correlate region scores with poverty, with leave-one-out influence.
    Correlate {
        /// Score label used for the influence report.
        #[arg(long)]
        measure: Option<String>,
    },
    /// Fit the H and A models on one score.
    Fit {
        #[arg(long)]
        measure: Option<String>,
    },
    /// Apply the fitted or stored model.
    Predict {
        #[arg(long, value_parser = parse_level)]
        level: Option<Level>,
    },
    /// Localize users and rank behavioral indicators.
    Behavior,
    /// GeoJSON and SVG maps of the predictions.
    Map {
        #[arg(long, value_parser = parse_level)]
        level: Option<Level>,
    },
    /// Every stage from flow records to maps.
    Pipeline,
}

fn parse_level(s: &str) -> Result<Level, String> {
    Level::parse(s).ok_or_else(|| format!("unknown level `{s}`"))
}

fn load_config(c: &Common) -> vnet::Result<PipelineConfig> {
    let mut overrides: Vec<(String, Value)> = Vec::new();
    let mut flag = |k: &str, v: Value| overrides.push((k.to_string(), v));
    if let Some(p) = &c.out {
        flag("output", json!(p));
    }
    if let Some(a) = c.alpha {
        flag("alpha", json!(a));
    }
    if let Some(d) = c.damping {
        flag("pagerank.damping", json!(d));
    }
    if let Some(s) = c.seed {
        flag("synth.seed", json!(s));
    }
    if let Some(m) = &c.model {
        flag("model", json!(m));
    }
    if c.rescale {
        flag("rescale", json!(true));
    }
    if c.no_clamp {
        flag("clamp", json!("none"));
    }
    for s in &c.set {
        overrides.push(parse_override(s)?);
    }
    PipelineConfig::load(c.config.as_deref(), &overrides)
}

fn run(cli: Cli) -> vnet::Result<()> {
    let config = load_config(&cli.common)?;
    match cli.command {
        Command::Synth => {
            let s = pipeline::cmd_synth(&config)?;
            println!(
                "{} regions, {} arrondissements, {} sites, {} flow records ({} calls), {} users",
                s.regions, s.arrondissements, s.sites, s.flows.records, s.flows.volume, s.users
            );
        }
        Command::BuildMatrices => report(pipeline::cmd_build_matrices(&config)?),
        Command::Normalize { level } => report(pipeline::cmd_normalize(&config, level)?),
        Command::Metrics { level, measure } => report(pipeline::cmd_metrics(&config, level, measure.as_deref())?),
        Command::Correlate { measure } => report(pipeline::cmd_correlate(&config, measure.as_deref())?),
        Command::Fit { measure } => {
            let m = pipeline::cmd_fit(&config, measure.as_deref())?;
            println!("H = {} * {} + {}", m.h.slope, m.feature, m.h.intercept);
            println!("A = {} * {} + {}", m.a.slope, m.feature, m.a.intercept);
        }
        Command::Predict { level } => report(pipeline::cmd_predict(&config, level)?),
        Command::Behavior => {
            let b = pipeline::cmd_behavior(&config)?;
            println!("{} of {} users retained", b.retained, b.users);
            if let Some(top) = b.ranking.first() {
                println!("strongest indicator: {}", top.indicator);
            }
        }
        Command::Map { level } => report(pipeline::cmd_map(&config, level)?),
        Command::Pipeline => {
            let r = pipeline::cmd_pipeline(&config)?;
            if let Some(rho) = r.correlation(&config.feature, "MPI") {
                println!("r({}, MPI) = {rho:.4}", config.feature);
            }
            report(r.written);
        }
    }
    Ok(())
}

fn report(paths: Vec<PathBuf>) {
    for p in paths {
        println!("{}", p.display());
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
