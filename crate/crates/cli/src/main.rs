use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ccrl::agents::SchemeKind;
use ccrl::harness::{self, check, ExperimentConfig, PipelineMode};
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "ccrl", version, about = "Causal coordinated concurrent reinforcement learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract mechanism parameters and the similarity allocation, no training.
    Extract(RunArgs),
    /// Full pipeline: extraction (when needed) and concurrent training.
    Train(RunArgs),
    /// Run a built-in figure preset.
    Reproduce {
        #[arg(value_parser = ["fig2", "fig3", "fig4", "fig5", "fig6"])]
        figure: String,
        /// Use the 2x2-agent, 30-epoch variant (fig5 and fig6 only).
        #[arg(long)]
        smoke: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the invariant suite.
    Check,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct Overrides {
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Train only this scheme: similarity, global, none or seed_sampling.
    #[arg(long)]
    scheme: Option<String>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig) -> ccrl::Result<()> {
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(s) = &self.scheme {
            cfg.schemes = vec![SchemeKind::parse(s)?];
        }
        cfg.validate()
    }
}

fn run_config(path: &Path, overrides: &Overrides, mode: PipelineMode) -> ccrl::Result<()> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| e.at_stage("config"))?;
    overrides.apply(&mut cfg).map_err(|e| e.at_stage("config"))?;
    report(harness::run_pipeline(&cfg, mode)?);
    Ok(())
}

fn report(artifacts: harness::RunArtifacts) {
    for run in &artifacts.seeds {
        if let Some(ex) = &run.extraction {
            println!(
                "seed {}: ARI {:.3}, silhouette {:.3}",
                run.seed, ex.quality.ari, ex.quality.silhouette
            );
        }
        for r in &run.runs {
            println!("seed {}: {} final mean return {:.4}", run.seed, r.label, r.log.final_mean(0.1));
        }
    }
    println!("wrote {} files to {}", artifacts.files.len(), artifacts.out_dir.display());
}

fn run(cli: Cli) -> ccrl::Result<bool> {
    match cli.command {
        Command::Extract(args) => run_config(&args.config, &args.overrides, PipelineMode::Extract)?,
        Command::Train(args) => run_config(&args.config, &args.overrides, PipelineMode::Train)?,
        Command::Reproduce {
            figure,
            smoke,
            overrides,
        } => {
            let name = match (figure.as_str(), smoke) {
                ("fig5" | "fig6", true) => format!("{figure}_smoke"),
                (_, true) => {
                    return Err(ccrl::Error::Config("--smoke applies to fig5 and fig6 only".into()).at_stage("config"))
                }
                _ => figure.clone(),
            };
            let mut cfg = harness::preset(&name).map_err(|e| e.at_stage("config"))?;
            overrides.apply(&mut cfg).map_err(|e| e.at_stage("config"))?;
            report(harness::run_pipeline(&cfg, harness::preset_mode(&figure))?);
        }
        Command::Check => {
            let results = check::run_all();
            for r in &results {
                println!("{r}");
            }
            return Ok(results.iter().all(|r| r.passed));
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
