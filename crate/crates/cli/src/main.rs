use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use hypalign_cli::config::{parse_override, DataSection, RunConfig};
use hypalign_cli::run::{self, ExportChannel, GradcheckArgs, GRADCHECK_TOLERANCE};
use hypalign_core::data::SyntheticSpec;

/// Hyperbolic multi-modal entity alignment.
#[derive(Parser)]
#[command(name = "hypalign", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the structure channel (and the visual channel if features exist).
    Train(TrainArgs),
    /// Print Hits@k for structure-only, visual-only and fused embeddings.
    Evaluate(EvalArgs),
    /// List the top-k KG2 candidates for every test entity.
    Predict(PredictArgs),
    /// Write embeddings as `name<TAB>x1<TAB>...` lines.
    ExportEmbeddings(ExportArgs),
    /// Compare analytic and finite-difference gradients on a small instance.
    Gradcheck(GradcheckCli),
    /// Print entity, relation, triple and image counts for a dataset.
    Stats(StatsArgs),
    /// Write a synthetic KG pair to files.
    Generate(GenerateArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config value, e.g. `--set training.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, allow_negative_numbers = true)]
    learning_rate: Option<f64>,
    /// Run every loop on the calling thread.
    #[arg(long)]
    serial: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut overrides = self
            .set
            .iter()
            .map(|s| parse_override(s))
            .collect::<Result<Vec<_>>>()?;
        let mut push = |k: &str, v: toml::Value| overrides.push((k.to_string(), v));
        if let Some(s) = self.seed {
            push("seed", toml::Value::Integer(s as i64));
        }
        if let Some(d) = &self.output_dir {
            push("output_dir", toml::Value::String(d.to_string_lossy().into_owned()));
        }
        if let Some(e) = self.epochs {
            push("training.epochs", toml::Value::Integer(e as i64));
        }
        if let Some(lr) = self.learning_rate {
            push("training.learning_rate", toml::Value::Float(lr));
        }
        if self.serial {
            push("parallel", toml::Value::Boolean(false));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Comma-separated structure weights (default: from the manifest).
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    /// Comma-separated k values (default: from the manifest).
    #[arg(long, value_delimiter = ',')]
    k: Option<Vec<usize>>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    run: PathBuf,
    /// Structure weight; defaults to 0.5 with a visual channel, else 1.
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, default_value_t = 10)]
    top: usize,
    /// Output file (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportChannel::Structure)]
    channel: ExportChannel,
    /// Structure weight for `--channel fused`.
    #[arg(long, default_value_t = 0.5)]
    beta: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckCli {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Entities per KG (total nodes = 2x, at most 30).
    #[arg(long, default_value_t = 12)]
    entities: usize,
    #[arg(long, default_value_t = 8)]
    dim: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 200)]
    coordinates: usize,
    #[arg(long, default_value_t = 0.0)]
    feature_l2: f64,
    /// Test hook: scale one analytic gradient to check the check fails.
    #[arg(long, default_value_t = 1.0, hide = true)]
    fault_scale: f64,
}

#[derive(Args)]
struct StatsArgs {
    /// Directory with files named as written by `generate`.
    #[arg(long, conflicts_with = "config")]
    data_dir: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 100)]
    n_entities: usize,
    #[arg(long, default_value_t = 4.0)]
    avg_degree: f64,
    #[arg(long, default_value_t = 0.0)]
    edge_noise: f64,
    #[arg(long, default_value_t = 0.9)]
    visual_signal: f64,
    #[arg(long, default_value_t = 32)]
    visual_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<bool> {
    match cli.command {
        Command::Train(a) => {
            let cfg = a.config.load()?;
            run::train(&cfg, out)?;
        }
        Command::Evaluate(a) => {
            run::evaluate(&a.run, a.betas, a.k, out)?;
        }
        Command::Predict(a) => match &a.out {
            Some(p) => {
                let mut f = std::fs::File::create(p).with_context(|| format!("cannot create {}", p.display()))?;
                run::predict_top(&a.run, a.beta, a.top, &mut f)?;
            }
            None => run::predict_top(&a.run, a.beta, a.top, out)?,
        },
        Command::ExportEmbeddings(a) => {
            let rows = run::export(&a.run, a.channel, a.beta, &a.out)?;
            writeln!(out, "wrote {rows} rows to {}", a.out.display())?;
        }
        Command::Gradcheck(a) => {
            let report = run::gradcheck(
                &GradcheckArgs {
                    seed: a.seed,
                    entities: a.entities,
                    dim: a.dim,
                    layers: a.layers,
                    coordinates: a.coordinates,
                    feature_l2: a.feature_l2,
                    fault_scale: a.fault_scale,
                },
                out,
            )?;
            return Ok(report.passes(GRADCHECK_TOLERANCE));
        }
        Command::Stats(a) => {
            let ds = match a.data_dir {
                Some(dir) => {
                    let d = DataSection::in_dir(&dir);
                    hypalign_core::data::load_dataset(&d.paths(), d.split_fraction, 0)?
                }
                None => run::dataset(&a.config.load()?)?,
            };
            writeln!(out, "{}", ds.stats())?;
        }
        Command::Generate(a) => {
            let spec = SyntheticSpec {
                n_entities: a.n_entities,
                avg_degree: a.avg_degree,
                edge_noise: a.edge_noise,
                visual_signal: a.visual_signal,
                visual_dim: a.visual_dim,
                rng_seed: a.seed,
                ..Default::default()
            };
            run::generate(&spec, &a.out, out)?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match execute(cli, &mut out) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            let _ = out.flush();
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
