use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use sigmine_core::config::PipelineConfig;
use sigmine_core::overlap::{serve_http, serve_lines, Level, MockEncoder};
use sigmine_core::pipeline::{Pipeline, Stage, StageOptions};
use sigmine_core::synth::{generate_world, write_world, WorldConfig};
use sigmine_core::Error;

#[derive(Parser, Debug)]
#[command(name = "sigmine", version, about = "Mine benchmark signatures from model perplexities")]
struct Cli {
    /// Pipeline config (TOML); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override run.seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Override paths.output_dir (relative to the working directory).
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build token contexts from the corpus and validate inputs.
    Ingest,
    /// Score every context against each benchmark and keep both tails.
    Screen(BenchmarkArgs),
    /// Forward selection over each benchmark's screened candidates.
    Mine(BenchmarkArgs),
    /// Compute benchmark-by-benchmark overlap matrices.
    Overlap {
        /// semantic, performance or signature; repeatable (default: all).
        #[arg(long = "level")]
        levels: Vec<Level>,
    },
    /// Category summaries, cliques and group-bias tests.
    Analyze,
    /// Heatmaps and the combined report.
    Report {
        /// Accept artifacts produced under a different config.
        #[arg(long)]
        force: bool,
    },
    /// Run several stages in order (default: all).
    Run {
        #[arg(long, value_delimiter = ',')]
        stages: Vec<Stage>,
        #[arg(long)]
        force: bool,
    },
    /// Inspect the configuration.
    Config {
        /// Print the default config file.
        #[arg(long)]
        print_defaults: bool,
    },
    /// Write a synthetic dataset with planted structure.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        world_seed: u64,
        #[arg(long)]
        n_docs: Option<usize>,
    },
    /// Serve the deterministic mock encoder.
    MockEncoder {
        /// JSON lines over stdin/stdout.
        #[arg(long, conflicts_with = "http")]
        stdio: bool,
        /// HTTP on this address, e.g. 127.0.0.1:8099.
        #[arg(long)]
        http: Option<String>,
    },
}

#[derive(Args, Debug)]
struct BenchmarkArgs {
    /// Benchmark id; repeatable (default: every panel benchmark).
    #[arg(long = "benchmark")]
    benchmarks: Vec<String>,
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => {
            let mut c = PipelineConfig::default();
            c.base_dir = std::env::current_dir()?;
            c
        }
    };
    if let Some(s) = cli.seed {
        cfg.run.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    if let Some(dir) = &cli.output_dir {
        cfg.paths.output_dir = std::env::current_dir()?.join(dir);
    }
    if let Ok(endpoint) = std::env::var("SIGMINE_ENCODER") {
        if !endpoint.trim().is_empty() {
            cfg.overlap.encoder_endpoint = endpoint;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_stages(cfg: PipelineConfig, stages: &[Stage], opts: StageOptions) -> anyhow::Result<()> {
    if cfg.run.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.run.workers)
            .build_global()
            .context("worker pool")?;
    }
    let pipeline = Pipeline::new(cfg)?;
    let mut out = std::io::stdout().lock();
    for &stage in stages {
        let summary = pipeline
            .run_stage(stage, &opts)
            .with_context(|| format!("stage '{stage}' failed"))?;
        writeln!(out, "{}", summary.line())?;
    }
    Ok(())
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    let single = |stage: Stage, opts: StageOptions| -> anyhow::Result<()> { run_stages(load_config(&cli)?, &[stage], opts) };
    match &cli.command {
        Command::Ingest => single(Stage::Ingest, StageOptions::default()),
        Command::Screen(b) => single(
            Stage::Screen,
            StageOptions {
                benchmarks: b.benchmarks.clone(),
                ..Default::default()
            },
        ),
        Command::Mine(b) => single(
            Stage::Mine,
            StageOptions {
                benchmarks: b.benchmarks.clone(),
                ..Default::default()
            },
        ),
        Command::Overlap { levels } => single(
            Stage::Overlap,
            StageOptions {
                levels: levels.clone(),
                ..Default::default()
            },
        ),
        Command::Analyze => single(Stage::Analyze, StageOptions::default()),
        Command::Report { force } => single(
            Stage::Report,
            StageOptions {
                force: *force,
                ..Default::default()
            },
        ),
        Command::Run { stages, force } => {
            let stages = if stages.is_empty() { Stage::ALL.to_vec() } else { stages.clone() };
            let opts = StageOptions {
                force: *force,
                ..Default::default()
            };
            run_stages(load_config(&cli)?, &stages, opts)
        }
        Command::Config { print_defaults } => {
            let text = if *print_defaults {
                PipelineConfig::default().to_toml()?
            } else {
                let cfg = load_config(&cli)?;
                format!("# config_hash = {}\n{}", cfg.hash(), cfg.to_toml()?)
            };
            print!("{text}");
            Ok(())
        }
        Command::Synth { out, world_seed, n_docs } => {
            let mut wc = WorldConfig::default();
            if let Some(n) = n_docs {
                wc.n_docs = *n;
            }
            let world = generate_world(&wc, *world_seed)?;
            let config = write_world(&world, &wc, *world_seed, out)?;
            println!(
                "{{\"stage\":\"synth\",\"models\":{},\"benchmarks\":{},\"contexts\":{},\"config\":\"{}\"}}",
                world.matrix.n_models(),
                world.panel.n_benchmarks(),
                world.matrix.n_contexts(),
                config.display()
            );
            Ok(())
        }
        Command::MockEncoder { stdio, http } => {
            let encoder = Arc::new(MockEncoder::default());
            match (stdio, http) {
                (_, Some(addr)) => {
                    let server = serve_http(encoder, addr)?;
                    println!("{}", server.url());
                    std::io::stdout().flush()?;
                    server.join();
                }
                _ => serve_lines(encoder.as_ref(), std::io::stdin().lock(), std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let missing = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::MissingArtifact { .. })));
            ExitCode::from(if missing { 2 } else { 1 })
        }
    }
}
