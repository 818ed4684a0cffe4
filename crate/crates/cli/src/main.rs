use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use togrl_core::pipeline::{
    k_sweep, prepare, run_pipeline, stage_eval, stage_graph, stage_repr, stage_topo, stage_walk,
    PipelineConfig,
};
use togrl_core::synth::{gen_synthetic, SyntheticSpec};

#[derive(Parser)]
#[command(
    name = "togrl",
    version,
    about = "Topology-learning representation pipeline for heterogeneous graphs"
)]
struct Cli {
    /// Worker threads (0 = all cores); overrides `jobs` in the config.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,

    /// Run directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Master seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic heterogeneous dataset.
    GenSynth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Synthetic spec (TOML); defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        classes: Option<usize>,
        #[arg(long)]
        nodes_per_class: Option<usize>,
        #[arg(long)]
        hub_fraction: Option<f64>,
        #[arg(long)]
        feature_noise: Option<f64>,
    },
    /// Sample label-constrained walks.
    Walk(RunArgs),
    /// Train the topology encoder on saved walks.
    TrainTopo(RunArgs),
    /// Build the top-k graph from saved topology embeddings.
    BuildGraph {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Train final representations on the saved graph.
    TrainRepr(RunArgs),
    /// Evaluate saved representations.
    Eval(RunArgs),
    /// Run every stage.
    Pipeline(RunArgs),
    /// Evaluate a grid of k values.
    KSweep {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated k values.
        #[arg(long, value_delimiter = ',', default_value = "15,20,25,30,35,40")]
        grid: Vec<usize>,
    },
}

fn load_config(args: &RunArgs) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
        config.apply_seeds();
    }
    config.validate()?;
    Ok(config)
}

fn init_threads(jobs: usize) -> Result<()> {
    if jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let jobs_flag = cli.jobs;
    let with_config = |args: &RunArgs| -> Result<PipelineConfig> {
        let config = load_config(args)?;
        init_threads(jobs_flag.unwrap_or(config.jobs))?;
        Ok(config)
    };
    match cli.command {
        Command::GenSynth {
            out,
            seed,
            spec,
            classes,
            nodes_per_class,
            hub_fraction,
            feature_noise,
        } => {
            init_threads(jobs_flag.unwrap_or(0))?;
            let mut s = match spec {
                Some(path) => SyntheticSpec::load(&path)?,
                None => SyntheticSpec::default(),
            };
            s.classes = classes.unwrap_or(s.classes);
            s.nodes_per_class = nodes_per_class.unwrap_or(s.nodes_per_class);
            s.hub_fraction = hub_fraction.unwrap_or(s.hub_fraction);
            s.feature_noise = feature_noise.unwrap_or(s.feature_noise);
            let synthetic = gen_synthetic(&s, seed)?;
            synthetic.graph.write_dir(&out)?;
            info!(
                "wrote {} nodes to {}",
                synthetic.graph.node_names().len(),
                out.display()
            );
        }
        Command::Walk(args) => {
            let config = with_config(&args)?;
            let (sampled, kept) = stage_walk(&config, &prepare(&config)?)?;
            info!("{kept} of {sampled} walks kept");
        }
        Command::TrainTopo(args) => {
            let config = with_config(&args)?;
            stage_topo(&config, &prepare(&config)?)?;
        }
        Command::BuildGraph { run, k } => {
            let mut config = with_config(&run)?;
            if let Some(k) = k {
                config.graph.k = k;
                config.validate()?;
            }
            let report = stage_graph(
                &config,
                &prepare(&config)?,
                config.graph.k,
                &config.output_dir,
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::TrainRepr(args) => {
            let config = with_config(&args)?;
            stage_repr(&config, &config.output_dir)?;
        }
        Command::Eval(args) => {
            let config = with_config(&args)?;
            let report = stage_eval(&config, &prepare(&config)?, &config.output_dir)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Command::Pipeline(args) => {
            let config = with_config(&args)?;
            let summary = run_pipeline(&config)?;
            println!("{}", serde_json::to_string_pretty(&summary.report)?);
        }
        Command::KSweep { run, grid } => {
            let config = with_config(&run)?;
            if grid.is_empty() {
                bail!("--grid needs at least one k");
            }
            let rows = k_sweep(&config, &grid)?;
            for row in &rows {
                let cell = |s: Option<togrl_core::eval::Summary>| {
                    s.map_or("-".to_string(), |s| format!("{:.4}", s.mean))
                };
                println!(
                    "k={:<4} macro_f1={} micro_f1={} auc={}",
                    row.k,
                    cell(row.report.macro_f1),
                    cell(row.report.micro_f1),
                    row.report
                        .auc
                        .map_or("-".to_string(), |a| format!("{a:.4}"))
                );
            }
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
