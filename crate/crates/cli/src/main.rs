use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use musegnn_core::data::SyntheticSpec;
use musegnn_core::pipeline::{build_graphs, embed_stage, evaluate_stage, simulate, train_stage, PipelineConfig};
use musegnn_core::{CoreError, Result};

#[derive(Parser, Debug)]
#[command(name = "musegnn", version, about = "Gene embeddings from multi-dataset co-expression graphs")]
struct Cli {
    /// Worker thread cap for parallel stages.
    #[arg(long, global = true, env = "MUSEGNN_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset collection with planted modules.
    Simulate {
        /// Synthetic spec JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for the manifest, matrices and planted truth.
        #[arg(long, short)]
        out: PathBuf,
        /// Overrides the spec seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Quality control, normalization and co-expression graphs per dataset.
    BuildGraphs(StageArgs),
    /// Train the encoder and write the model, log and embeddings.
    Train {
        #[command(flatten)]
        stage: StageArgs,
        #[command(flatten)]
        toggles: Toggles,
        /// Overrides the configured epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Embed the built graphs with a saved model.
    Embed {
        #[command(flatten)]
        stage: StageArgs,
        /// Only `--shuffle-features` affects embedding.
        #[command(flatten)]
        toggles: Toggles,
        /// Model checkpoint; defaults to the trained model in the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Embedding CSV to write; defaults to embeddings.csv in the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Metrics for one or more embedding tables, ranked when two or more.
    Evaluate {
        #[command(flatten)]
        stage: StageArgs,
        /// `name=path` pairs; defaults to the trained embeddings.
        #[arg(long = "method", value_name = "NAME=PATH")]
        methods: Vec<String>,
    },
    /// Print the effective configuration as JSON.
    Config(StageArgs),
}

#[derive(Args, Debug)]
struct StageArgs {
    /// Pipeline config JSON; defaults apply to missing fields.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Collection manifest; overrides the config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for graphs, model and reports; overrides the config.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Run seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct Toggles {
    /// Drop the cross-dataset similarity loss.
    #[arg(long)]
    no_sim: bool,
    /// Drop the contrastive loss.
    #[arg(long)]
    no_infonce: bool,
    /// Give every dataset its own shared-stack weights.
    #[arg(long)]
    no_weight_sharing: bool,
    /// Replace node features with each graph's mean feature row.
    #[arg(long)]
    shuffle_features: bool,
}

impl StageArgs {
    fn load(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(m) = &self.manifest {
            cfg.manifest = m.clone();
        }
        if let Some(o) = &self.out_dir {
            cfg.out_dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Toggles {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let hp = &mut cfg.hyperparams;
        hp.sim_loss &= !self.no_sim;
        hp.infonce_loss &= !self.no_infonce;
        hp.weight_sharing &= !self.no_weight_sharing;
        hp.shuffle_features |= self.shuffle_features;
    }
}

fn parse_method(s: &str) -> Result<(String, PathBuf)> {
    match s.split_once('=') {
        Some((name, path)) if !name.is_empty() && !path.is_empty() => Ok((name.to_string(), PathBuf::from(path))),
        _ => Err(CoreError::Config(format!("expected NAME=PATH, got {s:?}"))),
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CoreError::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate { spec, out, seed } => {
            let mut spec: SyntheticSpec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| CoreError::io(&p, e))?;
                    serde_json::from_str(&text).map_err(|e| CoreError::Config(format!("synthetic spec: {e}")))?
                }
                None => SyntheticSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let manifest = simulate(&spec, &out)?;
            println!("{}", manifest.display());
        }
        Command::BuildGraphs(stage) => {
            let index = build_graphs(&stage.load()?)?;
            for d in &index.datasets {
                println!(
                    "{}\t{:?}\t{} nodes\t{} edges{}",
                    d.dataset_id,
                    d.route,
                    d.n_nodes,
                    d.n_edges,
                    if d.cached { "\tcached" } else { "" }
                );
            }
        }
        Command::Train { stage, toggles, epochs } => {
            let mut cfg = stage.load()?;
            toggles.apply(&mut cfg);
            if let Some(e) = epochs {
                cfg.hyperparams.epochs = e;
            }
            let summary = train_stage(&cfg)?;
            log::info!("trained in {:.1}s", summary.wall_seconds);
            println!("{}", cfg.embeddings_path().display());
        }
        Command::Embed { stage, toggles, model, out } => {
            let mut cfg = stage.load()?;
            toggles.apply(&mut cfg);
            let model = model.unwrap_or_else(|| cfg.model_path());
            let out = out.unwrap_or_else(|| cfg.embeddings_path());
            embed_stage(&cfg, &model, &out)?;
            println!("{}", out.display());
        }
        Command::Evaluate { stage, methods } => {
            let cfg = stage.load()?;
            let methods = if methods.is_empty() {
                vec![("musegnn".to_string(), cfg.embeddings_path())]
            } else {
                methods.iter().map(|m| parse_method(m)).collect::<Result<_>>()?
            };
            let eval = evaluate_stage(&cfg, &methods)?;
            match &eval.report {
                Some(r) => print!("{}", r.to_table()),
                None => {
                    for (name, v) in &eval.raw {
                        println!("{name}\t{}", v.map(|x| format!("{x:.4}")).join("\t"));
                    }
                }
            }
        }
        Command::Config(stage) => println!("{}", stage.load()?.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
