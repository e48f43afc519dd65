use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use labelqa::dataset::{generate_synthetic_stack, save_stack};
use labelqa::harness::{
    dump_planes, prepare_stack, rcap_table, run_fit, run_predict, run_rcap_eval,
    run_segmentation_eval, run_selection, segmentation_table, selection_table, ExperimentConfig,
    ModelKind,
};
use labelqa_review::{build_queue_from_manifest, serve, AppState, DecisionLog, DEFAULT_PORT, LOG_FILE};

#[derive(Parser)]
#[command(name = "labelqa", version, about = "Few-shot proposals for annotation quality assurance")]
struct Cli {
    /// Plain-text `key = value` experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; `synth` also uses it for the generated stack.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Default)]
struct ExperimentArgs {
    /// Stack directory.
    #[arg(long)]
    stack: Option<PathBuf>,
    /// baseline, paresn or external.
    #[arg(long)]
    model: Option<String>,
    /// G1, G2, G1andG2 or GT.
    #[arg(long)]
    train_label: Option<String>,
    /// Use a fitted model instead of training.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Directory of `<id>.P{1,2,3}.png` for `--model external`.
    #[arg(long)]
    external_dir: Option<PathBuf>,
    /// Baseline fits, each on a randomly drawn training image.
    #[arg(long)]
    reps: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic stack.
    Synth {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        images: Option<usize>,
    },
    /// Dump the model input planes and ROI of every image.
    Preprocess(ExperimentArgs),
    /// Fit a model on the training split and save it.
    Fit {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Where to write the model (default: <out>/model.paresn or <out>/model.json).
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Write proposals for the test images.
    Predict(ExperimentArgs),
    /// Segmentation metrics of the proposals against every label variant.
    EvalSeg(ExperimentArgs),
    /// Label selection against RCAP-corrupted copies of the true label.
    EvalRcap {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated corruption levels.
        #[arg(long)]
        kappa: Option<String>,
        /// Repetitions per test image.
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Choose between the two labels per test image and write the review queue.
    Select(ExperimentArgs),
    /// Serve the manual review queue.
    Serve {
        /// `queue.json` written by `select`.
        #[arg(long)]
        queue: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Decision log (default: review_log.jsonl next to the queue).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Static files served at `/`.
        #[arg(long = "static")]
        static_dir: Option<PathBuf>,
    },
}

fn base_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    for kv in &cli.set {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("--set expects KEY=VALUE, got `{kv}`");
        };
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = cli.seed {
        cfg.rng_seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn experiment(cli: &Cli, args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut cfg = base_config(cli)?;
    if let Some(s) = &args.stack {
        cfg.stack_dir = s.clone();
    }
    if let Some(m) = &args.model {
        cfg.model = m.parse()?;
    }
    if let Some(l) = &args.train_label {
        cfg.train_label = l.parse()?;
    }
    if let Some(f) = &args.model_file {
        cfg.model_file = Some(f.clone());
    }
    if let Some(d) = &args.external_dir {
        cfg.external_dir = Some(d.clone());
        if args.model.is_none() {
            cfg.model = ModelKind::External;
        }
    }
    if let Some(r) = args.reps {
        cfg.baseline_reps = r;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn print_written(dir: &Path, files: &[&str]) {
    for f in files {
        println!("wrote {}", dir.join(f).display());
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Synth { stack, images } => {
            let mut cfg = base_config(&cli)?;
            cfg.synth.rng_seed = cfg.rng_seed;
            if let Some(n) = images {
                cfg.synth.num_images = *n;
            }
            let records = generate_synthetic_stack(&cfg.synth)?;
            save_stack(&records, stack, &[])?;
            println!("wrote {} images to {}", records.len(), stack.display());
        }
        Command::Preprocess(args) => {
            let cfg = experiment(&cli, args)?;
            let stack = prepare_stack(&cfg)?;
            let dir = cfg.out_dir.join("planes");
            dump_planes(&stack, &dir)?;
            println!("wrote planes of {} images to {}", stack.images.len(), dir.display());
        }
        Command::Fit { exp, model_out } => {
            let cfg = experiment(&cli, exp)?;
            let path = model_out.clone().unwrap_or_else(|| match cfg.model {
                ModelKind::Paresn => cfg.out_dir.join("model.paresn"),
                _ => cfg.out_dir.join("model.json"),
            });
            let summary = run_fit(&cfg, &path)?;
            println!("{}", serde_json::to_string_pretty(&summary)?);
            println!("wrote {}", path.display());
        }
        Command::Predict(args) => {
            let cfg = experiment(&cli, args)?;
            let n = run_predict(&cfg)?;
            println!("wrote proposals for {n} images to {}", cfg.out_dir.join("proposals").display());
        }
        Command::EvalSeg(args) => {
            let cfg = experiment(&cli, args)?;
            let report = run_segmentation_eval(&cfg)?;
            print!("{}", segmentation_table(&report));
            print_written(&cfg.out_dir, &["metrics.json", "tables.txt"]);
        }
        Command::EvalRcap {
            exp,
            kappa,
            repetitions,
        } => {
            let mut cfg = experiment(&cli, exp)?;
            if let Some(k) = kappa {
                cfg.set("kappas", k)?;
            }
            if let Some(r) = repetitions {
                cfg.repetitions = *r;
            }
            cfg.validate()?;
            let report = run_rcap_eval(&cfg)?;
            print!("{}", rcap_table(&report));
            print_written(&cfg.out_dir, &["metrics.json", "tables.txt"]);
        }
        Command::Select(args) => {
            let cfg = experiment(&cli, args)?;
            let report = run_selection(&cfg)?;
            print!("{}", selection_table(&report));
            print_written(&cfg.out_dir, &["decisions.jsonl", "queue.json", "metrics.json", "tables.txt"]);
        }
        Command::Serve {
            queue,
            port,
            host,
            log,
            static_dir,
        } => {
            let store = build_queue_from_manifest(queue)
                .with_context(|| format!("building queue from {}", queue.display()))?;
            let log_path = log.clone().unwrap_or_else(|| {
                queue.parent().unwrap_or(Path::new(".")).join(LOG_FILE)
            });
            let state = AppState::new(store, DecisionLog::open(&log_path)?)?;
            let pending = state.snapshot().pending().len();
            let addr: SocketAddr = format!("{host}:{port}").parse()?;
            println!("serving {pending} pending items on http://{addr} (log {})", log_path.display());
            let runtime = tokio::runtime::Runtime::new()?;
            runtime
                .block_on(serve(state, addr, static_dir.as_deref()))
                .with_context(|| format!("serving on {addr}"))?;
        }
    }
    Ok(())
}
