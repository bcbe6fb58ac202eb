use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use fragembed::commands::{
    run_ablate, run_eval, run_generate, run_gradcheck, run_train, EvalOptions, GradCheckOptions, SplitChoice,
};
use fragembed::config::RunConfig;
use fragembed::data::{FragmentMode, SyntheticSpec};
use fragembed::ObjectiveMode;

const OUT_ENV: &str = "FRAGEMBED_OUT_DIR";

/// Fragment embeddings for bidirectional image-sentence retrieval.
#[derive(Debug, Parser)]
#[command(name = "fragembed", version)]
struct Cli {
    /// Worker threads for scoring; 1 forces the fully deterministic path.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic corpus with planted alignments.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus loss trace.
    Train(RunArgs),
    /// Evaluate a checkpoint in both retrieval directions.
    Eval(EvalArgs),
    /// Compare analytic gradients against finite differences.
    Gradcheck(GradCheckArgs),
    /// Train and evaluate every objective and fragment variant.
    Ablate(RunArgs),
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,
    #[arg(long, default_value_t = 250)]
    items: usize,
    #[arg(long, default_value_t = 8)]
    concepts: usize,
    #[arg(long, default_value_t = 5)]
    fragments_per_image: usize,
    #[arg(long, default_value_t = 3)]
    triplets_per_sentence: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 16)]
    image_dim: usize,
    #[arg(long, default_value_t = 32)]
    word_dim: usize,
    #[arg(long, default_value_t = 3)]
    relations: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

impl GenerateArgs {
    fn spec(&self) -> SyntheticSpec {
        SyntheticSpec {
            num_items: self.items,
            num_concepts: self.concepts,
            fragments_per_image: self.fragments_per_image,
            triplets_per_sentence: self.triplets_per_sentence,
            noise_sigma: self.noise,
            image_dim: self.image_dim,
            word_dim: self.word_dim,
            num_relations: self.relations,
            seed: self.seed,
        }
    }
}

/// Run configuration. Starts from `--config` when given, otherwise from
/// defaults; every flag given explicitly overrides the starting value.
#[derive(Debug, Args)]
struct RunArgs {
    /// A run_config.json to start from.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    corpus: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    words: Option<PathBuf>,
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,

    /// fragment_only | global_only | combined_dense | combined_mil
    #[arg(long)]
    mode: Option<ObjectiveMode>,
    /// triplets | bow | bigram | devise | fullframe_only
    #[arg(long)]
    fragments: Option<FragmentMode>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    min_relation_frac: Option<f64>,

    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    anneal_factor: Option<f64>,
    #[arg(long)]
    anneal_last_epochs: Option<usize>,
    #[arg(long)]
    mil_start_epoch: Option<usize>,
    /// Seed for initialization and batch shuffling.
    #[arg(long)]
    seed: Option<u64>,

    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    smoothing_n: Option<f64>,

    /// Training items; defaults to everything not in val or test.
    #[arg(long)]
    train_items: Option<usize>,
    #[arg(long)]
    val_items: Option<usize>,
    #[arg(long)]
    test_items: Option<usize>,
    #[arg(long)]
    split_seed: Option<u64>,
    /// Comma-separated recall cutoffs.
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

macro_rules! override_fields {
    ($($src:expr => $dst:expr),* $(,)?) => {
        $(if let Some(v) = $src { $dst = v; })*
    };
}

impl RunArgs {
    fn resolve(self) -> anyhow::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
            None => match (&self.corpus, &self.words) {
                (Some(c), Some(w)) => RunConfig::new(c, w, &self.out),
                _ => bail!("--corpus and --words are required without --config"),
            },
        };
        cfg.out_dir = self.out;
        if self.train_items.is_some() {
            cfg.split.train = self.train_items;
        }
        override_fields! {
            self.corpus => cfg.corpus,
            self.words => cfg.words,
            self.mode => cfg.objective.mode,
            self.fragments => cfg.fragments,
            self.embed_dim => cfg.embed_dim,
            self.min_relation_frac => cfg.min_relation_frac,
            self.epochs => cfg.train.epochs,
            self.batch_size => cfg.train.batch_size,
            self.lr => cfg.train.lr,
            self.momentum => cfg.train.momentum,
            self.anneal_factor => cfg.train.anneal_factor,
            self.anneal_last_epochs => cfg.train.anneal_last_epochs,
            self.mil_start_epoch => cfg.train.mil_start_epoch,
            self.seed => cfg.train.seed,
            self.beta => cfg.objective.beta,
            self.alpha => cfg.objective.alpha,
            self.delta => cfg.objective.delta,
            self.smoothing_n => cfg.objective.smoothing_n,
            self.val_items => cfg.split.val,
            self.test_items => cfg.split.test,
            self.split_seed => cfg.split.seed,
            self.ks => cfg.eval_ks,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Corpus to evaluate on instead of the one recorded in the checkpoint.
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Word vectors to use instead of the ones recorded in the checkpoint.
    #[arg(long)]
    words: Option<PathBuf>,
    /// train | val | test
    #[arg(long, default_value = "test", value_parser = parse_split)]
    split: SplitChoice,
    /// Keep only the first sentence of every item.
    #[arg(long)]
    hodosh: bool,
    #[arg(long, env = OUT_ENV)]
    out: PathBuf,
}

fn parse_split(s: &str) -> Result<SplitChoice, String> {
    match s {
        "train" => Ok(SplitChoice::Train),
        "val" => Ok(SplitChoice::Val),
        "test" => Ok(SplitChoice::Test),
        _ => Err(format!("unknown split `{s}` (expected train, val or test)")),
    }
}

#[derive(Debug, Args)]
struct GradCheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-6)]
    threshold: f64,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-4)]
    kink_tol: f64,
    #[arg(long, default_value_t = 3)]
    items: usize,
    #[arg(long, default_value_t = ObjectiveMode::CombinedMil)]
    mode: ObjectiveMode,
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Generate(args) => {
            let s = run_generate(&args.spec(), &args.out).context("generate")?;
            println!(
                "generated {} items, {} image fragments, {} triplets, {} words",
                s.items, s.image_fragments, s.triplets, s.words
            );
            for f in &s.files {
                println!("wrote {}", f.display());
            }
        }
        Command::Train(args) => {
            let cfg = args.resolve().context("train: configuration")?;
            let s = run_train(&cfg).context("train")?;
            if let Some(last) = s.outcome.trace.last() {
                println!("epoch {} mean loss {:.6}", last.epoch, last.mean_loss);
            }
            println!("wrote {}", s.checkpoint.display());
        }
        Command::Eval(args) => {
            let opts = EvalOptions {
                checkpoint: args.checkpoint,
                corpus: args.corpus,
                words: args.words,
                split: args.split,
                hodosh: args.hodosh,
                out_dir: args.out,
            };
            let s = run_eval(&opts).context("eval")?;
            print!("{}", s.text);
        }
        Command::Gradcheck(args) => {
            let mut opts = GradCheckOptions {
                seed: args.seed,
                threshold: args.threshold,
                eps: args.eps,
                kink_tol: args.kink_tol,
                num_items: args.items,
                ..Default::default()
            };
            opts.objective.mode = args.mode;
            let (_, text, passed) = run_gradcheck(&opts).context("gradcheck")?;
            println!("{text}");
            if !passed {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Ablate(args) => {
            let cfg = args.resolve().context("ablate: configuration")?;
            let s = run_ablate(&cfg).context("ablate")?;
            print!("{}", s.text);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
