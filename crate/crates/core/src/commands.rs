//! End-to-end runs behind the CLI subcommands. Everything here is usable
//! without the binary, which keeps the determinism checks in-process.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{
    alignment_csv, apply_relation_vocab, build_fragments, filter_dictionary, generate_synthetic, prune_relations,
    FragmentMode, RawCorpus, RawRecord, SyntheticSpec,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, hodosh_subset, render_csv, render_table, RetrievalReport};
use crate::gradcheck::{grad_check, render_report, GradCheckInstance, GradCheckReport};
use crate::model::{Corpus, Dims, ModelParams, RelationVocab};
use crate::objective::{Labels, ObjectiveConfig, ObjectiveMode};
use crate::optim::{trace_csv, train, TrainOutcome};
use crate::words::WordTable;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const WORDS_FILE: &str = "words.txt";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "loss_trace.csv";
pub const RUN_CONFIG_FILE: &str = "run_config.json";
pub const REPORT_TXT: &str = "report.txt";
pub const REPORT_CSV: &str = "report.csv";
pub const EVAL_CONFIG_FILE: &str = "eval_config.json";

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone)]
pub struct GenerateSummary {
    pub items: usize,
    pub image_fragments: usize,
    pub triplets: usize,
    pub words: usize,
    pub files: Vec<PathBuf>,
}

/// Writes `corpus.jsonl`, `words.txt` and `alignment.csv` into `out_dir`.
pub fn run_generate(spec: &SyntheticSpec, out_dir: &Path) -> Result<GenerateSummary> {
    let syn = generate_synthetic(spec)?;
    create_dir(out_dir)?;
    let files = vec![
        out_dir.join(CORPUS_FILE),
        out_dir.join(WORDS_FILE),
        out_dir.join(ALIGNMENT_FILE),
    ];
    syn.corpus.save(&files[0])?;
    syn.table.save(&files[1])?;
    write(&files[2], alignment_csv(&syn.alignment))?;
    Ok(GenerateSummary {
        items: syn.corpus.records.len(),
        image_fragments: syn.corpus.records.iter().map(|r| r.image_fragments.len()).sum(),
        triplets: syn.alignment.len(),
        words: syn.table.len(),
        files,
    })
}

/// Preprocessed splits ready for training and evaluation.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub table: WordTable,
    /// Relation vocabulary after pruning on the training split.
    pub relations: RelationVocab,
    pub train: Corpus,
    pub val: Option<Corpus>,
    pub test: Option<Corpus>,
}

fn pick(records: &[RawRecord], indices: &[usize]) -> Vec<RawRecord> {
    indices.iter().map(|&i| records[i].clone()).collect()
}

fn build_split(
    records: &[RawRecord],
    image_dim: usize,
    relations: &RelationVocab,
    mode: FragmentMode,
    table: &WordTable,
) -> Result<Corpus> {
    let (records, _) = apply_relation_vocab(records, relations)?;
    let (records, _) = filter_dictionary(&records, table)?;
    build_fragments(&records, image_dim, relations, mode, table)
}

/// Loads, splits and preprocesses the corpus. Relation frequencies are taken
/// from the training split only; `relations` overrides them (for evaluating a
/// checkpoint with its stored vocabulary).
pub fn prepare_with(
    cfg: &RunConfig,
    raw: &RawCorpus,
    table: WordTable,
    relations: Option<RelationVocab>,
) -> Result<Prepared> {
    let split = cfg.split.split(raw.records.len())?;
    let image_dim = raw.dims.image_dim;
    let train_raw = pick(&raw.records, &split.train);
    let relations = match relations {
        Some(v) => v,
        None => prune_relations(&train_raw, cfg.min_relation_frac)?.vocab,
    };
    let train = build_split(&train_raw, image_dim, &relations, cfg.fragments, &table)?;
    let held_out = |idx: &[usize]| -> Result<Option<Corpus>> {
        if idx.is_empty() {
            Ok(None)
        } else {
            build_split(&pick(&raw.records, idx), image_dim, &relations, cfg.fragments, &table).map(Some)
        }
    };
    let val = held_out(&split.val)?;
    let test = held_out(&split.test)?;
    Ok(Prepared {
        table,
        relations,
        train,
        val,
        test,
    })
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let raw = RawCorpus::load(&cfg.corpus)?;
    let table = WordTable::load(&cfg.words)?;
    prepare_with(cfg, &raw, table, None)
}

/// Embedding width actually used: DeViSE fragments live in word space.
pub fn effective_embed_dim(cfg: &RunConfig, word_dim: usize) -> usize {
    if cfg.fragments == FragmentMode::Devise {
        word_dim
    } else {
        cfg.embed_dim
    }
}

/// Initializes parameters from the training seed and runs the schedule.
pub fn fit(cfg: &RunConfig, prepared: &Prepared) -> Result<TrainOutcome> {
    cfg.validate()?;
    let dims = Dims {
        word_dim: prepared.table.dim(),
        embed_dim: effective_embed_dim(cfg, prepared.table.dim()),
        image_dim: prepared.train.image_dim,
    };
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let params = ModelParams::init(dims, prepared.train.relations.len(), &mut rng);
    train(
        &prepared.train,
        &prepared.table,
        params,
        &cfg.train,
        &cfg.objective,
        &mut rng,
    )
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub outcome: TrainOutcome,
    pub config: RunConfig,
}

/// Trains and writes `model.ckpt`, `loss_trace.csv` and `run_config.json`.
pub fn run_train(cfg: &RunConfig) -> Result<TrainSummary> {
    let prepared = prepare(cfg)?;
    let mut cfg = cfg.clone();
    cfg.embed_dim = effective_embed_dim(&cfg, prepared.table.dim());
    let outcome = fit(&cfg, &prepared)?;

    create_dir(&cfg.out_dir)?;
    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    Checkpoint {
        params: outcome.params.clone(),
        relations: prepared.train.relations.clone(),
        config: cfg.clone(),
    }
    .save(&checkpoint)?;
    write(&cfg.out_dir.join(TRACE_FILE), trace_csv(&outcome.trace))?;
    cfg.save(&cfg.out_dir.join(RUN_CONFIG_FILE))?;
    Ok(TrainSummary {
        checkpoint,
        outcome,
        config: cfg,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitChoice {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub checkpoint: PathBuf,
    /// Overrides the corpus path recorded in the checkpoint.
    pub corpus: Option<PathBuf>,
    /// Overrides the word-vector path recorded in the checkpoint.
    pub words: Option<PathBuf>,
    pub split: SplitChoice,
    pub hodosh: bool,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub reports: [RetrievalReport; 2],
    pub images: usize,
    pub sentences: usize,
    pub text: String,
    pub csv: String,
}

fn report_header(label: &str, images: usize, sentences: usize) -> String {
    format!("{label}: {images} images, {sentences} sentences\n")
}

/// Evaluates a checkpoint on one split; writes `report.txt`, `report.csv` and
/// `eval_config.json` into `opts.out_dir`.
pub fn run_eval(opts: &EvalOptions) -> Result<EvalSummary> {
    let ck = Checkpoint::load(&opts.checkpoint)?;
    let mut cfg = ck.config.clone();
    if let Some(c) = &opts.corpus {
        cfg.corpus = c.clone();
    }
    if let Some(w) = &opts.words {
        cfg.words = w.clone();
    }
    let raw = RawCorpus::load(&cfg.corpus)?;
    if raw.dims.image_dim != ck.params.dims.image_dim {
        return Err(Error::Shape {
            context: "corpus image_dim vs checkpoint image_dim",
            expected: ck.params.dims.image_dim,
            actual: raw.dims.image_dim,
        });
    }
    let table = WordTable::load(&cfg.words)?;
    if table.dim() != ck.params.dims.word_dim {
        return Err(Error::Shape {
            context: "word table width vs checkpoint word_dim",
            expected: ck.params.dims.word_dim,
            actual: table.dim(),
        });
    }
    let prepared = prepare_with(&cfg, &raw, table, Some(ck.relations.clone()))?;
    let corpus = match opts.split {
        SplitChoice::Train => Some(prepared.train),
        SplitChoice::Val => prepared.val,
        SplitChoice::Test => prepared.test,
    }
    .ok_or_else(|| Error::Config(format!("the checkpoint's split has no {:?} items", opts.split)))?;
    let corpus = if opts.hodosh { hodosh_subset(&corpus) } else { corpus };

    let reports = evaluate(
        &ck.params,
        &prepared.table,
        &corpus,
        cfg.objective.smoothing_n,
        &cfg.eval_ks,
    )?;
    let label = format!(
        "{:?}{}",
        opts.split,
        if opts.hodosh { " (first sentence only)" } else { "" }
    )
    .to_lowercase();
    let rows = vec![(cfg.objective.mode.to_string(), reports.clone())];
    let text = report_header(&label, corpus.len(), corpus.num_sentences()) + &render_table(&rows, &cfg.eval_ks);
    let csv = render_csv(&rows, &cfg.eval_ks);

    create_dir(&opts.out_dir)?;
    write(&opts.out_dir.join(REPORT_TXT), &text)?;
    write(&opts.out_dir.join(REPORT_CSV), &csv)?;
    #[derive(Serialize)]
    struct EvalProvenance<'a> {
        options: &'a EvalOptions,
        run: &'a RunConfig,
    }
    let provenance = serde_json::to_string_pretty(&EvalProvenance {
        options: opts,
        run: &cfg,
    })
    .expect("provenance serializes");
    write(&opts.out_dir.join(EVAL_CONFIG_FILE), provenance + "\n")?;

    Ok(EvalSummary {
        reports,
        images: corpus.len(),
        sentences: corpus.num_sentences(),
        text,
        csv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    pub seed: u64,
    pub threshold: f64,
    pub eps: f64,
    pub kink_tol: f64,
    pub dims: Dims,
    pub num_items: usize,
    pub num_relations: usize,
    pub objective: ObjectiveConfig,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            seed: 0,
            threshold: 1e-6,
            eps: 1e-5,
            kink_tol: 1e-4,
            dims: Dims {
                word_dim: 4,
                embed_dim: 5,
                image_dim: 6,
            },
            num_items: 3,
            num_relations: 2,
            objective: ObjectiveConfig::default(),
        }
    }
}

/// Gradient check on a self-generated instance with MIL labels frozen.
/// Returns the report, its text rendering, and whether it passed.
pub fn run_gradcheck(opts: &GradCheckOptions) -> Result<(GradCheckReport, String, bool)> {
    let inst = GradCheckInstance::random(opts.seed, opts.dims, opts.num_items, opts.num_relations)?;
    let labels = if opts.objective.mode.uses_mil() {
        Labels::Mil
    } else {
        Labels::Dense
    };
    let report = grad_check(
        &inst.params,
        &inst.table,
        &inst.pairs(),
        &opts.objective,
        labels,
        opts.eps,
        opts.kink_tol,
    )?;
    let passed = report.max_rel_err < opts.threshold;
    let text = render_report(opts.seed, opts.threshold, &report);
    Ok((report, text, passed))
}

/// One row of the ablation sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub label: &'static str,
    pub fragments: FragmentMode,
    pub mode: ObjectiveMode,
}

/// Ablation rows in table order: single objectives,
/// their combination, the combination's input ablations, DeViSE, and the
/// full model with MIL.
pub const ABLATION_VARIANTS: [Variant; 8] = [
    Variant {
        label: "fragment_only",
        fragments: FragmentMode::Triplets,
        mode: ObjectiveMode::FragmentOnly,
    },
    Variant {
        label: "global_only",
        fragments: FragmentMode::Triplets,
        mode: ObjectiveMode::GlobalOnly,
    },
    Variant {
        label: "combined",
        fragments: FragmentMode::Triplets,
        mode: ObjectiveMode::CombinedDense,
    },
    Variant {
        label: "fullframe_only",
        fragments: FragmentMode::FullframeOnly,
        mode: ObjectiveMode::CombinedDense,
    },
    Variant {
        label: "bow",
        fragments: FragmentMode::Bow,
        mode: ObjectiveMode::CombinedDense,
    },
    Variant {
        label: "bigram",
        fragments: FragmentMode::Bigram,
        mode: ObjectiveMode::CombinedDense,
    },
    Variant {
        label: "devise",
        fragments: FragmentMode::Devise,
        mode: ObjectiveMode::GlobalOnly,
    },
    Variant {
        label: "combined_mil",
        fragments: FragmentMode::Triplets,
        mode: ObjectiveMode::CombinedMil,
    },
];

impl Variant {
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        cfg.fragments = self.fragments;
        cfg.objective.mode = self.mode;
        cfg
    }
}

/// Trains one variant in memory and evaluates it on the test split.
pub fn train_and_evaluate(cfg: &RunConfig, raw: &RawCorpus, table: &WordTable) -> Result<[RetrievalReport; 2]> {
    let prepared = prepare_with(cfg, raw, table.clone(), None)?;
    let test = prepared
        .test
        .as_ref()
        .ok_or_else(|| Error::Config("evaluation needs a non-empty test split".into()))?;
    let outcome = fit(cfg, &prepared)?;
    evaluate(
        &outcome.params,
        &prepared.table,
        test,
        cfg.objective.smoothing_n,
        &cfg.eval_ks,
    )
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub rows: Vec<(String, [RetrievalReport; 2])>,
    pub text: String,
    pub csv: String,
}

/// Runs every variant of [`ABLATION_VARIANTS`] on `base`'s data and split and
/// writes `ablation.txt`, `ablation.csv` and the base run config.
pub fn run_ablate(base: &RunConfig) -> Result<AblationSummary> {
    base.validate()?;
    let raw = RawCorpus::load(&base.corpus)?;
    let table = WordTable::load(&base.words)?;
    let mut rows = Vec::with_capacity(ABLATION_VARIANTS.len());
    for v in ABLATION_VARIANTS {
        log::info!("ablation: training {}", v.label);
        rows.push((v.label.to_owned(), train_and_evaluate(&v.apply(base), &raw, &table)?));
    }
    let text = render_table(&rows, &base.eval_ks);
    let csv = render_csv(&rows, &base.eval_ks);
    create_dir(&base.out_dir)?;
    write(&base.out_dir.join("ablation.txt"), &text)?;
    write(&base.out_dir.join("ablation.csv"), &csv)?;
    base.save(&base.out_dir.join(RUN_CONFIG_FILE))?;
    Ok(AblationSummary { rows, text, csv })
}
