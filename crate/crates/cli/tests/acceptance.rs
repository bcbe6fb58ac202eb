//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::Instant;

use fragembed::commands::train_and_evaluate;
use fragembed::config::RunConfig;
use fragembed::data::{
    build_fragments, generate_synthetic, FragmentMode, RawRecord, RawSentence, SyntheticCorpus, SyntheticSpec,
    BOW_RELATION,
};
use fragembed::eval::{dense_scores, RetrievalReport};
use fragembed::gradcheck::{grad_check, GradCheckInstance};
use fragembed::model::encode_image_fragment;
use fragembed::objective::{
    global_ranking_loss, image_sentence_score, mil_assign_labels, total_objective, BagStructure, ScoreMatrix,
};
use fragembed::{
    Dims, Labels, ModelParams, ObjectiveConfig, ObjectiveMode, RelationVocab, SentenceFragment, WordTable,
};
use ndarray::{array, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String), String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

fn crit_gradients() -> Outcome {
    let start = Instant::now();
    let dims = Dims {
        word_dim: 4,
        embed_dim: 5,
        image_dim: 6,
    };
    let cfg = ObjectiveConfig {
        mode: ObjectiveMode::CombinedMil,
        ..Default::default()
    };
    let (mut worst, mut checked, mut skipped) = (0.0f64, 0usize, 0usize);
    for seed in 0..20 {
        let inst = GradCheckInstance::random(seed, dims, 3, 2).map_err(|e| e.to_string())?;
        let r = grad_check(&inst.params, &inst.table, &inst.pairs(), &cfg, Labels::Mil, 1e-5, 1e-4)
            .map_err(|e| e.to_string())?;
        worst = worst.max(r.max_rel_err);
        checked += r.checked;
        skipped += r.skipped;
    }
    let secs = start.elapsed().as_secs_f64();
    let skip_frac = skipped as f64 / (checked + skipped) as f64;
    Ok((
        worst < 1e-6 && skip_frac < 0.02 && secs < 10.0,
        format!(
            "20 seeds, max_rel_err {worst:.2e} (< 1e-6), skipped {:.2}% (< 2%), {secs:.2} s (< 10 s)",
            100.0 * skip_frac
        ),
    ))
}

fn random_bags(rng: &mut ChaCha8Rng) -> (BagStructure, ScoreMatrix) {
    let items = rng.random_range(1..=6);
    let mut image_owner = Vec::new();
    let mut sentence_owner = Vec::new();
    for k in 0..items {
        image_owner.extend(std::iter::repeat_n(k, rng.random_range(1..=5)));
        sentence_owner.extend(std::iter::repeat_n(k, rng.random_range(1..=5)));
    }
    let (rows, cols) = (image_owner.len(), sentence_owner.len());
    let k = Array2::from_shape_fn((rows, cols), |_| match rng.random_range(0..4) {
        0 => 0.0,
        1 => -rng.random::<f64>(),
        _ => rng.random_range(-2.0..2.0),
    });
    (
        BagStructure::new(image_owner, sentence_owner, items).unwrap(),
        ScoreMatrix(k),
    )
}

fn crit_mil_feasibility() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut violations = 0usize;
    for _ in 0..1000 {
        let (bags, k) = random_bags(&mut rng);
        let y = mil_assign_labels(&k, &bags).map_err(|e| e.to_string())?;
        for j in 0..bags.num_sentence_rows() {
            let bag = bags.positive_bag(j);
            if !bag.iter().any(|&i| y.0[[i, j]] == 1) {
                violations += 1;
            }
            for i in 0..bags.num_image_rows() {
                if !bag.contains(&i) && y.0[[i, j]] != -1 {
                    violations += 1;
                }
            }
        }
    }
    Ok((
        violations == 0,
        format!("1000 instances, {violations} constraint violations"),
    ))
}

fn crit_zero_closed_form() -> Outcome {
    let dims = Dims {
        word_dim: 3,
        embed_dim: 4,
        image_dim: 5,
    };
    let mut worst = 0.0f64;
    let mut batches = 0;
    for seed in 0..20u64 {
        let n = 2 + (seed as usize % 7);
        let inst = GradCheckInstance::random(seed, dims, n, 2).map_err(|e| e.to_string())?;
        let zero = inst.params.zeros_like();
        for (mode, labels) in [
            (ObjectiveMode::CombinedDense, Labels::Dense),
            (ObjectiveMode::CombinedMil, Labels::Mil),
        ] {
            for delta in [1.0, 0.25] {
                let cfg = ObjectiveConfig {
                    alpha: 0.0,
                    delta,
                    mode,
                    ..Default::default()
                };
                let v = total_objective(&zero, &inst.table, &inst.pairs(), &cfg, labels).map_err(|e| e.to_string())?;
                let expected_g = 2.0 * n as f64 * (n as f64 - 1.0) * delta;
                worst = worst.max((v.fragment - 1.0).abs()).max((v.global - expected_g).abs());
                batches += 1;
            }
        }
    }
    Ok((
        worst <= 1e-12,
        format!("{batches} batches of 2..8 items, max deviation {worst:.1e} (<= 1e-12)"),
    ))
}

fn criterion_spec() -> SyntheticSpec {
    SyntheticSpec {
        num_items: 250,
        num_concepts: 8,
        fragments_per_image: 5,
        triplets_per_sentence: 3,
        noise_sigma: 0.1,
        seed: 7,
        ..Default::default()
    }
}

fn criterion_config(dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(dir.join("corpus.jsonl"), dir.join("words.txt"), dir);
    cfg.split.test = 50;
    cfg
}

/// Expected R@1 and median rank, with ties broken uniformly at random, for a
/// scorer that knows every fragment's true concept: an image scores a
/// sentence by how many of the sentence's concepts it contains. No learned
/// model can beat this on average, since sentences carry nothing else.
fn concept_oracle(syn: &SyntheticCorpus, test: &[usize]) -> [(f64, f64); 2] {
    let sets: Vec<BTreeSet<usize>> = test
        .iter()
        .map(|&i| syn.fragment_concepts[i].iter().copied().collect())
        .collect();
    let scores = Array2::from_shape_fn((test.len(), test.len()), |(k, l)| {
        syn.triplet_concepts[test[l]]
            .iter()
            .filter(|c| sets[k].contains(c))
            .count() as f64
    });
    let summarize_ties = |rows: Vec<Vec<f64>>| {
        // query q's ground truth sits at index q of its candidate row
        let mut r1 = 0.0;
        let mut mid_ranks: Vec<f64> = rows
            .iter()
            .enumerate()
            .map(|(q, row)| {
                let gt = row[q];
                let above = row.iter().filter(|&&x| x > gt).count() as f64;
                let tied = row.iter().filter(|&&x| x == gt).count() as f64;
                if above == 0.0 {
                    r1 += 1.0 / tied;
                }
                above + (tied + 1.0) / 2.0
            })
            .collect();
        mid_ranks.sort_by(f64::total_cmp);
        let n = mid_ranks.len();
        let median = if n % 2 == 1 {
            mid_ranks[n / 2]
        } else {
            (mid_ranks[n / 2 - 1] + mid_ranks[n / 2]) / 2.0
        };
        (r1 / n as f64, median)
    };
    let annotation = summarize_ties(scores.rows().into_iter().map(|r| r.to_vec()).collect());
    let search = summarize_ties(scores.columns().into_iter().map(|c| c.to_vec()).collect());
    [annotation, search]
}

fn crit_recovery(dir: &Path) -> Outcome {
    let start = Instant::now();
    let syn = generate_synthetic(&criterion_spec()).map_err(|e| e.to_string())?;
    let cfg = criterion_config(dir);
    let reports = train_and_evaluate(&cfg, &syn.corpus, &syn.table).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let split = cfg.split.split(syn.corpus.records.len()).map_err(|e| e.to_string())?;
    let oracle = concept_oracle(&syn, &split.test);
    let ok = reports
        .iter()
        .all(|r| r.recall(1).unwrap() >= 0.5 && r.median_rank <= 2.0)
        && secs < 120.0;
    let fmt = |r: &RetrievalReport| format!("R@1 {:.2} med {}", r.recall(1).unwrap(), r.median_rank);
    Ok((
        ok,
        format!(
            "annotation {}, search {} (need R@1 >= 0.5, med <= 2), {secs:.1} s; \
             ceiling of a perfect concept matcher: annotation R@1 {:.2} med {}, search R@1 {:.2} med {}",
            fmt(&reports[0]),
            fmt(&reports[1]),
            oracle[0].0,
            oracle[0].1,
            oracle[1].0,
            oracle[1].1,
        ),
    ))
}

fn mean_r10(reports: &[RetrievalReport; 2]) -> f64 {
    reports.iter().map(|r| r.recall(10).unwrap()).sum::<f64>() / 2.0
}

fn crit_ablation(dir: &Path) -> Outcome {
    let syn = generate_synthetic(&criterion_spec()).map_err(|e| e.to_string())?;
    let modes = [
        ObjectiveMode::FragmentOnly,
        ObjectiveMode::GlobalOnly,
        ObjectiveMode::CombinedDense,
        ObjectiveMode::CombinedMil,
    ];
    let mut r10 = [0.0f64; 4];
    for seed in 0..3 {
        for (slot, mode) in modes.iter().enumerate() {
            let mut cfg = criterion_config(dir);
            cfg.objective.mode = *mode;
            cfg.train.seed = seed;
            let reports = train_and_evaluate(&cfg, &syn.corpus, &syn.table).map_err(|e| e.to_string())?;
            r10[slot] += mean_r10(&reports) / 3.0;
        }
    }
    let [frag, global, dense, mil] = r10;
    let ok = dense >= frag - 0.02 && dense >= global - 0.02 && mil >= dense - 0.02;
    Ok((
        ok,
        format!("mean R@10 fragment_only {frag:.3}, global_only {global:.3}, combined_dense {dense:.3}, combined_mil {mil:.3}"),
    ))
}

fn crit_reductions() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let words: Vec<String> = ["a", "b", "c", "d"].iter().map(|w| w.to_string()).collect();
    let table = WordTable::random_unit(4, &words, &mut rng).map_err(|e| e.to_string())?;
    let records: Vec<RawRecord> = (0..5)
        .map(|i| RawRecord {
            image_id: format!("r{i}"),
            image_fragments: (0..1 + i % 3)
                .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            sentences: vec![RawSentence {
                tokens: words[..1 + i % 4].to_vec(),
                triplets: Vec::new(),
            }],
        })
        .collect();
    let none = RelationVocab::default();
    let devise = build_fragments(&records, 3, &none, FragmentMode::Devise, &table).map_err(|e| e.to_string())?;
    let single = devise
        .items
        .iter()
        .all(|it| it.image_fragments.len() == 1 && it.sentences.iter().all(|s| s.len() == 1));

    let dims = Dims {
        word_dim: 4,
        embed_dim: 4,
        image_dim: 3,
    };
    let params = ModelParams::init(dims, 0, &mut rng);
    let n = 10.0;
    let dense = dense_scores(&params, &table, &devise, n).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (k, item) in devise.items.iter().enumerate() {
        let v = encode_image_fragment(&params, &item.image_fragments[0]).map_err(|e| e.to_string())?;
        for (l, other) in devise.items.iter().enumerate() {
            let SentenceFragment::Direct(s) = &other.sentences[0][0] else {
                return Err("devise sentence fragment is not a direct vector".into());
            };
            let direct = v.iter().zip(s).map(|(a, b)| a * b).sum::<f64>().max(0.0) / (1.0 + n);
            worst = worst.max((dense.scores[[k, l]] - direct).abs());
        }
    }

    let bow_rec = vec![RawRecord {
        image_id: "bow".into(),
        image_fragments: vec![vec![0.0; 3]],
        sentences: vec![RawSentence {
            tokens: vec!["a".into(), "b".into(), "c".into()],
            triplets: Vec::new(),
        }],
    }];
    let bow = build_fragments(&bow_rec, 3, &none, FragmentMode::Bow, &table).map_err(|e| e.to_string())?;
    let expected: Vec<SentenceFragment> = ["a", "b", "c"]
        .iter()
        .map(|w| SentenceFragment::triplet(0, *w, *w))
        .collect();
    let bow_ok = bow.items[0].sentences[0] == expected && bow.relations.names() == [BOW_RELATION];

    Ok((
        single && worst <= 1e-12 && bow_ok,
        format!(
            "devise one fragment per side: {single}, score vs direct max deviation {worst:.1e} (<= 1e-12); bow (a,a),(b,b),(c,c): {bow_ok}"
        ),
    ))
}

fn crit_oracles() -> Outcome {
    let bags = BagStructure::new(vec![0, 0], vec![0], 1).map_err(|e| e.to_string())?;
    let s = image_sentence_score(&ScoreMatrix(array![[3.0], [-1.0]]), &bags, 0, 0, 10.0).map_err(|e| e.to_string())?;
    let g = global_ranking_loss(&array![[0.5, 0.6], [0.2, 0.9]], 0.2).map_err(|e| e.to_string())?;
    let (ds, dg) = ((s - 3.0 / 22.0).abs(), (g - 0.3).abs());
    Ok((
        ds <= 1e-12 && dg <= 1e-12,
        format!("S = {s:.15} (3/22, dev {ds:.1e}); C_G = {g:.15} (0.3, dev {dg:.1e})"),
    ))
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_fragembed"))
        .args(args)
        .env_remove("FRAGEMBED_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "`{}` failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn crit_determinism(dir: &Path) -> Outcome {
    let p = |name: &str| dir.join(name).to_string_lossy().into_owned();
    cli(&["generate", "--out", &p("data"), "--items", "120", "--seed", "7"])?;
    let files = [
        "run/model.ckpt",
        "run/loss_trace.csv",
        "run/run_config.json",
        "eval/report.txt",
        "eval/report.csv",
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        cli(&[
            "--threads",
            "1",
            "train",
            "--corpus",
            &p("data/corpus.jsonl"),
            "--words",
            &p("data/words.txt"),
            "--out",
            &p("run"),
            "--test-items",
            "30",
            "--epochs",
            "6",
            "--mil-start-epoch",
            "3",
        ])?;
        cli(&[
            "--threads",
            "1",
            "eval",
            "--checkpoint",
            &p("run/model.ckpt"),
            "--out",
            &p("eval"),
        ])?;
        let bytes: Vec<Vec<u8>> = files
            .iter()
            .map(|f| fs::read(dir.join(f)))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        runs.push(bytes);
        fs::remove_dir_all(dir.join("run")).map_err(|e| e.to_string())?;
        fs::remove_dir_all(dir.join("eval")).map_err(|e| e.to_string())?;
    }
    let differing: Vec<&str> = files
        .iter()
        .zip(runs[0].iter().zip(&runs[1]))
        .filter(|(_, (a, b))| a != b)
        .map(|(f, _)| *f)
        .collect();
    Ok((
        differing.is_empty(),
        if differing.is_empty() {
            format!("{} output files byte-identical across two runs", files.len())
        } else {
            format!("differing outputs: {}", differing.join(", "))
        },
    ))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temp dir");
    let recovery_dir = tmp.path().join("recovery");
    let det_dir = tmp.path().join("determinism");
    fs::create_dir_all(&det_dir).expect("temp subdir");

    let criteria: Vec<Criterion<'_>> = vec![
        ("gradient correctness", Box::new(crit_gradients)),
        ("MIL feasibility", Box::new(crit_mil_feasibility)),
        ("zero-parameter closed form", Box::new(crit_zero_closed_form)),
        ("synthetic recovery", Box::new(|| crit_recovery(&recovery_dir))),
        ("ablation trend", Box::new(|| crit_ablation(&recovery_dir))),
        ("baseline reductions", Box::new(crit_reductions)),
        ("score and ranking oracles", Box::new(crit_oracles)),
        ("determinism", Box::new(|| crit_determinism(&det_dir))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        if !ok {
            failed += 1;
        }
        println!("[{}] {}. {name}: {detail}", if ok { "PASS" } else { "FAIL" }, i + 1);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
