//! End-to-end training on synthetic corpora whose sentences name every
//! object in their image, so each image-sentence pair is identifiable.

use fragembed::commands::{fit, prepare_with};
use fragembed::config::RunConfig;
use fragembed::data::{generate_synthetic, SyntheticSpec};
use fragembed::eval::evaluate;
use fragembed::model::encode_batch;
use fragembed::objective::score_matrix;
use fragembed::{ObjectiveMode, Pair};

#[test]
fn identifiable_corpus_is_recovered() {
    let syn = generate_synthetic(&SyntheticSpec {
        num_concepts: 20,
        triplets_per_sentence: 5,
        ..Default::default()
    })
    .unwrap();
    let mut cfg = RunConfig::new("unused.jsonl", "unused.txt", "unused");
    cfg.split.test = 50;
    assert_eq!(cfg.objective.mode, ObjectiveMode::CombinedMil);

    let prepared = prepare_with(&cfg, &syn.corpus, syn.table.clone(), None).unwrap();
    let test = prepared.test.as_ref().unwrap();
    let outcome = fit(&cfg, &prepared).unwrap();
    let reports = evaluate(
        &outcome.params,
        &prepared.table,
        test,
        cfg.objective.smoothing_n,
        &[1, 5, 10],
    )
    .unwrap();
    for r in &reports {
        assert!(r.recall(1).unwrap() >= 0.5, "{r:?}");
        assert!(r.median_rank <= 2.0, "{r:?}");
    }

    // the best-scoring image fragment for each triplet should be the planted one
    let split = cfg.split.split(syn.corpus.records.len()).unwrap();
    let (mut hits, mut total) = (0usize, 0usize);
    for (item, &orig) in test.items.iter().zip(&split.test) {
        let batch = encode_batch(&outcome.params, &prepared.table, &[Pair::new(item, 0)]).unwrap();
        let k = score_matrix(batch.images.view(), batch.sentences.view()).unwrap();
        for row in syn.alignment.iter().filter(|r| r.item == orig) {
            let col = k.0.column(row.triplet_index);
            let best = (0..col.len()).max_by(|&a, &b| col[a].total_cmp(&col[b])).unwrap();
            hits += usize::from(best == row.fragment_index);
            total += 1;
        }
    }
    let accuracy = hits as f64 / total as f64;
    assert!(accuracy >= 0.8, "fragment alignment accuracy {accuracy}");
}
