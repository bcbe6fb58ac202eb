use fragembed::data::{build_fragments, generate_synthetic, prune_relations, FragmentMode, SyntheticSpec};
use fragembed::gradcheck::GradCheckInstance;
use fragembed::objective::objective_gradients;
use fragembed::optim::{sgd_step, train, OptimizerState};
use fragembed::{Corpus, Dims, Labels, ModelParams, ObjectiveConfig, ObjectiveMode, TrainConfig, WordTable};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIMS: Dims = Dims {
    word_dim: 4,
    embed_dim: 5,
    image_dim: 6,
};

fn shapes(p: &ModelParams) -> Vec<(String, usize)> {
    p.tensors().into_iter().map(|(n, t)| (n, t.len())).collect()
}

/// Losses over `steps` full-batch updates, including the starting value.
fn descend(seed: u64, mode: ObjectiveMode, labels: Labels<'_>, steps: usize) -> Vec<f64> {
    let inst = GradCheckInstance::random(seed, DIMS, 6, 2).unwrap();
    let cfg = ObjectiveConfig {
        mode,
        ..Default::default()
    };
    let pairs = inst.pairs();
    let mut params = inst.params.clone();
    let mut state = OptimizerState::new(&params);
    let mut losses = Vec::with_capacity(steps + 1);
    for _ in 0..steps {
        let (value, grads) = objective_gradients(&params, &inst.table, &pairs, &cfg, labels).unwrap();
        losses.push(value.total);
        sgd_step(&mut params, &grads, &mut state, 1e-3, 0.9).unwrap();
        assert_eq!(shapes(&state.velocity), shapes(&params));
    }
    let (value, _) = objective_gradients(&params, &inst.table, &pairs, &cfg, labels).unwrap();
    losses.push(value.total);
    losses
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dense_descent_is_nearly_monotone(seed in any::<u64>(), combined in any::<bool>()) {
        let mode = if combined { ObjectiveMode::CombinedDense } else { ObjectiveMode::FragmentOnly };
        let losses = descend(seed, mode, Labels::Dense, 50);
        let rises = losses.windows(2).filter(|w| w[1] > w[0] + 1e-12).count();
        prop_assert!(rises * 20 <= 50, "{rises} rising steps: {losses:?}");
    }

    #[test]
    fn mil_descent_ends_lower(seed in any::<u64>()) {
        let losses = descend(seed, ObjectiveMode::CombinedMil, Labels::Mil, 50);
        prop_assert!(losses.last().unwrap() < losses.first().unwrap(), "{losses:?}");
    }
}

fn small_corpus() -> (Corpus, WordTable) {
    let syn = generate_synthetic(&SyntheticSpec {
        num_items: 40,
        ..Default::default()
    })
    .unwrap();
    let pruned = prune_relations(&syn.corpus.records, 0.0).unwrap();
    let corpus = build_fragments(
        &pruned.records,
        syn.corpus.dims.image_dim,
        &pruned.vocab,
        FragmentMode::Triplets,
        &syn.table,
    )
    .unwrap();
    (corpus, syn.table)
}

fn run(corpus: &Corpus, table: &WordTable, seed: u64) -> fragembed::optim::TrainOutcome {
    let cfg = TrainConfig {
        epochs: 4,
        batch_size: 16,
        mil_start_epoch: 2,
        anneal_last_epochs: 1,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dims = Dims {
        word_dim: table.dim(),
        embed_dim: 8,
        image_dim: corpus.image_dim,
    };
    let params = ModelParams::init(dims, corpus.relations.len(), &mut rng);
    train(corpus, table, params, &cfg, &ObjectiveConfig::default(), &mut rng).unwrap()
}

#[test]
fn training_is_reproducible_and_leaves_words_alone() {
    let (corpus, table) = small_corpus();
    let before = table.clone();
    let a = run(&corpus, &table, 3);
    let b = run(&corpus, &table, 3);
    assert_eq!(table, before);
    let bits = |o: &fragembed::optim::TrainOutcome| -> Vec<u64> {
        o.params
            .tensors()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|x| x.to_bits()))
            .collect()
    };
    assert_eq!(bits(&a), bits(&b));
    assert_eq!(a.trace, b.trace);
    assert_eq!(shapes(&a.state.velocity), shapes(&a.params));
    let c = run(&corpus, &table, 4);
    assert_ne!(bits(&a), bits(&c));
}
