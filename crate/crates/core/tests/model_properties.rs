use fragembed::model::{encode_batch, encode_image_fragment, encode_sentence_fragment};
use fragembed::{Dims, ImageFragment, ModelParams, Pair, SentenceFragment, WordTable};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIMS: Dims = Dims {
    word_dim: 3,
    embed_dim: 4,
    image_dim: 5,
};

fn setup(seed: u64) -> (ModelParams, WordTable) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words: Vec<String> = ["a", "b", "c", "d"].iter().map(|w| w.to_string()).collect();
    let table = WordTable::random_unit(DIMS.word_dim, &words, &mut rng).unwrap();
    let mut params = ModelParams::init(DIMS, 2, &mut rng);
    for rel in &mut params.relations {
        rel.bias.fill(0.3);
    }
    (params, table)
}

fn features() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, DIMS.image_dim)
}

fn triplet() -> impl Strategy<Value = SentenceFragment> {
    (0usize..2, 0usize..4, 0usize..4).prop_map(|(r, a, b)| {
        let w = ["a", "b", "c", "d"];
        SentenceFragment::triplet(r, w[a], w[b])
    })
}

proptest! {
    #[test]
    fn sentence_encoding_is_nonnegative(seed in any::<u64>(), frag in triplet()) {
        let (params, table) = setup(seed);
        let s = encode_sentence_fragment(&params, &table, &frag).unwrap();
        prop_assert!(s.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn image_encoding_is_linear(seed in any::<u64>(), x in features(), y in features(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (params, _) = setup(seed);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = encode_image_fragment(&params, &ImageFragment::new(mix)).unwrap();
        let ex = encode_image_fragment(&params, &ImageFragment::new(x)).unwrap();
        let ey = encode_image_fragment(&params, &ImageFragment::new(y)).unwrap();
        let rhs = ex * a + ey * b;
        // cancellation makes the exact result small; compare against the size of the terms
        let scale = 1.0 + params.image_proj.iter().map(|w| w.abs()).sum::<f64>() * 30.0 * (a.abs() + b.abs());
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            prop_assert!((l - r).abs() <= 1e-12 * scale, "{l} vs {r}");
        }
    }

    #[test]
    fn fragment_order_only_permutes_rows(
        seed in any::<u64>(),
        images in prop::collection::vec(features(), 1..5),
        sentence in prop::collection::vec(triplet(), 1..5),
    ) {
        let (params, table) = setup(seed);
        let frags: Vec<ImageFragment> = images.into_iter().map(ImageFragment::new).collect();
        let rev_frags: Vec<ImageFragment> = frags.iter().rev().cloned().collect();
        let rev_sentence: Vec<SentenceFragment> = sentence.iter().rev().cloned().collect();
        let a = encode_batch(&params, &table, &[Pair { image: &frags, sentence: &sentence }]).unwrap();
        let b = encode_batch(&params, &table, &[Pair { image: &rev_frags, sentence: &rev_sentence }]).unwrap();
        let (nv, ns) = (frags.len(), sentence.len());
        for i in 0..nv {
            prop_assert_eq!(a.images.row(i), b.images.row(nv - 1 - i));
        }
        for j in 0..ns {
            prop_assert_eq!(a.sentences.row(j), b.sentences.row(ns - 1 - j));
        }
        prop_assert_eq!(a.bags.image_owner(), b.bags.image_owner());
        prop_assert_eq!(a.bags.sentence_owner(), b.bags.sentence_owner());
    }

    #[test]
    fn encoding_is_bitwise_deterministic(seed in any::<u64>(), x in features(), frag in triplet()) {
        let (params, table) = setup(seed);
        let img = [ImageFragment::new(x)];
        let sent = [frag];
        let pair = [Pair { image: &img, sentence: &sent }];
        let a = encode_batch(&params, &table, &pair).unwrap();
        let b = encode_batch(&params, &table, &pair).unwrap();
        prop_assert!(a.images.iter().zip(b.images.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
        prop_assert!(a.sentences.iter().zip(b.sentences.iter()).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
