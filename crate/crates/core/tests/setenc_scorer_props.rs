mod common;

use common::*;
use proptest::prelude::*;
use radset::rng::rng_for;
use radset::scorer::{rank_by_score, FastScorerTemplate, Scorer, ScorerConfig, CONTEXT_LEN};
use radset::setenc::{tokenize, EncoderConfig, FeatureSet, SetEmbedding, SetEncoder};
use rand::seq::SliceRandom;

proptest! {
    #[test]
    fn encoding_ignores_token_order(seed in any::<u64>(), k in 1usize..8) {
        let t = table();
        let mut rng = rng_for(seed, &[1]);
        let enc = SetEncoder::init(EncoderConfig::for_table(&t, k), &mut rng);
        let z = normals(&mut rng, t.len());
        let set = random_set(&mut rng, t.len(), k);
        let tokens = tokenize(&z, &set, &t).unwrap();
        let mut shuffled = tokens.clone();
        shuffled.shuffle(&mut rng);
        let a = enc.encode_set(&tokens).unwrap();
        let b = enc.encode_set(&shuffled).unwrap();
        prop_assert!(a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn metadata_changes_the_embedding(seed in any::<u64>()) {
        let t = table();
        let mut rng = rng_for(seed, &[2]);
        let enc = SetEncoder::init(EncoderConfig::for_table(&t, 2), &mut rng);
        let z = normals(&mut rng, t.len());
        let mut tokens = tokenize(&z, &random_set(&mut rng, t.len(), 2), &t).unwrap();
        let before = enc.encode_set(&tokens).unwrap();
        tokens[0].roi_id = (tokens[0].roi_id + 1) % t.roi_count();
        prop_assert_ne!(before, enc.encode_set(&tokens).unwrap());
    }

    #[test]
    fn fast_scorer_matches_direct_scoring(seed in any::<u64>(), k in 1usize..6) {
        let t = table();
        let mut rng = rng_for(seed, &[3]);
        let enc = SetEncoder::init(EncoderConfig::for_table(&t, k), &mut rng);
        let scorer = Scorer::init(ScorerConfig::default(), &mut rng);
        let z = normals(&mut rng, t.len());
        let ctx = normals(&mut rng, CONTEXT_LEN);
        let fast = FastScorerTemplate::new(&enc, &scorer, &t).unwrap().for_subject(&scorer, &z, &ctx).unwrap();
        for _ in 0..5 {
            let set = random_set(&mut rng, t.len(), k);
            let direct = scorer.score(&ctx, &enc.encode_set(&tokenize(&z, &set, &t).unwrap()).unwrap()).unwrap();
            prop_assert!((fast.score(&set) - direct).abs() <= 1e-9 * direct.abs().max(1.0));
        }
    }

    #[test]
    fn ranking_survives_positive_affine_maps(
        raw in prop::collection::vec(-1000i32..1000, 1..40),
        scale in prop::sample::select(vec![0.25f64, 0.5, 1.0, 2.0, 8.0]),
        offset in -1000i32..1000,
    ) {
        let sets: Vec<FeatureSet> = (0..raw.len()).map(|i| FeatureSet::new(vec![i]).unwrap()).collect();
        let a: Vec<f64> = raw.iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| scale * v + offset as f64).collect();
        prop_assert_eq!(rank_by_score(&sets, &a), rank_by_score(&sets, &b));
    }

    #[test]
    fn ranking_ignores_input_order(raw in prop::collection::vec(-5i32..5, 1..30), seed in any::<u64>()) {
        let mut items: Vec<(FeatureSet, f64)> =
            raw.iter().enumerate().map(|(i, &v)| (FeatureSet::new(vec![i, 100 + i]).unwrap(), v as f64)).collect();
        let ranked = |items: &[(FeatureSet, f64)]| {
            let sets: Vec<FeatureSet> = items.iter().map(|x| x.0.clone()).collect();
            let scores: Vec<f64> = items.iter().map(|x| x.1).collect();
            rank_by_score(&sets, &scores).into_iter().map(|i| sets[i].clone()).collect::<Vec<_>>()
        };
        let a = ranked(&items);
        items.shuffle(&mut rng_for(seed, &[4]));
        prop_assert_eq!(a, ranked(&items));
    }
}

#[test]
fn zero_scorer_scores_everything_zero() {
    let s = Scorer::zeros(ScorerConfig::default());
    let e = SetEmbedding(vec![1.0; ScorerConfig::default().embed_dim]);
    assert_eq!(s.score(&vec![0.5; CONTEXT_LEN], &e).unwrap(), 0.0);
}
