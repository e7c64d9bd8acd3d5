#![allow(dead_code)]

use radset::cohort::{assign_split, build_cohort, extract_features, prepare_dataset, CohortConfig, Dataset};
use radset::evalkit::Classifier;
use radset::numkit::{collect_grads, finite_difference_check, DenseTensor, ParamSet, Tape};
use radset::probe::{probe_loss_grad, ProbeParams};
use radset::radiomics::{DescriptorTable, ExtractConfig};
use radset::rng::{rng_for, Rng};
use radset::scorer::{Scorer, ScorerConfig, CONTEXT_LEN};
use radset::setenc::{EncoderConfig, FeatureSet, SetEncoder, TokenBatch};
use rand::seq::SliceRandom;
use rand::Rng as _;

pub const GRAD_EPS: f64 = 1e-6;
pub const GRAD_COORDS: usize = 20;
/// Smallest |ReLU pre-activation| accepted at a check point.
pub const KINK_MARGIN: f64 = 1e-3;

pub fn table() -> DescriptorTable {
    let rois: Vec<String> = (0..9).map(|i| format!("roi{i}")).collect();
    DescriptorTable::for_rois(&rois)
}

pub fn dataset(seed: u64) -> Dataset {
    let mut c = build_cohort(&CohortConfig::desk(seed)).unwrap();
    extract_features(&mut c, &ExtractConfig::default()).unwrap();
    assign_split(&mut c, (0.8, 0.2), seed).unwrap();
    prepare_dataset(&mut c).unwrap()
}

pub fn normals(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()
}

pub fn random_set(rng: &mut Rng, f: usize, k: usize) -> FeatureSet {
    let mut idx: Vec<usize> = (0..f).collect();
    idx.shuffle(rng);
    FeatureSet::from_unsorted(idx[..k].to_vec()).unwrap()
}

/// Gradient check of the set encoder under an MSE loss on two sets'
/// embeddings. `None` when the draw sits within [`KINK_MARGIN`] of a ReLU kink.
pub fn encoder_gradcheck(seed: u64) -> Option<f64> {
    let mut rng = rng_for(seed, &[101]);
    let t = table();
    let k = rng.gen_range(1..=5);
    let config = EncoderConfig {
        hidden: 16,
        out_dim: 8,
        ..EncoderConfig::for_table(&t, k)
    };
    let enc = SetEncoder::init(config, &mut rng);
    let z = normals(&mut rng, t.len());
    let sets = [random_set(&mut rng, t.len(), k), random_set(&mut rng, t.len(), k)];
    let batch = TokenBatch::new(&z, &[&sets[0], &sets[1]], &t).unwrap();
    let target = normals(&mut rng, 2 * config.out_dim);
    let eval = |p: &ParamSet| {
        let e = SetEncoder::with_params(config, p.clone())?;
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, true);
        let out = e.encode_on_tape(&mut tape, &vars, &batch)?;
        let loss = tape.mse(out, &target)?;
        let g = tape.backward(loss)?;
        Ok((
            tape.value(loss).item(),
            collect_grads(&g, &vars),
            tape.min_relu_margin(),
        ))
    };
    let (_, _, margin) = eval(&enc.params).unwrap();
    if margin < KINK_MARGIN {
        return None;
    }
    Some(
        finite_difference_check(
            |p| eval(p).map(|(v, g, _)| (v, g)),
            &enc.params,
            GRAD_EPS,
            GRAD_COORDS,
            seed,
        )
        .unwrap(),
    )
}

/// Gradient check of the scorer on three embeddings against one context.
pub fn scorer_gradcheck(seed: u64) -> Option<f64> {
    let mut rng = rng_for(seed, &[102]);
    let config = ScorerConfig {
        context_proj: 8,
        embed_dim: 6,
        hidden: 12,
        ..ScorerConfig::default()
    };
    let scorer = Scorer::init(config, &mut rng);
    let context = DenseTensor::matrix(1, CONTEXT_LEN, normals(&mut rng, CONTEXT_LEN)).unwrap();
    let emb = DenseTensor::matrix(3, config.embed_dim, normals(&mut rng, 3 * config.embed_dim)).unwrap();
    let target = normals(&mut rng, 3);
    let eval = |p: &ParamSet| {
        let s = Scorer::with_params(config, p.clone())?;
        let mut tape = Tape::new();
        let vars = p.bind(&mut tape, true);
        let c = tape.constant(context.clone());
        let e = tape.constant(emb.clone());
        let out = s.score_on_tape(&mut tape, &vars, c, e)?;
        let loss = tape.mse(out, &target)?;
        let g = tape.backward(loss)?;
        Ok((
            tape.value(loss).item(),
            collect_grads(&g, &vars),
            tape.min_relu_margin(),
        ))
    };
    let (_, _, margin) = eval(&scorer.params).unwrap();
    if margin < KINK_MARGIN {
        return None;
    }
    Some(
        finite_difference_check(
            |p| eval(p).map(|(v, g, _)| (v, g)),
            &scorer.params,
            GRAD_EPS,
            GRAD_COORDS,
            seed,
        )
        .unwrap(),
    )
}

/// Gradient check of the probe's mean support cross-entropy in `(W, b)`.
pub fn probe_gradcheck(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[103]);
    let k = rng.gen_range(1..=6);
    let c = rng.gen_range(2..=5);
    let n = rng.gen_range(c..=20);
    let x = normals(&mut rng, n * k);
    let labels: Vec<usize> = (0..n).map(|i| if i < c { i } else { rng.gen_range(0..c) }).collect();
    let mut params = ParamSet::new();
    params.push("w", DenseTensor::matrix(k, c, normals(&mut rng, k * c)).unwrap());
    params.push("b", DenseTensor::row(normals(&mut rng, c)));
    finite_difference_check(
        |p| {
            let probe = ProbeParams {
                k,
                classes: c,
                w: p.get(0).data().to_vec(),
                b: p.get(1).data().to_vec(),
            };
            let mut gw = vec![0.0; k * c];
            let mut gb = vec![0.0; c];
            let loss = probe_loss_grad(&probe, &x, &labels, Some((&mut gw, &mut gb)));
            Ok((loss, vec![DenseTensor::matrix(k, c, gw)?, DenseTensor::row(gb)]))
        },
        &params,
        GRAD_EPS,
        GRAD_COORDS,
        seed,
    )
    .unwrap()
}

/// Gradient check of the linear classifier under softmax cross-entropy.
pub fn classifier_gradcheck(seed: u64) -> f64 {
    let mut rng = rng_for(seed, &[104]);
    let dim = rng.gen_range(2..=10);
    let c = rng.gen_range(2..=5);
    let n = rng.gen_range(1..=8);
    let x = DenseTensor::matrix(n, dim, normals(&mut rng, n * dim)).unwrap();
    let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..c)).collect();
    let mut params = ParamSet::new();
    params.push(
        "cls.w",
        DenseTensor::matrix(dim, c, normals(&mut rng, dim * c)).unwrap(),
    );
    params.push("cls.b", DenseTensor::new(vec![c], normals(&mut rng, c)).unwrap());
    let params = Classifier::with_params(dim, c, params).unwrap().params;
    finite_difference_check(
        |p| {
            let cls = Classifier::with_params(dim, c, p.clone())?;
            let mut tape = Tape::new();
            let vars = p.bind(&mut tape, true);
            let xv = tape.constant(x.clone());
            let logits = cls.logits_on_tape(&mut tape, &vars, xv)?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            let g = tape.backward(loss)?;
            Ok((tape.value(loss).item(), collect_grads(&g, &vars)))
        },
        &params,
        GRAD_EPS,
        GRAD_COORDS,
        seed,
    )
    .unwrap()
}

/// Worst error over the first `points` non-kink draws.
pub fn worst_over(points: usize, mut check: impl FnMut(u64) -> Option<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    let mut taken = 0;
    let mut seed = 0;
    while taken < points {
        if let Some(e) = check(seed) {
            worst = worst.max(e);
            taken += 1;
        }
        seed += 1;
        assert!(seed < 100 * points as u64, "too few non-kink points");
    }
    worst
}
