//! Acceptance criteria 1–11, one PASS/FAIL line each.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use radset::cohort::{
    apply_clones, assign_split, build_cohort, draw_support_query, extract_features, prepare_dataset, CloneSpec,
    CohortConfig, Dataset,
};
use radset::evalkit::{
    baseline_marginal_topk, baseline_random_sets, marginal_relevance, metrics, top_k_indices, HeadConfig,
    MarginalConfig,
};
use radset::probe::{fit_probe_trace, gather_features, probe_reward, ProbeConfig, ProbeParams};
use radset::radiomics::{extract_roi, ExtractConfig, Mask, Volume};
use radset::retrieval::{
    audit_oracle_scorer, audit_subpool, evaluate, gap_statistics, run_training, RetrievalConfig, SelectionResult,
    TrainOptions,
};
use radset::rng::{rng_for, stream};
use radset::setenc::{tokenize, EncoderConfig, SetEncoder};
use rand::seq::SliceRandom;
use serde::Deserialize;

const RADIOMICS_TOL: f64 = 1e-9;
const GRAD_TOL: f64 = 1e-4;
const PROBE_TOL: f64 = 1e-12;
const TAIL_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-9;
const TOP_DECILE: f64 = 0.9;
const DECILE_SHARE: f64 = 0.8;
const RS_SHARE: f64 = 0.8;
const TOPK_SHARE: f64 = 0.7;
const CHANCE_MARGIN: f64 = 0.15;

/// Cohort seed shared by criteria 4–7.
const COHORT_SEED: u64 = 7;
const PLANTED_SEEDS: std::ops::Range<u64> = 100..120;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn radiomics_oracle() -> Outcome {
    #[derive(Deserialize)]
    struct Case {
        dims: [usize; 3],
        voxels: Vec<f64>,
        mask: Vec<u8>,
        bin_count: usize,
        features: Vec<f64>,
    }
    let t0 = Instant::now();
    let cases: Vec<Case> = serde_json::from_str(include_str!("data/radiomics_oracle.json")).unwrap();
    let mut worst: f64 = 0.0;
    for c in &cases {
        let v = Volume::new(c.dims, c.voxels.iter().map(|&x| x as f32).collect()).unwrap();
        let m = Mask::new(c.dims, c.mask.clone()).unwrap();
        let got = extract_roi(&v, &m, &ExtractConfig { bin_count: c.bin_count }).unwrap();
        for (g, w) in got.iter().zip(&c.features) {
            worst = worst.max((g - w).abs() / w.abs().max(1.0));
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        cases.len() == 50 && worst <= RADIOMICS_TOL && secs < 10.0,
        format!(
            "{} regions x 23 features, max rel err {worst:.2e}, {secs:.2} s",
            cases.len()
        ),
    )
}

fn gradients() -> Outcome {
    let t0 = Instant::now();
    let errs = [
        worst_over(100, encoder_gradcheck),
        worst_over(100, scorer_gradcheck),
        worst_over(100, |s| Some(probe_gradcheck(s))),
        worst_over(100, |s| Some(classifier_gradcheck(s))),
    ];
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        errs.iter().all(|&e| e <= GRAD_TOL) && secs < 60.0,
        format!(
            "max rel err encoder {:.1e}, scorer {:.1e}, probe {:.1e}, classifier {:.1e} at 100 points each, {secs:.2} s",
            errs[0], errs[1], errs[2], errs[3]
        ),
    )
}

fn permutation_invariance() -> Outcome {
    let t0 = Instant::now();
    let t = table();
    let mut rng = rng_for(3, &[0]);
    let mut equal = 0;
    for i in 0..1000 {
        let k = 1 + i % 25;
        let enc = SetEncoder::init(EncoderConfig::for_table(&t, k), &mut rng);
        let z = normals(&mut rng, t.len());
        let tokens = tokenize(&z, &random_set(&mut rng, t.len(), k), &t).unwrap();
        let mut shuffled = tokens.clone();
        shuffled.shuffle(&mut rng);
        let a = enc.encode_set(&tokens).unwrap();
        let b = enc.encode_set(&shuffled).unwrap();
        equal += a.0.iter().zip(&b.0).all(|(x, y)| x.to_bits() == y.to_bits()) as usize;
    }
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        equal == 1000 && secs < 5.0,
        format!("{equal}/1000 pairs bitwise equal, {secs:.2} s"),
    )
}

fn probe_exactness(ds: &Dataset) -> Outcome {
    let mut rng = rng_for(4, &[0]);
    let ln_c = (ds.classes as f64).ln();
    let mut worst: f64 = 0.0;
    let mut monotone = 0;
    for i in 0..50u64 {
        let set = random_set(&mut rng, ds.feature_count(), 1 + (i as usize) % 25);
        let (sup, qry) = draw_support_query(&ds.train, &ds.labels, 24, 24, i).unwrap();
        let ys: Vec<usize> = sup.iter().map(|&j| ds.labels[j]).collect();
        let yq: Vec<usize> = qry.iter().map(|&j| ds.labels[j]).collect();
        let xs = gather_features(&ds.z, &sup, &set);
        let xq = gather_features(&ds.z, &qry, &set);
        let r0 = probe_reward(&ProbeParams::zeros(set.len(), ds.classes), &xq, &yq).unwrap();
        worst = worst.max((r0 + ln_c).abs());
        let (_, trace) = fit_probe_trace(&xs, set.len(), &ys, ds.classes, &ProbeConfig::default()).unwrap();
        monotone += trace.windows(2).all(|w| w[1] <= w[0]) as usize;
    }
    outcome(
        worst <= PROBE_TOL && monotone == 50,
        format!("|R0 + ln C| max {worst:.1e}; monotone descent on {monotone}/50 instances"),
    )
}

fn oracle_equivalence(ds: &Dataset) -> Outcome {
    let t0 = Instant::now();
    let relevance = marginal_relevance(
        ds,
        &MarginalConfig {
            seed: COHORT_SEED,
            ..MarginalConfig::default()
        },
    )
    .unwrap();
    let mut universe = top_k_indices(&relevance, 10);
    universe.sort_unstable();
    let config = RetrievalConfig {
        k: 3,
        p0: 120,
        pool_m: 120,
        seed: COHORT_SEED,
        ..RetrievalConfig::default()
    };
    let subjects: Vec<usize> = (0..ds.len()).collect();
    let gaps = audit_oracle_scorer(ds, &subjects, &universe, &config, 4).unwrap();
    let zero = gaps.iter().filter(|g| g.gap == 0.0 && g.rewards.len() == 120).count();
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        zero == subjects.len() && secs < 30.0,
        format!(
            "gap 0 for {zero}/{} subjects over 120 sets, {secs:.2} s",
            subjects.len()
        ),
    )
}

/// Top-8 relevant features plus 7 random others.
fn audit_subpool_indices(ds: &Dataset) -> Vec<usize> {
    let relevance = marginal_relevance(
        ds,
        &MarginalConfig {
            seed: COHORT_SEED,
            ..MarginalConfig::default()
        },
    )
    .unwrap();
    let top = top_k_indices(&relevance, 8);
    let mut rest: Vec<usize> = (0..ds.feature_count()).filter(|i| !top.contains(i)).collect();
    rest.shuffle(&mut rng_for(COHORT_SEED, &[stream::SUBPOOL]));
    let mut sub: Vec<usize> = top.into_iter().chain(rest[..7].iter().copied()).collect();
    sub.sort_unstable();
    sub
}

fn learned_retrieval(ds: &Dataset) -> (Outcome, Vec<Vec<f64>>) {
    let t0 = Instant::now();
    let subpool = audit_subpool_indices(ds);
    let mut per_subject: Vec<Vec<f64>> = vec![Vec::new(); ds.validation.len()];
    let mut gap_lists = Vec::new();
    for seed in [1u64, 2, 3] {
        let config = RetrievalConfig {
            seed,
            k: 3,
            p0: 455,
            pool_m: 455,
            lambda_scr: 100.0,
            subpool: Some(subpool.clone()),
            ..RetrievalConfig::default()
        };
        let (bundle, _) = run_training(ds, &config, TrainOptions::default()).unwrap();
        let rows = audit_subpool(&bundle, ds, &ds.validation, 4).unwrap();
        for (p, r) in per_subject.iter_mut().zip(&rows) {
            p.push(r.percentile);
        }
        gap_lists.push(rows.iter().map(|r| r.gap).collect());
    }
    let hits = per_subject
        .iter()
        .filter(|p| {
            let mut p = p.to_vec();
            p.sort_by(f64::total_cmp);
            p[1] >= TOP_DECILE
        })
        .count();
    let share = hits as f64 / per_subject.len() as f64;
    let secs = t0.elapsed().as_secs_f64();
    (
        outcome(
            share >= DECILE_SHARE && secs < 900.0,
            format!(
                "{hits}/{} validation subjects with median percentile >= {TOP_DECILE} over seeds 1-3 ({share:.3}), {secs:.0} s",
                per_subject.len()
            ),
        ),
        gap_lists,
    )
}

fn tail_identity(gap_lists: &[Vec<f64>]) -> Outcome {
    let worst = gap_lists
        .iter()
        .map(|g| {
            let s = gap_statistics(g).unwrap();
            (s.mean - s.tail_integral).abs()
        })
        .fold(0.0, f64::max);
    outcome(
        worst <= TAIL_TOL && !gap_lists.is_empty(),
        format!(
            "max |mean - tail integral| {worst:.1e} over {} gap lists",
            gap_lists.len()
        ),
    )
}

fn dataset_with(config: CohortConfig, clones: bool) -> Dataset {
    let seed = config.seed;
    let mut c = build_cohort(&config).unwrap();
    extract_features(&mut c, &ExtractConfig::default()).unwrap();
    if clones {
        let spec = CloneSpec::for_table(c.manifest.descriptors.as_ref().unwrap(), seed).unwrap();
        apply_clones(&mut c, &spec).unwrap();
    }
    assign_split(&mut c, (0.8, 0.2), seed).unwrap();
    prepare_dataset(&mut c).unwrap()
}

fn planted_config(seed: u64, k: usize) -> RetrievalConfig {
    RetrievalConfig {
        seed,
        k,
        stage1_epochs: if k > 3 { 50 } else { 20 },
        stage2_epochs: 40,
        p0: 1000,
        pool_m: 200,
        ..RetrievalConfig::default()
    }
}

fn directional() -> Outcome {
    let t0 = Instant::now();
    let n = PLANTED_SEEDS.end - PLANTED_SEEDS.start;
    let (mut beats_rs, mut beats_topk, mut above_chance) = (0, 0, 0);
    for seed in PLANTED_SEEDS {
        let d = dataset_with(CohortConfig::desk(seed), false);
        let (m, _) = run_training(&d, &planted_config(seed, 25), TrainOptions::default()).unwrap();
        let ours = evaluate(&m, &d, &d.validation).unwrap().0.metrics.balanced_accuracy;
        let rs = baseline_random_sets(&m, &d, seed, &HeadConfig::default())
            .unwrap()
            .metrics
            .balanced_accuracy;

        let dc = dataset_with(CohortConfig::clone_benchmark(seed), true);
        let (mc, _) = run_training(&dc, &planted_config(seed, 3), TrainOptions::default()).unwrap();
        let ours_k3 = evaluate(&mc, &dc, &dc.validation).unwrap().0.metrics.balanced_accuracy;
        let marginal = MarginalConfig {
            seed,
            ..MarginalConfig::default()
        };
        let topk = baseline_marginal_topk(&dc, 3, &marginal, &HeadConfig::default())
            .unwrap()
            .0
            .metrics
            .balanced_accuracy;

        beats_rs += (ours >= rs) as u64;
        beats_topk += (ours_k3 >= topk) as u64;
        above_chance += (ours >= 1.0 / d.classes as f64 + CHANCE_MARGIN) as u64;
        println!("    seed {seed}: ours {ours:.3} rs {rs:.3} | clone ours {ours_k3:.3} top-k {topk:.3}");
    }
    let share = |x: u64| x as f64 / n as f64;
    let secs = t0.elapsed().as_secs_f64();
    outcome(
        share(beats_rs) >= RS_SHARE && share(beats_topk) >= TOPK_SHARE && above_chance == n && secs < 1800.0,
        format!(
            "(a) ours >= RS in {beats_rs}/{n}; (b) ours >= top-k in {beats_topk}/{n}; (c) BAcc >= 1/C + {CHANCE_MARGIN} in {above_chance}/{n}; {secs:.0} s"
        ),
    )
}

fn ensembling() -> Outcome {
    let ds = dataset_with(CohortConfig::desk(9), false);
    let config = RetrievalConfig {
        seed: 9,
        k: 5,
        p0: 500,
        pool_m: 100,
        stage1_epochs: 5,
        stage2_epochs: 3,
        ..RetrievalConfig::default()
    };
    let (bundle, _) = run_training(&ds, &config, TrainOptions::default()).unwrap();
    let subjects: Vec<usize> = (0..100).collect();
    let picks = bundle.select(&ds, &subjects).unwrap();
    let mut same = 0;
    for (&i, (_, sel)) in subjects.iter().zip(&picks) {
        let single = bundle
            .classifier
            .classify(&bundle.embed(ds.z.row(i), &sel.s_star).unwrap())
            .unwrap();
        let tripled = SelectionResult {
            ensemble_sets: vec![sel.s_star.clone(); 3],
            ..sel.clone()
        };
        same += (bundle.predict(ds.z.row(i), &tripled).unwrap().class == single.class) as usize;
    }
    outcome(
        same == 100,
        format!("prediction unchanged for {same}/100 subjects with three identical sets"),
    )
}

fn metric_oracle() -> Outcome {
    #[derive(Deserialize)]
    struct Expected {
        accuracy: f64,
        macro_f1: f64,
        balanced_accuracy: f64,
        auc_macro_ovr: Option<f64>,
        qwk: f64,
    }
    #[derive(Deserialize)]
    struct Case {
        labels: Vec<usize>,
        predictions: Vec<usize>,
        probabilities: Vec<Vec<f64>>,
        classes: usize,
        expected: Expected,
    }
    let cases: Vec<Case> = serde_json::from_str(include_str!("data/metrics_oracle.json")).unwrap();
    let mut worst: f64 = 0.0;
    let mut auc_agrees = true;
    for c in &cases {
        let (m, _) = metrics(&c.labels, &c.predictions, &c.probabilities, c.classes).unwrap();
        let e = &c.expected;
        for (a, b) in [
            (m.accuracy, e.accuracy),
            (m.macro_f1, e.macro_f1),
            (m.balanced_accuracy, e.balanced_accuracy),
            (m.qwk, e.qwk),
        ] {
            worst = worst.max((a - b).abs());
        }
        match (m.auc_macro_ovr, e.auc_macro_ovr) {
            (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
            (None, None) => {}
            _ => auc_agrees = false,
        }
    }
    let labels = [0, 1, 2, 2, 1, 0];
    let perfect = metrics(&labels, &labels, &vec![vec![1.0 / 3.0; 3]; 6], 3)
        .unwrap()
        .0
        .qwk;
    outcome(
        cases.len() == 25 && worst <= METRIC_TOL && auc_agrees && perfect == 1.0,
        format!(
            "{} cases, max abs err {worst:.1e}; QWK of perfect agreement {perfect}",
            cases.len()
        ),
    )
}

fn determinism() -> Outcome {
    let run = || {
        let d = dataset_with(CohortConfig::desk(11), false);
        let (m, _) = run_training(&d, &planted_config(11, 25), TrainOptions::default()).unwrap();
        evaluate(&m, &d, &d.validation).unwrap()
    };
    let (ra, sa) = run();
    let (rb, sb) = run();
    let same_sets = sa.iter().zip(&sb).filter(|(a, b)| a.s_star == b.s_star).count();
    outcome(
        ra == rb && sa.len() == sb.len() && same_sets == sa.len(),
        format!(
            "EvalReports {}; S* identical for {same_sets}/{} subjects",
            if ra == rb { "identical" } else { "differ" },
            sa.len()
        ),
    )
}

fn report(n: usize, name: &str, o: &Outcome, failures: &mut usize) {
    *failures += !o.pass as usize;
    println!(
        "criterion {n:>2} {} {name}: {}",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail
    );
}

fn main() -> ExitCode {
    let mut failures = 0;
    let f = &mut failures;
    report(1, "radiomics oracle", &radiomics_oracle(), f);
    report(2, "gradient integrity", &gradients(), f);
    report(3, "permutation invariance", &permutation_invariance(), f);
    let ds = dataset(COHORT_SEED);
    report(4, "probe exactness", &probe_exactness(&ds), f);
    report(5, "retrieval-oracle equivalence", &oracle_equivalence(&ds), f);
    let (c6, gaps) = learned_retrieval(&ds);
    report(6, "learned retrieval quality", &c6, f);
    report(7, "tail-integral identity", &tail_identity(&gaps), f);
    report(8, "directional reproduction", &directional(), f);
    report(9, "ensembling contract", &ensembling(), f);
    report(10, "metric oracles", &metric_oracle(), f);
    report(11, "end-to-end determinism", &determinism(), f);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failures} criteria failed");
        ExitCode::FAILURE
    }
}
