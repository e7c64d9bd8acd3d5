use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use radset::cohort::{
    assign_split, build_cohort, extract_features, load_cohort, prepare_dataset, save_cohort, Cohort, CohortConfig,
    Dataset, PlantSpec,
};
use radset::evalkit::plots::{
    read_candidate_scores, score_histogram, write_candidate_scores, write_histogram_csv, write_roi_counts_csv,
    write_training_curves_csv, CandidateScores,
};
use radset::evalkit::{
    baseline_all_radiomics, baseline_marginal_topk, baseline_random_sets, marginal_relevance, top_k_indices,
    write_confusion_csv, write_eval_report, write_predictions_csv, EvalReport, EvidenceReport, HeadConfig,
    MarginalConfig,
};
use radset::radiomics::{DescriptorTable, ExtractConfig, FeatureVector};
use radset::retrieval::{
    audit_oracle_scorer, audit_subpool, binomial, evaluate, gap_statistics, load_train_state, read_history,
    run_training, write_gap_csv, write_reward_list_csv, ModelBundle, SelectionResult, TrainOptions,
};
use radset::setenc::FeatureSet;
use serde::Serialize;

use crate::config::FileConfig;
use crate::{
    Cli, Command, EvalArgs, ExportArgs, ExtractArgs, GenArgs, OracleArgs, ReportArgs, RetrieveArgs, SplitChoice,
    TrainArgs,
};

const SELECTIONS: &str = "selections.json";
const CANDIDATE_SCORES: &str = "candidate_scores.jsonl";

pub fn run(cli: Cli) -> Result<()> {
    let mut config = FileConfig::load(cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = Some(seed);
        config.retrieval.seed = seed;
    }
    match cli.command {
        Command::Gen(a) => gen(&config, a),
        Command::Extract(a) => extract(&config, a),
        Command::Train(a) => train(config, a),
        Command::Retrieve(a) => retrieve(a),
        Command::Eval(a) => eval(&config, a),
        Command::Oracle(a) => oracle(config, a),
        Command::Report(a) => report(a),
        Command::ExportPlots(a) => export_plots(&config, a),
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(
        fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn with_file<F>(path: &Path, f: F) -> Result<()>
where
    F: FnOnce(&mut BufWriter<fs::File>) -> radset::Result<()>,
{
    let mut w = create(path)?;
    f(&mut w).with_context(|| format!("writing {}", path.display()))?;
    w.flush()?;
    Ok(())
}

fn open(path: &Path) -> Result<BufReader<fs::File>> {
    Ok(BufReader::new(
        fs::File::open(path).with_context(|| format!("missing input {}", path.display()))?,
    ))
}

fn load_dataset(dir: &Path) -> Result<(Cohort, Dataset)> {
    let mut cohort = load_cohort(dir).with_context(|| format!("loading cohort {}", dir.display()))?;
    let ds = prepare_dataset(&mut cohort)
        .with_context(|| format!("cohort {} is not ready; run `radset extract` first", dir.display()))?;
    Ok((cohort, ds))
}

fn load_model(run: &Path, ds: &Dataset) -> Result<ModelBundle> {
    let bundle = ModelBundle::load(run).with_context(|| format!("loading model from {}", run.display()))?;
    ensure!(
        bundle.table == ds.table && bundle.feature_stats == ds.stats,
        "model in {} was trained on a different cohort or split",
        run.display()
    );
    Ok(bundle)
}

fn subjects_of(ds: &Dataset, split: SplitChoice) -> Vec<usize> {
    match split {
        SplitChoice::Train => ds.train.clone(),
        SplitChoice::Validation => ds.validation.clone(),
        SplitChoice::All => (0..ds.len()).collect(),
    }
}

fn gen(config: &FileConfig, a: GenArgs) -> Result<()> {
    let g = &config.gen;
    let classes = a.classes.unwrap_or(g.classes);
    let scale = a.signal_scale.unwrap_or(g.signal_scale);
    let cohort_config = CohortConfig {
        subjects: a.subjects.unwrap_or(g.subjects),
        dims: a.dims.unwrap_or(g.dims),
        classes,
        plants: PlantSpec::default_for(classes).scaled(scale),
        seed: config.seed.unwrap_or(0),
    };
    let cohort = build_cohort(&cohort_config)?;
    save_cohort(&a.out, &cohort)?;
    eprintln!(
        "wrote {} subjects ({} classes, dims {:?}) to {}",
        cohort.records.len(),
        classes,
        cohort_config.dims,
        a.out.display()
    );
    Ok(())
}

fn extract(config: &FileConfig, a: ExtractArgs) -> Result<()> {
    let mut cohort = load_cohort(&a.cohort).with_context(|| format!("loading cohort {}", a.cohort.display()))?;
    let bin_count = a.bin_count.unwrap_or(config.extract.bin_count);
    extract_features(&mut cohort, &ExtractConfig { bin_count })?;
    let frac = a.train_fraction.unwrap_or(config.extract.train_fraction);
    ensure!((0.0..=1.0).contains(&frac), "train fraction must lie in [0, 1]");
    let seed = config.seed.unwrap_or(cohort.manifest.seed);
    assign_split(&mut cohort, (frac, 1.0 - frac), seed)?;
    prepare_dataset(&mut cohort)?;
    radset::cohort::io::save_features(&a.cohort, cohort.features.as_deref().unwrap_or_default())?;
    radset::cohort::io::save_manifest(&a.cohort, &cohort.manifest)?;
    eprintln!(
        "extracted {} features for {} subjects into {}",
        cohort.manifest.feature_count.unwrap_or(0),
        cohort.records.len(),
        a.cohort.display()
    );
    Ok(())
}

fn train(mut config: FileConfig, a: TrainArgs) -> Result<()> {
    let r = &mut config.retrieval;
    let f = &a.retrieval;
    r.k = f.k.unwrap_or(r.k);
    r.p0 = f.p0.unwrap_or(r.p0);
    r.pool_m = f.pool_m.unwrap_or(r.pool_m);
    r.q = f.q.unwrap_or(r.q);
    r.probe.steps = f.psteps.unwrap_or(r.probe.steps);
    r.lambda_scr = f.lambda_scr.unwrap_or(r.lambda_scr);
    r.stage1_epochs = a.stage1_epochs.unwrap_or(r.stage1_epochs);
    r.stage2_epochs = a.stage2_epochs.unwrap_or(r.stage2_epochs);
    let (_, ds) = load_dataset(&a.cohort)?;
    let resume = if a.resume {
        let path = ["stage2.ckpt", "stage1.ckpt"]
            .iter()
            .map(|n| a.out.join(n))
            .find(|p| p.exists());
        match path {
            Some(p) => Some(load_train_state(&p, &ds, r)?),
            None => bail!("no checkpoint to resume in {}", a.out.display()),
        }
    } else {
        None
    };
    let (_, history) = run_training(
        &ds,
        r,
        TrainOptions {
            out_dir: Some(a.out.clone()),
            resume,
        },
    )?;
    if let Some(last) = history.last() {
        eprintln!(
            "trained {} epochs; final L_scr {:.5}, mean reward {:.4}; model in {}",
            history.len(),
            last.l_scr,
            last.mean_reward,
            a.out.display()
        );
    }
    Ok(())
}

fn retrieve(a: RetrieveArgs) -> Result<()> {
    let (_, ds) = load_dataset(&a.cohort)?;
    let mut bundle = load_model(&a.run, &ds)?;
    bundle.config.p0 = a.p0.unwrap_or(bundle.config.p0);
    bundle.config.pool_m = a.pool_m.unwrap_or(bundle.config.pool_m);
    bundle.config.validate(ds.feature_count())?;
    let subjects = subjects_of(&ds, a.split);
    let picks = bundle.select(&ds, &subjects)?;
    let out = a.out.unwrap_or(a.run);
    let selections: Vec<&SelectionResult> = picks.iter().map(|(_, s)| s).collect();
    write_json(&out.join(SELECTIONS), &selections)?;
    let scores: Vec<CandidateScores> = picks
        .iter()
        .map(|(pool, sel)| CandidateScores {
            subject_id: sel.subject_id.clone(),
            top1: sel.score,
            scores: pool.all_scores.clone(),
        })
        .collect();
    with_file(&out.join(CANDIDATE_SCORES), |w| write_candidate_scores(w, &scores))?;
    eprintln!("retrieved sets for {} subjects into {}", subjects.len(), out.display());
    Ok(())
}

fn write_report_files(dir: &Path, stem: &str, report: &EvalReport) -> Result<()> {
    with_file(&dir.join(format!("{stem}.json")), |w| write_eval_report(w, report))?;
    with_file(&dir.join(format!("{stem}_confusion.csv")), |w| {
        write_confusion_csv(w, &report.confusion)
    })?;
    with_file(&dir.join(format!("{stem}_predictions.csv")), |w| {
        write_predictions_csv(w, report)
    })
}

fn eval(config: &FileConfig, a: EvalArgs) -> Result<()> {
    let (_, ds) = load_dataset(&a.cohort)?;
    let bundle = load_model(&a.run, &ds)?;
    let out = a.out.unwrap_or_else(|| a.run.clone());
    let (report, selections) = evaluate(&bundle, &ds, &ds.validation)?;
    write_report_files(&out, "eval", &report)?;
    write_json(&out.join(SELECTIONS), &selections)?;
    let mut table = report.summary_table();
    if a.baselines {
        let seed = config.seed.unwrap_or(bundle.config.seed);
        let head = HeadConfig::default();
        let rs = baseline_random_sets(&bundle, &ds, seed, &head)?;
        let all = baseline_all_radiomics(&ds, &head)?;
        let marginal = MarginalConfig {
            seed,
            n_support: bundle.config.n_support,
            n_query: bundle.config.n_query,
            probe: bundle.config.probe,
            ..MarginalConfig::default()
        };
        let (topk, chosen) = baseline_marginal_topk(&ds, bundle.config.k, &marginal, &head)?;
        for (stem, r) in [
            ("baseline_rs", &rs),
            ("baseline_all_radiomics", &all),
            ("baseline_marginal_topk", &topk),
        ] {
            write_report_files(&out, stem, r)?;
            table.push('\n');
            table.push_str(&r.summary_table());
        }
        write_json(&out.join("baseline_marginal_topk_features.json"), &chosen)?;
    }
    table.push('\n');
    write_text(&out.join("eval.txt"), &table)?;
    println!("{table}");
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary<'a> {
    subpool: &'a [usize],
    k: usize,
    subsets: u128,
    draws: usize,
    scorer: &'a str,
    stats: radset::retrieval::GapStats,
    percentile_of_r_star: Vec<(String, f64)>,
}

fn oracle(config: FileConfig, a: OracleArgs) -> Result<()> {
    let (_, ds) = load_dataset(&a.cohort)?;
    let o = &config.oracle;
    let n = a.subpool.unwrap_or(o.subpool);
    let k = a.k.unwrap_or(o.k);
    let draws = a.draws.unwrap_or(o.draws);
    ensure!(
        n >= 1 && n <= ds.feature_count(),
        "subpool size must lie in 1..={}",
        ds.feature_count()
    );
    ensure!(k >= 1 && k <= n, "k must lie in 1..={n}");
    let mut r = config.retrieval.clone();
    let relevance = marginal_relevance(
        &ds,
        &MarginalConfig {
            seed: r.seed,
            n_support: r.n_support,
            n_query: r.n_query,
            probe: r.probe,
            ..MarginalConfig::default()
        },
    )?;
    let subpool = top_k_indices(&relevance, n);
    let total = binomial(n as u64, k as u64);
    let subjects = subjects_of(&ds, a.split);
    let (records, scorer) = match &a.run {
        Some(run) => {
            let mut bundle = load_model(run, &ds)?;
            let c = &mut bundle.config;
            c.subpool = Some(subpool.clone());
            c.k = k;
            c.p0 = (c.p0 as u128).min(total) as usize;
            c.pool_m = c.pool_m.min(c.p0);
            c.q = c.q.min(c.pool_m);
            c.validate(ds.feature_count())?;
            (audit_subpool(&bundle, &ds, &subjects, draws)?, "model")
        }
        None => {
            r.k = k;
            r.p0 = total.min(usize::MAX as u128) as usize;
            r.pool_m = r.p0;
            (
                audit_oracle_scorer(&ds, &subjects, &subpool, &r, draws)?,
                "reward-oracle",
            )
        }
    };
    let gaps: Vec<f64> = records.iter().map(|g| g.gap).collect();
    let stats = gap_statistics(&gaps)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    with_file(&a.out.join("gaps.csv"), |w| write_gap_csv(w, &records))?;
    with_file(&a.out.join("rewards.csv"), |w| {
        write_reward_list_csv(w, &records, &subpool, k)
    })?;
    println!(
        "{} subjects, {total} subsets each; mean gap {:.6}, tail integral {:.6}, p95 {:.6}",
        records.len(),
        stats.mean,
        stats.tail_integral,
        stats.p95
    );
    write_json(
        &a.out.join("gap_stats.json"),
        &OracleSummary {
            subpool: &subpool,
            k,
            subsets: total,
            draws,
            scorer,
            stats,
            percentile_of_r_star: records.iter().map(|g| (g.subject_id.clone(), g.percentile)).collect(),
        },
    )
}

fn report(a: ReportArgs) -> Result<()> {
    let (cohort, ds) = load_dataset(&a.cohort)?;
    let bundle = load_model(&a.run, &ds)?;
    let Some(i) = ds.subject_ids.iter().position(|s| *s == a.subject) else {
        bail!("unknown subject `{}` in {}", a.subject, a.cohort.display());
    };
    let (_, sel) = bundle.select(&ds, &[i])?.remove(0);
    let prediction = bundle.predict(ds.z.row(i), &sel)?;
    let raw: &FeatureVector = &cohort.features.as_ref().context("cohort has no features")?[i];
    let report = EvidenceReport::new(&a.subject, &prediction, &sel.s_star, &raw.0, ds.z.row(i), &bundle.table)?;
    let out = a.out.unwrap_or(a.run);
    write_json(&out.join(format!("evidence_{}.json", a.subject)), &report)?;
    let table = report.table();
    write_text(&out.join(format!("evidence_{}.txt", a.subject)), &table)?;
    print!("{table}");
    Ok(())
}

fn roi_counts(table: &DescriptorTable, set: &FeatureSet) -> BTreeMap<String, usize> {
    let mut counts: BTreeMap<String, usize> = table.roi_names().iter().map(|r| (r.clone(), 0)).collect();
    for &f in set.indices() {
        if let Some(d) = table.get(f) {
            *counts.entry(d.roi.clone()).or_insert(0) += 1;
        }
    }
    counts
}

fn export_plots(config: &FileConfig, a: ExportArgs) -> Result<()> {
    let bins = a.bins.unwrap_or(config.plots.bins);
    ensure!(bins >= 1, "need at least one histogram bin");
    let run = &a.run;
    let out: PathBuf = a.out.unwrap_or_else(|| run.join("plots"));
    let meta: serde_json::Value = serde_json::from_reader(open(&run.join("model.json"))?)
        .with_context(|| format!("parsing {}", run.join("model.json").display()))?;
    let table: DescriptorTable =
        serde_json::from_value(meta["table"].clone()).context("model.json lacks the descriptor table")?;
    let scores = read_candidate_scores(open(&run.join(CANDIDATE_SCORES))?)?;
    let selections: Vec<SelectionResult> = serde_json::from_reader(open(&run.join(SELECTIONS))?)
        .with_context(|| format!("parsing {}", run.join(SELECTIONS).display()))?;
    let history = read_history(&run.join("history.jsonl"))?;

    let hist = scores
        .iter()
        .map(|s| Ok((s.subject_id.clone(), score_histogram(&s.scores, bins)?)))
        .collect::<radset::Result<Vec<_>>>()?;
    with_file(&out.join("score_histogram.csv"), |w| write_histogram_csv(w, &hist))?;
    let counts: Vec<(String, BTreeMap<String, usize>)> = selections
        .iter()
        .map(|s| (s.subject_id.clone(), roi_counts(&table, &s.s_star)))
        .collect();
    with_file(&out.join("roi_counts.csv"), |w| write_roi_counts_csv(w, &counts))?;
    with_file(&out.join("training_curves.csv"), |w| {
        write_training_curves_csv(w, &history)
    })?;
    eprintln!(
        "exported histograms for {} subjects, ROI counts for {}, {} training-curve rows into {}",
        hist.len(),
        counts.len(),
        history.len(),
        out.display()
    );
    Ok(())
}
