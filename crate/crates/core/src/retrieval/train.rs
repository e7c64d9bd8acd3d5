use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{draw_support_query, Dataset};
use crate::error::{ensure, Error, Result};
use crate::evalkit::{Classifier, HeadConfig};
use crate::numkit::{
    add_grads, collect_grads, load_checkpoint, save_checkpoint, scale_grads, Adam, AdamConfig, DenseTensor, ParamSet,
    Tape,
};
use crate::probe::RewardContext;
use crate::rng::{derive_seed, rng_for, stream};
use crate::scorer::{FastScorerTemplate, Scorer, ScorerConfig};
use crate::setenc::{EncoderConfig, FeatureSet, SetEncoder, TokenBatch};

use super::model::ModelBundle;
use super::pool::{build_pool, select_top1, CandidatePool};
use super::{sample_sets_from, RetrievalConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Stage1,
    Stage2,
}

/// One line of `history.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub stage: Stage,
    /// 1-based within the stage.
    pub epoch: usize,
    #[serde(rename = "L_cls")]
    pub l_cls: Option<f64>,
    #[serde(rename = "L_scr")]
    pub l_scr: f64,
    pub mean_reward: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub median_gap: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_cls: f64,
    pub l_scr: f64,
    pub total: f64,
}

/// Parameters, optimizer state and progress of a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub encoder: SetEncoder,
    pub scorer: Scorer,
    pub classifier: Classifier,
    pub adam_encoder: Adam,
    pub adam_scorer: Adam,
    pub adam_classifier: Adam,
    pub stage1_done: usize,
    pub stage2_done: usize,
}

fn adam(lr: f64) -> AdamConfig {
    AdamConfig {
        lr,
        ..AdamConfig::default()
    }
}

impl TrainState {
    /// Glorot-initialized encoder and scorer, zero classifier.
    pub fn init(ds: &Dataset, config: &RetrievalConfig) -> Self {
        let enc_cfg = EncoderConfig::for_table(&ds.table, config.k);
        let encoder = SetEncoder::init(enc_cfg, &mut rng_for(config.seed, &[stream::INIT, 0]));
        let scorer = Scorer::init(ScorerConfig::default(), &mut rng_for(config.seed, &[stream::INIT, 1]));
        let classifier = Classifier::zeros(enc_cfg.out_dim, ds.classes);
        Self {
            adam_encoder: Adam::new(adam(config.lr), &encoder.params),
            adam_scorer: Adam::new(adam(config.lr), &scorer.params),
            adam_classifier: Adam::new(adam(config.classifier_lr), &classifier.params),
            encoder,
            scorer,
            classifier,
            stage1_done: 0,
            stage2_done: 0,
        }
    }

    fn to_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        let parts = [
            ("enc", &self.encoder.params, &self.adam_encoder),
            ("scr", &self.scorer.params, &self.adam_scorer),
            ("cls", &self.classifier.params, &self.adam_classifier),
        ];
        for (_, params, _) in &parts {
            for (name, t) in params.iter() {
                p.push(name, t.clone());
            }
        }
        for (tag, params, opt) in &parts {
            let (m, v, step) = opt.state();
            for ((name, _), (mt, vt)) in params.iter().zip(m.iter().zip(v)) {
                p.push(format!("adam.{tag}.m.{name}"), mt.clone());
                p.push(format!("adam.{tag}.v.{name}"), vt.clone());
            }
            p.push(format!("adam.{tag}.step"), DenseTensor::scalar(step as f64));
        }
        p.push("progress.stage1", DenseTensor::scalar(self.stage1_done as f64));
        p.push("progress.stage2", DenseTensor::scalar(self.stage2_done as f64));
        p
    }

    fn from_params(p: &ParamSet, ds: &Dataset, config: &RetrievalConfig) -> Result<Self> {
        let template = Self::init(ds, config);
        let get = |name: &str| {
            p.by_name(name)
                .cloned()
                .ok_or_else(|| Error::Format(format!("training checkpoint lacks `{name}`")))
        };
        let restore = |params: &ParamSet| -> Result<ParamSet> {
            let mut out = ParamSet::new();
            for (name, _) in params.iter() {
                out.push(name, get(name)?);
            }
            params.ensure_compatible(&out)?;
            Ok(out)
        };
        let restore_adam = |tag: &str, params: &ParamSet, cfg: AdamConfig| -> Result<Adam> {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (name, _) in params.iter() {
                m.push(get(&format!("adam.{tag}.m.{name}"))?);
                v.push(get(&format!("adam.{tag}.v.{name}"))?);
            }
            let step = get(&format!("adam.{tag}.step"))?.item() as u64;
            Adam::from_state(cfg, m, v, step)
        };
        let encoder = SetEncoder::with_params(template.encoder.config, restore(&template.encoder.params)?)?;
        let scorer = Scorer::with_params(template.scorer.config, restore(&template.scorer.params)?)?;
        let classifier = Classifier::with_params(
            template.classifier.dim,
            template.classifier.classes,
            restore(&template.classifier.params)?,
        )?;
        Ok(Self {
            adam_encoder: restore_adam("enc", &encoder.params, adam(config.lr))?,
            adam_scorer: restore_adam("scr", &scorer.params, adam(config.lr))?,
            adam_classifier: restore_adam("cls", &classifier.params, adam(config.classifier_lr))?,
            encoder,
            scorer,
            classifier,
            stage1_done: get("progress.stage1")?.item() as usize,
            stage2_done: get("progress.stage2")?.item() as usize,
        })
    }

    pub fn into_bundle(self, ds: &Dataset, config: &RetrievalConfig) -> ModelBundle {
        ModelBundle {
            encoder: self.encoder,
            scorer: self.scorer,
            classifier: self.classifier,
            config: config.clone(),
            classes: ds.classes,
            feature_stats: ds.stats.clone(),
            context_stats: ds.context_stats.clone(),
            table: ds.table.clone(),
        }
    }
}

pub fn save_train_state(path: &Path, state: &TrainState) -> Result<()> {
    save_checkpoint(path, &state.to_params())
}

pub fn load_train_state(path: &Path, ds: &Dataset, config: &RetrievalConfig) -> Result<TrainState> {
    let p = load_checkpoint(path)?;
    TrainState::from_params(&p, ds, config).map_err(|e| e.at_path(path))
}

/// Support/query draw shared by every reward of one epoch.
fn epoch_rewards<'a>(
    ds: &'a Dataset,
    config: &RetrievalConfig,
    stage: Stage,
    epoch: usize,
) -> Result<RewardContext<'a>> {
    let seed = derive_seed(config.seed, &[stream::SUPPORT_QUERY, stage as u64, epoch as u64]);
    let (sup, qry) = draw_support_query(&ds.train, &ds.labels, config.n_support, config.n_query, seed)?;
    RewardContext::new(&ds.z, &ds.labels, ds.classes, sup, qry, config.probe)
}

/// Fills `cache` with the rewards of `sets` not yet in it.
fn fill_rewards(ctx: &RewardContext, cache: &mut HashMap<FeatureSet, f64>, sets: &[&FeatureSet]) -> Result<()> {
    let mut missing: Vec<&FeatureSet> = sets.iter().copied().filter(|s| !cache.contains_key(*s)).collect();
    missing.sort();
    missing.dedup();
    let rewards = missing
        .par_iter()
        .map(|s| ctx.reward(s))
        .collect::<Result<Vec<f64>>>()?;
    for (s, r) in missing.into_iter().zip(rewards) {
        cache.insert(s.clone(), r);
    }
    Ok(())
}

struct SubjectGrads {
    l_cls: f64,
    l_scr: f64,
    total: f64,
    encoder: Vec<DenseTensor>,
    scorer: Vec<DenseTensor>,
    classifier: Vec<DenseTensor>,
}

/// Loss and gradients for one subject: classification of `cls_set` (if
/// any) plus `λ · MSE(score, reward)` over `scr_sets`.
fn subject_grads(
    state: &TrainState,
    ds: &Dataset,
    subject: usize,
    cls_set: Option<&FeatureSet>,
    scr_sets: &[&FeatureSet],
    rewards: &[f64],
    lambda: f64,
) -> Result<SubjectGrads> {
    let mut tape = Tape::new();
    let ev = state.encoder.params.bind(&mut tape, true);
    let sv = state.scorer.params.bind(&mut tape, true);
    let cv = state.classifier.params.bind(&mut tape, cls_set.is_some());
    let sets: Vec<&FeatureSet> = cls_set.into_iter().chain(scr_sets.iter().copied()).collect();
    let batch = TokenBatch::new(ds.z.row(subject), &sets, &ds.table)?;
    let emb = state.encoder.encode_on_tape(&mut tape, &ev, &batch)?;
    let offset = usize::from(cls_set.is_some());
    let mut l_cls = 0.0;
    let mut l_scr = 0.0;
    let mut total = None;
    if cls_set.is_some() {
        let row = tape.gather_rows(emb, &[0])?;
        let logits = state.classifier.logits_on_tape(&mut tape, &cv, row)?;
        let loss = tape.softmax_cross_entropy(logits, &[ds.labels[subject]])?;
        l_cls = tape.value(loss).item();
        total = Some(loss);
    }
    if !scr_sets.is_empty() {
        let rows: Vec<usize> = (offset..offset + scr_sets.len()).collect();
        let e = tape.gather_rows(emb, &rows)?;
        let ctx = tape.constant(DenseTensor::row(ds.contexts.row(subject).to_vec()));
        let scores = state.scorer.score_on_tape(&mut tape, &sv, ctx, e)?;
        let loss = tape.mse(scores, rewards)?;
        l_scr = tape.value(loss).item();
        total = Some(match total {
            Some(c) => {
                let scaled = tape.scale(loss, lambda);
                tape.add(c, scaled)?
            }
            None => loss,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("a training step needs at least one loss term".into()))?;
    let value = tape.value(total).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite training loss for subject {subject}"
        )));
    }
    let grads = tape.backward(total)?;
    Ok(SubjectGrads {
        l_cls,
        l_scr,
        total: value,
        encoder: collect_grads(&grads, &ev),
        scorer: collect_grads(&grads, &sv),
        classifier: collect_grads(&grads, &cv),
    })
}

/// Averages per-subject gradients (in subject order) and takes one Adam
/// step on each parameter group.
fn apply_mean_grads(state: &mut TrainState, parts: Vec<SubjectGrads>, update_classifier: bool) -> Result<StepLosses> {
    let n = parts.len() as f64;
    let mut enc = state.encoder.params.zeros_like();
    let mut scr = state.scorer.params.zeros_like();
    let mut cls = state.classifier.params.zeros_like();
    let mut losses = StepLosses {
        l_cls: 0.0,
        l_scr: 0.0,
        total: 0.0,
    };
    for g in &parts {
        add_grads(&mut enc, &g.encoder);
        add_grads(&mut scr, &g.scorer);
        add_grads(&mut cls, &g.classifier);
        losses.l_cls += g.l_cls / n;
        losses.l_scr += g.l_scr / n;
        losses.total += g.total / n;
    }
    for g in [&mut enc, &mut scr, &mut cls] {
        scale_grads(g, 1.0 / n);
    }
    state.adam_encoder.step(&mut state.encoder.params, &enc)?;
    state.adam_scorer.step(&mut state.scorer.params, &scr)?;
    if update_classifier {
        state.adam_classifier.step(&mut state.classifier.params, &cls)?;
    }
    Ok(losses)
}

fn shuffled_train(ds: &Dataset, config: &RetrievalConfig, tag: u64, epoch: usize) -> Vec<usize> {
    let mut order = ds.train.clone();
    order.shuffle(&mut rng_for(config.seed, &[tag, epoch as u64]));
    order
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Runs the remaining Stage 1 epochs: per subject, score random sets and
/// regress the scores onto their probe rewards.
pub fn stage1_train(
    state: &mut TrainState,
    ds: &Dataset,
    config: &RetrievalConfig,
    history: &mut Vec<HistoryRecord>,
) -> Result<()> {
    let universe = config.universe(ds.feature_count());
    while state.stage1_done < config.stage1_epochs {
        let epoch = state.stage1_done;
        let ctx = epoch_rewards(ds, config, Stage::Stage1, epoch)?;
        let mut cache = HashMap::new();
        let mut rewards_seen = Vec::new();
        let mut l_scr = Vec::new();
        for chunk in shuffled_train(ds, config, stream::STAGE1_ORDER, epoch).chunks(config.batch_subjects) {
            let sets: Vec<Vec<FeatureSet>> = chunk
                .iter()
                .map(|&i| {
                    let mut rng = rng_for(config.seed, &[stream::STAGE1_SETS, epoch as u64, i as u64]);
                    sample_sets_from(&universe, config.k, config.stage1_sets, &mut rng)
                })
                .collect::<Result<_>>()?;
            let all: Vec<&FeatureSet> = sets.iter().flatten().collect();
            fill_rewards(&ctx, &mut cache, &all)?;
            let parts = chunk
                .par_iter()
                .zip(&sets)
                .map(|(&i, s)| {
                    let refs: Vec<&FeatureSet> = s.iter().collect();
                    let r: Vec<f64> = s.iter().map(|x| cache[x]).collect();
                    subject_grads(state, ds, i, None, &refs, &r, 1.0)
                })
                .collect::<Result<Vec<_>>>()?;
            rewards_seen.extend(all.iter().map(|s| cache[*s]));
            let losses = apply_mean_grads(state, parts, false)?;
            l_scr.push(losses.l_scr);
        }
        state.stage1_done += 1;
        history.push(HistoryRecord {
            stage: Stage::Stage1,
            epoch: state.stage1_done,
            l_cls: None,
            l_scr: mean(&l_scr),
            mean_reward: mean(&rewards_seen),
            median_gap: None,
        });
    }
    Ok(())
}

/// Builds the Stage 2 pools of `subjects` with the current parameters.
fn stage2_pools(
    state: &TrainState,
    ds: &Dataset,
    config: &RetrievalConfig,
    epoch: usize,
    subjects: &[usize],
) -> Result<Vec<CandidatePool>> {
    let universe = config.universe(ds.feature_count());
    let template = FastScorerTemplate::new(&state.encoder, &state.scorer, &ds.table)?;
    subjects
        .par_iter()
        .map(|&i| {
            let fast = template.for_subject(&state.scorer, ds.z.row(i), ds.contexts.row(i))?;
            let mut rng = rng_for(config.seed, &[stream::STAGE2_POOL, epoch as u64, i as u64]);
            let mut acc = vec![0.0; state.scorer.config.hidden];
            let mut pool = build_pool(
                &ds.subject_ids[i],
                &universe,
                config.k,
                config.p0,
                config.pool_m,
                config.q,
                &mut rng,
                |s| Ok(fast.score_with(s, &mut acc)),
            )?;
            pool.all_scores = Vec::new();
            Ok(pool)
        })
        .collect()
}

/// One joint update on a batch of `(subject, pool)` pairs whose supervised
/// members already carry rewards.
pub fn joint_train_step(
    state: &mut TrainState,
    ds: &Dataset,
    batch: &[(usize, &CandidatePool)],
    config: &RetrievalConfig,
) -> Result<StepLosses> {
    ensure!(!batch.is_empty(), "joint step needs at least one subject");
    let parts = batch
        .par_iter()
        .map(|&(i, pool)| {
            let sel = select_top1(pool)?;
            let sup: Vec<&FeatureSet> = pool.supervised.iter().map(|&j| &pool.sets[j]).collect();
            let rewards = pool
                .supervised
                .iter()
                .map(|j| {
                    pool.rewards
                        .get(j)
                        .copied()
                        .ok_or_else(|| Error::Contract(format!("pool member {j} has no reward")))
                })
                .collect::<Result<Vec<f64>>>()?;
            subject_grads(state, ds, i, Some(&sel.s_star), &sup, &rewards, config.lambda_scr)
        })
        .collect::<Result<Vec<_>>>()?;
    apply_mean_grads(state, parts, true)
}

/// Runs the remaining Stage 2 epochs. Pools are rebuilt for every batch
/// with the parameters current at that point.
pub fn stage2_train(
    state: &mut TrainState,
    ds: &Dataset,
    config: &RetrievalConfig,
    history: &mut Vec<HistoryRecord>,
) -> Result<()> {
    while state.stage2_done < config.stage2_epochs {
        let epoch = state.stage2_done;
        let ctx = epoch_rewards(ds, config, Stage::Stage2, epoch)?;
        let mut cache = HashMap::new();
        let mut rewards_seen = Vec::new();
        let mut l_cls = Vec::new();
        let mut l_scr = Vec::new();
        for chunk in shuffled_train(ds, config, stream::STAGE2_ORDER, epoch).chunks(config.batch_subjects) {
            let mut pools = stage2_pools(state, ds, config, epoch, chunk)?;
            let sup: Vec<&FeatureSet> = pools
                .iter()
                .flat_map(|p| p.supervised.iter().map(|&j| &p.sets[j]))
                .collect();
            fill_rewards(&ctx, &mut cache, &sup)?;
            for p in &mut pools {
                for &j in &p.supervised.clone() {
                    let r = cache[&p.sets[j]];
                    p.rewards.insert(j, r);
                    rewards_seen.push(r);
                }
            }
            let batch: Vec<(usize, &CandidatePool)> = chunk.iter().copied().zip(pools.iter()).collect();
            let losses = joint_train_step(state, ds, &batch, config)?;
            l_cls.push(losses.l_cls);
            l_scr.push(losses.l_scr);
        }
        state.stage2_done += 1;
        history.push(HistoryRecord {
            stage: Stage::Stage2,
            epoch: state.stage2_done,
            l_cls: Some(mean(&l_cls)),
            l_scr: mean(&l_scr),
            mean_reward: mean(&rewards_seen),
            median_gap: None,
        });
    }
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Run directory for checkpoints, history and the final model.
    pub out_dir: Option<PathBuf>,
    /// Continue from a saved training state instead of initializing.
    pub resume: Option<TrainState>,
}

fn write_history(path: &Path, history: &[HistoryRecord]) -> Result<()> {
    let f = fs::File::create(path).map_err(|e| Error::from(e).at_path(path))?;
    let mut w = BufWriter::new(f);
    for h in history {
        serde_json::to_writer(&mut w, h)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_history(path: &Path) -> Result<Vec<HistoryRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::from(e).at_path(path))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line).map_err(|e| Error::from(e).at_path(path))?);
        }
    }
    Ok(out)
}

/// Stage 1 then Stage 2 (one alternation). With an output directory,
/// writes `stage1.ckpt` and `stage2.ckpt` at the stage boundaries plus
/// `history.jsonl` and the final model.
pub fn run_training(
    ds: &Dataset,
    config: &RetrievalConfig,
    options: TrainOptions,
) -> Result<(ModelBundle, Vec<HistoryRecord>)> {
    config.validate(ds.feature_count())?;
    ensure!(
        config.n_support + config.n_query <= ds.train.len(),
        "support {} + query {} exceed the {} training subjects",
        config.n_support,
        config.n_query,
        ds.train.len()
    );
    let resumed = options.resume.is_some();
    let mut state = match options.resume {
        Some(s) => s,
        None => TrainState::init(ds, config),
    };
    let mut history = Vec::new();
    if let (true, Some(dir)) = (resumed, &options.out_dir) {
        let path = dir.join("history.jsonl");
        if path.exists() {
            history = read_history(&path)?
                .into_iter()
                .filter(|h| match h.stage {
                    Stage::Stage1 => h.epoch <= state.stage1_done,
                    Stage::Stage2 => h.epoch <= state.stage2_done,
                })
                .collect();
        }
    }
    if let Some(dir) = &options.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
    }
    stage1_train(&mut state, ds, config, &mut history)?;
    if let Some(dir) = &options.out_dir {
        save_train_state(&dir.join("stage1.ckpt"), &state)?;
        write_history(&dir.join("history.jsonl"), &history)?;
    }
    stage2_train(&mut state, ds, config, &mut history)?;
    let mut bundle = state.clone().into_bundle(ds, config);
    if config.refit_head {
        bundle.refit_head(ds, &HeadConfig::default())?;
    }
    if let Some(dir) = &options.out_dir {
        save_train_state(&dir.join("stage2.ckpt"), &state)?;
        write_history(&dir.join("history.jsonl"), &history)?;
        bundle.save(dir)?;
    }
    Ok((bundle, history))
}
