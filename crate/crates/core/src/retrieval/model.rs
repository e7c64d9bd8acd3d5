use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::{Dataset, FeatureStats};
use crate::error::{ensure, Error, Result};
use crate::evalkit::{fit_linear_head, Classifier, EvalReport, HeadConfig, Prediction};
use crate::numkit::{read_checkpoint, write_checkpoint, ParamSet};
use crate::radiomics::DescriptorTable;
use crate::rng::{rng_for, stream};
use crate::scorer::{FastScorerTemplate, Scorer, ScorerConfig};
use crate::setenc::{tokenize, EncoderConfig, FeatureSet, SetEmbedding, SetEncoder};

use super::pool::{build_pool, select_top1, CandidatePool, SelectionResult};
use super::RetrievalConfig;

pub const MODEL_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ModelMeta {
    version: u32,
    classes: usize,
    encoder: EncoderConfig,
    scorer: ScorerConfig,
    config: RetrievalConfig,
    feature_stats: FeatureStats,
    context_stats: FeatureStats,
    table: DescriptorTable,
}

/// A trained model: encoder θ, scorer ψ, classifier η, plus everything
/// needed to apply them to new subjects.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelBundle {
    pub encoder: SetEncoder,
    pub scorer: Scorer,
    pub classifier: Classifier,
    pub config: RetrievalConfig,
    pub classes: usize,
    pub feature_stats: FeatureStats,
    pub context_stats: FeatureStats,
    pub table: DescriptorTable,
}

impl ModelBundle {
    pub fn all_params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for part in [&self.encoder.params, &self.scorer.params, &self.classifier.params] {
            for (name, t) in part.iter() {
                p.push(name, t.clone());
            }
        }
        p
    }

    /// Writes `model.json` (metadata) and `model.ckpt` (parameters) into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::from(e).at_path(dir))?;
        let meta = ModelMeta {
            version: MODEL_VERSION,
            classes: self.classes,
            encoder: self.encoder.config,
            scorer: self.scorer.config,
            config: self.config.clone(),
            feature_stats: self.feature_stats.clone(),
            context_stats: self.context_stats.clone(),
            table: self.table.clone(),
        };
        let path = dir.join("model.json");
        let mut w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::from(e).at_path(&path))?);
        serde_json::to_writer_pretty(&mut w, &meta)?;
        w.flush()?;
        let path = dir.join("model.ckpt");
        let w = BufWriter::new(fs::File::create(&path).map_err(|e| Error::from(e).at_path(&path))?);
        write_checkpoint(w, &self.all_params()).map_err(|e| e.at_path(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let f = fs::File::open(&path).map_err(|e| Error::from(e).at_path(&path))?;
        let meta: ModelMeta = serde_json::from_reader(BufReader::new(f)).map_err(|e| Error::from(e).at_path(&path))?;
        if meta.version > MODEL_VERSION {
            return Err(Error::UnsupportedVersion {
                found: meta.version,
                supported: MODEL_VERSION,
            }
            .at_path(&path));
        }
        let path = dir.join("model.ckpt");
        let f = fs::File::open(&path).map_err(|e| Error::from(e).at_path(&path))?;
        let params = read_checkpoint(BufReader::new(f)).map_err(|e| e.at_path(&path))?;
        let (enc, rest) = split_params(&params, "enc.");
        let (scr, rest) = split_params(&rest, "scr.");
        let (cls, rest) = split_params(&rest, "cls.");
        ensure!(rest.is_empty(), "model checkpoint has unexpected entries");
        Ok(Self {
            encoder: SetEncoder::with_params(meta.encoder, enc)?,
            scorer: Scorer::with_params(meta.scorer, scr)?,
            classifier: Classifier::with_params(meta.encoder.out_dim, meta.classes, cls)?,
            config: meta.config,
            classes: meta.classes,
            feature_stats: meta.feature_stats,
            context_stats: meta.context_stats,
            table: meta.table,
        })
    }

    pub fn embed(&self, z_row: &[f64], set: &FeatureSet) -> Result<SetEmbedding> {
        self.encoder.encode_set(&tokenize(z_row, set, &self.table)?)
    }

    /// Builds the inference pool for each listed subject (seeded by subject
    /// position) and selects its top set.
    pub fn select(&self, ds: &Dataset, subjects: &[usize]) -> Result<Vec<(CandidatePool, SelectionResult)>> {
        let cfg = &self.config;
        let universe = cfg.universe(ds.feature_count());
        let template = FastScorerTemplate::new(&self.encoder, &self.scorer, &self.table)?;
        subjects
            .iter()
            .map(|&i| {
                ensure!(i < ds.len(), "subject {i} out of range");
                let fast = template.for_subject(&self.scorer, ds.z.row(i), ds.contexts.row(i))?;
                let mut rng = rng_for(cfg.seed, &[stream::INFERENCE_POOL, i as u64]);
                let mut acc = vec![0.0; self.scorer.config.hidden];
                let pool = build_pool(
                    &ds.subject_ids[i],
                    &universe,
                    cfg.k,
                    cfg.p0,
                    cfg.pool_m,
                    0,
                    &mut rng,
                    |s| Ok(fast.score_with(s, &mut acc)),
                )?;
                let sel = select_top1(&pool)?;
                Ok((pool, sel))
            })
            .collect()
    }

    /// Refits the classifier head on the training subjects' top-1
    /// embeddings, with the encoder frozen.
    pub fn refit_head(&mut self, ds: &Dataset, head: &HeadConfig) -> Result<()> {
        let picks = self.select(ds, &ds.train)?;
        let mut x = Vec::with_capacity(ds.train.len() * self.encoder.config.out_dim);
        for (&i, (_, sel)) in ds.train.iter().zip(&picks) {
            x.extend(self.embed(ds.z.row(i), &sel.s_star)?.0);
        }
        let y: Vec<usize> = ds.train.iter().map(|&i| ds.labels[i]).collect();
        self.classifier = fit_linear_head(&x, self.encoder.config.out_dim, &y, self.classes, head)?;
        Ok(())
    }

    /// Averages classifier logits over the first `config.ensemble` sets.
    pub fn predict(&self, z_row: &[f64], selection: &SelectionResult) -> Result<Prediction> {
        let embeddings = selection
            .ensemble_sets
            .iter()
            .take(self.config.ensemble)
            .map(|s| self.embed(z_row, s))
            .collect::<Result<Vec<_>>>()?;
        self.classifier.ensemble_predict(&embeddings)
    }
}

fn split_params(params: &ParamSet, prefix: &str) -> (ParamSet, ParamSet) {
    let mut hit = ParamSet::new();
    let mut rest = ParamSet::new();
    for (name, t) in params.iter() {
        if name.starts_with(prefix) {
            hit.push(name, t.clone());
        } else {
            rest.push(name, t.clone());
        }
    }
    (hit, rest)
}

/// Retrieves and classifies every listed subject.
pub fn evaluate(bundle: &ModelBundle, ds: &Dataset, subjects: &[usize]) -> Result<(EvalReport, Vec<SelectionResult>)> {
    let picks = bundle.select(ds, subjects)?;
    let mut rows = Vec::with_capacity(subjects.len());
    let mut selections = Vec::with_capacity(subjects.len());
    for (&i, (_, sel)) in subjects.iter().zip(picks) {
        let pred = bundle.predict(ds.z.row(i), &sel)?;
        rows.push((ds.subject_ids[i].clone(), ds.labels[i], pred));
        selections.push(sel);
    }
    let report = EvalReport::from_predictions("ours", bundle.config.k, bundle.classes, &rows)?;
    Ok((report, selections))
}
