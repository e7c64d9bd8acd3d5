//! Downstream classifier, top-3 ensembling, metrics, reports and baselines.

pub mod baselines;
mod evidence;
mod metrics;
pub mod plots;
mod report;

use serde::{Deserialize, Serialize};

pub use baselines::{
    baseline_all_radiomics, baseline_marginal_topk, baseline_random_sets, fit_linear_head, marginal_relevance,
    top_k_indices, HeadConfig, MarginalConfig,
};
pub use evidence::{Direction, EvidenceEntry, EvidenceReport, DIRECTION_THRESHOLD};
pub use metrics::{binary_auc, metrics, ConfusionMatrix, Metrics};
pub use report::{
    read_confusion_csv, read_eval_report, read_predictions_csv, write_confusion_csv, write_eval_report,
    write_predictions_csv, EvalReport, SubjectPrediction,
};

use crate::error::{ensure, Result};
use crate::numkit::tensor::softmax_in_place;
use crate::numkit::{DenseTensor, ParamSet, Tape, Var};
use crate::setenc::SetEmbedding;

/// Linear classifier `c_η`: `d × C` weights and a bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub dim: usize,
    pub classes: usize,
    pub params: ParamSet,
}

/// Logits, probabilities and the arg-max class (lowest index on ties).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub class: usize,
}

impl Prediction {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        let mut probabilities = logits.clone();
        softmax_in_place(&mut probabilities);
        let class = argmax(&logits);
        Self {
            logits,
            probabilities,
            class,
        }
    }
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl Classifier {
    pub fn zeros(dim: usize, classes: usize) -> Self {
        let mut params = ParamSet::new();
        params.push("cls.w", DenseTensor::zeros(&[dim, classes]));
        params.push("cls.b", DenseTensor::zeros(&[classes]));
        Self { dim, classes, params }
    }

    pub fn with_params(dim: usize, classes: usize, params: ParamSet) -> Result<Self> {
        Self::zeros(dim, classes).params.ensure_compatible(&params)?;
        Ok(Self { dim, classes, params })
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        ensure!(
            x.len() == self.dim,
            "classifier expects {} inputs, got {}",
            self.dim,
            x.len()
        );
        let w = self.params.get(0).data();
        let mut out = self.params.get(1).data().to_vec();
        for (i, &xi) in x.iter().enumerate() {
            for (o, &wv) in out.iter_mut().zip(&w[i * self.classes..(i + 1) * self.classes]) {
                *o += xi * wv;
            }
        }
        Ok(out)
    }

    pub fn classify(&self, embedding: &SetEmbedding) -> Result<Prediction> {
        Ok(Prediction::from_logits(self.logits(&embedding.0)?))
    }

    /// Averages the logits of 1–3 embeddings, then applies softmax.
    pub fn ensemble_predict(&self, embeddings: &[SetEmbedding]) -> Result<Prediction> {
        ensure!(!embeddings.is_empty(), "ensemble needs at least one embedding");
        ensure!(embeddings.len() <= 3, "ensemble takes at most three embeddings");
        if embeddings.len() == 1 {
            return self.classify(&embeddings[0]);
        }
        let mut mean = vec![0.0; self.classes];
        for e in embeddings {
            for (m, l) in mean.iter_mut().zip(self.logits(&e.0)?) {
                *m += l;
            }
        }
        let n = embeddings.len() as f64;
        for m in &mut mean {
            *m /= n;
        }
        Ok(Prediction::from_logits(mean))
    }

    /// Records `x · W + b` on a tape.
    pub fn logits_on_tape(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var> {
        ensure!(vars.len() == 2, "classifier binding has the wrong arity");
        tape.linear(x, vars[0], vars[1])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_classifier_is_uniform_class_zero() {
        let c = Classifier::zeros(4, 3);
        let p = c.classify(&SetEmbedding(vec![1.0; 4])).unwrap();
        assert_eq!(p.class, 0);
        assert!(p.probabilities.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn ensemble_averages_logits() {
        let mut c = Classifier::zeros(2, 2);
        c.params.get_mut(0).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let e = |a: f64, b: f64| SetEmbedding(vec![a, b]);
        let p = c.ensemble_predict(&[e(2.0, 0.0), e(0.0, 2.0), e(2.0, 0.0)]).unwrap();
        assert!((p.logits[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((p.logits[1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.class, 0);
        let single = c.ensemble_predict(&[e(0.3, 0.1)]).unwrap();
        assert_eq!(single, c.classify(&e(0.3, 0.1)).unwrap());
        assert!(c.ensemble_predict(&[]).is_err());
    }

    #[test]
    fn large_logit_gap() {
        let p = Prediction::from_logits(vec![0.0, 10.0]);
        assert!(p.probabilities[1] > 0.9999);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
