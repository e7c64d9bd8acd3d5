//! Plot-ready numeric tables. Nothing here renders.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::retrieval::{HistoryRecord, Stage};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// The bin holding the top-1 score.
    pub top1: bool,
}

/// Equal-width histogram over `[min, max]`; the last bin is closed.
pub fn score_histogram(scores: &[f64], bins: usize) -> Result<Vec<HistogramBin>> {
    ensure!(
        !scores.is_empty() && bins >= 1,
        "histogram needs scores and at least one bin"
    );
    ensure!(scores.iter().all(|s| s.is_finite()), "scores must be finite");
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let slot = |s: f64| (((s - lo) / width) as usize).min(bins - 1);
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + b as f64 * width,
            hi: if b + 1 == bins {
                hi.max(lo + width)
            } else {
                lo + (b + 1) as f64 * width
            },
            count: 0,
            top1: false,
        })
        .collect();
    for &s in scores {
        out[slot(s)].count += 1;
    }
    out[slot(hi)].top1 = true;
    Ok(out)
}

/// Every sampled candidate's score for one subject, plus the top-1 score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateScores {
    pub subject_id: String,
    pub top1: f64,
    pub scores: Vec<f64>,
}

/// One line per subject.
pub fn write_candidate_scores<W: Write>(mut w: W, rows: &[CandidateScores]) -> Result<()> {
    for r in rows {
        serde_json::to_writer(&mut w, r)?;
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_candidate_scores<R: Read>(r: R) -> Result<Vec<CandidateScores>> {
    let mut out = Vec::new();
    for line in BufReader::new(r).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub subject_id: String,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    pub top1: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiCountRow {
    pub subject_id: String,
    pub roi: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    /// 1-based, counting across both stages.
    pub step: usize,
    pub stage: Stage,
    pub epoch: usize,
    #[serde(rename = "L_cls")]
    pub l_cls: Option<f64>,
    #[serde(rename = "L_scr")]
    pub l_scr: f64,
    pub mean_reward: f64,
}

fn write_rows<W: Write, T: Serialize>(w: W, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

fn read_rows<R: Read, T: DeserializeOwned>(r: R) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

/// `subject_id,bin,lo,hi,count,top1`.
pub fn write_histogram_csv<W: Write>(w: W, rows: &[(String, Vec<HistogramBin>)]) -> Result<()> {
    write_rows(
        w,
        rows.iter().flat_map(|(subject, bins)| {
            bins.iter().enumerate().map(move |(bin, b)| HistogramRow {
                subject_id: subject.clone(),
                bin,
                lo: b.lo,
                hi: b.hi,
                count: b.count,
                top1: u8::from(b.top1),
            })
        }),
    )
}

pub fn read_histogram_csv<R: Read>(r: R) -> Result<Vec<HistogramRow>> {
    read_rows(r)
}

/// `subject_id,roi,count`.
pub fn write_roi_counts_csv<W: Write>(w: W, rows: &[(String, BTreeMap<String, usize>)]) -> Result<()> {
    write_rows(
        w,
        rows.iter().flat_map(|(subject, counts)| {
            counts.iter().map(move |(roi, &count)| RoiCountRow {
                subject_id: subject.clone(),
                roi: roi.clone(),
                count,
            })
        }),
    )
}

pub fn read_roi_counts_csv<R: Read>(r: R) -> Result<Vec<RoiCountRow>> {
    read_rows(r)
}

/// `step,stage,epoch,L_cls,L_scr,mean_reward`, one row per epoch.
pub fn write_training_curves_csv<W: Write>(w: W, history: &[HistoryRecord]) -> Result<()> {
    write_rows(
        w,
        history.iter().enumerate().map(|(i, h)| CurveRow {
            step: i + 1,
            stage: h.stage,
            epoch: h.epoch,
            l_cls: h.l_cls,
            l_scr: h.l_scr,
            mean_reward: h.mean_reward,
        }),
    )
}

pub fn read_training_curves_csv<R: Read>(r: R) -> Result<Vec<CurveRow>> {
    read_rows(r)
}
