//! Overlapping error and dataset-level reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, Mask, CUP, RIM};

/// `1 − |pred ∩ gt| / |pred ∪ gt|`; two empty masks agree perfectly (0).
pub fn overlap_error(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if (pred.height, pred.width) != (gt.height, gt.width) {
        return Err(Error::Geometry(format!(
            "masks {}x{} and {}x{} differ",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        inter += (p && g) as usize;
        union += (p || g) as usize;
    }
    if union == 0 {
        return Ok(0.0);
    }
    Ok(1.0 - inter as f64 / union as f64)
}

/// Disc pixels are those labelled rim or cup.
pub fn merge_od(mask: &Mask) -> Result<BinaryMask> {
    if let Some(v) = mask.invalid_value() {
        return Err(Error::Geometry(format!("class value {v} outside {{0, 1, 2}}")));
    }
    BinaryMask::new(mask.height, mask.width, mask.data.iter().map(|&c| c == RIM || c == CUP).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Errors {
    pub e_disc: f64,
    pub e_cup: f64,
    pub e_rim: f64,
}

/// Per-class overlapping errors of one predicted mask.
pub fn score(pred: &Mask, gt: &Mask) -> Result<Errors> {
    Ok(Errors {
        e_disc: overlap_error(&merge_od(pred)?, &merge_od(gt)?)?,
        e_cup: overlap_error(&pred.binary(CUP), &gt.binary(CUP))?,
        e_rim: overlap_error(&pred.binary(RIM), &gt.binary(RIM))?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub id: String,
    #[serde(flatten)]
    pub errors: Errors,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalFrame {
    /// Cartesian disc window, after the inverse polar transform.
    Cartesian,
    Polar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub mean: Errors,
    pub count: usize,
    pub tta: bool,
    pub frame: EvalFrame,
    pub config_hash: Option<String>,
    pub checkpoint_hash: Option<String>,
    pub samples: Vec<SampleScore>,
}

#[derive(Serialize)]
struct SummaryRecord<'a> {
    record: &'static str,
    #[serde(flatten)]
    mean: Errors,
    count: usize,
    tta: bool,
    frame: EvalFrame,
    config_hash: &'a Option<String>,
    checkpoint_hash: &'a Option<String>,
}

#[derive(Serialize)]
struct SampleRecord<'a> {
    record: &'static str,
    #[serde(flatten)]
    score: &'a SampleScore,
}

impl EvalReport {
    /// Arithmetic means over the per-sample scores, kept in input order.
    pub fn from_scores(samples: Vec<SampleScore>, tta: bool, frame: EvalFrame) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Config("evaluation split is empty".into()));
        }
        let n = samples.len() as f64;
        let mean = |f: fn(&Errors) -> f64| samples.iter().map(|s| f(&s.errors)).sum::<f64>() / n;
        Ok(Self {
            mean: Errors {
                e_disc: mean(|e| e.e_disc),
                e_cup: mean(|e| e.e_cup),
                e_rim: mean(|e| e.e_rim),
            },
            count: samples.len(),
            tta,
            frame,
            config_hash: None,
            checkpoint_hash: None,
            samples,
        })
    }

    /// One JSON record per sample followed by a summary record.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.samples {
            out += &serde_json::to_string(&SampleRecord { record: "sample", score: s }).expect("serializable");
            out.push('\n');
        }
        let summary = SummaryRecord {
            record: "summary",
            mean: self.mean,
            count: self.count,
            tta: self.tta,
            frame: self.frame,
            config_hash: &self.config_hash,
            checkpoint_hash: &self.checkpoint_hash,
        };
        out += &serde_json::to_string(&summary).expect("serializable");
        out.push('\n');
        out
    }

    pub fn csv_header() -> &'static str {
        "method,E_disc,E_cup,E_rim"
    }

    pub fn csv_row(&self, method: &str) -> String {
        format_row(method, &self.mean)
    }
}

pub fn format_row(method: &str, e: &Errors) -> String {
    format!("{method},{:.4},{:.4},{:.4}", e.e_disc, e.e_cup, e.e_rim)
}
