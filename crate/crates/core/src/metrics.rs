//! 3D IoU and Acc@k over the Unique / Multiple splits.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::Box3D;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("no evaluation records")]
    Empty,
}

pub fn iou3d(a: &Box3D, b: &Box3D) -> f64 {
    let inter = a.intersection_volume(b);
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Unique,
    Multiple,
}

impl Split {
    pub fn from_distractors(count: usize) -> Self {
        if count == 0 {
            Split::Unique
        } else {
            Split::Multiple
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query_id: String,
    pub pred: Option<Box3D>,
    pub gt: Box3D,
    pub iou: f64,
    pub distractor_count: usize,
    pub split: Split,
}

impl EvalRecord {
    /// Scores `pred` against `gt`; a missing prediction scores 0.
    pub fn new(query_id: String, pred: Option<Box3D>, gt: Box3D, distractor_count: usize) -> Self {
        let iou = pred.as_ref().map_or(0.0, |p| iou3d(p, &gt));
        Self {
            query_id,
            pred,
            gt,
            iou,
            distractor_count,
            split: Split::from_distractors(distractor_count),
        }
    }
}

/// Hit fractions; a split with no records is `None`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccTable {
    pub threshold: f64,
    pub overall: f64,
    pub unique: Option<f64>,
    pub multiple: Option<f64>,
    pub n: usize,
    pub n_unique: usize,
    pub n_multiple: usize,
}

pub fn acc_at(records: &[EvalRecord], threshold: f64) -> Result<AccTable, MetricsError> {
    if records.is_empty() {
        return Err(MetricsError::Empty);
    }
    let frac = |rs: &Vec<&EvalRecord>| {
        (!rs.is_empty()).then(|| rs.iter().filter(|r| r.iou >= threshold).count() as f64 / rs.len() as f64)
    };
    let all: Vec<&EvalRecord> = records.iter().collect();
    let unique: Vec<&EvalRecord> = records.iter().filter(|r| r.split == Split::Unique).collect();
    let multiple: Vec<&EvalRecord> = records.iter().filter(|r| r.split == Split::Multiple).collect();
    Ok(AccTable {
        threshold,
        overall: frac(&all).unwrap_or(0.0),
        unique: frac(&unique),
        multiple: frac(&multiple),
        n: all.len(),
        n_unique: unique.len(),
        n_multiple: multiple.len(),
    })
}
