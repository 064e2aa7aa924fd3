//! Mask IoU, pseudo point-label precision/recall, and retention rate.

use serde::{Deserialize, Serialize};

use crate::grid::BinaryMask;
use crate::retrieval::{Label, PseudoPointLabels};
use crate::{Error, Result};

/// `|pred ∧ gt| / |pred ∨ gt|`; two empty masks score 1.
pub fn iou(pred: &BinaryMask, gt: &BinaryMask) -> Result<f64> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::size_mismatch(
            format!("{}x{}", gt.width(), gt.height()),
            format!("{}x{}", pred.width(), pred.height()),
        ));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        inter += usize::from(p & g);
        union += usize::from(p | g);
    }
    if union == 0 {
        return Ok(1.0);
    }
    Ok(inter as f64 / union as f64)
}

/// Confusion counts of FG and BG point labels against patch ground truth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointCounts {
    pub fg_true_pos: usize,
    pub fg_predicted: usize,
    pub fg_actual: usize,
    pub bg_true_pos: usize,
    pub bg_predicted: usize,
    pub bg_actual: usize,
}

impl PointCounts {
    pub fn add(&mut self, other: &PointCounts) {
        self.fg_true_pos += other.fg_true_pos;
        self.fg_predicted += other.fg_predicted;
        self.fg_actual += other.fg_actual;
        self.bg_true_pos += other.bg_true_pos;
        self.bg_predicted += other.bg_predicted;
        self.bg_actual += other.bg_actual;
    }

    pub fn scores(&self) -> PointScores {
        PointScores {
            precision_fg: ratio(self.fg_true_pos, self.fg_predicted),
            recall_fg: ratio(self.fg_true_pos, self.fg_actual),
            precision_bg: ratio(self.bg_true_pos, self.bg_predicted),
            recall_bg: ratio(self.bg_true_pos, self.bg_actual),
        }
    }
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Precision and recall; `None` where the denominator is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScores {
    pub precision_fg: Option<f64>,
    pub recall_fg: Option<f64>,
    pub precision_bg: Option<f64>,
    pub recall_bg: Option<f64>,
}

/// Counts FG labels against object patches and BG labels against the rest.
pub fn point_label_counts(labels: &PseudoPointLabels, gt_object: &[bool]) -> Result<PointCounts> {
    if labels.labels.len() != gt_object.len() {
        return Err(Error::size_mismatch(gt_object.len(), labels.labels.len()));
    }
    let mut c = PointCounts::default();
    for (&label, &object) in labels.labels.iter().zip(gt_object) {
        if object {
            c.fg_actual += 1;
        } else {
            c.bg_actual += 1;
        }
        match label {
            Label::Fg => {
                c.fg_predicted += 1;
                c.fg_true_pos += usize::from(object);
            }
            Label::Bg => {
                c.bg_predicted += 1;
                c.bg_true_pos += usize::from(!object);
            }
            Label::Unlabeled => {}
        }
    }
    Ok(c)
}

pub fn point_label_pr(labels: &PseudoPointLabels, gt_object: &[bool]) -> Result<PointScores> {
    Ok(point_label_counts(labels, gt_object)?.scores())
}

/// Weakly supervised score as a fraction of the fully supervised one.
pub fn retention(ap_weak: f64, ap_full: f64) -> Result<f64> {
    if !(ap_full > 0.0) {
        return Err(Error::DivisionByZero(format!(
            "fully supervised score {ap_full} must be positive"
        )));
    }
    Ok(ap_weak / ap_full)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_objects: usize,
    pub per_object_iou: Vec<f64>,
    /// `None` when there are no objects.
    pub mean_iou: Option<f64>,
    pub point_precision_fg: Option<f64>,
    pub point_recall_fg: Option<f64>,
    pub point_precision_bg: Option<f64>,
    pub point_recall_bg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<Box<EvalReport>>,
}

impl EvalReport {
    /// Aggregates per-object IoUs and pooled point-label counts.
    pub fn new(per_object_iou: Vec<f64>, counts: &PointCounts) -> Self {
        let n = per_object_iou.len();
        let mean_iou = (n > 0).then(|| per_object_iou.iter().sum::<f64>() / n as f64);
        let s = counts.scores();
        EvalReport {
            n_objects: n,
            per_object_iou,
            mean_iou,
            point_precision_fg: s.precision_fg,
            point_recall_fg: s.recall_fg,
            point_precision_bg: s.precision_bg,
            point_recall_bg: s.recall_bg,
            baseline: None,
        }
    }
}
