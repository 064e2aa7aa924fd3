//! Per-object pseudo-mask generation from extreme points and a patch
//! similarity matrix.
//!
//! Steps: crop window and seed sets, Sinkhorn balancing, symmetrization,
//! propagation, score thresholding, densification of the labels over the
//! grid, and binarization at 0.5. The CRF refinement of the densified mask on
//! the cropped image is the teacher of the CRF loss term; it replaces the
//! densified mask before binarization only when configured to.
//! The tightness baseline shares every step except the labeling.

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::crf::{meanfield_refine, GuideImage};
use crate::grid::{
    bbox_from_extremes, box_interior, initial_background, initial_foreground, nodes_centered_in,
    BBox, BinaryMask, CropWindow, ExtremePoints, Pixel, PointSet, ProbMask,
};
use crate::loss::{crf_loss, overall_loss, point_loss};
use crate::retrieval::{
    assemble_targets, merged_labels, propagation_scores, threshold_labels, Hops, Label,
    PropagationScores, PseudoPointLabels, SparseTarget,
};
use crate::synth::tightness_baseline_labels;
use crate::tpm::{build_transition, propagate_absorbing, propagate_power, Matrix, SimilarityMatrix};
use crate::{Error, Result};

/// Binarization threshold of pseudo masks.
pub const MASK_THRESHOLD: f64 = 0.5;

/// Crop window and seed sets of one object.
#[derive(Debug, Clone, PartialEq)]
pub struct Seeds {
    pub bbox: BBox,
    pub window: CropWindow,
    /// Seed offset converted to source pixels.
    pub delta_px: u32,
    pub fg: PointSet,
    pub bg: PointSet,
    pub interior: PointSet,
}

/// `δ` is given in resized-crop pixels; the crop is scaled by
/// `target_side / mean(width, height)`.
pub fn source_delta(delta: u32, window: &CropWindow) -> u32 {
    let mean_side = (window.width() + window.height()) as f64 / 2.0;
    (f64::from(delta) * mean_side / f64::from(window.target_side())).round() as u32
}

pub fn seeds_for(ep: &ExtremePoints, cfg: &RunConfig) -> Result<Seeds> {
    let bbox = bbox_from_extremes(ep);
    let window = CropWindow::around(&bbox, cfg.crop_pad, cfg.target_side, cfg.patch_side)?;
    let delta_px = source_delta(cfg.delta, &window);
    let fg = initial_foreground(ep, delta_px, &bbox, &window)?;
    let bg = initial_background(&bbox, &window)?;
    let interior = box_interior(&bbox, &window, &fg)?;
    Ok(Seeds {
        bbox,
        window,
        delta_px,
        fg,
        bg,
        interior,
    })
}

#[derive(Debug, Clone)]
pub struct Propagation {
    pub sinkhorn_iterations: usize,
    pub propagated: Matrix,
}

/// Sinkhorn, symmetrization, then `T^α` or the absorbing-chain closed form.
pub fn propagate(similarity: &SimilarityMatrix, cfg: &RunConfig) -> Result<Propagation> {
    let (t, balanced) = build_transition(similarity, &cfg.sinkhorn())?;
    let propagated = match cfg.hops() {
        Hops::Power { alpha } => propagate_power(&t, alpha)?,
        Hops::Absorbing { beta } => propagate_absorbing(&t, beta)?,
    };
    Ok(Propagation {
        sinkhorn_iterations: balanced.iterations,
        propagated,
    })
}

/// Labeled nodes keep 1 (FG) or 0 (BG); an unlabeled node `i` takes the
/// label average weighted by `P(j, i)` over labeled `j`, or 0 if none reach it.
pub fn densify(propagated: &Matrix, labels: &[Label]) -> Result<Vec<f64>> {
    let n = propagated.n();
    if labels.len() != n {
        return Err(Error::size_mismatch(n, labels.len()));
    }
    let (mut to_fg, mut total) = (vec![0.0; n], vec![0.0; n]);
    for (j, &label) in labels.iter().enumerate() {
        if label == Label::Unlabeled {
            continue;
        }
        for (i, &p) in propagated.row(j).iter().enumerate() {
            total[i] += p;
            if label == Label::Fg {
                to_fg[i] += p;
            }
        }
    }
    Ok(labels
        .iter()
        .enumerate()
        .map(|(i, &label)| match label {
            Label::Fg => 1.0,
            Label::Bg => 0.0,
            Label::Unlabeled if total[i] > 0.0 => (to_fg[i] / total[i]).clamp(0.0, 1.0),
            Label::Unlabeled => 0.0,
        })
        .collect())
}

/// Node probabilities painted over the window pixels; zero outside the box.
pub fn render_window(node_probs: &[f64], seeds: &Seeds) -> Result<ProbMask> {
    let w = &seeds.window;
    if node_probs.len() != w.n_nodes() {
        return Err(Error::size_mismatch(w.n_nodes(), node_probs.len()));
    }
    let r = w.rect();
    let mut data = Vec::with_capacity(w.width() * w.height());
    for y in r.y_min..=r.y_max {
        for x in r.x_min..=r.x_max {
            let p = Pixel::new(x, y);
            data.push(if seeds.bbox.contains(p) {
                node_probs[w.node_of(p)]
            } else {
                0.0
            });
        }
    }
    ProbMask::new(w.width(), w.height(), data)
}

/// Pseudo mask of one labeling.
#[derive(Debug, Clone)]
pub struct MaskOutcome {
    pub node_probs: Vec<f64>,
    /// Densified labels over the window pixels.
    pub coarse: ProbMask,
    /// CRF output over the window pixels, when it was computed.
    pub refined: Option<ProbMask>,
    /// Binarized mask in the image frame, restricted to the box.
    pub mask: BinaryMask,
}

/// Densify, optionally refine on the cropped guide, binarize, and paste
/// into the image frame. The refinement is binarized only when
/// `cfg.refine_pseudo_masks` is set.
pub fn finish_mask(
    propagated: &Matrix,
    labels: &[Label],
    seeds: &Seeds,
    image: &GuideImage,
    cfg: &RunConfig,
    want_refined: bool,
) -> Result<MaskOutcome> {
    let node_probs = densify(propagated, labels)?;
    let coarse = render_window(&node_probs, seeds)?;
    let r = seeds.window.rect();
    let refined = if want_refined || cfg.refine_pseudo_masks {
        let guide = image.crop(&r);
        Some(meanfield_refine(&coarse, &guide, &cfg.crf())?)
    } else {
        None
    };
    let source = match (&refined, cfg.refine_pseudo_masks) {
        (Some(m), true) => m,
        _ => &coarse,
    };
    let mask = BinaryMask::from_fn(image.width(), image.height(), |x, y| {
        let p = Pixel::new(x as i32, y as i32);
        seeds.bbox.contains(p)
            && r.contains(p)
            && source.get((p.x - r.x_min) as usize, (p.y - r.y_min) as usize) >= MASK_THRESHOLD
    })?;
    Ok(MaskOutcome {
        node_probs,
        coarse,
        refined,
        mask,
    })
}

/// Loss terms of the densified prediction against the sparse target and the
/// patch-averaged CRF refinement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub point: f64,
    pub crf: f64,
    pub overall: f64,
    pub retrieved_empty: bool,
}

fn patch_means(refined: &ProbMask, window: &CropWindow) -> Result<ProbMask> {
    let r = window.rect();
    let means = (0..window.n_nodes())
        .map(|node| {
            let p = window.patch_rect(node);
            let mut sum = 0.0;
            for y in p.y_min..=p.y_max {
                for x in p.x_min..=p.x_max {
                    sum += refined.get((x - r.x_min) as usize, (y - r.y_min) as usize);
                }
            }
            sum / f64::from(p.width() * p.height())
        })
        .collect();
    let side = window.patch_side();
    ProbMask::new(side, side, means)
}

pub fn loss_stats(
    outcome: &MaskOutcome,
    target: &SparseTarget,
    labels: &PseudoPointLabels,
    seeds: &Seeds,
    cfg: &RunConfig,
) -> Result<LossStats> {
    let side = seeds.window.patch_side();
    let prediction = ProbMask::new(side, side, outcome.node_probs.clone())?;
    let mut box_mask = BinaryMask::new(side, side)?;
    for node in nodes_centered_in(&seeds.bbox, &seeds.window) {
        let (c, r) = seeds.window.node_xy(node);
        box_mask.set(c, r, true);
    }
    let retrieved_empty = labels.retrieved_empty();
    let point = point_loss(
        &prediction,
        target,
        retrieved_empty,
        &prediction,
        &box_mask,
        &cfg.weights(),
        &cfg.dice(),
    )?;
    let refined = outcome.refined.as_ref().ok_or_else(|| {
        Error::InvalidParameter("loss statistics need the CRF refinement".into())
    })?;
    let crf = crf_loss(&prediction, &patch_means(refined, &seeds.window)?, &cfg.dice())?;
    Ok(LossStats {
        point,
        crf,
        overall: overall_loss(point, crf, &cfg.weights())?,
        retrieved_empty,
    })
}

#[derive(Debug, Clone)]
pub struct BaselineResult {
    pub labels: PseudoPointLabels,
    /// Baseline labels with the FG seeds added.
    pub merged: Vec<Label>,
    pub outcome: MaskOutcome,
}

#[derive(Debug, Clone)]
pub struct ObjectResult {
    pub seeds: Seeds,
    pub sinkhorn_iterations: usize,
    pub scores: PropagationScores,
    /// Retrieved labels over the box interior.
    pub labels: PseudoPointLabels,
    /// Seeds and retrieved labels together.
    pub merged: Vec<Label>,
    pub target: SparseTarget,
    pub outcome: MaskOutcome,
    pub loss: LossStats,
    pub baseline: Option<BaselineResult>,
}

/// Labels and masks for one object; `with_baseline` also runs the
/// tightness-prior labeler through the same densify and refine steps.
pub fn run_object(
    image: &GuideImage,
    seeds: Seeds,
    similarity: &SimilarityMatrix,
    cfg: &RunConfig,
    with_baseline: bool,
) -> Result<ObjectResult> {
    let n = seeds.window.n_nodes();
    if similarity.n() != n {
        return Err(Error::size_mismatch(n, similarity.n()));
    }
    let prop = propagate(similarity, cfg)?;
    let scores = propagation_scores(&prop.propagated, &seeds.fg, &seeds.bg)?;
    let labels = threshold_labels(&scores, &seeds.interior, cfg.tau_fg, cfg.tau_bg, cfg.hops())?;
    let merged = merged_labels(&seeds.fg, &seeds.bg, &labels)?;
    let target = assemble_targets(&seeds.fg, &seeds.bg, &labels, seeds.window.patch_side())?;
    let outcome = finish_mask(&prop.propagated, &merged, &seeds, image, cfg, true)?;
    let loss = loss_stats(&outcome, &target, &labels, &seeds, cfg)?;

    let baseline = if with_baseline {
        let labels = tightness_baseline_labels(&seeds.window, &seeds.bbox, similarity, &seeds.fg)?;
        let mut merged = labels.labels.clone();
        for &node in seeds.fg.nodes() {
            merged[node] = Label::Fg;
        }
        let outcome = finish_mask(&prop.propagated, &merged, &seeds, image, cfg, false)?;
        Some(BaselineResult {
            labels,
            merged,
            outcome,
        })
    } else {
        None
    };

    Ok(ObjectResult {
        seeds,
        sinkhorn_iterations: prop.sinkhorn_iterations,
        scores,
        labels,
        merged,
        target,
        outcome,
        loss,
        baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn densify_weights_by_reach() {
        let p = Matrix::from_vec(3, vec![0.5, 0.25, 0.25, 0.0, 1.0, 0.0, 0.25, 0.25, 0.5]).unwrap();
        let probs = densify(&p, &[Label::Fg, Label::Unlabeled, Label::Bg]).unwrap();
        assert_eq!(probs, vec![1.0, 0.5, 0.0]);
        let probs = densify(&p, &[Label::Unlabeled, Label::Fg, Label::Unlabeled]).unwrap();
        assert_eq!(probs, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn delta_scales_with_window() {
        let w = CropWindow::new(BBox::new(0, 0, 63, 63).unwrap(), 512, 32).unwrap();
        assert_eq!(source_delta(24, &w), 3);
        assert_eq!(source_delta(0, &w), 0);
    }
}
