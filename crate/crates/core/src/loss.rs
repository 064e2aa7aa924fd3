//! Loss kernels used to supervise a mask predictor with sparse point labels.

use serde::{Deserialize, Serialize};

use crate::grid::{BinaryMask, ProbMask};
use crate::retrieval::SparseTarget;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub point: f64,
    pub crf: f64,
    pub mil: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            point: 0.5,
            crf: 0.5,
            mil: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("point", self.point), ("crf", self.crf), ("mil", self.mil)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("lambda_{name} = {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiceConfig {
    /// Smoothing added to numerator and denominator.
    pub eps: f64,
}

impl Default for DiceConfig {
    fn default() -> Self {
        DiceConfig { eps: 1e-6 }
    }
}

impl DiceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("dice eps {}", self.eps)));
        }
        Ok(())
    }
}

fn check_same(p: &ProbMask, q: &ProbMask) -> Result<()> {
    q.same_shape(p.width(), p.height())
}

/// `1 - (2Σpq + ε) / (Σp + Σq + ε)` over two equal-length vectors.
pub fn dice_slices(p: &[f64], q: &[f64], eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::size_mismatch(p.len(), q.len()));
    }
    let (mut inter, mut sp, mut sq) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(q) {
        inter += a * b;
        sp += a;
        sq += b;
    }
    Ok(1.0 - (2.0 * inter + eps) / (sp + sq + eps))
}

pub fn dice_loss(p: &ProbMask, q: &ProbMask, cfg: &DiceConfig) -> Result<f64> {
    check_same(p, q)?;
    dice_slices(p.values(), q.values(), cfg.eps)
}

/// Analytic `∂L/∂p` of [`dice_loss`], row-major like `p`.
pub fn dice_grad(p: &ProbMask, q: &ProbMask, cfg: &DiceConfig) -> Result<Vec<f64>> {
    check_same(p, q)?;
    let (mut inter, mut sp, mut sq) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.values().iter().zip(q.values()) {
        inter += a * b;
        sp += a;
        sq += b;
    }
    let num = 2.0 * inter + cfg.eps;
    let den = sp + sq + cfg.eps;
    Ok(q
        .values()
        .iter()
        .map(|&qk| -(2.0 * qk * den - num) / (den * den))
        .collect())
}

/// Per-column maxima (length `width`).
pub fn project_x(m: &ProbMask) -> Vec<f64> {
    (0..m.width())
        .map(|x| (0..m.height()).map(|y| m.get(x, y)).fold(0.0, f64::max))
        .collect()
}

/// Per-row maxima (length `height`).
pub fn project_y(m: &ProbMask) -> Vec<f64> {
    (0..m.height())
        .map(|y| (0..m.width()).map(|x| m.get(x, y)).fold(0.0, f64::max))
        .collect()
}

/// Dice between the max-projections of a prediction and a box mask, summed
/// over both axes.
pub fn mil_loss(m: &ProbMask, box_mask: &BinaryMask, cfg: &DiceConfig) -> Result<f64> {
    let b = box_mask.to_prob();
    check_same(m, &b)?;
    let lx = dice_slices(&project_x(m), &project_x(&b), cfg.eps)?;
    let ly = dice_slices(&project_y(m), &project_y(&b), cfg.eps)?;
    Ok(lx + ly)
}

/// Average pooling onto an `cells x cells` grid.
pub fn downsample_mask(m: &ProbMask, cells: usize) -> Result<ProbMask> {
    let (w, h) = (m.width(), m.height());
    if cells == 0 || w % cells != 0 || h % cells != 0 {
        return Err(Error::NotDivisible {
            width: w,
            height: h,
            cells,
        });
    }
    let (cw, ch) = (w / cells, h / cells);
    let area = (cw * ch) as f64;
    let mut out = Vec::with_capacity(cells * cells);
    for cy in 0..cells {
        for cx in 0..cells {
            let mut sum = 0.0;
            for y in cy * ch..(cy + 1) * ch {
                for x in cx * cw..(cx + 1) * cw {
                    sum += m.get(x, y);
                }
            }
            out.push((sum / area).clamp(0.0, 1.0));
        }
    }
    ProbMask::new(cells, cells, out)
}

/// `L_dice(M̃ ⊙ K, Ŷ)`, plus `λ_mil · L_mil(M, box)` when nothing was retrieved.
pub fn point_loss(
    m_tilde: &ProbMask,
    target: &SparseTarget,
    retrieved_empty: bool,
    m: &ProbMask,
    box_mask: &BinaryMask,
    weights: &LossWeights,
    cfg: &DiceConfig,
) -> Result<f64> {
    let (w, h) = (target.y_hat.width(), target.y_hat.height());
    m_tilde.same_shape(w, h)?;
    let masked: Vec<f64> = m_tilde
        .values()
        .iter()
        .zip(target.k_mask.values())
        .map(|(&v, &k)| if k != 0 { v } else { 0.0 })
        .collect();
    let y_hat: Vec<f64> = target.y_hat.values().iter().map(|&v| f64::from(v)).collect();
    let mut loss = dice_slices(&masked, &y_hat, cfg.eps)?;
    if retrieved_empty {
        loss += weights.mil * mil_loss(m, box_mask, cfg)?;
    }
    Ok(loss)
}

/// Entrywise mean of student and teacher predictions.
pub fn average_predictions(student: &ProbMask, teacher: &ProbMask) -> Result<ProbMask> {
    check_same(student, teacher)?;
    let avg = student
        .values()
        .iter()
        .zip(teacher.values())
        .map(|(a, b)| (a + b) / 2.0)
        .collect();
    ProbMask::new(student.width(), student.height(), avg)
}

pub fn crf_loss(student: &ProbMask, refined: &ProbMask, cfg: &DiceConfig) -> Result<f64> {
    dice_loss(student, refined, cfg)
}

/// `λ_point · L_point + λ_crf · L_crf`.
pub fn overall_loss(point: f64, crf: f64, weights: &LossWeights) -> Result<f64> {
    if !point.is_finite() || !crf.is_finite() {
        return Err(Error::NonFinite(format!("loss components {point}, {crf}")));
    }
    let total = weights.point * point + weights.crf * crf;
    if !total.is_finite() {
        return Err(Error::NonFinite(format!("overall loss {total}")));
    }
    Ok(total)
}
