//! Pseudo point labels from propagation scores.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::grid::{BinaryMask, PointSet};
use crate::tpm::Matrix;
use crate::{Error, Result};

/// Average propagated probability from the FG and BG seed sets to every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropagationScores {
    pub pi_fg: Vec<f64>,
    pub pi_bg: Vec<f64>,
}

impl PropagationScores {
    pub fn n(&self) -> usize {
        self.pi_fg.len()
    }

    /// `π^(f) - π^(b)` for a node.
    pub fn margin(&self, node: usize) -> f64 {
        self.pi_fg[node] - self.pi_bg[node]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Fg,
    Bg,
    Unlabeled,
}

impl Label {
    pub fn as_char(self) -> char {
        match self {
            Label::Fg => 'F',
            Label::Bg => 'B',
            Label::Unlabeled => '.',
        }
    }

    pub fn from_char(c: char) -> Option<Label> {
        match c {
            'F' => Some(Label::Fg),
            'B' => Some(Label::Bg),
            '.' => Some(Label::Unlabeled),
            _ => None,
        }
    }
}

/// How the propagated matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hops {
    Power { alpha: u32 },
    Absorbing { beta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoPointLabels {
    pub labels: Vec<Label>,
    pub tau_fg: f64,
    pub tau_bg: f64,
    pub hops: Hops,
}

impl PseudoPointLabels {
    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn nodes_with(&self, label: Label) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == label)
            .map(|(i, _)| i)
            .collect()
    }

    /// True when no node carries a retrieved label; triggers the MIL fallback.
    pub fn retrieved_empty(&self) -> bool {
        self.labels.iter().all(|&l| l == Label::Unlabeled)
    }

    /// Labels as a compact string, one character per node.
    pub fn to_code(&self) -> String {
        self.labels.iter().map(|l| l.as_char()).collect()
    }
}

/// Sparse target `Ŷ` and supervision mask `K` on the `N x N` patch grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparseTarget {
    pub y_hat: BinaryMask,
    pub k_mask: BinaryMask,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    /// Fraction of each labeled set to drop, in `[0, 1)`.
    pub rate: f64,
    pub seed: u64,
    /// Minimum survivors of a nonempty set.
    pub keep_floor: usize,
}

impl Default for DropoutConfig {
    fn default() -> Self {
        DropoutConfig {
            rate: 0.9,
            seed: 0,
            keep_floor: 1,
        }
    }
}

/// Per-object, per-epoch seed: `base ^ mix(object_id, epoch)`.
pub fn derive_seed(base: u64, object_id: u64, epoch: u64) -> u64 {
    base ^ splitmix64(object_id ^ splitmix64(epoch.wrapping_add(0x5EED)))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `π_i = mean_{j ∈ seeds} P(j, i)` for the FG and BG seed sets.
pub fn propagation_scores(
    propagated: &Matrix,
    fg: &PointSet,
    bg: &PointSet,
) -> Result<PropagationScores> {
    if fg.is_empty() || bg.is_empty() {
        return Err(Error::EmptySeedSet);
    }
    let n = propagated.n();
    if let Some(&bad) = fg.nodes().iter().chain(bg.nodes()).find(|&&j| j >= n) {
        return Err(Error::size_mismatch(format!("node < {n}"), bad));
    }
    if let Some(&both) = fg.nodes().iter().find(|&&j| bg.contains(j)) {
        return Err(Error::Overlap(both));
    }
    let mean_rows = |seeds: &PointSet| -> Vec<f64> {
        let mut acc = vec![0.0; n];
        for &j in seeds.nodes() {
            for (a, v) in acc.iter_mut().zip(propagated.row(j)) {
                *a += v;
            }
        }
        let k = seeds.len() as f64;
        acc.into_iter().map(|a| a / k).collect()
    };
    Ok(PropagationScores {
        pi_fg: mean_rows(fg),
        pi_bg: mean_rows(bg),
    })
}

/// Label box nodes by score margin: FG if `≥ τ_fg`, BG if `≤ τ_bg`.
/// Nodes outside `box_nodes` are always unlabeled.
pub fn threshold_labels(
    scores: &PropagationScores,
    box_nodes: &PointSet,
    tau_fg: f64,
    tau_bg: f64,
    hops: Hops,
) -> Result<PseudoPointLabels> {
    if !(tau_bg < tau_fg) {
        return Err(Error::InvalidThresholds { tau_fg, tau_bg });
    }
    let mut labels = vec![Label::Unlabeled; scores.n()];
    for &i in box_nodes.nodes() {
        let Some(slot) = labels.get_mut(i) else {
            return Err(Error::size_mismatch(format!("node < {}", scores.n()), i));
        };
        let margin = scores.margin(i);
        if margin >= tau_fg {
            *slot = Label::Fg;
        } else if margin <= tau_bg {
            *slot = Label::Bg;
        }
    }
    Ok(PseudoPointLabels {
        labels,
        tau_fg,
        tau_bg,
        hops,
    })
}

/// Keep a uniform random subset of `max(keep_floor, round((1-rate)·|set|))`
/// nodes from each of the FG and BG sets; the rest become unlabeled.
///
/// FG draws use stream 0 and BG draws stream 1 of the same seeded generator,
/// so resizing one set leaves the other's sample unchanged.
pub fn point_dropout(labels: &PseudoPointLabels, cfg: &DropoutConfig) -> Result<PseudoPointLabels> {
    if !(0.0..1.0).contains(&cfg.rate) {
        return Err(Error::InvalidParameter(format!(
            "dropout rate {} outside [0, 1)",
            cfg.rate
        )));
    }
    let mut out = labels.clone();
    for (stream, label) in [(0_u64, Label::Fg), (1, Label::Bg)] {
        let members = labels.nodes_with(label);
        if members.is_empty() {
            continue;
        }
        let keep = ((1.0 - cfg.rate) * members.len() as f64).round() as usize;
        let keep = keep.max(cfg.keep_floor).min(members.len());
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let mut survivors = vec![false; members.len()];
        for k in sample(&mut rng, members.len(), keep) {
            survivors[k] = true;
        }
        for (&node, kept) in members.iter().zip(survivors) {
            if !kept {
                out.labels[node] = Label::Unlabeled;
            }
        }
    }
    Ok(out)
}

/// `Ŷ = 1` on `P_FG ∪ P̂_FG`; `K = 1` on `P_FG ∪ P̂_FG ∪ P_BG ∪ P̂_BG`.
pub fn assemble_targets(
    fg: &PointSet,
    bg: &PointSet,
    labels: &PseudoPointLabels,
    side: usize,
) -> Result<SparseTarget> {
    let n = side * side;
    if labels.labels.len() != n {
        return Err(Error::size_mismatch(n, labels.labels.len()));
    }
    let mut state = labels.labels.clone();
    for (set, label) in [(fg, Label::Fg), (bg, Label::Bg)] {
        for &node in set.nodes() {
            let slot = state
                .get_mut(node)
                .ok_or_else(|| Error::size_mismatch(format!("node < {n}"), node))?;
            match *slot {
                Label::Unlabeled => *slot = label,
                existing if existing == label => {}
                _ => return Err(Error::Overlap(node)),
            }
        }
    }
    let y_hat = state.iter().map(|&l| u8::from(l == Label::Fg)).collect();
    let k_mask = state.iter().map(|&l| u8::from(l != Label::Unlabeled)).collect();
    Ok(SparseTarget {
        y_hat: BinaryMask::from_vec(side, side, y_hat)?,
        k_mask: BinaryMask::from_vec(side, side, k_mask)?,
    })
}

/// Seeds and retrieved labels merged into one map over all nodes.
pub fn merged_labels(fg: &PointSet, bg: &PointSet, labels: &PseudoPointLabels) -> Result<Vec<Label>> {
    let mut state = labels.labels.clone();
    for (set, label) in [(fg, Label::Fg), (bg, Label::Bg)] {
        for &node in set.nodes() {
            match state.get(node) {
                Some(Label::Unlabeled) => state[node] = label,
                Some(existing) if *existing == label => {}
                Some(_) => return Err(Error::Overlap(node)),
                None => return Err(Error::size_mismatch(state.len(), node)),
            }
        }
    }
    Ok(state)
}
