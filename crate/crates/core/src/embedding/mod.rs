//! Semantics-geometry embedding: a scalar `e = s · g` per box, where `g` is
//! the box's geometric feature and `s` a semantic weight vector predicted
//! from the box's region descriptor.
//!
//! This module holds the embedding itself, the assignment of boxes to
//! ground truth, and the group / separation losses. The trainable
//! descriptor-to-weight map lives in [`provider`], its optimizer in [`train`].

pub mod provider;
pub mod train;

use crate::error::{Error, Result};
use crate::evaluation::Scene;
use crate::geometry::{BBox, GeometricFeature};
use crate::scalar::Scalar;

pub use provider::{EmbeddingScene, LinearSemanticProvider, LossBreakdown};
pub use train::{train_provider, LossRecord, TrainHyper, TrainOutcome};

/// Per-component weights applied to a geometric feature.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SemanticFeature<T>(pub [T; 4]);

impl<T: Scalar> SemanticFeature<T> {
    pub fn new(s: [T; 4]) -> Result<Self> {
        if s.iter().all(|v| v.is_finite()) {
            Ok(Self(s))
        } else {
            Err(Error::InvalidParameter("semantic feature must be finite".into()))
        }
    }
}

/// Scalar embedding value of one box.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd)]
pub struct Embedding<T>(pub T);

impl<T: Scalar> Embedding<T> {
    pub fn value(self) -> T {
        self.0
    }

    pub fn distance(self, other: Self) -> T {
        (self.0 - other.0).abs()
    }
}

/// `e = s1*x + s2*y + s3*w + s4*h`.
pub fn compute_sge<T: Scalar>(s: &SemanticFeature<T>, g: &GeometricFeature<T>) -> Embedding<T> {
    let g = g.as_array();
    Embedding(s.0.iter().zip(g.iter()).map(|(a, b)| *a * *b).sum())
}

/// Thresholds for box assignment and the separation margin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmbeddingLossConfig<T> {
    /// IoU above which a box is assigned to its best ground truth.
    pub theta: T,
    /// IoU with the second-best ground truth above which a box counts as occluded.
    pub rho: T,
    /// Separation margin.
    pub sigma: T,
}

impl<T: Scalar> Default for EmbeddingLossConfig<T> {
    fn default() -> Self {
        Self {
            theta: T::lit(0.7),
            rho: T::lit(0.27),
            sigma: T::lit(0.3),
        }
    }
}

impl<T: Scalar> EmbeddingLossConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: T| v > T::zero() && v <= T::one();
        if !unit(self.theta) {
            return Err(Error::InvalidParameter(format!(
                "theta must lie in (0, 1], got {}",
                self.theta
            )));
        }
        if !unit(self.rho) {
            return Err(Error::InvalidParameter(format!(
                "rho must lie in (0, 1], got {}",
                self.rho
            )));
        }
        if !unit(self.sigma) {
            return Err(Error::InvalidParameter(format!(
                "sigma must lie in (0, 1], got {}",
                self.sigma
            )));
        }
        Ok(())
    }
}

/// Ground-truth assignment of one box.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Assignment {
    /// Best-IoU ground truth, present only when that IoU exceeds `theta`.
    pub primary: Option<usize>,
    /// Ground truth with the second-largest (positive) IoU.
    pub secondary: Option<usize>,
    /// Set when the box is assigned and overlaps `secondary` by more than `rho`.
    pub occluded: bool,
}

impl Assignment {
    pub fn is_assigned(&self) -> bool {
        self.primary.is_some()
    }
}

/// Splits `boxes` into per-ground-truth groups plus an unassigned group.
///
/// IoU ties are resolved in favour of the lower ground-truth index. Ground
/// truths with zero overlap never become the secondary match.
pub fn assign_boxes<T: Scalar>(boxes: &[BBox<T>], gts: &[BBox<T>], cfg: &EmbeddingLossConfig<T>) -> Vec<Assignment> {
    boxes
        .iter()
        .map(|b| {
            let mut best: Option<(usize, T)> = None;
            let mut second: Option<(usize, T)> = None;
            for (j, gt) in gts.iter().enumerate() {
                let v = b.iou(gt);
                if v <= T::zero() {
                    continue;
                }
                match best {
                    Some((_, bv)) if v <= bv => {
                        if second.is_none_or(|(_, sv)| v > sv) {
                            second = Some((j, v));
                        }
                    }
                    _ => {
                        second = best;
                        best = Some((j, v));
                    }
                }
            }
            let primary = best.filter(|&(_, v)| v > cfg.theta).map(|(j, _)| j);
            let occluded = primary.is_some() && second.is_some_and(|(_, v)| v > cfg.rho);
            Assignment {
                primary,
                secondary: second.map(|(j, _)| j),
                occluded,
            }
        })
        .collect()
}

/// Sum over assigned boxes of `|e_i - e*_j|`, `j` the box's primary ground truth.
pub fn group_loss<T: Scalar>(
    embeddings: &[Embedding<T>],
    gt_embeddings: &[Embedding<T>],
    assignment: &[Assignment],
) -> T {
    embeddings
        .iter()
        .zip(assignment)
        .filter_map(|(e, a)| a.primary.map(|j| e.distance(gt_embeddings[j])))
        .sum()
}

/// Sum over occluded boxes of `max(0, sigma - |e_i - e~_i|)`.
///
/// `secondary_gt_embeddings[i]` is only read where `occluded_flags[i]` is set.
pub fn separation_loss<T: Scalar>(
    embeddings: &[Embedding<T>],
    secondary_gt_embeddings: &[Embedding<T>],
    occluded_flags: &[bool],
    sigma: T,
) -> T {
    embeddings
        .iter()
        .zip(secondary_gt_embeddings)
        .zip(occluded_flags)
        .filter(|(_, &flag)| flag)
        .map(|((e, s), _)| (sigma - e.distance(*s)).max(T::zero()))
        .sum()
}

/// Both losses for one image given embeddings and an assignment.
pub fn sge_losses<T: Scalar>(
    embeddings: &[Embedding<T>],
    gt_embeddings: &[Embedding<T>],
    assignment: &[Assignment],
    sigma: T,
) -> LossBreakdown<T> {
    let secondary: Vec<Embedding<T>> = assignment
        .iter()
        .map(|a| a.secondary.map(|j| gt_embeddings[j]).unwrap_or_default())
        .collect();
    let flags: Vec<bool> = assignment.iter().map(|a| a.occluded).collect();
    LossBreakdown {
        group: group_loss(embeddings, gt_embeddings, assignment),
        separation: separation_loss(embeddings, &secondary, &flags, sigma),
    }
}

/// Identity embeddings: each detection gets the index of its generating
/// object within the scene, multiplied by `spacing`.
pub fn oracle_embeddings_spaced<T: Scalar>(scene: &Scene<T>, spacing: T) -> Result<Vec<Embedding<T>>> {
    scene
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let id = d.object_id.ok_or(Error::MissingIdentity { index: i })?;
            let pos = scene
                .ground_truths
                .iter()
                .position(|g| g.object_id == id)
                .ok_or(Error::MissingIdentity { index: i })?;
            Ok(Embedding(T::from_count(pos) * spacing))
        })
        .collect()
}

/// Identity embeddings with unit spacing: `0, 1, 2, ...` by object.
pub fn oracle_embeddings<T: Scalar>(scene: &Scene<T>) -> Result<Vec<Embedding<T>>> {
    oracle_embeddings_spaced(scene, T::one())
}
