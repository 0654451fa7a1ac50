//! Linear map from region descriptors to semantic features, its loss
//! gradients and its text serialization.
//!
//! The provider predicts `s = W d` for a descriptor `d` of dimension `D`, so
//! the embedding `e = s · g` is bilinear: `e = sum_kj W[k][j] g[k] d[j]`. Each
//! box is therefore summarized by the flattened outer product `g ⊗ d`, and
//! `de/dW` is exactly that outer product.
//!
//! Geometric features are taken in image-relative units (see
//! [`GeometricFeature::normalized`]) so that gradient magnitudes do not
//! depend on image resolution.

use std::fmt::Write as _;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{assign_boxes, Assignment, Embedding, EmbeddingLossConfig, SemanticFeature};
use crate::error::{Error, Result};
use crate::geometry::{BBox, GeometricFeature};
use crate::scalar::Scalar;

const HEADER_PREFIX: &str = "sg-provider v1 dims=";

/// Group and separation loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown<T> {
    pub group: T,
    pub separation: T,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn total(&self) -> T {
        self.group + self.separation
    }
}

impl<T: Scalar> std::ops::AddAssign for LossBreakdown<T> {
    fn add_assign(&mut self, rhs: Self) {
        self.group += rhs.group;
        self.separation += rhs.separation;
    }
}

/// `W`, a 4 x D matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSemanticProvider<T> {
    weights: Vec<T>,
    dim: usize,
}

impl<T: Scalar> LinearSemanticProvider<T> {
    pub fn new(weights: Vec<T>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("descriptor dimension must be positive".into()));
        }
        if weights.len() != 4 * dim {
            return Err(Error::InvalidParameter(format!(
                "expected {} weights for dims={dim}, got {}",
                4 * dim,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("provider weights must be finite".into()));
        }
        Ok(Self { weights, dim })
    }

    pub fn zeros(dim: usize) -> Result<Self> {
        Self::new(vec![T::zero(); 4 * dim], dim)
    }

    /// Entries drawn i.i.d. from `N(0, std^2)`.
    pub fn random<R: Rng + ?Sized>(dim: usize, std: f64, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidParameter(format!("init std: {e}")))?;
        let weights = (0..4 * dim).map(|_| T::lit(normal.sample(rng))).collect();
        Self::new(weights, dim)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn row(&self, k: usize) -> &[T] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }

    pub fn semantic_feature(&self, descriptor: &[T]) -> SemanticFeature<T> {
        debug_assert_eq!(descriptor.len(), self.dim);
        let mut s = [T::zero(); 4];
        for (k, sk) in s.iter_mut().enumerate() {
            *sk = self.row(k).iter().zip(descriptor).map(|(w, d)| *w * *d).sum();
        }
        SemanticFeature(s)
    }

    pub fn embed(&self, descriptor: &[T], g: &GeometricFeature<T>) -> Embedding<T> {
        super::compute_sge(&self.semantic_feature(descriptor), g)
    }

    /// Embeds a box given in pixels within an image of the given size.
    pub fn embed_box(&self, descriptor: &[T], bbox: &BBox<T>, image_width: T, image_height: T) -> Result<Embedding<T>> {
        if descriptor.len() != self.dim {
            return Err(Error::InvalidParameter(format!(
                "descriptor has {} values, provider expects {}",
                descriptor.len(),
                self.dim
            )));
        }
        let g = bbox.to_geometric()?.normalized(image_width, image_height);
        Ok(self.embed(descriptor, &g))
    }

    pub(crate) fn dot(&self, outer: &[T]) -> T {
        self.weights.iter().zip(outer).map(|(w, u)| *w * *u).sum()
    }

    pub(crate) fn step(&mut self, grad: &[T], lr: T) {
        for (w, g) in self.weights.iter_mut().zip(grad) {
            *w -= lr * *g;
        }
    }

    /// Text form: a `sg-provider v1 dims=<D>` header and one row of `W` per line.
    pub fn to_text(&self) -> String {
        let mut out = format!("{HEADER_PREFIX}{}\n", self.dim);
        for k in 0..4 {
            let row: Vec<String> = self.row(k).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::MalformedLine {
            line: 1,
            reason: "missing provider header".into(),
        })?;
        let dim: usize = header
            .trim()
            .strip_prefix(HEADER_PREFIX)
            .and_then(|d| d.parse().ok())
            .ok_or_else(|| Error::MalformedLine {
                line: 1,
                reason: format!("bad provider header {header:?}"),
            })?;
        let mut weights = Vec::with_capacity(4 * dim);
        let mut rows = 0;
        for (idx, line) in lines {
            let row: Vec<T> = line
                .split_whitespace()
                .map(|tok| {
                    tok.parse::<f64>().map(T::lit).map_err(|_| Error::MalformedLine {
                        line: idx + 1,
                        reason: format!("unparseable weight {tok:?}"),
                    })
                })
                .collect::<Result<_>>()?;
            if row.len() != dim {
                return Err(Error::MalformedLine {
                    line: idx + 1,
                    reason: format!("expected {dim} weights, found {}", row.len()),
                });
            }
            weights.extend(row);
            rows += 1;
        }
        if rows != 4 {
            return Err(Error::MalformedLine {
                line: rows + 2,
                reason: format!("expected 4 weight rows, found {rows}"),
            });
        }
        Self::new(weights, dim)
    }
}

fn outer_feature<T: Scalar>(g: &GeometricFeature<T>, d: &[T]) -> Vec<T> {
    let mut out = Vec::with_capacity(4 * d.len());
    for gk in g.as_array() {
        out.extend(d.iter().map(|dj| gk * *dj));
    }
    out
}

/// One image's worth of training material for the provider: detected and
/// ground-truth boxes with their region descriptors.
#[derive(Clone, Debug)]
pub struct EmbeddingScene<T> {
    boxes: Vec<BBox<T>>,
    gts: Vec<BBox<T>>,
    box_outer: Vec<Vec<T>>,
    gt_outer: Vec<Vec<T>>,
    dim: usize,
}

impl<T: Scalar> EmbeddingScene<T> {
    pub fn new(
        boxes: Vec<BBox<T>>,
        box_descriptors: &[Vec<T>],
        gts: Vec<BBox<T>>,
        gt_descriptors: &[Vec<T>],
        image_width: T,
        image_height: T,
    ) -> Result<Self> {
        if boxes.len() != box_descriptors.len() || gts.len() != gt_descriptors.len() {
            return Err(Error::InvalidParameter(
                "one descriptor per box and per ground truth is required".into(),
            ));
        }
        if !(image_width > T::zero() && image_height > T::zero()) {
            return Err(Error::InvalidParameter("image size must be positive".into()));
        }
        let dim = box_descriptors
            .iter()
            .chain(gt_descriptors)
            .map(Vec::len)
            .next()
            .unwrap_or(0);
        if box_descriptors.iter().chain(gt_descriptors).any(|d| d.len() != dim) {
            return Err(Error::InvalidParameter("descriptor dimensions differ".into()));
        }
        let outer = |bs: &[BBox<T>], ds: &[Vec<T>]| -> Result<Vec<Vec<T>>> {
            bs.iter()
                .zip(ds)
                .map(|(b, d)| {
                    let g = b.to_geometric()?.normalized(image_width, image_height);
                    Ok(outer_feature(&g, d))
                })
                .collect()
        };
        Ok(Self {
            box_outer: outer(&boxes, box_descriptors)?,
            gt_outer: outer(&gts, gt_descriptors)?,
            boxes,
            gts,
            dim,
        })
    }

    pub fn boxes(&self) -> &[BBox<T>] {
        &self.boxes
    }

    pub fn gts(&self) -> &[BBox<T>] {
        &self.gts
    }

    /// Descriptor dimension, 0 for a scene without boxes.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn assign(&self, cfg: &EmbeddingLossConfig<T>) -> Vec<Assignment> {
        assign_boxes(&self.boxes, &self.gts, cfg)
    }

    pub fn embeddings(&self, provider: &LinearSemanticProvider<T>) -> (Vec<Embedding<T>>, Vec<Embedding<T>>) {
        let e = self.box_outer.iter().map(|u| Embedding(provider.dot(u))).collect();
        let eg = self.gt_outer.iter().map(|u| Embedding(provider.dot(u))).collect();
        (e, eg)
    }

    /// Loss and, when `grad` is given, its gradient accumulated into `grad`
    /// with weight `scale`.
    pub(crate) fn accumulate(
        &self,
        provider: &LinearSemanticProvider<T>,
        assignment: &[Assignment],
        sigma: T,
        mut grad: Option<(&mut [T], T)>,
    ) -> LossBreakdown<T> {
        let (e, eg) = self.embeddings(provider);
        let mut loss = LossBreakdown::default();
        let add = |coef: T, a: &[T], b: &[T], grad: &mut Option<(&mut [T], T)>| {
            if coef == T::zero() {
                return;
            }
            if let Some((g, scale)) = grad.as_mut() {
                let c = coef * *scale;
                for ((gi, ai), bi) in g.iter_mut().zip(a).zip(b) {
                    *gi += c * (*ai - *bi);
                }
            }
        };
        for (i, asg) in assignment.iter().enumerate() {
            let Some(j) = asg.primary else { continue };
            let diff = e[i].0 - eg[j].0;
            loss.group += diff.abs();
            add(diff.sign_or_zero(), &self.box_outer[i], &self.gt_outer[j], &mut grad);

            if asg.occluded {
                let k = asg.secondary.expect("occluded box has a secondary match");
                let diff = e[i].0 - eg[k].0;
                let margin = sigma - diff.abs();
                if margin > T::zero() {
                    loss.separation += margin;
                    add(-diff.sign_or_zero(), &self.box_outer[i], &self.gt_outer[k], &mut grad);
                }
            }
        }
        loss
    }

    pub fn loss(&self, provider: &LinearSemanticProvider<T>, cfg: &EmbeddingLossConfig<T>) -> LossBreakdown<T> {
        self.accumulate(provider, &self.assign(cfg), cfg.sigma, None)
    }
}

/// Loss gradient with respect to the provider weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient<T> {
    pub loss: LossBreakdown<T>,
    /// Same layout as [`LinearSemanticProvider::weights`].
    pub weights: Vec<T>,
}

/// Analytic (sub)gradient of group + separation loss for one scene.
///
/// At `|x|` and hinge kinks the subgradient 0 is used.
pub fn embedding_loss_gradients<T: Scalar>(
    scene: &EmbeddingScene<T>,
    provider: &LinearSemanticProvider<T>,
    cfg: &EmbeddingLossConfig<T>,
) -> Result<Gradient<T>> {
    if !scene.boxes.is_empty() && scene.dim != provider.dim() {
        return Err(Error::InvalidParameter(format!(
            "scene descriptors have {} dims, provider expects {}",
            scene.dim,
            provider.dim()
        )));
    }
    let mut weights = vec![T::zero(); provider.weights().len()];
    let assignment = scene.assign(cfg);
    let loss = scene.accumulate(provider, &assignment, cfg.sigma, Some((&mut weights, T::one())));
    Ok(Gradient { loss, weights })
}
