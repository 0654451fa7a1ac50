//! Greedy, linear Soft- and semantics-geometry non-maximum suppression.
//!
//! All three share one pivot loop: the highest-scoring remaining detection
//! becomes the pivot (equal scores: lower input index first), and every
//! remaining detection is then tested against it. They differ only in what
//! happens to an overlapping detection:
//!
//! - greedy removes it when `IoU >= nt`;
//! - soft rescales its score by `1 - IoU` when `IoU >= nt`, dropping it once
//!   the score falls below a floor;
//! - semantics-geometry removes it when `IoU >= nt` *and* the embedding
//!   distance to the pivot is at most `phi(IoU)`.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::scalar::Scalar;

pub type ClassId = u32;

#[derive(Clone, Debug, PartialEq)]
pub struct Detection<T> {
    pub bbox: BBox<T>,
    /// Confidence in `[0, 1]`.
    pub score: T,
    pub embedding: Option<Embedding<T>>,
    pub class_id: ClassId,
    /// Generating object, when known (synthetic data).
    pub object_id: Option<u32>,
}

impl<T: Scalar> Detection<T> {
    pub fn new(bbox: BBox<T>, score: T, class_id: ClassId) -> Self {
        Self {
            bbox,
            score,
            embedding: None,
            class_id,
            object_id: None,
        }
    }

    pub fn with_embedding(mut self, e: T) -> Self {
        self.embedding = Some(Embedding(e));
        self
    }
}

/// Shape of the embedding-distance threshold as a function of overlap.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PhiKind {
    Constant,
    Linear,
    Square,
}

/// `phi(tau) = t`, `t * tau` or `t * tau^2`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhiFunction<T> {
    kind: PhiKind,
    t: T,
}

impl<T: Scalar> PhiFunction<T> {
    pub fn new(kind: PhiKind, t: T) -> Result<Self> {
        if t.is_nan() || t <= T::zero() {
            return Err(Error::InvalidParameter(format!(
                "phi threshold must be positive, got {t}"
            )));
        }
        Ok(Self { kind, t })
    }

    pub fn constant(t: T) -> Result<Self> {
        Self::new(PhiKind::Constant, t)
    }

    pub fn linear(t: T) -> Result<Self> {
        Self::new(PhiKind::Linear, t)
    }

    pub fn square(t: T) -> Result<Self> {
        Self::new(PhiKind::Square, t)
    }

    pub fn kind(&self) -> PhiKind {
        self.kind
    }

    pub fn t(&self) -> T {
        self.t
    }

    pub fn eval(&self, tau: T) -> T {
        match self.kind {
            PhiKind::Constant => self.t,
            // zero overlap gives zero threshold even for an unbounded t
            _ if tau == T::zero() => T::zero(),
            PhiKind::Linear => self.t * tau,
            PhiKind::Square => self.t * tau * tau,
        }
    }
}

pub fn phi_eval<T: Scalar>(phi: &PhiFunction<T>, tau: T) -> T {
    phi.eval(tau)
}

/// Anything usable as the embedding-distance threshold of [`sg_nms`].
pub trait DistanceThreshold<T> {
    fn threshold(&self, tau: T) -> T;
}

impl<T: Scalar> DistanceThreshold<T> for PhiFunction<T> {
    fn threshold(&self, tau: T) -> T {
        self.eval(tau)
    }
}

impl<T, F: Fn(T) -> T> DistanceThreshold<T> for F {
    fn threshold(&self, tau: T) -> T {
        self(tau)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeptDetection<T> {
    /// Position in the input list.
    pub index: usize,
    pub detection: Detection<T>,
    /// Score after suppression; differs from the input only for soft NMS.
    pub score: T,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SuppressionResult<T> {
    /// Surviving detections, highest final score first.
    pub kept: Vec<KeptDetection<T>>,
    /// Removed input index → index of the pivot that removed it.
    pub suppressed_by: BTreeMap<usize, usize>,
}

impl<T: Scalar> SuppressionResult<T> {
    pub fn kept_indices(&self) -> Vec<usize> {
        self.kept.iter().map(|k| k.index).collect()
    }

    pub fn kept_detections(&self) -> Vec<Detection<T>> {
        self.kept
            .iter()
            .map(|k| Detection {
                score: k.score,
                ..k.detection.clone()
            })
            .collect()
    }
}

fn by_score_then_index<T: Scalar>(scores: &[T]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    }
}

/// Removal-style pivot loop shared by greedy and semantics-geometry NMS.
fn pivot_remove<T: Scalar, F>(dets: &[Detection<T>], remove: F) -> SuppressionResult<T>
where
    F: Fn(&Detection<T>, &Detection<T>, T) -> bool,
{
    let scores: Vec<T> = dets.iter().map(|d| d.score).collect();
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(by_score_then_index(&scores));

    let mut alive = vec![true; dets.len()];
    let mut result = SuppressionResult {
        kept: Vec::new(),
        suppressed_by: BTreeMap::new(),
    };
    for (pos, &m) in order.iter().enumerate() {
        if !alive[m] {
            continue;
        }
        let pivot = &dets[m];
        result.kept.push(KeptDetection {
            index: m,
            detection: pivot.clone(),
            score: pivot.score,
        });
        for &i in &order[pos + 1..] {
            if !alive[i] {
                continue;
            }
            let tau = pivot.bbox.iou(&dets[i].bbox);
            if remove(pivot, &dets[i], tau) {
                alive[i] = false;
                result.suppressed_by.insert(i, m);
            }
        }
    }
    result
}

/// Classic NMS: drop every detection overlapping a kept pivot by `IoU >= nt`.
pub fn greedy_nms<T: Scalar>(dets: &[Detection<T>], nt: T) -> SuppressionResult<T> {
    pivot_remove(dets, |_, _, tau| tau >= nt)
}

/// Linear Soft-NMS: `s <- s * (1 - IoU)` for `IoU >= nt`; detections whose
/// score falls below `score_floor` are dropped.
pub fn soft_nms_linear<T: Scalar>(dets: &[Detection<T>], nt: T, score_floor: T) -> SuppressionResult<T> {
    let mut scores: Vec<T> = dets.iter().map(|d| d.score).collect();
    let mut remaining: Vec<usize> = (0..dets.len()).collect();
    let mut result = SuppressionResult {
        kept: Vec::new(),
        suppressed_by: BTreeMap::new(),
    };
    // Detections entering below the floor are dropped up front, attributed to themselves.
    remaining.retain(|&i| {
        let keep = scores[i] >= score_floor;
        if !keep {
            result.suppressed_by.insert(i, i);
        }
        keep
    });

    while !remaining.is_empty() {
        let best_pos = (0..remaining.len())
            .min_by(|&a, &b| by_score_then_index(&scores)(&remaining[a], &remaining[b]))
            .expect("non-empty");
        let m = remaining.swap_remove(best_pos);
        result.kept.push(KeptDetection {
            index: m,
            detection: dets[m].clone(),
            score: scores[m],
        });
        remaining.retain(|&i| {
            let tau = dets[m].bbox.iou(&dets[i].bbox);
            if tau >= nt {
                scores[i] *= T::one() - tau;
                if scores[i] < score_floor {
                    result.suppressed_by.insert(i, m);
                    return false;
                }
            }
            true
        });
    }
    result
        .kept
        .sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    result
}

/// Semantics-geometry NMS: a detection overlapping the pivot by `tau >= nt`
/// is removed only if its embedding lies within `phi(tau)` of the pivot's.
/// Removed detections are not rescored; kept ones retain their scores.
pub fn sg_nms<T: Scalar, P: DistanceThreshold<T>>(
    dets: &[Detection<T>],
    nt: T,
    phi: &P,
) -> Result<SuppressionResult<T>> {
    if let Some(index) = dets.iter().position(|d| d.embedding.is_none()) {
        return Err(Error::MissingEmbedding { index });
    }
    Ok(pivot_remove(dets, |pivot, other, tau| {
        let (ep, eo) = (pivot.embedding.unwrap(), other.embedding.unwrap());
        tau >= nt && ep.distance(eo) <= phi.threshold(tau)
    }))
}

/// Which suppression to run, with its parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NmsAlgorithm<T> {
    Greedy { nt: T },
    Soft { nt: T, score_floor: T },
    Sg { nt: T, phi: PhiFunction<T> },
}

impl<T: Scalar> NmsAlgorithm<T> {
    pub const DEFAULT_SCORE_FLOOR: f64 = 0.001;

    pub fn soft(nt: T) -> Self {
        NmsAlgorithm::Soft {
            nt,
            score_floor: T::lit(Self::DEFAULT_SCORE_FLOOR),
        }
    }

    pub fn run(&self, dets: &[Detection<T>]) -> Result<SuppressionResult<T>> {
        match *self {
            NmsAlgorithm::Greedy { nt } => Ok(greedy_nms(dets, nt)),
            NmsAlgorithm::Soft { nt, score_floor } => Ok(soft_nms_linear(dets, nt, score_floor)),
            NmsAlgorithm::Sg { nt, ref phi } => sg_nms(dets, nt, phi),
        }
    }
}

/// Runs `algorithm` separately for each class and merges the results.
pub fn suppress_per_class<T: Scalar>(
    dets: &[Detection<T>],
    algorithm: &NmsAlgorithm<T>,
) -> Result<SuppressionResult<T>> {
    let mut by_class: BTreeMap<ClassId, Vec<usize>> = BTreeMap::new();
    for (i, d) in dets.iter().enumerate() {
        by_class.entry(d.class_id).or_default().push(i);
    }
    let mut merged = SuppressionResult {
        kept: Vec::new(),
        suppressed_by: BTreeMap::new(),
    };
    for idx in by_class.values() {
        let subset: Vec<Detection<T>> = idx.iter().map(|&i| dets[i].clone()).collect();
        let part = algorithm.run(&subset).map_err(|e| match e {
            Error::MissingEmbedding { index } => Error::MissingEmbedding { index: idx[index] },
            other => other,
        })?;
        merged.kept.extend(part.kept.into_iter().map(|mut k| {
            k.index = idx[k.index];
            k
        }));
        merged
            .suppressed_by
            .extend(part.suppressed_by.into_iter().map(|(s, p)| (idx[s], idx[p])));
    }
    merged
        .kept
        .sort_by(|a, b| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal));
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn det(x1: f64, y1: f64, x2: f64, y2: f64, score: f64) -> Detection<f64> {
        Detection::new(BBox::new(x1, y1, x2, y2), score, 0)
    }

    #[test]
    fn greedy_examples() {
        let r = greedy_nms(&[det(0., 0., 2., 2., 0.9), det(0., 0., 2., 2., 0.8)], 0.5);
        assert_eq!(r.kept_indices(), vec![0]);
        assert_eq!(r.suppressed_by.get(&1), Some(&0));

        let r = greedy_nms(&[det(0., 0., 1., 1., 0.9), det(5., 5., 6., 6., 0.8)], 0.5);
        assert_eq!(r.kept_indices(), vec![0, 1]);

        let r = greedy_nms(&[det(0., 0., 2., 2., 0.9), det(1., 0., 3., 2., 0.8)], 0.3);
        assert_eq!(r.kept_indices(), vec![0]);

        assert!(greedy_nms::<f64>(&[], 0.5).kept.is_empty());
    }

    #[test]
    fn greedy_threshold_extremes() {
        let dets = vec![
            det(0., 0., 2., 2., 0.3),
            det(50., 50., 60., 60., 0.9),
            det(1., 1., 3., 3., 0.5),
        ];
        assert_eq!(greedy_nms(&dets, 0.0).kept_indices(), vec![1]);
        assert_eq!(greedy_nms(&dets, 1.0 + 1e-9).kept.len(), 3);
    }

    #[test]
    fn soft_nms_rescoring() {
        // IoU 0.6: 10x10 boxes offset by 2.5.
        let dets = vec![det(0., 0., 10., 10., 0.95), det(2.5, 0., 12.5, 10., 0.9)];
        let r = soft_nms_linear(&dets, 0.3, 0.001);
        assert_eq!(r.kept.len(), 2);
        let decayed = r.kept.iter().find(|k| k.index == 1).unwrap().score;
        assert!((decayed - 0.36).abs() < 1e-12);

        let r = soft_nms_linear(&dets, 0.7, 0.001);
        assert_eq!(r.kept[1].score, 0.9);

        // floor 0: a full overlap rescales to exactly 0 but nothing is dropped
        let dup = vec![det(0., 0., 2., 2., 0.9), det(0., 0., 2., 2., 0.8)];
        let r = soft_nms_linear(&dup, 0.3, 0.0);
        assert_eq!(r.kept.len(), 2);
        assert_eq!(r.kept[1].score, 0.0);

        let r = soft_nms_linear(&dup, 0.3, 0.001);
        assert_eq!(r.kept_indices(), vec![0]);
        assert_eq!(r.suppressed_by.get(&1), Some(&0));
    }

    fn pair(tau_shift: f64, e0: f64, e1: f64) -> Vec<Detection<f64>> {
        vec![
            det(0., 0., 10., 10., 0.9).with_embedding(e0),
            det(tau_shift, 0., 10. + tau_shift, 10., 0.8).with_embedding(e1),
        ]
    }

    #[test]
    fn sg_nms_examples() {
        // shift s gives IoU (10-s)/(10+s); 0.8 ↔ s = 10/9
        let s = 10.0 / 9.0;
        let d = pair(s, 0.0, 0.1);
        assert!((d[0].bbox.iou(&d[1].bbox) - 0.8).abs() < 1e-12);
        let phi = PhiFunction::<f64>::linear(1.7).unwrap();
        assert!((phi.eval(0.8) - 1.36).abs() < 1e-12);
        assert_eq!(sg_nms(&d, 0.5, &phi).unwrap().kept.len(), 1);
        assert_eq!(sg_nms(&pair(s, 0.0, 2.0), 0.5, &phi).unwrap().kept.len(), 2);

        let huge = PhiFunction::constant(f64::INFINITY).unwrap();
        let dets = vec![
            det(0., 0., 10., 10., 0.9).with_embedding(0.0),
            det(1., 0., 11., 10., 0.7).with_embedding(50.0),
            det(30., 0., 40., 10., 0.6).with_embedding(-3.0),
        ];
        assert_eq!(sg_nms(&dets, 0.5, &huge).unwrap(), greedy_nms(&dets, 0.5));

        let mut missing = dets.clone();
        missing[2].embedding = None;
        assert!(matches!(
            sg_nms(&missing, 0.5, &phi),
            Err(Error::MissingEmbedding { index: 2 })
        ));
    }

    #[test]
    fn phi_examples() {
        assert_eq!(PhiFunction::constant(0.9).unwrap().eval(0.3), 0.9);
        assert_eq!(PhiFunction::constant(0.9).unwrap().eval(1.0), 0.9);
        assert!((phi_eval(&PhiFunction::<f64>::linear(1.7).unwrap(), 0.5) - 0.85).abs() < 1e-15);
        assert_eq!(PhiFunction::square(2.6).unwrap().eval(0.0), 0.0);
        assert!((PhiFunction::<f64>::square(2.6).unwrap().eval(0.5) - 0.65).abs() < 1e-15);
        assert!(PhiFunction::linear(0.0).is_err());
        assert!(PhiFunction::linear(f64::NAN).is_err());
        assert_eq!(PhiFunction::linear(f64::INFINITY).unwrap().eval(0.0), 0.0);
    }

    #[test]
    fn kept_set_can_grow_with_t_through_chains() {
        // IoU(A,B) = 9/11, IoU(B,C) = 2/3, IoU(A,C) = 7/13, all above nt.
        // |eA - eB| = 0.9 lies between the two thresholds, |eA - eC| = 1.5 above
        // both and |eB - eC| = 0.6 below both: at t = 0.8 B survives and removes C,
        // at t = 1.0 A removes B and C survives.
        let dets = vec![
            det(0., 0., 10., 10., 0.9).with_embedding(0.0),
            det(1., 0., 11., 10., 0.8).with_embedding(0.9),
            det(3., 0., 13., 10., 0.7).with_embedding(1.5),
        ];
        let lo = sg_nms(&dets, 0.5, &PhiFunction::constant(0.8).unwrap()).unwrap();
        let hi = sg_nms(&dets, 0.5, &PhiFunction::constant(1.0).unwrap()).unwrap();
        assert_eq!(lo.kept_indices(), vec![0, 1]);
        assert_eq!(hi.kept_indices(), vec![0, 2]);
    }

    #[test]
    fn per_class_examples() {
        let mut a = det(0., 0., 2., 2., 0.9);
        let mut b = det(0., 0., 2., 2., 0.8);
        a.class_id = 1;
        b.class_id = 2;
        let algo = NmsAlgorithm::Greedy { nt: 0.5 };
        assert_eq!(suppress_per_class(&[a, b], &algo).unwrap().kept.len(), 2);

        let single = vec![
            det(0., 0., 2., 2., 0.9),
            det(1., 0., 3., 2., 0.8),
            det(9., 9., 10., 10., 0.4),
        ];
        assert_eq!(suppress_per_class(&single, &algo).unwrap(), greedy_nms(&single, 0.5));
        let soft = NmsAlgorithm::soft(0.3);
        assert_eq!(
            suppress_per_class(&single, &soft).unwrap(),
            soft_nms_linear(&single, 0.3, 0.001)
        );

        assert!(suppress_per_class::<f64>(&[], &algo).unwrap().kept.is_empty());
    }

    #[test]
    fn per_class_remaps_missing_embedding_index() {
        let mut a = det(0., 0., 2., 2., 0.9).with_embedding(0.0);
        a.class_id = 1;
        let b = det(0., 0., 2., 2., 0.8);
        let algo = NmsAlgorithm::Sg {
            nt: 0.5,
            phi: PhiFunction::linear(1.7).unwrap(),
        };
        let err = suppress_per_class(&[a, b], &algo).unwrap_err();
        assert!(matches!(err, Error::MissingEmbedding { index: 1 }));
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection<f64>>> {
        prop::collection::vec(
            (
                0.0..40.0f64,
                0.0..40.0f64,
                2.0..20.0f64,
                2.0..20.0f64,
                0.0..1.0f64,
                -3.0..3.0f64,
            ),
            0..14,
        )
        .prop_map(|v| {
            v.into_iter()
                .map(|(x, y, w, h, s, e)| {
                    // coarse scores so ties occur
                    let s = (s * 8.0).round() / 8.0;
                    det(x, y, x + w, y + h, s).with_embedding(e)
                })
                .collect()
        })
    }

    fn kept_set(r: &SuppressionResult<f64>) -> BTreeSet<usize> {
        r.kept_indices().into_iter().collect()
    }

    proptest! {
        #[test]
        fn partitions_input(dets in arb_dets(), nt in 0.0..1.0f64) {
            let phi = PhiFunction::linear(1.0).unwrap();
            for r in [
                greedy_nms(&dets, nt),
                soft_nms_linear(&dets, nt, 0.001),
                sg_nms(&dets, nt, &phi).unwrap(),
            ] {
                let kept = kept_set(&r);
                prop_assert_eq!(kept.len(), r.kept.len());
                prop_assert!(kept.iter().all(|i| !r.suppressed_by.contains_key(i)));
                prop_assert_eq!(kept.len() + r.suppressed_by.len(), dets.len());
                for w in r.kept.windows(2) {
                    prop_assert!(w[0].score >= w[1].score);
                }
            }
        }

        #[test]
        fn negative_phi_keeps_everything(dets in arb_dets(), nt in 0.0..1.0f64) {
            let r = sg_nms(&dets, nt, &|_: f64| -1.0).unwrap();
            prop_assert_eq!(r.kept.len(), dets.len());
        }

        #[test]
        fn unbounded_phi_equals_greedy(dets in arb_dets(), nt in 0.0..1.0f64) {
            let r = sg_nms(&dets, nt, &|_: f64| f64::INFINITY).unwrap();
            prop_assert_eq!(r, greedy_nms(&dets, nt));
        }

        #[test]
        fn first_pivot_suppresses_more_as_t_grows(dets in arb_dets(), nt in 0.1..0.9f64, t in 0.05..3.0f64, dt in 0.0..2.0f64) {
            prop_assume!(!dets.is_empty());
            for kind in [PhiKind::Constant, PhiKind::Linear, PhiKind::Square] {
                let lo = sg_nms(&dets, nt, &PhiFunction::new(kind, t).unwrap()).unwrap();
                let hi = sg_nms(&dets, nt, &PhiFunction::new(kind, t + dt).unwrap()).unwrap();
                let top = lo.kept[0].index;
                prop_assert_eq!(top, hi.kept[0].index);
                let removed = |r: &SuppressionResult<f64>| -> BTreeSet<usize> {
                    r.suppressed_by.iter().filter(|(_, &p)| p == top).map(|(&i, _)| i).collect()
                };
                prop_assert!(removed(&lo).is_subset(&removed(&hi)));
            }
        }

        #[test]
        fn deterministic_under_reordering_of_ties(dets in arb_dets(), nt in 0.0..1.0f64) {
            let r1 = greedy_nms(&dets, nt);
            let r2 = greedy_nms(&dets, nt);
            prop_assert_eq!(&r1, &r2);
            // reversing input reverses indices; the kept boxes must be the same boxes
            // whenever scores are distinct
            let distinct: BTreeSet<u64> = dets.iter().map(|d| d.score.to_bits()).collect();
            if distinct.len() == dets.len() {
                let rev: Vec<_> = dets.iter().rev().cloned().collect();
                let rr = greedy_nms(&rev, nt);
                let a: Vec<_> = r1.kept.iter().map(|k| k.detection.clone()).collect();
                let b: Vec<_> = rr.kept.iter().map(|k| k.detection.clone()).collect();
                prop_assert_eq!(a, b);
            }
        }
    }
}
