//! Detection matching, precision/recall, average precision, recall by
//! occlusion level and log-average miss rate.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geometry::{max_mutual_iou, BBox, OcclusionLevel};
use crate::scalar::Scalar;
use crate::suppression::{ClassId, Detection};

/// Class id of KITTI `DontCare` regions; they act as ignore regions for every class.
pub const DONT_CARE: ClassId = ClassId::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth<T> {
    pub bbox: BBox<T>,
    pub class_id: ClassId,
    /// Unique within a scene.
    pub object_id: u32,
    /// Fraction of the object leaving the image, `[0, 1]`.
    pub truncation: T,
    /// KITTI occlusion code: 0 visible, 1 partly, 2 largely occluded, 3 unknown.
    pub occlusion: i32,
    /// Ignore region: detections on it are neither rewarded nor penalized.
    pub ignore: bool,
}

impl<T: Scalar> GroundTruth<T> {
    pub fn new(bbox: BBox<T>, class_id: ClassId, object_id: u32) -> Self {
        Self {
            bbox,
            class_id,
            object_id,
            truncation: T::zero(),
            occlusion: 0,
            ignore: false,
        }
    }

    pub fn height(&self) -> T {
        self.bbox.height()
    }
}

/// One image: detections, ground truths and optionally the image size.
#[derive(Clone, Debug, PartialEq)]
pub struct Scene<T> {
    pub id: String,
    pub detections: Vec<Detection<T>>,
    pub ground_truths: Vec<GroundTruth<T>>,
    pub image_size: Option<(T, T)>,
}

impl<T: Scalar> Scene<T> {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            detections: Vec::new(),
            ground_truths: Vec::new(),
            image_size: None,
        }
    }

    /// Copy whose ground truths harder than `level` become ignore regions.
    pub fn with_difficulty(&self, level: KittiDifficulty) -> Self {
        let mut out = self.clone();
        for gt in &mut out.ground_truths {
            if kitti_difficulty_filter(gt) > level {
                gt.ignore = true;
            }
        }
        out
    }

    /// Max-mutual-IoU of every ground truth against the other non-ignored
    /// ground truths of its class; `None` for ignore regions.
    pub fn mmiou(&self) -> Vec<Option<T>> {
        self.ground_truths
            .iter()
            .enumerate()
            .map(|(i, gt)| {
                if gt.ignore {
                    return None;
                }
                let others: Vec<BBox<T>> = self
                    .ground_truths
                    .iter()
                    .enumerate()
                    .filter(|(j, o)| *j != i && !o.ignore && o.class_id == gt.class_id)
                    .map(|(_, o)| o.bbox)
                    .collect();
                Some(max_mutual_iou(&gt.bbox, &others))
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectionLabel {
    TruePositive {
        gt: usize,
    },
    FalsePositive,
    /// Matched only an ignore region; excluded from scoring.
    Ignored,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneMatch {
    /// One label per detection, in input order.
    pub labels: Vec<DetectionLabel>,
    /// One flag per ground truth.
    pub gt_matched: Vec<bool>,
}

/// Greedy-by-score matching. Each detection takes the unmatched, non-ignored
/// ground truth of its class with the highest IoU at or above the threshold.
pub fn match_detections<T: Scalar>(scene: &Scene<T>, iou_threshold: T) -> SceneMatch {
    let dets = &scene.detections;
    let gts = &scene.ground_truths;
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut labels = vec![DetectionLabel::FalsePositive; dets.len()];
    let mut gt_matched = vec![false; gts.len()];
    for i in order {
        let d = &dets[i];
        let mut best: Option<(usize, T)> = None;
        let mut hits_ignore = false;
        for (j, gt) in gts.iter().enumerate() {
            let relevant = gt.class_id == d.class_id || (gt.ignore && gt.class_id == DONT_CARE);
            if !relevant {
                continue;
            }
            let v = d.bbox.iou(&gt.bbox);
            if v < iou_threshold {
                continue;
            }
            if gt.ignore {
                hits_ignore = true;
            } else if !gt_matched[j] && best.is_none_or(|(_, bv)| v > bv) {
                best = Some((j, v));
            }
        }
        labels[i] = match best {
            Some((j, _)) => {
                gt_matched[j] = true;
                DetectionLabel::TruePositive { gt: j }
            }
            None if hits_ignore => DetectionLabel::Ignored,
            None => DetectionLabel::FalsePositive,
        };
    }
    SceneMatch { labels, gt_matched }
}

pub fn match_scenes<T: Scalar>(scenes: &[Scene<T>], iou_threshold: T) -> Vec<SceneMatch> {
    scenes.iter().map(|s| match_detections(s, iou_threshold)).collect()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ignored: usize,
}

/// Cumulative counts after admitting every detection scoring at least `score`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub score: f64,
    pub tp: usize,
    pub fp: usize,
}

/// Pooled operating points, one per distinct score (ties enter together),
/// plus the number of positives.
fn operating_points<T: Scalar>(scenes: &[Scene<T>], matches: &[SceneMatch]) -> (Vec<OperatingPoint>, usize) {
    let mut scored: Vec<(f64, bool)> = Vec::new();
    let mut positives = 0;
    for (scene, m) in scenes.iter().zip(matches) {
        positives += scene.ground_truths.iter().filter(|g| !g.ignore).count();
        for (d, label) in scene.detections.iter().zip(&m.labels) {
            match label {
                DetectionLabel::TruePositive { .. } => scored.push((d.score.as_f64(), true)),
                DetectionLabel::FalsePositive => scored.push((d.score.as_f64(), false)),
                DetectionLabel::Ignored => {}
            }
        }
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));

    let mut points: Vec<OperatingPoint> = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (k, &(score, is_tp)) in scored.iter().enumerate() {
        if is_tp {
            tp += 1;
        } else {
            fp += 1;
        }
        let group_ends = scored.get(k + 1).is_none_or(|next| next.0 != score);
        if group_ends {
            points.push(OperatingPoint { score, tp, fp });
        }
    }
    (points, positives)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ApResult {
    pub ap: f64,
    /// `(recall, precision)` per operating point, recall non-decreasing.
    pub pr_curve: Vec<(f64, f64)>,
    pub counts: Counts,
}

/// AP as the exact area under the monotone precision envelope.
pub fn average_precision_from<T: Scalar>(scenes: &[Scene<T>], matches: &[SceneMatch]) -> ApResult {
    let (points, positives) = operating_points(scenes, matches);
    let ignored = matches
        .iter()
        .flat_map(|m| &m.labels)
        .filter(|l| **l == DetectionLabel::Ignored)
        .count();
    let (tp, fp) = points.last().map_or((0, 0), |p| (p.tp, p.fp));
    let counts = Counts {
        tp,
        fp,
        fn_: positives - tp,
        ignored,
    };
    if positives == 0 {
        return ApResult {
            ap: 0.0,
            pr_curve: Vec::new(),
            counts,
        };
    }
    let pr_curve: Vec<(f64, f64)> = points
        .iter()
        .map(|p| (p.tp as f64 / positives as f64, p.tp as f64 / (p.tp + p.fp) as f64))
        .collect();

    let mut envelope = vec![0.0; pr_curve.len()];
    let mut running = 0.0f64;
    for (k, &(_, p)) in pr_curve.iter().enumerate().rev() {
        running = running.max(p);
        envelope[k] = running;
    }
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (&(r, _), env) in pr_curve.iter().zip(&envelope) {
        ap += (r - prev_recall) * env;
        prev_recall = r;
    }
    ApResult { ap, pr_curve, counts }
}

pub fn average_precision<T: Scalar>(scenes: &[Scene<T>], iou_threshold: T) -> ApResult {
    average_precision_from(scenes, &match_scenes(scenes, iou_threshold))
}

/// Matched / total ground truths whose MMIoU falls in `(lo, hi]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinRecall {
    pub lo: f64,
    pub hi: f64,
    pub matched: usize,
    pub total: usize,
}

impl BinRecall {
    pub fn recall(&self) -> f64 {
        self.matched as f64 / self.total as f64
    }
}

/// The Bare / Partial / Heavy split.
pub const OCCLUSION_BIN_EDGES: [f64; 4] = [0.0, OcclusionLevel::BARE_MAX, OcclusionLevel::PARTIAL_MAX, 1.0];

fn check_edges(edges: &[f64]) -> Result<()> {
    if edges.len() < 2 || !edges.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter(
            "bin edges must be strictly increasing with at least two values".into(),
        ));
    }
    if edges[0] > 0.0 || edges[edges.len() - 1] < 1.0 {
        return Err(Error::InvalidParameter("bin edges must cover [0, 1]".into()));
    }
    Ok(())
}

/// Index of the bin `(edges[k], edges[k+1]]` holding `v`; the first bin also holds its lower edge.
fn bin_index(edges: &[f64], v: f64) -> usize {
    edges.windows(2).position(|w| v <= w[1]).unwrap_or(edges.len() - 2)
}

/// Recall per MMIoU bin over all detections (no score cut). Bins without
/// ground truths are absent from the map.
pub fn recall_by_mmiou_from<T: Scalar>(
    scenes: &[Scene<T>],
    matches: &[SceneMatch],
    bin_edges: &[f64],
) -> Result<BTreeMap<usize, BinRecall>> {
    check_edges(bin_edges)?;
    let mut bins: BTreeMap<usize, BinRecall> = BTreeMap::new();
    for (scene, m) in scenes.iter().zip(matches) {
        for (mmiou, matched) in scene.mmiou().into_iter().zip(&m.gt_matched) {
            let Some(v) = mmiou else { continue };
            let k = bin_index(bin_edges, v.as_f64());
            let entry = bins.entry(k).or_insert(BinRecall {
                lo: bin_edges[k],
                hi: bin_edges[k + 1],
                matched: 0,
                total: 0,
            });
            entry.total += 1;
            if *matched {
                entry.matched += 1;
            }
        }
    }
    Ok(bins)
}

pub fn recall_by_mmiou<T: Scalar>(
    scenes: &[Scene<T>],
    iou_threshold: T,
    bin_edges: &[f64],
) -> Result<BTreeMap<usize, BinRecall>> {
    recall_by_mmiou_from(scenes, &match_scenes(scenes, iou_threshold), bin_edges)
}

/// False positives that still overlap a matched ground truth by at least
/// the threshold (second hits on one object), counted per MMIoU bin of that
/// ground truth. One entry per bin.
pub fn duplicates_by_mmiou_from<T: Scalar>(
    scenes: &[Scene<T>],
    matches: &[SceneMatch],
    iou_threshold: T,
    bin_edges: &[f64],
) -> Result<Vec<usize>> {
    check_edges(bin_edges)?;
    let mut counts = vec![0; bin_edges.len() - 1];
    for (scene, m) in scenes.iter().zip(matches) {
        let mmiou = scene.mmiou();
        for (d, label) in scene.detections.iter().zip(&m.labels) {
            if *label != DetectionLabel::FalsePositive {
                continue;
            }
            let best = scene
                .ground_truths
                .iter()
                .enumerate()
                .filter(|(_, g)| !g.ignore && g.class_id == d.class_id)
                .map(|(j, g)| (j, d.bbox.iou(&g.bbox)))
                .fold(None, |acc: Option<(usize, T)>, (j, v)| match acc {
                    Some((_, bv)) if bv >= v => acc,
                    _ => Some((j, v)),
                });
            if let Some((j, v)) = best {
                if v >= iou_threshold && m.gt_matched[j] {
                    let level = mmiou[j].expect("non-ignored").as_f64();
                    counts[bin_index(bin_edges, level)] += 1;
                }
            }
        }
    }
    Ok(counts)
}

/// The nine FPPI reference points `10^-2, 10^-1.75, ..., 10^0`.
pub fn fppi_references() -> [f64; 9] {
    std::array::from_fn(|i| 10f64.powf(-2.0 + 0.25 * i as f64))
}

/// Log-average miss rate: geometric mean of the miss rate sampled at
/// [`fppi_references`]. Each reference takes the last operating point whose
/// FPPI does not exceed it, or the first operating point when none does.
/// Without any scored detection the result is 1.
pub fn log_average_miss_rate_from<T: Scalar>(scenes: &[Scene<T>], matches: &[SceneMatch]) -> f64 {
    let (points, positives) = operating_points(scenes, matches);
    if points.is_empty() {
        return 1.0;
    }
    let images = scenes.len().max(1) as f64;
    let miss = |p: &OperatingPoint| {
        if positives == 0 {
            0.0
        } else {
            1.0 - p.tp as f64 / positives as f64
        }
    };
    let refs = fppi_references();
    let log_sum: f64 = refs
        .iter()
        .map(|&r| {
            let at = points.iter().rposition(|p| p.fp as f64 / images <= r).unwrap_or(0);
            miss(&points[at]).ln()
        })
        .sum();
    (log_sum / refs.len() as f64).exp()
}

pub fn log_average_miss_rate<T: Scalar>(scenes: &[Scene<T>], iou_threshold: T) -> f64 {
    log_average_miss_rate_from(scenes, &match_scenes(scenes, iou_threshold))
}

/// KITTI difficulty, ordered from easiest to excluded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum KittiDifficulty {
    Easy,
    Moderate,
    Hard,
    Excluded,
}

impl KittiDifficulty {
    const MIN_HEIGHT: [f64; 3] = [40.0, 25.0, 25.0];
    const MAX_OCCLUSION: [i32; 3] = [0, 1, 2];
    const MAX_TRUNCATION: [f64; 3] = [0.15, 0.30, 0.50];
}

/// Easiest KITTI level whose height, occlusion and truncation gates the ground truth passes.
pub fn kitti_difficulty_filter<T: Scalar>(gt: &GroundTruth<T>) -> KittiDifficulty {
    if gt.class_id == DONT_CARE || gt.occlusion < 0 {
        return KittiDifficulty::Excluded;
    }
    let h = gt.height().as_f64();
    let trunc = gt.truncation.as_f64();
    let levels = [KittiDifficulty::Easy, KittiDifficulty::Moderate, KittiDifficulty::Hard];
    levels
        .into_iter()
        .enumerate()
        .find(|&(k, _)| {
            h >= KittiDifficulty::MIN_HEIGHT[k]
                && gt.occlusion <= KittiDifficulty::MAX_OCCLUSION[k]
                && trunc <= KittiDifficulty::MAX_TRUNCATION[k]
        })
        .map_or(KittiDifficulty::Excluded, |(_, l)| l)
}

/// Everything the evaluation harness reports for a set of scenes.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub ap: f64,
    pub pr_curve: Vec<(f64, f64)>,
    pub recall_by_bin: BTreeMap<usize, BinRecall>,
    pub lamr: f64,
    pub counts: Counts,
}

impl EvalReport {
    pub fn from_matches<T: Scalar>(scenes: &[Scene<T>], matches: &[SceneMatch], bin_edges: &[f64]) -> Result<Self> {
        let ap = average_precision_from(scenes, matches);
        Ok(Self {
            ap: ap.ap,
            pr_curve: ap.pr_curve,
            recall_by_bin: recall_by_mmiou_from(scenes, matches, bin_edges)?,
            lamr: log_average_miss_rate_from(scenes, matches),
            counts: ap.counts,
        })
    }

    pub fn evaluate<T: Scalar>(scenes: &[Scene<T>], iou_threshold: T, bin_edges: &[f64]) -> Result<Self> {
        Self::from_matches(scenes, &match_scenes(scenes, iou_threshold), bin_edges)
    }

    /// Flat `key=value` lines, numbers with four decimals.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "ap={:.4}", self.ap);
        let _ = writeln!(out, "lamr={:.4}", self.lamr);
        let _ = writeln!(out, "tp={}", self.counts.tp);
        let _ = writeln!(out, "fp={}", self.counts.fp);
        let _ = writeln!(out, "fn={}", self.counts.fn_);
        let _ = writeln!(out, "ignored={}", self.counts.ignored);
        for b in self.recall_by_bin.values() {
            let _ = writeln!(out, "recall_{:.4}_{:.4}={:.4}", b.lo, b.hi, b.recall());
            let _ = writeln!(out, "count_{:.4}_{:.4}={}", b.lo, b.hi, b.total);
        }
        out
    }

    pub fn pr_curve_csv(&self) -> String {
        let mut out = String::from("recall,precision\n");
        for (r, p) in &self.pr_curve {
            let _ = writeln!(out, "{r:.4},{p:.4}");
        }
        out
    }

    /// Bin midpoint against recall.
    pub fn recall_by_bin_csv(&self) -> String {
        let mut out = String::from("mmiou,recall\n");
        for b in self.recall_by_bin.values() {
            let _ = writeln!(out, "{:.4},{:.4}", 0.5 * (b.lo + b.hi), b.recall());
        }
        out
    }
}
