//! Seeded generator of occluded driving-style scenes.
//!
//! Objects are placed without any overlap, except for forced same-class
//! pairs whose mutual IoU is drawn from a target range. Each object then
//! emits a cluster of jittered detections whose score falls with their
//! localization error.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::embedding::Embedding;
use crate::error::{Error, Result};
use crate::evaluation::{GroundTruth, Scene};
use crate::geometry::{BBox, OcclusionLevel};
use crate::suppression::{ClassId, Detection};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbeddingMode {
    /// Object index times the spacing.
    Oracle,
    /// Oracle plus Gaussian noise.
    Noisy,
    None,
}

impl FromStr for EmbeddingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "noisy" => Ok(Self::Noisy),
            "none" => Ok(Self::None),
            _ => Err(Error::InvalidConfig(format!("unknown embedding_mode '{s}'"))),
        }
    }
}

impl EmbeddingMode {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Oracle => "oracle",
            Self::Noisy => "noisy",
            Self::None => "none",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub scene_count: usize,
    pub image_width: f64,
    pub image_height: f64,
    pub class_id: ClassId,
    pub objects_per_scene: (usize, usize),
    pub object_width: (f64, f64),
    /// Height over width.
    pub aspect_ratio: (f64, f64),
    /// Probability that a placement slot (while two objects remain) becomes a forced pair.
    pub occluded_pair_fraction: f64,
    pub pair_iou: (f64, f64),
    pub detections_per_object: (usize, usize),
    /// Std of the box jitter as a fraction of the object size; draws are cut at two std.
    pub jitter_std: f64,
    pub score_base: f64,
    pub score_slope: f64,
    pub score_noise_std: f64,
    pub embedding_mode: EmbeddingMode,
    pub embedding_spacing: f64,
    pub embedding_noise_std: f64,
    /// Appearance dimensions; descriptors append the four normalized geometry values.
    pub descriptor_dim: usize,
    pub descriptor_noise_std: f64,
    /// Placement draws allowed per object before giving up.
    pub placement_attempts: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scene_count: 100,
            image_width: 1242.0,
            image_height: 375.0,
            class_id: 0,
            objects_per_scene: (2, 6),
            object_width: (60.0, 160.0),
            aspect_ratio: (0.5, 0.9),
            occluded_pair_fraction: 0.5,
            pair_iou: (0.5, 0.8),
            detections_per_object: (3, 6),
            jitter_std: 0.05,
            score_base: 0.95,
            score_slope: 1.0,
            score_noise_std: 0.02,
            embedding_mode: EmbeddingMode::Oracle,
            embedding_spacing: 2.0,
            embedding_noise_std: 0.1,
            descriptor_dim: 8,
            descriptor_noise_std: 0.05,
            placement_attempts: 1000,
        }
    }
}

fn parse_value<V: FromStr>(key: &str, v: &str) -> Result<V> {
    v.trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse '{v}'")))
}

fn parse_range<V: FromStr>(key: &str, v: &str) -> Result<(V, V)> {
    let (a, b) = v
        .split_once(',')
        .ok_or_else(|| Error::InvalidConfig(format!("{key}: expected 'min,max', got '{v}'")))?;
    Ok((parse_value(key, a)?, parse_value(key, b)?))
}

impl SynthConfig {
    /// Parses `key = value` lines over the defaults. `#` starts a comment;
    /// ranges are written `min,max`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected 'key = value'", i + 1)))?;
            let key = key.trim();
            let v = v.trim();
            match key {
                "seed" => c.seed = parse_value(key, v)?,
                "scene_count" => c.scene_count = parse_value(key, v)?,
                "image_width" => c.image_width = parse_value(key, v)?,
                "image_height" => c.image_height = parse_value(key, v)?,
                "class_id" => c.class_id = parse_value(key, v)?,
                "objects_per_scene" => c.objects_per_scene = parse_range(key, v)?,
                "object_width" => c.object_width = parse_range(key, v)?,
                "aspect_ratio" => c.aspect_ratio = parse_range(key, v)?,
                "occluded_pair_fraction" => c.occluded_pair_fraction = parse_value(key, v)?,
                "pair_iou" => c.pair_iou = parse_range(key, v)?,
                "detections_per_object" => c.detections_per_object = parse_range(key, v)?,
                "jitter_std" => c.jitter_std = parse_value(key, v)?,
                "score_base" => c.score_base = parse_value(key, v)?,
                "score_slope" => c.score_slope = parse_value(key, v)?,
                "score_noise_std" => c.score_noise_std = parse_value(key, v)?,
                "embedding_mode" => c.embedding_mode = v.parse()?,
                "embedding_spacing" => c.embedding_spacing = parse_value(key, v)?,
                "embedding_noise_std" => c.embedding_noise_std = parse_value(key, v)?,
                "descriptor_dim" => c.descriptor_dim = parse_value(key, v)?,
                "descriptor_noise_std" => c.descriptor_noise_std = parse_value(key, v)?,
                "placement_attempts" => c.placement_attempts = parse_value(key, v)?,
                _ => return Err(Error::InvalidConfig(format!("line {}: unknown key '{key}'", i + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Every key, one per line, in a form [`SynthConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "scene_count = {}", self.scene_count);
        let _ = writeln!(s, "image_width = {}", self.image_width);
        let _ = writeln!(s, "image_height = {}", self.image_height);
        let _ = writeln!(s, "class_id = {}", self.class_id);
        let _ = writeln!(
            s,
            "objects_per_scene = {},{}",
            self.objects_per_scene.0, self.objects_per_scene.1
        );
        let _ = writeln!(s, "object_width = {},{}", self.object_width.0, self.object_width.1);
        let _ = writeln!(s, "aspect_ratio = {},{}", self.aspect_ratio.0, self.aspect_ratio.1);
        let _ = writeln!(s, "occluded_pair_fraction = {}", self.occluded_pair_fraction);
        let _ = writeln!(s, "pair_iou = {},{}", self.pair_iou.0, self.pair_iou.1);
        let _ = writeln!(
            s,
            "detections_per_object = {},{}",
            self.detections_per_object.0, self.detections_per_object.1
        );
        let _ = writeln!(s, "jitter_std = {}", self.jitter_std);
        let _ = writeln!(s, "score_base = {}", self.score_base);
        let _ = writeln!(s, "score_slope = {}", self.score_slope);
        let _ = writeln!(s, "score_noise_std = {}", self.score_noise_std);
        let _ = writeln!(s, "embedding_mode = {}", self.embedding_mode.name());
        let _ = writeln!(s, "embedding_spacing = {}", self.embedding_spacing);
        let _ = writeln!(s, "embedding_noise_std = {}", self.embedding_noise_std);
        let _ = writeln!(s, "descriptor_dim = {}", self.descriptor_dim);
        let _ = writeln!(s, "descriptor_noise_std = {}", self.descriptor_noise_std);
        let _ = writeln!(s, "placement_attempts = {}", self.placement_attempts);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        let finite_pos = |v: f64| v.is_finite() && v > 0.0;
        let std_ok = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_pos(self.image_width) || !finite_pos(self.image_height) {
            return bad("image size must be positive");
        }
        if self.objects_per_scene.0 > self.objects_per_scene.1 {
            return bad("objects_per_scene range is empty");
        }
        if self.detections_per_object.0 > self.detections_per_object.1 {
            return bad("detections_per_object range is empty");
        }
        let (w0, w1) = self.object_width;
        if !(finite_pos(w0) && w0 <= w1 && w1 <= self.image_width) {
            return bad("object_width must be a non-empty positive range within the image width");
        }
        let (a0, a1) = self.aspect_ratio;
        if !(finite_pos(a0) && a0 <= a1 && w1 * a1 <= self.image_height) {
            return bad("aspect_ratio must be a non-empty positive range keeping objects inside the image height");
        }
        if !(0.0..=1.0).contains(&self.occluded_pair_fraction) {
            return bad("occluded_pair_fraction must lie in [0, 1]");
        }
        let (p0, p1) = self.pair_iou;
        if !(p0 > 0.0 && p0 <= p1 && p1 < 1.0) {
            return bad("pair_iou must be a non-empty range inside (0, 1)");
        }
        if !(std_ok(self.jitter_std) && self.jitter_std < 0.5) {
            return bad("jitter_std must lie in [0, 0.5)");
        }
        if !std_ok(self.score_noise_std) || !std_ok(self.embedding_noise_std) || !std_ok(self.descriptor_noise_std) {
            return bad("noise std values must be finite and non-negative");
        }
        if !self.score_base.is_finite() || !self.score_slope.is_finite() || !self.embedding_spacing.is_finite() {
            return bad("score and embedding parameters must be finite");
        }
        if self.placement_attempts == 0 {
            return bad("placement_attempts must be positive");
        }
        Ok(())
    }
}

/// Appearance-plus-geometry descriptors for one scene, row-aligned with its
/// detections and ground truths.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneDescriptors {
    pub detections: Vec<Vec<f64>>,
    pub ground_truths: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneStats {
    /// Per ground truth.
    pub mmiou: Vec<f64>,
    /// Ground-truth count per occlusion level.
    pub levels: BTreeMap<OcclusionLevel, usize>,
    /// Mutual IoU of every forced pair.
    pub pair_ious: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub scenes: Vec<Scene<f64>>,
    pub descriptors: Vec<SceneDescriptors>,
    pub stats: Vec<SceneStats>,
}

impl SyntheticCorpus {
    /// Descriptor length: appearance dimensions plus four geometry values.
    pub fn descriptor_len(config: &SynthConfig) -> usize {
        config.descriptor_dim + 4
    }
}

/// Standard normal draw cut at two std by resampling.
fn truncated_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

struct Placer<'a> {
    cfg: &'a SynthConfig,
    scene: usize,
    boxes: Vec<BBox<f64>>,
    pair_ious: Vec<f64>,
}

impl Placer<'_> {
    fn random_box<R: Rng>(&self, rng: &mut R) -> BBox<f64> {
        let w = uniform(rng, self.cfg.object_width);
        let h = w * uniform(rng, self.cfg.aspect_ratio);
        let x1 = uniform(rng, (0.0, self.cfg.image_width - w));
        let y1 = uniform(rng, (0.0, self.cfg.image_height - h));
        BBox::new(x1, y1, x1 + w, y1 + h)
    }

    fn is_free(&self, b: &BBox<f64>) -> bool {
        self.boxes.iter().all(|o| b.intersection_area(o) == 0.0)
    }

    fn inside(&self, b: &BBox<f64>) -> bool {
        b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= self.cfg.image_width && b.y2() <= self.cfg.image_height
    }

    fn failure(&self) -> Error {
        Error::PlacementFailure {
            scene: self.scene,
            attempts: self.cfg.placement_attempts,
        }
    }

    fn place_single<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        for _ in 0..self.cfg.placement_attempts {
            let b = self.random_box(rng);
            if self.is_free(&b) {
                self.boxes.push(b);
                return Ok(());
            }
        }
        Err(self.failure())
    }

    /// Two equal-size boxes offset so that their IoU is a draw from the target range.
    fn place_pair<R: Rng>(&mut self, rng: &mut R) -> Result<()> {
        let (lo, hi) = self.cfg.pair_iou;
        for _ in 0..self.cfg.placement_attempts {
            let a = self.random_box(rng);
            let u = uniform(rng, self.cfg.pair_iou);
            // equal areas: IoU u <=> overlap fraction f = 2u / (1 + u) = fx * fy
            let f = 2.0 * u / (1.0 + u);
            let fy = uniform(rng, (f, 1.0));
            let fx = f / fy;
            let sx = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let sy = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            let dx = sx * (1.0 - fx) * a.width();
            let dy = sy * (1.0 - fy) * a.height();
            let b = BBox::new(a.x1() + dx, a.y1() + dy, a.x2() + dx, a.y2() + dy);
            let v = a.iou(&b);
            if v >= lo && v <= hi && self.inside(&b) && self.is_free(&a) && self.is_free(&b) {
                self.boxes.push(a);
                self.boxes.push(b);
                self.pair_ious.push(v);
                return Ok(());
            }
        }
        Err(self.failure())
    }
}

fn jitter<R: Rng>(rng: &mut R, gt: &BBox<f64>, std: f64) -> BBox<f64> {
    let (cx, cy) = gt.center();
    let w = gt.width() * (1.0 + std * truncated_normal(rng));
    let h = gt.height() * (1.0 + std * truncated_normal(rng));
    let cx = cx + std * gt.width() * truncated_normal(rng);
    let cy = cy + std * gt.height() * truncated_normal(rng);
    BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
}

fn normalized_geometry(b: &BBox<f64>, cfg: &SynthConfig) -> [f64; 4] {
    let (cx, cy) = b.center();
    [
        cx / cfg.image_width,
        cy / cfg.image_height,
        b.width() / cfg.image_width,
        b.height() / cfg.image_height,
    ]
}

/// Generates `config.scene_count` scenes; identical configs give identical corpora.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpus> {
    config.validate()?;
    let cfg = config;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = |std: f64| Normal::new(0.0, std).expect("std validated");
    let score_noise = noise(cfg.score_noise_std);
    let emb_noise = noise(cfg.embedding_noise_std);
    let desc_noise = noise(cfg.descriptor_noise_std);
    let id_width = cfg.scene_count.max(1).to_string().len();

    let mut corpus = SyntheticCorpus {
        scenes: Vec::with_capacity(cfg.scene_count),
        descriptors: Vec::with_capacity(cfg.scene_count),
        stats: Vec::with_capacity(cfg.scene_count),
    };
    for s in 0..cfg.scene_count {
        let n = rng.random_range(cfg.objects_per_scene.0..=cfg.objects_per_scene.1);
        let mut placer = Placer {
            cfg,
            scene: s,
            boxes: Vec::with_capacity(n),
            pair_ious: Vec::new(),
        };
        while placer.boxes.len() < n {
            let remaining = n - placer.boxes.len();
            if remaining >= 2 && rng.random_bool(cfg.occluded_pair_fraction) {
                placer.place_pair(&mut rng)?;
            } else {
                placer.place_single(&mut rng)?;
            }
        }

        let mut scene = Scene::new(format!("{s:0id_width$}"));
        scene.image_size = Some((cfg.image_width, cfg.image_height));
        let mut desc = SceneDescriptors {
            detections: Vec::new(),
            ground_truths: Vec::with_capacity(n),
        };
        for (k, gt_box) in placer.boxes.iter().enumerate() {
            let object_id = k as u32;
            scene
                .ground_truths
                .push(GroundTruth::new(*gt_box, cfg.class_id, object_id));
            let appearance: Vec<f64> = (0..cfg.descriptor_dim)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let mut gt_row = appearance.clone();
            gt_row.extend(normalized_geometry(gt_box, cfg));
            desc.ground_truths.push(gt_row);

            let count = rng.random_range(cfg.detections_per_object.0..=cfg.detections_per_object.1);
            for _ in 0..count {
                let b = jitter(&mut rng, gt_box, cfg.jitter_std);
                let score = (cfg.score_base - cfg.score_slope * (1.0 - b.iou(gt_box)) + score_noise.sample(&mut rng))
                    .clamp(0.0, 1.0);
                let mut det = Detection::new(b, score, cfg.class_id);
                det.object_id = Some(object_id);
                let oracle = k as f64 * cfg.embedding_spacing;
                det.embedding = match cfg.embedding_mode {
                    EmbeddingMode::Oracle => Some(Embedding(oracle)),
                    EmbeddingMode::Noisy => Some(Embedding(oracle + emb_noise.sample(&mut rng))),
                    EmbeddingMode::None => None,
                };
                scene.detections.push(det);
                let mut row: Vec<f64> = appearance.iter().map(|a| a + desc_noise.sample(&mut rng)).collect();
                row.extend(normalized_geometry(&b, cfg));
                desc.detections.push(row);
            }
        }

        let mmiou: Vec<f64> = scene.mmiou().into_iter().map(|m| m.unwrap_or(0.0)).collect();
        let mut levels = BTreeMap::new();
        for m in &mmiou {
            *levels.entry(OcclusionLevel::from_mmiou(*m)).or_insert(0) += 1;
        }
        corpus.stats.push(SceneStats {
            mmiou,
            levels,
            pair_ious: placer.pair_ious,
        });
        corpus.scenes.push(scene);
        corpus.descriptors.push(desc);
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::max_mutual_iou;

    /// MMIoU of every ground truth in `boxes` against the rest.
    fn mmiou_of(boxes: &[BBox<f64>]) -> Vec<f64> {
        (0..boxes.len())
            .map(|i| {
                let others: Vec<_> = boxes
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, b)| *b)
                    .collect();
                max_mutual_iou(&boxes[i], &others)
            })
            .collect()
    }

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            seed,
            scene_count: 40,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic(&small(5)).unwrap();
        let b = generate_synthetic(&small(5)).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&small(6)).unwrap();
        assert_ne!(a.scenes, c.scenes);
    }

    #[test]
    fn no_pairs_means_no_overlap() {
        let cfg = SynthConfig {
            occluded_pair_fraction: 0.0,
            ..small(1)
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        for stats in &corpus.stats {
            assert!(stats.mmiou.iter().all(|m| *m == 0.0));
            assert!(stats.pair_ious.is_empty());
        }
    }

    #[test]
    fn forced_pairs_hit_a_narrow_range() {
        let cfg = SynthConfig {
            occluded_pair_fraction: 1.0,
            pair_iou: (0.6, 0.6 + 1e-9),
            ..small(2)
        };
        let corpus = generate_synthetic(&cfg).unwrap();
        let mut pairs = 0;
        for (scene, stats) in corpus.scenes.iter().zip(&corpus.stats) {
            for v in &stats.pair_ious {
                assert!((0.6..=0.6 + 1e-9).contains(v), "{v}");
                pairs += 1;
            }
            let boxes: Vec<_> = scene.ground_truths.iter().map(|g| g.bbox).collect();
            assert_eq!(mmiou_of(&boxes), stats.mmiou);
        }
        assert!(pairs > 0);
    }

    #[test]
    fn infeasible_range_fails_placement() {
        let cfg = SynthConfig {
            objects_per_scene: (40, 40),
            object_width: (300.0, 300.0),
            aspect_ratio: (1.0, 1.0),
            placement_attempts: 50,
            ..small(3)
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(Error::PlacementFailure { scene: 0, attempts: 50 })
        ));
    }

    #[test]
    fn detections_refer_to_existing_objects_and_sit_close() {
        let corpus = generate_synthetic(&small(4)).unwrap();
        let mut ious = Vec::new();
        for scene in &corpus.scenes {
            for d in &scene.detections {
                let id = d.object_id.unwrap();
                let gt = scene.ground_truths.iter().find(|g| g.object_id == id).unwrap();
                ious.push(d.bbox.iou(&gt.bbox));
                assert!((0.0..=1.0).contains(&d.score));
            }
        }
        let mean = ious.iter().sum::<f64>() / ious.len() as f64;
        assert!(mean > 0.7, "{mean}");
    }

    #[test]
    fn descriptors_align_with_boxes() {
        let cfg = small(7);
        let corpus = generate_synthetic(&cfg).unwrap();
        let len = SyntheticCorpus::descriptor_len(&cfg);
        for (scene, d) in corpus.scenes.iter().zip(&corpus.descriptors) {
            assert_eq!(d.detections.len(), scene.detections.len());
            assert_eq!(d.ground_truths.len(), scene.ground_truths.len());
            assert!(d.detections.iter().chain(&d.ground_truths).all(|r| r.len() == len));
        }
    }

    #[test]
    fn embedding_modes() {
        let oracle = generate_synthetic(&small(8)).unwrap();
        for scene in &oracle.scenes {
            for d in &scene.detections {
                assert_eq!(d.embedding.unwrap().value(), 2.0 * d.object_id.unwrap() as f64);
            }
        }
        let none = generate_synthetic(&SynthConfig {
            embedding_mode: EmbeddingMode::None,
            ..small(8)
        })
        .unwrap();
        assert!(none
            .scenes
            .iter()
            .flat_map(|s| &s.detections)
            .all(|d| d.embedding.is_none()));
    }

    #[test]
    fn config_text_round_trip() {
        let cfg = SynthConfig {
            seed: 42,
            pair_iou: (0.55, 0.8),
            embedding_mode: EmbeddingMode::Noisy,
            ..Default::default()
        };
        assert_eq!(SynthConfig::parse(&cfg.to_text()).unwrap(), cfg);
        let parsed = SynthConfig::parse("# comment\nseed = 3 # trailing\n\nscene_count=7\n").unwrap();
        assert_eq!(parsed.seed, 3);
        assert_eq!(parsed.scene_count, 7);
    }

    #[test]
    fn config_errors() {
        for bad in [
            "colour = red",
            "seed",
            "seed = x",
            "pair_iou = 0.8,0.5",
            "objects_per_scene = 5",
            "occluded_pair_fraction = 1.5",
            "embedding_mode = psychic",
            "jitter_std = -0.1",
        ] {
            assert!(matches!(SynthConfig::parse(bad), Err(Error::InvalidConfig(_))), "{bad}");
        }
    }
}
