//! Text formats: KITTI label and detection files, the `.sge` embedding
//! sidecar, the `.desc` descriptor sidecar, and the synthetic scene generator.
//!
//! Every writer emits LF-terminated UTF-8 with four decimals per number, and
//! every parser accepts what the writers emit.

mod synth;

pub use synth::{generate_synthetic, EmbeddingMode, SceneDescriptors, SceneStats, SynthConfig, SyntheticCorpus};

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::evaluation::{GroundTruth, DONT_CARE};
use crate::geometry::BBox;
use crate::scalar::Scalar;
use crate::suppression::{ClassId, Detection};

/// Object types of the KITTI object benchmark; the position is the class id.
pub const KITTI_CLASSES: [&str; 8] = [
    "Car",
    "Van",
    "Truck",
    "Pedestrian",
    "Person_sitting",
    "Cyclist",
    "Tram",
    "Misc",
];

pub const DONT_CARE_NAME: &str = "DontCare";

pub fn class_id_of(name: &str) -> Option<ClassId> {
    if name == DONT_CARE_NAME {
        return Some(DONT_CARE);
    }
    KITTI_CLASSES.iter().position(|c| *c == name).map(|i| i as ClassId)
}

pub fn class_name(id: ClassId) -> Option<&'static str> {
    if id == DONT_CARE {
        return Some(DONT_CARE_NAME);
    }
    KITTI_CLASSES.get(id as usize).copied()
}

/// One line of a KITTI label (15 fields) or detection (16 fields) file.
#[derive(Clone, Debug, PartialEq)]
pub struct KittiLabelRecord {
    pub kind: String,
    pub truncated: f64,
    /// 0 visible, 1 partly, 2 largely occluded, 3 unknown, -1 unset.
    pub occluded: i32,
    pub alpha: f64,
    /// `x1 y1 x2 y2` in pixels.
    pub bbox: [f64; 4],
    /// `h w l` in meters.
    pub dimensions: [f64; 3],
    /// `x y z` in camera coordinates, meters.
    pub location: [f64; 3],
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl KittiLabelRecord {
    /// Record with the KITTI "unknown" placeholders for every 3D field.
    pub fn new_2d(kind: &str, bbox: [f64; 4], score: Option<f64>) -> Self {
        Self {
            kind: kind.to_string(),
            truncated: -1.0,
            occluded: -1,
            alpha: -10.0,
            bbox,
            dimensions: [-1.0; 3],
            location: [-1000.0; 3],
            rotation_y: -10.0,
            score,
        }
    }

    pub fn is_dont_care(&self) -> bool {
        self.kind == DONT_CARE_NAME
    }

    pub fn class_id(&self) -> ClassId {
        class_id_of(&self.kind).expect("kind validated on parse")
    }

    pub fn to_bbox<T: Scalar>(&self) -> BBox<T> {
        let [x1, y1, x2, y2] = self.bbox;
        BBox::new(T::lit(x1), T::lit(y1), T::lit(x2), T::lit(y2))
    }

    /// The line this record serializes to, without the newline.
    pub fn to_line(&self) -> String {
        let mut s = format!(
            "{} {:.4} {} {:.4}",
            self.kind, self.truncated, self.occluded, self.alpha
        );
        for v in self.bbox.iter().chain(&self.dimensions).chain(&self.location) {
            let _ = write!(s, " {v:.4}");
        }
        let _ = write!(s, " {:.4}", self.rotation_y);
        if let Some(score) = self.score {
            let _ = write!(s, " {score:.4}");
        }
        s
    }
}

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedLine {
        line,
        reason: reason.into(),
    }
}

fn parse_number(line: usize, field: &str, what: &str) -> Result<f64> {
    match field.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(malformed(line, format!("{what}: '{field}' is not a finite number"))),
    }
}

/// Parses one record; `line` is 1-based and only used in errors.
pub fn parse_kitti_line(text: &str, line: usize) -> Result<KittiLabelRecord> {
    let f: Vec<&str> = text.split_whitespace().collect();
    if f.len() != 15 && f.len() != 16 {
        return Err(malformed(line, format!("expected 15 or 16 fields, found {}", f.len())));
    }
    if class_id_of(f[0]).is_none() {
        return Err(malformed(line, format!("unknown object type '{}'", f[0])));
    }
    let num = |i: usize, what: &str| parse_number(line, f[i], what);
    let occluded: i32 = f[2]
        .parse()
        .ok()
        .filter(|o| (-1..=3).contains(o))
        .ok_or_else(|| malformed(line, format!("occluded: '{}' is not one of -1, 0, 1, 2, 3", f[2])))?;
    let bbox = [
        num(4, "bbox x1")?,
        num(5, "bbox y1")?,
        num(6, "bbox x2")?,
        num(7, "bbox y2")?,
    ];
    if bbox[0] > bbox[2] || bbox[1] > bbox[3] {
        return Err(malformed(line, "bbox corners out of order"));
    }
    Ok(KittiLabelRecord {
        kind: f[0].to_string(),
        truncated: num(1, "truncated")?,
        occluded,
        alpha: num(3, "alpha")?,
        bbox,
        dimensions: [num(8, "height")?, num(9, "width")?, num(10, "length")?],
        location: [num(11, "x")?, num(12, "y")?, num(13, "z")?],
        rotation_y: num(14, "rotation_y")?,
        score: if f.len() == 16 { Some(num(15, "score")?) } else { None },
    })
}

/// Parses a whole label or detection file. Blank lines are skipped.
pub fn parse_kitti_labels(text: &str) -> Result<Vec<KittiLabelRecord>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_kitti_line(l, i + 1))
        .collect()
}

pub fn write_kitti_records(records: &[KittiLabelRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

/// Ground truths from label records. Object ids are row indices; `DontCare`
/// rows become ignore regions.
pub fn ground_truths_from_records<T: Scalar>(records: &[KittiLabelRecord]) -> Vec<GroundTruth<T>> {
    records
        .iter()
        .enumerate()
        .map(|(i, r)| GroundTruth {
            bbox: r.to_bbox(),
            class_id: r.class_id(),
            object_id: i as u32,
            truncation: T::lit(r.truncated),
            occlusion: r.occluded,
            ignore: r.is_dont_care(),
        })
        .collect()
}

pub fn read_ground_truths<T: Scalar>(text: &str) -> Result<Vec<GroundTruth<T>>> {
    Ok(ground_truths_from_records(&parse_kitti_labels(text)?))
}

pub fn write_ground_truths<T: Scalar>(gts: &[GroundTruth<T>]) -> Result<String> {
    let records = gts
        .iter()
        .map(|g| {
            let name = class_name(g.class_id)
                .ok_or_else(|| Error::InvalidParameter(format!("no KITTI name for class {}", g.class_id)))?;
            let [x1, y1, x2, y2] = g.bbox.corners();
            let mut r = KittiLabelRecord::new_2d(name, [x1.as_f64(), y1.as_f64(), x2.as_f64(), y2.as_f64()], None);
            if g.class_id != DONT_CARE {
                r.truncated = g.truncation.as_f64();
                r.occluded = g.occlusion;
            }
            Ok(r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(write_kitti_records(&records))
}

/// A detection file and, when every detection carries an embedding, its `.sge` sidecar.
#[derive(Clone, Debug, PartialEq)]
pub struct DetectionFiles {
    pub labels: String,
    pub embeddings: Option<String>,
}

pub fn write_detections<T: Scalar>(dets: &[Detection<T>]) -> Result<DetectionFiles> {
    let records = dets
        .iter()
        .map(|d| {
            let name = class_name(d.class_id)
                .ok_or_else(|| Error::InvalidParameter(format!("no KITTI name for class {}", d.class_id)))?;
            let [x1, y1, x2, y2] = d.bbox.corners();
            Ok(KittiLabelRecord::new_2d(
                name,
                [x1.as_f64(), y1.as_f64(), x2.as_f64(), y2.as_f64()],
                Some(d.score.as_f64()),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let embeddings = dets
        .iter()
        .map(|d| d.embedding.map(|e| e.value()))
        .collect::<Option<Vec<T>>>()
        .map(|v| write_embeddings(&v));
    Ok(DetectionFiles {
        labels: write_kitti_records(&records),
        embeddings,
    })
}

/// Detections from a 16-field file, with embeddings from the sidecar when given.
pub fn read_detections<T: Scalar>(text: &str, sidecar: Option<&str>) -> Result<Vec<Detection<T>>> {
    let records = parse_kitti_labels(text)?;
    let mut dets = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let score = r
            .score
            .ok_or_else(|| Error::InvalidParameter(format!("detection {} has no score column", i + 1)))?;
        dets.push(Detection::new(r.to_bbox(), T::lit(score), r.class_id()));
    }
    if let Some(sidecar) = sidecar {
        let values = parse_embeddings::<T>(sidecar)?;
        if values.len() != dets.len() {
            return Err(Error::InvalidParameter(format!(
                "embedding sidecar has {} values for {} detections",
                values.len(),
                dets.len()
            )));
        }
        for (d, e) in dets.iter_mut().zip(values) {
            *d = d.clone().with_embedding(e);
        }
    }
    Ok(dets)
}

/// One value per line.
pub fn write_embeddings<T: Scalar>(values: &[T]) -> String {
    let mut out = String::new();
    for v in values {
        let _ = writeln!(out, "{:.4}", v.as_f64());
    }
    out
}

pub fn parse_embeddings<T: Scalar>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_number(i + 1, l.trim(), "embedding").map(T::lit))
        .collect()
}

/// Per-box appearance descriptors with the image size they were taken from.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorFile {
    pub dim: usize,
    pub image_size: (f64, f64),
    pub rows: Vec<Vec<f64>>,
}

const DESCRIPTOR_MAGIC: &str = "sg-descriptors v1";

impl DescriptorFile {
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{DESCRIPTOR_MAGIC} dims={} image={}x{}\n",
            self.dim, self.image_size.0, self.image_size.1
        );
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            out.push_str(&cells.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| malformed(1, "empty descriptor file"))?;
        let rest = header
            .strip_prefix(DESCRIPTOR_MAGIC)
            .ok_or_else(|| malformed(1, "missing descriptor header"))?;
        let mut dim = None;
        let mut image = None;
        for tok in rest.split_whitespace() {
            if let Some(v) = tok.strip_prefix("dims=") {
                dim = v.parse::<usize>().ok();
            } else if let Some(v) = tok.strip_prefix("image=") {
                image = v
                    .split_once('x')
                    .and_then(|(w, h)| Some((w.parse::<f64>().ok()?, h.parse::<f64>().ok()?)))
                    .filter(|(w, h)| *w > 0.0 && *h > 0.0 && w.is_finite() && h.is_finite());
            }
        }
        let dim = dim.ok_or_else(|| malformed(1, "header lacks a valid dims="))?;
        let image_size = image.ok_or_else(|| malformed(1, "header lacks a valid image=WxH"))?;
        let mut rows = Vec::new();
        for (i, l) in lines {
            if l.trim().is_empty() {
                continue;
            }
            let row = l
                .split_whitespace()
                .map(|f| parse_number(i + 1, f, "descriptor"))
                .collect::<Result<Vec<_>>>()?;
            if row.len() != dim {
                return Err(malformed(i + 1, format!("expected {dim} values, found {}", row.len())));
            }
            rows.push(row);
        }
        Ok(Self { dim, image_size, rows })
    }
}
