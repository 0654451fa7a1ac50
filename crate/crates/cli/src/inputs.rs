//! Reading detection and ground-truth files, singly or as directories of
//! `<scene>.txt` files with `.sge` / `.desc` sidecars.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sgnms_core::data_io::{parse_embeddings, parse_kitti_labels, read_ground_truths, KittiLabelRecord};
use sgnms_core::{Detection64, GroundTruth64, Scene64};

use crate::error::{CliError, CliResult};

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// `path` with `.ext` appended to the full file name.
pub fn sidecar(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// `*.txt` files of a directory, sorted by name.
pub fn list_scene_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "txt"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn scene_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn with_path<T>(path: &Path, r: sgnms_core::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        sgnms_core::Error::MalformedLine { .. } | sgnms_core::Error::InvalidParameter(_) => {
            CliError::input(format!("{}: {e}", path.display()))
        }
        other => CliError::Core(other),
    })
}

/// One detection file: its raw records (kept for faithful rewriting) and detections.
#[derive(Clone, Debug)]
pub struct DetectionSet {
    pub id: String,
    pub records: Vec<KittiLabelRecord>,
    pub detections: Vec<Detection64>,
    /// Whether an embedding sidecar was read.
    pub has_embeddings: bool,
}

fn load_detection_file(path: &Path, embeddings: Option<&Path>) -> CliResult<DetectionSet> {
    let records = with_path(path, parse_kitti_labels(&read_text(path)?))?;
    let mut detections = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        let score = r
            .score
            .ok_or_else(|| CliError::input(format!("{}: line {} has no score column", path.display(), i + 1)))?;
        detections.push(Detection64::new(r.to_bbox(), score, r.class_id()));
    }
    if let Some(sge) = embeddings {
        let values: Vec<f64> = with_path(sge, parse_embeddings(&read_text(sge)?))?;
        if values.len() != detections.len() {
            return Err(CliError::input(format!(
                "{}: {} embeddings for {} detections",
                sge.display(),
                values.len(),
                detections.len()
            )));
        }
        for (d, e) in detections.iter_mut().zip(values) {
            d.embedding = Some(sgnms_core::Embedding(e));
        }
    }
    Ok(DetectionSet {
        id: scene_id(path),
        records,
        detections,
        has_embeddings: embeddings.is_some(),
    })
}

/// Detections from a file (embeddings from `embeddings`) or a directory
/// (embeddings from each file's `.sge` sidecar when present). With
/// `require_embeddings`, a missing sidecar is an error.
pub fn load_detections(
    path: &Path,
    embeddings: Option<&Path>,
    require_embeddings: bool,
) -> CliResult<Vec<DetectionSet>> {
    if path.is_dir() {
        let mut sets = Vec::new();
        for file in list_scene_files(path)? {
            let sge = sidecar(&file, "sge");
            let sge = sge.is_file().then_some(sge);
            if require_embeddings && sge.is_none() {
                return Err(CliError::MissingEmbeddings(format!(
                    "{} has no .sge sidecar",
                    file.display()
                )));
            }
            sets.push(load_detection_file(&file, sge.as_deref())?);
        }
        Ok(sets)
    } else {
        if require_embeddings && embeddings.is_none() {
            return Err(CliError::MissingEmbeddings(
                "pass --embeddings for this algorithm".into(),
            ));
        }
        Ok(vec![load_detection_file(path, embeddings)?])
    }
}

pub fn load_ground_truths(path: &Path) -> CliResult<Vec<(String, Vec<GroundTruth64>)>> {
    let files = if path.is_dir() {
        list_scene_files(path)?
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| Ok((scene_id(f), with_path(f, read_ground_truths(&read_text(f)?))?)))
        .collect()
}

/// Pairs detections with ground truths by scene id. A single file on each
/// side is paired regardless of names; scenes without detections get none.
pub fn build_scenes(dets: &[DetectionSet], gts: Vec<(String, Vec<GroundTruth64>)>) -> CliResult<Vec<Scene64>> {
    if dets.len() == 1 && gts.len() == 1 {
        let (id, ground_truths) = gts.into_iter().next().expect("one entry");
        return Ok(vec![Scene64 {
            id,
            detections: dets[0].detections.clone(),
            ground_truths,
            image_size: None,
        }]);
    }
    let mut by_id: BTreeMap<&str, &DetectionSet> = dets.iter().map(|d| (d.id.as_str(), d)).collect();
    let mut scenes = Vec::with_capacity(gts.len());
    for (id, ground_truths) in gts {
        let detections = by_id
            .remove(id.as_str())
            .map(|d| d.detections.clone())
            .unwrap_or_default();
        scenes.push(Scene64 {
            id,
            detections,
            ground_truths,
            image_size: None,
        });
    }
    if let Some(orphan) = by_id.keys().next() {
        return Err(CliError::input(format!(
            "detections for scene '{orphan}' have no ground-truth file"
        )));
    }
    Ok(scenes)
}
