//! `train-embed` and `embed`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use sgnms_core::data_io::{parse_kitti_labels, write_embeddings, DescriptorFile};
use sgnms_core::embedding::train::LossRecord;
use sgnms_core::{train_provider, BBox64, EmbeddingLossConfig, EmbeddingScene, Provider64, TrainHyper};

use crate::error::{CliError, CliResult};
use crate::inputs::{list_scene_files, read_text, scene_id, sidecar, write_text};
use crate::manifest::{manifest_path, RunManifest};

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Scene directory with `det/` and `gt/` files and their `.desc` sidecars.
    #[arg(long)]
    pub scenes: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    /// Minimum IoU for a box to be assigned to a ground truth.
    #[arg(long, default_value_t = 0.7)]
    pub theta: f64,
    /// Second-best IoU above which the separation term applies.
    #[arg(long, default_value_t = 0.27)]
    pub rho: f64,
    /// Separation margin.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.5)]
    pub init_std: f64,
    /// Share of scenes held out to select the returned weights.
    #[arg(long, default_value_t = 0.2)]
    pub holdout: f64,
    /// Provider file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss-curve CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EmbedArgs {
    #[arg(long)]
    pub provider: PathBuf,
    /// Detection file or directory; descriptors come from `.desc` sidecars.
    #[arg(long)]
    pub dets: PathBuf,
    /// Descriptor file for a single detection file.
    #[arg(long)]
    pub descriptors: Option<PathBuf>,
    /// Output file, or directory when `--dets` is a directory.
    #[arg(long)]
    pub out: PathBuf,
}

fn read_descriptors(path: &Path) -> CliResult<DescriptorFile> {
    DescriptorFile::parse(&read_text(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn read_boxes(path: &Path) -> CliResult<(Vec<BBox64>, Vec<bool>)> {
    let records =
        parse_kitti_labels(&read_text(path)?).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    Ok(records.iter().map(|r| (r.to_bbox(), r.is_dont_care())).unzip())
}

fn load_training_scene(det_path: &Path, gt_dir: &Path) -> CliResult<EmbeddingScene<f64>> {
    let gt_path = gt_dir.join(format!("{}.txt", scene_id(det_path)));
    let det_desc = read_descriptors(&sidecar(det_path, "desc"))?;
    let gt_desc = read_descriptors(&sidecar(&gt_path, "desc"))?;
    if det_desc.image_size != gt_desc.image_size {
        return Err(CliError::input(format!(
            "{}: image size differs from its ground truth",
            det_path.display()
        )));
    }
    let (boxes, _) = read_boxes(det_path)?;
    let (gt_all, ignore) = read_boxes(&gt_path)?;
    if boxes.len() != det_desc.rows.len() || gt_all.len() != gt_desc.rows.len() {
        return Err(CliError::input(format!(
            "{}: descriptor rows do not match boxes",
            det_path.display()
        )));
    }
    let (gts, gt_rows): (Vec<BBox64>, Vec<Vec<f64>>) = gt_all
        .into_iter()
        .zip(gt_desc.rows)
        .zip(ignore)
        .filter(|(_, ig)| !ig)
        .map(|(pair, _)| pair)
        .unzip();
    let (w, h) = det_desc.image_size;
    EmbeddingScene::new(boxes, &det_desc.rows, gts, &gt_rows, w, h)
        .map_err(|e| CliError::input(format!("{}: {e}", det_path.display())))
}

fn curve_csv(curve: &[LossRecord<f64>]) -> String {
    let mut out = String::from("iteration,group,separation,total,holdout\n");
    for r in curve {
        let hold = r.holdout.map(|h| format!("{h:.8}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{:.8},{:.8},{:.8},{hold}",
            r.iteration,
            r.train.group,
            r.train.separation,
            r.train.total()
        );
    }
    out
}

pub fn cmd_train_embed(a: &TrainArgs, argv: &[String]) -> CliResult<()> {
    let det_dir = a.scenes.join("det");
    let gt_dir = a.scenes.join("gt");
    let scenes = list_scene_files(&det_dir)?
        .iter()
        .map(|p| load_training_scene(p, &gt_dir))
        .collect::<CliResult<Vec<_>>>()?;
    let cfg = EmbeddingLossConfig {
        theta: a.theta,
        rho: a.rho,
        sigma: a.sigma,
    };
    let hyper = TrainHyper {
        learning_rate: a.lr,
        iterations: a.iters,
        seed: a.seed,
        init_std: a.init_std,
        holdout_fraction: a.holdout,
    };
    let outcome = train_provider(&scenes, &cfg, &hyper)?;

    let curve_path = a.curve.clone().unwrap_or_else(|| sidecar(&a.out, "loss.csv"));
    write_text(&a.out, &outcome.provider.to_text())?;
    write_text(&curve_path, &curve_csv(&outcome.curve))?;

    let mut manifest = RunManifest::new("train-embed", argv);
    manifest.seed = Some(a.seed);
    manifest
        .set("iters", a.iters)
        .set("lr", a.lr)
        .set("theta", a.theta)
        .set("rho", a.rho)
        .set("sigma", a.sigma)
        .set("init_std", a.init_std)
        .set("holdout", a.holdout)
        .set("selected_iteration", outcome.selected_iteration);
    manifest.input(&a.scenes).output(&a.out).output(&curve_path);
    manifest.write(&manifest_path(&a.out, false))?;

    let first = outcome.curve.first().map(|r| r.train.total()).unwrap_or(0.0);
    let last = outcome.curve.last().map(|r| r.train.total()).unwrap_or(0.0);
    println!(
        "trained on {} scenes: loss {first:.6} -> {last:.6}, kept iteration {}",
        scenes.len(),
        outcome.selected_iteration
    );
    Ok(())
}

fn embed_file(provider: &Provider64, det_path: &Path, desc_path: &Path) -> CliResult<String> {
    let desc = read_descriptors(desc_path)?;
    let (boxes, _) = read_boxes(det_path)?;
    if boxes.len() != desc.rows.len() {
        return Err(CliError::input(format!(
            "{}: {} descriptors for {} detections",
            desc_path.display(),
            desc.rows.len(),
            boxes.len()
        )));
    }
    let (w, h) = desc.image_size;
    let values = boxes
        .iter()
        .zip(&desc.rows)
        .map(|(b, row)| provider.embed_box(row, b, w, h).map(|e| e.value()))
        .collect::<sgnms_core::Result<Vec<f64>>>()
        .map_err(|e| CliError::input(format!("{}: {e}", desc_path.display())))?;
    Ok(write_embeddings(&values))
}

pub fn cmd_embed(a: &EmbedArgs, argv: &[String]) -> CliResult<()> {
    let provider = Provider64::from_text(&read_text(&a.provider)?)
        .map_err(|e| CliError::input(format!("{}: {e}", a.provider.display())))?;
    let dir_mode = a.dets.is_dir();
    let jobs: Vec<(PathBuf, PathBuf, PathBuf)> = if dir_mode {
        list_scene_files(&a.dets)?
            .into_iter()
            .map(|p| {
                let out = a.out.join(p.file_name().expect("listed file"));
                (sidecar(&p, "desc"), p, out)
            })
            .collect()
    } else {
        let desc = a.descriptors.clone().unwrap_or_else(|| sidecar(&a.dets, "desc"));
        vec![(desc, a.dets.clone(), a.out.clone())]
    };

    let mut manifest = RunManifest::new("embed", argv);
    manifest.input(&a.provider).input(&a.dets);
    for (desc, det, out) in &jobs {
        let sge = embed_file(&provider, det, desc)?;
        write_text(out, &read_text(det)?)?;
        write_text(&sidecar(out, "sge"), &sge)?;
        manifest.output(out);
    }
    manifest.write(&manifest_path(&a.out, dir_mode))?;
    println!("embedded {} detection files", jobs.len());
    Ok(())
}
