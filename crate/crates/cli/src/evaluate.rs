//! `nms`, `eval` and `sweep`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use sgnms_core::data_io::{write_embeddings, write_kitti_records, KittiLabelRecord};
use sgnms_core::evaluation::{duplicates_by_mmiou_from, match_detections, EvalReport};
use sgnms_core::{suppress_per_class, KittiDifficulty, NmsAlgorithm, Scene64};

use crate::error::{CliError, CliResult};
use crate::inputs::{build_scenes, load_detections, load_ground_truths, sidecar, write_text};
use crate::manifest::{manifest_path, RunManifest};
use crate::Algo;

#[derive(Args, Debug)]
pub struct NmsParams {
    /// IoU suppression threshold.
    #[arg(long, default_value_t = 0.5)]
    pub nt: f64,
    /// Phi threshold parameter for the sg-* algorithms.
    #[arg(long)]
    pub t: Option<f64>,
    /// Soft NMS drops detections whose decayed score falls below this.
    #[arg(long, default_value_t = NmsAlgorithm::<f64>::DEFAULT_SCORE_FLOOR)]
    pub score_floor: f64,
}

#[derive(Args, Debug)]
pub struct NmsArgs {
    #[arg(long, value_enum)]
    pub algo: Algo,
    #[command(flatten)]
    pub params: NmsParams,
    /// Detection file, or directory of `<scene>.txt` files with `.sge` sidecars.
    #[arg(long)]
    pub dets: PathBuf,
    /// Embedding sidecar for a single detection file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output file, or directory when `--dets` is a directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Metric {
    Ap,
    Lamr,
    RecallBins,
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl From<Difficulty> for KittiDifficulty {
    fn from(d: Difficulty) -> Self {
        match d {
            Difficulty::Easy => KittiDifficulty::Easy,
            Difficulty::Moderate => KittiDifficulty::Moderate,
            Difficulty::Hard => KittiDifficulty::Hard,
        }
    }
}

#[derive(Args, Debug)]
pub struct SceneOpts {
    /// Detection file or directory.
    #[arg(long)]
    pub dets: PathBuf,
    /// Ground-truth label file or directory.
    #[arg(long)]
    pub gts: PathBuf,
    /// Embedding sidecar for a single detection file.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Matching IoU threshold.
    #[arg(long, default_value_t = 0.7)]
    pub iou: f64,
    /// MMIoU bin edges, comma separated.
    #[arg(long, default_value = "0,0.2,0.5,1.0")]
    pub bins: String,
    /// Ignore ground truths harder than this KITTI level.
    #[arg(long, value_enum)]
    pub difficulty: Option<Difficulty>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub scenes: SceneOpts,
    #[arg(long, value_enum, default_value_t = Metric::All)]
    pub metric: Metric,
    /// Suppress detections with this algorithm before scoring.
    #[arg(long, value_enum)]
    pub algo: Option<Algo>,
    #[command(flatten)]
    pub params: NmsParams,
    /// Directory for report.txt, pr_curve.csv and recall_by_bin.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Nt,
    T,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long, value_enum)]
    pub algo: Algo,
    /// Inclusive grid `start:stop:step`, or a single value.
    #[arg(long)]
    pub param_grid: String,
    /// Swept parameter; `nt` for greedy and soft, `t` for the sg-* algorithms by default.
    #[arg(long, value_enum)]
    pub param: Option<SweepParam>,
    #[command(flatten)]
    pub params: NmsParams,
    #[command(flatten)]
    pub scenes: SceneOpts,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn parse_bins(s: &str) -> CliResult<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| CliError::input(format!("--bins: '{v}' is not a number")))
        })
        .collect()
}

/// Inclusive `start:stop:step` grid, or a single value.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::input(format!("--param-grid: expected start:stop:step, got '{s}'"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<CliResult<_>>()?;
    match parts[..] {
        [v] if v.is_finite() => Ok(vec![v]),
        [start, stop, step] if start.is_finite() && stop >= start && step > 0.0 && step.is_finite() => {
            let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

fn load_scenes(opts: &SceneOpts, require_embeddings: bool, manifest: &mut RunManifest) -> CliResult<Vec<Scene64>> {
    let dets = load_detections(&opts.dets, opts.embeddings.as_deref(), require_embeddings)?;
    let gts = load_ground_truths(&opts.gts)?;
    let mut scenes = build_scenes(&dets, gts)?;
    if let Some(level) = opts.difficulty {
        scenes = scenes.iter().map(|s| s.with_difficulty(level.into())).collect();
    }
    manifest.input(&opts.dets).input(&opts.gts);
    if let Some(e) = &opts.embeddings {
        manifest.input(e);
    }
    manifest
        .set("iou", opts.iou)
        .set("bins", opts.bins.clone())
        .set("difficulty", opts.difficulty.map(|d| format!("{d:?}").to_lowercase()));
    Ok(scenes)
}

/// Runs `algorithm` on every scene; also returns each scene's kept input indices.
fn suppress_scenes(
    scenes: &[Scene64],
    algorithm: &NmsAlgorithm<f64>,
) -> CliResult<(Vec<Scene64>, Vec<BTreeSet<usize>>)> {
    let out: Vec<(Scene64, BTreeSet<usize>)> = scenes
        .par_iter()
        .map(|s| {
            let r = suppress_per_class(&s.detections, algorithm)?;
            let kept = r.kept_indices().into_iter().collect();
            let scene = Scene64 {
                detections: r.kept_detections(),
                ..s.clone()
            };
            Ok((scene, kept))
        })
        .collect::<CliResult<_>>()?;
    Ok(out.into_iter().unzip())
}

fn evaluate(scenes: &[Scene64], iou: f64, bins: &[f64]) -> CliResult<EvalReport> {
    let matches: Vec<_> = scenes.par_iter().map(|s| match_detections(s, iou)).collect();
    Ok(EvalReport::from_matches(scenes, &matches, bins)?)
}

fn record_params(m: &mut RunManifest, algo: Algo, p: &NmsParams) {
    m.set("algo", algo.name())
        .set("nt", p.nt)
        .set("t", p.t)
        .set("score_floor", p.score_floor);
}

pub fn cmd_nms(a: &NmsArgs, argv: &[String]) -> CliResult<()> {
    let algorithm = a.algo.build(a.params.nt, a.params.t, a.params.score_floor)?;
    let sets = load_detections(&a.dets, a.embeddings.as_deref(), a.algo.needs_embeddings())?;
    let dir_mode = a.dets.is_dir();

    let outputs: Vec<(PathBuf, String, Option<String>, usize, usize)> = sets
        .par_iter()
        .map(|set| {
            let r = suppress_per_class(&set.detections, &algorithm)?;
            let records: Vec<KittiLabelRecord> = r
                .kept
                .iter()
                .map(|k| KittiLabelRecord {
                    score: Some(k.score),
                    ..set.records[k.index].clone()
                })
                .collect();
            let sge = set.has_embeddings.then(|| {
                let v: Vec<f64> = r
                    .kept
                    .iter()
                    .filter_map(|k| k.detection.embedding.map(|e| e.value()))
                    .collect();
                write_embeddings(&v)
            });
            let path = if dir_mode {
                a.out.join(format!("{}.txt", set.id))
            } else {
                a.out.clone()
            };
            Ok((
                path,
                write_kitti_records(&records),
                sge,
                r.kept.len(),
                set.detections.len(),
            ))
        })
        .collect::<CliResult<_>>()?;

    let mut manifest = RunManifest::new("nms", argv);
    record_params(&mut manifest, a.algo, &a.params);
    manifest.input(&a.dets);
    if let Some(e) = &a.embeddings {
        manifest.input(e);
    }
    let (mut kept, mut total) = (0, 0);
    for (path, text, sge, k, n) in &outputs {
        write_text(path, text)?;
        manifest.output(path);
        if let Some(sge) = sge {
            let p = sidecar(path, "sge");
            write_text(&p, sge)?;
            manifest.output(&p);
        }
        kept += k;
        total += n;
    }
    manifest.write(&manifest_path(&a.out, dir_mode))?;
    println!("kept {kept} of {total} detections");
    Ok(())
}

fn metric_lines(report: &str, metric: Metric) -> String {
    let keep = |line: &str| match metric {
        Metric::All => true,
        Metric::Ap => ["ap=", "tp=", "fp=", "fn=", "ignored="]
            .iter()
            .any(|p| line.starts_with(p)),
        Metric::Lamr => line.starts_with("lamr="),
        Metric::RecallBins => line.starts_with("recall_") || line.starts_with("count_"),
    };
    report.lines().filter(|l| keep(l)).map(|l| format!("{l}\n")).collect()
}

pub fn cmd_eval(a: &EvalArgs, argv: &[String]) -> CliResult<()> {
    let bins = parse_bins(&a.scenes.bins)?;
    let mut manifest = RunManifest::new("eval", argv);
    manifest.set("metric", format!("{:?}", a.metric).to_lowercase());
    let needs = a.algo.is_some_and(Algo::needs_embeddings);
    let mut scenes = load_scenes(&a.scenes, needs, &mut manifest)?;
    if let Some(algo) = a.algo {
        let algorithm = algo.build(a.params.nt, a.params.t, a.params.score_floor)?;
        record_params(&mut manifest, algo, &a.params);
        scenes = suppress_scenes(&scenes, &algorithm)?.0;
    }
    let report = evaluate(&scenes, a.scenes.iou, &bins)?;
    let text = report.to_key_value();
    print!("{}", metric_lines(&text, a.metric));

    if let Some(out) = &a.out {
        for (name, body) in [
            ("report.txt", text.clone()),
            ("pr_curve.csv", report.pr_curve_csv()),
            ("recall_by_bin.csv", report.recall_by_bin_csv()),
        ] {
            let p = out.join(name);
            write_text(&p, &body)?;
            manifest.output(&p);
        }
        manifest.write(&manifest_path(out, true))?;
    }
    Ok(())
}

struct SweepRow {
    value: f64,
    report: EvalReport,
    duplicates: Vec<usize>,
    kept: Vec<BTreeSet<usize>>,
}

pub fn cmd_sweep(a: &SweepArgs, argv: &[String]) -> CliResult<()> {
    let bins = parse_bins(&a.scenes.bins)?;
    let grid = parse_grid(&a.param_grid)?;
    let param = a.param.unwrap_or(if a.algo.needs_embeddings() {
        SweepParam::T
    } else {
        SweepParam::Nt
    });
    if param == SweepParam::T && !a.algo.needs_embeddings() {
        return Err(CliError::input(format!("{} has no t parameter", a.algo.name())));
    }
    let mut manifest = RunManifest::new("sweep", argv);
    record_params(&mut manifest, a.algo, &a.params);
    manifest
        .set("param", format!("{param:?}").to_lowercase())
        .set("param_grid", a.param_grid.clone());
    let scenes = load_scenes(&a.scenes, a.algo.needs_embeddings(), &mut manifest)?;

    let rows: Vec<SweepRow> = grid
        .par_iter()
        .map(|&value| {
            let (nt, t) = match param {
                SweepParam::Nt => (value, a.params.t),
                SweepParam::T => (a.params.nt, Some(value)),
            };
            let algorithm = a.algo.build(nt, t, a.params.score_floor)?;
            let (after, kept) = suppress_scenes(&scenes, &algorithm)?;
            let matches: Vec<_> = after.iter().map(|s| match_detections(s, a.scenes.iou)).collect();
            Ok(SweepRow {
                value,
                report: EvalReport::from_matches(&after, &matches, &bins)?,
                duplicates: duplicates_by_mmiou_from(&after, &matches, a.scenes.iou, &bins)?,
                kept,
            })
        })
        .collect::<CliResult<_>>()?;

    let csv = sweep_csv(&rows, &bins);
    write_text(&a.out, &csv)?;
    manifest.output(&a.out);
    manifest.write(&manifest_path(&a.out, false))?;
    print!("{csv}");
    Ok(())
}

fn sweep_csv(rows: &[SweepRow], bins: &[f64]) -> String {
    let labels: Vec<String> = bins.windows(2).map(|w| format!("{:.4}_{:.4}", w[0], w[1])).collect();
    let mut out = String::from("param,ap,lamr,kept");
    for l in &labels {
        let _ = write!(out, ",recall_{l}");
    }
    for l in &labels {
        let _ = write!(out, ",dup_{l}");
    }
    out.push_str(",kept_subset_of_prev\n");

    for (i, row) in rows.iter().enumerate() {
        let kept: usize = row.kept.iter().map(BTreeSet::len).sum();
        let _ = write!(
            out,
            "{:.4},{:.4},{:.4},{kept}",
            row.value, row.report.ap, row.report.lamr
        );
        for k in 0..labels.len() {
            match row.report.recall_by_bin.get(&k) {
                Some(b) => {
                    let _ = write!(out, ",{:.4}", b.recall());
                }
                None => out.push(','),
            }
        }
        for d in &row.duplicates {
            let _ = write!(out, ",{d}");
        }
        let shrink = match i {
            0 => "-".to_string(),
            _ => {
                let prev = &rows[i - 1].kept;
                let subset = row.kept.iter().zip(prev).all(|(cur, p)| cur.is_subset(p));
                u8::from(subset).to_string()
            }
        };
        let _ = writeln!(out, ",{shrink}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0.5").unwrap(), vec![0.5]);
        let g = parse_grid("0.7:1.2:0.1").unwrap();
        assert_eq!(g.len(), 6);
        assert!((g[5] - 1.2).abs() < 1e-12);
        assert_eq!(parse_grid("1.5:2.0:0.1").unwrap().len(), 6);
        assert_eq!(parse_grid("0.3:0.7:0.1").unwrap().len(), 5);
        assert!(parse_grid("1:0:0.1").is_err());
        assert!(parse_grid("0:1:0").is_err());
        assert!(parse_grid("0:1").is_err());
        assert!(parse_grid("a:b:c").is_err());
    }

    #[test]
    fn bins() {
        assert_eq!(parse_bins("0,0.2,0.5,1.0").unwrap(), vec![0.0, 0.2, 0.5, 1.0]);
        assert!(parse_bins("0,x").is_err());
    }

    #[test]
    fn metric_filter() {
        let r =
            "ap=1.0000\nlamr=0.0000\ntp=1\nfp=0\nfn=0\nignored=0\nrecall_0.0000_0.2000=1.0000\ncount_0.0000_0.2000=1\n";
        assert_eq!(metric_lines(r, Metric::Lamr), "lamr=0.0000\n");
        assert_eq!(metric_lines(r, Metric::Ap), "ap=1.0000\ntp=1\nfp=0\nfn=0\nignored=0\n");
        assert_eq!(metric_lines(r, Metric::RecallBins).lines().count(), 2);
        assert_eq!(metric_lines(r, Metric::All), r);
    }
}
