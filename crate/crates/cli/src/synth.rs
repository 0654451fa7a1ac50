//! `synth`: writes a generated corpus as a scene directory.
//!
//! Layout: `gt/<id>.txt` and `det/<id>.txt` in KITTI format, `det/<id>.txt.sge`
//! embeddings (unless the embedding mode is `none`), `.desc` descriptor
//! sidecars for both, plus `synth.cfg`, `stats.csv` and `manifest.json`.

use std::fmt::Write as _;
use std::path::PathBuf;

use clap::Args;
use sgnms_core::data_io::{
    generate_synthetic, write_detections, write_ground_truths, DescriptorFile, SynthConfig, SyntheticCorpus,
};
use sgnms_core::OcclusionLevel;

use crate::error::CliResult;
use crate::inputs::{read_text, sidecar, write_text};
use crate::manifest::{manifest_path, RunManifest};

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// `key = value` generator config; absent keys keep their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub fn cmd_synth(a: &SynthArgs, argv: &[String]) -> CliResult<()> {
    let mut cfg = match &a.config {
        Some(p) => SynthConfig::parse(&read_text(p)?)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let corpus = generate_synthetic(&cfg)?;
    write_corpus(&corpus, &cfg, a, argv)
}

fn write_corpus(corpus: &SyntheticCorpus, cfg: &SynthConfig, a: &SynthArgs, argv: &[String]) -> CliResult<()> {
    let out = &a.out_dir;
    let image_size = (cfg.image_width, cfg.image_height);
    let dim = SyntheticCorpus::descriptor_len(cfg);
    let mut stats = String::from("scene,gts,bare,partial,heavy,pairs,mean_mmiou\n");
    for ((scene, desc), st) in corpus.scenes.iter().zip(&corpus.descriptors).zip(&corpus.stats) {
        let gt_path = out.join("gt").join(format!("{}.txt", scene.id));
        let det_path = out.join("det").join(format!("{}.txt", scene.id));
        write_text(&gt_path, &write_ground_truths(&scene.ground_truths)?)?;
        let files = write_detections(&scene.detections)?;
        write_text(&det_path, &files.labels)?;
        if let Some(sge) = files.embeddings {
            write_text(&sidecar(&det_path, "sge"), &sge)?;
        }
        for (path, rows) in [(&gt_path, &desc.ground_truths), (&det_path, &desc.detections)] {
            let file = DescriptorFile {
                dim,
                image_size,
                rows: rows.clone(),
            };
            write_text(&sidecar(path, "desc"), &file.to_text())?;
        }
        let level = |l| st.levels.get(&l).copied().unwrap_or(0);
        let mean = if st.mmiou.is_empty() {
            0.0
        } else {
            st.mmiou.iter().sum::<f64>() / st.mmiou.len() as f64
        };
        let _ = writeln!(
            stats,
            "{},{},{},{},{},{},{mean:.4}",
            scene.id,
            scene.ground_truths.len(),
            level(OcclusionLevel::Bare),
            level(OcclusionLevel::Partial),
            level(OcclusionLevel::Heavy),
            st.pair_ious.len()
        );
    }
    write_text(&out.join("synth.cfg"), &cfg.to_text())?;
    write_text(&out.join("stats.csv"), &stats)?;

    let mut manifest = RunManifest::new("synth", argv);
    manifest.seed = Some(cfg.seed);
    for line in cfg.to_text().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            manifest.set(k, v);
        }
    }
    if let Some(c) = &a.config {
        manifest.input(c);
    }
    manifest.output(out);
    manifest.write(&manifest_path(out, true))?;
    println!("wrote {} scenes to {}", corpus.scenes.len(), out.display());
    Ok(())
}
