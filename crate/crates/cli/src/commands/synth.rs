use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use kalman_assoc::io::{generate_scenes, write_mot, SceneConfig};
use serde::Serialize;

use crate::manifest::{manifest_path, RunManifest};
use crate::overlay::{merged_table, resolve};
use crate::sequences::{write_file, DET_FILE, EMBEDDINGS_FILE, GT_FILE};

#[derive(Debug, Clone, Default, Args)]
pub struct SynthArgs {
    /// Scene config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory; one subdirectory per sequence.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: SceneFlags,
}

/// One flag per scene config key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct SceneFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sequences: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_objects: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_frames: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub height: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_box_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_box_width: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aspect: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_speed: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_speed: Option<f64>,
    /// random, crossing or twins.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub twin_offset: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_separation: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_gaps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gap_length: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub miss_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fp_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub center_noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub size_noise: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embedding_noise: Option<f64>,
}

pub fn sequence_name(index: usize) -> String {
    format!("seq{:02}", index + 1)
}

/// Writes `gt.txt`, `det.txt` and, when embeddings are enabled,
/// `embeddings.txt` for every sequence, plus `manifest.json`.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let cfg: SceneConfig = resolve(merged_table(args.config.as_deref(), &args.flags)?)?;
    cfg.validate()?;
    let scenes = generate_scenes(&cfg)?;
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for (i, scene) in scenes.iter().enumerate() {
        let dir = args.out.join(sequence_name(i));
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        write_file(&dir.join(GT_FILE), |w| write_mot(w, &scene.ground_truth))?;
        write_file(&dir.join(DET_FILE), |w| write_mot(w, &scene.detections))?;
        if !scene.embeddings.is_empty() {
            write_file(&dir.join(EMBEDDINGS_FILE), |w| scene.embeddings.write(w))?;
        }
    }
    let mut manifest = RunManifest::new("synth", Some(cfg.seed), &cfg).output("dir", &args.out);
    if let Some(config) = &args.config {
        manifest = manifest.input("config", config);
    }
    manifest.write(&manifest_path(&args.out))
}
