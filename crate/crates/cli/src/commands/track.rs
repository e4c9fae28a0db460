use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use kalman_assoc::assoc_net::{AppearanceHead, EmbeddingProvider};
use kalman_assoc::io::{write_mot, MotRow};
use kalman_assoc::tracker::{detection_frames, track_sequence, TrackerConfig};
use kalman_assoc::trainer::Checkpoint;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{manifest_path, RunManifest};
use crate::overlay::{merged_table, resolve};
use crate::sequences::{
    discover, read_embeddings, read_mot, write_file, DET_FILE, EMBEDDINGS_FILE,
};

#[derive(Debug, Clone, Default, Args)]
pub struct TrackArgs {
    /// Detection file, or a directory of sequence directories holding `det.txt`.
    #[arg(long)]
    pub det: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Result file, or a directory receiving `<sequence>.txt` per sequence.
    #[arg(long)]
    pub out: PathBuf,
    /// Tracker config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Embedding sidecar for a single detection file; defaults to
    /// `embeddings.txt` next to it.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrackFlags,
}

/// One flag per tracker config key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrackFlags {
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s_min: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_miss: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_pos: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_vel: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub new_track_conf: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_appearance: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ema_momentum: Option<f64>,
}

struct Job {
    det: PathBuf,
    embeddings: PathBuf,
    out: PathBuf,
}

fn jobs(args: &TrackArgs) -> Result<Vec<Job>> {
    if args.det.is_dir() {
        if args.embeddings.is_some() {
            bail!("--embeddings applies to a single detection file; directories use each sequence's {EMBEDDINGS_FILE}");
        }
        std::fs::create_dir_all(&args.out)
            .with_context(|| format!("creating {}", args.out.display()))?;
        Ok(discover(&args.det, DET_FILE)?
            .into_iter()
            .map(|s| Job {
                det: s.det(),
                embeddings: s.embeddings(),
                out: args.out.join(format!("{}.txt", s.name)),
            })
            .collect())
    } else {
        let sibling = args
            .det
            .parent()
            .unwrap_or(Path::new("."))
            .join(EMBEDDINGS_FILE);
        if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)
                .with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(vec![Job {
            det: args.det.clone(),
            embeddings: args.embeddings.clone().unwrap_or(sibling),
            out: args.out.clone(),
        }])
    }
}

fn run_job(job: &Job, ckpt: &Checkpoint, cfg: &TrackerConfig) -> Result<Vec<MotRow>> {
    let detections = read_mot(&job.det)?;
    let rows = if cfg.use_appearance {
        let table = read_embeddings(&job.embeddings)?;
        let head = match &ckpt.appearance {
            Some(head) => head.clone(),
            None => AppearanceHead::identity(table.dim()),
        };
        if head.in_dim() != table.dim() {
            bail!(
                "checkpoint appearance head expects {}-dimensional embeddings but {} has {}",
                head.in_dim(),
                job.embeddings.display(),
                table.dim()
            );
        }
        let provider: &dyn EmbeddingProvider = &table;
        let frames = detection_frames(&detections, Some((&head, provider)))
            .with_context(|| format!("embedding detections of {}", job.det.display()))?;
        track_sequence(&frames, &ckpt.scorer, cfg)?
    } else {
        track_sequence(&detection_frames(&detections, None)?, &ckpt.scorer, cfg)?
    };
    write_file(&job.out, |w| write_mot(w, &rows))?;
    Ok(rows)
}

/// Tracks every sequence with the checkpoint's scorer and writes MOT result
/// rows plus a manifest. `c_miss` comes from the flag, then the config
/// file, then the checkpoint's calibrated value.
pub fn cmd_track(args: &TrackArgs, pool: &rayon::ThreadPool) -> Result<Vec<Vec<MotRow>>> {
    let file = std::fs::File::open(&args.checkpoint)
        .with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let ckpt = Checkpoint::read(std::io::BufReader::new(file))
        .with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    let mut table = merged_table(args.config.as_deref(), &args.flags)?;
    if let (false, Some(c)) = (table.contains_key("c_miss"), ckpt.c_miss) {
        table.insert("c_miss".into(), toml::Value::Float(c));
    }
    let cfg: TrackerConfig = resolve(table)?;
    cfg.validate()?;
    let jobs = jobs(args)?;
    let results = pool.install(|| {
        jobs.par_iter()
            .map(|job| run_job(job, &ckpt, &cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    let mut manifest = RunManifest::new("track", Some(ckpt.seed), &cfg)
        .input("det", &args.det)
        .input("checkpoint", &args.checkpoint)
        .output("results", &args.out);
    if let Some(config) = &args.config {
        manifest = manifest.input("config", config);
    }
    if let (true, Some(e)) = (cfg.use_appearance, &args.embeddings) {
        manifest = manifest.input("embeddings", e);
    }
    manifest.write(&manifest_path(&args.out))?;
    Ok(results)
}
