use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use kalman_assoc::assoc_net::{EmbeddingProvider, EmbeddingTable};
use kalman_assoc::io::MotRow;
use kalman_assoc::tracker::{
    calibrate_c_miss, detection_frames, TrackerConfig, ValidationSequence, C_MISS_GRID,
};
use kalman_assoc::trainer::{
    initial_head, preprocess_clips, raw_frames_from_mot, train_appearance, train_association,
    Checkpoint, DetectionClip, TrainConfig,
};
use log::{info, warn};
use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{manifest_path, RunManifest};
use crate::overlay::{merged_table, resolve};
use crate::sequences::{discover, read_embeddings, read_mot, write_file, SequenceFiles, DET_FILE};

#[derive(Debug, Clone, Default, Args)]
pub struct TrainArgs {
    /// Directory holding `det.txt`, or subdirectories that do.
    #[arg(long)]
    pub det_dir: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Training config file (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

/// One flag per training config key.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainFlags {
    #[arg(long, visible_alias = "lr")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub appearance_learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub appearance_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sinkhorn_iters: Option<usize>,
    /// Frames per clip.
    #[arg(long, short = 'T')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clip_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_q: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_r: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_variance: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<usize>,
    /// sgd or adam.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conf_threshold: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    /// Fine-tune an appearance head from each sequence's `embeddings.txt`.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub appearance: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub appearance_dim: Option<usize>,
}

/// What a training run produced.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: Checkpoint,
    pub num_clips: usize,
    pub losses: Vec<f64>,
    pub appearance_losses: Vec<f64>,
}

/// Embeddings of several sequences behind `sequence/crop-id` keys.
struct SequenceEmbeddings {
    tables: BTreeMap<String, EmbeddingTable>,
    dim: usize,
}

impl EmbeddingProvider for SequenceEmbeddings {
    fn raw_embedding(&self, crop_id: &str) -> kalman_assoc::Result<&DVector<f64>> {
        let (sequence, id) = crop_id.split_once('/').unwrap_or(("", crop_id));
        match self.tables.get(sequence) {
            Some(table) => table.raw_embedding(id),
            None => Err(kalman_assoc::Error::MissingEmbedding(crop_id.to_string())),
        }
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

struct PreparedSequence {
    files: SequenceFiles,
    clips: Vec<DetectionClip>,
}

fn prepare(files: SequenceFiles, cfg: &TrainConfig) -> Result<PreparedSequence> {
    let frames = raw_frames_from_mot(&read_mot(&files.det())?, None);
    let out = preprocess_clips(&files.name, &frames, cfg.conf_threshold, cfg.clip_len)?;
    for w in &out.warnings {
        warn!("{w}");
    }
    Ok(PreparedSequence {
        files,
        clips: out.clips,
    })
}

fn load_embeddings(sequences: &[PreparedSequence]) -> Result<SequenceEmbeddings> {
    let mut tables = BTreeMap::new();
    let mut dim = None;
    for seq in sequences {
        let table = read_embeddings(&seq.files.embeddings())?;
        match dim {
            None => dim = Some(table.dim()),
            Some(d) if d != table.dim() => bail!(
                "{} has embedding dimension {} but earlier sequences have {d}",
                seq.files.embeddings().display(),
                table.dim()
            ),
            Some(_) => {}
        }
        tables.insert(seq.files.name.clone(), table);
    }
    Ok(SequenceEmbeddings {
        tables,
        dim: dim.unwrap_or(0),
    })
}

fn validation_sequences(sequences: &[PreparedSequence]) -> Result<Vec<ValidationSequence>> {
    sequences
        .iter()
        .filter(|s| s.files.gt().is_file())
        .map(|s| {
            let frames = detection_frames(&read_mot(&s.files.det())?, None)?;
            let ground_truth: Vec<MotRow> =
                read_mot(&s.files.gt())?.into_values().flatten().collect();
            Ok(ValidationSequence {
                frames,
                ground_truth,
            })
        })
        .collect()
}

fn write_losses(path: &Path, association: &[f64], appearance: &[f64]) -> Result<()> {
    write_file(path, |w| {
        writeln!(w, "phase,step,loss")?;
        for (i, l) in association.iter().enumerate() {
            writeln!(w, "association,{i},{l}")?;
        }
        for (i, l) in appearance.iter().enumerate() {
            writeln!(w, "appearance,{i},{l}")?;
        }
        Ok(())
    })
}

/// Preprocesses every sequence, trains the scorer, optionally fine-tunes an
/// appearance head, calibrates `c_miss` on sequences that have `gt.txt`,
/// and writes the checkpoint, a loss curve CSV and a manifest.
pub fn cmd_train(args: &TrainArgs, pool: &rayon::ThreadPool) -> Result<TrainSummary> {
    let cfg: TrainConfig = resolve(merged_table(args.config.as_deref(), &args.flags)?)?;
    cfg.validate()?;
    let found = discover(&args.det_dir, DET_FILE)?;
    let mut sequences: Vec<PreparedSequence> = pool.install(|| {
        found
            .into_par_iter()
            .map(|files| prepare(files, &cfg))
            .collect::<Result<_>>()
    })?;
    let num_clips: usize = sequences.iter().map(|s| s.clips.len()).sum();
    if num_clips == 0 {
        bail!(
            "no clips of {} frames with detections above confidence {} in {}",
            cfg.clip_len,
            cfg.conf_threshold,
            args.det_dir.display()
        );
    }
    if cfg.appearance {
        for seq in &mut sequences {
            let name = seq.files.name.clone();
            for det in seq
                .clips
                .iter_mut()
                .flat_map(|c| c.detections.iter_mut().flatten())
            {
                det.crop_id = det.crop_id.take().map(|id| format!("{name}/{id}"));
            }
        }
    }
    let clips: Vec<DetectionClip> = sequences.iter().flat_map(|s| s.clips.clone()).collect();
    info!("training on {} clips", clips.len());
    let outcome = train_association(&clips, &cfg)?;

    let (appearance, appearance_losses) = if cfg.appearance {
        let provider = load_embeddings(&sequences)?;
        let head = initial_head(provider.dim(), &cfg);
        let tuned = train_appearance(&clips, &outcome.params, &head, &provider, &cfg)?;
        (Some(tuned.head), tuned.losses)
    } else {
        (None, Vec::new())
    };

    let validation = validation_sequences(&sequences)?;
    let c_miss = if validation.is_empty() {
        None
    } else {
        let (best, reports) = calibrate_c_miss(
            &validation,
            &outcome.params,
            &TrackerConfig::default(),
            &C_MISS_GRID,
        )?;
        for (c, r) in &reports {
            info!(
                "c_miss {c}: MOTA {:.4} IDF1 {:.4} IDSW {}",
                r.mota, r.idf1, r.idsw
            );
        }
        Some(best)
    };

    let checkpoint = Checkpoint {
        scorer: outcome.params,
        appearance,
        config: cfg.clone(),
        seed: cfg.seed,
        c_miss,
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    write_file(&args.out, |w| checkpoint.write(w))?;
    let losses_path = args.out.with_extension("losses.csv");
    write_losses(&losses_path, &outcome.losses, &appearance_losses)?;
    let mut manifest = RunManifest::new("train", Some(cfg.seed), &cfg)
        .input("det_dir", &args.det_dir)
        .output("checkpoint", &args.out)
        .output("losses", &losses_path);
    if let Some(config) = &args.config {
        manifest = manifest.input("config", config);
    }
    manifest.write(&manifest_path(&args.out))?;
    Ok(TrainSummary {
        checkpoint,
        num_clips,
        losses: outcome.losses,
        appearance_losses,
    })
}
