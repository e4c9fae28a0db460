use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use kalman_assoc::io::{evaluate_sequence, EvalReport, MotFrames, MotRow, SequenceReport};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

use crate::manifest::{manifest_path, RunManifest};
use crate::sequences::{discover, read_mot, write_file, GT_FILE};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Ground-truth file, or a directory of sequence directories holding `gt.txt`.
    #[arg(long)]
    pub gt: PathBuf,
    /// Result file, or a directory holding `<sequence>.txt` per sequence.
    #[arg(long)]
    pub results: PathBuf,
    /// Minimum IoU for a ground-truth box and a result box to match.
    #[arg(long, default_value_t = 0.5)]
    pub iou_threshold: f64,
    /// CSV report; defaults to `<results>.eval.csv`, or `eval.csv` inside a
    /// results directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct EvalConfig {
    iou_threshold: f64,
}

/// Result rows outside the ground-truth frame range are dropped with a
/// warning.
fn restrict(name: &str, gt: &MotFrames, hyp: MotFrames) -> Vec<MotRow> {
    let bounds = gt.keys().next().zip(gt.keys().next_back());
    let (inside, outside): (Vec<_>, Vec<_>) = hyp
        .into_iter()
        .partition(|(frame, _)| bounds.is_some_and(|(a, b)| (a..=b).contains(&frame)));
    if !outside.is_empty() {
        let dropped: usize = outside.iter().map(|(_, rows)| rows.len()).sum();
        warn!(
            "{name}: results cover frames outside the ground truth range; evaluating the overlap and ignoring {dropped} rows"
        );
    }
    inside.into_iter().flat_map(|(_, rows)| rows).collect()
}

fn evaluate_pair(name: &str, gt_path: &Path, hyp_path: &Path, iou: f64) -> Result<SequenceReport> {
    if !hyp_path.is_file() {
        bail!("result file {} does not exist", hyp_path.display());
    }
    let gt = read_mot(gt_path)?;
    let hyp = restrict(name, &gt, read_mot(hyp_path)?);
    let gt: Vec<MotRow> = gt.into_values().flatten().collect();
    Ok(evaluate_sequence(name, &gt, &hyp, iou))
}

fn write_csv(path: &Path, report: &EvalReport) -> Result<()> {
    write_file(path, |w| {
        writeln!(
            w,
            "sequence,mota,idf1,idsw,num_gt,num_hyp,matches,false_positives,misses,idtp"
        )?;
        for s in &report.sequences {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                s.name,
                s.mota,
                s.idf1,
                s.idsw,
                s.num_gt,
                s.num_hyp,
                s.matches,
                s.false_positives,
                s.misses,
                s.idtp
            )?;
        }
        let sum = |f: fn(&SequenceReport) -> usize| report.sequences.iter().map(f).sum::<usize>();
        writeln!(
            w,
            "OVERALL,{},{},{},{},{},{},{},{},{}",
            report.mota,
            report.idf1,
            report.idsw,
            sum(|s| s.num_gt),
            sum(|s| s.num_hyp),
            sum(|s| s.matches),
            sum(|s| s.false_positives),
            sum(|s| s.misses),
            sum(|s| s.idtp)
        )?;
        Ok(())
    })
}

/// Fixed-width MOTA / IDF1 / IDSW table.
pub fn format_table(report: &EvalReport) -> String {
    let width = report
        .sequences
        .iter()
        .map(|s| s.name.len())
        .chain([8])
        .max()
        .unwrap_or(8);
    let mut out = format!(
        "{:<width$}  {:>7}  {:>7}  {:>5}\n",
        "sequence", "MOTA", "IDF1", "IDSW"
    );
    for s in &report.sequences {
        out += &format!(
            "{:<width$}  {:>7.3}  {:>7.3}  {:>5}\n",
            s.name, s.mota, s.idf1, s.idsw
        );
    }
    out += &format!(
        "{:<width$}  {:>7.3}  {:>7.3}  {:>5}\n",
        "OVERALL", report.mota, report.idf1, report.idsw
    );
    out
}

/// Scores result files against ground truth, prints the table to stdout
/// and writes the CSV report and a manifest.
pub fn cmd_eval(args: &EvalArgs, pool: &rayon::ThreadPool) -> Result<EvalReport> {
    if !(0.0..=1.0).contains(&args.iou_threshold) {
        bail!("invalid value for `iou_threshold`: must lie in [0, 1]");
    }
    let pairs: Vec<(String, PathBuf, PathBuf)> = if args.gt.is_dir() {
        discover(&args.gt, GT_FILE)?
            .into_iter()
            .map(|s| {
                let hyp = args.results.join(format!("{}.txt", s.name));
                (s.name.clone(), s.gt(), hyp)
            })
            .collect()
    } else {
        let name = args.gt.parent().and_then(Path::file_name).map_or_else(
            || "sequence".to_string(),
            |n| n.to_string_lossy().into_owned(),
        );
        vec![(name, args.gt.clone(), args.results.clone())]
    };
    let sequences = pool.install(|| {
        pairs
            .par_iter()
            .map(|(name, gt, hyp)| evaluate_pair(name, gt, hyp, args.iou_threshold))
            .collect::<Result<Vec<_>>>()
    })?;
    let report = EvalReport::from_sequences(sequences);
    print!("{}", format_table(&report));
    let csv = args.out.clone().unwrap_or_else(|| {
        if args.results.is_dir() {
            args.results.join("eval.csv")
        } else {
            args.results.with_extension("eval.csv")
        }
    });
    write_csv(&csv, &report)?;
    let config = EvalConfig {
        iou_threshold: args.iou_threshold,
    };
    RunManifest::new("eval", None, &config)
        .input("gt", &args.gt)
        .input("results", &args.results)
        .output("csv", &csv)
        .write(&manifest_path(&csv))?;
    Ok(report)
}
