//! JSON checkpoint container.
//!
//! ```json
//! {
//!   "format": "kassoc-checkpoint",
//!   "version": 1,
//!   "seed": 0,
//!   "config": { ...every TrainConfig field... },
//!   "scorer": { "hidden": H, "w1": [[5 numbers] × H], "b1": [H], "w2": [H], "b2": 0.0 },
//!   "appearance": null | { "weights": [[in_dim numbers] × out_dim], "temperature": 0.1 },
//!   "c_miss": null | number
//! }
//! ```
//!
//! Matrices are stored as arrays of rows.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use crate::assoc_net::{AppearanceHead, ScorerParams, FEATURE_DIM};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "kassoc-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScorerRecord {
    hidden: usize,
    w1: Vec<Vec<f64>>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    b2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AppearanceRecord {
    weights: Vec<Vec<f64>>,
    temperature: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointRecord {
    format: String,
    version: u32,
    seed: u64,
    config: TrainConfig,
    scorer: ScorerRecord,
    appearance: Option<AppearanceRecord>,
    #[serde(default)]
    c_miss: Option<f64>,
}

/// Everything needed to rerun or apply a training result.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub scorer: ScorerParams,
    pub appearance: Option<AppearanceHead>,
    pub config: TrainConfig,
    pub seed: u64,
    /// Unmatched cost calibrated on validation data, if any.
    pub c_miss: Option<f64>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, field: &str) -> Result<DMatrix<f64>> {
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::config(
            field,
            format!("row of length {} where {ncols} was expected", bad.len()),
        ));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

impl Checkpoint {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        let record = CheckpointRecord {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            seed: self.seed,
            config: self.config.clone(),
            scorer: ScorerRecord {
                hidden: self.scorer.hidden(),
                w1: rows(&self.scorer.w1),
                b1: self.scorer.b1.iter().copied().collect(),
                w2: self.scorer.w2.iter().copied().collect(),
                b2: self.scorer.b2,
            },
            appearance: self.appearance.as_ref().map(|h| AppearanceRecord {
                weights: rows(&h.weights),
                temperature: h.temperature,
            }),
            c_miss: self.c_miss,
        };
        serde_json::to_writer_pretty(&mut out, &record)?;
        writeln!(out)?;
        Ok(())
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let record: CheckpointRecord = serde_json::from_reader(reader)?;
        if record.format != CHECKPOINT_FORMAT {
            return Err(Error::config(
                "format",
                format!("unknown format {:?}", record.format),
            ));
        }
        if record.version != CHECKPOINT_VERSION {
            return Err(Error::config(
                "version",
                format!("unsupported version {}", record.version),
            ));
        }
        let s = &record.scorer;
        if s.w1.len() != s.hidden || s.b1.len() != s.hidden || s.w2.len() != s.hidden {
            return Err(Error::config(
                "scorer",
                format!("layer sizes disagree with hidden = {}", s.hidden),
            ));
        }
        let scorer = ScorerParams {
            w1: from_rows(&s.w1, FEATURE_DIM, "scorer.w1")?,
            b1: DVector::from_vec(s.b1.clone()),
            w2: DVector::from_vec(s.w2.clone()),
            b2: s.b2,
        };
        if !scorer.is_finite() {
            return Err(Error::NonFinite("checkpoint scorer".to_string()));
        }
        let appearance = match &record.appearance {
            None => None,
            Some(a) => {
                let ncols = a.weights.first().map_or(0, Vec::len);
                if a.weights.is_empty() || ncols == 0 {
                    return Err(Error::config("appearance.weights", "empty matrix"));
                }
                if a.temperature.is_nan() || a.temperature <= 0.0 {
                    return Err(Error::config("appearance.temperature", "must be positive"));
                }
                Some(AppearanceHead {
                    weights: from_rows(&a.weights, ncols, "appearance.weights")?,
                    temperature: a.temperature,
                })
            }
        };
        if record.c_miss.is_some_and(|c| !c.is_finite()) {
            return Err(Error::config("c_miss", "must be finite"));
        }
        Ok(Self {
            scorer,
            appearance,
            config: record.config,
            seed: record.seed,
            c_miss: record.c_miss,
        })
    }
}
