//! Appearance head over externally supplied crop embeddings.
//!
//! Raw embeddings come from an [`EmbeddingProvider`]; only the linear
//! projection of [`AppearanceHead`] is trainable. Projected embeddings are
//! L2-normalized, so similarities are cosines.
//!
//! The sidecar text format holds one crop per line:
//!
//! ```text
//! # crop-id dim v1 v2 ... v_dim
//! 1:0 4 0.12 -0.5 0.33 0.9
//! ```

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Default softmax temperature used when cosine similarities are turned into
/// row distributions for the divergence loss.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;

pub trait EmbeddingProvider {
    fn raw_embedding(&self, crop_id: &str) -> Result<&DVector<f64>>;
    fn dim(&self) -> usize;
}

/// In-memory table of embeddings keyed by crop id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    entries: BTreeMap<String, DVector<f64>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, crop_id: impl Into<String>, v: DVector<f64>) -> Result<()> {
        let id = crop_id.into();
        if self.entries.is_empty() && self.dim == 0 {
            self.dim = v.len();
        }
        if v.len() != self.dim {
            return Err(Error::shape("embedding dimension", self.dim, v.len()));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("embedding `{id}`")));
        }
        self.entries.insert(id, v);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn read<R: BufRead>(reader: R) -> Result<Self> {
        let mut table = EmbeddingTable::new(0);
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut fields = trimmed.split_whitespace();
            let id = fields.next().expect("non-empty line");
            let dim: usize = fields
                .next()
                .ok_or_else(|| parse_err(lineno, "missing dimension"))?
                .parse()
                .map_err(|_| parse_err(lineno, "dimension is not an integer"))?;
            let values: Vec<f64> = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| parse_err(lineno, "embedding value is not a number"))?;
            if values.len() != dim {
                return Err(parse_err(
                    lineno,
                    format!("declared dimension {dim} but found {} values", values.len()),
                ));
            }
            table
                .insert(id, DVector::from_vec(values))
                .map_err(|e| parse_err(lineno, e.to_string()))?;
        }
        Ok(table)
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# crop-id dim values")?;
        for (id, v) in &self.entries {
            write!(out, "{id} {}", v.len())?;
            for x in v.iter() {
                write!(out, " {x}")?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

impl EmbeddingProvider for EmbeddingTable {
    fn raw_embedding(&self, crop_id: &str) -> Result<&DVector<f64>> {
        self.entries
            .get(crop_id)
            .ok_or_else(|| Error::MissingEmbedding(crop_id.to_string()))
    }

    fn dim(&self) -> usize {
        self.dim
    }
}

/// Linear projection to the unit sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct AppearanceHead {
    /// `out_dim × in_dim`
    pub weights: DMatrix<f64>,
    /// Softmax temperature for row distributions of cosine similarities.
    pub temperature: f64,
}

impl AppearanceHead {
    pub fn identity(dim: usize) -> Self {
        Self {
            weights: DMatrix::identity(dim, dim),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let a = 1.0 / (in_dim as f64).sqrt();
        Self {
            weights: DMatrix::from_fn(out_dim, in_dim, |_, _| rng.random_range(-a..=a)),
            temperature: DEFAULT_TEMPERATURE,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// Projects and normalizes a raw embedding.
    pub fn project(&self, raw: &DVector<f64>, crop_id: &str) -> Result<DVector<f64>> {
        if raw.len() != self.in_dim() {
            return Err(Error::shape(
                "appearance head input",
                self.in_dim(),
                raw.len(),
            ));
        }
        let v = &self.weights * raw;
        let norm = v.norm();
        if norm.is_nan() || norm <= 0.0 || !norm.is_finite() {
            return Err(Error::ZeroNorm(crop_id.to_string()));
        }
        Ok(v / norm)
    }

    pub fn embed(&self, provider: &dyn EmbeddingProvider, crop_id: &str) -> Result<DVector<f64>> {
        self.project(provider.raw_embedding(crop_id)?, crop_id)
    }
}

/// Cosine of the two projected embeddings.
pub fn appearance_similarity(
    head: &AppearanceHead,
    provider: &dyn EmbeddingProvider,
    a: &str,
    b: &str,
) -> Result<f64> {
    let u = head.embed(provider, a)?;
    let v = head.embed(provider, b)?;
    Ok(u.dot(&v).clamp(-1.0, 1.0))
}

/// Row-wise softmax of `cos(φ(z_T^i), φ(z_1^j)) / temperature`.
pub fn appearance_matrix(
    head: &AppearanceHead,
    provider: &dyn EmbeddingProvider,
    last_frame: &[String],
    first_frame: &[String],
) -> Result<DMatrix<f64>> {
    if last_frame.is_empty() || first_frame.is_empty() {
        return Err(Error::Empty("appearance_matrix needs crops in both frames"));
    }
    let rows = last_frame
        .iter()
        .map(|id| head.embed(provider, id))
        .collect::<Result<Vec<_>>>()?;
    let cols = first_frame
        .iter()
        .map(|id| head.embed(provider, id))
        .collect::<Result<Vec<_>>>()?;
    let mut logits = DMatrix::from_fn(rows.len(), cols.len(), |i, j| {
        rows[i].dot(&cols[j]) / head.temperature
    });
    crate::sinkhorn::log_normalize_rows(&mut logits);
    Ok(logits.map(f64::exp))
}
