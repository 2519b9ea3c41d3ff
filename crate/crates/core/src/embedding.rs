//! Embedding storage: feature rows plus per-image metadata.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::emb1::Emb1;
use crate::error::{Error, Result};

/// Tolerance used when checking that rows are unit-norm.
pub const UNIT_NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Query,
    Gallery,
    Train,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Query => "query",
            Split::Gallery => "gallery",
            Split::Train => "train",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "query" => Ok(Split::Query),
            "gallery" => Ok(Split::Gallery),
            "train" => Ok(Split::Train),
            other => Err(Error::Input(format!("unknown split `{other}`"))),
        }
    }
}

/// One line of the JSON-lines metadata file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub id: String,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tracklet_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle_id: Option<String>,
}

impl ImageMeta {
    pub fn new(id: impl Into<String>, split: Split) -> Self {
        ImageMeta {
            id: id.into(),
            split,
            tracklet_id: None,
            camera_id: None,
            vehicle_id: None,
        }
    }
}

/// `N` feature vectors of dimension `D` with one metadata record each.
///
/// Features are held as `f64` regardless of the on-disk precision. The set is
/// immutable once built; transformations return new sets.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    dim: usize,
    features: Vec<f64>,
    meta: Vec<ImageMeta>,
}

impl EmbeddingSet {
    /// Builds a set from a flat row-major feature buffer.
    pub fn new(dim: usize, features: Vec<f64>, meta: Vec<ImageMeta>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Shape("embedding dimension must be at least 1".into()));
        }
        if meta.is_empty() {
            return Err(Error::Input("embedding set must hold at least one row".into()));
        }
        if features.len() != dim * meta.len() {
            return Err(Error::Integrity(format!(
                "{} metadata records at D={dim} need {} values, got {}",
                meta.len(),
                dim * meta.len(),
                features.len()
            )));
        }
        let mut seen = HashSet::with_capacity(meta.len());
        for m in &meta {
            if !seen.insert(m.id.as_str()) {
                return Err(Error::Integrity(format!("duplicate image id `{}`", m.id)));
            }
        }
        Ok(EmbeddingSet {
            dim,
            features,
            meta,
        })
    }

    /// Builds a set from explicit rows.
    pub fn from_rows(rows: Vec<Vec<f64>>, meta: Vec<ImageMeta>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::Shape(format!(
                "row {i} has dimension {}, expected {dim}",
                r.len()
            )));
        }
        if rows.len() != meta.len() {
            return Err(Error::Integrity(format!(
                "{} rows but {} metadata records",
                rows.len(),
                meta.len()
            )));
        }
        Self::new(dim, rows.into_iter().flatten().collect(), meta)
    }

    pub fn len(&self) -> usize {
        self.meta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.meta.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.features.chunks_exact(self.dim)
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn meta(&self) -> &[ImageMeta] {
        &self.meta
    }

    pub fn ids(&self) -> Vec<String> {
        self.meta.iter().map(|m| m.id.clone()).collect()
    }

    /// Indices of the rows tagged with `split`, in file order.
    pub fn indices_of(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.meta[i].split == split)
            .collect()
    }

    /// New set made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut meta = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Shape(format!("row {i} out of range {}", self.len())));
            }
            features.extend_from_slice(self.row(i));
            meta.push(self.meta[i].clone());
        }
        Self::new(self.dim, features, meta)
    }

    /// The rows tagged with `split`.
    pub fn split(&self, split: Split) -> Result<Self> {
        let idx = self.indices_of(split);
        if idx.is_empty() {
            return Err(Error::Input(format!("no rows with split `{split}`")));
        }
        self.select(&idx)
    }

    /// Rows of `self` followed by rows of `other`.
    pub fn concat(&self, other: &EmbeddingSet) -> Result<Self> {
        if self.dim != other.dim {
            return Err(Error::Shape(format!(
                "cannot concatenate D={} with D={}",
                self.dim, other.dim
            )));
        }
        let mut features = self.features.clone();
        features.extend_from_slice(&other.features);
        let mut meta = self.meta.clone();
        meta.extend_from_slice(&other.meta);
        Self::new(self.dim, features, meta)
    }

    /// Scales every row to unit Euclidean norm.
    pub fn l2_normalize(&self) -> Result<Self> {
        let mut features = self.features.clone();
        for (row, chunk) in features.chunks_exact_mut(self.dim).enumerate() {
            normalize_in_place(chunk).map_err(|_| Error::ZeroNorm {
                row,
                id: self.meta[row].id.clone(),
            })?;
        }
        Ok(EmbeddingSet {
            dim: self.dim,
            features,
            meta: self.meta.clone(),
        })
    }

    pub fn is_normalized(&self) -> bool {
        self.rows()
            .all(|r| (norm(r) - 1.0).abs() <= UNIT_NORM_TOL)
    }

    /// Converts features to the on-disk `f32` layout.
    pub fn to_emb1(&self) -> Emb1 {
        Emb1 {
            rows: self.len(),
            cols: self.dim,
            data: self.features.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>, metadata_path: impl AsRef<Path>) -> Result<()> {
        self.to_emb1().write(path)?;
        write_metadata(metadata_path, &self.meta)
    }
}

/// Reads an `EMB1` feature file and its JSON-lines metadata.
///
/// Features are returned exactly as stored; no normalization is applied.
pub fn load_embeddings(path: impl AsRef<Path>, metadata_path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let m = Emb1::read(path)?;
    let meta = read_metadata(metadata_path)?;
    if meta.len() != m.rows {
        return Err(Error::Integrity(format!(
            "embedding file has {} rows but metadata has {} records",
            m.rows,
            meta.len()
        )));
    }
    EmbeddingSet::new(m.cols, m.data.into_iter().map(f64::from).collect(), meta)
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<Vec<ImageMeta>> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (lineno, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ImageMeta = serde_json::from_str(&line).map_err(|e| {
            Error::Input(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_metadata(path: impl AsRef<Path>, meta: &[ImageMeta]) -> Result<()> {
    let path = path.as_ref();
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for m in meta {
        serde_json::to_writer(&mut w, m)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Returns `Err(())` on a zero (or non-finite) norm.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> std::result::Result<(), ()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(());
    }
    v.iter_mut().for_each(|x| *x /= n);
    Ok(())
}
