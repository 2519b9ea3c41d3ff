//! Tracklet aggregation and tracklet-level re-ranking.
//!
//! Gallery frames are grouped into tracklets, each tracklet is reduced to one
//! feature (plain mean or query-similarity weighted mean), every query is
//! treated as a one-frame tracklet, and k-reciprocal re-ranking runs at the
//! tracklet level. The tracklet ranking is then expanded back to images.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distance::{argsort_row, cmp_by_value_then_index, distance_matrix, DistanceMatrix, Metric};
use crate::embedding::{normalize_in_place, EmbeddingSet, ImageMeta, Split};
use crate::error::{Error, Result};
use crate::eval::{RankedResult, DEFAULT_TOP_K};
use crate::rerank::{rerank, RerankParams};

/// Default query-to-frame distance below which a query row counts as a
/// plausible match when weighting frames.
pub const DEFAULT_ROW_THRESHOLD: f64 = 0.2;
/// Offset in the frame weight `1 / (mean distance + offset)`.
pub const WEIGHT_OFFSET: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tracklet {
    pub id: String,
    /// Gallery row indices, in gallery order.
    pub frames: Vec<usize>,
}

/// Partition of the gallery rows into tracklets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackletIndex {
    tracklets: Vec<Tracklet>,
    gallery_len: usize,
}

impl TrackletIndex {
    /// Validates that every gallery row appears in exactly one non-empty
    /// tracklet.
    pub fn new(tracklets: Vec<Tracklet>, gallery_len: usize) -> Result<Self> {
        let mut owner = vec![None; gallery_len];
        for (t, tr) in tracklets.iter().enumerate() {
            if tr.frames.is_empty() {
                return Err(Error::Index(format!("tracklet `{}` is empty", tr.id)));
            }
            for &f in &tr.frames {
                if f >= gallery_len {
                    return Err(Error::Index(format!(
                        "tracklet `{}` lists frame {f} outside gallery of {gallery_len}",
                        tr.id
                    )));
                }
                if let Some(prev) = owner[f].replace(t) {
                    return Err(Error::Index(format!(
                        "frame {f} belongs to both `{}` and `{}`",
                        tracklets[prev].id, tr.id
                    )));
                }
            }
        }
        if let Some(f) = owner.iter().position(Option::is_none) {
            return Err(Error::Coverage(format!("gallery frame {f} is in no tracklet")));
        }
        Ok(TrackletIndex {
            tracklets,
            gallery_len,
        })
    }

    /// Groups gallery rows by their `tracklet_id`, tracklets ordered by first
    /// appearance.
    pub fn from_gallery(gallery: &EmbeddingSet) -> Result<Self> {
        let mut order: Vec<Tracklet> = Vec::new();
        let mut slot: HashMap<&str, usize> = HashMap::new();
        for (i, m) in gallery.meta().iter().enumerate() {
            let tid = m.tracklet_id.as_deref().ok_or_else(|| {
                Error::Coverage(format!("gallery frame `{}` has no tracklet_id", m.id))
            })?;
            let s = *slot.entry(tid).or_insert_with(|| {
                order.push(Tracklet {
                    id: tid.to_owned(),
                    frames: Vec::new(),
                });
                order.len() - 1
            });
            order[s].frames.push(i);
        }
        Self::new(order, gallery.len())
    }

    /// One tracklet per gallery frame.
    pub fn singletons(gallery: &EmbeddingSet) -> Self {
        TrackletIndex {
            tracklets: gallery
                .meta()
                .iter()
                .enumerate()
                .map(|(i, m)| Tracklet {
                    id: m.id.clone(),
                    frames: vec![i],
                })
                .collect(),
            gallery_len: gallery.len(),
        }
    }

    pub fn tracklets(&self) -> &[Tracklet] {
        &self.tracklets
    }

    pub fn len(&self) -> usize {
        self.tracklets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tracklets.is_empty()
    }

    pub fn gallery_len(&self) -> usize {
        self.gallery_len
    }

    /// Frame count of every tracklet.
    pub fn lengths(&self) -> Vec<usize> {
        self.tracklets.iter().map(|t| t.frames.len()).collect()
    }

    fn check_gallery(&self, gallery: &EmbeddingSet) -> Result<()> {
        if gallery.len() != self.gallery_len {
            return Err(Error::Coverage(format!(
                "index covers {} frames but the gallery has {}",
                self.gallery_len,
                gallery.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[serde(alias = "af")]
    Average,
    #[default]
    #[serde(alias = "wf")]
    Weighted,
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Average => "af",
            Aggregation::Weighted => "wf",
        })
    }
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "af" | "average" => Ok(Aggregation::Average),
            "wf" | "weighted" => Ok(Aggregation::Weighted),
            other => Err(Error::Parameter(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// One unit-norm feature per tracklet; row ids are tracklet ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFeatureSet {
    pub aggregation: Aggregation,
    pub features: EmbeddingSet,
}

fn finish(index: &TrackletIndex, dim: usize, rows: Vec<Result<Vec<f64>>>, aggregation: Aggregation) -> Result<TrackFeatureSet> {
    let mut flat = Vec::with_capacity(index.len() * dim);
    for r in rows {
        flat.extend(r?);
    }
    let meta = index
        .tracklets
        .iter()
        .map(|t| {
            let mut m = ImageMeta::new(t.id.clone(), Split::Gallery);
            m.tracklet_id = Some(t.id.clone());
            m
        })
        .collect();
    Ok(TrackFeatureSet {
        aggregation,
        features: EmbeddingSet::new(dim, flat, meta)?,
    })
}

fn weighted_sum(set: &EmbeddingSet, tr: &Tracklet, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; set.dim()];
    for (j, &f) in tr.frames.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[j]);
        for (a, x) in acc.iter_mut().zip(set.row(f)) {
            *a += w * x;
        }
    }
    normalize_in_place(&mut acc)
        .map_err(|_| Error::Index(format!("tracklet `{}` aggregates to a zero vector", tr.id)))?;
    Ok(acc)
}

/// Mean of each tracklet's frames, re-normalized to unit length. Frames are
/// expected to be unit-norm already.
pub fn average_feature(set: &EmbeddingSet, index: &TrackletIndex) -> Result<TrackFeatureSet> {
    index.check_gallery(set)?;
    let rows = index
        .tracklets
        .par_iter()
        .map(|tr| {
            // the 1/s factor disappears in the normalization
            weighted_sum(set, tr, None)
        })
        .collect();
    finish(index, set.dim(), rows, Aggregation::Average)
}

/// Per-frame weights of one tracklet from the query-to-frame distances.
///
/// Query rows whose closest frame is nearer than `row_threshold` are kept
/// (all rows when none qualify). Each frame's weight is
/// `1 / (mean kept distance + 0.01)`.
pub fn frame_weights(tr: &Tracklet, dist_q_frames: &DistanceMatrix, row_threshold: f64) -> Vec<f64> {
    let kept: Vec<usize> = (0..dist_q_frames.rows())
        .filter(|&q| {
            let row = dist_q_frames.row(q);
            tr.frames.iter().map(|&f| row[f]).fold(f64::INFINITY, f64::min) < row_threshold
        })
        .collect();
    let rows: Vec<usize> = if kept.is_empty() {
        (0..dist_q_frames.rows()).collect()
    } else {
        kept
    };
    tr.frames
        .iter()
        .map(|&f| {
            let mean = rows.iter().map(|&q| dist_q_frames.get(q, f)).sum::<f64>() / rows.len() as f64;
            1.0 / (mean + WEIGHT_OFFSET)
        })
        .collect()
}

/// Query-similarity weighted tracklet features. `dist_q_frames` is the
/// query x gallery distance matrix.
pub fn weighted_feature(
    set: &EmbeddingSet,
    index: &TrackletIndex,
    dist_q_frames: &DistanceMatrix,
    row_threshold: f64,
) -> Result<TrackFeatureSet> {
    index.check_gallery(set)?;
    if dist_q_frames.cols() != set.len() {
        return Err(Error::Shape(format!(
            "query-frame matrix has {} columns for {} gallery frames",
            dist_q_frames.cols(),
            set.len()
        )));
    }
    if dist_q_frames.rows() == 0 {
        return Err(Error::Input("weighting frames needs at least one query".into()));
    }
    let rows = index
        .tracklets
        .par_iter()
        .map(|tr| {
            let w = frame_weights(tr, dist_q_frames, row_threshold);
            weighted_sum(set, tr, Some(&w))
        })
        .collect();
    finish(index, set.dim(), rows, Aggregation::Weighted)
}

/// Image-to-track distances.
pub fn track_distance(query: &EmbeddingSet, tracks: &TrackFeatureSet, metric: Metric) -> Result<DistanceMatrix> {
    distance_matrix(query, &tracks.features, metric)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrrConfig {
    pub aggregation: Aggregation,
    pub row_threshold: f64,
    /// `None` ranks tracklets by plain image-to-track distance.
    pub rerank: Option<RerankParams>,
    pub metric: Metric,
    pub top_k: usize,
}

impl Default for TrrConfig {
    fn default() -> Self {
        TrrConfig {
            aggregation: Aggregation::Weighted,
            row_threshold: DEFAULT_ROW_THRESHOLD,
            rerank: Some(RerankParams::default()),
            metric: Metric::Euclidean,
            top_k: DEFAULT_TOP_K,
        }
    }
}

/// Tracklet-level re-ranking, expanded back to an image ranking.
pub fn trr_pipeline(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    index: &TrackletIndex,
    config: &TrrConfig,
) -> Result<RankedResult> {
    index.check_gallery(gallery)?;
    let dist_q_frames = distance_matrix(query, gallery, config.metric)?;
    trr_from_distances(query, gallery, index, &dist_q_frames, config)
}

/// [`trr_pipeline`] with a precomputed query x gallery matrix.
pub fn trr_from_distances(
    query: &EmbeddingSet,
    gallery: &EmbeddingSet,
    index: &TrackletIndex,
    dist_q_frames: &DistanceMatrix,
    config: &TrrConfig,
) -> Result<RankedResult> {
    index.check_gallery(gallery)?;
    if dist_q_frames.rows() != query.len() || dist_q_frames.cols() != gallery.len() {
        return Err(Error::Shape(format!(
            "query-frame matrix is {}x{}, expected {}x{}",
            dist_q_frames.rows(),
            dist_q_frames.cols(),
            query.len(),
            gallery.len()
        )));
    }
    let tracks = match config.aggregation {
        Aggregation::Average => average_feature(gallery, index)?,
        Aggregation::Weighted => weighted_feature(gallery, index, dist_q_frames, config.row_threshold)?,
    };
    let dist_qt = track_distance(query, &tracks, config.metric)?;
    let final_qt = match &config.rerank {
        Some(rr) => {
            let dist_qq = distance_matrix(query, query, config.metric)?;
            let dist_tt = distance_matrix(&tracks.features, &tracks.features, config.metric)?;
            rerank(&dist_qt, &dist_qq, &dist_tt, rr)?
        }
        None => dist_qt,
    };
    let lists = (0..query.len())
        .into_par_iter()
        .map(|q| tile(index, argsort_row(final_qt.row(q)), dist_q_frames.row(q), config.top_k))
        .collect();
    RankedResult::new(query.ids(), gallery.ids(), lists)
}

/// Lays out the frames of each tracklet in tracklet rank order, frames within
/// a tracklet by their distance to the query, and cuts the list at `top_k`.
pub fn tile(index: &TrackletIndex, track_order: Vec<usize>, query_row: &[f64], top_k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(top_k.min(index.gallery_len));
    for t in track_order {
        if out.len() >= top_k {
            break;
        }
        let mut frames = index.tracklets[t].frames.clone();
        frames.sort_unstable_by(|&a, &b| cmp_by_value_then_index(query_row, a, b));
        let room = top_k - out.len();
        out.extend(frames.into_iter().take(room));
    }
    out
}
