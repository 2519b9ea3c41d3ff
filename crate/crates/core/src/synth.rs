//! Seeded synthetic embedding scenarios with ground-truth identities.
//!
//! Identity centers are drawn uniformly on the unit sphere, rejecting any
//! center closer than `min_center_distance` to an earlier one. Every image is
//! its center plus isotropic Gaussian noise, renormalized. Gallery images of
//! an identity are cut into tracklets, and a seeded fraction of gallery frames
//! is replaced by heavily corrupted versions.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::{normalize_in_place, EmbeddingSet, ImageMeta, Split};
use crate::error::{Error, Result};

// independent random streams so that, for example, changing the corruption
// fraction leaves the clean frames untouched
const STREAM_CENTERS: u64 = 0;
const STREAM_LAYOUT: u64 = 1;
const STREAM_FRAMES: u64 = 2;
const STREAM_CORRUPT: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthScenario {
    pub n_ids: usize,
    /// Total query images, spread as evenly as possible over identities.
    pub queries: usize,
    /// Total gallery images, spread as evenly as possible over identities.
    pub gallery: usize,
    pub dim: usize,
    /// Noise scale; roughly the angular spread around the center in radians.
    pub sigma: f64,
    pub min_center_distance: f64,
    pub corrupt_fraction: f64,
    pub corrupt_sigma: f64,
    /// Inclusive range of tracklet lengths.
    pub tracklet_len: (usize, usize),
    pub n_cameras: usize,
    pub seed: u64,
    /// Rejection attempts per center before giving up.
    pub max_retries: usize,
}

impl Default for SynthScenario {
    fn default() -> Self {
        SynthScenario {
            n_ids: 20,
            queries: 60,
            gallery: 400,
            dim: 64,
            sigma: 0.1,
            min_center_distance: 0.0,
            corrupt_fraction: 0.0,
            corrupt_sigma: 3.0,
            tracklet_len: (4, 12),
            n_cameras: 6,
            seed: 0,
            max_retries: 10_000,
        }
    }
}

/// Threshold pair for Identity Mining derived from a scenario's geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub d_n: f64,
    pub d_p: f64,
    /// Upper estimate of same-identity image distances.
    pub intra: f64,
    /// Lower estimate of distances between images of the two closest centers.
    pub inter: f64,
}

impl SynthScenario {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.n_ids == 0 {
            return bad("n_ids must be positive".into());
        }
        if self.dim < 2 {
            return bad(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.queries < self.n_ids || self.gallery < self.n_ids {
            return bad(format!(
                "need at least one query and one gallery image per identity ({} ids, {} queries, {} gallery)",
                self.n_ids, self.queries, self.gallery
            ));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad(format!("sigma must be finite and >= 0, got {}", self.sigma));
        }
        if !(self.corrupt_sigma >= 0.0 && self.corrupt_sigma.is_finite()) {
            return bad(format!("corrupt_sigma must be finite and >= 0, got {}", self.corrupt_sigma));
        }
        if !(0.0..=2.0).contains(&self.min_center_distance) {
            return bad(format!(
                "min_center_distance must lie in [0, 2], got {}",
                self.min_center_distance
            ));
        }
        if !(0.0..=1.0).contains(&self.corrupt_fraction) {
            return bad(format!("corrupt_fraction must lie in [0, 1], got {}", self.corrupt_fraction));
        }
        let (lo, hi) = self.tracklet_len;
        if lo == 0 || lo > hi {
            return bad(format!("tracklet_len must satisfy 1 <= min <= max, got ({lo}, {hi})"));
        }
        if self.n_cameras == 0 {
            return bad("n_cameras must be positive".into());
        }
        Ok(())
    }

    /// Identity Mining thresholds derived from the scenario geometry.
    ///
    /// Two images of one identity sit at about `sqrt(2 s^2 / (1 + s^2))`,
    /// images of two centers `delta` apart at about
    /// `sqrt(2 - (2 - delta^2) / (1 + s^2))`, both with a relative spread of
    /// roughly `1 / sqrt(2 D)`. When the two ranges are separated, `d_p`
    /// covers the upper tail of the first and `d_n` sits halfway between
    /// them. Otherwise `d_p` is three quarters of the mean same-identity
    /// distance and `d_n` twice that mean, so that only confident samples get
    /// labeled.
    pub fn suggested_thresholds(&self) -> Thresholds {
        let s2 = self.sigma * self.sigma;
        let rel = 1.0 / (2.0 * self.dim as f64).sqrt();
        let intra_mean = (2.0 * s2 / (1.0 + s2)).sqrt();
        let intra = intra_mean * (1.0 + 3.0 * rel);
        let delta = self.min_center_distance.max(self.typical_nearest_center());
        let inter_mean = (2.0 - (2.0 - delta * delta) / (1.0 + s2)).max(0.0).sqrt();
        let inter = inter_mean * (1.0 - 3.0 * rel).max(0.0);
        let (d_n, d_p) = if intra < inter {
            (0.5 * (intra + inter), intra)
        } else {
            (2.0 * intra_mean, 0.75 * intra_mean)
        };
        // sigma = 0 puts every image on its center
        let d_p = d_p.max(1e-9);
        let d_n = d_n.max(2.0 * d_p);
        Thresholds { d_n, d_p, intra, inter }
    }

    // Rough nearest-neighbor distance between uniform points on the sphere,
    // from the cap-area estimate n * (theta/2)^(D-1) ~ 1, capped at the
    // typical distance sqrt(2) of high-dimensional random points.
    fn typical_nearest_center(&self) -> f64 {
        if self.n_ids < 2 {
            return 2.0;
        }
        let theta = 2.0 * (1.0 / self.n_ids as f64).powf(1.0 / (self.dim as f64 - 1.0));
        let chord = 2.0 * (theta.min(std::f64::consts::PI) / 2.0).sin();
        chord.min(std::f64::consts::SQRT_2)
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian(rng, dim);
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

fn perturb(rng: &mut ChaCha8Rng, center: &[f64], sigma: f64) -> Vec<f64> {
    let scale = sigma / (center.len() as f64).sqrt();
    loop {
        let mut v: Vec<f64> = center
            .iter()
            .map(|c| c + scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if normalize_in_place(&mut v).is_ok() {
            return v;
        }
    }
}

fn sample_centers(s: &SynthScenario) -> Result<Vec<Vec<f64>>> {
    let mut rng = stream(s.seed, STREAM_CENTERS);
    let min_sq = s.min_center_distance * s.min_center_distance;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(s.n_ids);
    while centers.len() < s.n_ids {
        let mut accepted = None;
        for _ in 0..=s.max_retries {
            let c = unit_vector(&mut rng, s.dim);
            let ok = centers
                .iter()
                .all(|o| crate::distance::squared_euclidean(o, &c) >= min_sq);
            if ok {
                accepted = Some(c);
                break;
            }
        }
        match accepted {
            Some(c) => centers.push(c),
            None => {
                return Err(Error::Generation(format!(
                    "could not place center {} of {} at distance >= {} in {} dimensions after {} attempts",
                    centers.len() + 1,
                    s.n_ids,
                    s.min_center_distance,
                    s.dim,
                    s.max_retries + 1
                )))
            }
        }
    }
    Ok(centers)
}

/// Splits `total` over `n` bins as evenly as possible; the bins that receive
/// the remainder are chosen at random.
fn spread(total: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut counts = vec![total / n; n];
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for &i in order.iter().take(total % n) {
        counts[i] += 1;
    }
    counts
}

fn cut_tracklets(count: usize, (lo, hi): (usize, usize), rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut lens = Vec::new();
    let mut left = count;
    while left > 0 {
        let l = rng.random_range(lo..=hi).min(left);
        lens.push(l);
        left -= l;
    }
    lens
}

struct Image {
    vehicle: usize,
    camera: usize,
    tracklet: Option<usize>,
    feature: Vec<f64>,
}

/// Builds the scenario. The result holds the query images (split `query`)
/// followed by the gallery images (split `gallery`), each part in shuffled
/// order, with `vehicle_id`, `camera_id` and, for the gallery, `tracklet_id`.
pub fn generate(s: &SynthScenario) -> Result<EmbeddingSet> {
    s.validate()?;
    let centers = sample_centers(s)?;

    let mut layout = stream(s.seed, STREAM_LAYOUT);
    let q_counts = spread(s.queries, s.n_ids, &mut layout);
    let g_counts = spread(s.gallery, s.n_ids, &mut layout);

    let mut frames = stream(s.seed, STREAM_FRAMES);
    let mut queries = Vec::with_capacity(s.queries);
    let mut gallery = Vec::with_capacity(s.gallery);
    let mut n_tracklets = 0;
    for (v, center) in centers.iter().enumerate() {
        for _ in 0..q_counts[v] {
            queries.push(Image {
                vehicle: v,
                camera: layout.random_range(0..s.n_cameras),
                tracklet: None,
                feature: perturb(&mut frames, center, s.sigma),
            });
        }
        for len in cut_tracklets(g_counts[v], s.tracklet_len, &mut layout) {
            let camera = layout.random_range(0..s.n_cameras);
            for _ in 0..len {
                gallery.push(Image {
                    vehicle: v,
                    camera,
                    tracklet: Some(n_tracklets),
                    feature: perturb(&mut frames, center, s.sigma),
                });
            }
            n_tracklets += 1;
        }
    }

    let n_corrupt = (s.corrupt_fraction * s.gallery as f64).round() as usize;
    if n_corrupt > 0 {
        let mut rng = stream(s.seed, STREAM_CORRUPT);
        let mut order: Vec<usize> = (0..gallery.len()).collect();
        order.shuffle(&mut rng);
        let mut chosen = order[..n_corrupt].to_vec();
        chosen.sort_unstable();
        for i in chosen {
            let img = &mut gallery[i];
            img.feature = perturb(&mut rng, &centers[img.vehicle], s.corrupt_sigma);
        }
    }

    let mut shuffle = stream(s.seed, STREAM_SHUFFLE);
    queries.shuffle(&mut shuffle);
    gallery.shuffle(&mut shuffle);

    let mut features = Vec::with_capacity((s.queries + s.gallery) * s.dim);
    let mut meta = Vec::with_capacity(s.queries + s.gallery);
    for (split, images) in [(Split::Query, &queries), (Split::Gallery, &gallery)] {
        for (i, img) in images.iter().enumerate() {
            let prefix = if split == Split::Query { 'q' } else { 'g' };
            let mut m = ImageMeta::new(format!("{prefix}{i:06}"), split);
            m.vehicle_id = Some(format!("v{:04}", img.vehicle));
            m.camera_id = Some(format!("c{:03}", img.camera));
            m.tracklet_id = img.tracklet.map(|t| format!("t{t:05}"));
            features.extend_from_slice(&img.feature);
            meta.push(m);
        }
    }
    EmbeddingSet::new(s.dim, features, meta)
}

/// Identity centers of a scenario, as generated by [`generate`].
pub fn centers(s: &SynthScenario) -> Result<Vec<Vec<f64>>> {
    s.validate()?;
    sample_centers(s)
}

pub const PRESET_NAMES: [&str; 4] = ["well_separated", "overlapping", "corrupted_tracklets", "cityflow_scale"];

/// The named scenario catalog, all with seed 0.
pub fn scenario_presets() -> Vec<(&'static str, SynthScenario)> {
    vec![
        (
            "well_separated",
            SynthScenario {
                n_ids: 100,
                queries: 300,
                gallery: 2000,
                dim: 64,
                sigma: 0.15,
                min_center_distance: 1.0,
                ..Default::default()
            },
        ),
        (
            "overlapping",
            SynthScenario {
                n_ids: 60,
                queries: 180,
                gallery: 1200,
                dim: 8,
                sigma: 0.25,
                ..Default::default()
            },
        ),
        (
            "corrupted_tracklets",
            SynthScenario {
                n_ids: 100,
                queries: 300,
                gallery: 2000,
                dim: 8,
                sigma: 0.1,
                corrupt_fraction: 0.3,
                corrupt_sigma: 3.0,
                tracklet_len: (5, 15),
                ..Default::default()
            },
        ),
        (
            "cityflow_scale",
            SynthScenario {
                n_ids: 333,
                queries: 1052,
                gallery: 17238,
                dim: 2048,
                sigma: 0.15,
                min_center_distance: 0.5,
                corrupt_fraction: 0.1,
                corrupt_sigma: 3.0,
                tracklet_len: (5, 30),
                n_cameras: 40,
                ..Default::default()
            },
        ),
    ]
}

pub fn preset(name: &str) -> Result<SynthScenario> {
    scenario_presets()
        .into_iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| s)
        .ok_or_else(|| {
            Error::Parameter(format!(
                "unknown preset `{name}`, expected one of {}",
                PRESET_NAMES.join(", ")
            ))
        })
}
