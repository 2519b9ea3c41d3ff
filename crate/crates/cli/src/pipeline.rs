//! Sequential stage runner with artifacts and a run manifest.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use reidpost::eval::{matching_accuracy, pseudo_label_accuracy, RelevanceOptions};
use reidpost::mining::KMeansResult;
use reidpost::tracklet::{trr_from_distances, TrackletIndex, TrrConfig};
use reidpost::{
    distance_matrix, evaluate, generate, identity_mine, kmeans_baseline, load_embeddings, rerank, DistanceMatrix,
    EmbeddingSet, Error, EvalReport, PseudoLabelSet, RankedResult, Relevance, Result, Split,
};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, RankMethod, Stage};
use crate::submission::{format_ranking, format_submission, SubmissionFormat};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CONFIG_FILE: &str = "config.toml";
pub const EMBEDDINGS_FILE: &str = "embeddings.emb1";
pub const METADATA_FILE: &str = "metadata.jsonl";
pub const DISTANCES_FILE: &str = "distances.emb1";
pub const RANKING_FILE: &str = "ranking.txt";
pub const LABELS_FILE: &str = "labels.jsonl";
pub const KMEANS_FILE: &str = "kmeans.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const SUBMISSION_FILE: &str = "submission.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub seconds: f64,
    pub artifacts: Vec<String>,
}

/// Speed of the query x gallery distance computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Throughput {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub seconds: f64,
    pub pairs_per_second: f64,
    pub gflops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub threads: usize,
    pub stages: Vec<StageRecord>,
    pub distance_throughput: Option<Throughput>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelSummary {
    pub accuracy: f64,
    pub labeled: usize,
    pub total: usize,
    pub clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineReport {
    pub retrieval: Option<EvalReport>,
    pub identity_mining: Option<LabelSummary>,
    pub kmeans: Option<LabelSummary>,
}

#[derive(Default)]
struct State {
    query: Option<EmbeddingSet>,
    gallery: Option<EmbeddingSet>,
    pool: Option<EmbeddingSet>,
    dist_qg: Option<DistanceMatrix>,
    ranking: Option<RankedResult>,
    labels: Option<PseudoLabelSet>,
    kmeans: Option<KMeansResult>,
    throughput: Option<Throughput>,
}

struct Runner<'a> {
    config: &'a PipelineConfig,
    out: &'a Path,
    state: State,
    artifacts: Vec<String>,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

/// Runs the configured stages in order, writing artifacts into `out_dir`.
///
/// `manifest.json` is written in every case. On failure it names the stage
/// that failed and the artifacts written so far are left in place.
pub fn run_pipeline(config: &PipelineConfig) -> Result<Manifest> {
    let out = config.out_dir.as_path();
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let mut manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash()?,
        seed: config.seed,
        threads: rayon::current_num_threads(),
        stages: Vec::new(),
        distance_throughput: None,
        failed_stage: None,
        error: None,
    };

    let fail = |manifest: &mut Manifest, stage: &str, e: Error| -> Error {
        manifest.failed_stage = Some(stage.to_string());
        manifest.error = Some(e.to_string());
        if let Err(w) = write_manifest(out, manifest) {
            warn!("could not write manifest: {w}");
        }
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(e),
        }
    };

    if let Err(e) = config.validate() {
        return Err(fail(&mut manifest, "config", e));
    }
    if !config.stages.is_empty() {
        let path = out.join(CONFIG_FILE);
        let written = config
            .to_toml()
            .and_then(|t| fs::write(&path, t).map_err(|e| io_err(&path, e)));
        if let Err(e) = written {
            return Err(fail(&mut manifest, "config", e));
        }
    }

    let mut runner = Runner {
        config,
        out,
        state: State::default(),
        artifacts: Vec::new(),
    };
    for &stage in &config.stages {
        let start = Instant::now();
        let result = runner.run(stage);
        let seconds = start.elapsed().as_secs_f64();
        manifest.distance_throughput = runner.state.throughput;
        manifest.stages.push(StageRecord {
            name: stage.to_string(),
            seconds,
            artifacts: std::mem::take(&mut runner.artifacts),
        });
        if let Err(e) = result {
            return Err(fail(&mut manifest, stage.as_str(), e));
        }
        info!("stage {stage} finished in {seconds:.3}s");
    }
    write_manifest(out, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(out: &Path, manifest: &Manifest) -> Result<()> {
    let path = out.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(manifest)?;
    fs::write(&path, text + "\n").map_err(|e| io_err(&path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl Runner<'_> {
    fn run(&mut self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Synth => self.synth(),
            Stage::Rank => self.rank(),
            Stage::Mine => self.mine(),
            Stage::Kmeans => self.kmeans(),
            Stage::Eval => self.eval(),
            Stage::Submit => self.submit(),
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.artifacts.push(name.to_string());
        self.out.join(name)
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| io_err(&path, e))
    }

    fn install(&mut self, set: EmbeddingSet) -> Result<()> {
        let query = set.split(Split::Query)?;
        let gallery = set.split(Split::Gallery)?;
        self.state.pool = Some(query.concat(&gallery)?);
        self.state.query = Some(query);
        self.state.gallery = Some(gallery);
        Ok(())
    }

    fn data(&mut self) -> Result<(&EmbeddingSet, &EmbeddingSet)> {
        if self.state.query.is_none() {
            let input = &self.config.input;
            let (Some(e), Some(m)) = (&input.embeddings, &input.metadata) else {
                return Err(Error::Config("no embeddings to work on".into()));
            };
            let mut set = load_embeddings(e, m)?;
            if input.normalize {
                set = set.l2_normalize()?;
            }
            self.install(set)?;
        }
        Ok((self.state.query.as_ref().unwrap(), self.state.gallery.as_ref().unwrap()))
    }

    fn synth(&mut self) -> Result<()> {
        let scenario = self.config.synth.resolve(self.config.seed)?;
        let set = generate(&scenario)?;
        let (e, m) = (self.path(EMBEDDINGS_FILE), self.path(METADATA_FILE));
        set.save(e, m)?;
        self.install(set)
    }

    fn rank(&mut self) -> Result<()> {
        let cfg = self.config;
        let metric = cfg.metric;
        let (q, g) = self.data()?;
        let start = Instant::now();
        let dist = distance_matrix(q, g, metric)?;
        let seconds = start.elapsed().as_secs_f64();
        let pairs = (q.len() * g.len()) as f64;
        let throughput = Throughput {
            rows: q.len(),
            cols: g.len(),
            dim: q.dim(),
            seconds,
            pairs_per_second: pairs / seconds.max(1e-12),
            gflops: 2.0 * pairs * q.dim() as f64 / seconds.max(1e-12) / 1e9,
        };
        info!(
            "distance matrix {}x{} at D={}: {:.3}s, {:.3e} pairs/s",
            q.len(),
            g.len(),
            q.dim(),
            seconds,
            throughput.pairs_per_second
        );

        let top_k = cfg.rank.top_k.min(g.len());
        let ranking = match cfg.rank.method {
            RankMethod::Plain => RankedResult::from_distances(&dist, top_k)?,
            RankMethod::Rr => {
                let dqq = distance_matrix(q, q, metric)?;
                let dgg = distance_matrix(g, g, metric)?;
                RankedResult::from_distances(&rerank(&dist, &dqq, &dgg, &cfg.rerank)?, top_k)?
            }
            m @ (RankMethod::AfTrr | RankMethod::WfTrr) => {
                let index = TrackletIndex::from_gallery(g)?;
                let trr = TrrConfig {
                    aggregation: m.aggregation().expect("tracklet method"),
                    row_threshold: cfg.rank.row_threshold,
                    rerank: Some(cfg.rerank),
                    metric,
                    top_k,
                };
                trr_from_distances(q, g, &index, &dist, &trr)?
            }
        };
        self.state.throughput = Some(throughput);
        let path = self.path(DISTANCES_FILE);
        dist.save(path, None)?;
        self.write(RANKING_FILE, &format_ranking(&ranking, true))?;
        self.state.dist_qg = Some(dist);
        self.state.ranking = Some(ranking);
        Ok(())
    }

    fn mine(&mut self) -> Result<()> {
        let params = self.config.mining_params()?;
        let (q, g) = self.data()?;
        let labels = identity_mine(q, g, &params)?;
        let ids = self.state.pool.as_ref().unwrap().ids();
        let path = self.path(LABELS_FILE);
        labels.write_jsonl(&ids, path)?;
        info!(
            "identity mining: {} centers, {} of {} samples labeled",
            labels.centers().len(),
            labels.assignments().len(),
            ids.len()
        );
        self.state.labels = Some(labels);
        Ok(())
    }

    fn kmeans(&mut self) -> Result<()> {
        self.data()?;
        let pool = self.state.pool.as_ref().unwrap();
        let k = match self.config.kmeans.k {
            Some(k) => k,
            None => {
                let ids: BTreeSet<&str> = pool.meta().iter().filter_map(|m| m.vehicle_id.as_deref()).collect();
                if ids.is_empty() {
                    return Err(Error::Config(
                        "kmeans.k is unset and the metadata carries no vehicle_id".into(),
                    ));
                }
                ids.len()
            }
        };
        let result = kmeans_baseline(pool, k, self.config.seed, self.config.kmeans.max_iter)?;
        let mut text = String::new();
        for (m, c) in pool.meta().iter().zip(&result.assignments) {
            text.push_str(&serde_json::to_string(&serde_json::json!({ "id": m.id, "cluster": c }))?);
            text.push('\n');
        }
        self.write(KMEANS_FILE, &text)?;
        self.state.kmeans = Some(result);
        Ok(())
    }

    fn eval(&mut self) -> Result<()> {
        let cfg = &self.config.eval;
        let mut report = PipelineReport::default();
        if let Some(ranking) = &self.state.ranking {
            let (q, g) = (self.state.query.as_ref().unwrap(), self.state.gallery.as_ref().unwrap());
            let opts = RelevanceOptions {
                exclude_same_camera: cfg.exclude_same_camera,
            };
            let truth = Relevance::from_labels(q, g, opts)?;
            report.retrieval = Some(evaluate(ranking, &truth, cfg.k, &cfg.ranks)?);
        }
        let pool = self.state.pool.as_ref();
        if let (Some(labels), Some(pool)) = (&self.state.labels, pool) {
            report.identity_mining = Some(LabelSummary {
                accuracy: pseudo_label_accuracy(labels, pool)?,
                labeled: labels.assignments().len(),
                total: pool.len(),
                clusters: labels.centers().len(),
            });
        }
        if let (Some(km), Some(pool)) = (&self.state.kmeans, pool) {
            let mut pairs = Vec::with_capacity(pool.len());
            for (m, &c) in pool.meta().iter().zip(&km.assignments) {
                let v = m
                    .vehicle_id
                    .clone()
                    .ok_or_else(|| Error::Input(format!("`{}` has no vehicle_id", m.id)))?;
                pairs.push((c, v));
            }
            report.kmeans = Some(LabelSummary {
                accuracy: matching_accuracy(&pairs),
                labeled: pool.len(),
                total: pool.len(),
                clusters: km.centroids.len() / pool.dim(),
            });
        }
        let text = serde_json::to_string_pretty(&report)? + "\n";
        self.write(REPORT_FILE, &text)
    }

    fn submit(&mut self) -> Result<()> {
        let ranking = self.state.ranking.as_ref().expect("validated: rank precedes submit");
        let format = SubmissionFormat {
            width: self.config.submit.width,
            one_based: self.config.submit.one_based,
        };
        let text = format_submission(ranking, format, self.state.dist_qg.as_ref())?;
        self.write(SUBMISSION_FILE, &text)
    }
}

pub fn read_report(path: impl AsRef<Path>) -> Result<PipelineReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
