//! Pipeline configuration, read from TOML.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use reidpost::eval::{DEFAULT_CMC_RANKS, DEFAULT_TOP_K};
use reidpost::mining::MiningParams;
use reidpost::synth::{self, SynthScenario};
use reidpost::tracklet::{Aggregation, DEFAULT_ROW_THRESHOLD};
use reidpost::{Error, Metric, RerankParams, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::submission::SUBMISSION_WIDTH;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Synth,
    Rank,
    Mine,
    Kmeans,
    Eval,
    Submit,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Synth => "synth",
            Stage::Rank => "rank",
            Stage::Mine => "mine",
            Stage::Kmeans => "kmeans",
            Stage::Eval => "eval",
            Stage::Submit => "submit",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankMethod {
    /// Sort by image-to-image distance.
    Plain,
    /// Image-level k-reciprocal re-ranking.
    Rr,
    AfTrr,
    #[default]
    WfTrr,
}

impl RankMethod {
    pub fn aggregation(self) -> Option<Aggregation> {
        match self {
            RankMethod::AfTrr => Some(Aggregation::Average),
            RankMethod::WfTrr => Some(Aggregation::Weighted),
            _ => None,
        }
    }
}

impl FromStr for RankMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(RankMethod::Plain),
            "rr" => Ok(RankMethod::Rr),
            "af-trr" => Ok(RankMethod::AfTrr),
            "wf-trr" => Ok(RankMethod::WfTrr),
            other => Err(Error::Parameter(format!(
                "unknown rank method `{other}`, expected plain, rr, af-trr or wf-trr"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    pub embeddings: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    /// L2-normalize features after loading.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub preset: String,
    /// Full scenario; replaces the preset when present.
    pub scenario: Option<SynthScenario>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            preset: "corrupted_tracklets".into(),
            scenario: None,
        }
    }
}

impl SynthConfig {
    /// The scenario with the pipeline seed applied.
    pub fn resolve(&self, seed: u64) -> Result<SynthScenario> {
        let s = match &self.scenario {
            Some(s) => s.clone(),
            None => synth::preset(&self.preset)?,
        };
        Ok(s.with_seed(seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankConfig {
    pub method: RankMethod,
    pub row_threshold: f64,
    pub top_k: usize,
}

impl Default for RankConfig {
    fn default() -> Self {
        RankConfig {
            method: RankMethod::WfTrr,
            row_threshold: DEFAULT_ROW_THRESHOLD,
            top_k: DEFAULT_TOP_K,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    /// Left unset, thresholds come from the synthetic scenario when there is
    /// one and from the library defaults otherwise.
    pub d_n: Option<f64>,
    pub d_p: Option<f64>,
    pub restarts: usize,
    pub iterate: bool,
}

impl Default for MiningConfig {
    fn default() -> Self {
        MiningConfig {
            d_n: None,
            d_p: None,
            restarts: 1,
            iterate: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansConfig {
    /// Defaults to the number of distinct identities in the metadata.
    pub k: Option<usize>,
    pub max_iter: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig { k: None, max_iter: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k: usize,
    pub ranks: Vec<usize>,
    pub exclude_same_camera: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: DEFAULT_TOP_K,
            ranks: DEFAULT_CMC_RANKS.to_vec(),
            exclude_same_camera: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SubmitConfig {
    pub width: usize,
    pub one_based: bool,
}

impl Default for SubmitConfig {
    fn default() -> Self {
        SubmitConfig {
            width: SUBMISSION_WIDTH,
            one_based: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub metric: Metric,
    pub out_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub input: InputConfig,
    pub synth: SynthConfig,
    pub rank: RankConfig,
    pub rerank: RerankParams,
    pub mining: MiningConfig,
    pub kmeans: KMeansConfig,
    pub eval: EvalConfig,
    pub submit: SubmitConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            metric: Metric::Euclidean,
            out_dir: PathBuf::from("run"),
            stages: Vec::new(),
            input: InputConfig {
                normalize: true,
                ..Default::default()
            },
            synth: SynthConfig::default(),
            rank: RankConfig::default(),
            rerank: RerankParams::default(),
            mining: MiningConfig::default(),
            kmeans: KMeansConfig::default(),
            eval: EvalConfig::default(),
            submit: SubmitConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_toml()?.as_bytes())))
    }

    pub fn has(&self, stage: Stage) -> bool {
        self.stages.contains(&stage)
    }

    fn position(&self, stage: Stage) -> Option<usize> {
        self.stages.iter().position(|&s| s == stage)
    }

    /// Mining parameters with thresholds resolved.
    pub fn mining_params(&self) -> Result<MiningParams> {
        let fallback = if self.has(Stage::Synth) {
            let t = self.synth.resolve(self.seed)?.suggested_thresholds();
            (t.d_n, t.d_p)
        } else {
            let d = MiningParams::default();
            (d.d_n, d.d_p)
        };
        let p = MiningParams {
            d_n: self.mining.d_n.unwrap_or(fallback.0),
            d_p: self.mining.d_p.unwrap_or(fallback.1),
            seed: self.seed,
            restarts: self.mining.restarts,
            iterate: self.mining.iterate,
            metric: self.metric,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (i, s) in self.stages.iter().enumerate() {
            if self.stages[..i].contains(s) {
                return bad(format!("stage `{s}` is listed twice"));
            }
        }
        if let Some(p) = self.position(Stage::Synth) {
            if p != 0 {
                return bad("`synth` must be the first stage".into());
            }
            self.synth.resolve(self.seed)?.validate()?;
        } else if !self.stages.is_empty() {
            for (what, p) in [("embeddings", &self.input.embeddings), ("metadata", &self.input.metadata)] {
                match p {
                    None => return bad(format!("no synth stage and no input.{what} path")),
                    Some(p) if !p.exists() => return bad(format!("input.{what} `{}` does not exist", p.display())),
                    Some(_) => {}
                }
            }
        }
        let before = |a: Stage, b: Stage| match (self.position(a), self.position(b)) {
            (Some(x), Some(y)) => x < y,
            _ => false,
        };
        if self.has(Stage::Submit) && !before(Stage::Rank, Stage::Submit) {
            return bad("`submit` needs an earlier `rank` stage".into());
        }
        if self.has(Stage::Eval)
            && ![Stage::Rank, Stage::Mine, Stage::Kmeans]
                .iter()
                .any(|&s| before(s, Stage::Eval))
        {
            return bad("`eval` needs an earlier `rank`, `mine` or `kmeans` stage".into());
        }
        if self.has(Stage::Rank) {
            if self.rank.top_k == 0 {
                return bad("rank.top_k must be positive".into());
            }
            if !(self.rank.row_threshold.is_finite()) {
                return bad("rank.row_threshold must be finite".into());
            }
            if matches!(self.rank.method, RankMethod::Rr | RankMethod::AfTrr | RankMethod::WfTrr) {
                self.rerank.validate()?;
            }
        }
        if self.has(Stage::Mine) {
            self.mining_params()?;
        }
        if self.has(Stage::Kmeans) {
            if self.kmeans.max_iter == 0 {
                return bad("kmeans.max_iter must be positive".into());
            }
            if self.kmeans.k == Some(0) {
                return bad("kmeans.k must be positive".into());
            }
        }
        if self.has(Stage::Eval) && (self.eval.k == 0 || self.eval.ranks.contains(&0)) {
            return bad("eval.k and eval.ranks must be positive".into());
        }
        if self.has(Stage::Submit) && self.submit.width == 0 {
            return bad("submit.width must be positive".into());
        }
        Ok(())
    }
}
