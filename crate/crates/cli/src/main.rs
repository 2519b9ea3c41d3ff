use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use reidpost::eval::{cmc, map_at_k, pseudo_label_accuracy, matching_accuracy, RelevanceOptions, DEFAULT_CMC_RANKS};
use reidpost::mining::MiningParams;
use reidpost::rerank::{pool_matrix, split_pool, DistanceTransform};
use reidpost::tracklet::{trr_pipeline, Aggregation, TrackletIndex, TrrConfig, DEFAULT_ROW_THRESHOLD};
use reidpost::{
    distance_matrix, generate, identity_mine, kmeans_baseline, load_embeddings, rerank, synth, DistanceMatrix,
    EmbeddingSet, Metric, Relevance, RerankParams, Split,
};
use reidpost_cli::config::RankMethod;
use reidpost_cli::submission::{format_ranking, read_submission, write_submission, SubmissionFormat};
use reidpost_cli::{run_pipeline, PipelineConfig};

#[derive(Parser)]
#[command(name = "reidpost", version, about = "Re-identification post-processing")]
struct Cli {
    /// Worker threads (defaults to REIDPOST_THREADS, then the core count)
    #[arg(long, global = true, env = "REIDPOST_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Query x gallery (or pooled) distance matrix
    Distmat(DistmatArgs),
    /// k-reciprocal re-ranking of a distance matrix
    Rerank(RerankArgs),
    /// Tracklet-level re-ranking, written as a ranking file
    Trr(TrrArgs),
    /// Identity Mining pseudo labels
    Mine(MineArgs),
    /// k-means baseline clustering
    Kmeans(KmeansArgs),
    /// mAP and CMC of a ranking file
    Eval(EvalArgs),
    /// Synthetic scenario with ground truth
    Synth(SynthArgs),
    /// Submission file from a ranking file
    Submit(SubmitArgs),
    /// Run a configured sequence of stages
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct Input {
    /// EMB1 feature file
    #[arg(long = "emb")]
    emb: PathBuf,
    /// JSONL metadata
    #[arg(long)]
    meta: PathBuf,
    /// Use features as stored instead of L2-normalizing them
    #[arg(long)]
    no_normalize: bool,
}

impl Input {
    fn load(&self) -> Result<(EmbeddingSet, EmbeddingSet)> {
        let mut set = load_embeddings(&self.emb, &self.meta)
            .with_context(|| format!("loading {}", self.emb.display()))?;
        if !self.no_normalize {
            set = set.l2_normalize()?;
        }
        Ok((set.split(Split::Query)?, set.split(Split::Gallery)?))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Euclidean,
    SqEuclidean,
    Cosine,
}

impl From<MetricArg> for Metric {
    fn from(m: MetricArg) -> Metric {
        match m {
            MetricArg::Euclidean => Metric::Euclidean,
            MetricArg::SqEuclidean => Metric::SquaredEuclidean,
            MetricArg::Cosine => Metric::CosineDistance,
        }
    }
}

#[derive(Args)]
struct RrArgs {
    #[arg(long, default_value_t = 20)]
    k1: usize,
    #[arg(long, default_value_t = 6)]
    k2: usize,
    #[arg(long, default_value_t = 0.3)]
    lambda: f64,
    /// Square and row-normalize distances before re-ranking
    #[arg(long)]
    squared_row_max: bool,
}

impl RrArgs {
    fn params(&self) -> Result<RerankParams> {
        let mut p = RerankParams::new(self.k1, self.k2, self.lambda)?;
        if self.squared_row_max {
            p.transform = DistanceTransform::SquaredRowMax;
        }
        Ok(p)
    }
}

#[derive(Args)]
struct DistmatArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    /// Write the square matrix over queries followed by gallery
    #[arg(long)]
    pooled: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerankArgs {
    /// Query x gallery matrix, or a square pooled matrix
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long, requires = "gg")]
    qq: Option<PathBuf>,
    #[arg(long, requires = "qq")]
    gg: Option<PathBuf>,
    /// Query count of a pooled matrix whose sidecar does not record it
    #[arg(long)]
    num_query: Option<usize>,
    #[command(flatten)]
    rr: RrArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregationArg {
    Af,
    Wf,
}

#[derive(Args)]
struct TrrArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, value_enum, default_value = "wf")]
    aggregation: AggregationArg,
    #[arg(long, default_value_t = DEFAULT_ROW_THRESHOLD)]
    row_threshold: f64,
    #[command(flatten)]
    rr: RrArgs,
    /// Rank tracklets by plain image-to-track distance
    #[arg(long)]
    no_rerank: bool,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    #[arg(long, default_value_t = 100)]
    top_k: usize,
    /// Ranking file, one line of one-based gallery indices per query
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MineArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long, default_value_t = 0.49)]
    dn: f64,
    #[arg(long, default_value_t = 0.23)]
    dp: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
    /// Let newly labeled samples label their own neighbors
    #[arg(long)]
    iterate: bool,
    #[arg(long, value_enum, default_value = "euclidean")]
    metric: MetricArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct KmeansArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Metadata with vehicle_id for queries and gallery
    #[arg(long)]
    truth: PathBuf,
    /// Ranking or submission file
    #[arg(long)]
    result: PathBuf,
    /// Comma-separated list of map@K and cmc
    #[arg(long, default_value = "map@100,cmc")]
    metric: String,
    #[arg(long)]
    zero_based: bool,
    #[arg(long)]
    exclude_same_camera: bool,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value = "corrupted_tracklets")]
    preset: String,
    /// TOML scenario file; replaces the preset
    #[arg(long, conflicts_with = "preset")]
    scenario: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_unless_present = "list")]
    out: Option<PathBuf>,
    #[arg(long, required_unless_present = "list")]
    meta: Option<PathBuf>,
    /// Print the preset catalog as TOML and exit
    #[arg(long)]
    list: bool,
}

#[derive(Args)]
struct SubmitArgs {
    /// Ranking file (one-based unless --zero-based-in)
    #[arg(long)]
    result: PathBuf,
    /// Metadata giving the query and gallery order
    #[arg(long)]
    meta: PathBuf,
    /// Query x gallery distances used to pad short lists with the nearest unused images
    #[arg(long)]
    dist: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    width: usize,
    #[arg(long)]
    zero_based: bool,
    #[arg(long)]
    zero_based_in: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long, value_enum)]
    metric: Option<MetricArg>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Distmat(a) => distmat(a),
        Command::Rerank(a) => rerank_cmd(a),
        Command::Trr(a) => trr(a),
        Command::Mine(a) => mine(a),
        Command::Kmeans(a) => kmeans(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth_cmd(a),
        Command::Submit(a) => submit(a),
        Command::Pipeline(a) => pipeline(a),
    }
}

fn distmat(a: DistmatArgs) -> Result<()> {
    let (q, g) = a.input.load()?;
    let metric = a.metric.into();
    if a.pooled {
        let qg = distance_matrix(&q, &g, metric)?;
        let qq = distance_matrix(&q, &q, metric)?;
        let gg = distance_matrix(&g, &g, metric)?;
        pool_matrix(&qg, &qq, &gg)?.save(&a.out, Some(q.len()))?;
    } else {
        distance_matrix(&q, &g, metric)?.save(&a.out, None)?;
    }
    info!("wrote {}", a.out.display());
    Ok(())
}

fn rerank_cmd(a: RerankArgs) -> Result<()> {
    let params = a.rr.params()?;
    let (input, stored_q) = DistanceMatrix::load(&a.input)?;
    let (qg, qq, gg) = match (&a.qq, &a.gg) {
        (Some(qq), Some(gg)) => (input, DistanceMatrix::load(qq)?.0, DistanceMatrix::load(gg)?.0),
        _ => {
            let Some(nq) = a.num_query.or(stored_q) else {
                bail!("a pooled matrix needs --num-query, or pass --qq and --gg");
            };
            split_pool(&input, nq)?
        }
    };
    rerank(&qg, &qq, &gg, &params)?.save(&a.out, None)?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn trr(a: TrrArgs) -> Result<()> {
    let (q, g) = a.input.load()?;
    let index = TrackletIndex::from_gallery(&g)?;
    let config = TrrConfig {
        aggregation: match a.aggregation {
            AggregationArg::Af => Aggregation::Average,
            AggregationArg::Wf => Aggregation::Weighted,
        },
        row_threshold: a.row_threshold,
        rerank: if a.no_rerank { None } else { Some(a.rr.params()?) },
        metric: a.metric.into(),
        top_k: a.top_k,
    };
    let result = trr_pipeline(&q, &g, &index, &config)?;
    write(&a.out, &format_ranking(&result, true))
}

fn mine(a: MineArgs) -> Result<()> {
    let (q, g) = a.input.load()?;
    let params = MiningParams {
        d_n: a.dn,
        d_p: a.dp,
        seed: a.seed,
        restarts: a.restarts,
        iterate: a.iterate,
        metric: a.metric.into(),
    };
    let labels = identity_mine(&q, &g, &params)?;
    let pool = q.concat(&g)?;
    labels.write_jsonl(&pool.ids(), &a.out)?;
    let mut summary = serde_json::json!({
        "centers": labels.centers().len(),
        "labeled": labels.assignments().len(),
        "total": pool.len(),
    });
    if pool.meta().iter().all(|m| m.vehicle_id.is_some()) {
        summary["accuracy"] = pseudo_label_accuracy(&labels, &pool)?.into();
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn kmeans(a: KmeansArgs) -> Result<()> {
    let (q, g) = a.input.load()?;
    let pool = q.concat(&g)?;
    let result = kmeans_baseline(&pool, a.k, a.seed, a.max_iter)?;
    let mut text = String::new();
    for (m, c) in pool.meta().iter().zip(&result.assignments) {
        text.push_str(&serde_json::json!({ "id": m.id, "cluster": c }).to_string());
        text.push('\n');
    }
    write(&a.out, &text)?;
    let mut summary = serde_json::json!({
        "k": a.k,
        "iterations": result.iterations,
        "converged": result.converged,
        "inertia": result.inertia,
    });
    if pool.meta().iter().all(|m| m.vehicle_id.is_some()) {
        let pairs: Vec<_> = result
            .assignments
            .iter()
            .zip(pool.meta())
            .map(|(&c, m)| (c, m.vehicle_id.clone().unwrap()))
            .collect();
        summary["accuracy"] = matching_accuracy(&pairs).into();
    }
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn split_meta(path: &Path) -> Result<(EmbeddingSet, EmbeddingSet)> {
    let meta = reidpost::embedding::read_metadata(path)?;
    let n = meta.len();
    // features are not needed; a one-column placeholder keeps the types
    let set = EmbeddingSet::new(1, vec![1.0; n], meta)?;
    Ok((set.split(Split::Query)?, set.split(Split::Gallery)?))
}

fn eval(a: EvalArgs) -> Result<()> {
    let (q, g) = split_meta(&a.truth)?;
    let result = read_submission(&a.result, q.ids(), g.ids(), !a.zero_based)?;
    let truth = Relevance::from_labels(
        &q,
        &g,
        RelevanceOptions {
            exclude_same_camera: a.exclude_same_camera,
        },
    )?;
    let mut report = serde_json::Map::new();
    for m in a.metric.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        if let Some(k) = m.strip_prefix("map@") {
            let k: usize = k.parse().with_context(|| format!("bad metric `{m}`"))?;
            report.insert(m.to_string(), map_at_k(&result, &truth, k)?.into());
        } else if m == "map" {
            report.insert("map@100".into(), map_at_k(&result, &truth, 100)?.into());
        } else if m == "cmc" {
            let rates = cmc(&result, &truth, &DEFAULT_CMC_RANKS)?;
            let obj: serde_json::Map<String, serde_json::Value> =
                rates.into_iter().map(|(r, v)| (r.to_string(), v.into())).collect();
            report.insert("cmc".into(), obj.into());
        } else {
            bail!("unknown metric `{m}`, expected map@K or cmc");
        }
    }
    report.insert("num_queries".into(), q.len().into());
    let text = serde_json::to_string_pretty(&report)?;
    match a.out {
        Some(p) => write(&p, &(text + "\n")),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    if a.list {
        for (name, s) in synth::scenario_presets() {
            println!("[{name}]\n{}", toml::to_string(&s)?);
        }
        return Ok(());
    }
    let scenario = match &a.scenario {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str::<synth::SynthScenario>(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => synth::preset(&a.preset)?,
    }
    .with_seed(a.seed);
    let set = generate(&scenario)?;
    let (out, meta) = (a.out.unwrap(), a.meta.unwrap());
    set.save(&out, &meta)?;
    info!("wrote {} images to {}", set.len(), out.display());
    Ok(())
}

fn submit(a: SubmitArgs) -> Result<()> {
    let (q, g) = split_meta(&a.meta)?;
    let result = read_submission(&a.result, q.ids(), g.ids(), !a.zero_based_in)?;
    let dist = match &a.dist {
        Some(p) => Some(DistanceMatrix::load(p)?.0),
        None => None,
    };
    let format = SubmissionFormat {
        width: a.width,
        one_based: !a.zero_based,
    };
    write_submission(&result, &a.out, format, dist.as_ref())?;
    info!("wrote {}", a.out.display());
    Ok(())
}

fn pipeline(a: PipelineArgs) -> Result<()> {
    let mut config = PipelineConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(d) = a.out_dir {
        config.out_dir = d;
    }
    if let Some(m) = a.method {
        config.rank.method = m.parse::<RankMethod>()?;
    }
    if let Some(m) = a.metric {
        config.metric = m.into();
    }
    let manifest = run_pipeline(&config)?;
    println!("{}", serde_json::to_string_pretty(&manifest)?);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
