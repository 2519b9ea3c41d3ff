use std::fs;
use std::path::Path;

use reidpost::synth::SynthScenario;
use reidpost_cli::config::{SynthConfig, PipelineConfig, RankMethod, Stage};
use reidpost_cli::pipeline::{
    read_manifest, read_report, CONFIG_FILE, LABELS_FILE, MANIFEST_FILE, REPORT_FILE, SUBMISSION_FILE,
};
use reidpost_cli::run_pipeline;

fn small(out: &Path, stages: Vec<Stage>) -> PipelineConfig {
    PipelineConfig {
        seed: 3,
        out_dir: out.to_path_buf(),
        stages,
        synth: SynthConfig {
            preset: "corrupted_tracklets".into(),
            scenario: Some(SynthScenario {
                n_ids: 12,
                queries: 36,
                gallery: 240,
                dim: 8,
                corrupt_fraction: 0.3,
                ..Default::default()
            }),
        },
        ..Default::default()
    }
}

#[test]
fn no_stages_writes_only_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = run_pipeline(&small(dir.path(), vec![])).unwrap();
    assert!(m.stages.is_empty() && m.failed_stage.is_none());
    let names: Vec<_> = fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, vec![MANIFEST_FILE]);
    assert_eq!(read_manifest(dir.path().join(MANIFEST_FILE)).unwrap(), m);
}

#[test]
fn invalid_config_is_recorded_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(dir.path(), vec![Stage::Submit]);
    assert!(run_pipeline(&cfg).is_err());
    let m = read_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(m.failed_stage.as_deref(), Some("config"));
    assert!(m.error.is_some());
}

#[test]
fn missing_input_fails_the_rank_stage() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(dir.path(), vec![Stage::Rank]);
    cfg.input.embeddings = Some(dir.path().join("absent.emb1"));
    cfg.input.metadata = Some(dir.path().join("absent.jsonl"));
    assert!(run_pipeline(&cfg).is_err());
    let m = read_manifest(dir.path().join(MANIFEST_FILE)).unwrap();
    assert!(m.failed_stage.is_some());
}

#[test]
fn weighted_tracks_score_at_least_as_well_as_averaged() {
    let stages = vec![Stage::Synth, Stage::Rank, Stage::Eval];
    let mut scores = Vec::new();
    for method in [RankMethod::WfTrr, RankMethod::AfTrr] {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small(dir.path(), stages.clone());
        cfg.rank.method = method;
        let m = run_pipeline(&cfg).unwrap();
        assert_eq!(m.stages.len(), 3);
        assert!(m.distance_throughput.unwrap().pairs_per_second > 0.0);
        assert!(dir.path().join(CONFIG_FILE).exists());
        let report = read_report(dir.path().join(REPORT_FILE)).unwrap();
        scores.push(report.retrieval.unwrap().map_at_k);
    }
    assert!(scores[0] >= scores[1], "{scores:?}");
}

#[test]
fn reruns_are_byte_identical() {
    let stages = vec![Stage::Synth, Stage::Rank, Stage::Mine, Stage::Kmeans, Stage::Eval, Stage::Submit];
    let mut outputs = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        run_pipeline(&small(dir.path(), stages.clone())).unwrap();
        let report = read_report(dir.path().join(REPORT_FILE)).unwrap();
        assert!(report.identity_mining.is_some() && report.kmeans.is_some());
        let lines = fs::read_to_string(dir.path().join(SUBMISSION_FILE)).unwrap();
        assert_eq!(lines.lines().count(), 36);
        assert!(lines.lines().all(|l| l.split_whitespace().count() == 100));
        outputs.push((lines, fs::read(dir.path().join(LABELS_FILE)).unwrap()));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_round_trips_through_toml() {
    let cfg = small(Path::new("out"), vec![Stage::Synth, Stage::Rank]);
    let back = PipelineConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
}
