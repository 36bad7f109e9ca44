mod common;

use acd::pipeline::{self, hash_file, Manifest, Stage, StageOutcome};
use acd::Error;

#[test]
fn all_stages_write_eight_artifacts_with_consistent_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::synthetic_config(dir.path());
    let outcomes = pipeline::run_all(&config, false).unwrap();
    assert!(outcomes.iter().all(|o| *o == StageOutcome::Ran));

    let artifacts = pipeline::artifact_paths(&config.out_dir);
    assert_eq!(artifacts.len(), 8);
    assert!(artifacts.iter().all(|p| p.is_file()), "{artifacts:?}");

    let manifest = Manifest::load(&config.out_dir).unwrap();
    for stage in Stage::ALL {
        let record = manifest.record(stage).unwrap();
        assert_eq!(record.parameter_hash, config.parameter_hash());
        for (name, hash) in &record.outputs {
            assert_eq!(&hash_file(&config.out_dir.join(name)).unwrap(), hash, "{name}");
        }
        for pre in stage.prerequisites() {
            let recorded = &record.inputs[pre.artifact()];
            assert_eq!(recorded, &hash_file(&config.out_dir.join(pre.artifact())).unwrap());
        }
    }
    assert_eq!(
        manifest.record(Stage::Extract).unwrap().inputs["corpus"],
        hash_file(&config.corpus).unwrap()
    );
}

#[test]
fn cluster_before_represent_names_the_missing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::synthetic_config(dir.path());
    pipeline::run_stage(&config, Stage::Extract, false).unwrap();
    pipeline::run_stage(&config, Stage::Verify, false).unwrap();
    let err = pipeline::run_stage(&config, Stage::Cluster, false).unwrap_err();
    assert!(matches!(
        err,
        Error::MissingPrerequisite { stage: "cluster", prerequisite: "represent" }
    ));
    assert!(err.to_string().contains("represent"));
    assert_eq!(err.exit_code(), 2);
    assert!(!config.out_dir.join(Stage::Cluster.artifact()).exists());
}

#[test]
fn unchanged_rerun_is_a_no_op_unless_forced() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::synthetic_config(dir.path());
    pipeline::run_all(&config, false).unwrap();
    let path = config.out_dir.join(Stage::Evaluate.artifact());
    let before = std::fs::metadata(&path).unwrap().modified().unwrap();
    let manifest = std::fs::read(config.out_dir.join(pipeline::MANIFEST_FILE)).unwrap();

    assert_eq!(pipeline::run_stage(&config, Stage::Evaluate, false).unwrap(), StageOutcome::UpToDate);
    assert_eq!(std::fs::metadata(&path).unwrap().modified().unwrap(), before);
    assert_eq!(std::fs::read(config.out_dir.join(pipeline::MANIFEST_FILE)).unwrap(), manifest);

    assert_eq!(pipeline::run_stage(&config, Stage::Evaluate, true).unwrap(), StageOutcome::Ran);
    assert_eq!(std::fs::read(config.out_dir.join(pipeline::MANIFEST_FILE)).unwrap(), manifest);
}

#[test]
fn edited_artifacts_and_changed_parameters_are_stale() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::synthetic_config(dir.path());
    pipeline::run_all(&config, false).unwrap();

    let reseeded = acd::config::PipelineConfig { seed: config.seed + 1, ..config.clone() };
    let err = pipeline::run_stage(&reseeded, Stage::Cluster, false).unwrap_err();
    assert!(matches!(err, Error::StaleArtifact { .. }), "{err}");
    assert_eq!(err.exit_code(), 3);

    let pool = config.out_dir.join(Stage::Cluster.artifact());
    let mut text = std::fs::read_to_string(&pool).unwrap();
    text.push('\n');
    std::fs::write(&pool, text).unwrap();
    let err = pipeline::run_stage(&config, Stage::Train, false).unwrap_err();
    assert!(matches!(err, Error::StaleArtifact { .. }), "{err}");
    assert!(err.to_string().contains("cluster"));

    // Re-running the producer clears the error.
    pipeline::run_stage(&config, Stage::Cluster, true).unwrap();
    assert_eq!(pipeline::run_stage(&config, Stage::Train, false).unwrap(), StageOutcome::UpToDate);
}

#[test]
fn changed_input_file_triggers_a_rerun() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::synthetic_config(dir.path());
    pipeline::run_stage(&config, Stage::Extract, false).unwrap();
    assert_eq!(pipeline::run_stage(&config, Stage::Extract, false).unwrap(), StageOutcome::UpToDate);
    let mut corpus = std::fs::read_to_string(&config.corpus).unwrap();
    corpus.push('\n');
    std::fs::write(&config.corpus, corpus).unwrap();
    assert_eq!(pipeline::run_stage(&config, Stage::Extract, false).unwrap(), StageOutcome::Ran);
}

#[test]
fn artifacts_are_plain_text() {
    let dir = tempfile::tempdir().unwrap();
    let config = common::synthetic_config(dir.path());
    pipeline::run_all(&config, false).unwrap();
    for path in pipeline::artifact_paths(&config.out_dir) {
        let text = std::fs::read_to_string(&path).unwrap();
        if path.extension().unwrap() == "jsonl" {
            for line in text.lines() {
                serde_json::from_str::<serde_json::Value>(line).unwrap();
            }
        } else {
            serde_json::from_str::<serde_json::Value>(&text).unwrap();
        }
    }
    let pool: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(config.out_dir.join("cluster_pool.json")).unwrap()).unwrap();
    let first = &pool[0];
    assert!(first["members"][0].as_str().unwrap().contains(' '));
    assert!(first["alpha"].is_number() && first["C"].is_number() && first["seed"].is_number());
    let csv = std::fs::read_to_string(config.out_dir.join("reports/sweep_alpha.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + config.alphas.len());
}
