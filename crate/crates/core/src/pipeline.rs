//! Stage orchestration, artifact persistence and the run manifest.
//!
//! Every stage reads the artifacts of earlier stages from the output
//! directory and writes its own. `manifest.json` records, per stage, the
//! parameter hash, the hashes of everything the stage read, and the hashes
//! of what it wrote.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::corpus::{self, Concept, HumanLexicon};
use crate::ensemble::{self, ActionTag, ClusterClassifier, EnsembleModel, TrainingData};
use crate::error::{Error, Result};
use crate::eval::{self, ClusterEvaluation, SweepInputs, SweepReport};
use crate::features::{Embeddings, FeatureStore};
use crate::nncluster::{self, ClusterPool, ClusterRun};
use crate::represent::{self, ConceptRepresentation};
use crate::seed;
use crate::verify::{self, VerificationResult};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Extract,
    Verify,
    Represent,
    Cluster,
    Train,
    Ensemble,
    Evaluate,
    Sweep,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Extract,
        Stage::Verify,
        Stage::Represent,
        Stage::Cluster,
        Stage::Train,
        Stage::Ensemble,
        Stage::Evaluate,
        Stage::Sweep,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Extract => "extract",
            Stage::Verify => "verify",
            Stage::Represent => "represent",
            Stage::Cluster => "cluster",
            Stage::Train => "train",
            Stage::Ensemble => "ensemble",
            Stage::Evaluate => "evaluate",
            Stage::Sweep => "sweep",
        }
    }

    /// The stage's main artifact, relative to the output directory.
    pub fn artifact(self) -> &'static str {
        match self {
            Stage::Extract => "concepts.json",
            Stage::Verify => "verification.jsonl",
            Stage::Represent => "representations.json",
            Stage::Cluster => "cluster_pool.json",
            Stage::Train => "classifiers.json",
            Stage::Ensemble => "ensembles.json",
            Stage::Evaluate => "evaluation.json",
            Stage::Sweep => "sweep.json",
        }
    }

    pub fn prerequisites(self) -> &'static [Stage] {
        match self {
            Stage::Extract => &[],
            Stage::Verify => &[Stage::Extract],
            Stage::Represent => &[Stage::Extract, Stage::Verify],
            Stage::Cluster => &[Stage::Represent],
            Stage::Train => &[Stage::Extract, Stage::Cluster],
            Stage::Ensemble => &[Stage::Extract, Stage::Cluster, Stage::Train],
            Stage::Evaluate => &[Stage::Extract, Stage::Cluster],
            Stage::Sweep => &[Stage::Extract, Stage::Represent],
        }
    }

    fn external_inputs(self) -> &'static [Input] {
        use Input::*;
        match self {
            Stage::Extract => &[Corpus, Lexicon, LemmaMap],
            Stage::Verify => &[ImageFeatures],
            Stage::Represent => &[ImageFeatures, Embeddings],
            Stage::Cluster => &[],
            Stage::Train | Stage::Ensemble | Stage::Evaluate | Stage::Sweep => &[ImageFeatures],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, Copy)]
enum Input {
    Corpus,
    Lexicon,
    LemmaMap,
    ImageFeatures,
    Embeddings,
}

impl Input {
    fn name(self) -> &'static str {
        match self {
            Input::Corpus => "corpus",
            Input::Lexicon => "lexicon",
            Input::LemmaMap => "lemma_map",
            Input::ImageFeatures => "image_features",
            Input::Embeddings => "embeddings",
        }
    }

    fn path(self, config: &PipelineConfig) -> Option<&Path> {
        match self {
            Input::Corpus => Some(&config.corpus),
            Input::Lexicon => config.lexicon.as_deref(),
            Input::LemmaMap => config.lemma_map.as_deref(),
            Input::ImageFeatures => Some(&config.image_features),
            Input::Embeddings => Some(&config.embeddings),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub parameter_hash: String,
    /// Input name (config key or artifact path) → content hash.
    pub inputs: BTreeMap<String, String>,
    /// Output path relative to the output directory → content hash.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

impl Manifest {
    pub fn load(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(Manifest::default());
        }
        read_json(&path)
    }

    pub fn save(&self, out_dir: &Path) -> Result<()> {
        write_atomic(&out_dir.join(MANIFEST_FILE), &to_json(self)?)
    }

    pub fn record(&self, stage: Stage) -> Option<&StageRecord> {
        self.stages.get(stage.name())
    }

    /// Output paths whose current content differs from the recorded hash.
    pub fn mismatched_outputs(&self, stage: Stage, out_dir: &Path) -> Vec<String> {
        let Some(record) = self.record(stage) else {
            return Vec::new();
        };
        record
            .outputs
            .iter()
            .filter(|(name, hash)| hash_file(&out_dir.join(name)).ok().as_ref() != Some(*hash))
            .map(|(name, _)| name.clone())
            .collect()
    }
}

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?
        .to_string_lossy();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let result = (|| {
        let mut file = std::fs::File::create(&tmp)?;
        file.write_all(bytes)?;
        file.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = std::fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}

pub fn hash_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hash_bytes(&bytes))
}

fn to_json<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                context: path.display().to_string(),
                line: n + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageOutcome {
    Ran,
    UpToDate,
}

/// Per-cluster held-out results plus their averages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub n_clusters: usize,
    pub n_evaluated: usize,
    pub mean_ap: f64,
    pub avg_accuracy: f64,
    pub clusters: Vec<ClusterEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepArtifact {
    pub alpha: SweepReport,
    pub c: SweepReport,
}

/// Seed shared by every clustering run so that runs differ only in the
/// similarity matrix.
pub fn cluster_seed(master: u64) -> u64 {
    seed::derive(master, "cluster")
}

/// Runs `stage` unless its recorded inputs, parameters and outputs are all
/// current (or `force` is set).
pub fn run_stage(config: &PipelineConfig, stage: Stage, force: bool) -> Result<StageOutcome> {
    let out_dir = &config.out_dir;
    let mut manifest = Manifest::load(out_dir)?;
    let parameter_hash = config.parameter_hash();

    let mut inputs = BTreeMap::new();
    for &pre in stage.prerequisites() {
        let missing = Error::MissingPrerequisite {
            stage: stage.name(),
            prerequisite: pre.name(),
        };
        let record = manifest.record(pre).ok_or(missing)?;
        if !out_dir.join(pre.artifact()).exists() {
            return Err(Error::MissingPrerequisite {
                stage: stage.name(),
                prerequisite: pre.name(),
            });
        }
        if let Some(changed) = manifest.mismatched_outputs(pre, out_dir).first() {
            return Err(Error::StaleArtifact {
                stage: stage.name(),
                reason: format!("{changed} changed since `{pre}` wrote it; rerun `{pre}`"),
            });
        }
        if record.parameter_hash != parameter_hash {
            return Err(Error::StaleArtifact {
                stage: stage.name(),
                reason: format!("`{pre}` ran with different parameters; rerun `{pre}`"),
            });
        }
        let artifact = pre.artifact().to_string();
        let hash = record.outputs[&artifact].clone();
        inputs.insert(artifact, hash);
    }
    for input in stage.external_inputs() {
        if let Some(path) = input.path(config) {
            inputs.insert(input.name().to_string(), hash_file(path)?);
        }
    }

    if !force {
        if let Some(record) = manifest.record(stage) {
            let current = record.parameter_hash == parameter_hash
                && record.inputs == inputs
                && manifest.mismatched_outputs(stage, out_dir).is_empty();
            if current {
                log::info!("{stage}: up to date");
                return Ok(StageOutcome::UpToDate);
            }
        }
    }

    log::info!("{stage}: running");
    let outputs = execute(config, stage).map_err(|e| e.context(format!("stage {stage}")))?;
    let mut record = StageRecord {
        parameter_hash,
        inputs,
        outputs: BTreeMap::new(),
    };
    for (name, bytes) in outputs {
        write_atomic(&out_dir.join(&name), &bytes)?;
        record.outputs.insert(name, hash_bytes(&bytes));
    }
    manifest.stages.insert(stage.name().to_string(), record);
    manifest.save(out_dir)?;
    log::info!("{stage}: wrote {}", stage.artifact());
    Ok(StageOutcome::Ran)
}

/// Every stage in order.
pub fn run_all(config: &PipelineConfig, force: bool) -> Result<Vec<StageOutcome>> {
    Stage::ALL.iter().map(|&s| run_stage(config, s, force)).collect()
}

struct Loader<'c> {
    config: &'c PipelineConfig,
}

impl Loader<'_> {
    fn artifact<T: DeserializeOwned>(&self, stage: Stage) -> Result<T> {
        read_json(&self.config.out_dir.join(stage.artifact()))
    }

    fn concepts(&self) -> Result<Vec<Concept>> {
        self.artifact(Stage::Extract)
    }

    fn verification(&self) -> Result<Vec<VerificationResult>> {
        read_jsonl(&self.config.out_dir.join(Stage::Verify.artifact()))
    }

    fn features(&self) -> Result<FeatureStore> {
        FeatureStore::load(&self.config.image_features)
    }
}

type Outputs = Vec<(String, Vec<u8>)>;

fn execute(config: &PipelineConfig, stage: Stage) -> Result<Outputs> {
    let load = Loader { config };
    let main = |bytes: Vec<u8>| (stage.artifact().to_string(), bytes);
    match stage {
        Stage::Extract => {
            let records = corpus::load_records(&config.corpus)?;
            let lexicon = match &config.lexicon {
                Some(p) => HumanLexicon::load(p)?,
                None => HumanLexicon::default(),
            };
            let mut table = corpus::build_concept_table(&records, &lexicon, config.min_count)?;
            if let Some(p) = &config.lemma_map {
                table = corpus::apply_lemmatizer(&table, &corpus::load_lemma_map(p)?);
            }
            log::info!("extract: {} concepts with count >= {}", table.len(), config.min_count);
            Ok(vec![main(to_json(&table)?)])
        }
        Stage::Verify => {
            let table = load.concepts()?;
            let features = load.features()?;
            let results = verify::verify_all(&table, &features, config.gate, config.seed, &config.svm());
            let passed = results.iter().filter(|r| r.passed).count();
            log::info!("verify: {passed} of {} concepts passed", results.len());
            let mut bytes = Vec::new();
            for r in &results {
                serde_json::to_writer(&mut bytes, r)?;
                bytes.push(b'\n');
            }
            Ok(vec![main(bytes)])
        }
        Stage::Represent => {
            let table = load.concepts()?;
            let verification = load.verification()?;
            let features = load.features()?;
            let embeddings = Embeddings::load(&config.embeddings)?;
            let passed: std::collections::BTreeSet<_> = verification
                .iter()
                .filter(|r| r.passed)
                .map(|r| r.concept.clone())
                .collect();
            let reps = table
                .iter()
                .filter(|c| passed.contains(&c.key()))
                .map(|c| {
                    represent::build_representation(c, &features, &embeddings, config.alpha, config.aggregation)
                        .map_err(|e| e.context(format!("concept {}", c.key())))
                })
                .collect::<Result<Vec<ConceptRepresentation>>>()?;
            Ok(vec![main(to_json(&reps)?)])
        }
        Stage::Cluster => {
            let reps: Vec<ConceptRepresentation> = load.artifact(Stage::Represent)?;
            if reps.is_empty() {
                return Err(Error::Empty("representations"));
            }
            let keys: Vec<_> = reps.iter().map(|r| r.concept.clone()).collect();
            let seed = cluster_seed(config.seed);
            let runs = config
                .alphas
                .iter()
                .map(|&alpha| {
                    let fused: Vec<_> = reps.iter().map(|r| r.with_alpha(alpha)).collect();
                    let sim = represent::similarity_matrix(&fused)?;
                    Ok(ClusterRun {
                        alpha,
                        c_const: config.c_const,
                        seed,
                        clusters: nncluster::cluster(&sim, config.c_const, seed),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let pool = nncluster::merge_pools(&runs, &keys)?;
            log::info!("cluster: pool of {} clusters over {} runs", pool.len(), runs.len());
            Ok(vec![main(to_json(&pool)?)])
        }
        Stage::Train => {
            let table = load.concepts()?;
            let pool: ClusterPool = load.artifact(Stage::Cluster)?;
            let features = load.features()?;
            let data = TrainingData::new(&features, &table);
            let classifiers: Vec<ClusterClassifier> =
                ensemble::train_cluster_classifiers(&data, &pool, config.neg_ratio, &config.svm())
                    .into_iter()
                    .enumerate()
                    .filter_map(|(id, r)| match r {
                        Ok(c) => Some(c),
                        Err(e) => {
                            log::warn!("train: cluster {id} skipped: {e}");
                            None
                        }
                    })
                    .collect();
            Ok(vec![main(to_json(&classifiers)?)])
        }
        Stage::Ensemble => {
            let table = load.concepts()?;
            let pool: ClusterPool = load.artifact(Stage::Cluster)?;
            let classifiers: Vec<ClusterClassifier> = load.artifact(Stage::Train)?;
            let features = load.features()?;
            let data = TrainingData::new(&features, &table);
            let mut models: Vec<EnsembleModel> = Vec::new();
            for raw in &config.tags {
                let tag: ActionTag = raw.parse()?;
                match ensemble::train_tag_ensemble(
                    &tag,
                    &data,
                    &pool,
                    &classifiers,
                    config.neg_ratio,
                    config.seed,
                    config.match_mode,
                ) {
                    Ok(m) => models.push(m),
                    Err(e) => log::warn!("ensemble: tag {tag:?} skipped: {e}"),
                }
            }
            Ok(vec![main(to_json(&models)?)])
        }
        Stage::Evaluate => {
            let table = load.concepts()?;
            let pool: ClusterPool = load.artifact(Stage::Cluster)?;
            let features = load.features()?;
            let data = TrainingData::new(&features, &table);
            let clusters = eval::evaluate_pool(&data, &pool, config.neg_ratio, &config.svm());
            let aps: Vec<f64> = clusters.iter().map(|c| c.outcome.ap).collect();
            let accs: Vec<f64> = clusters.iter().map(|c| c.outcome.accuracy).collect();
            let report = EvaluationReport {
                n_clusters: pool.len(),
                n_evaluated: clusters.len(),
                mean_ap: eval::mean_ap(&aps)?,
                avg_accuracy: eval::avg_accuracy(&accs)?,
                clusters,
            };
            log::info!(
                "evaluate: mAP {:.4} over {} clusters",
                report.mean_ap,
                report.n_evaluated
            );
            Ok(vec![
                main(to_json(&report)?),
                (
                    format!("{REPORTS_DIR}/evaluation.csv"),
                    eval::evaluations_to_csv(&report.clusters).into_bytes(),
                ),
            ])
        }
        Stage::Sweep => {
            let table = load.concepts()?;
            let reps: Vec<ConceptRepresentation> = load.artifact(Stage::Represent)?;
            let features = load.features()?;
            let data = TrainingData::new(&features, &table);
            let inputs = SweepInputs {
                reps: &reps,
                data: &data,
                neg_ratio: config.neg_ratio,
                params: config.svm(),
            };
            let seed = cluster_seed(config.seed);
            let sweep = SweepArtifact {
                alpha: eval::alpha_sweep(&inputs, &config.alphas, config.c_const, seed)?,
                c: eval::c_sweep(&inputs, &config.c_grid, config.alpha, seed)?,
            };
            let report = |name: &str, bytes: String| (format!("{REPORTS_DIR}/{name}"), bytes.into_bytes());
            Ok(vec![
                main(to_json(&sweep)?),
                report("sweep_alpha.csv", sweep.alpha.to_csv()),
                report("sweep_c.csv", sweep.c.to_csv()),
                report("sweep_alpha_accuracy.dat", sweep.alpha.plot_data(|p| p.avg_accuracy)),
                report("sweep_alpha_clusters.dat", sweep.alpha.plot_data(|p| p.n_clusters as f64)),
                report("sweep_c_accuracy.dat", sweep.c.plot_data(|p| p.avg_accuracy)),
                report("sweep_c_clusters.dat", sweep.c.plot_data(|p| p.n_clusters as f64)),
            ])
        }
    }
}

/// Paths of every stage artifact under `out_dir`.
pub fn artifact_paths(out_dir: &Path) -> Vec<PathBuf> {
    Stage::ALL.iter().map(|s| out_dir.join(s.artifact())).collect()
}
