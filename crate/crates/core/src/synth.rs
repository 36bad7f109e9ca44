//! Seeded synthetic corpora with planted concept structure.
//!
//! Each group has a visual prototype and verb/object embedding prototypes.
//! Concepts of a group share the group's verb (or, in synonym-split groups,
//! one of two verbs with near-identical embeddings) and draw their images
//! around a concept-specific perturbation of the group prototype. Nonvisual
//! concepts draw their images from the isotropic background instead.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::corpus::{ConceptKey, CorpusRecord, Dependency, Token, NO_OBJECT};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::represent::l2_normalize;
use crate::seed;

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const IMAGE_FEATURES_FILE: &str = "image_features.txt";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";
pub const CONFIG_FILE: &str = "pipeline.conf";

const SUBJECTS: &[&str] = &["man", "woman", "girl", "boy", "person", "people"];
const ANIMALS: &[(&str, &str)] = &[("dog", "runs"), ("cat", "sleeps"), ("bird", "flies"), ("horse", "grazes")];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_groups: usize,
    pub concepts_per_group: usize,
    pub images_per_concept: usize,
    pub dim_visual: usize,
    pub dim_text: usize,
    /// Per-dimension standard deviation of image noise.
    pub noise_sigma: f64,
    pub nonvisual_fraction: f64,
    pub synonym_split_fraction: f64,
    /// Norm of the random offset separating a concept's visual mode from
    /// its group prototype.
    pub concept_spread: f64,
    /// Per-dimension noise added to embedding prototypes.
    pub text_noise: f64,
    /// Images with no human-action caption.
    pub background_images: usize,
    pub sentences_per_image: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_groups: 4,
            concepts_per_group: 3,
            images_per_concept: 20,
            dim_visual: 128,
            dim_text: 32,
            noise_sigma: 0.1,
            nonvisual_fraction: 0.0,
            synonym_split_fraction: 0.0,
            concept_spread: 0.5,
            text_noise: 0.05,
            background_images: 0,
            sentences_per_image: 2,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn from_key_values(mut kv: KeyValues) -> Result<Self> {
        let d = SyntheticSpec::default();
        let spec = SyntheticSpec {
            n_groups: kv.take("n_groups", d.n_groups)?,
            concepts_per_group: kv.take("concepts_per_group", d.concepts_per_group)?,
            images_per_concept: kv.take("images_per_concept", d.images_per_concept)?,
            dim_visual: kv.take("dim_visual", d.dim_visual)?,
            dim_text: kv.take("dim_text", d.dim_text)?,
            noise_sigma: kv.take("noise_sigma", d.noise_sigma)?,
            nonvisual_fraction: kv.take("nonvisual_fraction", d.nonvisual_fraction)?,
            synonym_split_fraction: kv.take("synonym_split_fraction", d.synonym_split_fraction)?,
            concept_spread: kv.take("concept_spread", d.concept_spread)?,
            text_noise: kv.take("text_noise", d.text_noise)?,
            background_images: kv.take("background_images", d.background_images)?,
            sentences_per_image: kv.take("sentences_per_image", d.sentences_per_image)?,
            seed: kv.take("seed", d.seed)?,
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_key_values(KeyValues::load(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if [
            self.n_groups,
            self.concepts_per_group,
            self.images_per_concept,
            self.dim_visual,
            self.dim_text,
            self.sentences_per_image,
        ]
        .contains(&0)
        {
            return Err(Error::Config("synthetic sizes must be positive".into()));
        }
        for (name, f) in [
            ("nonvisual_fraction", self.nonvisual_fraction),
            ("synonym_split_fraction", self.synonym_split_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::Config(format!("{name} must be in [0, 1]")));
            }
        }
        if !(self.noise_sigma >= 0.0 && self.concept_spread >= 0.0 && self.text_noise >= 0.0) {
            return Err(Error::Config("noise levels must be non-negative".into()));
        }
        Ok(())
    }

    pub fn n_concepts(&self) -> usize {
        self.n_groups * self.concepts_per_group
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthConcept {
    pub concept: ConceptKey,
    pub group: usize,
    pub visual: bool,
    /// Uses the group's secondary verb.
    pub synonym: bool,
    pub image_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub groups: usize,
    /// Primary verb of each group, usable as a query tag.
    pub tags: Vec<String>,
    pub concepts: Vec<TruthConcept>,
}

impl GroundTruth {
    pub fn group_of(&self, key: &ConceptKey) -> Option<usize> {
        self.concepts.iter().find(|c| &c.concept == key).map(|c| c.group)
    }

    pub fn group_images(&self, group: usize) -> BTreeSet<String> {
        self.concepts
            .iter()
            .filter(|c| c.group == group)
            .flat_map(|c| c.image_ids.iter().cloned())
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub records: Vec<CorpusRecord>,
    pub features: FeatureStore,
    pub embeddings: FeatureStore,
    pub truth: GroundTruth,
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, 1.0).expect("valid normal");
    l2_normalize((0..dim).map(|_| normal.sample(rng)).collect())
}

fn jitter(rng: &mut ChaCha8Rng, base: &[f64], sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return base.to_vec();
    }
    let normal = Normal::new(0.0, sigma).expect("valid normal");
    base.iter().map(|b| b + normal.sample(rng)).collect()
}

fn background(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    jitter(rng, &vec![0.0; dim], 1.0 / (dim as f64).sqrt())
}

/// Indices `0..n` of which `round(fraction · n)` are chosen.
fn choose(rng: &mut ChaCha8Rng, n: usize, fraction: f64) -> BTreeSet<usize> {
    let k = ((fraction * n as f64).round() as usize).min(n);
    index::sample(rng, n, k).into_iter().collect()
}

fn caption(image: &str, sentence: usize, subject: &str, verb: &str, object: &str) -> CorpusRecord {
    let mut words = vec![("a", "DT"), (subject, "NN"), (verb, "VBZ")];
    let mut deps = vec![("det", 2, 1), ("nsubj", 3, 2), ("root", 0, 3)];
    if object != NO_OBJECT {
        words.extend([("a", "DT"), (object, "NN")]);
        deps.extend([("dobj", 3, 5), ("det", 5, 4)]);
    }
    CorpusRecord {
        image_id: image.to_string(),
        sentence_id: format!("{image}#{sentence}"),
        tokens: words
            .into_iter()
            .enumerate()
            .map(|(i, (w, p))| Token {
                index: i + 1,
                word: w.to_string(),
                pos: p.to_string(),
            })
            .collect(),
        deps: deps
            .into_iter()
            .map(|(r, h, d)| Dependency {
                relation: r.to_string(),
                head_index: h,
                dependent_index: d,
            })
            .collect(),
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let split_groups = choose(&mut rng, spec.n_groups, spec.synonym_split_fraction);
    let nonvisual = choose(&mut rng, spec.n_concepts(), spec.nonvisual_fraction);

    let mut features = FeatureStore::new(spec.dim_visual);
    let mut embeddings = FeatureStore::new(spec.dim_text);
    let mut records = Vec::new();
    let mut concepts = Vec::new();
    let mut tags = Vec::new();
    let mut image_counter = 0usize;
    let mut next_image = || {
        image_counter += 1;
        format!("img{image_counter:05}")
    };

    let cpg = spec.concepts_per_group;
    for g in 0..spec.n_groups {
        let mut group_rng = seed::rng(seed::derive(spec.seed, &format!("group:{g}")));
        let proto = unit_vector(&mut group_rng, spec.dim_visual);
        let verb_proto = unit_vector(&mut group_rng, spec.dim_text);
        let object_proto = unit_vector(&mut group_rng, spec.dim_text);

        let split = split_groups.contains(&g);
        let first_synonym = if split { cpg - cpg / 2 } else { cpg };
        let primary = format!("act{g}");
        let secondary = format!("syn{g}");
        embeddings.insert(&primary, &jitter(&mut group_rng, &verb_proto, spec.text_noise))?;
        if split && first_synonym < cpg {
            embeddings.insert(&secondary, &jitter(&mut group_rng, &verb_proto, spec.text_noise))?;
        }
        tags.push(primary.clone());

        for j in 0..cpg {
            let synonym = j >= first_synonym;
            let verb = if synonym { &secondary } else { &primary };
            let object = if j == 0 || j == first_synonym {
                NO_OBJECT.to_string()
            } else {
                let name = format!("obj{g}x{j}");
                embeddings.insert(&name, &jitter(&mut group_rng, &object_proto, spec.text_noise))?;
                name
            };
            let concept_index = g * cpg + j;
            let visual = !nonvisual.contains(&concept_index);
            let offset = unit_vector(&mut group_rng, spec.dim_visual);
            let mode: Vec<f64> = l2_normalize(
                proto
                    .iter()
                    .zip(&offset)
                    .map(|(p, o)| p + spec.concept_spread * o)
                    .collect(),
            );

            let mut image_ids = Vec::with_capacity(spec.images_per_concept);
            for _ in 0..spec.images_per_concept {
                let id = next_image();
                let vector = if visual {
                    jitter(&mut group_rng, &mode, spec.noise_sigma)
                } else {
                    background(&mut group_rng, spec.dim_visual)
                };
                features.insert(&id, &vector)?;
                for s in 0..spec.sentences_per_image {
                    let subject = SUBJECTS[group_rng.random_range(0..SUBJECTS.len())];
                    records.push(caption(&id, s, subject, verb, &object));
                }
                let (animal, action) = ANIMALS[group_rng.random_range(0..ANIMALS.len())];
                records.push(caption(&id, spec.sentences_per_image, animal, action, NO_OBJECT));
                image_ids.push(id);
            }
            concepts.push(TruthConcept {
                concept: ConceptKey::new(verb.clone(), object),
                group: g,
                visual,
                synonym,
                image_ids,
            });
        }
    }

    let mut bg_rng = seed::rng(seed::derive(spec.seed, "background"));
    for _ in 0..spec.background_images {
        let id = next_image();
        features.insert(&id, &background(&mut bg_rng, spec.dim_visual))?;
        let (animal, action) = ANIMALS[bg_rng.random_range(0..ANIMALS.len())];
        records.push(caption(&id, 0, animal, action, NO_OBJECT));
    }

    Ok(SyntheticData {
        records,
        features,
        embeddings,
        truth: GroundTruth {
            groups: spec.n_groups,
            tags,
            concepts,
        },
    })
}

/// Paths of the files written by [`SyntheticData::write`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub corpus: PathBuf,
    pub image_features: PathBuf,
    pub embeddings: PathBuf,
    pub ground_truth: PathBuf,
    pub config: PathBuf,
}

impl SyntheticData {
    /// Writes the corpus, features, embeddings, ground truth, and a
    /// pipeline config pointing at them (with `min_count` low enough for
    /// the planted concepts and the group tags filled in).
    pub fn write(&self, dir: &Path, spec: &SyntheticSpec) -> Result<SyntheticFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = SyntheticFiles {
            corpus: dir.join(CORPUS_FILE),
            image_features: dir.join(IMAGE_FEATURES_FILE),
            embeddings: dir.join(EMBEDDINGS_FILE),
            ground_truth: dir.join(GROUND_TRUTH_FILE),
            config: dir.join(CONFIG_FILE),
        };

        let mut corpus = Vec::new();
        for record in &self.records {
            serde_json::to_writer(&mut corpus, record)?;
            corpus.push(b'\n');
        }
        crate::pipeline::write_atomic(&files.corpus, &corpus)?;

        let mut buf = Vec::new();
        self.features.write(&mut buf).map_err(|e| Error::io(&files.image_features, e))?;
        crate::pipeline::write_atomic(&files.image_features, &buf)?;

        let mut buf = Vec::new();
        self.embeddings.write(&mut buf).map_err(|e| Error::io(&files.embeddings, e))?;
        crate::pipeline::write_atomic(&files.embeddings, &buf)?;

        let truth = serde_json::to_vec_pretty(&self.truth)?;
        crate::pipeline::write_atomic(&files.ground_truth, &truth)?;

        let evidences = spec.images_per_concept * spec.sentences_per_image;
        let mut config = Vec::new();
        writeln!(config, "corpus = {CORPUS_FILE}").ok();
        writeln!(config, "image_features = {IMAGE_FEATURES_FILE}").ok();
        writeln!(config, "embeddings = {EMBEDDINGS_FILE}").ok();
        writeln!(config, "out_dir = out").ok();
        writeln!(config, "min_count = {}", evidences.min(30)).ok();
        writeln!(config, "seed = {}", spec.seed).ok();
        writeln!(config, "tags = {}", self.truth.tags.join(", ")).ok();
        crate::pipeline::write_atomic(&files.config, &config)?;
        Ok(files)
    }
}
