//! Per-cluster classifiers and boosted per-tag ensembles.
//!
//! Every pooled cluster gets a linear classifier trained on the images of
//! its member concepts. A query tag is matched against the pool; the
//! classifiers of matching clusters form a fixed hypothesis pool that
//! discrete AdaBoost selects from and weights.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Concept, ConceptKey};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::linsvm::{self, Label, LabeledSet, LinearModel, SvmParams};
use crate::nncluster::{ClusterPool, PooledCluster};
use crate::seed;

/// Error floor used when a hypothesis classifies every sample correctly.
pub const MIN_ERROR: f64 = 1e-6;

/// Weight of a hypothesis with weighted error `error`.
pub fn beta(error: f64) -> f64 {
    let e = error.max(MIN_ERROR);
    0.5 * ((1.0 - e) / e).ln()
}

/// Query tag such as `jump` or `ride bike`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ActionTag {
    tokens: Vec<String>,
}

impl ActionTag {
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl FromStr for ActionTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let tokens: Vec<String> = s.split_whitespace().map(str::to_lowercase).collect();
        if tokens.is_empty() {
            return Err(Error::InvalidArgument("action tag is empty".into()));
        }
        Ok(ActionTag { tokens })
    }
}

impl TryFrom<String> for ActionTag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ActionTag> for String {
    fn from(tag: ActionTag) -> String {
        tag.to_string()
    }
}

impl fmt::Display for ActionTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.tokens.join(" "))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    /// Every tag token equals the concept's verb or object.
    #[default]
    Exact,
    /// Every tag token is a substring of the verb or object.
    Substring,
}

pub fn concept_matches(tag: &ActionTag, key: &ConceptKey, mode: MatchMode) -> bool {
    let hit = |token: &str, word: &str| match mode {
        MatchMode::Exact => word.eq_ignore_ascii_case(token),
        MatchMode::Substring => word.to_lowercase().contains(token),
    };
    tag.tokens
        .iter()
        .all(|t| hit(t, &key.verb) || hit(t, &key.object))
}

/// Pool positions of clusters with at least one matching member concept.
pub fn find_related_clusters(tag: &ActionTag, pool: &ClusterPool, mode: MatchMode) -> Vec<usize> {
    pool.iter()
        .enumerate()
        .filter(|(_, c)| c.members.iter().any(|k| concept_matches(tag, k, mode)))
        .map(|(i, _)| i)
        .collect()
}

/// Images available for training, grouped by concept.
#[derive(Debug, Clone)]
pub struct TrainingData<'a> {
    pub features: &'a FeatureStore,
    concepts: BTreeMap<ConceptKey, BTreeSet<String>>,
    /// Candidate negatives for tag-level training, in feature-store order.
    universe: Vec<String>,
}

impl<'a> TrainingData<'a> {
    pub fn new(features: &'a FeatureStore, table: &[Concept]) -> Self {
        TrainingData {
            features,
            concepts: table.iter().map(|c| (c.key(), c.image_ids.clone())).collect(),
            universe: features.ids().to_vec(),
        }
    }

    /// Keeps only images accepted by `keep`, e.g. one half of a split.
    pub fn restrict(&self, keep: impl Fn(&str) -> bool) -> Self {
        TrainingData {
            features: self.features,
            concepts: self
                .concepts
                .iter()
                .map(|(k, imgs)| (k.clone(), imgs.iter().filter(|i| keep(i)).cloned().collect()))
                .collect(),
            universe: self.universe.iter().filter(|i| keep(i)).cloned().collect(),
        }
    }

    pub fn images_of<'k>(&self, keys: impl IntoIterator<Item = &'k ConceptKey>) -> BTreeSet<String> {
        keys.into_iter()
            .filter_map(|k| self.concepts.get(k))
            .flatten()
            .cloned()
            .collect()
    }

    pub fn concept_keys(&self) -> impl Iterator<Item = &ConceptKey> {
        self.concepts.keys()
    }

    pub fn universe(&self) -> &[String] {
        &self.universe
    }

    /// Feature vectors for positives and negatives as one labeled set.
    pub fn labeled<'s>(
        &self,
        positives: impl IntoIterator<Item = &'s String>,
        negatives: impl IntoIterator<Item = &'s String>,
    ) -> Result<LabeledSet<'a>> {
        let mut data = LabeledSet::new();
        for id in positives {
            data.push(self.features.require(id)?, Label::Positive);
        }
        for id in negatives {
            data.push(self.features.require(id)?, Label::Negative);
        }
        Ok(data)
    }
}

/// Uniform sample of `count` items without replacement (all of them if the
/// pool is smaller), kept in pool order.
pub fn sample_without_replacement<'p, T, R: Rng>(pool: &'p [T], count: usize, rng: &mut R) -> Vec<&'p T> {
    if count >= pool.len() {
        return pool.iter().collect();
    }
    let mut picked = index::sample(rng, pool.len(), count).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| &pool[i]).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterClassifier {
    /// Position of the cluster in its pool.
    pub cluster_id: usize,
    pub model: LinearModel,
    pub train_pos_count: usize,
    pub train_neg_count: usize,
}

impl ClusterClassifier {
    pub fn negative_ratio(&self) -> f64 {
        self.train_neg_count as f64 / self.train_pos_count.max(1) as f64
    }
}

fn cluster_seed(master: u64, cluster: &PooledCluster) -> u64 {
    let members: Vec<String> = cluster.members.iter().map(|k| k.to_string()).collect();
    seed::derive(master, &format!("cluster:{}", members.join("|")))
}

/// Trains the classifier of pool cluster `cluster_id`: its concepts' images
/// against a `neg_ratio`:1 sample from the other clusters' images.
pub fn train_cluster_classifier(
    data: &TrainingData<'_>,
    pool: &ClusterPool,
    cluster_id: usize,
    neg_ratio: usize,
    params: &SvmParams,
) -> Result<ClusterClassifier> {
    let cluster = pool
        .clusters
        .get(cluster_id)
        .ok_or_else(|| Error::InvalidArgument(format!("no cluster {cluster_id} in pool")))?;
    let positives = data.images_of(&cluster.members);
    if positives.len() < 2 {
        return Err(Error::DegenerateTrainingSet(format!(
            "cluster {cluster_id} has {} images",
            positives.len()
        )));
    }
    let others: Vec<String> = data
        .images_of(pool.iter().flat_map(|c| c.members.iter()))
        .into_iter()
        .filter(|i| !positives.contains(i))
        .collect();
    let wanted = neg_ratio * positives.len();
    if others.len() < wanted {
        log::info!(
            "cluster {cluster_id}: negative pool has {} of {wanted} requested images",
            others.len()
        );
    }
    let cluster_seed = cluster_seed(params.seed, cluster);
    let mut rng = seed::rng(cluster_seed);
    let negatives = sample_without_replacement(&others, wanted, &mut rng);
    let set = data.labeled(positives.iter(), negatives.iter().copied())?;
    let model = linsvm::train(&set, &params.with_seed(cluster_seed))?;
    Ok(ClusterClassifier {
        cluster_id,
        model,
        train_pos_count: positives.len(),
        train_neg_count: negatives.len(),
    })
}

/// Classifiers for every pool cluster, trained in parallel.
pub fn train_cluster_classifiers(
    data: &TrainingData<'_>,
    pool: &ClusterPool,
    neg_ratio: usize,
    params: &SvmParams,
) -> Vec<Result<ClusterClassifier>> {
    (0..pool.len())
        .into_par_iter()
        .map(|id| train_cluster_classifier(data, pool, id, neg_ratio, params))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `Σ βᵢ·sign(marginᵢ)`.
    #[default]
    Sign,
    /// `Σ βᵢ·marginᵢ`, which breaks the ties of sign voting when ranking.
    Margin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleRound {
    pub classifier_id: usize,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub tag: ActionTag,
    pub rounds: Vec<EnsembleRound>,
    pub score_mode: ScoreMode,
}

/// One boosting round over a fixed hypothesis pool.
#[derive(Debug, Clone, PartialEq)]
pub struct BoostRound {
    /// Index into the hypothesis pool.
    pub hypothesis: usize,
    pub error: f64,
    pub beta: f64,
    /// Sample weights after reweighting, summing to 1.
    pub weights: Vec<f64>,
}

/// Discrete AdaBoost over precomputed hypothesis outputs.
///
/// `outputs[h][i]` is hypothesis `h`'s vote on sample `i`. Each round picks
/// the unused hypothesis with the smallest weighted error (lowest index on
/// ties) and stops once the best error reaches 0.5, a hypothesis is
/// perfect, or the pool is used up.
pub fn boost(outputs: &[Vec<Label>], labels: &[Label]) -> Result<Vec<BoostRound>> {
    let n = labels.len();
    if outputs.is_empty() {
        return Err(Error::Empty("weak classifier pool"));
    }
    if let Some(bad) = outputs.iter().find(|o| o.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: bad.len(),
        });
    }
    if !labels.contains(&Label::Positive) || !labels.contains(&Label::Negative) {
        return Err(Error::DegenerateTrainingSet("boosting needs both labels".into()));
    }

    let mut weights = vec![1.0 / n as f64; n];
    let mut used = vec![false; outputs.len()];
    let mut rounds = Vec::new();
    while rounds.len() < outputs.len() {
        let weighted_error = |h: usize| -> f64 {
            outputs[h]
                .iter()
                .zip(labels)
                .zip(&weights)
                .filter(|((p, y), _)| p != y)
                .map(|(_, w)| w)
                .sum()
        };
        let Some((best, error)) = (0..outputs.len())
            .filter(|&h| !used[h])
            .map(|h| (h, weighted_error(h)))
            .fold(None, |acc: Option<(usize, f64)>, (h, e)| match acc {
                Some((_, best)) if best <= e => acc,
                _ => Some((h, e)),
            })
        else {
            break;
        };
        if error >= 0.5 {
            break;
        }
        used[best] = true;
        let b = beta(error);
        for ((w, p), y) in weights.iter_mut().zip(&outputs[best]).zip(labels) {
            *w *= (-b * p.sign() * y.sign()).exp();
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        rounds.push(BoostRound {
            hypothesis: best,
            error,
            beta: b,
            weights: weights.clone(),
        });
        if error == 0.0 {
            break;
        }
    }
    Ok(rounds)
}

/// Boosts the fixed classifiers `weak` on `data` into one tag model.
pub fn train_adaboost(
    tag: &ActionTag,
    weak: &[&ClusterClassifier],
    data: &LabeledSet<'_>,
    score_mode: ScoreMode,
) -> Result<EnsembleModel> {
    let outputs = weak
        .iter()
        .map(|c| {
            data.points()
                .iter()
                .map(|x| c.model.predict(x))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let rounds = boost(&outputs, data.labels())?;
    if rounds.is_empty() {
        return Err(Error::NoUsefulWeakLearner(tag.to_string()));
    }
    Ok(EnsembleModel {
        tag: tag.clone(),
        rounds: rounds
            .into_iter()
            .map(|r| EnsembleRound {
                classifier_id: weak[r.hypothesis].cluster_id,
                beta: r.beta,
            })
            .collect(),
        score_mode,
    })
}

pub fn ensemble_score(
    model: &EnsembleModel,
    classifiers: &[ClusterClassifier],
    x: &[f64],
    mode: ScoreMode,
) -> Result<f64> {
    let mut total = 0.0;
    for round in &model.rounds {
        let weak = classifiers
            .iter()
            .find(|c| c.cluster_id == round.classifier_id)
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown classifier {}", round.classifier_id))
            })?;
        let margin = weak.model.score(x)?;
        total += round.beta
            * match mode {
                ScoreMode::Sign => Label::of_score(margin).sign(),
                ScoreMode::Margin => margin,
            };
    }
    Ok(total)
}

/// Builds and boosts the ensemble for `tag`: positives are the images of
/// every related cluster, negatives a `neg_ratio`:1 sample of the rest.
pub fn train_tag_ensemble(
    tag: &ActionTag,
    data: &TrainingData<'_>,
    pool: &ClusterPool,
    classifiers: &[ClusterClassifier],
    neg_ratio: usize,
    seed: u64,
    match_mode: MatchMode,
) -> Result<EnsembleModel> {
    let related = find_related_clusters(tag, pool, match_mode);
    let weak: Vec<&ClusterClassifier> = classifiers
        .iter()
        .filter(|c| related.contains(&c.cluster_id))
        .collect();
    if weak.is_empty() {
        return Err(Error::NoMatchingImages(tag.to_string()));
    }
    let positives = data.images_of(related.iter().flat_map(|&i| pool.clusters[i].members.iter()));
    let remainder: Vec<String> = data
        .universe()
        .iter()
        .filter(|i| !positives.contains(*i))
        .cloned()
        .collect();
    let mut rng = seed::rng(seed::derive(seed, &format!("ensemble:{tag}")));
    let negatives = sample_without_replacement(&remainder, neg_ratio * positives.len(), &mut rng);
    let set = data.labeled(positives.iter(), negatives.iter().copied())?;
    train_adaboost(tag, &weak, &set, ScoreMode::Margin)
}

/// Keyword-search baseline: one classifier trained directly on the images
/// of concepts matching `tag`.
pub fn keyword_baseline(
    tag: &ActionTag,
    data: &TrainingData<'_>,
    neg_ratio: usize,
    params: &SvmParams,
    match_mode: MatchMode,
) -> Result<LinearModel> {
    let matching: Vec<&ConceptKey> = data
        .concept_keys()
        .filter(|k| concept_matches(tag, k, match_mode))
        .collect();
    let positives = data.images_of(matching);
    if positives.is_empty() {
        return Err(Error::NoMatchingImages(tag.to_string()));
    }
    let remainder: Vec<String> = data
        .universe()
        .iter()
        .filter(|i| !positives.contains(*i))
        .cloned()
        .collect();
    let run_seed = seed::derive(params.seed, &format!("baseline:{tag}"));
    let mut rng = seed::rng(run_seed);
    let negatives = sample_without_replacement(&remainder, neg_ratio * positives.len(), &mut rng);
    let set = data.labeled(positives.iter(), negatives.iter().copied())?;
    linsvm::train(&set, &params.with_seed(run_seed))
}
