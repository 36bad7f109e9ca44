//! Visualness verification by 2-fold cross-validated average precision.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Concept, ConceptKey};
use crate::ensemble::sample_without_replacement;
use crate::error::{Error, Result};
use crate::eval::average_precision;
use crate::features::FeatureStore;
use crate::linsvm::{self, Label, LabeledSet, SvmParams};
use crate::seed;

pub const DEFAULT_GATE: f64 = 0.70;
/// Two images per fold.
pub const MIN_POSITIVES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationResult {
    pub concept: ConceptKey,
    pub fold_aps: [f64; 2],
    pub mean_ap: f64,
    pub passed: bool,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl VerificationResult {
    fn failed(concept: ConceptKey, seed: u64, reason: String) -> Self {
        VerificationResult {
            concept,
            fold_aps: [0.0, 0.0],
            mean_ap: 0.0,
            passed: false,
            seed,
            reason: Some(reason),
        }
    }
}

/// Splits a shuffled list in two halves; the odd item goes to the first.
fn halves<T>(items: &[T]) -> (&[T], &[T]) {
    items.split_at(items.len().div_ceil(2))
}

fn fold_ap(
    train: &LabeledSet<'_>,
    test: &LabeledSet<'_>,
    params: &SvmParams,
) -> Result<f64> {
    let model = linsvm::train(train, params)?;
    let preds = test
        .iter()
        .map(|(x, y)| model.score(x).map(|s| (s, y)))
        .collect::<Result<Vec<_>>>()?;
    average_precision(&preds)
}

/// Image ids of the two folds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Folds<'a> {
    pub pos_a: Vec<&'a String>,
    pub pos_b: Vec<&'a String>,
    pub neg_a: Vec<&'a String>,
    pub neg_b: Vec<&'a String>,
}

/// Shuffles the concept's images into two folds and samples as many
/// negatives from the other images, split the same way.
pub fn draw_folds<'a>(concept: &'a Concept, features: &'a FeatureStore, seed: u64) -> Result<Folds<'a>> {
    let positive_ids: Vec<&String> = concept.image_ids.iter().collect();
    let pool: Vec<&String> = features
        .ids()
        .iter()
        .filter(|id| !concept.image_ids.contains(*id))
        .collect();
    if pool.len() < positive_ids.len() {
        return Err(Error::InsufficientNegatives {
            needed: positive_ids.len(),
            available: pool.len(),
        });
    }
    let mut rng = seed::rng(seed);
    let mut negatives: Vec<&String> = sample_without_replacement(&pool, positive_ids.len(), &mut rng)
        .into_iter()
        .copied()
        .collect();
    let mut positives = positive_ids;
    positives.shuffle(&mut rng);
    negatives.shuffle(&mut rng);
    let (pos_a, pos_b) = halves(&positives);
    let (neg_a, neg_b) = halves(&negatives);
    Ok(Folds {
        pos_a: pos_a.to_vec(),
        pos_b: pos_b.to_vec(),
        neg_a: neg_a.to_vec(),
        neg_b: neg_b.to_vec(),
    })
}

/// Cross-validates `concept` against an equal number of random images
/// from outside its image set.
pub fn verify_concept(
    concept: &Concept,
    features: &FeatureStore,
    gate: f64,
    seed: u64,
    params: &SvmParams,
) -> Result<VerificationResult> {
    let key = concept.key();
    if concept.image_ids.len() < MIN_POSITIVES {
        return Ok(VerificationResult::failed(key, seed, "insufficient data".into()));
    }
    let folds = draw_folds(concept, features, seed)?;
    let fold = |pos: &[&String], neg: &[&String]| -> Result<LabeledSet<'_>> {
        let mut set = LabeledSet::new();
        for id in pos {
            set.push(features.require(id)?, Label::Positive);
        }
        for id in neg {
            set.push(features.require(id)?, Label::Negative);
        }
        Ok(set)
    };
    let fold_a = fold(&folds.pos_a, &folds.neg_a)?;
    let fold_b = fold(&folds.pos_b, &folds.neg_b)?;
    let params = params.with_seed(seed);
    let fold_aps = [fold_ap(&fold_a, &fold_b, &params)?, fold_ap(&fold_b, &fold_a, &params)?];
    let mean_ap = (fold_aps[0] + fold_aps[1]) / 2.0;
    Ok(VerificationResult {
        concept: key,
        fold_aps,
        mean_ap,
        passed: mean_ap >= gate,
        seed,
        reason: None,
    })
}

/// Per-concept seed: independent of where the concept sits in the table.
pub fn concept_seed(master: u64, key: &ConceptKey) -> u64 {
    seed::derive(master, &format!("verify:{key}"))
}

/// Verifies every concept in parallel; errors become failed results.
pub fn verify_all(
    table: &[Concept],
    features: &FeatureStore,
    gate: f64,
    seed: u64,
    params: &SvmParams,
) -> Vec<VerificationResult> {
    table
        .par_iter()
        .map(|concept| {
            let concept_seed = concept_seed(seed, &concept.key());
            verify_concept(concept, features, gate, concept_seed, params).unwrap_or_else(|e| {
                log::warn!("verification of {} failed: {e}", concept.key());
                VerificationResult::failed(concept.key(), concept_seed, e.to_string())
            })
        })
        .collect()
}
