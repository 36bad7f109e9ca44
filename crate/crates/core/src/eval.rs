//! Ranking metrics and the fusion-weight / compactness sweeps.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ConceptKey;
use crate::ensemble::{sample_without_replacement, TrainingData};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::linsvm::{self, Label, LabeledSet, SvmParams};
use crate::nncluster::{self, ClusterPool, ClusterRun};
use crate::represent::ConceptRepresentation;
use crate::seed;

/// Ranking average precision: the mean, over positives, of the precision
/// at each positive's rank. Scores sort descending; ties keep input order.
pub fn average_precision(preds: &[(f64, Label)]) -> Result<f64> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&a, &b| preds[b].0.total_cmp(&preds[a].0).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if preds[i].1.is_positive() {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        return Err(Error::NoPositives);
    }
    Ok(sum / hits as f64)
}

fn mean(values: &[f64], what: &'static str) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty(what));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

pub fn mean_ap(aps: &[f64]) -> Result<f64> {
    mean(aps, "AP list")
}

/// Mean accuracy over a set of classifiers.
pub fn avg_accuracy(accuracies: &[f64]) -> Result<f64> {
    mean(accuracies, "accuracy list")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Alpha,
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub avg_accuracy: f64,
    pub mean_ap: f64,
    pub n_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub axis: SweepAxis,
    pub points: Vec<SweepPoint>,
}

impl SweepReport {
    pub fn new(axis: SweepAxis, mut points: Vec<SweepPoint>) -> Self {
        points.sort_by(|a, b| a.value.total_cmp(&b.value));
        SweepReport { axis, points }
    }

    pub fn to_csv(&self) -> String {
        let axis = match self.axis {
            SweepAxis::Alpha => "alpha",
            SweepAxis::C => "c",
        };
        let mut out = format!("{axis},avg_accuracy,mean_ap,n_clusters\n");
        for p in &self.points {
            out.push_str(&format!("{},{},{},{}\n", p.value, p.avg_accuracy, p.mean_ap, p.n_clusters));
        }
        out
    }

    /// Whitespace-separated `x y` rows for one series.
    pub fn plot_data(&self, series: impl Fn(&SweepPoint) -> f64) -> String {
        self.points
            .iter()
            .map(|p| format!("{} {}\n", p.value, series(p)))
            .collect()
    }
}

/// Held-out performance of one classifier trained on half of its data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitOutcome {
    pub ap: f64,
    /// Raw accuracy on the test half; under 10:1 negatives the all-negative
    /// predictor already scores 10/11.
    pub accuracy: f64,
    pub train_pos: usize,
    pub train_neg: usize,
    pub test_pos: usize,
    pub test_neg: usize,
}

/// Splits positives and a `neg_ratio`:1 negative sample in halves, trains
/// on the first halves and scores the second.
pub fn evaluate_split(
    features: &FeatureStore,
    positives: &[&String],
    negative_pool: &[&String],
    neg_ratio: usize,
    params: &SvmParams,
) -> Result<SplitOutcome> {
    if positives.len() < 2 {
        return Err(Error::DegenerateTrainingSet(format!(
            "{} positives cannot be split",
            positives.len()
        )));
    }
    let mut rng = seed::rng(params.seed);
    let mut pos: Vec<&String> = positives.to_vec();
    let mut neg: Vec<&String> = sample_without_replacement(negative_pool, neg_ratio * pos.len(), &mut rng)
        .into_iter()
        .copied()
        .collect();
    if neg.len() < 2 {
        return Err(Error::InsufficientNegatives {
            needed: 2,
            available: neg.len(),
        });
    }
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    let (pos_train, pos_test) = pos.split_at(pos.len().div_ceil(2));
    let (neg_train, neg_test) = neg.split_at(neg.len().div_ceil(2));

    let labeled = |p: &[&String], n: &[&String]| -> Result<LabeledSet<'_>> {
        let mut set = LabeledSet::new();
        for id in p {
            set.push(features.require(id)?, Label::Positive);
        }
        for id in n {
            set.push(features.require(id)?, Label::Negative);
        }
        Ok(set)
    };
    let train = labeled(pos_train, neg_train)?;
    let test = labeled(pos_test, neg_test)?;
    let model = linsvm::train(&train, params)?;
    let preds = test
        .iter()
        .map(|(x, y)| model.score(x).map(|s| (s, y)))
        .collect::<Result<Vec<_>>>()?;
    let correct = preds
        .iter()
        .filter(|(s, y)| Label::of_score(*s) == *y)
        .count();
    Ok(SplitOutcome {
        ap: average_precision(&preds)?,
        accuracy: correct as f64 / preds.len() as f64,
        train_pos: pos_train.len(),
        train_neg: neg_train.len(),
        test_pos: pos_test.len(),
        test_neg: neg_test.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEvaluation {
    pub cluster_id: usize,
    pub members: Vec<ConceptKey>,
    #[serde(flatten)]
    pub outcome: SplitOutcome,
}

/// Half/half evaluation of every pool cluster against images of the other
/// clusters. Clusters that cannot be evaluated are logged and skipped.
pub fn evaluate_pool(
    data: &TrainingData<'_>,
    pool: &ClusterPool,
    neg_ratio: usize,
    params: &SvmParams,
) -> Vec<ClusterEvaluation> {
    let all_images = data.images_of(pool.iter().flat_map(|c| c.members.iter()));
    pool.clusters
        .par_iter()
        .enumerate()
        .filter_map(|(id, cluster)| {
            let positives = data.images_of(&cluster.members);
            let pos: Vec<&String> = positives.iter().collect();
            let others: Vec<&String> = all_images.iter().filter(|i| !positives.contains(*i)).collect();
            let names: Vec<String> = cluster.members.iter().map(|k| k.to_string()).collect();
            let split_seed = seed::derive(params.seed, &format!("split:{}", names.join("|")));
            match evaluate_split(data.features, &pos, &others, neg_ratio, &params.with_seed(split_seed)) {
                Ok(outcome) => Some(ClusterEvaluation {
                    cluster_id: id,
                    members: cluster.members.clone(),
                    outcome,
                }),
                Err(e) => {
                    log::warn!("skipping evaluation of cluster {id}: {e}");
                    None
                }
            }
        })
        .collect()
}

pub fn evaluations_to_csv(evals: &[ClusterEvaluation]) -> String {
    let mut out = String::from("cluster_id,members,ap,accuracy,train_pos,train_neg,test_pos,test_neg\n");
    for e in evals {
        let members: Vec<String> = e.members.iter().map(|k| k.to_string()).collect();
        let o = &e.outcome;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            e.cluster_id,
            members.join(";"),
            o.ap,
            o.accuracy,
            o.train_pos,
            o.train_neg,
            o.test_pos,
            o.test_neg
        ));
    }
    out
}

/// Everything a sweep needs: alpha-independent representation parts and
/// the images behind each concept.
pub struct SweepInputs<'a> {
    pub reps: &'a [ConceptRepresentation],
    pub data: &'a TrainingData<'a>,
    pub neg_ratio: usize,
    pub params: SvmParams,
}

impl SweepInputs<'_> {
    /// Clusters at (`alpha`, `c_const`) as a single-run pool.
    pub fn cluster_at(&self, alpha: f64, c_const: usize, seed: u64) -> Result<(ClusterRun, ClusterPool)> {
        let fused: Vec<ConceptRepresentation> = self.reps.iter().map(|r| r.with_alpha(alpha)).collect();
        let sim = crate::represent::similarity_matrix(&fused)?;
        let run = ClusterRun {
            alpha,
            c_const,
            seed,
            clusters: nncluster::cluster(&sim, c_const, seed),
        };
        let keys: Vec<ConceptKey> = self.reps.iter().map(|r| r.concept.clone()).collect();
        let pool = nncluster::merge_pools(std::slice::from_ref(&run), &keys)?;
        Ok((run, pool))
    }

    fn point(&self, value: f64, alpha: f64, c_const: usize, seed: u64) -> Result<SweepPoint> {
        let (run, pool) = self.cluster_at(alpha, c_const, seed)?;
        let evals = evaluate_pool(self.data, &pool, self.neg_ratio, &self.params);
        let accuracies: Vec<f64> = evals.iter().map(|e| e.outcome.accuracy).collect();
        let aps: Vec<f64> = evals.iter().map(|e| e.outcome.ap).collect();
        Ok(SweepPoint {
            value,
            avg_accuracy: avg_accuracy(&accuracies)?,
            mean_ap: mean_ap(&aps)?,
            n_clusters: run.clusters.len(),
        })
    }
}

/// Average held-out accuracy and cluster count per fusion weight.
pub fn alpha_sweep(inputs: &SweepInputs<'_>, alphas: &[f64], c_const: usize, seed: u64) -> Result<SweepReport> {
    let points = alphas
        .par_iter()
        .map(|&a| {
            inputs
                .point(a, a, c_const, seed)
                .map_err(|e| e.context(format!("alpha = {a}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport::new(SweepAxis::Alpha, points))
}

/// Average held-out accuracy and cluster count per compactness constant.
pub fn c_sweep(inputs: &SweepInputs<'_>, cs: &[usize], alpha: f64, seed: u64) -> Result<SweepReport> {
    let points = cs
        .par_iter()
        .map(|&c| {
            inputs
                .point(c as f64, alpha, c, seed)
                .map_err(|e| e.context(format!("C = {c}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport::new(SweepAxis::C, points))
}

/// Pairwise clustering F1 of `clusters` against reference labels: a pair
/// of items is positive when both share a cluster (resp. a label).
pub fn pairwise_f1(clusters: &[Vec<usize>], truth: &[usize]) -> f64 {
    let n = truth.len();
    let mut assigned = vec![usize::MAX; n];
    for (c, members) in clusters.iter().enumerate() {
        for &m in members {
            assigned[m] = c;
        }
    }
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);
    for i in 0..n {
        for j in i + 1..n {
            let same_cluster = assigned[i] == assigned[j] && assigned[i] != usize::MAX;
            match (same_cluster, truth[i] == truth[j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fneg += 1,
                _ => {}
            }
        }
    }
    if tp == 0 {
        return 0.0;
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fneg) as f64;
    2.0 * precision * recall / (precision + recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use Label::{Negative as N, Positive as P};

    /// Independent AP: ranks come from pairwise comparisons, no sorting.
    fn oracle_ap(preds: &[(f64, Label)]) -> f64 {
        let beats = |j: usize, i: usize| preds[j].0 > preds[i].0 || (preds[j].0 == preds[i].0 && j < i);
        let mut total = 0.0;
        let mut positives = 0;
        for i in 0..preds.len() {
            if preds[i].1 != P {
                continue;
            }
            positives += 1;
            let rank = 1 + (0..preds.len()).filter(|&j| j != i && beats(j, i)).count();
            let above = 1 + (0..preds.len()).filter(|&j| j != i && beats(j, i) && preds[j].1 == P).count();
            total += above as f64 / rank as f64;
        }
        total / positives as f64
    }

    #[test]
    fn worked_examples() {
        let ap = average_precision(&[(3.0, P), (2.0, N), (1.0, P)]).unwrap();
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(average_precision(&[(0.9, P), (0.8, P), (0.1, N), (0.0, N)]).unwrap(), 1.0);
        assert!(matches!(average_precision(&[(1.0, N)]), Err(Error::NoPositives)));
        assert!(average_precision(&[]).is_err());
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(average_precision(&[(1.0, P), (1.0, N)]).unwrap(), 1.0);
        assert_eq!(average_precision(&[(1.0, N), (1.0, P)]).unwrap(), 0.5);
    }

    #[test]
    fn means() {
        assert_eq!(mean_ap(&[0.5, 1.0]).unwrap(), 0.75);
        assert_eq!(avg_accuracy(&[0.3]).unwrap(), 0.3);
        assert!(mean_ap(&[]).is_err());
        assert!(avg_accuracy(&[]).is_err());
    }

    #[test]
    fn sweep_report_sorts_and_formats() {
        let pt = |v: f64| SweepPoint { value: v, avg_accuracy: 0.5, mean_ap: 0.25, n_clusters: 3 };
        let report = SweepReport::new(SweepAxis::Alpha, vec![pt(1.0), pt(0.0), pt(0.6)]);
        let values: Vec<f64> = report.points.iter().map(|p| p.value).collect();
        assert_eq!(values, [0.0, 0.6, 1.0]);
        assert_eq!(report.to_csv().lines().nth(1), Some("0,0.5,0.25,3"));
        assert_eq!(report.plot_data(|p| p.n_clusters as f64).lines().last(), Some("1 3"));
    }

    fn arb_preds() -> impl Strategy<Value = Vec<(f64, Label)>> {
        prop::collection::vec((0u8..5, any::<bool>()), 1..9).prop_filter_map("needs a positive", |v| {
            let preds: Vec<(f64, Label)> =
                v.into_iter().map(|(s, pos)| (s as f64 / 4.0, if pos { P } else { N })).collect();
            preds.iter().any(|p| p.1 == P).then_some(preds)
        })
    }

    proptest! {
        #[test]
        fn matches_oracle(preds in arb_preds()) {
            let ap = average_precision(&preds).unwrap();
            prop_assert!((ap - oracle_ap(&preds)).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&ap));
        }

        #[test]
        fn monotone_transform_invariance(preds in arb_preds()) {
            let moved: Vec<(f64, Label)> = preds.iter().map(|&(s, l)| ((3.0 * s).exp() - 7.0, l)).collect();
            prop_assert_eq!(average_precision(&preds).unwrap(), average_precision(&moved).unwrap());
        }

        #[test]
        fn mean_is_permutation_invariant(mut v in prop::collection::vec(0.0f64..1.0, 1..20)) {
            let a = mean_ap(&v).unwrap();
            v.reverse();
            prop_assert!((a - mean_ap(&v).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn pairwise_f1_counts() {
        assert_eq!(pairwise_f1(&[vec![0, 1], vec![2, 3]], &[0, 0, 1, 1]), 1.0);
        // One merged cluster: 2 of 6 predicted pairs are right, recall 1.
        let f1 = pairwise_f1(&[vec![0, 1, 2, 3]], &[0, 0, 1, 1]);
        assert!((f1 - 2.0 * (1.0 / 3.0) / (1.0 / 3.0 + 1.0)).abs() < 1e-12);
        assert_eq!(pairwise_f1(&[vec![0], vec![1]], &[0, 0]), 0.0);
    }

    #[test]
    fn split_evaluation_halves_and_scores() {
        let mut store = FeatureStore::new(2);
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for i in 0..6 {
            store.insert(format!("p{i}"), &[1.0 + 0.1 * i as f64, 0.0]).unwrap();
            pos.push(format!("p{i}"));
        }
        for i in 0..70 {
            store.insert(format!("n{i}"), &[-1.0, 0.05 * i as f64]).unwrap();
            neg.push(format!("n{i}"));
        }
        let pos_refs: Vec<&String> = pos.iter().collect();
        let neg_refs: Vec<&String> = neg.iter().collect();
        let out = evaluate_split(&store, &pos_refs, &neg_refs, 10, &SvmParams::default()).unwrap();
        assert_eq!((out.train_pos, out.test_pos), (3, 3));
        assert_eq!((out.train_neg, out.test_neg), (30, 30));
        assert_eq!(out.ap, 1.0);
        assert_eq!(out.accuracy, 1.0);
        assert!(evaluate_split(&store, &pos_refs[..1], &neg_refs, 10, &SvmParams::default()).is_err());
        assert!(evaluate_split(&store, &pos_refs, &neg_refs[..1], 10, &SvmParams::default()).is_err());
    }
}
