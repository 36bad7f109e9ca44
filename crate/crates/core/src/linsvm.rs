//! L2-regularized hinge-loss linear SVM trained by dual coordinate descent.
//!
//! The bias is learned as the weight of an augmented constant feature with
//! value 1, so it is regularized together with the weights. The primal is
//!
//! ```text
//! min_w  ½‖w‖² + C · Σᵢ max(0, 1 − yᵢ·(w·xᵢ + b))
//! ```
//!
//! and each epoch sweeps the dual variables in a seeded random order,
//! clipping every coordinate step to the box `[0, C]`.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::represent::dot;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "+1")]
    Positive,
    #[serde(rename = "-1")]
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    /// Class of a real score; zero counts as positive.
    pub fn of_score(score: f64) -> Label {
        if score >= 0.0 {
            Label::Positive
        } else {
            Label::Negative
        }
    }

    pub fn flip(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }

    pub fn is_positive(self) -> bool {
        self == Label::Positive
    }
}

/// Borrowed training points with their labels.
#[derive(Debug, Clone, Default)]
pub struct LabeledSet<'a> {
    points: Vec<&'a [f64]>,
    labels: Vec<Label>,
}

impl<'a> LabeledSet<'a> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: &'a [f64], y: Label) {
        self.points.push(x);
        self.labels.push(y);
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[&'a [f64]] {
        &self.points
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [f64], Label)> + '_ {
        self.points.iter().copied().zip(self.labels.iter().copied())
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// The same points with every label negated.
    pub fn flipped(&self) -> Self {
        LabeledSet {
            points: self.points.clone(),
            labels: self.labels.iter().map(|l| l.flip()).collect(),
        }
    }

    fn validate(&self) -> Result<usize> {
        let dim = self
            .points
            .first()
            .map(|p| p.len())
            .ok_or_else(|| Error::DegenerateTrainingSet("no training points".into()))?;
        if let Some(bad) = self.points.iter().find(|p| p.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: bad.len(),
            });
        }
        if self.count(Label::Positive) == 0 || self.count(Label::Negative) == 0 {
            return Err(Error::DegenerateTrainingSet(
                "training data must contain both labels".into(),
            ));
        }
        Ok(dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c_reg: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c_reg: 1.0,
            tol: 1e-3,
            max_iter: 1000,
            seed: 0,
        }
    }
}

impl SvmParams {
    pub fn with_seed(self, seed: u64) -> Self {
        SvmParams { seed, ..self }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub iterations_run: usize,
    pub final_objective: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub c_reg: f64,
    pub meta: ModelMeta,
}

impl LinearModel {
    /// A fixed hyperplane, e.g. a hand-built stump.
    pub fn from_parts(weights: Vec<f64>, bias: f64) -> Self {
        LinearModel {
            weights,
            bias,
            c_reg: 0.0,
            meta: ModelMeta {
                iterations_run: 0,
                final_objective: 0.0,
                converged: true,
            },
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// Signed margin `w·x + b`.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.weights.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weights.len(),
                found: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    pub fn predict(&self, x: &[f64]) -> Result<Label> {
        self.score(x).map(Label::of_score)
    }

    pub fn accuracy(&self, data: &LabeledSet<'_>) -> Result<f64> {
        let mut correct = 0usize;
        for (x, y) in data.iter() {
            if self.predict(x)? == y {
                correct += 1;
            }
        }
        Ok(correct as f64 / data.len().max(1) as f64)
    }
}

/// Objective values at the end of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub primal: f64,
    pub dual: f64,
    pub max_violation: f64,
}

/// Primal objective of `(weights, bias)` with the bias regularized.
pub fn primal_objective(weights: &[f64], bias: f64, c_reg: f64, data: &LabeledSet<'_>) -> f64 {
    let loss: f64 = data
        .iter()
        .map(|(x, y)| (1.0 - y.sign() * (dot(weights, x) + bias)).max(0.0))
        .sum();
    0.5 * (dot(weights, weights) + bias * bias) + c_reg * loss
}

pub fn train(data: &LabeledSet<'_>, params: &SvmParams) -> Result<LinearModel> {
    solve(data, params, false).map(|(model, _)| model)
}

/// Like [`train`], also returning per-epoch primal/dual objectives.
pub fn train_traced(data: &LabeledSet<'_>, params: &SvmParams) -> Result<(LinearModel, Vec<EpochStats>)> {
    solve(data, params, true)
}

fn solve(data: &LabeledSet<'_>, params: &SvmParams, trace: bool) -> Result<(LinearModel, Vec<EpochStats>)> {
    if params.c_reg.is_nan() || params.c_reg <= 0.0 || params.tol.is_nan() || params.tol <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "c_reg and tol must be positive, got {} and {}",
            params.c_reg, params.tol
        )));
    }
    let dim = data.validate()?;
    let n = data.len();
    let upper = params.c_reg;

    let ys: Vec<f64> = data.labels.iter().map(|l| l.sign()).collect();
    // Diagonal of the augmented Gram matrix: ‖xᵢ‖² + 1.
    let q_diag: Vec<f64> = data.points.iter().map(|x| dot(x, x) + 1.0).collect();
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; dim];
    let mut b = 0.0;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seed::rng(params.seed);
    let mut history = Vec::new();
    let mut epochs = 0;
    let mut converged = false;

    while epochs < params.max_iter {
        order.shuffle(&mut rng);
        let mut max_violation = 0.0f64;
        for &i in &order {
            let x = data.points[i];
            let y = ys[i];
            let grad = y * (dot(&w, x) + b) - 1.0;
            let projected = if alpha[i] <= 0.0 {
                grad.min(0.0)
            } else if alpha[i] >= upper {
                grad.max(0.0)
            } else {
                grad
            };
            max_violation = max_violation.max(projected.abs());
            if projected != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - grad / q_diag[i]).clamp(0.0, upper);
                let step = (alpha[i] - old) * y;
                if step != 0.0 {
                    w.iter_mut().zip(x).for_each(|(wj, xj)| *wj += step * xj);
                    b += step;
                }
            }
        }
        epochs += 1;
        if trace {
            let primal = primal_objective(&w, b, params.c_reg, data);
            let dual = alpha.iter().sum::<f64>() - 0.5 * (dot(&w, &w) + b * b);
            history.push(EpochStats {
                epoch: epochs,
                primal,
                dual,
                max_violation,
            });
        }
        if max_violation < params.tol {
            converged = true;
            break;
        }
    }

    let final_objective = primal_objective(&w, b, params.c_reg, data);
    Ok((
        LinearModel {
            weights: w,
            bias: b,
            c_reg: params.c_reg,
            meta: ModelMeta {
                iterations_run: epochs,
                final_objective,
                converged,
            },
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set<'a>(points: &'a [Vec<f64>], labels: &[Label]) -> LabeledSet<'a> {
        let mut data = LabeledSet::new();
        for (p, &l) in points.iter().zip(labels) {
            data.push(p, l);
        }
        data
    }

    use Label::{Negative as N, Positive as P};

    #[test]
    fn separable_pair() {
        let pts = vec![vec![1.0, 0.0], vec![-1.0, 0.0]];
        let data = set(&pts, &[P, N]);
        let model = train(&data, &SvmParams::default()).unwrap();
        assert!(model.score(&[1.0, 0.0]).unwrap() > 0.0);
        assert!(model.score(&[-1.0, 0.0]).unwrap() < 0.0);
        assert_eq!(model.accuracy(&data).unwrap(), 1.0);
        assert!(model.meta.converged);
        assert!(model.meta.final_objective >= 0.0);
    }

    #[test]
    fn xor_cannot_be_fit() {
        let pts = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let data = set(&pts, &[P, P, N, N]);
        let model = train(&data, &SvmParams::default()).unwrap();
        assert!(model.accuracy(&data).unwrap() <= 0.75);
    }

    #[test]
    fn scoring_rules() {
        let m = LinearModel::from_parts(vec![1.0, 0.0], 0.0);
        assert_eq!(m.score(&[3.0, 0.0]).unwrap(), 3.0);
        let zero = LinearModel::from_parts(vec![0.0, 0.0], 0.0);
        assert_eq!(zero.score(&[5.0, -2.0]).unwrap(), 0.0);
        assert_eq!(zero.predict(&[5.0, -2.0]).unwrap(), P);
        assert!(matches!(m.score(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn rejects_degenerate_input() {
        let pts = vec![vec![1.0], vec![2.0]];
        let data = set(&pts, &[P, P]);
        assert!(matches!(
            train(&data, &SvmParams::default()),
            Err(Error::DegenerateTrainingSet(_))
        ));
        let both = set(&pts, &[P, N]);
        let bad = SvmParams {
            c_reg: 0.0,
            ..SvmParams::default()
        };
        assert!(train(&both, &bad).is_err());
        let ragged = vec![vec![1.0], vec![2.0, 3.0]];
        assert!(train(&set(&ragged, &[P, N]), &SvmParams::default()).is_err());
    }

    #[test]
    fn weak_duality_holds_every_epoch() {
        let pts: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![t.sin() + if i % 2 == 0 { 0.3 } else { -0.3 }, t.cos()]
            })
            .collect();
        let labels: Vec<Label> = (0..30).map(|i| if i % 2 == 0 { P } else { N }).collect();
        let data = set(&pts, &labels);
        let (_, trace) = train_traced(&data, &SvmParams::default()).unwrap();
        assert!(!trace.is_empty());
        for stats in trace {
            assert!(stats.dual <= stats.primal + 1e-9, "{stats:?}");
        }
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let pts: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64).sin(), (i as f64 * 0.5).cos()]).collect();
        let labels: Vec<Label> = (0..20).map(|i| if i < 10 { P } else { N }).collect();
        let data = set(&pts, &labels);
        let params = SvmParams::default().with_seed(42);
        assert_eq!(train(&data, &params).unwrap(), train(&data, &params).unwrap());
    }

    #[test]
    fn model_json_shape() {
        let m = LinearModel::from_parts(vec![1.0], -0.5);
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        assert_eq!(v["weights"][0], 1.0);
        assert_eq!(v["bias"], -0.5);
        assert!(v["meta"]["iterations_run"].is_u64());
    }
}
