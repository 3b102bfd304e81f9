use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Task};
use super::tree::{grow_tree, LeafValue, Node, TreeParams};
use super::{mix_seed, ForestError};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// `None` picks `p/3` (regression) or `sqrt(p)` (classification), at least 1.
    pub mtry: Option<usize>,
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            mtry: None,
            max_depth: 12,
            min_samples_leaf: 2,
            bootstrap: true,
            seed: 0,
        }
    }
}

impl ForestParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn resolved_mtry(&self, task: Task, p: usize) -> usize {
        self.mtry.unwrap_or(match task {
            Task::Regression => p / 3,
            Task::Classification => (p as f64).sqrt().floor() as usize,
        })
        .max(1)
    }

    fn validate(&self, task: Task, p: usize) -> Result<TreeParams, ForestError> {
        if self.n_trees == 0 {
            return Err(ForestError::InvalidParams("n_trees must be positive".into()));
        }
        if self.max_depth == 0 || self.min_samples_leaf == 0 {
            return Err(ForestError::InvalidParams(
                "max_depth and min_samples_leaf must be positive".into(),
            ));
        }
        let mtry = self.resolved_mtry(task, p);
        if mtry > p {
            return Err(ForestError::InvalidParams(format!("mtry {mtry} exceeds {p} features")));
        }
        Ok(TreeParams {
            mtry,
            max_depth: self.max_depth,
            min_samples_leaf: self.min_samples_leaf,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    format_version: u32,
    task: Task,
    params: ForestParams,
    feature_names: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    labels: Vec<String>,
    training_seed: u64,
    trees: Vec<Node>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prediction {
    Value(f64),
    Class {
        label: String,
        index: usize,
        probabilities: Vec<f64>,
    },
}

pub fn train_forest(data: &Dataset, params: &ForestParams) -> Result<Forest, ForestError> {
    if data.is_empty() {
        return Err(ForestError::EmptyDataset);
    }
    let task = data.task();
    let tree_params = params.validate(task, data.n_features())?;
    let mut params = *params;
    params.mtry = Some(tree_params.mtry);
    let n = data.len();
    let build = |i: usize| -> Result<Node, ForestError> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(params.seed, i as u64));
        let rows: Vec<usize> = if params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        grow_tree(data, &rows, &tree_params, &mut rng)
    };
    #[cfg(feature = "parallel")]
    let trees = {
        use rayon::prelude::*;
        (0..params.n_trees)
            .into_par_iter()
            .map(build)
            .collect::<Result<Vec<_>, _>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let trees = (0..params.n_trees).map(build).collect::<Result<Vec<_>, _>>()?;
    Ok(Forest {
        format_version: MODEL_FORMAT_VERSION,
        task,
        params,
        feature_names: data.feature_names().to_vec(),
        labels: data.labels().to_vec(),
        training_seed: params.seed,
        trees,
    })
}

impl Forest {
    /// Assembles a forest from already-built trees.
    pub fn from_trees(
        task: Task,
        trees: Vec<Node>,
        params: ForestParams,
        feature_names: Vec<String>,
        labels: Vec<String>,
    ) -> Result<Self, ForestError> {
        let forest = Forest {
            format_version: MODEL_FORMAT_VERSION,
            task,
            params,
            feature_names,
            labels,
            training_seed: params.seed,
            trees,
        };
        forest.check()?;
        Ok(forest)
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn trees(&self) -> &[Node] {
        &self.trees
    }

    pub fn params(&self) -> &ForestParams {
        &self.params
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn training_seed(&self) -> u64 {
        self.training_seed
    }

    fn check_input(&self, x: &[f64]) -> Result<(), ForestError> {
        if x.len() != self.feature_names.len() {
            return Err(ForestError::DimensionMismatch {
                expected: self.feature_names.len(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ForestError::NonFiniteInput);
        }
        Ok(())
    }

    /// Mean of the tree outputs (regression) or averaged class probabilities
    /// with the first label winning ties (classification).
    pub fn predict(&self, x: &[f64]) -> Result<Prediction, ForestError> {
        self.check_input(x)?;
        match self.task {
            Task::Regression => Ok(Prediction::Value(self.mean_of_trees(x))),
            Task::Classification => {
                let probabilities = self.average_distribution(x);
                let mut index = 0;
                for (i, p) in probabilities.iter().enumerate() {
                    if *p > probabilities[index] {
                        index = i;
                    }
                }
                Ok(Prediction::Class {
                    label: self.labels[index].clone(),
                    index,
                    probabilities,
                })
            }
        }
    }

    pub fn predict_value(&self, x: &[f64]) -> Result<f64, ForestError> {
        if self.task != Task::Regression {
            return Err(ForestError::TaskMismatch);
        }
        self.check_input(x)?;
        Ok(self.mean_of_trees(x))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ForestError> {
        if self.task != Task::Classification {
            return Err(ForestError::TaskMismatch);
        }
        self.check_input(x)?;
        Ok(self.average_distribution(x))
    }

    fn mean_of_trees(&self, x: &[f64]) -> f64 {
        let sum: f64 = self
            .trees
            .iter()
            .map(|t| match t.leaf_for(x) {
                LeafValue::Mean(m) => *m,
                LeafValue::Distribution(_) => 0.0,
            })
            .sum();
        sum / self.trees.len() as f64
    }

    fn average_distribution(&self, x: &[f64]) -> Vec<f64> {
        let mut acc = vec![0.0; self.labels.len()];
        for tree in &self.trees {
            if let LeafValue::Distribution(d) = tree.leaf_for(x) {
                for (a, p) in acc.iter_mut().zip(d) {
                    *a += p;
                }
            }
        }
        let n = self.trees.len() as f64;
        acc.into_iter().map(|a| a / n).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("forest serializes")
    }

    pub fn from_json(json: &str) -> Result<Self, ForestError> {
        let forest: Forest =
            serde_json::from_str(json).map_err(|e| ForestError::Model(e.to_string()))?;
        forest.check()?;
        Ok(forest)
    }

    fn check(&self) -> Result<(), ForestError> {
        if self.format_version != MODEL_FORMAT_VERSION {
            return Err(ForestError::Model(format!(
                "unsupported format_version {}",
                self.format_version
            )));
        }
        if self.trees.is_empty() {
            return Err(ForestError::Model("no trees".into()));
        }
        let p = self.feature_names.len();
        for tree in &self.trees {
            if tree.max_feature().is_some_and(|f| f >= p) {
                return Err(ForestError::Model("split on a feature outside the schema".into()));
            }
            if !leaves_match(tree, self.task, self.labels.len()) {
                return Err(ForestError::Model("leaf values do not match the task".into()));
            }
        }
        if self.task == Task::Classification && self.labels.is_empty() {
            return Err(ForestError::Model("classification model without labels".into()));
        }
        Ok(())
    }
}

fn leaves_match(node: &Node, task: Task, n_labels: usize) -> bool {
    match node {
        Node::Split { left, right, .. } => {
            leaves_match(left, task, n_labels) && leaves_match(right, task, n_labels)
        }
        Node::Leaf { value, .. } => match (task, value) {
            (Task::Regression, LeafValue::Mean(m)) => m.is_finite(),
            (Task::Classification, LeafValue::Distribution(d)) => d.len() == n_labels,
            _ => false,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationMetrics {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Metrics {
    Regression(RegressionMetrics),
    Classification(ClassificationMetrics),
}

impl RegressionMetrics {
    /// MAE, RMSE and R² (against the target mean; with zero target variance
    /// R² is 1 for a perfect fit and 0 otherwise).
    pub fn compute(predictions: &[f64], targets: &[f64]) -> Self {
        let n = targets.len();
        let nf = n as f64;
        let mean = targets.iter().sum::<f64>() / nf;
        let (mut abs, mut sse, mut sst) = (0.0, 0.0, 0.0);
        for (p, t) in predictions.iter().zip(targets) {
            abs += (p - t).abs();
            sse += (p - t).powi(2);
            sst += (t - mean).powi(2);
        }
        let r2 = if sst == 0.0 {
            if sse == 0.0 {
                1.0
            } else {
                0.0
            }
        } else {
            1.0 - sse / sst
        };
        Self {
            mae: abs / nf,
            rmse: (sse / nf).sqrt(),
            r2,
            n,
        }
    }
}

impl ClassificationMetrics {
    /// Precision with no predictions of a class, and recall with no members,
    /// are reported as 0.
    pub fn compute(predicted: &[usize], actual: &[usize], labels: &[String]) -> Self {
        let n = actual.len();
        let correct = predicted.iter().zip(actual).filter(|(p, a)| p == a).count();
        let per_class = labels
            .iter()
            .enumerate()
            .map(|(k, label)| {
                let tp = predicted.iter().zip(actual).filter(|(p, a)| **p == k && **a == k).count();
                let predicted_k = predicted.iter().filter(|p| **p == k).count();
                let support = actual.iter().filter(|a| **a == k).count();
                let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
                ClassMetrics {
                    label: label.clone(),
                    precision: ratio(tp, predicted_k),
                    recall: ratio(tp, support),
                    support,
                }
            })
            .collect();
        Self {
            accuracy: correct as f64 / n as f64,
            per_class,
            n,
        }
    }

    pub fn class(&self, label: &str) -> Option<&ClassMetrics> {
        self.per_class.iter().find(|c| c.label == label)
    }
}

pub fn evaluate(forest: &Forest, test: &Dataset) -> Result<Metrics, ForestError> {
    if test.is_empty() {
        return Err(ForestError::EmptyTestSet);
    }
    if test.task() != forest.task() {
        return Err(ForestError::TaskMismatch);
    }
    match test.task() {
        Task::Regression => {
            let predictions = test
                .features()
                .iter()
                .map(|x| forest.predict_value(x))
                .collect::<Result<Vec<_>, _>>()?;
            let targets = test.regression_targets().unwrap_or_default();
            Ok(Metrics::Regression(RegressionMetrics::compute(&predictions, targets)))
        }
        Task::Classification => {
            let predicted = test
                .features()
                .iter()
                .map(|x| match forest.predict(x)? {
                    Prediction::Class { index, .. } => Ok(index),
                    Prediction::Value(_) => Err(ForestError::TaskMismatch),
                })
                .collect::<Result<Vec<_>, ForestError>>()?;
            let actual = test.class_targets().unwrap_or_default();
            Ok(Metrics::Classification(ClassificationMetrics::compute(
                &predicted,
                actual,
                forest.labels(),
            )))
        }
    }
}

/// Total impurity decrease per feature, normalized to sum to 1 (all zeros
/// when no split removed any impurity). Returned in feature order.
pub fn feature_importance(forest: &Forest) -> Vec<(String, f64)> {
    let mut totals = vec![0.0; forest.feature_names().len()];
    for tree in forest.trees() {
        let root = tree.samples().max(1) as f64;
        tree.for_each_split(&mut |f, _, gain, _| totals[f] += gain / root);
    }
    let sum: f64 = totals.iter().sum();
    if sum > 0.0 {
        for t in totals.iter_mut() {
            *t /= sum;
        }
    }
    forest
        .feature_names()
        .iter()
        .cloned()
        .zip(totals)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::TreeParams;

    fn linear(n: usize) -> Dataset {
        let features: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![i as f64, ((i * 7) % 11) as f64, ((i * 3) % 5) as f64])
            .collect();
        let targets = features.iter().map(|r| 2.0 * r[0] + r[1]).collect();
        Dataset::regression(vec!["a".into(), "b".into(), "c".into()], features, targets).unwrap()
    }

    fn leaf(v: f64) -> Node {
        Node::Leaf {
            value: LeafValue::Mean(v),
            samples: 1,
        }
    }

    #[test]
    fn regression_prediction_is_tree_mean() {
        let f = Forest::from_trees(
            Task::Regression,
            vec![leaf(1.0), leaf(2.0), leaf(6.0)],
            ForestParams::default(),
            vec!["x".into()],
            vec![],
        )
        .unwrap();
        assert_eq!(f.predict(&[0.0]).unwrap(), Prediction::Value(3.0));
        assert_eq!(
            f.predict(&[0.0, 1.0]),
            Err(ForestError::DimensionMismatch { expected: 1, got: 2 })
        );
        assert_eq!(f.predict(&[f64::NAN]), Err(ForestError::NonFiniteInput));
    }

    #[test]
    fn classification_tie_goes_to_first_label() {
        let dist = |a: f64, b: f64| Node::Leaf {
            value: LeafValue::Distribution(vec![a, b]),
            samples: 2,
        };
        let f = Forest::from_trees(
            Task::Classification,
            vec![dist(1.0, 0.0), dist(0.0, 1.0)],
            ForestParams::default(),
            vec!["x".into()],
            vec!["low".into(), "high".into()],
        )
        .unwrap();
        match f.predict(&[0.0]).unwrap() {
            Prediction::Class { label, index, probabilities } => {
                assert_eq!((label.as_str(), index), ("low", 0));
                assert_eq!(probabilities, vec![0.5, 0.5]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_unbootstrapped_tree_equals_cart() {
        let data = linear(40);
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            mtry: Some(3),
            ..ForestParams::with_seed(3)
        };
        let forest = train_forest(&data, &params).unwrap();
        let rows: Vec<usize> = (0..data.len()).collect();
        let tree_params = TreeParams {
            mtry: 3,
            max_depth: 12,
            min_samples_leaf: 2,
        };
        let tree = crate::forest::train_tree(&data, &rows, &tree_params, mix_seed(3, 0)).unwrap();
        for x in [[0.0, 0.0, 0.0], [13.5, 4.0, 1.0], [39.0, 10.0, 4.0]] {
            let LeafValue::Mean(m) = tree.leaf_for(&x) else { panic!() };
            assert_eq!(forest.predict_value(&x).unwrap(), *m);
        }
    }

    #[test]
    fn training_is_deterministic_and_model_roundtrips() {
        let data = linear(60);
        let params = ForestParams {
            n_trees: 15,
            ..ForestParams::with_seed(11)
        };
        let a = train_forest(&data, &params).unwrap();
        let b = train_forest(&data, &params).unwrap();
        assert_eq!(a, b);
        let loaded = Forest::from_json(&a.to_json()).unwrap();
        for i in 0..50 {
            let x = [i as f64 * 1.3, (i % 9) as f64 + 0.25, (i % 4) as f64];
            assert_eq!(
                a.predict_value(&x).unwrap().to_bits(),
                loaded.predict_value(&x).unwrap().to_bits()
            );
        }
        let json: serde_json::Value = serde_json::from_str(&a.to_json()).unwrap();
        assert_eq!(json["format_version"], 1);
        assert_eq!(json["task"], "regression");
        assert_eq!(json["params"]["mtry"], 1);
        assert_eq!(json["trees"].as_array().unwrap().len(), 15);
    }

    #[test]
    fn constant_targets_predict_exactly() {
        let features: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let data = Dataset::regression(vec!["a".into(), "b".into()], features, vec![3.5; 30]).unwrap();
        let f = train_forest(&data, &ForestParams::with_seed(1)).unwrap();
        for x in [[0.0, 0.0], [100.0, -5.0], [12.5, 3.0]] {
            assert_eq!(f.predict_value(&x).unwrap(), 3.5);
        }
        assert!(feature_importance(&f).iter().all(|(_, v)| *v == 0.0));
    }

    #[test]
    fn importance_of_single_split() {
        let f = Forest::from_trees(
            Task::Regression,
            vec![Node::Split {
                feature: 0,
                threshold: 1.0,
                gain: 4.0,
                samples: 4,
                left: Box::new(leaf(0.0)),
                right: Box::new(leaf(2.0)),
            }],
            ForestParams::default(),
            vec!["f0".into(), "f1".into()],
            vec![],
        )
        .unwrap();
        assert_eq!(
            feature_importance(&f),
            vec![("f0".to_string(), 1.0), ("f1".to_string(), 0.0)]
        );
    }

    #[test]
    fn metrics_definitions() {
        let m = RegressionMetrics::compute(&[1.0, 3.0], &[2.0, 2.0]);
        assert_eq!((m.mae, m.rmse, m.r2), (1.0, 1.0, 0.0));
        let perfect = RegressionMetrics::compute(&[1.0, 3.0], &[1.0, 3.0]);
        assert_eq!((perfect.mae, perfect.rmse, perfect.r2), (0.0, 0.0, 1.0));
        let at_mean = RegressionMetrics::compute(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]);
        assert_eq!(at_mean.r2, 0.0);
        let c = ClassificationMetrics::compute(&[0, 1, 1, 1], &[0, 1, 0, 1], &["n".into(), "p".into()]);
        assert_eq!(c.accuracy, 0.75);
        assert_eq!(c.class("p").unwrap().precision, 2.0 / 3.0);
        assert_eq!(c.class("p").unwrap().recall, 1.0);
        assert_eq!(c.class("n").unwrap().recall, 0.5);
    }

    #[test]
    fn evaluate_errors() {
        let data = linear(20);
        let f = train_forest(&data, &ForestParams { n_trees: 2, ..Default::default() }).unwrap();
        assert_eq!(evaluate(&f, &data.subset(&[])), Err(ForestError::EmptyTestSet));
        let cls = Dataset::classification(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![0.0; 3]],
            vec!["x".into()],
            vec![0],
        )
        .unwrap();
        assert_eq!(evaluate(&f, &cls), Err(ForestError::TaskMismatch));
    }

    #[test]
    fn invalid_params_and_documents() {
        let data = linear(20);
        let bad = ForestParams { n_trees: 0, ..Default::default() };
        assert!(matches!(train_forest(&data, &bad), Err(ForestError::InvalidParams(_))));
        let bad = ForestParams { mtry: Some(4), ..Default::default() };
        assert!(matches!(train_forest(&data, &bad), Err(ForestError::InvalidParams(_))));
        assert!(Forest::from_json("{}").is_err());
        let f = train_forest(&data, &ForestParams { n_trees: 1, ..Default::default() }).unwrap();
        let tampered = f.to_json().replace("\"format_version\":1", "\"format_version\":9");
        assert!(matches!(Forest::from_json(&tampered), Err(ForestError::Model(_))));
    }

    #[test]
    fn default_mtry() {
        let p = ForestParams::default();
        assert_eq!(p.resolved_mtry(Task::Regression, 5), 1);
        assert_eq!(p.resolved_mtry(Task::Regression, 2), 1);
        assert_eq!(p.resolved_mtry(Task::Regression, 9), 3);
        assert_eq!(p.resolved_mtry(Task::Classification, 5), 2);
        assert_eq!(p.resolved_mtry(Task::Classification, 9), 3);
    }
}
