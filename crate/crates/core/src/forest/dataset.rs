use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ForestError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Targets {
    Regression(Vec<f64>),
    /// Class indices into `labels`; label order is the tie-break order.
    Classification { labels: Vec<String>, classes: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    feature_names: Vec<String>,
    features: Vec<Vec<f64>>,
    targets: Targets,
}

impl Dataset {
    pub fn regression(
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
    ) -> Result<Self, ForestError> {
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(ForestError::InvalidDataset("non-finite target".into()));
        }
        Self::checked(feature_names, features, Targets::Regression(targets))
    }

    pub fn classification(
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        labels: Vec<String>,
        classes: Vec<usize>,
    ) -> Result<Self, ForestError> {
        if labels.is_empty() {
            return Err(ForestError::InvalidDataset("no class labels".into()));
        }
        if let Some(c) = classes.iter().find(|&&c| c >= labels.len()) {
            return Err(ForestError::InvalidDataset(format!(
                "class index {c} outside {} labels",
                labels.len()
            )));
        }
        Self::checked(
            feature_names,
            features,
            Targets::Classification { labels, classes },
        )
    }

    fn checked(
        feature_names: Vec<String>,
        features: Vec<Vec<f64>>,
        targets: Targets,
    ) -> Result<Self, ForestError> {
        let p = feature_names.len();
        if p == 0 {
            return Err(ForestError::InvalidDataset("no features".into()));
        }
        let n_targets = match &targets {
            Targets::Regression(t) => t.len(),
            Targets::Classification { classes, .. } => classes.len(),
        };
        if n_targets != features.len() {
            return Err(ForestError::InvalidDataset(format!(
                "{} feature rows but {n_targets} targets",
                features.len()
            )));
        }
        for (i, row) in features.iter().enumerate() {
            if row.len() != p {
                return Err(ForestError::InvalidDataset(format!(
                    "row {i} has {} features, expected {p}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(ForestError::InvalidDataset(format!("row {i} has a non-finite value")));
            }
        }
        Ok(Self {
            feature_names,
            features,
            targets,
        })
    }

    pub fn task(&self) -> Task {
        match self.targets {
            Targets::Regression(_) => Task::Regression,
            Targets::Classification { .. } => Task::Classification,
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    /// Labels for classification data, empty for regression.
    pub fn labels(&self) -> &[String] {
        match &self.targets {
            Targets::Regression(_) => &[],
            Targets::Classification { labels, .. } => labels,
        }
    }

    pub fn regression_targets(&self) -> Option<&[f64]> {
        match &self.targets {
            Targets::Regression(t) => Some(t),
            Targets::Classification { .. } => None,
        }
    }

    pub fn class_targets(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Regression(_) => None,
            Targets::Classification { classes, .. } => Some(classes),
        }
    }

    /// New dataset made of the given rows, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let features = rows.iter().map(|&r| self.features[r].clone()).collect();
        let targets = match &self.targets {
            Targets::Regression(t) => Targets::Regression(rows.iter().map(|&r| t[r]).collect()),
            Targets::Classification { labels, classes } => Targets::Classification {
                labels: labels.clone(),
                classes: rows.iter().map(|&r| classes[r]).collect(),
            },
        };
        Dataset {
            feature_names: self.feature_names.clone(),
            features,
            targets,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub test_fraction: f64,
    pub holdout_fraction: f64,
    pub stratified: bool,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train: f64, test: f64, holdout: f64, seed: u64) -> Self {
        Self {
            train_fraction: train,
            test_fraction: test,
            holdout_fraction: holdout,
            stratified: false,
            seed,
        }
    }

    pub fn stratified(mut self) -> Self {
        self.stratified = true;
        self
    }

    fn fractions(&self) -> [f64; 3] {
        [self.train_fraction, self.test_fraction, self.holdout_fraction]
    }

    pub fn validate(&self) -> Result<(), ForestError> {
        let f = self.fractions();
        let in_range = f.iter().all(|x| *x > 0.0 && *x < 1.0);
        if !in_range || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(ForestError::InvalidFractions(f));
        }
        Ok(())
    }

    /// `floor(fraction * n)` per part, leftover rows handed out to train,
    /// test, holdout in that order.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        let mut sizes = self
            .fractions()
            .map(|f| (f * n as f64 + 1e-9).floor() as usize);
        let mut remainder = n - sizes.iter().sum::<usize>();
        let mut i = 0;
        while remainder > 0 {
            sizes[i % 3] += 1;
            remainder -= 1;
            i += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub test: Dataset,
    pub holdout: Dataset,
}

pub const MIN_SPLIT_ROWS: usize = 10;

/// Seeded, disjoint train/test/holdout partition. Stratified mode applies the
/// size rule within each class.
pub fn split_dataset(data: &Dataset, spec: &SplitSpec) -> Result<DatasetSplit, ForestError> {
    spec.validate()?;
    if data.len() < MIN_SPLIT_ROWS {
        return Err(ForestError::TooFewRows {
            needed: MIN_SPLIT_ROWS,
            got: data.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();
    if spec.stratified {
        let Some(classes) = data.class_targets() else {
            return Err(ForestError::StratifyOnRegression);
        };
        for class in 0..data.labels().len() {
            let mut members: Vec<usize> = (0..data.len()).filter(|&i| classes[i] == class).collect();
            members.shuffle(&mut rng);
            distribute(&members, spec.sizes(members.len()), &mut parts);
        }
        for part in parts.iter_mut() {
            part.shuffle(&mut rng);
        }
    } else {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut rng);
        distribute(&order, spec.sizes(order.len()), &mut parts);
    }
    let [train, test, holdout] = parts;
    Ok(DatasetSplit {
        train: data.subset(&train),
        test: data.subset(&test),
        holdout: data.subset(&holdout),
    })
}

fn distribute(order: &[usize], sizes: [usize; 3], parts: &mut [Vec<usize>; 3]) {
    let mut at = 0;
    for (part, size) in parts.iter_mut().zip(sizes) {
        part.extend_from_slice(&order[at..at + size]);
        at += size;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn reg(n: usize) -> Dataset {
        Dataset::regression(
            vec!["x".into()],
            (0..n).map(|i| vec![i as f64]).collect(),
            (0..n).map(|i| i as f64 * 2.0).collect(),
        )
        .unwrap()
    }

    fn cls(n: usize, n_pos: usize) -> Dataset {
        Dataset::classification(
            vec!["x".into()],
            (0..n).map(|i| vec![i as f64]).collect(),
            vec!["neg".into(), "pos".into()],
            (0..n).map(|i| usize::from(i < n_pos)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ten_rows_floor_and_remainder() {
        // floors 7, 1, 1 and one leftover row for train
        let spec = SplitSpec::new(0.7, 0.15, 0.15, 1);
        assert_eq!(spec.sizes(10), [8, 1, 1]);
        let s = split_dataset(&reg(10), &spec).unwrap();
        assert_eq!((s.train.len(), s.test.len(), s.holdout.len()), (8, 1, 1));
    }

    #[test]
    fn remainder_of_two_goes_to_train_then_test() {
        // 11 * (0.7, 0.15, 0.15) = 7.7, 1.65, 1.65 -> floors 7,1,1, leftover 2
        assert_eq!(SplitSpec::new(0.7, 0.15, 0.15, 0).sizes(11), [8, 2, 1]);
        assert_eq!(SplitSpec::new(0.7, 0.15, 0.15, 0).sizes(500), [350, 75, 75]);
    }

    #[test]
    fn deterministic_for_a_seed() {
        let spec = SplitSpec::new(0.6, 0.2, 0.2, 99);
        let a = split_dataset(&reg(40), &spec).unwrap();
        let b = split_dataset(&reg(40), &spec).unwrap();
        assert_eq!(a, b);
        let c = split_dataset(&reg(40), &SplitSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn rejects_bad_fractions_and_small_data() {
        assert!(matches!(
            split_dataset(&reg(20), &SplitSpec::new(0.5, 0.5, 0.1, 0)),
            Err(ForestError::InvalidFractions(_))
        ));
        assert!(matches!(
            split_dataset(&reg(20), &SplitSpec::new(1.0, 0.0, 0.0, 0)),
            Err(ForestError::InvalidFractions(_))
        ));
        assert_eq!(
            split_dataset(&reg(9), &SplitSpec::new(0.7, 0.15, 0.15, 0)),
            Err(ForestError::TooFewRows { needed: 10, got: 9 })
        );
        assert_eq!(
            split_dataset(&reg(20), &SplitSpec::new(0.7, 0.15, 0.15, 0).stratified()),
            Err(ForestError::StratifyOnRegression)
        );
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::regression(vec!["a".into()], vec![vec![1.0, 2.0]], vec![1.0]).is_err());
        assert!(Dataset::regression(vec!["a".into()], vec![vec![f64::NAN]], vec![1.0]).is_err());
        assert!(Dataset::regression(vec!["a".into()], vec![vec![1.0]], vec![]).is_err());
        assert!(Dataset::regression(vec![], vec![], vec![]).is_err());
        assert!(Dataset::classification(vec!["a".into()], vec![vec![1.0]], vec!["x".into()], vec![1]).is_err());
    }

    proptest! {
        #[test]
        fn partition_is_disjoint_and_covering(n in 10usize..200, seed in any::<u64>(), strat in any::<bool>(), pos in 0usize..200) {
            let data = cls(n, pos.min(n));
            let spec = SplitSpec { stratified: strat, ..SplitSpec::new(0.7, 0.15, 0.15, seed) };
            let s = split_dataset(&data, &spec).unwrap();
            let mut all: Vec<i64> = [&s.train, &s.test, &s.holdout]
                .iter()
                .flat_map(|d| d.features().iter().map(|r| r[0] as i64))
                .collect();
            all.sort();
            prop_assert_eq!(all, (0..n as i64).collect::<Vec<_>>());
            if strat {
                let n_pos = pos.min(n);
                for (part, frac) in [(&s.train, 0.7), (&s.test, 0.15), (&s.holdout, 0.15)] {
                    let got = part.class_targets().unwrap().iter().filter(|&&c| c == 1).count() as f64;
                    prop_assert!((got - frac * n_pos as f64).abs() <= 1.0 + 1e-9);
                }
            }
        }
    }
}
