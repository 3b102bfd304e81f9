//! Area-level risk of election-related incidents.
//!
//! A classification forest over five historical features (prior incident
//! count, previous turnout, last margin, rally count, police density) yields
//! P(incident), which is bucketed into a tier and used to rank areas.

use std::cmp::Ordering;
use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::sha256;
use crate::forest::{
    evaluate, split_dataset, train_forest, ClassificationMetrics, Dataset, Forest, ForestError,
    ForestParams, Metrics, SplitSpec, Task,
};

pub const FEATURE_NAMES: [&str; 5] = [
    "prior_incident_count",
    "previous_turnout_pct",
    "margin_pct_last_election",
    "rally_count",
    "police_stations_per_10k",
];
pub const CSV_HEADER: &str = "area_code,prior_incident_count,previous_turnout_pct,margin_pct_last_election,rally_count,police_stations_per_10k,incident_occurred";
pub const LABELS: [&str; 2] = ["no_incident", "incident"];
pub const MIN_TRAINING_ROWS: usize = 50;

#[derive(Debug, Error)]
pub enum ViolenceError {
    #[error("{field} = {value} is outside its valid range")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("need at least {MIN_TRAINING_ROWS} rows, got {0}")]
    TooFewRows(usize),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("no areas to rank")]
    EmptyList,
    #[error("tier thresholds must satisfy 0 <= medium <= high <= 1")]
    InvalidThresholds,
    #[error("model is not an incident classifier over the five history features")]
    WrongModel,
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AreaHistory {
    pub area_code: String,
    pub prior_incident_count: u32,
    pub previous_turnout_pct: f64,
    pub margin_pct_last_election: f64,
    pub rally_count: u32,
    pub police_stations_per_10k: f64,
}

fn check(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), ViolenceError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(ViolenceError::OutOfRange { field, value })
    }
}

impl AreaHistory {
    pub fn validate(&self) -> Result<(), ViolenceError> {
        check("previous_turnout_pct", self.previous_turnout_pct, 0.0, 100.0)?;
        check("margin_pct_last_election", self.margin_pct_last_election, 0.0, 100.0)?;
        check("police_stations_per_10k", self.police_stations_per_10k, 0.0, f64::MAX)
    }

    pub fn features(&self) -> [f64; 5] {
        [
            self.prior_incident_count as f64,
            self.previous_turnout_pct,
            self.margin_pct_last_election,
            self.rally_count as f64,
            self.police_stations_per_10k,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledArea {
    #[serde(flatten)]
    pub history: AreaHistory,
    #[serde(with = "bool_as_int")]
    pub incident_occurred: bool,
}

mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match String::deserialize(d)?.trim() {
            "1" | "true" => Ok(true),
            "0" | "false" => Ok(false),
            other => Err(D::Error::custom(format!("expected 0/1, got {other:?}"))),
        }
    }
}

/// Log-odds of an incident under the synthetic ground truth.
pub fn incident_logit(features: &[f64; 5]) -> f64 {
    let [prior, _turnout, margin, rallies, police] = *features;
    0.4 * prior + 0.05 * rallies - 0.5 * police + 0.03 * (50.0 - margin)
}

fn random_history(rng: &mut ChaCha8Rng, i: usize) -> AreaHistory {
    AreaHistory {
        area_code: format!("A{i:04}"),
        prior_incident_count: rng.random_range(0..=25),
        previous_turnout_pct: rng.random_range(40.0..=90.0),
        margin_pct_last_election: rng.random_range(0.0..=60.0),
        rally_count: rng.random_range(0..=20),
        police_stations_per_10k: rng.random_range(0.0..=18.0),
    }
}

/// Label drawn as Bernoulli(sigmoid(logit)); the uniform draw follows the
/// five feature draws for each row.
pub fn generate_training_data(n: usize, seed: u64) -> Vec<LabeledArea> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let history = random_history(&mut rng, i);
            let p = 1.0 / (1.0 + (-incident_logit(&history.features())).exp());
            let u: f64 = rng.random();
            LabeledArea {
                history,
                incident_occurred: u < p,
            }
        })
        .collect()
}

/// Deterministic labels: an incident exactly when `prior_incident_count > 5`.
pub fn generate_separable_data(n: usize, seed: u64) -> Vec<LabeledArea> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let history = random_history(&mut rng, i);
            LabeledArea {
                incident_occurred: history.prior_incident_count > 5,
                history,
            }
        })
        .collect()
}

// Flattened structs cannot go through csv's serialize, so rows are written by hand.
pub fn write_csv<W: Write>(rows: &[LabeledArea], out: W) -> Result<(), ViolenceError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        let h = &r.history;
        w.write_record([
            h.area_code.clone(),
            h.prior_incident_count.to_string(),
            h.previous_turnout_pct.to_string(),
            h.margin_pct_last_election.to_string(),
            h.rally_count.to_string(),
            h.police_stations_per_10k.to_string(),
            u8::from(r.incident_occurred).to_string(),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<LabeledArea>, ViolenceError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let row: LabeledArea = row?;
        row.history.validate()?;
        out.push(row);
    }
    Ok(out)
}

pub fn rows_to_dataset(rows: &[LabeledArea]) -> Result<Dataset, ViolenceError> {
    for r in rows {
        r.history.validate()?;
    }
    Ok(Dataset::classification(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        rows.iter().map(|r| r.history.features().to_vec()).collect(),
        LABELS.iter().map(|s| s.to_string()).collect(),
        rows.iter().map(|r| usize::from(r.incident_occurred)).collect(),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolenceModel {
    pub forest: Forest,
    pub model_id: String,
}

impl ViolenceModel {
    pub fn new(forest: Forest) -> Result<Self, ViolenceError> {
        if forest.task() != Task::Classification
            || forest.feature_names() != FEATURE_NAMES
            || forest.labels() != LABELS
        {
            return Err(ViolenceError::WrongModel);
        }
        let digest = sha256(&[forest.to_json().as_bytes()]);
        Ok(Self {
            model_id: format!("violence-rf-{}", &digest.to_hex()[..12]),
            forest,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, ViolenceError> {
        Self::new(Forest::from_json(json)?)
    }

    pub fn incident_probability(&self, history: &AreaHistory) -> Result<f64, ViolenceError> {
        history.validate()?;
        Ok(self.forest.predict_proba(&history.features())?[1])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolenceTrainingReport {
    pub model: ViolenceModel,
    pub test: ClassificationMetrics,
    pub holdout: ClassificationMetrics,
}

/// Always splits stratified on the incident label, whatever `split.stratified` says.
pub fn train_violence_model(
    rows: &[LabeledArea],
    split: &SplitSpec,
    params: &ForestParams,
) -> Result<ViolenceTrainingReport, ViolenceError> {
    if rows.len() < MIN_TRAINING_ROWS {
        return Err(ViolenceError::TooFewRows(rows.len()));
    }
    let positives = rows.iter().filter(|r| r.incident_occurred).count();
    if positives == 0 || positives == rows.len() {
        return Err(ViolenceError::SingleClass);
    }
    let data = rows_to_dataset(rows)?;
    let parts = split_dataset(&data, &(*split).stratified())?;
    let forest = train_forest(&parts.train, params)?;
    let classification = |m: Metrics| match m {
        Metrics::Classification(c) => c,
        Metrics::Regression(_) => unreachable!("classification forest"),
    };
    let test = classification(evaluate(&forest, &parts.test)?);
    let holdout = classification(evaluate(&forest, &parts.holdout)?);
    Ok(ViolenceTrainingReport {
        model: ViolenceModel::new(forest)?,
        test,
        holdout,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskTier {
    Low,
    Medium,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TierThresholds {
    pub medium: f64,
    pub high: f64,
}

impl Default for TierThresholds {
    fn default() -> Self {
        Self {
            medium: 0.33,
            high: 0.66,
        }
    }
}

impl TierThresholds {
    pub fn validate(&self) -> Result<(), ViolenceError> {
        if (0.0..=1.0).contains(&self.medium)
            && (0.0..=1.0).contains(&self.high)
            && self.medium <= self.high
        {
            Ok(())
        } else {
            Err(ViolenceError::InvalidThresholds)
        }
    }

    pub fn tier(&self, p: f64) -> RiskTier {
        if p >= self.high {
            RiskTier::High
        } else if p >= self.medium {
            RiskTier::Medium
        } else {
            RiskTier::Low
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskAssessment {
    pub area_code: String,
    pub probability: f64,
    pub tier: RiskTier,
    pub model_id: String,
}

pub fn predict_risk(
    model: &ViolenceModel,
    history: &AreaHistory,
    thresholds: &TierThresholds,
) -> Result<RiskAssessment, ViolenceError> {
    thresholds.validate()?;
    let probability = model.incident_probability(history)?;
    Ok(RiskAssessment {
        area_code: history.area_code.clone(),
        probability,
        tier: thresholds.tier(probability),
        model_id: model.model_id.clone(),
    })
}

/// Highest probability first; equal probabilities fall back to area code order.
pub fn rank_areas(
    model: &ViolenceModel,
    areas: &[AreaHistory],
    thresholds: &TierThresholds,
) -> Result<Vec<RiskAssessment>, ViolenceError> {
    if areas.is_empty() {
        return Err(ViolenceError::EmptyList);
    }
    let mut out = areas
        .iter()
        .map(|a| predict_risk(model, a, thresholds))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(|a, b| {
        b.probability
            .partial_cmp(&a.probability)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.area_code.cmp(&b.area_code))
    });
    Ok(out)
}
