//! Weather-based attendance prediction.
//!
//! The model regresses turnout percentage on five current-condition features
//! (visibility, humidity, temperature, wind speed, cloudiness, in that order)
//! and converts back to a participant count with the electorate size.
//!
//! [`generate_training_data`] produces the synthetic corpus the model is
//! trained on when no recorded data is available. Its ground truth is
//!
//! ```text
//! pct = clamp(35 + 0.9(temp - 18) - 0.15 clouds - 0.6 wind + 0.8 visibility
//!             - 0.1(humidity - 40) + eps, 5, 95),   eps ~ N(0, 3)
//! ```

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::sha256;
use crate::forest::{
    evaluate, split_dataset, train_forest, Dataset, Forest, ForestError, ForestParams, Metrics,
    RegressionMetrics, SplitSpec, Task,
};

pub const FEATURE_NAMES: [&str; 5] = [
    "visibility_km",
    "humidity_pct",
    "temperature_c",
    "wind_speed_ms",
    "cloudiness_pct",
];
pub const CSV_HEADER: &str =
    "visibility_km,humidity_pct,temperature_c,wind_speed_ms,cloudiness_pct,registered_count,participant_count";
pub const DEFAULT_CORPUS_SIZE: usize = 500;
pub const MIN_TRAINING_SAMPLES: usize = 50;

#[derive(Debug, Error)]
pub enum TurnoutError {
    #[error("{field} = {value} is outside its valid range")]
    OutOfRange { field: &'static str, value: f64 },
    #[error("registered count must be at least 1")]
    NoRegisteredVoters,
    #[error("need at least {MIN_TRAINING_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("participant count {participants} exceeds registered count {registered}")]
    InconsistentSample { participants: u64, registered: u64 },
    #[error("model is not a regression forest over the five weather features")]
    WrongModel,
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherObservation {
    pub visibility_km: f64,
    pub humidity_pct: f64,
    pub temperature_c: f64,
    pub wind_speed_ms: f64,
    pub cloudiness_pct: f64,
    pub observed_at: u64,
    pub lat: f64,
    pub lon: f64,
}

fn check(field: &'static str, value: f64, lo: f64, hi: f64) -> Result<(), TurnoutError> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(TurnoutError::OutOfRange { field, value })
    }
}

impl WeatherObservation {
    pub fn validate(&self) -> Result<(), TurnoutError> {
        check("visibility_km", self.visibility_km, 0.0, f64::MAX)?;
        check("humidity_pct", self.humidity_pct, 0.0, 100.0)?;
        check("temperature_c", self.temperature_c, f64::MIN, f64::MAX)?;
        check("wind_speed_ms", self.wind_speed_ms, 0.0, f64::MAX)?;
        check("cloudiness_pct", self.cloudiness_pct, 0.0, 100.0)?;
        check("lat", self.lat, -90.0, 90.0)?;
        check("lon", self.lon, -180.0, 180.0)?;
        Ok(())
    }
}

/// `[visibility_km, humidity_pct, temperature_c, wind_speed_ms, cloudiness_pct]`, unscaled.
pub fn build_feature_vector(obs: &WeatherObservation) -> Result<[f64; 5], TurnoutError> {
    obs.validate()?;
    Ok([
        obs.visibility_km,
        obs.humidity_pct,
        obs.temperature_c,
        obs.wind_speed_ms,
        obs.cloudiness_pct,
    ])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnoutSample {
    pub visibility_km: f64,
    pub humidity_pct: f64,
    pub temperature_c: f64,
    pub wind_speed_ms: f64,
    pub cloudiness_pct: f64,
    pub registered_count: u64,
    pub participant_count: u64,
}

impl TurnoutSample {
    pub fn features(&self) -> [f64; 5] {
        [
            self.visibility_km,
            self.humidity_pct,
            self.temperature_c,
            self.wind_speed_ms,
            self.cloudiness_pct,
        ]
    }

    pub fn turnout_pct(&self) -> f64 {
        self.participant_count as f64 / self.registered_count as f64 * 100.0
    }

    fn validate(&self) -> Result<(), TurnoutError> {
        if self.registered_count == 0 {
            return Err(TurnoutError::NoRegisteredVoters);
        }
        if self.participant_count > self.registered_count {
            return Err(TurnoutError::InconsistentSample {
                participants: self.participant_count,
                registered: self.registered_count,
            });
        }
        let [v, h, t, w, c] = self.features();
        check("visibility_km", v, 0.0, f64::MAX)?;
        check("humidity_pct", h, 0.0, 100.0)?;
        check("temperature_c", t, f64::MIN, f64::MAX)?;
        check("wind_speed_ms", w, 0.0, f64::MAX)?;
        check("cloudiness_pct", c, 0.0, 100.0)
    }
}

/// Noise-free part of the generator's turnout formula (before clamping).
pub fn turnout_signal(features: &[f64; 5]) -> f64 {
    let [visibility, humidity, temp, wind, clouds] = *features;
    35.0 + 0.9 * (temp - 18.0) - 0.15 * clouds - 0.6 * wind + 0.8 * visibility
        - 0.1 * (humidity - 40.0)
}

pub fn participants_for(pct: f64, registered: u64) -> u64 {
    (pct / 100.0 * registered as f64).round() as u64
}

/// Seeded synthetic corpus; per sample the draws are visibility, humidity,
/// temperature, wind, clouds, registered count, then the noise term.
pub fn generate_training_data(n: usize, seed: u64) -> Vec<TurnoutSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 3.0).expect("valid normal");
    (0..n)
        .map(|_| {
            let visibility_km = rng.random_range(0.5..=10.0);
            let humidity_pct = rng.random_range(40.0..=100.0);
            let temperature_c = rng.random_range(15.0..=35.0);
            let wind_speed_ms = rng.random_range(0.0..=15.0);
            let cloudiness_pct = rng.random_range(0.0..=100.0);
            let registered_count = rng.random_range(500..=20_000u64);
            let eps = noise.sample(&mut rng);
            let features = [
                visibility_km,
                humidity_pct,
                temperature_c,
                wind_speed_ms,
                cloudiness_pct,
            ];
            let pct = (turnout_signal(&features) + eps).clamp(5.0, 95.0);
            TurnoutSample {
                visibility_km,
                humidity_pct,
                temperature_c,
                wind_speed_ms,
                cloudiness_pct,
                registered_count,
                participant_count: participants_for(pct, registered_count),
            }
        })
        .collect()
}

pub fn write_csv<W: Write>(samples: &[TurnoutSample], out: W) -> Result<(), TurnoutError> {
    let mut w = csv::Writer::from_writer(out);
    for s in samples {
        w.serialize(s)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TurnoutSample>, TurnoutError> {
    let mut r = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for row in r.deserialize() {
        let s: TurnoutSample = row?;
        s.validate()?;
        out.push(s);
    }
    Ok(out)
}

/// Regression dataset with turnout percentage as the target.
pub fn samples_to_dataset(samples: &[TurnoutSample]) -> Result<Dataset, TurnoutError> {
    for s in samples {
        s.validate()?;
    }
    Ok(Dataset::regression(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        samples.iter().map(|s| s.features().to_vec()).collect(),
        samples.iter().map(TurnoutSample::turnout_pct).collect(),
    )?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnoutModel {
    pub forest: Forest,
    pub model_id: String,
}

impl TurnoutModel {
    pub fn new(forest: Forest) -> Result<Self, TurnoutError> {
        if forest.task() != Task::Regression || forest.feature_names() != FEATURE_NAMES {
            return Err(TurnoutError::WrongModel);
        }
        let digest = sha256(&[forest.to_json().as_bytes()]);
        Ok(Self {
            model_id: format!("turnout-rf-{}", &digest.to_hex()[..12]),
            forest,
        })
    }

    pub fn from_json(json: &str) -> Result<Self, TurnoutError> {
        Self::new(Forest::from_json(json)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TurnoutTrainingReport {
    pub model: TurnoutModel,
    pub test: RegressionMetrics,
    pub holdout: RegressionMetrics,
}

pub fn train_turnout_model(
    samples: &[TurnoutSample],
    split: &SplitSpec,
    params: &ForestParams,
) -> Result<TurnoutTrainingReport, TurnoutError> {
    if samples.len() < MIN_TRAINING_SAMPLES {
        return Err(TurnoutError::TooFewSamples(samples.len()));
    }
    let data = samples_to_dataset(samples)?;
    let parts = split_dataset(&data, split)?;
    let forest = train_forest(&parts.train, params)?;
    let regression = |m: Metrics| match m {
        Metrics::Regression(r) => r,
        Metrics::Classification(_) => unreachable!("regression forest"),
    };
    let test = regression(evaluate(&forest, &parts.test)?);
    let holdout = regression(evaluate(&forest, &parts.holdout)?);
    Ok(TurnoutTrainingReport {
        model: TurnoutModel::new(forest)?,
        test,
        holdout,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutPrediction {
    pub predicted_turnout_pct: f64,
    pub predicted_participants: u64,
    pub features_used: [f64; 5],
    pub model_id: String,
}

pub fn predict_turnout(
    model: &TurnoutModel,
    obs: &WeatherObservation,
    registered_count: u64,
) -> Result<TurnoutPrediction, TurnoutError> {
    if registered_count == 0 {
        return Err(TurnoutError::NoRegisteredVoters);
    }
    let features = build_feature_vector(obs)?;
    let pct = model.forest.predict_value(&features)?.clamp(0.0, 100.0);
    Ok(TurnoutPrediction {
        predicted_turnout_pct: pct,
        predicted_participants: participants_for(pct, registered_count),
        features_used: features,
        model_id: model.model_id.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn obs() -> WeatherObservation {
        WeatherObservation {
            visibility_km: 10.0,
            humidity_pct: 80.0,
            temperature_c: 28.0,
            wind_speed_ms: 3.0,
            cloudiness_pct: 40.0,
            observed_at: 0,
            lat: 6.91,
            lon: 79.97,
        }
    }

    fn small_params() -> ForestParams {
        ForestParams {
            n_trees: 20,
            ..ForestParams::with_seed(5)
        }
    }

    #[test]
    fn feature_vector_order() {
        assert_eq!(build_feature_vector(&obs()).unwrap(), [10.0, 80.0, 28.0, 3.0, 40.0]);
        assert_eq!(build_feature_vector(&obs()).unwrap(), build_feature_vector(&obs()).unwrap());
        let bad = WeatherObservation { humidity_pct: 120.0, ..obs() };
        assert!(matches!(
            build_feature_vector(&bad),
            Err(TurnoutError::OutOfRange { field: "humidity_pct", .. })
        ));
        let bad = WeatherObservation { lat: 91.0, ..obs() };
        assert!(build_feature_vector(&bad).is_err());
    }

    #[test]
    fn generator_formula_hand_value() {
        // temp 18, clouds 0, wind 0, visibility 0.5, humidity 40
        let pct = turnout_signal(&[0.5, 40.0, 18.0, 0.0, 0.0]);
        assert!((pct - 35.4).abs() < 1e-12);
        assert_eq!(participants_for(35.4, 8000), 2832);
    }

    #[test]
    fn generated_corpus_respects_bounds_and_seed() {
        let a = generate_training_data(500, 42);
        assert_eq!(a.len(), 500);
        assert_eq!(a, generate_training_data(500, 42));
        assert_ne!(a, generate_training_data(500, 43));
        for s in &a {
            assert!((0.5..=10.0).contains(&s.visibility_km));
            assert!((40.0..=100.0).contains(&s.humidity_pct));
            assert!((15.0..=35.0).contains(&s.temperature_c));
            assert!((0.0..=15.0).contains(&s.wind_speed_ms));
            assert!((0.0..=100.0).contains(&s.cloudiness_pct));
            assert!((500..=20_000).contains(&s.registered_count));
            let pct = s.turnout_pct();
            // rounding the count moves the percentage by at most 0.5/500
            assert!((4.9..=95.1).contains(&pct), "{pct}");
        }
    }

    #[test]
    fn csv_roundtrip_with_exact_header() {
        let samples = generate_training_data(5, 1);
        let mut buf = Vec::new();
        write_csv(&samples, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(text.lines().count(), 6);
        assert_eq!(read_csv(&buf[..]).unwrap(), samples);
    }

    #[test]
    fn too_few_samples() {
        let samples = generate_training_data(10, 1);
        assert!(matches!(
            train_turnout_model(&samples, &SplitSpec::new(0.7, 0.15, 0.15, 1), &small_params()),
            Err(TurnoutError::TooFewSamples(10))
        ));
    }

    #[test]
    fn constant_turnout_model() {
        let mut samples = generate_training_data(100, 3);
        for s in samples.iter_mut() {
            s.registered_count = 10_000;
            s.participant_count = 5_000;
        }
        let report =
            train_turnout_model(&samples, &SplitSpec::new(0.7, 0.15, 0.15, 1), &small_params()).unwrap();
        assert_eq!(report.holdout.mae, 0.0);
        let p = predict_turnout(&report.model, &obs(), 10_000).unwrap();
        assert_eq!(p.predicted_participants, 5000);
        assert_eq!(p.predicted_turnout_pct, 50.0);
        assert!(matches!(
            predict_turnout(&report.model, &obs(), 0),
            Err(TurnoutError::NoRegisteredVoters)
        ));
    }

    #[test]
    fn predictions_are_bounded_and_monotone_in_electorate() {
        let samples = generate_training_data(200, 9);
        let report =
            train_turnout_model(&samples, &SplitSpec::new(0.7, 0.15, 0.15, 2), &small_params()).unwrap();
        let (lo, hi) = samples.iter().fold((f64::MAX, f64::MIN), |(lo, hi), s| {
            (lo.min(s.turnout_pct()), hi.max(s.turnout_pct()))
        });
        let mut last = 0;
        for registered in [1, 10, 999, 1000, 5000, 20_000] {
            let p = predict_turnout(&report.model, &obs(), registered).unwrap();
            assert!(p.predicted_turnout_pct >= lo && p.predicted_turnout_pct <= hi);
            assert!(p.predicted_participants >= last);
            last = p.predicted_participants;
        }
        assert!(report.model.model_id.starts_with("turnout-rf-"));
    }

    #[test]
    fn permuted_features_change_the_prediction() {
        let samples = generate_training_data(300, 4);
        let report =
            train_turnout_model(&samples, &SplitSpec::new(0.7, 0.15, 0.15, 2), &small_params()).unwrap();
        let x = [9.0, 45.0, 33.0, 1.0, 10.0];
        let permuted = [33.0, 10.0, 9.0, 45.0, 1.0];
        let a = report.model.forest.predict_value(&x).unwrap();
        let b = report.model.forest.predict_value(&permuted).unwrap();
        assert!((a - b).abs() > 1.0, "{a} vs {b}");
    }

    #[test]
    fn wrong_model_is_rejected() {
        let data = Dataset::regression(vec!["x".into()], vec![vec![1.0]; 3], vec![1.0; 3]).unwrap();
        let f = train_forest(&data, &ForestParams { n_trees: 1, ..Default::default() }).unwrap();
        assert!(matches!(TurnoutModel::new(f), Err(TurnoutError::WrongModel)));
    }
}
