//! Browser bindings for the evote demo page.
//!
//! Everything returns JSON strings so the page needs no generated typings.
//! The same functions run natively, which is how the tests exercise them.

use std::collections::BTreeMap;

use evote_core::election::{AreaCount, CandidateCount, TallySnapshot};
use evote_core::forest::{ForestParams, RegressionMetrics, SplitSpec};
use evote_core::identity::{self, BiometricCapture, BiometricKind, BLOCK_BYTES, DEFAULT_MATCH_THRESHOLD};
use evote_core::projection::{self, TurnoutCurve};
use evote_core::turnout::{self, TurnoutModel, WeatherObservation};
use evote_core::Id128;
use serde_json::json;
use wasm_bindgen::prelude::*;

const DEMO_AREA: &str = "DEMO";

/// Scores two fingerprint captures given as text, the way the registry does.
#[wasm_bindgen]
pub fn compare_captures(enrolled: &str, presented: &str) -> Result<String, String> {
    let template = |text: &str| {
        identity::extract_template(&BiometricCapture::new(BiometricKind::Fingerprint, text.as_bytes(), 0))
            .map_err(|e| e.to_string())
    };
    let (a, b) = (template(enrolled)?, template(presented)?);
    let score = identity::similarity(&a, &b).map_err(|e| e.to_string())?;
    let blocks = |t: &str| t.as_bytes().chunks(BLOCK_BYTES).map(<[u8]>::to_vec).collect::<Vec<_>>();
    let (ba, bb) = (blocks(enrolled), blocks(presented));
    let changed = ba.iter().zip(&bb).filter(|(x, y)| x != y).count() + ba.len().abs_diff(bb.len());
    Ok(json!({
        "similarity": score,
        "hamming": a.hamming(&b),
        "accepted": score >= DEFAULT_MATCH_THRESHOLD,
        "threshold": DEFAULT_MATCH_THRESHOLD,
        "blocks_changed": changed,
    })
    .to_string())
}

/// Parses `A=120, B=95` into ordered candidate counts.
fn parse_counts(text: &str) -> Result<Vec<(String, u64)>, String> {
    let mut out: Vec<(String, u64)> = Vec::new();
    for part in text.split([',', '\n']).map(str::trim).filter(|p| !p.is_empty()) {
        let (name, votes) = part
            .split_once('=')
            .ok_or_else(|| format!("expected name=votes, got {part:?}"))?;
        let name = name.trim();
        if name.is_empty() || out.iter().any(|(n, _)| n == name) {
            return Err(format!("bad or repeated candidate {name:?}"));
        }
        let votes = votes.trim().parse().map_err(|_| format!("bad vote count in {part:?}"))?;
        out.push((name.to_string(), votes));
    }
    if out.len() < 2 {
        return Err("need at least two candidates".into());
    }
    Ok(out)
}

/// Projects partial counts to the close for one area whose cumulative turnout
/// follows `t^shape`.
#[wasm_bindgen]
pub fn project_counts(counts: &str, t: f64, shape: f64) -> Result<String, String> {
    if !(shape.is_finite() && shape > 0.0) {
        return Err("shape must be positive".into());
    }
    let counts = parse_counts(counts)?;
    let order: Vec<String> = counts.iter().map(|(c, _)| c.clone()).collect();
    let points = (0..=20)
        .map(|i| {
            let x = f64::from(i) / 20.0;
            (x, x.powf(shape))
        })
        .collect();
    let curve = TurnoutCurve::new(DEMO_AREA, points).map_err(|e| e.to_string())?;
    let curves = BTreeMap::from([(DEMO_AREA.to_string(), curve)]);
    let tally = TallySnapshot {
        election_id: Id128([0; 16]),
        as_of: 0,
        total: counts.iter().map(|(_, v)| v).sum(),
        counts: counts
            .iter()
            .map(|(c, v)| CandidateCount {
                candidate_id: c.clone(),
                votes: *v,
            })
            .collect(),
        per_area: counts
            .iter()
            .map(|(c, v)| AreaCount {
                area_code: DEMO_AREA.into(),
                candidate_id: c.clone(),
                votes: *v,
            })
            .collect(),
    };
    let p = projection::project(&tally, &curves, t, &order).map_err(|e| e.to_string())?;
    serde_json::to_string(&p.rounded()).map_err(|e| e.to_string())
}

/// A turnout forest trained in the page on the synthetic corpus.
#[wasm_bindgen]
pub struct TurnoutExplorer {
    model: TurnoutModel,
    holdout: RegressionMetrics,
}

#[wasm_bindgen]
impl TurnoutExplorer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u32, trees: u32) -> Result<TurnoutExplorer, String> {
        if !(1..=200).contains(&trees) {
            return Err("trees must be between 1 and 200".into());
        }
        let seed = u64::from(seed);
        let samples = turnout::generate_training_data(turnout::DEFAULT_CORPUS_SIZE, seed);
        let params = ForestParams {
            n_trees: trees as usize,
            ..ForestParams::with_seed(seed)
        };
        let report = turnout::train_turnout_model(&samples, &SplitSpec::new(0.7, 0.15, 0.15, seed), &params)
            .map_err(|e| e.to_string())?;
        Ok(TurnoutExplorer {
            model: report.model,
            holdout: report.holdout,
        })
    }

    #[wasm_bindgen(getter)]
    pub fn summary(&self) -> String {
        json!({ "model_id": self.model.model_id, "holdout": self.holdout }).to_string()
    }

    pub fn predict(
        &self,
        visibility_km: f64,
        humidity_pct: f64,
        temperature_c: f64,
        wind_speed_ms: f64,
        cloudiness_pct: f64,
        registered: u32,
    ) -> Result<String, String> {
        let obs = WeatherObservation {
            visibility_km,
            humidity_pct,
            temperature_c,
            wind_speed_ms,
            cloudiness_pct,
            observed_at: 0,
            lat: 0.0,
            lon: 0.0,
        };
        let p = turnout::predict_turnout(&self.model, &obs, u64::from(registered)).map_err(|e| e.to_string())?;
        serde_json::to_string(&p).map_err(|e| e.to_string())
    }
}
