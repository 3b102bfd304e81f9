//! Mid-election result projection.
//!
//! Each area's counted votes are scaled up by the inverse of the share of
//! that area's turnout historically cast by the current point in the voting
//! day. The win probability is a normal approximation on the margin between
//! the projected leader and its strongest rival, computed on counted shares.
//! It is a heuristic confidence, not a calibrated posterior.

use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crypto::Id128;
use crate::election::TallySnapshot;

pub const METHOD: &str = "ratio+normal-approx";
pub const FRACTION_FLOOR: f64 = 0.01;
pub const HISTORY_CSV_HEADER: &str = "area_code,time_fraction,cumulative_fraction";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProjectionError {
    #[error("malformed turnout curve: {0}")]
    MalformedCurve(String),
    #[error("no turnout curve for area {0}")]
    MissingCurve(String),
    #[error("no votes counted yet")]
    EmptyTally,
    #[error("time fraction {0} is outside its valid range")]
    InvalidTime(f64),
    #[error("area {0} has fewer than two history points")]
    TooFewPoints(String),
    #[error("candidate {0} is not in the candidate order")]
    UnknownCandidate(String),
    #[error("csv: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutCurve {
    pub area_code: String,
    /// `(time_fraction, cumulative_fraction)`
    pub points: Vec<(f64, f64)>,
}

impl TurnoutCurve {
    pub fn new(area_code: impl Into<String>, points: Vec<(f64, f64)>) -> Result<Self, ProjectionError> {
        let curve = Self {
            area_code: area_code.into(),
            points,
        };
        curve.validate()?;
        Ok(curve)
    }

    pub fn validate(&self) -> Result<(), ProjectionError> {
        let bad = |msg: &str| Err(ProjectionError::MalformedCurve(format!("{}: {msg}", self.area_code)));
        let (Some(first), Some(last)) = (self.points.first(), self.points.last()) else {
            return bad("no points");
        };
        if self.points.len() < 2 {
            return bad("fewer than two points");
        }
        let in_unit = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !self.points.iter().all(|&(t, c)| in_unit(t) && in_unit(c)) {
            return bad("values must lie in [0,1]");
        }
        if first.0 != 0.0 {
            return bad("first time fraction must be 0");
        }
        if *last != (1.0, 1.0) {
            return bad("last point must be (1,1)");
        }
        for w in self.points.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad("time fractions must strictly increase");
            }
            if w[1].1 < w[0].1 {
                return bad("cumulative fractions must not decrease");
            }
        }
        Ok(())
    }
}

/// Linear interpolation on the curve, floored at [`FRACTION_FLOOR`].
pub fn curve_fraction(curve: &TurnoutCurve, t: f64) -> Result<f64, ProjectionError> {
    curve.validate()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(ProjectionError::InvalidTime(t));
    }
    let pts = &curve.points;
    let i = pts.partition_point(|&(pt, _)| pt <= t);
    let raw = if i == pts.len() {
        pts[pts.len() - 1].1
    } else {
        let (t0, c0) = pts[i - 1];
        let (t1, c1) = pts[i];
        if t == t0 {
            c0
        } else {
            c0 + (c1 - c0) * (t - t0) / (t1 - t0)
        }
    };
    Ok(raw.max(FRACTION_FLOOR))
}

/// Standard normal CDF, Abramowitz & Stegun 26.2.17 (absolute error < 7.5e-8).
pub fn normal_cdf(x: f64) -> f64 {
    const P: f64 = 0.231_641_9;
    const B: [f64; 5] = [
        0.319_381_530,
        -0.356_563_782,
        1.781_477_937,
        -1.821_255_978,
        1.330_274_429,
    ];
    if x.is_nan() {
        return f64::NAN;
    }
    let z = x.abs();
    let t = 1.0 / (1.0 + P * z);
    let poly = t * (B[0] + t * (B[1] + t * (B[2] + t * (B[3] + t * B[4]))));
    let density = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let upper = density * poly;
    if x >= 0.0 {
        1.0 - upper
    } else {
        upper
    }
}

/// Probability that the candidate with counted share `p1` beats the one with `p2`
/// after `n` counted votes.
pub fn margin_win_probability(p1: f64, p2: f64, n: u64) -> f64 {
    if p2 == 0.0 {
        return 1.0;
    }
    if p1 == p2 {
        return 0.5;
    }
    let se = ((p1 + p2 - (p1 - p2).powi(2)) / n as f64).sqrt();
    normal_cdf((p1 - p2) / se)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedCount {
    pub candidate_id: String,
    pub projected_votes: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub election_id: Id128,
    pub method: String,
    pub as_of_fraction: f64,
    pub counted_total: u64,
    pub projected_counts: Vec<ProjectedCount>,
    pub projected_total: f64,
    pub leader: String,
    pub win_probability: f64,
}

impl Projection {
    pub fn projected_for(&self, candidate_id: &str) -> Option<f64> {
        self.projected_counts
            .iter()
            .find(|c| c.candidate_id == candidate_id)
            .map(|c| c.projected_votes)
    }

    /// Copy for publication, with projected counts rounded to one decimal.
    pub fn rounded(&self) -> Projection {
        let round1 = |v: f64| (v * 10.0).round() / 10.0;
        Projection {
            projected_counts: self
                .projected_counts
                .iter()
                .map(|c| ProjectedCount {
                    candidate_id: c.candidate_id.clone(),
                    projected_votes: round1(c.projected_votes),
                })
                .collect(),
            projected_total: round1(self.projected_total),
            ..self.clone()
        }
    }
}

pub fn project(
    partial: &TallySnapshot,
    curves: &BTreeMap<String, TurnoutCurve>,
    t: f64,
    candidate_order: &[String],
) -> Result<Projection, ProjectionError> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(ProjectionError::InvalidTime(t));
    }
    let position = |id: &str| {
        candidate_order
            .iter()
            .position(|c| c == id)
            .ok_or_else(|| ProjectionError::UnknownCandidate(id.to_string()))
    };
    let mut counted = vec![0u64; candidate_order.len()];
    let mut projected = vec![0.0f64; candidate_order.len()];
    let mut fractions: BTreeMap<&str, f64> = BTreeMap::new();
    for row in partial.per_area.iter().filter(|r| r.votes > 0) {
        let k = position(&row.candidate_id)?;
        let fraction = match fractions.get(row.area_code.as_str()) {
            Some(&f) => f,
            None => {
                let curve = curves
                    .get(&row.area_code)
                    .ok_or_else(|| ProjectionError::MissingCurve(row.area_code.clone()))?;
                let f = curve_fraction(curve, t)?;
                fractions.insert(&row.area_code, f);
                f
            }
        };
        counted[k] += row.votes;
        projected[k] += row.votes as f64 / fraction;
    }
    let n: u64 = counted.iter().sum();
    if n == 0 {
        return Err(ProjectionError::EmptyTally);
    }

    let mut leader = 0;
    for (k, &v) in projected.iter().enumerate() {
        if v > projected[leader] {
            leader = k;
        }
    }
    let rival = counted
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != leader)
        .map(|(_, &c)| c)
        .max()
        .unwrap_or(0);
    let p1 = counted[leader] as f64 / n as f64;
    let p2 = rival as f64 / n as f64;

    Ok(Projection {
        election_id: partial.election_id,
        method: METHOD.to_string(),
        as_of_fraction: t,
        counted_total: n,
        projected_total: projected.iter().sum(),
        projected_counts: candidate_order
            .iter()
            .zip(&projected)
            .map(|(c, &v)| ProjectedCount {
                candidate_id: c.clone(),
                projected_votes: v,
            })
            .collect(),
        leader: candidate_order[leader].clone(),
        win_probability: margin_win_probability(p1, p2, n),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryPoint {
    pub area_code: String,
    pub time_fraction: f64,
    pub cumulative_fraction: f64,
}

/// Normalizes raw observations into valid curves: sort by time, keep the
/// largest value per duplicate time, running max, then complete the
/// endpoints with `(0, smallest observed value)` and `(1, 1)`.
pub fn build_curves_from_history(
    history: &[HistoryPoint],
) -> Result<BTreeMap<String, TurnoutCurve>, ProjectionError> {
    let mut by_area: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for p in history {
        let ok = |v: f64| v.is_finite() && (0.0..=1.0).contains(&v);
        if !ok(p.time_fraction) || !ok(p.cumulative_fraction) {
            return Err(ProjectionError::MalformedCurve(format!(
                "{}: point ({}, {}) outside [0,1]",
                p.area_code, p.time_fraction, p.cumulative_fraction
            )));
        }
        by_area
            .entry(&p.area_code)
            .or_default()
            .push((p.time_fraction, p.cumulative_fraction));
    }

    let mut curves = BTreeMap::new();
    for (area, mut raw) in by_area {
        if raw.len() < 2 {
            return Err(ProjectionError::TooFewPoints(area.to_string()));
        }
        let min_observed = raw.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        raw.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut points: Vec<(f64, f64)> = Vec::with_capacity(raw.len() + 2);
        for (t, c) in raw {
            match points.last_mut() {
                Some(last) if last.0 == t => last.1 = last.1.max(c),
                _ => points.push((t, c)),
            }
        }
        let mut running = f64::NEG_INFINITY;
        for p in points.iter_mut() {
            running = running.max(p.1);
            p.1 = running;
        }
        if points[0].0 != 0.0 {
            points.insert(0, (0.0, min_observed));
        }
        match points.last_mut() {
            Some(last) if last.0 == 1.0 => last.1 = 1.0,
            _ => points.push((1.0, 1.0)),
        }
        curves.insert(area.to_string(), TurnoutCurve::new(area, points)?);
    }
    Ok(curves)
}

pub fn read_history_csv<R: Read>(input: R) -> Result<Vec<HistoryPoint>, ProjectionError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .collect::<Result<Vec<HistoryPoint>, _>>()
        .map_err(|e| ProjectionError::Csv(e.to_string()))
}
