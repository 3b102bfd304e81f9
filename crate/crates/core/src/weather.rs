//! Normalization of OpenWeather "current weather" documents.
//!
//! Transport (live HTTP or fixture files) lives in the service crate; this
//! module owns the response shape and unit conversion so both paths agree.

use serde::Deserialize;
use thiserror::Error;

use crate::turnout::WeatherObservation;

pub const KELVIN_OFFSET: f64 = 273.15;
pub const DEFAULT_VISIBILITY_KM: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeatherParseError {
    #[error("malformed weather response: {0}")]
    Malformed(String),
    #[error("coordinates ({lat}, {lon}) out of range")]
    InvalidCoordinates { lat: f64, lon: f64 },
}

#[derive(Deserialize)]
struct Main {
    temp: f64,
    humidity: f64,
}

#[derive(Deserialize)]
struct Wind {
    speed: f64,
}

#[derive(Deserialize)]
struct Clouds {
    all: f64,
}

#[derive(Deserialize)]
struct CurrentWeather {
    main: Main,
    visibility: Option<f64>,
    wind: Wind,
    clouds: Clouds,
    dt: Option<u64>,
}

pub fn check_coordinates(lat: f64, lon: f64) -> Result<(), WeatherParseError> {
    if lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..=180.0).contains(&lon) {
        Ok(())
    } else {
        Err(WeatherParseError::InvalidCoordinates { lat, lon })
    }
}

/// `{lat:.2}_{lon:.2}.json`
pub fn fixture_file_name(lat: f64, lon: f64) -> String {
    format!("{lat:.2}_{lon:.2}.json")
}

fn clamp_logged(field: &str, value: f64, lo: f64, hi: f64) -> f64 {
    let clamped = value.clamp(lo, hi);
    if clamped != value {
        log::warn!("weather field {field} = {value} clamped to {clamped}");
    }
    clamped
}

/// Parses a response body into an in-range observation. `fallback_time` is
/// used when the document carries no `dt`.
pub fn parse_current_conditions(
    body: &[u8],
    lat: f64,
    lon: f64,
    fallback_time: u64,
) -> Result<WeatherObservation, WeatherParseError> {
    check_coordinates(lat, lon)?;
    let doc: CurrentWeather =
        serde_json::from_slice(body).map_err(|e| WeatherParseError::Malformed(e.to_string()))?;
    let values = [
        doc.main.temp,
        doc.main.humidity,
        doc.wind.speed,
        doc.clouds.all,
        doc.visibility.unwrap_or(0.0),
    ];
    if values.iter().any(|v| !v.is_finite()) {
        return Err(WeatherParseError::Malformed("non-finite value".into()));
    }
    let visibility_km = doc.visibility.map_or(DEFAULT_VISIBILITY_KM, |m| m / 1000.0);
    let obs = WeatherObservation {
        visibility_km: clamp_logged("visibility", visibility_km, 0.0, f64::MAX),
        humidity_pct: clamp_logged("main.humidity", doc.main.humidity, 0.0, 100.0),
        temperature_c: doc.main.temp - KELVIN_OFFSET,
        wind_speed_ms: clamp_logged("wind.speed", doc.wind.speed, 0.0, f64::MAX),
        cloudiness_pct: clamp_logged("clouds.all", doc.clouds.all, 0.0, 100.0),
        observed_at: doc.dt.unwrap_or(fallback_time),
        lat,
        lon,
    };
    debug_assert!(obs.validate().is_ok());
    Ok(obs)
}
