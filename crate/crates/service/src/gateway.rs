//! Current-conditions weather client, live (OpenWeather-compatible HTTP) or
//! from fixture files named `{lat:.2}_{lon:.2}.json`.

use std::path::PathBuf;

use evote_core::turnout::WeatherObservation;
use evote_core::weather::{check_coordinates, fixture_file_name, parse_current_conditions, WeatherParseError};
use serde::Serialize;
use thiserror::Error;

use crate::config::{GatewayConfig, WeatherMode};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("weather service unreachable after {attempts} attempts: {detail}")]
    Unreachable { attempts: u32, detail: String },
    #[error("weather service answered {status}: {detail}")]
    BadStatus { status: u16, detail: String },
    #[error("malformed weather response: {0}")]
    MalformedResponse(String),
    #[error("no weather fixture {0}")]
    FixtureNotFound(PathBuf),
    #[error("coordinates ({lat}, {lon}) out of range")]
    InvalidCoordinates { lat: f64, lon: f64 },
}

impl From<WeatherParseError> for GatewayError {
    fn from(e: WeatherParseError) -> Self {
        match e {
            WeatherParseError::InvalidCoordinates { lat, lon } => GatewayError::InvalidCoordinates { lat, lon },
            WeatherParseError::Malformed(m) => GatewayError::MalformedResponse(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Health {
    pub ok: bool,
    pub mode: WeatherMode,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct WeatherGateway {
    config: GatewayConfig,
    client: reqwest::Client,
}

impl WeatherGateway {
    pub fn new(config: GatewayConfig) -> Self {
        let client = reqwest::Client::builder()
            .timeout(config.timeout())
            .build()
            .expect("static client configuration");
        Self { config, client }
    }

    pub fn config(&self) -> &GatewayConfig {
        &self.config
    }

    pub async fn fetch_current(&self, lat: f64, lon: f64, now: u64) -> Result<WeatherObservation, GatewayError> {
        check_coordinates(lat, lon)?;
        let body = match self.config.mode {
            WeatherMode::Fixture => self.read_fixture(lat, lon)?,
            WeatherMode::Live => self.get_live(lat, lon).await?,
        };
        Ok(parse_current_conditions(&body, lat, lon, now)?)
    }

    fn read_fixture(&self, lat: f64, lon: f64) -> Result<Vec<u8>, GatewayError> {
        let dir = self.config.fixture_dir.clone().unwrap_or_default();
        let path = dir.join(fixture_file_name(lat, lon));
        std::fs::read(&path).map_err(|_| GatewayError::FixtureNotFound(path))
    }

    fn url(&self) -> String {
        format!("{}/data/2.5/weather", self.config.base_url.trim_end_matches('/'))
    }

    async fn get_live(&self, lat: f64, lon: f64) -> Result<Vec<u8>, GatewayError> {
        let key = self.config.api_key.clone().unwrap_or_default();
        let attempts = self.config.retries + 1;
        let mut last = String::new();
        for attempt in 1..=attempts {
            let sent = self
                .client
                .get(self.url())
                .query(&[("lat", lat.to_string()), ("lon", lon.to_string()), ("appid", key.clone())])
                .send()
                .await;
            match sent {
                Ok(resp) if resp.status().is_success() => {
                    return resp
                        .bytes()
                        .await
                        .map(|b| b.to_vec())
                        .map_err(|e| GatewayError::MalformedResponse(e.to_string()));
                }
                Ok(resp) => {
                    let status = resp.status().as_u16();
                    let detail = if status == 401 {
                        "invalid key".to_string()
                    } else {
                        resp.text().await.unwrap_or_default().chars().take(200).collect()
                    };
                    return Err(GatewayError::BadStatus { status, detail });
                }
                Err(e) => {
                    log::warn!("weather request attempt {attempt}/{attempts} failed: {e}");
                    last = e.to_string();
                }
            }
        }
        Err(GatewayError::Unreachable { attempts, detail: last })
    }

    /// Never fails; problems are reported in the result.
    pub async fn healthcheck(&self) -> Health {
        let mode = self.config.mode;
        let (ok, detail) = match mode {
            WeatherMode::Fixture => match &self.config.fixture_dir {
                Some(dir) => match std::fs::read_dir(dir) {
                    Ok(_) => (true, format!("fixture dir {} readable", dir.display())),
                    Err(e) => (false, format!("fixture dir {}: {e}", dir.display())),
                },
                None => (false, "no fixture dir configured".to_string()),
            },
            WeatherMode::Live => match self.get_live(0.0, 0.0).await {
                Ok(_) => (true, "live endpoint reachable".to_string()),
                Err(GatewayError::BadStatus { status: 401, .. }) => (false, "invalid key".to_string()),
                Err(e) => (false, e.to_string()),
            },
        };
        Health { ok, mode, detail }
    }
}
