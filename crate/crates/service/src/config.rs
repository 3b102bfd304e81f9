//! Service configuration: a TOML file plus `WEATHER_*` environment overrides.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use evote_core::identity::DEFAULT_MATCH_THRESHOLD;
use evote_core::system::{Role, SystemConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeatherMode {
    Live,
    Fixture,
}

impl std::str::FromStr for WeatherMode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "live" => Ok(WeatherMode::Live),
            "fixture" => Ok(WeatherMode::Fixture),
            other => Err(ConfigError::Invalid(format!("unknown weather mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub mode: WeatherMode,
    pub base_url: String,
    pub api_key: Option<String>,
    pub fixture_dir: Option<PathBuf>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            mode: WeatherMode::Fixture,
            base_url: "https://api.openweathermap.org".into(),
            api_key: None,
            fixture_dir: Some(PathBuf::from("fixtures/weather")),
            timeout_secs: 5,
            retries: 2,
        }
    }
}

impl GatewayConfig {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        match self.mode {
            WeatherMode::Live if self.api_key.as_deref().is_none_or(str::is_empty) => {
                Err(ConfigError::Invalid("live weather mode requires api_key".into()))
            }
            WeatherMode::Fixture if self.fixture_dir.is_none() => {
                Err(ConfigError::Invalid("fixture weather mode requires fixture_dir".into()))
            }
            _ if self.timeout_secs == 0 => Err(ConfigError::Invalid("weather timeout must be positive".into())),
            _ if self.retries > 10 => Err(ConfigError::Invalid("weather retries above 10".into())),
            _ => Ok(()),
        }
    }

    /// Applies `WEATHER_MODE`, `WEATHER_API_KEY`, `WEATHER_BASE_URL` and
    /// `WEATHER_FIXTURE_DIR` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), ConfigError> {
        if let Some(mode) = lookup("WEATHER_MODE") {
            self.mode = mode.parse()?;
        }
        if let Some(key) = lookup("WEATHER_API_KEY") {
            self.api_key = Some(key);
        }
        if let Some(url) = lookup("WEATHER_BASE_URL") {
            self.base_url = url;
        }
        if let Some(dir) = lookup("WEATHER_FIXTURE_DIR") {
            self.fixture_dir = Some(dir.into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TokenConfig {
    pub session_ttl_secs: u64,
    pub qr_ttl_secs: u64,
    pub match_threshold: f64,
}

impl Default for TokenConfig {
    fn default() -> Self {
        let d = SystemConfig::default();
        Self {
            session_ttl_secs: d.session_ttl_secs,
            qr_ttl_secs: d.qr_ttl_secs,
            match_threshold: DEFAULT_MATCH_THRESHOLD,
        }
    }
}

/// A staff member whose role is granted at startup. The NIC still has to be
/// enrolled biometrically before it can open a session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaffEntry {
    pub nic: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: SocketAddr,
    pub data_dir: PathBuf,
    /// Seed for models trained at startup when no model file is configured.
    pub seed: u64,
    /// Journal batches between snapshots.
    pub snapshot_every: u64,
    pub turnout_model: Option<PathBuf>,
    pub violence_model: Option<PathBuf>,
    /// Per-area history CSV ranked by the violence endpoint.
    pub area_history: Option<PathBuf>,
    /// Historical attendance CSV used to build projection curves.
    pub attendance_history: Option<PathBuf>,
    pub tokens: TokenConfig,
    pub weather: GatewayConfig,
    pub staff: Vec<StaffEntry>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".parse().expect("literal address"),
            data_dir: PathBuf::from("data"),
            seed: 42,
            snapshot_every: 500,
            turnout_model: None,
            violence_model: None,
            area_history: None,
            attendance_history: None,
            tokens: TokenConfig::default(),
            weather: GatewayConfig::default(),
            staff: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Reads `path` (defaults when `None`), applies process environment
    /// overrides and validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                    path: p.to_path_buf(),
                    source,
                })?;
                Self::from_toml(&text)?
            }
            None => Self::default(),
        };
        config.weather.apply_env(|k| std::env::var(k).ok())?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.weather.validate()?;
        let t = &self.tokens;
        if t.session_ttl_secs == 0 || t.qr_ttl_secs == 0 {
            return Err(ConfigError::Invalid("token TTLs must be positive".into()));
        }
        if !(t.match_threshold > 0.0 && t.match_threshold <= 1.0) {
            return Err(ConfigError::Invalid("match_threshold must be in (0,1]".into()));
        }
        if self.snapshot_every == 0 {
            return Err(ConfigError::Invalid("snapshot_every must be positive".into()));
        }
        Ok(())
    }

    pub fn system_config(&self) -> SystemConfig {
        SystemConfig {
            match_threshold: self.tokens.match_threshold,
            session_ttl_secs: self.tokens.session_ttl_secs,
            qr_ttl_secs: self.tokens.qr_ttl_secs,
        }
    }
}
