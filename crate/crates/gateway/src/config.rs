//! Gateway configuration: built-in defaults, then a TOML file, then
//! `MAGBOT_*` environment variables, then command-line flags.

use std::path::Path;

use anyhow::{bail, Context};
use magbot_core::inspection::InspectionConfig;
use serde::{Deserialize, Serialize};

use crate::session::Limits;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub server: ServerConfig,
    pub limits: LimitsConfig,
    pub inspection: InspectionConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
    pub telemetry_hz: f64,
    /// Simulated seconds per wall-clock second.
    pub realtime_factor: f64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8765,
            telemetry_hz: 20.0,
            realtime_factor: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LimitsConfig {
    pub v_max: f64,
    pub max_angle_deg: f64,
}

impl Default for LimitsConfig {
    fn default() -> Self {
        let l = Limits::default();
        Self {
            v_max: l.v_max,
            max_angle_deg: l.max_angle_deg,
        }
    }
}

impl LimitsConfig {
    pub fn limits(&self) -> Limits {
        Limits {
            v_max: self.v_max,
            max_angle_deg: self.max_angle_deg,
        }
    }
}

/// Environment variables read by [`Config::apply_env`].
pub const ENV_VARS: [&str; 6] = [
    "MAGBOT_BIND",
    "MAGBOT_PORT",
    "MAGBOT_TELEMETRY_HZ",
    "MAGBOT_REALTIME_FACTOR",
    "MAGBOT_V_MAX",
    "MAGBOT_MAX_ANGLE_DEG",
];

fn parse<T: std::str::FromStr>(name: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("{name}={value:?}: {e}"))
}

impl Config {
    pub fn from_toml(text: &str) -> anyhow::Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Defaults, overlaid by `path` when given.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing {}", p.display()))
            }
        }
    }

    /// Overlays variables from `lookup` (normally `std::env::var`).
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> anyhow::Result<()> {
        if let Some(v) = lookup("MAGBOT_BIND") {
            self.server.bind = v;
        }
        if let Some(v) = lookup("MAGBOT_PORT") {
            self.server.port = parse("MAGBOT_PORT", &v)?;
        }
        if let Some(v) = lookup("MAGBOT_TELEMETRY_HZ") {
            self.server.telemetry_hz = parse("MAGBOT_TELEMETRY_HZ", &v)?;
        }
        if let Some(v) = lookup("MAGBOT_REALTIME_FACTOR") {
            self.server.realtime_factor = parse("MAGBOT_REALTIME_FACTOR", &v)?;
        }
        if let Some(v) = lookup("MAGBOT_V_MAX") {
            self.limits.v_max = parse("MAGBOT_V_MAX", &v)?;
        }
        if let Some(v) = lookup("MAGBOT_MAX_ANGLE_DEG") {
            self.limits.max_angle_deg = parse("MAGBOT_MAX_ANGLE_DEG", &v)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let s = &self.server;
        if !(s.telemetry_hz > 0.0 && s.telemetry_hz <= 1000.0) {
            bail!(
                "server.telemetry_hz must be in (0, 1000] (got {})",
                s.telemetry_hz
            );
        }
        if !(s.realtime_factor > 0.0) {
            bail!(
                "server.realtime_factor must be > 0 (got {})",
                s.realtime_factor
            );
        }
        let l = &self.limits;
        if !(l.v_max > 0.0) {
            bail!("limits.v_max must be > 0 (got {})", l.v_max);
        }
        if !(l.max_angle_deg > 0.0 && l.max_angle_deg <= 90.0) {
            bail!(
                "limits.max_angle_deg must be in (0, 90] (got {})",
                l.max_angle_deg
            );
        }
        if !(self.inspection.merge_radius > 0.0 && self.inspection.max_skew >= 0.0) {
            bail!("inspection.merge_radius must be > 0 and max_skew >= 0");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    #[test]
    fn layering() {
        let mut c =
            Config::from_toml("[server]\nport = 9000\ntelemetry_hz = 10\n[limits]\nv_max = 0.15\n")
                .unwrap();
        assert_eq!(c.server.port, 9000);
        assert_eq!(c.server.bind, "127.0.0.1");
        let env: HashMap<&str, &str> = [("MAGBOT_PORT", "9100"), ("MAGBOT_V_MAX", "0.1")].into();
        c.apply_env(|k| env.get(k).map(|v| v.to_string())).unwrap();
        assert_eq!(c.server.port, 9100);
        assert_eq!(c.server.telemetry_hz, 10.0);
        assert_eq!(c.limits.v_max, 0.1);
        c.validate().unwrap();
    }

    #[test]
    fn bad_values_are_reported() {
        assert!(Config::from_toml("[server]\nport = \"x\"").is_err());
        assert!(Config::from_toml("[serverr]\nport = 1").is_err());
        let mut c = Config::default();
        let err = c
            .apply_env(|k| (k == "MAGBOT_PORT").then(|| "99999".into()))
            .unwrap_err();
        assert!(err.to_string().contains("MAGBOT_PORT"));
        c.limits.max_angle_deg = 120.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn shipped_config_parses() {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/gateway.toml");
        let c = Config::load(Some(&path)).unwrap();
        c.validate().unwrap();
    }
}
