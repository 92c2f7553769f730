//! Serialised forms of reports and run manifests.
//!
//! Every float leaves the process with 17 significant digits so that reports
//! can be compared exactly against recomputed values.

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use crate::error::{Error, Result};

pub const TOOLKIT_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Formats `v` in scientific notation with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// An `f64` that serialises to JSON with 17 significant digits.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom(format!(
                "cannot serialise non-finite value {}",
                self.0
            )));
        }
        let raw = RawValue::from_string(fmt_f64(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for F17 {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        f64::deserialize(deserializer).map(F17)
    }
}

impl From<f64> for F17 {
    fn from(v: f64) -> Self {
        F17(v)
    }
}

/// Provenance block embedded in every output artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Fully resolved configuration, all defaults materialised. Kept as raw
    /// JSON text so float formatting survives unchanged.
    pub config: Box<RawValue>,
    pub inputs: Vec<String>,
    pub seeds: Vec<u64>,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config: &impl Serialize) -> Result<Self> {
        let text = serde_json::to_string(config).map_err(|source| Error::Json {
            context: "serialising run config".into(),
            source,
        })?;
        let config = RawValue::from_string(text).map_err(|source| Error::Json {
            context: "serialising run config".into(),
            source,
        })?;
        Ok(RunManifest {
            command: command.into(),
            config,
            inputs: Vec::new(),
            seeds: Vec::new(),
            version: TOOLKIT_VERSION.to_string(),
        })
    }

    pub fn with_inputs(mut self, inputs: impl IntoIterator<Item = impl Into<String>>) -> Self {
        self.inputs = inputs.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_seeds(mut self, seeds: impl IntoIterator<Item = u64>) -> Self {
        self.seeds = seeds.into_iter().collect();
        self
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_pretty(self, "serialising run manifest")
    }
}

pub fn to_json_pretty(v: &impl Serialize, context: &str) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|source| Error::Json {
        context: context.into(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}
