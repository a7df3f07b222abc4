//! Experiment configs and their digest.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use levyforest::mechanism::MechanismSpec;

use crate::error::{CliError, Result};

const MECHANISM_KEYS: [&str; 4] = ["alpha", "beta", "levy", "normalized_stable"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of every output file.
    pub name: String,
    pub kind: String,
    pub seed: u64,
    pub mechanism: MechanismSpec,
    /// Discretization scale.
    #[serde(default = "default_n")]
    pub n: u32,
    /// Trees, forests or pairs, depending on the kind.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "empty_object")]
    pub params: Value,
}

fn default_n() -> u32 {
    100
}

fn default_samples() -> usize {
    1
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

impl ExperimentConfig {
    /// Parses and validates a config; `seed_override` replaces the seed.
    pub fn from_json(text: &str, seed_override: Option<u64>) -> Result<Self> {
        let raw: Value = serde_json::from_str(text).map_err(|e| CliError::Schema(format!("invalid JSON: {e}")))?;
        if let Some(Value::Object(m)) = raw.get("mechanism") {
            if let Some(k) = m.keys().find(|k| !MECHANISM_KEYS.contains(&k.as_str())) {
                return Err(CliError::Schema(format!(
                    "mechanism: unknown field `{k}`, expected one of {}",
                    MECHANISM_KEYS.join(", ")
                )));
            }
        }
        let mut cfg: Self = serde_json::from_value(raw).map_err(|e| CliError::Schema(e.to_string()))?;
        if let Some(s) = seed_override {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let ok_name = !self.name.is_empty()
            && !self.name.starts_with('.')
            && self.name.chars().all(|c| c.is_ascii_alphanumeric() || "._-".contains(c));
        if !ok_name {
            return Err(CliError::Schema(format!("name `{}` must match [A-Za-z0-9._-]+", self.name)));
        }
        if self.n == 0 {
            return Err(CliError::Schema("n must be at least 1".into()));
        }
        if self.samples == 0 {
            return Err(CliError::Schema("samples must be at least 1".into()));
        }
        if !self.params.is_object() {
            return Err(CliError::Schema("params must be an object".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the effective config as compact JSON with sorted keys.
    pub fn digest(&self) -> String {
        let v = serde_json::to_value(self).expect("config serializes");
        hex::encode(Sha256::digest(canonical(&v).as_bytes()))
    }

    /// Kind-specific parameters, with `#[serde(default)]` filling gaps.
    pub fn params<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.params.clone())
            .map_err(|e| CliError::Schema(format!("params for kind `{}`: {e}", self.kind)))
    }
}

/// Compact JSON with object keys sorted at every depth.
pub fn canonical(v: &Value) -> String {
    match v {
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            let body: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", Value::String(k.clone()), canonical(&m[k])))
                .collect();
            format!("{{{}}}", body.join(","))
        }
        Value::Array(a) => format!("[{}]", a.iter().map(canonical).collect::<Vec<_>>().join(",")),
        other => other.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"name":"t","kind":"sample","seed":3,"mechanism":{"beta":1.0}}"#;

    #[test]
    fn defaults_and_override() {
        let c = ExperimentConfig::from_json(BASE, None).unwrap();
        assert_eq!((c.n, c.samples, c.seed), (100, 1, 3));
        let d = ExperimentConfig::from_json(BASE, Some(9)).unwrap();
        assert_eq!(d.seed, 9);
        assert_ne!(c.digest(), d.digest());
    }

    #[test]
    fn digest_ignores_key_order() {
        let a = ExperimentConfig::from_json(BASE, None).unwrap();
        let b = ExperimentConfig::from_json(
            r#"{"mechanism":{"beta":1.0},"seed":3,"kind":"sample","name":"t","n":100}"#,
            None,
        )
        .unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        for bad in [
            r#"{"name":"t","kind":"sample","seed":3,"mechanism":{"beta":1.0},"extra":1}"#,
            r#"{"name":"t","kind":"sample","seed":3,"mechanism":{"betta":1.0}}"#,
            r#"{"name":"../x","kind":"sample","seed":3,"mechanism":{"beta":1.0}}"#,
            r#"{"name":"t","kind":"sample","seed":-1,"mechanism":{"beta":1.0}}"#,
            r#"{"name":"t","kind":"sample","seed":3,"mechanism":{"beta":1.0},"samples":0}"#,
            r#"{"name":"t","kind":"sample","seed":3,"mechanism":{"beta":1.0},"params":[]}"#,
            "not json",
        ] {
            assert!(matches!(ExperimentConfig::from_json(bad, None), Err(CliError::Schema(_))), "{bad}");
        }
    }

    #[test]
    fn canonical_sorts_nested_keys() {
        let v: Value = serde_json::from_str(r#"{"b":[{"z":1,"a":2}],"a":null}"#).unwrap();
        assert_eq!(canonical(&v), r#"{"a":null,"b":[{"a":2,"z":1}]}"#);
    }
}
