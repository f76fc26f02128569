//! Flat `key = value` run configuration.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use distcomp::nn::{TrainConfig, TransformConfig};
use distcomp::HistogramSpec;

/// Every accepted key with its default. `spec.y_min`/`spec.y_max` override
/// `spec.bins` when both are set; `train.val_images = 0` holds out an eighth
/// of the data for validation.
const DEFAULTS: &[(&str, &str)] = &[
    ("spec.bins", "128"),
    ("spec.y_min", ""),
    ("spec.y_max", ""),
    ("model.kind", "learned"),
    ("model.K_g", "2"),
    ("model.N_q", "32"),
    ("model.M_q", "16"),
    ("model.kernel", "15"),
    ("model.groups", "8"),
    ("train.lr", "1e-4"),
    ("train.batch", "16"),
    ("train.seed", "0"),
    ("train.lambda_q", "1"),
    ("train.max_steps", "4000"),
    ("train.plateau_patience", "10"),
    ("train.eval_every", "100"),
    ("train.val_images", "0"),
    ("corpus.channels", "32"),
    ("corpus.images", "256"),
    ("corpus.height", "32"),
    ("corpus.width", "32"),
    ("corpus.downscale", "16"),
    ("corpus.seed", "0"),
    ("corpus.max_shift", "6"),
    ("corpus.max_scale", "2"),
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Default for Config {
    fn default() -> Self {
        Self { values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect() }
    }
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(ConfigError(format!("unknown config key `{key}`"))),
        }
    }

    /// Applies a `key=value` assignment.
    pub fn assign(&mut self, line: &str) -> Result<(), ConfigError> {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| ConfigError(format!("expected key=value, got `{line}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Parses a config file body; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).map_err(|e| ConfigError(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T, ConfigError> {
        let raw = self.values.get(key).ok_or_else(|| ConfigError(format!("unknown config key `{key}`")))?;
        raw.parse().map_err(|_| ConfigError(format!("invalid value `{raw}` for `{key}`")))
    }

    fn get_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, ConfigError> {
        match self.values.get(key).map(String::as_str) {
            None | Some("") => Ok(None),
            Some(_) => self.get(key).map(Some),
        }
    }

    pub fn spec(&self) -> Result<HistogramSpec, ConfigError> {
        let err = |e: distcomp::Error| ConfigError(e.to_string());
        match (self.get_opt::<i32>("spec.y_min")?, self.get_opt::<i32>("spec.y_max")?) {
            (Some(lo), Some(hi)) => HistogramSpec::new(lo, hi).map_err(err),
            (None, None) => HistogramSpec::centered(self.get("spec.bins")?).map_err(err),
            _ => Err(ConfigError("spec.y_min and spec.y_max must be set together".into())),
        }
    }

    pub fn transform(&self, channels: usize, bins: usize) -> Result<TransformConfig, ConfigError> {
        let cfg = TransformConfig {
            channels,
            n_q: self.get("model.N_q")?,
            m_q: self.get("model.M_q")?,
            kernel: self.get("model.kernel")?,
            groups: self.get("model.groups")?,
            bins,
        };
        cfg.validate().map_err(|e| ConfigError(e.to_string()))?;
        Ok(cfg)
    }

    pub fn train(&self) -> Result<TrainConfig, ConfigError> {
        Ok(TrainConfig {
            lr: self.get("train.lr")?,
            batch_size: self.get("train.batch")?,
            seed: self.get("train.seed")?,
            lambda_q: self.get("train.lambda_q")?,
            max_steps: self.get("train.max_steps")?,
            plateau_patience: self.get("train.plateau_patience")?,
            eval_every: self.get("train.eval_every")?,
            ..TrainConfig::default()
        })
    }

    /// The fully resolved configuration, one `key=value` per line.
    pub fn render(&self) -> String {
        self.values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let mut c = Config::default();
        c.apply_text("# comment\ntrain.lr = 0.01\n\nspec.bins=64 # trailing\n").unwrap();
        c.assign("train.seed=9").unwrap();
        assert_eq!(c.get::<f64>("train.lr").unwrap(), 0.01);
        assert_eq!(c.get::<u64>("train.seed").unwrap(), 9);
        assert_eq!(c.spec().unwrap(), HistogramSpec::centered(64).unwrap());
    }

    #[test]
    fn rejects_unknown_and_malformed() {
        let mut c = Config::default();
        assert!(c.apply_text("train.speed = 3").is_err());
        assert!(c.assign("no equals sign").is_err());
        c.set("train.lr", "fast").unwrap();
        assert!(c.train().is_err());
        c.set("spec.y_min", "-3").unwrap();
        assert!(c.spec().is_err());
    }

    #[test]
    fn explicit_support() {
        let mut c = Config::default();
        c.set("spec.y_min", "-5").unwrap();
        c.set("spec.y_max", "10").unwrap();
        assert_eq!(c.spec().unwrap(), HistogramSpec::new(-5, 10).unwrap());
    }

    #[test]
    fn render_lists_every_key() {
        let text = Config::default().render();
        assert_eq!(text.lines().count(), DEFAULTS.len());
        let mut again = Config::default();
        again.apply_text(&text).unwrap();
        assert_eq!(again, Config::default());
    }
}
