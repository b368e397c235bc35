//! Run configuration: a flat `key = value` text file.
//!
//! Every key has a default. Setting `dataset` first loads that dataset's
//! hyperparameter preset; any other keys in the same file override it.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("config line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("config line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("config key {key}: {message}")]
    Invalid { key: &'static str, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Optimizer {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerKind {
    /// `q(u) ∝ ‖Â(:,u)‖²`
    Importance,
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PrototypeSet {
    All,
    Train,
}

/// What `epochs` counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetUnit {
    /// Full passes over the shuffled training nodes.
    Epochs,
    /// Individual minibatch updates.
    Steps,
}

macro_rules! keyword_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn as_str(self) -> &'static str {
                match self { $($ty::$variant => $name),+ }
            }
        }
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(format!("unknown value {other:?}, expected one of: {}", [$($name),+].join(", "))),
                }
            }
        }
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result { f.write_str(self.as_str()) }
        }
    };
}

keyword_enum!(Optimizer { Sgd => "sgd", Adam => "adam" });
keyword_enum!(SamplerKind { Importance => "importance", Uniform => "uniform" });
keyword_enum!(PrototypeSet { All => "all", Train => "train" });
keyword_enum!(BudgetUnit { Epochs => "epochs", Steps => "steps" });

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub image_size: (usize, usize),
    pub quantization_threshold: f64,
    pub merge_threshold: f64,
    pub descriptor_dim: usize,
    pub ratio_threshold: f64,
    pub min_region_matches: usize,
    pub tau: f64,
    pub epochs: usize,
    pub budget_unit: BudgetUnit,
    pub hidden_size: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub sample_size_fraction: f64,
    pub optimizer: Optimizer,
    pub sampler: SamplerKind,
    pub prototypes: PrototypeSet,
    pub standardize_features: bool,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_dataset("eth80").expect("eth80 preset exists")
    }
}

/// Names accepted by the `dataset` key.
pub const DATASET_PRESETS: &[&str] = &["eth80", "coil100", "aloi", "toy"];

impl RunConfig {
    /// Shared front-end/matching settings plus the named dataset's training
    /// row: `(epochs, hidden, learning rate, l2, batch, tau)`. The toy preset
    /// also standardizes feature rows.
    pub fn for_dataset(name: &str) -> Option<Self> {
        let (epochs, hidden_size, learning_rate, l2, batch_size, tau) = match name {
            "eth80" => (30000, 256, 0.1, 0.0, 1024, 0.2),
            "coil100" => (10000, 512, 0.1, 0.0, 1024, 0.1),
            "aloi" => (5000, 128, 0.1, 0.0, 256, 0.2),
            "toy" => (300, 32, 0.05, 0.0, 16, 0.9),
            _ => return None,
        };
        Some(Self {
            dataset: name.to_string(),
            image_size: (150, 150),
            quantization_threshold: 300.0,
            merge_threshold: 0.4,
            descriptor_dim: 128,
            ratio_threshold: 0.6,
            min_region_matches: 3,
            tau,
            epochs,
            budget_unit: BudgetUnit::Epochs,
            hidden_size,
            learning_rate,
            l2,
            batch_size,
            sample_size_fraction: 0.5,
            optimizer: Optimizer::Sgd,
            sampler: SamplerKind::Importance,
            prototypes: PrototypeSet::All,
            standardize_features: name == "toy",
            seed: 1,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut entries = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("expected `key = value`, found {content:?}"),
            })?;
            entries.push((line, key.trim().to_string(), value.trim().to_string()));
        }
        let mut cfg = match entries.iter().find(|(_, k, _)| k == "dataset") {
            Some((line, _, name)) => Self::for_dataset(name).ok_or_else(|| ConfigError::Syntax {
                line: *line,
                message: format!("unknown dataset {name:?}, expected one of {}", DATASET_PRESETS.join(", ")),
            })?,
            None => Self::default(),
        };
        for (line, key, value) in &entries {
            cfg.set(key, value).map_err(|e| match e {
                SetError::UnknownKey => ConfigError::UnknownKey { line: *line, key: key.clone() },
                SetError::BadValue(message) => ConfigError::Syntax { line: *line, message: format!("{key}: {message}") },
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override. Used by the parser and by CLI flags.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), SetError> {
        fn num<T: FromStr>(v: &str) -> Result<T, SetError>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| SetError::BadValue(format!("{v:?}: {e}")))
        }
        fn kw<T: FromStr<Err = String>>(v: &str) -> Result<T, SetError> {
            v.parse::<T>().map_err(SetError::BadValue)
        }
        match key {
            "dataset" => {
                if !DATASET_PRESETS.contains(&value) {
                    return Err(SetError::BadValue(format!("unknown dataset {value:?}")));
                }
                self.dataset = value.to_string();
            }
            "image_size" => {
                let (w, h) = value
                    .split_once('x')
                    .ok_or_else(|| SetError::BadValue(format!("expected WIDTHxHEIGHT, found {value:?}")))?;
                self.image_size = (num(w.trim())?, num(h.trim())?);
            }
            "quantization_threshold" => self.quantization_threshold = num(value)?,
            "merge_threshold" => self.merge_threshold = num(value)?,
            "descriptor_dim" => self.descriptor_dim = num(value)?,
            "ratio_threshold" => self.ratio_threshold = num(value)?,
            "min_region_matches" => self.min_region_matches = num(value)?,
            "tau" => self.tau = num(value)?,
            "epochs" => self.epochs = num(value)?,
            "budget_unit" => self.budget_unit = kw(value)?,
            "hidden_size" => self.hidden_size = num(value)?,
            "learning_rate" => self.learning_rate = num(value)?,
            "l2" => self.l2 = num(value)?,
            "batch_size" => self.batch_size = num(value)?,
            "sample_size_fraction" => self.sample_size_fraction = num(value)?,
            "optimizer" => self.optimizer = kw(value)?,
            "sampler" => self.sampler = kw(value)?,
            "prototypes" => self.prototypes = kw(value)?,
            "standardize_features" => self.standardize_features = num(value)?,
            "seed" => self.seed = num(value)?,
            _ => return Err(SetError::UnknownKey),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn check(ok: bool, key: &'static str, message: impl Into<String>) -> Result<(), ConfigError> {
            if ok {
                Ok(())
            } else {
                Err(ConfigError::Invalid { key, message: message.into() })
            }
        }
        let in_range = |v: f64, lo: f64, hi: f64| v.is_finite() && v >= lo && v <= hi;
        check(self.image_size.0 > 0 && self.image_size.1 > 0, "image_size", "dimensions must be positive")?;
        check(in_range(self.quantization_threshold, 0.0, 600.0), "quantization_threshold", "must lie in [0, 600]")?;
        check(in_range(self.merge_threshold, 0.0, 1.0), "merge_threshold", "must lie in [0, 1]")?;
        check(self.descriptor_dim > 0, "descriptor_dim", "must be positive")?;
        check(in_range(self.ratio_threshold, 0.0, 1.0) && self.ratio_threshold > 0.0, "ratio_threshold", "must lie in (0, 1]")?;
        check(self.min_region_matches >= 1, "min_region_matches", "must be at least 1")?;
        check(in_range(self.tau, 0.0, 1.0) && self.tau > 0.0, "tau", "must lie in (0, 1]")?;
        check(self.epochs >= 1, "epochs", "must be at least 1")?;
        check(self.hidden_size >= 1, "hidden_size", "must be at least 1")?;
        check(self.learning_rate.is_finite() && self.learning_rate >= 0.0, "learning_rate", "must be finite and non-negative")?;
        check(self.l2.is_finite() && self.l2 >= 0.0, "l2", "must be finite and non-negative")?;
        check(self.batch_size >= 1, "batch_size", "must be at least 1")?;
        check(
            in_range(self.sample_size_fraction, 0.0, 1.0) && self.sample_size_fraction > 0.0,
            "sample_size_fraction",
            "must lie in (0, 1]",
        )?;
        Ok(())
    }

    /// Canonical text form: every key, fixed order, shortest round-trip
    /// float formatting. `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let pairs: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.clone()),
            ("image_size", format!("{}x{}", self.image_size.0, self.image_size.1)),
            ("quantization_threshold", format!("{:?}", self.quantization_threshold)),
            ("merge_threshold", format!("{:?}", self.merge_threshold)),
            ("descriptor_dim", self.descriptor_dim.to_string()),
            ("ratio_threshold", format!("{:?}", self.ratio_threshold)),
            ("min_region_matches", self.min_region_matches.to_string()),
            ("tau", format!("{:?}", self.tau)),
            ("epochs", self.epochs.to_string()),
            ("budget_unit", self.budget_unit.to_string()),
            ("hidden_size", self.hidden_size.to_string()),
            ("learning_rate", format!("{:?}", self.learning_rate)),
            ("l2", format!("{:?}", self.l2)),
            ("batch_size", self.batch_size.to_string()),
            ("sample_size_fraction", format!("{:?}", self.sample_size_fraction)),
            ("optimizer", self.optimizer.to_string()),
            ("sampler", self.sampler.to_string()),
            ("prototypes", self.prototypes.to_string()),
            ("standardize_features", self.standardize_features.to_string()),
            ("seed", self.seed.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn hash(&self) -> ConfigHash {
        let digest = Sha256::digest(self.to_text().as_bytes());
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(&digest);
        ConfigHash(bytes)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetError {
    UnknownKey,
    BadValue(String),
}

impl fmt::Display for SetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SetError::UnknownKey => f.write_str("unknown key"),
            SetError::BadValue(m) => f.write_str(m),
        }
    }
}

/// SHA-256 of a config's canonical text, stamped into every artifact.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConfigHash(pub [u8; 32]);

impl ConfigHash {
    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(ConfigHash(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for ConfigHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ConfigHash({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for ConfigHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_match_published_settings() {
        let rows = [
            ("eth80", 30000, 256, 1024, 0.2),
            ("coil100", 10000, 512, 1024, 0.1),
            ("aloi", 5000, 128, 256, 0.2),
        ];
        for (name, epochs, hidden, batch, tau) in rows {
            let c = RunConfig::for_dataset(name).unwrap();
            assert_eq!((c.epochs, c.hidden_size, c.batch_size, c.tau), (epochs, hidden, batch, tau), "{name}");
            assert_eq!(c.learning_rate, 0.1);
            assert_eq!(c.l2, 0.0);
            assert_eq!(c.sample_size_fraction, 0.5);
            assert_eq!(c.image_size, (150, 150));
            assert_eq!(c.merge_threshold, 0.4);
            assert_eq!(c.descriptor_dim, 128);
            assert_eq!(c.ratio_threshold, 0.6);
            assert_eq!(c.min_region_matches, 3);
        }
    }

    #[test]
    fn text_round_trip_and_overrides() {
        let c = RunConfig::parse("dataset = coil100\n# comment\nseed = 7 # trailing\nlearning_rate = 0.01\n").unwrap();
        assert_eq!(c.tau, 0.1);
        assert_eq!(c.seed, 7);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        assert_eq!(RunConfig::parse(&c.to_text()).unwrap().hash(), c.hash());
    }

    #[test]
    fn dataset_key_applies_before_overrides_regardless_of_order() {
        let c = RunConfig::parse("tau = 0.3\ndataset = aloi\n").unwrap();
        assert_eq!(c.tau, 0.3);
        assert_eq!(c.epochs, 5000);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(RunConfig::parse("nope = 1"), Err(ConfigError::UnknownKey { line: 1, .. })));
        assert!(matches!(RunConfig::parse("tau"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(
            RunConfig::parse("quantization_threshold = 700"),
            Err(ConfigError::Invalid { key: "quantization_threshold", .. })
        ));
        assert!(matches!(RunConfig::parse("tau = 0"), Err(ConfigError::Invalid { key: "tau", .. })));
        assert!(RunConfig::parse("optimizer = rmsprop").is_err());
    }

    #[test]
    fn hash_changes_with_any_key() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed += 1;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(ConfigHash::from_hex(&a.hash().to_hex()), Some(a.hash()));
    }
}
