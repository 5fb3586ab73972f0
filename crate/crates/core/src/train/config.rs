use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{ArchSpec, InputShape};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFormat {
    /// MNIST-style IDX files under their standard names.
    Idx,
    /// CIFAR-10 binary batches (`data_batch_{1..5}.bin`, `test_batch.bin`).
    Cifar,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub format: DataFormat,
    pub dir: PathBuf,
    /// Keep only the first `n` training samples of each class.
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    /// Random crop and horizontal flip on training batches.
    pub augment: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            format: DataFormat::Idx,
            dir: PathBuf::from("data/mnist"),
            train_per_class: None,
            test_per_class: None,
            augment: false,
        }
    }
}

/// Every knob of a training run. Defaults are the "desk" preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CmimConfig {
    pub arch: ArchSpec,
    pub lambda: f64,
    pub beta: f64,
    /// Critic temperature per embedding dimension; a tapped layer of width
    /// `D` scores with `τ·D`.
    pub tau: f64,
    /// Divide the critic by a per-layer constant fixed on the first
    /// contrastive batch. `false` gives the bare critic.
    pub normalize_critic: bool,
    pub n_nce: usize,
    /// Normalizing pair count; the training-set size when unset.
    pub m_pairs: Option<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub data: DataConfig,
    pub output_dir: PathBuf,
    /// Also keep a checkpoint every this many epochs (0: only the latest).
    pub checkpoint_every: usize,
    /// Quantization bins of the per-epoch MI diagnostic.
    pub mi_bins: usize,
    /// Held-out samples used by diagnostics.
    pub diag_samples: usize,
}

impl Default for CmimConfig {
    fn default() -> Self {
        CmimConfig {
            arch: ArchSpec::mlp(&[784, 512, 512, 10]).with_input(InputShape {
                channels: 1,
                height: 28,
                width: 28,
            }),
            lambda: 0.8,
            beta: 2.0,
            tau: 0.3,
            normalize_critic: true,
            n_nce: 1024,
            m_pairs: None,
            epochs: 20,
            batch_size: 64,
            lr0: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 0,
            data: DataConfig::default(),
            output_dir: PathBuf::from("runs/desk"),
            checkpoint_every: 0,
            mi_bins: 4,
            diag_samples: 512,
        }
    }
}

impl CmimConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: CmimConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Loads a config file (or the defaults) and applies `key=value`
    /// overrides; dotted keys reach into nested objects and values are parsed
    /// as JSON when possible, otherwise taken as strings.
    pub fn load_with_overrides(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => serde_json::to_value(CmimConfig::default()).expect("config serializes"),
        };
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: CmimConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: CmimConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.beta > 1.0 && self.beta.is_finite()) {
            return bad(format!("beta must exceed 1, got {}", self.beta));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if self.n_nce == 0 {
            return bad("n_nce must be at least 1".into());
        }
        if let Some(m) = self.m_pairs {
            if m < self.n_nce {
                return bad(format!("m_pairs = {m} is smaller than n_nce = {}", self.n_nce));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2".into());
        }
        if !(self.lr0 >= 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be non-negative, got {}", self.lr0));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.mi_bins < 2 {
            return bad("mi_bins must be at least 2".into());
        }
        if self.diag_samples < 2 {
            return bad("diag_samples must be at least 2".into());
        }
        if self.arch.input.features() == 0 {
            return bad("input shape is empty".into());
        }
        self.arch.resolve()?;
        Ok(())
    }

    /// SHA-256 over everything that influences results (the output location
    /// and checkpoint cadence excluded).
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        c.checkpoint_every = 0;
        let digest = Sha256::digest(serde_json::to_vec(&c).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn apply_override(root: &mut serde_json::Value, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut node = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        node = obj
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    Err(Error::Config(format!("empty override key in `{item}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults() {
        let c = CmimConfig::default();
        assert_eq!((c.lambda, c.beta, c.tau, c.n_nce, c.batch_size, c.epochs), (0.8, 2.0, 0.3, 1024, 64, 20));
        assert!(c.normalize_critic);
        assert_eq!(c.arch.tap_layers, vec![1, 2]);
        c.validate().unwrap();
    }

    #[test]
    fn round_trip() {
        let c = CmimConfig::default();
        assert_eq!(CmimConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(CmimConfig::from_json(r#"{"lamda": 0.5}"#), Err(Error::Config(_))));
        assert!(matches!(CmimConfig::from_json(r#"{"data": {"dirr": "x"}}"#), Err(Error::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        for bad in [r#"{"beta": 1.0}"#, r#"{"tau": 0}"#, r#"{"n_nce": 0}"#, r#"{"epochs": 0}"#] {
            assert!(CmimConfig::from_json(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn overrides() {
        let c = CmimConfig::load_with_overrides(
            None,
            &["lambda=0".into(), "data.dir=/tmp/x".into(), "data.train_per_class=5".into()],
        )
        .unwrap();
        assert_eq!(c.lambda, 0.0);
        assert_eq!(c.data.dir, PathBuf::from("/tmp/x"));
        assert_eq!(c.data.train_per_class, Some(5));
        assert!(CmimConfig::load_with_overrides(None, &["bogus=1".into()]).is_err());
        assert!(CmimConfig::load_with_overrides(None, &["lambda".into()]).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = CmimConfig::default();
        let mut b = a.clone();
        b.output_dir = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }
}
