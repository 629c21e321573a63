use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::seq::{Architecture, ModelKind};

/// Everything needed to reproduce a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub window_len: usize,
    pub d: usize,
    pub heads: usize,
    pub hidden: usize,
    pub mlp_hidden: [usize; 2],
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Windows drawn per epoch; 0 means one per training window.
    pub epoch_samples: usize,
    pub seed: u64,
    /// Expected share of positive windows in each sampled epoch.
    pub positive_fraction: f64,
    /// Decision threshold, set by validation.
    pub threshold: Option<f64>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let arch = Architecture::default();
        ModelConfig {
            kind: arch.kind,
            window_len: arch.window_len,
            d: arch.d,
            heads: arch.heads,
            hidden: arch.hidden,
            mlp_hidden: arch.mlp_hidden,
            lr: 1e-3,
            batch_size: 256,
            epochs: 10,
            epoch_samples: 0,
            seed: 0,
            positive_fraction: 0.25,
            threshold: None,
        }
    }
}

const KEYS: [&str; 13] = [
    "model",
    "window_len",
    "d",
    "heads",
    "hidden",
    "mlp_hidden",
    "lr",
    "batch_size",
    "epochs",
    "epoch_samples",
    "seed",
    "positive_fraction",
    "threshold",
];

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture {
            kind: self.kind,
            window_len: self.window_len,
            d: self.d,
            heads: self.heads,
            hidden: self.hidden,
            mlp_hidden: self.mlp_hidden,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("window_len", self.window_len),
            ("d", self.d),
            ("heads", self.heads),
            ("hidden", self.hidden),
            ("mlp_hidden", self.mlp_hidden[0].min(self.mlp_hidden[1])),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{name}` must be positive")));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.positive_fraction > 0.0 && self.positive_fraction < 1.0) {
            return Err(Error::Config(format!(
                "positive_fraction {} must lie in (0, 1)",
                self.positive_fraction
            )));
        }
        if let Some(t) = self.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Ordered `(key, value)` pairs; floats print in round-trip form.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let values = [
            self.kind.to_string(),
            self.window_len.to_string(),
            self.d.to_string(),
            self.heads.to_string(),
            self.hidden.to_string(),
            format!("{},{}", self.mlp_hidden[0], self.mlp_hidden[1]),
            self.lr.to_string(),
            self.batch_size.to_string(),
            self.epochs.to_string(),
            self.epoch_samples.to_string(),
            self.seed.to_string(),
            self.positive_fraction.to_string(),
            self.threshold.map_or_else(|| "none".to_string(), |t| t.to_string()),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            writeln!(out, "{k}={v}").unwrap();
        }
        out
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "model" => self.kind = value.parse()?,
            "window_len" => self.window_len = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "heads" => self.heads = parse_num(key, value)?,
            "hidden" => self.hidden = parse_num(key, value)?,
            "mlp_hidden" => {
                let parts: Vec<&str> = value.split(',').collect();
                let [a, b] = parts.as_slice() else {
                    return Err(Error::Config(format!("mlp_hidden `{value}` must be two sizes")));
                };
                self.mlp_hidden = [parse_num(key, a.trim())?, parse_num(key, b.trim())?];
            }
            "lr" => self.lr = parse_num(key, value)?,
            "batch_size" => self.batch_size = parse_num(key, value)?,
            "epochs" => self.epochs = parse_num(key, value)?,
            "epoch_samples" => self.epoch_samples = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "positive_fraction" => self.positive_fraction = parse_num(key, value)?,
            "threshold" => {
                self.threshold = match value {
                    "none" => None,
                    v => Some(parse_num(key, v)?),
                }
            }
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Reads flat `key=value` text over the defaults. Blank lines and `#` comments are skipped.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value", i + 1)));
            };
            if !seen.insert(k.trim().to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key `{}`", i + 1, k.trim())));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", i + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
