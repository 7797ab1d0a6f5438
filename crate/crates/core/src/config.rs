//! Experiment configuration and its `key=value` text form.
//!
//! ```text
//! # comment
//! head=mulcat
//! direction=causes
//! mode=full
//! epochs=30
//! ```
//!
//! Unknown or repeated keys are errors; missing keys take the defaults of
//! [`ExperimentConfig::default`]. [`ExperimentConfig::to_text`] writes every
//! key, and floats use Rust's shortest round-trip formatting, so parsing the
//! output reproduces the config exactly.

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::causality::Estimator;
use crate::error::{Error, Result};
use crate::heads::HeadConfig;

pub const KEYS: [&str; 12] = [
    "head",
    "estimator",
    "lehmer_p",
    "direction",
    "mode",
    "detach_cmap",
    "epochs",
    "lr",
    "weight_decay",
    "batch_size",
    "seed",
    "augment",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub head: HeadConfig,
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seed: u64,
    /// Random horizontal flips on the training stream.
    pub augment: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            head: HeadConfig::default(),
            epochs: 30,
            lr: 1e-3,
            weight_decay: 1e-4,
            batch_size: 32,
            seed: 0,
            augment: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.head.validate()?;
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be >= 1"));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::invalid(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let (estimator, p) = match self.head.estimator {
            Estimator::Max => ("max", 0.0),
            Estimator::Lehmer { p } => ("lehmer", p),
        };
        let mut s = String::new();
        let _ = writeln!(s, "head={}", self.head.head);
        let _ = writeln!(s, "estimator={estimator}");
        let _ = writeln!(s, "lehmer_p={p:?}");
        let _ = writeln!(s, "direction={}", self.head.direction);
        let _ = writeln!(s, "mode={}", self.head.mode);
        let _ = writeln!(s, "detach_cmap={}", self.head.detach_cmap);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "lr={:?}", self.lr);
        let _ = writeln!(s, "weight_decay={:?}", self.weight_decay);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "augment={}", self.augment);
        s
    }

    /// Parses config text. Lines whose key is not a config key are
    /// rejected unless `ignore` accepts them.
    pub fn parse_with(text: &str, ignore: impl Fn(&str) -> bool) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut estimator = "max".to_string();
        let mut lehmer_p = 0.0f64;
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Config {
                line: line_no,
                detail,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                if ignore(key) {
                    continue;
                }
                return Err(err(format!("unknown key {key:?}")));
            }
            if !seen.insert(key.to_string()) {
                return Err(err(format!("duplicate key {key:?}")));
            }
            let wrap = |e: Error| err(format!("{key}: {e}"));
            match key {
                "head" => cfg.head.head = value.parse().map_err(wrap)?,
                "estimator" => estimator = value.to_string(),
                "lehmer_p" => lehmer_p = parse_num(value).map_err(wrap)?,
                "direction" => cfg.head.direction = value.parse().map_err(wrap)?,
                "mode" => cfg.head.mode = value.parse().map_err(wrap)?,
                "detach_cmap" => cfg.head.detach_cmap = parse_bool(value).map_err(wrap)?,
                "epochs" => cfg.epochs = parse_num(value).map_err(wrap)?,
                "lr" => cfg.lr = parse_num(value).map_err(wrap)?,
                "weight_decay" => cfg.weight_decay = parse_num(value).map_err(wrap)?,
                "batch_size" => cfg.batch_size = parse_num(value).map_err(wrap)?,
                "seed" => cfg.seed = parse_num(value).map_err(wrap)?,
                "augment" => cfg.augment = parse_bool(value).map_err(wrap)?,
                _ => unreachable!("key list checked above"),
            }
        }
        cfg.head.estimator = match estimator.as_str() {
            "max" => Estimator::Max,
            "lehmer" => Estimator::Lehmer { p: lehmer_p },
            other => {
                return Err(Error::invalid(format!("estimator must be max|lehmer, got {other:?}")))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_with(text, |_| false)
    }
}

fn parse_num<T: std::str::FromStr>(value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e: T::Err| Error::invalid(format!("{value:?}: {e}")))
}

fn parse_bool(value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::invalid(format!("expected true|false, got {value:?}"))),
    }
}
