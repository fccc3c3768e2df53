//! Flat `key = value` configuration with command-line overrides.
//!
//! Files hold one assignment per line; `#` starts a comment. Flag values are
//! merged over file values (flags win), then the merged map is turned into a
//! typed [`TrainConfig`] or [`SimConfig`]. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::nn::{Activation, AdamaxConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("key `{key}`: cannot parse `{value}`: {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
    #[error("reading {path}: {reason}")]
    Io { path: String, reason: String },
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConfigMap {
    values: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: i + 1,
                text: raw.to_string(),
            })?;
            let k = k.trim();
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line: i + 1,
                    text: raw.to_string(),
                });
            }
            values.insert(k.to_string(), v.trim().to_string());
        }
        Ok(ConfigMap { values })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    /// File (if any) merged under `flags`; later flags win over earlier ones.
    pub fn merged(file: Option<&Path>, flags: &[(String, String)]) -> Result<Self, ConfigError> {
        let mut map = match file {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        for (k, v) in flags {
            map.set(k, v);
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: &str) {
        self.values.insert(key.to_string(), value.to_string());
    }

    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.values.keys().map(String::as_str)
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ConfigError> {
        match self.keys().find(|k| !allowed.contains(k)) {
            Some(k) => Err(ConfigError::UnknownKey(k.to_string())),
            None => Ok(()),
        }
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>, ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.get_raw(key)
            .map(|v| {
                v.parse().map_err(|e: T::Err| ConfigError::Value {
                    key: key.to_string(),
                    value: v.to_string(),
                    reason: e.to_string(),
                })
            })
            .transpose()
    }

    fn read<T>(&self, key: &str, slot: &mut T) -> Result<(), ConfigError>
    where
        T: FromStr,
        T::Err: Display,
    {
        if let Some(v) = self.get(key)? {
            *slot = v;
        }
        Ok(())
    }
}

/// Everything one training run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// Batch size `b`.
    pub batch_size: usize,
    /// Training-set size `N`.
    pub n: usize,
    /// Maximum epochs `T_max`.
    pub t_max: usize,
    pub seed: u64,
    /// Margin policy name (`magan` or `ebgan`).
    pub mode: String,
    /// Fixed margin for non-adaptive policies.
    pub margin: Option<f64>,
    /// Dataset generator name, or `idx:<path>` for an IDX image file.
    pub dataset: String,
    pub sigma: f64,
    /// Latent width `N_z`.
    pub latent_dim: usize,
    pub pretrain_epochs: usize,
    pub hidden: usize,
    pub code_dim: usize,
    pub disc_activation: Activation,
    pub gen_activation: Activation,
    pub output_activation: Activation,
    /// Mode-coverage snapshot every this many epochs; 0 disables.
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.0005,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 64,
            n: 8192,
            t_max: 200,
            seed: 0,
            mode: "magan".into(),
            margin: None,
            dataset: "ring8".into(),
            sigma: 0.1,
            latent_dim: 2,
            pretrain_epochs: 2,
            hidden: 32,
            code_dim: 1,
            disc_activation: Activation::LeakyRelu(0.2),
            gen_activation: Activation::Relu,
            output_activation: Activation::Identity,
            eval_every: 0,
            eval_samples: 1000,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "alpha",
    "beta1",
    "beta2",
    "b",
    "n",
    "t_max",
    "seed",
    "mode",
    "margin",
    "dataset",
    "sigma",
    "n_z",
    "pretrain_epochs",
    "hidden",
    "code_dim",
    "disc_activation",
    "gen_activation",
    "output_activation",
    "eval_every",
    "eval_samples",
];

impl TrainConfig {
    pub fn keys() -> &'static [&'static str] {
        TRAIN_KEYS
    }

    pub fn from_map(map: &ConfigMap) -> Result<Self, ConfigError> {
        map.check_keys(TRAIN_KEYS)?;
        let mut c = TrainConfig::default();
        map.read("alpha", &mut c.alpha)?;
        map.read("beta1", &mut c.beta1)?;
        map.read("beta2", &mut c.beta2)?;
        map.read("b", &mut c.batch_size)?;
        map.read("n", &mut c.n)?;
        map.read("t_max", &mut c.t_max)?;
        map.read("seed", &mut c.seed)?;
        map.read("mode", &mut c.mode)?;
        c.margin = map.get("margin")?;
        map.read("dataset", &mut c.dataset)?;
        map.read("sigma", &mut c.sigma)?;
        map.read("n_z", &mut c.latent_dim)?;
        map.read("pretrain_epochs", &mut c.pretrain_epochs)?;
        map.read("hidden", &mut c.hidden)?;
        map.read("code_dim", &mut c.code_dim)?;
        map.read("disc_activation", &mut c.disc_activation)?;
        map.read("gen_activation", &mut c.gen_activation)?;
        map.read("output_activation", &mut c.output_activation)?;
        map.read("eval_every", &mut c.eval_every)?;
        map.read("eval_samples", &mut c.eval_samples)?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(invalid("alpha", "learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) {
            return Err(invalid("beta1", "must lie in [0, 1)"));
        }
        if !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("beta2", "must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(invalid("b", "batch size must be at least 1"));
        }
        if self.n == 0 {
            return Err(invalid("n", "training set must be non-empty"));
        }
        if self.batch_size > self.n {
            return Err(invalid(
                "b",
                format!("batch size {} exceeds N = {}", self.batch_size, self.n),
            ));
        }
        if self.t_max == 0 {
            return Err(invalid("t_max", "need at least one epoch"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(invalid("sigma", "must be finite and non-negative"));
        }
        if self.latent_dim == 0 {
            return Err(invalid("n_z", "latent width must be positive"));
        }
        if self.hidden == 0 {
            return Err(invalid("hidden", "width must be positive"));
        }
        if self.code_dim == 0 {
            return Err(invalid("code_dim", "width must be positive"));
        }
        if let Some(m) = self.margin {
            if !(m > 0.0 && m.is_finite()) {
                return Err(invalid("margin", "must be positive and finite"));
            }
        }
        let policies = crate::gan::margin_policy_registry();
        let params = crate::gan::PolicyParams {
            margin: self.margin,
        };
        policies
            .create(&self.mode, &params)
            .map_err(|e| invalid(if policies.contains(&self.mode) { "margin" } else { "mode" }, e.to_string()))?;
        Ok(())
    }

    pub fn adamax(&self) -> AdamaxConfig {
        AdamaxConfig {
            alpha: self.alpha,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }

    /// Number of gradient steps per epoch, `floor(N / b)`.
    pub fn batches_per_epoch(&self) -> usize {
        self.n / self.batch_size
    }

    /// Samples accumulated per epoch, `floor(N / b) * b`.
    pub fn effective_n(&self) -> usize {
        self.batches_per_epoch() * self.batch_size
    }

    /// Round-trippable `key = value` rendering.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("alpha = {}", self.alpha),
            format!("beta1 = {}", self.beta1),
            format!("beta2 = {}", self.beta2),
            format!("b = {}", self.batch_size),
            format!("n = {}", self.n),
            format!("t_max = {}", self.t_max),
            format!("seed = {}", self.seed),
            format!("mode = {}", self.mode),
        ];
        if let Some(m) = self.margin {
            lines.push(format!("margin = {m}"));
        }
        lines.extend([
            format!("dataset = {}", self.dataset),
            format!("sigma = {}", self.sigma),
            format!("n_z = {}", self.latent_dim),
            format!("pretrain_epochs = {}", self.pretrain_epochs),
            format!("hidden = {}", self.hidden),
            format!("code_dim = {}", self.code_dim),
            format!("disc_activation = {}", self.disc_activation),
            format!("gen_activation = {}", self.gen_activation),
            format!("output_activation = {}", self.output_activation),
            format!("eval_every = {}", self.eval_every),
            format!("eval_samples = {}", self.eval_samples),
        ]);
        lines.join("\n") + "\n"
    }
}

/// How the idealized generator picks its step length.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepRule {
    /// Always the configured step size.
    Fixed,
    /// Halve the step until the synthetic energy decreases and the TV
    /// distance does not increase.
    Descent,
}

impl FromStr for StepRule {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "fixed" => Ok(StepRule::Fixed),
            "descent" => Ok(StepRule::Descent),
            other => Err(format!("unknown step rule `{other}` (fixed | descent)")),
        }
    }
}

/// Exact-simulation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct SimConfig {
    pub mode: String,
    /// Support size of the random starting pair.
    pub k: usize,
    pub eta: f64,
    pub max_steps: usize,
    pub tol: f64,
    /// Initial margin.
    pub m0: f64,
    pub seed: u64,
    pub trials: usize,
    /// Overrides the policy's default step rule.
    pub step_rule: Option<StepRule>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            mode: "magan".into(),
            k: 16,
            eta: 0.5,
            max_steps: 100_000,
            tol: 1e-6,
            m0: 1.0,
            seed: 0,
            trials: 1,
            step_rule: None,
        }
    }
}

const SIM_KEYS: &[&str] = &[
    "mode", "k", "eta", "max_steps", "tol", "m0", "seed", "trials", "step_rule",
];

impl SimConfig {
    pub fn from_map(map: &ConfigMap) -> Result<Self, ConfigError> {
        map.check_keys(SIM_KEYS)?;
        let mut c = SimConfig::default();
        map.read("mode", &mut c.mode)?;
        map.read("k", &mut c.k)?;
        map.read("eta", &mut c.eta)?;
        map.read("max_steps", &mut c.max_steps)?;
        map.read("tol", &mut c.tol)?;
        map.read("m0", &mut c.m0)?;
        map.read("seed", &mut c.seed)?;
        map.read("trials", &mut c.trials)?;
        c.step_rule = map.get("step_rule")?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(invalid("k", "support size must be positive"));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid("eta", "step size must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(invalid("tol", "tolerance must be positive"));
        }
        if !(self.m0 > 0.0 && self.m0.is_finite()) {
            return Err(invalid("m0", "margin must be positive"));
        }
        if self.trials == 0 {
            return Err(invalid("trials", "need at least one trial"));
        }
        let policies = crate::gan::margin_policy_registry();
        policies
            .create(
                &self.mode,
                &crate::gan::PolicyParams {
                    margin: Some(self.m0),
                },
            )
            .map_err(|e| invalid("mode", e.to_string()))?;
        Ok(())
    }
}
