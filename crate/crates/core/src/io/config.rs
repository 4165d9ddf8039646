use std::fmt::Write as _;
use std::path::Path;

use crate::diagnostics::{PassiveThresholds, ProbeConfig};
use crate::error::{Error, Result};
use crate::synthbench::DEFAULT_FEATURES;
use crate::synthdata::DEFAULT_WIDTH;
use crate::vae::{Architecture, ObjectiveSpec, TrainConfig};

/// Every tunable default, loadable from flat `key = value` text.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub data_width: usize,
    pub data_train_examples: usize,
    pub data_seed: u64,
    pub eval_examples: usize,
    pub eval_seed: u64,
    pub hidden: [usize; 2],
    pub latent_dim: usize,
    /// `checkpoint_interval` of 0 means "once, at the end".
    pub train: TrainConfig,
    /// Parameter defaults for objective strings given on the command line.
    pub objective: ObjectiveSpec,
    pub thresholds: PassiveThresholds,
    pub probe: ProbeConfig,
    pub probe_bins: usize,
    pub retrain_steps_per_stage: u64,
    pub retrain_stages: usize,
    pub bench_features: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let arch = Architecture::desk_default();
        Self {
            data_width: DEFAULT_WIDTH,
            data_train_examples: 4096,
            data_seed: 1000,
            eval_examples: 512,
            eval_seed: 77,
            hidden: arch.hidden,
            latent_dim: arch.latent_dim,
            train: TrainConfig {
                checkpoint_interval: 0,
                ..TrainConfig::desk(2000, 0)
            },
            objective: ObjectiveSpec::default(),
            thresholds: PassiveThresholds::default(),
            probe: ProbeConfig::default(),
            probe_bins: 3,
            retrain_steps_per_stage: 1000,
            retrain_stages: 3,
            bench_features: DEFAULT_FEATURES,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::parse(format!("config key '{key}': cannot parse '{value}'")))
}

impl ExperimentConfig {
    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.data_width * self.data_width, self.hidden, self.latent_dim)
    }

    /// Training settings for one run, resolving the end-only checkpoint default.
    pub fn train_config(&self, steps: u64, seed: u64, checkpoint_interval: u64) -> TrainConfig {
        let interval = if checkpoint_interval == 0 {
            steps.max(1)
        } else {
            checkpoint_interval
        };
        TrainConfig {
            steps,
            seed,
            checkpoint_interval: interval,
            ..self.train
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value;
        match key {
            "data.width" => self.data_width = parse_num(key, v)?,
            "data.train_examples" => self.data_train_examples = parse_num(key, v)?,
            "data.seed" => self.data_seed = parse_num(key, v)?,
            "eval.examples" => self.eval_examples = parse_num(key, v)?,
            "eval.seed" => self.eval_seed = parse_num(key, v)?,
            "model.hidden_1" => self.hidden[0] = parse_num(key, v)?,
            "model.hidden_2" => self.hidden[1] = parse_num(key, v)?,
            "model.latent_dim" => self.latent_dim = parse_num(key, v)?,
            "train.batch_size" => self.train.batch_size = parse_num(key, v)?,
            "train.steps" => self.train.steps = parse_num(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse_num(key, v)?,
            "train.adam_beta1" => self.train.adam_beta1 = parse_num(key, v)?,
            "train.adam_beta2" => self.train.adam_beta2 = parse_num(key, v)?,
            "train.adam_epsilon" => self.train.adam_epsilon = parse_num(key, v)?,
            "train.checkpoint_interval" => self.train.checkpoint_interval = parse_num(key, v)?,
            "train.prob_clip" => self.train.prob_clip = parse_num(key, v)?,
            "train.pixel_reduction" => self.train.pixel_reduction = v.parse()?,
            "objective.beta" => self.objective.beta = parse_num(key, v)?,
            "objective.gamma" => self.objective.gamma = parse_num(key, v)?,
            "objective.c_max" => self.objective.c_max = parse_num(key, v)?,
            "objective.anneal_steps" => self.objective.anneal_steps = parse_num(key, v)?,
            "objective.lambda_tc" => self.objective.lambda_tc = parse_num(key, v)?,
            "objective.lambda_d" => self.objective.lambda_d = parse_num(key, v)?,
            "objective.lambda_od" => self.objective.lambda_od = parse_num(key, v)?,
            "diagnose.kl_max" => self.thresholds.kl_max = parse_num(key, v)?,
            "diagnose.mean_abs_mu_max" => self.thresholds.mean_abs_mu_max = parse_num(key, v)?,
            "diagnose.sigma_min" => self.thresholds.sigma_min = parse_num(key, v)?,
            "diagnose.sigma_max" => self.thresholds.sigma_max = parse_num(key, v)?,
            "diagnose.collapse_threshold_dims" => self.thresholds.collapse_threshold_dims = parse_num(key, v)?,
            "probe.train_fraction" => self.probe.train_fraction = parse_num(key, v)?,
            "probe.iterations" => self.probe.iterations = parse_num(key, v)?,
            "probe.learning_rate" => self.probe.learning_rate = parse_num(key, v)?,
            "probe.bins" => self.probe_bins = parse_num(key, v)?,
            "retrain.steps_per_stage" => self.retrain_steps_per_stage = parse_num(key, v)?,
            "retrain.stages" => self.retrain_stages = parse_num(key, v)?,
            "bench.features" => self.bench_features = parse_num(key, v)?,
            other => return Err(Error::parse(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(format!("config line {}: expected key = value", lineno + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&super::read_text(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.architecture().validate()?;
        if self.data_width / 2 < 2 {
            return Err(Error::invalid("data.width must be at least 4"));
        }
        if self.eval_examples < 2 || self.data_train_examples == 0 {
            return Err(Error::invalid("eval.examples must be ≥ 2 and data.train_examples ≥ 1"));
        }
        if self.probe_bins < 2 {
            return Err(Error::invalid("probe.bins must be at least 2"));
        }
        let t = &self.train;
        if t.batch_size == 0
            || !(t.learning_rate.is_finite() && t.learning_rate > 0.0)
            || !(t.prob_clip > 0.0 && t.prob_clip < 0.5)
        {
            return Err(Error::invalid(
                "train.batch_size, train.learning_rate or train.prob_clip out of range",
            ));
        }
        Ok(())
    }

    /// Every key with its current value, in a form [`ExperimentConfig::parse`] accepts.
    pub fn render(&self) -> String {
        let t = &self.train;
        let o = &self.objective;
        let th = &self.thresholds;
        let entries: Vec<(&str, String)> = vec![
            ("data.width", self.data_width.to_string()),
            ("data.train_examples", self.data_train_examples.to_string()),
            ("data.seed", self.data_seed.to_string()),
            ("eval.examples", self.eval_examples.to_string()),
            ("eval.seed", self.eval_seed.to_string()),
            ("model.hidden_1", self.hidden[0].to_string()),
            ("model.hidden_2", self.hidden[1].to_string()),
            ("model.latent_dim", self.latent_dim.to_string()),
            ("train.batch_size", t.batch_size.to_string()),
            ("train.steps", t.steps.to_string()),
            ("train.learning_rate", format!("{:?}", t.learning_rate)),
            ("train.adam_beta1", format!("{:?}", t.adam_beta1)),
            ("train.adam_beta2", format!("{:?}", t.adam_beta2)),
            ("train.adam_epsilon", format!("{:?}", t.adam_epsilon)),
            ("train.checkpoint_interval", t.checkpoint_interval.to_string()),
            ("train.prob_clip", format!("{:?}", t.prob_clip)),
            ("train.pixel_reduction", t.pixel_reduction.to_string()),
            ("objective.beta", format!("{:?}", o.beta)),
            ("objective.gamma", format!("{:?}", o.gamma)),
            ("objective.c_max", format!("{:?}", o.c_max)),
            ("objective.anneal_steps", o.anneal_steps.to_string()),
            ("objective.lambda_tc", format!("{:?}", o.lambda_tc)),
            ("objective.lambda_d", format!("{:?}", o.lambda_d)),
            ("objective.lambda_od", format!("{:?}", o.lambda_od)),
            ("diagnose.kl_max", format!("{:?}", th.kl_max)),
            ("diagnose.mean_abs_mu_max", format!("{:?}", th.mean_abs_mu_max)),
            ("diagnose.sigma_min", format!("{:?}", th.sigma_min)),
            ("diagnose.sigma_max", format!("{:?}", th.sigma_max)),
            (
                "diagnose.collapse_threshold_dims",
                th.collapse_threshold_dims.to_string(),
            ),
            ("probe.train_fraction", format!("{:?}", self.probe.train_fraction)),
            ("probe.iterations", self.probe.iterations.to_string()),
            ("probe.learning_rate", format!("{:?}", self.probe.learning_rate)),
            ("probe.bins", self.probe_bins.to_string()),
            ("retrain.steps_per_stage", self.retrain_steps_per_stage.to_string()),
            ("retrain.stages", self.retrain_stages.to_string()),
            ("bench.features", self.bench_features.to_string()),
        ];
        let mut out = String::new();
        for (k, v) in entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
