//! Experiment configuration and its plain-text `key = value` format.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{LabelKind, SynthConfig};
use crate::error::{Error, Result};
use crate::paresn::EsnHyperParams;
use crate::preprocess::PreprocessConfig;
use crate::rcap::RcapConfig;
use crate::tlsa::TlsaConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Baseline,
    Paresn,
    /// Proposals produced elsewhere and read from `<id>.P{1,2,3}.png`.
    External,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Paresn => "paresn",
            ModelKind::External => "external",
        }
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "paresn" => Ok(ModelKind::Paresn),
            "external" => Ok(ModelKind::External),
            other => Err(Error::InvalidConfig(format!("unknown model `{other}`"))),
        }
    }
}

/// Mask a model is trained on, and the true label in RCAP evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainTarget {
    Label(LabelKind),
    /// The generator's ground truth; synthetic stacks only.
    GroundTruth,
}

impl TrainTarget {
    pub fn name(self) -> &'static str {
        match self {
            TrainTarget::Label(kind) => kind.name(),
            TrainTarget::GroundTruth => "GT",
        }
    }
}

impl FromStr for TrainTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "GT" | "gt" => Ok(TrainTarget::GroundTruth),
            other => other.parse().map(TrainTarget::Label),
        }
    }
}

impl fmt::Display for TrainTarget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub stack_dir: PathBuf,
    pub model: ModelKind,
    pub train_label: TrainTarget,
    pub tlsa: TlsaConfig,
    /// Window size and paste mode for RCAP; `kappa` is taken from `kappas`.
    pub rcap: RcapConfig,
    pub kappas: Vec<usize>,
    /// RCAP repetitions per test image.
    pub repetitions: usize,
    /// Baseline fits, each on one randomly drawn training image.
    pub baseline_reps: usize,
    pub out_dir: PathBuf,
    pub rng_seed: u64,
    pub esn: EsnHyperParams,
    pub preprocess: PreprocessConfig,
    /// Directory of externally produced proposals.
    pub external_dir: Option<PathBuf>,
    /// Previously fitted model to use instead of training.
    pub model_file: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            stack_dir: PathBuf::from("stack"),
            model: ModelKind::Paresn,
            train_label: TrainTarget::Label(LabelKind::G1),
            tlsa: TlsaConfig::default(),
            rcap: RcapConfig::default(),
            kappas: vec![1, 2, 3, 4],
            repetitions: 20,
            baseline_reps: 1,
            out_dir: PathBuf::from("out"),
            rng_seed: 0,
            esn: EsnHyperParams::default(),
            preprocess: PreprocessConfig::default(),
            external_dir: None,
            model_file: None,
            synth: SynthConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("bad value `{value}` for `{key}`")))
}

fn parse_pair<T: FromStr>(key: &str, value: &str) -> Result<(T, T)> {
    let (a, b) = value
        .split_once(',')
        .ok_or_else(|| Error::InvalidConfig(format!("`{key}` needs two comma-separated values")))?;
    Ok((parse(key, a.trim())?, parse(key, b.trim())?))
}

impl ExperimentConfig {
    /// Reads a config file on top of the defaults.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        Ok(cfg)
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", n + 1)))?;
            self.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "stack_dir" => self.stack_dir = value.into(),
            "out_dir" => self.out_dir = value.into(),
            "model" => self.model = value.parse()?,
            "train_label" => self.train_label = value.parse()?,
            "rng_seed" | "seed" => self.rng_seed = parse(key, value)?,
            "repetitions" => self.repetitions = parse(key, value)?,
            "baseline_reps" | "reps" => self.baseline_reps = parse(key, value)?,
            "external_dir" => self.external_dir = Some(value.into()),
            "model_file" => self.model_file = Some(value.into()),
            "kappas" => {
                self.kappas = value
                    .split(',')
                    .map(|v| parse(key, v.trim()))
                    .collect::<Result<_>>()?
            }
            "tlsa.delta1" => self.tlsa.delta1 = parse(key, value)?,
            "tlsa.delta2" => self.tlsa.delta2 = parse(key, value)?,
            "tlsa.delta3" => self.tlsa.delta3 = parse(key, value)?,
            "tlsa.w" => self.tlsa.w = parse(key, value)?,
            "rcap.w" => self.rcap.w = parse(key, value)?,
            "rcap.offset_paste" => self.rcap.offset_paste = parse(key, value)?,
            "esn.m" => self.esn.m = parse(key, value)?,
            "esn.alpha" => self.esn.alpha = parse(key, value)?,
            "esn.lambda" => self.esn.lambda = parse(key, value)?,
            "esn.spectral_radius" => self.esn.spectral_radius = parse(key, value)?,
            "esn.sparsity" => self.esn.sparsity = parse(key, value)?,
            "esn.w_m" => self.esn.w_m = parse(key, value)?,
            "esn.branches" => self.esn.branches = parse(key, value)?,
            "preprocess.size" => self.preprocess.size = parse(key, value)?,
            "preprocess.s_d" => self.preprocess.bottom_hat.s_d = parse(key, value)?,
            "synth.stack_id" => self.synth.stack_id = value.to_string(),
            "synth.num_images" => self.synth.num_images = parse(key, value)?,
            "synth.image_size" => self.synth.image_size = parse(key, value)?,
            "synth.cyst_count_range" => self.synth.cyst_count_range = parse_pair(key, value)?,
            "synth.cyst_radius_range" => self.synth.cyst_radius_range = parse_pair(key, value)?,
            "synth.speckle_sigma" => self.synth.speckle_sigma = parse(key, value)?,
            "synth.g1.dilate_px" => self.synth.annotator_bias[0].dilate_px = parse(key, value)?,
            "synth.g1.miss_small_below_px" => {
                self.synth.annotator_bias[0].miss_small_below_px = parse(key, value)?
            }
            "synth.g2.dilate_px" => self.synth.annotator_bias[1].dilate_px = parse(key, value)?,
            "synth.g2.miss_small_below_px" => {
                self.synth.annotator_bias[1].miss_small_below_px = parse(key, value)?
            }
            other => return Err(Error::InvalidConfig(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 || self.baseline_reps == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        if self.kappas.is_empty() {
            return Err(Error::InvalidConfig("kappas is empty".into()));
        }
        for &kappa in &self.kappas {
            RcapConfig { kappa, ..self.rcap }.validate()?;
        }
        if self.preprocess.size == 0 || self.preprocess.bottom_hat.s_d < 2 {
            return Err(Error::InvalidConfig("preprocess needs size > 0 and s_d >= 2".into()));
        }
        if self.model == ModelKind::External && self.external_dir.is_none() {
            return Err(Error::InvalidConfig("model = external needs external_dir".into()));
        }
        self.tlsa.validate()?;
        self.esn.validate()
    }

    /// ESN hyperparameters seeded from the experiment seed.
    pub fn esn_params(&self) -> EsnHyperParams {
        EsnHyperParams {
            rng_seed: self.rng_seed,
            ..self.esn.clone()
        }
    }
}
