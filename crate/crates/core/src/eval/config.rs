use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::adapt::IlmaConfig;
use crate::data::ShiftConfig;
use crate::error::{Error, Result};
use crate::extlm::LmTrainConfig;
use crate::model::{HatConfig, MhatConfig};

use super::TrainConfig;

/// Parses `key = value` lines. Blank lines and lines starting with `#` are
/// skipped; a repeated key keeps its last value.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: format!("expected `key = value`, got {line:?}"),
        })?;
        let (k, v) = (k.trim().to_string(), v.trim().to_string());
        if k.is_empty() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                reason: "empty key".into(),
            });
        }
        out.retain(|(old, _)| *old != k);
        out.push((k, v));
    }
    Ok(out)
}

/// Every knob of the desk-scale pipeline. Stage seeds are derived from
/// `seed`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_target_text: usize,
    pub shift: ShiftConfig,
    pub mhat: MhatConfig,
    pub hat: HatConfig,
    pub train: TrainConfig,
    pub alpha: f64,
    pub lm: LmTrainConfig,
    pub ilma: IlmaConfig,
    pub beam: usize,
    pub lambda_e: Vec<f64>,
    pub lambda_i: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let shift = ShiftConfig::default();
        let mut mhat = MhatConfig::default();
        mhat.encoder.d_x = shift.d_x;
        let mut hat = HatConfig::default();
        hat.encoder.d_x = shift.d_x;
        Self {
            seed: 1,
            n_train: 2000,
            n_dev: 200,
            n_test: 200,
            n_target_text: 5000,
            shift,
            mhat,
            hat,
            train: TrainConfig::default(),
            alpha: 0.1,
            lm: LmTrainConfig::default(),
            ilma: IlmaConfig::default(),
            beam: 8,
            lambda_e: vec![0.1, 0.2, 0.3, 0.4, 0.5],
            lambda_i: vec![0.1, 0.2, 0.3],
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse()
        .map_err(|e| Error::Config(format!("bad value {v:?} for {key}: {e}")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>> {
    v.split(',').map(|x| parse(key, x.trim())).collect()
}

fn list(v: &[f64]) -> String {
    v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply(&parse_key_values(&text, path)?)?;
        Ok(cfg)
    }

    pub fn apply(&mut self, entries: &[(String, String)]) -> Result<()> {
        for (k, v) in entries {
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.n_train" => self.n_train = parse(key, v)?,
            "data.n_dev" => self.n_dev = parse(key, v)?,
            "data.n_test" => self.n_test = parse(key, v)?,
            "data.n_target_text" => self.n_target_text = parse(key, v)?,
            "shift.pairs" => self.shift.pairs = parse(key, v)?,
            "shift.d_x" => {
                self.shift.d_x = parse(key, v)?;
                self.mhat.encoder.d_x = self.shift.d_x;
                self.hat.encoder.d_x = self.shift.d_x;
            }
            "shift.sigma" => self.shift.sigma = parse(key, v)?,
            "shift.pair_distance" => self.shift.pair_distance = parse(key, v)?,
            "shift.min_cue_distance" => self.shift.min_cue_distance = parse(key, v)?,
            "shift.stop_prob" => self.shift.stop_prob = parse(key, v)?,
            "shift.shared_preference" => self.shift.shared_preference = parse(key, v)?,
            "shift.target_preference" => self.shift.target_preference = parse(key, v)?,
            "shift.source_shifted_preference" => {
                self.shift.source_shifted_preference = parse(key, v)?
            }
            "shift.target_cue_order" => self.shift.target_cue_order = parse(key, v)?,
            "shift.repeat_pairs" => self.shift.repeat_pairs = parse(key, v)?,
            "shift.source_shifted_rate" => self.shift.source_shifted_rate = parse(key, v)?,
            "shift.target_shared_rate" => self.shift.target_shared_rate = parse(key, v)?,
            "shift.prototype_seed" => self.shift.prototype_seed = parse(key, v)?,
            "encoder.context" => {
                self.mhat.encoder.context = parse(key, v)?;
                self.hat.encoder.context = self.mhat.encoder.context;
            }
            "encoder.layers" => {
                self.mhat.encoder.layers = parse(key, v)?;
                self.hat.encoder.layers = self.mhat.encoder.layers;
            }
            "encoder.d_f" => {
                self.mhat.encoder.d_f = parse(key, v)?;
                self.hat.encoder.d_f = self.mhat.encoder.d_f;
            }
            "mhat.blank_dim" => self.mhat.blank_decoder.embed_dim = parse(key, v)?,
            "mhat.blank_tied" => self.mhat.blank_decoder.tied_tables = parse(key, v)?,
            "mhat.label_dim" => self.mhat.label_decoder.embed_dim = parse(key, v)?,
            "mhat.label_tied" => self.mhat.label_decoder.tied_tables = parse(key, v)?,
            "mhat.joint_dim" => self.mhat.joint_dim = parse(key, v)?,
            "hat.decoder_dim" => self.hat.decoder.embed_dim = parse(key, v)?,
            "hat.decoder_tied" => self.hat.decoder.tied_tables = parse(key, v)?,
            "hat.joint_dim" => self.hat.joint_dim = parse(key, v)?,
            "train.epochs" => self.train.epochs = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.lr" => self.train.lr = parse(key, v)?,
            "train.alpha" => self.alpha = parse(key, v)?,
            "lm.embed_dim" => self.lm.model.decoder.embed_dim = parse(key, v)?,
            "lm.tied" => self.lm.model.decoder.tied_tables = parse(key, v)?,
            "lm.epochs" => self.lm.epochs = parse(key, v)?,
            "lm.batch_size" => self.lm.batch_size = parse(key, v)?,
            "lm.lr" => self.lm.lr = parse(key, v)?,
            "ilma.rho" => self.ilma.rho = parse(key, v)?,
            "ilma.steps" => self.ilma.steps = parse(key, v)?,
            "ilma.lr" => self.ilma.lr = parse(key, v)?,
            "ilma.batch_size" => self.ilma.batch_size = parse(key, v)?,
            "ilma.optimizer" => self.ilma.optimizer = v.parse()?,
            "decode.beam" => self.beam = parse(key, v)?,
            "fusion.lambda_e" => self.lambda_e = parse_list(key, v)?,
            "fusion.lambda_i" => self.lambda_i = parse_list(key, v)?,
            // Command-line arguments recorded in a resolved snapshot.
            k if k.starts_with("cli.") => {}
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.ilma.validate()?;
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 || self.n_target_text == 0 {
            return Err(Error::Config("corpus sizes must be positive".into()));
        }
        if self.beam == 0 {
            return Err(Error::Config("beam must be positive".into()));
        }
        if self.lambda_e.is_empty() || self.lambda_i.is_empty() {
            return Err(Error::Config("fusion grids must be non-empty".into()));
        }
        if self
            .lambda_e
            .iter()
            .chain(&self.lambda_i)
            .any(|l| !l.is_finite() || *l < 0.0)
        {
            return Err(Error::Config(
                "fusion weights must be finite and >= 0".into(),
            ));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be finite and >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Resolved configuration in the same `key = value` form `set` accepts.
    pub fn entries(&self) -> Vec<(String, String)> {
        let s = &self.shift;
        let kv: Vec<(&str, String)> = vec![
            ("seed", self.seed.to_string()),
            ("data.n_train", self.n_train.to_string()),
            ("data.n_dev", self.n_dev.to_string()),
            ("data.n_test", self.n_test.to_string()),
            ("data.n_target_text", self.n_target_text.to_string()),
            ("shift.pairs", s.pairs.to_string()),
            ("shift.d_x", s.d_x.to_string()),
            ("shift.sigma", s.sigma.to_string()),
            ("shift.pair_distance", s.pair_distance.to_string()),
            ("shift.min_cue_distance", s.min_cue_distance.to_string()),
            ("shift.stop_prob", s.stop_prob.to_string()),
            ("shift.shared_preference", s.shared_preference.to_string()),
            ("shift.target_preference", s.target_preference.to_string()),
            (
                "shift.source_shifted_preference",
                s.source_shifted_preference.to_string(),
            ),
            ("shift.target_cue_order", s.target_cue_order.to_string()),
            ("shift.repeat_pairs", s.repeat_pairs.to_string()),
            (
                "shift.source_shifted_rate",
                s.source_shifted_rate.to_string(),
            ),
            ("shift.target_shared_rate", s.target_shared_rate.to_string()),
            ("shift.prototype_seed", s.prototype_seed.to_string()),
            ("encoder.context", self.mhat.encoder.context.to_string()),
            ("encoder.layers", self.mhat.encoder.layers.to_string()),
            ("encoder.d_f", self.mhat.encoder.d_f.to_string()),
            (
                "mhat.blank_dim",
                self.mhat.blank_decoder.embed_dim.to_string(),
            ),
            (
                "mhat.blank_tied",
                self.mhat.blank_decoder.tied_tables.to_string(),
            ),
            (
                "mhat.label_dim",
                self.mhat.label_decoder.embed_dim.to_string(),
            ),
            (
                "mhat.label_tied",
                self.mhat.label_decoder.tied_tables.to_string(),
            ),
            ("mhat.joint_dim", self.mhat.joint_dim.to_string()),
            ("hat.decoder_dim", self.hat.decoder.embed_dim.to_string()),
            ("hat.decoder_tied", self.hat.decoder.tied_tables.to_string()),
            ("hat.joint_dim", self.hat.joint_dim.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.lr", self.train.lr.to_string()),
            ("train.alpha", self.alpha.to_string()),
            ("lm.embed_dim", self.lm.model.decoder.embed_dim.to_string()),
            ("lm.tied", self.lm.model.decoder.tied_tables.to_string()),
            ("lm.epochs", self.lm.epochs.to_string()),
            ("lm.batch_size", self.lm.batch_size.to_string()),
            ("lm.lr", self.lm.lr.to_string()),
            ("ilma.rho", self.ilma.rho.to_string()),
            ("ilma.steps", self.ilma.steps.to_string()),
            ("ilma.lr", self.ilma.lr.to_string()),
            ("ilma.batch_size", self.ilma.batch_size.to_string()),
            ("ilma.optimizer", self.ilma.optimizer.as_str().to_string()),
            ("decode.beam", self.beam.to_string()),
            ("fusion.lambda_e", list(&self.lambda_e)),
            ("fusion.lambda_i", list(&self.lambda_i)),
        ];
        kv.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    pub fn to_key_values(&self) -> String {
        self.entries()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Seed of one pipeline stage, distinct per stage tag.
    pub fn stage_seed(&self, tag: u64) -> u64 {
        self.seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(tag)
    }
}
