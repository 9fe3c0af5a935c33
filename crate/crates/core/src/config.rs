//! Pipeline configuration: a flat `key = value` file with CLI overrides.
//! Every run hashes its effective settings (minus the workdir, which only
//! says where artifacts live) so stage outputs can name the config that
//! produced them.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::nn::TrainCfg;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Pages file (JSON lines).
    pub pages: String,
    /// Claims file (JSON lines).
    pub claims: String,
    /// Artifact directory.
    pub workdir: String,
    /// Candidate pool size per claim.
    pub m: usize,
    /// Documents kept by the ranker.
    pub d: usize,
    /// Evidence decode steps and the default scoring cutoff.
    pub n: usize,
    pub seed: u64,
    /// Selection-loss weight in joint training.
    pub lambda: f64,
    /// Teacher-forcing probability per decode step.
    pub p_tf: f64,
    /// Date-reasoning post-processing on predictions.
    pub dateproc: bool,
    /// Learned document ranking (off → candidate order).
    pub docrank: bool,
    pub encoder_dim: usize,
    pub encoder_lr: f64,
    pub encoder_epochs: usize,
    /// Negatives sampled per positive title pair.
    pub encoder_neg_ratio: f64,
    pub ptr_hidden: usize,
    pub ptr_hops: usize,
    pub ptr_beam: usize,
    pub ptr_lr: f64,
    pub ptr_batch: usize,
    pub ptr_max_epochs: usize,
    /// Early-stopping patience, in epochs.
    pub ptr_patience: usize,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            pages: "pages.jsonl".into(),
            claims: "claims.jsonl".into(),
            workdir: "workdir".into(),
            m: 30,
            d: 5,
            n: 5,
            seed: 42,
            lambda: 1.0,
            p_tf: 0.5,
            dateproc: true,
            docrank: true,
            encoder_dim: 64,
            encoder_lr: 0.05,
            encoder_epochs: 30,
            encoder_neg_ratio: 4.5,
            ptr_hidden: 200,
            ptr_hops: 3,
            ptr_beam: 5,
            ptr_lr: 0.01,
            ptr_batch: 16,
            ptr_max_epochs: 140,
            ptr_patience: 10,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Validation(format!("config key {key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Validation(format!("config key {key}: expected true/false, got {value:?}"))),
    }
}

impl Config {
    /// Apply one `key = value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "pages" => self.pages = value.to_string(),
            "claims" => self.claims = value.to_string(),
            "workdir" => self.workdir = value.to_string(),
            "m" => self.m = parse_num(key, value)?,
            "d" => self.d = parse_num(key, value)?,
            "n" => self.n = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "lambda" => self.lambda = parse_num(key, value)?,
            "p_tf" => self.p_tf = parse_num(key, value)?,
            "dateproc" => self.dateproc = parse_bool(key, value)?,
            "docrank" => self.docrank = parse_bool(key, value)?,
            "encoder.dim" => self.encoder_dim = parse_num(key, value)?,
            "encoder.lr" => self.encoder_lr = parse_num(key, value)?,
            "encoder.epochs" => self.encoder_epochs = parse_num(key, value)?,
            "encoder.neg_ratio" => self.encoder_neg_ratio = parse_num(key, value)?,
            "ptr.hidden" => self.ptr_hidden = parse_num(key, value)?,
            "ptr.hops" => self.ptr_hops = parse_num(key, value)?,
            "ptr.beam" => self.ptr_beam = parse_num(key, value)?,
            "ptr.lr" => self.ptr_lr = parse_num(key, value)?,
            "ptr.batch" => self.ptr_batch = parse_num(key, value)?,
            "ptr.max_epochs" => self.ptr_max_epochs = parse_num(key, value)?,
            "ptr.patience" => self.ptr_patience = parse_num(key, value)?,
            _ => return Err(Error::Validation(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Defaults, then the file (if given), then `key=value` overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        Config::load_layered(Config::default(), path, overrides)
    }

    /// Like [`Config::load`] but starting from `base` instead of the built-in
    /// defaults (the CLI seeds the workdir from its environment this way).
    pub fn load_layered(base: Config, path: Option<&Path>, overrides: &[String]) -> Result<Config> {
        let mut cfg = base;
        if let Some(path) = path {
            let text = std::fs::read_to_string(path)?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: format!("expected key = value, got {line:?}"),
                })?;
                cfg.set(key.trim(), value.trim()).map_err(|e| Error::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    msg: e.to_string(),
                })?;
            }
        }
        for item in overrides {
            let (key, value) = item.split_once('=').ok_or_else(|| {
                Error::Usage(format!("--set expects key=value, got {item:?}"))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 1 || self.m < self.d {
            return Err(Error::Validation(format!(
                "need m >= d >= 1, got m={} d={}",
                self.m, self.d
            )));
        }
        if self.n < 1 {
            return Err(Error::Validation("n must be >= 1".into()));
        }
        if self.encoder_dim < 2 || self.encoder_dim % 2 != 0 {
            return Err(Error::Validation(format!(
                "encoder.dim must be even and >= 2, got {}",
                self.encoder_dim
            )));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Validation(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.p_tf) {
            return Err(Error::Validation(format!("p_tf must be in [0, 1], got {}", self.p_tf)));
        }
        if !(self.encoder_neg_ratio >= 0.0) {
            return Err(Error::Validation(format!(
                "encoder.neg_ratio must be >= 0, got {}",
                self.encoder_neg_ratio
            )));
        }
        for (key, value) in [("encoder.lr", self.encoder_lr), ("ptr.lr", self.ptr_lr)] {
            if !(value > 0.0) {
                return Err(Error::Validation(format!("{key} must be > 0, got {value}")));
            }
        }
        for (key, value) in [
            ("encoder.epochs", self.encoder_epochs),
            ("ptr.hidden", self.ptr_hidden),
            ("ptr.hops", self.ptr_hops),
            ("ptr.beam", self.ptr_beam),
            ("ptr.batch", self.ptr_batch),
            ("ptr.max_epochs", self.ptr_max_epochs),
        ] {
            if value < 1 {
                return Err(Error::Validation(format!("{key} must be >= 1")));
            }
        }
        Ok(())
    }

    /// Every setting as canonical `key=value` strings, sorted by key.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("pages".to_string(), self.pages.clone()),
            ("claims".to_string(), self.claims.clone()),
            ("workdir".to_string(), self.workdir.clone()),
            ("m".to_string(), self.m.to_string()),
            ("d".to_string(), self.d.to_string()),
            ("n".to_string(), self.n.to_string()),
            ("seed".to_string(), self.seed.to_string()),
            ("lambda".to_string(), self.lambda.to_string()),
            ("p_tf".to_string(), self.p_tf.to_string()),
            ("dateproc".to_string(), self.dateproc.to_string()),
            ("docrank".to_string(), self.docrank.to_string()),
            ("encoder.dim".to_string(), self.encoder_dim.to_string()),
            ("encoder.lr".to_string(), self.encoder_lr.to_string()),
            ("encoder.epochs".to_string(), self.encoder_epochs.to_string()),
            ("encoder.neg_ratio".to_string(), self.encoder_neg_ratio.to_string()),
            ("ptr.hidden".to_string(), self.ptr_hidden.to_string()),
            ("ptr.hops".to_string(), self.ptr_hops.to_string()),
            ("ptr.beam".to_string(), self.ptr_beam.to_string()),
            ("ptr.lr".to_string(), self.ptr_lr.to_string()),
            ("ptr.batch".to_string(), self.ptr_batch.to_string()),
            ("ptr.max_epochs".to_string(), self.ptr_max_epochs.to_string()),
            ("ptr.patience".to_string(), self.ptr_patience.to_string()),
        ];
        out.sort();
        out
    }

    /// First 16 hex digits of a digest over every setting except the workdir;
    /// artifacts carry this so stale mixes can be flagged.
    pub fn hash(&self) -> String {
        let mut text = String::new();
        for (key, value) in self.entries() {
            if key != "workdir" {
                let _ = writeln!(text, "{key}={value}");
            }
        }
        let digest = Sha256::digest(text.as_bytes());
        let mut hex = String::with_capacity(16);
        for byte in &digest[..8] {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }

    /// Training settings for the pointer/joint stages.
    pub fn ptr_train(&self) -> TrainCfg {
        TrainCfg {
            lr: self.ptr_lr,
            batch: self.ptr_batch,
            max_epochs: self.ptr_max_epochs,
            patience: self.ptr_patience,
            seed: self.seed,
            val_fraction: 0.1,
        }
    }

    /// Training settings for encoder fine-tuning.
    pub fn encoder_train(&self) -> TrainCfg {
        TrainCfg {
            lr: self.encoder_lr,
            batch: 16,
            max_epochs: self.encoder_epochs,
            patience: self.ptr_patience,
            seed: self.seed,
            val_fraction: 0.1,
        }
    }
}
