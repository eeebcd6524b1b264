//! Run configuration: a flat `key = value` file.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown or repeated
//! keys are errors. Every random stream is derived from a single `seed`,
//! which may instead come from the command line or the `LLGA_SEED`
//! environment variable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::prompt::Task;
use crate::projector::Activation;
use crate::seqfile::TemplateKind;
use crate::trainer::{Optimizer, TrainConfig};

pub const SEED_ENV: &str = "LLGA_SEED";

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub dataset: String,
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub categories: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub num_nodes: Option<usize>,
    pub out_dir: PathBuf,
    pub template: TemplateKind,
    pub branching: Vec<usize>,
    pub num_hops: usize,
    pub lap_dim: Option<usize>,
    pub include_parent: bool,
    pub seed: Option<u64>,
    pub split_ratios: [f64; 3],
    pub tasks: Vec<Task>,
    pub link_pairs: Option<usize>,
    pub include_center_text: bool,
    pub domain_word: String,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub replicate: BTreeMap<String, usize>,
    pub decoder_dim: usize,
    pub hidden_dim: usize,
    pub activation: Activation,
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        Self {
            dataset: "graph".into(),
            edges: None,
            features: None,
            labels: None,
            categories: None,
            texts: None,
            num_nodes: None,
            out_dir: PathBuf::from("run"),
            template: TemplateKind::Nd,
            branching: vec![10, 10],
            num_hops: crate::ho::DEFAULT_NUM_HOPS,
            lap_dim: None,
            include_parent: true,
            seed: None,
            split_ratios: [0.6, 0.2, 0.2],
            tasks: vec![Task::NodeClassification],
            link_pairs: None,
            include_center_text: false,
            domain_word: "paper".into(),
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            epochs: train.epochs,
            optimizer: train.optimizer,
            replicate: BTreeMap::new(),
            decoder_dim: crate::trainer::DEFAULT_DECODER_DIM,
            hidden_dim: crate::trainer::DEFAULT_DECODER_DIM,
            activation: Activation::Gelu,
            threads: 0,
        }
    }
}

fn bad(line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("line {line}: {msg}"))
}

fn parse_num<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(line, format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(bad(line, format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_num(line, key, s))
        .collect()
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or_else(|| bad(line, "expected key = value"))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(bad(line, format!("duplicate key {key:?}")));
            }
            cfg.set(line, key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, v: &str) -> Result<()> {
        let wrap = |r: Result<()>| r.map_err(|e| bad(line, format!("{key}: {e}")));
        match key {
            "dataset" => self.dataset = v.to_string(),
            "edges" => self.edges = Some(v.into()),
            "features" => self.features = Some(v.into()),
            "labels" => self.labels = Some(v.into()),
            "categories" => self.categories = Some(v.into()),
            "texts" => self.texts = Some(v.into()),
            "num_nodes" => self.num_nodes = Some(parse_num(line, key, v)?),
            "out_dir" => self.out_dir = v.into(),
            "template" => wrap(TemplateKind::parse(v).map(|t| self.template = t))?,
            "branching" => self.branching = parse_list(line, key, v)?,
            "num_hops" => self.num_hops = parse_num(line, key, v)?,
            "lap_dim" => self.lap_dim = Some(parse_num(line, key, v)?),
            "include_parent" => self.include_parent = parse_bool(line, key, v)?,
            "seed" => self.seed = Some(parse_num(line, key, v)?),
            "split_ratios" => {
                let r: Vec<f64> = parse_list(line, key, v)?;
                self.split_ratios = r
                    .try_into()
                    .map_err(|_| bad(line, "split_ratios needs exactly three values"))?;
            }
            "tasks" => {
                self.tasks = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Task::parse(s).map_err(|e| bad(line, e)))
                    .collect::<Result<_>>()?
            }
            "link_pairs" => self.link_pairs = Some(parse_num(line, key, v)?),
            "include_center_text" => self.include_center_text = parse_bool(line, key, v)?,
            "domain_word" => self.domain_word = v.to_string(),
            "learning_rate" => self.learning_rate = parse_num(line, key, v)?,
            "batch_size" => self.batch_size = parse_num(line, key, v)?,
            "epochs" => self.epochs = parse_num(line, key, v)?,
            "optimizer" => wrap(Optimizer::parse(v).map(|o| self.optimizer = o))?,
            "replicate" => {
                self.replicate.clear();
                for item in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (name, count) = item
                        .split_once(':')
                        .ok_or_else(|| bad(line, format!("replicate entry {item:?} is not name:count")))?;
                    self.replicate
                        .insert(name.trim().to_string(), parse_num(line, key, count.trim())?);
                }
            }
            "decoder_dim" => self.decoder_dim = parse_num(line, key, v)?,
            "hidden_dim" => self.hidden_dim = parse_num(line, key, v)?,
            "activation" => wrap(Activation::parse(v).map(|a| self.activation = a))?,
            "threads" => self.threads = parse_num(line, key, v)?,
            _ => return Err(bad(line, format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        if self.branching.is_empty() || self.branching.contains(&0) {
            return Err(Error::Config("branching factors must be >= 1".into()));
        }
        if self.num_hops == 0 {
            return Err(Error::Config("num_hops must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config("learning_rate must be a positive number".into()));
        }
        if self.batch_size == 0 || self.decoder_dim == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("batch_size, decoder_dim and hidden_dim must be >= 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::Config("tasks must name at least one task".into()));
        }
        Ok(())
    }

    /// Precedence: explicit override, then the config file, then `env_value`
    /// (the contents of `LLGA_SEED`).
    pub fn resolve_seed(&self, override_seed: Option<u64>, env_value: Option<&str>) -> Result<u64> {
        if let Some(s) = override_seed.or(self.seed) {
            return Ok(s);
        }
        match env_value {
            Some(v) => v
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
            None => Err(Error::Config(format!(
                "no seed given: set `seed` in the config, pass --seed, or export {SEED_ENV}"
            ))),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            optimizer: self.optimizer,
            replicate: self.replicate.clone(),
            seed,
        }
    }
}
