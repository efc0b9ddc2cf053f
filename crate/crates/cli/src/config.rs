//! Flat `key = value` experiment configuration.
//!
//! Values are applied in order: defaults, then the config file, then
//! command-line overrides. Unknown keys and malformed values are rejected
//! before any computation starts.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use qdec_core::nn::{OptimizerKind, TrainConfig};

use crate::error::{config_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    KMeans,
    Pq,
    Opq,
    Itq,
}

impl FromStr for EncoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "kmeans" => Ok(Self::KMeans),
            "pq" => Ok(Self::Pq),
            "opq" => Ok(Self::Opq),
            "itq" => Ok(Self::Itq),
            _ => Err(format!("unknown encoder {s:?} (kmeans, pq, opq, itq)")),
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::KMeans => "kmeans",
            Self::Pq => "pq",
            Self::Opq => "opq",
            Self::Itq => "itq",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecoderKind {
    Natural,
    Topline,
    Aq,
    Nn,
}

impl FromStr for DecoderKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "natural" => Ok(Self::Natural),
            "topline" => Ok(Self::Topline),
            "aq" => Ok(Self::Aq),
            "nn" => Ok(Self::Nn),
            _ => Err(format!("unknown decoder {s:?} (natural, topline, aq, nn)")),
        }
    }
}

impl fmt::Display for DecoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Natural => "natural",
            Self::Topline => "topline",
            Self::Aq => "aq",
            Self::Nn => "nn",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_path: Option<PathBuf>,
    pub base_path: Option<PathBuf>,
    pub query_path: Option<PathBuf>,
    pub gt_path: Option<PathBuf>,
    /// Row caps applied when reading files; also the synthetic sizes.
    pub n_train: usize,
    pub n_base: usize,
    pub n_query: usize,
    /// Held out from the end of the training pool for decoder validation.
    pub n_val: usize,

    pub synth_dim: usize,
    pub synth_components: usize,
    pub synth_latent_dim: usize,
    pub synth_spread: f32,
    pub synth_noise: f32,
    pub data_seed: u64,

    pub encoder: EncoderKind,
    pub m: usize,
    pub bits: u32,
    pub kmeans_iters: usize,
    pub opq_iters: usize,
    pub itq_iters: usize,

    pub decoders: Vec<DecoderKind>,
    pub aq_lambda: Option<f64>,
    pub train: TrainConfig,

    pub first_stage: DecoderKind,
    pub strong: DecoderKind,
    pub shortlist: Vec<usize>,
    pub recall_at: Vec<usize>,
    pub seeds: Vec<u64>,
    pub timing_reps: usize,
    pub parallel: bool,

    pub ntrain_grid: Vec<usize>,
    pub prelim_kmeans: bool,

    pub grid_hidden: Vec<usize>,
    pub grid_blocks: Vec<usize>,
    pub grid_lr: Vec<f64>,
    pub grid_optimizer: Vec<OptimizerKind>,
    pub grid_batch_size: Vec<usize>,
    pub grid_lr_decay: Vec<f64>,
    pub grid_weight_decay: Vec<f64>,

    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            base_path: None,
            query_path: None,
            gt_path: None,
            n_train: 500_000,
            n_base: 1_000_000,
            n_query: 10_000,
            n_val: 10_000,
            synth_dim: 32,
            synth_components: 64,
            synth_latent_dim: 4,
            synth_spread: 1.0,
            synth_noise: 0.1,
            data_seed: 0,
            encoder: EncoderKind::Pq,
            m: 8,
            bits: 8,
            kmeans_iters: qdec_core::encoders::DEFAULT_KMEANS_ITERS,
            opq_iters: qdec_core::encoders::DEFAULT_OPQ_OUTER_ITERS,
            itq_iters: qdec_core::encoders::DEFAULT_ITQ_ITERS,
            decoders: vec![DecoderKind::Natural],
            aq_lambda: None,
            train: TrainConfig::default(),
            first_stage: DecoderKind::Natural,
            strong: DecoderKind::Nn,
            shortlist: vec![2, 5, 10, 20, 50, 100, 200, 500, 1000],
            recall_at: vec![1, 10, 100],
            seeds: vec![0, 1, 2, 3, 4],
            timing_reps: 5,
            parallel: false,
            ntrain_grid: vec![10_000, 30_000, 100_000, 300_000, 1_000_000],
            prelim_kmeans: true,
            grid_hidden: Vec::new(),
            grid_blocks: Vec::new(),
            grid_lr: Vec::new(),
            grid_optimizer: Vec::new(),
            grid_batch_size: Vec::new(),
            grid_lr_decay: Vec::new(),
            grid_weight_decay: Vec::new(),
            output_dir: PathBuf::from("out"),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse::<T>()
        .map_err(|e| config_err(format!("{key} = {v:?}: {e}")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(config_err(format!("{key} = {v:?}: expected a boolean"))),
    }
}

fn opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>>
where
    T::Err: fmt::Display,
{
    if v == "auto" || v == "none" {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

/// Every key accepted by [`ExperimentConfig::set`].
pub const KEYS: &[&str] = &[
    "train",
    "base",
    "query",
    "groundtruth",
    "n_train",
    "n_base",
    "n_query",
    "n_val",
    "synth_dim",
    "synth_components",
    "synth_latent_dim",
    "synth_spread",
    "synth_noise",
    "data_seed",
    "encoder",
    "m",
    "bits",
    "kmeans_iters",
    "opq_iters",
    "itq_iters",
    "decoders",
    "aq_lambda",
    "epochs",
    "batch_size",
    "lr",
    "lr_decay",
    "plateau_patience",
    "min_lr",
    "weight_decay",
    "triplet_weight",
    "margin",
    "kpos",
    "hidden",
    "blocks",
    "residual",
    "dropout",
    "optimizer",
    "first_stage",
    "strong",
    "shortlist",
    "recall_at",
    "seeds",
    "timing_reps",
    "parallel",
    "ntrain_grid",
    "prelim_kmeans",
    "grid_hidden",
    "grid_blocks",
    "grid_lr",
    "grid_optimizer",
    "grid_batch_size",
    "grid_lr_decay",
    "grid_weight_decay",
    "output_dir",
];

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let path = || Some(PathBuf::from(v));
        match key.trim() {
            "train" => self.train_path = path(),
            "base" => self.base_path = path(),
            "query" => self.query_path = path(),
            "groundtruth" => self.gt_path = path(),
            "n_train" => self.n_train = parse(key, v)?,
            "n_base" => self.n_base = parse(key, v)?,
            "n_query" => self.n_query = parse(key, v)?,
            "n_val" => self.n_val = parse(key, v)?,
            "synth_dim" => self.synth_dim = parse(key, v)?,
            "synth_components" => self.synth_components = parse(key, v)?,
            "synth_latent_dim" => self.synth_latent_dim = parse(key, v)?,
            "synth_spread" => self.synth_spread = parse(key, v)?,
            "synth_noise" => self.synth_noise = parse(key, v)?,
            "data_seed" => self.data_seed = parse(key, v)?,
            "encoder" => self.encoder = parse(key, v)?,
            "m" => self.m = parse(key, v)?,
            "bits" => self.bits = parse(key, v)?,
            "kmeans_iters" => self.kmeans_iters = parse(key, v)?,
            "opq_iters" => self.opq_iters = parse(key, v)?,
            "itq_iters" => self.itq_iters = parse(key, v)?,
            "decoders" => self.decoders = parse_list(key, v)?,
            "aq_lambda" => {
                self.aq_lambda = opt(key, v)?;
                self.train.aq_lambda = self.aq_lambda;
            }
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr" => self.train.lr = parse(key, v)?,
            "lr_decay" => self.train.lr_decay = parse(key, v)?,
            "plateau_patience" => self.train.plateau_patience = parse(key, v)?,
            "min_lr" => self.train.min_lr = parse(key, v)?,
            "weight_decay" => self.train.weight_decay = parse(key, v)?,
            "triplet_weight" => self.train.triplet_weight = parse(key, v)?,
            "margin" => self.train.margin = opt(key, v)?,
            "kpos" => self.train.kpos = parse(key, v)?,
            "hidden" => self.train.hidden = opt(key, v)?,
            "blocks" => self.train.blocks = parse(key, v)?,
            "residual" => self.train.residual = parse_bool(key, v)?,
            "dropout" => self.train.dropout = parse(key, v)?,
            "optimizer" => self.train.optimizer = parse(key, v)?,
            "first_stage" => self.first_stage = parse(key, v)?,
            "strong" => self.strong = parse(key, v)?,
            "shortlist" => self.shortlist = parse_list(key, v)?,
            "recall_at" => self.recall_at = parse_list(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "timing_reps" => self.timing_reps = parse(key, v)?,
            "parallel" => self.parallel = parse_bool(key, v)?,
            "ntrain_grid" => self.ntrain_grid = parse_list(key, v)?,
            "prelim_kmeans" => self.prelim_kmeans = parse_bool(key, v)?,
            "grid_hidden" => self.grid_hidden = parse_list(key, v)?,
            "grid_blocks" => self.grid_blocks = parse_list(key, v)?,
            "grid_lr" => self.grid_lr = parse_list(key, v)?,
            "grid_optimizer" => self.grid_optimizer = parse_list(key, v)?,
            "grid_batch_size" => self.grid_batch_size = parse_list(key, v)?,
            "grid_lr_decay" => self.grid_lr_decay = parse_list(key, v)?,
            "grid_weight_decay" => self.grid_weight_decay = parse_list(key, v)?,
            "output_dir" => self.output_dir = PathBuf::from(v),
            other => return Err(config_err(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| config_err(format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v)
                .map_err(|e| config_err(format!("line {}: {e}", no + 1)))?;
        }
        Ok(())
    }

    /// Applies `key=value` overrides from the command line.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let (k, v) = o
                .as_ref()
                .split_once('=')
                .ok_or_else(|| config_err(format!("override {:?} is not key=value", o.as_ref())))?;
            self.set(k, v)?;
        }
        Ok(())
    }

    /// Defaults, then `file` (if any), then `overrides`; validated.
    pub fn load<S: AsRef<str>>(file: Option<&Path>, overrides: &[S]) -> Result<Self> {
        let mut cfg = Self::default();
        if let Some(f) = file {
            cfg.apply_text(&fs::read_to_string(f)?)?;
        }
        cfg.apply_overrides(overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(config_err(msg.to_string()));
        if self.m == 0 {
            return fail("m must be positive");
        }
        if !(1..=16).contains(&self.bits) {
            return fail("bits must be in 1..=16");
        }
        if self.encoder == EncoderKind::Itq && self.bits != 1 {
            return fail("itq produces 1-bit codes; set bits = 1");
        }
        if self.encoder == EncoderKind::KMeans && self.m != 1 {
            return fail("kmeans is a single quantizer; set m = 1");
        }
        if self.seeds.is_empty() {
            return fail("at least one seed is required");
        }
        if self.recall_at.is_empty() || self.recall_at.contains(&0) {
            return fail("recall_at must list positive ranks");
        }
        if self.shortlist.contains(&0) {
            return fail("shortlist sizes must be positive");
        }
        if self.decoders.is_empty() {
            return fail("at least one decoder is required");
        }
        let has_files =
            self.train_path.is_some() || self.base_path.is_some() || self.query_path.is_some();
        let all_files =
            self.train_path.is_some() && self.base_path.is_some() && self.query_path.is_some();
        if has_files && !all_files {
            return fail("train, base and query must be given together");
        }
        if self.gt_path.is_some() && !all_files {
            return fail("groundtruth needs train, base and query files");
        }
        if !has_files && self.synth_dim == 0 {
            return fail("synth_dim must be positive");
        }
        self.train
            .validate()
            .map_err(|e| config_err(e.to_string()))?;
        Ok(())
    }

    /// Short label such as `pq16x4`.
    pub fn encoder_label(&self) -> String {
        match self.encoder {
            EncoderKind::Itq => format!("itq{}", self.m),
            EncoderKind::KMeans => format!("kmeans{}", 1u64 << self.bits),
            k => format!("{k}{}x{}", self.m, self.bits),
        }
    }
}
