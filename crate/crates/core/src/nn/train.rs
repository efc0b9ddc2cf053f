use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::loss_and_grad;
use super::optim::{Optimizer, OptimizerKind, PlateauScheduler};
use super::triplet::{default_margin, nearest_neighbors, triplets_from_neighbors};
use super::NnDecoder;
use crate::codes::CodeArray;
use crate::decoders::aq::{aq_fit, default_lambda};
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Factor applied by the plateau scheduler.
    pub lr_decay: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub weight_decay: f64,
    /// Weight of the triplet term; 0 disables triplet mining.
    pub triplet_weight: f64,
    /// Triplet margin; `None` uses [`default_margin`].
    pub margin: Option<f64>,
    pub kpos: usize,
    pub seed: u64,
    /// Hidden width; `None` means `2d`.
    pub hidden: Option<usize>,
    pub blocks: usize,
    pub residual: bool,
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    /// Ridge term of the LUT initialization; `None` uses [`default_lambda`].
    pub aq_lambda: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 256,
            lr: 5e-4,
            lr_decay: 0.5,
            plateau_patience: 10,
            min_lr: 1e-6,
            weight_decay: 0.0,
            triplet_weight: 0.0,
            margin: None,
            kpos: 10,
            seed: 0,
            hidden: None,
            blocks: 1,
            residual: false,
            dropout: 0.0,
            optimizer: OptimizerKind::Adam,
            aq_lambda: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::param(what.to_string()));
        if self.batch_size < 2 {
            return bad("batch_size must be at least 2");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0, 1]");
        }
        if !(self.weight_decay >= 0.0) || !(self.triplet_weight >= 0.0) || !(self.min_lr >= 0.0) {
            return bad("weight_decay, triplet_weight and min_lr must be >= 0");
        }
        if let Some(m) = self.margin {
            if !(m > 0.0) {
                return bad("margin must be > 0");
            }
        }
        if self.triplet_weight > 0.0 && self.kpos == 0 {
            return bad("kpos must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub decoder: NnDecoder<f32>,
    /// Row 0 is the initialization; row `e` follows epoch `e`.
    pub history: Vec<HistoryRow>,
    /// Epoch at which a non-finite loss stopped training. The decoder is
    /// then the one from the start of that epoch.
    pub diverged_at: Option<usize>,
}

fn check_pair(codes: &CodeArray, x: &DenseMatrix, what: &str) -> Result<()> {
    if codes.len() != x.rows() {
        return Err(Error::shape(format!(
            "{what}: {} codes for {} vectors",
            codes.len(),
            x.rows()
        )));
    }
    Ok(())
}

fn eval_mse(net: &NnDecoder<f32>, codes: &CodeArray, x: &DenseMatrix) -> Result<f64> {
    let out = net.forward_eval(codes)?;
    super::loss::reconstruction_loss(x.as_slice(), &out, x.dim())
}

/// Trains a decoder on fixed codes. The LUT layer starts from the closed-form
/// additive fit on the training codes.
pub fn train_decoder(
    codes_train: &CodeArray,
    x_train: &DenseMatrix,
    codes_val: &CodeArray,
    x_val: &DenseMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_pair(codes_train, x_train, "training set")?;
    check_pair(codes_val, x_val, "validation set")?;
    if codes_val.is_empty() {
        return Err(Error::param("empty validation set"));
    }
    if x_val.dim() != x_train.dim()
        || codes_val.m() != codes_train.m()
        || codes_val.bits() != codes_train.bits()
    {
        return Err(Error::shape(
            "training and validation sets differ in layout",
        ));
    }
    let n = codes_train.len();
    if n < cfg.batch_size {
        return Err(Error::param(format!(
            "{n} training vectors do not fill one batch of {}",
            cfg.batch_size
        )));
    }
    let d = x_train.dim();
    let lambda = cfg.aq_lambda.unwrap_or_else(|| default_lambda(codes_train));
    let lut = aq_fit(codes_train, x_train, lambda)?;
    let mut net =
        NnDecoder::<f32>::with_lut(&lut, cfg.hidden.unwrap_or(2 * d), cfg.blocks, cfg.seed)?;
    net.residual = cfg.residual;
    net.dropout = cfg.dropout;

    let triplet = if cfg.triplet_weight > 0.0 {
        let (ids, dists) = nearest_neighbors(x_train, cfg.kpos + 1)?;
        let margin = cfg
            .margin
            .unwrap_or_else(|| default_margin(&dists, cfg.kpos));
        Some((triplets_from_neighbors(&ids, cfg.kpos, cfg.seed), margin))
    } else {
        None
    };

    let shapes: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.weight_decay, &shapes);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.lr_decay, cfg.plateau_patience, cfg.min_lr);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_ba7c);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xd700_u64);

    let mut history = vec![HistoryRow {
        epoch: 0,
        train_mse: eval_mse(&net, codes_train, x_train)?,
        val_mse: eval_mse(&net, codes_val, x_val)?,
        lr: cfg.lr,
    }];
    let mut order: Vec<usize> = (0..n).collect();
    let bs = cfg.batch_size;
    let mut diverged_at = None;
    let mut targets = Vec::with_capacity(bs * d);

    'epochs: for epoch in 1..=cfg.epochs {
        let lr = sched.lr();
        let snapshot = net.clone();
        order.shuffle(&mut order_rng);
        for batch in order.chunks_exact(bs) {
            targets.clear();
            for &i in batch {
                targets.extend_from_slice(x_train.row(i));
            }
            let (ids, tw) = match &triplet {
                Some((trips, margin)) => {
                    let mut ids = batch.to_vec();
                    ids.extend(batch.iter().map(|&i| trips[i].positive as usize));
                    ids.extend(batch.iter().map(|&i| trips[i].negative as usize));
                    (ids, Some((cfg.triplet_weight, *margin)))
                }
                None => (batch.to_vec(), None),
            };
            let codes = codes_train.select(&ids);
            let (out, cache) = net.forward_train(&codes, &mut dropout_rng)?;
            let (parts, g) = loss_and_grad(&out, &targets, bs, d, tw)?;
            if !parts.total.is_finite() {
                net = snapshot;
                diverged_at = Some(epoch);
                break 'epochs;
            }
            let grads = net.backward(&cache, &g)?;
            opt.step(&mut net.params_mut(), &grads, lr);
        }
        let train_mse = eval_mse(&net, codes_train, x_train)?;
        let val_mse = eval_mse(&net, codes_val, x_val)?;
        if !(train_mse.is_finite() && val_mse.is_finite() && net.is_finite()) {
            net = snapshot;
            diverged_at = Some(epoch);
            break;
        }
        log::debug!("epoch {epoch}: train {train_mse:.6} val {val_mse:.6} lr {lr:.2e}");
        history.push(HistoryRow {
            epoch,
            train_mse,
            val_mse,
            lr,
        });
        sched.observe(val_mse);
    }
    Ok(TrainOutcome {
        decoder: net,
        history,
        diverged_at,
    })
}

/// Writes `epoch,train_mse,val_mse,lr` rows.
pub fn write_history_csv<W: Write>(mut w: W, history: &[HistoryRow]) -> std::io::Result<()> {
    writeln!(w, "epoch,train_mse,val_mse,lr")?;
    for r in history {
        writeln!(
            w,
            "{},{:.9e},{:.9e},{:.6e}",
            r.epoch, r.train_mse, r.val_mse, r.lr
        )?;
    }
    Ok(())
}
