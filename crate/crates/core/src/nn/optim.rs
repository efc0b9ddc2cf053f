use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    /// Momentum 0.9.
    Sgd,
    RmsProp,
    Adadelta,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(Self::Adam),
            "sgd" => Ok(Self::Sgd),
            "rmsprop" => Ok(Self::RmsProp),
            "adadelta" => Ok(Self::Adadelta),
            other => Err(Error::param(format!("unknown optimizer {other:?}"))),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Adam => "adam",
            Self::Sgd => "sgd",
            Self::RmsProp => "rmsprop",
            Self::Adadelta => "adadelta",
        })
    }
}

const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;
const SGD_MOMENTUM: f32 = 0.9;
const RMS_ALPHA: f32 = 0.99;
const RMS_EPS: f32 = 1e-8;
const ADADELTA_RHO: f32 = 0.9;
const ADADELTA_EPS: f32 = 1e-6;

/// First-order optimizer over a fixed list of `f32` tensors. Weight decay is
/// an L2 term added to the gradient.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    weight_decay: f32,
    step: i32,
    first: Vec<Vec<f32>>,
    second: Vec<Vec<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, weight_decay: f64, shapes: &[usize]) -> Self {
        let zeros = || shapes.iter().map(|&n| vec![0.0f32; n]).collect::<Vec<_>>();
        Self {
            kind,
            weight_decay: weight_decay as f32,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn kind(&self) -> OptimizerKind {
        self.kind
    }

    pub fn step(&mut self, params: &mut [&mut Vec<f32>], grads: &[Vec<f32>], lr: f64) {
        assert_eq!(params.len(), grads.len());
        self.step += 1;
        let lr = lr as f32;
        let wd = self.weight_decay;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step);
        for (t, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.first[t], &mut self.second[t]);
            for i in 0..p.len() {
                let gi = g[i] + wd * p[i];
                match self.kind {
                    OptimizerKind::Adam => {
                        m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * gi;
                        v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let denom = (v[i] / bc2).sqrt() + ADAM_EPS;
                        p[i] -= lr * (m[i] / bc1) / denom;
                    }
                    OptimizerKind::Sgd => {
                        m[i] = if self.step == 1 {
                            gi
                        } else {
                            SGD_MOMENTUM * m[i] + gi
                        };
                        p[i] -= lr * m[i];
                    }
                    OptimizerKind::RmsProp => {
                        v[i] = RMS_ALPHA * v[i] + (1.0 - RMS_ALPHA) * gi * gi;
                        p[i] -= lr * gi / (v[i].sqrt() + RMS_EPS);
                    }
                    OptimizerKind::Adadelta => {
                        v[i] = ADADELTA_RHO * v[i] + (1.0 - ADADELTA_RHO) * gi * gi;
                        let delta =
                            (m[i] + ADADELTA_EPS).sqrt() / (v[i] + ADADELTA_EPS).sqrt() * gi;
                        m[i] = ADADELTA_RHO * m[i] + (1.0 - ADADELTA_RHO) * delta * delta;
                        p[i] -= lr * delta;
                    }
                }
            }
        }
    }
}

/// Multiplies the learning rate by `factor` once the monitored loss has not
/// improved (relative threshold `1e-4`) for more than `patience` epochs.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64) -> Self {
        Self {
            lr,
            factor,
            patience,
            min_lr,
            best: f64::INFINITY,
            bad_epochs: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's loss and returns the learning rate for the next.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best * (1.0 - 1e-4) {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
        }
        if self.bad_epochs > self.patience {
            self.lr = (self.lr * self.factor).max(self.min_lr);
            self.bad_epochs = 0;
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimize(kind: OptimizerKind, lr: f64, steps: usize) -> f32 {
        // f(p) = (p − 3)²
        let mut p = vec![0.0f32];
        let mut opt = Optimizer::new(kind, 0.0, &[1]);
        for _ in 0..steps {
            let g = vec![vec![2.0 * (p[0] - 3.0)]];
            opt.step(&mut [&mut p], &g, lr);
        }
        p[0]
    }

    #[test]
    fn first_adam_step_has_size_lr() {
        let mut p = vec![1.0f32, -1.0];
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.0, &[2]);
        opt.step(&mut [&mut p], &[vec![10.0, -0.01]], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-5);
    }

    #[test]
    fn all_optimizers_reach_the_minimum() {
        assert!((minimize(OptimizerKind::Adam, 0.05, 2000) - 3.0).abs() < 1e-2);
        assert!((minimize(OptimizerKind::Sgd, 0.01, 2000) - 3.0).abs() < 1e-3);
        assert!((minimize(OptimizerKind::RmsProp, 0.01, 2000) - 3.0).abs() < 2e-2);
        assert!((minimize(OptimizerKind::Adadelta, 1.0, 5000) - 3.0).abs() < 5e-2);
    }

    #[test]
    fn weight_decay_shrinks_towards_zero() {
        let mut p = vec![1.0f32];
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.5, &[1]);
        opt.step(&mut [&mut p], &[vec![0.0]], 0.1);
        assert!((p[0] - 0.95).abs() < 1e-7);
    }

    #[test]
    fn plateau_schedule() {
        let mut s = PlateauScheduler::new(1.0, 0.5, 2, 0.2);
        assert_eq!(s.observe(10.0), 1.0);
        assert_eq!(s.observe(10.0), 1.0);
        assert_eq!(s.observe(10.0), 1.0);
        assert_eq!(s.observe(10.0), 0.5);
        assert_eq!(s.observe(9.0), 0.5);
        for _ in 0..3 {
            s.observe(9.0);
        }
        assert_eq!(s.lr(), 0.25);
        for _ in 0..3 {
            s.observe(9.0);
        }
        assert_eq!(s.lr(), 0.2);
    }

    #[test]
    fn parses_names() {
        assert_eq!(
            "RMSprop".parse::<OptimizerKind>().unwrap(),
            OptimizerKind::RmsProp
        );
        assert_eq!(OptimizerKind::Adadelta.to_string(), "adadelta");
        assert!("lbfgs".parse::<OptimizerKind>().is_err());
    }
}
