//! Mini-batch training with per-epoch validation and transfer fitting.

use std::fmt::Write as _;

use coheq_core::modem::{ber, demap_16qam_hard, q_factor_db_saturating};
use coheq_core::rng::substream;
use coheq_core::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{equalize, make_windows, Windows};
use crate::model::EqModel;
use crate::optim::{mse_loss, AdamConfig, AdamState};
use crate::{NnError, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Loss {
    #[default]
    #[serde(rename = "MSE")]
    Mse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    /// Windows per mini-batch.
    pub batch: usize,
    pub epochs: usize,
    /// Training pool length in symbols.
    pub pool_size: usize,
    /// Symbols drawn from the pool for each epoch.
    pub epoch_subset: usize,
    pub seed: u64,
    #[serde(default)]
    pub loss: Loss,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 5e-4, batch: 4, epochs: 500, pool_size: 1 << 16, epoch_subset: 1 << 14, seed: 7, loss: Loss::Mse }
    }
}

impl TrainConfig {
    pub fn windows_per_epoch(&self, n_in: usize, n_out: usize) -> usize {
        if self.epoch_subset < n_in {
            0
        } else {
            (self.epoch_subset - n_in) / n_out + 1
        }
    }

    pub fn validate(&self, n_in: usize, n_out: usize) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(NnError::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.epoch_subset > self.pool_size {
            return Err(NnError::Config(format!(
                "epoch subset {} exceeds pool size {}",
                self.epoch_subset, self.pool_size
            )));
        }
        let per_epoch = self.windows_per_epoch(n_in, n_out);
        if self.batch == 0 || self.batch > per_epoch {
            return Err(NnError::Config(format!(
                "batch {} must lie in 1..={per_epoch} (windows per epoch)",
                self.batch
            )));
        }
        Ok(())
    }
}

/// Received soft symbols of both polarizations and the transmitted symbols
/// of the polarization a model recovers.
#[derive(Debug, Clone, PartialEq)]
pub struct PolDataset {
    pub rx: [Vec<Complex64>; 2],
    pub tx: Vec<Complex64>,
}

impl PolDataset {
    pub fn new(rx: [Vec<Complex64>; 2], tx: Vec<Complex64>) -> Result<Self> {
        if rx[0].len() != rx[1].len() || rx[0].len() != tx.len() {
            return Err(NnError::Shape(format!(
                "dataset lengths {}, {}, {} differ",
                rx[0].len(),
                rx[1].len(),
                tx.len()
            )));
        }
        Ok(Self { rx, tx })
    }

    /// The same data seen by a model recovering the other polarization.
    pub fn for_pol_y(rx: &[Vec<Complex64>; 2], tx_y: &[Complex64]) -> Result<Self> {
        Self::new([rx[1].clone(), rx[0].clone()], tx_y.to_vec())
    }

    pub fn len(&self) -> usize {
        self.tx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tx.is_empty()
    }

    fn rx_refs(&self) -> [&[Complex64]; 2] {
        [&self.rx[0], &self.rx[1]]
    }

    /// `n` consecutive symbols starting at `start`, wrapping around the end.
    fn cyclic_slice(&self, start: usize, n: usize) -> Self {
        let len = self.len();
        let take = |v: &[Complex64]| (0..n).map(|i| v[(start + i) % len]).collect::<Vec<_>>();
        Self { rx: [take(&self.rx[0]), take(&self.rx[1])], tx: take(&self.tx) }
    }
}

/// Hard-decision Q factor of the model on a dataset.
pub fn evaluate_q_db(model: &EqModel, data: &PolDataset) -> Result<f64> {
    let out = equalize(model, data.rx_refs())?;
    let b = ber(&demap_16qam_hard(&out), &demap_16qam_hard(&data.tx)).map_err(NnError::Core)?;
    Ok(q_factor_db_saturating(b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_q_db: f64,
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,loss,val_q_db\n");
    for r in history {
        writeln!(s, "{},{:.10e},{:.6}", r.epoch, r.loss, r.val_q_db).expect("write to string");
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the best validation Q seen.
    pub model: EqModel,
    pub history: Vec<EpochRecord>,
    pub best_val_q_db: f64,
}

fn run_epoch(model: &mut EqModel, adam: &mut AdamState, windows: &Windows, order: &[usize], cfg: &TrainConfig) -> Result<f64> {
    let adam_cfg = AdamConfig::with_lr(cfg.lr);
    let (in_w, out_w) = (windows.n_in * 4, windows.n_out * 2);
    let mut x = Vec::with_capacity(cfg.batch * in_w);
    let mut y = Vec::with_capacity(cfg.batch * out_w);
    let mut total = 0.0;
    for group in order.chunks(cfg.batch) {
        x.clear();
        y.clear();
        for &i in group {
            x.extend_from_slice(windows.input(i));
            y.extend_from_slice(windows.target(i));
        }
        model.zero_grad();
        let (pred, cache) = model.forward_train(&x, group.len())?;
        let (loss, grad) = mse_loss(&pred, &y)?;
        if !loss.is_finite() {
            return Err(NnError::NonFinite("loss"));
        }
        model.backward(&cache, &grad)?;
        adam.step(&mut model.params_mut(), &adam_cfg)?;
        total += loss * group.len() as f64;
    }
    Ok(total / order.len() as f64)
}

fn fit(
    mut model: EqModel,
    pool: &PolDataset,
    val: &PolDataset,
    cfg: &TrainConfig,
    epochs: usize,
    start_as_candidate: bool,
) -> Result<TrainOutcome> {
    let arch = *model.arch();
    if pool.is_empty() {
        return Err(NnError::EmptyPool);
    }
    let cfg = TrainConfig { pool_size: pool.len(), ..cfg.clone() };
    cfg.validate(arch.n_in_symbols, arch.n_out_symbols)?;
    if epochs == 0 {
        let q = if start_as_candidate { evaluate_q_db(&model, val)? } else { f64::NEG_INFINITY };
        return Ok(TrainOutcome { model, history: Vec::new(), best_val_q_db: q });
    }
    let mut best = model.clone();
    let mut best_q = if start_as_candidate { evaluate_q_db(&model, val)? } else { f64::NEG_INFINITY };
    let mut adam = AdamState::new(model.params().iter().map(|t| t.len()));
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut rng = substream(cfg.seed, epoch as u64);
        let start = rng.random_range(0..pool.len());
        let subset = pool.cyclic_slice(start, cfg.epoch_subset);
        let windows = make_windows(subset.rx_refs(), &subset.tx, &arch)?;
        let mut order: Vec<usize> = (0..windows.n).collect();
        order.shuffle(&mut rng);
        let loss = run_epoch(&mut model, &mut adam, &windows, &order, &cfg)?;
        let val_q_db = evaluate_q_db(&model, val)?;
        if val_q_db > best_q {
            best_q = val_q_db;
            best = model.clone();
        }
        history.push(EpochRecord { epoch: epoch + 1, loss, val_q_db });
    }
    Ok(TrainOutcome { model: best, history, best_val_q_db: best_q })
}

/// Trains from the given initial weights for `cfg.epochs` epochs.
pub fn train(model: EqModel, pool: &PolDataset, val: &PolDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    fit(model, pool, val, cfg, cfg.epochs, false)
}

pub const MAX_TRANSFER_EPOCHS: usize = 5;

/// Short fine-tuning on data from another launch power. The starting
/// weights stay a candidate, so validation Q never drops.
pub fn transfer_fit(
    model: EqModel,
    pool: &PolDataset,
    val: &PolDataset,
    cfg: &TrainConfig,
    max_epochs: usize,
) -> Result<TrainOutcome> {
    if max_epochs > MAX_TRANSFER_EPOCHS {
        return Err(NnError::Config(format!("transfer limited to {MAX_TRANSFER_EPOCHS} epochs, got {max_epochs}")));
    }
    fit(model, pool, val, cfg, max_epochs, true)
}
