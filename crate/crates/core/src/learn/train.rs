use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{adam_update, OptState};
use super::adjoint::{grad_theta, traj_loss, Gradients};
use crate::error::{Error, Result};
use crate::grid::{Grid, Mesh, Trajectory};
use crate::solver::{solve, CoeffSet, TermSpec};

/// Training loss threshold used for the epochs-to-threshold metric.
pub const LOSS_THRESHOLD: f64 = 5e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    /// Stop once the epoch's training loss falls below this value; 0 disables.
    pub loss_target: f64,
    /// Stop after this many epochs without a validation improvement; 0 disables.
    pub patience: usize,
    pub checkpoint_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            loss_target: LOSS_THRESHOLD,
            patience: 20,
            checkpoint_stride: 1,
        }
    }
}

impl TrainConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::validation("train.batch_size", "must be at least 1"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::validation("train.lr", "must be finite and > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::validation("train.beta", "betas must lie in [0, 1)"));
        }
        if self.checkpoint_stride < 1 {
            return Err(Error::validation(
                "train.checkpoint_stride",
                "must be at least 1",
            ));
        }
        if !(self.loss_target >= 0.0) {
            return Err(Error::validation("train.loss_target", "must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EpochCap,
    LossTarget,
    Patience,
}

pub struct TrainOutcome {
    pub coeffs: CoeffSet,
    pub state: OptState,
    /// Epoch 0 holds the losses of the starting parameters.
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
}

impl TrainOutcome {
    /// First epoch whose training loss fell below `threshold`.
    pub fn epochs_to(&self, threshold: f64) -> Option<usize> {
        self.history
            .iter()
            .find(|r| r.train_loss < threshold)
            .map(|r| r.epoch)
    }
}

/// Train / validation / test partition in index order: 75% / 12.5% / 12.5%.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: std::ops::Range<usize>,
    pub val: std::ops::Range<usize>,
    pub test: std::ops::Range<usize>,
}

impl Split {
    pub fn standard(m: usize) -> Self {
        let n_train = (m * 3).div_ceil(4);
        let n_val = (m - n_train) / 2;
        Self {
            train: 0..n_train,
            val: n_train..n_train + n_val,
            test: n_train + n_val..m,
        }
    }
}

/// Raw parameters drawn i.i.d. from `U(-0.1, 0.1)`, so realized coefficients start mid-interval.
pub fn init_theta(mesh: Mesh, specs: Vec<TermSpec>, seed: u64) -> Result<CoeffSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = CoeffSet::constant(mesh, specs, 0.0)?;
    for t in set.blocks_mut().iter_mut().flatten() {
        *t = rng.random_range(-0.1..0.1);
    }
    Ok(set)
}

/// Mean loss of the model over `samples` (forward solves only).
pub fn mean_loss(coeffs: &CoeffSet, grid: &Grid, samples: &[Trajectory]) -> Result<f64> {
    let realized = coeffs.realize();
    let losses = samples
        .par_iter()
        .map(|s| solve(s.initial(), &realized, grid).and_then(|p| traj_loss(&p, s)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len().max(1) as f64)
}

/// Mean loss and mean gradient over a batch; per-sample work may run in parallel,
/// the reduction runs in batch order.
pub fn batch_gradient(
    coeffs: &CoeffSet,
    grid: &Grid,
    batch: &[&Trajectory],
    stride: usize,
) -> Result<(f64, Gradients)> {
    let per_sample = batch
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            grad_theta(s.initial(), s, coeffs, grid, stride).map_err(|e| Error::Training {
                epoch: None,
                sample: Some(i),
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients::zeros_like(coeffs);
    let mut loss = 0.0;
    for (l, g) in &per_sample {
        loss += l;
        total.accumulate(g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.scale(inv);
    Ok((loss * inv, total))
}

/// Fits `coeffs` to `train_set` by minibatch Adam on the trajectory loss.
///
/// Pass a previous `state` to resume; otherwise a fresh optimizer is created.
pub fn train(
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    grid: &Grid,
    coeffs: CoeffSet,
    state: Option<OptState>,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(train_set, val_set, grid, coeffs, state, config, |_| {})
}

/// As [`train`], calling `on_epoch` after every recorded epoch (including epoch 0).
pub fn train_with(
    train_set: &[Trajectory],
    val_set: &[Trajectory],
    grid: &Grid,
    mut coeffs: CoeffSet,
    state: Option<OptState>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Degenerate("training set is empty".into()));
    }
    if let Some(s) = train_set
        .iter()
        .chain(val_set)
        .find(|s| *s.mesh() != grid.mesh)
    {
        return Err(Error::Shape(format!(
            "sample mesh {:?} does not match model grid {:?}",
            s.mesh(),
            grid.mesh
        )));
    }
    let mut state = state.unwrap_or_else(|| {
        OptState::with_betas(
            coeffs.blocks(),
            config.lr,
            config.beta1,
            config.beta2,
            config.eps,
        )
    });
    state.lr = config.lr;

    let tag = |epoch: usize| {
        move |e: Error| match e {
            Error::Training { sample, source, .. } => Error::Training {
                epoch: Some(epoch),
                sample,
                source,
            },
            other => Error::Training {
                epoch: Some(epoch),
                sample: None,
                source: Box::new(other),
            },
        }
    };
    let val_loss = |c: &CoeffSet| -> Result<Option<f64>> {
        if val_set.is_empty() {
            Ok(None)
        } else {
            mean_loss(c, grid, val_set).map(Some)
        }
    };

    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: mean_loss(&coeffs, grid, train_set).map_err(tag(0))?,
        val_loss: val_loss(&coeffs).map_err(tag(0))?,
    }];
    on_epoch(&history[0]);
    let mut best_val = history[0].val_loss.unwrap_or(f64::INFINITY);
    let mut best_epoch = 0;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stop = StopReason::EpochCap;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Trajectory> = chunk.iter().map(|&i| &train_set[i]).collect();
            let (loss, grads) = batch_gradient(&coeffs, grid, &batch, config.checkpoint_stride)
                .map_err(tag(epoch))?;
            loss_sum += loss * chunk.len() as f64;
            adam_update(coeffs.blocks_mut(), grads.blocks(), &mut state)?;
        }
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: val_loss(&coeffs).map_err(tag(epoch))?,
        };
        history.push(record);
        on_epoch(&record);
        if let Some(v) = record.val_loss {
            if v < best_val {
                best_val = v;
                best_epoch = epoch;
            }
        }
        if config.loss_target > 0.0 && record.train_loss < config.loss_target {
            stop = StopReason::LossTarget;
            break;
        }
        if config.patience > 0 && record.val_loss.is_some() && epoch - best_epoch >= config.patience
        {
            stop = StopReason::Patience;
            break;
        }
    }
    Ok(TrainOutcome {
        coeffs,
        state,
        history,
        stop,
    })
}
