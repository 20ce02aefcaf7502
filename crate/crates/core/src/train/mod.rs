//! Training loop, regularization baselines, and the sweep/scaling drivers.

mod optim;
mod report;
mod study;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use optim::{Optimizer, OptimizerConfig};
pub use report::{write_metrics_csv, write_scaling_csv, write_sweep_csv};
pub use study::{scaling_study, sweep, Experiment, ScalingRow, SweepGrid, SweepRow};

use crate::autodiff::{Tape, Var};
use crate::data::{Batch, Dataset};
use crate::error::{Error, Result};
use crate::models::{bind, evaluate, is_bias, run_forward, Bound, ForwardCtx, Model, Overlays, ParameterSet};
use crate::perturb::{attack_step, AttackConfig, GradMap};
use crate::rng::{streams, Rng};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Regularizer {
    #[default]
    None,
    L1 { lambda: f64 },
    L2 { lambda: f64 },
    Dropout { rate: f64 },
    Attack(AttackConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub regularizer: Regularizer,
    /// Evaluate every this many epochs; the final epoch is always evaluated.
    #[serde(default = "one")]
    pub eval_every: usize,
    #[serde(default)]
    pub seed: u64,
    /// Stop after this many evaluations without a new best.
    #[serde(default)]
    pub patience: Option<usize>,
}

fn one() -> usize {
    1
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config("train.lr: must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size: must be at least 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("train.eval_every: must be at least 1".into()));
        }
        match &self.regularizer {
            Regularizer::L1 { lambda } | Regularizer::L2 { lambda } if !(*lambda >= 0.0) => {
                Err(Error::Config("train.regularizer.lambda: must be non-negative".into()))
            }
            Regularizer::Dropout { rate } if !(0.0..1.0).contains(rate) => {
                Err(Error::Config("train.regularizer.rate: must lie in [0, 1)".into()))
            }
            Regularizer::Attack(a) => a.validate(),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    pub seconds: f64,
    /// Cumulative forward-backward count since the start of training.
    pub fb_count: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation evaluation.
    pub params: ParameterSet,
    pub metrics: Vec<MetricsRecord>,
    pub best_epoch: Option<usize>,
    pub test_loss: f64,
    pub test_acc: f64,
    pub fb_count: u64,
}

/// `lambda * sum|w|` or `lambda * sum w^2` over every non-bias parameter.
pub fn penalty<'t>(bound: &Bound<'t>, reg: &Regularizer) -> Result<Option<Var<'t>>> {
    let (lambda, square) = match reg {
        Regularizer::L1 { lambda } => (*lambda, false),
        Regularizer::L2 { lambda } => (*lambda, true),
        _ => return Ok(None),
    };
    let mut total: Option<Var<'t>> = None;
    for p in bound.iter().filter(|p| !is_bias(&p.name)) {
        let w = p.effective;
        let term = if square { w.mul(&w)?.sum()? } else { w.abs()?.sum()? };
        total = Some(match total {
            Some(t) => t.add(&term)?,
            None => term,
        });
    }
    total.map(|t| t.scale(lambda)).transpose()
}

/// Clean forward/backward with the configured penalty or dropout.
fn regularized_pass(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    reg: &Regularizer,
    dropout_rng: &mut Rng,
) -> Result<(f64, GradMap)> {
    let tape = Tape::new();
    let bound = bind(&tape, params, &Overlays::new(), true, false)?;
    let mut ctx = match reg {
        Regularizer::Dropout { rate } => ForwardCtx {
            training: true,
            dropout: *rate,
            rng: Some(dropout_rng),
        },
        _ => ForwardCtx::eval(),
    };
    let logits = run_forward(model, &tape, &bound, batch, None, &mut ctx)?.logits;
    let mut loss = model.loss(logits, &batch.labels)?;
    if let Some(pen) = penalty(&bound, reg)? {
        loss = loss.add(&pen)?;
    }
    tape.backward(loss)?;
    let grads = params
        .iter()
        .map(|(n, t)| {
            let g = bound.leaf(n).and_then(|v| v.grad());
            (n.to_string(), g.unwrap_or_else(|| crate::Tensor::zeros(t.shape())))
        })
        .collect();
    Ok((loss.item(), grads))
}

/// Trains from `init`. Shuffling, attack masks and dropout draw from
/// separate streams of `cfg.seed`. Returns the parameters of the best
/// validation evaluation (highest accuracy, then lowest loss, then
/// earliest) and their test metrics.
pub fn train(model: &dyn Model, init: &ParameterSet, splits: &Splits, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut params = init.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.lr);
    let mut shuffle = Rng::with_stream(cfg.seed, streams::SHUFFLE);
    let mut attack_rng = Rng::with_stream(cfg.seed, streams::ATTACK);
    let mut dropout_rng = Rng::with_stream(cfg.seed, streams::DROPOUT);
    let started = Instant::now();
    let mut fb_count = 0u64;
    let mut metrics = Vec::new();
    let mut best: Option<(f64, f64, usize, ParameterSet)> = None;
    let mut since_best = 0usize;
    let n = splits.train.len();

    for epoch in 1..=cfg.epochs {
        let order = shuffle.permutation(n);
        for (b, rows) in order.chunks(cfg.batch_size).enumerate() {
            let batch = splits.train.batch(rows);
            let abort = |params: &ParameterSet| Error::NumericalAbort {
                epoch,
                batch: b,
                layer_norms: params.norms(),
            };
            let step = match &cfg.regularizer {
                Regularizer::Attack(a) => attack_step(model, &params, &batch, a, &mut attack_rng)
                    .and_then(|o| Ok((o.clean_loss + o.adv_loss, o.total_grad()?, o.fb_count))),
                reg => regularized_pass(model, &params, &batch, reg, &mut dropout_rng).map(|(l, g)| (l, g, 2)),
            };
            let (loss, grads, count) = match step {
                Err(Error::NonFinite { .. }) => return Err(abort(&params)),
                other => other?,
            };
            if !loss.is_finite() || grads.values().any(|g| !g.is_finite()) {
                return Err(abort(&params));
            }
            fb_count += count;
            opt.step(&mut params, &grads)?;
        }

        if epoch % cfg.eval_every != 0 && epoch != cfg.epochs {
            continue;
        }
        let (train_loss, train_acc) = evaluate(model, &params, &splits.train, cfg.batch_size)?;
        let (val_loss, val_acc) = evaluate(model, &params, &splits.val, cfg.batch_size)?;
        metrics.push(MetricsRecord {
            epoch,
            train_loss,
            train_acc,
            val_loss,
            val_acc,
            seconds: started.elapsed().as_secs_f64(),
            fb_count,
        });
        let improved = match &best {
            None => true,
            Some((acc, loss, _, _)) => val_acc > *acc || (val_acc == *acc && val_loss < *loss),
        };
        if improved || splits.val.is_empty() {
            best = Some((val_acc, val_loss, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (best_epoch, params) = match best {
        Some((_, _, e, p)) => (Some(e), p),
        None => (None, params),
    };
    let (test_loss, test_acc) = evaluate(model, &params, &splits.test, cfg.batch_size.max(1))?;
    Ok(TrainOutcome {
        params,
        metrics,
        best_epoch,
        test_loss,
        test_acc,
        fb_count,
    })
}
