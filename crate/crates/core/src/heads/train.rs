use rand::seq::SliceRandom;

use super::{DropoutCtx, Instance, PunModel};
use crate::config::{RunConfig, Task};
use crate::data::metrics::{score_detection, score_location};
use crate::error::{PunError, Result};
use crate::numerics::{seeded_rng, Adam, AdamConfig, Graph, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub seed: u64,
    pub task: Task,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-5,
            batch_size: 32,
            dropout: 0.1,
            epochs: 10,
            seed: 42,
            task: Task::Detection,
        }
    }
}

impl From<&RunConfig> for TrainConfig {
    fn from(c: &RunConfig) -> Self {
        TrainConfig {
            lr: c.lr,
            batch_size: c.batch_size,
            dropout: c.dropout,
            epochs: c.epochs,
            seed: c.seed,
            task: c.task,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean loss per sentence (detection) or per token (location).
    pub loss: f64,
    /// F1 in percent on the dev set, `None` without one.
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Mini-batch Adam training with per-epoch shuffling.
///
/// After every epoch the dev F1 is measured; the parameters of the best
/// epoch (earliest on ties) are restored at the end. Without a dev set the
/// last epoch is kept.
pub fn train<T: Real>(
    model: &mut PunModel<T>,
    train_set: &[Instance],
    dev_set: &[Instance],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(PunError::arg("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(PunError::arg("batch_size must be at least 1"));
    }
    let usable: Vec<&Instance> = match cfg.task {
        Task::Detection => train_set.iter().collect(),
        Task::Location => train_set.iter().filter(|i| i.pun_index.is_some()).collect(),
    };
    if usable.is_empty() {
        return Err(PunError::arg(
            "location training needs examples with a pun index",
        ));
    }
    let dev: Vec<&Instance> = match cfg.task {
        Task::Detection => dev_set.iter().collect(),
        Task::Location => dev_set.iter().filter(|i| i.pun_index.is_some()).collect(),
    };

    let mut rng = seeded_rng(cfg.seed.wrapping_add(0x5eed));
    let mut adam = Adam::new(
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
        &model.params,
    );
    let mut order = usable;
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, crate::numerics::Params<T>)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut units = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut g = Graph::new();
            let vars = model.params.bind(&mut g);
            let mut ctx = DropoutCtx {
                rng: &mut rng,
                p: cfg.dropout,
            };
            let loss = model.loss(&mut g, &vars, batch, cfg.task, Some(&mut ctx))?;
            let n_units = match cfg.task {
                Task::Detection => batch.len(),
                Task::Location => batch.iter().map(|i| i.len()).sum(),
            };
            total += g.value(loss).item().to_f64().unwrap_or(f64::NAN) * n_units as f64;
            units += n_units;
            let mut grads = g.backward(loss)?;
            let grads: Vec<_> = vars.iter().map(|&v| grads.take(v)).collect();
            adam.step(&mut model.params, &grads)?;
        }
        let dev_f1 = if dev.is_empty() {
            None
        } else {
            Some(dev_f1(model, &dev, cfg.task)?)
        };
        log.push(EpochLog {
            epoch,
            loss: total / units as f64,
            dev_f1,
        });
        if let Some(f1) = dev_f1 {
            if best.as_ref().is_none_or(|(b, _, _)| f1 > *b) {
                best = Some((f1, epoch, model.params.clone()));
            }
        }
    }

    let best_epoch = match best {
        Some((_, epoch, params)) => {
            model.params = params;
            epoch
        }
        None => cfg.epochs,
    };
    Ok(TrainOutcome { log, best_epoch })
}

fn dev_f1<T: Real>(model: &PunModel<T>, dev: &[&Instance], task: Task) -> Result<f64> {
    match task {
        Task::Detection => {
            let mut preds = Vec::with_capacity(dev.len());
            for inst in dev {
                preds.push(model.detect(inst)?.label);
            }
            let golds: Vec<usize> = dev.iter().map(|i| i.label).collect();
            Ok(score_detection(&preds, &golds)?.f1)
        }
        Task::Location => {
            let mut preds = Vec::with_capacity(dev.len());
            for inst in dev {
                preds.push(model.locate(inst)?.indices);
            }
            let golds: Vec<Option<usize>> = dev.iter().map(|i| i.pun_index).collect();
            Ok(score_location(&preds, &golds)?.f1)
        }
    }
}
