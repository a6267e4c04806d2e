use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffengine::{AdamState, EngineError, SessionRng, Tape, Tensor};
use crate::evalharness::config::{LossConfig, TrainConfig};
use crate::latent::LinearAutoencoder;
use crate::losses::{total_loss, total_loss_general, LossBatch, LossParts};
use crate::pushforward::PushforwardModel;
use crate::{Error, Result};

/// Training inputs in ambient coordinates.
#[derive(Clone, Copy, Debug)]
pub struct TrainData<'a> {
    pub source: &'a Tensor,
    pub target: &'a Tensor,
    pub paired: Option<(&'a Tensor, &'a Tensor)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub status: RunStatus,
    /// Mean total loss per completed epoch.
    pub loss_trace: Vec<f64>,
    pub restarts: u32,
    pub final_lr: f64,
    pub last_parts: LossParts,
}

/// Learnable objects of one session.
pub struct Trainee<'a> {
    pub model: &'a mut PushforwardModel,
    pub autoencoders: Option<(&'a LinearAutoencoder, &'a LinearAutoencoder)>,
}

fn gather(x: &Tensor, idx: &[usize]) -> Tensor {
    x.select_rows(idx)
}

/// Runs Adam over shuffled minibatches. Each step pairs a source batch with
/// an equally sized target batch; paired items are drawn with replacement.
/// A non-finite loss rolls back to the last finished epoch and halves the
/// learning rate; a second occurrence ends the run as failed.
pub fn train(trainee: Trainee<'_>, data: TrainData<'_>, loss: &LossConfig, cfg: &TrainConfig, rng: &mut SessionRng) -> Result<TrainReport> {
    let Trainee { model, autoencoders } = trainee;
    let (ns, nt) = (data.source.rows(), data.target.rows());
    if ns == 0 || nt == 0 {
        return Err(Error::EmptyBatch("training data"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch_size must be positive".into()));
    }
    let n_pairs = data.paired.map_or(0, |(p, _)| p.rows());
    let frozen: Vec<String> = autoencoders
        .map(|(s, t)| [s.frozen_prefixes(), t.frozen_prefixes()].concat())
        .unwrap_or_default();
    let frozen_refs: Vec<&str> = frozen.iter().map(String::as_str).collect();

    let bs = cfg.batch_size.min(ns);
    let steps = ns.div_ceil(bs);
    let mut adam = AdamState::new(cfg.lr);
    let mut snapshot = (model.params().clone(), adam.clone());
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut restarts = 0;
    let mut last_parts = LossParts::default();
    let mut order_s: Vec<usize> = (0..ns).collect();
    let mut order_t: Vec<usize> = (0..nt).collect();

    let mut epoch = 0;
    let decay_epoch = cfg.lr_decay.map(|d| (d.epoch(cfg.epochs), d.factor));
    let mut decayed = false;
    while epoch < cfg.epochs {
        if let Some((at, factor)) = decay_epoch {
            if !decayed && epoch >= at {
                adam.lr *= factor;
                decayed = true;
            }
        }
        order_s.shuffle(rng);
        order_t.shuffle(rng);
        let mut sum = 0.0;
        let mut diverged = false;
        for k in 0..steps {
            let idx_s = &order_s[k * bs..((k + 1) * bs).min(ns)];
            let idx_t: Vec<usize> = (0..idx_s.len()).map(|i| order_t[(k * bs + i) % nt]).collect();
            let mut tape = Tape::new();
            let params = model.params().bind(&mut tape, &frozen_refs)?;
            let xs = tape.constant(gather(data.source, idx_s))?;
            let xt = tape.constant(gather(data.target, &idx_t))?;
            let paired = match data.paired {
                Some((ps, pt)) if n_pairs > 0 => {
                    let m = bs.min(n_pairs);
                    let idx: Vec<usize> = (0..m).map(|_| rng.random_range(0..n_pairs)).collect();
                    Some((tape.constant(gather(ps, &idx))?, tape.constant(gather(pt, &idx))?))
                }
                _ => None,
            };
            let batch = LossBatch {
                source: xs,
                target: xt,
                paired,
            };
            let evaluated = match autoencoders {
                Some((ae_s, ae_t)) => {
                    total_loss_general(model, ae_s, ae_t, &mut tape, &params, batch, &loss.weights, &loss.swd, rng)
                }
                None => total_loss(model, &mut tape, &params, batch, &loss.weights, &loss.swd, rng),
            };
            let (total, parts) = match evaluated {
                Ok(v) => v,
                Err(Error::Engine(EngineError::NonFinite(_))) => {
                    diverged = true;
                    break;
                }
                Err(e) => return Err(e),
            };
            if !parts.total.is_finite() {
                diverged = true;
                break;
            }
            let grads = tape.backward(total)?;
            let store = model.params_mut();
            store.accumulate_grads(&params, &grads)?;
            adam.step_except(store, &frozen_refs)?;
            if store.iter().any(|(_, p)| !p.value.is_finite()) {
                diverged = true;
                break;
            }
            sum += parts.total;
            last_parts = parts;
        }
        if diverged {
            if restarts > 0 {
                return Ok(TrainReport {
                    status: RunStatus::Failed,
                    loss_trace: trace,
                    restarts,
                    final_lr: adam.lr,
                    last_parts,
                });
            }
            restarts += 1;
            let lr = adam.lr * 0.5;
            *model.params_mut() = snapshot.0.clone();
            adam = snapshot.1.clone();
            adam.lr = lr;
            continue;
        }
        trace.push(sum / steps as f64);
        snapshot = (model.params().clone(), adam.clone());
        epoch += 1;
    }
    Ok(TrainReport {
        status: RunStatus::Ok,
        loss_trace: trace,
        restarts,
        final_lr: adam.lr,
        last_parts,
    })
}
