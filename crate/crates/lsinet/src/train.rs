//! Optimization loop: Adam over the full parameter list, mean-squared
//! forecasting error on the instance-normalized scale, and the intermittent
//! sparsity regularizer summed over every head of every block. Checkpoints
//! the best-validation parameters in memory and reports test metrics there.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::WindowDataset;
use crate::error::{Error, Result};
use crate::metrics::MetricAccumulator;
use crate::model::{Forward, Model};
use crate::nn::Params;
use crate::rng::Streams;
use crate::sscl::{asrl_loss, asrl_loss_with_target, class1, regularization_indicator, top_k_target};
use crate::tensor::{no_grad, Scalar, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Regularization cadence: the sparsity term fires on epochs divisible by
    /// this.
    pub eta: usize,
    /// Target fraction of active connections.
    pub delta: f64,
    /// Weight of the sparsity term.
    pub lambda: f64,
    /// Gumbel-Softmax temperature.
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; off by default.
    pub clip_norm: Option<f64>,
    /// Recompute the self-ranking target once per epoch instead of per step.
    pub freeze_topk_per_epoch: bool,
    pub seeds: Vec<u64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            lr: 1e-4,
            batch_size: 128,
            eta: 3,
            delta: 0.15,
            lambda: 1.0,
            tau: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
            freeze_topk_per_epoch: false,
            seeds: vec![0, 1, 2, 3, 4],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eta == 0 || self.seeds.is_empty() {
            return Err(Error::Config(
                "epochs, batch size, cadence, and seed list must be non-empty".into(),
            ));
        }
        if !(self.lr > 0.0 && self.tau > 0.0 && self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!(
                "learning rate {} and temperature {} must be positive, sparsity ratio {} in (0,1)",
                self.lr, self.tau, self.delta
            )));
        }
        if self.lambda < 0.0 || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("optimizer hyperparameters out of range".into()));
        }
        Ok(())
    }
}

/// Standard Adam with bias correction; moment buffers are indexed by the
/// position of each parameter in the listing, so the listing order must not
/// change between steps.
pub struct Adam<T: Scalar> {
    lr: T,
    beta1: T,
    beta2: T,
    eps: T,
    step: u64,
    clip_norm: Option<f64>,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &Params<T>, cfg: &TrainConfig) -> Self {
        Adam {
            lr: T::from_f64_lossy(cfg.lr),
            beta1: T::from_f64_lossy(cfg.beta1),
            beta2: T::from_f64_lossy(cfg.beta2),
            eps: T::from_f64_lossy(cfg.eps),
            step: 0,
            clip_norm: cfg.clip_norm,
            m: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
            v: params.iter().map(|(_, p)| vec![T::zero(); p.numel()]).collect(),
        }
    }

    /// Applies one update from the gradients currently stored on `params`.
    pub fn update(&mut self, params: &Params<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer state tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let scale = self.grad_scale(params);
        let one = T::one();
        let c1 = one - self.beta1.powi(self.step as i32);
        let c2 = one - self.beta2.powi(self.step as i32);
        for (i, (_, p)) in params.iter().enumerate() {
            let grads = p.grad_or_zeros();
            let mut data = p.data_mut();
            for (j, g) in grads.into_iter().enumerate() {
                let g = g * scale;
                self.m[i][j] = self.beta1 * self.m[i][j] + (one - self.beta1) * g;
                self.v[i][j] = self.beta2 * self.v[i][j] + (one - self.beta2) * g * g;
                let m_hat = self.m[i][j] / c1;
                let v_hat = self.v[i][j] / c2;
                data[j] = data[j] - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }

    fn grad_scale(&self, params: &Params<T>) -> T {
        let Some(max_norm) = self.clip_norm else { return T::one() };
        let mut sq = 0.0f64;
        for (_, p) in params {
            for g in p.grad_or_zeros() {
                let g = g.as_f64();
                sq += g * g;
            }
        }
        let norm = sq.sqrt();
        if norm > max_norm {
            T::from_f64_lossy(max_norm / norm)
        } else {
            T::one()
        }
    }
}

/// One training batch: `histories` is `size` normalized windows back to back,
/// `targets` is [size, P] on the same scale.
pub struct Batch<T: Scalar> {
    pub histories: Vec<T>,
    pub targets: Tensor<T>,
    pub size: usize,
}

pub fn assemble_batch<T: Scalar>(ds: &WindowDataset, idxs: &[usize]) -> Result<Batch<T>> {
    let mut histories = Vec::with_capacity(idxs.len() * ds.n);
    let mut targets = Vec::with_capacity(idxs.len() * ds.horizon);
    for &i in idxs {
        let s = ds.sample(i);
        histories.extend(s.history.iter().map(|&v| T::from_f64_lossy(v)));
        targets.extend(s.target.iter().map(|&v| T::from_f64_lossy(v)));
    }
    Ok(Batch {
        histories,
        targets: Tensor::from_vec(targets, &[idxs.len(), ds.horizon])?,
        size: idxs.len(),
    })
}

/// Per-epoch frozen self-ranking targets, indexed [block][head].
pub type FrozenTargets<T> = Vec<Vec<Vec<T>>>;

/// Snapshots the current connection probabilities into binary targets.
pub fn freeze_targets<T: Scalar>(model: &Model<T>, delta: f64) -> Result<FrozenTargets<T>> {
    no_grad(|| {
        model
            .blocks
            .iter()
            .map(|b| {
                b.heads
                    .iter()
                    .map(|h| {
                        let c1 = class1(&h.bank.connection_probs()?)?;
                        Ok(top_k_target(&c1.to_vec(), delta))
                    })
                    .collect::<Result<Vec<Vec<T>>>>()
            })
            .collect::<Result<FrozenTargets<T>>>()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub mse: f64,
    pub asrl: f64,
}

/// Mean squared error of the forward prediction against batch targets, kept
/// in the graph.
pub fn mse_loss<T: Scalar>(prediction: &Tensor<T>, targets: &Tensor<T>) -> Result<Tensor<T>> {
    let diff = prediction.sub(targets)?;
    Ok(diff.mul(&diff)?.mean_all())
}

/// Sparsity term: sum of the self-ranking cross-entropy over every head of
/// every block.
pub fn sparsity_loss<T: Scalar>(
    out: &Forward<T>,
    delta: f64,
    frozen: Option<&FrozenTargets<T>>,
) -> Result<Tensor<T>> {
    let mut total: Option<Tensor<T>> = None;
    for (bi, gates) in out.gates.iter().enumerate() {
        for (hi, c1) in gates.c1.iter().enumerate() {
            let term = match frozen {
                Some(f) => asrl_loss_with_target(c1, &f[bi][hi])?,
                None => asrl_loss(c1, delta)?,
            };
            total = Some(match total {
                Some(t) => t.add(&term)?,
                None => term,
            });
        }
    }
    total.ok_or_else(|| Error::Contract("no connection probabilities to regularize".into()))
}

/// One optimization step. The total loss is
///   mse + lambda * indicator * sum_heads(asrl)
/// and the indicator is epoch-driven, so unregularized epochs never build
/// ranking targets at all. Aborts with a parameter-norm dump if the loss is
/// not finite.
#[allow(clippy::too_many_arguments)]
pub fn train_step<T: Scalar>(
    model: &Model<T>,
    params: &Params<T>,
    adam: &mut Adam<T>,
    batch: &Batch<T>,
    cfg: &TrainConfig,
    epoch: usize,
    step: u64,
    seed: u64,
    frozen: Option<&FrozenTargets<T>>,
) -> Result<StepLosses> {
    let mut gumbel = Streams::new(seed).gumbel(step);
    let out = model.forward(
        &batch.histories,
        batch.size,
        model.train_gate_mode(cfg.tau),
        Some(&mut gumbel),
    )?;
    let mse = mse_loss(&out.prediction, &batch.targets)?;
    // identity-gate ablation has no connection probabilities to regularize
    let has_gates = out.gates.iter().any(|g| !g.c1.is_empty());
    let indicator = regularization_indicator(epoch, cfg.eta);
    let (total, asrl_value) = if indicator && cfg.lambda != 0.0 && has_gates {
        let asrl = sparsity_loss(&out, cfg.delta, frozen)?;
        let scaled = asrl.scale(T::from_f64_lossy(cfg.lambda));
        (mse.add(&scaled)?, asrl.to_vec()[0].as_f64())
    } else {
        (mse.clone(), 0.0)
    };

    let total_value = total.to_vec()[0].as_f64();
    if !total_value.is_finite() {
        return Err(Error::Contract(diverged_message(params, epoch, step, total_value)));
    }

    for (_, p) in params {
        p.zero_grad();
    }
    total.backward()?;
    adam.update(params)?;

    Ok(StepLosses {
        total: total_value,
        mse: mse.to_vec()[0].as_f64(),
        asrl: asrl_value,
    })
}

fn diverged_message<T: Scalar>(params: &Params<T>, epoch: usize, step: u64, value: f64) -> String {
    let mut msg = format!("training aborted: loss {value} at epoch {epoch}, step {step}; parameter norms:");
    for (name, p) in params {
        let sq: f64 = p.to_vec().iter().map(|v| v.as_f64() * v.as_f64()).sum();
        msg.push_str(&format!("\n  {name} = {:.6e}", sq.sqrt()));
    }
    msg
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// Metrics after undoing the per-window normalization.
    pub mse: f64,
    pub mae: f64,
    /// Same predictions scored on the normalized scale.
    pub mse_norm: f64,
    pub mae_norm: f64,
}

/// Full-dataset evaluation with deterministic gates; no gradients.
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    ds: &WindowDataset,
    batch_size: usize,
) -> Result<EvalMetrics> {
    let mut denorm = MetricAccumulator::new();
    let mut norm = MetricAccumulator::new();
    let idxs: Vec<usize> = (0..ds.len()).collect();
    no_grad(|| {
        for chunk in idxs.chunks(batch_size) {
            let batch = assemble_batch::<T>(ds, chunk)?;
            let out = model.forward(&batch.histories, batch.size, model.infer_gate_mode(), None)?;
            let preds = out.prediction.to_vec();
            for (row, &i) in chunk.iter().enumerate() {
                let s = ds.sample(i);
                let pred_norm: Vec<f64> = preds[row * ds.horizon..(row + 1) * ds.horizon]
                    .iter()
                    .map(|v| v.as_f64())
                    .collect();
                norm.extend(&pred_norm, &s.target)?;
                denorm.extend(&s.norm.denormalize(&pred_norm), &s.norm.denormalize(&s.target))?;
            }
        }
        Ok::<(), Error>(())
    })?;
    let (mse, mae) = denorm.finish();
    let (mse_norm, mae_norm) = norm.finish();
    Ok(EvalMetrics { mse, mae, mse_norm, mae_norm })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_total: f64,
    pub train_mse: f64,
    pub train_asrl: f64,
    pub regularized: bool,
    pub val: EvalMetrics,
    /// Inference-gate ones-fraction per head, outer order = block-major.
    pub sparsity: Vec<f64>,
    pub wall_secs: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub test: EvalMetrics,
}

impl TrainReport {
    pub fn best_val_mse(&self) -> f64 {
        self.epochs[self.best_epoch].val.mse
    }

    /// One machine-readable record per line: every epoch, then a summary.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("serializable record"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "seed": self.seed,
            "best_epoch": self.best_epoch,
            "best_val_mse": self.best_val_mse(),
            "test_mse": self.test.mse,
            "test_mae": self.test.mae,
            "test_mse_norm": self.test.mse_norm,
            "test_mae_norm": self.test.mae_norm,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}

fn head_sparsities<T: Scalar>(model: &Model<T>) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for b in 0..model.blocks.len() {
        for h in 0..model.blocks[b].heads.len() {
            out.push(model.connection_snapshot(b, h)?.sparsity());
        }
    }
    Ok(out)
}

/// Trains to completion, restores the best-validation parameters, and scores
/// them on the test split. Deterministic for a fixed seed.
pub fn fit<T: Scalar>(
    cfg: &TrainConfig,
    model: &Model<T>,
    train: &WindowDataset,
    val: &WindowDataset,
    test: &WindowDataset,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    let params = model.params();
    let mut adam = Adam::new(&params, cfg);
    let streams = Streams::new(seed);

    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, Vec<Vec<T>>)> = None;
    let mut global_step: u64 = 0;

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut streams.shuffle(epoch));

        let regularized = regularization_indicator(epoch, cfg.eta) && cfg.lambda != 0.0;
        let frozen = if regularized && cfg.freeze_topk_per_epoch {
            Some(freeze_targets(model, cfg.delta)?)
        } else {
            None
        };

        let (mut sum_total, mut sum_mse, mut sum_asrl, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = assemble_batch::<T>(train, chunk)?;
            let losses = train_step(
                model,
                &params,
                &mut adam,
                &batch,
                cfg,
                epoch,
                global_step,
                seed,
                frozen.as_ref(),
            )?;
            sum_total += losses.total;
            sum_mse += losses.mse;
            sum_asrl += losses.asrl;
            steps += 1;
            global_step += 1;
        }

        let val_metrics = evaluate(model, val, cfg.batch_size)?;
        let record = EpochRecord {
            epoch,
            train_total: sum_total / steps as f64,
            train_mse: sum_mse / steps as f64,
            train_asrl: sum_asrl / steps as f64,
            regularized,
            val: val_metrics,
            sparsity: head_sparsities(model)?,
            wall_secs: t0.elapsed().as_secs_f64(),
        };
        let improved = best.is_none()
            || record.val.mse < records[best.as_ref().unwrap().0].val.mse;
        records.push(record);
        if improved {
            best = Some((epoch, params.iter().map(|(_, p)| p.to_vec()).collect()));
        }
        log::info!(
            "epoch {epoch}: train {:.6}, val mse {:.6}",
            records[epoch].train_total,
            records[epoch].val.mse
        );
    }

    let (best_epoch, snapshot) = best.expect("at least one epoch ran");
    for ((_, p), saved) in params.iter().zip(snapshot) {
        p.data_mut().copy_from_slice(&saved);
    }
    let test_metrics = evaluate(model, test, cfg.batch_size)?;
    Ok(TrainReport { seed, epochs: records, best_epoch, test: test_metrics })
}
