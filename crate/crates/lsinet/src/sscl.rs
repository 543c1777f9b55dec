//! Learned sparse patch-to-patch connections. A per-head memory bank encodes
//! one embedding per patch index, a pair predictor scores every ordered pair
//! with two logits, and gates are drawn from the resulting Bernoulli
//! probabilities with the Gumbel-Softmax relaxation. A self-ranking
//! cross-entropy term pushes the probability mass onto the top delta fraction
//! of pairs.
//!
//! The gates depend only on bank state, never on the input batch, so one draw
//! is shared by every sample and variable in a step.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{gaussian, Linear, Params};
use crate::rng::gumbel_noise;
use crate::tensor::{concat, no_grad, Scalar, Tensor};

pub const PROB_FLOOR: f64 = 1e-8;

/// Per-head state: `memory` is one learnable row per patch, re-encoded every
/// forward pass; the predictor maps concatenated encoded pairs to two logits.
pub struct MemoryBank<T: Scalar> {
    /// [N, dim], standard normal init.
    pub memory: Tensor<T>,
    /// dim -> 2*dim -> dim -> dim with ReLU between layers.
    pub encoder: [Linear<T>; 3],
    /// 2*dim -> dim -> 2 with one ReLU.
    pub predictor: [Linear<T>; 2],
    count: usize,
    /// Pair gather indices: row_idx[r*N+c] = r, col_idx[r*N+c] = c.
    row_idx: Vec<usize>,
    col_idx: Vec<usize>,
}

impl<T: Scalar> MemoryBank<T> {
    pub fn new(count: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let memory = Tensor::param(gaussian(rng, count * dim, 1.0), &[count, dim])
            .expect("sized init");
        let encoder = [
            Linear::new(dim, 2 * dim, true, rng),
            Linear::new(2 * dim, dim, true, rng),
            Linear::new(dim, dim, true, rng),
        ];
        let predictor = [Linear::new(2 * dim, dim, true, rng), Linear::new(dim, 2, true, rng)];
        let mut row_idx = Vec::with_capacity(count * count);
        let mut col_idx = Vec::with_capacity(count * count);
        for r in 0..count {
            for c in 0..count {
                row_idx.push(r);
                col_idx.push(c);
            }
        }
        MemoryBank { memory, encoder, predictor, count, row_idx, col_idx }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// [N, dim] encoded memory.
    pub fn encode(&self) -> Result<Tensor<T>> {
        let h = self.encoder[0].forward(&self.memory)?.relu();
        let h = self.encoder[1].forward(&h)?.relu();
        self.encoder[2].forward(&h)
    }

    /// All ordered pairs: row r*N+c is enc[r] followed by enc[c], [N^2, 2*dim].
    pub fn pair_features(&self, encoded: &Tensor<T>) -> Result<Tensor<T>> {
        let rows = encoded.index_select(&self.row_idx)?;
        let cols = encoded.index_select(&self.col_idx)?;
        concat(&[&rows, &cols], 1)
    }

    /// Reference scoring path over explicit pair features, [N^2, 2].
    pub fn predict_connection_logits(&self, pairs: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.predictor[0].forward(pairs)?.relu();
        self.predictor[1].forward(&h)
    }

    /// Fused scoring path: splits the first predictor layer into row/col
    /// halves so the two [N, dim] projections are computed once and gathered,
    /// instead of projecting all N^2 concatenated pairs. Algebraically equal
    /// to `predict_connection_logits(pair_features(enc))`.
    pub fn connection_logits(&self) -> Result<Tensor<T>> {
        let encoded = self.encode()?;
        let dim = encoded.shape()[1];
        let half: Vec<usize> = (0..dim).collect();
        let other: Vec<usize> = (dim..2 * dim).collect();
        let w_row = self.predictor[0].weight.index_select(&half)?;
        let w_col = self.predictor[0].weight.index_select(&other)?;
        let row_proj = encoded.matmul(&w_row)?.index_select(&self.row_idx)?;
        let col_proj = encoded.matmul(&w_col)?.index_select(&self.col_idx)?;
        let mut h = row_proj.add(&col_proj)?;
        if let Some(b) = &self.predictor[0].bias {
            h = h.add(b)?;
        }
        self.predictor[1].forward(&h.relu())
    }

    /// Softmaxed pair probabilities [N^2, 2]; column 1 is the connection
    /// probability.
    pub fn connection_probs(&self) -> Result<Tensor<T>> {
        self.connection_logits()?.softmax(1)
    }

    pub fn collect(&self, prefix: &str, out: &mut Params<T>) {
        out.push((format!("{prefix}.memory"), self.memory.clone()));
        for (i, l) in self.encoder.iter().enumerate() {
            l.collect(&format!("{prefix}.encoder.{i}"), out);
        }
        for (i, l) in self.predictor.iter().enumerate() {
            l.collect(&format!("{prefix}.predictor.{i}"), out);
        }
    }
}

/// Class-1 slice along the trailing axis of a [..., 2] probability table,
/// kept in the graph.
pub fn class1<T: Scalar>(probs: &Tensor<T>) -> Result<Tensor<T>> {
    if probs.shape().last() != Some(&2) {
        return Err(Error::Shape(format!(
            "expected a trailing class axis of 2, got {:?}",
            probs.shape()
        )));
    }
    let mask = Tensor::from_f64_slice(&[0.0, 1.0], &[2])?;
    probs.mul(&mask)?.sum_axis(probs.ndim() - 1)
}

/// Relaxed Bernoulli draw: softmax((log c + g)/tau) evaluated at class 1.
/// Drops the trailing class axis, so [P, 2] probabilities yield [P] gates
/// (and [N, N, 2] yields [N, N]). Differentiable w.r.t. `probs`.
pub fn gumbel_softmax_sample<T: Scalar>(
    probs: &Tensor<T>,
    tau: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    let noise: Vec<T> = (0..probs.numel())
        .map(|_| T::from_f64_lossy(gumbel_noise(rng)))
        .collect();
    let g = Tensor::from_vec(noise, probs.shape())?;
    gumbel_softmax_with_noise(probs, tau, &g)
}

/// Same draw with caller-provided noise (used to compare the relaxation
/// against exact argmax sampling on identical noise).
pub fn gumbel_softmax_with_noise<T: Scalar>(
    probs: &Tensor<T>,
    tau: f64,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Config(format!("gumbel temperature must be positive, got {tau}")));
    }
    let lo = T::from_f64_lossy(PROB_FLOOR);
    let perturbed = probs.clamp(lo, T::one())?.log()?.add(noise)?.scale(T::from_f64_lossy(1.0 / tau));
    class1(&perturbed.softmax(probs.ndim() - 1)?)
}

/// Training-mode gates: forward rounds to {0,1}, backward passes the soft
/// gradient through unchanged.
pub fn harden_train<T: Scalar>(z_soft: &Tensor<T>) -> Tensor<T> {
    z_soft.ste_round()
}

/// Inference-mode gates: deterministic strict threshold on c1, no sampling
/// and no gradient.
pub fn harden_infer<T: Scalar>(c1: &Tensor<T>) -> Result<Tensor<T>> {
    let half = T::from_f64_lossy(0.5);
    let data: Vec<T> = c1.to_vec().iter().map(|&v| if v > half { T::one() } else { T::zero() }).collect();
    no_grad(|| Tensor::from_vec(data, c1.shape()))
}

/// Self-ranking binary target: the top floor(len * delta) entries of `c1` get
/// 1, everything else 0. Ties at the cut rank go to the lowest flat index.
pub fn top_k_target<T: Scalar>(c1: &[T], delta: f64) -> Vec<T> {
    let k = ((c1.len() as f64) * delta).floor() as usize;
    let mut order: Vec<usize> = (0..c1.len()).collect();
    order.sort_by(|&a, &b| c1[b].as_f64().total_cmp(&c1[a].as_f64()).then(a.cmp(&b)));
    let mut target = vec![T::zero(); c1.len()];
    for &i in order.iter().take(k) {
        target[i] = T::one();
    }
    target
}

/// Sum binary cross-entropy of c1 against a detached self-ranking target.
pub fn asrl_loss<T: Scalar>(c1: &Tensor<T>, delta: f64) -> Result<Tensor<T>> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("sparsity ratio must be in (0, 1), got {delta}")));
    }
    let target = top_k_target(&c1.to_vec(), delta);
    asrl_loss_with_target(c1, &target)
}

/// Same loss with a caller-frozen target (per-epoch freezing mode).
///
/// c and 1-c are floored separately before the logs: a single two-sided
/// clamp of c is not representable at f32, where 1 - 1e-8 rounds to 1.
pub fn asrl_loss_with_target<T: Scalar>(c1: &Tensor<T>, target: &[T]) -> Result<Tensor<T>> {
    let t = Tensor::from_vec(target.to_vec(), c1.shape())?;
    let not_t = Tensor::from_vec(
        target.iter().map(|&v| T::one() - v).collect(),
        c1.shape(),
    )?;
    let (lo, hi) = (T::from_f64_lossy(PROB_FLOOR), T::one());
    let on = t.mul(&c1.clamp(lo, hi)?.log()?)?;
    let off = not_t.mul(&c1.neg().add_scalar(T::one()).clamp(lo, hi)?.log()?)?;
    Ok(on.add(&off)?.sum_all().neg())
}

/// 1 exactly on epochs that are multiples of the cadence.
pub fn regularization_indicator(epoch: usize, eta: usize) -> bool {
    debug_assert!(eta >= 1);
    epoch % eta == 0
}

/// Snapshot of one head's gates for inspection and export (plain data,
/// detached from the graph).
#[derive(Debug, Clone)]
pub struct ConnectionMatrix {
    pub n: usize,
    /// [N*N*2] interleaved (c0, c1) per pair.
    pub probs: Vec<f64>,
    /// [N*N] relaxed gates (equal to c1 when no sampling happened).
    pub z_soft: Vec<f64>,
    /// [N*N] binary gates.
    pub z_hard: Vec<f64>,
    pub top_k_target: Option<Vec<f64>>,
}

impl ConnectionMatrix {
    pub fn c1(&self) -> Vec<f64> {
        self.probs.chunks_exact(2).map(|p| p[1]).collect()
    }

    /// Fraction of ones among the binary gates.
    pub fn sparsity(&self) -> f64 {
        self.z_hard.iter().sum::<f64>() / self.z_hard.len() as f64
    }

    /// One matrix row per line, values space-separated.
    pub fn to_text(values: &[f64], n: usize) -> String {
        let mut out = String::new();
        for r in 0..n {
            let row: Vec<String> = values[r * n..(r + 1) * n].iter().map(|v| format!("{v}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}
