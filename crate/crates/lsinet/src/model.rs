//! The full forecaster: patch embedding, a stack of sparse-interaction
//! blocks, and a linear read-out over the flattened patch features.
//!
//! Each block runs
//!   mix -> per-head gated propagation -> time update -> integration
//! and adds an identity-initialized linear skip of its input. Gates are drawn
//! once per forward pass from each head's memory bank, so every sample and
//! variable in the batch shares the same connection matrix.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{identity_param, Linear, Params};
use crate::patch::{patch_batch, PatchConfig, PatchEmbed};
use crate::sscl::{
    class1, gumbel_softmax_sample, harden_infer, harden_train, ConnectionMatrix, MemoryBank,
};
use crate::tensor::{concat, no_grad, Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub patch: PatchConfig,
    /// Head count; must divide the embedding width.
    pub heads: usize,
    /// Number of stacked interaction blocks.
    pub depth: usize,
    /// Forecast length P.
    pub horizon: usize,
    /// Memory embedding width per head.
    pub memory_dim: usize,
    /// Hidden width of the patch-axis and feature-axis MLPs.
    pub hidden: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.patch.d % self.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must divide the embedding width {}",
                self.heads, self.patch.d
            )));
        }
        if self.depth == 0 || self.horizon == 0 || self.memory_dim == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "depth, horizon, memory width, and hidden width must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.patch.d / self.heads
    }
}

/// How propagation gates are produced for a forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode {
    /// Gumbel draw + straight-through rounding; needs an rng. Training mode.
    Sampled { tau: f64 },
    /// Strict threshold on c1, no sampling, no gradient. Inference mode.
    Deterministic,
    /// Gates are the raw probabilities (no sparsification ablation).
    Dense,
    /// Gates fixed to the identity matrix (propagation-disabled ablation).
    Identity,
}

pub struct Head<T: Scalar> {
    pub bank: MemoryBank<T>,
    /// D -> D/h value projection.
    pub value: Linear<T>,
}

/// One interaction block; holds everything between the embedding and the
/// read-out for a single stack level.
pub struct InteractionBlock<T: Scalar> {
    /// [N, N] patch-mixing map, identity init, shared by all feature channels.
    pub time_invariant: Tensor<T>,
    pub heads: Vec<Head<T>>,
    /// Patch-axis MLP (applied on the transposed [.., D, N] layout).
    pub time_update: [Linear<T>; 2],
    /// [D, D] identity-initialized skip map.
    pub align: Tensor<T>,
    /// Feature-axis MLP.
    pub integration: [Linear<T>; 2],
}

/// Per-head gate tensors plus the probability slice kept for regularization.
pub struct BlockGates<T: Scalar> {
    /// [N, N] per head, as used in propagation.
    pub z: Vec<Tensor<T>>,
    /// Flat [N^2] connection probabilities per head (graph tensors in
    /// Sampled/Dense modes); empty in Identity mode.
    pub c1: Vec<Tensor<T>>,
}

impl<T: Scalar> InteractionBlock<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let n = cfg.patch.count;
        let d = cfg.patch.d;
        let heads = (0..cfg.heads)
            .map(|_| Head {
                bank: MemoryBank::new(n, cfg.memory_dim, rng),
                value: Linear::new(d, cfg.head_dim(), true, rng),
            })
            .collect();
        InteractionBlock {
            time_invariant: identity_param(n),
            heads,
            time_update: [
                Linear::new(n, cfg.hidden, true, rng),
                Linear::new(cfg.hidden, n, true, rng),
            ],
            align: identity_param(d),
            integration: [
                Linear::new(d, cfg.hidden, true, rng),
                Linear::new(cfg.hidden, d, true, rng),
            ],
        }
    }

    /// Patch mixing: the same [N, N] map applied to every feature channel of
    /// every sample.
    pub fn mix(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.time_invariant.matmul(x)
    }

    /// Draws one gate matrix per head according to `mode`.
    pub fn gates(
        &self,
        mode: GateMode,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<BlockGates<T>> {
        let n = self.time_invariant.shape()[0];
        if let GateMode::Identity = mode {
            let z = (0..self.heads.len()).map(|_| crate::nn::identity(n)).collect();
            return Ok(BlockGates { z, c1: Vec::new() });
        }
        let mut z = Vec::with_capacity(self.heads.len());
        let mut c1 = Vec::with_capacity(self.heads.len());
        match mode {
            GateMode::Sampled { tau } => {
                let rng = rng.ok_or_else(|| {
                    Error::Contract("sampled gates need a gumbel rng".into())
                })?;
                for head in &self.heads {
                    let probs = head.bank.connection_probs()?;
                    c1.push(class1(&probs)?);
                    let soft = gumbel_softmax_sample(&probs, tau, rng)?;
                    z.push(harden_train(&soft).reshape(&[n, n])?);
                }
            }
            GateMode::Dense => {
                for head in &self.heads {
                    let p = class1(&head.bank.connection_probs()?)?;
                    c1.push(p.clone());
                    z.push(p.reshape(&[n, n])?);
                }
            }
            GateMode::Deterministic => {
                for head in &self.heads {
                    let p = no_grad(|| class1(&head.bank.connection_probs()?))?;
                    z.push(harden_infer(&p)?.reshape(&[n, n])?);
                    c1.push(p);
                }
            }
            GateMode::Identity => unreachable!(),
        }
        Ok(BlockGates { z, c1 })
    }

    /// Eq-style gated propagation: head h computes z_h · V_h(x) and the head
    /// outputs are concatenated back to full feature width.
    pub fn propagate(&self, x: &Tensor<T>, gates: &[Tensor<T>]) -> Result<Tensor<T>> {
        if gates.len() != self.heads.len() {
            return Err(Error::Contract(format!(
                "expected {} gate matrices, got {}",
                self.heads.len(),
                gates.len()
            )));
        }
        let mut outs = Vec::with_capacity(self.heads.len());
        for (head, z) in self.heads.iter().zip(gates) {
            let v = head.value.forward(x)?;
            outs.push(z.matmul(&v)?);
        }
        let refs: Vec<&Tensor<T>> = outs.iter().collect();
        concat(&refs, x.ndim() - 1)
    }

    /// Patch-axis MLP: linear + ReLU + linear along N, feature channels kept
    /// independent by running on the transposed layout.
    pub fn update(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let nd = x.ndim();
        let t = x.transpose(nd - 2, nd - 1)?;
        let h = self.time_update[0].forward(&t)?.relu();
        let out = self.time_update[1].forward(&h)?;
        out.transpose(nd - 2, nd - 1)
    }

    /// Feature-axis MLP.
    pub fn integrate(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.integration[0].forward(x)?.relu();
        self.integration[1].forward(&h)
    }

    /// integrate(update(propagate(mix(x)))) + align(x).
    pub fn forward(&self, x: &Tensor<T>, gates: &BlockGates<T>) -> Result<Tensor<T>> {
        let mixed = self.mix(x)?;
        let propagated = self.propagate(&mixed, &gates.z)?;
        let updated = self.update(&propagated)?;
        let integrated = self.integrate(&updated)?;
        integrated.add(&x.matmul(&self.align)?)
    }

    pub fn collect(&self, prefix: &str, out: &mut Params<T>) {
        out.push((format!("{prefix}.time_invariant"), self.time_invariant.clone()));
        for (i, head) in self.heads.iter().enumerate() {
            head.bank.collect(&format!("{prefix}.head.{i}"), out);
            head.value.collect(&format!("{prefix}.head.{i}.value"), out);
        }
        for (i, l) in self.time_update.iter().enumerate() {
            l.collect(&format!("{prefix}.time_update.{i}"), out);
        }
        out.push((format!("{prefix}.align"), self.align.clone()));
        for (i, l) in self.integration.iter().enumerate() {
            l.collect(&format!("{prefix}.integration.{i}"), out);
        }
    }
}

/// Everything a training step needs from one forward pass.
pub struct Forward<T: Scalar> {
    /// [B, P] prediction on the normalized scale.
    pub prediction: Tensor<T>,
    /// Gates per block (same order as the stack).
    pub gates: Vec<BlockGates<T>>,
}

/// Structural ablations; both default off for the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Ablation {
    /// Identity gates: interaction reduces to a per-patch value projection.
    pub identity_gates: bool,
    /// Gate with raw probabilities instead of sampled binary draws.
    pub dense_gates: bool,
}

pub struct Model<T: Scalar> {
    pub cfg: ModelConfig,
    pub embed: PatchEmbed<T>,
    pub blocks: Vec<InteractionBlock<T>>,
    /// [N·D] -> P read-out.
    pub predictor: Linear<T>,
    pub ablation: Ablation,
}

impl<T: Scalar> Model<T> {
    pub fn new(cfg: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let embed = PatchEmbed::new(&cfg.patch, rng);
        let blocks = (0..cfg.depth).map(|_| InteractionBlock::new(&cfg, rng)).collect();
        let predictor = Linear::new(cfg.patch.count * cfg.patch.d, cfg.horizon, true, rng);
        Ok(Model { cfg, embed, blocks, predictor, ablation: Ablation::default() })
    }

    pub fn with_ablations(mut self, identity_gates: bool, dense_gates: bool) -> Self {
        self.ablation = Ablation { identity_gates, dense_gates };
        self
    }

    /// Gate mode a training step should use for this variant.
    pub fn train_gate_mode(&self, tau: f64) -> GateMode {
        if self.ablation.identity_gates {
            GateMode::Identity
        } else if self.ablation.dense_gates {
            GateMode::Dense
        } else {
            GateMode::Sampled { tau }
        }
    }

    /// Gate mode evaluation should use for this variant.
    pub fn infer_gate_mode(&self) -> GateMode {
        if self.ablation.identity_gates {
            GateMode::Identity
        } else if self.ablation.dense_gates {
            GateMode::Dense
        } else {
            GateMode::Deterministic
        }
    }

    /// `histories` holds `batch` normalized windows of length n, row-major.
    pub fn forward(
        &self,
        histories: &[T],
        batch: usize,
        mode: GateMode,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward<T>> {
        let patches = patch_batch(histories, batch, &self.cfg.patch)?;
        let mut x = self.embed.forward(&patches)?;
        let mut gates = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let g = block.gates(mode, rng.as_mut().map(|r| &mut **r))?;
            x = block.forward(&x, &g)?;
            gates.push(g);
        }
        let flat = x.reshape(&[batch, self.cfg.patch.count * self.cfg.patch.d])?;
        let prediction = self.predictor.forward(&flat)?;
        Ok(Forward { prediction, gates })
    }

    /// Detached inspection snapshot of one head's connection matrix.
    pub fn connection_snapshot(&self, block: usize, head: usize) -> Result<ConnectionMatrix> {
        let b = self.blocks.get(block).ok_or_else(|| {
            Error::Config(format!("block {block} out of range (depth {})", self.blocks.len()))
        })?;
        let h = b.heads.get(head).ok_or_else(|| {
            Error::Config(format!("head {head} out of range ({} heads)", b.heads.len()))
        })?;
        no_grad(|| {
            let probs = h.bank.connection_probs()?;
            let c1 = class1(&probs)?;
            let hard = harden_infer(&c1)?;
            Ok(ConnectionMatrix {
                n: self.cfg.patch.count,
                probs: probs.to_vec().iter().map(|v| v.as_f64()).collect(),
                z_soft: c1.to_vec().iter().map(|v| v.as_f64()).collect(),
                z_hard: hard.to_vec().iter().map(|v| v.as_f64()).collect(),
                top_k_target: None,
            })
        })
    }

    /// Stable name -> tensor listing; the order defines optimizer state and
    /// checkpoint layout.
    pub fn params(&self) -> Params<T> {
        let mut out = Params::new();
        self.embed.collect("patch", &mut out);
        for (i, b) in self.blocks.iter().enumerate() {
            b.collect(&format!("sti.{i}"), &mut out);
        }
        self.predictor.collect("predictor", &mut out);
        out
    }
}

/// Finite-difference check of every parameter of a small reference model
/// (N=4, D=8, 2 heads, 1 block, horizon 3) at f64, against the full
/// forecasting + sparsity loss. Gates run dense and the ranking targets are
/// frozen up front so the checked surface is smooth.
pub fn reference_gradcheck() -> Result<crate::gradcheck::GradCheckReport> {
    use crate::gradcheck::{check_params, FD_EPSILON};
    use crate::rng::Streams;
    use crate::sscl::{asrl_loss_with_target, top_k_target};

    let cfg = ModelConfig {
        patch: PatchConfig { n: 16, l: 8, k: 4, count: 4, d: 8 },
        heads: 2,
        depth: 1,
        horizon: 3,
        memory_dim: 8,
        hidden: 8,
    };
    let model = Model::<f64>::new(cfg, &mut Streams::new(18).init())?;
    let hist: Vec<f64> = (0..2 * 16).map(|v| (v as f64 * 0.23).sin() * 1.5).collect();
    let target = Tensor::from_f64_slice(
        &(0..2 * 3).map(|v| (v as f64 * 0.41).cos()).collect::<Vec<_>>(),
        &[2, 3],
    )?;
    let frozen: Vec<Vec<f64>> = {
        let out = model.forward(&hist, 2, GateMode::Dense, None)?;
        out.gates[0]
            .c1
            .iter()
            .map(|c| top_k_target(&c.to_vec(), 0.25))
            .collect()
    };
    let params = model.params();
    check_params(
        &params,
        || {
            let out = model.forward(&hist, 2, GateMode::Dense, None)?;
            let diff = out.prediction.sub(&target)?;
            let mut loss = diff.mul(&diff)?.mean_all();
            for (c1, t) in out.gates[0].c1.iter().zip(&frozen) {
                loss = loss.add(&asrl_loss_with_target(c1, t)?)?;
            }
            Ok(loss)
        },
        FD_EPSILON,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{check_params, FD_EPSILON, MODEL_TOLERANCE, OP_TOLERANCE};
    use crate::rng::Streams;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            patch: PatchConfig { n: 16, l: 8, k: 4, count: 4, d: 8 },
            heads: 2,
            depth: 1,
            horizon: 3,
            memory_dim: 8,
            hidden: 8,
        }
    }

    fn block_of(cfg: &ModelConfig, seed: u64) -> InteractionBlock<f64> {
        InteractionBlock::new(cfg, &mut Streams::new(seed).init())
    }

    #[test]
    fn config_rejects_indivisible_heads() {
        let mut cfg = tiny_cfg();
        cfg.heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn identity_mix_is_exact_passthrough() {
        let cfg = tiny_cfg();
        let block = block_of(&cfg, 0);
        let x = Tensor::from_f64_slice(
            &(0..2 * 4 * 8).map(|v| v as f64 * 0.37 - 3.0).collect::<Vec<_>>(),
            &[2, 4, 8],
        )
        .unwrap();
        let mixed = block.mix(&x).unwrap();
        assert_eq!(mixed.to_vec(), x.to_vec());
    }

    #[test]
    fn averaging_mix_yields_mean_patch_rows() {
        let cfg = tiny_cfg();
        let mut block = block_of(&cfg, 0);
        block.time_invariant = Tensor::param(vec![0.25; 16], &[4, 4]).unwrap();
        let x = Tensor::from_f64_slice(
            &(0..4 * 8).map(|v| (v % 7) as f64).collect::<Vec<_>>(),
            &[1, 4, 8],
        )
        .unwrap();
        let mixed = block.mix(&x).unwrap();
        let data = x.to_vec();
        let out = mixed.to_vec();
        for f in 0..8 {
            let mean: f64 = (0..4).map(|p| data[p * 8 + f]).sum::<f64>() / 4.0;
            for p in 0..4 {
                assert!((out[p * 8 + f] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mix_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let block = block_of(&cfg, 3);
        let x = Tensor::from_f64_slice(
            &(0..4 * 8).map(|v| (v as f64 * 0.13).sin()).collect::<Vec<_>>(),
            &[4, 8],
        )
        .unwrap();
        // weight the output so the jacobian is probed non-uniformly
        let w = Tensor::from_f64_slice(
            &(0..4 * 8).map(|v| 0.1 + (v % 5) as f64).collect::<Vec<_>>(),
            &[4, 8],
        )
        .unwrap();
        let params = vec![("ti".to_string(), block.time_invariant.clone())];
        let report = check_params(
            &params,
            || Ok(block.mix(&x)?.mul(&w)?.sum_all()),
            FD_EPSILON,
        )
        .unwrap();
        assert!(report.passes(OP_TOLERANCE), "{report:?}");
    }

    #[test]
    fn identity_gates_reduce_propagation_to_value_projection() {
        let cfg = tiny_cfg();
        let block = block_of(&cfg, 1);
        let x = Tensor::from_f64_slice(
            &(0..4 * 8).map(|v| (v as f64 * 0.21).cos()).collect::<Vec<_>>(),
            &[1, 4, 8],
        )
        .unwrap();
        let eye: Vec<Tensor<f64>> = (0..2).map(|_| crate::nn::identity(4)).collect();
        let got = block.propagate(&x, &eye).unwrap();
        let v0 = block.heads[0].value.forward(&x).unwrap();
        let v1 = block.heads[1].value.forward(&x).unwrap();
        let expect = concat(&[&v0, &v1], 2).unwrap();
        assert_eq!(got.to_vec(), expect.to_vec());
    }

    #[test]
    fn all_ones_gates_sum_constant_rows() {
        let cfg = tiny_cfg();
        let mut block = block_of(&cfg, 2);
        // constant value rows: zero weight, bias-only projection
        for head in &mut block.heads {
            let w = head.value.weight.shape().to_vec();
            head.value.weight = Tensor::param(vec![0.0; w[0] * w[1]], &w).unwrap();
        }
        let ones: Vec<Tensor<f64>> = (0..2)
            .map(|_| Tensor::from_vec(vec![1.0; 16], &[4, 4]).unwrap())
            .collect();
        let x = Tensor::from_f64_slice(&vec![0.5; 4 * 8], &[1, 4, 8]).unwrap();
        let out = block.propagate(&x, &ones).unwrap().to_vec();
        let b0 = block.heads[0].value.bias.as_ref().unwrap().to_vec();
        let b1 = block.heads[1].value.bias.as_ref().unwrap().to_vec();
        let row: Vec<f64> = b0.iter().chain(&b1).map(|v| 4.0 * v).collect();
        for p in 0..4 {
            for (f, expect) in row.iter().enumerate() {
                assert!((out[p * 8 + f] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_head_propagation_matches_hand_product() {
        let cfg = ModelConfig {
            patch: PatchConfig { n: 12, l: 8, k: 4, count: 3, d: 2 },
            heads: 1,
            depth: 1,
            horizon: 2,
            memory_dim: 4,
            hidden: 4,
        };
        let mut block = block_of(&cfg, 5);
        block.heads[0].value.weight = Tensor::param(vec![1.0, 0.0, 0.0, 1.0], &[2, 2]).unwrap();
        block.heads[0].value.bias = Some(Tensor::param(vec![0.0, 0.0], &[2]).unwrap());
        let z = Tensor::from_vec(vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0], &[3, 3])
            .unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[1, 3, 2]).unwrap();
        // rows: 0+2, 1, 1+2 of V = X
        let got = block.propagate(&x, &[z]).unwrap();
        assert_eq!(got.to_vec(), vec![6.0, 8.0, 3.0, 4.0, 8.0, 10.0]);
    }

    #[test]
    fn zero_update_weights_give_zero_output() {
        let cfg = tiny_cfg();
        let mut block = block_of(&cfg, 6);
        for l in &mut block.time_update {
            let w = l.weight.shape().to_vec();
            l.weight = Tensor::param(vec![0.0; w[0] * w[1]], &w).unwrap();
            let b = l.bias.as_ref().unwrap().shape().to_vec();
            l.bias = Some(Tensor::param(vec![0.0; b[0]], &b).unwrap());
        }
        let x = Tensor::from_f64_slice(&(0..32).map(|v| v as f64).collect::<Vec<_>>(), &[1, 4, 8])
            .unwrap();
        assert!(block.update(&x).unwrap().to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn update_preserves_shape_at_bench_dims() {
        for (n, d) in [(4usize, 8usize), (64, 128)] {
            let cfg = ModelConfig {
                patch: PatchConfig { n: 4 * n, l: 8, k: 4, count: n, d },
                heads: 4,
                depth: 1,
                horizon: 4,
                memory_dim: 8,
                hidden: 128,
            };
            let block = block_of(&cfg, 7);
            let x = Tensor::<f64>::zeros(&[2, n, d]);
            assert_eq!(block.update(&x).unwrap().shape(), &[2, n, d]);
        }
    }

    #[test]
    fn update_gradient_matches_finite_differences() {
        let cfg = tiny_cfg();
        let block = block_of(&cfg, 8);
        let x = Tensor::from_f64_slice(
            &(0..32).map(|v| (v as f64 * 0.31).sin() + 0.1).collect::<Vec<_>>(),
            &[1, 4, 8],
        )
        .unwrap();
        let mut params = Params::new();
        for (i, l) in block.time_update.iter().enumerate() {
            l.collect(&format!("u{i}"), &mut params);
        }
        let report = check_params(
            &params,
            || Ok(block.update(&x)?.sum_all()),
            FD_EPSILON,
        )
        .unwrap();
        assert!(report.passes(OP_TOLERANCE), "{report:?}");
    }

    #[test]
    fn residual_passthrough_when_interaction_is_silenced() {
        let cfg = tiny_cfg();
        let mut block = block_of(&cfg, 9);
        // zeroing the integration read-out kills the whole interaction branch
        let w = block.integration[1].weight.shape().to_vec();
        block.integration[1].weight = Tensor::param(vec![0.0; w[0] * w[1]], &w).unwrap();
        block.integration[1].bias = Some(Tensor::param(vec![0.0; w[1]], &[w[1]]).unwrap());
        let x = Tensor::from_f64_slice(
            &(0..64).map(|v| (v as f64 * 0.7).cos()).collect::<Vec<_>>(),
            &[2, 4, 8],
        )
        .unwrap();
        let gates = block.gates(GateMode::Dense, None).unwrap();
        let out = block.forward(&x, &gates).unwrap();
        for (a, b) in out.to_vec().iter().zip(x.to_vec()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zeroed_gate_row_isolates_a_patch_from_input_perturbations() {
        let cfg = tiny_cfg();
        let block = block_of(&cfg, 10);
        // gates: patch 1 receives nothing from patch 3 in either head
        let mut zdata = vec![1.0; 16];
        zdata[1 * 4 + 3] = 0.0;
        let z: Vec<Tensor<f64>> = (0..2)
            .map(|_| Tensor::from_vec(zdata.clone(), &[4, 4]).unwrap())
            .collect();
        let base: Vec<f64> = (0..32).map(|v| (v as f64 * 0.17).sin()).collect();
        let mut bumped = base.clone();
        for f in 0..8 {
            bumped[3 * 8 + f] += 10.0; // perturb patch 3 only
        }
        let xa = Tensor::from_vec(base, &[1, 4, 8]).unwrap();
        let xb = Tensor::from_vec(bumped, &[1, 4, 8]).unwrap();
        let pa = block.propagate(&xa, &z).unwrap().to_vec();
        let pb = block.propagate(&xb, &z).unwrap().to_vec();
        // patch 1's propagated features are untouched; patch 0's are not
        for f in 0..8 {
            assert!((pa[1 * 8 + f] - pb[1 * 8 + f]).abs() < 1e-12);
        }
        assert!((0..8).any(|f| (pa[f] - pb[f]).abs() > 1e-6));
    }

    #[test]
    fn stacked_blocks_preserve_shape() {
        let mut cfg = tiny_cfg();
        cfg.depth = 2;
        let model = Model::<f64>::new(cfg, &mut Streams::new(11).init()).unwrap();
        let hist: Vec<f64> = (0..2 * 16).map(|v| (v as f64 * 0.19).sin()).collect();
        let out = model.forward(&hist, 2, GateMode::Dense, None).unwrap();
        assert_eq!(out.prediction.shape(), &[2, 3]);
        assert_eq!(out.gates.len(), 2);
    }

    #[test]
    fn gates_are_shared_across_samples() {
        let cfg = tiny_cfg();
        let model = Model::<f64>::new(cfg, &mut Streams::new(12).init()).unwrap();
        let h1: Vec<f64> = (0..16).map(|v| (v as f64 * 0.3).sin()).collect();
        let h2: Vec<f64> = (0..3 * 16).map(|v| (v as f64 * 0.9).cos()).collect();
        let a = model.forward(&h1, 1, GateMode::Deterministic, None).unwrap();
        let b = model.forward(&h2, 3, GateMode::Deterministic, None).unwrap();
        for (za, zb) in a.gates[0].z.iter().zip(&b.gates[0].z) {
            assert_eq!(za.to_vec(), zb.to_vec());
        }
    }

    #[test]
    fn sampled_mode_requires_an_rng() {
        let cfg = tiny_cfg();
        let model = Model::<f64>::new(cfg, &mut Streams::new(13).init()).unwrap();
        let hist = vec![0.0; 16];
        let err = model.forward(&hist, 1, GateMode::Sampled { tau: 1.0 }, None);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn identity_gate_ablation_runs_end_to_end() {
        let cfg = tiny_cfg();
        let model = Model::<f64>::new(cfg, &mut Streams::new(14).init()).unwrap();
        let hist: Vec<f64> = (0..2 * 16).map(|v| (v as f64 * 0.11).sin()).collect();
        let out = model.forward(&hist, 2, GateMode::Identity, None).unwrap();
        assert!(out.prediction.to_vec().iter().all(|v| v.is_finite()));
        assert!(out.gates[0].c1.is_empty());
        for z in &out.gates[0].z {
            let zd = z.to_vec();
            for r in 0..4 {
                for c in 0..4 {
                    assert_eq!(zd[r * 4 + c], if r == c { 1.0 } else { 0.0 });
                }
            }
        }
    }

    #[test]
    fn zero_predictor_outputs_its_bias() {
        let cfg = tiny_cfg();
        let mut model = Model::<f64>::new(cfg, &mut Streams::new(15).init()).unwrap();
        let w = model.predictor.weight.shape().to_vec();
        model.predictor.weight = Tensor::param(vec![0.0; w[0] * w[1]], &w).unwrap();
        model.predictor.bias = Some(Tensor::param(vec![0.4, -0.7, 2.5], &[3]).unwrap());
        let hist: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let out = model.forward(&hist, 1, GateMode::Deterministic, None).unwrap();
        assert_eq!(out.prediction.to_vec(), vec![0.4, -0.7, 2.5]);
    }

    #[test]
    fn predictor_dimensions_scale_with_config() {
        let cfg = ModelConfig {
            patch: PatchConfig { n: 512, l: 16, k: 8, count: 64, d: 128 },
            heads: 4,
            depth: 1,
            horizon: 96,
            memory_dim: 128,
            hidden: 128,
        };
        let model = Model::<f32>::new(cfg, &mut Streams::new(16).init()).unwrap();
        assert_eq!(model.predictor.weight.shape(), &[64 * 128, 96]);
        assert_eq!(model.predictor.weight.numel(), 64 * 128 * 96);
    }

    #[test]
    fn constant_series_follows_the_zero_input_path() {
        // a constant history normalizes to all zeros, so the model must emit
        // exactly its zero-input response
        let cfg = tiny_cfg();
        let model = Model::<f64>::new(cfg, &mut Streams::new(17).init()).unwrap();
        let norm = crate::data::InstanceNormState::fit(&[42.5; 16]);
        let hist = norm.normalize(&[42.5; 16]);
        assert!(hist.iter().all(|v| *v == 0.0));
        let a = model.forward(&hist, 1, GateMode::Deterministic, None).unwrap();
        let b = model.forward(&vec![0.0; 16], 1, GateMode::Deterministic, None).unwrap();
        assert_eq!(a.prediction.to_vec(), b.prediction.to_vec());
    }

    #[test]
    fn whole_model_gradient_matches_finite_differences() {
        let report = reference_gradcheck().unwrap();
        assert!(report.passes(MODEL_TOLERANCE), "{report:?}");
        assert!(report.coords_checked > 1000, "suspiciously few coordinates");
    }

    #[test]
    fn snapshot_exposes_probabilities_and_hard_gates() {
        let cfg = tiny_cfg();
        let model = Model::<f64>::new(cfg, &mut Streams::new(19).init()).unwrap();
        let snap = model.connection_snapshot(0, 1).unwrap();
        assert_eq!(snap.n, 4);
        assert_eq!(snap.probs.len(), 32);
        assert_eq!(snap.z_hard.len(), 16);
        for pair in snap.probs.chunks_exact(2) {
            assert!((pair[0] + pair[1] - 1.0).abs() < 1e-6);
        }
        for (c, h) in snap.c1().iter().zip(&snap.z_hard) {
            assert_eq!(*h, if *c > 0.5 { 1.0 } else { 0.0 });
        }
        assert!(model.connection_snapshot(0, 5).is_err());
        assert!(model.connection_snapshot(3, 0).is_err());
    }

    #[test]
    fn parameter_names_follow_the_checkpoint_convention() {
        let cfg = tiny_cfg();
        let model = Model::<f64>::new(cfg, &mut Streams::new(20).init()).unwrap();
        let names: Vec<String> = model.params().into_iter().map(|(n, _)| n).collect();
        for expected in [
            "patch.w_p",
            "patch.w_pos",
            "sti.0.time_invariant",
            "sti.0.head.1.memory",
            "sti.0.head.0.encoder.2.weight",
            "sti.0.head.1.predictor.0.bias",
            "sti.0.head.0.value.weight",
            "sti.0.time_update.1.bias",
            "sti.0.align",
            "sti.0.integration.0.weight",
            "predictor.weight",
            "predictor.bias",
        ] {
            assert!(names.iter().any(|n| n == expected), "missing {expected}: {names:?}");
        }
        // names are unique
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }
}
