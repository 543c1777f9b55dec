//! Patch geometry and embedding. A history window of length n is padded with
//! K repeats of its last value and cut into N = floor((n-L)/K) + 2 windows of
//! length L at stride K, with L = 2K so neighbouring patches overlap by K.
//! The patch count is held at a configured target by deriving K = floor(n/Ñ).

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{gaussian, uniform, Params};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchConfig {
    /// History length n.
    pub n: usize,
    /// Patch length L = 2K.
    pub l: usize,
    /// Stride K.
    pub k: usize,
    /// Patch count N.
    pub count: usize,
    /// Embedding width D.
    pub d: usize,
}

/// floor((n - l) / k) + 2 patches over the padded sequence.
pub fn patch_count(n: usize, l: usize, k: usize) -> usize {
    debug_assert!(n >= l && k > 0);
    (n - l) / k + 2
}

/// Picks K = floor(n/target), L = 2K so the patch count lands on `target`
/// (exactly when target divides n).
pub fn derive_patch_geometry(n: usize, target: usize, d: usize) -> Result<PatchConfig> {
    if target == 0 || n < 2 * target {
        return Err(Error::Config(format!(
            "history length {n} is too short for {target} patches (needs n >= {}); \
             lower the patch-count target",
            2 * target
        )));
    }
    let k = n / target;
    let l = 2 * k;
    Ok(PatchConfig {
        n,
        l,
        k,
        count: patch_count(n, l, k),
        d,
    })
}

/// Cuts one history window into row-major [N, L] patch values.
pub fn patch<T: Scalar>(history: &[T], cfg: &PatchConfig) -> Result<Vec<T>> {
    if history.len() != cfg.n {
        return Err(Error::Shape(format!(
            "history length {} does not match configured n = {}",
            history.len(),
            cfg.n
        )));
    }
    let mut padded = Vec::with_capacity(cfg.n + cfg.k);
    padded.extend_from_slice(history);
    let last = *history.last().expect("n >= 2 per config validation");
    padded.resize(cfg.n + cfg.k, last);

    let mut out = Vec::with_capacity(cfg.count * cfg.l);
    for i in 0..cfg.count {
        let start = i * cfg.k;
        out.extend_from_slice(&padded[start..start + cfg.l]);
    }
    Ok(out)
}

/// Stacks per-sample patches into a [B, N, L] constant tensor.
pub fn patch_batch<T: Scalar>(histories: &[T], batch: usize, cfg: &PatchConfig) -> Result<Tensor<T>> {
    if histories.len() != batch * cfg.n {
        return Err(Error::Shape(format!(
            "expected {batch} histories of length {}, got {} values",
            cfg.n,
            histories.len()
        )));
    }
    let mut data = Vec::with_capacity(batch * cfg.count * cfg.l);
    for b in 0..batch {
        data.extend(patch(&histories[b * cfg.n..(b + 1) * cfg.n], cfg)?);
    }
    Tensor::from_vec(data, &[batch, cfg.count, cfg.l])
}

/// Shared projection plus learnable positional offsets:
/// row i of the output is patches[i] * W_p + W_pos[i].
pub struct PatchEmbed<T: Scalar> {
    /// [L, D], fan-in uniform init.
    pub w_p: Tensor<T>,
    /// [N, D], zero-mean Gaussian init (sigma 0.02).
    pub w_pos: Tensor<T>,
}

impl<T: Scalar> PatchEmbed<T> {
    pub fn new(cfg: &PatchConfig, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (cfg.l as f64).sqrt();
        let w_p = Tensor::param(uniform(rng, cfg.l * cfg.d, bound), &[cfg.l, cfg.d])
            .expect("sized init");
        let w_pos = Tensor::param(gaussian(rng, cfg.count * cfg.d, 0.02), &[cfg.count, cfg.d])
            .expect("sized init");
        PatchEmbed { w_p, w_pos }
    }

    /// [B, N, L] -> [B, N, D] (also accepts a single [N, L] sample).
    pub fn forward(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        patches.matmul(&self.w_p)?.add(&self.w_pos)
    }

    pub fn collect(&self, prefix: &str, out: &mut Params<T>) {
        out.push((format!("{prefix}.w_p"), self.w_p.clone()));
        out.push((format!("{prefix}.w_pos"), self.w_pos.clone()));
    }
}

/// Brute-force reference: pad with K repeats of the last value, then walk
/// windows of length L at stride K. Used by tests as the geometry oracle.
pub fn enumerate_patches_reference<T: Scalar>(history: &[T], l: usize, k: usize) -> Vec<Vec<T>> {
    let mut padded = history.to_vec();
    let last = *history.last().expect("non-empty history");
    padded.resize(history.len() + k, last);
    let mut out = Vec::new();
    let mut start = 0;
    while start + l <= padded.len() {
        out.push(padded[start..start + l].to_vec());
        start += k;
    }
    out
}
