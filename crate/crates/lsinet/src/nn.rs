//! Small layer primitives shared by the model modules.

use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rng::normal;
use crate::tensor::{Scalar, Tensor};

/// Named parameter list; ordering is the init order and the checkpoint order.
pub type Params<T> = Vec<(String, Tensor<T>)>;

/// y = x W + b with W: [in, out]. Kaiming-style fan-in uniform init,
/// bound 1/sqrt(in), for both weight and bias.
pub struct Linear<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = Tensor::param(uniform(rng, in_dim * out_dim, bound), &[in_dim, out_dim])
            .expect("sized init");
        let bias = bias.then(|| {
            Tensor::param(uniform(rng, out_dim, bound), &[out_dim]).expect("sized init")
        });
        Linear { weight, bias }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let y = x.matmul(&self.weight)?;
        match &self.bias {
            Some(b) => y.add(b),
            None => Ok(y),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn collect(&self, prefix: &str, out: &mut Params<T>) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        if let Some(b) = &self.bias {
            out.push((format!("{prefix}.bias"), b.clone()));
        }
    }
}

pub fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    use rand::Rng;
    (0..n)
        .map(|_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        .collect()
}

pub fn gaussian<T: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<T> {
    (0..n).map(|_| T::from_f64_lossy(normal(rng) * std)).collect()
}

/// Identity matrix parameter, for maps that must start as a passthrough.
pub fn identity_param<T: Scalar>(n: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        data[i * n + i] = T::one();
    }
    Tensor::param(data, &[n, n]).expect("sized init")
}

/// [n, n] identity constant (not a trainable parameter).
pub fn identity<T: Scalar>(n: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); n * n];
    for i in 0..n {
        data[i * n + i] = T::one();
    }
    Tensor::from_vec(data, &[n, n]).expect("sized init")
}
