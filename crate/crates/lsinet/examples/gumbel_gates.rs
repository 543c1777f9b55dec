//! The gate-sampling pipeline on a single 3x3 connection matrix: relaxed
//! Bernoulli draws at falling temperatures, straight-through hardening for
//! training, thresholding for inference, and the top-K self-ranking target
//! the sparsity loss pulls the probabilities toward.

use lsinet::rng::Streams;
use lsinet::sscl::{
    class1, gumbel_softmax_sample, harden_infer, harden_train, top_k_target,
};
use lsinet::tensor::Tensor;

fn show(label: &str, values: &[f64]) {
    let cells: Vec<String> = values.iter().map(|v| format!("{v:5.2}")).collect();
    println!("  {label:<22} [{}]", cells.join(" "));
}

fn main() -> lsinet::Result<()> {
    // 9 connection probabilities, interleaved (c0, c1) per pair
    let c1 = [0.95, 0.10, 0.60, 0.05, 0.85, 0.30, 0.70, 0.20, 0.40];
    let probs: Vec<f64> = c1.iter().flat_map(|&p| [1.0 - p, p]).collect();
    let probs = Tensor::<f64>::from_vec(probs, &[9, 2])?;

    show("connection prob c1", &class1(&probs)?.to_vec());
    let streams = Streams::new(5);
    for tau in [10.0, 1.0, 0.1, 0.01] {
        let z = gumbel_softmax_sample(&probs, tau, &mut streams.gumbel(0))?;
        show(&format!("soft draw, tau={tau}"), &z.to_vec());
    }
    println!("  (lower temperature pushes draws toward binary)\n");

    let z = gumbel_softmax_sample(&probs, 1.0, &mut streams.gumbel(1))?;
    show("soft draw", &z.to_vec());
    show("train gates (rounded)", &harden_train(&z).to_vec());
    show("infer gates (c1 > 0.5)", &harden_infer(&class1(&probs)?)?.to_vec());

    let target = top_k_target(&c1, 0.35);
    show("top-K target, delta=.35", &target);
    println!("  (the loss pulls the 3 highest probabilities up, the rest down)");
    Ok(())
}
