//! Verifies the hand-written backpropagation of the full localizer — conv
//! blocks, self-attention encoder, layer norms, and both output heads —
//! against central finite differences of the binary-cross-entropy loss.
//!
//! Run with: `cargo run --release --example gradient_check`

use ambiloc::model::{build_model, AttentionVariant, ModelConfig};
use ambiloc::nn::{finite_diff_gradient, Tensor};
use ambiloc::train::bce_loss;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ambiloc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for variant in [AttentionVariant::MultiHead, AttentionVariant::CrossMultiHead] {
        let config = ModelConfig {
            variant,
            n_heads: 2,
            n_encoders: 1,
            conv_channels: 2,
            pools: vec![2],
            freq_bins: 8,
            n_frames: 4,
            n_classes: 7,
            ..ModelConfig::default()
        };
        let model = build_model(&config, 5)?;

        let mut input = Tensor::zeros(&[config.n_frames, config.freq_bins, 6]);
        for v in input.data_mut() {
            *v = rng.random_range(-0.8..0.8);
        }
        let mut target = Tensor::zeros(&[config.n_frames, config.n_classes]);
        for v in target.data_mut() {
            *v = if rng.random_bool(0.3) { 1.0 } else { 0.0 };
        }

        // Analytic gradient: forward with cache, then one backward sweep.
        let (pred, cache) = model.forward_cached(&input)?;
        let (loss, grad_pred) = bce_loss(&pred, &target)?;
        let (_, param_grads) = model.backward(&cache, &grad_pred)?;
        let analytic = param_grads.flatten();

        // Numeric gradient: re-evaluate the loss under perturbed parameters.
        let theta = model.params.flatten();
        let mut probe = model.clone();
        let numeric = finite_diff_gradient(
            |p| {
                probe.params.load_flat(p).expect("same length");
                let out = probe.forward(&input).expect("same shapes");
                bce_loss(&out, &target).expect("same shapes").0
            },
            &theta,
            1e-5,
        );

        let mut worst = 0.0f64;
        for (a, n) in analytic.iter().zip(&numeric) {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
            worst = worst.max(rel);
        }
        println!(
            "{:<14} {} parameters, loss {:.6}: max relative gradient error {:.3e}",
            config.name(),
            theta.len(),
            loss,
            worst
        );
        assert!(worst < 1e-4, "gradient mismatch");
    }
    println!("analytic backpropagation matches finite differences");
    Ok(())
}
