//! Trains a miniature attention localizer from scratch until it perfectly
//! fits a handful of synthetic single-source sequences — a quick end-to-end
//! exercise of the forward pass, backpropagation, the Nadam optimizer, and
//! the early-stopping/LR-halving schedule.
//!
//! Run with: `cargo run --release --example train_overfit`

use ambiloc::grid::{encode_target, DoaGrid, GridSpec};
use ambiloc::model::{build_model, AttentionVariant, ModelConfig};
use ambiloc::nn::Tensor;
use ambiloc::train::{train_loop, Dataset, DatasetItem, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Ideal plane-wave intensity features for one direction plus a little noise.
fn plane_wave_item(grid: &DoaGrid, class: usize, shape: &[usize; 2], rng: &mut impl Rng) -> DatasetItem {
    let dir = grid.direction(class);
    let u = dir.unit_vector();
    let a = 3.0_f64.sqrt() / 2.0;
    let mut features = Tensor::zeros(&[shape[0], shape[1], 6]);
    for t in 0..shape[0] {
        for f in 0..shape[1] {
            for (ax, &ua) in u.iter().enumerate() {
                features.set(&[t, f, ax], a * ua + rng.random_range(-0.02..0.02));
                features.set(&[t, f, ax + 3], rng.random_range(-0.02..0.02));
            }
        }
    }
    DatasetItem {
        features,
        doas: vec![dir],
        target: encode_target(grid, &[dir]),
    }
}

fn main() -> ambiloc::Result<()> {
    // 7-class grid (poles + 5 equatorial-ish rings collapse at alpha = 90).
    let grid = DoaGrid::build(GridSpec { alpha_deg: 90.0 })?;
    let config = ModelConfig {
        variant: AttentionVariant::MultiHead,
        n_heads: 2,
        n_encoders: 1,
        conv_channels: 4,
        pools: vec![2],
        freq_bins: 8,
        n_frames: 6,
        n_classes: grid.len(),
        ..ModelConfig::default()
    };
    config.validate()?;
    let model = build_model(&config, 42)?;
    println!(
        "model {} with {} parameters, {} classes",
        config.name(),
        model.count_params(),
        grid.len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let items: Vec<DatasetItem> = (0..grid.len())
        .map(|c| plane_wave_item(&grid, c, &[config.n_frames, config.freq_bins], &mut rng))
        .collect();
    let data = Dataset { items };

    let tc = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 4,
        max_epochs: 60,
        early_stop_patience: 20,
        lr_patience: 10,
        lr_factor: 0.5,
        seed: 0,
    };
    let (_trained, history) = train_loop(model, &data, &data, &grid, &tc)?;

    println!("\n{:>6} {:>12} {:>14} {:>14}", "epoch", "train_loss", "val_accuracy", "lr");
    for e in &history.epochs {
        println!(
            "{:>6} {:>12.6} {:>13.1}% {:>14.6}",
            e.epoch,
            e.train_loss,
            100.0 * e.val_accuracy,
            e.learning_rate
        );
    }
    println!(
        "\nbest accuracy {:.1}% at epoch {} ({} epochs run)",
        100.0 * history.best_val_accuracy,
        history.best_epoch,
        history.epochs.len()
    );
    Ok(())
}
