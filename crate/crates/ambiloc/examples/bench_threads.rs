//! Times one-sequence inference across worker-thread counts and contrasts it
//! with a recurrent reference cell of the same width, which cannot spread one
//! sequence across threads because every frame depends on the previous one.
//! The attention stack has no such dependency, so adding workers shortens its
//! latency on multi-core hosts.
//!
//! Run with: `cargo run --release --example bench_threads`

use ambiloc::eval::{
    benchmark, build_recurrent_cell, host_description, recurrent_reference_forward, BenchSpec,
};
use ambiloc::model::{build_model, ModelConfig};
use ambiloc::nn::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ambiloc::Result<()> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    println!("host: {} ({cores} core(s) visible)\n", host_description());

    // Moderate size so the sweep finishes in seconds even on one core.
    let config = ModelConfig {
        conv_channels: 16,
        pools: vec![4, 4, 4, 2],
        freq_bins: 129,
        ..ModelConfig::default()
    };
    let model = build_model(&config, 1)?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut input = Tensor::zeros(&[config.n_frames, config.freq_bins, 6]);
    for v in input.data_mut() {
        *v = rng.random_range(-0.8..0.8);
    }
    model.forward(&input)?;

    let spec = BenchSpec {
        worker_counts: vec![1, 2, 4],
        warmup_iters: 5,
        measured_iters: 30,
    };
    let hop = (config.freq_bins - 1) as f64; // fft/2 with fft = 2*(bins-1)
    let sequence_secs = config.n_frames as f64 * hop / 16_000.0;
    println!(
        "attention model {} ({} parameters), sequence covers {sequence_secs:.2} s of audio:",
        config.name(),
        model.count_params()
    );
    println!("{:>8} {:>12} {:>10} {:>10} {:>12}", "workers", "median_ms", "p25_ms", "p75_ms", "realtime_%");
    for r in benchmark(|| { model.forward(&input).expect("validated"); }, &spec)? {
        println!(
            "{:>8} {:>12.3} {:>10.3} {:>10.3} {:>12.2}",
            r.workers, r.median_ms, r.p25_ms, r.p75_ms, r.realtime_percent(sequence_secs)
        );
    }

    let g = 128;
    let cell = build_recurrent_cell(g, g, 1);
    let mut rec_input = Tensor::zeros(&[config.n_frames, g]);
    for v in rec_input.data_mut() {
        *v = rng.random_range(-0.8..0.8);
    }
    recurrent_reference_forward(&rec_input, &cell)?;
    println!(
        "\nrecurrent reference ({} parameters, width {g}, frame-sequential -> flat across workers):",
        cell.param_count()
    );
    println!("{:>8} {:>12} {:>10} {:>10}", "workers", "median_ms", "p25_ms", "p75_ms");
    for r in benchmark(
        || {
            recurrent_reference_forward(&rec_input, &cell).expect("validated");
        },
        &spec,
    )? {
        println!(
            "{:>8} {:>12.3} {:>10.3} {:>10.3}",
            r.workers, r.median_ms, r.p25_ms, r.p75_ms
        );
    }
    if cores < 4 {
        println!("\nnote: fewer than 4 cores visible, so worker counts above {cores} cannot speed up the sweep");
    }
    Ok(())
}
