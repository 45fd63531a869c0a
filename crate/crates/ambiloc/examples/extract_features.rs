//! Converts a first-order Ambisonics signal into the 6-channel intensity
//! features used by every localizer in this crate, then round-trips them
//! through the `.sldf` on-disk format.
//!
//! A far-field source from direction `u` ideally produces an active intensity
//! of `(sqrt(3)/2) * u` in every time-frequency cell and zero reactive
//! intensity; the printout below shows how close a synthetic plane wave gets.
//!
//! Run with: `cargo run --release --example extract_features`

use ambiloc::features::{extract_features, read_sldf, write_sldf, FoaSignal, StftSpec};
use ambiloc::grid::Direction;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> ambiloc::Result<()> {
    let sample_rate = 16_000;
    let n = 16_000;
    let dir = Direction::new(40.0, -15.0);
    let u = dir.unit_vector();

    // Wideband plane wave: N3D first-order gains [1, sqrt(3) u].
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dry: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let s3 = 3.0_f64.sqrt();
    let signal = FoaSignal {
        channels: [
            dry.clone(),
            dry.iter().map(|s| s * s3 * u[0]).collect(),
            dry.iter().map(|s| s * s3 * u[1]).collect(),
            dry.iter().map(|s| s * s3 * u[2]).collect(),
        ],
        sample_rate,
    };

    let spec = StftSpec::default();
    let features = extract_features(&signal, &spec)?;
    let [frames, bins, ch] = features.shape() else {
        unreachable!("features are rank 3")
    };
    println!(
        "{n} samples @ {sample_rate} Hz, fft {} hop {} -> features [{frames}, {bins}, {ch}]",
        spec.fft_size, spec.hop
    );

    // Average each channel over all time-frequency cells.
    let mut mean = [0.0f64; 6];
    for t in 0..*frames {
        for f in 0..*bins {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += features.at(&[t, f, c]);
            }
        }
    }
    for m in &mut mean {
        *m /= (frames * bins) as f64;
    }
    println!("mean active intensity   [{:+.4} {:+.4} {:+.4}]", mean[0], mean[1], mean[2]);
    println!(
        "ideal (sqrt(3)/2) * u   [{:+.4} {:+.4} {:+.4}]",
        s3 / 2.0 * u[0],
        s3 / 2.0 * u[1],
        s3 / 2.0 * u[2]
    );
    println!("mean reactive intensity [{:+.4} {:+.4} {:+.4}]", mean[3], mean[4], mean[5]);

    let doa = Direction::from_vector([mean[0], mean[1], mean[2]]);
    println!(
        "direction from mean active intensity: ({:.2}, {:.2}); truth ({:.2}, {:.2})",
        doa.az_deg, doa.el_deg, dir.az_deg, dir.el_deg
    );

    let path = std::env::temp_dir().join("ambiloc_example_features.sldf");
    write_sldf(&path, &features)?;
    let back = read_sldf(&path)?;
    println!(
        "round-tripped {} via {} ({} values, f32 storage, max abs diff {:.2e})",
        if back.shape() == features.shape() { "OK" } else { "SHAPE MISMATCH" },
        path.display(),
        back.len(),
        features
            .data()
            .iter()
            .zip(back.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    );
    Ok(())
}
