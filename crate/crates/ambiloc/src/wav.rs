//! WAV I/O for four-channel Ambisonics recordings and mono speech sources.
//!
//! Ambisonics files are written as 32-bit float WAV with four interleaved
//! channels in W, X, Y, Z order. Mono sources may be float or 16-bit PCM.

use std::path::Path;

use crate::error::{Error, Result};
use crate::features::FoaSignal;

pub const DEFAULT_SAMPLE_RATE: u32 = 16_000;

/// Writes a four-channel float WAV in W, X, Y, Z channel order.
pub fn write_foa_wav(path: &Path, signal: &FoaSignal) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 4,
        sample_rate: signal.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for n in 0..signal.len() {
        for ch in 0..4 {
            writer.write_sample(signal.channels[ch][n] as f32)?;
        }
    }
    writer.finalize()?;
    Ok(())
}

/// Reads a four-channel float WAV produced by [`write_foa_wav`].
pub fn read_foa_wav(path: &Path) -> Result<FoaSignal> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 4 {
        return Err(Error::Audio(format!(
            "{}: expected 4 channels, found {}",
            path.display(),
            spec.channels
        )));
    }
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    let frames = interleaved.len() / 4;
    let mut channels = [
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
        Vec::with_capacity(frames),
    ];
    for frame in interleaved.chunks_exact(4) {
        for (ch, v) in frame.iter().enumerate() {
            channels[ch].push(*v);
        }
    }
    Ok(FoaSignal {
        channels,
        sample_rate: spec.sample_rate,
    })
}

/// Reads a mono WAV (float or integer PCM) as f64 samples in [-1, 1],
/// returning the samples and the file's sample rate. Multichannel input is
/// reduced to its first channel.
pub fn read_mono_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let step = spec.channels as usize;
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .step_by(step)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .step_by(step)
                .map(|s| s.map(|v| v as f64 * scale))
                .collect::<std::result::Result<_, _>>()?
        }
    };
    Ok((samples, spec.sample_rate))
}

/// Writes a mono float WAV, used for synthetic speech fixtures.
pub fn write_mono_wav(path: &Path, samples: &[f64], sample_rate: u32) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for s in samples {
        writer.write_sample(*s as f32)?;
    }
    writer.finalize()?;
    Ok(())
}
