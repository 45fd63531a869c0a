//! Acoustic intensity features from first-order Ambisonics audio.
//!
//! A four-channel recording (omni W plus dipoles X, Y, Z in N3D scaling) is
//! transformed with a sine-windowed STFT. For every time-frequency cell the
//! active and reactive intensity vectors
//!
//! ```text
//! Ia = [Re(W X*), Re(W Y*), Re(W Z*)]
//! Ir = [Im(W X*), Im(W Y*), Im(W Z*)]
//! ```
//!
//! are normalized by the total power `|W|^2 + (|X|^2 + |Y|^2 + |Z|^2) / 3`
//! and stacked into six feature channels. The normalized active part points
//! toward the dominant sound source in each cell, which is what both the
//! attention networks and the histogram baseline consume.

use std::io::{Read as _, Write as _};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Guards the power normalization against silent cells.
pub const POWER_EPSILON: f64 = 1e-12;

/// Frames per feature sequence fed to the networks.
pub const DEFAULT_SEQUENCE_FRAMES: usize = 25;

/// Four-channel time-domain Ambisonics signal in W, X, Y, Z order.
#[derive(Clone, Debug, PartialEq)]
pub struct FoaSignal {
    pub channels: [Vec<f64>; 4],
    pub sample_rate: u32,
}

impl FoaSignal {
    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        FoaSignal {
            channels: std::array::from_fn(|_| vec![0.0; len]),
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// STFT framing parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StftSpec {
    /// Transform length; must be a power of two.
    pub fft_size: usize,
    /// Frame advance in samples.
    pub hop: usize,
}

impl Default for StftSpec {
    fn default() -> Self {
        StftSpec {
            fft_size: 1024,
            hop: 512,
        }
    }
}

impl StftSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fft_size == 0 || !self.fft_size.is_power_of_two() {
            return Err(Error::config(format!(
                "fft size must be a power of two, got {}",
                self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::config(format!(
                "hop must be in [1, fft_size], got {}",
                self.hop
            )));
        }
        Ok(())
    }

    /// Number of retained bins: 0 through Nyquist.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames start at every hop boundary inside the signal; the final
    /// frames read past the end into zero padding.
    pub fn frames(&self, signal_len: usize) -> usize {
        signal_len.div_ceil(self.hop)
    }

    /// Half-cycle sine analysis window.
    pub fn window(&self) -> Vec<f64> {
        let n = self.fft_size as f64;
        (0..self.fft_size)
            .map(|i| (std::f64::consts::PI * (i as f64 + 0.5) / n).sin())
            .collect()
    }
}

/// One-sided complex spectrogram per Ambisonics channel, frames x bins
/// row-major.
#[derive(Clone, Debug)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub channels: [Vec<Complex<f64>>; 4],
}

/// Sine-windowed STFT of one channel; rows are frames, columns the bins
/// 0..=fft_size/2.
pub fn stft(samples: &[f64], spec: &StftSpec) -> Result<Vec<Complex<f64>>> {
    spec.validate()?;
    let frames = spec.frames(samples.len());
    let bins = spec.bins();
    let window = spec.window();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(spec.fft_size);
    let mut out = vec![Complex::new(0.0, 0.0); frames * bins];
    let mut buf = vec![Complex::new(0.0, 0.0); spec.fft_size];
    for t in 0..frames {
        let start = t * spec.hop;
        for (i, slot) in buf.iter_mut().enumerate() {
            let v = samples.get(start + i).copied().unwrap_or(0.0);
            *slot = Complex::new(v * window[i], 0.0);
        }
        fft.process(&mut buf);
        out[t * bins..(t + 1) * bins].copy_from_slice(&buf[..bins]);
    }
    Ok(out)
}

/// STFT of all four Ambisonics channels.
pub fn stft_foa(signal: &FoaSignal, spec: &StftSpec) -> Result<ComplexSpectrogram> {
    spec.validate()?;
    let frames = spec.frames(signal.len());
    let bins = spec.bins();
    let mut channels: [Vec<Complex<f64>>; 4] = std::array::from_fn(|_| Vec::new());
    for (ch, samples) in signal.channels.iter().enumerate() {
        channels[ch] = stft(samples, spec)?;
    }
    Ok(ComplexSpectrogram {
        frames,
        bins,
        channels,
    })
}

/// Power-normalized intensity features, shaped `[frames, bins, 6]` with the
/// active x, y, z components first and the reactive components after.
pub fn intensity_features(spec: &ComplexSpectrogram) -> Tensor {
    let mut out = Tensor::zeros(&[spec.frames, spec.bins, 6]);
    let data = out.data_mut();
    let [w, x, y, z] = &spec.channels;
    for (cell, chunk) in data.chunks_mut(6).enumerate() {
        let wc = w[cell];
        let cross = [wc * x[cell].conj(), wc * y[cell].conj(), wc * z[cell].conj()];
        let power = wc.norm_sqr()
            + (x[cell].norm_sqr() + y[cell].norm_sqr() + z[cell].norm_sqr()) / 3.0
            + POWER_EPSILON;
        for axis in 0..3 {
            chunk[axis] = cross[axis].re / power;
            chunk[3 + axis] = cross[axis].im / power;
        }
    }
    out
}

/// End-to-end helper: STFT plus intensity features.
pub fn extract_features(signal: &FoaSignal, spec: &StftSpec) -> Result<Tensor> {
    Ok(intensity_features(&stft_foa(signal, spec)?))
}

/// Splits a `[frames, bins, 6]` feature tensor into non-overlapping
/// sequences of `n_frames` frames, dropping any remainder.
pub fn frame_sequences(features: &Tensor, n_frames: usize) -> Result<Vec<Tensor>> {
    let [frames, bins, ch] = *features.shape() else {
        return Err(Error::shape(format!(
            "expected [frames, bins, channels] features, got {:?}",
            features.shape()
        )));
    };
    if n_frames == 0 {
        return Err(Error::config("sequence length must be positive"));
    }
    let stride = bins * ch;
    let mut out = Vec::with_capacity(frames / n_frames);
    for s in 0..frames / n_frames {
        let start = s * n_frames * stride;
        let chunk = features.data()[start..start + n_frames * stride].to_vec();
        out.push(Tensor::from_vec(&[n_frames, bins, ch], chunk)?);
    }
    Ok(out)
}

const SLDF_MAGIC: [u8; 4] = *b"SLDF";
const SLDF_VERSION: u32 = 1;

/// Writes a rank-3 feature tensor as an `.sldf` file: magic, format
/// version, the three dimensions, then the payload as little-endian f32 in
/// row-major order.
pub fn write_sldf(path: &Path, features: &Tensor) -> Result<()> {
    let [n, f, c] = *features.shape() else {
        return Err(Error::shape(format!(
            "feature files store rank-3 tensors, got shape {:?}",
            features.shape()
        )));
    };
    let mut buf = Vec::with_capacity(20 + features.len() * 4);
    buf.extend_from_slice(&SLDF_MAGIC);
    buf.extend_from_slice(&SLDF_VERSION.to_le_bytes());
    for dim in [n, f, c] {
        buf.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for v in features.data() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Reads an `.sldf` file written by [`write_sldf`].
pub fn read_sldf(path: &Path) -> Result<Tensor> {
    const KIND: &str = "feature";
    let mut file = std::fs::File::open(path)?;
    let mut header = [0u8; 20];
    file.read_exact(&mut header).map_err(|_| Error::Truncated {
        kind: KIND,
        detail: "file ends inside the 20-byte header".to_string(),
    })?;
    if header[..4] != SLDF_MAGIC {
        return Err(Error::BadMagic {
            kind: KIND,
            expected: SLDF_MAGIC,
        });
    }
    let word = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != SLDF_VERSION {
        return Err(Error::UnsupportedVersion {
            kind: KIND,
            found: version,
            expected: SLDF_VERSION,
        });
    }
    let shape = [word(8) as usize, word(12) as usize, word(16) as usize];
    let count = shape.iter().product::<usize>();
    let mut payload = vec![0u8; count * 4];
    file.read_exact(&mut payload).map_err(|_| Error::Truncated {
        kind: KIND,
        detail: format!("payload shorter than {count} f32 values"),
    })?;
    let mut probe = [0u8; 1];
    if file.read(&mut probe)? != 0 {
        return Err(Error::Malformed {
            kind: KIND,
            detail: "trailing bytes after payload".to_string(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
        .collect();
    Tensor::from_vec(&shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xorshift(seed: &mut u64) -> f64 {
        *seed ^= *seed << 13;
        *seed ^= *seed >> 7;
        *seed ^= *seed << 17;
        (*seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    }

    /// Textbook O(n^2) DFT used as an oracle for the FFT-backed STFT.
    fn naive_windowed_dft(frame: &[f64], window: &[f64], bins: usize) -> Vec<Complex<f64>> {
        let n = frame.len();
        (0..bins)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (i, (s, w)) in frame.iter().zip(window).enumerate() {
                    let phase = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                    acc += Complex::new(phase.cos(), phase.sin()) * (s * w);
                }
                acc
            })
            .collect()
    }

    #[test]
    fn window_is_symmetric_half_sine() {
        let spec = StftSpec {
            fft_size: 8,
            hop: 4,
        };
        let w = spec.window();
        assert_eq!(w.len(), 8);
        for i in 0..8 {
            assert!((w[i] - w[7 - i]).abs() < 1e-15);
            assert!(w[i] > 0.0 && w[i] <= 1.0);
        }
        assert!((w[0] - (std::f64::consts::PI * 0.5 / 8.0).sin()).abs() < 1e-15);
    }

    #[test]
    fn stft_matches_naive_dft() {
        let spec = StftSpec {
            fft_size: 32,
            hop: 16,
        };
        let mut seed = 0xA5A5_1234u64;
        let samples: Vec<f64> = (0..80).map(|_| xorshift(&mut seed)).collect();
        let got = stft(&samples, &spec).unwrap();
        let frames = spec.frames(samples.len());
        assert_eq!(frames, 5);
        let window = spec.window();
        for t in 0..frames {
            let mut frame = vec![0.0; spec.fft_size];
            for (i, slot) in frame.iter_mut().enumerate() {
                *slot = samples.get(t * spec.hop + i).copied().unwrap_or(0.0);
            }
            let want = naive_windowed_dft(&frame, &window, spec.bins());
            for (k, w) in want.iter().enumerate() {
                let g = got[t * spec.bins() + k];
                assert!(
                    (g - w).norm() < 1e-10,
                    "frame {t} bin {k}: {g} vs {w}"
                );
            }
        }
    }

    #[test]
    fn default_spec_shapes() {
        let spec = StftSpec::default();
        assert_eq!(spec.bins(), 513);
        assert_eq!(spec.frames(16_000), 32);
        let signal = FoaSignal::zeros(16_000, 16_000);
        let feats = extract_features(&signal, &spec).unwrap();
        assert_eq!(feats.shape(), &[32, 513, 6]);
    }

    #[test]
    fn pure_reactive_cell_is_minus_three_quarters() {
        // W = 1 and X = i make the cross-spectrum W X* = -i: no active flow
        // along x, reactive component -1, total power 1 + 1/3.
        let spec = ComplexSpectrogram {
            frames: 1,
            bins: 1,
            channels: [
                vec![Complex::new(1.0, 0.0)],
                vec![Complex::new(0.0, 1.0)],
                vec![Complex::new(0.0, 0.0)],
                vec![Complex::new(0.0, 0.0)],
            ],
        };
        let f = intensity_features(&spec);
        let want = [0.0, 0.0, 0.0, -0.75, 0.0, 0.0];
        for (g, w) in f.data().iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9, "{:?}", f.data());
        }
    }

    #[test]
    fn plane_wave_points_at_source() {
        // An N3D plane wave from direction u has X,Y,Z = sqrt(3) u W, so the
        // normalized active intensity is (sqrt(3)/2) u and the reactive part
        // vanishes.
        let u = [0.6, 0.64, 0.48]; // unit vector
        let wc = Complex::new(0.31, -0.7);
        let s3 = 3f64.sqrt();
        let spec = ComplexSpectrogram {
            frames: 1,
            bins: 1,
            channels: [
                vec![wc],
                vec![wc * s3 * u[0]],
                vec![wc * s3 * u[1]],
                vec![wc * s3 * u[2]],
            ],
        };
        let f = intensity_features(&spec);
        for (axis, &ua) in u.iter().enumerate() {
            assert!((f.data()[axis] - s3 / 2.0 * ua).abs() < 1e-9);
            assert!(f.data()[3 + axis].abs() < 1e-12);
        }
    }

    #[test]
    fn features_match_scalar_reference() {
        // Re-derive a handful of cells with plain scalar arithmetic.
        let spec = StftSpec {
            fft_size: 64,
            hop: 32,
        };
        let mut seed = 77u64;
        let mut signal = FoaSignal::zeros(200, 16_000);
        for ch in signal.channels.iter_mut() {
            for v in ch.iter_mut() {
                *v = xorshift(&mut seed);
            }
        }
        let spectro = stft_foa(&signal, &spec).unwrap();
        let feats = intensity_features(&spectro);
        for cell in [0usize, 7, 33, 100, 200] {
            let (w, x, y, z) = (
                spectro.channels[0][cell],
                spectro.channels[1][cell],
                spectro.channels[2][cell],
                spectro.channels[3][cell],
            );
            let p = w.re * w.re + w.im * w.im
                + (x.re * x.re + x.im * x.im + y.re * y.re + y.im * y.im + z.re * z.re
                    + z.im * z.im)
                    / 3.0
                + POWER_EPSILON;
            let expect = [
                (w.re * x.re + w.im * x.im) / p,
                (w.re * y.re + w.im * y.im) / p,
                (w.re * z.re + w.im * z.im) / p,
                (w.im * x.re - w.re * x.im) / p,
                (w.im * y.re - w.re * y.im) / p,
                (w.im * z.re - w.re * z.im) / p,
            ];
            for (k, e) in expect.iter().enumerate() {
                let got = feats.data()[cell * 6 + k];
                assert!((got - e).abs() < 1e-12, "cell {cell} ch {k}");
            }
        }
    }

    #[test]
    fn features_are_bounded() {
        let spec = StftSpec {
            fft_size: 128,
            hop: 64,
        };
        let mut seed = 3141u64;
        let mut signal = FoaSignal::zeros(2000, 16_000);
        for ch in signal.channels.iter_mut() {
            for v in ch.iter_mut() {
                *v = xorshift(&mut seed) * 2.0;
            }
        }
        let feats = extract_features(&signal, &spec).unwrap();
        for v in feats.data() {
            assert!(v.abs() <= 3.0, "feature out of range: {v}");
        }
    }

    #[test]
    fn features_are_scale_invariant() {
        let spec = StftSpec {
            fft_size: 64,
            hop: 32,
        };
        let mut seed = 99u64;
        let mut signal = FoaSignal::zeros(500, 16_000);
        for ch in signal.channels.iter_mut() {
            for v in ch.iter_mut() {
                *v = xorshift(&mut seed);
            }
        }
        let mut scaled = signal.clone();
        for ch in scaled.channels.iter_mut() {
            for v in ch.iter_mut() {
                *v *= 10.0;
            }
        }
        let a = extract_features(&signal, &spec).unwrap();
        let b = extract_features(&scaled, &spec).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn silence_yields_zero_features() {
        let signal = FoaSignal::zeros(1024, 16_000);
        let feats = extract_features(&signal, &StftSpec::default()).unwrap();
        assert!(feats.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sequences_split_and_drop_remainder() {
        let feats = Tensor::from_vec(&[7, 2, 6], (0..7 * 2 * 6).map(|i| i as f64).collect())
            .unwrap();
        let seqs = frame_sequences(&feats, 3).unwrap();
        assert_eq!(seqs.len(), 2);
        assert_eq!(seqs[0].shape(), &[3, 2, 6]);
        assert_eq!(seqs[0].data()[0], 0.0);
        assert_eq!(seqs[1].data()[0], (3 * 2 * 6) as f64);
    }

    #[test]
    fn sldf_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.sldf");
        let mut seed = 555u64;
        let mut t = Tensor::zeros(&[3, 5, 6]);
        for v in t.data_mut() {
            // Values already on the f32 grid survive the round trip exactly.
            *v = (xorshift(&mut seed) as f32) as f64;
        }
        write_sldf(&path, &t).unwrap();
        let back = read_sldf(&path).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn sldf_rejects_bad_magic_version_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("probe.sldf");
        let t = Tensor::zeros(&[2, 3, 6]);
        write_sldf(&path, &t).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_sldf(&path), Err(Error::BadMagic { .. })));

        let mut bad = good.clone();
        bad[4] = 9;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_sldf(&path),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));

        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(read_sldf(&path), Err(Error::Truncated { .. })));

        let mut bad = good.clone();
        bad.push(0);
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_sldf(&path), Err(Error::Malformed { .. })));
    }
}
