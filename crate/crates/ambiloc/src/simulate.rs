//! Synthetic first-order-Ambisonics room simulation.
//!
//! Provides a shoebox image-source simulator producing 4-channel spatial room
//! impulse responses (SRIRs), mixing utilities with controlled SIR/SNR, a
//! diffuse babble generator, and a deterministic dataset builder that writes
//! FOA WAV files, feature tensors, and a JSON-lines manifest.

use std::f64::consts::PI;
use std::fs;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{extract_features, FoaSignal, StftSpec};
use crate::grid::Direction;
use crate::wav::{read_mono_wav, write_foa_wav, DEFAULT_SAMPLE_RATE};

/// Speed of sound in air (m/s) used throughout the simulator.
pub const SPEED_OF_SOUND: f64 = 343.0;
/// Minimum distance (m) between the microphone and every wall when sampling rooms.
pub const MIN_WALL_CLEARANCE: f64 = 0.5;
/// Sources closer to the microphone than this (m) are rejected.
pub const MIN_SOURCE_MIC_DISTANCE: f64 = 0.01;
/// Start of the "late" part of an impulse response used for babble synthesis (s).
pub const LATE_TAIL_START_SECS: f64 = 0.05;

/// Shoebox room description: dimensions, target reverberation time,
/// microphone position, and source positions (all in meters, axis-aligned,
/// with the origin at one room corner).
#[derive(Debug, Clone, PartialEq)]
pub struct RoomConfig {
    /// Room extent along x (length), y (width), z (height).
    pub dims: [f64; 3],
    /// Target reverberation time in seconds; `0` means anechoic.
    pub rt60: f64,
    /// Microphone position.
    pub mic: [f64; 3],
    /// Source positions.
    pub sources: Vec<[f64; 3]>,
}

impl RoomConfig {
    /// Checks geometric consistency: positive dimensions, finite RT60 >= 0,
    /// microphone and all sources strictly inside the room.
    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| !d.is_finite() || d <= 0.0) {
            return Err(Error::config(format!(
                "room dimensions must be positive and finite, got {:?}",
                self.dims
            )));
        }
        if !self.rt60.is_finite() || self.rt60 < 0.0 {
            return Err(Error::config(format!(
                "rt60 must be finite and non-negative, got {}",
                self.rt60
            )));
        }
        let inside = |p: &[f64; 3]| (0..3).all(|a| p[a] > 0.0 && p[a] < self.dims[a]);
        if !inside(&self.mic) {
            return Err(Error::config(format!(
                "microphone {:?} lies outside the room {:?}",
                self.mic, self.dims
            )));
        }
        for (k, s) in self.sources.iter().enumerate() {
            if !inside(s) {
                return Err(Error::config(format!(
                    "source {k} at {s:?} lies outside the room {:?}",
                    self.dims
                )));
            }
        }
        Ok(())
    }

    /// Direction of arrival of the direct path from source `idx` to the microphone.
    pub fn source_direction(&self, idx: usize) -> Result<Direction> {
        let s = self.sources.get(idx).ok_or_else(|| {
            Error::config(format!(
                "source index {idx} out of range ({} sources)",
                self.sources.len()
            ))
        })?;
        Ok(Direction::from_vector([
            s[0] - self.mic[0],
            s[1] - self.mic[1],
            s[2] - self.mic[2],
        ]))
    }
}

/// Draws a random room: length and width uniform in [2, 10] m, height in
/// [2, 3] m, RT60 in [0.2, 0.8] s, the microphone at least 0.5 m from every
/// wall (rejection sampling), and `n_sources` positions uniform in the room
/// but at least 1 cm from the microphone.
pub fn sample_room(rng: &mut impl Rng, n_sources: usize) -> RoomConfig {
    sample_room_with(rng, n_sources, (0.2, 0.8))
}

/// [`sample_room`] with a caller-controlled RT60 range (useful for building
/// quick low-reverberation datasets).
pub fn sample_room_with(
    rng: &mut impl Rng,
    n_sources: usize,
    rt60_range: (f64, f64),
) -> RoomConfig {
    let dims = [
        rng.random_range(2.0..=10.0),
        rng.random_range(2.0..=10.0),
        rng.random_range(2.0..=3.0),
    ];
    let rt60 = if rt60_range.0 == rt60_range.1 {
        rt60_range.0
    } else {
        rng.random_range(rt60_range.0..=rt60_range.1)
    };
    let mic = loop {
        let p = [
            rng.random_range(0.0..dims[0]),
            rng.random_range(0.0..dims[1]),
            rng.random_range(0.0..dims[2]),
        ];
        let clear = (0..3).all(|a| {
            p[a] >= MIN_WALL_CLEARANCE && dims[a] - p[a] >= MIN_WALL_CLEARANCE
        });
        if clear {
            break p;
        }
    };
    let mut sources = Vec::with_capacity(n_sources);
    while sources.len() < n_sources {
        let p = [
            rng.random_range(0.0..dims[0]),
            rng.random_range(0.0..dims[1]),
            rng.random_range(0.0..dims[2]),
        ];
        let d = dist(&p, &mic);
        if d >= MIN_SOURCE_MIC_DISTANCE {
            sources.push(p);
        }
    }
    RoomConfig {
        dims,
        rt60,
        mic,
        sources,
    }
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// A first-order-Ambisonics spatial room impulse response together with the
/// ground-truth direction of its direct path.
#[derive(Debug, Clone)]
pub struct FoaSrir {
    /// Impulse response per channel, ordered W, X, Y, Z (N3D normalization).
    pub ir: [Vec<f64>; 4],
    /// Direction of arrival of the direct path at the microphone.
    pub direction: Direction,
    /// Sample rate of the impulse response.
    pub sample_rate: u32,
}

/// Amplitude decay rate per meter of path length that reaches -60 dB of
/// energy at exactly `rt60` seconds of propagation (3 ln 10 / (c * rt60)).
/// Returns +inf for `rt60 == 0`.
///
/// This equals the Eyring uniform-wall coefficient raised to the expected
/// number of reflections per meter (S / 4V), but applied to path length
/// instead of the per-image integer reflection count. Counting reflections
/// per image makes the decay direction-dependent in non-cubic rooms (images
/// along the longest axis reflect least often per meter), which inflates the
/// measured reverberation time well past the requested value; the expected
/// count keeps the decay exponential with the exact requested T60 in every
/// room shape.
pub fn decay_rate_per_meter(rt60: f64) -> f64 {
    if rt60 <= 0.0 {
        return f64::INFINITY;
    }
    3.0 * 10f64.ln() / (SPEED_OF_SOUND * rt60)
}

/// Simulates the 4-channel SRIR from `room.sources[source_idx]` to the
/// microphone with the image-source method.
///
/// An image at distance `d` contributes `exp(-rate * (d - d0)) / d` (see
/// [`decay_rate_per_meter`]; `d0` is the direct-path distance, so the direct
/// pulse carries exactly the 1/d0 spherical spreading) through first-order
/// N3D directional gains `[1, √3 uₓ, √3 u_y, √3 u_z]` at a linearly
/// interpolated fractional delay of `d / c` seconds. The image set covers at
/// least 1.5x RT60 of response length; `rt60 == 0` yields only the direct
/// path. Errors if the source sits within 1 cm of the microphone.
pub fn image_source_srir(
    room: &RoomConfig,
    source_idx: usize,
    sample_rate: u32,
) -> Result<FoaSrir> {
    room.validate()?;
    let src = *room.sources.get(source_idx).ok_or_else(|| {
        Error::config(format!(
            "source index {source_idx} out of range ({} sources)",
            room.sources.len()
        ))
    })?;
    let mic = room.mic;
    let d0 = dist(&src, &mic);
    if d0 < MIN_SOURCE_MIC_DISTANCE {
        return Err(Error::config(format!(
            "source {source_idx} is {:.4} m from the microphone (minimum {} m)",
            d0, MIN_SOURCE_MIC_DISTANCE
        )));
    }
    let fs = sample_rate as f64;
    let direct_delay = d0 / SPEED_OF_SOUND * fs;
    let tail = 1.5 * room.rt60 * fs;
    let ir_len = (direct_delay + tail).ceil() as usize + 2;
    let mut ir = [
        vec![0.0; ir_len],
        vec![0.0; ir_len],
        vec![0.0; ir_len],
        vec![0.0; ir_len],
    ];
    let direction = room.source_direction(source_idx)?;

    if room.rt60 <= 0.0 {
        add_image(&mut ir, &src, &mic, 1.0, fs);
        return Ok(FoaSrir {
            ir,
            direction,
            sample_rate,
        });
    }
    let rate = decay_rate_per_meter(room.rt60);

    // Any image whose delay lands past the end of the response is inaudible.
    let max_dist = SPEED_OF_SOUND * (ir_len as f64 - 2.0) / fs;
    let max_dist_sq = max_dist * max_dist;

    // Unfolded mirror positions along one axis: cell m holds the source at
    // m*L + s for even m and (m+1)*L - s for odd m, reached through |m| wall
    // crossings. Images carry sign (-1)^crossings; without the alternating
    // sign the dense late tail piles up coherently at DC on the W channel and
    // the measured decay comes out far slower than the per-image amplitudes.
    let axis_images = |axis: usize| -> Vec<(f64, f64)> {
        let l = room.dims[axis];
        let s = src[axis];
        let m_lo = ((mic[axis] - max_dist) / l).floor() as i64 - 1;
        let m_hi = ((mic[axis] + max_dist) / l).ceil() as i64 + 1;
        (m_lo..=m_hi)
            .map(|m| {
                let pos = if m.rem_euclid(2) == 0 {
                    m as f64 * l + s
                } else {
                    (m + 1) as f64 * l - s
                };
                let sign = if m.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
                (pos - mic[axis], sign)
            })
            .collect()
    };
    let xs = axis_images(0);
    let ys = axis_images(1);
    let zs = axis_images(2);

    let sqrt3 = 3.0_f64.sqrt();
    let (w, rest) = ir.split_at_mut(1);
    let (x, rest) = rest.split_at_mut(1);
    let (y, z) = rest.split_at_mut(1);
    let (w, x, y, z) = (&mut w[0], &mut x[0], &mut y[0], &mut z[0]);
    for &(dz, sz) in &zs {
        let dz_sq = dz * dz;
        if dz_sq > max_dist_sq {
            continue;
        }
        for &(dy, sy) in &ys {
            let dyz_sq = dz_sq + dy * dy;
            if dyz_sq > max_dist_sq {
                continue;
            }
            let syz = sy * sz;
            for &(dx, sx) in &xs {
                let d_sq = dyz_sq + dx * dx;
                if d_sq > max_dist_sq {
                    continue;
                }
                let d = d_sq.sqrt().max(MIN_SOURCE_MIC_DISTANCE);
                let amp = sx * syz * (-rate * (d - d0)).exp() / d;
                let delay = d / SPEED_OF_SOUND * fs;
                let i0 = delay as usize;
                if i0 + 1 >= ir_len {
                    continue;
                }
                let frac = delay - i0 as f64;
                let w0 = amp * (1.0 - frac);
                let w1 = amp * frac;
                let ux = sqrt3 * dx / d;
                let uy = sqrt3 * dy / d;
                let uz = sqrt3 * dz / d;
                w[i0] += w0;
                w[i0 + 1] += w1;
                x[i0] += ux * w0;
                x[i0 + 1] += ux * w1;
                y[i0] += uy * w0;
                y[i0 + 1] += uy * w1;
                z[i0] += uz * w0;
                z[i0 + 1] += uz * w1;
            }
        }
    }
    Ok(FoaSrir {
        ir,
        direction,
        sample_rate,
    })
}

fn add_image(ir: &mut [Vec<f64>; 4], src: &[f64; 3], mic: &[f64; 3], amp_num: f64, fs: f64) {
    let d = dist(src, mic).max(MIN_SOURCE_MIC_DISTANCE);
    let amp = amp_num / d;
    let delay = d / SPEED_OF_SOUND * fs;
    let i0 = delay as usize;
    if i0 + 1 >= ir[0].len() {
        return;
    }
    let frac = delay - i0 as f64;
    let sqrt3 = 3.0_f64.sqrt();
    let u = [
        (src[0] - mic[0]) / d,
        (src[1] - mic[1]) / d,
        (src[2] - mic[2]) / d,
    ];
    let gains = [1.0, sqrt3 * u[0], sqrt3 * u[1], sqrt3 * u[2]];
    for (ch, &g) in gains.iter().enumerate() {
        ir[ch][i0] += g * amp * (1.0 - frac);
        ir[ch][i0 + 1] += g * amp * frac;
    }
}

/// Estimates RT60 from an impulse response by Schroeder backward integration:
/// the energy decay curve is fit between its -5 dB and -25 dB crossings and
/// extrapolated to 60 dB. Returns `None` when the response never decays far
/// enough for the fit.
pub fn schroeder_t60(ir: &[f64], sample_rate: u32) -> Option<f64> {
    if ir.is_empty() {
        return None;
    }
    let mut edc = vec![0.0; ir.len()];
    let mut acc = 0.0;
    for (i, &h) in ir.iter().enumerate().rev() {
        acc += h * h;
        edc[i] = acc;
    }
    let total = edc[0];
    if total <= 0.0 {
        return None;
    }
    let cross = |db: f64| -> Option<f64> {
        let target = total * 10f64.powf(db / 10.0);
        let i = edc.iter().position(|&e| e <= target)?;
        Some(i as f64 / sample_rate as f64)
    };
    let t5 = cross(-5.0)?;
    let t25 = cross(-25.0)?;
    if t25 <= t5 {
        return None;
    }
    // -5 dB -> -25 dB spans 20 dB; scale to the 60 dB definition.
    Some(3.0 * (t25 - t5))
}

/// Full linear convolution of `a` and `b` (output length `a.len() + b.len() - 1`)
/// computed with FFTs.
pub fn fft_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    let ifft = planner.plan_fft_inverse(n);
    let mut fa: Vec<Complex<f64>> = a
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    let mut fb: Vec<Complex<f64>> = b
        .iter()
        .map(|&v| Complex::new(v, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(n)
        .collect();
    fft.process(&mut fa);
    fft.process(&mut fb);
    for (va, vb) in fa.iter_mut().zip(&fb) {
        *va *= vb;
    }
    ifft.process(&mut fa);
    let scale = 1.0 / n as f64;
    fa[..out_len].iter().map(|c| c.re * scale).collect()
}

/// Convolves a single-channel dry signal with a 4-channel SRIR.
pub fn render_source(dry: &[f64], srir: &FoaSrir) -> [Vec<f64>; 4] {
    [
        fft_convolve(dry, &srir.ir[0]),
        fft_convolve(dry, &srir.ir[1]),
        fft_convolve(dry, &srir.ir[2]),
        fft_convolve(dry, &srir.ir[3]),
    ]
}

/// Mixing levels for [`render_mixture`]: interferer level relative to the
/// first source and, optionally, additive diffuse babble noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureSpec {
    /// Signal-to-interference ratio in dB between source 0 and each further
    /// source, measured on the W channel. Ignored for single-source scenes.
    pub sir_db: f64,
    /// Signal-to-noise ratio in dB between the speaker mixture and the babble
    /// noise, measured on the W channel. `None` disables noise.
    pub snr_db: Option<f64>,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        Self {
            sir_db: 0.0,
            snr_db: None,
        }
    }
}

fn w_power(channels: &[Vec<f64>; 4]) -> f64 {
    channels[0].iter().map(|&v| v * v).sum()
}

fn pad_to(channels: &mut [Vec<f64>; 4], len: usize) {
    for ch in channels.iter_mut() {
        ch.resize(len, 0.0);
    }
}

/// Renders a multi-speaker FOA scene: convolves each dry signal with its
/// SRIR, scales interferers to the requested SIR, sums, and optionally adds
/// diffuse babble at the requested SNR (both ratios measured on the W
/// channel; the SNR reference is the full speaker mixture). Returns the scene
/// and the per-source ground-truth directions.
///
/// Errors if the numbers of SRIRs and dry signals differ, either is empty, or
/// any dry signal carries no energy.
pub fn render_mixture(
    srirs: &[FoaSrir],
    dry: &[Vec<f64>],
    spec: &MixtureSpec,
    rng: &mut impl Rng,
) -> Result<(FoaSignal, Vec<Direction>)> {
    if srirs.is_empty() {
        return Err(Error::config("render_mixture needs at least one source"));
    }
    if srirs.len() != dry.len() {
        return Err(Error::shape(format!(
            "got {} SRIRs but {} dry signals",
            srirs.len(),
            dry.len()
        )));
    }
    let sample_rate = srirs[0].sample_rate;
    for (k, d) in dry.iter().enumerate() {
        if d.iter().map(|&v| v * v).sum::<f64>() <= 0.0 {
            return Err(Error::Audio(format!("dry signal {k} has zero power")));
        }
    }
    let mut wet: Vec<[Vec<f64>; 4]> = srirs
        .iter()
        .zip(dry)
        .map(|(srir, d)| render_source(d, srir))
        .collect();
    let len = wet.iter().map(|w| w[0].len()).max().unwrap_or(0);
    for w in &mut wet {
        pad_to(w, len);
    }
    let p_target = w_power(&wet[0]);
    if p_target <= 0.0 {
        return Err(Error::Audio("target source renders to zero power".into()));
    }
    for w in wet.iter_mut().skip(1) {
        let p = w_power(w);
        if p <= 0.0 {
            return Err(Error::Audio("interferer renders to zero power".into()));
        }
        let gain = (p_target / (p * 10f64.powf(spec.sir_db / 10.0))).sqrt();
        for ch in w.iter_mut() {
            for v in ch.iter_mut() {
                *v *= gain;
            }
        }
    }
    let mut mix: [Vec<f64>; 4] = [
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
        vec![0.0; len],
    ];
    for w in &wet {
        for (ch, src) in mix.iter_mut().zip(w.iter()) {
            for (o, &v) in ch.iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    if let Some(snr_db) = spec.snr_db {
        let noise = diffuse_babble(rng, len, sample_rate)?;
        let p_mix = w_power(&mix);
        let p_noise = w_power(&noise.channels);
        if p_noise > 0.0 {
            let gain = (p_mix / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
            for (ch, src) in mix.iter_mut().zip(noise.channels.iter()) {
                for (o, &v) in ch.iter_mut().zip(src) {
                    *o += gain * v;
                }
            }
        }
    }
    let directions = srirs.iter().map(|s| s.direction).collect();
    Ok((
        FoaSignal {
            channels: mix,
            sample_rate,
        },
        directions,
    ))
}

/// Synthesizes spatially diffuse babble noise of `n_samples` samples: the
/// late tails (after 50 ms) of SRIRs from two independent random rooms are
/// averaged and convolved with a two-voice synthetic speech mixture, so the
/// result has speech-like spectra but no dominant direction.
pub fn diffuse_babble(
    rng: &mut impl Rng,
    n_samples: usize,
    sample_rate: u32,
) -> Result<FoaSignal> {
    let cut = (LATE_TAIL_START_SECS * sample_rate as f64).round() as usize;
    let mut tails: Vec<[Vec<f64>; 4]> = Vec::with_capacity(2);
    for _ in 0..2 {
        let room = sample_room(rng, 1);
        let srir = image_source_srir(&room, 0, sample_rate)?;
        let tail: [Vec<f64>; 4] = std::array::from_fn(|ch| {
            if srir.ir[ch].len() > cut {
                srir.ir[ch][cut..].to_vec()
            } else {
                vec![0.0]
            }
        });
        tails.push(tail);
    }
    let tail_len = tails.iter().map(|t| t[0].len()).max().unwrap_or(1);
    let mut avg: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; tail_len]);
    for t in &tails {
        for (ch, src) in avg.iter_mut().zip(t.iter()) {
            for (o, &v) in ch.iter_mut().zip(src) {
                *o += 0.5 * v;
            }
        }
    }
    let voices: Vec<f64> = {
        let a = synthetic_speech(rng, n_samples, sample_rate);
        let b = synthetic_speech(rng, n_samples, sample_rate);
        a.iter().zip(&b).map(|(&x, &y)| 0.5 * (x + y)).collect()
    };
    let channels: [Vec<f64>; 4] = std::array::from_fn(|ch| {
        let mut out = fft_convolve(&voices, &avg[ch]);
        out.resize(n_samples, 0.0);
        out
    });
    Ok(FoaSignal {
        channels,
        sample_rate,
    })
}

/// Generates a vowel-like synthetic speech signal: a harmonic series with a
/// wandering fundamental, formant-shaped harmonic amplitudes, a syllabic
/// amplitude modulation, and a little breath noise. RMS-normalized to 0.1.
pub fn synthetic_speech(rng: &mut impl Rng, n_samples: usize, sample_rate: u32) -> Vec<f64> {
    if n_samples == 0 {
        return Vec::new();
    }
    let fs = sample_rate as f64;
    let dt = 1.0 / fs;
    let mut f0 = rng.random_range(100.0..220.0);
    let f0_drift = rng.random_range(-30.0..30.0);
    let syllable_rate = rng.random_range(2.0..5.0);
    let syllable_phase = rng.random_range(0.0..(2.0 * PI));
    let n_harm = 12usize;
    let formants = [
        (rng.random_range(400.0..900.0), 250.0, 2.0),
        (rng.random_range(1100.0..1800.0), 350.0, 1.2),
        (rng.random_range(2300.0..3000.0), 450.0, 0.6),
    ];
    let mut phases: Vec<f64> = (0..n_harm)
        .map(|_| rng.random_range(0.0..(2.0 * PI)))
        .collect();
    let mut out = Vec::with_capacity(n_samples);
    let mut noise_state = 0.0;
    for i in 0..n_samples {
        let t = i as f64 * dt;
        let f = (f0 + f0_drift * t).clamp(80.0, 300.0);
        let mut sample = 0.0;
        for (h, phase) in phases.iter_mut().enumerate() {
            let hf = (h + 1) as f64 * f;
            if hf > 0.45 * fs {
                break;
            }
            let mut amp = 1.0 / (h + 1) as f64;
            for &(fc, bw, g) in &formants {
                let d = (hf - fc) / bw;
                amp += g * (-d * d).exp() / (h + 1) as f64;
            }
            sample += amp * phase.sin();
            *phase += 2.0 * PI * hf * dt;
        }
        // Deep syllabic modulation: concurrent voices then rarely peak in the
        // same time-frequency cells, mirroring the sparsity of real speech.
        // The small floor keeps every excerpt strictly non-silent.
        let syl = (syllable_rate * 2.0 * PI * t + syllable_phase).sin().max(0.0);
        let env = 0.05 + 0.95 * syl * syl.sqrt();
        // A light breath-noise floor; kept small so two simultaneous voices
        // stay mostly disjoint across time-frequency cells.
        noise_state = 0.95 * noise_state + 0.05 * rng.random_range(-1.0..1.0);
        out.push(env * (sample + 0.08 * noise_state));
        f0 = f;
    }
    let rms = (out.iter().map(|&v| v * v).sum::<f64>() / n_samples as f64).sqrt();
    if rms > 0.0 {
        let g = 0.1 / rms;
        for v in &mut out {
            *v *= g;
        }
    }
    out
}

/// One manifest line describing a rendered sequence on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    /// Path of the feature tensor (.sldf), relative to the manifest.
    pub features_path: String,
    /// Path of the rendered FOA WAV, relative to the manifest.
    pub wav_path: String,
    /// Ground-truth directions of arrival, one per source.
    pub doas: Vec<Direction>,
    /// Number of simultaneous speakers.
    pub n_sources: usize,
    /// Speaker-mixture-to-noise ratio in dB; `None` means no noise was added.
    pub snr_db: Option<f64>,
    /// Source-to-interferer ratio in dB; `None` for single-source scenes.
    pub sir_db: Option<f64>,
}

/// Writes manifest records as JSON lines.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?);
        out.push('\n');
    }
    let mut f = fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}

/// Reads a JSON-lines manifest, reporting the offending line on parse errors.
pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::Manifest {
            path: path.to_path_buf(),
            detail: format!("line {}: {}", i + 1, e),
        })?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::Manifest {
            path: path.to_path_buf(),
            detail: "manifest contains no records".into(),
        });
    }
    Ok(records)
}

/// Configuration for [`build_dataset`].
#[derive(Debug, Clone)]
pub struct DatasetConfig {
    /// Number of sequences to render.
    pub n_sequences: usize,
    /// Inclusive range of simultaneous speakers per sequence.
    pub min_sources: usize,
    /// See `min_sources`.
    pub max_sources: usize,
    /// Master seed; every sequence derives its own stream from (seed, index).
    pub seed: u64,
    /// Output directory (created if missing).
    pub out_dir: PathBuf,
    /// Sample rate of the rendered audio.
    pub sample_rate: u32,
    /// STFT settings used for the stored feature tensors.
    pub stft: StftSpec,
    /// Frames per stored sequence; the rendered audio is `n_frames * hop` samples.
    pub n_frames: usize,
    /// RT60 sampling range in seconds.
    pub rt60_range: (f64, f64),
    /// SIR sampling range in dB for multi-source scenes.
    pub sir_range: (f64, f64),
    /// SNR sampling range in dB; `None` renders noiseless scenes.
    pub snr_range: Option<(f64, f64)>,
    /// Directory of 16 kHz mono WAV files to use as dry speech; when `None`,
    /// synthetic speech is generated.
    pub speech_dir: Option<PathBuf>,
}

impl DatasetConfig {
    /// A dataset configuration with the simulator defaults (16 kHz audio,
    /// 1024/512 STFT, 25-frame sequences, RT60 in [0.2, 0.8] s, SIR in
    /// [0, 10] dB, SNR in [0, 20] dB).
    pub fn new(n_sequences: usize, out_dir: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            n_sequences,
            min_sources: 1,
            max_sources: 3,
            seed,
            out_dir: out_dir.into(),
            sample_rate: DEFAULT_SAMPLE_RATE,
            stft: StftSpec::default(),
            n_frames: crate::features::DEFAULT_SEQUENCE_FRAMES,
            rt60_range: (0.2, 0.8),
            sir_range: (0.0, 10.0),
            snr_range: Some((0.0, 20.0)),
            speech_dir: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_sequences == 0 {
            return Err(Error::config("dataset needs at least one sequence"));
        }
        if self.min_sources == 0 || self.min_sources > self.max_sources {
            return Err(Error::config(format!(
                "invalid source-count range {}..={}",
                self.min_sources, self.max_sources
            )));
        }
        if self.n_frames == 0 {
            return Err(Error::config("n_frames must be positive"));
        }
        self.stft.validate()?;
        Ok(())
    }
}

fn list_speech_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .map(|x| x.eq_ignore_ascii_case("wav"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no .wav files found in {}",
            dir.display()
        )));
    }
    Ok(files)
}

fn dry_signal(
    rng: &mut impl Rng,
    speech_files: &[PathBuf],
    n_samples: usize,
    sample_rate: u32,
) -> Result<Vec<f64>> {
    if speech_files.is_empty() {
        return Ok(synthetic_speech(rng, n_samples, sample_rate));
    }
    let path = &speech_files[rng.random_range(0..speech_files.len())];
    let (mono, fs) = read_mono_wav(path)?;
    if fs != sample_rate {
        return Err(Error::Audio(format!(
            "{} is sampled at {} Hz, expected {}",
            path.display(),
            fs,
            sample_rate
        )));
    }
    if mono.iter().map(|&v| v * v).sum::<f64>() <= 0.0 {
        return Err(Error::Audio(format!("{} is silent", path.display())));
    }
    let mut out = Vec::with_capacity(n_samples);
    if mono.len() > n_samples {
        let start = rng.random_range(0..=mono.len() - n_samples);
        out.extend_from_slice(&mono[start..start + n_samples]);
    } else {
        while out.len() < n_samples {
            let take = (n_samples - out.len()).min(mono.len());
            out.extend_from_slice(&mono[..take]);
        }
    }
    Ok(out)
}

/// Renders one dataset sequence from its own (seed, index) random stream.
fn build_sequence(
    cfg: &DatasetConfig,
    speech_files: &[PathBuf],
    index: usize,
) -> Result<ManifestRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index as u64 + 1);
    let n_sources = if cfg.min_sources == cfg.max_sources {
        cfg.min_sources
    } else {
        rng.random_range(cfg.min_sources..=cfg.max_sources)
    };
    let room = sample_room_with(&mut rng, n_sources, cfg.rt60_range);
    let n_samples = cfg.n_frames * cfg.stft.hop;
    let mut srirs = Vec::with_capacity(n_sources);
    let mut dry = Vec::with_capacity(n_sources);
    for k in 0..n_sources {
        srirs.push(image_source_srir(&room, k, cfg.sample_rate)?);
        dry.push(dry_signal(&mut rng, speech_files, n_samples, cfg.sample_rate)?);
    }
    let sir_db = if n_sources > 1 {
        Some(if cfg.sir_range.0 == cfg.sir_range.1 {
            cfg.sir_range.0
        } else {
            rng.random_range(cfg.sir_range.0..=cfg.sir_range.1)
        })
    } else {
        None
    };
    let snr_db = cfg.snr_range.map(|(lo, hi)| {
        if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        }
    });
    let spec = MixtureSpec {
        sir_db: sir_db.unwrap_or(0.0),
        snr_db,
    };
    let (mut scene, doas) = render_mixture(&srirs, &dry, &spec, &mut rng)?;
    for ch in scene.channels.iter_mut() {
        ch.resize(n_samples, 0.0);
    }
    let features = extract_features(&scene, &cfg.stft)?;
    debug_assert_eq!(features.shape()[0], cfg.n_frames);

    let stem = format!("seq_{index:05}");
    let wav_name = format!("{stem}.wav");
    let feat_name = format!("{stem}.sldf");
    write_foa_wav(&cfg.out_dir.join(&wav_name), &scene)?;
    crate::features::write_sldf(&cfg.out_dir.join(&feat_name), &features)?;
    Ok(ManifestRecord {
        features_path: feat_name,
        wav_path: wav_name,
        doas,
        n_sources,
        snr_db,
        sir_db,
    })
}

/// Renders a full synthetic dataset: one FOA WAV plus one .sldf feature
/// tensor per sequence and a `manifest.jsonl` index, all under
/// `cfg.out_dir`. Sequences are generated in parallel; every sequence uses a
/// random stream derived from (seed, index), so the output is byte-identical
/// for a given seed regardless of worker count. Returns the manifest records.
pub fn build_dataset(cfg: &DatasetConfig) -> Result<Vec<ManifestRecord>> {
    cfg.validate()?;
    fs::create_dir_all(&cfg.out_dir)?;
    let speech_files = match &cfg.speech_dir {
        Some(dir) => list_speech_files(dir)?,
        None => Vec::new(),
    };
    let records: Vec<ManifestRecord> = (0..cfg.n_sequences)
        .into_par_iter()
        .map(|i| build_sequence(cfg, &speech_files, i))
        .collect::<Result<Vec<_>>>()?;
    write_manifest(&cfg.out_dir.join("manifest.jsonl"), &records)?;
    Ok(records)
}
