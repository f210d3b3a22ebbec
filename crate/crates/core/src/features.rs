//! STFT front end and the 7-plane input feature tensor.
//!
//! Fixed at the 24 kHz operating point: 480-sample (20 ms) Hann window,
//! 240-sample (10 ms) hop, zero-padded to a 512-point FFT, so each frame has
//! 257 one-sided bins. Planes 0..=3 are amplitude spectrograms of the ACN
//! channels `[W, Y, Z, X]`; planes 4..=6 are the inter-channel phase
//! differences of Y, Z, X against W, wrapped to [-pi, pi]. No log or mel
//! compression anywhere.

use std::fs;
use std::path::Path;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::geometry::{FoaClip, CH_W, FOA_CHANNELS};

/// Operating sample rate. Features are undefined at other rates.
pub const SAMPLE_RATE: u32 = 24_000;
/// Analysis window length in samples (20 ms).
pub const WINDOW: usize = 480;
/// Hop between frames in samples (10 ms).
pub const HOP: usize = 240;
/// FFT size; frames are zero-padded from `WINDOW` to this.
pub const NFFT: usize = 512;
/// One-sided bin count.
pub const BINS: usize = NFFT / 2 + 1;
/// Feature planes: 4 amplitudes + 3 IPDs.
pub const PLANES: usize = 7;
/// The first `AMPLITUDE_PLANES` planes are magnitudes; the rest are phases.
pub const AMPLITUDE_PLANES: usize = 4;
/// Default ratio of STFT frames to network label frames.
pub const TEMPORAL_POOL: usize = 8;
/// Hop between scene label frames in seconds (100 ms grid).
pub const LABEL_HOP_S: f64 = 0.1;
/// The feature hop in milliseconds, stored in feature dump headers.
pub const HOP_MS: u32 = 10;

/// Number of STFT frames for a clip of `samples` samples.
pub fn stft_frame_count(samples: usize) -> Result<usize> {
    if samples < WINDOW {
        return Err(Error::ClipTooShort {
            got: samples,
            need: WINDOW,
        });
    }
    Ok((samples - WINDOW) / HOP + 1)
}

/// Network label frames produced from `stft_frames` input frames.
pub fn frames_to_label_frames(stft_frames: usize, temporal_pool: usize) -> usize {
    stft_frames / temporal_pool
}

/// Periodic Hann window of length `WINDOW`.
fn hann() -> Vec<f64> {
    (0..WINDOW)
        .map(|n| 0.5 - 0.5 * (std::f64::consts::TAU * n as f64 / WINDOW as f64).cos())
        .collect()
}

/// One-sided complex spectrogram for each channel of a clip.
pub struct Stft {
    data: Vec<Complex64>,
    channels: usize,
    frames: usize,
}

impl Stft {
    #[inline]
    pub fn at(&self, ch: usize, f: usize, t: usize) -> Complex64 {
        self.data[(ch * BINS + f) * self.frames + t]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

/// Short-time Fourier transform of all channels.
pub fn stft(clip: &FoaClip) -> Result<Stft> {
    if clip.sample_rate() != SAMPLE_RATE {
        return Err(Error::InvalidConfig(format!(
            "features are defined at {SAMPLE_RATE} Hz, clip is {} Hz",
            clip.sample_rate()
        )));
    }
    let frames = stft_frame_count(clip.len())?;
    let window = hann();
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(NFFT);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut buf = vec![Complex64::default(); NFFT];
    let mut data = vec![Complex64::default(); FOA_CHANNELS * BINS * frames];
    for ch in 0..FOA_CHANNELS {
        let samples = clip.channel(ch);
        for t in 0..frames {
            let start = t * HOP;
            for n in 0..WINDOW {
                buf[n] = Complex64::new(samples[start + n] * window[n], 0.0);
            }
            for b in buf.iter_mut().skip(WINDOW) {
                *b = Complex64::default();
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for f in 0..BINS {
                data[(ch * BINS + f) * frames + t] = buf[f];
            }
        }
    }
    Ok(Stft {
        data,
        channels: FOA_CHANNELS,
        frames,
    })
}

/// Dense `planes x bins x frames` feature tensor, plane-major, f64.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    data: Vec<f64>,
    planes: usize,
    bins: usize,
    frames: usize,
}

impl FeatureTensor {
    pub fn zeros(planes: usize, bins: usize, frames: usize) -> FeatureTensor {
        FeatureTensor {
            data: vec![0.0; planes * bins * frames],
            planes,
            bins,
            frames,
        }
    }

    #[inline]
    pub fn idx(&self, m: usize, f: usize, t: usize) -> usize {
        (m * self.bins + f) * self.frames + t
    }

    #[inline]
    pub fn at(&self, m: usize, f: usize, t: usize) -> f64 {
        self.data[self.idx(m, f, t)]
    }

    #[inline]
    pub fn set(&mut self, m: usize, f: usize, t: usize, v: f64) {
        let i = self.idx(m, f, t);
        self.data[i] = v;
    }

    pub fn planes(&self) -> usize {
        self.planes
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Copy of frames `[start, start + len)`.
    pub fn slice_frames(&self, start: usize, len: usize) -> Result<FeatureTensor> {
        if start + len > self.frames {
            return Err(Error::Shape(format!(
                "frame slice {start}..{} out of {} frames",
                start + len,
                self.frames
            )));
        }
        let mut out = FeatureTensor::zeros(self.planes, self.bins, len);
        for m in 0..self.planes {
            for f in 0..self.bins {
                let src = self.idx(m, f, start);
                let dst = out.idx(m, f, 0);
                out.data[dst..dst + len].copy_from_slice(&self.data[src..src + len]);
            }
        }
        Ok(out)
    }
}

/// Amplitude + IPD features of a 4-channel clip.
///
/// IPD is computed as `arg(S_ch * conj(S_W))`, which wraps the phase
/// difference in one step; bins where either magnitude is exactly zero are
/// defined as 0.
pub fn extract_features(clip: &FoaClip) -> Result<FeatureTensor> {
    let spec = stft(clip)?;
    let frames = spec.frames();
    let mut out = FeatureTensor::zeros(PLANES, BINS, frames);
    for ch in 0..FOA_CHANNELS {
        for f in 0..BINS {
            for t in 0..frames {
                out.set(ch, f, t, spec.at(ch, f, t).norm());
            }
        }
    }
    // IPD planes for Y, Z, X (ACN channels 1..=3) against W.
    for (plane, ch) in (4..PLANES).zip(1..FOA_CHANNELS) {
        for f in 0..BINS {
            for t in 0..frames {
                let p = spec.at(ch, f, t) * spec.at(CH_W, f, t).conj();
                let ipd = if p.re == 0.0 && p.im == 0.0 {
                    0.0
                } else {
                    p.im.atan2(p.re)
                };
                out.set(plane, f, t, ipd);
            }
        }
    }
    Ok(out)
}

/// Write a tensor as a flat little-endian binary dump: a 16-byte header of
/// `planes, bins, frames, hop_ms` as u32, then f32 data in storage order.
pub fn write_feature_dump(path: &Path, tensor: &FeatureTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + tensor.data.len() * 4);
    for v in [
        tensor.planes as u32,
        tensor.bins as u32,
        tensor.frames as u32,
        HOP_MS,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for &v in &tensor.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, &buf).map_err(|e| Error::io(path, e))
}

/// Read a feature dump written by [`write_feature_dump`].
pub fn read_feature_dump(path: &Path) -> Result<FeatureTensor> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    if buf.len() < 16 {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: "shorter than the 16-byte header".into(),
        });
    }
    let word = |i: usize| u32::from_le_bytes(buf[i * 4..i * 4 + 4].try_into().unwrap()) as usize;
    let (planes, bins, frames, hop_ms) = (word(0), word(1), word(2), word(3));
    if hop_ms != HOP_MS as usize {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!("unsupported hop {hop_ms} ms"),
        });
    }
    let n = planes * bins * frames;
    if buf.len() != 16 + n * 4 {
        return Err(Error::Format {
            path: path.display().to_string(),
            msg: format!("expected {} data bytes, found {}", n * 4, buf.len() - 16),
        });
    }
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let off = 16 + i * 4;
        data.push(f32::from_le_bytes(buf[off..off + 4].try_into().unwrap()) as f64);
    }
    Ok(FeatureTensor {
        data,
        planes,
        bins,
        frames,
    })
}
