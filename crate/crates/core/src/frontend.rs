//! Waveform → log-Mel features, and fixed-duration segment cutting.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const SAMPLE_RATE: u32 = 16_000;
pub const N_MELS: usize = 80;
/// 25 ms analysis window.
pub const WINDOW: usize = 400;
/// 10 ms stride.
pub const HOP: usize = 160;
pub const LOG_FLOOR: f64 = 1e-10;
pub const FRAMES_PER_SECOND: usize = SAMPLE_RATE as usize / HOP;

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a mono 16-bit PCM WAVE file.
    pub fn read_wav(path: &Path) -> Result<Self> {
        let reader = hound::WavReader::open(path).map_err(|e| wav_error(path, e))?;
        let spec = reader.spec();
        if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_rate != SAMPLE_RATE {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!(
                    "expected mono 16-bit {SAMPLE_RATE} Hz, got {} ch / {} bit / {} Hz",
                    spec.channels, spec.bits_per_sample, spec.sample_rate
                ),
            });
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| wav_error(path, e))?;
        Ok(Self::new(samples))
    }

    /// Writes a mono 16-bit PCM WAVE file, clipping to [-1, 1).
    pub fn write_wav(&self, path: &Path) -> Result<()> {
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(path, spec).map_err(|e| wav_error(path, e))?;
        for s in &self.samples {
            let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
            w.write_sample(v).map_err(|e| wav_error(path, e))?;
        }
        w.finalize().map_err(|e| wav_error(path, e))
    }
}

fn wav_error(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::Format {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    }
}

/// `T × 80` log-Mel frames at a 10 ms stride.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    frames: Tensor,
}

impl LogMelSpectrogram {
    pub fn new(frames: Tensor) -> Result<Self> {
        if frames.shape().len() != 2 || frames.cols() != N_MELS {
            return Err(Error::dims("log_mel", frames.shape(), &[0, N_MELS]));
        }
        if !frames.is_finite() {
            return Err(Error::Numeric { op: "log_mel" });
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &Tensor {
        &self.frames
    }

    pub fn into_frames(self) -> Tensor {
        self.frames
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn duration_s(&self) -> f64 {
        self.num_frames() as f64 / FRAMES_PER_SECOND as f64
    }

    /// Leading `seconds` of features (frame-prefix equivalent of
    /// [`segment_fixed_duration`]).
    pub fn leading(&self, seconds: f64) -> Result<Self> {
        let n = (seconds * FRAMES_PER_SECOND as f64).round() as usize;
        if n == 0 || n > self.num_frames() {
            return Err(Error::TooShort(format!(
                "{} frames available, {n} requested",
                self.num_frames()
            )));
        }
        Ok(Self {
            frames: self.frames.slice_rows(0, n)?,
        })
    }
}

/// Frame count produced for `n` samples: `ceil(n / HOP)`.
pub fn frame_count(n: usize) -> usize {
    n.div_ceil(HOP)
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters on a Mel-spaced grid from 0 Hz to Nyquist, evaluated
/// at the FFT bin frequencies; `N_MELS × (WINDOW/2 + 1)`, unit peak height.
pub fn mel_filterbank() -> Vec<Vec<f64>> {
    let bins = WINDOW / 2 + 1;
    let nyquist = SAMPLE_RATE as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let edges: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect();
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|b| {
                    let f = b as f64 * SAMPLE_RATE as f64 / WINDOW as f64;
                    let up = (f - lo) / (mid - lo);
                    let down = (hi - f) / (hi - mid);
                    up.min(down).max(0.0)
                })
                .collect()
        })
        .collect()
}

/// Reusable log-Mel extractor holding the FFT plan and filterbank.
pub struct MelExtractor {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
}

impl Default for MelExtractor {
    fn default() -> Self {
        Self::new()
    }
}

impl MelExtractor {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(WINDOW);
        // sparse rows: each triangle touches only a handful of bins
        let filters = mel_filterbank()
            .into_iter()
            .map(|row| row.into_iter().enumerate().filter(|(_, w)| *w > 0.0).collect())
            .collect();
        Self {
            fft,
            window: hann(WINDOW),
            filters,
        }
    }

    pub fn compute(&self, w: &Waveform) -> Result<LogMelSpectrogram> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::Data(format!(
                "sample rate {} Hz, expected {SAMPLE_RATE}",
                w.sample_rate
            )));
        }
        let n = w.samples.len();
        if n < WINDOW {
            return Err(Error::TooShort(format!("{n} samples < one {WINDOW}-sample window")));
        }
        if w.samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric { op: "log_mel" });
        }
        let pad = WINDOW / 2;
        let padded = reflect_pad(&w.samples, pad);
        let frames = frame_count(n);
        let bins = WINDOW / 2 + 1;
        let mut out = Vec::with_capacity(frames * N_MELS);
        let mut buf = vec![Complex::new(0.0, 0.0); WINDOW];
        let mut power = vec![0.0; bins];
        for f in 0..frames {
            let start = f * HOP;
            for (i, c) in buf.iter_mut().enumerate() {
                *c = Complex::new(padded[start + i] * self.window[i], 0.0);
            }
            self.fft.process(&mut buf);
            for (p, c) in power.iter_mut().zip(&buf[..bins]) {
                *p = c.norm_sqr();
            }
            for filt in &self.filters {
                let e: f64 = filt.iter().map(|&(b, wt)| wt * power[b]).sum();
                out.push(e.max(LOG_FLOOR).ln());
            }
        }
        LogMelSpectrogram::new(Tensor::new(vec![frames, N_MELS], out)?)
    }
}

fn reflect_pad(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((0..pad).map(|i| x[n - 2 - i]));
    out
}

pub fn log_mel_spectrogram(w: &Waveform) -> Result<LogMelSpectrogram> {
    MelExtractor::new().compute(w)
}

/// Leading `seconds` of the waveform.
pub fn segment_fixed_duration(w: &Waveform, seconds: f64) -> Result<Waveform> {
    if seconds <= 0.0 {
        return Err(Error::Data(format!("segment duration {seconds} must be positive")));
    }
    let n = (seconds * w.sample_rate as f64).round() as usize;
    if n > w.samples.len() {
        return Err(Error::TooShort(format!(
            "{:.3} s utterance, {seconds} s requested",
            w.duration_s()
        )));
    }
    Ok(Waveform {
        samples: w.samples[..n].to_vec(),
        sample_rate: w.sample_rate,
    })
}
