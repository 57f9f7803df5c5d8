//! Short-time Fourier analysis, log-magnitude features and Griffin-Lim
//! phase recovery.
//!
//! Frames start at sample 0 and advance by `hop`; there is no centering or
//! edge padding, so a clip of `n` samples yields `1 + (n - frame_len) / hop`
//! frames. Each frame is Hann-windowed and zero-padded to `fft_size` before
//! the transform. Synthesis uses the same window with squared-window-sum
//! normalization, which makes [`istft`] the least-squares inverse of [`stft`].

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::audio_io::AudioClip;

/// Additive floor inside the logarithm of [`log_spectrogram`].
pub const LOG_EPSILON: f64 = 1e-10;

pub const DEFAULT_GRIFFIN_LIM_ITERATIONS: usize = 50;

/// Peak level Griffin-Lim output is normalized to.
pub const GRIFFIN_LIM_PEAK: f32 = 0.95;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DspError {
    #[error("clip has {len} samples but a frame needs {frame_len}")]
    ClipTooShort { len: usize, frame_len: usize },
    #[error("invalid frame parameters: {0}")]
    InvalidParams(String),
    #[error("matrix has {got} values, expected {frames}x{bins}")]
    DimensionMismatch {
        frames: usize,
        bins: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Window {
    #[default]
    Hann,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameParams {
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub window: Window,
}

impl Default for FrameParams {
    /// 25 ms frames, 10 ms hop at 16 kHz, 512-point FFT.
    fn default() -> Self {
        Self {
            frame_len: 400,
            hop: 160,
            fft_size: 512,
            window: Window::Hann,
        }
    }
}

impl FrameParams {
    pub fn new(frame_len: usize, hop: usize, fft_size: usize) -> Result<Self, DspError> {
        let p = Self {
            frame_len,
            hop,
            fft_size,
            window: Window::Hann,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), DspError> {
        if self.frame_len == 0 || self.frame_len > self.fft_size {
            return Err(DspError::InvalidParams(format!(
                "frame_len {} must be in 1..={}",
                self.frame_len, self.fft_size
            )));
        }
        if self.hop == 0 || self.hop > self.frame_len {
            return Err(DspError::InvalidParams(format!(
                "hop {} must be in 1..={}",
                self.hop, self.frame_len
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(DspError::InvalidParams(format!(
                "fft_size {} is not a power of two",
                self.fft_size
            )));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of frames produced from `len` samples (0 if shorter than a frame).
    pub fn frame_count(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            1 + (len - self.frame_len) / self.hop
        }
    }

    /// Number of samples [`istft`] produces for `frames` frames.
    pub fn signal_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            self.frame_len + (frames - 1) * self.hop
        }
    }

    pub fn window_coefficients(&self) -> Vec<f64> {
        match self.window {
            // symmetric Hann: zero at both ends
            Window::Hann if self.frame_len == 1 => vec![1.0],
            Window::Hann => {
                let denom = (self.frame_len - 1) as f64;
                (0..self.frame_len)
                    .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / denom).cos())
                    .collect()
            }
        }
    }
}

/// Complex STFT, frames x bins, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<Complex64>,
    pub params: FrameParams,
    pub sample_rate: u32,
}

impl ComplexSpectrogram {
    pub fn frame(&self, t: usize) -> &[Complex64] {
        &self.values[t * self.bins..(t + 1) * self.bins]
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.iter().map(|c| c.norm()).collect()
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            values: self.values.iter().map(|c| c * factor).collect(),
            ..self.clone()
        }
    }
}

/// Log-magnitude spectrogram, `ln(|X| + 1e-10)`, frames x bins, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub frames: usize,
    pub bins: usize,
    pub values: Vec<f32>,
    pub params: FrameParams,
    pub sample_rate: u32,
}

impl Spectrogram {
    pub fn get(&self, frame: usize, bin: usize) -> f32 {
        self.values[frame * self.bins + bin]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Cached FFT plans and window for one set of frame parameters.
///
/// Not shared between threads; build one per call site.
pub struct StftEngine {
    params: FrameParams,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl StftEngine {
    pub fn new(params: FrameParams) -> Result<Self, DspError> {
        params.validate()?;
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(params.fft_size);
        let inverse = planner.plan_fft_inverse(params.fft_size);
        let scratch_len = forward
            .get_inplace_scratch_len()
            .max(inverse.get_inplace_scratch_len());
        Ok(Self {
            params,
            window: params.window_coefficients(),
            forward,
            inverse,
            buf: vec![Complex64::default(); params.fft_size],
            scratch: vec![Complex64::default(); scratch_len],
        })
    }

    pub fn params(&self) -> FrameParams {
        self.params
    }

    pub fn stft(&mut self, samples: &[f64], sample_rate: u32) -> Result<ComplexSpectrogram, DspError> {
        let p = self.params;
        if samples.len() < p.frame_len {
            return Err(DspError::ClipTooShort {
                len: samples.len(),
                frame_len: p.frame_len,
            });
        }
        let frames = p.frame_count(samples.len());
        let bins = p.bins();
        let mut values = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            let start = t * p.hop;
            for (k, slot) in self.buf.iter_mut().enumerate() {
                *slot = if k < p.frame_len {
                    Complex64::new(samples[start + k] * self.window[k], 0.0)
                } else {
                    Complex64::default()
                };
            }
            self.forward
                .process_with_scratch(&mut self.buf, &mut self.scratch);
            values.extend_from_slice(&self.buf[..bins]);
        }
        Ok(ComplexSpectrogram {
            frames,
            bins,
            values,
            params: p,
            sample_rate,
        })
    }

    /// Weighted overlap-add inverse. Returns `frame_len + (frames-1)*hop` samples.
    pub fn istft(&mut self, spec: &ComplexSpectrogram) -> Vec<f64> {
        let p = self.params;
        let n = p.fft_size;
        let bins = spec.bins;
        let len = p.signal_len(spec.frames);
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        for t in 0..spec.frames {
            let frame = spec.frame(t);
            // Rebuild the Hermitian full spectrum; DC and Nyquist must be real.
            self.buf[0] = Complex64::new(frame[0].re, 0.0);
            for (k, &c) in frame.iter().enumerate().take(bins - 1).skip(1) {
                self.buf[k] = c;
                self.buf[n - k] = c.conj();
            }
            self.buf[bins - 1] = Complex64::new(frame[bins - 1].re, 0.0);
            self.inverse
                .process_with_scratch(&mut self.buf, &mut self.scratch);
            let start = t * p.hop;
            for k in 0..p.frame_len {
                let w = self.window[k];
                out[start + k] += self.buf[k].re / n as f64 * w;
                norm[start + k] += w * w;
            }
        }
        for (x, w) in out.iter_mut().zip(&norm) {
            // samples under a zero window carry no information
            *x = if *w > 1e-10 { *x / w } else { 0.0 };
        }
        out
    }
}

fn clip_to_f64(clip: &AudioClip) -> Vec<f64> {
    clip.samples().iter().map(|&s| s as f64).collect()
}

pub fn stft(clip: &AudioClip, params: FrameParams) -> Result<ComplexSpectrogram, DspError> {
    StftEngine::new(params)?.stft(&clip_to_f64(clip), clip.sample_rate())
}

pub fn log_spectrogram(clip: &AudioClip, params: FrameParams) -> Result<Spectrogram, DspError> {
    let spec = stft(clip, params)?;
    Ok(log_magnitude(&spec))
}

pub fn log_magnitude(spec: &ComplexSpectrogram) -> Spectrogram {
    Spectrogram {
        frames: spec.frames,
        bins: spec.bins,
        values: spec
            .values
            .iter()
            .map(|c| (c.norm() + LOG_EPSILON).ln() as f32)
            .collect(),
        params: spec.params,
        sample_rate: spec.sample_rate,
    }
}

/// Inverse STFT. Output samples are clamped into `[-1, 1]` by [`AudioClip`];
/// use [`StftEngine::istft`] for the raw signal.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioClip, DspError> {
    let samples = StftEngine::new(spec.params)?.istft(spec);
    Ok(AudioClip::new(
        samples.into_iter().map(|s| s as f32).collect(),
        spec.sample_rate,
    ))
}

/// Result of a Griffin-Lim run.
#[derive(Debug, Clone)]
pub struct GriffinLimOutput {
    /// Final estimate, peak-normalized to [`GRIFFIN_LIM_PEAK`] when nonzero.
    pub clip: AudioClip,
    /// Spectral convergence `‖|STFT(x_k)| − M‖_F / ‖M‖_F` of the raw
    /// (un-normalized) estimate after each iteration.
    pub convergence: Vec<f64>,
}

/// Griffin-Lim phase recovery from a frames x bins magnitude matrix,
/// starting from zero phase.
pub fn griffin_lim(
    magnitude: &[f64],
    frames: usize,
    params: FrameParams,
    sample_rate: u32,
    iterations: usize,
) -> Result<GriffinLimOutput, DspError> {
    let bins = params.bins();
    if magnitude.len() != frames * bins {
        return Err(DspError::DimensionMismatch {
            frames,
            bins,
            got: magnitude.len(),
        });
    }
    if iterations == 0 {
        return Err(DspError::InvalidParams("iterations must be at least 1".into()));
    }
    let mut engine = StftEngine::new(params)?;
    let target_norm = magnitude.iter().map(|m| m * m).sum::<f64>().sqrt();
    let len = params.signal_len(frames);
    if target_norm == 0.0 || frames == 0 {
        return Ok(GriffinLimOutput {
            clip: AudioClip::silence(len.max(1), sample_rate),
            convergence: vec![0.0; iterations],
        });
    }

    let mut spec = ComplexSpectrogram {
        frames,
        bins,
        values: magnitude.iter().map(|&m| Complex64::new(m, 0.0)).collect(),
        params,
        sample_rate,
    };
    let mut convergence = Vec::with_capacity(iterations);
    let mut signal = Vec::new();
    for _ in 0..iterations {
        signal = engine.istft(&spec);
        let rebuilt = engine.stft(&signal, sample_rate)?;
        let mut err = 0.0;
        for ((slot, est), &m) in spec.values.iter_mut().zip(&rebuilt.values).zip(magnitude) {
            let mag = est.norm();
            err += (mag - m) * (mag - m);
            *slot = if mag > 0.0 {
                est * (m / mag)
            } else {
                Complex64::new(m, 0.0)
            };
        }
        convergence.push(err.sqrt() / target_norm);
    }

    let peak = signal.iter().fold(0.0f64, |a, s| a.max(s.abs()));
    let gain = if peak > 0.0 {
        GRIFFIN_LIM_PEAK as f64 / peak
    } else {
        0.0
    };
    let samples = signal.iter().map(|s| (s * gain) as f32).collect();
    Ok(GriffinLimOutput {
        clip: AudioClip::new(samples, sample_rate),
        convergence,
    })
}

/// `‖|STFT(x)| − M‖_F / ‖M‖_F` for an arbitrary signal.
pub fn spectral_convergence(
    samples: &[f64],
    sample_rate: u32,
    magnitude: &[f64],
    params: FrameParams,
) -> Result<f64, DspError> {
    let spec = StftEngine::new(params)?.stft(samples, sample_rate)?;
    if spec.values.len() != magnitude.len() {
        return Err(DspError::DimensionMismatch {
            frames: spec.frames,
            bins: spec.bins,
            got: magnitude.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (c, &m) in spec.values.iter().zip(magnitude) {
        let d = c.norm() - m;
        num += d * d;
        den += m * m;
    }
    Ok(if den == 0.0 { 0.0 } else { (num / den).sqrt() })
}
