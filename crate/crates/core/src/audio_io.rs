//! WAV ingest/egress and waveform canonicalization.
//!
//! Everything downstream works on [`AudioClip`]: mono `f32` samples clamped to
//! `[-1, 1]` plus a sample rate. The reader accepts the common RIFF/WAVE PCM
//! flavours (8/16/24-bit integer, 32-bit float, mono or stereo); the writer
//! always emits canonical 16-bit mono PCM with a 44-byte header.

use thiserror::Error;

/// Sample rate every model-bound clip is converted to.
pub const MODEL_SAMPLE_RATE: u32 = 16_000;

/// Length in seconds of every model-bound clip.
pub const MODEL_CLIP_SECONDS: f64 = 1.0;

const WAVE_FORMAT_PCM: u16 = 1;
const WAVE_FORMAT_IEEE_FLOAT: u16 = 3;
const WAVE_FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AudioError {
    #[error("malformed WAV: {0}")]
    MalformedWav(String),
    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),
}

/// Mono waveform with samples in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    /// Builds a clip, clamping every sample into `[-1, 1]`. NaN becomes 0.
    ///
    /// Panics if `sample_rate` is zero.
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        assert!(sample_rate > 0, "sample rate must be positive");
        let samples = samples
            .into_iter()
            .map(|s| if s.is_nan() { 0.0 } else { s.clamp(-1.0, 1.0) })
            .collect();
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn silence(len: usize, sample_rate: u32) -> Self {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f32 {
        self.samples.iter().fold(0.0f32, |m, s| m.max(s.abs()))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], AudioError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| AudioError::MalformedWav("unexpected end of file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16, AudioError> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32, AudioError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    format: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Parses a RIFF/WAVE byte stream into a mono clip at the source rate.
pub fn load_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4).map_err(|_| AudioError::MalformedWav("missing RIFF header".into()))? != b"RIFF"
    {
        return Err(AudioError::MalformedWav("missing RIFF magic".into()));
    }
    let _riff_size = r.u32()?;
    if r.take(4)? != b"WAVE" {
        return Err(AudioError::MalformedWav("missing WAVE form type".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    while r.remaining() >= 8 {
        let id = r.take(4)?;
        let size = r.u32()? as usize;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(AudioError::MalformedWav("fmt chunk shorter than 16 bytes".into()));
                }
                let body = r.take(size)?;
                let mut f = Reader { bytes: body, pos: 0 };
                let mut format = f.u16()?;
                let channels = f.u16()?;
                let sample_rate = f.u32()?;
                let _byte_rate = f.u32()?;
                let _block_align = f.u16()?;
                let bits = f.u16()?;
                if format == WAVE_FORMAT_EXTENSIBLE && size >= 40 {
                    // cbSize, valid bits, channel mask, then the sub-format GUID
                    let _cb = f.u16()?;
                    let _valid = f.u16()?;
                    let _mask = f.u32()?;
                    format = f.u16()?;
                }
                fmt = Some(FmtChunk {
                    format,
                    channels,
                    sample_rate,
                    bits,
                });
            }
            b"data" => {
                // Some writers leave the size at 0 or 0xFFFFFFFF when streaming.
                let len = size.min(r.remaining());
                data = Some(r.take(len)?);
            }
            _ => {
                let skip = size.min(r.remaining());
                r.take(skip)?;
            }
        }
        if size % 2 == 1 && r.remaining() > 0 {
            r.take(1)?;
        }
        if fmt.is_some() && data.is_some() {
            break;
        }
    }

    let fmt = fmt.ok_or_else(|| AudioError::MalformedWav("no fmt chunk".into()))?;
    let data = data.ok_or_else(|| AudioError::MalformedWav("no data chunk".into()))?;

    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{} channels",
            fmt.channels
        )));
    }
    if fmt.sample_rate == 0 {
        return Err(AudioError::MalformedWav("sample rate of zero".into()));
    }
    let decode: fn(&[u8]) -> f32 = match (fmt.format, fmt.bits) {
        (WAVE_FORMAT_PCM, 8) => |b| (b[0] as f32 - 128.0) / 128.0,
        (WAVE_FORMAT_PCM, 16) => |b| i16::from_le_bytes([b[0], b[1]]) as f32 / 32768.0,
        (WAVE_FORMAT_PCM, 24) => |b| {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f32 / 8_388_608.0
        },
        (WAVE_FORMAT_IEEE_FLOAT, 32) => |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]),
        (format, bits) => {
            return Err(AudioError::UnsupportedEncoding(format!(
                "format tag {format}, {bits} bits per sample"
            )))
        }
    };

    let width = fmt.bits as usize / 8;
    let channels = fmt.channels as usize;
    let frame = width * channels;
    let samples = data
        .chunks_exact(frame)
        .map(|f| {
            let sum: f32 = f.chunks_exact(width).map(decode).sum();
            sum / channels as f32
        })
        .collect();
    Ok(AudioClip::new(samples, fmt.sample_rate))
}

/// Encodes a clip as canonical 16-bit mono PCM (44-byte header).
///
/// Scaling is the exact inverse of the reader (x 32768, saturating at +32767),
/// so a PCM16 file survives load/write unchanged.
pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&WAVE_FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in clip.samples() {
        let q = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    out
}

/// Linear-interpolation resampling. Output length is
/// `round(len * target_rate / source_rate)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    assert!(target_rate > 0, "target rate must be positive");
    let src_rate = clip.sample_rate();
    if src_rate == target_rate || clip.is_empty() {
        return AudioClip {
            samples: clip.samples.clone(),
            sample_rate: target_rate,
        };
    }
    let src = clip.samples();
    let out_len = (src.len() as f64 * target_rate as f64 / src_rate as f64).round() as usize;
    let step = src_rate as f64 / target_rate as f64;
    let last = src.len() - 1;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let idx = pos.floor() as usize;
            if idx >= last {
                return src[last];
            }
            let frac = (pos - idx as f64) as f32;
            src[idx] + (src[idx + 1] - src[idx]) * frac
        })
        .collect();
    AudioClip::new(samples, target_rate)
}

/// Truncates or zero-pads at the end to exactly `round(seconds * rate)` samples.
pub fn fit_to_duration(clip: &AudioClip, seconds: f64) -> AudioClip {
    assert!(seconds > 0.0, "duration must be positive");
    let target = (seconds * clip.sample_rate() as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(target, 0.0);
    AudioClip {
        samples,
        sample_rate: clip.sample_rate(),
    }
}

/// Resample to the model rate and fit to the model clip length.
pub fn canonicalize(clip: &AudioClip) -> AudioClip {
    fit_to_duration(&resample(clip, MODEL_SAMPLE_RATE), MODEL_CLIP_SECONDS)
}
