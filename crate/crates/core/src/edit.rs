//! Waveform manipulations used to build adversarial variants of an input:
//! slicing, cross-fading, loudness change, repetition, time reversal and
//! fading, plus left-to-right composition of them via [`apply`].
//!
//! Every operation preserves the sample rate and keeps samples in `[-1, 1]`.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::audio_io::AudioClip;

pub const DEFAULT_GAIN_DB: f64 = 6.0;
pub const DEFAULT_REPEAT_COUNT: usize = 2;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EditError {
    #[error("invalid slice range {start_ms} ms..{end_ms} ms for a {duration_ms} ms clip")]
    InvalidRange {
        start_ms: f64,
        end_ms: f64,
        duration_ms: f64,
    },
    #[error("sample rates differ ({0} Hz vs {1} Hz)")]
    RateMismatch(u32, u32),
    #[error("overlap of {overlap} samples exceeds the shorter clip ({shortest} samples)")]
    OverlapTooLong { overlap: usize, shortest: usize },
    #[error("fade of {fade} samples at each end does not fit in {len} samples")]
    FadeTooLong { fade: usize, len: usize },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("edit op {index} failed: {source}")]
    AtOp {
        index: usize,
        #[source]
        source: Box<EditError>,
    },
}

impl EditError {
    /// Index of the failing op when raised by [`apply`].
    pub fn op_index(&self) -> Option<usize> {
        match self {
            EditError::AtOp { index, .. } => Some(*index),
            _ => None,
        }
    }
}

fn ms_to_samples(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

fn check_time(name: &str, ms: f64) -> Result<(), EditError> {
    if !ms.is_finite() || ms < 0.0 {
        return Err(EditError::InvalidParam(format!(
            "{name} must be a finite non-negative number of milliseconds, got {ms}"
        )));
    }
    Ok(())
}

/// Samples in `[start_ms, end_ms)`.
pub fn slice(clip: &AudioClip, start_ms: f64, end_ms: f64) -> Result<AudioClip, EditError> {
    let duration_ms = clip.duration_ms();
    let invalid = || EditError::InvalidRange {
        start_ms,
        end_ms,
        duration_ms,
    };
    if !(start_ms.is_finite() && end_ms.is_finite()) || start_ms < 0.0 || start_ms >= end_ms {
        return Err(invalid());
    }
    let rate = clip.sample_rate();
    let start = ms_to_samples(start_ms, rate);
    let end = ms_to_samples(end_ms, rate);
    if end > clip.len() || start >= end {
        return Err(invalid());
    }
    Ok(AudioClip::new(clip.samples()[start..end].to_vec(), rate))
}

/// Overlap-add of `a`'s tail and `b`'s head with complementary linear ramps.
///
/// Within the overlap of `n` samples, position `k` weights `b` by `k / n` and
/// `a` by `1 - k / n`.
pub fn cross_fade(a: &AudioClip, b: &AudioClip, overlap_ms: f64) -> Result<AudioClip, EditError> {
    check_time("overlap_ms", overlap_ms)?;
    if a.sample_rate() != b.sample_rate() {
        return Err(EditError::RateMismatch(a.sample_rate(), b.sample_rate()));
    }
    let overlap = ms_to_samples(overlap_ms, a.sample_rate());
    let shortest = a.len().min(b.len());
    if overlap > shortest {
        return Err(EditError::OverlapTooLong { overlap, shortest });
    }
    let head = a.len() - overlap;
    let mut out = Vec::with_capacity(a.len() + b.len() - overlap);
    out.extend_from_slice(&a.samples()[..head]);
    for k in 0..overlap {
        let t = k as f32 / overlap as f32;
        out.push(a.samples()[head + k] * (1.0 - t) + b.samples()[k] * t);
    }
    out.extend_from_slice(&b.samples()[overlap..]);
    Ok(AudioClip::new(out, a.sample_rate()))
}

/// Single-clip cross-fade: the clip is split at `len / 2` and the halves are
/// cross-faded together.
pub fn cross_fade_halves(clip: &AudioClip, overlap_ms: f64) -> Result<AudioClip, EditError> {
    let mid = clip.len() / 2;
    let rate = clip.sample_rate();
    let first = AudioClip::new(clip.samples()[..mid].to_vec(), rate);
    let second = AudioClip::new(clip.samples()[mid..].to_vec(), rate);
    cross_fade(&first, &second, overlap_ms)
}

/// First `floor(len/2)` samples gain `+gain_db`, the rest `-gain_db`; clamped.
pub fn change_loudness(clip: &AudioClip, gain_db: f64) -> Result<AudioClip, EditError> {
    if !gain_db.is_finite() {
        return Err(EditError::InvalidParam(format!("gain_db must be finite, got {gain_db}")));
    }
    let up = 10f64.powf(gain_db / 20.0) as f32;
    let down = 10f64.powf(-gain_db / 20.0) as f32;
    let split = clip.len() / 2;
    let samples = clip
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &s)| s * if i < split { up } else { down })
        .collect();
    Ok(AudioClip::new(samples, clip.sample_rate()))
}

pub fn repeat(clip: &AudioClip, count: usize) -> Result<AudioClip, EditError> {
    if count == 0 {
        return Err(EditError::InvalidParam("repeat count must be at least 1".into()));
    }
    Ok(AudioClip::new(clip.samples().repeat(count), clip.sample_rate()))
}

/// Time reversal.
pub fn invert(clip: &AudioClip) -> AudioClip {
    let mut samples = clip.samples().to_vec();
    samples.reverse();
    AudioClip::new(samples, clip.sample_rate())
}

/// Linear fade-in over the first `fade_ms` and fade-out over the last.
///
/// With `n = round(fade_ms * rate / 1000)`, sample `i < n` is scaled by
/// `i / n` and sample `len - n + j` by `(n - j) / n`.
pub fn fade(clip: &AudioClip, fade_ms: f64) -> Result<AudioClip, EditError> {
    check_time("fade_ms", fade_ms)?;
    let n = ms_to_samples(fade_ms, clip.sample_rate());
    let len = clip.len();
    if 2 * n > len {
        return Err(EditError::FadeTooLong { fade: n, len });
    }
    let mut samples = clip.samples().to_vec();
    for i in 0..n {
        samples[i] *= i as f32 / n as f32;
        samples[len - n + i] *= (n - i) as f32 / n as f32;
    }
    Ok(AudioClip::new(samples, clip.sample_rate()))
}

/// One waveform edit. Canonical JSON form is
/// `{"kind": "<Kind>", "params": {...}}`.
#[derive(Debug, Clone, PartialEq)]
pub enum EditOp {
    Slice { start_ms: f64, end_ms: f64 },
    /// Applied to a single clip via [`cross_fade_halves`].
    CrossFade { overlap_ms: f64 },
    Loudness { gain_db: f64 },
    Repeat { count: usize },
    Invert,
    Fade { fade_ms: f64 },
}

impl EditOp {
    pub fn kind(&self) -> &'static str {
        match self {
            EditOp::Slice { .. } => "Slice",
            EditOp::CrossFade { .. } => "CrossFade",
            EditOp::Loudness { .. } => "Loudness",
            EditOp::Repeat { .. } => "Repeat",
            EditOp::Invert => "Invert",
            EditOp::Fade { .. } => "Fade",
        }
    }

    pub fn apply(&self, clip: &AudioClip) -> Result<AudioClip, EditError> {
        match *self {
            EditOp::Slice { start_ms, end_ms } => slice(clip, start_ms, end_ms),
            EditOp::CrossFade { overlap_ms } => cross_fade_halves(clip, overlap_ms),
            EditOp::Loudness { gain_db } => change_loudness(clip, gain_db),
            EditOp::Repeat { count } => repeat(clip, count),
            EditOp::Invert => Ok(invert(clip)),
            EditOp::Fade { fade_ms } => fade(clip, fade_ms),
        }
    }

    fn params(&self) -> Map<String, Value> {
        let mut m = Map::new();
        match *self {
            EditOp::Slice { start_ms, end_ms } => {
                m.insert("start_ms".into(), start_ms.into());
                m.insert("end_ms".into(), end_ms.into());
            }
            EditOp::CrossFade { overlap_ms } => {
                m.insert("overlap_ms".into(), overlap_ms.into());
            }
            EditOp::Loudness { gain_db } => {
                m.insert("gain_db".into(), gain_db.into());
            }
            EditOp::Repeat { count } => {
                m.insert("count".into(), count.into());
            }
            EditOp::Invert => {}
            EditOp::Fade { fade_ms } => {
                m.insert("fade_ms".into(), fade_ms.into());
            }
        }
        m
    }
}

#[derive(Serialize, Deserialize)]
struct RawEditOp {
    kind: String,
    #[serde(default)]
    params: Map<String, Value>,
}

fn number(params: &Map<String, Value>, key: &str, default: Option<f64>) -> Result<f64, String> {
    match params.get(key) {
        Some(v) => v
            .as_f64()
            .ok_or_else(|| format!("param `{key}` must be a number")),
        None => default.ok_or_else(|| format!("missing param `{key}`")),
    }
}

impl TryFrom<RawEditOp> for EditOp {
    type Error = String;

    fn try_from(raw: RawEditOp) -> Result<Self, String> {
        let p = &raw.params;
        let op = match raw.kind.as_str() {
            "Slice" => EditOp::Slice {
                start_ms: number(p, "start_ms", None)?,
                end_ms: number(p, "end_ms", None)?,
            },
            "CrossFade" => EditOp::CrossFade {
                overlap_ms: number(p, "overlap_ms", None)?,
            },
            "Loudness" => EditOp::Loudness {
                gain_db: number(p, "gain_db", Some(DEFAULT_GAIN_DB))?,
            },
            "Repeat" => {
                let count = match p.get("count") {
                    Some(v) => v
                        .as_u64()
                        .filter(|&c| c >= 1)
                        .ok_or("param `count` must be an integer >= 1")?
                        as usize,
                    None => DEFAULT_REPEAT_COUNT,
                };
                EditOp::Repeat { count }
            }
            "Invert" => EditOp::Invert,
            "Fade" => EditOp::Fade {
                fade_ms: number(p, "fade_ms", None)?,
            },
            other => return Err(format!("unknown edit kind `{other}`")),
        };
        for (name, v) in op.params() {
            if let Some(x) = v.as_f64() {
                if x < 0.0 {
                    return Err(format!("param `{name}` must be non-negative"));
                }
            }
        }
        Ok(op)
    }
}

impl Serialize for EditOp {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        RawEditOp {
            kind: self.kind().to_string(),
            params: self.params(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EditOp {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawEditOp::deserialize(d)?;
        EditOp::try_from(raw).map_err(serde::de::Error::custom)
    }
}

/// Applies `ops` left to right; the first failure is reported with its index.
pub fn apply(clip: &AudioClip, ops: &[EditOp]) -> Result<AudioClip, EditError> {
    let mut current = clip.clone();
    for (index, op) in ops.iter().enumerate() {
        current = op.apply(&current).map_err(|e| EditError::AtOp {
            index,
            source: Box::new(e),
        })?;
    }
    Ok(current)
}

/// Max-abs envelope over `points` equal-width buckets.
pub fn envelope(clip: &AudioClip, points: usize) -> Vec<f32> {
    let len = clip.len();
    if len == 0 || points == 0 {
        return vec![0.0; points];
    }
    (0..points)
        .map(|b| {
            let start = b * len / points;
            let end = ((b + 1) * len / points).max(start + 1).min(len);
            clip.samples()[start.min(len - 1)..end]
                .iter()
                .fold(0.0f32, |m, s| m.max(s.abs()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(samples: &[f32]) -> AudioClip {
        AudioClip::new(samples.to_vec(), 16000)
    }

    fn ramp(len: usize) -> AudioClip {
        AudioClip::new((0..len).map(|i| (i as f32 / len as f32) - 0.5).collect(), 16000)
    }

    #[test]
    fn slice_cases() {
        let c = ramp(16000);
        assert_eq!(slice(&c, 0.0, 1000.0).unwrap(), c);
        assert_eq!(slice(&c, 250.0, 750.0).unwrap().len(), 8000);
        assert!(matches!(
            slice(&c, 500.0, 400.0),
            Err(EditError::InvalidRange { .. })
        ));
        assert!(slice(&c, 0.0, 1001.0).is_err());
        assert!(slice(&c, -1.0, 10.0).is_err());
    }

    #[test]
    fn cross_fade_cases() {
        let a = ramp(1000);
        let b = clip(&[0.25; 500]);
        let cat = cross_fade(&a, &b, 0.0).unwrap();
        assert_eq!(cat.len(), 1500);
        assert_eq!(&cat.samples()[..1000], a.samples());

        let half = clip(&[0.5; 3200]);
        let out = cross_fade(&half, &half, 100.0).unwrap();
        assert_eq!(out.len(), 3200 * 2 - 1600);
        assert!(out.samples().iter().all(|&s| (s - 0.5).abs() < 1e-6));

        let other = AudioClip::new(vec![0.0; 10], 8000);
        assert_eq!(
            cross_fade(&a, &other, 0.0),
            Err(EditError::RateMismatch(16000, 8000))
        );
        assert!(matches!(
            cross_fade(&a, &b, 40.0),
            Err(EditError::OverlapTooLong { overlap: 640, shortest: 500 })
        ));
    }

    #[test]
    fn loudness_cases() {
        let c = clip(&[0.1, 0.2, 0.3, 0.4, 0.3]);
        assert_eq!(change_loudness(&c, 0.0).unwrap(), c);
        let out = change_loudness(&c, 6.0206).unwrap();
        let expect = [0.2, 0.4, 0.15, 0.2, 0.15];
        for (a, b) in out.samples().iter().zip(expect) {
            assert!((a - b).abs() < 1e-4);
        }
        let loud = change_loudness(&clip(&[0.8; 10]), 6.0).unwrap();
        assert!(loud.samples()[..5].iter().all(|&s| s == 1.0));
        assert!(change_loudness(&c, f64::NAN).is_err());
    }

    #[test]
    fn repeat_cases() {
        let c = ramp(16000);
        assert_eq!(repeat(&c, 1).unwrap(), c);
        let twice = repeat(&c, 2).unwrap();
        assert_eq!(twice.len(), 32000);
        assert_eq!(&twice.samples()[16000..], c.samples());
        assert_eq!(repeat(&twice, 2).unwrap(), repeat(&c, 4).unwrap());
        assert!(repeat(&c, 0).is_err());
    }

    #[test]
    fn invert_cases() {
        assert_eq!(invert(&clip(&[0.1, 0.2, 0.3])).samples(), &[0.3, 0.2, 0.1]);
        let pal = clip(&[0.1, 0.5, 0.1]);
        assert_eq!(invert(&pal), pal);
    }

    #[test]
    fn fade_matches_loop_oracle() {
        let c = AudioClip::new(vec![1.0; 16], 4000); // 1 ms = 4 samples
        let out = fade(&c, 1.0).unwrap();
        let expected = [
            0.0, 0.25, 0.5, 0.75, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.75, 0.5, 0.25,
        ];
        assert_eq!(out.samples(), &expected);
        assert_eq!(fade(&c, 0.0).unwrap(), c);
        assert!(matches!(
            fade(&c, 2.5),
            Err(EditError::FadeTooLong { fade: 10, len: 16 })
        ));
    }

    #[test]
    fn apply_composition() {
        let c = ramp(1600);
        assert_eq!(apply(&c, &[]).unwrap(), c);
        assert_eq!(apply(&c, &[EditOp::Invert, EditOp::Invert]).unwrap(), c);
        let back = apply(
            &c,
            &[
                EditOp::Repeat { count: 2 },
                EditOp::Slice {
                    start_ms: 0.0,
                    end_ms: c.duration_ms(),
                },
            ],
        )
        .unwrap();
        assert_eq!(back, c);

        let err = apply(
            &c,
            &[
                EditOp::Invert,
                EditOp::Slice {
                    start_ms: 50.0,
                    end_ms: 40.0,
                },
            ],
        )
        .unwrap_err();
        assert_eq!(err.op_index(), Some(1));
    }

    #[test]
    fn json_encoding() {
        let ops: Vec<EditOp> = serde_json::from_str(
            r#"[{"kind":"Slice","params":{"start_ms":0,"end_ms":500}},
                {"kind":"Repeat","params":{"count":3}},
                {"kind":"Repeat"},
                {"kind":"Invert","params":{}},
                {"kind":"Invert"},
                {"kind":"Loudness"},
                {"kind":"CrossFade","params":{"overlap_ms":20}},
                {"kind":"Fade","params":{"fade_ms":10.5}}]"#,
        )
        .unwrap();
        assert_eq!(ops[0], EditOp::Slice { start_ms: 0.0, end_ms: 500.0 });
        assert_eq!(ops[1], EditOp::Repeat { count: 3 });
        assert_eq!(ops[2], EditOp::Repeat { count: 2 });
        assert_eq!(ops[5], EditOp::Loudness { gain_db: 6.0 });
        let text = serde_json::to_string(&ops[7]).unwrap();
        assert_eq!(text, r#"{"kind":"Fade","params":{"fade_ms":10.5}}"#);
        let back: Vec<EditOp> = serde_json::from_str(&serde_json::to_string(&ops).unwrap()).unwrap();
        assert_eq!(back, ops);

        for bad in [
            r#"[{"kind":"Pitch"}]"#,
            r#"[{"kind":"Slice","params":{"start_ms":0}}]"#,
            r#"[{"kind":"Repeat","params":{"count":0}}]"#,
            r#"[{"kind":"Fade","params":{"fade_ms":-3}}]"#,
            r#"[{"params":{}}]"#,
        ] {
            assert!(serde_json::from_str::<Vec<EditOp>>(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn envelope_buckets() {
        let c = clip(&[0.1, -0.9, 0.2, 0.3]);
        assert_eq!(envelope(&c, 2), vec![0.9, 0.3]);
        assert_eq!(envelope(&c, 4), vec![0.1, 0.9, 0.2, 0.3]);
        assert_eq!(envelope(&ramp(16000), 1000).len(), 1000);
        // more points than samples still yields the requested count
        assert_eq!(envelope(&c, 6).len(), 6);
    }
}
