//! Dataset discovery, deterministic train/validation split, and the feature
//! front end shared by training and inference.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::audio_io::{canonicalize, load_wav, write_wav, AudioClip, AudioError, MODEL_SAMPLE_RATE};
use crate::dsp::{log_spectrogram, DspError, FrameParams, Spectrogram};
use crate::nn::{Tensor, DIGIT_LABELS};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset not found: {0}")]
    DatasetNotFound(String),
    #[error("class directory {0:?} contains no .wav files")]
    EmptyClass(String),
    #[error("{path}: {source}")]
    Audio {
        path: PathBuf,
        #[source]
        source: AudioError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Dsp(#[from] DspError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Split {
    Train,
    Val,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub clip_path: PathBuf,
    /// `<class>/<file>` with forward slashes; the split hash is taken over this.
    pub relative_path: String,
    pub label: String,
    /// Index into [`DIGIT_LABELS`].
    pub class: usize,
    pub split: Split,
}

/// 64-bit FNV-1a.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Val iff `stable_hash(relative_path) mod 100 < round(100 * val_fraction)`.
pub fn split_for(relative_path: &str, val_fraction: f64) -> Split {
    let threshold = (100.0 * val_fraction).round() as u64;
    if stable_hash(relative_path.as_bytes()) % 100 < threshold {
        Split::Val
    } else {
        Split::Train
    }
}

fn is_wav(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

/// Lists `<root>/<digit>/*.wav` for every digit class directory present.
/// Other directories are ignored. Output is sorted by relative path.
pub fn scan_dataset(root: &Path, val_fraction: f64) -> Result<Vec<LabeledExample>, DataError> {
    if !root.is_dir() {
        return Err(DataError::DatasetNotFound(format!(
            "{} is not a directory",
            root.display()
        )));
    }
    let mut examples = Vec::new();
    let mut any_class = false;
    for (class, label) in DIGIT_LABELS.iter().enumerate() {
        let dir = root.join(label);
        if !dir.is_dir() {
            continue;
        }
        any_class = true;
        let entries = fs::read_dir(&dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut found = 0;
        for entry in entries {
            let entry = entry.map_err(|source| DataError::Io {
                path: dir.clone(),
                source,
            })?;
            let path = entry.path();
            if !is_wav(&path) {
                continue;
            }
            let relative_path = format!("{label}/{}", entry.file_name().to_string_lossy());
            examples.push(LabeledExample {
                split: split_for(&relative_path, val_fraction),
                clip_path: path,
                relative_path,
                label: label.to_string(),
                class,
            });
            found += 1;
        }
        if found == 0 {
            return Err(DataError::EmptyClass(label.to_string()));
        }
    }
    if !any_class {
        return Err(DataError::DatasetNotFound(format!(
            "{} has no digit class directories",
            root.display()
        )));
    }
    examples.sort_by(|a, b| a.relative_path.cmp(&b.relative_path));
    Ok(examples)
}

/// Canonicalize, take the default log spectrogram, and standardize. Shape
/// `[1, 98, 257]` for the default frame parameters.
pub fn featurize_clip(clip: &AudioClip) -> Result<Tensor, DataError> {
    let spec = log_spectrogram(&canonicalize(clip), FrameParams::default())?;
    Ok(standardize(&spec))
}

/// `[1, frames, bins]` tensor with zero mean and unit variance; the
/// denominator is `std + 1e-6`, so a constant spectrogram maps to all zeros.
pub fn standardize(spec: &Spectrogram) -> Tensor {
    let n = spec.values.len() as f64;
    let mean = spec.values.iter().map(|&v| v as f64).sum::<f64>() / n;
    let var = spec
        .values
        .iter()
        .map(|&v| (v as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    let denom = var.sqrt() + 1e-6;
    let data = spec
        .values
        .iter()
        .map(|&v| ((v as f64 - mean) / denom) as f32)
        .collect();
    Tensor::new(vec![1, spec.frames, spec.bins], data).expect("spectrogram is non-empty")
}

pub fn load_clip(path: &Path) -> Result<AudioClip, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    load_wav(&bytes).map_err(|source| DataError::Audio {
        path: path.to_path_buf(),
        source,
    })
}

pub fn featurize(example: &LabeledExample) -> Result<(Tensor, usize), DataError> {
    let clip = load_clip(&example.clip_path)?;
    Ok((featurize_clip(&clip)?, example.class))
}

/// Frequencies of the synthetic two-class tone set, labelled "zero" and "one".
pub const TONE_FREQUENCIES: [(f64, &str); 2] = [(440.0, "zero"), (880.0, "one")];

/// One second of a sine with random phase and amplitude plus faint noise.
pub fn tone_clip(freq: f64, rng: &mut impl Rng) -> AudioClip {
    let amp = rng.random_range(0.3..0.9);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let rate = MODEL_SAMPLE_RATE as f64;
    let samples = (0..MODEL_SAMPLE_RATE as usize)
        .map(|i| {
            let t = i as f64 / rate;
            let noise = rng.random_range(-0.01..0.01);
            (amp * (std::f64::consts::TAU * freq * t + phase).sin() + noise) as f32
        })
        .collect();
    AudioClip::new(samples, MODEL_SAMPLE_RATE)
}

/// Writes `<root>/zero/tone_NNN.wav` (440 Hz) and `<root>/one/tone_NNN.wav`
/// (880 Hz), `per_class` clips each.
pub fn write_tone_dataset(root: &Path, per_class: usize, seed: u64) -> Result<(), DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (freq, label) in TONE_FREQUENCIES {
        let dir = root.join(label);
        fs::create_dir_all(&dir).map_err(|source| DataError::Io {
            path: dir.clone(),
            source,
        })?;
        for i in 0..per_class {
            let path = dir.join(format!("tone_{i:03}.wav"));
            fs::write(&path, write_wav(&tone_clip(freq, &mut rng)))
                .map_err(|source| DataError::Io { path, source })?;
        }
    }
    Ok(())
}
