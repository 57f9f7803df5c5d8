//! Model internals for display: per-filter feature maps, resynthesis of a
//! feature map as audio, weight histograms, and two-input comparison.

mod image;
mod viridis;

use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::audio_io::{canonicalize, fit_to_duration, AudioClip, MODEL_CLIP_SECONDS};
use crate::dataset::standardize;
use crate::dsp::{
    griffin_lim, log_spectrogram, DspError, FrameParams, Spectrogram,
    DEFAULT_GRIFFIN_LIM_ITERATIONS,
};
use crate::nn::{Model, NnError, Tensor};

pub use image::{heatmap_png, spectrogram_to_image};
pub use viridis::VIRIDIS;

pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntrospectError {
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("layer {0} has no parameters")]
    NoParameters(usize),
    #[error("layer {index} out of range (model has {count})")]
    LayerOutOfRange { index: usize, count: usize },
    #[error("feature map is empty")]
    EmptyMap,
}

/// One filter's 2-D output: `rows` time steps by `cols` frequency positions,
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    /// Channel `c` of a `[C, H, W]` tensor.
    pub fn from_channel(t: &Tensor, c: usize) -> Result<Self, NnError> {
        let (channels, rows, cols) = t.dims3()?;
        if c >= channels {
            return Err(NnError::ShapeMismatch(format!(
                "channel {c} out of range for {channels} channels"
            )));
        }
        let plane = rows * cols;
        Ok(Self {
            rows,
            cols,
            values: t.data()[c * plane..(c + 1) * plane].to_vec(),
        })
    }

    pub fn from_spectrogram(spec: &Spectrogram) -> Self {
        Self {
            rows: spec.frames,
            cols: spec.bins,
            values: spec.values.clone(),
        }
    }

    pub fn to_png(&self) -> Vec<u8> {
        heatmap_png(&self.values, self.rows, self.cols)
    }

    /// Bilinear resize with aligned corners.
    pub fn resize(&self, rows: usize, cols: usize) -> Result<Self, IntrospectError> {
        if self.values.is_empty() || rows == 0 || cols == 0 {
            return Err(IntrospectError::EmptyMap);
        }
        let coord = |i: usize, out: usize, src: usize| -> (usize, usize, f64) {
            if out == 1 || src == 1 {
                return (0, 0, 0.0);
            }
            let pos = i as f64 * (src - 1) as f64 / (out - 1) as f64;
            let lo = (pos.floor() as usize).min(src - 1);
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        };
        let at = |r: usize, c: usize| self.values[r * self.cols + c] as f64;
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (r0, r1, fr) = coord(r, rows, self.rows);
            for c in 0..cols {
                let (c0, c1, fc) = coord(c, cols, self.cols);
                let top = at(r0, c0) * (1.0 - fc) + at(r0, c1) * fc;
                let bottom = at(r1, c0) * (1.0 - fc) + at(r1, c1) * fc;
                values.push((top * (1.0 - fr) + bottom * fr) as f32);
            }
        }
        Ok(Self { rows, cols, values })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    /// Conv block number, 0-based.
    pub block: usize,
    /// Index of the tapped layer within the model.
    pub layer_index: usize,
    pub maps: Vec<FeatureMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSet {
    /// Log spectrogram of the canonicalized input, before standardization.
    pub input_spectrogram: Spectrogram,
    pub layers: Vec<LayerActivations>,
    pub probs: Vec<f32>,
    pub predicted_class: usize,
    pub predicted_label: String,
}

/// Runs inference on a clip and captures the post-ReLU, pre-pool map of every
/// conv block.
pub fn activations(model: &Model, clip: &AudioClip) -> Result<ActivationSet, IntrospectError> {
    let spec = log_spectrogram(&canonicalize(clip), FrameParams::default())?;
    let input = standardize(&spec);
    let pass = model.forward(&input)?;
    let layers = pass
        .conv_block_outputs(model)
        .into_iter()
        .enumerate()
        .map(|(block, (layer_index, t))| {
            let channels = t.dims3()?.0;
            let maps = (0..channels)
                .map(|c| FeatureMap::from_channel(t, c))
                .collect::<Result<_, _>>()?;
            Ok(LayerActivations {
                block,
                layer_index,
                maps,
            })
        })
        .collect::<Result<Vec<_>, NnError>>()?;
    let predicted_class = pass.probs.argmax();
    Ok(ActivationSet {
        input_spectrogram: spec,
        layers,
        probs: pass.probs.data().to_vec(),
        predicted_class,
        predicted_label: model.class_labels()[predicted_class].clone(),
    })
}

/// Treats a feature map as a log-magnitude surrogate and resynthesizes it:
/// bilinear resize to the reference grid, min-max normalize, rescale into the
/// reference's log range, exponentiate, and run Griffin-Lim. The result is
/// fitted to the model clip length. A constant map yields silence.
pub fn feature_to_audio(
    map: &FeatureMap,
    reference: &Spectrogram,
) -> Result<AudioClip, IntrospectError> {
    let rate = reference.sample_rate;
    let resized = map.resize(reference.frames, reference.bins)?;
    let (lo, hi) = resized
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v as f64), hi.max(v as f64))
        });
    let range = hi - lo;
    if !(range > 0.0 && range.is_finite()) {
        return Ok(fit_to_duration(&AudioClip::silence(1, rate), MODEL_CLIP_SECONDS));
    }
    let (ref_lo, ref_hi) = reference.min_max();
    let (ref_lo, ref_hi) = (ref_lo as f64, ref_hi as f64);
    let magnitude: Vec<f64> = resized
        .values
        .iter()
        .map(|&v| {
            let unit = (v as f64 - lo) / range;
            (ref_lo + unit * (ref_hi - ref_lo)).exp()
        })
        .collect();
    let out = griffin_lim(
        &magnitude,
        reference.frames,
        reference.params,
        rate,
        DEFAULT_GRIFFIN_LIM_ITERATIONS,
    )?;
    Ok(fit_to_duration(&out.clip, MODEL_CLIP_SECONDS))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightHistogram {
    pub layer_index: usize,
    /// `HISTOGRAM_BINS + 1` strictly increasing edges.
    pub bin_edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Equal-width histogram over a layer's weights and biases. Bins are
/// half-open `[e_i, e_{i+1})` except the last, which is closed. A zero-width
/// range is widened by 1e-6 on each side.
pub fn weight_histogram(model: &Model, layer_index: usize) -> Result<WeightHistogram, IntrospectError> {
    let layer = model
        .layers()
        .get(layer_index)
        .ok_or(IntrospectError::LayerOutOfRange {
            index: layer_index,
            count: model.layers().len(),
        })?;
    let (Some(w), Some(b)) = (&layer.weights, &layer.bias) else {
        return Err(IntrospectError::NoParameters(layer_index));
    };
    let values: Vec<f64> = w.data().iter().chain(b.data()).map(|&v| v as f64).collect();
    let (bin_edges, counts) = histogram(&values, HISTOGRAM_BINS);
    Ok(WeightHistogram {
        layer_index,
        bin_edges,
        counts,
    })
}

fn histogram(values: &[f64], bins: usize) -> (Vec<f64>, Vec<u64>) {
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi <= lo {
        lo -= 1e-6;
        hi += 1e-6;
    }
    let width = (hi - lo) / bins as f64;
    let mut edges: Vec<f64> = (0..bins).map(|i| lo + i as f64 * width).collect();
    edges.push(hi);
    let mut counts = vec![0u64; bins];
    for &v in values {
        // Estimate, then settle against the edges themselves so membership
        // is exactly what the edges say.
        let mut i = (((v - lo) / width).floor() as usize).min(bins - 1);
        while i > 0 && v < edges[i] {
            i -= 1;
        }
        while i + 1 < bins && v >= edges[i + 1] {
            i += 1;
        }
        counts[i] += 1;
    }
    (edges, counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub a: ActivationSet,
    pub b: ActivationSet,
    /// `filter_distances[block][filter]`: L2 distance between the two maps.
    pub filter_distances: Vec<Vec<f64>>,
    /// L1 distance between the probability vectors.
    pub probs_l1: f64,
}

pub fn compare(
    model: &Model,
    clip_a: &AudioClip,
    clip_b: &AudioClip,
) -> Result<ComparisonReport, IntrospectError> {
    let a = activations(model, clip_a)?;
    let b = activations(model, clip_b)?;
    Ok(compare_sets(a, b))
}

pub fn compare_sets(a: ActivationSet, b: ActivationSet) -> ComparisonReport {
    let filter_distances = a
        .layers
        .iter()
        .zip(&b.layers)
        .map(|(la, lb)| {
            la.maps
                .iter()
                .zip(&lb.maps)
                .map(|(ma, mb)| {
                    ma.values
                        .iter()
                        .zip(&mb.values)
                        .map(|(&x, &y)| (x as f64 - y as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let probs_l1 = a
        .probs
        .iter()
        .zip(&b.probs)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum();
    ComparisonReport {
        a,
        b,
        filter_distances,
        probs_l1,
    }
}

/// Rounds to 6 significant digits for JSON output.
pub fn sig6(v: f64) -> Value {
    if !v.is_finite() {
        return Value::Null;
    }
    let rounded: f64 = format!("{v:.5e}").parse().expect("formatted float parses");
    json!(rounded)
}

fn sig6_vec(values: &[f32]) -> Value {
    Value::Array(values.iter().map(|&v| sig6(v as f64)).collect())
}

fn grid_json(values: &[f32], rows: usize, cols: usize) -> Value {
    Value::Array(
        (0..rows)
            .map(|r| sig6_vec(&values[r * cols..(r + 1) * cols]))
            .collect(),
    )
}

impl ActivationSet {
    /// Canonical JSON: maps as nested arrays, floats to 6 significant digits.
    pub fn to_json(&self) -> Value {
        let spec = &self.input_spectrogram;
        json!({
            "input_spectrogram": {
                "frames": spec.frames,
                "bins": spec.bins,
                "values": grid_json(&spec.values, spec.frames, spec.bins),
            },
            "layers": self.layers.iter().map(|l| json!({
                "block": l.block,
                "layer_index": l.layer_index,
                "filters": l.maps.iter().map(|m| json!({
                    "rows": m.rows,
                    "cols": m.cols,
                    "values": grid_json(&m.values, m.rows, m.cols),
                })).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
            "probs": sig6_vec(&self.probs),
            "predicted_class": self.predicted_class,
            "predicted_label": self.predicted_label,
        })
    }
}

impl ComparisonReport {
    pub fn distances_json(&self) -> Value {
        json!({
            "filter_distances": self.filter_distances.iter()
                .map(|row| row.iter().map(|&d| sig6(d)).collect::<Vec<_>>())
                .collect::<Vec<_>>(),
            "probs_l1": sig6(self.probs_l1),
        })
    }

    pub fn to_json(&self) -> Value {
        let mut v = self.distances_json();
        v["a"] = self.a.to_json();
        v["b"] = self.b.to_json();
        v
    }
}
