use super::viridis::VIRIDIS;
use crate::dsp::Spectrogram;

/// Renders a `frames x bins` row-major grid as an 8-bit RGB PNG: time runs
/// left to right, frequency bottom (bin 0) to top. Values are min-max
/// normalized and mapped through [`VIRIDIS`]; a constant grid renders as the
/// darkest color.
pub fn heatmap_png(values: &[f32], frames: usize, bins: usize) -> Vec<u8> {
    assert!(frames > 0 && bins > 0, "heatmap needs at least one cell");
    assert_eq!(values.len(), frames * bins, "heatmap dimensions do not match data");
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi as f64 - lo as f64;
    let mut rgb = Vec::with_capacity(frames * bins * 3);
    for row in 0..bins {
        let bin = bins - 1 - row;
        for frame in 0..frames {
            let v = values[frame * bins + bin] as f64;
            let idx = if range > 0.0 {
                (((v - lo as f64) / range) * 255.0).round().clamp(0.0, 255.0) as usize
            } else {
                0
            };
            rgb.extend_from_slice(&VIRIDIS[idx]);
        }
    }
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, frames as u32, bins as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().expect("in-memory PNG header");
    writer.write_image_data(&rgb).expect("in-memory PNG data");
    writer.finish().expect("in-memory PNG trailer");
    out
}

pub fn spectrogram_to_image(spec: &Spectrogram) -> Vec<u8> {
    heatmap_png(&spec.values, spec.frames, spec.bins)
}
