//! Shared inputs for the benchmarks.

use audioscope::audio_io::AudioClip;

/// One second of a 440 Hz tone at 16 kHz.
pub fn tone_second() -> AudioClip {
    let samples = (0..16000)
        .map(|i| 0.5 * (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16000.0).sin())
        .collect();
    AudioClip::new(samples, 16000)
}
