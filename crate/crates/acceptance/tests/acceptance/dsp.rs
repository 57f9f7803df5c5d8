use audioscope::audio_io::AudioClip;
use audioscope::dsp::{griffin_lim, istft, stft, FrameParams};
use audioscope_acceptance::{ensure, CheckResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ROUND_TRIP_TOL: f32 = 1e-4;
const CONVERGENCE_LIMIT: f64 = 0.1;
const MONOTONE_SLACK: f64 = 1e-7;

pub fn round_trip_and_griffin_lim() -> CheckResult {
    let params = FrameParams::default();
    let mut worst = 0.0f32;
    for seed in 0..5 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clip = AudioClip::new((0..16000).map(|_| rng.random_range(-0.9..0.9)).collect(), 16000);
        let back = istft(&stft(&clip, params).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        // The first and last frame_len samples are covered by a single,
        // tapering window and are not reconstructible.
        for i in params.frame_len..back.len() - params.frame_len {
            worst = worst.max((back.samples()[i] - clip.samples()[i]).abs());
        }
    }
    ensure(worst < ROUND_TRIP_TOL, || format!("istft(stft(x)) interior error {worst:e}"))?;

    let sine = AudioClip::new(
        (0..16000)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / 16000.0).sin()) as f32)
            .collect(),
        16000,
    );
    let spec = stft(&sine, params).map_err(|e| e.to_string())?;
    let gl = griffin_lim(&spec.magnitudes(), spec.frames, params, 16000, 50).map_err(|e| e.to_string())?;
    let last = *gl.convergence.last().ok_or("no iterations recorded")?;
    ensure(gl.convergence.len() == 50, || format!("{} iterations", gl.convergence.len()))?;
    ensure(last < CONVERGENCE_LIMIT, || format!("spectral convergence {last:.4} after 50 iterations"))?;
    let rises = gl.convergence.windows(2).filter(|w| w[1] > w[0] + MONOTONE_SLACK).count();
    ensure(rises == 0, || format!("convergence rose {rises} times"))?;
    Ok(format!(
        "round-trip interior max error {worst:.1e}; 440 Hz Griffin-Lim convergence {:.4} -> {last:.4}, non-increasing",
        gl.convergence[0]
    ))
}
