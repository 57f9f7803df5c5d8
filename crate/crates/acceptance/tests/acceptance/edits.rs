use audioscope::audio_io::AudioClip;
use audioscope::edit::{change_loudness, cross_fade, fade, invert, repeat, slice};
use audioscope_acceptance::CheckResult;
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestError, TestRng, TestRunner};

const CASES: u32 = 64;
/// Gain that multiplies amplitude by exactly 2: 20·log10(2).
const DOUBLING_DB: f64 = 6.0206;

fn runner() -> TestRunner {
    TestRunner::new_with_rng(Config::with_cases(CASES), TestRng::deterministic_rng(RngAlgorithm::ChaCha))
}

fn clips() -> impl Strategy<Value = AudioClip> {
    (prop::collection::vec(-1.0f32..=1.0, 1..4000), prop::sample::select(vec![8000u32, 16000, 44100]))
        .prop_map(|(s, rate)| AudioClip::new(s, rate))
}

fn check<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| match e {
        TestError::Fail(why, value) => format!("{name}: {why} for {value:?}"),
        TestError::Abort(why) => format!("{name}: aborted: {why}"),
    })
}

pub fn suite() -> CheckResult {
    check("invert involution", clips(), |c| {
        prop_assert_eq!(invert(&invert(&c)), c);
        Ok(())
    })?;
    check("repeat doubling", clips(), |c| {
        let r = repeat(&c, 2).unwrap();
        prop_assert_eq!(r.len(), 2 * c.len());
        prop_assert_eq!(&r.samples()[c.len()..], c.samples());
        Ok(())
    })?;
    check("slice identity", clips(), |c| {
        prop_assert_eq!(slice(&c, 0.0, c.duration_ms()).unwrap(), c);
        Ok(())
    })?;
    check(
        "cross-fade flatness",
        (-1.0f32..=1.0, 100usize..2000, 100usize..2000, 0.0f64..6.0),
        |(level, la, lb, overlap_ms)| {
            let a = AudioClip::new(vec![level; la], 16000);
            let b = AudioClip::new(vec![level; lb], 16000);
            let out = cross_fade(&a, &b, overlap_ms).unwrap();
            for &s in out.samples() {
                prop_assert!((s - level).abs() <= 1e-6);
            }
            Ok(())
        },
    )?;
    check("fade endpoints", (clips(), 0.0f64..0.5), |(c, frac)| {
        let fade_ms = c.duration_ms() * frac;
        let n = (fade_ms * c.sample_rate() as f64 / 1000.0).round() as usize;
        let out = fade(&c, fade_ms).unwrap();
        if n > 0 {
            let last = c.len() - 1;
            prop_assert_eq!(out.samples()[0], 0.0);
            prop_assert!((out.samples()[last] - c.samples()[last] / n as f32).abs() <= 1e-6);
        } else {
            prop_assert_eq!(out, c);
        }
        Ok(())
    })?;
    check("loudness factor", clips(), |c| {
        let quiet = AudioClip::new(c.samples().iter().map(|s| s * 0.5).collect(), c.sample_rate());
        let half = quiet.len() / 2;
        let up = change_loudness(&quiet, DOUBLING_DB).unwrap();
        let down = change_loudness(&quiet, -DOUBLING_DB).unwrap();
        for (i, &q) in quiet.samples().iter().enumerate() {
            let (gu, gd) = if i < half { (2.0, 0.5) } else { (0.5, 2.0) };
            prop_assert!((up.samples()[i] - q * gu).abs() <= 1e-4);
            prop_assert!((down.samples()[i] - q * gd).abs() <= 1e-4);
        }
        Ok(())
    })?;
    Ok(format!(
        "6 properties x {CASES} randomized clips: invert involution, repeat doubling, slice identity, \
         cross-fade flatness, fade endpoints, loudness x2/x0.5 within 1e-4"
    ))
}
