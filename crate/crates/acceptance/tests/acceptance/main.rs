//! One PASS/FAIL/BLOCKED line per acceptance criterion. Exits non-zero if any
//! criterion fails.

mod api;
mod dsp;
mod edits;
mod nn;
mod training;

use std::time::Duration;

use audioscope_acceptance::Report;

fn main() {
    // Panics inside a check are reported on its verdict line instead.
    std::panic::set_hook(Box::new(|_| {}));
    let secs = Duration::from_secs;
    let mut report = Report::default();
    let mut toy_checkpoint = None;

    report.run("gradient-correctness", secs(60), || nn::gradients().into());
    report.run("oracle-equivalence", secs(30), || nn::oracles().into());
    report.run("architecture-shape-trace", secs(30), || nn::shape_trace().into());
    report.run("dsp-round-trip", secs(30), || dsp::round_trip_and_griffin_lim().into());
    report.run("edit-operator-suite", secs(30), || edits::suite().into());
    report.run("toy-training-convergence", secs(300), || training::toy(&mut toy_checkpoint).into());
    report.run("ten-class-accuracy-proxy", secs(1800), training::ten_class_proxy);
    report.run("checkpoint-determinism", secs(300), || nn::checkpoint_determinism().into());
    report.run("api-contract", secs(120), || api::golden_requests(toy_checkpoint.as_deref()).into());

    let failures = report.failures();
    println!(
        "acceptance: {} criteria, {failures} failed, {} blocked",
        report.lines.len(),
        report.lines.iter().filter(|(_, v, _)| *v == audioscope_acceptance::Verdict::Blocked).count()
    );
    if failures > 0 {
        std::process::exit(1);
    }
}
