use std::collections::BTreeMap;
use std::path::PathBuf;

use audioscope::dataset::{scan_dataset, write_tone_dataset, Split};
use audioscope::nn::save_checkpoint;
use audioscope::train::{featurize_all, train, train_samples, TrainConfig};
use audioscope_acceptance::{ensure, CheckResult, Outcome};

pub const DATASET_ENV: &str = "SPEECH_COMMANDS_DIR";
const TOY_CLIPS_PER_CLASS: usize = 50;
const TOY_EPOCHS: usize = 5;
const TOY_TARGET: f64 = 0.95;
const PROXY_CLIPS_PER_CLASS: usize = 200;
const PROXY_EPOCHS: usize = 10;
const PROXY_TARGET: f64 = 0.60;

/// Trains on the two-tone set; on success also returns the checkpoint bytes.
pub fn toy(checkpoint: &mut Option<Vec<u8>>) -> CheckResult {
    let data = tempfile::tempdir().map_err(|e| e.to_string())?;
    write_tone_dataset(data.path(), TOY_CLIPS_PER_CLASS, 7).map_err(|e| e.to_string())?;
    let mut config = TrainConfig::new(data.path());
    config.epochs = TOY_EPOCHS;
    let (model, report) = train(&config).map_err(|e| e.to_string())?;
    *checkpoint = Some(save_checkpoint(&model));
    let last = *report.val_accuracy.last().ok_or("no epochs ran")?;
    let curve = report
        .val_accuracy
        .iter()
        .map(|a| format!("{a:.3}"))
        .collect::<Vec<_>>()
        .join(" ");
    ensure(last >= TOY_TARGET, || format!("val accuracy after {TOY_EPOCHS} epochs {last:.3} [{curve}]"))?;
    Ok(format!(
        "{} train / {} val clips, val accuracy per epoch [{curve}] (>= {TOY_TARGET})",
        report.train_examples, report.val_examples
    ))
}

pub fn ten_class_proxy() -> Outcome {
    let Some(root) = std::env::var_os(DATASET_ENV).map(PathBuf::from) else {
        return Outcome::Blocked(format!(
            "dataset unavailable; set {DATASET_ENV} to a Speech Commands tree to run \
             ({PROXY_CLIPS_PER_CLASS} clips/class, {PROXY_EPOCHS} epochs, target >= {PROXY_TARGET})"
        ));
    };
    proxy_run(root).into()
}

fn proxy_run(root: PathBuf) -> CheckResult {
    let examples = scan_dataset(&root, 0.2).map_err(|e| e.to_string())?;
    let mut by_class: BTreeMap<usize, Vec<_>> = BTreeMap::new();
    for e in examples {
        by_class.entry(e.class).or_default().push(e);
    }
    ensure(by_class.len() == 10, || format!("found {} digit classes, need 10", by_class.len()))?;
    let subset: Vec<_> = by_class
        .into_values()
        .flat_map(|v| v.into_iter().take(PROXY_CLIPS_PER_CLASS))
        .collect();
    let (train_ex, val_ex): (Vec<_>, Vec<_>) = subset.into_iter().partition(|e| e.split == Split::Train);
    let (train_set, mut skipped) = featurize_all(&train_ex);
    let (val_set, more) = featurize_all(&val_ex);
    skipped.extend(more);
    let mut config = TrainConfig::new(&root);
    config.epochs = PROXY_EPOCHS;
    let (_, report) = train_samples(&config, &train_set, &val_set, skipped).map_err(|e| e.to_string())?;
    let last = *report.val_accuracy.last().ok_or("no epochs ran")?;
    ensure(last >= PROXY_TARGET, || format!("val accuracy {last:.3} after {PROXY_EPOCHS} epochs"))?;
    Ok(format!(
        "{} train / {} val clips, final val accuracy {last:.3} (>= {PROXY_TARGET})",
        report.train_examples, report.val_examples
    ))
}
