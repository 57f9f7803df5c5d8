use std::fmt::Display;
use std::fs;
use std::io::Write;
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use audioscope::audio_io::{load_wav, write_wav, AudioClip};
use audioscope::dataset::{scan_dataset, Split};
use audioscope::edit::{self, EditError, EditOp};
use audioscope::introspect::{activations, feature_to_audio, weight_histogram};
use audioscope::nn::{load_checkpoint, save_checkpoint, Model};
use audioscope::train::{evaluate, train, TrainConfig, TrainError};
use audioscope_server::AppState;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Debug, Parser)]
#[command(name = "audioscope", version, about = "Train, inspect and serve a spoken-digit CNN")]
struct Cli {
    /// Seed for every random choice (initialization, shuffling, dropout).
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train on a `<dir>/<digit>/*.wav` tree and write the best checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 32)]
        batch: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f32,
        #[arg(long = "val-frac", default_value_t = 0.2)]
        val_frac: f64,
        /// Run report path; defaults to `<out>` with a `.report.json` extension.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Accuracy and confusion matrix of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value_t = SplitArg::All)]
        split: SplitArg,
        #[arg(long = "val-frac", default_value_t = 0.2)]
        val_frac: f64,
    },
    /// Export activations, resynthesized filter audio, histograms and the
    /// prediction for one clip.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply a JSON list of edit ops to a WAV file.
    Edit {
        #[arg(long)]
        wav: PathBuf,
        /// Inline JSON array, or a path to a file holding one.
        #[arg(long)]
        ops: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the HTTP API (and the web UI when --static-dir is given).
    Serve {
        #[arg(long, env = "AUDIOSCOPE_CHECKPOINT")]
        checkpoint: Option<PathBuf>,
        #[arg(long, env = "AUDIOSCOPE_PORT", default_value_t = 8722)]
        port: u16,
        #[arg(long, env = "AUDIOSCOPE_HOST", default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        host: IpAddr,
        #[arg(long = "static-dir", env = "AUDIOSCOPE_STATIC_DIR")]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    All,
    Train,
    Val,
}

/// Exit code plus message; 1 for runtime/data failures, 2 for usage.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Display) -> Self {
        Self { code: 2, message: message.to_string() }
    }

    fn runtime(message: impl Display) -> Self {
        Self { code: 1, message: message.to_string() }
    }
}

type CmdResult = Result<(), Failure>;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("AUDIOSCOPE_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Train { data, out, epochs, batch, lr, val_frac, report } => {
            let mut config = TrainConfig::new(data);
            config.epochs = epochs;
            config.batch_size = batch;
            config.learning_rate = lr;
            config.val_fraction = val_frac;
            config.seed = cli.seed;
            config.checkpoint_path = Some(out.clone());
            let report = report.unwrap_or_else(|| out.with_extension("report.json"));
            cmd_train(config, &out, &report)
        }
        Command::Eval { data, checkpoint, split, val_frac } => cmd_eval(&data, &checkpoint, split, val_frac),
        Command::Inspect { checkpoint, wav, out } => cmd_inspect(&checkpoint, &wav, &out),
        Command::Edit { wav, ops, out } => cmd_edit(&wav, &ops, &out),
        Command::Serve { checkpoint, port, host, static_dir } => {
            cmd_serve(checkpoint.as_deref(), SocketAddr::new(host, port), static_dir)
        }
    }
}

fn print_json(value: &Value) -> CmdResult {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value).map_err(Failure::runtime)?;
    writeln!(out).and_then(|_| out.flush()).map_err(Failure::runtime)
}

fn write_file(path: &Path, bytes: &[u8]) -> CmdResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, bytes).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn read_checkpoint(path: &Path) -> Result<Model, Failure> {
    let bytes = fs::read(path)
        .map_err(|e| Failure::runtime(format!("cannot read checkpoint {}: {e}", path.display())))?;
    load_checkpoint(&bytes)
        .map_err(|e| Failure::runtime(format!("invalid checkpoint {}: {e}", path.display())))
}

fn read_wav(path: &Path) -> Result<AudioClip, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))?;
    load_wav(&bytes).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn cmd_train(config: TrainConfig, out: &Path, report_path: &Path) -> CmdResult {
    config.validate().map_err(Failure::usage)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Failure::runtime(format!("{}: {e}", parent.display())))?;
    }
    let (model, report) = train(&config).map_err(|e| match e {
        TrainError::Config(_) => Failure::usage(e),
        other => Failure::runtime(other),
    })?;
    write_file(out, &save_checkpoint(&model))?;
    let mut body = json!(report);
    body["checkpoint"] = json!(out);
    body["config"] = json!(config);
    write_file(
        report_path,
        serde_json::to_string_pretty(&body).map_err(Failure::runtime)?.as_bytes(),
    )?;
    tracing::info!(
        best_epoch = report.best_epoch,
        best_val_accuracy = report.best_val_accuracy,
        "training finished"
    );
    print_json(&body)
}

fn cmd_eval(data: &Path, checkpoint: &Path, split: SplitArg, val_frac: f64) -> CmdResult {
    if !(val_frac > 0.0 && val_frac < 1.0) {
        return Err(Failure::usage(format!("--val-frac must be in (0, 1), got {val_frac}")));
    }
    let model = read_checkpoint(checkpoint)?;
    let examples: Vec<_> = scan_dataset(data, val_frac)
        .map_err(Failure::runtime)?
        .into_iter()
        .filter(|e| match split {
            SplitArg::All => true,
            SplitArg::Train => e.split == Split::Train,
            SplitArg::Val => e.split == Split::Val,
        })
        .collect();
    let eval = evaluate(&model, &examples).map_err(Failure::runtime)?;
    let class_counts: Vec<u64> = eval.confusion.iter().map(|row| row.iter().sum()).collect();
    print_json(&json!({
        "split": format!("{split:?}").to_lowercase(),
        "examples": examples.len(),
        "accuracy": eval.accuracy,
        "class_labels": model.class_labels(),
        "class_counts": class_counts,
        "confusion": eval.confusion,
    }))
}

fn cmd_inspect(checkpoint: &Path, wav: &Path, out: &Path) -> CmdResult {
    let model = read_checkpoint(checkpoint)?;
    let clip = read_wav(wav)?;
    let set = activations(&model, &clip).map_err(Failure::runtime)?;
    let mut files = 0usize;
    for layer in &set.layers {
        let dir = out.join(format!("layer_{}", layer.block));
        for (f, map) in layer.maps.iter().enumerate() {
            write_file(&dir.join(format!("filter_{f:02}.png")), &map.to_png())?;
            let audio = feature_to_audio(map, &set.input_spectrogram).map_err(Failure::runtime)?;
            write_file(&dir.join(format!("filter_{f:02}.wav")), &write_wav(&audio))?;
            files += 2;
        }
    }
    for (index, layer) in model.layers().iter().enumerate() {
        if !layer.spec.has_parameters() {
            continue;
        }
        let h = weight_histogram(&model, index).map_err(Failure::runtime)?;
        let mut csv = String::from("bin_start,bin_end,count\n");
        for (i, count) in h.counts.iter().enumerate() {
            csv.push_str(&format!("{},{},{count}\n", h.bin_edges[i], h.bin_edges[i + 1]));
        }
        write_file(&out.join(format!("histograms/layer_{index:02}.csv")), csv.as_bytes())?;
        files += 1;
    }
    let prediction = json!({
        "wav": wav,
        "label": set.predicted_label,
        "predicted_class": set.predicted_class,
        "class_labels": model.class_labels(),
        "probs": set.probs,
    });
    let text = serde_json::to_string_pretty(&prediction).map_err(Failure::runtime)?;
    write_file(&out.join("prediction.json"), text.as_bytes())?;
    files += 1;
    let mut summary = prediction;
    summary["out"] = json!(out);
    summary["files_written"] = json!(files);
    print_json(&summary)
}

fn parse_ops(arg: &str) -> Result<Vec<EditOp>, Failure> {
    let text = if arg.trim_start().starts_with('[') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Failure::usage(format!("--ops {arg}: {e}")))?
    };
    serde_json::from_str(&text).map_err(|e| Failure::usage(format!("invalid --ops JSON: {e}")))
}

fn cmd_edit(wav: &Path, ops: &str, out: &Path) -> CmdResult {
    let ops = parse_ops(ops)?;
    let clip = read_wav(wav)?;
    let edited = edit::apply(&clip, &ops).map_err(|e| match &e {
        EditError::AtOp { index, .. } => Failure::runtime(format!("{e} ({})", ops[*index].kind())),
        _ => Failure::runtime(e),
    })?;
    write_file(out, &write_wav(&edited))?;
    print_json(&json!({
        "out": out,
        "ops": ops.len(),
        "sample_rate": edited.sample_rate(),
        "num_samples": edited.len(),
        "duration_ms": edited.duration_ms(),
    }))
}

fn cmd_serve(checkpoint: Option<&Path>, addr: SocketAddr, static_dir: Option<PathBuf>) -> CmdResult {
    let model = checkpoint.map(read_checkpoint).transpose()?;
    if model.is_none() {
        tracing::warn!("no --checkpoint given; model endpoints will answer 503");
    }
    if let Some(dir) = &static_dir {
        if !dir.is_dir() {
            return Err(Failure::runtime(format!("static dir {} does not exist", dir.display())));
        }
    }
    let state = Arc::new(AppState::new(model, static_dir));
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::runtime)?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| Failure::runtime(format!("cannot bind {addr}: {e}")))?;
        let local = listener.local_addr().map_err(Failure::runtime)?;
        print_json(&json!({ "listening": local.to_string() }))?;
        audioscope_server::serve(state, listener).await.map_err(Failure::runtime)
    })
}
