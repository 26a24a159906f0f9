use clap::{Parser, Subcommand};
use harcl::config::RunConfig;
use harcl::datasets::{synth_generate, write_csv_recording};
use harcl::fe::{load_fe, save_fe};
use harcl::pipeline::{
    embedding_pca, evaluate, normalize_for, prepare_split, pretrain, read_label_file, stream, write_label_file,
};
use harcl::plot::scatter_svg;
use harcl::{Error, Result};
use serde_json::json;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

#[derive(Parser)]
#[command(name = "harcl", version, about = "Online continual learning for streaming activity recognition")]
struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for artifacts and reports.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train and freeze the feature extractor.
    Pretrain,
    /// Stream the scenario through a pre-trained extractor.
    Stream {
        /// Extractor artifact; defaults to <out-dir>/fe.bin.
        #[arg(long)]
        fe: Option<PathBuf>,
    },
    /// Score a predictions file against a truth file (one class id per line).
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Scatter plot of the test windows' embeddings on their first two
    /// principal components.
    PlotPca {
        #[arg(long)]
        fe: Option<PathBuf>,
        /// Defaults to <out-dir>/pca.svg.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Keep every k-th window.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
    /// Write the configured synthetic dataset as CSV recordings.
    SynthData,
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.resolved()
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("json value");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn config_json(cfg: &RunConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let out = &cli.out_dir;
    match &cli.command {
        Command::Pretrain => {
            let cfg = load_config(cli)?;
            fs::create_dir_all(out)?;
            let started = Instant::now();
            let split = prepare_split(&cfg)?;
            let outcome = pretrain(&cfg, &split)?;
            let fe_path = out.join("fe.bin");
            save_fe(&outcome.fe, &fe_path)?;
            fs::write(out.join("config.toml"), cfg.to_toml_string())?;
            let report = json!({
                "config": config_json(&cfg),
                "contrastive_loss": if cfg.use_contrastive { "enabled" } else { "disabled" },
                "n_original_windows": outcome.n_original,
                "n_smote_windows": outcome.n_synthetic,
                "head_classes": outcome.fe.head_classes(),
                "training": outcome.report,
                "seconds": started.elapsed().as_secs_f64(),
                "artifact": fe_path,
            });
            write_json(&out.join("pretrain_report.json"), &report)?;
            Ok(json!({ "artifact": fe_path, "report": out.join("pretrain_report.json") }))
        }
        Command::Stream { fe } => {
            let cfg = load_config(cli)?;
            fs::create_dir_all(out)?;
            let fe = load_fe(&fe.clone().unwrap_or_else(|| out.join("fe.bin")))?;
            let split = prepare_split(&cfg)?;
            let mut lines = fs::File::create(out.join("batches.jsonl"))?;
            let mut line_err = None;
            let outcome = stream(&cfg, &fe, &split, |m| {
                let r = serde_json::to_string(m)
                    .map_err(|e| Error::Parse(e.to_string()))
                    .and_then(|s| writeln!(lines, "{s}").and_then(|_| lines.flush()).map_err(Error::from));
                if let Err(e) = r {
                    line_err.get_or_insert(e);
                }
            })?;
            if let Some(e) = line_err {
                return Err(e);
            }
            outcome.replay.snapshot_save(&out.join("replay.bin"))?;
            write_label_file(&out.join("predictions.txt"), &outcome.final_predictions)?;
            write_label_file(&out.join("truth.txt"), &outcome.truths)?;
            let summary = json!({ "config": config_json(&cfg), "metrics": outcome.report.summary() });
            write_json(&out.join("summary.json"), &summary)?;
            write_json(&out.join("metrics.json"), &serde_json::to_value(&outcome.report).expect("report"))?;
            Ok(json!({
                "final_macro_f1": outcome.report.final_macro_f1,
                "base_macro_f1": outcome.report.base_macro_f1,
                "new_macro_f1": outcome.report.new_macro_f1,
                "summary": out.join("summary.json"),
            }))
        }
        Command::Eval { pred, truth } => {
            let report = evaluate(&read_label_file(pred)?, &read_label_file(truth)?)?;
            Ok(serde_json::to_value(report).expect("report"))
        }
        Command::PlotPca { fe, output, stride } => {
            let cfg = load_config(cli)?;
            if *stride == 0 {
                return Err(Error::InvalidConfig("stride must be positive".into()));
            }
            let fe = load_fe(&fe.clone().unwrap_or_else(|| out.join("fe.bin")))?;
            let split = normalize_for(&fe, &prepare_split(&cfg)?)?;
            let windows: Vec<_> = split.test.iter().step_by(*stride).cloned().collect();
            let (pca, labels) = embedding_pca(&fe, &windows)?;
            let points: Vec<(f64, f64)> = pca.points.rows().into_iter().map(|r| (r[0], r[1])).collect();
            let svg = scatter_svg(&points, &labels, "Embedding PCA")?;
            let path = output.clone().unwrap_or_else(|| out.join("pca.svg"));
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            fs::write(&path, svg)?;
            Ok(json!({ "output": path, "n_points": points.len(), "explained_ratio": pca.explained_ratio }))
        }
        Command::SynthData => {
            let cfg = load_config(cli)?;
            let dir = out.join("data");
            fs::create_dir_all(&dir)?;
            let recordings = synth_generate(&cfg.synth_spec())?;
            for r in &recordings {
                let name = format!("s{:03}_c{:03}.csv", r.subject_id, r.labels[0]);
                write_csv_recording(r, &dir.join(name))?;
            }
            Ok(json!({ "directory": dir, "recordings": recordings.len() }))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": { "kind": e.kind(), "message": e.to_string() } }));
            ExitCode::FAILURE
        }
    }
}
