//! `anticipate`: synthesize archives, train, evaluate, ablate, predict and plot.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 protocol or data
//! error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anticipation::archive::{load_archive, save_archive, Archive};
use anticipation::checkpoint::{Checkpoint, RngState};
use anticipation::config::RunConfig;
use anticipation::metrics::{evaluate, format_table, EvalConfig, EvalReport};
use anticipation::model::{Ablation, Model, Variant};
use anticipation::plot::curve_svg;
use anticipation::scene::{PredictionCurve, VideoSample};
use anticipation::synth::{generate_dataset, synthetic_dims, DatasetSpec};
use anticipation::training::{predict_all, train, write_epoch_csv, EpochRecord};
use anticipation::Error;
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "anticipate", version, about = "Depth-aware early accident anticipation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Split {
    All,
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic PDAF archive.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Share of negatives that are depth-confusable.
        #[arg(long, default_value_t = 0.5)]
        confusable_fraction: f64,
        #[arg(long, default_value_t = 0.5)]
        positive_fraction: f64,
        #[arg(long, default_value_t = 40)]
        frames: usize,
        #[arg(long, default_value_t = 10.0)]
        fps: f64,
    },
    /// Train on the training split of the configured archive.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Epoch log (CSV); defaults to the checkpoint path with a .csv
        /// extension.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Ablation variant to train.
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Evaluate a checkpoint on an archive.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        /// Which part of the archive to score, using the config's split.
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
        /// Write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Train and evaluate several ablation variants with the same seed.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated variant names, or "all".
        #[arg(long, default_value = "all")]
        variants: String,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Write per-frame prediction curves as JSON.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        archive: PathBuf,
        /// Only this video.
        #[arg(long)]
        video: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render prediction curves as SVG.
    Plot {
        /// JSON file written by `predict`.
        #[arg(long)]
        curves: PathBuf,
        /// An .svg file for a single curve, otherwise a directory that gets
        /// one file per video.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        video: Option<String>,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
    },
}

/// A failure with its exit code.
struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Argument(_) | Error::Config(_) | Error::Scenario(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::from(Error::Io(e))
    }
}

type CliResult<T> = Result<T, Failure>;

fn open_archive(path: &Path) -> CliResult<Archive> {
    if !path.join(anticipation::archive::MANIFEST).is_file() {
        return Err(usage(format!("no archive at {}", path.display())));
    }
    Ok(load_archive(path)?)
}

fn open_checkpoint(path: &Path) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(usage(format!("no checkpoint at {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn report_json(rows: &[(String, EvalReport)]) -> CliResult<String> {
    let value: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(name, r)| Ok((name.clone(), serde_json::to_value(r).map_err(Error::from)?)))
        .collect::<Result<_, Error>>()?;
    let mut text = serde_json::to_string_pretty(&value).map_err(Error::from)?;
    text.push('\n');
    Ok(text)
}

fn print_table(rows: &[(String, EvalReport)]) {
    let refs: Vec<(String, &EvalReport)> = rows.iter().map(|(n, r)| (n.clone(), r)).collect();
    print!("{}", format_table(&refs));
}

fn parse_variants(text: &str) -> CliResult<Vec<Variant>> {
    if text == "all" {
        return Ok(Variant::ALL.to_vec());
    }
    text.split(',')
        .map(|s| s.trim().parse::<Variant>().map_err(|e| usage(e.to_string())))
        .collect()
}

fn fit(
    config: &RunConfig,
    archive: &Archive,
    videos: &[VideoSample],
    ablation: Ablation,
    label: &str,
) -> CliResult<(Checkpoint, Vec<EpochRecord>)> {
    let model = Model::new(config.model.clone(), archive.dims, ablation, config.train.seed)?;
    let outcome = train(model, videos, &config.train, &config.eval, |r| {
        eprintln!(
            "[{label}] epoch {:>3}  loss {:.4}  AP {:.4}  mTTA {:.3}  lr {:.2e}",
            r.epoch, r.loss, r.ap, r.mtta, r.lr
        );
    })?;
    let checkpoint = Checkpoint {
        model: outcome.model,
        train: Some(config.train.clone()),
        epoch: outcome.best_epoch,
        rng: Some(RngState::capture(&outcome.rng)),
    };
    Ok((checkpoint, outcome.log))
}

fn cmd_synth(count: usize, seed: u64, out: &Path, spec: DatasetSpec) -> CliResult<()> {
    if count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    let videos = generate_dataset(&spec, count, seed)?;
    save_archive(&Archive::new(synthetic_dims(), videos), out)?;
    eprintln!("wrote {count} videos to {}", out.display());
    Ok(())
}

fn cmd_train(config: &Path, out: &Path, log: Option<PathBuf>, variant: &str) -> CliResult<()> {
    let config = RunConfig::load(config)?;
    let variant: Variant = variant.parse().map_err(|e: Error| usage(e.to_string()))?;
    let archive = open_archive(&config.data.archive)?;
    let (train_split, _) = config.split(&archive.videos);
    let videos: Vec<VideoSample> = train_split.into_iter().cloned().collect();
    let (checkpoint, records) = fit(&config, &archive, &videos, variant.ablation(), variant.name())?;
    checkpoint.save(out)?;
    let log = log.unwrap_or_else(|| out.with_extension("csv"));
    let mut csv = Vec::new();
    write_epoch_csv(&records, &mut csv)?;
    fs::write(&log, csv)?;
    eprintln!(
        "best epoch {} -> {}, log {}",
        checkpoint.epoch,
        out.display(),
        log.display()
    );
    Ok(())
}

fn cmd_eval(
    config: Option<PathBuf>,
    checkpoint: &Path,
    archive: &Path,
    split: Split,
    report: Option<PathBuf>,
) -> CliResult<()> {
    let config = config.map(|p| RunConfig::load(&p)).transpose()?;
    let eval = config.as_ref().map(|c| c.eval.clone()).unwrap_or_default();
    let checkpoint = open_checkpoint(checkpoint)?;
    let archive = open_archive(archive)?;
    if archive.dims != checkpoint.model.dims {
        return Err(Error::Dimension("archive widths differ from the checkpoint's".into()).into());
    }
    let videos: Vec<&VideoSample> = match (split, &config) {
        (Split::All, _) => archive.videos.iter().collect(),
        (_, None) => return Err(usage("--split needs --config")),
        (Split::Train, Some(c)) => c.split(&archive.videos).0,
        (Split::Test, Some(c)) => c.split(&archive.videos).1,
    };
    let rows = vec![("model".to_string(), score(&checkpoint.model, &videos, &eval)?)];
    print_table(&rows);
    if let Some(path) = report {
        write_text(&path, &report_json(&rows)?)?;
    }
    Ok(())
}

fn score(model: &Model, videos: &[&VideoSample], eval: &EvalConfig) -> CliResult<EvalReport> {
    let curves: Vec<PredictionCurve> = videos.iter().map(|v| model.predict(v)).collect::<Result<_, _>>()?;
    Ok(evaluate(&curves, eval)?)
}

fn cmd_ablate(config: &Path, variants: &str, report: Option<PathBuf>) -> CliResult<()> {
    let config = RunConfig::load(config)?;
    let variants = parse_variants(variants)?;
    let archive = open_archive(&config.data.archive)?;
    let (train_split, test_split) = config.split(&archive.videos);
    if test_split.is_empty() {
        return Err(usage("data.test_fraction must be positive for ablation"));
    }
    let videos: Vec<VideoSample> = train_split.into_iter().cloned().collect();
    let mut rows = Vec::new();
    for v in variants {
        let (checkpoint, _) = fit(&config, &archive, &videos, v.ablation(), v.name())?;
        rows.push((
            v.name().to_string(),
            score(&checkpoint.model, &test_split, &config.eval)?,
        ));
    }
    print_table(&rows);
    if let Some(path) = report {
        write_text(&path, &report_json(&rows)?)?;
    }
    Ok(())
}

fn cmd_predict(checkpoint: &Path, archive: &Path, video: Option<String>, out: &Path) -> CliResult<()> {
    let checkpoint = open_checkpoint(checkpoint)?;
    let archive = open_archive(archive)?;
    if archive.dims != checkpoint.model.dims {
        return Err(Error::Dimension("archive widths differ from the checkpoint's".into()).into());
    }
    let chosen: Vec<&VideoSample> = archive
        .videos
        .iter()
        .filter(|v| video.as_ref().is_none_or(|id| &v.id == id))
        .collect();
    if chosen.is_empty() {
        return Err(usage(format!("no video {:?} in archive", video.unwrap_or_default())));
    }
    let prepared: Vec<_> = chosen
        .iter()
        .map(|v| checkpoint.model.prepare(v))
        .collect::<Result<_, _>>()?;
    let curves = predict_all(&checkpoint.model, &prepared)?;
    let mut text = serde_json::to_string_pretty(&curves).map_err(Error::from)?;
    text.push('\n');
    write_text(out, &text)
}

fn cmd_plot(curves: &Path, out: &Path, video: Option<String>, threshold: f64) -> CliResult<()> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(usage("--threshold must lie in [0,1]"));
    }
    let text = fs::read_to_string(curves).map_err(|e| usage(format!("cannot read {}: {e}", curves.display())))?;
    let all: Vec<PredictionCurve> = serde_json::from_str(&text).map_err(|e| {
        Failure::from(Error::Load {
            context: curves.display().to_string(),
            message: e.to_string(),
        })
    })?;
    let chosen: Vec<&PredictionCurve> = all
        .iter()
        .filter(|c| video.as_ref().is_none_or(|id| &c.video_id == id))
        .collect();
    if chosen.is_empty() {
        return Err(usage("no matching curve"));
    }
    if out.extension().is_some_and(|e| e == "svg") {
        let [curve] = chosen.as_slice() else {
            return Err(usage(format!(
                "{} curves match; pick one with --video or give a directory",
                chosen.len()
            )));
        };
        return write_text(out, &curve_svg(curve, threshold));
    }
    fs::create_dir_all(out)?;
    for c in chosen {
        let name: String = c
            .video_id
            .chars()
            .map(|ch| {
                if ch.is_ascii_alphanumeric() || ch == '-' || ch == '_' {
                    ch
                } else {
                    '_'
                }
            })
            .collect();
        write_text(&out.join(format!("{name}.svg")), &curve_svg(c, threshold))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth {
            count,
            seed,
            out,
            confusable_fraction,
            positive_fraction,
            frames,
            fps,
        } => {
            let spec = DatasetSpec {
                positive_fraction,
                confusable_fraction,
                n_frames: frames,
                fps,
                ..DatasetSpec::default()
            };
            cmd_synth(count, seed, &out, spec)
        }
        Command::Train {
            config,
            out,
            log,
            variant,
        } => cmd_train(&config, &out, log, &variant),
        Command::Eval {
            config,
            checkpoint,
            archive,
            split,
            report,
        } => cmd_eval(config, &checkpoint, &archive, split, report),
        Command::Ablate {
            config,
            variants,
            report,
        } => cmd_ablate(&config, &variants, report),
        Command::Predict {
            checkpoint,
            archive,
            video,
            out,
        } => cmd_predict(&checkpoint, &archive, video, &out),
        Command::Plot {
            curves,
            out,
            video,
            threshold,
        } => cmd_plot(&curves, &out, video, threshold),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
