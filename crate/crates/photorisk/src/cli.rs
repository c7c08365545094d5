//! The `photorisk` command line.
//!
//! Exit codes: 0 on success, 1 for usage errors (bad flags or out-of-range
//! values), 2 for I/O and file-format errors. Every flag is checked before
//! any file is written.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{ArgGroup, Parser, Subcommand};
use photorisk_core::explain::{
    gradcam, mean_abs, model_scorer, sample_points, shap_against_mean, shap_exact,
};
use photorisk_core::recommend::{
    apply_feedback, categorize, filter_from_categories, filter_from_score, personalize, Feedback,
    Recommendation, UserProfile,
};
use photorisk_core::synth::{self, canonical_image, gen_dataset, normalize_variance};
use photorisk_core::train::{evaluate, train_with_progress, EpochStats, TrainConfig};
use photorisk_core::{AugmentConfig, EyeVariance, LuxValue, ModelConfig, ModelWeights};
use serde::Serialize;

use crate::error::Error;
use crate::explain_io::{render_heatmap_overlay, shap_csv};
use crate::{load_dataset, load_weights, save_dataset, save_weights};

/// The three rows of the demonstration table: (lux, eye movement variance).
pub const DEMO_ROWS: [(f64, f64); 3] = [(1000.0, 8.0), (750.0, 5.0), (400.0, 3.0)];

/// Baseline for single-instance Shapley values: the middle of the generation ranges.
pub const SHAP_MIDPOINT: (f64, f64) = (
    (synth::LUX_MIN + synth::LUX_MAX) / 2.0,
    (synth::VARIANCE_MIN + synth::VARIANCE_MAX) / 2.0,
);

#[derive(Debug, Parser)]
#[command(
    name = "photorisk",
    version,
    about = "Photosensitivity risk scoring and filter recommendation"
)]
pub struct Cli {
    /// Seed for data generation, weight initialization and training.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Progress on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    GenData {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = AugmentConfig::default().noise_sigma)]
        noise_sigma: f64,
        #[arg(long, default_value_t = AugmentConfig::default().jitter_fraction)]
        jitter: f64,
        #[arg(long, default_value_t = AugmentConfig::default().blur_probability)]
        blur_prob: f64,
    },
    /// Train a model; writes the weights and a per-epoch report.csv.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TrainConfig::default().epochs_max)]
        epochs: usize,
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = TrainConfig::default().patience)]
        patience: usize,
        #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
        lr: f64,
        /// Defaults to report.csv next to the weights.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Score a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        weights: PathBuf,
    },
    /// Score one (lux, variance) pair and recommend a filter.
    Predict {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        lux: f64,
        #[arg(long)]
        variance: f64,
        #[arg(long)]
        json: bool,
    },
    /// GradCAM overlay and Shapley attributions.
    Explain {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        lux: f64,
        #[arg(long)]
        variance: f64,
        #[arg(long)]
        gradcam: Option<PathBuf>,
        #[arg(long)]
        shap: Option<PathBuf>,
        /// Attribute every sample of this dataset against its mean instead
        /// of the single input against the range midpoint.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Filter recommendation from a score or from (lux, variance) categories.
    #[command(group(ArgGroup::new("input").required(true).args(["score", "lux"])))]
    Recommend {
        #[arg(long, conflicts_with_all = ["lux", "variance"])]
        score: Option<f64>,
        #[arg(long, requires = "variance")]
        lux: Option<f64>,
        #[arg(long, requires = "lux")]
        variance: Option<f64>,
        /// JSON profile; created if missing, updated when feedback is given.
        #[arg(long)]
        profile: Option<PathBuf>,
        #[arg(long, requires = "profile", value_parser = parse_feedback)]
        feedback: Option<Feedback>,
        /// Seconds since the Unix epoch for the feedback entry; defaults to now.
        #[arg(long, requires = "feedback")]
        timestamp: Option<u64>,
    },
    /// Run the three reference inputs end to end and print a table.
    Demo {
        #[arg(long)]
        weights: PathBuf,
    },
}

fn parse_feedback(s: &str) -> Result<Feedback, String> {
    Feedback::parse(s).ok_or_else(|| {
        let kinds: Vec<_> = Feedback::ALL.iter().map(|f| f.as_str()).collect();
        format!("expected one of {}", kinds.join(", "))
    })
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Failure(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Failure(_) => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Failure(e)
    }
}

impl From<photorisk_core::Error> for CliError {
    fn from(e: photorisk_core::Error) -> Self {
        CliError::Failure(e.into())
    }
}

fn usage<T>(msg: impl Into<String>) -> Result<T, CliError> {
    Err(CliError::Usage(msg.into()))
}

fn check_lux(lux: f64) -> Result<LuxValue, CliError> {
    LuxValue::new(lux).or_else(|e| usage(e.to_string()))
}

fn check_variance(v: f64) -> Result<EyeVariance, CliError> {
    EyeVariance::new(v).or_else(|e| usage(e.to_string()))
}

fn check_input(path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Failure(Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        }))
    }
}

fn check_output_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => check_input(p),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| Error::io(path)(e).into())
}

#[derive(Serialize)]
struct Prediction<'a> {
    lux: f64,
    eye_variance: f64,
    risk_score: f64,
    recommendation: &'a Recommendation,
}

/// Parses `args` (including the program name) and runs the command, writing
/// results to `out`.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version.
            write!(out, "{e}").map_err(|e| Error::io("<stdout>")(e))?;
            return Ok(());
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return usage(first.trim_start_matches("error: ").to_string());
        }
    };
    execute(cli, out)
}

fn io_out(e: std::io::Error) -> CliError {
    Error::io("<stdout>")(e).into()
}

fn execute(cli: Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = cli.seed;
    match cli.command {
        Command::GenData {
            n,
            out: dir,
            noise_sigma,
            jitter,
            blur_prob,
        } => {
            let config = AugmentConfig {
                noise_sigma,
                jitter_fraction: jitter,
                blur_probability: blur_prob,
                ..AugmentConfig::default()
            };
            if n == 0 {
                return usage("--n must be positive");
            }
            config.validate().or_else(|e| usage(e.to_string()))?;
            let ds = gen_dataset(n, seed, &config)?;
            save_dataset(&ds, &dir)?;
            writeln!(out, "wrote {n} samples to {}", dir.display()).map_err(io_out)?;
        }
        Command::Train {
            data,
            out: weights_path,
            epochs,
            batch_size,
            patience,
            lr,
            report,
        } => {
            let config = TrainConfig {
                epochs_max: epochs,
                batch_size,
                patience,
                learning_rate: lr,
                seed,
            };
            if epochs == 0 {
                return usage("--epochs must be positive");
            }
            if batch_size < 2 {
                return usage("--batch-size must be at least 2");
            }
            if !(lr > 0.0 && lr.is_finite()) {
                return usage("--lr must be positive");
            }
            check_input(&data)?;
            check_output_parent(&weights_path)?;
            let report_path = report.unwrap_or_else(|| weights_path.with_file_name("report.csv"));
            check_output_parent(&report_path)?;
            let ds = load_dataset(&data)?;
            if ds.len() < 2 * batch_size {
                return usage(format!(
                    "dataset of {} samples is too small for batch size {batch_size}",
                    ds.len()
                ));
            }
            let mut weights = ModelWeights::build(&ModelConfig {
                seed,
                ..ModelConfig::default()
            })?;
            let verbose = cli.verbose;
            let result = train_with_progress(&mut weights, &ds, &config, |e| {
                if verbose {
                    eprintln!(
                        "epoch {:>3}  train_loss={:.6}  val_loss={:.6}  val_accuracy={:.4}",
                        e.epoch, e.train_loss, e.val_loss, e.val_accuracy
                    );
                }
            })?;
            save_weights(&weights, &weights_path)?;
            write_file(&report_path, &report_csv(&result.epochs))?;
            writeln!(
                out,
                "best epoch {} of {} (val_loss={:.6}); weights in {}",
                result.best_epoch,
                result.stopped_epoch,
                result.best().map_or(f64::NAN, |e| e.val_loss),
                weights_path.display()
            )
            .map_err(io_out)?;
        }
        Command::Eval { data, weights } => {
            check_input(&data)?;
            check_input(&weights)?;
            let w = load_weights(&weights)?;
            let ds = load_dataset(&data)?;
            let m = evaluate(&w, &ds.samples)?;
            writeln!(
                out,
                "mse={:.6} binary_accuracy={:.4} band_accuracy={:.4}",
                m.mse, m.binary_accuracy, m.band_accuracy
            )
            .map_err(io_out)?;
        }
        Command::Predict {
            weights,
            lux,
            variance,
            json,
        } => {
            let (l, v) = (check_lux(lux)?, check_variance(variance)?);
            check_input(&weights)?;
            let w = load_weights(&weights)?;
            let score = w.predict(l, v)?.value();
            let rec = filter_from_score(score);
            if json {
                let p = Prediction {
                    lux,
                    eye_variance: variance,
                    risk_score: score,
                    recommendation: &rec,
                };
                let s = serde_json::to_string_pretty(&p).map_err(Error::json("<stdout>"))?;
                writeln!(out, "{s}").map_err(io_out)?;
            } else {
                writeln!(
                    out,
                    "risk_score={score:.4} filter={} note={}",
                    rec.filter, rec.note
                )
                .map_err(io_out)?;
            }
        }
        Command::Explain {
            weights,
            lux,
            variance,
            gradcam: gradcam_path,
            shap,
            data,
        } => {
            let (l, v) = (check_lux(lux)?, check_variance(variance)?);
            if gradcam_path.is_none() && shap.is_none() {
                return usage("nothing to do: pass --gradcam and/or --shap");
            }
            check_input(&weights)?;
            for p in gradcam_path.iter().chain(&shap) {
                check_output_parent(p)?;
            }
            if let Some(d) = &data {
                check_input(d)?;
            }
            let w = load_weights(&weights)?;
            // Render everything before writing anything.
            let overlay = match &gradcam_path {
                Some(_) => {
                    let image = canonical_image(l, w.canonical_seed);
                    let heat = gradcam(&w, &image, normalize_variance(v))?;
                    Some(render_heatmap_overlay(&heat, &image)?)
                }
                None => None,
            };
            let table = match &shap {
                Some(_) => {
                    let mut scorer = model_scorer(&w);
                    let rows: Vec<_> = match &data {
                        Some(d) => {
                            let points = sample_points(&load_dataset(d)?.samples);
                            let attrs = shap_against_mean(&mut scorer, &points)?;
                            points.into_iter().zip(attrs).collect()
                        }
                        None => {
                            let a = shap_exact(&mut scorer, (lux, variance), SHAP_MIDPOINT)?;
                            vec![((lux, variance), a)]
                        }
                    };
                    let attrs: Vec<_> = rows.iter().map(|r| r.1).collect();
                    let (mb, mv) = mean_abs(&attrs);
                    writeln!(
                        out,
                        "mean_abs_phi_brightness={mb:.6} mean_abs_phi_variance={mv:.6}"
                    )
                    .map_err(io_out)?;
                    Some(shap_csv(&rows)?)
                }
                None => None,
            };
            if let (Some(p), Some(bytes)) = (&gradcam_path, overlay) {
                write_file(p, &bytes)?;
                writeln!(out, "wrote {}", p.display()).map_err(io_out)?;
            }
            if let (Some(p), Some(bytes)) = (&shap, table) {
                write_file(p, &bytes)?;
                writeln!(out, "wrote {}", p.display()).map_err(io_out)?;
            }
        }
        Command::Recommend {
            score,
            lux,
            variance,
            profile,
            feedback,
            timestamp,
        } => {
            let base = match (score, lux, variance) {
                (Some(s), _, _) => {
                    if !(0.0..=1.0).contains(&s) {
                        return usage(format!("--score {s} outside [0, 1]"));
                    }
                    filter_from_score(s)
                }
                (None, Some(l), Some(v)) => {
                    let (l, v) = (check_lux(l)?, check_variance(v)?);
                    let (b, vc) = categorize(l.get(), v.get());
                    filter_from_categories(b, vc)
                }
                _ => return usage("pass --score or both --lux and --variance"),
            };
            let mut user = match &profile {
                Some(p) if p.exists() => read_profile(p)?,
                _ => UserProfile::default(),
            };
            if let Some(fb) = feedback {
                let ts = timestamp.unwrap_or_else(|| {
                    SystemTime::now()
                        .duration_since(UNIX_EPOCH)
                        .map_or(0, |d| d.as_secs())
                });
                user = apply_feedback(&user, fb, ts);
                let p = profile
                    .as_ref()
                    .expect("clap requires --profile with --feedback");
                let json = serde_json::to_vec_pretty(&user).map_err(Error::json(p))?;
                write_file(p, &json)?;
            }
            let rec = personalize(&base, &user);
            let s = serde_json::to_string_pretty(&rec).map_err(Error::json("<stdout>"))?;
            writeln!(out, "{s}").map_err(io_out)?;
        }
        Command::Demo { weights } => {
            check_input(&weights)?;
            let w = load_weights(&weights)?;
            writeln!(out, "{}", demo_table(&w)?).map_err(io_out)?;
        }
    }
    Ok(())
}

fn read_profile(path: &Path) -> Result<UserProfile, CliError> {
    let bytes = fs::read(path).map_err(Error::io(path))?;
    let profile: UserProfile = serde_json::from_slice(&bytes).map_err(Error::json(path))?;
    profile.validate()?;
    Ok(profile)
}

pub fn report_csv(epochs: &[EpochStats]) -> Vec<u8> {
    let mut s = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in epochs {
        s += &format!(
            "{},{:.9},{:.9},{:.6}\n",
            e.epoch, e.train_loss, e.val_loss, e.val_accuracy
        );
    }
    s.into_bytes()
}

/// The demonstration table for [`DEMO_ROWS`].
pub fn demo_table(w: &ModelWeights) -> Result<String, CliError> {
    let headers = [
        "Brightness (lux)",
        "Eye Movement Variance",
        "Risk Score",
        "Recommended Filter",
    ];
    let mut rows = Vec::new();
    for (lux, var) in DEMO_ROWS {
        let score = w
            .predict(LuxValue::new(lux)?, EyeVariance::new(var)?)?
            .value();
        rows.push([
            format!("{lux:.0}"),
            format!("{var:.0}"),
            format!("{score:.2}"),
            filter_from_score(score).filter.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..4)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([headers[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: [&str; 4]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        padded.join(" | ").trim_end().to_string()
    };
    let mut table = vec![line(headers)];
    table.push(
        widths
            .iter()
            .map(|&w| "-".repeat(w))
            .collect::<Vec<_>>()
            .join("-|-"),
    );
    for r in &rows {
        table.push(line([&r[0], &r[1], &r[2], &r[3]]));
    }
    Ok(table.join("\n"))
}

/// Entry point for the binary; returns the process exit code.
pub fn main() -> i32 {
    let mut stdout = std::io::stdout().lock();
    match run(std::env::args_os(), &mut stdout) {
        Ok(()) => 0,
        Err(e) => {
            match &e {
                CliError::Usage(msg) => eprintln!("photorisk: {msg}"),
                CliError::Failure(err) => eprintln!("photorisk: {err}"),
            }
            e.exit_code()
        }
    }
}
