//! Command-line front end. Exit codes: 0 success, 1 domain error, 2 usage
//! error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::events::{parse_event_csv, write_event_csv, EventError, EventStream};
use crate::gan::{GanError, GanParams};
use crate::msnet::{MsError, MsNet};
use crate::oracle::verify_math;
use crate::pipeline::{self, Models, PipelineConfig, PipelineError, ScoreSeries, Sequence};
use crate::repr::{discretize, ReprError};
use crate::synth::{render_scene, LabelTrack, Preset, SceneConfig, SceneError};
use crate::tensor::{read_checkpoint, write_checkpoint, CheckpointError};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Events(#[from] EventError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Ms(#[from] MsError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("{0}")]
    Usage(String),
    #[error("{0} check(s) failed")]
    ChecksFailed(usize),
}

#[derive(Debug, Parser)]
#[command(name = "evad", version, about = "Event-stream anomaly detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Render a synthetic scene to an event CSV and a label CSV.
    Simulate {
        /// Built-in scene: walking, running, trajectory, shape or mixed.
        #[arg(long, conflicts_with = "config")]
        preset: Option<Preset>,
        /// Scene description in key = value form.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        #[arg(long)]
        duration_us: Option<u64>,
        #[arg(long)]
        noise_rate: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_events: PathBuf,
        #[arg(long)]
        out_labels: Option<PathBuf>,
    },
    /// Bin an event CSV into an EVOL volume.
    Voxelize {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        t0_us: u64,
        /// Overrides `bins` from the config.
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the memory-surface network on normal data.
    TrainMs {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        duration_us: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the next-frame predictor on normal data.
    TrainGan {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        ms_ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        duration_us: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-frame prediction errors to a score CSV.
    Score {
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        ms_ckpt: PathBuf,
        #[arg(long)]
        gan_ckpt: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ground-truth label CSV; also fixes the scored time span.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        duration_us: Option<u64>,
        /// Average over this many noise draws instead of using z = 0.
        #[arg(long)]
        z_samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC AUC and best F1 of a labelled score CSV.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// Also write the ROC curve as CSV.
        #[arg(long)]
        curve: Option<PathBuf>,
    },
    /// Render a score CSV as SVG.
    Plot {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the discriminator and divergence identities on random instances.
    VerifyMath {
        #[arg(long, default_value_t = 100)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, CliError> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::parse(&read_text(p)?)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn load_events(path: &Path, cfg: &PipelineConfig) -> Result<EventStream, CliError> {
    Ok(parse_event_csv(&read_text(path)?, cfg.width, cfg.height)?)
}

fn load_ckpt(path: &Path) -> Result<crate::tensor::ParamSet<f32>, CliError> {
    let bytes = fs::read(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })?;
    Ok(read_checkpoint(&bytes[..])?)
}

fn save_ckpt(path: &Path, params: &crate::tensor::ParamSet<f32>) -> Result<(), CliError> {
    let mut bytes = Vec::new();
    write_checkpoint(params, &mut bytes).expect("writing to memory");
    write_bytes(path, &bytes)
}

fn span(stream: &EventStream, duration: Option<u64>) -> Sequence<'_> {
    Sequence {
        stream,
        t_start: 0,
        t_end: duration.unwrap_or_else(|| stream.end_time()),
    }
}

fn run(cmd: Command, out: &mut dyn Write) -> Result<(), CliError> {
    let say = |out: &mut dyn Write, s: String| {
        let _ = writeln!(out, "{s}");
    };
    match cmd {
        Command::Simulate {
            preset,
            config,
            width,
            height,
            duration_us,
            noise_rate,
            seed,
            out_events,
            out_labels,
        } => {
            let mut cfg = match (preset, config) {
                (Some(p), None) => p.build(width, height, seed.unwrap_or(0), duration_us),
                (None, Some(file)) => {
                    let mut kv = KeyValues::parse(&read_text(&file)?)?;
                    if let Some(s) = seed {
                        kv.insert("seed", s);
                    }
                    SceneConfig::from_kv(&kv)?
                }
                _ => {
                    return Err(CliError::Usage(
                        "give exactly one of --preset or --config".into(),
                    ))
                }
            };
            if let Some(r) = noise_rate {
                cfg.noise_rate = r;
            }
            let (stream, track) = render_scene(&cfg)?;
            write_bytes(&out_events, write_event_csv(&stream).as_bytes())?;
            if let Some(l) = out_labels {
                write_bytes(&l, track.to_csv().as_bytes())?;
            }
            say(
                out,
                format!(
                    "{} events, {}x{}, {} us",
                    stream.len(),
                    cfg.width,
                    cfg.height,
                    cfg.duration
                ),
            );
        }
        Command::Voxelize {
            events,
            config,
            t0_us,
            bins,
            out: path,
        } => {
            let cfg = load_config(config.as_deref(), None)?;
            let stream = load_events(&events, &cfg)?;
            let vol = discretize(
                &stream,
                t0_us,
                cfg.bin_dt,
                bins.unwrap_or(cfg.bins),
                cfg.mode,
            )?;
            write_bytes(&path, &vol.to_evol_bytes())?;
            say(
                out,
                format!(
                    "{} bins of {}x{}, total {}",
                    vol.bins,
                    vol.width,
                    vol.height,
                    vol.total()
                ),
            );
        }
        Command::TrainMs {
            events,
            config,
            duration_us,
            seed,
            out: path,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let stream = load_events(&events, &cfg)?;
            let (net, report) =
                pipeline::train_memory_surface(&[span(&stream, duration_us)], &cfg)?;
            save_ckpt(&path, net.params())?;
            let first = report.epoch_loss.first().copied().unwrap_or(f64::NAN);
            let last = report.epoch_loss.last().copied().unwrap_or(f64::NAN);
            say(
                out,
                format!(
                    "loss {first:.6} -> {last:.6} over {} epochs",
                    report.epoch_loss.len()
                ),
            );
        }
        Command::TrainGan {
            events,
            ms_ckpt,
            config,
            duration_us,
            seed,
            out: path,
        } => {
            let cfg = load_config(config.as_deref(), seed)?;
            let stream = load_events(&events, &cfg)?;
            let ms = MsNet::from_params(&load_ckpt(&ms_ckpt)?)?;
            let (gan, curves) =
                pipeline::train_predictor(&[span(&stream, duration_us)], &ms, &cfg)?;
            save_ckpt(&path, &gan.to_param_set())?;
            for (e, ((a, b), g)) in curves
                .d_xy
                .iter()
                .zip(&curves.d_x)
                .zip(&curves.g)
                .enumerate()
            {
                say(out, format!("epoch {e}: D_xy {a:.4} D_x {b:.4} G {g:.4}"));
            }
        }
        Command::Score {
            events,
            ms_ckpt,
            gan_ckpt,
            config,
            labels,
            duration_us,
            z_samples,
            seed,
            out: path,
        } => {
            let mut cfg = load_config(config.as_deref(), seed)?;
            if let Some(k) = z_samples {
                cfg.z_samples = k;
            }
            let stream = load_events(&events, &cfg)?;
            let models = Models {
                ms: MsNet::from_params(&load_ckpt(&ms_ckpt)?)?,
                gan: GanParams::from_param_set(
                    &load_ckpt(&gan_ckpt)?,
                    cfg.height as usize,
                    cfg.width as usize,
                )?,
            };
            let track = labels
                .map(|p| read_text(&p))
                .transpose()?
                .map(|t| LabelTrack::from_csv(&t))
                .transpose()?;
            let t_end = duration_us
                .or_else(|| {
                    track
                        .as_ref()
                        .and_then(|t| t.intervals.iter().map(|i| i.1).max())
                })
                .unwrap_or_else(|| stream.end_time());
            let mut series = pipeline::score_sequence(
                &models,
                Sequence {
                    stream: &stream,
                    t_start: 0,
                    t_end,
                },
                &cfg,
            )?;
            if let Some(t) = &track {
                series = series.with_labels(t);
            }
            write_bytes(&path, series.to_csv().as_bytes())?;
            say(out, format!("{} frames scored", series.scores.len()));
        }
        Command::Eval { scores, curve } => {
            let series = ScoreSeries::from_csv(&read_text(&scores)?)?;
            let m = pipeline::evaluate(&series)?;
            say(out, format!("auc {:.6}", m.auc));
            say(out, format!("best_f1 {:.6}", m.best_f1));
            say(out, format!("threshold {}", m.threshold));
            if let Some(p) = curve {
                let mut text = String::from("threshold,tpr,fpr,precision,f1\n");
                for c in &m.curve {
                    text.push_str(&format!(
                        "{},{},{},{},{}\n",
                        c.threshold, c.tpr, c.fpr, c.precision, c.f1
                    ));
                }
                write_bytes(&p, text.as_bytes())?;
            }
        }
        Command::Plot { scores, out: path } => {
            let series = ScoreSeries::from_csv(&read_text(&scores)?)?;
            write_bytes(&path, pipeline::plot_scores(&series)?.as_bytes())?;
        }
        Command::VerifyMath { instances, seed } => {
            let report = verify_math(instances, seed);
            let _ = write!(out, "{report}");
            let failed = report.checks.iter().filter(|c| !c.passed).count();
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
        }
    }
    Ok(())
}

/// Parses `argv` (including the program name), runs the command and returns
/// the process exit code. Normal output goes to stdout, errors to stderr.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
