//! End-to-end scoring: windows -> memory surface -> predicted next frame ->
//! per-frame squared error, plus ROC evaluation and an SVG plot.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::events::EventStream;
use crate::gan::{self, GanConfig, GanError, GanParams, GanTrainConfig};
use crate::msnet::{self, MsError, MsNet, MsTrainConfig, MsTrainReport};
use crate::repr::{sliding_windows, ReprError, VolumeMode, WindowSample, WindowSpec};
use crate::synth::{label_frames, LabelTrack};
use crate::tensor::{AdamConfig, TensorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Ms(#[from] MsError),
    #[error(transparent)]
    Gan(#[from] GanError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("model expects {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("evaluation needs both normal and anomalous frames")]
    SingleClass,
    #[error("evaluation needs frame labels")]
    MissingLabels,
    #[error("score series is empty")]
    EmptySeries,
    #[error("bad score CSV at line {line}: {reason}")]
    ScoreCsv { line: usize, reason: String },
}

/// Every tunable of the pipeline. Read from the same `key = value` format as
/// scene files; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub width: u32,
    pub height: u32,
    pub bins: usize,
    pub bin_dt: u64,
    pub stride: usize,
    pub mode: VolumeMode,
    /// Volumes are clipped to `[-cap, cap]` and divided by `cap`.
    pub cap: f32,
    pub ms: MsTrainConfig,
    pub gan_base_channels: usize,
    pub gan: GanTrainConfig,
    /// 0 scores with a zero noise grid; `k > 0` averages over `k` seeded draws.
    pub z_samples: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            width: 64,
            height: 64,
            bins: 8,
            bin_dt: 25_000,
            stride: 1,
            mode: VolumeMode::Bilinear,
            cap: 5.0,
            ms: MsTrainConfig::default(),
            gan_base_channels: 8,
            gan: GanTrainConfig::default(),
            z_samples: 0,
            seed: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "width",
    "height",
    "bins",
    "bin_dt_us",
    "stride",
    "mode",
    "cap",
    "ms.filters",
    "ms.epochs",
    "ms.batch_size",
    "ms.lr",
    "ms.lambda_sparse",
    "gan.base_channels",
    "gan.epochs",
    "gan.batch_size",
    "gan.lr",
    "gan.beta1",
    "gan.beta2",
    "gan.lambda_l1",
    "gan.lambda_l2",
    "score.z_samples",
    "seed",
];

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(k)) {
            return Err(ConfigError::Unknown(k.to_string()));
        }
        let d = Self::default();
        let adam = |lr: f64, b1: f64, b2: f64| AdamConfig {
            lr,
            beta1: b1,
            beta2: b2,
            eps: 1e-8,
        };
        let cfg = Self {
            width: kv.get_or("width", d.width)?,
            height: kv.get_or("height", d.height)?,
            bins: kv.get_or("bins", d.bins)?,
            bin_dt: kv.get_or("bin_dt_us", d.bin_dt)?,
            stride: kv.get_or("stride", d.stride)?,
            mode: kv.get_or("mode", d.mode)?,
            cap: kv.get_or("cap", d.cap)?,
            ms: MsTrainConfig {
                filters: kv.get_or("ms.filters", d.ms.filters)?,
                epochs: kv.get_or("ms.epochs", d.ms.epochs)?,
                batch_size: kv.get_or("ms.batch_size", d.ms.batch_size)?,
                lambda_sparse: kv.get_or("ms.lambda_sparse", d.ms.lambda_sparse)?,
                adam: adam(
                    kv.get_or("ms.lr", d.ms.adam.lr)?,
                    d.ms.adam.beta1,
                    d.ms.adam.beta2,
                ),
            },
            gan_base_channels: kv.get_or("gan.base_channels", d.gan_base_channels)?,
            gan: GanTrainConfig {
                epochs: kv.get_or("gan.epochs", d.gan.epochs)?,
                batch_size: kv.get_or("gan.batch_size", d.gan.batch_size)?,
                lambda_l1: kv.get_or("gan.lambda_l1", d.gan.lambda_l1)?,
                lambda_l2: kv.get_or("gan.lambda_l2", d.gan.lambda_l2)?,
                adam: adam(
                    kv.get_or("gan.lr", d.gan.adam.lr)?,
                    kv.get_or("gan.beta1", d.gan.adam.beta1)?,
                    kv.get_or("gan.beta2", d.gan.adam.beta2)?,
                ),
            },
            z_samples: kv.get_or("score.z_samples", d.z_samples)?,
            seed: kv.get_or("seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.width == 0 || self.height == 0 || self.width % 8 != 0 || self.height % 8 != 0 {
            return bad("width and height must be positive multiples of 8");
        }
        if self.bins == 0 || self.bin_dt == 0 || self.stride == 0 {
            return bad("bins, bin_dt_us and stride must be positive");
        }
        if !(self.cap > 0.0 && self.cap.is_finite()) {
            return bad("cap must be positive");
        }
        if self.ms.filters == 0 || self.gan_base_channels == 0 {
            return bad("ms.filters and gan.base_channels must be positive");
        }
        if self.ms.batch_size == 0 || self.gan.batch_size == 0 {
            return bad("batch sizes must be positive");
        }
        if !(self.ms.lambda_sparse >= 0.0 && self.gan.lambda_l1 >= 0.0 && self.gan.lambda_l2 >= 0.0)
        {
            return bad("loss weights must be >= 0");
        }
        if !(self.ms.adam.lr > 0.0 && self.gan.adam.lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("bins", self.bins);
        kv.insert("bin_dt_us", self.bin_dt);
        kv.insert("stride", self.stride);
        kv.insert("mode", self.mode);
        kv.insert("cap", self.cap);
        kv.insert("ms.filters", self.ms.filters);
        kv.insert("ms.epochs", self.ms.epochs);
        kv.insert("ms.batch_size", self.ms.batch_size);
        kv.insert("ms.lr", self.ms.adam.lr);
        kv.insert("ms.lambda_sparse", self.ms.lambda_sparse);
        kv.insert("gan.base_channels", self.gan_base_channels);
        kv.insert("gan.epochs", self.gan.epochs);
        kv.insert("gan.batch_size", self.gan.batch_size);
        kv.insert("gan.lr", self.gan.adam.lr);
        kv.insert("gan.beta1", self.gan.adam.beta1);
        kv.insert("gan.beta2", self.gan.adam.beta2);
        kv.insert("gan.lambda_l1", self.gan.lambda_l1);
        kv.insert("gan.lambda_l2", self.gan.lambda_l2);
        kv.insert("score.z_samples", self.z_samples);
        kv.insert("seed", self.seed);
        kv
    }

    pub fn window_spec(&self) -> WindowSpec {
        WindowSpec {
            bin_dt: self.bin_dt,
            bins: self.bins,
            stride: self.stride,
            mode: self.mode,
        }
    }

    pub fn gan_config(&self) -> Result<GanConfig, GanError> {
        GanConfig::new(
            self.height as usize,
            self.width as usize,
            self.gan_base_channels,
        )
    }

    fn check_stream(&self, stream: &EventStream) -> Result<(), PipelineError> {
        if (stream.width(), stream.height()) != (self.width, self.height) {
            return Err(PipelineError::ShapeMismatch {
                expected: format!("{}x{} stream", self.width, self.height),
                got: format!("{}x{}", stream.width(), stream.height()),
            });
        }
        Ok(())
    }
}

/// Normalized windows covering `[t_start, t_end)`.
pub fn windows(
    stream: &EventStream,
    t_start: u64,
    t_end: u64,
    cfg: &PipelineConfig,
) -> Result<Vec<WindowSample>, PipelineError> {
    cfg.check_stream(stream)?;
    Ok(sliding_windows(stream, t_start, t_end, cfg.window_spec())?
        .iter()
        .map(|w| w.normalize(cfg.cap))
        .collect())
}

/// A stream with the time span to cut windows from.
#[derive(Debug, Clone, Copy)]
pub struct Sequence<'a> {
    pub stream: &'a EventStream,
    pub t_start: u64,
    pub t_end: u64,
}

impl<'a> Sequence<'a> {
    /// Whole stream, ending just after the last event.
    pub fn whole(stream: &'a EventStream) -> Self {
        Self {
            stream,
            t_start: 0,
            t_end: stream.end_time(),
        }
    }
}

fn all_windows(
    seqs: &[Sequence<'_>],
    cfg: &PipelineConfig,
) -> Result<Vec<WindowSample>, PipelineError> {
    let mut out = Vec::new();
    for s in seqs {
        out.extend(windows(s.stream, s.t_start, s.t_end, cfg)?);
    }
    Ok(out)
}

pub fn train_memory_surface(
    seqs: &[Sequence<'_>],
    cfg: &PipelineConfig,
) -> Result<(MsNet, MsTrainReport), PipelineError> {
    let vols: Vec<_> = all_windows(seqs, cfg)?
        .into_iter()
        .map(|w| w.input)
        .collect();
    Ok(msnet::train_ms(&vols, &cfg.ms, cfg.seed)?)
}

pub fn train_predictor(
    seqs: &[Sequence<'_>],
    ms: &MsNet,
    cfg: &PipelineConfig,
) -> Result<(GanParams, gan::GanCurves), PipelineError> {
    check_ms(ms, cfg)?;
    let wins = all_windows(seqs, cfg)?;
    Ok(gan::train_gan_on_windows(
        &wins,
        ms,
        cfg.gan_config()?,
        cfg.gan,
        cfg.seed,
    )?)
}

fn check_ms(ms: &MsNet, cfg: &PipelineConfig) -> Result<(), PipelineError> {
    if ms.bins() != cfg.bins {
        return Err(PipelineError::ShapeMismatch {
            expected: format!("{} bins", cfg.bins),
            got: format!("memory-surface checkpoint with {} bins", ms.bins()),
        });
    }
    Ok(())
}

/// Per-frame prediction errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSeries {
    /// Start of the first predicted bin, microseconds.
    pub t0: u64,
    pub frame_dt: u64,
    pub scores: Vec<f64>,
    pub labels: Option<Vec<u8>>,
}

impl ScoreSeries {
    pub fn frame_t0(&self, i: usize) -> u64 {
        self.t0 + i as u64 * self.frame_dt
    }

    /// Attaches frame labels from a ground-truth track.
    pub fn with_labels(mut self, track: &LabelTrack) -> Self {
        self.labels = Some(label_frames(
            track,
            self.t0,
            self.frame_dt,
            self.scores.len(),
        ));
        self
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,t0_us,mse,label\n");
        for (i, s) in self.scores.iter().enumerate() {
            let label = self
                .labels
                .as_ref()
                .map(|l| l[i].to_string())
                .unwrap_or_default();
            let _ = writeln!(out, "{i},{},{s},{label}", self.frame_t0(i));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, PipelineError> {
        let err = |line: usize, reason: &str| PipelineError::ScoreCsv {
            line,
            reason: reason.to_string(),
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == "frame,t0_us,mse,label" => {}
            _ => return Err(err(1, "missing header `frame,t0_us,mse,label`")),
        }
        let mut t0s = Vec::new();
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for (i, line) in lines {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 4 {
                return Err(err(n, "expected 4 fields"));
            }
            if f[0].parse::<usize>().ok() != Some(scores.len()) {
                return Err(err(n, "frame indices must count up from 0"));
            }
            t0s.push(f[1].parse::<u64>().map_err(|_| err(n, "bad t0_us"))?);
            let s: f64 = f[2].parse().map_err(|_| err(n, "bad mse"))?;
            if !(s.is_finite() && s >= 0.0) {
                return Err(err(n, "mse must be finite and >= 0"));
            }
            scores.push(s);
            labels.push(match f[3] {
                "" => None,
                "0" => Some(0),
                "1" => Some(1),
                _ => return Err(err(n, "label must be 0, 1 or empty")),
            });
        }
        if scores.is_empty() {
            return Err(PipelineError::EmptySeries);
        }
        let frame_dt = if t0s.len() > 1 { t0s[1] - t0s[0] } else { 1 };
        if t0s
            .windows(2)
            .any(|w| w[1].checked_sub(w[0]) != Some(frame_dt))
            || frame_dt == 0
        {
            return Err(err(0, "t0_us must be evenly spaced"));
        }
        let labels = if labels.iter().all(Option::is_some) {
            Some(labels.into_iter().flatten().collect())
        } else if labels.iter().all(Option::is_none) {
            None
        } else {
            return Err(err(0, "labels must be given for all frames or none"));
        };
        Ok(Self {
            t0: t0s[0],
            frame_dt,
            scores,
            labels,
        })
    }
}

/// Trained models needed for scoring.
#[derive(Debug, Clone, PartialEq)]
pub struct Models {
    pub ms: MsNet,
    pub gan: GanParams,
}

fn frame_mse(pred: &[f32], target: &[f32]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&a, &b)| (f64::from(a) - f64::from(b)).powi(2))
        .sum::<f64>()
        / pred.len() as f64
}

/// Scores every window of `seq`: the next frame is predicted from the memory
/// surface of the preceding bins and compared with the true frame.
pub fn score_sequence(
    models: &Models,
    seq: Sequence<'_>,
    cfg: &PipelineConfig,
) -> Result<ScoreSeries, PipelineError> {
    check_ms(&models.ms, cfg)?;
    let gc = models.gan.config;
    if (gc.height, gc.width) != (cfg.height as usize, cfg.width as usize) {
        return Err(PipelineError::ShapeMismatch {
            expected: format!("{}x{} frames", cfg.width, cfg.height),
            got: format!("generator for {}x{}", gc.width, gc.height),
        });
    }
    let wins = windows(seq.stream, seq.t_start, seq.t_end, cfg)?;
    let samples = gan::gan_samples(&wins, &models.ms)?;
    let plane = (cfg.width * cfg.height) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0005_c0e5);
    let mut scores = Vec::with_capacity(samples.len());
    for s in &samples {
        let score = if cfg.z_samples == 0 {
            frame_mse(&gan::g_forward(&models.gan, &s.y, &vec![0.0; plane])?, &s.x)
        } else {
            let mut total = 0.0;
            for _ in 0..cfg.z_samples {
                let z = gan::sample_noise(&mut rng, plane);
                total += frame_mse(&gan::g_forward(&models.gan, &s.y, &z)?, &s.x);
            }
            total / cfg.z_samples as f64
        };
        scores.push(score);
    }
    Ok(ScoreSeries {
        t0: wins[0].target_t0(),
        frame_dt: cfg.stride as u64 * cfg.bin_dt,
        scores,
        labels: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
    pub precision: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub auc: f64,
    pub best_f1: f64,
    pub threshold: f64,
    /// One point per distinct score, thresholds in decreasing order.
    pub curve: Vec<RocPoint>,
}

/// ROC over every distinct score as threshold (anomaly iff `score >= t`).
pub fn evaluate(series: &ScoreSeries) -> Result<EvalMetrics, PipelineError> {
    let labels = series.labels.as_ref().ok_or(PipelineError::MissingLabels)?;
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(PipelineError::SingleClass);
    }
    let mut order: Vec<usize> = (0..series.scores.len()).collect();
    order.sort_by(|&a, &b| series.scores[b].total_cmp(&series.scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let t = series.scores[order[i]];
        while i < order.len() && series.scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = 2.0 * tp as f64 / (2 * tp + fp + (pos - tp)) as f64;
        curve.push(RocPoint {
            threshold: t,
            tpr: tp as f64 / pos as f64,
            fpr: fp as f64 / neg as f64,
            precision: tp as f64 / (tp + fp) as f64,
            f1,
        });
    }
    let mut auc = 0.0;
    let (mut px, mut py) = (0.0, 0.0);
    for p in &curve {
        auc += (p.fpr - px) * (p.tpr + py) / 2.0;
        (px, py) = (p.fpr, p.tpr);
    }
    let best = curve
        .iter()
        .fold(None::<&RocPoint>, |b, p| match b {
            Some(b) if b.f1 >= p.f1 => Some(b),
            _ => Some(p),
        })
        .expect("curve is non-empty");
    Ok(EvalMetrics {
        auc,
        best_f1: best.f1,
        threshold: best.threshold,
        curve,
    })
}

/// Mean score over frames with the given label.
pub fn class_mean(series: &ScoreSeries, label: u8) -> Option<f64> {
    let labels = series.labels.as_ref()?;
    let v: Vec<f64> = series
        .scores
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == label)
        .map(|(s, _)| *s)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Static SVG line chart of the scores. Anomalous runs are shaded and the
/// y axis spans `[0, 1.05 * max]`.
pub fn plot_scores(series: &ScoreSeries) -> Result<String, PipelineError> {
    const W: f64 = 800.0;
    const H: f64 = 300.0;
    const LEFT: f64 = 60.0;
    const RIGHT: f64 = 20.0;
    const TOP: f64 = 20.0;
    const BOTTOM: f64 = 40.0;
    let n = series.scores.len();
    if n == 0 {
        return Err(PipelineError::EmptySeries);
    }
    let max = series.scores.iter().copied().fold(0.0, f64::max);
    let y_max = if max > 0.0 { max * 1.05 } else { 1.0 };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let step = if n > 1 { pw / (n - 1) as f64 } else { 0.0 };
    let px = |i: usize| LEFT + i as f64 * step;
    let py = |v: f64| TOP + ph * (1.0 - v / y_max);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(
        svg,
        r#"<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>"#
    );
    if let Some(labels) = &series.labels {
        let mut i = 0;
        while i < n {
            if labels[i] == 1 {
                let start = i;
                while i < n && labels[i] == 1 {
                    i += 1;
                }
                let x0 = (px(start) - step / 2.0).max(LEFT);
                let x1 = (px(i - 1) + step / 2.0).min(LEFT + pw);
                let _ = writeln!(
                    svg,
                    r##"<rect class="anomaly" x="{x0:.2}" y="{TOP:.2}" width="{:.2}" height="{ph:.2}" fill="#f4b6b6" fill-opacity="0.6"/>"##,
                    (x1 - x0).max(1.0)
                );
            } else {
                i += 1;
            }
        }
    }
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw,
        TOP + ph
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + ph
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">frame</text>"#,
        LEFT + pw / 2.0,
        H - 8.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" font-size="12" transform="rotate(-90 14 {:.2})" text-anchor="middle">MSE</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">0</text>"#,
        LEFT - 4.0,
        TOP + ph
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{y_max:.4e}</text>"#,
        LEFT - 4.0,
        TOP + 10.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
        LEFT + pw,
        H - 24.0,
        n - 1
    );
    let points: Vec<String> = series
        .scores
        .iter()
        .enumerate()
        .map(|(i, &s)| format!("{:.2},{:.2}", px(i), py(s)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline fill="none" stroke="#1f4e9c" stroke-width="1.5" points="{}"/>"##,
        points.join(" ")
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}
