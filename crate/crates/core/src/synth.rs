//! Synthetic event-camera scenes with frame-level ground truth.
//!
//! Objects are binary occupancy masks moving over an empty background. At
//! every simulation tick the union mask is compared with the previous one and
//! every toggled pixel emits one event: `+1` when an object enters the pixel,
//! `-1` when it leaves. Faster objects toggle more pixels per unit time,
//! which is what separates "running" from "walking" in the presets.
//!
//! A pixel is occupied when its centre `(x + 0.5, y + 0.5)` lies inside the
//! shape. Rectangles are positioned by their top-left corner, disks by their
//! centre.
//!
//! The presets only cover speed, trajectory and shape anomalies. Multi-agent
//! behaviours (fighting, theft) cannot be staged with rigid masks.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{ConfigError, KeyValues};
use crate::events::{Event, EventStream, Polarity};

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("invalid scene config: {0}")]
    Config(String),
    #[error(transparent)]
    Parse(#[from] ConfigError),
}

fn invalid(msg: impl Into<String>) -> SceneError {
    SceneError::Config(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Rect { w: f64, h: f64 },
    Disk { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomaly => 1,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Normal => "normal",
            Label::Anomaly => "anomaly",
        })
    }
}

impl FromStr for Label {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" | "0" => Ok(Label::Normal),
            "anomaly" | "1" => Ok(Label::Anomaly),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// A velocity change at an absolute time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Turn {
    pub at: u64,
    /// Pixels per second.
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObjectSpec {
    pub shape: Shape,
    /// Position at `t_on`, pixels. May be off-screen.
    pub start: (f64, f64),
    /// Initial velocity, pixels per second.
    pub velocity: (f64, f64),
    /// Later velocity segments, sorted by time.
    pub turns: Vec<Turn>,
    pub t_on: u64,
    pub t_off: u64,
    pub label: Label,
}

impl ObjectSpec {
    pub fn rect(w: f64, h: f64, start: (f64, f64), velocity: (f64, f64)) -> Self {
        Self {
            shape: Shape::Rect { w, h },
            start,
            velocity,
            turns: Vec::new(),
            t_on: 0,
            t_off: u64::MAX,
            label: Label::Normal,
        }
    }

    pub fn disk(r: f64, centre: (f64, f64), velocity: (f64, f64)) -> Self {
        Self {
            shape: Shape::Disk { r },
            ..Self::rect(0.0, 0.0, centre, velocity)
        }
    }

    pub fn active(mut self, t_on: u64, t_off: u64) -> Self {
        self.t_on = t_on;
        self.t_off = t_off;
        self
    }

    pub fn labeled(mut self, label: Label) -> Self {
        self.label = label;
        self
    }

    pub fn with_turn(mut self, at: u64, velocity: (f64, f64)) -> Self {
        self.turns.push(Turn { at, velocity });
        self
    }

    pub fn is_active(&self, t: u64) -> bool {
        self.t_on <= t && t < self.t_off
    }

    /// Reference position (top-left or centre) at time `t >= t_on`.
    pub fn position(&self, t: u64) -> (f64, f64) {
        let (mut x, mut y) = self.start;
        let mut from = self.t_on;
        let mut v = self.velocity;
        for turn in &self.turns {
            if turn.at >= t {
                break;
            }
            if turn.at > from {
                let dt = (turn.at - from) as f64 * 1e-6;
                x += v.0 * dt;
                y += v.1 * dt;
                from = turn.at;
            }
            v = turn.velocity;
        }
        let dt = t.saturating_sub(from) as f64 * 1e-6;
        (x + v.0 * dt, y + v.1 * dt)
    }

    /// Marks covered pixels in `mask`; returns whether any pixel was covered.
    fn rasterize(&self, t: u64, width: usize, height: usize, mask: &mut [bool]) -> bool {
        let (px, py) = self.position(t);
        // Pixel index range whose centres can fall inside [lo, hi).
        let span = |lo: f64, hi: f64, n: usize| -> (usize, usize) {
            let a = (lo - 0.5).ceil().max(0.0);
            let b = (hi - 0.5).ceil().min(n as f64);
            if b <= a {
                (0, 0)
            } else {
                (a as usize, b as usize)
            }
        };
        let mut any = false;
        match self.shape {
            Shape::Rect { w, h } => {
                let (x0, x1) = span(px, px + w, width);
                let (y0, y1) = span(py, py + h, height);
                for y in y0..y1 {
                    for x in x0..x1 {
                        mask[y * width + x] = true;
                        any = true;
                    }
                }
            }
            Shape::Disk { r } => {
                let (x0, x1) = span(px - r, px + r + 1e-9, width);
                let (y0, y1) = span(py - r, py + r + 1e-9, height);
                for y in y0..y1 {
                    let dy = y as f64 + 0.5 - py;
                    for x in x0..x1 {
                        let dx = x as f64 + 0.5 - px;
                        if dx * dx + dy * dy <= r * r {
                            mask[y * width + x] = true;
                            any = true;
                        }
                    }
                }
            }
        }
        any
    }

    fn validate(&self, idx: usize) -> Result<(), SceneError> {
        if self.t_on >= self.t_off {
            return Err(invalid(format!("object {idx}: t_on must be < t_off")));
        }
        let finite = |v: (f64, f64)| v.0.is_finite() && v.1.is_finite();
        if !finite(self.start)
            || !finite(self.velocity)
            || !self.turns.iter().all(|t| finite(t.velocity))
        {
            return Err(invalid(format!(
                "object {idx}: non-finite position or velocity"
            )));
        }
        if !self.turns.windows(2).all(|w| w[0].at <= w[1].at) {
            return Err(invalid(format!("object {idx}: turns must be time-sorted")));
        }
        let ok = match self.shape {
            Shape::Rect { w, h } => w > 0.0 && h > 0.0,
            Shape::Disk { r } => r > 0.0,
        };
        if !ok {
            return Err(invalid(format!(
                "object {idx}: shape extents must be positive"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    pub width: u32,
    pub height: u32,
    /// Microseconds.
    pub duration: u64,
    /// Simulation tick, microseconds.
    pub micro_step: u64,
    pub objects: Vec<ObjectSpec>,
    pub seed: u64,
    /// Background noise, events per pixel per second.
    pub noise_rate: f64,
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        if self.width == 0 || self.height == 0 || self.width > 1 << 16 || self.height > 1 << 16 {
            return Err(invalid("width and height must be in 1..=65536"));
        }
        if self.micro_step == 0 {
            return Err(invalid("micro_step must be > 0"));
        }
        if self.duration % self.micro_step != 0 {
            return Err(invalid("duration must be a multiple of micro_step"));
        }
        if self.objects.is_empty() {
            return Err(invalid("at least one object is required"));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(invalid("noise_rate must be finite and >= 0"));
        }
        for (i, o) in self.objects.iter().enumerate() {
            o.validate(i)?;
        }
        Ok(())
    }

    /// Reads the flat key=value scene schema (see the README).
    pub fn from_kv(kv: &KeyValues) -> Result<Self, SceneError> {
        let width = kv.get_or("width", 64u32)?;
        let height = kv.get_or("height", 64u32)?;
        let seed = kv.get_or("seed", 0u64)?;
        if let Some(preset) = kv.raw("preset") {
            let duration = kv.get("duration_us")?;
            let mut cfg = Preset::from_str(preset)
                .map_err(invalid)?
                .build(width, height, seed, duration);
            cfg.micro_step = kv.get_or("micro_step_us", cfg.micro_step)?;
            cfg.noise_rate = kv.get_or("noise_rate", cfg.noise_rate)?;
            cfg.validate()?;
            return Ok(cfg);
        }
        let n: usize = kv.require("objects")?;
        let mut objects = Vec::with_capacity(n);
        for i in 0..n {
            objects.push(object_from_kv(kv, i)?);
        }
        let cfg = SceneConfig {
            width,
            height,
            duration: kv.require("duration_us")?,
            micro_step: kv.get_or("micro_step_us", 1000)?,
            objects,
            seed,
            noise_rate: kv.get_or("noise_rate", 0.0)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        kv.insert("width", self.width);
        kv.insert("height", self.height);
        kv.insert("duration_us", self.duration);
        kv.insert("micro_step_us", self.micro_step);
        kv.insert("seed", self.seed);
        kv.insert("noise_rate", self.noise_rate);
        kv.insert("objects", self.objects.len());
        for (i, o) in self.objects.iter().enumerate() {
            let p = format!("object.{i}.");
            let shape = match o.shape {
                Shape::Rect { w, h } => format!("rect {w} {h}"),
                Shape::Disk { r } => format!("disk {r}"),
            };
            kv.insert(format!("{p}shape"), shape);
            kv.insert(format!("{p}start"), format!("{} {}", o.start.0, o.start.1));
            kv.insert(
                format!("{p}velocity"),
                format!("{} {}", o.velocity.0, o.velocity.1),
            );
            if !o.turns.is_empty() {
                let turns: Vec<String> = o
                    .turns
                    .iter()
                    .map(|t| format!("{}:{}:{}", t.at, t.velocity.0, t.velocity.1))
                    .collect();
                kv.insert(format!("{p}turns"), turns.join(" "));
            }
            kv.insert(format!("{p}t_on"), o.t_on);
            kv.insert(format!("{p}t_off"), o.t_off);
            kv.insert(format!("{p}label"), o.label);
        }
        kv
    }
}

fn object_from_kv(kv: &KeyValues, i: usize) -> Result<ObjectSpec, SceneError> {
    let key = |name: &str| format!("object.{i}.{name}");
    let floats = |name: &str, n: usize| -> Result<Vec<f64>, SceneError> {
        let k = key(name);
        let raw = kv.raw(&k).ok_or_else(|| ConfigError::Missing(k.clone()))?;
        let vals: Result<Vec<f64>, _> = raw.split_whitespace().map(str::parse).collect();
        match vals {
            Ok(v) if v.len() == n => Ok(v),
            _ => Err(ConfigError::BadValue {
                key: k,
                value: raw.to_string(),
            }
            .into()),
        }
    };
    let shape_key = key("shape");
    let shape_raw = kv
        .raw(&shape_key)
        .ok_or_else(|| ConfigError::Missing(shape_key.clone()))?;
    let bad_shape = || ConfigError::BadValue {
        key: shape_key.clone(),
        value: shape_raw.to_string(),
    };
    let parts: Vec<&str> = shape_raw.split_whitespace().collect();
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad_shape());
    let shape = match parts.as_slice() {
        ["rect", w, h] => Shape::Rect {
            w: num(w)?,
            h: num(h)?,
        },
        ["disk", r] => Shape::Disk { r: num(r)? },
        _ => return Err(bad_shape().into()),
    };
    let start = floats("start", 2)?;
    let velocity = floats("velocity", 2)?;
    let mut turns = Vec::new();
    if let Some(raw) = kv.raw(&key("turns")) {
        for tok in raw.split_whitespace() {
            let bad = || ConfigError::BadValue {
                key: key("turns"),
                value: tok.to_string(),
            };
            let f: Vec<&str> = tok.split(':').collect();
            if f.len() != 3 {
                return Err(bad().into());
            }
            turns.push(Turn {
                at: f[0].parse().map_err(|_| bad())?,
                velocity: (
                    f[1].parse().map_err(|_| bad())?,
                    f[2].parse().map_err(|_| bad())?,
                ),
            });
        }
    }
    let label = match kv.raw(&key("label")) {
        None => Label::Normal,
        Some(s) => s.parse().map_err(|_| ConfigError::BadValue {
            key: key("label"),
            value: s.to_string(),
        })?,
    };
    Ok(ObjectSpec {
        shape,
        start: (start[0], start[1]),
        velocity: (velocity[0], velocity[1]),
        turns,
        t_on: kv.get_or(&key("t_on"), 0)?,
        t_off: kv.get_or(&key("t_off"), u64::MAX)?,
        label,
    })
}

/// Ground-truth intervals covering `[0, duration)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelTrack {
    pub intervals: Vec<(u64, u64, Label)>,
}

impl LabelTrack {
    pub fn all_normal(duration: u64) -> Self {
        Self {
            intervals: vec![(0, duration, Label::Normal)],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t0_us,t1_us,label\n");
        for (a, b, l) in &self.intervals {
            out.push_str(&format!("{a},{b},{l}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, ConfigError> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t0_us,t1_us,label") {
            return Err(ConfigError::Syntax { line: 1 });
        }
        let mut intervals = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.trim().split(',').collect();
            let bad = || ConfigError::Syntax { line: i + 2 };
            if f.len() != 3 {
                return Err(bad());
            }
            intervals.push((
                f[0].parse().map_err(|_| bad())?,
                f[1].parse().map_err(|_| bad())?,
                f[2].parse().map_err(|_| bad())?,
            ));
        }
        Ok(Self { intervals })
    }
}

/// Frame `i` is 1 iff `[t0 + i*frame_dt, t0 + (i+1)*frame_dt)` overlaps an
/// anomaly interval.
pub fn label_frames(track: &LabelTrack, t0: u64, frame_dt: u64, n_frames: usize) -> Vec<u8> {
    assert!(frame_dt > 0, "frame_dt must be positive");
    (0..n_frames as u64)
        .map(|i| {
            let a = t0 + i * frame_dt;
            let b = a + frame_dt;
            let hit = track
                .intervals
                .iter()
                .any(|&(c, d, l)| l == Label::Anomaly && a < d && c < b);
            u8::from(hit)
        })
        .collect()
}

struct Occupancy {
    mask: Vec<bool>,
    anomaly_visible: bool,
}

fn occupancy(cfg: &SceneConfig, t: u64) -> Occupancy {
    let (w, h) = (cfg.width as usize, cfg.height as usize);
    let mut mask = vec![false; w * h];
    let mut anomaly_visible = false;
    let mut scratch = vec![false; w * h];
    for o in cfg.objects.iter().filter(|o| o.is_active(t)) {
        if o.label == Label::Anomaly {
            scratch.iter_mut().for_each(|m| *m = false);
            if o.rasterize(t, w, h, &mut scratch) {
                anomaly_visible = true;
                mask.iter_mut().zip(&scratch).for_each(|(m, s)| *m |= *s);
            }
        } else {
            o.rasterize(t, w, h, &mut mask);
        }
    }
    Occupancy {
        mask,
        anomaly_visible,
    }
}

/// Simulates the scene. Deterministic for a fixed config and seed.
pub fn render_scene(cfg: &SceneConfig) -> Result<(EventStream, LabelTrack), SceneError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = cfg.width as usize;
    let steps = cfg.duration / cfg.micro_step;
    let noise_p = cfg.noise_rate * cfg.micro_step as f64 * 1e-6;

    let mut events = Vec::new();
    let mut step_events = Vec::new();
    let mut intervals: Vec<(u64, u64, Label)> = Vec::new();
    let mut prev = occupancy(cfg, 0);
    for k in 0..steps {
        let t = k * cfg.micro_step;
        let next = occupancy(cfg, t + cfg.micro_step);
        step_events.clear();
        for (idx, (&a, &b)) in prev.mask.iter().zip(&next.mask).enumerate() {
            if a != b {
                let p = if b { Polarity::On } else { Polarity::Off };
                let jitter = rng.random_range(0..cfg.micro_step);
                step_events.push(Event::new(
                    (idx % w) as u16,
                    (idx / w) as u16,
                    t + jitter,
                    p,
                ));
            }
        }
        if noise_p > 0.0 {
            for idx in 0..prev.mask.len() {
                if rng.random::<f64>() < noise_p {
                    let p = if rng.random::<bool>() {
                        Polarity::On
                    } else {
                        Polarity::Off
                    };
                    let jitter = rng.random_range(0..cfg.micro_step);
                    step_events.push(Event::new(
                        (idx % w) as u16,
                        (idx / w) as u16,
                        t + jitter,
                        p,
                    ));
                }
            }
        }
        step_events.sort_by_key(|e| e.t);
        events.extend_from_slice(&step_events);

        let label = if prev.anomaly_visible || next.anomaly_visible {
            Label::Anomaly
        } else {
            Label::Normal
        };
        match intervals.last_mut() {
            Some(last) if last.2 == label => last.1 = t + cfg.micro_step,
            _ => intervals.push((t, t + cfg.micro_step, label)),
        }
        prev = next;
    }
    if intervals.is_empty() {
        intervals.push((0, cfg.duration, Label::Normal));
    }
    let stream = EventStream::new(cfg.width, cfg.height, events)
        .expect("simulator only emits in-bounds events");
    Ok((stream, LabelTrack { intervals }))
}

/// Named scene recipes used for training and evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Pedestrian-sized rectangles crossing at walking speed.
    Walking,
    /// Walking scene with running-speed crossings labelled as anomalies.
    Running,
    /// Walking scene where one pedestrian reverses direction mid-crossing.
    Trajectory,
    /// Walking scene with a large disk crossing.
    Shape,
    /// Walking interleaved with running and shape anomalies.
    Mixed,
}

impl FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "walking" => Preset::Walking,
            "running" => Preset::Running,
            "trajectory" => Preset::Trajectory,
            "shape" => Preset::Shape,
            "mixed" => Preset::Mixed,
            other => return Err(format!("unknown preset `{other}`")),
        })
    }
}

pub const WALK_SPEED: (f64, f64) = (34.0, 46.0);
pub const RUN_SPEED: (f64, f64) = (150.0, 190.0);
pub const PEDESTRIAN: (f64, f64) = (6.0, 14.0);

#[derive(Debug, Clone, Copy)]
enum Crossing {
    Walk,
    Run,
    Reverse,
    Disk,
}

impl Preset {
    fn default_duration(self) -> u64 {
        match self {
            Preset::Walking => 8_000_000,
            Preset::Mixed => 8_000_000,
            _ => 6_000_000,
        }
    }

    fn plan(self) -> &'static [Crossing] {
        use Crossing::*;
        match self {
            Preset::Walking => &[Walk, Walk, Walk, Walk, Walk, Walk],
            Preset::Running => &[Walk, Run, Walk, Run],
            Preset::Trajectory => &[Walk, Reverse, Walk],
            Preset::Shape => &[Walk, Disk, Walk],
            Preset::Mixed => &[Walk, Run, Walk, Disk, Run, Walk, Run],
        }
    }

    /// Builds the scene. Crossings are laid out back to back with a short
    /// random gap; each one draws its row, direction and speed from `seed`.
    pub fn build(self, width: u32, height: u32, seed: u64, duration: Option<u64>) -> SceneConfig {
        let duration = duration.unwrap_or_else(|| self.default_duration());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5cee_e000_0000);
        let (wf, hf) = (f64::from(width), f64::from(height));
        let mut objects = Vec::new();
        let mut t = 0u64;
        let plan = self.plan();
        let mut i = 0usize;
        while t < duration {
            let kind = plan[i % plan.len()];
            i += 1;
            let rightward = rng.random::<bool>();
            let dir = if rightward { 1.0 } else { -1.0 };
            let (speed, label) = match kind {
                Crossing::Run => (rng.random_range(RUN_SPEED.0..RUN_SPEED.1), Label::Anomaly),
                Crossing::Reverse => (rng.random_range(WALK_SPEED.0..WALK_SPEED.1), Label::Anomaly),
                _ => (
                    rng.random_range(WALK_SPEED.0..WALK_SPEED.1),
                    if matches!(kind, Crossing::Disk) {
                        Label::Anomaly
                    } else {
                        Label::Normal
                    },
                ),
            };
            let obj = match kind {
                Crossing::Disk => {
                    let r = (hf * 0.19).max(2.0);
                    let cy = rng.random_range(r..(hf - r).max(r + 1.0));
                    let cx = if rightward { -r } else { wf + r };
                    ObjectSpec::disk(r, (cx, cy), (dir * speed, 0.0))
                }
                _ => {
                    let (pw, ph) = (PEDESTRIAN.0 * wf / 64.0, PEDESTRIAN.1 * hf / 64.0);
                    let y = rng.random_range(0.0..(hf - ph).max(1.0)).floor();
                    let x = if rightward { -pw } else { wf };
                    ObjectSpec::rect(pw, ph, (x, y), (dir * speed, 0.0))
                }
            };
            let extent = match obj.shape {
                Shape::Rect { w, .. } => w,
                Shape::Disk { r } => 2.0 * r,
            };
            let travel = wf + extent;
            let mut cross_us = (travel / speed * 1e6).ceil() as u64;
            let mut obj = obj;
            if let Crossing::Reverse = kind {
                // Walk to mid-screen, turn back, exit where it came from.
                let half = ((wf / 2.0 + extent) / speed * 1e6).ceil() as u64;
                obj = obj.with_turn(t + half, (-dir * speed, 0.0));
                cross_us = 2 * half;
            }
            let t_off = (t + cross_us).min(duration);
            objects.push(obj.active(t, t_off).labeled(label));
            let gap = rng.random_range(100_000..400_000);
            t = t + cross_us + gap;
        }
        SceneConfig {
            width,
            height,
            duration,
            micro_step: 1000,
            objects,
            seed,
            noise_rate: 0.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent toggle counter: rasterize every tick with a plain
    /// per-pixel inside test and diff consecutive masks.
    fn brute_force_toggles(cfg: &SceneConfig) -> usize {
        let (w, h) = (cfg.width as usize, cfg.height as usize);
        let inside = |o: &ObjectSpec, t: u64, x: usize, y: usize| -> bool {
            if !o.is_active(t) {
                return false;
            }
            let (px, py) = o.position(t);
            let (cx, cy) = (x as f64 + 0.5, y as f64 + 0.5);
            match o.shape {
                Shape::Rect { w, h } => cx >= px && cx < px + w && cy >= py && cy < py + h,
                Shape::Disk { r } => (cx - px).powi(2) + (cy - py).powi(2) <= r * r,
            }
        };
        let mask = |t: u64| -> Vec<bool> {
            (0..w * h)
                .map(|i| cfg.objects.iter().any(|o| inside(o, t, i % w, i / w)))
                .collect()
        };
        let steps = cfg.duration / cfg.micro_step;
        (0..steps)
            .map(|k| {
                let a = mask(k * cfg.micro_step);
                let b = mask((k + 1) * cfg.micro_step);
                a.iter().zip(&b).filter(|(x, y)| x != y).count()
            })
            .sum()
    }

    fn one_object(obj: ObjectSpec, steps: u64) -> SceneConfig {
        SceneConfig {
            width: 32,
            height: 32,
            duration: steps * 1000,
            micro_step: 1000,
            objects: vec![obj],
            seed: 3,
            noise_rate: 0.0,
        }
    }

    #[test]
    fn rectangle_sweep_emits_leading_and_trailing_edges() {
        // 1 pixel per 1 ms tick = 1000 px/s.
        let cfg = one_object(ObjectSpec::rect(4.0, 4.0, (5.0, 10.0), (1000.0, 0.0)), 10);
        let (stream, _) = render_scene(&cfg).unwrap();
        assert_eq!(stream.len(), 80);
        assert_eq!(brute_force_toggles(&cfg), 80);
        let on = stream
            .events()
            .iter()
            .filter(|e| e.p == Polarity::On)
            .count();
        assert_eq!(on, 40);
        for e in stream.events() {
            match e.p {
                Polarity::On => assert!(e.x >= 9),
                Polarity::Off => assert!(e.x <= 14),
            }
        }
    }

    #[test]
    fn static_object_is_silent() {
        let cfg = one_object(ObjectSpec::rect(4.0, 4.0, (5.0, 5.0), (0.0, 0.0)), 50);
        assert!(render_scene(&cfg).unwrap().0.is_empty());
        // Appearing later emits the whole footprint once.
        let cfg = one_object(
            ObjectSpec::rect(4.0, 4.0, (5.0, 5.0), (0.0, 0.0)).active(10_000, u64::MAX),
            50,
        );
        assert_eq!(render_scene(&cfg).unwrap().0.len(), 16);
    }

    #[test]
    fn doubling_speed_doubles_events() {
        let slow = one_object(ObjectSpec::rect(3.0, 5.0, (2.0, 8.0), (100.0, 0.0)), 100);
        let fast = one_object(ObjectSpec::rect(3.0, 5.0, (2.0, 8.0), (200.0, 0.0)), 100);
        let n_slow = brute_force_toggles(&slow);
        let n_fast = brute_force_toggles(&fast);
        assert_eq!(n_fast, 2 * n_slow);
        assert_eq!(render_scene(&slow).unwrap().0.len(), n_slow);
        assert_eq!(render_scene(&fast).unwrap().0.len(), n_fast);
    }

    #[test]
    fn presets_match_oracle_and_are_deterministic() {
        for preset in [Preset::Walking, Preset::Mixed, Preset::Trajectory] {
            let cfg = preset.build(24, 24, 11, Some(1_500_000));
            let (a, la) = render_scene(&cfg).unwrap();
            let (b, lb) = render_scene(&cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(la, lb);
            assert_eq!(a.len(), brute_force_toggles(&cfg));
        }
    }

    #[test]
    fn label_track_covers_duration() {
        let cfg = Preset::Mixed.build(32, 32, 5, None);
        let (_, track) = render_scene(&cfg).unwrap();
        assert_eq!(track.intervals.first().unwrap().0, 0);
        assert_eq!(track.intervals.last().unwrap().1, cfg.duration);
        for w in track.intervals.windows(2) {
            assert_eq!(w[0].1, w[1].0);
            assert_ne!(w[0].2, w[1].2);
        }
        assert!(track.intervals.iter().any(|i| i.2 == Label::Anomaly));
        assert_eq!(LabelTrack::from_csv(&track.to_csv()).unwrap(), track);
    }

    #[test]
    fn noise_events_are_valid_and_seeded() {
        let mut cfg = one_object(ObjectSpec::rect(3.0, 3.0, (1.0, 1.0), (0.0, 0.0)), 200);
        cfg.noise_rate = 5.0;
        let (a, _) = render_scene(&cfg).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, render_scene(&cfg).unwrap().0);
        cfg.seed += 1;
        assert_ne!(a, render_scene(&cfg).unwrap().0);
    }

    #[test]
    fn frame_labels() {
        let normal = LabelTrack::all_normal(1000);
        assert_eq!(label_frames(&normal, 0, 100, 10), vec![0; 10]);
        let track = LabelTrack {
            intervals: vec![
                (0, 300, Label::Normal),
                (300, 400, Label::Anomaly),
                (400, 1000, Label::Normal),
            ],
        };
        assert_eq!(label_frames(&track, 0, 100, 6), vec![0, 0, 0, 1, 0, 0]);
        let track = LabelTrack {
            intervals: vec![
                (0, 250, Label::Normal),
                (250, 350, Label::Anomaly),
                (350, 1000, Label::Normal),
            ],
        };
        assert_eq!(label_frames(&track, 0, 100, 6), vec![0, 0, 1, 1, 0, 0]);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = Preset::Trajectory.build(32, 32, 2, Some(2_000_000));
        let back = SceneConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(back, cfg);

        let mut bad = cfg.clone();
        bad.duration += 1;
        assert!(render_scene(&bad).is_err());
        bad = cfg.clone();
        bad.objects.clear();
        assert!(render_scene(&bad).is_err());
        bad = cfg;
        bad.objects[0].t_off = bad.objects[0].t_on;
        assert!(render_scene(&bad).is_err());
    }

    #[test]
    fn turn_reverses_motion() {
        let o =
            ObjectSpec::rect(2.0, 2.0, (0.0, 0.0), (10.0, 0.0)).with_turn(1_000_000, (-10.0, 0.0));
        assert!((o.position(1_000_000).0 - 10.0).abs() < 1e-9);
        assert!((o.position(2_000_000).0).abs() < 1e-9);
    }
}
