//! Discretized event volumes and the two hand-crafted baseline encodings.

use std::io::{self, Read, Write};
use std::str::FromStr;

use thiserror::Error;

use crate::events::{Event, EventStream, Polarity};

#[derive(Debug, Error)]
pub enum ReprError {
    #[error("stream has empty geometry ({width}x{height})")]
    EmptyGeometry { width: u32, height: u32 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("span of {available} us is shorter than one window ({needed} us)")]
    TooShort { available: u64, needed: u64 },
    #[error("bad EVOL data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// How events are accumulated into bins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VolumeMode {
    /// Number of events per bin, polarity ignored.
    Count,
    /// Sum of polarities per bin.
    Signed,
    /// Signed polarity split linearly between the two nearest bins.
    #[default]
    Bilinear,
}

impl VolumeMode {
    pub fn tag(self) -> u8 {
        match self {
            VolumeMode::Count => 0,
            VolumeMode::Signed => 1,
            VolumeMode::Bilinear => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(VolumeMode::Count),
            1 => Some(VolumeMode::Signed),
            2 => Some(VolumeMode::Bilinear),
            _ => None,
        }
    }
}

impl FromStr for VolumeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "count" => Ok(VolumeMode::Count),
            "signed" => Ok(VolumeMode::Signed),
            "bilinear" => Ok(VolumeMode::Bilinear),
            other => Err(format!("unknown volume mode `{other}`")),
        }
    }
}

impl std::fmt::Display for VolumeMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VolumeMode::Count => "count",
            VolumeMode::Signed => "signed",
            VolumeMode::Bilinear => "bilinear",
        })
    }
}

/// A `bins x height x width` accumulation grid stored bin-major, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizedVolume {
    pub bins: usize,
    pub height: usize,
    pub width: usize,
    pub t0: u64,
    pub bin_dt: u64,
    pub mode: VolumeMode,
    pub data: Vec<f32>,
}

impl DiscretizedVolume {
    pub fn zeros(
        bins: usize,
        height: usize,
        width: usize,
        t0: u64,
        bin_dt: u64,
        mode: VolumeMode,
    ) -> Self {
        Self {
            bins,
            height,
            width,
            t0,
            bin_dt,
            mode,
            data: vec![0.0; bins * height * width],
        }
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn bin(&self, b: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[b * n..(b + 1) * n]
    }

    pub fn at(&self, b: usize, y: usize, x: usize) -> f32 {
        self.data[(b * self.height + y) * self.width + x]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum()
    }

    /// Keeps bins `[from, to)`.
    pub fn sub_bins(&self, from: usize, to: usize) -> DiscretizedVolume {
        let n = self.plane_len();
        DiscretizedVolume {
            bins: to - from,
            t0: self.t0 + from as u64 * self.bin_dt,
            data: self.data[from * n..to * n].to_vec(),
            ..*self
        }
    }

    /// Maps every entry through `v -> clamp(v, -cap, cap) / cap`.
    pub fn normalize(&self, cap: f32) -> DiscretizedVolume {
        assert!(cap > 0.0, "normalization cap must be positive");
        DiscretizedVolume {
            data: self.data.iter().map(|&v| normalize_value(v, cap)).collect(),
            ..*self
        }
    }

    pub fn write_evol<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(EVOL_MAGIC)?;
        w.write_all(&EVOL_VERSION.to_le_bytes())?;
        for d in [self.bins, self.height, self.width] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        w.write_all(&[self.mode.tag()])?;
        w.write_all(&self.t0.to_le_bytes())?;
        w.write_all(&self.bin_dt.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for v in &self.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn to_evol_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(37 + 4 * self.data.len());
        self.write_evol(&mut out)
            .expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_evol<R: Read>(mut r: R) -> Result<Self, ReprError> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != EVOL_MAGIC {
            return Err(ReprError::Format("bad magic".into()));
        }
        let mut u32buf = [0u8; 4];
        let mut read_u32 = |r: &mut R| -> io::Result<u32> {
            r.read_exact(&mut u32buf)?;
            Ok(u32::from_le_bytes(u32buf))
        };
        let version = read_u32(&mut r)?;
        if version != EVOL_VERSION {
            return Err(ReprError::Format(format!("unsupported version {version}")));
        }
        let bins = read_u32(&mut r)? as usize;
        let height = read_u32(&mut r)? as usize;
        let width = read_u32(&mut r)? as usize;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let mode = VolumeMode::from_tag(tag[0])
            .ok_or_else(|| ReprError::Format(format!("unknown mode tag {}", tag[0])))?;
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf)?;
        let t0 = u64::from_le_bytes(u64buf);
        r.read_exact(&mut u64buf)?;
        let bin_dt = u64::from_le_bytes(u64buf);
        let n = bins
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| ReprError::Format("dimensions overflow".into()))?;
        let mut raw = Vec::new();
        r.read_to_end(&mut raw)?;
        if raw.len() != n * 4 {
            return Err(ReprError::Format(format!(
                "expected {} data bytes, found {}",
                n * 4,
                raw.len()
            )));
        }
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(Self {
            bins,
            height,
            width,
            t0,
            bin_dt,
            mode,
            data,
        })
    }
}

pub const EVOL_MAGIC: &[u8; 4] = b"EVOL";
pub const EVOL_VERSION: u32 = 1;

pub fn normalize_value(v: f32, cap: f32) -> f32 {
    v.clamp(-cap, cap) / cap
}

fn check_geometry(stream: &EventStream) -> Result<(), ReprError> {
    if stream.width() == 0 || stream.height() == 0 {
        return Err(ReprError::EmptyGeometry {
            width: stream.width(),
            height: stream.height(),
        });
    }
    Ok(())
}

/// Accumulates `events` (already restricted to the window) into `vol`.
fn accumulate(vol: &mut DiscretizedVolume, events: &[Event]) {
    let (h, w, bins) = (vol.height, vol.width, vol.bins);
    let plane = h * w;
    let dt = vol.bin_dt as f64;
    for e in events {
        let pix = e.y as usize * w + e.x as usize;
        let offset = e.t - vol.t0;
        match vol.mode {
            VolumeMode::Count | VolumeMode::Signed => {
                let b = (offset / vol.bin_dt) as usize;
                let v = if vol.mode == VolumeMode::Count {
                    1.0
                } else {
                    e.p.as_f32()
                };
                vol.data[b * plane + pix] += v;
            }
            VolumeMode::Bilinear => {
                let ts = offset as f64 / dt;
                let lo = ts.floor();
                let frac = ts - lo;
                let b = lo as usize;
                let p = f64::from(e.p.as_f32());
                // Weight that would land past the last bin is dropped.
                vol.data[b * plane + pix] += (p * (1.0 - frac)) as f32;
                if frac > 0.0 && b + 1 < bins {
                    vol.data[(b + 1) * plane + pix] += (p * frac) as f32;
                }
            }
        }
    }
}

/// Bins events with `t` in `[t0, t0 + bins * bin_dt)`.
///
/// In bilinear mode an event at normalized time `t* = (t - t0) / bin_dt`
/// contributes `1 - |t* - b|` to each of the two nearest bins `b`.
pub fn discretize(
    stream: &EventStream,
    t0: u64,
    bin_dt: u64,
    bins: usize,
    mode: VolumeMode,
) -> Result<DiscretizedVolume, ReprError> {
    check_geometry(stream)?;
    if bins == 0 || bin_dt == 0 {
        return Err(ReprError::InvalidParameter(
            "bins and bin_dt must be positive".into(),
        ));
    }
    let mut vol = DiscretizedVolume::zeros(
        bins,
        stream.height() as usize,
        stream.width() as usize,
        t0,
        bin_dt,
        mode,
    );
    let t1 = t0 + bins as u64 * bin_dt;
    accumulate(&mut vol, stream.window(t0, t1));
    Ok(vol)
}

/// Past bins plus the next bin to predict.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    pub input: DiscretizedVolume,
    /// `height x width`, bin `B` of the same discretization.
    pub target: Vec<f32>,
    pub t0: u64,
}

impl WindowSample {
    pub fn normalize(&self, cap: f32) -> WindowSample {
        WindowSample {
            input: self.input.normalize(cap),
            target: self
                .target
                .iter()
                .map(|&v| normalize_value(v, cap))
                .collect(),
            t0: self.t0,
        }
    }

    /// Start of the target bin.
    pub fn target_t0(&self) -> u64 {
        self.t0 + self.input.bins as u64 * self.input.bin_dt
    }
}

/// Parameters shared by window extraction and scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub bin_dt: u64,
    pub bins: usize,
    /// Window step, in bins.
    pub stride: usize,
    pub mode: VolumeMode,
}

impl WindowSpec {
    pub fn window_len(&self) -> u64 {
        (self.bins as u64 + 1) * self.bin_dt
    }

    /// Number of windows fitting in `[t_start, t_end)`.
    pub fn count(&self, t_start: u64, t_end: u64) -> usize {
        let span = t_end.saturating_sub(t_start);
        if span < self.window_len() {
            0
        } else {
            ((span - self.window_len()) / (self.stride as u64 * self.bin_dt)) as usize + 1
        }
    }

    pub fn window_start(&self, t_start: u64, k: usize) -> u64 {
        t_start + (k * self.stride) as u64 * self.bin_dt
    }
}

/// One window per `stride` bins over `[t_start, t_end)`. Window `k` covers
/// `B + 1` bins from `t_start + k * stride * bin_dt`; the first `B` are the
/// input, the last is the target.
pub fn sliding_windows(
    stream: &EventStream,
    t_start: u64,
    t_end: u64,
    spec: WindowSpec,
) -> Result<Vec<WindowSample>, ReprError> {
    check_geometry(stream)?;
    if spec.bins == 0 || spec.bin_dt == 0 || spec.stride == 0 {
        return Err(ReprError::InvalidParameter(
            "bins, bin_dt and stride must be positive".into(),
        ));
    }
    let n = spec.count(t_start, t_end);
    if n == 0 {
        return Err(ReprError::TooShort {
            available: t_end.saturating_sub(t_start),
            needed: spec.window_len(),
        });
    }
    (0..n)
        .map(|k| {
            let t0 = spec.window_start(t_start, k);
            let full = discretize(stream, t0, spec.bin_dt, spec.bins + 1, spec.mode)?;
            Ok(WindowSample {
                target: full.bin(spec.bins).to_vec(),
                input: full.sub_bins(0, spec.bins),
                t0,
            })
        })
        .collect()
}

/// Two-channel histogram: channel 0 counts `+1` events, channel 1 counts
/// `-1` events, over `[t0, t0 + dt)`. Layout `2 x H x W`.
pub fn baseline_histogram(stream: &EventStream, t0: u64, dt: u64) -> Vec<f32> {
    let (w, h) = (stream.width() as usize, stream.height() as usize);
    let mut out = vec![0.0f32; 2 * w * h];
    for e in stream.window(t0, t0.saturating_add(dt)) {
        let ch = match e.p {
            Polarity::On => 0,
            Polarity::Off => 1,
        };
        out[ch * w * h + e.y as usize * w + e.x as usize] += 1.0;
    }
    out
}

/// Exponentially decayed surface `sum p * exp(-(t_ref - t) / tau)` over
/// events with `t <= t_ref`. Layout `H x W`.
pub fn baseline_exp_surface(
    stream: &EventStream,
    t_ref: u64,
    tau: u64,
) -> Result<Vec<f64>, ReprError> {
    if tau == 0 {
        return Err(ReprError::InvalidParameter("tau must be positive".into()));
    }
    let w = stream.width() as usize;
    let mut out = vec![0.0f64; w * stream.height() as usize];
    for e in stream.window(0, t_ref.saturating_add(1)) {
        let age = (t_ref - e.t) as f64 / tau as f64;
        out[e.y as usize * w + e.x as usize] += f64::from(e.p.as_f32()) * (-age).exp();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stream(w: u32, h: u32, evs: &[(u64, u16, u16, i64)]) -> EventStream {
        EventStream::new(
            w,
            h,
            evs.iter()
                .map(|&(t, x, y, p)| Event::new(x, y, t, Polarity::from_sign(p).unwrap()))
                .collect(),
        )
        .unwrap()
    }

    /// Per-event, per-bin evaluation of the triangular kernel.
    fn bilinear_oracle(s: &EventStream, t0: u64, dt: u64, bins: usize) -> Vec<f64> {
        let (w, h) = (s.width() as usize, s.height() as usize);
        let mut out = vec![0.0; bins * w * h];
        for e in s.events() {
            if e.t < t0 || e.t >= t0 + bins as u64 * dt {
                continue;
            }
            let ts = (e.t - t0) as f64 / dt as f64;
            for b in 0..bins {
                let k = (1.0 - (ts - b as f64).abs()).max(0.0);
                out[(b * h + e.y as usize) * w + e.x as usize] += k * f64::from(e.p.as_f32());
            }
        }
        out
    }

    #[test]
    fn empty_stream_gives_zero_volume() {
        let v = discretize(&EventStream::empty(4, 3), 0, 10, 2, VolumeMode::Bilinear).unwrap();
        assert_eq!(v.data, vec![0.0; 24]);
        assert!(matches!(
            discretize(&EventStream::empty(0, 3), 0, 10, 2, VolumeMode::Count),
            Err(ReprError::EmptyGeometry { .. })
        ));
    }

    #[test]
    fn bilinear_kernel() {
        let s = stream(2, 2, &[(300, 1, 0, 1)]);
        let v = discretize(&s, 0, 100, 4, VolumeMode::Bilinear).unwrap();
        assert_eq!(v.at(3, 0, 1), 1.0);
        assert_eq!(v.total(), 1.0);

        let s = stream(2, 2, &[(125, 1, 1, 1)]);
        let v = discretize(&s, 0, 100, 4, VolumeMode::Bilinear).unwrap();
        let oracle = bilinear_oracle(&s, 0, 100, 4);
        assert!((f64::from(v.at(1, 1, 1)) - 0.75).abs() < 1e-7);
        assert!((f64::from(v.at(2, 1, 1)) - 0.25).abs() < 1e-7);
        for (a, b) in v.data.iter().zip(&oracle) {
            assert!((f64::from(*a) - b).abs() < 1e-7);
        }
    }

    #[test]
    fn count_and_signed_modes() {
        let s = stream(
            3,
            1,
            &[(0, 0, 0, 1), (5, 0, 0, -1), (15, 2, 0, -1), (25, 1, 0, 1)],
        );
        let c = discretize(&s, 0, 10, 2, VolumeMode::Count).unwrap();
        assert_eq!(c.data, vec![2.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let sg = discretize(&s, 0, 10, 2, VolumeMode::Signed).unwrap();
        assert_eq!(sg.data, vec![0.0, 0.0, 0.0, 0.0, 0.0, -1.0]);
    }

    #[test]
    fn normalization() {
        let mut v = DiscretizedVolume::zeros(1, 1, 3, 0, 1, VolumeMode::Signed);
        assert_eq!(v.normalize(5.0).data, vec![0.0; 3]);
        v.data = vec![5.0, 7.0, -9.0];
        assert_eq!(v.normalize(5.0).data, vec![1.0, 1.0, -1.0]);
    }

    #[test]
    fn window_counts() {
        let s = stream(2, 2, &[(0, 0, 0, 1)]);
        let spec = WindowSpec {
            bin_dt: 10,
            bins: 4,
            stride: 1,
            mode: VolumeMode::Count,
        };
        assert_eq!(sliding_windows(&s, 0, 50, spec).unwrap().len(), 1);
        assert_eq!(sliding_windows(&s, 0, 70, spec).unwrap().len(), 3);
        assert!(matches!(
            sliding_windows(&s, 0, 49, spec),
            Err(ReprError::TooShort { .. })
        ));
        let spec2 = WindowSpec { stride: 2, ..spec };
        assert_eq!(sliding_windows(&s, 0, 90, spec2).unwrap().len(), 3);
    }

    #[test]
    fn window_target_is_next_bin() {
        let s = stream(2, 1, &[(5, 0, 0, 1), (45, 1, 0, 1)]);
        let spec = WindowSpec {
            bin_dt: 10,
            bins: 4,
            stride: 1,
            mode: VolumeMode::Count,
        };
        let w = &sliding_windows(&s, 0, 50, spec).unwrap()[0];
        assert_eq!(w.input.bins, 4);
        assert_eq!(w.target, vec![0.0, 1.0]);
        assert_eq!(w.input.at(0, 0, 0), 1.0);
        assert_eq!(w.target_t0(), 40);
    }

    #[test]
    fn histogram_baseline() {
        let s = stream(2, 2, &[(0, 1, 1, 1), (1, 1, 1, -1), (2, 0, 0, 1)]);
        let h = baseline_histogram(&s, 0, 10);
        assert_eq!(h, vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let only_on = stream(2, 1, &[(0, 0, 0, 1), (3, 1, 0, 1)]);
        assert!(baseline_histogram(&only_on, 0, 10)[2..]
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn exp_surface_baseline() {
        let s = stream(2, 1, &[(1000, 0, 0, 1)]);
        let at_ref = baseline_exp_surface(&s, 1000, 500).unwrap();
        assert_eq!(at_ref[0], 1.0);
        let later = baseline_exp_surface(&s, 1500, 500).unwrap();
        assert!((later[0] - (-1.0f64).exp()).abs() < 1e-12);
        let before = baseline_exp_surface(&s, 999, 500).unwrap();
        assert_eq!(before[0], 0.0);
        let two = stream(2, 1, &[(1000, 0, 0, 1), (1200, 1, 0, -1)]);
        let sum = baseline_exp_surface(&two, 1500, 500).unwrap();
        assert!((sum[0] - (-1.0f64).exp()).abs() < 1e-12);
        assert!((sum[1] + (-0.6f64).exp()).abs() < 1e-12);
    }

    fn arb_stream() -> impl Strategy<Value = EventStream> {
        prop::collection::vec((0u16..6, 0u16..5, 0u64..1000, any::<bool>()), 0..150).prop_map(
            |raw| {
                EventStream::new(
                    6,
                    5,
                    raw.into_iter()
                        .map(|(x, y, t, on)| {
                            Event::new(x, y, t, if on { Polarity::On } else { Polarity::Off })
                        })
                        .collect(),
                )
                .unwrap()
            },
        )
    }

    proptest! {
        #[test]
        fn count_mode_conserves_events(s in arb_stream(), t0 in 0u64..300, dt in 1u64..200, bins in 1usize..8) {
            let v = discretize(&s, t0, dt, bins, VolumeMode::Count).unwrap();
            prop_assert_eq!(v.total() as usize, s.window(t0, t0 + bins as u64 * dt).len());
        }

        #[test]
        fn bilinear_matches_oracle(s in arb_stream(), dt in 1u64..200, bins in 1usize..8) {
            let v = discretize(&s, 0, dt, bins, VolumeMode::Bilinear).unwrap();
            let o = bilinear_oracle(&s, 0, dt, bins);
            for (a, b) in v.data.iter().zip(&o) {
                prop_assert!((f64::from(*a) - b).abs() < 1e-4);
            }
        }

        #[test]
        fn discretize_is_linear_and_order_free(a in arb_stream(), b in arb_stream()) {
            let mut both: Vec<Event> = a.events().to_vec();
            both.extend_from_slice(b.events());
            both.reverse();
            let joined = EventStream::new(6, 5, both).unwrap();
            for mode in [VolumeMode::Count, VolumeMode::Signed, VolumeMode::Bilinear] {
                let va = discretize(&a, 0, 100, 5, mode).unwrap();
                let vb = discretize(&b, 0, 100, 5, mode).unwrap();
                let vj = discretize(&joined, 0, 100, 5, mode).unwrap();
                for i in 0..vj.data.len() {
                    prop_assert!((vj.data[i] - va.data[i] - vb.data[i]).abs() < 1e-5);
                }
            }
        }

        #[test]
        fn windows_depend_only_on_covered_span(s in arb_stream(), start in 0u64..200) {
            let spec = WindowSpec { bin_dt: 40, bins: 3, stride: 2, mode: VolumeMode::Bilinear };
            let end = start + 600;
            let full = sliding_windows(&s, start, end, spec).unwrap();
            let sliced = sliding_windows(&s.slice_time(start, end).unwrap(), start, end, spec).unwrap();
            prop_assert_eq!(full, sliced);
        }

        #[test]
        fn evol_round_trip(s in arb_stream(), t0 in 0u64..u64::MAX / 2, dt in 1u64..1000) {
            let v = discretize(&s, t0, dt, 3, VolumeMode::Signed).unwrap();
            let back = DiscretizedVolume::read_evol(&v.to_evol_bytes()[..]).unwrap();
            prop_assert_eq!(back, v);
        }
    }

    #[test]
    fn evol_rejects_garbage() {
        assert!(DiscretizedVolume::read_evol(&b"EVOX"[..]).is_err());
        let v = DiscretizedVolume::zeros(1, 2, 2, 0, 1, VolumeMode::Count);
        let mut bytes = v.to_evol_bytes();
        bytes.pop();
        assert!(matches!(
            DiscretizedVolume::read_evol(&bytes[..]),
            Err(ReprError::Format(_))
        ));
    }
}
