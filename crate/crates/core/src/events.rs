//! Event data model, validation, time slicing and CSV ingestion.
//!
//! An event is a single brightness change `(x, y, t, p)` reported by the
//! sensor. Timestamps are integer microseconds and polarity is `+1`/`-1`.

use std::fmt::Write as _;

use thiserror::Error;

/// Header line of the event CSV format.
pub const CSV_HEADER: &str = "t_us,x,y,p";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EventError {
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("line {line}: event ({x}, {y}) outside {width}x{height} sensor")]
    OutOfBounds {
        line: usize,
        x: u64,
        y: u64,
        width: u32,
        height: u32,
    },
    #[error("line {line}: polarity must be 1 or -1, got {value}")]
    BadPolarity { line: usize, value: i64 },
    #[error("invalid time range [{t0}, {t1})")]
    InvalidRange { t0: u64, t1: u64 },
}

/// Sign of a brightness change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Polarity {
    On,
    Off,
}

impl Polarity {
    pub fn from_sign(value: i64) -> Option<Self> {
        match value {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn sign(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    pub fn as_f32(self) -> f32 {
        f32::from(self.sign())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    /// Microseconds.
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Self { x, y, t, p }
    }
}

/// Time-sorted events with their sensor geometry. Immutable once built.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u32,
    height: u32,
    events: Vec<Event>,
}

impl EventStream {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Validates every event against the geometry and stably sorts by time.
    pub fn new(width: u32, height: u32, mut events: Vec<Event>) -> Result<Self, EventError> {
        for (i, e) in events.iter().enumerate() {
            if u32::from(e.x) >= width || u32::from(e.y) >= height {
                return Err(EventError::OutOfBounds {
                    line: i + 1,
                    x: e.x.into(),
                    y: e.y.into(),
                    width,
                    height,
                });
            }
        }
        if !events.windows(2).all(|w| w[0].t <= w[1].t) {
            events.sort_by_key(|e| e.t);
        }
        Ok(Self {
            width,
            height,
            events,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Events in the half-open window `[t0, t1)`.
    pub fn window(&self, t0: u64, t1: u64) -> &[Event] {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        &self.events[lo..hi.max(lo)]
    }

    /// Restricts the stream to `[t0, t1)`, keeping the geometry.
    pub fn slice_time(&self, t0: u64, t1: u64) -> Result<EventStream, EventError> {
        if t0 > t1 {
            return Err(EventError::InvalidRange { t0, t1 });
        }
        Ok(EventStream {
            width: self.width,
            height: self.height,
            events: self.window(t0, t1).to_vec(),
        })
    }

    /// Timestamp one past the last event, or 0 for an empty stream.
    pub fn end_time(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t + 1)
    }
}

/// Result of a lenient parse: the good rows plus one error per rejected row.
#[derive(Debug, Clone)]
pub struct LenientParse {
    pub stream: EventStream,
    pub errors: Vec<EventError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Strict,
    /// Skip bad rows and report them instead of failing.
    Lenient,
}

fn parse_row(line_no: usize, row: &str, width: u32, height: u32) -> Result<Event, EventError> {
    let malformed = |reason: &str| EventError::MalformedRow {
        line: line_no,
        reason: reason.to_string(),
    };
    let fields: Vec<&str> = row.split(',').collect();
    if fields.len() != 4 {
        return Err(malformed(&format!(
            "expected 4 fields, found {}",
            fields.len()
        )));
    }
    let t: u64 = fields[0]
        .trim()
        .parse()
        .map_err(|_| malformed("t_us is not a non-negative integer"))?;
    let x: u64 = fields[1]
        .trim()
        .parse()
        .map_err(|_| malformed("x is not a non-negative integer"))?;
    let y: u64 = fields[2]
        .trim()
        .parse()
        .map_err(|_| malformed("y is not a non-negative integer"))?;
    let p: i64 = fields[3]
        .trim()
        .parse()
        .map_err(|_| malformed("p is not an integer"))?;
    if x >= u64::from(width)
        || y >= u64::from(height)
        || x > u64::from(u16::MAX)
        || y > u64::from(u16::MAX)
    {
        return Err(EventError::OutOfBounds {
            line: line_no,
            x,
            y,
            width,
            height,
        });
    }
    let p = Polarity::from_sign(p).ok_or(EventError::BadPolarity {
        line: line_no,
        value: p,
    })?;
    Ok(Event::new(x as u16, y as u16, t, p))
}

fn parse_impl(
    text: &str,
    width: u32,
    height: u32,
    mode: ParseMode,
) -> Result<LenientParse, EventError> {
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, header)) if header.trim_end_matches('\r') == CSV_HEADER => {}
        Some((_, header)) => {
            return Err(EventError::MalformedRow {
                line: 1,
                reason: format!("expected header `{CSV_HEADER}`, found `{header}`"),
            })
        }
        None => unreachable!("split always yields one item"),
    }
    let mut events = Vec::new();
    let mut errors = Vec::new();
    for (idx, raw) in lines {
        let row = raw.trim_end_matches('\r');
        if row.is_empty() {
            continue;
        }
        match parse_row(idx + 1, row, width, height) {
            Ok(e) => events.push(e),
            Err(err) if mode == ParseMode::Lenient => errors.push(err),
            Err(err) => return Err(err),
        }
    }
    let stream = EventStream::new(width, height, events)?;
    Ok(LenientParse { stream, errors })
}

/// Parses the event CSV format in strict mode.
pub fn parse_event_csv(text: &str, width: u32, height: u32) -> Result<EventStream, EventError> {
    parse_impl(text, width, height, ParseMode::Strict).map(|p| p.stream)
}

/// Parses the event CSV format, skipping and reporting bad rows.
///
/// A bad header is still fatal.
pub fn parse_event_csv_lenient(
    text: &str,
    width: u32,
    height: u32,
) -> Result<LenientParse, EventError> {
    parse_impl(text, width, height, ParseMode::Lenient)
}

pub fn write_event_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 * (stream.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in stream.events() {
        let _ = writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p.sign());
    }
    out
}
