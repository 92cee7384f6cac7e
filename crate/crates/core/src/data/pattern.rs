use std::io::{Read, Write};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{CellCountSeries, GridSpec, ObservationWindow, Point};
use crate::error::{Error, Result};

/// Inclusive range of integer days `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeRange {
    pub start: i64,
    pub end: i64,
}

impl TimeRange {
    pub fn new(start: i64, end: i64) -> Result<Self> {
        if end < start {
            return Err(Error::domain(format!("empty time range [{start}, {end}]")));
        }
        Ok(Self { start, end })
    }

    /// Number of days in the range.
    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }

    pub fn offset(&self, t: i64) -> Option<usize> {
        self.contains(t).then(|| (t - self.start) as usize)
    }

    pub fn days(&self) -> impl Iterator<Item = i64> {
        self.start..=self.end
    }
}

/// A single event: location and day stamp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub x: f64,
    pub y: f64,
    pub t: i64,
}

impl Event {
    pub fn location(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Events inside a window and a day range, sorted by day then `(x, y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatioTemporalPointPattern {
    events: Vec<Event>,
    window: ObservationWindow,
    t_range: TimeRange,
}

impl SpatioTemporalPointPattern {
    pub fn new(
        mut events: Vec<Event>,
        window: ObservationWindow,
        t_range: TimeRange,
    ) -> Result<Self> {
        for (idx, e) in events.iter().enumerate() {
            if !t_range.contains(e.t) {
                return Err(Error::domain(format!(
                    "event {idx} has day {} outside [{}, {}]",
                    e.t, t_range.start, t_range.end
                )));
            }
            if !window.contains(e.location()) {
                return Err(Error::domain(format!(
                    "event {idx} at ({}, {}) lies outside the window",
                    e.x, e.y
                )));
            }
        }
        sort_events(&mut events);
        Ok(Self {
            events,
            window,
            t_range,
        })
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

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn t_range(&self) -> TimeRange {
        self.t_range
    }

    pub fn locations(&self) -> Vec<Point> {
        self.events.iter().map(Event::location).collect()
    }

    pub fn times(&self) -> Vec<i64> {
        self.events.iter().map(|e| e.t).collect()
    }

    /// Locations grouped by day, indexed by offset from the range start.
    pub fn by_day(&self) -> Vec<Vec<Point>> {
        let mut days = vec![Vec::new(); self.t_range.len()];
        for e in &self.events {
            days[(e.t - self.t_range.start) as usize].push(e.location());
        }
        days
    }

    /// Events with stamps in `range`, as a pattern on that range.
    pub fn restrict(&self, range: TimeRange) -> Result<Self> {
        let events = self
            .events
            .iter()
            .filter(|e| range.contains(e.t))
            .copied()
            .collect();
        Self::new(events, self.window.clone(), range)
    }

    /// Same locations with the day stamps replaced, event by event.
    pub fn with_times(&self, times: &[i64]) -> Result<Self> {
        if times.len() != self.events.len() {
            return Err(Error::Dimension("one stamp per event required".into()));
        }
        let events = self
            .events
            .iter()
            .zip(times)
            .map(|(e, &t)| Event { t, ..*e })
            .collect();
        Self::new(events, self.window.clone(), self.t_range)
    }
}

fn sort_events(events: &mut [Event]) {
    events.sort_by(|a, b| {
        a.t.cmp(&b.t)
            .then(a.x.total_cmp(&b.x))
            .then(a.y.total_cmp(&b.y))
    });
}

/// Outcome of reading a pattern file.
#[derive(Debug, Clone)]
pub struct LoadReport {
    pub pattern: SpatioTemporalPointPattern,
    /// Well-formed rows outside the window or the day range.
    pub dropped: usize,
}

/// Reads `x,y,t` rows (with header) and keeps those inside the window and range.
pub fn load_point_pattern<R: Read>(
    src: R,
    window: &ObservationWindow,
    t_range: TimeRange,
) -> Result<LoadReport> {
    load_point_pattern_scaled(src, window, t_range, 1.0)
}

/// As [`load_point_pattern`], multiplying coordinates by `coordinate_scale`
/// before the window test (e.g. `0.001` for metres to kilometres).
pub fn load_point_pattern_scaled<R: Read>(
    src: R,
    window: &ObservationWindow,
    t_range: TimeRange,
    coordinate_scale: f64,
) -> Result<LoadReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(src);
    let mut events = Vec::new();
    let mut dropped = 0usize;
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if idx == 0 {
            let header: Vec<&str> = rec.iter().collect();
            if header != ["x", "y", "t"] {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected header `x,y,t`, found `{}`", header.join(",")),
                });
            }
            continue;
        }
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 3 fields, found {}", rec.len()),
            });
        }
        let parse_coord = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: format!("invalid coordinate `{s}`"),
                })
        };
        let x = parse_coord(&rec[0])? * coordinate_scale;
        let y = parse_coord(&rec[1])? * coordinate_scale;
        let t = rec[2].parse::<i64>().map_err(|_| Error::Parse {
            line,
            msg: format!("day stamp `{}` is not an integer", &rec[2]),
        })?;
        let e = Event { x, y, t };
        if t_range.contains(t) && window.contains(e.location()) {
            events.push(e);
        } else {
            dropped += 1;
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyPattern { dropped });
    }
    let pattern = SpatioTemporalPointPattern::new(events, window.clone(), t_range)?;
    Ok(LoadReport { pattern, dropped })
}

/// Writes the pattern as `x,y,t` CSV using shortest round-trip formatting.
pub fn save_point_pattern<W: Write>(pattern: &SpatioTemporalPointPattern, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["x", "y", "t"])?;
    for e in pattern.events() {
        wtr.write_record(&[e.x.to_string(), e.y.to_string(), e.t.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-day, per-cell event counts.
pub fn aggregate_counts(
    pattern: &SpatioTemporalPointPattern,
    grid: &GridSpec,
) -> Result<CellCountSeries> {
    let range = pattern.t_range();
    let mut counts = vec![Array2::<u32>::zeros((grid.m, grid.p)); range.len()];
    for e in pattern.events() {
        let (i, j) = grid
            .locate(e.x, e.y)
            .ok_or(Error::OutsideGrid { x: e.x, y: e.y })?;
        counts[(e.t - range.start) as usize][[i, j]] += 1;
    }
    CellCountSeries::new(grid.clone(), range, counts)
}

/// `(t, N_t(R))` for every day of the range, zero filled.
pub fn daily_counts(pattern: &SpatioTemporalPointPattern) -> Vec<(i64, u64)> {
    let range = pattern.t_range();
    let mut out: Vec<(i64, u64)> = range.days().map(|t| (t, 0)).collect();
    for e in pattern.events() {
        out[(e.t - range.start) as usize].1 += 1;
    }
    out
}
