//! Point patterns, observation windows, lattices and count aggregation.

mod grid;
mod pattern;
mod window;

pub use grid::{CellCountSeries, GridSpec, Raster, RasterUnits, NODATA};
pub use pattern::{
    aggregate_counts, daily_counts, load_point_pattern, load_point_pattern_scaled,
    save_point_pattern, Event, LoadReport, SpatioTemporalPointPattern, TimeRange,
};
pub use window::{BoundingBox, ObservationWindow, Point};
