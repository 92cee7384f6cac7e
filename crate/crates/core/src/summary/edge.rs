//! Ripley's isotropic edge correction in space and its one-dimensional
//! analogue in time.

use std::f64::consts::{PI, TAU};

use crate::data::{BoundingBox, ObservationWindow, Point};

/// Fraction of the circle of radius `r` about `c` lying inside the polygon,
/// from the exact circle/edge intersection angles.
pub fn circle_fraction_polygon(c: Point, r: f64, window: &ObservationWindow) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    let mut angles = Vec::new();
    for (a, b) in window.edges() {
        let (ex, ey) = (b.x - a.x, b.y - a.y);
        let (fx, fy) = (a.x - c.x, a.y - c.y);
        let qa = ex * ex + ey * ey;
        let qb = 2.0 * (fx * ex + fy * ey);
        let qc = fx * fx + fy * fy - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        if disc < 0.0 || qa == 0.0 {
            continue;
        }
        let sq = disc.sqrt();
        for s in [(-qb - sq) / (2.0 * qa), (-qb + sq) / (2.0 * qa)] {
            if (0.0..=1.0).contains(&s) {
                let (px, py) = (fx + s * ex, fy + s * ey);
                angles.push(py.atan2(px).rem_euclid(TAU));
            }
        }
    }
    let on_circle = |theta: f64| Point::new(c.x + r * theta.cos(), c.y + r * theta.sin());
    if angles.is_empty() {
        return if window.contains(on_circle(0.0)) {
            1.0
        } else {
            0.0
        };
    }
    angles.sort_by(f64::total_cmp);
    let mut inside = 0.0;
    for k in 0..angles.len() {
        let a0 = angles[k];
        let a1 = if k + 1 < angles.len() {
            angles[k + 1]
        } else {
            angles[0] + TAU
        };
        let len = a1 - a0;
        if len <= 0.0 {
            continue;
        }
        if window.contains(on_circle(0.5 * (a0 + a1))) {
            inside += len;
        }
    }
    (inside / TAU).clamp(0.0, 1.0)
}

/// Fraction of the circle inside an axis-aligned rectangle: the union of the
/// arcs cut off by the four edge lines is removed.
pub fn circle_fraction_rectangle(c: Point, r: f64, b: &BoundingBox) -> f64 {
    if r <= 0.0 {
        return 1.0;
    }
    // (distance to edge line, direction of the outward normal)
    let edges = [
        (c.x - b.x_min, PI),
        (b.x_max - c.x, 0.0),
        (c.y - b.y_min, 1.5 * PI),
        (b.y_max - c.y, 0.5 * PI),
    ];
    let mut arcs: Vec<(f64, f64)> = Vec::with_capacity(8);
    for (d, dir) in edges {
        if d < r {
            let half = (d.max(0.0) / r).acos();
            // split at the origin so all intervals lie in [0, 2pi)
            let lo = (dir - half).rem_euclid(TAU);
            let hi = lo + 2.0 * half;
            if hi > TAU {
                arcs.push((lo, TAU));
                arcs.push((0.0, hi - TAU));
            } else {
                arcs.push((lo, hi));
            }
        }
    }
    if arcs.is_empty() {
        return 1.0;
    }
    arcs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut outside = 0.0;
    let (mut cur_lo, mut cur_hi) = arcs[0];
    for &(lo, hi) in &arcs[1..] {
        if lo <= cur_hi {
            cur_hi = cur_hi.max(hi);
        } else {
            outside += cur_hi - cur_lo;
            cur_lo = lo;
            cur_hi = hi;
        }
    }
    outside += cur_hi - cur_lo;
    (1.0 - outside / TAU).clamp(0.0, 1.0)
}

/// Fraction of the circle about `c` with radius `r` inside `window`.
pub fn circle_fraction(c: Point, r: f64, window: &ObservationWindow) -> f64 {
    if window.is_rectangle() {
        circle_fraction_rectangle(c, r, &window.bounding_box())
    } else {
        circle_fraction_polygon(c, r, window)
    }
}

/// Spatial edge-correction weight for the pair `(s1, s2)`: the reciprocal of
/// the inside fraction of the circle centred at `s1` through `s2`.
///
/// Coincident points and degenerate zero fractions get weight 1.
pub fn ripley_weight_spatial(s1: Point, s2: Point, window: &ObservationWindow) -> f64 {
    weight_from_fraction(circle_fraction(s1, s1.dist(&s2), window))
}

#[inline]
pub(crate) fn weight_from_fraction(f: f64) -> f64 {
    if f > 0.0 {
        1.0 / f
    } else {
        1.0
    }
}

/// Precomputed edge geometry so the rectangle test is not repeated per pair.
#[derive(Debug, Clone)]
pub(crate) enum EdgeGeometry<'a> {
    Rectangle(BoundingBox),
    Polygon(&'a ObservationWindow),
}

impl<'a> EdgeGeometry<'a> {
    pub(crate) fn new(window: &'a ObservationWindow) -> Self {
        if window.is_rectangle() {
            EdgeGeometry::Rectangle(window.bounding_box())
        } else {
            EdgeGeometry::Polygon(window)
        }
    }

    #[inline]
    pub(crate) fn weight(&self, c: Point, r: f64) -> f64 {
        let f = match self {
            EdgeGeometry::Rectangle(b) => circle_fraction_rectangle(c, r, b),
            EdgeGeometry::Polygon(w) => circle_fraction_polygon(c, r, w),
        };
        weight_from_fraction(f)
    }
}

/// Temporal edge-correction weight on `[t0, t1]`: 1 when both reflections
/// `t1 - |lag|` and `t1 + |lag|` fall in the interval, 2 when only one does.
pub fn ripley_weight_temporal(t_1: f64, t_2: f64, t0: f64, t1: f64) -> f64 {
    let lag = (t_2 - t_1).abs();
    if lag == 0.0 {
        return 1.0;
    }
    let inside = [t_1 - lag, t_1 + lag]
        .iter()
        .filter(|&&v| v >= t0 && v <= t1)
        .count();
    match inside {
        2 => 1.0,
        1 => 2.0,
        _ => 1.0,
    }
}
