use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A planar location.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    #[inline]
    pub fn dist2(&self, other: &Point) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        dx * dx + dy * dy
    }

    #[inline]
    pub fn dist(&self, other: &Point) -> f64 {
        self.dist2(other).sqrt()
    }
}

/// Axis-aligned bounding box `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }
}

/// The spatial observation window: a closed simple polygon.
///
/// Vertices are stored counter-clockwise; the closing edge from the last
/// vertex back to the first is implicit. Containment is closed, so points on
/// the boundary belong to the window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    vertices: Vec<Point>,
    area: f64,
    bbox: BoundingBox,
}

impl ObservationWindow {
    pub fn new(mut vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() >= 2 && vertices.first() == vertices.last() {
            vertices.pop();
        }
        if vertices.len() < 3 {
            return Err(Error::InvalidWindow(format!(
                "a polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .any(|v| !v.x.is_finite() || !v.y.is_finite())
        {
            return Err(Error::InvalidWindow("non-finite vertex coordinate".into()));
        }
        let signed = shoelace(&vertices);
        if signed.abs() <= 0.0 || !signed.is_finite() {
            return Err(Error::InvalidWindow("polygon has zero area".into()));
        }
        if signed < 0.0 {
            vertices.reverse();
        }
        if let Some((a, b)) = first_self_intersection(&vertices) {
            return Err(Error::InvalidWindow(format!(
                "polygon is not simple: edges {a} and {b} intersect"
            )));
        }
        let bbox = BoundingBox {
            x_min: vertices.iter().map(|v| v.x).fold(f64::INFINITY, f64::min),
            y_min: vertices.iter().map(|v| v.y).fold(f64::INFINITY, f64::min),
            x_max: vertices
                .iter()
                .map(|v| v.x)
                .fold(f64::NEG_INFINITY, f64::max),
            y_max: vertices
                .iter()
                .map(|v| v.y)
                .fold(f64::NEG_INFINITY, f64::max),
        };
        Ok(Self {
            vertices,
            area: signed.abs(),
            bbox,
        })
    }

    pub fn rectangle(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        Self::new(vec![
            Point::new(x_min, y_min),
            Point::new(x_max, y_min),
            Point::new(x_max, y_max),
            Point::new(x_min, y_max),
        ])
    }

    /// Reads vertices from a CSV with `x,y` columns. A header line is optional.
    pub fn from_csv<R: Read>(src: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(src);
        let mut vertices = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = idx + 1;
            if rec.len() != 2 {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 2 fields `x,y`, found {}", rec.len()),
                });
            }
            let (x, y) = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
            match (x, y) {
                (Ok(x), Ok(y)) => vertices.push(Point::new(x, y)),
                _ if idx == 0 => continue, // header
                _ => {
                    return Err(Error::Parse {
                        line,
                        msg: format!("invalid vertex `{},{}`", &rec[0], &rec[1]),
                    })
                }
            }
        }
        Self::new(vertices)
    }

    /// Writes the vertices as `x,y` CSV with a header, readable by
    /// [`ObservationWindow::from_csv`].
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["x", "y"])?;
        for v in &self.vertices {
            wtr.write_record(&[v.x.to_string(), v.y.to_string()])?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn area(&self) -> f64 {
        self.area
    }

    pub fn bounding_box(&self) -> BoundingBox {
        self.bbox
    }

    /// Iterator over the polygon's edges, including the closing one.
    pub fn edges(&self) -> impl Iterator<Item = (Point, Point)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| (self.vertices[i], self.vertices[(i + 1) % n]))
    }

    /// True when the polygon is an axis-aligned rectangle.
    pub fn is_rectangle(&self) -> bool {
        if self.vertices.len() != 4 {
            return false;
        }
        let b = self.bbox;
        let tol = 1e-12 * (b.width() + b.height());
        self.vertices.iter().all(|v| {
            ((v.x - b.x_min).abs() <= tol || (v.x - b.x_max).abs() <= tol)
                && ((v.y - b.y_min).abs() <= tol || (v.y - b.y_max).abs() <= tol)
        }) && (self.area - b.width() * b.height()).abs() <= tol * tol.max(1.0)
    }

    /// Closed containment test.
    pub fn contains(&self, p: Point) -> bool {
        let b = self.bbox;
        if p.x < b.x_min || p.x > b.x_max || p.y < b.y_min || p.y > b.y_max {
            return false;
        }
        let mut inside = false;
        for (a, c) in self.edges() {
            if on_segment(p, a, c) {
                return true;
            }
            if (a.y > p.y) != (c.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (c.x - a.x) / (c.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Largest distance from `p` to any vertex; circles with a larger radius
    /// centred at `p` contain the whole window.
    pub fn max_vertex_distance(&self, p: Point) -> f64 {
        self.vertices.iter().map(|v| v.dist(&p)).fold(0.0, f64::max)
    }

    /// Returns a copy with every coordinate multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.vertices
                .iter()
                .map(|v| Point::new(v.x * factor, v.y * factor))
                .collect(),
        )
    }
}

fn shoelace(v: &[Point]) -> f64 {
    let n = v.len();
    0.5 * (0..n)
        .map(|i| {
            let (a, b) = (v[i], v[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

fn on_segment(p: Point, a: Point, b: Point) -> bool {
    let scale = (b.x - a.x).abs().max((b.y - a.y).abs()).max(1.0);
    if cross(a, b, p).abs() > 1e-12 * scale * scale {
        return false;
    }
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: Point, p2: Point, q1: Point, q2: Point) -> bool {
    let d1 = cross(q1, q2, p1);
    let d2 = cross(q1, q2, p2);
    let d3 = cross(p1, p2, q1);
    let d4 = cross(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(p1, q1, q2))
        || (d2 == 0.0 && on_segment(p2, q1, q2))
        || (d3 == 0.0 && on_segment(q1, p1, p2))
        || (d4 == 0.0 && on_segment(q2, p1, p2))
}

fn first_self_intersection(v: &[Point]) -> Option<(usize, usize)> {
    let n = v.len();
    for i in 0..n {
        let (a1, a2) = (v[i], v[(i + 1) % n]);
        for j in (i + 1)..n {
            // adjacent edges share a vertex by construction
            if j == i + 1 || (i == 0 && j == n - 1) {
                continue;
            }
            let (b1, b2) = (v[j], v[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return Some((i, j));
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_area_and_orientation() {
        let w = ObservationWindow::new(vec![
            Point::new(0.0, 0.0),
            Point::new(0.0, 2.0),
            Point::new(3.0, 2.0),
            Point::new(3.0, 0.0),
        ])
        .unwrap();
        assert_eq!(w.area(), 6.0);
        assert!(w.is_rectangle());
        assert!(shoelace(w.vertices()) > 0.0);
    }

    #[test]
    fn closed_containment() {
        let w = ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(w.contains(Point::new(0.5, 0.5)));
        assert!(w.contains(Point::new(0.0, 0.3)));
        assert!(w.contains(Point::new(1.0, 1.0)));
        assert!(!w.contains(Point::new(1.0 + 1e-9, 0.5)));
    }

    #[test]
    fn l_shape_containment() {
        let w = ObservationWindow::new(vec![
            Point::new(0.0, 0.0),
            Point::new(2.0, 0.0),
            Point::new(2.0, 1.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 2.0),
            Point::new(0.0, 2.0),
        ])
        .unwrap();
        assert_eq!(w.area(), 3.0);
        assert!(!w.is_rectangle());
        assert!(w.contains(Point::new(0.5, 1.5)));
        assert!(!w.contains(Point::new(1.5, 1.5)));
    }

    #[test]
    fn bow_tie_is_rejected() {
        let err = ObservationWindow::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 1.0),
            Point::new(1.0, 0.0),
            Point::new(0.0, 1.0),
        ]);
        assert!(matches!(err, Err(Error::InvalidWindow(_))));
    }

    #[test]
    fn degenerate_polygons_are_rejected() {
        assert!(ObservationWindow::new(vec![Point::new(0.0, 0.0), Point::new(1.0, 0.0)]).is_err());
        assert!(ObservationWindow::new(vec![
            Point::new(0.0, 0.0),
            Point::new(1.0, 0.0),
            Point::new(2.0, 0.0)
        ])
        .is_err());
    }

    #[test]
    fn window_csv_with_and_without_header() {
        let a = ObservationWindow::from_csv("x,y\n0,0\n1,0\n1,1\n0,1\n".as_bytes()).unwrap();
        let b = ObservationWindow::from_csv("0,0\r\n1,0\r\n1,1\r\n0,1\r\n".as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.area(), 1.0);
        let err = ObservationWindow::from_csv("x,y\n0,0\n1,zz\n1,1\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }));
    }
}
