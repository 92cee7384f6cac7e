//! Uniform cell lists for fixed-radius neighbour queries.

use crate::data::Point;

/// Points bucketed into square cells of side at least the query radius, so a
/// radius query only visits the 3x3 block around the query cell.
#[derive(Debug, Clone)]
pub(crate) struct CellIndex {
    x0: f64,
    y0: f64,
    side: f64,
    nx: usize,
    ny: usize,
    start: Vec<usize>,
    items: Vec<usize>,
}

impl CellIndex {
    /// Indexes `points` (referenced by position) for queries of radius up to
    /// `radius`.
    pub(crate) fn new(points: &[Point], radius: f64) -> Self {
        if points.is_empty() {
            return Self {
                x0: 0.0,
                y0: 0.0,
                side: 1.0,
                nx: 1,
                ny: 1,
                start: vec![0, 0],
                items: Vec::new(),
            };
        }
        let (mut x0, mut y0, mut x1, mut y1) = (
            f64::INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::NEG_INFINITY,
        );
        for p in points {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        let extent = (x1 - x0).max(y1 - y0).max(f64::MIN_POSITIVE);
        // cap the lattice size so tiny radii do not blow up memory
        let side = radius.max(extent / 1024.0).max(f64::MIN_POSITIVE);
        let nx = ((x1 - x0) / side).floor() as usize + 1;
        let ny = ((y1 - y0) / side).floor() as usize + 1;
        let cell_of = |p: &Point| {
            let i = (((p.x - x0) / side) as usize).min(nx - 1);
            let j = (((p.y - y0) / side) as usize).min(ny - 1);
            i * ny + j
        };
        let mut counts = vec![0usize; nx * ny + 1];
        for p in points {
            counts[cell_of(p) + 1] += 1;
        }
        for k in 1..counts.len() {
            counts[k] += counts[k - 1];
        }
        let start = counts.clone();
        let mut fill = counts;
        let mut items = vec![0usize; points.len()];
        for (idx, p) in points.iter().enumerate() {
            let c = cell_of(p);
            items[fill[c]] = idx;
            fill[c] += 1;
        }
        Self {
            x0,
            y0,
            side,
            nx,
            ny,
            start,
            items,
        }
    }

    /// Calls `f` with the index of every point that may lie within `radius`
    /// of `c` (a superset; callers test the distance). `radius` must not
    /// exceed the radius the index was built for.
    #[inline]
    pub(crate) fn for_each_candidate(&self, c: Point, radius: f64, mut f: impl FnMut(usize)) {
        let span = |v: f64, o: f64, n: usize| -> Option<(usize, usize)> {
            let lo = ((v - radius - o) / self.side).floor();
            let hi = ((v + radius - o) / self.side).floor();
            if hi < 0.0 || lo > (n - 1) as f64 {
                None
            } else {
                Some((lo.max(0.0) as usize, (hi as usize).min(n - 1)))
            }
        };
        let (Some((i0, i1)), Some((j0, j1))) =
            (span(c.x, self.x0, self.nx), span(c.y, self.y0, self.ny))
        else {
            return;
        };
        for i in i0..=i1 {
            let row = i * self.ny;
            for &idx in &self.items[self.start[row + j0]..self.start[row + j1 + 1]] {
                f(idx);
            }
        }
    }
}
