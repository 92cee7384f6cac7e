use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ObservationWindow, Point, TimeRange};
use crate::error::{Error, Result};

/// Regular lattice over the bounding rectangle of a window.
///
/// Cell `(i, j)` (zero based, `i` along x, `j` along y) covers
/// `[x_min + i dx, x_min + (i+1) dx) x [y_min + j dy, y_min + (j+1) dy)`;
/// the last column and row are closed so the far edges of the rectangle
/// belong to the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub y_min: f64,
    pub dx: f64,
    pub dy: f64,
    pub m: usize,
    pub p: usize,
    mask: Vec<bool>,
}

impl GridSpec {
    /// Covers the window's bounding box with `m x p` cells and marks the cells
    /// whose centroid lies inside the window.
    pub fn from_window(window: &ObservationWindow, m: usize, p: usize) -> Result<Self> {
        if m == 0 || p == 0 {
            return Err(Error::domain("grid dimensions must be positive"));
        }
        let b = window.bounding_box();
        let mut grid = Self {
            x_min: b.x_min,
            y_min: b.y_min,
            dx: b.width() / m as f64,
            dy: b.height() / p as f64,
            m,
            p,
            mask: Vec::new(),
        };
        grid.mask = (0..m * p)
            .map(|k| window.contains(grid.centroid(k / p, k % p)))
            .collect();
        Ok(grid)
    }

    /// A grid with every cell masked in.
    pub fn unmasked(x_min: f64, y_min: f64, dx: f64, dy: f64, m: usize, p: usize) -> Result<Self> {
        if m == 0 || p == 0 || !(dx > 0.0) || !(dy > 0.0) {
            return Err(Error::domain(
                "grid dimensions and cell sides must be positive",
            ));
        }
        Ok(Self {
            x_min,
            y_min,
            dx,
            dy,
            m,
            p,
            mask: vec![true; m * p],
        })
    }

    /// As [`GridSpec::unmasked`] with an explicit mask in `i * p + j` order.
    pub fn with_mask(
        x_min: f64,
        y_min: f64,
        dx: f64,
        dy: f64,
        m: usize,
        p: usize,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let mut g = Self::unmasked(x_min, y_min, dx, dy, m, p)?;
        if mask.len() != m * p {
            return Err(Error::Dimension(format!(
                "mask has {} entries for {m}x{p} cells",
                mask.len()
            )));
        }
        g.mask = mask;
        Ok(g)
    }

    #[inline]
    pub fn centroid(&self, i: usize, j: usize) -> Point {
        Point::new(
            self.x_min + (i as f64 + 0.5) * self.dx,
            self.y_min + (j as f64 + 0.5) * self.dy,
        )
    }

    #[inline]
    pub fn cell_area(&self) -> f64 {
        self.dx * self.dy
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.m * self.p
    }

    /// Lexicographic cell index.
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.p + j
    }

    #[inline]
    pub fn in_mask(&self, i: usize, j: usize) -> bool {
        self.mask[self.index(i, j)]
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn n_masked(&self) -> usize {
        self.mask.iter().filter(|&&b| b).count()
    }

    /// Area covered by the masked-in cells.
    pub fn masked_area(&self) -> f64 {
        self.n_masked() as f64 * self.cell_area()
    }

    pub fn x_max(&self) -> f64 {
        self.x_min + self.m as f64 * self.dx
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.p as f64 * self.dy
    }

    /// Cell containing `(x, y)` under the half-open rule, or `None` outside
    /// the bounding rectangle.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fi = ((x - self.x_min) / self.dx).floor();
        let fj = ((y - self.y_min) / self.dy).floor();
        if !fi.is_finite() || !fj.is_finite() || fi < 0.0 || fj < 0.0 {
            return None;
        }
        let (mut i, mut j) = (fi as usize, fj as usize);
        // the far edges are closed
        if i == self.m && x <= self.x_max() {
            i -= 1;
        }
        if j == self.p && y <= self.y_max() {
            j -= 1;
        }
        (i < self.m && j < self.p).then_some((i, j))
    }

    /// Iterates over the masked-in cells as `(i, j)`.
    pub fn masked_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.m * self.p)
            .filter(|&k| self.mask[k])
            .map(|k| (k / self.p, k % self.p))
    }
}

/// What a raster's values measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RasterUnits {
    /// Expected events per unit area.
    IntensityPerArea,
    /// A latent field without units.
    Dimensionless,
    /// A probability density over the window.
    Density,
}

/// Cell values on a [`GridSpec`]. Masked-out cells are reported as missing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    grid: GridSpec,
    values: Array2<f64>,
    units: RasterUnits,
}

/// Written in place of masked-out cells.
pub const NODATA: f64 = -9999.0;

impl Raster {
    pub fn new(grid: GridSpec, mut values: Array2<f64>, units: RasterUnits) -> Result<Self> {
        if values.dim() != (grid.m, grid.p) {
            return Err(Error::Dimension(format!(
                "raster values are {:?}, grid is {}x{}",
                values.dim(),
                grid.m,
                grid.p
            )));
        }
        for ((i, j), v) in values.indexed_iter_mut() {
            if !grid.in_mask(i, j) {
                *v = 0.0;
            } else if !v.is_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite raster value at cell ({i}, {j})"
                )));
            }
        }
        Ok(Self {
            grid,
            values,
            units,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn units(&self) -> RasterUnits {
        self.units
    }

    /// All values; masked-out cells hold zero.
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        self.grid.in_mask(i, j).then(|| self.values[[i, j]])
    }

    /// Value of the cell containing `p`, if that cell is masked in.
    pub fn value_at(&self, p: Point) -> Option<f64> {
        let (i, j) = self.grid.locate(p.x, p.y)?;
        self.get(i, j)
    }

    /// Value of the cell containing `p`; when that cell is masked out (its
    /// centroid falls outside the window) the nearest masked-in cell, by
    /// centroid distance, is used instead. `None` off the grid.
    pub fn value_near(&self, p: Point) -> Option<f64> {
        let (i, j) = self.grid.locate(p.x, p.y)?;
        if let Some(v) = self.get(i, j) {
            return Some(v);
        }
        let g = &self.grid;
        let max_ring = g.m.max(g.p);
        for ring in 1..=max_ring {
            let mut best: Option<(f64, f64)> = None;
            let (i0, i1) = (i.saturating_sub(ring), (i + ring).min(g.m - 1));
            let (j0, j1) = (j.saturating_sub(ring), (j + ring).min(g.p - 1));
            for a in i0..=i1 {
                for b in j0..=j1 {
                    if a.abs_diff(i) != ring && b.abs_diff(j) != ring {
                        continue;
                    }
                    if g.in_mask(a, b) {
                        let d = g.centroid(a, b).dist2(&p);
                        if best.is_none_or(|(bd, _)| d < bd) {
                            best = Some((d, self.values[[a, b]]));
                        }
                    }
                }
            }
            if let Some((_, v)) = best {
                return Some(v);
            }
        }
        None
    }

    /// Riemann sum of the values over the masked-in cells.
    pub fn integral(&self) -> f64 {
        self.grid
            .masked_cells()
            .map(|(i, j)| self.values[[i, j]])
            .sum::<f64>()
            * self.grid.cell_area()
    }

    pub fn map(&self, units: RasterUnits, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.grid.clone(), self.values.mapv(f), units)
    }

    /// ESRI ASCII grid, rows written north to south. A non-square cell writes
    /// `dx`/`dy` instead of `cellsize`.
    pub fn write_ascii_grid<W: Write>(&self, mut w: W) -> Result<()> {
        let g = &self.grid;
        writeln!(w, "ncols {}", g.m)?;
        writeln!(w, "nrows {}", g.p)?;
        writeln!(w, "xllcorner {}", g.x_min)?;
        writeln!(w, "yllcorner {}", g.y_min)?;
        if (g.dx - g.dy).abs() <= 1e-12 * g.dx.abs().max(g.dy.abs()) {
            writeln!(w, "cellsize {}", g.dx)?;
        } else {
            writeln!(w, "dx {}", g.dx)?;
            writeln!(w, "dy {}", g.dy)?;
        }
        writeln!(w, "NODATA_value {}", NODATA)?;
        for j in (0..g.p).rev() {
            let row: Vec<String> = (0..g.m)
                .map(|i| self.get(i, j).unwrap_or(NODATA).to_string())
                .collect();
            writeln!(w, "{}", row.join(" "))?;
        }
        Ok(())
    }

    /// Reads the format written by [`Raster::write_ascii_grid`]. Cells equal
    /// to the NODATA value are masked out.
    pub fn read_ascii_grid<R: std::io::BufRead>(src: R, units: RasterUnits) -> Result<Self> {
        let mut header = std::collections::HashMap::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for (idx, line) in src.lines().enumerate() {
            let line = line?;
            let line_no = idx + 1;
            let mut parts = line.split_whitespace().peekable();
            let Some(first) = parts.peek().copied() else {
                continue;
            };
            if first
                .chars()
                .next()
                .is_some_and(|c| c.is_ascii_alphabetic())
            {
                let key = first.to_ascii_lowercase();
                parts.next();
                let value = parts
                    .next()
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Parse {
                        line: line_no,
                        msg: format!("header `{key}` needs a number"),
                    })?;
                header.insert(key, value);
            } else {
                let row = parts
                    .map(|v| v.parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Parse {
                        line: line_no,
                        msg: e.to_string(),
                    })?;
                rows.push(row);
            }
        }
        let get = |k: &str| {
            header.get(k).copied().ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("missing header `{k}`"),
            })
        };
        let m = get("ncols")? as usize;
        let p = get("nrows")? as usize;
        let (dx, dy) = match header.get("cellsize") {
            Some(&c) => (c, c),
            None => (get("dx")?, get("dy")?),
        };
        let nodata = header.get("nodata_value").copied().unwrap_or(NODATA);
        if rows.len() != p || rows.iter().any(|r| r.len() != m) {
            return Err(Error::Dimension(format!("expected {p} rows of {m} values")));
        }
        let mut values = Array2::zeros((m, p));
        let mut mask = vec![false; m * p];
        for (r, row) in rows.iter().enumerate() {
            let j = p - 1 - r;
            for (i, &v) in row.iter().enumerate() {
                if v != nodata {
                    values[[i, j]] = v;
                    mask[i * p + j] = true;
                }
            }
        }
        let grid = GridSpec::with_mask(get("xllcorner")?, get("yllcorner")?, dx, dy, m, p, mask)?;
        Raster::new(grid, values, units)
    }

    /// Flat CSV `i,j,x,y,value` over the masked-in cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["i", "j", "x", "y", "value"])?;
        for (i, j) in self.grid.masked_cells() {
            let c = self.grid.centroid(i, j);
            wtr.write_record(&[
                i.to_string(),
                j.to_string(),
                c.x.to_string(),
                c.y.to_string(),
                self.values[[i, j]].to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Per-day cell counts of a pattern on a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCountSeries {
    grid: GridSpec,
    t_range: TimeRange,
    counts: Vec<Array2<u32>>,
}

impl CellCountSeries {
    pub fn new(grid: GridSpec, t_range: TimeRange, counts: Vec<Array2<u32>>) -> Result<Self> {
        if counts.len() != t_range.len() {
            return Err(Error::Dimension(format!(
                "{} count slices for {} days",
                counts.len(),
                t_range.len()
            )));
        }
        if counts.iter().any(|c| c.dim() != (grid.m, grid.p)) {
            return Err(Error::Dimension("count slice does not match grid".into()));
        }
        Ok(Self {
            grid,
            t_range,
            counts,
        })
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn t_range(&self) -> TimeRange {
        self.t_range
    }

    /// Counts for day `t`, if inside the range.
    pub fn slice(&self, t: i64) -> Option<&Array2<u32>> {
        self.t_range.offset(t).map(|k| &self.counts[k])
    }

    pub fn slices(&self) -> &[Array2<u32>] {
        &self.counts
    }

    /// Lexicographically ordered counts for day `t`.
    pub fn lexo(&self, t: i64) -> Option<Vec<u32>> {
        self.slice(t).map(|c| c.iter().copied().collect())
    }

    pub fn total(&self, t: i64) -> Option<u64> {
        self.slice(t).map(|c| c.iter().map(|&v| v as u64).sum())
    }

    /// Restricts to the days in `range`, which must be a sub-range.
    pub fn restrict(&self, range: TimeRange) -> Result<Self> {
        let start = self
            .t_range
            .offset(range.start)
            .ok_or_else(|| Error::domain("restriction starts outside the series"))?;
        let end = self
            .t_range
            .offset(range.end)
            .ok_or_else(|| Error::domain("restriction ends outside the series"))?;
        Self::new(self.grid.clone(), range, self.counts[start..=end].to_vec())
    }
}
