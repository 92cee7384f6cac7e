//! Inhomogeneous K-functions: the spatio-temporal surface and its purely
//! spatial counterpart.

use std::f64::consts::PI;
use std::io::Write;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::edge::{ripley_weight_temporal, EdgeGeometry};
use super::index::CellIndex;
use crate::data::{Event, ObservationWindow, Point, SpatioTemporalPointPattern, TimeRange};
use crate::error::{Error, Result};
use crate::intensity::SpatialDensity;

/// Events processed per parallel task; partial sums are combined in task
/// order so results do not depend on the thread count.
const CHUNK: usize = 256;

/// `K(r, t)` on a lag grid. `values[[k, l]]` belongs to `(r_grid[k], t_grid[l])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSurface {
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<f64>,
    pub values: Array2<f64>,
}

impl KSurface {
    /// Poisson value `2 pi r^2 t`.
    pub fn baseline(r: f64, t: f64) -> f64 {
        2.0 * PI * r * r * t
    }

    /// Sum over the grid of `K(r,t) - 2 pi r^2 t`.
    pub fn residual_sum(&self) -> f64 {
        let mut acc = 0.0;
        for (k, &r) in self.r_grid.iter().enumerate() {
            for (l, &t) in self.t_grid.iter().enumerate() {
                acc += self.values[[k, l]] - Self::baseline(r, t);
            }
        }
        acc
    }

    /// CSV `r,t,value,baseline`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["r", "t", "value", "baseline"])?;
        for (k, &r) in self.r_grid.iter().enumerate() {
            for (l, &t) in self.t_grid.iter().enumerate() {
                wtr.serialize((r, t, self.values[[k, l]], Self::baseline(r, t)))?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A purely spatial K curve with its baseline `pi r^2`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KCurve {
    pub r_grid: Vec<f64>,
    pub values: Vec<f64>,
}

impl KCurve {
    pub fn baseline(r: f64) -> f64 {
        PI * r * r
    }

    /// CSV `r,value,baseline`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["r", "value", "baseline"])?;
        for (&r, &v) in self.r_grid.iter().zip(&self.values) {
            wtr.serialize((r, v, Self::baseline(r)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `lambda(s, t) = lambda0(s) * lambda1(t)` with `lambda0` a spatial density
/// and `lambda1` a per-day series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparableIntensity {
    pub density: SpatialDensity,
    pub daily: Vec<f64>,
    pub t_start: i64,
}

impl SeparableIntensity {
    pub fn new(density: SpatialDensity, daily: Vec<f64>, t_range: TimeRange) -> Result<Self> {
        if daily.len() != t_range.len() {
            return Err(Error::Dimension(format!(
                "{} daily values for a range of {} days",
                daily.len(),
                t_range.len()
            )));
        }
        Ok(Self {
            density,
            daily,
            t_start: t_range.start,
        })
    }

    pub fn lambda1(&self, t: i64) -> f64 {
        usize::try_from(t - self.t_start)
            .ok()
            .and_then(|k| self.daily.get(k))
            .copied()
            .unwrap_or(0.0)
    }

    pub fn value(&self, p: Point, t: i64) -> f64 {
        self.density.at(p) * self.lambda1(t)
    }
}

pub(crate) fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::domain(format!("{name} is empty")));
    }
    if grid.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::domain(format!(
            "{name} must be finite and non-negative"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::domain(format!("{name} must be strictly increasing")));
    }
    Ok(())
}

pub(crate) fn event_intensities(
    events: &[Event],
    intensity: impl Fn(&Event) -> f64,
) -> Result<Vec<f64>> {
    events
        .iter()
        .enumerate()
        .map(|(index, e)| {
            let value = intensity(e);
            if value > 0.0 && value.is_finite() {
                Ok(value)
            } else {
                Err(Error::NonPositiveIntensity { index, value })
            }
        })
        .collect()
}

/// Pair sums behind the spatio-temporal K surface. Inputs are per-event
/// arrays; `lambda` must be positive.
pub(crate) struct KEngine<'a> {
    points: &'a [Point],
    window: &'a ObservationWindow,
    t_range: TimeRange,
    r_grid: &'a [f64],
    t_grid: &'a [f64],
    edge: EdgeGeometry<'a>,
}

impl<'a> KEngine<'a> {
    pub(crate) fn new(
        points: &'a [Point],
        window: &'a ObservationWindow,
        t_range: TimeRange,
        r_grid: &'a [f64],
        t_grid: &'a [f64],
    ) -> Result<Self> {
        check_grid("r_grid", r_grid)?;
        check_grid("t_grid", t_grid)?;
        Ok(Self {
            points,
            window,
            t_range,
            r_grid,
            t_grid,
            edge: EdgeGeometry::new(window),
        })
    }

    /// Evaluates the surface for one assignment of day stamps.
    pub(crate) fn surface(&self, times: &[i64], lambda: &[f64]) -> Array2<f64> {
        let n = self.points.len();
        let (nr, nt) = (self.r_grid.len(), self.t_grid.len());
        let r_max = *self.r_grid.last().expect("checked non-empty");
        let t_max = *self.t_grid.last().expect("checked non-empty");
        let n_days = self.t_range.len();
        let t0 = self.t_range.start;

        let mut by_day: Vec<Vec<usize>> = vec![Vec::new(); n_days];
        for (i, &t) in times.iter().enumerate() {
            by_day[(t - t0) as usize].push(i);
        }
        let day_points: Vec<Vec<Point>> = by_day
            .iter()
            .map(|ids| ids.iter().map(|&i| self.points[i]).collect())
            .collect();
        let indices: Vec<CellIndex> = day_points
            .iter()
            .map(|p| CellIndex::new(p, r_max))
            .collect();
        let reach = t_max.floor() as i64;
        let (tf0, tf1) = (self.t_range.start as f64, self.t_range.end as f64);

        let order: Vec<usize> = (0..n).collect();
        let partials: Vec<Array2<f64>> = order
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut hist = Array2::<f64>::zeros((nr, nt));
                for &i in chunk {
                    let (si, ti) = (self.points[i], times[i]);
                    let inv_li = 1.0 / lambda[i];
                    for d in
                        (ti - reach).max(self.t_range.start)..=(ti + reach).min(self.t_range.end)
                    {
                        let lag = (d - ti).abs() as f64;
                        let l = self.t_grid.partition_point(|&t| t < lag);
                        if l >= nt {
                            continue;
                        }
                        let wt = ripley_weight_temporal(ti as f64, d as f64, tf0, tf1);
                        let day = (d - t0) as usize;
                        let ids = &by_day[day];
                        indices[day].for_each_candidate(si, r_max, |local| {
                            let j = ids[local];
                            if j == i {
                                return;
                            }
                            let dist = si.dist(&day_points[day][local]);
                            if dist > r_max {
                                return;
                            }
                            let k = self.r_grid.partition_point(|&r| r < dist);
                            let ws = if dist > 0.0 {
                                self.edge.weight(si, dist)
                            } else {
                                1.0
                            };
                            hist[[k, l]] += wt * ws * inv_li / lambda[j];
                        });
                    }
                }
                hist
            })
            .collect();
        let mut total = Array2::<f64>::zeros((nr, nt));
        for h in &partials {
            total += h;
        }
        cumulate(&mut total);
        total / (self.window.area() * n_days as f64)
    }
}

fn cumulate(a: &mut Array2<f64>) {
    let (nr, nt) = a.dim();
    for k in 0..nr {
        for l in 1..nt {
            a[[k, l]] += a[[k, l - 1]];
        }
    }
    for k in 1..nr {
        for l in 0..nt {
            a[[k, l]] += a[[k - 1, l]];
        }
    }
}

/// Edge-corrected inhomogeneous spatio-temporal K-function over ordered
/// pairs of distinct events, normalised by the window area times the number
/// of days.
pub fn st_inhom_k(
    pattern: &SpatioTemporalPointPattern,
    intensity: impl Fn(&Event) -> f64,
    r_grid: &[f64],
    t_grid: &[f64],
) -> Result<KSurface> {
    let lambda = event_intensities(pattern.events(), intensity)?;
    let points = pattern.locations();
    let engine = KEngine::new(&points, pattern.window(), pattern.t_range(), r_grid, t_grid)?;
    let values = engine.surface(&pattern.times(), &lambda);
    Ok(KSurface {
        r_grid: r_grid.to_vec(),
        t_grid: t_grid.to_vec(),
        values,
    })
}

/// Edge-corrected inhomogeneous spatial K-function of a planar pattern.
/// `lambda` holds the intensity at each point.
pub fn spatial_inhom_k(
    points: &[Point],
    lambda: &[f64],
    window: &ObservationWindow,
    r_grid: &[f64],
) -> Result<KCurve> {
    check_grid("r_grid", r_grid)?;
    if lambda.len() != points.len() {
        return Err(Error::Dimension(
            "one intensity value per point required".into(),
        ));
    }
    for (index, &value) in lambda.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositiveIntensity { index, value });
        }
    }
    let r_max = *r_grid.last().expect("checked non-empty");
    let index = CellIndex::new(points, r_max);
    let edge = EdgeGeometry::new(window);
    let nr = r_grid.len();
    let order: Vec<usize> = (0..points.len()).collect();
    let partials: Vec<Vec<f64>> = order
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut hist = vec![0.0; nr];
            for &i in chunk {
                let si = points[i];
                index.for_each_candidate(si, r_max, |j| {
                    if j == i {
                        return;
                    }
                    let d = si.dist(&points[j]);
                    if d > r_max {
                        return;
                    }
                    let k = r_grid.partition_point(|&r| r < d);
                    let ws = if d > 0.0 { edge.weight(si, d) } else { 1.0 };
                    hist[k] += ws / (lambda[i] * lambda[j]);
                });
            }
            hist
        })
        .collect();
    let mut values = vec![0.0; nr];
    for h in &partials {
        for (v, x) in values.iter_mut().zip(h) {
            *v += x;
        }
    }
    let mut acc = 0.0;
    for v in values.iter_mut() {
        acc += *v;
        *v = acc / window.area();
    }
    Ok(KCurve {
        r_grid: r_grid.to_vec(),
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summary::edge::ripley_weight_spatial;

    fn pattern(events: Vec<Event>, t1: i64) -> SpatioTemporalPointPattern {
        let w = ObservationWindow::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
        SpatioTemporalPointPattern::new(events, w, TimeRange::new(1, t1).unwrap()).unwrap()
    }

    #[test]
    fn two_interior_events() {
        let p = pattern(
            vec![
                Event {
                    x: 5.0,
                    y: 5.0,
                    t: 5,
                },
                Event {
                    x: 6.0,
                    y: 5.0,
                    t: 6,
                },
            ],
            10,
        );
        let k = st_inhom_k(&p, |_| 0.5, &[0.5, 1.0, 2.0], &[0.5, 1.0]).unwrap();
        // two ordered pairs, weights 1, divided by lambda^2 and |R| * T
        let full = 2.0 / 0.25 / (100.0 * 10.0);
        assert_eq!(k.values[[0, 0]], 0.0);
        assert_eq!(k.values[[1, 0]], 0.0);
        assert_eq!(k.values[[0, 1]], 0.0);
        assert!((k.values[[1, 1]] - full).abs() < 1e-15);
        assert!((k.values[[2, 1]] - full).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_intensity_names_event() {
        let p = pattern(
            vec![
                Event {
                    x: 1.0,
                    y: 1.0,
                    t: 1,
                },
                Event {
                    x: 2.0,
                    y: 2.0,
                    t: 1,
                },
            ],
            1,
        );
        let err =
            st_inhom_k(&p, |e| if e.x > 1.5 { 0.0 } else { 1.0 }, &[1.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::NonPositiveIntensity { index: 1, .. }));
    }

    #[test]
    fn spatial_k_matches_double_loop() {
        let w = ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        let pts: Vec<Point> = (0..40)
            .map(|k| {
                let a = (k as f64 * 0.754_877_666).fract();
                let b = (k as f64 * 0.569_840_291).fract();
                Point::new(a, b)
            })
            .collect();
        let lam: Vec<f64> = pts.iter().map(|p| 30.0 + 10.0 * p.x).collect();
        let r = [0.05, 0.1, 0.2, 0.3];
        let k = spatial_inhom_k(&pts, &lam, &w, &r).unwrap();
        for (kk, &rr) in r.iter().enumerate() {
            let mut s = 0.0;
            for i in 0..pts.len() {
                for j in 0..pts.len() {
                    let d = pts[i].dist(&pts[j]);
                    if i != j && d <= rr {
                        s += ripley_weight_spatial(pts[i], pts[j], &w) / (lam[i] * lam[j]);
                    }
                }
            }
            assert!((k.values[kk] - s).abs() <= 1e-12 * s.max(1.0));
        }
    }
}
