//! Stationary bivariate K-functions.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::edge::EdgeGeometry;
use super::index::CellIndex;
use super::kfunction::check_grid;
use crate::data::{ObservationWindow, Point};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossK {
    pub r_grid: Vec<f64>,
    pub k12: Vec<f64>,
    pub k21: Vec<f64>,
}

impl CrossK {
    /// Value under independence, `pi r^2`.
    pub fn baseline(r: f64) -> f64 {
        PI * r * r
    }

    /// CSV `r,k12,k21,baseline`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["r", "k12", "k21", "baseline"])?;
        for k in 0..self.r_grid.len() {
            let r = self.r_grid[k];
            wtr.serialize((r, self.k12[k], self.k21[k], Self::baseline(r)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn one_way(a: &[Point], b: &[Point], window: &ObservationWindow, r_grid: &[f64]) -> Vec<f64> {
    let r_max = *r_grid.last().expect("checked non-empty");
    let index = CellIndex::new(b, r_max);
    let edge = EdgeGeometry::new(window);
    let mut hist = vec![0.0; r_grid.len()];
    for &s in a {
        index.for_each_candidate(s, r_max, |j| {
            let d = s.dist(&b[j]);
            if d <= r_max {
                let k = r_grid.partition_point(|&r| r < d);
                hist[k] += if d > 0.0 { edge.weight(s, d) } else { 1.0 };
            }
        });
    }
    let scale = window.area() / (a.len() as f64 * b.len() as f64);
    let mut acc = 0.0;
    hist.iter()
        .map(|h| {
            acc += h;
            acc * scale
        })
        .collect()
}

/// `K12` counts pattern-2 points around pattern-1 points with the correction
/// circle centred on the pattern-1 point; `K21` swaps the roles. Intensities
/// are estimated as `n_i / |R|`.
pub fn bivariate_k(
    pattern1: &[Point],
    pattern2: &[Point],
    window: &ObservationWindow,
    r_grid: &[f64],
) -> Result<CrossK> {
    check_grid("r_grid", r_grid)?;
    if pattern1.is_empty() || pattern2.is_empty() {
        return Err(Error::EmptyPattern { dropped: 0 });
    }
    Ok(CrossK {
        r_grid: r_grid.to_vec(),
        k12: one_way(pattern1, pattern2, window, r_grid),
        k21: one_way(pattern2, pattern1, window, r_grid),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summary::edge::ripley_weight_spatial;

    #[test]
    fn far_apart_patterns_have_no_cross_pairs() {
        let w = ObservationWindow::rectangle(0.0, 0.0, 100.0, 10.0).unwrap();
        let a = vec![Point::new(1.0, 1.0), Point::new(2.0, 3.0)];
        let b: Vec<Point> = a.iter().map(|p| Point::new(p.x + 90.0, p.y)).collect();
        let k = bivariate_k(&a, &b, &w, &[1.0, 5.0]).unwrap();
        assert_eq!(k.k12, vec![0.0, 0.0]);
        assert_eq!(k.k21, vec![0.0, 0.0]);
    }

    #[test]
    fn three_point_toy() {
        let w = ObservationWindow::rectangle(0.0, 0.0, 4.0, 4.0).unwrap();
        let a = vec![Point::new(1.0, 1.0), Point::new(3.0, 3.0)];
        let b = vec![Point::new(1.5, 1.0)];
        let r = [0.4, 1.0, 3.0];
        let k = bivariate_k(&a, &b, &w, &r).unwrap();
        for (idx, &rr) in r.iter().enumerate() {
            let mut s12 = 0.0;
            let mut s21 = 0.0;
            for p in &a {
                for q in &b {
                    if p.dist(q) <= rr {
                        s12 += ripley_weight_spatial(*p, *q, &w);
                        s21 += ripley_weight_spatial(*q, *p, &w);
                    }
                }
            }
            assert!((k.k12[idx] - 16.0 / 2.0 * s12).abs() < 1e-12);
            assert!((k.k21[idx] - 16.0 / 2.0 * s21).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_pattern_is_an_error() {
        let w = ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(bivariate_k(&[], &[Point::new(0.5, 0.5)], &w, &[0.1]).is_err());
    }
}
