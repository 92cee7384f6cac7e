//! Empirical temporal autocovariance of the daily totals.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutocovCurve {
    /// Lags `1..=v_max`.
    pub v_grid: Vec<usize>,
    /// Time average of `c_hat` for each lag.
    pub values: Vec<f64>,
    /// `c_hat[v-1][k]` is the raw product term at day offset `k + v`.
    pub c_hat: Vec<Vec<f64>>,
}

impl AutocovCurve {
    /// CSV `v,value`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["v", "value"])?;
        for (&v, &c) in self.v_grid.iter().zip(&self.values) {
            wtr.serialize((v, c))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `C(t, v) = N_t N_{t-v} - lambda1(t) lambda1(t-v)` and its average over the
/// `T - v` admissible days, for `v = 1..=v_max`.
pub fn empirical_autocov(counts: &[f64], lambda1: &[f64], v_max: usize) -> Result<AutocovCurve> {
    let n = counts.len();
    if lambda1.len() != n {
        return Err(Error::Dimension(format!(
            "{} counts but {} fitted values",
            n,
            lambda1.len()
        )));
    }
    if v_max == 0 || v_max >= n {
        return Err(Error::domain(format!(
            "v_max must lie in 1..{n}, got {v_max}"
        )));
    }
    let mut c_hat = Vec::with_capacity(v_max);
    let mut values = Vec::with_capacity(v_max);
    for v in 1..=v_max {
        let row: Vec<f64> = (v..n)
            .map(|t| counts[t] * counts[t - v] - lambda1[t] * lambda1[t - v])
            .collect();
        values.push(row.iter().sum::<f64>() / row.len() as f64);
        c_hat.push(row);
    }
    Ok(AutocovCurve {
        v_grid: (1..=v_max).collect(),
        values,
        c_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_day_example() {
        let c = empirical_autocov(&[3.0, 4.0], &[3.0, 4.0], 1).unwrap();
        assert_eq!(c.c_hat[0], vec![0.0]);
        assert_eq!(c.values, vec![0.0]);
    }

    #[test]
    fn counts_equal_to_mean_give_zero() {
        let y = [2.0, 5.0, 1.0, 7.0, 3.0];
        let c = empirical_autocov(&y, &y, 4).unwrap();
        assert!(c.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lag_bounds() {
        assert!(empirical_autocov(&[1.0, 2.0], &[1.0, 2.0], 2).is_err());
        assert!(empirical_autocov(&[1.0, 2.0], &[1.0], 1).is_err());
    }
}
