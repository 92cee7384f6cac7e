//! Pointwise simulation envelopes.

use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Pointwise minimum and maximum of a statistic across simulations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub n_sim: usize,
}

impl Envelope {
    /// Whether `curve[k]` lies inside `[lo[k], hi[k]]`, per entry.
    pub fn contains(&self, curve: &[f64]) -> Vec<bool> {
        curve
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(v, (lo, hi))| v >= lo && v <= hi)
            .collect()
    }

    /// CSV `index,lo,hi` or, with an observed curve, `index,lo,hi,observed`.
    pub fn write_csv<W: Write>(&self, w: W, lags: &[f64], observed: Option<&[f64]>) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        match observed {
            Some(obs) => {
                wtr.write_record(["lag", "lo", "hi", "observed"])?;
                for k in 0..self.lo.len() {
                    wtr.serialize((lags[k], self.lo[k], self.hi[k], obs[k]))?;
                }
            }
            None => {
                wtr.write_record(["lag", "lo", "hi"])?;
                for k in 0..self.lo.len() {
                    wtr.serialize((lags[k], self.lo[k], self.hi[k]))?;
                }
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Simulates `n_sim` patterns (simulation `i` gets its own RNG stream `i`
/// under `seed`) and returns the pointwise range of `statistic`.
pub fn envelope<P, S, F>(simulate: S, statistic: F, n_sim: usize, seed: u64) -> Result<Envelope>
where
    S: Fn(usize, &mut ChaCha8Rng) -> Result<P> + Sync,
    F: Fn(&P) -> Result<Vec<f64>> + Sync,
{
    if n_sim < 2 {
        return Err(Error::domain(
            "at least two simulations are needed for an envelope",
        ));
    }
    let curves: Vec<Result<Vec<f64>>> = (0..n_sim)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            simulate(i, &mut rng)
                .and_then(|p| statistic(&p))
                .map_err(|e| Error::Simulation {
                    index: i,
                    source: Box::new(e),
                })
        })
        .collect();
    let mut lo: Vec<f64> = Vec::new();
    let mut hi: Vec<f64> = Vec::new();
    for (i, c) in curves.into_iter().enumerate() {
        let c = c?;
        if i == 0 {
            lo = c.clone();
            hi = c;
            continue;
        }
        if c.len() != lo.len() {
            return Err(Error::Simulation {
                index: i,
                source: Box::new(Error::Dimension(
                    "statistic length changed between simulations".into(),
                )),
            });
        }
        for k in 0..c.len() {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    Ok(Envelope { lo, hi, n_sim })
}
