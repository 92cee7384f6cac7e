//! Conditional simulation of the latent field given cell counts with the
//! Metropolis-adjusted Langevin algorithm.
//!
//! The state holds whitened coordinates `gamma_t` on the extended lattice for
//! the last `zeta` days. The field is `z_t = A gamma_t + mu` and the whitened
//! series is a unit-variance AR(1) with coefficient `exp(-1/theta)`.

use std::io::Write;

use ndarray::{Array2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::covfit::CovarianceParams;
use crate::data::CellCountSeries;
use crate::error::{Error, Result};
use crate::grf::CirculantSpectrum;
use crate::rng::stream_rng;

/// Acceptance rate the step size is tuned towards.
pub const TARGET_ACCEPT: f64 = 0.574;

/// Everything the target density depends on apart from the state.
#[derive(Debug, Clone)]
pub struct MalaProblem<'a> {
    pub spectrum: &'a CirculantSpectrum,
    /// Counts for each modelled day, base-lattice shaped.
    pub counts: Vec<Array2<f64>>,
    /// `lambda0(c) * lambda1(t) * cell area` for each modelled day, zero on
    /// masked-out cells.
    pub base_mean: Vec<Array2<f64>>,
    pub mask: Array2<bool>,
    pub beta: f64,
    pub mu: f64,
}

impl<'a> MalaProblem<'a> {
    /// Builds the problem from the last `zeta` days of `counts`.
    pub fn new(
        spectrum: &'a CirculantSpectrum,
        counts: &CellCountSeries,
        density: &Array2<f64>,
        lambda1: &[f64],
        zeta: usize,
    ) -> Result<Self> {
        let grid = counts.grid();
        let ext = &spectrum.ext;
        if grid.m != ext.base.m || grid.p != ext.base.p || density.dim() != (grid.m, grid.p) {
            return Err(Error::Dimension(
                "counts, density and spectrum lattices differ".into(),
            ));
        }
        let n_days = counts.slices().len();
        if lambda1.len() != n_days {
            return Err(Error::Dimension(format!(
                "{} temporal intensities for {} days",
                lambda1.len(),
                n_days
            )));
        }
        if zeta == 0 || zeta > n_days {
            return Err(Error::domain(format!(
                "window of {zeta} days is not within 1..={n_days}"
            )));
        }
        let mask = Array2::from_shape_fn((grid.m, grid.p), |(i, j)| grid.in_mask(i, j));
        let first = n_days - zeta;
        let area = grid.cell_area();
        let mut cs = Vec::with_capacity(zeta);
        let mut bm = Vec::with_capacity(zeta);
        for k in first..n_days {
            cs.push(counts.slices()[k].mapv(f64::from));
            let l1 = lambda1[k];
            bm.push(Array2::from_shape_fn((grid.m, grid.p), |(i, j)| {
                if mask[[i, j]] {
                    density[[i, j]] * l1 * area
                } else {
                    0.0
                }
            }));
        }
        Ok(Self::from_parts(spectrum, cs, bm, mask))
    }

    /// Direct construction from per-day arrays.
    pub fn from_parts(
        spectrum: &'a CirculantSpectrum,
        counts: Vec<Array2<f64>>,
        base_mean: Vec<Array2<f64>>,
        mask: Array2<bool>,
    ) -> Self {
        let p = spectrum.params;
        Self {
            spectrum,
            counts,
            base_mean,
            mask,
            beta: (-1.0 / p.theta).exp(),
            mu: p.mean(),
        }
    }

    pub fn n_slices(&self) -> usize {
        self.counts.len()
    }

    fn shape(&self) -> (usize, usize) {
        (self.spectrum.ext.big_m, self.spectrum.ext.big_n)
    }

    /// Field on the base lattice for one whitened slice.
    pub fn field(&self, gamma: &Array2<f64>) -> Array2<f64> {
        let z = self.spectrum.apply_sqrt(gamma);
        self.spectrum.restrict(&z).mapv(|v| v + self.mu)
    }

    fn check(&self, state: &[Array2<f64>]) -> Result<()> {
        if state.len() != self.n_slices() || state.iter().any(|g| g.dim() != self.shape()) {
            return Err(Error::Dimension("state does not match the problem".into()));
        }
        Ok(())
    }

    fn prior(&self, state: &[Array2<f64>]) -> f64 {
        let b = self.beta;
        let innov = 1.0 - b * b;
        let mut lp = -0.5 * state[0].iter().map(|v| v * v).sum::<f64>();
        for t in 1..state.len() {
            let mut s = 0.0;
            Zip::from(&state[t]).and(&state[t - 1]).for_each(|&g, &h| {
                let d = g - b * h;
                s += d * d;
            });
            lp -= 0.5 * s / innov;
        }
        lp
    }

    /// Poisson log-likelihood of one slice, `sum x log m - m` with `log x!`
    /// dropped.
    fn slice_loglik(&self, t: usize, z: &Array2<f64>) -> f64 {
        let mut ll = 0.0;
        Zip::from(&self.counts[t])
            .and(&self.base_mean[t])
            .and(&self.mask)
            .and(z)
            .for_each(|&x, &m0, &inside, &zv| {
                if inside && m0 > 0.0 {
                    ll += x * (m0.ln() + zv) - m0 * zv.exp();
                }
            });
        ll
    }

    /// Log target density up to a constant.
    pub fn log_target(&self, state: &[Array2<f64>]) -> Result<f64> {
        self.check(state)?;
        let mut lp = self.prior(state);
        for (t, g) in state.iter().enumerate() {
            lp += self.slice_loglik(t, &self.field(g));
        }
        Ok(lp)
    }

    /// Log target and its gradient with respect to every whitened slice.
    pub fn log_target_and_grad(&self, state: &[Array2<f64>]) -> Result<(f64, Vec<Array2<f64>>)> {
        self.check(state)?;
        let (mm, nn) = self.shape();
        let b = self.beta;
        let innov = 1.0 - b * b;
        let n = state.len();
        let mut lp = self.prior(state);
        let mut grad = Vec::with_capacity(n);
        for t in 0..n {
            let z = self.field(&state[t]);
            lp += self.slice_loglik(t, &z);
            // d loglik / dz on base cells, zero elsewhere
            let mut gz = Array2::<f64>::zeros((mm, nn));
            for i in 0..z.nrows() {
                for j in 0..z.ncols() {
                    let m0 = self.base_mean[t][[i, j]];
                    if self.mask[[i, j]] && m0 > 0.0 {
                        gz[[i, j]] = self.counts[t][[i, j]] - m0 * z[[i, j]].exp();
                    }
                }
            }
            let mut g = self.spectrum.apply_sqrt(&gz);
            // prior terms
            if t == 0 {
                g.scaled_add(-1.0, &state[0]);
            } else {
                let mut d = state[t].clone();
                d.scaled_add(-b, &state[t - 1]);
                g.scaled_add(-1.0 / innov, &d);
            }
            if t + 1 < n {
                let mut d = state[t + 1].clone();
                d.scaled_add(-b, &state[t]);
                g.scaled_add(b / innov, &d);
            }
            grad.push(g);
        }
        Ok((lp, grad))
    }
}

/// Chain settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MalaOptions {
    pub n_iter: usize,
    /// Adaptation iterations; `None` uses a fifth of `n_iter`.
    pub burn_in: Option<usize>,
    pub thin: usize,
    pub target_accept: f64,
    /// Starting step variance; `None` uses `d^(-1/3)`.
    pub initial_xi2: Option<f64>,
    pub seed: u64,
    /// Keep the whitened states of retained iterations.
    pub keep_states: bool,
}

impl Default for MalaOptions {
    fn default() -> Self {
        Self {
            n_iter: 5000,
            burn_in: None,
            thin: 10,
            target_accept: TARGET_ACCEPT,
            initial_xi2: None,
            seed: 0,
            keep_states: false,
        }
    }
}

impl MalaOptions {
    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.n_iter / 5)
    }
}

/// Per-iteration diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub log_target: f64,
    pub accepted: bool,
    pub xi2: f64,
}

/// A finished chain. Retained iterations are those after burn-in at the
/// thinning stride.
#[derive(Debug, Clone)]
pub struct MalaRun {
    pub trace: Vec<TraceRow>,
    /// Acceptance rate over the retained phase (all post-burn-in iterations).
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    /// Step variance used after burn-in.
    pub xi2: f64,
    pub burn_in: usize,
    pub n_iter: usize,
    /// Proposals rejected because the target was not finite.
    pub non_finite: usize,
    /// Posterior mean field per modelled day on the base lattice.
    pub mean_fields: Vec<Array2<f64>>,
    /// Field of the last modelled day at each retained iteration.
    pub last_day_fields: Vec<Array2<f64>>,
    /// Whitened states at retained iterations when requested.
    pub states: Vec<Vec<Array2<f64>>>,
    pub final_state: Vec<Array2<f64>>,
}

impl MalaRun {
    pub fn n_retained(&self) -> usize {
        self.last_day_fields.len()
    }

    /// CSV `iteration,log_target,accepted,xi2`.
    pub fn write_trace<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iteration", "log_target", "accepted", "xi2"])?;
        for r in &self.trace {
            wtr.serialize((r.iteration, r.log_target, u8::from(r.accepted), r.xi2))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

fn sq_dist(a: &[Array2<f64>], b: &[Array2<f64>], grad: &[Array2<f64>], h: f64) -> f64 {
    // |a - b - h * grad|^2
    let mut s = 0.0;
    for t in 0..a.len() {
        Zip::from(&a[t])
            .and(&b[t])
            .and(&grad[t])
            .for_each(|&x, &y, &g| {
                let d = x - y - h * g;
                s += d * d;
            });
    }
    s
}

/// One Langevin proposal and Metropolis-Hastings decision. `current` holds
/// the state with its log target and gradient; on acceptance it is replaced.
/// Returns whether the proposal was accepted and whether its target was
/// finite.
pub fn mala_step<R: Rng + ?Sized>(
    problem: &MalaProblem<'_>,
    current: &mut (Vec<Array2<f64>>, f64, Vec<Array2<f64>>),
    xi2: f64,
    rng: &mut R,
) -> Result<(bool, bool, f64)> {
    if !(xi2 > 0.0) {
        return Err(Error::domain("step variance must be positive"));
    }
    let xi = xi2.sqrt();
    let (state, lp, grad) = (&current.0, current.1, &current.2);
    let proposal: Vec<Array2<f64>> = state
        .iter()
        .zip(grad)
        .map(|(g, d)| {
            let mut p = g.clone();
            p.scaled_add(0.5 * xi2, d);
            p.mapv_inplace(|v| v + xi * rng.sample::<f64, _>(StandardNormal));
            p
        })
        .collect();
    let (lp_new, grad_new) = problem.log_target_and_grad(&proposal)?;
    let finite = lp_new.is_finite() && grad_new.iter().all(|g| g.iter().all(|v| v.is_finite()));
    if !finite {
        return Ok((false, false, 0.0));
    }
    let log_q_fwd = -sq_dist(&proposal, state, grad, 0.5 * xi2) / (2.0 * xi2);
    let log_q_bwd = -sq_dist(state, &proposal, &grad_new, 0.5 * xi2) / (2.0 * xi2);
    let log_alpha = (lp_new - lp + log_q_bwd - log_q_fwd).min(0.0);
    let alpha = log_alpha.exp();
    let accepted = rng.random::<f64>() < alpha;
    if accepted {
        *current = (proposal, lp_new, grad_new);
    }
    Ok((accepted, true, alpha))
}

/// Runs the chain from `gamma = 0`. During burn-in `log xi2` follows a
/// Robbins-Monro recursion towards the target acceptance; afterwards it is
/// frozen at its average over the second half of burn-in.
pub fn run_mala(problem: &MalaProblem<'_>, opts: &MalaOptions) -> Result<MalaRun> {
    let burn_in = opts.burn_in();
    if opts.n_iter <= burn_in {
        return Err(Error::domain("n_iter must exceed burn_in"));
    }
    if opts.thin == 0 {
        return Err(Error::domain("thin must be positive"));
    }
    let (mm, nn) = problem.shape();
    let zeta = problem.n_slices();
    let dim = (mm * nn * zeta) as f64;
    let mut rng = stream_rng(opts.seed, 0);
    let init: Vec<Array2<f64>> = (0..zeta).map(|_| Array2::zeros((mm, nn))).collect();
    let (lp0, g0) = problem.log_target_and_grad(&init)?;
    let mut current = (init, lp0, g0);
    let mut log_xi2 = opts.initial_xi2.unwrap_or(dim.powf(-1.0 / 3.0)).ln();

    let (m, p) = (problem.mask.nrows(), problem.mask.ncols());
    let mut mean_fields = vec![Array2::<f64>::zeros((m, p)); zeta];
    let mut last_day_fields = Vec::new();
    let mut states = Vec::new();
    let mut trace = Vec::with_capacity(opts.n_iter);
    let (mut acc_burn, mut acc_post, mut non_finite) = (0usize, 0usize, 0usize);
    let (mut tail_sum, mut tail_n) = (0.0, 0usize);

    for it in 0..opts.n_iter {
        let xi2 = log_xi2.exp();
        let (accepted, finite, alpha) = mala_step(problem, &mut current, xi2, &mut rng)?;
        if !finite {
            non_finite += 1;
        }
        if it < burn_in {
            acc_burn += usize::from(accepted);
            if it >= burn_in / 2 {
                tail_sum += log_xi2;
                tail_n += 1;
            }
            let rate = (1.0 + it as f64 / 10.0).powf(-0.6);
            log_xi2 += rate * (alpha - opts.target_accept);
            if it + 1 == burn_in {
                // freeze at the average over the second half of burn-in
                log_xi2 = tail_sum / tail_n as f64;
            }
        } else {
            acc_post += usize::from(accepted);
            if (it - burn_in) % opts.thin == opts.thin - 1 {
                let fields: Vec<Array2<f64>> = current.0.iter().map(|g| problem.field(g)).collect();
                for (acc, f) in mean_fields.iter_mut().zip(&fields) {
                    *acc += f;
                }
                last_day_fields.push(fields[zeta - 1].clone());
                if opts.keep_states {
                    states.push(current.0.clone());
                }
            }
        }
        trace.push(TraceRow {
            iteration: it,
            log_target: current.1,
            accepted,
            xi2,
        });
    }
    let n_post = opts.n_iter - burn_in;
    let acceptance_rate = acc_post as f64 / n_post as f64;
    if acc_post == 0 {
        return Err(Error::TuningFailure { rate: 0.0 });
    }
    let n_ret = last_day_fields.len().max(1) as f64;
    for f in mean_fields.iter_mut() {
        f.mapv_inplace(|v| v / n_ret);
    }
    Ok(MalaRun {
        trace,
        acceptance_rate,
        burn_in_acceptance: if burn_in > 0 {
            acc_burn as f64 / burn_in as f64
        } else {
            f64::NAN
        },
        xi2: log_xi2.exp(),
        burn_in,
        n_iter: opts.n_iter,
        non_finite,
        mean_fields,
        last_day_fields,
        states,
        final_state: current.0,
    })
}

/// AR(1) coefficient of the whitened series at unit lag.
pub fn ar1_coefficient(params: &CovarianceParams) -> f64 {
    (-1.0 / params.theta).exp()
}
