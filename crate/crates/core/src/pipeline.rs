//! The staged analysis: ingest, bandwidth, intensity, glm-fit, summaries,
//! fit-cov, mala, forecast and simulate.
//!
//! Each stage writes into its own directory under the output root together
//! with a `state.json` holding the hash of everything the stage depends on.
//! A later run whose hash matches reuses the stored state instead of
//! recomputing. Every executed or reused stage appends one line to
//! `manifest.jsonl`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bandwidth::{select_bandwidth, KMeansOptions};
use crate::config::{
    BandwidthConfig, CovfitConfig, GlmConfig, MalaConfig, PipelineConfig, SummariesConfig,
};
use crate::covfit::{
    fit_spatial_params, fit_theta, CovFitReport, CovarianceParams, MeanCorrection, TemporalCovModel,
};
use crate::data::{
    aggregate_counts, daily_counts, load_point_pattern_scaled, save_point_pattern, Event, GridSpec,
    ObservationWindow, Point, Raster, SpatioTemporalPointPattern, TimeRange,
};
use crate::error::{Error, Result};
use crate::forecast::{forecast_field_draw, forecast_intensity, forecast_mean_from};
use crate::glm::{build_design, irls_fit, predict_lambda1, TemporalGlmFit};
use crate::grf::{circulant_eigenvalues, extend_grid, CirculantSpectrum};
use crate::intensity::{
    epanechnikov_daily, kernel_intensity_points, normalize_to_density, SpatialDensity,
};
use crate::mala::{run_mala, MalaOptions, MalaProblem, MalaRun};
use crate::rng::{named_seed, stream_rng};
use crate::sim::simulate_in_window;
use crate::summary::{
    empirical_autocov, spacetime_mc_test, spatial_inhom_k, st_inhom_k, stoyan_bandwidth,
    time_averaged_pcf, AutocovCurve, Envelope, KSurface, McTestResult, PcfCurve,
};

/// Pipeline stages in execution order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Ingest,
    Bandwidth,
    Intensity,
    GlmFit,
    Summaries,
    FitCov,
    Mala,
    Forecast,
    Simulate,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Bandwidth,
        Stage::Intensity,
        Stage::GlmFit,
        Stage::Summaries,
        Stage::FitCov,
        Stage::Mala,
        Stage::Forecast,
        Stage::Simulate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Bandwidth => "bandwidth",
            Stage::Intensity => "intensity",
            Stage::GlmFit => "glm-fit",
            Stage::Summaries => "summaries",
            Stage::FitCov => "fit-cov",
            Stage::Mala => "mala",
            Stage::Forecast => "forecast",
            Stage::Simulate => "simulate",
        }
    }
}

/// One line of `manifest.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub stage: String,
    pub inputs_hash: String,
    /// Paths relative to the output root.
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
    pub seed: Option<u64>,
    /// Loaded from an earlier run instead of recomputed.
    pub resumed: bool,
}

/// Seed of the named random consumer under the root seed.
pub fn consumer_seed(cfg: &PipelineConfig, name: &str) -> u64 {
    named_seed(cfg.seed, name)
}

fn hash_parts(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("config values serialize")
}

// ---------------------------------------------------------------------------
// Stage computations. These are independent of the on-disk layout.

/// Fitting and held-out patterns.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub fit: SpatioTemporalPointPattern,
    /// The trailing held-out days, when any are withheld.
    pub holdout: Option<SpatioTemporalPointPattern>,
    pub dropped: usize,
}

impl Ingested {
    pub fn window(&self) -> &ObservationWindow {
        self.fit.window()
    }
}

/// Reads the window and the events and splits off the held-out days.
pub fn ingest_files(pattern: &Path, window: &Path, cfg: &PipelineConfig) -> Result<Ingested> {
    let mut window = ObservationWindow::from_csv(File::open(window)?)?;
    let scale = cfg.data.coordinate_scale;
    if scale != 1.0 {
        window = window.scaled(scale)?;
    }
    let mut bytes = Vec::new();
    File::open(pattern)?.read_to_end(&mut bytes)?;
    let wide = TimeRange::new(
        cfg.data.t_start.unwrap_or(-(1 << 40)),
        cfg.data.t_end.unwrap_or(1 << 40),
    )?;
    let report = load_point_pattern_scaled(bytes.as_slice(), &window, wide, scale)?;
    let times = report.pattern.times();
    let range = TimeRange::new(
        cfg.data.t_start.unwrap_or(times[0]),
        cfg.data
            .t_end
            .unwrap_or(*times.last().expect("non-empty pattern")),
    )?;
    let pattern = report.pattern.restrict(range)?;
    split_holdout(pattern, cfg.data.holdout, report.dropped)
}

/// Splits the last `holdout` days off `pattern`.
pub fn split_holdout(
    pattern: SpatioTemporalPointPattern,
    holdout: usize,
    dropped: usize,
) -> Result<Ingested> {
    let range = pattern.t_range();
    if holdout + 2 > range.len() {
        return Err(Error::config(
            "data.holdout",
            format!(
                "{holdout} held-out days leave fewer than 2 of {} for fitting",
                range.len()
            ),
        ));
    }
    if holdout == 0 {
        return Ok(Ingested {
            fit: pattern,
            holdout: None,
            dropped,
        });
    }
    let split = range.end - holdout as i64;
    let fit = pattern.restrict(TimeRange::new(range.start, split)?)?;
    let rest = pattern.restrict(TimeRange::new(split + 1, range.end)?)?;
    Ok(Ingested {
        fit,
        holdout: Some(rest),
        dropped,
    })
}

/// K-means bandwidth of the pooled locations, or the fixed value.
pub fn choose_bandwidth(
    pattern: &SpatioTemporalPointPattern,
    cfg: &BandwidthConfig,
    seed: u64,
) -> Result<f64> {
    if let Some(h) = cfg.fixed {
        return Ok(h);
    }
    let opts = KMeansOptions {
        k: cfg.k,
        epsilon: cfg.epsilon,
        max_iter: cfg.max_iter,
        seed,
    };
    select_bandwidth(&pattern.locations(), &opts)
}

/// Normalised quartic-kernel density of the pooled locations.
pub fn estimate_density(
    pattern: &SpatioTemporalPointPattern,
    grid: &GridSpec,
    h: f64,
) -> Result<SpatialDensity> {
    let raw = kernel_intensity_points(&pattern.locations(), grid, h)?;
    normalize_to_density(&raw, h)
}

/// Poisson regression of the daily totals on the calendar design.
pub fn fit_temporal(
    pattern: &SpatioTemporalPointPattern,
    cfg: &GlmConfig,
) -> Result<TemporalGlmFit> {
    let y: Vec<u64> = daily_counts(pattern).into_iter().map(|(_, n)| n).collect();
    let design = build_design(pattern.t_range(), &cfg.design)?;
    irls_fit(&design, &y, &cfg.irls())
}

/// Evenly spaced lags up to a quarter of the shorter side of the window's
/// bounding box.
pub fn default_lags(window: &ObservationWindow, n: usize) -> Vec<f64> {
    let b = window.bounding_box();
    let top = 0.25 * b.width().min(b.height());
    (1..=n).map(|k| top * k as f64 / n as f64).collect()
}

pub fn r_grid_for(cfg: &SummariesConfig, window: &ObservationWindow) -> Vec<f64> {
    cfg.r_grid
        .clone()
        .unwrap_or_else(|| default_lags(window, 20))
}

pub fn u_grid_for(cfg: &SummariesConfig, window: &ObservationWindow) -> Vec<f64> {
    cfg.u_grid
        .clone()
        .unwrap_or_else(|| default_lags(window, 40))
}

/// Second-order summaries of the fitting pattern.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summaries {
    pub kst: KSurface,
    pub pcf: PcfCurve,
    pub autocov: AutocovCurve,
    pub mctest: Option<McTestResult>,
}

/// `lambda0 * lambda1_hat` with the temporal kernel estimate.
pub fn kernel_intensity_fn<'a>(
    pattern: &SpatioTemporalPointPattern,
    density: &'a SpatialDensity,
    h_t: f64,
) -> Result<impl Fn(Point, i64) -> f64 + Sync + 'a> {
    let daily = epanechnikov_daily(pattern, h_t)?;
    let start = pattern.t_range().start;
    Ok(move |p: Point, t: i64| {
        let l1 = usize::try_from(t - start)
            .ok()
            .and_then(|k| daily.get(k))
            .copied()
            .unwrap_or(0.0);
        density.at(p) * l1
    })
}

pub fn compute_kst(
    pattern: &SpatioTemporalPointPattern,
    density: &SpatialDensity,
    cfg: &SummariesConfig,
) -> Result<KSurface> {
    let lambda = kernel_intensity_fn(pattern, density, cfg.temporal_bandwidth)?;
    st_inhom_k(
        pattern,
        |e: &Event| lambda(e.location(), e.t),
        &r_grid_for(cfg, pattern.window()),
        &cfg.t_grid,
    )
}

pub fn compute_pcf(
    pattern: &SpatioTemporalPointPattern,
    density: &SpatialDensity,
    lambda1: &[f64],
    cfg: &SummariesConfig,
) -> Result<PcfCurve> {
    let window = pattern.window();
    let rate = pattern.len() as f64 / (window.area() * pattern.t_range().len() as f64);
    let h = stoyan_bandwidth(rate, cfg.stoyan_c)?;
    time_averaged_pcf(
        &pattern.by_day(),
        window,
        |p| density.at(p),
        lambda1,
        &u_grid_for(cfg, window),
        h,
    )
}

pub fn compute_autocov(
    pattern: &SpatioTemporalPointPattern,
    lambda1: &[f64],
    cfg: &SummariesConfig,
) -> Result<AutocovCurve> {
    let counts: Vec<f64> = daily_counts(pattern)
        .into_iter()
        .map(|(_, n)| n as f64)
        .collect();
    let v_max = cfg.v_max.min(counts.len().saturating_sub(1));
    empirical_autocov(&counts, lambda1, v_max)
}

pub fn compute_mctest(
    pattern: &SpatioTemporalPointPattern,
    density: &SpatialDensity,
    cfg: &SummariesConfig,
    seed: u64,
) -> Result<McTestResult> {
    let lambda = kernel_intensity_fn(pattern, density, cfg.temporal_bandwidth)?;
    spacetime_mc_test(
        pattern,
        lambda,
        cfg.n_perm,
        &r_grid_for(cfg, pattern.window()),
        &cfg.t_grid,
        seed,
    )
}

pub fn compute_summaries(
    pattern: &SpatioTemporalPointPattern,
    density: &SpatialDensity,
    glm: &TemporalGlmFit,
    cfg: &SummariesConfig,
    seed: u64,
) -> Result<Summaries> {
    Ok(Summaries {
        kst: compute_kst(pattern, density, cfg)?,
        pcf: compute_pcf(pattern, density, &glm.fitted, cfg)?,
        autocov: compute_autocov(pattern, &glm.fitted, cfg)?,
        mctest: if cfg.n_perm > 0 {
            Some(compute_mctest(pattern, density, cfg, seed)?)
        } else {
            None
        },
    })
}

/// Minimum-contrast fit of `(sigma2, phi)` on the pair correlation and of
/// `theta` on the autocovariance.
pub fn fit_covariance(
    density: &SpatialDensity,
    glm: &TemporalGlmFit,
    pcf: &PcfCurve,
    autocov: &AutocovCurve,
    cfg: &CovfitConfig,
) -> Result<CovFitReport> {
    let spatial = fit_spatial_params(pcf, &cfg.spatial)?;
    let model = TemporalCovModel::new(&density.raster, &glm.fitted)?;
    let correction = if cfg.temporal.mean_correction {
        Some(MeanCorrection::from_fit(glm)?)
    } else {
        None
    };
    let temporal = fit_theta(
        autocov,
        spatial.sigma2,
        spatial.phi,
        &model,
        correction.as_ref(),
        &cfg.temporal,
    )?;
    Ok(CovFitReport {
        params: CovarianceParams::new(spatial.sigma2, spatial.phi, temporal.theta)?,
        contrast_spatial: spatial.contrast,
        contrast_temporal: temporal.contrast,
        spatial_at_boundary: spatial.at_boundary,
        temporal_at_boundary: temporal.at_boundary,
    })
}

/// Runs the chain on the last `zeta` fitting days.
pub fn run_conditional(
    pattern: &SpatioTemporalPointPattern,
    spectrum: &CirculantSpectrum,
    density: &SpatialDensity,
    lambda1: &[f64],
    cfg: &MalaConfig,
    seed: u64,
) -> Result<MalaRun> {
    let counts = aggregate_counts(pattern, density.raster.grid())?;
    let zeta = cfg.zeta.min(lambda1.len());
    let problem = MalaProblem::new(spectrum, &counts, density.raster.values(), lambda1, zeta)?;
    let opts = MalaOptions {
        n_iter: cfg.n_iter,
        burn_in: cfg.burn_in,
        thin: cfg.thin,
        target_accept: cfg.target_accept,
        initial_xi2: cfg.initial_xi2,
        seed,
        keep_states: false,
    };
    run_mala(&problem, &opts)
}

/// Forecast of one horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDay {
    pub delta: u32,
    pub day: i64,
    pub lambda1: f64,
    /// Mean over draws of the integrated intensity.
    pub mean_integral: f64,
    /// Mean over draws of the intensity raster.
    pub mean_intensity: Raster,
    /// `phi E[z_T] + (1 - phi) mu`.
    pub mean_field: Array2<f64>,
}

fn draw_stream(delta: u32, i: usize) -> u64 {
    (u64::from(delta) << 32) | i as u64
}

/// One intensity draw per retained sample for each horizon.
#[allow(clippy::too_many_arguments)]
pub fn forecast_days(
    last_day_fields: &[Array2<f64>],
    posterior_mean: &Array2<f64>,
    spectrum: &CirculantSpectrum,
    density: &SpatialDensity,
    glm: &TemporalGlmFit,
    last_day: i64,
    deltas: &[u32],
    seed: u64,
) -> Result<Vec<ForecastDay>> {
    if last_day_fields.is_empty() {
        return Err(Error::domain("no retained samples to forecast from"));
    }
    let grid = density.raster.grid().clone();
    deltas
        .iter()
        .map(|&delta| {
            let day = last_day + i64::from(delta);
            let lambda1 = predict_lambda1(glm, day);
            let draws: Vec<Result<Raster>> = last_day_fields
                .par_iter()
                .enumerate()
                .map(|(i, z)| {
                    let mut rng = stream_rng(seed, draw_stream(delta, i));
                    let field = forecast_field_draw(z, f64::from(delta), spectrum, &mut rng)?;
                    forecast_intensity(&density.raster, lambda1, &field)
                })
                .collect();
            let n = draws.len() as f64;
            let mut sum = Array2::<f64>::zeros((grid.m, grid.p));
            let mut integral = 0.0;
            for d in draws {
                let d = d?;
                integral += d.integral();
                sum += d.values();
            }
            sum.mapv_inplace(|v| v / n);
            Ok(ForecastDay {
                delta,
                day,
                lambda1,
                mean_integral: integral / n,
                mean_intensity: Raster::new(
                    grid.clone(),
                    sum,
                    crate::data::RasterUnits::IntensityPerArea,
                )?,
                mean_field: forecast_mean_from(posterior_mean, f64::from(delta), &spectrum.params),
            })
        })
        .collect()
}

/// Envelope comparison for one forecast day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeDay {
    pub delta: u32,
    pub day: i64,
    pub envelope: Envelope,
    /// K of the held-out events of that day, when available.
    pub observed: Option<Vec<f64>>,
    pub n_observed: usize,
}

impl EnvelopeDay {
    /// Share of lags from the middle of the grid upwards where the observed
    /// curve is inside the envelope.
    pub fn long_range_inside(&self) -> Option<f64> {
        let obs = self.observed.as_ref()?;
        let inside = self.envelope.contains(obs);
        let from = inside.len() / 2;
        let tail = &inside[from..];
        Some(tail.iter().filter(|&&b| b).count() as f64 / tail.len() as f64)
    }
}

fn k_at(
    points: &[Point],
    intensity: &Raster,
    window: &ObservationWindow,
    r_grid: &[f64],
) -> Result<Vec<f64>> {
    let lambda: Vec<f64> = points
        .iter()
        .map(|&p| intensity.value_near(p).unwrap_or(0.0))
        .collect();
    Ok(spatial_inhom_k(points, &lambda, window, r_grid)?.values)
}

/// Simulated forecast patterns. Realisation `r` uses RNG stream `r`; for
/// each horizon it draws a field from retained sample `r mod n` and a
/// Poisson pattern from the resulting intensity.
pub fn simulate_forecasts(
    last_day_fields: &[Array2<f64>],
    spectrum: &CirculantSpectrum,
    density: &SpatialDensity,
    days: &[ForecastDay],
    window: &ObservationWindow,
    n_realizations: usize,
    seed: u64,
) -> Result<Vec<Vec<Event>>> {
    if last_day_fields.is_empty() {
        return Err(Error::domain("no retained samples to simulate from"));
    }
    (0..n_realizations)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(seed, r as u64);
            let z = &last_day_fields[r % last_day_fields.len()];
            let mut events = Vec::new();
            for d in days {
                let field = forecast_field_draw(z, f64::from(d.delta), spectrum, &mut rng)?;
                let intensity = forecast_intensity(&density.raster, d.lambda1, &field)?;
                for p in simulate_in_window(&intensity, Some(window), &mut rng)? {
                    events.push(Event {
                        x: p.x,
                        y: p.y,
                        t: d.day,
                    });
                }
            }
            Ok(events)
        })
        .collect::<Vec<Result<_>>>()
        .into_iter()
        .enumerate()
        .map(|(index, r)| {
            r.map_err(|e| Error::Simulation {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Pointwise K envelopes of the simulated patterns per forecast day, with
/// the held-out events' curve when that day was withheld.
pub fn forecast_envelopes(
    realizations: &[Vec<Event>],
    days: &[ForecastDay],
    holdout: Option<&SpatioTemporalPointPattern>,
    window: &ObservationWindow,
    r_grid: &[f64],
) -> Result<Vec<EnvelopeDay>> {
    days.iter()
        .map(|d| {
            let curves: Vec<Vec<f64>> = realizations
                .par_iter()
                .map(|events| {
                    let pts: Vec<Point> = events
                        .iter()
                        .filter(|e| e.t == d.day)
                        .map(Event::location)
                        .collect();
                    k_at(&pts, &d.mean_intensity, window, r_grid)
                })
                .collect::<Result<_>>()?;
            let nr = r_grid.len();
            let mut env = Envelope {
                lo: vec![f64::INFINITY; nr],
                hi: vec![f64::NEG_INFINITY; nr],
                n_sim: curves.len(),
            };
            for c in &curves {
                for k in 0..nr {
                    env.lo[k] = env.lo[k].min(c[k]);
                    env.hi[k] = env.hi[k].max(c[k]);
                }
            }
            let observed_pts: Option<Vec<Point>> =
                holdout.filter(|h| h.t_range().contains(d.day)).map(|h| {
                    h.events()
                        .iter()
                        .filter(|e| e.t == d.day)
                        .map(Event::location)
                        .collect()
                });
            let n_observed = observed_pts.as_ref().map_or(0, Vec::len);
            let observed = observed_pts
                .map(|pts| k_at(&pts, &d.mean_intensity, window, r_grid))
                .transpose()?;
            Ok(EnvelopeDay {
                delta: d.delta,
                day: d.day,
                envelope: env,
                observed,
                n_observed,
            })
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Persistence.

const FIELDS_MAGIC: &[u8; 8] = b"STLGCPF1";

/// Writes equally shaped arrays as little-endian `f64` after a small header.
pub fn write_fields(path: &Path, fields: &[Array2<f64>]) -> Result<()> {
    let (m, p) = fields.first().map_or((0, 0), |f| f.dim());
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(FIELDS_MAGIC)?;
    for n in [fields.len(), m, p] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    for f in fields {
        for v in f.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_fields(path: &Path) -> Result<Vec<Array2<f64>>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != FIELDS_MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: format!("`{}` is not a field file", path.display()),
        });
    }
    let mut word = [0u8; 8];
    let mut next = |r: &mut BufReader<File>| -> Result<u64> {
        r.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let (n, m, p) = (
        next(&mut r)? as usize,
        next(&mut r)? as usize,
        next(&mut r)? as usize,
    );
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut a = Array2::zeros((m, p));
        for v in a.iter_mut() {
            *v = f64::from_le_bytes({
                let mut b = [0u8; 8];
                r.read_exact(&mut b)?;
                b
            });
        }
        out.push(a);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct StoredState<S> {
    inputs_hash: String,
    outputs: Vec<String>,
    state: S,
}

/// Ingest metadata kept in `state.json`; the patterns live in CSV files.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct IngestMeta {
    window: ObservationWindow,
    fit_range: TimeRange,
    holdout_range: Option<TimeRange>,
    dropped: usize,
}

/// Chain summary kept in `state.json`; the retained fields live in a binary
/// file next to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MalaSummary {
    pub acceptance_rate: f64,
    pub burn_in_acceptance: f64,
    pub xi2: f64,
    pub n_retained: usize,
    pub non_finite: usize,
    /// Posterior mean field per modelled day.
    pub mean_fields: Vec<Array2<f64>>,
}

/// A stage result with the hash of its inputs.
pub struct Cached<T> {
    pub value: Arc<T>,
    pub hash: String,
}

impl<T> Clone for Cached<T> {
    fn clone(&self) -> Self {
        Self {
            value: Arc::clone(&self.value),
            hash: self.hash.clone(),
        }
    }
}

/// Runs stages on demand, reusing results within the run and from earlier
/// runs.
pub struct Pipeline {
    cfg: PipelineConfig,
    out: PathBuf,
    resume: bool,
    manifest: Vec<ManifestEntry>,
    ingest: Option<Cached<Ingested>>,
    bandwidth: Option<Cached<f64>>,
    intensity: Option<Cached<SpatialDensity>>,
    glm: Option<Cached<TemporalGlmFit>>,
    summaries: Option<Cached<Summaries>>,
    fitcov: Option<Cached<CovFitReport>>,
    mala: Option<Cached<(MalaSummary, Vec<Array2<f64>>)>>,
    forecast: Option<Cached<Vec<ForecastDay>>>,
    simulate: Option<Cached<Vec<EnvelopeDay>>>,
}

impl Pipeline {
    /// Validates the configuration and its input paths and starts a fresh
    /// manifest. With `resume`, stages whose inputs are unchanged are loaded
    /// from the output directory.
    pub fn new(cfg: PipelineConfig, resume: bool) -> Result<Self> {
        cfg.validate()?;
        cfg.validate_paths()?;
        let out = cfg.paths.out_dir.clone();
        fs::create_dir_all(&out)?;
        File::create(out.join("manifest.jsonl"))?;
        Ok(Self {
            cfg,
            out,
            resume,
            manifest: Vec::new(),
            ingest: None,
            bandwidth: None,
            intensity: None,
            glm: None,
            summaries: None,
            fitcov: None,
            mala: None,
            forecast: None,
            simulate: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn manifest(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn grid(&mut self) -> Result<GridSpec> {
        let ing = self.ingest()?;
        GridSpec::from_window(ing.value.window(), self.cfg.grid.m, self.cfg.grid.p)
    }

    /// Runs every stage up to and including `last`.
    pub fn run_through(&mut self, last: Stage) -> Result<()> {
        for s in Stage::ALL.into_iter().filter(|&s| s <= last) {
            self.run_stage(s)?;
        }
        Ok(())
    }

    pub fn run_all(&mut self) -> Result<()> {
        self.run_through(Stage::Simulate)
    }

    fn run_stage(&mut self, s: Stage) -> Result<()> {
        match s {
            Stage::Ingest => self.ingest().map(drop),
            Stage::Bandwidth => self.bandwidth().map(drop),
            Stage::Intensity => self.intensity().map(drop),
            Stage::GlmFit => self.glm().map(drop),
            Stage::Summaries => self.summaries().map(drop),
            Stage::FitCov => self.fitcov().map(drop),
            Stage::Mala => self.mala().map(drop),
            Stage::Forecast => self.forecast().map(drop),
            Stage::Simulate => self.simulate().map(drop),
        }
    }

    fn stage_dir(&self, s: Stage) -> Result<PathBuf> {
        let d = self.out.join(s.name());
        fs::create_dir_all(&d)?;
        Ok(d)
    }

    fn record(
        &mut self,
        s: Stage,
        hash: &str,
        outputs: Vec<String>,
        start: Instant,
        seed: Option<u64>,
        resumed: bool,
    ) -> Result<()> {
        let entry = ManifestEntry {
            stage: s.name().to_string(),
            inputs_hash: hash.to_string(),
            outputs,
            wall_time_s: start.elapsed().as_secs_f64(),
            seed,
            resumed,
        };
        let mut f = fs::OpenOptions::new()
            .append(true)
            .create(true)
            .open(self.out.join("manifest.jsonl"))?;
        writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        log::info!(
            "stage {} {} in {:.2}s",
            s.name(),
            if resumed { "reused" } else { "done" },
            entry.wall_time_s
        );
        self.manifest.push(entry);
        Ok(())
    }

    /// Loads a stored state whose hash matches and whose outputs exist.
    fn load<S: DeserializeOwned>(&self, s: Stage, hash: &str) -> Option<(S, Vec<String>)> {
        if !self.resume {
            return None;
        }
        let path = self.out.join(s.name()).join("state.json");
        let text = fs::read_to_string(path).ok()?;
        let stored: StoredState<S> = serde_json::from_str(&text).ok()?;
        if stored.inputs_hash != hash || !stored.outputs.iter().all(|o| self.out.join(o).exists()) {
            return None;
        }
        Some((stored.state, stored.outputs))
    }

    fn store<S: Serialize>(
        &self,
        s: Stage,
        hash: &str,
        outputs: &[String],
        state: &S,
    ) -> Result<()> {
        let path = self.out.join(s.name()).join("state.json");
        let stored = StoredState {
            inputs_hash: hash.to_string(),
            outputs: outputs.to_vec(),
            state,
        };
        fs::write(path, serde_json::to_vec(&stored)?)?;
        Ok(())
    }

    /// Shared wrapper: reuse, or compute, store and record.
    fn stage<S, T>(
        &mut self,
        s: Stage,
        hash: String,
        seed: Option<u64>,
        restore: impl FnOnce(&Self, S) -> Result<T>,
        compute: impl FnOnce(&Self, &Path) -> Result<(T, S, Vec<String>)>,
    ) -> Result<Cached<T>>
    where
        S: Serialize + DeserializeOwned,
    {
        let start = Instant::now();
        let wrap = |e: Error| Error::Stage {
            stage: s.name().to_string(),
            source: Box::new(e),
        };
        if let Some((state, outputs)) = self.load::<S>(s, &hash) {
            let value = restore(self, state).map_err(wrap)?;
            self.record(s, &hash, outputs, start, seed, true)?;
            return Ok(Cached {
                value: Arc::new(value),
                hash,
            });
        }
        let dir = self.stage_dir(s)?;
        let (value, state, outputs) = compute(self, &dir).map_err(wrap)?;
        self.store(s, &hash, &outputs, &state)?;
        self.record(s, &hash, outputs, start, seed, false)?;
        Ok(Cached {
            value: Arc::new(value),
            hash,
        })
    }

    fn rel(&self, s: Stage, file: &str) -> String {
        format!("{}/{}", s.name(), file)
    }

    fn create(&self, s: Stage, file: &str) -> Result<(BufWriter<File>, String)> {
        let f = File::create(self.out.join(s.name()).join(file))?;
        Ok((BufWriter::new(f), self.rel(s, file)))
    }

    pub fn ingest(&mut self) -> Result<Cached<Ingested>> {
        if let Some(c) = &self.ingest {
            return Ok(c.clone());
        }
        let pattern_path = self.cfg.paths.pattern.clone().expect("validated");
        let window_path = self.cfg.paths.window.clone().expect("validated");
        let hash = hash_parts(&[
            b"ingest",
            &fs::read(&pattern_path)?,
            &fs::read(&window_path)?,
            &json_bytes(&self.cfg.data),
        ]);
        let s = Stage::Ingest;
        let c = self.stage(
            s,
            hash,
            None,
            |me, meta: IngestMeta| {
                let read = |file: &str, range: TimeRange| -> Result<SpatioTemporalPointPattern> {
                    let f = File::open(me.out.join(s.name()).join(file))?;
                    let rep = crate::data::load_point_pattern(f, &meta.window, range);
                    match rep {
                        Ok(r) => Ok(r.pattern),
                        Err(Error::EmptyPattern { .. }) => {
                            SpatioTemporalPointPattern::new(vec![], meta.window.clone(), range)
                        }
                        Err(e) => Err(e),
                    }
                };
                Ok(Ingested {
                    fit: read("fit.csv", meta.fit_range)?,
                    holdout: meta
                        .holdout_range
                        .map(|r| read("holdout.csv", r))
                        .transpose()?,
                    dropped: meta.dropped,
                })
            },
            |me, _| {
                let ing = ingest_files(&pattern_path, &window_path, &me.cfg)?;
                let mut outputs = Vec::new();
                let (w, name) = me.create(s, "fit.csv")?;
                save_point_pattern(&ing.fit, w)?;
                outputs.push(name);
                if let Some(h) = &ing.holdout {
                    let (w, name) = me.create(s, "holdout.csv")?;
                    save_point_pattern(h, w)?;
                    outputs.push(name);
                }
                let meta = IngestMeta {
                    window: ing.window().clone(),
                    fit_range: ing.fit.t_range(),
                    holdout_range: ing.holdout.as_ref().map(|h| h.t_range()),
                    dropped: ing.dropped,
                };
                Ok((ing, meta, outputs))
            },
        )?;
        self.ingest = Some(c.clone());
        Ok(c)
    }

    pub fn bandwidth(&mut self) -> Result<Cached<f64>> {
        if let Some(c) = &self.bandwidth {
            return Ok(c.clone());
        }
        let ing = self.ingest()?;
        let seed = consumer_seed(&self.cfg, "bandwidth");
        let hash = hash_parts(&[
            b"bandwidth",
            ing.hash.as_bytes(),
            &json_bytes(&self.cfg.bandwidth),
            &seed.to_le_bytes(),
        ]);
        let s = Stage::Bandwidth;
        let c = self.stage(
            s,
            hash,
            Some(seed),
            |_, h: f64| Ok(h),
            |me, _| {
                let h = choose_bandwidth(&ing.value.fit, &me.cfg.bandwidth, seed)?;
                let (mut w, name) = me.create(s, "bandwidth.csv")?;
                writeln!(w, "bandwidth\n{h}")?;
                w.flush()?;
                Ok((h, h, vec![name]))
            },
        )?;
        self.bandwidth = Some(c.clone());
        Ok(c)
    }

    pub fn intensity(&mut self) -> Result<Cached<SpatialDensity>> {
        if let Some(c) = &self.intensity {
            return Ok(c.clone());
        }
        let ing = self.ingest()?;
        let bw = self.bandwidth()?;
        let grid = self.grid()?;
        let hash = hash_parts(&[
            b"intensity",
            ing.hash.as_bytes(),
            bw.hash.as_bytes(),
            &json_bytes(&self.cfg.grid),
        ]);
        let s = Stage::Intensity;
        let c = self.stage(
            s,
            hash,
            None,
            |_, d: SpatialDensity| Ok(d),
            |me, _| {
                let d = estimate_density(&ing.value.fit, &grid, *bw.value)?;
                let (w, name) = me.create(s, "lambda0.asc")?;
                d.raster.write_ascii_grid(w)?;
                Ok((d.clone(), d, vec![name]))
            },
        )?;
        self.intensity = Some(c.clone());
        Ok(c)
    }

    pub fn glm(&mut self) -> Result<Cached<TemporalGlmFit>> {
        if let Some(c) = &self.glm {
            return Ok(c.clone());
        }
        let ing = self.ingest()?;
        let hash = hash_parts(&[b"glm-fit", ing.hash.as_bytes(), &json_bytes(&self.cfg.glm)]);
        let s = Stage::GlmFit;
        let c = self.stage(
            s,
            hash,
            None,
            |_, f: TemporalGlmFit| Ok(f),
            |me, _| {
                let fit = fit_temporal(&ing.value.fit, &me.cfg.glm)?;
                let (w, a) = me.create(s, "coefficients.csv")?;
                fit.write_coefficients(w)?;
                let (w, b) = me.create(s, "summary.txt")?;
                fit.write_summary(w)?;
                let (w, c) = me.create(s, "lambda1.csv")?;
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(["t", "lambda1"])?;
                for (t, v) in fit.days.iter().zip(&fit.fitted) {
                    wtr.serialize((t, v))?;
                }
                wtr.flush()?;
                Ok((fit.clone(), fit, vec![a, b, c]))
            },
        )?;
        self.glm = Some(c.clone());
        Ok(c)
    }

    pub fn summaries(&mut self) -> Result<Cached<Summaries>> {
        if let Some(c) = &self.summaries {
            return Ok(c.clone());
        }
        let ing = self.ingest()?;
        let dens = self.intensity()?;
        let glm = self.glm()?;
        let seed = consumer_seed(&self.cfg, "mctest");
        let hash = hash_parts(&[
            b"summaries",
            ing.hash.as_bytes(),
            dens.hash.as_bytes(),
            glm.hash.as_bytes(),
            &json_bytes(&self.cfg.summaries),
            &seed.to_le_bytes(),
        ]);
        let s = Stage::Summaries;
        let c = self.stage(
            s,
            hash,
            Some(seed),
            |_, v: Summaries| Ok(v),
            |me, _| {
                let sm = compute_summaries(
                    &ing.value.fit,
                    &dens.value,
                    &glm.value,
                    &me.cfg.summaries,
                    seed,
                )?;
                let mut outputs = Vec::new();
                let (w, n) = me.create(s, "kst.csv")?;
                sm.kst.write_csv(w)?;
                outputs.push(n);
                let (w, n) = me.create(s, "pcf.csv")?;
                sm.pcf.write_csv(w)?;
                outputs.push(n);
                let (w, n) = me.create(s, "autocov.csv")?;
                sm.autocov.write_csv(w)?;
                outputs.push(n);
                if let Some(t) = &sm.mctest {
                    let (w, n) = me.create(s, "mctest.csv")?;
                    write_mctest(t, w)?;
                    outputs.push(n);
                }
                Ok((sm.clone(), sm, outputs))
            },
        )?;
        self.summaries = Some(c.clone());
        Ok(c)
    }

    pub fn fitcov(&mut self) -> Result<Cached<CovFitReport>> {
        if let Some(c) = &self.fitcov {
            return Ok(c.clone());
        }
        let dens = self.intensity()?;
        let glm = self.glm()?;
        let sm = self.summaries()?;
        let hash = hash_parts(&[
            b"fit-cov",
            dens.hash.as_bytes(),
            glm.hash.as_bytes(),
            sm.hash.as_bytes(),
            &json_bytes(&self.cfg.covfit),
        ]);
        let s = Stage::FitCov;
        let c = self.stage(
            s,
            hash,
            None,
            |_, r: CovFitReport| Ok(r),
            |me, _| {
                let rep = fit_covariance(
                    &dens.value,
                    &glm.value,
                    &sm.value.pcf,
                    &sm.value.autocov,
                    &me.cfg.covfit,
                )?;
                let (w, n) = me.create(s, "covfit.csv")?;
                rep.write_csv(w)?;
                Ok((rep, rep, vec![n]))
            },
        )?;
        self.fitcov = Some(c.clone());
        Ok(c)
    }

    fn spectrum(&mut self) -> Result<CirculantSpectrum> {
        let params = self.fitcov()?.value.params;
        let grid = self.grid()?;
        circulant_eigenvalues(&extend_grid(&grid), &params)
    }

    pub fn mala(&mut self) -> Result<Cached<(MalaSummary, Vec<Array2<f64>>)>> {
        if let Some(c) = &self.mala {
            return Ok(c.clone());
        }
        let ing = self.ingest()?;
        let dens = self.intensity()?;
        let glm = self.glm()?;
        let fc = self.fitcov()?;
        let spectrum = self.spectrum()?;
        let seed = consumer_seed(&self.cfg, "mala");
        let hash = hash_parts(&[
            b"mala",
            ing.hash.as_bytes(),
            dens.hash.as_bytes(),
            glm.hash.as_bytes(),
            fc.hash.as_bytes(),
            &json_bytes(&self.cfg.mala),
            &seed.to_le_bytes(),
        ]);
        let s = Stage::Mala;
        let c = self.stage(
            s,
            hash,
            Some(seed),
            |me, summary: MalaSummary| {
                let fields = read_fields(&me.out.join(s.name()).join("last_day_fields.bin"))?;
                Ok((summary, fields))
            },
            |me, dir| {
                let run = run_conditional(
                    &ing.value.fit,
                    &spectrum,
                    &dens.value,
                    &glm.value.fitted,
                    &me.cfg.mala,
                    seed,
                )?;
                let (w, trace) = me.create(s, "trace.csv")?;
                run.write_trace(w)?;
                write_fields(&dir.join("last_day_fields.bin"), &run.last_day_fields)?;
                let last = run.mean_fields.last().expect("at least one modelled day");
                let (w, mean) = me.create(s, "posterior_mean.asc")?;
                Raster::new(
                    dens.value.raster.grid().clone(),
                    last.clone(),
                    crate::data::RasterUnits::Dimensionless,
                )?
                .write_ascii_grid(w)?;
                let summary = MalaSummary {
                    acceptance_rate: run.acceptance_rate,
                    burn_in_acceptance: run.burn_in_acceptance,
                    xi2: run.xi2,
                    n_retained: run.n_retained(),
                    non_finite: run.non_finite,
                    mean_fields: run.mean_fields.clone(),
                };
                let outputs = vec![trace, me.rel(s, "last_day_fields.bin"), mean];
                Ok(((summary.clone(), run.last_day_fields), summary, outputs))
            },
        )?;
        self.mala = Some(c.clone());
        Ok(c)
    }

    pub fn forecast(&mut self) -> Result<Cached<Vec<ForecastDay>>> {
        if let Some(c) = &self.forecast {
            return Ok(c.clone());
        }
        let ing = self.ingest()?;
        let dens = self.intensity()?;
        let glm = self.glm()?;
        let mala = self.mala()?;
        let spectrum = self.spectrum()?;
        let seed = consumer_seed(&self.cfg, "forecast");
        let hash = hash_parts(&[
            b"forecast",
            mala.hash.as_bytes(),
            &json_bytes(&self.cfg.forecast),
            &seed.to_le_bytes(),
        ]);
        let s = Stage::Forecast;
        let c = self.stage(
            s,
            hash,
            Some(seed),
            |_, days: Vec<ForecastDay>| Ok(days),
            |me, _| {
                let (summary, fields) = &*mala.value;
                let last_day = ing.value.fit.t_range().end;
                let posterior_mean = summary
                    .mean_fields
                    .last()
                    .expect("at least one modelled day");
                let days = forecast_days(
                    fields,
                    posterior_mean,
                    &spectrum,
                    &dens.value,
                    &glm.value,
                    last_day,
                    &me.cfg.forecast.deltas,
                    seed,
                )?;
                let mut outputs = Vec::new();
                for d in &days {
                    let (w, n) = me.create(s, &format!("intensity_delta{}.asc", d.delta))?;
                    d.mean_intensity.write_ascii_grid(w)?;
                    outputs.push(n);
                }
                let (w, n) = me.create(s, "forecast.csv")?;
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(["delta", "day", "lambda1", "mean_integral"])?;
                for d in &days {
                    wtr.serialize((d.delta, d.day, d.lambda1, d.mean_integral))?;
                }
                wtr.flush()?;
                outputs.push(n);
                Ok((days.clone(), days, outputs))
            },
        )?;
        self.forecast = Some(c.clone());
        Ok(c)
    }

    pub fn simulate(&mut self) -> Result<Cached<Vec<EnvelopeDay>>> {
        if let Some(c) = &self.simulate {
            return Ok(c.clone());
        }
        let ing = self.ingest()?;
        let dens = self.intensity()?;
        let mala = self.mala()?;
        let fc = self.forecast()?;
        let spectrum = self.spectrum()?;
        let seed = consumer_seed(&self.cfg, "simulate");
        let hash = hash_parts(&[
            b"simulate",
            ing.hash.as_bytes(),
            fc.hash.as_bytes(),
            &json_bytes(&self.cfg.simulate),
            &json_bytes(&self.cfg.summaries.r_grid),
            &seed.to_le_bytes(),
        ]);
        let s = Stage::Simulate;
        let c = self.stage(
            s,
            hash,
            Some(seed),
            |_, days: Vec<EnvelopeDay>| Ok(days),
            |me, dir| {
                let window = ing.value.window();
                let realizations = simulate_forecasts(
                    &mala.value.1,
                    &spectrum,
                    &dens.value,
                    &fc.value,
                    window,
                    me.cfg.simulate.n_realizations,
                    seed,
                )?;
                let mut outputs = Vec::new();
                fs::create_dir_all(dir.join("realizations"))?;
                let first = fc.value.first().map_or(0, |d| d.day);
                let last = fc.value.iter().map(|d| d.day).max().unwrap_or(first);
                let range = TimeRange::new(first.min(last), last)?;
                for (r, events) in realizations.iter().enumerate() {
                    let file = format!("realizations/{r:04}.csv");
                    let (w, n) = me.create(s, &file)?;
                    save_point_pattern(
                        &SpatioTemporalPointPattern::new(events.clone(), window.clone(), range)?,
                        w,
                    )?;
                    outputs.push(n);
                }
                let r_grid = r_grid_for(&me.cfg.summaries, window);
                let days = forecast_envelopes(
                    &realizations,
                    &fc.value,
                    ing.value.holdout.as_ref(),
                    window,
                    &r_grid,
                )?;
                for d in &days {
                    let (w, n) = me.create(s, &format!("envelope_delta{}.csv", d.delta))?;
                    d.envelope.write_csv(w, &r_grid, d.observed.as_deref())?;
                    outputs.push(n);
                }
                let (w, n) = me.create(s, "envelope_summary.csv")?;
                let mut wtr = csv::Writer::from_writer(w);
                wtr.write_record(["delta", "day", "n_observed", "long_range_inside"])?;
                for d in &days {
                    let inside = d
                        .long_range_inside()
                        .map_or(String::new(), |v| v.to_string());
                    wtr.write_record([
                        d.delta.to_string(),
                        d.day.to_string(),
                        d.n_observed.to_string(),
                        inside,
                    ])?;
                }
                wtr.flush()?;
                outputs.push(n);
                Ok((days.clone(), days, outputs))
            },
        )?;
        self.simulate = Some(c.clone());
        Ok(c)
    }
}

/// CSV `observed,n_perm,fraction_below`.
pub fn write_mctest<W: Write>(t: &McTestResult, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["observed", "n_perm", "fraction_below"])?;
    wtr.serialize((t.observed, t.permuted.len(), t.fraction_below))?;
    wtr.flush()?;
    Ok(())
}
