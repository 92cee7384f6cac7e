use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stlgcp::config::PipelineConfig;
use stlgcp::covfit::CovarianceParams;
use stlgcp::data::{
    save_point_pattern, GridSpec, ObservationWindow, Point, Raster, RasterUnits, TimeRange,
};
use stlgcp::grf::{circulant_eigenvalues, extend_grid, sample_grf};
use stlgcp::intensity::SpatialDensity;
use stlgcp::pipeline::{
    compute_autocov, compute_kst, compute_mctest, compute_pcf, consumer_seed, forecast_envelopes,
    r_grid_for, simulate_forecasts, write_mctest, Pipeline, Stage,
};
use stlgcp::rng::stream_rng;
use stlgcp::sim::{simulate_lgcp_dataset, simulate_poisson_from_raster, write_points};
use stlgcp::summary::bivariate_k;
use stlgcp::{Error, Result};

/// Fit, forecast and simulate separable spatio-temporal log-Gaussian Cox
/// processes.
#[derive(Parser)]
#[command(name = "stlgcp", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `paths.out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Root seed (overrides `seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (overrides `threads`).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Inputs {
    /// Event file `x,y,t` (overrides `paths.pattern`).
    #[arg(long)]
    pattern: Option<PathBuf>,
    /// Window vertex file `x,y` (overrides `paths.window`).
    #[arg(long)]
    window: Option<PathBuf>,
    /// Recompute every stage instead of reusing stored results.
    #[arg(long)]
    no_resume: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Read and filter the events, split off held-out days.
    Ingest(Inputs),
    /// K-means spatial bandwidth.
    Bandwidth(Inputs),
    /// Kernel estimate of the spatial density.
    Intensity(Inputs),
    /// Poisson regression for the temporal intensity.
    GlmFit(Inputs),
    /// Inhomogeneous spatio-temporal K-function.
    Kst(Inputs),
    /// Time-averaged pair correlation function.
    Pcf(Inputs),
    /// Autocovariance of the daily totals.
    Autocov(Inputs),
    /// Bivariate K-function of two planar patterns.
    Xk {
        /// First pattern, CSV with columns `x,y` (further columns ignored).
        #[arg(long)]
        first: PathBuf,
        /// Second pattern.
        #[arg(long)]
        second: PathBuf,
        /// Window vertex file (overrides `paths.window`).
        #[arg(long)]
        window: Option<PathBuf>,
    },
    /// Monte-Carlo test for space-time clustering.
    Mctest {
        #[command(flatten)]
        inputs: Inputs,
        /// Permutations (overrides `summaries.n_perm`).
        #[arg(long)]
        n_perm: Option<usize>,
    },
    /// K-function envelopes of simulated forecast patterns.
    Envelope {
        #[command(flatten)]
        inputs: Inputs,
        /// Simulations (overrides `summaries.n_sim`).
        #[arg(long)]
        n_sim: Option<usize>,
    },
    /// Minimum-contrast covariance parameters.
    FitCov(Inputs),
    /// Unconditional Gaussian field draws as ASCII grids.
    GrfSample {
        #[arg(long)]
        sigma2: f64,
        #[arg(long)]
        phi: f64,
        /// Number of draws.
        #[arg(long, default_value_t = 1)]
        n: usize,
        /// Window vertex file (overrides `paths.window`).
        #[arg(long)]
        window: Option<PathBuf>,
    },
    /// Conditional simulation of the latent field.
    Mala(Inputs),
    /// Forecast intensities for the configured horizons.
    Forecast(Inputs),
    /// Simulate point patterns. With `--raster`, Poisson patterns from an
    /// intensity grid; with `--lgcp`, a synthetic dataset; otherwise the
    /// forecast simulation stage of the pipeline.
    Simulate {
        #[command(flatten)]
        inputs: Inputs,
        /// ASCII-grid intensity to simulate from.
        #[arg(long, conflicts_with = "lgcp")]
        raster: Option<PathBuf>,
        /// Generate a synthetic spatio-temporal dataset.
        #[arg(long)]
        lgcp: bool,
        /// Realisations (overrides `simulate.n_realizations`).
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1.5)]
        sigma2: f64,
        /// Correlation range; defaults to a fifth of the window width.
        #[arg(long)]
        phi: Option<f64>,
        #[arg(long, default_value_t = 2.0)]
        theta: f64,
        /// Days of the synthetic dataset.
        #[arg(long, default_value_t = 30)]
        days: i64,
        /// Expected events per day.
        #[arg(long, default_value_t = 200.0)]
        daily: f64,
    },
    /// Run all stages.
    Pipeline(Inputs),
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(o) = &cli.out {
        cfg.paths.out_dir = o.clone();
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if cli.threads.is_some() {
        cfg.threads = cli.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn with_inputs(mut cfg: PipelineConfig, inputs: &Inputs) -> PipelineConfig {
    if let Some(p) = &inputs.pattern {
        cfg.paths.pattern = Some(p.clone());
    }
    if let Some(w) = &inputs.window {
        cfg.paths.window = Some(w.clone());
    }
    cfg
}

fn pipeline(cfg: PipelineConfig, inputs: &Inputs) -> Result<Pipeline> {
    Pipeline::new(with_inputs(cfg, inputs), !inputs.no_resume)
}

fn run_stage(cfg: PipelineConfig, inputs: &Inputs, stage: Stage) -> Result<()> {
    let mut p = pipeline(cfg, inputs)?;
    p.run_through(stage)?;
    println!("{}", p.out_dir().join("manifest.jsonl").display());
    Ok(())
}

fn create(dir: &Path, file: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir)?;
    let path = dir.join(file);
    println!("{}", path.display());
    Ok(BufWriter::new(File::create(path)?))
}

fn read_window(cfg: &PipelineConfig, path: Option<&PathBuf>) -> Result<ObservationWindow> {
    let path = path
        .or(cfg.paths.window.as_ref())
        .ok_or_else(|| Error::Config {
            field: "paths.window".into(),
            msg: "is required".into(),
        })?;
    let w = ObservationWindow::from_csv(File::open(path)?)?;
    if cfg.data.coordinate_scale != 1.0 {
        w.scaled(cfg.data.coordinate_scale)
    } else {
        Ok(w)
    }
}

/// Reads the first two columns of a CSV with a header as points.
fn read_points(path: &Path, scale: f64) -> Result<Vec<Point>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(File::open(path)?);
    let mut out = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = idx + 2;
        let coord = |k: usize| -> Result<f64> {
            rec.get(k)
                .and_then(|s| s.parse::<f64>().ok())
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Parse {
                    line,
                    msg: "expected numeric `x,y`".into(),
                })
        };
        out.push(Point::new(coord(0)? * scale, coord(1)? * scale));
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli)?;
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Numerical(format!("thread pool: {e}")))?;
    }
    let out = cfg.paths.out_dir.clone();
    match &cli.command {
        Command::Ingest(i) => run_stage(cfg, i, Stage::Ingest),
        Command::Bandwidth(i) => run_stage(cfg, i, Stage::Bandwidth),
        Command::Intensity(i) => run_stage(cfg, i, Stage::Intensity),
        Command::GlmFit(i) => run_stage(cfg, i, Stage::GlmFit),
        Command::FitCov(i) => run_stage(cfg, i, Stage::FitCov),
        Command::Mala(i) => run_stage(cfg, i, Stage::Mala),
        Command::Forecast(i) => run_stage(cfg, i, Stage::Forecast),
        Command::Pipeline(i) => run_stage(cfg, i, Stage::Simulate),
        Command::Kst(i) => {
            let mut p = pipeline(cfg, i)?;
            let ing = p.ingest()?;
            let dens = p.intensity()?;
            let k = compute_kst(&ing.value.fit, &dens.value, &p.config().summaries)?;
            k.write_csv(create(&out, "kst.csv")?)
        }
        Command::Pcf(i) => {
            let mut p = pipeline(cfg, i)?;
            let ing = p.ingest()?;
            let dens = p.intensity()?;
            let glm = p.glm()?;
            let g = compute_pcf(
                &ing.value.fit,
                &dens.value,
                &glm.value.fitted,
                &p.config().summaries,
            )?;
            g.write_csv(create(&out, "pcf.csv")?)
        }
        Command::Autocov(i) => {
            let mut p = pipeline(cfg, i)?;
            let ing = p.ingest()?;
            let glm = p.glm()?;
            let c = compute_autocov(&ing.value.fit, &glm.value.fitted, &p.config().summaries)?;
            c.write_csv(create(&out, "autocov.csv")?)
        }
        Command::Mctest { inputs, n_perm } => {
            let mut cfg = cfg;
            if let Some(n) = n_perm {
                cfg.summaries.n_perm = *n;
            }
            let seed = consumer_seed(&cfg, "mctest");
            let mut p = pipeline(cfg, inputs)?;
            let ing = p.ingest()?;
            let dens = p.intensity()?;
            let t = compute_mctest(&ing.value.fit, &dens.value, &p.config().summaries, seed)?;
            println!("fraction_below {}", t.fraction_below);
            write_mctest(&t, create(&out, "mctest.csv")?)
        }
        Command::Envelope { inputs, n_sim } => {
            let mut cfg = cfg;
            if let Some(n) = n_sim {
                cfg.summaries.n_sim = *n;
            }
            let n = cfg.summaries.n_sim;
            let seed = consumer_seed(&cfg, "envelope");
            let mut p = pipeline(cfg, inputs)?;
            p.run_through(Stage::Forecast)?;
            let ing = p.ingest()?;
            let dens = p.intensity()?;
            let mala = p.mala()?;
            let fc = p.forecast()?;
            let params = p.fitcov()?.value.params;
            let spectrum = circulant_eigenvalues(&extend_grid(dens.value.raster.grid()), &params)?;
            let window = ing.value.window();
            let sims = simulate_forecasts(
                &mala.value.1,
                &spectrum,
                &dens.value,
                &fc.value,
                window,
                n,
                seed,
            )?;
            let r_grid = r_grid_for(&p.config().summaries, window);
            let days = forecast_envelopes(
                &sims,
                &fc.value,
                ing.value.holdout.as_ref(),
                window,
                &r_grid,
            )?;
            let dir = out.join("envelope");
            for d in &days {
                d.envelope.write_csv(
                    create(&dir, &format!("delta{}.csv", d.delta))?,
                    &r_grid,
                    d.observed.as_deref(),
                )?;
            }
            Ok(())
        }
        Command::Xk {
            first,
            second,
            window,
        } => {
            let w = read_window(&cfg, window.as_ref())?;
            let scale = cfg.data.coordinate_scale;
            let a: Vec<Point> = read_points(first, scale)?
                .into_iter()
                .filter(|p| w.contains(*p))
                .collect();
            let b: Vec<Point> = read_points(second, scale)?
                .into_iter()
                .filter(|p| w.contains(*p))
                .collect();
            let k = bivariate_k(&a, &b, &w, &r_grid_for(&cfg.summaries, &w))?;
            k.write_csv(create(&out, "xk.csv")?)
        }
        Command::GrfSample {
            sigma2,
            phi,
            n,
            window,
        } => {
            let w = read_window(&cfg, window.as_ref())?;
            let grid = GridSpec::from_window(&w, cfg.grid.m, cfg.grid.p)?;
            let params = CovarianceParams::new(*sigma2, *phi, 1.0)?;
            let spectrum = circulant_eigenvalues(&extend_grid(&grid), &params)?;
            let seed = consumer_seed(&cfg, "grf-sample");
            let dir = out.join("grf");
            for k in 0..*n {
                let mut rng = stream_rng(seed, k as u64);
                let s = sample_grf(&spectrum, params.mean(), &mut rng)?;
                s.base
                    .write_ascii_grid(create(&dir, &format!("{k:04}.asc"))?)?;
            }
            Ok(())
        }
        Command::Simulate {
            inputs,
            raster,
            lgcp,
            n,
            sigma2,
            phi,
            theta,
            days,
            daily,
        } => {
            let mut cfg = with_inputs(cfg, inputs);
            if let Some(n) = n {
                cfg.simulate.n_realizations = *n;
            }
            let seed = consumer_seed(&cfg, "simulate");
            let count = cfg.simulate.n_realizations;
            if let Some(path) = raster {
                let r = Raster::read_ascii_grid(
                    std::io::BufReader::new(File::open(path)?),
                    RasterUnits::IntensityPerArea,
                )?;
                let dir = out.join("simulate");
                for k in 0..count {
                    let mut rng = stream_rng(seed, k as u64);
                    let pts = simulate_poisson_from_raster(&r, &mut rng)?;
                    write_points(&pts, create(&dir, &format!("{k:04}.csv"))?)?;
                }
                Ok(())
            } else if *lgcp {
                let w = read_window(&cfg, cfg.paths.window.as_ref())?;
                let grid = GridSpec::from_window(&w, cfg.grid.m, cfg.grid.p)?;
                let phi = phi.unwrap_or(0.2 * w.bounding_box().width());
                let params = CovarianceParams::new(*sigma2, phi, *theta)?;
                let density = SpatialDensity::uniform(&grid)?;
                let range = TimeRange::new(1, *days)?;
                let lambda1 = vec![*daily; range.len()];
                let dir = out.join("synthetic");
                w.write_csv(create(&dir, "window.csv")?)?;
                for k in 0..count {
                    let mut rng = stream_rng(seed, k as u64);
                    let draw = simulate_lgcp_dataset(
                        &params,
                        &density.raster,
                        &lambda1,
                        &w,
                        range,
                        &mut rng,
                    )?;
                    save_point_pattern(&draw.pattern, create(&dir, &format!("{k:04}.csv"))?)?;
                }
                Ok(())
            } else {
                let mut p = Pipeline::new(cfg, !inputs.no_resume)?;
                p.run_through(Stage::Simulate)?;
                println!("{}", p.out_dir().join("manifest.jsonl").display());
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
