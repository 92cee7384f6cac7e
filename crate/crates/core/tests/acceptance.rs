//! Acceptance suite. Every criterion runs in sequence inside one test so the
//! runtime budgets are measured without competing for cores; each prints one
//! `criterion N: PASS|FAIL` line to stderr.

use std::f64::consts::{PI, SQRT_2};
use std::fs::File;
use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use stlgcp::bandwidth::{select_bandwidth, KMeansOptions};
use stlgcp::config::{BandwidthConfig, PipelineConfig, SummariesConfig};
use stlgcp::covfit::CovarianceParams;
use stlgcp::data::{
    aggregate_counts, save_point_pattern, Event, GridSpec, ObservationWindow, Point,
    SpatioTemporalPointPattern, TimeRange,
};
use stlgcp::forecast::{
    forecast_field_draw, forecast_intensity, forecast_mean_from, forecast_weight,
};
use stlgcp::glm::{build_design, irls_fit, DesignOptions, IrlsOptions, Season};
use stlgcp::grf::{circulant_eigenvalues, extend_grid, sample_grf, torus_distance};
use stlgcp::intensity::{
    kernel_intensity_points, normalize_to_density, quartic_kernel, SpatialDensity,
};
use stlgcp::mala::{run_mala, MalaOptions, MalaProblem};
use stlgcp::pipeline::{
    choose_bandwidth, compute_mctest, estimate_density, forecast_days, forecast_envelopes,
    r_grid_for, run_conditional, simulate_forecasts, Pipeline,
};
use stlgcp::rng::stream_rng;
use stlgcp::sim::simulate_lgcp_dataset;
use stlgcp::summary::{st_inhom_k, stoyan_bandwidth, time_averaged_pcf};

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn run(n: usize, budget: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(f));
    let elapsed = start.elapsed();
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let in_budget = elapsed <= budget;
    let ok = pass && in_budget;
    let line = format!(
        "criterion {n}: {} {detail} [{:.1}s of {:.0}s{}]\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs_f64(),
        if in_budget { "" } else { ", over budget" }
    );
    // written straight to the stream so it shows even when output is captured
    let _ = std::io::stderr().write_all(line.as_bytes());
    ok
}

fn unit_square() -> ObservationWindow {
    ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Homogeneous Poisson pattern on the unit square with `rate` expected
/// events per day.
fn poisson_pattern(rate: f64, days: i64, rng: &mut impl Rng) -> SpatioTemporalPointPattern {
    let pois = Poisson::new(rate).unwrap();
    let mut events = Vec::new();
    for t in 1..=days {
        let n = pois.sample(rng) as usize;
        for _ in 0..n {
            events.push(Event {
                x: rng.random::<f64>(),
                y: rng.random::<f64>(),
                t,
            });
        }
    }
    SpatioTemporalPointPattern::new(events, unit_square(), TimeRange::new(1, days).unwrap())
        .unwrap()
}

fn criterion_1() -> Outcome {
    let exact =
        quartic_kernel(0.0) == 1.0 && quartic_kernel(1.0) == 0.25 && quartic_kernel(SQRT_2) == 0.0;
    let pts = [Point::new(0.0, 0.0), Point::new(2.0, 0.0)];
    let h = select_bandwidth(
        &pts,
        &KMeansOptions {
            k: 1,
            ..Default::default()
        },
    )
    .unwrap();
    let err = (h - 0.5f64.sqrt()).abs();
    Outcome::new(
        exact && err <= 1e-12,
        format!("kernel anchors exact={exact}, bandwidth error {err:.1e}"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = stream_rng(2, 0);
    let pts: Vec<Point> = (0..50)
        .map(|_| Point::new(rng.random(), rng.random()))
        .collect();
    let grid = GridSpec::from_window(&unit_square(), 32, 32).unwrap();
    let h = 0.15;
    let raster = kernel_intensity_points(&pts, &grid, h).unwrap();
    let mut max_err: f64 = 0.0;
    for i in 0..grid.m {
        for j in 0..grid.p {
            let c = grid.centroid(i, j);
            let mut acc = 0.0;
            for s in &pts {
                let u2 = ((c.x - s.x).powi(2) + (c.y - s.y).powi(2)) / (h * h);
                if u2 < 2.0 {
                    acc += (1.0 - 0.5 * u2).powi(2);
                }
            }
            max_err = max_err.max((raster.get(i, j).unwrap() - acc / h).abs());
        }
    }
    let density = normalize_to_density(&raster, h).unwrap();
    let mut mass = 0.0;
    for i in 0..grid.m {
        for j in 0..grid.p {
            mass += density.raster.get(i, j).unwrap() * grid.cell_area();
        }
    }
    let pass = max_err <= 1e-12 && (mass - 1.0).abs() <= 1e-9;
    Outcome::new(
        pass,
        format!("max abs error {max_err:.1e}, density mass {mass:.12}"),
    )
}

fn criterion_3() -> Outcome {
    let range = TimeRange::new(1, 1826).unwrap();
    let options = DesignOptions::default();
    let design = build_design(range, &options).unwrap();
    let p = design.n_cols();
    // weekday levels, Summer, Fall, four harmonics, trend
    let mut beta = vec![3.9, 3.85, 3.95, 4.0, 4.1, 4.2, 3.8];
    beta.extend([0.12, -0.08, 0.1, -0.05, 0.03, 0.02, 1e-4]);
    assert_eq!(beta.len(), p, "design has {:?}", design.labels);
    let eta = &design.x * DMatrix::from_column_slice(p, 1, &beta);
    let reps = 50;
    let mut covered = vec![0usize; p];
    let mut joint = 0usize;
    for rep in 0..reps {
        let mut rng = stream_rng(3, rep as u64);
        let y: Vec<u64> = eta
            .iter()
            .map(|e| Poisson::new(e.exp()).unwrap().sample(&mut rng) as u64)
            .collect();
        let fit = irls_fit(&design, &y, &IrlsOptions::default()).unwrap();
        let mut all = true;
        for k in 0..p {
            if (fit.coefficients[k] - beta[k]).abs() <= 3.0 * fit.std_errors[k] {
                covered[k] += 1;
            } else {
                all = false;
            }
        }
        joint += usize::from(all);
    }
    let worst = *covered.iter().min().unwrap() as f64 / reps as f64;

    // intercept-only and weekday-only closed forms
    let mut rng = stream_rng(3, 999);
    let y: Vec<u64> = (0..1826)
        .map(|_| Poisson::new(37.0).unwrap().sample(&mut rng) as u64)
        .collect();
    let n = y.len() as f64;
    let ybar = y.iter().sum::<u64>() as f64 / n;
    let d0 = build_design(range, &DesignOptions::intercept_only()).unwrap();
    let f0 = irls_fit(&d0, &y, &IrlsOptions::default()).unwrap();
    let closed = (f0.coefficients[0] - ybar.ln())
        .abs()
        .max((f0.std_errors[0] - 1.0 / (n * ybar).sqrt()).abs());
    let wd_opts = DesignOptions {
        harmonics: false,
        trend: false,
        reference_seasons: Season::ALL.to_vec(),
        ..DesignOptions::default()
    };
    let dw = build_design(range, &wd_opts).unwrap();
    let fw = irls_fit(&dw, &y, &IrlsOptions::default()).unwrap();
    let mut wd_err: f64 = 0.0;
    for k in 0..7 {
        let (mut s, mut c) = (0.0, 0.0);
        for (row, &v) in y.iter().enumerate() {
            if dw.x[(row, k)] == 1.0 {
                s += v as f64;
                c += 1.0;
            }
        }
        wd_err = wd_err.max((fw.coefficients[k] - (s / c).ln()).abs());
    }
    let pass = worst >= 0.95 && closed <= 1e-10 && wd_err <= 1e-10;
    Outcome::new(
        pass,
        format!(
            "worst per-coefficient coverage {worst:.2}, all-coefficient coverage {:.2}, \
             intercept-only error {closed:.1e}, weekday-mean error {wd_err:.1e}",
            joint as f64 / reps as f64
        ),
    )
}

fn criterion_4() -> Outcome {
    let days = 10;
    let rate = 30.0;
    let window = unit_square();
    let r_grid = [0.05, 0.1, 0.15, 0.2, 0.25];
    let t_grid = [0.5, 1.5, 2.5, 3.5, 4.5];
    // a quarter of the shorter side
    let u_grid: Vec<f64> = (0..=8).map(|k| 0.05 + 0.025 * k as f64).collect();
    let h = stoyan_bandwidth(rate / window.area(), 0.15).unwrap();
    let n_sim = 200;
    let mut k_sum = Array2::<f64>::zeros((r_grid.len(), t_grid.len()));
    let mut g_sum = vec![0.0; u_grid.len()];
    for s in 0..n_sim {
        let mut rng = stream_rng(4, s);
        let pattern = poisson_pattern(rate, days, &mut rng);
        let k = st_inhom_k(&pattern, |_| rate, &r_grid, &t_grid).unwrap();
        k_sum += &k.values;
        let g = time_averaged_pcf(
            &pattern.by_day(),
            &window,
            |_| 1.0,
            &vec![rate; days as usize],
            &u_grid,
            h,
        )
        .unwrap();
        for (a, b) in g_sum.iter_mut().zip(&g.values) {
            *a += b;
        }
    }
    let mut k_worst: f64 = 0.0;
    for (a, &r) in r_grid.iter().enumerate().skip(1).take(3) {
        for (b, &t) in t_grid.iter().enumerate().skip(1).take(3) {
            let expected = 2.0 * PI * r * r * t;
            k_worst = k_worst.max((k_sum[[a, b]] / n_sim as f64 / expected - 1.0).abs());
        }
    }
    let g_worst = g_sum
        .iter()
        .map(|g| (g / n_sim as f64 - 1.0).abs())
        .fold(0.0, f64::max);
    Outcome::new(
        k_worst <= 0.05 && g_worst <= 0.10,
        format!("max relative K error {k_worst:.3}, max pcf deviation {g_worst:.3}"),
    )
}

fn criterion_5() -> Outcome {
    let base = GridSpec::unmasked(0.0, 0.0, 0.25, 0.25, 4, 4).unwrap();
    let ext = extend_grid(&base);
    let params = CovarianceParams::new(1.3, 0.4, 1.0).unwrap();
    let spectrum = circulant_eigenvalues(&ext, &params).unwrap();
    let n = ext.n_cells();
    let cells: Vec<(usize, usize)> = (0..ext.big_m)
        .flat_map(|i| (0..ext.big_n).map(move |j| (i, j)))
        .collect();
    let dense = DMatrix::from_fn(n, n, |a, b| {
        params.sigma2 * (-torus_distance(cells[a], cells[b], &ext) / params.phi).exp()
    });
    let mut dense_eig: Vec<f64> = SymmetricEigen::new(dense)
        .eigenvalues
        .iter()
        .copied()
        .collect();
    let mut fft_eig: Vec<f64> = spectrum.eigenvalues.iter().copied().collect();
    dense_eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    fft_eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let eig_err = dense_eig
        .iter()
        .zip(&fft_eig)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // distance classes on the base lattice
    let classes = [0.0, 0.25, 0.25 * SQRT_2, 0.5, 0.75];
    let mut pairs: Vec<Vec<((usize, usize), (usize, usize))>> = vec![Vec::new(); classes.len()];
    for a in 0..16 {
        for b in 0..16 {
            let (ca, cb) = ((a / 4, a % 4), (b / 4, b % 4));
            let d = base.centroid(ca.0, ca.1).dist(&base.centroid(cb.0, cb.1));
            if let Some(k) = classes.iter().position(|&c| (c - d).abs() < 1e-9) {
                pairs[k].push((ca, cb));
            }
        }
    }
    let draws = 5000;
    let mut per_draw = vec![Vec::with_capacity(draws); classes.len()];
    let mut rng = stream_rng(5, 0);
    for _ in 0..draws {
        let z = sample_grf(&spectrum, 0.0, &mut rng).unwrap();
        let v = z.base.values();
        for (k, list) in pairs.iter().enumerate() {
            let s: f64 = list
                .iter()
                .map(|&(a, b)| v[[a.0, a.1]] * v[[b.0, b.1]])
                .sum();
            per_draw[k].push(s / list.len() as f64);
        }
    }
    let mut worst_z: f64 = 0.0;
    for (k, xs) in per_draw.iter().enumerate() {
        let m = xs.iter().sum::<f64>() / draws as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (draws - 1) as f64;
        let se = (var / draws as f64).sqrt();
        let truth = params.sigma2 * (-classes[k] / params.phi).exp();
        worst_z = worst_z.max((m - truth).abs() / se);
    }
    Outcome::new(
        eig_err <= 1e-8 && worst_z <= 3.0,
        format!(
            "max eigenvalue difference {eig_err:.1e}, worst covariance deviation {worst_z:.2} SE"
        ),
    )
}

fn criterion_6() -> Outcome {
    // finite-difference check on 8x8x3
    let grid = GridSpec::unmasked(0.0, 0.0, 1.0 / 8.0, 1.0 / 8.0, 8, 8).unwrap();
    let params = CovarianceParams::new(1.0, 0.2, 2.0).unwrap();
    let spectrum = circulant_eigenvalues(&extend_grid(&grid), &params).unwrap();
    let mut rng = stream_rng(6, 0);
    let counts: Vec<Array2<f64>> = (0..3)
        .map(|_| {
            Array2::from_shape_simple_fn((8, 8), || Poisson::new(3.0).unwrap().sample(&mut rng))
        })
        .collect();
    let base_mean = vec![Array2::from_elem((8, 8), 2.5); 3];
    let problem = MalaProblem::from_parts(
        &spectrum,
        counts,
        base_mean,
        Array2::from_elem((8, 8), true),
    );
    let state: Vec<Array2<f64>> = (0..3)
        .map(|_| spectrum.white_noise(&mut rng).mapv(|v| 0.3 * v))
        .collect();
    let (_, grad) = problem.log_target_and_grad(&state).unwrap();
    let eps = 1e-5;
    let (mut num, mut den): (f64, f64) = (0.0, 0.0);
    for t in 0..3 {
        for k in 0..12 {
            let idx = ((k * 7 + t * 3) % 16, (k * 5 + 1) % 16);
            let mut plus = state.clone();
            plus[t][idx] += eps;
            let mut minus = state.clone();
            minus[t][idx] -= eps;
            let fd = (problem.log_target(&plus).unwrap() - problem.log_target(&minus).unwrap())
                / (2.0 * eps);
            num = num.max((fd - grad[t][idx]).abs());
            den = den.max(grad[t][idx].abs());
        }
    }
    let grad_rel = num / den;

    // 16x16x7 synthetic problem with high counts
    let grid = GridSpec::unmasked(0.0, 0.0, 1.0 / 16.0, 1.0 / 16.0, 16, 16).unwrap();
    let params = CovarianceParams::new(1.0, 0.15, 2.0).unwrap();
    let density = SpatialDensity::uniform(&grid).unwrap();
    let lambda1 = vec![256.0 * 20.0; 7];
    let window = unit_square();
    let mut rng = stream_rng(6, 1);
    let draw = simulate_lgcp_dataset(
        &params,
        &density.raster,
        &lambda1,
        &window,
        TimeRange::new(1, 7).unwrap(),
        &mut rng,
    )
    .unwrap();
    let spectrum = circulant_eigenvalues(&extend_grid(&grid), &params).unwrap();
    let series = aggregate_counts(&draw.pattern, &grid).unwrap();
    let problem =
        MalaProblem::new(&spectrum, &series, density.raster.values(), &lambda1, 7).unwrap();
    let run = run_mala(
        &problem,
        &MalaOptions {
            n_iter: 5000,
            seed: 61,
            ..Default::default()
        },
    )
    .unwrap();
    let est: Vec<f64> = run.mean_fields.last().unwrap().iter().copied().collect();
    let truth: Vec<f64> = draw.fields.last().unwrap().iter().copied().collect();
    let r = pearson(&est, &truth);
    let acc = run.acceptance_rate;
    Outcome::new(
        grad_rel <= 1e-5 && (acc - 0.574).abs() <= 0.08 && r >= 0.7,
        format!("gradient relative error {grad_rel:.1e}, acceptance {acc:.3}, Pearson {r:.3}"),
    )
}

fn write_dataset(
    dir: &std::path::Path,
    pattern: &SpatioTemporalPointPattern,
    window: &ObservationWindow,
) {
    save_point_pattern(pattern, File::create(dir.join("pattern.csv")).unwrap()).unwrap();
    window
        .write_csv(File::create(dir.join("window.csv")).unwrap())
        .unwrap();
}

fn synthetic_config(dir: &std::path::Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.paths.pattern = Some(dir.join("pattern.csv"));
    cfg.paths.window = Some(dir.join("window.csv"));
    cfg.paths.out_dir = dir.join("out");
    cfg.glm.design = DesignOptions::intercept_only();
    cfg.summaries.n_perm = 0;
    cfg
}

fn criterion_7() -> Outcome {
    let window = unit_square();
    let grid = GridSpec::from_window(&window, 128, 128).unwrap();
    let density = SpatialDensity::uniform(&grid).unwrap();
    let truth = CovarianceParams::new(1.5, 0.2, 2.0).unwrap();
    let (mut s2, mut phi, mut theta) = (Vec::new(), Vec::new(), Vec::new());
    for rep in 0..20 {
        let mut rng = stream_rng(7, rep);
        let draw = simulate_lgcp_dataset(
            &truth,
            &density.raster,
            &[200.0; 30],
            &window,
            TimeRange::new(1, 30).unwrap(),
            &mut rng,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &draw.pattern, &window);
        let mut cfg = synthetic_config(dir.path());
        cfg.seed = rep;
        cfg.data.holdout = 0;
        let mut pl = Pipeline::new(cfg, false).unwrap();
        let fit = pl.fitcov().unwrap().value.params;
        s2.push(fit.sigma2);
        phi.push(fit.phi);
        theta.push(fit.theta);
    }
    let (m_s2, m_phi, m_theta) = (median(s2), median(phi), median(theta));
    let (e_s2, e_phi, e_theta) = (
        (m_s2 / 1.5 - 1.0).abs(),
        (m_phi / 0.2 - 1.0).abs(),
        (m_theta / 2.0 - 1.0).abs(),
    );
    Outcome::new(
        e_s2 <= 0.25 && e_phi <= 0.25 && e_theta <= 0.30,
        format!(
            "medians sigma2 {m_s2:.3}, phi {m_phi:.3}, theta {m_theta:.3}; \
             relative errors {e_s2:.3}, {e_phi:.3}, {e_theta:.3}"
        ),
    )
}

fn criterion_8() -> Outcome {
    let city = CovarianceParams::new(4.933, 3494.705, 0.182).unwrap();
    let w = forecast_weight(1.0, &city);
    let weight_ok = (w - 4.1e-3).abs() < 0.05e-3;
    let post = Array2::from_shape_fn((4, 4), |(i, j)| (i as f64 - j as f64) * 0.3);
    let far = forecast_mean_from(&post, 1e6, &city);
    let limit_ok = far.iter().all(|&v| (v - city.mean()).abs() < 1e-12);

    // integrated forecast intensity with z_T drawn from the prior
    let window = unit_square();
    let grid = GridSpec::from_window(&window, 32, 32).unwrap();
    let density = SpatialDensity::uniform(&grid).unwrap();
    let params = CovarianceParams::new(1.0, 0.1, 2.0).unwrap();
    let spectrum = circulant_eigenvalues(&extend_grid(&grid), &params).unwrap();
    let lambda1 = 150.0;
    let mut rng = stream_rng(8, 0);
    let mut total = 0.0;
    let draws = 500;
    for _ in 0..draws {
        let z_t = sample_grf(&spectrum, params.mean(), &mut rng).unwrap();
        let z = forecast_field_draw(z_t.base.values(), 1.0, &spectrum, &mut rng).unwrap();
        total += forecast_intensity(&density.raster, lambda1, &z)
            .unwrap()
            .integral();
    }
    let mass_err = (total / draws as f64 / lambda1 - 1.0).abs();

    // envelopes for six held-out days through the full pipeline
    let truth = CovarianceParams::new(1.5, 0.2, 2.0).unwrap();
    let sim_grid = GridSpec::from_window(&window, 64, 64).unwrap();
    let sim_density = SpatialDensity::uniform(&sim_grid).unwrap();
    let mut rng = stream_rng(8, 1);
    let draw = simulate_lgcp_dataset(
        &truth,
        &sim_density.raster,
        &[200.0; 36],
        &window,
        TimeRange::new(1, 36).unwrap(),
        &mut rng,
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &draw.pattern, &window);
    let mut cfg = synthetic_config(dir.path());
    cfg.seed = 8;
    cfg.data.holdout = 6;
    cfg.grid.m = 64;
    cfg.grid.p = 64;
    cfg.simulate.n_realizations = 200;
    let mut pl = Pipeline::new(cfg, false).unwrap();
    let days = pl.simulate().unwrap().value;
    let fitted = pl.fitcov().unwrap().value.params;
    let inside: Vec<f64> = days
        .iter()
        .map(|d| d.long_range_inside().unwrap_or(0.0))
        .collect();
    let env_ok = days.len() == 6 && inside.iter().all(|&f| f == 1.0);

    // diagnostic only: the same chain and forecast with the generating
    // covariance, separating forecast consistency from the fitted parameters
    let ing = pl.ingest().unwrap().value;
    let dens = pl.intensity().unwrap().value;
    let glm = pl.glm().unwrap().value;
    let spectrum = circulant_eigenvalues(&extend_grid(&sim_grid), &truth).unwrap();
    let run = run_conditional(
        &ing.fit,
        &spectrum,
        &dens,
        &glm.fitted,
        &pl.config().mala,
        81,
    )
    .unwrap();
    let fdays = forecast_days(
        &run.last_day_fields,
        run.mean_fields.last().unwrap(),
        &spectrum,
        &dens,
        &glm,
        ing.fit.t_range().end,
        &pl.config().forecast.deltas,
        82,
    )
    .unwrap();
    let real = simulate_forecasts(
        &run.last_day_fields,
        &spectrum,
        &dens,
        &fdays,
        ing.window(),
        200,
        83,
    )
    .unwrap();
    let r_grid = r_grid_for(&pl.config().summaries, ing.window());
    let known: Vec<f64> =
        forecast_envelopes(&real, &fdays, ing.holdout.as_ref(), ing.window(), &r_grid)
            .unwrap()
            .iter()
            .map(|d| d.long_range_inside().unwrap_or(0.0))
            .collect();
    Outcome::new(
        weight_ok && limit_ok && mass_err <= 0.05 && env_ok,
        format!(
            "weight {w:.3e}, limit ok {limit_ok}, integrated intensity error {mass_err:.3}, \
             long-range inside fractions {inside:?} with fitted ({:.2}, {:.3}, {:.2}); \
             diagnostic with generating parameters {known:?}",
            fitted.sigma2, fitted.phi, fitted.theta
        ),
    )
}

/// Largest gap between the empirical CDF of `xs` and the uniform CDF.
fn ks_uniform(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).abs().max(((i + 1) as f64 / n - x).abs()))
        .fold(0.0, f64::max)
}

fn mc_fraction(pattern: &SpatioTemporalPointPattern, n_perm: usize, seed: u64) -> f64 {
    let grid = GridSpec::from_window(pattern.window(), 64, 64).unwrap();
    let h = choose_bandwidth(pattern, &BandwidthConfig::default(), seed).unwrap();
    let density = estimate_density(pattern, &grid, h).unwrap();
    let cfg = SummariesConfig {
        n_perm,
        ..SummariesConfig::default()
    };
    compute_mctest(pattern, &density, &cfg, seed)
        .unwrap()
        .fraction_below
}

fn criterion_9() -> Outcome {
    let runs = 100;
    let fractions: Vec<f64> = (0..runs)
        .map(|r| {
            let mut rng = stream_rng(9, r);
            mc_fraction(&poisson_pattern(30.0, 10, &mut rng), 199, r)
        })
        .collect();
    let d = ks_uniform(&fractions);
    // asymptotic 1% critical value of the Kolmogorov distribution
    let critical = 1.6276 / (runs as f64).sqrt();

    let window = unit_square();
    let grid = GridSpec::from_window(&window, 64, 64).unwrap();
    let density = SpatialDensity::uniform(&grid).unwrap();
    let params = CovarianceParams::new(1.5, 0.1, 2.0).unwrap();
    let clustered_runs = 20;
    let high = (0..clustered_runs)
        .filter(|&r| {
            let mut rng = stream_rng(9, 1000 + r);
            let draw = simulate_lgcp_dataset(
                &params,
                &density.raster,
                &[40.0; 15],
                &window,
                TimeRange::new(1, 15).unwrap(),
                &mut rng,
            )
            .unwrap();
            mc_fraction(&draw.pattern, 99, r) > 0.8
        })
        .count();
    let share = high as f64 / clustered_runs as f64;
    Outcome::new(
        d <= critical && share >= 0.8,
        format!(
            "KS distance {d:.3} (critical {critical:.3}), clustered share above 0.8 {share:.2}"
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let secs = Duration::from_secs;
    let _ = std::io::stderr().write_all(b"\n");
    let results = [
        run(1, secs(1), criterion_1),
        run(2, secs(1), criterion_2),
        run(3, secs(30), criterion_3),
        run(4, secs(120), criterion_4),
        run(5, secs(60), criterion_5),
        run(6, secs(300), criterion_6),
        run(7, secs(900), criterion_7),
        run(8, secs(600), criterion_8),
        run(9, secs(300), criterion_9),
    ];
    let failed: Vec<usize> = results
        .iter()
        .enumerate()
        .filter(|(_, &ok)| !ok)
        .map(|(i, _)| i + 1)
        .collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
