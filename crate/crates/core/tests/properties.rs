use proptest::prelude::*;

use stlgcp::bandwidth::{select_bandwidth, KMeansOptions};
use stlgcp::covfit::{theoretical_pcf, CovarianceParams};
use stlgcp::data::{GridSpec, ObservationWindow, Point};
use stlgcp::forecast::forecast_weight;
use stlgcp::grf::{circulant_eigenvalues, extend_grid, sample_grf};
use stlgcp::intensity::{
    epanechnikov, kernel_intensity_points, normalize_to_density, quartic_kernel,
};
use stlgcp::rng::stream_rng;
use stlgcp::sim::simulate_poisson_from_raster;
use stlgcp::summary::{
    circle_fraction, empirical_autocov, ripley_weight_spatial, ripley_weight_temporal, Envelope,
};

fn point_in(w: f64, h: f64) -> impl Strategy<Value = Point> {
    (0.0..w, 0.0..h).prop_map(|(x, y)| Point { x, y })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_even_bounded_and_compact(u in -3.0f64..3.0) {
        let q = quartic_kernel(u);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert_eq!(q, quartic_kernel(-u));
        if u.abs() >= std::f64::consts::SQRT_2 {
            prop_assert_eq!(q, 0.0);
        }
        let e = epanechnikov(u);
        prop_assert!((0.0..=0.75).contains(&e));
        if u.abs() > 1.0 {
            prop_assert_eq!(e, 0.0);
        }
    }

    #[test]
    fn density_has_unit_mass(
        pts in prop::collection::vec(point_in(2.0, 1.0), 1..40),
        h in 0.05f64..0.8,
        m in 4usize..20,
    ) {
        let w = ObservationWindow::rectangle(0.0, 0.0, 2.0, 1.0).unwrap();
        let grid = GridSpec::from_window(&w, m, m).unwrap();
        let raster = kernel_intensity_points(&pts, &grid, h).unwrap();
        prop_assert!(raster.values().iter().all(|&v| v >= 0.0));
        if raster.integral() > 0.0 {
            let d = normalize_to_density(&raster, h).unwrap();
            prop_assert!((d.raster.integral() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn edge_weights_are_at_least_one(a in point_in(1.0, 1.0), b in point_in(1.0, 1.0)) {
        let w = ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        let ws = ripley_weight_spatial(a, b, &w);
        prop_assert!(ws >= 1.0 - 1e-12 && ws.is_finite());
        let f = circle_fraction(a, a.dist(&b), &w);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&f));
    }

    #[test]
    fn temporal_weight_is_one_or_two(t1 in 0i64..30, t2 in 0i64..30) {
        let w = ripley_weight_temporal(t1 as f64, t2 as f64, 0.0, 29.0);
        prop_assert!(w == 1.0 || w == 2.0);
    }

    #[test]
    fn polygon_fraction_matches_rectangle(c in point_in(1.0, 1.0), r in 0.01f64..1.5) {
        let rect = ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        // same square with a redundant vertex, which forces the polygon path
        let poly = ObservationWindow::new(vec![
            Point { x: 0.0, y: 0.0 },
            Point { x: 0.5, y: 0.0 },
            Point { x: 1.0, y: 0.0 },
            Point { x: 1.0, y: 1.0 },
            Point { x: 0.0, y: 1.0 },
        ]).unwrap();
        let a = circle_fraction(c, r, &rect);
        let b = circle_fraction(c, r, &poly);
        prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
    }

    #[test]
    fn forecast_weight_decays_in_unit_interval(d1 in 0.0f64..50.0, d2 in 0.0f64..50.0, theta in 0.1f64..30.0) {
        let p = CovarianceParams::new(1.0, 0.1, theta).unwrap();
        let (w1, w2) = (forecast_weight(d1, &p), forecast_weight(d2, &p));
        prop_assert!((0.0..=1.0).contains(&w1));
        if d1 <= d2 {
            prop_assert!(w1 >= w2);
        }
        prop_assert_eq!(forecast_weight(0.0, &p), 1.0);
    }

    #[test]
    fn pcf_is_above_one_and_decreasing(u1 in 0.0f64..2.0, u2 in 0.0f64..2.0, s2 in 0.0f64..3.0, phi in 0.01f64..1.0) {
        let (g1, g2) = (theoretical_pcf(u1, s2, phi), theoretical_pcf(u2, s2, phi));
        prop_assert!(g1 >= 1.0);
        if u1 <= u2 {
            prop_assert!(g1 >= g2);
        }
    }

    #[test]
    fn envelope_contains_its_bounds(lo in prop::collection::vec(-5.0f64..5.0, 1..10), width in 0.0f64..3.0) {
        let hi: Vec<f64> = lo.iter().map(|v| v + width).collect();
        let env = Envelope { lo: lo.clone(), hi: hi.clone(), n_sim: 2 };
        prop_assert!(env.contains(&lo).iter().all(|&b| b));
        prop_assert!(env.contains(&hi).iter().all(|&b| b));
        let above: Vec<f64> = hi.iter().map(|v| v + 1e-9).collect();
        prop_assert!(env.contains(&above).iter().all(|&b| !b));
    }

    #[test]
    fn autocov_vanishes_when_counts_equal_means(lambda in prop::collection::vec(1.0f64..50.0, 5..30)) {
        let v_max = lambda.len() - 1;
        let curve = empirical_autocov(&lambda, &lambda, v_max).unwrap();
        prop_assert!(curve.values.iter().all(|v| v.abs() < 1e-9));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn bandwidth_is_positive_and_scale_equivariant(
        pts in prop::collection::vec(point_in(1.0, 1.0), 6..40),
        k in 1usize..4,
        scale in 0.1f64..10.0,
    ) {
        let opts = KMeansOptions { k, seed: 9, ..KMeansOptions::default() };
        let scaled: Vec<Point> = pts.iter().map(|p| Point { x: p.x * scale, y: p.y * scale }).collect();
        if let (Ok(h), Ok(hs)) = (select_bandwidth(&pts, &opts), select_bandwidth(&scaled, &opts)) {
            prop_assert!(h >= 0.0);
            prop_assert!((hs - scale * h).abs() <= 1e-9 * (1.0 + hs));
        }
    }

    #[test]
    fn grf_draws_are_seeded_and_finite(seed in any::<u64>(), s2 in 0.1f64..3.0, phi in 0.02f64..0.5) {
        let w = ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        let grid = GridSpec::from_window(&w, 8, 8).unwrap();
        let params = CovarianceParams::new(s2, phi, 1.0).unwrap();
        // long ranges on a small torus are rejected rather than clipped
        let spec = match circulant_eigenvalues(&extend_grid(&grid), &params) {
            Ok(s) => s,
            Err(stlgcp::Error::NegativeEigenvalues { negative_mass, trace }) => {
                prop_assert!(negative_mass > 1e-6 * trace);
                return Ok(());
            }
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        };
        let a = sample_grf(&spec, params.mean(), &mut stream_rng(seed, 0)).unwrap();
        let b = sample_grf(&spec, params.mean(), &mut stream_rng(seed, 0)).unwrap();
        prop_assert_eq!(a.base.values(), b.base.values());
        prop_assert!(a.base.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn poisson_points_stay_in_positive_cells(seed in any::<u64>(), rate in 1.0f64..200.0) {
        let w = ObservationWindow::rectangle(0.0, 0.0, 1.0, 1.0).unwrap();
        let grid = GridSpec::from_window(&w, 4, 4).unwrap();
        let mut values = ndarray::Array2::zeros((4, 4));
        values[[1, 2]] = rate;
        let raster = stlgcp::data::Raster::new(grid.clone(), values, stlgcp::data::RasterUnits::IntensityPerArea).unwrap();
        let pts = simulate_poisson_from_raster(&raster, &mut stream_rng(seed, 1)).unwrap();
        for p in pts {
            prop_assert_eq!(grid.locate(p.x, p.y), Some((1, 2)));
        }
    }
}
