use std::sync::Arc;

use dirichlet_lab::energy::{Curve, CurveContext, CurveShape};
use dirichlet_lab::fdd::TimePartition;
use dirichlet_lab::fit::log_grid_decreasing;
use dirichlet_lab::metric::IntrinsicMetric;
use dirichlet_lab::simulator::{
    endpoint_counts, tube_ldp_estimate, tube_probability, tube_probability_exact, TubeEvent,
    TubeMethod,
};
use dirichlet_lab::{build_lattice_1d, build_two_state, SpectralCache, StateSpace};

#[test]
fn two_state_transition_frequency() {
    let s = build_two_state(1.0, 1.0, 1.0).unwrap();
    let n = 100_000;
    let counts = endpoint_counts(&s, 0.5, 0, n, 2024).unwrap();
    let p = 0.5 * (1.0 - (-1.0f64).exp());
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    let hat = counts[1] as f64 / n as f64;
    assert!((hat - p).abs() < 3.0 * sigma, "{hat} vs {p}");
}

#[test]
fn lattice_marginals_match_the_semigroup() {
    let s = build_lattice_1d(16, 1.0, 1.0).unwrap();
    let c = SpectralCache::new(s.clone()).unwrap();
    let n = 100_000;
    let counts = endpoint_counts(&s, 0.02, 8, n, 9).unwrap();
    // Row of the kernel times m: law of the endpoint.
    let k = c.kernel_matrix(0.02).unwrap();
    for y in 0..s.len() {
        let p = k[(8, y)] * s.mass(y);
        let sigma = (p * (1.0 - p) / n as f64).sqrt().max(1e-12);
        let hat = counts[y] as f64 / n as f64;
        assert!((hat - p).abs() <= 3.5 * sigma + 1e-9, "y={y}: {hat} vs {p}");
    }
}

fn geodesic_tube(space: Arc<StateSpace>) -> TubeEvent {
    let center = Curve::new(
        CurveContext::graph(space),
        CurveShape::Line {
            start: vec![0.25],
            end: vec![0.75],
            power: 1.0,
        },
        4096,
    )
    .unwrap();
    TubeEvent::new(center, 0.1, TimePartition::uniform(4).unwrap()).unwrap()
}

#[test]
fn tube_monte_carlo_matches_exact_fdd() {
    let s = Arc::new(build_lattice_1d(256, 1.0, 1.0).unwrap());
    let c = SpectralCache::new(s.clone()).unwrap();
    let m = IntrinsicMetric::certified(&s);
    let tube = geodesic_tube(s.clone());
    let exact = tube_probability_exact(&c, &m, &tube, 0.02).unwrap();
    let est = tube_probability(&c, &m, &tube, 0.02, 100_000, 77).unwrap();
    let sigma = (exact * (1.0 - exact) / 1e5).sqrt();
    println!("exact {exact} mc {} +- {}", est.estimate, sigma);
    assert!((est.estimate - exact).abs() < 3.0 * sigma);
    assert!(est.lower <= exact && exact <= est.upper);
    let again = tube_probability(&c, &m, &tube, 0.02, 100_000, 77).unwrap();
    assert_eq!(est, again);
}

#[test]
fn interval_width_scales_with_samples() {
    let s = Arc::new(build_lattice_1d(64, 1.0, 1.0).unwrap());
    let c = SpectralCache::new(s.clone()).unwrap();
    let m = IntrinsicMetric::certified(&s);
    let tube = geodesic_tube(s.clone());
    let a = tube_probability(&c, &m, &tube, 0.05, 20_000, 1).unwrap();
    let b = tube_probability(&c, &m, &tube, 0.05, 40_000, 1).unwrap();
    let ratio = (b.upper - b.lower) / (a.upper - a.lower);
    assert!((ratio - 0.5f64.sqrt()).abs() < 0.05, "{ratio}");
}

#[test]
fn full_tube_is_certain() {
    let s = Arc::new(build_lattice_1d(32, 1.0, 1.0).unwrap());
    let c = SpectralCache::new(s.clone()).unwrap();
    let m = IntrinsicMetric::certified(&s);
    let mut tube = geodesic_tube(s.clone());
    tube.delta = 2.0;
    let est = tube_probability(&c, &m, &tube, 0.1, 1000, 3).unwrap();
    assert_eq!(est.hits, 1000);
    let ldp = tube_ldp_estimate(&c, &m, &tube, &log_grid_decreasing(1e-3, 1e-2, 8), 1000, 3, 1.0 / 16.0)
        .unwrap();
    assert!(ldp.probe.limit.abs() < 1e-9);
}

#[test]
fn tube_limit_lies_in_the_rate_bracket() {
    let s = Arc::new(build_lattice_1d(256, 1.0, 1.0).unwrap());
    let c = SpectralCache::new(s.clone()).unwrap();
    let m = IntrinsicMetric::certified(&s);
    let tube = geodesic_tube(s.clone());
    let grid = log_grid_decreasing(2e-3, 2e-2, 12);
    let ldp = tube_ldp_estimate(&c, &m, &tube, &grid, 1000, 5, 2.0 / 256.0).unwrap();
    assert_eq!(ldp.method, TubeMethod::ExactFdd);
    let (lo, hi) = ldp.rate_bracket.limit_bracket();
    let tol = 5.0 * ldp.probe.fit_residual.max(1e-3);
    println!("L {} bracket [{lo}, {hi}] energy {:?}", ldp.probe.limit, ldp.energy_bracket);
    assert!(ldp.probe.limit >= lo - tol && ldp.probe.limit <= hi + tol);
    assert!((ldp.center_energy - 0.125).abs() < 0.03 * 0.125);
    assert!(ldp.probe.limit >= ldp.energy_bracket.0);
}

#[test]
fn two_state_tube_control() {
    let s = Arc::new(build_two_state(1.0, 1.0, 1.0).unwrap());
    let c = SpectralCache::new(s.clone()).unwrap();
    let m = IntrinsicMetric::certified(&s);
    let center = Curve::new(
        CurveContext::graph(s.clone()),
        CurveShape::Samples {
            t: vec![0.0, 1.0],
            points: vec![
                dirichlet_lab::energy::CurvePoint::Vertex(0),
                dirichlet_lab::energy::CurvePoint::Vertex(1),
            ],
        },
        8,
    )
    .unwrap();
    let tube = TubeEvent::new(center, 0.5, TimePartition::uniform(1).unwrap()).unwrap();
    let ldp = tube_ldp_estimate(&c, &m, &tube, &log_grid_decreasing(1e-3, 1e-2, 10), 1000, 0, 0.5)
        .unwrap();
    assert!(ldp.probe.outside_window());
    assert!(ldp.probe.limit.abs() < 1e-2);
}
