use dirichlet_lab::asymptotics::{gaussian_bound_threshold, varadhan_indicator, varadhan_kernel};
use dirichlet_lab::fit::log_grid_decreasing;
use dirichlet_lab::metric::IntrinsicMetric;
use dirichlet_lab::{build_lattice_1d, Region, SpectralCache};

fn lattice(cells: usize) -> (SpectralCache, IntrinsicMetric) {
    let s = build_lattice_1d(cells, 1.0, 1.0).unwrap();
    let m = IntrinsicMetric::certified(&s);
    (SpectralCache::new(s).unwrap(), m)
}

#[test]
fn kernel_limit_between_quarter_points() {
    let (c, m) = lattice(256);
    let grid = log_grid_decreasing(2e-3, 2e-2, 12);
    let p = varadhan_kernel(&c, &m, 64, 192, &grid).unwrap();
    assert!(!p.outside_window());
    assert!(p.deviation < 0.05, "L = {} dev {}", p.limit, p.deviation);
    // Raw value at t = 0.01 sits well above the limit before extrapolation.
    let raw = c.heat_kernel(0.01, 64, 192).unwrap();
    let continuum = (2.0 * std::f64::consts::PI * 0.01).powf(-0.5) * (-0.125f64 / 0.01).exp();
    assert!((raw.value / continuum - 1.0).abs() < 0.2);
}

#[test]
fn extrapolated_limit_respects_the_upper_bound() {
    let (c, m) = lattice(256);
    let grid = log_grid_decreasing(2e-3, 2e-2, 12);
    let p = varadhan_kernel(&c, &m, 64, 192, &grid).unwrap();
    // The raw sequence carries the prefactor and sits above -d^2/2; the
    // bound is checked on the extrapolated value with the probe tolerance.
    assert!(p.raw.iter().all(|r| *r > p.target));
    assert!(p.limit <= p.target + 0.05 * p.target.abs());
    assert!(p.in_window.iter().all(|w| *w));
}

#[test]
fn diagonal_limit_is_zero() {
    let (c, m) = lattice(256);
    let grid = log_grid_decreasing(2e-3, 2e-2, 12);
    let p = varadhan_kernel(&c, &m, 128, 128, &grid).unwrap();
    assert!(p.limit.abs() < 1e-3, "{}", p.limit);
}

#[test]
fn indicator_limit() {
    let (c, m) = lattice(256);
    let s = c.space();
    let a = Region::interval(s, 0.0, 0.1).unwrap();
    let grid = log_grid_decreasing(2e-3, 2e-2, 12);
    let p = varadhan_indicator(&c, &m, &a, 128, &grid).unwrap();
    assert!(p.deviation < 0.07, "L = {} dev {}", p.limit, p.deviation);
    let inside = varadhan_indicator(&c, &m, &a, 13, &log_grid_decreasing(4e-4, 4e-3, 12)).unwrap();
    assert!(inside.limit.abs() < 1e-3, "{}", inside.limit);
    let full = varadhan_indicator(&c, &m, &Region::full(s), 100, &grid).unwrap();
    assert!(full.limit.abs() < 1e-9);
}

#[test]
fn threshold_shrinks_under_refinement() {
    let mut last = f64::INFINITY;
    for cells in [64, 128, 256] {
        let (c, m) = lattice(cells);
        let s = c.space();
        let a = Region::interval(s, 0.0, 0.1).unwrap();
        let b = Region::interval(s, 0.9, 1.0).unwrap();
        let r = gaussian_bound_threshold(&c, &m, &a, &b, None).unwrap();
        println!("cells {cells}: t* = {}", r.t_star);
        assert!(!r.no_violation);
        assert!(r.t_star <= last);
        last = r.t_star;
    }
}
