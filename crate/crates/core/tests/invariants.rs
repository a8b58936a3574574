use dirichlet_lab::energy::{discrete_energy, Curve, CurveShape};
use dirichlet_lab::experiment::fmt_f64;
use dirichlet_lab::fdd::{fdd_rate, CylinderEvent, TimePartition};
use dirichlet_lab::metric::IntrinsicMetric;
use dirichlet_lab::simulator::wilson_interval;
use dirichlet_lab::{Region, SpectralCache, StateSpace, Vertex};
use proptest::prelude::*;

/// Connected graph: a spanning path plus extra random edges.
fn graph() -> impl Strategy<Value = StateSpace> {
    (3usize..9).prop_flat_map(|n| {
        (
            prop::collection::vec(0.2f64..3.0, n),
            prop::collection::vec(0.2f64..3.0, n - 1),
            prop::collection::vec((0..n, 0..n, 0.2f64..3.0), 0..n),
        )
            .prop_map(|(measure, path, extra)| {
                let mut edges: Vec<(Vertex, Vertex, f64)> =
                    path.iter().enumerate().map(|(i, &w)| (i, i + 1, w)).collect();
                for (x, y, w) in extra {
                    if x != y && !edges.iter().any(|e| (e.0, e.1) == (x.min(y), x.max(y))) {
                        edges.push((x.min(y), x.max(y), w));
                    }
                }
                StateSpace::from_edges(measure, &edges).unwrap()
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn kernel_is_symmetric_positive_and_conservative(s in graph(), t in 0.01f64..2.0) {
        let m = s.measure().to_vec();
        let c = SpectralCache::new(s).unwrap();
        let k = c.kernel_matrix(t).unwrap();
        for x in 0..m.len() {
            let mut mass = 0.0;
            for y in 0..m.len() {
                prop_assert!((k[(x, y)] - k[(y, x)]).abs() <= 1e-9 * (1.0 + k[(x, y)]));
                prop_assert!(c.heat_kernel(t, x, y).unwrap().value > 0.0);
                mass += k[(x, y)] * m[y];
            }
            prop_assert!((mass - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn metric_is_symmetric_with_zero_diagonal(s in graph()) {
        let metric = IntrinsicMetric::certified(&s);
        for x in 0..s.len() {
            prop_assert_eq!(metric.lower(x, x), 0.0);
            for y in 0..s.len() {
                let (a, b) = (metric.lower(x, y), metric.lower(y, x));
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a));
                if x != y {
                    prop_assert!(a > 0.0);
                }
            }
        }
    }

    #[test]
    fn enlarging_sets_never_raises_the_rate(
        s in graph(),
        picks in prop::collection::vec(prop::collection::vec(any::<prop::sample::Index>(), 1..3), 3),
        extra in prop::collection::vec(any::<prop::sample::Index>(), 3),
    ) {
        let metric = IntrinsicMetric::certified(&s);
        let n = s.len();
        let small: Vec<Vec<Vertex>> = picks
            .iter()
            .map(|p| p.iter().map(|i| i.index(n)).collect())
            .collect();
        let large: Vec<Vec<Vertex>> = small
            .iter()
            .zip(&extra)
            .map(|(v, e)| v.iter().copied().chain([e.index(n)]).collect())
            .collect();
        let rate = |sets: &[Vec<Vertex>]| {
            let regions = sets
                .iter()
                .map(|v| Region::new(&s, v.iter().copied(), "r").unwrap())
                .collect();
            let times = TimePartition::new(vec![0.0, 0.4, 1.0]).unwrap();
            let event = CylinderEvent::new(&s, times, regions, None).unwrap();
            fdd_rate(&metric, &event).unwrap().rate
        };
        prop_assert!(rate(&large) <= rate(&small));
    }

    #[test]
    fn refinement_never_lowers_discrete_energy(
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
        mut cuts in prop::collection::vec(0.0f64..1.0, 1..6),
        more in prop::collection::vec(0.0f64..1.0, 1..6),
    ) {
        let curve = Curve::euclidean(CurveShape::Poly {
            coefficients: vec![vec![0.0, a, b], vec![b, 0.0, a]],
        })
        .unwrap();
        let partition = |mut v: Vec<f64>| {
            v.extend([0.0, 1.0]);
            v.sort_by(f64::total_cmp);
            v.dedup();
            TimePartition::new(v).unwrap()
        };
        let coarse = discrete_energy(&curve, &partition(cuts.clone())).unwrap();
        cuts.extend(more);
        let fine = discrete_energy(&curve, &partition(cuts)).unwrap();
        prop_assert!(coarse <= fine * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn wilson_interval_contains_the_proportion(n in 1u64..100_000, frac in 0.0f64..=1.0) {
        let hits = (frac * n as f64).round() as u64;
        let (lo, hi) = wilson_interval(hits, n);
        let p = hits as f64 / n as f64;
        prop_assert!((0.0..=1.0).contains(&lo) && (0.0..=1.0).contains(&hi));
        prop_assert!(lo <= p + 1e-12 && p <= hi + 1e-12);
    }

    #[test]
    fn formatted_floats_round_trip(v in any::<f64>().prop_filter("finite", |v| v.is_finite())) {
        prop_assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
    }
}
