mod common;

use bluetrack_core::geometry::{Point2D, Rect};
use bluetrack_core::positioning::{
    build_location_map, estimate_distance, fingerprint_locate, proximity_locate, smallest_singular_value,
    trilaterate, DistanceEstimate, LocationMap, Method, PositioningError, ProximitySample, SampleVector,
};
use bluetrack_core::sim::RadioParams;
use proptest::prelude::*;

use common::*;

fn anchors(spec: &[(f64, f64, f64)]) -> Vec<DistanceEstimate> {
    spec.iter()
        .enumerate()
        .map(|(i, &(x, y, d))| DistanceEstimate::new(format!("S{}", i + 1), Point2D::new(x, y), d))
        .collect()
}

fn assert_matches_oracle(a: &[DistanceEstimate], expected: Point2D) {
    let fix = trilaterate(a).unwrap();
    let oracle = grid_oracle(a, search_region(a));
    // The oracle is exact to its 0.001 m grid.
    assert!(fix.pos.distance(&oracle) < 1e-3, "solver {} oracle {}", fix.pos, oracle);
    assert!(range_objective(a, &fix.pos) <= range_objective(a, &oracle) + 1e-12);
    assert!(fix.pos.distance(&expected) < 1e-4, "solver {}", fix.pos);
}

#[test]
fn right_triangle_of_anchors() {
    let a = anchors(&[(0.0, 0.0, 7.07107), (10.0, 0.0, 7.07107), (0.0, 10.0, 7.07107)]);
    assert_matches_oracle(&a, Point2D::new(5.0, 5.0));
    assert!(trilaterate(&a).unwrap().rms_residual_m < 1e-4);
}

#[test]
fn isoceles_anchors() {
    let a = anchors(&[(0.0, 0.0, 7.07107), (10.0, 0.0, 7.07107), (5.0, 10.0, 5.0)]);
    assert_matches_oracle(&a, Point2D::new(5.0, 5.0));
}

#[test]
fn distance_examples() {
    let radio = RadioParams::default();
    assert_eq!(estimate_distance(-40.0, &radio).unwrap(), 1.0);
    assert!((estimate_distance(-60.0, &radio).unwrap() - 10.0).abs() < 1e-12);
    assert!((estimate_distance(-46.0206, &radio).unwrap() - 2.0).abs() < 1e-4);
    assert_eq!(estimate_distance(-30.0, &radio).unwrap(), 1.0);
    // Forward model at 2 m, evaluated independently.
    assert!((radio.mean_rssi(2.0) - (-40.0 - 20.0 * 2f64.log10())).abs() < 1e-12);
    let flat = RadioParams { path_loss_exponent: 0.0, ..radio };
    assert!(matches!(estimate_distance(-50.0, &flat), Err(PositioningError::InvalidParams(_))));
}

#[test]
fn fingerprint_prefers_smaller_signal_distance() {
    let map = LocationMap::parse(
        "locmap cell_size=1 bounds=0,0,2,1 sensors=S1,S2\n\
         0,0.5,0.5,S1:-50,S2:-60\n\
         1,1.5,0.5,S1:-47,S2:-59\n",
    )
    .unwrap();
    let v = SampleVector::parse("S1:-47,S2:-56", 0).unwrap();
    // |(-47,-56) - (-50,-60)| = 5, |(-47,-56) - (-47,-59)| = 3.
    let m = fingerprint_locate(&map, &v).unwrap();
    assert_eq!(m.cell_index, 1);
    assert!((m.signal_distance_db - 3.0).abs() < 1e-12);
    assert_eq!(m.estimate.pos, Point2D::new(1.5, 0.5));
    assert_eq!(m.estimate.method, Method::Fingerprint);
    assert!((m.estimate.accuracy_m - 0.5f64.hypot(0.5)).abs() < 1e-12);
}

#[test]
fn fingerprint_map_text_round_trips() {
    let world = corner_world(7.0, 5.0, Point2D::new(1.0, 1.0), RadioParams::default());
    let map = build_location_map(&world, 2.0).unwrap();
    assert_eq!(map.dims(), (4, 3));
    let text = map.to_text();
    assert_eq!(LocationMap::parse(&text).unwrap(), map);
}

fn arb_point(lo: f64, hi: f64) -> impl Strategy<Value = Point2D> {
    (lo..hi, lo..hi).prop_map(|(x, y)| Point2D::new(x, y))
}

fn arb_anchor_set() -> impl Strategy<Value = Vec<Point2D>> {
    prop::collection::vec(arb_point(-50.0, 50.0), 3..7)
        .prop_filter("well spread", |pts| smallest_singular_value(pts) > 2.0)
}

fn exact_ranges(pts: &[Point2D], truth: &Point2D) -> Vec<DistanceEstimate> {
    pts.iter()
        .enumerate()
        .map(|(i, p)| DistanceEstimate::new(format!("S{i}"), *p, p.distance(truth)))
        .collect()
}

proptest! {
    #[test]
    fn exact_ranges_recover_the_point(pts in arb_anchor_set(), truth in arb_point(-40.0, 40.0)) {
        prop_assume!(pts.iter().all(|p| p.distance(&truth) > 1e-3));
        let fix = trilaterate(&exact_ranges(&pts, &truth)).unwrap();
        prop_assert!(fix.pos.distance(&truth) < 1e-6, "got {} want {}", fix.pos, truth);
        prop_assert!(fix.rms_residual_m < 1e-6);
    }

    #[test]
    fn solution_moves_with_the_anchors(
        pts in arb_anchor_set(),
        truth in arb_point(-20.0, 20.0),
        noise in prop::collection::vec(-1.0f64..1.0, 6),
        shift in arb_point(-100.0, 100.0),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        let mut base = exact_ranges(&pts, &truth);
        for (a, n) in base.iter_mut().zip(&noise) {
            a.distance_m = (a.distance_m + n).max(0.1);
        }
        let Ok(fix) = trilaterate(&base) else { return Ok(()) };
        let (c, s) = (angle.cos(), angle.sin());
        let map = |p: &Point2D| Point2D::new(c * p.x - s * p.y + shift.x, s * p.x + c * p.y + shift.y);
        let moved: Vec<DistanceEstimate> = base
            .iter()
            .map(|a| DistanceEstimate { anchor: map(&a.anchor), ..a.clone() })
            .collect();
        let fix2 = trilaterate(&moved).unwrap();
        prop_assert!(fix2.pos.distance(&map(&fix.pos)) < 1e-5);
        prop_assert!((fix2.rms_residual_m - fix.rms_residual_m).abs() < 1e-6);
    }

    #[test]
    fn collinear_anchors_always_degenerate(
        origin in arb_point(-20.0, 20.0),
        dir in 0.0f64..std::f64::consts::TAU,
        ts in prop::collection::vec(-30.0f64..30.0, 3..6),
    ) {
        let pts: Vec<Point2D> = ts
            .iter()
            .map(|t| Point2D::new(origin.x + t * dir.cos(), origin.y + t * dir.sin()))
            .collect();
        let a = exact_ranges(&pts, &Point2D::new(100.0, 100.0));
        // Rounding leaves the smallest singular value near 1e-14, well under the tolerance.
        let collinear = matches!(trilaterate(&a), Err(PositioningError::DegenerateGeometry { .. }));
        prop_assert!(collinear);
    }

    #[test]
    fn proximity_picks_the_loudest(rssi in prop::collection::vec(-100.0f64..-30.0, 1..8)) {
        let samples: Vec<ProximitySample> = rssi
            .iter()
            .enumerate()
            .map(|(i, &r)| ProximitySample {
                sensor_id: format!("S{i}"),
                anchor: Point2D::new(i as f64, 0.0),
                zone: format!("Z{i}"),
                rssi_dbm: r,
            })
            .collect();
        let est = proximity_locate(&samples, &RadioParams::default(), 5).unwrap();
        let best = rssi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first_best = rssi.iter().position(|&r| r == best).unwrap();
        prop_assert_eq!(est.pos, Point2D::new(first_best as f64, 0.0));
        prop_assert_eq!(est.zone, Some(format!("Z{first_best}")));
        prop_assert_eq!(est.method, Method::Proximity);
        prop_assert_eq!(est.timestamp_ms, 5);
        prop_assert_eq!(est.accuracy_m, estimate_distance(best, &RadioParams::default()).unwrap());
    }

    #[test]
    fn distance_inversion_is_exact(d in 1.0f64..500.0, n in 1.5f64..4.0, p0 in -60.0f64..-20.0) {
        let radio = RadioParams { path_loss_exponent: n, p0_dbm: p0, ..RadioParams::default() };
        let back = estimate_distance(radio.mean_rssi(d), &radio).unwrap();
        prop_assert!((back - d).abs() / d < 1e-9);
    }

    #[test]
    fn exact_fingerprint_hits_its_cell(cell in 0usize..20) {
        let world = corner_world(5.0, 4.0, Point2D::new(1.0, 1.0), RadioParams {
            detect_threshold_dbm: -110.0,
            ..RadioParams::default()
        });
        let map = build_location_map(&world, 1.0).unwrap();
        let c = &map.cells()[cell];
        let v = SampleVector {
            values: map.sensors().iter().cloned().zip(c.rssi.iter().cloned()).collect(),
            timestamp_ms: 0,
        };
        let m = fingerprint_locate(&map, &v).unwrap();
        prop_assert_eq!(m.cell_index, cell);
        prop_assert_eq!(map.cell_index_at(&c.centroid), cell);
        prop_assert!(Rect::contains(&c.rect, &c.centroid));
    }
}
