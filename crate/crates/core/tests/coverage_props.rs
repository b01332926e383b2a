mod common;

use common::worst_grid_gap;
use nppsim::coverage::{
    geo_distance, num_strips, plan_in_frame, plan_lawnmower, total_distance, GeoBoundingBox, GeoPoint, LocalFrame,
    Orientation,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPS: f64 = 1e-9;

#[test]
fn random_boxes_are_fully_covered() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FE);
    for case in 0..20 {
        let width: f64 = rng.random_range(2.0..40.0);
        let length: f64 = rng.random_range(2.0..40.0);
        let orientation = if case % 2 == 0 {
            Orientation::Vertical
        } else {
            Orientation::Horizontal
        };
        let across = if orientation == Orientation::Vertical { width } else { length };
        let w = rng.random_range(0.3..across.min(8.0));
        let plan = plan_in_frame(width, length, w, orientation, None).unwrap();
        let gap = worst_grid_gap(width, length, 0.25, &plan.waypoints);
        assert!(
            gap <= w / 2.0 + EPS,
            "case {case}: {width}x{length} w={w} {orientation:?} gap {gap}"
        );
        for &(x, y) in &plan.waypoints {
            assert!((-EPS..=width + EPS).contains(&x) && (-EPS..=length + EPS).contains(&y));
        }
    }
}

#[test]
fn geodetic_boxes_are_fully_covered() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..5 {
        let lat = rng.random_range(-60.0..60.0);
        let lon = rng.random_range(-170.0..170.0);
        let sw = GeoPoint::new(lat, lon).unwrap();
        let ne = GeoPoint::new(lat + rng.random_range(0.0001..0.0004), lon + rng.random_range(0.0001..0.0004)).unwrap();
        let bbox = GeoBoundingBox::new(sw, ne).unwrap();
        let frame = LocalFrame::from_box(&bbox);
        let plan = plan_lawnmower(&bbox, 3.0, Orientation::Vertical, None).unwrap();
        let gap = worst_grid_gap(frame.width_m, frame.length_m, 0.25, &plan.waypoints);
        assert!(gap <= 1.5 + EPS, "gap {gap}");
        for &(x, y) in &plan.waypoints {
            assert!(bbox.contains(frame.to_geo(x, y)));
        }
    }
}

proptest! {
    #[test]
    fn strip_count_is_the_ceiling(width in 0.1f64..500.0, w in 0.05f64..50.0) {
        let n = num_strips(width, w).unwrap();
        prop_assert!(n >= 1);
        prop_assert!(n as f64 * w >= width - 1e-9 * width);
        prop_assert!((n as f64 - 1.0) * w < width);
    }

    #[test]
    fn distance_is_strips_plus_turns(n in 1usize..200, l in 0.0f64..500.0, d in 0.0f64..20.0) {
        let got = total_distance(n, l, d).unwrap();
        let expected = n as f64 * l + (n as f64 - 1.0) * d;
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn geo_distance_symmetric_and_zero_on_self(
        lat1 in -89.0f64..89.0, lon1 in -179.0f64..179.0,
        lat2 in -89.0f64..89.0, lon2 in -179.0f64..179.0,
    ) {
        let a = GeoPoint::new(lat1, lon1).unwrap();
        let b = GeoPoint::new(lat2, lon2).unwrap();
        prop_assert_eq!(geo_distance(a, a), 0.0);
        prop_assert!(geo_distance(a, b) >= 0.0);
        // The equirectangular form scales the east component by cos(lat1),
        // so it is symmetric only when the latitudes agree.
        let c = GeoPoint::new(lat1, lon2).unwrap();
        prop_assert!((geo_distance(a, c) - geo_distance(c, a)).abs() <= 1e-9 * geo_distance(a, c).max(1.0));
    }
}

#[test]
fn one_degree_of_latitude() {
    let d = geo_distance(GeoPoint::new(0.0, 0.0).unwrap(), GeoPoint::new(1.0, 0.0).unwrap());
    assert!((d - 111_194.927).abs() < 1e-3, "{d}");
}

#[test]
fn worked_examples() {
    assert_eq!(num_strips(10.0, 3.0).unwrap(), 4);
    assert_eq!(total_distance(4, 10.0, 3.0).unwrap(), 49.0);
    assert_eq!(num_strips(10.0, 10.0).unwrap(), 1);
    assert!(num_strips(10.0, 0.0).is_err());
    assert!(num_strips(-1.0, 1.0).is_err());
}
