use opencourier_core::geo::{haversine_m, LonLat, Polygon, EARTH_RADIUS_M};
use proptest::prelude::*;

/// Winding number around `p`; non-zero means inside.
fn winding(ring: &[LonLat], p: LonLat) -> i32 {
    let mut wn = 0;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        let side = (b.lon - a.lon) * (p.lat - a.lat) - (p.lon - a.lon) * (b.lat - a.lat);
        if a.lat <= p.lat {
            if b.lat > p.lat && side > 0.0 {
                wn += 1;
            }
        } else if b.lat <= p.lat && side < 0.0 {
            wn -= 1;
        }
    }
    wn
}

fn seg_dist(p: LonLat, a: LonLat, b: LonLat) -> f64 {
    let (dx, dy) = (b.lon - a.lon, b.lat - a.lat);
    let len2 = dx * dx + dy * dy;
    let t = if len2 == 0.0 { 0.0 } else { (((p.lon - a.lon) * dx + (p.lat - a.lat) * dy) / len2).clamp(0.0, 1.0) };
    ((p.lon - a.lon - t * dx).powi(2) + (p.lat - a.lat - t * dy).powi(2)).sqrt()
}

fn star(cx: f64, cy: f64, radii: &[f64], clockwise: bool) -> Vec<LonLat> {
    let n = radii.len();
    let mut ring: Vec<LonLat> = radii
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            LonLat::new(cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    if clockwise {
        ring.reverse();
    }
    ring.push(ring[0]);
    ring
}

proptest! {
    #[test]
    fn contains_agrees_with_winding_number(
        cx in -170.0f64..170.0, cy in -80.0f64..80.0,
        radii in prop::collection::vec(0.05f64..5.0, 3..12),
        clockwise in any::<bool>(),
        px in -6.0f64..6.0, py in -6.0f64..6.0,
    ) {
        let ring = star(cx, cy, &radii, clockwise);
        let p = LonLat::new(cx + px, cy + py);
        let near = ring.windows(2).any(|w| seg_dist(p, w[0], w[1]) < 1e-9);
        prop_assume!(!near);
        let poly = Polygon::new(vec![ring.clone()]);
        prop_assert_eq!(poly.contains(p), winding(&ring, p) != 0);
    }

    #[test]
    fn holes_are_outside(
        cx in -100.0f64..100.0, cy in -60.0f64..60.0,
        px in -2.0f64..2.0, py in -2.0f64..2.0,
    ) {
        let outer = star(cx, cy, &[2.0; 4], false);
        let hole = star(cx, cy, &[1.0; 4], true);
        let p = LonLat::new(cx + px, cy + py);
        let near = outer.windows(2).chain(hole.windows(2)).any(|w| seg_dist(p, w[0], w[1]) < 1e-9);
        prop_assume!(!near);
        let poly = Polygon::new(vec![outer.clone(), hole.clone()]);
        prop_assert_eq!(poly.contains(p), winding(&outer, p) != 0 && winding(&hole, p) == 0);
    }

    #[test]
    fn haversine_is_a_metric(
        a in (-180.0f64..180.0, -90.0f64..90.0),
        b in (-180.0f64..180.0, -90.0f64..90.0),
        c in (-180.0f64..180.0, -90.0f64..90.0),
    ) {
        let (a, b, c) = (LonLat::new(a.0, a.1), LonLat::new(b.0, b.1), LonLat::new(c.0, c.1));
        let ab = haversine_m(a, b);
        prop_assert!(haversine_m(a, a).abs() < 1e-6);
        prop_assert!((ab - haversine_m(b, a)).abs() < 1e-6);
        prop_assert!(ab <= std::f64::consts::PI * EARTH_RADIUS_M + 1e-6);
        prop_assert!(ab <= haversine_m(a, c) + haversine_m(c, b) + 1e-3);
    }

    #[test]
    fn haversine_matches_vector_angle(
        a in (-180.0f64..180.0, -89.0f64..89.0),
        b in (-180.0f64..180.0, -89.0f64..89.0),
    ) {
        let v = |lon: f64, lat: f64| {
            let (l, p) = (lon.to_radians(), lat.to_radians());
            [p.cos() * l.cos(), p.cos() * l.sin(), p.sin()]
        };
        let (x, y) = (v(a.0, a.1), v(b.0, b.1));
        let cross = [x[1] * y[2] - x[2] * y[1], x[2] * y[0] - x[0] * y[2], x[0] * y[1] - x[1] * y[0]];
        let sin = (cross[0].powi(2) + cross[1].powi(2) + cross[2].powi(2)).sqrt();
        let cos = x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
        let expected = EARTH_RADIUS_M * sin.atan2(cos);
        let got = haversine_m(LonLat::new(a.0, a.1), LonLat::new(b.0, b.1));
        prop_assert!((got - expected).abs() < 1e-3, "{} vs {}", got, expected);
    }
}

#[test]
fn one_degree_of_latitude() {
    let d = haversine_m(LonLat::new(0.0, 0.0), LonLat::new(0.0, 1.0));
    assert!((d - EARTH_RADIUS_M * std::f64::consts::PI / 180.0).abs() < 1e-6);
}
