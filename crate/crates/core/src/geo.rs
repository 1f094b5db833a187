//! Great-circle distances.

/// Mean Earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

/// A latitude/longitude pair in degrees.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub fn new(lat: f64, lon: f64) -> Self {
        LatLon { lat, lon }
    }
}

/// Haversine distance in kilometres.
pub fn haversine(a: LatLon, b: LatLon) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = b.lon.to_radians() - a.lon.to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Chord length between unit vectors, converted to arc length.
    fn chord_oracle(a: LatLon, b: LatLon) -> f64 {
        let v = |p: LatLon| {
            let (la, lo) = (p.lat.to_radians(), p.lon.to_radians());
            [la.cos() * lo.cos(), la.cos() * lo.sin(), la.sin()]
        };
        let (p, q) = (v(a), v(b));
        let chord = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
        2.0 * EARTH_RADIUS_KM * (chord / 2.0).asin()
    }

    #[test]
    fn identical_points() {
        let p = LatLon::new(40.7198, -74.0026);
        assert_eq!(haversine(p, p), 0.0);
    }

    #[test]
    fn one_degree_of_longitude_on_equator() {
        let d = haversine(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0));
        let expected = 2.0 * std::f64::consts::PI * EARTH_RADIUS_KM / 360.0;
        assert!((d - 111.195).abs() < 1e-3, "{d}");
        assert!((d - expected).abs() < 1e-9);
        assert!((d - chord_oracle(LatLon::new(0.0, 0.0), LatLon::new(0.0, 1.0))).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn symmetric_and_matches_chord(
            la1 in -90.0f64..90.0, lo1 in -180.0f64..180.0,
            la2 in -90.0f64..90.0, lo2 in -180.0f64..180.0,
        ) {
            let (a, b) = (LatLon::new(la1, lo1), LatLon::new(la2, lo2));
            prop_assert_eq!(haversine(a, b), haversine(b, a));
            prop_assert!((haversine(a, b) - chord_oracle(a, b)).abs() < 1e-6);
        }
    }
}
