//! Spherical geometry helpers shared by the location and aggregation code.

use serde::{Deserialize, Serialize};

/// Mean Earth radius in meters (WGS-84 authalic sphere).
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatLon {
    pub lat: f64,
    pub lon: f64,
}

impl LatLon {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }

    pub fn distance_m(&self, other: &LatLon) -> f64 {
        haversine_m(self.lat, self.lon, other.lat, other.lon)
    }
}

/// Great-circle distance in meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let phi1 = lat1.to_radians();
    let phi2 = lat2.to_radians();
    let dphi = (lat2 - lat1).to_radians();
    let dlambda = (lon2 - lon1).to_radians();
    let a = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().min(1.0).asin()
}

/// Arithmetic centroid of a small point set. Only meaningful for clusters a
/// few hundred meters wide away from the antimeridian.
pub fn centroid(points: impl IntoIterator<Item = LatLon>) -> Option<LatLon> {
    let mut n = 0usize;
    let (mut lat, mut lon) = (0.0, 0.0);
    for p in points {
        lat += p.lat;
        lon += p.lon;
        n += 1;
    }
    (n > 0).then(|| LatLon::new(lat / n as f64, lon / n as f64))
}

/// Moves a point by the given north/east offsets in meters (local tangent plane).
pub fn offset_m(p: LatLon, north_m: f64, east_m: f64) -> LatLon {
    let dlat = north_m / EARTH_RADIUS_M;
    let dlon = east_m / (EARTH_RADIUS_M * p.lat.to_radians().cos());
    LatLon::new(p.lat + dlat.to_degrees(), p.lon + dlon.to_degrees())
}

/// Uniform grid bucketing in degrees, used as a coarse neighbor pre-filter
/// before exact haversine checks.
#[derive(Debug, Clone)]
pub(crate) struct GridIndex {
    cell_lat: f64,
    cell_lon: f64,
    cells: std::collections::HashMap<(i64, i64), Vec<usize>>,
}

impl GridIndex {
    /// `radius_m` is the largest query radius that will be used.
    pub(crate) fn new(points: &[LatLon], radius_m: f64) -> Self {
        let max_abs_lat = points.iter().map(|p| p.lat.abs()).fold(0.0_f64, f64::max).min(89.0);
        let cell_lat = (radius_m / EARTH_RADIUS_M).to_degrees().max(1e-9);
        let cell_lon = cell_lat / max_abs_lat.to_radians().cos();
        let mut cells: std::collections::HashMap<(i64, i64), Vec<usize>> = Default::default();
        for (i, p) in points.iter().enumerate() {
            let key = ((p.lat / cell_lat).floor() as i64, (p.lon / cell_lon).floor() as i64);
            cells.entry(key).or_default().push(i);
        }
        Self { cell_lat, cell_lon, cells }
    }

    /// Candidate indices in the 3x3 block of cells around `p`, in ascending order.
    pub(crate) fn candidates(&self, p: LatLon) -> Vec<usize> {
        let ci = (p.lat / self.cell_lat).floor() as i64;
        let cj = (p.lon / self.cell_lon).floor() as i64;
        let mut out = Vec::new();
        for di in -1..=1 {
            for dj in -1..=1 {
                if let Some(v) = self.cells.get(&(ci + di, cj + dj)) {
                    out.extend_from_slice(v);
                }
            }
        }
        out.sort_unstable();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn haversine_known_distance() {
        // one degree of latitude on the mean sphere
        let d = haversine_m(0.0, 0.0, 1.0, 0.0);
        assert!((d - 111_195.08).abs() < 1.0, "{d}");
        assert_eq!(haversine_m(10.0, 20.0, 10.0, 20.0), 0.0);
    }

    #[test]
    fn offset_round_trip() {
        let p = LatLon::new(40.6, 22.9);
        let q = offset_m(p, 30.0, 40.0);
        assert!((p.distance_m(&q) - 50.0).abs() < 0.05);
    }

    #[test]
    fn grid_candidates_cover_radius() {
        let base = LatLon::new(51.5, -0.12);
        let pts: Vec<LatLon> = (0..50).map(|i| offset_m(base, i as f64 * 7.0, -(i as f64) * 3.0)).collect();
        let idx = GridIndex::new(&pts, 50.0);
        for (i, p) in pts.iter().enumerate() {
            let cands = idx.candidates(*p);
            for (j, q) in pts.iter().enumerate() {
                if p.distance_m(q) <= 50.0 {
                    assert!(cands.contains(&j), "{i} misses {j}");
                }
            }
        }
    }
}
