//! Base-32 geohash codec.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const ALPHABET: &[u8; 32] = b"0123456789bcdefghjkmnpqrstuvwxyz";
pub const MAX_PRECISION: usize = 12;

#[derive(Debug, Error, PartialEq)]
pub enum GeohashError {
    #[error("coordinates out of range: ({lat}, {lon})")]
    OutOfRange { lat: f64, lon: f64 },
    #[error("precision {0} outside 1..=12")]
    Precision(usize),
    #[error("invalid geohash {0:?}")]
    Invalid(String),
}

fn decode_char(c: u8) -> Option<u8> {
    ALPHABET.iter().position(|&a| a == c).map(|p| p as u8)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Geohash(String);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl BBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.min_lat + self.max_lat) / 2.0, (self.min_lon + self.max_lon) / 2.0)
    }
}

pub fn encode(lat: f64, lon: f64, precision: usize) -> Result<Geohash, GeohashError> {
    if !(1..=MAX_PRECISION).contains(&precision) {
        return Err(GeohashError::Precision(precision));
    }
    if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
        return Err(GeohashError::OutOfRange { lat, lon });
    }
    let (mut lat_lo, mut lat_hi) = (-90.0, 90.0);
    let (mut lon_lo, mut lon_hi) = (-180.0, 180.0);
    let mut out = String::with_capacity(precision);
    let mut even = true;
    for _ in 0..precision {
        let mut idx = 0u8;
        for _ in 0..5 {
            let (v, lo, hi) = if even { (lon, &mut lon_lo, &mut lon_hi) } else { (lat, &mut lat_lo, &mut lat_hi) };
            let mid = (*lo + *hi) / 2.0;
            idx <<= 1;
            if v >= mid {
                idx |= 1;
                *lo = mid;
            } else {
                *hi = mid;
            }
            even = !even;
        }
        out.push(ALPHABET[idx as usize] as char);
    }
    Ok(Geohash(out))
}

impl Geohash {
    pub fn parse(code: &str) -> Result<Self, GeohashError> {
        if code.is_empty() || code.len() > MAX_PRECISION || !code.bytes().all(|c| decode_char(c).is_some()) {
            return Err(GeohashError::Invalid(code.to_string()));
        }
        Ok(Self(code.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn precision(&self) -> usize {
        self.0.len()
    }

    /// Prefix of length `precision`; codes already that short are returned unchanged.
    pub fn truncate(&self, precision: usize) -> Geohash {
        Geohash(self.0[..precision.clamp(1, self.0.len())].to_string())
    }

    pub fn is_prefix_of(&self, other: &Geohash) -> bool {
        other.0.starts_with(&self.0)
    }

    pub fn bbox(&self) -> BBox {
        let (mut lat_lo, mut lat_hi) = (-90.0, 90.0);
        let (mut lon_lo, mut lon_hi) = (-180.0, 180.0);
        let mut even = true;
        for c in self.0.bytes() {
            let idx = decode_char(c).unwrap_or(0);
            for bit in (0..5).rev() {
                let on = (idx >> bit) & 1 == 1;
                let (lo, hi) = if even { (&mut lon_lo, &mut lon_hi) } else { (&mut lat_lo, &mut lat_hi) };
                let mid = (*lo + *hi) / 2.0;
                if on {
                    *lo = mid;
                } else {
                    *hi = mid;
                }
                even = !even;
            }
        }
        BBox { min_lat: lat_lo, max_lat: lat_hi, min_lon: lon_lo, max_lon: lon_hi }
    }

    pub fn center(&self) -> (f64, f64) {
        self.bbox().center()
    }
}

impl fmt::Display for Geohash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Geohash {
    type Err = GeohashError;

    fn from_str(s: &str) -> Result<Self, GeohashError> {
        Self::parse(s)
    }
}

impl TryFrom<String> for Geohash {
    type Error = GeohashError;

    fn try_from(s: String) -> Result<Self, GeohashError> {
        Self::parse(&s)
    }
}

impl From<Geohash> for String {
    fn from(g: Geohash) -> String {
        g.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Produced by an independent reference implementation (pygeohash).
    const REFERENCE: [(f64, f64, usize, &str); 19] = [
        (57.64911, 10.40744, 11, "u4pruydqqvj"),
        (37.9838, 23.7275, 7, "swbb5ft"),
        (-33.8688, 151.2093, 9, "r3gx2f77b"),
        (0.0, 0.0, 5, "s0000"),
        (-90.0, -180.0, 12, "000000000000"),
        (89.99999, 179.99999, 12, "zzzzzzzzzy0s"),
        (51.5074, -0.1278, 6, "gcpvj0"),
        (-31.710102, -125.694297, 11, "34qeeg25q8e"),
        (-81.308444, 115.658745, 2, "n9"),
        (-24.175995, -159.120387, 9, "27wy7nuhd"),
        (-51.354327, -149.058996, 7, "0wy5b54"),
        (-77.426024, -147.343315, 7, "0dppx15"),
        (-79.360109, 23.56333, 4, "h9bu"),
        (23.512665, 29.878886, 1, "s"),
        (13.878531, -37.195029, 4, "e4mw"),
        (-81.615117, 129.048645, 5, "nc7z8"),
        (-14.554972, 14.646919, 10, "km6mjq3e1u"),
        (-34.473272, 113.805489, 3, "q9b"),
        (-71.449972, 25.633581, 4, "he61"),
    ];

    #[test]
    fn matches_reference_vectors() {
        for (lat, lon, p, code) in REFERENCE {
            assert_eq!(encode(lat, lon, p).unwrap().as_str(), code, "({lat}, {lon}) p{p}");
        }
    }

    #[test]
    fn decodes_reference_centers() {
        let (lat, lon) = Geohash::parse("gcpvj0").unwrap().center();
        assert!((lat - 51.50665283203125).abs() < 1e-12 && (lon + 0.1263427734375).abs() < 1e-12);
        let (lat, lon) = Geohash::parse("s0000").unwrap().center();
        assert!((lat - 0.02197265625).abs() < 1e-12 && (lon - 0.02197265625).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(encode(91.0, 0.0, 5), Err(GeohashError::OutOfRange { lat: 91.0, lon: 0.0 }));
        assert_eq!(encode(0.0, 0.0, 13), Err(GeohashError::Precision(13)));
        assert!(encode(f64::NAN, 0.0, 5).is_err());
        assert!(Geohash::parse("abc").is_err()); // 'a' is not in the alphabet
        assert!(Geohash::parse("").is_err());
        assert!(serde_json::from_str::<Geohash>("\"u4pi\"").is_err());
    }

    proptest! {
        #[test]
        fn prefix_property(lat in -90.0..=90.0f64, lon in -180.0..=180.0f64, a in 1usize..=12, b in 1usize..=12) {
            let (a, b) = (a.min(b), a.max(b));
            let long = encode(lat, lon, b).unwrap();
            prop_assert_eq!(encode(lat, lon, a).unwrap(), long.truncate(a));
        }

        #[test]
        fn decoded_cell_contains_the_point(lat in -90.0..=90.0f64, lon in -180.0..=180.0f64, p in 1usize..=12) {
            prop_assert!(encode(lat, lon, p).unwrap().bbox().contains(lat, lon));
        }

        #[test]
        fn decode_encode_is_a_fixed_point(code in "[0123456789bcdefghjkmnpqrstuvwxyz]{1,12}") {
            let g = Geohash::parse(&code).unwrap();
            let (lat, lon) = g.center();
            prop_assert_eq!(encode(lat, lon, g.precision()).unwrap(), g);
        }
    }
}
