//! WGS84 positions, GeoJSON polygons, point-in-polygon and great-circle
//! distance.
//!
//! Polygon tests operate on planar lon/lat degrees. Points lying on a ring
//! edge or vertex count as inside.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, ErrorCode, Result};

/// Mean Earth radius (IUGG), metres.
pub const EARTH_RADIUS_M: f64 = 6_371_008.8;
pub const METERS_PER_MILE: f64 = 1_609.344;

/// Collinearity tolerance for the on-boundary test, in squared degrees.
const BOUNDARY_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub const fn new(lon: f64, lat: f64) -> Self {
        Self { lon, lat }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lon.is_finite() || !(-180.0..=180.0).contains(&self.lon) {
            return Err(Error::field("lon", format!("{} outside [-180, 180]", self.lon)));
        }
        if !self.lat.is_finite() || !(-90.0..=90.0).contains(&self.lat) {
            return Err(Error::field("lat", format!("{} outside [-90, 90]", self.lat)));
        }
        Ok(())
    }
}

/// A geocoded point with its street address.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub lon: f64,
    pub lat: f64,
    #[serde(default)]
    pub address: String,
}

impl Place {
    pub fn new(lon: f64, lat: f64, address: impl Into<String>) -> Self {
        Self {
            lon,
            lat,
            address: address.into(),
        }
    }

    pub fn point(&self) -> LonLat {
        LonLat::new(self.lon, self.lat)
    }
}

/// Great-circle distance in metres (haversine formula).
pub fn haversine_m(a: LonLat, b: LonLat) -> f64 {
    let (phi1, phi2) = (a.lat.to_radians(), b.lat.to_radians());
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// A GeoJSON Polygon: an outer ring followed by zero or more holes.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub rings: Vec<Vec<LonLat>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RingPosition {
    Inside,
    Boundary,
    Outside,
}

impl Polygon {
    pub fn new(rings: Vec<Vec<LonLat>>) -> Self {
        Self { rings }
    }

    /// Axis-aligned rectangle, closed, counter-clockwise from the south-west corner.
    pub fn rectangle(west: f64, south: f64, east: f64, north: f64) -> Self {
        Self::new(vec![vec![
            LonLat::new(west, south),
            LonLat::new(east, south),
            LonLat::new(east, north),
            LonLat::new(west, north),
            LonLat::new(west, south),
        ]])
    }

    pub fn exterior(&self) -> &[LonLat] {
        self.rings.first().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn validate(&self) -> Result<()> {
        if self.rings.is_empty() {
            return Err(Error::new(ErrorCode::InvalidGeometry, "polygon has no rings"));
        }
        for (i, ring) in self.rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(Error::new(
                    ErrorCode::InvalidGeometry,
                    format!("ring {i} has {} positions, need at least 4", ring.len()),
                ));
            }
            if ring.first() != ring.last() {
                return Err(Error::new(ErrorCode::InvalidGeometry, format!("ring {i} is not closed")));
            }
            for p in ring {
                p.validate()
                    .map_err(|e| Error::new(ErrorCode::InvalidGeometry, format!("ring {i}: {}", e.message)))?;
            }
        }
        Ok(())
    }

    pub fn contains(&self, p: LonLat) -> bool {
        let Some((outer, holes)) = self.rings.split_first() else {
            return false;
        };
        if ring_position(outer, p) == RingPosition::Outside {
            return false;
        }
        // A hole's own edge belongs to the polygon.
        holes.iter().all(|h| ring_position(h, p) != RingPosition::Inside)
    }

    fn edges(&self) -> impl Iterator<Item = (LonLat, LonLat)> + '_ {
        self.rings.iter().flat_map(|r| r.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn intersects(&self, other: &Polygon) -> bool {
        if self.exterior().iter().any(|&p| other.contains(p)) || other.exterior().iter().any(|&p| self.contains(p)) {
            return true;
        }
        self.edges()
            .any(|(a, b)| other.edges().any(|(c, d)| segments_intersect(a, b, c, d)))
    }
}

fn cross(o: LonLat, a: LonLat, b: LonLat) -> f64 {
    (a.lon - o.lon) * (b.lat - o.lat) - (a.lat - o.lat) * (b.lon - o.lon)
}

fn on_segment(p: LonLat, a: LonLat, b: LonLat) -> bool {
    let len2 = (b.lon - a.lon).powi(2) + (b.lat - a.lat).powi(2);
    let c = cross(a, b, p);
    if c * c > BOUNDARY_EPS * BOUNDARY_EPS * len2.max(1.0) {
        return false;
    }
    let tol = 1e-12;
    p.lon >= a.lon.min(b.lon) - tol
        && p.lon <= a.lon.max(b.lon) + tol
        && p.lat >= a.lat.min(b.lat) - tol
        && p.lat <= a.lat.max(b.lat) + tol
}

/// Classic even-odd ray cast towards +lon, with an explicit boundary check first.
fn ring_position(ring: &[LonLat], p: LonLat) -> RingPosition {
    let mut inside = false;
    for w in ring.windows(2) {
        let (a, b) = (w[0], w[1]);
        if on_segment(p, a, b) {
            return RingPosition::Boundary;
        }
        if (a.lat > p.lat) != (b.lat > p.lat) {
            let x = a.lon + (p.lat - a.lat) * (b.lon - a.lon) / (b.lat - a.lat);
            if p.lon < x {
                inside = !inside;
            }
        }
    }
    if inside {
        RingPosition::Inside
    } else {
        RingPosition::Outside
    }
}

fn segments_intersect(a: LonLat, b: LonLat, c: LonLat, d: LonLat) -> bool {
    let d1 = cross(c, d, a);
    let d2 = cross(c, d, b);
    let d3 = cross(a, b, c);
    let d4 = cross(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0)) && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0)) {
        return true;
    }
    on_segment(a, c, d) || on_segment(b, c, d) || on_segment(c, a, b) || on_segment(d, a, b)
}

/// Region covered by an instance: a GeoJSON Polygon or MultiPolygon.
#[derive(Debug, Clone, PartialEq)]
pub enum Area {
    Polygon(Polygon),
    MultiPolygon(Vec<Polygon>),
}

impl Area {
    pub fn polygons(&self) -> &[Polygon] {
        match self {
            Area::Polygon(p) => std::slice::from_ref(p),
            Area::MultiPolygon(ps) => ps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.polygons().is_empty() {
            return Err(Error::new(ErrorCode::InvalidGeometry, "MultiPolygon has no members"));
        }
        self.polygons().iter().try_for_each(Polygon::validate)
    }

    pub fn contains(&self, p: LonLat) -> bool {
        self.polygons().iter().any(|poly| poly.contains(p))
    }

    pub fn intersects(&self, region: &Polygon) -> bool {
        self.polygons().iter().any(|poly| poly.intersects(region))
    }
}

impl From<Polygon> for Area {
    fn from(p: Polygon) -> Self {
        Area::Polygon(p)
    }
}

type Position = [f64; 2];

#[derive(Serialize, Deserialize)]
#[serde(tag = "type")]
enum GeoJson {
    Polygon { coordinates: Vec<Vec<Position>> },
    MultiPolygon { coordinates: Vec<Vec<Vec<Position>>> },
}

fn rings_to_json(p: &Polygon) -> Vec<Vec<Position>> {
    p.rings
        .iter()
        .map(|r| r.iter().map(|q| [q.lon, q.lat]).collect())
        .collect()
}

fn rings_from_json(coords: Vec<Vec<Position>>) -> Polygon {
    Polygon::new(
        coords
            .into_iter()
            .map(|r| r.into_iter().map(|[lon, lat]| LonLat::new(lon, lat)).collect())
            .collect(),
    )
}

impl Serialize for Polygon {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        GeoJson::Polygon {
            coordinates: rings_to_json(self),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Polygon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match GeoJson::deserialize(d)? {
            GeoJson::Polygon { coordinates } => Ok(rings_from_json(coordinates)),
            GeoJson::MultiPolygon { .. } => Err(serde::de::Error::custom("expected a GeoJSON Polygon")),
        }
    }
}

impl Serialize for Area {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Area::Polygon(p) => p.serialize(s),
            Area::MultiPolygon(ps) => GeoJson::MultiPolygon {
                coordinates: ps.iter().map(rings_to_json).collect(),
            }
            .serialize(s),
        }
    }
}

impl<'de> Deserialize<'de> for Area {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(match GeoJson::deserialize(d)? {
            GeoJson::Polygon { coordinates } => Area::Polygon(rings_from_json(coordinates)),
            GeoJson::MultiPolygon { coordinates } => {
                Area::MultiPolygon(coordinates.into_iter().map(rings_from_json).collect())
            }
        })
    }
}
