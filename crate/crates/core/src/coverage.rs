//! Bounding-box geometry and lawnmower (boustrophedon) coverage plans.
//!
//! Distances between geodetic points use the equirectangular approximation
//! with the cosine taken at the *first* point's latitude. The approximation is
//! not symmetric in its arguments; pass the southern point first when sizing
//! a box.
//!
//! Plans live in a local metric frame anchored at the box's south-west
//! corner: `x` grows eastward across the width `W`, `y` grows northward along
//! the length `L`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Mean Earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self> {
        if !lat.is_finite() || !lon.is_finite() {
            return Err(invalid("coordinates must be finite"));
        }
        if !(-90.0..=90.0).contains(&lat) {
            return Err(invalid(format!("latitude {lat} outside [-90, 90]")));
        }
        if !(-180.0..=180.0).contains(&lon) {
            return Err(invalid(format!("longitude {lon} outside [-180, 180]")));
        }
        Ok(Self { lat, lon })
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoBoundingBox {
    south_west: GeoPoint,
    north_east: GeoPoint,
}

impl GeoBoundingBox {
    /// Boxes crossing the antimeridian are rejected.
    pub fn new(south_west: GeoPoint, north_east: GeoPoint) -> Result<Self> {
        if north_east.lat <= south_west.lat {
            return Err(invalid("north-east latitude must exceed south-west latitude"));
        }
        if north_east.lon <= south_west.lon {
            return Err(invalid("north-east longitude must exceed south-west longitude"));
        }
        Ok(Self {
            south_west,
            north_east,
        })
    }

    pub fn south_west(&self) -> GeoPoint {
        self.south_west
    }

    pub fn north_east(&self) -> GeoPoint {
        self.north_east
    }

    pub fn contains(&self, p: GeoPoint) -> bool {
        (self.south_west.lat..=self.north_east.lat).contains(&p.lat)
            && (self.south_west.lon..=self.north_east.lon).contains(&p.lon)
    }
}

/// Metric frame of a bounding box, origin at its south-west corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin: GeoPoint,
    pub width_m: f64,
    pub length_m: f64,
}

impl LocalFrame {
    pub fn from_box(bbox: &GeoBoundingBox) -> Self {
        let sw = bbox.south_west;
        let ne = bbox.north_east;
        let east = GeoPoint { lat: sw.lat, lon: ne.lon };
        let north = GeoPoint { lat: ne.lat, lon: sw.lon };
        Self {
            origin: sw,
            width_m: geo_distance(sw, east),
            length_m: geo_distance(sw, north),
        }
    }

    /// Maps local meters back to degrees by inverting the distance
    /// approximation about the origin latitude.
    pub fn to_geo(&self, x: f64, y: f64) -> GeoPoint {
        let rad_to_deg = 180.0 / std::f64::consts::PI;
        let lat = self.origin.lat + y / EARTH_RADIUS_M * rad_to_deg;
        let lon = self.origin.lon
            + x / (EARTH_RADIUS_M * self.origin.lat.to_radians().cos()) * rad_to_deg;
        GeoPoint {
            lat: lat.clamp(-90.0, 90.0),
            lon: lon.clamp(-180.0, 180.0),
        }
    }

    pub fn contains_local(&self, x: f64, y: f64) -> bool {
        (0.0..=self.width_m).contains(&x) && (0.0..=self.length_m).contains(&y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Strips run south-north and are stacked west to east.
    #[default]
    Vertical,
    /// Strips run west-east and are stacked south to north.
    Horizontal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoveragePlan {
    pub strips: usize,
    pub strip_width_m: f64,
    pub orientation: Orientation,
    pub waypoints: Vec<(f64, f64)>,
    pub turn_distance_m: f64,
    pub total_distance_m: f64,
    pub width_m: f64,
    pub length_m: f64,
}

impl CoveragePlan {
    /// Length of the traced polyline, turns included.
    pub fn path_length(&self) -> f64 {
        self.waypoints
            .windows(2)
            .map(|s| ((s[1].0 - s[0].0).powi(2) + (s[1].1 - s[0].1).powi(2)).sqrt())
            .sum()
    }

    /// CSV rows `strip_index,x_m,y_m`, header included.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strip_index,x_m,y_m\n");
        for (i, (x, y)) in self.waypoints.iter().enumerate() {
            out.push_str(&format!("{},{x},{y}\n", i / 2));
        }
        out
    }
}

pub fn num_strips(width_m: f64, strip_width_m: f64) -> Result<usize> {
    if !(width_m > 0.0) || !(strip_width_m > 0.0) {
        return Err(invalid("width and strip width must be positive"));
    }
    let n = (width_m / strip_width_m).ceil();
    if !n.is_finite() {
        return Err(invalid("strip count overflows"));
    }
    Ok((n as usize).max(1))
}

/// Starting corner of each strip band.
pub fn strip_origins(n: usize, strip_width_m: f64, orientation: Orientation) -> Result<Vec<(f64, f64)>> {
    if n == 0 || !(strip_width_m > 0.0) {
        return Err(invalid("need n >= 1 and positive strip width"));
    }
    Ok((0..n)
        .map(|i| {
            let offset = i as f64 * strip_width_m;
            match orientation {
                Orientation::Vertical => (offset, 0.0),
                Orientation::Horizontal => (0.0, offset),
            }
        })
        .collect())
}

pub fn total_distance(n: usize, strip_length_m: f64, turn_distance_m: f64) -> Result<f64> {
    if n == 0 || !(strip_length_m > 0.0) || !(turn_distance_m >= 0.0) {
        return Err(invalid("need n >= 1, l > 0, d >= 0"));
    }
    Ok(n as f64 * strip_length_m + (n - 1) as f64 * turn_distance_m)
}

pub fn geo_distance(p1: GeoPoint, p2: GeoPoint) -> f64 {
    let d_lat = (p2.lat - p1.lat).to_radians();
    let d_lon = (p2.lon - p1.lon).to_radians();
    let east = p1.lat.to_radians().cos() * d_lon;
    EARTH_RADIUS_M * (d_lat * d_lat + east * east).sqrt()
}

/// Plans over a geodetic box. `turn_distance_m = None` uses the strip width.
pub fn plan_lawnmower(
    bbox: &GeoBoundingBox,
    strip_width_m: f64,
    orientation: Orientation,
    turn_distance_m: Option<f64>,
) -> Result<CoveragePlan> {
    let frame = LocalFrame::from_box(bbox);
    plan_in_frame(frame.width_m, frame.length_m, strip_width_m, orientation, turn_distance_m)
}

/// Plans over a `width_m` x `length_m` rectangle in local meters.
///
/// Each strip band `[origin, origin + w]` is traversed along its centerline,
/// clamped to the rectangle for the last band, so every point of the
/// rectangle lies within `w / 2` of the path.
pub fn plan_in_frame(
    width_m: f64,
    length_m: f64,
    strip_width_m: f64,
    orientation: Orientation,
    turn_distance_m: Option<f64>,
) -> Result<CoveragePlan> {
    if !(width_m > 0.0) || !(length_m > 0.0) {
        return Err(invalid("box dimensions must be positive"));
    }
    let (across, along) = match orientation {
        Orientation::Vertical => (width_m, length_m),
        Orientation::Horizontal => (length_m, width_m),
    };
    if !(strip_width_m > 0.0) || strip_width_m > across {
        return Err(invalid(format!(
            "strip width {strip_width_m} must be in (0, {across}]"
        )));
    }
    let d = turn_distance_m.unwrap_or(strip_width_m);
    if !(d >= 0.0) {
        return Err(invalid("turn distance must be non-negative"));
    }
    let n = num_strips(across, strip_width_m)?;
    let origins = strip_origins(n, strip_width_m, orientation)?;

    let mut waypoints = Vec::with_capacity(2 * n);
    for (i, (ox, oy)) in origins.into_iter().enumerate() {
        let (start, end) = if i % 2 == 0 { (0.0, along) } else { (along, 0.0) };
        match orientation {
            Orientation::Vertical => {
                let x = (ox + strip_width_m / 2.0).min(width_m);
                waypoints.push((x, start));
                waypoints.push((x, end));
            }
            Orientation::Horizontal => {
                let y = (oy + strip_width_m / 2.0).min(length_m);
                waypoints.push((start, y));
                waypoints.push((end, y));
            }
        }
    }

    Ok(CoveragePlan {
        strips: n,
        strip_width_m,
        orientation,
        waypoints,
        turn_distance_m: d,
        total_distance_m: total_distance(n, along, d)?,
        width_m,
        length_m,
    })
}
