//! Street geometry: haversine lengths, interval sampling of capture points
//! along segment polylines, and GeoJSON input/output.
//!
//! Coordinates are WGS84 `(lon, lat)` in degrees throughout. Positions between
//! vertices are interpolated linearly in `(lon, lat)`; distances along the
//! polyline are measured with the haversine formula.

use std::collections::HashMap;
use std::fmt;

use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::pipeline::SegmentScore;

/// Mean Earth radius used by every distance computation in this crate.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default spacing between consecutive capture points.
pub const DEFAULT_INTERVAL_M: f64 = 200.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("coordinate out of range: lon={lon}, lat={lat}")]
    InvalidCoordinate { lon: f64, lat: f64 },
    #[error("segment {0} has fewer than two vertices")]
    TooFewVertices(String),
    #[error("sampling interval must be positive and finite, got {0}")]
    InvalidInterval(f64),
    #[error("score references unknown segment {0}")]
    UnknownSegment(String),
    #[error("bin edges must be finite, strictly increasing and at least two: {0:?}")]
    InvalidBins(Vec<f64>),
    #[error("malformed street network: {0}")]
    MalformedNetwork(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LonLat {
    pub lon: f64,
    pub lat: f64,
}

impl LonLat {
    pub fn new(lon: f64, lat: f64) -> Result<Self, GeoError> {
        let p = LonLat { lon, lat };
        if p.is_valid() {
            Ok(p)
        } else {
            Err(GeoError::InvalidCoordinate { lon, lat })
        }
    }

    pub fn is_valid(&self) -> bool {
        self.lon.is_finite()
            && self.lat.is_finite()
            && (-180.0..=180.0).contains(&self.lon)
            && (-90.0..=90.0).contains(&self.lat)
    }
}

impl From<(f64, f64)> for LonLat {
    fn from((lon, lat): (f64, f64)) -> Self {
        LonLat { lon, lat }
    }
}

impl fmt::Display for LonLat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lon, self.lat)
    }
}

/// Great-circle distance in meters on a sphere of radius [`EARTH_RADIUS_M`].
pub fn haversine_m(a: LonLat, b: LonLat) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.lon - a.lon).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, degrees clockwise from north in `[0, 360)`.
pub fn bearing_deg(a: LonLat, b: LonLat) -> f64 {
    let (lat1, lat2) = (a.lat.to_radians(), b.lat.to_radians());
    let dlon = (b.lon - a.lon).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    normalize_deg(y.atan2(x).to_degrees())
}

fn normalize_deg(d: f64) -> f64 {
    let r = d.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreetSegment {
    segment_id: String,
    polyline: Vec<LonLat>,
    /// cumulative haversine distance at each vertex; first is 0
    cumulative_m: Vec<f64>,
}

impl StreetSegment {
    pub fn new(segment_id: impl Into<String>, polyline: Vec<LonLat>) -> Result<Self, GeoError> {
        let segment_id = segment_id.into();
        if polyline.len() < 2 {
            return Err(GeoError::TooFewVertices(segment_id));
        }
        if let Some(bad) = polyline.iter().find(|p| !p.is_valid()) {
            return Err(GeoError::InvalidCoordinate { lon: bad.lon, lat: bad.lat });
        }
        let mut cumulative_m = Vec::with_capacity(polyline.len());
        let mut acc = 0.0;
        cumulative_m.push(acc);
        for w in polyline.windows(2) {
            acc += haversine_m(w[0], w[1]);
            cumulative_m.push(acc);
        }
        Ok(StreetSegment { segment_id, polyline, cumulative_m })
    }

    pub fn segment_id(&self) -> &str {
        &self.segment_id
    }

    pub fn polyline(&self) -> &[LonLat] {
        &self.polyline
    }

    pub fn length_m(&self) -> f64 {
        *self.cumulative_m.last().expect("at least two vertices")
    }

    /// Position and local edge bearing at `offset_m` along the polyline.
    ///
    /// The offset is clamped to `[0, length]`. A point sitting exactly on an
    /// interior vertex takes the bearing of the edge that starts there.
    pub fn locate(&self, offset_m: f64) -> (LonLat, f64) {
        let offset = offset_m.clamp(0.0, self.length_m());
        let last_edge = self.polyline.len() - 2;
        // index of the first edge whose end lies beyond the offset, skipping
        // zero-length edges so the bearing is always defined
        let mut edge = last_edge;
        for i in 0..=last_edge {
            let (start, end) = (self.cumulative_m[i], self.cumulative_m[i + 1]);
            if end > start && offset < end {
                edge = i;
                break;
            }
        }
        while edge > 0 && self.cumulative_m[edge + 1] <= self.cumulative_m[edge] {
            edge -= 1;
        }
        let (a, b) = (self.polyline[edge], self.polyline[edge + 1]);
        let (start, end) = (self.cumulative_m[edge], self.cumulative_m[edge + 1]);
        let t = if end > start { ((offset - start) / (end - start)).clamp(0.0, 1.0) } else { 0.0 };
        let pos = LonLat { lon: a.lon + t * (b.lon - a.lon), lat: a.lat + t * (b.lat - a.lat) };
        (pos, bearing_deg(a, b))
    }
}

/// Which side of the street the camera faces, relative to travel direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CameraSide {
    /// +90° from the local bearing.
    #[default]
    Right,
    /// −90° from the local bearing.
    Left,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplePoint {
    pub point_id: String,
    pub segment_id: String,
    pub offset_m: f64,
    pub position: LonLat,
    pub heading_deg: f64,
}

/// Capture points at offsets `0, interval, 2·interval, …` not exceeding the
/// segment length, each with a camera heading perpendicular to the street.
///
/// A zero-length polyline yields only its start point with heading 0.
pub fn sample_points(
    seg: &StreetSegment,
    interval_m: f64,
    side: CameraSide,
) -> Result<Vec<SamplePoint>, GeoError> {
    if !(interval_m.is_finite() && interval_m > 0.0) {
        return Err(GeoError::InvalidInterval(interval_m));
    }
    let length = seg.length_m();
    if length <= 0.0 {
        return Ok(vec![SamplePoint {
            point_id: point_id(seg.segment_id(), 0),
            segment_id: seg.segment_id.clone(),
            offset_m: 0.0,
            position: seg.polyline[0],
            heading_deg: 0.0,
        }]);
    }
    let count = (length / interval_m).floor() as usize + 1;
    let turn = match side {
        CameraSide::Right => 90.0,
        CameraSide::Left => -90.0,
    };
    Ok((0..count)
        .map(|i| {
            let offset_m = i as f64 * interval_m;
            let (position, bearing) = seg.locate(offset_m);
            SamplePoint {
                point_id: point_id(seg.segment_id(), i),
                segment_id: seg.segment_id.clone(),
                offset_m,
                position,
                heading_deg: normalize_deg(bearing + turn),
            }
        })
        .collect())
}

fn point_id(segment_id: &str, index: usize) -> String {
    format!("{segment_id}-p{index:04}")
}

/// Capture points as CSV: `point_id,segment_id,offset_m,lon,lat,heading_deg`.
pub fn points_csv(points: &[SamplePoint]) -> String {
    let mut out = String::from("point_id,segment_id,offset_m,lon,lat,heading_deg\n");
    for p in points {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            p.point_id,
            p.segment_id,
            round_significant(p.offset_m, 9),
            round_significant(p.position.lon, 9),
            round_significant(p.position.lat, 9),
            round_significant(p.heading_deg, 9)
        ));
    }
    out
}

/// Parse a GeoJSON FeatureCollection of LineStrings carrying a `segment_id` property.
pub fn parse_network(geojson: &str) -> Result<Vec<StreetSegment>, GeoError> {
    let malformed = |m: &str| GeoError::MalformedNetwork(m.to_string());
    let doc: Value = serde_json::from_str(geojson).map_err(|e| GeoError::MalformedNetwork(e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(malformed("top-level object is not a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| malformed("missing features array"))?;
    let mut segments = Vec::with_capacity(features.len());
    for (i, feat) in features.iter().enumerate() {
        let id = match feat.pointer("/properties/segment_id") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(GeoError::MalformedNetwork(format!("feature {i} lacks a segment_id property"))),
        };
        let geom = feat.get("geometry").ok_or_else(|| malformed("feature without geometry"))?;
        if geom.get("type").and_then(Value::as_str) != Some("LineString") {
            return Err(GeoError::MalformedNetwork(format!("segment {id}: geometry is not a LineString")));
        }
        let coords = geom
            .get("coordinates")
            .and_then(Value::as_array)
            .ok_or_else(|| GeoError::MalformedNetwork(format!("segment {id}: missing coordinates")))?;
        let mut polyline = Vec::with_capacity(coords.len());
        for c in coords {
            let pair = c.as_array().filter(|p| p.len() >= 2);
            let (lon, lat) = match pair.map(|p| (p[0].as_f64(), p[1].as_f64())) {
                Some((Some(lon), Some(lat))) => (lon, lat),
                _ => return Err(GeoError::MalformedNetwork(format!("segment {id}: bad coordinate {c}"))),
            };
            polyline.push(LonLat::new(lon, lat)?);
        }
        segments.push(StreetSegment::new(id, polyline)?);
    }
    Ok(segments)
}

/// Serialize segments as a GeoJSON FeatureCollection (used for fixtures and round trips).
pub fn network_to_geojson(segments: &[StreetSegment]) -> String {
    let mut sorted: Vec<&StreetSegment> = segments.iter().collect();
    sorted.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    let features: Vec<Value> = sorted
        .iter()
        .map(|s| {
            json!({
                "type": "Feature",
                "properties": { "segment_id": s.segment_id },
                "geometry": { "type": "LineString", "coordinates": line_coords(&s.polyline) },
            })
        })
        .collect();
    let doc = json!({ "type": "FeatureCollection", "features": features });
    serde_json::to_string_pretty(&doc).expect("serializable") + "\n"
}

/// Half-open bins `[e0, e1), [e1, e2), …, [e(n-1), en]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct BinSpec {
    edges: Vec<f64>,
}

impl BinSpec {
    pub fn new(edges: Vec<f64>) -> Result<Self, GeoError> {
        let ok = edges.len() >= 2
            && edges.iter().all(|e| e.is_finite())
            && edges.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(BinSpec { edges })
        } else {
            Err(GeoError::InvalidBins(edges))
        }
    }

    /// Integer-point bins over the 1–4 quality scale.
    pub fn quality_default() -> Self {
        BinSpec { edges: vec![1.0, 2.0, 3.0, 4.0] }
    }

    /// Quartile bins over the `[0, 1]` continuity share.
    pub fn continuity_default() -> Self {
        BinSpec { edges: vec![0.0, 0.25, 0.5, 0.75, 1.0] }
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn n_bins(&self) -> usize {
        self.edges.len() - 1
    }

    /// Bin index for `v`, or `None` when `v` falls outside every bin.
    pub fn assign(&self, v: f64) -> Option<usize> {
        let last = self.n_bins() - 1;
        if v == self.edges[last + 1] {
            return Some(last);
        }
        self.edges.windows(2).position(|w| w[0] <= v && v < w[1])
    }
}

/// Bin specifications for the two exported score properties.
#[derive(Debug, Clone, PartialEq)]
pub struct MapBins {
    pub quality: BinSpec,
    pub continuity: BinSpec,
}

impl Default for MapBins {
    fn default() -> Self {
        MapBins { quality: BinSpec::quality_default(), continuity: BinSpec::continuity_default() }
    }
}

/// Build the scoring map: one LineString feature per scored segment, ordered by segment id.
pub fn export_geojson(
    scores: &[SegmentScore],
    segments: &[StreetSegment],
    bins: &MapBins,
) -> Result<String, GeoError> {
    let by_id: HashMap<&str, &StreetSegment> = segments.iter().map(|s| (s.segment_id(), s)).collect();
    let mut ordered: Vec<&SegmentScore> = scores.iter().collect();
    ordered.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));

    let mut features = Vec::with_capacity(ordered.len());
    for score in ordered {
        let seg = by_id
            .get(score.segment_id.as_str())
            .ok_or_else(|| GeoError::UnknownSegment(score.segment_id.clone()))?;
        let mut props = Map::new();
        props.insert("segment_id".into(), Value::String(score.segment_id.clone()));
        props.insert("quality_mean".into(), opt_number(score.quality_mean));
        props.insert("continuity_share".into(), opt_number(score.continuity_share));
        props.insert("n_images".into(), Value::from(score.n_images));
        let qbin = score.quality_mean.and_then(|q| bins.quality.assign(q));
        let cbin = score.continuity_share.and_then(|c| bins.continuity.assign(c));
        props.insert("quality_bin".into(), qbin.map_or(Value::Null, Value::from));
        props.insert("continuity_bin".into(), cbin.map_or(Value::Null, Value::from));
        features.push(json!({
            "type": "Feature",
            "properties": Value::Object(props),
            "geometry": { "type": "LineString", "coordinates": line_coords(seg.polyline()) },
        }));
    }
    let doc = json!({ "type": "FeatureCollection", "features": features });
    Ok(serde_json::to_string_pretty(&doc).expect("serializable") + "\n")
}

fn line_coords(polyline: &[LonLat]) -> Value {
    Value::Array(
        polyline
            .iter()
            .map(|p| Value::Array(vec![number(p.lon), number(p.lat)]))
            .collect(),
    )
}

fn opt_number(v: Option<f64>) -> Value {
    v.map_or(Value::Null, number)
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(round_significant(v, 9)).map_or(Value::Null, Value::Number)
}

/// Round to `digits` significant decimal digits. The shortest round-trip
/// representation of the result never needs more digits than that.
pub fn round_significant(v: f64, digits: usize) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{:.*e}", digits.saturating_sub(1), v).parse().unwrap_or(v)
}
