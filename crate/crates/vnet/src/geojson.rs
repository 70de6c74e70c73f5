//! Minimal GeoJSON model: just the object shapes the pipeline reads and
//! writes, plus a structural validator.

use log::warn;
use serde_json::{json, Map, Value};
use vnet_core::flow::FlowMatrix;
use vnet_core::model::PovertyPrediction;
use vnet_core::spatial::polygon_centroid;
use vnet_core::{LatLon, Level, SpatialHierarchy};

use crate::error::{Error, Result};

/// `[lon, lat]`.
pub type Position = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub enum Geometry {
    Point(Position),
    LineString(Vec<Position>),
    Polygon(Vec<Vec<Position>>),
    MultiPolygon(Vec<Vec<Vec<Position>>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Feature {
    pub geometry: Option<Geometry>,
    pub properties: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureCollection {
    pub features: Vec<Feature>,
}

pub fn position(p: LatLon) -> Position {
    [p.lon, p.lat]
}

impl Geometry {
    fn type_name(&self) -> &'static str {
        match self {
            Geometry::Point(_) => "Point",
            Geometry::LineString(_) => "LineString",
            Geometry::Polygon(_) => "Polygon",
            Geometry::MultiPolygon(_) => "MultiPolygon",
        }
    }

    fn coordinates(&self) -> Value {
        match self {
            Geometry::Point(p) => json!(p),
            Geometry::LineString(l) => json!(l),
            Geometry::Polygon(p) => json!(p),
            Geometry::MultiPolygon(m) => json!(m),
        }
    }

    /// Polygons as lists of rings, for area-weighted centroids.
    pub fn polygons(&self) -> Vec<Vec<Vec<LatLon>>> {
        let ring = |r: &Vec<Position>| r.iter().map(|p| LatLon { lat: p[1], lon: p[0] }).collect();
        match self {
            Geometry::Polygon(p) => vec![p.iter().map(ring).collect()],
            Geometry::MultiPolygon(m) => m.iter().map(|p| p.iter().map(ring).collect()).collect(),
            _ => Vec::new(),
        }
    }

    pub fn is_areal(&self) -> bool {
        matches!(self, Geometry::Polygon(_) | Geometry::MultiPolygon(_))
    }
}

impl Feature {
    pub fn unit_id(&self) -> Option<&str> {
        self.properties.get("unit_id").and_then(Value::as_str)
    }
}

impl FeatureCollection {
    pub fn to_value(&self) -> Value {
        let features: Vec<Value> = self
            .features
            .iter()
            .map(|f| {
                json!({
                    "type": "Feature",
                    "geometry": f.geometry.as_ref().map_or(Value::Null, |g| json!({
                        "type": g.type_name(),
                        "coordinates": g.coordinates(),
                    })),
                    "properties": f.properties,
                })
            })
            .collect();
        json!({ "type": "FeatureCollection", "features": features })
    }

    pub fn to_string_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_value()).expect("values serialize");
        s.push('\n');
        s
    }

    /// Parse and validate a FeatureCollection document.
    pub fn parse(text: &str) -> std::result::Result<Self, String> {
        let value: Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
        let problems = validate(&value);
        if let Some(first) = problems.first() {
            return Err(format!("{first} ({} problem(s))", problems.len()));
        }
        Ok(Self::from_valid(&value))
    }

    fn from_valid(value: &Value) -> Self {
        let features = value["features"]
            .as_array()
            .expect("validated")
            .iter()
            .map(|f| Feature {
                geometry: match &f["geometry"] {
                    Value::Null => None,
                    g => Some(geometry_from_valid(g)),
                },
                properties: f["properties"].as_object().cloned().unwrap_or_default(),
            })
            .collect();
        FeatureCollection { features }
    }
}

fn pos(v: &Value) -> Position {
    let a = v.as_array().expect("validated");
    [a[0].as_f64().expect("validated"), a[1].as_f64().expect("validated")]
}

fn list<T>(v: &Value, f: impl Fn(&Value) -> T) -> Vec<T> {
    v.as_array().expect("validated").iter().map(f).collect()
}

fn geometry_from_valid(g: &Value) -> Geometry {
    let c = &g["coordinates"];
    match g["type"].as_str().expect("validated") {
        "Point" => Geometry::Point(pos(c)),
        "LineString" => Geometry::LineString(list(c, pos)),
        "Polygon" => Geometry::Polygon(list(c, |r| list(r, pos))),
        _ => Geometry::MultiPolygon(list(c, |p| list(p, |r| list(r, pos)))),
    }
}

/// Structural problems of a FeatureCollection: type members, coordinate
/// arity, linear-ring closure and length. Empty when valid.
pub fn validate(value: &Value) -> Vec<String> {
    let mut problems = Vec::new();
    if value["type"] != "FeatureCollection" {
        problems.push("root: type is not \"FeatureCollection\"".into());
    }
    let Some(features) = value["features"].as_array() else {
        problems.push("root: features is not an array".into());
        return problems;
    };
    for (k, f) in features.iter().enumerate() {
        let at = format!("features[{k}]");
        if f["type"] != "Feature" {
            problems.push(format!("{at}: type is not \"Feature\""));
        }
        if !matches!(f.get("properties"), Some(Value::Object(_) | Value::Null)) {
            problems.push(format!("{at}: properties must be an object or null"));
        }
        match f.get("geometry") {
            Some(Value::Null) => {}
            Some(g) => validate_geometry(g, &at, &mut problems),
            None => problems.push(format!("{at}: geometry member missing")),
        }
    }
    problems
}

fn validate_geometry(g: &Value, at: &str, problems: &mut Vec<String>) {
    let c = &g["coordinates"];
    match g["type"].as_str() {
        Some("Point") => check_position(c, at, problems),
        Some("LineString") => check_line(c, 2, at, problems),
        Some("Polygon") => check_polygon(c, at, problems),
        Some("MultiPolygon") => match c.as_array() {
            Some(polys) => {
                for (k, p) in polys.iter().enumerate() {
                    check_polygon(p, &format!("{at}.polygon[{k}]"), problems);
                }
            }
            None => problems.push(format!("{at}: coordinates is not an array")),
        },
        other => problems.push(format!("{at}: unsupported geometry type {other:?}")),
    }
}

fn check_position(c: &Value, at: &str, problems: &mut Vec<String>) {
    match c.as_array() {
        Some(a) if (2..=3).contains(&a.len()) && a.iter().all(|v| v.as_f64().is_some_and(f64::is_finite)) => {
            let (lon, lat) = (a[0].as_f64().unwrap(), a[1].as_f64().unwrap());
            if !(-180.0..=180.0).contains(&lon) || !(-90.0..=90.0).contains(&lat) {
                problems.push(format!("{at}: position [{lon}, {lat}] out of range"));
            }
        }
        _ => problems.push(format!("{at}: position must be 2 or 3 finite numbers")),
    }
}

fn check_line(c: &Value, min: usize, at: &str, problems: &mut Vec<String>) {
    match c.as_array() {
        Some(a) if a.len() >= min => {
            for p in a {
                check_position(p, at, problems);
            }
        }
        _ => problems.push(format!("{at}: needs at least {min} positions")),
    }
}

fn check_polygon(c: &Value, at: &str, problems: &mut Vec<String>) {
    let Some(rings) = c.as_array().filter(|r| !r.is_empty()) else {
        problems.push(format!("{at}: polygon needs at least one ring"));
        return;
    };
    for (k, ring) in rings.iter().enumerate() {
        let at = format!("{at}.ring[{k}]");
        let before = problems.len();
        check_line(ring, 4, &at, problems);
        if problems.len() == before {
            let r = ring.as_array().unwrap();
            if r.first() != r.last() {
                problems.push(format!("{at}: ring is not closed"));
            }
        }
    }
}

fn prediction_properties(p: &PovertyPrediction) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("unit_id".into(), json!(p.unit_id));
    m.insert("H".into(), json!(p.h));
    m.insert("A".into(), json!(p.a));
    m.insert("MPI".into(), json!(p.mpi));
    m.insert("clamped".into(), json!(p.clamped));
    m
}

/// Prediction map at one level.
///
/// With boundaries, every polygon of that level (features whose `level`
/// property matches or is absent) is emitted carrying its unit's
/// prediction; a boundary naming an unknown unit is emitted without one.
/// Predicted units without a polygon, or all of them when no boundaries are
/// given, become Points at their centroids.
pub fn write_geojson(
    preds: &[PovertyPrediction],
    h: &SpatialHierarchy,
    level: Level,
    boundaries: Option<&FeatureCollection>,
) -> Result<FeatureCollection> {
    let mut fc = FeatureCollection::default();
    let mut drawn = std::collections::BTreeSet::new();
    for p in preds {
        h.index_of(level, &p.unit_id)?;
    }
    if let Some(b) = boundaries {
        for f in boundary_features(b, level) {
            let Some(id) = f.unit_id() else { continue };
            let properties = if h.index_of(level, id).is_err() {
                warn!("boundary `{id}` is not a {level} of the hierarchy; emitted without prediction");
                None
            } else {
                preds.iter().find(|p| p.unit_id == id).map(prediction_properties)
            };
            drawn.insert(id.to_string());
            let mut props = properties.unwrap_or_default();
            props.insert("unit_id".into(), json!(id));
            fc.features.push(Feature {
                geometry: f.geometry.clone(),
                properties: props,
            });
        }
    }
    for p in preds.iter().filter(|p| !drawn.contains(&p.unit_id)) {
        let centroid = h.unit_centroid(level, &p.unit_id)?;
        fc.features.push(Feature {
            geometry: Some(Geometry::Point(position(centroid))),
            properties: prediction_properties(p),
        });
    }
    Ok(fc)
}

/// Areal features of `level` from a boundary collection.
pub fn boundary_features(b: &FeatureCollection, level: Level) -> impl Iterator<Item = &Feature> + '_ {
    b.features.iter().filter(move |f| {
        let level_ok = f
            .properties
            .get("level")
            .and_then(Value::as_str)
            .is_none_or(|l| l == level.as_str());
        level_ok && f.geometry.as_ref().is_some_and(Geometry::is_areal)
    })
}

/// Replace hierarchy centroids with polygon centroids where a boundary
/// matches; returns the number of units updated.
pub fn apply_boundary_centroids(h: &mut SpatialHierarchy, b: &FeatureCollection) -> Result<usize> {
    let mut updated = 0;
    for level in [Level::Arrondissement, Level::Region] {
        for f in boundary_features(b, level) {
            let Some(id) = f.unit_id() else { continue };
            if h.index_of(level, id).is_err() {
                continue;
            }
            let polys = f.geometry.as_ref().expect("areal").polygons();
            match polygon_centroid(&polys) {
                Some(c) => {
                    h.set_centroid(level, id, c).map_err(Error::from)?;
                    updated += 1;
                }
                None => warn!("boundary `{id}` has zero area; keeping the site-mean centroid"),
            }
        }
    }
    Ok(updated)
}

/// Origin-destination lines between unit centroids with a `volume`
/// property; the diagonal is skipped.
pub fn flow_lines(m: &FlowMatrix, h: &SpatialHierarchy) -> Result<FeatureCollection> {
    let level = m.level();
    let mut fc = FeatureCollection::default();
    for (i, j, v) in m.nonzeros() {
        if i == j {
            continue;
        }
        let a = h.centroid_at(level, i)?;
        let b = h.centroid_at(level, j)?;
        let mut props = Map::new();
        props.insert("from".into(), json!(m.ids()[i]));
        props.insert("to".into(), json!(m.ids()[j]));
        props.insert("volume".into(), json!(v));
        fc.features.push(Feature {
            geometry: Some(Geometry::LineString(vec![position(a), position(b)])),
            properties: props,
        });
    }
    Ok(fc)
}

/// Closed rectangle ring `[lon, lat]` from south-west and north-east corners.
pub fn rectangle(south: f64, west: f64, north: f64, east: f64) -> Geometry {
    Geometry::Polygon(vec![vec![
        [west, south],
        [east, south],
        [east, north],
        [west, north],
        [west, south],
    ]])
}
