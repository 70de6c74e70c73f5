//! Static SVG choropleths of a GeoJSON layer.

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use vnet_core::numeric::quantile_sorted;

use crate::geojson::{FeatureCollection, Geometry, Position};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BreakMethod {
    Quantile,
    EqualInterval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChoroplethSpec {
    /// Numeric feature property to color by.
    pub field: String,
    pub low: [u8; 3],
    pub high: [u8; 3],
    pub classes: usize,
    pub breaks: BreakMethod,
    pub missing: [u8; 3],
    pub width: f64,
}

impl Default for ChoroplethSpec {
    fn default() -> Self {
        ChoroplethSpec {
            field: "MPI".into(),
            low: [255, 247, 188],
            high: [189, 0, 38],
            classes: 5,
            breaks: BreakMethod::Quantile,
            missing: [204, 204, 204],
            width: 800.0,
        }
    }
}

/// Inner class boundaries, strictly increasing; `k` values yield at most
/// `classes − 1` breaks, fewer when values coincide.
pub fn class_breaks(values: &[f64], method: BreakMethod, classes: usize) -> Vec<f64> {
    let mut sorted: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    sorted.sort_by(f64::total_cmp);
    let (Some(&lo), Some(&hi)) = (sorted.first(), sorted.last()) else {
        return Vec::new();
    };
    let mut breaks: Vec<f64> = Vec::new();
    for k in 1..classes.max(1) {
        let q = k as f64 / classes as f64;
        let b = match method {
            BreakMethod::Quantile => quantile_sorted(&sorted, q).expect("nonempty"),
            BreakMethod::EqualInterval => lo + (hi - lo) * q,
        };
        if b > lo && b <= hi && breaks.last().is_none_or(|&last| b > last) {
            breaks.push(b);
        }
    }
    breaks
}

/// Class index of a value: the number of breaks at or below it.
pub fn class_of(value: f64, breaks: &[f64]) -> usize {
    breaks.iter().take_while(|&&b| value >= b).count()
}

fn ramp(spec: &ChoroplethSpec, class: usize, classes: usize) -> [u8; 3] {
    if classes <= 1 {
        return spec.low;
    }
    let t = class as f64 / (classes - 1) as f64;
    core::array::from_fn(|k| {
        let (a, b) = (f64::from(spec.low[k]), f64::from(spec.high[k]));
        (a + (b - a) * t).round() as u8
    })
}

fn hex([r, g, b]: [u8; 3]) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Equirectangular projection scaled by the cosine of the mean latitude.
struct Projection {
    west: f64,
    north: f64,
    scale: f64,
    kx: f64,
    margin: f64,
}

impl Projection {
    fn fit(points: &[Position], width: f64, margin: f64) -> (Self, f64) {
        let (mut w, mut e, mut s, mut n) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in points {
            w = w.min(p[0]);
            e = e.max(p[0]);
            s = s.min(p[1]);
            n = n.max(p[1]);
        }
        if points.is_empty() {
            (w, e, s, n) = (0.0, 1.0, 0.0, 1.0);
        }
        let kx = ((s + n) / 2.0).to_radians().cos();
        let span_x = ((e - w) * kx).max(1e-9);
        let span_y = (n - s).max(1e-9);
        let scale = (width - 2.0 * margin) / span_x.max(span_y);
        let height = span_y * scale + 2.0 * margin;
        (
            Projection {
                west: w,
                north: n,
                scale,
                kx,
                margin,
            },
            height,
        )
    }

    fn xy(&self, p: Position) -> (f64, f64) {
        (
            self.margin + (p[0] - self.west) * self.kx * self.scale,
            self.margin + (self.north - p[1]) * self.scale,
        )
    }
}

fn all_positions(fc: &FeatureCollection) -> Vec<Position> {
    let mut out = Vec::new();
    for g in fc.features.iter().filter_map(|f| f.geometry.as_ref()) {
        match g {
            Geometry::Point(p) => out.push(*p),
            Geometry::LineString(l) => out.extend(l),
            Geometry::Polygon(p) => out.extend(p.iter().flatten()),
            Geometry::MultiPolygon(m) => out.extend(m.iter().flatten().flatten()),
        }
    }
    out
}

fn ring_path(proj: &Projection, ring: &[Position], d: &mut String) {
    for (k, p) in ring.iter().enumerate() {
        let (x, y) = proj.xy(*p);
        let _ = write!(d, "{}{x:.2},{y:.2}", if k == 0 { "M" } else { "L" });
    }
    d.push('Z');
}

/// Render polygons (or circles for point features) filled by class color,
/// with a legend listing the class ranges.
pub fn write_svg_choropleth(fc: &FeatureCollection, spec: &ChoroplethSpec) -> String {
    let value = |f: &crate::geojson::Feature| f.properties.get(&spec.field).and_then(Value::as_f64);
    let values: Vec<f64> = fc.features.iter().filter_map(value).collect();
    let breaks = class_breaks(&values, spec.breaks, spec.classes);
    let classes = breaks.len() + 1;
    let margin = 10.0;
    let (proj, map_height) = Projection::fit(&all_positions(fc), spec.width, margin);
    let legend_height = 20.0 * (classes as f64 + 1.0) + margin;
    let height = map_height + legend_height;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.0}" height="{height:.0}" viewBox="0 0 {w:.0} {height:.0}">"#,
        w = spec.width
    );
    for f in &fc.features {
        let fill = match value(f) {
            Some(v) => hex(ramp(spec, class_of(v, &breaks), classes)),
            None => hex(spec.missing),
        };
        let title = f.unit_id().unwrap_or("");
        match &f.geometry {
            Some(Geometry::Polygon(rings)) => {
                let mut d = String::new();
                for ring in rings {
                    ring_path(&proj, ring, &mut d);
                }
                let _ = writeln!(
                    s,
                    r##"<path d="{d}" fill="{fill}" fill-rule="evenodd" stroke="#555" stroke-width="0.5"><title>{title}</title></path>"##
                );
            }
            Some(Geometry::MultiPolygon(polys)) => {
                let mut d = String::new();
                for ring in polys.iter().flatten() {
                    ring_path(&proj, ring, &mut d);
                }
                let _ = writeln!(
                    s,
                    r##"<path d="{d}" fill="{fill}" fill-rule="evenodd" stroke="#555" stroke-width="0.5"><title>{title}</title></path>"##
                );
            }
            Some(Geometry::Point(p)) => {
                let (x, y) = proj.xy(*p);
                let _ = writeln!(
                    s,
                    r##"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{fill}" stroke="#555" stroke-width="0.5"><title>{title}</title></circle>"##
                );
            }
            Some(Geometry::LineString(_)) | None => {}
        }
    }

    let mut bounds = vec![values.iter().copied().fold(f64::INFINITY, f64::min)];
    bounds.extend(&breaks);
    bounds.push(values.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let top = map_height + margin;
    let _ = writeln!(s, r#"<g font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<text x="{margin}" y="{:.2}">{}</text>"#, top + 12.0, spec.field);
    if !values.is_empty() {
        for c in 0..classes {
            let y = top + 20.0 * (c as f64 + 1.0);
            let _ = writeln!(
                s,
                r#"<rect x="{margin}" y="{y:.2}" width="14" height="14" fill="{}"/><text x="{:.2}" y="{:.2}">{:.4} to {:.4}</text>"#,
                hex(ramp(spec, c, classes)),
                margin + 20.0,
                y + 12.0,
                bounds[c],
                bounds[c + 1]
            );
        }
    }
    s.push_str("</g>\n</svg>\n");
    s
}
