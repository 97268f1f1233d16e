//! Vector inputs: point CSVs, a small GeoJSON subset, and supercover
//! rasterization of polylines onto the tile grid.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::raster::TileGrid;

#[derive(Clone, Debug, PartialEq)]
pub enum AttrValue {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub x: f64,
    pub y: f64,
    pub attributes: BTreeMap<String, AttrValue>,
}

impl PointRecord {
    pub fn new(x: f64, y: f64) -> Self {
        PointRecord {
            x,
            y,
            attributes: BTreeMap::new(),
        }
    }

    pub fn with_attr(mut self, key: &str, value: AttrValue) -> Self {
        self.attributes.insert(key.to_string(), value);
        self
    }

    pub fn number(&self, key: &str) -> Option<f64> {
        match self.attributes.get(key) {
            Some(AttrValue::Number(v)) => Some(*v),
            _ => None,
        }
    }

    pub fn text(&self, key: &str) -> Option<String> {
        match self.attributes.get(key) {
            Some(AttrValue::Text(s)) => Some(s.clone()),
            Some(AttrValue::Number(v)) => Some(v.to_string()),
            None => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Polyline {
    pub vertices: Vec<(f64, f64)>,
    /// Road class or similar; carried through but not used by the model.
    pub tag: Option<String>,
}

impl Polyline {
    pub fn new(vertices: Vec<(f64, f64)>, tag: Option<String>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::invalid(format!(
                "polyline needs at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if vertices.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
            return Err(Error::invalid("polyline has a non-finite vertex"));
        }
        Ok(Polyline { vertices, tag })
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PolylineSet {
    pub lines: Vec<Polyline>,
}

/// Parses a point CSV with mandatory `x` and `y` columns. Other columns become
/// attributes: numeric when they parse as numbers, text otherwise.
pub fn parse_points_csv(path: &Path) -> Result<Vec<PointRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_points_csv_str(&text, path)
}

pub(crate) fn parse_points_csv_str(text: &str, path: &Path) -> Result<Vec<PointRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 0, e.to_string()))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (Some(xi), Some(yi)) = (col("x"), col("y")) else {
        return Err(Error::parse(path, 0, "header must contain `x` and `y` columns"));
    };

    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| Error::parse(path, row, e.to_string()))?;
        let coord = |idx: usize, name: &str| -> Result<f64> {
            let raw = record.get(idx).unwrap_or("");
            match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(Error::parse(
                    path,
                    row,
                    format!("`{name}` value `{raw}` is not a finite number"),
                )),
            }
        };
        let mut point = PointRecord::new(coord(xi, "x")?, coord(yi, "y")?);
        for (j, (name, raw)) in headers.iter().zip(record.iter()).enumerate() {
            if j == xi || j == yi {
                continue;
            }
            let value = match raw.parse::<f64>() {
                Ok(v) => AttrValue::Number(v),
                Err(_) => AttrValue::Text(raw.to_string()),
            };
            point.attributes.insert(name.to_string(), value);
        }
        out.push(point);
    }
    Ok(out)
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// `(geometry, properties)` pairs of a FeatureCollection, a single Feature or
/// a bare geometry.
fn geometries(doc: &Value) -> Result<Vec<(&Value, Option<&Value>)>> {
    let kind = doc.get("type").and_then(Value::as_str).unwrap_or("");
    match kind {
        "FeatureCollection" => {
            let features = doc
                .get("features")
                .and_then(Value::as_array)
                .ok_or_else(|| Error::invalid("FeatureCollection without `features` array"))?;
            let mut out = Vec::with_capacity(features.len());
            for f in features {
                out.extend(geometries(f)?);
            }
            Ok(out)
        }
        "Feature" => {
            let geometry = doc
                .get("geometry")
                .filter(|g| !g.is_null())
                .ok_or_else(|| Error::invalid("Feature without geometry"))?;
            Ok(vec![(geometry, doc.get("properties"))])
        }
        "" => Err(Error::invalid("GeoJSON object without `type`")),
        _ => Ok(vec![(doc, None)]),
    }
}

fn position(v: &Value) -> Result<(f64, f64)> {
    let arr = v
        .as_array()
        .filter(|a| a.len() >= 2)
        .ok_or_else(|| Error::invalid(format!("bad coordinate {v}")))?;
    match (arr[0].as_f64(), arr[1].as_f64()) {
        (Some(x), Some(y)) if x.is_finite() && y.is_finite() => Ok((x, y)),
        _ => Err(Error::invalid(format!("bad coordinate {v}"))),
    }
}

fn line_coords(v: &Value) -> Result<Vec<(f64, f64)>> {
    v.as_array()
        .ok_or_else(|| Error::invalid("LineString coordinates must be an array"))?
        .iter()
        .map(position)
        .collect()
}

fn road_tag(props: Option<&Value>) -> Option<String> {
    let props = props?;
    ["highway", "fclass", "road_class", "class"]
        .iter()
        .find_map(|k| props.get(*k))
        .and_then(|v| match v {
            Value::String(s) => Some(s.clone()),
            Value::Null => None,
            other => Some(other.to_string()),
        })
}

/// Parses LineString and MultiLineString features. Any other geometry type is
/// rejected.
pub fn parse_lines_geojson(path: &Path) -> Result<PolylineSet> {
    let doc = read_json(path)?;
    lines_from_geojson(&doc)
}

pub(crate) fn lines_from_geojson(doc: &Value) -> Result<PolylineSet> {
    let mut lines = Vec::new();
    for (geometry, props) in geometries(doc)? {
        let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("<missing>");
        let coords = geometry.get("coordinates");
        let tag = road_tag(props);
        match (kind, coords) {
            ("LineString", Some(c)) => lines.push(Polyline::new(line_coords(c)?, tag)?),
            ("MultiLineString", Some(c)) => {
                let parts = c
                    .as_array()
                    .ok_or_else(|| Error::invalid("MultiLineString coordinates must be an array"))?;
                for part in parts {
                    lines.push(Polyline::new(line_coords(part)?, tag.clone())?);
                }
            }
            ("LineString" | "MultiLineString", None) => {
                return Err(Error::invalid(format!("{kind} without coordinates")))
            }
            _ => return Err(Error::UnsupportedGeometry(kind.to_string())),
        }
    }
    Ok(PolylineSet { lines })
}

/// Parses Point features; properties become attributes.
pub fn parse_points_geojson(path: &Path) -> Result<Vec<PointRecord>> {
    let doc = read_json(path)?;
    let mut out = Vec::new();
    for (geometry, props) in geometries(&doc)? {
        let kind = geometry.get("type").and_then(Value::as_str).unwrap_or("<missing>");
        if kind != "Point" {
            return Err(Error::UnsupportedGeometry(kind.to_string()));
        }
        let (x, y) = position(
            geometry
                .get("coordinates")
                .ok_or_else(|| Error::invalid("Point without coordinates"))?,
        )?;
        let mut point = PointRecord::new(x, y);
        if let Some(Value::Object(map)) = props {
            for (k, v) in map {
                let value = match v {
                    Value::Number(n) => AttrValue::Number(n.as_f64().unwrap_or(f64::NAN)),
                    Value::String(s) => AttrValue::Text(s.clone()),
                    other => AttrValue::Text(other.to_string()),
                };
                point.attributes.insert(k.clone(), value);
            }
        }
        out.push(point);
    }
    Ok(out)
}

/// Inclusive index range `[lo, hi]` of unit intervals `[k, k + 1]` that touch
/// the closed interval `[a, b]` (in index units), clamped to `0..n`.
fn touching_range(a: f64, b: f64, n: usize) -> Option<(usize, usize)> {
    let lo = (a - 1.0).ceil().max(0.0);
    let hi = b.floor().min(n as f64 - 1.0);
    (lo <= hi).then_some((lo as usize, hi as usize))
}

fn mark_segment(grid: &TileGrid, p: (f64, f64), q: (f64, f64), out: &mut [bool]) {
    let ts = grid.tile_size;
    // Index space: u grows east (columns), v grows south (rows).
    let (u0, v0) = ((p.0 - grid.origin_x) / ts, (grid.origin_y - p.1) / ts);
    let (u1, v1) = ((q.0 - grid.origin_x) / ts, (grid.origin_y - q.1) / ts);
    let Some((c_lo, c_hi)) = touching_range(u0.min(u1), u0.max(u1), grid.n_cols) else {
        return;
    };
    let du = u1 - u0;
    for col in c_lo..=c_hi {
        // Part of the segment inside the closed column strip [col, col + 1].
        let (t0, t1) = if du == 0.0 {
            (0.0, 1.0)
        } else {
            let ta = (col as f64 - u0) / du;
            let tb = (col as f64 + 1.0 - u0) / du;
            (ta.min(tb).max(0.0), ta.max(tb).min(1.0))
        };
        if t0 > t1 {
            continue;
        }
        let va = v0 + (v1 - v0) * t0;
        let vb = v0 + (v1 - v0) * t1;
        if let Some((r_lo, r_hi)) = touching_range(va.min(vb), va.max(vb), grid.n_rows) {
            for row in r_lo..=r_hi {
                out[grid.tile_id(row, col) as usize] = true;
            }
        }
    }
}

/// Marks every tile whose closed box intersects some polyline segment.
pub fn rasterize_lines(lines: &PolylineSet, grid: &TileGrid) -> Vec<bool> {
    let mut out = vec![false; grid.n_tiles()];
    for line in &lines.lines {
        for pair in line.vertices.windows(2) {
            mark_segment(grid, pair[0], pair[1], &mut out);
        }
    }
    out
}
