//! Single-band rasters, the tile grid, ESRI ASCII grid I/O and the three
//! resampling modes used to bring every source onto the analysis grid.
//!
//! Cell and tile membership is decided by centers. A point belongs to the cell
//! whose index-space interval `[k, k + 1)` contains it, measured from the top
//! left corner (columns grow east, rows grow south).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-tile values aligned to a [`TileGrid`]; `None` is nodata.
pub type TileValues = Vec<Option<f64>>;

pub const DEFAULT_NODATA: f64 = -9999.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    /// Outer (top-left) corner of cell (0, 0).
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub nodata: f64,
    /// Row-major, top row first.
    pub values: Vec<f64>,
    pub band_name: String,
}

impl Raster {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        nodata: f64,
        values: Vec<f64>,
        band_name: impl Into<String>,
    ) -> Result<Self> {
        let raster = Raster {
            width,
            height,
            origin_x,
            origin_y,
            cell_size,
            nodata,
            values,
            band_name: band_name.into(),
        };
        raster.validate()?;
        Ok(raster)
    }

    /// A raster filled with `value`.
    pub fn filled(
        width: usize,
        height: usize,
        origin_x: f64,
        origin_y: f64,
        cell_size: f64,
        value: f64,
        band_name: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            width,
            height,
            origin_x,
            origin_y,
            cell_size,
            DEFAULT_NODATA,
            vec![value; width * height],
            band_name,
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid(format!(
                "raster `{}` has zero cells ({}x{})",
                self.band_name, self.width, self.height
            )));
        }
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(Error::invalid(format!(
                "raster `{}` has non-positive cell size {}",
                self.band_name, self.cell_size
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::invalid(format!(
                "raster `{}` has a non-finite origin",
                self.band_name
            )));
        }
        if self.values.len() != self.width * self.height {
            return Err(Error::invalid(format!(
                "raster `{}` holds {} values, expected {}",
                self.band_name,
                self.values.len(),
                self.width * self.height
            )));
        }
        if let Some(i) = self.values.iter().position(|&v| !self.is_nodata(v) && !v.is_finite()) {
            return Err(Error::invalid(format!(
                "raster `{}` has a non-finite value at cell {i}",
                self.band_name
            )));
        }
        Ok(())
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || (self.nodata.is_nan() && v.is_nan())
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.values[row * self.width + col];
        (!self.is_nodata(v)).then_some(v)
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y - (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Cell containing the point, if any.
    pub fn locate(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let col = ((x - self.origin_x) / self.cell_size).floor();
        let row = ((self.origin_y - y) / self.cell_size).floor();
        if col < 0.0 || row < 0.0 || col >= self.width as f64 || row >= self.height as f64 {
            return None;
        }
        Some((row as usize, col as usize))
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.cell_size,
            self.origin_x + self.width as f64 * self.cell_size,
            self.origin_y,
        )
    }
}

/// The analysis grid of one region of interest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TileGrid {
    pub roi: String,
    /// Top-left corner of tile 0.
    pub origin_x: f64,
    pub origin_y: f64,
    #[serde(default = "default_tile_size")]
    pub tile_size: f64,
    pub n_cols: usize,
    pub n_rows: usize,
}

fn default_tile_size() -> f64 {
    100.0
}

impl TileGrid {
    pub fn new(
        roi: impl Into<String>,
        origin_x: f64,
        origin_y: f64,
        tile_size: f64,
        n_cols: usize,
        n_rows: usize,
    ) -> Result<Self> {
        let grid = TileGrid {
            roi: roi.into(),
            origin_x,
            origin_y,
            tile_size,
            n_cols,
            n_rows,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tile_size > 0.0 && self.tile_size.is_finite()) {
            return Err(Error::invalid(format!(
                "grid `{}`: tile_size must be positive",
                self.roi
            )));
        }
        if self.n_cols == 0 || self.n_rows == 0 {
            return Err(Error::invalid(format!("grid `{}` has no tiles", self.roi)));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::invalid(format!("grid `{}` has a non-finite origin", self.roi)));
        }
        Ok(())
    }

    pub fn n_tiles(&self) -> usize {
        self.n_cols * self.n_rows
    }

    pub fn tile_id(&self, row: usize, col: usize) -> u32 {
        (row * self.n_cols + col) as u32
    }

    pub fn row_col(&self, id: u32) -> (usize, usize) {
        let id = id as usize;
        (id / self.n_cols, id % self.n_cols)
    }

    pub fn contains_id(&self, id: u32) -> bool {
        (id as usize) < self.n_tiles()
    }

    pub fn tile_center(&self, id: u32) -> (f64, f64) {
        let (row, col) = self.row_col(id);
        (
            self.origin_x + (col as f64 + 0.5) * self.tile_size,
            self.origin_y - (row as f64 + 0.5) * self.tile_size,
        )
    }

    /// Tile containing the point under the half-open convention.
    pub fn tile_at(&self, x: f64, y: f64) -> Option<u32> {
        let col = ((x - self.origin_x) / self.tile_size).floor();
        let row = ((self.origin_y - y) / self.tile_size).floor();
        if !(col >= 0.0 && row >= 0.0 && col < self.n_cols as f64 && row < self.n_rows as f64) {
            return None;
        }
        Some(self.tile_id(row as usize, col as usize))
    }

    /// `(min_x, min_y, max_x, max_y)`.
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.n_rows as f64 * self.tile_size,
            self.origin_x + self.n_cols as f64 * self.tile_size,
            self.origin_y,
        )
    }

    /// The grid as a raster with one cell per tile, for writing predictions.
    pub fn to_raster(&self, values: &[Option<f64>], band_name: &str) -> Result<Raster> {
        if values.len() != self.n_tiles() {
            return Err(Error::invalid(format!(
                "{} values for grid `{}` of {} tiles",
                values.len(),
                self.roi,
                self.n_tiles()
            )));
        }
        Raster::new(
            self.n_cols,
            self.n_rows,
            self.origin_x,
            self.origin_y,
            self.tile_size,
            DEFAULT_NODATA,
            values.iter().map(|v| v.unwrap_or(DEFAULT_NODATA)).collect(),
            band_name,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandKind {
    Continuous,
    Categorical,
    Binary,
}

/// Contents of the `<name>.band.json` sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandInfo {
    pub band_name: String,
    pub frame: String,
    pub kind: BandKind,
}

pub fn sidecar_path(raster_path: &Path) -> PathBuf {
    let stem = raster_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    raster_path.with_file_name(format!("{stem}.band.json"))
}

pub fn read_band_info(raster_path: &Path) -> Result<Option<BandInfo>> {
    let path = sidecar_path(raster_path);
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text)
        .map(Some)
        .map_err(|source| Error::Json { path, source })
}

pub fn write_band_info(raster_path: &Path, info: &BandInfo) -> Result<()> {
    let path = sidecar_path(raster_path);
    let text = serde_json::to_string_pretty(info).expect("band info serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Reads an ESRI ASCII grid. The band name comes from the sidecar when one
/// exists, otherwise from the file stem.
pub fn read_ascii_grid(path: &Path) -> Result<Raster> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let band_name = match read_band_info(path)? {
        Some(info) => info.band_name,
        None => path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default(),
    };
    parse_ascii_grid(&text, path, band_name)
}

#[derive(Default)]
struct Header {
    ncols: Option<usize>,
    nrows: Option<usize>,
    x: Option<(f64, bool)>,
    y: Option<(f64, bool)>,
    cellsize: Option<f64>,
    nodata: Option<f64>,
}

fn parse_ascii_grid(text: &str, path: &Path, band_name: String) -> Result<Raster> {
    let mut header = Header::default();
    let mut lines = text.lines().enumerate().peekable();

    while let Some(&(idx, line)) = lines.peek() {
        let lineno = idx + 1;
        let mut tokens = line.split_whitespace();
        let Some(key) = tokens.next() else {
            lines.next();
            continue;
        };
        if !key.starts_with(|c: char| c.is_ascii_alphabetic()) || key.parse::<f64>().is_ok() {
            break;
        }
        let value = tokens
            .next()
            .ok_or_else(|| Error::parse(path, lineno, format!("header key `{key}` has no value")))?;
        if tokens.next().is_some() {
            return Err(Error::parse(
                path,
                lineno,
                format!("header line `{line}` has extra tokens"),
            ));
        }
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("header `{key}` value `{v}` is not numeric")))
        };
        let count = |v: &str| -> Result<usize> {
            v.parse::<usize>()
                .map_err(|_| Error::parse(path, lineno, format!("header `{key}` value `{v}` is not a count")))
        };
        match key.to_ascii_lowercase().as_str() {
            "ncols" => header.ncols = Some(count(value)?),
            "nrows" => header.nrows = Some(count(value)?),
            "xllcorner" => header.x = Some((num(value)?, false)),
            "xllcenter" => header.x = Some((num(value)?, true)),
            "yllcorner" => header.y = Some((num(value)?, false)),
            "yllcenter" => header.y = Some((num(value)?, true)),
            "cellsize" => header.cellsize = Some(num(value)?),
            "nodata_value" => header.nodata = Some(num(value)?),
            _ => return Err(Error::parse(path, lineno, format!("unknown header key `{key}`"))),
        }
        lines.next();
    }

    let missing = |k: &str| Error::parse(path, 1, format!("header is missing `{k}`"));
    let ncols = header.ncols.ok_or_else(|| missing("ncols"))?;
    let nrows = header.nrows.ok_or_else(|| missing("nrows"))?;
    let cell_size = header.cellsize.ok_or_else(|| missing("cellsize"))?;
    let (x, x_center) = header.x.ok_or_else(|| missing("xllcorner"))?;
    let (y, y_center) = header.y.ok_or_else(|| missing("yllcorner"))?;
    let nodata = header.nodata.unwrap_or(DEFAULT_NODATA);
    if ncols == 0 || nrows == 0 {
        return Err(Error::parse(path, 1, "ncols and nrows must be positive"));
    }
    if !(cell_size > 0.0) {
        return Err(Error::parse(path, 1, "cellsize must be positive"));
    }
    let origin_x = if x_center { x - cell_size / 2.0 } else { x };
    let yll = if y_center { y - cell_size / 2.0 } else { y };
    let origin_y = yll + nrows as f64 * cell_size;

    let mut values = Vec::with_capacity(ncols * nrows);
    let mut rows_read = 0;
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == nrows {
            return Err(Error::parse(path, lineno, format!("more than {nrows} data rows")));
        }
        let before = values.len();
        for token in line.split_whitespace() {
            let v = token
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("non-numeric token `{token}`")))?;
            values.push(v);
        }
        let found = values.len() - before;
        if found != ncols {
            return Err(Error::parse(
                path,
                lineno,
                format!("data row {} has {found} values, expected {ncols}", rows_read + 1),
            ));
        }
        rows_read += 1;
    }
    if rows_read != nrows {
        return Err(Error::parse(
            path,
            text.lines().count(),
            format!("found {rows_read} data rows, expected {nrows}"),
        ));
    }

    Raster::new(ncols, nrows, origin_x, origin_y, cell_size, nodata, values, band_name).map_err(|e| match e {
        Error::Invalid(msg) => Error::parse(path, 1, msg),
        other => other,
    })
}

/// `yllcorner` value whose reconstruction `yll + nrows * cellsize` gives back
/// `origin_y` bit for bit, when such a value exists near the naive one.
fn round_trip_yll(origin_y: f64, height: usize, cell_size: f64) -> f64 {
    let span = height as f64 * cell_size;
    let naive = origin_y - span;
    if naive + span == origin_y {
        return naive;
    }
    let mut down = naive;
    let mut up = naive;
    for _ in 0..64 {
        down = next_toward(down, f64::NEG_INFINITY);
        up = next_toward(up, f64::INFINITY);
        if up + span == origin_y {
            return up;
        }
        if down + span == origin_y {
            return down;
        }
    }
    naive
}

fn next_toward(v: f64, target: f64) -> f64 {
    if v == target || v.is_nan() {
        return v;
    }
    if v == 0.0 {
        let tiny = f64::from_bits(1);
        return if target > 0.0 { tiny } else { -tiny };
    }
    let bits = v.to_bits();
    let away_from_zero = (target > v) == (v > 0.0);
    f64::from_bits(if away_from_zero { bits + 1 } else { bits - 1 })
}

pub fn format_ascii_grid(raster: &Raster) -> Result<String> {
    raster.validate()?;
    let mut out = String::with_capacity(raster.values.len() * 8 + 128);
    let yll = round_trip_yll(raster.origin_y, raster.height, raster.cell_size);
    let _ = writeln!(out, "ncols {}", raster.width);
    let _ = writeln!(out, "nrows {}", raster.height);
    let _ = writeln!(out, "xllcorner {:?}", raster.origin_x);
    let _ = writeln!(out, "yllcorner {:?}", yll);
    let _ = writeln!(out, "cellsize {:?}", raster.cell_size);
    let _ = writeln!(out, "NODATA_value {:?}", raster.nodata);
    for row in raster.values.chunks(raster.width) {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            // `{:?}` prints the shortest representation that parses back exactly.
            let _ = write!(out, "{v:?}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_ascii_grid(raster: &Raster, path: &Path) -> Result<()> {
    let text = format_ascii_grid(raster)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn check_overlap(raster: &Raster, grid: &TileGrid) -> Result<()> {
    let (rx0, ry0, rx1, ry1) = raster.extent();
    let (gx0, gy0, gx1, gy1) = grid.extent();
    if rx0 < gx1 && gx0 < rx1 && ry0 < gy1 && gy0 < ry1 {
        Ok(())
    } else {
        Err(Error::NoOverlap {
            raster: raster.band_name.clone(),
            grid: grid.roi.clone(),
        })
    }
}

/// Calls `f(tile, value)` for every non-nodata cell whose center lies in the grid.
fn for_each_cell_in_grid(raster: &Raster, grid: &TileGrid, mut f: impl FnMut(usize, f64)) {
    for row in 0..raster.height {
        for col in 0..raster.width {
            let Some(v) = raster.get(row, col) else { continue };
            let (cx, cy) = raster.cell_center(row, col);
            if let Some(tile) = grid.tile_at(cx, cy) {
                f(tile as usize, v);
            }
        }
    }
}

/// Mean of the non-nodata cells whose centers fall inside each tile.
pub fn resample_average(raster: &Raster, grid: &TileGrid) -> Result<TileValues> {
    check_overlap(raster, grid)?;
    // Neumaier-compensated sums keep the mean stable under cell reordering.
    let mut sums = vec![(0.0f64, 0.0f64); grid.n_tiles()];
    let mut counts = vec![0usize; grid.n_tiles()];
    for_each_cell_in_grid(raster, grid, |tile, v| {
        let (sum, comp) = &mut sums[tile];
        let t = *sum + v;
        if sum.abs() >= v.abs() {
            *comp += (*sum - t) + v;
        } else {
            *comp += (v - t) + *sum;
        }
        *sum = t;
        counts[tile] += 1;
    });
    Ok(sums
        .into_iter()
        .zip(counts)
        .map(|((sum, comp), n)| (n > 0).then(|| (sum + comp) / n as f64))
        .collect())
}

/// Value of the raster cell containing each tile center.
pub fn resample_nearest(raster: &Raster, grid: &TileGrid) -> Result<TileValues> {
    check_overlap(raster, grid)?;
    Ok((0..grid.n_tiles() as u32)
        .map(|id| {
            let (x, y) = grid.tile_center(id);
            raster.locate(x, y).and_then(|(r, c)| raster.get(r, c))
        })
        .collect())
}

/// 1 where any contributing cell is 1, 0 where all contributing cells are 0,
/// nodata where no valid cell contributes.
pub fn resample_any(raster: &Raster, grid: &TileGrid) -> Result<TileValues> {
    if let Some(v) = raster
        .values
        .iter()
        .find(|&&v| !raster.is_nodata(v) && v != 0.0 && v != 1.0)
    {
        return Err(Error::invalid(format!(
            "binary raster `{}` contains value {v}",
            raster.band_name
        )));
    }
    check_overlap(raster, grid)?;
    let mut out: TileValues = vec![None; grid.n_tiles()];
    for_each_cell_in_grid(raster, grid, |tile, v| {
        let slot = out[tile].get_or_insert(0.0);
        if v == 1.0 {
            *slot = 1.0;
        }
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid_1x1() -> TileGrid {
        TileGrid::new("t", 0.0, 100.0, 100.0, 1, 1).unwrap()
    }

    #[test]
    fn reads_single_cell() {
        let text = "ncols 1\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 100\nNODATA_value -9999\n5\n";
        let r = parse_ascii_grid(text, Path::new("a.asc"), "a".into()).unwrap();
        assert_eq!((r.width, r.height, r.cell_size), (1, 1, 100.0));
        assert_eq!(r.values, vec![5.0]);
        assert_eq!(r.origin_y, 100.0);
    }

    #[test]
    fn header_keys_are_case_insensitive() {
        let text = "NCOLS 2\nNROWS 1\nXLLCORNER 10\nYLLCORNER 20\nCELLSIZE 5\nnodata_value -1\n-1 3\n";
        let r = parse_ascii_grid(text, Path::new("a.asc"), "a".into()).unwrap();
        assert_eq!(r.get(0, 0), None);
        assert_eq!(r.get(0, 1), Some(3.0));
    }

    #[test]
    fn short_row_is_reported_with_line() {
        let text = "ncols 3\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n1 2 3\n4 5\n";
        let err = parse_ascii_grid(text, Path::new("a.asc"), "a".into()).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 8);
                assert!(message.contains("data row 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_numeric_token_is_reported() {
        let text = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\ncellsize 1\n1 x\n";
        let err = parse_ascii_grid(text, Path::new("a.asc"), "a".into()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 6, .. }), "{err:?}");
    }

    #[test]
    fn missing_header_key_is_an_error() {
        let text = "ncols 1\nnrows 1\nxllcorner 0\ncellsize 1\n1\n";
        assert!(parse_ascii_grid(text, Path::new("a.asc"), "a".into()).is_err());
    }

    #[test]
    fn writes_sentinel_for_nodata() {
        let r = Raster::new(2, 1, 0.0, 1.0, 1.0, -9999.0, vec![-9999.0, 2.5], "b").unwrap();
        let text = format_ascii_grid(&r).unwrap();
        assert!(text.lines().last().unwrap().starts_with("-9999.0 2.5"));
    }

    #[test]
    fn zero_cell_raster_is_rejected() {
        let r = Raster {
            width: 0,
            height: 0,
            origin_x: 0.0,
            origin_y: 0.0,
            cell_size: 1.0,
            nodata: -9999.0,
            values: vec![],
            band_name: "empty".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.asc");
        assert!(write_ascii_grid(&r, &path).is_err());
        assert!(!path.exists());
    }

    #[test]
    fn average_of_four_cells() {
        let r = Raster::new(2, 2, 0.0, 100.0, 50.0, -9999.0, vec![1.0, 2.0, 3.0, 4.0], "c").unwrap();
        assert_eq!(resample_average(&r, &grid_1x1()).unwrap(), vec![Some(2.5)]);
    }

    #[test]
    fn average_of_nodata_is_nodata() {
        let r = Raster::new(2, 2, 0.0, 100.0, 50.0, -9999.0, vec![-9999.0; 4], "c").unwrap();
        assert_eq!(resample_average(&r, &grid_1x1()).unwrap(), vec![None]);
    }

    #[test]
    fn average_without_overlap_fails() {
        let r = Raster::filled(2, 2, 1000.0, 1000.0, 50.0, 1.0, "c").unwrap();
        assert!(matches!(
            resample_average(&r, &grid_1x1()),
            Err(Error::NoOverlap { .. })
        ));
    }

    #[test]
    fn nearest_picks_containing_cell() {
        let r = Raster::new(1, 1, -300.0, 400.0, 750.0, -9999.0, vec![3.2], "ntl").unwrap();
        assert_eq!(resample_nearest(&r, &grid_1x1()).unwrap(), vec![Some(3.2)]);
    }

    #[test]
    fn nearest_outside_raster_is_nodata() {
        let grid = TileGrid::new("t", 0.0, 100.0, 100.0, 2, 1).unwrap();
        let r = Raster::new(1, 1, 0.0, 100.0, 100.0, -9999.0, vec![7.0], "c").unwrap();
        assert_eq!(resample_nearest(&r, &grid).unwrap(), vec![Some(7.0), None]);
    }

    #[test]
    fn nearest_on_cell_boundary_uses_half_open_rule() {
        // Tile center (50, 50) sits on the corner shared by four 50 m cells;
        // it belongs to the cell whose index-space interval starts there.
        let r = Raster::new(2, 2, 0.0, 100.0, 50.0, -9999.0, vec![1.0, 2.0, 3.0, 4.0], "c").unwrap();
        assert_eq!(resample_nearest(&r, &grid_1x1()).unwrap(), vec![Some(4.0)]);
    }

    #[test]
    fn any_resampling_rules() {
        let g = grid_1x1();
        let mk = |v: Vec<f64>| Raster::new(2, 2, 0.0, 100.0, 50.0, -9999.0, v, "b").unwrap();
        assert_eq!(
            resample_any(&mk(vec![0.0, 0.0, 1.0, 0.0]), &g).unwrap(),
            vec![Some(1.0)]
        );
        assert_eq!(resample_any(&mk(vec![0.0; 4]), &g).unwrap(), vec![Some(0.0)]);
        assert_eq!(resample_any(&mk(vec![-9999.0; 4]), &g).unwrap(), vec![None]);
        assert_eq!(
            resample_any(&mk(vec![-9999.0, 0.0, -9999.0, -9999.0]), &g).unwrap(),
            vec![Some(0.0)]
        );
        assert!(resample_any(&mk(vec![0.0, 2.0, 0.0, 0.0]), &g).is_err());
    }

    #[test]
    fn tile_boundary_point_belongs_to_one_tile() {
        let g = TileGrid::new("t", 0.0, 200.0, 100.0, 2, 2).unwrap();
        assert_eq!(g.tile_at(100.0, 150.0), Some(1));
        assert_eq!(g.tile_at(50.0, 100.0), Some(2));
        assert_eq!(g.tile_at(200.0, 150.0), None);
        assert_eq!(g.tile_at(50.0, 200.0), Some(0));
    }

    #[test]
    fn sidecar_is_used_for_band_name() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b4.asc");
        let r = Raster::filled(1, 1, 0.0, 1.0, 1.0, 2.0, "x").unwrap();
        write_ascii_grid(&r, &path).unwrap();
        write_band_info(
            &path,
            &BandInfo {
                band_name: "red".into(),
                frame: "utm36s".into(),
                kind: BandKind::Continuous,
            },
        )
        .unwrap();
        assert!(dir.path().join("b4.band.json").exists());
        assert_eq!(read_ascii_grid(&path).unwrap().band_name, "red");
    }

    fn arb_raster() -> impl Strategy<Value = Raster> {
        // Geometry on a 1/8 m lattice, as real grids are; values are arbitrary.
        (
            1usize..6,
            1usize..6,
            -8_000_000i64..8_000_000,
            -8_000_000i64..8_000_000,
            1i64..8000,
        )
            .prop_flat_map(|(w, h, ox, oy, cs)| {
                let (ox, oy, cs) = (ox as f64 / 8.0, oy as f64 / 8.0, cs as f64 / 8.0);
                let cell = prop_oneof![1 => Just(-9999.0), 4 => -1.0e9..1.0e9f64];
                proptest::collection::vec(cell, w * h).prop_map(move |values| Raster {
                    width: w,
                    height: h,
                    origin_x: ox,
                    origin_y: oy,
                    cell_size: cs,
                    nodata: -9999.0,
                    values,
                    band_name: "p".into(),
                })
            })
    }

    proptest! {
        #[test]
        fn ascii_round_trip_is_identity(r in arb_raster()) {
            let text = format_ascii_grid(&r).unwrap();
            let back = parse_ascii_grid(&text, Path::new("p.asc"), "p".into()).unwrap();
            prop_assert_eq!(back, r);
        }

        #[test]
        fn average_is_permutation_invariant(values in proptest::collection::vec(-1.0e3..1.0e3f64, 16), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let grid = TileGrid::new("t", 0.0, 100.0, 100.0, 1, 1).unwrap();
            let a = Raster::new(4, 4, 0.0, 100.0, 25.0, -9999.0, values.clone(), "a").unwrap();
            let mut shuffled = values;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let b = Raster::new(4, 4, 0.0, 100.0, 25.0, -9999.0, shuffled, "b").unwrap();
            let x = resample_average(&a, &grid).unwrap()[0].unwrap();
            let y = resample_average(&b, &grid).unwrap()[0].unwrap();
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }

        #[test]
        fn any_depends_only_on_ones(cells in proptest::collection::vec(0u8..3, 36)) {
            // 0 → 0, 1 → 1, 2 → nodata in `a`; in `b` nodata becomes 0.
            let grid = TileGrid::new("t", 0.0, 300.0, 100.0, 3, 3).unwrap();
            let a: Vec<f64> = cells.iter().map(|&c| match c { 0 => 0.0, 1 => 1.0, _ => -9999.0 }).collect();
            let b: Vec<f64> = cells.iter().map(|&c| if c == 1 { 1.0 } else { 0.0 }).collect();
            let ra = resample_any(&Raster::new(6, 6, 0.0, 300.0, 50.0, -9999.0, a, "a").unwrap(), &grid).unwrap();
            let rb = resample_any(&Raster::new(6, 6, 0.0, 300.0, 50.0, -9999.0, b, "b").unwrap(), &grid).unwrap();
            for (x, y) in ra.iter().zip(&rb) {
                prop_assert_eq!(x.unwrap_or(0.0), y.unwrap());
            }
        }

        #[test]
        fn nearest_on_exact_tiling_returns_block_values(block in proptest::collection::vec(-100.0..100.0f64, 12)) {
            // 4x3 raster of 100 m cells exactly tiles a 4x3 grid.
            let grid = TileGrid::new("t", 500.0, 900.0, 100.0, 4, 3).unwrap();
            let r = Raster::new(4, 3, 500.0, 900.0, 100.0, -9999.0, block.clone(), "n").unwrap();
            let out = resample_nearest(&r, &grid).unwrap();
            prop_assert_eq!(out, block.into_iter().map(Some).collect::<Vec<_>>());
        }
    }
}
