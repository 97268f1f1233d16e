//! Per-tile predictor table: band indices, land-cover one-hot columns,
//! distance to road and context-ring averages.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{TileGrid, TileValues};

/// A tile of one region of interest. Tile ids restart at 0 in every ROI.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileKey {
    pub roi: String,
    pub tile_id: u32,
}

impl TileKey {
    pub fn new(roi: impl Into<String>, tile_id: u32) -> Self {
        TileKey {
            roi: roi.into(),
            tile_id,
        }
    }
}

impl std::fmt::Display for TileKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.roi, self.tile_id)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnInfo {
    pub name: String,
    /// Whether context-ring averages are derived from this column.
    pub contextable: bool,
    pub provenance: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureColumn {
    pub info: ColumnInfo,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    pub keys: Vec<TileKey>,
    pub columns: Vec<FeatureColumn>,
}

impl FeatureTable {
    pub fn new(keys: Vec<TileKey>) -> Self {
        FeatureTable {
            keys,
            columns: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.keys.len()
    }

    pub fn n_columns(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.info.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns
            .iter()
            .find(|c| c.info.name == name)
            .map(|c| c.values.as_slice())
    }

    pub fn push_column(&mut self, info: ColumnInfo, values: Vec<f64>) -> Result<()> {
        if values.len() != self.keys.len() {
            return Err(Error::invalid(format!(
                "column `{}` has {} values for {} tiles",
                info.name,
                values.len(),
                self.keys.len()
            )));
        }
        if self.columns.iter().any(|c| c.info.name == info.name) {
            return Err(Error::invalid(format!("duplicate column name `{}`", info.name)));
        }
        self.columns.push(FeatureColumn { info, values });
        Ok(())
    }

    pub fn row_index(&self) -> HashMap<&TileKey, usize> {
        self.keys.iter().enumerate().map(|(i, k)| (k, i)).collect()
    }

    /// Rows restricted to `keep`, preserving order.
    pub fn select_rows(&self, keep: &[usize]) -> FeatureTable {
        FeatureTable {
            keys: keep.iter().map(|&i| self.keys[i].clone()).collect(),
            columns: self
                .columns
                .iter()
                .map(|c| FeatureColumn {
                    info: c.info.clone(),
                    values: keep.iter().map(|&i| c.values[i]).collect(),
                })
                .collect(),
        }
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        out.push_str("tile_id,roi");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.info.name);
        }
        out.push('\n');
        for (i, key) in self.keys.iter().enumerate() {
            let _ = write!(out, "{},{}", key.tile_id, key.roi);
            for c in &self.columns {
                let _ = write!(out, ",{:?}", c.values[i]);
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads a table written by [`FeatureTable::write_csv`]. Column metadata
    /// other than the name is not stored in the CSV and comes back empty.
    pub fn read_csv(path: &Path) -> Result<FeatureTable> {
        let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, 0, e.to_string()))?;
        let headers = reader
            .headers()
            .map_err(|e| Error::parse(path, 0, e.to_string()))?
            .clone();
        if headers.len() < 2 || &headers[0] != "tile_id" || &headers[1] != "roi" {
            return Err(Error::parse(path, 0, "header must start with `tile_id,roi`"));
        }
        let names: Vec<String> = headers.iter().skip(2).map(str::to_string).collect();
        let mut keys = Vec::new();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| Error::parse(path, row, e.to_string()))?;
            let tile_id = rec[0]
                .parse::<u32>()
                .map_err(|_| Error::parse(path, row, format!("bad tile_id `{}`", &rec[0])))?;
            keys.push(TileKey::new(&rec[1], tile_id));
            for (j, col) in columns.iter_mut().enumerate() {
                let raw = &rec[j + 2];
                let v = raw
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::parse(path, row, format!("bad value `{raw}` in `{}`", names[j])))?;
                col.push(v);
            }
        }
        let mut table = FeatureTable::new(keys);
        for (name, values) in names.into_iter().zip(columns) {
            table.push_column(
                ColumnInfo {
                    name,
                    contextable: false,
                    provenance: String::new(),
                },
                values,
            )?;
        }
        Ok(table)
    }
}

fn normalized_difference(a: &[Option<f64>], b: &[Option<f64>]) -> Result<TileValues> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "band length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(a, b)| match (a, b) {
            (Some(a), Some(b)) => {
                let den = a + b;
                Some(if den == 0.0 { 0.0 } else { (a - b) / den })
            }
            _ => None,
        })
        .collect())
}

/// `(nir - red) / (nir + red)`, 0 where the denominator vanishes.
pub fn ndvi(nir: &[Option<f64>], red: &[Option<f64>]) -> Result<TileValues> {
    normalized_difference(nir, red)
}

/// `(green - nir) / (green + nir)`, 0 where the denominator vanishes.
pub fn ndwi(green: &[Option<f64>], nir: &[Option<f64>]) -> Result<TileValues> {
    normalized_difference(green, nir)
}

pub const RETAINED_CLASSES: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LandCoverClass {
    Retained(usize),
    Ignored,
}

/// Maps raw land-cover codes onto the five retained classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SchemeSpec", into = "SchemeSpec")]
pub struct LandCoverScheme {
    classes: Vec<String>,
    codes: BTreeMap<i64, LandCoverClass>,
}

/// Serialized form: retained class names plus `code → class name | "ignored"`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct SchemeSpec {
    retained: Vec<String>,
    codes: BTreeMap<String, String>,
}

impl TryFrom<SchemeSpec> for LandCoverScheme {
    type Error = Error;

    fn try_from(spec: SchemeSpec) -> Result<Self> {
        let mut codes = BTreeMap::new();
        for (code, class) in &spec.codes {
            let code: i64 = code
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("land-cover code `{code}` is not an integer")))?;
            codes.insert(code, class.as_str());
        }
        LandCoverScheme::new(spec.retained, codes)
    }
}

impl From<LandCoverScheme> for SchemeSpec {
    fn from(s: LandCoverScheme) -> Self {
        let codes = s
            .codes
            .iter()
            .map(|(code, class)| {
                let name = match class {
                    LandCoverClass::Retained(i) => s.classes[*i].clone(),
                    LandCoverClass::Ignored => "ignored".to_string(),
                };
                (code.to_string(), name)
            })
            .collect();
        SchemeSpec {
            retained: s.classes,
            codes,
        }
    }
}

impl LandCoverScheme {
    pub fn new<'a>(retained: Vec<String>, codes: impl IntoIterator<Item = (i64, &'a str)>) -> Result<Self> {
        if retained.len() != RETAINED_CLASSES {
            return Err(Error::invalid(format!(
                "land-cover scheme must retain exactly {RETAINED_CLASSES} classes, got {}",
                retained.len()
            )));
        }
        let unique: HashSet<&String> = retained.iter().collect();
        if unique.len() != retained.len() || retained.iter().any(|c| c == "ignored") {
            return Err(Error::invalid(
                "retained land-cover class names must be unique and not `ignored`",
            ));
        }
        let mut map = BTreeMap::new();
        for (code, class) in codes {
            let mapped = if class == "ignored" {
                LandCoverClass::Ignored
            } else {
                let idx = retained
                    .iter()
                    .position(|c| c == class)
                    .ok_or_else(|| Error::invalid(format!("code {code} maps to unknown class `{class}`")))?;
                LandCoverClass::Retained(idx)
            };
            map.insert(code, mapped);
        }
        let mut used = [false; RETAINED_CLASSES];
        for class in map.values() {
            if let LandCoverClass::Retained(i) = class {
                used[*i] = true;
            }
        }
        if let Some(i) = used.iter().position(|u| !u) {
            return Err(Error::invalid(format!("retained class `{}` has no code", retained[i])));
        }
        Ok(LandCoverScheme {
            classes: retained,
            codes: map,
        })
    }

    /// Copernicus global 100 m land cover codes with closed forest, bare,
    /// snow, water, wetland, moss, sea and "no class" ignored.
    pub fn copernicus_default() -> Self {
        let retained = ["open_forest", "shrubs", "herbaceous", "cultivated", "urban"]
            .map(String::from)
            .to_vec();
        let mut codes: Vec<(i64, &str)> = vec![
            (0, "ignored"),
            (20, "shrubs"),
            (30, "herbaceous"),
            (40, "cultivated"),
            (50, "urban"),
            (60, "ignored"),
            (70, "ignored"),
            (80, "ignored"),
            (90, "ignored"),
            (100, "ignored"),
            (200, "ignored"),
        ];
        codes.extend((111..=116).map(|c| (c, "ignored")));
        codes.extend((121..=126).map(|c| (c, "open_forest")));
        LandCoverScheme::new(retained, codes).expect("default scheme is valid")
    }

    pub fn class_names(&self) -> &[String] {
        &self.classes
    }

    pub fn classify(&self, code: f64) -> Option<LandCoverClass> {
        if code.fract() != 0.0 || !code.is_finite() {
            return None;
        }
        self.codes.get(&(code as i64)).copied()
    }
}

/// One-hot columns (one per retained class) for the given land-cover codes.
/// `keys` labels the tiles in error messages.
pub fn onehot_landcover(codes: &[f64], scheme: &LandCoverScheme, keys: &[TileKey]) -> Result<Vec<Vec<f64>>> {
    if codes.len() != keys.len() {
        return Err(Error::invalid("land-cover codes and tile keys differ in length"));
    }
    let mut cols = vec![vec![0.0; codes.len()]; RETAINED_CLASSES];
    let mut ignored = Vec::new();
    for (i, &code) in codes.iter().enumerate() {
        match scheme.classify(code) {
            Some(LandCoverClass::Retained(c)) => cols[c][i] = 1.0,
            Some(LandCoverClass::Ignored) => ignored.push(keys[i].to_string()),
            None => {
                return Err(Error::invalid(format!(
                    "tile {} has unknown land-cover code {code}",
                    keys[i]
                )))
            }
        }
    }
    if !ignored.is_empty() {
        return Err(Error::invalid(format!(
            "tiles with ignored land-cover classes: {}",
            ignored.join(", ")
        )));
    }
    Ok(cols)
}

const EDT_INF: f64 = 1e20;

/// Exact 1-D squared distance transform (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    for q in 1..n {
        let qf = q as f64;
        let intersect = |p: usize| {
            let pf = p as f64;
            ((f[q] + qf * qf) - (f[p] + pf * pf)) / (2.0 * qf - 2.0 * pf)
        };
        let mut s = intersect(v[k]);
        // z[0] is -inf, so this stops at k == 0 at the latest.
        while s <= z[k] {
            k -= 1;
            s = intersect(v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, slot) in out.iter_mut().enumerate() {
        let qf = q as f64;
        while z[k + 1] < qf {
            k += 1;
        }
        let d = qf - v[k] as f64;
        *slot = d * d + f[v[k]];
    }
}

/// Squared distance, in tile units, from every tile center to the nearest
/// marked tile center. Two separable passes, columns then rows.
pub fn squared_distance_transform(mask: &[bool], n_cols: usize, n_rows: usize) -> Vec<f64> {
    assert_eq!(mask.len(), n_cols * n_rows);
    let mut grid: Vec<f64> = mask.iter().map(|&m| if m { 0.0 } else { EDT_INF }).collect();
    let longest = n_cols.max(n_rows);
    let mut f = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut v = vec![0usize; longest];
    let mut z = vec![0.0; longest + 1];

    for col in 0..n_cols {
        for row in 0..n_rows {
            f[row] = grid[row * n_cols + col];
        }
        edt_1d(&f[..n_rows], &mut out[..n_rows], &mut v, &mut z);
        for row in 0..n_rows {
            grid[row * n_cols + col] = out[row];
        }
    }
    for row in 0..n_rows {
        let line = &mut grid[row * n_cols..(row + 1) * n_cols];
        f[..n_cols].copy_from_slice(line);
        edt_1d(&f[..n_cols], &mut out[..n_cols], &mut v, &mut z);
        line.copy_from_slice(&out[..n_cols]);
    }
    grid
}

/// Euclidean distance in meters from each tile center to the nearest road
/// tile center.
pub fn distance_to_road(road_tiles: &[bool], grid: &TileGrid) -> Result<Vec<f64>> {
    if road_tiles.len() != grid.n_tiles() {
        return Err(Error::invalid(format!(
            "road mask has {} tiles, grid `{}` has {}",
            road_tiles.len(),
            grid.roi,
            grid.n_tiles()
        )));
    }
    if !road_tiles.iter().any(|&r| r) {
        return Err(Error::NoRoad(grid.roi.clone()));
    }
    Ok(squared_distance_transform(road_tiles, grid.n_cols, grid.n_rows)
        .into_iter()
        .map(|sq| sq.sqrt() * grid.tile_size)
        .collect())
}

pub const CONTEXT_RINGS: [(usize, &str); 2] = [(1, "ctx8"), (2, "ctx24")];

/// Appends `<name>_ctx8` and `<name>_ctx24` for every contextable column: the
/// mean over the surrounding 3x3 (resp. 5x5) block minus the center, using
/// only neighbors that are inside the grid and present in the table. A tile
/// with no such neighbor takes its own value. All ctx8 columns come before all
/// ctx24 columns.
pub fn context_features(table: &FeatureTable, grids: &[TileGrid]) -> Result<FeatureTable> {
    let grid_of: HashMap<&str, &TileGrid> = grids.iter().map(|g| (g.roi.as_str(), g)).collect();
    let mut position: HashMap<(&str, usize, usize), usize> = HashMap::with_capacity(table.n_rows());
    let mut cells = Vec::with_capacity(table.n_rows());
    for (i, key) in table.keys.iter().enumerate() {
        let grid = grid_of
            .get(key.roi.as_str())
            .ok_or_else(|| Error::invalid(format!("no grid for ROI `{}`", key.roi)))?;
        if !grid.contains_id(key.tile_id) {
            return Err(Error::invalid(format!("tile {key} is outside its grid")));
        }
        let (row, col) = grid.row_col(key.tile_id);
        position.insert((key.roi.as_str(), row, col), i);
        cells.push((key.roi.as_str(), row as isize, col as isize));
    }

    let mut out = table.clone();
    let contextable: Vec<&FeatureColumn> = table.columns.iter().filter(|c| c.info.contextable).collect();
    for (radius, suffix) in CONTEXT_RINGS {
        // Neighbor lists are shared by every column of a ring.
        let r = radius as isize;
        let neighbors: Vec<Vec<usize>> = cells
            .iter()
            .map(|&(roi, row, col)| {
                let mut list = Vec::with_capacity((2 * radius + 1).pow(2) - 1);
                for dr in -r..=r {
                    for dc in -r..=r {
                        if dr == 0 && dc == 0 {
                            continue;
                        }
                        let (nr, nc) = (row + dr, col + dc);
                        if nr < 0 || nc < 0 {
                            continue;
                        }
                        if let Some(&j) = position.get(&(roi, nr as usize, nc as usize)) {
                            list.push(j);
                        }
                    }
                }
                list
            })
            .collect();
        for column in &contextable {
            let values = neighbors
                .iter()
                .enumerate()
                .map(|(i, list)| {
                    if list.is_empty() {
                        column.values[i]
                    } else {
                        list.iter().map(|&j| column.values[j]).sum::<f64>() / list.len() as f64
                    }
                })
                .collect();
            out.push_column(
                ColumnInfo {
                    name: format!("{}_{suffix}", column.info.name),
                    contextable: false,
                    provenance: format!("mean of `{}` over the {} ring", column.info.name, &suffix[3..]),
                },
                values,
            )?;
        }
    }
    Ok(out)
}

/// Landsat band rasters resampled to one ROI grid, in configured order, plus
/// the names of the bands playing the index roles.
#[derive(Clone, Debug, Default)]
pub struct LandsatBands {
    pub bands: Vec<(String, TileValues)>,
    pub nir: String,
    pub red: String,
    pub green: String,
}

/// Every source resampled onto one ROI grid. Absent sources are `None`.
#[derive(Clone, Debug)]
pub struct RoiSources {
    pub grid: TileGrid,
    pub building_area: Option<Vec<f64>>,
    pub landsat: Option<LandsatBands>,
    pub hrsl: Option<TileValues>,
    pub land_cover: Option<TileValues>,
    pub ntl: Option<TileValues>,
    pub roads: Option<Vec<bool>>,
}

impl RoiSources {
    pub fn empty(grid: TileGrid) -> Self {
        RoiSources {
            grid,
            building_area: None,
            landsat: None,
            hrsl: None,
            land_cover: None,
            ntl: None,
            roads: None,
        }
    }

    fn signature(&self) -> Vec<String> {
        let mut sig = Vec::new();
        if self.building_area.is_some() {
            sig.push("building_area".to_string());
        }
        if let Some(l) = &self.landsat {
            sig.extend(l.bands.iter().map(|(n, _)| format!("landsat_{n}")));
        }
        for (present, name) in [
            (self.hrsl.is_some(), "hrsl"),
            (self.land_cover.is_some(), "land_cover"),
            (self.ntl.is_some(), "ntl"),
            (self.roads.is_some(), "roads"),
        ] {
            if present {
                sig.push(name.to_string());
            }
        }
        sig
    }
}

#[derive(Clone, Debug)]
pub struct AssembleOptions {
    pub scheme: LandCoverScheme,
    pub context: bool,
    /// Drop tiles whose land cover is an ignored class instead of failing.
    pub drop_ignored_landcover: bool,
}

impl Default for AssembleOptions {
    fn default() -> Self {
        AssembleOptions {
            scheme: LandCoverScheme::copernicus_default(),
            context: true,
            drop_ignored_landcover: false,
        }
    }
}

fn info(name: &str, contextable: bool, provenance: &str) -> ColumnInfo {
    ColumnInfo {
        name: name.to_string(),
        contextable,
        provenance: provenance.to_string(),
    }
}

/// Base columns for one ROI over all of its tiles, in the fixed column order.
fn base_columns(src: &RoiSources, scheme: &LandCoverScheme) -> Result<Vec<(ColumnInfo, TileValues)>> {
    let n = src.grid.n_tiles();
    let roi = &src.grid.roi;
    let check = |name: &str, len: usize| -> Result<()> {
        if len != n {
            return Err(Error::invalid(format!(
                "source `{name}` has {len} tiles, grid `{roi}` has {n}"
            )));
        }
        Ok(())
    };
    let mut cols: Vec<(ColumnInfo, TileValues)> = Vec::new();

    if let Some(area) = &src.building_area {
        check("building_area", area.len())?;
        cols.push((
            info("building_area", true, "building footprint area per tile (m^2)"),
            area.iter().map(|&v| Some(v)).collect(),
        ));
    }
    if let Some(landsat) = &src.landsat {
        let band = |name: &str| -> Result<&TileValues> {
            landsat
                .bands
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, v)| v)
                .ok_or_else(|| Error::invalid(format!("index role refers to unknown band `{name}`")))
        };
        for (name, values) in &landsat.bands {
            check(name, values.len())?;
            cols.push((
                info(&format!("landsat_{name}"), true, "Landsat band, average resampling"),
                values.clone(),
            ));
        }
        let ndvi = ndvi(band(&landsat.nir)?, band(&landsat.red)?)?;
        let ndwi = ndwi(band(&landsat.green)?, band(&landsat.nir)?)?;
        cols.push((info("ndvi", true, "(nir - red) / (nir + red)"), ndvi));
        cols.push((info("ndwi", true, "(green - nir) / (green + nir)"), ndwi));
    }
    if let Some(hrsl) = &src.hrsl {
        check("hrsl", hrsl.len())?;
        cols.push((info("hrsl", true, "settlement presence, any resampling"), hrsl.clone()));
    }
    if let Some(lc) = &src.land_cover {
        check("land_cover", lc.len())?;
        // Codes are one-hot encoded after completeness filtering; keep the raw
        // codes in a placeholder column per class for now.
        for (c, class) in scheme.class_names().iter().enumerate() {
            let values = lc
                .iter()
                .map(|code| {
                    code.map(|code| match scheme.classify(code) {
                        Some(LandCoverClass::Retained(i)) => f64::from(u8::from(i == c)),
                        _ => f64::NAN,
                    })
                })
                .collect();
            cols.push((
                info(&format!("lcc_{class}"), true, "land-cover one-hot, nearest resampling"),
                values,
            ));
        }
    }
    if let Some(ntl) = &src.ntl {
        check("ntl", ntl.len())?;
        cols.push((
            info("ntl", true, "night-time lights radiance, nearest resampling"),
            ntl.clone(),
        ));
    }
    if let Some(roads) = &src.roads {
        let dist = distance_to_road(roads, &src.grid)?;
        cols.push((
            info("dist_road", false, "distance to nearest road tile center (m)"),
            dist.into_iter().map(Some).collect(),
        ));
    }
    Ok(cols)
}

/// Builds the feature table over all tiles of all ROIs.
///
/// Column order: building_area, Landsat bands, ndvi, ndwi, hrsl, the five
/// land-cover columns, ntl, dist_road; then the ctx8 block and the ctx24
/// block over every column except dist_road. Tiles with nodata in any base
/// column are dropped (and logged) before context averaging.
pub fn assemble_features(rois: &[RoiSources], opts: &AssembleOptions) -> Result<FeatureTable> {
    let Some(first) = rois.first() else {
        return Err(Error::invalid("no ROI to assemble"));
    };
    let signature = first.signature();
    for src in &rois[1..] {
        let other = src.signature();
        if other != signature {
            let missing: Vec<&String> = signature.iter().filter(|s| !other.contains(s)).collect();
            let extra: Vec<&String> = other.iter().filter(|s| !signature.contains(s)).collect();
            return Err(Error::invalid(format!(
                "ROI `{}` sources differ from ROI `{}` (missing {missing:?}, extra {extra:?})",
                src.grid.roi, first.grid.roi
            )));
        }
    }
    if signature.is_empty() {
        return Err(Error::invalid("no feature source enabled"));
    }

    let mut keys = Vec::new();
    let mut infos: Vec<ColumnInfo> = Vec::new();
    let mut data: Vec<Vec<f64>> = Vec::new();
    for src in rois {
        let cols = base_columns(src, &opts.scheme)?;
        if infos.is_empty() {
            infos = cols.iter().map(|(i, _)| i.clone()).collect();
            data = vec![Vec::new(); infos.len()];
        }
        let mut incomplete = 0usize;
        let mut ignored = Vec::new();
        for id in 0..src.grid.n_tiles() {
            let row: Option<Vec<f64>> = cols.iter().map(|(_, v)| v[id]).collect();
            let Some(row) = row else {
                incomplete += 1;
                continue;
            };
            if row.iter().any(|v| v.is_nan()) {
                // land-cover code outside the retained classes
                let code = src.land_cover.as_ref().and_then(|lc| lc[id]).unwrap_or(f64::NAN);
                let key = TileKey::new(&src.grid.roi, id as u32);
                match opts.scheme.classify(code) {
                    Some(LandCoverClass::Ignored) if opts.drop_ignored_landcover => {
                        ignored.push(key);
                        continue;
                    }
                    // Delegate the error message to the one-hot encoder.
                    _ => {
                        onehot_landcover(&[code], &opts.scheme, &[key])?;
                        unreachable!("retained codes never produce NaN");
                    }
                }
            }
            keys.push(TileKey::new(&src.grid.roi, id as u32));
            for (col, v) in data.iter_mut().zip(row) {
                col.push(v);
            }
        }
        if incomplete > 0 {
            log::warn!(
                "ROI `{}`: dropped {incomplete} tiles with incomplete features",
                src.grid.roi
            );
        }
        if !ignored.is_empty() {
            log::warn!(
                "ROI `{}`: dropped {} tiles with ignored land-cover classes",
                src.grid.roi,
                ignored.len()
            );
        }
    }

    let mut table = FeatureTable::new(keys);
    for (info, values) in infos.into_iter().zip(data) {
        table.push_column(info, values)?;
    }
    if opts.context {
        let grids: Vec<TileGrid> = rois.iter().map(|r| r.grid.clone()).collect();
        table = context_features(&table, &grids)?;
    }
    Ok(table)
}
