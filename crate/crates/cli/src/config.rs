use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use gridpop_core::features::LandCoverScheme;
use gridpop_core::raster::{read_ascii_grid, read_band_info, BandKind, TileGrid};
use gridpop_core::regression::ModelHyperparams;
use serde::{Deserialize, Serialize};

/// One configuration problem, with a stable code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Issue {
    pub code: &'static str,
    pub message: String,
}

impl fmt::Display for Issue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.code, self.message)
    }
}

pub const E_PARSE: &str = "E001";
pub const E_MISSING_FILE: &str = "E002";
pub const E_FRAME: &str = "E003";
pub const E_SCHEMA: &str = "E004";
pub const E_OVERLAP: &str = "E005";
pub const E_RESAMPLING: &str = "E006";
pub const E_PRECONDITION: &str = "E007";

fn issue(code: &'static str, message: impl Into<String>) -> Issue {
    Issue {
        code,
        message: message.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resampling {
    Average,
    Nearest,
    Any,
}

/// A single path for all ROIs, or one path per ROI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourcePath {
    Shared(PathBuf),
    PerRoi(BTreeMap<String, PathBuf>),
}

impl SourcePath {
    pub fn for_roi(&self, roi: &str) -> Option<&Path> {
        match self {
            SourcePath::Shared(p) => Some(p),
            SourcePath::PerRoi(m) => m.get(roi).map(PathBuf::as_path),
        }
    }

    fn all(&self) -> Vec<&Path> {
        match self {
            SourcePath::Shared(p) => vec![p],
            SourcePath::PerRoi(m) => m.values().map(PathBuf::as_path).collect(),
        }
    }

    fn resolve(&mut self, base: &Path) {
        match self {
            SourcePath::Shared(p) => *p = base.join(&*p),
            SourcePath::PerRoi(m) => m.values_mut().for_each(|p| *p = base.join(&*p)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSource {
    pub path: SourcePath,
    #[serde(default)]
    pub resampling: Option<Resampling>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandsatBandSource {
    pub name: String,
    pub path: SourcePath,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandsatSource {
    pub bands: Vec<LandsatBandSource>,
    pub nir: String,
    pub red: String,
    pub green: String,
    #[serde(default)]
    pub resampling: Option<Resampling>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LandCoverSource {
    pub path: SourcePath,
    #[serde(default)]
    pub resampling: Option<Resampling>,
    /// Custom class table; the Copernicus default otherwise.
    #[serde(default)]
    pub scheme: Option<LandCoverScheme>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadSource {
    pub path: SourcePath,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sources {
    #[serde(default)]
    pub landsat: Option<LandsatSource>,
    #[serde(default)]
    pub hrsl: Option<RasterSource>,
    #[serde(default)]
    pub land_cover: Option<LandCoverSource>,
    #[serde(default)]
    pub ntl: Option<RasterSource>,
    #[serde(default)]
    pub roads: Option<RoadSource>,
}

/// A number for every ROI, or one per ROI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerRoiValue {
    Shared(f64),
    PerRoi(BTreeMap<String, f64>),
}

impl PerRoiValue {
    pub fn for_roi(&self, roi: &str) -> Option<f64> {
        match self {
            PerRoiValue::Shared(v) => Some(*v),
            PerRoiValue::PerRoi(m) => m.get(roi).copied(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FootprintSource {
    /// Dot annotations (CSV `x,y` or GeoJSON points) burned as discs.
    Dots {
        path: SourcePath,
        mean_building_area: PerRoiValue,
        #[serde(default = "default_mask_cell")]
        cell_size: f64,
        #[serde(default)]
        min_area: Option<f64>,
        #[serde(default)]
        max_area: Option<f64>,
    },
    /// Building probability raster, thresholded.
    Probability {
        path: SourcePath,
        threshold: f64,
        #[serde(default)]
        min_area: Option<f64>,
        #[serde(default)]
        max_area: Option<f64>,
    },
    /// Binary footprint mask raster.
    Mask {
        path: SourcePath,
        #[serde(default)]
        min_area: Option<f64>,
        #[serde(default)]
        max_area: Option<f64>,
    },
}

fn default_mask_cell() -> f64 {
    0.5
}

impl FootprintSource {
    pub fn path(&self) -> &SourcePath {
        match self {
            FootprintSource::Dots { path, .. }
            | FootprintSource::Probability { path, .. }
            | FootprintSource::Mask { path, .. } => path,
        }
    }

    fn path_mut(&mut self) -> &mut SourcePath {
        match self {
            FootprintSource::Dots { path, .. }
            | FootprintSource::Probability { path, .. }
            | FootprintSource::Mask { path, .. } => path,
        }
    }

    pub fn area_bounds(&self) -> Option<(f64, f64)> {
        let (min, max) = match self {
            FootprintSource::Dots { min_area, max_area, .. }
            | FootprintSource::Probability { min_area, max_area, .. }
            | FootprintSource::Mask { min_area, max_area, .. } => (*min_area, *max_area),
        };
        if min.is_none() && max.is_none() {
            return None;
        }
        Some((min.unwrap_or(0.0), max.unwrap_or(f64::INFINITY)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurveyConfig {
    /// Household points: `x,y,persons[,psu]`.
    pub households: PathBuf,
    #[serde(default)]
    pub surveyed_tiles: Option<PathBuf>,
    #[serde(default)]
    pub exclusions: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_deltas")]
    pub deltas: Vec<f64>,
    #[serde(default = "default_lambdas")]
    pub lambda_factors: Vec<f64>,
    #[serde(default = "default_outer_k")]
    pub outer_folds: usize,
    #[serde(default = "default_inner_k")]
    pub inner_folds: usize,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

fn default_deltas() -> Vec<f64> {
    ModelHyperparams::default().deltas
}
fn default_lambdas() -> Vec<f64> {
    ModelHyperparams::default().lambda_factors
}
fn default_outer_k() -> usize {
    4
}
fn default_inner_k() -> usize {
    3
}
fn default_max_iter() -> usize {
    10_000
}
fn default_tol() -> f64 {
    1e-9
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            deltas: default_deltas(),
            lambda_factors: default_lambdas(),
            outer_folds: default_outer_k(),
            inner_folds: default_inner_k(),
            max_iter: default_max_iter(),
            tol: default_tol(),
        }
    }
}

impl ModelConfig {
    pub fn hyperparams(&self) -> ModelHyperparams {
        ModelHyperparams {
            deltas: self.deltas.clone(),
            lambda_factors: self.lambda_factors.clone(),
        }
    }
}

fn default_true() -> bool {
    true
}
fn default_seed() -> u64 {
    17
}
fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Label of the shared planar coordinate frame.
    pub frame: String,
    pub grids: Vec<TileGrid>,
    #[serde(default)]
    pub sources: Sources,
    #[serde(default)]
    pub footprint: Option<FootprintSource>,
    #[serde(default)]
    pub survey: Option<SurveyConfig>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "default_true")]
    pub context: bool,
    #[serde(default)]
    pub drop_ignored_landcover: bool,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// A parsed configuration plus the JSON it was read from.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: serde_json::Value,
    pub path: PathBuf,
}

pub fn load(path: &Path) -> Result<LoadedConfig, Vec<Issue>> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        vec![issue(
            E_MISSING_FILE,
            format!("cannot read config {}: {e}", path.display()),
        )]
    })?;
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        vec![issue(
            E_PARSE,
            format!("config {} is not valid JSON: {e}", path.display()),
        )]
    })?;
    let mut config: RunConfig = serde_json::from_value(raw.clone())
        .map_err(|e| vec![issue(E_SCHEMA, format!("config {}: {e}", path.display()))])?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    config.resolve_paths(&base);
    Ok(LoadedConfig {
        config,
        raw,
        path: path.to_path_buf(),
    })
}

impl RunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        let s = &mut self.sources;
        if let Some(l) = &mut s.landsat {
            l.bands.iter_mut().for_each(|b| b.path.resolve(base));
        }
        if let Some(r) = &mut s.hrsl {
            r.path.resolve(base);
        }
        if let Some(r) = &mut s.land_cover {
            r.path.resolve(base);
        }
        if let Some(r) = &mut s.ntl {
            r.path.resolve(base);
        }
        if let Some(r) = &mut s.roads {
            r.path.resolve(base);
        }
        if let Some(f) = &mut self.footprint {
            f.path_mut().resolve(base);
        }
        if let Some(sv) = &mut self.survey {
            sv.households = base.join(&sv.households);
            sv.surveyed_tiles = sv.surveyed_tiles.as_ref().map(|p| base.join(p));
            sv.exclusions = sv.exclusions.as_ref().map(|p| base.join(p));
        }
        self.output_dir = base.join(&self.output_dir);
    }

    pub fn roi_names(&self) -> Vec<&str> {
        self.grids.iter().map(|g| g.roi.as_str()).collect()
    }

    /// Raster inputs as `(label, source, expected kind, resampling)` entries.
    fn raster_entries(&self) -> Vec<(String, &SourcePath, Resampling)> {
        let s = &self.sources;
        let mut out = Vec::new();
        if let Some(l) = &s.landsat {
            for b in &l.bands {
                out.push((
                    format!("landsat band `{}`", b.name),
                    &b.path,
                    l.resampling.unwrap_or(Resampling::Average),
                ));
            }
        }
        if let Some(r) = &s.hrsl {
            out.push(("hrsl".into(), &r.path, r.resampling.unwrap_or(Resampling::Any)));
        }
        if let Some(r) = &s.land_cover {
            out.push((
                "land_cover".into(),
                &r.path,
                r.resampling.unwrap_or(Resampling::Nearest),
            ));
        }
        if let Some(r) = &s.ntl {
            out.push(("ntl".into(), &r.path, r.resampling.unwrap_or(Resampling::Nearest)));
        }
        out
    }

    /// Every problem found, without stopping at the first. Reads raster
    /// headers to check frames and overlap.
    pub fn validate(&self) -> Vec<Issue> {
        let mut issues = Vec::new();
        if self.frame.trim().is_empty() {
            issues.push(issue(E_SCHEMA, "frame label is empty"));
        }
        if self.grids.is_empty() {
            issues.push(issue(E_SCHEMA, "no grids defined"));
        }
        let mut names = BTreeSet::new();
        for g in &self.grids {
            if let Err(e) = g.validate() {
                issues.push(issue(E_SCHEMA, format!("grid `{}`: {e}", g.roi)));
            }
            if !names.insert(g.roi.as_str()) {
                issues.push(issue(E_SCHEMA, format!("duplicate ROI name `{}`", g.roi)));
            }
        }
        let rois = self.roi_names();
        let check_paths = |label: &str, src: &SourcePath, issues: &mut Vec<Issue>| {
            if let SourcePath::PerRoi(m) = src {
                for roi in &rois {
                    if !m.contains_key(*roi) {
                        issues.push(issue(E_SCHEMA, format!("{label}: no path for ROI `{roi}`")));
                    }
                }
            }
            for p in src.all() {
                if !p.is_file() {
                    issues.push(issue(
                        E_MISSING_FILE,
                        format!("{label}: file not found: {}", p.display()),
                    ));
                }
            }
        };

        for (label, src, resampling) in self.raster_entries() {
            check_paths(&label, src, &mut issues);
            for grid in &self.grids {
                let Some(path) = src.for_roi(&grid.roi) else { continue };
                if !path.is_file() {
                    continue;
                }
                match read_band_info(path) {
                    Ok(Some(info)) => {
                        if info.frame != self.frame {
                            issues.push(issue(
                                E_FRAME,
                                format!(
                                    "{label}: {} is in frame `{}`, config frame is `{}`",
                                    path.display(),
                                    info.frame,
                                    self.frame
                                ),
                            ));
                        }
                        if info.kind == BandKind::Categorical && resampling == Resampling::Average {
                            issues.push(issue(
                                E_RESAMPLING,
                                format!("{label}: categorical band cannot use average resampling"),
                            ));
                        }
                    }
                    Ok(None) => {}
                    Err(e) => issues.push(issue(E_PARSE, format!("{label}: {e}"))),
                }
                match read_ascii_grid(path) {
                    Ok(r) => {
                        let (rx0, ry0, rx1, ry1) = r.extent();
                        let (gx0, gy0, gx1, gy1) = grid.extent();
                        if !(rx0 < gx1 && gx0 < rx1 && ry0 < gy1 && gy0 < ry1) {
                            issues.push(issue(
                                E_OVERLAP,
                                format!("{label}: {} does not overlap grid `{}`", path.display(), grid.roi),
                            ));
                        }
                    }
                    Err(e) => issues.push(issue(E_PARSE, format!("{label}: {e}"))),
                }
            }
        }
        if let Some(l) = &self.sources.landsat {
            for role in [&l.nir, &l.red, &l.green] {
                if !l.bands.iter().any(|b| &b.name == role) {
                    issues.push(issue(
                        E_SCHEMA,
                        format!("landsat index role refers to unknown band `{role}`"),
                    ));
                }
            }
        }
        if let Some(r) = &self.sources.roads {
            check_paths("roads", &r.path, &mut issues);
        }
        if let Some(f) = &self.footprint {
            check_paths("footprint", f.path(), &mut issues);
            if let Some((min, max)) = f.area_bounds() {
                if !(min < max) {
                    issues.push(issue(
                        E_SCHEMA,
                        format!("footprint area bounds need min < max, got [{min}, {max}]"),
                    ));
                }
            }
            match f {
                FootprintSource::Dots {
                    mean_building_area,
                    cell_size,
                    ..
                } => {
                    for roi in &rois {
                        match mean_building_area.for_roi(roi) {
                            Some(a) if a > 0.0 && a.is_finite() => {}
                            Some(a) => issues.push(issue(
                                E_SCHEMA,
                                format!("mean_building_area for `{roi}` must be positive, got {a}"),
                            )),
                            None => issues.push(issue(E_SCHEMA, format!("no mean_building_area for ROI `{roi}`"))),
                        }
                    }
                    if !(*cell_size > 0.0 && *cell_size <= 1.0) {
                        issues.push(issue(
                            E_SCHEMA,
                            format!("dot mask cell_size must be in (0, 1], got {cell_size}"),
                        ));
                    }
                }
                FootprintSource::Probability { threshold, .. } => {
                    if !(0.0..=1.0).contains(threshold) {
                        issues.push(issue(E_SCHEMA, format!("threshold must be in [0, 1], got {threshold}")));
                    }
                }
                FootprintSource::Mask { .. } => {}
            }
            if !matches!(f, FootprintSource::Dots { .. }) {
                for p in f.path().all() {
                    if let Ok(Some(info)) = read_band_info(p) {
                        if info.frame != self.frame {
                            issues.push(issue(
                                E_FRAME,
                                format!(
                                    "footprint: {} is in frame `{}`, config frame is `{}`",
                                    p.display(),
                                    info.frame,
                                    self.frame
                                ),
                            ));
                        }
                    }
                }
            }
        }
        if let Some(s) = &self.survey {
            for p in [Some(&s.households), s.surveyed_tiles.as_ref(), s.exclusions.as_ref()]
                .into_iter()
                .flatten()
            {
                if !p.is_file() {
                    issues.push(issue(
                        E_MISSING_FILE,
                        format!("survey: file not found: {}", p.display()),
                    ));
                }
            }
        }
        let m = &self.model;
        if let Err(e) = m.hyperparams().validate() {
            issues.push(issue(E_SCHEMA, e.to_string()));
        }
        if m.outer_folds < 2 || m.inner_folds < 2 {
            issues.push(issue(E_SCHEMA, "outer_folds and inner_folds must be at least 2"));
        }
        if m.max_iter == 0 || !(m.tol > 0.0) {
            issues.push(issue(E_SCHEMA, "max_iter must be positive and tol > 0"));
        }
        let s = &self.sources;
        if self.footprint.is_none()
            && s.landsat.is_none()
            && s.hrsl.is_none()
            && s.land_cover.is_none()
            && s.ntl.is_none()
            && s.roads.is_none()
        {
            issues.push(issue(E_SCHEMA, "no feature source configured"));
        }
        issues
    }
}
