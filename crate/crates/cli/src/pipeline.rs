use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use gridpop_core::evaluation::{self, MetricsReport};
use gridpop_core::features::{
    assemble_features, AssembleOptions, FeatureTable, LandCoverScheme, LandsatBands, RoiSources,
};
use gridpop_core::footprint::{
    area_per_tile, filter_components, rasterize_dots, threshold_mask, DotAnnotationSet, FootprintMask,
};
use gridpop_core::geo_io::{parse_lines_geojson, parse_points_csv, parse_points_geojson, rasterize_lines, PointRecord};
use gridpop_core::raster::{
    read_ascii_grid, resample_any, resample_average, resample_nearest, Raster, TileGrid, TileValues,
};
use gridpop_core::regression::{
    nested_cv_train, spatial_kfold, CvSettings, FittedModel, PooledPrediction, SolverOptions, TileLocation,
    TrainingData,
};
use gridpop_core::survey::{apply_exclusions, grid_population, read_exclusions, read_surveyed_tiles, SurveyTable};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{self, FootprintSource, Issue, LoadedConfig, Resampling, RunConfig, SourcePath};

/// Failure of a subcommand, split by exit code.
#[derive(Debug)]
pub enum CliError {
    Config(Vec<Issue>),
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    fn precondition(message: impl Into<String>) -> Self {
        CliError::Config(vec![Issue {
            code: config::E_PRECONDITION,
            message: message.into(),
        }])
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(issues) => {
                for (i, issue) in issues.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "{issue}")?;
                }
                Ok(())
            }
            CliError::Runtime(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<gridpop_core::Error> for CliError {
    fn from(e: gridpop_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

/// A loaded, validated configuration with overrides applied.
pub struct Run {
    pub config: RunConfig,
    raw: Value,
    pub seed: u64,
    pub out: PathBuf,
}

impl Run {
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Run> {
        let LoadedConfig { config, raw, .. } = config::load(path).map_err(CliError::Config)?;
        let issues = config.validate();
        if !issues.is_empty() {
            return Err(CliError::Config(issues));
        }
        Ok(Run {
            seed: overrides.seed.unwrap_or(config.seed),
            out: overrides.out.clone().unwrap_or_else(|| config.output_dir.clone()),
            config,
            raw,
        })
    }

    /// Provenance block embedded in every JSON artifact. The output location
    /// is deliberately absent so relocated runs stay byte-identical.
    fn echo(&self) -> Value {
        json!({ "config": self.raw, "seed": self.seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn ensure_out(&self) -> anyhow::Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn resample(mode: Resampling, raster: &Raster, grid: &TileGrid) -> gridpop_core::Result<TileValues> {
    match mode {
        Resampling::Average => resample_average(raster, grid),
        Resampling::Nearest => resample_nearest(raster, grid),
        Resampling::Any => resample_any(raster, grid),
    }
}

/// Reads each raster file once per run.
#[derive(Default)]
struct RasterCache {
    rasters: HashMap<PathBuf, Raster>,
}

impl RasterCache {
    fn get(&mut self, path: &Path) -> anyhow::Result<&Raster> {
        if !self.rasters.contains_key(path) {
            let r = read_ascii_grid(path)?;
            self.rasters.insert(path.to_path_buf(), r);
        }
        Ok(&self.rasters[path])
    }

    fn resampled(&mut self, src: &SourcePath, mode: Resampling, grid: &TileGrid) -> anyhow::Result<TileValues> {
        let path = src
            .for_roi(&grid.roi)
            .ok_or_else(|| anyhow!("no source path for ROI `{}`", grid.roi))?;
        let raster = self.get(path)?;
        resample(mode, raster, grid).with_context(|| format!("resampling {} onto `{}`", path.display(), grid.roi))
    }
}

fn read_points(path: &Path) -> anyhow::Result<Vec<PointRecord>> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    Ok(if ext == "geojson" || ext == "json" {
        parse_points_geojson(path)?
    } else {
        parse_points_csv(path)?
    })
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct FootprintSummary {
    pub mask_area: f64,
    pub tile_area_total: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dots_outside_grid: Option<usize>,
}

fn footprint_area(
    src: &FootprintSource,
    grid: &TileGrid,
    cache: &mut RasterCache,
) -> anyhow::Result<(Vec<f64>, FootprintSummary)> {
    let path = src
        .path()
        .for_roi(&grid.roi)
        .ok_or_else(|| anyhow!("no footprint path for ROI `{}`", grid.roi))?;
    let mut skipped = None;
    let mask: FootprintMask = match src {
        FootprintSource::Dots {
            mean_building_area,
            cell_size,
            ..
        } => {
            let area = mean_building_area
                .for_roi(&grid.roi)
                .ok_or_else(|| anyhow!("no mean_building_area for ROI `{}`", grid.roi))?;
            let dots = DotAnnotationSet::new(read_points(path)?, area)?;
            let (mask, n) = rasterize_dots(&dots, *cell_size, grid)?;
            skipped = Some(n);
            mask
        }
        FootprintSource::Probability { threshold, .. } => threshold_mask(cache.get(path)?, *threshold)?,
        FootprintSource::Mask { .. } => FootprintMask::from_raster(cache.get(path)?)?,
    };
    let mask = match src.area_bounds() {
        Some((min, max)) => filter_components(&mask, min, max)?,
        None => mask,
    };
    let area = area_per_tile(&mask, grid);
    let summary = FootprintSummary {
        mask_area: mask.set_count() as f64 * mask.cell_area(),
        tile_area_total: area.iter().sum(),
        dots_outside_grid: skipped,
    };
    Ok((area, summary))
}

/// Per-ROI inputs for feature assembly.
fn build_sources(
    config: &RunConfig,
    grids: &[TileGrid],
) -> anyhow::Result<(Vec<RoiSources>, BTreeMap<String, FootprintSummary>)> {
    let mut cache = RasterCache::default();
    let mut out = Vec::with_capacity(grids.len());
    let mut footprint = BTreeMap::new();
    let s = &config.sources;
    for grid in grids {
        let mut src = RoiSources::empty(grid.clone());
        if let Some(f) = &config.footprint {
            let (area, summary) = footprint_area(f, grid, &mut cache)?;
            src.building_area = Some(area);
            footprint.insert(grid.roi.clone(), summary);
        }
        if let Some(l) = &s.landsat {
            let mode = l.resampling.unwrap_or(Resampling::Average);
            let mut bands = Vec::with_capacity(l.bands.len());
            for b in &l.bands {
                bands.push((b.name.clone(), cache.resampled(&b.path, mode, grid)?));
            }
            src.landsat = Some(LandsatBands {
                bands,
                nir: l.nir.clone(),
                red: l.red.clone(),
                green: l.green.clone(),
            });
        }
        if let Some(r) = &s.hrsl {
            src.hrsl = Some(cache.resampled(&r.path, r.resampling.unwrap_or(Resampling::Any), grid)?);
        }
        if let Some(r) = &s.land_cover {
            src.land_cover = Some(cache.resampled(&r.path, r.resampling.unwrap_or(Resampling::Nearest), grid)?);
        }
        if let Some(r) = &s.ntl {
            src.ntl = Some(cache.resampled(&r.path, r.resampling.unwrap_or(Resampling::Nearest), grid)?);
        }
        if let Some(r) = &s.roads {
            let path = r
                .path
                .for_roi(&grid.roi)
                .ok_or_else(|| anyhow!("no roads path for ROI `{}`", grid.roi))?;
            let lines = parse_lines_geojson(path)?;
            src.roads = Some(rasterize_lines(&lines, grid));
        }
        out.push(src);
    }
    Ok((out, footprint))
}

fn assemble_options(config: &RunConfig) -> AssembleOptions {
    AssembleOptions {
        scheme: config
            .sources
            .land_cover
            .as_ref()
            .and_then(|l| l.scheme.clone())
            .unwrap_or_else(LandCoverScheme::copernicus_default),
        context: config.context,
        drop_ignored_landcover: config.drop_ignored_landcover,
    }
}

pub fn cmd_validate(run: &Run) -> CliResult<Value> {
    Ok(json!({
        "status": "ok",
        "frame": run.config.frame,
        "rois": run.config.roi_names(),
        "tiles": run.config.grids.iter().map(TileGrid::n_tiles).sum::<usize>(),
    }))
}

pub fn cmd_features(run: &Run) -> CliResult<FeatureTable> {
    let (sources, footprint) = build_sources(&run.config, &run.config.grids)?;
    let table = assemble_features(&sources, &assemble_options(&run.config))?;
    run.ensure_out()?;
    table.write_csv(&run.path("features.csv"))?;
    let manifest = json!({
        "provenance": run.echo(),
        "n_rows": table.n_rows(),
        "n_columns": table.n_columns(),
        "columns": table.columns.iter().map(|c| &c.info).collect::<Vec<_>>(),
        "footprint": footprint,
    });
    write_json(&run.path("features.manifest.json"), &manifest)?;
    log::info!("wrote {} rows x {} features", table.n_rows(), table.n_columns());
    Ok(table)
}

fn load_features(run: &Run) -> CliResult<FeatureTable> {
    let path = run.path("features.csv");
    if !path.is_file() {
        return Err(CliError::precondition(format!(
            "feature table {} not found; run `features` first",
            path.display()
        )));
    }
    Ok(FeatureTable::read_csv(&path)?)
}

/// Gridded survey counts with exclusions applied.
pub fn load_survey(config: &RunConfig) -> CliResult<SurveyTable> {
    let Some(s) = &config.survey else {
        return Err(CliError::Config(vec![Issue {
            code: config::E_SCHEMA,
            message: "config has no `survey` section".into(),
        }]));
    };
    let households = parse_points_csv(&s.households)?;
    let surveyed = match &s.surveyed_tiles {
        Some(p) => read_surveyed_tiles(p)?,
        None => Vec::new(),
    };
    let mut table = grid_population(&households, &config.grids, &surveyed)?;
    if let Some(p) = &s.exclusions {
        table = apply_exclusions(&table, &read_exclusions(p)?)?;
    }
    Ok(table)
}

fn training_data(run: &Run) -> CliResult<TrainingData> {
    let features = load_features(run)?;
    let survey = load_survey(&run.config)?;
    Ok(TrainingData::join(&features, &survey)?)
}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub models: Vec<FittedModel>,
    pub predictions: Vec<PooledPrediction>,
}

pub fn cmd_train(run: &Run) -> CliResult<TrainOutput> {
    let data = training_data(run)?;
    let grids: HashMap<&str, &TileGrid> = run.config.grids.iter().map(|g| (g.roi.as_str(), g)).collect();
    let locations: Vec<TileLocation> = data
        .keys
        .iter()
        .map(|k| {
            let (x, y) = grids[k.roi.as_str()].tile_center(k.tile_id);
            TileLocation { key: k.clone(), x, y }
        })
        .collect();
    let m = &run.config.model;
    let folds = spatial_kfold(&locations, m.outer_folds)?;
    let settings = CvSettings {
        grid: m.hyperparams(),
        inner_k: m.inner_folds,
        seed: run.seed,
        solver: SolverOptions {
            max_iter: m.max_iter,
            tol: m.tol,
        },
    };
    let cv = nested_cv_train(&data, &folds, &settings)?;

    let models_dir = run.path("models");
    fs::create_dir_all(&models_dir).with_context(|| format!("creating {}", models_dir.display()))?;
    for model in &cv.models {
        let fold = model.fold.expect("cv models carry their fold");
        write_json(
            &models_dir.join(format!("fold_{fold}.json")),
            &json!({ "provenance": run.echo(), "model": model }),
        )?;
    }
    evaluation::write_predictions_csv(&run.path("predictions.csv"), &cv.predictions)?;
    write_json(
        &run.path("train_summary.json"),
        &json!({
            "provenance": run.echo(),
            "n_tiles": data.keys.len(),
            "fold_sizes": folds.sizes(),
            "selection": cv.scores,
        }),
    )?;
    Ok(TrainOutput {
        models: cv.models,
        predictions: cv.predictions,
    })
}

pub fn cmd_evaluate(run: &Run) -> CliResult<MetricsReport> {
    let path = run.path("predictions.csv");
    if !path.is_file() {
        return Err(CliError::precondition(format!(
            "predictions {} not found; run `train` first",
            path.display()
        )));
    }
    let predictions = evaluation::read_predictions_csv(&path)?;
    let expected = if run.path("features.csv").is_file() && run.config.survey.is_some() {
        Some(training_data(run)?.keys)
    } else {
        None
    };
    let mut report = evaluation::pooled_report(&predictions, expected.as_deref())?;
    report.config = Some(run.echo());
    write_json(&run.path("report.json"), &report)?;
    fs::write(run.path("scatter.svg"), evaluation::scatter_svg(&predictions)).context("writing scatter.svg")?;
    fs::write(
        run.path("observed_vs_predicted.csv"),
        evaluation::observed_vs_predicted_csv(&predictions)?,
    )
    .context("writing observed_vs_predicted.csv")?;
    Ok(report)
}

/// Reads a model file written by `train`, or a bare model JSON.
pub fn read_model(path: &Path) -> CliResult<FittedModel> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::precondition(format!("cannot read model {}: {e}", path.display())))?;
    let value: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let model = value.get("model").cloned().unwrap_or(value);
    Ok(serde_json::from_value(model).with_context(|| format!("{} is not a model file", path.display()))?)
}

/// Predicted counts for every tile of one ROI; `None` where features are
/// incomplete. Also writes `predict_<roi>.asc`.
pub fn cmd_predict(run: &Run, model_path: &Path, roi: &str) -> CliResult<Vec<Option<f64>>> {
    let model = read_model(model_path)?;
    let Some(grid) = run.config.grids.iter().find(|g| g.roi == roi) else {
        return Err(CliError::Config(vec![Issue {
            code: config::E_SCHEMA,
            message: format!("unknown ROI `{roi}`"),
        }]));
    };
    let (sources, _) = build_sources(&run.config, std::slice::from_ref(grid))?;
    let table = assemble_features(&sources, &assemble_options(&run.config))?;
    let mut columns = Vec::with_capacity(model.feature_names.len());
    for name in &model.feature_names {
        match table.column(name) {
            Some(c) => columns.push(c),
            None => {
                return Err(CliError::Runtime(anyhow!(
                    "model feature `{name}` has no source in this configuration"
                )))
            }
        }
    }
    let mut values = vec![None; grid.n_tiles()];
    let mut row = vec![0.0; columns.len()];
    for (i, key) in table.keys.iter().enumerate() {
        for (slot, col) in row.iter_mut().zip(&columns) {
            *slot = col[i];
        }
        values[key.tile_id as usize] = Some(model.predict_count(&row));
    }
    if values.iter().all(Option::is_none) {
        return Err(CliError::Runtime(anyhow!("no tile of `{roi}` has complete features")));
    }
    run.ensure_out()?;
    let raster = grid.to_raster(&values, "predicted_population")?;
    gridpop_core::raster::write_ascii_grid(&raster, &run.path(&format!("predict_{roi}.asc")))?;
    Ok(values)
}
