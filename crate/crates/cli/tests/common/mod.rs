//! Synthetic two-ROI world with known building footprints and population.
//!
//! Each 100 m tile holds between 16 and 64 buildings of 80 m² placed on a
//! jittered 8×8 lattice (discs never touch), and the tile population is
//! Poisson with mean `A * footprint_area / 1000`. Public rasters carry weak,
//! noisy traces of building density.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use gridpop_core::raster::{write_ascii_grid, write_band_info, BandInfo, BandKind, Raster, TileGrid};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde_json::json;

pub const FRAME: &str = "LOCAL_M";
pub const A: f64 = 100.0;
pub const BUILDING_AREA: f64 = 80.0;
pub const MIN_BUILDINGS: usize = 16;
pub const MAX_BUILDINGS: usize = 64;
const SLOTS: usize = 8;

pub struct World {
    pub dir: PathBuf,
    pub grids: Vec<TileGrid>,
    /// Buildings per tile, per ROI in grid order.
    pub buildings: Vec<Vec<usize>>,
    pub population: Vec<Vec<u64>>,
    pub households: usize,
}

impl World {
    pub fn config(&self, variant: &str) -> PathBuf {
        self.dir.join(format!("{variant}.json"))
    }

    pub fn total_population(&self) -> u64 {
        self.population.iter().flatten().sum()
    }
}

pub fn grids() -> Vec<TileGrid> {
    vec![
        TileGrid::new("north", 0.0, 1000.0, 100.0, 10, 10).unwrap(),
        TileGrid::new("south", 1500.0, 1000.0, 100.0, 10, 10).unwrap(),
    ]
}

fn write_raster(dir: &Path, name: &str, raster: &Raster, kind: BandKind) {
    let path = dir.join(format!("{name}.asc"));
    write_ascii_grid(raster, &path).unwrap();
    write_band_info(
        &path,
        &BandInfo {
            band_name: name.to_string(),
            frame: FRAME.to_string(),
            kind,
        },
    )
    .unwrap();
}

/// Raster covering both ROIs with a margin; `f(x, y, rng)` gives cell values.
fn cover(cell: f64, name: &str, rng: &mut ChaCha8Rng, mut f: impl FnMut(f64, f64, &mut ChaCha8Rng) -> f64) -> Raster {
    let (x0, y0, x1, y1) = (-3.0 * cell, 1000.0 + 3.0 * cell, 2500.0 + 3.0 * cell, -3.0 * cell);
    let width = ((x1 - x0) / cell).ceil() as usize;
    let height = ((y0 - y1) / cell).ceil() as usize;
    let mut values = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let x = x0 + (c as f64 + 0.5) * cell;
            let y = y0 - (r as f64 + 0.5) * cell;
            values.push(f(x, y, rng));
        }
    }
    Raster::new(width, height, x0, y0, cell, -9999.0, values, name).unwrap()
}

pub fn generate(dir: &Path, seed: u64) -> World {
    fs::create_dir_all(dir).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grids = grids();
    let radius = (BUILDING_AREA / std::f64::consts::PI).sqrt();
    let slot = 100.0 / SLOTS as f64;

    let mut dots = String::from("x,y\n");
    let mut households = String::from("x,y,persons,psu\n");
    let mut n_households = 0;
    let mut buildings = Vec::new();
    let mut population = Vec::new();
    for grid in &grids {
        let mut b_roi = Vec::new();
        let mut p_roi = Vec::new();
        for id in 0..grid.n_tiles() as u32 {
            let (row, col) = grid.row_col(id);
            let tx = grid.origin_x + col as f64 * grid.tile_size;
            let ty = grid.origin_y - row as f64 * grid.tile_size;
            let k = rng.gen_range(MIN_BUILDINGS..=MAX_BUILDINGS);
            for s in sample(&mut rng, SLOTS * SLOTS, k) {
                let (sr, sc) = (s / SLOTS, s % SLOTS);
                let x = tx + (sc as f64 + 0.5) * slot + rng.gen_range(-1.0..1.0);
                let y = ty - (sr as f64 + 0.5) * slot + rng.gen_range(-1.0..1.0);
                writeln!(dots, "{x},{y}").unwrap();
            }
            let mean = A * k as f64 * BUILDING_AREA / 1000.0;
            let persons = Poisson::new(mean).unwrap().sample(&mut rng) as u64;
            let mut left = persons;
            while left > 0 {
                let h = rng.gen_range(1..=7u64).min(left);
                left -= h;
                let x = tx + rng.gen_range(1.0..grid.tile_size - 1.0);
                let y = ty - rng.gen_range(1.0..grid.tile_size - 1.0);
                writeln!(households, "{x},{y},{h},{}-{id}", grid.roi).unwrap();
                n_households += 1;
            }
            b_roi.push(k);
            p_roi.push(persons);
        }
        buildings.push(b_roi);
        population.push(p_roi);
    }
    debug_assert!(radius + 1.0 < slot / 2.0);
    fs::write(dir.join("dots.csv"), dots).unwrap();
    fs::write(dir.join("households.csv"), households).unwrap();

    let density = |x: f64, y: f64| -> f64 {
        grids
            .iter()
            .zip(&buildings)
            .find_map(|(g, b)| g.tile_at(x, y).map(|t| b[t as usize] as f64 / MAX_BUILDINGS as f64))
            .unwrap_or(0.0)
    };

    let noise = Normal::new(0.0, 0.03).unwrap();
    for band in 1..=10 {
        // red-ish bands brighten with built-up density, nir darkens
        let weight = match band {
            4 => 0.05,
            5 => -0.05,
            _ => 0.01 * (band as f64 - 5.0) / 5.0,
        };
        let name = format!("b{band}");
        let r = cover(30.0, &name, &mut rng, |x, y, rng| {
            0.15 + 0.02 * band as f64 + weight * density(x, y) + noise.sample(rng)
        });
        write_raster(dir, &name, &r, BandKind::Continuous);
    }
    let r = cover(30.0, "hrsl", &mut rng, |x, y, rng| {
        f64::from(u8::from(rng.gen::<f64>() < 0.1 + 0.3 * density(x, y)))
    });
    write_raster(dir, "hrsl", &r, BandKind::Binary);
    let r = cover(100.0, "lcc", &mut rng, |x, y, rng| {
        if density(x, y) > 0.85 {
            50.0
        } else {
            [20.0, 30.0, 40.0, 50.0, 121.0, 126.0][rng.gen_range(0..6)]
        }
    });
    write_raster(dir, "lcc", &r, BandKind::Categorical);
    let r = cover(750.0, "ntl", &mut rng, |x, _, rng| {
        let base = if x < 1250.0 { 3.0 } else { 2.0 };
        base + rng.gen_range(0.0..1.0)
    });
    write_raster(dir, "ntl", &r, BandKind::Continuous);

    let mut features = Vec::new();
    for g in &grids {
        let (x0, _, x1, _) = g.extent();
        features.push(json!({
            "type": "Feature",
            "properties": {"highway": "primary"},
            "geometry": {"type": "LineString", "coordinates": [[x0, 450.0], [x1, 450.0]]}
        }));
        features.push(json!({
            "type": "Feature",
            "properties": {"highway": "track"},
            "geometry": {"type": "MultiLineString", "coordinates": [
                [[x0 + 530.0, 0.0], [x0 + 530.0, 1000.0]],
                [[x0 + 120.0, 880.0], [x0 + 410.0, 640.0]]
            ]}
        }));
    }
    fs::write(
        dir.join("roads.geojson"),
        json!({"type": "FeatureCollection", "features": features}).to_string(),
    )
    .unwrap();

    let grid_json: Vec<_> = grids.iter().map(|g| serde_json::to_value(g).unwrap()).collect();
    let public = json!({
        "landsat": {
            "bands": (1..=10).map(|b| json!({"name": format!("b{b}"), "path": format!("b{b}.asc")})).collect::<Vec<_>>(),
            "nir": "b5", "red": "b4", "green": "b3"
        },
        "hrsl": {"path": "hrsl.asc"},
        "land_cover": {"path": "lcc.asc"},
        "ntl": {"path": "ntl.asc"},
        "roads": {"path": "roads.geojson"}
    });
    let footprint = json!({
        "kind": "dots", "path": "dots.csv", "mean_building_area": BUILDING_AREA, "cell_size": 1.0
    });
    let survey = json!({"households": "households.csv"});
    let variants = [
        ("full", Some(public.clone()), Some(footprint.clone())),
        ("public", Some(public), None),
        ("bfi", None, Some(footprint)),
    ];
    for (name, sources, fp) in variants {
        let mut cfg = json!({
            "frame": FRAME,
            "grids": grid_json,
            "survey": survey,
            "seed": 17,
            "output_dir": format!("out_{name}"),
        });
        if let Some(s) = sources {
            cfg["sources"] = s;
        }
        if let Some(f) = fp {
            cfg["footprint"] = f;
        }
        fs::write(
            dir.join(format!("{name}.json")),
            serde_json::to_string_pretty(&cfg).unwrap(),
        )
        .unwrap();
    }

    World {
        dir: dir.to_path_buf(),
        grids,
        buildings,
        population,
        households: n_households,
    }
}
