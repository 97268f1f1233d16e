//! Household survey aggregation to gridded counts, and tile exclusions.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::TileKey;
use crate::geo_io::PointRecord;
use crate::raster::TileGrid;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurveyRow {
    pub key: TileKey,
    pub observed: u64,
    pub psu: String,
    pub excluded: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SurveyTable {
    pub rows: Vec<SurveyRow>,
}

impl SurveyTable {
    /// Rows that take part in training and evaluation.
    pub fn active(&self) -> impl Iterator<Item = &SurveyRow> {
        self.rows.iter().filter(|r| !r.excluded)
    }

    pub fn total_persons(&self) -> u64 {
        self.rows.iter().map(|r| r.observed).sum()
    }
}

/// A tile known to have been surveyed, even if no household was found in it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SurveyedTile {
    pub key: TileKey,
    pub psu: Option<String>,
}

/// Tile to exclude; `roi` may be omitted when the id is unambiguous.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExclusionId {
    pub tile_id: u32,
    pub roi: Option<String>,
    pub reason: String,
}

fn persons(h: &PointRecord, index: usize) -> Result<u64> {
    let v = h
        .number("persons")
        .ok_or_else(|| Error::invalid(format!("household {} has no numeric `persons`", index + 1)))?;
    if !(v >= 0.0) || v.fract() != 0.0 || !v.is_finite() {
        return Err(Error::invalid(format!(
            "household {} has persons = {v}; counts must be non-negative integers",
            index + 1
        )));
    }
    Ok(v as u64)
}

/// Sums household persons per tile. Every tile holding a household becomes a
/// row, as does every listed surveyed tile (with 0 persons when empty). A
/// household is assigned to the first grid containing it.
pub fn grid_population(
    households: &[PointRecord],
    grids: &[TileGrid],
    surveyed: &[SurveyedTile],
) -> Result<SurveyTable> {
    let roi_rank: BTreeMap<&str, usize> = grids.iter().enumerate().map(|(i, g)| (g.roi.as_str(), i)).collect();
    // (roi rank, tile id) → (persons, psu labels seen)
    let mut cells: BTreeMap<(usize, u32), (u64, BTreeSet<String>)> = BTreeMap::new();
    let mut outside = Vec::new();

    for (i, h) in households.iter().enumerate() {
        let count = persons(h, i)?;
        let hit = grids
            .iter()
            .enumerate()
            .find_map(|(g, grid)| grid.tile_at(h.x, h.y).map(|t| (g, t)));
        let Some(slot) = hit else {
            outside.push(format!("#{} ({}, {})", i + 1, h.x, h.y));
            continue;
        };
        let entry = cells.entry(slot).or_default();
        entry.0 += count;
        if let Some(psu) = h.text("psu").filter(|p| !p.is_empty()) {
            entry.1.insert(psu);
        }
    }
    if !outside.is_empty() {
        return Err(Error::invalid(format!(
            "households outside every grid: {}",
            outside.join(", ")
        )));
    }

    let mut listed_psu: BTreeMap<(usize, u32), Option<String>> = BTreeMap::new();
    for s in surveyed {
        let &rank = roi_rank
            .get(s.key.roi.as_str())
            .ok_or_else(|| Error::invalid(format!("surveyed tile {} names an unknown ROI", s.key)))?;
        if !grids[rank].contains_id(s.key.tile_id) {
            return Err(Error::invalid(format!("surveyed tile {} is outside its grid", s.key)));
        }
        listed_psu.insert((rank, s.key.tile_id), s.psu.clone());
        cells.entry((rank, s.key.tile_id)).or_default();
    }

    let rows = cells
        .into_iter()
        .map(|((rank, tile), (observed, psus))| {
            let psu = listed_psu
                .get(&(rank, tile))
                .cloned()
                .flatten()
                .or_else(|| psus.into_iter().next())
                .unwrap_or_default();
            SurveyRow {
                key: TileKey::new(&grids[rank].roi, tile),
                observed,
                psu,
                excluded: false,
            }
        })
        .collect();
    Ok(SurveyTable { rows })
}

/// Flags the listed tiles as excluded. Unknown or ambiguous ids are errors.
pub fn apply_exclusions(table: &SurveyTable, exclusions: &[ExclusionId]) -> Result<SurveyTable> {
    let mut out = table.clone();
    for ex in exclusions {
        let matches: Vec<usize> = out
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.key.tile_id == ex.tile_id && ex.roi.as_ref().is_none_or(|roi| &r.key.roi == roi))
            .map(|(i, _)| i)
            .collect();
        match matches.as_slice() {
            [i] => out.rows[*i].excluded = true,
            [] => {
                let name = match &ex.roi {
                    Some(roi) => format!("{roi}:{}", ex.tile_id),
                    None => ex.tile_id.to_string(),
                };
                return Err(Error::invalid(format!(
                    "excluded tile {name} is not in the survey table"
                )));
            }
            _ => {
                return Err(Error::invalid(format!(
                    "excluded tile id {} exists in several ROIs; add a `roi` column",
                    ex.tile_id
                )))
            }
        }
    }
    Ok(out)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<std::fs::File>> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))
}

fn header_index(headers: &csv::StringRecord, name: &str) -> Option<usize> {
    headers.iter().position(|h| h.eq_ignore_ascii_case(name))
}

fn parse_tile_id(raw: &str, path: &Path, row: usize) -> Result<u32> {
    raw.parse::<u32>()
        .map_err(|_| Error::parse(path, row, format!("bad tile_id `{raw}`")))
}

/// Reads `tile_id,roi[,psu]`.
pub fn read_surveyed_tiles(path: &Path) -> Result<Vec<SurveyedTile>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 0, e.to_string()))?
        .clone();
    let (Some(id_col), Some(roi_col)) = (header_index(&headers, "tile_id"), header_index(&headers, "roi")) else {
        return Err(Error::parse(path, 0, "header must contain `tile_id` and `roi`"));
    };
    let psu_col = header_index(&headers, "psu");
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::parse(path, row, e.to_string()))?;
        out.push(SurveyedTile {
            key: TileKey::new(&rec[roi_col], parse_tile_id(&rec[id_col], path, row)?),
            psu: psu_col.map(|c| rec[c].to_string()).filter(|p| !p.is_empty()),
        });
    }
    Ok(out)
}

/// Reads `tile_id,reason` with an optional `roi` column.
pub fn read_exclusions(path: &Path) -> Result<Vec<ExclusionId>> {
    let mut reader = csv_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(path, 0, e.to_string()))?
        .clone();
    let Some(id_col) = header_index(&headers, "tile_id") else {
        return Err(Error::parse(path, 0, "header must contain `tile_id`"));
    };
    let roi_col = header_index(&headers, "roi");
    let reason_col = header_index(&headers, "reason");
    let mut out = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| Error::parse(path, row, e.to_string()))?;
        out.push(ExclusionId {
            tile_id: parse_tile_id(&rec[id_col], path, row)?,
            roi: roi_col.map(|c| rec[c].to_string()).filter(|r| !r.is_empty()),
            reason: reason_col.map(|c| rec[c].to_string()).unwrap_or_default(),
        });
    }
    Ok(out)
}
