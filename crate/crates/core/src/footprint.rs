//! Building footprint masks: dot-annotation discs, thresholded segmentation
//! output, component size filtering and per-tile footprint area.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geo_io::PointRecord;
use crate::raster::{Raster, TileGrid, DEFAULT_NODATA};

#[derive(Clone, Debug)]
pub struct DotAnnotationSet {
    pub points: Vec<PointRecord>,
    /// Average building area of the ROI, in m².
    pub mean_building_area: f64,
}

impl DotAnnotationSet {
    pub fn new(points: Vec<PointRecord>, mean_building_area: f64) -> Result<Self> {
        if !(mean_building_area > 0.0 && mean_building_area.is_finite()) {
            return Err(Error::invalid(format!(
                "mean building area must be positive, got {mean_building_area}"
            )));
        }
        Ok(DotAnnotationSet {
            points,
            mean_building_area,
        })
    }

    /// Radius of the disc whose area is the mean building area.
    pub fn radius(&self) -> f64 {
        (self.mean_building_area / PI).sqrt()
    }
}

/// Fine-resolution binary building mask, one byte per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct FootprintMask {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub cell_size: f64,
    pub cells: Vec<u8>,
}

impl FootprintMask {
    pub fn empty(width: usize, height: usize, origin_x: f64, origin_y: f64, cell_size: f64) -> Self {
        FootprintMask {
            width,
            height,
            origin_x,
            origin_y,
            cell_size,
            cells: vec![0; width * height],
        }
    }

    /// Mask covering the whole grid extent at `cell_size`, which must divide
    /// the tile size.
    pub fn for_grid(grid: &TileGrid, cell_size: f64) -> Result<Self> {
        if !(cell_size > 0.0 && cell_size <= 1.0) {
            return Err(Error::invalid(format!(
                "mask cell size must be in (0, 1] m, got {cell_size}"
            )));
        }
        let per_tile = grid.tile_size / cell_size;
        if (per_tile - per_tile.round()).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "mask cell size {cell_size} does not divide tile size {}",
                grid.tile_size
            )));
        }
        let per_tile = per_tile.round() as usize;
        Ok(Self::empty(
            grid.n_cols * per_tile,
            grid.n_rows * per_tile,
            grid.origin_x,
            grid.origin_y,
            cell_size,
        ))
    }

    /// Binary raster (0, 1 or nodata) as a mask; nodata becomes 0.
    pub fn from_raster(raster: &Raster) -> Result<Self> {
        let cells = raster
            .values
            .iter()
            .map(|&v| {
                if raster.is_nodata(v) || v == 0.0 {
                    Ok(0)
                } else if v == 1.0 {
                    Ok(1)
                } else {
                    Err(Error::invalid(format!(
                        "mask `{}` contains value {v}",
                        raster.band_name
                    )))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(FootprintMask {
            width: raster.width,
            height: raster.height,
            origin_x: raster.origin_x,
            origin_y: raster.origin_y,
            cell_size: raster.cell_size,
            cells,
        })
    }

    pub fn to_raster(&self, band_name: &str) -> Result<Raster> {
        Raster::new(
            self.width,
            self.height,
            self.origin_x,
            self.origin_y,
            self.cell_size,
            DEFAULT_NODATA,
            self.cells.iter().map(|&c| f64::from(c)).collect(),
            band_name,
        )
    }

    pub fn set_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c != 0).count()
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.cell_size,
            self.origin_y - (row as f64 + 0.5) * self.cell_size,
        )
    }
}

/// Burns a disc of the ROI's mean building area around every dot. A cell is
/// set when its center lies within the radius of some dot. Dots outside the
/// grid are skipped; the number skipped is returned alongside the mask.
pub fn rasterize_dots(dots: &DotAnnotationSet, cell_size: f64, grid: &TileGrid) -> Result<(FootprintMask, usize)> {
    let mut mask = FootprintMask::for_grid(grid, cell_size)?;
    let r = dots.radius();
    let r2 = r * r;
    let mut skipped = 0;
    for p in &dots.points {
        if grid.tile_at(p.x, p.y).is_none() {
            skipped += 1;
            continue;
        }
        // Index-space coordinates of the dot; cell k has its center at k + 0.5.
        let u = (p.x - mask.origin_x) / cell_size;
        let v = (mask.origin_y - p.y) / cell_size;
        let reach = r / cell_size;
        let c0 = (u - reach - 0.5).ceil().max(0.0) as usize;
        let c1 = ((u + reach - 0.5).floor()).min(mask.width as f64 - 1.0);
        let r0 = (v - reach - 0.5).ceil().max(0.0) as usize;
        let r1 = ((v + reach - 0.5).floor()).min(mask.height as f64 - 1.0);
        if c1 < 0.0 || r1 < 0.0 {
            continue;
        }
        for row in r0..=r1 as usize {
            for col in c0..=c1 as usize {
                let (cx, cy) = mask.cell_center(row, col);
                let (dx, dy) = (cx - p.x, cy - p.y);
                if dx * dx + dy * dy <= r2 {
                    mask.cells[row * mask.width + col] = 1;
                }
            }
        }
    }
    if skipped > 0 {
        log::warn!("{skipped} dot annotations outside grid `{}` were skipped", grid.roi);
    }
    Ok((mask, skipped))
}

/// Cells with probability `>= t` become buildings; nodata becomes 0.
pub fn threshold_mask(probabilities: &Raster, t: f64) -> Result<FootprintMask> {
    if !(t > 0.0 && t < 1.0) {
        return Err(Error::invalid(format!("threshold must be in (0, 1), got {t}")));
    }
    let mut cells = Vec::with_capacity(probabilities.values.len());
    for &p in &probabilities.values {
        if probabilities.is_nodata(p) {
            cells.push(0);
        } else if (0.0..=1.0).contains(&p) {
            cells.push(u8::from(p >= t));
        } else {
            return Err(Error::invalid(format!(
                "probability raster `{}` contains {p}, outside [0, 1]",
                probabilities.band_name
            )));
        }
    }
    Ok(FootprintMask {
        width: probabilities.width,
        height: probabilities.height,
        origin_x: probabilities.origin_x,
        origin_y: probabilities.origin_y,
        cell_size: probabilities.cell_size,
        cells,
    })
}

/// Component label per cell (0 = background) using 8-connectivity, and the
/// pixel count of each label (index 0 unused).
pub fn label_components(mask: &FootprintMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for start in 0..w * h {
        if mask.cells[start] == 0 || labels[start] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        let mut size = 0;
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            size += 1;
            let (row, col) = (i / w, i % w);
            for dr in -1isize..=1 {
                for dc in -1isize..=1 {
                    let (nr, nc) = (row as isize + dr, col as isize + dc);
                    if nr < 0 || nc < 0 || nr >= h as isize || nc >= w as isize {
                        continue;
                    }
                    let j = nr as usize * w + nc as usize;
                    if mask.cells[j] != 0 && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Erases 8-connected components whose area is below `min_area` or above
/// `max_area` (m², bounds inclusive).
pub fn filter_components(mask: &FootprintMask, min_area: f64, max_area: f64) -> Result<FootprintMask> {
    if !(min_area < max_area) {
        return Err(Error::invalid(format!(
            "component area bounds must satisfy min < max, got [{min_area}, {max_area}]"
        )));
    }
    let (labels, sizes) = label_components(mask);
    let cell_area = mask.cell_area();
    let keep: Vec<bool> = sizes
        .iter()
        .map(|&n| {
            let area = n as f64 * cell_area;
            area >= min_area && area <= max_area
        })
        .collect();
    let mut out = mask.clone();
    for (cell, &label) in out.cells.iter_mut().zip(&labels) {
        if label != 0 && !keep[label as usize] {
            *cell = 0;
        }
    }
    Ok(out)
}

/// Building area per tile: set cells whose centers fall in the tile times
/// the cell area.
pub fn area_per_tile(mask: &FootprintMask, grid: &TileGrid) -> Vec<f64> {
    let mut counts = vec![0u64; grid.n_tiles()];
    for row in 0..mask.height {
        let line = &mask.cells[row * mask.width..(row + 1) * mask.width];
        for (col, &c) in line.iter().enumerate() {
            if c == 0 {
                continue;
            }
            let (x, y) = mask.cell_center(row, col);
            if let Some(tile) = grid.tile_at(x, y) {
                counts[tile as usize] += 1;
            }
        }
    }
    let cell_area = mask.cell_area();
    counts.into_iter().map(|n| n as f64 * cell_area).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> TileGrid {
        TileGrid::new("r", 0.0, 200.0, 100.0, 2, 2).unwrap()
    }

    #[test]
    fn radius_from_mean_area() {
        let d = DotAnnotationSet::new(vec![], 28.274).unwrap();
        assert!((d.radius() - 3.0).abs() < 1e-4);
        assert!(DotAnnotationSet::new(vec![], 0.0).is_err());
    }

    #[test]
    fn no_dots_no_buildings() {
        let d = DotAnnotationSet::new(vec![], 30.0).unwrap();
        let (mask, skipped) = rasterize_dots(&d, 0.5, &grid()).unwrap();
        assert_eq!((mask.width, mask.height), (400, 400));
        assert_eq!((mask.set_count(), skipped), (0, 0));
    }

    #[test]
    fn single_dot_area_close_to_disc() {
        let d = DotAnnotationSet::new(vec![PointRecord::new(50.2, 150.3)], PI * 9.0).unwrap();
        let (mask, _) = rasterize_dots(&d, 0.5, &grid()).unwrap();
        let area = mask.set_count() as f64 * 0.25;
        assert!((area - PI * 9.0).abs() <= 0.1 * PI * 9.0, "area {area}");
    }

    #[test]
    fn dots_outside_are_skipped() {
        let d = DotAnnotationSet::new(vec![PointRecord::new(-10.0, 50.0), PointRecord::new(10.0, 10.0)], 20.0).unwrap();
        let (mask, skipped) = rasterize_dots(&d, 1.0, &grid()).unwrap();
        assert_eq!(skipped, 1);
        assert!(mask.set_count() > 0);
    }

    #[test]
    fn dot_area_error_shrinks_with_resolution() {
        // Mean absolute error over dot positions spread across a cell, since a
        // single position can be lucky at a coarse resolution.
        let area = 50.0;
        let offsets: Vec<(f64, f64)> = (0..64)
            .map(|i| ((i as f64 * 0.618_034).fract(), (i as f64 * 0.414_214).fract()))
            .collect();
        let errors: Vec<f64> = [1.0, 0.5, 0.25]
            .iter()
            .map(|&cs| {
                offsets
                    .iter()
                    .map(|&(dx, dy)| {
                        let d = DotAnnotationSet::new(vec![PointRecord::new(100.0 + dx, 100.0 + dy)], area).unwrap();
                        let (mask, _) = rasterize_dots(&d, cs, &grid()).unwrap();
                        (mask.set_count() as f64 * cs * cs - area).abs()
                    })
                    .sum::<f64>()
                    / offsets.len() as f64
            })
            .collect();
        assert!(errors[0] > errors[1] && errors[1] > errors[2], "{errors:?}");
    }

    #[test]
    fn threshold_rules() {
        let r = Raster::new(3, 1, 0.0, 1.0, 0.5, -9999.0, vec![0.4, 0.6, 0.5], "p").unwrap();
        assert_eq!(threshold_mask(&r, 0.5).unwrap().cells, vec![0, 1, 1]);
        let z = Raster::new(2, 1, 0.0, 1.0, 0.5, -9999.0, vec![0.0, -9999.0], "p").unwrap();
        assert_eq!(threshold_mask(&z, 0.5).unwrap().cells, vec![0, 0]);
        let bad = Raster::new(1, 1, 0.0, 1.0, 0.5, -9999.0, vec![1.5], "p").unwrap();
        assert!(threshold_mask(&bad, 0.5).is_err());
        assert!(threshold_mask(&r, 1.0).is_err());
    }

    fn mask_from(rows: &[&str], cs: f64) -> FootprintMask {
        let w = rows[0].len();
        let cells = rows
            .iter()
            .flat_map(|r| r.bytes().map(|b| u8::from(b == b'#')))
            .collect();
        FootprintMask {
            width: w,
            height: rows.len(),
            origin_x: 0.0,
            origin_y: rows.len() as f64 * cs,
            cell_size: cs,
            cells,
        }
    }

    #[test]
    fn small_component_is_erased() {
        let m = mask_from(&["##..", "##..", "....", "...."], 0.5);
        assert_eq!(filter_components(&m, 10.0, 100.0).unwrap().set_count(), 0);
    }

    #[test]
    fn component_at_exact_bound_is_kept() {
        // 40 cells of 0.25 m² = 10 m²
        let row = "#".repeat(40);
        let m = mask_from(&[row.as_str()], 0.5);
        assert_eq!(filter_components(&m, 10.0, 20.0).unwrap().set_count(), 40);
        assert_eq!(filter_components(&m, 1.0, 10.0).unwrap().set_count(), 40);
        assert_eq!(filter_components(&m, 1.0, 9.99).unwrap().set_count(), 0);
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let m = mask_from(&["#...", ".#..", "..#.", "...#"], 1.0);
        let (_, sizes) = label_components(&m);
        assert_eq!(sizes, vec![0, 4]);
        assert_eq!(filter_components(&m, 4.0, 5.0).unwrap().set_count(), 4);
    }

    #[test]
    fn empty_mask_stays_empty() {
        let m = FootprintMask::empty(5, 5, 0.0, 5.0, 1.0);
        assert_eq!(filter_components(&m, 1.0, 2.0).unwrap(), m);
        assert!(filter_components(&m, 2.0, 1.0).is_err());
    }

    #[test]
    fn area_examples() {
        let g = TileGrid::new("r", 0.0, 100.0, 100.0, 1, 1).unwrap();
        let mut m = FootprintMask::for_grid(&g, 0.5).unwrap();
        for c in &mut m.cells[..40] {
            *c = 1;
        }
        assert_eq!(area_per_tile(&m, &g), vec![10.0]);
        let full = FootprintMask {
            cells: vec![1; 200 * 200],
            ..m.clone()
        };
        assert_eq!(area_per_tile(&full, &g), vec![10_000.0]);
        let empty = FootprintMask::for_grid(&g, 0.5).unwrap();
        assert_eq!(area_per_tile(&empty, &g), vec![0.0]);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn area_is_conserved(cells in proptest::collection::vec(proptest::bool::weighted(0.3), 40 * 40)) {
            let g = TileGrid::new("r", 0.0, 20.0, 10.0, 2, 2).unwrap();
            let m = FootprintMask {
                width: 40, height: 40, origin_x: 0.0, origin_y: 20.0, cell_size: 0.5,
                cells: cells.iter().map(|&b| u8::from(b)).collect(),
            };
            let total: f64 = area_per_tile(&m, &g).iter().sum();
            prop_assert_eq!(total, m.set_count() as f64 * 0.25);
        }

        #[test]
        fn filtering_is_idempotent(
            cells in proptest::collection::vec(proptest::bool::weighted(0.35), 30 * 30),
            min in 0.0..3.0f64, span in 0.5..20.0f64,
        ) {
            let m = FootprintMask {
                width: 30, height: 30, origin_x: 0.0, origin_y: 15.0, cell_size: 0.5,
                cells: cells.iter().map(|&b| u8::from(b)).collect(),
            };
            let once = filter_components(&m, min, min + span).unwrap();
            let twice = filter_components(&once, min, min + span).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
