//! Deterministic non-overlapping tile grids over the masked region.

use crate::mask::Mask;
use crate::slide::PseudoSlide;
use crate::{Result, WsiError};
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TileGrid {
    pub tile_side: usize,
    /// Top-left corners, row-major; every coordinate is a multiple of
    /// `tile_side`.
    pub coordinates: Vec<(usize, usize)>,
    /// Planned tiles as a fraction of the full grid.
    pub mask_coverage: f64,
}

/// Plans the axis-aligned grid; tiles whose mask overlap is below
/// `min_tissue_fraction` are excluded.
pub fn plan_tiles(
    slide: &PseudoSlide,
    mask: &Mask,
    tile_side: usize,
    min_tissue_fraction: f64,
) -> Result<TileGrid> {
    if tile_side == 0 || tile_side > slide.width().min(slide.height()) {
        return Err(WsiError::InvalidArgument(format!(
            "tile side {tile_side} does not fit the slide"
        )));
    }
    let cols = slide.width() / tile_side;
    let rows = slide.height() / tile_side;
    let scale_x = mask.width as f64 / slide.width() as f64;
    let scale_y = mask.height as f64 / slide.height() as f64;

    let mut coordinates = Vec::new();
    for row in 0..rows {
        for col in 0..cols {
            let x = col * tile_side;
            let y = row * tile_side;
            // Mask cells covered by this tile.
            let mx0 = (x as f64 * scale_x).floor() as usize;
            let my0 = (y as f64 * scale_y).floor() as usize;
            let mx1 = (((x + tile_side) as f64 * scale_x).ceil() as usize).min(mask.width);
            let my1 = (((y + tile_side) as f64 * scale_y).ceil() as usize).min(mask.height);
            let mut tissue = 0usize;
            let mut total = 0usize;
            for my in my0..my1 {
                for mx in mx0..mx1 {
                    tissue += mask.at(mx, my) as usize;
                    total += 1;
                }
            }
            let fraction = tissue as f64 / total.max(1) as f64;
            if fraction >= min_tissue_fraction {
                coordinates.push((x, y));
            }
        }
    }
    let mask_coverage = coordinates.len() as f64 / (rows * cols).max(1) as f64;
    Ok(TileGrid {
        tile_side,
        coordinates,
        mask_coverage,
    })
}

impl TileGrid {
    /// Pairs of adjacent planned tiles (sharing a vertical or horizontal
    /// edge), as indices into `coordinates`.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for (i, &(x, y)) in self.coordinates.iter().enumerate() {
            for (j, &(ox, oy)) in self.coordinates.iter().enumerate().skip(i + 1) {
                let right = ox == x + self.tile_side && oy == y;
                let below = oy == y + self.tile_side && ox == x;
                if right || below {
                    pairs.push((i, j));
                }
            }
        }
        pairs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::tissue_mask;
    use crate::slide::{synth_slide, SlideConfig};

    fn full_mask(w: usize, h: usize) -> Mask {
        Mask {
            width: w,
            height: h,
            data: vec![true; w * h],
        }
    }

    #[test]
    fn full_tissue_slide_gets_complete_grid() {
        let slide = PseudoSlide::white(1024, 1024).unwrap();
        let mask = full_mask(128, 128);
        let grid = plan_tiles(&slide, &mask, 512, 0.1).unwrap();
        assert_eq!(
            grid.coordinates,
            vec![(0, 0), (512, 0), (0, 512), (512, 512)]
        );
        assert_eq!(grid.mask_coverage, 1.0);
        assert_eq!(grid.adjacent_pairs().len(), 4);
    }

    #[test]
    fn empty_mask_gives_empty_grid() {
        let slide = PseudoSlide::white(512, 512).unwrap();
        let mask = tissue_mask(&slide, 8).unwrap();
        let grid = plan_tiles(&slide, &mask, 128, 0.1).unwrap();
        assert!(grid.coordinates.is_empty());
    }

    #[test]
    fn grid_matches_bruteforce_enumeration() {
        let config = SlideConfig {
            width: 512,
            height: 512,
            ..Default::default()
        };
        let (slide, _) = synth_slide(&config).unwrap();
        let mask = tissue_mask(&slide, 8).unwrap();
        let tile = 64;
        let grid = plan_tiles(&slide, &mask, tile, 0.1).unwrap();

        // Oracle: enumerate every grid cell and recompute the fraction from
        // the mask directly (mask cells are 8x8 pixels; tile = 8x8 cells).
        let mut expected = Vec::new();
        for row in 0..(512 / tile) {
            for col in 0..(512 / tile) {
                let (x, y) = (col * tile, row * tile);
                let mut tissue = 0;
                let mut total = 0;
                for my in (y / 8)..((y + tile) / 8) {
                    for mx in (x / 8)..((x + tile) / 8) {
                        tissue += mask.at(mx, my) as usize;
                        total += 1;
                    }
                }
                if tissue as f64 / total as f64 >= 0.1 {
                    expected.push((x, y));
                }
            }
        }
        assert_eq!(grid.coordinates, expected);

        // All coordinates are multiples of the tile side, sorted row-major.
        for &(x, y) in &grid.coordinates {
            assert_eq!(x % tile, 0);
            assert_eq!(y % tile, 0);
        }
    }

    #[test]
    fn oversized_tile_is_error() {
        let slide = PseudoSlide::white(256, 256).unwrap();
        let mask = full_mask(32, 32);
        assert!(plan_tiles(&slide, &mask, 512, 0.1).is_err());
    }
}
