//! Pseudo whole-slide rasters and a synthetic tissue-slide generator.

use crate::{Result, WsiError};
use stainlab_core::synth::beer_lambert_pixel;
use stainlab_core::{CoreError, ImagePatch, Magnification, Rng, StainMatrix};
use std::path::Path;

/// A large in-memory RGB raster standing in for a scanned slide.
#[derive(Debug, Clone, PartialEq)]
pub struct PseudoSlide {
    pub base_magnification: Magnification,
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl PseudoSlide {
    pub fn new(
        width: usize,
        height: usize,
        base_magnification: Magnification,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if width == 0 || height == 0 || width % 64 != 0 || height % 64 != 0 {
            return Err(WsiError::InvalidArgument(format!(
                "slide dimensions must be positive multiples of 64, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height * 3 {
            return Err(WsiError::InvalidArgument(format!(
                "expected {} pixel values, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(WsiError::InvalidArgument("pixels must lie in [0, 1]".into()));
        }
        Ok(PseudoSlide {
            base_magnification,
            width,
            height,
            pixels,
        })
    }

    pub fn white(width: usize, height: usize) -> Result<Self> {
        PseudoSlide::new(width, height, Magnification::X20, vec![1.0; width * height * 3])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let base = (y * self.width + x) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    /// Copies a square region out as a patch.
    pub fn extract_tile(&self, x: usize, y: usize, side: usize) -> Result<ImagePatch> {
        if x + side > self.width || y + side > self.height {
            return Err(WsiError::InvalidArgument(format!(
                "tile ({x}, {y}) side {side} exceeds slide bounds"
            )));
        }
        let mut pixels = Vec::with_capacity(side * side * 3);
        for ty in 0..side {
            let row = ((y + ty) * self.width + x) * 3;
            pixels.extend_from_slice(&self.pixels[row..row + side * 3]);
        }
        Ok(ImagePatch::new(
            format!("tile-{x}-{y}"),
            side,
            self.base_magnification,
            pixels,
        )
        .map_err(WsiError::Core)?)
    }

    /// Writes a patch back at (x, y); exact placement, no blending.
    pub fn place_tile(&mut self, x: usize, y: usize, tile: &ImagePatch) -> Result<()> {
        let side = tile.side();
        if x + side > self.width || y + side > self.height {
            return Err(WsiError::InvalidArgument(format!(
                "tile ({x}, {y}) side {side} exceeds slide bounds"
            )));
        }
        for ty in 0..side {
            let src = ty * side * 3;
            let dst = ((y + ty) * self.width + x) * 3;
            self.pixels[dst..dst + side * 3].copy_from_slice(&tile.pixels()[src..src + side * 3]);
        }
        Ok(())
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut img = image::ImageBuffer::<image::Rgb<u8>, Vec<u8>>::new(
            self.width as u32,
            self.height as u32,
        );
        for (i, px) in self.pixels.chunks_exact(3).enumerate() {
            let x = (i % self.width) as u32;
            let y = (i / self.width) as u32;
            img.put_pixel(
                x,
                y,
                image::Rgb([
                    stainlab_core::io::quantize(px[0]),
                    stainlab_core::io::quantize(px[1]),
                    stainlab_core::io::quantize(px[2]),
                ]),
            );
        }
        img.save(path).map_err(|e| {
            WsiError::Core(CoreError::Decode {
                path: path.to_path_buf(),
                reason: e.to_string(),
            })
        })
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = image::open(path)
            .map_err(|e| {
                WsiError::Core(CoreError::Decode {
                    path: path.to_path_buf(),
                    reason: e.to_string(),
                })
            })?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let mut pixels = Vec::with_capacity((w * h * 3) as usize);
        for px in img.pixels() {
            pixels.push(stainlab_core::io::dequantize(px[0]));
            pixels.push(stainlab_core::io::dequantize(px[1]));
            pixels.push(stainlab_core::io::dequantize(px[2]));
        }
        PseudoSlide::new(w as usize, h as usize, Magnification::X20, pixels)
    }
}

/// Synthetic slide generator settings.
#[derive(Debug, Clone)]
pub struct SlideConfig {
    pub width: usize,
    pub height: usize,
    pub n_tissue_regions: usize,
    pub stain_matrix: StainMatrix,
    pub seed: u64,
}

impl Default for SlideConfig {
    fn default() -> Self {
        SlideConfig {
            width: 1024,
            height: 1024,
            n_tissue_regions: 3,
            stain_matrix: StainMatrix::he_reference(),
            seed: 0,
        }
    }
}

/// Builds a white slide with stained tissue regions, returning the slide and
/// the ground-truth tissue footprint (the generator's own region mask).
pub fn synth_slide(config: &SlideConfig) -> Result<(PseudoSlide, Vec<bool>)> {
    let (w, h) = (config.width, config.height);
    let mut rng = Rng::from_seed_stream(config.seed, 0x736c_6964);

    // Large region envelopes.
    struct Region {
        cx: f64,
        cy: f64,
        sigma: f64,
    }
    let regions: Vec<Region> = (0..config.n_tissue_regions)
        .map(|_| Region {
            cx: rng.range(0.2 * w as f64, 0.8 * w as f64),
            cy: rng.range(0.2 * h as f64, 0.8 * h as f64),
            sigma: rng.range(0.10, 0.18) * w.min(h) as f64,
        })
        .collect();

    // Stain texture bumps scattered across the whole slide; the region
    // envelope gates where they become visible.
    struct Bump {
        cx: f64,
        cy: f64,
        amp: f64,
        sigma: f64,
        stain: usize,
    }
    let n_bumps = (w / 16).max(8) * 2;
    let bumps: Vec<Bump> = (0..n_bumps)
        .map(|i| Bump {
            cx: rng.range(0.0, w as f64),
            cy: rng.range(0.0, h as f64),
            amp: rng.range(0.5, 1.2),
            sigma: rng.range(0.02, 0.06) * w.min(h) as f64,
            stain: i % 2,
        })
        .collect();

    let mut pixels = vec![1.0f64; w * h * 3];
    let mut footprint = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            let envelope: f64 = regions
                .iter()
                .map(|r| {
                    let dx = x as f64 - r.cx;
                    let dy = y as f64 - r.cy;
                    (-(dx * dx + dy * dy) / (2.0 * r.sigma * r.sigma)).exp()
                })
                .sum::<f64>()
                .min(1.0);
            // Smoothstep gate centered on the 0.5 footprint level so the
            // visible stain boundary tracks the ground-truth mask.
            let t = ((envelope - 0.35) / 0.3).clamp(0.0, 1.0);
            let gate = t * t * (3.0 - 2.0 * t);
            if gate <= 0.0 {
                continue; // stays white
            }
            let mut conc = [0.25 * gate, 0.18 * gate];
            for b in &bumps {
                let dx = x as f64 - b.cx;
                let dy = y as f64 - b.cy;
                let v = b.amp * (-(dx * dx + dy * dy) / (2.0 * b.sigma * b.sigma)).exp();
                conc[b.stain] += v * gate;
            }
            let rgb = beer_lambert_pixel(&config.stain_matrix, conc);
            let base = (y * w + x) * 3;
            pixels[base] = rgb[0];
            pixels[base + 1] = rgb[1];
            pixels[base + 2] = rgb[2];
            if envelope > 0.5 {
                footprint[y * w + x] = true;
            }
        }
    }
    let slide = PseudoSlide::new(w, h, Magnification::X20, pixels)?;
    Ok((slide, footprint))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_invariants() {
        assert!(PseudoSlide::white(100, 64).is_err());
        assert!(PseudoSlide::white(64, 64).is_ok());
    }

    #[test]
    fn tile_roundtrip_is_exact() {
        let config = SlideConfig {
            width: 128,
            height: 128,
            ..Default::default()
        };
        let (mut slide, _) = synth_slide(&config).unwrap();
        let tile = slide.extract_tile(64, 0, 64).unwrap();
        slide.place_tile(64, 0, &tile).unwrap();
        let again = slide.extract_tile(64, 0, 64).unwrap();
        assert_eq!(tile.pixels(), again.pixels());
    }

    #[test]
    fn synth_slide_has_tissue_and_background() {
        let (slide, footprint) = synth_slide(&SlideConfig {
            width: 256,
            height: 256,
            ..Default::default()
        })
        .unwrap();
        let n_tissue = footprint.iter().filter(|&&t| t).count();
        assert!(n_tissue > 0, "no tissue generated");
        assert!(n_tissue < 256 * 256, "no background left");
        // Some pixel inside the footprint is visibly stained.
        let idx = footprint.iter().position(|&t| t).unwrap();
        let (x, y) = (idx % 256, idx / 256);
        let px = slide.rgb(x, y);
        assert!(px[0] < 0.95 || px[1] < 0.95 || px[2] < 0.95);
    }

    #[test]
    fn generator_is_deterministic() {
        let config = SlideConfig {
            width: 128,
            height: 128,
            ..Default::default()
        };
        let (a, fa) = synth_slide(&config).unwrap();
        let (b, fb) = synth_slide(&config).unwrap();
        assert_eq!(a.pixels(), b.pixels());
        assert_eq!(fa, fb);
    }
}
