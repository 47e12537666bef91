use crate::{CoreError, Result};
use serde::{Deserialize, Serialize};

/// Acquisition magnification of a patch or slide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Magnification {
    #[serde(rename = "20x")]
    X20,
    #[serde(rename = "40x")]
    X40,
}

/// Location of a patch inside the slide it was extracted from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchOrigin {
    pub slide_id: String,
    pub x: usize,
    pub y: usize,
}

/// A square RGB raster with values in [0, 1], the universal currency of the
/// pipeline. Pixels are stored row-major, interleaved RGB.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub id: String,
    pub magnification: Magnification,
    pub origin: Option<PatchOrigin>,
    side: usize,
    pixels: Vec<f64>,
}

impl ImagePatch {
    /// Builds a patch, validating the [0, 1] pixel invariant and the square
    /// shape contract.
    pub fn new(
        id: impl Into<String>,
        side: usize,
        magnification: Magnification,
        pixels: Vec<f64>,
    ) -> Result<Self> {
        if side == 0 {
            return Err(CoreError::InvalidArgument("patch side must be positive".into()));
        }
        if pixels.len() != side * side * 3 {
            return Err(CoreError::InvalidArgument(format!(
                "expected {} pixel values for side {side}, got {}",
                side * side * 3,
                pixels.len()
            )));
        }
        if pixels.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(CoreError::Invariant("pixel values must lie in [0, 1]".into()));
        }
        Ok(ImagePatch {
            id: id.into(),
            side,
            magnification,
            origin: None,
            pixels,
        })
    }

    /// Like [`ImagePatch::new`] but clamps out-of-range values instead of
    /// rejecting them. For outputs of numeric transforms.
    pub fn from_pixels_clamped(
        id: impl Into<String>,
        side: usize,
        magnification: Magnification,
        mut pixels: Vec<f64>,
    ) -> Result<Self> {
        for v in &mut pixels {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(id, side, magnification, pixels)
    }

    /// Uniform-color patch.
    pub fn constant(
        id: impl Into<String>,
        side: usize,
        magnification: Magnification,
        rgb: [f64; 3],
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(side * side * 3);
        for _ in 0..side * side {
            pixels.extend_from_slice(&rgb);
        }
        Self::new(id, side, magnification, pixels)
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn n_pixels(&self) -> usize {
        self.side * self.side
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// RGB triple at (x, y).
    pub fn rgb(&self, x: usize, y: usize) -> [f64; 3] {
        let base = (y * self.side + x) * 3;
        [self.pixels[base], self.pixels[base + 1], self.pixels[base + 2]]
    }

    /// Per-channel arithmetic mean.
    pub fn mean_rgb(&self) -> [f64; 3] {
        let mut sums = [0.0f64; 3];
        for px in self.pixels.chunks_exact(3) {
            sums[0] += px[0];
            sums[1] += px[1];
            sums[2] += px[2];
        }
        let n = self.n_pixels() as f64;
        [sums[0] / n, sums[1] / n, sums[2] / n]
    }

    /// Same raster under a different id.
    pub fn with_id(&self, id: impl Into<String>) -> Self {
        let mut out = self.clone();
        out.id = id.into();
        out
    }
}
