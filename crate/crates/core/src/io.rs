//! Lossless PNG persistence for patches.
//!
//! Pixels are quantized to 8-bit exactly once at save time; a load/save
//! round-trip after the first save is bit-exact because `round(v*255)/255`
//! is a fixed point of the quantizer.

use crate::{CoreError, ImagePatch, Magnification, Result};
use image::{ImageBuffer, Rgb};
use std::path::Path;

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Writes `patch` as an 8-bit RGB PNG.
pub fn save_patch(patch: &ImagePatch, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        }
    }
    let side = patch.side() as u32;
    let mut img = ImageBuffer::<Rgb<u8>, Vec<u8>>::new(side, side);
    for (i, px) in patch.pixels().chunks_exact(3).enumerate() {
        let x = (i as u32) % side;
        let y = (i as u32) / side;
        img.put_pixel(x, y, Rgb([quantize(px[0]), quantize(px[1]), quantize(px[2])]));
    }
    img.save(path).map_err(|e| CoreError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Reads an 8-bit RGB PNG saved by [`save_patch`]. The id is taken from the
/// file stem; magnification metadata lives in manifests, not in the raster,
/// so loads default to 20x.
pub fn load_patch(path: impl AsRef<Path>) -> Result<ImagePatch> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| CoreError::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    if w != h {
        return Err(CoreError::Decode {
            path: path.to_path_buf(),
            reason: format!("patch raster must be square, got {w}x{h}"),
        });
    }
    let mut pixels = Vec::with_capacity((w * h * 3) as usize);
    for px in rgb.pixels() {
        pixels.push(dequantize(px[0]));
        pixels.push(dequantize(px[1]));
        pixels.push(dequantize(px[2]));
    }
    let id = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("patch")
        .to_string();
    ImagePatch::new(id, w as usize, Magnification::X20, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_patch, SyntheticCorpusConfig};

    #[test]
    fn roundtrip_exact_after_first_quantization() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        let patch = synth_patch(&config, 1).unwrap();
        let dir = std::env::temp_dir().join("stainlab-io-test");
        let path = dir.join(format!("{}.png", patch.id));
        save_patch(&patch, &path).unwrap();
        let once = load_patch(&path).unwrap();
        save_patch(&once, &path).unwrap();
        let twice = load_patch(&path).unwrap();
        assert_eq!(once.pixels(), twice.pixels());
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn missing_file_is_decode_error() {
        let err = load_patch("/nonexistent/stainlab/missing.png");
        assert!(matches!(err, Err(CoreError::Decode { .. })));
    }

    #[test]
    fn eight_bit_quantization_convention() {
        assert_eq!(quantize(128.0 / 255.0), 128);
        assert_eq!(dequantize(128), 128.0 / 255.0);
        // round(v*255)/255 is a fixed point.
        assert_eq!(quantize(dequantize(37)), 37);
    }
}
