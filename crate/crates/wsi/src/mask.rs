//! Tissue masking: Otsu threshold on the HSV saturation of a downsampled
//! thumbnail, then one pass of 3x3 morphological closing.

use crate::slide::PseudoSlide;
use crate::{Result, WsiError};

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn at(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn coverage(&self) -> f64 {
        self.data.iter().filter(|&&b| b).count() as f64 / self.data.len() as f64
    }
}

fn saturation(rgb: [f64; 3]) -> f64 {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    let min = rgb[0].min(rgb[1]).min(rgb[2]);
    if max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

/// Otsu threshold over a 256-bin histogram of values in [0, 1].
fn otsu(values: &[f64]) -> f64 {
    let mut hist = [0usize; 256];
    for &v in values {
        let bin = ((v * 255.0).round() as usize).min(255);
        hist[bin] += 1;
    }
    let total = values.len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let mut best_threshold = 0usize;
    let mut best_var = -1.0f64;
    let mut w0 = 0.0;
    let mut sum0 = 0.0;
    for t in 0..256 {
        w0 += hist[t] as f64;
        if w0 == 0.0 {
            continue;
        }
        let w1 = total - w0;
        if w1 == 0.0 {
            break;
        }
        sum0 += t as f64 * hist[t] as f64;
        let mu0 = sum0 / w0;
        let mu1 = (total_sum - sum0) / w1;
        let between = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
        if between > best_var {
            best_var = between;
            best_threshold = t;
        }
    }
    best_threshold as f64 / 255.0
}

fn dilate(data: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![false; w * h];
    for y in 0..h {
        for x in 0..w {
            'probe: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h
                        && data[ny as usize * w + nx as usize]
                    {
                        out[y * w + x] = true;
                        break 'probe;
                    }
                }
            }
        }
    }
    out
}

fn erode(data: &[bool], w: usize, h: usize) -> Vec<bool> {
    let mut out = vec![true; w * h];
    for y in 0..h {
        for x in 0..w {
            'probe: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h
                        || !data[ny as usize * w + nx as usize]
                    {
                        out[y * w + x] = false;
                        break 'probe;
                    }
                }
            }
        }
    }
    out
}

/// Binary tissue mask at `ceil(H/downsample) x ceil(W/downsample)`.
/// Deterministic: same slide in, same mask out.
pub fn tissue_mask(slide: &PseudoSlide, downsample: usize) -> Result<Mask> {
    if downsample == 0 {
        return Err(WsiError::InvalidArgument("downsample must be >= 1".into()));
    }
    let w = slide.width().div_ceil(downsample);
    let h = slide.height().div_ceil(downsample);

    // Thumbnail saturation: mean saturation of each downsample block.
    let mut sat = vec![0.0f64; w * h];
    for by in 0..h {
        for bx in 0..w {
            let mut acc = 0.0;
            let mut count = 0usize;
            for y in (by * downsample)..((by + 1) * downsample).min(slide.height()) {
                for x in (bx * downsample)..((bx + 1) * downsample).min(slide.width()) {
                    acc += saturation(slide.rgb(x, y));
                    count += 1;
                }
            }
            sat[by * w + bx] = acc / count as f64;
        }
    }

    let threshold = otsu(&sat).max(0.05);
    let raw: Vec<bool> = sat.iter().map(|&s| s > threshold).collect();
    let closed = erode(&dilate(&raw, w, h), w, h);
    Ok(Mask {
        width: w,
        height: h,
        data: closed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide::{synth_slide, SlideConfig};

    #[test]
    fn all_white_slide_has_empty_mask() {
        let slide = PseudoSlide::white(256, 256).unwrap();
        let mask = tissue_mask(&slide, 8).unwrap();
        assert_eq!(mask.width, 32);
        assert_eq!(mask.height, 32);
        assert!(mask.data.iter().all(|&b| !b));
    }

    #[test]
    fn mask_overlaps_generator_footprint() {
        let config = SlideConfig {
            width: 512,
            height: 512,
            n_tissue_regions: 1,
            ..Default::default()
        };
        let (slide, footprint) = synth_slide(&config).unwrap();
        let downsample = 8;
        let mask = tissue_mask(&slide, downsample).unwrap();

        // Downsample the footprint by majority vote and compare by IoU.
        let mut intersection = 0usize;
        let mut union = 0usize;
        for by in 0..mask.height {
            for bx in 0..mask.width {
                let mut votes = 0usize;
                let mut count = 0usize;
                for y in (by * downsample)..((by + 1) * downsample).min(512) {
                    for x in (bx * downsample)..((bx + 1) * downsample).min(512) {
                        votes += footprint[y * 512 + x] as usize;
                        count += 1;
                    }
                }
                let truth = votes * 2 > count;
                let predicted = mask.at(bx, by);
                if truth && predicted {
                    intersection += 1;
                }
                if truth || predicted {
                    union += 1;
                }
            }
        }
        let iou = intersection as f64 / union.max(1) as f64;
        assert!(iou > 0.8, "IoU {iou}");
    }

    #[test]
    fn mask_is_deterministic() {
        let (slide, _) = synth_slide(&SlideConfig {
            width: 256,
            height: 256,
            ..Default::default()
        })
        .unwrap();
        let a = tissue_mask(&slide, 8).unwrap();
        let b = tissue_mask(&slide, 8).unwrap();
        assert_eq!(a, b);
    }
}
