//! Fixed-seed convolutional patch embedder.
//!
//! A small randomly-initialized strided convnet with global average pooling,
//! shared by corpus curation (stage-1 deep features) and the Frechet metric.
//! The weights depend only on the seed, so embeddings are reproducible and
//! need no pretrained checkpoints. A pretrained backbone can be slotted in
//! through the [`FeatureExtractor`] trait.

use crate::{ImagePatch, Rng};

/// Maps a patch to a fixed-length feature vector.
pub trait FeatureExtractor: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, patch: &ImagePatch) -> Vec<f64>;
}

struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    // [out_ch][in_ch][3][3]
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ConvLayer {
    fn init(in_ch: usize, out_ch: usize, rng: &mut Rng) -> Self {
        let fan_in = (in_ch * 9) as f64;
        let std = (2.0 / fan_in).sqrt();
        let weights = (0..out_ch * in_ch * 9).map(|_| rng.normal() * std).collect();
        let bias = vec![0.0; out_ch];
        ConvLayer {
            in_ch,
            out_ch,
            weights,
            bias,
        }
    }

    /// 3x3 conv, stride 2, pad 1, tanh.
    fn forward(&self, input: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        let mut out = vec![0.0; self.out_ch * oh * ow];
        for oc in 0..self.out_ch {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = self.bias[oc];
                    let cy = (oy * 2) as isize;
                    let cx = (ox * 2) as isize;
                    for ic in 0..self.in_ch {
                        let wbase = ((oc * self.in_ch + ic) * 9) as usize;
                        let ibase = ic * h * w;
                        for ky in 0..3isize {
                            let iy = cy + ky - 1;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..3isize {
                                let ix = cx + kx - 1;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += self.weights[wbase + (ky * 3 + kx) as usize]
                                    * input[ibase + iy as usize * w + ix as usize];
                            }
                        }
                    }
                    out[oc * oh * ow + oy * ow + ox] = acc.tanh();
                }
            }
        }
        (out, oh, ow)
    }
}

/// The default 4-layer strided conv embedder (d = 64).
pub struct ConvEmbedder {
    layers: Vec<ConvLayer>,
    dim: usize,
    pub seed: u64,
}

impl ConvEmbedder {
    pub fn new(seed: u64) -> Self {
        let widths = [3usize, 16, 32, 48, 64];
        let mut rng = Rng::from_seed_stream(seed, 0x0e3b_ed0e);
        let layers = widths
            .windows(2)
            .map(|w| ConvLayer::init(w[0], w[1], &mut rng))
            .collect();
        ConvEmbedder {
            layers,
            dim: widths[widths.len() - 1],
            seed,
        }
    }
}

impl FeatureExtractor for ConvEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, patch: &ImagePatch) -> Vec<f64> {
        let side = patch.side();
        // HWC -> CHW
        let mut x = vec![0.0; 3 * side * side];
        for (i, px) in patch.pixels().chunks_exact(3).enumerate() {
            x[i] = px[0];
            x[side * side + i] = px[1];
            x[2 * side * side + i] = px[2];
        }
        let (mut h, mut w) = (side, side);
        for layer in &self.layers {
            let (next, nh, nw) = layer.forward(&x, h, w);
            x = next;
            h = nh;
            w = nw;
        }
        // Global average pool per channel.
        let hw = (h * w) as f64;
        (0..self.dim)
            .map(|c| x[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / hw)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_patch, SyntheticCorpusConfig};

    #[test]
    fn identical_patches_identical_features() {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        let p = synth_patch(&config, 0).unwrap();
        let embedder = ConvEmbedder::new(9);
        assert_eq!(embedder.extract(&p), embedder.extract(&p.clone()));
    }

    #[test]
    fn one_vector_per_patch_with_declared_dim() {
        let config = SyntheticCorpusConfig {
            side: 32,
            n_patches: 5,
            ..Default::default()
        };
        let embedder = ConvEmbedder::new(9);
        for i in 0..config.n_patches {
            let p = synth_patch(&config, i as u64).unwrap();
            let f = embedder.extract(&p);
            assert_eq!(f.len(), embedder.dim());
            assert!(f.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn different_seeds_different_embeddings() {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        let p = synth_patch(&config, 0).unwrap();
        let a = ConvEmbedder::new(1).extract(&p);
        let b = ConvEmbedder::new(2).extract(&p);
        assert_ne!(a, b);
    }
}
