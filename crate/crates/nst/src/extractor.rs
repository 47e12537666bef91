//! Differentiable feature extractors for style transfer.
//!
//! The default is a small fixed-seed convnet: every pooling stage is
//! `conv3x3 -> tanh -> avgpool2`, and the feature stack collects the output
//! of every pooling stage. Random filters are enough to carry color/texture
//! statistics at desk scale; a pretrained backbone can be slotted in through
//! the trait.

use stainlab_grad::{Tape, Tensor, Var};
use stainlab_core::Rng;

/// Differentiable multi-stage feature extractor.
pub trait StyleExtractor: Sync {
    /// Number of pooling stages (= feature-stack depth).
    fn n_layers(&self) -> usize;
    /// Seed identifying the weights, folded into config hashes.
    fn seed(&self) -> u64;
    /// Feature maps at every pooling stage for a [3, s, s] pixel tensor.
    fn forward(&self, tape: &mut Tape, pixels: Var) -> Vec<Var>;
}

pub struct ConvStyleExtractor {
    seed: u64,
    /// One (weight, bias) per stage.
    stages: Vec<(Tensor, Tensor)>,
}

impl ConvStyleExtractor {
    /// `n_stages` pooling stages with channel widths 8, 16, 32, ...
    pub fn new(seed: u64, n_stages: usize) -> Self {
        assert!(n_stages >= 1);
        let mut rng = Rng::from_seed_stream(seed, 0x5f78_7472);
        let mut stages = Vec::with_capacity(n_stages);
        let mut cin = 3usize;
        for stage in 0..n_stages {
            let cout = 8usize << stage;
            let std = (2.0 / (cin * 9) as f64).sqrt();
            let weight = Tensor::randn(vec![cout, cin, 3, 3], std, &mut rng);
            let bias = Tensor::randn(vec![cout], 0.1, &mut rng);
            stages.push((weight, bias));
            cin = cout;
        }
        ConvStyleExtractor { seed, stages }
    }
}

impl StyleExtractor for ConvStyleExtractor {
    fn n_layers(&self) -> usize {
        self.stages.len()
    }

    fn seed(&self) -> u64 {
        self.seed
    }

    fn forward(&self, tape: &mut Tape, pixels: Var) -> Vec<Var> {
        let mut features = Vec::with_capacity(self.stages.len());
        let mut x = pixels;
        for (weight, bias) in &self.stages {
            let w = tape.leaf(weight.clone());
            let b = tape.leaf(bias.clone());
            let conv = tape.conv2d(x, w, Some(b), 1, 1);
            let act = tape.tanh(conv);
            let pooled = tape.avg_pool2(act);
            features.push(pooled);
            x = pooled;
        }
        features
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_grad::image::patch_to_chw;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::SyntheticCorpusConfig;

    #[test]
    fn stack_depth_and_shapes() {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        let p = synth_patch(&config, 0).unwrap();
        let ex = ConvStyleExtractor::new(0, 3);
        assert_eq!(ex.n_layers(), 3);
        let mut tape = Tape::new();
        let px = tape.leaf(patch_to_chw(&p));
        let feats = ex.forward(&mut tape, px);
        assert_eq!(feats.len(), 3);
        assert_eq!(tape.value(feats[0]).shape(), &[8, 16, 16]);
        assert_eq!(tape.value(feats[1]).shape(), &[16, 8, 8]);
        assert_eq!(tape.value(feats[2]).shape(), &[32, 4, 4]);
    }

    #[test]
    fn deterministic_given_seed() {
        let config = SyntheticCorpusConfig {
            side: 16,
            ..Default::default()
        };
        let p = synth_patch(&config, 1).unwrap();
        let run = |seed: u64| -> Vec<f64> {
            let ex = ConvStyleExtractor::new(seed, 2);
            let mut tape = Tape::new();
            let px = tape.leaf(patch_to_chw(&p));
            let feats = ex.forward(&mut tape, px);
            tape.value(feats[1]).data().to_vec()
        };
        assert_eq!(run(7), run(7));
        assert_ne!(run(7), run(8));
    }
}
