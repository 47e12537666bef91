//! The pixel-optimization loop: the stylized image is initialized as a clone
//! of the source and its pixels are the only optimized variables.

use crate::extractor::StyleExtractor;
use crate::loss::{content_loss, gram_for_mode};
use serde::{Deserialize, Serialize};
use stainlab_core::ImagePatch;
use stainlab_grad::image::{chw_to_patch, patch_to_chw};
use stainlab_grad::{Adam, AdamConfig, Tape, Tensor};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NstError {
    #[error("source and target must share the same side: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("non-finite loss at iteration {0}")]
    NonFiniteLoss(usize),

    #[error(transparent)]
    Core(#[from] stainlab_core::CoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionMode {
    Full,
    Mixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NstConfig {
    /// Content weight.
    pub alpha: f64,
    /// Style weight.
    pub gamma: f64,
    pub n_iters: usize,
    /// Adam learning rate on the pixels.
    pub lr: f64,
    pub precision_mode: PrecisionMode,
    /// Gram pre-scale; `None` picks `1/sqrt(C*H*W)` per layer.
    pub gram_scale: Option<f64>,
}

impl Default for NstConfig {
    fn default() -> Self {
        NstConfig {
            alpha: 1.0,
            gamma: 10_000.0,
            n_iters: 300,
            lr: 0.05,
            precision_mode: PrecisionMode::Full,
            gram_scale: None,
        }
    }
}

impl NstConfig {
    /// Stable hex-encoded hash of the config plus the extractor seed;
    /// identifies which settings produced a transferred patch.
    pub fn hash_with_extractor(&self, extractor_seed: u64) -> String {
        let canonical = format!(
            "alpha={:016x};gamma={:016x};n_iters={};lr={:016x};mode={:?};scale={};seed={}",
            self.alpha.to_bits(),
            self.gamma.to_bits(),
            self.n_iters,
            self.lr.to_bits(),
            self.precision_mode,
            self.gram_scale.map_or("auto".to_string(), |s| format!("{:016x}", s.to_bits())),
            extractor_seed,
        );
        let mut hash: u64 = 0xcbf29ce484222325;
        for byte in canonical.as_bytes() {
            hash ^= *byte as u64;
            hash = hash.wrapping_mul(0x100000001b3);
        }
        format!("{hash:016x}")
    }
}

#[derive(Debug, Clone)]
pub struct NstOutcome {
    pub patch: ImagePatch,
    /// Total loss per iteration (finite at every step).
    pub loss_trace: Vec<f64>,
}

pub fn run_nst(
    source: &ImagePatch,
    target: &ImagePatch,
    extractor: &dyn StyleExtractor,
    config: &NstConfig,
) -> Result<ImagePatch, NstError> {
    Ok(run_nst_traced(source, target, extractor, config)?.patch)
}

pub fn run_nst_traced(
    source: &ImagePatch,
    target: &ImagePatch,
    extractor: &dyn StyleExtractor,
    config: &NstConfig,
) -> Result<NstOutcome, NstError> {
    if source.side() != target.side() {
        return Err(NstError::SizeMismatch(source.side(), target.side()));
    }

    // Reference features are constants of the optimization: content features
    // of the source and Gram matrices of the target.
    let source_feats: Vec<Tensor> = {
        let mut tape = Tape::new();
        let px = tape.leaf(patch_to_chw(source));
        let feats = extractor.forward(&mut tape, px);
        feats.iter().map(|&f| tape.value(f).clone()).collect()
    };
    let target_grams: Vec<Tensor> = {
        let mut tape = Tape::new();
        let px = tape.leaf(patch_to_chw(target));
        let feats = extractor.forward(&mut tape, px);
        feats
            .iter()
            .map(|&f| {
                let g = gram_for_mode(&mut tape, f, config);
                tape.value(g).clone()
            })
            .collect()
    };

    let mut pixels = patch_to_chw(source);
    let mut adam = Adam::new(AdamConfig::with_lr(config.lr), pixels.len());
    let mut loss_trace = Vec::with_capacity(config.n_iters);

    for iter in 0..config.n_iters {
        let mut tape = Tape::new();
        let px = tape.leaf(pixels.clone());
        let stylized_feats = extractor.forward(&mut tape, px);

        let src_refs: Vec<_> = source_feats.iter().map(|t| tape.leaf(t.clone())).collect();
        let content = content_loss(&mut tape, &src_refs, &stylized_feats);

        let mut style = tape.scalar(0.0);
        for (&f, gram_ref) in stylized_feats.iter().zip(&target_grams) {
            let gu = gram_for_mode(&mut tape, f, config);
            let gr = tape.leaf(gram_ref.clone());
            let layer = tape.mse(gr, gu);
            style = tape.add(style, layer);
        }

        let wc = tape.scale(content, config.alpha);
        let ws = tape.scale(style, config.gamma);
        let loss = tape.add(wc, ws);
        let loss_value = tape.value(loss).item();
        if !loss_value.is_finite() {
            return Err(NstError::NonFiniteLoss(iter));
        }
        loss_trace.push(loss_value);

        let grads = tape.backward(loss);
        let grad = grads.get(px).expect("pixels are on the loss path");
        adam.step(&mut pixels, grad);
        for v in pixels.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
    }

    let patch = chw_to_patch(
        &pixels,
        format!("{}-nst-{}", source.id, target.id),
        source.magnification,
    );
    Ok(NstOutcome { patch, loss_trace })
}
