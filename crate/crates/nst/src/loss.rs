//! Content, style and total losses over feature stacks.

use crate::run::{NstConfig, PrecisionMode};
use stainlab_grad::{Tape, Var};

/// Sum over layers of the element-mean squared feature difference.
pub fn content_loss(tape: &mut Tape, reference: &[Var], stylized: &[Var]) -> Var {
    assert_eq!(reference.len(), stylized.len(), "layer count mismatch");
    let mut total = tape.scalar(0.0);
    for (&r, &u) in reference.iter().zip(stylized) {
        let layer = tape.mse(r, u);
        total = tape.add(total, layer);
    }
    total
}

/// Per-layer Gram scale: the configured value, or `1/sqrt(C*H*W)` so the
/// half-precision inner product is bounded by `max |f|^2`.
pub fn layer_gram_scale(config: &NstConfig, shape: &[usize]) -> f64 {
    match config.gram_scale {
        Some(s) => s,
        None => 1.0 / ((shape[0] * shape[1] * shape[2]) as f64).sqrt(),
    }
}

/// Gram matrix of a feature map under the config's precision mode.
pub fn gram_for_mode(tape: &mut Tape, feature: Var, config: &NstConfig) -> Var {
    let shape = tape.value(feature).shape().to_vec();
    let scale = layer_gram_scale(config, &shape);
    match config.precision_mode {
        PrecisionMode::Full => tape.gram(feature, scale, false),
        PrecisionMode::Mixed => tape.gram(feature, scale, true),
    }
}

/// Sum over layers of the mean squared Gram difference.
pub fn style_loss(tape: &mut Tape, reference: &[Var], stylized: &[Var], config: &NstConfig) -> Var {
    assert_eq!(reference.len(), stylized.len(), "layer count mismatch");
    let mut total = tape.scalar(0.0);
    for (&r, &u) in reference.iter().zip(stylized) {
        let gr = gram_for_mode(tape, r, config);
        let gu = gram_for_mode(tape, u, config);
        let layer = tape.mse(gr, gu);
        total = tape.add(total, layer);
    }
    total
}

/// `alpha * content + gamma * style`.
pub fn total_loss(
    tape: &mut Tape,
    source_feats: &[Var],
    target_feats: &[Var],
    stylized_feats: &[Var],
    config: &NstConfig,
) -> Var {
    let content = content_loss(tape, source_feats, stylized_feats);
    let style = style_loss(tape, target_feats, stylized_feats, config);
    let wc = tape.scale(content, config.alpha);
    let ws = tape.scale(style, config.gamma);
    tape.add(wc, ws)
}
