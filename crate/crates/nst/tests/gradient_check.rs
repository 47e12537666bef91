//! Analytic gradient of the total loss versus central finite differences.

use stainlab_core::synth::synth_patch;
use stainlab_core::SyntheticCorpusConfig;
use stainlab_grad::gradcheck::{max_rel_error, numeric_grad};
use stainlab_grad::image::patch_to_chw;
use stainlab_grad::{Tape, Tensor};
use stainlab_nst::{total_loss, ConvStyleExtractor, NstConfig, StyleExtractor};

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let corpus = SyntheticCorpusConfig {
        side: 8,
        ..Default::default()
    };
    let source = synth_patch(&corpus, 0).unwrap();
    let target = synth_patch(&corpus, 1).unwrap();
    // Start from a pixel state away from both endpoints so neither loss term
    // is at its minimum.
    let mut pixels = patch_to_chw(&source);
    for (i, v) in pixels.data_mut().iter_mut().enumerate() {
        *v = (*v * 0.7 + 0.15 + 0.001 * (i % 7) as f64).clamp(0.0, 1.0);
    }

    let extractor = ConvStyleExtractor::new(3, 2);
    let config = NstConfig::default();

    let eval = |px: &Tensor, want_grad: bool| -> (f64, Option<Tensor>) {
        let mut tape = Tape::new();
        let p = tape.leaf(px.clone());
        let fu = extractor.forward(&mut tape, p);
        let fs = {
            let src = tape.leaf(patch_to_chw(&source));
            extractor.forward(&mut tape, src)
        };
        let ft = {
            let tgt = tape.leaf(patch_to_chw(&target));
            extractor.forward(&mut tape, tgt)
        };
        let loss = total_loss(&mut tape, &fs, &ft, &fu, &config);
        let value = tape.value(loss).item();
        if want_grad {
            let grads = tape.backward(loss);
            (value, Some(grads.get(p).unwrap().clone()))
        } else {
            (value, None)
        }
    };

    let (_, analytic) = eval(&pixels, true);
    let analytic = analytic.unwrap();
    let mut f = |px: &Tensor| eval(px, false).0;
    let numeric = numeric_grad(&mut f, &pixels, 1e-5);
    let err = max_rel_error(&analytic, &numeric);
    assert!(err < 1e-4, "max relative error {err}");
}
