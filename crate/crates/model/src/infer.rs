//! Conditional sampling: noise -> latent -> decoded patch.

use crate::bundle::DenoiserBundle;
use crate::config::ModelConfig;
use crate::{ModelError, Result};
use stainlab_core::ImagePatch;
use stainlab_diffusion::{sample, NoiseSchedule};
use stainlab_grad::image::patch_to_chw;
use stainlab_grad::{Tape, Tensor};

/// Samples a stain-transferred version of `p_s` conditioned on the target
/// `p_t`. Deterministic given the seed; the output side equals the source's.
pub fn infer(
    bundle: &DenoiserBundle,
    schedule: &NoiseSchedule,
    p_s: &ImagePatch,
    p_t: &ImagePatch,
    n_steps: usize,
    seed: u64,
) -> Result<ImagePatch> {
    if p_s.side() % 32 != 0 {
        return Err(ModelError::InvalidArgument(format!(
            "source side {} must be a multiple of 32",
            p_s.side()
        )));
    }
    let latent_side = p_s.side() / ModelConfig::DOWNSAMPLE;
    let channels = bundle.config.latent_channels;
    let latent_shape = vec![channels, latent_side, latent_side];
    let n_values = channels * latent_side * latent_side;

    let source = patch_to_chw(p_s);
    let tokens = bundle.target_latent_tokens(p_t);

    let denoiser = |z: &[f64], t: usize| -> Vec<f64> {
        let mut tape = Tape::new();
        let binding = bundle.params.bind(&mut tape);
        let zv = tape.leaf(Tensor::new(latent_shape.clone(), z.to_vec()));
        let src = tape.leaf(source.clone());
        let tok = tape.leaf(tokens.clone());
        let out = bundle.denoise_on_tape(&mut tape, &binding, zv, t, Some(src), tok);
        tape.value(out).data().to_vec()
    };

    let z0_scaled = sample(&denoiser, schedule, n_steps, n_values, seed)?;
    let mut z0 = Tensor::new(latent_shape, z0_scaled);
    z0.scale_assign(1.0 / bundle.latent_scale);
    Ok(bundle.vae.decode_to_patch(
        &z0,
        format!("{}-sf-{}", p_s.id, p_t.id),
        p_s.magnification,
    ))
}
