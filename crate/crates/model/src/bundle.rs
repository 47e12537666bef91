//! The denoiser bundle: frozen autoencoder + conditional UNet + control
//! branch + conditioner, with a named freeze mask.

use crate::config::ModelConfig;
use crate::unet::{
    UNet, GROUP_ATTENTION, GROUP_CONDITIONER, GROUP_CONTROL, GROUP_DECODER, GROUP_ENCODER,
};
use crate::vae::Autoencoder;
use crate::{ModelError, Result};
use stainlab_core::{ImagePatch, Rng};
use stainlab_grad::image::patch_to_chw;
use stainlab_grad::{Binding, ParamSet, Tape, Tensor, Var};
use std::collections::{BTreeMap, HashSet};

/// Projected target tokens: one row per latent grid cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    pub tokens: Tensor, // [n_tokens, d_tau]
}

#[derive(Debug, Clone)]
pub struct DenoiserBundle {
    pub vae: Autoencoder,
    pub params: ParamSet,
    pub unet: UNet,
    pub config: ModelConfig,
    /// Latents are multiplied by this before diffusion (unit-variance trick).
    pub latent_scale: f64,
    /// Parameter group -> frozen flag; covers every group exactly once.
    pub freeze_mask: BTreeMap<String, bool>,
}

impl DenoiserBundle {
    /// Builds an untrained bundle around a (typically pretrained) VAE.
    pub fn new(vae: Autoencoder, config: ModelConfig, decoder_frozen: bool) -> Result<Self> {
        config.validate()?;
        if vae.latent_channels != config.latent_channels {
            return Err(ModelError::InvalidArgument(format!(
                "autoencoder has {} latent channels, config wants {}",
                vae.latent_channels, config.latent_channels
            )));
        }
        let mut params = ParamSet::new();
        let mut rng = Rng::from_seed_stream(config.seed, 0x756e_6574);
        let unet = UNet::init(&mut params, &config, &mut rng);

        let mut freeze_mask = BTreeMap::new();
        freeze_mask.insert(Autoencoder::GROUP.to_string(), true);
        freeze_mask.insert(GROUP_ENCODER.to_string(), true);
        freeze_mask.insert(GROUP_DECODER.to_string(), decoder_frozen);
        freeze_mask.insert(GROUP_ATTENTION.to_string(), false);
        freeze_mask.insert(GROUP_CONDITIONER.to_string(), false);
        freeze_mask.insert(GROUP_CONTROL.to_string(), false);

        let bundle = DenoiserBundle {
            vae,
            params,
            unet,
            config,
            latent_scale: 1.0,
            freeze_mask,
        };
        bundle.check_mask_covers_groups()?;
        Ok(bundle)
    }

    fn check_mask_covers_groups(&self) -> Result<()> {
        let mut groups: HashSet<String> = self
            .params
            .iter()
            .map(|(_, e)| e.group.clone())
            .collect();
        groups.insert(Autoencoder::GROUP.to_string());
        let masked: HashSet<String> = self.freeze_mask.keys().cloned().collect();
        if groups != masked {
            return Err(ModelError::InvalidArgument(format!(
                "freeze mask {masked:?} does not cover parameter groups {groups:?}"
            )));
        }
        Ok(())
    }

    pub fn frozen_groups(&self) -> HashSet<String> {
        self.freeze_mask
            .iter()
            .filter(|(_, &frozen)| frozen)
            .map(|(g, _)| g.clone())
            .collect()
    }

    /// Scalar parameter counts: (trainable, frozen). The autoencoder counts
    /// as frozen.
    pub fn parameter_counts(&self) -> (usize, usize) {
        let mut trainable = 0;
        let mut frozen = self.vae.params.iter().map(|(_, e)| e.tensor.len()).sum::<usize>();
        for (_, e) in self.params.iter() {
            if self.freeze_mask.get(&e.group).copied().unwrap_or(false) {
                frozen += e.tensor.len();
            } else {
                trainable += e.tensor.len();
            }
        }
        (trainable, frozen)
    }

    /// Group checksums over the model parameters plus the autoencoder.
    pub fn checksums(&self) -> BTreeMap<String, u64> {
        let mut sums = BTreeMap::new();
        for group in self.freeze_mask.keys() {
            if group == Autoencoder::GROUP {
                sums.insert(group.clone(), self.vae.checksum());
            } else {
                sums.insert(group.clone(), self.params.group_checksum(group));
            }
        }
        sums
    }

    /// Unprojected target tokens: the frozen VAE latent flattened to one row
    /// per grid cell. Constant with respect to the trainable parameters.
    pub fn target_latent_tokens(&self, p_t: &ImagePatch) -> Tensor {
        let mu = self.vae.encode_patch_mu(p_t);
        let (c, h, w) = (mu.shape()[0], mu.shape()[1], mu.shape()[2]);
        // [c, h*w] -> transpose -> [h*w, c]
        mu.reshaped(vec![c, h * w]).transposed()
    }

    /// Projects raw target tokens through the trainable linear layer.
    pub fn embed_target(&self, p_t: &ImagePatch) -> ConditionEmbedding {
        let raw = self.target_latent_tokens(p_t);
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let tokens = tape.leaf(raw);
        let projected = self.unet.projector.forward(&mut tape, &binding, tokens);
        ConditionEmbedding {
            tokens: tape.value(projected).clone(),
        }
    }

    /// On-tape denoiser forward shared by training and inference.
    ///
    /// `raw_target_tokens` are the frozen-VAE tokens (constant), projected
    /// here so the projector receives gradients.
    pub fn denoise_on_tape(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        z_t: Var,
        t: usize,
        source_pixels: Option<Var>,
        raw_target_tokens: Var,
    ) -> Var {
        let ctx = self.unet.projector.forward(tape, binding, raw_target_tokens);
        self.unet.forward(tape, binding, z_t, t, ctx, source_pixels)
    }

    /// Estimated noise for one (z_t, t, p_s, p_t). The control branch is
    /// always active; see [`DenoiserBundle::denoise_uncontrolled`].
    pub fn denoise(&self, z_t: &Tensor, t: usize, p_s: &ImagePatch, p_t: &ImagePatch) -> Result<Tensor> {
        self.check_latent_shape(z_t, p_s)?;
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let z = tape.leaf(z_t.clone());
        let src = tape.leaf(patch_to_chw(p_s));
        let tokens = tape.leaf(self.target_latent_tokens(p_t));
        let out = self.denoise_on_tape(&mut tape, &binding, z, t, Some(src), tokens);
        Ok(tape.value(out).clone())
    }

    /// Control-free backbone forward on (z_t, t, p_t) only.
    pub fn denoise_uncontrolled(&self, z_t: &Tensor, t: usize, p_t: &ImagePatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let z = tape.leaf(z_t.clone());
        let tokens = tape.leaf(self.target_latent_tokens(p_t));
        let out = self.denoise_on_tape(&mut tape, &binding, z, t, None, tokens);
        Ok(tape.value(out).clone())
    }

    fn check_latent_shape(&self, z_t: &Tensor, p_s: &ImagePatch) -> Result<()> {
        let expect = p_s.side() / ModelConfig::DOWNSAMPLE;
        let shape = z_t.shape();
        if shape.len() != 3
            || shape[0] != self.config.latent_channels
            || shape[1] != expect
            || shape[2] != expect
        {
            return Err(ModelError::InvalidArgument(format!(
                "latent shape {shape:?} does not match source side {} (expect [{}, {expect}, {expect}])",
                p_s.side(),
                self.config.latent_channels,
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::SyntheticCorpusConfig;

    fn toy_bundle() -> DenoiserBundle {
        let vae = Autoencoder::init(4, 1);
        DenoiserBundle::new(vae, ModelConfig::default(), false).unwrap()
    }

    fn patches() -> (ImagePatch, ImagePatch) {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        (synth_patch(&config, 0).unwrap(), synth_patch(&config, 1).unwrap())
    }

    #[test]
    fn embed_target_shapes() {
        let bundle = toy_bundle();
        let (_, p_t) = patches();
        let emb = bundle.embed_target(&p_t);
        // 32/8 = 4 -> 16 tokens of d_tau = 32.
        assert_eq!(emb.tokens.shape(), &[16, 32]);

        // Identical targets give identical embeddings.
        let again = bundle.embed_target(&p_t);
        assert_eq!(emb.tokens, again.tokens);
    }

    #[test]
    fn zero_projector_gives_zero_tokens() {
        let mut bundle = toy_bundle();
        let ids: Vec<_> = bundle
            .params
            .iter()
            .filter(|(_, e)| e.name.starts_with("cond.projector"))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            let t = bundle.params.get_mut(id);
            *t = Tensor::zeros(t.shape().to_vec());
        }
        let (_, p_t) = patches();
        let emb = bundle.embed_target(&p_t);
        assert!(emb.tokens.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_init_control_is_identity() {
        let bundle = toy_bundle();
        let (p_s, p_t) = patches();
        let mut rng = Rng::from_seed(5);
        for t in [1usize, 50, 200] {
            let z = Tensor::randn(vec![4, 4, 4], 1.0, &mut rng);
            let with = bundle.denoise(&z, t, &p_s, &p_t).unwrap();
            let without = bundle.denoise_uncontrolled(&z, t, &p_t).unwrap();
            let diff = with
                .data()
                .iter()
                .zip(without.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-6, "t={t}: max abs diff {diff}");
            assert_eq!(with.shape(), z.shape());
        }
    }

    #[test]
    fn source_is_ignored_at_init() {
        let bundle = toy_bundle();
        let (p_s, p_t) = patches();
        let other = {
            let config = SyntheticCorpusConfig {
                side: 32,
                ..Default::default()
            };
            synth_patch(&config, 7).unwrap()
        };
        let mut rng = Rng::from_seed(6);
        let z = Tensor::randn(vec![4, 4, 4], 1.0, &mut rng);
        let a = bundle.denoise(&z, 10, &p_s, &p_t).unwrap();
        let b = bundle.denoise(&z, 10, &other, &p_t).unwrap();
        let diff = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-12, "source changed the init output by {diff}");
    }

    #[test]
    fn freeze_mask_covers_groups() {
        let bundle = toy_bundle();
        assert_eq!(bundle.freeze_mask.len(), 6);
        assert!(bundle.freeze_mask["vae"]);
        assert!(bundle.freeze_mask["unet_encoder"]);
        assert!(!bundle.freeze_mask["unet_decoder"]);
        let (trainable, frozen) = bundle.parameter_counts();
        assert!(trainable > 0 && frozen > 0);

        let frozen_decoder = DenoiserBundle::new(Autoencoder::init(4, 1), ModelConfig::default(), true).unwrap();
        let (t2, f2) = frozen_decoder.parameter_counts();
        assert!(t2 < trainable, "frozen decoder must train fewer parameters");
        assert_eq!(t2 + f2, trainable + frozen);
    }

    #[test]
    fn latent_shape_mismatch_is_error() {
        let bundle = toy_bundle();
        let (p_s, p_t) = patches();
        let z = Tensor::zeros(vec![4, 8, 8]); // wrong grid for a 32-side source
        assert!(bundle.denoise(&z, 10, &p_s, &p_t).is_err());
    }
}
