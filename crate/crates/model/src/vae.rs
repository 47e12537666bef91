//! Toy convolutional VAE supplying the diffusion latent space. Fully
//! convolutional: encode/decode work at any side that is a multiple of 8.

use crate::config::{ModelConfig, VaeTrainConfig};
use crate::{ModelError, Result};
use rayon::prelude::*;
use stainlab_core::{ImagePatch, Magnification, Rng};
use stainlab_grad::image::{chw_to_patch, patch_to_chw};
use stainlab_grad::{
    AdamConfig, AdamW, Binding, Conv2d, GroupNorm, Init, ParamSet, Tape, Tensor, Var,
};
use std::collections::HashSet;

#[derive(Debug, Clone)]
struct VaeArch {
    enc: Vec<(Conv2d, GroupNorm)>,
    head_mu: Conv2d,
    head_logvar: Conv2d,
    dec_in: (Conv2d, GroupNorm),
    dec_up: Vec<(Conv2d, GroupNorm)>,
    dec_out: Conv2d,
}

/// Frozen-after-pretraining autoencoder with a diagonal-Gaussian latent.
#[derive(Debug, Clone)]
pub struct Autoencoder {
    pub params: ParamSet,
    arch: VaeArch,
    pub latent_channels: usize,
    pub seed: u64,
}

impl Autoencoder {
    pub const GROUP: &'static str = "vae";

    pub fn init(latent_channels: usize, seed: u64) -> Self {
        let mut params = ParamSet::new();
        let mut rng = Rng::from_seed_stream(seed, 0x7661_6521);
        let g = Self::GROUP;
        let conv = |params: &mut ParamSet, name: &str, cin, cout, stride, init, rng: &mut Rng| {
            Conv2d::init(params, name, g, cin, cout, 3, stride, 1, init, rng)
        };

        let enc_widths = [(3usize, 32usize), (32, 64), (64, 64)];
        let mut enc = Vec::new();
        for (i, (cin, cout)) in enc_widths.into_iter().enumerate() {
            let c = conv(&mut params, &format!("vae.enc{i}"), cin, cout, 2, Init::HeNormal, &mut rng);
            let n = GroupNorm::init(&mut params, &format!("vae.enc{i}.norm"), g, cout, 8);
            enc.push((c, n));
        }
        let head_mu = conv(&mut params, "vae.head_mu", 64, latent_channels, 1, Init::HeNormal, &mut rng);
        let head_logvar = conv(
            &mut params,
            "vae.head_logvar",
            64,
            latent_channels,
            1,
            Init::Zero,
            &mut rng,
        );
        // Start near-deterministic (sigma ~ e^-3): a unit-variance posterior
        // at init drowns the latent signal and stalls reconstruction.
        params
            .get_mut(head_logvar.bias)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = -6.0);

        let dec_in_conv = conv(&mut params, "vae.dec_in", latent_channels, 64, 1, Init::HeNormal, &mut rng);
        let dec_in_norm = GroupNorm::init(&mut params, "vae.dec_in.norm", g, 64, 8);
        let dec_widths = [(64usize, 64usize), (64, 48), (48, 32)];
        let mut dec_up = Vec::new();
        for (i, (cin, cout)) in dec_widths.into_iter().enumerate() {
            let c = conv(&mut params, &format!("vae.dec{i}"), cin, cout, 1, Init::HeNormal, &mut rng);
            let n = GroupNorm::init(&mut params, &format!("vae.dec{i}.norm"), g, cout, 4);
            dec_up.push((c, n));
        }
        let dec_out = conv(&mut params, "vae.dec_out", 32, 3, 1, Init::HeNormal, &mut rng);

        Autoencoder {
            params,
            arch: VaeArch {
                enc,
                head_mu,
                head_logvar,
                dec_in: (dec_in_conv, dec_in_norm),
                dec_up,
                dec_out,
            },
            latent_channels,
            seed,
        }
    }

    pub fn downsample_factor(&self) -> usize {
        ModelConfig::DOWNSAMPLE
    }

    pub fn encode_on_tape(&self, tape: &mut Tape, binding: &Binding, x: Var) -> (Var, Var) {
        let mut h = x;
        for (conv, norm) in &self.arch.enc {
            let c = conv.forward(tape, binding, h);
            let n = norm.forward(tape, binding, c);
            h = tape.silu(n);
        }
        let mu = self.arch.head_mu.forward(tape, binding, h);
        let logvar = self.arch.head_logvar.forward(tape, binding, h);
        (mu, logvar)
    }

    pub fn decode_on_tape(&self, tape: &mut Tape, binding: &Binding, z: Var) -> Var {
        let (conv, norm) = &self.arch.dec_in;
        let c = conv.forward(tape, binding, z);
        let n = norm.forward(tape, binding, c);
        let mut h = tape.silu(n);
        for (conv, norm) in &self.arch.dec_up {
            let up = tape.upsample2(h);
            let c = conv.forward(tape, binding, up);
            let n = norm.forward(tape, binding, c);
            h = tape.silu(n);
        }
        let out = self.arch.dec_out.forward(tape, binding, h);
        tape.sigmoid(out)
    }

    /// Deterministic latent (posterior mean) of a CHW tensor.
    pub fn encode_mu(&self, x: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let xv = tape.leaf(x.clone());
        let (mu, _) = self.encode_on_tape(&mut tape, &binding, xv);
        tape.value(mu).clone()
    }

    pub fn encode_patch_mu(&self, patch: &ImagePatch) -> Tensor {
        self.encode_mu(&patch_to_chw(patch))
    }

    pub fn decode(&self, z: &Tensor) -> Tensor {
        let mut tape = Tape::new();
        let binding = self.params.bind(&mut tape);
        let zv = tape.leaf(z.clone());
        let out = self.decode_on_tape(&mut tape, &binding, zv);
        tape.value(out).clone()
    }

    pub fn decode_to_patch(
        &self,
        z: &Tensor,
        id: impl Into<String>,
        magnification: Magnification,
    ) -> ImagePatch {
        chw_to_patch(&self.decode(z), id, magnification)
    }

    pub fn checksum(&self) -> u64 {
        self.params.group_checksum(Self::GROUP)
    }
}

fn gn_groups_sanity() {
    // GroupNorm group counts above must divide the channel widths.
    debug_assert_eq!(32 % 8, 0);
    debug_assert_eq!(64 % 8, 0);
    debug_assert_eq!(48 % 4, 0);
}

/// Per-sample loss pieces on a private tape; returns (loss, grads by param).
fn vae_sample_pass(
    vae: &Autoencoder,
    x: &Tensor,
    noise: &Tensor,
    kl_weight: f64,
) -> (f64, Vec<Option<Tensor>>) {
    let mut tape = Tape::new();
    let binding = vae.params.bind(&mut tape);
    let xv = tape.leaf(x.clone());
    let (mu, logvar) = vae.encode_on_tape(&mut tape, &binding, xv);

    // Reparameterized sample: z = mu + exp(0.5 logvar) * eps
    let eps = tape.leaf(noise.clone());
    let half_logvar = tape.scale(logvar, 0.5);
    let std = tape.exp(half_logvar);
    let scaled_eps = tape.mul(std, eps);
    let z = tape.add(mu, scaled_eps);

    let recon = vae.decode_on_tape(&mut tape, &binding, z);
    let recon_loss = tape.mse(recon, xv);

    // KL(q || N(0,1)) per element: -0.5 (1 + logvar - mu^2 - exp(logvar))
    let mu_sq = tape.mul(mu, mu);
    let var = tape.exp(logvar);
    let neg = tape.sub(mu_sq, logvar); // mu^2 - logvar
    let inner = tape.add(neg, var); // mu^2 - logvar + exp(logvar)
    let mean_inner = tape.mean_all(inner);
    let kl_shifted = tape.scale(mean_inner, 0.5); // +0.5*(...), constant -0.5 dropped
    let weighted_kl = tape.scale(kl_shifted, kl_weight);

    let loss = tape.add(recon_loss, weighted_kl);
    let loss_value = tape.value(loss).item();
    let mut grads = tape.backward(loss);
    let collected = binding
        .vars()
        .iter()
        .map(|&v| grads.take(v))
        .collect::<Vec<_>>();
    (loss_value, collected)
}

/// Pretrains the autoencoder on a patch corpus. Returns the trained model
/// and the per-epoch mean objective.
pub fn train_autoencoder(
    patches: &[ImagePatch],
    model_config: &ModelConfig,
    config: &VaeTrainConfig,
) -> Result<(Autoencoder, Vec<f64>)> {
    gn_groups_sanity();
    model_config.validate()?;
    if patches.is_empty() {
        return Err(ModelError::InvalidArgument("empty training corpus".into()));
    }
    let mut vae = Autoencoder::init(model_config.latent_channels, model_config.seed);
    let tensors: Vec<Tensor> = patches.iter().map(patch_to_chw).collect();
    let mut rng = Rng::from_seed_stream(config.seed, 0x7661_6574);
    let mut opt = AdamW::new(AdamConfig {
        lr: config.lr,
        weight_decay: 0.0,
        ..Default::default()
    });
    let frozen = HashSet::new();

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..tensors.len()).collect();
    for _epoch in 0..config.epochs {
        rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        let mut epoch_n = 0usize;
        for chunk in order.chunks(config.batch) {
            // Noise drawn serially for determinism; gradients computed in
            // parallel per sample and reduced in batch order.
            let latent_side = tensors[chunk[0]].shape()[1] / ModelConfig::DOWNSAMPLE;
            let jobs: Vec<(usize, Tensor)> = chunk
                .iter()
                .map(|&i| {
                    let noise = Tensor::new(
                        vec![vae.latent_channels, latent_side, latent_side],
                        (0..vae.latent_channels * latent_side * latent_side)
                            .map(|_| rng.normal())
                            .collect(),
                    );
                    (i, noise)
                })
                .collect();
            let results: Vec<(f64, Vec<Option<Tensor>>)> = jobs
                .par_iter()
                .map(|(i, noise)| vae_sample_pass(&vae, &tensors[*i], noise, config.kl_weight))
                .collect();

            let scale = 1.0 / chunk.len() as f64;
            let mut batch_loss = 0.0;
            let mut mean_grads: Vec<Option<Tensor>> = vec![None; vae.params.len()];
            for (loss, grads) in results {
                if !loss.is_finite() {
                    return Err(ModelError::Training(format!(
                        "non-finite autoencoder loss {loss}"
                    )));
                }
                batch_loss += loss * scale;
                for (slot, g) in mean_grads.iter_mut().zip(grads) {
                    if let Some(mut g) = g {
                        g.scale_assign(scale);
                        match slot {
                            Some(acc) => acc.add_assign(&g),
                            None => *slot = Some(g),
                        }
                    }
                }
            }

            // Re-bind on a scratch tape purely to reuse the optimizer's
            // (grads, binding) interface.
            let mut tape = Tape::new();
            let binding = vae.params.bind(&mut tape);
            let grads = stainlab_grad::tape::Grads::from_parts(
                binding.vars(),
                mean_grads,
                tape.len(),
            );
            opt.step(&mut vae.params, &grads, &binding, &frozen);
            epoch_sum += batch_loss * chunk.len() as f64;
            epoch_n += chunk.len();
        }
        epoch_losses.push(epoch_sum / epoch_n as f64);
    }
    Ok((vae, epoch_losses))
}

#[cfg(test)]
mod tests {
    use super::*;
    use stainlab_core::synth::synth_patch;
    use stainlab_core::SyntheticCorpusConfig;

    #[test]
    fn encode_shape_contract() {
        let vae = Autoencoder::init(4, 0);
        let config = SyntheticCorpusConfig {
            side: 64,
            ..Default::default()
        };
        let p = synth_patch(&config, 0).unwrap();
        let mu = vae.encode_patch_mu(&p);
        assert_eq!(mu.shape(), &[4, 8, 8]);
        let recon = vae.decode(&mu);
        assert_eq!(recon.shape(), &[3, 64, 64]);
    }

    #[test]
    fn fully_convolutional_across_sides() {
        let vae = Autoencoder::init(4, 0);
        for side in [32usize, 64] {
            let config = SyntheticCorpusConfig {
                side,
                ..Default::default()
            };
            let p = synth_patch(&config, 1).unwrap();
            let mu = vae.encode_patch_mu(&p);
            assert_eq!(mu.shape(), &[4, side / 8, side / 8]);
        }
    }

    #[test]
    fn training_objective_decreases() {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        let patches: Vec<ImagePatch> = (0..24).map(|i| synth_patch(&config, i).unwrap()).collect();
        let (vae, trace) = train_autoencoder(
            &patches,
            &ModelConfig::default(),
            &VaeTrainConfig {
                epochs: 4,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(trace.len(), 4);
        for pair in trace.windows(2) {
            assert!(pair[1] <= pair[0] * 1.005, "epoch means {pair:?}");
        }
        // Reconstruction is at least in the right ballpark after 4 epochs.
        let mu = vae.encode_patch_mu(&patches[0]);
        let recon = vae.decode(&mu);
        assert!(recon.all_finite());
    }

    #[test]
    fn deterministic_given_seed() {
        let config = SyntheticCorpusConfig {
            side: 32,
            ..Default::default()
        };
        let patches: Vec<ImagePatch> = (0..8).map(|i| synth_patch(&config, i).unwrap()).collect();
        let run = || {
            let (vae, trace) = train_autoencoder(
                &patches,
                &ModelConfig::default(),
                &VaeTrainConfig {
                    epochs: 2,
                    ..Default::default()
                },
            )
            .unwrap();
            (vae.checksum(), trace)
        };
        let (c1, t1) = run();
        let (c2, t2) = run();
        assert_eq!(c1, c2);
        assert_eq!(t1, t2);
    }
}
