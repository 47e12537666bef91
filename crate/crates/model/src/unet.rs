//! Time-conditional UNet with target cross-attention in the decoder and a
//! zero-convolution control branch that is a trainable copy of the encoder.

use crate::config::{ModelConfig, SourceInjection};
use stainlab_core::Rng;
use stainlab_grad::nn::sinusoidal_embedding;
use stainlab_grad::{
    Binding, Conv2d, CrossAttention, GroupNorm, Init, Linear, ParamSet, Tape, Var,
};

pub const GROUP_ENCODER: &str = "unet_encoder";
pub const GROUP_DECODER: &str = "unet_decoder";
pub const GROUP_ATTENTION: &str = "cross_attention";
pub const GROUP_CONDITIONER: &str = "conditioner";
pub const GROUP_CONTROL: &str = "control";

fn gn_groups(channels: usize) -> usize {
    if channels % 8 == 0 {
        8
    } else {
        channels.min(4)
    }
}

/// GroupNorm -> SiLU -> conv -> (+ time bias) -> GroupNorm -> SiLU -> conv,
/// with a residual skip.
#[derive(Debug, Clone)]
pub struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
}

impl ResBlock {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        group: &str,
        channels: usize,
        time_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        ResBlock {
            norm1: GroupNorm::init(params, &format!("{name}.norm1"), group, channels, gn_groups(channels)),
            conv1: Conv2d::init(params, &format!("{name}.conv1"), group, channels, channels, 3, 1, 1, Init::HeNormal, rng),
            time_proj: Linear::init(params, &format!("{name}.time"), group, time_dim, channels, true, Init::XavierNormal, rng),
            norm2: GroupNorm::init(params, &format!("{name}.norm2"), group, channels, gn_groups(channels)),
            conv2: Conv2d::init(params, &format!("{name}.conv2"), group, channels, channels, 3, 1, 1, Init::HeNormal, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, binding: &Binding, x: Var, t_emb: Var) -> Var {
        let n1 = self.norm1.forward(tape, binding, x);
        let a1 = tape.silu(n1);
        let c1 = self.conv1.forward(tape, binding, a1);
        // Per-channel bias from the time embedding.
        let t = self.time_proj.forward(tape, binding, t_emb); // [1, c]
        let c = tape.value(c1).shape()[0];
        let t_vec = tape.reshape(t, vec![c]);
        let biased = tape.add_chan_bias(c1, t_vec);
        let n2 = self.norm2.forward(tape, binding, biased);
        let a2 = tape.silu(n2);
        let c2 = self.conv2.forward(tape, binding, a2);
        tape.add(x, c2)
    }
}

/// The encoder stack (shared layout between the backbone and its control
/// copy): in-conv, two down stages, middle block.
#[derive(Debug, Clone)]
pub struct EncoderStack {
    pub in_conv: Conv2d,
    pub block1: ResBlock,
    pub down1: Conv2d,
    pub block2: ResBlock,
    pub down2: Conv2d,
    pub mid: ResBlock,
}

impl EncoderStack {
    pub fn init(
        params: &mut ParamSet,
        prefix: &str,
        group: &str,
        in_channels: usize,
        config: &ModelConfig,
        rng: &mut Rng,
    ) -> Self {
        let [w1, w2, w3] = config.widths;
        EncoderStack {
            in_conv: Conv2d::init(params, &format!("{prefix}.in_conv"), group, in_channels, w1, 3, 1, 1, Init::HeNormal, rng),
            block1: ResBlock::init(params, &format!("{prefix}.block1"), group, w1, config.time_dim, rng),
            down1: Conv2d::init(params, &format!("{prefix}.down1"), group, w1, w2, 3, 2, 1, Init::HeNormal, rng),
            block2: ResBlock::init(params, &format!("{prefix}.block2"), group, w2, config.time_dim, rng),
            down2: Conv2d::init(params, &format!("{prefix}.down2"), group, w2, w3, 3, 2, 1, Init::HeNormal, rng),
            mid: ResBlock::init(params, &format!("{prefix}.mid"), group, w3, config.time_dim, rng),
        }
    }

    /// Returns (skip1 at full latent res, skip2 at half res, mid at quarter).
    pub fn forward(&self, tape: &mut Tape, binding: &Binding, x: Var, t_emb: Var) -> (Var, Var, Var) {
        let h = self.in_conv.forward(tape, binding, x);
        let s1 = self.block1.forward(tape, binding, h, t_emb);
        let d1 = self.down1.forward(tape, binding, s1);
        let s2 = self.block2.forward(tape, binding, d1, t_emb);
        let d2 = self.down2.forward(tape, binding, s2);
        let mid = self.mid.forward(tape, binding, d2, t_emb);
        (s1, s2, mid)
    }
}

/// Zero-convolution control branch: source encoder `h`, a trainable copy of
/// the backbone encoder, and one zero conv per injection site.
#[derive(Debug, Clone)]
pub struct ControlBranch {
    pub source_encoder: Vec<Conv2d>,
    pub copy: EncoderStack,
    pub zero1: Conv2d,
    pub zero2: Conv2d,
    pub zero_mid: Conv2d,
    pub injection: SourceInjection,
}

impl ControlBranch {
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        z_t: Var,
        source_pixels: Var,
        t_emb: Var,
    ) -> (Var, Var, Var) {
        // h(p_s): strided convs with SiLU between, down to the latent grid.
        let mut h = source_pixels;
        for (i, conv) in self.source_encoder.iter().enumerate() {
            h = conv.forward(tape, binding, h);
            if i + 1 < self.source_encoder.len() {
                h = tape.silu(h);
            }
        }
        let x = match self.injection {
            SourceInjection::Additive => tape.add(z_t, h),
            SourceInjection::Concat => tape.concat_ch(z_t, h),
        };
        let (c1, c2, cmid) = self.copy.forward(tape, binding, x, t_emb);
        (
            self.zero1.forward(tape, binding, c1),
            self.zero2.forward(tape, binding, c2),
            self.zero_mid.forward(tape, binding, cmid),
        )
    }
}

/// The full denoiser: backbone encoder, decoder with two cross-attention
/// sites, conditioner (time MLP + target projector) and the control branch.
#[derive(Debug, Clone)]
pub struct UNet {
    pub encoder: EncoderStack,
    pub up1: Conv2d,
    pub fuse1: Conv2d,
    pub dec_block1: ResBlock,
    pub attn1: CrossAttention,
    pub up2: Conv2d,
    pub fuse2: Conv2d,
    pub dec_block2: ResBlock,
    pub attn2: CrossAttention,
    pub out_norm: GroupNorm,
    pub out_conv: Conv2d,
    pub time_mlp1: Linear,
    pub time_mlp2: Linear,
    pub projector: Linear,
    pub control: ControlBranch,
    pub sin_dim: usize,
}

impl UNet {
    pub fn init(params: &mut ParamSet, config: &ModelConfig, rng: &mut Rng) -> Self {
        let [w1, w2, w3] = config.widths;
        let d_e = config.latent_channels;
        let sin_dim = 64;

        let encoder = EncoderStack::init(params, "unet.enc", GROUP_ENCODER, d_e, config, rng);

        let up1 = Conv2d::init(params, "unet.up1", GROUP_DECODER, w3, w2, 3, 1, 1, Init::HeNormal, rng);
        let fuse1 = Conv2d::init(params, "unet.fuse1", GROUP_DECODER, w2 * 2, w2, 3, 1, 1, Init::HeNormal, rng);
        let dec_block1 = ResBlock::init(params, "unet.dec1", GROUP_DECODER, w2, config.time_dim, rng);
        let attn1 = CrossAttention::init(params, "unet.attn1", GROUP_ATTENTION, w2, config.d_tau, config.attn_dim, rng);
        let up2 = Conv2d::init(params, "unet.up2", GROUP_DECODER, w2, w1, 3, 1, 1, Init::HeNormal, rng);
        let fuse2 = Conv2d::init(params, "unet.fuse2", GROUP_DECODER, w1 * 2, w1, 3, 1, 1, Init::HeNormal, rng);
        let dec_block2 = ResBlock::init(params, "unet.dec2", GROUP_DECODER, w1, config.time_dim, rng);
        let attn2 = CrossAttention::init(params, "unet.attn2", GROUP_ATTENTION, w1, config.d_tau, config.attn_dim, rng);
        let out_norm = GroupNorm::init(params, "unet.out_norm", GROUP_DECODER, w1, gn_groups(w1));
        // Small-scale init: near-zero noise estimate at start (loss ~ 1)
        // while still letting gradients reach every upstream block.
        let out_conv = {
            let conv = Conv2d::init(params, "unet.out_conv", GROUP_DECODER, w1, d_e, 3, 1, 1, Init::HeNormal, rng);
            params.get_mut(conv.weight).scale_assign(0.05);
            conv
        };

        let time_mlp1 = Linear::init(params, "cond.time1", GROUP_CONDITIONER, sin_dim, config.time_dim, true, Init::XavierNormal, rng);
        let time_mlp2 = Linear::init(params, "cond.time2", GROUP_CONDITIONER, config.time_dim, config.time_dim, true, Init::XavierNormal, rng);
        let projector = Linear::init(params, "cond.projector", GROUP_CONDITIONER, d_e, config.d_tau, true, Init::XavierNormal, rng);

        // Control branch: h encodes the RGB source down to the latent grid.
        let source_encoder = vec![
            Conv2d::init(params, "ctrl.h0", GROUP_CONTROL, 3, 16, 3, 2, 1, Init::HeNormal, rng),
            Conv2d::init(params, "ctrl.h1", GROUP_CONTROL, 16, 32, 3, 2, 1, Init::HeNormal, rng),
            Conv2d::init(params, "ctrl.h2", GROUP_CONTROL, 32, d_e, 3, 2, 1, Init::HeNormal, rng),
        ];
        let ctrl_in_channels = match config.source_injection {
            SourceInjection::Additive => d_e,
            SourceInjection::Concat => d_e * 2,
        };
        let copy = EncoderStack::init(params, "ctrl.copy", GROUP_CONTROL, ctrl_in_channels, config, rng);
        let zero1 = Conv2d::init(params, "ctrl.zero1", GROUP_CONTROL, w1, w1, 1, 1, 0, Init::Zero, rng);
        let zero2 = Conv2d::init(params, "ctrl.zero2", GROUP_CONTROL, w2, w2, 1, 1, 0, Init::Zero, rng);
        let zero_mid = Conv2d::init(params, "ctrl.zero_mid", GROUP_CONTROL, w3, w3, 1, 1, 0, Init::Zero, rng);

        let mut unet = UNet {
            encoder,
            up1,
            fuse1,
            dec_block1,
            attn1,
            up2,
            fuse2,
            dec_block2,
            attn2,
            out_norm,
            out_conv,
            time_mlp1,
            time_mlp2,
            projector,
            control: ControlBranch {
                source_encoder,
                copy,
                zero1,
                zero2,
                zero_mid,
                injection: config.source_injection,
            },
            sin_dim,
        };
        unet.copy_encoder_into_control(params, config);
        unet
    }

    /// "Trainable copy": the control stack starts from the backbone encoder
    /// weights. In concat mode the extra input channels start at zero so the
    /// copy initially sees exactly what the backbone sees.
    fn copy_encoder_into_control(&mut self, params: &mut ParamSet, config: &ModelConfig) {
        let pairs: Vec<(String, String)> = params
            .iter()
            .filter(|(_, e)| e.name.starts_with("unet.enc."))
            .map(|(_, e)| {
                (
                    e.name.clone(),
                    e.name.replacen("unet.enc.", "ctrl.copy.", 1),
                )
            })
            .collect();
        for (src_name, dst_name) in pairs {
            let src_id = params.id_by_name(&src_name).unwrap();
            let dst_id = params.id_by_name(&dst_name).unwrap();
            let src = params.get(src_id).clone();
            let dst = params.get_mut(dst_id);
            if src.shape() == dst.shape() {
                *dst = src;
            } else {
                // Concat-mode in_conv: [w1, 2*d_e, 3, 3] vs [w1, d_e, 3, 3];
                // copy the latent channels, zero the h channels.
                let d_e = config.latent_channels;
                let w1 = config.widths[0];
                let mut data = vec![0.0; dst.len()];
                for oc in 0..w1 {
                    for ic in 0..d_e {
                        for k in 0..9 {
                            data[(oc * 2 * d_e + ic) * 9 + k] = src.data()[(oc * d_e + ic) * 9 + k];
                        }
                    }
                }
                *dst = stainlab_grad::Tensor::new(dst.shape().to_vec(), data);
            }
        }
    }

    /// Time embedding: sinusoidal features through the conditioner MLP.
    pub fn time_embedding(&self, tape: &mut Tape, binding: &Binding, t: usize) -> Var {
        let sin = tape.leaf(sinusoidal_embedding(t as f64, self.sin_dim));
        let h = self.time_mlp1.forward(tape, binding, sin);
        let h = tape.silu(h);
        self.time_mlp2.forward(tape, binding, h)
    }

    /// Full conditional forward. `ctx` holds the projected target tokens;
    /// `source_pixels` is consumed by the control branch unless disabled.
    pub fn forward(
        &self,
        tape: &mut Tape,
        binding: &Binding,
        z_t: Var,
        t: usize,
        ctx: Var,
        source_pixels: Option<Var>,
    ) -> Var {
        let t_emb = self.time_embedding(tape, binding, t);
        let (s1, s2, mid) = self.encoder.forward(tape, binding, z_t, t_emb);

        let (s1, s2, mid) = match source_pixels {
            Some(src) => {
                let (i1, i2, imid) = self.control.forward(tape, binding, z_t, src, t_emb);
                (
                    tape.add(s1, i1),
                    tape.add(s2, i2),
                    tape.add(mid, imid),
                )
            }
            None => (s1, s2, mid),
        };

        let u1 = tape.upsample2(mid);
        let u1 = self.up1.forward(tape, binding, u1);
        let cat1 = tape.concat_ch(u1, s2);
        let f1 = self.fuse1.forward(tape, binding, cat1);
        let d1 = self.dec_block1.forward(tape, binding, f1, t_emb);
        let a1 = self.attn1.forward(tape, binding, d1, ctx);

        let u2 = tape.upsample2(a1);
        let u2 = self.up2.forward(tape, binding, u2);
        let cat2 = tape.concat_ch(u2, s1);
        let f2 = self.fuse2.forward(tape, binding, cat2);
        let d2 = self.dec_block2.forward(tape, binding, f2, t_emb);
        let a2 = self.attn2.forward(tape, binding, d2, ctx);

        let n = self.out_norm.forward(tape, binding, a2);
        let act = tape.silu(n);
        self.out_conv.forward(tape, binding, act)
    }
}
