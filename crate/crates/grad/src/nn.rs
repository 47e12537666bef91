//! Parameter registry and the layer zoo used by the style-transfer extractor
//! and the toy latent-diffusion model.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use stainlab_core::Rng;
use std::collections::{BTreeMap, HashMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub tensor: Tensor,
}

/// All trainable state of a model, addressed by stable ids. Groups drive
/// freeze policies; names make checkpoints self-describing.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<ParamEntry>,
    by_name: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, group: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        self.by_name.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            group: group.into(),
            tensor,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].tensor
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &ParamEntry)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn id_by_name(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    /// Group name -> number of scalar parameters.
    pub fn group_sizes(&self) -> BTreeMap<String, usize> {
        let mut sizes = BTreeMap::new();
        for e in &self.entries {
            *sizes.entry(e.group.clone()).or_insert(0) += e.tensor.len();
        }
        sizes
    }

    /// FNV-1a over the exact f64 bit patterns of every tensor in `group`,
    /// in registration order. Detects any parameter mutation.
    pub fn group_checksum(&self, group: &str) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        for e in &self.entries {
            if e.group != group {
                continue;
            }
            for &v in e.tensor.data() {
                for byte in v.to_bits().to_le_bytes() {
                    hash ^= byte as u64;
                    hash = hash.wrapping_mul(0x100000001b3);
                }
            }
        }
        hash
    }

    /// Inserts every parameter as a leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf(e.tensor.clone()))
            .collect();
        Binding { vars }
    }
}

/// Tape vars for one binding of a ParamSet.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// Weight initialization styles.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    /// Normal with std sqrt(2 / fan_in).
    HeNormal,
    /// Normal with std sqrt(1 / fan_in).
    XavierNormal,
    /// All zeros (zero convolutions, final output layers).
    Zero,
}

fn init_tensor(shape: Vec<usize>, fan_in: usize, init: Init, rng: &mut Rng) -> Tensor {
    match init {
        Init::HeNormal => Tensor::randn(shape, (2.0 / fan_in as f64).sqrt(), rng),
        Init::XavierNormal => Tensor::randn(shape, (1.0 / fan_in as f64).sqrt(), rng),
        Init::Zero => Tensor::zeros(shape),
    }
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        group: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let weight = params.register(
            format!("{name}.weight"),
            group,
            init_tensor(vec![cout, cin, k, k], cin * k * k, init, rng),
        );
        let bias = params.register(format!("{name}.bias"), group, Tensor::zeros(vec![cout]));
        Conv2d {
            weight,
            bias,
            stride,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape, binding: &Binding, x: Var) -> Var {
        tape.conv2d(
            x,
            binding.var(self.weight),
            Some(binding.var(self.bias)),
            self.stride,
            self.pad,
        )
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    /// [out, in]
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        group: &str,
        dim_in: usize,
        dim_out: usize,
        with_bias: bool,
        init: Init,
        rng: &mut Rng,
    ) -> Self {
        let weight = params.register(
            format!("{name}.weight"),
            group,
            init_tensor(vec![dim_out, dim_in], dim_in, init, rng),
        );
        let bias = with_bias
            .then(|| params.register(format!("{name}.bias"), group, Tensor::zeros(vec![dim_out])));
        Linear { weight, bias }
    }

    /// x: [n, in] -> [n, out]
    pub fn forward(&self, tape: &mut Tape, binding: &Binding, x: Var) -> Var {
        let y = tape.matmul_nt(x, binding.var(self.weight));
        match self.bias {
            Some(b) => tape.add_row_vec(y, binding.var(b)),
            None => y,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn init(params: &mut ParamSet, name: &str, group: &str, channels: usize, groups: usize) -> Self {
        let gamma = params.register(
            format!("{name}.gamma"),
            group,
            Tensor::full(vec![channels], 1.0),
        );
        let beta = params.register(format!("{name}.beta"), group, Tensor::zeros(vec![channels]));
        GroupNorm {
            gamma,
            beta,
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape, binding: &Binding, x: Var) -> Var {
        tape.group_norm(
            x,
            binding.var(self.gamma),
            binding.var(self.beta),
            self.groups,
            self.eps,
        )
    }
}

/// Single-head cross-attention: queries from a [c,h,w] feature map, keys and
/// values from a [n_ctx, d_ctx] context. Output is residual-added.
#[derive(Debug, Clone)]
pub struct CrossAttention {
    pub to_q: Linear,
    pub to_k: Linear,
    pub to_v: Linear,
    pub to_out: Linear,
    pub dim: usize,
}

impl CrossAttention {
    pub fn init(
        params: &mut ParamSet,
        name: &str,
        group: &str,
        channels: usize,
        d_ctx: usize,
        dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let to_q = Linear::init(params, &format!("{name}.to_q"), group, channels, dim, false, Init::XavierNormal, rng);
        let to_k = Linear::init(params, &format!("{name}.to_k"), group, d_ctx, dim, false, Init::XavierNormal, rng);
        let to_v = Linear::init(params, &format!("{name}.to_v"), group, d_ctx, dim, false, Init::XavierNormal, rng);
        // Zero-init output projection: attention starts as identity mapping.
        let to_out = Linear::init(params, &format!("{name}.to_out"), group, dim, channels, true, Init::Zero, rng);
        CrossAttention {
            to_q,
            to_k,
            to_v,
            to_out,
            dim,
        }
    }

    pub fn forward(&self, tape: &mut Tape, binding: &Binding, x: Var, ctx: Var) -> Var {
        let shape = tape.value(x).shape().to_vec();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let flat = tape.reshape(x, vec![c, h * w]);
        let tokens = tape.transpose2d(flat); // [hw, c]
        let q = self.to_q.forward(tape, binding, tokens); // [hw, d]
        let k = self.to_k.forward(tape, binding, ctx); // [n_ctx, d]
        let v = self.to_v.forward(tape, binding, ctx); // [n_ctx, d]
        let scores = tape.matmul_nt(q, k); // [hw, n_ctx]
        let scaled = tape.scale(scores, 1.0 / (self.dim as f64).sqrt());
        let attn = tape.softmax_rows(scaled);
        let mixed = tape.matmul(attn, v); // [hw, d]
        let out = self.to_out.forward(tape, binding, mixed); // [hw, c]
        let back = tape.transpose2d(out);
        let grid = tape.reshape(back, vec![c, h, w]);
        tape.add(x, grid)
    }
}

/// Sinusoidal timestep embedding (constant with respect to parameters).
pub fn sinusoidal_embedding(t: f64, dim: usize) -> Tensor {
    assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut data = vec![0.0; dim];
    for i in 0..half {
        let freq = (10_000f64).powf(-(i as f64) / half as f64);
        data[i] = (t * freq).sin();
        data[half + i] = (t * freq).cos();
    }
    Tensor::new(vec![1, dim], data)
}
