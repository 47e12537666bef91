//! Versioned binary checkpoints: every parameter group, optimizer moments,
//! config snapshot and RNG state, with exact f64 bit preservation.

use crate::bundle::DenoiserBundle;
use crate::config::{ModelConfig, TrainConfig};
use crate::train::Trainer;
use crate::vae::Autoencoder;
use crate::{ModelError, Result};
use stainlab_core::Rng;
use stainlab_diffusion::{make_schedule, ScheduleKind};
use stainlab_grad::{AdamConfig, AdamW, AdamWState, ParamSet, Tensor};
use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"SLCKPT01";

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub vae_seed: u64,
    pub latent_scale: f64,
    pub epoch: u64,
    pub global_step: u64,
    pub rng_state: [u64; 4],
    pub vae_params: Vec<(String, Vec<f64>)>,
    pub model_params: Vec<(String, Vec<f64>)>,
    pub opt_t: u64,
    pub opt_moments: Vec<(u64, Vec<f64>, Vec<f64>)>,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> std::io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> std::io::Result<()> {
        self.0.write_all(&v.to_bits().to_le_bytes())
    }
    fn bytes(&mut self, b: &[u8]) -> std::io::Result<()> {
        self.u64(b.len() as u64)?;
        self.0.write_all(b)
    }
    fn f64s(&mut self, vs: &[f64]) -> std::io::Result<()> {
        self.u64(vs.len() as u64)?;
        for v in vs {
            self.f64(*v)?;
        }
        Ok(())
    }
    fn named_params(&mut self, entries: &[(String, Vec<f64>)]) -> std::io::Result<()> {
        self.u64(entries.len() as u64)?;
        for (name, data) in entries {
            self.bytes(name.as_bytes())?;
            self.f64s(data)?;
        }
        Ok(())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn u64(&mut self) -> std::io::Result<u64> {
        let mut b = [0u8; 8];
        self.0.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }
    fn f64(&mut self) -> std::io::Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    fn bytes(&mut self) -> std::io::Result<Vec<u8>> {
        let n = self.u64()? as usize;
        let mut b = vec![0u8; n];
        self.0.read_exact(&mut b)?;
        Ok(b)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes().map_err(io_err)?)
            .map_err(|e| ModelError::Checkpoint(format!("bad utf8: {e}")))
    }
    fn f64s(&mut self) -> std::io::Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
    fn named_params(&mut self) -> Result<Vec<(String, Vec<f64>)>> {
        let n = self.u64().map_err(io_err)? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let name = self.string()?;
            let data = self.f64s().map_err(io_err)?;
            out.push((name, data));
        }
        Ok(out)
    }
}

fn io_err(e: std::io::Error) -> ModelError {
    ModelError::Checkpoint(e.to_string())
}

fn dump_params(params: &ParamSet) -> Vec<(String, Vec<f64>)> {
    params
        .iter()
        .map(|(_, e)| (e.name.clone(), e.tensor.data().to_vec()))
        .collect()
}

fn restore_params(params: &mut ParamSet, saved: &[(String, Vec<f64>)]) -> Result<()> {
    if saved.len() != params.len() {
        return Err(ModelError::Checkpoint(format!(
            "checkpoint has {} tensors, model has {}",
            saved.len(),
            params.len()
        )));
    }
    for (name, data) in saved {
        let id = params.id_by_name(name).ok_or_else(|| {
            ModelError::Checkpoint(format!("unknown parameter {name} in checkpoint"))
        })?;
        let t = params.get_mut(id);
        if t.len() != data.len() {
            return Err(ModelError::Checkpoint(format!(
                "parameter {name} has {} values, checkpoint has {}",
                t.len(),
                data.len()
            )));
        }
        *t = Tensor::new(t.shape().to_vec(), data.clone());
    }
    Ok(())
}

pub fn save_checkpoint(trainer: &Trainer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ckpt = Checkpoint {
        model_config: trainer.bundle.config.clone(),
        train_config: trainer.config.clone(),
        vae_seed: trainer.bundle.vae.seed,
        latent_scale: trainer.bundle.latent_scale,
        epoch: trainer.epoch,
        global_step: trainer.global_step,
        rng_state: trainer.rng.state(),
        vae_params: dump_params(&trainer.bundle.vae.params),
        model_params: dump_params(&trainer.bundle.params),
        opt_t: trainer.opt.state().t,
        opt_moments: trainer
            .opt
            .state()
            .moments
            .iter()
            .map(|(&idx, (m, v))| (idx as u64, m.clone(), v.clone()))
            .collect(),
    };
    write_checkpoint(&ckpt, path)
}

fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = Writer(std::io::BufWriter::new(file));
    (|| -> std::io::Result<()> {
        w.0.write_all(MAGIC)?;
        w.bytes(serde_json::to_string(&ckpt.model_config).unwrap().as_bytes())?;
        w.bytes(serde_json::to_string(&ckpt.train_config).unwrap().as_bytes())?;
        w.u64(ckpt.vae_seed)?;
        w.f64(ckpt.latent_scale)?;
        w.u64(ckpt.epoch)?;
        w.u64(ckpt.global_step)?;
        for s in ckpt.rng_state {
            w.u64(s)?;
        }
        w.named_params(&ckpt.vae_params)?;
        w.named_params(&ckpt.model_params)?;
        w.u64(ckpt.opt_t)?;
        w.u64(ckpt.opt_moments.len() as u64)?;
        // Moments sorted by parameter index for byte determinism.
        let mut moments = ckpt.opt_moments.clone();
        moments.sort_by_key(|(idx, _, _)| *idx);
        for (idx, m, v) in &moments {
            w.u64(*idx)?;
            w.f64s(m)?;
            w.f64s(v)?;
        }
        Ok(())
    })()
    .map_err(io_err)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = std::fs::File::open(path.as_ref()).map_err(io_err)?;
    let mut r = Reader(std::io::BufReader::new(file));
    let mut magic = [0u8; 8];
    r.0.read_exact(&mut magic).map_err(io_err)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint(format!(
            "bad magic {magic:?}; not a checkpoint or unsupported version"
        )));
    }
    let model_config: ModelConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| ModelError::Checkpoint(format!("bad model config: {e}")))?;
    let train_config: TrainConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| ModelError::Checkpoint(format!("bad train config: {e}")))?;
    let vae_seed = r.u64().map_err(io_err)?;
    let latent_scale = r.f64().map_err(io_err)?;
    let epoch = r.u64().map_err(io_err)?;
    let global_step = r.u64().map_err(io_err)?;
    let mut rng_state = [0u64; 4];
    for s in &mut rng_state {
        *s = r.u64().map_err(io_err)?;
    }
    let vae_params = r.named_params()?;
    let model_params = r.named_params()?;
    let opt_t = r.u64().map_err(io_err)?;
    let n = r.u64().map_err(io_err)? as usize;
    let mut opt_moments = Vec::with_capacity(n);
    for _ in 0..n {
        let idx = r.u64().map_err(io_err)?;
        let m = r.f64s().map_err(io_err)?;
        let v = r.f64s().map_err(io_err)?;
        opt_moments.push((idx, m, v));
    }
    Ok(Checkpoint {
        model_config,
        train_config,
        vae_seed,
        latent_scale,
        epoch,
        global_step,
        rng_state,
        vae_params,
        model_params,
        opt_t,
        opt_moments,
    })
}

/// Rebuilds a trainer in exactly the saved state.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Trainer> {
    let ckpt = read_checkpoint(path)?;

    let mut vae = Autoencoder::init(ckpt.model_config.latent_channels, ckpt.vae_seed);
    restore_params(&mut vae.params, &ckpt.vae_params)?;

    let mut bundle = DenoiserBundle::new(
        vae,
        ckpt.model_config.clone(),
        ckpt.train_config.decoder_frozen,
    )?;
    restore_params(&mut bundle.params, &ckpt.model_params)?;
    bundle.latent_scale = ckpt.latent_scale;

    let schedule = make_schedule(
        ckpt.model_config.t_total,
        ScheduleKind::Linear,
        ckpt.model_config.beta_start,
        ckpt.model_config.beta_end,
    )?;

    let mut moments = HashMap::new();
    for (idx, m, v) in ckpt.opt_moments {
        moments.insert(idx as usize, (m, v));
    }
    let opt = AdamW::restore(
        AdamConfig {
            lr: ckpt.train_config.lr,
            weight_decay: ckpt.train_config.weight_decay,
            ..Default::default()
        },
        AdamWState {
            t: ckpt.opt_t,
            moments,
        },
    );

    let mut trainer = Trainer::new(bundle, schedule, ckpt.train_config)?;
    trainer.opt = opt;
    trainer.rng = Rng::from_state(ckpt.rng_state);
    trainer.epoch = ckpt.epoch;
    trainer.global_step = ckpt.global_step;
    Ok(trainer)
}
