//! Noise-prediction training over triad records with freeze-mask handling,
//! deterministic resume, and loss/validation logging.

use crate::bundle::DenoiserBundle;
use crate::config::TrainConfig;
use crate::infer::infer;
use crate::{ModelError, Result};
use rayon::prelude::*;
use serde::Serialize;
use stainlab_core::{ImagePatch, Manifest, PatchStore, Rng};
use stainlab_diffusion::{diffusion_loss, forward_marginal, NoiseSchedule, DEFAULT_SAMPLE_STEPS};
use stainlab_grad::image::patch_to_chw;
use stainlab_grad::{AdamConfig, AdamW, Tape, Tensor};
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Per-triad constants precomputed once per run: raw latent of the
/// transferred image, source pixels, and frozen-VAE target tokens.
#[derive(Debug, Clone)]
pub struct TriadTensors {
    pub z0_raw: Tensor,
    pub source: Tensor,
    pub target_tokens: Tensor,
}

/// Loads and encodes every triad of a manifest.
pub fn prepare_triads(
    bundle: &DenoiserBundle,
    manifest: &Manifest,
    store: &PatchStore,
) -> Result<Vec<TriadTensors>> {
    let records: Vec<_> = manifest.triads.clone();
    let prepared: Vec<Result<TriadTensors>> = records
        .par_iter()
        .map(|t| {
            let source = store.load(&t.source_id)?;
            let target = store.load(&t.target_id)?;
            let transferred = store.load(&t.transferred_id)?;
            Ok(TriadTensors {
                z0_raw: bundle.vae.encode_patch_mu(&transferred),
                source: patch_to_chw(&source),
                target_tokens: bundle.target_latent_tokens(&target),
            })
        })
        .collect();
    prepared.into_iter().collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub wall_time: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValRecord {
    pub step: u64,
    pub val_rgb_dist: f64,
    pub sample_file: Option<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TrainReport {
    pub losses: Vec<LossRecord>,
    pub val: Vec<ValRecord>,
    pub epoch_mean_loss: Vec<f64>,
}

/// Fixed validation triad watched during training (the sudden-convergence
/// probe): inference output is compared against the NST reference.
#[derive(Debug, Clone)]
pub struct ValidationTriad {
    pub source: ImagePatch,
    pub target: ImagePatch,
    pub reference: ImagePatch,
}

pub struct Trainer {
    pub bundle: DenoiserBundle,
    pub schedule: NoiseSchedule,
    pub config: TrainConfig,
    pub opt: AdamW,
    pub rng: Rng,
    pub epoch: u64,
    pub global_step: u64,
    pub validation: Option<ValidationTriad>,
}

fn sample_pass(
    bundle: &DenoiserBundle,
    schedule: &NoiseSchedule,
    data: &TriadTensors,
    t: usize,
    eps: &Tensor,
) -> (f64, Vec<Option<Tensor>>) {
    let mut z0 = data.z0_raw.clone();
    z0.scale_assign(bundle.latent_scale);
    let z_t = Tensor::new(
        z0.shape().to_vec(),
        forward_marginal(z0.data(), t, eps.data(), schedule),
    );

    let mut tape = Tape::new();
    let binding = bundle.params.bind(&mut tape);
    let z = tape.leaf(z_t);
    let src = tape.leaf(data.source.clone());
    let tokens = tape.leaf(data.target_tokens.clone());
    let eps_hat = bundle.denoise_on_tape(&mut tape, &binding, z, t, Some(src), tokens);
    let eps_leaf = tape.leaf(eps.clone());
    let loss = tape.mse(eps_leaf, eps_hat);

    let loss_value = tape.value(loss).item();
    debug_assert!(
        (loss_value - diffusion_loss(eps.data(), tape.value(eps_hat).data())).abs() < 1e-12
    );
    let mut grads = tape.backward(loss);
    let collected = binding
        .vars()
        .iter()
        .map(|&v| grads.take(v))
        .collect::<Vec<_>>();
    (loss_value, collected)
}

impl Trainer {
    pub fn new(bundle: DenoiserBundle, schedule: NoiseSchedule, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = AdamW::new(AdamConfig {
            lr: config.lr,
            weight_decay: config.weight_decay,
            ..Default::default()
        });
        let rng = Rng::from_seed_stream(config.seed, 0x7472_6169);
        Ok(Trainer {
            bundle,
            schedule,
            config,
            opt,
            rng,
            epoch: 0,
            global_step: 0,
            validation: None,
        })
    }

    /// One optimizer update over a batch. Timesteps and noises are drawn
    /// serially from the trainer RNG; per-sample gradients are computed in
    /// parallel and reduced in batch order, so the result is deterministic.
    pub fn train_step(&mut self, batch: &[&TriadTensors]) -> Result<f64> {
        if batch.is_empty() {
            return Err(ModelError::InvalidArgument("empty batch".into()));
        }
        let t_total = self.schedule.t_total();
        let draws: Vec<(usize, Tensor)> = batch
            .iter()
            .map(|d| {
                let t = 1 + self.rng.below(t_total);
                let n = d.z0_raw.len();
                let eps = Tensor::new(
                    d.z0_raw.shape().to_vec(),
                    (0..n).map(|_| self.rng.normal()).collect(),
                );
                (t, eps)
            })
            .collect();

        let results: Vec<(f64, Vec<Option<Tensor>>)> = batch
            .par_iter()
            .zip(&draws)
            .map(|(data, (t, eps))| sample_pass(&self.bundle, &self.schedule, data, *t, eps))
            .collect();

        let scale = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        let mut mean_grads: Vec<Option<Tensor>> = vec![None; self.bundle.params.len()];
        for (sample_loss, grads) in results {
            if !sample_loss.is_finite() {
                return Err(ModelError::Training(format!(
                    "non-finite loss {sample_loss} at step {}",
                    self.global_step
                )));
            }
            loss += sample_loss * scale;
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

        let mut tape = Tape::new();
        let binding = self.bundle.params.bind(&mut tape);
        let grads = stainlab_grad::tape::Grads::from_parts(binding.vars(), mean_grads, tape.len());
        let frozen = self.bundle.frozen_groups();
        self.opt.step(&mut self.bundle.params, &grads, &binding, &frozen);
        self.global_step += 1;
        Ok(loss)
    }

    fn compute_latent_scale(&mut self, data: &[TriadTensors]) {
        let mut n = 0usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for d in data {
            for &v in d.z0_raw.data() {
                n += 1;
                sum += v;
                sum_sq += v * v;
            }
        }
        let mean = sum / n as f64;
        let std = (sum_sq / n as f64 - mean * mean).sqrt();
        if std > 1e-9 {
            self.bundle.latent_scale = 1.0 / std;
        }
    }

    /// Runs the epoch loop from the current epoch to `config.epochs`.
    /// Writes `metrics.jsonl`, `val_log.jsonl`, per-epoch checkpoints and
    /// validation sample images into `out_dir` when given.
    pub fn train(&mut self, data: &[TriadTensors], out_dir: Option<&Path>) -> Result<TrainReport> {
        let mut report = TrainReport::default();
        if self.epoch as usize >= self.config.epochs {
            return Ok(report);
        }
        if data.is_empty() {
            return Err(ModelError::InvalidArgument("no training triads".into()));
        }
        if self.global_step == 0 && self.bundle.latent_scale == 1.0 {
            self.compute_latent_scale(data);
        }
        if let Some(dir) = out_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| ModelError::Training(format!("cannot create {dir:?}: {e}")))?;
        }

        let start = Instant::now();
        while (self.epoch as usize) < self.config.epochs {
            // Fresh identity order each epoch: the permutation depends only
            // on the RNG state, which the checkpoint captures.
            let mut order: Vec<usize> = (0..data.len()).collect();
            self.rng.shuffle(&mut order);
            let mut epoch_sum = 0.0;
            let mut epoch_batches = 0usize;
            for chunk in order.chunks(self.config.batch) {
                let batch: Vec<&TriadTensors> = chunk.iter().map(|&i| &data[i]).collect();
                let loss = self.train_step(&batch)?;
                epoch_sum += loss;
                epoch_batches += 1;

                if self.global_step % self.config.log_every.max(1) as u64 == 0 {
                    report.losses.push(LossRecord {
                        step: self.global_step,
                        loss,
                        lr: self.config.lr,
                        wall_time: start.elapsed().as_secs_f64(),
                    });
                }
                if self.config.val_every > 0
                    && self.global_step % self.config.val_every as u64 == 0
                {
                    if let Some(val) = self.validation.clone() {
                        report.val.push(self.validation_probe(&val, out_dir)?);
                    }
                }
            }
            self.epoch += 1;
            report.epoch_mean_loss.push(epoch_sum / epoch_batches as f64);
            if let Some(dir) = out_dir {
                crate::checkpoint::save_checkpoint(
                    self,
                    dir.join(format!("ckpt_epoch_{:03}.bin", self.epoch)),
                )?;
                crate::checkpoint::save_checkpoint(self, dir.join("latest.bin"))?;
            }
        }

        if let Some(dir) = out_dir {
            write_jsonl(&dir.join("metrics.jsonl"), &report.losses)?;
            write_jsonl(&dir.join("val_log.jsonl"), &report.val)?;
        }
        Ok(report)
    }

    /// Samples the fixed validation triad and measures mean-RGB distance to
    /// the NST reference; the sudden-convergence transition shows up here.
    fn validation_probe(
        &self,
        val: &ValidationTriad,
        out_dir: Option<&Path>,
    ) -> Result<ValRecord> {
        let sample = infer(
            &self.bundle,
            &self.schedule,
            &val.source,
            &val.target,
            DEFAULT_SAMPLE_STEPS.min(self.schedule.t_total()),
            0x7661_6c00 ^ self.global_step,
        )?;
        let a = sample.mean_rgb();
        let b = val.reference.mean_rgb();
        let dist = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt();
        let sample_file = if let Some(dir) = out_dir {
            let file = format!("val_step_{:06}.png", self.global_step);
            stainlab_core::io::save_patch(&sample, dir.join(&file))?;
            Some(file)
        } else {
            None
        };
        Ok(ValRecord {
            step: self.global_step,
            val_rgb_dist: dist,
            sample_file,
        })
    }
}

fn write_jsonl<T: Serialize>(path: &PathBuf, records: &[T]) -> Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| ModelError::Training(format!("write {path:?}: {e}")))
}

/// Convenience wrapper: builds a trainer and runs the full epoch loop.
pub fn train(
    bundle: DenoiserBundle,
    schedule: NoiseSchedule,
    data: &[TriadTensors],
    config: TrainConfig,
    validation: Option<ValidationTriad>,
    out_dir: Option<&Path>,
) -> Result<(DenoiserBundle, TrainReport)> {
    let mut trainer = Trainer::new(bundle, schedule, config)?;
    trainer.validation = validation;
    let report = trainer.train(data, out_dir)?;
    Ok((trainer.bundle, report))
}

/// Spec-level single-step entry point over triad tensors.
pub fn train_step(trainer: &mut Trainer, batch: &[&TriadTensors]) -> Result<f64> {
    trainer.train_step(batch)
}
