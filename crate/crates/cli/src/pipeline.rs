//! Pipeline glue shared by the CLI commands and the acceptance suite.

use anyhow::{anyhow, bail, Result};
use rayon::prelude::*;
use stainlab_core::synth::synth_patch;
use stainlab_core::{
    CurationPlan, ImagePatch, Manifest, PatchEntry, PatchStore, Rng, SyntheticCorpusConfig,
    TriadRecord,
};
use stainlab_curation::{build_plan, ConvEmbedder, CurationConfig};
use stainlab_diffusion::{make_schedule, NoiseSchedule, ScheduleKind};
use stainlab_metrics::{psnr, ssim};
use stainlab_model::train::{prepare_triads, TriadTensors, ValidationTriad};
use stainlab_model::{
    infer, train_autoencoder, Autoencoder, DenoiserBundle, ModelConfig, TrainConfig, TrainReport,
    Trainer, VaeTrainConfig,
};
use stainlab_nst::{generate_transferred_set, ConvStyleExtractor, NstConfig};
use std::collections::BTreeSet;
use std::path::Path;

/// Synthesizes `config.n_patches` patches into the store and returns the
/// corpus manifest.
pub fn synth_corpus(
    store: &PatchStore,
    config: &SyntheticCorpusConfig,
    corpus_name: &str,
) -> Result<Manifest> {
    config.validate()?;
    let mut manifest = Manifest::new(corpus_name, config.texture_seed);
    manifest
        .config_snapshot
        .insert("synth_config".into(), serde_json::to_string(config)?);
    for index in 0..config.n_patches as u64 {
        let patch = synth_patch(config, index)?;
        store.save(&patch)?;
        manifest.patches.push(PatchEntry {
            id: patch.id.clone(),
            file: format!("{}.png", patch.id),
            side: patch.side(),
            magnification: patch.magnification,
        });
    }
    Ok(manifest)
}

/// Loads every patch of a corpus manifest, in manifest order.
pub fn load_corpus(store: &PatchStore, manifest: &Manifest) -> Result<Vec<ImagePatch>> {
    manifest
        .patches
        .iter()
        .map(|e| {
            let mut p = store.load(&e.id)?;
            p.magnification = e.magnification;
            Ok(p)
        })
        .collect()
}

/// Two-stage curation over a corpus manifest.
pub fn curate_corpus(
    store: &PatchStore,
    corpus: &Manifest,
    config: &CurationConfig,
    embedder_seed: u64,
) -> Result<Manifest> {
    let patches = load_corpus(store, corpus)?;
    let embedder = ConvEmbedder::new(embedder_seed);
    let plan = build_plan(&patches, &embedder, config)?;
    let mut manifest = Manifest::new(format!("{}-curation", corpus.corpus_name), config.seed);
    manifest
        .config_snapshot
        .insert("n_targets".into(), config.n_targets.to_string());
    manifest
        .config_snapshot
        .insert("n_sources".into(), config.n_sources.to_string());
    manifest
        .config_snapshot
        .insert("stage1_clusters".into(), config.stage1_clusters.to_string());
    manifest
        .config_snapshot
        .insert("embedder_seed".into(), embedder_seed.to_string());
    manifest.curation = Some(plan);
    Ok(manifest)
}

/// NST factory over a curation plan (resumable).
pub fn generate_triads(
    store: &PatchStore,
    plan: &CurationPlan,
    nst_config: &NstConfig,
    extractor_seed: u64,
    extractor_stages: usize,
    seed: u64,
) -> Result<(Manifest, usize, usize)> {
    let extractor = ConvStyleExtractor::new(extractor_seed, extractor_stages);
    let outcome = generate_transferred_set(plan, &extractor, nst_config, store, seed)?;
    Ok((outcome.manifest, outcome.computed, outcome.skipped))
}

/// Deterministic train/holdout split of the triad records.
pub fn split_triads(triads: &[TriadRecord], holdout: usize, seed: u64) -> (Vec<TriadRecord>, Vec<TriadRecord>) {
    let mut order: Vec<usize> = (0..triads.len()).collect();
    let mut rng = Rng::from_seed_stream(seed, 0x686f_6c64);
    rng.shuffle(&mut order);
    let holdout = holdout.min(triads.len());
    let held: Vec<TriadRecord> = order[..holdout].iter().map(|&i| triads[i].clone()).collect();
    let train: Vec<TriadRecord> = order[holdout..].iter().map(|&i| triads[i].clone()).collect();
    (train, held)
}

/// The patches the VAE pretrains on: all sources and targets plus a
/// deterministic slice of transferred images, capped at `max_patches`.
pub fn vae_corpus(store: &PatchStore, triads: &Manifest, max_patches: usize) -> Result<Vec<ImagePatch>> {
    let mut ids = BTreeSet::new();
    for t in &triads.triads {
        ids.insert(t.source_id.clone());
        ids.insert(t.target_id.clone());
    }
    let base_count = ids.len();
    let transferred: Vec<&str> = triads
        .triads
        .iter()
        .map(|t| t.transferred_id.as_str())
        .collect();
    if base_count < max_patches && !transferred.is_empty() {
        let want = max_patches - base_count;
        let stride = (transferred.len() / want.max(1)).max(1);
        for id in transferred.iter().step_by(stride).take(want) {
            ids.insert(id.to_string());
        }
    }
    ids.iter().map(|id| Ok(store.load(id)?)).collect()
}

pub struct TrainedPipeline {
    pub bundle: DenoiserBundle,
    pub schedule: NoiseSchedule,
    pub report: TrainReport,
    pub vae_epoch_losses: Vec<f64>,
    pub train_triads: Vec<TriadRecord>,
    pub holdout_triads: Vec<TriadRecord>,
}

/// VAE pretraining + diffusion training over a triad manifest.
#[allow(clippy::too_many_arguments)]
pub fn train_pipeline(
    store: &PatchStore,
    triads: &Manifest,
    model_config: &ModelConfig,
    vae_config: &VaeTrainConfig,
    train_config: &TrainConfig,
    vae_max_patches: usize,
    holdout: usize,
    out_dir: Option<&Path>,
) -> Result<TrainedPipeline> {
    train_pipeline_with_vae(
        store,
        triads,
        model_config,
        vae_config,
        train_config,
        vae_max_patches,
        holdout,
        out_dir,
        None,
    )
}

/// Like [`train_pipeline`] but reusing an already-pretrained autoencoder
/// (e.g. for freeze-policy ablations over the same latent space).
#[allow(clippy::too_many_arguments)]
pub fn train_pipeline_with_vae(
    store: &PatchStore,
    triads: &Manifest,
    model_config: &ModelConfig,
    vae_config: &VaeTrainConfig,
    train_config: &TrainConfig,
    vae_max_patches: usize,
    holdout: usize,
    out_dir: Option<&Path>,
    pretrained: Option<Autoencoder>,
) -> Result<TrainedPipeline> {
    if triads.triads.is_empty() {
        bail!("triad manifest is empty");
    }
    let (vae, vae_epoch_losses) = match pretrained {
        Some(vae) => (vae, Vec::new()),
        None => {
            let vae_patches = vae_corpus(store, triads, vae_max_patches)?;
            train_autoencoder(&vae_patches, model_config, vae_config)?
        }
    };

    let bundle = DenoiserBundle::new(vae, model_config.clone(), train_config.decoder_frozen)?;
    let schedule = make_schedule(
        model_config.t_total,
        ScheduleKind::Linear,
        model_config.beta_start,
        model_config.beta_end,
    )?;

    let (train_split, holdout_split) = split_triads(&triads.triads, holdout, train_config.seed);
    if train_split.is_empty() {
        bail!("holdout consumed every triad");
    }
    let mut train_manifest = triads.clone();
    train_manifest.triads = train_split.clone();
    let data = prepare_triads(&bundle, &train_manifest, store)?;

    let mut trainer = Trainer::new(bundle, schedule.clone(), train_config.clone())?;
    if let Some(first_holdout) = holdout_split.first() {
        trainer.validation = Some(ValidationTriad {
            source: store.load(&first_holdout.source_id)?,
            target: store.load(&first_holdout.target_id)?,
            reference: store.load(&first_holdout.transferred_id)?,
        });
    }
    let report = trainer.train(&data, out_dir)?;

    Ok(TrainedPipeline {
        bundle: trainer.bundle,
        schedule,
        report,
        vae_epoch_losses,
        train_triads: train_split,
        holdout_triads: holdout_split,
    })
}

/// Per-triad evaluation of model output against the NST reference.
#[derive(Debug, Clone)]
pub struct TriadEval {
    pub rgb_dist_model: f64,
    pub rgb_dist_source: f64,
    pub ssim_model: f64,
    pub ssim_source: f64,
    pub psnr_model: f64,
}

fn rgb_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter()
        .zip(&b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Runs inference on each triad and compares against the transferred
/// reference. Per-triad seeds derive from the triad index.
pub fn evaluate_triads(
    bundle: &DenoiserBundle,
    schedule: &NoiseSchedule,
    store: &PatchStore,
    triads: &[TriadRecord],
    n_steps: usize,
    seed: u64,
) -> Result<Vec<TriadEval>> {
    let evals: Vec<Result<TriadEval>> = triads
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let source = store.load(&t.source_id)?;
            let target = store.load(&t.target_id)?;
            let reference = store.load(&t.transferred_id)?;
            let out = infer(bundle, schedule, &source, &target, n_steps, seed ^ (i as u64) << 8)?;
            Ok(TriadEval {
                rgb_dist_model: rgb_distance(out.mean_rgb(), reference.mean_rgb()),
                rgb_dist_source: rgb_distance(source.mean_rgb(), reference.mean_rgb()),
                ssim_model: ssim(&out, &reference)?,
                ssim_source: ssim(&source, &reference)?,
                psnr_model: psnr(&out, &reference, 1.0)?,
            })
        })
        .collect();
    evals.into_iter().collect()
}

/// Tensor preparation for a caller-chosen triad subset.
pub fn prepare_triad_subset(
    bundle: &DenoiserBundle,
    base: &Manifest,
    records: Vec<TriadRecord>,
    store: &PatchStore,
) -> Result<Vec<TriadTensors>> {
    let mut manifest = base.clone();
    manifest.triads = records;
    Ok(prepare_triads(bundle, &manifest, store)?)
}

/// Mean PSNR against the NST reference at a given sampling step count.
pub fn mean_psnr_at_steps(
    bundle: &DenoiserBundle,
    schedule: &NoiseSchedule,
    store: &PatchStore,
    triads: &[TriadRecord],
    n_steps: usize,
    seed: u64,
) -> Result<f64> {
    let evals = evaluate_triads(bundle, schedule, store, triads, n_steps, seed)?;
    let finite: Vec<f64> = evals
        .iter()
        .map(|e| e.psnr_model)
        .filter(|v| v.is_finite())
        .collect();
    if finite.is_empty() {
        return Err(anyhow!("no finite PSNR values"));
    }
    Ok(finite.iter().sum::<f64>() / finite.len() as f64)
}

/// Reconstruction PSNR of the bundle's VAE on freshly synthesized held-out
/// patches at the given side.
pub fn vae_reconstruction_psnr(
    vae: &Autoencoder,
    base: &SyntheticCorpusConfig,
    side: usize,
    n_patches: usize,
    index_offset: u64,
) -> Result<f64> {
    let config = SyntheticCorpusConfig {
        side,
        ..base.clone()
    };
    let mut values = Vec::with_capacity(n_patches);
    for i in 0..n_patches as u64 {
        let patch = synth_patch(&config, index_offset + i)?;
        let mu = vae.encode_patch_mu(&patch);
        let recon = vae.decode_to_patch(&mu, "recon", patch.magnification);
        values.push(psnr(&recon, &patch, 1.0)?);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}
