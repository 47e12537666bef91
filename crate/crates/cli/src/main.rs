//! stainlab: synthetic corpora, curation, the NST factory, diffusion
//! training, inference, evaluation and whole-slide runs.

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand};
use serde::Serialize;
use stainlab::config::{config_to_toml, load_config, RunConfig};
use stainlab::pipeline;
use stainlab_core::manifest::{read_manifest, write_manifest};
use stainlab_core::{CoreError, Manifest, PatchStore};
use stainlab_curation::CurationError;
use stainlab_metrics::{fid, pearson, psnr, ssim, summarize, TargetReport};
use stainlab_model::{load_checkpoint, ModelError};
use stainlab_nst::NstError;
use stainlab_stains::{StainError, StainEstimator};
use stainlab_wsi::{
    plan_tiles, run_slide, tissue_mask, synth_slide, DeconvNormalizer, IdentityNormalizer,
    PseudoSlide, ReinhardNormalizer, SlideConfig, StainFuserNormalizer, TileNormalizer,
};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Parser)]
#[command(name = "stainlab", version, about = "Stain normalization lab")]
struct Cli {
    /// TOML config file; omit for defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Dotted-path config overrides, e.g. --set corpus.side=64.
    #[arg(long = "set", global = true)]
    overrides: Vec<String>,

    /// Global seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output directory.
    #[arg(long, global = true, default_value = "stainlab-out")]
    out: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus into the patch store.
    Synth,
    /// Build a curation plan from a corpus manifest.
    Curate {
        /// Corpus manifest (defaults to <out>/corpus.json).
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Run the NST factory over a curation plan (resumable).
    Generate {
        /// Plan manifest (defaults to <out>/curation.json).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Pretrain the VAE and train the diffusion model.
    Train {
        /// Triad manifest (defaults to <out>/triads.json).
        #[arg(long)]
        triads: Option<PathBuf>,
    },
    /// Stain-transfer one image with a trained checkpoint.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Source image: a PNG path or a store id.
        #[arg(long)]
        source: String,
        /// Target image: a PNG path or a store id.
        #[arg(long)]
        target: String,
        #[arg(long, default_value_t = 20)]
        steps: usize,
    },
    /// Evaluate an output directory against a reference directory.
    Eval {
        #[arg(long)]
        outputs: PathBuf,
        #[arg(long)]
        references: PathBuf,
    },
    /// Generate a synthetic pseudo-slide PNG.
    SynthSlide {
        #[arg(long, default_value_t = 1024)]
        width: usize,
        #[arg(long, default_value_t = 1024)]
        height: usize,
    },
    /// Normalize a whole pseudo-slide tile by tile.
    Wsi {
        /// Slide PNG.
        #[arg(long)]
        slide: PathBuf,
        /// Target patch PNG.
        #[arg(long)]
        target: PathBuf,
        /// identity | reinhard | ruifrok | macenko | vahadane | stainfuser
        #[arg(long, default_value = "macenko")]
        normalizer: String,
        /// Trained checkpoint (required for stainfuser).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(err) => {
            let code = classify(&err);
            let record = serde_json::json!({
                "error": format!("{err:#}"),
                "exit_code": code,
            });
            eprintln!("{record}");
            code
        }
    };
    std::process::exit(code);
}

/// Exit codes: 2 config, 3 data, 4 numerical.
fn classify(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CoreError>() {
            return match e {
                CoreError::InvalidArgument(_) => 2,
                CoreError::Invariant(_) => 4,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<StainError>() {
            return match e {
                StainError::SizeMismatch(_) => 2,
                StainError::Core(_) => 3,
                _ => 4,
            };
        }
        if let Some(e) = cause.downcast_ref::<CurationError>() {
            return match e {
                CurationError::InvalidArgument(_) => 2,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<ModelError>() {
            return match e {
                ModelError::InvalidArgument(_) => 2,
                ModelError::Training(_) => 4,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<NstError>() {
            return match e {
                NstError::SizeMismatch(_, _) => 2,
                NstError::NonFiniteLoss(_) => 4,
                NstError::Core(_) => 3,
            };
        }
        if cause.downcast_ref::<stainlab_diffusion::DiffusionError>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<stainlab_wsi::WsiError>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    2
}

fn run(cli: Cli) -> Result<()> {
    if let Some(workers) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global()
            .ok();
    }
    let mut config = load_config(cli.config.as_deref(), &cli.overrides)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    std::fs::create_dir_all(&cli.out).with_context(|| format!("creating {:?}", cli.out))?;

    let command_name = match &cli.command {
        Command::Synth => "synth",
        Command::Curate { .. } => "curate",
        Command::Generate { .. } => "generate",
        Command::Train { .. } => "train",
        Command::Infer { .. } => "infer",
        Command::Eval { .. } => "eval",
        Command::SynthSlide { .. } => "synth-slide",
        Command::Wsi { .. } => "wsi",
    };
    // Provenance snapshot of the resolved config.
    std::fs::write(
        cli.out.join(format!("{command_name}-config.toml")),
        config_to_toml(&config),
    )?;

    let store = open_store(&cli.out)?;
    match cli.command {
        Command::Synth => cmd_synth(&config, &store, &cli.out),
        Command::Curate { corpus } => cmd_curate(&config, &store, &cli.out, corpus),
        Command::Generate { plan } => cmd_generate(&config, &store, &cli.out, plan),
        Command::Train { triads } => cmd_train(&config, &store, &cli.out, triads),
        Command::Infer {
            checkpoint,
            source,
            target,
            steps,
        } => cmd_infer(&store, &cli.out, &checkpoint, &source, &target, steps),
        Command::Eval {
            outputs,
            references,
        } => cmd_eval(&config, &cli.out, &outputs, &references),
        Command::SynthSlide { width, height } => cmd_synth_slide(&config, &cli.out, width, height),
        Command::Wsi {
            slide,
            target,
            normalizer,
            checkpoint,
        } => cmd_wsi(&config, &cli.out, &slide, &target, &normalizer, checkpoint),
    }
}

/// Patch store root: $STAINLAB_CACHE if set, else <out>/store.
fn open_store(out: &Path) -> Result<PatchStore> {
    let root = match std::env::var_os("STAINLAB_CACHE") {
        Some(dir) => PathBuf::from(dir),
        None => out.join("store"),
    };
    Ok(PatchStore::open(root)?)
}

fn cmd_synth(config: &RunConfig, store: &PatchStore, out: &Path) -> Result<()> {
    let synth_config = config.corpus.to_synth_config(config.seed)?;
    let manifest = pipeline::synth_corpus(store, &synth_config, &config.corpus.name)?;
    let path = out.join("corpus.json");
    write_manifest(&manifest, &path)?;
    println!(
        "wrote {} patches and manifest {}",
        manifest.patches.len(),
        path.display()
    );
    Ok(())
}

fn cmd_curate(
    config: &RunConfig,
    store: &PatchStore,
    out: &Path,
    corpus: Option<PathBuf>,
) -> Result<()> {
    let corpus_path = corpus.unwrap_or_else(|| out.join("corpus.json"));
    let corpus = read_manifest(&corpus_path)
        .with_context(|| format!("reading corpus manifest {corpus_path:?}"))?;
    let manifest = pipeline::curate_corpus(
        store,
        &corpus,
        &config.curation.to_curation_config(config.seed ^ 1),
        config.curation.embedder_seed,
    )?;
    let plan = manifest.curation.as_ref().unwrap();
    let path = out.join("curation.json");
    write_manifest(&manifest, &path)?;
    println!(
        "plan: {} targets x {} sources -> {} pending triads ({})",
        plan.target_ids.len(),
        plan.source_ids.len(),
        plan.target_ids.len() * plan.source_ids.len(),
        path.display()
    );
    Ok(())
}

fn cmd_generate(
    config: &RunConfig,
    store: &PatchStore,
    out: &Path,
    plan: Option<PathBuf>,
) -> Result<()> {
    let plan_path = plan.unwrap_or_else(|| out.join("curation.json"));
    let manifest = read_manifest(&plan_path)
        .with_context(|| format!("reading plan manifest {plan_path:?}"))?;
    let plan = manifest
        .curation
        .ok_or_else(|| anyhow!("{plan_path:?} holds no curation plan"))?;
    let nst_config = config.nst.to_nst_config()?;
    let (triads, computed, skipped) = pipeline::generate_triads(
        store,
        &plan,
        &nst_config,
        config.nst.extractor_seed,
        config.nst.extractor_stages,
        config.seed ^ 2,
    )?;
    let path = out.join("triads.json");
    write_manifest(&triads, &path)?;
    println!(
        "triads: {} total, {computed} computed, {skipped} skipped ({})",
        triads.triads.len(),
        path.display()
    );
    Ok(())
}

fn cmd_train(
    config: &RunConfig,
    store: &PatchStore,
    out: &Path,
    triads: Option<PathBuf>,
) -> Result<()> {
    let triads_path = triads.unwrap_or_else(|| out.join("triads.json"));
    let manifest = read_manifest(&triads_path)
        .with_context(|| format!("reading triad manifest {triads_path:?}"))?;
    let model_config = config
        .model
        .to_model_config(config.corpus.side, config.seed ^ 3)?;
    let train_dir = out.join("train");
    let trained = pipeline::train_pipeline(
        store,
        &manifest,
        &model_config,
        &config.vae.to_vae_config(config.seed ^ 4),
        &config.train.to_train_config(config.seed ^ 5),
        config.vae.max_patches,
        config.train.holdout,
        Some(&train_dir),
    )?;
    println!(
        "trained {} epochs; vae epochs {}; checkpoint {}",
        trained.report.epoch_mean_loss.len(),
        trained.vae_epoch_losses.len(),
        train_dir.join("latest.bin").display()
    );
    if let Some(last) = trained.report.epoch_mean_loss.last() {
        println!("final epoch mean loss {last:.4}");
    }
    // Record the holdout split for later evaluation.
    let mut holdout_manifest = Manifest::new("holdout", config.seed ^ 5);
    holdout_manifest.triads = trained.holdout_triads.clone();
    write_manifest(&holdout_manifest, out.join("holdout.json"))?;
    Ok(())
}

fn load_image_arg(store: &PatchStore, arg: &str) -> Result<stainlab_core::ImagePatch> {
    let path = Path::new(arg);
    if path.is_file() {
        Ok(stainlab_core::io::load_patch(path)?)
    } else {
        Ok(store.load(arg)?)
    }
}

fn cmd_infer(
    store: &PatchStore,
    out: &Path,
    checkpoint: &Path,
    source: &str,
    target: &str,
    steps: usize,
) -> Result<()> {
    let trainer = load_checkpoint(checkpoint)?;
    let source = load_image_arg(store, source)?;
    let target = load_image_arg(store, target)?;
    let output = stainlab_model::infer(
        &trainer.bundle,
        &trainer.schedule,
        &source,
        &target,
        steps,
        trainer.config.seed,
    )?;
    let path = out.join(format!("{}.png", output.id));
    stainlab_core::io::save_patch(&output, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Serialize)]
struct EvalReportFile {
    reports: Vec<TargetReport>,
}

fn cmd_eval(config: &RunConfig, out: &Path, outputs: &Path, references: &Path) -> Result<()> {
    let list_pngs = |dir: &Path| -> Result<Vec<PathBuf>> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
            .with_context(|| format!("reading {dir:?}"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png"))
            .collect();
        files.sort();
        Ok(files)
    };
    let output_files = list_pngs(outputs)?;
    if output_files.is_empty() {
        bail!("no PNG outputs in {outputs:?}");
    }
    let mut out_set = Vec::new();
    let mut ref_set = Vec::new();
    let mut psnr_values = Vec::new();
    let mut ssim_values = Vec::new();
    let mut pc_values = Vec::new();
    for out_file in &output_files {
        let name = out_file.file_name().unwrap();
        let ref_file = references.join(name);
        let a = stainlab_core::io::load_patch(out_file)?;
        let b = stainlab_core::io::load_patch(&ref_file)
            .with_context(|| format!("missing reference for {name:?}"))?;
        psnr_values.push(psnr(&a, &b, 1.0)?);
        ssim_values.push(ssim(&a, &b)?);
        pc_values.push(pearson(&a, &b)?.r);
        out_set.push(a);
        ref_set.push(b);
    }
    let embedder = stainlab_core::embed::ConvEmbedder::new(config.eval.embedder_seed);
    let finite_psnr: Vec<f64> = psnr_values.iter().copied().filter(|v| v.is_finite()).collect();
    let report = TargetReport {
        target_id: "all".into(),
        n_pairs: out_set.len(),
        fid: fid(&out_set, &ref_set, &embedder)?,
        psnr: summarize(&finite_psnr),
        ssim: summarize(&ssim_values),
        pc: summarize(&pc_values),
    };
    let path = out.join("eval.json");
    std::fs::write(&path, serde_json::to_string_pretty(&EvalReportFile { reports: vec![report] })?)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_synth_slide(config: &RunConfig, out: &Path, width: usize, height: usize) -> Result<()> {
    let (slide, _) = synth_slide(&SlideConfig {
        width,
        height,
        seed: config.seed,
        ..Default::default()
    })?;
    let path = out.join("slide.png");
    slide.save_png(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Streams "tiles done / total" while delegating to the inner normalizer.
struct Progress<'a> {
    inner: &'a dyn TileNormalizer,
    done: AtomicUsize,
    total: usize,
}

impl TileNormalizer for Progress<'_> {
    fn name(&self) -> &'static str {
        self.inner.name()
    }

    fn normalize(
        &self,
        tile: &stainlab_core::ImagePatch,
        x: usize,
        y: usize,
    ) -> stainlab_wsi::Result<stainlab_core::ImagePatch> {
        let result = self.inner.normalize(tile, x, y);
        let done = self.done.fetch_add(1, Ordering::Relaxed) + 1;
        eprintln!("tiles done {done} / {}", self.total);
        result
    }
}

fn cmd_wsi(
    config: &RunConfig,
    out: &Path,
    slide_path: &Path,
    target_path: &Path,
    normalizer: &str,
    checkpoint: Option<PathBuf>,
) -> Result<()> {
    let slide = PseudoSlide::load_png(slide_path)?;
    let target = stainlab_core::io::load_patch(target_path)?;
    let mask = tissue_mask(&slide, config.wsi.mask_downsample)?;
    let tile_side = match normalizer {
        // The toy diffusion model runs at small tile sides.
        "stainfuser" => config.wsi.tile_side.min(64),
        _ => config.wsi.tile_side,
    };
    let grid = plan_tiles(&slide, &mask, tile_side, config.wsi.min_tissue_fraction)?;
    println!(
        "planned {} tiles of {}^2 (coverage {:.2})",
        grid.coordinates.len(),
        grid.tile_side,
        grid.mask_coverage
    );

    let trainer_holder;
    let inner: Box<dyn TileNormalizer> = match normalizer {
        "identity" => Box::new(IdentityNormalizer),
        "reinhard" => Box::new(ReinhardNormalizer {
            target: target.clone(),
        }),
        "ruifrok" => Box::new(DeconvNormalizer {
            estimator: StainEstimator::RuifrokFixed,
            target: target.clone(),
        }),
        "macenko" => Box::new(DeconvNormalizer {
            estimator: StainEstimator::Macenko,
            target: target.clone(),
        }),
        "vahadane" => Box::new(DeconvNormalizer {
            estimator: StainEstimator::Vahadane,
            target: target.clone(),
        }),
        "stainfuser" => {
            let path = checkpoint
                .ok_or_else(|| anyhow!("stainfuser requires --checkpoint (untrained bundle)"))?;
            trainer_holder = load_checkpoint(&path)?;
            Box::new(StainFuserNormalizer {
                bundle: &trainer_holder.bundle,
                schedule: &trainer_holder.schedule,
                target: target.clone(),
                n_steps: config.wsi.n_steps,
                slide_seed: config.seed,
            })
        }
        other => bail!("unknown normalizer `{other}`"),
    };
    let progress = Progress {
        inner: inner.as_ref(),
        done: AtomicUsize::new(0),
        total: grid.coordinates.len(),
    };
    let (output, outcome) = run_slide(&slide, &grid, &progress)?;

    let slide_out = out.join("normalized.png");
    output.save_png(&slide_out)?;
    std::fs::write(
        out.join("seam_report.json"),
        serde_json::to_string_pretty(&outcome)?,
    )?;
    println!(
        "wrote {} (seam mean {:.5}, {:.2} tiles/s, per-tile {:.3}s +- {:.3}s)",
        slide_out.display(),
        outcome.seam_report.mean,
        outcome.throughput.tiles_per_second,
        outcome.throughput.per_tile_mean_seconds,
        outcome.throughput.per_tile_std_seconds,
    );
    Ok(())
}
