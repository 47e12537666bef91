//! End-to-end pilot at acceptance scale; prints the criterion quantities.

use stainlab::config::RunConfig;
use stainlab::pipeline::*;
use stainlab_core::PatchStore;
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let config = stainlab::config::load_config(None, &args)?;
    run(&config)
}

fn run(config: &RunConfig) -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join("stainlab-pilot");
    std::fs::remove_dir_all(&dir).ok();
    let store = PatchStore::open(dir.join("store"))?;

    let t0 = Instant::now();
    let synth_config = config.corpus.to_synth_config(config.seed)?;
    let corpus = synth_corpus(&store, &synth_config, &config.corpus.name)?;
    println!("[{:7.1}s] corpus: {} patches", t0.elapsed().as_secs_f64(), corpus.patches.len());

    let curation = curate_corpus(
        &store,
        &corpus,
        &config.curation.to_curation_config(config.seed ^ 1),
        config.curation.embedder_seed,
    )?;
    let plan = curation.curation.clone().unwrap();
    println!(
        "[{:7.1}s] curated: {} targets x {} sources",
        t0.elapsed().as_secs_f64(),
        plan.target_ids.len(),
        plan.source_ids.len()
    );

    let nst_config = config.nst.to_nst_config()?;
    let (triads, computed, skipped) = generate_triads(
        &store,
        &plan,
        &nst_config,
        config.nst.extractor_seed,
        config.nst.extractor_stages,
        config.seed ^ 2,
    )?;
    println!(
        "[{:7.1}s] triads: {} ({} computed, {} skipped)",
        t0.elapsed().as_secs_f64(),
        triads.triads.len(),
        computed,
        skipped
    );

    let model_config = config.model.to_model_config(config.corpus.side, config.seed ^ 3)?;
    let vae_config = config.vae.to_vae_config(config.seed ^ 4);
    let train_config = config.train.to_train_config(config.seed ^ 5);
    let trained = train_pipeline(
        &store,
        &triads,
        &model_config,
        &vae_config,
        &train_config,
        config.vae.max_patches,
        config.train.holdout,
        None,
    )?;
    println!(
        "[{:7.1}s] trained: vae epochs {:?}",
        t0.elapsed().as_secs_f64(),
        trained.vae_epoch_losses
    );
    println!(
        "          diffusion epoch losses {:?}",
        trained.report.epoch_mean_loss
    );

    let vae_psnr = vae_reconstruction_psnr(&trained.bundle.vae, &synth_config, 64, 16, 10_000)?;
    println!("[{:7.1}s] vae psnr@64 held-out: {vae_psnr:.2} dB", t0.elapsed().as_secs_f64());

    // SSIM headroom: the VAE reconstruction of the reference is an upper
    // bound on what the sampler can reach.
    {
        let mut better = 0usize;
        let mut n = 0usize;
        for t in trained.holdout_triads.iter().take(16) {
            let store_ref = stainlab_core::PatchStore::open(dir.join("store"))?;
            let reference = store_ref.load(&t.transferred_id)?;
            let source = store_ref.load(&t.source_id)?;
            let mu = trained.bundle.vae.encode_patch_mu(&reference);
            let recon = trained.bundle.vae.decode_to_patch(&mu, "r", reference.magnification);
            let ssim_bound = stainlab_metrics::ssim(&recon, &reference)?;
            let ssim_source = stainlab_metrics::ssim(&source, &reference)?;
            if ssim_bound > ssim_source { better += 1; }
            n += 1;
        }
        println!("          ssim headroom: vae-recon beats source on {better}/{n}");
    }

    let evals = evaluate_triads(
        &trained.bundle,
        &trained.schedule,
        &store,
        &trained.holdout_triads,
        config.eval.n_steps,
        0xe7a1,
    )?;
    let n = evals.len() as f64;
    let mean_model: f64 = evals.iter().map(|e| e.rgb_dist_model).sum::<f64>() / n;
    let mean_source: f64 = evals.iter().map(|e| e.rgb_dist_source).sum::<f64>() / n;
    let ssim_wins = evals.iter().filter(|e| e.ssim_model > e.ssim_source).count();
    println!(
        "[{:7.1}s] eval: rgb_dist model {mean_model:.4} vs source {mean_source:.4} (reduction {:.1}%)",
        t0.elapsed().as_secs_f64(),
        100.0 * (1.0 - mean_model / mean_source)
    );
    println!(
        "          ssim wins {ssim_wins}/{} ({:.0}%)",
        evals.len(),
        100.0 * ssim_wins as f64 / n
    );

    for steps in [5usize, 20, 100] {
        let p = mean_psnr_at_steps(
            &trained.bundle,
            &trained.schedule,
            &store,
            &trained.holdout_triads,
            steps,
            0x57e9,
        )?;
        println!("          psnr@{steps} steps: {p:.2} dB");
    }
    println!("[{:7.1}s] done", t0.elapsed().as_secs_f64());
    Ok(())
}
