use stainlab::pipeline::vae_reconstruction_psnr;
use stainlab_core::synth::synth_patch;
use stainlab_core::SyntheticCorpusConfig;
use stainlab_model::{train_autoencoder, ModelConfig, VaeTrainConfig};
use std::time::Instant;

fn main() -> anyhow::Result<()> {
    let epochs: usize = std::env::var("VAE_EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(30);
    let n: usize = std::env::var("VAE_N").map(|v| v.parse().unwrap()).unwrap_or(64);
    let side: usize = std::env::var("VAE_SIDE").map(|v| v.parse().unwrap()).unwrap_or(32);
    let lr: f64 = std::env::var("VAE_LR").map(|v| v.parse().unwrap()).unwrap_or(2e-3);
    let batch: usize = std::env::var("VAE_BATCH").map(|v| v.parse().unwrap()).unwrap_or(8);

    let base = SyntheticCorpusConfig { side: 32, ..Default::default() };
    let config = SyntheticCorpusConfig { side, ..base.clone() };
    let patches: Vec<_> = (0..n as u64).map(|i| synth_patch(&config, i).unwrap()).collect();
    let t0 = Instant::now();
    let (vae, trace) = train_autoencoder(
        &patches,
        &ModelConfig { side: 32, ..Default::default() },
        &VaeTrainConfig { epochs, batch, lr, ..Default::default() },
    )?;
    let p32 = vae_reconstruction_psnr(&vae, &base, 32, 12, 50_000)?;
    let p64 = vae_reconstruction_psnr(&vae, &base, 64, 8, 60_000)?;
    println!(
        "side{side} n{n} e{epochs} lr{lr}: {:>4.0}s loss@1 {:.4} mid {:.5} end {:.5}  psnr@32 {:.2}  psnr@64 {:.2}",
        t0.elapsed().as_secs_f64(),
        trace[0],
        trace[trace.len() / 2],
        trace[trace.len() - 1],
        p32,
        p64
    );
    Ok(())
}
