//! Run configuration: TOML sections with strict schemas plus dotted-path
//! overrides. Every run writes its resolved config next to the outputs.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use stainlab_core::{StainMatrix, SyntheticCorpusConfig};
use stainlab_curation::CurationConfig;
use stainlab_model::{ModelConfig, SourceInjection, TrainConfig, VaeTrainConfig};
use stainlab_nst::{NstConfig, PrecisionMode};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Global seed; sections derive their own streams from it unless they
    /// pin an explicit seed.
    pub seed: u64,
    pub corpus: CorpusSection,
    pub curation: CurationSection,
    pub nst: NstSection,
    pub model: ModelSection,
    pub vae: VaeSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub wsi: WsiSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            corpus: CorpusSection::default(),
            curation: CurationSection::default(),
            nst: NstSection::default(),
            model: ModelSection::default(),
            vae: VaeSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            wsi: WsiSection::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub name: String,
    pub n_patches: usize,
    pub side: usize,
    /// Per-stain (min, max) patch concentration scale.
    pub concentration_range: [[f64; 2]; 2],
    pub blob_density: f64,
    /// Optional raw stain rows; the published H&E reference when absent.
    pub stain_rows: Option<[[f64; 3]; 2]>,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            name: "synthetic".into(),
            n_patches: 200,
            side: 32,
            concentration_range: [[0.25, 1.3], [0.15, 1.0]],
            blob_density: 4.0,
            stain_rows: None,
        }
    }
}

impl CorpusSection {
    pub fn to_synth_config(&self, seed: u64) -> Result<SyntheticCorpusConfig> {
        let stain_matrix = match self.stain_rows {
            Some(rows) => StainMatrix::from_raw_rows(rows, [1.0, 1.0])
                .context("invalid stain rows in [corpus]")?,
            None => StainMatrix::he_reference(),
        };
        Ok(SyntheticCorpusConfig {
            n_patches: self.n_patches,
            side: self.side,
            stain_matrix,
            texture_seed: seed,
            concentration_range: [
                (self.concentration_range[0][0], self.concentration_range[0][1]),
                (self.concentration_range[1][0], self.concentration_range[1][1]),
            ],
            blob_density: self.blob_density,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurationSection {
    pub stage1_clusters: usize,
    pub n_targets: usize,
    pub n_sources: usize,
    pub exclude_clusters: Vec<usize>,
    pub embedder_seed: u64,
}

impl Default for CurationSection {
    fn default() -> Self {
        CurationSection {
            stage1_clusters: 8,
            n_targets: 16,
            n_sources: 64,
            exclude_clusters: Vec::new(),
            embedder_seed: 17,
        }
    }
}

impl CurationSection {
    pub fn to_curation_config(&self, seed: u64) -> CurationConfig {
        CurationConfig {
            stage1_clusters: self.stage1_clusters,
            n_targets: self.n_targets,
            n_sources: self.n_sources,
            exclude_clusters: self.exclude_clusters.clone(),
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NstSection {
    pub alpha: f64,
    pub gamma: f64,
    pub n_iters: usize,
    pub lr: f64,
    pub precision: String,
    pub extractor_seed: u64,
    pub extractor_stages: usize,
}

impl Default for NstSection {
    fn default() -> Self {
        NstSection {
            alpha: 1.0,
            gamma: 10_000.0,
            n_iters: 120,
            lr: 0.05,
            precision: "full".into(),
            extractor_seed: 11,
            extractor_stages: 3,
        }
    }
}

impl NstSection {
    pub fn to_nst_config(&self) -> Result<NstConfig> {
        let precision_mode = match self.precision.as_str() {
            "full" => PrecisionMode::Full,
            "mixed" => PrecisionMode::Mixed,
            other => bail!("unknown precision mode `{other}` (expected full|mixed)"),
        };
        Ok(NstConfig {
            alpha: self.alpha,
            gamma: self.gamma,
            n_iters: self.n_iters,
            lr: self.lr,
            precision_mode,
            gram_scale: None,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub latent_channels: usize,
    pub d_tau: usize,
    pub widths: [usize; 3],
    pub time_dim: usize,
    pub attn_dim: usize,
    pub t_total: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub source_injection: String,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            latent_channels: 4,
            d_tau: 32,
            widths: [32, 64, 128],
            time_dim: 128,
            attn_dim: 32,
            t_total: 200,
            beta_start: 1e-4,
            beta_end: 0.02,
            source_injection: "additive".into(),
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, side: usize, seed: u64) -> Result<ModelConfig> {
        let source_injection = match self.source_injection.as_str() {
            "additive" => SourceInjection::Additive,
            "concat" => SourceInjection::Concat,
            other => bail!("unknown source injection `{other}` (expected additive|concat)"),
        };
        Ok(ModelConfig {
            side,
            latent_channels: self.latent_channels,
            d_tau: self.d_tau,
            widths: self.widths,
            time_dim: self.time_dim,
            attn_dim: self.attn_dim,
            t_total: self.t_total,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            source_injection,
            seed,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    pub lr: f64,
    pub kl_weight: f64,
    pub epochs: usize,
    pub batch: usize,
    /// Cap on patches used for VAE pretraining.
    pub max_patches: usize,
}

impl Default for VaeSection {
    fn default() -> Self {
        VaeSection {
            lr: 3e-3,
            kl_weight: 1e-6,
            epochs: 24,
            batch: 8,
            max_patches: 220,
        }
    }
}

impl VaeSection {
    pub fn to_vae_config(&self, seed: u64) -> VaeTrainConfig {
        VaeTrainConfig {
            lr: self.lr,
            kl_weight: self.kl_weight,
            epochs: self.epochs,
            batch: self.batch,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch: usize,
    pub decoder_frozen: bool,
    pub log_every: usize,
    pub val_every: usize,
    /// Triads reserved (deterministically) for held-out evaluation.
    pub holdout: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            lr: 3e-4,
            weight_decay: 1e-2,
            epochs: 14,
            batch: 8,
            decoder_frozen: false,
            log_every: 10,
            val_every: 0,
            holdout: 64,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch: self.batch,
            decoder_frozen: self.decoder_frozen,
            seed,
            log_every: self.log_every,
            val_every: self.val_every,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    pub n_steps: usize,
    pub embedder_seed: u64,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            n_steps: 20,
            embedder_seed: 17,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WsiSection {
    pub tile_side: usize,
    pub min_tissue_fraction: f64,
    pub mask_downsample: usize,
    pub n_steps: usize,
}

impl Default for WsiSection {
    fn default() -> Self {
        WsiSection {
            tile_side: 512,
            min_tissue_fraction: 0.1,
            mask_downsample: 8,
            n_steps: 20,
        }
    }
}

/// Loads a config file (or defaults when `path` is None) and applies
/// `key.path=value` overrides before deserializing.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
    let text = match path {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("reading config {p:?}"))?,
        None => String::new(),
    };
    let mut value: toml::Value = toml::from_str(&text).context("parsing config TOML")?;
    for entry in overrides {
        apply_override(&mut value, entry)?;
    }
    let config: RunConfig = value.try_into().context("config schema violation")?;
    Ok(config)
}

fn apply_override(root: &mut toml::Value, entry: &str) -> Result<()> {
    let Some((path, raw)) = entry.split_once('=') else {
        bail!("override `{entry}` must look like section.key=value");
    };
    let parts: Vec<&str> = path.trim().split('.').collect();
    if parts.is_empty() {
        bail!("override `{entry}` has an empty key path");
    }
    let parsed: toml::Value = raw
        .trim()
        .parse()
        .unwrap_or_else(|_| toml::Value::String(raw.trim().to_string()));
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .with_context(|| format!("`{part}` is not a table in override `{entry}`"))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .with_context(|| format!("cannot set `{path}`: parent is not a table"))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

/// Serializes the resolved config for the provenance snapshot.
pub fn config_to_toml(config: &RunConfig) -> String {
    toml::to_string_pretty(config).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty() {
        let config = load_config(None, &[]).unwrap();
        assert_eq!(config.curation.n_targets, 16);
        assert_eq!(config.curation.n_sources, 64);
        assert_eq!(config.nst.alpha, 1.0);
        assert_eq!(config.nst.gamma, 10_000.0);
        assert_eq!(config.wsi.tile_side, 512);
        assert_eq!(config.eval.n_steps, 20);
    }

    #[test]
    fn overrides_apply_with_types() {
        let config = load_config(
            None,
            &[
                "corpus.n_patches=50".into(),
                "train.lr=0.001".into(),
                "nst.precision=mixed".into(),
            ],
        )
        .unwrap();
        assert_eq!(config.corpus.n_patches, 50);
        assert_eq!(config.train.lr, 0.001);
        assert_eq!(config.nst.precision, "mixed");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = load_config(None, &["corpus.no_such_key=1".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn roundtrips_through_toml() {
        let config = RunConfig::default();
        let text = config_to_toml(&config);
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back.corpus.n_patches, config.corpus.n_patches);
        assert_eq!(config_to_toml(&back), text);
    }
}
