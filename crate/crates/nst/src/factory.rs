//! The triad factory: applies NST to every (source, target) pair of a
//! curation plan, resumably, and records the outcome in a manifest.

use crate::extractor::StyleExtractor;
use crate::run::{run_nst, NstConfig, NstError};
use rayon::prelude::*;
use stainlab_core::{CurationPlan, Manifest, PatchStore, TriadRecord};

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub manifest: Manifest,
    /// Pairs actually computed this run.
    pub computed: usize,
    /// Pairs skipped because a matching transferred patch already existed.
    pub skipped: usize,
}

/// Transferred-patch id: embeds a config-hash prefix so a config change
/// changes every output id and forces recomputation.
pub fn transferred_id(source_id: &str, target_id: &str, config_hash: &str) -> String {
    format!("u-{source_id}-{target_id}-{}", &config_hash[..8])
}

/// Runs NST over every enumerated pair. Pairs whose output already exists in
/// the store (same ids, same config hash) are skipped, so an interrupted run
/// resumes where it stopped. Pair order in the manifest follows the plan.
pub fn generate_transferred_set(
    plan: &CurationPlan,
    extractor: &dyn StyleExtractor,
    config: &NstConfig,
    store: &PatchStore,
    seed: u64,
) -> Result<GenerateOutcome, NstError> {
    let hash = config.hash_with_extractor(extractor.seed());
    let pairs = plan.enumerate_triads();

    let results: Vec<Result<bool, NstError>> = pairs
        .par_iter()
        .map(|(source_id, target_id)| {
            let out_id = transferred_id(source_id, target_id, &hash);
            if store.contains(&out_id) {
                return Ok(false);
            }
            let source = store.load(source_id)?;
            let target = store.load(target_id)?;
            let stylized = run_nst(&source, &target, extractor, config)?;
            store.save(&stylized.with_id(&out_id))?;
            Ok(true)
        })
        .collect();

    let mut computed = 0;
    let mut skipped = 0;
    for r in &results {
        match r {
            Ok(true) => computed += 1,
            Ok(false) => skipped += 1,
            Err(_) => {}
        }
    }
    // Surface the first error after the sweep so parallel work isn't wasted
    // on pairs that already finished.
    for r in results {
        r?;
    }

    let mut manifest = Manifest::new("transferred", seed);
    manifest
        .config_snapshot
        .insert("nst_config_hash".into(), hash.clone());
    manifest.config_snapshot.insert(
        "nst_config".into(),
        serde_json::to_string(config).expect("config serializes"),
    );
    manifest.curation = Some(plan.clone());
    manifest.triads = pairs
        .iter()
        .map(|(s, t)| TriadRecord {
            source_id: s.clone(),
            target_id: t.clone(),
            transferred_id: transferred_id(s, t, &hash),
            nst_config_hash: hash.clone(),
        })
        .collect();

    Ok(GenerateOutcome {
        manifest,
        computed,
        skipped,
    })
}
