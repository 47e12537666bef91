//! Stage-2 curation: mean-RGB clustering, representative selection, and plan
//! construction with disjoint source/target sets.

use crate::features::extract_features;
use crate::kmeans::{kmeans, ClusterAssignment};
use crate::{CurationError, Result};
use stainlab_core::embed::FeatureExtractor;
use stainlab_core::{CurationPlan, ImagePatch};
use std::collections::HashSet;

#[derive(Debug, Clone)]
pub struct CurationConfig {
    /// Stage-1 deep-feature cluster count used for vetting.
    pub stage1_clusters: usize,
    pub n_targets: usize,
    pub n_sources: usize,
    /// Stage-1 cluster indices removed from consideration (stands in for the
    /// manual unfit-tissue inspection).
    pub exclude_clusters: Vec<usize>,
    pub seed: u64,
}

impl Default for CurationConfig {
    fn default() -> Self {
        CurationConfig {
            stage1_clusters: 8,
            n_targets: 16,
            n_sources: 64,
            exclude_clusters: Vec::new(),
            seed: 0,
        }
    }
}

/// Per-channel arithmetic mean color of a patch.
pub fn mean_rgb(patch: &ImagePatch) -> [f64; 3] {
    patch.mean_rgb()
}

/// Removes every patch assigned to an excluded cluster; order preserved.
pub fn vet_clusters(
    assignment: &ClusterAssignment,
    ids: &[String],
    exclude_list: &[usize],
) -> Vec<String> {
    assert_eq!(assignment.labels.len(), ids.len());
    let excluded: HashSet<usize> = exclude_list.iter().copied().collect();
    ids.iter()
        .zip(&assignment.labels)
        .filter(|(_, label)| !excluded.contains(label))
        .map(|(id, _)| id.clone())
        .collect()
}

/// Clusters `items` (id, mean RGB) into `k` groups and picks, per cluster,
/// the member closest to the centroid in RGB space; ties break to the
/// lexicographically smallest id. If a cluster ends up empty its slot is
/// backfilled with the lexicographically smallest unused id, keeping the
/// result at exactly `k` entries.
pub fn select_representatives(
    items: &[(String, [f64; 3])],
    k: usize,
    seed: u64,
) -> Result<Vec<String>> {
    if k == 0 || k > items.len() {
        return Err(CurationError::InvalidArgument(format!(
            "cannot select {k} representatives from {} patches",
            items.len()
        )));
    }
    let vectors: Vec<Vec<f64>> = items.iter().map(|(_, rgb)| rgb.to_vec()).collect();
    let assignment = kmeans(&vectors, k, seed, 300)?;

    let mut chosen: Vec<Option<String>> = vec![None; k];
    let mut best: Vec<f64> = vec![f64::INFINITY; k];
    for ((id, rgb), &label) in items.iter().zip(&assignment.labels) {
        let c = &assignment.centroids[label];
        let d: f64 = rgb
            .iter()
            .zip(c)
            .map(|(x, y)| (x - y) * (x - y))
            .sum();
        let better = match &chosen[label] {
            None => true,
            Some(current) => d < best[label] || (d == best[label] && id < current),
        };
        if better {
            chosen[label] = Some(id.clone());
            best[label] = d;
        }
    }

    let mut used: HashSet<String> = chosen.iter().flatten().cloned().collect();
    let mut spare: Vec<&String> = items
        .iter()
        .map(|(id, _)| id)
        .filter(|id| !used.contains(*id))
        .collect();
    spare.sort();
    let mut spare = spare.into_iter();
    let mut out = Vec::with_capacity(k);
    for slot in chosen {
        match slot {
            Some(id) => out.push(id),
            None => {
                let id = spare.next().expect("k <= items guarantees spares").clone();
                used.insert(id.clone());
                out.push(id);
            }
        }
    }
    Ok(out)
}

/// Runs the full two-stage pipeline over a corpus.
pub fn build_plan(
    patches: &[ImagePatch],
    extractor: &dyn FeatureExtractor,
    config: &CurationConfig,
) -> Result<CurationPlan> {
    let features = extract_features(patches, extractor)?;
    let ids: Vec<String> = features.iter().map(|f| f.patch_id.clone()).collect();
    let vectors: Vec<Vec<f64>> = features.into_iter().map(|f| f.values).collect();
    let stage1 = kmeans(
        &vectors,
        config.stage1_clusters.min(ids.len()),
        config.seed,
        300,
    )?;
    let surviving = vet_clusters(&stage1, &ids, &config.exclude_clusters);

    let required = config.n_targets + config.n_sources;
    if surviving.len() < required {
        return Err(CurationError::Capacity {
            required,
            available: surviving.len(),
        });
    }

    let by_id: std::collections::HashMap<&str, &ImagePatch> =
        patches.iter().map(|p| (p.id.as_str(), p)).collect();
    let rgb_items: Vec<(String, [f64; 3])> = surviving
        .iter()
        .map(|id| (id.clone(), by_id[id.as_str()].mean_rgb()))
        .collect();

    let target_ids = select_representatives(&rgb_items, config.n_targets, config.seed ^ 0x7461)?;
    let target_set: HashSet<&String> = target_ids.iter().collect();
    let remaining: Vec<(String, [f64; 3])> = rgb_items
        .iter()
        .filter(|(id, _)| !target_set.contains(id))
        .cloned()
        .collect();
    let source_ids = select_representatives(&remaining, config.n_sources, config.seed ^ 0x736f)?;

    let plan = CurationPlan {
        source_ids,
        target_ids,
        excluded_cluster_ids: config.exclude_clusters.clone(),
    };
    plan.validate()?;
    Ok(plan)
}

/// Full Cartesian product of the plan: sources outer, targets inner.
pub fn enumerate_triads(plan: &CurationPlan) -> Vec<(String, String)> {
    plan.enumerate_triads()
}
