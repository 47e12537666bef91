//! Manifest persistence: JSON with stable key order so that identical
//! inputs produce byte-identical files.

use crate::{CoreError, Magnification, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::path::Path;

pub const SCHEMA_VERSION: u64 = 1;

/// One corpus patch tracked by a manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub id: String,
    pub file: String,
    pub side: usize,
    pub magnification: Magnification,
}

/// A (source, target, transferred) training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TriadRecord {
    pub source_id: String,
    pub target_id: String,
    pub transferred_id: String,
    pub nst_config_hash: String,
}

/// Outcome of corpus curation: disjoint source/target id sets plus the
/// clusters that were excluded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurationPlan {
    pub source_ids: Vec<String>,
    pub target_ids: Vec<String>,
    pub excluded_cluster_ids: Vec<usize>,
}

impl CurationPlan {
    pub fn validate(&self) -> Result<()> {
        let targets: HashSet<&String> = self.target_ids.iter().collect();
        if self.source_ids.iter().any(|s| targets.contains(s)) {
            return Err(CoreError::Invariant(
                "source and target sets must be disjoint".into(),
            ));
        }
        Ok(())
    }

    /// Full source x target Cartesian product, sources outer, targets inner.
    pub fn enumerate_triads(&self) -> Vec<(String, String)> {
        let mut pairs = Vec::with_capacity(self.source_ids.len() * self.target_ids.len());
        for s in &self.source_ids {
            for t in &self.target_ids {
                pairs.push((s.clone(), t.clone()));
            }
        }
        pairs
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u64,
    pub corpus_name: String,
    pub seed: u64,
    pub config_snapshot: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub patches: Vec<PatchEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub triads: Vec<TriadRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curation: Option<CurationPlan>,
}

impl Manifest {
    pub fn new(corpus_name: impl Into<String>, seed: u64) -> Self {
        Manifest {
            schema_version: SCHEMA_VERSION,
            corpus_name: corpus_name.into(),
            seed,
            config_snapshot: BTreeMap::new(),
            patches: Vec::new(),
            triads: Vec::new(),
            curation: None,
        }
    }

    /// Checks triad uniqueness and curation invariants.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for t in &self.triads {
            if !seen.insert((t.source_id.as_str(), t.target_id.as_str())) {
                return Err(CoreError::Invariant(format!(
                    "duplicate (source, target) pair ({}, {})",
                    t.source_id, t.target_id
                )));
            }
        }
        if let Some(plan) = &self.curation {
            plan.validate()?;
        }
        Ok(())
    }
}

/// Serializes a manifest with sorted map keys and a trailing newline.
/// The byte stream is a pure function of the manifest contents.
pub fn manifest_to_string(manifest: &Manifest) -> String {
    let mut s = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn write_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    manifest.validate()?;
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;
        }
    }
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, manifest_to_string(manifest)).map_err(|e| CoreError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| CoreError::io(path, e))?;
    // Check the version before the strict field check so a future schema
    // fails with a version error, not an unknown-field error.
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CoreError::Schema(e.to_string()))?;
    let found = value
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| CoreError::Schema("missing schema_version".into()))?;
    if found != SCHEMA_VERSION {
        return Err(CoreError::SchemaVersion {
            found,
            expected: SCHEMA_VERSION,
        });
    }
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| CoreError::Schema(e.to_string()))?;
    manifest.validate()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triad(i: usize) -> TriadRecord {
        TriadRecord {
            source_id: format!("s{i}"),
            target_id: format!("t{i}"),
            transferred_id: format!("u{i}"),
            nst_config_hash: "deadbeef".into(),
        }
    }

    #[test]
    fn empty_manifest_roundtrips() {
        let dir = std::env::temp_dir().join("stainlab-manifest-empty");
        let path = dir.join("manifest.json");
        let m = Manifest::new("toy", 7);
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(m, back);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn six_records_roundtrip_in_order() {
        let dir = std::env::temp_dir().join("stainlab-manifest-six");
        let path = dir.join("manifest.json");
        let mut m = Manifest::new("toy", 7);
        m.triads = (0..6).map(triad).collect();
        write_manifest(&m, &path).unwrap();
        let back = read_manifest(&path).unwrap();
        assert_eq!(back.triads.len(), 6);
        assert_eq!(back.triads, m.triads);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn unknown_key_is_schema_error() {
        let dir = std::env::temp_dir().join("stainlab-manifest-unknown");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.json");
        let text = r#"{"schema_version":1,"corpus_name":"x","seed":1,"config_snapshot":{},"surprise":true}"#;
        std::fs::write(&path, text).unwrap();
        let err = read_manifest(&path);
        assert!(matches!(err, Err(CoreError::Schema(_))), "{err:?}");
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn version_mismatch_is_versioned_error() {
        let dir = std::env::temp_dir().join("stainlab-manifest-version");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("manifest.json");
        let text = r#"{"schema_version":99,"corpus_name":"x","seed":1,"config_snapshot":{}}"#;
        std::fs::write(&path, text).unwrap();
        match read_manifest(&path) {
            Err(CoreError::SchemaVersion { found, expected }) => {
                assert_eq!(found, 99);
                assert_eq!(expected, SCHEMA_VERSION);
            }
            other => panic!("expected version error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn serialization_is_byte_deterministic() {
        let mut m = Manifest::new("toy", 1);
        m.config_snapshot.insert("b".into(), "2".into());
        m.config_snapshot.insert("a".into(), "1".into());
        m.triads = (0..3).map(triad).collect();
        assert_eq!(manifest_to_string(&m), manifest_to_string(&m.clone()));
    }

    #[test]
    fn duplicate_pairs_rejected() {
        let mut m = Manifest::new("toy", 1);
        m.triads = vec![triad(0), triad(0)];
        assert!(m.validate().is_err());
    }
}
