use crate::{io, CoreError, ImagePatch, Result};
use std::path::{Path, PathBuf};

/// Directory-backed patch store: one PNG per patch id.
#[derive(Debug, Clone)]
pub struct PatchStore {
    root: PathBuf,
}

impl PatchStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|e| CoreError::io(&root, e))?;
        Ok(PatchStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path_for(&self, id: &str) -> PathBuf {
        self.root.join(format!("{id}.png"))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.path_for(id).is_file()
    }

    pub fn save(&self, patch: &ImagePatch) -> Result<()> {
        io::save_patch(patch, self.path_for(&patch.id))
    }

    pub fn load(&self, id: &str) -> Result<ImagePatch> {
        io::load_patch(self.path_for(id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{synth_patch, SyntheticCorpusConfig};

    #[test]
    fn save_load_by_id() {
        let dir = std::env::temp_dir().join("stainlab-store-test");
        std::fs::remove_dir_all(&dir).ok();
        let store = PatchStore::open(&dir).unwrap();
        let config = SyntheticCorpusConfig {
            side: 8,
            ..Default::default()
        };
        let patch = synth_patch(&config, 2).unwrap();
        assert!(!store.contains(&patch.id));
        store.save(&patch).unwrap();
        assert!(store.contains(&patch.id));
        let loaded = store.load(&patch.id).unwrap();
        assert_eq!(loaded.id, patch.id);
        assert_eq!(loaded.side(), patch.side());
        std::fs::remove_dir_all(&dir).ok();
    }
}
