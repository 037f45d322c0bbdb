//! Checkpoints loaded once at startup, keyed by modality set.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use faf_core::{checkpoint, Model};

#[derive(Debug, thiserror::Error)]
pub enum StartupError {
    #[error("cannot read model directory {}: {source}", path.display())]
    Dir {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no checkpoints (*.json) found in {}", .0.display())]
    NoModels(PathBuf),
    #[error("failed to load checkpoint {}: {source}", path.display())]
    Load {
        path: PathBuf,
        #[source]
        source: faf_core::Error,
    },
    #[error("checkpoints {} and {} both serve modality set `{key}`", first.display(), second.display())]
    Duplicate {
        key: String,
        first: PathBuf,
        second: PathBuf,
    },
}

/// Immutable map from canonical modality key to model.
#[derive(Debug)]
pub struct ModelRegistry {
    models: BTreeMap<String, Model>,
    sources: BTreeMap<String, PathBuf>,
}

impl ModelRegistry {
    /// Loads every `*.json` file of `dir`, in file-name order.
    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self, StartupError> {
        let dir = dir.as_ref();
        let dir_err = |source| StartupError::Dir {
            path: dir.to_path_buf(),
            source,
        };
        let mut paths = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(dir_err)? {
            let path = entry.map_err(dir_err)?.path();
            if path.is_file() && path.extension().is_some_and(|e| e == "json") {
                paths.push(path);
            }
        }
        paths.sort();
        if paths.is_empty() {
            return Err(StartupError::NoModels(dir.to_path_buf()));
        }
        let mut reg = Self {
            models: BTreeMap::new(),
            sources: BTreeMap::new(),
        };
        for path in paths {
            let model = checkpoint::load(&path).map_err(|source| StartupError::Load {
                path: path.clone(),
                source,
            })?;
            reg.insert(model, path)?;
        }
        Ok(reg)
    }

    /// Builds a registry from in-memory models; `origin` names them in
    /// duplicate errors.
    pub fn from_models(models: impl IntoIterator<Item = (Model, PathBuf)>) -> Result<Self, StartupError> {
        let mut reg = Self {
            models: BTreeMap::new(),
            sources: BTreeMap::new(),
        };
        for (model, origin) in models {
            reg.insert(model, origin)?;
        }
        if reg.models.is_empty() {
            return Err(StartupError::NoModels(PathBuf::new()));
        }
        Ok(reg)
    }

    fn insert(&mut self, model: Model, path: PathBuf) -> Result<(), StartupError> {
        let key = model.key();
        if let Some(first) = self.sources.get(&key) {
            return Err(StartupError::Duplicate {
                key,
                first: first.clone(),
                second: path,
            });
        }
        self.sources.insert(key.clone(), path);
        self.models.insert(key, model);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&Model> {
        self.models.get(key)
    }

    /// Keys in sorted order.
    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Model)> {
        self.models.iter().map(|(k, m)| (k.as_str(), m))
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}
