//! On-disk helpers: atomic writes, JSON Lines, and the content-addressed render store.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::sim::{Observation, PixelGrid};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed record in {path} line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("render {0} is missing from the render store")]
    MissingRender(String),
}

impl StoreError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        StoreError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Writes through a sibling temp file and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| StoreError::io(parent, e))?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| StoreError::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| StoreError::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| StoreError::io(path, e))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<(), StoreError> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("value serializes");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, StoreError> {
    let text = fs::read_to_string(path).map_err(|e| StoreError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| StoreError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), StoreError> {
    let mut bytes = Vec::new();
    for row in rows {
        serde_json::to_writer(&mut bytes, row).expect("row serializes");
        bytes.push(b'\n');
    }
    write_atomic(path, &bytes)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let f = fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| StoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Directory of PGM files named by [`PixelGrid::content_key`].
#[derive(Debug, Clone)]
pub struct RenderStore {
    dir: PathBuf,
    cache: Arc<Mutex<HashMap<String, Arc<PixelGrid>>>>,
}

impl RenderStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            cache: Arc::default(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_of(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.pgm"))
    }

    /// Stores `grid` unless already present; returns its key.
    pub fn put(&self, grid: &PixelGrid) -> Result<String, StoreError> {
        let key = grid.content_key();
        let path = self.path_of(&key);
        if !path.exists() {
            write_atomic(&path, &grid.to_pgm())?;
        }
        Ok(key)
    }

    pub fn get(&self, key: &str) -> Result<Arc<PixelGrid>, StoreError> {
        if let Some(g) = self.cache.lock().expect("cache lock").get(key) {
            return Ok(g.clone());
        }
        let path = self.path_of(key);
        let bytes = fs::read(&path).map_err(|_| StoreError::MissingRender(key.to_string()))?;
        let grid = PixelGrid::from_pgm(&bytes).ok_or_else(|| StoreError::Parse {
            path: path.clone(),
            line: 1,
            message: "not a binary PGM".into(),
        })?;
        let grid = Arc::new(grid);
        self.cache
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), grid.clone());
        Ok(grid)
    }

    /// Re-attaches the render of a deserialized observation.
    pub fn hydrate(&self, obs: &mut Observation) -> Result<(), StoreError> {
        obs.render = self.get(&obs.render_key)?;
        Ok(())
    }
}
