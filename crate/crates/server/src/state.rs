use std::num::NonZeroUsize;
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock, TryLockError};

use audioscope::audio_io::AudioClip;
use audioscope::nn::{load_checkpoint, CheckpointError, Model};
use lru::LruCache;
use sha2::{Digest, Sha256};

use crate::error::ApiError;

pub const CACHE_ENTRIES: usize = 64;

/// Holder for the served model. Readers never wait: while a reload holds the
/// write lock they get `model_unavailable`.
#[derive(Default)]
pub struct ModelSlot {
    inner: RwLock<Option<Arc<Model>>>,
}

impl ModelSlot {
    pub fn new(model: Option<Model>) -> Self {
        Self {
            inner: RwLock::new(model.map(Arc::new)),
        }
    }

    pub fn get(&self) -> Result<Arc<Model>, ApiError> {
        match self.inner.try_read() {
            Ok(guard) => guard
                .clone()
                .ok_or_else(|| ApiError::model_unavailable("no checkpoint loaded")),
            Err(TryLockError::WouldBlock) => {
                Err(ApiError::model_unavailable("checkpoint reload in progress"))
            }
            Err(TryLockError::Poisoned(_)) => Err(ApiError::internal("model slot poisoned")),
        }
    }

    /// Parses and installs a checkpoint while holding the slot exclusively.
    /// On failure the previous model stays in place.
    pub fn reload(&self, bytes: &[u8]) -> Result<(), CheckpointError> {
        let mut guard = self.inner.write().unwrap_or_else(|e| e.into_inner());
        let model = load_checkpoint(bytes)?;
        *guard = Some(Arc::new(model));
        Ok(())
    }

    pub fn unload(&self) {
        *self.inner.write().unwrap_or_else(|e| e.into_inner()) = None;
    }
}

/// Decoded uploads keyed by the SHA-256 of their raw bytes.
pub struct InputCache {
    inner: Mutex<LruCache<String, Arc<AudioClip>>>,
}

impl Default for InputCache {
    fn default() -> Self {
        Self {
            inner: Mutex::new(LruCache::new(
                NonZeroUsize::new(CACHE_ENTRIES).expect("non-zero capacity"),
            )),
        }
    }
}

impl InputCache {
    pub fn insert(&self, id: String, clip: Arc<AudioClip>) {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).put(id, clip);
    }

    pub fn get(&self, id: &str) -> Option<Arc<AudioClip>> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn input_id(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[derive(Default)]
pub struct AppState {
    pub model: ModelSlot,
    pub cache: InputCache,
    pub static_dir: Option<PathBuf>,
}

impl AppState {
    pub fn new(model: Option<Model>, static_dir: Option<PathBuf>) -> Self {
        Self {
            model: ModelSlot::new(model),
            cache: InputCache::default(),
            static_dir,
        }
    }
}
