use std::num::NonZeroUsize;
use std::sync::Arc;
use std::time::{Duration, Instant};

use lru::LruCache;
use parking_lot::Mutex;
use sssp_core::generator::LatentCode;
use sssp_core::render::Camera;
use sssp_core::TriPlane;

/// Cached result of one sketch-to-portrait request.
#[derive(Debug)]
pub struct Session {
    pub planes: TriPlane,
    pub latent: LatentCode,
    pub camera: Camera,
    pub created: Instant,
}

/// Capacity-bounded LRU of sessions with a fixed time-to-live.
pub struct SessionStore {
    inner: Mutex<LruCache<String, Arc<Session>>>,
    ttl: Duration,
}

impl SessionStore {
    pub fn new(capacity: usize, ttl: Duration) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).expect("nonzero");
        Self { inner: Mutex::new(LruCache::new(cap)), ttl }
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    /// Stores a session under a fresh id.
    pub fn insert(&self, planes: TriPlane, latent: LatentCode, camera: Camera) -> String {
        let id = uuid::Uuid::new_v4().to_string();
        let session = Arc::new(Session { planes, latent, camera, created: Instant::now() });
        self.inner.lock().put(id.clone(), session);
        id
    }

    /// Live session for `id`; an expired one is evicted and reported missing.
    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        self.get_at(id, Instant::now())
    }

    fn get_at(&self, id: &str, now: Instant) -> Option<Arc<Session>> {
        let mut inner = self.inner.lock();
        let session = inner.get(id)?.clone();
        if now.duration_since(session.created) >= self.ttl {
            inner.pop(id);
            return None;
        }
        Some(session)
    }

    pub fn len(&self) -> usize {
        self.inner.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
