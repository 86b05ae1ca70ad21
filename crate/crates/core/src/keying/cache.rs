use std::num::NonZeroUsize;
use std::sync::Arc;

use lru::LruCache;
use parking_lot::Mutex;

use super::{PermKey, Permutation};

const SHARDS: usize = 16;

/// Bounded LRU of materialized permutations, sharded by key so concurrent
/// verifiers rarely contend on the same lock.
pub struct PermutationCache {
    shards: Vec<Mutex<LruCache<u64, Arc<Permutation>>>>,
}

impl PermutationCache {
    pub fn new(capacity: usize) -> Self {
        let per_shard = NonZeroUsize::new(capacity.div_ceil(SHARDS).max(1)).expect("nonzero");
        Self {
            shards: (0..SHARDS)
                .map(|_| Mutex::new(LruCache::new(per_shard)))
                .collect(),
        }
    }

    fn shard(&self, key: PermKey) -> &Mutex<LruCache<u64, Arc<Permutation>>> {
        &self.shards[(key.0 >> 60) as usize % SHARDS]
    }

    pub fn get_or_insert_with(
        &self,
        key: PermKey,
        build: impl FnOnce() -> Permutation,
    ) -> Arc<Permutation> {
        if let Some(p) = self.shard(key).lock().get(&key.0) {
            return Arc::clone(p);
        }
        // built outside the lock; a racing thread may build the same entry
        let p = Arc::new(build());
        self.shard(key).lock().put(key.0, Arc::clone(&p));
        p
    }

    pub fn len(&self) -> usize {
        self.shards.iter().map(|s| s.lock().len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn clear(&self) {
        for s in &self.shards {
            s.lock().clear();
        }
    }
}
