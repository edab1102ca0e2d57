use std::collections::{HashMap, VecDeque};
use std::hash::Hash;
use std::sync::{Arc, Mutex, RwLock};

use crate::error::Result;

/// Bounded memo table with one writer at a time and any number of readers.
///
/// Lookups take a shared lock. A miss takes the writer lock, checks again,
/// computes and inserts, so a value is computed at most once per key while it
/// stays resident. The oldest entry is evicted when full.
#[derive(Debug)]
pub struct ScoreCache<K, V> {
    entries: RwLock<HashMap<K, Arc<V>>>,
    order: Mutex<VecDeque<K>>,
    capacity: usize,
}

impl<K: Eq + Hash + Clone, V> ScoreCache<K, V> {
    pub fn new(capacity: usize) -> Self {
        ScoreCache {
            entries: RwLock::new(HashMap::new()),
            order: Mutex::new(VecDeque::new()),
            capacity: capacity.max(1),
        }
    }

    pub fn get(&self, key: &K) -> Option<Arc<V>> {
        self.entries.read().expect("cache lock").get(key).cloned()
    }

    pub fn len(&self) -> usize {
        self.entries.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_try_insert(&self, key: K, compute: impl FnOnce() -> Result<V>) -> Result<Arc<V>> {
        if let Some(v) = self.get(&key) {
            return Ok(v);
        }
        let mut order = self.order.lock().expect("cache writer lock");
        if let Some(v) = self.get(&key) {
            return Ok(v);
        }
        let value = Arc::new(compute()?);
        let mut entries = self.entries.write().expect("cache lock");
        while entries.len() >= self.capacity {
            match order.pop_front() {
                Some(old) => {
                    entries.remove(&old);
                }
                None => break,
            }
        }
        entries.insert(key.clone(), value.clone());
        order.push_back(key);
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    #[test]
    fn computes_once_per_key() {
        let cache = ScoreCache::new(4);
        let calls = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| {
                    let v = cache
                        .get_or_try_insert("a", || {
                            calls.fetch_add(1, Ordering::SeqCst);
                            Ok(42)
                        })
                        .unwrap();
                    assert_eq!(*v, 42);
                });
            }
        });
        assert_eq!(calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn evicts_oldest() {
        let cache = ScoreCache::new(2);
        for k in 0..3 {
            cache.get_or_try_insert(k, || Ok(k * 10)).unwrap();
        }
        assert!(cache.get(&0).is_none());
        assert_eq!(*cache.get(&2).unwrap(), 20);
        assert_eq!(cache.len(), 2);
    }

    #[test]
    fn errors_are_not_cached() {
        let cache: ScoreCache<u8, u8> = ScoreCache::new(2);
        assert!(cache
            .get_or_try_insert(1, || Err(crate::Error::Input("boom".into())))
            .is_err());
        assert!(cache.is_empty());
        assert_eq!(*cache.get_or_try_insert(1, || Ok(3)).unwrap(), 3);
    }
}
