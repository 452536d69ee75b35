//! Concurrent access: searches run against a published immutable snapshot,
//! writers build the next snapshot and swap it in.

use std::sync::{Arc, Mutex, RwLock};

use super::{IndexError, SearchFilter, SearchHit, VecIndex};
use crate::types::{Clip, EmbeddingRecord};

#[derive(Debug)]
pub struct SharedIndex {
    current: RwLock<Arc<VecIndex>>,
    writer: Mutex<()>,
}

impl SharedIndex {
    pub fn new(index: VecIndex) -> Self {
        Self {
            current: RwLock::new(Arc::new(index)),
            writer: Mutex::new(()),
        }
    }

    /// The current snapshot. Holding it never blocks writers.
    pub fn snapshot(&self) -> Arc<VecIndex> {
        self.current.read().expect("index lock poisoned").clone()
    }

    pub fn search(&self, query: &[f32], k: usize, filter: Option<&SearchFilter>) -> Result<Vec<SearchHit>, IndexError> {
        self.snapshot().search(query, k, filter)
    }

    /// Applies `f` to a private copy and publishes it only if `f` succeeds,
    /// so readers see either none or all of a batch.
    pub fn update<T>(&self, f: impl FnOnce(&mut VecIndex) -> Result<T, IndexError>) -> Result<T, IndexError> {
        let _w = self.writer.lock().expect("writer lock poisoned");
        let mut next = (*self.snapshot()).clone();
        let out = f(&mut next)?;
        *self.current.write().expect("index lock poisoned") = Arc::new(next);
        Ok(out)
    }

    /// Inserts a batch atomically. Any failing record aborts the whole batch.
    pub fn insert_batch(&self, batch: Vec<(EmbeddingRecord, Clip)>) -> Result<usize, IndexError> {
        self.update(|idx| {
            let n = batch.len();
            for (rec, clip) in batch {
                idx.insert(rec, clip)?;
            }
            Ok(n)
        })
    }

    /// Removes every clip of a video; returns how many were removed.
    pub fn remove_video(&self, video_id: &str) -> Result<usize, IndexError> {
        self.update(|idx| {
            let ids: Vec<String> = idx.clips().filter(|c| c.video_id == video_id).map(|c| c.clip_id.clone()).collect();
            for id in &ids {
                idx.remove(id);
            }
            idx.compact();
            Ok(ids.len())
        })
    }

    pub fn replace(&self, index: VecIndex) {
        let _w = self.writer.lock().expect("writer lock poisoned");
        *self.current.write().expect("index lock poisoned") = Arc::new(index);
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::clip;
    use super::*;

    fn rec(id: &str, i: usize) -> (EmbeddingRecord, Clip) {
        let mut v = vec![0.0; 4];
        v[i % 4] = 1.0;
        (
            EmbeddingRecord {
                clip_id: id.into(),
                vector: v,
                norm: 1.0,
            },
            clip(id, if i < 2 { "a" } else { "b" }, "cam", 0.0),
        )
    }

    #[test]
    fn failed_batch_is_not_published() {
        let s = SharedIndex::new(VecIndex::new(4));
        s.insert_batch(vec![rec("x", 0)]).unwrap();
        let err = s.insert_batch(vec![rec("y", 1), rec("x", 2)]);
        assert!(matches!(err, Err(IndexError::DuplicateClipId(_))));
        assert_eq!(s.snapshot().len(), 1);
        assert!(!s.snapshot().contains("y"));
    }

    #[test]
    fn snapshots_are_stable_across_writes() {
        let s = SharedIndex::new(VecIndex::new(4));
        s.insert_batch(vec![rec("p", 0), rec("q", 1), rec("r", 2)]).unwrap();
        let before = s.snapshot();
        assert_eq!(s.remove_video("a").unwrap(), 2);
        assert_eq!(before.len(), 3);
        assert_eq!(s.snapshot().len(), 1);
    }

    #[test]
    fn concurrent_readers_and_writer() {
        let s = Arc::new(SharedIndex::new(VecIndex::new(4)));
        let writer = {
            let s = s.clone();
            std::thread::spawn(move || {
                for i in 0..50 {
                    s.insert_batch(vec![rec(&format!("w{i:03}"), i)]).unwrap();
                }
            })
        };
        let readers: Vec<_> = (0..4)
            .map(|_| {
                let s = s.clone();
                std::thread::spawn(move || {
                    for _ in 0..200 {
                        let snap = s.snapshot();
                        let hits = snap.search(&[1.0, 0.0, 0.0, 0.0], 100, None).unwrap();
                        assert_eq!(hits.len(), snap.len());
                    }
                })
            })
            .collect();
        writer.join().unwrap();
        for r in readers {
            r.join().unwrap();
        }
        assert_eq!(s.snapshot().len(), 50);
    }
}
