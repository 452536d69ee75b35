//! Exact cosine top-k over unit vectors with joined clip metadata.
//!
//! Vectors live in one contiguous row-major `f32` buffer. A search scores
//! every live row that passes the filter and keeps the best `k` under the
//! order (score descending, clip id ascending). With the `parallel` feature
//! the scan is sharded across the rayon pool; shard results are merged under
//! the same order, so both paths return identical hits.

mod persist;
mod shared;

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::TimeInterval;
use crate::types::{Clip, EmbeddingRecord};

pub use persist::{sidecar_path, MAGIC};
pub use shared::SharedIndex;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("clip `{0}` is already indexed")]
    DuplicateClipId(String),
    #[error("vector has {got} dimensions, index expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("record clip id `{record}` does not match metadata clip id `{clip}`")]
    ClipMismatch { record: String, clip: String },
    #[error("vector is zero or not finite")]
    DegenerateVector,
    #[error("corrupt index: {0}")]
    CorruptIndex(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Metadata predicate applied before scoring.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub video_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera_id: Option<String>,
    /// Keeps clips whose span intersects this range.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_range: Option<TimeInterval>,
}

impl SearchFilter {
    pub fn video(video_id: impl Into<String>) -> Self {
        Self {
            video_id: Some(video_id.into()),
            ..Self::default()
        }
    }

    pub fn camera(camera_id: impl Into<String>) -> Self {
        Self {
            camera_id: Some(camera_id.into()),
            ..Self::default()
        }
    }

    pub fn accepts(&self, clip: &Clip) -> bool {
        self.video_id.as_ref().is_none_or(|v| *v == clip.video_id)
            && self.camera_id.as_ref().is_none_or(|c| *c == clip.camera_id)
            && self.time_range.as_ref().is_none_or(|r| r.intersects(&clip.span))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchHit {
    pub clip_id: String,
    pub score: f32,
    pub clip: Clip,
}

/// Dot product with eight independent accumulators so the loop vectorizes.
#[inline]
pub fn dot(a: &[f32], b: &[f32]) -> f32 {
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0f32; 8];
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[derive(Debug, Clone, Copy)]
struct Candidate<'a> {
    score: f32,
    id: &'a str,
    row: usize,
}

impl PartialEq for Candidate<'_> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Candidate<'_> {}

impl PartialOrd for Candidate<'_> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate<'_> {
    /// Greater means ranked earlier.
    fn cmp(&self, other: &Self) -> Ordering {
        self.score
            .total_cmp(&other.score)
            .then_with(|| other.id.cmp(self.id))
    }
}

/// Bounded min-heap keeping the best `k` candidates.
struct TopK<'a> {
    k: usize,
    heap: BinaryHeap<Reverse<Candidate<'a>>>,
}

impl<'a> TopK<'a> {
    fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    fn offer(&mut self, c: Candidate<'a>) {
        if self.heap.len() < self.k {
            self.heap.push(Reverse(c));
        } else if let Some(Reverse(worst)) = self.heap.peek() {
            if c > *worst {
                self.heap.pop();
                self.heap.push(Reverse(c));
            }
        }
    }

    #[cfg(feature = "parallel")]
    fn merge(mut self, other: TopK<'a>) -> Self {
        for Reverse(c) in other.heap {
            self.offer(c);
        }
        self
    }

    fn into_sorted(self) -> Vec<Candidate<'a>> {
        let mut v: Vec<Candidate<'a>> = self.heap.into_iter().map(|Reverse(c)| c).collect();
        v.sort_by(|a, b| b.cmp(a));
        v
    }
}

/// Rows per parallel shard.
#[cfg(feature = "parallel")]
const SHARD_ROWS: usize = 4096;

/// In-memory flat index. Not synchronized; see [`SharedIndex`].
#[derive(Debug, Clone)]
pub struct VecIndex {
    dim: usize,
    ids: Vec<String>,
    data: Vec<f32>,
    clips: Vec<Clip>,
    deleted: Vec<bool>,
    live: usize,
    by_id: HashMap<String, usize>,
}

impl VecIndex {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            data: Vec::new(),
            clips: Vec::new(),
            deleted: Vec::new(),
            live: 0,
            by_id: HashMap::new(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dim
    }

    /// Number of live (non-deleted) records.
    pub fn len(&self) -> usize {
        self.live
    }

    pub fn is_empty(&self) -> bool {
        self.live == 0
    }

    pub fn contains(&self, clip_id: &str) -> bool {
        self.by_id.contains_key(clip_id)
    }

    pub fn clip(&self, clip_id: &str) -> Option<&Clip> {
        self.by_id.get(clip_id).map(|&r| &self.clips[r])
    }

    pub fn vector(&self, clip_id: &str) -> Option<&[f32]> {
        self.by_id.get(clip_id).map(|&r| self.row(r))
    }

    /// Live clips in insertion order.
    pub fn clips(&self) -> impl Iterator<Item = &Clip> {
        self.clips
            .iter()
            .zip(&self.deleted)
            .filter(|(_, d)| !**d)
            .map(|(c, _)| c)
    }

    #[inline]
    fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.dim..(r + 1) * self.dim]
    }

    /// Adds a record, normalizing its vector to unit length.
    pub fn insert(&mut self, record: EmbeddingRecord, clip: Clip) -> Result<(), IndexError> {
        if record.clip_id != clip.clip_id {
            return Err(IndexError::ClipMismatch {
                record: record.clip_id,
                clip: clip.clip_id,
            });
        }
        if record.vector.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: record.vector.len(),
            });
        }
        if self.by_id.contains_key(&record.clip_id) {
            return Err(IndexError::DuplicateClipId(record.clip_id));
        }
        let vector = normalized(record.vector)?;
        self.push_row(record.clip_id, vector, clip);
        Ok(())
    }

    fn push_row(&mut self, id: String, vector: Vec<f32>, clip: Clip) {
        let r = self.ids.len();
        self.by_id.insert(id.clone(), r);
        self.ids.push(id);
        self.data.extend_from_slice(&vector);
        self.clips.push(clip);
        self.deleted.push(false);
        self.live += 1;
    }

    /// Tombstones a record; storage is reclaimed by [`VecIndex::compact`] or on save.
    pub fn remove(&mut self, clip_id: &str) -> bool {
        match self.by_id.remove(clip_id) {
            Some(r) => {
                self.deleted[r] = true;
                self.live -= 1;
                true
            }
            None => false,
        }
    }

    pub fn compact(&mut self) {
        if self.live == self.ids.len() {
            return;
        }
        let mut out = VecIndex::new(self.dim);
        for r in 0..self.ids.len() {
            if !self.deleted[r] {
                out.push_row(self.ids[r].clone(), self.row(r).to_vec(), self.clips[r].clone());
            }
        }
        *self = out;
    }

    fn prepare_query(&self, query: &[f32]) -> Result<Vec<f32>, IndexError> {
        if query.len() != self.dim {
            return Err(IndexError::DimensionMismatch {
                expected: self.dim,
                got: query.len(),
            });
        }
        let n2: f64 = query.iter().map(|&x| x as f64 * x as f64).sum();
        if (n2.sqrt() - 1.0).abs() <= 1e-6 {
            Ok(query.to_vec())
        } else {
            normalized(query.to_vec())
        }
    }

    fn scan_rows<'a>(&'a self, q: &[f32], rows: std::ops::Range<usize>, k: usize, filter: Option<&SearchFilter>) -> TopK<'a> {
        let mut top = TopK::new(k);
        for r in rows {
            if self.deleted[r] || filter.is_some_and(|f| !f.accepts(&self.clips[r])) {
                continue;
            }
            let score = dot(self.row(r), q).clamp(-1.0, 1.0);
            top.offer(Candidate {
                score,
                id: &self.ids[r],
                row: r,
            });
        }
        top
    }

    fn finish(&self, top: TopK<'_>) -> Vec<SearchHit> {
        top.into_sorted()
            .into_iter()
            .map(|c| SearchHit {
                clip_id: c.id.to_string(),
                score: c.score,
                clip: self.clips[c.row].clone(),
            })
            .collect()
    }

    /// Exact top-`k` on the calling thread.
    pub fn search_seq(&self, query: &[f32], k: usize, filter: Option<&SearchFilter>) -> Result<Vec<SearchHit>, IndexError> {
        let q = self.prepare_query(query)?;
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let top = self.scan_rows(&q, 0..self.ids.len(), k, filter);
        Ok(self.finish(top))
    }

    /// Exact top-`k` with the scan sharded over the rayon pool.
    #[cfg(feature = "parallel")]
    pub fn search_par(&self, query: &[f32], k: usize, filter: Option<&SearchFilter>) -> Result<Vec<SearchHit>, IndexError> {
        use rayon::prelude::*;
        let q = self.prepare_query(query)?;
        if k == 0 || self.is_empty() {
            return Ok(Vec::new());
        }
        let n = self.ids.len();
        let shards = n.div_ceil(SHARD_ROWS);
        let top = (0..shards)
            .into_par_iter()
            .map(|s| self.scan_rows(&q, s * SHARD_ROWS..((s + 1) * SHARD_ROWS).min(n), k, filter))
            .reduce(|| TopK::new(k), TopK::merge);
        Ok(self.finish(top))
    }

    /// Exact top-`k`, parallel when the feature is on and the index is
    /// large enough to be worth sharding.
    pub fn search(&self, query: &[f32], k: usize, filter: Option<&SearchFilter>) -> Result<Vec<SearchHit>, IndexError> {
        #[cfg(feature = "parallel")]
        if self.ids.len() > 2 * SHARD_ROWS {
            return self.search_par(query, k, filter);
        }
        self.search_seq(query, k, filter)
    }
}

fn normalized(mut v: Vec<f32>) -> Result<Vec<f32>, IndexError> {
    let n = v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(IndexError::DegenerateVector);
    }
    if (n - 1.0).abs() > 1e-7 {
        for x in &mut v {
            *x = (*x as f64 / n) as f32;
        }
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::ClipMode;

    pub(crate) fn clip(id: &str, video: &str, camera: &str, start: f64) -> Clip {
        Clip {
            clip_id: id.into(),
            camera_id: camera.into(),
            video_id: video.into(),
            span: TimeInterval::of(start, start + 5.0),
            boxes: Vec::new(),
            mode: ClipMode::FullFrame,
            frame_count: 1,
            frames: vec![0],
        }
    }

    fn rec(id: &str, v: Vec<f32>) -> EmbeddingRecord {
        EmbeddingRecord {
            clip_id: id.into(),
            vector: v,
            norm: 1.0,
        }
    }

    fn axis(dim: usize, i: usize) -> Vec<f32> {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        v
    }

    fn orthogonal_db() -> VecIndex {
        let mut idx = VecIndex::new(8);
        for (i, cam) in ["cam1", "cam2", "cam2"].iter().enumerate() {
            let id = format!("c{i}");
            idx.insert(rec(&id, axis(8, i)), clip(&id, "v", cam, i as f64 * 10.0)).unwrap();
        }
        idx
    }

    #[test]
    fn self_search_ranks_first_with_unit_score() {
        let idx = orthogonal_db();
        let hits = idx.search(&axis(8, 1), 3, None).unwrap();
        assert_eq!(hits[0].clip_id, "c1");
        assert_eq!(hits[0].score, 1.0);
        assert!(hits[1..].iter().all(|h| h.score.abs() < 1e-6));
        // remaining zero-score ties ordered by id
        assert_eq!(hits[1].clip_id, "c0");
        assert_eq!(hits[2].clip_id, "c2");
    }

    #[test]
    fn insert_errors() {
        let mut idx = orthogonal_db();
        assert!(matches!(
            idx.insert(rec("x", vec![1.0; 7]), clip("x", "v", "c", 0.0)),
            Err(IndexError::DimensionMismatch { expected: 8, got: 7 })
        ));
        assert!(matches!(
            idx.insert(rec("c0", axis(8, 3)), clip("c0", "v", "c", 0.0)),
            Err(IndexError::DuplicateClipId(_))
        ));
        assert!(matches!(
            idx.insert(rec("z", vec![0.0; 8]), clip("z", "v", "c", 0.0)),
            Err(IndexError::DegenerateVector)
        ));
    }

    #[test]
    fn inserted_vectors_are_unit_norm() {
        let mut idx = VecIndex::new(8);
        idx.insert(rec("a", vec![2.0; 8]), clip("a", "v", "c", 0.0)).unwrap();
        let n: f64 = idx.vector("a").unwrap().iter().map(|&x| x as f64 * x as f64).sum();
        assert!((n.sqrt() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn filters_restrict_hits() {
        let idx = orthogonal_db();
        let hits = idx.search(&axis(8, 0), 10, Some(&SearchFilter::camera("cam2"))).unwrap();
        assert_eq!(hits.len(), 2);
        assert!(hits.iter().all(|h| h.clip.camera_id == "cam2"));
        let f = SearchFilter {
            time_range: Some(TimeInterval::of(12.0, 13.0)),
            ..Default::default()
        };
        let hits = idx.search(&axis(8, 0), 10, Some(&f)).unwrap();
        assert_eq!(hits.iter().map(|h| h.clip_id.as_str()).collect::<Vec<_>>(), ["c1"]);
    }

    #[test]
    fn empty_index_and_k_zero() {
        let idx = VecIndex::new(8);
        assert!(idx.search(&axis(8, 0), 5, None).unwrap().is_empty());
        assert!(orthogonal_db().search(&axis(8, 0), 0, None).unwrap().is_empty());
    }

    #[test]
    fn unnormalized_query_is_normalized() {
        let idx = orthogonal_db();
        let mut q = axis(8, 2);
        q[2] = 5.0;
        let hits = idx.search(&q, 1, None).unwrap();
        assert_eq!(hits[0].score, 1.0);
    }

    #[test]
    fn tombstones_hide_and_compaction_reclaims() {
        let mut idx = orthogonal_db();
        assert!(idx.remove("c1"));
        assert!(!idx.remove("c1"));
        assert_eq!(idx.len(), 2);
        assert!(idx.search(&axis(8, 1), 3, None).unwrap().iter().all(|h| h.clip_id != "c1"));
        idx.compact();
        assert_eq!(idx.len(), 2);
        assert_eq!(idx.search(&axis(8, 2), 1, None).unwrap()[0].clip_id, "c2");
        // id can be reused after removal
        idx.insert(rec("c1", axis(8, 1)), clip("c1", "v", "cam1", 0.0)).unwrap();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn build(rows: &[Vec<i8>]) -> VecIndex {
            let mut idx = VecIndex::new(4);
            for (i, r) in rows.iter().enumerate() {
                let v: Vec<f32> = r.iter().map(|&x| x as f32).collect();
                if v.iter().all(|&x| x == 0.0) {
                    continue;
                }
                let id = format!("r{:03}", (i * 37) % 101);
                if idx.contains(&id) {
                    continue;
                }
                idx.insert(rec(&id, v), clip(&id, "v", "c", 0.0)).unwrap();
            }
            idx
        }

        proptest! {
            // small integer coordinates produce many exact score ties
            #[test]
            fn prefix_consistent_and_ordered(rows in prop::collection::vec(prop::collection::vec(-2i8..=2, 4), 1..60),
                                             q in prop::collection::vec(-2i8..=2, 4), k in 1usize..12) {
                prop_assume!(q.iter().any(|&x| x != 0));
                let idx = build(&rows);
                let q: Vec<f32> = q.iter().map(|&x| x as f32).collect();
                let big = idx.search_seq(&q, k + 1, None).unwrap();
                let small = idx.search_seq(&q, k, None).unwrap();
                prop_assert_eq!(&big[..small.len()], &small[..]);
                prop_assert_eq!(small.len(), k.min(idx.len()));
                for w in big.windows(2) {
                    prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].clip_id < w[1].clip_id));
                }
                prop_assert!(big.iter().all(|h| (-1.0..=1.0).contains(&h.score)));
            }
        }

        #[cfg(feature = "parallel")]
        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]
            #[test]
            fn parallel_matches_sequential(seed in any::<u64>(), k in 1usize..20) {
                use rand::{RngExt, SeedableRng};
                let mut rng = rand_pcg::Pcg64::seed_from_u64(seed);
                let mut idx = VecIndex::new(16);
                for i in 0..(3 * SHARD_ROWS + 17) {
                    // coarse values so ties cross shard boundaries
                    let v: Vec<f32> = (0..16).map(|_| rng.random_range(-1i32..=1) as f32).collect();
                    if v.iter().all(|&x| x == 0.0) { continue; }
                    let id = format!("{i:06}");
                    idx.insert(rec(&id, v), clip(&id, "v", "c", 0.0)).unwrap();
                }
                let q: Vec<f32> = (0..16).map(|_| rng.random_range(-1.0f32..1.0)).collect();
                prop_assert_eq!(idx.search_seq(&q, k, None).unwrap(), idx.search_par(&q, k, None).unwrap());
            }
        }
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f32> = (0..37).map(|i| (i as f32 * 0.37).sin()).collect();
        let b: Vec<f32> = (0..37).map(|i| (i as f32 * 0.11).cos()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| *x as f64 * *y as f64).sum();
        assert!((dot(&a, &b) as f64 - naive).abs() < 1e-5);
    }
}
