//! On-disk layout.
//!
//! Vector file (all integers little-endian):
//!
//! ```text
//! "FSEAIDX1"            8 bytes magic
//! dimension             u32
//! count                 u64
//! metric                u8  (0 = cosine)
//! count × { id_len u16, id utf8, dimension × f32 }
//! crc32                 u32 over every preceding byte
//! ```
//!
//! Clip metadata sits next to it in `<path>.meta.jsonl`, one clip per line
//! in record order.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{IndexError, VecIndex};
use crate::types::Clip;

pub const MAGIC: &[u8; 8] = b"FSEAIDX1";
const HEADER_LEN: usize = 8 + 4 + 8 + 1;
const METRIC_COSINE: u8 = 0;

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.jsonl");
    PathBuf::from(s)
}

fn corrupt(msg: impl Into<String>) -> IndexError {
    IndexError::CorruptIndex(msg.into())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IndexError> {
    let tmp = path.with_extension("tmp-write");
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
        f.get_ref().sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

impl VecIndex {
    /// Serializes live records (tombstones are dropped).
    pub fn to_bytes(&self) -> Vec<u8> {
        let live: Vec<usize> = (0..self.ids.len()).filter(|&r| !self.deleted[r]).collect();
        let mut out = Vec::with_capacity(HEADER_LEN + live.len() * (self.dim * 4 + 32) + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(live.len() as u64).to_le_bytes());
        out.push(METRIC_COSINE);
        for &r in &live {
            let id = self.ids[r].as_bytes();
            out.extend_from_slice(&(id.len() as u16).to_le_bytes());
            out.extend_from_slice(id);
            for x in self.row(r) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        if self.ids.iter().any(|id| id.len() > u16::MAX as usize) {
            return Err(corrupt("clip id longer than 65535 bytes"));
        }
        let mut meta = Vec::new();
        for r in 0..self.ids.len() {
            if !self.deleted[r] {
                serde_json::to_writer(&mut meta, &self.clips[r]).map_err(|e| corrupt(e.to_string()))?;
                meta.push(b'\n');
            }
        }
        write_atomic(&sidecar_path(path), &meta)?;
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<VecIndex, IndexError> {
        let bytes = fs::read(path)?;
        let meta = File::open(sidecar_path(path)).map_err(|e| corrupt(format!("metadata sidecar: {e}")))?;
        let mut clips = Vec::new();
        for (n, line) in BufReader::new(meta).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let clip: Clip = serde_json::from_str(&line).map_err(|e| corrupt(format!("sidecar line {}: {e}", n + 1)))?;
            clips.push(clip);
        }
        Self::from_parts(&bytes, clips)
    }

    /// Decodes a vector file plus its metadata (in record order).
    pub fn from_parts(bytes: &[u8], clips: Vec<Clip>) -> Result<VecIndex, IndexError> {
        if bytes.len() < HEADER_LEN + 4 {
            return Err(corrupt("file shorter than header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let dim = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let count = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes"));
        if body[20] != METRIC_COSINE {
            return Err(corrupt(format!("unknown metric {}", body[20])));
        }
        if dim == 0 {
            return Err(corrupt("zero dimension"));
        }
        if count != clips.len() as u64 {
            return Err(corrupt(format!("{count} records but {} metadata lines", clips.len())));
        }
        let mut idx = VecIndex::new(dim);
        let mut pos = HEADER_LEN;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], IndexError> {
            let end = pos.checked_add(n).filter(|&e| e <= body.len()).ok_or_else(|| corrupt("truncated record"))?;
            let s = &body[*pos..end];
            *pos = end;
            Ok(s)
        };
        for clip in clips {
            let len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().expect("2 bytes")) as usize;
            let id = std::str::from_utf8(take(&mut pos, len)?)
                .map_err(|_| corrupt("clip id is not utf-8"))?
                .to_string();
            let raw = take(&mut pos, dim * 4)?;
            let vector: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if clip.clip_id != id {
                return Err(corrupt(format!("record `{id}` has metadata for `{}`", clip.clip_id)));
            }
            if idx.by_id.contains_key(&id) {
                return Err(corrupt(format!("duplicate record `{id}`")));
            }
            idx.push_row(id, vector, clip);
        }
        if pos != body.len() {
            return Err(corrupt("trailing bytes after records"));
        }
        Ok(idx)
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::clip;
    use super::*;
    use crate::types::EmbeddingRecord;

    fn small() -> VecIndex {
        let mut idx = VecIndex::new(8);
        for i in 0..5 {
            let id = format!("clip-{i}");
            let v: Vec<f32> = (0..8).map(|j| ((i * 8 + j) as f32).sin()).collect();
            idx.insert(
                EmbeddingRecord {
                    clip_id: id.clone(),
                    vector: v,
                    norm: 1.0,
                },
                clip(&id, "v", "cam", i as f64),
            )
            .unwrap();
        }
        idx
    }

    #[test]
    fn header_layout() {
        let b = small().to_bytes();
        assert_eq!(&b[..8], b"FSEAIDX1");
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 8);
        assert_eq!(u64::from_le_bytes(b[12..20].try_into().unwrap()), 5);
        assert_eq!(b[20], 0);
        assert_eq!(b.len(), 21 + 5 * (2 + 6 + 32) + 4);
    }

    #[test]
    fn round_trip_preserves_vectors_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.fsea");
        let idx = small();
        idx.save(&path).unwrap();
        let back = VecIndex::load(&path).unwrap();
        for c in idx.clips() {
            let a: Vec<u32> = idx.vector(&c.clip_id).unwrap().iter().map(|x| x.to_bits()).collect();
            let b: Vec<u32> = back.vector(&c.clip_id).unwrap().iter().map(|x| x.to_bits()).collect();
            assert_eq!(a, b);
            assert_eq!(back.clip(&c.clip_id), Some(c));
        }
    }

    #[test]
    fn save_compacts_tombstones() {
        let mut idx = small();
        idx.remove("clip-2");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.fsea");
        idx.save(&path).unwrap();
        let back = VecIndex::load(&path).unwrap();
        assert_eq!(back.len(), 4);
        assert!(!back.contains("clip-2"));
    }

    #[test]
    fn empty_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fsea");
        VecIndex::new(16).save(&path).unwrap();
        let back = VecIndex::load(&path).unwrap();
        assert_eq!((back.len(), back.dimension()), (0, 16));
        assert!(back.search(&[0.25; 16], 3, None).unwrap().is_empty());
    }

    #[test]
    fn corruption_is_detected() {
        let idx = small();
        let clips: Vec<Clip> = idx.clips().cloned().collect();
        let good = idx.to_bytes();

        let mut magic = good.clone();
        magic[0] = b'X';
        assert!(matches!(VecIndex::from_parts(&magic, clips.clone()), Err(IndexError::CorruptIndex(_))));

        let truncated = &good[..good.len() - 10];
        assert!(matches!(VecIndex::from_parts(truncated, clips.clone()), Err(IndexError::CorruptIndex(_))));

        for pos in [9, 25, good.len() / 2, good.len() - 1] {
            let mut flipped = good.clone();
            flipped[pos] ^= 0x40;
            assert!(
                matches!(VecIndex::from_parts(&flipped, clips.clone()), Err(IndexError::CorruptIndex(_))),
                "flip at {pos} went unnoticed"
            );
        }

        assert!(matches!(VecIndex::from_parts(&good, clips[..4].to_vec()), Err(IndexError::CorruptIndex(_))));
    }

    #[test]
    fn missing_sidecar_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx.fsea");
        small().save(&path).unwrap();
        std::fs::remove_file(sidecar_path(&path)).unwrap();
        assert!(matches!(VecIndex::load(&path), Err(IndexError::CorruptIndex(_))));
    }
}
