//! Registered videos: manifests, the content hash of their last ingestion,
//! and frame access for everything downstream.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use foresearch_core::frames::{DirFrameSource, Frame, FrameError, FrameSource, VideoManifest};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VideoState {
    Pending,
    Ready,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub manifest: VideoManifest,
    pub content_hash: String,
    pub state: VideoState,
    pub job_id: Option<String>,
    pub tracks: usize,
    pub clips: usize,
}

/// Outcome of asking to (re-)ingest a video.
#[derive(Debug, Clone, PartialEq)]
pub enum Claim {
    /// Registered as pending; ingestion may start.
    Claimed,
    /// Same content already ingested or in progress under this job.
    Existing(Option<String>),
    /// Different content for a video that is ready or in progress.
    Conflict,
}

pub struct VideoRegistry {
    path: Option<PathBuf>,
    entries: RwLock<BTreeMap<String, VideoEntry>>,
    frames: RwLock<DirFrameSource>,
}

impl VideoRegistry {
    pub fn in_memory() -> Self {
        Self {
            path: None,
            entries: RwLock::default(),
            frames: RwLock::default(),
        }
    }

    /// Opens (or starts) the registry file.
    pub fn open(path: &Path) -> std::io::Result<Self> {
        let entries: BTreeMap<String, VideoEntry> = match std::fs::read_to_string(path) {
            Ok(s) => serde_json::from_str(&s).map_err(std::io::Error::other)?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => BTreeMap::new(),
            Err(e) => return Err(e),
        };
        let mut frames = DirFrameSource::new();
        for e in entries.values() {
            frames.register(e.manifest.clone());
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries: RwLock::new(entries),
            frames: RwLock::new(frames),
        })
    }

    fn persist(&self, entries: &BTreeMap<String, VideoEntry>) -> std::io::Result<()> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(entries).expect("registry serializes"))?;
        std::fs::rename(tmp, path)
    }

    pub fn get(&self, video_id: &str) -> Option<VideoEntry> {
        self.entries.read().expect("registry lock").get(video_id).cloned()
    }

    pub fn list(&self) -> Vec<VideoEntry> {
        self.entries.read().expect("registry lock").values().cloned().collect()
    }

    pub fn is_ready(&self, video_id: &str) -> bool {
        self.get(video_id).is_some_and(|e| e.state == VideoState::Ready)
    }

    /// `job_active` tells whether a job id still runs.
    pub fn claim(
        &self,
        manifest: &VideoManifest,
        content_hash: &str,
        job_active: impl Fn(&str) -> bool,
    ) -> std::io::Result<Claim> {
        let mut entries = self.entries.write().expect("registry lock");
        if let Some(e) = entries.get(&manifest.video_id) {
            let active = e.state == VideoState::Pending && e.job_id.as_deref().is_some_and(&job_active);
            let same = e.content_hash == content_hash;
            match (same, e.state) {
                (true, VideoState::Ready) => return Ok(Claim::Existing(e.job_id.clone())),
                (true, _) if active => return Ok(Claim::Existing(e.job_id.clone())),
                (false, VideoState::Ready) => return Ok(Claim::Conflict),
                (false, _) if active => return Ok(Claim::Conflict),
                _ => {}
            }
        }
        entries.insert(
            manifest.video_id.clone(),
            VideoEntry {
                manifest: manifest.clone(),
                content_hash: content_hash.to_string(),
                state: VideoState::Pending,
                job_id: None,
                tracks: 0,
                clips: 0,
            },
        );
        self.frames.write().expect("frames lock").register(manifest.clone());
        self.persist(&entries)?;
        Ok(Claim::Claimed)
    }

    pub fn update(&self, video_id: &str, f: impl FnOnce(&mut VideoEntry)) -> std::io::Result<()> {
        let mut entries = self.entries.write().expect("registry lock");
        if let Some(e) = entries.get_mut(video_id) {
            f(e);
        }
        self.persist(&entries)
    }
}

impl FrameSource for VideoRegistry {
    fn manifest(&self, video_id: &str) -> Result<VideoManifest, FrameError> {
        self.frames.read().expect("frames lock").manifest(video_id)
    }

    fn frame(&self, video_id: &str, frame_index: u64) -> Result<Frame, FrameError> {
        self.frames.read().expect("frames lock").frame(video_id, frame_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(id: &str) -> VideoManifest {
        VideoManifest {
            video_id: id.into(),
            camera_id: "cam".into(),
            fps: 5.0,
            duration_seconds: 10.0,
            frame_dir: None,
            source_uri: None,
        }
    }

    #[test]
    fn claims_follow_content_and_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("videos.json");
        let r = VideoRegistry::open(&path).unwrap();
        let m = manifest("v");
        assert_eq!(r.claim(&m, "h1", |_| true).unwrap(), Claim::Claimed);
        r.update("v", |e| e.job_id = Some("job-1".into())).unwrap();
        assert_eq!(r.claim(&m, "h1", |_| true).unwrap(), Claim::Existing(Some("job-1".into())));
        assert_eq!(r.claim(&m, "h2", |_| true).unwrap(), Claim::Conflict);
        // the job died: a new claim may take over
        assert_eq!(r.claim(&m, "h2", |_| false).unwrap(), Claim::Claimed);
        r.update("v", |e| e.state = VideoState::Ready).unwrap();
        assert_eq!(r.claim(&m, "h1", |_| false).unwrap(), Claim::Conflict);

        let again = VideoRegistry::open(&path).unwrap();
        assert_eq!(again.get("v").unwrap().content_hash, "h2");
        assert!(again.is_ready("v"));
        assert_eq!(again.manifest("v").unwrap(), m);
    }
}
