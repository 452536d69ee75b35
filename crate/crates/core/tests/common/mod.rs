#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use foresearch_core::qa::{
    load_captions, read_jsonl, CaptionTrack, EngineConfig, ModelClient, PersonEntity, QaEngine, ReplayClient, BENCHMARK,
    GROUNDED,
};
use foresearch_core::{ImageRef, Modality, QaSample, Subtask};
use sha2::{Digest, Sha256};
use foresearch_core::synth::SyntheticWorld;

pub fn qa_fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/qa")
}

pub fn fixture_world() -> SyntheticWorld {
    let text = std::fs::read_to_string(qa_fixture_dir().join("world.json")).expect("fixture world");
    SyntheticWorld::from_json(&text).expect("valid world")
}

pub fn engine(llm: Arc<dyn ModelClient>, lmm: Arc<dyn ModelClient>, world: Arc<SyntheticWorld>, dir: &Path) -> QaEngine {
    QaEngine {
        llm,
        lmm,
        frames: world,
        config: EngineConfig::default(),
        work_dir: dir.to_path_buf(),
    }
}

/// Engine over the recorded fixture clients.
pub fn replay_engine(dir: &Path) -> QaEngine {
    let fx = qa_fixture_dir();
    let llm = ReplayClient::from_file("scripted-stub-v1", &fx.join("llm_recordings.jsonl")).expect("llm recordings");
    let lmm = ReplayClient::from_file("scripted-stub-v1", &fx.join("lmm_recordings.jsonl")).expect("lmm recordings");
    engine(Arc::new(llm), Arc::new(lmm), Arc::new(fixture_world()), dir)
}

pub fn fixture_captions() -> Vec<CaptionTrack> {
    load_captions(&qa_fixture_dir().join("captions.jsonl")).expect("fixture captions")
}

/// Checks an engine work dir's benchmark: every sample valid and inside its
/// caption cover, every crop verified, every search positive paired.
pub fn benchmark_violations(dir: &Path, tracks: &[CaptionTrack]) -> Vec<String> {
    let samples: Vec<QaSample> = read_jsonl(&dir.join(BENCHMARK)).expect("benchmark");
    let entities: Vec<PersonEntity> = read_jsonl(&dir.join(GROUNDED)).expect("grounded entities");
    let verified: BTreeSet<String> = entities.iter().flat_map(|e| e.query_crops.iter().map(|c| c.sha256.clone())).collect();
    let ids: BTreeSet<&str> = samples.iter().map(|s| s.sample_id.as_str()).collect();
    let covers: HashMap<&str, _> = tracks.iter().map(|t| (t.video_id.as_str(), t.cover())).collect();
    let mut out = Vec::new();
    for s in &samples {
        if let Err(e) = s.validate() {
            out.push(format!("{}: {e}", s.sample_id));
        }
        if !covers.get(s.video_id.as_str()).is_some_and(|c| s.ground_truth.within(c)) {
            out.push(format!("{}: ground truth outside the captions", s.sample_id));
        }
        if s.query.modality == Modality::ImageText {
            match &s.query.image {
                Some(ImageRef::Bytes(b)) => {
                    let sha: String = Sha256::digest(b).iter().map(|x| format!("{x:02x}")).collect();
                    if !verified.contains(&sha) {
                        out.push(format!("{}: unverified crop", s.sample_id));
                    }
                }
                _ => out.push(format!("{}: crop not inline", s.sample_id)),
            }
        }
        if s.subtask == Subtask::SE && !s.is_negative && !ids.contains(format!("{}-neg", s.sample_id).as_str()) {
            out.push(format!("{}: no paired negative", s.sample_id));
        }
    }
    out
}
