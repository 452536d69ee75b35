use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

use super::prompts::{fill, template_for, EXTRACT_ENTITIES, GROUND_BBOX, VERIFY_PRESENCE};
use super::{
    reply_json, sha256_hex, CandidateQa, CaptionTrack, CropRef, ModelClient, ModelRequest, PersonEntity, Provenance,
    QaError,
};
use crate::encoder::{sample_frames, ImageBytes};
use crate::frames::{self, FrameSource};
use crate::interval::{canonicalize, IntervalSet, TimeInterval};
use crate::types::{BBox, ImageRef, QaSample, Query, Subtask, SEARCH_ABSENT_INDEX, SEARCH_OPTIONS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    /// Frames sampled per mention interval for grounding.
    pub frames_per_mention: usize,
    /// Candidates kept per generation call.
    pub max_candidates: usize,
    /// A video donates a negative only if every entity in it shares less
    /// than this fraction of the target's content tokens.
    pub donor_overlap: f64,
    pub subtasks: Vec<Subtask>,
    pub multimodal: bool,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            frames_per_mention: 8,
            max_candidates: 3,
            donor_overlap: 0.5,
            subtasks: Subtask::ALL.to_vec(),
            multimodal: true,
            seed: 0,
        }
    }
}

fn note(notes: &mut Vec<String>, msg: String) {
    log::warn!("{msg}");
    notes.push(msg);
}

/// Sends `request`, parsing the reply with `parse`; a reply that fails to
/// parse is retried once. `Ok(None)` means both attempts were invalid.
fn ask<T>(
    client: &dyn ModelClient,
    request: &ModelRequest,
    notes: &mut Vec<String>,
    what: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<Option<(T, String)>, QaError> {
    let mut last = String::new();
    for _ in 0..2 {
        let raw = client.complete(request)?;
        match parse(&raw) {
            Ok(v) => return Ok(Some((v, raw))),
            Err(e) => last = e,
        }
    }
    note(notes, format!("schema violation ({what}, {}): {last}; dropped after retry", request.prompt_id));
    Ok(None)
}

fn captions_json(track: &CaptionTrack) -> Value {
    Value::Array(
        track
            .captions
            .iter()
            .map(|c| json!({"start": c.start, "end": c.end, "text": c.text}))
            .collect(),
    )
}

fn number(v: &Value) -> Option<f64> {
    v.as_f64().filter(|f| f.is_finite())
}

fn span(v: &Value) -> Result<TimeInterval, String> {
    let o = v.as_object().ok_or("timestamp is not an object")?;
    let s = o.get("start").and_then(number).ok_or("timestamp.start missing")?;
    let e = o.get("end").and_then(number).ok_or("timestamp.end missing")?;
    TimeInterval::new(s, e).map_err(|e| e.to_string())
}

fn string_field(o: &Map<String, Value>, key: &str) -> Result<String, String> {
    match o.get(key) {
        Some(Value::String(s)) if !s.trim().is_empty() => Ok(s.trim().to_string()),
        _ => Err(format!("`{key}` must be a non-empty string")),
    }
}

/// Stage 1: person references and their mention intervals.
pub fn extract_entities(
    track: &CaptionTrack,
    llm: &dyn ModelClient,
) -> Result<(Vec<PersonEntity>, Vec<String>), QaError> {
    track.validate()?;
    let mut notes = Vec::new();
    if track.captions.is_empty() {
        return Ok((Vec::new(), notes));
    }
    let request = ModelRequest {
        prompt_id: EXTRACT_ENTITIES.id.into(),
        text: fill(&EXTRACT_ENTITIES, Some(&json!({"captions": captions_json(track)})), None),
        images: Vec::new(),
    };
    let parsed = ask(llm, &request, &mut notes, &track.video_id, |raw| match reply_json(raw) {
        Some(Value::Array(a)) => Ok(a),
        _ => Err("reply is not a JSON array".into()),
    })?;
    let Some((items, _)) = parsed else {
        return Ok((Vec::new(), notes));
    };
    let cover = track.cover();
    let mut grouped: Vec<(String, Vec<TimeInterval>)> = Vec::new();
    for (i, item) in items.iter().enumerate() {
        let parsed = (|| {
            let o = item.as_object().ok_or("entry is not an object")?;
            let reference = string_field(o, "reference")?;
            let mentions = o.get("mentions").and_then(Value::as_array).ok_or("`mentions` must be an array")?;
            let spans = mentions.iter().map(span).collect::<Result<Vec<_>, _>>()?;
            Ok::<_, String>((reference, spans))
        })();
        let (reference, spans) = match parsed {
            Ok(x) => x,
            Err(e) => {
                note(&mut notes, format!("{}: entity {i} dropped: {e}", track.video_id));
                continue;
            }
        };
        let kept: Vec<TimeInterval> = spans
            .into_iter()
            .filter(|s| IntervalSet::single(*s).within(&cover))
            .collect();
        if kept.is_empty() {
            note(&mut notes, format!("{}: `{reference}` has no mention inside the captions", track.video_id));
            continue;
        }
        match grouped.iter_mut().find(|(r, _)| r.eq_ignore_ascii_case(&reference)) {
            Some((_, v)) => v.extend(kept),
            None => grouped.push((reference, kept)),
        }
    }
    let entities = grouped
        .into_iter()
        .enumerate()
        .map(|(k, (reference, spans))| PersonEntity {
            entity_id: format!("{}/e{k:02}", track.video_id),
            video_id: track.video_id.clone(),
            reference,
            mentions: canonicalize(spans),
            query_crops: Vec::new(),
            usable: true,
        })
        .collect();
    Ok((entities, notes))
}

fn parse_box(raw: &str) -> Result<Option<BBox>, String> {
    let v = reply_json(raw).ok_or("reply is not JSON")?;
    match v.get("box") {
        Some(Value::Null) => Ok(None),
        Some(Value::Array(a)) if a.len() == 4 => {
            let n: Vec<f64> = a.iter().filter_map(number).collect();
            if n.len() != 4 {
                return Err("box values must be numbers".into());
            }
            BBox::new(n[0], n[1], n[2], n[3]).map(Some).map_err(|e| e.to_string())
        }
        _ => Err("`box` must be [x, y, w, h] or null".into()),
    }
}

fn parse_presence(raw: &str) -> Result<bool, String> {
    if let Some(v) = reply_json(raw) {
        if let Some(b) = v.get("present").and_then(Value::as_bool) {
            return Ok(b);
        }
    }
    let word: String = raw.trim().chars().take_while(|c| c.is_alphabetic()).collect();
    match word.to_ascii_lowercase().as_str() {
        "yes" => Ok(true),
        "no" => Ok(false),
        _ => Err("expected {\"present\": bool}".into()),
    }
}

/// Stage 2: boxes on sampled frames of every mention, kept when the crop
/// passes the presence check. Verified crops are written under
/// `work_dir/crops/` when a directory is given.
pub fn ground_entity(
    entity: &PersonEntity,
    source: &dyn FrameSource,
    lmm: &dyn ModelClient,
    frames_per_mention: usize,
    work_dir: Option<&Path>,
) -> Result<(PersonEntity, Vec<String>), QaError> {
    let mut notes = Vec::new();
    let manifest = source.manifest(&entity.video_id)?;
    let mut crops = Vec::new();
    let mut seen = HashSet::new();
    for mention in entity.mentions.intervals() {
        let first = manifest.frame_at(mention.start());
        let last = manifest.frame_at(mention.end()).max(first);
        let count = (last - first + 1) as usize;
        for pick in sample_frames(count, frames_per_mention.max(1)) {
            let idx = first + pick as u64;
            if !seen.insert(idx) {
                continue;
            }
            let frame = source.frame(&entity.video_id, idx)?;
            let request = ModelRequest {
                prompt_id: GROUND_BBOX.id.into(),
                text: fill(&GROUND_BBOX, None, Some(&entity.reference)),
                images: vec![ImageBytes(frame.data.clone())],
            };
            let what = format!("{} frame {idx}", entity.entity_id);
            let Some((bbox, _)) = ask(lmm, &request, &mut notes, &what, parse_box)? else {
                continue;
            };
            let Some(bbox) = bbox else {
                continue;
            };
            let img = frame.decode()?;
            if bbox.pixel_rect(img.width(), img.height()).is_none() {
                note(&mut notes, format!("{what}: box outside the frame"));
                continue;
            }
            let crop = frames::crop(&frame, &bbox)?;
            let request = ModelRequest {
                prompt_id: VERIFY_PRESENCE.id.into(),
                text: fill(&VERIFY_PRESENCE, None, Some(&entity.reference)),
                images: vec![ImageBytes(crop.data.clone())],
            };
            let Some((present, _)) = ask(lmm, &request, &mut notes, &what, parse_presence)? else {
                continue;
            };
            if !present {
                continue;
            }
            let sha = sha256_hex(&crop.data);
            let path = format!("crops/{}.png", &sha[..16]);
            if let Some(dir) = work_dir {
                let full = dir.join(&path);
                if let Some(parent) = full.parent() {
                    std::fs::create_dir_all(parent).map_err(|source| QaError::Io {
                        path: parent.to_path_buf(),
                        source,
                    })?;
                }
                std::fs::write(&full, &crop.data).map_err(|source| QaError::Io { path: full, source })?;
            }
            crops.push(CropRef {
                path,
                sha256: sha,
                frame_index: idx,
                timestamp: manifest.timestamp(idx),
                bbox,
            });
        }
    }
    let mut out = entity.clone();
    out.usable = !crops.is_empty();
    if !out.usable {
        note(&mut notes, format!("{}: no verified crop, unusable for image queries", entity.entity_id));
    }
    out.query_crops = crops;
    Ok((out, notes))
}

/// question, indirect question, answer, distractors, person, times
type Element = (String, Option<String>, String, Vec<String>, Option<String>, IntervalSet);

fn element(v: &Value, subtask: Subtask) -> Result<Element, String> {
    let o = v.as_object().ok_or("entry is not an object")?;
    let question = string_field(o, "question")?;
    let answer = string_field(o, "answer")?;
    let indirect = if subtask == Subtask::SE {
        Some(string_field(o, "question_indirect")?)
    } else {
        None
    };
    let distractors = if subtask == Subtask::SE {
        Vec::new()
    } else {
        o.get("distractors")
            .and_then(Value::as_array)
            .ok_or("`distractors` must be an array")?
            .iter()
            .map(|d| d.as_str().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()))
            .collect::<Option<Vec<_>>>()
            .ok_or("distractors must be non-empty strings")?
    };
    let person = if subtask.is_person_specific() {
        Some(string_field(o, "person")?)
    } else {
        None
    };
    let times = if subtask == Subtask::CT {
        let list = o.get("timestamps").and_then(Value::as_array).ok_or("`timestamps` must be a list")?;
        if list.is_empty() {
            return Err("`timestamps` is empty".into());
        }
        list.iter().map(span).collect::<Result<Vec<_>, _>>()?
    } else {
        vec![span(o.get("timestamp").ok_or("`timestamp` missing")?)?]
    };
    Ok((question, indirect, answer, distractors, person, canonicalize(times)))
}

/// Stage 3: fills the subtask's template, asks the LLM and keeps the valid
/// entries whose times come from the entity's mentions (person-specific
/// subtasks) or the caption spans (global ones).
pub fn generate_qa(
    track: &CaptionTrack,
    entity: Option<&PersonEntity>,
    subtask: Subtask,
    llm: &dyn ModelClient,
    max_candidates: usize,
) -> Result<(Vec<CandidateQa>, Vec<String>), QaError> {
    let mut notes = Vec::new();
    let (input, cover) = match (subtask.is_person_specific(), entity) {
        (true, Some(e)) => (
            json!({"captions": captions_json(track), "person_reference": e.reference}),
            e.mentions.clone(),
        ),
        (true, None) => {
            return Err(QaError::InvalidInput(format!("{subtask} questions need a person entity")));
        }
        (false, _) => (json!({"captions": captions_json(track)}), track.cover()),
    };
    let template = template_for(subtask);
    let request = ModelRequest {
        prompt_id: template.id.into(),
        text: fill(&template, Some(&input), None),
        images: Vec::new(),
    };
    let what = format!("{} {subtask}", entity.map_or(track.video_id.as_str(), |e| e.entity_id.as_str()));
    let parsed = ask(llm, &request, &mut notes, &what, |raw| match reply_json(raw) {
        Some(Value::Array(a)) => Ok(a),
        _ => Err("reply is not a JSON array".into()),
    })?;
    let Some((items, raw)) = parsed else {
        return Ok((Vec::new(), notes));
    };
    if items.len() > max_candidates {
        note(&mut notes, format!("{what}: {} entries, keeping the first {max_candidates}", items.len()));
    }
    let provenance = Provenance {
        prompt_id: template.id.into(),
        model_id: llm.model_id(),
        response_sha256: sha256_hex(raw.as_bytes()),
    };
    let mut out = Vec::new();
    for (i, item) in items.iter().take(max_candidates).enumerate() {
        let (question, question_indirect, answer, distractors, person, timestamps) = match element(item, subtask) {
            Ok(x) => x,
            Err(e) => {
                note(&mut notes, format!("{what}: entry {i} dropped: {e}"));
                continue;
            }
        };
        if !timestamps.within(&cover) {
            note(&mut notes, format!("{what}: entry {i} dropped: times outside the source captions"));
            continue;
        }
        let mut c = CandidateQa {
            candidate_id: String::new(),
            video_id: track.video_id.clone(),
            subtask,
            question,
            question_indirect,
            answer,
            distractors,
            person,
            entity_id: entity.map(|e| e.entity_id.clone()),
            timestamps,
            provenance: provenance.clone(),
        };
        c.candidate_id = c.content_id();
        out.push(c);
    }
    Ok((out, notes))
}

const STOPWORDS: [&str; 14] = [
    "a", "an", "the", "in", "on", "of", "with", "and", "at", "to", "is", "wearing", "who", "person",
];

fn content_tokens(s: &str) -> BTreeSet<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .filter(|t| !STOPWORDS.contains(&t.as_str()))
        .collect()
}

/// Share of `target`'s content tokens that also occur in `other`.
pub fn token_overlap(target: &str, other: &str) -> f64 {
    let a = content_tokens(target);
    if a.is_empty() {
        return 0.0;
    }
    let b = content_tokens(other);
    a.intersection(&b).count() as f64 / a.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewStatus {
    #[default]
    Pending,
    Accepted,
    Rejected,
}

/// A sample held back for a human decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReviewItem {
    pub item_id: String,
    pub candidate_id: String,
    pub reasons: Vec<String>,
    pub sample: QaSample,
    #[serde(default)]
    pub status: ReviewStatus,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Package {
    pub benchmark: Vec<QaSample>,
    pub review: Vec<ReviewItem>,
    pub notes: Vec<String>,
}

fn rng_for(seed: u64, id: &str) -> Pcg64 {
    let d: [u8; 32] = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(id.as_bytes()).finalize().into();
    Pcg64::from_seed(d)
}

/// Replaces the person reference (with a leading article) by "the person
/// in the photo".
fn indirect_question(question: &str, reference: &str) -> Option<String> {
    let lower = question.to_lowercase();
    let r = reference.to_lowercase();
    for art in ["the ", "a ", "an ", ""] {
        let needle = format!("{art}{r}");
        if let Some(pos) = lower.find(&needle) {
            let at_start = pos == 0;
            let phrase = if at_start { "The person in the photo" } else { "the person in the photo" };
            return Some(format!("{}{phrase}{}", &question[..pos], &question[pos + needle.len()..]));
        }
    }
    None
}

fn sample_problems(c: &CandidateQa, duration: f64) -> Vec<String> {
    let mut reasons = Vec::new();
    if c.subtask != Subtask::SE {
        if c.distractors.len() != 3 {
            reasons.push(format!("expected 3 distractors, got {}", c.distractors.len()));
        }
        let norm = |s: &str| s.trim().to_lowercase();
        if c.distractors.iter().any(|d| norm(d) == norm(&c.answer)) {
            reasons.push("answer repeats a distractor".into());
        }
        let distinct: HashSet<String> = c.distractors.iter().map(|d| norm(d)).collect();
        if distinct.len() != c.distractors.len() {
            reasons.push("duplicate distractor".into());
        }
    }
    if c.timestamps.is_empty() {
        reasons.push("no ground-truth interval".into());
    }
    if c.timestamps.intervals().iter().any(|i| i.end() > duration + 1e-9) {
        reasons.push(format!("interval beyond video duration {duration}"));
    }
    reasons
}

/// Stage 4: automated checks, option shuffling, SE negatives from donor
/// videos and image-query variants. Failing candidates go to the review
/// queue. `crop_bytes` loads a verified crop.
pub fn validate_and_package(
    candidates: &[CandidateQa],
    entities: &[PersonEntity],
    durations: &BTreeMap<String, f64>,
    cfg: &EngineConfig,
    crop_bytes: &dyn Fn(&CropRef) -> Result<Vec<u8>, QaError>,
) -> Result<Package, QaError> {
    let mut pkg = Package::default();
    let by_id: HashMap<&str, &PersonEntity> = entities.iter().map(|e| (e.entity_id.as_str(), e)).collect();
    let mut refs_by_video: BTreeMap<&str, Vec<&str>> = durations.keys().map(|v| (v.as_str(), Vec::new())).collect();
    for e in entities {
        refs_by_video.entry(e.video_id.as_str()).or_default().push(&e.reference);
    }
    let mut seen = HashSet::new();
    for c in candidates {
        if !seen.insert(c.candidate_id.as_str()) {
            continue;
        }
        let base = format!("{}-{}-{}", c.video_id, c.subtask, c.candidate_id);
        let mut rng = rng_for(cfg.seed, &c.candidate_id);
        let (options, answer_index) = if c.subtask == Subtask::SE {
            (SEARCH_OPTIONS.iter().map(|s| s.to_string()).collect::<Vec<_>>(), 0)
        } else {
            let mut opts: Vec<String> = std::iter::once(c.answer.clone()).chain(c.distractors.iter().cloned()).collect();
            opts.shuffle(&mut rng);
            let i = opts.iter().position(|o| *o == c.answer).expect("answer is an option");
            (opts, i)
        };
        let text_sample = |query: Query, suffix: &str| QaSample {
            sample_id: format!("{base}-{suffix}"),
            video_id: c.video_id.clone(),
            subtask: c.subtask,
            query,
            options: options.clone(),
            answer_index,
            ground_truth: c.timestamps.clone(),
            is_negative: false,
        };
        let text = match Query::text(c.question.clone()) {
            Ok(q) => text_sample(q, "t"),
            Err(e) => {
                note(&mut pkg.notes, format!("{base}: unusable question: {e}"));
                continue;
            }
        };
        let duration = durations.get(&c.video_id).copied().unwrap_or(f64::INFINITY);
        let mut reasons = sample_problems(c, duration);
        if let Err(e) = text.validate() {
            reasons.push(e.to_string());
        }
        let entity = c.entity_id.as_deref().and_then(|id| by_id.get(id).copied());
        if c.subtask.is_person_specific() && entity.is_none() {
            reasons.push("unknown entity".into());
        }
        let donor = if c.subtask == Subtask::SE {
            let target = entity.map_or(c.person.as_deref().unwrap_or(""), |e| e.reference.as_str());
            let donors: Vec<&str> = refs_by_video
                .iter()
                .filter(|(v, refs)| **v != c.video_id && refs.iter().all(|r| token_overlap(target, r) < cfg.donor_overlap))
                .map(|(v, _)| *v)
                .collect();
            if donors.is_empty() {
                reasons.push("no donor video for a negative".into());
                None
            } else {
                Some(donors[rng.random_range(0..donors.len())].to_string())
            }
        } else {
            None
        };
        if !reasons.is_empty() {
            pkg.review.push(ReviewItem {
                item_id: text.sample_id.clone(),
                candidate_id: c.candidate_id.clone(),
                reasons,
                sample: text,
                status: ReviewStatus::Pending,
            });
            continue;
        }
        let negative = |s: &QaSample, donor: &str| QaSample {
            sample_id: format!("{}-neg", s.sample_id),
            video_id: donor.to_string(),
            answer_index: SEARCH_ABSENT_INDEX,
            ground_truth: IntervalSet::empty(),
            is_negative: true,
            ..s.clone()
        };
        let mut emitted = vec![text];
        if cfg.multimodal && c.subtask.is_person_specific() {
            let e = entity.expect("checked above");
            let question = match &c.question_indirect {
                Some(q) if c.subtask == Subtask::SE => Some(q.clone()),
                _ => indirect_question(&c.question, &e.reference),
            };
            match (e.usable, e.query_crops.first(), question) {
                (true, Some(crop), Some(q)) => {
                    let bytes = crop_bytes(crop)?;
                    if sha256_hex(&bytes) != crop.sha256 {
                        return Err(QaError::InvalidInput(format!("crop {} does not match its hash", crop.path)));
                    }
                    let query = Query::image_text(ImageRef::Bytes(bytes), q).expect("non-empty question");
                    emitted.push(text_sample(query, "m"));
                }
                (true, Some(_), None) => {
                    note(&mut pkg.notes, format!("{base}: question does not name the person; image variant skipped"))
                }
                _ => note(&mut pkg.notes, format!("{base}: no verified crop; image variant skipped")),
            }
        }
        for s in emitted {
            let neg = donor.as_deref().map(|d| negative(&s, d));
            pkg.benchmark.push(s);
            pkg.benchmark.extend(neg);
        }
    }
    Ok(pkg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qa::Caption;
    use std::sync::Mutex;

    struct Scripted {
        replies: Mutex<Vec<String>>,
        calls: Mutex<Vec<ModelRequest>>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                calls: Mutex::new(Vec::new()),
            }
        }
        fn calls(&self) -> usize {
            self.calls.lock().unwrap().len()
        }
    }

    impl ModelClient for Scripted {
        fn model_id(&self) -> String {
            "scripted".into()
        }
        fn complete(&self, r: &ModelRequest) -> Result<String, QaError> {
            self.calls.lock().unwrap().push(r.clone());
            let mut q = self.replies.lock().unwrap();
            Ok(if q.len() > 1 { q.pop().unwrap() } else { q[0].clone() })
        }
    }

    fn track() -> CaptionTrack {
        let c = |s: f64, e: f64, t: &str| Caption {
            start: s,
            end: e,
            text: t.into(),
        };
        CaptionTrack {
            video_id: "v1".into(),
            captions: vec![
                c(0.0, 10.0, "A man in a white shirt enters the shop."),
                c(12.0, 20.0, "A dog crosses the road."),
                c(30.0, 40.0, "The man in the white shirt leaves."),
            ],
        }
    }

    fn entity() -> PersonEntity {
        PersonEntity {
            entity_id: "v1/e00".into(),
            video_id: "v1".into(),
            reference: "man in a white shirt".into(),
            mentions: canonicalize(vec![TimeInterval::of(0.0, 10.0), TimeInterval::of(30.0, 40.0)]),
            query_crops: vec![],
            usable: true,
        }
    }

    #[test]
    fn entity_with_two_mentions() {
        let llm = Scripted::new(&[
            r#"[{"reference": "man in a white shirt", "mentions": [{"start": 0.0, "end": 10.0}, {"start": 30.0, "end": 40.0}]}]"#,
        ]);
        let (es, notes) = extract_entities(&track(), &llm).unwrap();
        assert_eq!(es, vec![entity()]);
        assert!(notes.is_empty());
        let sent = &llm.calls.lock().unwrap()[0];
        assert!(sent.text.contains(r#"{"captions": [{"end": 10.0, "start": 0.0, "text": "A man in a white shirt enters the shop."}"#));
    }

    #[test]
    fn no_people_and_malformed_replies() {
        let llm = Scripted::new(&["[]"]);
        assert!(extract_entities(&track(), &llm).unwrap().0.is_empty());
        let llm = Scripted::new(&["{not json", "still not json"]);
        let (es, notes) = extract_entities(&track(), &llm).unwrap();
        assert!(es.is_empty());
        assert_eq!(llm.calls(), 2);
        assert!(notes[0].starts_with("schema violation"));
    }

    #[test]
    fn invented_mentions_are_dropped() {
        let llm = Scripted::new(&[r#"[{"reference": "woman", "mentions": [{"start": 50, "end": 55}]}]"#]);
        let (es, notes) = extract_entities(&track(), &llm).unwrap();
        assert!(es.is_empty());
        assert_eq!(notes.len(), 1);
    }

    fn search_reply() -> &'static str {
        r#"[{"question": "When does the man in a white shirt enter?", "question_indirect": "When does this person enter?", "answer": "At the start", "person": "man in a white shirt", "timestamp": {"start": 0.0, "end": 10.0}}]"#
    }

    #[test]
    fn search_candidate_has_both_forms() {
        let llm = Scripted::new(&[search_reply()]);
        let (cs, _) = generate_qa(&track(), Some(&entity()), Subtask::SE, &llm, 3).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].question_indirect.as_deref(), Some("When does this person enter?"));
        assert_eq!(cs[0].timestamps, IntervalSet::single(TimeInterval::of(0.0, 10.0)));
        assert_eq!(cs[0].provenance.prompt_id, "qa_search_v1");
    }

    #[test]
    fn counting_candidate_keeps_every_instance() {
        let llm = Scripted::new(&[
            r#"[{"question": "How many times does someone pass?", "answer": "4", "distractors": ["2", "3", "5"], "timestamps": [{"start": 0, "end": 2}, {"start": 4, "end": 6}, {"start": 13, "end": 15}, {"start": 31, "end": 33}]}]"#,
        ]);
        let (cs, _) = generate_qa(&track(), None, Subtask::CT, &llm, 3).unwrap();
        assert_eq!(cs[0].answer, "4");
        assert_eq!(cs[0].timestamps.len(), 4);
    }

    #[test]
    fn cap_and_element_validation() {
        let one = r#"{"question": "What does the man do?", "answer": "enters", "distractors": ["sits", "runs", "waits"], "person": "man in a white shirt", "timestamp": {"start": 0, "end": 10}}"#;
        let bad = r#"{"question": "What?", "answer": "x"}"#;
        let outside = r#"{"question": "Q", "answer": "a", "distractors": ["b","c","d"], "person": "p", "timestamp": {"start": 12, "end": 20}}"#;
        let reply = format!("[{one}, {bad}, {outside}, {one}, {one}]");
        let llm = Scripted::new(&[reply.as_str()]);
        let (cs, notes) = generate_qa(&track(), Some(&entity()), Subtask::AC, &llm, 3).unwrap();
        assert_eq!(cs.len(), 1);
        assert_eq!(notes.len(), 3, "{notes:?}");
        assert!(matches!(generate_qa(&track(), None, Subtask::AC, &llm, 3), Err(QaError::InvalidInput(_))));
    }

    #[test]
    fn overlap_rule() {
        assert!((token_overlap("man in red jacket", "woman in blue coat") - 0.0).abs() < 1e-12);
        assert!((token_overlap("man in red jacket", "woman in red jacket") - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_overlap("the person", "anyone"), 0.0);
    }

    #[test]
    fn indirect_rewrite() {
        assert_eq!(
            indirect_question("What is the man in red jacket doing?", "man in red jacket").as_deref(),
            Some("What is the person in the photo doing?")
        );
        assert_eq!(
            indirect_question("Man in red jacket: where?", "man in red jacket").as_deref(),
            Some("The person in the photo: where?")
        );
        assert_eq!(indirect_question("Who left?", "man in red jacket"), None);
    }

    fn candidate(subtask: Subtask, distractors: &[&str]) -> CandidateQa {
        let mut c = CandidateQa {
            candidate_id: String::new(),
            video_id: "v1".into(),
            subtask,
            question: "Is the man in a white shirt here?".into(),
            question_indirect: Some("Is this person here?".into()),
            answer: "enters".into(),
            distractors: distractors.iter().map(|s| s.to_string()).collect(),
            person: Some("man in a white shirt".into()),
            entity_id: Some("v1/e00".into()),
            timestamps: IntervalSet::single(TimeInterval::of(0.0, 10.0)),
            provenance: Provenance {
                prompt_id: "p".into(),
                model_id: "m".into(),
                response_sha256: "h".into(),
            },
        };
        c.candidate_id = c.content_id();
        c
    }

    fn durations(videos: &[&str]) -> BTreeMap<String, f64> {
        videos.iter().map(|v| (v.to_string(), 60.0)).collect()
    }

    fn no_crops(_: &CropRef) -> Result<Vec<u8>, QaError> {
        panic!("no crop expected")
    }

    #[test]
    fn duplicate_distractor_goes_to_review() {
        let c = candidate(Subtask::AC, &["sits", "Sits", "runs"]);
        let pkg = validate_and_package(&[c], &[entity()], &durations(&["v1"]), &EngineConfig::default(), &no_crops).unwrap();
        assert!(pkg.benchmark.is_empty());
        assert_eq!(pkg.review[0].reasons, vec!["duplicate distractor".to_string()]);
    }

    #[test]
    fn search_positive_gets_a_negative_from_a_donor() {
        let mut other = entity();
        other.entity_id = "v2/e00".into();
        other.video_id = "v2".into();
        other.reference = "woman in a blue coat".into();
        let mut same = other.clone();
        same.entity_id = "v3/e00".into();
        same.video_id = "v3".into();
        same.reference = "man in white shirt".into();
        let mut e = entity();
        e.usable = false;
        let pkg = validate_and_package(
            &[candidate(Subtask::SE, &[])],
            &[e, other, same],
            &durations(&["v1", "v2", "v3"]),
            &EngineConfig::default(),
            &no_crops,
        )
        .unwrap();
        assert_eq!(pkg.benchmark.len(), 2);
        let (pos, neg) = (&pkg.benchmark[0], &pkg.benchmark[1]);
        assert!(!pos.is_negative && neg.is_negative);
        assert_eq!(neg.video_id, "v2");
        assert_eq!(neg.answer_index, 1);
        assert!(neg.ground_truth.is_empty());
        assert!(pkg.notes.iter().any(|n| n.contains("image variant skipped")));
    }

    #[test]
    fn multimodal_variant_uses_a_verified_crop() {
        let png = vec![7u8; 10];
        let mut e = entity();
        e.query_crops.push(CropRef {
            path: "crops/x.png".into(),
            sha256: sha256_hex(&png),
            frame_index: 3,
            timestamp: 0.6,
            bbox: BBox::of(1.0, 1.0, 5.0, 5.0),
        });
        let mut c = candidate(Subtask::AC, &["sits", "runs", "waits"]);
        c.question = "What does the man in a white shirt do first?".into();
        c.question_indirect = None;
        c.candidate_id = c.content_id();
        let load = |_: &CropRef| Ok(png.clone());
        let pkg = validate_and_package(&[c], &[e], &durations(&["v1"]), &EngineConfig::default(), &load).unwrap();
        assert_eq!(pkg.benchmark.len(), 2);
        let m = &pkg.benchmark[1];
        assert_eq!(m.query.text, "What does the person in the photo do first?");
        assert_eq!(m.query.image, Some(ImageRef::Bytes(png)));
        assert_eq!(m.options, pkg.benchmark[0].options);
        assert!(pkg.benchmark.iter().all(|s| s.validate().is_ok()));
    }
}
