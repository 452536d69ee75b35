//! Rule-based stand-in for the text and multimodal models, matched to the
//! synthetic world: it reads references like "man in red jacket" out of
//! captions, finds people in frames by their palette colour and writes one
//! question per template call. Used to produce replay recordings.

use std::collections::BTreeMap;
use std::sync::LazyLock;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use regex::Regex;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::prompts::{ACTIVITY, ANOMALY, COUNTING, EVENT, EXTRACT_ENTITIES, GROUND_BBOX, SEARCH, TEMPORAL, VERIFY_PRESENCE};
use super::{Caption, CaptionTrack, ModelClient, ModelRequest, QaError};
use crate::encoder::mock::Palette;
use crate::frames::decode_rgb;
use crate::synth::SyntheticWorld;

pub const ACTIVITIES: [&str; 8] = [
    "walking toward the exit",
    "standing by the door",
    "carrying a bag",
    "talking on a phone",
    "running across the lot",
    "sitting on a bench",
    "waiting at the corner",
    "looking at a shop window",
];

const UNUSUAL: &str = "running across the lot";

static PERSON_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:man|woman) in [a-z]+ [a-z]+\b").expect("valid regex"));
static CAPTION_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:A|The) ((?:man|woman) in [a-z]+ [a-z]+) is (.+)\.$").expect("valid regex"));
static REFERENCE_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"this person: (.+?)[.?]\s*\n").expect("valid regex"));

/// Two captions per actor: one activity while entering, another until it
/// leaves.
pub fn captions_for(world: &SyntheticWorld) -> Vec<CaptionTrack> {
    world
        .videos()
        .map(|v| {
            let mut caps = Vec::new();
            for a in &v.actors {
                let d: [u8; 32] = Sha256::new()
                    .chain_update(v.video_id().as_bytes())
                    .chain_update(a.label.as_bytes())
                    .finalize()
                    .into();
                let mut rng = Pcg64::from_seed(d);
                let first = rng.random_range(0..ACTIVITIES.len());
                let second = (first + 1 + rng.random_range(0..ACTIVITIES.len() - 1)) % ACTIVITIES.len();
                let mid = ((a.appear + a.disappear) / 2.0 * 10.0).round() / 10.0;
                caps.push(Caption {
                    start: a.appear,
                    end: mid,
                    text: format!("A {} is {}.", a.label, ACTIVITIES[first]),
                });
                caps.push(Caption {
                    start: mid,
                    end: a.disappear,
                    text: format!("The {} is {}.", a.label, ACTIVITIES[second]),
                });
            }
            caps.sort_by(|x, y| x.start.total_cmp(&y.start).then(x.end.total_cmp(&y.end)));
            CaptionTrack {
                video_id: v.video_id().to_string(),
                captions: caps,
            }
        })
        .collect()
}

pub struct ScriptedModel {
    palette: Palette,
}

impl ScriptedModel {
    pub fn new(palette: Palette) -> Self {
        Self { palette }
    }
}

/// The filled-in input object: templates end with it on its own line.
fn input(text: &str) -> Result<Value, QaError> {
    text.lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .and_then(|l| serde_json::from_str(l).ok())
        .ok_or_else(|| QaError::InvalidInput("prompt has no input object".into()))
}

struct Said {
    person: String,
    activity: String,
    start: f64,
    end: f64,
}

fn said(input: &Value) -> Vec<Said> {
    input["captions"]
        .as_array()
        .into_iter()
        .flatten()
        .filter_map(|c| {
            let cap = CAPTION_RE.captures(c["text"].as_str()?)?;
            Some(Said {
                person: cap[1].to_string(),
                activity: cap[2].to_string(),
                start: c["start"].as_f64()?,
                end: c["end"].as_f64()?,
            })
        })
        .collect()
}

fn others(answer: &str, n: usize) -> Vec<String> {
    let start = ACTIVITIES.iter().position(|a| *a == answer).unwrap_or(0);
    (1..ACTIVITIES.len())
        .map(|k| ACTIVITIES[(start + k) % ACTIVITIES.len()].to_string())
        .take(n)
        .collect()
}

fn span(s: f64, e: f64) -> Value {
    json!({"start": s, "end": e})
}

impl ScriptedModel {
    fn entities(&self, input: &Value) -> Value {
        let mut order: Vec<String> = Vec::new();
        let mut mentions: BTreeMap<String, Vec<Value>> = BTreeMap::new();
        for c in input["captions"].as_array().into_iter().flatten() {
            let text = c["text"].as_str().unwrap_or("");
            for m in PERSON_RE.find_iter(text) {
                let r = m.as_str().to_string();
                if !mentions.contains_key(&r) {
                    order.push(r.clone());
                }
                mentions.entry(r).or_default().push(span(c["start"].as_f64().unwrap_or(0.0), c["end"].as_f64().unwrap_or(0.0)));
            }
        }
        Value::Array(
            order
                .into_iter()
                .map(|r| {
                    let m = mentions.remove(&r).unwrap_or_default();
                    json!({"reference": r, "mentions": m})
                })
                .collect(),
        )
    }

    fn find(&self, reference: &str, image: &[u8]) -> Result<Option<[u32; 4]>, QaError> {
        let Some(color) = self.palette.color(reference) else {
            return Ok(None);
        };
        let img = decode_rgb(image).map_err(|e| QaError::InvalidInput(e.to_string()))?;
        let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
        let mut hits = 0u64;
        for (x, y, px) in img.enumerate_pixels() {
            if px.0 == color {
                hits += 1;
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
        if hits == 0 {
            return Ok(None);
        }
        Ok(Some([x0, y0, x1 - x0 + 1, y1 - y0 + 1]))
    }

    fn questions(&self, prompt_id: &str, input: &Value) -> Value {
        let said = said(input);
        let person = input["person_reference"].as_str().unwrap_or("");
        let mine: Vec<&Said> = said.iter().filter(|s| s.person == person).collect();
        let mut out = Vec::new();
        match prompt_id {
            id if id == ACTIVITY.id => {
                for s in &mine {
                    out.push(json!({
                        "question": format!("What is the {person} doing between {:.1} s and {:.1} s?", s.start, s.end),
                        "answer": s.activity,
                        "distractors": others(&s.activity, 3),
                        "person": person,
                        "timestamp": span(s.start, s.end),
                    }));
                }
            }
            id if id == EVENT.id => {
                if let [a, b, ..] = mine.as_slice() {
                    let answer = format!("{} and then {}", a.activity, b.activity);
                    let swapped = format!("{} and then {}", b.activity, a.activity);
                    let alt: Vec<String> = others(&a.activity, 2).into_iter().map(|o| format!("{o} and then {}", b.activity)).collect();
                    out.push(json!({
                        "question": format!("How did the situation around the {person} develop?"),
                        "answer": answer,
                        "distractors": [swapped, alt[0], alt[1]],
                        "person": person,
                        "timestamp": span(a.start, b.end),
                    }));
                }
            }
            id if id == TEMPORAL.id => {
                if let [a, b, ..] = mine.as_slice() {
                    let mut d = vec![b.activity.clone()];
                    d.extend(others(&a.activity, 4).into_iter().filter(|o| *o != b.activity).take(2));
                    out.push(json!({
                        "question": format!("Which of the following activities did the {person} do first?"),
                        "answer": a.activity,
                        "distractors": d,
                        "person": person,
                        "timestamp": span(a.start, a.end),
                    }));
                }
            }
            id if id == SEARCH.id => {
                if let (Some(a), Some(b)) = (mine.first(), mine.last()) {
                    out.push(json!({
                        "question": format!("Does the {person} appear in this video?"),
                        "question_indirect": "Does this person appear in this video?",
                        "answer": "Yes",
                        "person": person,
                        "timestamp": span(a.start, b.end),
                    }));
                }
            }
            id if id == COUNTING.id => {
                let mut firsts: Vec<&Said> = Vec::new();
                for s in &said {
                    if !firsts.iter().any(|f| f.person == s.person) {
                        firsts.push(s);
                    }
                }
                let n = firsts.len();
                if n > 0 {
                    let d: Vec<String> = if n >= 2 { vec![n - 1, n + 1, n + 2] } else { vec![n + 1, n + 2, n + 3] }
                        .into_iter()
                        .map(|k| format!("{k} people"))
                        .collect();
                    out.push(json!({
                        "question": "How many different people appear in the video?",
                        "answer": format!("{n} people"),
                        "distractors": d,
                        "timestamps": firsts.iter().map(|s| span(s.start, s.end)).collect::<Vec<_>>(),
                    }));
                }
            }
            id if id == ANOMALY.id => {
                if let Some(s) = said.iter().find(|s| s.activity == UNUSUAL) {
                    out.push(json!({
                        "question": "Which of the following describes the unusual event?",
                        "answer": format!("A {} runs across the lot", s.person),
                        "distractors": ["A car drives the wrong way", "Two people start a fight", "A bag is left unattended"],
                        "timestamp": span(s.start, s.end),
                    }));
                }
            }
            _ => {}
        }
        Value::Array(out)
    }
}

impl ModelClient for ScriptedModel {
    fn model_id(&self) -> String {
        "scripted-stub-v1".into()
    }

    fn complete(&self, request: &ModelRequest) -> Result<String, QaError> {
        let id = request.prompt_id.as_str();
        let reference = || {
            REFERENCE_RE
                .captures(&request.text)
                .map(|c| c[1].to_string())
                .ok_or_else(|| QaError::InvalidInput("prompt names no person".into()))
        };
        let image = || {
            request
                .images
                .first()
                .map(|i| i.0.as_slice())
                .ok_or_else(|| QaError::InvalidInput("request carries no image".into()))
        };
        let reply = if id == EXTRACT_ENTITIES.id {
            self.entities(&input(&request.text)?)
        } else if id == GROUND_BBOX.id {
            match self.find(&reference()?, image()?)? {
                Some(b) => json!({"box": b}),
                None => json!({"box": null}),
            }
        } else if id == VERIFY_PRESENCE.id {
            let img = decode_rgb(image()?).map_err(|e| QaError::InvalidInput(e.to_string()))?;
            let present = match self.palette.color(&reference()?) {
                Some(c) => {
                    let hits = img.pixels().filter(|p| p.0 == c).count();
                    hits * 2 >= (img.width() * img.height()) as usize
                }
                None => false,
            };
            json!({"present": present})
        } else {
            self.questions(id, &input(&request.text)?)
        };
        Ok(reply.to_string())
    }
}
