//! Synthetic surveillance footage for tests, benchmarks and demos.
//!
//! A video is a grey canvas on which each actor is a solid rectangle in its
//! palette colour, moving at constant velocity while visible. The same
//! description yields the detector output (one detection per visible actor
//! per frame) and the rendered frames, so tracking, clipping, encoding and
//! answering can run end to end without real footage.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::encoder::mock::{Palette, BACKGROUND};
use crate::frames::{encode_png, Frame, FrameError, FrameSource, VideoManifest};
use crate::interval::{IntervalSet, TimeInterval};
use crate::types::{BBox, Detection, ImageRef, Modality, QaSample, Query, Subtask};

pub const WIDTH: u32 = 320;
pub const HEIGHT: u32 = 240;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub label: String,
    pub appear: f64,
    pub disappear: f64,
    /// Box at the moment of appearance.
    pub start_box: BBox,
    /// Pixels per second.
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl Actor {
    pub fn visible_at(&self, t: f64) -> bool {
        t >= self.appear - 1e-9 && t <= self.disappear + 1e-9
    }

    /// Box at time `t`, kept inside the canvas.
    pub fn box_at(&self, t: f64) -> Option<BBox> {
        if !self.visible_at(t) {
            return None;
        }
        let b = self.start_box;
        let dt = t - self.appear;
        let x = (b.x + self.velocity[0] * dt).clamp(0.0, (WIDTH as f64 - b.w).max(0.0));
        let y = (b.y + self.velocity[1] * dt).clamp(0.0, (HEIGHT as f64 - b.h).max(0.0));
        Some(BBox::of(x, y, b.w, b.h))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub manifest: VideoManifest,
    pub actors: Vec<Actor>,
}

impl SyntheticVideo {
    pub fn video_id(&self) -> &str {
        &self.manifest.video_id
    }

    pub fn detections(&self) -> Vec<Detection> {
        let m = &self.manifest;
        let mut out = Vec::new();
        for f in 0..m.total_frames() {
            let t = m.timestamp(f);
            for a in &self.actors {
                if let Some(b) = a.box_at(t) {
                    out.push(Detection {
                        video_id: m.video_id.clone(),
                        frame_index: f,
                        timestamp: t,
                        bbox: b,
                        score: 0.9,
                        class_label: "person".into(),
                    });
                }
            }
        }
        out
    }

    /// The span from the first to the last frame in which the actor is
    /// visible, i.e. what a perfect tracker reports.
    pub fn visible_span(&self, label: &str) -> Option<TimeInterval> {
        let a = self.actors.iter().find(|a| a.label == label)?;
        let m = &self.manifest;
        let frames: Vec<u64> = (0..m.total_frames()).filter(|&f| a.visible_at(m.timestamp(f))).collect();
        let (first, last) = (*frames.first()?, *frames.last()?);
        TimeInterval::new(m.timestamp(first), m.timestamp(last)).ok()
    }

    pub fn render(&self, frame_index: u64, palette: &Palette) -> RgbImage {
        let t = self.manifest.timestamp(frame_index);
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb(BACKGROUND));
        for a in &self.actors {
            let (Some(b), Some(c)) = (a.box_at(t), palette.color(&a.label)) else {
                continue;
            };
            if let Some((x, y, w, h)) = b.pixel_rect(WIDTH, HEIGHT) {
                for yy in y..y + h {
                    for xx in x..x + w {
                        img.put_pixel(xx, yy, Rgb(c));
                    }
                }
            }
        }
        img
    }
}

/// A set of synthetic videos sharing one palette. Serves rendered PNG
/// frames; rendered frames are cached.
#[derive(Debug)]
pub struct SyntheticWorld {
    palette: Palette,
    videos: BTreeMap<String, SyntheticVideo>,
    cache: FrameCache,
}

type FrameCache = Mutex<HashMap<(String, u64), Arc<Vec<u8>>>>;

#[derive(Serialize, Deserialize)]
struct WorldFile {
    videos: Vec<SyntheticVideo>,
}

impl SyntheticWorld {
    /// Colours are assigned to labels in order of first appearance.
    pub fn new(videos: Vec<SyntheticVideo>) -> Self {
        let mut palette = Palette::default();
        for v in &videos {
            for a in &v.actors {
                palette.insert(&a.label);
            }
        }
        Self {
            palette,
            videos: videos.into_iter().map(|v| (v.manifest.video_id.clone(), v)).collect(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        let f: WorldFile = serde_json::from_str(s)?;
        Ok(Self::new(f.videos))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&WorldFile {
            videos: self.videos.values().cloned().collect(),
        })
        .expect("world serializes")
    }

    pub fn palette(&self) -> &Palette {
        &self.palette
    }

    pub fn video(&self, video_id: &str) -> Option<&SyntheticVideo> {
        self.videos.get(video_id)
    }

    pub fn videos(&self) -> impl Iterator<Item = &SyntheticVideo> {
        self.videos.values()
    }

    /// PNG of the actor's colour at its box size: a stand-in for a person
    /// crop used as a query image.
    pub fn actor_crop(&self, label: &str) -> Option<Vec<u8>> {
        let c = self.palette.color(label)?;
        let a = self.videos.values().flat_map(|v| &v.actors).find(|a| a.label == label)?;
        let img = RgbImage::from_pixel(a.start_box.w as u32, a.start_box.h as u32, Rgb(c));
        Some(encode_png(&img))
    }
}

impl FrameSource for SyntheticWorld {
    fn manifest(&self, video_id: &str) -> Result<VideoManifest, FrameError> {
        self.videos
            .get(video_id)
            .map(|v| v.manifest.clone())
            .ok_or_else(|| FrameError::UnknownVideo(video_id.to_string()))
    }

    fn frame(&self, video_id: &str, frame_index: u64) -> Result<Frame, FrameError> {
        let v = self
            .videos
            .get(video_id)
            .ok_or_else(|| FrameError::UnknownVideo(video_id.to_string()))?;
        if frame_index >= v.manifest.total_frames() {
            return Err(FrameError::Missing {
                video_id: video_id.to_string(),
                frame_index,
            });
        }
        let key = (video_id.to_string(), frame_index);
        if let Some(d) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(Frame { data: d.to_vec() });
        }
        let data = Arc::new(encode_png(&v.render(frame_index, &self.palette)));
        self.cache.lock().expect("cache lock").insert(key, data.clone());
        Ok(Frame { data: data.to_vec() })
    }
}

const WHO: [&str; 2] = ["man", "woman"];
const COLORS: [&str; 10] = ["red", "blue", "green", "yellow", "black", "white", "orange", "purple", "grey", "brown"];
const GARMENTS: [&str; 5] = ["jacket", "hoodie", "coat", "shirt", "dress"];

/// Distinct person descriptions such as "woman in green coat" (100 total).
pub fn cast(n: usize) -> Vec<String> {
    assert!(n <= WHO.len() * COLORS.len() * GARMENTS.len(), "cast too large");
    (0..n)
        .map(|i| {
            let who = WHO[i % 2];
            let color = COLORS[(i / 2) % COLORS.len()];
            let garment = GARMENTS[(i / 20) % GARMENTS.len()];
            format!("{who} in {color} {garment}")
        })
        .collect()
}

const ACTIVITIES: [&str; 6] = [
    "walking toward the exit",
    "standing by the door",
    "carrying a bag",
    "talking on a phone",
    "running across the lot",
    "sitting on a bench",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub videos: usize,
    pub actors_per_video: usize,
    pub cast_size: usize,
    pub fps: f64,
    pub duration_seconds: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            videos: 50,
            actors_per_video: 6,
            cast_size: 60,
            fps: 5.0,
            duration_seconds: 60.0,
            seed: 0,
        }
    }
}

/// A world plus one four-option question per video whose ground truth is
/// exactly the visible span of the questioned actor.
#[derive(Debug)]
pub struct Scenario {
    pub world: SyntheticWorld,
    pub samples: Vec<QaSample>,
    /// sample_id → questioned actor label.
    pub targets: BTreeMap<String, String>,
}

/// Builds the end-to-end scenario. Actors occupy separate cells of a 3×2
/// grid, so person crops never contain another actor. Every other question
/// is multimodal: the person is given as a crop and referred to indirectly.
pub fn scenario(cfg: &ScenarioConfig) -> Scenario {
    assert!(cfg.actors_per_video <= 6, "the layout has six cells");
    let people = cast(cfg.cast_size);
    let mut videos = Vec::with_capacity(cfg.videos);
    let mut picks = Vec::with_capacity(cfg.videos);
    for v in 0..cfg.videos {
        let mut rng = Pcg64::seed_from_u64(cfg.seed ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let video_id = format!("vid{v:03}");
        let mut labels = people.clone();
        labels.shuffle(&mut rng);
        labels.truncate(cfg.actors_per_video);
        let total = (cfg.duration_seconds * cfg.fps) as u64;
        let actors: Vec<Actor> = labels
            .iter()
            .enumerate()
            .map(|(k, label)| {
                let (col, row) = ((k % 3) as f64, (k / 3) as f64);
                let len_frames = rng.random_range((6.0 * cfg.fps) as u64..=(18.0 * cfg.fps) as u64);
                let first = rng.random_range(0..total - len_frames);
                Actor {
                    label: label.clone(),
                    appear: first as f64 / cfg.fps,
                    disappear: (first + len_frames) as f64 / cfg.fps,
                    start_box: BBox::of(col * 106.0 + 20.0, row * 120.0 + 20.0, 30.0, 60.0),
                    velocity: [1.0, 0.5],
                }
            })
            .collect();
        let target = labels[rng.random_range(0..labels.len())].clone();
        let mut options: Vec<&str> = ACTIVITIES.to_vec();
        options.shuffle(&mut rng);
        options.truncate(4);
        let answer_index = rng.random_range(0..4);
        picks.push((video_id.clone(), target, options, answer_index));
        videos.push(SyntheticVideo {
            manifest: VideoManifest {
                video_id,
                camera_id: format!("cam{:02}", v % 7),
                fps: cfg.fps,
                duration_seconds: cfg.duration_seconds,
                frame_dir: None,
                source_uri: None,
            },
            actors,
        });
    }
    let world = SyntheticWorld::new(videos);
    let subtasks = [Subtask::AC, Subtask::EV, Subtask::TM];
    let mut samples = Vec::new();
    let mut targets = BTreeMap::new();
    for (v, (video_id, target, options, answer_index)) in picks.into_iter().enumerate() {
        let span = world.video(&video_id).and_then(|x| x.visible_span(&target)).expect("actor is visible");
        let query = if v % 2 == 0 {
            Query::text(format!("What is the {target} doing while in view?"))
        } else {
            Query::image_text(
                ImageRef::Bytes(world.actor_crop(&target).expect("actor has a colour")),
                "What is the person in the photo doing while in view?",
            )
        }
        .expect("valid query");
        debug_assert_eq!(query.modality == Modality::ImageText, v % 2 == 1);
        let sample_id = format!("oracle-{v:03}");
        targets.insert(sample_id.clone(), target);
        samples.push(QaSample {
            sample_id,
            video_id,
            subtask: subtasks[v % subtasks.len()],
            query,
            options: options.iter().map(|s| s.to_string()).collect(),
            answer_index,
            ground_truth: IntervalSet::single(span),
            is_negative: false,
        });
    }
    Scenario { world, samples, targets }
}
