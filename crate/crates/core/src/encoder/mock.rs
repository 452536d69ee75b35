//! Deterministic stand-in encoder.
//!
//! Every semantic label owns a random unit vector drawn from a PCG64 stream
//! (`rand_pcg::Pcg64`) seeded with `SHA-256(seed_le_bytes ‖ label)`. An input
//! with label set `L` embeds to `normalize(Σ_{l∈L} base(l))`, optionally
//! perturbed by isotropic Gaussian noise whose expected norm is `noise`
//! and renormalized.
//!
//! Labels are recovered from requests through a [`Palette`]: synthetic
//! frames paint each identity in a dedicated colour, so the colours present
//! in the (cropped) frames name the people in a clip. Text contributes every
//! palette label whose tokens occur as a phrase in it; text with no known
//! label is its own label.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EncodeKind, EncodeRequest, EncoderBackend, EncoderError};
use crate::frames::decode_rgb;

pub const BACKGROUND: [u8; 3] = [128, 128, 128];
/// Label given to frames in which no palette colour is visible.
pub const BACKGROUND_LABEL: &str = "__background__";

fn rng_for(parts: &[&[u8]]) -> Pcg64 {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest: [u8; 32] = h.finalize().into();
    Pcg64::from_seed(digest)
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// The unit base vector of one label.
pub fn label_vector(label: &str, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(&[&seed.to_le_bytes(), label.as_bytes()]);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    normalize(&mut v);
    v
}

/// Embeds a label set. `nonce` keys the noise stream so distinct inputs
/// with the same labels get independent noise; with `noise == 0` it is
/// ignored and the output depends on `(labels, seed, dim)` only.
pub fn mock_encode<S: AsRef<str>>(labels: &[S], seed: u64, dim: usize, noise: f64, nonce: &[u8]) -> Vec<f32> {
    let set: BTreeSet<&str> = labels.iter().map(AsRef::as_ref).collect();
    assert!(!set.is_empty(), "mock_encode needs at least one label");
    let mut acc = vec![0.0f64; dim];
    for l in &set {
        for (a, b) in acc.iter_mut().zip(label_vector(l, seed, dim)) {
            *a += b;
        }
    }
    normalize(&mut acc);
    if noise > 0.0 {
        let joined = set.iter().copied().collect::<Vec<_>>().join("\u{1f}");
        let mut rng = rng_for(&[&seed.to_le_bytes(), b"noise", joined.as_bytes(), nonce]);
        let scale = noise / (dim as f64).sqrt();
        for a in acc.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *a += scale * z;
        }
        normalize(&mut acc);
    }
    acc.into_iter().map(|x| x as f32).collect()
}

fn tokens(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn contains_phrase(hay: &[String], needle: &[String]) -> bool {
    !needle.is_empty() && hay.windows(needle.len()).any(|w| w == needle)
}

/// Bidirectional label ↔ colour table.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    colors: BTreeMap<String, [u8; 3]>,
}

impl Palette {
    /// Well-separated colours: the 6-level RGB cube without greys.
    fn swatch(i: usize) -> [u8; 3] {
        const LEVELS: [u8; 6] = [0, 51, 102, 153, 204, 255];
        let cube: Vec<[u8; 3]> = (0..216)
            .map(|k| [LEVELS[k / 36], LEVELS[(k / 6) % 6], LEVELS[k % 6]])
            .filter(|c| !(c[0] == c[1] && c[1] == c[2]))
            .collect();
        // stride through the cube so consecutive labels differ strongly
        cube[(i * 97) % cube.len()]
    }

    pub const CAPACITY: usize = 210;

    /// Assigns colours to labels in the order given.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Self {
        let mut p = Palette::default();
        for l in labels {
            p.insert(l.as_ref());
        }
        p
    }

    /// Returns the label's colour, assigning the next free one if new.
    pub fn insert(&mut self, label: &str) -> [u8; 3] {
        if let Some(c) = self.colors.get(label) {
            return *c;
        }
        assert!(self.colors.len() < Self::CAPACITY, "palette is full");
        let c = Self::swatch(self.colors.len());
        self.colors.insert(label.to_string(), c);
        c
    }

    pub fn color(&self, label: &str) -> Option<[u8; 3]> {
        self.colors.get(label).copied()
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.colors.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }

    /// Label of the palette colour within distance 24 per channel of `px`.
    pub fn label_of(&self, px: [u8; 3]) -> Option<&str> {
        self.colors
            .iter()
            .find(|(_, c)| c.iter().zip(px).all(|(a, b)| a.abs_diff(b) <= 24))
            .map(|(l, _)| l.as_str())
    }

    /// Palette labels named in `text`.
    pub fn labels_in_text(&self, text: &str) -> BTreeSet<String> {
        let hay = tokens(text);
        self.colors
            .keys()
            .filter(|l| contains_phrase(&hay, &tokens(l)))
            .cloned()
            .collect()
    }
}

/// Normalized text used as a label when no palette label matches.
pub fn text_label(text: &str) -> String {
    tokens(text).join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEncoderConfig {
    pub seed: u64,
    pub dimension: usize,
    pub noise: f64,
    /// Minimum share of labelled pixels for a colour to count as present.
    pub min_share: f64,
    pub palette: Palette,
}

impl Default for MockEncoderConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dimension: 512,
            noise: 0.0,
            min_share: 0.25,
            palette: Palette::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    cfg: MockEncoderConfig,
    exact: HashMap<[u8; 3], String>,
}

impl MockEncoder {
    pub fn new(cfg: MockEncoderConfig) -> Self {
        let exact = cfg
            .palette
            .colors
            .iter()
            .map(|(l, c)| (*c, l.clone()))
            .collect();
        Self { cfg, exact }
    }

    fn pixel_label(&self, px: [u8; 3]) -> Option<&str> {
        if px == BACKGROUND {
            return None;
        }
        match self.exact.get(&px) {
            Some(l) => Some(l.as_str()),
            None => self.cfg.palette.label_of(px),
        }
    }

    pub fn config(&self) -> &MockEncoderConfig {
        &self.cfg
    }

    /// Labels visible across a set of encoded images.
    pub fn image_labels(&self, images: &[Vec<u8>]) -> Result<BTreeSet<String>, EncoderError> {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for data in images {
            let img = decode_rgb(data).map_err(|e| EncoderError::InvalidRequest(e.to_string()))?;
            for px in img.pixels() {
                if let Some(l) = self.pixel_label(px.0) {
                    *counts.entry(l).or_default() += 1;
                }
            }
        }
        let total: u64 = counts.values().sum();
        Ok(counts
            .into_iter()
            .filter(|&(_, n)| total > 0 && n as f64 / total as f64 >= self.cfg.min_share)
            .map(|(l, _)| l.to_string())
            .collect())
    }

    /// The label set a request is interpreted as.
    pub fn request_labels(&self, req: &EncodeRequest) -> Result<BTreeSet<String>, EncoderError> {
        let images: Vec<Vec<u8>> = req.frames.iter().flatten().map(|f| f.0.clone()).collect();
        let text = req.text.as_deref().unwrap_or("");
        let mut labels = match req.kind {
            EncodeKind::Clip => self.image_labels(&images)?,
            EncodeKind::TextQuery => self.cfg.palette.labels_in_text(text),
            EncodeKind::ImageTextQuery => {
                let mut l = self.image_labels(&images)?;
                l.extend(self.cfg.palette.labels_in_text(text));
                l
            }
        };
        if labels.is_empty() {
            let fallback = text_label(text);
            labels.insert(if fallback.is_empty() { BACKGROUND_LABEL.to_string() } else { fallback });
        }
        Ok(labels)
    }
}

impl EncoderBackend for MockEncoder {
    fn encode(&self, req: &EncodeRequest) -> Result<Vec<f32>, EncoderError> {
        let labels: Vec<String> = self.request_labels(req)?.into_iter().collect();
        let nonce = serde_json::to_vec(req).unwrap_or_default();
        let nonce = Sha256::digest(&nonce);
        Ok(mock_encode(&labels, self.cfg.seed, self.cfg.dimension, self.cfg.noise, &nonce))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ImageBytes;
    use crate::frames::encode_png;
    use image::{Rgb, RgbImage};

    fn dot(a: &[f32], b: &[f32]) -> f64 {
        a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
    }

    #[test]
    fn same_labels_are_bit_identical() {
        let a = mock_encode(&["red_jacket"], 7, 512, 0.0, b"a");
        let b = mock_encode(&["red_jacket"], 7, 512, 0.0, b"b");
        assert_eq!(a, b);
        assert!((dot(&a, &b) - 1.0).abs() < 1e-6);
        let n: f64 = a.iter().map(|x| (*x as f64).powi(2)).sum();
        assert!((n - 1.0).abs() < 1e-6);
    }

    #[test]
    fn independent_labels_are_nearly_orthogonal() {
        // 1000 pairs of fresh labels at p=512: |cos| ~ N(0, 1/512), so 0.2 is
        // about 4.5 sigma; allow zero failures out of 1000.
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            let a = mock_encode(&[format!("a{i}")], 3, 512, 0.0, b"");
            let b = mock_encode(&[format!("b{i}")], 3, 512, 0.0, b"");
            worst = worst.max(dot(&a, &b).abs());
        }
        assert!(worst < 0.2, "worst |cos| = {worst}");
    }

    #[test]
    fn shared_labels_raise_similarity() {
        for seed in 0..20 {
            let ab = mock_encode(&["A", "B"], seed, 512, 0.0, b"");
            let a = mock_encode(&["A"], seed, 512, 0.0, b"");
            let c = mock_encode(&["C"], seed, 512, 0.0, b"");
            assert!(dot(&ab, &a) > dot(&c, &a));
        }
    }

    #[test]
    fn noise_is_bounded_and_keyed_by_nonce() {
        let clean = mock_encode(&["A"], 1, 512, 0.0, b"");
        let n1 = mock_encode(&["A"], 1, 512, 0.1, b"x");
        let n2 = mock_encode(&["A"], 1, 512, 0.1, b"y");
        assert_ne!(n1, n2);
        assert!(dot(&clean, &n1) > 0.98);
    }

    #[test]
    fn palette_round_trip_and_text_matching() {
        let p = Palette::from_labels(&["red_jacket", "blue_cap", "man in grey coat"]);
        let c = p.color("blue_cap").unwrap();
        assert_eq!(p.label_of(c), Some("blue_cap"));
        assert_eq!(p.label_of(BACKGROUND), None);
        let found = p.labels_in_text("Find the man in grey coat near the red jacket person");
        assert_eq!(found.into_iter().collect::<Vec<_>>(), vec!["man in grey coat", "red_jacket"]);
        // all swatches distinct and far from the background
        let all: BTreeSet<[u8; 3]> = (0..Palette::CAPACITY).map(Palette::swatch).collect();
        assert_eq!(all.len(), Palette::CAPACITY);
    }

    #[test]
    fn clip_labels_come_from_pixels() {
        let palette = Palette::from_labels(&["red_jacket", "blue_cap"]);
        let mut img = RgbImage::from_pixel(20, 20, Rgb(BACKGROUND));
        let red = palette.color("red_jacket").unwrap();
        for y in 0..20 {
            for x in 0..12 {
                img.put_pixel(x, y, Rgb(red));
            }
        }
        let enc = MockEncoder::new(MockEncoderConfig {
            palette,
            seed: 5,
            ..Default::default()
        });
        let req = EncodeRequest {
            kind: EncodeKind::Clip,
            frames: Some(vec![ImageBytes(encode_png(&img))]),
            text: None,
            crop_boxes: None,
        };
        let labels = enc.request_labels(&req).unwrap();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec!["red_jacket"]);
        let clip_vec = enc.encode(&req).unwrap();
        let text_vec = enc
            .encode(&EncodeRequest {
                kind: EncodeKind::TextQuery,
                frames: None,
                text: Some("a person in a red jacket".into()),
                crop_boxes: None,
            })
            .unwrap();
        assert!(dot(&clip_vec, &text_vec) >= 0.95);
    }

    #[test]
    fn unknown_text_is_its_own_label() {
        let enc = MockEncoder::new(MockEncoderConfig::default());
        let req = |t: &str| EncodeRequest {
            kind: EncodeKind::TextQuery,
            frames: None,
            text: Some(t.into()),
            crop_boxes: None,
        };
        let a = enc.encode(&req("Person riding a bike")).unwrap();
        let b = enc.encode(&req("person riding a bike")).unwrap();
        assert_eq!(a, b);
    }
}
