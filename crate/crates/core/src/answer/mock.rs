//! Test VLM backend driven by a truth table.
//!
//! Per request it draws `u ~ U[0,1)` from a PCG64 stream keyed by
//! `SHA-256(seed ‖ sample_id)`. If `u < fidelity` it replies with the true
//! option and intervals; otherwise with a uniformly chosen wrong option and
//! the true intervals shifted by a uniform 5–30 s in a random direction (a
//! random 5 s span when the truth has none).

use std::collections::HashMap;
use std::time::Duration;

use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg64;
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{AnswerError, VlmBackend, VlmReply, VlmRequest};
use crate::interval::{IntervalSet, TimeInterval};
use crate::types::QaSample;

#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub answer_index: usize,
    pub option_count: usize,
    pub intervals: IntervalSet,
}

#[derive(Debug, Clone)]
pub struct MockVlm {
    truth: HashMap<String, Truth>,
    fidelity: f64,
    seed: u64,
}

const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

fn render(choice: usize, intervals: &IntervalSet) -> String {
    let ivs: Vec<_> = intervals
        .intervals()
        .iter()
        .map(|i| json!({"start": i.start(), "end": i.end()}))
        .collect();
    json!({
        "summary": "mock summary",
        "answer": LETTERS.get(choice).copied().unwrap_or("A"),
        "intervals": ivs,
    })
    .to_string()
}

impl MockVlm {
    pub fn new(truth: HashMap<String, Truth>, fidelity: f64, seed: u64) -> Self {
        Self {
            truth,
            fidelity: fidelity.clamp(0.0, 1.0),
            seed,
        }
    }

    pub fn from_samples(samples: &[QaSample], fidelity: f64, seed: u64) -> Self {
        let truth = samples
            .iter()
            .map(|s| {
                (
                    s.sample_id.clone(),
                    Truth {
                        answer_index: s.answer_index,
                        option_count: s.options.len(),
                        intervals: s.ground_truth.clone(),
                    },
                )
            })
            .collect();
        Self::new(truth, fidelity, seed)
    }

    /// The raw reply for a sample id (`None` when unknown).
    pub fn reply_for(&self, sample_id: &str) -> Option<String> {
        let t = self.truth.get(sample_id)?;
        let digest: [u8; 32] = Sha256::new()
            .chain_update(self.seed.to_le_bytes())
            .chain_update(sample_id.as_bytes())
            .finalize()
            .into();
        let mut rng = Pcg64::from_seed(digest);
        let u: f64 = rng.random();
        if u < self.fidelity || t.option_count < 2 {
            return Some(render(t.answer_index, &t.intervals));
        }
        let mut wrong = rng.random_range(0..t.option_count - 1);
        if wrong >= t.answer_index {
            wrong += 1;
        }
        let intervals = if t.intervals.is_empty() {
            let s = rng.random_range(0.0..60.0);
            IntervalSet::single(TimeInterval::of(s, s + 5.0))
        } else {
            let d: f64 = rng.random_range(5.0..30.0);
            let d = if rng.random::<bool>() { d } else { -d };
            t.intervals
                .intervals()
                .iter()
                .map(|i| TimeInterval::of((i.start() + d).max(0.0), (i.end() + d).max(0.0)))
                .collect()
        };
        Some(render(wrong, &intervals))
    }
}

impl VlmBackend for MockVlm {
    fn generate(&self, request: &VlmRequest) -> Result<VlmReply, AnswerError> {
        let text = request
            .sample_id
            .as_deref()
            .and_then(|id| self.reply_for(id))
            .unwrap_or_else(|| "I cannot tell from these frames.".to_string());
        Ok(VlmReply {
            text,
            ttft: Some(Duration::ZERO),
        })
    }
}
