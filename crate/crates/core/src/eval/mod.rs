//! Benchmark protocol: per-sample scoring, Top-K@IoU retrieval metric,
//! benchmark runs and reports.

mod report;
mod run;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interval::{interval_set_iou, IntervalSet, TimeInterval};
use crate::types::{Prediction, QaSample, Subtask};
use crate::vecindex::SearchHit;

pub use report::{emit_report, EvalReport, LatencySummary, ReportFormat, RetrievalMatrix, SampleResult, SkipCounts, SubtaskRow, Summary, REPORT_SCHEMA};
pub use run::{load_predictions, load_samples, load_samples_file, run_benchmark, LoadIssue, PredictionSource, QaSystem, StageLatency, SystemError, SystemOutput};

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("prediction `{prediction}` does not belong to sample `{sample}`")]
    SampleMismatch { sample: String, prediction: String },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub ks: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subtask_filter: Option<Vec<Subtask>>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: vec![0.0, 0.1, 0.3],
            ks: vec![1, 3, 5, 10],
            subtask_filter: None,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.thresholds.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(EvalError::InvalidConfig("thresholds must lie in [0, 1)".into()));
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidConfig("thresholds must be strictly ascending".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(EvalError::InvalidConfig("ks must be positive and strictly ascending".into()));
        }
        Ok(())
    }

    pub fn includes(&self, subtask: Subtask) -> bool {
        self.subtask_filter.as_ref().is_none_or(|f| f.contains(&subtask))
    }
}

/// Scores one prediction: (answer correct, temporal IoU).
///
/// An unparsed prediction (no choice, no intervals) scores (false, 0). For a
/// negative search sample, predicting presence (choosing any option other
/// than the absent one, or emitting any interval) scores IoU 0 and
/// predicting absence scores IoU 1.
pub fn score_sample(sample: &QaSample, pred: &Prediction) -> Result<(bool, f64), EvalError> {
    if sample.sample_id != pred.sample_id {
        return Err(EvalError::SampleMismatch {
            sample: sample.sample_id.clone(),
            prediction: pred.sample_id.clone(),
        });
    }
    if pred.chosen_index.is_none() && pred.predicted_intervals.is_empty() {
        return Ok((false, 0.0));
    }
    let correct = pred.chosen_index == Some(sample.answer_index);
    let tiou = if sample.is_negative {
        let absent = sample.absent_index();
        let predicts_presence =
            !pred.predicted_intervals.is_empty() || pred.chosen_index.is_some_and(|c| Some(c) != absent);
        if predicts_presence {
            0.0
        } else {
            1.0
        }
    } else {
        interval_set_iou(&pred.predicted_intervals, &sample.ground_truth)
    };
    Ok((correct, tiou))
}

/// Whether any of the first `k` spans matches `gt`: positive-measure
/// overlap when `tau == 0`, IoU strictly above `tau` otherwise.
pub fn topk_at_iou_spans(spans: &[TimeInterval], gt: &IntervalSet, k: usize, tau: f64) -> bool {
    spans.iter().take(k).any(|s| {
        let s = IntervalSet::single(*s);
        if tau <= 0.0 {
            s.overlaps_positively(gt)
        } else {
            interval_set_iou(&s, gt) > tau
        }
    })
}

pub fn topk_at_iou(hits: &[SearchHit], gt: &IntervalSet, k: usize, tau: f64) -> bool {
    let spans: Vec<TimeInterval> = hits.iter().take(k).map(|h| h.clip.span).collect();
    topk_at_iou_spans(&spans, gt, k, tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Query, SEARCH_OPTIONS};
    use proptest::prelude::*;

    fn iv(s: f64, e: f64) -> TimeInterval {
        TimeInterval::of(s, e)
    }

    fn sample(gt: &[(f64, f64)], negative: bool) -> QaSample {
        QaSample {
            sample_id: "s".into(),
            video_id: "v".into(),
            subtask: Subtask::SE,
            query: Query::text("Is the man in red here?").unwrap(),
            options: SEARCH_OPTIONS.iter().map(|s| s.to_string()).collect(),
            answer_index: if negative { 1 } else { 0 },
            ground_truth: gt.iter().map(|&(s, e)| iv(s, e)).collect(),
            is_negative: negative,
        }
    }

    fn pred(choice: Option<usize>, ivs: &[(f64, f64)]) -> Prediction {
        Prediction {
            sample_id: "s".into(),
            chosen_index: choice,
            predicted_intervals: ivs.iter().map(|&(s, e)| iv(s, e)).collect(),
            raw_response: String::new(),
        }
    }

    #[test]
    fn conventions() {
        assert_eq!(score_sample(&sample(&[(10.0, 20.0)], false), &pred(Some(0), &[(10.0, 20.0)])), Ok((true, 1.0)));
        assert_eq!(score_sample(&sample(&[(10.0, 20.0)], false), &pred(Some(0), &[(30.0, 40.0)])), Ok((true, 0.0)));
        assert_eq!(score_sample(&sample(&[], true), &pred(Some(1), &[])), Ok((true, 1.0)));
        assert_eq!(score_sample(&sample(&[], true), &pred(Some(0), &[(5.0, 9.0)])), Ok((false, 0.0)));
        // correct absent choice with spurious intervals still predicts presence
        assert_eq!(score_sample(&sample(&[], true), &pred(Some(1), &[(5.0, 9.0)])), Ok((true, 0.0)));
        assert_eq!(score_sample(&sample(&[], true), &pred(None, &[])), Ok((false, 0.0)));
        let (_, t) = score_sample(&sample(&[(5.0, 15.0)], false), &pred(Some(0), &[(0.0, 10.0)])).unwrap();
        assert!((t - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn mismatch_is_an_error() {
        let mut p = pred(Some(0), &[]);
        p.sample_id = "other".into();
        assert!(matches!(score_sample(&sample(&[], true), &p), Err(EvalError::SampleMismatch { .. })));
    }

    #[test]
    fn topk_examples() {
        let gt = IntervalSet::single(iv(4.0, 10.0));
        assert!(topk_at_iou_spans(&[iv(0.0, 5.0)], &gt, 1, 0.0));
        assert!(!topk_at_iou_spans(&[iv(0.0, 5.0)], &gt, 1, 0.3));
        let spans = [iv(50.0, 60.0), iv(4.0, 10.0)];
        assert!(!topk_at_iou_spans(&spans, &gt, 1, 0.0));
        assert!(topk_at_iou_spans(&spans, &gt, 2, 0.0));
        // touching is not overlap
        assert!(!topk_at_iou_spans(&[iv(0.0, 4.0)], &gt, 1, 0.0));
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        let bad = EvalConfig {
            thresholds: vec![0.3, 0.1],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = EvalConfig {
            thresholds: vec![1.0],
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    fn arb_iv() -> impl Strategy<Value = TimeInterval> {
        (0u32..100, 0u32..30).prop_map(|(s, l)| iv(s as f64, (s + l) as f64))
    }

    proptest! {
        #[test]
        fn own_truth_scores_perfectly(gt in prop::collection::vec(arb_iv(), 1..4), ans in 0usize..4) {
            let gt: IntervalSet = gt.into_iter().collect();
            let s = QaSample {
                sample_id: "s".into(), video_id: "v".into(), subtask: Subtask::CT,
                query: Query::text("how many?").unwrap(),
                options: vec!["1".into(), "2".into(), "3".into(), "4".into()],
                answer_index: ans, ground_truth: gt.clone(), is_negative: false,
            };
            let p = Prediction { sample_id: "s".into(), chosen_index: Some(ans), predicted_intervals: gt, raw_response: String::new() };
            let (c, t) = score_sample(&s, &p).unwrap();
            prop_assert!(c);
            prop_assert_eq!(t, 1.0);
        }

        #[test]
        fn tiou_in_unit_range(p in prop::collection::vec(arb_iv(), 0..4), g in prop::collection::vec(arb_iv(), 0..4), neg in any::<bool>(), c in prop::option::of(0usize..2)) {
            let mut s = sample(&[], neg);
            if !neg { s.ground_truth = g.into_iter().collect(); }
            let pr = Prediction { sample_id: "s".into(), chosen_index: c, predicted_intervals: p.into_iter().collect(), raw_response: String::new() };
            let (_, t) = score_sample(&s, &pr).unwrap();
            prop_assert!((0.0..=1.0).contains(&t));
        }

        #[test]
        fn topk_monotone(spans in prop::collection::vec(arb_iv(), 0..12), gt in prop::collection::vec(arb_iv(), 1..3)) {
            let gt: IntervalSet = gt.into_iter().collect();
            let taus = [0.0, 0.1, 0.3, 0.5];
            let ks = [1, 3, 5, 10];
            for (ti, &t) in taus.iter().enumerate() {
                for (ki, &k) in ks.iter().enumerate() {
                    let v = topk_at_iou_spans(&spans, &gt, k, t);
                    if ki > 0 { prop_assert!(v >= topk_at_iou_spans(&spans, &gt, ks[ki - 1], t)); }
                    if ti > 0 { prop_assert!(v <= topk_at_iou_spans(&spans, &gt, k, taus[ti - 1])); }
                }
            }
        }
    }
}
