use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::run::{pct, StageLatency};
use super::EvalConfig;
use crate::types::{Modality, Subtask};

pub const REPORT_SCHEMA: &str = "foreseaqa-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Summary {
    pub count: usize,
    pub correct: usize,
    /// Percent.
    pub accuracy: f64,
    /// Mean temporal IoU, percent.
    pub mean_tiou: f64,
}

impl Summary {
    fn of<'a>(results: impl Iterator<Item = &'a SampleResult>) -> Self {
        let (mut count, mut correct, mut tiou) = (0usize, 0usize, 0.0f64);
        for r in results {
            count += 1;
            correct += r.correct as usize;
            tiou += r.tiou;
        }
        Summary {
            count,
            correct,
            accuracy: pct(correct as f64, count),
            mean_tiou: pct(tiou, count),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtaskRow {
    pub subtask: Subtask,
    pub all: Summary,
    pub text_only: Summary,
    pub image_text: Summary,
}

/// Top-K@τ in percent; `values[i][j]` is threshold `i`, cutoff `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalMatrix {
    pub thresholds: Vec<f64>,
    pub ks: Vec<usize>,
    pub samples: usize,
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySummary {
    pub samples: usize,
    pub retrieval_ms: f64,
    pub generation_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ttft_ms: Option<f64>,
    pub total_ms: f64,
    pub frames_sent: f64,
}

impl LatencySummary {
    pub(crate) fn from_samples(v: &[(StageLatency, usize)]) -> Self {
        let n = v.len() as f64;
        let mean = |f: &dyn Fn(&StageLatency) -> f64| v.iter().map(|(l, _)| f(l)).sum::<f64>() / n;
        let ttfts: Vec<f64> = v.iter().filter_map(|(l, _)| l.ttft_ms).collect();
        LatencySummary {
            samples: v.len(),
            retrieval_ms: mean(&|l| l.retrieval_ms),
            generation_ms: mean(&|l| l.generation_ms),
            ttft_ms: (!ttfts.is_empty()).then(|| ttfts.iter().sum::<f64>() / ttfts.len() as f64),
            total_ms: mean(&|l| l.total_ms),
            frames_sent: v.iter().map(|&(_, f)| f as f64).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SkipCounts {
    pub malformed: usize,
    pub missing_video: usize,
    /// Excluded by the subtask filter.
    pub filtered: usize,
    /// Scored as unanswered after a system failure.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleResult {
    pub sample_id: String,
    pub video_id: String,
    pub subtask: Subtask,
    pub modality: Modality,
    pub is_negative: bool,
    pub answer_index: usize,
    pub chosen_index: Option<usize>,
    pub correct: bool,
    pub tiou: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_sent: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema: String,
    pub config: EvalConfig,
    pub overall: Summary,
    pub text_only: Summary,
    pub image_text: Summary,
    pub subtasks: Vec<SubtaskRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retrieval: Option<RetrievalMatrix>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latency: Option<LatencySummary>,
    pub skipped: SkipCounts,
    pub samples: Vec<SampleResult>,
}

impl EvalReport {
    pub(crate) fn aggregate(
        config: EvalConfig,
        samples: Vec<SampleResult>,
        retrieval: Option<RetrievalMatrix>,
        latency: Option<LatencySummary>,
        skipped: SkipCounts,
    ) -> Self {
        let by = |m: Modality| Summary::of(samples.iter().filter(|r| r.modality == m));
        let subtasks = Subtask::ALL
            .iter()
            .filter(|st| samples.iter().any(|r| r.subtask == **st))
            .map(|&st| {
                let of = |m: Option<Modality>| {
                    Summary::of(samples.iter().filter(|r| r.subtask == st && m.is_none_or(|m| r.modality == m)))
                };
                SubtaskRow {
                    subtask: st,
                    all: of(None),
                    text_only: of(Some(Modality::TextOnly)),
                    image_text: of(Some(Modality::ImageText)),
                }
            })
            .collect();
        EvalReport {
            schema: REPORT_SCHEMA.to_string(),
            config,
            overall: Summary::of(samples.iter()),
            text_only: by(Modality::TextOnly),
            image_text: by(Modality::ImageText),
            subtasks,
            retrieval,
            latency,
            skipped,
            samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Markdown,
    Csv,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "json" => Ok(Self::Json),
            "markdown" | "md" => Ok(Self::Markdown),
            "csv" => Ok(Self::Csv),
            _ => Err(format!("unknown report format `{s}`")),
        }
    }
}

fn cell(s: &Summary, f: impl Fn(&Summary) -> f64) -> String {
    if s.count == 0 {
        "-".into()
    } else {
        format!("{:.1}", f(s))
    }
}

fn markdown(r: &EvalReport) -> String {
    let mut out = String::new();
    out.push_str("| Subtask | Text Acc | Text IoU | Multimodal Acc | Multimodal IoU | Acc | IoU | N |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    let row = |out: &mut String, name: &str, all: &Summary, t: &Summary, m: &Summary| {
        let _ = writeln!(
            out,
            "| {name} | {} | {} | {} | {} | {} | {} | {} |",
            cell(t, |s| s.accuracy),
            cell(t, |s| s.mean_tiou),
            cell(m, |s| s.accuracy),
            cell(m, |s| s.mean_tiou),
            cell(all, |s| s.accuracy),
            cell(all, |s| s.mean_tiou),
            all.count
        );
    };
    let empty = Summary::default();
    for st in Subtask::ALL {
        match r.subtasks.iter().find(|x| x.subtask == st) {
            Some(x) => row(&mut out, st.code(), &x.all, &x.text_only, &x.image_text),
            None => row(&mut out, st.code(), &empty, &empty, &empty),
        }
    }
    row(&mut out, "Avg", &r.overall, &r.text_only, &r.image_text);
    if let Some(m) = &r.retrieval {
        out.push_str("\n| τ |");
        for k in &m.ks {
            let _ = write!(out, " Top-{k} |");
        }
        out.push_str("\n|---|");
        out.push_str(&"---|".repeat(m.ks.len()));
        out.push('\n');
        for (t, vals) in m.thresholds.iter().zip(&m.values) {
            let _ = write!(out, "| {t} |");
            for v in vals {
                let _ = write!(out, " {v:.1} |");
            }
            out.push('\n');
        }
    }
    if let Some(l) = &r.latency {
        let _ = write!(
            out,
            "\n| Retrieval (ms) | Generation (ms) | Total (ms) |\n|---|---|---|\n| {:.1} | {:.1} | {:.1} |\n",
            l.retrieval_ms, l.generation_ms, l.total_ms
        );
    }
    out
}

pub const CSV_HEADER: &str = "scope,subtask,modality,count,correct,accuracy,mean_tiou";

fn csv(r: &EvalReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    let line = |out: &mut String, scope: &str, st: &str, s: &Summary, m: &str| {
        let _ = writeln!(out, "{scope},{st},{m},{},{},{:.4},{:.4}", s.count, s.correct, s.accuracy, s.mean_tiou);
    };
    for x in &r.subtasks {
        line(&mut out, "subtask", x.subtask.code(), &x.all, "all");
        line(&mut out, "subtask", x.subtask.code(), &x.text_only, "text_only");
        line(&mut out, "subtask", x.subtask.code(), &x.image_text, "image_text");
    }
    line(&mut out, "overall", "", &r.overall, "all");
    line(&mut out, "overall", "", &r.text_only, "text_only");
    line(&mut out, "overall", "", &r.image_text, "image_text");
    if let Some(m) = &r.retrieval {
        for (t, vals) in m.thresholds.iter().zip(&m.values) {
            for (k, v) in m.ks.iter().zip(vals) {
                let _ = writeln!(out, "retrieval,,top{k}@{t},{},,{v:.4},", m.samples);
            }
        }
    }
    out
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Json => {
            let mut v = serde_json::to_vec_pretty(report).expect("report serializes");
            v.push(b'\n');
            v
        }
        ReportFormat::Markdown => markdown(report).into_bytes(),
        ReportFormat::Csv => csv(report).into_bytes(),
    }
}
