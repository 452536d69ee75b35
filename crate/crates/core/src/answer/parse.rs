use std::sync::LazyLock;

use regex::Regex;
use serde_json::Value;

use crate::interval::{canonicalize, IntervalSet, TimeInterval};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedAnswer {
    pub chosen_index: Option<usize>,
    pub intervals: IntervalSet,
    pub summary: Option<String>,
    /// True when a JSON answer object was found.
    pub structured: bool,
}

static ANSWER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i:\banswer\b)\W{0,3}(?:(?i:is)\s+)?(?:(?i:option)\s+)?\(?([A-D])\b").expect("valid regex")
});

static INTERVAL_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(\d+(?:\.\d+)?)\s*(?:seconds|secs|sec|s)?\s*(?:–|—|-|to)\s*(\d+(?:\.\d+)?)").expect("valid regex")
});

/// Byte ranges of balanced `{...}` spans, in order of their opening brace.
fn balanced_objects(raw: &str) -> impl Iterator<Item = &str> {
    let bytes = raw.as_bytes();
    (0..bytes.len()).filter(|&i| bytes[i] == b'{').filter_map(move |start| {
        let mut depth = 0usize;
        let mut in_str = false;
        let mut escaped = false;
        for (j, &b) in bytes.iter().enumerate().skip(start) {
            if in_str {
                match b {
                    _ if escaped => escaped = false,
                    b'\\' => escaped = true,
                    b'"' => in_str = false,
                    _ => {}
                }
                continue;
            }
            match b {
                b'"' => in_str = true,
                b'{' => depth += 1,
                b'}' => {
                    depth -= 1;
                    if depth == 0 {
                        return Some(&raw[start..=j]);
                    }
                }
                _ => {}
            }
        }
        None
    })
}

fn letter_index(s: &str) -> Option<usize> {
    let t = s.trim().trim_start_matches(['(', '[']);
    let mut chars = t.chars();
    let c = chars.next()?.to_ascii_uppercase();
    let rest = chars.next();
    if !('A'..='D').contains(&c) || rest.is_some_and(|r| r.is_alphanumeric()) {
        return None;
    }
    Some(c as usize - 'A' as usize)
}

fn choice(v: &Value, options: Option<&[String]>) -> Option<usize> {
    match v {
        Value::Number(n) => n.as_u64().map(|n| n as usize),
        Value::String(s) => {
            if let Some(opts) = options {
                if let Some(i) = opts.iter().position(|o| o.trim().eq_ignore_ascii_case(s.trim())) {
                    return Some(i);
                }
            }
            if let Some(i) = letter_index(s) {
                return Some(i);
            }
            if let Ok(n) = s.trim().parse::<usize>() {
                return Some(n);
            }
            match s.trim().to_ascii_lowercase().as_str() {
                "yes" if options.is_none() => Some(0),
                "no" if options.is_none() => Some(1),
                _ => None,
            }
        }
        _ => None,
    }
}

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().trim_end_matches('s').trim().parse().ok(),
        _ => None,
    }
}

fn interval(v: &Value) -> Option<TimeInterval> {
    let (s, e) = match v {
        Value::Object(m) => (number(m.get("start")?)?, number(m.get("end")?)?),
        Value::Array(a) if a.len() == 2 => (number(&a[0])?, number(&a[1])?),
        _ => return None,
    };
    TimeInterval::new(s, e).ok()
}

fn from_json(obj: &serde_json::Map<String, Value>, options: Option<&[String]>) -> ParsedAnswer {
    let intervals = match obj.get("intervals") {
        Some(Value::Array(items)) => canonicalize(items.iter().filter_map(interval).collect()),
        _ => IntervalSet::empty(),
    };
    ParsedAnswer {
        chosen_index: obj.get("answer").and_then(|v| choice(v, options)),
        intervals,
        summary: obj.get("summary").and_then(Value::as_str).map(str::to_string),
        structured: true,
    }
}

/// Extracts the chosen option and grounded intervals from a VLM reply.
/// Never fails: unusable input yields an empty answer.
pub fn parse_response(raw: &str) -> ParsedAnswer {
    parse_response_with_options(raw, None)
}

/// As [`parse_response`], additionally matching a textual answer against
/// the option strings when they are known.
pub fn parse_response_with_options(raw: &str, options: Option<&[String]>) -> ParsedAnswer {
    for candidate in balanced_objects(raw) {
        if let Ok(Value::Object(obj)) = serde_json::from_str::<Value>(candidate) {
            if obj.contains_key("answer") || obj.contains_key("intervals") {
                return from_json(&obj, options);
            }
        }
    }
    let chosen_index = ANSWER_RE
        .captures(raw)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().as_bytes()[0] as usize - b'A' as usize);
    let intervals = INTERVAL_RE
        .captures_iter(raw)
        .filter_map(|c| {
            let s: f64 = c[1].parse().ok()?;
            let e: f64 = c[2].parse().ok()?;
            TimeInterval::new(s, e).ok()
        })
        .collect();
    ParsedAnswer {
        chosen_index,
        intervals: canonicalize(intervals),
        summary: None,
        structured: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(v: &[(f64, f64)]) -> IntervalSet {
        canonicalize(v.iter().map(|&(s, e)| TimeInterval::of(s, e)).collect())
    }

    #[test]
    fn schema_path() {
        let p = parse_response(r#"{"answer":"B","intervals":[{"start":3,"end":9}]}"#);
        assert_eq!((p.chosen_index, p.intervals), (Some(1), set(&[(3.0, 9.0)])));
        assert!(p.structured);
    }

    #[test]
    fn empty_input() {
        assert_eq!(parse_response(""), ParsedAnswer::default());
    }

    /// Hand-labelled replies and the parse each should produce.
    #[test]
    fn fixture_corpus() {
        type Case<'a> = (&'a str, Option<usize>, &'a [(f64, f64)]);
        let cases: &[Case] = &[
            ("The event occurs from 10s to 20s. Answer: C", Some(2), &[(10.0, 20.0)]),
            ("It happens from 12.0s to 15.5s.", None, &[(12.0, 15.5)]),
            ("The answer is B. Seen at 3.5-7 seconds and again 30 to 31.2 sec.", Some(1), &[(3.5, 7.0), (30.0, 31.2)]),
            ("answer: (A)", Some(0), &[]),
            ("The man appears at 4 sec – 9 sec, overlapping 8-12.", None, &[(4.0, 12.0)]),
            ("Sure! ```json\n{\"summary\": \"a man {runs}\", \"answer\": \"D\", \"intervals\": [[1, 2]]}\n``` Answer: A", Some(3), &[(1.0, 2.0)]),
            ("{\"note\": 1} then {\"answer\": 2, \"intervals\": []}", Some(2), &[]),
            ("Answer: a person walks by", None, &[]),
            ("{\"answer\": \"C\", \"intervals\": [{\"start\": 9, \"end\": 3}, {\"start\": 1, \"end\": 2}]}", Some(2), &[(1.0, 2.0)]),
            ("{broken json \"answer\": B", Some(1), &[]),
        ];
        for (raw, choice, ivs) in cases {
            let p = parse_response(raw);
            assert_eq!(p.chosen_index, *choice, "choice for {raw:?}");
            assert_eq!(p.intervals, set(ivs), "intervals for {raw:?}");
        }
    }

    #[test]
    fn option_text_matches() {
        let opts = vec!["Yes".to_string(), "No".to_string()];
        let p = parse_response_with_options(r#"{"answer": "no", "intervals": []}"#, Some(&opts));
        assert_eq!(p.chosen_index, Some(1));
        let opts = vec!["walks".to_string(), "runs".to_string(), "sits".to_string()];
        let p = parse_response_with_options(r#"{"answer": "Sits"}"#, Some(&opts));
        assert_eq!(p.chosen_index, Some(2));
    }

    proptest! {
        #[test]
        fn never_panics_on_garbage(s in ".{0,200}") {
            let p = parse_response(&s);
            prop_assert!(p.intervals.intervals().windows(2).all(|w| w[0].end() < w[1].start()));
        }
    }
}
