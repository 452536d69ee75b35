use std::fmt::Write as _;

use serde_json::Value;

use crate::types::Subtask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptTemplate {
    pub id: &'static str,
    pub text: &'static str,
}

const INPUT_SLOT: &str = "{{ input_dict | tojson }}";
const REFERENCE_SLOT: &str = "{{ reference }}";

pub const ACTIVITY: PromptTemplate = PromptTemplate {
    id: "qa_activity_v1",
    text: include_str!("../../assets/prompts/qa_activity_v1.txt"),
};
pub const ANOMALY: PromptTemplate = PromptTemplate {
    id: "qa_anomaly_v1",
    text: include_str!("../../assets/prompts/qa_anomaly_v1.txt"),
};
pub const COUNTING: PromptTemplate = PromptTemplate {
    id: "qa_counting_v1",
    text: include_str!("../../assets/prompts/qa_counting_v1.txt"),
};
pub const EVENT: PromptTemplate = PromptTemplate {
    id: "qa_event_v1",
    text: include_str!("../../assets/prompts/qa_event_v1.txt"),
};
pub const SEARCH: PromptTemplate = PromptTemplate {
    id: "qa_search_v1",
    text: include_str!("../../assets/prompts/qa_search_v1.txt"),
};
pub const TEMPORAL: PromptTemplate = PromptTemplate {
    id: "qa_temporal_v1",
    text: include_str!("../../assets/prompts/qa_temporal_v1.txt"),
};
pub const EXTRACT_ENTITIES: PromptTemplate = PromptTemplate {
    id: "extract_entities_v1",
    text: include_str!("../../assets/prompts/extract_entities_v1.txt"),
};
pub const GROUND_BBOX: PromptTemplate = PromptTemplate {
    id: "ground_bbox_v1",
    text: include_str!("../../assets/prompts/ground_bbox_v1.txt"),
};
pub const VERIFY_PRESENCE: PromptTemplate = PromptTemplate {
    id: "verify_presence_v1",
    text: include_str!("../../assets/prompts/verify_presence_v1.txt"),
};

pub fn template_for(subtask: Subtask) -> PromptTemplate {
    match subtask {
        Subtask::AC => ACTIVITY,
        Subtask::AN => ANOMALY,
        Subtask::CT => COUNTING,
        Subtask::EV => EVENT,
        Subtask::SE => SEARCH,
        Subtask::TM => TEMPORAL,
    }
}

/// Renders a template: the input slot gets `input` as JSON, the reference
/// slot gets `reference`.
pub fn fill(t: &PromptTemplate, input: Option<&Value>, reference: Option<&str>) -> String {
    let mut s = t.text.to_string();
    if let Some(v) = input {
        s = s.replace(INPUT_SLOT, &tojson(v));
    }
    if let Some(r) = reference {
        s = s.replace(REFERENCE_SLOT, r);
    }
    s
}

/// JSON text as produced by the Jinja `tojson` filter: sorted keys, `", "`
/// and `": "` separators, ASCII-only output, and `<`, `>`, `&`, `'`
/// escaped.
pub fn tojson(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v);
    out
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => match n.as_f64() {
            Some(f) if !(n.is_i64() || n.is_u64()) => out.push_str(&py_float(f)),
            _ => out.push_str(&n.to_string()),
        },
        Value::String(s) => write_str(out, s),
        Value::Array(a) => {
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_value(out, x);
            }
            out.push(']');
        }
        Value::Object(m) => {
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.into_iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_str(out, k);
                out.push_str(": ");
                write_value(out, &m[k]);
            }
            out.push('}');
        }
    }
}

fn write_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            '\u{08}' => out.push_str("\\b"),
            '\u{0c}' => out.push_str("\\f"),
            '<' | '>' | '&' | '\'' => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c if (c as u32) < 0x20 || (c as u32) > 0x7e => {
                let mut buf = [0u16; 2];
                for unit in c.encode_utf16(&mut buf) {
                    let _ = write!(out, "\\u{unit:04x}");
                }
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Python's `repr` for a float.
fn py_float(f: f64) -> String {
    if f.is_nan() {
        return "NaN".into();
    }
    if f.is_infinite() {
        return if f > 0.0 { "Infinity".into() } else { "-Infinity".into() };
    }
    let a = f.abs();
    if a != 0.0 && !(1e-4..1e16).contains(&a) {
        let e = format!("{f:e}");
        let (mant, exp) = e.split_once('e').expect("exponent form");
        let exp: i32 = exp.parse().expect("integer exponent");
        return format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let s = format!("{f}");
    if s.contains('.') {
        s
    } else {
        format!("{s}.0")
    }
}
