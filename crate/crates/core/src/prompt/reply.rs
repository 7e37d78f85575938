//! Parsers for chat replies.
//!
//! Structured replies go through one repair ladder, in order: strip code
//! fences, locate the outermost brackets, read the payload with the lenient
//! literal reader (which normalises single quotes and bare keys), and, for box
//! candidates only, fall back to per-field regex extraction of each record.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use super::literal;
use crate::model::{BBox, BoxCandidate, ModelError, SceneSpec, VisualFeature};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("no features parsed")]
    NoFeatures,
    #[error("no prompts parsed")]
    NoPrompts,
    #[error("no structured payload found")]
    NoPayload,
    #[error("unparseable reply: {message} at byte {offset}")]
    Syntax { offset: usize, message: String },
    #[error("unexpected reply shape: {0}")]
    Shape(String),
    #[error(
        "ragged scene arrays: {backgrounds} backgrounds, {objects} object lists, \
         {descriptions} descriptions (first incomplete scene index {scene_index})"
    )]
    Ragged {
        backgrounds: usize,
        objects: usize,
        descriptions: usize,
        scene_index: usize,
    },
    #[error("no valid scenes ({dropped} rejected)")]
    NoScenes { dropped: usize },
    #[error("no candidates parsed ({skipped} malformed records)")]
    NoCandidates { skipped: usize },
}

/// Removes a fenced code block wrapper if present. Returns the byte offset of
/// the kept slice in `text` alongside it.
fn strip_code_fences(text: &str) -> (usize, &str) {
    let Some(open) = text.find("```") else {
        return (0, text);
    };
    let body_start = match text[open..].find('\n') {
        Some(nl) => open + nl + 1,
        None => return (0, text),
    };
    let body_end = text[body_start..]
        .find("```")
        .map(|i| body_start + i)
        .unwrap_or(text.len());
    (body_start, &text[body_start..body_end])
}

/// First opening bracket to the last matching closing bracket.
fn outermost(text: &str) -> Option<(usize, &str)> {
    let start = text.find(['{', '['])?;
    let close = if text.as_bytes()[start] == b'{' { '}' } else { ']' };
    let end = text.rfind(close)?;
    (end > start).then(|| (start, &text[start..=end]))
}

/// Splits on line breaks and semicolons, dropping list markers.
pub fn parse_visual_features(reply: &str) -> Result<VisualFeature, ParseError> {
    let mut phrases = Vec::new();
    for line in reply.lines() {
        let line = strip_list_marker(line.trim());
        for part in line.split(';') {
            let part = part.trim();
            if !part.is_empty() {
                phrases.push(part.to_string());
            }
        }
    }
    VisualFeature::new(phrases).map_err(|_| ParseError::NoFeatures)
}

fn strip_list_marker(line: &str) -> &str {
    for marker in ["- ", "* ", "\u{2022} "] {
        if let Some(rest) = line.strip_prefix(marker) {
            return rest.trim_start();
        }
    }
    if line == "-" || line == "*" {
        return "";
    }
    numbered_item(line).unwrap_or(line)
}

fn numbered_item(line: &str) -> Option<&str> {
    let digits = line.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits == 0 {
        return None;
    }
    let rest = &line[digits..];
    let rest = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'))?;
    rest.starts_with(char::is_whitespace).then(|| rest.trim_start())
}

/// Text-to-image prompts from an AIGC creator reply: numbered items when the
/// reply is a list, otherwise everything after an introductory
/// `"Sure, here are ...:"` sentence.
pub fn parse_generation_prompts(reply: &str) -> Result<Vec<String>, ParseError> {
    let (_, body) = strip_code_fences(reply);
    let mut items: Vec<String> = Vec::new();
    let mut numbered = false;
    for line in body.lines() {
        let t = line.trim();
        if let Some(rest) = numbered_item(t) {
            numbered = true;
            items.push(rest.to_string());
        } else if numbered && !t.is_empty() {
            let last = items.last_mut().expect("numbered implies an item");
            last.push(' ');
            last.push_str(t);
        }
    }
    if !numbered {
        let t = body.trim();
        let lower = t.to_ascii_lowercase();
        let intro = lower.starts_with("sure") || lower.starts_with("here");
        let text = match t.find(':') {
            Some(i) if intro => &t[i + 1..],
            _ => t,
        };
        items.push(text.trim().to_string());
    }
    let items: Vec<String> = items
        .into_iter()
        .map(|s| s.trim().trim_matches('"').trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if items.is_empty() {
        return Err(ParseError::NoPrompts);
    }
    Ok(items)
}

/// Parses the `{'background':[], 'objects':[], 'description':[]}` reply into
/// scenes. A list of per-scene maps is accepted as well. Entries that violate
/// scene invariants are dropped; an error is returned only if none survive.
pub fn parse_scene_specs(reply: &str) -> Result<Vec<SceneSpec>, ParseError> {
    let (base, body) = strip_code_fences(reply);
    let (start, payload) = outermost(body).ok_or(ParseError::NoPayload)?;
    let value = literal::parse(payload).map_err(|e| ParseError::Syntax {
        offset: base + start + e.offset,
        message: e.message,
    })?;

    let rows: Vec<Result<SceneSpec, ModelError>> = match &value {
        Value::Object(map) => {
            let backgrounds = field(map, "background").map(strings).unwrap_or_default();
            let descriptions = field(map, "description").map(strings).unwrap_or_default();
            let objects = field(map, "objects").map(object_lists).unwrap_or_default();
            let (nb, no, nd) = (backgrounds.len(), objects.len(), descriptions.len());
            if nb != no || nb != nd {
                return Err(ParseError::Ragged {
                    backgrounds: nb,
                    objects: no,
                    descriptions: nd,
                    scene_index: nb.min(no).min(nd),
                });
            }
            backgrounds
                .into_iter()
                .zip(objects)
                .zip(descriptions)
                .map(|((b, o), d)| SceneSpec::new(b, o, d))
                .collect()
        }
        Value::Array(items) => items
            .iter()
            .map(|item| match item {
                Value::Object(map) => {
                    let b = field(map, "background").map(strings).unwrap_or_default();
                    let o = field(map, "objects").map(strings).unwrap_or_default();
                    let d = field(map, "description").map(strings).unwrap_or_default();
                    SceneSpec::new(b.join(" "), o, d.join(" "))
                }
                _ => Err(ModelError::NoSceneObjects),
            })
            .collect(),
        _ => return Err(ParseError::Shape("expected a map or list of scenes".into())),
    };

    let total = rows.len();
    let scenes: Vec<SceneSpec> = rows.into_iter().filter_map(Result::ok).collect();
    if scenes.is_empty() {
        return Err(ParseError::NoScenes {
            dropped: total,
        });
    }
    Ok(scenes)
}

fn field<'a>(map: &'a serde_json::Map<String, Value>, key: &str) -> Option<&'a Value> {
    map.iter()
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(key) || k.trim().eq_ignore_ascii_case(&format!("{key}s")))
        .map(|(_, v)| v)
}

fn scalar_text(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn strings(v: &Value) -> Vec<String> {
    match v {
        Value::Array(items) => items.iter().filter_map(scalar_text).collect(),
        other => scalar_text(other).into_iter().collect(),
    }
}

/// `[[...], [...]]`, a flat list for a single scene, or comma strings.
fn object_lists(v: &Value) -> Vec<Vec<String>> {
    match v {
        Value::Array(items) if items.iter().any(Value::is_array) => items
            .iter()
            .map(|i| match i {
                Value::Array(_) => strings(i),
                other => scalar_text(other)
                    .map(|s| s.split(',').map(|p| p.trim().to_string()).collect())
                    .unwrap_or_default(),
            })
            .collect(),
        Value::Array(items) if items.iter().all(|i| matches!(i, Value::String(s) if s.contains(','))) && !items.is_empty() => items
            .iter()
            .filter_map(scalar_text)
            .map(|s| s.split(',').map(|p| p.trim().to_string()).collect())
            .collect(),
        Value::Array(_) => vec![strings(v)],
        other => scalar_text(other)
            .map(|s| vec![s.split(',').map(|p| p.trim().to_string()).collect()])
            .unwrap_or_default(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateParse {
    pub candidates: Vec<BoxCandidate>,
    /// Records that looked like candidates but could not be read.
    pub skipped: usize,
}

/// Extracts every `{"label":, "box":, "relationship":}` record in the reply.
pub fn parse_box_candidates(reply: &str) -> Result<CandidateParse, ParseError> {
    let (_, body) = strip_code_fences(reply);
    let mut candidates = Vec::new();
    let mut skipped = 0;
    for segment in record_segments(body) {
        match segment {
            Segment::Complete(text) => match read_candidate(text) {
                Some(c) => candidates.push(c),
                None => skipped += 1,
            },
            Segment::Truncated(text) => {
                if looks_like_record(text) {
                    skipped += 1;
                }
            }
        }
    }
    if candidates.is_empty() {
        return Err(ParseError::NoCandidates { skipped });
    }
    Ok(CandidateParse {
        candidates,
        skipped,
    })
}

enum Segment<'a> {
    Complete(&'a str),
    Truncated(&'a str),
}

/// Innermost `{...}` groups. An opening brace that meets another opening
/// brace or the end of input first yields a truncated fragment.
fn record_segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut open: Option<usize> = None;
    for (i, c) in text.char_indices() {
        match c {
            '{' => {
                if let Some(start) = open {
                    out.push(Segment::Truncated(&text[start..i]));
                }
                open = Some(i);
            }
            '}' => {
                if let Some(start) = open.take() {
                    out.push(Segment::Complete(&text[start..=i]));
                }
            }
            _ => {}
        }
    }
    if let Some(start) = open {
        out.push(Segment::Truncated(&text[start..]));
    }
    out
}

fn looks_like_record(text: &str) -> bool {
    let lower = text.to_ascii_lowercase();
    lower.contains("label") || lower.contains("box")
}

fn read_candidate(text: &str) -> Option<BoxCandidate> {
    literal::parse(text)
        .ok()
        .and_then(|v| candidate_from_value(&v))
        .or_else(|| candidate_from_regex(text))
}

fn candidate_from_value(v: &Value) -> Option<BoxCandidate> {
    let map = v.as_object()?;
    let label = map.iter().find(|(k, _)| k.eq_ignore_ascii_case("label"))?.1;
    let label = scalar_text(label)?.trim().to_string();
    let coords = map.iter().find(|(k, _)| k.eq_ignore_ascii_case("box"))?.1.as_array()?;
    let coords: Vec<f64> = coords
        .iter()
        .map(|c| match c {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().parse().ok(),
            _ => None,
        })
        .collect::<Option<_>>()?;
    let relationship = map
        .iter()
        .find(|(k, _)| k.eq_ignore_ascii_case("relationship"))
        .and_then(|(_, v)| scalar_text(v))
        .unwrap_or_default();
    build_candidate(label, &coords, relationship)
}

fn build_candidate(label: String, coords: &[f64], relationship: String) -> Option<BoxCandidate> {
    if label.is_empty() || coords.len() != 4 {
        return None;
    }
    let bbox = BBox::new(coords[0], coords[1], coords[2], coords[3]).ok()?;
    Some(BoxCandidate {
        label,
        bbox,
        relationship: relationship.trim().to_string(),
    })
}

fn field_regexes() -> &'static (Regex, Regex, Regex) {
    static RE: OnceLock<(Regex, Regex, Regex)> = OnceLock::new();
    RE.get_or_init(|| {
        let q = r#"["'`\u{2018}\u{2019}\u{201C}\u{201D}]"#;
        let label = Regex::new(&format!(r"(?i){q}?label{q}?\s*[:=]\s*{q}?([^,}}\]]+?){q}?\s*(?:,|\}}|$)"))
            .expect("label regex");
        let bbox = Regex::new(&format!(r"(?i){q}?box{q}?\s*[:=]\s*\[([^\]]*)\]")).expect("box regex");
        let rel = Regex::new(&format!(r"(?i){q}?relationship{q}?\s*[:=]\s*{q}?([^}}]*?){q}?\s*(?:,|\}}|$)"))
            .expect("relationship regex");
        (label, bbox, rel)
    })
}

fn candidate_from_regex(text: &str) -> Option<BoxCandidate> {
    let (label_re, box_re, rel_re) = field_regexes();
    let label = label_re.captures(text)?.get(1)?.as_str().trim().to_string();
    let coords: Vec<f64> = box_re
        .captures(text)?
        .get(1)?
        .as_str()
        .split(',')
        .map(|p| p.trim().trim_matches(|c| c == '\'' || c == '"').parse::<f64>().ok())
        .collect::<Option<_>>()?;
    let relationship = rel_re
        .captures(text)
        .and_then(|c| c.get(1))
        .map(|m| m.as_str().to_string())
        .unwrap_or_default();
    build_candidate(label, &coords, relationship)
}

/// Renders candidates back into the reply format the box prompt requests.
pub fn format_candidates(candidates: &[BoxCandidate]) -> String {
    candidates
        .iter()
        .map(|c| {
            let b = c.bbox;
            format!(
                "{{\"label\": {}, \"box\": [{:?}, {:?}, {:?}, {:?}], \"relationship\": {}}}",
                serde_json::to_string(&c.label).expect("string serializes"),
                b.x1(),
                b.y1(),
                b.x2(),
                b.y2(),
                serde_json::to_string(&c.relationship).expect("string serializes"),
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}
