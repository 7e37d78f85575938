//! Prompt rendering and reply parsing for the four chat-model conversations:
//! visual descriptor, AIGC creator, scene imagination and box candidates.
//!
//! Template texts live in `templates/` as plain UTF-8 with `{slot name}`
//! markers. Braces whose contents are not a known slot name are literal text,
//! which is how the return-format instructions survive rendering.

pub mod literal;
mod reply;

pub use reply::{
    parse_box_candidates, parse_generation_prompts, parse_scene_specs, parse_visual_features,
    format_candidates, CandidateParse, ParseError,
};

use serde::{Deserialize, Serialize};

use crate::model::{Canvas, DetectedObject, LabelWord, VisualFeature};

const VISUAL_DESCRIPTOR_SYSTEM: &str = include_str!("../../templates/visual_descriptor.system.txt");
const VISUAL_DESCRIPTOR_USER: &str = include_str!("../../templates/visual_descriptor.user.txt");
const AIGC_CREATOR_SYSTEM: &str = include_str!("../../templates/aigc_creator.system.txt");
const AIGC_CREATOR_USER: &str = include_str!("../../templates/aigc_creator.user.txt");
const SCENE_IMAGINATION_SYSTEM: &str = include_str!("../../templates/scene_imagination.system.txt");
const SCENE_IMAGINATION_USER: &str = include_str!("../../templates/scene_imagination.user.txt");
const BOX_CANDIDATES_USER: &str = include_str!("../../templates/box_candidates.user.txt");
const RED_PANDA_DEMONSTRATION: &str = include_str!("../../templates/demonstration.red_panda.txt");

/// Every slot name any template may use.
pub const SLOT_NAMES: &[&str] = &[
    "category name",
    "prompt number",
    "label word",
    "visual feature",
    "scene number",
    "caption",
    "exist objects",
    "existing boxes info",
    "target objects",
    "canvas width",
    "canvas height",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PromptError {
    #[error("{0} must be at least 1")]
    ZeroCount(&'static str),
    #[error("caption is empty")]
    EmptyCaption,
    #[error("existing objects required")]
    NoExisting,
    #[error("target objects required")]
    NoTargets,
    #[error("template slot {{{0}}} has no value")]
    MissingSlot(String),
    #[error("demonstration text is empty")]
    EmptyDemonstration,
    #[error("temperature must be finite and >= 0")]
    Temperature,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptMessage {
    pub role: Role,
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRequest {
    pub messages: Vec<PromptMessage>,
    pub temperature: f64,
}

impl PromptRequest {
    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, PromptError> {
        if !(temperature.is_finite() && temperature >= 0.0) {
            return Err(PromptError::Temperature);
        }
        self.temperature = temperature;
        Ok(self)
    }

    /// Content of the last user message.
    pub fn user_content(&self) -> &str {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }

    /// Plain-text dump used by the golden prompt files.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for m in &self.messages {
            let role = match m.role {
                Role::System => "system",
                Role::User => "user",
            };
            out.push_str("### ");
            out.push_str(role);
            out.push('\n');
            out.push_str(&m.content);
            out.push('\n');
        }
        out
    }
}

fn request(messages: Vec<(Role, String)>) -> PromptRequest {
    PromptRequest {
        messages: messages
            .into_iter()
            .map(|(role, content)| PromptMessage { role, content })
            .collect(),
        temperature: 0.0,
    }
}

/// A worked example appended to a system prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration(String);

impl Demonstration {
    pub fn new(text: impl Into<String>) -> Result<Self, PromptError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(PromptError::EmptyDemonstration);
        }
        Ok(Self(text))
    }

    /// The shipped red panda example.
    pub fn red_panda() -> Self {
        Self(RED_PANDA_DEMONSTRATION.to_string())
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

/// Substitutes every known `{slot}` in `template`. Unknown brace groups are
/// copied through untouched.
pub fn fill_slots(template: &str, values: &[(&str, &str)]) -> Result<String, PromptError> {
    let mut out = String::with_capacity(template.len() + 64);
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find('}') {
            Some(close) if SLOT_NAMES.contains(&&after[..close]) => {
                let name = &after[..close];
                let value = values
                    .iter()
                    .find(|(k, _)| *k == name)
                    .map(|(_, v)| *v)
                    .ok_or_else(|| PromptError::MissingSlot(name.to_string()))?;
                out.push_str(&neutralize(value));
                rest = &after[close + 1..];
            }
            _ => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    Ok(out)
}

// A value that itself spells a slot marker would survive rendering looking
// like an unfilled slot; its brace is swapped for a parenthesis.
fn neutralize(value: &str) -> String {
    let mut out = String::with_capacity(value.len());
    let mut rest = value;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        if SLOT_NAMES.iter().any(|s| after.starts_with(s)) {
            out.push('(');
        } else {
            out.push('{');
        }
        rest = after;
    }
    out.push_str(rest);
    out
}

pub fn render_visual_descriptor(category: &LabelWord) -> PromptRequest {
    let user = fill_slots(VISUAL_DESCRIPTOR_USER, &[("category name", category.as_str())])
        .expect("visual descriptor template uses only its own slot");
    request(vec![
        (Role::System, VISUAL_DESCRIPTOR_SYSTEM.to_string()),
        (Role::User, user),
    ])
}

/// Visual features are joined with `"; "`. Demonstrations are appended to
/// the system message, each on its own line.
pub fn render_aigc_creator(
    label: &LabelWord,
    features: &VisualFeature,
    prompt_number: u32,
    demonstrations: &[Demonstration],
) -> Result<PromptRequest, PromptError> {
    if prompt_number == 0 {
        return Err(PromptError::ZeroCount("prompt number"));
    }
    let mut system = AIGC_CREATOR_SYSTEM.to_string();
    for demo in demonstrations {
        system.push('\n');
        system.push_str(demo.text());
    }
    let n = prompt_number.to_string();
    let joined = features.phrases().join("; ");
    let user = fill_slots(
        AIGC_CREATOR_USER,
        &[
            ("prompt number", &n),
            ("label word", label.as_str()),
            ("visual feature", &joined),
        ],
    )?;
    Ok(request(vec![(Role::System, system), (Role::User, user)]))
}

pub fn render_scene_imagination(
    caption: &str,
    exist_objects: &[String],
    scene_number: u32,
) -> Result<PromptRequest, PromptError> {
    let caption = caption.trim();
    if caption.is_empty() {
        return Err(PromptError::EmptyCaption);
    }
    if scene_number == 0 {
        return Err(PromptError::ZeroCount("scene number"));
    }
    let n = scene_number.to_string();
    let objects = exist_objects.join(", ");
    let user = fill_slots(
        SCENE_IMAGINATION_USER,
        &[("scene number", &n), ("caption", caption), ("exist objects", &objects)],
    )?;
    Ok(request(vec![
        (Role::System, SCENE_IMAGINATION_SYSTEM.to_string()),
        (Role::User, user),
    ]))
}

/// `{"value": 1, "label": "bench", "logit": 0.84, "box": [33.93, ...]}, ...`
pub fn existing_boxes_info(existing: &[DetectedObject]) -> String {
    existing
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            let b = obj.bbox;
            format!(
                "{{\"value\": {}, \"label\": {}, \"logit\": {:.2}, \"box\": [{:.2}, {:.2}, {:.2}, {:.2}]}}",
                i + 1,
                serde_json::to_string(&obj.label).expect("string serializes"),
                obj.score,
                b.x1(),
                b.y1(),
                b.x2(),
                b.y2()
            )
        })
        .collect::<Vec<_>>()
        .join(", ")
}

pub fn render_box_candidates(
    caption: &str,
    existing: &[DetectedObject],
    targets: &[String],
    prompt_number: u32,
    canvas: Canvas,
) -> Result<PromptRequest, PromptError> {
    if existing.is_empty() {
        return Err(PromptError::NoExisting);
    }
    if targets.iter().all(|t| t.trim().is_empty()) {
        return Err(PromptError::NoTargets);
    }
    if prompt_number == 0 {
        return Err(PromptError::ZeroCount("prompt number"));
    }
    let caption = caption.trim();
    if caption.is_empty() {
        return Err(PromptError::EmptyCaption);
    }
    let n = prompt_number.to_string();
    let info = existing_boxes_info(existing);
    let targets = targets.join(", ");
    let (w, h) = (canvas.width.to_string(), canvas.height.to_string());
    let user = fill_slots(
        BOX_CANDIDATES_USER,
        &[
            ("prompt number", &n),
            ("caption", caption),
            ("canvas width", &w),
            ("canvas height", &h),
            ("existing boxes info", &info),
            ("target objects", &targets),
        ],
    )?;
    Ok(request(vec![(Role::User, user)]))
}

/// Which of the four conversations a rendered prompt belongs to, recovered
/// from its text. Used by the mock chat backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    VisualDescriptor,
    AigcCreator,
    SceneImagination,
    BoxCandidates,
}

impl PromptKind {
    pub fn detect(request: &PromptRequest) -> Option<Self> {
        let user = request.user_content();
        if user.starts_with("Q: What are useful visual features") {
            Some(Self::VisualDescriptor)
        } else if user.contains("high quality prompts for text-to-image models") {
            Some(Self::AigcCreator)
        } else if user.contains("real scene descriptions based on the context") {
            Some(Self::SceneImagination)
        } else if user.contains("possible prediction of the remaining box coordinates") {
            Some(Self::BoxCandidates)
        } else {
            None
        }
    }
}
