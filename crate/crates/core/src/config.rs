//! TOML run configuration.
//!
//! ```toml
//! label = "red panda"
//! iterations = 1
//! scenes_per_iteration = 2
//! seed = 42
//!
//! [thresholds]
//! psnr_min = 20.0
//!
//! [endpoints.default]
//! url = "mock:"
//!
//! [endpoints.chat]
//! url = "http://127.0.0.1:8000"
//! timeout_secs = 120
//! ```
//!
//! Unknown keys are errors. Omitted blocks take their defaults; endpoint
//! tables inherit omitted fields from `[endpoints.default]`, which itself
//! defaults to `mock:`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::Deserialize;

use crate::gate::GateThresholds;
use crate::gateway::{BackendEndpoint, CapabilityKind};
use crate::geometry::BoxRules;
use crate::metrics::MetricParams;
use crate::model::LabelWord;
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub source_name: String,
    /// 1-based position of the offending text, when known.
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{}:{l}:{c}: {}", self.source_name, self.message),
            (Some(l), None) => write!(f, "{}:{l}: {}", self.source_name, self.message),
            _ => write!(f, "{}: {}", self.source_name, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// Values given on the command line win over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub label: Option<String>,
    pub seed: Option<u64>,
    pub iterations: Option<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    label: Option<String>,
    iterations: Option<u32>,
    scenes_per_iteration: Option<u32>,
    prompts_per_label: Option<u32>,
    candidates_per_prompt: Option<u32>,
    seed: Option<u64>,
    temperature: Option<f64>,
    retry_budget_per_llm_call: Option<u32>,
    chain: Option<bool>,
    #[serde(default)]
    box_rules: BoxRules,
    #[serde(default)]
    thresholds: GateThresholds,
    #[serde(default)]
    metric_params: MetricParams,
    #[serde(default)]
    endpoints: EndpointsFile,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointsFile {
    default: Option<EndpointFile>,
    chat: Option<EndpointFile>,
    text_to_image: Option<EndpointFile>,
    instruct_edit: Option<EndpointFile>,
    region_inpaint: Option<EndpointFile>,
    detect: Option<EndpointFile>,
    segment: Option<EndpointFile>,
    caption: Option<EndpointFile>,
    score: Option<EndpointFile>,
}

#[derive(Debug, Default, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct EndpointFile {
    url: Option<String>,
    timeout_secs: Option<f64>,
    max_retries: Option<u32>,
}

impl EndpointsFile {
    fn get(&self, kind: CapabilityKind) -> Option<&EndpointFile> {
        match kind {
            CapabilityKind::Chat => self.chat.as_ref(),
            CapabilityKind::TextToImage => self.text_to_image.as_ref(),
            CapabilityKind::InstructEdit => self.instruct_edit.as_ref(),
            CapabilityKind::RegionInpaint => self.region_inpaint.as_ref(),
            CapabilityKind::Detect => self.detect.as_ref(),
            CapabilityKind::Segment => self.segment.as_ref(),
            CapabilityKind::Caption => self.caption.as_ref(),
            CapabilityKind::Score => self.score.as_ref(),
        }
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Line of the first `key = ...` assignment, for semantic errors.
fn key_line(text: &str, key: &str) -> Option<usize> {
    text.lines().position(|l| {
        l.trim_start()
            .strip_prefix(key)
            .is_some_and(|rest| rest.trim_start().starts_with('='))
    })
    .map(|i| i + 1)
}

pub fn parse_config(text: &str, source_name: &str, overrides: &Overrides) -> Result<PipelineConfig, ConfigError> {
    let err = |line: Option<usize>, column: Option<usize>, message: String| ConfigError {
        source_name: source_name.to_string(),
        line,
        column,
        message,
    };
    let file: ConfigFile = toml::from_str(text).map_err(|e| {
        let (line, column) = match e.span() {
            Some(span) => {
                let (l, c) = line_col(text, span.start);
                (Some(l), Some(c))
            }
            None => (None, None),
        };
        err(line, column, e.message().trim().to_string())
    })?;

    let label_text = overrides
        .label
        .clone()
        .or(file.label)
        .ok_or_else(|| err(None, None, "missing key `label` (set it in the file or pass --label)".into()))?;
    let label = LabelWord::new(label_text).map_err(|e| err(key_line(text, "label"), None, format!("label: {e}")))?;

    let base = PipelineConfig::mock(label);
    let fallback = EndpointFile {
        url: Some("mock:".into()),
        ..EndpointFile::default()
    };
    let default_ep = file.endpoints.default.clone().unwrap_or_default();
    let mut endpoints = BTreeMap::new();
    for kind in CapabilityKind::ALL {
        let own = file.endpoints.get(kind).cloned().unwrap_or_default();
        let template = BackendEndpoint::mock(kind);
        let url = own.url.or(default_ep.url.clone()).or(fallback.url.clone()).expect("fallback url");
        endpoints.insert(
            kind,
            BackendEndpoint {
                kind,
                base_url: url,
                timeout_secs: own.timeout_secs.or(default_ep.timeout_secs).unwrap_or(template.timeout_secs),
                max_retries: own.max_retries.or(default_ep.max_retries).unwrap_or(template.max_retries),
            },
        );
    }

    let cfg = PipelineConfig {
        iterations: overrides.iterations.or(file.iterations).unwrap_or(base.iterations),
        scenes_per_iteration: file.scenes_per_iteration.unwrap_or(base.scenes_per_iteration),
        prompts_per_label: file.prompts_per_label.unwrap_or(base.prompts_per_label),
        candidates_per_prompt: file.candidates_per_prompt.unwrap_or(base.candidates_per_prompt),
        seed: overrides.seed.or(file.seed).unwrap_or(base.seed),
        temperature: file.temperature.unwrap_or(base.temperature),
        retry_budget_per_llm_call: file.retry_budget_per_llm_call.unwrap_or(base.retry_budget_per_llm_call),
        chain: file.chain.unwrap_or(base.chain),
        box_rules: file.box_rules,
        thresholds: file.thresholds,
        metric_params: file.metric_params,
        endpoints,
        label: base.label,
    };
    cfg.validate().map_err(|message| {
        let key = message.split_whitespace().next().unwrap_or("");
        let from_flag = key == "iterations" && overrides.iterations.is_some();
        let line = if from_flag { None } else { key_line(text, key) };
        err(line, None, message)
    })?;
    Ok(cfg)
}

pub fn load_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig, ConfigError> {
    let name = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        source_name: name.clone(),
        line: None,
        column: None,
        message: e.to_string(),
    })?;
    parse_config(&text, &name, overrides)
}
