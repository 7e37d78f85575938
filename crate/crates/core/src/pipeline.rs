//! The generation loop: initialise from a label word, then repeatedly
//! brainstorm scenes, swap backgrounds, fill objects, relabel and gate.
//!
//! Every generative call gets a seed derived from the run seed and its
//! position in the loop, so a run against deterministic backends is
//! byte-reproducible. Scenes of one iteration run on scoped threads; their
//! results are merged in scene order.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gate::{self, GateError, GateThresholds, QualityReport};
use crate::gateway::{BackendEndpoint, CapabilityKind, EditRequest, Gateway, GatewayError, GenRequest, InpaintRequest};
use crate::geometry::{filter_overlapping, BoxRules};
use crate::metrics::MetricParams;
use crate::model::{
    lineage_id, AnnotationBundle, BoxCandidate, Canvas, DatasetRecord, DetectedObject, EditStep, Image, LabelWord,
    ModelError, SceneSpec, SegmentMask,
};
use crate::prompt::{
    self, parse_box_candidates, parse_generation_prompts, parse_scene_specs, parse_visual_features, Demonstration,
    ParseError, PromptError, PromptRequest,
};
use crate::store::DatasetManifest;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub label: LabelWord,
    pub iterations: u32,
    pub scenes_per_iteration: u32,
    pub prompts_per_label: u32,
    pub candidates_per_prompt: u32,
    pub seed: u64,
    pub temperature: f64,
    pub retry_budget_per_llm_call: u32,
    /// Brainstorm each iteration from the previous iteration's last retained
    /// record instead of the init image.
    pub chain: bool,
    pub box_rules: BoxRules,
    pub thresholds: GateThresholds,
    pub metric_params: MetricParams,
    pub endpoints: BTreeMap<CapabilityKind, BackendEndpoint>,
}

impl PipelineConfig {
    /// Defaults with every capability served by the mock world.
    pub fn mock(label: LabelWord) -> Self {
        Self {
            label,
            iterations: 1,
            scenes_per_iteration: 2,
            prompts_per_label: 2,
            candidates_per_prompt: 2,
            seed: 0,
            temperature: 0.0,
            retry_budget_per_llm_call: 2,
            chain: false,
            box_rules: BoxRules::default(),
            thresholds: GateThresholds::default(),
            metric_params: MetricParams::default(),
            endpoints: CapabilityKind::ALL
                .into_iter()
                .map(|k| (k, BackendEndpoint::mock(k)))
                .collect(),
        }
    }

    pub fn canvas(&self) -> Canvas {
        self.box_rules.canvas
    }

    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("iterations", self.iterations),
            ("scenes_per_iteration", self.scenes_per_iteration),
            ("prompts_per_label", self.prompts_per_label),
            ("candidates_per_prompt", self.candidates_per_prompt),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err("temperature must be finite and >= 0".into());
        }
        self.box_rules.validate().map_err(|e| e.to_string())?;
        self.thresholds.validate().map_err(|e| e.to_string())?;
        self.metric_params.validate().map_err(|e| e.to_string())?;
        if self.thresholds.sim_top_k > self.candidates_per_prompt as usize {
            return Err(format!(
                "sim_top_k ({}) exceeds candidates_per_prompt ({})",
                self.thresholds.sim_top_k, self.candidates_per_prompt
            ));
        }
        for kind in CapabilityKind::ALL {
            let ep = self
                .endpoints
                .get(&kind)
                .ok_or_else(|| format!("no endpoint configured for {kind}"))?;
            if ep.kind != kind {
                return Err(format!("endpoint under {kind} declares kind {}", ep.kind));
            }
            ep.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    VisualDescriptor,
    AigcCreator,
    Generate,
    Label,
    Imagine,
    BackgroundEdit,
    BoxCandidates,
    Fill,
    Gate,
}

impl Stage {
    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::VisualDescriptor => "visual_descriptor",
            Stage::AigcCreator => "aigc_creator",
            Stage::Generate => "generate",
            Stage::Label => "label",
            Stage::Imagine => "imagine",
            Stage::BackgroundEdit => "background_edit",
            Stage::BoxCandidates => "box_candidates",
            Stage::Fill => "fill",
            Stage::Gate => "gate",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Backend { stage: Stage, source: GatewayError },
    #[error("{stage}: reply unparseable after {attempts} attempts: {source}")]
    Parse {
        stage: Stage,
        attempts: u32,
        source: ParseError,
    },
    #[error("{stage}: {source}")]
    Prompt { stage: Stage, source: PromptError },
    #[error("{stage}: {source}")]
    Gate { stage: Stage, source: GateError },
    #[error("{stage}: {source}")]
    Model { stage: Stage, source: ModelError },
    #[error("none of {candidates} init candidates shows the label {label:?}")]
    InitRejected { label: String, candidates: usize },
    #[error("lineage step {step} ({op}) produced {got}, recorded {expected}")]
    LineageMismatch {
        step: usize,
        op: &'static str,
        expected: String,
        got: String,
    },
}

impl PipelineError {
    /// Failures from backends or replies, as opposed to caller mistakes.
    pub fn is_runtime(&self) -> bool {
        !matches!(self, PipelineError::Config(_))
    }
}

fn backend(stage: Stage) -> impl Fn(GatewayError) -> PipelineError {
    move |source| PipelineError::Backend { stage, source }
}

fn gate_err(stage: Stage) -> impl Fn(GateError) -> PipelineError {
    move |source| match source {
        GateError::Backend(source) => PipelineError::Backend { stage, source },
        source => PipelineError::Gate { stage, source },
    }
}

/// Seed for one generative call: the first 8 bytes (big-endian) of
/// SHA-256 over `"{run seed}/{stage}/{iteration}/{scene}/{candidate}"`.
pub fn derive_seed(run_seed: u64, stage: &str, iteration: u32, scene: u32, candidate: u32) -> u64 {
    let digest = Sha256::digest(format!("{run_seed}/{stage}/{iteration}/{scene}/{candidate}").as_bytes());
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// One progress line. Displays as `stage=... iteration=... scene=...`
/// followed by event-specific `key=value` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub stage: Stage,
    pub iteration: u32,
    pub scene: Option<u32>,
    pub fields: Vec<(&'static str, String)>,
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage={} iteration={} scene=", self.stage, self.iteration)?;
        match self.scene {
            Some(s) => write!(f, "{s}")?,
            None => f.write_str("-")?,
        }
        for (k, v) in &self.fields {
            if v.contains(char::is_whitespace) || v.is_empty() {
                write!(f, " {k}={v:?}")?;
            } else {
                write!(f, " {k}={v}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitBundle {
    pub image: Image,
    pub annotations: AnnotationBundle,
    pub lineage: Vec<EditStep>,
}

/// Everything a run produced. `images` holds the pixels of every record.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub manifest: DatasetManifest,
    pub images: BTreeMap<String, Image>,
}

/// Generic nouns dropped from caption phrases before they become
/// detection queries.
const GENERIC_NOUNS: &[&str] = &["photo", "image", "picture", "scene", "view", "close-up", "closeup"];

/// Noun phrases of a caption: split on prepositions, conjunctions and
/// punctuation, with leading articles removed.
pub fn caption_phrases(caption: &str) -> Vec<String> {
    static SPLIT: OnceLock<Regex> = OnceLock::new();
    static ARTICLE: OnceLock<Regex> = OnceLock::new();
    let split = SPLIT.get_or_init(|| {
        Regex::new(r"(?i)\b(?:of|in|on|at|with|and|near|beside|next to|behind|under|over|by|from|into)\b|[,.;:!?]")
            .expect("static regex")
    });
    let article = ARTICLE.get_or_init(|| Regex::new(r"(?i)^(?:an?|the|some|two|three|several)\s+").expect("static regex"));
    let mut out: Vec<String> = Vec::new();
    for chunk in split.split(&caption.to_lowercase()) {
        let phrase = article.replace(chunk.trim(), "").trim().to_string();
        if phrase.is_empty() || GENERIC_NOUNS.contains(&phrase.as_str()) {
            continue;
        }
        if !out.contains(&phrase) {
            out.push(phrase);
        }
    }
    out
}

fn union_labels<'a>(groups: impl IntoIterator<Item = &'a [String]>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for group in groups {
        for l in group {
            if !out.iter().any(|o| o.eq_ignore_ascii_case(l)) {
                out.push(l.clone());
            }
        }
    }
    out
}

pub struct Orchestrator<'a> {
    cfg: &'a PipelineConfig,
    gateway: &'a Gateway,
}

struct SceneResult {
    events: Vec<Event>,
    outcome: Result<(DatasetRecord, Image), PipelineError>,
}

impl<'a> Orchestrator<'a> {
    pub fn new(cfg: &'a PipelineConfig, gateway: &'a Gateway) -> Self {
        Self { cfg, gateway }
    }

    /// Sends `request` and parses the reply, re-asking up to the configured
    /// retry budget when parsing fails.
    fn ask<T>(
        &self,
        stage: Stage,
        request: &PromptRequest,
        parse: impl Fn(&str) -> Result<T, ParseError>,
    ) -> Result<T, PipelineError> {
        let attempts = self.cfg.retry_budget_per_llm_call + 1;
        let mut last = None;
        for _ in 0..attempts {
            let reply = self.gateway.chat(request).map_err(backend(stage))?;
            match parse(&reply.text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    log::debug!("{stage}: unparseable reply: {e}");
                    last = Some(e);
                }
            }
        }
        Err(PipelineError::Parse {
            stage,
            attempts,
            source: last.expect("at least one attempt"),
        })
    }

    fn prompt(&self, stage: Stage, r: Result<PromptRequest, PromptError>) -> Result<PromptRequest, PipelineError> {
        r.and_then(|p| p.with_temperature(self.cfg.temperature))
            .map_err(|source| PipelineError::Prompt { stage, source })
    }

    /// Caption, then detection queried with caption phrases plus `labels`,
    /// then one mask per detected box.
    pub fn relabel(&self, image: &Image, labels: &[String]) -> Result<AnnotationBundle, PipelineError> {
        let stage = Stage::Label;
        let caption = self.gateway.caption(image).map_err(backend(stage))?;
        let queries = union_labels([labels, caption_phrases(&caption).as_slice()]);
        let objects: Vec<DetectedObject> = if queries.is_empty() {
            Vec::new()
        } else {
            self.gateway
                .detect(image, &queries)
                .map_err(backend(stage))?
                .into_iter()
                .filter(|o| o.score >= self.cfg.thresholds.detect_conf_min)
                .collect()
        };
        let masks: Vec<SegmentMask> = if objects.is_empty() {
            Vec::new()
        } else {
            let boxes: Vec<_> = objects.iter().map(|o| o.bbox).collect();
            self.gateway.segment(image, &boxes).map_err(backend(stage))?
        };
        AnnotationBundle::new(caption, objects, masks).map_err(|source| PipelineError::Model { stage, source })
    }

    /// Features, generation prompts, candidates, ranking; the best-ranked
    /// candidate that shows the label becomes the init image.
    pub fn initialize(&self, events: &mut Vec<Event>) -> Result<(InitBundle, QualityReport), PipelineError> {
        let cfg = self.cfg;
        let label = &cfg.label;
        let ev = |stage, fields| Event {
            stage,
            iteration: 0,
            scene: None,
            fields,
        };

        let req = self.prompt(Stage::VisualDescriptor, Ok(prompt::render_visual_descriptor(label)))?;
        let features = self.ask(Stage::VisualDescriptor, &req, parse_visual_features)?;
        events.push(ev(Stage::VisualDescriptor, vec![("features", features.len().to_string())]));

        let req = self.prompt(
            Stage::AigcCreator,
            prompt::render_aigc_creator(label, &features, cfg.prompts_per_label, &[Demonstration::red_panda()]),
        )?;
        let mut prompts = self.ask(Stage::AigcCreator, &req, parse_generation_prompts)?;
        prompts.truncate(cfg.prompts_per_label as usize);
        events.push(ev(Stage::AigcCreator, vec![("prompts", prompts.len().to_string())]));

        let mut ranked = Vec::new();
        for (pi, text) in prompts.iter().enumerate() {
            let seed = derive_seed(cfg.seed, "init", 0, pi as u32, 0);
            let images = self
                .gateway
                .text_to_image(GenRequest {
                    prompt: text.clone(),
                    canvas: cfg.canvas(),
                    seed,
                    candidates: cfg.candidates_per_prompt,
                })
                .map_err(backend(Stage::Generate))?;
            let k = cfg.thresholds.sim_top_k.min(images.len());
            for r in gate::semantic_rank(&images, text, self.gateway, k).map_err(gate_err(Stage::Generate))? {
                ranked.push((r, pi, seed, images.len() as u32));
            }
        }
        ranked.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
        events.push(ev(Stage::Generate, vec![("ranked", ranked.len().to_string())]));

        let required = vec![label.as_str().to_string()];
        for (r, pi, seed, count) in &ranked {
            let presence = gate::object_presence_check(&r.image, &required, self.gateway, &cfg.thresholds)
                .map_err(gate_err(Stage::Label))?;
            if !presence.retained() {
                continue;
            }
            let annotations = self.relabel(&r.image, &required)?;
            let lineage = vec![EditStep::Init {
                prompt: prompts[*pi].clone(),
                seed: *seed,
                candidates: *count,
                candidate: r.index as u32,
                output: r.image.id().to_string(),
            }];
            let mut quality = presence;
            quality.semantic_score = Some(r.score);
            events.push(ev(
                Stage::Label,
                vec![
                    ("image", short(r.image.id())),
                    ("objects", annotations.objects.len().to_string()),
                    ("verdict", "retain".into()),
                ],
            ));
            return Ok((
                InitBundle {
                    image: r.image.clone(),
                    annotations,
                    lineage,
                },
                quality,
            ));
        }
        Err(PipelineError::InitRejected {
            label: label.to_string(),
            candidates: ranked.len(),
        })
    }

    pub fn imagine_scenes(&self, bundle: &InitBundle) -> Result<Vec<SceneSpec>, PipelineError> {
        let stage = Stage::Imagine;
        let req = self.prompt(
            stage,
            prompt::render_scene_imagination(
                &bundle.annotations.caption,
                &bundle.annotations.labels(),
                self.cfg.scenes_per_iteration,
            ),
        )?;
        let mut scenes = self.ask(stage, &req, parse_scene_specs)?;
        scenes.truncate(self.cfg.scenes_per_iteration as usize);
        Ok(scenes)
    }

    pub fn edit_background(&self, base: &Image, scene: &SceneSpec, iteration: u32, index: u32) -> Result<(Image, EditStep), PipelineError> {
        let instruction = format!("change the background to {}", scene.background);
        let seed = derive_seed(self.cfg.seed, "background_edit", iteration, index, 0);
        let out = self
            .gateway
            .instruct_edit(EditRequest {
                image: base.clone(),
                instruction: instruction.clone(),
                seed,
            })
            .map_err(backend(Stage::BackgroundEdit))?;
        let step = EditStep::BackgroundEdit {
            parent: base.id().to_string(),
            instruction,
            seed,
            output: out.id().to_string(),
        };
        Ok((out, step))
    }

    /// Asks for boxes for the scene objects not already present, filters
    /// them, and inpaints the survivors one after another.
    pub fn fill_objects(
        &self,
        base: &Image,
        scene: &SceneSpec,
        caption: &str,
        existing: &[DetectedObject],
        iteration: u32,
        index: u32,
    ) -> Result<(Image, Vec<BoxCandidate>, Vec<EditStep>), PipelineError> {
        let targets: Vec<String> = scene
            .objects
            .iter()
            .filter(|o| !existing.iter().any(|e| e.label.eq_ignore_ascii_case(o)))
            .cloned()
            .collect();
        if targets.is_empty() {
            return Ok((base.clone(), Vec::new(), Vec::new()));
        }
        let req = self.prompt(
            Stage::BoxCandidates,
            prompt::render_box_candidates(caption, existing, &targets, targets.len() as u32, self.cfg.canvas()),
        )?;
        let parsed = self.ask(Stage::BoxCandidates, &req, parse_box_candidates)?;
        let retained = filter_overlapping(&parsed.candidates, existing, &self.cfg.box_rules).retained;

        let mut current = base.clone();
        let mut steps = Vec::new();
        for (ci, cand) in retained.iter().enumerate() {
            let seed = derive_seed(self.cfg.seed, "object_fill", iteration, index, ci as u32);
            let out = self
                .gateway
                .region_inpaint(InpaintRequest {
                    image: current.clone(),
                    bbox: cand.bbox,
                    label: cand.label.clone(),
                    seed,
                })
                .map_err(backend(Stage::Fill))?;
            steps.push(EditStep::ObjectFill {
                parent: current.id().to_string(),
                label: cand.label.clone(),
                bbox: cand.bbox,
                relationship: cand.relationship.clone(),
                seed,
                output: out.id().to_string(),
            });
            current = out;
        }
        Ok((current, retained, steps))
    }

    fn scene(&self, base: &InitBundle, scene: &SceneSpec, iteration: u32, index: u32) -> SceneResult {
        let mut events = Vec::new();
        let outcome = self.scene_inner(base, scene, iteration, index, &mut events);
        SceneResult { events, outcome }
    }

    fn scene_inner(
        &self,
        base: &InitBundle,
        scene: &SceneSpec,
        iteration: u32,
        index: u32,
        events: &mut Vec<Event>,
    ) -> Result<(DatasetRecord, Image), PipelineError> {
        let ev = |stage, fields| Event {
            stage,
            iteration,
            scene: Some(index),
            fields,
        };
        let (edited, edit_step) = self.edit_background(&base.image, scene, iteration, index)?;
        events.push(ev(
            Stage::BackgroundEdit,
            vec![("background", scene.background.clone()), ("image", short(edited.id()))],
        ));

        let (filled, applied, fill_steps) = self.fill_objects(
            &edited,
            scene,
            &base.annotations.caption,
            &base.annotations.objects,
            iteration,
            index,
        )?;
        events.push(ev(
            Stage::Fill,
            vec![
                ("applied", applied.len().to_string()),
                ("labels", applied.iter().map(|c| c.label.as_str()).collect::<Vec<_>>().join(",")),
            ],
        ));

        let mut lineage = base.lineage.clone();
        lineage.push(edit_step);
        lineage.extend(fill_steps);
        let lineage_labels: Vec<String> = lineage
            .iter()
            .filter_map(|s| match s {
                EditStep::ObjectFill { label, .. } => Some(label.clone()),
                _ => None,
            })
            .collect();
        let required = union_labels([base.annotations.labels().as_slice(), lineage_labels.as_slice()]);
        let annotations = self.relabel(&filled, &required)?;
        let text = if scene.description.is_empty() {
            annotations.caption.as_str()
        } else {
            scene.description.as_str()
        };
        let quality = gate::filter_decision(
            &edited,
            &filled,
            &required,
            text,
            self.gateway,
            &self.cfg.thresholds,
            &self.cfg.metric_params,
        )
        .map_err(gate_err(Stage::Gate))?;
        events.push(ev(
            Stage::Gate,
            vec![
                ("verdict", if quality.retained() { "retain" } else { "reject" }.into()),
                ("reasons", quality.reasons().iter().map(|r| r.as_str()).collect::<Vec<_>>().join(",")),
                ("psnr", quality.psnr.map(|p| p.to_string()).unwrap_or_default()),
                ("ssim", quality.ssim.map(|s| format!("{s:.4}")).unwrap_or_default()),
            ],
        ));
        let record = DatasetRecord {
            id: lineage_id(&lineage),
            iteration,
            scene: Some(index),
            image: filled.meta().clone(),
            annotations,
            lineage,
            quality,
        };
        Ok((record, filled))
    }

    /// Runs the whole loop. Backend or reply failures end the run early with
    /// a manifest flagged incomplete; config errors are returned as `Err`.
    pub fn run(&self, sink: &mut dyn FnMut(&Event)) -> Result<RunOutput, PipelineError> {
        self.cfg.validate().map_err(PipelineError::Config)?;
        let mut manifest = DatasetManifest::new(self.cfg.clone());
        let mut images = BTreeMap::new();
        let failure = self.run_into(&mut manifest, &mut images, sink).err();
        if let Some(e) = &failure {
            log::warn!("run stopped early: {e}");
            manifest.failure = Some(e.to_string());
        }
        manifest.complete = failure.is_none();
        manifest.seal();
        Ok(RunOutput { manifest, images })
    }

    fn run_into(
        &self,
        manifest: &mut DatasetManifest,
        images: &mut BTreeMap<String, Image>,
        sink: &mut dyn FnMut(&Event),
    ) -> Result<(), PipelineError> {
        let mut events = Vec::new();
        let init = self.initialize(&mut events);
        events.iter().for_each(&mut *sink);
        let (init, quality) = init?;
        let init_record = DatasetRecord {
            id: lineage_id(&init.lineage),
            iteration: 0,
            scene: None,
            image: init.image.meta().clone(),
            annotations: init.annotations.clone(),
            lineage: init.lineage.clone(),
            quality,
        };
        images.insert(init.image.id().to_string(), init.image.clone());
        manifest.records.push(init_record);

        let mut base = init;
        for iteration in 1..=self.cfg.iterations {
            let scenes = self.imagine_scenes(&base)?;
            sink(&Event {
                stage: Stage::Imagine,
                iteration,
                scene: None,
                fields: vec![(
                    "scenes",
                    scenes.iter().map(|s| s.background.as_str()).collect::<Vec<_>>().join(","),
                )],
            });
            let results: Vec<SceneResult> = std::thread::scope(|s| {
                let handles: Vec<_> = scenes
                    .iter()
                    .enumerate()
                    .map(|(i, scene)| {
                        let base = &base;
                        s.spawn(move || self.scene(base, scene, iteration, i as u32))
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("scene worker panicked"))
                    .collect()
            });

            let mut first_error = None;
            let mut last_retained = None;
            for r in results {
                r.events.iter().for_each(&mut *sink);
                match r.outcome {
                    Ok((record, image)) if record.quality.retained() => {
                        images.insert(image.id().to_string(), image.clone());
                        last_retained = Some(InitBundle {
                            image,
                            annotations: record.annotations.clone(),
                            lineage: record.lineage.clone(),
                        });
                        manifest.records.push(record);
                    }
                    Ok((record, _)) => manifest.count_rejection(&record.quality),
                    Err(e) => {
                        first_error.get_or_insert(e);
                    }
                }
            }
            if let Some(e) = first_error {
                return Err(e);
            }
            if self.cfg.chain {
                if let Some(next) = last_retained {
                    base = next;
                }
            }
        }
        Ok(())
    }
}

fn short(id: &str) -> String {
    id.chars().take(12).collect()
}

/// Re-executes a lineage against `gateway`, checking every step's parent and
/// output ids. Returns the final image.
pub fn replay_lineage(gateway: &Gateway, lineage: &[EditStep], canvas: Canvas) -> Result<Image, PipelineError> {
    let mut current: Option<Image> = None;
    for (i, step) in lineage.iter().enumerate() {
        if let (Some(parent), Some(cur)) = (step.parent(), &current) {
            if parent != cur.id() {
                return Err(PipelineError::LineageMismatch {
                    step: i,
                    op: step.name(),
                    expected: parent.to_string(),
                    got: cur.id().to_string(),
                });
            }
        }
        let out = match step {
            EditStep::Init {
                prompt,
                seed,
                candidates,
                candidate,
                ..
            } => {
                let imgs = gateway
                    .text_to_image(GenRequest {
                        prompt: prompt.clone(),
                        canvas,
                        seed: *seed,
                        candidates: *candidates,
                    })
                    .map_err(backend(Stage::Generate))?;
                imgs.into_iter().nth(*candidate as usize).ok_or_else(|| PipelineError::LineageMismatch {
                    step: i,
                    op: step.name(),
                    expected: step.output().to_string(),
                    got: "no such candidate".into(),
                })?
            }
            EditStep::BackgroundEdit { instruction, seed, .. } => {
                let base = current.clone().ok_or_else(|| missing_parent(i, step))?;
                gateway
                    .instruct_edit(EditRequest {
                        image: base,
                        instruction: instruction.clone(),
                        seed: *seed,
                    })
                    .map_err(backend(Stage::BackgroundEdit))?
            }
            EditStep::ObjectFill { label, bbox, seed, .. } => {
                let base = current.clone().ok_or_else(|| missing_parent(i, step))?;
                gateway
                    .region_inpaint(InpaintRequest {
                        image: base,
                        bbox: *bbox,
                        label: label.clone(),
                        seed: *seed,
                    })
                    .map_err(backend(Stage::Fill))?
            }
        };
        if out.id() != step.output() {
            return Err(PipelineError::LineageMismatch {
                step: i,
                op: step.name(),
                expected: step.output().to_string(),
                got: out.id().to_string(),
            });
        }
        current = Some(out);
    }
    current.ok_or_else(|| PipelineError::LineageMismatch {
        step: 0,
        op: "init",
        expected: "a non-empty lineage".into(),
        got: "nothing".into(),
    })
}

fn missing_parent(step: usize, s: &EditStep) -> PipelineError {
    PipelineError::LineageMismatch {
        step,
        op: s.name(),
        expected: s.parent().unwrap_or_default().to_string(),
        got: "no parent image".into(),
    }
}
