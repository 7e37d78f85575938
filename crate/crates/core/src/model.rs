//! Shared domain types: labels, boxes, masks, annotation bundles, images and
//! dataset records.
//!
//! Everything here is an immutable value type. Constructors validate the
//! invariants so downstream code never sees an inverted box or a mask that
//! points past the end of its bundle.

use std::fmt;
use std::io::Cursor;
use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::gate::QualityReport;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("empty image")]
    EmptyImage,
    #[error("label word is empty")]
    EmptyLabel,
    #[error("label word contains a newline")]
    MultilineLabel,
    #[error("visual features required")]
    NoFeatures,
    #[error("invalid box [{0}, {1}, {2}, {3}]: need finite x1 < x2 and y1 < y2")]
    InvalidBox(f64, f64, f64, f64),
    #[error("canvas must have positive width and height, got {0}x{1}")]
    EmptyCanvas(u32, u32),
    #[error("detected object label is empty")]
    EmptyObjectLabel,
    #[error("score {0} is not finite")]
    NonFiniteScore(f64),
    #[error("mask {mask} refers to box {index} but the bundle has {boxes} boxes")]
    MaskIndex { mask: usize, index: usize, boxes: usize },
    #[error("run-length counts cover {covered} pixels, expected {expected}")]
    MaskSize { covered: u64, expected: u64 },
    #[error("scene background is empty")]
    EmptyBackground,
    #[error("scene background {0:?} is longer than {max} words", max = MAX_BACKGROUND_WORDS)]
    LongBackground(String),
    #[error("scene has no objects")]
    NoSceneObjects,
    #[error("image decode failed: {0}")]
    Decode(String),
    #[error("image encode failed: {0}")]
    Encode(String),
}

/// Upper bound on the words in a scene background phrase.
pub const MAX_BACKGROUND_WORDS: usize = 6;

/// SHA-256 of `bytes` as lowercase hex.
pub fn content_hash(bytes: &[u8]) -> Result<String, ModelError> {
    if bytes.is_empty() {
        return Err(ModelError::EmptyImage);
    }
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// A user-supplied category such as `"red panda"`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct LabelWord(String);

impl LabelWord {
    pub fn new(text: impl Into<String>) -> Result<Self, ModelError> {
        let text = text.into();
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(ModelError::EmptyLabel);
        }
        if trimmed.contains(['\n', '\r']) {
            return Err(ModelError::MultilineLabel);
        }
        Ok(Self(trimmed.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for LabelWord {
    type Error = ModelError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

impl From<LabelWord> for String {
    fn from(value: LabelWord) -> Self {
        value.0
    }
}

impl fmt::Display for LabelWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Descriptive phrases the language model produced for a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VisualFeature {
    phrases: Vec<String>,
}

impl VisualFeature {
    pub fn new(phrases: Vec<String>) -> Result<Self, ModelError> {
        let phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| p.trim().to_string())
            .filter(|p| !p.is_empty())
            .collect();
        if phrases.is_empty() {
            return Err(ModelError::NoFeatures);
        }
        Ok(Self { phrases })
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawCanvas")]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

#[derive(Deserialize)]
struct RawCanvas {
    width: u32,
    height: u32,
}

impl TryFrom<RawCanvas> for Canvas {
    type Error = ModelError;
    fn try_from(raw: RawCanvas) -> Result<Self, Self::Error> {
        Canvas::new(raw.width, raw.height)
    }
}

impl Canvas {
    pub fn new(width: u32, height: u32) -> Result<Self, ModelError> {
        if width == 0 || height == 0 {
            return Err(ModelError::EmptyCanvas(width, height));
        }
        Ok(Self { width, height })
    }

    pub fn pixels(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height)
    }
}

impl Default for Canvas {
    fn default() -> Self {
        Self {
            width: 512,
            height: 512,
        }
    }
}

/// Axis-aligned box in fractional pixels, `[x1, y1, x2, y2]`, origin top-left.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, ModelError> {
        let finite = [x1, y1, x2, y2].iter().all(|v| v.is_finite());
        if !finite || x1 >= x2 || y1 >= y2 {
            return Err(ModelError::InvalidBox(x1, y1, x2, y2));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    /// `[x, y, width, height]`.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = ModelError;
    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDetected")]
pub struct DetectedObject {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Deserialize)]
struct RawDetected {
    label: String,
    #[serde(rename = "box")]
    bbox: BBox,
    score: f64,
}

impl TryFrom<RawDetected> for DetectedObject {
    type Error = ModelError;
    fn try_from(raw: RawDetected) -> Result<Self, Self::Error> {
        DetectedObject::new(raw.label, raw.bbox, raw.score)
    }
}

impl DetectedObject {
    /// Scores outside `[0, 1]` are clamped; detectors that report raw logits
    /// in that range pass through untouched.
    pub fn new(label: impl Into<String>, bbox: BBox, score: f64) -> Result<Self, ModelError> {
        let label = label.into().trim().to_string();
        if label.is_empty() {
            return Err(ModelError::EmptyObjectLabel);
        }
        if !score.is_finite() {
            return Err(ModelError::NonFiniteScore(score));
        }
        Ok(Self {
            label,
            bbox,
            score: score.clamp(0.0, 1.0),
        })
    }
}

/// Binary mask as alternating run lengths over row-major pixels, starting
/// with a run of background (possibly zero-length).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawRle", into = "RawRle")]
pub struct Rle {
    width: u32,
    height: u32,
    counts: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
struct RawRle {
    /// `[height, width]`
    size: [u32; 2],
    counts: Vec<u32>,
}

impl TryFrom<RawRle> for Rle {
    type Error = ModelError;
    fn try_from(raw: RawRle) -> Result<Self, Self::Error> {
        Rle::from_counts(raw.size[1], raw.size[0], raw.counts)
    }
}

impl From<Rle> for RawRle {
    fn from(r: Rle) -> Self {
        RawRle {
            size: [r.height, r.width],
            counts: r.counts,
        }
    }
}

impl Rle {
    pub fn from_counts(width: u32, height: u32, counts: Vec<u32>) -> Result<Self, ModelError> {
        let covered: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        let expected = u64::from(width) * u64::from(height);
        if covered != expected {
            return Err(ModelError::MaskSize { covered, expected });
        }
        Ok(Self {
            width,
            height,
            counts,
        })
    }

    /// Panics if `bits.len() != width * height`.
    pub fn encode(width: u32, height: u32, bits: &[bool]) -> Self {
        assert_eq!(bits.len() as u64, u64::from(width) * u64::from(height));
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for &bit in bits {
            if bit == current {
                run += 1;
            } else {
                counts.push(run);
                current = bit;
                run = 1;
            }
        }
        counts.push(run);
        Self {
            width,
            height,
            counts,
        }
    }

    /// Mask covering the pixels whose centres fall inside `bbox`.
    pub fn from_box(canvas: Canvas, bbox: &BBox) -> Self {
        let (x0, x1) = pixel_span(bbox.x1(), bbox.x2(), canvas.width);
        let (y0, y1) = pixel_span(bbox.y1(), bbox.y2(), canvas.height);
        let mut bits = vec![false; canvas.pixels() as usize];
        for y in y0..y1 {
            let row = y as usize * canvas.width as usize;
            for x in x0..x1 {
                bits[row + x as usize] = true;
            }
        }
        Self::encode(canvas.width, canvas.height, &bits)
    }

    pub fn decode(&self) -> Vec<bool> {
        let mut bits = Vec::with_capacity((self.width as usize) * (self.height as usize));
        let mut value = false;
        for &run in &self.counts {
            bits.extend(std::iter::repeat_n(value, run as usize));
            value = !value;
        }
        bits
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Number of foreground pixels.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }
}

/// Pixel indices `[start, end)` whose centres lie inside `[lo, hi]`.
pub(crate) fn pixel_span(lo: f64, hi: f64, limit: u32) -> (u32, u32) {
    let start = (lo - 0.5).ceil().max(0.0);
    let end = (hi - 0.5).floor() + 1.0;
    let end = end.clamp(0.0, f64::from(limit));
    let start = start.min(end);
    (start as u32, end as u32)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentMask {
    pub box_index: usize,
    pub rle: Rle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBundle")]
pub struct AnnotationBundle {
    pub caption: String,
    pub objects: Vec<DetectedObject>,
    pub masks: Vec<SegmentMask>,
}

#[derive(Deserialize)]
struct RawBundle {
    caption: String,
    objects: Vec<DetectedObject>,
    masks: Vec<SegmentMask>,
}

impl TryFrom<RawBundle> for AnnotationBundle {
    type Error = ModelError;
    fn try_from(raw: RawBundle) -> Result<Self, Self::Error> {
        AnnotationBundle::new(raw.caption, raw.objects, raw.masks)
    }
}

impl AnnotationBundle {
    pub fn new(
        caption: impl Into<String>,
        objects: Vec<DetectedObject>,
        masks: Vec<SegmentMask>,
    ) -> Result<Self, ModelError> {
        for (i, mask) in masks.iter().enumerate() {
            if mask.box_index >= objects.len() {
                return Err(ModelError::MaskIndex {
                    mask: i,
                    index: mask.box_index,
                    boxes: objects.len(),
                });
            }
        }
        Ok(Self {
            caption: caption.into(),
            objects,
            masks,
        })
    }

    /// Distinct object labels in first-appearance order.
    pub fn labels(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for obj in &self.objects {
            if !out.iter().any(|l| l.eq_ignore_ascii_case(&obj.label)) {
                out.push(obj.label.clone());
            }
        }
        out
    }
}

/// A brainstormed scene: one background phrase, the objects it should hold
/// and a sentence describing it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub background: String,
    pub objects: Vec<String>,
    pub description: String,
}

impl SceneSpec {
    pub fn new(
        background: impl Into<String>,
        objects: Vec<String>,
        description: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let background = background.into().trim().to_string();
        if background.is_empty() {
            return Err(ModelError::EmptyBackground);
        }
        if background.split_whitespace().count() > MAX_BACKGROUND_WORDS {
            return Err(ModelError::LongBackground(background));
        }
        let objects: Vec<String> = objects
            .into_iter()
            .map(|o| o.trim().to_string())
            .filter(|o| !o.is_empty())
            .collect();
        if objects.is_empty() {
            return Err(ModelError::NoSceneObjects);
        }
        Ok(Self {
            background,
            objects,
            description: description.into().trim().to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxCandidate {
    pub label: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub relationship: String,
}

/// Metadata for a stored or in-flight image. `id` is the SHA-256 of the PNG
/// bytes, so identical pixels encoded by the same encoder share an id.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub locator: String,
}

impl ImageRef {
    pub fn canvas(&self) -> Canvas {
        Canvas {
            width: self.width,
            height: self.height,
        }
    }
}

/// An image together with its encoded PNG payload.
#[derive(Clone, PartialEq, Eq)]
pub struct Image {
    meta: ImageRef,
    png: Arc<[u8]>,
}

impl fmt::Debug for Image {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Image")
            .field("meta", &self.meta)
            .field("png_len", &self.png.len())
            .finish()
    }
}

impl Image {
    pub fn from_rgb(pixels: &RgbImage) -> Result<Self, ModelError> {
        let mut buf = Cursor::new(Vec::new());
        pixels
            .write_to(&mut buf, image::ImageFormat::Png)
            .map_err(|e| ModelError::Encode(e.to_string()))?;
        Self::from_png(buf.into_inner())
    }

    pub fn from_png(bytes: impl Into<Arc<[u8]>>) -> Result<Self, ModelError> {
        let png: Arc<[u8]> = bytes.into();
        let id = content_hash(&png)?;
        let reader = image::ImageReader::with_format(Cursor::new(&png[..]), image::ImageFormat::Png);
        let (width, height) = reader
            .into_dimensions()
            .map_err(|e| ModelError::Decode(e.to_string()))?;
        let locator = format!("images/{id}.png");
        Ok(Self {
            meta: ImageRef {
                id,
                width,
                height,
                locator,
            },
            png,
        })
    }

    pub fn meta(&self) -> &ImageRef {
        &self.meta
    }

    pub fn id(&self) -> &str {
        &self.meta.id
    }

    pub fn canvas(&self) -> Canvas {
        self.meta.canvas()
    }

    pub fn png(&self) -> &[u8] {
        &self.png
    }

    pub fn to_rgb(&self) -> Result<RgbImage, ModelError> {
        image::load_from_memory_with_format(&self.png, image::ImageFormat::Png)
            .map(|img| img.to_rgb8())
            .map_err(|e| ModelError::Decode(e.to_string()))
    }
}

/// One step of the edit history that produced a record's image. Every step
/// names its parent image and the image it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum EditStep {
    Init {
        prompt: String,
        seed: u64,
        candidates: u32,
        candidate: u32,
        output: String,
    },
    BackgroundEdit {
        parent: String,
        instruction: String,
        seed: u64,
        output: String,
    },
    ObjectFill {
        parent: String,
        label: String,
        #[serde(rename = "box")]
        bbox: BBox,
        relationship: String,
        seed: u64,
        output: String,
    },
}

impl EditStep {
    pub fn output(&self) -> &str {
        match self {
            EditStep::Init { output, .. }
            | EditStep::BackgroundEdit { output, .. }
            | EditStep::ObjectFill { output, .. } => output,
        }
    }

    pub fn parent(&self) -> Option<&str> {
        match self {
            EditStep::Init { .. } => None,
            EditStep::BackgroundEdit { parent, .. } | EditStep::ObjectFill { parent, .. } => {
                Some(parent)
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EditStep::Init { .. } => "init",
            EditStep::BackgroundEdit { .. } => "background_edit",
            EditStep::ObjectFill { .. } => "object_fill",
        }
    }
}

/// Record id derived from the lineage alone.
pub fn lineage_id(lineage: &[EditStep]) -> String {
    let bytes = serde_json::to_vec(lineage).expect("lineage serializes");
    content_hash(&bytes).expect("serialized lineage is never empty")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub iteration: u32,
    pub scene: Option<u32>,
    pub image: ImageRef,
    pub annotations: AnnotationBundle,
    pub lineage: Vec<EditStep>,
    pub quality: QualityReport,
}

impl DatasetRecord {
    /// Labels introduced by the lineage's fill steps, in order.
    pub fn filled_labels(&self) -> Vec<&str> {
        self.lineage
            .iter()
            .filter_map(|s| match s {
                EditStep::ObjectFill { label, .. } => Some(label.as_str()),
                _ => None,
            })
            .collect()
    }
}
