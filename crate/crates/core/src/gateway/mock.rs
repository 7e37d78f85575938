//! Deterministic in-process backends sharing one world.
//!
//! Images are flat-coloured backgrounds with solid rectangles for objects.
//! Every image the world produces is registered by id together with its
//! background tag and placed objects, and the perception capabilities answer
//! from that registry rather than from pixels.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Arc, Mutex, MutexGuard};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::mock_chat;
use super::{
    BackendEndpoint, CapabilityKind, CaptionReply, ChatReply, DetectReply, EditRequest, FinishReason, GenReply,
    GenRequest, ImageReply, InpaintRequest, Reply, Request, ScoreReply, SegmentReply, Transport, TransportError,
};
use crate::geometry::iou;
use crate::model::{pixel_span, BBox, Canvas, DetectedObject, Image, Rle, SegmentMask};

/// Registry entry for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub canvas: Canvas,
    pub background: String,
    pub objects: Vec<DetectedObject>,
}

impl SceneState {
    pub fn render(&self) -> RgbImage {
        let bg = background_color(&self.background);
        let mut img = RgbImage::from_pixel(self.canvas.width, self.canvas.height, Rgb(bg));
        for obj in &self.objects {
            let color = Rgb(object_color(bg, &obj.label));
            let (x0, x1) = pixel_span(obj.bbox.x1(), obj.bbox.x2(), self.canvas.width);
            let (y0, y1) = pixel_span(obj.bbox.y1(), obj.bbox.y2(), self.canvas.height);
            for y in y0..y1 {
                for x in x0..x1 {
                    img.put_pixel(x, y, color);
                }
            }
        }
        img
    }

    /// Words describing everything registered in the image.
    fn vocabulary(&self) -> BTreeSet<String> {
        let mut words = content_words(&self.background);
        for o in &self.objects {
            words.extend(content_words(&o.label));
        }
        words
    }
}

#[derive(Debug, Default)]
pub(super) struct Lexicon {
    pub objects: BTreeSet<String>,
    pub backgrounds: BTreeSet<String>,
}

impl Lexicon {
    fn with_defaults() -> Self {
        let mut lex = Lexicon::default();
        for o in DEFAULT_OBJECTS {
            lex.objects.insert((*o).to_string());
        }
        for b in DEFAULT_BACKGROUNDS {
            lex.backgrounds.insert((*b).to_string());
        }
        for (bg, objs) in mock_chat::THEMES {
            lex.backgrounds.insert((*bg).to_string());
            lex.objects.extend(objs.iter().map(|o| o.to_string()));
        }
        lex
    }

    pub fn learn_object(&mut self, term: &str) {
        let t = term.trim().to_lowercase();
        if !t.is_empty() {
            self.backgrounds.remove(&t);
            self.objects.insert(t);
        }
    }

    pub fn find_objects(&self, text: &str) -> Vec<String> {
        find_terms(&self.objects, text)
    }

    pub fn find_background(&self, text: &str) -> Option<String> {
        find_terms(&self.backgrounds, text).into_iter().next()
    }
}

const DEFAULT_OBJECTS: &[&str] = &[
    "dog", "cat", "bench", "bird", "horse", "ball", "frisbee", "tree", "rock", "rocks", "boat", "car", "chair",
    "table", "lamp", "flower", "umbrella", "person", "cow", "sheep",
];

const DEFAULT_BACKGROUNDS: &[&str] = &[
    "field", "park", "meadow", "beach", "forest", "mountain", "desert", "street", "garden", "temple", "river",
    "lake", "kitchen", "snow", "studio",
];

const DEFAULT_BACKGROUND: &str = "studio";
const MAX_GENERATED_OBJECTS: usize = 3;

/// Word-boundary matches of `terms` in `text`, longest terms first,
/// non-overlapping, returned in order of appearance without repeats.
fn find_terms(terms: &BTreeSet<String>, text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut sorted: Vec<&String> = terms.iter().collect();
    sorted.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let mut hits: Vec<(usize, String)> = Vec::new();
    for term in sorted {
        for (pos, _) in lower.match_indices(term.as_str()) {
            let end = pos + term.len();
            let before = lower[..pos].chars().next_back();
            let after = lower[end..].chars().next();
            if before.is_some_and(char::is_alphanumeric) || after.is_some_and(char::is_alphanumeric) {
                continue;
            }
            if taken.iter().any(|&(s, e)| pos < e && s < end) {
                continue;
            }
            taken.push((pos, end));
            hits.push((pos, term.clone()));
        }
    }
    hits.sort();
    let mut seen = BTreeSet::new();
    hits.into_iter().filter(|(_, t)| seen.insert(t.clone())).map(|(_, t)| t).collect()
}

const STOPWORDS: &[&str] = &[
    "a", "an", "the", "of", "in", "on", "at", "with", "and", "or", "to", "is", "are", "photo", "image", "picture",
    "scene", "empty",
];

pub(super) fn content_words(text: &str) -> BTreeSet<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(w))
        .map(str::to_string)
        .collect()
}

fn digest(parts: &[&[u8]]) -> [u8; 32] {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().into()
}

pub(super) fn rng_for(seed: u64, parts: &[&[u8]]) -> ChaCha8Rng {
    let seed_bytes = seed.to_le_bytes();
    let mut all: Vec<&[u8]> = vec![&seed_bytes];
    all.extend_from_slice(parts);
    ChaCha8Rng::from_seed(digest(&all))
}

/// Flat colour keyed by background tag, mid-range so object offsets never clip.
pub fn background_color(tag: &str) -> [u8; 3] {
    let d = digest(&[b"background", tag.as_bytes()]);
    [60 + d[0] % 141, 60 + d[1] % 141, 60 + d[2] % 141]
}

/// Background colour shifted by a label-keyed offset of 15 to 40 per channel.
pub fn object_color(background: [u8; 3], label: &str) -> [u8; 3] {
    let d = digest(&[b"object", label.as_bytes()]);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let magnitude = 15 + i16::from(d[c] % 26);
        let signed = if d[c + 3].is_multiple_of(2) { magnitude } else { -magnitude };
        out[c] = (i16::from(background[c]) + signed).clamp(0, 255) as u8;
    }
    out
}

fn round2(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn article(word: &str) -> &'static str {
    match word.chars().next() {
        Some('a' | 'e' | 'i' | 'o' | 'u') => "an",
        _ => "a",
    }
}

#[derive(Debug)]
struct World {
    scenes: HashMap<String, SceneState>,
    lexicon: Lexicon,
    scripts: Vec<(String, String)>,
    failures: BTreeMap<CapabilityKind, (TransportError, u32)>,
    calls: BTreeMap<CapabilityKind, u64>,
}

/// One coherent set of mock backends. Implements [`Transport`] for every
/// capability; registry mutations are serialised by an internal lock.
#[derive(Debug)]
pub struct MockWorld {
    seed: u64,
    state: Mutex<World>,
}

pub fn make_mock_world(seed: u64) -> Arc<MockWorld> {
    Arc::new(MockWorld::new(seed))
}

fn reject(message: impl Into<String>) -> TransportError {
    TransportError::Rejected {
        status: None,
        message: message.into(),
    }
}

impl MockWorld {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            state: Mutex::new(World {
                scenes: HashMap::new(),
                lexicon: Lexicon::with_defaults(),
                scripts: Vec::new(),
                failures: BTreeMap::new(),
                calls: BTreeMap::new(),
            }),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn lock(&self) -> MutexGuard<'_, World> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Queues a chat reply for the next prompt whose text contains `needle`
    /// (an empty needle matches any prompt). Each script is used once.
    pub fn script_chat(&self, needle: impl Into<String>, reply: impl Into<String>) {
        self.lock().scripts.push((needle.into(), reply.into()));
    }

    /// Makes the next `times` calls to `kind` fail with `error`.
    pub fn inject_failure(&self, kind: CapabilityKind, error: TransportError, times: u32) {
        self.lock().failures.insert(kind, (error, times));
    }

    pub fn calls(&self, kind: CapabilityKind) -> u64 {
        self.lock().calls.get(&kind).copied().unwrap_or(0)
    }

    /// Adds an object term so generation prompts mentioning it place it.
    pub fn learn_object(&self, term: &str) {
        self.lock().lexicon.learn_object(term);
    }

    pub fn scene(&self, id: &str) -> Option<SceneState> {
        self.lock().scenes.get(id).cloned()
    }

    /// Renders and registers an arbitrary scene.
    pub fn adopt(&self, scene: SceneState) -> Image {
        let img = Image::from_rgb(&scene.render()).expect("rendered scene encodes");
        self.lock().scenes.insert(img.id().to_string(), scene);
        img
    }

    /// Registers externally produced pixels under a scene description.
    pub fn adopt_pixels(&self, pixels: &RgbImage, background: &str, objects: Vec<DetectedObject>) -> Image {
        let img = Image::from_rgb(pixels).expect("pixels encode");
        let scene = SceneState {
            canvas: img.canvas(),
            background: background.to_string(),
            objects,
        };
        self.lock().scenes.insert(img.id().to_string(), scene);
        img
    }

    /// A copy of `image` with every object labelled `label` removed.
    pub fn erase_object(&self, image: &Image, label: &str) -> Option<Image> {
        let mut scene = self.scene(image.id())?;
        scene.objects.retain(|o| !o.label.eq_ignore_ascii_case(label));
        Some(self.adopt(scene))
    }

    fn lookup(&self, image: &Image) -> Result<SceneState, TransportError> {
        self.scene(image.id())
            .ok_or_else(|| reject(format!("unknown image {}", image.id())))
    }

    fn chat(&self, request: &crate::prompt::PromptRequest) -> ChatReply {
        let mut w = self.lock();
        mock_chat::learn(&mut w.lexicon, request);
        let text = request
            .messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n");
        if let Some(pos) = w.scripts.iter().position(|(needle, _)| text.contains(needle.as_str())) {
            let (_, reply) = w.scripts.remove(pos);
            return ChatReply {
                finish_reason: if reply.is_empty() {
                    FinishReason::Length
                } else {
                    FinishReason::Stop
                },
                text: reply,
            };
        }
        ChatReply {
            text: mock_chat::respond(self.seed, request),
            finish_reason: FinishReason::Stop,
        }
    }

    fn generate(&self, req: &GenRequest) -> GenReply {
        let (labels, background) = {
            let w = self.lock();
            let mut labels = w.lexicon.find_objects(&req.prompt);
            labels.truncate(MAX_GENERATED_OBJECTS);
            let bg = w.lexicon.find_background(&req.prompt);
            (labels, bg.unwrap_or_else(|| DEFAULT_BACKGROUND.to_string()))
        };
        let images = (0..req.candidates)
            .map(|j| {
                let mut rng = rng_for(
                    self.seed,
                    &[b"txt2img", req.prompt.as_bytes(), &req.seed.to_le_bytes(), &j.to_le_bytes()],
                );
                let objects = place_objects(&mut rng, req.canvas, &labels);
                self.adopt(SceneState {
                    canvas: req.canvas,
                    background: background.clone(),
                    objects,
                })
            })
            .collect();
        GenReply { images }
    }

    fn edit(&self, req: &EditRequest) -> Result<ImageReply, TransportError> {
        let mut scene = self.lookup(&req.image)?;
        let lower = req.instruction.to_lowercase();
        let named = lower
            .find("background to ")
            .map(|i| lower[i + "background to ".len()..].trim().trim_end_matches('.').trim().to_string())
            .filter(|s| !s.is_empty());
        let background = match named {
            Some(bg) => bg,
            None => self
                .lock()
                .lexicon
                .find_background(&req.instruction)
                .ok_or_else(|| reject("instruction names no background"))?,
        };
        self.lock().lexicon.backgrounds.insert(background.clone());
        scene.background = background;
        Ok(ImageReply { image: self.adopt(scene) })
    }

    fn inpaint(&self, req: &InpaintRequest) -> Result<ImageReply, TransportError> {
        let mut scene = self.lookup(&req.image)?;
        let mut rng = rng_for(
            self.seed,
            &[b"inpaint", req.image.id().as_bytes(), req.label.as_bytes(), &req.seed.to_le_bytes()],
        );
        let score = round2(rng.gen_range(0.70..0.95));
        let obj = DetectedObject::new(req.label.clone(), req.bbox, score).map_err(|e| reject(e.to_string()))?;
        scene.objects.push(obj);
        self.lock().lexicon.learn_object(&req.label);
        Ok(ImageReply { image: self.adopt(scene) })
    }

    fn detect(&self, image: &Image, labels: &[String]) -> Result<DetectReply, TransportError> {
        let scene = self.lookup(image)?;
        let objects = scene
            .objects
            .into_iter()
            .filter(|o| labels.iter().any(|q| q.trim().eq_ignore_ascii_case(&o.label)))
            .collect();
        Ok(DetectReply { objects })
    }

    fn caption(&self, image: &Image) -> Result<CaptionReply, TransportError> {
        let scene = self.lookup(image)?;
        Ok(CaptionReply {
            caption: caption_for(&scene),
        })
    }

    fn score(&self, image: &Image, text: &str) -> Result<ScoreReply, TransportError> {
        let scene = self.lookup(image)?;
        let reg = scene.vocabulary();
        let words = content_words(text);
        let similarity = if reg.is_empty() || words.is_empty() {
            0.0
        } else {
            let shared = words.intersection(&reg).count() as f64;
            shared / ((words.len() * reg.len()) as f64).sqrt()
        };
        Ok(ScoreReply { similarity })
    }
}

/// "a photo of a dog, a ball and a bench in a field"
pub fn caption_for(scene: &SceneState) -> String {
    let mut labels: Vec<&str> = Vec::new();
    for o in &scene.objects {
        if !labels.contains(&o.label.as_str()) {
            labels.push(&o.label);
        }
    }
    let bg = &scene.background;
    if labels.is_empty() {
        return format!("an empty {bg}");
    }
    let items: Vec<String> = labels.iter().map(|l| format!("{} {l}", article(l))).collect();
    let listed = match items.split_last() {
        Some((last, rest)) if !rest.is_empty() => format!("{} and {last}", rest.join(", ")),
        _ => items[0].clone(),
    };
    format!("a photo of {listed} in {} {bg}", article(bg))
}

fn place_objects(rng: &mut ChaCha8Rng, canvas: Canvas, labels: &[String]) -> Vec<DetectedObject> {
    let (cw, ch) = (f64::from(canvas.width), f64::from(canvas.height));
    let max_w = (cw * 0.45).max(1.0);
    let max_h = (ch * 0.45).max(1.0);
    let mut placed: Vec<DetectedObject> = Vec::new();
    for label in labels {
        let mut best = None;
        for _ in 0..50 {
            let w = round2(rng.gen_range(max_w * 0.5..=max_w));
            let h = round2(rng.gen_range(max_h * 0.5..=max_h));
            let x = round2(rng.gen_range(0.0..=(cw - w).max(0.0)));
            let y = round2(rng.gen_range(0.0..=(ch - h).max(0.0)));
            let Ok(b) = BBox::new(x, y, round2(x + w).min(cw), round2(y + h).min(ch)) else {
                continue;
            };
            let clear = placed.iter().all(|p| iou(&p.bbox, &b) <= 0.1);
            best = Some(b);
            if clear {
                break;
            }
        }
        if let Some(b) = best {
            let score = round2(rng.gen_range(0.80..0.95));
            placed.push(DetectedObject::new(label.clone(), b, score).expect("score in range"));
        }
    }
    placed
}

impl Transport for MockWorld {
    fn send(&self, endpoint: &BackendEndpoint, request: &Request) -> Result<Reply, TransportError> {
        let kind = request.kind();
        {
            let mut w = self.lock();
            *w.calls.entry(kind).or_default() += 1;
            if let Some((err, left)) = w.failures.get_mut(&kind) {
                let err = err.clone();
                *left -= 1;
                if *left == 0 {
                    w.failures.remove(&kind);
                }
                return Err(err);
            }
        }
        debug_assert_eq!(endpoint.kind, kind);
        Ok(match request {
            Request::Chat(p) => Reply::Chat(self.chat(p)),
            Request::TextToImage(g) => Reply::Images(self.generate(g)),
            Request::InstructEdit(e) => Reply::Image(self.edit(e)?),
            Request::RegionInpaint(r) => Reply::Image(self.inpaint(r)?),
            Request::Detect(d) => Reply::Detect(self.detect(&d.image, &d.labels)?),
            Request::Segment(s) => {
                let canvas = s.image.canvas();
                Reply::Segment(SegmentReply {
                    masks: s
                        .boxes
                        .iter()
                        .enumerate()
                        .map(|(i, b)| SegmentMask {
                            box_index: i,
                            rle: Rle::from_box(canvas, b),
                        })
                        .collect(),
                })
            }
            Request::Caption(c) => Reply::Caption(self.caption(&c.image)?),
            Request::Score(s) => Reply::Score(self.score(&s.image, &s.text)?),
        })
    }
}
