//! Model capability interfaces and the machinery to reach them.
//!
//! Every model the pipeline talks to sits behind one of eight capabilities.
//! A [`Transport`] carries a [`Request`] to a backend and brings back a
//! [`Reply`]; [`invoke`] adds kind checking, reply validation and retries with
//! exponential backoff on transient failures. [`Gateway`] routes each
//! capability to its endpoint and offers typed helpers.

pub mod http;
pub mod mock;
mod mock_chat;
pub mod wire;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::model::{BBox, Canvas, DetectedObject, Image, SegmentMask};
use crate::prompt::PromptRequest;

pub use mock::{make_mock_world, MockWorld};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapabilityKind {
    Chat,
    TextToImage,
    InstructEdit,
    RegionInpaint,
    Detect,
    Segment,
    Caption,
    Score,
}

impl CapabilityKind {
    pub const ALL: [CapabilityKind; 8] = [
        CapabilityKind::Chat,
        CapabilityKind::TextToImage,
        CapabilityKind::InstructEdit,
        CapabilityKind::RegionInpaint,
        CapabilityKind::Detect,
        CapabilityKind::Segment,
        CapabilityKind::Caption,
        CapabilityKind::Score,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            CapabilityKind::Chat => "chat",
            CapabilityKind::TextToImage => "text_to_image",
            CapabilityKind::InstructEdit => "instruct_edit",
            CapabilityKind::RegionInpaint => "region_inpaint",
            CapabilityKind::Detect => "detect",
            CapabilityKind::Segment => "segment",
            CapabilityKind::Caption => "caption",
            CapabilityKind::Score => "score",
        }
    }
}

impl fmt::Display for CapabilityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CapabilityKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CapabilityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown capability {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub kind: CapabilityKind,
    /// `http(s)://host:port` or `mock:`.
    pub base_url: String,
    pub timeout_secs: f64,
    pub max_retries: u32,
}

impl BackendEndpoint {
    pub fn new(kind: CapabilityKind, base_url: impl Into<String>) -> Self {
        Self {
            kind,
            base_url: base_url.into(),
            timeout_secs: 60.0,
            max_retries: 2,
        }
    }

    pub fn mock(kind: CapabilityKind) -> Self {
        Self::new(kind, "mock:")
    }

    pub fn is_mock(&self) -> bool {
        self.base_url.starts_with("mock:")
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.timeout_secs.is_finite() && self.timeout_secs > 0.0) {
            return Err(format!("{} endpoint timeout must be positive", self.kind));
        }
        if !self.is_mock() && !self.base_url.starts_with("http://") && !self.base_url.starts_with("https://") {
            return Err(format!("{} endpoint url {:?} is neither http(s) nor mock:", self.kind, self.base_url));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    ContentFilter,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatReply {
    pub text: String,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub prompt: String,
    pub canvas: Canvas,
    pub seed: u64,
    pub candidates: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReply {
    pub images: Vec<Image>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub image: Image,
    pub instruction: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InpaintRequest {
    pub image: Image,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub label: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReply {
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: Image,
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectReply {
    pub objects: Vec<DetectedObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: Image,
    pub boxes: Vec<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentReply {
    pub masks: Vec<SegmentMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub image: Image,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionReply {
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRequest {
    pub image: Image,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReply {
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Request {
    Chat(PromptRequest),
    TextToImage(GenRequest),
    InstructEdit(EditRequest),
    RegionInpaint(InpaintRequest),
    Detect(DetectRequest),
    Segment(SegmentRequest),
    Caption(CaptionRequest),
    Score(ScoreRequest),
}

impl Request {
    pub fn kind(&self) -> CapabilityKind {
        match self {
            Request::Chat(_) => CapabilityKind::Chat,
            Request::TextToImage(_) => CapabilityKind::TextToImage,
            Request::InstructEdit(_) => CapabilityKind::InstructEdit,
            Request::RegionInpaint(_) => CapabilityKind::RegionInpaint,
            Request::Detect(_) => CapabilityKind::Detect,
            Request::Segment(_) => CapabilityKind::Segment,
            Request::Caption(_) => CapabilityKind::Caption,
            Request::Score(_) => CapabilityKind::Score,
        }
    }

    /// Request-side invariants, checked before anything is sent.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            Request::Chat(p) if p.messages.is_empty() => Err("chat request has no messages".into()),
            Request::Chat(p) if !(p.temperature >= 0.0) => Err("temperature must be >= 0".into()),
            Request::TextToImage(g) if g.candidates == 0 => Err("candidate count must be >= 1".into()),
            Request::InstructEdit(e) if e.instruction.trim().is_empty() => Err("edit instruction is empty".into()),
            Request::RegionInpaint(r) => {
                let c = r.image.canvas();
                let b = r.bbox;
                if b.x1() < 0.0 || b.y1() < 0.0 || b.x2() > f64::from(c.width) || b.y2() > f64::from(c.height) {
                    Err("inpaint box lies outside the canvas".into())
                } else if r.label.trim().is_empty() {
                    Err("inpaint label is empty".into())
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reply {
    Chat(ChatReply),
    Images(GenReply),
    Image(ImageReply),
    Detect(DetectReply),
    Segment(SegmentReply),
    Caption(CaptionReply),
    Score(ScoreReply),
}

impl Reply {
    /// Reply-side invariants against the request that produced it.
    pub fn validate_for(&self, request: &Request) -> Result<(), String> {
        match (request, self) {
            (Request::Chat(_), Reply::Chat(r)) => {
                if r.text.is_empty() && r.finish_reason == FinishReason::Stop {
                    return Err("empty chat reply with a normal finish".into());
                }
                Ok(())
            }
            (Request::TextToImage(g), Reply::Images(r)) => {
                if r.images.is_empty() {
                    return Err("text_to_image returned no images".into());
                }
                if r.images.iter().any(|img| img.canvas() != g.canvas) {
                    return Err("text_to_image image does not match the requested canvas".into());
                }
                Ok(())
            }
            (Request::InstructEdit(EditRequest { image, .. }), Reply::Image(r))
            | (Request::RegionInpaint(InpaintRequest { image, .. }), Reply::Image(r)) => {
                if r.image.canvas() != image.canvas() {
                    return Err("edited image changed canvas size".into());
                }
                Ok(())
            }
            (Request::Detect(_), Reply::Detect(_)) => Ok(()),
            (Request::Segment(s), Reply::Segment(r)) => {
                if r.masks.len() != s.boxes.len() {
                    return Err(format!("segment returned {} masks for {} boxes", r.masks.len(), s.boxes.len()));
                }
                let c = s.image.canvas();
                for (i, m) in r.masks.iter().enumerate() {
                    if m.box_index != i || m.rle.width() != c.width || m.rle.height() != c.height {
                        return Err(format!("mask {i} is misaligned with its box prompt or canvas"));
                    }
                }
                Ok(())
            }
            (Request::Caption(_), Reply::Caption(_)) => Ok(()),
            (Request::Score(_), Reply::Score(r)) => {
                if !r.similarity.is_finite() || !(-1.0..=1.0).contains(&r.similarity) {
                    return Err(format!("similarity {} outside [-1, 1]", r.similarity));
                }
                Ok(())
            }
            _ => Err("reply type does not match request".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TransportError {
    /// Connection failures, 5xx and 429: worth retrying.
    #[error("transient failure: {0}")]
    Transient(String),
    #[error("timed out")]
    Timeout,
    /// The backend refused the request as malformed; never retried.
    #[error("request rejected{}: {message}", status.map(|s| format!(" ({s})")).unwrap_or_default())]
    Rejected { status: Option<u16>, message: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
}

pub trait Transport: Send + Sync {
    fn send(&self, endpoint: &BackendEndpoint, request: &Request) -> Result<Reply, TransportError>;
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GatewayError {
    #[error("{request} request sent to a {endpoint} endpoint")]
    KindMismatch {
        endpoint: CapabilityKind,
        request: CapabilityKind,
    },
    #[error("no endpoint configured for {0}")]
    NoRoute(CapabilityKind),
    #[error("invalid {kind} request: {message}")]
    InvalidRequest { kind: CapabilityKind, message: String },
    #[error("{kind} backend timed out after {attempts} attempts")]
    Timeout { kind: CapabilityKind, attempts: u32 },
    #[error("{kind} backend unavailable after {attempts} attempts: {last}")]
    Unavailable {
        kind: CapabilityKind,
        attempts: u32,
        last: String,
    },
    #[error("{kind} backend rejected the request: {message}")]
    Rejected { kind: CapabilityKind, message: String },
    #[error("{kind} backend violated the protocol: {message}")]
    Protocol { kind: CapabilityKind, message: String },
}

impl GatewayError {
    pub fn kind(&self) -> CapabilityKind {
        match self {
            GatewayError::KindMismatch { endpoint, .. } => *endpoint,
            GatewayError::NoRoute(kind)
            | GatewayError::InvalidRequest { kind, .. }
            | GatewayError::Timeout { kind, .. }
            | GatewayError::Unavailable { kind, .. }
            | GatewayError::Rejected { kind, .. }
            | GatewayError::Protocol { kind, .. } => *kind,
        }
    }
}

/// Jitter-free exponential backoff: the n-th retry waits `base * factor^(n-1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Backoff {
    pub base: Duration,
    pub factor: f64,
}

impl Default for Backoff {
    fn default() -> Self {
        Self {
            base: Duration::from_millis(500),
            factor: 2.0,
        }
    }
}

impl Backoff {
    pub fn delay(&self, retry: u32) -> Duration {
        debug_assert!(retry >= 1);
        self.base.mul_f64(self.factor.powi(retry as i32 - 1))
    }

    /// Total sleep across `retries` retries.
    pub fn budget(&self, retries: u32) -> Duration {
        (1..=retries).map(|r| self.delay(r)).sum()
    }
}

/// Sends `request` to `endpoint`, retrying transient failures up to
/// `endpoint.max_retries` times. Rejections and protocol violations are
/// returned immediately.
pub fn invoke(
    endpoint: &BackendEndpoint,
    transport: &dyn Transport,
    request: &Request,
    backoff: Backoff,
) -> Result<Reply, GatewayError> {
    let kind = endpoint.kind;
    if request.kind() != kind {
        return Err(GatewayError::KindMismatch {
            endpoint: kind,
            request: request.kind(),
        });
    }
    request
        .validate()
        .map_err(|message| GatewayError::InvalidRequest { kind, message })?;

    let mut attempt = 0;
    loop {
        attempt += 1;
        let outcome = transport.send(endpoint, request);
        let retryable = match outcome {
            Ok(reply) => {
                reply
                    .validate_for(request)
                    .map_err(|message| GatewayError::Protocol { kind, message })?;
                return Ok(reply);
            }
            Err(TransportError::Rejected { message, .. }) => {
                return Err(GatewayError::Rejected { kind, message })
            }
            Err(TransportError::Protocol(message)) => return Err(GatewayError::Protocol { kind, message }),
            Err(err) => err,
        };
        if attempt > endpoint.max_retries {
            return Err(match retryable {
                TransportError::Timeout => GatewayError::Timeout { kind, attempts: attempt },
                other => GatewayError::Unavailable {
                    kind,
                    attempts: attempt,
                    last: other.to_string(),
                },
            });
        }
        log::debug!("{kind} attempt {attempt} failed ({retryable}); retrying");
        std::thread::sleep(backoff.delay(attempt));
    }
}

#[derive(Clone)]
struct Route {
    endpoint: BackendEndpoint,
    transport: Arc<dyn Transport>,
}

/// Capability routing table.
#[derive(Clone, Default)]
pub struct Gateway {
    routes: BTreeMap<CapabilityKind, Route>,
    backoff: Backoff,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("endpoints", &self.routes.values().map(|r| &r.endpoint).collect::<Vec<_>>())
            .field("backoff", &self.backoff)
            .finish()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_backoff(mut self, backoff: Backoff) -> Self {
        self.backoff = backoff;
        self
    }

    pub fn route(mut self, endpoint: BackendEndpoint, transport: Arc<dyn Transport>) -> Self {
        self.routes.insert(endpoint.kind, Route { endpoint, transport });
        self
    }

    /// Every capability served by `world`.
    pub fn mock(world: Arc<MockWorld>) -> Self {
        CapabilityKind::ALL.into_iter().fold(Self::new(), |g, kind| {
            g.route(BackendEndpoint::mock(kind), world.clone())
        })
    }

    /// Builds routes from configured endpoints. `mock:` endpoints share one
    /// world seeded with `mock_seed`; every other endpoint goes over HTTP.
    pub fn from_endpoints(
        endpoints: &BTreeMap<CapabilityKind, BackendEndpoint>,
        mock_seed: u64,
    ) -> Result<(Self, Option<Arc<MockWorld>>), String> {
        let mut world = None;
        let mut http: Option<Arc<http::HttpTransport>> = None;
        let mut gateway = Self::new();
        for kind in CapabilityKind::ALL {
            let endpoint = endpoints.get(&kind).ok_or_else(|| format!("no endpoint configured for {kind}"))?;
            endpoint.validate()?;
            let transport: Arc<dyn Transport> = if endpoint.is_mock() {
                world.get_or_insert_with(|| make_mock_world(mock_seed)).clone()
            } else {
                http.get_or_insert_with(|| Arc::new(http::HttpTransport::from_env())).clone()
            };
            gateway = gateway.route(endpoint.clone(), transport);
        }
        Ok((gateway, world))
    }

    pub fn endpoint(&self, kind: CapabilityKind) -> Option<&BackendEndpoint> {
        self.routes.get(&kind).map(|r| &r.endpoint)
    }

    pub fn invoke(&self, request: &Request) -> Result<Reply, GatewayError> {
        let kind = request.kind();
        let route = self.routes.get(&kind).ok_or(GatewayError::NoRoute(kind))?;
        invoke(&route.endpoint, route.transport.as_ref(), request, self.backoff)
    }

    pub fn chat(&self, prompt: &PromptRequest) -> Result<ChatReply, GatewayError> {
        match self.invoke(&Request::Chat(prompt.clone()))? {
            Reply::Chat(r) => Ok(r),
            _ => unreachable!("invoke validates the reply type"),
        }
    }

    pub fn text_to_image(&self, req: GenRequest) -> Result<Vec<Image>, GatewayError> {
        match self.invoke(&Request::TextToImage(req))? {
            Reply::Images(r) => Ok(r.images),
            _ => unreachable!("invoke validates the reply type"),
        }
    }

    pub fn instruct_edit(&self, req: EditRequest) -> Result<Image, GatewayError> {
        match self.invoke(&Request::InstructEdit(req))? {
            Reply::Image(r) => Ok(r.image),
            _ => unreachable!("invoke validates the reply type"),
        }
    }

    pub fn region_inpaint(&self, req: InpaintRequest) -> Result<Image, GatewayError> {
        match self.invoke(&Request::RegionInpaint(req))? {
            Reply::Image(r) => Ok(r.image),
            _ => unreachable!("invoke validates the reply type"),
        }
    }

    pub fn detect(&self, image: &Image, labels: &[String]) -> Result<Vec<DetectedObject>, GatewayError> {
        let req = DetectRequest {
            image: image.clone(),
            labels: labels.to_vec(),
        };
        match self.invoke(&Request::Detect(req))? {
            Reply::Detect(r) => Ok(r.objects),
            _ => unreachable!("invoke validates the reply type"),
        }
    }

    pub fn segment(&self, image: &Image, boxes: &[BBox]) -> Result<Vec<SegmentMask>, GatewayError> {
        let req = SegmentRequest {
            image: image.clone(),
            boxes: boxes.to_vec(),
        };
        match self.invoke(&Request::Segment(req))? {
            Reply::Segment(r) => Ok(r.masks),
            _ => unreachable!("invoke validates the reply type"),
        }
    }

    pub fn caption(&self, image: &Image) -> Result<String, GatewayError> {
        match self.invoke(&Request::Caption(CaptionRequest { image: image.clone() }))? {
            Reply::Caption(r) => Ok(r.caption),
            _ => unreachable!("invoke validates the reply type"),
        }
    }

    pub fn score(&self, image: &Image, text: &str) -> Result<f64, GatewayError> {
        let req = ScoreRequest {
            image: image.clone(),
            text: text.to_string(),
        };
        match self.invoke(&Request::Score(req))? {
            Reply::Score(r) => Ok(r.similarity),
            _ => unreachable!("invoke validates the reply type"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicU32, Ordering};
    use std::sync::Mutex;
    use std::time::Instant;

    /// Fails `failures` times with the given error, then answers.
    struct Flaky {
        failures: u32,
        error: TransportError,
        calls: AtomicU32,
        reply: Reply,
    }

    impl Transport for Flaky {
        fn send(&self, _: &BackendEndpoint, _: &Request) -> Result<Reply, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            if n < self.failures {
                Err(self.error.clone())
            } else {
                Ok(self.reply.clone())
            }
        }
    }

    fn chat_req() -> Request {
        Request::Chat(crate::prompt::render_visual_descriptor(
            &crate::model::LabelWord::new("dog").unwrap(),
        ))
    }

    fn ok_reply() -> Reply {
        Reply::Chat(ChatReply {
            text: "hi".into(),
            finish_reason: FinishReason::Stop,
        })
    }

    fn fast() -> Backoff {
        Backoff {
            base: Duration::from_millis(1),
            factor: 2.0,
        }
    }

    #[test]
    fn backoff_schedule() {
        let b = Backoff::default();
        assert_eq!(b.delay(1), Duration::from_millis(500));
        assert_eq!(b.delay(2), Duration::from_millis(1000));
        assert_eq!(b.delay(3), Duration::from_millis(2000));
        assert_eq!(b.budget(3), Duration::from_millis(3500));
    }

    #[test]
    fn retries_transient_then_succeeds() {
        let t = Flaky {
            failures: 2,
            error: TransportError::Transient("conn reset".into()),
            calls: AtomicU32::new(0),
            reply: ok_reply(),
        };
        let ep = BackendEndpoint::mock(CapabilityKind::Chat);
        assert_eq!(invoke(&ep, &t, &chat_req(), fast()).unwrap(), ok_reply());
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn gives_up_after_max_retries() {
        let t = Flaky {
            failures: 10,
            error: TransportError::Timeout,
            calls: AtomicU32::new(0),
            reply: ok_reply(),
        };
        let ep = BackendEndpoint {
            max_retries: 1,
            ..BackendEndpoint::mock(CapabilityKind::Chat)
        };
        assert_eq!(
            invoke(&ep, &t, &chat_req(), fast()),
            Err(GatewayError::Timeout {
                kind: CapabilityKind::Chat,
                attempts: 2
            })
        );
    }

    #[test]
    fn never_retries_rejections() {
        let t = Flaky {
            failures: 10,
            error: TransportError::Rejected {
                status: Some(400),
                message: "bad".into(),
            },
            calls: AtomicU32::new(0),
            reply: ok_reply(),
        };
        let ep = BackendEndpoint::mock(CapabilityKind::Chat);
        assert!(matches!(invoke(&ep, &t, &chat_req(), fast()), Err(GatewayError::Rejected { .. })));
        assert_eq!(t.calls.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn kind_mismatch_detected_before_sending() {
        let t = Flaky {
            failures: 0,
            error: TransportError::Timeout,
            calls: AtomicU32::new(0),
            reply: ok_reply(),
        };
        let ep = BackendEndpoint::mock(CapabilityKind::Segment);
        let img = Image::from_rgb(&image::RgbImage::new(4, 4)).unwrap();
        let req = Request::Detect(DetectRequest {
            image: img,
            labels: vec!["dog".into()],
        });
        assert_eq!(
            invoke(&ep, &t, &req, fast()),
            Err(GatewayError::KindMismatch {
                endpoint: CapabilityKind::Segment,
                request: CapabilityKind::Detect
            })
        );
        assert_eq!(t.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn reply_shape_is_a_protocol_error() {
        let t = Flaky {
            failures: 0,
            error: TransportError::Timeout,
            calls: AtomicU32::new(0),
            reply: Reply::Caption(CaptionReply { caption: "x".into() }),
        };
        let ep = BackendEndpoint::mock(CapabilityKind::Chat);
        assert!(matches!(invoke(&ep, &t, &chat_req(), fast()), Err(GatewayError::Protocol { .. })));
        let t = Flaky {
            reply: Reply::Chat(ChatReply {
                text: String::new(),
                finish_reason: FinishReason::Stop,
            }),
            ..t
        };
        assert!(matches!(invoke(&ep, &t, &chat_req(), fast()), Err(GatewayError::Protocol { .. })));
    }

    /// Sleeps for the configured time, recording nothing.
    struct Slow(Duration, Mutex<u32>);

    impl Transport for Slow {
        fn send(&self, ep: &BackendEndpoint, _: &Request) -> Result<Reply, TransportError> {
            *self.1.lock().unwrap() += 1;
            std::thread::sleep(self.0.min(ep.timeout()));
            Err(TransportError::Timeout)
        }
    }

    #[test]
    fn invoke_is_bounded_by_timeout_and_backoff() {
        let ep = BackendEndpoint {
            timeout_secs: 0.02,
            max_retries: 2,
            ..BackendEndpoint::mock(CapabilityKind::Chat)
        };
        let backoff = Backoff {
            base: Duration::from_millis(10),
            factor: 2.0,
        };
        let t = Slow(Duration::from_secs(5), Mutex::new(0));
        let start = Instant::now();
        let err = invoke(&ep, &t, &chat_req(), backoff).unwrap_err();
        let bound = ep.timeout() * 3 + backoff.budget(2) + Duration::from_millis(200);
        assert!(start.elapsed() <= bound, "{:?} > {:?}", start.elapsed(), bound);
        assert!(matches!(err, GatewayError::Timeout { attempts: 3, .. }));
    }

    #[test]
    fn endpoint_validation() {
        assert!(BackendEndpoint::mock(CapabilityKind::Chat).validate().is_ok());
        assert!(BackendEndpoint::new(CapabilityKind::Chat, "ftp://x").validate().is_err());
        let ep = BackendEndpoint {
            timeout_secs: 0.0,
            ..BackendEndpoint::mock(CapabilityKind::Chat)
        };
        assert!(ep.validate().is_err());
        assert_eq!("region_inpaint".parse::<CapabilityKind>(), Ok(CapabilityKind::RegionInpaint));
    }

    #[test]
    fn missing_route() {
        let g = Gateway::new();
        assert_eq!(g.invoke(&chat_req()), Err(GatewayError::NoRoute(CapabilityKind::Chat)));
    }
}
