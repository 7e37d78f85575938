//! JSON-over-HTTP encoding shared by the client and any model server.
//!
//! One POST route per capability. Every body is a JSON object carrying
//! `"schema_version": "1"` next to the capability's own fields. Images travel
//! inline as base64 PNG together with their id, size and locator.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::de::{DeserializeOwned, Error as _};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::{json, Map, Value};

use super::{
    BackendEndpoint, CapabilityKind, CaptionReply, CaptionRequest, ChatReply, DetectReply, DetectRequest,
    EditRequest, GenReply, GenRequest, ImageReply, InpaintRequest, Reply, Request, ScoreReply, ScoreRequest,
    SegmentReply, SegmentRequest, Transport, TransportError,
};
use crate::model::Image;

pub const SCHEMA_VERSION: &str = "1";

pub fn route(kind: CapabilityKind) -> &'static str {
    match kind {
        CapabilityKind::Chat => "/v1/chat",
        CapabilityKind::TextToImage => "/v1/txt2img",
        CapabilityKind::InstructEdit => "/v1/edit",
        CapabilityKind::RegionInpaint => "/v1/inpaint",
        CapabilityKind::Detect => "/v1/detect",
        CapabilityKind::Segment => "/v1/segment",
        CapabilityKind::Caption => "/v1/caption",
        CapabilityKind::Score => "/v1/score",
    }
}

pub fn kind_for_route(path: &str) -> Option<CapabilityKind> {
    CapabilityKind::ALL.into_iter().find(|k| route(*k) == path)
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WireError {
    #[error("unsupported schema_version {found:?}, expected {SCHEMA_VERSION:?}")]
    Version { found: Option<Value> },
    #[error("malformed body: {0}")]
    Malformed(String),
}

impl WireError {
    pub fn category(&self) -> &'static str {
        match self {
            WireError::Version { .. } => "schema_version",
            WireError::Malformed(_) => "malformed",
        }
    }
}

#[derive(Serialize, Deserialize)]
struct WireImage {
    id: String,
    width: u32,
    height: u32,
    locator: String,
    png_base64: String,
}

impl Serialize for Image {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let m = self.meta();
        WireImage {
            id: m.id.clone(),
            width: m.width,
            height: m.height,
            locator: m.locator.clone(),
            png_base64: B64.encode(self.png()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Image {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let w = WireImage::deserialize(d)?;
        let bytes = B64.decode(w.png_base64.as_bytes()).map_err(D::Error::custom)?;
        let img = Image::from_png(bytes).map_err(D::Error::custom)?;
        let m = img.meta();
        if m.id != w.id || m.width != w.width || m.height != w.height {
            return Err(D::Error::custom("image id or size does not match its payload"));
        }
        Ok(img)
    }
}

fn envelope<T: Serialize>(body: &T) -> Vec<u8> {
    let mut v = serde_json::to_value(body).expect("wire types serialize");
    let map = v.as_object_mut().expect("wire bodies are objects");
    map.insert("schema_version".into(), Value::String(SCHEMA_VERSION.into()));
    serde_json::to_vec(&v).expect("value serializes")
}

fn open_envelope(bytes: &[u8]) -> Result<Map<String, Value>, WireError> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
    let Value::Object(mut map) = v else {
        return Err(WireError::Malformed("body is not a JSON object".into()));
    };
    match map.remove("schema_version") {
        Some(Value::String(s)) if s == SCHEMA_VERSION => Ok(map),
        found => Err(WireError::Version { found }),
    }
}

fn body<T: DeserializeOwned>(map: Map<String, Value>) -> Result<T, WireError> {
    serde_json::from_value(Value::Object(map)).map_err(|e| WireError::Malformed(e.to_string()))
}

pub fn encode_request(request: &Request) -> Vec<u8> {
    match request {
        Request::Chat(r) => envelope(r),
        Request::TextToImage(r) => envelope(r),
        Request::InstructEdit(r) => envelope(r),
        Request::RegionInpaint(r) => envelope(r),
        Request::Detect(r) => envelope(r),
        Request::Segment(r) => envelope(r),
        Request::Caption(r) => envelope(r),
        Request::Score(r) => envelope(r),
    }
}

pub fn decode_request(kind: CapabilityKind, bytes: &[u8]) -> Result<Request, WireError> {
    let map = open_envelope(bytes)?;
    Ok(match kind {
        CapabilityKind::Chat => Request::Chat(body(map)?),
        CapabilityKind::TextToImage => Request::TextToImage(body::<GenRequest>(map)?),
        CapabilityKind::InstructEdit => Request::InstructEdit(body::<EditRequest>(map)?),
        CapabilityKind::RegionInpaint => Request::RegionInpaint(body::<InpaintRequest>(map)?),
        CapabilityKind::Detect => Request::Detect(body::<DetectRequest>(map)?),
        CapabilityKind::Segment => Request::Segment(body::<SegmentRequest>(map)?),
        CapabilityKind::Caption => Request::Caption(body::<CaptionRequest>(map)?),
        CapabilityKind::Score => Request::Score(body::<ScoreRequest>(map)?),
    })
}

pub fn encode_reply(reply: &Reply) -> Vec<u8> {
    match reply {
        Reply::Chat(r) => envelope(r),
        Reply::Images(r) => envelope(r),
        Reply::Image(r) => envelope(r),
        Reply::Detect(r) => envelope(r),
        Reply::Segment(r) => envelope(r),
        Reply::Caption(r) => envelope(r),
        Reply::Score(r) => envelope(r),
    }
}

pub fn decode_reply(kind: CapabilityKind, bytes: &[u8]) -> Result<Reply, WireError> {
    let map = open_envelope(bytes)?;
    Ok(match kind {
        CapabilityKind::Chat => Reply::Chat(body::<ChatReply>(map)?),
        CapabilityKind::TextToImage => Reply::Images(body::<GenReply>(map)?),
        CapabilityKind::InstructEdit | CapabilityKind::RegionInpaint => Reply::Image(body::<ImageReply>(map)?),
        CapabilityKind::Detect => Reply::Detect(body::<DetectReply>(map)?),
        CapabilityKind::Segment => Reply::Segment(body::<SegmentReply>(map)?),
        CapabilityKind::Caption => Reply::Caption(body::<CaptionReply>(map)?),
        CapabilityKind::Score => Reply::Score(body::<ScoreReply>(map)?),
    })
}

pub fn error_body(category: &str, message: &str) -> Vec<u8> {
    serde_json::to_vec(&json!({
        "schema_version": SCHEMA_VERSION,
        "error": { "category": category, "message": message },
    }))
    .expect("value serializes")
}

/// Extracts the message from an error body, falling back to the raw text.
pub fn error_message(bytes: &[u8]) -> String {
    serde_json::from_slice::<Value>(bytes)
        .ok()
        .and_then(|v| v.pointer("/error/message").and_then(Value::as_str).map(str::to_string))
        .unwrap_or_else(|| String::from_utf8_lossy(bytes).into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

/// Server-side dispatch: decodes a request for `path`, hands it to
/// `handler` and encodes the outcome. Lets any [`Transport`] (the mock world
/// included) stand behind a real HTTP listener.
pub fn serve(handler: &dyn Transport, method: &str, path: &str, bytes: &[u8]) -> ServerResponse {
    let respond = |status, body| ServerResponse { status, body };
    if path == "/healthz" {
        let names: Vec<_> = CapabilityKind::ALL.iter().map(|k| k.as_str()).collect();
        let body = json!({"schema_version": SCHEMA_VERSION, "status": "ok", "capabilities": names});
        return respond(200, serde_json::to_vec(&body).expect("value serializes"));
    }
    let Some(kind) = kind_for_route(path) else {
        return respond(404, error_body("not_found", &format!("no route {path}")));
    };
    if method != "POST" {
        return respond(405, error_body("method", "use POST"));
    }
    let request = match decode_request(kind, bytes) {
        Ok(r) => r,
        Err(e) => return respond(400, error_body(e.category(), &e.to_string())),
    };
    if let Err(message) = request.validate() {
        return respond(400, error_body("invalid_request", &message));
    }
    let endpoint = BackendEndpoint::mock(kind);
    match handler.send(&endpoint, &request) {
        Ok(reply) => respond(200, encode_reply(&reply)),
        Err(TransportError::Rejected { status, message }) => {
            respond(status.unwrap_or(422), error_body("rejected", &message))
        }
        Err(TransportError::Transient(m)) => respond(503, error_body("unavailable", &m)),
        Err(TransportError::Timeout) => respond(504, error_body("timeout", "backend timed out")),
        Err(TransportError::Protocol(m)) => respond(500, error_body("internal", &m)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::FinishReason;
    use crate::model::{BBox, Canvas, DetectedObject, Rle, SegmentMask};
    use crate::prompt::render_visual_descriptor;

    fn img() -> Image {
        Image::from_rgb(&image::RgbImage::from_pixel(8, 6, image::Rgb([1, 2, 3]))).unwrap()
    }

    fn requests() -> Vec<Request> {
        let b = BBox::new(1.0, 1.0, 5.0, 4.0).unwrap();
        vec![
            Request::Chat(render_visual_descriptor(&crate::model::LabelWord::new("cat").unwrap())),
            Request::TextToImage(GenRequest {
                prompt: "a dog".into(),
                canvas: Canvas::default(),
                seed: u64::MAX,
                candidates: 3,
            }),
            Request::InstructEdit(EditRequest {
                image: img(),
                instruction: "change the background to snow".into(),
                seed: 7,
            }),
            Request::RegionInpaint(InpaintRequest {
                image: img(),
                bbox: b,
                label: "rocks".into(),
                seed: 1,
            }),
            Request::Detect(DetectRequest {
                image: img(),
                labels: vec!["cat".into(), "dog".into()],
            }),
            Request::Segment(SegmentRequest {
                image: img(),
                boxes: vec![b],
            }),
            Request::Caption(CaptionRequest { image: img() }),
            Request::Score(ScoreRequest {
                image: img(),
                text: "a cat".into(),
            }),
        ]
    }

    fn replies() -> Vec<(CapabilityKind, Reply)> {
        let b = BBox::new(1.0, 1.0, 5.0, 4.0).unwrap();
        vec![
            (
                CapabilityKind::Chat,
                Reply::Chat(ChatReply {
                    text: "- long tail".into(),
                    finish_reason: FinishReason::Length,
                }),
            ),
            (CapabilityKind::TextToImage, Reply::Images(GenReply { images: vec![img(), img()] })),
            (CapabilityKind::RegionInpaint, Reply::Image(ImageReply { image: img() })),
            (
                CapabilityKind::Detect,
                Reply::Detect(DetectReply {
                    objects: vec![DetectedObject::new("cat", b, 0.83).unwrap()],
                }),
            ),
            (
                CapabilityKind::Segment,
                Reply::Segment(SegmentReply {
                    masks: vec![SegmentMask {
                        box_index: 0,
                        rle: Rle::from_box(Canvas::new(8, 6).unwrap(), &b),
                    }],
                }),
            ),
            (CapabilityKind::Caption, Reply::Caption(CaptionReply { caption: "a cat".into() })),
            (CapabilityKind::Score, Reply::Score(ScoreReply { similarity: -0.25 })),
        ]
    }

    #[test]
    fn requests_round_trip() {
        for r in requests() {
            let bytes = encode_request(&r);
            let v: Value = serde_json::from_slice(&bytes).unwrap();
            assert_eq!(v["schema_version"], "1");
            assert_eq!(decode_request(r.kind(), &bytes).unwrap(), r);
        }
    }

    #[test]
    fn replies_round_trip() {
        for (kind, r) in replies() {
            assert_eq!(decode_reply(kind, &encode_reply(&r)).unwrap(), r);
        }
    }

    #[test]
    fn wrong_version_is_a_versioned_error() {
        let e = decode_reply(CapabilityKind::Score, br#"{"schema_version":"2","similarity":0.1}"#).unwrap_err();
        assert_eq!(e.category(), "schema_version");
        let e = decode_reply(CapabilityKind::Score, br#"{"similarity":0.1}"#).unwrap_err();
        assert_eq!(e, WireError::Version { found: None });
    }

    #[test]
    fn tampered_image_payload_is_rejected() {
        let bytes = encode_request(&Request::Caption(CaptionRequest { image: img() }));
        let mut v: Value = serde_json::from_slice(&bytes).unwrap();
        v["image"]["id"] = Value::String("0".repeat(64));
        let e = decode_request(CapabilityKind::Caption, &serde_json::to_vec(&v).unwrap()).unwrap_err();
        assert!(matches!(e, WireError::Malformed(_)));
    }

    #[test]
    fn routes_are_distinct() {
        for k in CapabilityKind::ALL {
            assert_eq!(kind_for_route(route(k)), Some(k));
        }
        assert_eq!(kind_for_route("/v1/nope"), None);
    }

    #[test]
    fn error_bodies() {
        let b = error_body("schema_version", "bad version");
        assert_eq!(error_message(&b), "bad version");
        assert_eq!(error_message(b"plain"), "plain");
    }
}
