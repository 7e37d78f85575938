//! Quality gate for generated and edited images.
//!
//! Three checks feed one [`QualityReport`]: pixel fidelity between an edited
//! image and the image it was edited from, presence of every required
//! object, and text-image similarity. [`filter_decision`] always runs all
//! three so a rejected report names every failed rule.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::gateway::{Gateway, GatewayError};
use crate::metrics::{self, MetricError, MetricParams, Psnr};
use crate::model::{Image, ModelError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateThresholds {
    pub psnr_min: f64,
    pub ssim_min: f64,
    /// Candidates kept per generation prompt.
    pub sim_top_k: usize,
    pub detect_conf_min: f64,
    /// Optional absolute floor on the similarity score; off when `None`.
    pub semantic_min: Option<f64>,
}

impl Default for GateThresholds {
    fn default() -> Self {
        Self {
            psnr_min: 20.0,
            ssim_min: 0.75,
            sim_top_k: 1,
            detect_conf_min: 0.35,
            semantic_min: None,
        }
    }
}

impl GateThresholds {
    pub fn validate(&self) -> Result<(), GateError> {
        let bad = |what: &'static str| Err(GateError::Thresholds(what));
        if !(self.psnr_min > 0.0) {
            return bad("psnr_min must be > 0");
        }
        if !(self.ssim_min > 0.0 && self.ssim_min <= 1.0) {
            return bad("ssim_min must lie in (0, 1]");
        }
        if self.sim_top_k == 0 {
            return bad("sim_top_k must be >= 1");
        }
        if !(self.detect_conf_min > 0.0 && self.detect_conf_min < 1.0) {
            return bad("detect_conf_min must lie in (0, 1)");
        }
        if let Some(s) = self.semantic_min {
            if !(-1.0..=1.0).contains(&s) {
                return bad("semantic_min must lie in [-1, 1]");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GateError {
    #[error("invalid thresholds: {0}")]
    Thresholds(&'static str),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Image(#[from] ModelError),
    #[error("no candidates to rank")]
    NoCandidates,
    #[error("top-{k} requested from {available} candidates")]
    TopK { k: usize, available: usize },
    #[error("no required labels given")]
    NoRequiredLabels,
    #[error(transparent)]
    Backend(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    PsnrBelow,
    SsimBelow,
    ObjectMissing,
    SemanticBelow,
}

impl Reason {
    pub const ALL: [Reason; 4] = [Reason::PsnrBelow, Reason::SsimBelow, Reason::ObjectMissing, Reason::SemanticBelow];

    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::PsnrBelow => "psnr_below",
            Reason::SsimBelow => "ssim_below",
            Reason::ObjectMissing => "object_missing",
            Reason::SemanticBelow => "semantic_below",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Retain,
    Reject,
}

/// Outcome of one or more checks. Fields a check did not run stay empty.
/// The verdict is derived from `reasons` and cannot disagree with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawReport")]
pub struct QualityReport {
    pub psnr: Option<Psnr>,
    pub ssim: Option<f64>,
    pub semantic_score: Option<f64>,
    pub required_labels: Vec<String>,
    pub found_labels: Vec<String>,
    pub missing_labels: Vec<String>,
    verdict: Verdict,
    reasons: Vec<Reason>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawReport {
    psnr: Option<Psnr>,
    ssim: Option<f64>,
    semantic_score: Option<f64>,
    required_labels: Vec<String>,
    found_labels: Vec<String>,
    missing_labels: Vec<String>,
    verdict: Verdict,
    reasons: Vec<Reason>,
}

impl TryFrom<RawReport> for QualityReport {
    type Error = String;
    fn try_from(r: RawReport) -> Result<Self, String> {
        let mut q = QualityReport {
            psnr: r.psnr,
            ssim: r.ssim,
            semantic_score: r.semantic_score,
            required_labels: r.required_labels,
            found_labels: r.found_labels,
            missing_labels: r.missing_labels,
            verdict: Verdict::Retain,
            reasons: Vec::new(),
        };
        q.add_reasons(r.reasons);
        if q.verdict != r.verdict {
            return Err("quality verdict disagrees with its reasons".into());
        }
        Ok(q)
    }
}

impl Default for QualityReport {
    fn default() -> Self {
        Self {
            psnr: None,
            ssim: None,
            semantic_score: None,
            required_labels: Vec::new(),
            found_labels: Vec::new(),
            missing_labels: Vec::new(),
            verdict: Verdict::Retain,
            reasons: Vec::new(),
        }
    }
}

impl QualityReport {
    pub fn verdict(&self) -> Verdict {
        self.verdict
    }

    pub fn reasons(&self) -> &[Reason] {
        &self.reasons
    }

    pub fn retained(&self) -> bool {
        self.verdict == Verdict::Retain
    }

    /// Adds failed rules, updating the verdict.
    pub fn with_reasons(mut self, reasons: impl IntoIterator<Item = Reason>) -> Self {
        self.add_reasons(reasons);
        self
    }

    fn add_reasons(&mut self, reasons: impl IntoIterator<Item = Reason>) {
        for r in reasons {
            if !self.reasons.contains(&r) {
                self.reasons.push(r);
            }
        }
        self.reasons.sort();
        self.verdict = if self.reasons.is_empty() {
            Verdict::Retain
        } else {
            Verdict::Reject
        };
    }

    /// Combines two partial reports; fields set in `other` win.
    pub fn merge(mut self, other: QualityReport) -> QualityReport {
        self.psnr = other.psnr.or(self.psnr);
        self.ssim = other.ssim.or(self.ssim);
        self.semantic_score = other.semantic_score.or(self.semantic_score);
        if !other.required_labels.is_empty() {
            self.required_labels = other.required_labels;
            self.found_labels = other.found_labels;
            self.missing_labels = other.missing_labels;
        }
        self.add_reasons(other.reasons);
        self
    }
}

/// Passes iff PSNR ≥ `psnr_min` and SSIM ≥ `ssim_min`.
pub fn pixel_check(
    original: &RgbImage,
    edited: &RgbImage,
    t: &GateThresholds,
    p: &MetricParams,
) -> Result<QualityReport, GateError> {
    let psnr = metrics::psnr(original, edited, p)?;
    let ssim = metrics::ssim(original, edited, p)?;
    let mut q = QualityReport {
        psnr: Some(psnr),
        ssim: Some(ssim),
        ..QualityReport::default()
    };
    let mut reasons = Vec::new();
    if !psnr.meets(t.psnr_min) {
        reasons.push(Reason::PsnrBelow);
    }
    if !(ssim >= t.ssim_min) {
        reasons.push(Reason::SsimBelow);
    }
    q.add_reasons(reasons);
    Ok(q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ranked {
    /// Position in the input list.
    pub index: usize,
    pub image: Image,
    pub score: f64,
}

/// Scores every candidate against `text` and keeps the `k` best, highest
/// first. Ties keep input order.
pub fn semantic_rank(candidates: &[Image], text: &str, scorer: &Gateway, k: usize) -> Result<Vec<Ranked>, GateError> {
    if candidates.is_empty() {
        return Err(GateError::NoCandidates);
    }
    if k == 0 || k > candidates.len() {
        return Err(GateError::TopK {
            k,
            available: candidates.len(),
        });
    }
    let mut ranked = candidates
        .iter()
        .enumerate()
        .map(|(index, image)| {
            Ok(Ranked {
                index,
                image: image.clone(),
                score: scorer.score(image, text)?,
            })
        })
        .collect::<Result<Vec<_>, GateError>>()?;
    ranked.sort_by(|a, b| b.score.total_cmp(&a.score));
    ranked.truncate(k);
    Ok(ranked)
}

/// Passes iff every required label is detected with score ≥ `detect_conf_min`.
/// Labels compare case-insensitively.
pub fn object_presence_check(
    image: &Image,
    required: &[String],
    detector: &Gateway,
    t: &GateThresholds,
) -> Result<QualityReport, GateError> {
    if required.is_empty() {
        return Err(GateError::NoRequiredLabels);
    }
    let detections = detector.detect(image, required)?;
    let (found, missing): (Vec<String>, Vec<String>) = required.iter().cloned().partition(|label| {
        detections
            .iter()
            .any(|d| d.label.eq_ignore_ascii_case(label) && d.score >= t.detect_conf_min)
    });
    let mut q = QualityReport {
        required_labels: required.to_vec(),
        found_labels: found,
        ..QualityReport::default()
    };
    if !missing.is_empty() {
        q.add_reasons([Reason::ObjectMissing]);
    }
    q.missing_labels = missing;
    Ok(q)
}

/// Records the similarity of `image` to `text`; fails only when an
/// absolute floor is configured and not met.
pub fn semantic_check(image: &Image, text: &str, scorer: &Gateway, t: &GateThresholds) -> Result<QualityReport, GateError> {
    let score = scorer.score(image, text)?;
    let mut q = QualityReport {
        semantic_score: Some(score),
        ..QualityReport::default()
    };
    if t.semantic_min.is_some_and(|min| score < min) {
        q.add_reasons([Reason::SemanticBelow]);
    }
    Ok(q)
}

/// Runs pixel, presence and semantic checks on an edited image and merges
/// them. No check is skipped because another failed.
pub fn filter_decision(
    original: &Image,
    edited: &Image,
    required_labels: &[String],
    caption_text: &str,
    backends: &Gateway,
    t: &GateThresholds,
    p: &MetricParams,
) -> Result<QualityReport, GateError> {
    let pixels = pixel_check(&original.to_rgb()?, &edited.to_rgb()?, t, p)?;
    let presence = object_presence_check(edited, required_labels, backends, t)?;
    let semantic = semantic_check(edited, caption_text, backends, t)?;
    Ok(pixels.merge(presence).merge(semantic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::mock::SceneState;
    use crate::gateway::make_mock_world;
    use crate::model::{BBox, Canvas, DetectedObject};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn dog_scene() -> SceneState {
        SceneState {
            canvas: Canvas::default(),
            background: "field".into(),
            objects: vec![DetectedObject::new("dog", BBox::new(100.0, 100.0, 250.0, 260.0).unwrap(), 0.9).unwrap()],
        }
    }

    #[test]
    fn identity_passes_pixel_check() {
        let img = dog_scene().render();
        let q = pixel_check(&img, &img, &GateThresholds::default(), &MetricParams::default()).unwrap();
        assert_eq!(q.psnr, Some(Psnr::Infinite));
        assert_eq!(q.ssim, Some(1.0));
        assert!(q.retained());
    }

    #[test]
    fn noise_fails_both_pixel_rules() {
        let img = dog_scene().render();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let noise = RgbImage::from_fn(512, 512, |_, _| image::Rgb([rng.gen(), rng.gen(), rng.gen()]));
        let q = pixel_check(&img, &noise, &GateThresholds::default(), &MetricParams::default()).unwrap();
        assert_eq!(q.reasons(), &[Reason::PsnrBelow, Reason::SsimBelow]);
        assert!(q.psnr.unwrap().db() < 20.0);
        assert!(q.ssim.unwrap() < 0.75);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = RgbImage::new(20, 20);
        let b = RgbImage::new(20, 21);
        assert!(matches!(
            pixel_check(&a, &b, &GateThresholds::default(), &MetricParams::default()),
            Err(GateError::Metric(MetricError::DimensionMismatch(..)))
        ));
    }

    #[test]
    fn presence_reports_missing_labels() {
        let world = make_mock_world(0);
        let img = world.adopt(dog_scene());
        let g = Gateway::mock(world);
        let t = GateThresholds::default();
        assert!(object_presence_check(&img, &["dog".into()], &g, &t).unwrap().retained());
        let q = object_presence_check(&img, &["dog".into(), "cat".into()], &g, &t).unwrap();
        assert_eq!(q.reasons(), &[Reason::ObjectMissing]);
        assert_eq!(q.found_labels, vec!["dog"]);
        assert_eq!(q.missing_labels, vec!["cat"]);
        assert!(matches!(object_presence_check(&img, &[], &g, &t), Err(GateError::NoRequiredLabels)));
    }

    #[test]
    fn low_confidence_counts_as_missing() {
        let world = make_mock_world(0);
        let mut scene = dog_scene();
        scene.objects[0].score = 0.2;
        let img = world.adopt(scene);
        let q = object_presence_check(&img, &["dog".into()], &Gateway::mock(world), &GateThresholds::default()).unwrap();
        assert_eq!(q.reasons(), &[Reason::ObjectMissing]);
    }

    #[test]
    fn rank_is_stable_and_descending() {
        let world = make_mock_world(0);
        let plain = world.adopt(SceneState {
            objects: vec![],
            ..dog_scene()
        });
        let dog = world.adopt(dog_scene());
        let g = Gateway::mock(world);
        let r = semantic_rank(&[plain.clone(), dog.clone(), plain.clone()], "a dog in a field", &g, 3).unwrap();
        assert_eq!(r.iter().map(|x| x.index).collect::<Vec<_>>(), vec![1, 0, 2]);
        let top = semantic_rank(&[plain.clone(), dog], "a dog in a field", &g, 1).unwrap();
        assert_eq!(top[0].index, 1);
        assert!(matches!(semantic_rank(&[], "x", &g, 1), Err(GateError::NoCandidates)));
        assert!(matches!(semantic_rank(&[plain], "x", &g, 2), Err(GateError::TopK { .. })));
    }

    #[test]
    fn semantic_floor_is_optional() {
        let world = make_mock_world(0);
        let img = world.adopt(dog_scene());
        let g = Gateway::mock(world);
        let t = GateThresholds::default();
        let q = semantic_check(&img, "a spaceship", &g, &t).unwrap();
        assert!(q.retained());
        assert_eq!(q.semantic_score, Some(0.0));
        let t = GateThresholds {
            semantic_min: Some(0.2),
            ..t
        };
        assert_eq!(semantic_check(&img, "a spaceship", &g, &t).unwrap().reasons(), &[Reason::SemanticBelow]);
    }

    #[test]
    fn unedited_image_is_retained() {
        let world = make_mock_world(0);
        let img = world.adopt(dog_scene());
        let g = Gateway::mock(world);
        let q = filter_decision(
            &img,
            &img,
            &["dog".into()],
            "a photo of a dog in a field",
            &g,
            &GateThresholds::default(),
            &MetricParams::default(),
        )
        .unwrap();
        assert!(q.retained(), "{q:?}");
    }

    #[test]
    fn report_serde_enforces_verdict() {
        let mut q = QualityReport::default();
        q.add_reasons([Reason::SsimBelow]);
        let json = serde_json::to_string(&q).unwrap();
        assert_eq!(serde_json::from_str::<QualityReport>(&json).unwrap(), q);
        let forged = json.replace("\"reject\"", "\"retain\"");
        assert!(serde_json::from_str::<QualityReport>(&forged).is_err());
    }

    #[test]
    fn thresholds_validate() {
        assert!(GateThresholds::default().validate().is_ok());
        for bad in [
            GateThresholds { psnr_min: 0.0, ..Default::default() },
            GateThresholds { ssim_min: 1.5, ..Default::default() },
            GateThresholds { sim_top_k: 0, ..Default::default() },
            GateThresholds { detect_conf_min: 1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    fn arb_reason() -> impl Strategy<Value = Reason> {
        prop_oneof![
            Just(Reason::PsnrBelow),
            Just(Reason::SsimBelow),
            Just(Reason::ObjectMissing),
            Just(Reason::SemanticBelow)
        ]
    }

    proptest! {
        #[test]
        fn verdict_tracks_reasons(a in proptest::collection::vec(arb_reason(), 0..4), b in proptest::collection::vec(arb_reason(), 0..4)) {
            let mut x = QualityReport::default();
            x.add_reasons(a.clone());
            let mut y = QualityReport::default();
            y.add_reasons(b.clone());
            let both = x.clone().merge(y.clone());
            prop_assert_eq!(x.retained(), a.is_empty());
            prop_assert_eq!(both.retained(), x.retained() && y.retained());
            prop_assert_eq!(both.reasons().is_empty(), both.verdict() == Verdict::Retain);
        }
    }
}
