//! Box validation, IoU and greedy overlap filtering for proposed object
//! placements.

use serde::{Deserialize, Serialize};

use crate::model::{BBox, BoxCandidate, Canvas, DetectedObject};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RulesError {
    #[error("box rules need 0 < min_side < max_side <= min(canvas side), got {min_side}/{max_side}")]
    Sides { min_side: f64, max_side: f64 },
    #[error("iou_max must lie in [0, 1], got {0}")]
    IouMax(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoxRules {
    pub min_side: f64,
    pub max_side: f64,
    pub canvas: Canvas,
    pub iou_max: f64,
}

impl Default for BoxRules {
    fn default() -> Self {
        Self {
            min_side: 75.0,
            max_side: 300.0,
            canvas: Canvas::default(),
            iou_max: 0.30,
        }
    }
}

impl BoxRules {
    pub fn validate(&self) -> Result<(), RulesError> {
        let limit = f64::from(self.canvas.width.min(self.canvas.height));
        if !(self.min_side > 0.0 && self.min_side < self.max_side && self.max_side <= limit) {
            return Err(RulesError::Sides {
                min_side: self.min_side,
                max_side: self.max_side,
            });
        }
        if !(0.0..=1.0).contains(&self.iou_max) {
            return Err(RulesError::IouMax(self.iou_max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    WidthTooSmall,
    WidthTooLarge,
    HeightTooSmall,
    HeightTooLarge,
    OutsideCanvas,
}

/// Side lengths must lie strictly between `min_side` and `max_side`; the box
/// must sit inside the canvas, edges included.
pub fn validate_box(bbox: &BBox, rules: &BoxRules) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let (w, h) = (bbox.width(), bbox.height());
    if w <= rules.min_side {
        v.push(Violation::WidthTooSmall);
    }
    if w >= rules.max_side {
        v.push(Violation::WidthTooLarge);
    }
    if h <= rules.min_side {
        v.push(Violation::HeightTooSmall);
    }
    if h >= rules.max_side {
        v.push(Violation::HeightTooLarge);
    }
    let cw = f64::from(rules.canvas.width);
    let ch = f64::from(rules.canvas.height);
    if bbox.x1() < 0.0 || bbox.y1() < 0.0 || bbox.x2() > cw || bbox.y2() > ch {
        v.push(Violation::OutsideCanvas);
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = (a.x2().min(b.x2()) - a.x1().max(b.x1())).max(0.0);
    let ih = (a.y2().min(b.y2()) - a.y1().max(b.y1())).max(0.0);
    let inter = iw * ih;
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RejectReason {
    Invalid { violations: Vec<Violation> },
    /// Overlaps `existing[index]`.
    OverlapsExisting { index: usize, iou: f64 },
    /// Overlaps the earlier retained candidate at input position `index`.
    OverlapsCandidate { index: usize, iou: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rejected {
    /// Position in the input candidate list.
    pub position: usize,
    pub candidate: BoxCandidate,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterOutcome {
    pub retained: Vec<BoxCandidate>,
    pub rejected: Vec<Rejected>,
}

/// Greedy first-come-first-kept filter in input order. A candidate survives
/// when its box is valid and its IoU with every existing box and every
/// candidate retained so far is at most `iou_max`.
pub fn filter_overlapping(
    candidates: &[BoxCandidate],
    existing: &[DetectedObject],
    rules: &BoxRules,
) -> FilterOutcome {
    let mut out = FilterOutcome::default();
    let mut kept_positions: Vec<usize> = Vec::new();

    'next: for (pos, cand) in candidates.iter().enumerate() {
        if let Err(violations) = validate_box(&cand.bbox, rules) {
            out.rejected.push(Rejected {
                position: pos,
                candidate: cand.clone(),
                reason: RejectReason::Invalid { violations },
            });
            continue;
        }
        for (index, obj) in existing.iter().enumerate() {
            let overlap = iou(&cand.bbox, &obj.bbox);
            if overlap > rules.iou_max {
                out.rejected.push(Rejected {
                    position: pos,
                    candidate: cand.clone(),
                    reason: RejectReason::OverlapsExisting { index, iou: overlap },
                });
                continue 'next;
            }
        }
        for (kept, &index) in out.retained.iter().zip(&kept_positions) {
            let overlap = iou(&cand.bbox, &kept.bbox);
            if overlap > rules.iou_max {
                out.rejected.push(Rejected {
                    position: pos,
                    candidate: cand.clone(),
                    reason: RejectReason::OverlapsCandidate { index, iou: overlap },
                });
                continue 'next;
            }
        }
        kept_positions.push(pos);
        out.retained.push(cand.clone());
    }
    out
}
