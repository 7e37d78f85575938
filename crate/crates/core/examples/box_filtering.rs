//! Box rules and overlap filtering of proposed placements.

use synthpipe::geometry::{filter_overlapping, iou, validate_box, BoxRules};
use synthpipe::model::{BBox, BoxCandidate, DetectedObject};

fn cand(label: &str, b: [f64; 4]) -> BoxCandidate {
    BoxCandidate {
        label: label.into(),
        bbox: BBox::new(b[0], b[1], b[2], b[3]).unwrap(),
        relationship: String::new(),
    }
}

fn main() {
    let rules = BoxRules::default();
    let existing = vec![
        DetectedObject::new("bench", BBox::new(33.93, 204.68, 357.26, 421.73).unwrap(), 0.84).unwrap(),
        DetectedObject::new("dog", BBox::new(209.74, 92.72, 368.96, 373.16).unwrap(), 0.43).unwrap(),
    ];
    let candidates = vec![
        cand("cat", [343.23, 176.29, 467.23, 353.13]),
        cand("ball", [380.0, 380.0, 470.0, 470.0]),
        cand("kite", [10.0, 10.0, 40.0, 40.0]),
        cand("bird", [390.0, 390.0, 480.0, 480.0]),
    ];

    for c in &candidates {
        let worst = existing.iter().map(|e| iou(&c.bbox, &e.bbox)).fold(0.0, f64::max);
        println!("{:<5} valid={:<5} max iou vs existing={worst:.4}", c.label, validate_box(&c.bbox, &rules).is_ok());
    }

    let outcome = filter_overlapping(&candidates, &existing, &rules);
    for c in &outcome.retained {
        println!("keep {}", c.label);
    }
    for r in &outcome.rejected {
        println!("drop {} ({:?})", r.candidate.label, r.reason);
    }
}
