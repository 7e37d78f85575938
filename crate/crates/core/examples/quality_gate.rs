//! Runs the quality gate on a faithful edit and on one that lost an object.

use std::sync::Arc;

use synthpipe::gate::{filter_decision, GateThresholds};
use synthpipe::gateway::mock::SceneState;
use synthpipe::gateway::{Gateway, MockWorld};
use synthpipe::metrics::MetricParams;
use synthpipe::model::{BBox, Canvas, DetectedObject};

fn main() {
    let world = Arc::new(MockWorld::new(3));
    let gateway = Gateway::mock(world.clone());
    let (t, p) = (GateThresholds::default(), MetricParams::default());

    let original = world.adopt(SceneState {
        canvas: Canvas::default(),
        background: "park".into(),
        objects: vec![
            DetectedObject::new("dog", BBox::new(60.0, 200.0, 220.0, 400.0).unwrap(), 0.9).unwrap(),
            DetectedObject::new("ball", BBox::new(300.0, 320.0, 400.0, 420.0).unwrap(), 0.8).unwrap(),
        ],
    });
    let required = vec!["dog".to_string(), "ball".to_string()];
    let caption = "a dog and a ball in a park";

    let same = filter_decision(&original, &original, &required, caption, &gateway, &t, &p).unwrap();
    println!("unchanged: {:?} psnr={:?} reasons={:?}", same.verdict(), same.psnr, same.reasons());

    let erased = world.erase_object(&original, "ball").unwrap();
    let lost = filter_decision(&original, &erased, &required, caption, &gateway, &t, &p).unwrap();
    println!(
        "erased ball: {:?} missing={:?} reasons={:?}",
        lost.verdict(),
        lost.missing_labels,
        lost.reasons()
    );
}
