//! Renders the four chat prompts for a label and prints their transcripts.
//!
//! cargo run --example render_prompts -- "red panda"

use synthpipe::model::{BBox, Canvas, DetectedObject, LabelWord, VisualFeature};
use synthpipe::prompt::{
    render_aigc_creator, render_box_candidates, render_scene_imagination, render_visual_descriptor, Demonstration,
};

fn main() {
    let word = std::env::args().nth(1).unwrap_or_else(|| "red panda".into());
    let label = LabelWord::new(word).expect("label must be non-empty");

    println!("{}", render_visual_descriptor(&label).transcript());

    let features = VisualFeature::new(vec!["reddish-brown fur".into(), "ringed bushy tail".into()]).unwrap();
    let creator = render_aigc_creator(&label, &features, 2, &[Demonstration::red_panda()]).unwrap();
    println!("{}", creator.transcript());

    let caption = format!("a photo of a {} on a branch", label.as_str());
    let objects = vec![label.as_str().to_string(), "branch".to_string()];
    println!("{}", render_scene_imagination(&caption, &objects, 3).unwrap().transcript());

    let existing = vec![DetectedObject::new(label.as_str(), BBox::new(120.0, 140.0, 330.0, 400.0).unwrap(), 0.81).unwrap()];
    let boxes = render_box_candidates(&caption, &existing, &["bird".into(), "leaf".into()], 2, Canvas::default()).unwrap();
    println!("{}", boxes.transcript());
}
