//! The deterministic mock backends: generate, edit, inpaint, detect.

use std::sync::Arc;

use synthpipe::gateway::{EditRequest, Gateway, GenRequest, InpaintRequest, MockWorld};
use synthpipe::model::{BBox, Canvas};

fn main() {
    let world = Arc::new(MockWorld::new(42));
    let gateway = Gateway::mock(world.clone());

    let images = gateway
        .text_to_image(GenRequest {
            prompt: "a photo of a red panda and a bench in a field".into(),
            canvas: Canvas::default(),
            seed: 7,
            candidates: 2,
        })
        .unwrap();
    let first = &images[0];
    println!("generated {} images, first {}", images.len(), first.id());
    println!("caption: {}", gateway.caption(first).unwrap());

    let beach = gateway
        .instruct_edit(EditRequest {
            image: first.clone(),
            instruction: "change the background to a sunny beach".into(),
            seed: 1,
        })
        .unwrap();
    let filled = gateway
        .region_inpaint(InpaintRequest {
            image: beach.clone(),
            bbox: BBox::new(360.0, 300.0, 470.0, 420.0).unwrap(),
            label: "ball".into(),
            seed: 2,
        })
        .unwrap();

    let labels = vec!["red panda".into(), "bench".into(), "ball".into()];
    for o in gateway.detect(&filled, &labels).unwrap() {
        println!("{:<10} {:?} {:.2}", o.label, o.bbox.to_array(), o.score);
    }

    let out = std::env::temp_dir().join("synthpipe_mock_world.png");
    std::fs::write(&out, filled.png()).unwrap();
    println!("wrote {}", out.display());
}
