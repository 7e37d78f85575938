//! Stores a mock run, reloads it and writes the COCO-style export.

use std::sync::Arc;

use synthpipe::gateway::{Gateway, MockWorld};
use synthpipe::model::LabelWord;
use synthpipe::pipeline::{Orchestrator, PipelineConfig};
use synthpipe::store::{load_manifest, Store};

fn main() {
    let cfg = PipelineConfig::mock(LabelWord::new("red panda").unwrap());
    let gateway = Gateway::mock(Arc::new(MockWorld::new(cfg.seed)));
    let run = Orchestrator::new(&cfg, &gateway).run(&mut |_| {}).unwrap();

    let root = tempfile::tempdir().unwrap();
    let store = Store::open(root.path()).unwrap();
    let manifest = load_manifest(&store.put_run(&run).unwrap()).unwrap();

    let dest = store.exports_dir().join("coco.json");
    let doc = store.export_coco(&manifest, &dest).unwrap();
    for a in &doc.annotations {
        println!("image {} category {} bbox {:?} area {}", a.image_id, a.category_id, a.bbox, a.area);
    }
    println!("{} images, {} categories -> {}", doc.images.len(), doc.categories.len(), dest.display());
}
