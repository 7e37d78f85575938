//! Full mock run in-process, printing progress and the stored manifest.
//!
//! cargo run --example run_pipeline -- cat 3

use std::sync::Arc;

use synthpipe::gateway::{Gateway, MockWorld};
use synthpipe::model::LabelWord;
use synthpipe::pipeline::{Orchestrator, PipelineConfig};
use synthpipe::store::Store;

fn main() {
    let mut args = std::env::args().skip(1);
    let label = LabelWord::new(args.next().unwrap_or_else(|| "red panda".into())).unwrap();
    let scenes = args.next().map_or(2, |s| s.parse().expect("scene count"));

    let mut cfg = PipelineConfig::mock(label);
    cfg.scenes_per_iteration = scenes;
    let gateway = Gateway::mock(Arc::new(MockWorld::new(cfg.seed)));

    let run = Orchestrator::new(&cfg, &gateway).run(&mut |e| eprintln!("{e}")).unwrap();
    let m = &run.manifest;
    println!("retained {} rejected {} complete {}", m.records.len(), m.rejected_records, m.complete);
    for r in &m.records {
        println!("{} {:?} ({} objects)", r.id, r.annotations.caption, r.annotations.objects.len());
    }

    let dir = tempfile::tempdir().unwrap();
    let path = Store::open(dir.path()).unwrap().put_run(&run).unwrap();
    println!("manifest {} hash {}", path.display(), m.run_hash);
}
