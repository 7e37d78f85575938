//! COCO-style export of real pipeline output.

mod common;

use common::*;
use serde_json::Value;
use synthpipe::model::LabelWord;
use synthpipe::pipeline::PipelineConfig;
use synthpipe::store::{coco_document, load_manifest, save_manifest, xyxy_to_xywh, DatasetManifest, Store};

fn docs_dir() -> std::path::PathBuf {
    manifest_dir().join("../../docs")
}

pub fn coco_schema() -> jsonschema::JSONSchema {
    let text = std::fs::read_to_string(docs_dir().join("coco_export.schema.json")).unwrap();
    jsonschema::JSONSchema::compile(&serde_json::from_str(&text).unwrap()).unwrap()
}

fn schema_errors(v: &Value) -> Vec<String> {
    let schema = coco_schema();
    let errors: Vec<String> = match schema.validate(v) {
        Ok(()) => Vec::new(),
        Err(e) => e.map(|x| format!("{x} at {}", x.instance_path)).collect(),
    };
    errors
}

#[test]
fn golden_export_validates_and_matches_example() {
    let (run, _, _) = run_mock(&golden_config());
    let doc = coco_document(&run.manifest).unwrap();
    let value = serde_json::to_value(&doc).unwrap();
    assert_eq!(schema_errors(&value), Vec::<String>::new());

    let pretty = serde_json::to_string_pretty(&doc).unwrap() + "\n";
    let example = docs_dir().join("coco_export.example.json");
    if blessing() {
        std::fs::write(&example, &pretty).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&example).unwrap(), pretty);

    let image_ids: Vec<u64> = doc.images.iter().map(|i| i.id).collect();
    let category_ids: Vec<u64> = doc.categories.iter().map(|c| c.id).collect();
    for a in &doc.annotations {
        assert!(image_ids.contains(&a.image_id));
        assert!(category_ids.contains(&a.category_id));
        let (w, h) = (a.segmentation.width(), a.segmentation.height());
        let img = doc.images.iter().find(|i| i.id == a.image_id).unwrap();
        assert_eq!((w, h), (img.width, img.height));
    }
    let mut names: Vec<&str> = doc.categories.iter().map(|c| c.name.as_str()).collect();
    let n = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n, "category names are unique");
}

#[test]
fn schema_catches_broken_exports() {
    let (run, _, _) = run_mock(&golden_config());
    let good = serde_json::to_value(coco_document(&run.manifest).unwrap()).unwrap();
    let mut missing = good.clone();
    missing["annotations"][0].as_object_mut().unwrap().remove("bbox");
    assert!(!schema_errors(&missing).is_empty());
    let mut short = good.clone();
    short["annotations"][0]["bbox"] = serde_json::json!([1, 2, 3]);
    assert!(!schema_errors(&short).is_empty());
    let mut crowd = good;
    crowd["annotations"][0]["iscrowd"] = 1.into();
    assert!(!schema_errors(&crowd).is_empty());
}

#[test]
fn cat_box_converts_to_xywh() {
    assert_eq!(xyxy_to_xywh(&cat_box()), [343.23, 176.29, 124.00, 176.84]);
    assert_eq!(xyxy_to_xywh(&rocks_box()), [200.0, 50.0, 100.0, 100.0]);
}

#[test]
fn empty_manifest_exports_empty_arrays() {
    let mut m = DatasetManifest::new(PipelineConfig::mock(LabelWord::new("dog").unwrap()));
    m.complete = true;
    m.seal();
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let dest = dir.path().join("exports/coco.json");
    store.export_coco(&m, &dest).unwrap();
    let v: Value = serde_json::from_slice(&std::fs::read(&dest).unwrap()).unwrap();
    assert_eq!(schema_errors(&v), Vec::<String>::new());
    for key in ["images", "annotations", "categories"] {
        assert_eq!(v[key], serde_json::json!([]), "{key}");
    }
}

#[test]
fn stored_run_round_trips_and_exports() {
    let (run, _, _) = run_mock(&golden_config());
    let dir = tempfile::tempdir().unwrap();
    let store = Store::open(dir.path()).unwrap();
    let path = store.put_run(&run).unwrap();
    let loaded = load_manifest(&path).unwrap();
    assert_eq!(loaded, run.manifest);
    assert_eq!(loaded.compute_hash(), run.manifest.run_hash);

    let again = dir.path().join("again.json");
    save_manifest(&loaded, &again).unwrap();
    assert_eq!(std::fs::read(&again).unwrap(), std::fs::read(&path).unwrap());

    for r in &loaded.records {
        let img = store.load_image(&r.image.id).unwrap();
        assert_eq!(img.meta(), &r.image);
        assert_eq!(&store.load_record(&r.id).unwrap(), r);
    }
    let dest = store.exports_dir().join("coco.json");
    let doc = store.export_coco(&loaded, &dest).unwrap();
    assert_eq!(doc.images.len(), loaded.records.len());
}

#[test]
fn shared_label_is_one_category() {
    let (run, _, _) = run_mock(&golden_config());
    let doc = coco_document(&run.manifest).unwrap();
    let panda: Vec<_> = doc.categories.iter().filter(|c| c.name == "red panda").collect();
    assert_eq!(panda.len(), 1);
    assert_eq!(panda[0].id, 1, "first label seen gets the first id");
    let with_panda = doc.annotations.iter().filter(|a| a.category_id == panda[0].id).count();
    assert_eq!(with_panda, doc.images.len());
}
