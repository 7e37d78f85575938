//! Content-addressed dataset storage, run manifests and COCO-style export.
//!
//! Layout under the store root:
//!
//! ```text
//! images/<sha256>.png       PNG bytes; the name is the hash of the file
//! records/<lineage id>.json one annotated record
//! manifests/<run hash>.json
//! exports/
//! ```
//!
//! All JSON is written in canonical form (fixed key order, shortest
//! round-trip floats) through a temp file and rename.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::gate::{QualityReport, Reason};
use crate::model::{content_hash, BBox, DatasetRecord, Image, Rle};
use crate::pipeline::{PipelineConfig, RunOutput};

pub const MANIFEST_SCHEMA_VERSION: &str = "1";

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: invalid JSON: {message}")]
    Json { path: PathBuf, message: String },
    #[error("manifest schema_version {found:?} is not supported (expected {MANIFEST_SCHEMA_VERSION:?})")]
    SchemaVersion { found: String },
    #[error("manifest hash mismatch: recorded {recorded}, computed {computed}")]
    HashMismatch { recorded: String, computed: String },
    #[error("record {0} has a reject verdict")]
    RejectedRecord(String),
    #[error("record {record} references image {expected} but was given {got}")]
    ImageMismatch {
        record: String,
        expected: String,
        got: String,
    },
    #[error("image {0} is not in the store")]
    MissingImage(String),
    #[error("stored image {id} hashes to {actual}")]
    CorruptImage { id: String, actual: String },
    #[error("manifest is incomplete: {0}")]
    Incomplete(String),
    #[error("manifest invariant broken: {0}")]
    Invalid(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Fixed-order JSON with shortest round-trip float formatting.
pub fn canonical_json<T: Serialize>(value: &T) -> Vec<u8> {
    serde_json::to_vec(value).expect("store types serialize")
}

/// Writes `bytes` to `path` via a sibling temp file and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(dir))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| StoreError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

/// The canonical, hash-stamped result of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: String,
    pub config: PipelineConfig,
    /// Sorted by `(iteration, scene)`, the init record first.
    pub records: Vec<DatasetRecord>,
    /// Rejected scene records per failed rule. A record failing two rules
    /// counts under both.
    pub rejected: BTreeMap<Reason, u64>,
    pub rejected_records: u64,
    pub complete: bool,
    pub failure: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub run_hash: String,
}

impl DatasetManifest {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION.to_string(),
            config,
            records: Vec::new(),
            rejected: BTreeMap::new(),
            rejected_records: 0,
            complete: false,
            failure: None,
            run_hash: String::new(),
        }
    }

    pub fn count_rejection(&mut self, quality: &QualityReport) {
        self.rejected_records += 1;
        for r in quality.reasons() {
            *self.rejected.entry(*r).or_default() += 1;
        }
    }

    /// Canonical bytes of the manifest as it stands, hash included.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonical_json(self)
    }

    /// Hash of the canonical serialization with `run_hash` left out.
    pub fn compute_hash(&self) -> String {
        let mut unsealed = self.clone();
        unsealed.run_hash.clear();
        content_hash(&unsealed.canonical_bytes()).expect("manifest bytes are never empty")
    }

    /// Orders records and stamps the run hash.
    pub fn seal(&mut self) {
        self.records
            .sort_by_key(|r| (r.iteration, r.scene.map_or(0, |s| u64::from(s) + 1)));
        self.run_hash = self.compute_hash();
    }

    pub fn verify(&self) -> Result<(), StoreError> {
        if self.schema_version != MANIFEST_SCHEMA_VERSION {
            return Err(StoreError::SchemaVersion {
                found: self.schema_version.clone(),
            });
        }
        let computed = self.compute_hash();
        if computed != self.run_hash {
            return Err(StoreError::HashMismatch {
                recorded: self.run_hash.clone(),
                computed,
            });
        }
        if let Some(r) = self.records.iter().find(|r| !r.quality.retained()) {
            return Err(StoreError::RejectedRecord(r.id.clone()));
        }
        let max = 1 + u64::from(self.config.iterations) * u64::from(self.config.scenes_per_iteration);
        if self.records.len() as u64 > max {
            return Err(StoreError::Invalid(format!("{} records exceed the bound {max}", self.records.len())));
        }
        Ok(())
    }

    pub fn record(&self, id: &str) -> Option<&DatasetRecord> {
        self.records.iter().find(|r| r.id == id)
    }
}

pub fn save_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), StoreError> {
    write_atomic(path, &manifest.canonical_bytes())
}

/// Reads a manifest and checks its schema version and hash.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest, StoreError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let json_err = |e: serde_json::Error| StoreError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let raw: Value = serde_json::from_slice(&bytes).map_err(json_err)?;
    match raw.get("schema_version").and_then(Value::as_str) {
        Some(MANIFEST_SCHEMA_VERSION) => {}
        other => {
            return Err(StoreError::SchemaVersion {
                found: other.unwrap_or("<missing>").to_string(),
            })
        }
    }
    let manifest: DatasetManifest = serde_json::from_value(raw).map_err(json_err)?;
    manifest.verify()?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
}

impl Store {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in ["images", "records", "manifests", "exports"] {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn image_path(&self, id: &str) -> PathBuf {
        self.root.join("images").join(format!("{id}.png"))
    }

    pub fn record_path(&self, id: &str) -> PathBuf {
        self.root.join("records").join(format!("{id}.json"))
    }

    pub fn manifest_path(&self, run_hash: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{run_hash}.json"))
    }

    pub fn exports_dir(&self) -> PathBuf {
        self.root.join("exports")
    }

    /// Writes the image unless a file with its id already exists.
    pub fn put_image(&self, image: &Image) -> Result<PathBuf, StoreError> {
        let path = self.image_path(image.id());
        if !path.exists() {
            write_atomic(&path, image.png())?;
        }
        Ok(path)
    }

    pub fn load_image(&self, id: &str) -> Result<Image, StoreError> {
        let path = self.image_path(id);
        if !path.exists() {
            return Err(StoreError::MissingImage(id.to_string()));
        }
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let actual = content_hash(&bytes).map_err(|_| StoreError::MissingImage(id.to_string()))?;
        if actual != id {
            return Err(StoreError::CorruptImage {
                id: id.to_string(),
                actual,
            });
        }
        Image::from_png(bytes).map_err(|_| StoreError::CorruptImage {
            id: id.to_string(),
            actual,
        })
    }

    /// Stores a retained record and its image. Records are keyed by lineage
    /// id, so storing the same record twice leaves one file.
    pub fn put_record(&self, record: &DatasetRecord, image: &Image) -> Result<String, StoreError> {
        if !record.quality.retained() {
            return Err(StoreError::RejectedRecord(record.id.clone()));
        }
        if image.id() != record.image.id {
            return Err(StoreError::ImageMismatch {
                record: record.id.clone(),
                expected: record.image.id.clone(),
                got: image.id().to_string(),
            });
        }
        self.put_image(image)?;
        write_atomic(&self.record_path(&record.id), &canonical_json(record))?;
        Ok(record.id.clone())
    }

    pub fn load_record(&self, id: &str) -> Result<DatasetRecord, StoreError> {
        let path = self.record_path(id);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Json {
            path,
            message: e.to_string(),
        })
    }

    /// Saves the manifest under its run hash after checking that every
    /// record's image is stored.
    pub fn save_manifest(&self, manifest: &DatasetManifest) -> Result<PathBuf, StoreError> {
        for r in &manifest.records {
            if !self.image_path(&r.image.id).exists() {
                return Err(StoreError::MissingImage(r.image.id.clone()));
            }
        }
        let path = self.manifest_path(&manifest.run_hash);
        save_manifest(manifest, &path)?;
        Ok(path)
    }

    /// Stores every record of a run, then its manifest.
    pub fn put_run(&self, run: &RunOutput) -> Result<PathBuf, StoreError> {
        for r in &run.manifest.records {
            let image = run
                .images
                .get(&r.image.id)
                .ok_or_else(|| StoreError::MissingImage(r.image.id.clone()))?;
            self.put_record(r, image)?;
        }
        self.save_manifest(&run.manifest)
    }

    /// Checks that every image referenced by `manifest` is stored, then
    /// writes the COCO-style export to `dest`.
    pub fn export_coco(&self, manifest: &DatasetManifest, dest: &Path) -> Result<CocoDocument, StoreError> {
        for r in &manifest.records {
            if !self.image_path(&r.image.id).exists() {
                return Err(StoreError::MissingImage(r.image.id.clone()));
            }
        }
        export_coco(manifest, dest)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoDocument {
    pub info: CocoInfo,
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoInfo {
    pub schema_version: String,
    pub run_hash: String,
    /// Always `"row_major"`: counts run along rows, unlike stock COCO RLE.
    pub rle_order: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub width: u32,
    pub height: u32,
    pub content_hash: String,
    pub record_id: String,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, width, height]`
    pub bbox: [f64; 4],
    pub area: f64,
    pub segmentation: Rle,
    pub score: f64,
    pub iscrowd: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

/// `[x1, y1, x2, y2]` to `[x, y, width, height]`.
pub fn xyxy_to_xywh(b: &BBox) -> [f64; 4] {
    b.to_xywh()
}

/// Builds the export document. Images appearing in several records are
/// listed once, annotated from their first record. Category ids follow
/// first appearance of each label.
pub fn coco_document(manifest: &DatasetManifest) -> Result<CocoDocument, StoreError> {
    if !manifest.complete {
        return Err(StoreError::Incomplete(
            manifest.failure.clone().unwrap_or_else(|| "run did not finish".into()),
        ));
    }
    let mut doc = CocoDocument {
        info: CocoInfo {
            schema_version: MANIFEST_SCHEMA_VERSION.into(),
            run_hash: manifest.run_hash.clone(),
            rle_order: "row_major".into(),
        },
        images: Vec::new(),
        annotations: Vec::new(),
        categories: Vec::new(),
    };
    let mut image_ids: BTreeMap<&str, u64> = BTreeMap::new();
    for record in &manifest.records {
        if image_ids.contains_key(record.image.id.as_str()) {
            continue;
        }
        let image_id = doc.images.len() as u64 + 1;
        image_ids.insert(&record.image.id, image_id);
        doc.images.push(CocoImage {
            id: image_id,
            file_name: record.image.locator.clone(),
            width: record.image.width,
            height: record.image.height,
            content_hash: record.image.id.clone(),
            record_id: record.id.clone(),
            caption: record.annotations.caption.clone(),
        });
        let canvas = record.image.canvas();
        for (i, obj) in record.annotations.objects.iter().enumerate() {
            let category_id = match doc.categories.iter().find(|c| c.name == obj.label) {
                Some(c) => c.id,
                None => {
                    let id = doc.categories.len() as u64 + 1;
                    doc.categories.push(CocoCategory {
                        id,
                        name: obj.label.clone(),
                    });
                    id
                }
            };
            let segmentation = record
                .annotations
                .masks
                .iter()
                .find(|m| m.box_index == i)
                .map(|m| m.rle.clone())
                .unwrap_or_else(|| Rle::from_box(canvas, &obj.bbox));
            let bbox = xyxy_to_xywh(&obj.bbox);
            doc.annotations.push(CocoAnnotation {
                id: doc.annotations.len() as u64 + 1,
                image_id,
                category_id,
                bbox,
                area: bbox[2] * bbox[3],
                segmentation,
                score: obj.score,
                iscrowd: 0,
            });
        }
    }
    Ok(doc)
}

pub fn export_coco(manifest: &DatasetManifest, dest: &Path) -> Result<CocoDocument, StoreError> {
    let doc = coco_document(manifest)?;
    write_atomic(dest, &canonical_json(&doc))?;
    Ok(doc)
}
