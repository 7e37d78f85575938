//! Command-line front end: `run`, `inspect` and `export`.
//!
//! Exit codes: 0 on success, 1 on usage, configuration or I/O errors, 2
//! when a run stopped early or a command was given a partial manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{load_config, Overrides};
use crate::gate::Reason;
use crate::gateway::Gateway;
use crate::model::{DatasetRecord, EditStep};
use crate::pipeline::{Orchestrator, PipelineError};
use crate::store::{load_manifest, DatasetManifest, Store, StoreError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "synthpipe", version, about = "Synthetic detection dataset pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset for one label and store it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        iterations: Option<u32>,
        /// Store directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Show a manifest summary, or one record's lineage and annotations.
    Inspect {
        manifest: PathBuf,
        record: Option<String>,
        /// Store directory; defaults to the one holding the manifest.
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Write the COCO-style export of a manifest.
    Export {
        manifest: PathBuf,
        dest: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{}", e.render())
            } else {
                write!(out, "{}", e.render())
            };
            return code;
        }
    };
    match execute(cli.command, out, err) {
        Ok(code) => code,
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            EXIT_USAGE
        }
    }
}

fn execute(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<i32, String> {
    match command {
        Command::Run {
            config,
            label,
            seed,
            iterations,
            out: root,
        } => cmd_run(&config, Overrides { label, seed, iterations }, &root, out, err),
        Command::Inspect { manifest, record, store } => cmd_inspect(&manifest, record.as_deref(), store, out),
        Command::Export { manifest, dest, store } => cmd_export(&manifest, &dest, store, out),
    }
}

fn io(e: std::io::Error) -> String {
    e.to_string()
}

pub fn cmd_run(
    config: &Path,
    overrides: Overrides,
    root: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32, String> {
    let cfg = load_config(config, &overrides).map_err(|e| e.to_string())?;
    let (gateway, _world) = Gateway::from_endpoints(&cfg.endpoints, cfg.seed)?;
    let store = Store::open(root).map_err(|e| e.to_string())?;

    let mut write_failed = None;
    let mut sink = |e: &crate::pipeline::Event| {
        if let Err(x) = writeln!(err, "{e}") {
            write_failed.get_or_insert(x);
        }
    };
    let run = match Orchestrator::new(&cfg, &gateway).run(&mut sink) {
        Ok(r) => r,
        Err(e @ PipelineError::Config(_)) => return Err(e.to_string()),
        Err(e) => return Err(format!("run failed: {e}")),
    };
    if let Some(e) = write_failed {
        return Err(e.to_string());
    }
    let path = store.put_run(&run).map_err(|e| e.to_string())?;
    write_summary(&run.manifest, out).map_err(io)?;
    writeln!(out, "manifest {}", path.display()).map_err(io)?;
    Ok(if run.manifest.complete { EXIT_OK } else { EXIT_PARTIAL })
}

fn write_summary(m: &DatasetManifest, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "{:<18} {}", "label", m.config.label)?;
    writeln!(out, "{:<18} {}", "records retained", m.records.len())?;
    writeln!(out, "{:<18} {}", "records rejected", m.rejected_records)?;
    for reason in Reason::ALL {
        let n = m.rejected.get(&reason).copied().unwrap_or(0);
        writeln!(out, "  {:<16} {n}", reason.as_str())?;
    }
    writeln!(out, "{:<18} {}", "complete", m.complete)?;
    if let Some(f) = &m.failure {
        writeln!(out, "{:<18} {f}", "failure")?;
    }
    writeln!(out, "{:<18} {}", "run hash", m.run_hash)
}

fn store_for(manifest: &Path, store: Option<PathBuf>) -> PathBuf {
    store.unwrap_or_else(|| {
        manifest
            .parent()
            .and_then(Path::parent)
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from("."))
    })
}

fn short(id: &str) -> &str {
    &id[..id.len().min(12)]
}

pub fn cmd_inspect(
    manifest: &Path,
    record: Option<&str>,
    store: Option<PathBuf>,
    out: &mut dyn Write,
) -> Result<i32, String> {
    let m = load_manifest(manifest).map_err(|e| e.to_string())?;
    let code = if m.complete { EXIT_OK } else { EXIT_PARTIAL };
    let Some(id) = record else {
        write_summary(&m, out).map_err(io)?;
        for r in &m.records {
            writeln!(out, "{}  iteration={} scene={}", r.id, r.iteration, scene_text(r)).map_err(io)?;
        }
        return Ok(code);
    };
    let Some(r) = m.record(id) else {
        let ids: Vec<&str> = m.records.iter().map(|r| r.id.as_str()).collect();
        return Err(format!("no record {id:?} in {}; valid ids: {}", manifest.display(), ids.join(", ")));
    };
    let store = Store::open(store_for(manifest, store)).map_err(|e| e.to_string())?;
    let stored = match store.load_image(&r.image.id) {
        Ok(_) => "ok".to_string(),
        Err(StoreError::MissingImage(_)) => "missing".to_string(),
        Err(e) => e.to_string(),
    };
    write_record(r, &stored, out).map_err(io)?;
    Ok(code)
}

fn scene_text(r: &DatasetRecord) -> String {
    r.scene.map_or_else(|| "init".to_string(), |s| s.to_string())
}

fn write_record(r: &DatasetRecord, stored: &str, out: &mut dyn Write) -> std::io::Result<()> {
    writeln!(out, "record {}", r.id)?;
    writeln!(out, "iteration {} scene {}", r.iteration, scene_text(r))?;
    writeln!(
        out,
        "image {} {}x{} ({stored}) {}",
        r.image.id, r.image.width, r.image.height, r.image.locator
    )?;
    writeln!(out, "caption {:?}", r.annotations.caption)?;
    writeln!(out, "lineage")?;
    for (i, step) in r.lineage.iter().enumerate() {
        let line = match step {
            EditStep::Init {
                prompt,
                seed,
                candidates,
                candidate,
                output,
            } => format!("init prompt={prompt:?} seed={seed} candidate={candidate}/{candidates} -> {}", short(output)),
            EditStep::BackgroundEdit {
                parent,
                instruction,
                seed,
                output,
            } => format!("background_edit {instruction:?} seed={seed} {} -> {}", short(parent), short(output)),
            EditStep::ObjectFill {
                parent,
                label,
                bbox,
                relationship,
                seed,
                output,
            } => format!(
                "object_fill {label:?} box=[{}, {}, {}, {}] {relationship:?} seed={seed} {} -> {}",
                bbox.x1(),
                bbox.y1(),
                bbox.x2(),
                bbox.y2(),
                short(parent),
                short(output)
            ),
        };
        writeln!(out, "  {}. {line}", i + 1)?;
    }
    writeln!(out, "objects")?;
    for (o, m) in r.annotations.objects.iter().zip(&r.annotations.masks) {
        let b = o.bbox;
        writeln!(
            out,
            "  {:?} [{}, {}, {}, {}] score={} mask_area={}",
            o.label,
            b.x1(),
            b.y1(),
            b.x2(),
            b.y2(),
            o.score,
            m.rle.area()
        )?;
    }
    let q = &r.quality;
    let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"));
    let reasons: Vec<&str> = q.reasons().iter().map(|x| x.as_str()).collect();
    writeln!(
        out,
        "quality verdict={:?} psnr={} ssim={} semantic={} required=[{}] found=[{}] reasons=[{}]",
        q.verdict(),
        q.psnr.map_or_else(|| "-".to_string(), |p| p.to_string()),
        opt(q.ssim),
        opt(q.semantic_score),
        q.required_labels.join(", "),
        q.found_labels.join(", "),
        reasons.join(", ")
    )
}

pub fn cmd_export(manifest: &Path, dest: &Path, store: Option<PathBuf>, out: &mut dyn Write) -> Result<i32, String> {
    let m = load_manifest(manifest).map_err(|e| e.to_string())?;
    if !m.complete {
        writeln!(
            out,
            "refusing to export partial manifest {}: {}",
            manifest.display(),
            m.failure.as_deref().unwrap_or("incomplete")
        )
        .map_err(io)?;
        return Ok(EXIT_PARTIAL);
    }
    let store = Store::open(store_for(manifest, store)).map_err(|e| e.to_string())?;
    let doc = store.export_coco(&m, dest).map_err(|e| e.to_string())?;
    writeln!(
        out,
        "exported {} images, {} annotations, {} categories to {}",
        doc.images.len(),
        doc.annotations.len(),
        doc.categories.len(),
        dest.display()
    )
    .map_err(io)?;
    Ok(EXIT_OK)
}
