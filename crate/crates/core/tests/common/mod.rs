//! Shared inputs and independent oracles for the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use image::RgbImage;
use synthpipe::geometry::{BoxRules, Violation};
use synthpipe::model::{BBox, BoxCandidate, Canvas, DetectedObject, LabelWord, VisualFeature};
use synthpipe::prompt::{
    render_aigc_creator, render_box_candidates, render_scene_imagination, render_visual_descriptor, Demonstration,
    PromptRequest, Role,
};

pub fn manifest_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn golden_dir() -> PathBuf {
    manifest_dir().join("tests/golden")
}

pub fn blessing() -> bool {
    std::env::var_os("SYNTHPIPE_BLESS").is_some()
}

/// Compares `actual` with the golden file, rewriting it in bless mode.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_dir().join(name);
    if blessing() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, actual).unwrap();
    }
    let expected = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    if expected == actual {
        Ok(())
    } else {
        let line = expected
            .lines()
            .zip(actual.lines())
            .position(|(a, b)| a != b)
            .map_or_else(|| "length".to_string(), |i| format!("line {}", i + 1));
        Err(format!("{name} differs from golden at {line}"))
    }
}

pub fn transcript(req: &PromptRequest) -> String {
    let mut out = String::new();
    for m in &req.messages {
        let role = match m.role {
            Role::System => "system",
            Role::User => "user",
        };
        out.push_str(&format!("--- {role} ---\n{}\n", m.content));
    }
    out
}

pub fn lemur_features() -> VisualFeature {
    VisualFeature::new(
        [
            "Large, forward-facing eyes with binocular vision",
            "Soft, thick fur covering the body",
            "Long, bushy tail",
            "Striking coloration patterns such as black and white rings",
            "Slender fingers and toes with opposable thumbs for grasping and climbing",
            "Prominent ears that can be pointed or rounded with tufts of fur",
            "Wet, reflective nose",
            "Rounded head with a shortened snout and large ears",
            "Relatively small body size, typically weighing between 2 and 5 kilograms",
            "Distinctive vocalization or call that can vary between species and subspecies",
        ]
        .map(String::from)
        .to_vec(),
    )
    .unwrap()
}

pub const DOG_CAPTION: &str = "there is a dog sitting on a bench in a field.";

pub fn bench_and_dog() -> Vec<DetectedObject> {
    vec![
        DetectedObject::new("bench", BBox::new(33.93, 224.34, 463.20, 491.01).unwrap(), 0.84).unwrap(),
        DetectedObject::new("dog", BBox::new(175.71, 116.29, 311.58, 367.13).unwrap(), 0.43).unwrap(),
    ]
}

pub fn cat_box() -> BBox {
    BBox::new(343.23, 176.29, 467.23, 353.13).unwrap()
}

pub fn rocks_box() -> BBox {
    BBox::new(200.0, 50.0, 300.0, 150.0).unwrap()
}

pub const CAT_REPLY: &str = r#"Return Results: {"label": 'cat', "box": [343.23, 176.29, 467.23, 353.13], "relationship": 'sitting next to the dog.'}"#;

pub const ROCKS_REPLY: &str = "{label: 'rocks', box: [200, 50, 300, 150], relationship: 'near the cabin and surrounded by trees'}";

/// The four conversations rendered with the worked inputs of the prompt table.
pub fn table_prompts() -> Vec<(&'static str, PromptRequest)> {
    let lemur = LabelWord::new("lemur").unwrap();
    vec![
        ("visual_descriptor.txt", render_visual_descriptor(&lemur)),
        (
            "aigc_creator.txt",
            render_aigc_creator(&lemur, &lemur_features(), 1, &[Demonstration::red_panda()]).unwrap(),
        ),
        (
            "scene_imagination.txt",
            render_scene_imagination(DOG_CAPTION, &["bench".into(), "dog".into()], 3).unwrap(),
        ),
        (
            "box_candidates.txt",
            render_box_candidates(DOG_CAPTION, &bench_and_dog(), &["cat".into()], 1, Canvas::default()).unwrap(),
        ),
    ]
}

/// Deterministic xorshift stream so the oracle inputs do not depend on the
/// crate under test.
pub struct XorShift(pub u64);

impl XorShift {
    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.0;
        x ^= x << 13;
        x ^= x >> 7;
        x ^= x << 17;
        self.0 = x;
        x
    }

    pub fn below(&mut self, n: u64) -> u64 {
        self.next_u64() % n
    }

    pub fn byte(&mut self) -> u8 {
        (self.next_u64() >> 24) as u8
    }
}

pub fn random_rgb(rng: &mut XorShift, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| image::Rgb([rng.byte(), rng.byte(), rng.byte()]))
}

/// Per-pixel, per-channel squared error loop.
pub fn mse_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
    let mut sum = 0.0;
    let mut n = 0.0;
    for y in 0..a.height() {
        for x in 0..a.width() {
            let p = a.get_pixel(x, y);
            let q = b.get_pixel(x, y);
            for c in 0..3 {
                let d = f64::from(p[c]) - f64::from(q[c]);
                sum += d * d;
                n += 1.0;
            }
        }
    }
    sum / n
}

pub fn psnr_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
    10.0 * (255.0f64 * 255.0 / mse_oracle(a, b)).log10()
}

fn luma(img: &RgbImage, x: u32, y: u32) -> f64 {
    let p = img.get_pixel(x, y);
    0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2])
}

/// Direct sliding-window SSIM: 11x11 Gaussian window (sigma 1.5) built as a
/// 2-D kernel, two-pass weighted moments, mean over valid windows.
pub fn ssim_oracle(a: &RgbImage, b: &RgbImage) -> f64 {
    let k = 11usize;
    let sigma = 1.5f64;
    let mut kernel = vec![vec![0.0f64; k]; k];
    let mut total = 0.0;
    for (j, row) in kernel.iter_mut().enumerate() {
        for (i, v) in row.iter_mut().enumerate() {
            let dx = i as f64 - 5.0;
            let dy = j as f64 - 5.0;
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    for row in kernel.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let (w, h) = (a.width() as usize, a.height() as usize);
    let mut acc = 0.0;
    let mut count = 0.0;
    for oy in 0..=h - k {
        for ox in 0..=w - k {
            let (mut ma, mut mb) = (0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    let (x, y) = ((ox + i) as u32, (oy + j) as u32);
                    ma += kernel[j][i] * luma(a, x, y);
                    mb += kernel[j][i] * luma(b, x, y);
                }
            }
            let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
            for j in 0..k {
                for i in 0..k {
                    let (x, y) = ((ox + i) as u32, (oy + j) as u32);
                    let da = luma(a, x, y) - ma;
                    let db = luma(b, x, y) - mb;
                    va += kernel[j][i] * da * da;
                    vb += kernel[j][i] * db * db;
                    cov += kernel[j][i] * da * db;
                }
            }
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
            count += 1.0;
        }
    }
    acc / count
}

/// Intersection and union areas by coordinate compression: the plane is cut
/// at every box edge and each elementary cell is tested for membership.
pub fn overlap_areas(a: &BBox, b: &BBox) -> (f64, f64) {
    let mut xs = vec![a.x1(), a.x2(), b.x1(), b.x2()];
    let mut ys = vec![a.y1(), a.y2(), b.y1(), b.y2()];
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let inside = |bx: &BBox, cx: f64, cy: f64| bx.x1() <= cx && cx <= bx.x2() && bx.y1() <= cy && cy <= bx.y2();
    let (mut inter, mut union) = (0.0, 0.0);
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let area = (xw[1] - xw[0]) * (yw[1] - yw[0]);
            if area <= 0.0 {
                continue;
            }
            let (cx, cy) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            let (ia, ib) = (inside(a, cx, cy), inside(b, cx, cy));
            if ia && ib {
                inter += area;
            }
            if ia || ib {
                union += area;
            }
        }
    }
    (inter, union)
}

pub fn iou_oracle(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = overlap_areas(a, b);
    if inter <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

pub fn violations_oracle(b: &BBox, rules: &BoxRules) -> Vec<Violation> {
    let mut v = Vec::new();
    let (w, h) = (b.x2() - b.x1(), b.y2() - b.y1());
    if !(w > rules.min_side) {
        v.push(Violation::WidthTooSmall);
    }
    if !(w < rules.max_side) {
        v.push(Violation::WidthTooLarge);
    }
    if !(h > rules.min_side) {
        v.push(Violation::HeightTooSmall);
    }
    if !(h < rules.max_side) {
        v.push(Violation::HeightTooLarge);
    }
    let inside = b.x1() >= 0.0
        && b.y1() >= 0.0
        && b.x2() <= f64::from(rules.canvas.width)
        && b.y2() <= f64::from(rules.canvas.height);
    if !inside {
        v.push(Violation::OutsideCanvas);
    }
    v
}

/// Brute-force greedy filter: a candidate survives when it is valid and no
/// existing box or earlier survivor overlaps it beyond the threshold.
pub fn filter_oracle(cands: &[BoxCandidate], existing: &[DetectedObject], rules: &BoxRules) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    for (i, c) in cands.iter().enumerate() {
        if !violations_oracle(&c.bbox, rules).is_empty() {
            continue;
        }
        let hits_existing = existing.iter().any(|e| iou_oracle(&c.bbox, &e.bbox) > rules.iou_max);
        let hits_kept = kept.iter().any(|&j| iou_oracle(&c.bbox, &cands[j].bbox) > rules.iou_max);
        if !hits_existing && !hits_kept {
            kept.push(i);
        }
    }
    kept
}

pub fn random_box(rng: &mut XorShift) -> BBox {
    let x1 = rng.below(480) as f64;
    let y1 = rng.below(480) as f64;
    let w = 1.0 + rng.below(340) as f64;
    let h = 1.0 + rng.below(340) as f64;
    BBox::new(x1, y1, x1 + w, y1 + h).unwrap()
}

pub fn mock_config_path() -> PathBuf {
    manifest_dir().join("configs/mock.toml")
}

/// The seed-42 red panda configuration from `configs/mock.toml`.
pub fn golden_config() -> synthpipe::pipeline::PipelineConfig {
    let cfg = synthpipe::config::load_config(&mock_config_path(), &Default::default()).unwrap();
    assert_eq!((cfg.seed, cfg.iterations, cfg.scenes_per_iteration), (42, 1, 2));
    cfg
}

pub fn run_mock(
    cfg: &synthpipe::pipeline::PipelineConfig,
) -> (synthpipe::pipeline::RunOutput, Option<std::sync::Arc<synthpipe::gateway::MockWorld>>, synthpipe::gateway::Gateway) {
    let (gateway, world) = synthpipe::gateway::Gateway::from_endpoints(&cfg.endpoints, cfg.seed).unwrap();
    let out = synthpipe::pipeline::Orchestrator::new(cfg, &gateway).run(&mut |_| {}).unwrap();
    (out, world, gateway)
}
