//! Default replies of the mock chat backend, one synthesiser per prompt kind.

use std::sync::OnceLock;

use rand::Rng;
use regex::Regex;

use super::mock::{rng_for, Lexicon};
use crate::geometry::iou;
use crate::model::{BBox, BoxCandidate};
use crate::prompt::{format_candidates, PromptKind, PromptRequest};

/// Background themes with five associated objects each.
pub(super) const THEMES: &[(&str, [&str; 5])] = &[
    ("snowy mountain", ["pine tree", "boulder", "snowman", "cabin", "sled"]),
    ("sunny beach", ["beach umbrella", "seashell", "sandcastle", "surfboard", "crab"]),
    ("autumn forest", ["mushroom", "fallen log", "fern", "squirrel", "lantern"]),
    ("city street", ["bicycle", "street lamp", "mailbox", "bus stop", "fire hydrant"]),
    ("flower garden", ["watering can", "tulip", "butterfly", "garden gnome", "wheelbarrow"]),
    ("desert oasis", ["palm tree", "camel", "cactus", "tent", "water jug"]),
];

const PROMPT_SETTINGS: &[&str] = &["sunny field", "quiet park", "grassy meadow"];

fn re(cell: &'static OnceLock<Regex>, pattern: &str) -> &'static Regex {
    cell.get_or_init(|| Regex::new(pattern).expect("static regex"))
}

fn descriptor_label(user: &str) -> Option<String> {
    static RE: OnceLock<Regex> = OnceLock::new();
    re(&RE, r"distinguishing an? (.+?) in a photo\?")
        .captures(user)
        .map(|c| c[1].to_string())
}

/// Registers the category named by a visual descriptor prompt, so later
/// generation prompts mentioning it place the object.
pub(super) fn learn(lexicon: &mut Lexicon, request: &PromptRequest) {
    if PromptKind::detect(request) == Some(PromptKind::VisualDescriptor) {
        if let Some(label) = descriptor_label(request.user_content()) {
            lexicon.learn_object(&label);
        }
    }
}

pub(super) fn respond(seed: u64, request: &PromptRequest) -> String {
    let user = request.user_content();
    match PromptKind::detect(request) {
        Some(PromptKind::VisualDescriptor) => visual_features(user),
        Some(PromptKind::AigcCreator) => generation_prompts(user),
        Some(PromptKind::SceneImagination) => scenes(seed, user),
        Some(PromptKind::BoxCandidates) => boxes(seed, user),
        None => "I can only help with image dataset prompts.".to_string(),
    }
}

fn visual_features(user: &str) -> String {
    let label = descriptor_label(user).unwrap_or_else(|| "object".into());
    format!(
        "- distinctive {label} silhouette; characteristic {label} coloration\n\
         - natural {label} texture; typical {label} proportions"
    )
}

fn generation_prompts(user: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let caps = re(&RE, r"Give me (\d+) high quality prompts .*? containing the (.+?)\. Scene prompts").captures(user);
    let (n, label) = match caps {
        Some(c) => (c[1].parse::<usize>().unwrap_or(1).max(1), c[2].to_string()),
        None => (1, "object".to_string()),
    };
    let mut out = format!(
        "Sure, here are {n} high quality prompts for text-to-image models about the amazing close-up realistic scene containing the {label}:"
    );
    for i in 0..n {
        let setting = PROMPT_SETTINGS[i % PROMPT_SETTINGS.len()];
        out.push_str(&format!(
            "\n{}. A photo-realistic close-up scene of a {label} beside a wooden bench in a {setting}, soft daylight.",
            i + 1
        ));
    }
    out
}

fn scenes(seed: u64, user: &str) -> String {
    static RE: OnceLock<Regex> = OnceLock::new();
    let caps = re(
        &RE,
        r"Give me (\d+) real scene descriptions based on the context (.*?)\. The scene objects should consist (.*?), and also contain",
    )
    .captures(user);
    let (n, caption, existing) = match caps {
        Some(c) => (c[1].parse::<usize>().unwrap_or(1).max(1), c[2].to_string(), c[3].to_string()),
        None => (1, String::new(), "object".to_string()),
    };
    let start = rng_for(seed, &[b"scenes", caption.as_bytes()]).gen_range(0..THEMES.len());
    let picked: Vec<_> = (0..n).map(|i| THEMES[(start + i) % THEMES.len()]).collect();
    let quote = |s: &str| format!("'{s}'");
    let backgrounds: Vec<String> = picked.iter().map(|(bg, _)| quote(bg)).collect();
    let objects: Vec<String> = picked
        .iter()
        .map(|(_, objs)| format!("[{}]", objs.iter().map(|o| quote(o)).collect::<Vec<_>>().join(", ")))
        .collect();
    let descriptions: Vec<String> = picked
        .iter()
        .map(|(bg, objs)| {
            quote(&format!(
                "The {existing} rest in a {bg} among a {}, a {}, a {}, a {} and a {}",
                objs[0], objs[1], objs[2], objs[3], objs[4]
            ))
        })
        .collect();
    format!(
        "{{'background': [{}], 'objects': [{}], 'description': [{}]}}",
        backgrounds.join(", "),
        objects.join(", "),
        descriptions.join(", ")
    )
}

fn boxes(seed: u64, user: &str) -> String {
    static SIZE: OnceLock<Regex> = OnceLock::new();
    static BOX: OnceLock<Regex> = OnceLock::new();
    static LABEL: OnceLock<Regex> = OnceLock::new();
    static TARGETS: OnceLock<Regex> = OnceLock::new();
    let (cw, ch) = re(&SIZE, r"image size is \((\d+),(\d+)\)")
        .captures(user)
        .map(|c| (c[1].parse::<f64>().unwrap_or(512.0), c[2].parse::<f64>().unwrap_or(512.0)))
        .unwrap_or((512.0, 512.0));
    let mut occupied: Vec<BBox> = re(&BOX, r#""box": \[([^\]]+)\]"#)
        .captures_iter(user)
        .filter_map(|c| {
            let v: Vec<f64> = c[1].split(',').filter_map(|p| p.trim().parse().ok()).collect();
            (v.len() == 4).then(|| BBox::new(v[0], v[1], v[2], v[3]).ok()).flatten()
        })
        .collect();
    let anchor = re(&LABEL, r#""label": "([^"]+)""#)
        .captures(user)
        .map(|c| c[1].to_string())
        .unwrap_or_else(|| "scene".into());
    let targets: Vec<String> = re(&TARGETS, r"of the following objects (.+?)\. The size of the")
        .captures(user)
        .map(|c| c[1].split(", ").map(str::to_string).collect())
        .unwrap_or_default();

    let relations = ["next to", "near", "behind", "in front of"];
    let mut rng = rng_for(seed, &[b"boxes", user.as_bytes()]);
    let mut out = Vec::new();
    for (i, label) in targets.iter().enumerate() {
        let mut chosen = None;
        for _ in 0..300 {
            let w = rng.gen_range(90..=160) as f64;
            let h = rng.gen_range(90..=160) as f64;
            let x = (rng.gen_range(0.0..=(cw - w).max(0.0)) * 100.0).round() / 100.0;
            let y = (rng.gen_range(0.0..=(ch - h).max(0.0)) * 100.0).round() / 100.0;
            let Ok(b) = BBox::new(x, y, ((x + w) * 100.0).round() / 100.0, ((y + h) * 100.0).round() / 100.0) else { continue };
            let clear = occupied.iter().all(|o| iou(o, &b) <= 0.1);
            chosen = Some(b);
            if clear {
                break;
            }
        }
        if let Some(b) = chosen {
            occupied.push(b);
            out.push(BoxCandidate {
                label: label.clone(),
                bbox: b,
                relationship: format!("{} the {anchor}", relations[i % relations.len()]),
            });
        }
    }
    format_candidates(&out)
}
