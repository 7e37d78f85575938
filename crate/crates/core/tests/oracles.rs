//! Metric and geometry implementations against naive reference loops.

mod common;

use common::*;
use proptest::prelude::*;
use synthpipe::geometry::{filter_overlapping, iou, validate_box, BoxRules};
use synthpipe::metrics::{mse, psnr, ssim, MetricParams, Psnr};
use synthpipe::model::{BBox, BoxCandidate, DetectedObject};

#[test]
fn metrics_match_loop_oracles_on_random_pairs() {
    let params = MetricParams::default();
    let mut rng = XorShift(0x9e37_79b9_7f4a_7c15);
    for size in [16, 32] {
        for _ in 0..100 {
            let a = random_rgb(&mut rng, size, size);
            let b = random_rgb(&mut rng, size, size);
            let m = mse(&a, &b).unwrap();
            assert!((m - mse_oracle(&a, &b)).abs() <= 1e-9);
            let p = psnr(&a, &b, &params).unwrap().db();
            assert!((p - psnr_oracle(&a, &b)).abs() <= 1e-9, "{p}");
            let s = ssim(&a, &b, &params).unwrap();
            assert!((s - ssim_oracle(&a, &b)).abs() <= 1e-6, "{s} vs {}", ssim_oracle(&a, &b));
        }
    }
}

#[test]
fn ssim_of_correlated_pairs_matches_oracle() {
    let params = MetricParams::default();
    let mut rng = XorShift(7);
    for _ in 0..20 {
        let a = random_rgb(&mut rng, 24, 20);
        let mut b = a.clone();
        for p in b.pixels_mut() {
            for c in p.0.iter_mut() {
                *c = c.saturating_add(rng.byte() % 24);
            }
        }
        let s = ssim(&a, &b, &params).unwrap();
        assert!((s - ssim_oracle(&a, &b)).abs() <= 1e-6);
        assert!(s > 0.2, "{s}");
    }
}

#[test]
fn metric_fixed_points() {
    let params = MetricParams::default();
    let mut rng = XorShift(99);
    for size in [16, 32] {
        let x = random_rgb(&mut rng, size, size);
        assert!((ssim(&x, &x, &params).unwrap() - 1.0).abs() <= 1e-12);
        assert_eq!(psnr(&x, &x, &params).unwrap(), Psnr::Infinite);
    }
    let zero = image::RgbImage::new(16, 16);
    let sixteen = image::RgbImage::from_pixel(16, 16, image::Rgb([16, 16, 16]));
    let db = psnr(&zero, &sixteen, &params).unwrap().db();
    assert!((db - 10.0 * (65025.0f64 / 256.0).log10()).abs() <= 1e-12);
    assert!((db - 24.0488).abs() <= 1e-3);

    let g100 = image::GrayImage::from_pixel(16, 16, image::Luma([100]));
    let g110 = image::GrayImage::from_pixel(16, 16, image::Luma([110]));
    let s = ssim(&g100, &g110, &params).unwrap();
    let c1 = (0.01f64 * 255.0).powi(2);
    let luminance_only = (2.0 * 100.0 * 110.0 + c1) / (100.0f64.powi(2) + 110.0f64.powi(2) + c1);
    assert!((s - luminance_only).abs() <= 1e-12);
    assert!((s - 0.99548).abs() <= 1e-4);
}

fn random_instance(rng: &mut XorShift) -> (Vec<BoxCandidate>, Vec<DetectedObject>) {
    let n = rng.below(21) as usize;
    let e = rng.below(4) as usize;
    let cands = (0..n)
        .map(|i| BoxCandidate {
            label: format!("obj{i}"),
            bbox: random_box(rng),
            relationship: String::new(),
        })
        .collect();
    let existing = (0..e)
        .map(|i| DetectedObject::new(format!("old{i}"), random_box(rng), 0.5).unwrap())
        .collect();
    (cands, existing)
}

#[test]
fn filter_matches_brute_force_on_1000_instances() {
    let rules = BoxRules::default();
    let mut rng = XorShift(0xdead_beef);
    let mut kept_total = 0;
    let mut dropped_total = 0;
    for _ in 0..1000 {
        let (cands, existing) = random_instance(&mut rng);
        let out = filter_overlapping(&cands, &existing, &rules);
        let expected: Vec<BoxCandidate> = filter_oracle(&cands, &existing, &rules)
            .into_iter()
            .map(|i| cands[i].clone())
            .collect();
        assert_eq!(out.retained, expected);
        assert_eq!(out.retained.len() + out.rejected.len(), cands.len());
        for (i, a) in out.retained.iter().enumerate() {
            for b in &out.retained[i + 1..] {
                assert!(iou_oracle(&a.bbox, &b.bbox) <= rules.iou_max);
            }
            for e in &existing {
                assert!(iou_oracle(&a.bbox, &e.bbox) <= rules.iou_max);
            }
        }
        kept_total += out.retained.len();
        dropped_total += out.rejected.len();
    }
    assert!(kept_total > 500 && dropped_total > 500, "{kept_total} kept, {dropped_total} dropped");
}

#[test]
fn box_rules_on_worked_boxes() {
    let rules = BoxRules::default();
    validate_box(&cat_box(), &rules).unwrap();
    validate_box(&rocks_box(), &rules).unwrap();
    for (x1, y1, x2, y2) in [
        (0.0, 0.0, 75.0, 100.0),
        (0.0, 0.0, 100.0, 75.0),
        (0.0, 0.0, 300.0, 100.0),
        (0.0, 0.0, 100.0, 300.0),
        (450.0, 0.0, 550.0, 100.0),
        (0.0, 450.0, 100.0, 550.0),
        (-1.0, 10.0, 99.0, 110.0),
    ] {
        let b = BBox::new(x1, y1, x2, y2).unwrap();
        assert!(validate_box(&b, &rules).is_err(), "{b:?}");
    }
    validate_box(&BBox::new(0.0, 0.0, 75.5, 299.5).unwrap(), &rules).unwrap();
    validate_box(&BBox::new(212.0, 212.0, 512.0 - 1.0, 511.0).unwrap(), &rules).unwrap();
}

#[test]
fn worked_overlaps() {
    let existing = bench_and_dog();
    let (bench, dog) = (&existing[0].bbox, &existing[1].bbox);
    let cat = cat_box();
    assert_eq!(iou(&cat, dog), 0.0);
    assert_eq!(iou_oracle(&cat, dog), 0.0);
    let with_bench = iou_oracle(&cat, bench);
    assert!((iou(&cat, bench) - with_bench).abs() < 1e-12);
    assert!(with_bench <= 0.30);
    // frozen from the coordinate-compression oracle
    assert!((with_bench - 0.127_745_784_850_014_3).abs() < 1e-12, "{with_bench}");
}

fn arb_box() -> impl Strategy<Value = BBox> {
    (0.0f64..500.0, 0.0f64..500.0, 0.5f64..400.0, 0.5f64..400.0)
        .prop_map(|(x, y, w, h)| BBox::new(x, y, x + w, y + h).unwrap())
}

proptest! {
    #[test]
    fn iou_matches_coordinate_compression(a in arb_box(), b in arb_box()) {
        let fast = iou(&a, &b);
        prop_assert!((fast - iou_oracle(&a, &b)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&fast));
        prop_assert!((fast - iou(&b, &a)).abs() < 1e-15);
    }

    #[test]
    fn iou_with_self_is_one(a in arb_box()) {
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validate_box_matches_oracle(b in arb_box()) {
        let rules = BoxRules::default();
        let expected = violations_oracle(&b, &rules);
        match validate_box(&b, &rules) {
            Ok(()) => prop_assert!(expected.is_empty()),
            Err(v) => prop_assert_eq!(v, expected),
        }
    }
}
