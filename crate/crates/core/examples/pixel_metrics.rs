//! PSNR and SSIM between an image and progressively noisier copies.

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use synthpipe::metrics::{mse, psnr, ssim, MetricParams};

fn main() {
    let params = MetricParams::default();
    let base = RgbImage::from_fn(128, 96, |x, y| Rgb([(x * 2) as u8, (y * 2) as u8, ((x + y) % 256) as u8]));
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    println!("{:>6} {:>10} {:>10} {:>8}", "noise", "mse", "psnr", "ssim");
    for amplitude in [0i16, 2, 8, 32, 96] {
        let mut noisy = base.clone();
        for p in noisy.pixels_mut() {
            for c in p.0.iter_mut() {
                let delta = if amplitude == 0 { 0 } else { rng.gen_range(-amplitude..=amplitude) };
                *c = (*c as i16 + delta).clamp(0, 255) as u8;
            }
        }
        let m = mse(&base, &noisy).unwrap();
        let p = psnr(&base, &noisy, &params).unwrap();
        let s = ssim(&base, &noisy, &params).unwrap();
        println!("{amplitude:>6} {m:>10.3} {:>10} {s:>8.4}", p.to_string());
    }
}
