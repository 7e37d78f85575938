//! Pixel fidelity metrics: MSE, PSNR and Gaussian-windowed SSIM.
//!
//! All metrics take any 8-bit `image` buffer. MSE and PSNR run over every
//! channel; SSIM runs on a BT.601 luma plane for colour inputs.

use std::fmt;
use std::ops::Deref;

use image::{ImageBuffer, Pixel};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("image dimensions differ: {0}x{1}x{2} vs {3}x{4}x{5}")]
    DimensionMismatch(u32, u32, u8, u32, u32, u8),
    #[error("image {width}x{height} is smaller than the {window}px SSIM window")]
    TooSmall { width: u32, height: u32, window: usize },
    #[error("invalid metric parameters: {0}")]
    InvalidParams(&'static str),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricParams {
    pub bit_depth_max: f64,
    pub ssim_window: usize,
    pub ssim_sigma: f64,
    pub k1: f64,
    pub k2: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        Self {
            bit_depth_max: 255.0,
            ssim_window: 11,
            ssim_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
        }
    }
}

impl MetricParams {
    pub fn validate(&self) -> Result<(), MetricError> {
        if self.ssim_window < 3 || self.ssim_window.is_multiple_of(2) {
            return Err(MetricError::InvalidParams("ssim_window must be odd and >= 3"));
        }
        if !(self.ssim_sigma > 0.0) {
            return Err(MetricError::InvalidParams("ssim_sigma must be positive"));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(MetricError::InvalidParams("k1 and k2 must be positive"));
        }
        if !(self.bit_depth_max > 0.0) {
            return Err(MetricError::InvalidParams("bit_depth_max must be positive"));
        }
        Ok(())
    }

    pub fn c1(&self) -> f64 {
        (self.k1 * self.bit_depth_max).powi(2)
    }

    pub fn c2(&self) -> f64 {
        (self.k2 * self.bit_depth_max).powi(2)
    }

    /// Normalised 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let half = (self.ssim_window / 2) as f64;
        let raw: Vec<f64> = (0..self.ssim_window)
            .map(|i| {
                let d = i as f64 - half;
                (-(d * d) / (2.0 * self.ssim_sigma * self.ssim_sigma)).exp()
            })
            .collect();
        let sum: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / sum).collect()
    }
}

/// Peak signal-to-noise ratio in dB. Identical inputs give `Infinite`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn meets(&self, min_db: f64) -> bool {
        match self {
            Psnr::Infinite => true,
            Psnr::Finite(db) => *db >= min_db,
        }
    }

    pub fn db(&self) -> f64 {
        match self {
            Psnr::Infinite => f64::INFINITY,
            Psnr::Finite(db) => *db,
        }
    }
}

impl fmt::Display for Psnr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Psnr::Infinite => f.write_str("inf"),
            Psnr::Finite(db) => write!(f, "{db:.4}"),
        }
    }
}

// JSON has no infinity; the sentinel travels as the string "inf".
impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Psnr::Infinite => s.serialize_str("inf"),
            Psnr::Finite(db) => s.serialize_f64(*db),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Psnr::Infinite),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("invalid psnr {t:?}"))),
        }
    }
}

fn check_dims<P, C>(a: &ImageBuffer<P, C>, b: &ImageBuffer<P, C>) -> Result<(), MetricError>
where
    P: Pixel<Subpixel = u8>,
    C: Deref<Target = [u8]>,
{
    if a.dimensions() != b.dimensions() {
        let ch = P::CHANNEL_COUNT;
        return Err(MetricError::DimensionMismatch(
            a.width(),
            a.height(),
            ch,
            b.width(),
            b.height(),
            ch,
        ));
    }
    Ok(())
}

pub fn mse<P, C>(a: &ImageBuffer<P, C>, b: &ImageBuffer<P, C>) -> Result<f64, MetricError>
where
    P: Pixel<Subpixel = u8>,
    C: Deref<Target = [u8]>,
{
    check_dims(a, b)?;
    let (ra, rb): (&[u8], &[u8]) = (a.as_raw(), b.as_raw());
    let n = ra.len();
    if n == 0 {
        return Ok(0.0);
    }
    // exact integer accumulation; 8-bit squared errors cannot overflow u64 here
    let sum: u64 = ra
        .iter()
        .zip(rb)
        .map(|(&x, &y)| {
            let d = i64::from(x) - i64::from(y);
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / n as f64)
}

pub fn psnr<P, C>(
    a: &ImageBuffer<P, C>,
    b: &ImageBuffer<P, C>,
    params: &MetricParams,
) -> Result<Psnr, MetricError>
where
    P: Pixel<Subpixel = u8>,
    C: Deref<Target = [u8]>,
{
    let err = mse(a, b)?;
    Ok(psnr_from_mse(err, params.bit_depth_max))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> Psnr {
    if mse == 0.0 {
        Psnr::Infinite
    } else {
        Psnr::Finite(10.0 * (peak * peak / mse).log10())
    }
}

/// Row-major luma plane. Single-channel input is used as is; colour input is
/// weighted 0.299 R + 0.587 G + 0.114 B. Alpha is ignored.
pub fn luma_plane<P, C>(img: &ImageBuffer<P, C>) -> Vec<f64>
where
    P: Pixel<Subpixel = u8>,
    C: Deref<Target = [u8]>,
{
    let ch = P::CHANNEL_COUNT as usize;
    let raw: &[u8] = img.as_raw();
    raw.chunks_exact(ch)
        .map(|px| {
            if ch >= 3 {
                0.299 * f64::from(px[0]) + 0.587 * f64::from(px[1]) + 0.114 * f64::from(px[2])
            } else {
                f64::from(px[0])
            }
        })
        .collect()
}

/// Mean SSIM over every fully-contained window (no padding).
pub fn ssim<P, C>(
    a: &ImageBuffer<P, C>,
    b: &ImageBuffer<P, C>,
    params: &MetricParams,
) -> Result<f64, MetricError>
where
    P: Pixel<Subpixel = u8>,
    C: Deref<Target = [u8]>,
{
    check_dims(a, b)?;
    params.validate()?;
    let (w, h) = a.dimensions();
    let win = params.ssim_window;
    if (w as usize) < win || (h as usize) < win {
        return Err(MetricError::TooSmall {
            width: w,
            height: h,
            window: win,
        });
    }
    let la = luma_plane(a);
    let lb = luma_plane(b);
    Ok(ssim_planes(&la, &lb, w as usize, h as usize, params))
}

fn ssim_planes(a: &[f64], b: &[f64], w: usize, h: usize, params: &MetricParams) -> f64 {
    let taps = params.gaussian_taps();
    let win = taps.len();
    let ow = w - win + 1;
    let oh = h - win + 1;

    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();

    let mu_a = blur_valid(a, w, h, &taps);
    let mu_b = blur_valid(b, w, h, &taps);
    let e_aa = blur_valid(&aa, w, h, &taps);
    let e_bb = blur_valid(&bb, w, h, &taps);
    let e_ab = blur_valid(&ab, w, h, &taps);

    let (c1, c2) = (params.c1(), params.c2());
    let mut total = 0.0;
    for i in 0..ow * oh {
        total += ssim_term(mu_a[i], mu_b[i], e_aa[i], e_bb[i], e_ab[i], c1, c2);
    }
    total / (ow * oh) as f64
}

#[inline]
pub(crate) fn ssim_term(ma: f64, mb: f64, eaa: f64, ebb: f64, eab: f64, c1: f64, c2: f64) -> f64 {
    let va = eaa - ma * ma;
    let vb = ebb - mb * mb;
    let cov = eab - ma * mb;
    ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Separable valid-region convolution: output is `(w-k+1) x (h-k+1)`.
fn blur_valid(src: &[f64], w: usize, h: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut horiz = vec![0.0; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = taps.iter().zip(&row[x..x + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, t) in taps.iter().enumerate() {
                acc += t * horiz[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}
