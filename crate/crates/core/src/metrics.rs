//! Image losses and quality metrics, and the weighted training objective.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::ImageRGBA;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

/// RMS difference of premultiplied RGB over all pixels and channels.
pub fn color_loss(pred: &ImageRGBA, gt: &ImageRGBA) -> Result<f64> {
    Ok(mse(pred, gt)?.sqrt())
}

fn mse(pred: &ImageRGBA, gt: &ImageRGBA) -> Result<f64> {
    pred.same_size(gt)?;
    let sum = kahan(pred.rgb.iter().zip(&gt.rgb).flat_map(|(a, b)| (0..3).map(move |k| (a[k] - b[k]).powi(2))));
    Ok(sum / (3 * pred.len()).max(1) as f64)
}

/// RMS difference between rendered alpha and a mask.
pub fn mask_loss(pred_alpha: &[f64], gt_mask: &[f64]) -> Result<f64> {
    if pred_alpha.len() != gt_mask.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} mask pixels", pred_alpha.len(), gt_mask.len())));
    }
    let sum = kahan(pred_alpha.iter().zip(gt_mask).map(|(a, b)| (a - b).powi(2)));
    Ok((sum / pred_alpha.len().max(1) as f64).sqrt())
}

/// PSNR in dB for unit-range channels; +∞ for identical images.
pub fn psnr(pred: &ImageRGBA, gt: &ImageRGBA) -> Result<f64> {
    let m = mse(pred, gt)?;
    Ok(if m == 0.0 { f64::INFINITY } else { 10.0 * (1.0 / m).log10() })
}

fn kahan(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut c) = (0.0, 0.0);
    for v in values {
        let y = v - c;
        let t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!("{} values for {width}x{height}", data.len())));
        }
        Ok(Self { width, height, data })
    }

    pub fn channel(img: &ImageRGBA, k: usize) -> Self {
        Self { width: img.width, height: img.height, data: img.rgb.iter().map(|p| p[k]).collect() }
    }
}

/// Normalized 1D Gaussian taps; the window is their outer product.
fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..size).map(|i| (-(i as f64 - c).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over window placements that fit inside the image, every
/// `stride` pixels in each direction.
pub fn ssim_plane(a: &Plane, b: &Plane, window: usize, sigma: f64, stride: usize) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) || a.data.len() != b.data.len() {
        return Err(Error::DimensionMismatch(format!("{}x{} vs {}x{}", a.width, a.height, b.width, b.height)));
    }
    if a.width < window || a.height < window || window == 0 || stride == 0 {
        return Err(Error::ImageTooSmall { width: a.width, height: a.height, window });
    }
    let taps = gaussian_taps(window, sigma);
    let (w, h) = (a.width, a.height);
    let xs: Vec<usize> = (0..=w - window).step_by(stride).collect();
    let ys: Vec<usize> = (0..=h - window).step_by(stride).collect();
    // Horizontal pass over every row, at the sampled x offsets only.
    let fields = |f: &dyn Fn(usize) -> f64| -> Vec<f64> {
        let mut out = vec![0.0; h * xs.len()];
        for y in 0..h {
            for (ix, &x0) in xs.iter().enumerate() {
                out[y * xs.len() + ix] = taps.iter().enumerate().map(|(t, wt)| wt * f(y * w + x0 + t)).sum();
            }
        }
        out
    };
    let (da, db) = (&a.data, &b.data);
    let h_stats = [
        fields(&|i| da[i]),
        fields(&|i| db[i]),
        fields(&|i| da[i] * da[i]),
        fields(&|i| db[i] * db[i]),
        fields(&|i| da[i] * db[i]),
    ];
    let mut total = Vec::with_capacity(xs.len() * ys.len());
    for &y0 in &ys {
        for ix in 0..xs.len() {
            let v =
                |f: &Vec<f64>| -> f64 { taps.iter().enumerate().map(|(t, wt)| wt * f[(y0 + t) * xs.len() + ix]).sum() };
            let [mx, my, xx, yy, xy] = [0, 1, 2, 3, 4].map(|k| v(&h_stats[k]));
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cxy = xy - mx * my;
            total.push(
                ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                    / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2)),
            );
        }
    }
    Ok(kahan(total.iter().copied()) / total.len() as f64)
}

/// SSIM of premultiplied RGB, averaged over channels: 11×11 Gaussian window, σ 1.5.
pub fn ssim(pred: &ImageRGBA, gt: &ImageRGBA) -> Result<f64> {
    pred.same_size(gt)?;
    let mut s = 0.0;
    for k in 0..3 {
        s += ssim_plane(&Plane::channel(pred, k), &Plane::channel(gt, k), SSIM_WINDOW, SSIM_SIGMA, 1)?;
    }
    Ok(s / 3.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct S3imParams {
    pub patches: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl Default for S3imParams {
    fn default() -> Self {
        Self { patches: 10, kernel: 4, stride: 4 }
    }
}

/// Stochastic structural similarity: the mean kernel-K SSIM over `patches`
/// pixel shuffles (the same permutation for both images, the first being the
/// identity), each laid out with the original image dimensions.
pub fn s3im(pred: &ImageRGBA, gt: &ImageRGBA, p: S3imParams, seed: u64) -> Result<f64> {
    pred.same_size(gt)?;
    if p.patches == 0 {
        return Err(Error::InvalidParameter("S3IM needs at least one patch".into()));
    }
    if pred.width < p.kernel || pred.height < p.kernel {
        return Err(Error::ImageTooSmall { width: pred.width, height: pred.height, window: p.kernel });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..pred.len()).collect();
    let mut sum = 0.0;
    for m in 0..p.patches {
        if m > 0 {
            perm = (0..pred.len()).collect();
            perm.shuffle(&mut rng);
        }
        let mut s = 0.0;
        for k in 0..3 {
            let pa =
                Plane { width: pred.width, height: pred.height, data: perm.iter().map(|&i| pred.rgb[i][k]).collect() };
            let pb = Plane { width: gt.width, height: gt.height, data: perm.iter().map(|&i| gt.rgb[i][k]).collect() };
            s += ssim_plane(&pa, &pb, p.kernel, SSIM_SIGMA, p.stride)?;
        }
        sum += s / 3.0;
    }
    Ok(sum / p.patches as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_image: f64,
    pub lambda_percep: f64,
    pub lambda_joint: f64,
    pub alpha_mask: f64,
    pub alpha_ssim: f64,
    pub alpha_s3im: f64,
    pub alpha_lpips: f64,
    pub alpha_joint: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_image: 1.0,
            lambda_percep: 1.0,
            lambda_joint: 1.0,
            alpha_mask: 0.5,
            alpha_ssim: 0.2,
            alpha_s3im: 0.5,
            alpha_lpips: 0.3,
            alpha_joint: 0.06,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.lambda_image,
            self.lambda_percep,
            self.lambda_joint,
            self.alpha_mask,
            self.alpha_ssim,
            self.alpha_s3im,
            self.alpha_lpips,
            self.alpha_joint,
        ];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParameter(format!("loss weights must be finite and nonnegative: {self:?}")));
        }
        Ok(())
    }
}

/// Raw loss terms before weighting. `ssim` and `s3im` are similarities; the
/// losses use `1 - value`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub color: f64,
    pub mask: f64,
    pub ssim: f64,
    pub s3im: f64,
    pub lpips: f64,
    pub psnr: f64,
    pub joint_nll: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossReport {
    pub parts: LossParts,
    pub weights: LossWeights,
    pub image: f64,
    pub percep: f64,
    pub joint: f64,
    pub total: f64,
}

pub fn total_loss(parts: LossParts, weights: LossWeights) -> Result<LossReport> {
    weights.validate()?;
    let image = parts.color + weights.alpha_mask * parts.mask;
    let percep = weights.alpha_ssim * (1.0 - parts.ssim)
        + weights.alpha_s3im * (1.0 - parts.s3im)
        + weights.alpha_lpips * parts.lpips;
    let joint = weights.alpha_joint * parts.joint_nll;
    let total = weights.lambda_image * image + weights.lambda_percep * percep + weights.lambda_joint * joint;
    Ok(LossReport { parts, weights, image, percep, joint, total })
}

/// All image terms of `pred` against `gt`; `lpips` and `joint_nll` stay zero.
pub fn image_parts(pred: &ImageRGBA, gt: &ImageRGBA, s3im_params: S3imParams, seed: u64) -> Result<LossParts> {
    Ok(LossParts {
        color: color_loss(pred, gt)?,
        mask: {
            pred.same_size(gt)?;
            mask_loss(&pred.alpha, &gt.alpha)?
        },
        ssim: ssim(pred, gt)?,
        s3im: s3im(pred, gt, s3im_params, seed)?,
        lpips: 0.0,
        psnr: psnr(pred, gt)?,
        joint_nll: 0.0,
    })
}

impl LossReport {
    pub fn table(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("color_loss", self.parts.color),
            ("mask_loss", self.parts.mask),
            ("ssim", self.parts.ssim),
            ("s3im", self.parts.s3im),
            ("psnr", self.parts.psnr),
            ("joint_nll", self.parts.joint_nll),
            ("loss_image", self.image),
            ("loss_percep", self.percep),
            ("loss_joint", self.joint),
            ("loss_total", self.total),
        ]
    }
}

/// `%.9g`-style formatting; `inf`, `-inf` and `nan` spelled out.
pub fn format_sig9(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.into();
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.8e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: String| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if (-5..9).contains(&exp) {
        trim(format!("{:.*}", (8 - exp).max(0) as usize, v))
    } else {
        format!("{}e{}{:02}", trim(mant.to_string()), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

/// One `name = value` line per entry, in the given order.
pub fn format_metrics(entries: &[(&str, f64)]) -> String {
    let mut s = String::new();
    for (k, v) in entries {
        let _ = writeln!(s, "{k} = {}", format_sig9(*v));
    }
    s
}

pub fn parse_metrics(text: &str, origin: &str) -> Result<Vec<(String, f64)>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let (k, v) = l.split_once('=').ok_or_else(|| Error::parse(origin, i + 1, "expected `name = value`"))?;
            let v = v.trim().parse::<f64>().map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
            Ok((k.trim().to_string(), v))
        })
        .collect()
}
