//! Full-reference (PSNR, SSIM) and no-reference (blur) quality metrics.
//!
//! SSIM and the blur estimate operate on Rec.709 luma of the stored RGB
//! values. The blur metric follows the Crété-Roffet construction: higher
//! means blurrier.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoClip};

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const BLUR_TAPS: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LumaWeights(pub [f64; 3]);

impl LumaWeights {
    pub const REC709: LumaWeights = LumaWeights([0.2126, 0.7152, 0.0722]);
}

impl Default for LumaWeights {
    fn default() -> Self {
        Self::REC709
    }
}

fn same_dims(a: &Frame, b: &Frame) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::invalid(format!(
            "frame dimensions differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

pub fn luma(frame: &Frame, weights: LumaWeights) -> Vec<f64> {
    let w = weights.0;
    frame
        .pixels()
        .iter()
        .map(|p| w[0] * p[0] as f64 + w[1] * p[1] as f64 + w[2] * p[2] as f64)
        .collect()
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    same_dims(a, b)?;
    let sum: f64 = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(p, q)| {
            (0..3)
                .map(|c| {
                    let d = p[c] as f64 - q[c] as f64;
                    d * d
                })
                .sum::<f64>()
        })
        .sum();
    Ok(sum / (a.pixels().len() * 3) as f64)
}

/// `10·log10(1 / MSE)` over all channels, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let raw: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - r;
            (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable "valid" filtering: output is `(w - k + 1) × (h - k + 1)`.
fn filter_valid(src: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut horiz = vec![0f64; ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            horiz[y * ow + x] = k.iter().zip(&row[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0f64; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|j| k[j] * horiz[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM on luma over every valid 11×11 Gaussian window.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    ssim_with(a, b, LumaWeights::REC709)
}

pub fn ssim_with(a: &Frame, b: &Frame, weights: LumaWeights) -> Result<f64> {
    same_dims(a, b)?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "SSIM needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let x = luma(a, weights);
    let y = luma(b, weights);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let k = gaussian_window();
    let mu_x = filter_valid(&x, w, h, &k);
    let mu_y = filter_valid(&y, w, h, &k);
    let s_xx = filter_valid(&xx, w, h, &k);
    let s_yy = filter_valid(&yy, w, h, &k);
    let s_xy = filter_valid(&xy, w, h, &k);
    let c1 = (SSIM_K1 * 1.0) * (SSIM_K1 * 1.0);
    let c2 = (SSIM_K2 * 1.0) * (SSIM_K2 * 1.0);
    let mut total = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = s_xx[i] - mx * mx;
        let vy = s_yy[i] - my * my;
        let cov = s_xy[i] - mx * my;
        total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(total / mu_x.len() as f64)
}

/// No-reference blur estimate in `[0, 1]`; 0 for a constant frame.
pub fn blur_metric(frame: &Frame) -> Result<f64> {
    blur_metric_with(frame, LumaWeights::REC709)
}

pub fn blur_metric_with(frame: &Frame, weights: LumaWeights) -> Result<f64> {
    let (w, h) = frame.dims();
    if w < BLUR_TAPS || h < BLUR_TAPS {
        return Err(Error::invalid(format!(
            "blur metric needs frames of at least {BLUR_TAPS}x{BLUR_TAPS}, got {w}x{h}"
        )));
    }
    let f = luma(frame, weights);
    let half = (BLUR_TAPS / 2) as isize;
    let at = |x: isize, y: isize| -> f64 {
        let xc = x.clamp(0, w as isize - 1) as usize;
        let yc = y.clamp(0, h as isize - 1) as usize;
        f[yc * w + xc]
    };
    // 9-tap box filters with replicated borders
    let mut b_ver = vec![0f64; w * h];
    let mut b_hor = vec![0f64; w * h];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut sv = 0.0;
            let mut sh = 0.0;
            for t in -half..=half {
                sv += at(x, y + t);
                sh += at(x + t, y);
            }
            b_ver[y as usize * w + x as usize] = sv / BLUR_TAPS as f64;
            b_hor[y as usize * w + x as usize] = sh / BLUR_TAPS as f64;
        }
    }
    let (mut s_f_ver, mut s_v_ver, mut s_f_hor, mut s_v_hor) = (0.0, 0.0, 0.0, 0.0);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if y > 0 {
                let d_f = (f[i] - f[i - w]).abs();
                let d_b = (b_ver[i] - b_ver[i - w]).abs();
                s_f_ver += d_f;
                s_v_ver += (d_f - d_b).max(0.0);
            }
            if x > 0 {
                let d_f = (f[i] - f[i - 1]).abs();
                let d_b = (b_hor[i] - b_hor[i - 1]).abs();
                s_f_hor += d_f;
                s_v_hor += (d_f - d_b).max(0.0);
            }
        }
    }
    let degradation = |s_f: f64, s_v: f64| if s_f > 0.0 { (s_f - s_v) / s_f } else { 0.0 };
    let b = degradation(s_f_ver, s_v_ver).max(degradation(s_f_hor, s_v_hor));
    Ok(b.clamp(0.0, 1.0))
}

/// Neumaier-compensated sum.
fn compensated_sum(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return MeanStd { mean: 0.0, std: 0.0 };
        }
        let n = values.len() as f64;
        let mean = compensated_sum(values) / n;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        MeanStd {
            mean,
            std: (compensated_sum(&dev) / n).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipSummary {
    pub frames: usize,
    pub psnr: MeanStd,
    pub ssim: MeanStd,
    pub blur: MeanStd,
    pub elapsed_seconds: f64,
    /// Direction convention of the blur column.
    pub blur_convention: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipReport {
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    pub blur: Vec<f64>,
    pub elapsed_seconds: f64,
}

impl ClipReport {
    pub fn summary(&self) -> ClipSummary {
        ClipSummary {
            frames: self.psnr.len(),
            psnr: MeanStd::of(&self.psnr),
            ssim: MeanStd::of(&self.ssim),
            blur: MeanStd::of(&self.blur),
            elapsed_seconds: self.elapsed_seconds,
            blur_convention: "higher is blurrier".to_string(),
        }
    }

    /// Per-frame CSV. `lpips` and `brisque` columns are left empty for
    /// values produced by external tools.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr_db,ssim,blur,lpips,brisque\n");
        for i in 0..self.psnr.len() {
            out.push_str(&format!(
                "{i},{:.6},{:.6},{:.6},,\n",
                self.psnr[i], self.ssim[i], self.blur[i]
            ));
        }
        out
    }
}

/// Scores `output` against ground truth frame by frame; blur is measured on
/// the output frames.
pub fn evaluate_clip(output: &VideoClip, gt: &VideoClip, elapsed_seconds: f64) -> Result<ClipReport> {
    if output.len() != gt.len() {
        return Err(Error::invalid(format!(
            "clip lengths differ: {} vs {}",
            output.len(),
            gt.len()
        )));
    }
    let rows: Vec<(f64, f64, f64)> = output
        .frames()
        .par_iter()
        .zip(gt.frames())
        .map(|(o, g)| Ok((psnr(o, g)?, ssim(o, g)?, blur_metric(o)?)))
        .collect::<Result<_>>()?;
    Ok(ClipReport {
        psnr: rows.iter().map(|r| r.0).collect(),
        ssim: rows.iter().map(|r| r.1).collect(),
        blur: rows.iter().map(|r| r.2).collect(),
        elapsed_seconds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, w: usize, h: usize) -> Frame {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Frame::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()])
    }

    fn checker(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, |x, y| [((x / 2 + y / 2) % 2) as f32; 3])
    }

    #[test]
    fn psnr_examples() {
        let a = noise(1, 20, 20);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        let z = Frame::filled(8, 8, [0.0; 3]);
        let h = Frame::filled(8, 8, [0.5; 3]);
        assert!((psnr(&z, &h).unwrap() - 6.0206).abs() < 1e-4);
        assert!(psnr(&z, &Frame::filled(4, 8, [0.0; 3])).is_err());
    }

    #[test]
    fn psnr_matches_double_loop() {
        let a = noise(2, 31, 17);
        let b = noise(3, 31, 17);
        let mut s = 0.0;
        for y in 0..17 {
            for x in 0..31 {
                for c in 0..3 {
                    let d = a.pixel(x, y)[c] as f64 - b.pixel(x, y)[c] as f64;
                    s += d * d;
                }
            }
        }
        let want = 10.0 * (1.0 / (s / (31.0 * 17.0 * 3.0))).log10();
        assert!((psnr(&a, &b).unwrap() - want).abs() < 1e-9);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
    }

    #[test]
    fn ssim_basics() {
        let a = noise(4, 24, 24);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Frame::from_fn(24, 24, |x, y| a.pixel(x, y).map(|v| 1.0 - v));
        assert!(ssim(&a, &inv).unwrap() < 1.0);
        assert!(ssim(&Frame::filled(10, 30, [0.0; 3]), &Frame::filled(10, 30, [0.0; 3])).is_err());
        let b = noise(5, 24, 24);
        assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn blur_basics() {
        assert_eq!(blur_metric(&Frame::filled(16, 16, [0.3; 3])).unwrap(), 0.0);
        let sharp = checker(32, 32);
        // 9-tap box blur, both directions, replicated borders
        let blurred = {
            let l = luma(&sharp, LumaWeights::REC709);
            let get = |x: isize, y: isize| l[(y.clamp(0, 31) * 32 + x.clamp(0, 31)) as usize];
            Frame::from_fn(32, 32, |x, y| {
                let mut s = 0.0;
                for dy in -4..=4 {
                    for dx in -4..=4 {
                        s += get(x as isize + dx, y as isize + dy);
                    }
                }
                [(s / 81.0) as f32; 3]
            })
        };
        let bs = blur_metric(&sharp).unwrap();
        let bb = blur_metric(&blurred).unwrap();
        assert!(bb > bs, "{bb} <= {bs}");
        assert!((0.0..=1.0).contains(&bs) && (0.0..=1.0).contains(&bb));
        assert!(blur_metric(&Frame::filled(8, 30, [0.1; 3])).is_err());
    }

    #[test]
    fn clip_aggregates() {
        let frames: Vec<Frame> = (0..4).map(|i| noise(10 + i, 16, 16)).collect();
        let clip = VideoClip::new(frames, 24.0).unwrap();
        let r = evaluate_clip(&clip, &clip, 0.5).unwrap();
        let s = r.summary();
        assert_eq!(s.psnr.mean, PSNR_CAP_DB);
        assert!((s.ssim.mean - 1.0).abs() < 1e-12);
        assert_eq!(s.frames, 4);
        assert_eq!(r.to_csv().lines().count(), 5);
        let short = VideoClip::new(clip.frames()[..2].to_vec(), 24.0).unwrap();
        assert!(evaluate_clip(&short, &clip, 0.0).is_err());
    }

    #[test]
    fn compensated_mean() {
        let v = vec![1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(&v), 2.0);
        let ms = MeanStd::of(&[2.0, 4.0]);
        assert_eq!(ms.mean, 3.0);
        assert_eq!(ms.std, 1.0);
    }
}
