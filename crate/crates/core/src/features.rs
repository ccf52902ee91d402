//! Grading-style descriptors and the condition vector fed to the diffuser.
//!
//! A [`StyleFeature`] has [`FEATURE_DIM`] = 530 values:
//!
//! | range     | content                                                  |
//! |-----------|----------------------------------------------------------|
//! | 0..512    | 8×8×8 joint RGB histogram, red-fastest bins, L1 = 1       |
//! | 512..515  | CIE Lab mean (L, a, b)                                   |
//! | 515..518  | CIE Lab population standard deviation (L, a, b)          |
//! | 518..530  | RGB means of the 2×2 spatial grid: TL, TR, BL, BR        |
//!
//! Frames are resized to 256×256 (bilinear) before extraction. Lab uses the
//! sRGB transfer curve, the IEC 61966-2-1 RGB→XYZ matrix and the D65 white
//! `(0.95047, 1.0, 1.08883)`.

use crate::error::{Error, Result};
use crate::frame::{resize_bilinear, Frame};

pub const HIST_BINS_PER_AXIS: usize = 8;
pub const HIST_LEN: usize = HIST_BINS_PER_AXIS * HIST_BINS_PER_AXIS * HIST_BINS_PER_AXIS;
pub const LAB_MEAN_OFFSET: usize = HIST_LEN;
pub const LAB_STD_OFFSET: usize = HIST_LEN + 3;
pub const GRID_OFFSET: usize = HIST_LEN + 6;
pub const FEATURE_DIM: usize = GRID_OFFSET + 12;
/// Side of the square raster frames are resampled to before extraction.
pub const EXTRACT_SIDE: usize = 256;

const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const D65_WHITE: [f64; 3] = [0.95047, 1.0, 1.08883];

#[derive(Debug, Clone, PartialEq)]
pub struct StyleFeature {
    values: Vec<f32>,
}

impl StyleFeature {
    pub fn from_values(values: Vec<f32>) -> Result<Self> {
        if values.len() != FEATURE_DIM {
            return Err(Error::invalid(format!(
                "style feature needs {FEATURE_DIM} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("style feature values must be finite"));
        }
        Ok(StyleFeature { values })
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn histogram(&self) -> &[f32] {
        &self.values[..HIST_LEN]
    }

    pub fn lab_mean(&self) -> [f32; 3] {
        [0, 1, 2].map(|c| self.values[LAB_MEAN_OFFSET + c])
    }

    pub fn lab_std(&self) -> [f32; 3] {
        [0, 1, 2].map(|c| self.values[LAB_STD_OFFSET + c])
    }

    /// RGB mean of grid cell `cell` (0 = top-left, 1 = top-right, 2 = bottom-left, 3 = bottom-right).
    pub fn grid_mean(&self, cell: usize) -> [f32; 3] {
        [0, 1, 2].map(|c| self.values[GRID_OFFSET + cell * 3 + c])
    }

    /// Euclidean distance between two features.
    pub fn distance(&self, other: &StyleFeature) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| {
                let d = (*a - *b) as f64;
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn to_le_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|v| v.to_le_bytes()).collect()
    }

    pub fn from_le_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != FEATURE_DIM * 4 {
            return Err(Error::invalid(format!(
                "expected {} bytes, got {}",
                FEATURE_DIM * 4,
                bytes.len()
            )));
        }
        let values = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::from_values(values)
    }
}

/// Reference-minus-input feature difference.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    values: Vec<f32>,
}

impl ConditionVector {
    pub fn zeros(dim: usize) -> Self {
        ConditionVector { values: vec![0.0; dim] }
    }

    pub fn from_values(values: Vec<f32>) -> Self {
        ConditionVector { values }
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }
}

pub fn condition_vector(reference: &StyleFeature, input: &StyleFeature) -> Result<ConditionVector> {
    if reference.values.len() != input.values.len() {
        return Err(Error::invalid(format!(
            "feature dimension mismatch: {} vs {}",
            reference.values.len(),
            input.values.len()
        )));
    }
    Ok(ConditionVector {
        values: reference.values.iter().zip(&input.values).map(|(r, i)| r - i).collect(),
    })
}

/// Something that turns a frame into a fixed-length style descriptor.
pub trait StyleExtractor: Send + Sync {
    fn extract(&self, frame: &Frame) -> StyleFeature;
}

/// The built-in statistical extractor.
#[derive(Debug, Clone, Copy, Default)]
pub struct StatisticalExtractor;

impl StyleExtractor for StatisticalExtractor {
    fn extract(&self, frame: &Frame) -> StyleFeature {
        extract_style_feature(frame)
    }
}

#[inline]
fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// sRGB-encoded `[0, 1]` RGB to CIE L*a*b* (D65).
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = SRGB_TO_XYZ.map(|row| row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2]);
    let fx = lab_f(xyz[0] / D65_WHITE[0]);
    let fy = lab_f(xyz[1] / D65_WHITE[1]);
    let fz = lab_f(xyz[2] / D65_WHITE[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

#[inline]
pub fn hist_bin(v: f32) -> usize {
    ((v * HIST_BINS_PER_AXIS as f32) as usize).min(HIST_BINS_PER_AXIS - 1)
}

pub fn extract_style_feature(frame: &Frame) -> StyleFeature {
    let frame = resize_bilinear(frame, EXTRACT_SIDE, EXTRACT_SIDE);
    let (w, h) = frame.dims();
    let n = (w * h) as f64;
    let half_w = w / 2;
    let half_h = h / 2;

    let mut hist = vec![0u32; HIST_LEN];
    let mut lab = Vec::with_capacity(w * h);
    let mut lab_sum = [0f64; 3];
    let mut grid_sum = [[0f64; 3]; 4];
    let mut grid_count = [0usize; 4];

    for (i, p) in frame.pixels().iter().enumerate() {
        let (x, y) = (i % w, i / w);
        hist[hist_bin(p[0]) + HIST_BINS_PER_AXIS * (hist_bin(p[1]) + HIST_BINS_PER_AXIS * hist_bin(p[2]))] += 1;

        let l = srgb_to_lab([p[0] as f64, p[1] as f64, p[2] as f64]);
        for c in 0..3 {
            lab_sum[c] += l[c];
        }
        lab.push(l);

        let cell = usize::from(x >= half_w) + 2 * usize::from(y >= half_h);
        grid_count[cell] += 1;
        for c in 0..3 {
            grid_sum[cell][c] += p[c] as f64;
        }
    }

    let lab_mean = lab_sum.map(|s| s / n);
    let mut lab_var = [0f64; 3];
    for l in &lab {
        for c in 0..3 {
            let d = l[c] - lab_mean[c];
            lab_var[c] += d * d;
        }
    }

    let mut values = Vec::with_capacity(FEATURE_DIM);
    values.extend(hist.iter().map(|c| (*c as f64 / n) as f32));
    values.extend(lab_mean.iter().map(|v| *v as f32));
    values.extend(lab_var.iter().map(|v| (v / n).sqrt() as f32));
    for cell in 0..4 {
        let count = grid_count[cell].max(1) as f64;
        values.extend(grid_sum[cell].iter().map(|s| (s / count) as f32));
    }
    StyleFeature { values }
}
