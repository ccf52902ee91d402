//! Explicit 3D colour lattices and their algebra.
//!
//! A [`Lut3D`] stores `size³` RGB entries in red-fastest order. Internally
//! each entry is kept as an offset from the identity lattice of the LUT's
//! domain, so converting to and from a [`DeltaLut`] is a plain copy and
//! round-trips bit-exactly. Entries themselves are not clamped; clamping to
//! `[0, 1]` happens when a LUT is applied to pixels.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{Frame, Rgb, VideoClip};

pub const MIN_SIZE: usize = 2;
pub const MAX_SIZE: usize = 256;
/// Lattice resolution used by the diffusion model.
pub const MODEL_SIZE: usize = 16;
/// Side of the square raster a 16³ delta reshapes into.
pub const DELTA_IMAGE_SIDE: usize = 64;
pub const DELTA_IMAGE_LEN: usize = DELTA_IMAGE_SIDE * DELTA_IMAGE_SIDE * 3;

/// Bounds applied to mixed LUT entries.
pub const MIX_CLAMP: (f64, f64) = (-0.25, 1.25);
const WEIGHT_SUM_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Lut3D {
    size: usize,
    domain_min: [f64; 3],
    domain_max: [f64; 3],
    offsets: Vec<[f64; 3]>,
}

fn check_size(size: usize) -> Result<()> {
    if size < MIN_SIZE {
        return Err(Error::invalid(format!("lattice size must be >= 2, got {size}")));
    }
    if size > MAX_SIZE {
        return Err(Error::invalid(format!("lattice size must be <= 256, got {size}")));
    }
    Ok(())
}

fn check_domain(min: [f64; 3], max: [f64; 3]) -> Result<()> {
    for c in 0..3 {
        if !(min[c].is_finite() && max[c].is_finite() && min[c] < max[c]) {
            return Err(Error::invalid(format!(
                "domain channel {c}: min {} must be below max {}",
                min[c], max[c]
            )));
        }
    }
    Ok(())
}

#[inline]
fn lattice_coord(i: usize, size: usize, min: f64, max: f64) -> f64 {
    min + (i as f64 / (size - 1) as f64) * (max - min)
}

/// Flat red-fastest index of lattice point `(r, g, b)`.
#[inline]
pub fn lattice_index(size: usize, r: usize, g: usize, b: usize) -> usize {
    r + size * (g + size * b)
}

impl Lut3D {
    /// The lattice whose entries equal their own coordinates on `[0, 1]³`.
    pub fn identity(size: usize) -> Result<Self> {
        Self::identity_with_domain(size, [0.0; 3], [1.0; 3])
    }

    pub fn identity_with_domain(size: usize, domain_min: [f64; 3], domain_max: [f64; 3]) -> Result<Self> {
        check_size(size)?;
        check_domain(domain_min, domain_max)?;
        Ok(Lut3D {
            size,
            domain_min,
            domain_max,
            offsets: vec![[0.0; 3]; size * size * size],
        })
    }

    /// Builds a LUT on the unit domain from red-fastest entries.
    pub fn from_entries(size: usize, entries: Vec<[f64; 3]>) -> Result<Self> {
        Self::from_entries_with_domain(size, [0.0; 3], [1.0; 3], entries)
    }

    pub fn from_entries_with_domain(
        size: usize,
        domain_min: [f64; 3],
        domain_max: [f64; 3],
        mut entries: Vec<[f64; 3]>,
    ) -> Result<Self> {
        check_size(size)?;
        check_domain(domain_min, domain_max)?;
        if entries.len() != size * size * size {
            return Err(Error::invalid(format!(
                "a {size}^3 lattice needs {} entries, got {}",
                size * size * size,
                entries.len()
            )));
        }
        if entries.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("LUT entries must be finite"));
        }
        let mut lut = Lut3D {
            size,
            domain_min,
            domain_max,
            offsets: Vec::new(),
        };
        for (idx, e) in entries.iter_mut().enumerate() {
            let base = lut.base(idx);
            for c in 0..3 {
                e[c] -= base[c];
            }
        }
        lut.offsets = entries;
        Ok(lut)
    }

    /// Builds a unit-domain LUT by evaluating `f` at every lattice coordinate.
    pub fn from_fn(size: usize, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Result<Self> {
        check_size(size)?;
        let n = size;
        let mut entries = Vec::with_capacity(n * n * n);
        for b in 0..n {
            for g in 0..n {
                for r in 0..n {
                    let coord = [r, g, b].map(|i| lattice_coord(i, n, 0.0, 1.0));
                    entries.push(f(coord));
                }
            }
        }
        Self::from_entries(size, entries)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn domain_min(&self) -> [f64; 3] {
        self.domain_min
    }

    pub fn domain_max(&self) -> [f64; 3] {
        self.domain_max
    }

    pub fn has_unit_domain(&self) -> bool {
        self.domain_min == [0.0; 3] && self.domain_max == [1.0; 3]
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Identity coordinate of the flat lattice index.
    pub fn base(&self, idx: usize) -> [f64; 3] {
        let n = self.size;
        let ijk = [idx % n, (idx / n) % n, idx / (n * n)];
        [0, 1, 2].map(|c| lattice_coord(ijk[c], n, self.domain_min[c], self.domain_max[c]))
    }

    pub fn entry(&self, r: usize, g: usize, b: usize) -> [f64; 3] {
        self.entry_at(lattice_index(self.size, r, g, b))
    }

    pub fn entry_at(&self, idx: usize) -> [f64; 3] {
        let base = self.base(idx);
        let o = self.offsets[idx];
        [base[0] + o[0], base[1] + o[1], base[2] + o[2]]
    }

    pub fn entries(&self) -> Vec<[f64; 3]> {
        (0..self.len()).map(|i| self.entry_at(i)).collect()
    }

    /// Offsets from the identity lattice, red-fastest.
    pub fn offsets(&self) -> &[[f64; 3]] {
        &self.offsets
    }

    /// Mean absolute difference between entries and the identity lattice.
    pub fn mean_abs_offset(&self) -> f64 {
        let sum: f64 = self.offsets.iter().flatten().map(|v| v.abs()).sum();
        sum / (self.offsets.len() * 3) as f64
    }

    pub fn max_abs_entry_diff(&self, other: &Lut3D) -> Result<f64> {
        same_shape(self, other)?;
        let mut worst: f64 = 0.0;
        for i in 0..self.len() {
            let (a, b) = (self.entry_at(i), other.entry_at(i));
            for c in 0..3 {
                worst = worst.max((a[c] - b[c]).abs());
            }
        }
        Ok(worst)
    }

    pub fn sampler(&self) -> LutSampler {
        let n = self.size;
        LutSampler {
            size: n,
            domain_min: self.domain_min,
            domain_max: self.domain_max,
            scale: [0, 1, 2].map(|c| (n - 1) as f64 / (self.domain_max[c] - self.domain_min[c])),
            table: self.entries(),
        }
    }

    /// `true` when every channel is nondecreasing along every lattice axis.
    pub fn is_monotone(&self) -> bool {
        let n = self.size;
        for b in 0..n {
            for g in 0..n {
                for r in 0..n {
                    let e = self.entry(r, g, b);
                    let nexts = [
                        (r + 1 < n).then(|| self.entry(r + 1, g, b)),
                        (g + 1 < n).then(|| self.entry(r, g + 1, b)),
                        (b + 1 < n).then(|| self.entry(r, g, b + 1)),
                    ];
                    for next in nexts.into_iter().flatten() {
                        if (0..3).any(|c| next[c] < e[c]) {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }
}

fn same_shape(a: &Lut3D, b: &Lut3D) -> Result<()> {
    if a.size != b.size {
        return Err(Error::invalid(format!(
            "lattice size mismatch: {} vs {}",
            a.size, b.size
        )));
    }
    if a.domain_min != b.domain_min || a.domain_max != b.domain_max {
        return Err(Error::invalid("lattice domain mismatch"));
    }
    Ok(())
}

pub fn identity_lut(size: usize) -> Result<Lut3D> {
    Lut3D::identity(size)
}

impl Lut3D {
    /// Samples this LUT onto a lattice of another size over the same domain.
    pub fn resampled(&self, size: usize) -> Result<Lut3D> {
        if size == self.size {
            return Ok(self.clone());
        }
        let sampler = self.sampler();
        let mut out = Lut3D::identity_with_domain(size, self.domain_min, self.domain_max)?;
        for idx in 0..out.len() {
            let base = out.base(idx);
            let v = sampler.sample(base);
            out.offsets[idx] = [0, 1, 2].map(|c| v[c] - base[c]);
        }
        Ok(out)
    }
}

/// Trilinear lookup over a materialised entry table.
#[derive(Debug, Clone)]
pub struct LutSampler {
    size: usize,
    domain_min: [f64; 3],
    domain_max: [f64; 3],
    scale: [f64; 3],
    table: Vec<[f64; 3]>,
}

impl LutSampler {
    /// Interpolated entry for `rgb`, clamped to the domain on input and
    /// unclamped on output.
    #[inline]
    pub fn sample(&self, rgb: [f64; 3]) -> [f64; 3] {
        let n = self.size;
        let mut i0 = [0usize; 3];
        let mut f = [0f64; 3];
        for c in 0..3 {
            let v = rgb[c].clamp(self.domain_min[c], self.domain_max[c]);
            let t = (v - self.domain_min[c]) * self.scale[c];
            let i = (t.floor() as usize).min(n - 2);
            i0[c] = i;
            f[c] = t - i as f64;
        }
        let base = i0[0] + n * (i0[1] + n * i0[2]);
        let (dr, dg, db) = (1, n, n * n);
        let (fr, fg, fb) = (f[0], f[1], f[2]);
        let (gr, gg, gb) = (1.0 - fr, 1.0 - fg, 1.0 - fb);
        let corners = [
            (base, gr * gg * gb),
            (base + dr, fr * gg * gb),
            (base + dg, gr * fg * gb),
            (base + dr + dg, fr * fg * gb),
            (base + db, gr * gg * fb),
            (base + dr + db, fr * gg * fb),
            (base + dg + db, gr * fg * fb),
            (base + dr + dg + db, fr * fg * fb),
        ];
        let mut out = [0f64; 3];
        for (idx, w) in corners {
            let e = &self.table[idx];
            out[0] += w * e[0];
            out[1] += w * e[1];
            out[2] += w * e[2];
        }
        out
    }

    #[inline]
    pub fn apply_pixel(&self, p: Rgb) -> Rgb {
        let out = self.sample([p[0] as f64, p[1] as f64, p[2] as f64]);
        out.map(|v| v.clamp(0.0, 1.0) as f32)
    }

    pub fn apply(&self, frame: &Frame) -> Frame {
        let pixels = frame.pixels().iter().map(|p| self.apply_pixel(*p)).collect();
        Frame::from_pixels_unchecked(frame.width(), frame.height(), pixels)
    }
}

/// Applies `lut` to every pixel of `frame` by trilinear interpolation.
pub fn apply_lut(lut: &Lut3D, frame: &Frame) -> Frame {
    lut.sampler().apply(frame)
}

/// Grades every frame of `clip` with the same LUT, in parallel on the
/// global rayon pool.
pub fn apply_lut_clip(lut: &Lut3D, clip: &VideoClip) -> Result<VideoClip> {
    if clip.is_empty() {
        return Err(Error::invalid("cannot grade an empty clip"));
    }
    let sampler = lut.sampler();
    let frames: Vec<Frame> = clip.frames().par_iter().map(|f| sampler.apply(f)).collect();
    VideoClip::new(frames, clip.fps())
}

/// Same as [`apply_lut_clip`] on a dedicated pool of `workers` threads.
pub fn apply_lut_clip_with_workers(lut: &Lut3D, clip: &VideoClip, workers: usize) -> Result<VideoClip> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    pool.install(|| apply_lut_clip(lut, clip))
}

/// Offsets of a LUT from its identity lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaLut {
    size: usize,
    domain_min: [f64; 3],
    domain_max: [f64; 3],
    offsets: Vec<[f64; 3]>,
}

impl DeltaLut {
    pub fn zeros(size: usize) -> Result<Self> {
        Ok(delta_from(&Lut3D::identity(size)?))
    }

    pub fn from_offsets(size: usize, offsets: Vec<[f64; 3]>) -> Result<Self> {
        check_size(size)?;
        if offsets.len() != size * size * size {
            return Err(Error::invalid(format!(
                "a {size}^3 delta needs {} offsets, got {}",
                size * size * size,
                offsets.len()
            )));
        }
        if offsets.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("delta offsets must be finite"));
        }
        Ok(DeltaLut {
            size,
            domain_min: [0.0; 3],
            domain_max: [1.0; 3],
            offsets,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn offsets(&self) -> &[[f64; 3]] {
        &self.offsets
    }

    pub fn is_zero(&self) -> bool {
        self.offsets.iter().flatten().all(|v| *v == 0.0)
    }
}

pub fn delta_from(lut: &Lut3D) -> DeltaLut {
    DeltaLut {
        size: lut.size,
        domain_min: lut.domain_min,
        domain_max: lut.domain_max,
        offsets: lut.offsets.clone(),
    }
}

pub fn lut_from_delta(delta: &DeltaLut) -> Lut3D {
    Lut3D {
        size: delta.size,
        domain_min: delta.domain_min,
        domain_max: delta.domain_max,
        offsets: delta.offsets.clone(),
    }
}

/// A 16³ lattice laid out as a 64×64×3 raster (HWC).
///
/// Pixel `(row, col)` holds lattice flat index `row * 64 + col`.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaImage {
    data: Vec<f64>,
}

impl DeltaImage {
    pub fn zeros() -> Self {
        DeltaImage {
            data: vec![0.0; DELTA_IMAGE_LEN],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        if data.len() != DELTA_IMAGE_LEN {
            return Err(Error::invalid(format!(
                "delta image needs {DELTA_IMAGE_LEN} values, got {}",
                data.len()
            )));
        }
        Ok(DeltaImage { data })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f64 {
        self.data[(row * DELTA_IMAGE_SIDE + col) * 3 + channel]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

fn flatten_to_image(size: usize, values: &[[f64; 3]]) -> Result<DeltaImage> {
    if size != MODEL_SIZE {
        return Err(Error::UnsupportedSize(size));
    }
    Ok(DeltaImage {
        data: values.iter().flatten().copied().collect(),
    })
}

/// Reshapes a 16³ delta into its 64×64×3 raster.
pub fn reshape_delta(delta: &DeltaLut) -> Result<DeltaImage> {
    if delta.domain_min != [0.0; 3] || delta.domain_max != [1.0; 3] {
        return Err(Error::invalid("only unit-domain deltas reshape to images"));
    }
    flatten_to_image(delta.size, &delta.offsets)
}

pub fn unreshape(img: &DeltaImage) -> DeltaLut {
    let offsets = img.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
    DeltaLut {
        size: MODEL_SIZE,
        domain_min: [0.0; 3],
        domain_max: [1.0; 3],
        offsets,
    }
}

/// Raster of the entries (not offsets) of a 16³ LUT; for the identity
/// lattice this is the constant conditioning image of the denoiser.
pub fn entries_image(lut: &Lut3D) -> Result<DeltaImage> {
    flatten_to_image(lut.size, &lut.entries())
}

/// Weighted entrywise combination; weights must sum to one and may be
/// negative (extrapolation). Results are clamped to [`MIX_CLAMP`].
pub fn mix_luts(luts: &[Lut3D], weights: &[f64]) -> Result<Lut3D> {
    let first = luts
        .first()
        .ok_or_else(|| Error::invalid("mix_luts needs at least one LUT"))?;
    if luts.len() != weights.len() {
        return Err(Error::invalid(format!(
            "{} LUTs but {} weights",
            luts.len(),
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::invalid("mix weights must be finite"));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::invalid(format!("mix weights sum to {total}, expected 1")));
    }
    for lut in &luts[1..] {
        same_shape(first, lut)?;
    }
    // Entry = base * sum(w) + sum(w * offset); the base term vanishes when
    // the weights sum to exactly one.
    let base_weight = total - 1.0;
    let mut out = first.clone();
    for idx in 0..out.len() {
        let base = first.base(idx);
        let mut o = [0f64; 3];
        for (lut, w) in luts.iter().zip(weights) {
            let src = lut.offsets[idx];
            for c in 0..3 {
                o[c] += w * src[c];
            }
        }
        for c in 0..3 {
            o[c] += base_weight * base[c];
            let e = base[c] + o[c];
            if e < MIX_CLAMP.0 {
                o[c] = MIX_CLAMP.0 - base[c];
            } else if e > MIX_CLAMP.1 {
                o[c] = MIX_CLAMP.1 - base[c];
            }
        }
        out.offsets[idx] = o;
    }
    Ok(out)
}

/// LUT equivalent to applying `first` and then `second`.
///
/// Each entry of `first` is looked up in `second` (clamped to its domain);
/// output values are not clamped so that out-of-range grades survive until
/// application time.
pub fn compose_luts(first: &Lut3D, second: &Lut3D) -> Result<Lut3D> {
    same_shape(first, second)?;
    let sampler = second.sampler();
    let mut out = first.clone();
    for idx in 0..out.len() {
        let looked_up = sampler.sample(first.entry_at(idx));
        let base = out.base(idx);
        out.offsets[idx] = [0, 1, 2].map(|c| looked_up[c] - base[c]);
    }
    Ok(out)
}
