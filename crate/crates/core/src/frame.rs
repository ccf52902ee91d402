//! Frames, clips, and their on-disk representation.
//!
//! Frames hold linear-in-storage RGB triples as `f32` in `[0, 1]`, row-major.
//! 8-bit conversion is `v / 255` on the way in and `round(v * 255)` on the
//! way out. Clips are stored as a directory of `%06d.png` files plus a
//! `clip.toml` sidecar carrying the frame rate and frame count.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f32; 3];

/// Extension used for frame files.
pub const FRAME_EXT: &str = "png";
/// Name of the clip metadata sidecar.
pub const CLIP_SIDECAR: &str = "clip.toml";

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Frame {
    /// Builds a frame, rejecting empty dimensions and values outside `[0, 1]`.
    pub fn new(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::invalid(format!(
                "frame {width}x{height} needs {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels
            .iter()
            .flatten()
            .find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::invalid(format!("frame value {bad} outside [0, 1]")));
        }
        Ok(Frame { width, height, pixels })
    }

    /// Builds a frame from a per-pixel generator; values are clamped into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        assert!(width > 0 && height > 0, "frame dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let p = f(x, y);
                pixels.push(p.map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) }));
            }
        }
        Frame { width, height, pixels }
    }

    pub fn filled(width: usize, height: usize, rgb: Rgb) -> Self {
        Self::from_fn(width, height, |_, _| rgb)
    }

    pub(crate) fn from_pixels_unchecked(width: usize, height: usize, pixels: Vec<Rgb>) -> Self {
        debug_assert_eq!(pixels.len(), width * height);
        Frame { width, height, pixels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "expected {} bytes for a {width}x{height} RGB frame, got {}",
                width * height * 3,
                bytes.len()
            )));
        }
        let pixels = bytes
            .chunks_exact(3)
            .map(|c| [to_unit(c[0]), to_unit(c[1]), to_unit(c[2])])
            .collect();
        Frame::new(width, height, pixels)
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.map(to_byte)).collect()
    }

    /// Encodes the frame as an 8-bit PNG.
    pub fn encode_png(&self) -> Vec<u8> {
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, self.to_rgb8())
            .expect("buffer size matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)
            .expect("png encoding into memory");
        out.into_inner()
    }

    /// Decodes any raster the `image` crate understands (PNG is always enabled).
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory(bytes)
            .map_err(|e| Error::invalid(format!("cannot decode image: {e}")))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Frame::from_rgb8(w as usize, h as usize, img.as_raw())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Frame::decode(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode_png()).map_err(|e| Error::io(path, e))
    }

    /// Bit-level digest of the pixel data, used to compare large outputs cheaply.
    pub fn content_hash(&self) -> u64 {
        // FNV-1a over the raw f32 bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.pixels.iter().flatten() {
            for b in v.to_bits().to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }
}

#[inline]
pub fn to_unit(b: u8) -> f32 {
    b as f32 / 255.0
}

#[inline]
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    frames: Vec<Frame>,
    fps: f64,
}

impl VideoClip {
    pub fn new(frames: Vec<Frame>, fps: f64) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::invalid("clip must contain at least one frame"));
        }
        if !(fps.is_finite() && fps > 0.0) {
            return Err(Error::invalid(format!("fps must be positive, got {fps}")));
        }
        let dims = frames[0].dims();
        if let Some((i, f)) = frames.iter().enumerate().find(|(_, f)| f.dims() != dims) {
            return Err(Error::invalid(format!(
                "frame {i} is {}x{}, expected {}x{}",
                f.width, f.height, dims.0, dims.1
            )));
        }
        Ok(VideoClip { frames, fps })
    }

    /// A single still treated as a one-frame clip.
    pub fn still(frame: Frame) -> Self {
        VideoClip {
            frames: vec![frame],
            fps: 1.0,
        }
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn dims(&self) -> (usize, usize) {
        self.frames[0].dims()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ClipMeta {
    pub fps: f64,
    pub frame_count: usize,
}

pub fn frame_file_name(index: usize) -> String {
    format!("{index:06}.{FRAME_EXT}")
}

/// Loads numbered frames from `dir`, ordered by their numeric file name.
///
/// When a `clip.toml` sidecar is present its frame rate wins over `fps`.
pub fn load_clip(dir: &Path, fps: f64) -> Result<VideoClip> {
    let mut numbered: Vec<(u64, PathBuf)> = Vec::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let is_frame = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case(FRAME_EXT));
        if !is_frame {
            continue;
        }
        let Some(n) = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse::<u64>().ok())
        else {
            continue;
        };
        numbered.push((n, path));
    }
    if numbered.is_empty() {
        return Err(Error::io(dir, "no numbered frame files found"));
    }
    numbered.sort();

    let fps = match fs::read_to_string(dir.join(CLIP_SIDECAR)) {
        Ok(text) => {
            let meta: ClipMeta = toml::from_str(&text).map_err(|e| Error::io(dir.join(CLIP_SIDECAR), e))?;
            meta.fps
        }
        Err(_) => fps,
    };

    let mut frames = Vec::with_capacity(numbered.len());
    let mut dims = None;
    for (_, path) in &numbered {
        let frame = Frame::load(path)?;
        match dims {
            None => dims = Some(frame.dims()),
            Some(d) if d != frame.dims() => {
                return Err(Error::io(
                    path,
                    format!(
                        "dimensions {}x{} differ from the first frame's {}x{}",
                        frame.width, frame.height, d.0, d.1
                    ),
                ))
            }
            Some(_) => {}
        }
        frames.push(frame);
    }
    VideoClip::new(frames, fps)
}

/// Writes `000000.png`, `000001.png`, ... and the `clip.toml` sidecar.
pub fn save_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in clip.frames().iter().enumerate() {
        frame.save(&dir.join(frame_file_name(i)))?;
    }
    let meta = ClipMeta {
        fps: clip.fps(),
        frame_count: clip.len(),
    };
    let text = toml::to_string(&meta).map_err(|e| Error::io(dir.join(CLIP_SIDECAR), e))?;
    fs::write(dir.join(CLIP_SIDECAR), text).map_err(|e| Error::io(dir.join(CLIP_SIDECAR), e))
}

/// Bilinear resize with half-pixel centers and edge clamping.
pub fn resize_bilinear(frame: &Frame, width: usize, height: usize) -> Frame {
    if frame.dims() == (width, height) {
        return frame.clone();
    }
    let sx = frame.width as f64 / width as f64;
    let sy = frame.height as f64 / height as f64;
    let max_x = (frame.width - 1) as f64;
    let max_y = (frame.height - 1) as f64;
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, max_y);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(frame.height - 1);
        let ty = fy - y0 as f64;
        for x in 0..width {
            let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, max_x);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(frame.width - 1);
            let tx = fx - x0 as f64;
            let p00 = frame.pixel(x0, y0);
            let p10 = frame.pixel(x1, y0);
            let p01 = frame.pixel(x0, y1);
            let p11 = frame.pixel(x1, y1);
            let mut out = [0f32; 3];
            for c in 0..3 {
                let top = p00[c] as f64 * (1.0 - tx) + p10[c] as f64 * tx;
                let bot = p01[c] as f64 * (1.0 - tx) + p11[c] as f64 * tx;
                out[c] = (top * (1.0 - ty) + bot * ty).clamp(0.0, 1.0) as f32;
            }
            pixels.push(out);
        }
    }
    Frame::from_pixels_unchecked(width, height, pixels)
}
