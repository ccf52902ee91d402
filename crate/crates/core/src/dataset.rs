//! Training corpus construction: LUT base catalogs, random LUT synthesis by
//! mixing, and (input, reference, target delta) triples.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::cube::parse_cube;
use crate::error::{Error, Result};
use crate::frame::{load_clip, Frame, VideoClip};
use crate::lut::{apply_lut, delta_from, mix_luts, DeltaLut, Lut3D};

pub const DEFAULT_SPLIT_RATIO: f64 = 0.9;
pub const EXTRAPOLATION_PROBABILITY: f64 = 0.3;
pub const EXTRAPOLATION_RANGE: (f64, f64) = (1.0, 1.5);
pub const MIX_MIN_BASES: usize = 2;
pub const MIX_MAX_BASES: usize = 4;

#[derive(Debug, Clone)]
pub struct NamedLut {
    pub name: String,
    pub lut: Lut3D,
}

/// Base LUTs with a train/test partition of their names.
#[derive(Debug, Clone)]
pub struct LutBaseCatalog {
    bases: Vec<NamedLut>,
    train: Vec<String>,
    test: Vec<String>,
    rejected: Vec<(PathBuf, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl LutBaseCatalog {
    /// Shuffles the names (sorted first, so input order does not matter)
    /// with a seeded generator and puts the first `round(ratio * count)`
    /// on the train side.
    pub fn from_bases(bases: Vec<NamedLut>, split_ratio: f64, seed: u64) -> Result<Self> {
        if bases.len() < 2 {
            return Err(Error::InvalidCatalog(format!(
                "need at least 2 usable bases, found {}",
                bases.len()
            )));
        }
        if !(0.0..=1.0).contains(&split_ratio) {
            return Err(Error::invalid(format!("split ratio {split_ratio} outside [0, 1]")));
        }
        let mut seen = HashSet::new();
        for b in &bases {
            if !seen.insert(b.name.as_str()) {
                return Err(Error::InvalidCatalog(format!("duplicate base name {:?}", b.name)));
            }
        }
        let mut names: Vec<String> = bases.iter().map(|b| b.name.clone()).collect();
        names.sort();
        names.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let n_train = (split_ratio * names.len() as f64).round() as usize;
        let test = names.split_off(n_train.min(names.len()));
        Ok(LutBaseCatalog {
            bases,
            train: names,
            test,
            rejected: Vec::new(),
        })
    }

    /// Uses an explicit split, e.g. one read back from a manifest.
    pub fn with_split(bases: Vec<NamedLut>, manifest: &SplitManifest) -> Result<Self> {
        let names: HashSet<&str> = bases.iter().map(|b| b.name.as_str()).collect();
        if names.len() != bases.len() {
            return Err(Error::InvalidCatalog("duplicate base names".into()));
        }
        let listed: Vec<&str> = manifest
            .train
            .iter()
            .chain(&manifest.test)
            .map(String::as_str)
            .collect();
        let listed_set: HashSet<&str> = listed.iter().copied().collect();
        if listed_set.len() != listed.len() || listed_set != names {
            return Err(Error::InvalidCatalog(
                "split manifest must list every base exactly once".into(),
            ));
        }
        Ok(LutBaseCatalog {
            bases,
            train: manifest.train.clone(),
            test: manifest.test.clone(),
            rejected: Vec::new(),
        })
    }

    pub fn bases(&self) -> &[NamedLut] {
        &self.bases
    }

    pub fn get(&self, name: &str) -> Option<&Lut3D> {
        self.bases.iter().find(|b| b.name == name).map(|b| &b.lut)
    }

    pub fn train_names(&self) -> &[String] {
        &self.train
    }

    pub fn test_names(&self) -> &[String] {
        &self.test
    }

    pub fn train_luts(&self) -> Vec<&Lut3D> {
        self.train.iter().filter_map(|n| self.get(n)).collect()
    }

    pub fn test_luts(&self) -> Vec<&Lut3D> {
        self.test.iter().filter_map(|n| self.get(n)).collect()
    }

    /// Files that were skipped while loading, with the reason.
    pub fn rejected(&self) -> &[(PathBuf, String)] {
        &self.rejected
    }

    pub fn manifest(&self) -> SplitManifest {
        SplitManifest {
            train: self.train.clone(),
            test: self.test.clone(),
        }
    }
}

/// Loads every `*.cube` file in `dir`; the base name is the file stem.
/// Unparseable files are skipped and listed in [`LutBaseCatalog::rejected`].
pub fn load_catalog(dir: &Path, split_ratio: f64, seed: u64) -> Result<LutBaseCatalog> {
    let (bases, rejected) = read_cube_dir(dir)?;
    let mut catalog = LutBaseCatalog::from_bases(bases, split_ratio, seed).map_err(|e| match e {
        Error::InvalidCatalog(msg) if !rejected.is_empty() => Error::InvalidCatalog(format!(
            "{msg}; rejected: {}",
            rejected
                .iter()
                .map(|(p, m)| format!("{} ({m})", p.display()))
                .collect::<Vec<_>>()
                .join(", ")
        )),
        other => other,
    })?;
    catalog.rejected = rejected;
    Ok(catalog)
}

#[allow(clippy::type_complexity)]
pub fn read_cube_dir(dir: &Path) -> Result<(Vec<NamedLut>, Vec<(PathBuf, String)>)> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("cube"))
        })
        .collect();
    paths.sort();
    let mut bases = Vec::new();
    let mut rejected = Vec::new();
    for path in paths {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string();
        let parsed = fs::read(&path)
            .map_err(|e| Error::io(&path, e))
            .and_then(|bytes| parse_cube(&bytes));
        match parsed {
            Ok(lut) => bases.push(NamedLut { name, lut }),
            Err(e) => rejected.push((path, e.to_string())),
        }
    }
    Ok((bases, rejected))
}

pub fn write_split_manifest(manifest: &SplitManifest, path: &Path) -> Result<()> {
    let text = toml::to_string(manifest).map_err(|e| Error::io(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_split_manifest(path: &Path) -> Result<SplitManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::io(path, e))
}

/// Which bases to mix and with what weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MixPlan {
    pub indices: Vec<usize>,
    pub weights: Vec<f64>,
}

impl MixPlan {
    pub fn weight_sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Picks 2 to 4 distinct bases out of `n_bases`, flat-simplex weights, and
/// with probability 0.3 pushes one weight to `λ ∈ [1, 1.5]` while scaling
/// the others to keep the total at one.
pub fn draw_mix_plan(n_bases: usize, rng: &mut impl Rng) -> Result<MixPlan> {
    if n_bases < MIX_MIN_BASES {
        return Err(Error::InvalidCatalog(format!(
            "mixing needs at least {MIX_MIN_BASES} train bases, found {n_bases}"
        )));
    }
    let k = rng.random_range(MIX_MIN_BASES..=MIX_MAX_BASES.min(n_bases));
    let mut all: Vec<usize> = (0..n_bases).collect();
    let (picked, _) = all.partial_shuffle(rng, k);
    let indices = picked.to_vec();

    // Normalised unit exponentials are uniform on the simplex.
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut weights: Vec<f64> = if total > 0.0 {
        draws.iter().map(|d| d / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };

    if rng.random_bool(EXTRAPOLATION_PROBABILITY) {
        let j = rng.random_range(0..k);
        let lambda = rng.random_range(EXTRAPOLATION_RANGE.0..=EXTRAPOLATION_RANGE.1);
        let rest: f64 = weights
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != j)
            .map(|(_, w)| w)
            .sum();
        if rest > 0.0 {
            for (i, w) in weights.iter_mut().enumerate() {
                *w = if i == j { lambda } else { *w / rest * (1.0 - lambda) };
            }
        }
    }
    Ok(MixPlan { indices, weights })
}

pub fn mix_from_plan(bases: &[&Lut3D], plan: &MixPlan) -> Result<Lut3D> {
    let luts: Vec<Lut3D> = plan
        .indices
        .iter()
        .map(|&i| {
            bases
                .get(i)
                .map(|l| (*l).clone())
                .ok_or_else(|| Error::invalid(format!("mix index {i} out of range")))
        })
        .collect::<Result<_>>()?;
    mix_luts(&luts, &plan.weights)
}

/// A fresh LUT mixed from the train side of the catalog.
pub fn synth_random_lut(catalog: &LutBaseCatalog, rng: &mut impl Rng) -> Result<Lut3D> {
    synth_from_bases(&catalog.train_luts(), rng)
}

pub fn synth_from_bases(bases: &[&Lut3D], rng: &mut impl Rng) -> Result<Lut3D> {
    let plan = draw_mix_plan(bases.len(), rng)?;
    mix_from_plan(bases, &plan)
}

#[derive(Debug, Clone)]
pub struct GradingTriple {
    pub input_frame: Frame,
    pub raw_reference: Frame,
    pub reference_frame: Frame,
    pub target_delta: DeltaLut,
    pub input_index: usize,
    pub reference_index: usize,
}

/// Two distinct frames from `pool`: the first stays ungraded, the second is
/// graded with `lut` and becomes the reference.
pub fn make_triple(pool: &[Frame], lut: &Lut3D, rng: &mut impl Rng) -> Result<GradingTriple> {
    if pool.len() < 2 {
        return Err(Error::invalid(format!(
            "frame pool needs at least 2 frames, has {}",
            pool.len()
        )));
    }
    let input_index = rng.random_range(0..pool.len());
    let mut reference_index = rng.random_range(0..pool.len() - 1);
    if reference_index >= input_index {
        reference_index += 1;
    }
    let raw_reference = pool[reference_index].clone();
    Ok(GradingTriple {
        input_frame: pool[input_index].clone(),
        reference_frame: apply_lut(lut, &raw_reference),
        raw_reference,
        target_delta: delta_from(lut),
        input_index,
        reference_index,
    })
}

/// Per-sample generator derived from a root seed and a counter.
pub fn sample_rng(root_seed: u64, counter: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(counter);
    rng
}

/// Loads a corpus laid out as `<scene>/<frame>.png`, one clip per scene
/// directory, keyed by directory name.
pub fn load_corpus(dir: &Path, fps: f64) -> Result<BTreeMap<String, VideoClip>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            let name = path
                .file_name()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.insert(name, load_clip(&path, fps)?);
        }
    }
    if out.is_empty() {
        return Err(Error::io(dir, "no scene directories found"));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disc { cx: f32, cy: f32, r: f32 },
    Rect { x0: f32, y0: f32, x1: f32, y1: f32 },
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    shape: Shape,
    color: [f32; 3],
    velocity: [f32; 2],
}

/// Seeded synthetic footage: a two-colour gradient backdrop, a handful of
/// drifting discs and rectangles, and mild per-frame noise.
#[derive(Debug, Clone)]
pub struct SceneGenerator {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    pub fps: f64,
}

impl Default for SceneGenerator {
    fn default() -> Self {
        SceneGenerator {
            width: 64,
            height: 64,
            frames: 8,
            fps: 24.0,
        }
    }
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    let level: f32 = rng.random_range(0.15..0.95);
    let chroma: f32 = rng.random_range(0.0..0.6);
    [0; 3].map(|_| (level + chroma * rng.random_range(-0.5f32..0.5)).clamp(0.0, 1.0))
}

impl SceneGenerator {
    pub fn scene(&self, seed: u64) -> VideoClip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (self.width as f32, self.height as f32);
        let c0 = random_color(&mut rng);
        let c1 = random_color(&mut rng);
        let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
        let (dx, dy) = (angle.cos(), angle.sin());
        let n_blobs = rng.random_range(3..=6);
        let blobs: Vec<Blob> = (0..n_blobs)
            .map(|_| {
                let shape = if rng.random_bool(0.5) {
                    Shape::Disc {
                        cx: rng.random_range(0.0..w),
                        cy: rng.random_range(0.0..h),
                        r: rng.random_range(0.08..0.3) * w.min(h),
                    }
                } else {
                    let x0 = rng.random_range(0.0..w * 0.8);
                    let y0 = rng.random_range(0.0..h * 0.8);
                    Shape::Rect {
                        x0,
                        y0,
                        x1: x0 + rng.random_range(0.1..0.5) * w,
                        y1: y0 + rng.random_range(0.1..0.5) * h,
                    }
                };
                Blob {
                    shape,
                    color: random_color(&mut rng),
                    velocity: [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)],
                }
            })
            .collect();
        let noise_amp: f32 = rng.random_range(0.0..0.03);

        let frames = (0..self.frames)
            .map(|t| {
                let mut noise = ChaCha8Rng::seed_from_u64(seed ^ ((t as u64 + 1) << 32));
                let t = t as f32;
                Frame::from_fn(self.width, self.height, |x, y| {
                    let (fx, fy) = (x as f32 + 0.5, y as f32 + 0.5);
                    let s = ((fx / w - 0.5) * dx + (fy / h - 0.5) * dy + 0.5).clamp(0.0, 1.0);
                    let mut p = [0, 1, 2].map(|c| c0[c] * (1.0 - s) + c1[c] * s);
                    for b in &blobs {
                        let (ox, oy) = (b.velocity[0] * t, b.velocity[1] * t);
                        let inside = match b.shape {
                            Shape::Disc { cx, cy, r } => {
                                let (ddx, ddy) = (fx - cx - ox, fy - cy - oy);
                                ddx * ddx + ddy * ddy <= r * r
                            }
                            Shape::Rect { x0, y0, x1, y1 } => {
                                fx >= x0 + ox && fx < x1 + ox && fy >= y0 + oy && fy < y1 + oy
                            }
                        };
                        if inside {
                            p = b.color;
                        }
                    }
                    let n: f32 = noise.random_range(-1.0..1.0) * noise_amp;
                    p.map(|v| v + n)
                })
            })
            .collect();
        VideoClip::new(frames, self.fps).expect("generator settings are valid")
    }

    pub fn scenes(&self, root_seed: u64, count: usize) -> Vec<VideoClip> {
        (0..count as u64)
            .map(|i| self.scene(root_seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i)))
            .collect()
    }
}
