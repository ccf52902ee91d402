//! A small library of procedural grading looks.
//!
//! Each look is a colour function sampled onto a lattice, with a
//! human-written description of what it does to footage. They double as
//! the bundled LUT base catalog and as the retouch catalog.

use crate::error::Result;
use crate::lut::Lut3D;

#[derive(Debug, Clone, Copy)]
pub struct Look {
    pub name: &'static str,
    pub description: &'static str,
    apply: fn([f64; 3]) -> [f64; 3],
}

impl Look {
    pub fn eval(&self, rgb: [f64; 3]) -> [f64; 3] {
        (self.apply)(rgb)
    }

    pub fn lut(&self, size: usize) -> Result<Lut3D> {
        Lut3D::from_fn(size, self.apply)
    }
}

fn luma(c: [f64; 3]) -> f64 {
    0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]
}

fn clamp01(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.clamp(0.0, 1.0))
}

fn saturation(c: [f64; 3], amount: f64) -> [f64; 3] {
    let y = luma(c);
    clamp01(c.map(|v| y + (v - y) * amount))
}

fn s_curve(v: f64, strength: f64) -> f64 {
    let s = v * v * (3.0 - 2.0 * v);
    v + (s - v) * strength
}

fn warm(c: [f64; 3]) -> [f64; 3] {
    clamp01([c[0] * 0.92 + 0.1, c[1] * 0.98 + 0.02, c[2] * 0.8])
}

fn cool(c: [f64; 3]) -> [f64; 3] {
    clamp01([c[0] * 0.82, c[1] * 0.96 + 0.02, c[2] * 0.88 + 0.12])
}

fn teal_orange(c: [f64; 3]) -> [f64; 3] {
    let y = luma(c);
    let hi = y.clamp(0.0, 1.0);
    let lo = 1.0 - hi;
    clamp01([
        c[0] + 0.12 * hi - 0.08 * lo,
        c[1] + 0.03 * hi + 0.04 * lo,
        c[2] - 0.12 * hi + 0.1 * lo,
    ])
}

fn contrast(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| s_curve(v, 1.0))
}

fn fade(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| 0.12 + v * 0.78)
}

fn vivid(c: [f64; 3]) -> [f64; 3] {
    saturation(c, 1.6)
}

fn muted(c: [f64; 3]) -> [f64; 3] {
    saturation(c, 0.35)
}

fn green_tint(c: [f64; 3]) -> [f64; 3] {
    clamp01([c[0] * 0.94, c[1] * 0.95 + 0.08, c[2] * 0.92])
}

fn magenta_tint(c: [f64; 3]) -> [f64; 3] {
    clamp01([c[0] * 0.94 + 0.07, c[1] * 0.9, c[2] * 0.93 + 0.07])
}

fn brighten(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.powf(0.7))
}

fn darken(c: [f64; 3]) -> [f64; 3] {
    c.map(|v| v.powf(1.45) * 0.95)
}

fn sepia(c: [f64; 3]) -> [f64; 3] {
    let y = luma(c);
    clamp01([y * 1.07 + 0.05, y * 0.95 + 0.02, y * 0.74])
}

fn red_boost(c: [f64; 3]) -> [f64; 3] {
    let y = luma(c);
    let redness = (c[0] - c[1].max(c[2])).max(0.0);
    clamp01([
        c[0] + 0.25 * redness + 0.03,
        c[1] - 0.05 * redness,
        c[2] - 0.05 * redness + 0.0 * y,
    ])
}

fn bleach(c: [f64; 3]) -> [f64; 3] {
    let m = saturation(c, 0.5);
    m.map(|v| s_curve(v, 0.7))
}

fn night(c: [f64; 3]) -> [f64; 3] {
    let d = darken(c);
    clamp01([d[0] * 0.75, d[1] * 0.9, d[2] * 1.1 + 0.05])
}

pub const LOOKS: &[Look] = &[
    Look {
        name: "warm",
        description: "warm golden tones with orange highlights, makes the scene feel sunny and cozy",
        apply: warm,
    },
    Look {
        name: "cool",
        description: "cool blue tones, cold wintry atmosphere with a blue cast",
        apply: cool,
    },
    Look {
        name: "teal_orange",
        description: "cinematic teal shadows and orange skin highlights, blockbuster look",
        apply: teal_orange,
    },
    Look {
        name: "contrast",
        description: "increase contrast with deeper shadows and brighter highlights, punchy image",
        apply: contrast,
    },
    Look {
        name: "fade",
        description: "faded matte film look with lifted blacks and lower contrast",
        apply: fade,
    },
    Look {
        name: "vivid",
        description: "vivid saturated colors, boost saturation and color intensity",
        apply: vivid,
    },
    Look {
        name: "muted",
        description: "muted desaturated colors, reduce saturation for a washed out somber mood",
        apply: muted,
    },
    Look {
        name: "green_tint",
        description: "green tint in the midtones, sickly matrix style atmosphere",
        apply: green_tint,
    },
    Look {
        name: "magenta_tint",
        description: "magenta pink tint, dreamy romantic color cast",
        apply: magenta_tint,
    },
    Look {
        name: "brighten",
        description: "brighter exposure, lift midtones and make the image lighter",
        apply: brighten,
    },
    Look {
        name: "darken",
        description: "darker exposure, moody low key image with deep shadows",
        apply: darken,
    },
    Look {
        name: "sepia",
        description: "vintage sepia brown tones, old photograph nostalgia",
        apply: sepia,
    },
    Look {
        name: "red_boost",
        description: "emphasize red tones, richer and stronger reds",
        apply: red_boost,
    },
    Look {
        name: "bleach",
        description: "bleach bypass, gritty low saturation with harsh contrast",
        apply: bleach,
    },
    Look {
        name: "night",
        description: "day for night, dark blue moonlit shadows",
        apply: night,
    },
];

pub fn find(name: &str) -> Option<&'static Look> {
    LOOKS.iter().find(|l| l.name == name)
}

/// Four looks and their mirror images about the identity lattice.
///
/// For each look `f` the pair is `identity ± (f - identity)`, so the
/// offsets of the eight bases sum to zero.
pub fn paired_bases(size: usize) -> Result<Vec<(String, Lut3D)>> {
    let picks = ["warm", "contrast", "vivid", "green_tint"];
    let mut out = Vec::with_capacity(picks.len() * 2);
    for name in picks {
        let look = find(name).expect("bundled look");
        let plus = look.lut(size)?;
        let minus = Lut3D::from_fn(size, |c| {
            let v = look.eval(c);
            [0, 1, 2].map(|i| 2.0 * c[i] - v[i])
        })?;
        out.push((format!("{name}+"), plus));
        out.push((format!("{name}-"), minus));
    }
    Ok(out)
}
