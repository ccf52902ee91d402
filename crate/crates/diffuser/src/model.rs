//! The noise predictor: a three-level convolutional encoder-decoder over
//! the 64x64 delta image, conditioned on the style difference vector and
//! the diffusion step through per-block scale and shift.
//!
//! The network sees `c_in * x_k` stacked with the identity lattice image
//! and produces a residual `F`; the noise estimate is
//! `gain * c_skip * x_k + c_out * F`, where the three coefficients are the
//! ones that make the estimate well scaled for data of standard deviation
//! `sigma_data`:
//!
//! ```text
//! v      = abar * sigma^2 + (1 - abar)
//! c_in   = 1 / sqrt(v)
//! c_skip = sqrt(1 - abar) / v
//! c_out  = sqrt(abar) * sigma / sqrt(v)
//! ```

use std::ops::Range;

use gradeforge_core::features::{FEATURE_DIM, GRID_OFFSET, HIST_LEN};
use gradeforge_core::lut::{entries_image, identity_lut, DELTA_IMAGE_LEN, DELTA_IMAGE_SIDE, MODEL_SIZE};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::nn::{self, Conv3x3, GroupNorm, GroupNormCache, Linear};
use crate::scalar::Scalar;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

pub const SIDE: usize = DELTA_IMAGE_SIDE;
pub const PLANE: usize = SIDE * SIDE;
pub const IMAGE_CHANNELS: usize = 3;
const BLOCKS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    /// Channel widths at 64x64, 32x32 and 16x16.
    pub widths: [usize; 3],
    pub groups: usize,
    /// Width of the conditioning hidden layer.
    pub hidden: usize,
    /// Length of the sinusoidal step embedding.
    pub time_dim: usize,
    pub cond_dim: usize,
    pub sigma_data: f64,
    /// Input multipliers for the histogram, Lab statistics and grid means
    /// parts of the condition vector.
    pub cond_scale: [f64; 3],
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            widths: [32, 64, 128],
            groups: 8,
            hidden: 256,
            time_dim: 64,
            cond_dim: FEATURE_DIM,
            sigma_data: 0.05,
            cond_scale: [8.0, 1.0 / 16.0, 4.0],
        }
    }
}

impl DenoiserConfig {
    /// Narrow variant used for the bundled toy model and quick tests.
    pub fn small() -> Self {
        DenoiserConfig {
            widths: [8, 16, 32],
            groups: 4,
            hidden: 64,
            time_dim: 32,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.iter().any(|w| *w == 0 || *w % self.groups != 0) || self.groups == 0 {
            return Err(Error::Invalid(format!(
                "widths {:?} must be positive multiples of groups {}",
                self.widths, self.groups
            )));
        }
        if self.hidden == 0 || self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::Invalid("hidden must be positive and time_dim even".into()));
        }
        if self.cond_dim != FEATURE_DIM {
            return Err(Error::Invalid(format!(
                "condition length must be {FEATURE_DIM}, got {}",
                self.cond_dim
            )));
        }
        if !(self.sigma_data > 0.0 && self.sigma_data.is_finite()) {
            return Err(Error::Invalid("sigma_data must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ResBlock {
    ch: usize,
    gn1: GroupNorm,
    conv1: Conv3x3,
    gn2: GroupNorm,
    conv2: Conv3x3,
    /// Offset of this block's scales in the modulation vector; shifts follow.
    mod_off: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    StridedConv,
    GroupNorm,
    Linear,
    Gain,
}

/// Parameter offsets of every layer in the flat weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    conv_in: Conv3x3,
    res: [ResBlock; BLOCKS],
    down: [Conv3x3; 2],
    up: [Conv3x3; 2],
    gn_out: GroupNorm,
    conv_out: Conv3x3,
    lin_c: Linear,
    lin_t: Linear,
    lin_m: Linear,
    gain: usize,
    mod_len: usize,
    total: usize,
}

struct Alloc(usize);

impl Alloc {
    fn take(&mut self, n: usize) -> usize {
        let o = self.0;
        self.0 += n;
        o
    }

    fn conv(&mut self, cin: usize, cout: usize, stride: usize) -> Conv3x3 {
        let w_off = self.take(cout * cin * 9);
        let b_off = self.take(cout);
        Conv3x3 {
            cin,
            cout,
            stride,
            w_off,
            b_off,
        }
    }

    fn gn(&mut self, channels: usize, groups: usize) -> GroupNorm {
        let g_off = self.take(channels);
        let b_off = self.take(channels);
        GroupNorm {
            channels,
            groups,
            g_off,
            b_off,
        }
    }

    fn linear(&mut self, inp: usize, out: usize) -> Linear {
        let w_off = self.take(inp * out);
        let b_off = self.take(out);
        Linear { inp, out, w_off, b_off }
    }
}

impl Layout {
    pub fn new(cfg: &DenoiserConfig) -> Self {
        let [c1, c2, c3] = cfg.widths;
        let g = cfg.groups;
        let mut a = Alloc(0);
        let conv_in = a.conv(2 * IMAGE_CHANNELS, c1, 1);
        let mut mod_len = 0;
        let mut block = |a: &mut Alloc, ch: usize| {
            let b = ResBlock {
                ch,
                gn1: a.gn(ch, g),
                conv1: a.conv(ch, ch, 1),
                gn2: a.gn(ch, g),
                conv2: a.conv(ch, ch, 1),
                mod_off: mod_len,
            };
            mod_len += 2 * ch;
            b
        };
        let r0 = block(&mut a, c1);
        let d0 = a.conv(c1, c2, 2);
        let r1 = block(&mut a, c2);
        let d1 = a.conv(c2, c3, 2);
        let r2 = block(&mut a, c3);
        let u0 = a.conv(c3 + c2, c2, 1);
        let r3 = block(&mut a, c2);
        let u1 = a.conv(c2 + c1, c1, 1);
        let r4 = block(&mut a, c1);
        let gn_out = a.gn(c1, g);
        let conv_out = a.conv(c1, IMAGE_CHANNELS, 1);
        let lin_c = a.linear(cfg.cond_dim, cfg.hidden);
        let lin_t = a.linear(cfg.time_dim, cfg.hidden);
        let lin_m = a.linear(cfg.hidden, mod_len);
        let gain = a.take(1);
        Layout {
            conv_in,
            res: [r0, r1, r2, r3, r4],
            down: [d0, d1],
            up: [u0, u1],
            gn_out,
            conv_out,
            lin_c,
            lin_t,
            lin_m,
            gain,
            mod_len,
            total: a.0,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Parameter ranges grouped by the kind of layer that owns them.
    pub fn regions(&self) -> Vec<(LayerKind, Range<usize>)> {
        let conv = |c: &Conv3x3| c.w_off..c.b_off + c.cout;
        let gn = |g: &GroupNorm| g.g_off..g.b_off + g.channels;
        let lin = |l: &Linear| l.w_off..l.b_off + l.out;
        let mut out = vec![(LayerKind::Conv, conv(&self.conv_in))];
        for r in &self.res {
            out.push((LayerKind::GroupNorm, gn(&r.gn1)));
            out.push((LayerKind::Conv, conv(&r.conv1)));
            out.push((LayerKind::GroupNorm, gn(&r.gn2)));
            out.push((LayerKind::Conv, conv(&r.conv2)));
        }
        for d in &self.down {
            out.push((LayerKind::StridedConv, conv(d)));
        }
        for u in &self.up {
            out.push((LayerKind::Conv, conv(u)));
        }
        out.push((LayerKind::GroupNorm, gn(&self.gn_out)));
        out.push((LayerKind::Conv, conv(&self.conv_out)));
        for l in [&self.lin_c, &self.lin_t, &self.lin_m] {
            out.push((LayerKind::Linear, lin(l)));
        }
        out.push((LayerKind::Gain, self.gain..self.gain + 1));
        out
    }
}

/// Preconditioning coefficients at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Precond {
    pub c_in: f64,
    pub c_skip: f64,
    pub c_out: f64,
}

impl Precond {
    pub fn new(alpha_bar: f64, sigma_data: f64) -> Self {
        let v = alpha_bar * sigma_data * sigma_data + (1.0 - alpha_bar);
        Precond {
            c_in: 1.0 / v.sqrt(),
            c_skip: (1.0 - alpha_bar).sqrt() / v,
            c_out: alpha_bar.sqrt() * sigma_data / v.sqrt(),
        }
    }
}

struct ResCache<T> {
    gn1: GroupNormCache<T>,
    a: Vec<T>,
    col1: Vec<T>,
    gn2: GroupNormCache<T>,
    d: Vec<T>,
    e: Vec<T>,
    col2: Vec<T>,
}

/// Everything the backward pass needs from one forward pass.
pub struct Cache<T> {
    xk: Vec<T>,
    pc: Precond,
    cs: Vec<T>,
    temb: Vec<T>,
    pre: Vec<T>,
    hid: Vec<T>,
    mods: Vec<T>,
    col_in: Vec<T>,
    res: Vec<ResCache<T>>,
    col_down: [Vec<T>; 2],
    col_up: [Vec<T>; 2],
    gn_out: GroupNormCache<T>,
    go: Vec<T>,
    col_out: Vec<T>,
    f: Vec<T>,
}

/// Converts a row-major `H x W x 3` raster to channel-major `3 x H x W`.
pub fn hwc_to_chw<T: Scalar>(src: &[f64]) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    let plane = src.len() / IMAGE_CHANNELS;
    for (i, px) in src.chunks_exact(IMAGE_CHANNELS).enumerate() {
        for c in 0..IMAGE_CHANNELS {
            out[c * plane + i] = T::of(px[c]);
        }
    }
    out
}

pub fn chw_to_hwc<T: Scalar>(src: &[T]) -> Vec<f64> {
    let plane = src.len() / IMAGE_CHANNELS;
    let mut out = vec![0.0; src.len()];
    for i in 0..plane {
        for c in 0..IMAGE_CHANNELS {
            out[i * IMAGE_CHANNELS + c] = src[c * plane + i].f64();
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Denoiser<T> {
    config: DenoiserConfig,
    layout: Layout,
    params: Vec<T>,
    identity: Vec<T>,
}

fn identity_chw<T: Scalar>() -> Vec<T> {
    let img =
        entries_image(&identity_lut(MODEL_SIZE).expect("model lattice size is valid")).expect("model lattice reshapes");
    hwc_to_chw(img.as_slice())
}

impl<T: Scalar> Denoiser<T> {
    /// All parameters zero, including the skip gain.
    pub fn zeros(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        Ok(Denoiser {
            params: vec![T::zero(); layout.total()],
            layout,
            config,
            identity: identity_chw(),
        })
    }

    pub fn from_params(config: DenoiserConfig, params: Vec<T>) -> Result<Self> {
        let mut d = Self::zeros(config)?;
        if params.len() != d.layout.total() {
            return Err(Error::Invalid(format!(
                "architecture needs {} parameters, got {}",
                d.layout.total(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Invalid("non-finite parameter".into()));
        }
        d.params = params;
        Ok(d)
    }

    /// Seeded initialisation: scaled Gaussian convolution and input
    /// projection weights, unit norm gains, zero output layers and a zero
    /// skip gain, so the untrained model predicts zero noise.
    pub fn init(config: DenoiserConfig, seed: u64) -> Result<Self> {
        let mut d = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = d.layout.clone();
        let mut fill = |params: &mut Vec<T>, off: usize, len: usize, std: f64| {
            for p in &mut params[off..off + len] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *p = T::of(z * std);
            }
        };
        let mut convs = vec![(l.conv_in, 1.0)];
        for r in &l.res {
            convs.push((r.conv1, 1.0));
            convs.push((r.conv2, 0.5));
        }
        convs.extend(l.down.iter().map(|c| (*c, 1.0)));
        convs.extend(l.up.iter().map(|c| (*c, 1.0)));
        for (c, gain) in convs {
            fill(
                &mut d.params,
                c.w_off,
                c.weight_len(),
                gain / ((c.cin * 9) as f64).sqrt(),
            );
        }
        for g in l.res.iter().flat_map(|r| [r.gn1, r.gn2]).chain([l.gn_out]) {
            d.params[g.g_off..g.g_off + g.channels].fill(T::one());
        }
        fill(
            &mut d.params,
            l.lin_c.w_off,
            l.lin_c.inp * l.lin_c.out,
            1.0 / (l.lin_c.inp as f64).sqrt(),
        );
        fill(
            &mut d.params,
            l.lin_t.w_off,
            l.lin_t.inp * l.lin_t.out,
            1.0 / (l.lin_t.inp as f64).sqrt(),
        );
        Ok(d)
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// Converts the weights to another element type.
    pub fn cast<U: Scalar>(&self) -> Denoiser<U> {
        Denoiser {
            config: self.config.clone(),
            layout: self.layout.clone(),
            params: self.params.iter().map(|p| U::of(p.f64())).collect(),
            identity: identity_chw(),
        }
    }

    pub fn scale_condition(&self, cond: &[f32]) -> Vec<T> {
        let s = self.config.cond_scale;
        cond.iter()
            .enumerate()
            .map(|(i, v)| {
                let m = if i < HIST_LEN {
                    s[0]
                } else if i < GRID_OFFSET {
                    s[1]
                } else {
                    s[2]
                };
                T::of(*v as f64 * m)
            })
            .collect()
    }

    fn check_inputs(&self, xk_len: usize, cond_len: usize) -> Result<()> {
        if xk_len != DELTA_IMAGE_LEN {
            return Err(Error::Invalid(format!(
                "noisy image must have {DELTA_IMAGE_LEN} values, got {xk_len}"
            )));
        }
        if cond_len != self.config.cond_dim {
            return Err(Error::Invalid(format!(
                "condition must have {} values, got {cond_len}",
                self.config.cond_dim
            )));
        }
        Ok(())
    }

    fn res_forward(&self, r: &ResBlock, x: &[T], side: usize, mods: &[T]) -> (Vec<T>, ResCache<T>) {
        let p = &self.params;
        let hw = side * side;
        let (a, gn1) = r.gn1.forward(p, x, hw);
        let b = nn::silu(&a);
        let (c, col1) = r.conv1.forward(p, &b, side, side);
        let (d, gn2) = r.gn2.forward(p, &c, hw);
        let mut e = d.clone();
        for ch in 0..r.ch {
            let s = T::one() + mods[r.mod_off + ch];
            let t = mods[r.mod_off + r.ch + ch];
            for v in &mut e[ch * hw..(ch + 1) * hw] {
                *v = *v * s + t;
            }
        }
        let f = nn::silu(&e);
        let (g, col2) = r.conv2.forward(p, &f, side, side);
        let out = x.iter().zip(&g).map(|(a, b)| *a + *b).collect();
        (
            out,
            ResCache {
                gn1,
                a,
                col1,
                gn2,
                d,
                e,
                col2,
            },
        )
    }

    fn res_backward(
        &self,
        r: &ResBlock,
        cache: &ResCache<T>,
        dy: &[T],
        side: usize,
        mods: &[T],
        grads: &mut [T],
        dmods: &mut [T],
    ) -> Vec<T> {
        let p = &self.params;
        let hw = side * side;
        let df = r
            .conv2
            .backward(p, grads, &cache.col2, dy, side, side, true)
            .expect("dx requested");
        let de = nn::silu_backward(&cache.e, &df);
        let mut dd = de.clone();
        for ch in 0..r.ch {
            let s = T::one() + mods[r.mod_off + ch];
            let mut ds = T::zero();
            let mut dt = T::zero();
            for i in ch * hw..(ch + 1) * hw {
                ds += de[i] * cache.d[i];
                dt += de[i];
                dd[i] = de[i] * s;
            }
            dmods[r.mod_off + ch] += ds;
            dmods[r.mod_off + r.ch + ch] += dt;
        }
        let dc = r.gn2.backward(p, grads, &cache.gn2, &dd, hw);
        let db = r
            .conv1
            .backward(p, grads, &cache.col1, &dc, side, side, true)
            .expect("dx requested");
        let da = nn::silu_backward(&cache.a, &db);
        let dx = r.gn1.backward(p, grads, &cache.gn1, &da, hw);
        dy.iter().zip(&dx).map(|(a, b)| *a + *b).collect()
    }

    /// Noise estimate for a channel-major noisy image; returns the cache
    /// for [`Denoiser::backward`].
    pub fn forward(&self, xk: &[T], cond: &[f32], k: usize, alpha_bar: f64) -> Result<(Vec<T>, Cache<T>)> {
        self.check_inputs(xk.len(), cond.len())?;
        let l = &self.layout;
        let p = &self.params;
        let [c1, c2, c3] = self.config.widths;
        let sides = [SIDE, SIDE / 2, SIDE / 4];
        let pc = Precond::new(alpha_bar, self.config.sigma_data);

        let cs = self.scale_condition(cond);
        let temb = nn::timestep_embedding::<T>(k, self.config.time_dim);
        let mut pre = l.lin_c.forward(p, &cs);
        for (a, b) in pre.iter_mut().zip(l.lin_t.forward(p, &temb)) {
            *a += b;
        }
        let hid = nn::silu(&pre);
        let mods = l.lin_m.forward(p, &hid);

        let c_in = T::of(pc.c_in);
        let mut xin: Vec<T> = xk.iter().map(|v| *v * c_in).collect();
        xin.extend_from_slice(&self.identity);

        let mut res = Vec::with_capacity(BLOCKS);
        let (h0, col_in) = l.conv_in.forward(p, &xin, SIDE, SIDE);
        let (h1, rc) = self.res_forward(&l.res[0], &h0, sides[0], &mods);
        res.push(rc);
        let (d1, col_d0) = l.down[0].forward(p, &h1, sides[0], sides[0]);
        let (h2, rc) = self.res_forward(&l.res[1], &d1, sides[1], &mods);
        res.push(rc);
        let (d2, col_d1) = l.down[1].forward(p, &h2, sides[1], sides[1]);
        let (h3, rc) = self.res_forward(&l.res[2], &d2, sides[2], &mods);
        res.push(rc);
        let mut cat1 = nn::upsample2(&h3, c3, sides[2], sides[2]);
        cat1.extend_from_slice(&h2);
        let (m1, col_u0) = l.up[0].forward(p, &cat1, sides[1], sides[1]);
        let (h4, rc) = self.res_forward(&l.res[3], &m1, sides[1], &mods);
        res.push(rc);
        let mut cat2 = nn::upsample2(&h4, c2, sides[1], sides[1]);
        cat2.extend_from_slice(&h1);
        let (m2, col_u1) = l.up[1].forward(p, &cat2, sides[0], sides[0]);
        let (h5, rc) = self.res_forward(&l.res[4], &m2, sides[0], &mods);
        res.push(rc);
        debug_assert_eq!(h5.len(), c1 * PLANE);
        let (go, gn_out) = l.gn_out.forward(p, &h5, PLANE);
        let so = nn::silu(&go);
        let (f, col_out) = l.conv_out.forward(p, &so, SIDE, SIDE);

        let gain = p[l.gain] * T::of(pc.c_skip);
        let c_out = T::of(pc.c_out);
        let eps: Vec<T> = xk.iter().zip(&f).map(|(x, f)| gain * *x + c_out * *f).collect();
        Ok((
            eps,
            Cache {
                xk: xk.to_vec(),
                pc,
                cs,
                temb,
                pre,
                hid,
                mods,
                col_in,
                res,
                col_down: [col_d0, col_d1],
                col_up: [col_u0, col_u1],
                gn_out,
                go,
                col_out,
                f,
            },
        ))
    }

    /// Accumulates into `grads` the gradient of `sum(d_eps * eps_hat)`.
    pub fn backward(&self, cache: &Cache<T>, d_eps: &[T], grads: &mut [T]) {
        let l = &self.layout;
        let p = &self.params;
        let [c1, c2, _] = self.config.widths;
        let sides = [SIDE, SIDE / 2, SIDE / 4];
        let mut dmods = vec![T::zero(); l.mod_len];

        let c_skip = T::of(cache.pc.c_skip);
        let mut dg = T::zero();
        for (d, x) in d_eps.iter().zip(&cache.xk) {
            dg += *d * *x;
        }
        grads[l.gain] += dg * c_skip;
        let c_out = T::of(cache.pc.c_out);
        let df: Vec<T> = d_eps.iter().map(|d| *d * c_out).collect();
        debug_assert_eq!(df.len(), cache.f.len());

        let dso = l
            .conv_out
            .backward(p, grads, &cache.col_out, &df, SIDE, SIDE, true)
            .expect("dx");
        let dgo = nn::silu_backward(&cache.go, &dso);
        let dh5 = l.gn_out.backward(p, grads, &cache.gn_out, &dgo, PLANE);
        let dm2 = self.res_backward(&l.res[4], &cache.res[4], &dh5, sides[0], &cache.mods, grads, &mut dmods);
        let dcat2 = l.up[1]
            .backward(p, grads, &cache.col_up[1], &dm2, sides[0], sides[0], true)
            .expect("dx");
        let (du2, dh1_skip) = dcat2.split_at(c2 * PLANE);
        let dh4 = nn::upsample2_backward(du2, c2, sides[1], sides[1]);
        let dm1 = self.res_backward(&l.res[3], &cache.res[3], &dh4, sides[1], &cache.mods, grads, &mut dmods);
        let dcat1 = l.up[0]
            .backward(p, grads, &cache.col_up[0], &dm1, sides[1], sides[1], true)
            .expect("dx");
        let c3 = self.config.widths[2];
        let (du1, dh2_skip) = dcat1.split_at(c3 * sides[1] * sides[1]);
        let dh3 = nn::upsample2_backward(du1, c3, sides[2], sides[2]);
        let dd2 = self.res_backward(&l.res[2], &cache.res[2], &dh3, sides[2], &cache.mods, grads, &mut dmods);
        let mut dh2 = l.down[1]
            .backward(p, grads, &cache.col_down[1], &dd2, sides[1], sides[1], true)
            .expect("dx");
        for (a, b) in dh2.iter_mut().zip(dh2_skip) {
            *a += *b;
        }
        let dd1 = self.res_backward(&l.res[1], &cache.res[1], &dh2, sides[1], &cache.mods, grads, &mut dmods);
        let mut dh1 = l.down[0]
            .backward(p, grads, &cache.col_down[0], &dd1, sides[0], sides[0], true)
            .expect("dx");
        for (a, b) in dh1.iter_mut().zip(dh1_skip) {
            *a += *b;
        }
        debug_assert_eq!(dh1.len(), c1 * PLANE);
        let dh0 = self.res_backward(&l.res[0], &cache.res[0], &dh1, sides[0], &cache.mods, grads, &mut dmods);
        l.conv_in.backward(p, grads, &cache.col_in, &dh0, SIDE, SIDE, false);

        let dhid = l.lin_m.backward(p, grads, &cache.hid, &dmods);
        let dpre = nn::silu_backward(&cache.pre, &dhid);
        l.lin_c.backward(p, grads, &cache.cs, &dpre);
        l.lin_t.backward(p, grads, &cache.temb, &dpre);
    }

    /// Mean squared error between `eps` and the prediction for `x_k`.
    pub fn loss(&self, xk: &[T], cond: &[f32], k: usize, alpha_bar: f64, eps: &[T]) -> Result<f64> {
        let (pred, _) = self.forward(xk, cond, k, alpha_bar)?;
        Ok(mse(&pred, eps))
    }

    /// Loss and its gradient, accumulated into `grads` scaled by `weight`.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grad(
        &self,
        xk: &[T],
        cond: &[f32],
        k: usize,
        alpha_bar: f64,
        eps: &[T],
        weight: f64,
        grads: &mut [T],
    ) -> Result<f64> {
        let (pred, cache) = self.forward(xk, cond, k, alpha_bar)?;
        let n = pred.len() as f64;
        let scale = T::of(2.0 * weight / n);
        let d: Vec<T> = pred.iter().zip(eps).map(|(p, e)| (*p - *e) * scale).collect();
        self.backward(&cache, &d, grads);
        Ok(mse(&pred, eps))
    }
}

pub fn mse<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    let s: f64 = a.iter().zip(b).map(|(x, y)| (x.f64() - y.f64()).powi(2)).sum();
    s / a.len() as f64
}

/// Anything that estimates the noise in a delta image at step `k`.
pub trait NoisePredictor {
    /// `xk` and the result are row-major `64 x 64 x 3` rasters.
    fn predict_noise(&self, xk: &[f64], cond: &[f32], k: usize, sched: &NoiseSchedule) -> Result<Vec<f64>>;
}

impl<T: Scalar> NoisePredictor for Denoiser<T> {
    fn predict_noise(&self, xk: &[f64], cond: &[f32], k: usize, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        if k == 0 || k > sched.steps() {
            return Err(Error::Invalid(format!("step {k} outside 1..={}", sched.steps())));
        }
        self.check_inputs(xk.len(), cond.len())?;
        let (eps, _) = self.forward(&hwc_to_chw::<T>(xk), cond, k, sched.alpha_bar(k))?;
        Ok(chw_to_hwc(&eps))
    }
}

/// Predicts zero noise everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPredictor;

impl NoisePredictor for ZeroPredictor {
    fn predict_noise(&self, xk: &[f64], _cond: &[f32], _k: usize, _sched: &NoiseSchedule) -> Result<Vec<f64>> {
        Ok(vec![0.0; xk.len()])
    }
}
