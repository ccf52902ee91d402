//! Central-difference check of the analytic gradients.

use gradeforge_core::features::FEATURE_DIM;
use gradeforge_core::lut::DELTA_IMAGE_LEN;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{Denoiser, DenoiserConfig, LayerKind};
use crate::schedule::NoiseSchedule;
use crate::Result;

pub const LAYER_KINDS: [LayerKind; 5] = [
    LayerKind::Conv,
    LayerKind::StridedConv,
    LayerKind::GroupNorm,
    LayerKind::Linear,
    LayerKind::Gain,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KindReport {
    pub kind: LayerKind,
    pub checked: usize,
    pub max_relative_error: f64,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut *rng);
            scale * z
        })
        .collect()
}

/// Compares the analytic gradient of the loss at step `k` with central
/// differences of step `h` on up to `per_kind` random weights of each
/// layer kind. Parameters are perturbed away from their initial values
/// first so that no layer is inert.
pub fn check_gradients(
    config: DenoiserConfig,
    per_kind: usize,
    k: usize,
    h: f64,
    seed: u64,
) -> Result<Vec<KindReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Denoiser::<f64>::init(config, seed)?;
    for p in model.params_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *p += 0.2 * z;
    }
    let sched = NoiseSchedule::default();
    let ab = sched.alpha_bar(k);
    let x0 = gaussian(&mut rng, DELTA_IMAGE_LEN, 0.05);
    let eps = gaussian(&mut rng, DELTA_IMAGE_LEN, 1.0);
    let xk: Vec<f64> = x0
        .iter()
        .zip(&eps)
        .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
        .collect();
    let cond: Vec<f32> = (0..FEATURE_DIM).map(|_| rng.random_range(-0.3f32..0.3)).collect();

    let mut grads = vec![0.0; model.param_count()];
    model.loss_and_grad(&xk, &cond, k, ab, &eps, 1.0, &mut grads)?;

    let mut out = Vec::new();
    for kind in LAYER_KINDS {
        let pool: Vec<usize> = model
            .layout()
            .regions()
            .into_iter()
            .filter(|(k, _)| *k == kind)
            .flat_map(|(_, r)| r)
            .collect();
        let n = per_kind.min(pool.len());
        let mut max_rel: f64 = 0.0;
        for i in sample(&mut rng, pool.len(), n).iter().map(|i| pool[i]) {
            let orig = model.params()[i];
            model.params_mut()[i] = orig + h;
            let up = model.loss(&xk, &cond, k, ab, &eps)?;
            model.params_mut()[i] = orig - h;
            let down = model.loss(&xk, &cond, k, ab, &eps)?;
            model.params_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
            max_rel = max_rel.max(rel);
        }
        out.push(KindReport {
            kind,
            checked: n,
            max_relative_error: max_rel,
        });
    }
    Ok(out)
}
