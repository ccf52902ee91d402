//! Deterministic DDIM sampling and the frame-pair to LUT entry point.

use gradeforge_core::features::{condition_vector, ConditionVector, StyleExtractor};
use gradeforge_core::frame::Frame;
use gradeforge_core::lut::{lut_from_delta, unreshape, DeltaImage, Lut3D, DELTA_IMAGE_LEN};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::NoisePredictor;
use crate::schedule::NoiseSchedule;
use crate::{Error, Result};

pub const DEFAULT_SAMPLING_STEPS: usize = 25;

/// Seeded unit Gaussian starting image.
pub fn initial_noise(seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..DELTA_IMAGE_LEN).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Runs the eta = 0 update over `schedule.ddim_steps(steps)` in
/// descending order, starting from `x`:
///
/// ```text
/// x0_hat = (x - sqrt(1 - abar_k) * eps_hat) / sqrt(abar_k)
/// x      = sqrt(abar_prev) * x0_hat + sqrt(1 - abar_prev) * eps_hat
/// ```
///
/// with `abar_prev = 1` after the last step.
pub fn ddim_from_noise(
    model: &dyn NoisePredictor,
    cond: &ConditionVector,
    sched: &NoiseSchedule,
    steps: usize,
    mut x: Vec<f64>,
) -> Result<DeltaImage> {
    let taus = sched.ddim_steps(steps)?;
    for i in (0..taus.len()).rev() {
        let k = taus[i];
        let prev = if i == 0 { 0 } else { taus[i - 1] };
        let eps = model.predict_noise(&x, cond.values(), k, sched)?;
        let (ab, ab_prev) = (sched.alpha_bar(k), sched.alpha_bar(prev));
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        for (xi, ei) in x.iter_mut().zip(&eps) {
            let x0 = (*xi - sn * ei) / sa;
            *xi = pa * x0 + pn * ei;
        }
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("sampling produced non-finite values".into()));
    }
    Ok(DeltaImage::from_vec(x)?)
}

pub fn ddim_sample(
    model: &dyn NoisePredictor,
    cond: &ConditionVector,
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<DeltaImage> {
    ddim_from_noise(model, cond, sched, steps, initial_noise(seed))
}

/// Grades `input_key` toward the look of `reference_key`: samples a delta
/// image for their style difference and adds it to the identity lattice.
#[allow(clippy::too_many_arguments)]
pub fn generate_lut(
    model: &dyn NoisePredictor,
    extractor: &dyn StyleExtractor,
    input_key: &Frame,
    reference_key: &Frame,
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<Lut3D> {
    let cond = condition_vector(&extractor.extract(reference_key), &extractor.extract(input_key))?;
    lut_for_condition(model, &cond, sched, steps, seed)
}

pub fn lut_for_condition(
    model: &dyn NoisePredictor,
    cond: &ConditionVector,
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<Lut3D> {
    let img = ddim_sample(model, cond, sched, steps, seed)?;
    Ok(lut_from_delta(&unreshape(&img)))
}
