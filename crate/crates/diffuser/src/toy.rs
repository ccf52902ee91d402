//! A self-contained synthetic grading task: procedural scenes, eight
//! paired LUT bases mixed into training triples, and a held-out scorer.
//!
//! Held-out pairs come from scenes never used for training and from fresh
//! mixes of the same bases.

use gradeforge_core::dataset::{draw_mix_plan, make_triple, mix_from_plan, sample_rng, GradingTriple, SceneGenerator};
use gradeforge_core::features::{StatisticalExtractor, StyleExtractor};
use gradeforge_core::frame::Frame;
use gradeforge_core::looks::paired_bases;
use gradeforge_core::lut::{apply_lut, Lut3D};
use serde::{Deserialize, Serialize};

use crate::data::{build_samples, TrainingSample};
use crate::model::{Denoiser, DenoiserConfig, NoisePredictor};
use crate::sample::{generate_lut, DEFAULT_SAMPLING_STEPS};
use crate::schedule::NoiseSchedule;
use crate::train::{train, TrainConfig, TrainOutcome};
use crate::{Error, Result};

const TRAIN_STREAM: u64 = 0;
const HELD_OUT_STREAM: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub lut_size: usize,
    pub train_scenes: usize,
    pub held_out_scenes: usize,
    pub triples: usize,
    pub held_out_pairs: usize,
    pub sampling_steps: usize,
    pub seed: u64,
    pub model: DenoiserConfig,
    pub optimizer: TrainConfig,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            lut_size: 16,
            train_scenes: 60,
            held_out_scenes: 20,
            triples: 500,
            held_out_pairs: 20,
            sampling_steps: DEFAULT_SAMPLING_STEPS,
            seed: 7,
            model: DenoiserConfig::small(),
            optimizer: TrainConfig {
                batch: 8,
                steps: 4000,
                learning_rate: 2e-3,
                final_lr_fraction: 0.05,
                weight_decay: 0.0,
                seed: 11,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyCorpus {
    pub bases: Vec<(String, Lut3D)>,
    pub train: Vec<GradingTriple>,
    pub held_out: Vec<GradingTriple>,
}

/// Frames of `count` procedural scenes, one pool per scene.
pub fn procedural_pools(count: usize, root: u64, stream: u64) -> Vec<Vec<Frame>> {
    let gen = SceneGenerator::default();
    (0..count as u64)
        .map(|i| {
            gen.scene(root ^ (stream + i).wrapping_mul(0x9e37_79b9_7f4a_7c15))
                .into_frames()
        })
        .collect()
}

/// `count` triples cycling through `pools`, each with a fresh mix of
/// `bases` drawn from the per-sample generator `(root, stream + i)`.
pub fn triples_from_pools(
    bases: &[&Lut3D],
    pools: &[Vec<Frame>],
    count: usize,
    root: u64,
    stream: u64,
) -> Result<Vec<GradingTriple>> {
    if pools.is_empty() {
        return Err(Error::Invalid("no frame pools".into()));
    }
    (0..count as u64)
        .map(|i| {
            let mut rng = sample_rng(root, stream + i);
            let plan = draw_mix_plan(bases.len(), &mut rng)?;
            let lut = mix_from_plan(bases, &plan)?;
            let pool = &pools[(i as usize) % pools.len()];
            Ok(make_triple(pool, &lut, &mut rng)?)
        })
        .collect()
}

/// Procedural scenes and the eight paired bases.
pub fn build_corpus(cfg: &ToyConfig) -> Result<ToyCorpus> {
    let bases = paired_bases(cfg.lut_size)?;
    let train = procedural_pools(cfg.train_scenes, cfg.seed, TRAIN_STREAM);
    let held_out = procedural_pools(cfg.held_out_scenes, cfg.seed, HELD_OUT_STREAM);
    build_corpus_from(cfg, bases, &train, &held_out)
}

pub fn build_corpus_from(
    cfg: &ToyConfig,
    bases: Vec<(String, Lut3D)>,
    train_pools: &[Vec<Frame>],
    held_out_pools: &[Vec<Frame>],
) -> Result<ToyCorpus> {
    if train_pools.is_empty() || held_out_pools.is_empty() {
        return Err(Error::Invalid("toy corpus needs scenes on both sides".into()));
    }
    let refs: Vec<&Lut3D> = bases.iter().map(|(_, l)| l).collect();
    let train = triples_from_pools(&refs, train_pools, cfg.triples, cfg.seed, TRAIN_STREAM)?;
    let held_out = triples_from_pools(&refs, held_out_pools, cfg.held_out_pairs, cfg.seed, HELD_OUT_STREAM)?;
    Ok(ToyCorpus { bases, train, held_out })
}

pub fn training_samples(corpus: &ToyCorpus) -> Result<Vec<TrainingSample>> {
    build_samples(&corpus.train, &StatisticalExtractor)
}

pub fn train_toy(
    cfg: &ToyConfig,
    corpus: &ToyCorpus,
    sched: &NoiseSchedule,
    progress: impl FnMut(usize, f64),
) -> Result<TrainOutcome<f32>> {
    let samples = training_samples(corpus)?;
    let model = Denoiser::<f32>::init(cfg.model.clone(), cfg.seed)?;
    train(model, &samples, sched, &cfg.optimizer, progress)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    /// Style distance from the untouched input to the reference.
    pub ungraded: f64,
    /// Style distance from the graded input to the reference.
    pub graded: f64,
}

impl PairScore {
    pub fn reduction(&self) -> f64 {
        if self.ungraded == 0.0 {
            return if self.graded == 0.0 { 1.0 } else { f64::NEG_INFINITY };
        }
        1.0 - self.graded / self.ungraded
    }
}

pub fn score_pair(triple: &GradingTriple, lut: &Lut3D, extractor: &dyn StyleExtractor) -> PairScore {
    let reference = extractor.extract(&triple.reference_frame);
    let input = extractor.extract(&triple.input_frame);
    let graded = extractor.extract(&apply_lut(lut, &triple.input_frame));
    PairScore {
        ungraded: input.distance(&reference),
        graded: graded.distance(&reference),
    }
}

#[derive(Debug, Clone)]
pub struct ToyReport {
    pub pairs: Vec<PairScore>,
    /// Mean absolute offset of the LUT generated for `C = 0`, per held-out
    /// input frame.
    pub zero_condition: Vec<f64>,
}

impl ToyReport {
    pub fn mean_reduction(&self) -> f64 {
        self.pairs.iter().map(PairScore::reduction).sum::<f64>() / self.pairs.len() as f64
    }

    pub fn worst_zero_condition(&self) -> f64 {
        self.zero_condition.iter().copied().fold(0.0, f64::max)
    }
}

/// Grades every held-out input toward its reference with `model`, and
/// also toward itself to probe the zero-condition output.
pub fn evaluate(
    model: &dyn NoisePredictor,
    held_out: &[GradingTriple],
    sched: &NoiseSchedule,
    steps: usize,
    seed: u64,
) -> Result<ToyReport> {
    let ex = StatisticalExtractor;
    let mut pairs = Vec::with_capacity(held_out.len());
    let mut zero_condition = Vec::with_capacity(held_out.len());
    for (i, t) in held_out.iter().enumerate() {
        let s = seed.wrapping_add(i as u64);
        let lut = generate_lut(model, &ex, &t.input_frame, &t.reference_frame, sched, steps, s)?;
        pairs.push(score_pair(t, &lut, &ex));
        let same = generate_lut(model, &ex, &t.input_frame, &t.input_frame, sched, steps, s)?;
        zero_condition.push(same.mean_abs_offset());
    }
    Ok(ToyReport { pairs, zero_condition })
}
