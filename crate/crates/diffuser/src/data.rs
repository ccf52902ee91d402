//! Training samples: a target delta image and its condition vector.

use gradeforge_core::dataset::GradingTriple;
use gradeforge_core::features::{condition_vector, ConditionVector, StyleExtractor};
use gradeforge_core::lut::{reshape_delta, DeltaImage};

use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub delta_image: DeltaImage,
    pub condition: ConditionVector,
}

/// `C = features(reference) - features(input)`, target = reshaped delta.
pub fn build_sample(triple: &GradingTriple, extractor: &dyn StyleExtractor) -> Result<TrainingSample> {
    let reference = extractor.extract(&triple.reference_frame);
    let input = extractor.extract(&triple.input_frame);
    Ok(TrainingSample {
        delta_image: reshape_delta(&triple.target_delta)?,
        condition: condition_vector(&reference, &input)?,
    })
}

pub fn build_samples(triples: &[GradingTriple], extractor: &dyn StyleExtractor) -> Result<Vec<TrainingSample>> {
    triples.iter().map(|t| build_sample(t, extractor)).collect()
}
