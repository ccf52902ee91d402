//! Key-frame pair selection between an input clip and a reference clip.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::frame::{Frame, VideoClip};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyFramePair {
    pub input_index: usize,
    pub reference_index: usize,
    pub similarity: f64,
}

/// Indices sampled at `sample_hz`: `round(i * fps / sample_hz)` for
/// `i = 0, 1, ...` while inside the clip, deduplicated. Index 0 is always
/// present.
pub fn sample_indices(len: usize, fps: f64, sample_hz: f64) -> Vec<usize> {
    if len == 0 {
        return Vec::new();
    }
    let stride = fps / sample_hz;
    let mut out = vec![0usize];
    if !(stride.is_finite() && stride > 0.0) {
        return out;
    }
    let mut i = 1u64;
    loop {
        let idx = (i as f64 * stride).round();
        if idx >= len as f64 {
            break;
        }
        let idx = idx as usize;
        if *out.last().unwrap() != idx {
            out.push(idx);
        }
        i += 1;
    }
    out
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64) * (*x as f64)).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| *x as f64 * *y as f64).sum()
}

fn embed_all<E>(
    clip: &VideoClip,
    indices: &[usize],
    embed: &E,
    which: &'static str,
) -> Result<Vec<(usize, Vec<f32>, f64)>>
where
    E: Fn(&Frame) -> Vec<f32> + Sync,
{
    let embedded: Vec<(usize, Vec<f32>)> = indices.par_iter().map(|&i| (i, embed(&clip.frames()[i]))).collect();
    embedded
        .into_iter()
        .map(|(i, v)| {
            let n = norm(&v);
            if n == 0.0 || !n.is_finite() {
                Err(Error::DegenerateEmbedding { clip: which, index: i })
            } else {
                Ok((i, v, n))
            }
        })
        .collect()
}

/// Picks the sampled `(input, reference)` frame pair whose embeddings have
/// the highest cosine similarity. Ties go to the smallest input index, then
/// the smallest reference index.
pub fn select_key_frames<E>(input: &VideoClip, reference: &VideoClip, embed: E, sample_hz: f64) -> Result<KeyFramePair>
where
    E: Fn(&Frame) -> Vec<f32> + Sync,
{
    if input.is_empty() || reference.is_empty() {
        return Err(Error::invalid("key-frame selection needs non-empty clips"));
    }
    if !(sample_hz.is_finite() && sample_hz > 0.0) {
        return Err(Error::invalid(format!("sample rate must be positive, got {sample_hz}")));
    }
    let in_idx = sample_indices(input.len(), input.fps(), sample_hz);
    let ref_idx = sample_indices(reference.len(), reference.fps(), sample_hz);
    let ins = embed_all(input, &in_idx, &embed, "input")?;
    let refs = embed_all(reference, &ref_idx, &embed, "reference")?;
    if let Some((_, v, _)) = ins.iter().chain(&refs).find(|(_, v, _)| v.len() != ins[0].1.len()) {
        return Err(Error::invalid(format!(
            "embedding lengths differ: {} vs {}",
            v.len(),
            ins[0].1.len()
        )));
    }
    select_from_embeddings(&ins, &refs)
}

fn select_from_embeddings(ins: &[(usize, Vec<f32>, f64)], refs: &[(usize, Vec<f32>, f64)]) -> Result<KeyFramePair> {
    let mut best: Option<KeyFramePair> = None;
    for (m, fm, nm) in ins {
        for (n, fn_, nn) in refs {
            let sim = dot(fm, fn_) / (nm * nn);
            // strict improvement keeps the earliest (m, n) on ties since the
            // loops visit pairs in lexicographic order
            if best.is_none_or(|b| sim > b.similarity) {
                best = Some(KeyFramePair {
                    input_index: *m,
                    reference_index: *n,
                    similarity: sim,
                });
            }
        }
    }
    best.ok_or_else(|| Error::invalid("no sampled frames"))
}

/// Argmax over precomputed embedding lists, indices are positions in the lists.
pub fn select_from_vectors(input: &[Vec<f32>], reference: &[Vec<f32>]) -> Result<KeyFramePair> {
    let prep = |vs: &[Vec<f32>], which: &'static str| -> Result<Vec<(usize, Vec<f32>, f64)>> {
        vs.iter()
            .enumerate()
            .map(|(i, v)| {
                let n = norm(v);
                if n == 0.0 || !n.is_finite() {
                    Err(Error::DegenerateEmbedding { clip: which, index: i })
                } else {
                    Ok((i, v.clone(), n))
                }
            })
            .collect()
    };
    if input.is_empty() || reference.is_empty() {
        return Err(Error::invalid("key-frame selection needs non-empty inputs"));
    }
    select_from_embeddings(&prep(input, "input")?, &prep(reference, "reference")?)
}
