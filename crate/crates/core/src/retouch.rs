//! Prompt-driven retouching: match a text instruction against LUT
//! descriptions and stack the winning LUT onto the current grade.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::cube::parse_cube;
use crate::error::{Error, Result};
use crate::frame::VideoClip;
use crate::looks::LOOKS;
use crate::lut::{apply_lut_clip, compose_luts, Lut3D, MODEL_SIZE};

pub const DESCRIPTIONS_FILE: &str = "descriptions.toml";
pub const DEFAULT_LOW_CONFIDENCE: f64 = 0.15;

/// Lowercase, drop punctuation, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .chars()
        .map(|c| {
            if c.is_alphanumeric() || c.is_whitespace() {
                c
            } else {
                ' '
            }
        })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

/// Maps text to an L2-normalised vector. Implementations are fitted to a
/// catalog's descriptions before use.
pub trait TextEmbedder: Send + Sync + std::fmt::Debug {
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

/// Term frequency times smoothed inverse document frequency,
/// `idf(t) = ln((1 + N) / (1 + df(t))) + 1`, over a fixed vocabulary.
#[derive(Debug, Clone)]
pub struct TfIdf {
    vocab: HashMap<String, usize>,
    idf: Vec<f64>,
}

impl TfIdf {
    pub fn fit<S: AsRef<str>>(docs: &[S]) -> Self {
        let mut vocab: HashMap<String, usize> = HashMap::new();
        let mut df: Vec<usize> = Vec::new();
        for doc in docs {
            let mut tokens = tokenize(doc.as_ref());
            tokens.sort();
            tokens.dedup();
            for t in tokens {
                let next = vocab.len();
                let id = *vocab.entry(t).or_insert(next);
                if id == df.len() {
                    df.push(0);
                }
                df[id] += 1;
            }
        }
        let n = docs.len() as f64;
        let idf = df.iter().map(|&d| ((1.0 + n) / (1.0 + d as f64)).ln() + 1.0).collect();
        TfIdf { vocab, idf }
    }

    pub fn vocab_len(&self) -> usize {
        self.idf.len()
    }

    pub fn idf(&self, term: &str) -> Option<f64> {
        self.vocab.get(term).map(|&i| self.idf[i])
    }
}

impl TextEmbedder for TfIdf {
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.idf.len()];
        for t in tokenize(text) {
            if let Some(&i) = self.vocab.get(&t) {
                v[i] += self.idf[i];
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::UnmatchablePrompt(if text.trim().is_empty() {
                "empty prompt".into()
            } else {
                format!("no known words in {text:?}")
            }));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(v)
    }
}

#[derive(Debug, Clone)]
pub struct LutCatalogEntry {
    pub name: String,
    pub lut: Lut3D,
    pub description: String,
    pub embedding: Vec<f64>,
}

#[derive(Debug)]
pub struct LutCatalog {
    entries: Vec<LutCatalogEntry>,
    embedder: Box<dyn TextEmbedder>,
    low_confidence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct PromptMatch {
    pub name: String,
    pub index: usize,
    pub similarity: f64,
    pub runner_up: Option<(String, f64)>,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DescriptionRecord {
    pub name: String,
    pub description: String,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DescriptionFile {
    #[serde(default)]
    pub lut: Vec<DescriptionRecord>,
}

pub fn read_descriptions(path: &Path) -> Result<Vec<DescriptionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: DescriptionFile = toml::from_str(&text).map_err(|e| Error::io(path, e))?;
    Ok(file.lut)
}

pub fn write_descriptions(records: &[DescriptionRecord], path: &Path) -> Result<()> {
    let file = DescriptionFile { lut: records.to_vec() };
    let text = toml::to_string(&file).map_err(|e| Error::io(path, e))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

impl LutCatalog {
    /// Builds a TF-IDF catalog over `(name, lut, description)` items.
    pub fn new(items: Vec<(String, Lut3D, String)>) -> Result<Self> {
        let descriptions: Vec<&str> = items.iter().map(|(_, _, d)| d.as_str()).collect();
        let embedder = TfIdf::fit(&descriptions);
        Self::with_embedder(items, Box::new(embedder))
    }

    pub fn with_embedder(items: Vec<(String, Lut3D, String)>, embedder: Box<dyn TextEmbedder>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidCatalog("retouch catalog is empty".into()));
        }
        let mut entries = Vec::with_capacity(items.len());
        for (name, lut, description) in items {
            if description.trim().is_empty() {
                return Err(Error::InvalidCatalog(format!("{name} has an empty description")));
            }
            if entries.iter().any(|e: &LutCatalogEntry| e.name == name) {
                return Err(Error::InvalidCatalog(format!("duplicate entry {name:?}")));
            }
            let embedding = embedder
                .embed(&description)
                .map_err(|_| Error::InvalidCatalog(format!("description of {name} has no usable words")))?;
            entries.push(LutCatalogEntry {
                name,
                lut,
                description,
                embedding,
            });
        }
        Ok(LutCatalog {
            entries,
            embedder,
            low_confidence: DEFAULT_LOW_CONFIDENCE,
        })
    }

    /// The built-in looks sampled at `size`.
    pub fn bundled(size: usize) -> Result<Self> {
        let items = LOOKS
            .iter()
            .map(|l| Ok((l.name.to_string(), l.lut(size)?, l.description.to_string())))
            .collect::<Result<Vec<_>>>()?;
        Self::new(items)
    }

    /// Reads `descriptions.toml` and the `.cube` file named by each record,
    /// resampling every LUT onto a `size` lattice.
    pub fn load_dir(dir: &Path, size: usize) -> Result<Self> {
        let records = read_descriptions(&dir.join(DESCRIPTIONS_FILE))?;
        let mut items = Vec::with_capacity(records.len());
        for r in records {
            let path = dir.join(format!("{}.cube", r.name));
            let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
            let lut = parse_cube(&bytes)
                .map_err(|e| Error::InvalidCatalog(format!("{}: {e}", path.display())))?
                .resampled(size)?;
            items.push((r.name, lut, r.description));
        }
        Self::new(items)
    }

    pub fn with_low_confidence(mut self, threshold: f64) -> Self {
        self.low_confidence = threshold;
        self
    }

    pub fn entries(&self) -> &[LutCatalogEntry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&LutCatalogEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        self.embedder.embed(text)
    }

    pub fn lut_size(&self) -> usize {
        self.entries[0].lut.size()
    }
}

impl Default for LutCatalog {
    fn default() -> Self {
        Self::bundled(MODEL_SIZE).expect("bundled looks are valid")
    }
}

/// Best-described entry for `prompt`; ties keep the earlier entry.
pub fn match_prompt(prompt: &str, catalog: &LutCatalog) -> Result<PromptMatch> {
    let q = catalog.embed(prompt)?;
    let sims: Vec<f64> = catalog
        .entries
        .iter()
        .map(|e| e.embedding.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    let mut best = 0;
    for (i, s) in sims.iter().enumerate() {
        if *s > sims[best] {
            best = i;
        }
    }
    let runner = (0..sims.len())
        .filter(|&i| i != best)
        .fold(None, |acc: Option<usize>, i| match acc {
            Some(j) if sims[j] >= sims[i] => Some(j),
            _ => Some(i),
        });
    let similarity = sims[best].clamp(0.0, 1.0);
    Ok(PromptMatch {
        name: catalog.entries[best].name.clone(),
        index: best,
        similarity,
        runner_up: runner.map(|j| (catalog.entries[j].name.clone(), sims[j].clamp(0.0, 1.0))),
        low_confidence: similarity < catalog.low_confidence,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FeedbackRecord {
    pub prompt: String,
    #[serde(rename = "match")]
    pub matched: PromptMatch,
    pub timestamp: u64,
}

/// An input clip, its initial grade, and the feedback applied since.
#[derive(Debug, Clone)]
pub struct GradingSession {
    original: VideoClip,
    initial: Lut3D,
    stack: Vec<Lut3D>,
    history: Vec<FeedbackRecord>,
    current: Lut3D,
    graded: VideoClip,
}

impl GradingSession {
    pub fn new(original: VideoClip, initial: Lut3D) -> Result<Self> {
        let graded = apply_lut_clip(&initial, &original)?;
        Ok(GradingSession {
            original,
            current: initial.clone(),
            initial,
            stack: Vec::new(),
            history: Vec::new(),
            graded,
        })
    }

    /// Rebuilds a session by replaying recorded feedback against `catalog`.
    pub fn restore(
        original: VideoClip,
        initial: Lut3D,
        history: Vec<FeedbackRecord>,
        catalog: &LutCatalog,
    ) -> Result<Self> {
        let mut current = initial.clone();
        let mut stack = Vec::with_capacity(history.len());
        for rec in &history {
            let entry = catalog.get(&rec.matched.name).ok_or_else(|| {
                Error::InvalidCatalog(format!("history refers to unknown entry {:?}", rec.matched.name))
            })?;
            current = compose_luts(&current, &entry.lut)?;
            stack.push(entry.lut.clone());
        }
        let graded = apply_lut_clip(&current, &original)?;
        Ok(GradingSession {
            original,
            initial,
            stack,
            history,
            current,
            graded,
        })
    }

    pub fn original(&self) -> &VideoClip {
        &self.original
    }

    pub fn initial_lut(&self) -> &Lut3D {
        &self.initial
    }

    pub fn current_lut(&self) -> &Lut3D {
        &self.current
    }

    pub fn graded(&self) -> &VideoClip {
        &self.graded
    }

    pub fn history(&self) -> &[FeedbackRecord] {
        &self.history
    }

    /// Matches `prompt`, composes the winner onto the current grade and
    /// regrades from the original frames. On error nothing changes.
    pub fn apply_feedback(&mut self, prompt: &str, catalog: &LutCatalog) -> Result<&FeedbackRecord> {
        let matched = match_prompt(prompt, catalog)?;
        let lut = &catalog.entries()[matched.index].lut;
        let current = compose_luts(&self.current, lut)?;
        let graded = apply_lut_clip(&current, &self.original)?;
        self.stack.push(lut.clone());
        self.current = current;
        self.graded = graded;
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        self.history.push(FeedbackRecord {
            prompt: prompt.to_string(),
            matched,
            timestamp,
        });
        Ok(self.history.last().expect("just pushed"))
    }

    /// Keeps the first `to_index` feedback steps and recomposes from the
    /// initial grade.
    pub fn undo(&mut self, to_index: usize) -> Result<()> {
        if to_index > self.history.len() {
            return Err(Error::invalid(format!(
                "cannot undo to step {to_index}, history has {} entries",
                self.history.len()
            )));
        }
        let mut current = self.initial.clone();
        for lut in &self.stack[..to_index] {
            current = compose_luts(&current, lut)?;
        }
        self.graded = apply_lut_clip(&current, &self.original)?;
        self.current = current;
        self.stack.truncate(to_index);
        self.history.truncate(to_index);
        Ok(())
    }
}
