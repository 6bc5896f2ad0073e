//! Unsupervised representation learners and their on-disk formats.
//!
//! Every trained model implements [`Representation`], which turns an
//! [`Instance`] into either a dense block or a set of sparse feature ids
//! for the hybrid tagger input.
//!
//! Model files start with `HISTADAPT <kind> v1`, followed by `key value`
//! metadata lines and then tab-separated records. Metadata lines never
//! contain a tab; record lines always do.

pub mod brown;
pub mod fema;
mod sampler;
pub mod scl;
pub mod skipgram;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Instance;

pub use brown::{train_brown, BrownConfig, BrownModel, BrownTrace, MergeStep};
pub use fema::{
    fema_gradient, fema_loss, fema_vector, train_fema, FemaConfig, FemaEmbeddings, FemaGradient, FeatureEmbeddingModel,
    Negatives,
};
pub use sampler::NegativeSampler;
pub use scl::{select_pivots, train_scl, SclConfig, SclModel};
pub use skipgram::{skipgram_pair_gradient, skipgram_pair_loss, train_word_embeddings, SkipgramConfig, WordEmbeddingModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    Dense,
    Sparse,
}

/// What a representation contributes for one instance.
#[derive(Clone, Debug, PartialEq)]
pub enum Block {
    Dense(Vec<f64>),
    /// Local feature ids in `0..dim`.
    Sparse(Vec<u32>),
}

pub trait Representation: Send + Sync {
    fn name(&self) -> &str;

    fn kind(&self) -> BlockKind;

    /// Dense block length, or the size of the sparse id space.
    fn dim(&self) -> usize;

    fn block(&self, instance: &Instance) -> Result<Block>;

    /// Model file contents.
    fn to_text(&self) -> String;

    fn is_sparse(&self) -> bool {
        self.kind() == BlockKind::Sparse
    }
}

/// Reads any model file, dispatching on its header.
pub fn load_representation(path: impl AsRef<Path>) -> Result<Box<dyn Representation>> {
    let text = fs::read_to_string(path)?;
    parse_representation(&text)
}

pub fn parse_representation(text: &str) -> Result<Box<dyn Representation>> {
    let kind = ModelText::peek_kind(text)?;
    Ok(match kind.as_str() {
        fema::KIND | fema::KIND_ATTR => Box::new(FemaEmbeddings::parse(text)?),
        scl::KIND => Box::new(SclModel::parse(text)?),
        brown::KIND => Box::new(BrownModel::parse(text)?),
        skipgram::KIND => Box::new(WordEmbeddingModel::parse(text)?),
        other => return Err(Error::Format(format!("unknown model kind `{other}`"))),
    })
}

/// A parsed model file.
#[derive(Debug, Default)]
pub(crate) struct ModelText<'a> {
    pub kind: String,
    pub meta: Vec<(&'a str, &'a str)>,
    pub records: Vec<Vec<&'a str>>,
}

impl<'a> ModelText<'a> {
    pub fn peek_kind(text: &str) -> Result<String> {
        let first = text.lines().next().unwrap_or("");
        let mut parts = first.split(' ');
        match (parts.next(), parts.next(), parts.next(), parts.next()) {
            (Some("HISTADAPT"), Some(kind), Some("v1"), None) => Ok(kind.to_string()),
            _ => Err(Error::Format(format!("bad header line `{first}`"))),
        }
    }

    pub fn parse(text: &'a str, expected: &[&str]) -> Result<Self> {
        let kind = Self::peek_kind(text)?;
        if !expected.contains(&kind.as_str()) {
            return Err(Error::Format(format!("expected a {} model, found `{kind}`", expected.join("/"))));
        }
        let mut out = ModelText {
            kind,
            ..Default::default()
        };
        for line in text.lines().skip(1) {
            if line.is_empty() {
                continue;
            }
            if line.contains('\t') {
                out.records.push(line.split('\t').collect());
            } else {
                if !out.records.is_empty() {
                    return Err(Error::Format(format!("metadata line after records: `{line}`")));
                }
                let (k, v) = line.split_once(' ').unwrap_or((line, ""));
                out.meta.push((k, v));
            }
        }
        Ok(out)
    }

    pub fn meta(&self, key: &str) -> Result<&'a str> {
        self.meta
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| Error::Format(format!("missing `{key}` line")))
    }

    pub fn meta_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.meta(key)?;
        v.parse()
            .map_err(|_| Error::Format(format!("bad value `{v}` for `{key}`")))
    }
}

pub(crate) fn header(kind: &str) -> String {
    format!("HISTADAPT {kind} v1\n")
}

pub(crate) fn push_floats(out: &mut String, values: &[f64]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        // Shortest representation that round-trips.
        let _ = write!(out, "{v:?}");
    }
}

pub(crate) fn parse_floats(field: &str, expected: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = field
        .split(' ')
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| Error::Format(format!("bad float `{s}`"))))
        .collect::<Result<_>>()?;
    if values.len() != expected {
        return Err(Error::Format(format!("expected {expected} values, found {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("non-finite value".into()));
    }
    Ok(values)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `ln σ(x)` without overflow for large |x|.
#[inline]
pub(crate) fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Gradient scale `σ(s) - label` and loss term for one logistic
/// prediction, sharing a single `exp`.
#[inline]
pub(crate) fn logistic_term(s: f64, positive: bool) -> (f64, f64) {
    let e = (-s.abs()).exp();
    let l = e.ln_1p();
    let p = if s >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    if positive {
        (p - 1.0, if s >= 0.0 { l } else { l - s })
    } else {
        (p, if s >= 0.0 { l + s } else { l })
    }
}

/// Dot product with four running sums so the loop vectorizes.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Linear decay from `lr0` to 5% of it over `total` steps.
#[inline]
pub(crate) fn decayed_rate(lr0: f64, step: u64, total: u64) -> f64 {
    let frac = if total == 0 { 0.0 } else { step as f64 / total as f64 };
    lr0 * (1.0 - 0.95 * frac.min(1.0))
}
