//! Skipgram word embeddings with negative sampling over running text.
//!
//! The tagger block for an instance is the concatenation of the input
//! vectors of the five words in its lexical window; sentence boundaries
//! contribute zero vectors.

use std::collections::HashMap;
use std::fmt::Write as _;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    decayed_rate, dot, header, log_sigmoid, logistic_term, parse_floats, push_floats, sigmoid, Block, BlockKind, ModelText,
    NegativeSampler, Representation,
};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{Instance, BOS, CENTER_WORD, EOS, LEXICAL};

pub const KIND: &str = "skipgram";

#[derive(Clone, Debug, PartialEq)]
pub struct SkipgramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for SkipgramConfig {
    fn default() -> Self {
        SkipgramConfig {
            dim: 200,
            window: 5,
            negatives: 15,
            epochs: 5,
            learning_rate: 0.025,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WordEmbeddingModel {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    /// Mean per-pair loss of each training epoch.
    pub epoch_losses: Vec<f64>,
    index: HashMap<String, usize>,
    words: Vec<String>,
    vectors: Vec<f64>,
}

/// `-ln σ(c·o) - Σ ln σ(-c·n)` for one center/context pair.
pub fn skipgram_pair_loss(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> f64 {
    -log_sigmoid(dot(center, context)) - negatives.iter().map(|n| log_sigmoid(-dot(center, n))).sum::<f64>()
}

/// Gradients of [`skipgram_pair_loss`] with respect to the center, the
/// context and each negative vector.
pub fn skipgram_pair_gradient(center: &[f64], context: &[f64], negatives: &[&[f64]]) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let gp = sigmoid(dot(center, context)) - 1.0;
    let mut g_center: Vec<f64> = context.iter().map(|c| gp * c).collect();
    let g_context = center.iter().map(|c| gp * c).collect();
    let mut g_neg = Vec::with_capacity(negatives.len());
    for n in negatives {
        let g = sigmoid(dot(center, n));
        g_center.iter_mut().zip(n.iter()).for_each(|(x, y)| *x += g * y);
        g_neg.push(center.iter().map(|c| g * c).collect());
    }
    (g_center, g_context, g_neg)
}

impl WordEmbeddingModel {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn vector(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&r| &self.vectors[r * self.dim..(r + 1) * self.dim])
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m = ModelText::parse(text, &[KIND])?;
        let dim: usize = m.meta_parsed("dim")?;
        if dim == 0 {
            return Err(Error::Format("dim must be positive".into()));
        }
        let mut model = WordEmbeddingModel {
            dim,
            window: m.meta_parsed("window")?,
            negatives: m.meta_parsed("k")?,
            epoch_losses: Vec::new(),
            index: HashMap::new(),
            words: Vec::new(),
            vectors: Vec::new(),
        };
        for rec in &m.records {
            let [t, word, floats] = rec[..] else {
                return Err(Error::Format("expected `template<TAB>word<TAB>values`".into()));
            };
            if t != CENTER_WORD.to_string() {
                return Err(Error::Format(format!("unexpected template `{t}`")));
            }
            if model.index.insert(word.to_string(), model.words.len()).is_some() {
                return Err(Error::Format(format!("duplicate word `{word}`")));
            }
            model.words.push(word.to_string());
            model.vectors.extend(parse_floats(floats, dim)?);
        }
        Ok(model)
    }
}

impl Representation for WordEmbeddingModel {
    fn name(&self) -> &str {
        KIND
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Dense
    }

    fn dim(&self) -> usize {
        LEXICAL.len() * self.dim
    }

    fn block(&self, instance: &Instance) -> Result<Block> {
        let mut out = Vec::with_capacity(self.dim());
        for t in LEXICAL {
            let w = &instance.values[t];
            if w == BOS || w == EOS {
                out.extend(std::iter::repeat_n(0.0, self.dim));
            } else {
                let v = self.vector(w).ok_or_else(|| Error::MissingFeature(instance.feature(t)))?;
                out.extend_from_slice(v);
            }
        }
        Ok(Block::Dense(out))
    }

    fn to_text(&self) -> String {
        let mut out = header(KIND);
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "window {}", self.window);
        let _ = writeln!(out, "k {}", self.negatives);
        for (r, w) in self.words.iter().enumerate() {
            let _ = write!(out, "{CENTER_WORD}\t{w}\t");
            push_floats(&mut out, &self.vectors[r * self.dim..(r + 1) * self.dim]);
            out.push('\n');
        }
        out
    }
}

pub fn train_word_embeddings(corpora: &[&Corpus], config: &SkipgramConfig) -> Result<WordEmbeddingModel> {
    if config.dim == 0 || config.epochs == 0 || config.window == 0 {
        return Err(Error::InvalidArgument("dim, window and epochs must be positive".into()));
    }
    let mut index = HashMap::new();
    let mut words = Vec::new();
    let mut counts = Vec::new();
    let mut sentences: Vec<Vec<u32>> = Vec::new();
    for corpus in corpora {
        for s in corpus.sentences() {
            sentences.push(
                s.forms()
                    .map(|w| {
                        let id = *index.entry(w.to_string()).or_insert_with(|| {
                            words.push(w.to_string());
                            counts.push(0u64);
                            words.len() - 1
                        });
                        counts[id] += 1;
                        id as u32
                    })
                    .collect(),
            );
        }
    }
    if words.is_empty() {
        return Err(Error::Empty("no tokens to train word embeddings on".into()));
    }
    let dim = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let r = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..words.len() * dim).map(|_| rng.random_range(-r..r)).collect();
    let mut output: Vec<f64> = (0..words.len() * dim).map(|_| rng.random_range(-r..r)).collect();
    let sampler = NegativeSampler::new(&[counts])?;
    let tokens: usize = sentences.iter().map(Vec::len).sum();
    let total_steps = (tokens * config.epochs) as u64;
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..sentences.len()).collect();
    let mut grad = vec![0.0; dim];
    let mut epoch_losses = Vec::new();
    info!("training skipgram on {tokens} tokens, {} types, dim {dim}", words.len());
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut loss = 0.0;
        let mut pairs = 0usize;
        for &si in &order {
            let s = &sentences[si];
            for i in 0..s.len() {
                let lr = decayed_rate(config.learning_rate, step, total_steps);
                step += 1;
                let c = s[i] as usize;
                let lo = i.saturating_sub(config.window);
                let hi = (i + config.window + 1).min(s.len());
                for (j, &ctx) in s.iter().enumerate().take(hi).skip(lo) {
                    if j == i {
                        continue;
                    }
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    for n in 0..=config.negatives {
                        let (row, label) = if n == 0 {
                            (ctx as usize, 1.0)
                        } else {
                            (sampler.sample(0, &mut rng) as usize, 0.0)
                        };
                        let u = &input[c * dim..(c + 1) * dim];
                        let o = &mut output[row * dim..(row + 1) * dim];
                        let sc = dot(u, o);
                        let (g, l) = logistic_term(sc, label == 1.0);
                        loss += l;
                        let step = lr * g;
                        for ((gd, od), ud) in grad.iter_mut().zip(o.iter_mut()).zip(u) {
                            *gd += g * *od;
                            *od -= step * ud;
                        }
                    }
                    input[c * dim..(c + 1) * dim]
                        .iter_mut()
                        .zip(&grad)
                        .for_each(|(x, g)| *x -= lr * g);
                    pairs += 1;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::Diverged(format!("non-finite skipgram loss in epoch {}", epoch + 1)));
        }
        let mean = if pairs == 0 { 0.0 } else { loss / pairs as f64 };
        debug!("epoch {} mean pair loss {mean:.6}", epoch + 1);
        epoch_losses.push(mean);
    }
    Ok(WordEmbeddingModel {
        dim,
        window: config.window,
        negatives: config.negatives,
        epoch_losses,
        index,
        words,
        vectors: input,
    })
}
