//! Feature embeddings trained by predicting, for every embedded template,
//! the active features of all other embedded templates with negative
//! sampling.
//!
//! With attribute tables `H^(0..=M)`, the input vector of a feature is the
//! sum of the rows of every table whose attribute the document carries.
//! `H^(0)` is shared by all documents and is the only table used when
//! producing instance vectors, so lookups ignore the document's attributes.

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
use crate::corpus::{AttributeSpace, Corpus};
use crate::error::{Error, Result};
use crate::features::{extract_sentence, FeatureVocabulary, Instance, EMBEDDED_COUNT};

pub const KIND: &str = "fema";
pub const KIND_ATTR: &str = "fema-attr";

#[derive(Clone, Debug, PartialEq)]
pub struct FemaConfig {
    pub dim: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub lambda_attr: f64,
    pub seed: u64,
}

impl Default for FemaConfig {
    fn default() -> Self {
        FemaConfig {
            dim: 100,
            negatives: 15,
            epochs: 5,
            learning_rate: 0.025,
            lambda_attr: 0.1,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct FeatureEmbeddingModel {
    pub dim: usize,
    pub negatives: usize,
    pub lambda_attr: f64,
    pub space: AttributeSpace,
    /// Mean per-instance loss of each training epoch.
    pub epoch_losses: Vec<f64>,
    vocab: FeatureVocabulary,
    rows: usize,
    /// `h[m]` is table `H^(m)`, `rows × dim` row-major.
    h: Vec<Vec<f64>>,
    v: Vec<f64>,
}

/// Negative rows for every ordered template pair `(t, t')`, `t ≠ t'`.
#[derive(Clone, Debug, PartialEq)]
pub struct Negatives {
    pub k: usize,
    rows: Vec<usize>,
}

impl Negatives {
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize, usize) -> usize) -> Self {
        let t = EMBEDDED_COUNT;
        let mut rows = vec![0; t * t * k];
        for a in 0..t {
            for b in 0..t {
                if a != b {
                    for j in 0..k {
                        rows[(a * t + b) * k + j] = f(a, b, j);
                    }
                }
            }
        }
        Negatives { k, rows }
    }

    /// Rows of the `k` negatives drawn for input template `t`, context `t2`.
    pub fn get(&self, t: usize, t2: usize) -> &[usize] {
        let i = (t * EMBEDDED_COUNT + t2) * self.k;
        &self.rows[i..i + self.k]
    }
}

/// Gradient of [`fema_loss`] with the same layout as the model tables.
#[derive(Clone, Debug)]
pub struct FemaGradient {
    pub h: Vec<Vec<f64>>,
    pub v: Vec<f64>,
}

impl FeatureEmbeddingModel {
    pub fn zeros(vocab: &FeatureVocabulary, space: &AttributeSpace, dim: usize, negatives: usize, lambda_attr: f64) -> Self {
        let rows = vocab.offset(EMBEDDED_COUNT);
        FeatureEmbeddingModel {
            dim,
            negatives,
            lambda_attr,
            space: space.clone(),
            epoch_losses: Vec::new(),
            vocab: vocab.clone(),
            rows,
            h: vec![vec![0.0; rows * dim]; space.len()],
            v: vec![0.0; rows * dim],
        }
    }

    /// Every parameter uniform in `(-0.5/dim, 0.5/dim)`.
    pub fn random(
        vocab: &FeatureVocabulary,
        space: &AttributeSpace,
        dim: usize,
        negatives: usize,
        lambda_attr: f64,
        seed: u64,
    ) -> Self {
        let mut m = Self::zeros(vocab, space, dim, negatives, lambda_attr);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = 0.5 / dim as f64;
        for table in m.h.iter_mut().chain(std::iter::once(&mut m.v)) {
            table.iter_mut().for_each(|x| *x = rng.random_range(-r..r));
        }
        m
    }

    pub fn templates(&self) -> usize {
        EMBEDDED_COUNT
    }

    /// Number of attribute tables, M + 1.
    pub fn tables(&self) -> usize {
        self.h.len()
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn vocabulary(&self) -> &FeatureVocabulary {
        &self.vocab
    }

    pub fn is_attribute_mode(&self) -> bool {
        self.h.len() > 1
    }

    /// Global row of feature `value` in template `t`.
    pub fn row(&self, t: usize, value: &str) -> Option<usize> {
        self.vocab.global_id(t, value).map(|g| g as usize)
    }

    pub fn h(&self, m: usize) -> &[f64] {
        &self.h[m]
    }

    pub fn h_mut(&mut self, m: usize) -> &mut [f64] {
        &mut self.h[m]
    }

    pub fn v(&self) -> &[f64] {
        &self.v
    }

    pub fn v_mut(&mut self) -> &mut [f64] {
        &mut self.v
    }

    pub fn h_row(&self, m: usize, row: usize) -> &[f64] {
        &self.h[m][row * self.dim..(row + 1) * self.dim]
    }

    pub fn v_row(&self, row: usize) -> &[f64] {
        &self.v[row * self.dim..(row + 1) * self.dim]
    }

    /// Rows of the instance's embedded features.
    pub fn encode(&self, instance: &Instance) -> Result<[usize; EMBEDDED_COUNT]> {
        let mut rows = [0; EMBEDDED_COUNT];
        for (t, r) in rows.iter_mut().enumerate() {
            *r = self
                .row(t, &instance.values[t])
                .ok_or_else(|| Error::MissingFeature(instance.feature(t)))?;
        }
        Ok(rows)
    }

    fn active_tables(&self, z: &[bool]) -> Result<Vec<usize>> {
        if z.len() != self.h.len() {
            return Err(Error::LengthMismatch {
                expected: self.h.len(),
                actual: z.len(),
            });
        }
        Ok((0..z.len()).filter(|&m| z[m]).collect())
    }

    /// Input vector `a = Σ_m z_m h^(m)` for a row.
    fn input(&self, active: &[usize], row: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for &m in active {
            for (o, x) in out.iter_mut().zip(self.h_row(m, row)) {
                *o += x;
            }
        }
    }

    /// Draws `k` negatives per ordered template pair.
    pub fn sample_negatives<R: Rng + ?Sized>(&self, sampler: &NegativeSampler, rng: &mut R) -> Negatives {
        Negatives::from_fn(self.negatives, |_, t2, _| {
            self.vocab.offset(t2) + sampler.sample(t2, rng) as usize
        })
    }

    /// Mean L2 norm over all rows of the attribute tables `H^(1..=M)`.
    pub fn mean_attribute_row_norm(&self) -> f64 {
        let mut total = 0.0;
        let mut n = 0usize;
        for m in 1..self.h.len() {
            for r in 0..self.rows {
                total += dot(self.h_row(m, r), self.h_row(m, r)).sqrt();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            total / n as f64
        }
    }

    pub fn is_finite(&self) -> bool {
        self.h.iter().flatten().chain(&self.v).all(|x| x.is_finite())
    }

    /// Lookup-only copy of the shared table.
    pub fn embeddings(&self) -> FemaEmbeddings {
        let mut index = vec![HashMap::new(); EMBEDDED_COUNT];
        for (t, map) in index.iter_mut().enumerate() {
            for id in 0..self.vocab.size(t) as u32 {
                map.insert(self.vocab.value(t, id).to_string(), self.vocab.offset(t) + id as usize);
            }
        }
        FemaEmbeddings {
            name: if self.is_attribute_mode() { KIND_ATTR } else { KIND }.to_string(),
            dim: self.dim,
            attributes: (0..self.space.len()).map(|m| self.space.name(m)).collect(),
            index,
            table: self.h[0].clone(),
        }
    }
}

/// Per-instance loss, including the attribute penalty on the rows the
/// instance touches.
pub fn fema_loss(model: &FeatureEmbeddingModel, instance: &Instance, negatives: &Negatives) -> Result<f64> {
    let rows = model.encode(instance)?;
    let active = model.active_tables(&instance.attribute_z)?;
    let t_count = EMBEDDED_COUNT;
    let mut a = vec![0.0; model.dim];
    let mut total = 0.0;
    for t in 0..t_count {
        model.input(&active, rows[t], &mut a);
        for t2 in 0..t_count {
            if t2 == t {
                continue;
            }
            total += log_sigmoid(dot(&a, model.v_row(rows[t2])));
            for &n in negatives.get(t, t2) {
                total += log_sigmoid(-dot(&a, model.v_row(n)));
            }
        }
    }
    let mut penalty = 0.0;
    for &m in active.iter().filter(|&&m| m > 0) {
        for &r in &rows {
            penalty += dot(model.h_row(m, r), model.h_row(m, r));
        }
    }
    Ok(-total / t_count as f64 + model.lambda_attr * penalty)
}

pub fn fema_gradient(model: &FeatureEmbeddingModel, instance: &Instance, negatives: &Negatives) -> Result<FemaGradient> {
    let rows = model.encode(instance)?;
    let active = model.active_tables(&instance.attribute_z)?;
    let dim = model.dim;
    let t_count = EMBEDDED_COUNT;
    let scale = 1.0 / t_count as f64;
    let mut grad = FemaGradient {
        h: vec![vec![0.0; model.rows * dim]; model.h.len()],
        v: vec![0.0; model.rows * dim],
    };
    let mut a = vec![0.0; dim];
    let mut ga = vec![0.0; dim];
    for t in 0..t_count {
        model.input(&active, rows[t], &mut a);
        ga.iter_mut().for_each(|x| *x = 0.0);
        for t2 in 0..t_count {
            if t2 == t {
                continue;
            }
            let targets = std::iter::once((rows[t2], 1.0)).chain(negatives.get(t, t2).iter().map(|&n| (n, 0.0)));
            for (row, label) in targets {
                let vr = model.v_row(row);
                let g = (sigmoid(dot(&a, vr)) - label) * scale;
                for d in 0..dim {
                    ga[d] += g * vr[d];
                    grad.v[row * dim + d] += g * a[d];
                }
            }
        }
        for &m in &active {
            let r = rows[t];
            for d in 0..dim {
                grad.h[m][r * dim + d] += ga[d];
            }
        }
    }
    for &m in active.iter().filter(|&&m| m > 0) {
        for &r in &rows {
            for d in 0..dim {
                grad.h[m][r * dim + d] += 2.0 * model.lambda_attr * model.h[m][r * dim + d];
            }
        }
    }
    Ok(grad)
}

/// The instance's shared-table rows, concatenated.
pub fn fema_vector(model: &FeatureEmbeddingModel, instance: &Instance) -> Result<Vec<f64>> {
    let rows = model.encode(instance)?;
    let mut out = Vec::with_capacity(EMBEDDED_COUNT * model.dim);
    for r in rows {
        out.extend_from_slice(model.h_row(0, r));
    }
    Ok(out)
}

struct Encoded {
    rows: [u32; EMBEDDED_COUNT],
    active: Vec<u16>,
}

/// Trains on every token of `corpora`. With a shared-only attribute space
/// this is the single-embedding model.
pub fn train_fema(
    corpora: &[&Corpus],
    vocab: &FeatureVocabulary,
    space: &AttributeSpace,
    config: &FemaConfig,
) -> Result<FeatureEmbeddingModel> {
    if config.dim == 0 || config.epochs == 0 {
        return Err(Error::InvalidArgument("dim and epochs must be positive".into()));
    }
    if !(config.lambda_attr >= 0.0 && config.learning_rate > 0.0) {
        return Err(Error::InvalidArgument("learning rate must be positive and lambda non-negative".into()));
    }
    let mut model = FeatureEmbeddingModel::random(vocab, space, config.dim, config.negatives, config.lambda_attr, config.seed);
    let mut data = Vec::new();
    for corpus in corpora {
        for (doc, sentence) in corpus.sentences_with_docs() {
            let z = space.indicator(doc);
            let active: Vec<u16> = (0..z.len()).filter(|&m| z[m]).map(|m| m as u16).collect();
            for inst in extract_sentence(sentence, &z) {
                let rows = model.encode(&inst)?;
                data.push(Encoded {
                    rows: rows.map(|r| r as u32),
                    active: active.clone(),
                });
            }
        }
    }
    if data.is_empty() {
        return Err(Error::Empty("no tokens to train feature embeddings on".into()));
    }
    let counts: Vec<&[u64]> = (0..EMBEDDED_COUNT).map(|t| vocab.counts(t)).collect();
    let sampler = NegativeSampler::new(&counts)?;
    let offsets: Vec<usize> = (0..EMBEDDED_COUNT).map(|t| vocab.offset(t)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x9e37_79b9));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let total_steps = (data.len() * config.epochs) as u64;
    let mut step = 0u64;
    let dim = config.dim;
    let mut a = vec![0.0; dim];
    let mut ga = vec![0.0; dim];
    info!(
        "training {} on {} instances, {} tables, dim {dim}",
        if model.is_attribute_mode() { KIND_ATTR } else { KIND },
        data.len(),
        model.tables()
    );
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for &i in &order {
            let lr = decayed_rate(config.learning_rate, step, total_steps);
            step += 1;
            let inst = &data[i];
            let shrink = 1.0 / (1.0 + 2.0 * lr * config.lambda_attr);
            let mut loss = 0.0;
            let mut penalty = 0.0;
            for t in 0..EMBEDDED_COUNT {
                let r = inst.rows[t] as usize;
                a.iter_mut().for_each(|x| *x = 0.0);
                for &m in &inst.active {
                    let h = &model.h[m as usize][r * dim..(r + 1) * dim];
                    a.iter_mut().zip(h).for_each(|(x, y)| *x += y);
                }
                ga.iter_mut().for_each(|x| *x = 0.0);
                for t2 in 0..EMBEDDED_COUNT {
                    if t2 == t {
                        continue;
                    }
                    for j in 0..=config.negatives {
                        let (row, label) = if j == 0 {
                            (inst.rows[t2] as usize, 1.0)
                        } else {
                            (offsets[t2] + sampler.sample(t2, &mut rng) as usize, 0.0)
                        };
                        let v = &mut model.v[row * dim..(row + 1) * dim];
                        let s = dot(&a, v);
                        let (g, l) = logistic_term(s, label == 1.0);
                        loss += l;
                        let step = lr * g;
                        for ((gd, vd), ad) in ga.iter_mut().zip(v.iter_mut()).zip(&a) {
                            *gd += g * *vd;
                            *vd -= step * ad;
                        }
                    }
                }
                for &m in &inst.active {
                    let h = &mut model.h[m as usize][r * dim..(r + 1) * dim];
                    if m == 0 {
                        h.iter_mut().zip(&ga).for_each(|(x, g)| *x -= lr * g);
                    } else {
                        penalty += dot(h, h);
                        h.iter_mut().zip(&ga).for_each(|(x, g)| *x = (*x - lr * g) * shrink);
                    }
                }
            }
            let inst_loss = loss / EMBEDDED_COUNT as f64 + config.lambda_attr * penalty;
            if !inst_loss.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite feature-embedding loss in epoch {} (learning rate {lr})",
                    epoch + 1
                )));
            }
            epoch_loss += inst_loss;
        }
        let mean = epoch_loss / data.len() as f64;
        debug!("epoch {} mean loss {mean:.6}", epoch + 1);
        model.epoch_losses.push(mean);
    }
    if !model.is_finite() {
        return Err(Error::Diverged("non-finite feature-embedding parameters".into()));
    }
    Ok(model)
}

/// Shared-table feature embeddings used as a dense tagger block.
#[derive(Clone, Debug, PartialEq)]
pub struct FemaEmbeddings {
    name: String,
    pub dim: usize,
    pub attributes: Vec<String>,
    index: Vec<HashMap<String, usize>>,
    table: Vec<f64>,
}

impl FemaEmbeddings {
    pub fn row(&self, t: usize, value: &str) -> Option<&[f64]> {
        self.index[t]
            .get(value)
            .map(|&r| &self.table[r * self.dim..(r + 1) * self.dim])
    }

    pub fn vector(&self, instance: &Instance) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(EMBEDDED_COUNT * self.dim);
        for t in 0..EMBEDDED_COUNT {
            let row = self
                .row(t, &instance.values[t])
                .ok_or_else(|| Error::MissingFeature(instance.feature(t)))?;
            out.extend_from_slice(row);
        }
        Ok(out)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m = ModelText::parse(text, &[KIND, KIND_ATTR])?;
        let dim: usize = m.meta_parsed("dim")?;
        let templates: usize = m.meta_parsed("templates")?;
        if templates != EMBEDDED_COUNT || dim == 0 {
            return Err(Error::Format(format!("unsupported shape: {templates} templates, dim {dim}")));
        }
        let attributes = m.meta("attributes")?.split(' ').map(str::to_string).collect();
        let mut index = vec![HashMap::new(); EMBEDDED_COUNT];
        let mut table = Vec::with_capacity(m.records.len() * dim);
        for rec in &m.records {
            let [t, feature, floats] = rec[..] else {
                return Err(Error::Format("expected `template<TAB>feature<TAB>values`".into()));
            };
            let t: usize = t
                .parse()
                .ok()
                .filter(|&t| t < EMBEDDED_COUNT)
                .ok_or_else(|| Error::Format(format!("bad template index `{t}`")))?;
            let row = table.len() / dim;
            if index[t].insert(feature.to_string(), row).is_some() {
                return Err(Error::Format(format!("duplicate feature `{feature}`")));
            }
            table.extend(parse_floats(floats, dim)?);
        }
        Ok(FemaEmbeddings {
            name: m.kind,
            dim,
            attributes,
            index,
            table,
        })
    }
}

impl Representation for FemaEmbeddings {
    fn name(&self) -> &str {
        &self.name
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Dense
    }

    fn dim(&self) -> usize {
        EMBEDDED_COUNT * self.dim
    }

    fn block(&self, instance: &Instance) -> Result<Block> {
        self.vector(instance).map(Block::Dense)
    }

    fn to_text(&self) -> String {
        let mut out = header(&self.name);
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "templates {EMBEDDED_COUNT}");
        let _ = writeln!(out, "attributes {}", self.attributes.join(" "));
        for (t, map) in self.index.iter().enumerate() {
            let mut entries: Vec<(&String, &usize)> = map.iter().collect();
            entries.sort_by_key(|(_, &r)| r);
            for (feature, &r) in entries {
                let _ = write!(out, "{t}\t{feature}\t");
                push_floats(&mut out, &self.table[r * self.dim..(r + 1) * self.dim]);
                out.push('\n');
            }
        }
        out
    }
}
