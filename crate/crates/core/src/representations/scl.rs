//! Structural correspondence learning.
//!
//! Features frequent in every domain become pivots. For each pivot a
//! logistic predictor learns to detect the pivot from the remaining
//! (non-pivot) features of a token position; the stacked predictor
//! weights `W` (D × P) are reduced to their top-K left singular vectors
//! `theta` (K × D), and instances are projected through `theta`.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use log::{info, warn};
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{decayed_rate, header, parse_floats, push_floats, sigmoid, Block, BlockKind, ModelText, Representation};
use crate::corpus::{Corpus, CORPUS_ATTRIBUTE};
use crate::error::{Error, Result};
use crate::features::{template_values, FeatureVocabulary, Instance, TEMPLATE_COUNT};

pub const KIND: &str = "scl";

#[derive(Clone, Debug, PartialEq)]
pub struct SclConfig {
    /// A pivot must occur strictly more often than this in every domain.
    pub pivot_min_count: u64,
    pub k: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub alpha: f64,
    /// Document attribute that names the domain.
    pub domain_attribute: String,
    /// Extra subspace iterations of the randomized SVD.
    pub power_iterations: usize,
    pub seed: u64,
}

impl Default for SclConfig {
    fn default() -> Self {
        SclConfig {
            pivot_min_count: 50,
            k: 25,
            epochs: 3,
            learning_rate: 0.1,
            l2: 1e-5,
            alpha: 1.0,
            domain_attribute: CORPUS_ATTRIBUTE.to_string(),
            power_iterations: 2,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SclModel {
    pub k: usize,
    pub alpha: f64,
    /// `(template, value)` of every pivot.
    pub pivots: Vec<(usize, String)>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    columns: Vec<HashMap<String, usize>>,
    /// theta transposed: one K-vector per non-pivot column.
    theta_t: Vec<f64>,
}

/// Ids whose count exceeds `min_count` in every domain.
/// `domain_counts[d][id]` is the count of feature `id` in domain `d`.
pub fn select_pivots(domain_counts: &[Vec<u64>], min_count: u64) -> Vec<usize> {
    let Some(first) = domain_counts.first() else {
        return Vec::new();
    };
    (0..first.len())
        .filter(|&id| domain_counts.iter().all(|c| c.get(id).copied().unwrap_or(0) > min_count))
        .collect()
}

struct Example {
    cols: Vec<u32>,
    pivots: Vec<u32>,
}

pub fn train_scl(corpora: &[&Corpus], vocab: &FeatureVocabulary, config: &SclConfig) -> Result<SclModel> {
    if config.k == 0 {
        return Err(Error::InvalidArgument("K must be positive".into()));
    }
    let mut domains: BTreeMap<String, usize> = BTreeMap::new();
    for c in corpora {
        for d in &c.documents {
            let v = d
                .attribute(&config.domain_attribute)
                .ok_or_else(|| Error::UnknownAttribute(config.domain_attribute.clone()))?;
            let n = domains.len();
            domains.entry(v.to_string()).or_insert(n);
        }
    }
    if domains.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "structural correspondence learning needs at least two domains, found {}",
            domains.len()
        )));
    }
    let total = vocab.total();
    let mut counts = vec![vec![0u64; total]; domains.len()];
    let mut instances: Vec<Vec<u32>> = Vec::new();
    for c in corpora {
        for (doc, sentence) in c.sentences_with_docs() {
            let d = domains[doc.attribute(&config.domain_attribute).unwrap_or_default()];
            for i in 0..sentence.len() {
                let values = template_values(sentence, i)?;
                let ids: Vec<u32> = (0..TEMPLATE_COUNT)
                    .filter_map(|t| vocab.global_id(t, &values[t]))
                    .collect();
                for &g in &ids {
                    counts[d][g as usize] += 1;
                }
                instances.push(ids);
            }
        }
    }
    let pivot_ids = select_pivots(&counts, config.pivot_min_count);
    let p = pivot_ids.len();
    if p < config.k {
        return Err(Error::InvalidArgument(format!(
            "only {p} pivot features pass the threshold, fewer than K = {}",
            config.k
        )));
    }
    let mut pivot_index = vec![u32::MAX; total];
    for (i, &g) in pivot_ids.iter().enumerate() {
        pivot_index[g] = i as u32;
    }
    let mut col_of = vec![u32::MAX; total];
    let mut columns = vec![HashMap::new(); TEMPLATE_COUNT];
    let mut d_cols = 0usize;
    for g in 0..total {
        if pivot_index[g] == u32::MAX {
            let (t, id) = vocab.locate(g as u32);
            columns[t].insert(vocab.value(t, id).to_string(), d_cols);
            col_of[g] = d_cols as u32;
            d_cols += 1;
        }
    }
    if d_cols == 0 {
        return Err(Error::InvalidArgument("every feature is a pivot".into()));
    }
    let examples: Vec<Example> = instances
        .iter()
        .map(|ids| Example {
            cols: ids.iter().map(|&g| col_of[g as usize]).filter(|&c| c != u32::MAX).collect(),
            pivots: ids.iter().map(|&g| pivot_index[g as usize]).filter(|&q| q != u32::MAX).collect(),
        })
        .collect();
    info!(
        "SCL: {} domains, {} instances, {p} pivots, {d_cols} non-pivot features",
        domains.len(),
        examples.len()
    );

    let weights: Vec<Vec<f64>> = (0..p)
        .into_par_iter()
        .map(|q| train_pivot_predictor(&examples, q as u32, d_cols, config))
        .collect();
    let mut w = DMatrix::<f64>::zeros(d_cols, p);
    for (q, col) in weights.iter().enumerate() {
        w.column_mut(q).copy_from_slice(col);
    }
    drop(weights);

    let (u, k) = top_left_singular_vectors(&w, config.k, config.power_iterations, config.seed)?;
    drop(w);
    let mut theta_t = vec![0.0; d_cols * k];
    for c in 0..d_cols {
        for j in 0..k {
            theta_t[c * k + j] = u[(c, j)];
        }
    }
    let mut model = SclModel {
        k,
        alpha: config.alpha,
        pivots: pivot_ids
            .iter()
            .map(|&g| {
                let (t, id) = vocab.locate(g as u32);
                (t, vocab.value(t, id).to_string())
            })
            .collect(),
        mean: vec![0.0; k],
        std: vec![1.0; k],
        columns,
        theta_t,
    };
    let mut sum = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for ex in &examples {
        let y = model.project_columns(ex.cols.iter().map(|&c| c as usize));
        for j in 0..k {
            sum[j] += y[j];
            sq[j] += y[j] * y[j];
        }
    }
    let n = examples.len() as f64;
    for j in 0..k {
        let mean = sum[j] / n;
        let var = (sq[j] / n - mean * mean).max(0.0);
        model.mean[j] = mean;
        model.std[j] = if var > 1e-24 { var.sqrt() } else { 1.0 };
    }
    Ok(model)
}

/// L2-regularized logistic regression for one pivot by SGD, with the
/// weight decay folded into a running scale.
fn train_pivot_predictor(examples: &[Example], pivot: u32, dim: usize, config: &SclConfig) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ (0x5c1u64 << 32) ^ pivot as u64);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut w = vec![0.0; dim];
    let mut scale = 1.0;
    let mut bias = 0.0;
    let total = (examples.len() * config.epochs) as u64;
    let mut step = 0u64;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let ex = &examples[i];
            let lr = decayed_rate(config.learning_rate, step, total);
            step += 1;
            let y = if ex.pivots.contains(&pivot) { 1.0 } else { 0.0 };
            let s = scale * ex.cols.iter().map(|&c| w[c as usize]).sum::<f64>() + bias;
            let g = sigmoid(s) - y;
            scale *= 1.0 - lr * config.l2;
            let step_w = lr * g / scale;
            for &c in &ex.cols {
                w[c as usize] -= step_w;
            }
            bias -= lr * g;
            if scale < 1e-9 {
                w.iter_mut().for_each(|x| *x *= scale);
                scale = 1.0;
            }
        }
    }
    w.iter_mut().for_each(|x| *x *= scale);
    w
}

/// Top-`k` left singular vectors of `w` by a randomized range finder with
/// subspace iterations. Returns fewer columns with a warning when `w` has
/// numerical rank below `k`.
fn top_left_singular_vectors(w: &DMatrix<f64>, k: usize, power_iterations: usize, seed: u64) -> Result<(DMatrix<f64>, usize)> {
    let (rows, cols) = w.shape();
    let l = (k + 10).min(cols).min(rows);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5fd);
    let omega = DMatrix::<f64>::from_fn(cols, l, |_, _| StandardNormal.sample(&mut rng));
    let mut q = (w * omega).qr().q();
    for _ in 0..power_iterations {
        let z = (w.transpose() * &q).qr().q();
        q = (w * z).qr().q();
    }
    let b = q.transpose() * w;
    let svd = b.svd(true, false);
    let ub = svd.u.ok_or_else(|| Error::Diverged("SVD did not converge".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let top = svd.singular_values[order[0]];
    let rank = order
        .iter()
        .take_while(|&&i| top > 0.0 && svd.singular_values[i] > 1e-10 * top)
        .count();
    let k_eff = k.min(rank);
    if k_eff == 0 {
        return Err(Error::Infeasible("pivot predictor matrix is zero".into()));
    }
    if k_eff < k {
        warn!("pivot predictor matrix has rank {rank}; reducing K from {k} to {k_eff}");
    }
    let ub_sorted = DMatrix::from_fn(ub.nrows(), k_eff, |i, j| ub[(i, order[j])]);
    Ok((q * ub_sorted, k_eff))
}

impl SclModel {
    /// Non-pivot feature dimensionality D.
    pub fn input_dim(&self) -> usize {
        self.theta_t.len() / self.k
    }

    pub fn column(&self, t: usize, value: &str) -> Option<usize> {
        self.columns[t].get(value).copied()
    }

    /// Non-pivot columns active in an instance; unseen features are skipped.
    pub fn columns_of(&self, instance: &Instance) -> Vec<usize> {
        (0..TEMPLATE_COUNT)
            .filter_map(|t| self.column(t, &instance.values[t]))
            .collect()
    }

    /// theta as a K × D matrix.
    pub fn theta(&self) -> DMatrix<f64> {
        let d = self.input_dim();
        DMatrix::from_fn(self.k, d, |j, c| self.theta_t[c * self.k + j])
    }

    /// `theta · x` for a binary x given by its active columns.
    pub fn project_columns(&self, cols: impl IntoIterator<Item = usize>) -> Vec<f64> {
        let mut y = vec![0.0; self.k];
        for c in cols {
            let row = &self.theta_t[c * self.k..(c + 1) * self.k];
            y.iter_mut().zip(row).for_each(|(a, b)| *a += b);
        }
        y
    }

    /// `theta · x` for a weighted sparse x.
    pub fn project_sparse(&self, x: &[(usize, f64)]) -> Vec<f64> {
        let mut y = vec![0.0; self.k];
        for &(c, v) in x {
            let row = &self.theta_t[c * self.k..(c + 1) * self.k];
            y.iter_mut().zip(row).for_each(|(a, b)| *a += v * b);
        }
        y
    }

    pub fn standardize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .enumerate()
            .map(|(j, y)| (y - self.mean[j]) / self.std[j] * self.alpha)
            .collect()
    }

    pub fn project(&self, instance: &Instance) -> Vec<f64> {
        self.standardize(&self.project_columns(self.columns_of(instance)))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let m = ModelText::parse(text, &[KIND])?;
        let k: usize = m.meta_parsed("k")?;
        if k == 0 {
            return Err(Error::Format("k must be positive".into()));
        }
        let mut model = SclModel {
            k,
            alpha: m.meta_parsed("alpha")?,
            pivots: Vec::new(),
            mean: parse_floats(m.meta("mean")?, k)?,
            std: parse_floats(m.meta("std")?, k)?,
            columns: vec![HashMap::new(); TEMPLATE_COUNT],
            theta_t: Vec::new(),
        };
        for rec in &m.records {
            let [t, feature, rest] = rec[..] else {
                return Err(Error::Format("expected `template<TAB>feature<TAB>values`".into()));
            };
            let t: usize = t
                .parse()
                .ok()
                .filter(|&t| t < TEMPLATE_COUNT)
                .ok_or_else(|| Error::Format(format!("bad template index `{t}`")))?;
            if rest == "pivot" {
                model.pivots.push((t, feature.to_string()));
            } else {
                let col = model.theta_t.len() / k;
                if model.columns[t].insert(feature.to_string(), col).is_some() {
                    return Err(Error::Format(format!("duplicate feature `{feature}`")));
                }
                model.theta_t.extend(parse_floats(rest, k)?);
            }
        }
        Ok(model)
    }
}

impl Representation for SclModel {
    fn name(&self) -> &str {
        KIND
    }

    fn kind(&self) -> BlockKind {
        BlockKind::Dense
    }

    fn dim(&self) -> usize {
        self.k
    }

    fn block(&self, instance: &Instance) -> Result<Block> {
        Ok(Block::Dense(self.project(instance)))
    }

    fn to_text(&self) -> String {
        let mut out = header(KIND);
        let _ = writeln!(out, "k {}", self.k);
        let _ = writeln!(out, "alpha {:?}", self.alpha);
        out.push_str("mean ");
        push_floats(&mut out, &self.mean);
        out.push_str("\nstd ");
        push_floats(&mut out, &self.std);
        out.push('\n');
        for (t, v) in &self.pivots {
            let _ = writeln!(out, "{t}\t{v}\tpivot");
        }
        let mut cols: Vec<(usize, &str, usize)> = Vec::new();
        for (t, map) in self.columns.iter().enumerate() {
            cols.extend(map.iter().map(|(v, &c)| (c, v.as_str(), t)));
        }
        cols.sort_unstable();
        for (c, v, t) in cols {
            let _ = write!(out, "{t}\t{v}\t");
            push_floats(&mut out, &self.theta_t[c * self.k..(c + 1) * self.k]);
            out.push('\n');
        }
        out
    }
}
