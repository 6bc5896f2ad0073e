//! One-vs-rest linear tagger over hybrid sparse/dense instance vectors.
//!
//! Each label gets an L2-regularized squared-hinge binary classifier,
//! trained by dual coordinate descent with shrinking. The per-label
//! problems are independent and run in parallel; each has its own seeded
//! visiting order, so results do not depend on the thread count.
//! Decoding is greedy per token with ties going to the label that sorts
//! first.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{AttributeSpace, Corpus, Sentence};
use crate::error::{Error, Result};
use crate::features::{
    assemble_hybrid, extract_sentence, FeatureVocabulary, HybridConfig, HybridLayout, HybridVector, TemplateMask,
};
use crate::representations::{Representation, BlockKind};

pub const KIND: &str = "tagger";

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerConfig {
    /// Regularization constant C.
    pub c: f64,
    pub dense_scale: f64,
    pub templates: TemplateMask,
    /// Stop once an epoch changes the dual objective by less than this
    /// fraction of its magnitude.
    pub tolerance: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            c: 0.1,
            dense_scale: 1.0,
            templates: TemplateMask::all(),
            tolerance: 1e-4,
            max_epochs: 500,
            seed: 1,
        }
    }
}

impl TaggerConfig {
    fn hybrid(&self) -> HybridConfig {
        HybridConfig {
            dense_scale: self.dense_scale,
            templates: self.templates,
        }
    }
}

/// Name, kind and size of an attached representation, plus where it was
/// loaded from when known.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SourceSpec {
    pub name: String,
    pub sparse: bool,
    pub dim: usize,
    pub path: Option<String>,
    pub sha256: Option<String>,
}

impl SourceSpec {
    pub fn of(source: &dyn Representation) -> Self {
        SourceSpec {
            name: source.name().to_string(),
            sparse: source.kind() == BlockKind::Sparse,
            dim: source.dim(),
            path: None,
            sha256: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearTaggerModel {
    /// Sorted label inventory.
    pub labels: Vec<String>,
    pub config: TaggerConfig,
    pub sources: Vec<SourceSpec>,
    /// Per label: sparse weights, then the bias, then dense weights.
    pub weights: Vec<Vec<f64>>,
    /// Final dual objective per label.
    pub objectives: Vec<f64>,
    /// Epochs run per label.
    pub epochs: Vec<usize>,
    layout: HybridLayout,
    vocab: FeatureVocabulary,
}

/// Training instances in a compact row store.
struct Design {
    sparse_offsets: Vec<usize>,
    sparse: Vec<u32>,
    dense: Vec<f32>,
    dense_dim: usize,
    sq_norms: Vec<f64>,
}

impl Design {
    fn len(&self) -> usize {
        self.sq_norms.len()
    }

    fn push(&mut self, h: &HybridVector) {
        self.sparse.extend_from_slice(&h.sparse);
        self.sparse_offsets.push(self.sparse.len());
        let before = self.dense.len();
        self.dense.extend(h.dense_values().map(|v| v as f32));
        debug_assert_eq!(self.dense.len() - before, self.dense_dim);
        let dn: f64 = self.dense[before..].iter().map(|&v| v as f64 * v as f64).sum();
        // sparse one-hots plus the bias feature
        self.sq_norms.push(h.sparse.len() as f64 + 1.0 + dn);
    }

    fn sparse_row(&self, i: usize) -> &[u32] {
        &self.sparse[self.sparse_offsets[i]..self.sparse_offsets[i + 1]]
    }

    fn dense_row(&self, i: usize) -> &[f32] {
        &self.dense[i * self.dense_dim..(i + 1) * self.dense_dim]
    }
}

fn row_dot(w: &[f64], sparse_dim: usize, sparse: &[u32], dense: &[f32]) -> f64 {
    let mut s = w[sparse_dim];
    for &j in sparse {
        s += w[j as usize];
    }
    let wd = &w[sparse_dim + 1..];
    let mut acc = [0.0f64; 4];
    let mut cw = wd.chunks_exact(4);
    let mut cx = dense.chunks_exact(4);
    for (a, b) in (&mut cw).zip(&mut cx) {
        for l in 0..4 {
            acc[l] += a[l] * b[l] as f64;
        }
    }
    let tail: f64 = cw.remainder().iter().zip(cx.remainder()).map(|(a, &b)| a * b as f64).sum();
    s + (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

fn row_axpy(w: &mut [f64], sparse_dim: usize, a: f64, sparse: &[u32], dense: &[f32]) {
    w[sparse_dim] += a;
    for &j in sparse {
        w[j as usize] += a;
    }
    for (x, &v) in w[sparse_dim + 1..].iter_mut().zip(dense) {
        *x += a * v as f64;
    }
}

struct BinaryResult {
    w: Vec<f64>,
    objective: f64,
    epochs: usize,
}

/// Dual coordinate descent for one binary squared-hinge problem.
fn train_binary(design: &Design, sparse_dim: usize, positive: &[bool], config: &TaggerConfig, seed: u64) -> BinaryResult {
    let n = design.len();
    let dim = sparse_dim + 1 + design.dense_dim;
    let d_ii = 1.0 / (2.0 * config.c);
    let mut w = vec![0.0; dim];
    let mut alpha = vec![0.0; n];
    let mut index: Vec<usize> = (0..n).collect();
    let mut active = n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut objective = 0.0;
    let mut pg_max_old = f64::INFINITY;
    let mut epochs = 0;
    while epochs < config.max_epochs {
        epochs += 1;
        index[..active].shuffle(&mut rng);
        let before = objective;
        let mut pg_max_new = f64::NEG_INFINITY;
        let mut s = 0;
        while s < active {
            let i = index[s];
            let y = if positive[i] { 1.0 } else { -1.0 };
            let (sp, de) = (design.sparse_row(i), design.dense_row(i));
            let g = y * row_dot(&w, sparse_dim, sp, de) - 1.0 + d_ii * alpha[i];
            let pg = if alpha[i] == 0.0 {
                if g > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                }
                g.min(0.0)
            } else {
                g
            };
            pg_max_new = pg_max_new.max(pg.abs());
            if pg.abs() > 1e-12 {
                let q = design.sq_norms[i] + d_ii;
                let new = (alpha[i] - g / q).max(0.0);
                let d = new - alpha[i];
                objective += d * g + 0.5 * d * d * q;
                alpha[i] = new;
                row_axpy(&mut w, sparse_dim, d * y, sp, de);
            }
            s += 1;
        }
        let change = (objective - before).abs();
        let converged = change <= config.tolerance * objective.abs().max(f64::MIN_POSITIVE);
        if converged {
            if active == n {
                break;
            }
            // Re-check every variable before declaring convergence.
            active = n;
            pg_max_old = f64::INFINITY;
            continue;
        }
        pg_max_old = if pg_max_new <= 0.0 { f64::INFINITY } else { pg_max_new };
    }
    BinaryResult { w, objective, epochs }
}

fn build_design(
    corpus: &Corpus,
    vocab: &FeatureVocabulary,
    sources: &[&dyn Representation],
    space: &AttributeSpace,
    hybrid: &HybridConfig,
    layout: &HybridLayout,
) -> Result<Design> {
    let mut design = Design {
        sparse_offsets: vec![0],
        sparse: Vec::new(),
        dense: Vec::new(),
        dense_dim: layout.dense_dim,
        sq_norms: Vec::new(),
    };
    for (doc, sentence) in corpus.sentences_with_docs() {
        let z = space.indicator(doc);
        for inst in extract_sentence(sentence, &z) {
            design.push(&assemble_hybrid(&inst, vocab, sources, hybrid)?);
        }
    }
    Ok(design)
}

pub fn train_tagger(
    train: &Corpus,
    vocab: &FeatureVocabulary,
    sources: &[&dyn Representation],
    config: &TaggerConfig,
) -> Result<LinearTaggerModel> {
    if train.token_count() == 0 {
        return Err(Error::Empty("training corpus has no tokens".into()));
    }
    if !(config.c > 0.0) || !(config.dense_scale >= 0.0) {
        return Err(Error::InvalidArgument("C must be positive and the dense scale non-negative".into()));
    }
    if config.templates.is_empty() && sources.is_empty() {
        return Err(Error::InvalidArgument("no features left to train on".into()));
    }
    let mut labels = train.tag_inventory();
    labels.sort();
    let layout = HybridLayout::new(vocab, sources);
    let space = AttributeSpace::shared_only();
    let design = build_design(train, vocab, sources, &space, &config.hybrid(), &layout)?;
    let gold: Vec<usize> = train
        .tokens()
        .map(|t| labels.binary_search(&t.tag).expect("label from inventory"))
        .collect();
    info!(
        "training tagger: {} tokens, {} labels, {} sparse + {} dense dims, C = {}",
        design.len(),
        labels.len(),
        layout.sparse_dim,
        layout.dense_dim,
        config.c
    );
    let results: Vec<BinaryResult> = (0..labels.len())
        .into_par_iter()
        .map(|l| {
            let positive: Vec<bool> = gold.iter().map(|&g| g == l).collect();
            let seed = config.seed ^ ((l as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
            train_binary(&design, layout.sparse_dim, &positive, config, seed)
        })
        .collect();
    for (l, r) in results.iter().enumerate() {
        debug!("label {}: {} epochs, dual objective {:.6}", labels[l], r.epochs, r.objective);
        if r.epochs >= config.max_epochs {
            warn!("label {} stopped at the epoch limit ({})", labels[l], config.max_epochs);
        }
        if r.w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Diverged(format!("non-finite weights for label {}", labels[l])));
        }
    }
    Ok(LinearTaggerModel {
        labels,
        config: config.clone(),
        sources: sources.iter().map(|s| SourceSpec::of(*s)).collect(),
        objectives: results.iter().map(|r| r.objective).collect(),
        epochs: results.iter().map(|r| r.epochs).collect(),
        weights: results.into_iter().map(|r| r.w).collect(),
        layout,
        vocab: vocab.clone(),
    })
}

impl LinearTaggerModel {
    pub fn vocabulary(&self) -> &FeatureVocabulary {
        &self.vocab
    }

    fn check_sources(&self, sources: &[&dyn Representation]) -> Result<()> {
        if sources.len() != self.sources.len() {
            return Err(Error::InvalidArgument(format!(
                "tagger expects {} representation model(s), got {}",
                self.sources.len(),
                sources.len()
            )));
        }
        for (want, got) in self.sources.iter().zip(sources) {
            if want.name != got.name() || want.dim != got.dim() || want.sparse != got.is_sparse() {
                return Err(Error::InvalidArgument(format!(
                    "tagger expects representation `{}` of size {}, got `{}` of size {}",
                    want.name,
                    want.dim,
                    got.name(),
                    got.dim()
                )));
            }
        }
        Ok(())
    }

    pub fn scores(&self, h: &HybridVector) -> Vec<f64> {
        let dense: Vec<f32> = h.dense_values().map(|v| v as f32).collect();
        self.weights
            .iter()
            .map(|w| row_dot(w, self.layout.sparse_dim, &h.sparse, &dense))
            .collect()
    }

    /// Index of the highest score; the first label wins ties.
    fn argmax(scores: &[f64]) -> usize {
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate().skip(1) {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }

    pub fn tag_sentence(&self, sources: &[&dyn Representation], sentence: &Sentence, z: &[bool]) -> Result<Vec<String>> {
        self.check_sources(sources)?;
        let hybrid = self.config.hybrid();
        extract_sentence(sentence, z)
            .iter()
            .map(|inst| {
                let h = assemble_hybrid(inst, &self.vocab, sources, &hybrid)?;
                Ok(self.labels[Self::argmax(&self.scores(&h))].clone())
            })
            .collect()
    }

    /// Predicted tags for every token of a corpus, in corpus order.
    pub fn tag_corpus(&self, sources: &[&dyn Representation], corpus: &Corpus) -> Result<Vec<String>> {
        self.check_sources(sources)?;
        let sentences: Vec<&Sentence> = corpus.sentences().collect();
        let tagged: Vec<Vec<String>> = sentences
            .par_iter()
            .map(|s| self.tag_sentence(sources, s, &[true]))
            .collect::<Result<_>>()?;
        Ok(tagged.into_iter().flatten().collect())
    }

    /// Corpus copy carrying the predicted tags.
    pub fn retag(&self, sources: &[&dyn Representation], corpus: &Corpus) -> Result<Corpus> {
        let tags = self.tag_corpus(sources, corpus)?;
        let mut out = corpus.clone();
        let mut it = tags.into_iter();
        for doc in &mut out.documents {
            for s in &mut doc.sentences {
                for t in &mut s.tokens {
                    t.tag = it.next().expect("one tag per token");
                }
            }
        }
        Ok(out)
    }

    pub fn accuracy(&self, sources: &[&dyn Representation], corpus: &Corpus) -> Result<f64> {
        let pred = self.tag_corpus(sources, corpus)?;
        let correct = corpus.tokens().zip(&pred).filter(|(t, p)| &t.tag == *p).count();
        Ok(correct as f64 / pred.len().max(1) as f64)
    }

    /// Model file text. Attached models are listed with their path and
    /// hash when known.
    pub fn to_text(&self) -> String {
        let mut out = format!("HISTADAPT {KIND} v1\n");
        let _ = writeln!(out, "labels {}", self.labels.join(" "));
        let _ = writeln!(out, "c {:?}", self.config.c);
        let _ = writeln!(out, "dense_scale {:?}", self.config.dense_scale);
        let _ = writeln!(out, "templates {}", self.config.templates.bits());
        let _ = writeln!(out, "seed {}", self.config.seed);
        let _ = writeln!(out, "vocab_sha256 {}", self.vocab.fingerprint());
        let _ = writeln!(out, "sparse_dim {}", self.layout.sparse_dim);
        let _ = writeln!(out, "dense_dim {}", self.layout.dense_dim);
        for s in &self.sources {
            let _ = writeln!(
                out,
                "source {} {} {} {} {}",
                s.name,
                if s.sparse { "sparse" } else { "dense" },
                s.dim,
                s.path.as_deref().unwrap_or("-"),
                s.sha256.as_deref().unwrap_or("-")
            );
        }
        let sd = self.layout.sparse_dim;
        for (label, w) in self.labels.iter().zip(&self.weights) {
            let _ = write!(out, "{label}\t");
            let mut first = true;
            for (j, &x) in w[..sd].iter().enumerate() {
                if x != 0.0 {
                    if !first {
                        out.push(' ');
                    }
                    first = false;
                    let _ = write!(out, "{j}:{x:?}");
                }
            }
            let _ = write!(out, "\t{:?}\t", w[sd]);
            for (j, x) in w[sd + 1..].iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Parses a model file against the vocabulary it was trained with.
    pub fn parse(text: &str, vocab: &FeatureVocabulary) -> Result<Self> {
        let bad = |m: &str| Error::Format(m.to_string());
        let mut lines = text.lines();
        if lines.next() != Some("HISTADAPT tagger v1") {
            return Err(bad("missing `HISTADAPT tagger v1` header"));
        }
        let mut config = TaggerConfig::default();
        let mut labels = Vec::new();
        let mut sources = Vec::new();
        let mut sparse_dim = None;
        let mut dense_dim = None;
        let mut weights: Vec<Vec<f64>> = Vec::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            if let Some((label, rest)) = line.split_once('\t') {
                let sd = sparse_dim.ok_or_else(|| bad("weights before `sparse_dim`"))?;
                let dd = dense_dim.ok_or_else(|| bad("weights before `dense_dim`"))?;
                let cols: Vec<&str> = rest.split('\t').collect();
                let [sparse, bias, dense] = cols[..] else {
                    return Err(bad("expected `label<TAB>sparse<TAB>bias<TAB>dense`"));
                };
                if labels.get(weights.len()) != Some(&label.to_string()) {
                    return Err(bad(&format!("weights for `{label}` out of order")));
                }
                let mut w = vec![0.0; sd + 1 + dd];
                for pair in sparse.split(' ').filter(|s| !s.is_empty()) {
                    let (j, x) = pair.split_once(':').ok_or_else(|| bad("bad sparse weight"))?;
                    let j: usize = j.parse().map_err(|_| bad("bad sparse index"))?;
                    if j >= sd {
                        return Err(bad("sparse index out of range"));
                    }
                    w[j] = x.parse().map_err(|_| bad("bad sparse weight"))?;
                }
                w[sd] = bias.parse().map_err(|_| bad("bad bias"))?;
                let dense: Vec<&str> = dense.split(' ').filter(|s| !s.is_empty()).collect();
                if dense.len() != dd {
                    return Err(bad("dense weight count mismatch"));
                }
                for (j, x) in dense.iter().enumerate() {
                    w[sd + 1 + j] = x.parse().map_err(|_| bad("bad dense weight"))?;
                }
                weights.push(w);
                continue;
            }
            let (key, value) = line.split_once(' ').unwrap_or((line, ""));
            let num = |v: &str| v.parse::<f64>().map_err(|_| bad(&format!("bad `{key}`")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| bad(&format!("bad `{key}`")));
            match key {
                "labels" => labels = value.split(' ').filter(|s| !s.is_empty()).map(str::to_string).collect(),
                "c" => config.c = num(value)?,
                "dense_scale" => config.dense_scale = num(value)?,
                "templates" => {
                    config.templates =
                        TemplateMask::from_bits(value.parse().map_err(|_| bad("bad `templates`"))?)
                }
                "seed" => config.seed = value.parse().map_err(|_| bad("bad `seed`"))?,
                "vocab_sha256" => {
                    if value != vocab.fingerprint() {
                        return Err(bad("vocabulary does not match the one the tagger was trained with"));
                    }
                }
                "sparse_dim" => sparse_dim = Some(int(value)?),
                "dense_dim" => dense_dim = Some(int(value)?),
                "source" => {
                    let f: Vec<&str> = value.split(' ').collect();
                    let [name, kind, dim, path, sha] = f[..] else {
                        return Err(bad("bad `source` line"));
                    };
                    let opt = |s: &str| (s != "-").then(|| s.to_string());
                    sources.push(SourceSpec {
                        name: name.to_string(),
                        sparse: kind == "sparse",
                        dim: int(dim)?,
                        path: opt(path),
                        sha256: opt(sha),
                    });
                }
                other => return Err(bad(&format!("unknown key `{other}`"))),
            }
        }
        if weights.len() != labels.len() || labels.is_empty() {
            return Err(bad("label and weight counts differ"));
        }
        let mut sparse_offsets = Vec::new();
        let mut acc = vocab.total();
        for s in &sources {
            if s.sparse {
                sparse_offsets.push(Some(acc));
                acc += s.dim;
            } else {
                sparse_offsets.push(None);
            }
        }
        let layout = HybridLayout {
            vocab_size: vocab.total(),
            sparse_offsets,
            sparse_dim: acc,
            dense_dim: sources.iter().filter(|s| !s.sparse).map(|s| s.dim).sum(),
        };
        if Some(layout.sparse_dim) != sparse_dim || Some(layout.dense_dim) != dense_dim {
            return Err(bad("feature-space sizes do not match the attached sources"));
        }
        Ok(LinearTaggerModel {
            objectives: vec![f64::NAN; labels.len()],
            epochs: vec![0; labels.len()],
            labels,
            config,
            sources,
            weights,
            layout,
            vocab: vocab.clone(),
        })
    }

    pub fn read(path: impl AsRef<Path>, vocab: &FeatureVocabulary) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, vocab)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub config: TaggerConfig,
    /// Dev accuracy, or the error that stopped this cell.
    pub outcome: std::result::Result<f64, String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub selected: usize,
}

impl SweepResult {
    pub fn best(&self) -> &SweepCell {
        &self.cells[self.selected]
    }

    pub fn best_accuracy(&self) -> f64 {
        self.best().outcome.clone().unwrap_or(f64::NAN)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{:>8}  {:>11}  {:>10}\n", "C", "dense_scale", "dev_acc");
        for (i, cell) in self.cells.iter().enumerate() {
            let acc = match &cell.outcome {
                Ok(a) => format!("{:.4}", a * 100.0),
                Err(e) => format!("failed: {e}"),
            };
            let mark = if i == self.selected { "  *" } else { "" };
            let _ = writeln!(out, "{:>8}  {:>11}  {:>10}{mark}", cell.config.c, cell.config.dense_scale, acc);
        }
        out
    }
}

/// Picks the best of several settings by dev accuracy; ties go to the
/// smaller C, then to the earlier setting.
pub fn select_best(cells: &[SweepCell]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, cell) in cells.iter().enumerate() {
        let Ok(acc) = cell.outcome else { continue };
        best = match best {
            None => Some((i, acc)),
            Some((j, b)) if acc > b || (acc == b && cell.config.c < cells[j].config.c) => Some((i, acc)),
            keep => keep,
        };
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| Error::Infeasible("every sweep setting failed".into()))
}

/// Trains one tagger per setting and scores each on `dev`.
pub fn sweep(
    train: &Corpus,
    dev: &Corpus,
    vocab: &FeatureVocabulary,
    sources: &[&dyn Representation],
    grid: &[TaggerConfig],
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty sweep grid".into()));
    }
    let cells: Vec<SweepCell> = grid
        .iter()
        .map(|config| {
            let outcome = train_tagger(train, vocab, sources, config)
                .and_then(|m| m.accuracy(sources, dev))
                .map_err(|e| e.to_string());
            if let Err(e) = &outcome {
                warn!("sweep cell C = {} failed: {e}", config.c);
            }
            SweepCell {
                config: config.clone(),
                outcome,
            }
        })
        .collect();
    let selected = select_best(&cells)?;
    Ok(SweepResult { cells, selected })
}

/// Settings over a C grid with every other field from `base`.
pub fn c_grid(base: &TaggerConfig, cs: &[f64]) -> Vec<TaggerConfig> {
    cs.iter()
        .map(|&c| TaggerConfig { c, ..base.clone() })
        .collect()
}
