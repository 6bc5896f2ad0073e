//! Feature templates, per-template vocabularies and hybrid instance vectors.
//!
//! Sixteen templates, one active feature each per token position:
//!
//! | index | name          | group        |
//! |-------|---------------|--------------|
//! | 0–4   | `w-2`..`w+2`  | lexical      |
//! | 5–8   | `pre1`..`pre4`| affix        |
//! | 9–12  | `suf1`..`suf4`| affix        |
//! | 13    | `digit`       | orthographic |
//! | 14    | `upper`       | orthographic |
//! | 15    | `hyphen`      | orthographic |
//!
//! Affixes shorter than their order take the whole word. Positions beyond
//! the sentence edges read as `<s>` / `</s>`. Case is preserved.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::corpus::{AttributeSpace, Corpus, Document, Sentence};
use crate::error::{Error, Result};
use crate::representations::{Block, Representation};

pub const TEMPLATE_COUNT: usize = 16;
/// Lexical and affix templates; orthographic ones are never embedded.
pub const EMBEDDED_COUNT: usize = 13;
pub const LEXICAL: [usize; 5] = [0, 1, 2, 3, 4];
pub const CENTER_WORD: usize = 2;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

const NAMES: [&str; TEMPLATE_COUNT] = [
    "w-2", "w-1", "w0", "w+1", "w+2", "pre1", "pre2", "pre3", "pre4", "suf1", "suf2", "suf3", "suf4", "digit",
    "upper", "hyphen",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TemplateGroup {
    Lexical,
    Affix,
    Orthographic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TemplateId(pub usize);

impl TemplateId {
    pub fn all() -> impl Iterator<Item = TemplateId> {
        (0..TEMPLATE_COUNT).map(TemplateId)
    }

    pub fn name(self) -> &'static str {
        NAMES[self.0]
    }

    pub fn group(self) -> TemplateGroup {
        match self.0 {
            0..=4 => TemplateGroup::Lexical,
            5..=12 => TemplateGroup::Affix,
            _ => TemplateGroup::Orthographic,
        }
    }

    pub fn is_embedded(self) -> bool {
        self.0 < EMBEDDED_COUNT
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Groups that can be dropped in ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FeatureGroup {
    /// The four non-center lexical templates.
    WordContext,
    Prefix,
    Suffix,
    Affix,
    Orthographic,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 5] = [
        FeatureGroup::WordContext,
        FeatureGroup::Prefix,
        FeatureGroup::Suffix,
        FeatureGroup::Affix,
        FeatureGroup::Orthographic,
    ];

    pub fn templates(self) -> &'static [usize] {
        match self {
            FeatureGroup::WordContext => &[0, 1, 3, 4],
            FeatureGroup::Prefix => &[5, 6, 7, 8],
            FeatureGroup::Suffix => &[9, 10, 11, 12],
            FeatureGroup::Affix => &[5, 6, 7, 8, 9, 10, 11, 12],
            FeatureGroup::Orthographic => &[13, 14, 15],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureGroup::WordContext => "word-context",
            FeatureGroup::Prefix => "prefix",
            FeatureGroup::Suffix => "suffix",
            FeatureGroup::Affix => "affix",
            FeatureGroup::Orthographic => "orthographic",
        }
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature group `{s}`")))
    }
}

/// Set of templates contributing to the sparse part.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TemplateMask(u16);

impl TemplateMask {
    pub fn all() -> Self {
        TemplateMask(u16::MAX)
    }

    pub fn without(groups: &[FeatureGroup]) -> Self {
        let mut bits = Self::all().0;
        for g in groups {
            for &t in g.templates() {
                bits &= !(1 << t);
            }
        }
        TemplateMask(bits)
    }

    pub fn contains(self, t: usize) -> bool {
        self.0 & (1 << t) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn from_bits(bits: u16) -> Self {
        TemplateMask(bits & Self::all().0)
    }
}

impl Default for TemplateMask {
    fn default() -> Self {
        Self::all()
    }
}

/// The active features of one token position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    /// Template values, indexed by template.
    pub values: Vec<String>,
    pub attribute_z: Vec<bool>,
    pub token_index: usize,
}

impl Instance {
    pub fn value(&self, t: usize) -> &str {
        &self.values[t]
    }

    /// `template:value`
    pub fn feature(&self, t: usize) -> String {
        format!("{}:{}", NAMES[t], self.values[t])
    }
}

fn affix(word: &str, k: usize, prefix: bool) -> String {
    let n = word.chars().count();
    if n <= k {
        word.to_string()
    } else if prefix {
        word.chars().take(k).collect()
    } else {
        word.chars().skip(n - k).collect()
    }
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

/// Feature values for position `i` without attribute information.
pub fn template_values(sentence: &Sentence, i: usize) -> Result<Vec<String>> {
    let len = sentence.len();
    if i >= len {
        return Err(Error::IndexOutOfRange { index: i, len });
    }
    let word_at = |offset: isize| -> String {
        let j = i as isize + offset;
        if j < 0 {
            BOS.to_string()
        } else if j as usize >= len {
            EOS.to_string()
        } else {
            sentence.tokens[j as usize].form.clone()
        }
    };
    let w = sentence.tokens[i].form.as_str();
    let mut values = Vec::with_capacity(TEMPLATE_COUNT);
    values.extend((-2..=2).map(word_at));
    values.extend((1..=4).map(|k| affix(w, k, true)));
    values.extend((1..=4).map(|k| affix(w, k, false)));
    values.push(flag(w.chars().any(|c| c.is_numeric())));
    values.push(flag(w.chars().any(char::is_uppercase)));
    values.push(flag(w.contains('-')));
    Ok(values)
}

pub fn extract_instance(sentence: &Sentence, i: usize, space: &AttributeSpace, doc: &Document) -> Result<Instance> {
    Ok(Instance {
        values: template_values(sentence, i)?,
        attribute_z: space.indicator(doc),
        token_index: i,
    })
}

/// Instances for every position of a sentence.
pub fn extract_sentence(sentence: &Sentence, z: &[bool]) -> Vec<Instance> {
    (0..sentence.len())
        .map(|i| Instance {
            values: template_values(sentence, i).expect("index in range"),
            attribute_z: z.to_vec(),
            token_index: i,
        })
        .collect()
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
struct TemplateVocab {
    ids: HashMap<String, u32>,
    values: Vec<String>,
    counts: Vec<u64>,
}

impl TemplateVocab {
    fn add(&mut self, value: &str, count: u64) {
        match self.ids.get(value) {
            Some(&id) => self.counts[id as usize] += count,
            None => {
                self.ids.insert(value.to_string(), self.values.len() as u32);
                self.values.push(value.to_string());
                self.counts.push(count);
            }
        }
    }
}

/// Per-template feature ids, contiguous from 0 in order of first
/// occurrence, with exact counts.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FeatureVocabulary {
    templates: Vec<TemplateVocab>,
    offsets: Vec<usize>,
}

impl Default for FeatureVocabulary {
    fn default() -> Self {
        FeatureVocabulary {
            templates: vec![TemplateVocab::default(); TEMPLATE_COUNT],
            offsets: vec![0; TEMPLATE_COUNT + 1],
        }
    }
}

impl FeatureVocabulary {
    pub fn build<'a>(corpora: impl IntoIterator<Item = &'a Corpus>) -> Self {
        let mut vocab = FeatureVocabulary::default();
        for corpus in corpora {
            for sentence in corpus.sentences() {
                for i in 0..sentence.len() {
                    let values = template_values(sentence, i).expect("index in range");
                    for (t, v) in values.iter().enumerate() {
                        vocab.templates[t].add(v, 1);
                    }
                }
            }
        }
        vocab.reindex();
        vocab
    }

    fn reindex(&mut self) {
        let mut acc = 0;
        for t in 0..TEMPLATE_COUNT {
            self.offsets[t] = acc;
            acc += self.templates[t].values.len();
        }
        self.offsets[TEMPLATE_COUNT] = acc;
    }

    pub fn id(&self, t: usize, value: &str) -> Option<u32> {
        self.templates[t].ids.get(value).copied()
    }

    pub fn value(&self, t: usize, id: u32) -> &str {
        &self.templates[t].values[id as usize]
    }

    pub fn count(&self, t: usize, id: u32) -> u64 {
        self.templates[t].counts[id as usize]
    }

    pub fn counts(&self, t: usize) -> &[u64] {
        &self.templates[t].counts
    }

    pub fn size(&self, t: usize) -> usize {
        self.templates[t].values.len()
    }

    pub fn offset(&self, t: usize) -> usize {
        self.offsets[t]
    }

    /// Size of the global sparse id space.
    pub fn total(&self) -> usize {
        self.offsets[TEMPLATE_COUNT]
    }

    pub fn global_id(&self, t: usize, value: &str) -> Option<u32> {
        self.id(t, value).map(|id| (self.offsets[t] + id as usize) as u32)
    }

    /// Template and local id for a global id.
    pub fn locate(&self, global: u32) -> (usize, u32) {
        let g = global as usize;
        let t = self.offsets[1..].partition_point(|&o| o <= g);
        (t, (g - self.offsets[t]) as u32)
    }

    /// Local ids of the instance's features; `None` where unseen.
    pub fn encode(&self, instance: &Instance) -> [Option<u32>; TEMPLATE_COUNT] {
        std::array::from_fn(|t| self.id(t, &instance.values[t]))
    }

    /// Like [`encode`](Self::encode) but every feature must be known.
    pub fn encode_strict(&self, instance: &Instance) -> Result<[u32; TEMPLATE_COUNT]> {
        let mut out = [0; TEMPLATE_COUNT];
        for (t, slot) in out.iter_mut().enumerate() {
            *slot = self
                .id(t, &instance.values[t])
                .ok_or_else(|| Error::MissingFeature(instance.feature(t)))?;
        }
        Ok(out)
    }

    /// `template-index<TAB>feature-string<TAB>count` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (t, tv) in self.templates.iter().enumerate() {
            for (v, c) in tv.values.iter().zip(&tv.counts) {
                let _ = writeln!(out, "{t}\t{v}\t{c}");
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut vocab = FeatureVocabulary::default();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::parse("vocabulary", lineno + 1, "expected `template<TAB>feature<TAB>count`");
            let mut cols = line.split('\t');
            let (t, v, c) = match (cols.next(), cols.next(), cols.next(), cols.next()) {
                (Some(t), Some(v), Some(c), None) => (t, v, c),
                _ => return Err(bad()),
            };
            let t: usize = t.parse().map_err(|_| bad())?;
            let c: u64 = c.parse().map_err(|_| bad())?;
            if t >= TEMPLATE_COUNT || c == 0 || vocab.templates[t].ids.contains_key(v) {
                return Err(bad());
            }
            vocab.templates[t].add(v, c);
        }
        vocab.reindex();
        Ok(vocab)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    /// SHA-256 of the dump text.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }
}

pub fn build_vocabulary(corpora: &[&Corpus]) -> Result<FeatureVocabulary> {
    if corpora.is_empty() {
        return Err(Error::InvalidArgument("need at least one corpus".into()));
    }
    Ok(FeatureVocabulary::build(corpora.iter().copied()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridConfig {
    /// Multiplier applied to every L2-normalized dense block.
    pub dense_scale: f64,
    pub templates: TemplateMask,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            dense_scale: 1.0,
            templates: TemplateMask::all(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseBlock {
    pub source: String,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HybridVector {
    /// Global ids of one-hot features, ascending.
    pub sparse: Vec<u32>,
    pub dense: Vec<DenseBlock>,
}

impl HybridVector {
    pub fn dense_len(&self) -> usize {
        self.dense.iter().map(|b| b.values.len()).sum()
    }

    /// Dense blocks concatenated in source order.
    pub fn dense_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.dense.iter().flat_map(|b| b.values.iter().copied())
    }
}

/// Sizes of the hybrid space for a vocabulary and a list of sources.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HybridLayout {
    pub vocab_size: usize,
    /// Offset of each source's sparse block (None for dense sources).
    pub sparse_offsets: Vec<Option<usize>>,
    pub sparse_dim: usize,
    pub dense_dim: usize,
}

impl HybridLayout {
    pub fn new(vocab: &FeatureVocabulary, sources: &[&dyn Representation]) -> Self {
        let mut sparse_dim = vocab.total();
        let mut dense_dim = 0;
        let mut sparse_offsets = Vec::with_capacity(sources.len());
        for s in sources {
            if s.is_sparse() {
                sparse_offsets.push(Some(sparse_dim));
                sparse_dim += s.dim();
            } else {
                sparse_offsets.push(None);
                dense_dim += s.dim();
            }
        }
        HybridLayout {
            vocab_size: vocab.total(),
            sparse_offsets,
            sparse_dim,
            dense_dim,
        }
    }
}

/// One-hot features for the masked templates, sparse representation
/// features after the vocabulary block, and one L2-normalized, scaled dense
/// block per dense source.
pub fn assemble_hybrid(
    instance: &Instance,
    vocab: &FeatureVocabulary,
    sources: &[&dyn Representation],
    config: &HybridConfig,
) -> Result<HybridVector> {
    let mut out = HybridVector::default();
    for t in 0..TEMPLATE_COUNT {
        if config.templates.contains(t) {
            if let Some(id) = vocab.global_id(t, &instance.values[t]) {
                out.sparse.push(id);
            }
        }
    }
    let mut sparse_offset = vocab.total();
    for source in sources {
        let dim = source.dim();
        match source.block(instance)? {
            Block::Sparse(ids) => {
                if let Some(&bad) = ids.iter().find(|&&id| id as usize >= dim) {
                    return Err(Error::DimensionMismatch {
                        source_name: source.name().to_string(),
                        expected: dim,
                        actual: bad as usize + 1,
                    });
                }
                out.sparse.extend(ids.iter().map(|&id| (sparse_offset + id as usize) as u32));
                sparse_offset += dim;
            }
            Block::Dense(mut values) => {
                if values.len() != dim {
                    return Err(Error::DimensionMismatch {
                        source_name: source.name().to_string(),
                        expected: dim,
                        actual: values.len(),
                    });
                }
                let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > 0.0 {
                    let k = config.dense_scale / norm;
                    values.iter_mut().for_each(|v| *v *= k);
                }
                out.dense.push(DenseBlock {
                    source: source.name().to_string(),
                    values,
                });
            }
        }
    }
    out.sparse.sort_unstable();
    out.sparse.dedup();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Token};

    fn figure_one() -> Sentence {
        Sentence::from_forms("and drewe vnto hym all ryottours & wylde dysposed persones", "X")
    }

    fn corpus_of(words: &[&str]) -> Corpus {
        let mut c = Corpus::new("T");
        let mut d = Document::new("d", "C");
        d.sentences
            .push(Sentence::new(words.iter().map(|w| Token::new(*w, "NN")).collect()));
        c.documents.push(d);
        c
    }

    #[test]
    fn template_inventory() {
        let groups: Vec<TemplateGroup> = TemplateId::all().map(TemplateId::group).collect();
        assert_eq!(groups.iter().filter(|g| **g == TemplateGroup::Lexical).count(), 5);
        assert_eq!(groups.iter().filter(|g| **g == TemplateGroup::Affix).count(), 8);
        assert_eq!(groups.iter().filter(|g| **g == TemplateGroup::Orthographic).count(), 3);
        assert_eq!(TemplateId::all().filter(|t| t.is_embedded()).count(), EMBEDDED_COUNT);
    }

    #[test]
    fn figure_one_instance() {
        let v = template_values(&figure_one(), 1).unwrap();
        assert_eq!(&v[0..5], &["<s>", "and", "drewe", "vnto", "hym"]);
        assert_eq!(&v[5..9], &["d", "dr", "dre", "drew"]);
        assert_eq!(&v[9..13], &["e", "we", "ewe", "rewe"]);
        assert_eq!(&v[13..], &["0", "0", "0"]);
    }

    #[test]
    fn single_token_sentence() {
        let v = template_values(&Sentence::from_forms("a", "X"), 0).unwrap();
        assert_eq!(&v[0..5], &["<s>", "<s>", "a", "</s>", "</s>"]);
        assert!(v[5..13].iter().all(|x| x == "a"));
    }

    #[test]
    fn orthographic_classes() {
        let v = template_values(&Sentence::from_forms("1840-1914", "X"), 0).unwrap();
        assert_eq!(&v[13..], &["1", "0", "1"]);
        let v = template_values(&Sentence::from_forms("Lord", "X"), 0).unwrap();
        assert_eq!(&v[13..], &["0", "1", "0"]);
    }

    #[test]
    fn affixes_count_characters() {
        let v = template_values(&Sentence::from_forms("þæt", "X"), 0).unwrap();
        assert_eq!(v[5], "þ");
        assert_eq!(v[11], "þæt");
        assert_eq!(v[10], "æt");
    }

    #[test]
    fn index_out_of_range() {
        let doc = Document::new("d", "C");
        let err = extract_instance(&figure_one(), 10, &AttributeSpace::shared_only(), &doc).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { index: 10, len: 10 }));
    }

    #[test]
    fn vocabulary_union_and_doubling() {
        let a = corpus_of(&["a0", "a1", "a2", "a3", "a4", "a5", "a6", "a7", "a8", "a9"]);
        let b = corpus_of(&["b0", "b1", "b2", "b3", "b4", "b5", "b6", "b7", "b8", "b9"]);
        let v = build_vocabulary(&[&a, &b]).unwrap();
        assert_eq!(v.size(CENTER_WORD), 20);
        // w-2 sees the first eight words of each sentence plus `<s>`.
        assert_eq!(v.size(0), 2 * 8 + 1);

        let once = build_vocabulary(&[&a]).unwrap();
        let twice = build_vocabulary(&[&a, &a]).unwrap();
        for t in 0..TEMPLATE_COUNT {
            assert_eq!(once.size(t), twice.size(t));
            for id in 0..once.size(t) as u32 {
                assert_eq!(twice.count(t, id), 2 * once.count(t, id));
            }
        }
        assert!(build_vocabulary(&[]).is_err());
    }

    #[test]
    fn vocabulary_dump_round_trip() {
        let c = corpus_of(&["and", "drewe", "vnto", "1840-1914"]);
        let v = FeatureVocabulary::build([&c]);
        let parsed = FeatureVocabulary::parse(&v.to_text()).unwrap();
        assert_eq!(v, parsed);
        assert_eq!(v.fingerprint(), parsed.fingerprint());
        for g in 0..v.total() as u32 {
            let (t, id) = v.locate(g);
            assert_eq!(v.global_id(t, v.value(t, id)), Some(g));
        }
    }

    #[test]
    fn baseline_hybrid_is_sixteen_one_hots() {
        let c = corpus_of(&["and", "drewe", "vnto"]);
        let v = FeatureVocabulary::build([&c]);
        let inst = Instance {
            values: template_values(&c.documents[0].sentences[0], 1).unwrap(),
            attribute_z: vec![true],
            token_index: 1,
        };
        let h = assemble_hybrid(&inst, &v, &[], &HybridConfig::default()).unwrap();
        assert_eq!(h.sparse.len(), 16);
        assert!(h.dense.is_empty());

        let cfg = HybridConfig {
            templates: TemplateMask::without(&[FeatureGroup::Affix]),
            ..HybridConfig::default()
        };
        assert_eq!(assemble_hybrid(&inst, &v, &[], &cfg).unwrap().sparse.len(), 8);
    }

    #[test]
    fn masks() {
        assert!(TemplateMask::without(&FeatureGroup::ALL[..]).contains(CENTER_WORD));
        let m = TemplateMask::without(&[FeatureGroup::WordContext, FeatureGroup::Affix, FeatureGroup::Orthographic]);
        assert_eq!((0..TEMPLATE_COUNT).filter(|&t| m.contains(t)).count(), 1);
        assert_eq!("suffix".parse::<FeatureGroup>().unwrap(), FeatureGroup::Suffix);
        assert!("lexical".parse::<FeatureGroup>().is_err());
    }
}
