//! Synthetic source/target corpora with controlled spelling drift.
//!
//! Both domains are sampled from one small probabilistic grammar over PTB
//! tags and one Zipf-distributed lexicon. The target domain then rewrites a
//! prefix of a seeded random ordering of word types with historical-looking
//! spelling rules, so the target-token OOV rate grows with the mutated
//! prefix and the inverse rewrite is an exact normalization lexicon.

use std::collections::{BTreeSet, HashMap, HashSet};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Corpus, Document, Sentence, Token};
use crate::error::{Error, Result};
use crate::normalize::NormalizationLexicon;

pub const SOURCE_CORPUS: &str = "SYN-SRC";
pub const TARGET_CORPUS: &str = "SYN-TGT";

/// Character-level rewrites from canonical to historical spelling.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MutationRule {
    /// Word-initial `u` and `v` trade places (`unto` → `vnto`).
    InitialUv,
    /// Final `e` appended after a consonant (`wild` → `wilde`).
    FinalE,
    /// First `i` written as `y` (`him` → `hym`).
    YForI,
    /// Word-initial `th` written as `y` (`the` → `ye`).
    ThornY,
}

impl MutationRule {
    pub const ALL: [MutationRule; 4] = [
        MutationRule::InitialUv,
        MutationRule::FinalE,
        MutationRule::YForI,
        MutationRule::ThornY,
    ];

    pub fn apply(self, word: &str) -> Option<String> {
        match self {
            MutationRule::InitialUv => {
                if let Some(rest) = word.strip_prefix('u') {
                    Some(format!("v{rest}"))
                } else {
                    word.strip_prefix('v').map(|rest| format!("u{rest}"))
                }
            }
            MutationRule::FinalE => {
                let last = word.chars().last()?;
                (last.is_ascii_lowercase() && !"aeiouy".contains(last)).then(|| format!("{word}e"))
            }
            MutationRule::YForI => word.find('i').map(|i| format!("{}y{}", &word[..i], &word[i + 1..])),
            MutationRule::ThornY => word
                .strip_prefix("th")
                .filter(|rest| !rest.is_empty())
                .map(|rest| format!("y{rest}")),
        }
    }
}

/// How much of the target vocabulary to respell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MutationTarget {
    /// Fraction of eligible word types.
    TypeFraction(f64),
    /// Target-token OOV rate against the source vocabulary; the type
    /// prefix is chosen to land as close as possible.
    OovRate(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Open-class lemmas; verbs expand to four word forms, nouns to two.
    pub lemmas: usize,
    pub sentences_per_domain: usize,
    pub sentences_per_document: usize,
    pub mutation: MutationTarget,
    /// Accepted distance between the requested and achieved OOV rate.
    pub oov_tolerance: f64,
    pub rules: Vec<MutationRule>,
    /// Fraction of open-class lemmas that only occur in the target domain.
    pub target_only_fraction: f64,
    pub zipf_exponent: f64,
    pub source_epochs: Vec<String>,
    pub target_epochs: Vec<String>,
    pub genres: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            lemmas: 600,
            sentences_per_domain: 2000,
            sentences_per_document: 50,
            mutation: MutationTarget::OovRate(0.23),
            oov_tolerance: 0.02,
            rules: MutationRule::ALL.to_vec(),
            target_only_fraction: 0.03,
            zipf_exponent: 1.0,
            source_epochs: vec!["1840-1914".into()],
            target_epochs: vec!["1500-1569".into(), "1570-1639".into()],
            genres: vec!["Letters".into(), "Drama".into(), "Sermon".into(), "History".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthReport {
    pub source_sentences: usize,
    pub source_tokens: usize,
    pub target_sentences: usize,
    pub target_tokens: usize,
    pub eligible_types: usize,
    pub mutated_types: usize,
    /// Target tokens absent from the source vocabulary before respelling.
    pub natural_oov_rate: f64,
    pub target_oov_rate: f64,
}

#[derive(Clone, Debug)]
pub struct SynthOutput {
    pub source: Corpus,
    pub target: Corpus,
    /// The target before respelling, token-aligned with `target`.
    pub target_canonical: Corpus,
    /// Historical form → canonical form, confidence 1.
    pub lexicon: NormalizationLexicon,
    pub report: SynthReport,
}

pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<SynthOutput> {
    validate(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lexicon = Lexicon::build(config, &mut rng);

    rng.set_stream(1);
    let source = sample_domain(config, &lexicon, &mut rng, SOURCE_CORPUS, &config.source_epochs, false);
    rng.set_stream(2);
    let target_canonical = sample_domain(config, &lexicon, &mut rng, TARGET_CORPUS, &config.target_epochs, true);

    let source_vocab = source.vocabulary();
    let mut target_counts: HashMap<&str, usize> = HashMap::new();
    for tok in target_canonical.tokens() {
        *target_counts.entry(tok.form.as_str()).or_default() += 1;
    }
    let target_tokens = target_canonical.token_count();
    let natural_oov: usize = target_counts
        .iter()
        .filter(|(w, _)| !source_vocab.contains(**w))
        .map(|(_, &c)| c)
        .sum();

    // Every distinct target type that at least one rule can respell without
    // colliding with an existing spelling, in seeded random order.
    rng.set_stream(3);
    let mut types: Vec<&str> = target_counts.keys().copied().collect();
    types.sort_unstable();
    types.shuffle(&mut rng);
    let mut taken: HashSet<String> = lexicon.all_forms.clone();
    taken.extend(source_vocab.iter().cloned());
    taken.extend(target_counts.keys().map(|w| w.to_string()));
    let mut candidates: Vec<(&str, String)> = Vec::new();
    for w in types {
        let mut rules = config.rules.clone();
        rules.shuffle(&mut rng);
        if let Some(variant) = rules.iter().filter_map(|r| r.apply(w)).find(|v| !taken.contains(v)) {
            taken.insert(variant.clone());
            candidates.push((w, variant));
        }
    }

    let added = |w: &str| -> usize {
        if source_vocab.contains(w) {
            target_counts[w]
        } else {
            0
        }
    };
    let rate = |oov: usize| oov as f64 / target_tokens as f64;
    let n_mutate = match config.mutation {
        MutationTarget::TypeFraction(f) => (f * candidates.len() as f64).round() as usize,
        MutationTarget::OovRate(goal) => {
            let mut best = (f64::INFINITY, 0);
            let mut oov = natural_oov;
            for n in 0..=candidates.len() {
                let d = (rate(oov) - goal).abs();
                if d < best.0 {
                    best = (d, n);
                }
                if n < candidates.len() {
                    oov += added(candidates[n].0);
                }
            }
            if best.0 > config.oov_tolerance {
                return Err(Error::Infeasible(format!(
                    "OOV rate {goal:.3} unreachable: natural rate {:.3}, maximum {:.3} over {} respellable types",
                    rate(natural_oov),
                    rate(oov),
                    candidates.len()
                )));
            }
            best.1
        }
    };

    let mut gold = NormalizationLexicon::new("synthetic-gold");
    let mut respell: HashMap<&str, &str> = HashMap::new();
    for (w, v) in &candidates[..n_mutate] {
        gold.insert(v, w, 1.0)?;
        respell.insert(w, v.as_str());
    }
    let target = target_canonical.map_forms(|w| respell.get(w).map_or_else(|| w.to_string(), |v| v.to_string()));
    let target_oov = target.tokens().filter(|t| !source_vocab.contains(&t.form)).count();

    let report = SynthReport {
        source_sentences: source.sentence_count(),
        source_tokens: source.token_count(),
        target_sentences: target.sentence_count(),
        target_tokens,
        eligible_types: candidates.len(),
        mutated_types: n_mutate,
        natural_oov_rate: rate(natural_oov),
        target_oov_rate: rate(target_oov),
    };
    Ok(SynthOutput {
        source,
        target,
        target_canonical,
        lexicon: gold,
        report,
    })
}

fn validate(config: &SynthConfig) -> Result<()> {
    let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
    if config.lemmas < 20 {
        return bad("need at least 20 lemmas");
    }
    if config.sentences_per_domain == 0 || config.sentences_per_document == 0 {
        return bad("sentence counts must be positive");
    }
    if config.source_epochs.is_empty() || config.target_epochs.is_empty() || config.genres.is_empty() {
        return bad("epochs and genres must be non-empty");
    }
    if !(0.0..1.0).contains(&config.target_only_fraction) {
        return bad("target_only_fraction must be in [0, 1)");
    }
    match config.mutation {
        MutationTarget::TypeFraction(f) if !(0.0..=1.0).contains(&f) => bad("type fraction must be in [0, 1]"),
        MutationTarget::OovRate(r) if !(0.0..1.0).contains(&r) => bad("OOV rate must be in [0, 1)"),
        _ => Ok(()),
    }
}

/// Word lists per tag with sampling weights; open-class lists are
/// Zipf-weighted by lemma rank.
struct Lexicon {
    words: HashMap<&'static str, (Vec<String>, WeightedIndex<f64>)>,
    target_only: HashMap<&'static str, (Vec<String>, WeightedIndex<f64>)>,
    all_forms: HashSet<String>,
}

const CLOSED: &[(&str, &[&str])] = &[
    ("DT", &["the", "a", "this", "that", "every", "some", "no", "an", "these", "those", "each", "thilke"]),
    ("PRP", &["he", "she", "they", "we", "it", "you", "him", "them", "us", "me", "i", "thee"]),
    ("PRP$", &["his", "her", "their", "our", "my", "your", "its", "thy", "thine"]),
    ("IN", &["of", "in", "unto", "with", "by", "for", "from", "upon", "into", "within", "without", "vnder", "after", "to", "through", "against"]),
    ("TO", &["to"]),
    ("MD", &["will", "shall", "may", "would", "should", "might", "must", "can", "could"]),
    ("CC", &["and", "but", "or", "nor", "yet"]),
    ("CD", &["two", "three", "four", "five", "six", "ten", "twenty", "hundred", "1640", "1701", "12", "3"]),
    (",", &[","]),
    (".", &[".", "?", "!"]),
];

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "l", "m", "n", "p", "r", "s", "t", "w", "v", "u", "br", "cl", "dr", "gr",
    "pl", "st", "th", "sh", "ch", "tr", "k", "j",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ea", "ou", "ai", "ie", "oo"];
const CODAS: &[&str] = &["", "", "n", "r", "l", "s", "t", "m", "nd", "st", "rt", "ld", "nt"];

impl Lexicon {
    fn build(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Lexicon {
        let mut used: HashSet<String> = CLOSED.iter().flat_map(|(_, ws)| ws.iter().map(|w| w.to_string())).collect();
        let mut fresh = |rng: &mut ChaCha8Rng, syllables: usize| loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
                w.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
                w.push_str(CODAS[rng.random_range(0..CODAS.len())]);
            }
            // room for the suffixed forms
            let forms = [w.clone(), format!("{w}s"), format!("{w}ed"), format!("{w}ing"), format!("{w}ly")];
            if w.len() >= 3 && forms.iter().all(|f| !used.contains(f)) {
                used.insert(w.clone());
                return w;
            }
        };

        let n = config.lemmas;
        let share = |f: f64| ((n as f64 * f).round() as usize).max(3);
        let (n_noun, n_verb, n_adj, n_adv, n_prop) = (share(0.38), share(0.24), share(0.16), share(0.07), share(0.15));

        let mut open: HashMap<&'static str, Vec<String>> = HashMap::new();
        let mut stems = |rng: &mut ChaCha8Rng, count: usize| -> Vec<String> {
            (0..count).map(|_| {
                let syl = 1 + rng.random_range(0..3usize).min(rng.random_range(0..3usize));
                fresh(rng, syl)
            }).collect()
        };
        let nouns = stems(rng, n_noun);
        let verbs = stems(rng, n_verb);
        let adjs = stems(rng, n_adj);
        let advs = stems(rng, n_adv);
        let props = stems(rng, n_prop);

        open.insert("NN", nouns.clone());
        open.insert("NNS", nouns.iter().map(|s| plural(s)).collect());
        open.insert("VB", verbs.clone());
        open.insert("VBZ", verbs.iter().map(|s| plural(s)).collect());
        open.insert("VBG", verbs.iter().map(|s| format!("{}ing", s.trim_end_matches('e'))).collect());
        open.insert(
            "VBD",
            verbs
                .iter()
                .map(|s| {
                    // a quarter of the verbs are irregular
                    if rng.random_bool(0.25) {
                        fresh(rng, 1)
                    } else if s.ends_with('e') {
                        format!("{s}d")
                    } else {
                        format!("{s}ed")
                    }
                })
                .collect(),
        );
        open.insert("JJ", adjs.clone());
        open.insert(
            "RB",
            advs.iter()
                .enumerate()
                .map(|(i, s)| if i % 2 == 0 { format!("{s}ly") } else { s.clone() })
                .collect(),
        );
        open.insert("NNP", props.iter().map(|s| capitalize(s)).collect());

        // Lemma ranks shared across the forms of one lemma so that e.g. a
        // frequent verb is frequent in every form.
        let mut words = HashMap::new();
        let mut target_only = HashMap::new();
        for (tag, list) in open {
            let k = ((list.len() as f64) * config.target_only_fraction).round() as usize;
            let split = list.len() - k;
            let weights = |range: std::ops::Range<usize>| -> WeightedIndex<f64> {
                WeightedIndex::new(range.map(|r| 1.0 / ((r + 2) as f64).powf(config.zipf_exponent))).expect("non-empty")
            };
            // the rarest lemmas are reserved for the target
            let shared: Vec<String> = list[..split].to_vec();
            let reserved: Vec<String> = list[split..].to_vec();
            if !reserved.is_empty() {
                target_only.insert(tag, (reserved, weights(split..list.len())));
            }
            words.insert(tag, (shared, weights(0..split)));
        }
        for (tag, ws) in CLOSED {
            let list: Vec<String> = ws.iter().map(|w| w.to_string()).collect();
            let dist = WeightedIndex::new((0..list.len()).map(|r| 1.0 / (r + 1) as f64)).expect("non-empty");
            words.insert(*tag, (list, dist));
        }

        let all_forms = words
            .values()
            .chain(target_only.values())
            .flat_map(|(l, _)| l.iter().cloned())
            .collect();
        Lexicon {
            words,
            target_only,
            all_forms,
        }
    }

    fn draw(&self, tag: &'static str, rng: &mut ChaCha8Rng, target: bool) -> String {
        if target {
            if let Some((list, dist)) = self.target_only.get(tag) {
                // reserved lemmas get roughly their Zipf share of the mass
                let (shared, sdist) = &self.words[tag];
                let reserved_mass = list.len() as f64 / (list.len() + shared.len()) as f64;
                if rng.random_bool(reserved_mass.min(0.5)) {
                    return list[dist.sample(rng)].clone();
                }
                return shared[sdist.sample(rng)].clone();
            }
        }
        let (list, dist) = &self.words[tag];
        list[dist.sample(rng)].clone()
    }
}

fn plural(stem: &str) -> String {
    if stem.ends_with('s') || stem.ends_with("sh") || stem.ends_with("ch") {
        format!("{stem}es")
    } else {
        format!("{stem}s")
    }
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Tag-sequence grammar: clause (, CC clause)? .
struct Grammar<'a> {
    rng: &'a mut ChaCha8Rng,
    tags: Vec<&'static str>,
}

impl Grammar<'_> {
    fn pick(&mut self, weights: &[f64]) -> usize {
        WeightedIndex::new(weights).expect("positive weights").sample(self.rng)
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn sentence(&mut self) -> Vec<&'static str> {
        self.clause();
        if self.chance(0.25) {
            self.tags.extend([",", "CC"]);
            self.clause();
        }
        self.tags.push(".");
        std::mem::take(&mut self.tags)
    }

    fn clause(&mut self) {
        if self.chance(0.1) {
            self.pp();
            self.tags.push(",");
        }
        self.np(true);
        self.vp();
    }

    fn np(&mut self, allow_pp: bool) {
        match self.pick(&[0.30, 0.12, 0.08, 0.15, 0.13, 0.10, 0.05, 0.07]) {
            0 => {
                self.tags.push("DT");
                self.adjectives();
                self.tags.push("NN");
            }
            1 => {
                self.tags.push("DT");
                self.adjectives();
                self.tags.push("NNS");
            }
            2 => {
                self.adjectives();
                self.tags.push("NNS");
            }
            3 => self.tags.push("PRP"),
            4 => {
                self.tags.push("NNP");
                if self.chance(0.3) {
                    self.tags.push("NNP");
                }
            }
            5 => {
                self.tags.push("PRP$");
                self.adjectives();
                self.tags.push("NN");
            }
            6 => self.tags.extend(["CD", "NNS"]),
            _ => {
                self.tags.extend(["DT", "NN"]);
                if allow_pp {
                    self.pp();
                }
            }
        }
    }

    fn adjectives(&mut self) {
        if self.chance(0.35) {
            if self.chance(0.15) {
                self.tags.push("RB");
            }
            self.tags.push("JJ");
        }
    }

    fn pp(&mut self) {
        self.tags.push("IN");
        self.np(false);
    }

    fn vp(&mut self) {
        if self.chance(0.1) {
            self.tags.push("RB");
        }
        match self.pick(&[0.28, 0.20, 0.15, 0.10, 0.10, 0.10, 0.07]) {
            0 => {
                self.tags.push("VBD");
                self.np(true);
                if self.chance(0.3) {
                    self.pp();
                }
            }
            1 => {
                self.tags.push("VBZ");
                self.np(true);
            }
            2 => {
                self.tags.extend(["MD", "VB"]);
                self.np(true);
            }
            3 => self.tags.extend(["VBD", "RB"]),
            4 => {
                self.tags.extend(["VBZ", "TO", "VB"]);
                self.np(false);
            }
            5 => {
                self.tags.push("VBD");
                self.pp();
            }
            _ => {
                self.tags.extend(["VBZ", "VBG"]);
                self.np(false);
            }
        }
    }
}

fn sample_domain(
    config: &SynthConfig,
    lexicon: &Lexicon,
    rng: &mut ChaCha8Rng,
    corpus_name: &str,
    epochs: &[String],
    target: bool,
) -> Corpus {
    let mut corpus = Corpus::new("PTB");
    let mut remaining = config.sentences_per_domain;
    let mut doc_index = 0;
    while remaining > 0 {
        let epoch = &epochs[doc_index % epochs.len()];
        let genre = &config.genres[(doc_index / epochs.len()) % config.genres.len()];
        let mut doc = Document::new(format!("{corpus_name}-{doc_index:04}"), corpus_name)
            .with_attribute("epoch", epoch.clone())
            .with_attribute("genre", genre.clone());
        let n = remaining.min(config.sentences_per_document);
        for _ in 0..n {
            let tags = Grammar { rng: &mut *rng, tags: Vec::new() }.sentence();
            let tokens = tags
                .into_iter()
                .enumerate()
                .map(|(i, tag)| {
                    let mut form = lexicon.draw(tag, rng, target);
                    if i == 0 && tag != "NNP" && rng.random_bool(0.3) {
                        form = capitalize(&form);
                    }
                    Token::new(form, tag)
                })
                .collect();
            doc.sentences.push(Sentence::new(tokens));
        }
        remaining -= n;
        doc_index += 1;
        corpus.documents.push(doc);
    }
    corpus
}

/// Distinct tags the grammar can emit.
pub fn synth_tagset() -> BTreeSet<&'static str> {
    ["DT", "JJ", "NN", "NNS", "NNP", "PRP", "PRP$", "VB", "VBD", "VBZ", "VBG", "MD", "IN", "TO", "RB", "CC", "CD", ",", "."]
        .into_iter()
        .collect()
}
