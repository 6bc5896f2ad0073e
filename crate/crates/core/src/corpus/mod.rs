//! Corpus data model and the line-oriented token file format.
//!
//! A token file holds one `form<TAB>tag` pair per line with a blank line
//! between sentences. In the directive-header format, runs of
//! `#meta key=value` lines open a new document and set its attributes:
//!
//! ```text
//! #meta id=letters-01
//! #meta corpus=PPCEME
//! #meta epoch=1500-1569
//! and	CONJ
//! drewe	VBD
//! ```
//!
//! A line starting with `#` is a directive only when it has no tab, so the
//! token `#` with tag `#` is still a regular token line.

mod attributes;
mod synth;
mod tagmap;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use synth::{synth_generate, synth_tagset, MutationRule, MutationTarget, SynthConfig, SynthOutput, SynthReport};
pub use attributes::AttributeSpace;
pub use tagmap::{simplify_complex_tag, TagMapper, BUNDLED_MAPPING};

/// Attribute every document carries.
pub const CORPUS_ATTRIBUTE: &str = "corpus";

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Token {
    pub form: String,
    pub tag: String,
}

impl Token {
    pub fn new(form: impl Into<String>, tag: impl Into<String>) -> Self {
        Token {
            form: form.into(),
            tag: tag.into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Sentence { tokens }
    }

    /// Builds a sentence from whitespace-separated forms, all tagged `tag`.
    pub fn from_forms(text: &str, tag: &str) -> Self {
        Sentence::new(text.split_whitespace().map(|f| Token::new(f, tag)).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn forms(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.form.as_str())
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.tag.as_str())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Document {
    pub id: String,
    pub attributes: BTreeMap<String, String>,
    pub sentences: Vec<Sentence>,
}

impl Document {
    pub fn new(id: impl Into<String>, corpus: impl Into<String>) -> Self {
        let mut attributes = BTreeMap::new();
        attributes.insert(CORPUS_ATTRIBUTE.to_string(), corpus.into());
        Document {
            id: id.into(),
            attributes,
            sentences: Vec::new(),
        }
    }

    pub fn with_attribute(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.attributes.insert(key.into(), value.into());
        self
    }

    pub fn attribute(&self, key: &str) -> Option<&str> {
        self.attributes.get(key).map(String::as_str)
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    pub tagset_name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FileFormat {
    TwoColumn,
    DirectiveHeader,
}

/// One row of [`corpus_stats`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StatsRow {
    pub value: String,
    pub sentences: usize,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CorpusStats {
    pub attribute: String,
    pub groups: Vec<StatsRow>,
    pub total: StatsRow,
}

impl CorpusStats {
    pub fn to_table(&self) -> String {
        let width = self
            .groups
            .iter()
            .map(|r| r.value.chars().count())
            .chain([self.attribute.len(), "Total".len()])
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}", self.attribute, "# Sentence", "# Token");
        for row in self.groups.iter().chain(std::iter::once(&self.total)) {
            let _ = writeln!(out, "{:<width$}  {:>10}  {:>10}", row.value, row.sentences, row.tokens);
        }
        out
    }
}

impl Corpus {
    pub fn new(tagset_name: impl Into<String>) -> Self {
        Corpus {
            documents: Vec::new(),
            tagset_name: tagset_name.into(),
        }
    }

    pub fn sentence_count(&self) -> usize {
        self.documents.iter().map(|d| d.sentences.len()).sum()
    }

    pub fn token_count(&self) -> usize {
        self.documents.iter().map(Document::token_count).sum()
    }

    pub fn sentences(&self) -> impl Iterator<Item = &Sentence> {
        self.documents.iter().flat_map(|d| d.sentences.iter())
    }

    /// Sentences paired with the document they belong to.
    pub fn sentences_with_docs(&self) -> impl Iterator<Item = (&Document, &Sentence)> {
        self.documents
            .iter()
            .flat_map(|d| d.sentences.iter().map(move |s| (d, s)))
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences().flat_map(|s| s.tokens.iter())
    }

    pub fn vocabulary(&self) -> HashSet<String> {
        self.tokens().map(|t| t.form.clone()).collect()
    }

    /// Distinct tags in order of first appearance.
    pub fn tag_inventory(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut tags = Vec::new();
        for tok in self.tokens() {
            if seen.insert(tok.tag.as_str()) {
                tags.push(tok.tag.clone());
            }
        }
        tags
    }

    /// Concatenates the documents of several corpora.
    pub fn union<'a>(corpora: impl IntoIterator<Item = &'a Corpus>) -> Corpus {
        let mut out = Corpus::default();
        for c in corpora {
            if out.tagset_name.is_empty() {
                out.tagset_name = c.tagset_name.clone();
            }
            out.documents.extend(c.documents.iter().cloned());
        }
        out
    }

    /// Returns a copy with every token form rewritten by `f`; tags and
    /// structure are preserved.
    pub fn map_forms(&self, mut f: impl FnMut(&str) -> String) -> Corpus {
        let mut out = self.clone();
        for doc in &mut out.documents {
            for sent in &mut doc.sentences {
                for tok in &mut sent.tokens {
                    tok.form = f(&tok.form);
                }
            }
        }
        out
    }

    pub fn read(path: impl AsRef<Path>, format: FileFormat) -> Result<Corpus> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "corpus".to_string());
        parse_corpus(&text, &path.display().to_string(), &name, format)
    }

    /// Serializes in the directive-header format.
    pub fn to_directive_text(&self) -> String {
        let mut out = String::new();
        for doc in &self.documents {
            let _ = writeln!(out, "#meta id={}", doc.id);
            for (k, v) in &doc.attributes {
                let _ = writeln!(out, "#meta {k}={v}");
            }
            for sent in &doc.sentences {
                for tok in &sent.tokens {
                    let _ = writeln!(out, "{}\t{}", tok.form, tok.tag);
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_directive_text())?;
        Ok(())
    }
}

/// Parses token-file text. `default_corpus` names the corpus attribute for
/// documents that do not declare one.
pub fn parse_corpus(
    text: &str,
    source_name: &str,
    default_corpus: &str,
    format: FileFormat,
) -> Result<Corpus> {
    let mut corpus = Corpus::new("");
    let mut doc: Option<Document> = None;
    let mut sentence = Vec::new();
    // true while the current document has only seen directives
    let mut in_header = false;

    let finish_doc = |doc: Option<Document>, corpus: &mut Corpus| {
        if let Some(mut d) = doc {
            d.attributes
                .entry(CORPUS_ATTRIBUTE.to_string())
                .or_insert_with(|| default_corpus.to_string());
            if d.id.is_empty() {
                d.id = format!("doc{}", corpus.documents.len());
            }
            corpus.documents.push(d);
        }
    };

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);

        if line.trim().is_empty() {
            if !sentence.is_empty() {
                let d = doc.get_or_insert_with(Document::default);
                d.sentences.push(Sentence::new(std::mem::take(&mut sentence)));
            }
            continue;
        }

        if line.starts_with('#') && !line.contains('\t') {
            if format == FileFormat::TwoColumn {
                return Err(Error::parse(source_name, lineno, "directives are not allowed in two-column files"));
            }
            let body = line
                .strip_prefix("#meta ")
                .ok_or_else(|| Error::parse(source_name, lineno, format!("unknown directive `{line}`")))?;
            let (key, value) = body
                .trim()
                .split_once('=')
                .ok_or_else(|| Error::parse(source_name, lineno, "expected `#meta key=value`"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() || value.is_empty() {
                return Err(Error::parse(source_name, lineno, "empty attribute key or value"));
            }
            if !sentence.is_empty() {
                let d = doc.get_or_insert_with(Document::default);
                d.sentences.push(Sentence::new(std::mem::take(&mut sentence)));
            }
            if !in_header {
                finish_doc(doc.take(), &mut corpus);
                doc = Some(Document::default());
                in_header = true;
            }
            let d = doc.as_mut().expect("document opened above");
            if key == "id" {
                d.id = value.to_string();
            } else if d.attributes.insert(key.to_string(), value.to_string()).is_some() {
                return Err(Error::parse(source_name, lineno, format!("duplicate attribute `{key}`")));
            }
            continue;
        }

        in_header = false;
        let mut cols = line.split('\t');
        let (form, tag) = match (cols.next(), cols.next(), cols.next()) {
            (Some(f), Some(t), None) if !f.is_empty() && !t.is_empty() => (f, t),
            _ => {
                return Err(Error::parse(
                    source_name,
                    lineno,
                    format!("expected `form<TAB>tag`, got {} column(s)", line.split('\t').count()),
                ))
            }
        };
        sentence.push(Token::new(form, tag));
    }

    if !sentence.is_empty() {
        doc.get_or_insert_with(Document::default)
            .sentences
            .push(Sentence::new(sentence));
    }
    finish_doc(doc, &mut corpus);
    corpus.documents.retain(|d| !d.sentences.is_empty());

    if corpus.token_count() == 0 {
        return Err(Error::Empty(format!("{source_name} contains no tokens")));
    }
    Ok(corpus)
}

pub fn parse_corpus_file(path: impl AsRef<Path>, format: FileFormat) -> Result<Corpus> {
    Corpus::read(path, format)
}

/// Sentence and token counts grouped by a document attribute, in order of
/// first appearance, plus a total row.
pub fn corpus_stats(corpus: &Corpus, group_by: &str) -> Result<CorpusStats> {
    let mut order: Vec<String> = Vec::new();
    let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
    for doc in &corpus.documents {
        let value = doc
            .attribute(group_by)
            .ok_or_else(|| Error::UnknownAttribute(group_by.to_string()))?;
        let entry = counts.entry(value.to_string()).or_insert_with(|| {
            order.push(value.to_string());
            (0, 0)
        });
        entry.0 += doc.sentences.len();
        entry.1 += doc.token_count();
    }
    if corpus.documents.is_empty() {
        return Err(Error::Empty("corpus has no documents".into()));
    }
    let groups: Vec<StatsRow> = order
        .into_iter()
        .map(|value| {
            let (sentences, tokens) = counts[&value];
            StatsRow { value, sentences, tokens }
        })
        .collect();
    let total = StatsRow {
        value: "Total".into(),
        sentences: groups.iter().map(|r| r.sentences).sum(),
        tokens: groups.iter().map(|r| r.tokens).sum(),
    };
    Ok(CorpusStats {
        attribute: group_by.to_string(),
        groups,
        total,
    })
}

/// Uniform sentence-level split without replacement.
///
/// The dev part holds `round(dev_fraction * N)` sentences, clamped to
/// `1..=N-1` so neither side is empty. Document structure and sentence
/// order are kept on both sides.
pub fn split_train_dev(corpus: &Corpus, dev_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(dev_fraction > 0.0 && dev_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "dev fraction must be in (0, 1), got {dev_fraction}"
        )));
    }
    let n = corpus.sentence_count();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 sentences to split, got {n}"
        )));
    }
    let dev_size = ((dev_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_dev = vec![false; n];
    for &i in &order[..dev_size] {
        is_dev[i] = true;
    }

    let mut train = Corpus::new(corpus.tagset_name.clone());
    let mut dev = Corpus::new(corpus.tagset_name.clone());
    let mut idx = 0;
    for doc in &corpus.documents {
        let mut tr = Document {
            sentences: Vec::new(),
            ..doc.clone()
        };
        let mut dv = tr.clone();
        for sent in &doc.sentences {
            if is_dev[idx] {
                dv.sentences.push(sent.clone());
            } else {
                tr.sentences.push(sent.clone());
            }
            idx += 1;
        }
        if !tr.sentences.is_empty() {
            train.documents.push(tr);
        }
        if !dv.sentences.is_empty() {
            dev.documents.push(dv);
        }
    }
    Ok((train, dev))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIGURE_ONE: &str = "and drewe vnto hym all ryottours & wylde dysposed persones";

    fn two_column(text: &str) -> Result<Corpus> {
        parse_corpus(text, "test", "TEST", FileFormat::TwoColumn)
    }

    #[test]
    fn parses_figure_one_sentence() {
        let text: String = FIGURE_ONE
            .split_whitespace()
            .map(|w| format!("{w}\tX\n"))
            .collect();
        let c = two_column(&text).unwrap();
        assert_eq!(c.sentence_count(), 1);
        assert_eq!(c.token_count(), 10);
        assert_eq!(c.documents[0].attribute("corpus"), Some("TEST"));

        // without the ampersand
        let text: String = FIGURE_ONE
            .split_whitespace()
            .filter(|w| *w != "&")
            .map(|w| format!("{w}\tX\n"))
            .collect();
        let c = two_column(&text).unwrap();
        assert_eq!((c.sentence_count(), c.token_count()), (1, 9));
    }

    #[test]
    fn counts_sentences_and_tokens() {
        let c = two_column("a\tDT\nb\tNN\n\nc\tDT\nd\tNN\ne\t.\n").unwrap();
        assert_eq!(c.sentence_count(), 2);
        assert_eq!(c.token_count(), 5);
    }

    #[test]
    fn multiple_blank_lines_and_crlf() {
        let c = two_column("a\tDT\r\n\r\n\r\nb\tNN\r\n").unwrap();
        assert_eq!(c.sentence_count(), 2);
        assert_eq!(c.tokens().nth(1).unwrap().tag, "NN");
    }

    #[test]
    fn reports_line_of_malformed_row() {
        let err = two_column("a\tDT\nb NN\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
        assert!(matches!(two_column("a\tDT\textra\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(two_column("\tDT\n"), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn empty_file_is_an_error() {
        assert!(matches!(two_column(""), Err(Error::Empty(_))));
        assert!(matches!(two_column("\n\n"), Err(Error::Empty(_))));
    }

    #[test]
    fn directives_open_documents() {
        let text = "#meta id=d1\n#meta corpus=PPCEME\n#meta epoch=1500-1569\na\tD\nb\tN\n\n\
                    #meta id=d2\n#meta epoch=1570-1639\nc\tN\n";
        let c = parse_corpus(text, "t", "FALLBACK", FileFormat::DirectiveHeader).unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.documents[0].id, "d1");
        assert_eq!(c.documents[0].attribute("corpus"), Some("PPCEME"));
        assert_eq!(c.documents[1].attribute("corpus"), Some("FALLBACK"));
        assert_eq!(c.documents[1].attribute("epoch"), Some("1570-1639"));
        assert_eq!(c.token_count(), 3);
    }

    #[test]
    fn hash_token_is_not_a_directive() {
        let c = parse_corpus("#\t#\nx\tNN\n", "t", "T", FileFormat::DirectiveHeader).unwrap();
        assert_eq!(c.tokens().next().unwrap().form, "#");
    }

    #[test]
    fn unknown_and_misplaced_directives() {
        let e = parse_corpus("#include foo\na\tB\n", "t", "T", FileFormat::DirectiveHeader).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = two_column("#meta a=b\nx\tY\n").unwrap_err();
        assert!(matches!(e, Error::Parse { line: 1, .. }));
        let e = parse_corpus("#meta a=b\n#meta a=c\nx\tY\n", "t", "T", FileFormat::DirectiveHeader).unwrap_err();
        assert!(matches!(e, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn directive_text_round_trips() {
        let text = "#meta id=d1\n#meta corpus=C\n#meta genre=Letters\na\tD\nb\tN\n\nc\tN\n\n";
        let c = parse_corpus(text, "t", "T", FileFormat::DirectiveHeader).unwrap();
        let again = parse_corpus(&c.to_directive_text(), "t", "T", FileFormat::DirectiveHeader).unwrap();
        assert_eq!(c, again);
    }

    fn doc(id: &str, epoch: &str, sentence_lengths: &[usize]) -> Document {
        let mut d = Document::new(id, "C").with_attribute("epoch", epoch);
        for &n in sentence_lengths {
            d.sentences
                .push(Sentence::new((0..n).map(|i| Token::new(format!("w{i}"), "NN")).collect()));
        }
        d
    }

    #[test]
    fn stats_group_and_total() {
        let mut c = Corpus::new("PTB");
        c.documents.push(doc("a", "1840-1914", &[3, 4]));
        c.documents.push(doc("b", "1770-1839", &[2]));
        c.documents.push(doc("c", "1840-1914", &[1]));
        let s = corpus_stats(&c, "epoch").unwrap();
        assert_eq!(s.groups.len(), 2);
        assert_eq!(s.groups[0], StatsRow { value: "1840-1914".into(), sentences: 3, tokens: 8 });
        assert_eq!(s.total.sentences, c.sentence_count());
        assert_eq!(s.total.tokens, c.token_count());
        assert!(s.to_table().contains("Total"));
        assert!(matches!(corpus_stats(&c, "genre"), Err(Error::UnknownAttribute(_))));
    }

    #[test]
    fn stats_single_document() {
        let mut c = Corpus::new("PTB");
        c.documents.push(doc("a", "x", &[1, 2, 3]));
        let s = corpus_stats(&c, "corpus").unwrap();
        assert_eq!(s.groups.len(), 1);
        assert_eq!(s.groups[0].sentences, s.total.sentences);
        assert_eq!(s.groups[0].tokens, s.total.tokens);
    }

    fn hundred_sentences() -> Corpus {
        let mut c = Corpus::new("PTB");
        for d in 0..4 {
            let mut dd = Document::new(format!("d{d}"), "C");
            for s in 0..25 {
                dd.sentences.push(Sentence::new(vec![Token::new(format!("s{d}_{s}"), "NN")]));
            }
            c.documents.push(dd);
        }
        c
    }

    #[test]
    fn split_is_disjoint_partition() {
        let c = hundred_sentences();
        let (train, dev) = split_train_dev(&c, 0.10, 3).unwrap();
        assert_eq!(train.sentence_count(), 90);
        assert_eq!(dev.sentence_count(), 10);
        let tv = train.vocabulary();
        assert!(dev.tokens().all(|t| !tv.contains(&t.form)));
        assert_eq!(tv.len() + dev.vocabulary().len(), 100);
    }

    #[test]
    fn split_forced_sizes_and_errors() {
        let mut c = Corpus::new("X");
        c.documents.push(doc("a", "e", &[1, 1]));
        let (t, d) = split_train_dev(&c, 0.5, 0).unwrap();
        assert_eq!((t.sentence_count(), d.sentence_count()), (1, 1));

        let mut one = Corpus::new("X");
        one.documents.push(doc("a", "e", &[1]));
        assert!(split_train_dev(&one, 0.5, 0).is_err());
        assert!(split_train_dev(&c, 0.0, 0).is_err());
        assert!(split_train_dev(&c, 1.0, 0).is_err());
    }

    #[test]
    fn split_is_seed_reproducible() {
        let c = hundred_sentences();
        let a = split_train_dev(&c, 0.1, 11).unwrap();
        let b = split_train_dev(&c, 0.1, 11).unwrap();
        assert_eq!(a, b);
        let other = split_train_dev(&c, 0.1, 12).unwrap();
        assert_ne!(a.1.vocabulary(), other.1.vocabulary());
    }
}
