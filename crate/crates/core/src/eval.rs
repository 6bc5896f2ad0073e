//! Accuracy reports split by in-vocabulary and out-of-vocabulary tokens,
//! per-tag error mining, feature ablations and error-overlap analysis.
//!
//! A token is OOV when its exact form never occurs in the labeled
//! training corpus.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt::Write as _;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::features::{FeatureGroup, FeatureVocabulary, TemplateMask};
use crate::representations::Representation;
use crate::tagger::{train_tagger, TaggerConfig};

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagError {
    pub word: String,
    pub predicted: String,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagRow {
    pub tag: String,
    pub count: usize,
    pub oov_count: usize,
    pub correct: usize,
    pub top_error: Option<TagError>,
}

impl TagRow {
    pub fn oov_fraction(&self) -> f64 {
        ratio(self.oov_count, self.count)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.count)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EvalReport {
    pub iv_tokens: usize,
    pub oov_tokens: usize,
    pub iv_correct: usize,
    pub oov_correct: usize,
    /// Sorted by gold frequency, most frequent first.
    pub tags: Vec<TagRow>,
}

/// Overall accuracy from the IV/OOV split: `(1 - r)·iv + r·oov`.
pub fn decomposed_accuracy(iv_accuracy: f64, oov_accuracy: f64, oov_rate: f64) -> f64 {
    (1.0 - oov_rate) * iv_accuracy + oov_rate * oov_accuracy
}

impl EvalReport {
    pub fn tokens(&self) -> usize {
        self.iv_tokens + self.oov_tokens
    }

    pub fn correct(&self) -> usize {
        self.iv_correct + self.oov_correct
    }

    pub fn overall(&self) -> f64 {
        ratio(self.correct(), self.tokens())
    }

    pub fn iv_accuracy(&self) -> f64 {
        ratio(self.iv_correct, self.iv_tokens)
    }

    pub fn oov_accuracy(&self) -> f64 {
        ratio(self.oov_correct, self.oov_tokens)
    }

    pub fn oov_rate(&self) -> f64 {
        ratio(self.oov_tokens, self.tokens())
    }

    pub fn summary_table(&self) -> String {
        format!(
            "{:>8}  {:>8}  {:>8}  {:>8}\n{:>8.2}  {:>8.2}  {:>8.2}  {:>8.2}\n",
            "IV",
            "OOV",
            "All",
            "%OOV",
            self.iv_accuracy() * 100.0,
            self.oov_accuracy() * 100.0,
            self.overall() * 100.0,
            self.oov_rate() * 100.0
        )
    }

    pub fn per_tag_table(&self) -> String {
        let w = self.tags.iter().map(|r| r.tag.len()).max().unwrap_or(3).max(3);
        let mut out = format!("{:<w$}  {:>7}  {:>6}  {:>8}  most common error\n", "tag", "count", "%OOV", "accuracy");
        for r in &self.tags {
            let err = r
                .top_error
                .as_ref()
                .map(|e| format!("{}/{} ({})", e.word, e.predicted, e.count))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "{:<w$}  {:>7}  {:>6.2}  {:>8.2}  {err}",
                r.tag,
                r.count,
                r.oov_fraction() * 100.0,
                r.recall() * 100.0
            );
        }
        out
    }

    /// Machine-readable `key<TAB>value` lines.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in [
            ("tokens", self.tokens().to_string()),
            ("correct", self.correct().to_string()),
            ("iv_tokens", self.iv_tokens.to_string()),
            ("iv_correct", self.iv_correct.to_string()),
            ("oov_tokens", self.oov_tokens.to_string()),
            ("oov_correct", self.oov_correct.to_string()),
            ("overall", format!("{:.6}", self.overall())),
            ("iv_accuracy", format!("{:.6}", self.iv_accuracy())),
            ("oov_accuracy", format!("{:.6}", self.oov_accuracy())),
            ("oov_rate", format!("{:.6}", self.oov_rate())),
        ] {
            let _ = writeln!(out, "{k}\t{v}");
        }
        for r in &self.tags {
            let err = r
                .top_error
                .as_ref()
                .map(|e| format!("{} {} {}", e.word, e.predicted, e.count))
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                out,
                "tag.{}\t{} {} {} {:.6} {err}",
                r.tag,
                r.count,
                r.oov_count,
                r.correct,
                r.recall()
            );
        }
        out
    }
}

/// Scores predictions against the gold tags of `gold`, in corpus token
/// order.
pub fn evaluate(gold: &Corpus, predicted: &[String], train_vocab: &HashSet<String>) -> Result<EvalReport> {
    let n = gold.token_count();
    if predicted.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: predicted.len(),
        });
    }
    let mut report = EvalReport {
        iv_tokens: 0,
        oov_tokens: 0,
        iv_correct: 0,
        oov_correct: 0,
        tags: Vec::new(),
    };
    let mut rows: HashMap<&str, TagRow> = HashMap::new();
    let mut errors: HashMap<(&str, &str, &str), usize> = HashMap::new();
    for (tok, pred) in gold.tokens().zip(predicted) {
        let oov = !train_vocab.contains(&tok.form);
        let ok = tok.tag == *pred;
        if oov {
            report.oov_tokens += 1;
            report.oov_correct += ok as usize;
        } else {
            report.iv_tokens += 1;
            report.iv_correct += ok as usize;
        }
        let row = rows.entry(&tok.tag).or_insert_with(|| TagRow {
            tag: tok.tag.clone(),
            count: 0,
            oov_count: 0,
            correct: 0,
            top_error: None,
        });
        row.count += 1;
        row.oov_count += oov as usize;
        row.correct += ok as usize;
        if !ok {
            *errors.entry((&tok.tag, &tok.form, pred)).or_default() += 1;
        }
    }
    for ((tag, word, pred), count) in errors {
        let row = rows.get_mut(tag).expect("row exists for every gold tag");
        let better = match &row.top_error {
            None => true,
            Some(e) => count > e.count || (count == e.count && (word, pred) < (e.word.as_str(), e.predicted.as_str())),
        };
        if better {
            row.top_error = Some(TagError {
                word: word.to_string(),
                predicted: pred.to_string(),
                count,
            });
        }
    }
    report.tags = rows.into_values().collect();
    report.tags.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.tag.cmp(&b.tag)));
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OverlapReport {
    pub a_name: String,
    pub b_name: String,
    /// Token positions wrong under the baseline and right under A.
    pub corrected_a: BTreeSet<usize>,
    pub corrected_b: BTreeSet<usize>,
    pub both: BTreeSet<usize>,
}

impl OverlapReport {
    /// Share of A's corrections that B also makes; 0 when A corrects
    /// nothing.
    pub fn fraction_of_a(&self) -> f64 {
        ratio(self.both.len(), self.corrected_a.len())
    }

    pub fn fraction_of_b(&self) -> f64 {
        ratio(self.both.len(), self.corrected_b.len())
    }

    pub fn a_denominator_zero(&self) -> bool {
        self.corrected_a.is_empty()
    }

    pub fn b_denominator_zero(&self) -> bool {
        self.corrected_b.is_empty()
    }

    pub fn to_text(&self) -> String {
        let flag = |z: bool| if z { " (zero denominator)" } else { "" };
        format!(
            "corrected by {a}: {}\ncorrected by {b}: {}\ncorrected by both: {}\nshare of {a} corrections also made by {b}: {:.2}%{}\nshare of {b} corrections also made by {a}: {:.2}%{}\n",
            self.corrected_a.len(),
            self.corrected_b.len(),
            self.both.len(),
            self.fraction_of_a() * 100.0,
            flag(self.a_denominator_zero()),
            self.fraction_of_b() * 100.0,
            flag(self.b_denominator_zero()),
            a = self.a_name,
            b = self.b_name,
        )
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "corrected_a\t{}\ncorrected_b\t{}\nboth\t{}\nfraction_of_a\t{:.6}\nfraction_of_b\t{:.6}\na_zero_denominator\t{}\nb_zero_denominator\t{}\n",
            self.corrected_a.len(),
            self.corrected_b.len(),
            self.both.len(),
            self.fraction_of_a(),
            self.fraction_of_b(),
            self.a_denominator_zero(),
            self.b_denominator_zero()
        )
    }
}

fn gold_tags(gold: &Corpus) -> Vec<&str> {
    gold.tokens().map(|t| t.tag.as_str()).collect()
}

pub fn error_overlap(
    gold: &Corpus,
    baseline: &[String],
    a: (&str, &[String]),
    b: (&str, &[String]),
) -> Result<OverlapReport> {
    let g = gold_tags(gold);
    for p in [baseline, a.1, b.1] {
        if p.len() != g.len() {
            return Err(Error::LengthMismatch {
                expected: g.len(),
                actual: p.len(),
            });
        }
    }
    let corrected = |sys: &[String]| -> BTreeSet<usize> {
        (0..g.len())
            .filter(|&i| baseline[i] != g[i] && sys[i] == g[i])
            .collect()
    };
    let corrected_a = corrected(a.1);
    let corrected_b = corrected(b.1);
    let both = corrected_a.intersection(&corrected_b).copied().collect();
    Ok(OverlapReport {
        a_name: a.0.to_string(),
        b_name: b.0.to_string(),
        corrected_a,
        corrected_b,
        both,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    /// `None` for the all-features row.
    pub dropped: Option<FeatureGroup>,
    pub report: EvalReport,
}

impl AblationRow {
    pub fn label(&self) -> String {
        match self.dropped {
            None => "All features".into(),
            Some(g) => format!("-- {}", g.name()),
        }
    }
}

pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<18}  {:>6}  {:>6}  {:>6}\n", "features", "IV", "OOV", "All");
    for r in rows {
        let _ = writeln!(
            out,
            "{:<18}  {:>6.2}  {:>6.2}  {:>6.2}",
            r.label(),
            r.report.iv_accuracy() * 100.0,
            r.report.oov_accuracy() * 100.0,
            r.report.overall() * 100.0
        );
    }
    out
}

/// Trains and evaluates the all-features tagger and one tagger per
/// dropped group.
pub fn ablation_run(
    train: &Corpus,
    test: &Corpus,
    vocab: &FeatureVocabulary,
    sources: &[&dyn Representation],
    config: &TaggerConfig,
    drop: &[FeatureGroup],
) -> Result<Vec<AblationRow>> {
    let train_vocab = train.vocabulary();
    let mut rows = Vec::with_capacity(drop.len() + 1);
    for dropped in std::iter::once(None).chain(drop.iter().copied().map(Some)) {
        let templates = match dropped {
            None => config.templates,
            Some(g) => TemplateMask::from_bits(config.templates.bits() & TemplateMask::without(&[g]).bits()),
        };
        if templates.is_empty() && sources.is_empty() {
            return Err(Error::InvalidArgument(format!(
                "dropping {} leaves no features",
                dropped.map_or("nothing", |g| g.name())
            )));
        }
        let cfg = TaggerConfig {
            templates,
            ..config.clone()
        };
        let model = train_tagger(train, vocab, sources, &cfg)?;
        let pred = model.tag_corpus(sources, test)?;
        rows.push(AblationRow {
            dropped,
            report: evaluate(test, &pred, &train_vocab)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, Sentence, Token};

    fn corpus(words: &[(&str, &str)]) -> Corpus {
        let mut c = Corpus::new("T");
        let mut d = Document::new("d", "C");
        d.sentences
            .push(Sentence::new(words.iter().map(|(w, t)| Token::new(*w, *t)).collect()));
        c.documents.push(d);
        c
    }

    fn tags(t: &[&str]) -> Vec<String> {
        t.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn two_token_example() {
        let gold = corpus(&[("the", "DT"), ("dogge", "NN")]);
        let vocab: HashSet<String> = ["the".to_string()].into();
        let r = evaluate(&gold, &tags(&["DT", "VB"]), &vocab).unwrap();
        assert_eq!((r.overall(), r.iv_accuracy(), r.oov_accuracy(), r.oov_rate()), (0.5, 1.0, 0.0, 0.5));
        let nn = r.tags.iter().find(|t| t.tag == "NN").unwrap();
        assert_eq!(
            nn.top_error,
            Some(TagError {
                word: "dogge".into(),
                predicted: "VB".into(),
                count: 1
            })
        );
        assert!(evaluate(&gold, &tags(&["DT"]), &vocab).is_err());
    }

    #[test]
    fn perfect_predictions() {
        let gold = corpus(&[("a", "DT"), ("b", "NN"), ("c", "NN")]);
        let vocab: HashSet<String> = ["a".to_string()].into();
        let r = evaluate(&gold, &tags(&["DT", "NN", "NN"]), &vocab).unwrap();
        assert_eq!((r.overall(), r.iv_accuracy(), r.oov_accuracy()), (1.0, 1.0, 1.0));
        assert!(r.tags.iter().all(|t| t.top_error.is_none()));
        assert_eq!(r.tags[0].tag, "NN");
    }

    #[test]
    fn top_error_ties_are_lexicographic() {
        let gold = corpus(&[("b", "NN"), ("a", "NN"), ("a", "NN"), ("b", "NN")]);
        let r = evaluate(&gold, &tags(&["VB", "VB", "JJ", "JJ"]), &HashSet::new()).unwrap();
        let e = r.tags[0].top_error.clone().unwrap();
        assert_eq!((e.word.as_str(), e.predicted.as_str()), ("a", "JJ"));
    }

    #[test]
    fn overlap_set_arithmetic() {
        let gold = corpus(&[("w", "X"), ("w", "X"), ("w", "X"), ("w", "X"), ("w", "X")]);
        let base = tags(&["X", "Y", "Y", "Y", "Y"]);
        let a = tags(&["X", "X", "X", "X", "Y"]);
        let b = tags(&["X", "Y", "X", "X", "X"]);
        let r = error_overlap(&gold, &base, ("a", &a), ("b", &b)).unwrap();
        assert_eq!(r.both.len(), 2);
        assert!((r.fraction_of_a() - 2.0 / 3.0).abs() < 1e-15);
        assert!((r.fraction_of_b() - 2.0 / 3.0).abs() < 1e-15);

        let r = error_overlap(&gold, &base, ("a", &a), ("b", &base)).unwrap();
        assert!(r.corrected_b.is_empty() && r.b_denominator_zero());
        assert_eq!((r.fraction_of_a(), r.fraction_of_b()), (0.0, 0.0));
    }
}
