//! Spelling normalization from replacement lexicons.
//!
//! Lexicon files carry one `form<TAB>replacement<TAB>confidence` row per
//! line. Only one-token replacements are kept; rows whose replacement
//! contains whitespace are dropped and counted.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use log::warn;

use crate::corpus::Corpus;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Replacement {
    pub form: String,
    pub confidence: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NormalizationLexicon {
    pub entries: BTreeMap<String, Replacement>,
    pub provenance: String,
    /// Rows dropped because the replacement spans more than one token.
    pub rejected_multi_token: usize,
}

impl NormalizationLexicon {
    pub fn new(provenance: impl Into<String>) -> Self {
        NormalizationLexicon {
            provenance: provenance.into(),
            ..Default::default()
        }
    }

    /// Adds a row, keeping the higher-confidence replacement on duplicates.
    pub fn insert(&mut self, form: &str, replacement: &str, confidence: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidArgument(format!(
                "confidence {confidence} for `{form}` is outside [0, 1]"
            )));
        }
        if replacement.split_whitespace().count() != 1 || form.split_whitespace().count() != 1 {
            self.rejected_multi_token += 1;
            return Ok(());
        }
        match self.entries.get(form) {
            Some(existing) if existing.confidence >= confidence => {}
            _ => {
                self.entries.insert(
                    form.to_string(),
                    Replacement {
                        form: replacement.to_string(),
                        confidence,
                    },
                );
            }
        }
        Ok(())
    }

    pub fn get(&self, form: &str) -> Option<&Replacement> {
        self.entries.get(form)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn parse(text: &str, provenance: &str) -> Result<Self> {
        let mut lex = NormalizationLexicon::new(provenance);
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(Error::parse(
                    provenance,
                    lineno + 1,
                    "expected `form<TAB>replacement<TAB>confidence`",
                ));
            }
            let confidence: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(provenance, lineno + 1, format!("bad confidence `{}`", cols[2])))?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(Error::parse(
                    provenance,
                    lineno + 1,
                    format!("confidence {confidence} outside [0, 1]"),
                ));
            }
            lex.insert(cols[0], cols[1], confidence)?;
        }
        if lex.rejected_multi_token > 0 {
            warn!(
                "{provenance}: ignored {} multi-token normalization(s)",
                lex.rejected_multi_token
            );
        }
        Ok(lex)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (form, r) in &self.entries {
            let _ = writeln!(out, "{form}\t{}\t{}", r.form, r.confidence);
        }
        out
    }
}

pub fn load_lexicon(path: impl AsRef<Path>) -> Result<NormalizationLexicon> {
    let path = path.as_ref();
    NormalizationLexicon::parse(&fs::read_to_string(path)?, &path.display().to_string())
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormalizationReport {
    pub tokens_seen: usize,
    pub tokens_replaced: usize,
    /// OOV counts against the reference vocabulary, when one was given.
    pub oov_before: Option<usize>,
    pub oov_after: Option<usize>,
}

impl NormalizationReport {
    pub fn replacement_rate(&self) -> f64 {
        ratio(self.tokens_replaced, self.tokens_seen)
    }

    pub fn oov_rate_before(&self) -> Option<f64> {
        self.oov_before.map(|n| ratio(n, self.tokens_seen))
    }

    pub fn oov_rate_after(&self) -> Option<f64> {
        self.oov_after.map(|n| ratio(n, self.tokens_seen))
    }

    /// Line-oriented `key=value` summary.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "tokens_seen={}", self.tokens_seen);
        let _ = writeln!(out, "tokens_replaced={}", self.tokens_replaced);
        let _ = writeln!(out, "replacement_rate={:.6}", self.replacement_rate());
        if let (Some(b), Some(a)) = (self.oov_before, self.oov_after) {
            let _ = writeln!(out, "oov_before={b}");
            let _ = writeln!(out, "oov_after={a}");
            let _ = writeln!(out, "oov_rate_before={:.6}", ratio(b, self.tokens_seen));
            let _ = writeln!(out, "oov_rate_after={:.6}", ratio(a, self.tokens_seen));
        }
        out
    }
}

fn ratio(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

/// Replaces every token whose form has a lexicon entry with confidence at
/// least `threshold`. Tags and structure are untouched.
pub fn apply_normalization(
    corpus: &Corpus,
    lexicon: &NormalizationLexicon,
    threshold: f64,
    reference_vocab: Option<&HashSet<String>>,
) -> Result<(Corpus, NormalizationReport)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold {threshold} outside [0, 1]")));
    }
    let mut replaced = 0;
    let out = corpus.map_forms(|form| match lexicon.get(form) {
        Some(r) if r.confidence >= threshold => {
            replaced += 1;
            r.form.clone()
        }
        _ => form.to_string(),
    });
    let (oov_before, oov_after) = match reference_vocab {
        Some(v) => (
            Some(corpus.tokens().filter(|t| !v.contains(&t.form)).count()),
            Some(out.tokens().filter(|t| !v.contains(&t.form)).count()),
        ),
        None => (None, None),
    };
    let report = NormalizationReport {
        tokens_seen: corpus.token_count(),
        tokens_replaced: replaced,
        oov_before,
        oov_after,
    };
    Ok((out, report))
}
