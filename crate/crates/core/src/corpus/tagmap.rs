use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Corpus;
use crate::error::{Error, Result};

/// The PCHE to PTB table shipped with the crate.
pub const BUNDLED_MAPPING: &str = include_str!("../../data/pche_ptb.tsv");

/// Reduces a complex tag such as `PRO+N` to its first component.
pub fn simplify_complex_tag(tag: &str) -> &str {
    match tag.find('+') {
        Some(i) => &tag[..i],
        None => tag,
    }
}

/// Deterministic source-to-target tag mapping over simple tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagMapper {
    pub name: String,
    pub mapping: BTreeMap<String, String>,
}

impl TagMapper {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED_MAPPING, "pche-ptb").expect("bundled mapping is well formed")
    }

    /// Parses `source<TAB>target` lines; `#` starts a comment line.
    pub fn parse(text: &str, name: &str) -> Result<Self> {
        let mut mapping = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.strip_suffix('\r').unwrap_or(line);
            if line.trim().is_empty() || (line.starts_with('#') && !line.contains('\t')) {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(src), Some(dst), None) if !src.is_empty() && !dst.is_empty() => {
                    if mapping.insert(src.to_string(), dst.to_string()).is_some() {
                        return Err(Error::parse(name, lineno + 1, format!("duplicate source tag `{src}`")));
                    }
                }
                _ => return Err(Error::parse(name, lineno + 1, "expected `source<TAB>target`")),
            }
        }
        if mapping.is_empty() {
            return Err(Error::Empty(format!("mapping {name} has no entries")));
        }
        Ok(TagMapper {
            name: name.to_string(),
            mapping,
        })
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&fs::read_to_string(path)?, &path.display().to_string())
    }

    /// Sends quantifiers to DT instead of JJ.
    pub fn with_q_remap(mut self) -> Self {
        if self.mapping.contains_key("Q") {
            self.mapping.insert("Q".into(), "DT".into());
        }
        self
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    /// Simplifies `tag` and maps it.
    pub fn map_tag(&self, tag: &str) -> Result<&str> {
        let simple = simplify_complex_tag(tag);
        self.mapping
            .get(simple)
            .map(String::as_str)
            .ok_or_else(|| Error::UnmappedTag(tag.to_string()))
    }

    pub fn map_corpus(&self, corpus: &Corpus, target_tagset: &str) -> Result<Corpus> {
        let mut out = corpus.clone();
        out.tagset_name = target_tagset.to_string();
        for doc in &mut out.documents {
            for sent in &mut doc.sentences {
                for tok in &mut sent.tokens {
                    tok.tag = self.map_tag(&tok.tag)?.to_string();
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplification() {
        assert_eq!(simplify_complex_tag("PRO+N"), "PRO");
        assert_eq!(simplify_complex_tag("ADJ+NS"), "ADJ");
        assert_eq!(simplify_complex_tag("NN"), "NN");
        assert_eq!(simplify_complex_tag("+"), "");
    }

    #[test]
    fn bundled_table_spot_checks() {
        let m = TagMapper::bundled();
        assert_eq!(m.len(), 83);
        assert_eq!(m.map_tag("BED").unwrap(), "VBD");
        assert_eq!(m.map_tag("Q").unwrap(), "JJ");
        assert_eq!(m.map_tag("PRO+N").unwrap(), "PRP");
        assert_eq!(m.map_tag("'").unwrap(), "''");
        assert_eq!(m.map_tag("\"").unwrap(), "''");
        assert_eq!(m.with_q_remap().map_tag("Q").unwrap(), "DT");
    }

    #[test]
    fn unmapped_tag_is_named() {
        let err = TagMapper::bundled().map_tag("ZZZ").unwrap_err();
        assert!(err.to_string().contains("ZZZ"));
    }

    #[test]
    fn parse_comments_and_errors() {
        let m = TagMapper::parse("# header\nA\tB\n\n#\tHASH\n", "t").unwrap();
        assert_eq!(m.map_tag("A").unwrap(), "B");
        assert_eq!(m.map_tag("#").unwrap(), "HASH");
        assert!(TagMapper::parse("A B\n", "t").is_err());
        assert!(TagMapper::parse("A\tB\nA\tC\n", "t").is_err());
        assert!(TagMapper::parse("# only comments\n", "t").is_err());
    }
}
