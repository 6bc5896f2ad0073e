use std::collections::BTreeSet;

use super::{Corpus, Document};

/// Binary document-attribute indicators. Index 0 is the shared attribute
/// every document carries; indices `1..=M` are `key=value` pairs.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AttributeSpace {
    attributes: Vec<(String, String)>,
}

impl AttributeSpace {
    /// Only the shared attribute (M = 0).
    pub fn shared_only() -> Self {
        AttributeSpace::default()
    }

    /// One indicator per distinct value of each key, sorted by key then value.
    pub fn from_corpora<'a>(corpora: impl IntoIterator<Item = &'a Corpus>, keys: &[&str]) -> Self {
        let mut set = BTreeSet::new();
        for c in corpora {
            for doc in &c.documents {
                for key in keys {
                    if let Some(v) = doc.attribute(key) {
                        set.insert((key.to_string(), v.to_string()));
                    }
                }
            }
        }
        AttributeSpace {
            attributes: set.into_iter().collect(),
        }
    }

    pub fn from_pairs(pairs: Vec<(String, String)>) -> Self {
        AttributeSpace { attributes: pairs }
    }

    /// M, the number of non-shared attributes.
    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    /// Length of z, i.e. M + 1.
    pub fn len(&self) -> usize {
        self.attributes.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn name(&self, m: usize) -> String {
        if m == 0 {
            "shared".to_string()
        } else {
            let (k, v) = &self.attributes[m - 1];
            format!("{k}={v}")
        }
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.attributes
    }

    pub fn indicator(&self, doc: &Document) -> Vec<bool> {
        std::iter::once(true)
            .chain(
                self.attributes
                    .iter()
                    .map(|(k, v)| doc.attribute(k) == Some(v.as_str())),
            )
            .collect()
    }
}
