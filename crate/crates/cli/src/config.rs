//! Run configuration files and their merge with command-line flags.
//!
//! A config file is TOML with one table per concern:
//!
//! ```toml
//! [io]
//! input = ["data/source.txt"]
//! output = "runs/fema"
//!
//! [representation]
//! method = "fema"
//! dim = 50
//!
//! [run]
//! seed = 7
//! ```
//!
//! Flags win over the file; the file wins over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub io: IoSection,
    pub representation: RepresentationSection,
    pub tagger: TaggerSection,
    pub normalize: NormalizeSection,
    pub run: RunSection,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub input: Vec<PathBuf>,
    pub output: Option<PathBuf>,
    pub mapping: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RepresentationSection {
    pub method: Option<String>,
    pub dim: Option<usize>,
    pub neg: Option<usize>,
    pub window: Option<usize>,
    pub clusters: Option<usize>,
    pub pivot_min: Option<u64>,
    pub svd_k: Option<usize>,
    pub lambda_attr: Option<f64>,
    pub epochs: Option<usize>,
    pub attributes: Option<Vec<String>>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub c: Option<f64>,
    pub c_grid: Option<Vec<f64>>,
    pub dense_scale: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeSection {
    pub threshold: Option<f64>,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, UsageError> {
        let text = fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| UsageError(format!("bad config {}: {e}", path.display())))
    }

    /// Fills every field set in `over`, keeping ours otherwise.
    pub fn overlay(mut self, over: RunConfig) -> Self {
        macro_rules! take {
            ($($sec:ident . $f:ident),* $(,)?) => {
                $( if over.$sec.$f.is_some() { self.$sec.$f = over.$sec.$f; } )*
            };
        }
        if !over.io.input.is_empty() {
            self.io.input = over.io.input;
        }
        take!(
            io.output,
            io.mapping,
            representation.method,
            representation.dim,
            representation.neg,
            representation.window,
            representation.clusters,
            representation.pivot_min,
            representation.svd_k,
            representation.lambda_attr,
            representation.epochs,
            representation.attributes,
            tagger.c,
            tagger.c_grid,
            tagger.dense_scale,
            normalize.threshold,
            run.seed,
            run.threads,
        );
        self
    }

    /// Checks that every referenced input exists.
    pub fn validate(&self) -> Result<(), UsageError> {
        for p in self.io.input.iter().chain(&self.io.mapping) {
            if !p.exists() {
                return Err(UsageError(format!("{} does not exist", p.display())));
            }
        }
        if let Some(t) = self.normalize.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(UsageError(format!("--threshold must be in [0, 1], got {t}")));
            }
        }
        if self.run.threads == Some(0) {
            return Err(UsageError("--threads must be at least 1".into()));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.run.seed.unwrap_or(1)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig = toml::from_str("[run]\nseed = 3\nthreads = 2\n[tagger]\nc = 0.5\n").unwrap();
        let flags = RunConfig {
            run: RunSection {
                seed: Some(9),
                threads: None,
            },
            ..Default::default()
        };
        let merged = file.overlay(flags);
        assert_eq!(merged.run.seed, Some(9));
        assert_eq!(merged.run.threads, Some(2));
        assert_eq!(merged.tagger.c, Some(0.5));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<RunConfig>("[run]\nsede = 3\n").is_err());
    }

    #[test]
    fn archive_round_trip() {
        let cfg: RunConfig = toml::from_str("[io]\ninput = [\"a.txt\"]\n[representation]\nmethod = \"fema\"\ndim = 5\n").unwrap();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
