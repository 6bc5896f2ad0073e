//! End-to-end synthetic adaptation experiment: generate a shifted corpus
//! pair, train every representation, tag the target domain with each
//! augmented tagger, normalize, and compare.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use log::info;

use crate::corpus::{split_train_dev, synth_generate, AttributeSpace, Corpus, SynthConfig, SynthReport};
use crate::error::Result;
use crate::eval::{error_overlap, evaluate, EvalReport, OverlapReport};
use crate::features::build_vocabulary;
use crate::normalize::{apply_normalization, NormalizationReport};
use crate::representations::{
    train_brown, train_fema, train_scl, train_word_embeddings, BrownConfig, FemaConfig, Representation, SclConfig,
    SkipgramConfig,
};
use crate::tagger::{c_grid, sweep, train_tagger, SweepResult, TaggerConfig};

pub const BASELINE: &str = "Baseline";
pub const SCL: &str = "SCL";
pub const BROWN: &str = "Brown";
pub const SKIPGRAM: &str = "word2vec";
pub const FEMA_SINGLE: &str = "FEMA-single";
pub const FEMA_ATTR: &str = "FEMA-attribute";
pub const NORMALIZED: &str = "Baseline + normalization";
pub const NORMALIZED_FEMA: &str = "FEMA-single + normalization";

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateConfig {
    pub synth: SynthConfig,
    pub dev_fraction: f64,
    pub c_grid: Vec<f64>,
    pub tagger: TaggerConfig,
    pub fema: FemaConfig,
    /// Document attributes used by the attribute-aware FEMA model.
    pub attribute_keys: Vec<String>,
    pub scl: SclConfig,
    pub brown: BrownConfig,
    pub skipgram: SkipgramConfig,
    pub threshold: f64,
    /// Skip the SCL, Brown and skipgram rows.
    pub fema_only: bool,
}

impl Default for ReplicateConfig {
    fn default() -> Self {
        ReplicateConfig {
            synth: SynthConfig::default(),
            dev_fraction: 0.1,
            c_grid: vec![0.1, 0.3, 0.5, 0.8, 1.0],
            tagger: TaggerConfig::default(),
            fema: FemaConfig {
                dim: 50,
                negatives: 5,
                epochs: 3,
                ..FemaConfig::default()
            },
            attribute_keys: vec!["epoch".into(), "genre".into()],
            scl: SclConfig {
                epochs: 2,
                ..SclConfig::default()
            },
            brown: BrownConfig {
                clusters: 100,
                window: None,
            },
            skipgram: SkipgramConfig {
                dim: 50,
                negatives: 5,
                epochs: 3,
                ..SkipgramConfig::default()
            },
            threshold: 0.5,
            fema_only: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemResult {
    pub name: String,
    pub report: EvalReport,
    pub predictions: Vec<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateResult {
    pub seed: u64,
    pub synth: SynthReport,
    pub sweep: SweepResult,
    /// Source dev accuracy of the selected baseline.
    pub dev_accuracy: f64,
    pub normalization: NormalizationReport,
    pub systems: Vec<SystemResult>,
    /// Corrections by normalization (A) and FEMA-single (B) against the
    /// baseline.
    pub overlap: OverlapReport,
}

impl ReplicateResult {
    pub fn system(&self, name: &str) -> Option<&SystemResult> {
        self.systems.iter().find(|s| s.name == name)
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "seed {}  target OOV rate {:.2}%  selected C {}  source dev accuracy {:.2}\n",
            self.seed,
            self.synth.target_oov_rate * 100.0,
            self.sweep.best().config.c,
            self.dev_accuracy * 100.0
        );
        out.push_str(&system_table(
            self.systems.iter().map(|s| (s.name.as_str(), [s.report.iv_accuracy(), s.report.oov_accuracy(), s.report.overall()])),
        ));
        out
    }
}

fn system_table<'a>(rows: impl Iterator<Item = (&'a str, [f64; 3])>) -> String {
    let mut out = format!("{:<28}  {:>6}  {:>6}  {:>6}\n", "system", "IV", "OOV", "All");
    for (name, [iv, oov, all]) in rows {
        let _ = writeln!(out, "{name:<28}  {:>6.2}  {:>6.2}  {:>6.2}", iv * 100.0, oov * 100.0, all * 100.0);
    }
    out
}

/// Mean IV/OOV/overall per system across seeds, in first-seen order.
pub fn mean_table(results: &[ReplicateResult]) -> String {
    let mut order = Vec::new();
    let mut sums: BTreeMap<String, ([f64; 3], usize)> = BTreeMap::new();
    for r in results {
        for s in &r.systems {
            let e = sums.entry(s.name.clone()).or_insert_with(|| {
                order.push(s.name.clone());
                ([0.0; 3], 0)
            });
            e.0[0] += s.report.iv_accuracy();
            e.0[1] += s.report.oov_accuracy();
            e.0[2] += s.report.overall();
            e.1 += 1;
        }
    }
    let rows: Vec<(String, [f64; 3])> = order
        .into_iter()
        .map(|n| {
            let (s, k) = sums[&n];
            (n, s.map(|x| x / k as f64))
        })
        .collect();
    format!(
        "mean over {} seed(s)\n{}",
        results.len(),
        system_table(rows.iter().map(|(n, v)| (n.as_str(), *v)))
    )
}

struct Runner<'a> {
    train: &'a Corpus,
    target: &'a Corpus,
    tagger: TaggerConfig,
    systems: Vec<SystemResult>,
}

impl Runner<'_> {
    fn run(&mut self, name: &str, test: &Corpus, vocab: &crate::features::FeatureVocabulary, sources: &[&dyn Representation], started: Instant) -> Result<()> {
        let model = train_tagger(self.train, vocab, sources, &self.tagger)?;
        let predictions = model.tag_corpus(sources, test)?;
        let report = evaluate(self.target, &predictions, &self.train.vocabulary())?;
        let seconds = started.elapsed().as_secs_f64();
        info!(
            "{name}: overall {:.2}, OOV {:.2} ({seconds:.1}s)",
            report.overall() * 100.0,
            report.oov_accuracy() * 100.0
        );
        self.systems.push(SystemResult {
            name: name.to_string(),
            report,
            predictions,
            seconds,
        });
        Ok(())
    }
}

/// One full run for one seed. Every stochastic step derives its seed from
/// `seed`.
pub fn replicate(config: &ReplicateConfig, seed: u64) -> Result<ReplicateResult> {
    let data = synth_generate(&config.synth, seed)?;
    let (source, target) = (&data.source, &data.target);
    let (train, dev) = split_train_dev(source, config.dev_fraction, seed)?;
    let vocab = build_vocabulary(&[source, target])?;
    let unlabeled = [source, target];

    let base = TaggerConfig {
        seed,
        ..config.tagger.clone()
    };
    let started = Instant::now();
    let sweep = sweep(&train, &dev, &vocab, &[], &c_grid(&base, &config.c_grid))?;
    let tagger = sweep.best().config.clone();
    let dev_accuracy = sweep.best_accuracy();
    info!("seed {seed}: selected C = {} (dev {:.2})", tagger.c, dev_accuracy * 100.0);

    let mut runner = Runner {
        train: &train,
        target,
        tagger,
        systems: Vec::new(),
    };
    runner.run(BASELINE, target, &vocab, &[], started)?;

    if !config.fema_only {
        let t = Instant::now();
        let scl = train_scl(&unlabeled, &vocab, &SclConfig { seed, ..config.scl.clone() })?;
        runner.run(SCL, target, &vocab, &[&scl], t)?;

        let t = Instant::now();
        let (brown, _) = train_brown(&Corpus::union(unlabeled), &config.brown)?;
        runner.run(BROWN, target, &vocab, &[&brown], t)?;

        let t = Instant::now();
        let words = train_word_embeddings(&unlabeled, &SkipgramConfig { seed, ..config.skipgram.clone() })?;
        runner.run(SKIPGRAM, target, &vocab, &[&words], t)?;
    }

    let fema_cfg = FemaConfig { seed, ..config.fema.clone() };
    let t = Instant::now();
    let single = train_fema(&unlabeled, &vocab, &AttributeSpace::shared_only(), &fema_cfg)?.embeddings();
    runner.run(FEMA_SINGLE, target, &vocab, &[&single], t)?;

    let t = Instant::now();
    let keys: Vec<&str> = config.attribute_keys.iter().map(String::as_str).collect();
    let space = AttributeSpace::from_corpora(unlabeled, &keys);
    let attr = train_fema(&unlabeled, &vocab, &space, &fema_cfg)?.embeddings();
    runner.run(FEMA_ATTR, target, &vocab, &[&attr], t)?;

    let t = Instant::now();
    let (normalized, normalization) =
        apply_normalization(target, &data.lexicon, config.threshold, Some(&train.vocabulary()))?;
    runner.run(NORMALIZED, &normalized, &vocab, &[], t)?;

    let t = Instant::now();
    let norm_unlabeled = [source, &normalized];
    let norm_vocab = build_vocabulary(&norm_unlabeled)?;
    let norm_fema = train_fema(&norm_unlabeled, &norm_vocab, &AttributeSpace::shared_only(), &fema_cfg)?.embeddings();
    runner.run(NORMALIZED_FEMA, &normalized, &norm_vocab, &[&norm_fema], t)?;

    let systems = runner.systems;
    let pred = |name: &str| &systems.iter().find(|s| s.name == name).expect("system ran").predictions;
    let overlap = error_overlap(
        target,
        pred(BASELINE),
        (NORMALIZED, pred(NORMALIZED)),
        (FEMA_SINGLE, pred(FEMA_SINGLE)),
    )?;
    Ok(ReplicateResult {
        seed,
        synth: data.report,
        sweep,
        dev_accuracy,
        normalization,
        systems,
        overlap,
    })
}
