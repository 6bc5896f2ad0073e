mod commands;
mod config;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{IoSection, NormalizeSection, RepresentationSection, RunConfig, RunSection, TaggerSection};

/// An invalid invocation or config; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser, Debug)]
#[command(name = "histadapt", version, about = "POS tagging under domain shift for historical English")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Opts,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Fema,
    FemaAttr,
    Scl,
    Brown,
    Skipgram,
    None,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fema => "fema",
            Method::FemaAttr => "fema-attr",
            Method::Scl => "scl",
            Method::Brown => "brown",
            Method::Skipgram => "skipgram",
            Method::None => "none",
        }
    }
}

/// Flags shared by every command.
#[derive(Args, Debug, Default)]
pub struct Opts {
    /// Input file(s)
    #[arg(long, global = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Output file or directory
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Tag mapping file (source<TAB>target)
    #[arg(long, global = true)]
    pub mapping: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub method: Option<Method>,
    /// Embedding size
    #[arg(long, global = true)]
    pub dim: Option<usize>,
    /// Negative samples per positive
    #[arg(long, global = true)]
    pub neg: Option<usize>,
    /// Skipgram context window
    #[arg(long, global = true)]
    pub window: Option<usize>,
    /// Number of Brown clusters
    #[arg(long, global = true)]
    pub clusters: Option<usize>,
    /// SCL pivot count threshold per domain
    #[arg(long, global = true)]
    pub pivot_min: Option<u64>,
    /// SCL projection size
    #[arg(long, global = true)]
    pub svd_k: Option<usize>,
    /// Training epochs for the representation learner
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// SVM regularization constant
    #[arg(long, global = true)]
    pub c: Option<f64>,
    #[arg(long, global = true)]
    pub lambda_attr: Option<f64>,
    /// Normalization confidence threshold
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default 1)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML run config; flags take precedence
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
}

impl Opts {
    fn as_config(&self) -> RunConfig {
        RunConfig {
            io: IoSection {
                input: self.input.clone(),
                output: self.output.clone(),
                mapping: self.mapping.clone(),
            },
            representation: RepresentationSection {
                method: self.method.map(|m| m.name().to_string()),
                dim: self.dim,
                neg: self.neg,
                window: self.window,
                clusters: self.clusters,
                pivot_min: self.pivot_min,
                svd_k: self.svd_k,
                lambda_attr: self.lambda_attr,
                epochs: self.epochs,
                attributes: None,
            },
            tagger: TaggerSection {
                c: self.c,
                ..Default::default()
            },
            normalize: NormalizeSection {
                threshold: self.threshold,
            },
            run: RunSection {
                seed: self.seed,
                threads: self.threads,
            },
        }
    }
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sentence and token counts grouped by a document attribute
    Stats {
        #[arg(long, default_value = "corpus")]
        group_by: String,
    },
    /// Split a corpus into train and dev parts
    Split {
        #[arg(long, default_value_t = 0.1)]
        dev_fraction: f64,
    },
    /// Generate a synthetic source/target corpus pair
    Synth {
        /// Target-domain OOV rate to aim for
        #[arg(long, default_value_t = 0.23)]
        oov_rate: f64,
        #[arg(long, default_value_t = 2000)]
        sentences: usize,
    },
    /// Map tags to the target tagset
    MapTags {
        /// Map Q to DT instead of JJ
        #[arg(long)]
        remap_q: bool,
        #[arg(long, default_value = "PTB")]
        tagset: String,
    },
    /// Train a representation model on unlabeled text
    Embed {
        /// Document attributes for fema-attr
        #[arg(long, value_delimiter = ',')]
        attributes: Vec<String>,
    },
    /// Train a tagger
    Train {
        #[command(flatten)]
        tagger: TaggerArgs,
    },
    /// Tune C on a dev set
    Sweep {
        #[command(flatten)]
        tagger: TaggerArgs,
        #[arg(long)]
        dev: PathBuf,
        #[arg(long, value_delimiter = ',')]
        c_grid: Vec<f64>,
    },
    /// Tag a corpus with a trained model
    Tag {
        #[arg(long)]
        model: PathBuf,
        /// Vocabulary file (default: <model>.vocab)
        #[arg(long)]
        vocab: Option<PathBuf>,
        /// Representation models (default: the paths recorded in the model)
        #[arg(long, num_args = 1..)]
        embeddings: Vec<PathBuf>,
    },
    /// Apply a normalization lexicon
    Normalize {
        #[arg(long)]
        lexicon: PathBuf,
        /// Training corpus for OOV accounting
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Score predicted tags against gold
    Eval {
        #[arg(long)]
        predicted: PathBuf,
        /// Labeled training corpus that defines IV/OOV
        #[arg(long, num_args = 1..)]
        train: Vec<PathBuf>,
    },
    /// Retrain with feature groups removed
    Ablate {
        #[command(flatten)]
        tagger: TaggerArgs,
        #[arg(long)]
        test: PathBuf,
        /// Groups to drop one at a time (default: all)
        #[arg(long, value_delimiter = ',')]
        drop: Vec<String>,
    },
    /// Compare which baseline errors two systems correct
    Overlap {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        system_a: PathBuf,
        #[arg(long)]
        system_b: PathBuf,
    },
    /// Run the full synthetic adaptation experiment
    Replicate {
        /// Number of consecutive seeds starting at --seed
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Skip the SCL, Brown and skipgram rows
        #[arg(long)]
        fema_only: bool,
    },
}

#[derive(Args, Debug)]
pub struct TaggerArgs {
    /// Representation models to attach
    #[arg(long, num_args = 1..)]
    pub embeddings: Vec<PathBuf>,
    /// Extra corpora whose features join the vocabulary
    #[arg(long, num_args = 1..)]
    pub unlabeled: Vec<PathBuf>,
    /// Scale of each L2-normalized dense block
    #[arg(long)]
    pub dense_scale: Option<f64>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

pub fn resolve_config(opts: &Opts) -> Result<RunConfig, UsageError> {
    let base = match &opts.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cfg = base.overlay(opts.as_config());
    cfg.validate()?;
    Ok(cfg)
}
