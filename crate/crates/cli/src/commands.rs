use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::{info, warn};
use sha2::{Digest, Sha256};

use histadapt::corpus::{
    corpus_stats, parse_corpus, split_train_dev, synth_generate, AttributeSpace, Corpus, FileFormat, MutationTarget,
    SynthConfig, TagMapper,
};
use histadapt::eval::{ablation_run, ablation_table, error_overlap, evaluate};
use histadapt::features::{build_vocabulary, FeatureGroup, FeatureVocabulary};
use histadapt::normalize::{apply_normalization, load_lexicon};
use histadapt::pipeline::{mean_table, replicate, ReplicateConfig};
use histadapt::representations::{
    load_representation, train_brown, train_fema, train_scl, train_word_embeddings, BrownConfig, FemaConfig,
    Representation, SclConfig, SkipgramConfig,
};
use histadapt::tagger::{c_grid, sweep, train_tagger, LinearTaggerModel, TaggerConfig};

use crate::config::RunConfig;
use crate::{resolve_config, Cli, Command, TaggerArgs, UsageError};

const DEFAULT_C_GRID: [f64; 5] = [0.1, 0.3, 0.5, 0.8, 1.0];

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.opts)?;
    let threads = cfg.run.threads.unwrap_or(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("starting worker threads")?;
    match &cli.command {
        Command::Stats { group_by } => stats(&cfg, group_by),
        Command::Split { dev_fraction } => split(&cfg, *dev_fraction),
        Command::Synth { oov_rate, sentences } => synth(&cfg, *oov_rate, *sentences),
        Command::MapTags { remap_q, tagset } => map_tags(&cfg, *remap_q, tagset),
        Command::Embed { attributes } => embed(&cfg, attributes),
        Command::Train { tagger } => train(&cfg, tagger),
        Command::Sweep { tagger, dev, c_grid } => run_sweep(&cfg, tagger, dev, c_grid),
        Command::Tag {
            model,
            vocab,
            embeddings,
        } => tag(&cfg, model, vocab.as_deref(), embeddings),
        Command::Normalize { lexicon, reference } => normalize(&cfg, lexicon, reference.as_deref()),
        Command::Eval { predicted, train } => eval(&cfg, predicted, train),
        Command::Ablate { tagger, test, drop } => ablate(&cfg, tagger, test, drop),
        Command::Overlap {
            baseline,
            system_a,
            system_b,
        } => overlap(&cfg, baseline, system_a, system_b),
        Command::Replicate { seeds, fema_only } => run_replicate(&cfg, *seeds, *fema_only),
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn require_exists(p: &Path) -> Result<()> {
    if !p.exists() {
        return Err(usage(format!("{} does not exist", p.display())));
    }
    Ok(())
}

/// Reads a token file, detecting the directive-header format by its
/// `#meta` lines.
pub fn read_corpus(path: &Path) -> Result<Corpus> {
    require_exists(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let format = if text.lines().any(|l| l.starts_with("#meta ") && !l.contains('\t')) {
        FileFormat::DirectiveHeader
    } else {
        FileFormat::TwoColumn
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".into());
    Ok(parse_corpus(&text, &path.display().to_string(), &name, format)?)
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<Corpus>> {
    paths.iter().map(|p| read_corpus(p)).collect()
}

fn inputs(cfg: &RunConfig) -> Result<Vec<Corpus>> {
    if cfg.io.input.is_empty() {
        return Err(usage("--input is required"));
    }
    read_all(&cfg.io.input)
}

fn single_input(cfg: &RunConfig) -> Result<Corpus> {
    match cfg.io.input.as_slice() {
        [p] => read_corpus(p),
        [] => Err(usage("--input is required")),
        _ => Err(usage("this command takes exactly one --input")),
    }
}

fn output(cfg: &RunConfig) -> Result<&Path> {
    cfg.io.output.as_deref().ok_or_else(|| usage("--output is required"))
}

/// Writes the effective config next to an output so the run can be
/// repeated.
fn archive(cfg: &RunConfig, out: &Path) -> Result<()> {
    let path = if out.is_dir() {
        out.join("run_config.toml")
    } else {
        let mut s = out.as_os_str().to_owned();
        s.push(".run.toml");
        PathBuf::from(s)
    };
    let mut archived = cfg.clone();
    archived.run.seed = Some(cfg.seed());
    fs::write(&path, archived.to_toml()).with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(cfg: &RunConfig, text: &str) -> Result<()> {
    match &cfg.io.output {
        Some(p) => {
            write_text(p, text)?;
            archive(cfg, p)
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

struct LoadedSource {
    model: Box<dyn Representation>,
    path: PathBuf,
    sha256: String,
}

fn load_sources(paths: &[PathBuf]) -> Result<Vec<LoadedSource>> {
    paths
        .iter()
        .map(|p| {
            require_exists(p)?;
            Ok(LoadedSource {
                model: load_representation(p).with_context(|| format!("loading {}", p.display()))?,
                path: p.canonicalize().unwrap_or_else(|_| p.clone()),
                sha256: sha256_file(p)?,
            })
        })
        .collect()
}

fn source_refs(sources: &[LoadedSource]) -> Vec<&dyn Representation> {
    sources.iter().map(|s| s.model.as_ref()).collect()
}

fn stats(cfg: &RunConfig, group_by: &str) -> Result<()> {
    let corpus = Corpus::union(&inputs(cfg)?);
    emit(cfg, &corpus_stats(&corpus, group_by)?.to_table())
}

fn split(cfg: &RunConfig, dev_fraction: f64) -> Result<()> {
    let corpus = single_input(cfg)?;
    let dir = output(cfg)?;
    let (train, dev) = split_train_dev(&corpus, dev_fraction, cfg.seed())?;
    fs::create_dir_all(dir)?;
    train.write(dir.join("train.txt"))?;
    dev.write(dir.join("dev.txt"))?;
    archive(cfg, dir)?;
    println!(
        "train: {} sentences, {} tokens\ndev: {} sentences, {} tokens",
        train.sentence_count(),
        train.token_count(),
        dev.sentence_count(),
        dev.token_count()
    );
    Ok(())
}

fn synth(cfg: &RunConfig, oov_rate: f64, sentences: usize) -> Result<()> {
    let dir = output(cfg)?;
    let config = SynthConfig {
        mutation: MutationTarget::OovRate(oov_rate),
        sentences_per_domain: sentences,
        ..SynthConfig::default()
    };
    let out = synth_generate(&config, cfg.seed())?;
    fs::create_dir_all(dir)?;
    out.source.write(dir.join("source.txt"))?;
    out.target.write(dir.join("target.txt"))?;
    out.target_canonical.write(dir.join("target_canonical.txt"))?;
    write_text(&dir.join("lexicon.tsv"), &out.lexicon.to_text())?;
    archive(cfg, dir)?;
    let r = &out.report;
    println!(
        "source: {} sentences, {} tokens\ntarget: {} sentences, {} tokens\nrespelled types: {} of {}\ntarget OOV rate: {:.2}% (unrespelled {:.2}%)",
        r.source_sentences,
        r.source_tokens,
        r.target_sentences,
        r.target_tokens,
        r.mutated_types,
        r.eligible_types,
        r.target_oov_rate * 100.0,
        r.natural_oov_rate * 100.0
    );
    Ok(())
}

fn map_tags(cfg: &RunConfig, remap_q: bool, tagset: &str) -> Result<()> {
    let corpus = single_input(cfg)?;
    let mut mapper = match &cfg.io.mapping {
        Some(p) => TagMapper::from_file(p)?,
        None => TagMapper::bundled(),
    };
    if remap_q {
        mapper = mapper.with_q_remap();
    }
    let mapped = mapper.map_corpus(&corpus, tagset)?;
    let out = output(cfg)?;
    mapped.write(out)?;
    archive(cfg, out)?;
    println!("mapped {} tokens with {} ({} entries)", mapped.token_count(), mapper.name, mapper.len());
    Ok(())
}

fn embed(cfg: &RunConfig, attributes: &[String]) -> Result<()> {
    let rep = &cfg.representation;
    let method = rep.method.as_deref().ok_or_else(|| usage("--method is required"))?;
    let corpora = inputs(cfg)?;
    let refs: Vec<&Corpus> = corpora.iter().collect();
    let out = output(cfg)?;
    let seed = cfg.seed();
    let text = match method {
        "fema" | "fema-attr" => {
            let vocab = build_vocabulary(&refs)?;
            let space = if method == "fema" {
                AttributeSpace::shared_only()
            } else {
                let keys: Vec<String> = if !attributes.is_empty() {
                    attributes.to_vec()
                } else {
                    rep.attributes.clone().unwrap_or_else(|| vec!["epoch".into(), "genre".into()])
                };
                let keys: Vec<&str> = keys.iter().map(String::as_str).collect();
                let space = AttributeSpace::from_corpora(refs.iter().copied(), &keys);
                if space.num_attributes() == 0 {
                    warn!("no document carries any of the attributes {keys:?}; training a single-domain model");
                }
                space
            };
            let d = FemaConfig::default();
            let config = FemaConfig {
                dim: rep.dim.unwrap_or(d.dim),
                negatives: rep.neg.unwrap_or(d.negatives),
                epochs: rep.epochs.unwrap_or(d.epochs),
                lambda_attr: rep.lambda_attr.unwrap_or(d.lambda_attr),
                seed,
                ..d
            };
            train_fema(&refs, &vocab, &space, &config)?.embeddings().to_text()
        }
        "scl" => {
            let vocab = build_vocabulary(&refs)?;
            let d = SclConfig::default();
            let config = SclConfig {
                pivot_min_count: rep.pivot_min.unwrap_or(d.pivot_min_count),
                k: rep.svd_k.unwrap_or(d.k),
                epochs: rep.epochs.unwrap_or(d.epochs),
                seed,
                ..d
            };
            train_scl(&refs, &vocab, &config)?.to_text()
        }
        "brown" => {
            let config = BrownConfig {
                clusters: rep.clusters.unwrap_or(BrownConfig::default().clusters),
                window: None,
            };
            train_brown(&Corpus::union(refs), &config)?.0.to_text()
        }
        "skipgram" => {
            let d = SkipgramConfig::default();
            let config = SkipgramConfig {
                dim: rep.dim.unwrap_or(d.dim),
                window: rep.window.unwrap_or(d.window),
                negatives: rep.neg.unwrap_or(d.negatives),
                epochs: rep.epochs.unwrap_or(d.epochs),
                seed,
                ..d
            };
            train_word_embeddings(&refs, &config)?.to_text()
        }
        "none" => return Err(usage("--method none has nothing to train")),
        other => return Err(usage(format!("unknown method `{other}`"))),
    };
    write_text(out, &text)?;
    archive(cfg, out)?;
    info!("wrote {method} model to {}", out.display());
    Ok(())
}

struct TrainingSetup {
    train: Corpus,
    vocab: FeatureVocabulary,
    sources: Vec<LoadedSource>,
    config: TaggerConfig,
}

fn training_setup(cfg: &RunConfig, args: &TaggerArgs) -> Result<TrainingSetup> {
    let train = Corpus::union(&inputs(cfg)?);
    let unlabeled = read_all(&args.unlabeled)?;
    let mut all: Vec<&Corpus> = vec![&train];
    all.extend(&unlabeled);
    let vocab = build_vocabulary(&all)?;
    let sources = load_sources(&args.embeddings)?;
    let d = TaggerConfig::default();
    let config = TaggerConfig {
        c: cfg.tagger.c.unwrap_or(d.c),
        dense_scale: args.dense_scale.or(cfg.tagger.dense_scale).unwrap_or(d.dense_scale),
        seed: cfg.seed(),
        ..d
    };
    Ok(TrainingSetup {
        train,
        vocab,
        sources,
        config,
    })
}

fn vocab_path(model: &Path) -> PathBuf {
    let mut s = model.as_os_str().to_owned();
    s.push(".vocab");
    PathBuf::from(s)
}

fn train(cfg: &RunConfig, args: &TaggerArgs) -> Result<()> {
    let setup = training_setup(cfg, args)?;
    let out = output(cfg)?;
    let refs = source_refs(&setup.sources);
    let mut model = train_tagger(&setup.train, &setup.vocab, &refs, &setup.config)?;
    for (spec, src) in model.sources.iter_mut().zip(&setup.sources) {
        spec.path = Some(src.path.display().to_string());
        spec.sha256 = Some(src.sha256.clone());
    }
    write_text(out, &model.to_text())?;
    setup.vocab.write(vocab_path(out))?;
    archive(cfg, out)?;
    println!(
        "trained {} labels on {} tokens; training accuracy {:.2}%",
        model.labels.len(),
        setup.train.token_count(),
        model.accuracy(&refs, &setup.train)? * 100.0
    );
    Ok(())
}

fn run_sweep(cfg: &RunConfig, args: &TaggerArgs, dev: &Path, grid: &[f64]) -> Result<()> {
    let setup = training_setup(cfg, args)?;
    let dev = read_corpus(dev)?;
    let cs: Vec<f64> = if !grid.is_empty() {
        grid.to_vec()
    } else if let Some(g) = &cfg.tagger.c_grid {
        g.clone()
    } else {
        DEFAULT_C_GRID.to_vec()
    };
    let refs = source_refs(&setup.sources);
    let result = sweep(&setup.train, &dev, &setup.vocab, &refs, &c_grid(&setup.config, &cs))?;
    emit(cfg, &result.to_table())?;
    if cfg.io.output.is_some() {
        println!("selected C = {}", result.best().config.c);
    }
    Ok(())
}

fn tag(cfg: &RunConfig, model_path: &Path, vocab: Option<&Path>, embeddings: &[PathBuf]) -> Result<()> {
    let corpus = single_input(cfg)?;
    require_exists(model_path)?;
    let vpath = vocab.map(Path::to_path_buf).unwrap_or_else(|| vocab_path(model_path));
    require_exists(&vpath)?;
    let vocab = FeatureVocabulary::read(&vpath)?;
    let model = LinearTaggerModel::read(model_path, &vocab)?;
    let sources = if !embeddings.is_empty() {
        load_sources(embeddings)?
    } else {
        let mut paths = Vec::new();
        for s in &model.sources {
            match &s.path {
                Some(p) => paths.push(PathBuf::from(p)),
                None => bail!("model does not record where `{}` was loaded from; pass --embeddings", s.name),
            }
        }
        let loaded = load_sources(&paths)?;
        for (spec, src) in model.sources.iter().zip(&loaded) {
            if spec.sha256.as_deref().is_some_and(|h| h != src.sha256) {
                bail!("{} changed since the tagger was trained", src.path.display());
            }
        }
        loaded
    };
    let tagged = model.retag(&source_refs(&sources), &corpus)?;
    emit(cfg, &tagged.to_directive_text())
}

fn normalize(cfg: &RunConfig, lexicon: &Path, reference: Option<&Path>) -> Result<()> {
    let corpus = single_input(cfg)?;
    require_exists(lexicon)?;
    let lex = load_lexicon(lexicon)?;
    let reference = reference.map(read_corpus).transpose()?.map(|c| c.vocabulary());
    let (normalized, report) = apply_normalization(&corpus, &lex, cfg.normalize.threshold.unwrap_or(0.5), reference.as_ref())?;
    let out = output(cfg)?;
    normalized.write(out)?;
    archive(cfg, out)?;
    print!("{}", report.to_text());
    Ok(())
}

fn predicted_tags(path: &Path, gold: &Corpus) -> Result<Vec<String>> {
    let pred = read_corpus(path)?;
    if pred.token_count() != gold.token_count() {
        bail!(
            "{} has {} tokens but the gold corpus has {}",
            path.display(),
            pred.token_count(),
            gold.token_count()
        );
    }
    Ok(pred.tokens().map(|t| t.tag.clone()).collect())
}

fn eval(cfg: &RunConfig, predicted: &Path, train: &[PathBuf]) -> Result<()> {
    let gold = single_input(cfg)?;
    if train.is_empty() {
        return Err(usage("--train is required to define in-vocabulary words"));
    }
    let vocab: HashSet<String> = read_all(train)?.iter().flat_map(|c| c.vocabulary()).collect();
    let report = evaluate(&gold, &predicted_tags(predicted, &gold)?, &vocab)?;
    println!("{}\n{}", report.summary_table(), report.per_tag_table());
    if let Some(out) = &cfg.io.output {
        write_text(out, &report.to_key_values())?;
        archive(cfg, out)?;
    }
    Ok(())
}

fn ablate(cfg: &RunConfig, args: &TaggerArgs, test: &Path, drop: &[String]) -> Result<()> {
    let groups: Vec<FeatureGroup> = if drop.is_empty() {
        FeatureGroup::ALL.to_vec()
    } else {
        drop.iter()
            .map(|g| g.parse().map_err(|e: histadapt::Error| usage(e.to_string())))
            .collect::<Result<_>>()?
    };
    let setup = training_setup(cfg, args)?;
    let test = read_corpus(test)?;
    let rows = ablation_run(&setup.train, &test, &setup.vocab, &source_refs(&setup.sources), &setup.config, &groups)?;
    emit(cfg, &ablation_table(&rows))
}

fn overlap(cfg: &RunConfig, baseline: &Path, a: &Path, b: &Path) -> Result<()> {
    let gold = single_input(cfg)?;
    let name = |p: &Path| p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let base = predicted_tags(baseline, &gold)?;
    let pa = predicted_tags(a, &gold)?;
    let pb = predicted_tags(b, &gold)?;
    let report = error_overlap(&gold, &base, (&name(a), &pa), (&name(b), &pb))?;
    print!("{}", report.to_text());
    if let Some(out) = &cfg.io.output {
        write_text(out, &report.to_key_values())?;
        archive(cfg, out)?;
    }
    Ok(())
}

fn run_replicate(cfg: &RunConfig, seeds: u64, fema_only: bool) -> Result<()> {
    if seeds == 0 {
        return Err(usage("--seeds must be at least 1"));
    }
    let rep = &cfg.representation;
    let mut config = ReplicateConfig {
        fema_only,
        ..ReplicateConfig::default()
    };
    if let Some(d) = rep.dim {
        config.fema.dim = d;
        config.skipgram.dim = d;
    }
    if let Some(k) = rep.neg {
        config.fema.negatives = k;
        config.skipgram.negatives = k;
    }
    if let Some(e) = rep.epochs {
        config.fema.epochs = e;
    }
    if let Some(l) = rep.lambda_attr {
        config.fema.lambda_attr = l;
    }
    if let Some(a) = &rep.attributes {
        config.attribute_keys = a.clone();
    }
    if let Some(w) = rep.window {
        config.skipgram.window = w;
    }
    if let Some(c) = rep.clusters {
        config.brown.clusters = c;
    }
    if let Some(p) = rep.pivot_min {
        config.scl.pivot_min_count = p;
    }
    if let Some(k) = rep.svd_k {
        config.scl.k = k;
    }
    if let Some(c) = cfg.tagger.c {
        config.c_grid = vec![c];
    } else if let Some(g) = &cfg.tagger.c_grid {
        config.c_grid = g.clone();
    }
    if let Some(s) = cfg.tagger.dense_scale {
        config.tagger.dense_scale = s;
    }
    if let Some(t) = cfg.normalize.threshold {
        config.threshold = t;
    }
    let first = cfg.seed();
    let mut results = Vec::new();
    for seed in first..first + seeds {
        let r = replicate(&config, seed)?;
        println!("{}", r.to_table());
        if let Some(dir) = &cfg.io.output {
            fs::create_dir_all(dir)?;
            let text = format!(
                "{}\nnormalization\n{}\nerror overlap\n{}",
                r.to_table(),
                r.normalization.to_text(),
                r.overlap.to_text()
            );
            write_text(&dir.join(format!("seed-{seed}.txt")), &text)?;
        }
        results.push(r);
    }
    let summary = mean_table(&results);
    println!("{summary}");
    if let Some(dir) = &cfg.io.output {
        write_text(&dir.join("summary.txt"), &summary)?;
        let mut tsv = String::from("seed\tsystem\tiv\toov\toverall\toov_rate\n");
        for r in &results {
            for s in &r.systems {
                tsv.push_str(&format!(
                    "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\n",
                    r.seed,
                    s.name,
                    s.report.iv_accuracy(),
                    s.report.oov_accuracy(),
                    s.report.overall(),
                    s.report.oov_rate()
                ));
            }
        }
        write_text(&dir.join("results.tsv"), &tsv)?;
        archive(cfg, dir)?;
    }
    Ok(())
}
