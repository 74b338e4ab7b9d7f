mod config;

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kpcnet_core::bundle::{
    Bundle, PipelineFile, BLACKLIST_FILE, GENERATOR_FILE, GRAPH_FILE, KEYWORD_VOCAB_FILE, MLE_GENERATOR_FILE,
    PREDICTOR_FILE, SETTINGS_FILE, TOKEN_VOCAB_FILE,
};
use kpcnet_core::generator::{train_generator, BridgeInput, GeneratorModel};
use kpcnet_core::group::{GroupOptions, GroupSettings, Strategy};
use kpcnet_core::metrics::{evaluate_groups, GroupEval};
use kpcnet_core::nn::load_text_embeddings;
use kpcnet_core::predictor::{evaluate_predictor, precision_at_5, train_predictor, PredictorModel};
use kpcnet_core::selection::build_cooccurrence;
use kpcnet_core::synth::{synth_corpus, SynthConfig};
use kpcnet_core::textproc::{
    build_keyword_vocab, build_token_vocab, clean_context, clean_question, load_corpus, parse_corpus, tokenize,
    ContextRecord, CorpusOptions, KeywordSet, KeywordVocab, RawRecord, TokenSequence, TokenVocab,
};
use serde::{Deserialize, Serialize};

use crate::config::CliConfig;

/// Keyword-conditioned clarification question generation.
#[derive(Debug, Parser)]
#[command(name = "kpcnet", version)]
struct Cli {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set generator_epochs=5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Random seed; overrides the `seed` key.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Unescape HTML, strip non-question tails and drop noise questions.
    Clean {
        /// Corpus in JSON Lines (`{"id","context","questions"}`).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Write a templated synthetic corpus split into train/valid/test.
    SynthCorpus {
        #[arg(long, default_value_t = 500)]
        products: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Build vocabularies, the keyword co-occurrence graph and pipeline
    /// settings in a model directory.
    BuildVocab {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        model_dir: PathBuf,
    },
    /// Train the keyword predictor.
    TrainPredictor(TrainArgs),
    /// Train the generator (or the unconditioned baseline with `--mle`).
    TrainGenerator {
        #[command(flatten)]
        train: TrainArgs,
        /// Train the baseline without keyword bridge.
        #[arg(long)]
        mle: bool,
    },
    /// Generate a question group per context.
    Generate {
        #[arg(long)]
        model_dir: PathBuf,
        /// Corpus in JSON Lines; questions are used only by `truth`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value = "cluster")]
        strategy: String,
        /// Keyword to exclude (repeatable).
        #[arg(long)]
        exclude: Vec<String>,
        /// Skip blacklist keyword filtering.
        #[arg(long)]
        no_filter: bool,
    },
    /// Score generated groups against reference questions.
    Evaluate {
        /// Hypotheses in JSON Lines (`{"id","group"}`).
        #[arg(long)]
        hyps: PathBuf,
        /// Reference corpus in JSON Lines.
        #[arg(long)]
        refs: PathBuf,
        /// Report JSON path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-record CSV path.
        #[arg(long)]
        per_record: Option<PathBuf>,
        /// CSV to append `system,pairwise_bleu,avg_bleu` to.
        #[arg(long)]
        scatter: Option<PathBuf>,
        #[arg(long, default_value = "system")]
        system: String,
        /// Model directory; adds the predictor's P@5 on the references.
        #[arg(long)]
        model_dir: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        model_dir: Option<PathBuf>,
        #[arg(long)]
        host: Option<String>,
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        default_strategy: Option<String>,
        #[arg(long)]
        blacklist: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: Option<PathBuf>,
    #[arg(long)]
    model_dir: PathBuf,
}

/// One line of a hypothesis file.
#[derive(Debug, Serialize, Deserialize)]
struct HypLine {
    id: String,
    group: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    keyword_sets: Option<Vec<Vec<String>>>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, matches!(cli.command, Command::Serve { .. }));
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn init_logging(verbose: u8, json: bool) {
    use tracing_subscriber::EnvFilter;
    let default = match verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new(default));
    let builder = tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr);
    if json {
        builder.json().init();
    } else {
        builder.without_time().init();
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = CliConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Clean { input, output } => clean(&input, &output),
        Command::SynthCorpus { products, out_dir } => {
            let corpus = synth_corpus(&SynthConfig {
                products,
                seed: cfg.seed.unwrap_or(1),
                ..Default::default()
            })?;
            corpus.write_dir(&out_dir)?;
            let (tr, va, te) = corpus.split();
            println!("wrote {} train, {} valid, {} test products to {}", tr.len(), va.len(), te.len(), out_dir.display());
            Ok(())
        }
        Command::BuildVocab { train, model_dir } => build_vocab(&cfg, &train, &model_dir),
        Command::TrainPredictor(args) => train_predictor_cmd(&cfg, &args),
        Command::TrainGenerator { train, mle } => train_generator_cmd(&cfg, &train, mle),
        Command::Generate {
            model_dir,
            input,
            output,
            strategy,
            exclude,
            no_filter,
        } => {
            let strategy: Strategy = strategy.parse()?;
            let options = GroupOptions {
                excluded: exclude.into_iter().collect(),
                seed: cfg.seed.unwrap_or(0),
                no_filter,
                ..Default::default()
            };
            generate(&cfg, &model_dir, &input, &output, strategy, &options)
        }
        Command::Evaluate {
            hyps,
            refs,
            output,
            per_record,
            scatter,
            system,
            model_dir,
        } => evaluate(&cfg, &hyps, &refs, output.as_deref(), per_record.as_deref(), scatter.as_deref(), &system, model_dir.as_deref()),
        Command::Serve {
            model_dir,
            host,
            port,
            default_strategy,
            blacklist,
        } => {
            let mut sc = cfg.service_config(None);
            sc.apply_env()?;
            if let Some(d) = model_dir {
                sc.model_dir = d;
            }
            if let Some(h) = host {
                sc.host = h;
            }
            if let Some(p) = port {
                sc.port = p;
            }
            if let Some(s) = default_strategy {
                sc.default_strategy = s.parse()?;
            }
            if blacklist.is_some() {
                sc.blacklist = blacklist;
            }
            let rt = tokio::runtime::Runtime::new().context("starting async runtime")?;
            rt.block_on(kpcnet_service::serve(sc))?;
            Ok(())
        }
    }
}

fn read_raw(path: &Path) -> Result<Vec<RawRecord>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_corpus(&text, path)?)
}

fn write_lines<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for row in rows {
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn clean(input: &Path, output: &Path) -> Result<()> {
    let filter = CorpusOptions::default().question_filter;
    let rows: Vec<RawRecord> = read_raw(input)?
        .into_iter()
        .map(|r| RawRecord {
            id: r.id,
            context: clean_context(&r.context),
            questions: r
                .questions
                .iter()
                .filter_map(|q| clean_question(&clean_context(q), &filter))
                .collect(),
        })
        .collect();
    write_lines(output, &rows)
}

fn load_records(cfg: &CliConfig, path: &Path) -> Result<Vec<ContextRecord>> {
    let records = load_corpus(path, &cfg.corpus_options()?)?;
    if records.is_empty() {
        bail!("{} holds no records", path.display());
    }
    Ok(records)
}

fn build_vocab(cfg: &CliConfig, train: &Path, dir: &Path) -> Result<()> {
    let records = load_records(cfg, train)?;
    let tv = build_token_vocab(&records, cfg.min_token_freq.unwrap_or(1))?;
    let kv = build_keyword_vocab(&records, cfg.min_keyword_freq.unwrap_or(2))?;
    let graph = build_cooccurrence(&records, &kv);
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    tv.save(&dir.join(TOKEN_VOCAB_FILE))?;
    kv.save(&dir.join(KEYWORD_VOCAB_FILE))?;
    graph.save(&dir.join(GRAPH_FILE))?;
    let mut settings = GroupSettings::default();
    cfg.apply_settings(&mut settings)?;
    write_json(
        &dir.join(SETTINGS_FILE),
        &PipelineFile {
            max_context_len: cfg.corpus_options()?.max_context_len,
            settings,
        },
    )?;
    write_json(&dir.join(BLACKLIST_FILE), cfg.blacklist()?.patterns())?;
    println!(
        "{} tokens, {} keywords, {} co-occurrence edges",
        tv.len(),
        kv.len(),
        graph.num_edges()
    );
    Ok(())
}

fn load_vocabs(dir: &Path) -> Result<(TokenVocab, KeywordVocab)> {
    Ok((TokenVocab::load(&dir.join(TOKEN_VOCAB_FILE))?, KeywordVocab::load(&dir.join(KEYWORD_VOCAB_FILE))?))
}

fn load_embeddings(cfg: &CliConfig, vocab: &TokenVocab, table: &mut kpcnet_core::nn::Tensor) -> Result<()> {
    if let Some(path) = &cfg.embeddings {
        let filled = load_text_embeddings(path, vocab, table)?;
        tracing::info!(filled, vocab = vocab.len(), "pretrained embeddings loaded");
    }
    Ok(())
}

fn train_predictor_cmd(cfg: &CliConfig, args: &TrainArgs) -> Result<()> {
    let train = load_records(cfg, &args.train)?;
    let valid = match &args.valid {
        Some(p) => load_records(cfg, p)?,
        None => Vec::new(),
    };
    let (tv, kv) = load_vocabs(&args.model_dir)?;
    let mut model = PredictorModel::new(cfg.predictor_config(), tv.clone(), kv)?;
    let emb = model.embedding_param();
    load_embeddings(cfg, &tv, &mut model.store.get_mut(emb).value)?;
    let curve = train_predictor(&mut model, &train, &valid)?;
    model.save(&args.model_dir.join(PREDICTOR_FILE))?;
    let report = if valid.is_empty() { None } else { Some(evaluate_predictor(&model, &valid)?) };
    println!("{}", serde_json::to_string_pretty(&serde_json::json!({ "curve": curve, "valid": report }))?);
    Ok(())
}

fn train_generator_cmd(cfg: &CliConfig, args: &TrainArgs, mle: bool) -> Result<()> {
    let train = load_records(cfg, &args.train)?;
    let valid = match &args.valid {
        Some(p) => load_records(cfg, p)?,
        None => Vec::new(),
    };
    let (tv, kv) = load_vocabs(&args.model_dir)?;
    let mut gcfg = cfg.generator_config();
    if mle {
        gcfg = gcfg.mle_baseline();
    }
    let predictor_path = args.model_dir.join(PREDICTOR_FILE);
    let predictor = if gcfg.uses_bridge() && gcfg.bridge_input == BridgeInput::PredictorLogits {
        if !predictor_path.exists() {
            bail!(
                "{} not found; train the predictor first or set generator_bridge_input = \"indicator\"",
                predictor_path.display()
            );
        }
        Some(PredictorModel::load(&predictor_path, tv.clone(), kv.clone())?)
    } else {
        None
    };
    let mut model = GeneratorModel::new(gcfg, tv.clone(), kv)?;
    let emb = model.embedding_param();
    load_embeddings(cfg, &tv, &mut model.store.get_mut(emb).value)?;
    let curve = train_generator(&mut model, &train, &valid, predictor.as_ref())?;
    let file = if mle { MLE_GENERATOR_FILE } else { GENERATOR_FILE };
    model.save(&args.model_dir.join(file))?;
    println!("{}", serde_json::to_string_pretty(&curve)?);
    Ok(())
}

fn load_bundle(cfg: &CliConfig, dir: &Path) -> Result<Bundle> {
    let mut bundle = Bundle::load(dir).with_context(|| format!("loading model directory {}", dir.display()))?;
    cfg.apply_settings(&mut bundle.pipeline.settings)?;
    if cfg.blacklist.is_some() {
        bundle.pipeline.blacklist = cfg.blacklist()?;
    }
    if cfg.max_context_len.is_some() {
        bundle.pipeline.corpus_options.max_context_len = cfg.corpus_options()?.max_context_len;
    }
    Ok(bundle)
}

fn generate(cfg: &CliConfig, dir: &Path, input: &Path, output: &Path, strategy: Strategy, options: &GroupOptions) -> Result<()> {
    let bundle = load_bundle(cfg, dir)?;
    let pipeline = &bundle.pipeline;
    let kv = &pipeline.predictor.keyword_vocab;
    let records = load_records(cfg, input)?;
    let mut rows = Vec::with_capacity(records.len());
    for rec in &records {
        if rec.context.is_empty() {
            tracing::warn!(id = %rec.id, "empty context skipped");
            continue;
        }
        if strategy == Strategy::Truth {
            // one conditioned question per reference keyword set
            let slots = pipeline.settings.slots;
            let mut group = Vec::new();
            let mut sets = Vec::new();
            for q in &rec.questions {
                let truth: KeywordSet = q.keywords.iter().filter(|k| kv.id(k).is_some()).cloned().collect();
                if truth.is_empty() {
                    continue;
                }
                let opts = GroupOptions {
                    truth_keywords: Some(truth),
                    ..options.clone()
                };
                let g = pipeline.generate_for_tokens(&rec.context, strategy, &opts)?;
                if let Some(m) = g.selected.into_iter().next() {
                    group.push(m.question.to_string());
                    sets.push(m.hypothesis.keyword_set.into_iter().collect());
                }
                if group.len() == slots {
                    break;
                }
            }
            rows.push(HypLine {
                id: rec.id.clone(),
                group,
                keyword_sets: Some(sets),
            });
        } else {
            let g = pipeline.generate_for_tokens(&rec.context, strategy, options)?;
            let conditioned = strategy != Strategy::Mle;
            rows.push(HypLine {
                id: rec.id.clone(),
                group: g.selected.iter().map(|m| m.question.to_string()).collect(),
                keyword_sets: conditioned.then(|| {
                    g.selected
                        .iter()
                        .map(|m| m.hypothesis.keyword_set.iter().cloned().collect())
                        .collect()
                }),
            });
        }
    }
    write_lines(output, &rows)?;
    println!("wrote {} groups to {}", rows.len(), output.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    cfg: &CliConfig,
    hyps_path: &Path,
    refs_path: &Path,
    output: Option<&Path>,
    per_record: Option<&Path>,
    scatter: Option<&Path>,
    system: &str,
    model_dir: Option<&Path>,
) -> Result<()> {
    // references keep their questions as written, apart from entity cleanup
    let opts = CorpusOptions {
        clean_questions: false,
        ..cfg.corpus_options()?
    };
    let refs = load_corpus(refs_path, &opts)?;
    let by_id: std::collections::HashMap<&str, &ContextRecord> = refs.iter().map(|r| (r.id.as_str(), r)).collect();
    let text = std::fs::read_to_string(hyps_path).with_context(|| format!("reading {}", hyps_path.display()))?;
    let mut evals = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let hyp: HypLine =
            serde_json::from_str(line).with_context(|| format!("{}:{}: invalid hypothesis line", hyps_path.display(), i + 1))?;
        let Some(rec) = by_id.get(hyp.id.as_str()) else {
            bail!("{}:{}: id `{}` not in references", hyps_path.display(), i + 1, hyp.id);
        };
        if !seen.insert(hyp.id.clone()) {
            bail!("{}:{}: duplicate id `{}`", hyps_path.display(), i + 1, hyp.id);
        }
        let group: Vec<TokenSequence> = hyp.group.iter().map(|q| tokenize(&clean_context(q))).collect();
        let keyword_sets = match hyp.keyword_sets {
            Some(sets) => sets.into_iter().map(|s| Some(s.into_iter().collect())).collect(),
            None => Vec::new(),
        };
        evals.push(GroupEval {
            id: hyp.id,
            group,
            references: rec.questions.iter().map(|q| q.question.clone()).collect(),
            keyword_sets,
        });
    }
    if evals.is_empty() {
        bail!("{} holds no hypotheses", hyps_path.display());
    }
    let (mut report, rows) = evaluate_groups(&evals)?;
    if let Some(dir) = model_dir {
        let (tv, kv) = load_vocabs(dir)?;
        let predictor = PredictorModel::load(&dir.join(PREDICTOR_FILE), tv, kv)?;
        let train_opts = cfg.corpus_options()?;
        let raw = read_raw(refs_path)?;
        let mut total = 0.0;
        let mut n = 0usize;
        for r in raw.iter().map(|r| train_opts.process(r)).filter(|r| !r.context.is_empty() && !r.questions.is_empty()) {
            let logits = predictor.predict(&r.context)?;
            total += precision_at_5(&logits, &r.keyword_union(), &predictor.keyword_vocab)?;
            n += 1;
        }
        report.p_at_5 = (n > 0).then(|| total / n as f64);
    }
    let json = serde_json::to_string_pretty(&report)?;
    match output {
        Some(p) => std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{json}"),
    }
    if let Some(p) = per_record {
        let mut w = csv::Writer::from_path(p).with_context(|| format!("creating {}", p.display()))?;
        for row in &rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    if let Some(p) = scatter {
        let fresh = !p.exists();
        let file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .with_context(|| format!("opening {}", p.display()))?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if fresh {
            w.write_record(["system", "pairwise_bleu", "avg_bleu"])?;
        }
        let fmt = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_default();
        w.write_record([system.to_string(), fmt(report.pairwise_bleu), fmt(report.avg_bleu)])?;
        w.flush()?;
    }
    Ok(())
}
