//! Command-line pipeline: train, eval, extract, gradcheck, stats, synth.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error (bad flags, bad
//! paths, conflicting switches). Every subcommand honors --seed end to end;
//! --threads (or SPANRE_THREADS) caps per-sentence fan-out, with 1 as the
//! reference mode.

use clap::{Args, Parser, Subcommand, ValueEnum};
use spanre::checkpoint;
use spanre::data::{self, LoadOptions, RelationSchema};
use spanre::synth::{generate_synthetic, OverlapMix};
use spanre::tensor::gradcheck::check_all_ops;
use spanre::train::{self, evaluate_with_threads, prepare};
use spanre::TrainConfig;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "spanre", version, about = "Joint entity and relation extraction with labeled span taggers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model and write the best-by-F1 checkpoint
    Train(TrainArgs),
    /// Score a checkpoint against an annotated corpus
    Eval(EvalArgs),
    /// Extract triplets from raw sentences, one per input line
    Extract(ExtractArgs),
    /// Verify every tape gradient against central finite differences
    Gradcheck(GradcheckArgs),
    /// Corpus statistics: relations, sentences, Normal/SEO/EPO counts
    Stats(StatsArgs),
    /// Generate a synthetic corpus with a controlled overlap mix
    Synth(SynthArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// training corpus (JSON lines)
    #[arg(long)]
    corpus: PathBuf,
    /// validation corpus; defaults to scoring on the training set
    #[arg(long)]
    val: Option<PathBuf>,
    /// relation schema JSON
    #[arg(long)]
    schema: PathBuf,
    /// checkpoint output path
    #[arg(long)]
    out: PathBuf,
    /// per-epoch JSON-lines metrics log (default: <out>.metrics.jsonl)
    #[arg(long)]
    metrics: Option<PathBuf>,
    /// JSON config file; flags override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// optional word vectors in the standard text format
    #[arg(long)]
    word_vectors: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    threads: Option<usize>,
    /// replace entity attention by subject/sentence concatenation
    #[arg(long, conflicts_with = "entity_attention")]
    ablate_entity_attention: bool,
    /// use a single char-CNN kernel instead of multi-scale kernels
    #[arg(long, conflicts_with = "multi_scale_chars")]
    ablate_multi_scale_chars: bool,
    /// set the entity-attention switch explicitly
    #[arg(long)]
    entity_attention: Option<bool>,
    /// set the multi-scale char-CNN switch explicitly
    #[arg(long)]
    multi_scale_chars: Option<bool>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// additional breakdown tables (repeatable)
    #[arg(long, value_enum)]
    breakdown: Vec<Breakdown>,
    /// also write the full report as JSON
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Breakdown {
    Overlap,
    Length,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// raw text, one sentence per line
    #[arg(long)]
    input: PathBuf,
    /// JSON-lines output (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    /// random instances per op
    #[arg(long, default_value_t = 100)]
    instances: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// failure threshold on the relative error
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// extend the schema with unseen labels instead of failing
    #[arg(long)]
    auto_extend: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// corpus output path (JSON lines)
    #[arg(long)]
    out: PathBuf,
    /// schema output path
    #[arg(long)]
    schema_out: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// triplet-level Normal,SEO,EPO fractions
    #[arg(long, default_value = "0.4,0.4,0.2")]
    mix: String,
    /// comma-separated relation labels
    #[arg(long, conflicts_with = "relations")]
    labels: Option<String>,
    /// number of generated relation labels rel0..relN-1
    #[arg(long, default_value_t = 3)]
    relations: usize,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => write!(f, "{}", m),
        }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn runtime(msg: impl fmt::Display) -> CliError {
    CliError::Runtime(msg.to_string())
}

fn require_file(path: &Path, what: &str) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(usage(format!("{} not found: {}", what, path.display())));
    }
    Ok(())
}

fn resolve_threads(flag: Option<usize>) -> Result<usize, CliError> {
    if let Some(n) = flag {
        return Ok(n.max(1));
    }
    match std::env::var("SPANRE_THREADS") {
        Ok(v) => v
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| usage(format!("SPANRE_THREADS is not a number: {:?}", v))),
        Err(_) => Ok(1),
    }
}

fn main() {
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(()) => 0,
        Err(e @ CliError::Usage(_)) => {
            eprintln!("error: {}", e);
            2
        }
        Err(e) => {
            eprintln!("error: {}", e);
            1
        }
    };
    std::process::exit(code);
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Extract(a) => cmd_extract(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Stats(a) => cmd_stats(a),
        Cmd::Synth(a) => cmd_synth(a),
    }
}

fn load_schema(path: &Path) -> Result<RelationSchema, CliError> {
    require_file(path, "schema file")?;
    let f = fs::File::open(path).map_err(runtime)?;
    RelationSchema::from_json(f).map_err(|e| usage(format!("schema {}: {}", path.display(), e)))
}

fn load_corpus_file(
    path: &Path,
    schema: &mut RelationSchema,
    opts: LoadOptions,
) -> Result<(Vec<spanre::AnnotatedExample>, data::LoadStats), CliError> {
    require_file(path, "corpus file")?;
    let f = fs::File::open(path).map_err(runtime)?;
    data::load_corpus(f, schema, opts).map_err(runtime)
}

fn report_load(path: &Path, stats: &data::LoadStats) {
    eprintln!(
        "loaded {}: {} sentences, {} triplets ({} None dropped, {} unlocatable, {} duplicate, {} rejected for subject overlap, {} truncated)",
        path.display(),
        stats.sentences,
        stats.triplets,
        stats.dropped_none,
        stats.dropped_unlocatable,
        stats.dropped_duplicates,
        stats.rejected_subject_overlap,
        stats.truncated
    );
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = match &a.config {
        Some(p) => {
            require_file(p, "config file")?;
            let text = fs::read_to_string(p).map_err(runtime)?;
            serde_json::from_str::<TrainConfig>(&text)
                .map_err(|e| usage(format!("config {}: {}", p.display(), e)))?
        }
        None => TrainConfig::default(),
    };
    // flags win over the config file
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.base_lr = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup_steps = v;
    }
    if let Some(v) = a.patience {
        cfg.patience = v;
    }
    if a.ablate_entity_attention {
        cfg.model.entity_attention = false;
    }
    if let Some(v) = a.entity_attention {
        cfg.model.entity_attention = v;
    }
    if a.ablate_multi_scale_chars {
        cfg.model.multi_scale_chars = false;
    }
    if let Some(v) = a.multi_scale_chars {
        cfg.model.multi_scale_chars = v;
    }
    cfg.validate().map_err(usage)?;
    if let Some(p) = &a.word_vectors {
        require_file(p, "word-vector file")?;
    }
    let threads = resolve_threads(a.threads)?;

    let mut schema = load_schema(&a.schema)?;
    let opts = LoadOptions {
        t_max: cfg.model.t_max,
        auto_extend: false,
    };
    let (train_corpus, stats) = load_corpus_file(&a.corpus, &mut schema, opts)?;
    report_load(&a.corpus, &stats);
    let val_corpus = match &a.val {
        Some(p) => {
            let (v, vstats) = load_corpus_file(p, &mut schema, opts)?;
            report_load(p, &vstats);
            Some(v)
        }
        None => None,
    };

    let result = train::train(
        &train_corpus,
        val_corpus.as_deref(),
        &schema,
        &cfg,
        threads,
        a.word_vectors.as_deref(),
    )
    .map_err(runtime)?;

    if let Some(n) = result.word_vectors_loaded {
        eprintln!("word vectors: {} vocabulary rows initialized from file", n);
    }
    if result.skipped_no_subject > 0 {
        eprintln!(
            "warning: {} example passes skipped (no gold subjects)",
            result.skipped_no_subject
        );
    }
    if result.dropped_out_of_window > 0 {
        eprintln!(
            "warning: {} examples dropped (gold spans beyond the token window)",
            result.dropped_out_of_window
        );
    }

    let metrics_path = a
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.jsonl", a.out.display())));
    let mut log = String::new();
    for m in &result.history {
        log.push_str(&serde_json::to_string(m).map_err(runtime)?);
        log.push('\n');
        println!(
            "epoch {:>4}  loss {:.6}  val P {:.3} R {:.3} F1 {:.3}  lr {:.2e}{}",
            m.epoch,
            m.train_loss,
            m.val_precision,
            m.val_recall,
            m.val_f1,
            m.lr,
            if m.is_best { "  *" } else { "" }
        );
    }
    fs::write(&metrics_path, log).map_err(runtime)?;

    checkpoint::save(&result.best, &cfg, &a.out).map_err(runtime)?;
    println!(
        "best F1 {:.3} at epoch {}; checkpoint written to {}",
        result.best_f1,
        result.best_epoch,
        a.out.display()
    );
    if result.diverged {
        return Err(runtime(
            "training diverged (non-finite loss); best checkpoint retained",
        ));
    }
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint, "checkpoint")?;
    let threads = resolve_threads(a.threads)?;
    let (params, cfg, mut schema) = checkpoint::load(&a.checkpoint).map_err(runtime)?;
    let opts = LoadOptions {
        t_max: cfg.model.t_max,
        auto_extend: false,
    };
    let (corpus, stats) = load_corpus_file(&a.corpus, &mut schema, opts)?;
    report_load(&a.corpus, &stats);
    let (prepared, dropped) = prepare(&params, &corpus, &schema).map_err(runtime)?;
    if dropped > 0 {
        eprintln!("warning: {} examples dropped (spans beyond the token window)", dropped);
    }
    let report = evaluate_with_threads(&params, &prepared, threads).map_err(runtime)?;
    println!("{}", report.overall_table());
    for b in &a.breakdown {
        println!();
        match b {
            Breakdown::Overlap => println!("{}", report.overlap_table()),
            Breakdown::Length => println!("{}", report.length_table()),
        }
    }
    if let Some(path) = &a.json {
        fs::write(path, report.to_json()).map_err(runtime)?;
    }
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<(), CliError> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input file")?;
    let (params, _cfg, _schema) = checkpoint::load(&a.checkpoint).map_err(runtime)?;
    let text = fs::read_to_string(&a.input).map_err(runtime)?;

    let mut out: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(fs::File::create(p).map_err(runtime)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut skipped = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            skipped += 1;
            continue;
        }
        let tokens = data::tokenize(line);
        let ids = params.sentence_ids(&tokens);
        let triplets = spanre::tagger::extract_triplets(&params, &ids).map_err(runtime)?;
        let rows: Vec<serde_json::Value> = triplets
            .iter()
            .map(|t| {
                serde_json::json!({
                    "subject": tokens[t.subject.start..=t.subject.end].join(" "),
                    "subject_span": [t.subject.start, t.subject.end],
                    "relation": params.relation_labels[t.relation],
                    "object": tokens[t.object.start..=t.object.end].join(" "),
                    "object_span": [t.object.start, t.object.end],
                })
            })
            .collect();
        let record = serde_json::json!({ "sentence": line, "triplets": rows });
        writeln!(out, "{}", record).map_err(runtime)?;
    }
    if skipped > 0 {
        eprintln!("warning: {} empty input lines skipped", skipped);
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<(), CliError> {
    let mut failures = Vec::new();
    let checks = check_all_ops(a.instances, a.seed).map_err(runtime)?;
    for c in &checks {
        let ok = c.passes(a.tol);
        println!(
            "{:<18} {:>4} instances  max rel err {:.3e}  {}",
            c.name,
            c.instances,
            c.max_rel_err,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failures.push(c.name.to_string());
        }
    }
    let e2e = train::end_to_end_gradcheck(a.seed).map_err(runtime)?;
    let ok = e2e < a.tol;
    println!(
        "{:<18} {:>4} instances  max rel err {:.3e}  {}",
        "joint_loss(e2e)",
        1,
        e2e,
        if ok { "ok" } else { "FAIL" }
    );
    if !ok {
        failures.push("joint_loss(e2e)".to_string());
    }
    if !failures.is_empty() {
        return Err(runtime(format!(
            "gradient check failed for: {}",
            failures.join(", ")
        )));
    }
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<(), CliError> {
    let mut schema = load_schema(&a.schema)?;
    let opts = LoadOptions {
        auto_extend: a.auto_extend,
        ..LoadOptions::default()
    };
    let (corpus, stats) = load_corpus_file(&a.corpus, &mut schema, opts)?;
    report_load(&a.corpus, &stats);
    let table = data::corpus_stats(&corpus, &schema).map_err(runtime)?;
    println!("{}", table.to_table());
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<(), CliError> {
    let parts: Vec<&str> = a.mix.split(',').collect();
    if parts.len() != 3 {
        return Err(usage(format!("--mix wants three comma-separated fractions, got {:?}", a.mix)));
    }
    let frac: Result<Vec<f64>, _> = parts.iter().map(|p| p.trim().parse::<f64>()).collect();
    let frac = frac.map_err(|e| usage(format!("--mix: {}", e)))?;
    let mix = OverlapMix::new(frac[0], frac[1], frac[2]).map_err(|e| usage(e.to_string()))?;
    let labels: Vec<String> = match &a.labels {
        Some(csv) => csv.split(',').map(|s| s.trim().to_string()).collect(),
        None => (0..a.relations).map(|i| format!("rel{}", i)).collect(),
    };
    let schema = RelationSchema::new(labels).map_err(|e| usage(e.to_string()))?;
    let corpus = generate_synthetic(a.seed, a.n, &schema, mix).map_err(|e| usage(e.to_string()))?;
    fs::write(&a.out, data::to_jsonl(&corpus)).map_err(runtime)?;
    fs::write(&a.schema_out, schema.to_json()).map_err(runtime)?;
    let stats = data::corpus_stats(&corpus, &schema).map_err(runtime)?;
    println!("{}", stats.to_table());
    Ok(())
}
