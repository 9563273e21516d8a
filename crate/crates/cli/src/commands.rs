use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, Write as _};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::anyhow;
use serde::Serialize;
use treecomp_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointError};
use treecomp_core::encoder::{load_embeddings, random_embeddings, Encoder, Vocabulary};
use treecomp_core::gradcheck::{self, GradCheckConfig};
use treecomp_core::labeling::CompressionExample;
use treecomp_core::metrics::{evaluate, AccuracyHistogram, MetricsReport};
use treecomp_core::model::{HeadRegistry, Transducer};
use treecomp_core::ptb::{load_corpus, parse_bracketed, write_corpus, Compression, CorpusError, CorpusRecord};
use treecomp_core::synthetic::{context_corpus, rule_corpus};
use treecomp_core::training::{grid_search, train, write_history_csv, EpochRecord, TrainError, TrainingConfig};

use crate::config::Settings;
use crate::{AlignArgs, Command, CompressArgs, EvalArgs, GradcheckArgs, GridArgs, RunArgs, SynthArgs, SynthKind};

/// An error with the process exit status it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

const USAGE: u8 = 2;
const OPERATIONAL: u8 = 1;

fn usage(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: USAGE,
        error: error.into(),
    }
}

fn operational(error: impl Into<anyhow::Error>) -> Failure {
    Failure {
        code: OPERATIONAL,
        error: error.into(),
    }
}

trait OrExit<T> {
    fn or_usage(self) -> Result<T, Failure>;
    fn or_operational(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> OrExit<T> for Result<T, E> {
    fn or_usage(self) -> Result<T, Failure> {
        self.map_err(usage)
    }

    fn or_operational(self) -> Result<T, Failure> {
        self.map_err(operational)
    }
}

fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::InvalidConfig(_) | TrainError::EmptySplit(_) => usage(e),
        other => operational(other),
    }
}

pub fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Align(a) => align(a),
        Command::Train(a) => train_cmd(a.run),
        Command::Gridsearch(a) => gridsearch(a),
        Command::Eval(a) => eval(a),
        Command::Compress(a) => compress(a),
        Command::Gradcheck(a) => gradcheck_cmd(a),
        Command::Synth(a) => synth(a),
    }
}

// data ---------------------------------------------------------------------

fn load_examples(path: &Path) -> Result<Vec<CompressionExample>, Failure> {
    if !path.is_file() {
        return Err(usage(anyhow!("corpus file not found: {}", path.display())));
    }
    let records = load_corpus(path).or_usage()?;
    records
        .iter()
        .map(|r| {
            CompressionExample::from_record(r)
                .map_err(|e| usage(anyhow!("{}: record {:?}: {e}", path.display(), r.id)))
        })
        .collect()
}

fn load_model(path: &Path) -> Result<(Checkpoint, Transducer), Failure> {
    let ckpt = load_checkpoint(path).map_err(|e| match e {
        CheckpointError::Io { .. } => usage(e),
        other => usage(anyhow!("{}: {other}", path.display())),
    })?;
    let head = ckpt.config.make_head(&HeadRegistry::builtin()).or_usage()?;
    let model = Transducer::new(Arc::new(ckpt.encoder.clone()), ckpt.params.clone(), head).or_usage()?;
    Ok((ckpt, model))
}

struct RunSetup {
    settings: Settings,
    config: TrainingConfig,
    train: Vec<CompressionExample>,
    validation: Vec<CompressionExample>,
    encoder: Arc<Encoder>,
    out: PathBuf,
    label: String,
}

fn setup(run: &RunArgs) -> Result<RunSetup, Failure> {
    let mut s = Settings::from_optional(run.config.as_deref()).or_usage()?;
    s.set_opt("train", run.train.as_ref().map(|p| p.display()));
    s.set_opt("validation", run.validation.as_ref().map(|p| p.display()));
    s.set_opt("embeddings", run.embeddings.as_ref().map(|p| p.display()));
    s.set_opt("embedding_dim", run.embedding_dim);
    s.set_opt("out", run.out.as_ref().map(|p| p.display()));
    s.set_opt("hidden_size", run.hidden_size);
    s.set_opt("head", run.head.as_ref());
    s.set_opt("learning_rate", run.learning_rate);
    s.set_opt("l2", run.l2);
    s.set_opt("max_epochs", run.max_epochs);
    s.set_opt("patience", run.patience);
    s.set_opt("batch_size", run.batch_size);
    s.set_opt("seed", run.seed);
    s.set_opt("threshold", run.threshold);
    s.set_opt("forget_bias", run.forget_bias);
    let config = s.training().or_usage()?;
    config.validate().map_err(train_failure)?;
    HeadRegistry::builtin().create(&config.head, &config.head_options()).or_usage()?;

    let train_path = s.require_path("train").or_usage()?;
    let validation_path = s.require_path("validation").or_usage()?;
    let out = s.require_path("out").or_usage()?;
    let train = load_examples(&train_path)?;
    let validation = load_examples(&validation_path)?;
    if train.is_empty() || validation.is_empty() {
        return Err(usage(anyhow!("training and validation corpora must not be empty")));
    }

    let vocab = Vocabulary::build(train.iter().chain(&validation).map(|e| &e.tree)).or_usage()?;
    let table = match s.path("embeddings") {
        Some(path) => {
            let (table, coverage) = load_embeddings(&path, &vocab).or_usage()?;
            log::info!("embeddings cover {} of {} words", coverage.found, coverage.total);
            table
        }
        None => {
            let dim = s.usize("embedding_dim").or_usage()?.unwrap_or(vocab.tag_count()).max(1);
            random_embeddings(&vocab, dim, config.seed).or_usage()?
        }
    };
    log::info!(
        "{} tags, {} words, embeddings of size {}",
        vocab.tag_count(),
        vocab.word_count(),
        table.dimension()
    );
    let encoder = Arc::new(Encoder::new(vocab, table));
    let label = s
        .get("corpus_name")
        .map(str::to_string)
        .or_else(|| train_path.file_stem().map(|f| f.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "corpus".into());
    Ok(RunSetup {
        settings: s,
        config,
        train,
        validation,
        encoder,
        out,
        label,
    })
}

// output -------------------------------------------------------------------

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct ReportFile<'a> {
    schema_version: u32,
    corpus: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    runs: Option<usize>,
    report: &'a MetricsReport,
    histogram: AccuracyHistogram,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    annotators: BTreeMap<String, MetricsReport>,
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), Failure> {
    fs::write(path, contents).map_err(|e| operational(anyhow!("cannot write {}: {e}", path.display())))
}

fn write_reports(dir: &Path, report: &ReportFile<'_>) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| operational(anyhow!("cannot create {}: {e}", dir.display())))?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&dir.join("report.json"), json + "\n")?;
    let mut text = report.report.to_table(report.corpus);
    for (name, r) in &report.annotators {
        text.push('\n');
        text.push_str(&r.to_table(&format!("{} {name}", report.corpus)));
    }
    write_file(&dir.join("report.txt"), text)?;
    write_file(&dir.join("histogram.csv"), report.histogram.to_csv())
}

#[allow(clippy::too_many_arguments)]
fn write_run_dir(
    dir: &Path,
    echo: &str,
    checkpoint: &Checkpoint,
    history: &[EpochRecord],
    report: &MetricsReport,
    best_epoch: usize,
    label: &str,
) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| operational(anyhow!("cannot create {}: {e}", dir.display())))?;
    write_file(&dir.join("config.echo"), echo)?;
    save_checkpoint(checkpoint, dir.join("checkpoint.bin")).or_operational()?;
    let mut csv = Vec::new();
    write_history_csv(history, &mut csv).expect("writing to memory");
    write_file(&dir.join("history.csv"), csv)?;
    write_reports(
        dir,
        &ReportFile {
            schema_version: REPORT_SCHEMA_VERSION,
            corpus: label,
            best_epoch: Some(best_epoch),
            runs: None,
            report,
            histogram: report.histogram(),
            annotators: BTreeMap::new(),
        },
    )
}

fn warn_if_empty(report: &MetricsReport) {
    if report.sentences > 0 && report.compression_rate == 0.0 {
        log::warn!("model deletes every word; t reported as 0");
    }
}

// commands -----------------------------------------------------------------

fn train_cmd(run: RunArgs) -> Result<(), Failure> {
    let s = setup(&run)?;
    let head = s.config.make_head(&HeadRegistry::builtin()).or_usage()?;
    let model = s.config.init_model(s.encoder.clone(), head).or_usage()?;
    let outcome = train(model, &s.train, &s.validation, &s.config).map_err(train_failure)?;
    let ckpt = Checkpoint::new(s.config.clone(), outcome.best.params().clone(), (*s.encoder).clone());
    write_run_dir(
        &s.out,
        &s.settings.echo(&s.config),
        &ckpt,
        &outcome.history,
        &outcome.best_report,
        outcome.best_epoch,
        &s.label,
    )?;
    warn_if_empty(&outcome.best_report);
    print!("{}", outcome.best_report.to_table(&s.label));
    println!(
        "best epoch {} of {}; outputs in {}",
        outcome.best_epoch,
        outcome.history.len(),
        s.out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct GridJson<'a> {
    schema_version: u32,
    corpus: &'a str,
    best_hidden_size: usize,
    rows: Vec<GridJsonRow<'a>>,
}

#[derive(Serialize)]
struct GridJsonRow<'a> {
    hidden_size: usize,
    best_epoch: usize,
    epochs: usize,
    report: &'a MetricsReport,
}

fn gridsearch(args: GridArgs) -> Result<(), Failure> {
    let mut run = args.run.clone();
    run.hidden_size = None;
    let mut s = setup(&run)?;
    if let Some(name) = args.corpus_name {
        s.label = name;
    }
    if args.sizes.is_empty() || args.sizes.contains(&0) {
        return Err(usage(anyhow!("--sizes needs at least one positive hidden size")));
    }
    let head = s.config.make_head(&HeadRegistry::builtin()).or_usage()?;
    let grid = grid_search(&s.label, s.encoder.clone(), head, &s.train, &s.validation, &s.config, &args.sizes)
        .map_err(train_failure)?;
    for row in &grid.rows {
        let config = TrainingConfig {
            hidden_size: row.hidden_size,
            ..s.config.clone()
        };
        let mut settings = s.settings.clone();
        settings.set("hidden_size", row.hidden_size);
        let dir = s.out.join(format!("size-{}", row.hidden_size));
        settings.set("out", dir.display());
        let ckpt = Checkpoint::new(config.clone(), row.outcome.best.params().clone(), (*s.encoder).clone());
        write_run_dir(
            &dir,
            &settings.echo(&config),
            &ckpt,
            &row.outcome.history,
            &row.outcome.best_report,
            row.outcome.best_epoch,
            &s.label,
        )?;
    }
    let table = grid.to_table();
    write_file(&s.out.join("grid.txt"), &table)?;
    let best = grid.best_row().hidden_size;
    let json = GridJson {
        schema_version: REPORT_SCHEMA_VERSION,
        corpus: &s.label,
        best_hidden_size: best,
        rows: grid
            .rows
            .iter()
            .map(|r| GridJsonRow {
                hidden_size: r.hidden_size,
                best_epoch: r.outcome.best_epoch,
                epochs: r.outcome.history.len(),
                report: &r.outcome.best_report,
            })
            .collect(),
    };
    write_file(&s.out.join("grid.json"), serde_json::to_string_pretty(&json).expect("serializes") + "\n")?;
    link_best(&s.out, &format!("size-{best}"))?;
    print!("{table}");
    Ok(())
}

/// Points `<out>/best` at the winning run directory.
fn link_best(out: &Path, target: &str) -> Result<(), Failure> {
    let link = out.join("best");
    if link.symlink_metadata().is_ok() {
        fs::remove_file(&link).map_err(|e| operational(anyhow!("cannot replace {}: {e}", link.display())))?;
    }
    #[cfg(unix)]
    let made = std::os::unix::fs::symlink(target, &link);
    #[cfg(not(unix))]
    let made = fs::write(&link, format!("{target}\n"));
    made.map_err(|e| operational(anyhow!("cannot create {}: {e}", link.display())))
}

fn eval(args: EvalArgs) -> Result<(), Failure> {
    let (ckpt, model) = load_model(&args.checkpoint)?;
    let corpus = load_examples(&args.corpus)?;
    if corpus.is_empty() {
        return Err(usage(anyhow!("{} has no records", args.corpus.display())));
    }
    let train_split = args.train.as_deref().map(load_examples).transpose()?;
    let validation = args.validation.as_deref().map(load_examples).transpose()?;
    if let Some(tr) = &train_split {
        let trees = tr.iter().chain(validation.iter().flatten()).map(|e| &e.tree);
        let expected = Vocabulary::build(trees).or_usage()?.fingerprint();
        if let Err(e) = ckpt.check_fingerprint(&expected) {
            if args.strict {
                return Err(usage(e));
            }
            log::warn!("{e}");
        }
    }

    let models = match args.seeds {
        None | Some(0) => vec![model],
        Some(n) => {
            let (Some(tr), Some(val)) = (&train_split, &validation) else {
                return Err(usage(anyhow!("--seeds needs --train and --validation")));
            };
            (0..n as u64)
                .map(|k| {
                    let config = TrainingConfig {
                        seed: ckpt.config.seed.wrapping_add(k),
                        ..ckpt.config.clone()
                    };
                    let fresh = config.init_model(model.encoder_arc().clone(), model.head().clone()).or_usage()?;
                    let out = train(fresh, tr, val, &config).map_err(train_failure)?;
                    log::info!("run {} of {n}: best epoch {}", k + 1, out.best_epoch);
                    Ok(out.best)
                })
                .collect::<Result<Vec<_>, Failure>>()?
        }
    };
    let score = |subset: &[CompressionExample]| -> Result<MetricsReport, Failure> {
        let reports = models
            .iter()
            .map(|m| evaluate(m, subset).or_usage())
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MetricsReport::average(&reports).expect("at least one model"))
    };
    let report = score(&corpus)?;
    let mut annotators = BTreeMap::new();
    if args.per_annotator {
        let mut groups: BTreeMap<Option<u8>, Vec<CompressionExample>> = BTreeMap::new();
        for ex in &corpus {
            groups.entry(ex.annotator).or_default().push(ex.clone());
        }
        for (who, group) in groups {
            let name = who.map_or_else(|| "annotator none".to_string(), |a| format!("annotator {a}"));
            annotators.insert(name, score(&group)?);
        }
    }
    let label = args.corpus_name.clone().unwrap_or_else(|| {
        args.corpus
            .file_stem()
            .map_or_else(|| "corpus".into(), |f| f.to_string_lossy().into_owned())
    });
    let file = ReportFile {
        schema_version: REPORT_SCHEMA_VERSION,
        corpus: &label,
        best_epoch: None,
        runs: (models.len() > 1).then_some(models.len()),
        report: &report,
        histogram: report.histogram(),
        annotators,
    };
    if let Some(dir) = &args.out {
        write_reports(dir, &file)?;
    }
    warn_if_empty(&report);
    print!("{}", report.to_table(&label));
    for (name, r) in &file.annotators {
        print!("{}", r.to_table(&format!("{label} {name}")));
    }
    Ok(())
}

fn compress(args: CompressArgs) -> Result<(), Failure> {
    let (_, model) = load_model(&args.checkpoint)?;
    let inputs: Vec<String> = if !args.trees.is_empty() {
        args.trees.clone()
    } else if let Some(path) = &args.input {
        fs::read_to_string(path)
            .map_err(|e| usage(anyhow!("cannot read {}: {e}", path.display())))?
            .lines()
            .map(str::to_string)
            .collect()
    } else {
        io::stdin().lock().lines().collect::<Result<_, _>>().or_operational()?
    };
    let mut stdout = io::stdout().lock();
    let (mut total, mut failed) = (0usize, 0usize);
    for (n, text) in inputs.iter().enumerate() {
        if text.trim().is_empty() {
            continue;
        }
        total += 1;
        let result = parse_bracketed(text).map_err(anyhow::Error::from).and_then(|t| {
            if t.leaf_count() == 1 {
                log::warn!("input {}: single-leaf tree", n + 1);
            }
            model.compress(&t).map_err(anyhow::Error::from)
        });
        match result {
            Ok(c) => {
                writeln!(stdout, "{}", c.tokens.join(" ")).or_operational()?;
                if args.tree {
                    writeln!(stdout, "{}", c.tree.to_bracketed()).or_operational()?;
                }
            }
            Err(e) => {
                failed += 1;
                eprintln!("input {}: {e:#}", n + 1);
            }
        }
    }
    if total == 0 {
        return Err(usage(anyhow!("no input trees")));
    }
    if failed > 0 {
        eprintln!("{} of {total} inputs compressed, {failed} failed", total - failed);
    }
    if failed == total {
        return Err(operational(anyhow!("every input failed")));
    }
    Ok(())
}

fn gradcheck_cmd(args: GradcheckArgs) -> Result<(), Failure> {
    if args.trees == 0 || args.hidden == 0 || args.max_nodes == 0 {
        return Err(usage(anyhow!("--trees, --hidden and --max-nodes must be positive")));
    }
    let registry = HeadRegistry::builtin();
    for h in &args.heads {
        registry.create(h, &Default::default()).or_usage()?;
    }
    let report = gradcheck::run(&GradCheckConfig {
        trees: args.trees,
        max_hidden: args.hidden,
        max_nodes: args.max_nodes,
        seed: args.seed,
        step: gradcheck::DEFAULT_STEP,
        tolerance: args.tolerance,
        heads: args.heads.clone(),
        lambdas: args.lambdas.clone(),
        corrupt_backward: args.corrupt_backward,
    })
    .or_operational()?;
    for (name, err) in &report.tensors {
        let verdict = if *err < report.tolerance { "ok" } else { "FAIL" };
        println!("{name:<8} {err:.3e} {verdict}");
    }
    let (name, worst) = report.worst();
    println!("{} trees, max relative error {worst:.3e} ({name}), tolerance {:e}", report.instances, report.tolerance);
    if !report.passed() {
        return Err(operational(anyhow!(
            "gradient check failed for {}",
            report.failing().join(", ")
        )));
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let corpus = match args.kind {
        SynthKind::Rule => rule_corpus(args.n, args.seed),
        SynthKind::Context => context_corpus(args.n, args.seed),
    };
    let records: Vec<CorpusRecord> = corpus.iter().map(CompressionExample::to_record).collect();
    write_corpus(&records, &args.output).or_operational()?;
    println!("wrote {} records to {}", records.len(), args.output.display());
    Ok(())
}

#[derive(Serialize)]
struct Reject<'a> {
    line: usize,
    reason: String,
    text: &'a str,
}

fn align(args: AlignArgs) -> Result<(), Failure> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| usage(anyhow!("cannot read {}: {e}", args.input.display())))?;
    let mut records = Vec::new();
    let mut rejects = String::new();
    let (mut aligned, mut passed) = (0usize, 0usize);
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let outcome = CorpusRecord::from_json_line(line, n + 1).map_err(anyhow::Error::from).and_then(|r| {
            match &r.compression {
                Compression::Mask(_) => Ok((r, false)),
                Compression::Tokens(_) => {
                    let ex = CompressionExample::from_record(&r)
                        .map_err(|e| anyhow!("line {}: record {:?}: {e}", n + 1, r.id))?;
                    Ok((
                        CorpusRecord {
                            compression: Compression::Mask(ex.mask),
                            ..r
                        },
                        true,
                    ))
                }
            }
        });
        match outcome {
            Ok((r, was_aligned)) => {
                if was_aligned {
                    aligned += 1;
                } else {
                    passed += 1;
                }
                records.push(r);
            }
            Err(e) if args.strict => return Err(usage(e)),
            Err(e) => {
                log::warn!("{e:#}");
                let reject = Reject {
                    line: n + 1,
                    reason: format!("{e:#}"),
                    text: line,
                };
                rejects.push_str(&serde_json::to_string(&reject).expect("serializes"));
                rejects.push('\n');
            }
        }
    }
    write_corpus(&records, &args.output).map_err(|e| match e {
        CorpusError::Io { .. } => operational(e),
        other => operational(other),
    })?;
    let rejects_path = args.rejects.clone().unwrap_or_else(|| {
        let mut p = args.output.clone().into_os_string();
        p.push(".rejects");
        PathBuf::from(p)
    });
    let rejected = rejects.lines().count();
    write_file(&rejects_path, rejects)?;
    println!("aligned {aligned}, passed through {passed}, rejected {rejected}");
    Ok(())
}
