//! Command-line driver: training, evaluation, gradient checking and
//! synthetic corpus generation.
//!
//! Exit codes: 0 success, 1 runtime failure (including a failed gradient
//! check), 2 configuration or usage error.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use treelstm::checkpoint::{load_checkpoint, report_text, save_checkpoint, save_history};
use treelstm::corpus::{
    holdout_split, load_embeddings, parse_class_corpus_with, parse_parallel_corpus_with, select,
    stratified_split, ClassCorpus, EmbeddingTable, Labeling, ParallelCorpus,
};
use treelstm::synth::{synth_task, SynthKind};
use treelstm_core::tensor::finite_difference_check;
use treelstm_core::training::{
    evaluate, model_select, train, CellKind, EncodingSpec, Hyperparams, Model, ModelConfig,
};
use treelstm_core::transduction::{MaskPolicy, Sample, Target, TaskSpec};

#[derive(Parser)]
#[command(name = "treelstm", version, about = "Constrained tree transduction trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more models and write checkpoints plus histories
    Train(TrainArgs),
    /// Evaluate checkpoints on a test corpus and print a metric report
    Eval(EvalArgs),
    /// Check analytic gradients against finite differences
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus
    Synth(SynthArgs),
}

/// Options shared by train and eval. Every option may also come from a
/// `key=value` config file; explicit flags win.
#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Optional key=value config file; flags override its entries
    #[arg(long)]
    config: Option<PathBuf>,
    /// Task kind: supersource | relabel | prune
    #[arg(long)]
    task: Option<String>,
    /// Cell variant: td | childsum | nary
    #[arg(long)]
    cell: Option<String>,
    /// Hidden state size
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding table; node labels become dense lookups instead of
    /// categorical integers
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Base RNG seed; run i uses seed + i
    #[arg(long)]
    seed: Option<u64>,
    /// Number of independent runs
    #[arg(long)]
    runs: Option<usize>,
    /// Maximum tree out-degree accepted by the parser (and the N-ary
    /// cell's arity); inferred from the corpus when absent
    #[arg(long)]
    max_outdegree: Option<usize>,
    /// Node-label alphabet size override (inferred when absent)
    #[arg(long)]
    alphabet: Option<usize>,
    /// Class count override (inferred when absent)
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Training corpus
    #[arg(long)]
    train: Option<PathBuf>,
    /// Validation corpus; a stratified 10% holdout of the training corpus
    /// when absent
    #[arg(long)]
    val: Option<PathBuf>,
    /// Comma-separated hidden sizes to sweep before the final run
    #[arg(long)]
    grid: Option<String>,
    /// Maximum epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Early-stopping patience
    #[arg(long)]
    patience: Option<usize>,
    /// Output directory for checkpoints and histories
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Test corpus
    #[arg(long)]
    test: Option<PathBuf>,
    /// Checkpoint path; with runs > 1, `runN.<name>` siblings are loaded
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Flip a backward rule's sign to prove the check can fail
    #[arg(long, hide = true)]
    inject_fault: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Task kind: depth_relabel | subtree_parity_relabel | keyword_prune |
    /// class_by_root_arity
    #[arg(long)]
    kind: String,
    /// Number of records
    #[arg(long)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output corpus file
    #[arg(long)]
    out: PathBuf,
}

/// Errors that choose the exit code.
enum CliError {
    /// Bad configuration or usage: exit code 2.
    Config(String),
    /// Failure at runtime (IO, mismatched checkpoint, failed check): 1.
    Runtime(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Gradcheck(args) => cmd_gradcheck(args),
        Command::Synth(args) => cmd_synth(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// `key=value` lines; `#` starts a comment.
struct ConfigFile(HashMap<String, String>);

impl ConfigFile {
    fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let mut map = HashMap::new();
        if let Some(path) = path {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
            for (i, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(CliError::config(format!(
                        "{}:{}: expected key=value",
                        path.display(),
                        i + 1
                    )));
                };
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(ConfigFile(map))
    }

    fn get<T: FromStr>(&self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::config(format!("config key '{key}': bad value '{v}'"))),
        }
    }

    fn path(&self, key: &str, flag: Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| self.0.get(key).map(PathBuf::from))
    }
}

#[derive(Clone, Copy, PartialEq)]
enum TaskKind {
    Supersource,
    Relabel,
    Prune,
}

impl FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "supersource" => Ok(TaskKind::Supersource),
            "relabel" => Ok(TaskKind::Relabel),
            "prune" => Ok(TaskKind::Prune),
            other => Err(format!("unknown task '{other}'")),
        }
    }
}

fn parse_cell(s: &str) -> Result<CellKind, CliError> {
    match s {
        "td" => Ok(CellKind::TopDown),
        "childsum" => Ok(CellKind::ChildSum),
        "nary" => Ok(CellKind::Nary),
        other => Err(CliError::config(format!("unknown cell '{other}'"))),
    }
}

/// Common settings resolved from flags and config file.
struct Resolved {
    task: TaskKind,
    cell: CellKind,
    hidden: usize,
    embeddings: Option<EmbeddingTable>,
    seed: u64,
    runs: usize,
    max_outdegree: Option<usize>,
    alphabet: Option<usize>,
    classes: Option<usize>,
    file: ConfigFile,
}

fn resolve_common(args: &CommonArgs) -> Result<Resolved, CliError> {
    let file = ConfigFile::load(args.config.as_deref())?;
    let task: TaskKind = file
        .get::<String>("task", args.task.clone())?
        .ok_or_else(|| CliError::config("--task is required"))?
        .parse()
        .map_err(CliError::Config)?;
    let cell = parse_cell(
        &file
            .get::<String>("cell", args.cell.clone())?
            .ok_or_else(|| CliError::config("--cell is required"))?,
    )?;
    let embeddings = match file.path("embeddings", args.embeddings.clone()) {
        None => None,
        Some(p) => Some(
            load_embeddings(&p)
                .map_err(|e| CliError::runtime(format!("embeddings {}: {e}", p.display())))?,
        ),
    };
    Ok(Resolved {
        task,
        cell,
        hidden: file.get("hidden", args.hidden)?.unwrap_or(100),
        embeddings,
        seed: file.get("seed", args.seed)?.unwrap_or(0),
        runs: file.get("runs", args.runs)?.unwrap_or(10),
        max_outdegree: file.get("max_outdegree", args.max_outdegree)?,
        alphabet: file.get("alphabet", args.alphabet)?,
        classes: file.get("classes", args.classes)?,
        file,
    })
}

/// A loaded corpus with its inferred shape facts.
struct LoadedCorpus {
    samples: Vec<Sample>,
    alphabet: usize,
    classes: usize,
    max_outdegree: usize,
}

fn load_corpus(path: &Path, task: TaskKind, r: &Resolved) -> Result<LoadedCorpus, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read corpus {}: {e}", path.display())))?;
    let bound = r.max_outdegree.unwrap_or(usize::MAX);
    let labeling = match &r.embeddings {
        Some(t) => Labeling::Embedded(t),
        None => Labeling::Categorical,
    };
    let fail = |e| CliError::runtime(format!("{}: {e}", path.display()));
    let (samples, alphabet, classes) = match task {
        TaskKind::Supersource => {
            let ClassCorpus { samples, alphabet, classes } =
                parse_class_corpus_with(&text, bound, labeling).map_err(fail)?;
            (samples, alphabet, classes)
        }
        TaskKind::Relabel | TaskKind::Prune => {
            let ParallelCorpus { samples, alphabet, classes } =
                parse_parallel_corpus_with(&text, bound, task == TaskKind::Prune, labeling)
                    .map_err(fail)?;
            (samples, alphabet, classes)
        }
    };
    let max_outdegree = samples
        .iter()
        .flat_map(|s| s.tree.node_ids().map(|u| s.tree.children(u).len()).collect::<Vec<_>>())
        .max()
        .unwrap_or(0);
    Ok(LoadedCorpus { samples, alphabet, classes, max_outdegree })
}

fn model_config(r: &Resolved, alphabet: usize, classes: usize, arity: usize) -> ModelConfig {
    let task = match r.task {
        TaskKind::Supersource => TaskSpec::Supersource { classes },
        // parallel corpora supervise every node
        TaskKind::Relabel => TaskSpec::Relabel { classes, mask: MaskPolicy::AllNodes },
        TaskKind::Prune => TaskSpec::Prune { subtree_consistent: false },
    };
    let encoding = match &r.embeddings {
        Some(t) => EncodingSpec::Dense { dim: t.dim() },
        None => EncodingSpec::OneHot { alphabet },
    };
    ModelConfig { task, cell: r.cell, hidden: r.hidden, encoding, arity }
}

/// Suffixed sibling path for run `i` of `runs`.
fn run_path(base: &Path, i: usize, runs: usize) -> PathBuf {
    if runs == 1 {
        return base.to_path_buf();
    }
    let mut name = base.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    name = format!("run{}.{}", i + 1, name);
    base.with_file_name(name)
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let r = resolve_common(&args.common)?;
    let train_path = r
        .file
        .path("train", args.train.clone())
        .ok_or_else(|| CliError::config("--train is required"))?;
    let epochs = r.file.get("epochs", args.epochs)?.unwrap_or(100);
    let patience = r.file.get("patience", args.patience)?.unwrap_or(10);
    let out_dir = r.file.path("out", args.out.clone()).unwrap_or_else(|| PathBuf::from("."));
    let grid_text = r.file.get::<String>("grid", args.grid.clone())?;

    let loaded = load_corpus(&train_path, r.task, &r)?;
    let (train_split, val_split) = match r.file.path("val", args.val.clone()) {
        Some(val_path) => {
            let val = load_corpus(&val_path, r.task, &r)?;
            (loaded.samples.clone(), val.samples)
        }
        None => {
            // stratify the holdout on classes where the task has them
            let split = match r.task {
                TaskKind::Supersource => {
                    let classes: Vec<usize> = loaded
                        .samples
                        .iter()
                        .map(|s| match s.target {
                            Target::Class(c) => c,
                            _ => 0,
                        })
                        .collect();
                    stratified_split(&classes, 0.10, r.seed)
                }
                _ => holdout_split(loaded.samples.len(), 0.10, r.seed),
            }
            .map_err(|e| CliError::runtime(e.to_string()))?;
            (select(&loaded.samples, &split.train), select(&loaded.samples, &split.validation))
        }
    };
    if train_split.is_empty() || val_split.is_empty() {
        return Err(CliError::config("training and validation splits must be nonempty"));
    }

    let alphabet = r.alphabet.unwrap_or(loaded.alphabet);
    let classes = r.classes.unwrap_or(loaded.classes);
    let arity = r.max_outdegree.unwrap_or(loaded.max_outdegree.max(1));
    let mut config = model_config(&r, alphabet, classes, arity);

    let mut hp = Hyperparams { hidden: r.hidden, epochs, patience, seed: r.seed, ..Default::default() };

    if let Some(text) = grid_text {
        let grid: Vec<usize> = text
            .split(',')
            .map(|f| f.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::config(format!("bad --grid '{text}'")))?;
        let (winner, report) = model_select(&config, &train_split, &val_split, &grid, &hp)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        println!("hidden\tval_metric\tbest_epoch");
        for entry in &report {
            println!("{}\t{}\t{}", entry.hidden, entry.best_metric, entry.best_epoch);
        }
        println!("selected\t{winner}");
        config.hidden = winner;
        hp.hidden = winner;
    }

    fs::create_dir_all(&out_dir)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let checkpoint_base = out_dir.join("checkpoint.txt");
    let history_base = out_dir.join("history.txt");
    for i in 0..r.runs {
        let mut hp_run = hp.clone();
        hp_run.seed = r.seed + i as u64;
        let mut model = config.build(hp_run.seed);
        let result = train(&mut model, &train_split, &val_split, &hp_run)
            .map_err(|e| CliError::runtime(e.to_string()))?;
        save_checkpoint(&model.store, &run_path(&checkpoint_base, i, r.runs))
            .map_err(|e| CliError::runtime(e.to_string()))?;
        save_history(&result.history, &run_path(&history_base, i, r.runs))
            .map_err(|e| CliError::runtime(e.to_string()))?;
        println!(
            "run{}\tbest_epoch\t{}\tval_metric\t{}",
            i + 1,
            result.best_epoch,
            result.best_metric
        );
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let r = resolve_common(&args.common)?;
    let test_path = r
        .file
        .path("test", args.test.clone())
        .ok_or_else(|| CliError::config("--test is required"))?;
    let checkpoint = r
        .file
        .path("checkpoint", args.checkpoint.clone())
        .ok_or_else(|| CliError::config("--checkpoint is required"))?;

    let loaded = load_corpus(&test_path, r.task, &r)?;
    let alphabet = r.alphabet.unwrap_or(loaded.alphabet);
    let classes = r.classes.unwrap_or(loaded.classes);
    let arity = r.max_outdegree.unwrap_or(loaded.max_outdegree.max(1));
    let config = model_config(&r, alphabet, classes, arity);

    let mut rows = Vec::with_capacity(r.runs);
    for i in 0..r.runs {
        // seed is irrelevant here: the checkpoint overwrites every value
        let mut model: Model = config.build(0);
        let path = run_path(&checkpoint, i, r.runs);
        load_checkpoint(&mut model.store, &path)
            .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let eval = evaluate(&model, &loaded.samples).map_err(|e| CliError::runtime(e.to_string()))?;
        rows.push((format!("run{}", i + 1), eval));
    }
    print!("{}", report_text(&rows));
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<(), CliError> {
    let mut r = resolve_common(&args.common)?;
    // small auto-generated instance; hidden defaults keep this at seconds
    r.hidden = r.file.get("hidden", args.common.hidden)?.unwrap_or(6);
    let kind = match r.task {
        TaskKind::Supersource => SynthKind::ClassByRootArity,
        TaskKind::Relabel => SynthKind::DepthRelabel,
        TaskKind::Prune => SynthKind::KeywordPrune,
    };
    let corpus = synth_task(kind, 40, r.seed);
    let text = corpus.to_text();
    let mut samples = match r.task {
        TaskKind::Supersource => {
            parse_class_corpus_with(&text, usize::MAX, Labeling::Categorical)
                .expect("generated corpus parses")
                .samples
        }
        TaskKind::Relabel | TaskKind::Prune => parse_parallel_corpus_with(
            &text,
            usize::MAX,
            r.task == TaskKind::Prune,
            Labeling::Categorical,
        )
        .expect("generated corpus parses")
        .samples,
    };
    // small trees keep the loss magnitude low enough that central-difference
    // roundoff stays below the tolerance
    samples.retain(|s| s.tree.len() <= 8);
    samples.truncate(5);
    let config =
        model_config(&r, kind.alphabet(), kind.classes(), treelstm::synth::SYNTH_MAX_OUTDEGREE);
    let mut worst: f64 = 0.0;
    let mut worst_param = String::new();
    let mut seed = 0u64;
    for sample in &samples {
        let model = config.build(seed);
        seed += 1;
        let mut store = model.store.clone();
        let report = finite_difference_check(
            &mut store,
            |s| {
                let probe = Model { store: s.clone(), ..model.clone() };
                let (mut g, loss) = probe
                    .loss_graph(sample, 1e-4)
                    .map_err(|_| treelstm_core::tensor::TensorError::NonScalarLoss)?;
                g.inject_backward_fault(args.inject_fault);
                Ok((g, loss))
            },
            1e-5,
            1e-4,
        )
        .map_err(|e| CliError::runtime(e.to_string()))?;
        if report.max_rel_err > worst {
            worst = report.max_rel_err;
            worst_param = report.worst_param.clone();
        }
    }
    let pass = worst < 1e-4;
    println!(
        "cell\t{}\ttask\t{}\tmax_rel_err\t{:.3e}\tworst\t{}\t{}",
        r.cell.name(),
        kind.name(),
        worst,
        if worst_param.is_empty() { "-" } else { &worst_param },
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::runtime("gradient check failed"))
    }
}

fn cmd_synth(args: SynthArgs) -> Result<(), CliError> {
    if args.size == 0 {
        return Err(CliError::config("--size must be positive"));
    }
    let kind: SynthKind = args.kind.parse().map_err(CliError::Config)?;
    let corpus = synth_task(kind, args.size, args.seed);
    fs::write(&args.out, corpus.to_text())
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", args.out.display())))?;
    println!("wrote {} records to {}", args.size, args.out.display());
    Ok(())
}
