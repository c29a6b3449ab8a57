use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pathmoe::harness::{
    bench, evaluate, explain, render_table, train, BenchPlan, Checkpoint, Dataset, Selection, Split, TrainConfig,
};
use pathmoe::moe::{ModelKind, Variant};
use pathmoe::synthbench::{generate, save_dataset, SynthKind, SynthSpec};
use pathmoe::{Error, Result};

/// Interaction-aware multimodal mixture-of-experts on synthetic pathology data.
#[derive(Parser)]
#[command(name = "pathmoe", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (JSON lines plus a manifest sidecar).
    GenData(GenData),
    /// Train one model on one fold and save its best-validation checkpoint.
    Train(TrainArgs),
    /// Report metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Dump per-sample gate weights and their mean.
    Explain(ExplainArgs),
    /// Compare several configs over a shared fold plan.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenData {
    /// unique-img, unique-text, unique-graph, redundant, synergy-xor or mixed
    #[arg(long)]
    kind: SynthKind,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Class count for kinds that allow a choice (2 or 4).
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long)]
    nuclei: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON training config used as the base; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// pathmoe-ef, pathmoe-sg, pathmoe-mlp, ef, sg or mlp
    #[arg(long)]
    model: Option<ModelKind>,
    /// Modality letters, e.g. WTG, WT, WG, W
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    lambda_int: Option<f64>,
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    knn: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    split_seed: Option<u64>,
    #[arg(long)]
    fold: Option<usize>,
    /// Checkpoint path; the epoch log goes to `<out>.log.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Fold of the checkpoint's plan; defaults to the fold it was trained on.
    #[arg(long)]
    fold: Option<usize>,
    /// train, val or test
    #[arg(long, default_value = "test")]
    split: String,
    /// Score every sample instead of one split.
    #[arg(long, conflicts_with_all = ["fold", "split"])]
    all: bool,
    /// Also write the report as one JSON line here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExplainArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    fold: Option<usize>,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, conflicts_with_all = ["fold", "split"])]
    all: bool,
    /// Tab-separated dump; a JSON-lines copy goes to `<out>.jsonl`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    data: PathBuf,
    /// JSON plan: `{"seed": .., "folds": .., "configs": [..]}`
    #[arg(long)]
    plan: PathBuf,
    /// One JSON line per config; the text table goes to stdout.
    #[arg(long)]
    out: PathBuf,
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
    }
}

fn selection(ck: &Checkpoint, all: bool, fold: Option<usize>, split: &str) -> Result<Selection> {
    if all {
        return Ok(Selection::All);
    }
    Ok(Selection::Fold(fold.unwrap_or(ck.manifest.fold), parse_split(split)?))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    s.into()
}

fn write_jsonl<T: serde::Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut out, &r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn gen_data(a: GenData) -> Result<()> {
    let mut spec = SynthSpec::new(a.kind, a.n, a.noise, a.seed);
    if let Some(c) = a.classes {
        spec.classes = c;
    }
    if let Some(p) = a.patches {
        spec.patches = p;
    }
    if let Some(n) = a.nuclei {
        spec.nuclei = n;
    }
    let samples = generate(&spec)?;
    save_dataset(&a.out, &spec, &samples)?;
    println!("{} samples of {} ({} classes) written to {}", samples.len(), spec.kind, spec.classes, a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)?,
        None => TrainConfig::default(),
    };
    macro_rules! set {
        ($($field:expr => $v:expr),* $(,)?) => { $(if let Some(v) = $v { $field = v; })* };
    }
    set! {
        cfg.model => a.model,
        cfg.variant => a.variant,
        cfg.lambda_int => a.lambda_int,
        cfg.arch.tokens => a.tokens,
        cfg.arch.width => a.width,
        cfg.arch.knn => a.knn,
        cfg.epochs => a.epochs,
        cfg.batch_size => a.batch_size,
        cfg.adam.lr => a.lr,
        cfg.seed => a.seed,
        cfg.split_seed => a.split_seed,
        cfg.fold => a.fold,
    }
    let data = Dataset::load(&a.data)?;
    let (ck, log) = train(&data, &cfg)?;
    ck.save(&a.out)?;
    write_jsonl(&with_suffix(&a.out, ".log.jsonl"), &log.epochs)?;
    println!("{:>6}{:>12}{:>12}{:>12}", "epoch", "train-loss", "val-loss", "val-F1");
    for e in &log.epochs {
        let mark = if e.epoch == log.best_epoch { " *" } else { "" };
        println!("{:>6}{:>12.5}{:>12.5}{:>12.4}{mark}", e.epoch, e.train_loss, e.val_loss, e.val_macro_f1);
    }
    println!("{} fold {}: best epoch {}, checkpoint {}", cfg.label(), cfg.fold, log.best_epoch, a.out.display());
    Ok(())
}

fn eval_cmd(a: EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = Dataset::load(&a.data)?;
    let report = evaluate(&ck, &data, selection(&ck, a.all, a.fold, &a.split)?)?;
    print!("{}", report.render());
    if let Some(out) = &a.out {
        write_jsonl(out, [&report])?;
    }
    Ok(())
}

fn explain_cmd(a: ExplainArgs) -> Result<()> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    let data = Dataset::load(&a.data)?;
    let rows = explain(&ck, &data, selection(&ck, a.all, a.fold, &a.split)?)?;
    let mut dump = String::new();
    for r in &rows {
        dump.push_str(&r.to_line());
        dump.push('\n');
    }
    std::fs::write(&a.out, dump)?;
    let json: Vec<serde_json::Value> = rows
        .iter()
        .map(|r| {
            serde_json::json!({
                "sample_id": r.sample_id,
                "true_label": r.true_label,
                "pred_label": r.pred_label,
                "alpha": r.alpha,
                "roles": r.tags,
            })
        })
        .collect();
    write_jsonl(&with_suffix(&a.out, ".jsonl"), &json)?;
    let mean = rows.last().expect("explain always appends the mean row");
    println!("{}", mean.tags.iter().map(|t| format!("{t:>10}")).collect::<String>());
    println!("{}", mean.alpha.iter().map(|v| format!("{v:>10.4}")).collect::<String>());
    println!("{} samples, dump written to {}", rows.len() - 1, a.out.display());
    Ok(())
}

fn bench_cmd(a: BenchArgs) -> Result<()> {
    let plan: BenchPlan = serde_json::from_str(&std::fs::read_to_string(&a.plan)?)?;
    let data = Dataset::load(&a.data)?;
    let rows = bench(&data, &plan)?;
    write_jsonl(&a.out, &rows)?;
    print!("{}", render_table(&rows));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Explain(a) => explain_cmd(a),
        Command::Bench(a) => bench_cmd(a),
    }
}

fn fail(kind: &str, message: impl std::fmt::Display) -> ExitCode {
    let line = serde_json::json!({ "error": kind, "message": message.to_string() });
    eprintln!("{line}");
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return fail("usage", msg.lines().next().unwrap_or("").trim_start_matches("error: "));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), e),
    }
}
