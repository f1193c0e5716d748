//! Command-line interface over the pipeline.
//!
//! Exit codes: 0 on success, 2 for configuration and usage problems, 3 for
//! signal acquisition problems, 4 for trainer failures, 1 for everything
//! else.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{load_config, PipelineConfig, RunMode};
use crate::corpus::{load_dataset, save_dataset, CorpusFormat, Dataset, TransformKind};
use crate::error::{Error, Result};
use crate::pipeline::{
    read_manifest, run_iteration, run_loop, IterationManifest, RunContext,
};
use crate::report;
use crate::signals;

#[derive(Parser)]
#[command(
    name = "middo",
    version,
    about = "Closed-loop optimization of instruction-tuning corpora",
    term_width = 100
)]
struct Cli {
    /// Log progress details to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: CommandKind,
}

#[derive(Subcommand)]
enum CommandKind {
    /// Canonicalize a dataset file into the run layout's JSONL form.
    Ingest(IngestArgs),
    /// Compute and snapshot the three signals for the next iteration.
    Signals(StageArgs),
    /// Select outliers from previously snapshotted signals.
    Select(StageArgs),
    /// Refine a selection and write the next dataset and manifest.
    Refine(StageArgs),
    /// Run one full acquire, select, refine, update round.
    Iterate(IterateArgs),
    /// Run the configured number of rounds, training between them if set up.
    Loop(LoopArgs),
    /// Summarize a finished run as tables, histograms, and a projection.
    Report(ReportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Online,
    Offline,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    /// Pick by extension: `.json` parses as an array, anything else as JSONL.
    Auto,
    Jsonl,
    Json,
}

#[derive(Args)]
struct IngestArgs {
    /// Dataset to read: a JSON array or JSONL of instruction records.
    #[arg(long)]
    input: PathBuf,
    /// Where to write the canonical JSONL dataset.
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum, default_value = "auto")]
    format: FormatArg,
    /// Drop ids and lineage from the written rows.
    #[arg(long)]
    strip_metadata: bool,
}

/// Flags shared by every command that executes pipeline stages.
#[derive(Args)]
struct RunArgs {
    /// TOML config file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory that holds the run's `iter*/` artifacts.
    #[arg(long)]
    run_dir: PathBuf,
    /// Use the deterministic in-process backend instead of HTTP endpoints.
    #[arg(long)]
    mock: bool,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    iterations: Option<u32>,
    /// Neighbors per sample for the diversity signal.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    m_complexity: Option<f64>,
    #[arg(long)]
    m_diversity: Option<f64>,
    #[arg(long)]
    m_quality: Option<f64>,
    #[arg(long)]
    seed_tag: Option<String>,
    /// Halt the loop when an iteration selects less than this fraction.
    #[arg(long)]
    stop_floor: Option<f64>,
    /// Hand the trainer a metadata-free dataset copy.
    #[arg(long)]
    strip_metadata: bool,
}

#[derive(Args)]
struct StageArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Iteration to produce; consumes iteration `N - 1`'s dataset.
    #[arg(long)]
    iteration: u32,
}

#[derive(Args)]
struct IterateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Dataset that seeds iteration zero when the run directory is empty.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct LoopArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Dataset that seeds iteration zero when the run directory is empty.
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run_dir: PathBuf,
    /// Output directory; defaults to `{run_dir}/report`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 40)]
    bins: usize,
}

/// Parses the process arguments and runs the selected command, returning the
/// process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    let level = if cli.verbose { "info" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    match execute(cli.command) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

fn execute(command: CommandKind) -> Result<()> {
    match command {
        CommandKind::Ingest(args) => ingest(&args),
        CommandKind::Signals(args) => {
            let ctx = build_context(&args.run)?;
            crate::pipeline::signals_stage(&ctx, args.iteration)?;
            println!(
                "iter{}: signals snapshotted under {}",
                args.iteration,
                ctx.layout.signals_dir(args.iteration).display()
            );
            Ok(())
        }
        CommandKind::Select(args) => {
            let ctx = build_context(&args.run)?;
            let outcome = crate::pipeline::select_stage(&ctx, args.iteration)?;
            let c = &outcome.report.counts;
            println!(
                "iter{}: selected {} complex, {} sparse, {} low-quality ({} total, {:.2}% of corpus)",
                args.iteration,
                c.complexity,
                c.sparse,
                c.low_quality,
                c.union,
                outcome.report.union_fraction * 100.0
            );
            Ok(())
        }
        CommandKind::Refine(args) => {
            let ctx = build_context(&args.run)?;
            let manifest = crate::pipeline::refine_stage(&ctx, args.iteration)?;
            print_iteration_summary(&manifest);
            Ok(())
        }
        CommandKind::Iterate(args) => {
            let ctx = build_context(&args.run)?;
            let start = seed_or_latest(&ctx, args.input.as_deref())?;
            let dataset = load_dataset(&ctx.layout.dataset_path(start), CorpusFormat::Jsonl)?;
            let (_, manifest) = run_iteration(&ctx, &dataset)?;
            print_iteration_summary(&manifest);
            Ok(())
        }
        CommandKind::Loop(args) => {
            let ctx = build_context(&args.run)?;
            let initial = match args.input.as_deref() {
                Some(path) => load_dataset(path, detect_format(path, FormatArg::Auto))?,
                None => {
                    let start = find_latest_dataset(&ctx)?;
                    load_dataset(&ctx.layout.dataset_path(start), CorpusFormat::Jsonl)?
                }
            };
            let manifests = run_loop(&ctx, &initial)?;
            for manifest in &manifests {
                print_iteration_summary(manifest);
            }
            let last = manifests.last().expect("loop always runs at least one round");
            println!(
                "loop complete: {} rounds, {} -> {} samples",
                manifests.len(),
                initial.len(),
                last.sizes.after
            );
            Ok(())
        }
        CommandKind::Report(args) => build_report(&args),
    }
}

fn ingest(args: &IngestArgs) -> Result<()> {
    let dataset = load_dataset(&args.input, detect_format(&args.input, args.format))?;
    let digest = save_dataset(&args.output, &dataset, args.strip_metadata)?;
    println!(
        "ingested {} samples into {} (sha256 {})",
        dataset.len(),
        args.output.display(),
        digest
    );
    Ok(())
}

fn detect_format(path: &Path, arg: FormatArg) -> CorpusFormat {
    match arg {
        FormatArg::Jsonl => CorpusFormat::Jsonl,
        FormatArg::Json => CorpusFormat::JsonArray,
        FormatArg::Auto => match path.extension().and_then(|e| e.to_str()) {
            Some("json") => CorpusFormat::JsonArray,
            _ => CorpusFormat::Jsonl,
        },
    }
}

fn build_context(args: &RunArgs) -> Result<RunContext> {
    let mut config = match &args.config {
        Some(path) => load_config(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(mode) = args.mode {
        config.run.mode = match mode {
            ModeArg::Online => RunMode::Online,
            ModeArg::Offline => RunMode::Offline,
        };
    }
    if let Some(iterations) = args.iterations {
        config.run.iterations = iterations;
    }
    if let Some(k) = args.k {
        config.selection.k = k;
    }
    if let Some(m) = args.m_complexity {
        config.selection.m_complexity = m;
    }
    if let Some(m) = args.m_diversity {
        config.selection.m_diversity = m;
    }
    if let Some(m) = args.m_quality {
        config.selection.m_quality = m;
    }
    if let Some(seed_tag) = &args.seed_tag {
        config.run.seed_tag = seed_tag.clone();
    }
    if let Some(floor) = args.stop_floor {
        config.run.stop_floor = Some(floor);
    }
    if args.strip_metadata {
        config.run.strip_metadata = true;
    }
    RunContext::new(config, &args.run_dir, args.mock)
}

/// Seeds iteration zero from `input` when given, otherwise returns the
/// highest iteration that already has a dataset on disk.
fn seed_or_latest(ctx: &RunContext, input: Option<&Path>) -> Result<u32> {
    if let Some(path) = input {
        let dataset = load_dataset(path, detect_format(path, FormatArg::Auto))?;
        save_dataset(&ctx.layout.dataset_path(dataset.iteration), &dataset, false)?;
        return Ok(dataset.iteration);
    }
    find_latest_dataset(ctx)
}

fn find_latest_dataset(ctx: &RunContext) -> Result<u32> {
    let root = &ctx.layout.root;
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut latest: Option<u32> = None;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let name = entry.file_name();
        let Some(rest) = name.to_str().and_then(|n| n.strip_prefix("iter")) else {
            continue;
        };
        let Ok(iteration) = rest.parse::<u32>() else {
            continue;
        };
        if ctx.layout.dataset_path(iteration).is_file() {
            latest = Some(latest.map_or(iteration, |cur| cur.max(iteration)));
        }
    }
    latest.ok_or_else(|| {
        Error::Config(format!(
            "no dataset found under {}; pass --input or run ingest first",
            root.display()
        ))
    })
}

fn print_iteration_summary(manifest: &IterationManifest) {
    let c = &manifest.counts;
    println!(
        "iter{}: {} -> {} samples ({} replaced, {} added, {} failed; selected {} = {} complex + {} sparse + {} low-quality, overlaps removed)",
        manifest.iteration,
        manifest.sizes.before,
        manifest.sizes.after,
        c.replacements_ok,
        c.additions_ok,
        c.failures,
        c.union,
        c.complexity,
        c.diversity,
        c.quality
    );
}

fn build_report(args: &ReportArgs) -> Result<()> {
    let layout = crate::pipeline::RunLayout::new(&args.run_dir);
    let mut manifests: Vec<IterationManifest> = Vec::new();
    let mut t = 1u32;
    while layout.manifest_path(t).is_file() {
        manifests.push(read_manifest(&layout.manifest_path(t))?);
        t += 1;
    }
    if manifests.is_empty() {
        return Err(Error::Report(format!(
            "no completed iterations under {}",
            args.run_dir.display()
        )));
    }
    let last = manifests.last().expect("nonempty").iteration;

    let dataset_for = |iteration: u32| -> Result<Dataset> {
        load_dataset(&layout.dataset_path(iteration - 1), CorpusFormat::Jsonl)
    };

    let first_dataset = dataset_for(1)?;
    let before: Vec<f64> = signals::ingest_loss_file(&layout.loss_path(1), &first_dataset)?
        .values()
        .map(|l| l.loss_pre)
        .collect();
    let last_dataset = dataset_for(last)?;
    let after: Vec<f64> = signals::ingest_loss_file(&layout.loss_path(last), &last_dataset)?
        .values()
        .map(|l| l.loss_post)
        .collect();
    let loss = report::loss_report(&before, &after, args.bins)?;

    let mut per_iteration = BTreeMap::new();
    for manifest in &manifests {
        let iteration = manifest.iteration;
        let dataset = dataset_for(iteration)?;
        let quality = signals::ingest_quality_file(
            &layout.signals_dir(iteration).join("quality.jsonl"),
            &dataset,
        )?;
        let means: Vec<f64> = quality.values().map(|q| q.mean).collect();
        per_iteration.insert(iteration, means);
    }
    let densities = report::score_density(&per_iteration, args.bins)?;

    let table = report::selection_table(&manifests)?;

    let embeddings = crate::signals::diversity::read_embeddings_jsonl(
        &layout.signals_dir(last).join("embeddings.jsonl"),
        &last_dataset,
    )?;
    let mut flags = BTreeMap::new();
    for sample in &last_dataset.samples {
        let flag = match &sample.lineage {
            None => continue,
            Some(lineage) if lineage.transform_kind == TransformKind::Extend => "augmented",
            Some(lineage) => lineage.transform_kind.as_str(),
        };
        flags.insert(sample.id.clone(), flag.to_string());
    }
    let points = report::projection_export(&embeddings, &flags)?;

    let out_dir = args.out.clone().unwrap_or_else(|| args.run_dir.join("report"));
    report::write_histogram_csv(&out_dir.join("loss_before.csv"), &loss.before)?;
    report::write_histogram_csv(&out_dir.join("loss_after.csv"), &loss.after)?;
    report::write_density_csv(&out_dir.join("quality_density.csv"), &densities)?;
    report::write_selection_table_csv(&out_dir.join("selection_table.csv"), &table)?;
    report::write_projection_csv(&out_dir.join("projection.csv"), &points)?;
    let combined = report::RunReport { loss, densities, table };
    report::write_run_report_json(&out_dir.join("report.json"), &combined)?;

    println!(
        "report over {} iterations written to {} (max loss reduction {:.2}%)",
        manifests.len(),
        out_dir.display(),
        combined.loss.max_reduction_pct
    );
    Ok(())
}
