//! Iteration orchestration: acquire signals, select, refine, update, and
//! chain rounds into a loop.
//!
//! Every round leaves a self-contained audit trail under the run directory:
//!
//! ```text
//! runs/{run_id}/
//!   trainer.log
//!   iter0/dataset.jsonl
//!   iter1/
//!     signals/{loss,embeddings,diversity,quality}.jsonl
//!     selection.json
//!     refinements.jsonl
//!     dataset.jsonl
//!     manifest.json
//!   iter2/...
//! ```
//!
//! Signals are snapshotted under the iteration that consumes them even when
//! they came from files elsewhere, so a run directory can be re-selected and
//! re-refined without the original sources. The manifest ties each artifact
//! to its content hash; under the mock backend the recorded phase timings are
//! zeroed, which makes whole run directories byte-reproducible.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{
    resolve_iter_path, EmbeddingSource, LossSource, PipelineConfig, ProfileRole, QualitySource,
    RunMode,
};
use crate::corpus::{apply_updates, load_dataset, save_dataset, CorpusFormat, Dataset};
use crate::error::{Error, Result};
use crate::fsio;
use crate::gateway::{Gateway, HttpBackend, MockBackend};
use crate::hashing::sha256_file;
use crate::refinery::{refine_batch, write_refinement_log, RefineOptions, RefinementStatus};
use crate::selector::{select_all, write_selection_report, MValues, SelectionOutcome, SignalStats};
use crate::signals::{self, compute_loss, diversity, LossSignal, QualitySignal, SignalBundle};

const SNAPSHOT_NAMES: [&str; 4] =
    ["loss.jsonl", "embeddings.jsonl", "diversity.jsonl", "quality.jsonl"];

/// Paths inside one run directory.
#[derive(Debug, Clone)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    #[must_use]
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    #[must_use]
    pub fn iter_dir(&self, iteration: u32) -> PathBuf {
        self.root.join(format!("iter{iteration}"))
    }

    #[must_use]
    pub fn dataset_path(&self, iteration: u32) -> PathBuf {
        self.iter_dir(iteration).join("dataset.jsonl")
    }

    #[must_use]
    pub fn signals_dir(&self, iteration: u32) -> PathBuf {
        self.iter_dir(iteration).join("signals")
    }

    #[must_use]
    pub fn loss_path(&self, iteration: u32) -> PathBuf {
        self.signals_dir(iteration).join("loss.jsonl")
    }

    #[must_use]
    pub fn selection_path(&self, iteration: u32) -> PathBuf {
        self.iter_dir(iteration).join("selection.json")
    }

    #[must_use]
    pub fn refinements_path(&self, iteration: u32) -> PathBuf {
        self.iter_dir(iteration).join("refinements.jsonl")
    }

    #[must_use]
    pub fn manifest_path(&self, iteration: u32) -> PathBuf {
        self.iter_dir(iteration).join("manifest.json")
    }

    /// Metadata-free dataset copy handed to the trainer when stripping is on.
    #[must_use]
    pub fn trainer_input_path(&self, iteration: u32) -> PathBuf {
        self.iter_dir(iteration).join("trainer_input.jsonl")
    }

    #[must_use]
    pub fn trainer_log_path(&self) -> PathBuf {
        self.root.join("trainer.log")
    }
}

/// Selection and refinement tallies for one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCounts {
    pub complexity: usize,
    pub diversity: usize,
    pub quality: usize,
    pub union: usize,
    pub replacements_ok: usize,
    pub additions_ok: usize,
    /// Selected transforms that produced no sample: parse failures,
    /// generation failures, and skips.
    pub failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSizes {
    pub before: usize,
    pub after: usize,
}

/// SHA-256 hashes tying the manifest to the exact bytes it describes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContentHashes {
    pub input_dataset: String,
    pub output_dataset: String,
    /// Keyed by snapshot file name within `signals/`.
    pub signals: BTreeMap<String, String>,
}

/// Wall-clock milliseconds per phase; all zero under the mock backend so
/// reruns produce identical bytes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub acquire_ms: u64,
    pub select_ms: u64,
    pub refine_ms: u64,
    pub update_ms: u64,
    pub total_ms: u64,
}

/// Everything recorded about one completed iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationManifest {
    pub iteration: u32,
    pub config_digest: String,
    /// Distribution summaries keyed `loss_pre`, `loss_post`, `diversity`,
    /// `quality`.
    pub stats: BTreeMap<String, SignalStats>,
    pub counts: ManifestCounts,
    pub sizes: DatasetSizes,
    pub hashes: ContentHashes,
    pub timing: PhaseTimings,
}

impl IterationManifest {
    /// Fraction of the input corpus the three selectors flagged.
    #[must_use]
    pub fn union_fraction(&self) -> f64 {
        self.counts.union as f64 / self.sizes.before as f64
    }
}

pub fn write_manifest(path: &Path, manifest: &IterationManifest) -> Result<()> {
    let mut body = serde_json::to_string_pretty(manifest)
        .map_err(|err| Error::Config(format!("manifest does not serialize: {err}")))?;
    body.push('\n');
    fsio::write_atomic(path, body.as_bytes())
}

pub fn read_manifest(path: &Path) -> Result<IterationManifest> {
    let body = fsio::read_to_string(path)?;
    serde_json::from_str(&body)
        .map_err(|err| Error::Config(format!("{}: malformed manifest: {err}", path.display())))
}

/// A validated config bound to a run directory and a backend.
pub struct RunContext {
    pub config: PipelineConfig,
    pub layout: RunLayout,
    pub gateway: Gateway,
    mock: bool,
}

impl RunContext {
    /// Validates `config` and wires up the backend. With `mock` set, missing
    /// endpoint profiles are defaulted and all traffic stays in-process; the
    /// reply cache is only attached to the HTTP backend.
    pub fn new(config: PipelineConfig, run_dir: impl Into<PathBuf>, mock: bool) -> Result<Self> {
        if mock {
            return RunContext::with_gateway(config, run_dir, Gateway::mock(MockBackend::new()), true);
        }
        let cache_dir = config.run.cache_dir.clone();
        let backend = HttpBackend::new().map_err(Error::Gateway)?;
        RunContext::with_gateway(config, run_dir, Gateway::new(Arc::new(backend), cache_dir), false)
    }

    /// Like [`RunContext::new`] but with a caller-supplied gateway, which is
    /// how tests inject instrumented mocks.
    pub fn with_gateway(
        mut config: PipelineConfig,
        run_dir: impl Into<PathBuf>,
        gateway: Gateway,
        mock: bool,
    ) -> Result<Self> {
        if mock {
            config.apply_mock_defaults();
        }
        config.validate()?;
        Ok(RunContext { config, layout: RunLayout::new(run_dir), gateway, mock })
    }

    #[must_use]
    pub fn is_mock(&self) -> bool {
        self.mock
    }

    fn ms(&self) -> MValues {
        MValues {
            complexity: self.config.selection.m_complexity,
            diversity: self.config.selection.m_diversity,
            quality: self.config.selection.m_quality,
        }
    }
}

struct PhaseTimer {
    zeroed: bool,
    start: Instant,
    last: Instant,
}

impl PhaseTimer {
    fn new(zeroed: bool) -> Self {
        let now = Instant::now();
        PhaseTimer { zeroed, start: now, last: now }
    }

    fn lap(&mut self) -> u64 {
        let now = Instant::now();
        let ms = now.duration_since(self.last).as_millis() as u64;
        self.last = now;
        if self.zeroed { 0 } else { ms }
    }

    fn total(&self) -> u64 {
        if self.zeroed { 0 } else { self.start.elapsed().as_millis() as u64 }
    }
}

/// Checks that every file-backed signal source for `iteration` exists, so a
/// misconfigured run fails before spending any endpoint traffic.
fn preflight_signal_files(ctx: &RunContext, iteration: u32) -> Result<()> {
    let mut required: Vec<(&str, PathBuf)> = Vec::new();
    match ctx.config.signals.loss {
        LossSource::File => {
            let template = ctx.config.signals.loss_path.as_deref().expect("validated");
            required.push(("loss", resolve_iter_path(template, iteration)));
        }
        LossSource::Trainer => required.push(("loss", ctx.layout.loss_path(iteration))),
        LossSource::Logprobs => {}
    }
    if ctx.config.signals.embeddings == EmbeddingSource::File {
        let template = ctx.config.signals.embeddings_path.as_deref().expect("validated");
        required.push(("embeddings", resolve_iter_path(template, iteration)));
    }
    if ctx.config.signals.quality == QualitySource::File {
        let template = ctx.config.signals.quality_path.as_deref().expect("validated");
        required.push(("quality", resolve_iter_path(template, iteration)));
    }
    for (what, path) in required {
        if !path.is_file() {
            return Err(Error::Signal(format!(
                "{what} signal file {} does not exist",
                path.display()
            )));
        }
    }
    Ok(())
}

fn acquire_logprob_losses(ctx: &RunContext, dataset: &Dataset) -> Result<BTreeMap<String, LossSignal>> {
    let pre = ctx.config.profiles.require(ProfileRole::LogprobsPre)?;
    let post = ctx.config.profiles.require(ProfileRole::LogprobsPost)?;
    let rows: Vec<LossSignal> = dataset
        .samples
        .par_iter()
        .map(|sample| {
            let prompt = format!("{}\n", sample.prompt_text());
            let mut losses = [0.0f64; 2];
            for (slot, profile) in [pre, post].into_iter().enumerate() {
                let pairs = ctx.gateway.token_logprobs(profile, &prompt, &sample.response)?;
                let logprobs: Vec<f64> = pairs.iter().map(|(_, lp)| *lp).collect();
                losses[slot] = compute_loss(&logprobs)
                    .map_err(|e| Error::Signal(format!("sample {:?}: {e}", sample.id)))?;
            }
            Ok(LossSignal { id: sample.id.clone(), loss_pre: losses[0], loss_post: losses[1] })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows.into_iter().map(|row| (row.id.clone(), row)).collect())
}

fn acquire_endpoint_embeddings(
    ctx: &RunContext,
    dataset: &Dataset,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let profile = ctx.config.profiles.require(ProfileRole::Embeddings)?;
    let texts: Vec<String> = dataset.samples.iter().map(|s| s.prompt_text()).collect();
    let batch = 64;
    let mut out = BTreeMap::new();
    for (batch_idx, chunk) in texts.chunks(batch).enumerate() {
        let vectors = ctx.gateway.embed_batch(profile, chunk)?;
        for (offset, vector) in vectors.into_iter().enumerate() {
            let sample = &dataset.samples[batch_idx * batch + offset];
            out.insert(sample.id.clone(), vector);
        }
    }
    Ok(out)
}

fn acquire_judged_quality(
    ctx: &RunContext,
    dataset: &Dataset,
    iteration: u32,
) -> Result<BTreeMap<String, QualitySignal>> {
    let profile = ctx.config.profiles.require(ProfileRole::Judge)?;
    let seed_tag = &ctx.config.run.seed_tag;
    let scored: Vec<Option<QualitySignal>> = dataset
        .samples
        .par_iter()
        .map(|sample| {
            let seed_base = format!("{seed_tag}/iter{iteration}/{}", sample.id);
            signals::judge::judge_sample(&ctx.gateway, profile, sample, &seed_base)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(scored.into_iter().flatten().map(|q| (q.id.clone(), q)).collect())
}

fn hash_snapshot_files(ctx: &RunContext, iteration: u32) -> Result<BTreeMap<String, String>> {
    let dir = ctx.layout.signals_dir(iteration);
    let mut hashes = BTreeMap::new();
    for name in SNAPSHOT_NAMES {
        let path = dir.join(name);
        if path.is_file() {
            let digest = sha256_file(&path).map_err(|e| Error::io(&path, e))?;
            hashes.insert(name.to_string(), digest);
        }
    }
    Ok(hashes)
}

/// Gathers all three signals for the dataset that iteration `iteration` will
/// transform, and snapshots them under that iteration's `signals/` directory.
///
/// File-backed sources are checked for existence before any endpoint call.
/// Judged quality may cover only part of the corpus, but an empty quality
/// distribution is an error because no threshold can be placed over it.
pub fn acquire_signals(ctx: &RunContext, dataset: &Dataset, iteration: u32) -> Result<SignalBundle> {
    preflight_signal_files(ctx, iteration)?;

    let losses = match ctx.config.signals.loss {
        LossSource::File => {
            let template = ctx.config.signals.loss_path.as_deref().expect("validated");
            signals::ingest_loss_file(&resolve_iter_path(template, iteration), dataset)?
        }
        LossSource::Trainer => signals::ingest_loss_file(&ctx.layout.loss_path(iteration), dataset)?,
        LossSource::Logprobs => acquire_logprob_losses(ctx, dataset)?,
    };

    let embeddings = match ctx.config.signals.embeddings {
        EmbeddingSource::File => {
            let template = ctx.config.signals.embeddings_path.as_deref().expect("validated");
            diversity::read_embeddings_jsonl(&resolve_iter_path(template, iteration), dataset)?
        }
        EmbeddingSource::Endpoint => acquire_endpoint_embeddings(ctx, dataset)?,
    };
    let diversity_rows = diversity::diversity_scores(&embeddings, ctx.config.selection.k)?;

    let quality = match ctx.config.signals.quality {
        QualitySource::File => {
            let template = ctx.config.signals.quality_path.as_deref().expect("validated");
            signals::ingest_quality_file(&resolve_iter_path(template, iteration), dataset)?
        }
        QualitySource::Judge => acquire_judged_quality(ctx, dataset, iteration)?,
    };
    if quality.is_empty() {
        return Err(Error::Signal(
            "no sample received a parseable quality score; cannot place a threshold".into(),
        ));
    }

    let dir = ctx.layout.signals_dir(iteration);
    signals::write_loss_file(&dir.join("loss.jsonl"), &losses)?;
    diversity::write_embeddings_jsonl(&dir.join("embeddings.jsonl"), &embeddings)?;
    signals::write_diversity_file(&dir.join("diversity.jsonl"), &diversity_rows)?;
    signals::write_quality_file(&dir.join("quality.jsonl"), &quality)?;

    Ok(SignalBundle { losses, diversity: diversity_rows, quality })
}

/// Reads the signal snapshots a previous `acquire` left for `iteration`.
pub fn read_signal_snapshots(
    ctx: &RunContext,
    dataset: &Dataset,
    iteration: u32,
) -> Result<SignalBundle> {
    let dir = ctx.layout.signals_dir(iteration);
    Ok(SignalBundle {
        losses: signals::ingest_loss_file(&dir.join("loss.jsonl"), dataset)?,
        diversity: signals::read_diversity_file(&dir.join("diversity.jsonl"), dataset)?,
        quality: signals::ingest_quality_file(&dir.join("quality.jsonl"), dataset)?,
    })
}

/// Loads the dataset that iteration `iteration` consumes, which is the output
/// of iteration `iteration - 1`.
pub fn load_input_dataset(ctx: &RunContext, iteration: u32) -> Result<Dataset> {
    if iteration == 0 {
        return Err(Error::Config("iteration numbers start at 1".into()));
    }
    let path = ctx.layout.dataset_path(iteration - 1);
    let dataset = load_dataset(&path, CorpusFormat::Jsonl)?;
    if dataset.iteration != iteration - 1 {
        return Err(Error::Config(format!(
            "{} is labeled iteration {}, expected {}",
            path.display(),
            dataset.iteration,
            iteration - 1
        )));
    }
    Ok(dataset)
}

fn complete_iteration(
    ctx: &RunContext,
    dataset: &Dataset,
    bundle: &SignalBundle,
    timer: &mut PhaseTimer,
    acquire_ms: u64,
) -> Result<(Dataset, IterationManifest)> {
    let iteration = dataset.iteration + 1;

    let outcome: SelectionOutcome = select_all(
        iteration,
        bundle,
        ctx.ms(),
        ctx.config.selection.overlap_policy,
        dataset.len(),
    )?;
    write_selection_report(&ctx.layout.selection_path(iteration), &outcome.report)?;
    let select_ms = timer.lap();

    let options = RefineOptions {
        retries: ctx.config.refinement.retries,
        seed_base: format!("{}/iter{iteration}", ctx.config.run.seed_tag),
        regenerate_responses: ctx.config.refinement.regenerate_responses,
    };
    let synthesis = ctx.config.profiles.require(ProfileRole::Synthesis)?;
    let refined = refine_batch(&ctx.gateway, synthesis, &outcome.sets, dataset, &bundle.diversity, &options)?;
    write_refinement_log(&ctx.layout.refinements_path(iteration), &refined.results)?;
    let refine_ms = timer.lap();

    let next = apply_updates(dataset, &refined.replacements, &refined.additions)?;
    let output_digest = save_dataset(&ctx.layout.dataset_path(iteration), &next, false)?;
    let update_ms = timer.lap();

    let ok = refined.results.iter().filter(|r| r.status == RefinementStatus::Ok).count();
    let manifest = IterationManifest {
        iteration,
        config_digest: ctx.config.digest(),
        stats: outcome.report.stats.clone(),
        counts: ManifestCounts {
            complexity: outcome.report.counts.complexity,
            diversity: outcome.report.counts.sparse,
            quality: outcome.report.counts.low_quality,
            union: outcome.report.counts.union,
            replacements_ok: refined.replacements.len(),
            additions_ok: refined.additions.len(),
            failures: refined.results.len() - ok,
        },
        sizes: DatasetSizes { before: dataset.len(), after: next.len() },
        hashes: ContentHashes {
            input_dataset: dataset.source_digest.clone(),
            output_dataset: output_digest,
            signals: hash_snapshot_files(ctx, iteration)?,
        },
        timing: PhaseTimings {
            acquire_ms,
            select_ms,
            refine_ms,
            update_ms,
            total_ms: timer.total(),
        },
    };
    write_manifest(&ctx.layout.manifest_path(iteration), &manifest)?;
    Ok((next, manifest))
}

/// Runs one full acquire, select, refine, update round against `dataset` and
/// returns the next dataset along with the manifest describing the round.
/// Every artifact, the manifest included, is on disk before this returns.
pub fn run_iteration(ctx: &RunContext, dataset: &Dataset) -> Result<(Dataset, IterationManifest)> {
    let iteration = dataset.iteration + 1;
    let mut timer = PhaseTimer::new(ctx.mock);
    let bundle = acquire_signals(ctx, dataset, iteration)?;
    let acquire_ms = timer.lap();
    complete_iteration(ctx, dataset, &bundle, &mut timer, acquire_ms)
}

/// Acquire-only stage: computes and snapshots signals for the next iteration
/// after `iteration - 1`'s dataset, without selecting or refining.
pub fn signals_stage(ctx: &RunContext, iteration: u32) -> Result<()> {
    let dataset = load_input_dataset(ctx, iteration)?;
    acquire_signals(ctx, &dataset, iteration)?;
    Ok(())
}

/// Select-only stage over previously snapshotted signals.
pub fn select_stage(ctx: &RunContext, iteration: u32) -> Result<SelectionOutcome> {
    let dataset = load_input_dataset(ctx, iteration)?;
    let bundle = read_signal_snapshots(ctx, &dataset, iteration)?;
    let outcome = select_all(
        iteration,
        &bundle,
        ctx.ms(),
        ctx.config.selection.overlap_policy,
        dataset.len(),
    )?;
    write_selection_report(&ctx.layout.selection_path(iteration), &outcome.report)?;
    Ok(outcome)
}

/// Refine-and-update stage over previously snapshotted signals. Selection is
/// recomputed from the snapshots, which is deterministic, so the resulting
/// artifacts match what a composed [`run_iteration`] would have produced.
pub fn refine_stage(ctx: &RunContext, iteration: u32) -> Result<IterationManifest> {
    let dataset = load_input_dataset(ctx, iteration)?;
    let bundle = read_signal_snapshots(ctx, &dataset, iteration)?;
    let mut timer = PhaseTimer::new(ctx.mock);
    let (_, manifest) = complete_iteration(ctx, &dataset, &bundle, &mut timer, 0)?;
    Ok(manifest)
}

/// Substitutes the dataset and output paths into a trainer command template,
/// runs it under `sh -c`, and streams its output to the run log. The hook
/// succeeds only if the command exits zero and the signals file exists
/// afterwards; on a non-zero exit the error carries the tail of the log.
pub fn trainer_hook(
    template: &str,
    dataset_in: &Path,
    signals_out: &Path,
    log_path: &Path,
    label: &str,
) -> Result<()> {
    for placeholder in ["{dataset_in}", "{signals_out}"] {
        if !template.contains(placeholder) {
            return Err(Error::Config(format!(
                "trainer command is missing the {placeholder} placeholder"
            )));
        }
    }
    for dir in [signals_out.parent(), log_path.parent()].into_iter().flatten() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let command = template
        .replace("{dataset_in}", &dataset_in.display().to_string())
        .replace("{signals_out}", &signals_out.display().to_string());

    let mut log = OpenOptions::new()
        .create(true)
        .append(true)
        .open(log_path)
        .map_err(|e| Error::io(log_path, e))?;
    writeln!(log, "== {label}: {command}").map_err(|e| Error::io(log_path, e))?;
    let stdout = log.try_clone().map_err(|e| Error::io(log_path, e))?;
    let stderr = log.try_clone().map_err(|e| Error::io(log_path, e))?;

    let status = Command::new("sh")
        .arg("-c")
        .arg(&command)
        .stdin(Stdio::null())
        .stdout(Stdio::from(stdout))
        .stderr(Stdio::from(stderr))
        .status()
        .map_err(|e| Error::Trainer(format!("could not launch trainer: {e}")))?;

    if !status.success() {
        return Err(Error::Trainer(format!(
            "trainer exited with {status}; last output:\n{}",
            log_tail(log_path)
        )));
    }
    if !signals_out.is_file() {
        return Err(Error::Trainer(format!(
            "trainer exited cleanly but produced no signals file at {}",
            signals_out.display()
        )));
    }
    Ok(())
}

fn log_tail(path: &Path) -> String {
    match std::fs::read_to_string(path) {
        Ok(text) => {
            let start = text
                .char_indices()
                .rev()
                .nth(1999)
                .map(|(i, _)| i)
                .unwrap_or(0);
            text[start..].trim().to_string()
        }
        Err(_) => "(trainer log unavailable)".into(),
    }
}

/// Chains `run.iterations` rounds starting from `initial`, which is first
/// persisted as the run's iteration-zero dataset.
///
/// In online mode with a trainer command configured, the trainer runs before
/// each round against the previous round's dataset, writing losses to that
/// round's `signals/loss.jsonl`; a trainer failure aborts the loop and leaves
/// every completed round's artifacts in place. When `run.stop_floor` is set,
/// the loop halts early once a round's selected fraction falls below it.
pub fn run_loop(ctx: &RunContext, initial: &Dataset) -> Result<Vec<IterationManifest>> {
    save_dataset(&ctx.layout.dataset_path(initial.iteration), initial, false)?;
    let mut current = initial.clone();
    let mut manifests = Vec::new();

    for _ in 0..ctx.config.run.iterations {
        let next_iter = current.iteration + 1;
        if ctx.config.run.mode == RunMode::Online {
            if let Some(command) = &ctx.config.trainer.command {
                let dataset_in = if ctx.config.run.strip_metadata {
                    let path = ctx.layout.trainer_input_path(next_iter);
                    save_dataset(&path, &current, true)?;
                    path
                } else {
                    ctx.layout.dataset_path(current.iteration)
                };
                trainer_hook(
                    command,
                    &dataset_in,
                    &ctx.layout.loss_path(next_iter),
                    &ctx.layout.trainer_log_path(),
                    &format!("iteration {next_iter}"),
                )?;
            }
        }

        let (next, manifest) = run_iteration(ctx, &current)?;
        let fraction = manifest.union_fraction();
        manifests.push(manifest);
        current = next;

        if let Some(floor) = ctx.config.run.stop_floor {
            if fraction < floor {
                log::info!(
                    "halting after iteration {}: selected fraction {fraction:.4} is below the floor {floor}",
                    current.iteration
                );
                break;
            }
        }
    }
    Ok(manifests)
}
