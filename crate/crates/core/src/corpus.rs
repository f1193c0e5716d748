//! Instruction-tuning corpus model and serialization.
//!
//! A corpus is a list of `(instruction, context?, response)` samples in the
//! Alpaca layout. On disk each record is one JSON object per line with the
//! fields `instruction`, `input`, and `output`, plus a reserved `_middo`
//! object carrying the sample id, optional lineage, and origin iteration.
//! Files written by [`save_dataset`] are byte-deterministic for a given
//! [`Dataset`], and a strip mode emits the plain three-field layout for
//! trainers that must not see pipeline metadata.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{sha256_hex, sha256_hex_parts};

/// How a regenerated sample relates to its seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    /// Rewrite of an overly hard instruction into an easier one.
    Simplify,
    /// Rewrite of a low-quality instruction into a better one.
    QualityRewrite,
    /// Brand-new instruction synthesized from a sparse seed and its neighbors.
    Extend,
}

impl TransformKind {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            TransformKind::Simplify => "simplify",
            TransformKind::QualityRewrite => "quality_rewrite",
            TransformKind::Extend => "extend",
        }
    }
}

/// Provenance of a regenerated sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Lineage {
    /// Id of the seed sample in the iteration that produced this one.
    pub parent_id: String,
    pub transform_kind: TransformKind,
    pub created_in_iteration: u32,
}

/// One instruction-tuning sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub instruction: String,
    /// Optional grounding context, the Alpaca `input` field.
    pub context: Option<String>,
    pub response: String,
    /// Present only on samples produced by a refinement pass.
    pub lineage: Option<Lineage>,
    /// Iteration in which the sample entered the corpus; 0 for originals.
    pub origin_iteration: u32,
}

impl Sample {
    /// A fresh original sample with a content-derived id, as assigned at ingest.
    #[must_use]
    pub fn original(instruction: impl Into<String>, context: Option<String>, response: impl Into<String>) -> Self {
        let instruction = instruction.into();
        let response = response.into();
        let id = content_id(&instruction, context.as_deref(), &response, None);
        Sample { id, instruction, context, response, lineage: None, origin_iteration: 0 }
    }

    /// The full prompt a model sees for this sample: the instruction, plus
    /// the context on its own line when one is present.
    #[must_use]
    pub fn prompt_text(&self) -> String {
        match &self.context {
            Some(context) => format!("{}\n{context}", self.instruction),
            None => self.instruction.clone(),
        }
    }
}

/// An ordered corpus plus the iteration counter that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub iteration: u32,
    /// SHA-256 of the canonical serialized form, kept current by the
    /// constructors and by [`load_dataset`] / [`apply_updates`].
    pub source_digest: String,
}

impl Dataset {
    /// Builds a dataset from samples, enforcing id uniqueness.
    pub fn new(samples: Vec<Sample>, iteration: u32) -> Result<Self> {
        let mut seen: HashSet<&str> = HashSet::with_capacity(samples.len());
        for sample in &samples {
            if sample.id.is_empty() {
                return Err(Error::Corpus(format!(
                    "sample with instruction {:?} has an empty id",
                    truncate_for_message(&sample.instruction)
                )));
            }
            if !seen.insert(&sample.id) {
                return Err(Error::Corpus(format!("duplicate sample id {:?}", sample.id)));
            }
        }
        let mut dataset = Dataset { samples, iteration, source_digest: String::new() };
        dataset.source_digest = sha256_hex(canonical_bytes(&dataset, false).as_bytes());
        Ok(dataset)
    }

    #[must_use]
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    #[must_use]
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.samples.iter().map(|s| s.id.as_str())
    }

    /// Map from sample id to its position in `samples`.
    #[must_use]
    pub fn id_index(&self) -> HashMap<&str, usize> {
        self.samples.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect()
    }

    #[must_use]
    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }
}

/// On-disk layout accepted by [`load_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line, optionally preceded by a dataset header line.
    Jsonl,
    /// A single top-level JSON array of record objects.
    JsonArray,
}

#[derive(Serialize, Deserialize)]
struct WireMeta {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lineage: Option<Lineage>,
    #[serde(default)]
    origin_iteration: u32,
}

#[derive(Serialize, Deserialize)]
struct WireRecord {
    instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<String>,
    output: String,
    #[serde(rename = "_middo", default, skip_serializing_if = "Option::is_none")]
    meta: Option<WireMeta>,
}

#[derive(Serialize, Deserialize)]
struct WireHeader {
    #[serde(rename = "_middo_dataset")]
    dataset: WireHeaderBody,
}

#[derive(Serialize, Deserialize)]
struct WireHeaderBody {
    iteration: u32,
}

/// Reads a corpus from disk.
///
/// Records may be plain Alpaca rows or rows that already carry `_middo`
/// metadata; the two can be mixed. Rows without metadata get stable
/// content-hash ids, with a position salt when the same content appears more
/// than once. Blank lines are skipped and unknown extra fields are ignored.
pub fn load_dataset(path: &Path, format: CorpusFormat) -> Result<Dataset> {
    match format {
        CorpusFormat::Jsonl => load_jsonl(path),
        CorpusFormat::JsonArray => load_json_array(path),
    }
}

fn load_jsonl(path: &Path) -> Result<Dataset> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);

    let mut iteration = 0u32;
    let mut records: Vec<(usize, WireRecord)> = Vec::new();
    let mut saw_content = false;

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        if looks_like_header(&line) {
            if saw_content {
                return Err(corpus_err(path, lineno, "dataset header after the first record"));
            }
            let header: WireHeader = serde_json::from_str(&line)
                .map_err(|e| corpus_err(path, lineno, &format!("malformed dataset header: {e}")))?;
            iteration = header.dataset.iteration;
            saw_content = true;
            continue;
        }
        saw_content = true;
        let record: WireRecord = serde_json::from_str(&line)
            .map_err(|e| corpus_err(path, lineno, &format!("malformed record: {e}")))?;
        records.push((lineno, record));
    }

    let samples = assemble(path, records, |lineno| format!("line {lineno}"))?;
    Dataset::new(samples, iteration)
}

fn load_json_array(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let records: Vec<WireRecord> = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Corpus(format!("{}: malformed record array: {e}", path.display())))?;
    let indexed = records.into_iter().enumerate().map(|(i, r)| (i, r)).collect();
    let samples = assemble(path, indexed, |index| format!("record {index}"))?;
    Dataset::new(samples, 0)
}

fn looks_like_header(line: &str) -> bool {
    // Cheap structural check so ordinary records skip a second parse.
    line.trim_start().starts_with("{\"_middo_dataset\"")
        || serde_json::from_str::<serde_json::Value>(line)
            .map(|v| v.get("_middo_dataset").is_some())
            .unwrap_or(false)
}

fn assemble(
    path: &Path,
    records: Vec<(usize, WireRecord)>,
    describe: impl Fn(usize) -> String,
) -> Result<Vec<Sample>> {
    let mut samples = Vec::with_capacity(records.len());
    let mut used_ids: HashSet<String> = HashSet::with_capacity(records.len());

    for (position, (where_at, record)) in records.into_iter().enumerate() {
        let at = describe(where_at);
        if record.instruction.trim().is_empty() {
            return Err(corpus_msg(path, &at, "instruction is empty"));
        }
        let context = match record.input {
            Some(s) if s.is_empty() => None,
            other => other,
        };

        let (id, lineage, origin_iteration) = match record.meta {
            Some(meta) => {
                if meta.id.trim().is_empty() {
                    return Err(corpus_msg(path, &at, "metadata id is empty"));
                }
                (meta.id, meta.lineage, meta.origin_iteration)
            }
            None => {
                let plain = content_id(&record.instruction, context.as_deref(), &record.output, None);
                let id = if used_ids.contains(&plain) {
                    content_id(&record.instruction, context.as_deref(), &record.output, Some(position))
                } else {
                    plain
                };
                (id, None, 0)
            }
        };

        if !used_ids.insert(id.clone()) {
            return Err(corpus_msg(path, &at, &format!("duplicate sample id {id:?}")));
        }

        samples.push(Sample {
            id,
            instruction: record.instruction,
            context,
            response: record.output,
            lineage,
            origin_iteration,
        });
    }
    Ok(samples)
}

fn corpus_err(path: &Path, lineno: usize, msg: &str) -> Error {
    Error::Corpus(format!("{} line {lineno}: {msg}", path.display()))
}

fn corpus_msg(path: &Path, at: &str, msg: &str) -> Error {
    Error::Corpus(format!("{} {at}: {msg}", path.display()))
}

fn truncate_for_message(text: &str) -> String {
    let mut out: String = text.chars().take(40).collect();
    if out.len() < text.len() {
        out.push_str("...");
    }
    out
}

/// Stable id for sample content, salted by corpus position for duplicates.
#[must_use]
pub fn content_id(instruction: &str, context: Option<&str>, response: &str, position_salt: Option<usize>) -> String {
    let salt = position_salt.map(|p| format!("pos:{p}"));
    let mut parts = vec![instruction, context.unwrap_or(""), if context.is_some() { "c" } else { "n" }, response];
    if let Some(ref s) = salt {
        parts.push(s);
    }
    sha256_hex_parts(&parts)[..16].to_string()
}

/// Id for a sample produced by a refinement transform.
#[must_use]
pub fn derived_id(parent_id: &str, kind: TransformKind, iteration: u32, instruction: &str, response: &str) -> String {
    let iter = iteration.to_string();
    sha256_hex_parts(&[parent_id, kind.as_str(), &iter, instruction, response])[..16].to_string()
}

fn canonical_bytes(dataset: &Dataset, strip_metadata: bool) -> String {
    let mut out = String::new();
    if !strip_metadata {
        let header = WireHeader { dataset: WireHeaderBody { iteration: dataset.iteration } };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
    }
    for sample in &dataset.samples {
        let record = WireRecord {
            instruction: sample.instruction.clone(),
            input: if strip_metadata {
                Some(sample.context.clone().unwrap_or_default())
            } else {
                sample.context.clone()
            },
            output: sample.response.clone(),
            meta: if strip_metadata {
                None
            } else {
                Some(WireMeta {
                    id: sample.id.clone(),
                    lineage: sample.lineage.clone(),
                    origin_iteration: sample.origin_iteration,
                })
            },
        };
        out.push_str(&serde_json::to_string(&record).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Writes a corpus as JSONL, atomically, and returns the digest of the bytes
/// written. With `strip_metadata` the output is the plain Alpaca layout
/// (`input` always present, empty string for missing context) and carries no
/// header line.
pub fn save_dataset(path: &Path, dataset: &Dataset, strip_metadata: bool) -> Result<String> {
    let bytes = canonical_bytes(dataset, strip_metadata);
    crate::fsio::write_atomic(path, bytes.as_bytes())?;
    Ok(sha256_hex(bytes.as_bytes()))
}

/// Applies one refinement round: in-place replacements keyed by the id being
/// replaced, then additions appended in input order. Returns the next
/// iteration's dataset; the input dataset is not modified.
pub fn apply_updates(
    dataset: &Dataset,
    replacements: &BTreeMap<String, Sample>,
    additions: &[Sample],
) -> Result<Dataset> {
    let next_iteration = dataset.iteration + 1;
    let old_ids: HashSet<&str> = dataset.ids().collect();
    let mut new_ids: HashSet<&str> = HashSet::new();

    let check_new = |sample: &Sample, role: &str| -> Result<()> {
        let lineage = sample.lineage.as_ref().ok_or_else(|| {
            Error::Corpus(format!("{role} sample {:?} is missing lineage", sample.id))
        })?;
        if !old_ids.contains(lineage.parent_id.as_str()) {
            return Err(Error::Corpus(format!(
                "{role} sample {:?} names parent {:?} which is not in the current dataset",
                sample.id, lineage.parent_id
            )));
        }
        if lineage.created_in_iteration != next_iteration {
            return Err(Error::Corpus(format!(
                "{role} sample {:?} says created_in_iteration {} but this update produces iteration {next_iteration}",
                sample.id, lineage.created_in_iteration
            )));
        }
        if sample.origin_iteration != next_iteration {
            return Err(Error::Corpus(format!(
                "{role} sample {:?} says origin_iteration {} but this update produces iteration {next_iteration}",
                sample.id, sample.origin_iteration
            )));
        }
        if sample.instruction.trim().is_empty() {
            return Err(Error::Corpus(format!("{role} sample {:?} has an empty instruction", sample.id)));
        }
        if old_ids.contains(sample.id.as_str()) {
            return Err(Error::Corpus(format!(
                "{role} sample id {:?} collides with an existing sample",
                sample.id
            )));
        }
        Ok(())
    };

    for (replaced_id, sample) in replacements {
        if !old_ids.contains(replaced_id.as_str()) {
            return Err(Error::Corpus(format!(
                "replacement targets unknown sample id {replaced_id:?}"
            )));
        }
        check_new(sample, "replacement")?;
        let lineage = sample.lineage.as_ref().expect("checked above");
        if lineage.parent_id != *replaced_id {
            return Err(Error::Corpus(format!(
                "replacement for {replaced_id:?} carries lineage parent {:?}",
                lineage.parent_id
            )));
        }
        if lineage.transform_kind == TransformKind::Extend {
            return Err(Error::Corpus(format!(
                "replacement for {replaced_id:?} uses the extend transform, which only produces additions"
            )));
        }
    }
    for sample in additions {
        check_new(sample, "addition")?;
        let lineage = sample.lineage.as_ref().expect("checked above");
        if lineage.transform_kind != TransformKind::Extend {
            return Err(Error::Corpus(format!(
                "addition {:?} uses transform {:?}, additions must use extend",
                sample.id,
                lineage.transform_kind.as_str()
            )));
        }
    }

    for sample in replacements.values().chain(additions.iter()) {
        if !new_ids.insert(sample.id.as_str()) {
            return Err(Error::Corpus(format!("duplicate new sample id {:?}", sample.id)));
        }
    }

    let mut samples = Vec::with_capacity(dataset.len() + additions.len());
    for sample in &dataset.samples {
        match replacements.get(&sample.id) {
            Some(replacement) => samples.push(replacement.clone()),
            None => samples.push(sample.clone()),
        }
    }
    samples.extend(additions.iter().cloned());

    Dataset::new(samples, next_iteration)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(id: &str, instruction: &str) -> Sample {
        Sample {
            id: id.into(),
            instruction: instruction.into(),
            context: None,
            response: format!("response for {instruction}"),
            lineage: None,
            origin_iteration: 0,
        }
    }

    fn demo_dataset() -> Dataset {
        Dataset::new(
            vec![
                sample("aaaa", "List three colors."),
                Sample { context: Some("23, 16, 22".into()), ..sample("bbbb", "Find the mode.") },
                sample("cccc", "Name a planet."),
            ],
            0,
        )
        .unwrap()
    }

    #[test]
    fn prompt_text_folds_context_onto_its_own_line() {
        let plain = sample("aaaa", "List three colors.");
        assert_eq!(plain.prompt_text(), "List three colors.");

        let with_context = Sample { context: Some("23, 16, 22".into()), ..sample("bbbb", "Find the mode.") };
        assert_eq!(with_context.prompt_text(), "Find the mode.\n23, 16, 22");
    }

    fn replacement_for(parent: &str, iteration: u32) -> Sample {
        let instruction = format!("Rewritten from {parent}");
        let response = "fresh response".to_string();
        Sample {
            id: derived_id(parent, TransformKind::Simplify, iteration, &instruction, &response),
            instruction,
            context: None,
            response,
            lineage: Some(Lineage {
                parent_id: parent.into(),
                transform_kind: TransformKind::Simplify,
                created_in_iteration: iteration,
            }),
            origin_iteration: iteration,
        }
    }

    fn addition_for(parent: &str, iteration: u32) -> Sample {
        let instruction = format!("Extension of {parent}");
        let response = "new response".to_string();
        Sample {
            id: derived_id(parent, TransformKind::Extend, iteration, &instruction, &response),
            instruction,
            context: None,
            response,
            lineage: Some(Lineage {
                parent_id: parent.into(),
                transform_kind: TransformKind::Extend,
                created_in_iteration: iteration,
            }),
            origin_iteration: iteration,
        }
    }

    #[test]
    fn round_trip_preserves_every_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.jsonl");
        let mut dataset = demo_dataset();
        dataset.samples[1].lineage = Some(Lineage {
            parent_id: "aaaa".into(),
            transform_kind: TransformKind::QualityRewrite,
            created_in_iteration: 2,
        });
        dataset.samples[1].origin_iteration = 2;
        dataset.iteration = 2;
        let dataset = Dataset::new(dataset.samples, dataset.iteration).unwrap();

        save_dataset(&path, &dataset, false).unwrap();
        let loaded = load_dataset(&path, CorpusFormat::Jsonl).unwrap();
        assert_eq!(loaded, dataset);
    }

    #[test]
    fn saving_twice_produces_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let dataset = demo_dataset();
        save_dataset(&a, &dataset, false).unwrap();
        save_dataset(&b, &dataset, false).unwrap();
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    }

    #[test]
    fn raw_alpaca_rows_get_stable_ids_and_empty_input_becomes_none() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.jsonl");
        fs::write(
            &path,
            concat!(
                "{\"instruction\":\"Give three tips.\",\"input\":\"\",\"output\":\"Eat well.\"}\n",
                "{\"instruction\":\"Sum 2 and 3.\",\"input\":\"2, 3\",\"output\":\"5\"}\n",
            ),
        )
        .unwrap();

        let first = load_dataset(&path, CorpusFormat::Jsonl).unwrap();
        let second = load_dataset(&path, CorpusFormat::Jsonl).unwrap();
        assert_eq!(first, second);
        assert_eq!(first.iteration, 0);
        assert_eq!(first.samples[0].context, None);
        assert_eq!(first.samples[1].context.as_deref(), Some("2, 3"));
        assert_eq!(first.samples[0].id.len(), 16);
        assert_ne!(first.samples[0].id, first.samples[1].id);
    }

    #[test]
    fn duplicate_content_rows_get_distinct_position_salted_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.jsonl");
        let row = "{\"instruction\":\"Repeat me.\",\"output\":\"ok\"}\n";
        fs::write(&path, format!("{row}{row}{row}")).unwrap();

        let dataset = load_dataset(&path, CorpusFormat::Jsonl).unwrap();
        assert_eq!(dataset.len(), 3);
        let ids: HashSet<_> = dataset.ids().collect();
        assert_eq!(ids.len(), 3);

        // First occurrence keeps the plain content hash.
        assert_eq!(dataset.samples[0].id, content_id("Repeat me.", None, "ok", None));
    }

    #[test]
    fn json_array_format_loads_like_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.json");
        fs::write(
            &path,
            "[{\"instruction\":\"A\",\"output\":\"1\"},{\"instruction\":\"B\",\"input\":\"ctx\",\"output\":\"2\"}]",
        )
        .unwrap();
        let dataset = load_dataset(&path, CorpusFormat::JsonArray).unwrap();
        assert_eq!(dataset.len(), 2);
        assert_eq!(dataset.samples[1].context.as_deref(), Some("ctx"));
    }

    #[test]
    fn missing_output_names_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        fs::write(
            &path,
            "{\"instruction\":\"ok\",\"output\":\"fine\"}\n{\"instruction\":\"broken\"}\n",
        )
        .unwrap();
        let err = load_dataset(&path, CorpusFormat::Jsonl).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 2"), "unexpected message: {msg}");
        assert!(msg.contains("output"), "unexpected message: {msg}");
    }

    #[test]
    fn blank_instruction_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("blank.jsonl");
        fs::write(&path, "{\"instruction\":\"  \",\"output\":\"x\"}\n").unwrap();
        let err = load_dataset(&path, CorpusFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("instruction is empty"));
    }

    #[test]
    fn blank_lines_are_skipped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gaps.jsonl");
        fs::write(&path, "\n{\"instruction\":\"A\",\"output\":\"1\"}\n\n\n{\"instruction\":\"B\",\"output\":\"2\"}\n").unwrap();
        assert_eq!(load_dataset(&path, CorpusFormat::Jsonl).unwrap().len(), 2);
    }

    #[test]
    fn duplicate_metadata_ids_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dupid.jsonl");
        let row = "{\"instruction\":\"A\",\"output\":\"1\",\"_middo\":{\"id\":\"x\",\"origin_iteration\":0}}\n";
        fs::write(&path, format!("{row}{row}")).unwrap();
        let err = load_dataset(&path, CorpusFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("duplicate sample id"));
    }

    #[test]
    fn header_after_records_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("late.jsonl");
        fs::write(
            &path,
            "{\"instruction\":\"A\",\"output\":\"1\"}\n{\"_middo_dataset\":{\"iteration\":3}}\n",
        )
        .unwrap();
        let err = load_dataset(&path, CorpusFormat::Jsonl).unwrap_err();
        assert!(err.to_string().contains("header after the first record"));
    }

    #[test]
    fn header_carries_the_iteration() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("it.jsonl");
        fs::write(
            &path,
            "{\"_middo_dataset\":{\"iteration\":7}}\n{\"instruction\":\"A\",\"output\":\"1\"}\n",
        )
        .unwrap();
        assert_eq!(load_dataset(&path, CorpusFormat::Jsonl).unwrap().iteration, 7);
    }

    #[test]
    fn strip_mode_emits_plain_alpaca_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plain.jsonl");
        let mut dataset = demo_dataset();
        dataset.iteration = 3;
        let dataset = Dataset::new(dataset.samples, dataset.iteration).unwrap();
        save_dataset(&path, &dataset, true).unwrap();

        let text = fs::read_to_string(&path).unwrap();
        assert!(!text.contains("_middo"));
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["input"], "");

        // Content survives a reload even though metadata is gone.
        let reloaded = load_dataset(&path, CorpusFormat::Jsonl).unwrap();
        assert_eq!(reloaded.iteration, 0);
        assert_eq!(reloaded.len(), dataset.len());
        for (a, b) in reloaded.samples.iter().zip(&dataset.samples) {
            assert_eq!(a.instruction, b.instruction);
            assert_eq!(a.context, b.context);
            assert_eq!(a.response, b.response);
        }
    }

    #[test]
    fn apply_updates_replaces_in_place_and_appends_additions() {
        let dataset = demo_dataset();
        let replacement = replacement_for("bbbb", 1);
        let new_id = replacement.id.clone();
        let mut replacements = BTreeMap::new();
        replacements.insert("bbbb".to_string(), replacement);
        let additions = vec![addition_for("aaaa", 1), addition_for("cccc", 1)];

        let next = apply_updates(&dataset, &replacements, &additions).unwrap();
        assert_eq!(next.iteration, 1);
        assert_eq!(next.len(), dataset.len() + additions.len());
        assert_eq!(next.samples[1].id, new_id);
        assert_eq!(next.samples[0], dataset.samples[0]);
        assert_eq!(next.samples[3].lineage.as_ref().unwrap().parent_id, "aaaa");
        assert_eq!(next.samples[4].lineage.as_ref().unwrap().parent_id, "cccc");
        // The input dataset is untouched.
        assert_eq!(dataset.samples[1].id, "bbbb");
    }

    #[test]
    fn apply_updates_rejects_unknown_replacement_target() {
        let dataset = demo_dataset();
        let mut replacements = BTreeMap::new();
        replacements.insert("zzzz".to_string(), replacement_for("zzzz", 1));
        let err = apply_updates(&dataset, &replacements, &[]).unwrap_err();
        assert!(err.to_string().contains("unknown sample id"));
    }

    #[test]
    fn apply_updates_rejects_missing_lineage() {
        let dataset = demo_dataset();
        let mut bare = sample("ffff", "No lineage");
        bare.origin_iteration = 1;
        let mut replacements = BTreeMap::new();
        replacements.insert("aaaa".to_string(), bare);
        let err = apply_updates(&dataset, &replacements, &[]).unwrap_err();
        assert!(err.to_string().contains("missing lineage"));
    }

    #[test]
    fn apply_updates_rejects_lineage_parent_mismatch() {
        let dataset = demo_dataset();
        let mut replacements = BTreeMap::new();
        // Lineage points at cccc but the map key replaces aaaa.
        replacements.insert("aaaa".to_string(), replacement_for("cccc", 1));
        let err = apply_updates(&dataset, &replacements, &[]).unwrap_err();
        assert!(err.to_string().contains("carries lineage parent"));
    }

    #[test]
    fn apply_updates_rejects_extend_as_replacement_and_rewrites_as_addition() {
        let dataset = demo_dataset();

        let mut replacements = BTreeMap::new();
        let mut wrong = addition_for("aaaa", 1);
        wrong.lineage.as_mut().unwrap().parent_id = "aaaa".into();
        replacements.insert("aaaa".to_string(), wrong);
        let err = apply_updates(&dataset, &replacements, &[]).unwrap_err();
        assert!(err.to_string().contains("only produces additions"));

        let err = apply_updates(&dataset, &BTreeMap::new(), &[replacement_for("aaaa", 1)]).unwrap_err();
        assert!(err.to_string().contains("additions must use extend"));
    }

    #[test]
    fn apply_updates_rejects_id_collisions_with_existing_samples() {
        let dataset = demo_dataset();
        let mut replacement = replacement_for("aaaa", 1);
        replacement.id = "cccc".into();
        let mut replacements = BTreeMap::new();
        replacements.insert("aaaa".to_string(), replacement);
        let err = apply_updates(&dataset, &replacements, &[]).unwrap_err();
        assert!(err.to_string().contains("collides"));
    }

    #[test]
    fn apply_updates_rejects_stale_iteration_numbers() {
        let dataset = demo_dataset();
        let mut replacements = BTreeMap::new();
        replacements.insert("aaaa".to_string(), replacement_for("aaaa", 2));
        let err = apply_updates(&dataset, &replacements, &[]).unwrap_err();
        assert!(err.to_string().contains("created_in_iteration"));
    }

    #[test]
    fn derived_ids_differ_by_kind_and_iteration() {
        let a = derived_id("p", TransformKind::Simplify, 1, "i", "r");
        let b = derived_id("p", TransformKind::QualityRewrite, 1, "i", "r");
        let c = derived_id("p", TransformKind::Simplify, 2, "i", "r");
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 16);
    }
}
