//! Per-sample model signals: loss trajectory, embedding isolation, and
//! judged quality.
//!
//! Every signal is keyed by sample id. Loss and embedding coverage must be
//! complete for a selection round; quality may be partial, and samples
//! without a quality score are simply excluded from the quality statistics
//! rather than defaulted.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::fsio;

pub mod diversity;
pub mod judge;
pub mod loss;

pub use diversity::{diversity_scores, k_nearest, Neighbor};
pub use judge::{parse_judge_reply, Dimension, JudgeAspect};
pub use loss::compute_loss;

/// Per-token training losses of one sample before and after the last
/// fine-tuning round. Both are mean negative log-likelihoods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSignal {
    pub id: String,
    pub loss_pre: f64,
    pub loss_post: f64,
}

/// Embedding-space isolation of one sample: mean cosine similarity to its k
/// nearest neighbors. Lower means more isolated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiversitySignal {
    pub id: String,
    /// Neighbor ids in non-increasing similarity order.
    pub neighbor_ids: Vec<String>,
    pub score: f64,
}

/// Judged quality of one sample: six sub-scores on a 0 to 10 scale, ordered
/// instruction then response, each judged for factuality, clarity, and
/// completeness. The final score is their arithmetic mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualitySignal {
    pub id: String,
    pub sub_scores: [f64; 6],
    pub mean: f64,
}

impl QualitySignal {
    pub fn new(id: impl Into<String>, sub_scores: [f64; 6]) -> Result<Self> {
        let id = id.into();
        for (i, s) in sub_scores.iter().enumerate() {
            if !s.is_finite() || !(0.0..=10.0).contains(s) {
                return Err(Error::Signal(format!(
                    "quality sub-score {i} for sample {id:?} is {s}, expected a value in [0, 10]"
                )));
            }
        }
        let mean = sub_scores.iter().sum::<f64>() / 6.0;
        Ok(QualitySignal { id, sub_scores, mean })
    }
}

/// Everything the selector needs for one round.
#[derive(Debug, Clone, Default)]
pub struct SignalBundle {
    pub losses: BTreeMap<String, LossSignal>,
    pub diversity: BTreeMap<String, DiversitySignal>,
    pub quality: BTreeMap<String, QualitySignal>,
}

fn parse_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let text = fsio::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: T = serde_json::from_str(line).map_err(|e| {
            Error::Signal(format!("{} line {}: malformed row: {e}", path.display(), idx + 1))
        })?;
        rows.push((idx + 1, row));
    }
    Ok(rows)
}

fn check_known_and_unique<'a>(
    path: &Path,
    lineno: usize,
    id: &'a str,
    dataset: &Dataset,
    seen: &mut std::collections::HashSet<&'a str>,
) -> Result<()> {
    if dataset.get(id).is_none() {
        return Err(Error::Signal(format!(
            "{} line {lineno}: unknown sample id {id:?}",
            path.display()
        )));
    }
    if !seen.insert(id) {
        return Err(Error::Signal(format!(
            "{} line {lineno}: duplicate row for sample id {id:?}",
            path.display()
        )));
    }
    Ok(())
}

fn check_complete_coverage(path: &Path, dataset: &Dataset, have: &BTreeMap<String, impl Sized>, what: &str) -> Result<()> {
    let missing: Vec<&str> = dataset.ids().filter(|id| !have.contains_key(*id)).collect();
    if missing.is_empty() {
        return Ok(());
    }
    let shown: Vec<&str> = missing.iter().take(5).copied().collect();
    Err(Error::Signal(format!(
        "{}: {} of {} samples have no {what} row (first missing: {})",
        path.display(),
        missing.len(),
        dataset.len(),
        shown.join(", ")
    )))
}

/// Reads a loss file and checks it covers the dataset exactly.
///
/// Rows are JSONL objects `{"id", "loss_pre", "loss_post"}`. Unknown ids,
/// duplicate rows, non-finite or negative losses, and missing coverage are
/// all errors.
pub fn ingest_loss_file(path: &Path, dataset: &Dataset) -> Result<BTreeMap<String, LossSignal>> {
    let rows: Vec<(usize, LossSignal)> = parse_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = BTreeMap::new();
    for (lineno, row) in &rows {
        check_known_and_unique(path, *lineno, &row.id, dataset, &mut seen)?;
        for (name, value) in [("loss_pre", row.loss_pre), ("loss_post", row.loss_post)] {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::Signal(format!(
                    "{} line {lineno}: {name} for sample {:?} is {value}, expected a finite non-negative loss",
                    path.display(),
                    row.id
                )));
            }
        }
    }
    for (_, row) in rows {
        out.insert(row.id.clone(), row);
    }
    check_complete_coverage(path, dataset, &out, "loss")?;
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct QualityRow {
    id: String,
    sub_scores: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mean: Option<f64>,
}

/// Reads judged quality scores. Coverage may be partial: samples absent from
/// the file are treated as unscored. A `mean` field, when present, must agree
/// with the mean of the six sub-scores.
pub fn ingest_quality_file(path: &Path, dataset: &Dataset) -> Result<BTreeMap<String, QualitySignal>> {
    let rows: Vec<(usize, QualityRow)> = parse_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = BTreeMap::new();
    for (lineno, row) in &rows {
        check_known_and_unique(path, *lineno, &row.id, dataset, &mut seen)?;
        let signal = QualitySignal::new(row.id.clone(), row.sub_scores)
            .map_err(|e| Error::Signal(format!("{} line {lineno}: {e}", path.display())))?;
        if let Some(stated) = row.mean {
            if (stated - signal.mean).abs() > 1e-9 {
                return Err(Error::Signal(format!(
                    "{} line {lineno}: stated mean {stated} disagrees with sub-score mean {}",
                    path.display(),
                    signal.mean
                )));
            }
        }
        out.insert(signal.id.clone(), signal);
    }
    Ok(out)
}

/// Writes loss signals as deterministic JSONL, one row per sample in id order.
pub fn write_loss_file(path: &Path, losses: &BTreeMap<String, LossSignal>) -> Result<()> {
    write_rows(path, losses.values())
}

/// Writes diversity signals as deterministic JSONL in id order.
pub fn write_diversity_file(path: &Path, signals: &BTreeMap<String, DiversitySignal>) -> Result<()> {
    write_rows(path, signals.values())
}

/// Writes quality signals as deterministic JSONL in id order.
pub fn write_quality_file(path: &Path, signals: &BTreeMap<String, QualitySignal>) -> Result<()> {
    write_rows(path, signals.values())
}

/// Reads a diversity snapshot written by [`write_diversity_file`].
pub fn read_diversity_file(path: &Path, dataset: &Dataset) -> Result<BTreeMap<String, DiversitySignal>> {
    let rows: Vec<(usize, DiversitySignal)> = parse_jsonl(path)?;
    let mut seen = std::collections::HashSet::new();
    let mut out = BTreeMap::new();
    for (lineno, row) in &rows {
        check_known_and_unique(path, *lineno, &row.id, dataset, &mut seen)?;
        if !row.score.is_finite() {
            return Err(Error::Signal(format!(
                "{} line {lineno}: diversity score for {:?} is not finite",
                path.display(),
                row.id
            )));
        }
    }
    for (_, row) in rows {
        out.insert(row.id.clone(), row);
    }
    check_complete_coverage(path, dataset, &out, "diversity")?;
    Ok(out)
}

fn write_rows<'a, T: Serialize + 'a>(path: &Path, rows: impl Iterator<Item = &'a T>) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        out.push_str(&serde_json::to_string(row).expect("signal row serializes"));
        out.push('\n');
    }
    fsio::write_atomic(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sample;

    fn dataset(ids: &[&str]) -> Dataset {
        let samples = ids
            .iter()
            .map(|id| Sample {
                id: (*id).into(),
                instruction: format!("do {id}"),
                context: None,
                response: "ok".into(),
                lineage: None,
                origin_iteration: 0,
            })
            .collect();
        Dataset::new(samples, 0).unwrap()
    }

    #[test]
    fn loss_file_round_trips_and_requires_full_coverage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.jsonl");
        let ds = dataset(&["a", "b"]);
        let mut losses = BTreeMap::new();
        losses.insert("a".into(), LossSignal { id: "a".into(), loss_pre: 2.5, loss_post: 1.25 });
        losses.insert("b".into(), LossSignal { id: "b".into(), loss_pre: 0.5, loss_post: 0.75 });
        write_loss_file(&path, &losses).unwrap();
        assert_eq!(ingest_loss_file(&path, &ds).unwrap(), losses);

        let bigger = dataset(&["a", "b", "c"]);
        let err = ingest_loss_file(&path, &bigger).unwrap_err();
        assert!(err.to_string().contains("no loss row"));
        assert!(err.to_string().contains("first missing: c"));
    }

    #[test]
    fn loss_file_rejects_unknown_duplicate_and_negative_rows() {
        let dir = tempfile::tempdir().unwrap();
        let ds = dataset(&["a"]);

        let unknown = dir.path().join("unknown.jsonl");
        std::fs::write(&unknown, "{\"id\":\"zz\",\"loss_pre\":1.0,\"loss_post\":1.0}\n").unwrap();
        let err = ingest_loss_file(&unknown, &ds).unwrap_err();
        assert!(err.to_string().contains("unknown sample id \"zz\""));
        assert!(matches!(err, Error::Signal(_)));

        let dup = dir.path().join("dup.jsonl");
        std::fs::write(
            &dup,
            "{\"id\":\"a\",\"loss_pre\":1.0,\"loss_post\":1.0}\n{\"id\":\"a\",\"loss_pre\":2.0,\"loss_post\":2.0}\n",
        )
        .unwrap();
        assert!(ingest_loss_file(&dup, &ds).unwrap_err().to_string().contains("duplicate row"));

        let neg = dir.path().join("neg.jsonl");
        std::fs::write(&neg, "{\"id\":\"a\",\"loss_pre\":-0.5,\"loss_post\":1.0}\n").unwrap();
        assert!(ingest_loss_file(&neg, &ds).unwrap_err().to_string().contains("loss_pre"));
    }

    #[test]
    fn loss_file_names_the_malformed_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "{\"id\":\"a\",\"loss_pre\":1.0,\"loss_post\":1.0}\nnot json\n").unwrap();
        let err = ingest_loss_file(&path, &dataset(&["a"])).unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn quality_file_allows_partial_coverage_but_not_bad_scores() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("q.jsonl");
        let ds = dataset(&["a", "b"]);
        std::fs::write(&path, "{\"id\":\"a\",\"sub_scores\":[7,8,6,7,9,8]}\n").unwrap();
        let map = ingest_quality_file(&path, &ds).unwrap();
        assert_eq!(map.len(), 1);
        let expected = (7.0 + 8.0 + 6.0 + 7.0 + 9.0 + 8.0) / 6.0;
        assert!((map["a"].mean - expected).abs() < 1e-12);

        std::fs::write(&path, "{\"id\":\"a\",\"sub_scores\":[7,8,6,7,9,11]}\n").unwrap();
        assert!(ingest_quality_file(&path, &ds).unwrap_err().to_string().contains("[0, 10]"));

        std::fs::write(&path, "{\"id\":\"a\",\"sub_scores\":[7,8,6,7,9,8],\"mean\":9.9}\n").unwrap();
        assert!(ingest_quality_file(&path, &ds).unwrap_err().to_string().contains("disagrees"));
    }

    #[test]
    fn quality_signal_mean_is_the_plain_average() {
        let q = QualitySignal::new("s", [0.0, 10.0, 5.0, 5.0, 5.0, 5.0]).unwrap();
        assert!((q.mean - 5.0).abs() < 1e-12);
    }

    #[test]
    fn signal_files_are_byte_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.jsonl");
        let b = dir.path().join("b.jsonl");
        let mut quality = BTreeMap::new();
        for id in ["z", "a", "m"] {
            quality.insert(id.to_string(), QualitySignal::new(id, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        }
        write_quality_file(&a, &quality).unwrap();
        write_quality_file(&b, &quality).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
        let text = std::fs::read_to_string(&a).unwrap();
        let first_line_id: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first_line_id["id"], "a");
    }
}
