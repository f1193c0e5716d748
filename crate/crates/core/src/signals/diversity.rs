//! Embedding ingestion and exact nearest-neighbor diversity scoring.
//!
//! The diversity score of a sample is the mean cosine similarity to its k
//! nearest neighbors under exact O(n^2 d) search. Vectors are L2-normalized
//! at ingest, so cosine similarity reduces to a dot product. Ties in
//! similarity break toward the lexicographically smaller sample id, which
//! keeps neighbor lists deterministic for duplicated points.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::fsio;
use crate::signals::DiversitySignal;

/// One neighbor of a sample, with its cosine similarity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: String,
    pub similarity: f64,
}

/// Scales a vector to unit L2 length in place.
///
/// Vectors that are already unit length within 1e-12 pass through unchanged,
/// so normalization is idempotent and snapshot re-reads are bit-stable.
pub fn normalize(vector: &mut [f64]) -> Result<()> {
    let norm_sq: f64 = vector.iter().map(|x| x * x).sum();
    let norm = norm_sq.sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Signal(format!(
            "cannot normalize embedding with L2 norm {norm}"
        )));
    }
    if (norm - 1.0).abs() <= 1e-12 {
        return Ok(());
    }
    for x in vector.iter_mut() {
        *x /= norm;
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EmbeddingRow {
    id: String,
    vector: Vec<f64>,
}

/// Reads per-sample embeddings from JSONL rows `{"id", "vector"}`.
///
/// Ids must be known, unique, and cover the dataset exactly; vectors must be
/// non-empty, finite, and share one dimension. Vectors are normalized before
/// being returned.
pub fn read_embeddings_jsonl(path: &Path, dataset: &Dataset) -> Result<BTreeMap<String, Vec<f64>>> {
    let text = fsio::read_to_string(path)?;
    let mut rows = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: EmbeddingRow = serde_json::from_str(line).map_err(|e| {
            Error::Signal(format!("{} line {}: malformed row: {e}", path.display(), idx + 1))
        })?;
        rows.push((idx + 1, row.id, row.vector));
    }
    build_embedding_map(path, dataset, rows)
}

/// Reads embeddings from a binary sidecar: `vectors_path` holds row-major
/// little-endian f32 values, `ids_path` lists one sample id per line in row
/// order. The dimension is inferred from the byte length.
pub fn read_embeddings_binary(
    vectors_path: &Path,
    ids_path: &Path,
    dataset: &Dataset,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let ids_text = fsio::read_to_string(ids_path)?;
    let ids: Vec<&str> = ids_text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    if ids.is_empty() {
        return Err(Error::Signal(format!("{}: id index is empty", ids_path.display())));
    }
    let bytes = fsio::read_bytes(vectors_path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Signal(format!(
            "{}: byte length {} is not a multiple of 4",
            vectors_path.display(),
            bytes.len()
        )));
    }
    let total_floats = bytes.len() / 4;
    if total_floats == 0 || total_floats % ids.len() != 0 {
        return Err(Error::Signal(format!(
            "{}: {} f32 values cannot be split evenly across {} ids",
            vectors_path.display(),
            total_floats,
            ids.len()
        )));
    }
    let dim = total_floats / ids.len();
    let mut rows = Vec::with_capacity(ids.len());
    for (row_idx, id) in ids.iter().enumerate() {
        let start = row_idx * dim * 4;
        let vector: Vec<f64> = bytes[start..start + dim * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        rows.push((row_idx + 1, (*id).to_string(), vector));
    }
    build_embedding_map(vectors_path, dataset, rows)
}

fn build_embedding_map(
    path: &Path,
    dataset: &Dataset,
    rows: Vec<(usize, String, Vec<f64>)>,
) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut dim: Option<usize> = None;
    for (lineno, id, mut vector) in rows {
        if dataset.get(&id).is_none() {
            return Err(Error::Signal(format!(
                "{} row {lineno}: unknown sample id {id:?}",
                path.display()
            )));
        }
        if vector.is_empty() {
            return Err(Error::Signal(format!(
                "{} row {lineno}: embedding for {id:?} is empty",
                path.display()
            )));
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::Signal(format!(
                "{} row {lineno}: embedding for {id:?} contains non-finite value {bad}",
                path.display()
            )));
        }
        match dim {
            None => dim = Some(vector.len()),
            Some(d) if d != vector.len() => {
                return Err(Error::Signal(format!(
                    "{} row {lineno}: embedding for {id:?} has dimension {}, expected {d}",
                    path.display(),
                    vector.len()
                )));
            }
            Some(_) => {}
        }
        normalize(&mut vector)?;
        if out.insert(id.clone(), vector).is_some() {
            return Err(Error::Signal(format!(
                "{} row {lineno}: duplicate row for sample id {id:?}",
                path.display()
            )));
        }
    }
    let missing: Vec<&str> = dataset.ids().filter(|id| !out.contains_key(*id)).collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        return Err(Error::Signal(format!(
            "{}: {} of {} samples have no embedding (first missing: {})",
            path.display(),
            missing.len(),
            dataset.len(),
            shown.join(", ")
        )));
    }
    Ok(out)
}

/// Writes embeddings as deterministic JSONL in id order.
pub fn write_embeddings_jsonl(path: &Path, embeddings: &BTreeMap<String, Vec<f64>>) -> Result<()> {
    let mut out = String::new();
    for (id, vector) in embeddings {
        let row = EmbeddingRow { id: id.clone(), vector: vector.clone() };
        out.push_str(&serde_json::to_string(&row).expect("embedding row serializes"));
        out.push('\n');
    }
    fsio::write_atomic(path, out.as_bytes())
}

/// Exact k-nearest-neighbor lists by cosine similarity.
///
/// Every sample gets `min(k, n - 1)` neighbors in non-increasing similarity
/// order, excluding itself. Equal similarities order by ascending id.
pub fn k_nearest(
    embeddings: &BTreeMap<String, Vec<f64>>,
    k: usize,
) -> Result<BTreeMap<String, Vec<Neighbor>>> {
    let n = embeddings.len();
    if n < 2 {
        return Err(Error::Signal(format!(
            "neighbor search needs at least 2 samples, have {n}"
        )));
    }
    if k == 0 {
        return Err(Error::Signal("neighbor count k must be at least 1".into()));
    }
    let ids: Vec<&str> = embeddings.keys().map(String::as_str).collect();
    let rows: Vec<&[f64]> = embeddings.values().map(Vec::as_slice).collect();
    let dim = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != dim) {
        return Err(Error::Signal(format!(
            "embedding for {:?} has dimension {}, expected {dim}",
            ids[bad],
            rows[bad].len()
        )));
    }
    let k_eff = k.min(n - 1);

    let per_sample: Vec<Vec<Neighbor>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut scored: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
            for j in 0..n {
                if j == i {
                    continue;
                }
                scored.push((dot(rows[i], rows[j]), j));
            }
            let better = |a: &(f64, usize), b: &(f64, usize)| {
                b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1))
            };
            if k_eff < scored.len() {
                scored.select_nth_unstable_by(k_eff, better);
                scored.truncate(k_eff);
            }
            scored.sort_unstable_by(better);
            scored
                .into_iter()
                .map(|(similarity, j)| Neighbor { id: ids[j].to_string(), similarity })
                .collect()
        })
        .collect();

    Ok(ids
        .iter()
        .zip(per_sample)
        .map(|(id, neighbors)| ((*id).to_string(), neighbors))
        .collect())
}

/// Mean similarity to the k nearest neighbors, per sample.
pub fn diversity_scores(
    embeddings: &BTreeMap<String, Vec<f64>>,
    k: usize,
) -> Result<BTreeMap<String, DiversitySignal>> {
    let neighbor_lists = k_nearest(embeddings, k)?;
    Ok(neighbor_lists
        .into_iter()
        .map(|(id, neighbors)| {
            let score = neighbors.iter().map(|nb| nb.similarity).sum::<f64>() / neighbors.len() as f64;
            let neighbor_ids = neighbors.into_iter().map(|nb| nb.id).collect();
            (id.clone(), DiversitySignal { id, neighbor_ids, score })
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
