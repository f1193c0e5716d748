//! Run summaries: loss histograms, quality score densities, a per-iteration
//! selection table, and a 2D embedding projection for plotting.
//!
//! Everything here is a pure function over values another module already
//! produced, plus small CSV and JSON writers. The CLI assembles the inputs
//! from a run directory.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;
use crate::pipeline::IterationManifest;

/// Fixed-width histogram. `counts` has one entry per bin; bin `i` spans
/// `[bin_edges[i], bin_edges[i + 1])`, with the final bin closed on the
/// right so the maximum lands inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n: usize,
    pub min_value: f64,
    pub max_value: f64,
}

/// Bins `values` into `bins` equal-width bins over `[lo, hi]`. Values outside
/// the range clamp into the end bins, so callers that derive the range from
/// the data never lose a count.
pub fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Histogram> {
    if values.is_empty() {
        return Err(Error::Report("cannot bin zero values".into()));
    }
    if bins == 0 {
        return Err(Error::Report("histogram needs at least one bin".into()));
    }
    if !lo.is_finite() || !hi.is_finite() || lo >= hi {
        return Err(Error::Report(format!("invalid histogram range [{lo}, {hi}]")));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Report(format!("cannot bin non-finite value {bad}")));
    }

    let width = (hi - lo) / bins as f64;
    let bin_edges: Vec<f64> =
        (0..=bins).map(|i| if i == bins { hi } else { lo + width * i as f64 }).collect();
    let mut counts = vec![0usize; bins];
    let mut min_value = f64::INFINITY;
    let mut max_value = f64::NEG_INFINITY;
    for &v in values {
        min_value = min_value.min(v);
        max_value = max_value.max(v);
        let raw = ((v - lo) / (hi - lo) * bins as f64).floor() as isize;
        let idx = raw.clamp(0, bins as isize - 1) as usize;
        counts[idx] += 1;
    }
    Ok(Histogram { bin_edges, counts, n: values.len(), min_value, max_value })
}

/// Before/after loss distributions over shared bin edges, plus the reduction
/// of the worst-case loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub before: Histogram,
    pub after: Histogram,
    /// `(max_before - max_after) / max_before * 100`; negative if the tail
    /// got worse.
    pub max_reduction_pct: f64,
}

/// Histograms both loss distributions over one shared range `[0, max]` so the
/// two are visually comparable bin for bin.
pub fn loss_report(before: &[f64], after: &[f64], bins: usize) -> Result<LossReport> {
    if before.is_empty() || after.is_empty() {
        return Err(Error::Report("loss report needs values on both sides".into()));
    }
    let max_of = |values: &[f64]| values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let max_before = max_of(before);
    let max_after = max_of(after);
    let hi = max_before.max(max_after);
    if !hi.is_finite() {
        return Err(Error::Report("loss values must be finite".into()));
    }
    if max_before <= 0.0 {
        return Err(Error::Report(
            "max loss reduction is undefined when the before distribution peaks at zero".into(),
        ));
    }
    let hi = if hi > 0.0 { hi } else { 1.0 };
    Ok(LossReport {
        before: histogram(before, 0.0, hi, bins)?,
        after: histogram(after, 0.0, hi, bins)?,
        max_reduction_pct: (max_before - max_after) / max_before * 100.0,
    })
}

/// Normalized quality score density for one iteration, over the fixed 0 to 10
/// judging scale. Densities integrate to one: `sum(density) * bin_width = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreDensity {
    pub iteration: u32,
    pub n: usize,
    pub mean: f64,
    pub bin_edges: Vec<f64>,
    pub density: Vec<f64>,
}

/// Turns per-iteration mean quality scores into normalized densities so the
/// distribution shift across rounds can be overlaid on one axis.
pub fn score_density(per_iteration: &BTreeMap<u32, Vec<f64>>, bins: usize) -> Result<Vec<ScoreDensity>> {
    if per_iteration.is_empty() {
        return Err(Error::Report("score density needs at least one iteration".into()));
    }
    let mut out = Vec::with_capacity(per_iteration.len());
    for (&iteration, scores) in per_iteration {
        if scores.is_empty() {
            return Err(Error::Report(format!("iteration {iteration} has no quality scores")));
        }
        let hist = histogram(scores, 0.0, 10.0, bins)?;
        let width = 10.0 / bins as f64;
        let n = hist.n;
        let density: Vec<f64> =
            hist.counts.iter().map(|&c| c as f64 / (n as f64 * width)).collect();
        let mean = scores.iter().sum::<f64>() / n as f64;
        out.push(ScoreDensity { iteration, n, mean, bin_edges: hist.bin_edges, density });
    }
    Ok(out)
}

/// One row of the per-iteration selection table. Count columns are `None` on
/// the initial row, which predates any selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub label: String,
    pub complexity: Option<usize>,
    pub diversity: Option<usize>,
    pub quality: Option<usize>,
    pub total_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionTable {
    pub rows: Vec<SelectionRow>,
    pub footnote: String,
}

/// Accounting note attached to every selection table. Extension bookkeeping
/// here is exact (one appended sample per selected seed), so totals computed
/// by this tool can drift slightly from totals reported elsewhere for the
/// same configuration.
pub const REFERENCE_TOTALS_NOTE: &str = "Totals count one appended sample per extension seed \
and one in-place replacement per rewrite. Externally reported totals for the 52,002-sample \
reference corpus give 53,939 after three rounds, 13 more than this arithmetic produces; small \
drift of that order is expected when comparing against outside tallies.";

/// Builds the selection-count table from iteration manifests, with an initial
/// row recording the corpus size and threshold multipliers the run started
/// from.
pub fn selection_table(manifests: &[IterationManifest]) -> Result<SelectionTable> {
    if manifests.is_empty() {
        return Err(Error::Report("selection table needs at least one iteration".into()));
    }
    let first = &manifests[0];
    let m_of = |key: &str| -> Result<f64> {
        first
            .stats
            .get(key)
            .map(|s| s.m)
            .ok_or_else(|| Error::Report(format!("manifest {} lacks {key} stats", first.iteration)))
    };
    let init_label = format!(
        "init (m = {}, {}, {})",
        m_of("loss_pre")?,
        m_of("diversity")?,
        m_of("quality")?
    );
    let mut rows = vec![SelectionRow {
        label: init_label,
        complexity: None,
        diversity: None,
        quality: None,
        total_after: first.sizes.before,
    }];
    for manifest in manifests {
        rows.push(SelectionRow {
            label: format!("iter {}", manifest.iteration),
            complexity: Some(manifest.counts.complexity),
            diversity: Some(manifest.counts.diversity),
            quality: Some(manifest.counts.quality),
            total_after: manifest.sizes.after,
        });
    }
    Ok(SelectionTable { rows, footnote: REFERENCE_TOTALS_NOTE.to_string() })
}

/// One plotted sample: its top-2 principal-component coordinates and a flag
/// such as `original`, `augmented`, or the selection kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub id: String,
    pub x: f64,
    pub y: f64,
    pub flag: String,
}

/// Projects embeddings onto their top two principal components.
///
/// Components are orthonormal with a fixed sign convention: the loading with
/// the largest magnitude is positive (ties break to the lower index), so the
/// same data always plots the same way up. Ids absent from `flags` are
/// labeled `original`. Needs at least 3 points of dimension at least 2; for
/// two-dimensional inputs the projection is a rigid rotation, so pairwise
/// distances are preserved.
pub fn projection_export(
    embeddings: &BTreeMap<String, Vec<f64>>,
    flags: &BTreeMap<String, String>,
) -> Result<Vec<ProjectionPoint>> {
    let n = embeddings.len();
    if n < 3 {
        return Err(Error::Report(format!("projection needs at least 3 points, have {n}")));
    }
    let dim = embeddings.values().next().expect("nonempty").len();
    if dim < 2 {
        return Err(Error::Report(format!("projection needs dimension >= 2, have {dim}")));
    }
    for (id, vector) in embeddings {
        if vector.len() != dim {
            return Err(Error::Report(format!(
                "embedding for {id:?} has dimension {}, expected {dim}",
                vector.len()
            )));
        }
        if let Some(bad) = vector.iter().find(|x| !x.is_finite()) {
            return Err(Error::Report(format!("embedding for {id:?} has non-finite value {bad}")));
        }
    }

    let mut mean = vec![0.0f64; dim];
    for vector in embeddings.values() {
        for (m, x) in mean.iter_mut().zip(vector) {
            *m += x;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let centered: Vec<Vec<f64>> = embeddings
        .values()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();

    let first = dominant_component(&centered, &[]);
    let (u1, u2) = match first {
        Some(u1) => {
            let u2 = dominant_component(&centered, std::slice::from_ref(&u1))
                .unwrap_or_else(|| orthogonal_completion(&[u1.clone()], dim));
            (u1, u2)
        }
        None => {
            // Zero variance: all points coincide. Any orthonormal pair works
            // and every coordinate is zero.
            let u1 = orthogonal_completion(&[], dim);
            let u2 = orthogonal_completion(&[u1.clone()], dim);
            (u1, u2)
        }
    };
    let u1 = fix_sign(u1);
    let u2 = fix_sign(u2);

    Ok(embeddings
        .keys()
        .zip(&centered)
        .map(|(id, row)| ProjectionPoint {
            id: id.clone(),
            x: dot(row, &u1),
            y: dot(row, &u2),
            flag: flags.get(id).cloned().unwrap_or_else(|| "original".to_string()),
        })
        .collect())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

fn orthogonalize(v: &mut [f64], against: &[Vec<f64>]) {
    for u in against {
        let projection = dot(v, u);
        for (x, y) in v.iter_mut().zip(u) {
            *x -= projection * y;
        }
    }
}

/// Applies the sample covariance `X^T X / n` to `v` without materializing the
/// matrix, which keeps the projection linear in the data size.
fn apply_covariance(centered: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0f64; v.len()];
    for row in centered {
        let t = dot(row, v);
        for (o, x) in out.iter_mut().zip(row) {
            *o += t * x;
        }
    }
    let n = centered.len() as f64;
    for o in &mut out {
        *o /= n;
    }
    out
}

/// Power iteration for the dominant eigenvector of the covariance restricted
/// to the complement of `prior`. Returns `None` when no variance remains
/// there. The covariance is positive semi-definite, so plain power iteration
/// converges without sign oscillation.
fn dominant_component(centered: &[Vec<f64>], prior: &[Vec<f64>]) -> Option<Vec<f64>> {
    let dim = centered[0].len();

    // Deterministic start: basis axes in order of decreasing variance, first
    // one that is not already inside the span of `prior`.
    let mut axis_variance: Vec<(f64, usize)> = (0..dim)
        .map(|j| (centered.iter().map(|row| row[j] * row[j]).sum::<f64>(), j))
        .collect();
    axis_variance.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
    let mut v = None;
    for (_, j) in axis_variance {
        let mut candidate = vec![0.0f64; dim];
        candidate[j] = 1.0;
        orthogonalize(&mut candidate, prior);
        let norm = l2(&candidate);
        if norm > 1e-9 {
            for x in &mut candidate {
                *x /= norm;
            }
            v = Some(candidate);
            break;
        }
    }
    let mut v = v?;

    for _ in 0..1000 {
        let mut next = apply_covariance(centered, &v);
        orthogonalize(&mut next, prior);
        let norm = l2(&next);
        if norm <= 1e-18 {
            return None;
        }
        for x in &mut next {
            *x /= norm;
        }
        let delta = v.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0f64, f64::max);
        v = next;
        if delta < 1e-14 {
            break;
        }
    }
    // Guard against a start vector that carried no variance at all.
    let lambda = dot(&v, &apply_covariance(centered, &v));
    if lambda <= 1e-18 {
        return None;
    }
    Some(v)
}

/// First basis vector with a nonzero residual against `prior`, normalized.
fn orthogonal_completion(prior: &[Vec<f64>], dim: usize) -> Vec<f64> {
    for j in 0..dim {
        let mut candidate = vec![0.0f64; dim];
        candidate[j] = 1.0;
        orthogonalize(&mut candidate, prior);
        let norm = l2(&candidate);
        if norm > 1e-9 {
            for x in &mut candidate {
                *x /= norm;
            }
            return candidate;
        }
    }
    unreachable!("fewer prior vectors than dimensions always leaves a completion");
}

fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut lead = 0;
    for (j, x) in v.iter().enumerate() {
        if x.abs() > v[lead].abs() {
            lead = j;
        }
    }
    if v[lead] < 0.0 {
        for x in &mut v {
            *x = -*x;
        }
    }
    v
}

/// Combined machine-readable report for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub loss: LossReport,
    pub densities: Vec<ScoreDensity>,
    pub table: SelectionTable,
}

pub fn write_run_report_json(path: &Path, report: &RunReport) -> Result<()> {
    let mut body = serde_json::to_string_pretty(report)
        .map_err(|err| Error::Report(format!("report does not serialize: {err}")))?;
    body.push('\n');
    fsio::write_atomic(path, body.as_bytes())
}

fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut out = String::from("bin_start,bin_end,count\n");
    for (i, count) in hist.counts.iter().enumerate() {
        out.push_str(&format!("{},{},{count}\n", hist.bin_edges[i], hist.bin_edges[i + 1]));
    }
    fsio::write_atomic(path, out.as_bytes())
}

pub fn write_density_csv(path: &Path, densities: &[ScoreDensity]) -> Result<()> {
    let mut out = String::from("iteration,bin_start,bin_end,density\n");
    for d in densities {
        for (i, value) in d.density.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{value}\n",
                d.iteration,
                d.bin_edges[i],
                d.bin_edges[i + 1]
            ));
        }
    }
    fsio::write_atomic(path, out.as_bytes())
}

pub fn write_selection_table_csv(path: &Path, table: &SelectionTable) -> Result<()> {
    let mut out = String::from("label,complexity,diversity,quality,total_after\n");
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            csv_field(&row.label),
            opt(row.complexity),
            opt(row.diversity),
            opt(row.quality),
            row.total_after
        ));
    }
    out.push_str(&format!("# {}\n", table.footnote));
    fsio::write_atomic(path, out.as_bytes())
}

pub fn write_projection_csv(path: &Path, points: &[ProjectionPoint]) -> Result<()> {
    let mut out = String::from("id,x,y,flag\n");
    for p in points {
        out.push_str(&format!("{},{},{},{}\n", csv_field(&p.id), p.x, p.y, csv_field(&p.flag)));
    }
    fsio::write_atomic(path, out.as_bytes())
}
