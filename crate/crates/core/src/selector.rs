//! Threshold-based sample selection over the three signal families.
//!
//! Every selector uses the same rule: compute the mean and population
//! standard deviation of a score distribution, place the cut at
//! `mean + m * std_dev`, and compare strictly against it. Complexity looks
//! for samples whose loss stays above the cut both before and after the
//! latest training round, sparsity for samples whose neighborhood similarity
//! falls below it, and low quality for samples whose judge mean falls below
//! it. Overlaps between the resulting sets are resolved into one transform
//! assignment per selected sample.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::TransformKind;
use crate::error::{Error, Result};
use crate::signals::{DiversitySignal, LossSignal, QualitySignal, SignalBundle};

/// Distribution summary behind one threshold decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalStats {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub m: f64,
    pub threshold: f64,
}

/// Standard-deviation multipliers for the three selectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MValues {
    pub complexity: f64,
    pub diversity: f64,
    pub quality: f64,
}

impl Default for MValues {
    fn default() -> Self {
        MValues { complexity: 1.0, diversity: -1.0, quality: -1.5 }
    }
}

/// Computes the distribution summary for `values` at multiplier `m`.
///
/// The standard deviation is the population form (divide by `n`), computed
/// in two passes so that `m = 0` returns the mean exactly.
pub fn signal_stats(values: &[f64], m: f64) -> Result<SignalStats> {
    if values.is_empty() {
        return Err(Error::Selection("cannot place a threshold over zero values".into()));
    }
    if !m.is_finite() {
        return Err(Error::Selection(format!("threshold multiplier {m} is not finite")));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Selection(format!("signal value {bad} is not finite")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values
        .iter()
        .map(|v| {
            let d = v - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std_dev = variance.sqrt();
    Ok(SignalStats { n: values.len(), mean, std_dev, m, threshold: mean + m * std_dev })
}

/// The threshold `mean + m * std_dev` over `values`.
pub fn dynamic_threshold(values: &[f64], m: f64) -> Result<f64> {
    Ok(signal_stats(values, m)?.threshold)
}

/// Complexity selection: ids over the loss cut both before and after training.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexitySelection {
    pub ids: BTreeSet<String>,
    pub pre: SignalStats,
    pub post: SignalStats,
}

/// Selection over a single score distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSelection {
    pub ids: BTreeSet<String>,
    pub stats: SignalStats,
}

/// Samples whose loss exceeds its threshold in both the pre- and
/// post-training distributions. Each distribution gets its own cut; the
/// multiplier is shared.
pub fn select_complex(losses: &BTreeMap<String, LossSignal>, m: f64) -> Result<ComplexitySelection> {
    let pre_values: Vec<f64> = losses.values().map(|l| l.loss_pre).collect();
    let post_values: Vec<f64> = losses.values().map(|l| l.loss_post).collect();
    let pre = signal_stats(&pre_values, m)?;
    let post = signal_stats(&post_values, m)?;
    let ids = losses
        .values()
        .filter(|l| l.loss_pre > pre.threshold && l.loss_post > post.threshold)
        .map(|l| l.id.clone())
        .collect();
    Ok(ComplexitySelection { ids, pre, post })
}

/// Samples whose neighborhood similarity falls strictly below the cut,
/// meaning they sit in thinly covered regions of the embedding space.
pub fn select_sparse(diversity: &BTreeMap<String, DiversitySignal>, m: f64) -> Result<ScalarSelection> {
    let values: Vec<f64> = diversity.values().map(|d| d.score).collect();
    let stats = signal_stats(&values, m)?;
    let ids = diversity
        .values()
        .filter(|d| d.score < stats.threshold)
        .map(|d| d.id.clone())
        .collect();
    Ok(ScalarSelection { ids, stats })
}

/// Samples whose mean judge score falls strictly below the cut. Only scored
/// samples participate; unscored ones are neither counted nor selected.
pub fn select_low_quality(quality: &BTreeMap<String, QualitySignal>, m: f64) -> Result<ScalarSelection> {
    let values: Vec<f64> = quality.values().map(|q| q.mean).collect();
    let stats = signal_stats(&values, m)?;
    let ids = quality
        .values()
        .filter(|q| q.mean < stats.threshold)
        .map(|q| q.id.clone())
        .collect();
    Ok(ScalarSelection { ids, stats })
}

/// Which rewrite wins when a sample is flagged both hard and low quality.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapPolicy {
    #[default]
    PreferSimplify,
    PreferQualityRewrite,
}

/// Transforms assigned to one selected sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformAssignment {
    /// In-place rewrite, if the sample was flagged hard or low quality.
    pub replacement: Option<TransformKind>,
    /// Whether a brand-new sample is synthesized alongside this one.
    pub extend: bool,
}

/// The resolved per-iteration selection: raw sets, one assignment per
/// selected id, and the selected share of the corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSets {
    pub hard: BTreeSet<String>,
    pub sparse: BTreeSet<String>,
    pub low_quality: BTreeSet<String>,
    pub assignment: BTreeMap<String, TransformAssignment>,
    pub union_fraction: f64,
}

/// Merges the three id sets into per-sample transform assignments.
///
/// A sample flagged both hard and low quality gets a single replacement
/// decided by `policy`; the extension flag is independent of replacements.
/// `total_samples` is the corpus size the union fraction is measured against.
pub fn resolve_overlaps(
    hard: &BTreeSet<String>,
    sparse: &BTreeSet<String>,
    low_quality: &BTreeSet<String>,
    total_samples: usize,
    policy: OverlapPolicy,
) -> Result<SelectionSets> {
    if total_samples == 0 {
        return Err(Error::Selection("selection over an empty corpus".into()));
    }
    let mut union: BTreeSet<&String> = BTreeSet::new();
    union.extend(hard);
    union.extend(sparse);
    union.extend(low_quality);
    if union.len() > total_samples {
        return Err(Error::Selection(format!(
            "{} selected ids exceed the corpus size {total_samples}",
            union.len()
        )));
    }

    let mut assignment = BTreeMap::new();
    for id in union {
        let replacement = match (hard.contains(id), low_quality.contains(id)) {
            (true, true) => Some(match policy {
                OverlapPolicy::PreferSimplify => TransformKind::Simplify,
                OverlapPolicy::PreferQualityRewrite => TransformKind::QualityRewrite,
            }),
            (true, false) => Some(TransformKind::Simplify),
            (false, true) => Some(TransformKind::QualityRewrite),
            (false, false) => None,
        };
        let extend = sparse.contains(id);
        assignment.insert(id.clone(), TransformAssignment { replacement, extend });
    }

    let union_fraction = assignment.len() as f64 / total_samples as f64;
    Ok(SelectionSets {
        hard: hard.clone(),
        sparse: sparse.clone(),
        low_quality: low_quality.clone(),
        assignment,
        union_fraction,
    })
}

/// Set sizes recorded in the selection report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionCounts {
    pub complexity: usize,
    pub sparse: usize,
    pub low_quality: usize,
    pub union: usize,
}

/// Pairwise and triple intersections between the three sets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapCounts {
    pub hard_and_sparse: usize,
    pub hard_and_low_quality: usize,
    pub sparse_and_low_quality: usize,
    pub all_three: usize,
}

/// Everything a reader needs to audit one iteration's selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub iteration: u32,
    pub stats: BTreeMap<String, SignalStats>,
    pub counts: SelectionCounts,
    pub overlaps: OverlapCounts,
    pub union_fraction: f64,
    pub complexity_ids: Vec<String>,
    pub sparse_ids: Vec<String>,
    pub low_quality_ids: Vec<String>,
}

/// Result of running all three selectors and resolving overlaps.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionOutcome {
    pub sets: SelectionSets,
    pub report: SelectionReport,
}

/// Runs the three selectors over a signal bundle and resolves the result
/// into per-sample assignments plus an auditable report.
pub fn select_all(
    iteration: u32,
    bundle: &SignalBundle,
    ms: MValues,
    policy: OverlapPolicy,
    total_samples: usize,
) -> Result<SelectionOutcome> {
    let complexity = select_complex(&bundle.losses, ms.complexity)?;
    let sparse = select_sparse(&bundle.diversity, ms.diversity)?;
    let low = select_low_quality(&bundle.quality, ms.quality)?;
    let sets = resolve_overlaps(&complexity.ids, &sparse.ids, &low.ids, total_samples, policy)?;

    let mut stats = BTreeMap::new();
    stats.insert("loss_pre".to_string(), complexity.pre);
    stats.insert("loss_post".to_string(), complexity.post);
    stats.insert("diversity".to_string(), sparse.stats);
    stats.insert("quality".to_string(), low.stats);

    let intersect = |a: &BTreeSet<String>, b: &BTreeSet<String>| a.intersection(b).count();
    let report = SelectionReport {
        iteration,
        stats,
        counts: SelectionCounts {
            complexity: complexity.ids.len(),
            sparse: sparse.ids.len(),
            low_quality: low.ids.len(),
            union: sets.assignment.len(),
        },
        overlaps: OverlapCounts {
            hard_and_sparse: intersect(&complexity.ids, &sparse.ids),
            hard_and_low_quality: intersect(&complexity.ids, &low.ids),
            sparse_and_low_quality: intersect(&sparse.ids, &low.ids),
            all_three: complexity
                .ids
                .iter()
                .filter(|id| sparse.ids.contains(*id) && low.ids.contains(*id))
                .count(),
        },
        union_fraction: sets.union_fraction,
        complexity_ids: complexity.ids.iter().cloned().collect(),
        sparse_ids: sparse.ids.iter().cloned().collect(),
        low_quality_ids: low.ids.iter().cloned().collect(),
    };
    Ok(SelectionOutcome { sets, report })
}

/// Writes a selection report as pretty-printed JSON.
pub fn write_selection_report(path: &std::path::Path, report: &SelectionReport) -> Result<()> {
    let mut body = serde_json::to_string_pretty(report)
        .map_err(|err| Error::Selection(format!("selection report does not serialize: {err}")))?;
    body.push('\n');
    crate::fsio::write_atomic(path, body.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn threshold_matches_frozen_examples() {
        assert_eq!(dynamic_threshold(&[2.0, 4.0, 6.0], 0.0).unwrap(), 4.0);
        assert_eq!(dynamic_threshold(&[1.0, 1.0, 1.0, 1.0], 2.5).unwrap(), 1.0);
        let expected = 3.0 - 2.0f64.sqrt();
        assert!((dynamic_threshold(&[1.0, 2.0, 3.0, 4.0, 5.0], -1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn threshold_rejects_empty_and_non_finite_input() {
        assert!(dynamic_threshold(&[], 1.0).is_err());
        assert!(dynamic_threshold(&[1.0, f64::NAN], 1.0).is_err());
        assert!(dynamic_threshold(&[1.0], f64::INFINITY).is_err());
    }

    fn loss(id: &str, pre: f64, post: f64) -> (String, LossSignal) {
        (id.to_string(), LossSignal { id: id.to_string(), loss_pre: pre, loss_post: post })
    }

    #[test]
    fn complexity_requires_both_losses_above_their_cuts() {
        // Pre distribution: mean 2, sd 0 over {2}, so use spread values.
        let losses: BTreeMap<_, _> = [
            loss("a", 1.0, 1.0),
            loss("b", 2.0, 2.0),
            loss("c", 9.0, 1.5),
            loss("d", 9.0, 9.0),
        ]
        .into_iter()
        .collect();
        let selection = select_complex(&losses, 0.0).unwrap();
        // Pre mean 5.25, post mean 3.375: only "d" clears both strictly.
        assert_eq!(selection.ids.iter().collect::<Vec<_>>(), ["d"]);
        assert_eq!(selection.pre.threshold, selection.pre.mean);
        assert_eq!(selection.post.threshold, selection.post.mean);
    }

    #[test]
    fn values_exactly_at_the_cut_are_not_selected() {
        let losses: BTreeMap<_, _> =
            [loss("a", 1.0, 1.0), loss("b", 3.0, 3.0), loss("c", 2.0, 2.0)].into_iter().collect();
        // Means are exactly 2; "c" sits on the cut and must stay out.
        let selection = select_complex(&losses, 0.0).unwrap();
        assert_eq!(selection.ids.iter().collect::<Vec<_>>(), ["b"]);

        // 0.25 + 0.75 + 0.5 sums exactly, so the mean is exactly 0.5 and "c"
        // sits precisely on the cut.
        let diversity: BTreeMap<_, _> = [
            ("a".to_string(), DiversitySignal { id: "a".into(), neighbor_ids: vec![], score: 0.25 }),
            ("b".to_string(), DiversitySignal { id: "b".into(), neighbor_ids: vec![], score: 0.75 }),
            ("c".to_string(), DiversitySignal { id: "c".into(), neighbor_ids: vec![], score: 0.5 }),
        ]
        .into_iter()
        .collect();
        let selection = select_sparse(&diversity, 0.0).unwrap();
        assert_eq!(selection.ids.iter().collect::<Vec<_>>(), ["a"]);
    }

    #[test]
    fn low_quality_selects_strictly_below_the_cut() {
        let quality: BTreeMap<_, _> = [
            ("a".to_string(), QualitySignal::new("a", [2.0; 6]).unwrap()),
            ("b".to_string(), QualitySignal::new("b", [8.0; 6]).unwrap()),
            ("c".to_string(), QualitySignal::new("c", [8.0; 6]).unwrap()),
        ]
        .into_iter()
        .collect();
        let selection = select_low_quality(&quality, -1.0).unwrap();
        assert_eq!(selection.ids.iter().collect::<Vec<_>>(), ["a"]);
        assert_eq!(selection.stats.n, 3);
    }

    fn ids(names: &[&str]) -> BTreeSet<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn disjoint_sets_add_up_in_the_union_fraction() {
        let sets = resolve_overlaps(
            &ids(&["h1", "h2"]),
            &ids(&["s1", "s2", "s3"]),
            &ids(&["q1", "q2", "q3", "q4"]),
            100,
            OverlapPolicy::default(),
        )
        .unwrap();
        assert_eq!(sets.assignment.len(), 9);
        assert_eq!(sets.union_fraction, 0.09);
        assert_eq!(sets.assignment["h1"].replacement, Some(TransformKind::Simplify));
        assert!(!sets.assignment["h1"].extend);
        assert_eq!(sets.assignment["s1"].replacement, None);
        assert!(sets.assignment["s1"].extend);
        assert_eq!(sets.assignment["q1"].replacement, Some(TransformKind::QualityRewrite));
    }

    #[test]
    fn overlap_policy_decides_double_flagged_samples() {
        let hard = ids(&["x", "h"]);
        let low = ids(&["x", "q"]);
        let sparse = ids(&["x", "s"]);

        let default_sets = resolve_overlaps(&hard, &sparse, &low, 10, OverlapPolicy::PreferSimplify).unwrap();
        assert_eq!(default_sets.assignment["x"].replacement, Some(TransformKind::Simplify));
        assert!(default_sets.assignment["x"].extend);

        let flipped =
            resolve_overlaps(&hard, &sparse, &low, 10, OverlapPolicy::PreferQualityRewrite).unwrap();
        assert_eq!(flipped.assignment["x"].replacement, Some(TransformKind::QualityRewrite));
        // Union covers x, h, q, s.
        assert_eq!(flipped.assignment.len(), 4);
        assert_eq!(flipped.union_fraction, 0.4);
    }

    #[test]
    fn assignment_keys_equal_the_union_of_the_three_sets() {
        let hard = ids(&["a", "b"]);
        let sparse = ids(&["b", "c"]);
        let low = ids(&["c", "d"]);
        let sets = resolve_overlaps(&hard, &sparse, &low, 50, OverlapPolicy::default()).unwrap();
        let expected: BTreeSet<String> = ids(&["a", "b", "c", "d"]);
        let keys: BTreeSet<String> = sets.assignment.keys().cloned().collect();
        assert_eq!(keys, expected);
        for (id, assignment) in &sets.assignment {
            assert!(
                assignment.replacement.is_some() || assignment.extend,
                "{id} selected but assigned nothing"
            );
        }
    }

    #[test]
    fn selection_over_an_empty_corpus_is_an_error() {
        assert!(resolve_overlaps(&ids(&[]), &ids(&[]), &ids(&[]), 0, OverlapPolicy::default()).is_err());
        assert!(resolve_overlaps(&ids(&["a", "b"]), &ids(&[]), &ids(&[]), 1, OverlapPolicy::default())
            .is_err());
    }

    #[test]
    fn select_all_produces_consistent_counts_and_stats_keys() {
        let mut bundle = SignalBundle::default();
        for (i, (pre, post)) in [(5.0, 4.0), (1.0, 1.0), (9.0, 8.0), (2.0, 2.0)].iter().enumerate() {
            let id = format!("s{i}");
            bundle.losses.insert(id.clone(), LossSignal { id, loss_pre: *pre, loss_post: *post });
        }
        for (i, score) in [0.9, 0.8, 0.1, 0.85].iter().enumerate() {
            let id = format!("s{i}");
            bundle
                .diversity
                .insert(id.clone(), DiversitySignal { id, neighbor_ids: vec![], score: *score });
        }
        for (i, q) in [8.0, 2.0, 8.0, 8.0].iter().enumerate() {
            let id = format!("s{i}");
            bundle.quality.insert(id.clone(), QualitySignal::new(id.clone(), [*q; 6]).unwrap());
        }

        let outcome = select_all(1, &bundle, MValues::default(), OverlapPolicy::default(), 4).unwrap();
        assert_eq!(outcome.report.iteration, 1);
        assert_eq!(
            outcome.report.stats.keys().collect::<Vec<_>>(),
            ["diversity", "loss_post", "loss_pre", "quality"]
        );
        assert_eq!(outcome.report.counts.union, outcome.sets.assignment.len());
        assert_eq!(outcome.report.complexity_ids, outcome.sets.hard.iter().cloned().collect::<Vec<_>>());
        assert_eq!(outcome.report.union_fraction, outcome.sets.union_fraction);
    }

    #[test]
    fn selection_report_serializes_with_stable_field_names() {
        let report = SelectionReport {
            iteration: 2,
            stats: BTreeMap::new(),
            counts: SelectionCounts { complexity: 1, sparse: 2, low_quality: 3, union: 5 },
            overlaps: OverlapCounts {
                hard_and_sparse: 0,
                hard_and_low_quality: 1,
                sparse_and_low_quality: 0,
                all_three: 0,
            },
            union_fraction: 0.05,
            complexity_ids: vec!["a".into()],
            sparse_ids: vec![],
            low_quality_ids: vec![],
        };
        let json = serde_json::to_string(&report).unwrap();
        for field in ["union_fraction", "low_quality", "hard_and_sparse", "complexity_ids"] {
            assert!(json.contains(field), "missing {field} in {json}");
        }
        let back: SelectionReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    fn value_strategy() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0e6..1.0e6f64, 2..120)
    }

    proptest! {
        #[test]
        fn tau_at_zero_m_is_exactly_the_mean(values in value_strategy()) {
            let stats = signal_stats(&values, 0.0).unwrap();
            prop_assert_eq!(stats.threshold, stats.mean);
        }

        #[test]
        fn tau_is_affine_in_m(values in value_strategy(), m1 in -4.0..4.0f64, m2 in -4.0..4.0f64) {
            let stats = signal_stats(&values, 0.0).unwrap();
            let t1 = dynamic_threshold(&values, m1).unwrap();
            let t2 = dynamic_threshold(&values, m2).unwrap();
            let mid = dynamic_threshold(&values, (m1 + m2) / 2.0).unwrap();
            let lhs = t1 + t2;
            let rhs = 2.0 * mid;
            // The identity cancels the mean term, so measure against the
            // magnitude of the terms combined, not the result.
            let scale = (stats.mean.abs() + stats.std_dev * m1.abs().max(m2.abs())).max(1.0);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale, "{lhs} vs {rhs}");
        }

        #[test]
        fn complexity_selection_shrinks_as_m_grows(
            pairs in proptest::collection::vec((0.0..50.0f64, 0.0..50.0f64), 3..80),
            m_lo in -2.0..2.0f64,
            delta in 0.0..2.0f64,
        ) {
            let losses: BTreeMap<String, LossSignal> = pairs
                .iter()
                .enumerate()
                .map(|(i, (pre, post))| {
                    let id = format!("s{i:03}");
                    (id.clone(), LossSignal { id, loss_pre: *pre, loss_post: *post })
                })
                .collect();
            let loose = select_complex(&losses, m_lo).unwrap();
            let tight = select_complex(&losses, m_lo + delta).unwrap();
            prop_assert!(tight.ids.is_subset(&loose.ids));
        }

        #[test]
        fn sparse_selection_grows_as_m_grows(
            scores in proptest::collection::vec(-1.0..1.0f64, 3..80),
            m_lo in -2.0..2.0f64,
            delta in 0.0..2.0f64,
        ) {
            let diversity: BTreeMap<String, DiversitySignal> = scores
                .iter()
                .enumerate()
                .map(|(i, score)| {
                    let id = format!("s{i:03}");
                    (id.clone(), DiversitySignal { id, neighbor_ids: vec![], score: *score })
                })
                .collect();
            let narrow = select_sparse(&diversity, m_lo).unwrap();
            let wide = select_sparse(&diversity, m_lo + delta).unwrap();
            prop_assert!(narrow.ids.is_subset(&wide.ids));
        }

        #[test]
        fn thresholds_scale_with_the_data(values in value_strategy(), m in -3.0..3.0f64, c in 0.001..1000.0f64) {
            let base = dynamic_threshold(&values, m).unwrap();
            let scaled_values: Vec<f64> = values.iter().map(|v| v * c).collect();
            let scaled = dynamic_threshold(&scaled_values, m).unwrap();
            let expected = base * c;
            let tolerance = 1e-9 * expected.abs().max(1.0);
            prop_assert!((scaled - expected).abs() <= tolerance, "{scaled} vs {expected}");
        }

        #[test]
        fn union_fraction_is_an_exact_recount(
            hard_raw in proptest::collection::btree_set(0usize..60, 0..20),
            sparse_raw in proptest::collection::btree_set(0usize..60, 0..20),
            low_raw in proptest::collection::btree_set(0usize..60, 0..20),
        ) {
            let name = |i: &usize| format!("s{i:02}");
            let hard: BTreeSet<String> = hard_raw.iter().map(name).collect();
            let sparse: BTreeSet<String> = sparse_raw.iter().map(name).collect();
            let low: BTreeSet<String> = low_raw.iter().map(name).collect();
            let sets = resolve_overlaps(&hard, &sparse, &low, 60, OverlapPolicy::default()).unwrap();

            let mut union = hard.clone();
            union.extend(sparse.iter().cloned());
            union.extend(low.iter().cloned());
            prop_assert_eq!(sets.assignment.len(), union.len());
            prop_assert_eq!(sets.union_fraction, union.len() as f64 / 60.0);
            for id in sets.assignment.keys() {
                prop_assert!(union.contains(id));
            }
        }
    }
}
