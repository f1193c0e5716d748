//! Prompt-driven regeneration of selected samples.
//!
//! Selected samples are rewritten through fixed rewrite prompts: a
//! step-by-step simplification for overly hard samples, a step-by-step
//! quality rewrite for poorly rated ones, and a synthesis prompt that derives
//! one brand-new sample from a sparse seed and its two nearest neighbors.
//! Replies are parsed against line-anchored markers, responses are
//! regenerated for the new instructions, and every attempt is recorded in an
//! audit log whether it succeeded or not. One sample failing to rewrite never
//! aborts the batch; it simply keeps its current form.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{derived_id, Dataset, Lineage, Sample, TransformKind};
use crate::error::{Error, Result};
use crate::gateway::{EndpointProfile, Gateway};
use crate::selector::SelectionSets;
use crate::signals::DiversitySignal;

const SIMPLIFY_TEMPLATE: &str = "You are a powerful LLM with the task to simplify the given #Prompt# for weaker open source LLMs (e.g. LLaMA, Qwen). Since the original #Prompt# is hard for them to handle, you need to rewrite it into a simpler version that these weaker LLMs can handle or learn from more easily. Follow the steps below carefully.\n\nStep 1: Read the #Prompt# in detail. Suggest possible methods to make this prompt easier for weaker LLMs to handle or learn from, then list these methods as your #Methods List#.\n\nStep 2: Create a comprehensive plan to simplify the #Prompt# using several methods from your #Methods List#. Present your plan in a clear, step-by-step format.\n\nStep 3: Execute your plan to rewrite the #Prompt# into a simpler, more learnable version. You can change scenarios, contexts, or settings as needed. Your goal is to ensure that weaker LLMs learn from this prompt, rather than just memorizing an answer.\n\nStep 4: Finally, review your rewritten version for any problems. Present only the #Final Rewritten Prompt#, without any additional explanation.\n\nPlease respond strictly in the following format:\n\nStep 1 #Methods List#:\n\nStep 2 #Plan#:\n\nStep 3 #Rewritten Prompt#:\n\nStep 4 #Final Rewritten Prompt#:";

const QUALITY_TEMPLATE: &str = "You are a powerful LLM with the task to rewrite the given #Prompt# for weaker open source LLMs (e.g., LLaMA, Qwen). Since the original #Prompt# is of poor quality for them to learn, you need to rewrite it into a higher quality version that these weaker models can better learn from. Follow the steps below carefully.\n\nStep 1: Read the #Prompt# in detail. Identify reasons for the poor quality of the #Prompt#. Suggest possible methods to improve the quality of the #Prompt#, then list these methods as your #Methods List#.\n\nStep 2: Create a comprehensive plan to rewrite the #Prompt# using several methods from your #Methods List#. Present your plan in a clear, step-by-step format.\n\nStep 3: Execute your plan to rewrite the #Prompt# into a higher quality version.\n\nStep 4: Finally, review your rewritten version for any problems. Present only the #Final Rewritten Prompt#, without any additional explanation.\n\nPlease respond strictly in the following format:\n\nStep 1 #Methods List#:\n\nStep 2 #Plan#:\n\nStep 3 #Rewritten Prompt#:\n\nStep 4 #Final Rewritten Prompt#:";

const EXTENSION_TEMPLATE: &str = "You are a powerful LLM with the task to create brand new prompts for weaker open source LLMs (e.g. LLaMA, Qwen). You need to create a brand new complete prompt for them to learn in order to improve their knowledge and skills. Follow the steps below carefully.\nUse #Hint Prompt 1# and #Hint Prompt 2# as guiding examples. Then read the #Core Prompt# in detail. Be inspired to suggest additional new prompts, and ultimately create only one completely original and diverse #New Prompt#.\nPlease respond strictly in the following format:\n#New Prompt#:";

const FOUR_STEP_MARKER: &str = "Step 4 #Final Rewritten Prompt#:";
const NEW_PROMPT_MARKER: &str = "#New Prompt#:";

/// Rewrite request for an overly hard sample. The sample's full prompt
/// (instruction plus context) is appended under a `#Prompt#` block.
#[must_use]
pub fn build_simplify_prompt(sample: &Sample) -> String {
    format!("{SIMPLIFY_TEMPLATE}\n\n#Prompt#:\n{}", sample.prompt_text())
}

/// Rewrite request for a low-quality sample.
#[must_use]
pub fn build_quality_prompt(sample: &Sample) -> String {
    format!("{QUALITY_TEMPLATE}\n\n#Prompt#:\n{}", sample.prompt_text())
}

/// Synthesis request for one brand-new prompt, guided by exactly two hint
/// prompts (the seed's nearest neighbors) and the seed itself as the core.
pub fn build_extension_prompt(core: &str, hints: &[&str]) -> Result<String> {
    if hints.len() != 2 {
        return Err(Error::Refinement(format!(
            "extension prompts take exactly 2 hints, got {}",
            hints.len()
        )));
    }
    Ok(format!(
        "{EXTENSION_TEMPLATE}\n\n#Hint Prompt 1#:\n{}\n\n#Hint Prompt 2#:\n{}\n\n#Core Prompt#:\n{core}",
        hints[0], hints[1]
    ))
}

/// Content following a line that starts with `marker`: the remainder of that
/// line plus everything after it. Markers inside a line do not count, so
/// sample text that merely mentions a marker cannot hijack parsing.
fn content_after_marker(reply: &str, marker: &str, take_last: bool) -> Option<String> {
    let mut found: Option<usize> = None;
    let mut offset = 0;
    for line in reply.split_inclusive('\n') {
        if line.trim_end_matches(['\r', '\n']).starts_with(marker) {
            found = Some(offset + marker.len());
            if !take_last {
                break;
            }
        }
        offset += line.len();
    }
    found.map(|start| reply[start..].trim().to_string())
}

/// Extracts the rewritten prompt from a four-step rewrite reply: everything
/// after the last `Step 4 #Final Rewritten Prompt#:` marker line.
pub fn parse_four_step_reply(reply: &str) -> Result<String> {
    let content = content_after_marker(reply, FOUR_STEP_MARKER, true)
        .ok_or_else(|| Error::Refinement(format!("reply has no {FOUR_STEP_MARKER:?} marker line")))?;
    if content.is_empty() {
        return Err(Error::Refinement(format!("reply has nothing after {FOUR_STEP_MARKER:?}")));
    }
    Ok(content)
}

/// Extracts the synthesized prompt from an extension reply: everything after
/// the first `#New Prompt#:` marker line.
pub fn parse_new_prompt_reply(reply: &str) -> Result<String> {
    let content = content_after_marker(reply, NEW_PROMPT_MARKER, false)
        .ok_or_else(|| Error::Refinement(format!("reply has no {NEW_PROMPT_MARKER:?} marker line")))?;
    if content.is_empty() {
        return Err(Error::Refinement(format!("reply has nothing after {NEW_PROMPT_MARKER:?}")));
    }
    Ok(content)
}

/// Generates a response for a rewritten or synthesized instruction.
///
/// The instruction (plus context, when present) is sent as-is; an empty
/// generation is retried once under a fresh seed tag before giving up.
pub fn regenerate_response(
    gateway: &Gateway,
    profile: &EndpointProfile,
    instruction: &str,
    context: Option<&str>,
    seed_tag: &str,
) -> Result<String> {
    let prompt = match context {
        Some(context) => format!("{instruction}\n{context}"),
        None => instruction.to_string(),
    };
    for attempt in 0..2 {
        let tag = format!("{seed_tag}/a{attempt}");
        let reply = gateway.chat(profile, &prompt, &tag)?;
        let text = reply.text.trim();
        if !text.is_empty() {
            return Ok(text.to_string());
        }
        log::debug!("empty generation for tag {tag}, retrying");
    }
    Err(Error::Refinement(format!(
        "response generation returned empty text twice for instruction {:?}",
        truncate(instruction)
    )))
}

fn truncate(text: &str) -> String {
    let trimmed = text.trim();
    let mut end = trimmed.len().min(60);
    while !trimmed.is_char_boundary(end) {
        end -= 1;
    }
    if end < trimmed.len() {
        format!("{}...", &trimmed[..end])
    } else {
        trimmed.to_string()
    }
}

/// Terminal state of one refinement attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinementStatus {
    /// A new sample was produced.
    Ok,
    /// No reply yielded a parseable rewritten prompt.
    ParseFailed,
    /// The prompt parsed but response generation returned nothing.
    GenerationFailed,
    /// The item was not usable: the rewrite reproduced the original
    /// instruction, or an extension seed lacked two neighbors.
    Skipped,
}

/// Audit record for one attempted transform of one seed sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementResult {
    pub seed_id: String,
    pub transform_kind: TransformKind,
    pub prompt_sent: String,
    pub raw_reply: String,
    pub parsed_instruction: Option<String>,
    /// Response attached to the produced sample. Regenerated by default;
    /// carried over from the seed when regeneration is disabled.
    pub regenerated_response: Option<String>,
    pub status: RefinementStatus,
    /// Number of rewrite replies requested before parsing succeeded or the
    /// retry budget ran out.
    pub attempts: u32,
}

/// Knobs for a refinement batch.
#[derive(Debug, Clone)]
pub struct RefineOptions {
    /// Extra rewrite attempts after the first, per item.
    pub retries: u32,
    /// Prefix for seed tags, typically `{run_id}/iter{t}`.
    pub seed_base: String,
    /// When false, replacements keep the seed's response and context instead
    /// of generating new ones. Extensions always generate a response.
    pub regenerate_responses: bool,
}

impl Default for RefineOptions {
    fn default() -> Self {
        RefineOptions { retries: 1, seed_base: "refine".into(), regenerate_responses: true }
    }
}

/// Product of a refinement batch: in-place replacements keyed by the seed id
/// they replace, brand-new samples to append, and the full audit trail in
/// deterministic (seed id, transform) order.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineOutcome {
    pub replacements: BTreeMap<String, Sample>,
    pub additions: Vec<Sample>,
    pub results: Vec<RefinementResult>,
}

struct WorkItem<'a> {
    seed: &'a Sample,
    kind: TransformKind,
}

struct ItemOutcome {
    result: RefinementResult,
    sample: Option<Sample>,
}

/// Runs every assigned transform against the generation endpoint.
///
/// Items are processed in ascending seed-id order with the replacement
/// transform before the extension for seeds that have both; results come
/// back in that same order regardless of scheduling. Parse and generation
/// failures are contained to their item. `diversity` supplies each extension
/// seed's neighbor ids, which are resolved to hint instructions against the
/// current dataset.
pub fn refine_batch(
    gateway: &Gateway,
    synthesis: &EndpointProfile,
    sets: &SelectionSets,
    dataset: &Dataset,
    diversity: &BTreeMap<String, DiversitySignal>,
    options: &RefineOptions,
) -> Result<RefineOutcome> {
    let index = dataset.id_index();
    let next_iteration = dataset.iteration + 1;

    let mut items: Vec<WorkItem> = Vec::new();
    for (id, assignment) in &sets.assignment {
        let position = *index
            .get(id.as_str())
            .ok_or_else(|| Error::Refinement(format!("selected id {id:?} is not in the dataset")))?;
        let seed = &dataset.samples[position];
        if let Some(kind) = assignment.replacement {
            items.push(WorkItem { seed, kind });
        }
        if assignment.extend {
            items.push(WorkItem { seed, kind: TransformKind::Extend });
        }
    }

    let outcomes: Vec<ItemOutcome> = items
        .par_iter()
        .map(|item| run_item(gateway, synthesis, item, dataset, &index, diversity, options, next_iteration))
        .collect::<Result<Vec<_>>>()?;

    let mut replacements = BTreeMap::new();
    let mut additions = Vec::new();
    let mut results = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        if let Some(sample) = outcome.sample {
            if outcome.result.transform_kind == TransformKind::Extend {
                additions.push(sample);
            } else {
                replacements.insert(outcome.result.seed_id.clone(), sample);
            }
        }
        results.push(outcome.result);
    }
    Ok(RefineOutcome { replacements, additions, results })
}

#[allow(clippy::too_many_arguments)]
fn run_item(
    gateway: &Gateway,
    synthesis: &EndpointProfile,
    item: &WorkItem,
    dataset: &Dataset,
    index: &std::collections::HashMap<&str, usize>,
    diversity: &BTreeMap<String, DiversitySignal>,
    options: &RefineOptions,
    next_iteration: u32,
) -> Result<ItemOutcome> {
    let seed = item.seed;
    let kind = item.kind;
    let fail = |status, prompt: String, reply: String, parsed: Option<String>, attempts| ItemOutcome {
        result: RefinementResult {
            seed_id: seed.id.clone(),
            transform_kind: kind,
            prompt_sent: prompt,
            raw_reply: reply,
            parsed_instruction: parsed,
            regenerated_response: None,
            status,
            attempts,
        },
        sample: None,
    };

    let prompt = match kind {
        TransformKind::Simplify => build_simplify_prompt(seed),
        TransformKind::QualityRewrite => build_quality_prompt(seed),
        TransformKind::Extend => {
            let row = diversity.get(&seed.id).ok_or_else(|| {
                Error::Refinement(format!("extend-flagged sample {:?} has no diversity row", seed.id))
            })?;
            if row.neighbor_ids.len() < 2 {
                log::warn!(
                    "skipping extension of {}: only {} neighbors available",
                    seed.id,
                    row.neighbor_ids.len()
                );
                return Ok(fail(RefinementStatus::Skipped, String::new(), String::new(), None, 0));
            }
            let mut hints = Vec::with_capacity(2);
            for neighbor_id in row.neighbor_ids.iter().take(2) {
                let position = *index.get(neighbor_id.as_str()).ok_or_else(|| {
                    Error::Refinement(format!(
                        "neighbor {neighbor_id:?} of {:?} is not in the dataset",
                        seed.id
                    ))
                })?;
                hints.push(dataset.samples[position].instruction.as_str());
            }
            build_extension_prompt(&seed.instruction, &hints)?
        }
    };

    let parse = |reply: &str| match kind {
        TransformKind::Extend => parse_new_prompt_reply(reply),
        _ => parse_four_step_reply(reply),
    };

    let total_attempts = options.retries + 1;
    let mut raw_reply = String::new();
    let mut parsed = None;
    let mut attempts = 0;
    for attempt in 0..total_attempts {
        let tag = format!("{}/{}/{}/a{attempt}", options.seed_base, kind.as_str(), seed.id);
        let reply = gateway.chat(synthesis, &prompt, &tag)?;
        raw_reply = reply.text;
        attempts = attempt + 1;
        match parse(&raw_reply) {
            Ok(instruction) => {
                parsed = Some(instruction);
                break;
            }
            Err(err) => log::debug!("rewrite parse failed for {} attempt {attempt}: {err}", seed.id),
        }
    }
    let Some(instruction) = parsed else {
        return Ok(fail(RefinementStatus::ParseFailed, prompt, raw_reply, None, attempts));
    };

    if kind != TransformKind::Extend && instruction == seed.instruction {
        log::warn!("skipping {} rewrite of {}: reply reproduced the original", kind.as_str(), seed.id);
        return Ok(fail(RefinementStatus::Skipped, prompt, raw_reply, Some(instruction), attempts));
    }

    let regenerate = options.regenerate_responses || kind == TransformKind::Extend;
    let (context, response) = if regenerate {
        let tag = format!("{}/regen/{}/{}", options.seed_base, kind.as_str(), seed.id);
        match regenerate_response(gateway, synthesis, &instruction, None, &tag) {
            Ok(response) => (None, response),
            Err(err) => {
                log::warn!("generation failed for {} {}: {err}", kind.as_str(), seed.id);
                return Ok(fail(
                    RefinementStatus::GenerationFailed,
                    prompt,
                    raw_reply,
                    Some(instruction),
                    attempts,
                ));
            }
        }
    } else {
        (seed.context.clone(), seed.response.clone())
    };

    let parent_id = seed.id.clone();
    let sample = Sample {
        id: derived_id(&parent_id, kind, next_iteration, &instruction, &response),
        instruction: instruction.clone(),
        context,
        response: response.clone(),
        lineage: Some(Lineage {
            parent_id,
            transform_kind: kind,
            created_in_iteration: next_iteration,
        }),
        origin_iteration: next_iteration,
    };
    Ok(ItemOutcome {
        result: RefinementResult {
            seed_id: seed.id.clone(),
            transform_kind: kind,
            prompt_sent: prompt,
            raw_reply,
            parsed_instruction: Some(instruction),
            regenerated_response: Some(response),
            status: RefinementStatus::Ok,
            attempts,
        },
        sample: Some(sample),
    })
}

/// Writes the audit trail as JSONL, one record per attempted transform.
pub fn write_refinement_log(path: &std::path::Path, results: &[RefinementResult]) -> Result<()> {
    let mut body = String::new();
    for result in results {
        body.push_str(
            &serde_json::to_string(result)
                .map_err(|err| Error::Refinement(format!("refinement record does not serialize: {err}")))?,
        );
        body.push('\n');
    }
    crate::fsio::write_atomic(path, body.as_bytes())
}
