//! Six-way quality rating of a sample by a judge model.
//!
//! Each sample is rated on three dimensions (factuality, clarity,
//! completeness), once for the prompt and once for the response, giving six
//! sub-scores on a 0 to 10 scale whose mean is the sample's quality signal.
//! The rating prompt wording is fixed; reply parsing takes the first decimal
//! number and insists it lies in range. A sample whose replies cannot be
//! parsed is reported as unscored rather than given a default, so downstream
//! statistics only ever see real ratings.

use std::sync::OnceLock;

use regex::Regex;

use crate::corpus::Sample;
use crate::error::{Error, Result};
use crate::gateway::{EndpointProfile, Gateway};

use super::QualitySignal;

/// Rated dimension of a prompt or response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dimension {
    Factuality,
    Clarity,
    Completeness,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::Factuality, Dimension::Clarity, Dimension::Completeness];

    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::Factuality => "factuality",
            Dimension::Clarity => "clarity",
            Dimension::Completeness => "completeness",
        }
    }
}

/// Which half of the sample a rating request is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JudgeAspect {
    Instruction,
    Response,
}

impl JudgeAspect {
    #[must_use]
    pub fn as_str(self) -> &'static str {
        match self {
            JudgeAspect::Instruction => "instruction",
            JudgeAspect::Response => "response",
        }
    }
}

fn explanation(aspect: JudgeAspect, dimension: Dimension) -> &'static str {
    match (aspect, dimension) {
        (JudgeAspect::Instruction, Dimension::Factuality) => {
            "whether the information provided in the prompt is accurate and based on reliable facts and data"
        }
        (JudgeAspect::Instruction, Dimension::Clarity) => {
            "whether the prompt is clear and understandable, and whether it uses concise language and structure"
        }
        (JudgeAspect::Instruction, Dimension::Completeness) => {
            "whether the prompt provides sufficient information and details"
        }
        (JudgeAspect::Response, Dimension::Factuality) => {
            "whether the information provided in the response is accurate and based on reliable facts and data"
        }
        (JudgeAspect::Response, Dimension::Clarity) => {
            "whether the response is clear and understandable, and whether it uses concise language and structure"
        }
        (JudgeAspect::Response, Dimension::Completeness) => {
            "whether the response provides sufficient information and details"
        }
    }
}

/// Rating request for the prompt half of a sample.
#[must_use]
pub fn build_instruction_judge_prompt(dimension: Dimension, prompt: &str) -> String {
    let d = dimension.as_str();
    let explanation = explanation(JudgeAspect::Instruction, dimension);
    format!(
        "We would like to request your feedback on the {d} of the prompt displayed below.\n\n\
         Prompt:\n{prompt}\n\n\
         Please rate according to the {d} of the prompt to evaluate {explanation}. \
         Each prompt is scored on a scale of 0 to 10, with higher scores indicating higher {d}. \
         Try to avoid scoring a full 10. \
         Give your rating number first, then give a explanation of your rating."
    )
}

/// Rating request for the response half of a sample.
#[must_use]
pub fn build_response_judge_prompt(dimension: Dimension, prompt: &str, response: &str) -> String {
    let d = dimension.as_str();
    let explanation = explanation(JudgeAspect::Response, dimension);
    format!(
        "We would like to request your feedback on the {d} of the prompt displayed below.\n\n\
         Prompt:\n{prompt}\n\n\
         Response:\n{response}\n\n\
         Please rate according to the {d} of the response to evaluate {explanation}. \
         Each response is scored on a scale of 0 to 10, with higher scores indicating higher {d}. \
         Try to avoid scoring a full 10. \
         Give your rating number first, then give a explanation of your rating."
    )
}

fn rating_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").expect("rating pattern compiles"))
}

/// Extracts the rating from a judge reply: the first decimal number, which
/// must lie in `[0, 10]`.
pub fn parse_judge_reply(reply: &str) -> Result<f64> {
    let found = rating_pattern().find(reply).ok_or_else(|| {
        Error::Signal(format!("judge reply contains no rating: {:?}", excerpt(reply)))
    })?;
    let value: f64 = found
        .as_str()
        .parse()
        .map_err(|_| Error::Signal(format!("judge rating {:?} does not parse", found.as_str())))?;
    if !(0.0..=10.0).contains(&value) {
        return Err(Error::Signal(format!(
            "judge rating {value} is outside the 0 to 10 scale: {:?}",
            excerpt(reply)
        )));
    }
    Ok(value)
}

fn excerpt(text: &str) -> String {
    let trimmed = text.trim();
    let mut end = trimmed.len().min(80);
    while !trimmed.is_char_boundary(end) {
        end -= 1;
    }
    if end < trimmed.len() {
        format!("{}...", &trimmed[..end])
    } else {
        trimmed.to_string()
    }
}

/// Collects all six sub-scores for one sample.
///
/// Sub-scores come back in a fixed order: instruction factuality, clarity,
/// completeness, then response factuality, clarity, completeness. A reply
/// that fails to parse is retried once under a fresh seed tag; if it fails
/// again the sample is reported as unscored (`Ok(None)`). Gateway failures
/// propagate as errors, since they indicate the endpoint rather than the
/// sample.
pub fn judge_sample(
    gateway: &Gateway,
    profile: &EndpointProfile,
    sample: &Sample,
    seed_base: &str,
) -> Result<Option<QualitySignal>> {
    let prompt_text = sample.prompt_text();
    let mut sub_scores = [0.0f64; 6];
    let mut slot = 0;
    for aspect in [JudgeAspect::Instruction, JudgeAspect::Response] {
        for dimension in Dimension::ALL {
            let request = match aspect {
                JudgeAspect::Instruction => build_instruction_judge_prompt(dimension, &prompt_text),
                JudgeAspect::Response => {
                    build_response_judge_prompt(dimension, &prompt_text, &sample.response)
                }
            };
            let tag = format!("{seed_base}/judge/{}/{}", aspect.as_str(), dimension.as_str());
            match score_once(gateway, profile, &request, &tag)? {
                Some(score) => sub_scores[slot] = score,
                None => {
                    log::warn!(
                        "sample {} unscored: {} {} rating did not parse after a retry",
                        sample.id,
                        aspect.as_str(),
                        dimension.as_str()
                    );
                    return Ok(None);
                }
            }
            slot += 1;
        }
    }
    QualitySignal::new(sample.id.clone(), sub_scores).map(Some)
}

fn score_once(
    gateway: &Gateway,
    profile: &EndpointProfile,
    request: &str,
    tag: &str,
) -> Result<Option<f64>> {
    let reply = gateway.chat(profile, request, tag)?;
    match parse_judge_reply(&reply.text) {
        Ok(score) => Ok(Some(score)),
        Err(first_err) => {
            log::debug!("rating parse failed, retrying once: {first_err}");
            let retry_tag = format!("{tag}/r1");
            let reply = gateway.chat(profile, request, &retry_tag)?;
            match parse_judge_reply(&reply.text) {
                Ok(score) => Ok(Some(score)),
                Err(_) => Ok(None),
            }
        }
    }
}
