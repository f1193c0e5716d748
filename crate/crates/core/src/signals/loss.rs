//! Loss computation from token log-probabilities.

use crate::error::{Error, Result};

/// Mean negative log-likelihood over a response's tokens.
///
/// Input log-probabilities must be finite and non-positive; an empty token
/// sequence has no defined loss and is an error.
pub fn compute_loss(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::Signal("cannot compute a loss over zero tokens".into()));
    }
    for (i, lp) in token_logprobs.iter().enumerate() {
        if !lp.is_finite() || *lp > 0.0 {
            return Err(Error::Signal(format!(
                "token log-probability {i} is {lp}, expected a finite non-positive value"
            )));
        }
    }
    let sum: f64 = token_logprobs.iter().sum();
    Ok(-(sum / token_logprobs.len() as f64))
}
