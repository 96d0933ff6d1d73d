//! Posterior model probabilities, inclusion probabilities and model-averaged
//! coefficients over the enumerated model space.
//!
//! All per-model sequences are indexed by the model's bit-mask, so entry `m`
//! belongs to the model whose included predictors are the set bits of `m`.

use crate::error::{BvsError, Result};
use crate::model::model_count;
use crate::prior::PriorTable;
use crate::special::log_sum_exp;

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub prior_id: String,
    pub method_id: String,
    pub batch_index: usize,
    /// Normalised log posterior per model.
    pub log_post: Vec<f64>,
    pub pip: Vec<f64>,
    /// Intercept first.
    pub beta_bma: Vec<f64>,
}

fn check_len(what: &'static str, len: usize, p: usize) -> Result<()> {
    if len != model_count(p) {
        return Err(BvsError::DimensionMismatch {
            what,
            expected: model_count(p),
            got: len,
        });
    }
    Ok(())
}

pub fn posterior_model_probs(log_marginals: &[f64], prior: &PriorTable) -> Result<Vec<f64>> {
    let p = prior.p();
    check_len("log marginals", log_marginals.len(), p)?;
    if log_marginals
        .iter()
        .any(|v| v.is_nan() || *v == f64::INFINITY)
    {
        return Err(BvsError::NonFinite("log marginals"));
    }
    let joint: Vec<f64> = log_marginals
        .iter()
        .enumerate()
        .map(|(mask, lm)| prior.log_prior_mask(mask as u32) + lm)
        .collect();
    let norm = log_sum_exp(&joint);
    if norm == f64::NEG_INFINITY {
        return Err(BvsError::DegenerateWeights);
    }
    Ok(joint.into_iter().map(|v| v - norm).collect())
}

pub fn inclusion_probabilities(log_post: &[f64], p: usize) -> Result<Vec<f64>> {
    check_len("log posterior", log_post.len(), p)?;
    let mut pip = vec![0.0; p];
    for (mask, lp) in log_post.iter().enumerate() {
        let w = lp.exp();
        let mut bits = mask;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            pip[j] += w;
            bits &= bits - 1;
        }
    }
    for v in &mut pip {
        *v = v.clamp(0.0, 1.0);
    }
    Ok(pip)
}

/// Posterior-weighted coefficients; excluded predictors contribute zero.
/// `fits[m]` holds model `m`'s coefficients (intercept first, then included
/// predictors in ascending order).
pub fn bma_coefficients(log_post: &[f64], fits: &[Option<Vec<f64>>], p: usize) -> Result<Vec<f64>> {
    check_len("log posterior", log_post.len(), p)?;
    check_len("fits", fits.len(), p)?;
    let mut out = vec![0.0; p + 1];
    for (mask, (lp, fit)) in log_post.iter().zip(fits).enumerate() {
        let w = lp.exp();
        if w == 0.0 {
            continue;
        }
        let coefs = fit.as_ref().ok_or(BvsError::MissingFit(mask as u32))?;
        let k = (mask as u32).count_ones() as usize;
        if coefs.len() != k + 1 {
            return Err(BvsError::DimensionMismatch {
                what: "model coefficients",
                expected: k + 1,
                got: coefs.len(),
            });
        }
        out[0] += w * coefs[0];
        let mut bits = mask;
        let mut slot = 1;
        while bits != 0 {
            let j = bits.trailing_zeros() as usize;
            out[j + 1] += w * coefs[slot];
            slot += 1;
            bits &= bits - 1;
        }
    }
    Ok(out)
}

pub fn summarize(
    log_marginals: &[f64],
    prior: &PriorTable,
    fits: &[Option<Vec<f64>>],
    prior_id: &str,
    method_id: &str,
    batch_index: usize,
) -> Result<PosteriorSummary> {
    let p = prior.p();
    let log_post = posterior_model_probs(log_marginals, prior)?;
    let pip = inclusion_probabilities(&log_post, p)?;
    let beta_bma = bma_coefficients(&log_post, fits, p)?;
    Ok(PosteriorSummary {
        prior_id: prior_id.to_string(),
        method_id: method_id.to_string(),
        batch_index,
        log_post,
        pip,
        beta_bma,
    })
}
