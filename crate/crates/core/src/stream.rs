//! Per-model streaming state under the Offline and Online methods.
//!
//! Offline refits the model on all data seen so far. Online replaces the past
//! log-likelihood by its second-order expansion around the previous estimate:
//! with centre `b_prev` and accumulated information `J_prev`, batch `D` gives
//!
//! ```text
//! b   = argmax  l_D(beta) - 1/2 (beta - b_prev)^T J_prev (beta - b_prev)
//! J   = J_prev + I_D(b)
//! c   = c_prev - 1/2 (b - b_prev)^T J_prev (b - b_prev) + l_D(b)
//! ```
//!
//! where `c` stands in for the cumulative log-likelihood in the BIC.

use serde::{Deserialize, Serialize};

use crate::error::{BvsError, Result};
use crate::linalg::SymMatrix;
use crate::logistic::{fit_mle, fit_penalized, model_columns, Batch, FitOptions, FitResult};
use crate::model::ModelIndicator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MethodKind {
    Offline,
    Online,
}

impl MethodKind {
    pub fn label(&self) -> &'static str {
        match self {
            MethodKind::Offline => "Offline",
            MethodKind::Online => "Online",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFitState {
    pub model: ModelIndicator,
    pub beta_hat: Vec<f64>,
    /// Online: accumulated information. Offline: information of the cumulative fit.
    pub info_accum: SymMatrix,
    /// Online: surrogate cumulative log-likelihood. Offline: exact cumulative log-likelihood.
    pub loglik_proxy: f64,
    pub n_seen: usize,
    pub converged_all: bool,
    /// Number of fits in this stream that did not converge.
    pub nonconverged_fits: usize,
}

impl ModelFitState {
    fn record(&mut self, fit: &FitResult) {
        if !fit.converged {
            self.converged_all = false;
            self.nonconverged_fits += 1;
        }
    }
}

/// Plain MLE on the first batch; identical for both methods.
pub fn init_state(
    model: ModelIndicator,
    first_batch: &Batch,
    opts: &FitOptions,
) -> Result<ModelFitState> {
    let design = model_columns(first_batch, &model)?;
    let init = vec![0.0; design.dim()];
    let fit = fit_mle(&design, &init, opts)?;
    let mut state = ModelFitState {
        model,
        beta_hat: fit.beta_hat.clone(),
        info_accum: fit.observed_info.clone(),
        loglik_proxy: fit.loglik,
        n_seen: first_batch.n(),
        converged_all: true,
        nonconverged_fits: 0,
    };
    state.record(&fit);
    Ok(state)
}

/// Refit on all observations through the current batch.
pub fn offline_update(
    state: &ModelFitState,
    cumulative_data: &Batch,
    opts: &FitOptions,
) -> Result<ModelFitState> {
    if cumulative_data.n() <= state.n_seen {
        return Err(BvsError::InvalidParameter(format!(
            "cumulative data has {} rows, state already saw {}",
            cumulative_data.n(),
            state.n_seen
        )));
    }
    let design = model_columns(cumulative_data, &state.model)?;
    let fit = fit_mle(&design, &state.beta_hat, opts)?;
    let mut next = state.clone();
    next.beta_hat = fit.beta_hat.clone();
    next.info_accum = fit.observed_info.clone();
    next.loglik_proxy = fit.loglik;
    next.n_seen = cumulative_data.n();
    next.record(&fit);
    Ok(next)
}

/// Second-order update from the new batch alone.
pub fn online_update(
    state: &ModelFitState,
    new_batch: &Batch,
    opts: &FitOptions,
) -> Result<ModelFitState> {
    let design = model_columns(new_batch, &state.model)?;
    if design.dim() != state.beta_hat.len() {
        return Err(BvsError::DimensionMismatch {
            what: "state coefficient vector",
            expected: design.dim(),
            got: state.beta_hat.len(),
        });
    }
    let prev = &state.beta_hat;
    let fit = fit_penalized(&design, prev, &state.info_accum, prev, opts)?;
    let shift: Vec<f64> = fit.beta_hat.iter().zip(prev).map(|(a, b)| a - b).collect();
    let surrogate_drop = 0.5 * state.info_accum.quad_form(&shift);

    let mut next = state.clone();
    next.info_accum.add_assign(&fit.observed_info);
    next.loglik_proxy = state.loglik_proxy - surrogate_drop + fit.loglik;
    next.beta_hat = fit.beta_hat.clone();
    next.n_seen = state.n_seen + new_batch.n();
    next.record(&fit);
    Ok(next)
}

/// `loglik_proxy - (k + 1)/2 * log(n_seen)`.
pub fn log_marginal_bic(state: &ModelFitState) -> Result<f64> {
    if state.n_seen == 0 {
        return Err(BvsError::InvalidParameter("no observations seen".into()));
    }
    let dim = (state.model.size() + 1) as f64;
    Ok(state.loglik_proxy - 0.5 * dim * (state.n_seen as f64).ln())
}
