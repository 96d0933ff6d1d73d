//! Simulation scenarios, replicate orchestration and RMSE metrics.
//!
//! A run enumerates every model in the space, streams each replicate's
//! batches through every model under each method, and at the evaluation
//! batches combines the BIC marginals with each prior. Marginals are computed
//! once per (model, method, batch) and shared by all priors.
//!
//! Work is split across models with rayon; results are collected in mask
//! order and every reduction runs sequentially afterwards, so the output does
//! not depend on the thread count.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bma::summarize;
use crate::error::{BvsError, Result};
use crate::logistic::{Batch, FitOptions};
use crate::model::{model_count, ModelIndicator};
use crate::prior::{build_prior_table, NamedPrior, PriorTable};
use crate::special::sigmoid;
use crate::stream::{
    init_state, log_marginal_bic, offline_update, online_update, MethodKind, ModelFitState,
};

/// Largest `p` accepted for full enumeration.
pub const MAX_ENUMERATED_P: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub p: usize,
    /// Intercept first.
    pub beta_true: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub covariate_sd: f64,
    pub replicates: usize,
    pub seed: u64,
    /// 1-based batch indices at which metrics are emitted.
    pub eval_batches: Vec<usize>,
    pub priors: Vec<NamedPrior>,
    pub methods: Vec<MethodKind>,
    #[serde(default)]
    pub fit: FitOptions,
}

fn default_name() -> String {
    "custom".to_string()
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(BvsError::Config(msg));
        if self.p == 0 || self.p > MAX_ENUMERATED_P {
            return bad(format!(
                "p must lie in 1..={MAX_ENUMERATED_P}, got {}",
                self.p
            ));
        }
        if self.beta_true.len() != self.p + 1 {
            return bad(format!(
                "beta_true needs p + 1 = {} entries, got {}",
                self.p + 1,
                self.beta_true.len()
            ));
        }
        if self.beta_true.iter().any(|b| !b.is_finite()) {
            return bad("beta_true must be finite".into());
        }
        if self.batch_sizes.is_empty() || self.batch_sizes.contains(&0) {
            return bad("batch_sizes must be non-empty with every size >= 1".into());
        }
        if !(self.covariate_sd.is_finite() && self.covariate_sd > 0.0) {
            return bad(format!(
                "covariate_sd must be > 0, got {}",
                self.covariate_sd
            ));
        }
        if self.replicates == 0 {
            return bad("replicates must be >= 1".into());
        }
        if self.eval_batches.is_empty() {
            return bad("eval_batches must not be empty".into());
        }
        let nb = self.batch_sizes.len();
        if let Some(b) = self.eval_batches.iter().find(|&&b| b == 0 || b > nb) {
            return bad(format!("eval batch {b} outside 1..={nb}"));
        }
        if self.priors.is_empty() {
            return bad("at least one prior is required".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        let distinct: BTreeSet<_> = self.methods.iter().map(|m| m.label()).collect();
        if distinct.len() != self.methods.len() {
            return bad("methods must not repeat".into());
        }
        self.prior_tables()
            .map_err(|e| BvsError::Config(format!("prior: {e}")))?;
        Ok(())
    }

    pub fn prior_tables(&self) -> Result<Vec<PriorTable>> {
        self.priors
            .iter()
            .map(|n| build_prior_table(&n.resolve(self.p), self.p))
            .collect()
    }

    /// Sorted, de-duplicated evaluation batches.
    pub fn eval_set(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.eval_batches.iter().copied().collect();
        set.into_iter().collect()
    }

    pub fn true_gamma(&self) -> Vec<f64> {
        self.beta_true[1..]
            .iter()
            .map(|&b| if b != 0.0 { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn total_n(&self) -> usize {
        self.batch_sizes.iter().sum()
    }
}

pub const BUILTIN_SCENARIOS: [&str; 4] = ["sparse10", "nonsparse10", "sparse15", "nonsparse15"];

pub fn builtin_scenario(name: &str) -> Result<ScenarioConfig> {
    let (p, slopes, first): (usize, Vec<f64>, usize) = match name {
        "sparse10" => (10, vec![0.3, -0.4], 50),
        "nonsparse10" => (10, vec![0.2, 0.2, 0.2, 0.2, -0.2, -0.2, -0.2], 50),
        "sparse15" => (15, vec![0.3, 0.4], 100),
        "nonsparse15" => (15, vec![0.2; 7], 100),
        other => {
            return Err(BvsError::Config(format!(
                "unknown scenario '{other}' (expected one of {})",
                BUILTIN_SCENARIOS.join(", ")
            )))
        }
    };
    let mut beta_true = vec![0.0; p + 1];
    beta_true[0] = 0.2;
    beta_true[1..=slopes.len()].copy_from_slice(&slopes);
    let mut batch_sizes = vec![first];
    batch_sizes.extend(std::iter::repeat_n(10, 20));
    Ok(ScenarioConfig {
        name: name.to_string(),
        p,
        beta_true,
        batch_sizes,
        covariate_sd: 3.0,
        replicates: 25,
        seed: 1,
        eval_batches: vec![11, 21],
        priors: NamedPrior::comparison_set(crate::prior::DEFAULT_THETA),
        methods: vec![MethodKind::Offline, MethodKind::Online],
        fit: FitOptions::default(),
    })
}

/// Simulated batches for one replicate. The generator is ChaCha8 seeded with
/// `config.seed` on stream `replicate`, so each replicate is reproducible on
/// its own.
pub fn generate_stream(config: &ScenarioConfig, replicate: usize) -> Result<Vec<Batch>> {
    if replicate >= config.replicates {
        return Err(BvsError::OutOfRange {
            what: "replicate",
            value: replicate,
            max: config.replicates.saturating_sub(1),
        });
    }
    let p = config.p;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(replicate as u64);
    let normal = Normal::new(0.0, config.covariate_sd)
        .map_err(|e| BvsError::Config(format!("covariate distribution: {e}")))?;
    config
        .batch_sizes
        .iter()
        .map(|&n| {
            let mut x = Vec::with_capacity(n * (p + 1));
            let mut y = Vec::with_capacity(n);
            for _ in 0..n {
                x.push(1.0);
                let mut eta = config.beta_true[0];
                for j in 1..=p {
                    let v = normal.sample(&mut rng);
                    eta += v * config.beta_true[j];
                    x.push(v);
                }
                let u: f64 = rng.random();
                y.push(if u < sigmoid(eta) { 1.0 } else { 0.0 });
            }
            Batch::new(x, y, p)
        })
        .collect()
}

fn rmse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(BvsError::DimensionMismatch {
            what: "rmse operands",
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.is_empty() {
        return Err(BvsError::InvalidParameter("rmse of empty vectors".into()));
    }
    let ss: f64 = a.iter().zip(b).map(|(u, v)| (u - v).powi(2)).sum();
    Ok((ss / a.len() as f64).sqrt())
}

/// Root mean squared error over all `p + 1` coefficients.
pub fn rmse_beta(estimate: &[f64], truth: &[f64]) -> Result<f64> {
    rmse(estimate, truth)
}

/// Root mean squared difference between inclusion probabilities and the true 0/1 model.
pub fn rmse_gamma(pip: &[f64], true_gamma: &[f64]) -> Result<f64> {
    rmse(pip, true_gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub replicate: usize,
    pub batch: usize,
    pub method: MethodKind,
    pub prior: String,
    pub rmse_beta: f64,
    pub rmse_gamma: f64,
    pub any_nonconverged: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FailureCounts {
    /// Individual fits that hit the iteration limit or stalled, by method label.
    pub nonconverged_fits: Vec<(String, usize)>,
    /// Model streams dropped because a fit produced non-finite values.
    pub failed_streams: usize,
    /// Replicates with at least one non-converged fit.
    pub replicates_with_nonconvergence: usize,
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub records: Vec<MetricsRecord>,
    pub failures: FailureCounts,
}

/// What one model contributes at one (evaluation batch, method).
#[derive(Debug, Clone)]
struct Snapshot {
    log_marginal: f64,
    beta: Vec<f64>,
    nonconverged: bool,
}

#[derive(Debug)]
struct ModelTrace {
    /// Indexed `[eval_idx * n_methods + method_idx]`; `None` when the stream failed.
    snapshots: Option<Vec<Snapshot>>,
    nonconverged_fits: Vec<usize>,
}

fn snapshot(state: &ModelFitState) -> Result<Snapshot> {
    Ok(Snapshot {
        log_marginal: log_marginal_bic(state)?,
        beta: state.beta_hat.clone(),
        nonconverged: !state.converged_all,
    })
}

fn trace_model(
    model: ModelIndicator,
    batches: &[Batch],
    cumulative: &[Batch],
    config: &ScenarioConfig,
    eval: &[usize],
) -> ModelTrace {
    let n_methods = config.methods.len();
    let mut slots: Vec<Option<Snapshot>> = vec![None; eval.len() * n_methods];
    let mut nonconverged = vec![0; n_methods];

    let mut run = || -> Result<()> {
        let start = init_state(model, &batches[0], &config.fit)?;
        for (mi, method) in config.methods.iter().enumerate() {
            let mut state = start.clone();
            let mut next_eval = 0;
            for b in 1..=batches.len() {
                let at_eval = next_eval < eval.len() && eval[next_eval] == b;
                if b > 1 {
                    match method {
                        // the refit does not depend on earlier refits beyond the
                        // warm start, so only the evaluated batches are fitted
                        MethodKind::Offline if at_eval => {
                            state = offline_update(&state, &cumulative[b - 1], &config.fit)?
                        }
                        MethodKind::Offline => {}
                        MethodKind::Online => {
                            state = online_update(&state, &batches[b - 1], &config.fit)?
                        }
                    }
                }
                if at_eval {
                    slots[next_eval * n_methods + mi] = Some(snapshot(&state)?);
                    next_eval += 1;
                }
            }
            nonconverged[mi] = state.nonconverged_fits;
        }
        Ok(())
    };

    let snapshots = match run() {
        Ok(()) => slots.into_iter().collect::<Option<Vec<_>>>(),
        Err(_) => None,
    };
    ModelTrace {
        snapshots,
        nonconverged_fits: nonconverged,
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<ScenarioRun> {
    run_scenario_with_progress(config, |_| {})
}

/// As [`run_scenario`], calling `progress(replicate)` after each replicate.
pub fn run_scenario_with_progress(
    config: &ScenarioConfig,
    progress: impl Fn(usize),
) -> Result<ScenarioRun> {
    config.validate()?;
    let tables = config.prior_tables()?;
    let eval = config.eval_set();
    let n_methods = config.methods.len();
    let truth_gamma = config.true_gamma();
    let models: Vec<ModelIndicator> = (0..model_count(config.p) as u32)
        .map(|m| ModelIndicator::new(m, config.p))
        .collect::<Result<_>>()?;
    let needs_cumulative = config.methods.contains(&MethodKind::Offline);

    let mut records =
        Vec::with_capacity(config.replicates * eval.len() * n_methods * config.priors.len());
    let mut failures = FailureCounts {
        nonconverged_fits: config
            .methods
            .iter()
            .map(|m| (m.label().to_string(), 0))
            .collect(),
        ..FailureCounts::default()
    };

    for rep in 0..config.replicates {
        let batches = generate_stream(config, rep)?;
        let cumulative = if needs_cumulative {
            let mut acc = batches[0].clone();
            let mut out = vec![acc.clone()];
            for b in &batches[1..] {
                acc.extend(b)?;
                out.push(acc.clone());
            }
            out
        } else {
            Vec::new()
        };

        let traces: Vec<ModelTrace> = models
            .par_iter()
            .map(|&m| trace_model(m, &batches, &cumulative, config, &eval))
            .collect();

        let mut rep_nonconverged = false;
        for t in &traces {
            if t.snapshots.is_none() {
                failures.failed_streams += 1;
            }
            for (slot, &c) in failures
                .nonconverged_fits
                .iter_mut()
                .zip(&t.nonconverged_fits)
            {
                slot.1 += c;
                rep_nonconverged |= c > 0;
            }
        }
        if rep_nonconverged {
            failures.replicates_with_nonconvergence += 1;
        }

        for (ei, &batch) in eval.iter().enumerate() {
            for (mi, method) in config.methods.iter().enumerate() {
                let idx = ei * n_methods + mi;
                let mut log_marginals = Vec::with_capacity(traces.len());
                let mut fits = Vec::with_capacity(traces.len());
                let mut any_nonconverged = false;
                for t in &traces {
                    match &t.snapshots {
                        Some(s) => {
                            let snap = &s[idx];
                            log_marginals.push(snap.log_marginal);
                            fits.push(Some(snap.beta.clone()));
                            any_nonconverged |= snap.nonconverged;
                        }
                        None => {
                            log_marginals.push(f64::NEG_INFINITY);
                            fits.push(None);
                        }
                    }
                }
                for (prior, table) in config.priors.iter().zip(&tables) {
                    let summary = summarize(
                        &log_marginals,
                        table,
                        &fits,
                        prior.label(),
                        method.label(),
                        batch,
                    )?;
                    records.push(MetricsRecord {
                        replicate: rep,
                        batch,
                        method: *method,
                        prior: prior.label().to_string(),
                        rmse_beta: rmse_beta(&summary.beta_bma, &config.beta_true)?,
                        rmse_gamma: rmse_gamma(&summary.pip, &truth_gamma)?,
                        any_nonconverged,
                    });
                }
            }
        }
        progress(rep);
    }

    Ok(ScenarioRun { records, failures })
}
