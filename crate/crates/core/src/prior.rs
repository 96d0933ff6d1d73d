//! Model-space priors.
//!
//! Every prior handled here is exchangeable: two models with the same number
//! of included predictors get the same probability. A prior is therefore fully
//! described by `log_q[k]`, the log probability of one particular model of
//! size `k`, and the induced size distribution
//! `log_size_pmf[k] = log_q[k] + log C(p, k)`.
//!
//! The matryoshka doll (MD) prior fixes the prior odds of any model against
//! the union of all models strictly nesting it at a constant `xi`. Under
//! exchangeability this becomes the backward recursion
//!
//! ```text
//! q_k = xi * sum_{j=1}^{p-k} C(p-k, j) * q_{k+j},   q_p = 1 (unnormalised)
//! ```
//!
//! evaluated in log space and normalised so the size pmf sums to one.

use serde::{Deserialize, Serialize};

use crate::error::{BvsError, Result};
use crate::model::ModelIndicator;
use crate::special::{ln_beta, ln_choose, ln_factorial, log_sum_exp, LogSumExp};

/// Default Poisson rate for the MD prior and its approximations.
pub const DEFAULT_THETA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorSpec {
    DiscreteUniform,
    BetaBinomial { a: f64, b: f64 },
    MatryoshkaDoll { theta: f64 },
    TruncatedPoissonMd { theta: f64 },
    BernoulliMd { theta: f64 },
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(BvsError::InvalidParameter(format!(
                    "{name} must be finite and > 0, got {v}"
                )))
            }
        };
        match *self {
            PriorSpec::DiscreteUniform => Ok(()),
            PriorSpec::BetaBinomial { a, b } => {
                positive("a", a)?;
                positive("b", b)
            }
            PriorSpec::MatryoshkaDoll { theta }
            | PriorSpec::TruncatedPoissonMd { theta }
            | PriorSpec::BernoulliMd { theta } => positive("theta", theta),
        }
    }
}

/// Log prior probabilities by model size for a fixed prior and `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorTable {
    p: usize,
    log_q: Vec<f64>,
    log_size_pmf: Vec<f64>,
}

impl PriorTable {
    pub fn p(&self) -> usize {
        self.p
    }

    /// Log probability of one specific model of size `k`.
    pub fn log_q(&self) -> &[f64] {
        &self.log_q
    }

    pub fn log_size_pmf(&self) -> &[f64] {
        &self.log_size_pmf
    }

    pub fn log_prior(&self, model: &ModelIndicator) -> f64 {
        self.log_q[model.size()]
    }

    /// Log prior of the model with the given mask (mask must fit in `p` bits).
    #[inline]
    pub fn log_prior_mask(&self, mask: u32) -> f64 {
        self.log_q[mask.count_ones() as usize]
    }
}

/// `xi = 1 / (e^theta - 1)`, the inverse of `theta = log(1 + 1/xi)`.
pub fn xi_from_theta(theta: f64) -> Result<f64> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(BvsError::InvalidParameter(format!(
            "theta must be finite and > 0, got {theta}"
        )));
    }
    Ok(1.0 / theta.exp_m1())
}

fn check_p(p: usize) -> Result<()> {
    if p == 0 {
        return Err(BvsError::InvalidParameter("p must be at least 1".into()));
    }
    Ok(())
}

fn check_bernoulli(theta: f64, p: usize) -> Result<()> {
    if theta >= p as f64 {
        return Err(BvsError::InvalidParameter(format!(
            "Bernoulli(theta/p) needs theta < p, got theta = {theta}, p = {p}"
        )));
    }
    Ok(())
}

/// Log probability of one specific model of size `k` among `p` predictors.
pub fn log_prior_by_size(spec: &PriorSpec, p: usize, k: usize) -> Result<f64> {
    spec.validate()?;
    check_p(p)?;
    if k > p {
        return Err(BvsError::OutOfRange {
            what: "model size",
            value: k,
            max: p,
        });
    }
    let (pf, kf) = (p as f64, k as f64);
    Ok(match *spec {
        PriorSpec::DiscreteUniform => -pf * std::f64::consts::LN_2,
        PriorSpec::BetaBinomial { a, b } => ln_beta(a + kf, b + pf - kf) - ln_beta(a, b),
        PriorSpec::BernoulliMd { theta } => {
            check_bernoulli(theta, p)?;
            bernoulli_log_q(theta, p, k)
        }
        PriorSpec::TruncatedPoissonMd { theta } => {
            truncated_poisson_log_size(theta, p)[k] - ln_choose(p as u64, k as u64)
        }
        PriorSpec::MatryoshkaDoll { theta } => md_size_weights(theta, p)?[k],
    })
}

fn bernoulli_log_q(theta: f64, p: usize, k: usize) -> f64 {
    let rate = theta / p as f64;
    let included = if k == 0 { 0.0 } else { k as f64 * rate.ln() };
    included + (p - k) as f64 * (-rate).ln_1p()
}

/// Poisson(theta) restricted to `{0, ..., p}` and renormalised, as log pmf.
fn truncated_poisson_log_size(theta: f64, p: usize) -> Vec<f64> {
    let ln_theta = theta.ln();
    let raw: Vec<f64> = (0..=p)
        .map(|k| k as f64 * ln_theta - ln_factorial(k as u64))
        .collect();
    let norm = log_sum_exp(&raw);
    raw.into_iter().map(|v| v - norm).collect()
}

/// Per-model log probabilities `log_q[0..=p]` of the MD prior.
pub fn md_size_weights(theta: f64, p: usize) -> Result<Vec<f64>> {
    let ln_xi = xi_from_theta(theta)?.ln();
    check_p(p)?;
    let ln_fact: Vec<f64> = (0..=p as u64).map(ln_factorial).collect();
    let ln_c = |n: usize, j: usize| ln_fact[n] - ln_fact[j] - ln_fact[n - j];

    let mut log_q = vec![0.0; p + 1];
    for k in (0..p).rev() {
        let free = p - k;
        let mut acc = LogSumExp::default();
        for j in 1..=free {
            acc.push(ln_c(free, j) + log_q[k + j]);
        }
        log_q[k] = ln_xi + acc.value();
    }

    let mut total = LogSumExp::default();
    for (k, &lq) in log_q.iter().enumerate() {
        total.push(lq + ln_c(p, k));
    }
    let norm = total.value();
    for lq in &mut log_q {
        *lq -= norm;
    }
    Ok(log_q)
}

pub fn build_prior_table(spec: &PriorSpec, p: usize) -> Result<PriorTable> {
    spec.validate()?;
    check_p(p)?;
    let log_q: Vec<f64> = match *spec {
        PriorSpec::MatryoshkaDoll { theta } => md_size_weights(theta, p)?,
        PriorSpec::TruncatedPoissonMd { theta } => truncated_poisson_log_size(theta, p)
            .into_iter()
            .enumerate()
            .map(|(k, ls)| ls - ln_choose(p as u64, k as u64))
            .collect(),
        _ => (0..=p)
            .map(|k| log_prior_by_size(spec, p, k))
            .collect::<Result<_>>()?,
    };
    let log_size_pmf = log_q
        .iter()
        .enumerate()
        .map(|(k, lq)| lq + ln_choose(p as u64, k as u64))
        .collect();
    Ok(PriorTable {
        p,
        log_q,
        log_size_pmf,
    })
}

/// Poisson(theta) pmf at `k`.
pub fn limiting_size_pmf(theta: f64, k: usize) -> Result<f64> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(BvsError::InvalidParameter(format!(
            "theta must be finite and > 0, got {theta}"
        )));
    }
    Ok((-theta + k as f64 * theta.ln() - ln_factorial(k as u64)).exp())
}

/// `P(size = k + 1) / P(size = k)` under the prior at finite `p`.
pub fn size_ratio(spec: &PriorSpec, p: usize, k: usize) -> Result<f64> {
    let table = build_prior_table(spec, p)?;
    size_ratio_from_table(&table, k)
}

pub fn size_ratio_from_table(table: &PriorTable, k: usize) -> Result<f64> {
    let p = table.p();
    if k >= p {
        return Err(BvsError::OutOfRange {
            what: "size ratio k",
            value: k,
            max: p - 1,
        });
    }
    let lo = table.log_size_pmf[k];
    if lo == f64::NEG_INFINITY {
        return Err(BvsError::InvalidParameter(format!(
            "size pmf vanishes at k = {k}"
        )));
    }
    Ok((table.log_size_pmf[k + 1] - lo).exp())
}

/// Large-`p` limits of the consecutive size ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SizeRatioLimit {
    /// MD(theta) and Bernoulli(theta/p): `theta / (k + 1)`.
    Poisson { theta: f64 },
    /// Beta(1, b) with `b` fixed: 1.
    BetaFixed,
    /// Beta(1, m p): `1 / (m + 1)`.
    BetaLinear { m: f64 },
    /// Beta(1, p^v), v > 1: `p^(1 - v)`, still a function of `p`.
    BetaPower { v: f64 },
}

impl SizeRatioLimit {
    pub fn value(&self, p: usize, k: usize) -> f64 {
        match *self {
            SizeRatioLimit::Poisson { theta } => theta / (k as f64 + 1.0),
            SizeRatioLimit::BetaFixed => 1.0,
            SizeRatioLimit::BetaLinear { m } => 1.0 / (m + 1.0),
            SizeRatioLimit::BetaPower { v } => (p as f64).powf(1.0 - v),
        }
    }
}

/// Exact Bernoulli(theta/p) size ratio, `theta/(k+1) * (p-k)/(p-theta)`.
pub fn bernoulli_ratio_closed_form(theta: f64, p: usize, k: usize) -> f64 {
    theta / (k as f64 + 1.0) * (p as f64 - k as f64) / (p as f64 - theta)
}

/// The seven priors compared in the simulation study, with short labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id")]
pub enum NamedPrior {
    /// Discrete uniform.
    DU,
    /// Beta(1, 1).
    B11,
    /// Beta(1, p).
    B1p,
    /// Matryoshka doll.
    MD {
        #[serde(default = "default_theta")]
        theta: f64,
    },
    /// Truncated Poisson approximation to MD.
    PA {
        #[serde(default = "default_theta")]
        theta: f64,
    },
    /// Bernoulli(theta/p) approximation to MD.
    BA {
        #[serde(default = "default_theta")]
        theta: f64,
    },
    /// Beta(1, p^2).
    B1psq,
}

fn default_theta() -> f64 {
    DEFAULT_THETA
}

impl NamedPrior {
    pub fn label(&self) -> &'static str {
        match self {
            NamedPrior::DU => "DU",
            NamedPrior::B11 => "B11",
            NamedPrior::B1p => "B1p",
            NamedPrior::MD { .. } => "MD",
            NamedPrior::PA { .. } => "PA",
            NamedPrior::BA { .. } => "BA",
            NamedPrior::B1psq => "B1psq",
        }
    }

    pub fn resolve(&self, p: usize) -> PriorSpec {
        let pf = p as f64;
        match *self {
            NamedPrior::DU => PriorSpec::DiscreteUniform,
            NamedPrior::B11 => PriorSpec::BetaBinomial { a: 1.0, b: 1.0 },
            NamedPrior::B1p => PriorSpec::BetaBinomial { a: 1.0, b: pf },
            NamedPrior::B1psq => PriorSpec::BetaBinomial { a: 1.0, b: pf * pf },
            NamedPrior::MD { theta } => PriorSpec::MatryoshkaDoll { theta },
            NamedPrior::PA { theta } => PriorSpec::TruncatedPoissonMd { theta },
            NamedPrior::BA { theta } => PriorSpec::BernoulliMd { theta },
        }
    }

    /// The comparison set ordered from weakest to strongest sparsity.
    pub fn comparison_set(theta: f64) -> Vec<NamedPrior> {
        vec![
            NamedPrior::DU,
            NamedPrior::B11,
            NamedPrior::B1p,
            NamedPrior::MD { theta },
            NamedPrior::PA { theta },
            NamedPrior::BA { theta },
            NamedPrior::B1psq,
        ]
    }
}
