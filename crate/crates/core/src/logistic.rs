//! Logistic regression likelihood and Newton fitting.
//!
//! One Newton routine serves both the plain maximum-likelihood fit and the
//! quadratically penalised objective
//! `psi(beta) = l(beta) - 1/2 (beta - c)^T P (beta - c)` used by the online
//! update. Steps are halved until the objective stops decreasing.

use crate::error::{BvsError, Result};
use crate::linalg::{Cholesky, SymMatrix};
use crate::model::ModelIndicator;

/// Added to the diagonal when the Newton system is numerically singular.
pub const RIDGE: f64 = 1e-8;
/// Relative pivot threshold below which the Newton system counts as singular.
pub const SINGULAR_RATIO: f64 = 1e-12;
/// Rounding slack when comparing objective values in the line search.
const ASCENT_SLACK: f64 = 1e-13;

/// Observations with an intercept column: `x` is `n x (p + 1)` row-major and
/// column 0 is identically one.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    x: Vec<f64>,
    y: Vec<f64>,
    p: usize,
}

impl Batch {
    pub fn new(x: Vec<f64>, y: Vec<f64>, p: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(BvsError::InvalidParameter("batch has no rows".into()));
        }
        if x.len() != n * (p + 1) {
            return Err(BvsError::DimensionMismatch {
                what: "batch design entries",
                expected: n * (p + 1),
                got: x.len(),
            });
        }
        if y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(BvsError::InvalidParameter(
                "responses must be 0 or 1".into(),
            ));
        }
        if x.chunks_exact(p + 1).any(|row| row[0] != 1.0) {
            return Err(BvsError::InvalidParameter(
                "first design column must be identically 1".into(),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(BvsError::NonFinite("batch design"));
        }
        Ok(Self { x, y, p })
    }

    /// Builds a batch from covariate rows (without the intercept column).
    pub fn from_covariates(rows: &[Vec<f64>], y: Vec<f64>) -> Result<Self> {
        let p = rows.first().map(Vec::len).unwrap_or(0);
        let mut x = Vec::with_capacity(rows.len() * (p + 1));
        for r in rows {
            if r.len() != p {
                return Err(BvsError::DimensionMismatch {
                    what: "covariate row length",
                    expected: p,
                    got: r.len(),
                });
            }
            x.push(1.0);
            x.extend_from_slice(r);
        }
        Self::new(x, y, p)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * (self.p + 1)..(i + 1) * (self.p + 1)]
    }

    /// Row-wise concatenation.
    pub fn concat(batches: &[&Batch]) -> Result<Batch> {
        let first = batches
            .first()
            .ok_or_else(|| BvsError::InvalidParameter("nothing to concatenate".into()))?;
        let p = first.p;
        let mut x = Vec::new();
        let mut y = Vec::new();
        for b in batches {
            if b.p != p {
                return Err(BvsError::DimensionMismatch {
                    what: "batch predictor count",
                    expected: p,
                    got: b.p,
                });
            }
            x.extend_from_slice(&b.x);
            y.extend_from_slice(&b.y);
        }
        Ok(Batch { x, y, p })
    }

    /// Appends rows of `other` in place.
    pub fn extend(&mut self, other: &Batch) -> Result<()> {
        if other.p != self.p {
            return Err(BvsError::DimensionMismatch {
                what: "batch predictor count",
                expected: self.p,
                got: other.p,
            });
        }
        self.x.extend_from_slice(&other.x);
        self.y.extend_from_slice(&other.y);
        Ok(())
    }
}

/// A batch restricted to one model's columns, stored column-major.
#[derive(Debug, Clone)]
pub struct ModelDesign<'a> {
    cols: Vec<f64>,
    y: &'a [f64],
    dim: usize,
}

impl ModelDesign<'_> {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of coefficients, `k + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Column `j` of the model design (0 is the intercept).
    pub fn column(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.cols[j * n..(j + 1) * n]
    }

    pub fn y(&self) -> &[f64] {
        self.y
    }
}

/// Intercept plus included predictors, in ascending predictor order.
pub fn model_columns<'a>(batch: &'a Batch, model: &ModelIndicator) -> Result<ModelDesign<'a>> {
    if batch.p != model.p() {
        return Err(BvsError::DimensionMismatch {
            what: "model predictor count",
            expected: batch.p,
            got: model.p(),
        });
    }
    let n = batch.n();
    let width = batch.p + 1;
    let cols = model.columns();
    let mut out = Vec::with_capacity(n * cols.len());
    for &c in &cols {
        out.extend((0..n).map(|i| batch.x[i * width + c]));
    }
    Ok(ModelDesign {
        cols: out,
        y: &batch.y,
        dim: cols.len(),
    })
}

/// Log-likelihood with its gradient and Hessian.
#[derive(Debug, Clone)]
pub struct LogLikEval {
    pub loglik: f64,
    pub grad: Vec<f64>,
    /// Hessian `-X^T W X`.
    pub hess: SymMatrix,
}

pub fn loglik_grad_hess(beta: &[f64], design: &ModelDesign<'_>) -> Result<LogLikEval> {
    check_beta(beta, design)?;
    let ev = evaluate(beta, design);
    if !ev.loglik.is_finite() || ev.grad.iter().any(|g| !g.is_finite()) || !ev.info.is_finite() {
        return Err(BvsError::NonFinite("log-likelihood evaluation"));
    }
    Ok(LogLikEval {
        loglik: ev.loglik,
        grad: ev.grad,
        hess: ev.info.scaled(-1.0),
    })
}

/// Bernoulli log-likelihood only.
pub fn loglik(beta: &[f64], design: &ModelDesign<'_>) -> Result<f64> {
    check_beta(beta, design)?;
    Ok(evaluate(beta, design).loglik)
}

fn check_beta(beta: &[f64], design: &ModelDesign<'_>) -> Result<()> {
    if beta.len() != design.dim {
        return Err(BvsError::DimensionMismatch {
            what: "coefficient vector",
            expected: design.dim,
            got: beta.len(),
        });
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(BvsError::NonFinite("coefficient vector"));
    }
    Ok(())
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are reproducible.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

struct Eval {
    loglik: f64,
    grad: Vec<f64>,
    /// `X^T W X`.
    info: SymMatrix,
}

fn evaluate(beta: &[f64], design: &ModelDesign<'_>) -> Eval {
    let d = design.dim;
    let n = design.n();
    let mut eta = vec![0.0; n];
    for (a, &b) in beta.iter().enumerate() {
        for (e, x) in eta.iter_mut().zip(design.column(a)) {
            *e += b * x;
        }
    }
    let mut resid = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut ll = 0.0;
    for i in 0..n {
        let (eta_i, y) = (eta[i], design.y[i]);
        let e = (-eta_i.abs()).exp();
        let denom = 1.0 + e;
        // y*eta - log(1 + e^eta)
        ll += y * eta_i - eta_i.max(0.0) - e.ln_1p();
        // mu = sigma(eta), 1 - mu = sigma(-eta), w = mu (1 - mu)
        let (mu, one_minus_mu) = if eta_i >= 0.0 {
            (1.0 / denom, e / denom)
        } else {
            (e / denom, 1.0 / denom)
        };
        resid[i] = if y == 1.0 { one_minus_mu } else { -mu };
        w[i] = e / (denom * denom);
    }
    let grad: Vec<f64> = (0..d).map(|a| dot(&resid, design.column(a))).collect();
    let mut info = SymMatrix::zeros(d);
    let mut weighted = vec![0.0; n];
    for a in 0..d {
        for ((wx, wi), x) in weighted.iter_mut().zip(&w).zip(design.column(a)) {
            *wx = wi * x;
        }
        for b in a..d {
            info.set_sym(a, b, dot(&weighted, design.column(b)));
        }
    }
    Eval {
        loglik: ll,
        grad,
        info,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitOptions {
    /// Gradient max-norm tolerance.
    pub tol: f64,
    pub max_iter: usize,
    /// Parameter-change tolerance.
    pub step_tol: f64,
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            step_tol: 1e-10,
            max_halvings: 30,
        }
    }
}

impl FitOptions {
    fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(BvsError::InvalidParameter(format!(
                "tolerance must be > 0, got {}",
                self.tol
            )));
        }
        if !(self.step_tol.is_finite() && self.step_tol >= 0.0) {
            return Err(BvsError::InvalidParameter(
                "step tolerance must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: Vec<f64>,
    /// Log-likelihood of the fitted batch at `beta_hat` (penalty excluded).
    pub loglik: f64,
    /// Observed information of the fitted batch at `beta_hat`.
    pub observed_info: SymMatrix,
    pub converged: bool,
    pub iterations: usize,
    /// Whether any Newton system needed diagonal stabilisation.
    pub ridged: bool,
}

struct Penalty<'p> {
    center: &'p [f64],
    info: &'p SymMatrix,
}

impl Penalty<'_> {
    fn value(&self, beta: &[f64]) -> f64 {
        let diff: Vec<f64> = beta.iter().zip(self.center).map(|(b, c)| b - c).collect();
        0.5 * self.info.quad_form(&diff)
    }

    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let diff: Vec<f64> = beta.iter().zip(self.center).map(|(b, c)| b - c).collect();
        self.info.mul_vec(&diff)
    }
}

pub fn fit_mle(design: &ModelDesign<'_>, init: &[f64], opts: &FitOptions) -> Result<FitResult> {
    newton(design, init, None, opts)
}

/// Maximises `l(beta) - 1/2 (beta - center)^T info_prior (beta - center)`.
pub fn fit_penalized(
    design: &ModelDesign<'_>,
    center: &[f64],
    info_prior: &SymMatrix,
    init: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    if center.len() != design.dim || info_prior.dim() != design.dim {
        return Err(BvsError::DimensionMismatch {
            what: "penalty dimension",
            expected: design.dim,
            got: if center.len() != design.dim {
                center.len()
            } else {
                info_prior.dim()
            },
        });
    }
    if center.iter().any(|c| !c.is_finite()) || !info_prior.is_finite() {
        return Err(BvsError::NonFinite("penalty"));
    }
    newton(
        design,
        init,
        Some(Penalty {
            center,
            info: info_prior,
        }),
        opts,
    )
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn newton(
    design: &ModelDesign<'_>,
    init: &[f64],
    penalty: Option<Penalty<'_>>,
    opts: &FitOptions,
) -> Result<FitResult> {
    opts.validate()?;
    check_beta(init, design)?;
    let step_gate = opts.tol.sqrt();
    let pen_value = |b: &[f64]| penalty.as_ref().map_or(0.0, |p| p.value(b));

    let mut beta = init.to_vec();
    let mut cur = evaluate(&beta, design);
    if !cur.loglik.is_finite() {
        return Err(BvsError::NonFinite("initial log-likelihood"));
    }
    let mut objective = cur.loglik - pen_value(&beta);
    let mut converged = false;
    let mut ridged = false;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        let mut system = cur.info.clone();
        let grad = match &penalty {
            Some(p) => {
                system.add_assign(p.info);
                let pg = p.gradient(&beta);
                cur.grad.iter().zip(&pg).map(|(a, b)| a - b).collect()
            }
            None => cur.grad.clone(),
        };

        let mut ridged_now = false;
        let chol = loop {
            match Cholesky::factor(&system) {
                Some(c) if c.min_pivot_sq() >= SINGULAR_RATIO * system.max_diagonal() => break c,
                _ => {
                    // escalate until the stabilised system factors
                    let bump = if ridged_now {
                        (system.max_diagonal().abs() * SINGULAR_RATIO).max(RIDGE) * 10.0
                    } else {
                        RIDGE
                    };
                    system.add_diagonal(bump);
                    ridged_now = true;
                }
            }
        };
        ridged |= ridged_now;
        let step = chol.solve(&grad);
        let step_norm = max_abs(&step);

        if max_abs(&grad) < opts.tol && step_norm < step_gate {
            converged = true;
            break;
        }
        if step_norm < opts.step_tol && !ridged_now {
            converged = true;
            break;
        }

        iterations += 1;
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = beta.iter().zip(&step).map(|(b, s)| b + scale * s).collect();
            let ev = evaluate(&cand, design);
            let cand_obj = ev.loglik - pen_value(&cand);
            if cand_obj.is_finite()
                && cand_obj >= objective - ASCENT_SLACK * (1.0 + objective.abs())
            {
                accepted = Some((cand, ev, cand_obj));
                break;
            }
            scale *= 0.5;
        }
        let Some((next, ev, next_obj)) = accepted else {
            break;
        };
        let moved = scale * step_norm;
        beta = next;
        cur = ev;
        objective = next_obj;
        if moved < opts.step_tol && !ridged_now {
            converged = true;
            break;
        }
    }

    if beta.iter().any(|b| !b.is_finite()) || !cur.loglik.is_finite() {
        return Err(BvsError::NonFinite("Newton iterate"));
    }
    Ok(FitResult {
        beta_hat: beta,
        loglik: cur.loglik,
        observed_info: cur.info,
        converged,
        iterations,
        ridged,
    })
}
