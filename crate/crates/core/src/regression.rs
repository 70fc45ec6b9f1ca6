//! Sketch-preconditioned solver for the normal-equation system `AᵀA x = y`.
//!
//! The sketch `SA` is factorized as `QR_s`; `R = R_s⁻¹` makes `SAR`
//! orthonormal, so `AR` is nearly orthonormal. The solver then iterates on
//! the preconditioned system `Rᵀ AᵀA R z = Rᵀ y` and returns `x = R z`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::rng::derive_seed;
use crate::sketch::{build_sketch, default_rows, sketch_matrix, SketchSpec, DEFAULT_EPSILON};

/// Contraction factor of a unit Richardson step when `σ(AR) ⊂ [3/4, 5/4]`.
pub const RICHARDSON_CONTRACTION: f64 = 9.0 / 16.0;

const RANK_TOL: f64 = 1e-12;
const ORTHONORMALITY_TOL: f64 = 1e-8;

/// Right preconditioner `R` (upper triangular) with `SAR` orthonormal.
#[derive(Debug, Clone)]
pub struct Preconditioner {
    /// `R = R_s⁻¹`.
    r: DMatrix<f64>,
    /// The triangular QR factor `R_s` of `SA`.
    sketch_factor: DMatrix<f64>,
    condition_estimate: f64,
    orthonormality_defect: f64,
    sketch_rows: usize,
}

impl Preconditioner {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn sketch_factor(&self) -> &DMatrix<f64> {
        &self.sketch_factor
    }

    /// `κ(SA)`, which approximates `κ(A)` within the sketch distortion.
    pub fn condition_estimate(&self) -> f64 {
        self.condition_estimate
    }

    /// `‖(SAR)ᵀ(SAR) − I‖_F` measured at build time.
    pub fn orthonormality_defect(&self) -> f64 {
        self.orthonormality_defect
    }

    pub fn sketch_rows(&self) -> usize {
        self.sketch_rows
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// `R z`.
    pub fn apply(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.r * z
    }

    /// `Rᵀ w`.
    pub fn apply_transpose(&self, w: &DVector<f64>) -> DVector<f64> {
        self.r.tr_mul(w)
    }

    /// Extreme singular values of `AR`, by dense materialization.
    pub fn singular_range<A: LinearOperator + ?Sized>(&self, a: &A) -> (f64, f64) {
        let ar = a.to_dense() * &self.r;
        let sv = ar.singular_values();
        (sv.min(), sv.max())
    }
}

pub fn build_preconditioner<A: LinearOperator + ?Sized>(a: &A, spec: &SketchSpec) -> Result<Preconditioner> {
    build_timed(a, spec).map(|(p, _, _)| p)
}

/// Builds the preconditioner and reports (sketch, factorization) nanoseconds.
fn build_timed<A: LinearOperator + ?Sized>(a: &A, spec: &SketchSpec) -> Result<(Preconditioner, u64, u64)> {
    let (n, k) = (a.nrows(), a.ncols());
    if n < k {
        return Err(Error::Dimension(format!(
            "preconditioning needs a tall operator, got {n}x{k}"
        )));
    }
    if spec.rows < k {
        return Err(Error::Config(format!(
            "sketch has {} rows but the operator has {k} columns",
            spec.rows
        )));
    }
    let start = Instant::now();
    let op = build_sketch(spec)?;
    let sa = sketch_matrix(&op, a)?;
    let sketch_ns = start.elapsed().as_nanos() as u64;
    let start = Instant::now();
    if sa.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("sketched matrix".into()));
    }
    let factor = sa.clone().qr().r();
    let sv = factor.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    let min_diag = factor.diagonal().iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    if smax == 0.0 || min_diag < RANK_TOL * smax {
        return Err(Error::Rank(format!(
            "sketch QR factor has diagonal entry {min_diag:.3e} against norm {smax:.3e}; \
             the operator is not full column rank or the sketch failed"
        )));
    }
    let r = factor
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Rank("triangular sketch factor is singular".into()))?;
    let sar = &sa * &r;
    let defect = (sar.tr_mul(&sar) - DMatrix::<f64>::identity(k, k)).norm();
    if !(defect <= ORTHONORMALITY_TOL) {
        return Err(Error::Rank(format!(
            "preconditioned sketch deviates from orthonormal by {defect:.3e}"
        )));
    }
    let precond = Preconditioner {
        r,
        sketch_factor: factor,
        condition_estimate: smax / smin,
        orthonormality_defect: defect,
        sketch_rows: spec.rows,
    };
    Ok((precond, sketch_ns, start.elapsed().as_nanos() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IterationMode {
    /// Unit-step Richardson iteration `z ← z − (Rᵀ AᵀA R z − Rᵀ y)`.
    #[default]
    Richardson,
    /// Conjugate gradient on the preconditioned system.
    ConjugateGradient,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionConfig {
    /// Relative target: stop once `‖AᵀAx − y‖ ≤ eps·‖y‖`.
    pub eps: f64,
    /// Sketch row count; [`default_rows`] when `None`.
    pub sketch_rows: Option<usize>,
    pub sketch_epsilon: f64,
    pub seed: u64,
    /// Extra iterations allowed beyond the theoretical budget.
    pub max_iter_slack: usize,
    /// Fresh-sketch attempts after the first one fails.
    pub retries: usize,
    pub mode: IterationMode,
}

impl RegressionConfig {
    pub fn new(eps: f64, seed: u64) -> Self {
        Self {
            eps,
            sketch_rows: None,
            sketch_epsilon: DEFAULT_EPSILON,
            seed,
            max_iter_slack: 5,
            retries: 3,
            mode: IterationMode::Richardson,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {}", self.eps)));
        }
        if !(self.sketch_epsilon > 0.0 && self.sketch_epsilon < 0.5) {
            return Err(Error::Config(format!(
                "sketch distortion must lie in (0, 1/2), got {}",
                self.sketch_epsilon
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolverTimings {
    pub sketch_ns: u64,
    pub precondition_ns: u64,
    pub iterate_ns: u64,
}

#[derive(Debug, Clone)]
pub struct RegressionReport {
    pub solution: DVector<f64>,
    pub iterations: usize,
    /// `‖AᵀA x_t − y‖₂`, starting from `x_0 = 0`.
    pub residual_history: Vec<f64>,
    /// Per-step ratios of the preconditioned residual norm `‖Rᵀ(AᵀA x_t − y)‖₂`.
    pub preconditioned_contraction: Vec<f64>,
    pub condition_estimate: f64,
    pub attempts: usize,
    pub sketch_rows: usize,
    pub timings: SolverTimings,
    /// Wall time of each iteration in nanoseconds.
    pub iteration_ns: Vec<u64>,
}

impl RegressionReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&0.0)
    }

    pub fn max_contraction(&self) -> f64 {
        self.preconditioned_contraction.iter().copied().fold(0.0, f64::max)
    }
}

/// `⌈(ln κ + ln(1/ε) + 2) / ln(16/9)⌉` iterations.
pub fn iteration_budget(kappa: f64, eps: f64) -> usize {
    let num = kappa.max(1.0).ln() + (1.0 / eps).ln() + 2.0;
    (num / (1.0 / RICHARDSON_CONTRACTION).ln()).ceil().max(1.0) as usize
}

enum Attempt {
    Solved(RegressionReport),
    Exhausted { budget: usize, residual: f64 },
}

pub fn fast_regression<A: LinearOperator + ?Sized>(
    a: &A,
    y: &DVector<f64>,
    cfg: &RegressionConfig,
) -> Result<RegressionReport> {
    cfg.validate()?;
    let (n, k) = (a.nrows(), a.ncols());
    if y.len() != k {
        return Err(Error::Dimension(format!(
            "right-hand side has length {} but operator has {k} columns",
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("right-hand side".into()));
    }
    let y_norm = y.norm();
    if y_norm == 0.0 {
        return Ok(RegressionReport {
            solution: DVector::zeros(k),
            iterations: 0,
            residual_history: vec![0.0],
            preconditioned_contraction: Vec::new(),
            condition_estimate: f64::NAN,
            attempts: 0,
            sketch_rows: 0,
            timings: SolverTimings::default(),
            iteration_ns: Vec::new(),
        });
    }
    let padded = n.max(1).next_power_of_two();
    let base_rows = cfg.sketch_rows.unwrap_or_else(|| default_rows(k, padded)).min(padded);
    let target = cfg.eps * y_norm;

    let mut last_err = None;
    for attempt in 0..=cfg.retries {
        // Attempt 1 reseeds; later attempts also double the row count.
        let rows = (base_rows << attempt.saturating_sub(1).min(16)).min(padded);
        let seed = derive_seed(cfg.seed, "regression-sketch", attempt as u64);
        let spec = SketchSpec::new(n, rows, cfg.sketch_epsilon, seed)?;

        let (precond, sketch_ns, precondition_ns) = match build_timed(a, &spec) {
            Ok(built) => built,
            Err(e @ Error::Rank(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let budget = iteration_budget(precond.condition_estimate(), cfg.eps) + cfg.max_iter_slack;
        let iter_start = Instant::now();
        let outcome = match cfg.mode {
            IterationMode::Richardson => richardson(a, y, &precond, target, budget)?,
            IterationMode::ConjugateGradient => conjugate_gradient(a, y, &precond, target, budget)?,
        };
        match outcome {
            Attempt::Solved(mut report) => {
                report.attempts = attempt + 1;
                report.sketch_rows = rows;
                report.timings = SolverTimings {
                    sketch_ns,
                    precondition_ns,
                    iterate_ns: iter_start.elapsed().as_nanos() as u64,
                };
                return Ok(report);
            }
            Attempt::Exhausted { budget, residual } => {
                last_err = Some(Error::PreconditionerFailure {
                    attempts: attempt + 1,
                    budget,
                    residual,
                    target,
                });
            }
        }
    }
    Err(last_err.expect("at least one attempt runs"))
}

fn normal_residual<A: LinearOperator + ?Sized>(a: &A, x: &DVector<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let r = a.normal_apply(x) - y;
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("normal-equation residual".into()));
    }
    Ok(r)
}

fn richardson<A: LinearOperator + ?Sized>(
    a: &A,
    y: &DVector<f64>,
    precond: &Preconditioner,
    target: f64,
    budget: usize,
) -> Result<Attempt> {
    let k = a.ncols();
    let mut z = DVector::zeros(k);
    let mut x = DVector::zeros(k);
    let mut residual = -y.clone();
    let mut history = vec![residual.norm()];
    let mut contraction = Vec::new();
    let mut prev_precond = f64::NAN;
    let mut iteration_ns = Vec::new();
    let mut iterations = 0;
    while history[iterations] > target {
        let start = Instant::now();
        if iterations == budget {
            return Ok(Attempt::Exhausted {
                budget,
                residual: history[iterations],
            });
        }
        let step = precond.apply_transpose(&residual);
        let step_norm = step.norm();
        if iterations > 0 {
            contraction.push(step_norm / prev_precond);
        }
        prev_precond = step_norm;
        z -= &step;
        x = precond.apply(&z);
        residual = normal_residual(a, &x, y)?;
        history.push(residual.norm());
        iteration_ns.push(start.elapsed().as_nanos() as u64);
        iterations += 1;
    }
    if iterations > 0 {
        contraction.push(precond.apply_transpose(&residual).norm() / prev_precond);
    }
    Ok(Attempt::Solved(RegressionReport {
        solution: x,
        iterations,
        residual_history: history,
        preconditioned_contraction: contraction,
        condition_estimate: precond.condition_estimate(),
        attempts: 0,
        sketch_rows: 0,
        timings: SolverTimings::default(),
        iteration_ns,
    }))
}

fn conjugate_gradient<A: LinearOperator + ?Sized>(
    a: &A,
    y: &DVector<f64>,
    precond: &Preconditioner,
    target: f64,
    budget: usize,
) -> Result<Attempt> {
    let k = a.ncols();
    let mut z = DVector::zeros(k);
    // Preconditioned residual r = Rᵀy − Bz; the original residual is −R_sᵀ r.
    let mut r = precond.apply_transpose(y);
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut history = vec![y.norm()];
    let mut contraction = Vec::new();
    let mut iteration_ns = Vec::new();
    let mut iterations = 0;
    loop {
        let start = Instant::now();
        if history[iterations] <= target {
            // Confirm against the directly evaluated residual before accepting.
            let x = precond.apply(&z);
            let direct = normal_residual(a, &x, y)?.norm();
            if direct <= target || iterations == 0 {
                *history.last_mut().unwrap() = direct;
                return Ok(Attempt::Solved(RegressionReport {
                    solution: x,
                    iterations,
                    residual_history: history,
                    preconditioned_contraction: contraction,
                    condition_estimate: precond.condition_estimate(),
                    attempts: 0,
                    sketch_rows: 0,
                    timings: SolverTimings::default(),
                    iteration_ns,
                }));
            }
            r = -precond.apply_transpose(&normal_residual(a, &x, y)?);
            rr = r.norm_squared();
            p = r.clone();
            *history.last_mut().unwrap() = direct;
        }
        if iterations == budget {
            return Ok(Attempt::Exhausted {
                budget,
                residual: history[iterations],
            });
        }
        let bp = precond.apply_transpose(&a.normal_apply(&precond.apply(&p)));
        let curvature = p.dot(&bp);
        if !curvature.is_finite() || curvature <= 0.0 {
            return Err(Error::Numerical("conjugate-gradient curvature".into()));
        }
        let alpha = rr / curvature;
        z.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &bp, 1.0);
        let rr_next = r.norm_squared();
        contraction.push((rr_next / rr).sqrt());
        p = &r + (rr_next / rr) * &p;
        rr = rr_next;
        history.push(precond.sketch_factor().tr_mul(&r).norm());
        iteration_ns.push(start.elapsed().as_nanos() as u64);
        iterations += 1;
    }
}

/// Forms `AᵀA` and solves by Cholesky: the `O(Nk² + k³)` baseline.
pub fn naive_normal_solve(a: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    if y.len() != a.ncols() {
        return Err(Error::Dimension(format!(
            "right-hand side has length {} but matrix has {} columns",
            y.len(),
            a.ncols()
        )));
    }
    // The explicit transpose routes through the blocked gemm kernel; `tr_mul`
    // takes a dot-product path that is several times slower at this shape.
    let gram = a.transpose() * a;
    let scale = gram.diagonal().amax();
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::Rank("AᵀA is not positive definite".into()))?;
    let pivot = chol.l_dirty().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(pivot > RANK_TOL * scale) {
        return Err(Error::Rank(format!(
            "AᵀA is numerically singular (pivot {pivot:.3e} against diagonal {scale:.3e})"
        )));
    }
    Ok(chol.solve(y))
}

/// Spectral condition number `σ_max / σ_min`.
pub fn condition_number(m: &DMatrix<f64>) -> Result<f64> {
    let sv = m.singular_values();
    let (smin, smax) = (sv.min(), sv.max());
    if !(smin > RANK_TOL * smax) {
        return Err(Error::Rank(format!(
            "singular values span [{smin:.3e}, {smax:.3e}]"
        )));
    }
    Ok(smax / smin)
}

/// Checks `κ(B) ≤ κ(AB)·κ(A)` up to a relative slack of `1e-8`.
pub fn condition_composition_check(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<bool> {
    if a.ncols() != b.nrows() {
        return Err(Error::Dimension(format!(
            "cannot multiply {}x{} by {}x{}",
            a.nrows(),
            a.ncols(),
            b.nrows(),
            b.ncols()
        )));
    }
    let ka = condition_number(a)?;
    let kb = condition_number(b)?;
    let kab = condition_number(&(a * b))?;
    Ok(kb <= kab * ka * (1.0 + 1e-8))
}
