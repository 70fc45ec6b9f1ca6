//! Approximate Newton steps for smooth strongly convex objectives that expose
//! a square root of their Hessian.
//!
//! Each step solves `(∇²f^{1/2})ᵀ(∇²f^{1/2}) g = ∇f` to relative accuracy
//! `1/(4κ)` with the sketch-preconditioned solver and moves `x ← x − g`.
//! From a start within `γ/(2L)` of the optimum the error obeys
//! `e_{t+1} ≤ e_t/4 + (L/γ) e_t²`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{LinearOperator, RowScaled};
use crate::regression::{fast_regression, RegressionConfig};
use crate::rng::derive_seed;

/// Largest dimension for dense Hessian work.
pub const DENSE_MAX_DIM: usize = 512;

/// Regularity constants; `None` means unknown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvexConstants {
    pub gamma: Option<f64>,
    pub beta: Option<f64>,
    pub hessian_lipschitz: Option<f64>,
}

impl ConvexConstants {
    pub fn kappa(&self) -> Option<f64> {
        match (self.gamma, self.beta) {
            (Some(g), Some(b)) if g > 0.0 => Some(b / g),
            _ => None,
        }
    }
}

/// First-order information plus a factored Hessian.
pub trait ConvexOracle: Sync {
    fn dim(&self) -> usize;

    fn value(&self, x: &DVector<f64>) -> Result<f64>;

    fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>>;

    /// An operator `S(x)` with `S(x)ᵀ S(x) = ∇²f(x)`.
    fn sqrt_hessian(&self, x: &DVector<f64>) -> Result<Box<dyn LinearOperator + '_>>;

    fn constants(&self) -> ConvexConstants {
        ConvexConstants::default()
    }
}

/// Per-row loss `g_i(z)` of a generalized linear model, labels folded in.
#[derive(Debug, Clone, Copy)]
pub enum GlmLink {
    /// `½(z − b)²`.
    LeastSquares,
    /// `ln(1 + eᶻ) − b z` with `b ∈ [0, 1]`.
    Logistic,
    /// User-supplied `(g, g′, g″)` as functions of `(z, b)`.
    Custom {
        value: fn(f64, f64) -> f64,
        first: fn(f64, f64) -> f64,
        second: fn(f64, f64) -> f64,
    },
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

impl GlmLink {
    pub fn value(&self, z: f64, b: f64) -> f64 {
        match self {
            GlmLink::LeastSquares => 0.5 * (z - b) * (z - b),
            GlmLink::Logistic => softplus(z) - b * z,
            GlmLink::Custom { value, .. } => value(z, b),
        }
    }

    pub fn first(&self, z: f64, b: f64) -> f64 {
        match self {
            GlmLink::LeastSquares => z - b,
            GlmLink::Logistic => sigmoid(z) - b,
            GlmLink::Custom { first, .. } => first(z, b),
        }
    }

    pub fn second(&self, z: f64, b: f64) -> f64 {
        match self {
            GlmLink::LeastSquares => 1.0,
            GlmLink::Logistic => {
                let s = sigmoid(z);
                s * (1.0 - s)
            }
            GlmLink::Custom { second, .. } => second(z, b),
        }
    }

    /// Bound on `|g‴|`, when known.
    fn third_bound(&self) -> Option<f64> {
        match self {
            GlmLink::LeastSquares => Some(0.0),
            // max |σ(1−σ)(1−2σ)| = 1/(6√3).
            GlmLink::Logistic => Some(1.0 / (6.0 * 3f64.sqrt())),
            GlmLink::Custom { .. } => None,
        }
    }

    /// Uniform bound on `g″`, when known.
    fn second_bound(&self) -> Option<f64> {
        match self {
            GlmLink::LeastSquares => Some(1.0),
            GlmLink::Logistic => Some(0.25),
            GlmLink::Custom { .. } => None,
        }
    }
}

/// `f(x) = Σ_i g_i(⟨a_i, x⟩)`.
#[derive(Debug, Clone)]
pub struct GlmProblem {
    data: DMatrix<f64>,
    labels: DVector<f64>,
    link: GlmLink,
}

impl GlmProblem {
    pub fn new(data: DMatrix<f64>, labels: DVector<f64>, link: GlmLink) -> Result<Self> {
        if data.nrows() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} rows but {} labels",
                data.nrows(),
                labels.len()
            )));
        }
        if data.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Numerical("GLM data".into()));
        }
        Ok(Self { data, labels, link })
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn link(&self) -> GlmLink {
        self.link
    }

    fn margins(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        if x.len() != self.data.ncols() {
            return Err(Error::Dimension(format!(
                "point has length {} but problem has dimension {}",
                x.len(),
                self.data.ncols()
            )));
        }
        Ok(&self.data * x)
    }
}

/// `∇²f(x)^{1/2} = D(x) A` with `D_ii = √g_i″(⟨a_i, x⟩)`.
pub fn glm_sqrt_hessian<'a>(prob: &'a GlmProblem, x: &DVector<f64>) -> Result<RowScaled<'a>> {
    let z = prob.margins(x)?;
    let mut scale = DVector::zeros(z.len());
    for (i, (&zi, &bi)) in z.iter().zip(prob.labels.iter()).enumerate() {
        let h = prob.link.second(zi, bi);
        if h.is_nan() {
            return Err(Error::Numerical(format!("second derivative at row {i}")));
        }
        if h < 0.0 {
            return Err(Error::ConvexityViolation { row: i, value: h });
        }
        scale[i] = h.sqrt();
    }
    RowScaled::new(&prob.data, scale)
}

impl ConvexOracle for GlmProblem {
    fn dim(&self) -> usize {
        self.data.ncols()
    }

    fn value(&self, x: &DVector<f64>) -> Result<f64> {
        let z = self.margins(x)?;
        Ok(z.iter().zip(self.labels.iter()).map(|(&zi, &bi)| self.link.value(zi, bi)).sum())
    }

    fn grad(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        let z = self.margins(x)?;
        let w = DVector::from_fn(z.len(), |i, _| self.link.first(z[i], self.labels[i]));
        let g = self.data.tr_mul(&w);
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("gradient".into()));
        }
        Ok(g)
    }

    fn sqrt_hessian(&self, x: &DVector<f64>) -> Result<Box<dyn LinearOperator + '_>> {
        Ok(Box::new(glm_sqrt_hessian(self, x)?))
    }

    fn constants(&self) -> ConvexConstants {
        let p = self.data.ncols();
        if p > DENSE_MAX_DIM {
            return ConvexConstants::default();
        }
        let eig = SymmetricEigen::new(self.data.tr_mul(&self.data)).eigenvalues;
        let (lo, hi) = (eig.min().max(0.0), eig.max());
        let row_max = self.data.row_iter().map(|r| r.norm()).fold(0.0, f64::max);
        let gamma = match self.link {
            GlmLink::LeastSquares if lo > 0.0 => Some(lo),
            _ => None,
        };
        ConvexConstants {
            gamma,
            beta: self.link.second_bound().map(|b| b * hi),
            hessian_lipschitz: self.link.third_bound().map(|t| t * row_max * hi),
        }
    }
}

/// Dense Hessian `S(x)ᵀ S(x)`.
pub fn dense_hessian<O: ConvexOracle + ?Sized>(oracle: &O, x: &DVector<f64>) -> Result<DMatrix<f64>> {
    if oracle.dim() > DENSE_MAX_DIM {
        return Err(Error::Config(format!(
            "dense Hessian limited to dimension {DENSE_MAX_DIM}, got {}",
            oracle.dim()
        )));
    }
    let s = oracle.sqrt_hessian(x)?.to_dense();
    Ok(s.tr_mul(&s))
}

/// `λ_max/λ_min` of the Hessian at `x`, by dense eigensolve.
pub fn estimate_kappa<O: ConvexOracle + ?Sized>(oracle: &O, x: &DVector<f64>) -> Result<f64> {
    let eig = SymmetricEigen::new(dense_hessian(oracle, x)?).eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if !(lo > 1e-14 * hi) {
        return Err(Error::Rank(format!("Hessian is singular (eigenvalues in [{lo:.3e}, {hi:.3e}])")));
    }
    Ok(hi / lo)
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOptions {
    pub max_iters: usize,
    /// Supplied `κ = β/γ`; estimated at `x0` when `None` (dense instances only).
    pub kappa: Option<f64>,
    /// Stop when `‖∇f‖₂` is at most this.
    pub grad_tol: f64,
    /// Known optimum for error tracking.
    pub reference: Option<DVector<f64>>,
    pub seed: u64,
    pub sketch_rows: Option<usize>,
}

impl NewtonOptions {
    pub fn new(max_iters: usize) -> Self {
        Self {
            max_iters,
            kappa: None,
            grad_tol: 0.0,
            reference: None,
            seed: 0,
            sketch_rows: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonIteration {
    pub iteration: usize,
    /// `‖∇f(x_{t+1})‖₂`.
    pub grad_norm: f64,
    /// `‖x_{t+1} − x_ref‖₂` when a reference is supplied.
    pub error: Option<f64>,
    pub inner_iterations: usize,
    /// `‖H g − ∇f‖ / ‖∇f‖` of the step taken.
    pub inner_relative_residual: f64,
    pub time_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonTrace {
    pub initial_grad_norm: f64,
    pub initial_error: Option<f64>,
    pub kappa: Option<f64>,
    pub iterations: Vec<NewtonIteration>,
    pub solution: DVector<f64>,
}

impl NewtonTrace {
    pub fn grad_norms(&self) -> Vec<f64> {
        std::iter::once(self.initial_grad_norm)
            .chain(self.iterations.iter().map(|it| it.grad_norm))
            .collect()
    }

    /// `‖x_t − x_ref‖` for `t = 0, 1, …`, empty without a reference.
    pub fn errors(&self) -> Vec<f64> {
        self.initial_error
            .into_iter()
            .chain(self.iterations.iter().filter_map(|it| it.error))
            .collect()
    }
}

fn check_start<O: ConvexOracle + ?Sized>(oracle: &O, x0: &DVector<f64>, opts: &NewtonOptions) -> Result<()> {
    if x0.len() != oracle.dim() {
        return Err(Error::Dimension(format!(
            "start point has length {} but oracle has dimension {}",
            x0.len(),
            oracle.dim()
        )));
    }
    if let Some(r) = &opts.reference {
        if r.len() != oracle.dim() {
            return Err(Error::Dimension("reference point has the wrong length".into()));
        }
    }
    Ok(())
}

fn newton_loop<O, F>(oracle: &O, x0: &DVector<f64>, opts: &NewtonOptions, kappa: Option<f64>, mut solve: F) -> Result<NewtonTrace>
where
    O: ConvexOracle + ?Sized,
    F: FnMut(usize, &DVector<f64>, &DVector<f64>) -> Result<(DVector<f64>, usize, f64)>,
{
    let error_of = |x: &DVector<f64>| opts.reference.as_ref().map(|r| (x - r).norm());
    let mut x = x0.clone();
    let mut grad = oracle.grad(&x)?;
    let mut trace = NewtonTrace {
        initial_grad_norm: grad.norm(),
        initial_error: error_of(&x),
        kappa,
        iterations: Vec::new(),
        solution: x.clone(),
    };
    for t in 0..opts.max_iters {
        if grad.norm() <= opts.grad_tol {
            break;
        }
        let start = Instant::now();
        let (step, inner_iterations, inner_relative_residual) = solve(t, &x, &grad)?;
        x -= step;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Newton iterate".into()));
        }
        grad = oracle.grad(&x)?;
        trace.iterations.push(NewtonIteration {
            iteration: t,
            grad_norm: grad.norm(),
            error: error_of(&x),
            inner_iterations,
            inner_relative_residual,
            time_ns: start.elapsed().as_nanos() as u64,
        });
    }
    trace.solution = x;
    Ok(trace)
}

/// Newton iteration with inner solves accurate to `1/(4κ)`.
///
/// The start point must lie in the quadratic basin (`‖x0 − x*‖ ≤ γ/(2L)`)
/// for the contraction guarantee; this cannot be checked without `x*`.
pub fn fast_newton<O: ConvexOracle + ?Sized>(oracle: &O, x0: &DVector<f64>, opts: &NewtonOptions) -> Result<NewtonTrace> {
    check_start(oracle, x0, opts)?;
    let kappa = match opts.kappa {
        Some(k) if k >= 1.0 && k.is_finite() => k,
        Some(k) => return Err(Error::Config(format!("κ must be at least 1, got {k}"))),
        None => estimate_kappa(oracle, x0).map_err(|e| match e {
            Error::Config(_) => Error::Config("κ must be supplied for large instances".into()),
            other => other,
        })?,
    };
    let eps = 1.0 / (4.0 * kappa);
    newton_loop(oracle, x0, opts, Some(kappa), |t, x, grad| {
        let sqrt = oracle.sqrt_hessian(x)?;
        let cfg = RegressionConfig {
            sketch_rows: opts.sketch_rows,
            ..RegressionConfig::new(eps, derive_seed(opts.seed, "newton-sketch", t as u64))
        };
        let report = fast_regression(&*sqrt, grad, &cfg)?;
        let rel = report.final_residual() / grad.norm();
        Ok((report.solution, report.iterations, rel))
    })
}

/// Dense Newton reference `x ← x − H⁻¹∇f`.
pub fn exact_newton<O: ConvexOracle + ?Sized>(oracle: &O, x0: &DVector<f64>, opts: &NewtonOptions) -> Result<NewtonTrace> {
    check_start(oracle, x0, opts)?;
    newton_loop(oracle, x0, opts, opts.kappa, |_, x, grad| {
        let h = dense_hessian(oracle, x)?;
        let chol = h.clone().cholesky().ok_or_else(|| Error::Rank("Hessian is not positive definite".into()))?;
        let step = chol.solve(grad);
        let rel = (h * &step - grad).norm() / grad.norm();
        Ok((step, 0, rel))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::adjointness_error;
    use crate::rng::rng_from_seed;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
    }

    fn logistic(q: usize, p: usize, seed: u64) -> GlmProblem {
        let a = gaussian(q, p, seed) / (p as f64).sqrt();
        let truth = gaussian(p, 1, seed + 1).column(0).into_owned();
        let mut rng = rng_from_seed(seed + 2);
        let z = &a * &truth;
        let b = DVector::from_fn(q, |i, _| if rng.random::<f64>() < sigmoid(z[i]) { 1.0 } else { 0.0 });
        GlmProblem::new(a, b, GlmLink::Logistic).unwrap()
    }

    #[test]
    fn least_squares_sqrt_hessian_is_the_data() {
        let a = gaussian(20, 4, 1);
        let prob = GlmProblem::new(a.clone(), DVector::zeros(20), GlmLink::LeastSquares).unwrap();
        let s = glm_sqrt_hessian(&prob, &DVector::from_element(4, 0.3)).unwrap();
        assert!((s.to_dense() - &a).amax() < 1e-15);
        assert!((dense_hessian(&prob, &DVector::zeros(4)).unwrap() - a.tr_mul(&a)).amax() < 1e-12);
    }

    #[test]
    fn logistic_scale_at_zero_margin() {
        let a = gaussian(5, 3, 2);
        let prob = GlmProblem::new(a, DVector::from_element(5, 1.0), GlmLink::Logistic).unwrap();
        let s = glm_sqrt_hessian(&prob, &DVector::zeros(3)).unwrap();
        assert!(s.scale().iter().all(|&d| (d - 0.5).abs() < 1e-15));
    }

    #[test]
    fn sqrt_hessian_matches_finite_differences() {
        let prob = logistic(64, 8, 3);
        let x = gaussian(8, 1, 4).column(0).into_owned() * 0.5;
        let h = dense_hessian(&prob, &x).unwrap();
        let step = 1e-5;
        for j in 0..8 {
            let mut xp = x.clone();
            xp[j] += step;
            let mut xm = x.clone();
            xm[j] -= step;
            let col = (prob.grad(&xp).unwrap() - prob.grad(&xm).unwrap()) / (2.0 * step);
            let err = (&col - h.column(j)).norm() / h.column(j).norm();
            assert!(err <= 1e-5, "column {j}: {err}");
        }
        let s = glm_sqrt_hessian(&prob, &x).unwrap();
        assert!(adjointness_error(&s, 5) < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let prob = logistic(40, 5, 6);
        let x = gaussian(5, 1, 7).column(0).into_owned();
        let g = prob.grad(&x).unwrap();
        for j in 0..5 {
            let mut xp = x.clone();
            xp[j] += 1e-6;
            let mut xm = x.clone();
            xm[j] -= 1e-6;
            let fd = (prob.value(&xp).unwrap() - prob.value(&xm).unwrap()) / 2e-6;
            assert!((fd - g[j]).abs() <= 1e-6 * g.amax().max(1.0));
        }
    }

    #[test]
    fn negative_curvature_is_rejected() {
        let concave = GlmLink::Custom {
            value: |z, _| -z * z,
            first: |z, _| -2.0 * z,
            second: |_, _| -2.0,
        };
        let prob = GlmProblem::new(gaussian(6, 2, 8), DVector::zeros(6), concave).unwrap();
        assert!(matches!(
            glm_sqrt_hessian(&prob, &DVector::zeros(2)),
            Err(Error::ConvexityViolation { row: 0, .. })
        ));
    }

    #[test]
    fn stationary_start_stays_put() {
        let a = gaussian(50, 4, 9);
        let x_star = DVector::from_row_slice(&[1.0, -2.0, 0.5, 3.0]);
        let prob = GlmProblem::new(a.clone(), &a * &x_star, GlmLink::LeastSquares).unwrap();
        let trace = fast_newton(&prob, &x_star, &NewtonOptions::new(1)).unwrap();
        assert!((trace.solution - x_star).norm() < 1e-12);
    }

    #[test]
    fn quadratic_contracts_by_a_quarter() {
        let a = gaussian(200, 10, 10);
        let b = gaussian(200, 1, 11).column(0).into_owned();
        let prob = GlmProblem::new(a.clone(), b.clone(), GlmLink::LeastSquares).unwrap();
        let x_star = a.clone().svd(true, true).solve(&b, 1e-14).unwrap();
        let opts = NewtonOptions {
            reference: Some(x_star),
            ..NewtonOptions::new(8)
        };
        let trace = fast_newton(&prob, &DVector::zeros(10), &opts).unwrap();
        let errors = trace.errors();
        for w in errors.windows(2) {
            assert!(w[1] <= 0.25 * w[0] + 1e-10, "{errors:?}");
        }
        let kappa = trace.kappa.unwrap();
        for it in &trace.iterations {
            assert!(it.inner_relative_residual <= 1.0 / (4.0 * kappa) * (1.0 + 1e-9));
        }
    }

    #[test]
    fn exact_newton_solves_quadratic_in_one_step() {
        let a = gaussian(60, 5, 12);
        let b = gaussian(60, 1, 13).column(0).into_owned();
        let prob = GlmProblem::new(a, b, GlmLink::LeastSquares).unwrap();
        let trace = exact_newton(&prob, &DVector::zeros(5), &NewtonOptions::new(1)).unwrap();
        assert!(trace.iterations[0].grad_norm <= 1e-10 * trace.initial_grad_norm);
    }

    #[test]
    fn logistic_fast_matches_exact() {
        let prob = logistic(300, 6, 14);
        let x0 = DVector::zeros(6);
        let reference = exact_newton(&prob, &x0, &NewtonOptions::new(30)).unwrap();
        let grads = reference.grad_norms();
        let strict: Vec<f64> = grads.iter().copied().take_while(|&g| g > 1e-12).collect();
        assert!(strict.windows(2).all(|w| w[1] < w[0]), "{grads:?}");
        let fast = fast_newton(&prob, &x0, &NewtonOptions::new(30)).unwrap();
        assert!((fast.solution - reference.solution).norm() <= 1e-7);
    }

    #[test]
    fn constants_for_least_squares() {
        let a = DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 2.0]));
        let prob = GlmProblem::new(a, DVector::zeros(2), GlmLink::LeastSquares).unwrap();
        let c = prob.constants();
        assert!((c.gamma.unwrap() - 1.0).abs() < 1e-12);
        assert!((c.beta.unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(c.hessian_lipschitz, Some(0.0));
        assert!((c.kappa().unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn option_validation() {
        let prob = logistic(30, 3, 15);
        assert!(fast_newton(&prob, &DVector::zeros(2), &NewtonOptions::new(1)).is_err());
        let opts = NewtonOptions {
            kappa: Some(0.5),
            ..NewtonOptions::new(1)
        };
        assert!(matches!(fast_newton(&prob, &DVector::zeros(3), &opts), Err(Error::Config(_))));
    }
}
