//! Gauss-Newton training of the two-layer network.
//!
//! Each outer step linearizes the network at the current weights, finds an
//! approximate `g` with `J Jᵀ g ≈ f − y`, and moves `W ← W − Jᵀ g`. The inner
//! system is the normal equation of the tall operator `Jᵀ`, handed to the
//! sketch-preconditioned solver with relative tolerance `ε₀`.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{forward, gradient, flatten_rows, implicit_jacobian, min_eigen, ntk_kernel, Dataset, KernelMethod, NetworkState};
use crate::operator::Transposed;
use crate::regression::{fast_regression, IterationMode, RegressionConfig};
use crate::rng::derive_seed;

/// Largest admissible inner tolerance.
pub const EPS0_CAP: f64 = 1.0 / 6.0;

/// Largest sample count the dense Gram solve accepts.
pub const EXACT_GGN_MAX_SAMPLES: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    /// Sketch-preconditioned Richardson iteration.
    Fast,
    /// Dense Cholesky solve of the Gram system.
    Exact,
    /// Sketch-preconditioned conjugate gradient.
    Cg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaSource {
    KernelClosedForm,
    KernelMonteCarlo,
    GramEigensolve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_outer_iters: usize,
    /// Stop once `‖f_t − y‖₂` is at most this.
    pub target_residual: f64,
    pub eps0_override: Option<f64>,
    pub solver: SolverKind,
    pub seed: u64,
    pub lambda_source: LambdaSource,
    /// Draws for the Monte-Carlo kernel when that is the λ source.
    pub kernel_samples: usize,
    pub sketch_rows: Option<usize>,
    /// Compute `λ_min(G_t)` every this many iterations (never when `None`).
    pub spot_check_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 10,
            target_residual: 1e-10,
            eps0_override: None,
            solver: SolverKind::Fast,
            seed: 0,
            lambda_source: LambdaSource::GramEigensolve,
            kernel_samples: 100_000,
            sketch_rows: None,
            spot_check_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_outer_iters == 0 {
            return Err(Error::Config("at least one outer iteration is required".into()));
        }
        if !(self.target_residual > 0.0) {
            return Err(Error::Config("target residual must be positive".into()));
        }
        if let Some(e) = self.eps0_override {
            if !(e > 0.0 && e <= EPS0_CAP) {
                return Err(Error::Config(format!("eps0 override must lie in (0, 1/6], got {e}")));
            }
        }
        if self.spot_check_every == Some(0) {
            return Err(Error::Config("spot-check interval must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub jacobian_ns: u64,
    pub sketch_ns: u64,
    pub precondition_ns: u64,
    pub iterate_ns: u64,
    pub update_ns: u64,
}

impl PhaseTimings {
    pub fn total_ns(&self) -> u64 {
        self.jacobian_ns + self.sketch_ns + self.precondition_ns + self.iterate_ns + self.update_ns
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainIteration {
    pub iteration: usize,
    /// `‖f_{t+1} − y‖₂` after this step.
    pub residual: f64,
    pub inner_iterations: usize,
    /// `‖J Jᵀ g − (f_t − y)‖ / ‖f_t − y‖` for the step actually taken.
    pub inner_relative_residual: f64,
    /// `max_r ‖w_r(t+1) − w_r(0)‖₂`.
    pub max_weight_movement: f64,
    pub jacobian_frobenius: f64,
    /// `λ_min(G_t)` on spot-checked iterations.
    pub lambda_min_gram: Option<f64>,
    pub timings: PhaseTimings,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainStatus {
    Converged,
    MaxIterations,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub initial_residual: f64,
    pub lambda_hat: Option<f64>,
    pub eps0: Option<f64>,
    pub iterations: Vec<TrainIteration>,
    pub status: TrainStatus,
}

impl TrainTrace {
    /// Residual norms `‖f_t − y‖₂` for `t = 0, 1, …`.
    pub fn residuals(&self) -> Vec<f64> {
        std::iter::once(self.initial_residual)
            .chain(self.iterations.iter().map(|it| it.residual))
            .collect()
    }

    /// Per-step ratios `‖f_{t+1} − y‖ / ‖f_t − y‖`.
    pub fn ratios(&self) -> Vec<f64> {
        self.residuals().windows(2).map(|w| w[1] / w[0]).collect()
    }

    pub fn final_residual(&self) -> f64 {
        *self.residuals().last().expect("initial residual is always present")
    }

    pub fn succeeded(&self) -> bool {
        self.status != TrainStatus::Diverged
    }
}

/// Inner tolerance `ε₀ = min{√(λ/n)/6, 1/6}` unless overridden.
pub fn choose_eps0(lambda_hat: f64, n: usize, override_eps0: Option<f64>) -> Result<f64> {
    if !(lambda_hat > 0.0) {
        return Err(Error::NonPositiveLambda(lambda_hat));
    }
    if let Some(e) = override_eps0 {
        if !(e > 0.0 && e <= EPS0_CAP) {
            return Err(Error::Config(format!("eps0 override must lie in (0, 1/6], got {e}")));
        }
        return Ok(e);
    }
    Ok(((lambda_hat / n.max(1) as f64).sqrt() / 6.0).min(EPS0_CAP))
}

/// `λ̂` from the configured source, evaluated at the current weights.
pub fn estimate_lambda(net: &NetworkState, data: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    match cfg.lambda_source {
        LambdaSource::GramEigensolve => min_eigen(&implicit_jacobian(net, data)?.gram()),
        LambdaSource::KernelClosedForm => Ok(ntk_kernel(data, KernelMethod::ClosedForm, 0, 0)?.lambda_min),
        LambdaSource::KernelMonteCarlo => Ok(ntk_kernel(
            data,
            KernelMethod::MonteCarlo,
            cfg.kernel_samples,
            derive_seed(cfg.seed, "kernel", 0),
        )?
        .lambda_min),
    }
}

/// Tracks the two-consecutive-increase divergence rule.
#[derive(Default)]
struct DivergenceWatch {
    increases: usize,
}

impl DivergenceWatch {
    fn diverged(&mut self, prev: f64, next: f64) -> bool {
        if next > prev || !next.is_finite() {
            self.increases += 1;
        } else {
            self.increases = 0;
        }
        self.increases >= 2 || !next.is_finite()
    }
}

/// Gauss-Newton training with the inner solver chosen by `cfg.solver`.
///
/// Updates `net` in place and returns the per-iteration trace. A residual
/// that grows on two consecutive steps ends the run with
/// [`TrainStatus::Diverged`].
pub fn train_gauss_newton(net: &mut NetworkState, data: &Dataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    cfg.validate()?;
    let n = data.len();
    if net.width() * net.input_dim() < n {
        return Err(Error::Config(format!(
            "{} parameters cannot fit {n} samples",
            net.width() * net.input_dim()
        )));
    }
    if cfg.solver == SolverKind::Exact && n > EXACT_GGN_MAX_SAMPLES {
        return Err(Error::Config(format!(
            "dense Gram solve is limited to {EXACT_GGN_MAX_SAMPLES} samples, got {n}"
        )));
    }
    let initial = net.clone();
    let mut residual = forward(net, data)? - data.labels();
    let mut trace = TrainTrace {
        initial_residual: residual.norm(),
        lambda_hat: None,
        eps0: None,
        iterations: Vec::new(),
        status: TrainStatus::Converged,
    };
    if trace.initial_residual <= cfg.target_residual {
        return Ok(trace);
    }
    let lambda_hat = estimate_lambda(net, data, cfg)?;
    let eps0 = choose_eps0(lambda_hat, n, cfg.eps0_override)?;
    trace.lambda_hat = Some(lambda_hat);
    trace.eps0 = Some(eps0);

    let mut watch = DivergenceWatch::default();
    trace.status = TrainStatus::MaxIterations;
    for t in 0..cfg.max_outer_iters {
        let mut timings = PhaseTimings::default();
        let start = Instant::now();
        let jac = implicit_jacobian(net, data)?;
        timings.jacobian_ns = start.elapsed().as_nanos() as u64;

        let rhs_norm = residual.norm();
        let (g, inner_iterations) = match cfg.solver {
            SolverKind::Exact => {
                let start = Instant::now();
                let gram = jac.gram();
                let g = gram.clone().cholesky().map(|c| c.solve(&residual)).ok_or_else(|| {
                    let lam = min_eigen(&gram).unwrap_or(f64::NAN);
                    Error::Rank(format!("Gram matrix is singular (λ_min = {lam:.3e})"))
                })?;
                timings.iterate_ns = start.elapsed().as_nanos() as u64;
                (g, 0)
            }
            SolverKind::Fast | SolverKind::Cg => {
                let rcfg = RegressionConfig {
                    sketch_rows: cfg.sketch_rows,
                    mode: if cfg.solver == SolverKind::Cg {
                        IterationMode::ConjugateGradient
                    } else {
                        IterationMode::Richardson
                    },
                    ..RegressionConfig::new(eps0, derive_seed(cfg.seed, "gn-sketch", t as u64))
                };
                let report = fast_regression(&Transposed(&jac), &residual, &rcfg)?;
                timings.sketch_ns = report.timings.sketch_ns;
                timings.precondition_ns = report.timings.precondition_ns;
                timings.iterate_ns = report.timings.iterate_ns;
                (report.solution, report.iterations)
            }
        };
        let inner_relative_residual = (jac.gram() * &g - &residual).norm() / rhs_norm;
        let lambda_min_gram = match cfg.spot_check_every {
            Some(every) if t % every == 0 => Some(min_eigen(&jac.gram())?),
            _ => None,
        };

        let start = Instant::now();
        net.add_flat(-1.0, &jac.jac_apply_transpose(&g))?;
        residual = forward(net, data)? - data.labels();
        timings.update_ns = start.elapsed().as_nanos() as u64;

        let next = residual.norm();
        trace.iterations.push(TrainIteration {
            iteration: t,
            residual: next,
            inner_iterations,
            inner_relative_residual,
            max_weight_movement: net.max_row_distance(&initial),
            jacobian_frobenius: jac.frobenius_norm(),
            lambda_min_gram,
            timings,
        });
        if watch.diverged(rhs_norm, next) {
            trace.status = TrainStatus::Diverged;
            break;
        }
        if next <= cfg.target_residual {
            trace.status = TrainStatus::Converged;
            break;
        }
    }
    Ok(trace)
}

/// The dense `O(mn²)`-per-step Gram-Gauss-Newton reference.
pub fn train_exact_ggn(net: &mut NetworkState, data: &Dataset, cfg: &TrainConfig) -> Result<TrainTrace> {
    let cfg = TrainConfig {
        solver: SolverKind::Exact,
        ..cfg.clone()
    };
    train_gauss_newton(net, data, &cfg)
}

/// Plain gradient descent `W ← W − η ∇L` for `max_iters` steps.
pub fn train_gradient_descent(
    net: &mut NetworkState,
    data: &Dataset,
    step_size: f64,
    max_iters: usize,
) -> Result<TrainTrace> {
    if !(step_size >= 0.0) || !step_size.is_finite() {
        return Err(Error::Config(format!("step size must be nonnegative, got {step_size}")));
    }
    let initial = net.clone();
    let mut prev = (forward(net, data)? - data.labels()).norm();
    let mut trace = TrainTrace {
        initial_residual: prev,
        lambda_hat: None,
        eps0: None,
        iterations: Vec::new(),
        status: TrainStatus::MaxIterations,
    };
    if prev == 0.0 {
        trace.status = TrainStatus::Converged;
        return Ok(trace);
    }
    let mut watch = DivergenceWatch::default();
    for t in 0..max_iters {
        let start = Instant::now();
        let grad = gradient(net, data)?;
        let jacobian_ns = start.elapsed().as_nanos() as u64;
        let start = Instant::now();
        net.add_flat(-step_size, &flatten_rows(&grad))?;
        let next = (forward(net, data)? - data.labels()).norm();
        let update_ns = start.elapsed().as_nanos() as u64;
        trace.iterations.push(TrainIteration {
            iteration: t,
            residual: next,
            inner_iterations: 0,
            inner_relative_residual: f64::NAN,
            max_weight_movement: net.max_row_distance(&initial),
            jacobian_frobenius: f64::NAN,
            lambda_min_gram: None,
            timings: PhaseTimings {
                jacobian_ns,
                update_ns,
                ..PhaseTimings::default()
            },
        });
        if watch.diverged(prev, next) {
            trace.status = TrainStatus::Diverged;
            break;
        }
        if next == 0.0 {
            trace.status = TrainStatus::Converged;
            break;
        }
        prev = next;
    }
    Ok(trace)
}

/// Flattened step `Jᵀ g` for a given inner solution, exposed for checks.
pub fn gauss_newton_step(net: &NetworkState, data: &Dataset, g: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(implicit_jacobian(net, data)?.jac_apply_transpose(g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::init_network;
    use crate::rng::rng_from_seed;
    use nalgebra::DMatrix;
    use rand_distr::{Distribution, StandardNormal};

    fn unit_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); z.tanh() });
        Dataset::normalized(x, y).unwrap()
    }

    #[test]
    fn eps0_formula() {
        assert!((choose_eps0(16.0, 16, None).unwrap() - 1.0 / 6.0).abs() < 1e-15);
        assert!((choose_eps0(16.0 / 36.0, 16, None).unwrap() - 1.0 / 36.0).abs() < 1e-15);
        assert_eq!(choose_eps0(0.5, 4, Some(0.01)).unwrap(), 0.01);
        assert!(matches!(choose_eps0(0.0, 4, None), Err(Error::NonPositiveLambda(_))));
        assert!(matches!(choose_eps0(-1.0, 4, None), Err(Error::NonPositiveLambda(_))));
        assert!(choose_eps0(0.5, 4, Some(0.5)).is_err());
    }

    #[test]
    fn eps0_from_kernel_is_admissible() {
        let data = unit_data(8, 4, 3);
        let lam = ntk_kernel(&data, KernelMethod::MonteCarlo, 100_000, 1).unwrap().lambda_min;
        let e = choose_eps0(lam, 8, None).unwrap();
        assert!(e > 0.0 && e <= 1.0 / 6.0);
    }

    #[test]
    fn fitted_labels_need_no_steps() {
        let mut net = init_network(64, 3, 1).unwrap();
        let data = unit_data(4, 3, 2);
        let data = data.with_labels(forward(&net, &data).unwrap()).unwrap();
        let trace = train_gauss_newton(&mut net, &data, &TrainConfig::default()).unwrap();
        assert!(trace.iterations.is_empty());
        assert_eq!(trace.residuals(), vec![0.0]);
    }

    #[test]
    fn exact_step_matches_dense_gauss_newton() {
        let m = 8;
        let d = 3;
        let mut net = init_network(m, d, 4).unwrap();
        let data = unit_data(2, d, 5);
        let w0 = net.flat_weights();
        let jac = implicit_jacobian(&net, &data).unwrap();
        let dense = crate::operator::LinearOperator::to_dense(&jac);
        let r = forward(&net, &data).unwrap() - data.labels();
        let g = (&dense * dense.transpose()).try_inverse().unwrap() * &r;
        let expected = &w0 - dense.transpose() * g;

        let cfg = TrainConfig {
            max_outer_iters: 1,
            solver: SolverKind::Exact,
            ..TrainConfig::default()
        };
        train_gauss_newton(&mut net, &data, &cfg).unwrap();
        assert!((net.flat_weights() - expected).amax() <= 1e-10);
    }

    #[test]
    fn update_rule_identity_holds_for_fast_solver() {
        let mut net = init_network(256, 4, 8).unwrap();
        let data = unit_data(6, 4, 9);
        let before = net.clone();
        let cfg = TrainConfig {
            max_outer_iters: 1,
            seed: 5,
            ..TrainConfig::default()
        };
        let trace = train_gauss_newton(&mut net, &data, &cfg).unwrap();
        let it = &trace.iterations[0];
        assert!(it.inner_relative_residual <= trace.eps0.unwrap());
        // Recover g from the dense Gram system and check the step is Jᵀg.
        let jac = implicit_jacobian(&before, &data).unwrap();
        let step = before.flat_weights() - net.flat_weights();
        let dense = crate::operator::LinearOperator::to_dense(&jac);
        let g = (&dense * dense.transpose()).try_inverse().unwrap() * (&dense * &step);
        assert!((gauss_newton_step(&before, &data, &g).unwrap() - &step).amax() <= 1e-9);
    }

    #[test]
    fn exact_ggn_is_the_exact_solver_path() {
        let data = unit_data(6, 3, 10);
        let cfg = TrainConfig {
            max_outer_iters: 4,
            ..TrainConfig::default()
        };
        let mut a = init_network(512, 3, 11).unwrap();
        let mut b = a.clone();
        let ta = train_exact_ggn(&mut a, &data, &cfg).unwrap();
        let tb = train_gauss_newton(&mut b, &data, &TrainConfig { solver: SolverKind::Exact, ..cfg }).unwrap();
        assert_eq!(ta.residuals(), tb.residuals());
        assert_eq!(a, b);
    }

    #[test]
    fn solvers_converge_on_small_instance() {
        let data = unit_data(8, 4, 12);
        for solver in [SolverKind::Fast, SolverKind::Cg, SolverKind::Exact] {
            let mut net = init_network(2048, 4, 13).unwrap();
            let cfg = TrainConfig {
                solver,
                seed: 1,
                spot_check_every: Some(1),
                ..TrainConfig::default()
            };
            let trace = train_gauss_newton(&mut net, &data, &cfg).unwrap();
            assert_eq!(trace.status, TrainStatus::Converged, "{solver:?}: {:?}", trace.residuals());
            assert!(trace.ratios().iter().all(|&q| q < 0.9), "{solver:?}: {:?}", trace.ratios());
            let moves: Vec<f64> = trace.iterations.iter().map(|i| i.max_weight_movement).collect();
            // Movement plateaus: later steps barely change the distance from init.
            let peak = moves.iter().copied().fold(0.0, f64::max);
            assert!(moves[moves.len() - 1] >= 0.99 * peak, "{solver:?}: {moves:?}");
            eprintln!("{solver:?} {:?}", trace.residuals());
        }
    }

    #[test]
    fn gradient_descent_edge_cases() {
        let data = unit_data(4, 3, 14);
        let mut net = init_network(32, 3, 15).unwrap();
        let start = net.clone();
        let trace = train_gradient_descent(&mut net, &data, 0.0, 5).unwrap();
        assert_eq!(net, start);
        assert!(trace.residuals().windows(2).all(|w| w[0] == w[1]));

        let fitted = data.with_labels(forward(&net, &data).unwrap()).unwrap();
        let trace = train_gradient_descent(&mut net, &fitted, 0.1, 5).unwrap();
        assert!(trace.iterations.is_empty());
        assert_eq!(net, start);
        assert!(train_gradient_descent(&mut net, &data, -1.0, 5).is_err());
    }

    #[test]
    fn gradient_descent_is_slower_than_gauss_newton() {
        let data = unit_data(8, 4, 16);
        let mut gn = init_network(1024, 4, 17).unwrap();
        let mut gd = gn.clone();
        let gn_trace = train_gauss_newton(&mut gn, &data, &TrainConfig { max_outer_iters: 3, ..TrainConfig::default() }).unwrap();
        let goal = gn_trace.final_residual();
        let gd_trace = train_gradient_descent(&mut gd, &data, 1.0, 200).unwrap();
        let gd_steps = gd_trace.residuals().iter().position(|&r| r <= goal);
        assert!(gd_steps.is_none_or(|s| s > gn_trace.iterations.len()));
    }

    #[test]
    fn config_validation() {
        let mut net = init_network(4, 2, 0).unwrap();
        let data = unit_data(3, 2, 0);
        for cfg in [
            TrainConfig { max_outer_iters: 0, ..TrainConfig::default() },
            TrainConfig { target_residual: 0.0, ..TrainConfig::default() },
            TrainConfig { eps0_override: Some(0.2), ..TrainConfig::default() },
        ] {
            assert!(matches!(train_gauss_newton(&mut net, &data, &cfg), Err(Error::Config(_))));
        }
        // 2 parameters cannot interpolate 3 points.
        let mut thin = init_network(1, 2, 0).unwrap();
        assert!(train_gauss_newton(&mut thin, &data, &TrainConfig::default()).is_err());
    }

    #[test]
    fn divergence_watch_needs_two_increases() {
        let mut w = DivergenceWatch::default();
        assert!(!w.diverged(1.0, 2.0));
        assert!(!w.diverged(2.0, 1.0));
        assert!(!w.diverged(1.0, 1.5));
        assert!(w.diverged(1.5, 1.6));
        assert!(DivergenceWatch::default().diverged(1.0, f64::NAN));
    }
}
