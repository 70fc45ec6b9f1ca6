//! Subcommand implementations. Each returns a finished trace and a success flag.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sketchyggn::convex::{exact_newton, fast_newton, ConvexOracle, NewtonOptions, NewtonTrace, DENSE_MAX_DIM};
use sketchyggn::network::{init_network, ntk_kernel, KernelMethod};
use sketchyggn::regression::{fast_regression, iteration_budget, IterationMode, RegressionConfig};
use sketchyggn::rng::derive_seed;
use sketchyggn::trainer::{train_gauss_newton, LambdaSource, SolverKind, TrainConfig, TrainStatus};

use crate::bench::{bench_scaling, BenchConfig};
use crate::data::{generate_dataset, load_dataset, save_dataset, LabelMode};
use crate::error::{CliError, Result};
use crate::problems::{newton_instance, regression_instance, NewtonProblem};
use crate::trace::{IterationRecord, Trace};

/// Finished run, ready to be written out.
#[derive(Debug)]
pub struct Outcome {
    pub trace: Trace,
    pub success: bool,
    pub status: String,
}

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn require_positive(name: &str, value: usize) -> Result<()> {
    if value == 0 {
        return Err(CliError::Usage(format!("--{name} must be positive")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Solver {
    Fast,
    Exact,
    Cg,
}

impl From<Solver> for SolverKind {
    fn from(s: Solver) -> Self {
        match s {
            Solver::Fast => SolverKind::Fast,
            Solver::Exact => SolverKind::Exact,
            Solver::Cg => SolverKind::Cg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Lambda {
    /// Least eigenvalue of the Gram matrix at initialization.
    Gram,
    /// Least eigenvalue of the closed-form limiting kernel.
    KernelClosedForm,
    /// Least eigenvalue of a Monte-Carlo kernel estimate.
    KernelMonteCarlo,
}

impl From<Lambda> for LambdaSource {
    fn from(l: Lambda) -> Self {
        match l {
            Lambda::Gram => LambdaSource::GramEigensolve,
            Lambda::KernelClosedForm => LambdaSource::KernelClosedForm,
            Lambda::KernelMonteCarlo => LambdaSource::KernelMonteCarlo,
        }
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Number of samples (ignored with --data).
    #[arg(long, default_value_t = 16)]
    pub n: usize,
    /// Input dimension (ignored with --data).
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    /// Hidden width.
    #[arg(long, default_value_t = 8192)]
    pub m: usize,
    /// Maximum outer iterations.
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Stop once the residual norm is at most this.
    #[arg(long, default_value_t = 1e-10)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Solver::Fast)]
    pub solver: Solver,
    #[arg(long, value_enum, default_value_t = Lambda::Gram)]
    pub lambda_source: Lambda,
    /// Draws for the Monte-Carlo kernel λ source.
    #[arg(long, default_value_t = 100_000)]
    pub kernel_samples: usize,
    /// Override the inner-solve accuracy, in (0, 1/6].
    #[arg(long)]
    pub eps0: Option<f64>,
    #[arg(long)]
    pub sketch_rows: Option<usize>,
    /// Compute λ_min of the Gram matrix every this many iterations.
    #[arg(long)]
    pub spot_check_every: Option<usize>,
    #[arg(long, value_enum, default_value_t = LabelMode::Teacher)]
    pub labels: LabelMode,
    /// Load samples from a CSV file instead of generating them.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Rescale loaded inputs to unit norm.
    #[arg(long)]
    pub normalize: bool,
    /// Write the dataset used to this CSV file.
    #[arg(long)]
    pub save_data: Option<PathBuf>,
}

pub fn train(args: &TrainArgs) -> Result<Outcome> {
    require_positive("m", args.m)?;
    require_positive("iters", args.iters)?;
    let data = match &args.data {
        Some(path) => load_dataset(path, args.normalize)?,
        None => generate_dataset(args.n, args.d, derive_seed(args.seed, "data", 0), args.labels)?,
    };
    if let Some(path) = &args.save_data {
        save_dataset(path, &data)?;
    }
    let cfg = TrainConfig {
        max_outer_iters: args.iters,
        target_residual: args.eps,
        eps0_override: args.eps0,
        solver: args.solver.into(),
        seed: args.seed,
        lambda_source: args.lambda_source.into(),
        kernel_samples: args.kernel_samples,
        sketch_rows: args.sketch_rows,
        spot_check_every: args.spot_check_every,
    };
    cfg.validate()?;
    let mut net = init_network(args.m, data.input_dim(), derive_seed(args.seed, "network", 0))?;

    let mut config = to_value(args)?;
    config["n"] = json!(data.len());
    config["d"] = json!(data.input_dim());
    let mut trace = Trace::new("train", config);
    let result = train_gauss_newton(&mut net, &data, &cfg)?;

    trace.push(IterationRecord {
        iteration: 0,
        residual: result.initial_residual,
        ..Default::default()
    });
    for it in &result.iterations {
        let t = it.timings;
        let mut extra = serde_json::Map::new();
        extra.insert("inner_relative_residual".into(), json!(it.inner_relative_residual));
        extra.insert("max_weight_movement".into(), json!(it.max_weight_movement));
        extra.insert("jacobian_frobenius".into(), json!(it.jacobian_frobenius));
        if let Some(l) = it.lambda_min_gram {
            extra.insert("lambda_min_gram".into(), json!(l));
        }
        trace.push(IterationRecord {
            iteration: it.iteration + 1,
            residual: it.residual,
            inner_iters: it.inner_iterations,
            time_ns: t.total_ns(),
            phases: [
                ("jacobian_ns", t.jacobian_ns),
                ("sketch_ns", t.sketch_ns),
                ("precondition_ns", t.precondition_ns),
                ("iterate_ns", t.iterate_ns),
                ("update_ns", t.update_ns),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
            extra,
            ..Default::default()
        });
    }
    trace.push_data(
        "train",
        json!({ "lambda_hat": result.lambda_hat, "eps0": result.eps0 }),
    );
    let status = to_value(&result.status)?.as_str().unwrap_or_default().to_string();
    Ok(Outcome {
        trace,
        success: result.status == TrainStatus::Converged,
        status,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Richardson,
    Cg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RegressArgs {
    /// Rows of the Gaussian matrix A.
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    /// Columns of A.
    #[arg(long, default_value_t = 64)]
    pub k: usize,
    /// Relative residual target.
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long)]
    pub sketch_rows: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Richardson)]
    pub mode: Mode,
    /// Fresh-sketch attempts after a failed one.
    #[arg(long, default_value_t = 3)]
    pub retries: usize,
}

pub fn regress(args: &RegressArgs) -> Result<Outcome> {
    require_positive("n", args.n)?;
    require_positive("k", args.k)?;
    let (a, y) = regression_instance(args.n, args.k, args.seed);
    let cfg = RegressionConfig {
        sketch_rows: args.sketch_rows,
        retries: args.retries,
        mode: match args.mode {
            Mode::Richardson => IterationMode::Richardson,
            Mode::Cg => IterationMode::ConjugateGradient,
        },
        ..RegressionConfig::new(args.eps, derive_seed(args.seed, "regress-sketch", 0))
    };
    let mut trace = Trace::new("regress", to_value(args)?);
    let report = fast_regression(&a, &y, &cfg)?;
    for (t, &residual) in report.residual_history.iter().enumerate() {
        let mut extra = serde_json::Map::new();
        if t > 0 {
            if let Some(c) = report.preconditioned_contraction.get(t - 1) {
                extra.insert("contraction".into(), json!(c));
            }
        }
        let time_ns = if t == 0 { 0 } else { report.iteration_ns.get(t - 1).copied().unwrap_or(0) };
        trace.push(IterationRecord {
            iteration: t,
            residual,
            inner_iters: 0,
            time_ns,
            phases: [("iterate_ns".to_string(), time_ns)].into(),
            extra,
            ..Default::default()
        });
    }
    let y_norm = y.norm();
    let relative = if y_norm > 0.0 { report.final_residual() / y_norm } else { 0.0 };
    trace.push_data(
        "regress",
        json!({
            "y_norm": y_norm,
            "relative_residual": relative,
            "iterations": report.iterations,
            "iteration_budget": iteration_budget(report.condition_estimate, args.eps),
            "condition_estimate": report.condition_estimate,
            "attempts": report.attempts,
            "sketch_rows": report.sketch_rows,
            "timings": report.timings,
        }),
    );
    let success = report.final_residual() <= args.eps * y_norm;
    Ok(Outcome {
        trace,
        success,
        status: if success { "converged" } else { "max-iterations" }.into(),
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NewtonArgs {
    #[arg(long, value_enum, default_value_t = NewtonProblem::Logistic)]
    pub problem: NewtonProblem,
    /// Number of data rows.
    #[arg(long, default_value_t = 1000)]
    pub q: usize,
    /// Parameter dimension.
    #[arg(long, default_value_t = 20)]
    pub p: usize,
    #[arg(long, default_value_t = 30)]
    pub iters: usize,
    /// Condition-number estimate κ ≥ 1; estimated at the start point when omitted.
    #[arg(long)]
    pub kappa: Option<f64>,
    /// Target distance to the reference optimum (gradient norm without one).
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = Solver::Fast)]
    pub solver: Solver,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Dense Newton iterations used to pin down the optimum.
const REFERENCE_ITERS: usize = 60;

pub fn newton(args: &NewtonArgs) -> Result<Outcome> {
    require_positive("q", args.q)?;
    require_positive("p", args.p)?;
    require_positive("iters", args.iters)?;
    let prob = newton_instance(args.problem, args.q, args.p, args.seed)?;
    let x0 = nalgebra::DVector::zeros(prob.dim());
    let reference = if prob.dim() <= DENSE_MAX_DIM {
        let opts = NewtonOptions {
            grad_tol: 1e-14,
            ..NewtonOptions::new(REFERENCE_ITERS)
        };
        Some(exact_newton(&prob, &x0, &opts)?.solution)
    } else {
        None
    };
    let opts = NewtonOptions {
        kappa: args.kappa,
        reference: reference.clone(),
        seed: derive_seed(args.seed, "newton", 0),
        ..NewtonOptions::new(args.iters)
    };
    let mut trace = Trace::new("newton", to_value(args)?);
    let result: NewtonTrace = match args.solver {
        Solver::Exact => exact_newton(&prob, &x0, &opts)?,
        Solver::Fast | Solver::Cg => fast_newton(&prob, &x0, &opts)?,
    };
    let mut first = serde_json::Map::new();
    if let Some(e) = result.initial_error {
        first.insert("error".into(), json!(e));
    }
    trace.push(IterationRecord {
        iteration: 0,
        residual: result.initial_grad_norm,
        extra: first,
        ..Default::default()
    });
    for it in &result.iterations {
        let mut extra = serde_json::Map::new();
        if let Some(e) = it.error {
            extra.insert("error".into(), json!(e));
        }
        extra.insert("inner_relative_residual".into(), json!(it.inner_relative_residual));
        trace.push(IterationRecord {
            iteration: it.iteration + 1,
            residual: it.grad_norm,
            inner_iters: it.inner_iterations,
            time_ns: it.time_ns,
            phases: [("step_ns".to_string(), it.time_ns)].into(),
            extra,
            ..Default::default()
        });
    }
    let final_error = result.errors().last().copied();
    let final_grad = *result.grad_norms().last().expect("initial gradient is recorded");
    trace.push_data(
        "newton",
        json!({
            "kappa": result.kappa,
            "final_error": final_error,
            "final_grad_norm": final_grad,
            "constants": prob.constants(),
        }),
    );
    let success = final_error.unwrap_or(final_grad) <= args.tol;
    Ok(Outcome {
        trace,
        success,
        status: if success { "converged" } else { "max-iterations" }.into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct NtkArgs {
    #[arg(long, default_value_t = 8)]
    pub n: usize,
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, value_enum, default_value_t = Method::ClosedForm)]
    pub method: Method,
    /// Gaussian draws for the Monte-Carlo estimate.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub normalize: bool,
}

pub fn ntk(args: &NtkArgs) -> Result<Outcome> {
    let data = match &args.data {
        Some(path) => load_dataset(path, args.normalize)?,
        None => generate_dataset(args.n, args.d, derive_seed(args.seed, "data", 0), LabelMode::Zeros)?,
    };
    let mut config = to_value(args)?;
    config["n"] = json!(data.len());
    config["d"] = json!(data.input_dim());
    let mut trace = Trace::new("ntk", config);
    let method = match args.method {
        Method::ClosedForm => KernelMethod::ClosedForm,
        Method::MonteCarlo => KernelMethod::MonteCarlo,
    };
    let est = ntk_kernel(&data, method, args.samples, derive_seed(args.seed, "ntk", 0))?;
    let rows: Vec<Vec<f64>> = est.matrix.row_iter().map(|r| r.iter().copied().collect()).collect();
    trace.push_data(
        "kernel",
        json!({ "matrix": rows, "lambda_min": est.lambda_min, "samples": est.samples }),
    );
    Ok(Outcome {
        trace,
        success: true,
        status: "done".into(),
    })
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct BenchArgs {
    /// Regression sizes as NxK, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_pair)]
    pub sizes: Vec<(usize, usize)>,
    /// Training-step sizes as MxNxD, comma-separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_triple)]
    pub steps: Vec<(usize, usize, usize)>,
    #[arg(long, default_value_t = 5)]
    pub reps: usize,
    #[arg(long, default_value_t = 1e-8)]
    pub eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_dims(s: &str, count: usize) -> std::result::Result<Vec<usize>, String> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad size {s:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if dims.len() != count || dims.contains(&0) {
        return Err(format!("size {s:?} must be {count} positive integers joined by 'x'"));
    }
    Ok(dims)
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let d = parse_dims(s, 2)?;
    Ok((d[0], d[1]))
}

fn parse_triple(s: &str) -> std::result::Result<(usize, usize, usize), String> {
    let d = parse_dims(s, 3)?;
    Ok((d[0], d[1], d[2]))
}

pub fn bench(args: &BenchArgs) -> Result<Outcome> {
    require_positive("reps", args.reps)?;
    let cfg = BenchConfig {
        regression_grid: args.sizes.clone(),
        step_grid: args.steps.clone(),
        reps: args.reps,
        seed: args.seed,
        eps: args.eps,
    };
    let mut trace = Trace::new("bench", to_value(&cfg)?);
    let table = bench_scaling(&cfg)?;
    for row in &table.regression {
        trace.push_data("regression", to_value(row)?);
    }
    for row in &table.growth {
        trace.push_data("growth", to_value(row)?);
    }
    for row in &table.steps {
        trace.push_data("step", to_value(row)?);
    }
    Ok(Outcome {
        trace,
        success: true,
        status: "done".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_pair("4096x64"), Ok((4096, 64)));
        assert_eq!(parse_triple("8192x16x4"), Ok((8192, 16, 4)));
        assert!(parse_pair("4096").is_err());
        assert!(parse_pair("0x3").is_err());
        assert!(parse_triple("1x2").is_err());
    }
}
