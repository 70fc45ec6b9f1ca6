//! Wall-clock scaling tables for the regression solvers and training steps.

use std::time::Instant;

use serde::Serialize;
use sketchyggn::network::init_network;
use sketchyggn::regression::{fast_regression, naive_normal_solve, RegressionConfig};
use sketchyggn::rng::derive_seed;
use sketchyggn::trainer::{train_gauss_newton, SolverKind, TrainConfig};

use crate::data::{generate_dataset, LabelMode};
use crate::error::Result;
use crate::problems::regression_instance;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionTiming {
    pub n: usize,
    pub k: usize,
    pub fast_median_ns: u64,
    pub naive_median_ns: u64,
    pub fast_iterations: usize,
}

/// Median-time ratios between consecutive grid entries.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Growth {
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub fast_ratio: f64,
    pub naive_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepTiming {
    pub m: usize,
    pub n: usize,
    pub d: usize,
    pub fast_median_ns: u64,
    pub exact_median_ns: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchTable {
    pub regression: Vec<RegressionTiming>,
    pub growth: Vec<Growth>,
    pub steps: Vec<StepTiming>,
}

impl BenchTable {
    pub fn is_empty(&self) -> bool {
        self.regression.is_empty() && self.steps.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchConfig {
    /// `(N, k)` regression sizes, in reporting order.
    pub regression_grid: Vec<(usize, usize)>,
    /// `(m, n, d)` training-step sizes.
    pub step_grid: Vec<(usize, usize, usize)>,
    pub reps: usize,
    pub seed: u64,
    pub eps: f64,
}

pub fn median(samples: &mut [u64]) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    samples.sort_unstable();
    let mid = samples.len() / 2;
    if samples.len() % 2 == 1 {
        samples[mid]
    } else {
        samples[mid - 1] / 2 + samples[mid] / 2 + (samples[mid - 1] % 2 + samples[mid] % 2) / 2
    }
}

fn time_ns<T>(f: impl FnOnce() -> T) -> (T, u64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_nanos() as u64)
}

/// One timed fast solve and one timed direct solve on a fresh instance.
fn time_regression(n: usize, k: usize, seed: u64, rep: usize, eps: f64) -> Result<(u64, u64, usize)> {
    let (a, y) = regression_instance(n, k, derive_seed(seed, "bench-regress", rep as u64));
    let cfg = RegressionConfig::new(eps, derive_seed(seed, "bench-sketch", rep as u64));
    let (report, fast) = time_ns(|| fast_regression(&a, &y, &cfg));
    let iterations = report?.iterations;
    let (solution, naive) = time_ns(|| naive_normal_solve(&a, &y));
    solution?;
    Ok((fast, naive, iterations))
}

/// Times every grid size once per repetition, sizes interleaved so that
/// machine-wide slowdowns hit all sizes alike. One untimed warm-up round
/// runs first.
pub fn bench_regression_grid(
    grid: &[(usize, usize)],
    reps: usize,
    seed: u64,
    eps: f64,
) -> Result<Vec<RegressionTiming>> {
    let mut fast = vec![Vec::with_capacity(reps); grid.len()];
    let mut naive = vec![Vec::with_capacity(reps); grid.len()];
    let mut iterations = vec![0; grid.len()];
    if let Some(&(n, k)) = grid.first() {
        time_regression(n, k, seed, usize::MAX, eps)?;
    }
    for rep in 0..reps {
        for (i, &(n, k)) in grid.iter().enumerate() {
            let (f, d, it) = time_regression(n, k, seed, rep, eps)?;
            fast[i].push(f);
            naive[i].push(d);
            iterations[i] = iterations[i].max(it);
        }
    }
    Ok(grid
        .iter()
        .enumerate()
        .map(|(i, &(n, k))| RegressionTiming {
            n,
            k,
            fast_median_ns: median(&mut fast[i]),
            naive_median_ns: median(&mut naive[i]),
            fast_iterations: iterations[i],
        })
        .collect())
}

/// Times one Gauss-Newton step from initialization.
pub fn bench_step(m: usize, n: usize, d: usize, reps: usize, seed: u64) -> Result<StepTiming> {
    let mut fast = Vec::with_capacity(reps);
    let mut exact = Vec::with_capacity(reps);
    for rep in 0..reps {
        let rep_seed = derive_seed(seed, "bench-step", rep as u64);
        let data = generate_dataset(n, d, rep_seed, LabelMode::Teacher)?;
        for (solver, out) in [(SolverKind::Fast, &mut fast), (SolverKind::Exact, &mut exact)] {
            let mut net = init_network(m, d, rep_seed)?;
            let cfg = TrainConfig {
                max_outer_iters: 1,
                solver,
                seed: rep_seed,
                ..TrainConfig::default()
            };
            let trace = train_gauss_newton(&mut net, &data, &cfg)?;
            out.push(trace.iterations.first().map_or(0, |it| it.timings.total_ns()));
        }
    }
    Ok(StepTiming {
        m,
        n,
        d,
        fast_median_ns: median(&mut fast),
        exact_median_ns: median(&mut exact),
    })
}

pub fn bench_scaling(cfg: &BenchConfig) -> Result<BenchTable> {
    let mut table = BenchTable::default();
    table.regression = bench_regression_grid(&cfg.regression_grid, cfg.reps, cfg.seed, cfg.eps)?;
    table.growth = table
        .regression
        .windows(2)
        .map(|w| Growth {
            from: (w[0].n, w[0].k),
            to: (w[1].n, w[1].k),
            fast_ratio: w[1].fast_median_ns as f64 / w[0].fast_median_ns.max(1) as f64,
            naive_ratio: w[1].naive_median_ns as f64 / w[0].naive_median_ns.max(1) as f64,
        })
        .collect();
    for &(m, n, d) in &cfg.step_grid {
        table.steps.push(bench_step(m, n, d, cfg.reps, cfg.seed)?);
    }
    Ok(table)
}
