//! Seeded synthetic instances for the regression and Newton commands.

use clap::ValueEnum;
use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sketchyggn::convex::{GlmLink, GlmProblem};
use sketchyggn::rng::component_rng;

use crate::error::Result;

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64, component: &str) -> DMatrix<f64> {
    let mut rng = component_rng(seed, component, 0);
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(&mut rng))
}

pub fn gaussian_vector(len: usize, seed: u64, component: &str) -> DVector<f64> {
    gaussian_matrix(len, 1, seed, component).column(0).into_owned()
}

/// Gaussian `A` (`n × k`) and right-hand side `y ∈ R^k` for `AᵀA x = y`.
pub fn regression_instance(n: usize, k: usize, seed: u64) -> (DMatrix<f64>, DVector<f64>) {
    (
        gaussian_matrix(n, k, seed, "regress-matrix"),
        gaussian_vector(k, seed, "regress-rhs"),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NewtonProblem {
    /// `½‖Ax − b‖²`.
    Quadratic,
    /// Logistic loss on labels drawn from a planted model.
    Logistic,
}

/// `q` rows in `R^p`, scaled by `1/√p` so margins stay `O(1)`.
pub fn newton_instance(problem: NewtonProblem, q: usize, p: usize, seed: u64) -> Result<GlmProblem> {
    let a = gaussian_matrix(q, p, seed, "newton-data") / (p as f64).sqrt();
    let prob = match problem {
        NewtonProblem::Quadratic => {
            let b = gaussian_vector(q, seed, "newton-labels");
            GlmProblem::new(a, b, GlmLink::LeastSquares)?
        }
        NewtonProblem::Logistic => {
            let truth = gaussian_vector(p, seed, "newton-truth");
            let z = &a * truth;
            let mut rng = component_rng(seed, "newton-labels", 0);
            let b = DVector::from_fn(q, |i, _| {
                let prob = 1.0 / (1.0 + (-z[i]).exp());
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            });
            GlmProblem::new(a, b, GlmLink::Logistic)?
        }
    };
    Ok(prob)
}
