//! Two-layer ReLU network `f(W, x) = (1/√m) Σ_r a_r max(w_rᵀx, 0)` with fixed
//! output signs `a ∈ {−1, +1}^m`.
//!
//! Flattened weights use row-major order: entry `r·d + c` is `W[r, c]`. The
//! activation indicator is `1[w_rᵀx ≥ 0]`, so a preactivation exactly at the
//! kink counts as active.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::rng::{component_rng, rng_from_seed};

/// Tolerance for the unit-norm input assumption.
pub const UNIT_NORM_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    weights: DMatrix<f64>,
    signs: DVector<f64>,
}

impl NetworkState {
    pub fn new(weights: DMatrix<f64>, signs: DVector<f64>) -> Result<Self> {
        if weights.nrows() != signs.len() {
            return Err(Error::Dimension(format!(
                "{} weight rows but {} output signs",
                weights.nrows(),
                signs.len()
            )));
        }
        if weights.nrows() == 0 || weights.ncols() == 0 {
            return Err(Error::Config("network width and input dimension must be positive".into()));
        }
        if signs.iter().any(|&a| a != 1.0 && a != -1.0) {
            return Err(Error::Config("output signs must be +1 or -1".into()));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("network weights".into()));
        }
        Ok(Self { weights, signs })
    }

    pub fn width(&self) -> usize {
        self.weights.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    /// Output scaling `1/√m`.
    pub fn scale(&self) -> f64 {
        1.0 / (self.width() as f64).sqrt()
    }

    /// `m × d`, row `r` is `w_r`.
    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn signs(&self) -> &DVector<f64> {
        &self.signs
    }

    pub fn flat_weights(&self) -> DVector<f64> {
        flatten_rows(&self.weights)
    }

    /// `W ← W + alpha · reshape(delta)`.
    pub fn add_flat(&mut self, alpha: f64, delta: &DVector<f64>) -> Result<()> {
        let (m, d) = self.weights.shape();
        if delta.len() != m * d {
            return Err(Error::Dimension(format!(
                "weight update has length {} but network has {} parameters",
                delta.len(),
                m * d
            )));
        }
        for r in 0..m {
            for c in 0..d {
                self.weights[(r, c)] += alpha * delta[r * d + c];
            }
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::Numerical("updated network weights".into()));
        }
        Ok(())
    }

    /// `max_r ‖w_r − w'_r‖₂`.
    pub fn max_row_distance(&self, other: &NetworkState) -> f64 {
        (0..self.width())
            .map(|r| (self.weights.row(r) - other.weights.row(r)).norm())
            .fold(0.0, f64::max)
    }
}

pub fn flatten_rows(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.transpose().as_slice())
}

pub fn unflatten_rows(rows: usize, cols: usize, v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows, cols, v.as_slice())
}

/// Gaussian first layer and uniform ±1 output signs.
///
/// `W` is drawn row-major from the `"init-weights"` stream and `a` from the
/// low bits of the `"init-signs"` stream.
pub fn init_network(m: usize, d: usize, seed: u64) -> Result<NetworkState> {
    if m == 0 || d == 0 {
        return Err(Error::Config(format!("network shape must be positive, got m={m}, d={d}")));
    }
    let mut rng = component_rng(seed, "init-weights", 0);
    let mut weights = DMatrix::zeros(m, d);
    for r in 0..m {
        for c in 0..d {
            weights[(r, c)] = StandardNormal.sample(&mut rng);
        }
    }
    let mut rng = component_rng(seed, "init-signs", 0);
    let signs = DVector::from_fn(m, |_, _| if rng.next_u32() & 1 == 1 { -1.0 } else { 1.0 });
    NetworkState::new(weights, signs)
}

/// Inputs stored as the columns of a `d × n` matrix, with one label each.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    inputs: DMatrix<f64>,
    labels: DVector<f64>,
}

impl Dataset {
    /// Rejects inputs whose columns are not unit vectors.
    pub fn new(inputs: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        if inputs.ncols() != labels.len() {
            return Err(Error::Dimension(format!(
                "{} inputs but {} labels",
                inputs.ncols(),
                labels.len()
            )));
        }
        if inputs.iter().chain(labels.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("non-finite entry".into()));
        }
        for (i, col) in inputs.column_iter().enumerate() {
            let norm = col.norm();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidData(format!(
                    "input {i} has norm {norm:.6}, expected unit norm (normalize explicitly)"
                )));
            }
        }
        Ok(Self { inputs, labels })
    }

    /// Rescales every input column to unit norm first.
    pub fn normalized(mut inputs: DMatrix<f64>, labels: DVector<f64>) -> Result<Self> {
        for (i, mut col) in inputs.column_iter_mut().enumerate() {
            let norm = col.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::InvalidData(format!("input {i} cannot be normalized")));
            }
            col /= norm;
        }
        Self::new(inputs, labels)
    }

    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn inputs(&self) -> &DMatrix<f64> {
        &self.inputs
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn with_labels(&self, labels: DVector<f64>) -> Result<Self> {
        if labels.len() != self.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} inputs",
                labels.len(),
                self.len()
            )));
        }
        Ok(Self {
            inputs: self.inputs.clone(),
            labels,
        })
    }
}

fn check_dims(net: &NetworkState, data: &Dataset) -> Result<()> {
    if net.input_dim() != data.input_dim() {
        return Err(Error::Dimension(format!(
            "network expects inputs of dimension {} but data has {}",
            net.input_dim(),
            data.input_dim()
        )));
    }
    Ok(())
}

/// Network outputs on every input.
pub fn forward(net: &NetworkState, data: &Dataset) -> Result<DVector<f64>> {
    check_dims(net, data)?;
    let pre = net.weights() * data.inputs();
    let scale = net.scale();
    Ok(DVector::from_fn(data.len(), |i, _| {
        scale
            * pre
                .column(i)
                .iter()
                .zip(net.signs().iter())
                .map(|(&z, &a)| a * z.max(0.0))
                .sum::<f64>()
    }))
}

/// `½‖f − y‖²`.
pub fn loss(net: &NetworkState, data: &Dataset) -> Result<f64> {
    Ok(0.5 * (forward(net, data)? - data.labels()).norm_squared())
}

/// `∂L/∂W` as an `m × d` matrix.
pub fn gradient(net: &NetworkState, data: &Dataset) -> Result<DMatrix<f64>> {
    let residual = forward(net, data)? - data.labels();
    let jac = implicit_jacobian(net, data)?;
    Ok(unflatten_rows(net.width(), net.input_dim(), &jac.jac_apply_transpose(&residual)))
}

/// The Jacobian `J ∈ R^{n × md}` kept in factored form.
///
/// Only the `m × n` coefficients `c_{r,i} = a_r 1[w_rᵀx_i ≥ 0]/√m` and a copy
/// of the inputs are stored; row `i` of `J` is `c_{:,i} ⊗ x_i`.
#[derive(Debug, Clone)]
pub struct ImplicitJacobian {
    coef: DMatrix<f64>,
    inputs: DMatrix<f64>,
}

pub fn implicit_jacobian(net: &NetworkState, data: &Dataset) -> Result<ImplicitJacobian> {
    check_dims(net, data)?;
    let pre = net.weights() * data.inputs();
    let scale = net.scale();
    let coef = DMatrix::from_fn(net.width(), data.len(), |r, i| {
        if pre[(r, i)] >= 0.0 {
            scale * net.signs()[r]
        } else {
            0.0
        }
    });
    Ok(ImplicitJacobian {
        coef,
        inputs: data.inputs().clone(),
    })
}

impl ImplicitJacobian {
    pub fn samples(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn width(&self) -> usize {
        self.coef.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn params(&self) -> usize {
        self.width() * self.input_dim()
    }

    /// The activation indicator `1[w_rᵀx_i ≥ 0]`.
    pub fn is_active(&self, i: usize, r: usize) -> bool {
        self.coef[(r, i)] != 0.0
    }

    pub fn active_count(&self, i: usize) -> usize {
        self.coef.column(i).iter().filter(|&&c| c != 0.0).count()
    }

    /// `J v` for `v ∈ R^{md}`.
    pub fn jac_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let vm = unflatten_rows(self.width(), self.input_dim(), v);
        let proj = vm * &self.inputs;
        DVector::from_fn(self.samples(), |i, _| self.coef.column(i).dot(&proj.column(i)))
    }

    /// `Jᵀ u` for `u ∈ R^n`.
    pub fn jac_apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        let mut weighted = self.coef.clone();
        for (i, mut col) in weighted.column_iter_mut().enumerate() {
            col *= u[i];
        }
        flatten_rows(&(weighted * self.inputs.transpose()))
    }

    /// Row `i` of `J`, the parameter gradient of output `i`.
    pub fn jac_column(&self, i: usize) -> DVector<f64> {
        let (m, d) = (self.width(), self.input_dim());
        let x = self.inputs.column(i);
        DVector::from_fn(m * d, |j, _| self.coef[(j / d, i)] * x[j % d])
    }

    /// `G = J Jᵀ = (XᵀX) ∘ (ΦΦᵀ)/m`.
    pub fn gram(&self) -> DMatrix<f64> {
        let overlap = self.coef.tr_mul(&self.coef);
        self.inputs.tr_mul(&self.inputs).component_mul(&overlap)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.gram().trace().max(0.0).sqrt()
    }
}

impl LinearOperator for ImplicitJacobian {
    fn nrows(&self) -> usize {
        self.samples()
    }

    fn ncols(&self) -> usize {
        self.params()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.jac_apply(v)
    }

    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        self.jac_apply_transpose(u)
    }

    fn column(&self, j: usize) -> DVector<f64> {
        let d = self.input_dim();
        let (r, c) = (j / d, j % d);
        DVector::from_fn(self.samples(), |i, _| self.coef[(r, i)] * self.inputs[(c, i)])
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.jac_column(i)
    }
}

pub fn gram(jac: &ImplicitJacobian) -> DMatrix<f64> {
    jac.gram()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelMethod {
    ClosedForm,
    MonteCarlo,
}

#[derive(Debug, Clone)]
pub struct KernelEstimate {
    pub matrix: DMatrix<f64>,
    pub method: KernelMethod,
    /// Gaussian draws used; zero for the closed form.
    pub samples: usize,
    pub lambda_min: f64,
}

/// Angle between two unit vectors, stable near 0 and π.
fn unit_angle(u: nalgebra::DVectorView<f64>, v: nalgebra::DVectorView<f64>) -> f64 {
    2.0 * (u - v).norm().atan2((u + v).norm())
}

/// Kernel `K_ij = E_w[x_iᵀx_j 1[wᵀx_i ≥ 0, wᵀx_j ≥ 0]]`, `w ~ N(0, I)`.
///
/// The closed form is `K_ij = x_iᵀx_j (π − θ_ij)/(2π)` with `θ_ij` the angle
/// between the inputs; the Monte-Carlo route averages the integrand directly.
pub fn ntk_kernel(data: &Dataset, method: KernelMethod, samples: usize, seed: u64) -> Result<KernelEstimate> {
    let x = data.inputs();
    let n = data.len();
    let inner = x.tr_mul(x);
    let (matrix, samples) = match method {
        KernelMethod::ClosedForm => {
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let theta = if i == j { 0.0 } else { unit_angle(x.column(i), x.column(j)) };
                    let v = inner[(i, j)] * (std::f64::consts::PI - theta) / (2.0 * std::f64::consts::PI);
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            (k, 0)
        }
        KernelMethod::MonteCarlo => {
            if samples == 0 {
                return Err(Error::Config("Monte-Carlo kernel needs at least one sample".into()));
            }
            let mut rng = rng_from_seed(seed);
            let d = data.input_dim();
            let mut counts = DMatrix::<f64>::zeros(n, n);
            let mut w = vec![0.0; d];
            let mut active = Vec::with_capacity(n);
            for _ in 0..samples {
                w.iter_mut().for_each(|v| *v = StandardNormal.sample(&mut rng));
                active.clear();
                active.extend((0..n).filter(|&i| {
                    x.column(i).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() >= 0.0
                }));
                for (p, &i) in active.iter().enumerate() {
                    for &j in &active[p..] {
                        counts[(i, j)] += 1.0;
                    }
                }
            }
            let total = samples as f64;
            let mut k = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in i..n {
                    let v = inner[(i, j)] * counts[(i, j)] / total;
                    k[(i, j)] = v;
                    k[(j, i)] = v;
                }
            }
            (k, samples)
        }
    };
    let lambda_min = min_eigen(&matrix)?;
    Ok(KernelEstimate {
        matrix,
        method,
        samples,
        lambda_min,
    })
}

/// Least eigenvalue of a symmetric matrix.
pub fn min_eigen(m: &DMatrix<f64>) -> Result<f64> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{}x{} matrix is not square", m.nrows(), m.ncols())));
    }
    if m.is_empty() {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let asym = (m - m.transpose()).amax();
    if asym > 1e-10 * m.amax().max(1.0) {
        return Err(Error::Asymmetric(asym));
    }
    let sym = (m + m.transpose()) * 0.5;
    Ok(SymmetricEigen::new(sym).eigenvalues.min())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_data(n: usize, d: usize, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(d, n, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
        Dataset::normalized(x, y).unwrap()
    }

    fn single(w: &[f64], x: &[f64]) -> (NetworkState, Dataset) {
        let net = NetworkState::new(DMatrix::from_row_slice(1, w.len(), w), DVector::from_element(1, 1.0)).unwrap();
        let data = Dataset::new(DMatrix::from_column_slice(x.len(), 1, x), DVector::zeros(1)).unwrap();
        (net, data)
    }

    /// Dense `n × md` Jacobian built entry by entry.
    fn dense_jacobian(net: &NetworkState, data: &Dataset) -> DMatrix<f64> {
        let (m, d, n) = (net.width(), net.input_dim(), data.len());
        let mut j = DMatrix::zeros(n, m * d);
        for i in 0..n {
            let x = data.inputs().column(i);
            for r in 0..m {
                let z: f64 = (0..d).map(|c| net.weights()[(r, c)] * x[c]).sum();
                if z >= 0.0 {
                    for c in 0..d {
                        j[(i, r * d + c)] = net.signs()[r] * x[c] / (m as f64).sqrt();
                    }
                }
            }
        }
        j
    }

    #[test]
    fn single_neuron_outputs() {
        let (net, data) = single(&[1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(forward(&net, &data).unwrap()[0], 1.0);
        let (net, data) = single(&[-1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(forward(&net, &data).unwrap()[0], 0.0);
    }

    #[test]
    fn forward_matches_naive_loops() {
        let net = init_network(64, 8, 1).unwrap();
        let data = unit_data(4, 8, 2);
        let f = forward(&net, &data).unwrap();
        for i in 0..4 {
            let mut acc = 0.0;
            for r in 0..64 {
                let mut z = 0.0;
                for c in 0..8 {
                    z += net.weights()[(r, c)] * data.inputs()[(c, i)];
                }
                acc += net.signs()[r] * if z > 0.0 { z } else { 0.0 };
            }
            assert!((f[i] - acc / 8.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_is_deterministic_and_standard() {
        assert_eq!(init_network(16, 3, 5).unwrap(), init_network(16, 3, 5).unwrap());
        assert_ne!(init_network(16, 3, 5).unwrap(), init_network(16, 3, 6).unwrap());
        let net = init_network(4096, 4, 9).unwrap();
        let w = net.weights();
        let count = w.len() as f64;
        let mean = w.sum() / count;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count;
        assert!(mean.abs() <= 0.05, "mean {mean}");
        assert!((0.95..=1.05).contains(&var), "variance {var}");
        assert!(net.signs().iter().all(|&a| a == 1.0 || a == -1.0));
        assert!(init_network(0, 3, 1).is_err());
    }

    #[test]
    fn loss_cases() {
        let net = init_network(32, 3, 3).unwrap();
        let data = unit_data(5, 3, 4);
        let f = forward(&net, &data).unwrap();
        let fitted = data.with_labels(f.clone()).unwrap();
        assert_eq!(loss(&net, &fitted).unwrap(), 0.0);
        let direct = 0.5 * f.iter().zip(data.labels().iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        assert!((loss(&net, &data).unwrap() - direct).abs() < 1e-12);

        let (net, data) = single(&[1.0, 0.0], &[1.0, 0.0]);
        assert_eq!(loss(&net, &data).unwrap(), 0.5);
    }

    #[test]
    fn implicit_jacobian_matches_dense() {
        for seed in 0..5 {
            let net = init_network(8, 3, seed).unwrap();
            let data = unit_data(4, 3, 100 + seed);
            let jac = implicit_jacobian(&net, &data).unwrap();
            let dense = dense_jacobian(&net, &data);
            let mut rng = rng_from_seed(seed);
            let v = DVector::from_fn(24, |_, _| StandardNormal.sample(&mut rng));
            let u = DVector::from_fn(4, |_, _| StandardNormal.sample(&mut rng));
            assert!((jac.jac_apply(&v) - &dense * &v).amax() <= 1e-12);
            assert!((jac.jac_apply_transpose(&u) - dense.tr_mul(&u)).amax() <= 1e-12);
            for i in 0..4 {
                assert!((jac.jac_column(i) - dense.row(i).transpose()).amax() <= 1e-12);
            }
            assert!((jac.to_dense() - &dense).amax() <= 1e-12);
            assert!((jac.gram() - &dense * dense.transpose()).amax() <= 1e-12);
        }
    }

    #[test]
    fn relu_homogeneity() {
        let net = init_network(50, 5, 7).unwrap();
        let data = unit_data(6, 5, 8);
        let jac = implicit_jacobian(&net, &data).unwrap();
        let jw = jac.jac_apply(&net.flat_weights());
        assert!((jw - forward(&net, &data).unwrap()).amax() <= 1e-12);
    }

    #[test]
    fn all_negative_preactivations_kill_the_jacobian() {
        let mut rng = rng_from_seed(3);
        let w = DMatrix::from_fn(6, 3, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); -z.abs() - 0.1 });
        let net = NetworkState::new(w, DVector::from_element(6, 1.0)).unwrap();
        let x = DMatrix::from_fn(3, 4, |_, _| 1.0 / 3f64.sqrt());
        let data = Dataset::new(x, DVector::zeros(4)).unwrap();
        let jac = implicit_jacobian(&net, &data).unwrap();
        assert!(jac.to_dense().iter().all(|&v| v == 0.0));
        assert!(jac.gram().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_identities() {
        let net = init_network(16, 4, 11).unwrap();
        let data = unit_data(6, 4, 12);
        let f = forward(&net, &data).unwrap();
        let g = gradient(&net, &data.with_labels(f.clone()).unwrap()).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));

        let jac = implicit_jacobian(&net, &data).unwrap();
        let via_jac = unflatten_rows(16, 4, &jac.jac_apply_transpose(&(f - data.labels())));
        assert!((gradient(&net, &data).unwrap() - via_jac).amax() <= 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let h = 1e-6;
        let net = init_network(12, 3, 21).unwrap();
        let data = unit_data(5, 3, 22);
        let pre = net.weights() * data.inputs();
        assert!(pre.iter().all(|z| z.abs() > 10.0 * h), "pick a kink-safe seed");
        let g = gradient(&net, &data).unwrap();
        for r in 0..12 {
            for c in 0..3 {
                let mut plus = net.weights().clone();
                plus[(r, c)] += h;
                let mut minus = net.weights().clone();
                minus[(r, c)] -= h;
                let lp = loss(&NetworkState::new(plus, net.signs().clone()).unwrap(), &data).unwrap();
                let lm = loss(&NetworkState::new(minus, net.signs().clone()).unwrap(), &data).unwrap();
                let fd = (lp - lm) / (2.0 * h);
                assert!((fd - g[(r, c)]).abs() <= 1e-5 * g.amax().max(1e-3), "({r},{c}): {fd} vs {}", g[(r, c)]);
            }
        }
    }

    #[test]
    fn gram_of_single_input_counts_active_neurons() {
        let net = init_network(4000, 3, 5).unwrap();
        let data = unit_data(1, 3, 6);
        let jac = implicit_jacobian(&net, &data).unwrap();
        let g = jac.gram();
        assert!((g[(0, 0)] - jac.active_count(0) as f64 / 4000.0).abs() < 1e-12);
        assert!((g[(0, 0)] - 0.5).abs() < 0.05);
    }

    #[test]
    fn kernel_special_values() {
        let x = DMatrix::from_column_slice(2, 2, &[0.6, 0.8, -0.6, -0.8]);
        let data = Dataset::new(x, DVector::zeros(2)).unwrap();
        let k = ntk_kernel(&data, KernelMethod::ClosedForm, 0, 0).unwrap();
        assert!((k.matrix[(0, 0)] - 0.5).abs() <= 1e-15);
        assert!(k.matrix[(0, 1)].abs() <= 1e-15);
        assert!(matches!(
            ntk_kernel(&data, KernelMethod::MonteCarlo, 0, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn kernel_closed_form_agrees_with_monte_carlo() {
        let data = unit_data(6, 3, 31);
        let exact = ntk_kernel(&data, KernelMethod::ClosedForm, 0, 0).unwrap();
        let mc = ntk_kernel(&data, KernelMethod::MonteCarlo, 200_000, 1).unwrap();
        assert!((exact.matrix - mc.matrix).amax() <= 6e-3);
        assert!(exact.lambda_min > -1e-8);
    }

    #[test]
    fn min_eigen_cases() {
        assert!((min_eigen(&DMatrix::identity(3, 3)).unwrap() - 1.0).abs() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&[3.0, -2.0, 5.0]));
        assert!((min_eigen(&d).unwrap() + 2.0).abs() < 1e-14);
        let mut rng = rng_from_seed(1);
        let g = DMatrix::from_fn(5, 5, |_, _| StandardNormal.sample(&mut rng));
        assert!(min_eigen(&g.tr_mul(&g)).unwrap() >= -1e-10);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(min_eigen(&asym), Err(Error::Asymmetric(_))));
    }

    #[test]
    fn dataset_validation() {
        let bad = DMatrix::from_column_slice(2, 1, &[3.0, 4.0]);
        assert!(matches!(
            Dataset::new(bad.clone(), DVector::zeros(1)),
            Err(Error::InvalidData(_))
        ));
        let fixed = Dataset::normalized(bad, DVector::zeros(1)).unwrap();
        assert!((fixed.inputs()[(0, 0)] - 0.6).abs() < 1e-15);
        assert!((fixed.inputs()[(1, 0)] - 0.8).abs() < 1e-15);
        assert!(Dataset::new(DMatrix::identity(2, 2), DVector::zeros(3)).is_err());
    }

    #[test]
    fn weight_updates() {
        let mut net = init_network(3, 2, 1).unwrap();
        let start = net.clone();
        let delta = DVector::from_row_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 2.0]);
        net.add_flat(-1.0, &delta).unwrap();
        assert_eq!(net.weights()[(0, 0)], start.weights()[(0, 0)] - 1.0);
        assert_eq!(net.weights()[(2, 1)], start.weights()[(2, 1)] - 2.0);
        assert!((net.max_row_distance(&start) - 2.0).abs() < 1e-15);
        assert!(net.add_flat(1.0, &DVector::zeros(5)).is_err());
        let flat = start.flat_weights();
        assert_eq!(unflatten_rows(3, 2, &flat), *start.weights());
    }
}
