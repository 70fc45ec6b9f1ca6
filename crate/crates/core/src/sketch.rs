//! Subsampled randomized Hadamard transform (SRHT).
//!
//! `S = sqrt(P/s) · Sample · H · D · Pad`, where `Pad` zero-pads an
//! `N`-vector to the power of two `P ≥ N`, `D` is a random ±1 diagonal, `H` is
//! the orthonormal Walsh–Hadamard matrix and `Sample` keeps `s` distinct
//! coordinates chosen uniformly without replacement.
//!
//! Draw order from the seeded stream: `P` sign bits first (the low bit of
//! successive `next_u32` calls, 1 → −1), then the `s` sample indices from a
//! partial Fisher–Yates shuffle of `0..P` (step `i` swaps `i` with a uniform
//! position in `i..P`).

use nalgebra::DMatrix;
use rand::{Rng as _, RngCore};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::operator::LinearOperator;
use crate::rng::rng_from_seed;

/// Distortion the default row rule is calibrated for.
pub const DEFAULT_EPSILON: f64 = 0.1;

/// In-place orthonormal fast Walsh–Hadamard transform.
pub fn fwht_in_place(v: &mut [f64]) -> Result<()> {
    let n = v.len();
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::Dimension(format!(
            "Walsh-Hadamard transform needs a power-of-two length, got {n}"
        )));
    }
    let mut half = 1;
    while half < n {
        for block in v.chunks_exact_mut(2 * half) {
            let (lo, hi) = block.split_at_mut(half);
            for (a, b) in lo.iter_mut().zip(hi.iter_mut()) {
                let (x, y) = (*a, *b);
                *a = x + y;
                *b = x - y;
            }
        }
        half *= 2;
    }
    let norm = 1.0 / (n as f64).sqrt();
    v.iter_mut().for_each(|x| *x *= norm);
    Ok(())
}

/// Orthonormal Walsh–Hadamard transform of `v`.
pub fn fwht(v: &[f64]) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    fwht_in_place(&mut out)?;
    Ok(out)
}

/// Default number of sketch rows for a `k`-column operator.
///
/// `s(k) = max(32k, ⌈2k ln k⌉)`, clamped to `padded_dim`.
pub fn default_rows(k: usize, padded_dim: usize) -> usize {
    let k = k.max(1);
    let log_rule = (2.0 * k as f64 * (k as f64).ln()).ceil() as usize;
    (32 * k).max(log_rule).min(padded_dim).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SketchSpec {
    pub input_dim: usize,
    pub rows: usize,
    pub epsilon: f64,
    pub seed: u64,
}

impl SketchSpec {
    pub fn new(input_dim: usize, rows: usize, epsilon: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            input_dim,
            rows,
            epsilon,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Spec with [`default_rows`] for an operator with `k` columns.
    pub fn with_default_rows(input_dim: usize, k: usize, seed: u64) -> Result<Self> {
        let rows = default_rows(k, padded_dim(input_dim));
        Self::new(input_dim, rows, DEFAULT_EPSILON, seed)
    }

    pub fn padded_dim(&self) -> usize {
        padded_dim(self.input_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("sketch input dimension must be positive".into()));
        }
        if self.rows == 0 {
            return Err(Error::Config("sketch must have at least one row".into()));
        }
        if self.rows > self.padded_dim() {
            return Err(Error::Config(format!(
                "sketch rows {} exceed padded dimension {}",
                self.rows,
                self.padded_dim()
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::Config(format!(
                "sketch distortion must lie in (0, 1/2), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

fn padded_dim(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

/// An immutable SRHT instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SketchOperator {
    input_dim: usize,
    padded_dim: usize,
    signs: Vec<f64>,
    sample_indices: Vec<usize>,
    scale: f64,
}

pub fn build_sketch(spec: &SketchSpec) -> Result<SketchOperator> {
    spec.validate()?;
    let padded = spec.padded_dim();
    let mut rng = rng_from_seed(spec.seed);
    let signs = (0..padded)
        .map(|_| if rng.next_u32() & 1 == 1 { -1.0 } else { 1.0 })
        .collect();
    let mut perm: Vec<usize> = (0..padded).collect();
    for i in 0..spec.rows {
        let j = rng.random_range(i..padded);
        perm.swap(i, j);
    }
    perm.truncate(spec.rows);
    Ok(SketchOperator {
        input_dim: spec.input_dim,
        padded_dim: padded,
        signs,
        sample_indices: perm,
        scale: (padded as f64 / spec.rows as f64).sqrt(),
    })
}

impl SketchOperator {
    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn padded_dim(&self) -> usize {
        self.padded_dim
    }

    pub fn rows(&self) -> usize {
        self.sample_indices.len()
    }

    pub fn signs(&self) -> &[f64] {
        &self.signs
    }

    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// `S v` for an `input_dim`-vector.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let mut scratch = vec![0.0; self.padded_dim];
        let mut out = vec![0.0; self.rows()];
        self.apply_with(v, &mut scratch, &mut out)?;
        Ok(out)
    }

    fn apply_with(&self, v: &[f64], scratch: &mut [f64], out: &mut [f64]) -> Result<()> {
        if v.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "sketch expects vectors of length {}, got {}",
                self.input_dim,
                v.len()
            )));
        }
        for (i, slot) in scratch.iter_mut().enumerate() {
            *slot = if i < v.len() { v[i] * self.signs[i] } else { 0.0 };
        }
        fwht_in_place(scratch)?;
        for (o, &idx) in out.iter_mut().zip(&self.sample_indices) {
            *o = self.scale * scratch[idx];
        }
        Ok(())
    }
}

/// `S A` for an operator accessed column by column.
///
/// Columns are sketched independently on the current rayon pool; each column
/// is computed by the same sequential code, so the result does not depend on
/// the thread count.
pub fn sketch_matrix<A: LinearOperator + ?Sized>(op: &SketchOperator, a: &A) -> Result<DMatrix<f64>> {
    if a.nrows() != op.input_dim {
        return Err(Error::Dimension(format!(
            "operator has {} rows but sketch expects {}",
            a.nrows(),
            op.input_dim
        )));
    }
    let k = a.ncols();
    let s = op.rows();
    let columns: Vec<Vec<f64>> = (0..k)
        .into_par_iter()
        .map_init(
            || vec![0.0; op.padded_dim],
            |scratch, j| {
                let col = a.column(j);
                let mut out = vec![0.0; s];
                op.apply_with(col.as_slice(), scratch, &mut out).map(|_| out)
            },
        )
        .collect::<Result<_>>()?;
    let mut sa = DMatrix::zeros(s, k);
    for (j, col) in columns.iter().enumerate() {
        sa.column_mut(j).copy_from_slice(col);
    }
    Ok(sa)
}
