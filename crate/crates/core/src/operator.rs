//! Matrix-free linear operators.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// A real `nrows × ncols` linear map accessed only through products.
///
/// `apply` and `apply_transpose` must be adjoint to each other, and
/// `column(j)` must agree with `apply(e_j)`.
pub trait LinearOperator: Sync {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;

    /// `A v` for `v` of length `ncols`.
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;

    /// `Aᵀ u` for `u` of length `nrows`.
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64>;

    fn column(&self, j: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.ncols());
        e[j] = 1.0;
        self.apply(&e)
    }

    fn row(&self, i: usize) -> DVector<f64> {
        let mut e = DVector::zeros(self.nrows());
        e[i] = 1.0;
        self.apply_transpose(&e)
    }

    /// `AᵀA v`; implementations may fuse the two products.
    fn normal_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.apply_transpose(&self.apply(v))
    }

    /// Materializes the operator column by column.
    fn to_dense(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.nrows(), self.ncols());
        for j in 0..self.ncols() {
            out.set_column(j, &self.column(j));
        }
        out
    }
}

/// Target entry count of one row block in [`LinearOperator::normal_apply`].
const NORMAL_BLOCK_ENTRIES: usize = 1 << 16;

impl LinearOperator for DMatrix<f64> {
    fn nrows(&self) -> usize {
        self.nrows()
    }

    fn ncols(&self) -> usize {
        self.ncols()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self * v
    }

    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        self.tr_mul(u)
    }

    fn column(&self, j: usize) -> DVector<f64> {
        self.column(j).into_owned()
    }

    fn row(&self, i: usize) -> DVector<f64> {
        self.row(i).transpose()
    }

    /// Streams `A` once in row blocks small enough to stay in cache between
    /// the `A_b v` and `A_bᵀ(A_b v)` products.
    fn normal_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let (n, k) = self.shape();
        let block_rows = (NORMAL_BLOCK_ENTRIES / k.max(1)).clamp(64, 4096);
        let mut out = DVector::zeros(k);
        let mut u = DVector::zeros(block_rows.min(n));
        let mut start = 0;
        while start < n {
            let len = block_rows.min(n - start);
            let block = self.rows(start, len);
            let mut ub = u.rows_mut(0, len);
            ub.gemv(1.0, &block, v, 0.0);
            out.gemv_tr(1.0, &block, &ub, 1.0);
            start += len;
        }
        out
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }
}

impl<T: LinearOperator + ?Sized> LinearOperator for &T {
    fn nrows(&self) -> usize {
        (**self).nrows()
    }
    fn ncols(&self) -> usize {
        (**self).ncols()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (**self).apply(v)
    }
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        (**self).apply_transpose(u)
    }
    fn column(&self, j: usize) -> DVector<f64> {
        (**self).column(j)
    }
    fn row(&self, i: usize) -> DVector<f64> {
        (**self).row(i)
    }
    fn normal_apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (**self).normal_apply(v)
    }
}

/// The adjoint view `Aᵀ` of an operator.
#[derive(Debug, Clone, Copy)]
pub struct Transposed<T>(pub T);

impl<T: LinearOperator> LinearOperator for Transposed<T> {
    fn nrows(&self) -> usize {
        self.0.ncols()
    }
    fn ncols(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0.apply_transpose(v)
    }
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        self.0.apply(u)
    }
    fn column(&self, j: usize) -> DVector<f64> {
        self.0.row(j)
    }
    fn row(&self, i: usize) -> DVector<f64> {
        self.0.column(i)
    }
}

/// `diag(scale) · A` for a dense `A`, without forming the product.
#[derive(Debug, Clone)]
pub struct RowScaled<'a> {
    matrix: &'a DMatrix<f64>,
    scale: DVector<f64>,
}

impl<'a> RowScaled<'a> {
    pub fn new(matrix: &'a DMatrix<f64>, scale: DVector<f64>) -> Result<Self> {
        if scale.len() != matrix.nrows() {
            return Err(Error::Dimension(format!(
                "row scale has length {} but matrix has {} rows",
                scale.len(),
                matrix.nrows()
            )));
        }
        Ok(Self { matrix, scale })
    }

    pub fn scale(&self) -> &DVector<f64> {
        &self.scale
    }
}

impl LinearOperator for RowScaled<'_> {
    fn nrows(&self) -> usize {
        self.matrix.nrows()
    }
    fn ncols(&self) -> usize {
        self.matrix.ncols()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        (self.matrix * v).component_mul(&self.scale)
    }
    fn apply_transpose(&self, u: &DVector<f64>) -> DVector<f64> {
        self.matrix.tr_mul(&u.component_mul(&self.scale))
    }
    fn column(&self, j: usize) -> DVector<f64> {
        self.matrix.column(j).component_mul(&self.scale)
    }
}

/// Relative adjointness defect `|⟨Av,u⟩ − ⟨v,Aᵀu⟩| / (‖Av‖‖u‖)` on Gaussian probes.
pub fn adjointness_error<A: LinearOperator + ?Sized>(op: &A, seed: u64) -> f64 {
    let mut rng = rng_from_seed(seed);
    let v = DVector::from_fn(op.ncols(), |_, _| StandardNormal.sample(&mut rng));
    let u = DVector::from_fn(op.nrows(), |_, _| StandardNormal.sample(&mut rng));
    let av = op.apply(&v);
    let atu = op.apply_transpose(&u);
    let lhs = av.dot(&u);
    let rhs = v.dot(&atu);
    let scale = (av.norm() * u.norm()).max(v.norm() * atu.norm()).max(f64::MIN_POSITIVE);
    (lhs - rhs).abs() / scale
}
