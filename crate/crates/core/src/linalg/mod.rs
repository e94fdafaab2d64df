//! Dense and structured linear algebra primitives used by every other module:
//! least-norm pseudoinverse solves, Kronecker/Hadamard products, zero-padded 2D
//! convolution and image translation, and power-iteration operator-norm
//! estimation.

mod image;

pub use image::{conv2d, translate, Image, KernelGeometry};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest one are treated as zero
/// in pseudoinverse solves.
pub const PINV_REL_CUTOFF: f64 = 1e-12;

/// Relative tolerance under which a matrix passed to [`pinv_solve`] must be
/// symmetric.
pub const SYMMETRY_REL_TOL: f64 = 1e-12;

/// Cap on the number of entries a Kronecker product may allocate (2^25 f64
/// entries is 256 MiB).
pub const KRON_ENTRY_CAP: usize = 1 << 25;

/// Dense row-major matrix of 64-bit floats, finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    data: Array2<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major entries.
    pub fn from_rows(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::from_rows",
                expected: rows * cols,
                got: entries.len(),
            });
        }
        let data = Array2::from_shape_vec((rows, cols), entries)
            .expect("shape already validated");
        Self::from_array(data)
    }

    pub fn from_array(data: Array2<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "matrix entries must be finite".to_string(),
            ));
        }
        Ok(Self { data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: Array2::eye(n),
        }
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn array(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_array(self) -> Array2<f64> {
        self.data
    }
}

/// Least-norm solution of `M θ = b` for a symmetric positive-semidefinite `M`,
/// computed by spectral decomposition with singular values below
/// [`PINV_REL_CUTOFF`] times the largest one treated as zero.
pub fn pinv_solve(m: &DenseMatrix, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    let r = m.rows();
    if m.cols() != r {
        return Err(Error::DimensionMismatch {
            context: "pinv_solve matrix",
            expected: r,
            got: m.cols(),
        });
    }
    if b.len() != r {
        return Err(Error::DimensionMismatch {
            context: "pinv_solve rhs",
            expected: r,
            got: b.len(),
        });
    }
    if !b.iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidInput(
            "pinv_solve rhs must be finite".to_string(),
        ));
    }
    let scale = m.array().iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for i in 0..r {
        for j in (i + 1)..r {
            if (m.get(i, j) - m.get(j, i)).abs() > SYMMETRY_REL_TOL * scale {
                return Err(Error::InvalidInput(format!(
                    "pinv_solve requires a symmetric matrix; entries ({i},{j}) and ({j},{i}) differ"
                )));
            }
        }
    }
    if r == 0 {
        return Ok(Array1::zeros(0));
    }

    // Symmetrize before decomposing so rounding asymmetry within tolerance
    // cannot leak into complex arithmetic.
    let mut sym = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            sym[(i, j)] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }
    let eig = sym.symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = PINV_REL_CUTOFF * max_abs;

    let bv = DVector::from_iterator(r, b.iter().copied());
    let mut coeffs = eig.eigenvectors.transpose() * bv;
    for (c, lambda) in coeffs.iter_mut().zip(eig.eigenvalues.iter()) {
        if lambda.abs() <= cutoff {
            *c = 0.0;
        } else {
            *c /= lambda;
        }
    }
    let x = eig.eigenvectors * coeffs;
    Ok(Array1::from_iter(x.iter().copied()))
}

/// Moore-Penrose pseudoinverse of a symmetric matrix, with the same
/// singular-value cutoff as [`pinv_solve`].
pub fn pinv_matrix(m: &DenseMatrix) -> Result<DenseMatrix> {
    let r = m.rows();
    if m.cols() != r {
        return Err(Error::DimensionMismatch {
            context: "pinv_matrix",
            expected: r,
            got: m.cols(),
        });
    }
    let mut sym = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            sym[(i, j)] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }
    let eig = sym.symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let cutoff = PINV_REL_CUTOFF * max_abs;
    let mut scaled = eig.eigenvectors.clone();
    for (mut col, lambda) in scaled.column_iter_mut().zip(eig.eigenvalues.iter()) {
        let f = if lambda.abs() <= cutoff {
            0.0
        } else {
            1.0 / lambda
        };
        col *= f;
    }
    let inv = scaled * eig.eigenvectors.transpose();
    let mut out = Array2::zeros((r, r));
    for i in 0..r {
        for j in 0..r {
            out[[i, j]] = inv[(i, j)];
        }
    }
    DenseMatrix::from_array(out)
}

/// Eigenvalues of a symmetric matrix, ascending. Callers are responsible for
/// symmetry; the matrix is symmetrized first.
pub fn symmetric_eigenvalues(m: &DenseMatrix) -> Result<Array1<f64>> {
    let r = m.rows();
    if m.cols() != r {
        return Err(Error::DimensionMismatch {
            context: "symmetric_eigenvalues",
            expected: r,
            got: m.cols(),
        });
    }
    let mut sym = DMatrix::<f64>::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            sym[(i, j)] = 0.5 * (m.get(i, j) + m.get(j, i));
        }
    }
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| a.partial_cmp(b).expect("eigenvalues are finite"));
    Ok(Array1::from_vec(vals))
}

/// Kronecker product, block `(i, j)` equal to `a_ij * B`.
pub fn kron(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    let rows = a
        .rows()
        .checked_mul(b.rows())
        .ok_or(Error::Capacity {
            context: "kron rows",
            requested: usize::MAX,
            cap: KRON_ENTRY_CAP,
        })?;
    let cols = a
        .cols()
        .checked_mul(b.cols())
        .ok_or(Error::Capacity {
            context: "kron cols",
            requested: usize::MAX,
            cap: KRON_ENTRY_CAP,
        })?;
    let total = rows.checked_mul(cols).unwrap_or(usize::MAX);
    if total > KRON_ENTRY_CAP {
        return Err(Error::Capacity {
            context: "kron",
            requested: total,
            cap: KRON_ENTRY_CAP,
        });
    }
    let (p, q) = (b.rows(), b.cols());
    let mut out = Array2::<f64>::zeros((rows, cols));
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            let w = a.get(i, j);
            let mut block = out.slice_mut(ndarray::s![i * p..(i + 1) * p, j * q..(j + 1) * q]);
            block.zip_mut_with(b.array(), |o, &bv| *o = w * bv);
        }
    }
    DenseMatrix::from_array(out)
}

/// Kronecker product of two column vectors, `v ⊗ w`.
pub fn kron_vec(v: ArrayView1<f64>, w: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(v.len() * w.len());
    for (i, &vi) in v.iter().enumerate() {
        for (j, &wj) in w.iter().enumerate() {
            out[i * w.len() + j] = vi * wj;
        }
    }
    out
}

/// Componentwise (Hadamard) product.
pub fn hadamard(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<Array1<f64>> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "hadamard",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(&a * &b)
}

/// Power-iteration estimate of the squared spectral norm of a linear map given
/// by an (apply, adjoint) pair. Estimates are monotone nondecreasing across
/// iterations; the loop stops once successive estimates differ by less than
/// `tol` relatively, or after `iters` iterations.
///
/// A zero operator yields 0.
pub fn op_norm_sq<F, G>(apply: F, adjoint_apply: G, dim: usize, iters: usize, tol: f64) -> f64
where
    F: Fn(ArrayView1<f64>) -> Array1<f64>,
    G: Fn(ArrayView1<f64>) -> Array1<f64>,
{
    if dim == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9_7f4a_7c15);

    #[cfg(debug_assertions)]
    {
        // The pair must actually be adjoint: <A u, A u'> computed both ways.
        let u = Array1::from_shape_fn(dim, |_| rng.random::<f64>() - 0.5);
        let au = apply(u.view());
        let v = Array1::from_shape_fn(au.len(), |_| rng.random::<f64>() - 0.5);
        let lhs = au.dot(&v);
        let rhs = u.dot(&adjoint_apply(v.view()));
        let scale = lhs.abs().max(rhs.abs()).max(1.0);
        debug_assert!(
            (lhs - rhs).abs() <= 1e-8 * scale,
            "op_norm_sq: apply/adjoint_apply are not an adjoint pair ({lhs} vs {rhs})"
        );
    }

    let mut z = Array1::from_shape_fn(dim, |_| rng.random::<f64>() - 0.5);
    let norm = z.dot(&z).sqrt();
    if norm == 0.0 {
        return 0.0;
    }
    z.mapv_inplace(|v| v / norm);

    let mut best = 0.0_f64;
    let mut prev = 0.0_f64;
    for it in 0..iters {
        let w = apply(z.view());
        let rho = w.dot(&w);
        if rho == 0.0 {
            return best;
        }
        best = best.max(rho);
        let mut back = adjoint_apply(w.view());
        let norm = back.dot(&back).sqrt();
        if norm == 0.0 {
            return best;
        }
        back.mapv_inplace(|v| v / norm);
        z = back;
        if it > 0 && (rho - prev).abs() < tol * rho.abs() {
            break;
        }
        prev = rho;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn assert_close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    #[test]
    fn pinv_identity_case() {
        let m = DenseMatrix::identity(2);
        let x = pinv_solve(&m, array![2.0, 3.0].view()).unwrap();
        assert_close(x[0], 2.0, 1e-14);
        assert_close(x[1], 3.0, 1e-14);
    }

    #[test]
    fn pinv_zero_matrix_gives_least_norm_zero() {
        let m = DenseMatrix::zeros(2, 2);
        let x = pinv_solve(&m, array![1.0, 1.0].view()).unwrap();
        assert_eq!(x, array![0.0, 0.0]);
    }

    #[test]
    fn pinv_rank_deficient_projects_rhs() {
        let m = DenseMatrix::from_rows(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let x = pinv_solve(&m, array![2.0, 3.0].view()).unwrap();
        assert_close(x[0], 2.0, 1e-12);
        assert_close(x[1], 0.0, 1e-12);
    }

    #[test]
    fn pinv_rejects_asymmetry_and_nonfinite() {
        let m = DenseMatrix::from_rows(2, 2, vec![1.0, 0.5, 0.0, 1.0]).unwrap();
        assert!(matches!(
            pinv_solve(&m, array![1.0, 1.0].view()),
            Err(Error::InvalidInput(_))
        ));
        assert!(DenseMatrix::from_rows(1, 1, vec![f64::NAN]).is_err());
        let ok = DenseMatrix::identity(2);
        assert!(matches!(
            pinv_solve(&ok, array![1.0, f64::INFINITY].view()),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn kron_identities() {
        let i2 = DenseMatrix::identity(2);
        let k = kron(&i2, &i2).unwrap();
        assert_eq!(k.array(), DenseMatrix::identity(4).array());

        let v = DenseMatrix::from_rows(2, 1, vec![1.0, 2.0]).unwrap();
        let w = DenseMatrix::from_rows(2, 1, vec![3.0, 4.0]).unwrap();
        let col = kron(&v, &w).unwrap();
        assert_eq!(col.array().as_slice().unwrap(), &[3.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn kron_with_identity_reproduces_vector_kron() {
        // (v ⊗ I_n) w = v ⊗ w
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = Array1::from_shape_fn(3, |_| rng.random::<f64>() - 0.5);
        let w = Array1::from_shape_fn(n, |_| rng.random::<f64>() - 0.5);
        let vm = DenseMatrix::from_array(v.clone().insert_axis(ndarray::Axis(1))).unwrap();
        let vi = kron(&vm, &DenseMatrix::identity(n)).unwrap();
        let lhs = vi.array().dot(&w);
        let rhs = kron_vec(v.view(), w.view());
        for (a, b) in lhs.iter().zip(rhs.iter()) {
            assert_close(*a, *b, 1e-12);
        }
    }

    #[test]
    fn kron_capacity_error() {
        let a = DenseMatrix::zeros(4096, 4096);
        let b = DenseMatrix::zeros(4096, 4096);
        assert!(matches!(kron(&a, &b), Err(Error::Capacity { .. })));
    }

    #[test]
    fn hadamard_basics() {
        let a = array![1.0, 2.0, 3.0];
        assert_eq!(
            hadamard(a.view(), array![1.0, 1.0, 1.0].view()).unwrap(),
            a
        );
        assert_eq!(
            hadamard(a.view(), Array1::zeros(3).view()).unwrap(),
            Array1::zeros(3)
        );
        assert_eq!(
            hadamard(array![2.0, 3.0].view(), array![5.0, 7.0].view()).unwrap(),
            array![10.0, 21.0]
        );
        assert!(hadamard(a.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn op_norm_of_identity_and_scaling() {
        let id = |v: ArrayView1<f64>| v.to_owned();
        assert_close(op_norm_sq(id, id, 6, 200, 1e-12), 1.0, 1e-10);

        let tri = |v: ArrayView1<f64>| v.mapv(|x| 3.0 * x);
        assert_close(op_norm_sq(tri, tri, 5, 200, 1e-12), 9.0, 1e-9);
    }

    #[test]
    fn op_norm_of_zero_operator() {
        let z = |v: ArrayView1<f64>| Array1::zeros(v.len());
        assert_eq!(op_norm_sq(z, z, 8, 100, 1e-12), 0.0);
    }

    #[test]
    fn op_norm_of_forward_differences_is_below_eight() {
        // Forward-difference operator on a 28x28 grid, built inline so the
        // bound is checked independently of the objectives module.
        let m = 28usize;
        let apply = move |v: ArrayView1<f64>| {
            let mut out = Array1::zeros(2 * m * m);
            for i in 0..m {
                for j in 0..m {
                    let p = i * m + j;
                    if i + 1 < m {
                        out[p] = v[(i + 1) * m + j] - v[p];
                    }
                    if j + 1 < m {
                        out[m * m + p] = v[i * m + j + 1] - v[p];
                    }
                }
            }
            out
        };
        let adjoint = move |w: ArrayView1<f64>| {
            let mut out = Array1::zeros(m * m);
            for i in 0..m {
                for j in 0..m {
                    let p = i * m + j;
                    if i + 1 < m {
                        out[(i + 1) * m + j] += w[p];
                        out[p] -= w[p];
                    }
                    if j + 1 < m {
                        out[i * m + j + 1] += w[m * m + p];
                        out[p] -= w[m * m + p];
                    }
                }
            }
            out
        };
        let est = op_norm_sq(apply, adjoint, m * m, 20_000, 1e-13);
        assert!(est <= 8.0, "estimate {est} exceeds 8");
        assert!(est > 7.5, "estimate {est} implausibly low");
    }
}
