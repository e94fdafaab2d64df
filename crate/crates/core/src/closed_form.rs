//! Closed-form minimizers of the greedy subproblem when every objective in the
//! dataset is least-squares: the general affine solution, the scalar, diagonal
//! and full-matrix specializations, the interpolating matrix for small
//! datasets, and the uniqueness certificate.

use std::sync::Arc;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{kron, kron_vec, pinv_matrix, pinv_solve, symmetric_eigenvalues, DenseMatrix};
use crate::objectives::LeastSquaresProblem;

/// Largest `n` for which the full-matrix normal system (size `n² x n²`) may be
/// formed.
pub const FULL_MATRIX_DIM_CAP: usize = 64;

/// Relative singular-value tolerance for numerical-rank decisions.
const RANK_REL_TOL: f64 = 1e-10;

/// A least-squares dataset frozen at the current iterates, with gradients
/// cached.
pub struct LsSnapshot {
    problems: Vec<Arc<LeastSquaresProblem>>,
    iterates: Vec<Array1<f64>>,
    gradients: Vec<Array1<f64>>,
}

impl LsSnapshot {
    pub fn new(
        problems: Vec<Arc<LeastSquaresProblem>>,
        iterates: Vec<Array1<f64>>,
    ) -> Result<Self> {
        if problems.is_empty() {
            return Err(Error::EmptyDataset("LsSnapshot"));
        }
        if problems.len() != iterates.len() {
            return Err(Error::DimensionMismatch {
                context: "LsSnapshot iterates",
                expected: problems.len(),
                got: iterates.len(),
            });
        }
        let dim = problems[0].operator().input_dim();
        let mut gradients = Vec::with_capacity(problems.len());
        for (p, x) in problems.iter().zip(&iterates) {
            if p.operator().input_dim() != dim {
                return Err(Error::DimensionMismatch {
                    context: "LsSnapshot problem dims",
                    expected: dim,
                    got: p.operator().input_dim(),
                });
            }
            gradients.push(p.gradient(x.view())?);
        }
        Ok(Self {
            problems,
            iterates,
            gradients,
        })
    }

    pub fn len(&self) -> usize {
        self.problems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.problems[0].operator().input_dim()
    }

    pub fn problems(&self) -> &[Arc<LeastSquaresProblem>] {
        &self.problems
    }

    pub fn iterates(&self) -> &[Array1<f64>] {
        &self.iterates
    }

    pub fn gradients(&self) -> &[Array1<f64>] {
        &self.gradients
    }

    /// Mean objective value after stepping each point to `v_k - B_k θ`; the
    /// quantity all solvers in this module minimize.
    pub fn objective_after(
        &self,
        b_list: &[DenseMatrix],
        v_list: &[Array1<f64>],
        theta: &Array1<f64>,
    ) -> Result<f64> {
        let mut total = 0.0;
        for ((p, b), v) in self.problems.iter().zip(b_list).zip(v_list) {
            let stepped = v - &b.array().dot(theta);
            total += p.value(stepped.view())?;
        }
        Ok(total / self.len() as f64)
    }
}

/// Least-norm minimizer of the greedy subproblem for a general affine
/// parametrisation with expansion `x_k - G_θ ∇f_k = v_k - B_k θ`:
///
/// `θ = ((1/N) Σ (A_k B_k)ᵀ(A_k B_k))^† ((1/N) Σ B_kᵀ ∇f_k(v_k))`
pub fn general_affine_ls(
    b_list: &[DenseMatrix],
    v_list: &[Array1<f64>],
    snapshot: &LsSnapshot,
) -> Result<Array1<f64>> {
    let n_points = snapshot.len();
    if b_list.len() != n_points || v_list.len() != n_points {
        return Err(Error::DimensionMismatch {
            context: "general_affine_ls lists",
            expected: n_points,
            got: b_list.len().min(v_list.len()),
        });
    }
    let dim = snapshot.dim();
    let r = b_list[0].cols();
    let mut lhs = Array2::<f64>::zeros((r, r));
    let mut rhs = Array1::<f64>::zeros(r);
    for ((problem, b), v) in snapshot.problems().iter().zip(b_list).zip(v_list) {
        if b.rows() != dim || b.cols() != r {
            return Err(Error::DimensionMismatch {
                context: "general_affine_ls expansion",
                expected: dim * r,
                got: b.rows() * b.cols(),
            });
        }
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "general_affine_ls offset",
                expected: dim,
                got: v.len(),
            });
        }
        // Columns of A_k B_k, one operator application per parameter.
        let mut ab = Array2::<f64>::zeros((problem.operator().output_dim(), r));
        for j in 0..r {
            let col = problem.operator().apply(b.array().column(j));
            ab.column_mut(j).assign(&col);
        }
        lhs += &ab.t().dot(&ab);
        rhs += &b.array().t().dot(&problem.gradient(v.view())?);
    }
    let scale = 1.0 / n_points as f64;
    lhs.mapv_inplace(|x| x * scale);
    rhs.mapv_inplace(|x| x * scale);
    pinv_solve(&DenseMatrix::from_array(lhs)?, rhs.view())
}

/// Optimal greedy scalar step: the ratio of mean squared gradient norms to
/// mean squared forward-mapped gradient norms, or 0 when every `A_k ∇f_k`
/// vanishes. With one data point this is exact line search.
pub fn scalar_ls(snapshot: &LsSnapshot) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, g) in snapshot.problems().iter().zip(snapshot.gradients()) {
        num += g.dot(g);
        let ag = p.operator().apply(g.view());
        den += ag.dot(&ag);
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Least-norm optimal diagonal preconditioner:
///
/// `p = ((1/N) Σ (∇f_k ∇f_kᵀ) ⊙ (A_kᵀ A_k))^† ((1/N) Σ ∇f_k ⊙ ∇f_k)`
pub fn diagonal_ls(snapshot: &LsSnapshot) -> Result<Array1<f64>> {
    let dim = snapshot.dim();
    let n_points = snapshot.len() as f64;
    let mut lhs = Array2::<f64>::zeros((dim, dim));
    let mut rhs = Array1::<f64>::zeros(dim);
    for (p, g) in snapshot.problems().iter().zip(snapshot.gradients()) {
        let gram = p.operator().gram()?;
        for i in 0..dim {
            for j in 0..dim {
                lhs[[i, j]] += g[i] * g[j] * gram.get(i, j);
            }
        }
        rhs += &(g * g);
    }
    lhs.mapv_inplace(|x| x / n_points);
    rhs.mapv_inplace(|x| x / n_points);
    pinv_solve(&DenseMatrix::from_array(lhs)?, rhs.view())
}

/// Least-norm optimal full-matrix preconditioner via the Kronecker normal
/// system
///
/// `θ = ((1/N) Σ (∇f_k ∇f_kᵀ) ⊗ (A_kᵀ A_k))^† ((1/N) Σ ∇f_k ⊗ ∇f_k)`
///
/// reshaped column by column into `P`. The system has dimension `n²`, so `n`
/// is capped at [`FULL_MATRIX_DIM_CAP`].
pub fn full_ls(snapshot: &LsSnapshot) -> Result<DenseMatrix> {
    let dim = snapshot.dim();
    if dim > FULL_MATRIX_DIM_CAP {
        return Err(Error::Capacity {
            context: "full_ls",
            requested: dim,
            cap: FULL_MATRIX_DIM_CAP,
        });
    }
    let n_points = snapshot.len() as f64;
    let r = dim * dim;
    let mut lhs = Array2::<f64>::zeros((r, r));
    let mut rhs = Array1::<f64>::zeros(r);
    for (p, g) in snapshot.problems().iter().zip(snapshot.gradients()) {
        let mut outer = Array2::<f64>::zeros((dim, dim));
        for i in 0..dim {
            for j in 0..dim {
                outer[[i, j]] = g[i] * g[j];
            }
        }
        let gram = p.operator().gram()?;
        let block = kron(&DenseMatrix::from_array(outer)?, &gram)?;
        lhs += block.array();
        rhs += &kron_vec(g.view(), g.view());
    }
    lhs.mapv_inplace(|x| x / n_points);
    rhs.mapv_inplace(|x| x / n_points);
    let theta = pinv_solve(&DenseMatrix::from_array(lhs)?, rhs.view())?;

    let mut p = Array2::<f64>::zeros((dim, dim));
    for j in 0..dim {
        for i in 0..dim {
            p[[i, j]] = theta[j * dim + i];
        }
    }
    DenseMatrix::from_array(p)
}

/// Column-stacked parameter form of a square matrix (index `j*n + i` holds
/// `P[i][j]`), matching the full-matrix
/// [`crate::preconditioners::ParamVector`] layout.
pub fn column_stacked(p: &DenseMatrix) -> Array1<f64> {
    let n = p.rows();
    let mut out = Array1::zeros(n * p.cols());
    for j in 0..p.cols() {
        for i in 0..n {
            out[j * n + i] = p.get(i, j);
        }
    }
    out
}

/// Least-norm matrix `P` with `P ∇f_k(x_k) = x_k - x_k^*` for every `k`.
/// Requires at most `n` data points with linearly independent gradients; the
/// rank is checked numerically at relative tolerance `1e-10`.
pub fn interpolating_full(
    grads: &[Array1<f64>],
    displacements: &[Array1<f64>],
) -> Result<DenseMatrix> {
    if grads.is_empty() {
        return Err(Error::EmptyDataset("interpolating_full"));
    }
    if grads.len() != displacements.len() {
        return Err(Error::DimensionMismatch {
            context: "interpolating_full lists",
            expected: grads.len(),
            got: displacements.len(),
        });
    }
    let dim = grads[0].len();
    let n_points = grads.len();
    if n_points > dim {
        return Err(Error::RankDeficient {
            rank: dim,
            required: n_points,
        });
    }
    let mut g = Array2::<f64>::zeros((dim, n_points));
    let mut d = Array2::<f64>::zeros((dim, n_points));
    for k in 0..n_points {
        if grads[k].len() != dim || displacements[k].len() != dim {
            return Err(Error::DimensionMismatch {
                context: "interpolating_full vectors",
                expected: dim,
                got: grads[k].len().min(displacements[k].len()),
            });
        }
        g.column_mut(k).assign(&grads[k]);
        d.column_mut(k).assign(&displacements[k]);
    }
    let m = DenseMatrix::from_array(g.t().dot(&g))?;
    let eigs = symmetric_eigenvalues(&m)?;
    let lambda_max = eigs[eigs.len() - 1].max(0.0);
    let sv_cutoff = RANK_REL_TOL * lambda_max.sqrt();
    let rank = eigs
        .iter()
        .filter(|l| l.max(0.0).sqrt() > sv_cutoff)
        .count();
    if rank < n_points {
        return Err(Error::RankDeficient {
            rank,
            required: n_points,
        });
    }
    // P = D (GᵀG)^{-1} Gᵀ is the least-Frobenius-norm interpolant for a
    // full-column-rank G.
    let m_inv = pinv_matrix(&m)?;
    let p = d.dot(m_inv.array()).dot(&g.t());
    DenseMatrix::from_array(p)
}

/// Certified strong-convexity constant of the greedy subproblem, when one is
/// available: the best `μ_j λ_min(B_jᵀ B_j) / N` over points `j` that carry a
/// strong-convexity constant and have an injective expansion matrix. `None`
/// when no point qualifies.
pub fn uniqueness_certificate(
    b_list: &[DenseMatrix],
    mu_list: &[Option<f64>],
) -> Result<Option<f64>> {
    if b_list.len() != mu_list.len() {
        return Err(Error::DimensionMismatch {
            context: "uniqueness_certificate lists",
            expected: b_list.len(),
            got: mu_list.len(),
        });
    }
    let n_points = b_list.len() as f64;
    let mut best: Option<f64> = None;
    for (b, mu) in b_list.iter().zip(mu_list) {
        let Some(mu) = mu else { continue };
        let gram = DenseMatrix::from_array(b.array().t().dot(b.array()))?;
        let eigs = symmetric_eigenvalues(&gram)?;
        let lambda_min = eigs[0].max(0.0);
        let lambda_max = eigs[eigs.len() - 1].max(0.0);
        let injective = lambda_min.sqrt() > RANK_REL_TOL * lambda_max.sqrt();
        if injective {
            let bound = mu * lambda_min / n_points;
            best = Some(best.map_or(bound, |b: f64| b.max(bound)));
        }
    }
    Ok(best)
}
