//! The four preconditioner parametrisations as affine maps of their parameter
//! vector: scalar step size, diagonal matrix, full matrix, and image
//! convolution.
//!
//! For every variant, `G_θ ∇f` is affine in `θ`, which is what makes the greedy
//! training subproblem convex. The module provides the forward application
//! `G_θ g`, the parameter-space adjoint needed for subproblem gradients, the
//! safeguard embedding with `G_θ̃ = τ I`, and the per-variant smoothness
//! constant of the subproblem gradient.

use ndarray::{Array1, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::{conv2d, Image, KernelGeometry};

/// Which structure the preconditioner matrix takes, together with the sizes
/// needed to interpret a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Parametrization {
    /// `G = θ I` with a single scalar parameter.
    Scalar,
    /// `G = diag(θ)` acting on vectors of length `n`.
    Diagonal { n: usize },
    /// `G = P` for a dense `n x n` matrix; parameters are column-stacked, so
    /// index `j*n + i` holds `P[i][j]`.
    FullMatrix { n: usize },
    /// `G g = κ * g` for a `h1 x h2` kernel convolving `m1 x m2` images.
    /// Parameters are the kernel scanned column by column.
    Conv {
        h1: usize,
        h2: usize,
        m1: usize,
        m2: usize,
    },
}

impl Parametrization {
    /// Length of the flat parameter vector.
    pub fn param_dim(&self) -> usize {
        match self {
            Parametrization::Scalar => 1,
            Parametrization::Diagonal { n } => *n,
            Parametrization::FullMatrix { n } => n * n,
            Parametrization::Conv { h1, h2, .. } => h1 * h2,
        }
    }

    /// Length of the vectors the preconditioner acts on; `None` means any.
    pub fn input_dim(&self) -> Option<usize> {
        match self {
            Parametrization::Scalar => None,
            Parametrization::Diagonal { n } | Parametrization::FullMatrix { n } => Some(*n),
            Parametrization::Conv { m1, m2, .. } => Some(m1 * m2),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Parametrization::Scalar => "scalar",
            Parametrization::Diagonal { .. } => "diagonal",
            Parametrization::FullMatrix { .. } => "full",
            Parametrization::Conv { .. } => "conv",
        }
    }

    fn check_input(&self, len: usize, context: &'static str) -> Result<()> {
        if let Some(n) = self.input_dim() {
            if len != n {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: n,
                    got: len,
                });
            }
        }
        Ok(())
    }
}

/// A flat parameter vector tagged with its parametrization.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    params: Array1<f64>,
    parametrization: Parametrization,
}

impl ParamVector {
    pub fn new(parametrization: Parametrization, params: Array1<f64>) -> Result<Self> {
        if params.len() != parametrization.param_dim() {
            return Err(Error::DimensionMismatch {
                context: "ParamVector::new",
                expected: parametrization.param_dim(),
                got: params.len(),
            });
        }
        if !params.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "parameter entries must be finite".to_string(),
            ));
        }
        Ok(Self {
            params,
            parametrization,
        })
    }

    pub fn params(&self) -> &Array1<f64> {
        &self.params
    }

    pub fn parametrization(&self) -> &Parametrization {
        &self.parametrization
    }
}

/// Applies the preconditioner: `G_θ g`.
pub fn apply(theta: &ParamVector, g: ArrayView1<f64>) -> Result<Array1<f64>> {
    let p = &theta.parametrization;
    p.check_input(g.len(), "preconditioners::apply")?;
    let params = &theta.params;
    match p {
        Parametrization::Scalar => Ok(g.mapv(|v| params[0] * v)),
        Parametrization::Diagonal { .. } => Ok(&g * params),
        Parametrization::FullMatrix { n } => {
            let n = *n;
            let theta_slice = params.as_slice().expect("owned params are contiguous");
            let mut out = vec![0.0; n];
            for (j, &gj) in g.iter().enumerate() {
                if gj == 0.0 {
                    continue;
                }
                let col = &theta_slice[j * n..(j + 1) * n];
                for (o, &c) in out.iter_mut().zip(col) {
                    *o += c * gj;
                }
            }
            Ok(Array1::from_vec(out))
        }
        Parametrization::Conv { h1, h2, m1, m2 } => {
            let kernel = Image::from_flat(*h1, *h2, params.view())?;
            let img = Image::from_flat(*m1, *m2, g)?;
            Ok(conv2d(&kernel, &img).to_flat())
        }
    }
}

/// Parameter-space adjoint of the affine expansion at one data point: returns
/// `Bᵀ r` where `B` is the matrix with `G_θ ∇f = B θ` for the cached gradient
/// `g_at_x = ∇f(x)`.
///
/// This satisfies `<r, apply(θ, g)> = <θ, adjoint_apply(p, g, r)>` for every
/// variant.
pub fn adjoint_apply(
    p: &Parametrization,
    g_at_x: ArrayView1<f64>,
    r: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    p.check_input(g_at_x.len(), "preconditioners::adjoint_apply gradient")?;
    if r.len() != g_at_x.len() {
        return Err(Error::DimensionMismatch {
            context: "preconditioners::adjoint_apply residual",
            expected: g_at_x.len(),
            got: r.len(),
        });
    }
    match p {
        Parametrization::Scalar => Ok(Array1::from_vec(vec![g_at_x.dot(&r)])),
        Parametrization::Diagonal { .. } => Ok(&g_at_x * &r),
        Parametrization::FullMatrix { n } => {
            // Column-stacked outer product r gᵀ: entry for P[i][j] is r_i g_j.
            let n = *n;
            let mut out = vec![0.0; n * n];
            for (j, &gj) in g_at_x.iter().enumerate() {
                let col = &mut out[j * n..(j + 1) * n];
                for (o, &ri) in col.iter_mut().zip(r.iter()) {
                    *o = ri * gj;
                }
            }
            Ok(Array1::from_vec(out))
        }
        Parametrization::Conv { h1, h2, m1, m2 } => {
            let geom = KernelGeometry::from_dims(*h1, *h2)?;
            let g_img = Image::from_flat(*m1, *m2, g_at_x)?;
            let r_img = Image::from_flat(*m1, *m2, r)?;
            let (m1s, m2s) = (*m1 as isize, *m2 as isize);
            let mut kernel = vec![0.0; h1 * h2];
            let (lo1, hi1) = geom.row_offsets();
            let (lo2, hi2) = geom.col_offsets();
            for k1 in lo1..=hi1 {
                let n1_lo = k1.max(0);
                let n1_hi = (m1s + k1).min(m1s);
                for k2 in lo2..=hi2 {
                    let n2_lo = k2.max(0);
                    let n2_hi = (m2s + k2).min(m2s);
                    let mut acc = 0.0;
                    for n1 in n1_lo..n1_hi {
                        let r_row = r_img.array().row(n1 as usize);
                        let g_row = g_img.array().row((n1 - k1) as usize);
                        let rs = r_row.to_slice().expect("rows contiguous");
                        let gs = g_row.to_slice().expect("rows contiguous");
                        for n2 in n2_lo..n2_hi {
                            acc += rs[n2 as usize] * gs[(n2 - k2) as usize];
                        }
                    }
                    // Column-major kernel layout, matching ParamVector order.
                    let row = (k1 + geom.r1 as isize) as usize;
                    let col = (k2 + geom.r2 as isize) as usize;
                    kernel[col * h1 + row] = acc;
                }
            }
            Ok(Array1::from_vec(kernel))
        }
    }
}

/// The safeguard parameters: the unique `θ̃` with `G_θ̃ = τ I`.
pub fn embed_tau(p: &Parametrization, tau: f64) -> Result<ParamVector> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!(
            "safeguard step must be positive and finite, got {tau}"
        )));
    }
    let params = match p {
        Parametrization::Scalar => Array1::from_vec(vec![tau]),
        Parametrization::Diagonal { n } => Array1::from_elem(*n, tau),
        Parametrization::FullMatrix { n } => {
            let n = *n;
            let mut v = vec![0.0; n * n];
            for i in 0..n {
                v[i * n + i] = tau;
            }
            Array1::from_vec(v)
        }
        Parametrization::Conv { h1, h2, .. } => {
            let geom = KernelGeometry::from_dims(*h1, *h2)?;
            let mut v = vec![0.0; h1 * h2];
            v[geom.r2 * h1 + geom.r1] = tau;
            Array1::from_vec(v)
        }
    };
    ParamVector::new(p.clone(), params)
}

/// Smoothness constant of the greedy subproblem gradient for a snapshot of
/// dataset gradients `∇f_k(x_k)` with objective smoothness constants `L_k`:
///
/// - scalar and full matrix: `(1/N) Σ L_k ‖∇f_k‖₂²`
/// - diagonal: `(1/N) Σ L_k max_i |[∇f_k]_i|²`
/// - convolution: `(h1 h2 / N) Σ L_k ‖∇f_k‖_F²`
pub fn lipschitz_bound(
    p: &Parametrization,
    grads: &[Array1<f64>],
    l_list: &[f64],
) -> Result<f64> {
    if grads.is_empty() {
        return Err(Error::EmptyDataset("lipschitz_bound"));
    }
    if grads.len() != l_list.len() {
        return Err(Error::DimensionMismatch {
            context: "lipschitz_bound lists",
            expected: grads.len(),
            got: l_list.len(),
        });
    }
    let n = grads.len() as f64;
    let total: f64 = match p {
        Parametrization::Scalar | Parametrization::FullMatrix { .. } => grads
            .iter()
            .zip(l_list)
            .map(|(g, l)| l * g.dot(g))
            .sum(),
        Parametrization::Diagonal { .. } => grads
            .iter()
            .zip(l_list)
            .map(|(g, l)| {
                let max_abs = g.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
                l * max_abs * max_abs
            })
            .sum(),
        Parametrization::Conv { h1, h2, .. } => {
            let scale = (h1 * h2) as f64;
            grads
                .iter()
                .zip(l_list)
                .map(|(g, l)| scale * l * g.dot(g))
                .sum()
        }
    };
    Ok(total / n)
}
