//! Objective functions: the abstraction shared by the trainer and deployment
//! runners, plus the two concrete families used throughout: least-squares
//! residual objectives and the Huber-regularised total-variation deblurring
//! objective with a Gaussian blur forward operator.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::linalg::{conv2d, op_norm_sq, DenseMatrix, Image};

/// Iteration cap for internal power-method norm estimates.
const POWER_ITERS: usize = 50_000;
/// Relative tolerance for internal power-method norm estimates.
const POWER_TOL: f64 = 1e-14;
/// Largest dimension for which a dense Gram matrix may be materialized.
pub const GRAM_DIM_CAP: usize = 4096;

/// A convex, continuously differentiable objective with a known smoothness
/// constant.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// Objective value. Panics on dimension mismatch; use the concrete types'
    /// checked entry points when the input is untrusted.
    fn eval(&self, x: ArrayView1<f64>) -> f64;

    /// Gradient. Panics on dimension mismatch.
    fn grad(&self, x: ArrayView1<f64>) -> Array1<f64>;

    /// Smoothness constant `L` (gradient Lipschitz constant or a valid upper
    /// bound for it).
    fn smoothness(&self) -> f64;

    /// Strong-convexity constant, when one is known.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    /// Access to least-squares structure when the objective has it.
    fn least_squares(&self) -> Option<&LeastSquaresProblem> {
        None
    }
}

/// The linear forward map of a least-squares objective, either a dense matrix
/// or an (apply, adjoint) operator pair.
pub struct ForwardOperator {
    apply: Arc<dyn Fn(ArrayView1<f64>) -> Array1<f64> + Send + Sync>,
    adjoint: Arc<dyn Fn(ArrayView1<f64>) -> Array1<f64> + Send + Sync>,
    input_dim: usize,
    output_dim: usize,
    dense: Option<Arc<DenseMatrix>>,
    gram: OnceLock<Arc<DenseMatrix>>,
}

impl ForwardOperator {
    pub fn from_dense(matrix: DenseMatrix) -> Self {
        let m = Arc::new(matrix);
        let (rows, cols) = (m.rows(), m.cols());
        let fwd = Arc::clone(&m);
        let adj = Arc::clone(&m);
        Self {
            apply: Arc::new(move |x| fwd.array().dot(&x)),
            adjoint: Arc::new(move |r| adj.array().t().dot(&r)),
            input_dim: cols,
            output_dim: rows,
            dense: Some(m),
            gram: OnceLock::new(),
        }
    }

    pub fn from_functions(
        apply: Arc<dyn Fn(ArrayView1<f64>) -> Array1<f64> + Send + Sync>,
        adjoint: Arc<dyn Fn(ArrayView1<f64>) -> Array1<f64> + Send + Sync>,
        output_dim: usize,
        input_dim: usize,
    ) -> Self {
        Self {
            apply,
            adjoint,
            input_dim,
            output_dim,
            dense: None,
            gram: OnceLock::new(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        (self.apply)(x)
    }

    pub fn apply_adjoint(&self, r: ArrayView1<f64>) -> Array1<f64> {
        (self.adjoint)(r)
    }

    pub fn dense(&self) -> Option<&DenseMatrix> {
        self.dense.as_deref()
    }

    /// The Gram matrix `AᵀA`, materialized densely and cached. For operator
    /// pairs the columns of `A` are recovered by applying to basis vectors.
    pub fn gram(&self) -> Result<Arc<DenseMatrix>> {
        if self.input_dim > GRAM_DIM_CAP {
            return Err(Error::Capacity {
                context: "ForwardOperator::gram",
                requested: self.input_dim,
                cap: GRAM_DIM_CAP,
            });
        }
        if let Some(g) = self.gram.get() {
            return Ok(Arc::clone(g));
        }
        let gram = match &self.dense {
            Some(a) => a.array().t().dot(a.array()),
            None => {
                let n = self.input_dim;
                let mut cols: Vec<Array1<f64>> = Vec::with_capacity(n);
                let mut basis = Array1::zeros(n);
                for j in 0..n {
                    basis[j] = 1.0;
                    cols.push((self.apply)(basis.view()));
                    basis[j] = 0.0;
                }
                let mut g = Array2::zeros((n, n));
                for i in 0..n {
                    for j in i..n {
                        let v = cols[i].dot(&cols[j]);
                        g[[i, j]] = v;
                        g[[j, i]] = v;
                    }
                }
                g
            }
        };
        let gram = Arc::new(DenseMatrix::from_array(gram)?);
        Ok(Arc::clone(self.gram.get_or_init(|| gram)))
    }

    /// Power-iteration estimate of `‖A‖²`.
    pub fn norm_sq_estimate(&self) -> f64 {
        let apply = Arc::clone(&self.apply);
        let adjoint = Arc::clone(&self.adjoint);
        op_norm_sq(
            move |x| apply(x),
            move |r| adjoint(r),
            self.input_dim,
            POWER_ITERS,
            POWER_TOL,
        )
    }
}

/// `f(x) = ½ ‖A x - y‖₂²` with smoothness constant `‖A‖²`.
pub struct LeastSquaresProblem {
    op: ForwardOperator,
    y: Array1<f64>,
    smoothness: f64,
    mu: Option<f64>,
}

impl LeastSquaresProblem {
    pub fn new(op: ForwardOperator, y: Array1<f64>) -> Result<Self> {
        if y.len() != op.output_dim() {
            return Err(Error::DimensionMismatch {
                context: "LeastSquaresProblem observation",
                expected: op.output_dim(),
                got: y.len(),
            });
        }
        if !y.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidInput(
                "observation entries must be finite".to_string(),
            ));
        }
        let smoothness = op.norm_sq_estimate();
        Ok(Self {
            op,
            y,
            smoothness,
            mu: None,
        })
    }

    pub fn from_dense(a: DenseMatrix, y: Array1<f64>) -> Result<Self> {
        Self::new(ForwardOperator::from_dense(a), y)
    }

    /// Computes and stores `λ_min(AᵀA)` as the strong-convexity constant.
    /// Leaves it unset when the smallest eigenvalue is not positive.
    pub fn with_strong_convexity(mut self) -> Result<Self> {
        let gram = self.op.gram()?;
        let eigs = crate::linalg::symmetric_eigenvalues(&gram)?;
        let min = eigs[0];
        self.mu = if min > 0.0 { Some(min) } else { None };
        Ok(self)
    }

    pub fn operator(&self) -> &ForwardOperator {
        &self.op
    }

    pub fn observation(&self) -> &Array1<f64> {
        &self.y
    }

    fn check_dim(&self, x: ArrayView1<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.op.input_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.op.input_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Checked objective value: `½ ‖A x - y‖₂²`.
    pub fn value(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check_dim(x, "LeastSquaresProblem::value")?;
        let r = self.op.apply(x) - &self.y;
        Ok(0.5 * r.dot(&r))
    }

    /// Checked gradient: `Aᵀ (A x - y)`.
    pub fn gradient(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(x, "LeastSquaresProblem::gradient")?;
        let r = self.op.apply(x) - &self.y;
        Ok(self.op.apply_adjoint(r.view()))
    }
}

impl Objective for LeastSquaresProblem {
    fn dim(&self) -> usize {
        self.op.input_dim()
    }

    fn eval(&self, x: ArrayView1<f64>) -> f64 {
        self.value(x).expect("dimension checked by caller")
    }

    fn grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.gradient(x).expect("dimension checked by caller")
    }

    fn smoothness(&self) -> f64 {
        self.smoothness
    }

    fn strong_convexity(&self) -> Option<f64> {
        self.mu
    }

    fn least_squares(&self) -> Option<&LeastSquaresProblem> {
        Some(self)
    }
}

/// Gaussian blur under zero padding: a normalized, 180°-symmetric kernel, so
/// the operator is self-adjoint with `‖A‖² ≤ 1`.
pub struct GaussianBlurOperator {
    sigma: f64,
    radius: usize,
    kernel: Image,
    m1: usize,
    m2: usize,
    norm_sq: f64,
}

impl GaussianBlurOperator {
    /// Kernel truncated at `ceil(3σ)` pixels and renormalized to unit sum.
    pub fn new(sigma: f64, m1: usize, m2: usize) -> Result<Self> {
        if !(sigma > 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidInput(format!(
                "blur width must be positive, got {sigma}"
            )));
        }
        Self::with_radius(sigma, (3.0 * sigma).ceil() as usize, m1, m2)
    }

    /// Explicit truncation radius; radius 0 yields the identity operator.
    pub fn with_radius(sigma: f64, radius: usize, m1: usize, m2: usize) -> Result<Self> {
        if m1 == 0 || m2 == 0 {
            return Err(Error::InvalidInput(
                "image dimensions must be positive".to_string(),
            ));
        }
        let h = 2 * radius + 1;
        let mut pixels = vec![0.0; h * h];
        let mut sum = 0.0;
        for i in 0..h {
            for j in 0..h {
                let di = i as f64 - radius as f64;
                let dj = j as f64 - radius as f64;
                let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
                pixels[i * h + j] = v;
                sum += v;
            }
        }
        for v in &mut pixels {
            *v /= sum;
        }
        let kernel = Image::from_pixels(h, h, pixels)?;
        let mut op = Self {
            sigma,
            radius,
            kernel,
            m1,
            m2,
            norm_sq: 0.0,
        };
        // The norm is estimated on a domain padded by the kernel radius, which
        // captures the kernel's full footprint. This measures the blur kernel's
        // window-independent operator norm: an upper bound for the operator
        // restricted to any window, so every step size derived from it stays
        // valid, and it is still at most 1 for a normalized kernel.
        let k = op.kernel.clone();
        let (p1, p2) = (m1 + 2 * radius, m2 + 2 * radius);
        let conv = move |x: ArrayView1<f64>| {
            let img = Image::from_flat(p1, p2, x).expect("dim fixed");
            conv2d(&k, &img).to_flat()
        };
        op.norm_sq = op_norm_sq(&conv, &conv, p1 * p2, POWER_ITERS, POWER_TOL);
        Ok(op)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn truncation_radius(&self) -> usize {
        self.radius
    }

    pub fn kernel(&self) -> &Image {
        &self.kernel
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn flat_dim(&self) -> usize {
        self.m1 * self.m2
    }

    /// Power-iteration estimate of the squared spectral norm.
    pub fn norm_sq(&self) -> f64 {
        self.norm_sq
    }

    pub fn apply(&self, x: &Image) -> Image {
        conv2d(&self.kernel, x)
    }

    pub fn apply_flat(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        let img = Image::from_flat(self.m1, self.m2, x)?;
        Ok(self.apply(&img).to_flat())
    }

    /// Wraps the blur as a generic forward operator (self-adjoint).
    pub fn forward_operator(self: &Arc<Self>) -> ForwardOperator {
        let a = Arc::clone(self);
        let b = Arc::clone(self);
        let n = self.flat_dim();
        ForwardOperator::from_functions(
            Arc::new(move |x| a.apply_flat(x).expect("dim fixed")),
            Arc::new(move |r| b.apply_flat(r).expect("dim fixed")),
            n,
            n,
        )
    }
}

/// Forward differences `D u`: channel 1 holds `u[i+1][j] - u[i][j]` (zero on
/// the last row), channel 2 holds `u[i][j+1] - u[i][j]` (zero on the last
/// column).
pub fn forward_differences(u: &Image) -> (Image, Image) {
    let (m, n) = (u.height(), u.width());
    let mut d1 = Array2::zeros((m, n));
    let mut d2 = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            if i + 1 < m {
                d1[[i, j]] = u.get(i + 1, j) - u.get(i, j);
            }
            if j + 1 < n {
                d2[[i, j]] = u.get(i, j + 1) - u.get(i, j);
            }
        }
    }
    (
        Image::from_array(d1).expect("finite differences of finite image"),
        Image::from_array(d2).expect("finite differences of finite image"),
    )
}

/// Adjoint of [`forward_differences`] (negative divergence):
/// `<D u, w> = <u, adjoint(w)>` for all `u`, `w`.
pub fn forward_differences_adjoint(w1: &Image, w2: &Image) -> Image {
    let (m, n) = (w1.height(), w1.width());
    assert_eq!((m, n), (w2.height(), w2.width()), "channel dims must match");
    let mut out = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            let mut v = 0.0;
            if i > 0 {
                v += w1.get(i - 1, j);
            }
            if i + 1 < m {
                v -= w1.get(i, j);
            }
            if j > 0 {
                v += w2.get(i, j - 1);
            }
            if j + 1 < n {
                v -= w2.get(i, j);
            }
            out[[i, j]] = v;
        }
    }
    Image::from_array(out).expect("finite")
}

/// Memoized power-iteration estimate of `‖D‖²` for the forward-difference
/// operator on `m1 x m2` images (the true value is below 8).
pub fn grad_operator_norm_sq(m1: usize, m2: usize) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(v) = cache.lock().expect("cache lock").get(&(m1, m2)) {
        return *v;
    }
    let apply = move |x: ArrayView1<f64>| {
        let img = Image::from_flat(m1, m2, x).expect("dim fixed");
        let (d1, d2) = forward_differences(&img);
        let mut out = Array1::zeros(2 * m1 * m2);
        out.slice_mut(ndarray::s![..m1 * m2]).assign(&d1.to_flat());
        out.slice_mut(ndarray::s![m1 * m2..]).assign(&d2.to_flat());
        out
    };
    let adjoint = move |w: ArrayView1<f64>| {
        let w1 = Image::from_flat(m1, m2, w.slice(ndarray::s![..m1 * m2])).expect("dim fixed");
        let w2 = Image::from_flat(m1, m2, w.slice(ndarray::s![m1 * m2..])).expect("dim fixed");
        forward_differences_adjoint(&w1, &w2).to_flat()
    };
    let est = op_norm_sq(apply, adjoint, m1 * m2, POWER_ITERS, POWER_TOL);
    cache.lock().expect("cache lock").insert((m1, m2), est);
    est
}

/// Huber loss `h_ε`: quadratic `s²/(2ε)` for `|s| ≤ ε`, linear `|s| - ε/2`
/// beyond. Both branches agree (value `ε/2`) at `|s| = ε`.
pub fn huber_loss(s: f64, epsilon: f64) -> f64 {
    if s.abs() <= epsilon {
        s * s / (2.0 * epsilon)
    } else {
        s.abs() - epsilon / 2.0
    }
}

/// Deblurring objective `½‖A x - y‖₂² + α Σ h_ε(‖(D x)_{ij}‖₂)` with the
/// Gaussian blur `A`, forward differences `D`, and Huber smoothing `h_ε`.
pub struct HuberTvObjective {
    blur: Arc<GaussianBlurOperator>,
    y: Image,
    alpha: f64,
    epsilon: f64,
    l_bound: f64,
}

impl HuberTvObjective {
    pub fn new(
        blur: Arc<GaussianBlurOperator>,
        y: Image,
        alpha: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if (y.height(), y.width()) != blur.dims() {
            return Err(Error::DimensionMismatch {
                context: "HuberTvObjective observation",
                expected: blur.flat_dim(),
                got: y.height() * y.width(),
            });
        }
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidInput(format!(
                "regularisation weight must be nonnegative, got {alpha}"
            )));
        }
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Huber parameter must be positive, got {epsilon}"
            )));
        }
        let (m1, m2) = blur.dims();
        let l_bound = blur.norm_sq() + alpha * grad_operator_norm_sq(m1, m2) / epsilon;
        Ok(Self {
            blur,
            y,
            alpha,
            epsilon,
            l_bound,
        })
    }

    pub fn blur(&self) -> &Arc<GaussianBlurOperator> {
        &self.blur
    }

    pub fn observation(&self) -> &Image {
        &self.y
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `‖A‖²_est + α ‖D‖²_est / ε`, a valid smoothness constant for the
    /// objective and at most `1 + 8α/ε` up to power-method slack.
    pub fn smoothness_bound(&self) -> f64 {
        self.l_bound
    }

    fn check_dim(&self, x: ArrayView1<f64>, context: &'static str) -> Result<()> {
        if x.len() != self.blur.flat_dim() {
            return Err(Error::DimensionMismatch {
                context,
                expected: self.blur.flat_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Checked objective value.
    pub fn value(&self, x: ArrayView1<f64>) -> Result<f64> {
        self.check_dim(x, "HuberTvObjective::value")?;
        let (m1, m2) = self.blur.dims();
        let img = Image::from_flat(m1, m2, x)?;
        let residual = self.blur.apply(&img);
        let mut fidelity = 0.0;
        for i in 0..m1 {
            for j in 0..m2 {
                let r = residual.get(i, j) - self.y.get(i, j);
                fidelity += r * r;
            }
        }
        let (d1, d2) = forward_differences(&img);
        let mut tv = 0.0;
        for i in 0..m1 {
            for j in 0..m2 {
                let s = (d1.get(i, j).powi(2) + d2.get(i, j).powi(2)).sqrt();
                tv += huber_loss(s, self.epsilon);
            }
        }
        Ok(0.5 * fidelity + self.alpha * tv)
    }

    /// Checked gradient: `Aᵀ(A x - y) + α Dᵀ ψ`, where each difference pair is
    /// scaled by `1/ε` inside the quadratic branch and normalized by its
    /// Euclidean magnitude in the linear branch.
    pub fn gradient(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.check_dim(x, "HuberTvObjective::gradient")?;
        let (m1, m2) = self.blur.dims();
        let img = Image::from_flat(m1, m2, x)?;
        let mut residual = self.blur.apply(&img).into_array();
        residual.zip_mut_with(self.y.array(), |r, &y| *r -= y);
        let residual = Image::from_array(residual)?;
        // The kernel is symmetric under 180° rotation, so A is self-adjoint.
        let back = self.blur.apply(&residual);

        let (d1, d2) = forward_differences(&img);
        let mut p1 = Array2::zeros((m1, m2));
        let mut p2 = Array2::zeros((m1, m2));
        for i in 0..m1 {
            for j in 0..m2 {
                let (a, b) = (d1.get(i, j), d2.get(i, j));
                let s = (a * a + b * b).sqrt();
                let scale = if s <= self.epsilon {
                    1.0 / self.epsilon
                } else {
                    1.0 / s
                };
                p1[[i, j]] = a * scale;
                p2[[i, j]] = b * scale;
            }
        }
        let div = forward_differences_adjoint(&Image::from_array(p1)?, &Image::from_array(p2)?);

        let mut grad = back.into_array();
        grad.zip_mut_with(div.array(), |g, &d| *g += self.alpha * d);
        Ok(Image::from_array(grad)?.to_flat())
    }
}

impl Objective for HuberTvObjective {
    fn dim(&self) -> usize {
        self.blur.flat_dim()
    }

    fn eval(&self, x: ArrayView1<f64>) -> f64 {
        self.value(x).expect("dimension checked by caller")
    }

    fn grad(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.gradient(x).expect("dimension checked by caller")
    }

    fn smoothness(&self) -> f64 {
        self.l_bound
    }
}

/// Central-difference gradient of `f` at `x` with step `1e-6 (‖x‖_∞ + 1)`;
/// the reference oracle for gradient implementations.
pub fn central_difference_gradient<F>(f: F, x: ArrayView1<f64>) -> Array1<f64>
where
    F: Fn(ArrayView1<f64>) -> f64,
{
    let sup = x.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let h = 1e-6 * (sup + 1.0);
    let mut probe = x.to_owned();
    let mut out = Array1::zeros(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(probe.view());
        probe[i] = orig - h;
        let minus = f(probe.view());
        probe[i] = orig;
        out[i] = (plus - minus) / (2.0 * h);
    }
    out
}
