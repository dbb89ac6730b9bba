//! Linear complementarity problems `LCP(q, M)`: find `(w, z)` with
//! `w = q + M z`, `w >= 0`, `z >= 0`, `wᵀz = 0`, for symmetric positive definite
//! Z-matrices `M` (K-matrices), where the solution exists and is unique.
//!
//! Three independent routes are provided:
//! - [`solve_lcp`]: monotone active-set pivoting, the production path;
//! - [`solve_lcp_bruteforce`]: enumeration over all `2^d` supports, the oracle;
//! - [`solve_qp_nonneg`]: projected gradient on `min ⟨q,θ⟩ + ½⟨θ,Mθ⟩, θ >= 0`.
//!
//! Degenerate coordinates with `w_i = z_i = 0` are reported as inactive.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::index_set::IndexSet;
use crate::linalg::{
    cholesky_condition_estimate, norm_inf, principal_cholesky, scatter, subvector,
    symmetric_eigen_range,
};

/// Largest dimension accepted by the enumeration oracle.
pub const MAX_BRUTEFORCE_DIM: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LcpError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite input")]
    NonFinite,
    #[error("matrix is not a K-matrix: {0}")]
    NotKMatrix(String),
    #[error("active-set pivoting did not settle after {pivots} pivots")]
    PivotCycle { pivots: usize },
    #[error("no support passes the complementarity sign checks")]
    NoSolution,
    #[error("{count} supports pass the complementarity sign checks")]
    MultipleSolutions { count: usize },
    #[error("dimension {d} too large for enumeration (max {max})")]
    DimensionTooLarge { d: usize, max: usize },
    #[error("projected gradient stopped after {iterations} iterations (residual {residual:e})")]
    MaxIterations { iterations: usize, residual: f64 },
}

/// A complementary pair `(w, z)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LcpSolution {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    /// `{i : z_i > 0}`.
    pub support: IndexSet,
    /// Support changes performed (0 for the enumeration oracle).
    pub pivots: usize,
    /// Condition estimate of `M[support, support]`.
    pub condition_estimate: f64,
}

/// Violations of the LCP conditions by a candidate pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResiduals {
    /// `‖w − q − Mz‖_∞`.
    pub stationarity: f64,
    /// `max(0, −min_i w_i)`.
    pub dual_infeasibility: f64,
    /// `max(0, −min_i z_i)`.
    pub primal_infeasibility: f64,
    /// `|wᵀz|`.
    pub complementarity: f64,
    /// `max_i min(w_i, z_i)`.
    pub max_pairwise: f64,
}

impl LcpSolution {
    pub fn w_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.w)
    }

    pub fn z_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.z)
    }

    pub fn residuals(&self, q: &DVector<f64>, m: &DMatrix<f64>) -> KktResiduals {
        let w = self.w_vec();
        let z = self.z_vec();
        let stationarity = norm_inf(&(&w - q - m * &z));
        let dual_infeasibility = (-w.min()).max(0.0);
        let primal_infeasibility = (-z.min()).max(0.0);
        let complementarity = w.dot(&z).abs();
        let max_pairwise = w
            .iter()
            .zip(z.iter())
            .map(|(a, b)| a.min(*b))
            .fold(f64::NEG_INFINITY, f64::max);
        KktResiduals {
            stationarity,
            dual_infeasibility,
            primal_infeasibility,
            complementarity,
            max_pairwise,
        }
    }

    /// Checks the solution tolerances:
    /// stationarity `1e-10·(‖q‖ + ‖M‖‖z‖)`, signs `1e-12` (scaled by `1 + ‖q‖`),
    /// complementarity `1e-10·(1 + ‖w‖‖z‖)` and pairwise `1e-10`.
    pub fn satisfies_invariants(&self, q: &DVector<f64>, m: &DMatrix<f64>) -> bool {
        let res = self.residuals(q, m);
        let w = self.w_vec();
        let z = self.z_vec();
        let m_norm = m.norm();
        let sign_tol = strict_tol(q);
        res.stationarity <= 1e-10 * (q.norm() + m_norm * z.norm()).max(1e-300)
            && res.dual_infeasibility <= sign_tol
            && res.primal_infeasibility <= sign_tol
            && res.complementarity <= 1e-10 * (1.0 + w.norm() * z.norm())
            && res.max_pairwise <= 1e-10
    }
}

/// Strict-sign threshold, `1e-12` on unit-scale problems.
pub fn strict_tol(q: &DVector<f64>) -> f64 {
    1e-12 * (1.0 + norm_inf(q))
}

fn check_shapes(q: &DVector<f64>, m: &DMatrix<f64>) -> Result<(), LcpError> {
    if m.nrows() != q.len() || m.ncols() != q.len() {
        return Err(LcpError::ShapeMismatch(format!(
            "M is {}x{} but q has length {}",
            m.nrows(),
            m.ncols(),
            q.len()
        )));
    }
    if !q.iter().chain(m.iter()).all(|v| v.is_finite()) {
        return Err(LcpError::NonFinite);
    }
    Ok(())
}

/// Symmetric, nonpositive off-diagonal, positive definite.
pub fn check_k_matrix(m: &DMatrix<f64>) -> Result<(), LcpError> {
    let d = m.nrows();
    if m.ncols() != d {
        return Err(LcpError::NotKMatrix("not square".into()));
    }
    let scale = m.amax().max(1.0);
    for i in 0..d {
        for j in (i + 1)..d {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-12 * scale {
                return Err(LcpError::NotKMatrix(format!("asymmetric at ({i}, {j})")));
            }
            if m[(i, j)] > 0.0 {
                return Err(LcpError::NotKMatrix(format!(
                    "positive off-diagonal M[{i},{j}] = {}",
                    m[(i, j)]
                )));
            }
        }
    }
    if Cholesky::new(m.clone()).is_none() {
        return Err(LcpError::NotKMatrix(format!(
            "not positive definite (lambda_min = {:e})",
            symmetric_eigen_range(m).0
        )));
    }
    Ok(())
}

fn pivot_budget(d: usize) -> usize {
    if d >= usize::BITS as usize - 8 {
        usize::MAX
    } else {
        d.max(1).saturating_mul(1usize << d)
    }
}

/// Active-set pivoting for K-matrix LCPs.
///
/// Starting from `z = 0`, every inactive index with `w_i < 0` joins the support, the
/// support equations `M_II z_I = −q_I` are re-solved, and indices with `z_i < 0` leave.
/// For K-matrices `(M_II)⁻¹ >= 0`, so `z` increases monotonically towards the least
/// feasible point, which is the solution; in practice no index ever leaves.
pub fn solve_lcp(q: &DVector<f64>, m: &DMatrix<f64>) -> Result<LcpSolution, LcpError> {
    check_shapes(q, m)?;
    check_k_matrix(m)?;
    let d = q.len();
    let tol = strict_tol(q);
    let budget = pivot_budget(d);

    let mut support = IndexSet::empty();
    let mut z = DVector::<f64>::zeros(d);
    let mut pivots = 0usize;
    let mut condition_estimate = 1.0;

    loop {
        let w = q + m * &z;
        let entering: Vec<usize> = (0..d)
            .filter(|&i| !support.contains(i) && w[i] < -tol)
            .collect();
        if entering.is_empty() {
            break;
        }
        for i in entering {
            support.insert(i);
        }
        loop {
            pivots += 1;
            if pivots > budget {
                return Err(LcpError::PivotCycle { pivots });
            }
            if support.is_empty() {
                z.fill(0.0);
                break;
            }
            let chol = principal_cholesky(m, &support)
                .ok_or_else(|| LcpError::NotKMatrix("singular principal submatrix".into()))?;
            condition_estimate = cholesky_condition_estimate(&chol);
            let z_sub = chol.solve(&(-subvector(q, &support)));
            z = scatter(&z_sub, &support, d);
            let leaving: Vec<usize> = support.iter().filter(|&i| z[i] < 0.0).collect();
            if leaving.is_empty() {
                break;
            }
            for i in leaving {
                support.remove(i);
            }
        }
    }

    // Exact zeros on the support are degenerate and reported as inactive.
    let zero_on_support: Vec<usize> = support.iter().filter(|&i| !(z[i] > 0.0)).collect();
    for i in zero_on_support {
        support.remove(i);
        z[i] = 0.0;
    }
    let w = q + m * &z;
    Ok(LcpSolution {
        w: w.iter().copied().collect(),
        z: z.iter().copied().collect(),
        support,
        pivots,
        condition_estimate,
    })
}

/// Enumerates all `2^d` supports and returns the single one passing the strict sign
/// checks `z_I > tol`, `w_{I^c} >= −tol`.
pub fn solve_lcp_bruteforce(q: &DVector<f64>, m: &DMatrix<f64>) -> Result<LcpSolution, LcpError> {
    check_shapes(q, m)?;
    let d = q.len();
    if d > MAX_BRUTEFORCE_DIM {
        return Err(LcpError::DimensionTooLarge {
            d,
            max: MAX_BRUTEFORCE_DIM,
        });
    }
    let tol = strict_tol(q);
    let mut found: Vec<LcpSolution> = Vec::new();
    for mask in 0u64..(1u64 << d) {
        let support = IndexSet::from_mask(mask, d);
        let (z, condition_estimate) = if support.is_empty() {
            (DVector::zeros(d), 1.0)
        } else {
            let Some(chol) = principal_cholesky(m, &support) else {
                continue;
            };
            let z_sub = chol.solve(&(-subvector(q, &support)));
            (scatter(&z_sub, &support, d), cholesky_condition_estimate(&chol))
        };
        let w = q + m * &z;
        let primal_ok = support.iter().all(|i| z[i] > tol);
        let dual_ok = (0..d).filter(|&i| !support.contains(i)).all(|i| w[i] >= -tol);
        if primal_ok && dual_ok {
            found.push(LcpSolution {
                w: w.iter().copied().collect(),
                z: z.iter().copied().collect(),
                support,
                pivots: 0,
                condition_estimate,
            });
        }
    }
    match found.len() {
        0 => Err(LcpError::NoSolution),
        1 => Ok(found.pop().expect("one candidate")),
        count => Err(LcpError::MultipleSolutions { count }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpOptions {
    /// Stop when `‖θ − max(0, θ − ∇)‖_∞` falls below this.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            tol: 1e-10,
            max_iterations: 2_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub theta: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
}

impl QpSolution {
    /// `{i : θ_i > 0}`.
    pub fn support(&self) -> IndexSet {
        self.theta
            .iter()
            .enumerate()
            .filter(|(_, &v)| v > 0.0)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Minimizes `⟨q,θ⟩ + ½⟨θ,Mθ⟩` over `θ >= 0` by projected gradient with step `1/λ_max(M)`.
pub fn solve_qp_nonneg(
    q: &DVector<f64>,
    m: &DMatrix<f64>,
    options: QpOptions,
) -> Result<QpSolution, LcpError> {
    check_shapes(q, m)?;
    let d = q.len();
    let (lambda_min, lambda_max) = symmetric_eigen_range(m);
    if !(lambda_min > 0.0) {
        return Err(LcpError::NotKMatrix(format!(
            "QP needs a positive definite matrix (lambda_min = {lambda_min:e})"
        )));
    }
    let step = 1.0 / lambda_max;
    let mut theta = DVector::<f64>::zeros(d);
    let mut grad = DVector::<f64>::zeros(d);
    let mut residual = f64::INFINITY;
    for iteration in 0..options.max_iterations {
        grad.copy_from(q);
        grad.gemv(1.0, m, &theta, 1.0);
        residual = theta
            .iter()
            .zip(grad.iter())
            .map(|(&t, &g)| (t - (t - g).max(0.0)).abs())
            .fold(0.0, f64::max);
        if residual <= options.tol {
            return Ok(QpSolution {
                theta,
                iterations: iteration,
                residual,
            });
        }
        for i in 0..d {
            theta[i] = (theta[i] - step * grad[i]).max(0.0);
        }
    }
    Err(LcpError::MaxIterations {
        iterations: options.max_iterations,
        residual,
    })
}
