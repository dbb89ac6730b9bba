//! Regression data, validated problem instances `(M, r)`, instance generators and the
//! quadratic loss `f(θ) = ½‖y‖² − ⟨r, θ⟩ + ½⟨θ, Mθ⟩`.
//!
//! An instance is only constructed when `r_i > 0` for every coordinate and the features
//! are pairwise anti-correlated (`M_ij <= 0` for `i != j`). Both signs are checked
//! strictly. Under these two conditions `M` is positive definite, which
//! [`ProblemInstance::check_positive_definite`] verifies independently.

use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{all_finite, matrix_norm_inf, symmetric_eigen_range};

/// Absolute symmetry tolerance on unit-scale data.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Relative agreement required between stored `(M, r)` and data-derived `(XᵀX, Xᵀy)`.
pub const PROVENANCE_TOL: f64 = 1e-10;

/// Which sign conditions an instance failed.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Violation {
    /// Coordinates with `r_i <= 0`.
    pub non_positive_response: Vec<usize>,
    /// Pairs `(i, j)`, `i < j`, with `M_ij > 0`.
    pub correlated_features: Vec<(usize, usize)>,
}

impl Violation {
    pub fn is_empty(&self) -> bool {
        self.non_positive_response.is_empty() && self.correlated_features.is_empty()
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.non_positive_response.is_empty() {
            parts.push(format!("r_i <= 0 at {:?}", self.non_positive_response));
        }
        if !self.correlated_features.is_empty() {
            parts.push(format!("M_ij > 0 at {:?}", self.correlated_features));
        }
        write!(f, "{}", parts.join("; "))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("assumption violated: {0}")]
    AssumptionViolated(Violation),
    #[error("non-finite entry in input")]
    NonFinite,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("matrix is not positive definite (lambda_min = {lambda_min:e})")]
    NotPositiveDefinite { lambda_min: f64 },
    #[error("rejection sampler gave up after {attempts} attempts")]
    RejectionBudgetExceeded { attempts: u64 },
    #[error("off-diagonal scale {scale} breaks strict diagonal dominance in row {row}")]
    DegenerateScale { scale: f64, row: usize },
    #[error("stored (M, r) disagree with the provenance data (relative gap {gap:e})")]
    InconsistentProvenance { gap: f64 },
    #[error("invalid initialization: {0}")]
    InvalidInitialization(String),
}

/// Design matrix `X` (n samples × d features) and outputs `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl RegressionData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self, ProblemError> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(ProblemError::ShapeMismatch("X must be at least 1x1".into()));
        }
        if y.len() != x.nrows() {
            return Err(ProblemError::ShapeMismatch(format!(
                "y has length {} but X has {} rows",
                y.len(),
                x.nrows()
            )));
        }
        if !all_finite(x.iter().chain(y.iter()).copied()) {
            return Err(ProblemError::NonFinite);
        }
        Ok(RegressionData { x, y })
    }

    /// Row-major convenience constructor.
    pub fn from_rows(rows: &[Vec<f64>], y: &[f64]) -> Result<Self, ProblemError> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != d) {
            return Err(ProblemError::ShapeMismatch("ragged rows in X".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
        Self::new(x, DVector::from_column_slice(y))
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    /// `(XᵀX, Xᵀy)`.
    pub fn covariances(&self) -> (DMatrix<f64>, DVector<f64>) {
        (self.x.tr_mul(&self.x), self.x.tr_mul(&self.y))
    }
}

/// Smallest and largest eigenvalue of `M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefinitenessReport {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub positive_definite: bool,
}

/// Value of the quadratic loss at some θ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub value: f64,
    /// `false` when no data is attached and the `½‖y‖²` offset was omitted.
    pub includes_data_offset: bool,
}

/// A validated pair `(M, r)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemInstance {
    m: DMatrix<f64>,
    r: DVector<f64>,
    provenance: Option<RegressionData>,
}

impl ProblemInstance {
    /// `M = XᵀX`, `r = Xᵀy`; the data is kept as provenance.
    pub fn from_data(data: RegressionData) -> Result<Self, ProblemError> {
        let (m, r) = data.covariances();
        let m = symmetrize(m)?;
        check_assumptions(&m, &r)?;
        Ok(ProblemInstance {
            m,
            r,
            provenance: Some(data),
        })
    }

    pub fn from_parts(m: DMatrix<f64>, r: DVector<f64>) -> Result<Self, ProblemError> {
        check_shapes(&m, &r)?;
        if !all_finite(m.iter().chain(r.iter()).copied()) {
            return Err(ProblemError::NonFinite);
        }
        let m = symmetrize(m)?;
        check_assumptions(&m, &r)?;
        Ok(ProblemInstance {
            m,
            r,
            provenance: None,
        })
    }

    /// Attach data whose covariances agree with `(M, r)` to [`PROVENANCE_TOL`].
    pub fn with_provenance(mut self, data: RegressionData) -> Result<Self, ProblemError> {
        if data.d() != self.d() {
            return Err(ProblemError::ShapeMismatch(format!(
                "provenance has {} features, instance has {}",
                data.d(),
                self.d()
            )));
        }
        let (m, r) = data.covariances();
        let gap_m = matrix_norm_inf(&(&m - &self.m)) / matrix_norm_inf(&self.m).max(f64::MIN_POSITIVE);
        let gap_r = (&r - &self.r).amax() / self.r.amax().max(f64::MIN_POSITIVE);
        let gap = gap_m.max(gap_r);
        if gap > PROVENANCE_TOL {
            return Err(ProblemError::InconsistentProvenance { gap });
        }
        self.provenance = Some(data);
        Ok(self)
    }

    /// Skips every check. Only for exercising failure paths downstream.
    pub fn new_unchecked(m: DMatrix<f64>, r: DVector<f64>) -> Self {
        ProblemInstance {
            m,
            r,
            provenance: None,
        }
    }

    pub fn m(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    pub fn provenance(&self) -> Option<&RegressionData> {
        self.provenance.as_ref()
    }

    pub fn d(&self) -> usize {
        self.r.len()
    }

    pub fn check_positive_definite(&self) -> Result<DefinitenessReport, ProblemError> {
        let (lambda_min, lambda_max) = symmetric_eigen_range(&self.m);
        let positive_definite = lambda_max > 0.0 && lambda_min > 1e-12 * lambda_max;
        if !positive_definite {
            return Err(ProblemError::NotPositiveDefinite { lambda_min });
        }
        Ok(DefinitenessReport {
            lambda_min,
            lambda_max,
            positive_definite,
        })
    }

    /// The global minimizer `M⁻¹r` of the loss.
    pub fn minimizer(&self) -> Result<DVector<f64>, ProblemError> {
        let chol = Cholesky::new(self.m.clone()).ok_or(ProblemError::NotPositiveDefinite {
            lambda_min: symmetric_eigen_range(&self.m).0,
        })?;
        Ok(chol.solve(&self.r))
    }

    /// Solves `M x = b` with a dense Cholesky factorization.
    pub fn solve(&self, b: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        self.expect_len(b.len())?;
        let chol = Cholesky::new(self.m.clone()).ok_or(ProblemError::NotPositiveDefinite {
            lambda_min: symmetric_eigen_range(&self.m).0,
        })?;
        Ok(chol.solve(b))
    }

    pub fn loss(&self, theta: &DVector<f64>) -> Result<LossValue, ProblemError> {
        self.expect_len(theta.len())?;
        let quad = 0.5 * theta.dot(&(&self.m * theta)) - self.r.dot(theta);
        Ok(match &self.provenance {
            Some(data) => LossValue {
                value: 0.5 * data.y().norm_squared() + quad,
                includes_data_offset: true,
            },
            None => LossValue {
                value: quad,
                includes_data_offset: false,
            },
        })
    }

    /// `∇f(θ) = Mθ − r`.
    pub fn loss_gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>, ProblemError> {
        self.expect_len(theta.len())?;
        Ok(&self.m * theta - &self.r)
    }

    pub(crate) fn expect_len(&self, len: usize) -> Result<(), ProblemError> {
        if len != self.d() {
            return Err(ProblemError::ShapeMismatch(format!(
                "vector has length {len}, instance dimension is {}",
                self.d()
            )));
        }
        Ok(())
    }
}

fn check_shapes(m: &DMatrix<f64>, r: &DVector<f64>) -> Result<(), ProblemError> {
    if r.is_empty() {
        return Err(ProblemError::ShapeMismatch("dimension must be at least 1".into()));
    }
    if m.nrows() != r.len() || m.ncols() != r.len() {
        return Err(ProblemError::ShapeMismatch(format!(
            "M is {}x{} but r has length {}",
            m.nrows(),
            m.ncols(),
            r.len()
        )));
    }
    Ok(())
}

fn symmetrize(m: DMatrix<f64>) -> Result<DMatrix<f64>, ProblemError> {
    let scale = m.amax().max(1.0);
    let d = m.nrows();
    for i in 0..d {
        for j in (i + 1)..d {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return Err(ProblemError::NotSymmetric(i, j));
            }
        }
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// Strict sign checks: `r_i > 0`, `M_ij <= 0` off the diagonal.
pub fn check_assumptions(m: &DMatrix<f64>, r: &DVector<f64>) -> Result<(), ProblemError> {
    let violation = assumption_violation(m, r);
    if violation.is_empty() {
        Ok(())
    } else {
        Err(ProblemError::AssumptionViolated(violation))
    }
}

pub fn assumption_violation(m: &DMatrix<f64>, r: &DVector<f64>) -> Violation {
    let d = r.len();
    let non_positive_response = (0..d).filter(|&i| !(r[i] > 0.0)).collect();
    let mut correlated_features = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            if !(m[(i, j)] <= 0.0) {
                correlated_features.push((i, j));
            }
        }
    }
    Violation {
        non_positive_response,
        correlated_features,
    }
}

/// Initial condition `θ_i(0) = C_i ε^{k_i}`.
///
/// `ε` is stored through `log(1/ε)` so that values far below `f64::MIN_POSITIVE`
/// remain usable.
#[derive(Debug, Clone, PartialEq)]
pub struct Initialization {
    c: DVector<f64>,
    k: DVector<f64>,
    log_inv_epsilon: f64,
}

impl Initialization {
    pub fn new(c: DVector<f64>, k: DVector<f64>, epsilon: f64) -> Result<Self, ProblemError> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(ProblemError::InvalidInitialization(format!(
                "epsilon must lie in (0, 1), got {epsilon}"
            )));
        }
        Self::from_log_inv_epsilon(c, k, -epsilon.ln())
    }

    pub fn from_log_inv_epsilon(
        c: DVector<f64>,
        k: DVector<f64>,
        log_inv_epsilon: f64,
    ) -> Result<Self, ProblemError> {
        if c.len() != k.len() || c.is_empty() {
            return Err(ProblemError::ShapeMismatch(format!(
                "C has length {}, k has length {}",
                c.len(),
                k.len()
            )));
        }
        if !(log_inv_epsilon > 0.0 && log_inv_epsilon.is_finite()) {
            return Err(ProblemError::InvalidInitialization(format!(
                "log(1/epsilon) must be positive and finite, got {log_inv_epsilon}"
            )));
        }
        if !c.iter().chain(k.iter()).all(|&v| v > 0.0 && v.is_finite()) {
            return Err(ProblemError::InvalidInitialization(
                "C and k must be positive and finite".into(),
            ));
        }
        Ok(Initialization {
            c,
            k,
            log_inv_epsilon,
        })
    }

    /// `C = k = (1, ..., 1)`.
    pub fn uniform(d: usize, epsilon: f64) -> Result<Self, ProblemError> {
        Self::new(DVector::from_element(d, 1.0), DVector::from_element(d, 1.0), epsilon)
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn k(&self) -> &DVector<f64> {
        &self.k
    }

    pub fn d(&self) -> usize {
        self.k.len()
    }

    /// `log(1/ε)`.
    pub fn log_inv_epsilon(&self) -> f64 {
        self.log_inv_epsilon
    }

    /// May underflow to zero for extreme initializations.
    pub fn epsilon(&self) -> f64 {
        (-self.log_inv_epsilon).exp()
    }

    /// `w_i(0) = k_i + log C_i / log ε`.
    pub fn initial_log_coordinates(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.d(),
            self.k
                .iter()
                .zip(self.c.iter())
                .map(|(&k, &c)| k - c.ln() / self.log_inv_epsilon),
        )
    }

    pub fn initial_theta(&self) -> DVector<f64> {
        self.initial_log_coordinates()
            .map(|w| (-w * self.log_inv_epsilon).exp())
    }
}

/// i.i.d. standard Gaussian `(X, y)` conditioned on both sign assumptions, by rejection.
///
/// The acceptance rate collapses quickly with `d` (roughly `8e-2` at `(n, d) = (3, 2)`
/// and `2.5e-5` at `(5, 4)`), and is exactly zero when `n < d`.
pub fn generate_rejection(
    n: usize,
    d: usize,
    seed: u64,
    max_attempts: u64,
) -> Result<RegressionData, ProblemError> {
    if n == 0 || d == 0 {
        return Err(ProblemError::ShapeMismatch("n and d must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = DMatrix::<f64>::zeros(n, d);
    let mut y = DVector::<f64>::zeros(n);
    for _ in 0..max_attempts {
        for i in 0..n {
            for j in 0..d {
                x[(i, j)] = rng.sample(StandardNormal);
            }
        }
        for i in 0..n {
            y[i] = rng.sample(StandardNormal);
        }
        if accepts(&x, &y) {
            return RegressionData::new(x, y);
        }
    }
    Err(ProblemError::RejectionBudgetExceeded {
        attempts: max_attempts,
    })
}

fn accepts(x: &DMatrix<f64>, y: &DVector<f64>) -> bool {
    let d = x.ncols();
    for j in 0..d {
        if !(x.column(j).dot(y) > 0.0) {
            return false;
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if !(x.column(i).dot(&x.column(j)) <= 0.0) {
                return false;
            }
        }
    }
    true
}

/// Scalable generator: a strictly diagonally dominant Z-matrix `M` with diagonal in
/// `[1, 2)` and off-diagonals in `(-offdiag_scale, 0]`, plus `r` in `[0.5, 1.5)`.
///
/// Consistent data is rebuilt with `X = Lᵀ` (upper Cholesky factor, `n = d`) and
/// `y = L⁻¹ r`, so that `XᵀX = M` and `Xᵀy = r` up to roundoff.
pub fn generate_direct(
    d: usize,
    seed: u64,
    offdiag_scale: f64,
) -> Result<(ProblemInstance, RegressionData), ProblemError> {
    if d == 0 {
        return Err(ProblemError::ShapeMismatch("d must be at least 1".into()));
    }
    if !(offdiag_scale >= 0.0 && offdiag_scale.is_finite()) {
        return Err(ProblemError::DegenerateScale {
            scale: offdiag_scale,
            row: 0,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DMatrix::<f64>::zeros(d, d);
    for i in 0..d {
        m[(i, i)] = rng.random_range(1.0..2.0);
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let v = -offdiag_scale * rng.random::<f64>();
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| m[(i, j)].abs()).sum();
        if !(m[(i, i)] > off) {
            return Err(ProblemError::DegenerateScale {
                scale: offdiag_scale,
                row: i,
            });
        }
    }
    let r = DVector::from_fn(d, |_, _| rng.random_range(0.5..1.5));

    let chol = Cholesky::new(m.clone()).ok_or(ProblemError::NotPositiveDefinite {
        lambda_min: symmetric_eigen_range(&m).0,
    })?;
    let lower = chol.l();
    let y = lower
        .solve_lower_triangular(&r)
        .ok_or(ProblemError::NotPositiveDefinite { lambda_min: 0.0 })?;
    let data = RegressionData::new(lower.transpose(), y)?;
    let instance = ProblemInstance::from_parts(m, r)?.with_provenance(data.clone())?;
    Ok((instance, data))
}

/// Generator provenance stored with a serialized instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct InstanceMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub generator: String,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub d: usize,
}

/// On-disk JSON form: `{"M": [[..]], "r": [..], "X": opt, "y": opt, "meta": {..}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    pub r: Vec<f64>,
    #[serde(rename = "X", default, skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    #[serde(default)]
    pub meta: InstanceMeta,
}

impl InstanceFile {
    pub fn from_instance(instance: &ProblemInstance, mut meta: InstanceMeta) -> Self {
        let rows = |m: &DMatrix<f64>| -> Vec<Vec<f64>> {
            (0..m.nrows())
                .map(|i| m.row(i).iter().copied().collect())
                .collect()
        };
        meta.d = instance.d();
        let (x, y) = match instance.provenance() {
            Some(data) => {
                meta.n = Some(data.n());
                (Some(rows(data.x())), Some(data.y().iter().copied().collect()))
            }
            None => (None, None),
        };
        InstanceFile {
            m: rows(instance.m()),
            r: instance.r().iter().copied().collect(),
            x,
            y,
            meta,
        }
    }

    pub fn to_instance(&self) -> Result<ProblemInstance, ProblemError> {
        let d = self.r.len();
        if self.m.len() != d || self.m.iter().any(|row| row.len() != d) {
            return Err(ProblemError::ShapeMismatch(format!(
                "M must be {d}x{d} to match r"
            )));
        }
        let m = DMatrix::from_fn(d, d, |i, j| self.m[i][j]);
        let instance = ProblemInstance::from_parts(m, DVector::from_column_slice(&self.r))?;
        match (&self.x, &self.y) {
            (Some(x), Some(y)) => instance.with_provenance(RegressionData::from_rows(x, y)?),
            (None, None) => Ok(instance),
            _ => Err(ProblemError::ShapeMismatch(
                "X and y must be given together".into(),
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j])
    }

    #[test]
    fn identity_design_is_valid() {
        let data =
            RegressionData::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]], &[1.0, 1.0, 0.0])
                .unwrap();
        let inst = ProblemInstance::from_data(data).unwrap();
        assert_eq!(inst.m(), &DMatrix::identity(2, 2));
        assert_eq!(inst.r().as_slice(), &[1.0, 1.0]);
        assert!(inst.provenance().is_some());
    }

    #[test]
    fn positively_correlated_features_are_rejected() {
        let data = RegressionData::from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]], &[1.0, 1.0]).unwrap();
        match ProblemInstance::from_data(data) {
            Err(ProblemError::AssumptionViolated(v)) => {
                assert!(v.non_positive_response.is_empty());
                assert_eq!(v.correlated_features, vec![(0, 1)]);
            }
            other => panic!("expected A2 violation, got {other:?}"),
        }
    }

    #[test]
    fn hand_product_with_zero_response_is_rejected() {
        // X = [[1,-0.5],[0,1]], y = (1, 0.5): Xᵀy = (1, 0), so r_2 = 0 fails strictly.
        let x = [vec![1.0, -0.5], vec![0.0, 1.0]];
        let data = RegressionData::from_rows(&x, &[1.0, 0.5]).unwrap();
        let (m, r) = data.covariances();
        assert_eq!(m, mat(&[&[1.0, -0.5], &[-0.5, 1.25]]));
        assert_eq!(r.as_slice(), &[1.0, 0.0]);
        match ProblemInstance::from_data(data) {
            Err(ProblemError::AssumptionViolated(v)) => {
                assert_eq!(v.non_positive_response, vec![1]);
                assert!(v.correlated_features.is_empty());
            }
            other => panic!("expected A1 violation, got {other:?}"),
        }
    }

    #[test]
    fn hand_product_valid_variant() {
        // Independent triple loop for XᵀX and Xᵀy.
        let x = [vec![1.0, -0.5], vec![0.0, 1.0]];
        let y = [1.0, 0.625];
        let mut m = [[0.0; 2]; 2];
        let mut r = [0.0; 2];
        for a in 0..2 {
            for b in 0..2 {
                for row in &x {
                    m[a][b] += row[a] * row[b];
                }
            }
            for (row, yi) in x.iter().zip(y) {
                r[a] += row[a] * yi;
            }
        }
        assert_eq!(m, [[1.0, -0.5], [-0.5, 1.25]]);
        assert_eq!(r, [1.0, 0.125]);
        let inst = ProblemInstance::from_data(RegressionData::from_rows(&x, &y).unwrap()).unwrap();
        assert_eq!(inst.m(), &mat(&[&m[0], &m[1]]));
        assert_eq!(inst.r().as_slice(), &r);
    }

    #[test]
    fn non_finite_data_is_rejected() {
        let err = RegressionData::from_rows(&[vec![f64::NAN]], &[1.0]).unwrap_err();
        assert_eq!(err, ProblemError::NonFinite);
    }

    #[test]
    fn definiteness_reports() {
        let eye = ProblemInstance::from_parts(DMatrix::identity(2, 2), DVector::from_element(2, 1.0)).unwrap();
        let rep = eye.check_positive_definite().unwrap();
        assert!((rep.lambda_min - 1.0).abs() < 1e-14);

        let tri = ProblemInstance::from_parts(mat(&[&[2.0, -1.0], &[-1.0, 2.0]]), DVector::from_element(2, 1.0))
            .unwrap();
        assert!((tri.check_positive_definite().unwrap().lambda_min - 1.0).abs() < 1e-14);

        let singular = ProblemInstance::new_unchecked(mat(&[&[1.0, -1.0], &[-1.0, 1.0]]), DVector::from_element(2, 1.0));
        match singular.check_positive_definite() {
            Err(ProblemError::NotPositiveDefinite { lambda_min }) => assert!(lambda_min.abs() < 1e-14),
            other => panic!("expected NotPositiveDefinite, got {other:?}"),
        }
    }

    #[test]
    fn rejection_sampler_is_deterministic() {
        let a = generate_rejection(3, 2, 7, 100_000).unwrap();
        let b = generate_rejection(3, 2, 7, 100_000).unwrap();
        assert_eq!(a, b);
        assert!(ProblemInstance::from_data(a).is_ok());
    }

    #[test]
    fn rejection_sampler_budget() {
        // n < d makes M singular, which the sign conditions forbid: acceptance is zero.
        let err = generate_rejection(3, 12, 1, 1000).unwrap_err();
        assert_eq!(err, ProblemError::RejectionBudgetExceeded { attempts: 1000 });
    }

    #[test]
    fn direct_generator_small_cases() {
        let (inst, data) = generate_direct(1, 11, 0.3).unwrap();
        let m = inst.m()[(0, 0)];
        let r = inst.r()[0];
        assert!(m > 0.0 && r > 0.0);
        assert!((data.x()[(0, 0)] - m.sqrt()).abs() < 1e-15);
        assert!((data.y()[0] - r / m.sqrt()).abs() < 1e-15);

        let (inst, data) = generate_direct(2, 5, 0.0).unwrap();
        assert_eq!(inst.m()[(0, 1)], 0.0);
        let (m, r) = data.covariances();
        assert!((m - inst.m()).amax() < 1e-15);
        assert!((r - inst.r()).amax() < 1e-15);
    }

    #[test]
    fn direct_generator_rejects_large_scale() {
        assert!(matches!(
            generate_direct(8, 1, 5.0),
            Err(ProblemError::DegenerateScale { .. })
        ));
        assert!(matches!(
            generate_direct(3, 1, -0.1),
            Err(ProblemError::DegenerateScale { .. })
        ));
    }

    #[test]
    fn gradient_examples() {
        let inst = ProblemInstance::from_parts(DMatrix::identity(2, 2), DVector::from_vec(vec![2.0, 1.0])).unwrap();
        let g0 = inst.loss_gradient(&DVector::zeros(2)).unwrap();
        assert_eq!(g0.as_slice(), &[-2.0, -1.0]);
        let g = inst.loss_gradient(&DVector::from_vec(vec![2.0, 1.0])).unwrap();
        assert_eq!(g.as_slice(), &[0.0, 0.0]);
        let l = inst.loss(&DVector::from_vec(vec![2.0, 1.0])).unwrap();
        assert!(!l.includes_data_offset);
        assert_eq!(l.value, -2.5);
        assert!(inst.loss(&DVector::zeros(3)).is_err());
    }

    #[test]
    fn loss_includes_offset_with_data() {
        let data =
            RegressionData::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 0.0]], &[1.0, 1.0, 0.0])
                .unwrap();
        let inst = ProblemInstance::from_data(data.clone()).unwrap();
        let theta = DVector::from_vec(vec![0.3, 0.7]);
        let l = inst.loss(&theta).unwrap();
        assert!(l.includes_data_offset);
        let resid = data.x() * &theta - data.y();
        assert!((l.value - 0.5 * resid.norm_squared()).abs() < 1e-15);
    }

    #[test]
    fn initialization_validation() {
        let one = DVector::from_element(2, 1.0);
        assert!(Initialization::new(one.clone(), one.clone(), 1.0).is_err());
        assert!(Initialization::new(one.clone(), one.clone(), 0.0).is_err());
        assert!(Initialization::new(one.clone(), -one.clone(), 0.5).is_err());
        let init = Initialization::new(DVector::from_vec(vec![2.0, 1.0]), one, 1e-8).unwrap();
        let theta0 = init.initial_theta();
        assert!((theta0[0] - 2e-8).abs() < 1e-20);
        assert!((theta0[1] - 1e-8).abs() < 1e-20);
    }

    #[test]
    fn instance_file_round_trip() {
        let (inst, _) = generate_direct(3, 9, 0.4).unwrap();
        let file = InstanceFile::from_instance(
            &inst,
            InstanceMeta {
                seed: Some(9),
                generator: "direct".into(),
                ..Default::default()
            },
        );
        let json = serde_json::to_string(&file).unwrap();
        assert!(json.contains("\"M\"") && json.contains("\"X\""));
        let back: InstanceFile = serde_json::from_str(&json).unwrap();
        let inst2 = back.to_instance().unwrap();
        assert_eq!(inst2.m(), inst.m());
        assert_eq!(inst2.r(), inst.r());
        assert_eq!(back.meta.d, 3);
    }
}
