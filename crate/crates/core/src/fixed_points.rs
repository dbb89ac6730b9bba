//! Fixed points `θ*^(I)` of the flow, one per support `I ⊆ {0..d-1}`:
//! `(θ*^(I))_I = (M_II)⁻¹ r_I`, zero elsewhere.

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::index_set::IndexSet;
use crate::linalg::{principal_cholesky, scatter, subvector};
use crate::problem::ProblemInstance;

/// Enumeration guard on `d`.
pub const MAX_ENUMERATION_DIM: usize = 20;

/// Absolute positivity threshold on active coordinates.
pub const POSITIVITY_TOL: f64 = 1e-12;

/// Relative tolerance on `r_I − M_II θ_I`.
pub const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FixedPointError {
    #[error("index {index} out of range for dimension {d}")]
    IndexOutOfRange { index: usize, d: usize },
    #[error("principal submatrix on {support} is singular")]
    SingularSubmatrix { support: IndexSet },
    #[error("fixed point on {support} has non-positive coordinate {index} = {value:e}")]
    PositivityViolation {
        support: IndexSet,
        index: usize,
        value: f64,
    },
    #[error("fixed point on {support} has residual {residual:e}")]
    ResidualTooLarge { support: IndexSet, residual: f64 },
    #[error("dimension {d} too large for enumeration (max {max})")]
    DimensionTooLarge { d: usize, max: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FixedPoint {
    pub support: IndexSet,
    pub theta: Vec<f64>,
    /// `max_i |θ_i (r_i − (Mθ)_i)|`.
    pub residual: f64,
}

impl FixedPoint {
    pub fn theta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta)
    }
}

/// Vector field `V(θ)_i = θ_i (r_i − (Mθ)_i)`.
pub fn vector_field(instance: &ProblemInstance, theta: &DVector<f64>) -> DVector<f64> {
    let resid = instance.r() - instance.m() * theta;
    theta.component_mul(&resid)
}

pub fn fixed_point(instance: &ProblemInstance, support: &IndexSet) -> Result<FixedPoint, FixedPointError> {
    let d = instance.d();
    if let Some(index) = support.iter().find(|&i| i >= d) {
        return Err(FixedPointError::IndexOutOfRange { index, d });
    }
    let theta = if support.is_empty() {
        DVector::zeros(d)
    } else {
        let chol = principal_cholesky(instance.m(), support).ok_or_else(|| {
            FixedPointError::SingularSubmatrix {
                support: support.clone(),
            }
        })?;
        scatter(&chol.solve(&subvector(instance.r(), support)), support, d)
    };
    for i in support.iter() {
        if !(theta[i] > POSITIVITY_TOL) {
            return Err(FixedPointError::PositivityViolation {
                support: support.clone(),
                index: i,
                value: theta[i],
            });
        }
    }
    let resid = instance.r() - instance.m() * &theta;
    let scale = instance.r().amax() + instance.m().amax() * theta.amax();
    let support_resid = support.iter().map(|i| resid[i].abs()).fold(0.0, f64::max);
    if support_resid > RESIDUAL_TOL * scale {
        return Err(FixedPointError::ResidualTooLarge {
            support: support.clone(),
            residual: support_resid,
        });
    }
    let residual = vector_field(instance, &theta).amax();
    Ok(FixedPoint {
        support: support.clone(),
        theta: theta.iter().copied().collect(),
        residual,
    })
}

/// All `2^d` fixed points, ordered by support bitmask.
pub fn enumerate_fixed_points(instance: &ProblemInstance) -> Result<Vec<FixedPoint>, FixedPointError> {
    let d = instance.d();
    if d > MAX_ENUMERATION_DIM {
        return Err(FixedPointError::DimensionTooLarge {
            d,
            max: MAX_ENUMERATION_DIM,
        });
    }
    (0u64..(1u64 << d))
        .into_par_iter()
        .map(|mask| fixed_point(instance, &IndexSet::from_mask(mask, d)))
        .collect()
}

pub fn is_fixed_point(instance: &ProblemInstance, theta: &DVector<f64>, tol: f64) -> bool {
    theta.len() == instance.d() && vector_field(instance, theta).amax() <= tol
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn tri_instance() -> ProblemInstance {
        ProblemInstance::from_parts(
            DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn empty_support_is_origin() {
        let fp = fixed_point(&tri_instance(), &IndexSet::empty()).unwrap();
        assert_eq!(fp.theta, vec![0.0, 0.0]);
        assert_eq!(fp.residual, 0.0);
    }

    #[test]
    fn full_support_is_minimizer() {
        let inst = tri_instance();
        let fp = fixed_point(&inst, &IndexSet::full(2)).unwrap();
        let min = inst.minimizer().unwrap();
        assert!((fp.theta_vec() - min).amax() < 1e-14);
        assert!((fp.theta[0] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn single_coordinate() {
        let fp = fixed_point(&tri_instance(), &IndexSet::from_indices([0])).unwrap();
        assert!((fp.theta[0] - 0.5).abs() < 1e-15);
        assert_eq!(fp.theta[1], 0.0);
    }

    #[test]
    fn scalar_enumeration() {
        let inst = ProblemInstance::from_parts(DMatrix::from_element(1, 1, 4.0), DVector::from_element(1, 2.0)).unwrap();
        let fps = enumerate_fixed_points(&inst).unwrap();
        assert_eq!(fps.len(), 2);
        assert_eq!(fps[0].theta, vec![0.0]);
        assert_eq!(fps[1].theta, vec![0.5]);
    }

    #[test]
    fn fixed_point_predicate() {
        let inst = tri_instance();
        assert!(is_fixed_point(&inst, &DVector::zeros(2), 1e-12));
        assert!(is_fixed_point(&inst, &inst.minimizer().unwrap(), 1e-12));
        let fp = fixed_point(&inst, &IndexSet::from_indices([1])).unwrap();
        let perturbed = fp.theta_vec() + DVector::from_vec(vec![0.0, 0.1]);
        assert!(!is_fixed_point(&inst, &perturbed, 1e-6));
    }

    #[test]
    fn out_of_range_and_singular() {
        let inst = tri_instance();
        assert!(matches!(
            fixed_point(&inst, &IndexSet::from_indices([2])),
            Err(FixedPointError::IndexOutOfRange { index: 2, d: 2 })
        ));
        let bad = ProblemInstance::new_unchecked(
            DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        );
        assert!(matches!(
            fixed_point(&bad, &IndexSet::full(2)),
            Err(FixedPointError::SingularSubmatrix { .. })
        ));
    }
}
