//! The limiting process: the solution `(w(s), z(s))` of `LCP(k − s r, M)` for `s > 0`,
//! the regularization path `μ(s) = z(s)/s`, the active sets `I(s) = {i : μ_i(s) > 0}`,
//! their breakpoints and the piecewise-constant limit `θ*^(I(s))`.
//!
//! On a segment with active set `I`, the path is affine in `s`:
//!
//! ```text
//! z_I(s) = (M_II)⁻¹ (s r_I − k_I) = s θ*^(I)_I − (M_II)⁻¹ k_I,
//! w_i(s) = (k_i − M_iI (M_II)⁻¹ k_I) − s (r_i − M_iI θ*^(I)_I),   i ∉ I.
//! ```
//!
//! The inactive slope `r_i − M_iI θ*^(I)_I` is positive for K-matrices, so every inactive
//! coordinate eventually enters. The next breakpoint is the smallest root of the
//! inactive `w_i`, found in closed form.

use nalgebra::DVector;
use serde::Serialize;
use thiserror::Error;

use crate::fixed_points::{fixed_point, FixedPoint, FixedPointError};
use crate::index_set::IndexSet;
use crate::lcp::{solve_lcp, LcpError, LcpSolution};
use crate::linalg::solve_principal;
use crate::problem::{ProblemError, ProblemInstance};

/// Relative width under which breakpoint candidates activate together.
pub const TIE_RTOL: f64 = 1e-12;

/// Queries closer than this to a breakpoint are refused by [`LimitPath::theta_star`].
pub const BREAKPOINT_GUARD: f64 = 1e-12;

/// Required agreement of segment formulas with a direct LCP solve.
pub const SEGMENT_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PathError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Lcp(#[from] LcpError),
    #[error(transparent)]
    FixedPoint(#[from] FixedPointError),
    #[error("s must be positive, got {0}")]
    NonPositiveS(f64),
    #[error("k must be positive with length {d}")]
    InvalidK { d: usize },
    #[error("primal z_{index} = {value:e} negative on segment {segment} (active set {active})")]
    NegativePrimalOnSegment {
        segment: usize,
        active: IndexSet,
        index: usize,
        value: f64,
    },
    #[error("segment {segment} formula disagrees with the LCP at s = {s} (gap {gap:e})")]
    SegmentMismatch { segment: usize, s: f64, gap: f64 },
    #[error("s = {s} is within {guard:e} of breakpoint {breakpoint}")]
    AtBreakpoint { s: f64, breakpoint: f64, guard: f64 },
}

/// One interval `[start, end)` of constant active set, with affine `z(s)`, `w(s)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub start: f64,
    /// `f64::INFINITY` for the final segment.
    pub end: f64,
    pub active: IndexSet,
    pub fixed_point: FixedPoint,
    pub z_slope: Vec<f64>,
    pub z_intercept: Vec<f64>,
    pub w_slope: Vec<f64>,
    pub w_intercept: Vec<f64>,
}

impl Segment {
    pub fn z_at(&self, s: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.z_slope.len(),
            self.z_slope.iter().zip(&self.z_intercept).map(|(a, b)| a * s + b),
        )
    }

    pub fn w_at(&self, s: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.w_slope.len(),
            self.w_slope.iter().zip(&self.w_intercept).map(|(a, b)| a * s + b),
        )
    }

    fn contains(&self, s: f64) -> bool {
        s >= self.start && s < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitPath {
    pub k: Vec<f64>,
    /// `s_1 < ... < s_q`.
    pub breakpoints: Vec<f64>,
    /// `q + 1` segments; segment 0 has the empty active set.
    pub segments: Vec<Segment>,
    pub s_star: f64,
}

impl LimitPath {
    pub fn segment_at(&self, s: f64) -> Result<&Segment, PathError> {
        if !(s > 0.0) {
            return Err(PathError::NonPositiveS(s));
        }
        Ok(self
            .segments
            .iter()
            .find(|seg| seg.contains(s))
            .unwrap_or_else(|| self.segments.last().expect("path has segments")))
    }

    pub fn active_set_at(&self, s: f64) -> Result<&IndexSet, PathError> {
        Ok(&self.segment_at(s)?.active)
    }

    pub fn z_at(&self, s: f64) -> Result<DVector<f64>, PathError> {
        Ok(self.segment_at(s)?.z_at(s))
    }

    pub fn w_at(&self, s: f64) -> Result<DVector<f64>, PathError> {
        Ok(self.segment_at(s)?.w_at(s))
    }

    pub fn mu_at(&self, s: f64) -> Result<DVector<f64>, PathError> {
        Ok(self.z_at(s)? / s)
    }

    /// Distance from `s` to the nearest breakpoint.
    pub fn distance_to_breakpoint(&self, s: f64) -> f64 {
        self.breakpoints
            .iter()
            .map(|b| (s - b).abs())
            .fold(f64::INFINITY, f64::min)
    }

    /// `θ*^(I(s))`, undefined at the breakpoints themselves.
    pub fn theta_star(&self, s: f64) -> Result<DVector<f64>, PathError> {
        if !(s > 0.0) {
            return Err(PathError::NonPositiveS(s));
        }
        if let Some(&b) = self
            .breakpoints
            .iter()
            .find(|&&b| (s - b).abs() < BREAKPOINT_GUARD)
        {
            return Err(PathError::AtBreakpoint {
                s,
                breakpoint: b,
                guard: BREAKPOINT_GUARD,
            });
        }
        Ok(self.segment_at(s)?.fixed_point.theta_vec())
    }

    pub fn num_breakpoints(&self) -> usize {
        self.breakpoints.len()
    }
}

/// `theta_star_of_s` as a free function.
pub fn theta_star_of_s(path: &LimitPath, s: f64) -> Result<DVector<f64>, PathError> {
    path.theta_star(s)
}

fn check_k(instance: &ProblemInstance, k: &DVector<f64>) -> Result<(), PathError> {
    if k.len() != instance.d() || !k.iter().all(|&v| v > 0.0 && v.is_finite()) {
        return Err(PathError::InvalidK { d: instance.d() });
    }
    Ok(())
}

/// `LCP(k − s r, M)`.
pub fn solve_limit_lcp(instance: &ProblemInstance, k: &DVector<f64>, s: f64) -> Result<LcpSolution, PathError> {
    if !(s > 0.0) {
        return Err(PathError::NonPositiveS(s));
    }
    check_k(instance, k)?;
    let q = k - instance.r() * s;
    Ok(solve_lcp(&q, instance.m())?)
}

/// `μ(s) = z(s)/s`, the minimizer of `f(θ) + ⟨k, θ⟩/s` over `θ >= 0`.
pub fn mu(instance: &ProblemInstance, k: &DVector<f64>, s: f64) -> Result<DVector<f64>, PathError> {
    Ok(solve_limit_lcp(instance, k, s)?.z_vec() / s)
}

/// `s* = max_i (M⁻¹k)_i / (M⁻¹r)_i`.
pub fn convergence_time_s_star(instance: &ProblemInstance, k: &DVector<f64>) -> Result<f64, PathError> {
    check_k(instance, k)?;
    let mk = instance.solve(k)?;
    let mr = instance.minimizer()?;
    Ok(mk
        .iter()
        .zip(mr.iter())
        .map(|(a, b)| a / b)
        .fold(f64::NEG_INFINITY, f64::max))
}

fn build_segment(
    instance: &ProblemInstance,
    k: &DVector<f64>,
    active: &IndexSet,
    start: f64,
) -> Result<Segment, PathError> {
    let d = instance.d();
    let m = instance.m();
    let r = instance.r();
    let fp = fixed_point(instance, active)?;
    let theta = fp.theta_vec();
    let b = solve_principal(m, active, k).ok_or_else(|| FixedPointError::SingularSubmatrix {
        support: active.clone(),
    })?;
    // Inactive rows: w = k − s r + M z with z = s θ − b.
    let m_theta = m * &theta;
    let m_b = m * &b;
    let mut w_slope = vec![0.0; d];
    let mut w_intercept = vec![0.0; d];
    for i in 0..d {
        if !active.contains(i) {
            w_slope[i] = -(r[i] - m_theta[i]);
            w_intercept[i] = k[i] - m_b[i];
        }
    }
    Ok(Segment {
        start,
        end: f64::INFINITY,
        active: active.clone(),
        fixed_point: fp,
        z_slope: theta.iter().copied().collect(),
        z_intercept: b.iter().map(|v| -v).collect(),
        w_slope,
        w_intercept,
    })
}

fn verify_segment(instance: &ProblemInstance, k: &DVector<f64>, seg: &Segment, index: usize) -> Result<(), PathError> {
    let s = if seg.end.is_finite() {
        0.5 * (seg.start + seg.end)
    } else {
        seg.start.max(f64::MIN_POSITIVE) * 2.0 + 1.0
    };
    let sol = solve_limit_lcp(instance, k, s)?;
    let gap_z = (seg.z_at(s) - sol.z_vec()).amax();
    let gap_w = (seg.w_at(s) - sol.w_vec()).amax();
    let scale = 1.0 + sol.z_vec().amax() + sol.w_vec().amax();
    let gap = gap_z.max(gap_w);
    if gap > SEGMENT_CHECK_TOL * scale || sol.support != seg.active {
        return Err(PathError::SegmentMismatch { segment: index, s, gap });
    }
    Ok(())
}

/// Traces the path from `I = ∅` on `(0, min_i k_i/r_i)` to the full support.
pub fn compute_path(instance: &ProblemInstance, k: &DVector<f64>) -> Result<LimitPath, PathError> {
    check_k(instance, k)?;
    let d = instance.d();
    let mut active = IndexSet::empty();
    let mut segments: Vec<Segment> = Vec::new();
    let mut breakpoints = Vec::new();
    let mut start = 0.0;

    loop {
        let mut seg = build_segment(instance, k, &active, start)?;
        let index = segments.len();
        // z_I(s) is nondecreasing (slope θ* > 0), so its minimum sits at the segment start.
        for i in active.iter() {
            let value = seg.z_slope[i] * start + seg.z_intercept[i];
            if value < -SEGMENT_CHECK_TOL * (1.0 + seg.z_slope[i] * start) {
                return Err(PathError::NegativePrimalOnSegment {
                    segment: index,
                    active: active.clone(),
                    index: i,
                    value,
                });
            }
        }
        if active.len() == d {
            verify_segment(instance, k, &seg, index)?;
            segments.push(seg);
            break;
        }
        let roots: Vec<(usize, f64)> = (0..d)
            .filter(|&i| !active.contains(i))
            .filter(|&i| seg.w_slope[i] < 0.0)
            .map(|i| (i, (seg.w_intercept[i] / -seg.w_slope[i]).max(start)))
            .collect();
        let Some(next) = roots.iter().map(|&(_, s)| s).reduce(f64::min) else {
            // Unreachable for K-matrices: every inactive slope is negative.
            return Err(PathError::NegativePrimalOnSegment {
                segment: index,
                active: active.clone(),
                index: usize::MAX,
                value: f64::NAN,
            });
        };
        let width = TIE_RTOL * next.max(1.0);
        let entering: Vec<usize> = roots
            .iter()
            .filter(|&&(_, s)| s - next <= width)
            .map(|&(i, _)| i)
            .collect();
        seg.end = next;
        if next - start > width || segments.is_empty() {
            verify_segment(instance, k, &seg, index)?;
        }
        segments.push(seg);
        breakpoints.push(next);
        for i in entering {
            active.insert(i);
        }
        start = next;
    }

    let s_star = *breakpoints.last().expect("d >= 1 gives one breakpoint");
    Ok(LimitPath {
        k: k.iter().copied().collect(),
        breakpoints,
        segments,
        s_star,
    })
}
