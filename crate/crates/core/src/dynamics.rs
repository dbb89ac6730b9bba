//! The flow `dθ_i/dt = θ_i (r_i − (Mθ)_i)` from `θ_i(0) = C_i ε^{k_i}`, integrated in
//! log-coordinates `w_i = log θ_i / log ε` on the clock `s = t / log(1/ε)`:
//!
//! ```text
//! dw/ds = Mθ − r,    θ_i = exp(−w_i log(1/ε)),    w_i(0) = k_i + log C_i / log ε.
//! ```
//!
//! The running integral `z(s) = ∫₀ˢ θ(u) du` is carried as extra state, so the average
//! `z(s)/s` comes from the same Runge–Kutta weights as the trajectory itself.
//! `ε` is only ever used through `log(1/ε)`, so `ε = 1e-20` or `1e-300` cost the same.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::fixed_points::FixedPoint;
use crate::ode::{self, Dopri5Options, IntegratorStats, OdeError, OdeSystem, StepControl};
use crate::problem::{Initialization, ProblemError, ProblemInstance};

/// Slack used by [`region_q_check`].
pub const REGION_Q_SLACK: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("invalid sample grid: {0}")]
    InvalidGrid(String),
    #[error("coordinate {index} decreased by {decrease:e} at s = {s}; epsilon is too large for monotone dynamics")]
    MonotonicityViolated { s: f64, index: usize, decrease: f64 },
    #[error("step size underflow at s = {s} (h = {h:e})")]
    StepUnderflow { s: f64, h: f64 },
    #[error("integrator exceeded {max_steps} steps (stopped at s = {s})")]
    MaxSteps { max_steps: usize, s: f64 },
    #[error("non-finite state at s = {s}")]
    NonFinite { s: f64 },
    #[error("s = {s} outside the integrated range [{lo}, {hi}]")]
    OutOfRange { s: f64, lo: f64, hi: f64 },
    #[error("ball of radius eta not reached before s = {s_cap}")]
    NotReached { s_cap: f64 },
    #[error("eta = {eta} must lie in (0, {max}) (the smallest coordinate of the minimizer)")]
    InvalidEta { eta: f64, max: f64 },
    #[error("theta_{index} = {value:e} must be positive on the support")]
    DomainError { index: usize, value: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    /// Mixed absolute/relative tolerance on `(w, z)`.
    pub tol: f64,
    /// Aborts with [`DynamicsError::MonotonicityViolated`] when some `θ_i` drops by more
    /// than `monotonicity_slack · max(1, θ_i)` across an accepted step.
    pub monotonicity_slack: f64,
    /// Steps satisfy `h · log(1/ε) · max_i Σ_j |M_ij| θ_j <= stability_factor`, which keeps
    /// the Runge–Kutta amplification in `(0, 1)` near attracting saddles.
    pub stability_factor: f64,
    pub max_steps: usize,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        SimulationOptions {
            tol: 1e-9,
            monotonicity_slack: 1e-8,
            stability_factor: 2.0,
            max_steps: 5_000_000,
        }
    }
}

impl SimulationOptions {
    pub fn with_tol(tol: f64) -> Self {
        SimulationOptions {
            tol,
            ..Default::default()
        }
    }
}

/// `n` uniform points on `[0, s_max]`, endpoints included.
pub fn uniform_grid(s_max: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![s_max],
        _ => (0..n).map(|i| s_max * i as f64 / (n - 1) as f64).collect(),
    }
}

struct LogFlow<'a> {
    m: &'a DMatrix<f64>,
    r: &'a DVector<f64>,
    log_inv_eps: f64,
    stability_factor: f64,
}

impl LogFlow<'_> {
    fn d(&self) -> usize {
        self.r.len()
    }
}

impl OdeSystem for LogFlow<'_> {
    fn dim(&self) -> usize {
        2 * self.d()
    }

    fn rhs(&self, _s: f64, y: &[f64], dy: &mut [f64]) {
        let d = self.d();
        let w = &y[..d];
        let (dw, dz) = dy.split_at_mut(d);
        for j in 0..d {
            dz[j] = (-w[j] * self.log_inv_eps).exp();
        }
        for (i, dwi) in dw.iter_mut().enumerate() {
            let mut acc = -self.r[i];
            for (j, theta_j) in dz.iter().enumerate() {
                acc += self.m[(i, j)] * theta_j;
            }
            *dwi = acc;
        }
    }

    fn max_step(&self, _s: f64, y: &[f64]) -> f64 {
        let d = self.d();
        let theta: Vec<f64> = y[..d].iter().map(|&w| (-w * self.log_inv_eps).exp()).collect();
        let mut rho = 0.0f64;
        for i in 0..d {
            let row: f64 = (0..d).map(|j| self.m[(i, j)].abs() * theta[j]).sum();
            rho = rho.max(row);
        }
        let rho = rho * self.log_inv_eps;
        if rho > 0.0 {
            self.stability_factor / rho
        } else {
            f64::INFINITY
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    /// Rescaled time.
    pub s: f64,
    /// Physical time `s · log(1/ε)`.
    pub t: f64,
    pub w: Vec<f64>,
    pub theta: Vec<f64>,
    /// `∫₀ˢ θ(u) du`.
    pub integral: Vec<f64>,
}

impl TrajectoryPoint {
    fn from_state(s: f64, y: &[f64], log_inv_eps: f64) -> Self {
        let d = y.len() / 2;
        let w = y[..d].to_vec();
        TrajectoryPoint {
            s,
            t: s * log_inv_eps,
            theta: w.iter().map(|&wi| (-wi * log_inv_eps).exp()).collect(),
            w,
            integral: y[d..].to_vec(),
        }
    }

    pub fn theta_vec(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta)
    }

    /// `z(s)/s`; `θ(0)` at `s = 0`.
    pub fn average(&self) -> Vec<f64> {
        if self.s > 0.0 {
            self.integral.iter().map(|z| z / self.s).collect()
        } else {
            self.theta.clone()
        }
    }
}

/// Worst-case invariant deviations over the samples of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvariantReport {
    /// `max_{j,i} (θ_i(s_j) − θ_i(s_{j+1}))`, positive when a coordinate decreased.
    pub max_coordinate_decrease: f64,
    /// `max_j (f(s_{j+1}) − f(s_j))`, positive when the loss increased.
    pub max_loss_increase: f64,
    /// Largest violation of `θ >= 0`, `r − Mθ >= 0`.
    pub max_region_violation: f64,
    /// `max_j ‖θ(s_j)‖₂`.
    pub sup_norm: f64,
}

impl InvariantReport {
    pub fn holds(&self, slack: f64) -> bool {
        self.max_coordinate_decrease <= slack
            && self.max_loss_increase <= slack
            && self.max_region_violation <= slack
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    instance: ProblemInstance,
    init: Initialization,
    s_max: f64,
    samples: Vec<TrajectoryPoint>,
    stats: IntegratorStats,
    dense: ode::DenseOutput,
}

impl Trajectory {
    pub fn instance(&self) -> &ProblemInstance {
        &self.instance
    }

    pub fn initialization(&self) -> &Initialization {
        &self.init
    }

    pub fn samples(&self) -> &[TrajectoryPoint] {
        &self.samples
    }

    pub fn stats(&self) -> &IntegratorStats {
        &self.stats
    }

    pub fn s_max(&self) -> f64 {
        self.s_max
    }

    pub fn log_inv_epsilon(&self) -> f64 {
        self.init.log_inv_epsilon()
    }

    /// State at any `s` in `[0, s_max]` from the dense output.
    pub fn point_at(&self, s: f64) -> Result<TrajectoryPoint, DynamicsError> {
        if !(s >= 0.0 && s <= self.s_max) {
            return Err(DynamicsError::OutOfRange {
                s,
                lo: 0.0,
                hi: self.s_max,
            });
        }
        let y = self.dense.eval(s);
        Ok(TrajectoryPoint::from_state(s, &y, self.log_inv_epsilon()))
    }

    pub fn invariant_report(&self) -> InvariantReport {
        let mut report = InvariantReport {
            max_coordinate_decrease: f64::NEG_INFINITY,
            max_loss_increase: f64::NEG_INFINITY,
            max_region_violation: 0.0,
            sup_norm: 0.0,
        };
        let mut prev: Option<(&TrajectoryPoint, f64)> = None;
        for p in &self.samples {
            let theta = p.theta_vec();
            let loss = self.instance.loss(&theta).map(|l| l.value).unwrap_or(f64::NAN);
            report.max_region_violation = report
                .max_region_violation
                .max(region_q_violation(&self.instance, &theta));
            report.sup_norm = report.sup_norm.max(theta.norm());
            if let Some((q, q_loss)) = prev {
                for (a, b) in q.theta.iter().zip(&p.theta) {
                    report.max_coordinate_decrease = report.max_coordinate_decrease.max(a - b);
                }
                report.max_loss_increase = report.max_loss_increase.max(loss - q_loss);
            }
            prev = Some((p, loss));
        }
        report
    }
}

fn map_ode_error(err: OdeError<DynamicsError>) -> DynamicsError {
    match err {
        OdeError::StepUnderflow { t, h } => DynamicsError::StepUnderflow { s: t, h },
        OdeError::MaxSteps { max_steps, t, .. } => DynamicsError::MaxSteps { max_steps, s: t },
        OdeError::NonFinite { t } => DynamicsError::NonFinite { s: t },
        OdeError::Callback(e) => e,
    }
}

fn check_dims(instance: &ProblemInstance, init: &Initialization) -> Result<(), DynamicsError> {
    if init.d() != instance.d() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "initialization has dimension {}, instance has {}",
            init.d(),
            instance.d()
        )));
    }
    Ok(())
}

/// Integrates `(w, z)` on `[0, s_max]`; `stop` may end the run early at a step boundary.
fn integrate_flow<F>(
    instance: &ProblemInstance,
    init: &Initialization,
    s_max: f64,
    options: &SimulationOptions,
    mut stop: F,
) -> Result<ode::OdeSolution, DynamicsError>
where
    F: FnMut(f64, &[f64]) -> bool,
{
    check_dims(instance, init)?;
    if !(s_max > 0.0 && s_max.is_finite()) {
        return Err(DynamicsError::InvalidGrid(format!("s_max must be positive, got {s_max}")));
    }
    let d = instance.d();
    let log_inv_eps = init.log_inv_epsilon();
    let system = LogFlow {
        m: instance.m(),
        r: instance.r(),
        log_inv_eps,
        stability_factor: options.stability_factor,
    };
    let mut y0 = init.initial_log_coordinates().iter().copied().collect::<Vec<_>>();
    y0.extend(std::iter::repeat_n(0.0, d));
    let ode_opts = Dopri5Options {
        rtol: options.tol,
        atol: options.tol,
        max_steps: options.max_steps,
        ..Default::default()
    };
    let mut prev_w = y0[..d].to_vec();
    let slack = options.monotonicity_slack;
    ode::integrate(&system, 0.0, &y0, s_max, &ode_opts, |s, y| {
        for i in 0..d {
            let before = (-prev_w[i] * log_inv_eps).exp();
            let after = (-y[i] * log_inv_eps).exp();
            let decrease = before - after;
            if decrease > slack * before.max(1.0) {
                return Err(DynamicsError::MonotonicityViolated { s, index: i, decrease });
            }
        }
        prev_w.copy_from_slice(&y[..d]);
        Ok(if stop(s, y) {
            StepControl::Stop
        } else {
            StepControl::Continue
        })
    })
    .map_err(map_ode_error)
}

/// Simulates the flow and samples it on `s_grid` (strictly increasing, within `[0, s_max]`).
pub fn simulate(
    instance: &ProblemInstance,
    init: &Initialization,
    s_max: f64,
    s_grid: &[f64],
    options: &SimulationOptions,
) -> Result<Trajectory, DynamicsError> {
    if s_grid.windows(2).any(|p| !(p[1] > p[0])) {
        return Err(DynamicsError::InvalidGrid("grid must be strictly increasing".into()));
    }
    if let (Some(&lo), Some(&hi)) = (s_grid.first(), s_grid.last()) {
        if lo < 0.0 || hi > s_max {
            return Err(DynamicsError::InvalidGrid(format!(
                "grid [{lo}, {hi}] exceeds [0, {s_max}]"
            )));
        }
    }
    let solution = integrate_flow(instance, init, s_max, options, |_, _| false)?;
    let log_inv_eps = init.log_inv_epsilon();
    let mut y = vec![0.0; 2 * instance.d()];
    let samples = s_grid
        .iter()
        .map(|&s| {
            solution.dense.eval_into(s, &mut y);
            TrajectoryPoint::from_state(s, &y, log_inv_eps)
        })
        .collect();
    Ok(Trajectory {
        instance: instance.clone(),
        init: init.clone(),
        s_max,
        samples,
        stats: solution.stats,
        dense: solution.dense,
    })
}

/// `(1/s) ∫₀ˢ θ(u) du`.
pub fn average_trajectory(trajectory: &Trajectory, s: f64) -> Result<Vec<f64>, DynamicsError> {
    if !(s > 0.0) {
        return Err(DynamicsError::OutOfRange {
            s,
            lo: 0.0,
            hi: trajectory.s_max(),
        });
    }
    Ok(trajectory.point_at(s)?.average())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingTime {
    /// Physical time `τ_η`.
    pub tau: f64,
    /// `τ_η / log(1/ε)`.
    pub ratio: f64,
    pub eta: f64,
    pub log_inv_epsilon: f64,
}

/// First time `‖θ(t) − M⁻¹r‖₂ <= η`, located on the dense output and refined by
/// bisection to relative accuracy `1e-6`.
pub fn hitting_time(
    instance: &ProblemInstance,
    init: &Initialization,
    eta: f64,
    s_cap: f64,
    options: &SimulationOptions,
) -> Result<HittingTime, DynamicsError> {
    check_dims(instance, init)?;
    let target = instance.minimizer()?;
    let max_eta = target.min();
    if !(eta > 0.0 && eta < max_eta) {
        return Err(DynamicsError::InvalidEta { eta, max: max_eta });
    }
    let d = instance.d();
    let log_inv_eps = init.log_inv_epsilon();
    let distance = |y: &[f64]| -> f64 {
        (0..d)
            .map(|i| ((-y[i] * log_inv_eps).exp() - target[i]).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let solution = integrate_flow(instance, init, s_cap, options, |_, y| distance(y) <= eta)?;
    let dense = &solution.dense;

    const SUBSAMPLES: usize = 8;
    let mut y = vec![0.0; 2 * d];
    let mut prev_s = 0.0;
    let mut bracket = None;
    'scan: for i in 0..dense.num_steps() {
        let (a, b) = dense.step_bounds(i);
        for k in 1..=SUBSAMPLES {
            let s = a + (b - a) * k as f64 / SUBSAMPLES as f64;
            dense.eval_step_into(i, s, &mut y);
            if distance(&y) <= eta {
                bracket = Some((prev_s, s));
                break 'scan;
            }
            prev_s = s;
        }
    }
    let Some((mut lo, mut hi)) = bracket else {
        return Err(DynamicsError::NotReached { s_cap });
    };
    // Tighter than the 1e-6 contract so interpolation error dominates.
    while hi - lo > 1e-8 * hi {
        let mid = 0.5 * (lo + hi);
        dense.eval_into(mid, &mut y);
        if distance(&y) <= eta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(HittingTime {
        tau: hi * log_inv_eps,
        ratio: hi,
        eta,
        log_inv_epsilon: log_inv_eps,
    })
}

/// `V(θ) = Σ_{i∈I} (θ_i − θ*_i log θ_i)` for the fixed point on `I`.
pub fn lyapunov_v(theta: &[f64], fp: &FixedPoint) -> Result<f64, DynamicsError> {
    if theta.len() != fp.theta.len() {
        return Err(DynamicsError::DimensionMismatch(format!(
            "theta has length {}, fixed point has {}",
            theta.len(),
            fp.theta.len()
        )));
    }
    let mut v = 0.0;
    for i in fp.support.iter() {
        if !(theta[i] > 0.0) {
            return Err(DynamicsError::DomainError {
                index: i,
                value: theta[i],
            });
        }
        v += theta[i] - fp.theta[i] * theta[i].ln();
    }
    Ok(v)
}

/// Violation of `θ >= 0`, `r − Mθ >= 0` (zero inside the region).
pub fn region_q_violation(instance: &ProblemInstance, theta: &DVector<f64>) -> f64 {
    let resid = instance.r() - instance.m() * theta;
    let worst = theta.min().min(resid.min());
    (-worst).max(0.0)
}

pub fn region_q_check(instance: &ProblemInstance, theta: &DVector<f64>) -> bool {
    theta.len() == instance.d()
        && theta.iter().all(|&v| v >= 0.0)
        && region_q_violation(instance, theta) <= REGION_Q_SLACK
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed_points::fixed_point;
    use crate::index_set::IndexSet;

    fn scalar() -> ProblemInstance {
        ProblemInstance::from_parts(DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0)).unwrap()
    }

    /// `θ(t) = θ₀ / (θ₀ + (1 − θ₀) e^{−t})` rewritten with `θ₀ = ε`, `t = sL`, stable in logs.
    fn logistic(s: f64, log_inv_eps: f64) -> f64 {
        // θ = 1 / (1 + (1/θ₀ − 1) e^{−t})
        let log_ratio = (log_inv_eps.exp_m1()).ln() - s * log_inv_eps;
        1.0 / (1.0 + log_ratio.exp())
    }

    #[test]
    fn logistic_reaches_one() {
        let init = Initialization::uniform(1, 1e-12).unwrap();
        let traj = simulate(&scalar(), &init, 2.0, &[0.0, 1.0, 2.0], &SimulationOptions::default()).unwrap();
        let end = &traj.samples()[2];
        assert!((end.theta[0] - 1.0).abs() < 1e-4);
        assert!((end.t - 2.0 * 12.0 * std::f64::consts::LN_10).abs() < 1e-12);
    }

    #[test]
    fn logistic_matches_closed_form_on_grid() {
        let init = Initialization::uniform(1, 1e-6).unwrap();
        let grid = uniform_grid(2.0, 81);
        let traj = simulate(&scalar(), &init, 2.0, &grid, &SimulationOptions::default()).unwrap();
        let l = init.log_inv_epsilon();
        for p in traj.samples() {
            let exact = logistic(p.s, l);
            assert!((p.theta[0] - exact).abs() < 1e-6, "s = {}: {} vs {}", p.s, p.theta[0], exact);
        }
    }

    #[test]
    fn average_of_logistic() {
        let init = Initialization::uniform(1, 1e-12).unwrap();
        let traj = simulate(&scalar(), &init, 2.0, &uniform_grid(2.0, 11), &SimulationOptions::default()).unwrap();
        let avg = average_trajectory(&traj, 2.0).unwrap()[0];
        assert!((avg - 0.5).abs() < 5e-2, "avg {avg}");
        let tiny = average_trajectory(&traj, 1e-9).unwrap()[0];
        assert!(tiny < 1e-10);
        assert!(average_trajectory(&traj, 0.0).is_err());
        assert!(average_trajectory(&traj, 2.5).is_err());
        let mut prev = 0.0;
        for s in uniform_grid(2.0, 41).into_iter().skip(1) {
            let a = average_trajectory(&traj, s).unwrap()[0];
            assert!(a >= prev - 1e-12);
            prev = a;
        }
    }

    #[test]
    fn monotonicity_violation_is_reported() {
        // θ(0) = 20 · 0.5 = 10 lies above r/M = 1, so θ decreases.
        let init = Initialization::new(DVector::from_element(1, 20.0), DVector::from_element(1, 1.0), 0.5).unwrap();
        let err = simulate(&scalar(), &init, 1.0, &[0.0, 1.0], &SimulationOptions::default()).unwrap_err();
        assert!(matches!(err, DynamicsError::MonotonicityViolated { index: 0, .. }), "{err:?}");
    }

    #[test]
    fn grid_validation() {
        let init = Initialization::uniform(1, 1e-3).unwrap();
        let opts = SimulationOptions::default();
        assert!(simulate(&scalar(), &init, 1.0, &[0.5, 0.2], &opts).is_err());
        assert!(simulate(&scalar(), &init, 1.0, &[0.5, 1.5], &opts).is_err());
        let init2 = Initialization::uniform(2, 1e-3).unwrap();
        assert!(matches!(
            simulate(&scalar(), &init2, 1.0, &[], &opts),
            Err(DynamicsError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn hitting_time_scalar() {
        let opts = SimulationOptions::default();
        let eps = 1e-20;
        let init = Initialization::uniform(1, eps).unwrap();
        let hit = hitting_time(&scalar(), &init, 0.1, 3.0, &opts).unwrap();
        // Closed form: θ(τ) = 0.9  ⇔  τ = log((1/θ₀ − 1) · 9).
        let l = init.log_inv_epsilon();
        let exact = (l.exp_m1()).ln() + 9.0f64.ln();
        assert!((hit.tau - exact).abs() / exact < 1e-6, "{} vs {}", hit.tau, exact);
        assert!((hit.ratio - 1.0).abs() < 0.1);
        assert!(matches!(
            hitting_time(&scalar(), &init, 0.1, 0.5, &opts),
            Err(DynamicsError::NotReached { .. })
        ));
        assert!(matches!(
            hitting_time(&scalar(), &init, 1.5, 3.0, &opts),
            Err(DynamicsError::InvalidEta { .. })
        ));
    }

    #[test]
    fn lyapunov_examples() {
        let inst = ProblemInstance::from_parts(
            DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let empty = fixed_point(&inst, &IndexSet::empty()).unwrap();
        assert_eq!(lyapunov_v(&[0.3, 0.0], &empty).unwrap(), 0.0);
        let fp = fixed_point(&inst, &IndexSet::from_indices([0])).unwrap();
        let at = lyapunov_v(&fp.theta, &fp).unwrap();
        assert!((at - (0.5 - 0.5 * 0.5f64.ln())).abs() < 1e-15);
        // ∂V/∂θ_i = 1 − θ*_i/θ_i vanishes at θ*; check with central differences.
        let h = 1e-6;
        let plus = lyapunov_v(&[0.5 + h, 0.0], &fp).unwrap();
        let minus = lyapunov_v(&[0.5 - h, 0.0], &fp).unwrap();
        assert!(((plus - minus) / (2.0 * h)).abs() < 1e-8);
        assert!(plus > at && minus > at);
        assert!(matches!(
            lyapunov_v(&[0.0, 1.0], &fp),
            Err(DynamicsError::DomainError { index: 0, .. })
        ));
    }

    #[test]
    fn region_q_examples() {
        let inst = ProblemInstance::from_parts(
            DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 2.0]),
            DVector::from_vec(vec![1.0, 1.0]),
        )
        .unwrap();
        let min = inst.minimizer().unwrap();
        assert!(region_q_check(&inst, &DVector::zeros(2)));
        assert!(region_q_check(&inst, &min));
        assert!(!region_q_check(&inst, &(2.0 * &min)));
        assert!(!region_q_check(&inst, &DVector::from_vec(vec![-0.1, 0.0])));
    }
}
