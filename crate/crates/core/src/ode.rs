//! Dormand–Prince 5(4) with FSAL, PI step-size control and the standard 4th-order
//! continuous extension.

use thiserror::Error;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

// b − b̂
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Autonomous or time-dependent system `y' = f(t, y)`.
pub trait OdeSystem {
    fn dim(&self) -> usize;

    fn rhs(&self, t: f64, y: &[f64], dy: &mut [f64]);

    /// Upper bound on the next step from state `y`, e.g. a stability limit.
    fn max_step(&self, _t: f64, _y: &[f64]) -> f64 {
        f64::INFINITY
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError<E> {
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("exceeded {max_steps} steps before reaching t = {t_end} (stopped at {t})")]
    MaxSteps { max_steps: usize, t: f64, t_end: f64 },
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("step callback aborted: {0}")]
    Callback(E),
}

/// Returned by the step callback.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepControl {
    Continue,
    /// End the integration at the step just accepted.
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dopri5Options {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step; chosen automatically when `None`.
    pub h_init: Option<f64>,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for Dopri5Options {
    fn default() -> Self {
        Dopri5Options {
            rtol: 1e-9,
            atol: 1e-9,
            h_init: None,
            h_max: f64::INFINITY,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegratorStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    pub max_step: f64,
    pub min_step: f64,
}

/// Piecewise dense output over all accepted steps.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOutput {
    dim: usize,
    t_start: Vec<f64>,
    h: Vec<f64>,
    // Per step: 5 blocks of `dim` coefficients.
    coeffs: Vec<f64>,
}

impl DenseOutput {
    fn new(dim: usize) -> Self {
        DenseOutput {
            dim,
            t_start: Vec::new(),
            h: Vec::new(),
            coeffs: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_steps(&self) -> usize {
        self.h.len()
    }

    pub fn t_min(&self) -> f64 {
        self.t_start.first().copied().unwrap_or(0.0)
    }

    pub fn t_max(&self) -> f64 {
        match (self.t_start.last(), self.h.last()) {
            (Some(t), Some(h)) => t + h,
            _ => self.t_min(),
        }
    }

    /// `(t_start, t_end)` of accepted step `i`.
    pub fn step_bounds(&self, i: usize) -> (f64, f64) {
        (self.t_start[i], self.t_start[i] + self.h[i])
    }

    fn locate(&self, t: f64) -> usize {
        match self.t_start.partition_point(|&s| s <= t) {
            0 => 0,
            n => (n - 1).min(self.num_steps() - 1),
        }
    }

    /// Evaluates the interpolant at `t`, clamping into the integrated range.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        assert!(self.num_steps() > 0, "dense output is empty");
        let i = self.locate(t);
        self.eval_step_into(i, t, out);
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_step_into(&self, i: usize, t: f64, out: &mut [f64]) {
        let n = self.dim;
        let theta = ((t - self.t_start[i]) / self.h[i]).clamp(0.0, 1.0);
        let theta1 = 1.0 - theta;
        let base = i * 5 * n;
        let c = &self.coeffs[base..base + 5 * n];
        for j in 0..n {
            out[j] = c[j]
                + theta
                    * (c[n + j]
                        + theta1 * (c[2 * n + j] + theta * (c[3 * n + j] + theta1 * c[4 * n + j])));
        }
    }

    fn push(&mut self, t: f64, h: f64, block: &[f64]) {
        self.t_start.push(t);
        self.h.push(h);
        self.coeffs.extend_from_slice(block);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OdeSolution {
    pub dense: DenseOutput,
    pub y_end: Vec<f64>,
    pub t_end: f64,
    pub stats: IntegratorStats,
}

struct Stages {
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
    y_new: Vec<f64>,
    err: Vec<f64>,
}

impl Stages {
    fn new(n: usize) -> Self {
        Stages {
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
            y_new: vec![0.0; n],
            err: vec![0.0; n],
        }
    }
}

/// One Dormand–Prince step from `(t, y)` with `k[0] = f(t, y)` already set.
/// Leaves `y_new`, `err` and `k[6] = f(t + h, y_new)` in `st`.
fn dp_step<S: OdeSystem + ?Sized>(sys: &S, t: f64, y: &[f64], h: f64, st: &mut Stages) {
    let n = y.len();
    let Stages { k, tmp, y_new, err } = st;
    for i in 0..n {
        tmp[i] = y[i] + h * A21 * k[0][i];
    }
    sys.rhs(t + C2 * h, tmp, &mut k[1]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A31 * k[0][i] + A32 * k[1][i]);
    }
    sys.rhs(t + C3 * h, tmp, &mut k[2]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A41 * k[0][i] + A42 * k[1][i] + A43 * k[2][i]);
    }
    sys.rhs(t + C4 * h, tmp, &mut k[3]);
    for i in 0..n {
        tmp[i] = y[i] + h * (A51 * k[0][i] + A52 * k[1][i] + A53 * k[2][i] + A54 * k[3][i]);
    }
    sys.rhs(t + C5 * h, tmp, &mut k[4]);
    for i in 0..n {
        tmp[i] = y[i]
            + h * (A61 * k[0][i] + A62 * k[1][i] + A63 * k[2][i] + A64 * k[3][i] + A65 * k[4][i]);
    }
    sys.rhs(t + h, tmp, &mut k[5]);
    for i in 0..n {
        y_new[i] = y[i]
            + h * (A71 * k[0][i] + A73 * k[2][i] + A74 * k[3][i] + A75 * k[4][i] + A76 * k[5][i]);
    }
    sys.rhs(t + h, y_new, &mut k[6]);
    for i in 0..n {
        err[i] = h
            * (E1 * k[0][i] + E3 * k[2][i] + E4 * k[3][i] + E5 * k[4][i] + E6 * k[5][i] + E7 * k[6][i]);
    }
}

fn dense_block(y: &[f64], h: f64, st: &Stages, out: &mut Vec<f64>) {
    let n = y.len();
    out.clear();
    out.resize(5 * n, 0.0);
    let k = &st.k;
    for i in 0..n {
        let ydiff = st.y_new[i] - y[i];
        let bspl = h * k[0][i] - ydiff;
        out[i] = y[i];
        out[n + i] = ydiff;
        out[2 * n + i] = bspl;
        out[3 * n + i] = ydiff - h * k[6][i] - bspl;
        out[4 * n + i] = h
            * (D1 * k[0][i] + D3 * k[2][i] + D4 * k[3][i] + D5 * k[4][i] + D6 * k[5][i] + D7 * k[6][i]);
    }
}

fn error_norm(y: &[f64], y_new: &[f64], err: &[f64], opts: &Dopri5Options) -> f64 {
    let n = y.len().max(1);
    let sum: f64 = y
        .iter()
        .zip(y_new)
        .zip(err)
        .map(|((&a, &b), &e)| {
            let sc = opts.atol + opts.rtol * a.abs().max(b.abs());
            (e / sc).powi(2)
        })
        .sum();
    (sum / n as f64).sqrt()
}

fn initial_step<S: OdeSystem + ?Sized>(
    sys: &S,
    t: f64,
    y: &[f64],
    f0: &[f64],
    opts: &Dopri5Options,
    h_limit: f64,
) -> f64 {
    let n = y.len().max(1) as f64;
    let rms = |v: &mut dyn Iterator<Item = (f64, f64)>| -> f64 {
        (v.map(|(x, yv)| (x / (opts.atol + opts.rtol * yv.abs())).powi(2)).sum::<f64>() / n).sqrt()
    };
    let d0 = rms(&mut y.iter().map(|&v| (v, v)));
    let d1 = rms(&mut f0.iter().zip(y).map(|(&f, &v)| (f, v)));
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(h_limit);
    let y1: Vec<f64> = y.iter().zip(f0).map(|(&v, &f)| v + h0 * f).collect();
    let mut f1 = vec![0.0; y.len()];
    sys.rhs(t + h0, &y1, &mut f1);
    let d2 = rms(&mut f1.iter().zip(f0).zip(y).map(|((&a, &b), &v)| (a - b, v))) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(h_limit)
}

/// Adaptive integration from `t0` to `t_end`. `on_step(t_new, y_new)` runs after each
/// accepted step and may stop the integration early or abort it with an error.
pub fn integrate<S, E, F>(
    sys: &S,
    t0: f64,
    y0: &[f64],
    t_end: f64,
    opts: &Dopri5Options,
    mut on_step: F,
) -> Result<OdeSolution, OdeError<E>>
where
    S: OdeSystem + ?Sized,
    F: FnMut(f64, &[f64]) -> Result<StepControl, E>,
{
    let n = sys.dim();
    assert_eq!(y0.len(), n, "initial state has wrong dimension");
    assert!(t_end > t0, "t_end must exceed t0");

    const SAFETY: f64 = 0.9;
    const FAC_MIN: f64 = 0.2;
    const FAC_MAX: f64 = 10.0;
    const BETA: f64 = 0.04;
    let alpha = 0.2 - 0.75 * BETA;

    let mut stats = IntegratorStats {
        min_step: f64::INFINITY,
        ..Default::default()
    };
    let mut dense = DenseOutput::new(n);
    let mut st = Stages::new(n);
    let mut block = Vec::with_capacity(5 * n);
    let mut y = y0.to_vec();
    let mut t = t0;
    sys.rhs(t, &y, &mut st.k[0]);
    stats.rhs_evals += 1;

    let h_limit = |t: f64, y: &[f64]| opts.h_max.min(sys.max_step(t, y));
    let mut h = match opts.h_init {
        Some(h) => h.min(h_limit(t, &y)),
        None => {
            stats.rhs_evals += 1;
            initial_step(sys, t, &y, &st.k[0], opts, h_limit(t, &y))
        }
    };
    let mut err_old: f64 = 1e-4;
    let mut last_rejected = false;

    while t < t_end {
        if stats.accepted + stats.rejected >= opts.max_steps {
            return Err(OdeError::MaxSteps {
                max_steps: opts.max_steps,
                t,
                t_end,
            });
        }
        h = h.min(h_limit(t, &y));
        if h < 1e-14 * t.abs().max(1.0) {
            return Err(OdeError::StepUnderflow { t, h });
        }
        let last = t + h >= t_end;
        if last {
            h = t_end - t;
        }
        dp_step(sys, t, &y, h, &mut st);
        stats.rhs_evals += 6;
        let err = error_norm(&y, &st.y_new, &st.err, opts);
        if !err.is_finite() {
            stats.rejected += 1;
            h *= FAC_MIN;
            last_rejected = true;
            continue;
        }
        if err <= 1.0 {
            if !st.y_new.iter().all(|v| v.is_finite()) {
                return Err(OdeError::NonFinite { t: t + h });
            }
            dense_block(&y, h, &st, &mut block);
            dense.push(t, h, &block);
            stats.accepted += 1;
            stats.max_step = stats.max_step.max(h);
            stats.min_step = stats.min_step.min(h);
            t = if last { t_end } else { t + h };
            y.copy_from_slice(&st.y_new);
            let (k0, rest) = st.k.split_at_mut(1);
            k0[0].copy_from_slice(&rest[5]);
            if on_step(t, &y).map_err(OdeError::Callback)? == StepControl::Stop {
                break;
            }

            let err_c = err.max(1e-10);
            let mut fac = SAFETY * err_c.powf(-alpha) * err_old.powf(BETA);
            fac = fac.clamp(FAC_MIN, FAC_MAX);
            if last_rejected {
                fac = fac.min(1.0);
            }
            h *= fac;
            err_old = err.max(1e-4);
            last_rejected = false;
        } else {
            stats.rejected += 1;
            let fac = (SAFETY * err.powf(-alpha)).clamp(FAC_MIN, 1.0);
            h *= fac;
            last_rejected = true;
        }
    }
    if stats.accepted == 0 {
        stats.min_step = 0.0;
    }
    Ok(OdeSolution {
        dense,
        y_end: y,
        t_end: t,
        stats,
    })
}

/// Fixed-step Dormand–Prince (5th-order weights), used for convergence-order checks.
pub fn integrate_fixed<S: OdeSystem + ?Sized>(sys: &S, t0: f64, y0: &[f64], t_end: f64, steps: usize) -> Vec<f64> {
    let n = sys.dim();
    let mut st = Stages::new(n);
    let mut y = y0.to_vec();
    let h = (t_end - t0) / steps as f64;
    for step in 0..steps {
        let t = t0 + step as f64 * h;
        sys.rhs(t, &y, &mut st.k[0]);
        dp_step(sys, t, &y, h, &mut st);
        y.copy_from_slice(&st.y_new);
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    struct Decay;

    impl OdeSystem for Decay {
        fn dim(&self) -> usize {
            1
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = -y[0];
        }
    }

    struct Oscillator;

    impl OdeSystem for Oscillator {
        fn dim(&self) -> usize {
            2
        }
        fn rhs(&self, _t: f64, y: &[f64], dy: &mut [f64]) {
            dy[0] = y[1];
            dy[1] = -y[0];
        }
    }

    #[test]
    fn exponential_decay_adaptive() {
        let sol = integrate(&Decay, 0.0, &[1.0], 5.0, &Dopri5Options::default(), |_, _| {
            Ok::<_, Infallible>(StepControl::Continue)
        })
        .unwrap();
        assert!((sol.y_end[0] - (-5.0f64).exp()).abs() < 1e-9);
        assert_eq!(sol.t_end, 5.0);
        for &t in &[0.3, 1.7, 4.99] {
            let y = sol.dense.eval(t)[0];
            assert!((y - (-t).exp()).abs() < 1e-8, "dense output at {t}");
        }
    }

    #[test]
    fn oscillator_dense_output() {
        let opts = Dopri5Options {
            rtol: 1e-10,
            atol: 1e-10,
            ..Default::default()
        };
        let sol = integrate(&Oscillator, 0.0, &[0.0, 1.0], 10.0, &opts, |_, _| Ok::<_, Infallible>(StepControl::Continue)).unwrap();
        for i in 0..100 {
            let t = 0.1 * i as f64;
            let y = sol.dense.eval(t);
            assert!((y[0] - t.sin()).abs() < 1e-8);
            assert!((y[1] - t.cos()).abs() < 1e-8);
        }
    }

    #[test]
    fn fixed_step_is_fifth_order() {
        let exact = (-2.0f64).exp();
        let e1 = (integrate_fixed(&Decay, 0.0, &[1.0], 2.0, 10)[0] - exact).abs();
        let e2 = (integrate_fixed(&Decay, 0.0, &[1.0], 2.0, 20)[0] - exact).abs();
        let order = (e1 / e2).log2();
        assert!((order - 5.0).abs() < 0.3, "observed order {order}");
    }

    #[test]
    fn callback_can_abort() {
        let res = integrate(&Decay, 0.0, &[1.0], 5.0, &Dopri5Options::default(), |t, _| {
            if t > 1.0 {
                Err("stop")
            } else {
                Ok(StepControl::Continue)
            }
        });
        assert_eq!(res.unwrap_err(), OdeError::Callback("stop"));
    }

    #[test]
    fn callback_can_stop_early() {
        let sol = integrate(&Decay, 0.0, &[1.0], 5.0, &Dopri5Options::default(), |t, _| {
            Ok::<_, Infallible>(if t > 1.0 { StepControl::Stop } else { StepControl::Continue })
        })
        .unwrap();
        assert!(sol.t_end > 1.0 && sol.t_end < 5.0);
        assert_eq!(sol.dense.t_max(), sol.t_end);
    }

    #[test]
    fn step_cap_is_respected() {
        struct Capped;
        impl OdeSystem for Capped {
            fn dim(&self) -> usize {
                1
            }
            fn rhs(&self, _t: f64, _y: &[f64], dy: &mut [f64]) {
                dy[0] = 1.0;
            }
            fn max_step(&self, _t: f64, _y: &[f64]) -> f64 {
                0.125
            }
        }
        let sol = integrate(&Capped, 0.0, &[0.0], 1.0, &Dopri5Options::default(), |_, _| Ok::<_, Infallible>(StepControl::Continue)).unwrap();
        assert!(sol.stats.max_step <= 0.125 + 1e-15);
        assert!((sol.y_end[0] - 1.0).abs() < 1e-14);
    }
}
