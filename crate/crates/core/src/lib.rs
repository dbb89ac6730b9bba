//! Gradient flow of diagonal linear networks from vanishing initialization, and the
//! limiting saddle-to-saddle process predicted by a parametric linear complementarity
//! problem.
//!
//! With `M = XᵀX` and `r = Xᵀy`, the flow `dθ_i/dt = θ_i (r_i − (Mθ)_i)` started at
//! `θ_i(0) = C_i ε^{k_i}` is integrated in log-coordinates `w_i = log θ_i / log ε` on the
//! clock `s = t / log(1/ε)`. Independently, [`limit_process`] traces the solution of
//! `LCP(k − s r, M)` as `s` grows, giving the breakpoints, nested active sets, the
//! piecewise-constant limit `θ*^(I(s))` and the convergence time `s*`.
//!
//! Modules:
//! - [`problem`]: instances, assumption checks, generators, the loss;
//! - [`lcp`]: K-matrix LCP solvers (pivoting, enumeration, projected-gradient QP);
//! - [`fixed_points`]: the `2^d` fixed points of the flow;
//! - [`ode`]: Dormand–Prince 5(4) with dense output;
//! - [`dynamics`]: trajectories, running averages, hitting times, diagnostics;
//! - [`limit_process`]: the regularization path and its breakpoints;
//! - [`experiment`]: comparison, hitting-time and field experiments with CSV/JSON output.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dynamics;
pub mod experiment;
pub mod fixed_points;
pub mod index_set;
pub mod lcp;
pub mod limit_process;
pub mod linalg;
pub mod ode;
pub mod problem;

pub use dynamics::{simulate, SimulationOptions, Trajectory, TrajectoryPoint};
pub use fixed_points::{enumerate_fixed_points, fixed_point, FixedPoint};
pub use index_set::IndexSet;
pub use lcp::{solve_lcp, solve_lcp_bruteforce, solve_qp_nonneg, LcpSolution};
pub use limit_process::{compute_path, convergence_time_s_star, LimitPath};
pub use problem::{Initialization, ProblemInstance, RegressionData};
