//! Receding-horizon control over surrogate or nominal predictions.
//!
//! The optimal control problem is solved by single shooting: the decision
//! variables are the `H + 1` constant input parts, states are generated by
//! the selected prediction model, and the stage-cost sum runs over all
//! `H + 1` stages. Gradients are assembled by the adjoint recursion over the
//! per-step linearizations, and the solver is projected gradient descent
//! with Armijo backtracking, Nesterov-style momentum with periodic restarts,
//! and best-iterate tracking. Since every iterate is clamped to the input
//! box, feasibility holds by construction.
//!
//! All stage costs share one saddle structure with box-constrained
//! nonholonomic vehicles: the all-zero input sequence is a stationary point
//! whenever only the lateral coordinate deviates (lateral motion is second
//! order in the inputs). A converged solve that sits at zero input with a
//! significantly nonzero value is therefore re-solved from two deterministic
//! sideways-maneuver warm starts, and the best result is returned; whether a
//! cost actually escapes then depends on its own landscape, not on solver
//! luck.

use crate::cost::{CostError, GoalFrame, StageCost};
use crate::dictionary::DictionaryError;
use crate::edmd::KoopmanSurrogate;
use crate::vehicle::{
    dynamic_step_jacobians, dynamic_zoh_step, kinematic_step_jacobians, kinematic_zoh_step,
    AccelInput, FullState, InputBox, ModelKind, Pose, VelocityInput,
};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// How the controller predicts over the horizon.
#[derive(Clone, Copy)]
pub enum PredictionModel<'a> {
    /// Koopman surrogate, reprojecting to a state and lifting afresh at
    /// every step.
    SurrogateReprojected(&'a KoopmanSurrogate),
    /// Koopman surrogate propagated linearly in lifted space over the whole
    /// horizon; states are only read off where a cost or report needs them.
    SurrogateLifted(&'a KoopmanSurrogate),
    /// Exact ZOH kinematic model.
    NominalKinematic,
    /// Exact ZOH dynamic model.
    NominalDynamic,
}

impl PredictionModel<'_> {
    /// Dimension of the reported (physical) state.
    pub fn state_arity(&self) -> usize {
        match self {
            PredictionModel::SurrogateReprojected(s) | PredictionModel::SurrogateLifted(s) => {
                s.dictionary().arity()
            }
            PredictionModel::NominalKinematic => 3,
            PredictionModel::NominalDynamic => 5,
        }
    }

    /// Short label for configuration names and file headers.
    pub fn label(&self) -> &'static str {
        match self {
            PredictionModel::SurrogateReprojected(_) => "proj",
            PredictionModel::SurrogateLifted(_) => "noproj",
            PredictionModel::NominalKinematic | PredictionModel::NominalDynamic => "nominal",
        }
    }

    fn surrogate(&self) -> Option<&KoopmanSurrogate> {
        match self {
            PredictionModel::SurrogateReprojected(s) | PredictionModel::SurrogateLifted(s) => {
                Some(s)
            }
            _ => None,
        }
    }
}

/// Solver configuration.
#[derive(Debug, Clone, Copy)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the sup-norm of the projected gradient step.
    pub pg_tolerance: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking shrink factor.
    pub backtrack: f64,
    /// Momentum is restarted every this many iterations (0 disables
    /// momentum entirely).
    pub momentum_restart: usize,
    /// Stop early when the best value has not improved by a relative
    /// `stall_tolerance` for this many consecutive iterations (0 disables
    /// the guard). Such a stop does not count as convergence.
    pub stall_iterations: usize,
    pub stall_tolerance: f64,
    /// Re-solve from sideways probe warm starts when the optimum sits at
    /// zero input with a value above `probe_threshold`.
    pub saddle_probe: bool,
    pub probe_threshold: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iterations: 300,
            pg_tolerance: 1e-8,
            armijo_c: 1e-4,
            backtrack: 0.5,
            momentum_restart: 10,
            stall_iterations: 25,
            stall_tolerance: 1e-12,
            saddle_probe: true,
            probe_threshold: 1e-6,
        }
    }
}

/// A receding-horizon optimal control problem.
pub struct OcpSpec<'a> {
    /// Prediction horizon: inputs `u(0..=H)` are decided, states
    /// `x(0..=H)` are predicted, and all `H + 1` stage terms are summed.
    pub horizon: usize,
    /// Sampling interval; must match the surrogate's when one is used.
    pub dt: f64,
    pub input_box: InputBox,
    pub cost: StageCost,
    /// Setpoint; plain-state costs are evaluated in these coordinates.
    pub goal: GoalFrame,
    pub model: PredictionModel<'a>,
    pub options: SolverOptions,
}

impl OcpSpec<'_> {
    pub fn validate(&self) -> Result<(), OcpError> {
        if self.horizon < 1 {
            return Err(OcpError::BadSpec("horizon must be at least 1".to_string()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(OcpError::BadSpec(format!("invalid sampling interval {}", self.dt)));
        }
        if let Some(surrogate) = self.model.surrogate() {
            if (surrogate.dt() - self.dt).abs() > 1e-12 {
                return Err(OcpError::BadSpec(format!(
                    "sampling interval {} does not match the surrogate's {}",
                    self.dt,
                    surrogate.dt()
                )));
            }
        }
        let expected = if self.cost.takes_lift() {
            match self.model.surrogate() {
                Some(surrogate) => surrogate.dictionary().size(),
                None => {
                    return Err(OcpError::BadSpec(
                        "lifted stage costs require a surrogate prediction model".to_string(),
                    ))
                }
            }
        } else {
            self.model.state_arity()
        };
        if self.cost.argument_dim() != expected {
            return Err(OcpError::BadSpec(format!(
                "stage cost expects dimension {}, prediction model provides {}",
                self.cost.argument_dim(),
                expected
            )));
        }
        if !(self.input_box.lo[0] <= 0.0
            && self.input_box.lo[1] <= 0.0
            && self.input_box.hi[0] >= 0.0
            && self.input_box.hi[1] >= 0.0)
        {
            return Err(OcpError::BadSpec(
                "input box must contain the zero input (warm-start padding)".to_string(),
            ));
        }
        Ok(())
    }
}

/// Result of one OCP solve.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// Optimal inputs `u(0..=H)`, all inside the box.
    pub inputs: Vec<[f64; 2]>,
    /// Predicted states `x(0..=H)` under those inputs.
    pub states: Vec<Vec<f64>>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One closed-loop sample: the measured state, the applied input, and the
/// solver diagnostics of the solve performed at that state.
#[derive(Debug, Clone)]
pub struct ClosedLoopStep {
    pub t: f64,
    pub state: Vec<f64>,
    pub input: [f64; 2],
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A complete closed-loop run.
#[derive(Debug, Clone)]
pub struct ClosedLoopRun {
    pub dt: f64,
    pub steps: Vec<ClosedLoopStep>,
    /// Plant state after the final applied input (at `t = duration`).
    pub final_state: Vec<f64>,
}

/// Errors raised by the solver and the closed loop.
#[derive(Debug)]
pub enum OcpError {
    BadSpec(String),
    /// The rollout produced a non-finite value at the given prediction step.
    NonFiniteRollout { step: usize },
    /// Dictionary reprojection failed (e.g. both heading observables
    /// vanished) at the given prediction step.
    Reprojection { step: usize, source: DictionaryError },
    Cost(CostError),
    Io(std::io::Error),
}

impl fmt::Display for OcpError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OcpError::BadSpec(message) => write!(f, "invalid problem: {message}"),
            OcpError::NonFiniteRollout { step } => {
                write!(f, "prediction diverged to a non-finite value at step {step}")
            }
            OcpError::Reprojection { step, source } => {
                write!(f, "state recovery failed at step {step}: {source}")
            }
            OcpError::Cost(err) => write!(f, "stage-cost error: {err}"),
            OcpError::Io(err) => write!(f, "I/O error: {err}"),
        }
    }
}

impl std::error::Error for OcpError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            OcpError::Reprojection { source, .. } => Some(source),
            OcpError::Cost(err) => Some(err),
            OcpError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<CostError> for OcpError {
    fn from(err: CostError) -> Self {
        OcpError::Cost(err)
    }
}

impl From<std::io::Error> for OcpError {
    fn from(err: std::io::Error) -> Self {
        OcpError::Io(err)
    }
}

/// Per-solve cache of surrogate operators.
struct ModelContext<'a> {
    spec: &'a OcpSpec<'a>,
    /// `d K_u / d u_j`, constant in `u` (surrogate models only).
    directions: Option<[DMatrix<f64>; 2]>,
}

impl<'a> ModelContext<'a> {
    fn new(spec: &'a OcpSpec<'a>) -> Self {
        let directions = spec.model.surrogate().map(|s| s.input_direction_operators());
        ModelContext { spec, directions }
    }

    /// Initial internal state from a measured physical state.
    fn initial(&self, x_now: &[f64]) -> Result<DVector<f64>, OcpError> {
        match self.spec.model {
            PredictionModel::SurrogateLifted(s) => s
                .dictionary()
                .lift(x_now)
                .map_err(|source| OcpError::Reprojection { step: 0, source }),
            _ => Ok(DVector::from_column_slice(x_now)),
        }
    }

    /// One prediction step of the internal state.
    fn step(&self, s: &DVector<f64>, u: [f64; 2], step: usize) -> Result<DVector<f64>, OcpError> {
        let next = match self.spec.model {
            PredictionModel::SurrogateReprojected(sur) => {
                let lifted = sur
                    .dictionary()
                    .lift(s.as_slice())
                    .map_err(|source| OcpError::Reprojection { step, source })?;
                let advanced = sur.combine(u) * lifted;
                DVector::from_vec(
                    sur.dictionary()
                        .reproject(&advanced)
                        .map_err(|source| OcpError::Reprojection { step, source })?,
                )
            }
            PredictionModel::SurrogateLifted(sur) => sur.combine(u) * s,
            PredictionModel::NominalKinematic => {
                let next = kinematic_zoh_step(
                    Pose::from_slice(s.as_slice()),
                    VelocityInput::new(u[0], u[1]),
                    self.spec.dt,
                );
                DVector::from_column_slice(&next.to_array())
            }
            PredictionModel::NominalDynamic => {
                let next = dynamic_zoh_step(
                    FullState::from_slice(s.as_slice()),
                    AccelInput::new(u[0], u[1]),
                    self.spec.dt,
                );
                DVector::from_column_slice(&next.to_array())
            }
        };
        if !next.iter().all(|v| v.is_finite()) {
            return Err(OcpError::NonFiniteRollout { step });
        }
        Ok(next)
    }

    /// One prediction step with its Jacobians `A = d next / d s` and
    /// `B = d next / d u`.
    fn step_with_jacobians(
        &self,
        s: &DVector<f64>,
        u: [f64; 2],
        step: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>), OcpError> {
        match self.spec.model {
            PredictionModel::SurrogateReprojected(sur) => {
                let dict = sur.dictionary();
                let lifted = dict
                    .lift(s.as_slice())
                    .map_err(|source| OcpError::Reprojection { step, source })?;
                let j_lift = dict
                    .lift_jacobian(s.as_slice())
                    .map_err(|source| OcpError::Reprojection { step, source })?;
                let operator = sur.combine(u);
                let advanced = &operator * &lifted;
                if !advanced.iter().all(|v| v.is_finite()) {
                    return Err(OcpError::NonFiniteRollout { step });
                }
                let next = DVector::from_vec(
                    dict.reproject(&advanced)
                        .map_err(|source| OcpError::Reprojection { step, source })?,
                );
                let j_proj = dict
                    .reprojection_jacobian(&advanced)
                    .map_err(|source| OcpError::Reprojection { step, source })?;
                let a = &j_proj * (&operator * &j_lift);
                let dirs = self.directions.as_ref().expect("surrogate model");
                let mut b = DMatrix::zeros(next.len(), 2);
                for (j, dir) in dirs.iter().enumerate() {
                    b.set_column(j, &(&j_proj * (dir * &lifted)));
                }
                Ok((next, a, b))
            }
            PredictionModel::SurrogateLifted(sur) => {
                let operator = sur.combine(u);
                let next = &operator * s;
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(OcpError::NonFiniteRollout { step });
                }
                let dirs = self.directions.as_ref().expect("surrogate model");
                let mut b = DMatrix::zeros(next.len(), 2);
                for (j, dir) in dirs.iter().enumerate() {
                    b.set_column(j, &(dir * s));
                }
                Ok((next, operator, b))
            }
            PredictionModel::NominalKinematic => {
                let (next, a, b) = kinematic_step_jacobians(
                    Pose::from_slice(s.as_slice()),
                    VelocityInput::new(u[0], u[1]),
                    self.spec.dt,
                );
                let next = DVector::from_column_slice(&next.to_array());
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(OcpError::NonFiniteRollout { step });
                }
                Ok((
                    next,
                    DMatrix::from_iterator(3, 3, a.iter().copied()),
                    DMatrix::from_iterator(3, 2, b.iter().copied()),
                ))
            }
            PredictionModel::NominalDynamic => {
                let (next, a, b) = dynamic_step_jacobians(
                    FullState::from_slice(s.as_slice()),
                    AccelInput::new(u[0], u[1]),
                    self.spec.dt,
                );
                let next = DVector::from_column_slice(&next.to_array());
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(OcpError::NonFiniteRollout { step });
                }
                Ok((next, DMatrix::from_iterator(5, 5, a.iter().copied()), {
                    DMatrix::from_iterator(5, 2, b.iter().copied())
                }))
            }
        }
    }

    /// Physical state read off the internal state.
    fn report(&self, s: &DVector<f64>, step: usize) -> Result<Vec<f64>, OcpError> {
        match self.spec.model {
            PredictionModel::SurrogateLifted(sur) => sur
                .dictionary()
                .reproject(s)
                .map_err(|source| OcpError::Reprojection { step, source }),
            _ => Ok(s.as_slice().to_vec()),
        }
    }

    /// Stage cost at an internal state.
    fn stage_value(&self, s: &DVector<f64>, u: [f64; 2], step: usize) -> Result<f64, OcpError> {
        let spec = self.spec;
        let value = if spec.cost.takes_lift() {
            match spec.model {
                PredictionModel::SurrogateLifted(_) => spec.cost.evaluate(s.as_slice(), u)?,
                PredictionModel::SurrogateReprojected(sur) => {
                    let lifted = sur
                        .dictionary()
                        .lift(s.as_slice())
                        .map_err(|source| OcpError::Reprojection { step, source })?;
                    spec.cost.evaluate(lifted.as_slice(), u)?
                }
                _ => unreachable!("validated: lifted cost implies a surrogate"),
            }
        } else {
            let x = self.report(s, step)?;
            spec.cost.evaluate(&spec.goal.to_goal_coordinates(&x), u)?
        };
        if !value.is_finite() {
            return Err(OcpError::NonFiniteRollout { step });
        }
        Ok(value)
    }

    /// Stage cost plus its gradients with respect to the internal state and
    /// the input.
    fn stage_gradient(
        &self,
        s: &DVector<f64>,
        u: [f64; 2],
        step: usize,
    ) -> Result<(f64, DVector<f64>, [f64; 2]), OcpError> {
        let spec = self.spec;
        let checked = |value: f64| {
            if value.is_finite() {
                Ok(value)
            } else {
                Err(OcpError::NonFiniteRollout { step })
            }
        };
        if spec.cost.takes_lift() {
            match spec.model {
                PredictionModel::SurrogateLifted(_) => {
                    let value = checked(spec.cost.evaluate(s.as_slice(), u)?)?;
                    let (g_s, g_u) = spec.cost.gradient(s.as_slice(), u)?;
                    Ok((value, g_s, g_u))
                }
                PredictionModel::SurrogateReprojected(sur) => {
                    let dict = sur.dictionary();
                    let lifted = dict
                        .lift(s.as_slice())
                        .map_err(|source| OcpError::Reprojection { step, source })?;
                    let j_lift = dict
                        .lift_jacobian(s.as_slice())
                        .map_err(|source| OcpError::Reprojection { step, source })?;
                    let value = checked(spec.cost.evaluate(lifted.as_slice(), u)?)?;
                    let (g_psi, g_u) = spec.cost.gradient(lifted.as_slice(), u)?;
                    Ok((value, j_lift.transpose() * g_psi, g_u))
                }
                _ => unreachable!("validated: lifted cost implies a surrogate"),
            }
        } else {
            let x = self.report(s, step)?;
            let shifted = spec.goal.to_goal_coordinates(&x);
            let value = checked(spec.cost.evaluate(&shifted, u)?)?;
            let (g_x, g_u) = spec.cost.gradient(&shifted, u)?;
            let g_state = spec.goal.jacobian(x.len()).transpose() * g_x;
            match spec.model {
                PredictionModel::SurrogateLifted(sur) => {
                    let j_proj = sur
                        .dictionary()
                        .reprojection_jacobian(s)
                        .map_err(|source| OcpError::Reprojection { step, source })?;
                    Ok((value, j_proj.transpose() * g_state, g_u))
                }
                _ => Ok((value, g_state, g_u)),
            }
        }
    }
}

/// Objective value of an input sequence from a given state, together with
/// the predicted physical states (useful for reports and dominance checks).
pub fn evaluate_inputs(
    spec: &OcpSpec<'_>,
    x_now: &[f64],
    inputs: &[[f64; 2]],
) -> Result<(f64, Vec<Vec<f64>>), OcpError> {
    spec.validate()?;
    check_initial(spec, x_now)?;
    let context = ModelContext::new(spec);
    let mut s = context.initial(x_now)?;
    let mut value = 0.0;
    let mut states = Vec::with_capacity(inputs.len());
    states.push(context.report(&s, 0)?);
    for (k, &u) in inputs.iter().enumerate() {
        value += context.stage_value(&s, u, k)?;
        if k + 1 < inputs.len() {
            s = context.step(&s, u, k)?;
            states.push(context.report(&s, k + 1)?);
        }
    }
    Ok((value, states))
}

fn check_initial(spec: &OcpSpec<'_>, x_now: &[f64]) -> Result<(), OcpError> {
    let arity = spec.model.state_arity();
    if x_now.len() != arity || !x_now.iter().all(|v| v.is_finite()) {
        return Err(OcpError::BadSpec(format!(
            "initial state must be {arity} finite components, got {x_now:?}"
        )));
    }
    Ok(())
}

/// Objective value only (internal fast path for the line search).
fn objective(context: &ModelContext<'_>, s0: &DVector<f64>, inputs: &[[f64; 2]]) -> Result<f64, OcpError> {
    let mut s = s0.clone();
    let mut value = 0.0;
    for (k, &u) in inputs.iter().enumerate() {
        value += context.stage_value(&s, u, k)?;
        if k + 1 < inputs.len() {
            s = context.step(&s, u, k)?;
        }
    }
    Ok(value)
}

/// Objective and its gradient with respect to every input, by the adjoint
/// recursion over the stored per-step linearizations.
fn objective_gradient(
    context: &ModelContext<'_>,
    s0: &DVector<f64>,
    inputs: &[[f64; 2]],
) -> Result<(f64, Vec<[f64; 2]>), OcpError> {
    let n = inputs.len();
    let mut value = 0.0;
    let mut stage_s: Vec<DVector<f64>> = Vec::with_capacity(n);
    let mut stage_u: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut a_mats: Vec<DMatrix<f64>> = Vec::with_capacity(n.saturating_sub(1));
    let mut b_mats: Vec<DMatrix<f64>> = Vec::with_capacity(n.saturating_sub(1));

    let mut s = s0.clone();
    for (k, &u) in inputs.iter().enumerate() {
        let (stage_value, g_s, g_u) = context.stage_gradient(&s, u, k)?;
        value += stage_value;
        stage_s.push(g_s);
        stage_u.push(g_u);
        if k + 1 < n {
            let (next, a, b) = context.step_with_jacobians(&s, u, k)?;
            a_mats.push(a);
            b_mats.push(b);
            s = next;
        }
    }

    let mut gradient = vec![[0.0; 2]; n];
    gradient[n - 1] = stage_u[n - 1];
    let mut adjoint = stage_s[n - 1].clone();
    for k in (0..n - 1).rev() {
        let coupling = b_mats[k].transpose() * &adjoint;
        gradient[k] = [stage_u[k][0] + coupling[0], stage_u[k][1] + coupling[1]];
        adjoint = &stage_s[k] + a_mats[k].transpose() * adjoint;
    }
    Ok((value, gradient))
}

fn clamp_sequence(inputs: &mut [[f64; 2]], bounds: &InputBox) {
    for u in inputs {
        *u = bounds.clamp(*u);
    }
}

fn sup_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x[0] - y[0]).abs().max((x[1] - y[1]).abs()))
        .fold(0.0, f64::max)
}

/// Inner projected-gradient loop; returns the best iterate found.
fn solve_from(
    context: &ModelContext<'_>,
    s0: &DVector<f64>,
    start: Vec<[f64; 2]>,
) -> Result<(Vec<[f64; 2]>, f64, usize, bool), OcpError> {
    let options = &context.spec.options;
    let bounds = &context.spec.input_box;

    let mut current = start;
    clamp_sequence(&mut current, bounds);
    let mut previous = current.clone();
    let mut extrapolated = current.clone();

    let mut best_value = f64::INFINITY;
    let mut best = current.clone();
    let mut last_value = f64::INFINITY;
    let mut alpha: f64 = 1.0;
    let mut theta: f64 = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    let mut stalled_for = 0usize;
    let mut previous_point: Option<(Vec<[f64; 2]>, Vec<[f64; 2]>)> = None;

    for iter in 1..=options.max_iterations {
        iterations = iter;
        let best_before = best_value;
        let (value_y, gradient) = objective_gradient(context, s0, &extrapolated)?;
        if value_y < best_value {
            best_value = value_y;
            best = extrapolated.clone();
        }
        // Momentum overshoot guard: when the extrapolation raised the value,
        // drop the accumulated momentum before the next extrapolation.
        if value_y > last_value {
            theta = 1.0;
        }

        // Projected-gradient convergence test at the extrapolated point
        // (momentum vanishes at convergence, so this coincides with the
        // test at the iterate itself).
        let mut probe: Vec<[f64; 2]> = extrapolated
            .iter()
            .zip(&gradient)
            .map(|(u, g)| [u[0] - g[0], u[1] - g[1]])
            .collect();
        clamp_sequence(&mut probe, bounds);
        if sup_distance(&probe, &extrapolated) <= options.pg_tolerance {
            converged = true;
            break;
        }

        // Backtracking line search from the extrapolated point. The trial
        // step is the spectral (Barzilai-Borwein) estimate where available
        // and sane; it adapts far faster than pure doubling on the flat
        // quartic valleys of the mixed-exponents cost.
        alpha = (alpha * 2.0).min(1e8);
        if let Some((prev_y, prev_g)) = &previous_point {
            let mut uu = 0.0;
            let mut ug = 0.0;
            for ((y, py), (g, pg)) in
                extrapolated.iter().zip(prev_y).zip(gradient.iter().zip(prev_g))
            {
                for j in 0..2 {
                    let du = y[j] - py[j];
                    let dg = g[j] - pg[j];
                    uu += du * du;
                    ug += du * dg;
                }
            }
            if ug > 0.0 && uu > 0.0 {
                alpha = (uu / ug).clamp(1e-10, 1e8);
            }
        }
        previous_point = Some((extrapolated.clone(), gradient.clone()));
        let mut candidate;
        loop {
            candidate = extrapolated
                .iter()
                .zip(&gradient)
                .map(|(u, g)| [u[0] - alpha * g[0], u[1] - alpha * g[1]])
                .collect::<Vec<[f64; 2]>>();
            clamp_sequence(&mut candidate, bounds);
            let value_c = objective(context, s0, &candidate)?;
            let inner: f64 = candidate
                .iter()
                .zip(&extrapolated)
                .zip(&gradient)
                .map(|((c, y), g)| g[0] * (c[0] - y[0]) + g[1] * (c[1] - y[1]))
                .sum();
            if value_c <= value_y + options.armijo_c * inner {
                if value_c < best_value {
                    best_value = value_c;
                    best = candidate.clone();
                }
                last_value = value_c;
                break;
            }
            alpha *= options.backtrack;
            if alpha < 1e-18 {
                // No descent direction at working precision.
                candidate = extrapolated.clone();
                break;
            }
        }
        if alpha < 1e-18 {
            converged = true;
            break;
        }

        // Nesterov momentum with periodic restart.
        let beta = if options.momentum_restart == 0 {
            0.0
        } else if iter % options.momentum_restart == 0 {
            theta = 1.0;
            0.0
        } else {
            let theta_next = 0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt());
            let beta = (theta - 1.0) / theta_next;
            theta = theta_next;
            beta
        };
        extrapolated = candidate
            .iter()
            .zip(&previous)
            .map(|(c, p)| [c[0] + beta * (c[0] - p[0]), c[1] + beta * (c[1] - p[1])])
            .collect();
        clamp_sequence(&mut extrapolated, bounds);
        previous = candidate.clone();
        current = candidate;

        if best_value < best_before - options.stall_tolerance * (1.0 + best_before.abs()) {
            stalled_for = 0;
        } else {
            stalled_for += 1;
            if options.stall_iterations > 0 && stalled_for >= options.stall_iterations {
                break;
            }
        }
    }

    if !converged {
        // Make sure the last iterate is accounted for.
        let value = objective(context, s0, &current)?;
        if value < best_value {
            best_value = value;
            best = current;
        }
    }
    Ok((best, best_value, iterations, converged))
}

/// Deterministic sideways-maneuver warm starts used to probe the zero-input
/// saddle: drive at quarter throttle while turning one way for the first
/// half of the horizon and the other way for the second half (and the
/// mirrored maneuver).
fn probe_starts(bounds: &InputBox, n: usize) -> [Vec<[f64; 2]>; 2] {
    let forward = 0.25 * bounds.hi[0];
    let turn = 0.25 * bounds.hi[1];
    let make = |sign: f64| {
        (0..n)
            .map(|k| {
                let swing = if 2 * k < n { turn } else { -turn };
                [sign * forward, sign * swing]
            })
            .collect::<Vec<[f64; 2]>>()
    };
    [make(1.0), make(-1.0)]
}

/// Solves the OCP from the measured state, optionally warm-started.
pub fn solve_ocp(
    spec: &OcpSpec<'_>,
    x_now: &[f64],
    warm_start: Option<&[[f64; 2]]>,
) -> Result<OcpSolution, OcpError> {
    spec.validate()?;
    check_initial(spec, x_now)?;
    let n = spec.horizon + 1;
    if let Some(warm) = warm_start {
        if warm.len() != n {
            return Err(OcpError::BadSpec(format!(
                "warm start must have {} entries, got {}",
                n,
                warm.len()
            )));
        }
    }
    let context = ModelContext::new(spec);
    let s0 = context.initial(x_now)?;

    let start = warm_start.map(<[_]>::to_vec).unwrap_or_else(|| vec![[0.0; 2]; n]);
    let (mut best, mut best_value, mut iterations, mut converged) =
        solve_from(&context, &s0, start)?;

    // The zero-input sequence is a stationary point of every stage cost
    // here whenever only the hard-to-control direction deviates; when the
    // solve lands there with a clearly nonzero value, try the sideways
    // maneuvers and keep the best outcome.
    let stuck_at_zero = best.iter().all(|u| u[0].abs().max(u[1].abs()) <= 1e-6);
    if spec.options.saddle_probe && stuck_at_zero && best_value >= spec.options.probe_threshold {
        for start in probe_starts(&spec.input_box, n) {
            let (probe_best, probe_value, probe_iters, probe_converged) =
                solve_from(&context, &s0, start)?;
            iterations += probe_iters;
            if probe_value < best_value {
                best = probe_best;
                best_value = probe_value;
                converged = probe_converged;
            }
        }
    }

    // Final reported rollout under the returned inputs.
    let (value, states) = {
        let mut s = s0.clone();
        let mut states = Vec::with_capacity(n);
        states.push(context.report(&s, 0)?);
        let mut total = 0.0;
        for (k, &u) in best.iter().enumerate() {
            total += context.stage_value(&s, u, k)?;
            if k + 1 < n {
                s = context.step(&s, u, k)?;
                states.push(context.report(&s, k + 1)?);
            }
        }
        (total, states)
    };
    debug_assert!((value - best_value).abs() <= 1e-9 * (1.0 + best_value.abs()));

    Ok(OcpSolution { inputs: best, states, value, iterations, converged })
}

/// Runs the receding-horizon loop against the exact ZOH plant: solve, apply
/// the first input for one interval, shift the solution by one step (padding
/// with the zero input) as the next warm start, repeat.
pub fn closed_loop(
    spec: &OcpSpec<'_>,
    plant: ModelKind,
    x0: &[f64],
    duration: f64,
) -> Result<ClosedLoopRun, OcpError> {
    spec.validate()?;
    if plant.arity() != spec.model.state_arity() {
        return Err(OcpError::BadSpec(format!(
            "plant ({}) and prediction model disagree on the state dimension",
            plant.name()
        )));
    }
    check_initial(spec, x0)?;
    let steps_f = duration / spec.dt;
    let steps = steps_f.round();
    if !(steps >= 1.0) || (steps_f - steps).abs() > 1e-9 {
        return Err(OcpError::BadSpec(format!(
            "duration {duration} s is not a positive multiple of the sampling interval"
        )));
    }
    let steps = steps as usize;

    let mut x = x0.to_vec();
    let mut warm: Option<Vec<[f64; 2]>> = None;
    let mut run =
        ClosedLoopRun { dt: spec.dt, steps: Vec::with_capacity(steps), final_state: Vec::new() };

    for k in 0..steps {
        let solution = solve_ocp(spec, &x, warm.as_deref())?;
        let input = solution.inputs[0];
        run.steps.push(ClosedLoopStep {
            t: k as f64 * spec.dt,
            state: x.clone(),
            input,
            value: solution.value,
            iterations: solution.iterations,
            converged: solution.converged,
        });
        x = match plant {
            ModelKind::Kinematic => kinematic_zoh_step(
                Pose::from_slice(&x),
                VelocityInput::new(input[0], input[1]),
                spec.dt,
            )
            .to_array()
            .to_vec(),
            ModelKind::Dynamic => dynamic_zoh_step(
                FullState::from_slice(&x),
                AccelInput::new(input[0], input[1]),
                spec.dt,
            )
            .to_array()
            .to_vec(),
        };
        let mut shifted = solution.inputs[1..].to_vec();
        shifted.push([0.0; 2]);
        warm = Some(shifted);
    }
    run.final_state = x;
    Ok(run)
}

/// Writes a closed-loop run as CSV: provenance header lines, then
/// `t,x1,x2,theta[,v,omega],u1,u2,value,iters,converged` rows, and a final
/// row holding only the terminal time and state.
pub fn write_trajectory_csv(
    run: &ClosedLoopRun,
    header: &[(String, String)],
    path: &Path,
) -> Result<(), OcpError> {
    let arity = run.steps.first().map_or(3, |s| s.state.len());
    let mut out = String::new();
    for (key, value) in header {
        out.push_str(&format!("# {key}={value}\n"));
    }
    let state_cols = if arity == 5 { "x1,x2,theta,v,omega" } else { "x1,x2,theta" };
    out.push_str(&format!("t,{state_cols},u1,u2,value,iters,converged\n"));
    for step in &run.steps {
        let state: Vec<String> = step.state.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&format!(
            "{:.17e},{},{:.17e},{:.17e},{:.17e},{},{}\n",
            step.t,
            state.join(","),
            step.input[0],
            step.input[1],
            step.value,
            step.iterations,
            step.converged as u8
        ));
    }
    if let Some(last) = run.steps.last() {
        let state: Vec<String> = run.final_state.iter().map(|v| format!("{v:.17e}")).collect();
        out.push_str(&format!("{:.17e},{},,,,,\n", last.t + run.dt, state.join(",")));
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}
