//! Stage costs for the receding-horizon controller.
//!
//! Three families are provided:
//!
//! * `me` — a mixed-exponents pseudo-norm matched to the nonholonomic
//!   geometry: quartic in the coordinates the robot can only reach by
//!   maneuvering (`x1`, `theta`, and the velocities) and quadratic in the
//!   lateral offset `x2`, plus quartic input penalties.
//! * `ce` — the control-engineering default, a quadratic form in the state
//!   and input.
//! * `ds` — the data-scientific variant, a quadratic form over lifted
//!   observables with a lifted setpoint.
//!
//! Non-origin setpoints are handled by [`GoalFrame`], which rotates and
//! shifts states into goal coordinates before evaluation (`ds` instead bakes
//! the setpoint into its lifted target).

use crate::dictionary::{Dictionary, DictionaryError};
use crate::vehicle::normalize_angle;
use nalgebra::{DMatrix, DVector};
use std::fmt;

/// Errors raised by cost construction or evaluation.
#[derive(Debug)]
pub enum CostError {
    DimensionMismatch { expected: usize, got: usize },
    InvalidWeight { name: &'static str, value: f64 },
    Dictionary(DictionaryError),
}

impl fmt::Display for CostError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CostError::DimensionMismatch { expected, got } => {
                write!(f, "cost argument has dimension {got}, expected {expected}")
            }
            CostError::InvalidWeight { name, value } => {
                write!(f, "weight {name} must be positive, got {value}")
            }
            CostError::Dictionary(e) => write!(f, "dictionary error: {e}"),
        }
    }
}

impl std::error::Error for CostError {}

impl From<DictionaryError> for CostError {
    fn from(e: DictionaryError) -> Self {
        CostError::Dictionary(e)
    }
}

/// A setpoint pose. States are mapped into its coordinates (shift to the
/// goal, rotate by its heading) before a state-space cost is evaluated, so
/// driving the transformed state to zero drives the robot to the goal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GoalFrame {
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

impl GoalFrame {
    pub fn origin() -> Self {
        GoalFrame { x1: 0.0, x2: 0.0, theta: 0.0 }
    }

    pub fn is_origin(&self) -> bool {
        self.x1 == 0.0 && self.x2 == 0.0 && self.theta == 0.0
    }

    /// Expresses a state (pose or pose+velocities) in goal coordinates.
    /// Velocities are frame-independent and pass through unchanged.
    pub fn to_goal_coordinates(&self, state: &[f64]) -> Vec<f64> {
        if self.is_origin() {
            let mut out = state.to_vec();
            if out.len() > 2 {
                out[2] = normalize_angle(out[2]);
            }
            return out;
        }
        let (s, c) = self.theta.sin_cos();
        let dx1 = state[0] - self.x1;
        let dx2 = state[1] - self.x2;
        let mut out = state.to_vec();
        out[0] = c * dx1 + s * dx2;
        out[1] = -s * dx1 + c * dx2;
        if out.len() > 2 {
            out[2] = normalize_angle(state[2] - self.theta);
        }
        out
    }

    /// Jacobian of [`GoalFrame::to_goal_coordinates`]: a constant rotation of
    /// the position block, identity elsewhere.
    pub fn jacobian(&self, dim: usize) -> DMatrix<f64> {
        let mut j = DMatrix::identity(dim, dim);
        let (s, c) = self.theta.sin_cos();
        j[(0, 0)] = c;
        j[(0, 1)] = s;
        j[(1, 0)] = -s;
        j[(1, 1)] = c;
        j
    }
}

/// A stage cost. `MixedExponents` and `QuadraticState` act on plain states;
/// `QuadraticLifted` acts on dictionary-lifted vectors.
#[derive(Debug, Clone, PartialEq)]
pub enum StageCost {
    /// `q1*x1^4 + q2*x2^2 + q3*theta^4 (+ q4*v^4 + q5*omega^4) + r1*u1^4 + r2*u2^4`.
    MixedExponents { q: Vec<f64>, r: [f64; 2] },
    /// `x^T Q x + u^T R u` with symmetric positive-definite blocks.
    QuadraticState { q: DMatrix<f64>, r: DMatrix<f64> },
    /// `(psi - psi_d)^T Q_psi (psi - psi_d) + u^T R u`.
    QuadraticLifted { q_psi: DMatrix<f64>, r: DMatrix<f64>, psi_d: DVector<f64> },
}

impl StageCost {
    /// Short configuration name: `me`, `ce`, or `ds`.
    pub fn kind_name(&self) -> &'static str {
        match self {
            StageCost::MixedExponents { .. } => "me",
            StageCost::QuadraticState { .. } => "ce",
            StageCost::QuadraticLifted { .. } => "ds",
        }
    }

    /// Whether [`StageCost::evaluate`] expects a lifted vector instead of a
    /// plain state.
    pub fn takes_lift(&self) -> bool {
        matches!(self, StageCost::QuadraticLifted { .. })
    }

    /// Expected argument dimension (state arity, or dictionary size for
    /// lifted costs).
    pub fn argument_dim(&self) -> usize {
        match self {
            StageCost::MixedExponents { q, .. } => q.len(),
            StageCost::QuadraticState { q, .. } => q.nrows(),
            StageCost::QuadraticLifted { q_psi, .. } => q_psi.nrows(),
        }
    }

    /// Evaluates the stage cost.
    pub fn evaluate(&self, state_or_lift: &[f64], input: [f64; 2]) -> Result<f64, CostError> {
        let expected = self.argument_dim();
        if state_or_lift.len() != expected {
            return Err(CostError::DimensionMismatch { expected, got: state_or_lift.len() });
        }
        Ok(match self {
            StageCost::MixedExponents { q, r } => {
                let mut total = 0.0;
                for (i, (&w, &x)) in q.iter().zip(state_or_lift).enumerate() {
                    // The lateral offset (index 1) is quadratic, everything
                    // else quartic.
                    total += if i == 1 { w * x * x } else { w * x.powi(4) };
                }
                total + r[0] * input[0].powi(4) + r[1] * input[1].powi(4)
            }
            StageCost::QuadraticState { q, r } => {
                let x = DVector::from_column_slice(state_or_lift);
                let u = DVector::from_column_slice(&input);
                (x.transpose() * q * &x)[(0, 0)] + (u.transpose() * r * &u)[(0, 0)]
            }
            StageCost::QuadraticLifted { q_psi, r, psi_d } => {
                let dpsi = DVector::from_column_slice(state_or_lift) - psi_d;
                let u = DVector::from_column_slice(&input);
                (dpsi.transpose() * q_psi * &dpsi)[(0, 0)] + (u.transpose() * r * &u)[(0, 0)]
            }
        })
    }

    /// Analytic gradients with respect to the state (or lifted) argument and
    /// the input.
    pub fn gradient(
        &self,
        state_or_lift: &[f64],
        input: [f64; 2],
    ) -> Result<(DVector<f64>, [f64; 2]), CostError> {
        let expected = self.argument_dim();
        if state_or_lift.len() != expected {
            return Err(CostError::DimensionMismatch { expected, got: state_or_lift.len() });
        }
        Ok(match self {
            StageCost::MixedExponents { q, r } => {
                let grad_x = DVector::from_iterator(
                    expected,
                    q.iter().zip(state_or_lift).enumerate().map(|(i, (&w, &x))| {
                        if i == 1 {
                            2.0 * w * x
                        } else {
                            4.0 * w * x.powi(3)
                        }
                    }),
                );
                let grad_u =
                    [4.0 * r[0] * input[0].powi(3), 4.0 * r[1] * input[1].powi(3)];
                (grad_x, grad_u)
            }
            StageCost::QuadraticState { q, r } => {
                let x = DVector::from_column_slice(state_or_lift);
                let u = DVector::from_column_slice(&input);
                let gu = 2.0 * r * u;
                (2.0 * q * x, [gu[0], gu[1]])
            }
            StageCost::QuadraticLifted { q_psi, r, psi_d } => {
                let dpsi = DVector::from_column_slice(state_or_lift) - psi_d;
                let u = DVector::from_column_slice(&input);
                let gu = 2.0 * r * u;
                (2.0 * q_psi * dpsi, [gu[0], gu[1]])
            }
        })
    }
}

/// Default mixed-exponents cost: unit state weights except a weight of 10 on
/// the hard-to-control lateral coordinate (whose quadratic term must win
/// against the quartic maneuvering costs for millimetre-scale parking), and
/// input weights 0.01.
pub fn me_default(arity: usize) -> StageCost {
    let mut q = vec![1.0; arity];
    q[1] = 10.0;
    StageCost::MixedExponents { q, r: [0.01, 0.01] }
}

/// Default control-engineering quadratic cost: `Q = I`, `R = 0.01 I`.
pub fn ce_default(arity: usize) -> StageCost {
    StageCost::QuadraticState {
        q: DMatrix::identity(arity, arity),
        r: DMatrix::identity(2, 2) * 0.01,
    }
}

/// Default data-scientific lifted cost for a dictionary and goal state:
/// `Q_psi = I` with the constant observable's row and column zeroed (the
/// constant never deviates and must not contribute), `R = 0.01 I`, and the
/// lifted setpoint `psi_d = lift(goal)`.
pub fn ds_default(dict: &Dictionary, goal: &[f64]) -> Result<StageCost, CostError> {
    let m = dict.size();
    let mut q_psi = DMatrix::identity(m, m);
    q_psi[(0, 0)] = 0.0;
    let psi_d = dict.lift(goal)?;
    Ok(StageCost::QuadraticLifted { q_psi, r: DMatrix::identity(2, 2) * 0.01, psi_d })
}

/// Builds a mixed-exponents cost from explicit weights, validating
/// positivity.
pub fn me_with_weights(q: Vec<f64>, r: [f64; 2]) -> Result<StageCost, CostError> {
    for &w in &q {
        if w.is_nan() || w <= 0.0 {
            return Err(CostError::InvalidWeight { name: "q", value: w });
        }
    }
    for &w in &r {
        if w.is_nan() || w <= 0.0 {
            return Err(CostError::InvalidWeight { name: "r", value: w });
        }
    }
    Ok(StageCost::MixedExponents { q, r })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::{by_name, CoordRule, Dictionary, Factor, Observable};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixed_exponents_matches_hand_values() {
        let cost = StageCost::MixedExponents { q: vec![1.0, 1.0, 1.0], r: [1.0, 1.0] };
        let value = cost.evaluate(&[1.0, 1.0, 1.0], [1.0, 1.0]).unwrap();
        assert_eq!(value, 5.0);

        let cost = StageCost::MixedExponents { q: vec![1.0, 2.0, 1.0], r: [1.0, 1.0] };
        let value = cost.evaluate(&[0.5, -0.5, 0.0], [0.0, 0.0]).unwrap();
        assert!((value - 0.5625).abs() < 1e-15);
    }

    #[test]
    fn goal_with_zero_input_has_zero_cost() {
        let me = me_default(3);
        let ce = ce_default(3);
        assert_eq!(me.evaluate(&[0.0, 0.0, 0.0], [0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(ce.evaluate(&[0.0, 0.0, 0.0], [0.0, 0.0]).unwrap(), 0.0);

        let dict = by_name("D5t").unwrap();
        let ds = ds_default(&dict, &[0.0, 0.0, 0.0]).unwrap();
        let lifted = dict.lift(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(ds.evaluate(lifted.as_slice(), [0.0, 0.0]).unwrap(), 0.0);
    }

    #[test]
    fn costs_are_positive_away_from_the_goal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let me = me_default(5);
        let ce = ce_default(5);
        for _ in 0..200 {
            let state: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let input = [rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)];
            if state.iter().all(|&x| x == 0.0) && input == [0.0, 0.0] {
                continue;
            }
            assert!(me.evaluate(&state, input).unwrap() > 0.0);
            assert!(ce.evaluate(&state, input).unwrap() > 0.0);
        }
    }

    #[test]
    fn hand_checked_gradient_entries() {
        let me = me_with_weights(vec![1.0, 1.0, 1.0], [0.01, 0.01]).unwrap();
        let (gx, _) = me.gradient(&[0.3, 0.3, 0.0], [0.0, 0.0]).unwrap();
        assert!((gx[0] - 0.108).abs() < 1e-15, "quartic slope {}", gx[0]);
        assert!((gx[1] - 0.6).abs() < 1e-15, "quadratic slope {}", gx[1]);

        // The default upweights the lateral coordinate tenfold.
        let (gx, _) = me_default(3).gradient(&[0.3, 0.3, 0.0], [0.0, 0.0]).unwrap();
        assert!((gx[1] - 6.0).abs() < 1e-15, "weighted quadratic slope {}", gx[1]);

        let (gx, _) = me_default(3).gradient(&[0.0, 0.0, 0.0], [0.0, 0.0]).unwrap();
        assert_eq!(gx.as_slice(), &[0.0, 0.0, 0.0]);

        let ce = ce_default(3);
        let (gx, gu) = ce.gradient(&[0.1, -0.2, 0.4], [0.3, -0.1]).unwrap();
        assert_eq!(gx.as_slice(), &[0.2, -0.4, 0.8]);
        assert!((gu[0] - 0.006).abs() < 1e-18);
        assert!((gu[1] + 0.002).abs() < 1e-18);
    }

    /// Central finite differences with step 1e-6, compared with the guarded
    /// relative error |a - f| / max(1, |a|) so the check stays meaningful at
    /// the cost minimum where gradients vanish.
    fn check_gradients(cost: &StageCost, state: &[f64], input: [f64; 2]) {
        let h = 1e-6;
        let (gx, gu) = cost.gradient(state, input).unwrap();
        for i in 0..state.len() {
            let mut plus = state.to_vec();
            let mut minus = state.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let fd = (cost.evaluate(&plus, input).unwrap()
                - cost.evaluate(&minus, input).unwrap())
                / (2.0 * h);
            let rel = (gx[i] - fd).abs() / gx[i].abs().max(1.0);
            assert!(rel <= 1e-6, "state gradient {i}: analytic {} fd {fd}", gx[i]);
        }
        for j in 0..2 {
            let mut plus = input;
            let mut minus = input;
            plus[j] += h;
            minus[j] -= h;
            let fd = (cost.evaluate(state, plus).unwrap()
                - cost.evaluate(state, minus).unwrap())
                / (2.0 * h);
            let rel = (gu[j] - fd).abs() / gu[j].abs().max(1.0);
            assert!(rel <= 1e-6, "input gradient {j}: analytic {} fd {fd}", gu[j]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let dict = by_name("D13t").unwrap();
        let me = me_default(5);
        let ce = ce_default(5);
        let ds = ds_default(&dict, &[0.0; 5]).unwrap();
        for _ in 0..1000 {
            let state: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
            let input = [rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)];
            check_gradients(&me, &state, input);
            check_gradients(&ce, &state, input);
            let lifted = dict.lift(&state).unwrap();
            check_gradients(&ds, lifted.as_slice(), input);
        }
    }

    #[test]
    fn lifted_quadratic_equals_state_quadratic_on_coordinate_dictionaries() {
        // With observables {1, x1, x2, theta} and Q_psi embedding Q below a
        // zeroed constant row/column, the lifted cost collapses to the state
        // quadratic.
        let dict = Dictionary::new(
            "coords",
            3,
            vec![
                Observable::of(&[]),
                Observable::of(&[Factor::Pow { coord: 0, exp: 1 }]),
                Observable::of(&[Factor::Pow { coord: 1, exp: 1 }]),
                Observable::of(&[Factor::Pow { coord: 2, exp: 1 }]),
            ],
            vec![CoordRule::Index(1), CoordRule::Index(2), CoordRule::Index(3)],
        )
        .unwrap();
        let ce = ce_default(3);
        let ds = ds_default(&dict, &[0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let state: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let input = [rng.random_range(-0.5..0.5), rng.random_range(-2.0..2.0)];
            let lifted = dict.lift(&state).unwrap();
            let a = ce.evaluate(&state, input).unwrap();
            let b = ds.evaluate(lifted.as_slice(), input).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn goal_frame_transforms_and_differentiates() {
        let goal = GoalFrame { x1: 1.0, x2: -0.5, theta: std::f64::consts::FRAC_PI_2 };

        // The goal itself maps to the origin.
        let e = goal.to_goal_coordinates(&[1.0, -0.5, std::f64::consts::FRAC_PI_2, 0.3, -0.2]);
        assert!(e[0].abs() < 1e-15 && e[1].abs() < 1e-15 && e[2].abs() < 1e-15);
        // Velocities pass through.
        assert_eq!(&e[3..], &[0.3, -0.2]);

        // One meter ahead of the goal (along its heading, +x2 in world
        // coordinates) is (1, 0) in goal coordinates.
        let e = goal.to_goal_coordinates(&[1.0, 0.5, std::f64::consts::FRAC_PI_2]);
        assert!((e[0] - 1.0).abs() < 1e-15 && e[1].abs() < 1e-15);

        // Jacobian matches finite differences.
        let j = goal.jacobian(3);
        let base = [0.3, 0.7, 1.1];
        let h = 1e-7;
        for col in 0..3 {
            let mut plus = base;
            let mut minus = base;
            plus[col] += h;
            minus[col] -= h;
            let ep = goal.to_goal_coordinates(&plus);
            let em = goal.to_goal_coordinates(&minus);
            for row in 0..3 {
                let fd = (ep[row] - em[row]) / (2.0 * h);
                assert!((j[(row, col)] - fd).abs() < 1e-7, "J[{row},{col}]");
            }
        }
    }

    #[test]
    fn dimension_and_weight_validation() {
        let me = me_default(3);
        assert!(matches!(
            me.evaluate(&[0.0; 5], [0.0, 0.0]),
            Err(CostError::DimensionMismatch { expected: 3, got: 5 })
        ));
        assert!(matches!(
            me_with_weights(vec![1.0, -1.0, 1.0], [0.01, 0.01]),
            Err(CostError::InvalidWeight { .. })
        ));
        assert!(matches!(
            me_with_weights(vec![1.0; 3], [0.0, 0.01]),
            Err(CostError::InvalidWeight { .. })
        ));
    }
}
