//! Observable dictionaries for lifting robot states.
//!
//! A dictionary maps a state `x` (pose, or pose plus body velocities) to a
//! lifted vector `psi(x)` of observable values. Surrogate models propagate
//! lifted vectors linearly, so the choice of observables decides how much of
//! the true nonlinearity the surrogate can represent.
//!
//! Every dictionary also carries a *reprojection* rule that recovers the
//! state from a lifted vector: each state coordinate is either read off a
//! single observable (coordinate projection) or, for the heading, recovered
//! as `atan2(sin-observable, cos-observable)`, which additionally snaps the
//! trigonometric pair back onto the unit circle.
//!
//! Observables are products of simple factors (coordinate powers and
//! harmonics of a coordinate), which keeps the registry declarative and lets
//! callers assemble custom dictionaries from the same parts.

use nalgebra::{DMatrix, DVector};
use std::fmt;

/// Magnitude below which the trigonometric pair of an atan2 reprojection is
/// considered degenerate (no heading can be recovered).
pub const DEGENERATE_EPS: f64 = 1e-12;

/// One factor of an observable product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Factor {
    /// `state[coord]^exp`
    Pow { coord: usize, exp: u32 },
    /// `cos(harmonic * state[coord])`
    Cos { coord: usize, harmonic: u32 },
    /// `sin(harmonic * state[coord])`
    Sin { coord: usize, harmonic: u32 },
}

impl Factor {
    fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Factor::Pow { coord, exp } => x[coord].powi(exp as i32),
            Factor::Cos { coord, harmonic } => (harmonic as f64 * x[coord]).cos(),
            Factor::Sin { coord, harmonic } => (harmonic as f64 * x[coord]).sin(),
        }
    }

    fn coord(&self) -> usize {
        match *self {
            Factor::Pow { coord, .. } | Factor::Cos { coord, .. } | Factor::Sin { coord, .. } => {
                coord
            }
        }
    }

    fn derivative(&self, x: &[f64]) -> f64 {
        match *self {
            Factor::Pow { coord, exp } => exp as f64 * x[coord].powi(exp as i32 - 1),
            Factor::Cos { coord, harmonic } => {
                let m = harmonic as f64;
                -m * (m * x[coord]).sin()
            }
            Factor::Sin { coord, harmonic } => {
                let m = harmonic as f64;
                m * (m * x[coord]).cos()
            }
        }
    }
}

/// A scalar observable: the product of its factors (the empty product is the
/// constant 1).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Observable {
    pub factors: Vec<Factor>,
}

impl Observable {
    pub fn constant() -> Self {
        Observable { factors: Vec::new() }
    }

    pub fn of(factors: &[Factor]) -> Self {
        Observable { factors: factors.to_vec() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.factors.iter().map(|f| f.eval(x)).product()
    }

    /// Accumulates the gradient of the observable into `grad` (length: state
    /// arity). Product rule over the factors; factors sharing a coordinate
    /// contribute one term each.
    fn accumulate_gradient(&self, x: &[f64], grad: &mut [f64]) {
        for g in grad.iter_mut() {
            *g = 0.0;
        }
        for (i, f) in self.factors.iter().enumerate() {
            let mut others = 1.0;
            for (j, other) in self.factors.iter().enumerate() {
                if i != j {
                    others *= other.eval(x);
                }
            }
            grad[f.coord()] += f.derivative(x) * others;
        }
    }
}

/// How one state coordinate is recovered from a lifted vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CoordRule {
    /// The coordinate equals the observable at this index.
    Index(usize),
    /// The coordinate is `atan2(lifted[sin], lifted[cos])`.
    Atan2 { sin: usize, cos: usize },
}

/// Errors raised by lifting, reprojection, and dictionary validation.
#[derive(Debug, Clone, PartialEq)]
pub enum DictionaryError {
    /// A state of the wrong length was passed to the dictionary.
    ArityMismatch { expected: usize, got: usize },
    /// Both observables of an atan2 rule are numerically zero, so no heading
    /// can be recovered.
    DegenerateLift { sin: usize, cos: usize },
    /// A reprojection rule points past the end of the lifted vector, or a
    /// factor references a coordinate outside the state.
    IndexOutOfRange { index: usize, size: usize },
    /// Round-trip validation found a state the reprojection does not recover.
    RoundTripFailure { coord: usize, error: f64 },
}

impl fmt::Display for DictionaryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DictionaryError::ArityMismatch { expected, got } => {
                write!(f, "dictionary expects states of length {expected}, got {got}")
            }
            DictionaryError::DegenerateLift { sin, cos } => write!(
                f,
                "degenerate lifted vector: observables {sin} (sin) and {cos} (cos) are both ~0"
            ),
            DictionaryError::IndexOutOfRange { index, size } => {
                write!(f, "index {index} out of range for size {size}")
            }
            DictionaryError::RoundTripFailure { coord, error } => {
                write!(f, "reprojection misses coordinate {coord} by {error:e}")
            }
        }
    }
}

impl std::error::Error for DictionaryError {}

/// An observable dictionary together with its reprojection rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    name: String,
    arity: usize,
    observables: Vec<Observable>,
    reprojection: Vec<CoordRule>,
}

impl Dictionary {
    /// Builds a dictionary after checking that all indices are consistent.
    pub fn new(
        name: &str,
        arity: usize,
        observables: Vec<Observable>,
        reprojection: Vec<CoordRule>,
    ) -> Result<Self, DictionaryError> {
        let size = observables.len();
        for obs in &observables {
            for factor in &obs.factors {
                if factor.coord() >= arity {
                    return Err(DictionaryError::IndexOutOfRange {
                        index: factor.coord(),
                        size: arity,
                    });
                }
            }
        }
        if reprojection.len() != arity {
            return Err(DictionaryError::ArityMismatch {
                expected: arity,
                got: reprojection.len(),
            });
        }
        for rule in &reprojection {
            let indices = match *rule {
                CoordRule::Index(i) => [i, i],
                CoordRule::Atan2 { sin, cos } => [sin, cos],
            };
            for i in indices {
                if i >= size {
                    return Err(DictionaryError::IndexOutOfRange { index: i, size });
                }
            }
        }
        Ok(Dictionary { name: name.to_string(), arity, observables, reprojection })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Number of state coordinates the dictionary lifts (3 for pose-only, 5
    /// for the full dynamic state).
    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Number of observables `M`, the dimension of the lifted space.
    pub fn size(&self) -> usize {
        self.observables.len()
    }

    pub fn observables(&self) -> &[Observable] {
        &self.observables
    }

    pub fn reprojection(&self) -> &[CoordRule] {
        &self.reprojection
    }

    /// Whether the heading is recovered through an atan2 rule (as opposed to
    /// plain coordinate projection).
    pub fn uses_atan2(&self) -> bool {
        self.reprojection.iter().any(|r| matches!(r, CoordRule::Atan2 { .. }))
    }

    fn check_arity(&self, state: &[f64]) -> Result<(), DictionaryError> {
        if state.len() != self.arity {
            return Err(DictionaryError::ArityMismatch { expected: self.arity, got: state.len() });
        }
        Ok(())
    }

    /// Lifts a state into the observable space.
    pub fn lift(&self, state: &[f64]) -> Result<DVector<f64>, DictionaryError> {
        self.check_arity(state)?;
        Ok(DVector::from_iterator(self.size(), self.observables.iter().map(|o| o.eval(state))))
    }

    /// Jacobian of the lift, `d psi / d x` (size M x arity).
    pub fn lift_jacobian(&self, state: &[f64]) -> Result<DMatrix<f64>, DictionaryError> {
        self.check_arity(state)?;
        let mut jac = DMatrix::zeros(self.size(), self.arity);
        let mut grad = vec![0.0; self.arity];
        for (row, obs) in self.observables.iter().enumerate() {
            obs.accumulate_gradient(state, &mut grad);
            for (col, g) in grad.iter().enumerate() {
                jac[(row, col)] = *g;
            }
        }
        Ok(jac)
    }

    /// Recovers the state from a lifted vector. Heading coordinates recovered
    /// via atan2 land in `(-pi, pi]`.
    pub fn reproject(&self, lifted: &DVector<f64>) -> Result<Vec<f64>, DictionaryError> {
        if lifted.len() != self.size() {
            return Err(DictionaryError::ArityMismatch {
                expected: self.size(),
                got: lifted.len(),
            });
        }
        self.reprojection
            .iter()
            .map(|rule| match *rule {
                CoordRule::Index(i) => Ok(lifted[i]),
                CoordRule::Atan2 { sin, cos } => {
                    let (s, c) = (lifted[sin], lifted[cos]);
                    if s.abs() < DEGENERATE_EPS && c.abs() < DEGENERATE_EPS {
                        return Err(DictionaryError::DegenerateLift { sin, cos });
                    }
                    Ok(s.atan2(c))
                }
            })
            .collect()
    }

    /// Jacobian of the reprojection, `d x / d psi` (size arity x M).
    pub fn reprojection_jacobian(
        &self,
        lifted: &DVector<f64>,
    ) -> Result<DMatrix<f64>, DictionaryError> {
        if lifted.len() != self.size() {
            return Err(DictionaryError::ArityMismatch {
                expected: self.size(),
                got: lifted.len(),
            });
        }
        let mut jac = DMatrix::zeros(self.arity, self.size());
        for (row, rule) in self.reprojection.iter().enumerate() {
            match *rule {
                CoordRule::Index(i) => jac[(row, i)] = 1.0,
                CoordRule::Atan2 { sin, cos } => {
                    let (s, c) = (lifted[sin], lifted[cos]);
                    let norm2 = s * s + c * c;
                    if norm2 < DEGENERATE_EPS * DEGENERATE_EPS {
                        return Err(DictionaryError::DegenerateLift { sin, cos });
                    }
                    jac[(row, sin)] = c / norm2;
                    jac[(row, cos)] = -s / norm2;
                }
            }
        }
        Ok(jac)
    }

    /// Checks that `reproject(lift(x))` recovers every probe state to within
    /// `tol` (headings compared modulo 2*pi). Intended for validating custom
    /// dictionaries before use.
    pub fn validate_round_trip(&self, probes: &[Vec<f64>], tol: f64) -> Result<(), DictionaryError> {
        for probe in probes {
            let recovered = self.reproject(&self.lift(probe)?)?;
            for (coord, (&a, &b)) in probe.iter().zip(recovered.iter()).enumerate() {
                let error = match self.reprojection[coord] {
                    CoordRule::Atan2 { .. } => crate::vehicle::normalize_angle(a - b).abs(),
                    CoordRule::Index(_) => (a - b).abs(),
                };
                if error > tol {
                    return Err(DictionaryError::RoundTripFailure { coord, error });
                }
            }
        }
        Ok(())
    }
}

// Shorthand used by the registry below; coordinates are
// (x1, x2, theta) for arity 3 and (x1, x2, theta, v, omega) for arity 5.
fn pow(coord: usize, exp: u32) -> Factor {
    Factor::Pow { coord, exp }
}

fn cos(coord: usize, harmonic: u32) -> Factor {
    Factor::Cos { coord, harmonic }
}

fn sin(coord: usize, harmonic: u32) -> Factor {
    Factor::Sin { coord, harmonic }
}

/// `D5t`: pose-only dictionary `{1, x1, x2, cos(theta), sin(theta)}` with
/// atan2 heading recovery. The smallest dictionary that makes the kinematic
/// ZOH flow exactly linear in the lifted space.
fn d5t() -> Dictionary {
    Dictionary::new(
        "D5t",
        3,
        vec![
            Observable::constant(),
            Observable::of(&[pow(0, 1)]),
            Observable::of(&[pow(1, 1)]),
            Observable::of(&[cos(2, 1)]),
            Observable::of(&[sin(2, 1)]),
        ],
        vec![CoordRule::Index(1), CoordRule::Index(2), CoordRule::Atan2 { sin: 4, cos: 3 }],
    )
    .expect("registry dictionary D5t")
}

/// `D8Eul`: full-state dictionary
/// `{1, x1, x2, theta, v, omega, v cos(theta), v sin(theta)}` with coordinate
/// projection; the trailing products are the Euler-step position increments.
fn d8eul() -> Dictionary {
    Dictionary::new(
        "D8Eul",
        5,
        vec![
            Observable::constant(),
            Observable::of(&[pow(0, 1)]),
            Observable::of(&[pow(1, 1)]),
            Observable::of(&[pow(2, 1)]),
            Observable::of(&[pow(3, 1)]),
            Observable::of(&[pow(4, 1)]),
            Observable::of(&[pow(3, 1), cos(2, 1)]),
            Observable::of(&[pow(3, 1), sin(2, 1)]),
        ],
        vec![
            CoordRule::Index(1),
            CoordRule::Index(2),
            CoordRule::Index(3),
            CoordRule::Index(4),
            CoordRule::Index(5),
        ],
    )
    .expect("registry dictionary D8Eul")
}

/// `D10m`: full-state monomial dictionary
/// `{1, x1, x2, theta, v, omega, v*omega, v*theta^2, v*theta^3, v*theta^4}`
/// with coordinate projection.
fn d10m() -> Dictionary {
    Dictionary::new(
        "D10m",
        5,
        vec![
            Observable::constant(),
            Observable::of(&[pow(0, 1)]),
            Observable::of(&[pow(1, 1)]),
            Observable::of(&[pow(2, 1)]),
            Observable::of(&[pow(3, 1)]),
            Observable::of(&[pow(4, 1)]),
            Observable::of(&[pow(3, 1), pow(4, 1)]),
            Observable::of(&[pow(3, 1), pow(2, 2)]),
            Observable::of(&[pow(3, 1), pow(2, 3)]),
            Observable::of(&[pow(3, 1), pow(2, 4)]),
        ],
        vec![
            CoordRule::Index(1),
            CoordRule::Index(2),
            CoordRule::Index(3),
            CoordRule::Index(4),
            CoordRule::Index(5),
        ],
    )
    .expect("registry dictionary D10m")
}

/// `D13t`: full-state trigonometric dictionary
/// `{1, x1, x2, sin(theta), cos(theta), v, omega, v cos(theta), v sin(theta),
/// omega sin(theta), omega cos(theta), sin(theta)cos(theta), cos^2(theta)}`
/// with atan2 heading recovery.
fn d13t() -> Dictionary {
    Dictionary::new(
        "D13t",
        5,
        vec![
            Observable::constant(),
            Observable::of(&[pow(0, 1)]),
            Observable::of(&[pow(1, 1)]),
            Observable::of(&[sin(2, 1)]),
            Observable::of(&[cos(2, 1)]),
            Observable::of(&[pow(3, 1)]),
            Observable::of(&[pow(4, 1)]),
            Observable::of(&[pow(3, 1), cos(2, 1)]),
            Observable::of(&[pow(3, 1), sin(2, 1)]),
            Observable::of(&[pow(4, 1), sin(2, 1)]),
            Observable::of(&[pow(4, 1), cos(2, 1)]),
            Observable::of(&[sin(2, 1), cos(2, 1)]),
            Observable::of(&[cos(2, 1), cos(2, 1)]),
        ],
        vec![
            CoordRule::Index(1),
            CoordRule::Index(2),
            CoordRule::Atan2 { sin: 3, cos: 4 },
            CoordRule::Index(5),
            CoordRule::Index(6),
        ],
    )
    .expect("registry dictionary D13t")
}

/// `D12f`: full-state Fourier dictionary
/// `{1, x1, x2, theta, v, omega, v cos(theta), v sin(theta), v cos(2 theta),
/// v sin(2 theta), v cos(3 theta), v sin(3 theta)}` with coordinate
/// projection.
fn d12f() -> Dictionary {
    Dictionary::new(
        "D12f",
        5,
        vec![
            Observable::constant(),
            Observable::of(&[pow(0, 1)]),
            Observable::of(&[pow(1, 1)]),
            Observable::of(&[pow(2, 1)]),
            Observable::of(&[pow(3, 1)]),
            Observable::of(&[pow(4, 1)]),
            Observable::of(&[pow(3, 1), cos(2, 1)]),
            Observable::of(&[pow(3, 1), sin(2, 1)]),
            Observable::of(&[pow(3, 1), cos(2, 2)]),
            Observable::of(&[pow(3, 1), sin(2, 2)]),
            Observable::of(&[pow(3, 1), cos(2, 3)]),
            Observable::of(&[pow(3, 1), sin(2, 3)]),
        ],
        vec![
            CoordRule::Index(1),
            CoordRule::Index(2),
            CoordRule::Index(3),
            CoordRule::Index(4),
            CoordRule::Index(5),
        ],
    )
    .expect("registry dictionary D12f")
}

/// All shipped dictionaries.
pub fn registry() -> Vec<Dictionary> {
    vec![d5t(), d8eul(), d10m(), d13t(), d12f()]
}

/// Looks a shipped dictionary up by name (`D5t`, `D8Eul`, `D10m`, `D13t`,
/// `D12f`).
pub fn by_name(name: &str) -> Option<Dictionary> {
    registry().into_iter().find(|d| d.name() == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const EPS: f64 = 1e-12;

    fn random_state(rng: &mut ChaCha8Rng, arity: usize) -> Vec<f64> {
        let mut state = vec![
            rng.random_range(-2.0..2.0),
            rng.random_range(-2.0..2.0),
            rng.random_range(-PI..PI),
        ];
        if arity == 5 {
            state.push(rng.random_range(-0.5..0.5));
            state.push(rng.random_range(-2.0..2.0));
        }
        state
    }

    #[test]
    fn registry_exposes_expected_names_sizes_and_arities() {
        let dicts = registry();
        let summary: Vec<_> =
            dicts.iter().map(|d| (d.name().to_string(), d.size(), d.arity())).collect();
        assert_eq!(
            summary,
            vec![
                ("D5t".to_string(), 5, 3),
                ("D8Eul".to_string(), 8, 5),
                ("D10m".to_string(), 10, 5),
                ("D13t".to_string(), 13, 5),
                ("D12f".to_string(), 12, 5),
            ]
        );
        assert!(by_name("D13t").is_some());
        assert!(by_name("nope").is_none());
        // Heading recovery style.
        assert!(by_name("D5t").unwrap().uses_atan2());
        assert!(by_name("D13t").unwrap().uses_atan2());
        assert!(!by_name("D8Eul").unwrap().uses_atan2());
    }

    #[test]
    fn first_observable_is_the_constant_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dict in registry() {
            let state = random_state(&mut rng, dict.arity());
            let lifted = dict.lift(&state).unwrap();
            assert_eq!(lifted[0], 1.0, "{}", dict.name());
            let jac = dict.lift_jacobian(&state).unwrap();
            for col in 0..dict.arity() {
                assert_eq!(jac[(0, col)], 0.0);
            }
        }
    }

    #[test]
    fn d5t_lift_matches_hand_values() {
        let dict = by_name("D5t").unwrap();
        let lifted = dict.lift(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(lifted.as_slice(), &[1.0, 0.0, 0.0, 1.0, 0.0]);
        let lifted = dict.lift(&[0.5, -0.2, PI]).unwrap();
        assert!((lifted[3] + 1.0).abs() < EPS);
        assert!(lifted[4].abs() < EPS);
    }

    #[test]
    fn d8eul_lift_matches_hand_values() {
        let dict = by_name("D8Eul").unwrap();
        // theta = 0: v cos = 0.3, v sin = 0.
        let lifted = dict.lift(&[1.0, 2.0, 0.0, 0.3, 0.1]).unwrap();
        assert_eq!(lifted.as_slice(), &[1.0, 1.0, 2.0, 0.0, 0.3, 0.1, 0.3, 0.0]);
    }

    #[test]
    fn d13t_lift_matches_hand_values() {
        let dict = by_name("D13t").unwrap();
        // theta = pi/2: sin = 1, cos = 0 -> all cos-bearing products vanish.
        let lifted = dict.lift(&[0.0, 0.0, PI / 2.0, 1.0, 1.0]).unwrap();
        let expected =
            [1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        for (i, (a, b)) in lifted.iter().zip(expected.iter()).enumerate() {
            assert!((a - b).abs() < EPS, "observable {i}: {a} vs {b}");
        }
    }

    #[test]
    fn d10m_and_d12f_products_match_hand_values() {
        let x = [0.5, -0.2, 0.3, 0.4, 1.0];
        let lifted = by_name("D10m").unwrap().lift(&x).unwrap();
        // v*omega, v*theta^2, v*theta^3, v*theta^4
        assert!((lifted[6] - 0.4).abs() < EPS);
        assert!((lifted[7] - 0.4 * 0.09).abs() < EPS);
        assert!((lifted[8] - 0.4 * 0.027).abs() < EPS);
        assert!((lifted[9] - 0.4 * 0.0081).abs() < EPS);

        let lifted = by_name("D12f").unwrap().lift(&x).unwrap();
        assert!((lifted[8] - 0.4 * (0.6_f64).cos()).abs() < EPS);
        assert!((lifted[9] - 0.4 * (0.6_f64).sin()).abs() < EPS);
        assert!((lifted[10] - 0.4 * (0.9_f64).cos()).abs() < EPS);
        assert!((lifted[11] - 0.4 * (0.9_f64).sin()).abs() < EPS);
    }

    #[test]
    fn atan2_reprojection_recovers_heading() {
        let dict = by_name("D5t").unwrap();
        // Scaled trig pair (0.6, 0.8): atan2(0.8, 0.6) = 0.927295218...
        let lifted = DVector::from_vec(vec![1.0, 0.3, -0.1, 0.6, 0.8]);
        let state = dict.reproject(&lifted).unwrap();
        assert_eq!(state[0], 0.3);
        assert_eq!(state[1], -0.1);
        assert!((state[2] - 0.9272952180016122).abs() < EPS);
        assert!((state[2] - (0.8_f64).atan2(0.6)).abs() < EPS);
    }

    #[test]
    fn degenerate_trig_pair_is_rejected() {
        let dict = by_name("D5t").unwrap();
        let lifted = DVector::from_vec(vec![1.0, 0.3, -0.1, 1e-13, -1e-13]);
        match dict.reproject(&lifted) {
            Err(DictionaryError::DegenerateLift { sin: 4, cos: 3 }) => {}
            other => panic!("expected degenerate lift error, got {other:?}"),
        }
        assert!(dict.reprojection_jacobian(&lifted).is_err());
    }

    #[test]
    fn round_trip_recovers_random_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for dict in registry() {
            for _ in 0..10_000 {
                let state = random_state(&mut rng, dict.arity());
                let recovered = dict.reproject(&dict.lift(&state).unwrap()).unwrap();
                for (coord, (&a, &b)) in state.iter().zip(recovered.iter()).enumerate() {
                    let err = match dict.reprojection()[coord] {
                        CoordRule::Atan2 { .. } => {
                            crate::vehicle::normalize_angle(a - b).abs()
                        }
                        CoordRule::Index(_) => (a - b).abs(),
                    };
                    assert!(err < EPS, "{}: coord {coord} off by {err:e}", dict.name());
                }
            }
        }
    }

    #[test]
    fn trig_pairs_stay_on_unit_circle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let theta = rng.random_range(-10.0..10.0);
            let lifted = by_name("D5t").unwrap().lift(&[0.0, 0.0, theta]).unwrap();
            // cos^2 + sin^2 = 1 up to a few ulps of rounding in sin/cos.
            let r2 = lifted[3] * lifted[3] + lifted[4] * lifted[4];
            assert!((r2 - 1.0).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn lift_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-7;
        for dict in registry() {
            for _ in 0..50 {
                let state = random_state(&mut rng, dict.arity());
                let jac = dict.lift_jacobian(&state).unwrap();
                for col in 0..dict.arity() {
                    let mut lo = state.clone();
                    let mut hi = state.clone();
                    lo[col] -= h;
                    hi[col] += h;
                    let flo = dict.lift(&lo).unwrap();
                    let fhi = dict.lift(&hi).unwrap();
                    for row in 0..dict.size() {
                        let fd = (fhi[row] - flo[row]) / (2.0 * h);
                        assert!(
                            (jac[(row, col)] - fd).abs() < 1e-6,
                            "{}: J[{row},{col}] = {} vs fd {}",
                            dict.name(),
                            jac[(row, col)],
                            fd
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn reprojection_jacobian_is_left_inverse_of_lift_jacobian() {
        // pi(psi(x)) = x, so J_pi * J_psi must be the identity.
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for dict in registry() {
            for _ in 0..50 {
                let state = random_state(&mut rng, dict.arity());
                let lifted = dict.lift(&state).unwrap();
                let chain = dict.reprojection_jacobian(&lifted).unwrap()
                    * dict.lift_jacobian(&state).unwrap();
                for i in 0..dict.arity() {
                    for j in 0..dict.arity() {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        assert!(
                            (chain[(i, j)] - expect).abs() < 1e-9,
                            "{}: chain[{i},{j}] = {}",
                            dict.name(),
                            chain[(i, j)]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn custom_dictionary_validation_catches_bad_reprojection() {
        // A dictionary whose "x1" rule points at the wrong observable.
        let broken = Dictionary::new(
            "broken",
            3,
            vec![
                Observable::constant(),
                Observable::of(&[Factor::Pow { coord: 0, exp: 1 }]),
                Observable::of(&[Factor::Pow { coord: 1, exp: 1 }]),
                Observable::of(&[Factor::Pow { coord: 2, exp: 1 }]),
            ],
            vec![CoordRule::Index(2), CoordRule::Index(1), CoordRule::Index(3)],
        )
        .unwrap();
        let probes = vec![vec![0.4, -0.7, 1.0]];
        match broken.validate_round_trip(&probes, 1e-9) {
            Err(DictionaryError::RoundTripFailure { coord: 0, .. }) => {}
            other => panic!("expected round-trip failure, got {other:?}"),
        }
        // The shipped dictionaries all validate.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dict in registry() {
            let probes: Vec<_> = (0..100).map(|_| random_state(&mut rng, dict.arity())).collect();
            dict.validate_round_trip(&probes, 1e-12).unwrap();
        }
    }

    #[test]
    fn out_of_range_indices_are_rejected_at_construction() {
        let err = Dictionary::new(
            "bad",
            3,
            vec![Observable::constant()],
            vec![CoordRule::Index(5), CoordRule::Index(0), CoordRule::Index(0)],
        )
        .unwrap_err();
        assert!(matches!(err, DictionaryError::IndexOutOfRange { index: 5, size: 1 }));

        let err = Dictionary::new(
            "bad-factor",
            3,
            vec![Observable::of(&[Factor::Pow { coord: 4, exp: 1 }])],
            vec![CoordRule::Index(0), CoordRule::Index(0), CoordRule::Index(0)],
        )
        .unwrap_err();
        assert!(matches!(err, DictionaryError::IndexOutOfRange { index: 4, size: 3 }));
    }

    #[test]
    fn arity_mismatch_is_reported() {
        let dict = by_name("D5t").unwrap();
        match dict.lift(&[1.0, 2.0]) {
            Err(DictionaryError::ArityMismatch { expected: 3, got: 2 }) => {}
            other => panic!("expected arity mismatch, got {other:?}"),
        }
    }
}
