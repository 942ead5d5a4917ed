//! Ground-truth models of a differential-drive robot.
//!
//! Two plants are provided, both discretized exactly under zero-order-hold
//! (ZOH) inputs:
//!
//! * the **kinematic** robot with pose state `(x1, x2, theta)` and velocity
//!   inputs `(v, omega)`, and
//! * the **dynamic** robot with state `(x1, x2, theta, v, omega)` and
//!   acceleration inputs `(a, omega_dot)`, which adds a velocity-level drift.
//!
//! Under a held velocity input the pose moves along a circular arc (or a
//! straight line as `omega -> 0`), so the kinematic step has a closed form.
//! The dynamic step propagates heading and velocities exactly and integrates
//! the position displacement with a fixed-substep RK4 scheme; since the
//! position integrand depends only on time once the heading trajectory is
//! known, the integration is high-order accurate.

use nalgebra::{Matrix3, Matrix3x2, Matrix5, Matrix5x2};
use std::f64::consts::{PI, TAU};

/// Below this angular rate magnitude (rad/s) the circular-arc formulas are
/// replaced by a third-order Taylor expansion to avoid dividing by `omega`.
pub const OMEGA_EPS: f64 = 1e-8;

/// Fixed number of RK4 substeps used to integrate the dynamic-model position
/// displacement over one control interval.
const RK4_SUBSTEPS: usize = 64;

/// Which robot realization a pipeline works with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Pose state, velocity inputs.
    Kinematic,
    /// Pose + velocity state, acceleration inputs.
    Dynamic,
}

impl ModelKind {
    /// State dimension: 3 for the kinematic robot, 5 for the dynamic one.
    pub fn arity(self) -> usize {
        match self {
            ModelKind::Kinematic => 3,
            ModelKind::Dynamic => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Kinematic => "kinematic",
            ModelKind::Dynamic => "dynamic",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "kinematic" => Some(ModelKind::Kinematic),
            "dynamic" => Some(ModelKind::Dynamic),
            _ => None,
        }
    }
}

/// Planar pose of the robot: position in meters, heading in radians.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

impl Pose {
    pub fn new(x1: f64, x2: f64, theta: f64) -> Self {
        Pose { x1, x2, theta }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x1, self.x2, self.theta]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Pose::new(s[0], s[1], s[2])
    }
}

/// Full state of the dynamic robot: pose plus body-frame velocities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FullState {
    pub pose: Pose,
    /// Translational velocity along the heading (m/s).
    pub v: f64,
    /// Angular rate (rad/s).
    pub omega: f64,
}

impl FullState {
    pub fn new(x1: f64, x2: f64, theta: f64, v: f64, omega: f64) -> Self {
        FullState { pose: Pose::new(x1, x2, theta), v, omega }
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.pose.x1, self.pose.x2, self.pose.theta, self.v, self.omega]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        FullState::new(s[0], s[1], s[2], s[3], s[4])
    }
}

/// Velocity input of the kinematic robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityInput {
    pub v: f64,
    pub omega: f64,
}

impl VelocityInput {
    pub fn new(v: f64, omega: f64) -> Self {
        VelocityInput { v, omega }
    }
}

/// Acceleration input of the dynamic robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelInput {
    /// Translational acceleration (m/s^2).
    pub a: f64,
    /// Angular acceleration (rad/s^2).
    pub omega_dot: f64,
}

impl AccelInput {
    pub fn new(a: f64, omega_dot: f64) -> Self {
        AccelInput { a, omega_dot }
    }
}

/// Wheel-level description of a differential drive.
#[derive(Debug, Clone, Copy)]
pub struct WheelGeometry {
    /// Wheel radius (m).
    pub wheel_radius: f64,
    /// Distance between the two wheel contact points (m).
    pub axle_length: f64,
}

impl WheelGeometry {
    /// Maps wheel angular speeds `(left, right)` in rad/s to the body twist.
    pub fn wheels_to_body(&self, omega_left: f64, omega_right: f64) -> VelocityInput {
        let r = self.wheel_radius;
        VelocityInput {
            v: r * (omega_left + omega_right) / 2.0,
            omega: r * (omega_right - omega_left) / self.axle_length,
        }
    }
}

/// Axis-aligned box of two-dimensional inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputBox {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl InputBox {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        InputBox { lo, hi }
    }

    /// Velocity constraints of the kinematic robot: v in [-0.5, 0.5] m/s,
    /// omega in [-2, 2] rad/s.
    pub fn velocity_default() -> Self {
        InputBox::new([-0.5, -2.0], [0.5, 2.0])
    }

    /// Acceleration constraints of the dynamic robot: a in [-0.5, 0.5] m/s^2,
    /// omega_dot in [-2, 2] rad/s^2.
    pub fn acceleration_default() -> Self {
        InputBox::new([-0.5, -2.0], [0.5, 2.0])
    }

    pub fn contains(&self, u: [f64; 2]) -> bool {
        u[0] >= self.lo[0] && u[0] <= self.hi[0] && u[1] >= self.lo[1] && u[1] <= self.hi[1]
    }

    pub fn clamp(&self, u: [f64; 2]) -> [f64; 2] {
        [u[0].clamp(self.lo[0], self.hi[0]), u[1].clamp(self.lo[1], self.hi[1])]
    }
}

/// Wraps an angle into the interval `(-pi, pi]`.
pub fn normalize_angle(theta: f64) -> f64 {
    let wrapped = theta.rem_euclid(TAU); // [0, 2*pi), up to rounding
    if wrapped > PI {
        wrapped - TAU
    } else {
        wrapped
    }
}

/// Exact ZOH step of the kinematic robot: the pose after holding `u` for
/// `dt` seconds.
pub fn kinematic_zoh_step(pose: Pose, u: VelocityInput, dt: f64) -> Pose {
    let (dx1, dx2) = arc_displacement(pose.theta, u.v, u.omega, dt);
    Pose {
        x1: pose.x1 + dx1,
        x2: pose.x2 + dx2,
        theta: pose.theta + u.omega * dt,
    }
}

/// Position displacement of a constant-twist arc starting at heading `theta`.
fn arc_displacement(theta: f64, v: f64, omega: f64, dt: f64) -> (f64, f64) {
    if omega.abs() > OMEGA_EPS {
        // sin(theta+h) - sin(theta) = 2*cos(theta+h/2)*sin(h/2) and its cosine
        // twin; the product form avoids the cancellation the plain difference
        // suffers for small |h|.
        let h = omega * dt;
        let (sm, cm) = (theta + 0.5 * h).sin_cos();
        let half = (0.5 * h).sin();
        (2.0 * (v / omega) * cm * half, 2.0 * (v / omega) * sm * half)
    } else {
        // Third-order expansion in h = omega*dt; with |omega| <= 1e-8 the
        // truncation error is far below machine precision.
        let (s, c) = theta.sin_cos();
        let h = omega * dt;
        let dx1 = v * dt * (c - 0.5 * h * s - h * h / 6.0 * c + h * h * h / 24.0 * s);
        let dx2 = v * dt * (s + 0.5 * h * c - h * h / 6.0 * s - h * h * h / 24.0 * c);
        (dx1, dx2)
    }
}

/// Kinematic ZOH step together with its Jacobians `A = d(next)/d(pose)` and
/// `B = d(next)/d(input)`.
pub fn kinematic_step_jacobians(
    pose: Pose,
    u: VelocityInput,
    dt: f64,
) -> (Pose, Matrix3<f64>, Matrix3x2<f64>) {
    let next = kinematic_zoh_step(pose, u, dt);
    let dx1 = next.x1 - pose.x1;
    let dx2 = next.x2 - pose.x2;

    // Rotating the initial heading rotates the displacement, so the heading
    // column of A is the perpendicular of the displacement.
    #[rustfmt::skip]
    let a = Matrix3::new(
        1.0, 0.0, -dx2,
        0.0, 1.0, dx1,
        0.0, 0.0, 1.0,
    );

    let (s, c) = pose.theta.sin_cos();
    let (dx1_dv, dx2_dv, dx1_dw, dx2_dw);
    if u.omega.abs() > OMEGA_EPS {
        // Same stable product form as in `arc_displacement`.
        let h = u.omega * dt;
        let (sm, cm) = (pose.theta + 0.5 * h).sin_cos();
        let half = (0.5 * h).sin();
        let (sn, cn) = (pose.theta + h).sin_cos();
        dx1_dv = 2.0 * cm * half / u.omega;
        dx2_dv = 2.0 * sm * half / u.omega;
        dx1_dw = (u.v / u.omega) * (dt * cn - dx1_dv);
        dx2_dw = (u.v / u.omega) * (dt * sn - dx2_dv);
    } else {
        let h = u.omega * dt;
        dx1_dv = dt * (c - 0.5 * h * s - h * h / 6.0 * c + h * h * h / 24.0 * s);
        dx2_dv = dt * (s + 0.5 * h * c - h * h / 6.0 * s - h * h * h / 24.0 * c);
        dx1_dw = u.v * dt * dt * (-0.5 * s - h / 3.0 * c + h * h / 8.0 * s);
        dx2_dw = u.v * dt * dt * (0.5 * c - h / 3.0 * s - h * h / 8.0 * c);
    }

    #[rustfmt::skip]
    let b = Matrix3x2::new(
        dx1_dv, dx1_dw,
        dx2_dv, dx2_dw,
        0.0,    dt,
    );

    (next, a, b)
}

/// Time moments of the heading trajectory: integrals of `s^k cos(theta(s))`
/// and `s^k sin(theta(s))` over one control interval, for `k = 0..=max_k`.
///
/// Evaluated with the same fixed-substep RK4 scheme as the position update;
/// the integrands are pure functions of time, for which an RK4 substep
/// reduces to Simpson's rule.
fn heading_moments(
    theta0: f64,
    omega0: f64,
    omega_dot: f64,
    dt: f64,
    max_k: usize,
) -> ([f64; 4], [f64; 4]) {
    let theta = |s: f64| theta0 + omega0 * s + 0.5 * omega_dot * s * s;
    let h = dt / RK4_SUBSTEPS as f64;
    let mut mc = [0.0; 4];
    let mut ms = [0.0; 4];
    for i in 0..RK4_SUBSTEPS {
        let t0 = i as f64 * h;
        let tm = t0 + 0.5 * h;
        let t1 = t0 + h;
        let (s0, c0) = theta(t0).sin_cos();
        let (sm, cm) = theta(tm).sin_cos();
        let (s1, c1) = theta(t1).sin_cos();
        let mut p0 = 1.0;
        let mut pm = 1.0;
        let mut p1 = 1.0;
        for k in 0..=max_k {
            mc[k] += h / 6.0 * (p0 * c0 + 4.0 * pm * cm + p1 * c1);
            ms[k] += h / 6.0 * (p0 * s0 + 4.0 * pm * sm + p1 * s1);
            p0 *= t0;
            pm *= tm;
            p1 *= t1;
        }
    }
    (mc, ms)
}

/// Exact ZOH step of the dynamic robot: heading and velocities update in
/// closed form, positions by fixed-substep RK4 integration.
///
/// With zero accelerations the velocities are constant and the step reduces
/// exactly to [`kinematic_zoh_step`].
pub fn dynamic_zoh_step(z: FullState, u: AccelInput, dt: f64) -> FullState {
    if u.a == 0.0 && u.omega_dot == 0.0 {
        let pose = kinematic_zoh_step(z.pose, VelocityInput::new(z.v, z.omega), dt);
        return FullState { pose, v: z.v, omega: z.omega };
    }
    let (mc, ms) = heading_moments(z.pose.theta, z.omega, u.omega_dot, dt, 1);
    FullState {
        pose: Pose {
            x1: z.pose.x1 + z.v * mc[0] + u.a * mc[1],
            x2: z.pose.x2 + z.v * ms[0] + u.a * ms[1],
            theta: z.pose.theta + z.omega * dt + 0.5 * u.omega_dot * dt * dt,
        },
        v: z.v + u.a * dt,
        omega: z.omega + u.omega_dot * dt,
    }
}

/// Dynamic ZOH step together with its Jacobians `A = d(next)/d(state)` and
/// `B = d(next)/d(input)`.
pub fn dynamic_step_jacobians(
    z: FullState,
    u: AccelInput,
    dt: f64,
) -> (FullState, Matrix5<f64>, Matrix5x2<f64>) {
    let (mc, ms) = heading_moments(z.pose.theta, z.omega, u.omega_dot, dt, 3);
    let dx1 = z.v * mc[0] + u.a * mc[1];
    let dx2 = z.v * ms[0] + u.a * ms[1];
    let next = FullState {
        pose: Pose {
            x1: z.pose.x1 + dx1,
            x2: z.pose.x2 + dx2,
            theta: z.pose.theta + z.omega * dt + 0.5 * u.omega_dot * dt * dt,
        },
        v: z.v + u.a * dt,
        omega: z.omega + u.omega_dot * dt,
    };

    // d(displacement)/d(omega0) and /d(omega_dot) differentiate the heading
    // trajectory inside the integrals, raising the time moment by one (resp.
    // two, with a factor 1/2) order.
    let dx1_dw = -(z.v * ms[1] + u.a * ms[2]);
    let dx2_dw = z.v * mc[1] + u.a * mc[2];
    let dx1_dwd = -0.5 * (z.v * ms[2] + u.a * ms[3]);
    let dx2_dwd = 0.5 * (z.v * mc[2] + u.a * mc[3]);

    #[rustfmt::skip]
    let a = Matrix5::new(
        1.0, 0.0, -dx2, mc[0], dx1_dw,
        0.0, 1.0, dx1,  ms[0], dx2_dw,
        0.0, 0.0, 1.0,  0.0,   dt,
        0.0, 0.0, 0.0,  1.0,   0.0,
        0.0, 0.0, 0.0,  0.0,   1.0,
    );
    #[rustfmt::skip]
    let b = Matrix5x2::new(
        mc[1], dx1_dwd,
        ms[1], dx2_dwd,
        0.0,   0.5 * dt * dt,
        dt,    0.0,
        0.0,   dt,
    );

    (next, a, b)
}
