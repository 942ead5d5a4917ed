//! Synthetic trajectory generation for model identification.
//!
//! Both samplers emulate a lab procedure: draw a random admissible target,
//! drive there with transfer maneuvers, then apply one of the fixed input
//! bases open-loop until the admissible set would be exited or a maximum
//! segment length is reached. Poses are recorded through an emulated
//! position-only sensor (additive Gaussian noise at a fixed rate); commanded
//! inputs are recorded at the control rate; every phase is annotated so the
//! post-processor can smooth and pair segments individually.
//!
//! * The **kinematic** sampler transfers with rotate-translate-rotate
//!   maneuvers at velocity level and applies velocity bases inside the pose
//!   box.
//! * The **dynamic** sampler additionally manages velocities: it brakes to
//!   rest, transfers with trapezoidal (rest-to-rest) velocity profiles,
//!   accelerates to drawn target velocities, pre-simulates whether the
//!   acceleration basis can be applied for a minimum number of steps without
//!   leaving the admissible set, and only then applies it.

use crate::recording::{InputSample, PoseSample, ProfileKind, RawRecording, Segment};
use crate::vehicle::{
    dynamic_zoh_step, kinematic_zoh_step, normalize_angle, AccelInput, FullState, InputBox,
    ModelKind, Pose, VelocityInput,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::f64::consts::PI;
use std::fmt;

/// Axis-aligned admissible position box; headings are unconstrained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseBox {
    pub x1: [f64; 2],
    pub x2: [f64; 2],
}

impl PoseBox {
    pub fn contains(&self, pose: Pose) -> bool {
        pose.x1 >= self.x1[0] && pose.x1 <= self.x1[1] && pose.x2 >= self.x2[0]
            && pose.x2 <= self.x2[1]
    }

    /// Uniform draw: positions from the box, heading from (-pi, pi].
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Pose {
        Pose::new(
            rng.random_range(self.x1[0]..=self.x1[1]),
            rng.random_range(self.x2[0]..=self.x2[1]),
            rng.random_range(-PI..PI),
        )
    }

    pub fn center(&self) -> Pose {
        Pose::new(0.5 * (self.x1[0] + self.x1[1]), 0.5 * (self.x2[0] + self.x2[1]), 0.0)
    }
}

/// Admissible velocity box of the dynamic robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityBox {
    pub v: [f64; 2],
    pub omega: [f64; 2],
}

impl VelocityBox {
    pub fn contains(&self, v: f64, omega: f64) -> bool {
        v >= self.v[0] && v <= self.v[1] && omega >= self.omega[0] && omega <= self.omega[1]
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> (f64, f64) {
        (
            rng.random_range(self.v[0]..=self.v[1]),
            rng.random_range(self.omega[0]..=self.omega[1]),
        )
    }
}

/// Full sampling configuration.
#[derive(Debug, Clone)]
pub struct SamplingSpec {
    pub model: ModelKind,
    pub pose_box: PoseBox,
    /// Draw and admissibility box for velocities (dynamic model only).
    pub velocity_box: VelocityBox,
    /// Input bases: velocity pairs (kinematic) or acceleration pairs
    /// (dynamic; conventionally starting with the zero input).
    pub bases: Vec<[f64; 2]>,
    /// Control interval (s).
    pub dt: f64,
    /// Sensor rate (Hz); `dt * sensor_rate` must be a positive integer.
    pub sensor_rate: f64,
    pub segments_per_basis: usize,
    /// Minimum basis-application length (control steps) enforced by
    /// pre-simulation; shorter draws are rejected.
    pub min_segment_steps: usize,
    /// Hard cap on basis-application length (control steps).
    pub max_segment_steps: usize,
    pub seed: u64,
    /// Sensor noise standard deviations.
    pub noise_pos: f64,
    pub noise_theta: f64,
    /// Transfer maneuver parameters: cruise speeds and (dynamic only) ramp
    /// accelerations.
    pub transfer_speed: f64,
    pub transfer_yaw_rate: f64,
    pub transfer_accel: f64,
    pub transfer_yaw_accel: f64,
    /// Admissible commanded inputs (velocity or acceleration level).
    pub input_box: InputBox,
    /// Rejected draws per segment before giving up.
    pub max_rejects: usize,
}

impl SamplingSpec {
    /// Kinematic defaults: velocity bases (0.2, -0.4) and (0.2, 0.6) sampled
    /// at 50 ms inside the box [-1, 1]^2, five segments per basis.
    pub fn kinematic_default() -> Self {
        SamplingSpec {
            model: ModelKind::Kinematic,
            pose_box: PoseBox { x1: [-1.0, 1.0], x2: [-1.0, 1.0] },
            velocity_box: VelocityBox { v: [0.0, 0.4], omega: [-1.0, 1.0] },
            bases: vec![[0.2, -0.4], [0.2, 0.6]],
            dt: 0.05,
            sensor_rate: 20.0,
            segments_per_basis: 5,
            min_segment_steps: 10,
            max_segment_steps: 100,
            seed: 1,
            noise_pos: 0.0,
            noise_theta: 0.0,
            transfer_speed: 0.3,
            transfer_yaw_rate: 0.8,
            transfer_accel: 0.3,
            transfer_yaw_accel: 1.0,
            input_box: InputBox::velocity_default(),
            max_rejects: 1000,
        }
    }

    /// Dynamic defaults: acceleration bases (0, 0), (0.2, 0), (0, 0.5)
    /// sampled at 50 ms with a 240 Hz sensor inside the box
    /// [0, 1.5] x [-0.75, 0.75] with velocities in [0, 0.4] x [-1, 1],
    /// one hundred segments per basis, noisy sensor.
    pub fn dynamic_default() -> Self {
        SamplingSpec {
            model: ModelKind::Dynamic,
            pose_box: PoseBox { x1: [0.0, 1.5], x2: [-0.75, 0.75] },
            velocity_box: VelocityBox { v: [0.0, 0.4], omega: [-1.0, 1.0] },
            bases: vec![[0.0, 0.0], [0.2, 0.0], [0.0, 0.5]],
            dt: 0.05,
            sensor_rate: 240.0,
            segments_per_basis: 100,
            min_segment_steps: 10,
            max_segment_steps: 100,
            seed: 1,
            noise_pos: 5e-4,
            noise_theta: 0.1_f64.to_radians(),
            transfer_speed: 0.3,
            transfer_yaw_rate: 0.8,
            transfer_accel: 0.3,
            transfer_yaw_accel: 1.0,
            input_box: InputBox::acceleration_default(),
            max_rejects: 1000,
        }
    }

    /// Sensor samples per control step.
    pub fn substeps(&self) -> usize {
        (self.sensor_rate * self.dt).round() as usize
    }

    pub fn validate(&self) -> Result<(), SamplingError> {
        let fail = |message: String| Err(SamplingError::InvalidSpec(message));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return fail(format!("control interval must be positive, got {}", self.dt));
        }
        let steps = self.sensor_rate * self.dt;
        if !(self.sensor_rate > 0.0) || (steps - steps.round()).abs() > 1e-9 || steps < 0.5 {
            return fail(format!(
                "sensor rate {} Hz does not divide the control interval {} s into whole samples",
                self.sensor_rate, self.dt
            ));
        }
        if self.pose_box.x1[0] >= self.pose_box.x1[1] || self.pose_box.x2[0] >= self.pose_box.x2[1]
        {
            return fail("pose box is empty".to_string());
        }
        if self.velocity_box.v[0] >= self.velocity_box.v[1]
            || self.velocity_box.omega[0] >= self.velocity_box.omega[1]
        {
            return fail("velocity box is empty".to_string());
        }
        if self.bases.is_empty() {
            return fail("at least one input basis is required".to_string());
        }
        for (i, &b) in self.bases.iter().enumerate() {
            if !self.input_box.contains(b) {
                return fail(format!("basis {i} {b:?} lies outside the input box"));
            }
        }
        if self.min_segment_steps == 0 || self.max_segment_steps < self.min_segment_steps {
            return fail("segment length bounds must satisfy 1 <= min <= max".to_string());
        }
        if self.segments_per_basis == 0 {
            return fail("segments_per_basis must be positive".to_string());
        }
        if self.noise_pos < 0.0 || self.noise_theta < 0.0 {
            return fail("noise standard deviations must be nonnegative".to_string());
        }
        if !(self.transfer_speed > 0.0
            && self.transfer_yaw_rate > 0.0
            && self.transfer_accel > 0.0
            && self.transfer_yaw_accel > 0.0)
        {
            return fail("transfer maneuver parameters must be positive".to_string());
        }
        Ok(())
    }
}

/// Errors raised by the samplers.
#[derive(Debug)]
pub enum SamplingError {
    InvalidSpec(String),
    /// No admissible draw allowed the basis to run for the minimum segment
    /// length after `rejects` attempts.
    Infeasible { basis: usize, rejects: usize },
}

impl fmt::Display for SamplingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SamplingError::InvalidSpec(message) => write!(f, "invalid sampling spec: {message}"),
            SamplingError::Infeasible { basis, rejects } => write!(
                f,
                "basis {basis} infeasible: no admissible draw survived the minimum segment \
                 length after {rejects} rejected draws"
            ),
        }
    }
}

impl std::error::Error for SamplingError {}

/// Generates a recording according to the sampling spec.
pub fn sample(spec: &SamplingSpec) -> Result<RawRecording, SamplingError> {
    spec.validate()?;
    match spec.model {
        ModelKind::Kinematic => sample_kinematic(spec),
        ModelKind::Dynamic => sample_dynamic(spec),
    }
}

/// Shared recording machinery: streams, noise injection, and segment
/// bookkeeping. The pose at a segment boundary belongs to the *following*
/// segment (it is the state at which that segment's first input is applied);
/// `finish` extends the final segment to own the very last pose.
struct Recorder {
    recording: RawRecording,
    rng: ChaCha8Rng,
    noise_pos: Normal<f64>,
    noise_theta: Normal<f64>,
    sensor_rate: f64,
    substeps: usize,
    /// Index of the most recently recorded pose sample.
    tick: usize,
    /// First tick of the segment currently being recorded.
    segment_start: usize,
}

impl Recorder {
    fn new(spec: &SamplingSpec, initial: Pose) -> Self {
        let mut recording = RawRecording::default();
        let bases: Vec<String> =
            spec.bases.iter().map(|b| format!("{:.17e},{:.17e}", b[0], b[1])).collect();
        recording.metadata = vec![
            ("tool".to_string(), crate::TOOL_VERSION.to_string()),
            ("model".to_string(), spec.model.name().to_string()),
            ("seed".to_string(), spec.seed.to_string()),
            ("dt".to_string(), format!("{:.17e}", spec.dt)),
            ("fs".to_string(), format!("{:.17e}", spec.sensor_rate)),
            ("noise_pos".to_string(), format!("{:.17e}", spec.noise_pos)),
            ("noise_theta".to_string(), format!("{:.17e}", spec.noise_theta)),
            ("bases".to_string(), bases.join(";")),
        ];
        let mut recorder = Recorder {
            recording,
            rng: ChaCha8Rng::seed_from_u64(spec.seed),
            noise_pos: Normal::new(0.0, spec.noise_pos).expect("validated"),
            noise_theta: Normal::new(0.0, spec.noise_theta).expect("validated"),
            sensor_rate: spec.sensor_rate,
            substeps: spec.substeps(),
            tick: 0,
            segment_start: 0,
        };
        recorder.push_pose(0, initial);
        recorder
    }

    fn push_pose(&mut self, tick: usize, pose: Pose) {
        let e1 = self.noise_pos.sample(&mut self.rng);
        let e2 = self.noise_pos.sample(&mut self.rng);
        let e3 = self.noise_theta.sample(&mut self.rng);
        self.recording.poses.push(PoseSample {
            t: tick as f64 / self.sensor_rate,
            x1: pose.x1 + e1,
            x2: pose.x2 + e2,
            // The emulated sensor reports headings in (-pi, pi].
            theta: normalize_angle(pose.theta + e3),
        });
    }

    /// Records one control step: the commanded input, then the sensor poses
    /// produced while it is held. `advance` performs one sensor-interval
    /// state update and returns the new pose.
    fn control_step<F: FnMut() -> Pose>(&mut self, u: [f64; 2], mut advance: F) {
        self.recording.inputs.push(InputSample {
            t: self.tick as f64 / self.sensor_rate,
            u1: u[0],
            u2: u[1],
        });
        for _ in 0..self.substeps {
            let pose = advance();
            self.tick += 1;
            let tick = self.tick;
            self.push_pose(tick, pose);
        }
    }

    /// Closes the segment begun at the last close (or the recording start).
    /// Phases that recorded nothing close nothing.
    fn close_segment(&mut self, basis: Option<usize>, profile: ProfileKind) {
        if self.tick < self.segment_start + 1 {
            return;
        }
        self.recording.segments.push(Segment {
            start_tick: self.segment_start,
            end_tick: self.tick - 1,
            basis,
            profile,
        });
        self.segment_start = self.tick;
    }

    fn finish(mut self) -> RawRecording {
        if let Some(last) = self.recording.segments.last_mut() {
            last.end_tick = self.tick;
        }
        self.recording
    }
}

/// Steps-per-phase helper: smallest whole number of control steps covering
/// `magnitude` at the given cruise rate.
fn phase_steps(magnitude: f64, cruise: f64, dt: f64) -> usize {
    ((magnitude / (cruise * dt)) - 1e-9).ceil().max(1.0) as usize
}

fn sample_kinematic(spec: &SamplingSpec) -> Result<RawRecording, SamplingError> {
    let substeps = spec.substeps();
    let sensor_dt = 1.0 / spec.sensor_rate;
    let mut rec = Recorder::new(spec, spec.pose_box.center());
    let mut pose = spec.pose_box.center();

    // Whole control steps the basis can run from `start` before a sensor
    // sample would leave the box, capped at the maximum segment length.
    let feasible_steps = |start: Pose, u: VelocityInput| -> usize {
        let mut state = start;
        for step in 0..spec.max_segment_steps {
            for _ in 0..substeps {
                state = kinematic_zoh_step(state, u, sensor_dt);
                if !spec.pose_box.contains(state) {
                    return step;
                }
            }
        }
        spec.max_segment_steps
    };

    // Velocity phase: hold `u` for `steps` control steps and close a segment.
    fn run_phase(
        rec: &mut Recorder,
        pose: &mut Pose,
        u: [f64; 2],
        steps: usize,
        basis: Option<usize>,
        sensor_dt: f64,
    ) {
        for _ in 0..steps {
            rec.control_step(u, || {
                *pose = kinematic_zoh_step(*pose, VelocityInput::new(u[0], u[1]), sensor_dt);
                *pose
            });
        }
        rec.close_segment(basis, ProfileKind::Constant);
    }

    for _round in 0..spec.segments_per_basis {
        for (basis_index, &basis) in spec.bases.iter().enumerate() {
            let mut accepted = false;
            for _reject in 0..spec.max_rejects {
                let target = spec.pose_box.sample(&mut rec.rng);

                // Transfer: rotate toward the target point, drive straight,
                // rotate to the target heading. Straight lines between
                // in-box points stay in the (convex) box.
                let d1 = target.x1 - pose.x1;
                let d2 = target.x2 - pose.x2;
                let distance = (d1 * d1 + d2 * d2).sqrt();
                if distance > 1e-9 {
                    let bearing = d2.atan2(d1);
                    let turn = normalize_angle(bearing - pose.theta);
                    if turn.abs() > 1e-9 {
                        let n = phase_steps(turn.abs(), spec.transfer_yaw_rate, spec.dt);
                        let u = [0.0, turn / (n as f64 * spec.dt)];
                        run_phase(&mut rec, &mut pose, u, n, None, sensor_dt);
                    }
                    let n = phase_steps(distance, spec.transfer_speed, spec.dt);
                    let u = [distance / (n as f64 * spec.dt), 0.0];
                    run_phase(&mut rec, &mut pose, u, n, None, sensor_dt);
                }
                let turn = normalize_angle(target.theta - pose.theta);
                if turn.abs() > 1e-9 {
                    let n = phase_steps(turn.abs(), spec.transfer_yaw_rate, spec.dt);
                    let u = [0.0, turn / (n as f64 * spec.dt)];
                    run_phase(&mut rec, &mut pose, u, n, None, sensor_dt);
                }

                let steps = feasible_steps(pose, VelocityInput::new(basis[0], basis[1]));
                if steps < spec.min_segment_steps {
                    continue;
                }
                run_phase(&mut rec, &mut pose, basis, steps, Some(basis_index), sensor_dt);
                accepted = true;
                break;
            }
            if !accepted {
                return Err(SamplingError::Infeasible {
                    basis: basis_index,
                    rejects: spec.max_rejects,
                });
            }
        }
    }
    Ok(rec.finish())
}

/// Quantized rest-to-rest trapezoidal profile over one axis: ramp up for
/// `n_ramp` control steps at `alpha`, cruise for `n_cruise`, ramp down for
/// `n_ramp`. `alpha` is solved so the quantized profile covers `delta`
/// exactly; because step counts are rounded up, it never exceeds the
/// requested `accel`, nor does the peak rate exceed `cruise`.
fn trapezoid(delta: f64, cruise: f64, accel: f64, dt: f64) -> Option<(usize, usize, f64)> {
    let magnitude = delta.abs();
    if magnitude < 1e-9 {
        return None;
    }
    let (ramp_time, cruise_time) = if cruise * cruise / accel >= magnitude {
        ((magnitude / accel).sqrt(), 0.0)
    } else {
        (cruise / accel, (magnitude - cruise * cruise / accel) / cruise)
    };
    let n_ramp = ((ramp_time / dt) - 1e-9).ceil().max(1.0) as usize;
    let n_cruise = ((cruise_time / dt) - 1e-9).ceil() as usize;
    let t_ramp = n_ramp as f64 * dt;
    let t_cruise = n_cruise as f64 * dt;
    Some((n_ramp, n_cruise, delta / (t_ramp * (t_ramp + t_cruise))))
}

fn sample_dynamic(spec: &SamplingSpec) -> Result<RawRecording, SamplingError> {
    let substeps = spec.substeps();
    let sensor_dt = 1.0 / spec.sensor_rate;
    let start = spec.pose_box.center();
    let mut rec = Recorder::new(spec, start);
    let mut state = FullState::new(start.x1, start.x2, start.theta, 0.0, 0.0);

    let in_admissible = |z: FullState| {
        spec.pose_box.contains(z.pose) && spec.velocity_box.contains(z.v, z.omega)
    };

    // Acceleration phase: hold `u` for `steps` control steps.
    fn run_phase(
        rec: &mut Recorder,
        state: &mut FullState,
        u: [f64; 2],
        steps: usize,
        basis: Option<usize>,
        profile: ProfileKind,
        sensor_dt: f64,
    ) {
        for _ in 0..steps {
            rec.control_step(u, || {
                *state = dynamic_zoh_step(*state, AccelInput::new(u[0], u[1]), sensor_dt);
                state.pose
            });
        }
        rec.close_segment(basis, profile);
    }

    // Rest-to-rest rotation/translation via trapezoidal profiles. These only
    // move the state along straight lines or in place, so they cannot leave
    // the (convex) pose box.
    fn transfer_axis(
        rec: &mut Recorder,
        state: &mut FullState,
        delta: f64,
        cruise: f64,
        accel: f64,
        yaw: bool,
        dt: f64,
        sensor_dt: f64,
    ) {
        if let Some((n_ramp, n_cruise, alpha)) = trapezoid(delta, cruise, accel, dt) {
            let ramp = |a: f64| if yaw { [0.0, a] } else { [a, 0.0] };
            run_phase(rec, state, ramp(alpha), n_ramp, None, ProfileKind::Linear, sensor_dt);
            if n_cruise > 0 {
                run_phase(rec, state, [0.0, 0.0], n_cruise, None, ProfileKind::Constant, sensor_dt);
            }
            run_phase(rec, state, ramp(-alpha), n_ramp, None, ProfileKind::Linear, sensor_dt);
            // Quantization rounding can leave a sub-1e-12 residual velocity;
            // clear it so later phases start from exact rest.
            if yaw {
                state.omega = 0.0;
            } else {
                state.v = 0.0;
            }
        }
    }

    // Ramp from the current velocities to targets using at most half the
    // admissible acceleration per component; lands exactly (up to rounding)
    // after a whole number of control steps.
    let velocity_ramp = |state: FullState, v_to: f64, omega_to: f64| -> Option<(usize, [f64; 2])> {
        let dv = v_to - state.v;
        let domega = omega_to - state.omega;
        if dv.abs() < 1e-12 && domega.abs() < 1e-12 {
            return None;
        }
        let a_lim = 0.5 * spec.input_box.hi[0];
        let w_lim = 0.5 * spec.input_box.hi[1];
        let time = (dv.abs() / a_lim).max(domega.abs() / w_lim);
        let n = ((time / spec.dt) - 1e-9).ceil().max(1.0) as usize;
        let t = n as f64 * spec.dt;
        Some((n, [dv / t, domega / t]))
    };

    // Feasibility pre-simulation from the actual current state: run the
    // velocity ramp, then the basis for the minimum segment length, checking
    // the admissible set at every sensor sample.
    let presimulate = |state: FullState,
                       ramp: Option<(usize, [f64; 2])>,
                       basis: [f64; 2]| -> Option<FullState> {
        let mut z = state;
        if let Some((n, accel)) = ramp {
            let u = AccelInput::new(accel[0], accel[1]);
            for _ in 0..n * substeps {
                z = dynamic_zoh_step(z, u, sensor_dt);
                if !in_admissible(z) {
                    return None;
                }
            }
        }
        let u = AccelInput::new(basis[0], basis[1]);
        let mut probe = z;
        for _ in 0..spec.min_segment_steps * substeps {
            probe = dynamic_zoh_step(probe, u, sensor_dt);
            if !in_admissible(probe) {
                return None;
            }
        }
        Some(z)
    };

    for _round in 0..spec.segments_per_basis {
        for (basis_index, &basis) in spec.bases.iter().enumerate() {
            let mut accepted = false;
            for _reject in 0..spec.max_rejects {
                // Brake to rest before maneuvering.
                if let Some((n, accel)) = velocity_ramp(state, 0.0, 0.0) {
                    run_phase(&mut rec, &mut state, accel, n, None, ProfileKind::Linear, sensor_dt);
                    state.v = 0.0;
                    state.omega = 0.0;
                }

                let target = spec.pose_box.sample(&mut rec.rng);
                let (v_target, omega_target) = spec.velocity_box.sample(&mut rec.rng);

                // Rotate toward the target point, translate, rotate to the
                // target heading.
                let d1 = target.x1 - state.pose.x1;
                let d2 = target.x2 - state.pose.x2;
                let distance = (d1 * d1 + d2 * d2).sqrt();
                if distance > 1e-9 {
                    let bearing = d2.atan2(d1);
                    let turn = normalize_angle(bearing - state.pose.theta);
                    transfer_axis(
                        &mut rec,
                        &mut state,
                        turn,
                        spec.transfer_yaw_rate,
                        spec.transfer_yaw_accel,
                        true,
                        spec.dt,
                        sensor_dt,
                    );
                    transfer_axis(
                        &mut rec,
                        &mut state,
                        distance,
                        spec.transfer_speed,
                        spec.transfer_accel,
                        false,
                        spec.dt,
                        sensor_dt,
                    );
                }
                let turn = normalize_angle(target.theta - state.pose.theta);
                transfer_axis(
                    &mut rec,
                    &mut state,
                    turn,
                    spec.transfer_yaw_rate,
                    spec.transfer_yaw_accel,
                    true,
                    spec.dt,
                    sensor_dt,
                );

                // Accelerate to the drawn velocities, then apply the basis --
                // but only if the pre-simulation stays admissible throughout
                // the ramp and the minimum segment length.
                let ramp = velocity_ramp(state, v_target, omega_target);
                if presimulate(state, ramp, basis).is_none() {
                    continue;
                }
                if let Some((n, accel)) = ramp {
                    run_phase(&mut rec, &mut state, accel, n, None, ProfileKind::Linear, sensor_dt);
                }

                // Apply the basis one control step at a time, stopping before
                // a step whose sensor samples would exit the admissible set.
                let u = AccelInput::new(basis[0], basis[1]);
                let profile = if basis == [0.0, 0.0] {
                    ProfileKind::Constant
                } else {
                    ProfileKind::Linear
                };
                for _step in 0..spec.max_segment_steps {
                    let mut probe = state;
                    let mut ok = true;
                    for _ in 0..substeps {
                        probe = dynamic_zoh_step(probe, u, sensor_dt);
                        if !in_admissible(probe) {
                            ok = false;
                            break;
                        }
                    }
                    if !ok {
                        break;
                    }
                    rec.control_step(basis, || {
                        state = dynamic_zoh_step(state, u, sensor_dt);
                        state.pose
                    });
                }
                rec.close_segment(Some(basis_index), profile);
                accepted = true;
                break;
            }
            if !accepted {
                return Err(SamplingError::Infeasible {
                    basis: basis_index,
                    rejects: spec.max_rejects,
                });
            }
        }
    }
    Ok(rec.finish())
}
