//! Study harnesses: reference-run generation, open-loop prediction error
//! studies, Monte-Carlo closed-loop evaluations, and data-efficiency sweeps.
//!
//! Every study is seed-deterministic: initial states and sensor noise come
//! from counter-derived ChaCha streams, Monte-Carlo draws are shared across
//! configurations (paired comparisons), and parallel reductions are ordered
//! by draw index.

use crate::cost::{GoalFrame, StageCost};
use crate::dictionary::Dictionary;
use crate::ecdf::{Ecdf, EcdfError};
use crate::edmd::{fit_surrogate, EdmdError, KoopmanSurrogate, RegressionOptions};
use crate::mpc::{closed_loop, OcpError, OcpSpec, PredictionModel, SolverOptions};
use crate::postprocess::{build_dataset, state_series, PairDensity, PostprocessError, PostprocessSpec};
use crate::recording::{
    InputSample, PoseSample, ProfileKind, RawRecording, RecordingError, Segment,
};
use crate::sampling::PoseBox;
use crate::vehicle::{
    dynamic_zoh_step, kinematic_zoh_step, normalize_angle, AccelInput, FullState, InputBox,
    ModelKind, Pose, VelocityInput,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Control interval of the reference input scripts (s).
pub const REFERENCE_DT: f64 = 0.05;
/// Sensor rate of the reference recordings (Hz).
pub const REFERENCE_SENSOR_RATE: f64 = 240.0;

/// Shape of a reference trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceShape {
    /// Two opposite-handed circles forming a figure of eight.
    Infinity,
    /// One counter-clockwise lap of a rounded square (the robot only ever
    /// turns counter-clockwise).
    Square,
}

impl ReferenceShape {
    pub fn name(self) -> &'static str {
        match self {
            ReferenceShape::Infinity => "infinity",
            ReferenceShape::Square => "square",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "infinity" => Some(ReferenceShape::Infinity),
            "square" => Some(ReferenceShape::Square),
            _ => None,
        }
    }
}

/// Errors raised by the study harnesses.
#[derive(Debug)]
pub enum ExperimentError {
    BadSpec(String),
    Recording(RecordingError),
    Postprocess(PostprocessError),
    Fit(EdmdError),
    Solve(OcpError),
    Ecdf(EcdfError),
    Io(std::io::Error),
}

impl fmt::Display for ExperimentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExperimentError::BadSpec(message) => write!(f, "invalid study: {message}"),
            ExperimentError::Recording(err) => write!(f, "recording error: {err}"),
            ExperimentError::Postprocess(err) => write!(f, "post-processing error: {err}"),
            ExperimentError::Fit(err) => write!(f, "identification error: {err}"),
            ExperimentError::Solve(err) => write!(f, "control error: {err}"),
            ExperimentError::Ecdf(err) => write!(f, "distribution error: {err}"),
            ExperimentError::Io(err) => write!(f, "I/O error: {err}"),
        }
    }
}

impl std::error::Error for ExperimentError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            ExperimentError::Recording(err) => Some(err),
            ExperimentError::Postprocess(err) => Some(err),
            ExperimentError::Fit(err) => Some(err),
            ExperimentError::Solve(err) => Some(err),
            ExperimentError::Ecdf(err) => Some(err),
            ExperimentError::Io(err) => Some(err),
            ExperimentError::BadSpec(_) => None,
        }
    }
}

impl From<RecordingError> for ExperimentError {
    fn from(err: RecordingError) -> Self {
        ExperimentError::Recording(err)
    }
}

impl From<PostprocessError> for ExperimentError {
    fn from(err: PostprocessError) -> Self {
        ExperimentError::Postprocess(err)
    }
}

impl From<EdmdError> for ExperimentError {
    fn from(err: EdmdError) -> Self {
        ExperimentError::Fit(err)
    }
}

impl From<OcpError> for ExperimentError {
    fn from(err: OcpError) -> Self {
        ExperimentError::Solve(err)
    }
}

impl From<EcdfError> for ExperimentError {
    fn from(err: EcdfError) -> Self {
        ExperimentError::Ecdf(err)
    }
}

impl From<std::io::Error> for ExperimentError {
    fn from(err: std::io::Error) -> Self {
        ExperimentError::Io(err)
    }
}

fn push_phase(script: &mut Vec<[f64; 2]>, input: [f64; 2], steps: usize) {
    script.extend(std::iter::repeat(input).take(steps));
}

/// The fixed, versioned acceleration script (one entry per control step of
/// `REFERENCE_DT` seconds) producing the named reference shape from rest.
///
/// Both scripts cruise at 0.3 m/s and stay inside the default admissible
/// velocity set (forward speed in [0, 0.4] m/s, |yaw rate| <= 1 rad/s).
/// Heading closure is approximate (turn areas are quantized to whole control
/// steps), as for a hand-tuned lab script.
pub fn reference_script(shape: ReferenceShape) -> Vec<[f64; 2]> {
    let mut script = Vec::new();
    match shape {
        ReferenceShape::Infinity => {
            // Spin up, one counter-clockwise lobe, one clockwise lobe, brake.
            // Each lobe: 1 s yaw ramp to |omega| = 0.8, hold for just under
            // (2 pi - 0.8)/0.8 s, 1 s ramp back to zero.
            push_phase(&mut script, [0.2, 0.0], 30);
            for sign in [1.0, -1.0] {
                push_phase(&mut script, [0.0, sign * 0.8], 20);
                push_phase(&mut script, [0.0, 0.0], 137);
                push_phase(&mut script, [0.0, -sign * 0.8], 20);
            }
            push_phase(&mut script, [-0.2, 0.0], 30);
        }
        ReferenceShape::Square => {
            // Spin up, then four straights each followed by a counter-
            // clockwise quarter turn (trapezoidal yaw profile peaking at
            // 0.5 rad/s), brake.
            push_phase(&mut script, [0.2, 0.0], 30);
            for _ in 0..4 {
                push_phase(&mut script, [0.0, 0.0], 30);
                push_phase(&mut script, [0.0, 0.5], 20);
                push_phase(&mut script, [0.0, 0.0], 43);
                push_phase(&mut script, [0.0, -0.5], 20);
            }
            push_phase(&mut script, [-0.2, 0.0], 30);
        }
    }
    script
}

/// Simulates the ground-truth dynamic robot tracking the named reference
/// script `n` times from rest at the origin. All runs share the identical
/// nominal trajectory and differ only in independently drawn sensor noise
/// (`noise_pos` meters, `noise_theta` radians, both standard deviations).
pub fn reference_runs(
    shape: ReferenceShape,
    n: usize,
    noise_pos: f64,
    noise_theta: f64,
    seed: u64,
) -> Result<Vec<RawRecording>, ExperimentError> {
    if n < 1 {
        return Err(ExperimentError::BadSpec("need at least one reference run".to_string()));
    }
    if !(noise_pos >= 0.0 && noise_theta >= 0.0) {
        return Err(ExperimentError::BadSpec("noise levels must be nonnegative".to_string()));
    }
    let script = reference_script(shape);
    let substeps = (REFERENCE_SENSOR_RATE * REFERENCE_DT).round() as usize;
    let sensor_dt = 1.0 / REFERENCE_SENSOR_RATE;

    // Nominal trajectory at the sensor rate, shared by all runs.
    let mut nominal = Vec::with_capacity(script.len() * substeps + 1);
    let mut state = FullState::from_slice(&[0.0; 5]);
    nominal.push(state);
    for &u in &script {
        let input = AccelInput::new(u[0], u[1]);
        for _ in 0..substeps {
            state = dynamic_zoh_step(state, input, sensor_dt);
            nominal.push(state);
        }
    }

    let inputs: Vec<InputSample> = script
        .iter()
        .enumerate()
        .map(|(k, u)| InputSample { t: k as f64 * REFERENCE_DT, u1: u[0], u2: u[1] })
        .collect();
    let noise_p = Normal::new(0.0, noise_pos)
        .map_err(|_| ExperimentError::BadSpec("bad position noise".to_string()))?;
    let noise_t = Normal::new(0.0, noise_theta)
        .map_err(|_| ExperimentError::BadSpec("bad heading noise".to_string()))?;

    let mut runs = Vec::with_capacity(n);
    for run in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(run as u64));
        let poses: Vec<PoseSample> = nominal
            .iter()
            .enumerate()
            .map(|(tick, s)| {
                let e1 = noise_p.sample(&mut rng);
                let e2 = noise_p.sample(&mut rng);
                let e3 = noise_t.sample(&mut rng);
                PoseSample {
                    t: tick as f64 * sensor_dt,
                    x1: s.pose.x1 + e1,
                    x2: s.pose.x2 + e2,
                    theta: normalize_angle(s.pose.theta + e3),
                }
            })
            .collect();
        let segments = vec![Segment {
            start_tick: 0,
            end_tick: poses.len() - 1,
            basis: None,
            profile: ProfileKind::Constant,
        }];
        runs.push(RawRecording {
            metadata: vec![
                ("tool".to_string(), crate::TOOL_VERSION.to_string()),
                ("model".to_string(), ModelKind::Dynamic.name().to_string()),
                ("shape".to_string(), shape.name().to_string()),
                ("run".to_string(), run.to_string()),
                ("seed".to_string(), seed.to_string()),
                ("dt".to_string(), format!("{REFERENCE_DT:.17e}")),
                ("fs".to_string(), format!("{REFERENCE_SENSOR_RATE:.17e}")),
                ("noise_pos".to_string(), format!("{noise_pos:.17e}")),
                ("noise_theta".to_string(), format!("{noise_theta:.17e}")),
            ],
            poses,
            inputs: inputs.clone(),
            segments,
        });
    }
    Ok(runs)
}

/// Open-loop study configuration.
pub struct OpenLoopStudySpec<'a> {
    /// Training recording (disjoint from the evaluation runs).
    pub training: &'a RawRecording,
    /// Evaluation runs (for instance from [`reference_runs`]).
    pub runs: &'a [RawRecording],
    pub model: ModelKind,
    pub dictionaries: Vec<Dictionary>,
    /// Smoothing windows to study (sensor samples; 1 disables smoothing).
    pub windows: Vec<usize>,
    /// Maximum lookahead in prediction steps.
    pub horizon: usize,
    /// Prediction interval; must equal the recordings' control interval so
    /// inputs are constant over every predicted step.
    pub pair_dt: f64,
    /// Regress a drift operator (dynamic recordings) or pin it to the
    /// identity (kinematic ones).
    pub drift: bool,
    pub regression: RegressionOptions,
}

/// Prediction errors of one (dictionary, window, mode) combination.
///
/// Series are indexed by start index; tensors by `[start][step - 1]` with
/// `step` the lookahead in prediction intervals. Aggregation is over runs:
/// `mean_*` averages, `max_*` maximizes. Velocity errors are empty for the
/// kinematic model.
#[derive(Debug, Clone)]
pub struct OpenLoopEntry {
    pub dictionary: String,
    pub window: usize,
    /// `proj`, `noproj`, or `nominal`.
    pub mode: &'static str,
    pub one_step_translational: Vec<f64>,
    pub one_step_rotational: Vec<f64>,
    pub one_step_velocity: Vec<f64>,
    pub mean_translational: Vec<Vec<f64>>,
    pub max_translational: Vec<Vec<f64>>,
    pub mean_rotational: Vec<Vec<f64>>,
    pub max_rotational: Vec<Vec<f64>>,
    pub mean_velocity: Vec<Vec<f64>>,
    pub max_velocity: Vec<Vec<f64>>,
}

impl OpenLoopEntry {
    /// Largest translational error over all start indices at the given
    /// lookahead (prediction steps).
    pub fn worst_translational_at(&self, step: usize) -> f64 {
        self.max_translational.iter().map(|row| row[step - 1]).fold(0.0, f64::max)
    }

    /// Largest rotational error over all start indices at the given
    /// lookahead.
    pub fn worst_rotational_at(&self, step: usize) -> f64 {
        self.max_rotational.iter().map(|row| row[step - 1]).fold(0.0, f64::max)
    }
}

/// Result of an open-loop study.
#[derive(Debug, Clone)]
pub struct OpenLoopReport {
    pub pair_dt: f64,
    pub horizon: usize,
    pub entries: Vec<OpenLoopEntry>,
}

impl OpenLoopReport {
    pub fn entry(&self, dictionary: &str, window: usize, mode: &str) -> Option<&OpenLoopEntry> {
        self.entries
            .iter()
            .find(|e| e.dictionary == dictionary && e.window == window && e.mode == mode)
    }
}

/// Raw per-run error tensors being accumulated for one mode.
struct ErrorAccumulator {
    runs: usize,
    /// `[start][step-1]` sums and maxima per error kind.
    sum: [Vec<Vec<f64>>; 3],
    max: [Vec<Vec<f64>>; 3],
}

impl ErrorAccumulator {
    fn new(starts: usize, horizon: usize) -> Self {
        let zeros = vec![vec![0.0; horizon]; starts];
        ErrorAccumulator { runs: 0, sum: std::array::from_fn(|_| zeros.clone()), max: std::array::from_fn(|_| zeros.clone()) }
    }

    fn record(&mut self, start: usize, step: usize, errors: [f64; 3]) {
        for (kind, err) in errors.iter().enumerate() {
            self.sum[kind][start][step - 1] += err;
            let slot = &mut self.max[kind][start][step - 1];
            if *err > *slot {
                *slot = *err;
            }
        }
    }

    fn finish(
        self,
        dictionary: String,
        window: usize,
        mode: &'static str,
        velocities: bool,
    ) -> OpenLoopEntry {
        let n = self.runs as f64;
        let mean =
            |kind: usize| -> Vec<Vec<f64>> {
                self.sum[kind]
                    .iter()
                    .map(|row| row.iter().map(|v| v / n).collect())
                    .collect()
            };
        let (mean_t, mean_r, mean_v) = (mean(0), mean(1), mean(2));
        let one = |tensor: &Vec<Vec<f64>>| tensor.iter().map(|row| row[0]).collect::<Vec<f64>>();
        OpenLoopEntry {
            dictionary,
            window,
            mode,
            one_step_translational: one(&mean_t),
            one_step_rotational: one(&mean_r),
            one_step_velocity: if velocities { one(&mean_v) } else { Vec::new() },
            mean_translational: mean_t,
            max_translational: self.max[0].clone(),
            mean_rotational: mean_r,
            max_rotational: self.max[1].clone(),
            mean_velocity: if velocities { mean_v } else { Vec::new() },
            max_velocity: if velocities { self.max[2].clone() } else { Vec::new() },
        }
    }
}

/// Compares surrogate predictions (with and without per-step reprojection)
/// and the nominal model against the recorded truth of every run, for every
/// dictionary and smoothing window.
pub fn open_loop_study(spec: &OpenLoopStudySpec<'_>) -> Result<OpenLoopReport, ExperimentError> {
    if spec.horizon < 1 {
        return Err(ExperimentError::BadSpec("horizon must be at least 1".to_string()));
    }
    if spec.runs.is_empty() {
        return Err(ExperimentError::BadSpec("need at least one evaluation run".to_string()));
    }
    if spec.windows.is_empty() || spec.dictionaries.is_empty() {
        return Err(ExperimentError::BadSpec(
            "need at least one window and one dictionary".to_string(),
        ));
    }
    for dict in &spec.dictionaries {
        if dict.arity() != spec.model.arity() {
            return Err(ExperimentError::BadSpec(format!(
                "dictionary {} expects {} state components, model {} provides {}",
                dict.name(),
                dict.arity(),
                spec.model.name(),
                spec.model.arity()
            )));
        }
    }
    let arity = spec.model.arity();
    let mut entries = Vec::new();

    for &window in &spec.windows {
        let post = PostprocessSpec {
            window,
            pair_dt: spec.pair_dt,
            density: PairDensity::SensorRate,
        };
        let dataset = build_dataset(spec.training, &post, spec.model)?;

        // Truth series and aligned prediction start indices per run.
        let mut truths: Vec<Vec<Option<Vec<f64>>>> = Vec::with_capacity(spec.runs.len());
        let mut run_inputs: Vec<Vec<[f64; 2]>> = Vec::with_capacity(spec.runs.len());
        let mut starts: Option<Vec<usize>> = None;
        let mut stride = 0usize;
        for run in spec.runs {
            let control_dt = run.metadata_f64("dt")?;
            let sensor_rate = run.metadata_f64("fs")?;
            if (control_dt - spec.pair_dt).abs() > 1e-9 {
                return Err(ExperimentError::BadSpec(format!(
                    "prediction interval {} must equal the recorded control interval {}",
                    spec.pair_dt, control_dt
                )));
            }
            stride = (sensor_rate * spec.pair_dt).round() as usize;
            let series = state_series(run, &post, spec.model)?;
            let n_ticks = run.poses.len();
            let mut by_tick: Vec<Option<Vec<f64>>> = vec![None; n_ticks];
            for (tick, state) in series {
                by_tick[tick] = Some(state);
            }
            // Control-aligned ticks whose whole prediction window is
            // defined.
            let run_starts: Vec<usize> = (0..n_ticks)
                .step_by(stride)
                .filter(|&k| {
                    (0..=spec.horizon).all(|j| {
                        let tick = k + j * stride;
                        tick < n_ticks && by_tick[tick].is_some()
                    }) && k / stride + spec.horizon <= run.inputs.len()
                })
                .collect();
            match &starts {
                None => starts = Some(run_starts),
                Some(existing) => {
                    if *existing != run_starts {
                        return Err(ExperimentError::BadSpec(
                            "evaluation runs must share one timeline".to_string(),
                        ));
                    }
                }
            }
            run_inputs
                .push(run.inputs.iter().map(|s| [s.u1, s.u2]).collect());
            truths.push(by_tick);
        }
        let starts = starts.expect("at least one run");
        if starts.is_empty() {
            return Err(ExperimentError::BadSpec(
                "no aligned prediction windows; runs are too short for the horizon".to_string(),
            ));
        }

        // Error of a predicted state against the truth at one tick.
        let errors_at = |prediction: &[f64], truth: &[f64]| -> [f64; 3] {
            let translational =
                ((prediction[0] - truth[0]).powi(2) + (prediction[1] - truth[1]).powi(2)).sqrt();
            let rotational = normalize_angle(prediction[2] - truth[2]).abs();
            let velocity = if arity == 5 {
                ((prediction[3] - truth[3]).powi(2) + (prediction[4] - truth[4]).powi(2)).sqrt()
            } else {
                0.0
            };
            [translational, rotational, velocity]
        };

        // Nominal model once per window.
        let mut nominal = ErrorAccumulator::new(starts.len(), spec.horizon);
        for (run_index, by_tick) in truths.iter().enumerate() {
            nominal.runs += 1;
            for (s_index, &k) in starts.iter().enumerate() {
                let mut state = by_tick[k].clone().expect("start is defined");
                for j in 1..=spec.horizon {
                    let u = run_inputs[run_index][k / stride + j - 1];
                    state = match spec.model {
                        ModelKind::Kinematic => kinematic_zoh_step(
                            Pose::from_slice(&state),
                            VelocityInput::new(u[0], u[1]),
                            spec.pair_dt,
                        )
                        .to_array()
                        .to_vec(),
                        ModelKind::Dynamic => dynamic_zoh_step(
                            FullState::from_slice(&state),
                            AccelInput::new(u[0], u[1]),
                            spec.pair_dt,
                        )
                        .to_array()
                        .to_vec(),
                    };
                    let truth = by_tick[k + j * stride].as_ref().expect("window is defined");
                    nominal.record(s_index, j, errors_at(&state, truth));
                }
            }
        }
        entries.push(nominal.finish("-".to_string(), window, "nominal", arity == 5));

        for dict in &spec.dictionaries {
            let surrogate = fit_surrogate(dict, &dataset, spec.drift, spec.regression)?;
            for (mode, reproject) in [("proj", true), ("noproj", false)] {
                let mut acc = ErrorAccumulator::new(starts.len(), spec.horizon);
                for (run_index, by_tick) in truths.iter().enumerate() {
                    acc.runs += 1;
                    for (s_index, &k) in starts.iter().enumerate() {
                        let x0 = by_tick[k].as_ref().expect("start is defined");
                        let inputs: Vec<[f64; 2]> = (0..spec.horizon)
                            .map(|j| run_inputs[run_index][k / stride + j])
                            .collect();
                        let predicted = surrogate.predict(x0, &inputs, reproject)?;
                        for j in 1..=spec.horizon {
                            let truth =
                                by_tick[k + j * stride].as_ref().expect("window is defined");
                            acc.record(s_index, j, errors_at(&predicted[j], truth));
                        }
                    }
                }
                entries.push(acc.finish(dict.name().to_string(), window, mode, arity == 5));
            }
        }
    }

    Ok(OpenLoopReport { pair_dt: spec.pair_dt, horizon: spec.horizon, entries })
}

/// Writes an open-loop report as CSV: one row per (entry, start, step).
pub fn write_open_loop_csv(
    report: &OpenLoopReport,
    header: &[(String, String)],
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut out = String::new();
    for (key, value) in header {
        out.push_str(&format!("# {key}={value}\n"));
    }
    out.push_str(
        "dictionary,window,mode,start,step,mean_translational,max_translational,\
         mean_rotational,max_rotational,mean_velocity,max_velocity\n",
    );
    for e in &report.entries {
        for start in 0..e.mean_translational.len() {
            for step in 1..=report.horizon {
                let (mv, xv) = if e.mean_velocity.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    (e.mean_velocity[start][step - 1], e.max_velocity[start][step - 1])
                };
                out.push_str(&format!(
                    "{},{},{},{},{},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                    e.dictionary,
                    e.window,
                    e.mode,
                    start,
                    step,
                    e.mean_translational[start][step - 1],
                    e.max_translational[start][step - 1],
                    e.mean_rotational[start][step - 1],
                    e.max_rotational[start][step - 1],
                    mv,
                    xv,
                ));
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// One Monte-Carlo configuration: a stage cost paired with a prediction
/// model (the reprojection mode is part of the model).
pub struct MonteCarloConfig<'a> {
    pub label: String,
    pub cost: StageCost,
    pub model: PredictionModel<'a>,
}

/// Monte-Carlo closed-loop study configuration.
pub struct MonteCarloSpec<'a> {
    /// Ground-truth plant.
    pub plant: ModelKind,
    pub configs: Vec<MonteCarloConfig<'a>>,
    pub draws: usize,
    /// The |x2| deviation is recorded at this time (also the run duration).
    pub eval_time: f64,
    pub horizon: usize,
    pub dt: f64,
    pub input_box: InputBox,
    /// Initial poses are drawn i.i.d. uniform from this set (uniform heading;
    /// zero initial velocities for the dynamic plant).
    pub initial_set: PoseBox,
    pub goal: GoalFrame,
    pub seed: u64,
    pub options: SolverOptions,
}

/// The empirical distribution of |x2| deviations for one configuration.
/// Solver failures are censored at +infinity rather than dropped.
#[derive(Debug, Clone)]
pub struct EcdfReport {
    pub label: String,
    pub draws: usize,
    pub ecdf: Ecdf,
}

impl EcdfReport {
    /// Fraction of draws at or below the deviation `x`.
    pub fn fraction_below(&self, x: f64) -> f64 {
        self.ecdf.value(x)
    }
}

/// Runs the receding-horizon loop from `draws` random initial states for
/// every configuration (identical draws across configurations) and collects
/// the |x2 - goal| deviations at the evaluation time into ECDFs.
pub fn monte_carlo_closed_loop(
    spec: &MonteCarloSpec<'_>,
) -> Result<Vec<EcdfReport>, ExperimentError> {
    if spec.draws < 1 {
        return Err(ExperimentError::BadSpec("need at least one draw".to_string()));
    }
    if spec.configs.is_empty() {
        return Err(ExperimentError::BadSpec("need at least one configuration".to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let initials: Vec<Vec<f64>> = (0..spec.draws)
        .map(|_| {
            let pose = spec.initial_set.sample(&mut rng);
            match spec.plant {
                ModelKind::Kinematic => vec![pose.x1, pose.x2, pose.theta],
                ModelKind::Dynamic => vec![pose.x1, pose.x2, pose.theta, 0.0, 0.0],
            }
        })
        .collect();

    let mut reports = Vec::with_capacity(spec.configs.len());
    for config in &spec.configs {
        let ocp = OcpSpec {
            horizon: spec.horizon,
            dt: spec.dt,
            input_box: spec.input_box,
            cost: config.cost.clone(),
            goal: spec.goal,
            model: config.model,
            options: spec.options,
        };
        // Parallel over draws; collect() preserves draw order, so the
        // reduction is deterministic.
        let deviations: Vec<f64> = initials
            .par_iter()
            .map(|x0| match closed_loop(&ocp, spec.plant, x0, spec.eval_time) {
                Ok(run) => (run.final_state[1] - spec.goal.x2).abs(),
                Err(_) => f64::INFINITY,
            })
            .collect();
        reports.push(EcdfReport {
            label: config.label.clone(),
            draws: spec.draws,
            ecdf: Ecdf::new(deviations)?,
        });
    }
    Ok(reports)
}

/// Data-efficiency sweep configuration. The Monte-Carlo study is rerun with
/// surrogates refitted from the first `d` control-rate pairs per basis, for
/// every `d` in `sizes`.
pub struct SweepSpec<'a> {
    pub training: &'a RawRecording,
    pub model: ModelKind,
    pub dictionary: Dictionary,
    pub window: usize,
    pub pair_dt: f64,
    pub drift: bool,
    pub regression: RegressionOptions,
    /// Pairs per basis to sweep; every entry must be available.
    pub sizes: Vec<usize>,
    pub cost: StageCost,
    pub draws: usize,
    pub eval_time: f64,
    pub horizon: usize,
    pub input_box: InputBox,
    pub initial_set: PoseBox,
    pub seed: u64,
    pub options: SolverOptions,
}

/// One sweep point.
#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub pairs_per_basis: usize,
    pub report: EcdfReport,
    /// Kolmogorov-Smirnov distance to the full-data baseline ECDF.
    pub ks_to_baseline: f64,
}

/// Runs the sweep. Returns the full-data baseline report and one entry per
/// requested size. Pairs are spaced one sampling interval apart
/// (control-rate density), so `d` pairs correspond to `d * pair_dt` seconds
/// of recorded motion per basis.
pub fn data_efficiency_sweep(
    spec: &SweepSpec<'_>,
) -> Result<(EcdfReport, Vec<SweepEntry>), ExperimentError> {
    let post = PostprocessSpec {
        window: spec.window,
        pair_dt: spec.pair_dt,
        density: PairDensity::ControlRate,
    };
    let dataset = build_dataset(spec.training, &post, spec.model)?;

    let run_mc = |surrogate: &KoopmanSurrogate, label: String| -> Result<EcdfReport, ExperimentError> {
        let mc = MonteCarloSpec {
            plant: spec.model,
            configs: vec![MonteCarloConfig {
                label,
                cost: spec.cost.clone(),
                model: PredictionModel::SurrogateReprojected(surrogate),
            }],
            draws: spec.draws,
            eval_time: spec.eval_time,
            horizon: spec.horizon,
            dt: spec.pair_dt,
            input_box: spec.input_box,
            initial_set: spec.initial_set,
            goal: GoalFrame::origin(),
            seed: spec.seed,
            options: spec.options,
        };
        Ok(monte_carlo_closed_loop(&mc)?.pop().expect("one configuration"))
    };

    let baseline_surrogate =
        fit_surrogate(&spec.dictionary, &dataset, spec.drift, spec.regression)?;
    let baseline = run_mc(&baseline_surrogate, "full".to_string())?;

    let mut entries = Vec::with_capacity(spec.sizes.len());
    for &d in &spec.sizes {
        let surrogate =
            fit_surrogate(&spec.dictionary, &dataset.truncated(d)?, spec.drift, spec.regression)?;
        let report = run_mc(&surrogate, format!("d={d}"))?;
        let ks_to_baseline = report.ecdf.ks_distance(&baseline.ecdf);
        entries.push(SweepEntry { pairs_per_basis: d, report, ks_to_baseline });
    }
    Ok((baseline, entries))
}

/// Writes ECDF reports as CSV: one row per (label, sample index), censored
/// samples written as `inf`.
pub fn write_ecdf_csv(
    reports: &[EcdfReport],
    header: &[(String, String)],
    path: &Path,
) -> Result<(), ExperimentError> {
    let mut out = String::new();
    for (key, value) in header {
        out.push_str(&format!("# {key}={value}\n"));
    }
    out.push_str("label,index,deviation,cumulative\n");
    for report in reports {
        let n = report.ecdf.len() as f64;
        for (index, &value) in report.ecdf.samples().iter().enumerate() {
            let text = if value.is_finite() { format!("{value:.17e}") } else { "inf".to_string() };
            out.push_str(&format!(
                "{},{},{},{:.17e}\n",
                report.label,
                index,
                text,
                (index + 1) as f64 / n
            ));
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

/// Human-readable summary: quantiles and threshold fractions per report.
pub fn summary_text(reports: &[EcdfReport], thresholds: &[f64]) -> String {
    let mut out = String::new();
    for report in reports {
        out.push_str(&format!("{} ({} draws):\n", report.label, report.draws));
        for &p in &[0.5, 0.75, 0.9] {
            match report.ecdf.quantile(p) {
                Ok(q) if q.is_finite() => {
                    out.push_str(&format!("  {:>3.0}% quantile: {:.6} m\n", p * 100.0, q))
                }
                _ => out.push_str(&format!("  {:>3.0}% quantile: censored\n", p * 100.0)),
            }
        }
        for &threshold in thresholds {
            out.push_str(&format!(
                "  below {:.4} m: {:.1}%\n",
                threshold,
                report.fraction_below(threshold) * 100.0
            ));
        }
        if report.ecdf.censored_fraction() > 0.0 {
            out.push_str(&format!(
                "  solver failures: {:.1}%\n",
                report.ecdf.censored_fraction() * 100.0
            ));
        }
    }
    out
}
