//! Batch command-line front end: wires structured run configurations to the
//! sampling → post-processing → identification → control pipeline with
//! file-based artifacts and reproducible seeds.
//!
//! Configuration comes from an INI-like file (`--config`), individual
//! `--set section.key=value` overrides, and per-command convenience flags
//! (applied last). The effective configuration is hashed and stamped, with
//! the tool version and seed, into a provenance header at the top of every
//! output file. Outputs land in `--out`, the `KOOPMAN_MPC_OUT` directory, or
//! the working directory, in that order of preference.
//!
//! Exit codes: 0 success, 2 configuration error, 3 infeasible sampling
//! specification, 4 regression or rollout failure, 5 i/o failure. Solver
//! failures inside Monte-Carlo studies are data (censored entries in the
//! reports), not exit codes.

use clap::{Parser, Subcommand};
use koopman_mpc::config::{fnv1a64, Config, ConfigError};
use koopman_mpc::cost::{ce_default, ds_default, me_default, CostError, GoalFrame, StageCost};
use koopman_mpc::dictionary::{by_name, registry, Dictionary};
use koopman_mpc::edmd::{fit_surrogate, EdmdError, KoopmanSurrogate, RegressionOptions};
use koopman_mpc::experiments::{
    data_efficiency_sweep, monte_carlo_closed_loop, open_loop_study, reference_runs,
    summary_text, write_ecdf_csv, write_open_loop_csv, ExperimentError, MonteCarloConfig,
    MonteCarloSpec, OpenLoopStudySpec, ReferenceShape, SweepSpec, REFERENCE_DT,
};
use koopman_mpc::mpc::{
    closed_loop, write_trajectory_csv, OcpError, OcpSpec, PredictionModel, SolverOptions,
};
use koopman_mpc::postprocess::{build_dataset, PairDensity, PostprocessError, PostprocessSpec};
use koopman_mpc::recording::{RawRecording, RecordingError};
use koopman_mpc::sampling::{sample, PoseBox, SamplingError, SamplingSpec};
use koopman_mpc::vehicle::{InputBox, ModelKind};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "koopman-mpc", version, about = "Bilinear Koopman surrogate identification \
and predictive control for differential-drive robots")]
struct Cli {
    /// Structured configuration file (INI-like `[section]` / `key = value`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: $KOOPMAN_MPC_OUT, then the working directory).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Cap the worker-thread count for parallel studies.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic training recording.
    Sample {
        /// Robot model: `kinematic` or `dynamic`.
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file name.
        #[arg(long)]
        output: Option<String>,
    },
    /// Fit a bilinear surrogate from a recording and write a model file.
    Fit {
        /// Training recording (falls back to the `fit.recording` key).
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Dictionary name (D5t, D8Eul, D10m, D13t, D12f).
        #[arg(long)]
        dict: Option<String>,
        /// Moving-average window width in sensor samples.
        #[arg(long)]
        window: Option<usize>,
        /// Truncate every basis partition to this many pairs before fitting.
        #[arg(long = "per-basis")]
        per_basis: Option<usize>,
        #[arg(long)]
        output: Option<String>,
    },
    /// Open-loop prediction-error study on noised reference runs.
    Openloop {
        /// Training recording (falls back to `openloop.recording`).
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Reference trajectory shape: `infinity` or `square`.
        #[arg(long)]
        shape: Option<String>,
        /// Number of re-noised reference runs.
        #[arg(long)]
        runs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        output: Option<String>,
    },
    /// Receding-horizon run from one initial state; writes a trajectory CSV.
    Closedloop {
        /// Fitted model file (required unless `--mode nominal`).
        #[arg(long = "model-file")]
        model_file: Option<PathBuf>,
        /// Prediction mode: `proj`, `noproj`, or `nominal`.
        #[arg(long)]
        mode: Option<String>,
        /// Prediction horizon.
        #[arg(long = "H")]
        horizon: Option<usize>,
        /// Sampling interval (s).
        #[arg(long)]
        dt: Option<f64>,
        /// Initial state, comma-separated (pose or pose+velocities).
        #[arg(long, allow_hyphen_values = true)]
        x0: Option<String>,
        /// Stage cost: `me`, `ce`, or `ds`.
        #[arg(long)]
        cost: Option<String>,
        /// Run length (s).
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        output: Option<String>,
    },
    /// Monte-Carlo closed-loop study; one ECDF file per configuration.
    Montecarlo {
        /// Fitted model file (falls back to `montecarlo.model_file`).
        #[arg(long = "model-file")]
        model_file: Option<PathBuf>,
        /// Configurations, e.g. `me-proj,ce-proj,ds-proj,me-noproj`.
        #[arg(long)]
        configs: Option<String>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file prefix.
        #[arg(long)]
        output: Option<String>,
    },
    /// Data-efficiency sweep: refit at several pairs-per-basis counts.
    Sweep {
        /// Training recording (falls back to `sweep.recording`).
        #[arg(long)]
        recording: Option<PathBuf>,
        /// Pairs-per-basis counts, e.g. `10,50,100`.
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long)]
        draws: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output file prefix.
        #[arg(long)]
        output: Option<String>,
    },
}

/// Failure classes carrying the process exit code.
#[derive(Debug)]
enum Failure {
    Config(String),
    Infeasible(String),
    Regression(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Infeasible(_) => 3,
            Failure::Regression(_) => 4,
            Failure::Io(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Infeasible(m) | Failure::Regression(m)
            | Failure::Io(m) => m,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(err: ConfigError) -> Self {
        match err {
            ConfigError::Io(_) => Failure::Io(err.to_string()),
            _ => Failure::Config(err.to_string()),
        }
    }
}

impl From<SamplingError> for Failure {
    fn from(err: SamplingError) -> Self {
        match err {
            SamplingError::Infeasible { .. } => Failure::Infeasible(err.to_string()),
            SamplingError::InvalidSpec(_) => Failure::Config(err.to_string()),
        }
    }
}

impl From<RecordingError> for Failure {
    fn from(err: RecordingError) -> Self {
        match err {
            RecordingError::Io(_) => Failure::Io(err.to_string()),
            _ => Failure::Config(err.to_string()),
        }
    }
}

impl From<PostprocessError> for Failure {
    fn from(err: PostprocessError) -> Self {
        match err {
            PostprocessError::Io(_) => Failure::Io(err.to_string()),
            _ => Failure::Config(err.to_string()),
        }
    }
}

impl From<EdmdError> for Failure {
    fn from(err: EdmdError) -> Self {
        match err {
            EdmdError::Io(_) => Failure::Io(err.to_string()),
            EdmdError::ModelFormat { .. } | EdmdError::UnknownDictionary { .. } => {
                Failure::Config(err.to_string())
            }
            _ => Failure::Regression(err.to_string()),
        }
    }
}

impl From<OcpError> for Failure {
    fn from(err: OcpError) -> Self {
        match err {
            OcpError::BadSpec(_) => Failure::Config(err.to_string()),
            OcpError::Io(_) => Failure::Io(err.to_string()),
            _ => Failure::Regression(err.to_string()),
        }
    }
}

impl From<CostError> for Failure {
    fn from(err: CostError) -> Self {
        Failure::Config(err.to_string())
    }
}

impl From<ExperimentError> for Failure {
    fn from(err: ExperimentError) -> Self {
        match err {
            ExperimentError::BadSpec(_) => Failure::Config(err.to_string()),
            ExperimentError::Recording(e) => e.into(),
            ExperimentError::Postprocess(e) => e.into(),
            ExperimentError::Fit(e) => e.into(),
            ExperimentError::Solve(e) => e.into(),
            ExperimentError::Ecdf(_) => Failure::Regression(err.to_string()),
            ExperimentError::Io(_) => Failure::Io(err.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(err: std::io::Error) -> Self {
        Failure::Io(err.to_string())
    }
}

/// Every key the configuration may define, by section; strays are rejected
/// before any pipeline stage starts.
const SCHEMA: &[(&str, &[&str])] = &[
    (
        "sample",
        &[
            "model", "seed", "segments_per_basis", "dt", "sensor_rate", "noise_pos",
            "noise_theta", "min_segment_steps", "max_segment_steps", "max_rejects", "pose_x1",
            "pose_x2", "velocity_v", "velocity_omega", "bases", "input_lo", "input_hi",
            "transfer_speed", "transfer_yaw_rate", "transfer_accel", "transfer_yaw_accel",
            "output",
        ],
    ),
    (
        "fit",
        &[
            "recording", "model", "dictionary", "window", "pair_dt", "density", "drift",
            "ridge", "per_basis", "output",
        ],
    ),
    (
        "openloop",
        &[
            "recording", "model", "shape", "runs", "noise_pos", "noise_theta", "seed",
            "dictionaries", "windows", "horizon", "pair_dt", "drift", "ridge", "output",
        ],
    ),
    (
        "closedloop",
        &[
            "model_file", "mode", "model", "cost", "horizon", "dt", "duration", "x0", "goal",
            "input_lo", "input_hi", "max_iterations", "pg_tolerance", "saddle_probe", "seed",
            "output",
        ],
    ),
    (
        "montecarlo",
        &[
            "model_file", "plant", "configs", "draws", "eval_time", "horizon", "dt",
            "input_lo", "input_hi", "x1_box", "x2_box", "goal", "seed", "thresholds",
            "max_iterations", "pg_tolerance", "saddle_probe", "output",
        ],
    ),
    (
        "sweep",
        &[
            "recording", "model", "dictionary", "window", "pair_dt", "drift", "ridge",
            "sizes", "cost", "draws", "eval_time", "horizon", "input_lo", "input_hi",
            "x1_box", "x2_box", "seed", "max_iterations", "pg_tolerance", "saddle_probe",
            "output",
        ],
    ),
];

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    if let Some(jobs) = cli.jobs {
        if jobs < 1 {
            return Err(Failure::Config("--jobs must be at least 1".to_string()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Config(format!("worker pool: {e}")))?;
    }

    let mut config = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    for spec in &cli.set {
        config.apply_override(spec)?;
    }
    fold_flags(&mut config, &cli.command);
    config.validate_known(SCHEMA)?;

    let out_dir = cli
        .out
        .or_else(|| std::env::var_os("KOOPMAN_MPC_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    match &cli.command {
        Command::Sample { .. } => cmd_sample(&config, &out_dir),
        Command::Fit { .. } => cmd_fit(&config, &out_dir),
        Command::Openloop { .. } => cmd_openloop(&config, &out_dir),
        Command::Closedloop { .. } => cmd_closedloop(&config, &out_dir),
        Command::Montecarlo { .. } => cmd_montecarlo(&config, &out_dir),
        Command::Sweep { .. } => cmd_sweep(&config, &out_dir),
    }
}

/// Folds convenience flags into the configuration (after `--set`, so flags
/// win), keeping one code path and a provenance hash that reflects the
/// effective run.
fn fold_flags(config: &mut Config, command: &Command) {
    let mut put = |section: &str, key: &str, value: String| config.set(section, key, &value);
    match command {
        Command::Sample { model, seed, output } => {
            if let Some(v) = model {
                put("sample", "model", v.clone());
            }
            if let Some(v) = seed {
                put("sample", "seed", v.to_string());
            }
            if let Some(v) = output {
                put("sample", "output", v.clone());
            }
        }
        Command::Fit { recording, dict, window, per_basis, output } => {
            if let Some(v) = recording {
                put("fit", "recording", v.display().to_string());
            }
            if let Some(v) = dict {
                put("fit", "dictionary", v.clone());
            }
            if let Some(v) = window {
                put("fit", "window", v.to_string());
            }
            if let Some(v) = per_basis {
                put("fit", "per_basis", v.to_string());
            }
            if let Some(v) = output {
                put("fit", "output", v.clone());
            }
        }
        Command::Openloop { recording, shape, runs, seed, output } => {
            if let Some(v) = recording {
                put("openloop", "recording", v.display().to_string());
            }
            if let Some(v) = shape {
                put("openloop", "shape", v.clone());
            }
            if let Some(v) = runs {
                put("openloop", "runs", v.to_string());
            }
            if let Some(v) = seed {
                put("openloop", "seed", v.to_string());
            }
            if let Some(v) = output {
                put("openloop", "output", v.clone());
            }
        }
        Command::Closedloop { model_file, mode, horizon, dt, x0, cost, duration, output } => {
            if let Some(v) = model_file {
                put("closedloop", "model_file", v.display().to_string());
            }
            if let Some(v) = mode {
                put("closedloop", "mode", v.clone());
            }
            if let Some(v) = horizon {
                put("closedloop", "horizon", v.to_string());
            }
            if let Some(v) = dt {
                put("closedloop", "dt", v.to_string());
            }
            if let Some(v) = x0 {
                put("closedloop", "x0", v.clone());
            }
            if let Some(v) = cost {
                put("closedloop", "cost", v.clone());
            }
            if let Some(v) = duration {
                put("closedloop", "duration", v.to_string());
            }
            if let Some(v) = output {
                put("closedloop", "output", v.clone());
            }
        }
        Command::Montecarlo { model_file, configs, draws, seed, output } => {
            if let Some(v) = model_file {
                put("montecarlo", "model_file", v.display().to_string());
            }
            if let Some(v) = configs {
                put("montecarlo", "configs", v.clone());
            }
            if let Some(v) = draws {
                put("montecarlo", "draws", v.to_string());
            }
            if let Some(v) = seed {
                put("montecarlo", "seed", v.to_string());
            }
            if let Some(v) = output {
                put("montecarlo", "output", v.clone());
            }
        }
        Command::Sweep { recording, sizes, draws, seed, output } => {
            if let Some(v) = recording {
                put("sweep", "recording", v.display().to_string());
            }
            if let Some(v) = sizes {
                put("sweep", "sizes", v.clone());
            }
            if let Some(v) = draws {
                put("sweep", "draws", v.to_string());
            }
            if let Some(v) = seed {
                put("sweep", "seed", v.to_string());
            }
            if let Some(v) = output {
                put("sweep", "output", v.clone());
            }
        }
    }
}

/// Provenance entries stamped at the top of every output file.
fn provenance(config: &Config, seed: u64) -> Vec<(String, String)> {
    vec![
        ("tool_version".to_string(), env!("CARGO_PKG_VERSION").to_string()),
        ("config_hash".to_string(), format!("{:016x}", config.hash())),
        ("seed".to_string(), seed.to_string()),
    ]
}

fn parse_model_kind(name: &str) -> Result<ModelKind, Failure> {
    match name {
        "kinematic" => Ok(ModelKind::Kinematic),
        "dynamic" => Ok(ModelKind::Dynamic),
        other => Err(Failure::Config(format!(
            "unknown model `{other}` (expected `kinematic` or `dynamic`)"
        ))),
    }
}

fn parse_density(name: &str) -> Result<PairDensity, Failure> {
    match name {
        "sensor" => Ok(PairDensity::SensorRate),
        "control" => Ok(PairDensity::ControlRate),
        other => Err(Failure::Config(format!(
            "unknown pair density `{other}` (expected `sensor` or `control`)"
        ))),
    }
}

fn resolve_dictionary(name: &str) -> Result<Dictionary, Failure> {
    by_name(name).ok_or_else(|| {
        let known: Vec<String> = registry().iter().map(|d| d.name().to_string()).collect();
        Failure::Config(format!("unknown dictionary `{name}` (known: {})", known.join(", ")))
    })
}

/// Reads a `lo,hi` or `a,b` pair from the configuration.
fn pair_key(
    config: &Config,
    section: &str,
    key: &str,
    default: [f64; 2],
) -> Result<[f64; 2], Failure> {
    let list = config.get_f64_list(section, key, &default)?;
    if list.len() != 2 {
        return Err(Failure::Config(format!(
            "{section}.{key} must hold exactly two comma-separated numbers"
        )));
    }
    Ok([list[0], list[1]])
}

/// Reads an input box from `input_lo` / `input_hi` keys.
fn input_box_keys(
    config: &Config,
    section: &str,
    default: InputBox,
) -> Result<InputBox, Failure> {
    let lo = pair_key(config, section, "input_lo", default.lo)?;
    let hi = pair_key(config, section, "input_hi", default.hi)?;
    Ok(InputBox { lo, hi })
}

/// Reads solver options from a section's optional keys.
fn solver_options_keys(config: &Config, section: &str) -> Result<SolverOptions, Failure> {
    let defaults = SolverOptions::default();
    Ok(SolverOptions {
        max_iterations: config.get_usize(section, "max_iterations", defaults.max_iterations)?,
        pg_tolerance: config.get_f64(section, "pg_tolerance", defaults.pg_tolerance)?,
        saddle_probe: config.get_bool(section, "saddle_probe", defaults.saddle_probe)?,
        ..defaults
    })
}

/// Reads a goal pose and pads it to the requested state arity.
fn goal_keys(config: &Config, section: &str, arity: usize) -> Result<(GoalFrame, Vec<f64>), Failure> {
    let goal = config.get_f64_list(section, "goal", &[0.0, 0.0, 0.0])?;
    if goal.len() != 3 {
        return Err(Failure::Config(format!("{section}.goal must be `x1,x2,theta`")));
    }
    let frame = GoalFrame { x1: goal[0], x2: goal[1], theta: goal[2] };
    let mut state = goal;
    state.resize(arity, 0.0);
    Ok((frame, state))
}

/// Builds the stage cost named in the configuration.
fn cost_by_name(
    name: &str,
    arity: usize,
    dictionary: Option<&Dictionary>,
    goal_state: &[f64],
) -> Result<StageCost, Failure> {
    match name {
        "me" => Ok(me_default(arity)),
        "ce" => Ok(ce_default(arity)),
        "ds" => {
            let dict = dictionary.ok_or_else(|| {
                Failure::Config("the ds cost needs a fitted surrogate model".to_string())
            })?;
            Ok(ds_default(dict, goal_state)?)
        }
        other => Err(Failure::Config(format!(
            "unknown cost `{other}` (expected `me`, `ce`, or `ds`)"
        ))),
    }
}

fn ridge_key(config: &Config, section: &str) -> Result<RegressionOptions, Failure> {
    Ok(RegressionOptions {
        ridge: match config.get(section, "ridge") {
            Some(_) => Some(config.require_f64(section, "ridge")?),
            None => None,
        },
    })
}

fn cmd_sample(config: &Config, out_dir: &Path) -> Result<(), Failure> {
    let model = parse_model_kind(config.get_str("sample", "model", "kinematic"))?;
    let mut spec = match model {
        ModelKind::Kinematic => SamplingSpec::kinematic_default(),
        ModelKind::Dynamic => SamplingSpec::dynamic_default(),
    };
    spec.seed = config.get_u64("sample", "seed", spec.seed)?;
    spec.segments_per_basis =
        config.get_usize("sample", "segments_per_basis", spec.segments_per_basis)?;
    spec.dt = config.get_f64("sample", "dt", spec.dt)?;
    spec.sensor_rate = config.get_f64("sample", "sensor_rate", spec.sensor_rate)?;
    spec.noise_pos = config.get_f64("sample", "noise_pos", spec.noise_pos)?;
    spec.noise_theta = config.get_f64("sample", "noise_theta", spec.noise_theta)?;
    spec.min_segment_steps =
        config.get_usize("sample", "min_segment_steps", spec.min_segment_steps)?;
    spec.max_segment_steps =
        config.get_usize("sample", "max_segment_steps", spec.max_segment_steps)?;
    spec.max_rejects = config.get_usize("sample", "max_rejects", spec.max_rejects)?;
    spec.pose_box.x1 = pair_key(config, "sample", "pose_x1", spec.pose_box.x1)?;
    spec.pose_box.x2 = pair_key(config, "sample", "pose_x2", spec.pose_box.x2)?;
    spec.velocity_box.v = pair_key(config, "sample", "velocity_v", spec.velocity_box.v)?;
    spec.velocity_box.omega =
        pair_key(config, "sample", "velocity_omega", spec.velocity_box.omega)?;
    spec.transfer_speed = config.get_f64("sample", "transfer_speed", spec.transfer_speed)?;
    spec.transfer_yaw_rate =
        config.get_f64("sample", "transfer_yaw_rate", spec.transfer_yaw_rate)?;
    spec.transfer_accel = config.get_f64("sample", "transfer_accel", spec.transfer_accel)?;
    spec.transfer_yaw_accel =
        config.get_f64("sample", "transfer_yaw_accel", spec.transfer_yaw_accel)?;
    spec.input_box = input_box_keys(config, "sample", spec.input_box)?;
    if let Some(text) = config.get("sample", "bases") {
        let mut bases = Vec::new();
        for part in text.split(';') {
            let mut components = part.split(',');
            let basis = components
                .next()
                .zip(components.next())
                .and_then(|(a, b)| Some([a.trim().parse().ok()?, b.trim().parse().ok()?]));
            match (basis, components.next()) {
                (Some(b), None) => bases.push(b),
                _ => {
                    return Err(Failure::Config(
                        "sample.bases must be `u1,u2;u1,u2;...`".to_string(),
                    ))
                }
            }
        }
        spec.bases = bases;
    }

    let mut recording = sample(&spec)?;
    let mut metadata = provenance(config, spec.seed);
    metadata.append(&mut recording.metadata);
    recording.metadata = metadata;

    let path = out_dir.join(config.get_str("sample", "output", "recording.csv"));
    recording.save(&path)?;

    println!("wrote {}", path.display());
    for (index, basis) in spec.bases.iter().enumerate() {
        let segments: Vec<&koopman_mpc::recording::Segment> =
            recording.segments.iter().filter(|s| s.basis == Some(index)).collect();
        let ticks: usize = segments.iter().map(|s| s.end_tick - s.start_tick).sum();
        let stride = (spec.sensor_rate * spec.dt).round() as usize;
        println!(
            "basis {index} ({}, {}): {} segments, ~{} control-rate pairs",
            basis[0],
            basis[1],
            segments.len(),
            ticks / stride.max(1)
        );
    }
    Ok(())
}

fn cmd_fit(config: &Config, out_dir: &Path) -> Result<(), Failure> {
    let recording_path = PathBuf::from(config.require("fit", "recording")?);
    let recording = RawRecording::load(&recording_path)?;
    let model = match config.get("fit", "model") {
        Some(name) => parse_model_kind(name)?,
        None => parse_model_kind(recording.metadata("model").ok_or_else(|| {
            Failure::Config("recording lacks a model tag; set fit.model".to_string())
        })?)?,
    };
    let defaults = match model {
        ModelKind::Kinematic => PostprocessSpec::kinematic_default(),
        ModelKind::Dynamic => PostprocessSpec::dynamic_default(),
    };
    let post = PostprocessSpec {
        window: config.get_usize("fit", "window", defaults.window)?,
        pair_dt: config.get_f64("fit", "pair_dt", defaults.pair_dt)?,
        density: parse_density(config.get_str(
            "fit",
            "density",
            match defaults.density {
                PairDensity::SensorRate => "sensor",
                PairDensity::ControlRate => "control",
            },
        ))?,
    };
    let drift = config.get_bool("fit", "drift", model == ModelKind::Dynamic)?;
    let dict_name = config.get_str(
        "fit",
        "dictionary",
        match model {
            ModelKind::Kinematic => "D5t",
            ModelKind::Dynamic => "D8Eul",
        },
    );
    let dictionary = resolve_dictionary(dict_name)?;
    let options = ridge_key(config, "fit")?;

    let mut dataset = build_dataset(&recording, &post, model)?;
    if config.get("fit", "per_basis").is_some() {
        let per_basis = config.get_usize("fit", "per_basis", 0)?;
        dataset = dataset.truncated(per_basis)?;
    }
    let surrogate = fit_surrogate(&dictionary, &dataset, drift, options)?;

    let seed = recording.metadata_f64("seed").map(|s| s as u64).unwrap_or(0);
    let mut header = provenance(config, seed);
    header.push((
        "dataset_hash".to_string(),
        format!("{:016x}", fnv1a64(&std::fs::read(&recording_path)?)),
    ));
    header.push(("window".to_string(), post.window.to_string()));
    header.push(("pair_dt".to_string(), format!("{:.17e}", post.pair_dt)));
    header.push((
        "ridge".to_string(),
        match options.ridge {
            Some(value) => format!("{value:.17e}"),
            None => "default".to_string(),
        },
    ));
    let path = out_dir.join(config.get_str("fit", "output", "model.txt"));
    surrogate.save(&path, &header)?;

    let pairs: Vec<String> = dataset
        .partitions
        .iter()
        .map(|p| format!("({}, {}): {}", p.input[0], p.input[1], p.states.len()))
        .collect();
    println!("wrote {}", path.display());
    println!(
        "dictionary {} ({}x{} operators), pairs per basis {}",
        dictionary.name(),
        dictionary.size(),
        dictionary.size(),
        pairs.join(", ")
    );
    Ok(())
}

fn cmd_openloop(config: &Config, out_dir: &Path) -> Result<(), Failure> {
    let recording_path = PathBuf::from(config.require("openloop", "recording")?);
    let training = RawRecording::load(&recording_path)?;
    let model = parse_model_kind(config.get_str("openloop", "model", "dynamic"))?;
    if model != ModelKind::Dynamic {
        return Err(Failure::Config(
            "open-loop studies replay dynamic reference runs; openloop.model must be `dynamic`"
                .to_string(),
        ));
    }
    let shape = config.get_str("openloop", "shape", "infinity");
    let shape = ReferenceShape::parse(shape).ok_or_else(|| {
        Failure::Config(format!("unknown shape `{shape}` (expected `infinity` or `square`)"))
    })?;
    let seed = config.get_u64("openloop", "seed", 1)?;
    let runs = reference_runs(
        shape,
        config.get_usize("openloop", "runs", 20)?,
        config.get_f64("openloop", "noise_pos", 5e-4)?,
        config.get_f64("openloop", "noise_theta", 0.1_f64.to_radians())?,
        seed,
    )?;

    let mut dictionaries = Vec::new();
    for name in config.get_str_list("openloop", "dictionaries", &["D8Eul"]) {
        dictionaries.push(resolve_dictionary(&name)?);
    }
    let spec = OpenLoopStudySpec {
        training: &training,
        runs: &runs,
        model,
        dictionaries,
        windows: config.get_usize_list("openloop", "windows", &[40])?,
        horizon: config.get_usize("openloop", "horizon", 20)?,
        pair_dt: config.get_f64("openloop", "pair_dt", REFERENCE_DT)?,
        drift: config.get_bool("openloop", "drift", true)?,
        regression: ridge_key(config, "openloop")?,
    };
    let report = open_loop_study(&spec)?;

    let mut header = provenance(config, seed);
    header.push(("shape".to_string(), shape.name().to_string()));
    header.push(("runs".to_string(), runs.len().to_string()));
    let path = out_dir.join(config.get_str("openloop", "output", "openloop.csv"));
    write_open_loop_csv(&report, &header, &path)?;

    println!("wrote {}", path.display());
    let horizon = report.horizon;
    for entry in &report.entries {
        println!(
            "{} w={} {}: max {}-step error {:.4} m, {:.2} deg",
            entry.dictionary,
            entry.window,
            entry.mode,
            horizon,
            entry.worst_translational_at(horizon),
            entry.worst_rotational_at(horizon).to_degrees()
        );
    }
    Ok(())
}

/// Shared assembly for the closed-loop commands: loads the surrogate when
/// one is configured and resolves the plant kind.
struct LoadedModel {
    surrogate: Option<KoopmanSurrogate>,
    plant: ModelKind,
}

impl LoadedModel {
    fn from_config(
        config: &Config,
        section: &str,
        file_key: &str,
        kind_key: &str,
        needs_surrogate: bool,
    ) -> Result<LoadedModel, Failure> {
        let surrogate = match config.get(section, file_key) {
            Some(path) => Some(KoopmanSurrogate::load(Path::new(path))?),
            None if needs_surrogate => {
                return Err(Failure::Config(format!(
                    "{section}.{file_key} is required (fit a model first)"
                )))
            }
            None => None,
        };
        let plant = match config.get(section, kind_key) {
            Some(name) => parse_model_kind(name)?,
            None => match &surrogate {
                Some(s) if s.dictionary().arity() == 5 => ModelKind::Dynamic,
                Some(_) => ModelKind::Kinematic,
                None => ModelKind::Kinematic,
            },
        };
        Ok(LoadedModel { surrogate, plant })
    }

    fn prediction(&self, mode: &str) -> Result<PredictionModel<'_>, Failure> {
        match (mode, &self.surrogate) {
            ("proj", Some(s)) => Ok(PredictionModel::SurrogateReprojected(s)),
            ("noproj", Some(s)) => Ok(PredictionModel::SurrogateLifted(s)),
            ("proj" | "noproj", None) => Err(Failure::Config(format!(
                "mode `{mode}` needs a fitted model file"
            ))),
            ("nominal", _) => Ok(match self.plant {
                ModelKind::Kinematic => PredictionModel::NominalKinematic,
                ModelKind::Dynamic => PredictionModel::NominalDynamic,
            }),
            (other, _) => Err(Failure::Config(format!(
                "unknown mode `{other}` (expected `proj`, `noproj`, or `nominal`)"
            ))),
        }
    }
}

fn cmd_closedloop(config: &Config, out_dir: &Path) -> Result<(), Failure> {
    let mode = config.get_str("closedloop", "mode", "proj").to_string();
    let loaded =
        LoadedModel::from_config(config, "closedloop", "model_file", "model", mode != "nominal")?;
    let plant = loaded.plant;
    let model = loaded.prediction(&mode)?;

    let (default_horizon, default_duration, default_box) = match plant {
        ModelKind::Kinematic => (60, 10.0, InputBox::velocity_default()),
        ModelKind::Dynamic => (50, 20.0, InputBox::acceleration_default()),
    };
    let dt = match &loaded.surrogate {
        Some(s) => config.get_f64("closedloop", "dt", s.dt())?,
        None => config.get_f64("closedloop", "dt", 0.1)?,
    };
    let (goal, goal_state) = goal_keys(config, "closedloop", plant.arity())?;
    let cost = cost_by_name(
        config.get_str("closedloop", "cost", "me"),
        plant.arity(),
        loaded.surrogate.as_ref().map(|s| s.dictionary()),
        &goal_state,
    )?;
    let spec = OcpSpec {
        horizon: config.get_usize("closedloop", "horizon", default_horizon)?,
        dt,
        input_box: input_box_keys(config, "closedloop", default_box)?,
        cost,
        goal,
        model,
        options: solver_options_keys(config, "closedloop")?,
    };
    let x0 = config.get_f64_list("closedloop", "x0", &vec![0.0; plant.arity()])?;
    let duration = config.get_f64("closedloop", "duration", default_duration)?;

    let run = closed_loop(&spec, plant, &x0, duration)?;

    let seed = config.get_u64("closedloop", "seed", 0)?;
    let mut header = provenance(config, seed);
    header.push(("mode".to_string(), mode.clone()));
    header.push(("plant".to_string(), plant.name().to_string()));
    let path = out_dir.join(config.get_str("closedloop", "output", "trajectory.csv"));
    write_trajectory_csv(&run, &header, &path)?;

    let unconverged = run.steps.iter().filter(|s| !s.converged).count();
    let final_state: Vec<String> =
        run.final_state.iter().map(|x| format!("{x:.6}")).collect();
    println!("wrote {}", path.display());
    println!(
        "{} steps, final state ({}), |x2 - goal| {:.6} m, {} unconverged solves",
        run.steps.len(),
        final_state.join(", "),
        (run.final_state[1] - goal.x2).abs(),
        unconverged
    );
    Ok(())
}

fn cmd_montecarlo(config: &Config, out_dir: &Path) -> Result<(), Failure> {
    let loaded = LoadedModel::from_config(config, "montecarlo", "model_file", "plant", true)?;
    let plant = loaded.plant;
    let surrogate = loaded.surrogate.as_ref().expect("required above");

    let (default_horizon, default_eval, default_box, default_set) = match plant {
        ModelKind::Kinematic => {
            (60, 10.0, InputBox::velocity_default(), PoseBox { x1: [-1.0, 1.0], x2: [-1.0, 1.0] })
        }
        ModelKind::Dynamic => (
            50,
            20.0,
            InputBox::acceleration_default(),
            PoseBox { x1: [0.0, 1.5], x2: [-0.75, 0.75] },
        ),
    };
    let (goal, goal_state) = goal_keys(config, "montecarlo", plant.arity())?;
    let mut configs = Vec::new();
    for label in config.get_str_list(
        "montecarlo",
        "configs",
        &["me-proj", "ce-proj", "ds-proj", "me-noproj"],
    ) {
        let (cost_name, mode) = label.rsplit_once('-').ok_or_else(|| {
            Failure::Config(format!("configuration `{label}` is not of the form cost-mode"))
        })?;
        let model = loaded.prediction(mode)?;
        let dictionary =
            if mode == "nominal" { None } else { Some(surrogate.dictionary()) };
        configs.push(MonteCarloConfig {
            label: label.clone(),
            cost: cost_by_name(cost_name, plant.arity(), dictionary, &goal_state)?,
            model,
        });
    }

    let seed = config.get_u64("montecarlo", "seed", 1)?;
    let spec = MonteCarloSpec {
        plant,
        configs,
        draws: config.get_usize("montecarlo", "draws", 100)?,
        eval_time: config.get_f64("montecarlo", "eval_time", default_eval)?,
        horizon: config.get_usize("montecarlo", "horizon", default_horizon)?,
        dt: config.get_f64("montecarlo", "dt", surrogate.dt())?,
        input_box: input_box_keys(config, "montecarlo", default_box)?,
        initial_set: PoseBox {
            x1: pair_key(config, "montecarlo", "x1_box", default_set.x1)?,
            x2: pair_key(config, "montecarlo", "x2_box", default_set.x2)?,
        },
        goal,
        seed,
        options: solver_options_keys(config, "montecarlo")?,
    };
    let reports = monte_carlo_closed_loop(&spec)?;

    let header = provenance(config, seed);
    let prefix = config.get_str("montecarlo", "output", "ecdf");
    for report in &reports {
        let path = out_dir.join(format!("{prefix}_{}.csv", report.label));
        write_ecdf_csv(std::slice::from_ref(report), &header, &path)?;
        println!("wrote {}", path.display());
    }
    let thresholds = config.get_f64_list("montecarlo", "thresholds", &[0.002])?;
    print!("{}", summary_text(&reports, &thresholds));
    Ok(())
}

fn cmd_sweep(config: &Config, out_dir: &Path) -> Result<(), Failure> {
    let recording_path = PathBuf::from(config.require("sweep", "recording")?);
    let training = RawRecording::load(&recording_path)?;
    let model = match config.get("sweep", "model") {
        Some(name) => parse_model_kind(name)?,
        None => parse_model_kind(training.metadata("model").ok_or_else(|| {
            Failure::Config("recording lacks a model tag; set sweep.model".to_string())
        })?)?,
    };
    let (default_horizon, default_eval, default_box, default_set, default_pair_dt) = match model {
        ModelKind::Kinematic => (
            60,
            10.0,
            InputBox::velocity_default(),
            PoseBox { x1: [-1.0, 1.0], x2: [-1.0, 1.0] },
            0.1,
        ),
        ModelKind::Dynamic => (
            50,
            20.0,
            InputBox::acceleration_default(),
            PoseBox { x1: [0.0, 1.5], x2: [-0.75, 0.75] },
            0.05,
        ),
    };
    let dict_name = config.get_str(
        "sweep",
        "dictionary",
        match model {
            ModelKind::Kinematic => "D5t",
            ModelKind::Dynamic => "D8Eul",
        },
    );
    let dictionary = resolve_dictionary(dict_name)?;
    let cost_name = config.get_str("sweep", "cost", "me").to_string();
    let cost = cost_by_name(&cost_name, model.arity(), Some(&dictionary), &vec![0.0; model.arity()])?;
    let seed = config.get_u64("sweep", "seed", 1)?;
    let default_window = match model {
        ModelKind::Kinematic => 1,
        ModelKind::Dynamic => 40,
    };

    let spec = SweepSpec {
        training: &training,
        model,
        dictionary: dictionary.clone(),
        window: config.get_usize("sweep", "window", default_window)?,
        pair_dt: config.get_f64("sweep", "pair_dt", default_pair_dt)?,
        drift: config.get_bool("sweep", "drift", model == ModelKind::Dynamic)?,
        regression: ridge_key(config, "sweep")?,
        sizes: config.get_usize_list("sweep", "sizes", &[10, 100])?,
        cost,
        draws: config.get_usize("sweep", "draws", 50)?,
        eval_time: config.get_f64("sweep", "eval_time", default_eval)?,
        horizon: config.get_usize("sweep", "horizon", default_horizon)?,
        input_box: input_box_keys(config, "sweep", default_box)?,
        initial_set: PoseBox {
            x1: pair_key(config, "sweep", "x1_box", default_set.x1)?,
            x2: pair_key(config, "sweep", "x2_box", default_set.x2)?,
        },
        seed,
        options: solver_options_keys(config, "sweep")?,
    };
    let (baseline, entries) = data_efficiency_sweep(&spec)?;

    let header = provenance(config, seed);
    let prefix = config.get_str("sweep", "output", "sweep");
    let baseline_path = out_dir.join(format!("{prefix}_full.csv"));
    write_ecdf_csv(std::slice::from_ref(&baseline), &header, &baseline_path)?;
    println!("wrote {}", baseline_path.display());
    let mut summary = String::new();
    for (key, value) in &header {
        summary.push_str(&format!("# {key}={value}\n"));
    }
    summary.push_str("pairs_per_basis,ks_to_baseline\n");
    for entry in &entries {
        let path = out_dir.join(format!("{prefix}_d{}.csv", entry.pairs_per_basis));
        write_ecdf_csv(std::slice::from_ref(&entry.report), &header, &path)?;
        println!("wrote {}", path.display());
        summary.push_str(&format!(
            "{},{:.17e}\n",
            entry.pairs_per_basis, entry.ks_to_baseline
        ));
        println!(
            "d = {}: KS distance to full-data baseline {:.4}",
            entry.pairs_per_basis, entry.ks_to_baseline
        );
    }
    let summary_path = out_dir.join(format!("{prefix}_summary.csv"));
    std::fs::write(&summary_path, summary)?;
    println!("wrote {}", summary_path.display());
    Ok(())
}
