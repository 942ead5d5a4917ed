//! Turns raw position-only recordings into regression-ready labeled datasets.
//!
//! The pipeline estimates world-frame velocities by first-order central
//! differences of the pose stream, continues angular measurements across the
//! wrap-around, smooths every annotated segment individually with a centered
//! moving average (so starts and ends of maneuvers do not bleed into each
//! other), rotates the velocity estimates into the robot frame, and emits
//! state/successor pairs spaced one model sampling interval apart. Heading
//! entries of each state are shifted back into (-pi, pi] and the paired
//! successor heading is shifted by the same amount, so successors may lie
//! slightly outside the interval.

use crate::edmd::{BasisPartition, LabeledDataset};
use crate::recording::RawRecording;
use crate::vehicle::{normalize_angle, ModelKind};
use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

/// Pair spacing over the sensor stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairDensity {
    /// A pair starts at every eligible sensor sample (overlapping pairs).
    SensorRate,
    /// Pairs are spaced one model sampling interval apart (non-overlapping),
    /// so `d` pairs correspond to `d` sampling intervals of recorded motion.
    ControlRate,
}

/// Post-processing configuration.
#[derive(Debug, Clone, Copy)]
pub struct PostprocessSpec {
    /// Moving-average window width in sensor samples (1 disables smoothing).
    pub window: usize,
    /// Model sampling interval: successors are recorded this long after
    /// their states.
    pub pair_dt: f64,
    pub density: PairDensity,
}

impl PostprocessSpec {
    /// Kinematic default: no smoothing (poses are used directly), pairs
    /// 100 ms apart.
    pub fn kinematic_default() -> Self {
        PostprocessSpec { window: 1, pair_dt: 0.1, density: PairDensity::SensorRate }
    }

    /// Dynamic default: window of 40 sensor samples, pairs 50 ms apart.
    pub fn dynamic_default() -> Self {
        PostprocessSpec { window: 40, pair_dt: 0.05, density: PairDensity::SensorRate }
    }
}

/// Errors raised by the post-processing pipeline.
#[derive(Debug)]
pub enum PostprocessError {
    TooShort { len: usize },
    NonIncreasingTimestamps { index: usize },
    EmptySegment { index: usize },
    ZeroWindow,
    /// `pair_dt` is not a whole number of sensor intervals.
    Misaligned { pair_dt: f64, sensor_rate: f64 },
    ModelMismatch { recorded: String, requested: &'static str },
    BadRecording(String),
    UnknownBasis { segment: usize, basis: usize },
    Io(std::io::Error),
    Format { line: usize, message: String },
}

impl fmt::Display for PostprocessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PostprocessError::TooShort { len } => {
                write!(f, "series of length {len} is too short to differentiate")
            }
            PostprocessError::NonIncreasingTimestamps { index } => {
                write!(f, "timestamps must increase strictly (violated at index {index})")
            }
            PostprocessError::EmptySegment { index } => {
                write!(f, "segment {index} is empty or out of range")
            }
            PostprocessError::ZeroWindow => write!(f, "smoothing window must be at least 1"),
            PostprocessError::Misaligned { pair_dt, sensor_rate } => write!(
                f,
                "pair interval {pair_dt} s is not a whole positive number of sensor intervals \
                 at {sensor_rate} Hz"
            ),
            PostprocessError::ModelMismatch { recorded, requested } => {
                write!(f, "recording was made for the {recorded} model, not {requested}")
            }
            PostprocessError::BadRecording(message) => write!(f, "bad recording: {message}"),
            PostprocessError::UnknownBasis { segment, basis } => {
                write!(f, "segment {segment} references basis {basis} not in the header")
            }
            PostprocessError::Io(err) => write!(f, "I/O error: {err}"),
            PostprocessError::Format { line, message } => {
                write!(f, "line {line}: {message}")
            }
        }
    }
}

impl std::error::Error for PostprocessError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            PostprocessError::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<std::io::Error> for PostprocessError {
    fn from(err: std::io::Error) -> Self {
        PostprocessError::Io(err)
    }
}

/// First-order central differences with one-sided differences at the ends.
pub fn central_diff(t: &[f64], x: &[f64]) -> Result<Vec<f64>, PostprocessError> {
    let n = t.len();
    if n < 3 || x.len() != n {
        return Err(PostprocessError::TooShort { len: n.min(x.len()) });
    }
    for k in 1..n {
        if t[k] <= t[k - 1] {
            return Err(PostprocessError::NonIncreasingTimestamps { index: k });
        }
    }
    let mut dx = vec![0.0; n];
    dx[0] = (x[1] - x[0]) / (t[1] - t[0]);
    for k in 1..n - 1 {
        dx[k] = (x[k + 1] - x[k - 1]) / (t[k + 1] - t[k - 1]);
    }
    dx[n - 1] = (x[n - 1] - x[n - 2]) / (t[n - 1] - t[n - 2]);
    Ok(dx)
}

/// Rotates a world-frame velocity into the robot frame. Returns the forward
/// velocity and the lateral component; the latter should vanish for a
/// nonholonomic vehicle and is kept as a diagnostic.
pub fn to_body_frame(xdot1: f64, xdot2: f64, theta: f64) -> (f64, f64) {
    let (sin, cos) = theta.sin_cos();
    (cos * xdot1 + sin * xdot2, -sin * xdot1 + cos * xdot2)
}

/// Centered moving average applied within each segment independently; the
/// window is truncated symmetrically near segment edges (a truncated window
/// therefore still averages a linear ramp exactly). Segments are inclusive
/// index ranges and must partition nothing more than the series.
pub fn smooth_segments(
    x: &[f64],
    segments: &[(usize, usize)],
    window: usize,
) -> Result<Vec<f64>, PostprocessError> {
    if window == 0 {
        return Err(PostprocessError::ZeroWindow);
    }
    let mut out = x.to_vec();
    if window == 1 {
        return Ok(out);
    }
    let half = window / 2;
    for (index, &(start, end)) in segments.iter().enumerate() {
        if start > end || end >= x.len() {
            return Err(PostprocessError::EmptySegment { index });
        }
        for k in start..=end {
            let reach = half.min(k - start).min(end - k);
            let lo = k - reach;
            let hi = k + reach;
            out[k] = x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
        }
    }
    Ok(out)
}

/// Continues angular measurements across the wrap-around: each successor
/// differs from its predecessor by the 2 pi-congruent increment of smallest
/// magnitude.
pub fn continue_angles(theta: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(theta.len());
    let mut previous = match theta.first() {
        Some(&first) => first,
        None => return out,
    };
    out.push(previous);
    for &raw in &theta[1..] {
        previous += normalize_angle(raw - previous);
        out.push(previous);
    }
    out
}

/// Builds the labeled state/successor dataset from a raw recording.
///
/// Kinematic states are the recorded poses; dynamic states additionally
/// carry forward and yaw velocities estimated by differentiating the pose
/// stream (angles continued first, world velocities rotated into the robot
/// frame after smoothing). Pairs are drawn from basis segments only; for the
/// dynamic model the first and last sample of each segment are skipped
/// because their difference quotients mix neighboring maneuvers.
pub fn build_dataset(
    recording: &RawRecording,
    spec: &PostprocessSpec,
    model: ModelKind,
) -> Result<LabeledDataset, PostprocessError> {
    recording
        .validate()
        .map_err(|err| PostprocessError::BadRecording(err.to_string()))?;
    if let Some(recorded) = recording.metadata("model") {
        if recorded != model.name() {
            return Err(PostprocessError::ModelMismatch {
                recorded: recorded.to_string(),
                requested: model.name(),
            });
        }
    }
    let sensor_rate = recording
        .metadata_f64("fs")
        .map_err(|err| PostprocessError::BadRecording(err.to_string()))?;
    let bases = recording
        .metadata_bases()
        .map_err(|err| PostprocessError::BadRecording(err.to_string()))?;
    let stride = stride_for(spec.pair_dt, sensor_rate)?;

    let streams = processed_streams(recording, spec, model)?;
    let state_at = |k: usize| streams.state_at(k, model);

    let mut partitions: Vec<BasisPartition> = bases
        .iter()
        .map(|&input| BasisPartition { input, states: Vec::new(), successors: Vec::new() })
        .collect();

    for (seg_index, seg) in recording.segments.iter().enumerate() {
        let basis = match seg.basis {
            Some(b) => b,
            None => continue,
        };
        if basis >= bases.len() {
            return Err(PostprocessError::UnknownBasis { segment: seg_index, basis });
        }
        // Edge samples of dynamic segments carry one-sided or mixed
        // difference quotients; skip them.
        let (first, margin) = match model {
            ModelKind::Kinematic => (seg.start_tick, 0),
            ModelKind::Dynamic => (seg.start_tick + 1, 1),
        };
        let last = match (seg.end_tick - margin).checked_sub(stride) {
            Some(last) if last >= first => last,
            _ => continue,
        };
        let step = match spec.density {
            PairDensity::SensorRate => 1,
            PairDensity::ControlRate => stride,
        };
        let mut k = first;
        while k <= last {
            let mut state = state_at(k);
            let mut successor = state_at(k + stride);
            let shift = normalize_angle(state[2]) - state[2];
            state[2] += shift;
            successor[2] += shift;
            partitions[basis].states.push(state);
            partitions[basis].successors.push(successor);
            k += step;
        }
    }

    Ok(LabeledDataset { dt: spec.pair_dt, partitions })
}

/// Fully processed per-tick streams (continued headings, smoothed
/// body-frame velocities for the dynamic model).
struct ProcessedStreams {
    x1: Vec<f64>,
    x2: Vec<f64>,
    theta: Vec<f64>,
    v_body: Vec<f64>,
    omega: Vec<f64>,
}

impl ProcessedStreams {
    fn state_at(&self, k: usize, model: ModelKind) -> Vec<f64> {
        match model {
            ModelKind::Kinematic => vec![self.x1[k], self.x2[k], self.theta[k]],
            ModelKind::Dynamic => {
                vec![self.x1[k], self.x2[k], self.theta[k], self.v_body[k], self.omega[k]]
            }
        }
    }
}

fn processed_streams(
    recording: &RawRecording,
    spec: &PostprocessSpec,
    model: ModelKind,
) -> Result<ProcessedStreams, PostprocessError> {
    let n = recording.poses.len();
    let x1: Vec<f64> = recording.poses.iter().map(|p| p.x1).collect();
    let x2: Vec<f64> = recording.poses.iter().map(|p| p.x2).collect();
    let theta = continue_angles(
        &recording.poses.iter().map(|p| p.theta).collect::<Vec<f64>>(),
    );

    // Velocity estimation for the dynamic model: differentiate the full
    // streams, then smooth each annotated segment individually.
    let (v_body, omega) = if model == ModelKind::Dynamic {
        let t: Vec<f64> = recording.poses.iter().map(|p| p.t).collect();
        let ranges: Vec<(usize, usize)> = recording
            .segments
            .iter()
            .map(|s| (s.start_tick, s.end_tick))
            .collect();
        let dx1 = smooth_segments(&central_diff(&t, &x1)?, &ranges, spec.window)?;
        let dx2 = smooth_segments(&central_diff(&t, &x2)?, &ranges, spec.window)?;
        let dtheta = smooth_segments(&central_diff(&t, &theta)?, &ranges, spec.window)?;
        let v: Vec<f64> =
            (0..n).map(|k| to_body_frame(dx1[k], dx2[k], theta[k]).0).collect();
        (v, dtheta)
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(ProcessedStreams { x1, x2, theta, v_body, omega })
}

/// Extracts the fully processed state at every sensor tick where it is
/// well-defined: all ticks for the kinematic model; for the dynamic model
/// the first and last tick of every segment are excluded (their difference
/// quotients are one-sided or mix neighboring maneuvers). Ticks are returned
/// in increasing order with their states; headings are the continued stream
/// (not wrapped).
pub fn state_series(
    recording: &RawRecording,
    spec: &PostprocessSpec,
    model: ModelKind,
) -> Result<Vec<(usize, Vec<f64>)>, PostprocessError> {
    recording
        .validate()
        .map_err(|err| PostprocessError::BadRecording(err.to_string()))?;
    if let Some(recorded) = recording.metadata("model") {
        if recorded != model.name() {
            return Err(PostprocessError::ModelMismatch {
                recorded: recorded.to_string(),
                requested: model.name(),
            });
        }
    }
    let streams = processed_streams(recording, spec, model)?;
    let mut out = Vec::new();
    match model {
        ModelKind::Kinematic => {
            for k in 0..recording.poses.len() {
                out.push((k, streams.state_at(k, model)));
            }
        }
        ModelKind::Dynamic => {
            for seg in &recording.segments {
                for k in seg.start_tick + 1..seg.end_tick {
                    out.push((k, streams.state_at(k, model)));
                }
            }
        }
    }
    Ok(out)
}

fn stride_for(pair_dt: f64, sensor_rate: f64) -> Result<usize, PostprocessError> {
    let steps = pair_dt * sensor_rate;
    let stride = steps.round();
    if !(steps > 0.5) || (steps - stride).abs() > 1e-6 {
        return Err(PostprocessError::Misaligned { pair_dt, sensor_rate });
    }
    Ok(stride as usize)
}

/// Reads an externally prepared dataset.
///
/// Format: `# key=value` header lines carrying at least `dt` (the pair
/// interval, seconds) and `bases` (semicolon-separated `u1,u2` pairs), then
/// one row per sample: `basis,t,x1,x2,theta` for kinematic states or
/// `basis,t,x1,x2,theta,v,omega` for dynamic ones. Consecutive rows of the
/// same basis whose timestamps differ by `dt` form a state/successor pair;
/// the heading shift rule is applied as in [`build_dataset`].
pub fn load_external_dataset(
    path: &Path,
    model: ModelKind,
) -> Result<LabeledDataset, PostprocessError> {
    let text = fs::read_to_string(path)?;
    let mut dt: Option<f64> = None;
    let mut bases: Vec<[f64; 2]> = Vec::new();
    let mut rows: Vec<(usize, f64, Vec<f64>)> = Vec::new();
    let arity = model.arity();

    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        let fail = |message: String| PostprocessError::Format { line: line_no, message };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            if let Some((key, value)) = rest.split_once('=') {
                match key.trim() {
                    "dt" => {
                        dt = Some(
                            value.trim().parse::<f64>().map_err(|e| {
                                fail(format!("bad dt value {:?}: {e}", value.trim()))
                            })?,
                        )
                    }
                    "bases" => {
                        for pair in value.trim().split(';') {
                            let mut parts = pair.split(',');
                            let mut read = || -> Result<f64, PostprocessError> {
                                parts
                                    .next()
                                    .ok_or_else(|| fail(format!("bad basis entry {pair:?}")))?
                                    .trim()
                                    .parse::<f64>()
                                    .map_err(|e| fail(format!("bad basis entry {pair:?}: {e}")))
                            };
                            bases.push([read()?, read()?]);
                        }
                    }
                    _ => {}
                }
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 2 + arity {
            return Err(fail(format!(
                "expected {} comma-separated fields, found {}",
                2 + arity,
                fields.len()
            )));
        }
        let basis = fields[0]
            .trim()
            .parse::<usize>()
            .map_err(|e| fail(format!("bad basis index {:?}: {e}", fields[0])))?;
        let mut values = Vec::with_capacity(1 + arity);
        for field in &fields[1..] {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| fail(format!("bad number {:?}: {e}", field)))?,
            );
        }
        let t = values[0];
        rows.push((basis, t, values[1..].to_vec()));
    }

    let dt = dt.ok_or(PostprocessError::Format {
        line: 0,
        message: "missing `# dt=` header".to_string(),
    })?;
    if bases.is_empty() {
        return Err(PostprocessError::Format {
            line: 0,
            message: "missing `# bases=` header".to_string(),
        });
    }
    for (index, &(basis, _, _)) in rows.iter().enumerate() {
        if basis >= bases.len() {
            return Err(PostprocessError::UnknownBasis { segment: index, basis });
        }
    }

    let mut partitions: Vec<BasisPartition> = bases
        .iter()
        .map(|&input| BasisPartition { input, states: Vec::new(), successors: Vec::new() })
        .collect();
    for window in rows.windows(2) {
        let (basis_a, t_a, state) = &window[0];
        let (basis_b, t_b, successor) = &window[1];
        if basis_a != basis_b || ((t_b - t_a) - dt).abs() > 1e-6 {
            continue;
        }
        let mut state = state.clone();
        let mut successor = successor.clone();
        let shift = normalize_angle(state[2]) - state[2];
        state[2] += shift;
        successor[2] += shift;
        partitions[*basis_a].states.push(state);
        partitions[*basis_a].successors.push(successor);
    }
    Ok(LabeledDataset { dt, partitions })
}

/// Writes a dataset in the external CSV schema (the inverse of
/// [`load_external_dataset`] up to pair overlap: consecutive pairs are
/// written as consecutive rows, so only non-overlapping datasets round-trip
/// exactly).
pub fn save_external_dataset(
    dataset: &LabeledDataset,
    path: &Path,
) -> Result<(), PostprocessError> {
    let mut out = String::new();
    out.push_str(&format!("# dt={:.17e}\n", dataset.dt));
    let bases: Vec<String> = dataset
        .partitions
        .iter()
        .map(|p| format!("{:.17e},{:.17e}", p.input[0], p.input[1]))
        .collect();
    out.push_str(&format!("# bases={}\n", bases.join(";")));
    for (index, partition) in dataset.partitions.iter().enumerate() {
        for (pair, (state, successor)) in
            partition.states.iter().zip(&partition.successors).enumerate()
        {
            // Pairs are spaced three intervals apart so that the gap between
            // one pair's successor and the next pair's state is never dt.
            let t = 3.0 * dataset.dt * pair as f64;
            for (offset, row) in [(0.0, state), (dataset.dt, successor)] {
                let fields: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                out.push_str(&format!("{index},{:.17e},{}\n", t + offset, fields.join(",")));
            }
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{sample, SamplingSpec};
    use crate::vehicle::{
        dynamic_zoh_step, kinematic_zoh_step, AccelInput, FullState, Pose, VelocityInput,
    };
    use crate::recording::{InputSample, PoseSample, ProfileKind, RawRecording, Segment};

    #[test]
    fn central_differences_match_calculus_on_polynomials() {
        let t: Vec<f64> = (0..240).map(|k| k as f64 / 240.0).collect();
        let linear: Vec<f64> = t.iter().map(|&t| 3.0 * t - 1.0).collect();
        for d in central_diff(&t, &linear).unwrap() {
            assert!((d - 3.0).abs() < 1e-9);
        }
        let constant = vec![0.7; 240];
        for d in central_diff(&t, &constant).unwrap() {
            assert_eq!(d, 0.0);
        }
        // Central difference of t^2 is exact at the midpoint: 2 * t_1.
        let t3 = [0.0, 1.0 / 240.0, 2.0 / 240.0];
        let x3: Vec<f64> = t3.iter().map(|&t| t * t).collect();
        let d = central_diff(&t3, &x3).unwrap();
        assert!((d[1] - 2.0 * t3[1]).abs() < 1e-15);

        let bad_t = [0.0, 0.1, 0.1];
        assert!(matches!(
            central_diff(&bad_t, &x3),
            Err(PostprocessError::NonIncreasingTimestamps { index: 2 })
        ));
        assert!(matches!(
            central_diff(&t3[..2], &x3[..2]),
            Err(PostprocessError::TooShort { .. })
        ));
    }

    #[test]
    fn body_frame_rotation_matches_hand_values() {
        let (v, lat) = to_body_frame(1.0, 0.0, 0.0);
        assert!((v - 1.0).abs() < 1e-15 && lat.abs() < 1e-15);
        let (v, lat) = to_body_frame(0.0, 1.0, std::f64::consts::FRAC_PI_2);
        assert!((v - 1.0).abs() < 1e-15 && lat.abs() < 1e-15);
        let (v, lat) = to_body_frame(1.0, 1.0, std::f64::consts::FRAC_PI_4);
        assert!((v - 2.0_f64.sqrt()).abs() < 1e-15 && lat.abs() < 1e-15);
    }

    #[test]
    fn smoothing_is_exact_on_constants_and_ramps_and_does_not_bleed() {
        // Two segments: a constant 0 then a constant 1 (a step at the
        // boundary). Per-segment smoothing must keep both sides exact while
        // a naive global moving average bleeds across.
        let mut series = vec![0.0; 50];
        series.extend(vec![1.0; 50]);
        let segments = [(0usize, 49usize), (50, 99)];
        let smoothed = smooth_segments(&series, &segments, 40).unwrap();
        assert_eq!(smoothed, series);

        let naive: Vec<f64> = (0..100)
            .map(|k: usize| {
                let lo = k.saturating_sub(20);
                let hi = (k + 20).min(99);
                series[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        assert!((naive[49] - series[49]).abs() > 0.2, "global average should bleed");

        // A linear ramp is reproduced exactly everywhere, including the
        // symmetric truncated windows at the edges.
        let ramp: Vec<f64> = (0..80).map(|k| 0.3 * k as f64 - 2.0).collect();
        let smoothed = smooth_segments(&ramp, &[(0, 79)], 40).unwrap();
        for (a, b) in smoothed.iter().zip(&ramp) {
            assert!((a - b).abs() < 1e-12);
        }

        assert!(matches!(
            smooth_segments(&ramp, &[(0, 80)], 40),
            Err(PostprocessError::EmptySegment { index: 0 })
        ));
        assert!(matches!(
            smooth_segments(&ramp, &[(0, 79)], 0),
            Err(PostprocessError::ZeroWindow)
        ));
    }

    #[test]
    fn angle_continuation_unwraps_shortest_paths() {
        let unwrapped = continue_angles(&[3.1, -3.1]);
        assert!((unwrapped[1] - (3.1 + (2.0 * std::f64::consts::PI - 6.2))).abs() < 1e-12);

        let monotone = [-1.0, -0.5, 0.1, 0.7, 1.4];
        for (a, b) in continue_angles(&monotone).iter().zip(&monotone) {
            assert!((a - b).abs() < 1e-12);
        }

        // A full counterclockwise revolution sampled at 100 points.
        let wrapped: Vec<f64> = (0..=100)
            .map(|k| normalize_angle(-2.0 + 2.0 * std::f64::consts::PI * k as f64 / 100.0))
            .collect();
        let unwrapped = continue_angles(&wrapped);
        let total = unwrapped.last().unwrap() - unwrapped[0];
        assert!((total - 2.0 * std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn kinematic_pair_counts_follow_segment_arithmetic() {
        let spec = SamplingSpec {
            segments_per_basis: 2,
            seed: 3,
            ..SamplingSpec::kinematic_default()
        };
        let recording = sample(&spec).unwrap();
        let post = PostprocessSpec::kinematic_default();
        let dataset = build_dataset(&recording, &post, ModelKind::Kinematic).unwrap();
        let stride = (post.pair_dt * spec.sensor_rate).round() as usize;
        for (basis, partition) in dataset.partitions.iter().enumerate() {
            let expected: usize = recording
                .segments
                .iter()
                .filter(|s| s.basis == Some(basis))
                .map(|s| s.len().saturating_sub(stride))
                .sum();
            assert_eq!(partition.states.len(), expected, "basis {basis}");
            assert_eq!(partition.successors.len(), expected);
        }
    }

    #[test]
    fn noiseless_kinematic_pairs_are_flow_consistent() {
        let spec = SamplingSpec {
            segments_per_basis: 2,
            seed: 7,
            ..SamplingSpec::kinematic_default()
        };
        let recording = sample(&spec).unwrap();
        let post = PostprocessSpec::kinematic_default();
        let dataset = build_dataset(&recording, &post, ModelKind::Kinematic).unwrap();
        assert!(!dataset.is_empty());
        for partition in &dataset.partitions {
            let u = VelocityInput::new(partition.input[0], partition.input[1]);
            for (x, y) in partition.states.iter().zip(&partition.successors) {
                let flow = kinematic_zoh_step(Pose::new(x[0], x[1], x[2]), u, post.pair_dt);
                assert!((y[0] - flow.x1).abs() < 1e-9);
                assert!((y[1] - flow.x2).abs() < 1e-9);
                assert!((y[2] - flow.theta).abs() < 1e-9, "{} vs {}", y[2], flow.theta);
                // The state heading is normalized; the successor keeps the
                // same branch, so the two differ by less than pi.
                assert!(x[2] > -std::f64::consts::PI && x[2] <= std::f64::consts::PI);
                assert!((y[2] - x[2]).abs() < std::f64::consts::PI);
            }
        }
    }

    #[test]
    fn noiseless_dynamic_pairs_are_flow_consistent_without_smoothing() {
        let spec = SamplingSpec {
            segments_per_basis: 2,
            max_segment_steps: 30,
            seed: 9,
            noise_pos: 0.0,
            noise_theta: 0.0,
            ..SamplingSpec::dynamic_default()
        };
        let recording = sample(&spec).unwrap();
        let post = PostprocessSpec { window: 1, ..PostprocessSpec::dynamic_default() };
        let dataset = build_dataset(&recording, &post, ModelKind::Dynamic).unwrap();
        assert!(!dataset.is_empty());
        let mut worst: f64 = 0.0;
        for partition in &dataset.partitions {
            let u = AccelInput::new(partition.input[0], partition.input[1]);
            for (x, y) in partition.states.iter().zip(&partition.successors) {
                let flow = dynamic_zoh_step(
                    FullState::new(x[0], x[1], x[2], x[3], x[4]),
                    u,
                    post.pair_dt,
                );
                for (got, want) in y.iter().zip(&[
                    flow.pose.x1,
                    flow.pose.x2,
                    flow.pose.theta,
                    flow.v,
                    flow.omega,
                ]) {
                    worst = worst.max((got - want).abs());
                }
            }
        }
        assert!(worst < 1e-6, "worst pair inconsistency {worst}");
    }

    #[test]
    fn lateral_velocity_diagnostic_vanishes_on_noiseless_data() {
        let spec = SamplingSpec {
            segments_per_basis: 2,
            max_segment_steps: 30,
            seed: 21,
            noise_pos: 0.0,
            noise_theta: 0.0,
            ..SamplingSpec::dynamic_default()
        };
        let recording = sample(&spec).unwrap();
        let t: Vec<f64> = recording.poses.iter().map(|p| p.t).collect();
        let x1: Vec<f64> = recording.poses.iter().map(|p| p.x1).collect();
        let x2: Vec<f64> = recording.poses.iter().map(|p| p.x2).collect();
        let theta =
            continue_angles(&recording.poses.iter().map(|p| p.theta).collect::<Vec<f64>>());
        let dx1 = central_diff(&t, &x1).unwrap();
        let dx2 = central_diff(&t, &x2).unwrap();
        // Interior samples of basis segments: central differences never mix
        // maneuvers there, so the lateral component reflects only the
        // differencing bias.
        let mut checked = 0;
        for seg in recording.segments.iter().filter(|s| s.basis.is_some()) {
            for k in seg.start_tick + 1..seg.end_tick {
                let (_, lateral) = to_body_frame(dx1[k], dx2[k], theta[k]);
                assert!(lateral.abs() < 1e-6, "tick {k}: lateral {lateral}");
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    /// Hand-built recording whose heading crosses pi mid-segment: the pair
    /// must keep both entries on the same branch rather than wrapping the
    /// successor.
    #[test]
    fn heading_pairs_keep_their_branch_across_the_wrap() {
        let omega = 2.0;
        let dt = 0.05;
        let mut recording = RawRecording::default();
        recording.metadata = vec![
            ("model".to_string(), "kinematic".to_string()),
            ("dt".to_string(), format!("{dt:.17e}")),
            ("fs".to_string(), format!("{:.17e}", 1.0 / dt)),
            ("noise_pos".to_string(), "0".to_string()),
            ("noise_theta".to_string(), "0".to_string()),
            ("bases".to_string(), format!("0,{omega:.17e}")),
        ];
        // Pure rotation from theta = 3.0 rad: crosses pi after ~0.07 s.
        let mut pose = Pose::new(0.0, 0.0, 3.0);
        let u = VelocityInput::new(0.0, omega);
        for k in 0..=20 {
            recording.poses.push(PoseSample {
                t: k as f64 * dt,
                x1: pose.x1,
                x2: pose.x2,
                theta: normalize_angle(pose.theta),
            });
            recording.inputs.push(InputSample { t: k as f64 * dt, u1: 0.0, u2: omega });
            pose = kinematic_zoh_step(pose, u, dt);
        }
        recording.segments.push(Segment {
            start_tick: 0,
            end_tick: 20,
            basis: Some(0),
            profile: ProfileKind::Constant,
        });
        recording.validate().unwrap();

        let post = PostprocessSpec { window: 1, pair_dt: 0.1, density: PairDensity::SensorRate };
        let dataset = build_dataset(&recording, &post, ModelKind::Kinematic).unwrap();
        let partition = &dataset.partitions[0];
        let mut saw_overhang = false;
        for (x, y) in partition.states.iter().zip(&partition.successors) {
            assert!((y[2] - (x[2] + omega * post.pair_dt)).abs() < 1e-9);
            if y[2] > std::f64::consts::PI {
                saw_overhang = true;
            }
        }
        assert!(saw_overhang, "no pair with successor beyond pi; test data too short");
    }

    #[test]
    fn control_rate_density_spaces_pairs_one_interval_apart() {
        let spec = SamplingSpec {
            segments_per_basis: 2,
            seed: 3,
            ..SamplingSpec::kinematic_default()
        };
        let recording = sample(&spec).unwrap();
        let sensor = build_dataset(
            &recording,
            &PostprocessSpec::kinematic_default(),
            ModelKind::Kinematic,
        )
        .unwrap();
        let control = build_dataset(
            &recording,
            &PostprocessSpec {
                density: PairDensity::ControlRate,
                ..PostprocessSpec::kinematic_default()
            },
            ModelKind::Kinematic,
        )
        .unwrap();
        for (dense, sparse) in sensor.partitions.iter().zip(&control.partitions) {
            assert!(sparse.states.len() < dense.states.len());
            assert!(!sparse.states.is_empty());
            // Every sparse state appears in the dense set at stride spacing:
            // consecutive sparse states from one segment are the dense
            // states stride indices apart.
            for state in &sparse.states {
                assert!(dense.states.contains(state));
            }
        }
    }

    #[test]
    fn external_csv_round_trips_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("external.csv");
        let spec = SamplingSpec {
            segments_per_basis: 1,
            seed: 13,
            ..SamplingSpec::kinematic_default()
        };
        let recording = sample(&spec).unwrap();
        let dataset = build_dataset(
            &recording,
            &PostprocessSpec {
                density: PairDensity::ControlRate,
                ..PostprocessSpec::kinematic_default()
            },
            ModelKind::Kinematic,
        )
        .unwrap();
        save_external_dataset(&dataset, &path).unwrap();
        let loaded = load_external_dataset(&path, ModelKind::Kinematic).unwrap();
        assert_eq!(loaded.dt, dataset.dt);
        assert_eq!(loaded.partitions.len(), dataset.partitions.len());
        for (a, b) in loaded.partitions.iter().zip(&dataset.partitions) {
            assert_eq!(a.input, b.input);
            assert_eq!(a.states, b.states);
            assert_eq!(a.successors, b.successors);
        }

        std::fs::write(&path, "# dt=0.1\n0,0.0,1.0,2.0\n").unwrap();
        assert!(matches!(
            load_external_dataset(&path, ModelKind::Kinematic),
            Err(PostprocessError::Format { line: 2, .. })
        ));
    }

    #[test]
    fn misaligned_pair_interval_is_rejected() {
        let spec = SamplingSpec {
            segments_per_basis: 1,
            seed: 3,
            ..SamplingSpec::kinematic_default()
        };
        let recording = sample(&spec).unwrap();
        let post = PostprocessSpec { pair_dt: 0.07, ..PostprocessSpec::kinematic_default() };
        assert!(matches!(
            build_dataset(&recording, &post, ModelKind::Kinematic),
            Err(PostprocessError::Misaligned { .. })
        ));
        assert!(matches!(
            build_dataset(&recording, &PostprocessSpec::kinematic_default(), ModelKind::Dynamic),
            Err(PostprocessError::ModelMismatch { .. })
        ));
    }
}
