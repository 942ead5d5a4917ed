//! Raw trajectory recordings and their CSV serialization.
//!
//! A recording holds three streams produced by the samplers: sensor poses at
//! the sensor rate, commanded inputs at the control rate, and segment
//! annotations that tile the timeline into phases of constant or linear
//! desired velocity. Basis segments carry the index of the applied input
//! basis; transfer phases are unlabeled.
//!
//! The on-disk format is a single CSV file: a `# key=value` header block
//! followed by rows `stream,t,f1,f2,f3` with `stream` one of `pose`, `input`,
//! `annot`. Floats are written with 17 significant digits so files round-trip
//! `f64` values exactly.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// One sensor pose sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t: f64,
    pub x1: f64,
    pub x2: f64,
    pub theta: f64,
}

/// One commanded input sample (held for one control interval).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputSample {
    pub t: f64,
    pub u1: f64,
    pub u2: f64,
}

/// Desired-velocity profile shape within a segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    Constant,
    Linear,
}

/// A contiguous phase of the recording. Segments tile the pose stream:
/// `start_tick..=end_tick` are sensor-sample indices, and consecutive
/// segments satisfy `next.start_tick == this.end_tick + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_tick: usize,
    pub end_tick: usize,
    /// Index of the applied input basis, or `None` for transfer phases.
    pub basis: Option<usize>,
    pub profile: ProfileKind,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end_tick - self.start_tick + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A raw recording: ordered metadata plus the three streams.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawRecording {
    /// Ordered `key = value` header entries (seed, rates, noise, bases, ...).
    pub metadata: Vec<(String, String)>,
    pub poses: Vec<PoseSample>,
    pub inputs: Vec<InputSample>,
    pub segments: Vec<Segment>,
}

/// Errors raised while validating or (de)serializing recordings.
#[derive(Debug)]
pub enum RecordingError {
    Io(std::io::Error),
    Format { line: usize, message: String },
    MissingMetadata { key: &'static str },
    BadMetadata { key: &'static str, value: String },
    NonMonotonicTimestamps { stream: &'static str, index: usize },
    SegmentsDontTile { index: usize },
}

impl fmt::Display for RecordingError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RecordingError::Io(e) => write!(f, "i/o error: {e}"),
            RecordingError::Format { line, message } => {
                write!(f, "recording line {line}: {message}")
            }
            RecordingError::MissingMetadata { key } => {
                write!(f, "recording header is missing key {key:?}")
            }
            RecordingError::BadMetadata { key, value } => {
                write!(f, "recording header key {key:?} has unreadable value {value:?}")
            }
            RecordingError::NonMonotonicTimestamps { stream, index } => {
                write!(f, "{stream} stream timestamps not strictly increasing at index {index}")
            }
            RecordingError::SegmentsDontTile { index } => {
                write!(f, "segment {index} does not start right after its predecessor")
            }
        }
    }
}

impl std::error::Error for RecordingError {}

impl From<std::io::Error> for RecordingError {
    fn from(e: std::io::Error) -> Self {
        RecordingError::Io(e)
    }
}

impl RawRecording {
    /// Looks up a metadata value by key (first match).
    pub fn metadata(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// Parses a required metadata value as `f64`.
    pub fn metadata_f64(&self, key: &'static str) -> Result<f64, RecordingError> {
        let raw = self.metadata(key).ok_or(RecordingError::MissingMetadata { key })?;
        raw.parse().map_err(|_| RecordingError::BadMetadata { key, value: raw.to_string() })
    }

    /// Parses the `bases` metadata entry: semicolon-separated `u1,u2` pairs.
    pub fn metadata_bases(&self) -> Result<Vec<[f64; 2]>, RecordingError> {
        let raw = self
            .metadata("bases")
            .ok_or(RecordingError::MissingMetadata { key: "bases" })?;
        let mut bases = Vec::new();
        for pair in raw.split(';') {
            let mut it = pair.split(',');
            let bad = || RecordingError::BadMetadata { key: "bases", value: raw.to_string() };
            let u1: f64 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            let u2: f64 = it.next().ok_or_else(bad)?.trim().parse().map_err(|_| bad())?;
            bases.push([u1, u2]);
        }
        Ok(bases)
    }

    /// Structural validation: strictly increasing timestamps per stream and
    /// segments tiling the pose stream.
    pub fn validate(&self) -> Result<(), RecordingError> {
        for (index, w) in self.poses.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(RecordingError::NonMonotonicTimestamps {
                    stream: "pose",
                    index: index + 1,
                });
            }
        }
        for (index, w) in self.inputs.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(RecordingError::NonMonotonicTimestamps {
                    stream: "input",
                    index: index + 1,
                });
            }
        }
        let mut expected_start = 0usize;
        for (index, segment) in self.segments.iter().enumerate() {
            if segment.start_tick != expected_start || segment.end_tick < segment.start_tick {
                return Err(RecordingError::SegmentsDontTile { index });
            }
            expected_start = segment.end_tick + 1;
        }
        if let Some(last) = self.segments.last() {
            if last.end_tick >= self.poses.len() {
                return Err(RecordingError::SegmentsDontTile { index: self.segments.len() - 1 });
            }
        }
        Ok(())
    }

    /// Writes the recording as CSV with a `# key=value` header block.
    pub fn save(&self, path: &Path) -> Result<(), RecordingError> {
        let mut out = String::new();
        for (key, value) in &self.metadata {
            out.push_str(&format!("# {key}={value}\n"));
        }
        out.push_str("stream,t,f1,f2,f3\n");
        for p in &self.poses {
            out.push_str(&format!(
                "pose,{:.17e},{:.17e},{:.17e},{:.17e}\n",
                p.t, p.x1, p.x2, p.theta
            ));
        }
        for i in &self.inputs {
            out.push_str(&format!("input,{:.17e},{:.17e},{:.17e},0\n", i.t, i.u1, i.u2));
        }
        for s in &self.segments {
            let basis = s.basis.map_or(-1.0, |b| b as f64);
            let profile = match s.profile {
                ProfileKind::Constant => 0.0,
                ProfileKind::Linear => 1.0,
            };
            out.push_str(&format!(
                "annot,{},{},{basis},{profile}\n",
                s.start_tick, s.end_tick
            ));
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a recording written by [`RawRecording::save`].
    pub fn load(path: &Path) -> Result<Self, RecordingError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut recording = RawRecording::default();
        for (number, line) in reader.lines().enumerate() {
            let number = number + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((key, value)) = rest.split_once('=') {
                    recording
                        .metadata
                        .push((key.trim().to_string(), value.trim().to_string()));
                }
                continue;
            }
            if line.starts_with("stream,") {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(RecordingError::Format {
                    line: number,
                    message: format!("expected 5 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64, RecordingError> {
                s.parse().map_err(|_| RecordingError::Format {
                    line: number,
                    message: format!("unreadable number {s:?}"),
                })
            };
            match fields[0] {
                "pose" => recording.poses.push(PoseSample {
                    t: parse(fields[1])?,
                    x1: parse(fields[2])?,
                    x2: parse(fields[3])?,
                    theta: parse(fields[4])?,
                }),
                "input" => recording.inputs.push(InputSample {
                    t: parse(fields[1])?,
                    u1: parse(fields[2])?,
                    u2: parse(fields[3])?,
                }),
                "annot" => {
                    let start = parse(fields[1])? as usize;
                    let end = parse(fields[2])? as usize;
                    let basis_raw = parse(fields[3])?;
                    let basis = if basis_raw < 0.0 { None } else { Some(basis_raw as usize) };
                    let profile = if parse(fields[4])? == 0.0 {
                        ProfileKind::Constant
                    } else {
                        ProfileKind::Linear
                    };
                    recording.segments.push(Segment {
                        start_tick: start,
                        end_tick: end,
                        basis,
                        profile,
                    });
                }
                other => {
                    return Err(RecordingError::Format {
                        line: number,
                        message: format!("unknown stream {other:?}"),
                    })
                }
            }
        }
        Ok(recording)
    }
}
