//! Extended dynamic mode decomposition (EDMD) and bilinear surrogate models.
//!
//! For one constant input, EDMD estimates a matrix that propagates lifted
//! states one sampling interval ahead: given data pairs `(x_j, y_j)` with
//! `y_j` the successor of `x_j`, the estimator solves the regularized normal
//! equations of the least-squares problem `psi(y_j) ~ P psi(x_j)`.
//!
//! A control-affine system is covered by fitting one such operator per
//! *input basis* `u_1, ..., u_m` (plus the zero-input drift operator `K_0`,
//! which for a driftless system is the identity). The operator for an
//! arbitrary input `u` is the affine combination
//!
//! ```text
//! K_u = K_0 + sum_i lambda_i (K_i - K_0),   [u_1 ... u_m] lambda = u,
//! ```
//!
//! which is exact for inputs on the basis rays and accurate to second order
//! in the sampling interval elsewhere.

use crate::dictionary::{Dictionary, DictionaryError};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

/// Inputs with infinity norm below this are treated as the zero input when a
/// dataset is split into drift and basis partitions.
const ZERO_INPUT_EPS: f64 = 1e-12;

/// Options of the regression step.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegressionOptions {
    /// Tikhonov parameter added to the diagonal of the Gram matrix. `None`
    /// selects the default `1e-10 * trace / M`, which regularizes just enough
    /// to absorb rounding; `Some(0.0)` disables regularization entirely.
    pub ridge: Option<f64>,
}

/// Data pairs collected under one constant input.
#[derive(Debug, Clone)]
pub struct BasisPartition {
    /// The held input under which every pair was produced.
    pub input: [f64; 2],
    /// States at the start of each sampling interval.
    pub states: Vec<Vec<f64>>,
    /// States one sampling interval later.
    pub successors: Vec<Vec<f64>>,
}

/// A labeled dataset: one partition per input basis, all sharing the same
/// sampling interval.
#[derive(Debug, Clone)]
pub struct LabeledDataset {
    /// Sampling interval between a state and its successor (s).
    pub dt: f64,
    pub partitions: Vec<BasisPartition>,
}

impl LabeledDataset {
    /// Total number of pairs across all partitions.
    pub fn len(&self) -> usize {
        self.partitions.iter().map(|p| p.states.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Keeps only the first `d` pairs of every partition.
    pub fn truncated(&self, d: usize) -> Result<LabeledDataset, EdmdError> {
        let mut out = self.clone();
        for (index, p) in out.partitions.iter_mut().enumerate() {
            if p.states.len() < d {
                return Err(EdmdError::NotEnoughPairs { index, available: p.states.len(), requested: d });
            }
            p.states.truncate(d);
            p.successors.truncate(d);
        }
        Ok(out)
    }
}

/// Errors raised during fitting, evaluation, and model-file handling.
#[derive(Debug)]
pub enum EdmdError {
    Dictionary(DictionaryError),
    /// The Gram matrix of the lifted data is singular (with regularization
    /// disabled); `rank` is the dimension of the observable subspace actually
    /// excited by the data.
    RankDeficient { rank: usize, size: usize },
    EmptyPartition { index: usize },
    PairCountMismatch { index: usize },
    /// Fitting with drift requires exactly one zero-input partition.
    MissingZeroInputPartition,
    /// A driftless fit received a zero basis input.
    ZeroBasisInput { index: usize },
    /// The nonzero basis inputs do not span the input space.
    DependentBases,
    /// A surrogate needs exactly two nonzero basis inputs.
    BasisCountMismatch { got: usize },
    InvalidTimestep { dt: f64 },
    /// A partition holds fewer pairs than a truncation request.
    NotEnoughPairs { index: usize, available: usize, requested: usize },
    /// A prediction produced a non-finite lifted vector at this step.
    NonFiniteAtStep { step: usize },
    /// Reprojection failed while predicting at this step.
    PredictFailure { step: usize, source: DictionaryError },
    Io(std::io::Error),
    /// A model file could not be parsed.
    ModelFormat { line: usize, message: String },
    UnknownDictionary { name: String },
}

impl fmt::Display for EdmdError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EdmdError::Dictionary(e) => write!(f, "dictionary error: {e}"),
            EdmdError::RankDeficient { rank, size } => write!(
                f,
                "lifted data spans only a {rank}-dimensional subspace of the \
                 {size}-dimensional observable space; add trajectories or enable ridge"
            ),
            EdmdError::EmptyPartition { index } => {
                write!(f, "partition {index} holds no data pairs")
            }
            EdmdError::PairCountMismatch { index } => {
                write!(f, "partition {index} has different state/successor counts")
            }
            EdmdError::MissingZeroInputPartition => {
                write!(f, "fitting with drift requires exactly one zero-input partition")
            }
            EdmdError::ZeroBasisInput { index } => {
                write!(f, "partition {index} has a zero input but the fit is driftless")
            }
            EdmdError::DependentBases => {
                write!(f, "basis inputs are linearly dependent and cannot span the input space")
            }
            EdmdError::BasisCountMismatch { got } => {
                write!(f, "expected exactly 2 nonzero basis inputs, got {got}")
            }
            EdmdError::InvalidTimestep { dt } => write!(f, "invalid sampling interval {dt}"),
            EdmdError::NotEnoughPairs { index, available, requested } => write!(
                f,
                "partition {index} holds {available} pairs, fewer than the requested {requested}"
            ),
            EdmdError::NonFiniteAtStep { step } => {
                write!(f, "prediction diverged to non-finite values at step {step}")
            }
            EdmdError::PredictFailure { step, source } => {
                write!(f, "prediction failed at step {step}: {source}")
            }
            EdmdError::Io(e) => write!(f, "i/o error: {e}"),
            EdmdError::ModelFormat { line, message } => {
                write!(f, "model file line {line}: {message}")
            }
            EdmdError::UnknownDictionary { name } => {
                write!(f, "model references unknown dictionary {name:?}")
            }
        }
    }
}

impl std::error::Error for EdmdError {}

impl From<DictionaryError> for EdmdError {
    fn from(e: DictionaryError) -> Self {
        EdmdError::Dictionary(e)
    }
}

impl From<std::io::Error> for EdmdError {
    fn from(e: std::io::Error) -> Self {
        EdmdError::Io(e)
    }
}

/// Fits the lifted one-step propagator for a single constant input.
///
/// Solves `(C + ridge*I) Z = A` with `C = Psi_X Psi_X^T / d` and
/// `A = Psi_X Psi_Y^T / d`, and returns `P = Z^T` so that lifted states
/// propagate by left multiplication: `psi(y_j) ~ P psi(x_j)`. With ridge 0
/// and a full-rank Gram matrix this is the plain EDMD estimator.
pub fn fit_autonomous(
    dict: &Dictionary,
    states: &[Vec<f64>],
    successors: &[Vec<f64>],
    opts: RegressionOptions,
) -> Result<DMatrix<f64>, EdmdError> {
    if states.is_empty() {
        return Err(EdmdError::EmptyPartition { index: 0 });
    }
    if states.len() != successors.len() {
        return Err(EdmdError::PairCountMismatch { index: 0 });
    }
    let m = dict.size();
    let d = states.len() as f64;
    let mut gram = DMatrix::zeros(m, m);
    let mut cross = DMatrix::zeros(m, m);
    for (x, y) in states.iter().zip(successors.iter()) {
        let px: DVector<f64> = dict.lift(x)?;
        let py: DVector<f64> = dict.lift(y)?;
        gram += &px * px.transpose() / d;
        cross += &px * py.transpose() / d;
    }
    let ridge = opts.ridge.unwrap_or_else(|| 1e-10 * gram.diagonal().sum() / m as f64);
    let mut regularized = gram.clone();
    for i in 0..m {
        regularized[(i, i)] += ridge;
    }
    match nalgebra::Cholesky::new(regularized) {
        Some(chol) => {
            let z = chol.solve(&cross);
            Ok(z.transpose())
        }
        None => {
            // Report how much of the observable space the data excites.
            let eigs = gram.symmetric_eigenvalues();
            let max = eigs.iter().cloned().fold(0.0_f64, f64::max);
            let rank = eigs.iter().filter(|&&e| e > max * 1e-10).count();
            Err(EdmdError::RankDeficient { rank, size: m })
        }
    }
}

/// A bilinear Koopman surrogate: drift operator, per-basis operators, and the
/// basis inputs needed to combine them.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanSurrogate {
    dict: Dictionary,
    dt: f64,
    /// Zero-input (drift) operator; the identity for driftless systems.
    k0: DMatrix<f64>,
    /// The two nonzero basis inputs, columns of the combination system.
    bases: [[f64; 2]; 2],
    /// Operators fitted for the two basis inputs.
    ks: [DMatrix<f64>; 2],
    /// Whether `k0` was regressed from zero-input data (true) or fixed to the
    /// identity (false).
    drift: bool,
}

/// Fits a bilinear surrogate from a labeled dataset.
///
/// With `drift` the dataset must hold exactly one zero-input partition (the
/// drift operator is regressed from it) plus two independent basis
/// partitions; without, exactly the two basis partitions (zero input freezes
/// the state, so the drift operator is the identity).
pub fn fit_surrogate(
    dict: &Dictionary,
    dataset: &LabeledDataset,
    drift: bool,
    opts: RegressionOptions,
) -> Result<KoopmanSurrogate, EdmdError> {
    if !(dataset.dt.is_finite() && dataset.dt > 0.0) {
        return Err(EdmdError::InvalidTimestep { dt: dataset.dt });
    }
    for (index, p) in dataset.partitions.iter().enumerate() {
        if p.states.is_empty() {
            return Err(EdmdError::EmptyPartition { index });
        }
        if p.states.len() != p.successors.len() {
            return Err(EdmdError::PairCountMismatch { index });
        }
    }

    let is_zero = |u: [f64; 2]| u[0].abs() <= ZERO_INPUT_EPS && u[1].abs() <= ZERO_INPUT_EPS;
    let mut zero_parts = Vec::new();
    let mut basis_parts = Vec::new();
    for (index, p) in dataset.partitions.iter().enumerate() {
        if is_zero(p.input) {
            zero_parts.push(index);
        } else {
            basis_parts.push(index);
        }
    }

    let k0 = if drift {
        if zero_parts.len() != 1 {
            return Err(EdmdError::MissingZeroInputPartition);
        }
        let p = &dataset.partitions[zero_parts[0]];
        fit_autonomous(dict, &p.states, &p.successors, opts)?
    } else {
        if let Some(&index) = zero_parts.first() {
            return Err(EdmdError::ZeroBasisInput { index });
        }
        DMatrix::identity(dict.size(), dict.size())
    };

    if basis_parts.len() != 2 {
        return Err(EdmdError::BasisCountMismatch { got: basis_parts.len() });
    }
    let pa = &dataset.partitions[basis_parts[0]];
    let pb = &dataset.partitions[basis_parts[1]];
    let det = pa.input[0] * pb.input[1] - pa.input[1] * pb.input[0];
    if det.abs() < ZERO_INPUT_EPS {
        return Err(EdmdError::DependentBases);
    }
    let ka = fit_autonomous(dict, &pa.states, &pa.successors, opts)?;
    let kb = fit_autonomous(dict, &pb.states, &pb.successors, opts)?;

    KoopmanSurrogate::from_parts(
        dict.clone(),
        dataset.dt,
        k0,
        [pa.input, pb.input],
        [ka, kb],
        drift,
    )
}

impl KoopmanSurrogate {
    /// Assembles a surrogate from explicit parts, validating dimensions and
    /// basis independence.
    pub fn from_parts(
        dict: Dictionary,
        dt: f64,
        k0: DMatrix<f64>,
        bases: [[f64; 2]; 2],
        ks: [DMatrix<f64>; 2],
        drift: bool,
    ) -> Result<Self, EdmdError> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(EdmdError::InvalidTimestep { dt });
        }
        let m = dict.size();
        for k in [&k0, &ks[0], &ks[1]] {
            if k.nrows() != m || k.ncols() != m {
                return Err(EdmdError::BasisCountMismatch { got: k.nrows() });
            }
        }
        let det = bases[0][0] * bases[1][1] - bases[0][1] * bases[1][0];
        if det.abs() < ZERO_INPUT_EPS {
            return Err(EdmdError::DependentBases);
        }
        Ok(KoopmanSurrogate { dict, dt, k0, bases, ks, drift })
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dict
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn k0(&self) -> &DMatrix<f64> {
        &self.k0
    }

    pub fn bases(&self) -> &[[f64; 2]; 2] {
        &self.bases
    }

    pub fn basis_operators(&self) -> &[DMatrix<f64>; 2] {
        &self.ks
    }

    pub fn has_drift(&self) -> bool {
        self.drift
    }

    /// Coordinates of `u` in the basis-input frame: the solution of
    /// `[u_1 u_2] lambda = u` by Cramer's rule (exact for `u` on a basis
    /// ray).
    pub fn lambda(&self, u: [f64; 2]) -> [f64; 2] {
        let [a, b] = self.bases;
        let det = a[0] * b[1] - a[1] * b[0];
        [(u[0] * b[1] - u[1] * b[0]) / det, (a[0] * u[1] - a[1] * u[0]) / det]
    }

    /// The lifted one-step operator for an arbitrary input.
    pub fn combine(&self, u: [f64; 2]) -> DMatrix<f64> {
        let [l1, l2] = self.lambda(u);
        // Basis inputs reproduce their fitted operators exactly.
        if l1 == 1.0 && l2 == 0.0 {
            return self.ks[0].clone();
        }
        if l1 == 0.0 && l2 == 1.0 {
            return self.ks[1].clone();
        }
        let m = self.dict.size();
        DMatrix::from_fn(m, m, |i, j| {
            self.k0[(i, j)]
                + l1 * (self.ks[0][(i, j)] - self.k0[(i, j)])
                + l2 * (self.ks[1][(i, j)] - self.k0[(i, j)])
        })
    }

    /// Derivatives of the combined operator with respect to the two input
    /// components: `d K_u / d u_j`, constant in `u`.
    pub fn input_direction_operators(&self) -> [DMatrix<f64>; 2] {
        let [a, b] = self.bases;
        let det = a[0] * b[1] - a[1] * b[0];
        let d1 = &self.ks[0] - &self.k0;
        let d2 = &self.ks[1] - &self.k0;
        // dl1/du = (b[1], -b[0])/det, dl2/du = (-a[1], a[0])/det.
        [(&d1 * b[1] - &d2 * a[1]) / det, (&d2 * a[0] - &d1 * b[0]) / det]
    }

    /// Predicts the state sequence under an input sequence, starting from
    /// `x0` (the returned sequence includes `x0`, so its length is
    /// `inputs.len() + 1`).
    ///
    /// With `reproject` the state is recovered after every step and lifted
    /// afresh; without, the lifted vector is propagated linearly for the
    /// whole horizon and states are only read off for reporting.
    pub fn predict(
        &self,
        x0: &[f64],
        inputs: &[[f64; 2]],
        reproject: bool,
    ) -> Result<Vec<Vec<f64>>, EdmdError> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(x0.to_vec());
        if reproject {
            let mut state = x0.to_vec();
            for (step, &u) in inputs.iter().enumerate() {
                let lifted = self.dict.lift(&state)?;
                let next = self.combine(u) * lifted;
                if !next.iter().all(|v| v.is_finite()) {
                    return Err(EdmdError::NonFiniteAtStep { step });
                }
                state = self
                    .dict
                    .reproject(&next)
                    .map_err(|source| EdmdError::PredictFailure { step, source })?;
                states.push(state.clone());
            }
        } else {
            let mut lifted = self.dict.lift(x0)?;
            for (step, &u) in inputs.iter().enumerate() {
                lifted = self.combine(u) * lifted;
                if !lifted.iter().all(|v| v.is_finite()) {
                    return Err(EdmdError::NonFiniteAtStep { step });
                }
                let state = self
                    .dict
                    .reproject(&lifted)
                    .map_err(|source| EdmdError::PredictFailure { step, source })?;
                states.push(state);
            }
        }
        Ok(states)
    }

    /// Writes the surrogate to a self-describing text file. Floats are
    /// printed with 17 significant digits, which round-trips `f64` exactly.
    /// `provenance` pairs are prepended as `# key value` comment lines.
    pub fn save(&self, path: &Path, provenance: &[(String, String)]) -> Result<(), EdmdError> {
        let mut out = String::new();
        out.push_str("# koopman-mpc model v1\n");
        for (key, value) in provenance {
            out.push_str(&format!("# {key} {value}\n"));
        }
        out.push_str(&format!("dictionary {}\n", self.dict.name()));
        out.push_str(&format!("size {}\n", self.dict.size()));
        out.push_str(&format!("dt {:.17e}\n", self.dt));
        out.push_str("inputs 2\n");
        out.push_str(&format!("drift {}\n", if self.drift { "regressed" } else { "identity" }));
        for basis in &self.bases {
            out.push_str(&format!("basis {:.17e} {:.17e}\n", basis[0], basis[1]));
        }
        for (label, k) in
            [("K0", &self.k0), ("K1", &self.ks[0]), ("K2", &self.ks[1])]
        {
            out.push_str(&format!("matrix {label}\n"));
            for i in 0..k.nrows() {
                let row: Vec<String> = (0..k.ncols()).map(|j| format!("{:.17e}", k[(i, j)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(out.as_bytes())?;
        Ok(())
    }

    /// Reads a surrogate written by [`KoopmanSurrogate::save`]. The
    /// dictionary is resolved by name from the shipped registry.
    pub fn load(path: &Path) -> Result<Self, EdmdError> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = Vec::new();
        for (number, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim().to_string();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            lines.push((number + 1, trimmed));
        }

        let mut dict: Option<Dictionary> = None;
        let mut size = 0usize;
        let mut dt = f64::NAN;
        let mut drift = false;
        let mut bases: Vec<[f64; 2]> = Vec::new();
        let mut matrices: Vec<DMatrix<f64>> = Vec::new();

        let mut i = 0;
        while i < lines.len() {
            let (number, line) = &lines[i];
            let mut parts = line.split_whitespace();
            let key = parts.next().unwrap_or_default();
            let fail = |message: &str| EdmdError::ModelFormat {
                line: *number,
                message: message.to_string(),
            };
            match key {
                "dictionary" => {
                    let name = parts.next().ok_or_else(|| fail("missing dictionary name"))?;
                    dict = Some(crate::dictionary::by_name(name).ok_or(
                        EdmdError::UnknownDictionary { name: name.to_string() },
                    )?);
                }
                "size" => {
                    size = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| fail("unreadable size"))?;
                }
                "dt" => {
                    dt = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| fail("unreadable dt"))?;
                }
                "inputs" => {
                    let n: usize = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| fail("unreadable input count"))?;
                    if n != 2 {
                        return Err(fail("only 2-input models are supported"));
                    }
                }
                "drift" => {
                    drift = match parts.next() {
                        Some("regressed") => true,
                        Some("identity") => false,
                        _ => return Err(fail("drift must be regressed or identity")),
                    };
                }
                "basis" => {
                    let u0: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| fail("unreadable basis"))?;
                    let u1: f64 = parts
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| fail("unreadable basis"))?;
                    bases.push([u0, u1]);
                }
                "matrix" => {
                    if size == 0 {
                        return Err(fail("matrix before size"));
                    }
                    let mut k = DMatrix::zeros(size, size);
                    for row in 0..size {
                        i += 1;
                        let (row_number, row_line) = lines
                            .get(i)
                            .ok_or(EdmdError::ModelFormat {
                                line: *number,
                                message: "matrix truncated".to_string(),
                            })?;
                        let values: Result<Vec<f64>, _> =
                            row_line.split_whitespace().map(|s| s.parse()).collect();
                        let values = values.map_err(|_| EdmdError::ModelFormat {
                            line: *row_number,
                            message: "unreadable matrix row".to_string(),
                        })?;
                        if values.len() != size {
                            return Err(EdmdError::ModelFormat {
                                line: *row_number,
                                message: format!("expected {size} entries, got {}", values.len()),
                            });
                        }
                        for (col, v) in values.into_iter().enumerate() {
                            k[(row, col)] = v;
                        }
                    }
                    matrices.push(k);
                }
                _ => return Err(fail("unknown key")),
            }
            i += 1;
        }

        let dict = dict.ok_or(EdmdError::ModelFormat {
            line: 0,
            message: "missing dictionary line".to_string(),
        })?;
        if dict.size() != size {
            return Err(EdmdError::ModelFormat {
                line: 0,
                message: format!("size {size} does not match dictionary {}", dict.size()),
            });
        }
        if bases.len() != 2 || matrices.len() != 3 {
            return Err(EdmdError::ModelFormat {
                line: 0,
                message: "expected 2 basis lines and 3 matrices".to_string(),
            });
        }
        let k2 = matrices.pop().unwrap();
        let k1 = matrices.pop().unwrap();
        let k0 = matrices.pop().unwrap();
        KoopmanSurrogate::from_parts(dict, dt, k0, [bases[0], bases[1]], [k1, k2], drift)
    }
}
