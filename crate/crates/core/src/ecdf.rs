//! Empirical cumulative distribution functions over scalar outcomes.
//!
//! Samples may include `+inf` to represent censored outcomes (e.g. solver
//! failures); the distribution then honestly never reaches 1 at any finite
//! argument, and upper quantiles come out infinite instead of being
//! survivor-biased.

use std::fmt;

/// Errors raised when constructing or querying a distribution.
#[derive(Debug, PartialEq)]
pub enum EcdfError {
    Empty,
    /// NaN or -inf at the given sample index.
    InvalidSample { index: usize },
    /// Probabilities must lie in (0, 1].
    BadProbability(f64),
}

impl fmt::Display for EcdfError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EcdfError::Empty => write!(f, "cannot build a distribution from zero samples"),
            EcdfError::InvalidSample { index } => {
                write!(f, "sample {index} is NaN or -inf")
            }
            EcdfError::BadProbability(p) => {
                write!(f, "probability {p} outside (0, 1]")
            }
        }
    }
}

impl std::error::Error for EcdfError {}

/// An empirical cumulative distribution function: right-continuous,
/// nondecreasing, reaching 1 at the largest (possibly infinite) sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    samples: Vec<f64>,
}

impl Ecdf {
    /// Builds the distribution; samples are sorted internally. `+inf`
    /// entries are allowed (censored outcomes), NaN and `-inf` are not.
    pub fn new(mut samples: Vec<f64>) -> Result<Self, EcdfError> {
        if samples.is_empty() {
            return Err(EcdfError::Empty);
        }
        for (index, &s) in samples.iter().enumerate() {
            if s.is_nan() || s == f64::NEG_INFINITY {
                return Err(EcdfError::InvalidSample { index });
            }
        }
        samples.sort_by(|a, b| a.partial_cmp(b).expect("NaN excluded above"));
        Ok(Ecdf { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Sorted samples, censored entries included.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Fraction of censored (`+inf`) samples.
    pub fn censored_fraction(&self) -> f64 {
        let censored = self.samples.iter().rev().take_while(|s| s.is_infinite()).count();
        censored as f64 / self.samples.len() as f64
    }

    /// F(x): fraction of samples ≤ x.
    pub fn value(&self, x: f64) -> f64 {
        // partition_point returns the count of samples ≤ x because the
        // predicate is monotone over the sorted data.
        let count = self.samples.partition_point(|&s| s <= x);
        count as f64 / self.samples.len() as f64
    }

    /// Smallest sample q with F(q) ≥ p, for p in (0, 1]. May be `+inf` when
    /// the requested mass lies in the censored region.
    pub fn quantile(&self, p: f64) -> Result<f64, EcdfError> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(EcdfError::BadProbability(p));
        }
        let n = self.samples.len();
        let index = (p * n as f64).ceil() as usize - 1;
        Ok(self.samples[index.min(n - 1)])
    }

    /// Kolmogorov–Smirnov distance: the largest absolute difference between
    /// the two step functions, attained at one of the jump points.
    pub fn ks_distance(&self, other: &Ecdf) -> f64 {
        let mut worst: f64 = 0.0;
        for &x in self.samples.iter().chain(&other.samples) {
            if x.is_finite() {
                worst = worst.max((self.value(x) - other.value(x)).abs());
            }
        }
        // Censored mass differences surface just below +inf.
        let censored = (self.censored_fraction() - other.censored_fraction()).abs();
        worst.max(censored)
    }
}
