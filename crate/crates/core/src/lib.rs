//! Data-driven surrogate modeling and predictive control for differential-drive
//! mobile robots.
//!
//! The crate covers the full experimental pipeline:
//!
//! 1. [`vehicle`] — ground-truth kinematic and dynamic robot models with exact
//!    zero-order-hold discretization.
//! 2. [`sampling`] — simulated data-collection campaigns that emulate a lab
//!    recording session (motion-capture pose stream plus applied input bases).
//! 3. [`postprocess`] — turning raw recordings into regression-ready labeled
//!    datasets (numerical differentiation, body-frame transforms, smoothing).
//! 4. [`dictionary`] / [`edmd`] — observable dictionaries and extended dynamic
//!    mode decomposition, combined into bilinear surrogate models.
//! 5. [`cost`] / [`mpc`] — stage costs and a receding-horizon controller that
//!    uses the surrogates (or the nominal models) for prediction.
//! 6. [`experiments`] — open-loop prediction studies, Monte-Carlo closed-loop
//!    statistics, and data-efficiency sweeps.
//!
//! The `koopman-mpc` binary exposes the pipeline stages as subcommands; see the
//! repository README for usage.

pub mod config;
pub mod cost;
pub mod dictionary;
pub mod ecdf;
pub mod edmd;
pub mod experiments;
pub mod mpc;
pub mod postprocess;
pub mod recording;
pub mod sampling;
pub mod vehicle;

/// Tool version stamped into output-file provenance headers.
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// 64-bit FNV-1a hash, used for provenance stamps (config and dataset hashes).
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
