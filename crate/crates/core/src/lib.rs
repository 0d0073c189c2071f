//! Operator-valued time-frequency analysis on `Z_N`.
//!
//! Hilbert-Schmidt operators on `C^N` are analyzed with an operator window
//! against a separable lattice, ranked by coefficient norm and resynthesized
//! with the canonical dual window. The crate also provides test-operator
//! generators, sparsity diagnostics and the experiment drivers used by the
//! `opcoorbit` binary.

pub mod approx;
pub mod error;
pub mod experiments;
pub mod generators;
pub mod hs;
pub mod io;
pub mod rng;
pub mod stats;
pub mod tf;
pub mod windows;

pub use approx::{
    app_err, approx_space_norm, best_k_reconstruct, lp_quasi_norm, rank_coefficients, rate_check, sigma_tail,
    stechkin_check, white_noise_error, ApproxReport, GreedyApproximation, RankedCoefficients,
};
pub use error::{Error, Result};
pub use experiments::{Command, ExperimentConfig, OperatorSpec, RunResult, ScenarioId};
pub use generators::{Mask, SpreadingField};
pub use windows::WindowSpec;
pub use hs::{
    frame_bounds, frame_operator, gram_localization, op_stft_analyze, op_synthesize, CMatrix, CoefficientField,
    DecayFit, FrameSystem, HSOperator, LocalizationMatrix, OperatorWindow,
};
pub use rng::RngStream;
pub use tf::{GridField, Lattice, LatticePoint, Signal, Weight, C64};

/// Library version echoed into reports.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
