//! Bit-exact software model of a low-power neural connectivity processor and
//! phase-locked stimulation controller.
//!
//! The signal path mirrors the hardware datapath:
//!
//! ```text
//! signal ─▶ fir ─▶ phase / connectivity ─▶ trigger ─▶ stimulator
//!    ▲                                        │
//!    └────────────── blanking ◀───────────────┘
//! ```
//!
//! Every fixed-point stage has a double-precision counterpart (see [`oracle`]
//! and [`connectivity::ideal`]) so the approximations can be measured rather
//! than assumed.

// Validation uses `!(x > lo)` so that NaN is rejected along with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod connectivity;
pub mod error;
pub mod experiments;
pub mod fir;
pub mod fixed;
pub mod io;
pub mod oracle;
pub mod phase;
pub mod pipeline;
pub mod signal;
pub mod stats;
pub mod stimulator;
pub mod trigger;

pub use error::{Error, Result};
pub use fixed::Q15;
pub use phase::PhaseCode;
pub use serde;

/// Number of recording channels on the front-end.
pub const N_CHANNELS: usize = 16;
/// Maximum number of simultaneously extracted pair features.
pub const MAX_PAIRS: usize = 8;
/// Number of independent stimulation channels.
pub const N_STIM_CHANNELS: usize = 4;
/// Decimation factor between the ADC stream and the analytic stream.
pub const DECIMATION: usize = 4;
