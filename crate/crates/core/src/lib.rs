//! Joint trajectory, decoding-order, power, power-splitting and IRS phase
//! optimization for a UAV downlink with NOMA and SWIPT receivers.
//!
//! The crate is organised around four convex subproblems that an
//! alternating-optimization driver ([`ao`]) cycles through:
//!
//! * [`trajectory`]: UAV path and SIC decoding order (SCA + penalty),
//! * [`ps`]: power-splitting ratios (closed form),
//! * [`power`]: transmit power (difference-of-concave SCA),
//! * [`irs`]: reflection phases (SDR with a rank-one DC penalty).
//!
//! All of them are expressed as [`convex::ConvexProgram`]s and solved by the
//! in-crate interior-point backend.

pub mod ao;
pub mod channel;
pub mod convex;
pub mod error;
pub mod experiment;
pub mod feasibility;
pub mod irs;
pub mod power;
pub mod ps;
pub mod rng;
pub mod scenario;
pub mod swipt;
pub mod trajectory;
pub mod validation;

pub use ao::{run, run_benchmark, AoOptions, IterationRecord, RunHistory, RunStatus, Variant};
pub use channel::{ChannelMeans, GainTerms};
pub use error::{Error, Result};
pub use scenario::{generate_scenario, load_config, Params, Scenario, Solution};
pub use swipt::EhModel;

/// Complex scalar used throughout.
pub type C64 = num_complex::Complex64;
