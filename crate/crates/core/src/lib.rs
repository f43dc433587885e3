//! Downlink sum-rate simulation for multicell and cell-free massive MIMO.
//!
//! The library models a shared square coverage area served either by `L`
//! co-located multi-antenna base stations (multicell) or by `M` distributed
//! single-antenna access points (cell-free), generates channel realizations
//! with a three-slope path loss plus log-normal shadowing, and compares user
//! scheduling algorithms (exhaustive search, greedy zero-forcing selection,
//! and a multi-candidate enhanced greedy) under ZF and regularized-ZF
//! precoding with water-filling power allocation.
//!
//! Modules:
//! - [`scenario`]: geometry, path loss, large-scale fading, channel draws
//! - [`precoding`]: ZF / MMSE precoders, water-filling, power loading
//! - [`rates`]: log-det sum rates and the channel-correlation criterion
//! - [`scheduling`]: the three user-selection algorithms plus flop accounting
//! - [`harness`]: seeded Monte Carlo SNR sweeps over both networks
//! - [`cli`]: batch front end (config parsing, CSV emission)

pub mod cli;
pub mod harness;
pub mod precoding;
pub mod rates;
pub mod scenario;
pub mod scheduling;

pub use harness::{ExperimentConfig, Method, Network, SweepReport, SweepRow};
pub use precoding::PrecoderKind;
pub use scenario::{ChannelRealization, Scenario, ScenarioConfig};
pub use scheduling::{FlopCounter, ScheduleResult, SelectionCriterion};
