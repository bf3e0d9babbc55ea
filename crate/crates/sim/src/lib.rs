//! Monte Carlo harness, scenario presets, file formats and condition reports
//! for `drkf-core`.

pub mod check;
pub mod config;
pub mod error;
pub mod monte_carlo;
pub mod output;
pub mod scenario;
pub mod simulate;

pub use error::{SimError, SimResult};
pub use monte_carlo::{run_monte_carlo, RunStatistics};
pub use scenario::{builtin_scenarios, preset, FilterKind, Scenario};
