//! Dynamic risk measures induced by quadratic-exponential BSDEs with jumps,
//! with gradient, Aumann-Shapley and measure-change capital allocations.

pub mod allocation;
pub mod bsde;
pub mod drivers;
pub mod error;
pub mod malliavin;
pub mod market;
pub mod measure;
pub mod payoff;
pub mod risk;
pub mod stats;

pub use bsde::{residual_replay, solve_bsde, BsdeSolution, RegressionConfig};
pub use drivers::{Driver, DriverFamily, LinearForm};
pub use error::{Error, Result};
pub use market::{build_grid, simulate_paths, JumpMark, LevyModel, PathBundle, TimeGrid};
pub use payoff::Payoff;
pub use risk::{dynamic_risk, entropic_closed_form, entropic_coherent_static, RiskEngine, RiskMode};
pub use stats::Estimate;
