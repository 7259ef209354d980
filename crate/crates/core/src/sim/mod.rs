//! Euler–Maruyama simulation of the controlled system under synthesized
//! strategies and adversary policies, with Monte-Carlo certification of the
//! target property, the dynamic programming principle and the stochastic
//! super- and sub-solution properties.
//!
//! Every path draws its randomness from streams derived from
//! `(seed, adversary index, path index)`, so results do not depend on the
//! number of worker threads.

mod adversary;
mod cert;
mod path;

pub use adversary::AdversaryPolicy;
pub use cert::{
    certify_target, check_dpp1, check_dpp2, check_subsolution_statistically, check_supersolution_statistically, default_slack_tol, wilson_interval,
    AdversaryStats, CertReport, Certificate, Experiment, McConfig, Outcome, PathSummary, Property, SampledStart, SearchReport, Start,
    StatOptions, StrategySearch, SubsolutionReport, Z95,
};
pub use path::{simulate, simulate_path, PathSpec, SimPath, StopHit};

#[cfg(test)]
mod tests;
