//! Bayesian quickest change detection for independent and periodically
//! identically distributed (i.p.i.d.) processes.
//!
//! The crate is organized bottom-up:
//!
//! - [`ipid_model`]: stage densities, change-point priors, path sampling and
//!   the information quantities `I` and `d`.
//! - [`belief`]: the posterior `p_n` and odds `R_n` recursions.
//! - [`periodic_mdp`]: value iteration for finite MDPs whose kernels and costs
//!   repeat with period `T`, plus the plain-text instance format.
//! - [`detection_dp`]: the belief-state stopping problem on a grid, solved by
//!   the periodic Bellman recursion, with per-stage threshold extraction.
//! - [`monte_carlo`]: seeded simulation of threshold policies, Bayes cost,
//!   delay and false-alarm estimates, and the asymptotic delay formula.

pub mod belief;
pub mod detection_dp;
pub mod ipid_model;
pub mod monte_carlo;
pub mod numeric;
pub mod periodic_mdp;
pub mod quadrature;

pub use belief::{BeliefError, BeliefState, OddsState};
pub use detection_dp::{
    solve_detection, BeliefGrid, DetectionCostSpec, DetectionError, DetectionProblem,
    DetectionSolution, QuadratureSpec, SolveOptions,
};
pub use ipid_model::{
    kl_information, prior_tail_exponent, sample_path, stage_of, ChangePoint, ChangePrior,
    IpidScenario, ModelError, SamplePath, StageDensity,
};
pub use monte_carlo::{MonteCarloError, SimulationReport, StoppingPolicy};
pub use periodic_mdp::{MdpError, PeriodicMdp, PeriodicPolicy, StageValues};
