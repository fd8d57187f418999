//! Seeded simulation of threshold stopping rules on i.p.i.d. paths.
//!
//! Path `i` under seed `s` always uses the random stream
//! [`path_rng`](crate::ipid_model::path_rng)`(s, i)`, so every estimate is
//! reproducible and independent of how rayon schedules the paths. Different
//! policies evaluated with the same seed see the same paths.
//!
//! A rule stops at the first `n >= 1` with `p_n > A_s`, `s = (n - 1) mod T`.
//! The cost of a path is `lambda_s` for a false alarm at time `n` (`tau < nu`)
//! and otherwise `sum_{n = nu}^{tau - 1} d_{(n - 1) mod T}`. A path that has
//! not stopped by the horizon `H` is censored at `tau = H + 1`, so its delay
//! through time `H` is charged.

use rayon::prelude::*;
use thiserror::Error;

use crate::belief::{belief_step, update_odds_general, BeliefError, OddsState};
use crate::detection_dp::{DetectionCostSpec, DetectionSolution};
use crate::ipid_model::{path_rng, stage_index, ChangePrior, IpidScenario, PathStream, SamplePath};
use crate::numeric::{logistic, mean_and_std_error};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MonteCarloError {
    #[error("threshold {0} must lie in [0, 1)")]
    InvalidThreshold(f64),
    #[error("policy has {got} thresholds but the period is {period}")]
    PeriodMismatch { got: usize, period: usize },
    #[error("at least one path is required")]
    NoPaths,
    #[error("horizon must be positive")]
    ZeroHorizon,
    #[error("false-alarm level must lie in (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error(transparent)]
    Belief(#[from] BeliefError),
}

/// Threshold rule on the posterior change probability.
#[derive(Clone, Debug, PartialEq)]
pub enum StoppingPolicy {
    SingleThreshold(f64),
    /// One threshold per stage; entry `s` applies at times `n` with `(n - 1) mod T = s`.
    PeriodicThresholds(Vec<f64>),
}

impl StoppingPolicy {
    pub fn threshold(&self, stage: usize) -> f64 {
        match self {
            Self::SingleThreshold(a) => *a,
            Self::PeriodicThresholds(a) => a[stage % a.len()],
        }
    }

    pub fn validate(&self, period: usize) -> Result<(), MonteCarloError> {
        let list: &[f64] = match self {
            Self::SingleThreshold(a) => std::slice::from_ref(a),
            Self::PeriodicThresholds(a) => {
                if a.len() != period {
                    return Err(MonteCarloError::PeriodMismatch {
                        got: a.len(),
                        period,
                    });
                }
                a
            }
        };
        match list.iter().find(|a| !(0.0..1.0).contains(*a)) {
            Some(&a) => Err(MonteCarloError::InvalidThreshold(a)),
            None => Ok(()),
        }
    }
}

/// Single-threshold sweep grid: `0`, then `0.001..=0.050` in steps of `0.001`,
/// then `0.06..=0.99` in steps of `0.01`. The fine block resolves the narrow
/// minima that small thresholds produce when one stage carries a weak change.
pub fn default_threshold_grid() -> Vec<f64> {
    let mut grid: Vec<f64> = (0..=50).map(|i| i as f64 / 1000.0).collect();
    grid.extend((6..=99).map(|i| i as f64 / 100.0));
    grid
}

/// Default simulation horizon `ceil(50 / rho)`.
pub fn default_horizon(rho: f64) -> u64 {
    (50.0 / rho).ceil() as u64
}

/// Posterior tracker: the belief recursion for geometric priors, the general
/// odds recursion otherwise.
#[derive(Clone, Debug)]
pub struct BeliefTracker<'a> {
    scenario: &'a IpidScenario,
    prior: &'a ChangePrior,
    rho: Option<f64>,
    p: f64,
    odds: OddsState,
}

impl<'a> BeliefTracker<'a> {
    pub fn new(scenario: &'a IpidScenario, prior: &'a ChangePrior) -> Self {
        Self {
            scenario,
            prior,
            rho: prior.rho(),
            p: 0.0,
            odds: OddsState::initial(),
        }
    }

    pub fn time(&self) -> u64 {
        self.odds.n
    }

    pub fn probability(&self) -> f64 {
        self.p
    }

    /// Consumes `y_{n+1}` and returns `p_{n+1}`.
    pub fn observe(&mut self, y: f64) -> Result<f64, BeliefError> {
        let n = self.odds.n + 1;
        match self.rho {
            Some(rho) => {
                let stage = stage_index(n, self.scenario.period());
                self.p = belief_step(self.p, rho, self.scenario, stage, y)
                    .map_err(|_| BeliefError::OutsideSupports { n, y })?;
                self.odds.n = n;
            }
            None => {
                self.odds = update_odds_general(self.odds, self.prior, self.scenario, y)?;
                self.p = logistic(self.odds.log_r);
            }
        }
        Ok(self.p)
    }
}

/// Stopping time of `policy` on a materialized path, or `None` if it never
/// stops within the path.
pub fn run_policy(
    path: &SamplePath,
    policy: &StoppingPolicy,
    prior: &ChangePrior,
    scenario: &IpidScenario,
) -> Result<Option<u64>, MonteCarloError> {
    policy.validate(scenario.period())?;
    let mut tracker = BeliefTracker::new(scenario, prior);
    for &y in &path.observations {
        let p = tracker.observe(y)?;
        let n = tracker.time();
        if p > policy.threshold(stage_index(n, scenario.period())) {
            return Ok(Some(n));
        }
    }
    Ok(None)
}

/// Change point and stopping time of one simulated path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PathOutcome {
    pub change_point: u64,
    /// `None` when the rule had not stopped by the horizon.
    pub stop_time: Option<u64>,
}

impl PathOutcome {
    pub fn false_alarm(&self) -> bool {
        matches!(self.stop_time, Some(t) if t < self.change_point)
    }

    /// `tau`, or `H + 1` for a censored path.
    pub fn effective_stop(&self, horizon: u64) -> u64 {
        self.stop_time.unwrap_or(horizon + 1)
    }

    /// `(tau - nu)^+` with censoring.
    pub fn delay(&self, horizon: u64) -> u64 {
        self.effective_stop(horizon).saturating_sub(self.change_point)
    }

    /// Bayes cost of this path under `costs`.
    pub fn cost(&self, costs: &DetectionCostSpec, horizon: u64) -> f64 {
        let t = costs.period();
        let tau = self.effective_stop(horizon);
        if tau < self.change_point {
            return if self.stop_time.is_some() {
                costs.false_alarm[stage_index(tau, t)]
            } else {
                0.0
            };
        }
        accumulated_delay(&costs.delay, self.change_point, tau)
    }
}

/// `sum_{n = from}^{to - 1} d_{(n - 1) mod T}` for `1 <= from`.
pub fn accumulated_delay(delay: &[f64], from: u64, to: u64) -> f64 {
    if to <= from {
        return 0.0;
    }
    let t = delay.len() as u64;
    let count = to - from;
    let full = count / t;
    let cycle: f64 = delay.iter().sum();
    let mut total = full as f64 * cycle;
    let start = (from - 1) % t;
    for k in 0..count % t {
        total += delay[((start + k) % t) as usize];
    }
    total
}

/// Simulates path `path_index` lazily until `policy` stops or `horizon` passes.
pub fn simulate_outcome(
    scenario: &IpidScenario,
    prior: &ChangePrior,
    policy: &StoppingPolicy,
    horizon: u64,
    seed: u64,
    path_index: u64,
) -> Result<PathOutcome, MonteCarloError> {
    let mut stream = PathStream::new(scenario, prior, seed, path_index);
    let change_point = stream.change_point();
    let mut tracker = BeliefTracker::new(scenario, prior);
    let t = scenario.period();
    for n in 1..=horizon {
        let y = stream.next().expect("path streams are unbounded");
        let p = tracker.observe(y)?;
        if p > policy.threshold(stage_index(n, t)) {
            return Ok(PathOutcome {
                change_point,
                stop_time: Some(n),
            });
        }
    }
    Ok(PathOutcome {
        change_point,
        stop_time: None,
    })
}

/// Outcomes of paths `0..n_paths`, in path order.
pub fn simulate_outcomes(
    scenario: &IpidScenario,
    prior: &ChangePrior,
    policy: &StoppingPolicy,
    n_paths: usize,
    horizon: u64,
    seed: u64,
) -> Result<Vec<PathOutcome>, MonteCarloError> {
    if n_paths == 0 {
        return Err(MonteCarloError::NoPaths);
    }
    if horizon == 0 {
        return Err(MonteCarloError::ZeroHorizon);
    }
    policy.validate(scenario.period())?;
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| simulate_outcome(scenario, prior, policy, horizon, seed, i))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EstimateKind {
    BayesCost,
    Add,
    ConditionalAdd,
    Pfa,
}

/// A Monte-Carlo estimate with its standard error and provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationReport {
    pub kind: EstimateKind,
    pub estimate: f64,
    /// Sample standard deviation over `sqrt(paths used)`.
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: u64,
    /// Fraction of paths that had not stopped by the horizon.
    pub censored_fraction: f64,
}

impl SimulationReport {
    fn from_samples(
        kind: EstimateKind,
        samples: &[f64],
        n_paths: usize,
        seed: u64,
        horizon: u64,
        censored_fraction: f64,
    ) -> Self {
        let (estimate, std_error) = if samples.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            mean_and_std_error(samples)
        };
        Self {
            kind,
            estimate,
            std_error,
            n_paths,
            seed,
            horizon,
            censored_fraction,
        }
    }

    /// Normal-approximation half-width at the given z-score.
    pub fn half_width(&self, z: f64) -> f64 {
        z * self.std_error
    }
}

fn censored_fraction(outcomes: &[PathOutcome]) -> f64 {
    outcomes.iter().filter(|o| o.stop_time.is_none()).count() as f64 / outcomes.len() as f64
}

/// Bayes cost of `policy` under a geometric prior with `costs.rho`.
pub fn estimate_bayes_cost(
    scenario: &IpidScenario,
    costs: &DetectionCostSpec,
    policy: &StoppingPolicy,
    n_paths: usize,
    horizon: u64,
    seed: u64,
) -> Result<SimulationReport, MonteCarloError> {
    let prior =
        ChangePrior::geometric(costs.rho).map_err(|_| MonteCarloError::InvalidThreshold(costs.rho))?;
    let outcomes = simulate_outcomes(scenario, &prior, policy, n_paths, horizon, seed)?;
    let path_costs: Vec<f64> = outcomes.iter().map(|o| o.cost(costs, horizon)).collect();
    Ok(SimulationReport::from_samples(
        EstimateKind::BayesCost,
        &path_costs,
        n_paths,
        seed,
        horizon,
        censored_fraction(&outcomes),
    ))
}

/// Bayes cost of the rule extracted from a solved detection problem.
///
/// When the solution prefers stopping at time 0 every path pays
/// `lambda_{T-1}`; otherwise the per-stage thresholds are simulated.
pub fn estimate_optimal_policy_cost(
    scenario: &IpidScenario,
    costs: &DetectionCostSpec,
    solution: &DetectionSolution,
    n_paths: usize,
    horizon: u64,
    seed: u64,
) -> Result<SimulationReport, MonteCarloError> {
    if solution.stops_at_start() {
        if n_paths == 0 {
            return Err(MonteCarloError::NoPaths);
        }
        let lambda = costs.false_alarm[costs.period() - 1];
        return Ok(SimulationReport::from_samples(
            EstimateKind::BayesCost,
            &vec![lambda; n_paths],
            n_paths,
            seed,
            horizon,
            0.0,
        ));
    }
    let policy = StoppingPolicy::PeriodicThresholds(solution.thresholds.clone());
    estimate_bayes_cost(scenario, costs, &policy, n_paths, horizon, seed)
}

/// One threshold of a single-threshold sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub cost: f64,
    pub std_error: f64,
    pub censored_fraction: f64,
}

/// Cost against threshold, all thresholds evaluated on the same paths.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub n_paths: usize,
    pub seed: u64,
    pub horizon: u64,
}

impl SweepTable {
    /// Row with the smallest estimated cost (first on ties).
    pub fn best(&self) -> &SweepRow {
        self.rows
            .iter()
            .reduce(|a, b| if b.cost < a.cost { b } else { a })
            .expect("sweep has at least one row")
    }
}

/// Stopping times of every threshold in `sorted` (ascending) on one path,
/// simulated once: `tau(A)` is the first time the belief exceeds `A`.
fn first_passages(
    scenario: &IpidScenario,
    prior: &ChangePrior,
    sorted: &[f64],
    horizon: u64,
    seed: u64,
    path_index: u64,
) -> Result<(u64, Vec<Option<u64>>), MonteCarloError> {
    let mut stream = PathStream::new(scenario, prior, seed, path_index);
    let change_point = stream.change_point();
    let mut tracker = BeliefTracker::new(scenario, prior);
    let mut taus = vec![None; sorted.len()];
    let mut crossed = 0;
    for n in 1..=horizon {
        if crossed == sorted.len() {
            break;
        }
        let p = tracker.observe(stream.next().expect("path streams are unbounded"))?;
        while crossed < sorted.len() && p > sorted[crossed] {
            taus[crossed] = Some(n);
            crossed += 1;
        }
    }
    Ok((change_point, taus))
}

/// Bayes cost for each single threshold in `thresholds`.
pub fn sweep_single_threshold(
    scenario: &IpidScenario,
    costs: &DetectionCostSpec,
    thresholds: &[f64],
    n_paths: usize,
    horizon: u64,
    seed: u64,
) -> Result<SweepTable, MonteCarloError> {
    if n_paths == 0 {
        return Err(MonteCarloError::NoPaths);
    }
    if horizon == 0 {
        return Err(MonteCarloError::ZeroHorizon);
    }
    for &a in thresholds {
        StoppingPolicy::SingleThreshold(a).validate(scenario.period())?;
    }
    let prior =
        ChangePrior::geometric(costs.rho).map_err(|_| MonteCarloError::InvalidThreshold(costs.rho))?;
    let mut order: Vec<usize> = (0..thresholds.len()).collect();
    order.sort_by(|&a, &b| thresholds[a].total_cmp(&thresholds[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| thresholds[i]).collect();
    let per_path: Vec<(u64, Vec<Option<u64>>)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|i| first_passages(scenario, &prior, &sorted, horizon, seed, i))
        .collect::<Result<_, _>>()?;
    let mut rows = vec![None; thresholds.len()];
    for (k, &orig) in order.iter().enumerate() {
        let outcomes: Vec<PathOutcome> = per_path
            .iter()
            .map(|(nu, taus)| PathOutcome {
                change_point: *nu,
                stop_time: taus[k],
            })
            .collect();
        let path_costs: Vec<f64> = outcomes.iter().map(|o| o.cost(costs, horizon)).collect();
        let (cost, std_error) = mean_and_std_error(&path_costs);
        rows[orig] = Some(SweepRow {
            threshold: thresholds[orig],
            cost,
            std_error,
            censored_fraction: censored_fraction(&outcomes),
        });
    }
    Ok(SweepTable {
        rows: rows.into_iter().map(|r| r.expect("every row filled")).collect(),
        n_paths,
        seed,
        horizon,
    })
}

/// Delay and false-alarm estimates of one single-threshold rule.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayFalseAlarm {
    /// `E[(tau - nu)^+]`.
    pub add: SimulationReport,
    /// `E[tau - nu | tau >= nu]`.
    pub conditional_add: SimulationReport,
    /// `P(tau < nu)`.
    pub pfa: SimulationReport,
}

pub fn estimate_add_pfa(
    scenario: &IpidScenario,
    prior: &ChangePrior,
    threshold: f64,
    n_paths: usize,
    horizon: u64,
    seed: u64,
) -> Result<DelayFalseAlarm, MonteCarloError> {
    let policy = StoppingPolicy::SingleThreshold(threshold);
    let outcomes = simulate_outcomes(scenario, prior, &policy, n_paths, horizon, seed)?;
    let censored = censored_fraction(&outcomes);
    let delays: Vec<f64> = outcomes.iter().map(|o| o.delay(horizon) as f64).collect();
    let conditional: Vec<f64> = outcomes
        .iter()
        .filter(|o| !o.false_alarm())
        .map(|o| o.delay(horizon) as f64)
        .collect();
    let alarms: Vec<f64> = outcomes
        .iter()
        .map(|o| if o.false_alarm() { 1.0 } else { 0.0 })
        .collect();
    let report = |kind, samples: &[f64]| {
        SimulationReport::from_samples(kind, samples, n_paths, seed, horizon, censored)
    };
    Ok(DelayFalseAlarm {
        add: report(EstimateKind::Add, &delays),
        conditional_add: report(EstimateKind::ConditionalAdd, &conditional),
        pfa: report(EstimateKind::Pfa, &alarms),
    })
}

/// `|ln alpha| / (I + d)`.
pub fn analytic_delay(alpha: f64, information: f64, tail_exponent: f64) -> f64 {
    alpha.ln().abs() / (information + tail_exponent)
}

/// One point of the delay/false-alarm trade-off at `A = 1 - alpha`.
#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffRow {
    pub alpha: f64,
    pub threshold: f64,
    pub estimates: DelayFalseAlarm,
    pub analytic: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn tradeoff_curve(
    scenario: &IpidScenario,
    prior: &ChangePrior,
    alphas: &[f64],
    information: f64,
    tail_exponent: f64,
    n_paths: usize,
    horizon: u64,
    seed: u64,
) -> Result<Vec<TradeoffRow>, MonteCarloError> {
    alphas
        .iter()
        .map(|&alpha| {
            if !(alpha > 0.0 && alpha < 1.0) {
                return Err(MonteCarloError::InvalidAlpha(alpha));
            }
            let threshold = 1.0 - alpha;
            let estimates = estimate_add_pfa(scenario, prior, threshold, n_paths, horizon, seed)?;
            Ok(TradeoffRow {
                alpha,
                threshold,
                estimates,
                analytic: analytic_delay(alpha, information, tail_exponent),
            })
        })
        .collect()
}

/// Simulated conditional delay against the asymptotic lower bound.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundRow {
    pub alpha: f64,
    pub bound: f64,
    pub simulated: f64,
    /// `simulated / bound`.
    pub ratio: f64,
    /// Set when `ratio < slack`; informational only.
    pub below: bool,
}

/// Tabulates `(alpha, simulated conditional delay)` pairs against
/// `|ln alpha| / (I + d)`, flagging points under `slack * bound`.
pub fn lower_bound_check(
    points: &[(f64, f64)],
    information: f64,
    tail_exponent: f64,
    slack: f64,
) -> Vec<BoundRow> {
    points
        .iter()
        .map(|&(alpha, simulated)| {
            let bound = analytic_delay(alpha, information, tail_exponent);
            let ratio = simulated / bound;
            BoundRow {
                alpha,
                bound,
                simulated,
                ratio,
                below: ratio < slack,
            }
        })
        .collect()
}

/// Belief trajectory `p_1..p_H` of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathTrace {
    pub change_point: u64,
    pub beliefs: Vec<f64>,
}

pub fn trace_path(
    scenario: &IpidScenario,
    prior: &ChangePrior,
    horizon: u64,
    seed: u64,
    path_index: u64,
) -> Result<PathTrace, MonteCarloError> {
    let mut stream = PathStream::new(scenario, prior, seed, path_index);
    let change_point = stream.change_point();
    let mut tracker = BeliefTracker::new(scenario, prior);
    let beliefs = stream
        .by_ref()
        .take(horizon as usize)
        .map(|y| tracker.observe(y))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PathTrace {
        change_point,
        beliefs,
    })
}

/// Seeds derived from one master seed for independent experiment blocks.
pub fn sub_seed(seed: u64, block: u64) -> u64 {
    use rand::RngCore;
    path_rng(seed, u64::MAX - block).next_u64()
}
