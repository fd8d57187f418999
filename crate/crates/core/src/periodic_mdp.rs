//! Value iteration for finite MDPs with period-`T` kernels and costs.
//!
//! Stage `l` has kernel `P_l(s' | s, a)` and expected cost `c_l(s, a) >= 0`.
//! The stage operator is
//!
//! ```text
//! Psi_l(V)(s) = min_a [ c_l(s, a) + alpha * sum_s' P_l(s' | s, a) V(s') ]
//! ```
//!
//! and the cycle operator is `Psi = Psi_0 Psi_1 ... Psi_{T-1}`. Iterating
//! `Psi` from `V_0 = 0` converges monotonically to the optimal cost, and the
//! optimal policy is periodic: stage `l` acts greedily against
//! `Psi_{l+1} ... Psi_{T-1}(V*)`.

pub mod format;

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::ipid_model::path_rng;
use crate::numeric::mean_and_std_error;

/// Below this many states the stage sweep runs serially.
const PARALLEL_MIN_STATES: usize = 512;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MdpError {
    #[error("MDP dimensions must be positive (states {states}, actions {actions}, period {period})")]
    EmptyDimension {
        states: usize,
        actions: usize,
        period: usize,
    },
    #[error("discount must lie in [0, 1], got {0}")]
    InvalidDiscount(f64),
    #[error("expected {expected} {what} entries, got {got}")]
    WrongLength {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("transition row (stage {stage}, state {state}, action {action}) sums to {sum}")]
    NotStochastic {
        stage: usize,
        state: usize,
        action: usize,
        sum: f64,
    },
    #[error("transition probability {value} at (stage {stage}, state {state}, action {action}) is negative or not finite")]
    InvalidProbability {
        stage: usize,
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("cost {value} at (stage {stage}, state {state}, action {action}) is negative or not finite")]
    InvalidCost {
        stage: usize,
        state: usize,
        action: usize,
        value: f64,
    },
    #[error("finite horizon {horizon} is not a multiple of the period {period}")]
    HorizonNotMultiple { horizon: usize, period: usize },
}

/// Finite MDP with period-`T` structure.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicMdp {
    num_states: usize,
    num_actions: usize,
    period: usize,
    discount: f64,
    /// `[stage][state][action][next]`, row-major.
    transitions: Vec<f64>,
    /// `[stage][state][action]`, row-major.
    costs: Vec<f64>,
}

impl PeriodicMdp {
    pub fn new(
        num_states: usize,
        num_actions: usize,
        period: usize,
        discount: f64,
        transitions: Vec<f64>,
        costs: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if num_states == 0 || num_actions == 0 || period == 0 {
            return Err(MdpError::EmptyDimension {
                states: num_states,
                actions: num_actions,
                period,
            });
        }
        if !(0.0..=1.0).contains(&discount) {
            return Err(MdpError::InvalidDiscount(discount));
        }
        let rows = period * num_states * num_actions;
        if transitions.len() != rows * num_states {
            return Err(MdpError::WrongLength {
                what: "transition",
                expected: rows * num_states,
                got: transitions.len(),
            });
        }
        if costs.len() != rows {
            return Err(MdpError::WrongLength {
                what: "cost",
                expected: rows,
                got: costs.len(),
            });
        }
        for row in 0..rows {
            let (stage, state, action) = (
                row / (num_states * num_actions),
                (row / num_actions) % num_states,
                row % num_actions,
            );
            let probs = &transitions[row * num_states..(row + 1) * num_states];
            if let Some(&value) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
                return Err(MdpError::InvalidProbability {
                    stage,
                    state,
                    action,
                    value,
                });
            }
            let sum: f64 = probs.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(MdpError::NotStochastic {
                    stage,
                    state,
                    action,
                    sum,
                });
            }
            let value = costs[row];
            if !value.is_finite() || value < 0.0 {
                return Err(MdpError::InvalidCost {
                    stage,
                    state,
                    action,
                    value,
                });
            }
        }
        Ok(Self {
            num_states,
            num_actions,
            period,
            discount,
            transitions,
            costs,
        })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    #[inline]
    fn row(&self, stage: usize, state: usize, action: usize) -> usize {
        (stage * self.num_states + state) * self.num_actions + action
    }

    pub fn transition_row(&self, stage: usize, state: usize, action: usize) -> &[f64] {
        let r = self.row(stage, state, action) * self.num_states;
        &self.transitions[r..r + self.num_states]
    }

    pub fn cost(&self, stage: usize, state: usize, action: usize) -> f64 {
        self.costs[self.row(stage, state, action)]
    }

    pub fn max_cost(&self) -> f64 {
        self.costs.iter().copied().fold(0.0, f64::max)
    }

    /// `c_l(s, a) + alpha * E[V(s')]`.
    #[inline]
    pub fn q_value(&self, v: &[f64], stage: usize, state: usize, action: usize) -> f64 {
        let expected: f64 = self
            .transition_row(stage, state, action)
            .iter()
            .zip(v)
            .map(|(p, x)| p * x)
            .sum();
        self.cost(stage, state, action) + self.discount * expected
    }

    /// Minimizing action and value; ties go to the lowest action index.
    #[inline]
    fn greedy(&self, v: &[f64], stage: usize, state: usize) -> (usize, f64) {
        let mut best = (0, self.q_value(v, stage, state, 0));
        for a in 1..self.num_actions {
            let q = self.q_value(v, stage, state, a);
            if q < best.1 {
                best = (a, q);
            }
        }
        best
    }

    fn map_states<T: Send>(&self, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
        if self.num_states >= PARALLEL_MIN_STATES {
            (0..self.num_states).into_par_iter().map(f).collect()
        } else {
            (0..self.num_states).map(f).collect()
        }
    }

    /// `Psi_l(V)`.
    pub fn apply_stage_operator(&self, v: &[f64], stage: usize) -> Vec<f64> {
        assert_eq!(v.len(), self.num_states);
        self.map_states(|s| self.greedy(v, stage, s).1)
    }

    /// Greedy action map of `Psi_l` against `V`.
    pub fn greedy_actions(&self, v: &[f64], stage: usize) -> Vec<usize> {
        assert_eq!(v.len(), self.num_states);
        self.map_states(|s| self.greedy(v, stage, s).0)
    }

    /// `Psi_l^mu(V)` for a fixed action map `mu`.
    pub fn apply_policy_operator(&self, v: &[f64], stage: usize, mu: &[usize]) -> Vec<f64> {
        assert_eq!(v.len(), self.num_states);
        assert_eq!(mu.len(), self.num_states);
        self.map_states(|s| self.q_value(v, stage, s, mu[s]))
    }

    /// `Psi(V) = Psi_0 ... Psi_{T-1}(V)` with the intermediate compositions.
    pub fn apply_cycle_operator(&self, v: &[f64]) -> CycleOutput {
        let mut stage_values = vec![Vec::new(); self.period];
        let mut current = v.to_vec();
        for stage in (0..self.period).rev() {
            current = self.apply_stage_operator(&current, stage);
            stage_values[stage] = current.clone();
        }
        CycleOutput { stage_values }
    }
}

/// Result of one application of the cycle operator.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleOutput {
    /// `stage_values[l] = Psi_l ... Psi_{T-1}(V)`; entry 0 is `Psi(V)`.
    pub stage_values: Vec<Vec<f64>>,
}

impl CycleOutput {
    pub fn value(&self) -> &[f64] {
        &self.stage_values[0]
    }
}

/// Output of [`value_iterate`].
#[derive(Clone, Debug, PartialEq)]
pub struct StageValues {
    /// Last iterate `V_K`, the approximation of `V*`.
    pub value: Vec<f64>,
    /// `stage_values[l] = Psi_l ... Psi_{T-1}(V_K)`.
    pub stage_values: Vec<Vec<f64>>,
    /// Sup-norm distance between successive iterates.
    pub sup_history: Vec<f64>,
    /// Euclidean distance between successive iterates.
    pub l2_history: Vec<f64>,
    pub cycles: usize,
    pub converged: bool,
    /// `V_k <= V_{k+1}` held (to rounding) on every cycle.
    pub monotone: bool,
}

/// Iterates `V_{k+1} = Psi(V_k)` from `V_0 = 0` until the sup-norm change is
/// at most `tol` or `max_cycles` is hit. Non-convergence is reported in the
/// result, not raised.
pub fn value_iterate(mdp: &PeriodicMdp, tol: f64, max_cycles: usize) -> StageValues {
    let mut v = vec![0.0; mdp.num_states()];
    let mut sup_history = Vec::new();
    let mut l2_history = Vec::new();
    let mut converged = false;
    let mut monotone = true;
    let mut cycles = 0;
    while cycles < max_cycles {
        let next = mdp.apply_cycle_operator(&v).stage_values.swap_remove(0);
        cycles += 1;
        let mut sup: f64 = 0.0;
        let mut sq = 0.0;
        for (a, b) in v.iter().zip(&next) {
            let diff = b - a;
            if diff < -1e-12 * (1.0 + a.abs()) {
                monotone = false;
            }
            sup = sup.max(diff.abs());
            sq += diff * diff;
        }
        debug_assert!(monotone, "value iterates decreased at cycle {cycles}");
        sup_history.push(sup);
        l2_history.push(sq.sqrt());
        v = next;
        if sup <= tol {
            converged = true;
            break;
        }
    }
    let stage_values = mdp.apply_cycle_operator(&v).stage_values;
    StageValues {
        value: v,
        stage_values,
        sup_history,
        l2_history,
        cycles,
        converged,
        monotone,
    }
}

/// One action map per stage; stage `l` applies at times `k` with `k mod T = l`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PeriodicPolicy {
    pub maps: Vec<Vec<usize>>,
}

impl PeriodicPolicy {
    /// The same map at every stage.
    pub fn stationary(map: Vec<usize>, period: usize) -> Self {
        Self {
            maps: vec![map; period],
        }
    }

    pub fn action(&self, stage: usize, state: usize) -> usize {
        self.maps[stage % self.maps.len()][state]
    }
}

/// `mu*_l` greedy against `Psi_{l+1} ... Psi_{T-1}(V*)` (just `V*` for the last stage).
pub fn extract_periodic_policy(values: &StageValues, mdp: &PeriodicMdp) -> PeriodicPolicy {
    let t = mdp.period();
    let maps = (0..t)
        .map(|stage| {
            let next = if stage + 1 < t {
                &values.stage_values[stage + 1]
            } else {
                &values.value
            };
            mdp.greedy_actions(next, stage)
        })
        .collect();
    PeriodicPolicy { maps }
}

/// `||Psi(V) - V||_inf` for the value held in `values`.
pub fn fixed_point_residual(values: &StageValues, mdp: &PeriodicMdp) -> f64 {
    cycle_residual(mdp, &values.value)
}

/// `||Psi(V) - V||_inf` for an arbitrary vector.
pub fn cycle_residual(mdp: &PeriodicMdp, v: &[f64]) -> f64 {
    let out = mdp.apply_cycle_operator(v);
    out.value()
        .iter()
        .zip(v)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// Optimal expected cost of the `horizon`-step problem started at stage 0,
/// by backward induction written independently of the operator methods.
pub fn finite_horizon_oracle(mdp: &PeriodicMdp, horizon: usize) -> Result<Vec<f64>, MdpError> {
    let t = mdp.period();
    if !horizon.is_multiple_of(t) {
        return Err(MdpError::HorizonNotMultiple { horizon, period: t });
    }
    let s_count = mdp.num_states();
    let mut w = vec![0.0; s_count];
    for k in (0..horizon).rev() {
        let stage = k % t;
        let mut next = vec![f64::INFINITY; s_count];
        for (s, out) in next.iter_mut().enumerate() {
            for a in 0..mdp.num_actions() {
                let row = mdp.transition_row(stage, s, a);
                let mut q = mdp.cost(stage, s, a);
                for (sp, p) in row.iter().enumerate() {
                    q += mdp.discount() * p * w[sp];
                }
                if q < *out {
                    *out = q;
                }
            }
        }
        w = next;
    }
    Ok(w)
}

/// Exact cost of a periodic policy, by iterating its policy operators from 0.
pub fn evaluate_policy(
    mdp: &PeriodicMdp,
    policy: &PeriodicPolicy,
    tol: f64,
    max_cycles: usize,
) -> Vec<f64> {
    let t = mdp.period();
    let mut v = vec![0.0; mdp.num_states()];
    for _ in 0..max_cycles {
        let mut w = v.clone();
        for stage in (0..t).rev() {
            w = mdp.apply_policy_operator(&w, stage, &policy.maps[stage]);
        }
        let diff = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = w;
        if diff <= tol {
            break;
        }
    }
    v
}

/// Discounted cost of each simulated path from `start_state` over `horizon`
/// steps, in path order. Path `i` consumes one uniform per step from its own
/// stream, so two policies run with the same seed are coupled.
pub fn simulate_policy_path_costs(
    mdp: &PeriodicMdp,
    policy: &PeriodicPolicy,
    start_state: usize,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> Vec<f64> {
    let t = mdp.period();
    (0..n_paths as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = path_rng(seed, i);
            let mut s = start_state;
            let mut total = 0.0;
            let mut weight = 1.0;
            for k in 0..horizon {
                let stage = k % t;
                let a = policy.action(stage, s);
                total += weight * mdp.cost(stage, s, a);
                weight *= mdp.discount();
                let u: f64 = rng.random();
                let row = mdp.transition_row(stage, s, a);
                let mut acc = 0.0;
                let mut next = row.len() - 1;
                for (sp, p) in row.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        next = sp;
                        break;
                    }
                }
                s = next;
            }
            total
        })
        .collect()
}

/// Monte-Carlo estimate of a policy's discounted cost from `start_state`
/// over `horizon` steps. Returns `(mean, standard error)`.
pub fn simulate_policy_cost(
    mdp: &PeriodicMdp,
    policy: &PeriodicPolicy,
    start_state: usize,
    horizon: usize,
    n_paths: usize,
    seed: u64,
) -> (f64, f64) {
    mean_and_std_error(&simulate_policy_path_costs(
        mdp,
        policy,
        start_state,
        horizon,
        n_paths,
        seed,
    ))
}

/// Random instance with Dirichlet-like rows and costs in `[0, max_cost)`;
/// used by tests and benchmarks.
pub fn random_mdp(
    num_states: usize,
    num_actions: usize,
    period: usize,
    discount: f64,
    max_cost: f64,
    seed: u64,
) -> PeriodicMdp {
    let mut rng = path_rng(seed, u64::MAX);
    let rows = period * num_states * num_actions;
    let mut transitions = Vec::with_capacity(rows * num_states);
    for _ in 0..rows {
        let raw: Vec<f64> = (0..num_states)
            .map(|_| -(1.0 - rng.random::<f64>()).ln())
            .collect();
        let sum: f64 = raw.iter().sum();
        let mut row: Vec<f64> = raw.iter().map(|x| x / sum).collect();
        // put the rounding residue on the largest entry so rows sum to 1
        let resid = 1.0 - row.iter().sum::<f64>();
        let imax = (0..num_states)
            .max_by(|&a, &b| row[a].total_cmp(&row[b]))
            .unwrap();
        row[imax] += resid;
        transitions.extend(row);
    }
    let costs = (0..rows).map(|_| max_cost * rng.random::<f64>()).collect();
    PeriodicMdp::new(num_states, num_actions, period, discount, transitions, costs)
        .expect("generated instance is valid")
}
