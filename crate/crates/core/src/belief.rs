//! Posterior change probability `p_n` and odds statistic `R_n = p_n / (1 - p_n)`.
//!
//! Two independent routes are provided for geometric priors: the belief
//! recursion evaluated on `ln p` / `ln(1 - p)` ([`update_belief`]) and the
//! odds recursion on `ln R` ([`update_odds_geometric`]). Arbitrary priors go
//! through [`update_odds_general`].

use thiserror::Error;

use crate::ipid_model::{stage_index, ChangePrior, IpidScenario};
use crate::numeric::{ln_add_exp, log_odds, logistic};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("observation {y} at time {n} lies outside both the pre- and post-change supports")]
    OutsideSupports { n: u64, y: f64 },
    #[error("prior tail exhausted at time {n}: P(nu > n) = 0")]
    TailExhausted { n: u64 },
    #[error("belief update needs a geometric prior")]
    NotGeometric,
}

/// `p_n = P(nu <= n | Y_1..Y_n)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeliefState {
    pub p: f64,
    pub n: u64,
}

impl BeliefState {
    /// `p_0 = 0`.
    pub fn initial() -> Self {
        Self { p: 0.0, n: 0 }
    }
}

impl Default for BeliefState {
    fn default() -> Self {
        Self::initial()
    }
}

/// `ln R_n`; `-inf` encodes `R = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OddsState {
    pub log_r: f64,
    pub n: u64,
}

impl OddsState {
    /// `R_0 = 0`.
    pub fn initial() -> Self {
        Self {
            log_r: f64::NEG_INFINITY,
            n: 0,
        }
    }

    pub fn probability(&self) -> f64 {
        log_odds_to_probability(self.log_r)
    }
}

impl Default for OddsState {
    fn default() -> Self {
        Self::initial()
    }
}

/// `ln(p / (1 - p))`, with `p = 0 -> -inf` and `p = 1 -> +inf`.
pub fn probability_to_log_odds(p: f64) -> f64 {
    log_odds(p)
}

pub fn log_odds_to_probability(log_r: f64) -> f64 {
    logistic(log_r)
}

/// One step of the belief recursion at 0-based observation stage `stage`:
/// `p~ = p + (1 - p) rho`, `p' = p~ g(y) / (p~ g(y) + (1 - p~) f(y))`.
///
/// Evaluated as `1 / (1 + exp(b - a))` with `a = ln p~ + ln g(y)` and
/// `b = ln(1 - p~) + ln f(y)`. `p = 1` is absorbing.
pub fn belief_step(
    p: f64,
    rho: f64,
    scenario: &IpidScenario,
    stage: usize,
    y: f64,
) -> Result<f64, (f64, f64)> {
    let (ln_f, ln_g) = scenario.ln_pdfs(stage, y);
    if ln_f == f64::NEG_INFINITY && ln_g == f64::NEG_INFINITY {
        return Err((ln_f, ln_g));
    }
    if p >= 1.0 {
        return Ok(1.0);
    }
    let p_tilde = p + (1.0 - p) * rho;
    let ln_one_minus = (-p).ln_1p() + (-rho).ln_1p();
    let a = p_tilde.ln() + ln_g;
    let b = ln_one_minus + ln_f;
    if a == f64::NEG_INFINITY {
        return Ok(0.0);
    }
    if b == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    Ok(logistic(a - b))
}

/// Advances `p_{n-1} -> p_n` for a geometric prior.
pub fn update_belief(
    state: BeliefState,
    prior: &ChangePrior,
    scenario: &IpidScenario,
    y: f64,
) -> Result<BeliefState, BeliefError> {
    let rho = prior.rho().ok_or(BeliefError::NotGeometric)?;
    let n = state.n + 1;
    let stage = stage_index(n, scenario.period());
    let p = belief_step(state.p, rho, scenario, stage, y)
        .map_err(|_| BeliefError::OutsideSupports { n, y })?;
    Ok(BeliefState { p, n })
}

fn checked_llr(scenario: &IpidScenario, n: u64, y: f64) -> Result<f64, BeliefError> {
    let (ln_f, ln_g) = scenario.ln_pdfs(stage_index(n, scenario.period()), y);
    if ln_f == f64::NEG_INFINITY && ln_g == f64::NEG_INFINITY {
        return Err(BeliefError::OutsideSupports { n, y });
    }
    Ok(ln_g - ln_f)
}

fn add_llr(log_r: f64, llr: f64) -> f64 {
    // R = inf stays pinned; R = 0 with an infinite ratio has no mass either way
    if log_r == f64::INFINITY {
        f64::INFINITY
    } else if log_r == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        log_r + llr
    }
}

/// `R_n = (R_{n-1} + rho) / (1 - rho) * g_n(y) / f_n(y)` in log form.
pub fn update_odds_geometric(
    state: OddsState,
    rho: f64,
    scenario: &IpidScenario,
    y: f64,
) -> Result<OddsState, BeliefError> {
    let n = state.n + 1;
    let llr = checked_llr(scenario, n, y)?;
    let pre = ln_add_exp(state.log_r, rho.ln()) - (-rho).ln_1p();
    Ok(OddsState {
        log_r: add_llr(pre, llr),
        n,
    })
}

/// `R_n = (R_{n-1} Gamma_{n-1} / Gamma_n + pi_n / Gamma_n) * g_n(y) / f_n(y)`
/// for any prior, where `Gamma_n = P(nu > n)`.
pub fn update_odds_general(
    state: OddsState,
    prior: &ChangePrior,
    scenario: &IpidScenario,
    y: f64,
) -> Result<OddsState, BeliefError> {
    let n = state.n + 1;
    let ln_tail = prior.ln_tail(n);
    if ln_tail == f64::NEG_INFINITY {
        return Err(BeliefError::TailExhausted { n });
    }
    let llr = checked_llr(scenario, n, y)?;
    let carried = if state.log_r == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        state.log_r + prior.ln_tail(n - 1)
    };
    let pre = ln_add_exp(carried, prior.ln_mass(n)) - ln_tail;
    Ok(OddsState {
        log_r: add_llr(pre, llr),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ipid_model::{sample_path, IpidScenario};
    use proptest::prelude::*;

    fn shift(means: &[f64]) -> IpidScenario {
        IpidScenario::unit_mean_shift(means).unwrap()
    }

    /// Posterior by explicit enumeration over nu in 1..=n plus the tail.
    fn brute_force_posterior(prior: &ChangePrior, s: &IpidScenario, ys: &[f64]) -> f64 {
        let n = ys.len();
        let t = s.period();
        let mut num = 0.0;
        for k in 1..=n {
            let mut lik = prior.mass(k as u64);
            for (i, &y) in ys.iter().enumerate() {
                let st = i % t;
                lik *= if i + 1 < k { s.pre(st).pdf(y) } else { s.post(st).pdf(y) };
            }
            num += lik;
        }
        let mut none = prior.tail(n as u64);
        for (i, &y) in ys.iter().enumerate() {
            none *= s.pre(i % t).pdf(y);
        }
        num / (num + none)
    }

    #[test]
    fn belief_examples() {
        let prior = ChangePrior::geometric(0.01).unwrap();
        let same = shift(&[0.0]);
        let st = update_belief(BeliefState::initial(), &prior, &same, 0.4).unwrap();
        assert!((st.p - 0.01).abs() < 1e-15);
        assert_eq!(st.n, 1);

        let s = shift(&[2.0]);
        let one = BeliefState { p: 1.0, n: 4 };
        for &y in &[-50.0, 0.0, 3.0] {
            assert_eq!(update_belief(one, &prior, &s, y).unwrap().p, 1.0);
        }

        let p1 = update_belief(BeliefState::initial(), &prior, &s, 1.0).unwrap().p;
        assert!((p1 - 0.01).abs() < 1e-15);
        assert!((p1 - brute_force_posterior(&prior, &s, &[1.0])).abs() < 1e-15);
    }

    #[test]
    fn belief_matches_enumeration() {
        let prior = ChangePrior::geometric(0.05).unwrap();
        let s = shift(&[2.0, 1.0, -0.5]);
        let path = sample_path(&s, &prior, 30, 3, 1);
        let mut st = BeliefState::initial();
        for k in 0..path.observations.len() {
            st = update_belief(st, &prior, &s, path.observations[k]).unwrap();
            let bf = brute_force_posterior(&prior, &s, &path.observations[..=k]);
            assert!((st.p - bf).abs() < 1e-12, "step {k}: {} vs {bf}", st.p);
        }
    }

    #[test]
    fn outside_both_supports_is_an_error() {
        #[derive(Debug)]
        struct Interval(f64, f64);
        impl crate::ipid_model::LogDensity for Interval {
            fn ln_pdf(&self, x: f64) -> f64 {
                if x >= self.0 && x <= self.1 {
                    -(self.1 - self.0).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            fn sample(&self, rng: &mut dyn rand::RngCore) -> f64 {
                use rand::Rng;
                self.0 + (self.1 - self.0) * rng.random::<f64>()
            }
            fn location(&self) -> f64 {
                0.5 * (self.0 + self.1)
            }
            fn scale(&self) -> f64 {
                self.1 - self.0
            }
        }
        use crate::ipid_model::StageDensity;
        use std::sync::Arc;
        let s = IpidScenario::new(
            vec![StageDensity::custom(Arc::new(Interval(0.0, 1.0)))],
            vec![StageDensity::custom(Arc::new(Interval(0.5, 2.0)))],
        )
        .unwrap();
        let prior = ChangePrior::geometric(0.1).unwrap();
        let err = update_belief(BeliefState::initial(), &prior, &s, 5.0).unwrap_err();
        assert_eq!(err, BeliefError::OutsideSupports { n: 1, y: 5.0 });
        assert!(update_odds_geometric(OddsState::initial(), 0.1, &s, -1.0).is_err());
        // only g supports y: belief jumps to 1
        assert_eq!(update_belief(BeliefState::initial(), &prior, &s, 1.5).unwrap().p, 1.0);
        // only f supports y: belief drops to 0
        assert_eq!(update_belief(BeliefState::initial(), &prior, &s, 0.2).unwrap().p, 0.0);
    }

    #[test]
    fn odds_examples() {
        let rho = 0.01;
        let s = shift(&[2.0]);
        let r1 = update_odds_geometric(OddsState::initial(), rho, &s, 1.0).unwrap();
        assert!((r1.log_r.exp() - rho / (1.0 - rho)).abs() < 1e-15);

        let geo_table = ChangePrior::tabulated_geometric(rho, 50).unwrap();
        let g1 = update_odds_general(OddsState::initial(), &geo_table, &s, 1.0).unwrap();
        assert!((g1.log_r.exp() - rho / (1.0 - rho)).abs() < 1e-15);

        // y with LLR = ln 2 under N(2,1) vs N(0,1): 2y - 2 = ln 2
        let y = (2f64.ln() + 2.0) / 2.0;
        let st = OddsState { log_r: 0.0, n: 0 };
        let r = update_odds_geometric(st, rho, &s, y).unwrap();
        assert!((r.log_r.exp() - (1.01 / 0.99) * 2.0).abs() < 1e-12);
        assert!((r.log_r.exp() - 2.040404040404).abs() < 1e-9);
    }

    #[test]
    fn prior_only_odds_closed_form() {
        let rho = 0.03;
        let same = shift(&[0.0, 0.0]);
        let prior = ChangePrior::tabulated_geometric(rho, 400).unwrap();
        let mut g = OddsState::initial();
        let mut b = BeliefState::initial();
        let geo = ChangePrior::geometric(rho).unwrap();
        for n in 1..=200u64 {
            g = update_odds_general(g, &prior, &same, 0.123).unwrap();
            b = update_belief(b, &geo, &same, 0.123).unwrap();
            let q = (1.0 - rho).powi(n as i32);
            let closed = (1.0 - q) / q;
            assert!((g.log_r.exp() - closed).abs() / closed < 1e-9, "n={n}");
            assert!((b.p - (1.0 - q)).abs() < 1e-12, "n={n}");
        }
    }

    #[test]
    fn general_recursion_with_non_geometric_prior_matches_enumeration() {
        let prior = ChangePrior::explicit(vec![0.1, 0.05, 0.3, 0.2, 0.1, 0.05]).unwrap();
        let s = shift(&[1.5, -1.0]);
        let geo = ChangePrior::geometric(0.2).unwrap();
        let path = sample_path(&s, &geo, 5, 8, 0);
        let mut st = OddsState::initial();
        for k in 0..5 {
            st = update_odds_general(st, &prior, &s, path.observations[k]).unwrap();
            let bf = brute_force_posterior(&prior, &s, &path.observations[..=k]);
            assert!((st.probability() - bf).abs() < 1e-12);
        }
    }

    #[test]
    fn exhausted_tail_is_an_error() {
        let prior = ChangePrior::explicit(vec![0.5, 0.5]).unwrap();
        let s = shift(&[1.0]);
        let st = update_odds_general(OddsState::initial(), &prior, &s, 0.0).unwrap();
        let err = update_odds_general(st, &prior, &s, 0.0).unwrap_err();
        assert_eq!(err, BeliefError::TailExhausted { n: 2 });
    }

    #[test]
    fn roundtrip_examples() {
        assert_eq!(probability_to_log_odds(0.5), 0.0);
        assert_eq!(probability_to_log_odds(0.0), f64::NEG_INFINITY);
        assert_eq!(probability_to_log_odds(1.0), f64::INFINITY);
        assert!((probability_to_log_odds(0.6) - 1.5f64.ln()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn roundtrip_is_exact(p in 1e-12f64..(1.0 - 1e-12)) {
            let back = log_odds_to_probability(probability_to_log_odds(p));
            prop_assert!((back - p).abs() <= 1e-12);
        }

        #[test]
        fn belief_and_odds_routes_agree(
            seed in 0u64..1_000_000,
            rho in 0.001f64..0.2,
            m1 in -3.0f64..3.0,
            m2 in -3.0f64..3.0,
        ) {
            let s = shift(&[m1, m2]);
            let prior = ChangePrior::geometric(rho).unwrap();
            let path = sample_path(&s, &prior, 1000, seed, 0);
            let mut b = BeliefState::initial();
            let mut o = OddsState::initial();
            for &y in &path.observations {
                b = update_belief(b, &prior, &s, y).unwrap();
                o = update_odds_geometric(o, rho, &s, y).unwrap();
                prop_assert!((b.p - o.probability()).abs() <= 1e-9);
            }
        }

        #[test]
        fn general_specializes_to_geometric(
            seed in 0u64..1_000_000,
            rho in 0.01f64..0.3,
            m in 0.2f64..2.5,
        ) {
            let s = shift(&[m, m / 2.0]);
            let geo = ChangePrior::geometric(rho).unwrap();
            let table = ChangePrior::tabulated_geometric(rho, 200).unwrap();
            let path = sample_path(&s, &geo, 100, seed, 1);
            let mut a = OddsState::initial();
            let mut b = OddsState::initial();
            for &y in &path.observations {
                a = update_odds_geometric(a, rho, &s, y).unwrap();
                b = update_odds_general(b, &table, &s, y).unwrap();
                prop_assert!((a.probability() - b.probability()).abs() <= 1e-9);
            }
        }

        #[test]
        fn belief_is_monotone_in_the_likelihood_ratio(
            p in 0.0f64..1.0,
            rho in 0.001f64..0.5,
            y1 in -6.0f64..6.0,
            y2 in -6.0f64..6.0,
        ) {
            // g = N(1,1) vs f = N(0,1): LLR = y - 1/2 increases with y
            let s = shift(&[1.0]);
            let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            let a = belief_step(p, rho, &s, 0, lo).unwrap();
            let b = belief_step(p, rho, &s, 0, hi).unwrap();
            prop_assert!(a <= b + 1e-15);
            prop_assert!((0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&b));
        }
    }
}
