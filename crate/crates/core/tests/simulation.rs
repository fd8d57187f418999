mod common;

use common::period_two;
use ipid_qcd::monte_carlo::{
    default_horizon, estimate_add_pfa, estimate_bayes_cost, sweep_single_threshold,
    tradeoff_curve,
};
use ipid_qcd::{
    kl_information, prior_tail_exponent, ChangePrior, DetectionCostSpec, IpidScenario,
    StoppingPolicy,
};

#[test]
fn delay_and_false_alarms_trade_off_monotonically() {
    let scenario = IpidScenario::unit_mean_shift(&[1.0, 0.5]).unwrap();
    let prior = ChangePrior::geometric(0.02).unwrap();
    let thresholds = [0.3, 0.5, 0.7, 0.9, 0.97];
    let rows: Vec<_> = thresholds
        .iter()
        .map(|&a| estimate_add_pfa(&scenario, &prior, a, 4_000, 2_500, 3).unwrap())
        .collect();
    for pair in rows.windows(2) {
        let (lo, hi) = (&pair[0], &pair[1]);
        let add_se = lo.add.std_error.hypot(hi.add.std_error);
        let pfa_se = lo.pfa.std_error.hypot(hi.pfa.std_error);
        assert!(hi.add.estimate + 2.0 * add_se >= lo.add.estimate);
        assert!(hi.pfa.estimate <= lo.pfa.estimate + 2.0 * pfa_se);
    }
}

#[test]
fn sweep_rows_equal_single_runs() {
    let e = period_two();
    let (scenario, costs) = (e.scenario(), e.costs());
    let horizon = default_horizon(costs.rho);
    let table = sweep_single_threshold(&scenario, &costs, &[0.6, 0.008, 0.2], 500, horizon, 12).unwrap();
    for row in &table.rows {
        let single = estimate_bayes_cost(
            &scenario,
            &costs,
            &StoppingPolicy::SingleThreshold(row.threshold),
            500,
            horizon,
            12,
        )
        .unwrap();
        assert_eq!(single.estimate, row.cost);
        assert_eq!(single.std_error, row.std_error);
    }
}

#[test]
fn estimates_are_reproducible() {
    let e = period_two();
    let policy = StoppingPolicy::PeriodicThresholds(vec![0.6, 0.01]);
    let run = || estimate_bayes_cost(&e.scenario(), &e.costs(), &policy, 2_000, 5_000, 99).unwrap();
    assert_eq!(run(), run());
}

#[test]
fn equal_periodic_thresholds_match_single_threshold() {
    let e = period_two();
    let a = estimate_bayes_cost(&e.scenario(), &e.costs(), &StoppingPolicy::SingleThreshold(0.3), 1_000, 5_000, 5)
        .unwrap();
    let b = estimate_bayes_cost(
        &e.scenario(),
        &e.costs(),
        &StoppingPolicy::PeriodicThresholds(vec![0.3, 0.3]),
        1_000,
        5_000,
        5,
    )
    .unwrap();
    assert_eq!(a, b);
}

#[test]
fn tradeoff_delay_grows_with_log_alpha() {
    let scenario = IpidScenario::unit_mean_shift(&[1.0, 1.0]).unwrap();
    let prior = ChangePrior::geometric(0.05).unwrap();
    let info = kl_information(&scenario).unwrap();
    let tail = prior_tail_exponent(&prior).rate;
    let rows = tradeoff_curve(&scenario, &prior, &[1e-1, 1e-2, 1e-3], info, tail, 2_000, 2_000, 8).unwrap();
    for pair in rows.windows(2) {
        assert!(pair[1].estimates.add.estimate > pair[0].estimates.add.estimate);
        assert!(pair[1].analytic > pair[0].analytic);
    }
    for row in &rows {
        assert!(row.estimates.pfa.estimate <= row.alpha + 3.0 * row.estimates.pfa.std_error);
    }
}

#[test]
fn costs_use_the_stage_of_the_stopping_time() {
    // pre and post densities coincide, so p_n is deterministic and the stop time is fixed
    let scenario = IpidScenario::unit_mean_shift(&[0.0, 0.0]).unwrap();
    let costs = DetectionCostSpec::new(vec![3.0, 7.0], vec![1.0, 2.0], 0.1);
    // p_n = 1 - 0.9^n crosses 0.5 at n = 7 (stage 0)
    let policy = StoppingPolicy::SingleThreshold(0.5);
    let report = estimate_bayes_cost(&scenario, &costs, &policy, 20_000, 100, 4).unwrap();
    let mut expected = 0.0;
    for nu in 1..=7u64 {
        let mass = 0.1 * 0.9f64.powi(nu as i32 - 1);
        let delay: f64 = (nu..7).map(|n| if (n - 1) % 2 == 0 { 1.0 } else { 2.0 }).sum();
        expected += mass * delay;
    }
    expected += 0.9f64.powi(7) * 3.0;
    assert!((report.estimate - expected).abs() < 4.0 * report.std_error, "{} {expected}", report.estimate);
}
