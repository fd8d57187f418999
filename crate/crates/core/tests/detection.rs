mod common;

use common::{classical_shiryaev, period_two};
use ipid_qcd::{
    solve_detection, DetectionCostSpec, DetectionProblem, IpidScenario, QuadratureSpec,
    SolveOptions,
};
use proptest::prelude::*;

#[test]
fn grid_refinement_moves_the_optimal_cost_little() {
    let e = period_two();
    let solve_at = |m| {
        let problem = DetectionProblem::new(e.scenario(), e.costs(), m, &QuadratureSpec::default()).unwrap();
        solve_detection(&problem, &SolveOptions::default())
    };
    let coarse = solve_at(100);
    let fine = solve_at(400);
    assert!((coarse.optimal_cost - fine.optimal_cost).abs() <= 0.1);
    assert!((coarse.thresholds[0] - fine.thresholds[0]).abs() <= 0.02);
    assert!(fine.thresholds[1] <= 0.01);
}

#[test]
fn classical_problem_matches_independent_solver() {
    for (mean, lambda, rho) in [(1.5, 8.0, 0.02), (0.8, 30.0, 0.05)] {
        let scenario = IpidScenario::unit_mean_shift(&[mean]).unwrap();
        let costs = DetectionCostSpec::classical(1, lambda, rho);
        let problem = DetectionProblem::new(scenario, costs, 80, &QuadratureSpec::default()).unwrap();
        let sol = solve_detection(&problem, &SolveOptions { tol: 1e-12, ..SolveOptions::default() });
        let (curve, start) = classical_shiryaev(mean, lambda, rho, 80, 1e-12);
        for (a, b) in sol.stage_curves[0].iter().zip(&curve) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert!((sol.observe_first_cost - start).abs() <= 1e-9);
    }
}

#[test]
fn classical_problem_in_two_identical_stages_has_one_threshold() {
    let scenario = IpidScenario::unit_mean_shift(&[1.0, 1.0]).unwrap();
    let costs = DetectionCostSpec::classical(2, 10.0, 0.05);
    let problem = DetectionProblem::new(scenario, costs, 120, &QuadratureSpec::default()).unwrap();
    let sol = solve_detection(&problem, &SolveOptions::default());
    assert_eq!(sol.thresholds[0], sol.thresholds[1]);
    for (a, b) in sol.stage_curves[0].iter().zip(&sol.stage_curves[1]) {
        assert!((a - b).abs() < 1e-7);
    }
}

#[test]
fn free_stopping_stage_has_zero_threshold() {
    let scenario = IpidScenario::unit_mean_shift(&[1.0, 1.0]).unwrap();
    let costs = DetectionCostSpec::new(vec![10.0, 0.0], vec![1.0, 1.0], 0.05);
    let problem = DetectionProblem::new(scenario, costs, 60, &QuadratureSpec::default()).unwrap();
    let sol = solve_detection(&problem, &SolveOptions::default());
    assert_eq!(sol.thresholds[1], 0.0);
    assert!(sol.stops_at_start());
    assert_eq!(sol.optimal_cost, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn stronger_change_never_costs_more(
        m in 0.5f64..2.0,
        boost in 0.2f64..1.5,
        lambda in 2.0f64..20.0,
    ) {
        let solve_for = |mean: f64| {
            let scenario = IpidScenario::unit_mean_shift(&[mean, mean]).unwrap();
            let costs = DetectionCostSpec::new(vec![lambda, lambda], vec![1.0, 1.0], 0.02);
            let problem = DetectionProblem::new(scenario, costs, 60, &QuadratureSpec::default()).unwrap();
            solve_detection(&problem, &SolveOptions::default()).observe_first_cost
        };
        prop_assert!(solve_for(m + boost) <= solve_for(m) + 1e-3);
    }
}
