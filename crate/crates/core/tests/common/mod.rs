#![allow(dead_code)]

use ipid_qcd::{DetectionCostSpec, IpidScenario};

pub const RHO: f64 = 0.01;

/// One published experiment: two- or four-stage unit-variance mean shifts.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub label: &'static str,
    pub false_alarm: Vec<f64>,
    pub delay: Vec<f64>,
    pub post_means: Vec<f64>,
    pub single_threshold_cost: f64,
    pub optimal_cost: f64,
}

impl Experiment {
    pub fn scenario(&self) -> IpidScenario {
        IpidScenario::unit_mean_shift(&self.post_means).unwrap()
    }

    pub fn costs(&self) -> DetectionCostSpec {
        DetectionCostSpec::new(self.false_alarm.clone(), self.delay.clone(), RHO)
    }
}

fn two_stage(label: &'static str, lambda: [f64; 2], delay: [f64; 2], means: [f64; 2], single: f64, optimal: f64) -> Experiment {
    Experiment {
        label,
        false_alarm: lambda.to_vec(),
        delay: delay.to_vec(),
        post_means: means.to_vec(),
        single_threshold_cost: single,
        optimal_cost: optimal,
    }
}

pub fn period_two() -> Experiment {
    two_stage("period-2", [20.0, 5.0], [10.0, 1.0], [2.0, 1.0], 10.2, 5.0)
}

pub fn period_four() -> Experiment {
    Experiment {
        label: "period-4",
        false_alarm: vec![20.0, 15.0, 10.0, 5.0],
        delay: vec![10.0, 10.0, 6.0, 1.0],
        post_means: vec![2.0, 1.5, 1.0, 0.5],
        single_threshold_cost: 11.3,
        optimal_cost: 5.0,
    }
}

/// Identical post-change mean at both stages.
pub fn iid_rows() -> Vec<Experiment> {
    vec![
        two_stage("iid theta=0.5", [20.0, 5.0], [10.0, 1.0], [0.5, 0.5], 11.1, 5.0),
        two_stage("iid theta=1.0", [20.0, 5.0], [10.0, 1.0], [1.0, 1.0], 12.0, 5.0),
        two_stage("iid theta=2.0", [20.0, 5.0], [10.0, 1.0], [2.0, 2.0], 9.4, 5.0),
    ]
}

pub fn mean_rows() -> Vec<Experiment> {
    vec![
        two_stage("means (2.0, 0.0)", [20.0, 5.0], [10.0, 1.0], [2.0, 0.0], 7.2, 5.0),
        two_stage("means (2.0, 0.5)", [20.0, 5.0], [10.0, 1.0], [2.0, 0.5], 8.8, 5.0),
        two_stage("means (3.0, 0.5)", [20.0, 5.0], [10.0, 1.0], [3.0, 0.5], 6.6, 5.0),
        two_stage("means (3.0, 1.0)", [20.0, 5.0], [10.0, 1.0], [3.0, 1.0], 7.2, 5.0),
        two_stage("means (1.0, 0.1)", [20.0, 5.0], [10.0, 1.0], [1.0, 0.1], 9.5, 5.0),
        two_stage("means (0.5, 0.0)", [20.0, 5.0], [10.0, 1.0], [0.5, 0.0], 8.1, 5.0),
    ]
}

pub fn penalty_rows() -> Vec<Experiment> {
    vec![
        two_stage("penalties (20, 5, 10, 1)", [20.0, 5.0], [10.0, 1.0], [2.0, 1.0], 10.2, 5.0),
        two_stage("penalties (20, 5, 1, 1)", [20.0, 5.0], [1.0, 1.0], [2.0, 1.0], 4.6, 3.7),
        two_stage("penalties (5, 5, 1, 1)", [5.0, 5.0], [1.0, 1.0], [2.0, 1.0], 3.2, 3.2),
    ]
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Composite Simpson nodes and weights, written out independently.
fn simpson(lo: f64, hi: f64, n: usize) -> Vec<(f64, f64)> {
    let h = (hi - lo) / (n - 1) as f64;
    (0..n)
        .map(|k| {
            let c = if k == 0 || k == n - 1 {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            (lo + h * k as f64, c * h / 3.0)
        })
        .collect()
}

/// Classical i.i.d. Shiryaev problem (unit delay cost, false-alarm cost
/// `lambda`, N(0,1) -> N(mean,1)) solved by plain value iteration on an
/// `m`-point grid. Returns the converged curve and `E[J(p_1)]` from `p_0 = 0`.
pub fn classical_shiryaev(mean: f64, lambda: f64, rho: f64, m: usize, tol: f64) -> (Vec<f64>, f64) {
    let rule = simpson(mean.min(0.0) - 8.0, mean.max(0.0) + 8.0, 1601);
    let grid: Vec<f64> = (0..m)
        .map(|i| if i == m - 1 { 1.0 } else { i as f64 / (m - 1) as f64 })
        .collect();
    let interp = |j: &[f64], q: f64| {
        let s = q.clamp(0.0, 1.0) * (m - 1) as f64;
        let i = (s.floor() as usize).min(m - 2);
        let w = s - i as f64;
        j[i] * (1.0 - w) + j[i + 1] * w
    };
    let expect = |j: &[f64], p: f64| {
        let pt = p + (1.0 - p) * rho;
        let mut acc = 0.0;
        for &(x, w) in &rule {
            let f = std_normal_pdf(x);
            let g = std_normal_pdf(x - mean);
            let mix = pt * g + (1.0 - pt) * f;
            if mix > 0.0 {
                acc += w * mix * interp(j, pt * g / mix);
            }
        }
        acc
    };
    let mut j = vec![0.0; m];
    loop {
        let next: Vec<f64> = grid
            .iter()
            .map(|&p| (lambda * (1.0 - p)).min(p + expect(&j, p)))
            .collect();
        let diff = next
            .iter()
            .zip(&j)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        j = next;
        if diff <= tol {
            break;
        }
    }
    let start = expect(&j, 0.0);
    (j, start)
}

/// Textbook value iteration for a stationary MDP given as nested vectors:
/// `kernel[s][a][s']`, `cost[s][a]`.
pub fn classical_value_iteration(
    kernel: &[Vec<Vec<f64>>],
    cost: &[Vec<f64>],
    discount: f64,
    tol: f64,
) -> Vec<f64> {
    let n = cost.len();
    let mut v = vec![0.0; n];
    loop {
        let mut next = vec![0.0; n];
        for s in 0..n {
            let mut best = f64::INFINITY;
            for (a, row) in kernel[s].iter().enumerate() {
                let ev: f64 = row.iter().zip(&v).map(|(p, x)| p * x).sum();
                best = best.min(cost[s][a] + discount * ev);
            }
            next[s] = best;
        }
        let diff = next
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if diff <= tol {
            return v;
        }
    }
}
