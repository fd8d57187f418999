//! One function per subcommand. Each writes its CSV artifacts, prints a short
//! summary, and reports whether every value iteration it ran converged.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use ipid_qcd::detection_dp::DetectionError;
use ipid_qcd::monte_carlo::{
    default_threshold_grid, estimate_bayes_cost, estimate_optimal_policy_cost,
    sweep_single_threshold, trace_path, tradeoff_curve, SweepTable,
};
use ipid_qcd::periodic_mdp::format::{parse_instance, FormatError};
use ipid_qcd::periodic_mdp::{
    extract_periodic_policy, finite_horizon_oracle, fixed_point_residual, value_iterate,
};
use ipid_qcd::{
    kl_information, prior_tail_exponent, solve_detection, ChangePrior, DetectionProblem,
    DetectionSolution, MdpError, ModelError, MonteCarloError, QuadratureSpec, SimulationReport,
    SolveOptions, StoppingPolicy,
};
use thiserror::Error;

use crate::artifacts::{list, num, opt, Artifacts};
use crate::bundled;
use crate::config::{ConfigError, ExperimentConfig};

pub const EXIT_RUNTIME: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_PARSE: u8 = 3;
pub const EXIT_NOT_CONVERGED: u8 = 4;

/// Stage-0 iterates kept for the value-iteration plots.
const RECORDED_ITERATES: usize = 25;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{source_name}: {error}")]
    Instance { source_name: String, error: FormatError },
    #[error("{path}: {error}")]
    Read { path: PathBuf, error: io::Error },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Simulation(#[from] MonteCarloError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Config(_) | CliError::Instance { .. } => EXIT_PARSE,
            _ => EXIT_RUNTIME,
        }
    }
}

/// Result of a successful command.
#[derive(Debug)]
pub struct Outcome {
    pub converged: bool,
    pub files: Vec<PathBuf>,
}

/// Command-line values that take precedence over config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub grid: Option<usize>,
    pub tol: Option<f64>,
    pub out_dir: Option<PathBuf>,
}

impl Overrides {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.paths == Some(0) {
            return Err(CliError::Usage("--paths must be at least 1".into()));
        }
        if matches!(self.grid, Some(g) if g < 2) {
            return Err(CliError::Usage("--grid needs at least 2 points".into()));
        }
        if matches!(self.tol, Some(t) if !(t > 0.0 && t.is_finite())) {
            return Err(CliError::Usage("--tol must be positive".into()));
        }
        Ok(())
    }

    pub fn apply(&self, config: &mut ExperimentConfig) {
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(paths) = self.paths {
            config.paths = paths;
        }
        if let Some(grid) = self.grid {
            config.grid = grid;
        }
        if let Some(tol) = self.tol {
            config.tol = tol;
        }
    }

    fn out_dir(&self, config: Option<&ExperimentConfig>) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| config.and_then(|c| c.out_dir.clone()))
            .unwrap_or_else(|| PathBuf::from("out"))
    }
}

fn bundled_names() -> String {
    bundled::CONFIGS
        .iter()
        .map(|(n, _)| *n)
        .collect::<Vec<_>>()
        .join(", ")
}

/// Reads `spec` as a file path, or failing that as a bundled config name.
pub fn load_config(spec: &str) -> Result<ExperimentConfig, CliError> {
    let path = Path::new(spec);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|error| CliError::Read {
            path: path.to_path_buf(),
            error,
        })?;
        return Ok(ExperimentConfig::parse(&text, spec)?);
    }
    match bundled::config(spec) {
        Some(text) => Ok(ExperimentConfig::parse(text, spec)?),
        None => Err(CliError::Usage(format!(
            "`{spec}` is neither a config file nor a bundled config ({})",
            bundled_names()
        ))),
    }
}

fn prepared(spec: &str, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    overrides.validate()?;
    let mut config = load_config(spec)?;
    overrides.apply(&mut config);
    Ok(config)
}

fn solve_config(config: &ExperimentConfig) -> Result<(DetectionProblem, DetectionSolution), CliError> {
    let problem = DetectionProblem::new(
        config.scenario()?,
        config.costs()?,
        config.grid,
        &QuadratureSpec::default(),
    )?;
    let options = SolveOptions {
        tol: config.tol,
        max_cycles: config.max_cycles,
        record_iterates: RECORDED_ITERATES,
    };
    let solution = solve_detection(&problem, &options);
    Ok((problem, solution))
}

fn write_solution(
    artifacts: &mut Artifacts,
    config: &ExperimentConfig,
    problem: &DetectionProblem,
    sol: &DetectionSolution,
) -> Result<(), CliError> {
    let points = problem.grid().points();
    let mut curves = Vec::new();
    for s in 0..sol.period() {
        for (i, p) in points.iter().enumerate() {
            curves.push(vec![
                s.to_string(),
                num(*p),
                num(sol.stage_curves[s][i]),
                num(sol.stop_curves[s][i]),
                num(sol.continue_curves[s][i]),
            ]);
        }
    }
    artifacts.write("curves.csv", "curves", &["stage", "p", "value", "stop", "continue"], curves)?;

    let published = config.published.thresholds.as_deref();
    artifacts.write(
        "thresholds.csv",
        "thresholds",
        &["stage", "threshold", "published_threshold"],
        sol.thresholds.iter().enumerate().map(|(s, a)| {
            vec![s.to_string(), num(*a), opt(published.map(|p| p[s]))]
        }),
    )?;

    artifacts.write(
        "history.csv",
        "history",
        &["cycle", "sup_change", "l2_change"],
        sol.sup_history
            .iter()
            .zip(&sol.l2_history)
            .enumerate()
            .map(|(k, (sup, l2))| vec![(k + 1).to_string(), num(*sup), num(*l2)]),
    )?;

    let mut iterates = Vec::new();
    for (k, curve) in sol.iterates.iter().enumerate() {
        for (p, v) in points.iter().zip(curve) {
            iterates.push(vec![(k + 1).to_string(), num(*p), num(*v)]);
        }
    }
    artifacts.write("iterates.csv", "iterates", &["iterate", "p", "value"], iterates)?;

    artifacts.write(
        "solution.csv",
        "solution",
        &[
            "name",
            "optimal_cost",
            "observe_first_cost",
            "stops_at_start",
            "cycles",
            "converged",
            "residual",
            "grid",
            "published_optimal",
        ],
        [vec![
            config.name.clone(),
            num(sol.optimal_cost),
            num(sol.observe_first_cost),
            sol.stops_at_start().to_string(),
            sol.cycles.to_string(),
            sol.converged.to_string(),
            num(sol.residual),
            config.grid.to_string(),
            opt(config.published.optimal),
        ]],
    )?;
    Ok(())
}

fn fmt_list(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ")
}

fn print_solution(config: &ExperimentConfig, sol: &DetectionSolution) {
    let published = config
        .published
        .optimal
        .map(|p| format!(" (published {p})"))
        .unwrap_or_default();
    println!("{}: J*(0) = {:.4}{published}", config.name, sol.optimal_cost);
    println!(
        "  observe-first cost {:.4}; stops at time 0: {}",
        sol.observe_first_cost,
        if sol.stops_at_start() { "yes" } else { "no" }
    );
    let published = config
        .published
        .thresholds
        .as_ref()
        .map(|p| format!(" (published {})", fmt_list(p)))
        .unwrap_or_default();
    println!("  thresholds {}{published}", fmt_list(&sol.thresholds));
    println!(
        "  {} after {} cycles, residual {:.2e}",
        if sol.converged { "converged" } else { "NOT converged" },
        sol.cycles,
        sol.residual
    );
}

pub fn solve(spec: &str, overrides: &Overrides) -> Result<Outcome, CliError> {
    let config = prepared(spec, overrides)?;
    let mut artifacts = Artifacts::create(&overrides.out_dir(Some(&config)))?;
    let (problem, sol) = solve_config(&config)?;
    write_solution(&mut artifacts, &config, &problem, &sol)?;
    print_solution(&config, &sol);
    Ok(Outcome {
        converged: sol.converged,
        files: artifacts.finish()?,
    })
}

/// `optimal`, one threshold for every stage, or one per stage, comma separated.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicyArg {
    Optimal,
    Thresholds(Vec<f64>),
}

impl PolicyArg {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        if text.trim() == "optimal" {
            return Ok(PolicyArg::Optimal);
        }
        text.split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(PolicyArg::Thresholds)
            .map_err(|_| {
                CliError::Usage(format!(
                    "--policy expects `optimal` or comma-separated thresholds, got `{text}`"
                ))
            })
    }

    fn label(&self) -> String {
        match self {
            PolicyArg::Optimal => "optimal".into(),
            PolicyArg::Thresholds(a) => list(a),
        }
    }
}

fn report_row(policy: &str, r: &SimulationReport) -> Vec<String> {
    vec![
        policy.to_string(),
        format!("{:?}", r.kind),
        num(r.estimate),
        num(r.std_error),
        r.n_paths.to_string(),
        r.seed.to_string(),
        r.horizon.to_string(),
        num(r.censored_fraction),
    ]
}

const REPORT_HEADER: [&str; 8] = [
    "policy",
    "kind",
    "estimate",
    "std_error",
    "paths",
    "seed",
    "horizon",
    "censored_fraction",
];

pub fn simulate(spec: &str, policy: &PolicyArg, overrides: &Overrides) -> Result<Outcome, CliError> {
    let config = prepared(spec, overrides)?;
    let costs = config.costs()?;
    let scenario = config.scenario()?;
    let mut artifacts = Artifacts::create(&overrides.out_dir(Some(&config)))?;
    let (report, converged) = match policy {
        PolicyArg::Optimal => {
            let (_, sol) = solve_config(&config)?;
            let r = estimate_optimal_policy_cost(
                &scenario,
                &costs,
                &sol,
                config.paths,
                config.horizon,
                config.seed,
            )?;
            println!(
                "{}: DP thresholds {}, J*(0) = {:.4}",
                config.name,
                fmt_list(&sol.thresholds),
                sol.optimal_cost
            );
            (r, sol.converged)
        }
        PolicyArg::Thresholds(a) => {
            let rule = match a.as_slice() {
                [single] => StoppingPolicy::SingleThreshold(*single),
                _ => StoppingPolicy::PeriodicThresholds(a.clone()),
            };
            rule.validate(config.period).map_err(|e| CliError::Usage(e.to_string()))?;
            let r = estimate_bayes_cost(&scenario, &costs, &rule, config.paths, config.horizon, config.seed)?;
            (r, true)
        }
    };
    let label = policy.label();
    artifacts.write("simulation.csv", "simulation", &REPORT_HEADER, [report_row(&label, &report)])?;
    println!(
        "{}: policy {label}: Bayes cost {:.4} (se {:.4}, {} paths, seed {}, censored {:.4})",
        config.name,
        report.estimate,
        report.std_error,
        report.n_paths,
        report.seed,
        report.censored_fraction
    );
    Ok(Outcome {
        converged,
        files: artifacts.finish()?,
    })
}

fn run_sweep(config: &ExperimentConfig) -> Result<SweepTable, CliError> {
    Ok(sweep_single_threshold(
        &config.scenario()?,
        &config.costs()?,
        &default_threshold_grid(),
        config.paths,
        config.horizon,
        config.seed,
    )?)
}

fn write_sweep(artifacts: &mut Artifacts, table: &SweepTable) -> Result<(), CliError> {
    artifacts.write(
        "sweep.csv",
        "sweep",
        &["threshold", "cost", "std_error", "censored_fraction"],
        table.rows.iter().map(|r| {
            vec![num(r.threshold), num(r.cost), num(r.std_error), num(r.censored_fraction)]
        }),
    )?;
    Ok(())
}

fn print_sweep(config: &ExperimentConfig, table: &SweepTable) {
    let best = table.best();
    let published = config
        .published
        .single_threshold
        .map(|p| format!(" (published {p})"))
        .unwrap_or_default();
    println!(
        "{}: best single threshold A = {} with cost {:.4} (se {:.4}){published}",
        config.name, best.threshold, best.cost, best.std_error
    );
}

pub fn sweep(spec: &str, overrides: &Overrides) -> Result<Outcome, CliError> {
    let config = prepared(spec, overrides)?;
    let mut artifacts = Artifacts::create(&overrides.out_dir(Some(&config)))?;
    let table = run_sweep(&config)?;
    write_sweep(&mut artifacts, &table)?;
    print_sweep(&config, &table);
    Ok(Outcome {
        converged: true,
        files: artifacts.finish()?,
    })
}

fn run_tradeoff(artifacts: &mut Artifacts, config: &ExperimentConfig) -> Result<(), CliError> {
    let scenario = config.scenario()?;
    let prior = ChangePrior::geometric(config.rho)?;
    let info = kl_information(&scenario)?;
    let tail = prior_tail_exponent(&prior).rate;
    let rows = tradeoff_curve(
        &scenario,
        &prior,
        &config.alphas,
        info,
        tail,
        config.paths,
        config.horizon,
        config.seed,
    )?;
    artifacts.write(
        "tradeoff.csv",
        "tradeoff",
        &[
            "alpha",
            "threshold",
            "add",
            "add_se",
            "conditional_add",
            "conditional_add_se",
            "pfa",
            "pfa_se",
            "analytic_delay",
            "ratio",
            "censored_fraction",
        ],
        rows.iter().map(|r| {
            let e = &r.estimates;
            vec![
                num(r.alpha),
                num(r.threshold),
                num(e.add.estimate),
                num(e.add.std_error),
                num(e.conditional_add.estimate),
                num(e.conditional_add.std_error),
                num(e.pfa.estimate),
                num(e.pfa.std_error),
                num(r.analytic),
                num(e.add.estimate / r.analytic),
                num(e.add.censored_fraction),
            ]
        }),
    )?;

    let trace = trace_path(&scenario, &prior, config.horizon, config.seed, 0)?;
    let smallest = config.alphas.iter().copied().fold(1.0, f64::min);
    let crossing = trace
        .beliefs
        .iter()
        .position(|p| *p > 1.0 - smallest)
        .unwrap_or(trace.beliefs.len());
    let keep = (crossing.max(trace.change_point as usize) + 20).min(trace.beliefs.len());
    artifacts.write(
        "trace.csv",
        "trace",
        &["n", "p", "after_change"],
        trace.beliefs[..keep].iter().enumerate().map(|(i, p)| {
            let n = i as u64 + 1;
            vec![n.to_string(), num(*p), u8::from(n >= trace.change_point).to_string()]
        }),
    )?;

    println!(
        "{}: I = {info:.6}, d = {tail:.6}, {} paths, seed {}",
        config.name, config.paths, config.seed
    );
    for r in &rows {
        println!(
            "  alpha {:e}: ADD {:.3} (se {:.3}), PFA {:.5}, analytic {:.3}, ratio {:.3}",
            r.alpha,
            r.estimates.add.estimate,
            r.estimates.add.std_error,
            r.estimates.pfa.estimate,
            r.analytic,
            r.estimates.add.estimate / r.analytic
        );
    }
    println!("  trace: change at n = {}, {keep} samples written", trace.change_point);
    Ok(())
}

pub fn tradeoff(spec: &str, alphas: &[f64], overrides: &Overrides) -> Result<Outcome, CliError> {
    let mut config = prepared(spec, overrides)?;
    if !alphas.is_empty() {
        if let Some(a) = alphas.iter().find(|a| !(**a > 0.0 && **a < 1.0)) {
            return Err(CliError::Usage(format!("--alpha {a} must lie in (0, 1)")));
        }
        config.alphas = alphas.to_vec();
    }
    let mut artifacts = Artifacts::create(&overrides.out_dir(Some(&config)))?;
    run_tradeoff(&mut artifacts, &config)?;
    Ok(Outcome {
        converged: true,
        files: artifacts.finish()?,
    })
}

/// Reproduction targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Target {
    Table1,
    Table2,
    Table3,
    Fig1,
    Fig2,
    Fig3,
}

impl Target {
    fn name(self) -> &'static str {
        match self {
            Target::Table1 => "table1",
            Target::Table2 => "table2",
            Target::Table3 => "table3",
            Target::Fig1 => "fig1",
            Target::Fig2 => "fig2",
            Target::Fig3 => "fig3",
        }
    }
}

fn reproduce_table(table: &str, overrides: &Overrides) -> Result<Outcome, CliError> {
    let rows = bundled::table_rows(table).expect("bundled table rows");
    let mut artifacts = Artifacts::create(&overrides.out_dir(None))?;
    let mut converged = true;
    let mut out = Vec::new();
    println!("{table}: row | single threshold (published) | optimal DP / simulated (published)");
    for (i, name) in rows.iter().enumerate() {
        let config = prepared(name, overrides)?;
        let (_, sol) = solve_config(&config)?;
        converged &= sol.converged;
        let sweep = run_sweep(&config)?;
        let best = sweep.best();
        let sim = estimate_optimal_policy_cost(
            &config.scenario()?,
            &config.costs()?,
            &sol,
            config.paths,
            config.horizon,
            config.seed,
        )?;
        let (lambda, delay) = config.penalties.clone().expect("table rows carry penalties");
        println!(
            "  {} means {} penalties {} / {} | {:.2} (se {:.2}) ({}) | {:.2} / {:.2} ({})",
            i + 1,
            list(&config.post_means),
            list(&lambda),
            list(&delay),
            best.cost,
            best.std_error,
            opt(config.published.single_threshold),
            sol.optimal_cost,
            sim.estimate,
            opt(config.published.optimal),
        );
        out.push(vec![
            (i + 1).to_string(),
            config.name.clone(),
            list(&lambda),
            list(&delay),
            list(&config.post_means),
            num(best.threshold),
            num(best.cost),
            num(best.std_error),
            num(sol.optimal_cost),
            num(sim.estimate),
            num(sim.std_error),
            opt(config.published.single_threshold),
            opt(config.published.optimal),
        ]);
    }
    artifacts.write(
        &format!("{table}.csv"),
        "table",
        &[
            "row",
            "name",
            "false_alarm",
            "delay",
            "post_means",
            "single_threshold",
            "single_threshold_cost",
            "single_threshold_se",
            "optimal_cost",
            "optimal_simulated",
            "optimal_simulated_se",
            "published_single_threshold",
            "published_optimal",
        ],
        out,
    )?;
    Ok(Outcome {
        converged,
        files: artifacts.finish()?,
    })
}

fn reproduce_figure(config_name: &str, overrides: &Overrides) -> Result<Outcome, CliError> {
    let config = prepared(config_name, overrides)?;
    let mut artifacts = Artifacts::create(&overrides.out_dir(None))?;
    let (problem, sol) = solve_config(&config)?;
    write_solution(&mut artifacts, &config, &problem, &sol)?;
    print_solution(&config, &sol);
    let table = run_sweep(&config)?;
    write_sweep(&mut artifacts, &table)?;
    print_sweep(&config, &table);
    Ok(Outcome {
        converged: sol.converged,
        files: artifacts.finish()?,
    })
}

pub fn reproduce(target: Target, overrides: &Overrides) -> Result<Outcome, CliError> {
    overrides.validate()?;
    let overrides = Overrides {
        out_dir: Some(overrides.out_dir(None).join(target.name())),
        ..overrides.clone()
    };
    match target {
        Target::Table1 | Target::Table2 | Target::Table3 => reproduce_table(target.name(), &overrides),
        Target::Fig1 => reproduce_figure("t2_paper", &overrides),
        Target::Fig2 => reproduce_figure("t4_paper", &overrides),
        Target::Fig3 => {
            let config = prepared("fig3", &overrides)?;
            let mut artifacts = Artifacts::create(&overrides.out_dir(None))?;
            run_tradeoff(&mut artifacts, &config)?;
            Ok(Outcome {
                converged: true,
                files: artifacts.finish()?,
            })
        }
    }
}

pub fn mdp_solve(
    spec: &str,
    tol: Option<f64>,
    max_cycles: usize,
    out_dir: Option<&Path>,
) -> Result<Outcome, CliError> {
    let tol = tol.unwrap_or(1e-10);
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(CliError::Usage("--tol must be positive".into()));
    }
    let path = Path::new(spec);
    let text = if path.is_file() {
        fs::read_to_string(path).map_err(|error| CliError::Read {
            path: path.to_path_buf(),
            error,
        })?
    } else if let Some(text) = bundled::instance(spec) {
        text.to_string()
    } else {
        return Err(CliError::Usage(format!(
            "`{spec}` is neither an instance file nor a bundled instance (three_state)"
        )));
    };
    let mdp = parse_instance(&text).map_err(|error| CliError::Instance {
        source_name: spec.to_string(),
        error,
    })?;
    let values = value_iterate(&mdp, tol, max_cycles);
    let policy = extract_periodic_policy(&values, &mdp);
    let residual = fixed_point_residual(&values, &mdp);

    let mut artifacts = Artifacts::create(out_dir.unwrap_or(Path::new("out")))?;
    let mut value_rows = Vec::new();
    let mut policy_rows = Vec::new();
    for stage in 0..mdp.period() {
        for state in 0..mdp.num_states() {
            value_rows.push(vec![
                stage.to_string(),
                state.to_string(),
                num(values.stage_values[stage][state]),
            ]);
            policy_rows.push(vec![
                stage.to_string(),
                state.to_string(),
                policy.action(stage, state).to_string(),
            ]);
        }
    }
    artifacts.write("values.csv", "mdp_values", &["stage", "state", "value"], value_rows)?;
    artifacts.write("policy.csv", "mdp_policy", &["stage", "state", "action"], policy_rows)?;

    println!(
        "{spec}: {} states, {} actions, period {}, discount {}",
        mdp.num_states(),
        mdp.num_actions(),
        mdp.period(),
        mdp.discount()
    );
    println!("  V* = {}", fmt_list(&values.value));
    for (stage, map) in policy.maps.iter().enumerate() {
        println!("  stage {stage} actions {map:?}");
    }
    println!(
        "  {} after {} cycles, fixed-point residual {residual:.2e}",
        if values.converged { "converged" } else { "NOT converged" },
        values.cycles
    );
    if mdp.discount() < 1.0 {
        let horizon = 2000 * mdp.period();
        let oracle = finite_horizon_oracle(&mdp, horizon)?;
        let gap = oracle
            .iter()
            .zip(&values.value)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("  finite-horizon oracle ({horizon} steps) gap {gap:.2e}");
    }
    Ok(Outcome {
        converged: values.converged,
        files: artifacts.finish()?,
    })
}
