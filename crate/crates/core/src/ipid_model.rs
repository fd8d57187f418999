//! Independent and periodically identically distributed (i.p.i.d.) laws.
//!
//! An i.p.i.d. process draws `Y_n` independently from a density that repeats
//! with period `T`. Before the change point `nu` the stage densities are
//! `f_1..f_T`, from `nu` on they are `g_1..g_T`.
//!
//! Indexing: time is 1-based (`n >= 1`), stage vectors are 0-based. The only
//! place the two meet is [`stage_of`] / [`stage_index`].

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use thiserror::Error;

use crate::quadrature::SimpsonRule;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid gaussian parameters: mean {mean}, variance {variance}")]
    InvalidGaussian { mean: f64, variance: f64 },
    #[error("scenario needs at least one stage")]
    EmptyScenario,
    #[error("pre-change law has {pre} stages but post-change law has {post}")]
    PeriodMismatch { pre: usize, post: usize },
    #[error("geometric prior parameter must lie in (0, 1), got {0}")]
    InvalidRho(f64),
    #[error("invalid prior masses: {0}")]
    InvalidMasses(String),
    #[error("information number is zero: post-change law equals pre-change law at every stage")]
    NoDetectableChange,
    #[error("information number is not finite ({0})")]
    InfiniteInformation(f64),
}

/// Evaluator for a user-supplied density on the real line.
pub trait LogDensity: fmt::Debug + Send + Sync {
    fn ln_pdf(&self, x: f64) -> f64;
    fn sample(&self, rng: &mut dyn RngCore) -> f64;
    /// Location used to center quadrature windows.
    fn location(&self) -> f64;
    /// Spread used to size quadrature windows.
    fn scale(&self) -> f64;
}

/// One stage density `f_i` or `g_i`.
#[derive(Clone, Debug)]
pub enum StageDensity {
    Gaussian { mean: f64, variance: f64 },
    Custom(Arc<dyn LogDensity>),
}

impl PartialEq for StageDensity {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (
                StageDensity::Gaussian { mean: m1, variance: v1 },
                StageDensity::Gaussian { mean: m2, variance: v2 },
            ) => m1 == m2 && v1 == v2,
            (StageDensity::Custom(a), StageDensity::Custom(b)) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl StageDensity {
    pub fn gaussian(mean: f64, variance: f64) -> Result<Self, ModelError> {
        if !mean.is_finite() || !variance.is_finite() || variance <= 0.0 {
            return Err(ModelError::InvalidGaussian { mean, variance });
        }
        Ok(StageDensity::Gaussian { mean, variance })
    }

    /// `N(mean, 1)`.
    pub fn unit_gaussian(mean: f64) -> Self {
        StageDensity::Gaussian { mean, variance: 1.0 }
    }

    pub fn custom(density: Arc<dyn LogDensity>) -> Self {
        StageDensity::Custom(density)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        match self {
            StageDensity::Gaussian { mean, variance } => {
                let z = x - mean;
                -0.5 * (2.0 * PI * variance).ln() - z * z / (2.0 * variance)
            }
            StageDensity::Custom(d) => d.ln_pdf(x),
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            StageDensity::Gaussian { mean, variance } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + variance.sqrt() * z
            }
            StageDensity::Custom(d) => d.sample(rng),
        }
    }

    pub fn location(&self) -> f64 {
        match self {
            StageDensity::Gaussian { mean, .. } => *mean,
            StageDensity::Custom(d) => d.location(),
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            StageDensity::Gaussian { variance, .. } => variance.sqrt(),
            StageDensity::Custom(d) => d.scale(),
        }
    }
}

/// Maps a 1-based time index to its 1-based stage, `((n - 1) mod T) + 1`.
///
/// Panics if `n == 0` or `period == 0`.
pub fn stage_of(n: u64, period: usize) -> usize {
    assert!(n >= 1, "time index starts at 1");
    assert!(period >= 1, "period must be positive");
    ((n - 1) % period as u64) as usize + 1
}

/// 0-based stage of time `n >= 1`.
#[inline]
pub fn stage_index(n: u64, period: usize) -> usize {
    stage_of(n, period) - 1
}

/// Pre- and post-change laws of an i.p.i.d. process.
#[derive(Clone, Debug, PartialEq)]
pub struct IpidScenario {
    pre: Vec<StageDensity>,
    post: Vec<StageDensity>,
}

impl IpidScenario {
    pub fn new(pre: Vec<StageDensity>, post: Vec<StageDensity>) -> Result<Self, ModelError> {
        if pre.is_empty() {
            return Err(ModelError::EmptyScenario);
        }
        if pre.len() != post.len() {
            return Err(ModelError::PeriodMismatch {
                pre: pre.len(),
                post: post.len(),
            });
        }
        Ok(Self { pre, post })
    }

    /// Gaussian stages from parallel mean/variance lists.
    pub fn gaussian(
        pre_means: &[f64],
        pre_variances: &[f64],
        post_means: &[f64],
        post_variances: &[f64],
    ) -> Result<Self, ModelError> {
        let build = |means: &[f64], vars: &[f64]| -> Result<Vec<StageDensity>, ModelError> {
            if means.len() != vars.len() {
                return Err(ModelError::PeriodMismatch {
                    pre: means.len(),
                    post: vars.len(),
                });
            }
            means
                .iter()
                .zip(vars)
                .map(|(&m, &v)| StageDensity::gaussian(m, v))
                .collect()
        };
        Self::new(build(pre_means, pre_variances)?, build(post_means, post_variances)?)
    }

    /// `f_i = N(0, 1)` at every stage and `g_i = N(post_means[i], 1)`.
    pub fn unit_mean_shift(post_means: &[f64]) -> Result<Self, ModelError> {
        let ones = vec![1.0; post_means.len()];
        let zeros = vec![0.0; post_means.len()];
        Self::gaussian(&zeros, &ones, post_means, &ones)
    }

    pub fn period(&self) -> usize {
        self.pre.len()
    }

    /// Pre-change density of 0-based stage `stage`.
    pub fn pre(&self, stage: usize) -> &StageDensity {
        &self.pre[stage]
    }

    /// Post-change density of 0-based stage `stage`.
    pub fn post(&self, stage: usize) -> &StageDensity {
        &self.post[stage]
    }

    /// True when `g_i == f_i` at every stage, i.e. there is nothing to detect.
    pub fn is_degenerate(&self) -> bool {
        self.pre.iter().zip(&self.post).all(|(f, g)| f == g)
    }

    /// `(ln f_stage(y), ln g_stage(y))` for a 0-based stage.
    #[inline]
    pub fn ln_pdfs(&self, stage: usize, y: f64) -> (f64, f64) {
        (self.pre[stage].ln_pdf(y), self.post[stage].ln_pdf(y))
    }

    /// Log-likelihood ratio at a 0-based stage.
    #[inline]
    pub fn stage_llr(&self, stage: usize, y: f64) -> f64 {
        let (lf, lg) = self.ln_pdfs(stage, y);
        lg - lf
    }

    /// `Z_n = ln g_n(y) - ln f_n(y)` for 1-based time `n`.
    pub fn log_likelihood_ratio(&self, n: u64, y: f64) -> f64 {
        self.stage_llr(stage_index(n, self.period()), y)
    }
}

/// Free-function form of [`IpidScenario::log_likelihood_ratio`].
pub fn log_likelihood_ratio(scenario: &IpidScenario, n: u64, y: f64) -> f64 {
    scenario.log_likelihood_ratio(n, y)
}

/// Explicit change-point prior given by masses `pi_1..pi_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitPrior {
    masses: Vec<f64>,
    /// `tails[n] = P(nu > n)` for `n = 0..=N`.
    tails: Vec<f64>,
}

impl ExplicitPrior {
    /// Mass not covered by the table is placed beyond `N`. A shortfall below
    /// `1e-12` is treated as rounding and dropped so that it cannot swamp the
    /// far tail.
    pub fn new(masses: Vec<f64>) -> Result<Self, ModelError> {
        if masses.is_empty() {
            return Err(ModelError::InvalidMasses("empty mass table".into()));
        }
        if let Some(bad) = masses.iter().find(|m| !m.is_finite() || **m < 0.0) {
            return Err(ModelError::InvalidMasses(format!("mass {bad} is negative or not finite")));
        }
        let total: f64 = masses.iter().sum();
        if total > 1.0 + 1e-9 {
            return Err(ModelError::InvalidMasses(format!("masses sum to {total} > 1")));
        }
        let remainder = if 1.0 - total <= 1e-12 { 0.0 } else { 1.0 - total };
        // Backward accumulation keeps small tails relatively accurate.
        let mut tails = vec![0.0; masses.len() + 1];
        tails[masses.len()] = remainder;
        for n in (0..masses.len()).rev() {
            tails[n] = tails[n + 1] + masses[n];
        }
        Ok(Self { masses, tails })
    }

    pub fn len(&self) -> usize {
        self.masses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masses.is_empty()
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Mass placed beyond the end of the table.
    pub fn remainder(&self) -> f64 {
        self.tails[self.masses.len()]
    }
}

/// Prior on the change point `nu >= 1`.
#[derive(Clone, Debug, PartialEq)]
pub enum ChangePrior {
    /// `P(nu = n) = (1 - rho)^(n - 1) rho`.
    Geometric { rho: f64 },
    Explicit(ExplicitPrior),
}

impl ChangePrior {
    pub fn geometric(rho: f64) -> Result<Self, ModelError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(ModelError::InvalidRho(rho));
        }
        Ok(ChangePrior::Geometric { rho })
    }

    pub fn explicit(masses: Vec<f64>) -> Result<Self, ModelError> {
        Ok(ChangePrior::Explicit(ExplicitPrior::new(masses)?))
    }

    /// Geometric masses tabulated up to `n_max`, for cross-checking the
    /// general recursions against the geometric special case.
    pub fn tabulated_geometric(rho: f64, n_max: usize) -> Result<Self, ModelError> {
        if !(rho > 0.0 && rho < 1.0) {
            return Err(ModelError::InvalidRho(rho));
        }
        let masses = (1..=n_max)
            .map(|n| rho * (1.0 - rho).powi(n as i32 - 1))
            .collect();
        Self::explicit(masses)
    }

    pub fn rho(&self) -> Option<f64> {
        match self {
            ChangePrior::Geometric { rho } => Some(*rho),
            ChangePrior::Explicit(_) => None,
        }
    }

    /// `P(nu = n)`.
    pub fn mass(&self, n: u64) -> f64 {
        match self {
            ChangePrior::Geometric { .. } => self.ln_mass(n).exp(),
            ChangePrior::Explicit(e) => {
                if n == 0 || n as usize > e.masses.len() {
                    0.0
                } else {
                    e.masses[n as usize - 1]
                }
            }
        }
    }

    pub fn ln_mass(&self, n: u64) -> f64 {
        match self {
            ChangePrior::Geometric { rho } => {
                if n == 0 {
                    f64::NEG_INFINITY
                } else {
                    rho.ln() + (n - 1) as f64 * (-rho).ln_1p()
                }
            }
            ChangePrior::Explicit(_) => self.mass(n).ln(),
        }
    }

    /// `Gamma_n = P(nu > n)`.
    pub fn tail(&self, n: u64) -> f64 {
        match self {
            ChangePrior::Geometric { .. } => self.ln_tail(n).exp(),
            ChangePrior::Explicit(e) => {
                if n as usize >= e.tails.len() {
                    e.remainder()
                } else {
                    e.tails[n as usize]
                }
            }
        }
    }

    pub fn ln_tail(&self, n: u64) -> f64 {
        match self {
            ChangePrior::Geometric { rho } => n as f64 * (-rho).ln_1p(),
            ChangePrior::Explicit(_) => self.tail(n).ln(),
        }
    }

    /// Draws `nu`. Explicit priors return `u64::MAX` for mass beyond the table.
    pub fn sample_change_point<R: Rng>(&self, rng: &mut R) -> u64 {
        match self {
            ChangePrior::Geometric { rho } => {
                let failures = Geometric::new(*rho)
                    .expect("rho validated at construction")
                    .sample(rng);
                failures.saturating_add(1)
            }
            ChangePrior::Explicit(e) => {
                let u: f64 = rng.random::<f64>() * e.tails[0];
                let mut acc = 0.0;
                for (i, m) in e.masses.iter().enumerate() {
                    acc += m;
                    if u < acc {
                        return i as u64 + 1;
                    }
                }
                u64::MAX
            }
        }
    }
}

/// Exponential decay rate `d` of the prior tail.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailExponent {
    pub rate: f64,
    /// Set when the rate was estimated from a finite table rather than known
    /// in closed form.
    pub truncated: bool,
}

/// `d = lim -ln P(nu > n) / n`.
///
/// Geometric priors give `|ln(1 - rho)|` exactly. Explicit tables use
/// `-ln Gamma_n / n` at the largest `n` whose tail is still a normal
/// (non-subnormal) float, so underflowed masses do not bias the estimate.
pub fn prior_tail_exponent(prior: &ChangePrior) -> TailExponent {
    match prior {
        ChangePrior::Geometric { rho } => TailExponent {
            rate: (-rho).ln_1p().abs(),
            truncated: false,
        },
        ChangePrior::Explicit(e) => {
            let n = (1..e.tails.len())
                .rev()
                .find(|&n| e.tails[n] >= f64::MIN_POSITIVE);
            let rate = match n {
                Some(n) => (-e.tails[n].ln() / n as f64).max(0.0),
                None => f64::INFINITY,
            };
            TailExponent {
                rate,
                truncated: true,
            }
        }
    }
}

/// `D(g || f)` for one pair; Gaussian pairs use the closed form.
pub fn kl_divergence(g: &StageDensity, f: &StageDensity) -> f64 {
    match (g, f) {
        (
            StageDensity::Gaussian { mean: mg, variance: vg },
            StageDensity::Gaussian { mean: mf, variance: vf },
        ) => 0.5 * ((vf / vg).ln() + (vg + (mg - mf).powi(2)) / vf - 1.0),
        _ => kl_divergence_quadrature(g, f),
    }
}

/// `D(g || f)` by composite Simpson on `[min loc - 40 s, max loc + 40 s]`,
/// where `s` is the larger of the two scales. The window is split at the two
/// locations (where densities such as the Laplace have kinks); the wide
/// window covers exponential tails.
pub fn kl_divergence_quadrature(g: &StageDensity, f: &StageDensity) -> f64 {
    let s = g.scale().max(f.scale());
    let a = g.location().min(f.location());
    let b = g.location().max(f.location());
    let integrand = |x: f64| {
        let lg = g.ln_pdf(x);
        if lg == f64::NEG_INFINITY {
            0.0
        } else {
            lg.exp() * (lg - f.ln_pdf(x))
        }
    };
    let mut total = SimpsonRule::new(a - 40.0 * s, a, 8001).integrate(integrand)
        + SimpsonRule::new(b, b + 40.0 * s, 8001).integrate(integrand);
    if b > a {
        total += SimpsonRule::new(a, b, 2001).integrate(integrand);
    }
    total
}

/// Period-averaged information number `I = (1/T) sum_i D(g_i || f_i)`.
pub fn kl_information(scenario: &IpidScenario) -> Result<f64, ModelError> {
    let t = scenario.period();
    let total: f64 = (0..t)
        .map(|i| kl_divergence(scenario.post(i), scenario.pre(i)))
        .sum();
    let info = total / t as f64;
    if !info.is_finite() {
        return Err(ModelError::InfiniteInformation(info));
    }
    if info <= 0.0 {
        return Err(ModelError::NoDetectableChange);
    }
    Ok(info)
}

/// Where the change point fell relative to a sampled horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChangePoint {
    At(u64),
    BeyondHorizon,
}

/// A materialized observation path `y_1..y_H`.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePath {
    pub change_point: ChangePoint,
    pub observations: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
}

impl SamplePath {
    pub fn horizon(&self) -> usize {
        self.observations.len()
    }
}

/// Independent random stream for path `path_index` under `seed`.
pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

/// Lazily generated i.p.i.d. path. Produces the same values as
/// [`sample_path`] for the same `(seed, path_index)`.
pub struct PathStream<'a> {
    scenario: &'a IpidScenario,
    rng: ChaCha8Rng,
    change_point: u64,
    n: u64,
}

impl<'a> PathStream<'a> {
    pub fn new(scenario: &'a IpidScenario, prior: &ChangePrior, seed: u64, path_index: u64) -> Self {
        let mut rng = path_rng(seed, path_index);
        let change_point = prior.sample_change_point(&mut rng);
        Self {
            scenario,
            rng,
            change_point,
            n: 0,
        }
    }

    /// Drawn change point (may exceed any horizon).
    pub fn change_point(&self) -> u64 {
        self.change_point
    }

    /// Time index of the last observation returned (0 before the first).
    pub fn time(&self) -> u64 {
        self.n
    }
}

impl Iterator for PathStream<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        self.n += 1;
        let stage = stage_index(self.n, self.scenario.period());
        let density = if self.n < self.change_point {
            self.scenario.pre(stage)
        } else {
            self.scenario.post(stage)
        };
        Some(density.sample(&mut self.rng))
    }
}

/// Samples `nu` from the prior and `y_1..y_H` from the change-point model.
pub fn sample_path(
    scenario: &IpidScenario,
    prior: &ChangePrior,
    horizon: usize,
    seed: u64,
    path_index: u64,
) -> SamplePath {
    let mut stream = PathStream::new(scenario, prior, seed, path_index);
    let nu = stream.change_point();
    let observations: Vec<f64> = stream.by_ref().take(horizon).collect();
    SamplePath {
        change_point: if nu <= horizon as u64 {
            ChangePoint::At(nu)
        } else {
            ChangePoint::BeyondHorizon
        },
        observations,
        seed,
        path_index,
    }
}
