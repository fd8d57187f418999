//! Experiment configuration files.
//!
//! A config is a flat TOML document; every key is top level. Lists are
//! indexed by 0-based stage and must have exactly `period` entries.
//!
//! ```toml
//! name = "t2_paper"
//! period = 2
//! post_means = [2.0, 1.0]       # required
//! post_variances = [1.0, 1.0]   # default: all 1
//! pre_means = [0.0, 0.0]        # default: all 0
//! pre_variances = [1.0, 1.0]    # default: all 1
//! rho = 0.01                    # geometric change-point parameter
//! false_alarm = [20.0, 5.0]     # required by solve, simulate, sweep
//! delay = [10.0, 1.0]           # required by solve, simulate, sweep
//! grid = 100                    # belief grid points
//! tol = 1e-8
//! max_cycles = 100000
//! paths = 10000
//! horizon = 5000                # default: ceil(50 / rho)
//! seed = 1
//! alphas = [1e-2, 1e-3, 1e-4]   # tradeoff false-alarm targets
//! out_dir = "out"
//! published_optimal = 5.0       # annotations copied into reports
//! published_single_threshold = 10.2
//! published_thresholds = [0.6, 0.0]
//! ```

use std::ops::Range;
use std::path::PathBuf;

use ipid_qcd::monte_carlo::default_horizon;
use ipid_qcd::{DetectionCostSpec, IpidScenario};
use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

/// A config problem located in its source text. `line` is 1-based; 0 means
/// the problem concerns the document as a whole (for example a missing key).
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{source_name}:{line}: {message}")]
pub struct ConfigError {
    pub source_name: String,
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    name: Option<String>,
    period: Spanned<usize>,
    pre_means: Option<Spanned<Vec<f64>>>,
    pre_variances: Option<Spanned<Vec<f64>>>,
    post_means: Spanned<Vec<f64>>,
    post_variances: Option<Spanned<Vec<f64>>>,
    rho: Spanned<f64>,
    false_alarm: Option<Spanned<Vec<f64>>>,
    delay: Option<Spanned<Vec<f64>>>,
    grid: Option<Spanned<usize>>,
    tol: Option<Spanned<f64>>,
    max_cycles: Option<Spanned<usize>>,
    paths: Option<Spanned<usize>>,
    horizon: Option<Spanned<u64>>,
    seed: Option<u64>,
    alphas: Option<Spanned<Vec<f64>>>,
    out_dir: Option<String>,
    published_optimal: Option<f64>,
    published_single_threshold: Option<f64>,
    published_thresholds: Option<Spanned<Vec<f64>>>,
}

/// Values a reproduction is compared against.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Published {
    pub optimal: Option<f64>,
    pub single_threshold: Option<f64>,
    pub thresholds: Option<Vec<f64>>,
}

/// Validated experiment settings.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    pub period: usize,
    pub pre_means: Vec<f64>,
    pub pre_variances: Vec<f64>,
    pub post_means: Vec<f64>,
    pub post_variances: Vec<f64>,
    pub rho: f64,
    /// `(false_alarm, delay)` when both lists are present.
    pub penalties: Option<(Vec<f64>, Vec<f64>)>,
    pub grid: usize,
    pub tol: f64,
    pub max_cycles: usize,
    pub paths: usize,
    pub horizon: u64,
    pub seed: u64,
    pub alphas: Vec<f64>,
    pub out_dir: Option<PathBuf>,
    pub published: Published,
}

pub const DEFAULT_ALPHAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

struct Checker<'a> {
    text: &'a str,
    source_name: &'a str,
}

impl Checker<'_> {
    fn at(&self, span: Range<usize>, message: impl Into<String>) -> ConfigError {
        ConfigError {
            source_name: self.source_name.to_string(),
            line: line_of(self.text, span.start),
            message: message.into(),
        }
    }

    fn stage_list(
        &self,
        field: &str,
        value: Option<Spanned<Vec<f64>>>,
        period: usize,
        default: f64,
        valid: impl Fn(f64) -> bool,
        rule: &str,
    ) -> Result<Vec<f64>, ConfigError> {
        let Some(value) = value else {
            return Ok(vec![default; period]);
        };
        let span = value.span();
        let list = value.into_inner();
        if list.len() != period {
            return Err(self.at(
                span,
                format!("`{field}` has {} entries but period is {period}", list.len()),
            ));
        }
        if let Some((i, x)) = list.iter().enumerate().find(|(_, x)| !valid(**x)) {
            return Err(self.at(span, format!("`{field}`[{i}] = {x}: {rule}")));
        }
        Ok(list)
    }
}

impl ExperimentConfig {
    /// Parses and validates `text`; `source_name` prefixes error messages.
    pub fn parse(text: &str, source_name: &str) -> Result<Self, ConfigError> {
        let check = Checker { text, source_name };
        let raw: RawConfig = toml::from_str(text).map_err(|e| ConfigError {
            source_name: source_name.to_string(),
            line: e.span().map_or(0, |s| line_of(text, s.start)),
            message: e.message().to_string(),
        })?;

        let period = *raw.period.get_ref();
        if period == 0 {
            return Err(check.at(raw.period.span(), "`period` must be at least 1"));
        }
        let finite = |x: f64| x.is_finite();
        let positive = |x: f64| x.is_finite() && x > 0.0;
        let nonneg = |x: f64| x.is_finite() && x >= 0.0;
        let post_means_span = raw.post_means.span();
        let post_means =
            check.stage_list("post_means", Some(raw.post_means), period, 0.0, finite, "must be finite")?;
        let post_variances = check.stage_list(
            "post_variances",
            raw.post_variances,
            period,
            1.0,
            positive,
            "must be positive",
        )?;
        let pre_means =
            check.stage_list("pre_means", raw.pre_means, period, 0.0, finite, "must be finite")?;
        let pre_variances = check.stage_list(
            "pre_variances",
            raw.pre_variances,
            period,
            1.0,
            positive,
            "must be positive",
        )?;

        let rho = *raw.rho.get_ref();
        if !(rho > 0.0 && rho < 1.0) {
            return Err(check.at(raw.rho.span(), format!("`rho` = {rho} must lie in (0, 1)")));
        }

        let penalties = match (raw.false_alarm, raw.delay) {
            (None, None) => None,
            (Some(l), Some(d)) => Some((
                check.stage_list("false_alarm", Some(l), period, 0.0, nonneg, "must be finite and >= 0")?,
                check.stage_list("delay", Some(d), period, 0.0, nonneg, "must be finite and >= 0")?,
            )),
            (Some(l), None) => return Err(check.at(l.span(), "`false_alarm` given without `delay`")),
            (None, Some(d)) => return Err(check.at(d.span(), "`delay` given without `false_alarm`")),
        };

        let grid = match raw.grid {
            Some(g) if *g.get_ref() < 2 => {
                return Err(check.at(g.span(), "`grid` needs at least 2 points"))
            }
            Some(g) => g.into_inner(),
            None => 100,
        };
        let tol = match raw.tol {
            Some(t) if !positive(*t.get_ref()) => {
                return Err(check.at(t.span(), "`tol` must be positive"))
            }
            Some(t) => t.into_inner(),
            None => 1e-8,
        };
        let max_cycles = match raw.max_cycles {
            Some(m) if *m.get_ref() == 0 => {
                return Err(check.at(m.span(), "`max_cycles` must be at least 1"))
            }
            Some(m) => m.into_inner(),
            None => 100_000,
        };
        let paths = match raw.paths {
            Some(p) if *p.get_ref() == 0 => return Err(check.at(p.span(), "`paths` must be at least 1")),
            Some(p) => p.into_inner(),
            None => 10_000,
        };
        let horizon = match raw.horizon {
            Some(h) if *h.get_ref() == 0 => {
                return Err(check.at(h.span(), "`horizon` must be at least 1"))
            }
            Some(h) => h.into_inner(),
            None => default_horizon(rho),
        };
        let alphas = match raw.alphas {
            Some(a) => {
                let span = a.span();
                let list = a.into_inner();
                if list.is_empty() {
                    return Err(check.at(span, "`alphas` is empty"));
                }
                if let Some(x) = list.iter().find(|x| !(**x > 0.0 && **x < 1.0)) {
                    return Err(check.at(span, format!("`alphas` entry {x} must lie in (0, 1)")));
                }
                list
            }
            None => DEFAULT_ALPHAS.to_vec(),
        };
        let published_thresholds = raw
            .published_thresholds
            .map(|t| {
                let span = t.span();
                let list = t.into_inner();
                if list.len() == period {
                    Ok(list)
                } else {
                    Err(check.at(span, format!("`published_thresholds` needs {period} entries")))
                }
            })
            .transpose()?;

        let config = Self {
            name: raw.name.unwrap_or_else(|| source_name.to_string()),
            period,
            pre_means,
            pre_variances,
            post_means,
            post_variances,
            rho,
            penalties,
            grid,
            tol,
            max_cycles,
            paths,
            horizon,
            seed: raw.seed.unwrap_or(1),
            alphas,
            out_dir: raw.out_dir.map(PathBuf::from),
            published: Published {
                optimal: raw.published_optimal,
                single_threshold: raw.published_single_threshold,
                thresholds: published_thresholds,
            },
        };
        config
            .scenario()
            .map_err(|e| check.at(post_means_span, e.to_string()))?;
        Ok(config)
    }

    pub fn scenario(&self) -> Result<IpidScenario, ipid_qcd::ModelError> {
        IpidScenario::gaussian(
            &self.pre_means,
            &self.pre_variances,
            &self.post_means,
            &self.post_variances,
        )
    }

    /// The detection costs; a config error when the penalty lists are absent.
    pub fn costs(&self) -> Result<DetectionCostSpec, ConfigError> {
        match &self.penalties {
            Some((l, d)) => Ok(DetectionCostSpec::new(l.clone(), d.clone(), self.rho)),
            None => Err(ConfigError {
                source_name: self.name.clone(),
                line: 0,
                message: "missing `false_alarm` and `delay` (required by this command)".into(),
            }),
        }
    }
}
