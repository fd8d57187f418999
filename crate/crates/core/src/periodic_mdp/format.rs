//! Plain-text MDP instance format.
//!
//! ```text
//! # comments start with '#'; blank lines are ignored
//! states 3
//! actions 2
//! period 2
//! discount 0.9
//! kernel <stage> <state> <action> <p_0> ... <p_{S-1}>
//! cost   <stage> <state> <action> <c>
//! ```
//!
//! The four header keys must appear before any `kernel` or `cost` line, in any
//! order. Every `(stage, state, action)` triple needs exactly one `kernel` line
//! and one `cost` line. Indices are 0-based.

use std::fmt::Write as _;

use thiserror::Error;

use super::{MdpError, PeriodicMdp};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FormatError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("missing header field '{0}'")]
    MissingHeader(&'static str),
    #[error("missing {what} line for stage {stage}, state {state}, action {action}")]
    MissingEntry {
        what: &'static str,
        stage: usize,
        state: usize,
        action: usize,
    },
    #[error("invalid instance: {0}")]
    Invalid(#[from] MdpError),
}

fn syntax(line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Syntax {
        line,
        message: message.into(),
    }
}

fn parse_num<T: std::str::FromStr>(tok: &str, line: usize, what: &str) -> Result<T, FormatError> {
    tok.parse()
        .map_err(|_| syntax(line, format!("cannot parse {what} from '{tok}'")))
}

#[derive(Default)]
struct Header {
    states: Option<usize>,
    actions: Option<usize>,
    period: Option<usize>,
    discount: Option<f64>,
}

impl Header {
    fn complete(&self) -> Option<(usize, usize, usize, f64)> {
        Some((self.states?, self.actions?, self.period?, self.discount?))
    }
}

/// Parses an instance, reporting the first problem with its 1-based line number.
pub fn parse_instance(text: &str) -> Result<PeriodicMdp, FormatError> {
    let mut header = Header::default();
    let mut dims = None;
    let mut transitions: Vec<Option<Vec<f64>>> = Vec::new();
    let mut costs: Vec<Option<f64>> = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        let key = toks[0];
        match key {
            "states" | "actions" | "period" | "discount" => {
                if dims.is_some() {
                    return Err(syntax(line, format!("header field '{key}' after data lines")));
                }
                if toks.len() != 2 {
                    return Err(syntax(line, format!("'{key}' takes exactly one value")));
                }
                let slot_taken = match key {
                    "states" => header.states.replace(parse_num(toks[1], line, key)?).is_some(),
                    "actions" => header.actions.replace(parse_num(toks[1], line, key)?).is_some(),
                    "period" => header.period.replace(parse_num(toks[1], line, key)?).is_some(),
                    _ => header.discount.replace(parse_num(toks[1], line, key)?).is_some(),
                };
                if slot_taken {
                    return Err(syntax(line, format!("duplicate header field '{key}'")));
                }
            }
            "kernel" | "cost" => {
                let (s_n, a_n, t_n) = match dims {
                    Some(d) => d,
                    None => {
                        let Some((s, a, t, _)) = header.complete() else {
                            return Err(syntax(line, "data line before the header is complete"));
                        };
                        if s == 0 || a == 0 || t == 0 {
                            return Err(syntax(line, "states, actions and period must be positive"));
                        }
                        transitions = vec![None; t * s * a];
                        costs = vec![None; t * s * a];
                        dims = Some((s, a, t));
                        (s, a, t)
                    }
                };
                let want = if key == "kernel" { 4 + s_n } else { 5 };
                if toks.len() != want {
                    return Err(syntax(
                        line,
                        format!("'{key}' line needs {} values after the keyword, got {}", want - 1, toks.len() - 1),
                    ));
                }
                let stage: usize = parse_num(toks[1], line, "stage")?;
                let state: usize = parse_num(toks[2], line, "state")?;
                let action: usize = parse_num(toks[3], line, "action")?;
                if stage >= t_n || state >= s_n || action >= a_n {
                    return Err(syntax(
                        line,
                        format!("index ({stage}, {state}, {action}) out of range"),
                    ));
                }
                let row = (stage * s_n + state) * a_n + action;
                if key == "kernel" {
                    let probs = toks[4..]
                        .iter()
                        .map(|t| parse_num::<f64>(t, line, "probability"))
                        .collect::<Result<Vec<_>, _>>()?;
                    if transitions[row].replace(probs).is_some() {
                        return Err(syntax(line, "duplicate kernel line"));
                    }
                } else {
                    let c: f64 = parse_num(toks[4], line, "cost")?;
                    if costs[row].replace(c).is_some() {
                        return Err(syntax(line, "duplicate cost line"));
                    }
                }
            }
            other => return Err(syntax(line, format!("unknown keyword '{other}'"))),
        }
    }

    let (s_n, a_n, t_n, discount) = match header.complete() {
        Some(h) => h,
        None => {
            let missing = if header.states.is_none() {
                "states"
            } else if header.actions.is_none() {
                "actions"
            } else if header.period.is_none() {
                "period"
            } else {
                "discount"
            };
            return Err(FormatError::MissingHeader(missing));
        }
    };
    if dims.is_none() {
        if s_n == 0 || a_n == 0 || t_n == 0 {
            return Err(MdpError::EmptyDimension {
                states: s_n,
                actions: a_n,
                period: t_n,
            }
            .into());
        }
        transitions = vec![None; t_n * s_n * a_n];
        costs = vec![None; t_n * s_n * a_n];
    }
    let locate = |row: usize| (row / (s_n * a_n), (row / a_n) % s_n, row % a_n);
    let mut flat = Vec::with_capacity(t_n * s_n * a_n * s_n);
    for (row, entry) in transitions.into_iter().enumerate() {
        let (stage, state, action) = locate(row);
        flat.extend(entry.ok_or(FormatError::MissingEntry {
            what: "kernel",
            stage,
            state,
            action,
        })?);
    }
    let cost_vec = costs
        .into_iter()
        .enumerate()
        .map(|(row, c)| {
            let (stage, state, action) = locate(row);
            c.ok_or(FormatError::MissingEntry {
                what: "cost",
                stage,
                state,
                action,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PeriodicMdp::new(s_n, a_n, t_n, discount, flat, cost_vec)?)
}

/// Writes an instance in the format read by [`parse_instance`].
pub fn write_instance(mdp: &PeriodicMdp) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "states {}", mdp.num_states());
    let _ = writeln!(out, "actions {}", mdp.num_actions());
    let _ = writeln!(out, "period {}", mdp.period());
    let _ = writeln!(out, "discount {:?}", mdp.discount());
    for stage in 0..mdp.period() {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let _ = write!(out, "kernel {stage} {s} {a}");
                for p in mdp.transition_row(stage, s, a) {
                    let _ = write!(out, " {p:?}");
                }
                out.push('\n');
            }
        }
    }
    for stage in 0..mdp.period() {
        for s in 0..mdp.num_states() {
            for a in 0..mdp.num_actions() {
                let _ = writeln!(out, "cost {stage} {s} {a} {:?}", mdp.cost(stage, s, a));
            }
        }
    }
    out
}

/// A small 3-state, 2-action, period-2 instance with stage-dependent costs.
pub const BUNDLED_THREE_STATE: &str = "\
# three states, two actions, period two
states 3
actions 2
period 2
discount 0.9
# stage 0: action 0 drifts up, action 1 resets to state 0
kernel 0 0 0 0.6 0.4 0.0
kernel 0 0 1 1.0 0.0 0.0
kernel 0 1 0 0.0 0.6 0.4
kernel 0 1 1 0.9 0.1 0.0
kernel 0 2 0 0.0 0.2 0.8
kernel 0 2 1 0.8 0.2 0.0
# stage 1: same dynamics
kernel 1 0 0 0.6 0.4 0.0
kernel 1 0 1 1.0 0.0 0.0
kernel 1 1 0 0.0 0.6 0.4
kernel 1 1 1 0.9 0.1 0.0
kernel 1 2 0 0.0 0.2 0.8
kernel 1 2 1 0.8 0.2 0.0
# resetting is cheap on stage 0 and expensive on stage 1
cost 0 0 0 0.0
cost 0 0 1 0.5
cost 0 1 0 1.0
cost 0 1 1 0.5
cost 0 2 0 3.0
cost 0 2 1 0.5
cost 1 0 0 0.0
cost 1 0 1 2.5
cost 1 1 0 1.0
cost 1 1 1 2.5
cost 1 2 0 3.0
cost 1 2 1 2.5
";
