//! Scenario files: TOML with the sections `[params]`, `[inputs]`,
//! `[adversary]`, `[crash]` and `[run]`.
//!
//! ```toml
//! [params]
//! n = 4
//! f = 2
//! k = 1
//!
//! [inputs]
//! values = [1, 1, 3, 3]
//!
//! [adversary]
//! kind = "partition-delay"          # fair | initial-crash | partition-delay | isolate
//! blocks = [[1, 2], [3, 4]]
//! release = "after-all-decided"     # or: at_step = 40
//!
//! [crash]
//! initially_dead = []
//! mid_run = [{ pid = 2, after_step = 3, omit = [1] }]
//!
//! [run]
//! seed = 7
//! fairness_bound = 64
//! step_budget = 200000
//! algorithm = "two-stage"
//! ```
//!
//! Every section is optional. Missing sections keep the values of the base
//! scenario passed to [`ScenarioFile::resolve`].

use std::collections::BTreeSet;
use std::ops::Range;

use serde::Deserialize;
use thiserror::Error;
use toml::Spanned;

use crate::model::{CrashPlan, MidRunCrash, ProcessId, SystemParams, Value};

use super::{AdversaryKind, Release, Scenario};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {message}")]
pub struct ScenarioFileError {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    params: Option<Spanned<RawParams>>,
    inputs: Option<Spanned<RawInputs>>,
    adversary: Option<Spanned<RawAdversary>>,
    crash: Option<Spanned<RawCrash>>,
    run: Option<RawRun>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    n: u32,
    f: u32,
    k: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInputs {
    values: Vec<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAdversary {
    kind: String,
    blocks: Option<Vec<Vec<u32>>>,
    release: Option<String>,
    at_step: Option<u64>,
    group: Option<Vec<u32>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCrash {
    #[serde(default)]
    initially_dead: Vec<u32>,
    #[serde(default)]
    mid_run: Vec<RawMidRun>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMidRun {
    pid: u32,
    after_step: u32,
    #[serde(default)]
    omit: Vec<u32>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRun {
    seed: Option<u64>,
    fairness_bound: Option<u32>,
    step_budget: Option<u64>,
    algorithm: Option<String>,
}

/// A parsed but not yet resolved scenario file.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ScenarioFile {
    pub params: Option<SystemParams>,
    pub inputs: Option<Vec<Value>>,
    pub adversary: Option<AdversaryKind>,
    pub crash_plan: Option<CrashPlan>,
    pub seed: Option<u64>,
    pub fairness_bound: Option<u32>,
    pub step_budget: Option<u64>,
    pub algorithm: Option<String>,
    /// Line of each section header, for diagnostics during resolution.
    lines: SectionLines,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct SectionLines {
    params: usize,
    inputs: usize,
    adversary: usize,
    crash: usize,
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn pids(ids: &[u32], line: usize) -> Result<BTreeSet<ProcessId>, ScenarioFileError> {
    ids.iter()
        .map(|&i| {
            if i == 0 {
                Err(ScenarioFileError {
                    line,
                    message: "process ids start at 1".into(),
                })
            } else {
                Ok(ProcessId(i))
            }
        })
        .collect()
}

pub fn parse_scenario(text: &str) -> Result<ScenarioFile, ScenarioFileError> {
    let raw: RawFile = toml::from_str(text).map_err(|e| ScenarioFileError {
        line: e.span().map_or(1, |s| line_of(text, s.start)),
        message: e.message().trim().to_string(),
    })?;
    let line = |span: Range<usize>| line_of(text, span.start);
    let mut out = ScenarioFile::default();

    if let Some(p) = raw.params {
        let l = line(p.span());
        out.lines.params = l;
        let p = p.into_inner();
        out.params = Some(
            SystemParams::new(p.n, p.f, p.k).map_err(|e| ScenarioFileError {
                line: l,
                message: e.to_string(),
            })?,
        );
    }
    if let Some(i) = raw.inputs {
        out.lines.inputs = line(i.span());
        out.inputs = Some(i.into_inner().values.into_iter().map(Value).collect());
    }
    if let Some(a) = raw.adversary {
        let l = line(a.span());
        out.lines.adversary = l;
        let a = a.into_inner();
        let err = |message: String| ScenarioFileError { line: l, message };
        let kind = match a.kind.as_str() {
            "fair" => AdversaryKind::Fair,
            "initial-crash" => AdversaryKind::InitialCrash,
            "partition-delay" => {
                let blocks = a
                    .blocks
                    .ok_or_else(|| err("partition-delay needs `blocks`".into()))?
                    .iter()
                    .map(|b| pids(b, l))
                    .collect::<Result<Vec<_>, _>>()?;
                let release = match (a.release.as_deref(), a.at_step) {
                    (None | Some("after-all-decided"), None) => Release::AfterAllDecided,
                    (None | Some("at-step"), Some(t)) => Release::AtStep(t),
                    (Some(other), _) => return Err(err(format!("unknown release `{other}`"))),
                };
                AdversaryKind::PartitionDelay { blocks, release }
            }
            "isolate" => AdversaryKind::Isolate {
                group: pids(
                    &a.group.ok_or_else(|| err("isolate needs `group`".into()))?,
                    l,
                )?,
            },
            other => return Err(err(format!("unknown adversary kind `{other}`"))),
        };
        out.adversary = Some(kind);
    }
    if let Some(c) = raw.crash {
        let l = line(c.span());
        out.lines.crash = l;
        let c = c.into_inner();
        let mid_run = c
            .mid_run
            .iter()
            .map(|m| {
                Ok(MidRunCrash {
                    pid: *pids(&[m.pid], l)?.first().expect("one id"),
                    after_step: m.after_step,
                    omit: pids(&m.omit, l)?,
                })
            })
            .collect::<Result<Vec<_>, ScenarioFileError>>()?;
        out.crash_plan = Some(CrashPlan {
            initially_dead: pids(&c.initially_dead, l)?,
            mid_run,
        });
    }
    if let Some(r) = raw.run {
        out.seed = r.seed;
        out.fairness_bound = r.fairness_bound;
        out.step_budget = r.step_budget;
        out.algorithm = r.algorithm;
    }
    Ok(out)
}

impl ScenarioFile {
    /// Overlays the file on `base`. A file that changes the parameters
    /// without giving inputs gets the default inputs `x_p = p`.
    pub fn resolve(&self, base: Option<&Scenario>) -> Result<Scenario, ScenarioFileError> {
        let mut s = match (self.params, base) {
            (Some(params), Some(b)) if params == b.params => b.clone(),
            (Some(params), Some(b)) => Scenario::new(params)
                .with_adversary(b.adversary.clone())
                .with_seed(b.seed)
                .with_fairness_bound(b.fairness_bound)
                .with_step_budget(b.step_budget),
            (Some(params), None) => Scenario::new(params),
            (None, Some(b)) => b.clone(),
            (None, None) => {
                return Err(ScenarioFileError {
                    line: 1,
                    message: "missing [params] section".into(),
                })
            }
        };
        if let Some(values) = &self.inputs {
            if values.len() != s.params.n() as usize {
                return Err(ScenarioFileError {
                    line: self.lines.inputs,
                    message: format!(
                        "expected {} input values, got {}",
                        s.params.n(),
                        values.len()
                    ),
                });
            }
            s.inputs = s.params.processes().zip(values.iter().copied()).collect();
        }
        if let Some(a) = &self.adversary {
            s.adversary = a.clone();
        }
        if let Some(c) = &self.crash_plan {
            s.crash_plan = c.clone();
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(b) = self.fairness_bound {
            s.fairness_bound = b;
        }
        if let Some(b) = self.step_budget {
            s.step_budget = b;
        }
        s.validate().map_err(|e| ScenarioFileError {
            line: self.blame_line(),
            message: e.to_string(),
        })?;
        Ok(s)
    }

    fn blame_line(&self) -> usize {
        [self.lines.crash, self.lines.adversary, self.lines.params]
            .into_iter()
            .find(|&l| l > 0)
            .unwrap_or(1)
    }
}
