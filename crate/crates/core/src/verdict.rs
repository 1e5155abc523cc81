use std::fmt;

use crate::model::{ProcessId, Time, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Pass,
    Fail,
    /// The trace does not carry enough information (e.g. it is truncated).
    Indeterminate,
}

/// Concrete counterexample attached to a failing verdict.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Witness {
    pub processes: Vec<ProcessId>,
    pub steps: Vec<Time>,
    pub values: Vec<Value>,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub check: &'static str,
    pub outcome: Outcome,
    pub witness: Option<Witness>,
}

impl Verdict {
    pub fn pass(check: &'static str) -> Self {
        Self {
            check,
            outcome: Outcome::Pass,
            witness: None,
        }
    }

    pub fn fail(check: &'static str, witness: Witness) -> Self {
        Self {
            check,
            outcome: Outcome::Fail,
            witness: Some(witness),
        }
    }

    pub fn indeterminate(check: &'static str, detail: impl Into<String>) -> Self {
        Self {
            check,
            outcome: Outcome::Indeterminate,
            witness: Some(Witness {
                detail: detail.into(),
                ..Witness::default()
            }),
        }
    }

    pub fn passed(&self) -> bool {
        self.outcome == Outcome::Pass
    }

    pub fn failed(&self) -> bool {
        self.outcome == Outcome::Fail
    }
}

impl Witness {
    pub fn detail(detail: impl Into<String>) -> Self {
        Self {
            detail: detail.into(),
            ..Self::default()
        }
    }

    pub fn at_step(time: Time, detail: impl Into<String>) -> Self {
        Self {
            steps: vec![time],
            detail: detail.into(),
            ..Self::default()
        }
    }
}

fn join<T: fmt::Display>(items: &[T]) -> String {
    if items.is_empty() {
        return "-".into();
    }
    items
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

/// `check=<name> outcome=<pass|fail|indeterminate>` followed, when a
/// witness exists, by `processes=… steps=… values=… detail="…"`.
impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let outcome = match self.outcome {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Indeterminate => "indeterminate",
        };
        write!(f, "check={} outcome={outcome}", self.check)?;
        if let Some(w) = &self.witness {
            write!(
                f,
                " processes={} steps={} values={} detail={:?}",
                join(&w.processes),
                join(&w.steps),
                join(&w.values),
                w.detail
            )?;
        }
        Ok(())
    }
}
