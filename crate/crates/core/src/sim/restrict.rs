use std::collections::BTreeSet;

use crate::model::codec::fmt_set;
use crate::model::{
    CrashPlan, FdOutput, Message, ProcessId, SystemParams, Trace, TraceStatus, Value,
};

use super::executor::{message_keys, Executor};
use super::{Algorithm, AlgorithmError, Outgoing, SimError};

/// `A|_D`: the same state machine with every message to a process outside
/// `D` dropped from the sending function. The local logic, including its
/// use of `n`, is untouched.
#[derive(Debug, Clone)]
pub struct Restricted<A> {
    inner: A,
    domain: BTreeSet<ProcessId>,
}

impl<A> Restricted<A> {
    pub fn domain(&self) -> &BTreeSet<ProcessId> {
        &self.domain
    }

    pub fn inner(&self) -> &A {
        &self.inner
    }
}

pub fn restrict_algorithm<A: Algorithm>(
    algorithm: A,
    domain: BTreeSet<ProcessId>,
) -> Result<Restricted<A>, SimError> {
    if domain.is_empty() {
        return Err(SimError::EmptyRestriction);
    }
    Ok(Restricted {
        inner: algorithm,
        domain,
    })
}

impl<A: Algorithm> Algorithm for Restricted<A> {
    type State = A::State;

    fn name(&self) -> String {
        format!("{}|{}", self.inner.name(), fmt_set(&self.domain))
    }

    fn init(&self, pid: ProcessId, params: &SystemParams, input: Value) -> Self::State {
        self.inner.init(pid, params, input)
    }

    fn step(
        &self,
        state: &Self::State,
        delivered: &[Message],
        fd: Option<&FdOutput>,
    ) -> Result<(Self::State, Vec<Outgoing>), AlgorithmError> {
        let (next, mut out) = self.inner.step(state, delivered, fd)?;
        out.retain(|o| self.domain.contains(&o.to));
        Ok((next, out))
    }

    fn decision(&self, state: &Self::State) -> Option<Value> {
        self.inner.decision(state)
    }
}

/// Re-executes a run of a restricted algorithm inside the full system
/// `⟨Π⟩` with the unrestricted `algorithm`, keeping every process outside
/// the run's members initially dead. Members take the same steps and
/// receive the same messages, so their state sequences coincide.
pub fn embed_restricted_run<A: Algorithm>(
    algorithm: &A,
    restricted: &Trace,
) -> Result<Trace, SimError> {
    let all = restricted.params.all();
    if !restricted.members.is_subset(&all) {
        return Err(SimError::InvalidScenario(
            "restricted run has members outside 1..=n".into(),
        ));
    }
    let mut plan: CrashPlan = restricted.crash_plan.clone();
    plan.initially_dead
        .extend(all.difference(&restricted.members).copied());
    if plan.failure_count() > restricted.params.f() as usize {
        return Err(SimError::TooManyFailures {
            planned: plan.failure_count(),
            f: restricted.params.f(),
        });
    }
    let mut inputs = restricted.inputs.clone();
    for p in all.difference(&restricted.members) {
        inputs.entry(*p).or_insert(Value(p.0 as i64));
    }
    let keys = message_keys(restricted);
    let mut exec = Executor::new(algorithm, restricted.params, all, inputs, plan);
    for step in &restricted.steps {
        let deliver = step
            .delivered
            .iter()
            .map(|id| {
                let key = keys.get(id).ok_or_else(|| SimError::Schedule {
                    time: step.time,
                    reason: format!("message {id} was never sent"),
                })?;
                exec.find_pending(key).ok_or_else(|| SimError::Schedule {
                    time: step.time,
                    reason: format!("message {id} has no counterpart in the full system"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        exec.step(step.actor, &deliver, step.fd.clone(), &mut |_| 0)?;
    }
    let status = match restricted.status {
        TraceStatus::Complete { quiescent_from } => TraceStatus::Complete { quiescent_from },
        TraceStatus::Truncated => TraceStatus::Truncated,
    };
    Ok(exec.into_trace(restricted.seed, status))
}
