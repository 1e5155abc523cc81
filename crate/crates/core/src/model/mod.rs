//! Domain types shared by the simulator, the protocol and the checkers.
//!
//! Everything here is immutable once built. A [`Trace`] is the central
//! artifact: an initial configuration (inputs, crash plan) plus the ordered
//! step records of one finite run.

pub(crate) mod codec;

pub use codec::{parse_trace, write_trace, CodecError};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Global step index. The first step of a run happens at time 1.
pub type Time = u64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("malformed trace: {0}")]
    MalformedTrace(String),
}

/// A process identifier in `1..=n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ProcessId(pub u32);

impl ProcessId {
    pub fn get(self) -> u32 {
        self.0
    }
}

impl fmt::Display for ProcessId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

impl FromStr for ProcessId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let digits = s.strip_prefix('p').unwrap_or(s);
        digits
            .parse::<u32>()
            .ok()
            .filter(|&id| id >= 1)
            .map(ProcessId)
            .ok_or_else(|| format!("bad process id `{s}`"))
    }
}

/// Proposal / decision token. Protocols only compare values for equality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Value(pub i64);

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The triple `(n, f, k)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SystemParams {
    n: u32,
    f: u32,
    k: u32,
}

impl SystemParams {
    /// `n ≥ 1`, `f ≤ n - 1`, `1 ≤ k ≤ max(1, n - 1)`.
    ///
    /// The single-process system admits `k = 1` so that the degenerate
    /// one-process run can be expressed.
    pub fn new(n: u32, f: u32, k: u32) -> Result<Self, ModelError> {
        if n == 0 {
            return Err(ModelError::InvalidParams("n must be at least 1".into()));
        }
        if f > n - 1 {
            return Err(ModelError::InvalidParams(format!(
                "f = {f} exceeds n - 1 = {}",
                n - 1
            )));
        }
        if k == 0 || k > (n - 1).max(1) {
            return Err(ModelError::InvalidParams(format!(
                "k = {k} outside 1..={}",
                (n - 1).max(1)
            )));
        }
        Ok(Self { n, f, k })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn f(&self) -> u32 {
        self.f
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    /// First-stage wait quota `L = n - f`; every process waits for `L - 1`
    /// remote first-stage messages.
    pub fn quota(&self) -> u32 {
        self.n - self.f
    }

    pub fn processes(&self) -> impl Iterator<Item = ProcessId> + Clone {
        (1..=self.n).map(ProcessId)
    }

    pub fn all(&self) -> BTreeSet<ProcessId> {
        self.processes().collect()
    }
}

impl fmt::Display for SystemParams {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} f={} k={}", self.n, self.f, self.k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MessageId(pub u64);

impl fmt::Display for MessageId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Message contents. The two-stage protocol uses `Stage1` and `Stage2`;
/// other algorithms may ship opaque bytes.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Payload {
    Stage1,
    Stage2 {
        proposal: Value,
        heard: BTreeSet<ProcessId>,
    },
    Opaque(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Message {
    pub id: MessageId,
    pub sender: ProcessId,
    pub receiver: ProcessId,
    pub payload: Payload,
    pub sent_at: Time,
}

/// One failure-detector sample handed to a process at the start of a step.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct FdOutput {
    pub sigma: BTreeSet<ProcessId>,
    pub omega: BTreeSet<ProcessId>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepRecord {
    pub time: Time,
    pub actor: ProcessId,
    pub delivered: Vec<MessageId>,
    pub fd: Option<FdOutput>,
    pub sent: Vec<Message>,
    /// Decision of the actor after this step; once set it stays set.
    pub decided: Option<Value>,
}

/// A process that crashes during the run: it takes exactly `after_step`
/// steps, and its final step omits the messages addressed to `omit`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MidRunCrash {
    pub pid: ProcessId,
    pub after_step: u32,
    pub omit: BTreeSet<ProcessId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CrashPlan {
    pub initially_dead: BTreeSet<ProcessId>,
    pub mid_run: Vec<MidRunCrash>,
}

impl CrashPlan {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn initially_dead(dead: impl IntoIterator<Item = ProcessId>) -> Self {
        Self {
            initially_dead: dead.into_iter().collect(),
            mid_run: Vec::new(),
        }
    }

    pub fn faulty(&self) -> BTreeSet<ProcessId> {
        let mut out = self.initially_dead.clone();
        out.extend(self.mid_run.iter().map(|c| c.pid));
        out
    }

    pub fn failure_count(&self) -> usize {
        self.faulty().len()
    }

    pub fn mid_run_for(&self, pid: ProcessId) -> Option<&MidRunCrash> {
        self.mid_run.iter().find(|c| c.pid == pid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceStatus {
    /// Every correct process decided and no message to a correct process is
    /// pending. The round starting at `quiescent_from` is silent and stands
    /// for the infinite quiescent extension of the run.
    Complete { quiescent_from: Time },
    /// The step budget ran out first.
    Truncated,
}

/// A finite run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub params: SystemParams,
    /// Processes that exist in the simulated system. Equals `1..=n` except
    /// for runs in a restricted model `⟨D⟩`.
    pub members: BTreeSet<ProcessId>,
    pub inputs: BTreeMap<ProcessId, Value>,
    pub crash_plan: CrashPlan,
    pub seed: u64,
    pub algorithm: String,
    pub steps: Vec<StepRecord>,
    pub status: TraceStatus,
}

impl Trace {
    pub fn is_complete(&self) -> bool {
        matches!(self.status, TraceStatus::Complete { .. })
    }

    /// Structural checks: consecutive times starting at 1, actors are members,
    /// delivered messages were sent earlier to the actor and are delivered
    /// at most once, decisions are write-once.
    pub fn validate(&self) -> Result<(), ModelError> {
        let mut sent: HashMap<MessageId, &Message> = HashMap::new();
        let mut delivered: BTreeSet<MessageId> = BTreeSet::new();
        let mut decisions: BTreeMap<ProcessId, Value> = BTreeMap::new();
        for (i, step) in self.steps.iter().enumerate() {
            let expected = i as Time + 1;
            if step.time != expected {
                return Err(ModelError::MalformedTrace(format!(
                    "step {} carries time {}, expected {expected}",
                    i + 1,
                    step.time
                )));
            }
            if !self.members.contains(&step.actor) {
                return Err(ModelError::MalformedTrace(format!(
                    "time {}: actor {} is not a member",
                    step.time, step.actor
                )));
            }
            for id in &step.delivered {
                let msg = sent.get(id).ok_or_else(|| {
                    ModelError::MalformedTrace(format!(
                        "time {}: message {id} was never sent",
                        step.time
                    ))
                })?;
                if msg.receiver != step.actor {
                    return Err(ModelError::MalformedTrace(format!(
                        "time {}: message {id} is addressed to {}",
                        step.time, msg.receiver
                    )));
                }
                if !delivered.insert(*id) {
                    return Err(ModelError::MalformedTrace(format!(
                        "time {}: message {id} delivered twice",
                        step.time
                    )));
                }
            }
            for msg in &step.sent {
                if msg.sender != step.actor || msg.sent_at != step.time {
                    return Err(ModelError::MalformedTrace(format!(
                        "time {}: message {} has inconsistent sender or send time",
                        step.time, msg.id
                    )));
                }
                if sent.insert(msg.id, msg).is_some() {
                    return Err(ModelError::MalformedTrace(format!(
                        "time {}: duplicate message id {}",
                        step.time, msg.id
                    )));
                }
            }
            match (decisions.get(&step.actor), step.decided) {
                (Some(prev), Some(now)) if *prev != now => {
                    return Err(ModelError::MalformedTrace(format!(
                        "time {}: {} changed its decision from {prev} to {now}",
                        step.time, step.actor
                    )));
                }
                (Some(prev), None) => {
                    return Err(ModelError::MalformedTrace(format!(
                        "time {}: {} forgot its decision {prev}",
                        step.time, step.actor
                    )));
                }
                (None, Some(now)) => {
                    decisions.insert(step.actor, now);
                }
                _ => {}
            }
        }
        if let TraceStatus::Complete { quiescent_from } = self.status {
            if quiescent_from == 0 || quiescent_from > self.steps.len() as Time + 1 {
                return Err(ModelError::MalformedTrace(format!(
                    "quiescent round start {quiescent_from} outside the trace"
                )));
            }
        }
        Ok(())
    }

    pub fn steps_of(&self, pid: ProcessId) -> impl Iterator<Item = &StepRecord> {
        self.steps.iter().filter(move |s| s.actor == pid)
    }

    /// First deciding step of `pid`, if any.
    pub fn decision_of(&self, pid: ProcessId) -> Option<(Time, Value)> {
        self.steps_of(pid)
            .find_map(|s| s.decided.map(|v| (s.time, v)))
    }

    pub fn decisions(&self) -> BTreeMap<ProcessId, (Time, Value)> {
        self.members
            .iter()
            .filter_map(|&p| self.decision_of(p).map(|d| (p, d)))
            .collect()
    }

    pub fn distinct_decisions(&self) -> BTreeSet<Value> {
        self.decisions().values().map(|&(_, v)| v).collect()
    }

    pub fn message_index(&self) -> HashMap<MessageId, &Message> {
        self.steps
            .iter()
            .flat_map(|s| s.sent.iter())
            .map(|m| (m.id, m))
            .collect()
    }

    pub fn to_text(&self) -> String {
        write_trace(self)
    }
}

/// `F(·)` restricted to the members of one run: the time from which each
/// faulty process is crashed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailurePattern {
    processes: BTreeSet<ProcessId>,
    crash_time: BTreeMap<ProcessId, Time>,
}

impl FailurePattern {
    pub fn new(
        processes: BTreeSet<ProcessId>,
        crash_time: BTreeMap<ProcessId, Time>,
    ) -> Result<Self, ModelError> {
        if let Some(p) = crash_time.keys().find(|p| !processes.contains(p)) {
            return Err(ModelError::InvalidParams(format!(
                "{p} is not in the process set"
            )));
        }
        if crash_time.values().any(|&t| t == 0) {
            return Err(ModelError::InvalidParams("crash times start at 1".into()));
        }
        Ok(Self {
            processes,
            crash_time,
        })
    }

    pub fn failure_free(processes: BTreeSet<ProcessId>) -> Self {
        Self {
            processes,
            crash_time: BTreeMap::new(),
        }
    }

    pub fn processes(&self) -> &BTreeSet<ProcessId> {
        &self.processes
    }

    pub fn crash_time(&self, p: ProcessId) -> Option<Time> {
        self.crash_time.get(&p).copied()
    }

    pub fn is_crashed(&self, p: ProcessId, t: Time) -> bool {
        self.crash_time(p).is_some_and(|c| c <= t)
    }

    /// `F(t)`.
    pub fn crashed_at(&self, t: Time) -> BTreeSet<ProcessId> {
        self.crash_time
            .iter()
            .filter(|&(_, &c)| c <= t)
            .map(|(&p, _)| p)
            .collect()
    }

    /// `F`, the union over all times.
    pub fn faulty(&self) -> BTreeSet<ProcessId> {
        self.crash_time.keys().copied().collect()
    }

    pub fn correct(&self) -> BTreeSet<ProcessId> {
        self.processes
            .iter()
            .filter(|p| !self.crash_time.contains_key(p))
            .copied()
            .collect()
    }
}

/// Derives `F(·)` from the steps of a trace.
///
/// For complete traces a process is correct iff it steps in the final
/// quiescent round; every other member is crashed from the time after its
/// last step (time 1 if it never steps). Truncated traces only report the
/// crashes the plan made explicit and that already happened.
pub fn derive_failure_pattern(trace: &Trace) -> Result<FailurePattern, ModelError> {
    for (i, step) in trace.steps.iter().enumerate() {
        if step.time != i as Time + 1 {
            return Err(ModelError::MalformedTrace(format!(
                "non-consecutive time {} at position {}",
                step.time,
                i + 1
            )));
        }
    }
    let mut last_step: BTreeMap<ProcessId, Time> = BTreeMap::new();
    let mut step_counts: BTreeMap<ProcessId, (u32, Time)> = BTreeMap::new();
    for step in &trace.steps {
        last_step.insert(step.actor, step.time);
        let entry = step_counts.entry(step.actor).or_insert((0, 0));
        entry.0 += 1;
        if let Some(c) = trace.crash_plan.mid_run_for(step.actor) {
            if entry.0 == c.after_step {
                entry.1 = step.time;
            }
        }
    }
    let mut crash_time = BTreeMap::new();
    match trace.status {
        TraceStatus::Complete { quiescent_from } => {
            for &p in &trace.members {
                match last_step.get(&p) {
                    Some(&t) if t >= quiescent_from => {}
                    Some(&t) => {
                        crash_time.insert(p, t + 1);
                    }
                    None => {
                        crash_time.insert(p, 1);
                    }
                }
            }
        }
        TraceStatus::Truncated => {
            for &p in &trace.crash_plan.initially_dead {
                if trace.members.contains(&p) {
                    crash_time.insert(p, 1);
                }
            }
            for c in &trace.crash_plan.mid_run {
                if let Some(&(count, at)) = step_counts.get(&c.pid) {
                    if count >= c.after_step && at > 0 {
                        crash_time.insert(c.pid, at + 1);
                    }
                }
            }
        }
    }
    FailurePattern::new(trace.members.clone(), crash_time)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pid(i: u32) -> ProcessId {
        ProcessId(i)
    }

    fn empty_step(time: Time, actor: u32) -> StepRecord {
        StepRecord {
            time,
            actor: pid(actor),
            delivered: vec![],
            fd: None,
            sent: vec![],
            decided: None,
        }
    }

    fn trace_with(steps: Vec<StepRecord>, status: TraceStatus) -> Trace {
        let params = SystemParams::new(3, 1, 1).unwrap();
        Trace {
            params,
            members: params.all(),
            inputs: params.processes().map(|p| (p, Value(p.0 as i64))).collect(),
            crash_plan: CrashPlan::none(),
            seed: 0,
            algorithm: "test".into(),
            steps,
            status,
        }
    }

    #[test]
    fn params_bounds() {
        assert!(SystemParams::new(0, 0, 1).is_err());
        assert!(SystemParams::new(3, 3, 1).is_err());
        assert!(SystemParams::new(3, 1, 3).is_err());
        assert!(SystemParams::new(3, 1, 0).is_err());
        assert_eq!(SystemParams::new(5, 3, 2).unwrap().quota(), 2);
        assert_eq!(SystemParams::new(1, 0, 1).unwrap().quota(), 1);
    }

    #[test]
    fn process_id_parsing() {
        assert_eq!("p3".parse::<ProcessId>().unwrap(), pid(3));
        assert_eq!("4".parse::<ProcessId>().unwrap(), pid(4));
        assert!("p0".parse::<ProcessId>().is_err());
        assert!("x".parse::<ProcessId>().is_err());
    }

    #[test]
    fn initially_dead_process_is_in_f_from_time_one() {
        // p1 and p2 alternate, p3 never steps; final round at time 3.
        let steps = vec![
            empty_step(1, 1),
            empty_step(2, 2),
            empty_step(3, 1),
            empty_step(4, 2),
        ];
        let tr = trace_with(steps, TraceStatus::Complete { quiescent_from: 3 });
        let pattern = derive_failure_pattern(&tr).unwrap();
        assert!(pattern.crashed_at(1).contains(&pid(3)));
        assert_eq!(pattern.faulty(), [pid(3)].into());
    }

    #[test]
    fn failure_free_complete_trace() {
        let steps = (1..=6)
            .map(|t| empty_step(t, ((t - 1) % 3 + 1) as u32))
            .collect();
        let tr = trace_with(steps, TraceStatus::Complete { quiescent_from: 4 });
        assert!(derive_failure_pattern(&tr).unwrap().faulty().is_empty());
    }

    #[test]
    fn last_step_at_seven_crashes_at_eight() {
        // p2 steps until time 7, then only p1 and p3 continue.
        let mut steps = Vec::new();
        let order = [1, 2, 3, 1, 2, 3, 2, 1, 3, 1, 3];
        for (i, a) in order.iter().enumerate() {
            steps.push(empty_step(i as Time + 1, *a));
        }
        let tr = trace_with(steps, TraceStatus::Complete { quiescent_from: 10 });
        let pattern = derive_failure_pattern(&tr).unwrap();
        assert!(pattern.is_crashed(pid(2), 8));
        assert!(!pattern.is_crashed(pid(2), 7));
        assert_eq!(pattern.faulty(), [pid(2)].into());
        for t in 1..12 {
            assert!(pattern.crashed_at(t).is_subset(&pattern.crashed_at(t + 1)));
        }
    }

    #[test]
    fn non_consecutive_times_rejected() {
        let steps = vec![empty_step(1, 1), empty_step(3, 2)];
        let tr = trace_with(steps, TraceStatus::Truncated);
        assert!(matches!(
            derive_failure_pattern(&tr),
            Err(ModelError::MalformedTrace(_))
        ));
        assert!(tr.validate().is_err());
    }

    #[test]
    fn truncated_trace_reports_only_explicit_crashes() {
        let steps = vec![empty_step(1, 1), empty_step(2, 2), empty_step(3, 1)];
        let mut tr = trace_with(steps, TraceStatus::Truncated);
        tr.crash_plan.initially_dead.insert(pid(3));
        tr.crash_plan.mid_run.push(MidRunCrash {
            pid: pid(2),
            after_step: 1,
            omit: BTreeSet::new(),
        });
        let pattern = derive_failure_pattern(&tr).unwrap();
        assert_eq!(pattern.crash_time(pid(3)), Some(1));
        assert_eq!(pattern.crash_time(pid(2)), Some(3));
        assert_eq!(pattern.crash_time(pid(1)), None);
    }

    #[test]
    fn decisions_must_be_write_once() {
        let mut steps = vec![empty_step(1, 1), empty_step(2, 1)];
        steps[0].decided = Some(Value(1));
        steps[1].decided = Some(Value(2));
        let tr = trace_with(steps, TraceStatus::Truncated);
        assert!(tr.validate().is_err());
    }
}
